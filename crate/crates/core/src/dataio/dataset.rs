//! Dataset loading, saving and validation.

use std::fs;
use std::path::Path;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::{read_trajectory, write_trajectory, CameraTrajectory};
use crate::error::{Error, Result};
use crate::frame::{RgbFrame, ScalarFrame};
use crate::tracks::TrackSet;
use crate::Real;

/// Evaluation views rendered from poses outside the training trajectory.
#[derive(Clone, Debug)]
pub struct HoldoutSet {
    pub trajectory: CameraTrajectory<Real>,
    /// Motion frame id each holdout view is evaluated at.
    pub times: Vec<usize>,
    pub frames: Vec<RgbFrame<Real>>,
}

/// Frames, depths, tracks, optional masks and the shared camera trajectory.
#[derive(Clone, Debug)]
pub struct SceneDataset {
    pub frames: Vec<RgbFrame<Real>>,
    pub depths: Vec<ScalarFrame<Real>>,
    pub tracks: TrackSet,
    pub masks: Option<Vec<ScalarFrame<Real>>>,
    pub trajectory: CameraTrajectory<Real>,
    pub holdout: Option<HoldoutSet>,
}

impl SceneDataset {
    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.trajectory.len();
        if self.frames.len() != f {
            return Err(Error::Validation(format!(
                "frame count mismatch: {} images vs {} trajectory poses",
                self.frames.len(),
                f
            )));
        }
        if self.depths.len() != f {
            return Err(Error::Validation(format!(
                "frame count mismatch: {} depth maps vs {} frames",
                self.depths.len(),
                f
            )));
        }
        if self.tracks.frames() != f {
            return Err(Error::Validation(format!(
                "frame count mismatch: tracks cover {} frames vs {}",
                self.tracks.frames(),
                f
            )));
        }
        if let Some(masks) = &self.masks {
            if masks.len() != f {
                return Err(Error::Validation(format!(
                    "frame count mismatch: {} masks vs {} frames",
                    masks.len(),
                    f
                )));
            }
        }
        let (w, h) = (self.trajectory.intrinsics.width, self.trajectory.intrinsics.height);
        for (i, frame) in self.frames.iter().enumerate() {
            if frame.width != w || frame.height != h {
                return Err(Error::Validation(format!(
                    "dimension mismatch: frame {i} is {}x{}, intrinsics say {w}x{h}",
                    frame.width, frame.height
                )));
            }
        }
        for (i, depth) in self.depths.iter().enumerate() {
            if depth.width != w || depth.height != h {
                return Err(Error::Validation(format!(
                    "dimension mismatch: depth {i} is {}x{}, intrinsics say {w}x{h}",
                    depth.width, depth.height
                )));
            }
            if depth.values.iter().any(|v| v.is_nan() || v.is_infinite()) {
                return Err(Error::Validation(format!(
                    "non-finite depth value in depth map {i}"
                )));
            }
        }
        self.tracks.validate(w, h)?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Image I/O
// ---------------------------------------------------------------------------

pub fn write_rgb_png(frame: &RgbFrame<Real>, path: &Path) -> Result<()> {
    let mut img = image::RgbImage::new(frame.width, frame.height);
    for y in 0..frame.height {
        for x in 0..frame.width {
            let p = frame.at(x, y);
            img.put_pixel(
                x,
                y,
                image::Rgb([
                    (p.x.clamp(0.0, 1.0) * 255.0).round() as u8,
                    (p.y.clamp(0.0, 1.0) * 255.0).round() as u8,
                    (p.z.clamp(0.0, 1.0) * 255.0).round() as u8,
                ]),
            );
        }
    }
    img.save(path)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))
}

pub fn read_rgb_png(path: &Path) -> Result<RgbFrame<Real>> {
    let img = image::open(path)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let mut frame = RgbFrame::new(w, h, Vector3::zeros());
    for y in 0..h {
        for x in 0..w {
            let p = img.get_pixel(x, y);
            *frame.at_mut(x, y) = Vector3::new(
                p[0] as Real / 255.0,
                p[1] as Real / 255.0,
                p[2] as Real / 255.0,
            );
        }
    }
    Ok(frame)
}

#[derive(Serialize, Deserialize)]
struct DepthScale {
    scale: Real,
}

/// 16-bit PNG with a linear scale sidecar: depth = png_value * scale.
pub fn write_depth_png(depth: &ScalarFrame<Real>, path: &Path, scale_path: &Path) -> Result<()> {
    let max = depth.values.iter().cloned().fold(0.0, Real::max).max(1e-9);
    let scale = max / 65535.0;
    let mut img = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(depth.width, depth.height);
    for y in 0..depth.height {
        for x in 0..depth.width {
            let v = depth.at(x, y);
            let q = if v.is_finite() && v > 0.0 {
                (v / scale).round().clamp(0.0, 65535.0) as u16
            } else {
                0
            };
            img.put_pixel(x, y, image::Luma([q]));
        }
    }
    img.save(path)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    fs::write(scale_path, serde_json::to_string(&DepthScale { scale }).unwrap())
        .map_err(|e| Error::io(scale_path.display().to_string(), e))
}

pub fn read_depth_png(path: &Path, scale_path: &Path) -> Result<ScalarFrame<Real>> {
    let text = fs::read_to_string(scale_path)
        .map_err(|e| Error::io(scale_path.display().to_string(), e))?;
    let scale: DepthScale = serde_json::from_str(&text)
        .map_err(|e| Error::parse(scale_path.display().to_string(), e.to_string()))?;
    let img = image::open(path)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?
        .to_luma16();
    let (w, h) = img.dimensions();
    let mut out = ScalarFrame::new(w, h, 0.0);
    for y in 0..h {
        for x in 0..w {
            *out.at_mut(x, y) = img.get_pixel(x, y)[0] as Real * scale.scale;
        }
    }
    Ok(out)
}

fn write_depth_raw(depth: &ScalarFrame<Real>, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(depth.values.len() * 4);
    for v in &depth.values {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path.display().to_string(), e))
}

fn read_depth_raw(path: &Path, width: u32, height: u32) -> Result<ScalarFrame<Real>> {
    let buf = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let expected = (width * height) as usize * 4;
    if buf.len() != expected {
        return Err(Error::parse(
            path.display().to_string(),
            format!("raw depth has {} bytes, expected {expected}", buf.len()),
        ));
    }
    let mut out = ScalarFrame::new(width, height, 0.0);
    for (i, chunk) in buf.chunks_exact(4).enumerate() {
        out.values[i] = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as Real;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Tracks I/O (tab-separated text)
// ---------------------------------------------------------------------------

pub(crate) fn write_tracks(tracks: &TrackSet, path: &Path) -> Result<()> {
    let mut text = String::from("query_id\tframe\tu\tv\tvisible\n");
    for q in 0..tracks.n_queries() {
        for t in 0..tracks.frames() {
            let p = tracks.position(q, t);
            text.push_str(&format!(
                "{q}\t{t}\t{:.17e}\t{:.17e}\t{}\n",
                p.x,
                p.y,
                tracks.is_visible(q, t) as u8
            ));
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

pub(crate) fn read_tracks(path: &Path, frames: usize) -> Result<TrackSet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut rows: Vec<(usize, usize, Real, Real, bool)> = Vec::new();
    let mut max_q = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(Error::parse(
                path.display().to_string(),
                format!("line {}: expected 5 tab-separated fields", lineno + 1),
            ));
        }
        let parse_err = |field: &str, what: &str| {
            Error::parse(
                path.display().to_string(),
                format!("line {}: bad {what} '{field}'", lineno + 1),
            )
        };
        let q: usize = fields[0].parse().map_err(|_| parse_err(fields[0], "query_id"))?;
        let t: usize = fields[1].parse().map_err(|_| parse_err(fields[1], "frame"))?;
        let u: Real = fields[2].parse().map_err(|_| parse_err(fields[2], "u"))?;
        let v: Real = fields[3].parse().map_err(|_| parse_err(fields[3], "v"))?;
        let vis = fields[4].trim() == "1";
        if t >= frames {
            return Err(Error::parse(
                path.display().to_string(),
                format!("line {}: frame {t} out of range 0..{frames}", lineno + 1),
            ));
        }
        max_q = max_q.max(q + 1);
        rows.push((q, t, u, v, vis));
    }
    let mut tracks = TrackSet::new(max_q, frames);
    for (q, t, u, v, vis) in rows {
        tracks.set(q, t, Vector2::new(u, v), vis);
    }
    Ok(tracks)
}

// ---------------------------------------------------------------------------
// Dataset directory save/load
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct HoldoutTimes {
    times: Vec<usize>,
}

pub fn save_dataset(dataset: &SceneDataset, dir: &Path) -> Result<()> {
    dataset.validate()?;
    let frames_dir = dir.join("frames");
    let depths_dir = dir.join("depths");
    fs::create_dir_all(&frames_dir).map_err(|e| Error::io(frames_dir.display().to_string(), e))?;
    fs::create_dir_all(&depths_dir).map_err(|e| Error::io(depths_dir.display().to_string(), e))?;
    for (i, frame) in dataset.frames.iter().enumerate() {
        write_rgb_png(frame, &frames_dir.join(format!("{i:05}.png")))?;
    }
    for (i, depth) in dataset.depths.iter().enumerate() {
        // Raw floats alongside the quantized PNG keep depth lossless.
        write_depth_png(
            depth,
            &depths_dir.join(format!("{i:05}.png")),
            &depths_dir.join(format!("{i:05}.depth_scale.json")),
        )?;
        write_depth_raw(depth, &depths_dir.join(format!("{i:05}.raw")))?;
    }
    write_tracks(&dataset.tracks, &dir.join("tracks.tsv"))?;
    if let Some(masks) = &dataset.masks {
        let masks_dir = dir.join("masks");
        fs::create_dir_all(&masks_dir).map_err(|e| Error::io(masks_dir.display().to_string(), e))?;
        for (i, m) in masks.iter().enumerate() {
            let rgb = RgbFrame {
                width: m.width,
                height: m.height,
                pixels: m.values.iter().map(|&v| Vector3::new(v, v, v)).collect(),
            };
            write_rgb_png(&rgb, &masks_dir.join(format!("{i:05}.png")))?;
        }
    }
    write_trajectory(&dataset.trajectory, &dir.join("camera.json"))?;
    if let Some(holdout) = &dataset.holdout {
        let hdir = dir.join("holdout");
        let hframes = hdir.join("frames");
        fs::create_dir_all(&hframes).map_err(|e| Error::io(hframes.display().to_string(), e))?;
        write_trajectory(&holdout.trajectory, &hdir.join("camera.json"))?;
        fs::write(
            hdir.join("times.json"),
            serde_json::to_string(&HoldoutTimes {
                times: holdout.times.clone(),
            })
            .unwrap(),
        )
        .map_err(|e| Error::io(hdir.join("times.json").display().to_string(), e))?;
        for (i, frame) in holdout.frames.iter().enumerate() {
            write_rgb_png(frame, &hframes.join(format!("{i:05}.png")))?;
        }
    }
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<SceneDataset> {
    let camera_path = dir.join("camera.json");
    if !camera_path.exists() {
        return Err(Error::parse(
            camera_path.display().to_string(),
            "missing camera.json".to_string(),
        ));
    }
    let trajectory: CameraTrajectory<Real> = read_trajectory(&camera_path)?;
    let f = trajectory.len();
    let (w, h) = (trajectory.intrinsics.width, trajectory.intrinsics.height);

    let mut frames = Vec::with_capacity(f);
    let mut depths = Vec::with_capacity(f);
    for i in 0..f {
        let frame_path = dir.join("frames").join(format!("{i:05}.png"));
        if !frame_path.exists() {
            return Err(Error::Validation(format!(
                "frame count mismatch: missing {}",
                frame_path.display()
            )));
        }
        frames.push(read_rgb_png(&frame_path)?);
        let raw = dir.join("depths").join(format!("{i:05}.raw"));
        let png = dir.join("depths").join(format!("{i:05}.png"));
        if raw.exists() {
            depths.push(read_depth_raw(&raw, w, h)?);
        } else if png.exists() {
            depths.push(read_depth_png(
                &png,
                &dir.join("depths").join(format!("{i:05}.depth_scale.json")),
            )?);
        } else {
            return Err(Error::Validation(format!(
                "frame count mismatch: missing depth for frame {i}"
            )));
        }
    }
    let tracks = read_tracks(&dir.join("tracks.tsv"), f)?;

    let masks_dir = dir.join("masks");
    let masks = if masks_dir.is_dir() {
        let mut ms = Vec::with_capacity(f);
        for i in 0..f {
            let rgb = read_rgb_png(&masks_dir.join(format!("{i:05}.png")))?;
            ms.push(ScalarFrame {
                width: rgb.width,
                height: rgb.height,
                values: rgb.pixels.iter().map(|p| if p.x > 0.5 { 1.0 } else { 0.0 }).collect(),
            });
        }
        Some(ms)
    } else {
        None
    };

    let hdir = dir.join("holdout");
    let holdout = if hdir.is_dir() {
        let trajectory = read_trajectory(&hdir.join("camera.json"))?;
        let times: HoldoutTimes = serde_json::from_str(
            &fs::read_to_string(hdir.join("times.json"))
                .map_err(|e| Error::io(hdir.join("times.json").display().to_string(), e))?,
        )
        .map_err(|e| Error::parse(hdir.join("times.json").display().to_string(), e.to_string()))?;
        let mut hframes = Vec::new();
        for i in 0..trajectory.len() {
            hframes.push(read_rgb_png(&hdir.join("frames").join(format!("{i:05}.png")))?);
        }
        Some(HoldoutSet {
            trajectory,
            times: times.times,
            frames: hframes,
        })
    } else {
        None
    };

    let dataset = SceneDataset {
        frames,
        depths,
        tracks,
        masks,
        trajectory,
        holdout,
    };
    dataset.validate()?;
    Ok(dataset)
}

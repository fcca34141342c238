//! State exports: PLY-compatible cloud, raw motion tensors with a JSON
//! header, 3D trajectory tables, and rendered image sequences.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::{Vector3, Vector4};
use serde::{Deserialize, Serialize};

use super::dataset::{write_depth_png, write_rgb_png};
use crate::error::{Error, Result};
use crate::render::RenderTarget;
use crate::scene::{CoeffTensor, Gaussian, GaussianCloud, MotionModel};
use crate::se3::Twist;
use crate::Real;

const PLY_PROPS: [&str; 14] = [
    "x", "y", "z", "qw", "qx", "qy", "qz", "s0", "s1", "s2", "opacity", "r", "g", "b",
];

/// Binary little-endian PLY with one float per property plus a uchar
/// `dynamic` flag.
pub fn export_cloud(cloud: &GaussianCloud<Real>, path: &Path) -> Result<()> {
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("element vertex {}\n", cloud.len()));
    for p in PLY_PROPS {
        header.push_str(&format!("property float {p}\n"));
    }
    header.push_str("property uchar dynamic\nend_header\n");

    let mut buf = header.into_bytes();
    for (g, &dynamic) in cloud.gaussians.iter().zip(cloud.dynamic_mask.iter()) {
        let q = g.rot / g.rot.norm();
        let fields: [Real; 14] = [
            g.mean.x,
            g.mean.y,
            g.mean.z,
            q[0],
            q[1],
            q[2],
            q[3],
            g.log_scale.x,
            g.log_scale.y,
            g.log_scale.z,
            g.opacity_logit,
            g.color.x,
            g.color.y,
            g.color.z,
        ];
        for f in fields {
            buf.extend_from_slice(&(f as f32).to_le_bytes());
        }
        buf.push(dynamic as u8);
    }
    fs::write(path, buf).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn import_cloud(path: &Path) -> Result<GaussianCloud<Real>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut reader = BufReader::new(file);
    let mut n = 0usize;
    loop {
        let mut line = String::new();
        reader
            .read_line(&mut line)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let line = line.trim_end();
        if line.starts_with("element vertex ") {
            n = line["element vertex ".len()..]
                .parse()
                .map_err(|_| Error::parse(path.display().to_string(), "bad vertex count"))?;
        }
        if line == "end_header" {
            break;
        }
        if line.is_empty() {
            return Err(Error::parse(path.display().to_string(), "truncated header"));
        }
    }
    let mut gaussians = Vec::with_capacity(n);
    let mut mask = Vec::with_capacity(n);
    let mut record = [0u8; 14 * 4 + 1];
    for _ in 0..n {
        reader
            .read_exact(&mut record)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let f = |i: usize| -> Real {
            f32::from_le_bytes([
                record[i * 4],
                record[i * 4 + 1],
                record[i * 4 + 2],
                record[i * 4 + 3],
            ]) as Real
        };
        gaussians.push(Gaussian {
            mean: Vector3::new(f(0), f(1), f(2)),
            rot: Vector4::new(f(3), f(4), f(5), f(6)),
            log_scale: Vector3::new(f(7), f(8), f(9)),
            opacity_logit: f(10),
            color: Vector3::new(f(11), f(12), f(13)),
        });
        mask.push(record[14 * 4] != 0);
    }
    GaussianCloud::new(gaussians, mask)
}

#[derive(Serialize, Deserialize)]
struct MotionHeader {
    basis_count: usize,
    n_dynamic: usize,
    frames: usize,
    canonical_frame: usize,
    twist_order: String,
    bases_file: String,
    coeffs_file: String,
}

/// bases.raw holds all B bases (fixed six first) as f32le 6-vectors in
/// (omega, v) order; coeffs.raw is the flat N x F x B tensor.
pub fn export_motion(model: &MotionModel<Real>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let header = MotionHeader {
        basis_count: model.basis_count(),
        n_dynamic: model.coeffs.n,
        frames: model.frames(),
        canonical_frame: model.canonical_frame,
        twist_order: "omega_xyz_v_xyz".into(),
        bases_file: "bases.raw".into(),
        coeffs_file: "coeffs.raw".into(),
    };
    fs::write(
        dir.join("motion.json"),
        serde_json::to_string_pretty(&header).unwrap(),
    )
    .map_err(|e| Error::io(dir.join("motion.json").display().to_string(), e))?;

    let mut buf = Vec::new();
    for b in 0..model.basis_count() {
        for v in model.basis(b).to_array() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(dir.join("bases.raw"), buf)
        .map_err(|e| Error::io(dir.join("bases.raw").display().to_string(), e))?;

    let mut file = fs::File::create(dir.join("coeffs.raw"))
        .map_err(|e| Error::io(dir.join("coeffs.raw").display().to_string(), e))?;
    let mut buf = Vec::with_capacity(model.coeffs.data.len() * 4);
    for v in &model.coeffs.data {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    file.write_all(&buf)
        .map_err(|e| Error::io(dir.join("coeffs.raw").display().to_string(), e))
}

pub fn import_motion(dir: &Path) -> Result<MotionModel<Real>> {
    let header_path = dir.join("motion.json");
    let header: MotionHeader = serde_json::from_str(
        &fs::read_to_string(&header_path)
            .map_err(|e| Error::io(header_path.display().to_string(), e))?,
    )
    .map_err(|e| Error::parse(header_path.display().to_string(), e.to_string()))?;
    if header.twist_order != "omega_xyz_v_xyz" {
        return Err(Error::Validation(format!(
            "unknown twist order '{}'",
            header.twist_order
        )));
    }

    let bases_path = dir.join(&header.bases_file);
    let bases = fs::read(&bases_path).map_err(|e| Error::io(bases_path.display().to_string(), e))?;
    if bases.len() != header.basis_count * 24 {
        return Err(Error::parse(
            bases_path.display().to_string(),
            format!(
                "bases file has {} bytes, expected {}",
                bases.len(),
                header.basis_count * 24
            ),
        ));
    }
    let read_f32 = |buf: &[u8], i: usize| -> Real {
        f32::from_le_bytes([buf[i * 4], buf[i * 4 + 1], buf[i * 4 + 2], buf[i * 4 + 3]]) as Real
    };
    let mut model = MotionModel::new(
        header.n_dynamic,
        header.frames,
        header.basis_count,
        header.canonical_frame,
        0,
    )?;
    for (j, tw) in model.trainable.iter_mut().enumerate() {
        let off = (6 + j) * 6;
        *tw = Twist::from_array([
            read_f32(&bases, off),
            read_f32(&bases, off + 1),
            read_f32(&bases, off + 2),
            read_f32(&bases, off + 3),
            read_f32(&bases, off + 4),
            read_f32(&bases, off + 5),
        ]);
    }

    let coeffs_path = dir.join(&header.coeffs_file);
    let raw = fs::read(&coeffs_path).map_err(|e| Error::io(coeffs_path.display().to_string(), e))?;
    let expected = header.n_dynamic * header.frames * header.basis_count * 4;
    if raw.len() != expected {
        return Err(Error::parse(
            coeffs_path.display().to_string(),
            format!("coeffs file has {} bytes, expected {expected}", raw.len()),
        ));
    }
    let mut coeffs = CoeffTensor::zeros(header.n_dynamic, header.frames, header.basis_count);
    for i in 0..coeffs.data.len() {
        coeffs.data[i] = read_f32(&raw, i);
    }
    model.coeffs = coeffs;
    Ok(model)
}

/// Structured text: query_id, t, x, y, z. An empty list still writes a header.
pub fn export_tracks_3d(trajectories: &[(usize, Vec<Vector3<Real>>)], path: &Path) -> Result<()> {
    let mut text = String::from("query_id\tt\tx\ty\tz\n");
    for (query_id, traj) in trajectories {
        for (t, p) in traj.iter().enumerate() {
            text.push_str(&format!("{query_id}\t{t}\t{:.17e}\t{:.17e}\t{:.17e}\n", p.x, p.y, p.z));
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_tracks_3d(path: &Path) -> Result<Vec<(usize, Vec<Vector3<Real>>)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut out: Vec<(usize, Vec<Vector3<Real>>)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(Error::parse(
                path.display().to_string(),
                format!("line {}: expected 5 fields", lineno + 1),
            ));
        }
        let bad = |what: &str| Error::parse(path.display().to_string(), format!("line {}: bad {what}", lineno + 1));
        let q: usize = fields[0].parse().map_err(|_| bad("query_id"))?;
        let t: usize = fields[1].parse().map_err(|_| bad("t"))?;
        let x: Real = fields[2].parse().map_err(|_| bad("x"))?;
        let y: Real = fields[3].parse().map_err(|_| bad("y"))?;
        let z: Real = fields[4].parse().map_err(|_| bad("z"))?;
        if out.last().map(|(id, _)| *id) != Some(q) {
            out.push((q, Vec::new()));
        }
        let traj = &mut out.last_mut().unwrap().1;
        if traj.len() != t {
            return Err(Error::parse(
                path.display().to_string(),
                format!("line {}: frames of query {q} are not contiguous", lineno + 1),
            ));
        }
        traj.push(Vector3::new(x, y, z));
    }
    Ok(out)
}

/// PNG sequence plus 16-bit depth PNGs and raw float depth.
pub fn export_renders(targets: &[RenderTarget<Real>], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    for (i, t) in targets.iter().enumerate() {
        write_rgb_png(&t.rgb, &dir.join(format!("rgb_{i:05}.png")))?;
        write_depth_png(
            &t.depth,
            &dir.join(format!("depth_{i:05}.png")),
            &dir.join(format!("depth_{i:05}.scale.json")),
        )?;
        let mut buf = Vec::with_capacity(t.depth.values.len() * 4);
        for v in &t.depth.values {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        fs::write(dir.join(format!("depth_{i:05}.raw")), buf)
            .map_err(|e| Error::io(dir.display().to_string(), e))?;
    }
    Ok(())
}

//! Pinhole cameras, point projection, per-pixel Pluecker ray embeddings, and
//! the trajectory file that is the single source of camera truth for the
//! whole pipeline (no pose estimation anywhere).
//!
//! Conventions:
//! - Extrinsics map world -> camera; the camera looks down +Z in its frame.
//! - Pixel (u, v) are plain pixel coordinates; integer coordinates map
//!   exactly through (cx, cy), which keeps golden files stable.
//! - Rays: direction d = normalize(R^T K^{-1} [u, v, 1]), origin o = -R^T t.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::{real, Scalar};
use crate::se3::{matrix_to_quat, quat_to_matrix, RigidTransform};

pub const NEAR_PLANE: f64 = 1e-6;

/// Pinhole intrinsics in pixels, constant over a clip.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics<T: Scalar> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: u32,
    pub height: u32,
}

impl<T: Scalar> Intrinsics<T> {
    pub fn new(fx: T, fy: T, cx: T, cy: T, width: u32, height: u32) -> Result<Self> {
        if fx <= T::zero() || fy <= T::zero() {
            return Err(Error::InvalidArgument("focal lengths must be > 0".into()));
        }
        let (w, h) = (real::<T>(width as f64), real::<T>(height as f64));
        if cx < T::zero() || cx >= w || cy < T::zero() || cy >= h {
            return Err(Error::InvalidArgument(
                "principal point must lie inside the image".into(),
            ));
        }
        Ok(Intrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    pub fn matrix(&self) -> Matrix3<T> {
        Matrix3::new(
            self.fx,
            T::zero(),
            self.cx,
            T::zero(),
            self.fy,
            self.cy,
            T::zero(),
            T::zero(),
            T::one(),
        )
    }
}

/// World -> camera pose.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Extrinsics<T: Scalar> {
    pub pose: RigidTransform<T>,
}

impl<T: Scalar> Extrinsics<T> {
    pub fn new(pose: RigidTransform<T>) -> Self {
        Extrinsics { pose }
    }

    pub fn identity() -> Self {
        Extrinsics {
            pose: RigidTransform::identity(),
        }
    }

    /// Camera center in world coordinates: -R^T t.
    pub fn center(&self) -> Vector3<T> {
        -(self.pose.rotation.transpose() * self.pose.translation)
    }

    pub fn world_to_camera(&self, x: &Vector3<T>) -> Vector3<T> {
        self.pose.apply(x)
    }
}

/// Shared camera trajectory: one intrinsics block plus per-frame poses.
#[derive(Clone, Debug)]
pub struct CameraTrajectory<T: Scalar> {
    pub intrinsics: Intrinsics<T>,
    pub poses: Vec<Extrinsics<T>>,
    pub frame_rate: f64,
}

impl<T: Scalar> CameraTrajectory<T> {
    pub fn new(intrinsics: Intrinsics<T>, poses: Vec<Extrinsics<T>>, frame_rate: f64) -> Result<Self> {
        if poses.is_empty() {
            return Err(Error::InvalidArgument(
                "trajectory needs at least one pose".into(),
            ));
        }
        Ok(CameraTrajectory {
            intrinsics,
            poses,
            frame_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn pose(&self, frame: usize) -> Result<&Extrinsics<T>> {
        self.poses.get(frame).ok_or(Error::OutOfRange {
            what: "frame",
            index: frame,
            len: self.poses.len(),
        })
    }
}

/// Per-pixel 6-channel ray grid, planar layout: channels 0-2 are the moment
/// o x d, channels 3-5 the unit direction d.
#[derive(Clone, Debug)]
pub struct PlueckerMap<T: Scalar> {
    pub width: u32,
    pub height: u32,
    data: Vec<T>,
}

impl<T: Scalar> PlueckerMap<T> {
    pub fn channel_len(&self) -> usize {
        (self.width * self.height) as usize
    }

    pub fn at(&self, x: u32, y: u32) -> [T; 6] {
        let n = self.channel_len();
        let i = (y * self.width + x) as usize;
        [
            self.data[i],
            self.data[n + i],
            self.data[2 * n + i],
            self.data[3 * n + i],
            self.data[4 * n + i],
            self.data[5 * n + i],
        ]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Check unit-norm directions and moment-direction orthogonality.
    pub fn validate(&self) -> Result<()> {
        let tol = real::<T>(1e-6);
        for y in 0..self.height {
            for x in 0..self.width {
                let e = self.at(x, y);
                let m = Vector3::new(e[0], e[1], e[2]);
                let d = Vector3::new(e[3], e[4], e[5]);
                if (d.norm() - T::one()).abs() > tol {
                    return Err(Error::Validation(format!(
                        "direction at ({x},{y}) is not unit-norm"
                    )));
                }
                if m.dot(&d).abs() > tol {
                    return Err(Error::Validation(format!(
                        "moment at ({x},{y}) is not orthogonal to direction"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Project a world point; returns (pixel, camera-frame depth).
pub fn project_point<T: Scalar>(
    x: &Vector3<T>,
    k: &Intrinsics<T>,
    e: &Extrinsics<T>,
) -> Result<(Vector2<T>, T)> {
    let cam = e.world_to_camera(x);
    let z = cam.z;
    if z <= real(NEAR_PLANE) {
        return Err(Error::BehindCamera {
            depth: z.to_f64().unwrap_or(f64::NAN),
        });
    }
    Ok((
        Vector2::new(k.fx * cam.x / z + k.cx, k.fy * cam.y / z + k.cy),
        z,
    ))
}

/// World-space viewing ray through pixel (u, v): (origin, unit direction).
pub fn pixel_ray<T: Scalar>(
    u: T,
    v: T,
    k: &Intrinsics<T>,
    e: &Extrinsics<T>,
) -> (Vector3<T>, Vector3<T>) {
    let dir_cam = Vector3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, T::one());
    let rt = e.pose.rotation.transpose();
    let d = (rt * dir_cam).normalize();
    (e.center(), d)
}

/// Back-project pixel (u, v) at camera-frame depth z to a world point.
pub fn unproject_pixel<T: Scalar>(u: T, v: T, z: T, k: &Intrinsics<T>, e: &Extrinsics<T>) -> Vector3<T> {
    let cam = Vector3::new((u - k.cx) / k.fx * z, (v - k.cy) / k.fy * z, z);
    e.pose.rotation.transpose() * (cam - e.pose.translation)
}

/// Build the full 6 x h x w Pluecker embedding for one camera.
pub fn plucker_embed<T: Scalar>(k: &Intrinsics<T>, e: &Extrinsics<T>) -> PlueckerMap<T> {
    let (w, h) = (k.width as usize, k.height as usize);
    let n = w * h;
    let mut data = vec![T::zero(); 6 * n];
    let o = e.center();
    for y in 0..h {
        for x in 0..w {
            let (_, d) = pixel_ray(real::<T>(x as f64), real::<T>(y as f64), k, e);
            let m = o.cross(&d);
            let i = y * w + x;
            data[i] = m.x;
            data[n + i] = m.y;
            data[2 * n + i] = m.z;
            data[3 * n + i] = d.x;
            data[4 * n + i] = d.y;
            data[5 * n + i] = d.z;
        }
    }
    PlueckerMap {
        width: k.width,
        height: k.height,
        data,
    }
}

// ---------------------------------------------------------------------------
// Trajectory file format (camera.json)
// ---------------------------------------------------------------------------

pub const TRAJECTORY_CONVENTION: &str = "world_to_camera_z_forward";

#[derive(Serialize, Deserialize)]
struct IntrinsicsDto {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
}

/// One pose. Written as quaternion + translation; a row-major 3x3 matrix `m`
/// is accepted on read so non-rotations can be detected and rejected.
#[derive(Serialize, Deserialize)]
struct FrameDto {
    #[serde(skip_serializing_if = "Option::is_none")]
    q: Option<[f64; 4]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    m: Option<[[f64; 3]; 3]>,
    t: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct TrajectoryDto {
    convention: String,
    frame_rate: f64,
    intrinsics: IntrinsicsDto,
    frames: Vec<FrameDto>,
}

/// Write a trajectory as camera.json.
pub fn write_trajectory<T: Scalar>(trajectory: &CameraTrajectory<T>, path: &Path) -> Result<()> {
    let k = &trajectory.intrinsics;
    let dto = TrajectoryDto {
        convention: TRAJECTORY_CONVENTION.to_string(),
        frame_rate: trajectory.frame_rate,
        intrinsics: IntrinsicsDto {
            fx: k.fx.to_f64().unwrap(),
            fy: k.fy.to_f64().unwrap(),
            cx: k.cx.to_f64().unwrap(),
            cy: k.cy.to_f64().unwrap(),
            width: k.width,
            height: k.height,
        },
        frames: trajectory
            .poses
            .iter()
            .map(|e| {
                let q = matrix_to_quat(&e.pose.rotation);
                FrameDto {
                    q: Some([
                        q[0].to_f64().unwrap(),
                        q[1].to_f64().unwrap(),
                        q[2].to_f64().unwrap(),
                        q[3].to_f64().unwrap(),
                    ]),
                    m: None,
                    t: [
                        e.pose.translation.x.to_f64().unwrap(),
                        e.pose.translation.y.to_f64().unwrap(),
                        e.pose.translation.z.to_f64().unwrap(),
                    ],
                }
            })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&dto)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Read and validate camera.json.
pub fn read_trajectory<T: Scalar>(path: &Path) -> Result<CameraTrajectory<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let dto: TrajectoryDto = serde_json::from_str(&text)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    if dto.convention != TRAJECTORY_CONVENTION {
        return Err(Error::Validation(format!(
            "unknown camera convention '{}' (expected '{}')",
            dto.convention, TRAJECTORY_CONVENTION
        )));
    }
    let k = Intrinsics::new(
        real::<T>(dto.intrinsics.fx),
        real::<T>(dto.intrinsics.fy),
        real::<T>(dto.intrinsics.cx),
        real::<T>(dto.intrinsics.cy),
        dto.intrinsics.width,
        dto.intrinsics.height,
    )?;
    let mut poses = Vec::with_capacity(dto.frames.len());
    for (i, frame) in dto.frames.iter().enumerate() {
        let rotation: Matrix3<T> = match (&frame.q, &frame.m) {
            (Some(q), _) => {
                let qv = nalgebra::Vector4::new(q[0], q[1], q[2], q[3]);
                let norm = qv.norm();
                if !norm.is_finite() || (norm - 1.0).abs() > 1e-4 {
                    return Err(Error::Validation(format!(
                        "frame {i}: quaternion norm {norm} deviates from 1 beyond 1e-4"
                    )));
                }
                let qn = qv / norm;
                quat_to_matrix(&nalgebra::Vector4::new(
                    real::<T>(qn[0]),
                    real::<T>(qn[1]),
                    real::<T>(qn[2]),
                    real::<T>(qn[3]),
                ))
            }
            (None, Some(m)) => Matrix3::new(
                real::<T>(m[0][0]),
                real::<T>(m[0][1]),
                real::<T>(m[0][2]),
                real::<T>(m[1][0]),
                real::<T>(m[1][1]),
                real::<T>(m[1][2]),
                real::<T>(m[2][0]),
                real::<T>(m[2][1]),
                real::<T>(m[2][2]),
            ),
            (None, None) => {
                return Err(Error::parse(
                    path.display().to_string(),
                    format!("frame {i}: needs either 'q' or 'm'"),
                ))
            }
        };
        let t = Vector3::new(
            real::<T>(frame.t[0]),
            real::<T>(frame.t[1]),
            real::<T>(frame.t[2]),
        );
        let pose = RigidTransform::try_from_parts(rotation, t, real(1e-4))
            .map_err(|e| Error::Validation(format!("frame {i}: {e}")))?;
        poses.push(Extrinsics::new(pose));
    }
    CameraTrajectory::new(k, poses, dto.frame_rate)
}

// ---------------------------------------------------------------------------
// Pluecker raw export (consumed by an external generation stack)
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
pub struct PlueckerMeta {
    pub frames: usize,
    pub channels: usize,
    pub height: u32,
    pub width: u32,
    pub dtype: String,
    pub layout: String,
}

/// Write one raw f32 little-endian planar 6 x h x w file per frame plus a
/// sidecar meta file describing the shape.
pub fn write_plucker_sequence<T: Scalar>(
    trajectory: &CameraTrajectory<T>,
    dir: &Path,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    for (i, pose) in trajectory.poses.iter().enumerate() {
        let map = plucker_embed(&trajectory.intrinsics, pose);
        let path = dir.join(format!("plucker_{i:05}.raw"));
        let mut file =
            fs::File::create(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut buf = Vec::with_capacity(map.data().len() * 4);
        for v in map.data() {
            buf.extend_from_slice(&(v.to_f32().unwrap()).to_le_bytes());
        }
        file.write_all(&buf)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    let meta = PlueckerMeta {
        frames: trajectory.len(),
        channels: 6,
        height: trajectory.intrinsics.height,
        width: trajectory.intrinsics.width,
        dtype: "f32le".into(),
        layout: "planar channel-major: moment xyz then direction xyz".into(),
    };
    let meta_path = dir.join("plucker_meta.json");
    fs::write(&meta_path, serde_json::to_string_pretty(&meta).unwrap())
        .map_err(|e| Error::io(meta_path.display().to_string(), e))
}

// ---------------------------------------------------------------------------
// Trajectory authoring
// ---------------------------------------------------------------------------

/// Parameters for [`make_trajectory`].
#[derive(Clone, Debug)]
pub struct TrajectoryParams<T: Scalar> {
    pub frames: usize,
    pub frame_rate: f64,
    /// Orbit/arc radius (scene units).
    pub radius: T,
    /// Look-at target for orbit/arc.
    pub target: Vector3<T>,
    /// Sweep in degrees (orbit default 360, arc default e.g. 30).
    pub sweep_degrees: T,
    /// Dolly translation applied over the clip.
    pub dolly: Vector3<T>,
    /// Height of the camera ring above the target for orbit/arc.
    pub height: T,
}

impl<T: Scalar> TrajectoryParams<T> {
    pub fn new(frames: usize) -> Self {
        TrajectoryParams {
            frames,
            frame_rate: 30.0,
            radius: real(2.0),
            target: Vector3::zeros(),
            sweep_degrees: real(360.0),
            dolly: Vector3::new(T::zero(), T::zero(), T::one()),
            height: T::zero(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrajectoryKind {
    Orbit,
    Dolly,
    Arc,
    Static,
}

impl std::str::FromStr for TrajectoryKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "orbit" => Ok(TrajectoryKind::Orbit),
            "dolly" => Ok(TrajectoryKind::Dolly),
            "arc" => Ok(TrajectoryKind::Arc),
            "static" => Ok(TrajectoryKind::Static),
            other => Err(Error::InvalidArgument(format!(
                "unknown trajectory kind '{other}' (orbit|dolly|arc|static)"
            ))),
        }
    }
}

/// World -> camera pose for a camera at `center` looking at `target`.
pub fn look_at<T: Scalar>(center: &Vector3<T>, target: &Vector3<T>) -> Result<RigidTransform<T>> {
    let forward = target - center;
    if forward.norm() < real(1e-12) {
        return Err(Error::InvalidArgument(
            "camera center coincides with look-at target".into(),
        ));
    }
    let forward = forward.normalize();
    let mut up = Vector3::new(T::zero(), T::one(), T::zero());
    if up.cross(&forward).norm() < real(1e-6) {
        up = Vector3::new(T::one(), T::zero(), T::zero());
    }
    let right = up.cross(&forward).normalize();
    let down = forward.cross(&right);
    let rotation = Matrix3::from_rows(&[
        right.transpose(),
        down.transpose(),
        forward.transpose(),
    ]);
    Ok(RigidTransform {
        rotation,
        translation: -(rotation * center),
    })
}

/// Author a smooth trajectory of the requested kind.
pub fn make_trajectory<T: Scalar>(
    kind: TrajectoryKind,
    intrinsics: Intrinsics<T>,
    params: &TrajectoryParams<T>,
) -> Result<CameraTrajectory<T>> {
    if params.frames == 0 {
        return Err(Error::InvalidArgument("frames must be >= 1".into()));
    }
    let n = params.frames;
    let mut poses = Vec::with_capacity(n);
    match kind {
        TrajectoryKind::Static => {
            for _ in 0..n {
                poses.push(Extrinsics::identity());
            }
        }
        TrajectoryKind::Dolly => {
            for i in 0..n {
                let s = if n == 1 {
                    T::zero()
                } else {
                    real::<T>(i as f64 / (n - 1) as f64)
                };
                let center = params.dolly * s;
                // Identity rotation; world -> camera translation is -R c.
                poses.push(Extrinsics::new(RigidTransform {
                    rotation: Matrix3::identity(),
                    translation: -center,
                }));
            }
        }
        TrajectoryKind::Orbit | TrajectoryKind::Arc => {
            if params.radius <= T::zero() {
                return Err(Error::InvalidArgument("orbit radius must be > 0".into()));
            }
            let sweep = params.sweep_degrees * T::pi() / real(180.0);
            for i in 0..n {
                let frac = if kind == TrajectoryKind::Orbit {
                    // Full loops leave out the duplicate closing pose.
                    real::<T>(i as f64 / n as f64)
                } else if n == 1 {
                    T::zero()
                } else {
                    real::<T>(i as f64 / (n - 1) as f64) - real(0.5)
                };
                let ang = sweep * frac;
                let center = params.target
                    + Vector3::new(
                        params.radius * ang.sin(),
                        params.height,
                        -params.radius * ang.cos(),
                    );
                poses.push(Extrinsics::new(look_at(&center, &params.target)?));
            }
        }
    }
    CameraTrajectory::new(intrinsics, poses, params.frame_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3;
    use nalgebra::{Matrix3x4, Vector4};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn test_intrinsics() -> Intrinsics<f64> {
        Intrinsics::new(100.0, 100.0, 320.0, 240.0, 640, 480).unwrap()
    }

    fn random_pose(rng: &mut impl Rng) -> Extrinsics<f64> {
        let xi = se3::Twist::new(
            Vector3::new(
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
            ),
            Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ),
        );
        Extrinsics::new(se3::exp(&xi).unwrap())
    }

    #[test]
    fn on_axis_projection() {
        let k = test_intrinsics();
        let e = Extrinsics::identity();
        let (px, z) = project_point(&Vector3::new(0.0, 0.0, 5.0), &k, &e).unwrap();
        assert_eq!(px, Vector2::new(320.0, 240.0));
        assert_eq!(z, 5.0);

        let (px, z) = project_point(&Vector3::new(1.0, 0.0, 5.0), &k, &e).unwrap();
        assert_eq!(px, Vector2::new(340.0, 240.0));
        assert_eq!(z, 5.0);
    }

    #[test]
    fn behind_camera_is_error() {
        let k = test_intrinsics();
        let e = Extrinsics::identity();
        let r = project_point(&Vector3::new(0.0, 0.0, -1.0), &k, &e);
        assert!(matches!(r, Err(Error::BehindCamera { .. })));
    }

    #[test]
    fn projection_matches_homogeneous_matrix_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let k = test_intrinsics();
        for _ in 0..200 {
            let e = random_pose(&mut rng);
            let x = Vector3::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(2.0..8.0),
            );
            // Oracle: 3x4 homogeneous multiply then dehomogenize.
            let mut p34 = Matrix3x4::zeros();
            p34.fixed_view_mut::<3, 3>(0, 0)
                .copy_from(&(k.matrix() * e.pose.rotation));
            p34.fixed_view_mut::<3, 1>(0, 3)
                .copy_from(&(k.matrix() * e.pose.translation));
            let hom = p34 * Vector4::new(x.x, x.y, x.z, 1.0);
            if hom.z <= NEAR_PLANE {
                continue;
            }
            let oracle = Vector2::new(hom.x / hom.z, hom.y / hom.z);
            let (px, z) = project_point(&x, &k, &e).unwrap();
            assert!((px - oracle).norm() < 1e-9);
            assert!((z - hom.z).abs() < 1e-12);
        }
    }

    #[test]
    fn pixel_ray_trivials() {
        let k = test_intrinsics();
        let e = Extrinsics::identity();
        let (o, d) = pixel_ray(320.0, 240.0, &k, &e);
        assert!(o.norm() < 1e-15);
        assert!((d - Vector3::new(0.0, 0.0, 1.0)).norm() < 1e-15);

        // Camera at world (1,0,0), identity rotation: world -> cam t = -c.
        let e = Extrinsics::new(RigidTransform::from_parts(
            Matrix3::identity(),
            Vector3::new(-1.0, 0.0, 0.0),
        ));
        let (o, d) = pixel_ray(320.0, 240.0, &k, &e);
        assert!((o - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-15);
        assert!((d - Vector3::new(0.0, 0.0, 1.0)).norm() < 1e-15);

        let k1 = Intrinsics::new(1.0, 1.0, 0.0, 0.0, 4, 4).unwrap();
        let (_, d) = pixel_ray(1.0, 0.0, &k1, &Extrinsics::identity());
        let s = 2f64.sqrt() / 2.0;
        assert!((d - Vector3::new(s, 0.0, s)).norm() < 1e-12);
    }

    #[test]
    fn projection_ray_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = test_intrinsics();
        for _ in 0..200 {
            let e = random_pose(&mut rng);
            let u = rng.gen_range(0.0..640.0);
            let v = rng.gen_range(0.0..480.0);
            let (o, d) = pixel_ray(u, v, &k, &e);
            for s in [0.5, 1.0, 3.7, 20.0] {
                let (px, _) = project_point(&(o + d * s), &k, &e).unwrap();
                assert!((px - Vector2::new(u, v)).norm() < 0.5e-3);
            }
        }
    }

    #[test]
    fn plucker_trivials() {
        let k = test_intrinsics();
        let e = Extrinsics::identity();
        let map = plucker_embed(&k, &e);
        let center = map.at(320, 240);
        assert_eq!(&center[0..3], &[0.0, 0.0, 0.0]);
        assert!((Vector3::new(center[3], center[4], center[5])
            - Vector3::new(0.0, 0.0, 1.0))
        .norm()
            < 1e-15);

        // Camera center (1,0,0): moment of center pixel = (1,0,0) x (0,0,1) = (0,-1,0).
        let e = Extrinsics::new(RigidTransform::from_parts(
            Matrix3::identity(),
            Vector3::new(-1.0, 0.0, 0.0),
        ));
        let map = plucker_embed(&k, &e);
        let c = map.at(320, 240);
        assert!((Vector3::new(c[0], c[1], c[2]) - Vector3::new(0.0, -1.0, 0.0)).norm() < 1e-12);
        assert!((Vector3::new(c[3], c[4], c[5]) - Vector3::new(0.0, 0.0, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn plucker_full_grid_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let k = Intrinsics::new(40.0, 35.0, 1.5, 2.5, 4, 4).unwrap();
        let e = random_pose(&mut rng);
        let map = plucker_embed(&k, &e);
        map.validate().unwrap();
        // Naive per-pixel scalar evaluation.
        for y in 0..4u32 {
            for x in 0..4u32 {
                let o = -(e.pose.rotation.transpose() * e.pose.translation);
                let dir_cam = Vector3::new(
                    (x as f64 - k.cx) / k.fx,
                    (y as f64 - k.cy) / k.fy,
                    1.0,
                );
                let d = (e.pose.rotation.transpose() * dir_cam).normalize();
                let m = o.cross(&d);
                let got = map.at(x, y);
                let want = [m.x, m.y, m.z, d.x, d.y, d.z];
                for i in 0..6 {
                    assert!((got[i] - want[i]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn plucker_moment_is_invariant_to_point_on_ray() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let k = test_intrinsics();
        for _ in 0..50 {
            let e = random_pose(&mut rng);
            let (o, d) = pixel_ray(rng.gen_range(0.0..640.0), rng.gen_range(0.0..480.0), &k, &e);
            let m0 = o.cross(&d);
            for s in [0.1, 1.0, 10.0] {
                let m1 = (o + d * s).cross(&d);
                assert!((m0 - m1).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn trajectory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("camera.json");
        let k = test_intrinsics();
        let mut params = TrajectoryParams::new(3);
        params.radius = 2.0;
        let traj = make_trajectory(TrajectoryKind::Orbit, k, &params).unwrap();
        write_trajectory(&traj, &path).unwrap();
        let back: CameraTrajectory<f64> = read_trajectory(&path).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back.frame_rate, traj.frame_rate);
        for (a, b) in traj.poses.iter().zip(back.poses.iter()) {
            assert!((a.pose.rotation - b.pose.rotation).abs().max() < 1e-12);
            assert!((a.pose.translation - b.pose.translation).norm() < 1e-12);
        }
    }

    #[test]
    fn trajectory_rejects_reflection_and_bad_quaternion() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("camera.json");
        let json = r#"{
            "convention": "world_to_camera_z_forward",
            "frame_rate": 30.0,
            "intrinsics": {"fx": 100.0, "fy": 100.0, "cx": 320.0, "cy": 240.0, "width": 640, "height": 480},
            "frames": [{"m": [[1,0,0],[0,1,0],[0,0,-1]], "t": [0,0,0]}]
        }"#;
        std::fs::write(&path, json).unwrap();
        assert!(matches!(
            read_trajectory::<f64>(&path),
            Err(Error::Validation(_))
        ));

        let json = r#"{
            "convention": "world_to_camera_z_forward",
            "frame_rate": 30.0,
            "intrinsics": {"fx": 100.0, "fy": 100.0, "cx": 320.0, "cy": 240.0, "width": 640, "height": 480},
            "frames": [{"q": [1.01, 0, 0, 0], "t": [0,0,0]}]
        }"#;
        std::fs::write(&path, json).unwrap();
        assert!(matches!(
            read_trajectory::<f64>(&path),
            Err(Error::Validation(_))
        ));

        std::fs::write(&path, "{ not json").unwrap();
        assert!(matches!(
            read_trajectory::<f64>(&path),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn trajectory_80_frames_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("camera.json");
        let mut params = TrajectoryParams::new(80);
        params.frame_rate = 24.0;
        let traj = make_trajectory(TrajectoryKind::Arc, test_intrinsics(), &params).unwrap();
        write_trajectory(&traj, &path).unwrap();
        let back: CameraTrajectory<f64> = read_trajectory(&path).unwrap();
        assert_eq!(back.len(), 80);
        assert_eq!(back.frame_rate, 24.0);
    }

    #[test]
    fn make_trajectory_kinds() {
        let k = test_intrinsics();
        let traj = make_trajectory(TrajectoryKind::Static, k, &TrajectoryParams::new(5)).unwrap();
        assert_eq!(traj.len(), 5);
        for p in &traj.poses {
            assert_eq!(p.pose.rotation, Matrix3::identity());
            assert_eq!(p.pose.translation, Vector3::zeros());
        }

        let mut params = TrajectoryParams::new(4);
        params.radius = 2.0;
        let traj = make_trajectory(TrajectoryKind::Orbit, k, &params).unwrap();
        for p in &traj.poses {
            let c = p.center();
            assert!((c.norm() - 2.0).abs() < 1e-12, "center distance {}", c.norm());
            // Viewing direction passes through the origin.
            let fwd = p.pose.rotation.transpose() * Vector3::new(0.0, 0.0, 1.0);
            let to_target = (-c).normalize();
            assert!((fwd - to_target).norm() < 1e-12);
        }

        let mut params = TrajectoryParams::new(10);
        params.dolly = Vector3::new(0.0, 0.0, 1.0);
        let traj = make_trajectory(TrajectoryKind::Dolly, k, &params).unwrap();
        for (i, p) in traj.poses.iter().enumerate() {
            let want = i as f64 / 9.0;
            assert!((p.center() - Vector3::new(0.0, 0.0, want)).norm() < 1e-12);
        }

        let mut bad = TrajectoryParams::new(4);
        bad.radius = -1.0;
        assert!(make_trajectory(TrajectoryKind::Orbit, k, &bad).is_err());
    }

    #[test]
    fn plucker_export_writes_raw_and_meta() {
        let dir = tempfile::tempdir().unwrap();
        let k = Intrinsics::new(10.0, 10.0, 4.0, 3.0, 8, 6).unwrap();
        let traj = make_trajectory(TrajectoryKind::Static, k, &TrajectoryParams::new(2)).unwrap();
        write_plucker_sequence(&traj, dir.path()).unwrap();
        let raw = std::fs::read(dir.path().join("plucker_00000.raw")).unwrap();
        assert_eq!(raw.len(), 6 * 8 * 6 * 4);
        let meta: PlueckerMeta =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("plucker_meta.json")).unwrap())
                .unwrap();
        assert_eq!(meta.frames, 2);
        assert_eq!(meta.channels, 6);
        // First direction-z value of the identity camera should be ~1 after
        // normalization of ((0-cx)/fx, (0-cy)/fy, 1).
        let dzoff = 5 * 8 * 6 * 4;
        let dz = f32::from_le_bytes([raw[dzoff], raw[dzoff + 1], raw[dzoff + 2], raw[dzoff + 3]]);
        let want = 1.0 / (0.4f64.powi(2) + 0.3f64.powi(2) + 1.0).sqrt();
        assert!((dz as f64 - want).abs() < 1e-6);
    }
}

//! Fitted-state directory: everything `render` and `track` need without the
//! original dataset.

use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use splat4d::camera::{read_trajectory, write_trajectory, CameraTrajectory};
use splat4d::dataio::{export_cloud, export_motion, import_cloud, import_motion};
use splat4d::frame::ScalarFrame;
use splat4d::scene::{GaussianCloud, MotionModel};
use splat4d::Real;

#[derive(Serialize, Deserialize)]
struct StateMeta {
    canonical_frame: usize,
    background: [Real; 3],
    width: u32,
    height: u32,
}

pub struct FitState {
    pub cloud: GaussianCloud<Real>,
    pub model: MotionModel<Real>,
    pub trajectory: CameraTrajectory<Real>,
    pub background: Vector3<Real>,
    pub canonical_depth: ScalarFrame<Real>,
}

pub fn save_state(
    dir: &Path,
    cloud: &GaussianCloud<Real>,
    model: &MotionModel<Real>,
    trajectory: &CameraTrajectory<Real>,
    background: Vector3<Real>,
    canonical_depth: &ScalarFrame<Real>,
) -> anyhow::Result<()> {
    fs::create_dir_all(dir)?;
    export_cloud(cloud, &dir.join("cloud.ply"))?;
    export_motion(model, &dir.join("motion"))?;
    write_trajectory(trajectory, &dir.join("camera.json"))?;
    let meta = StateMeta {
        canonical_frame: model.canonical_frame,
        background: [background.x, background.y, background.z],
        width: canonical_depth.width,
        height: canonical_depth.height,
    };
    fs::write(dir.join("state.json"), serde_json::to_string_pretty(&meta)?)?;
    let mut buf = Vec::with_capacity(canonical_depth.values.len() * 4);
    for v in &canonical_depth.values {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(dir.join("canonical_depth.raw"), buf)?;
    Ok(())
}

pub fn load_state(dir: &Path) -> anyhow::Result<FitState> {
    let meta: StateMeta = serde_json::from_str(&fs::read_to_string(dir.join("state.json"))?)?;
    let cloud = import_cloud(&dir.join("cloud.ply"))?;
    let model = import_motion(&dir.join("motion"))?;
    let trajectory = read_trajectory(&dir.join("camera.json"))?;
    let raw = fs::read(dir.join("canonical_depth.raw"))?;
    anyhow::ensure!(
        raw.len() == (meta.width * meta.height) as usize * 4,
        "canonical_depth.raw has the wrong size"
    );
    let mut canonical_depth = ScalarFrame::new(meta.width, meta.height, 0.0);
    for (i, chunk) in raw.chunks_exact(4).enumerate() {
        canonical_depth.values[i] =
            f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as Real;
    }
    Ok(FitState {
        cloud,
        model,
        trajectory,
        background: Vector3::new(meta.background[0], meta.background[1], meta.background[2]),
        canonical_depth,
    })
}

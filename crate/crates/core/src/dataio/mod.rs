//! Dataset ingestion, the synthetic ground-truth scene generator that powers
//! the acceptance tests, and all on-disk exports.
//!
//! Directory layout:
//!   frames/%05d.png          8-bit RGB
//!   depths/%05d.png          16-bit gray plus depth_scale.json (or %05d.raw f32le)
//!   tracks.tsv               query_id, frame, u, v, visible
//!   masks/%05d.png           optional; >50% gray marks dynamic pixels
//!   camera.json              shared trajectory
//!   holdout/                 optional evaluation views (camera.json, times.json, frames/)

mod dataset;
mod export;
mod synth;

pub use dataset::{
    load_dataset, read_depth_png, read_rgb_png, save_dataset, write_depth_png, write_rgb_png,
    HoldoutSet, SceneDataset,
};
pub use export::{
    export_cloud, export_motion, export_renders, export_tracks_3d, import_cloud, import_motion,
    read_tracks_3d,
};
pub use synth::{synth_scene, MotionKind, SynthSpec, SyntheticScene};

//! Scene fitting: loss assembly, Adam updates, initialization from depth and
//! 2D tracks, and the two-phase training schedule.

pub mod adam;
pub mod fit;
pub mod init;
pub mod losses;

pub use fit::{fit, EpochLog, FitContext, FitOutcome};
pub use init::{init_cloud, init_motion, kmeans};
pub use losses::{
    assign_tracks, assign_tracks_k, compute_loss, track_query_pixels, LossEval, LossInputs,
    LossTerms, TrackAssignments, TRACK_KNN, TRACK_READOUT_KNN,
};

use serde::{Deserialize, Serialize};

use crate::Real;

/// Loss weights. `lambda_fixed` splits the coefficient penalty between the
/// fixed and trainable basis groups.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub w_rgb: Real,
    pub w_ssim: Real,
    pub w_depth: Real,
    pub w_track: Real,
    pub w_coeff: Real,
    pub lambda_fixed: Real,
    pub w_smooth: Real,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            w_rgb: 1.0,
            w_ssim: 0.2,
            w_depth: 0.5,
            w_track: 2.0,
            w_coeff: 0.1,
            lambda_fixed: 0.8,
            w_smooth: 0.1,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> crate::Result<()> {
        let weights = [
            self.w_rgb,
            self.w_ssim,
            self.w_depth,
            self.w_track,
            self.w_coeff,
            self.w_smooth,
        ];
        if weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(crate::Error::Validation("loss weights must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda_fixed) {
            return Err(crate::Error::Validation(
                "lambda_fixed must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Training schedule and capacity knobs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSchedule {
    pub init_iters: usize,
    pub joint_epochs: usize,
    pub lr: Real,
    pub adam_beta1: Real,
    pub adam_beta2: Real,
    pub downsample_factor: Real,
    pub basis_count: usize,
    pub init_gaussians: usize,
    /// Density control cadence (steps) during the first half of the joint phase.
    pub densify_interval: usize,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            init_iters: 1000,
            joint_epochs: 600,
            lr: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            downsample_factor: 0.5,
            basis_count: 15,
            init_gaussians: 50_000,
            densify_interval: 200,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> crate::Result<()> {
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return Err(crate::Error::Validation("learning rate must be > 0".into()));
        }
        if self.basis_count < 6 {
            return Err(crate::Error::Validation("basis count must be >= 6".into()));
        }
        if !(0.0 < self.downsample_factor && self.downsample_factor <= 1.0) {
            return Err(crate::Error::Validation(
                "downsample factor must lie in (0, 1]".into(),
            ));
        }
        if self.init_gaussians == 0 {
            return Err(crate::Error::Validation("init_gaussians must be >= 1".into()));
        }
        Ok(())
    }
}

/// Full configuration persisted next to every run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub loss: LossConfig,
    pub schedule: TrainSchedule,
}

impl Config {
    pub fn validate(&self) -> crate::Result<()> {
        self.loss.validate()?;
        self.schedule.validate()
    }
}

//! 2D point tracks: per-query, per-frame pixel positions with visibility.
//! Tracks are ingested from files (an off-the-shelf tracker upstream) or
//! emitted exactly by the synthetic scene generator.

use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct TrackSet {
    n_queries: usize,
    frames: usize,
    positions: Vec<Vector2<Real>>,
    visible: Vec<bool>,
}

impl TrackSet {
    pub fn new(n_queries: usize, frames: usize) -> Self {
        TrackSet {
            n_queries,
            frames,
            positions: vec![Vector2::zeros(); n_queries * frames],
            visible: vec![false; n_queries * frames],
        }
    }

    pub fn n_queries(&self) -> usize {
        self.n_queries
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn set(&mut self, query: usize, frame: usize, pos: Vector2<Real>, visible: bool) {
        let i = query * self.frames + frame;
        self.positions[i] = pos;
        self.visible[i] = visible;
    }

    pub fn position(&self, query: usize, frame: usize) -> Vector2<Real> {
        self.positions[query * self.frames + frame]
    }

    pub fn is_visible(&self, query: usize, frame: usize) -> bool {
        self.visible[query * self.frames + frame]
    }

    /// Visible positions must lie inside the image.
    pub fn validate(&self, width: u32, height: u32) -> Result<()> {
        for q in 0..self.n_queries {
            for t in 0..self.frames {
                if !self.is_visible(q, t) {
                    continue;
                }
                let p = self.position(q, t);
                if p.x < 0.0 || p.x >= width as Real || p.y < 0.0 || p.y >= height as Real {
                    return Err(Error::Validation(format!(
                        "track {q} frame {t} at ({}, {}) is out of bounds for {width}x{height}",
                        p.x, p.y
                    )));
                }
                if !p.x.is_finite() || !p.y.is_finite() {
                    return Err(Error::Validation(format!(
                        "track {q} frame {t} has non-finite position"
                    )));
                }
            }
        }
        Ok(())
    }
}

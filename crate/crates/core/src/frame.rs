//! Simple owned image buffers used across rendering, losses and data I/O.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::num::Scalar;

/// Row-major RGB image with channel values nominally in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct RgbFrame<T: Scalar> {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<Vector3<T>>,
}

impl<T: Scalar> RgbFrame<T> {
    pub fn new(width: u32, height: u32, fill: Vector3<T>) -> Self {
        RgbFrame {
            width,
            height,
            pixels: vec![fill; (width * height) as usize],
        }
    }

    #[inline]
    pub fn at(&self, x: u32, y: u32) -> Vector3<T> {
        self.pixels[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn at_mut(&mut self, x: u32, y: u32) -> &mut Vector3<T> {
        &mut self.pixels[(y * self.width + x) as usize]
    }

    pub fn same_shape(&self, other: &Self) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::InvalidArgument(format!(
                "image shape mismatch: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }
}

/// Row-major scalar map (depth, mask weights, alpha).
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarFrame<T: Scalar> {
    pub width: u32,
    pub height: u32,
    pub values: Vec<T>,
}

impl<T: Scalar> ScalarFrame<T> {
    pub fn new(width: u32, height: u32, fill: T) -> Self {
        ScalarFrame {
            width,
            height,
            values: vec![fill; (width * height) as usize],
        }
    }

    #[inline]
    pub fn at(&self, x: u32, y: u32) -> T {
        self.values[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn at_mut(&mut self, x: u32, y: u32) -> &mut T {
        &mut self.values[(y * self.width + x) as usize]
    }
}

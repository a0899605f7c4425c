//! Image datasets as flat row-major matrices.
//!
//! Pixel layout inside a row is `(y * w + x) * c + channel` — channel
//! fastest — which keeps patch extraction a contiguous-ish gather and makes
//! the layout identical for grayscale (`c = 1`) and RGB.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageShape {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl ImageShape {
    pub fn new(h: usize, w: usize, c: usize) -> Self {
        ImageShape { h, w, c }
    }

    pub fn num_pixels(&self) -> usize {
        self.h * self.w * self.c
    }
}

/// One image per matrix row, intensities expected in `[0, 1]` (or `[-1, 1]`
/// when a loader is asked to scale symmetrically).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageDataset {
    pub images: Matrix,
    pub shape: ImageShape,
    pub labels: Option<Vec<u8>>,
}

impl ImageDataset {
    pub fn new(images: Matrix, shape: ImageShape, labels: Option<Vec<u8>>) -> Result<Self> {
        if images.cols() != shape.num_pixels() {
            return Err(Error::DimensionMismatch {
                context: "ImageDataset::new",
                expected: shape.num_pixels(),
                found: images.cols(),
            });
        }
        if let Some(l) = &labels {
            if l.len() != images.rows() {
                return Err(Error::DimensionMismatch {
                    context: "ImageDataset labels",
                    expected: images.rows(),
                    found: l.len(),
                });
            }
        }
        Ok(ImageDataset { images, shape, labels })
    }

    pub fn len(&self) -> usize {
        self.images.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.images.rows() == 0
    }
}

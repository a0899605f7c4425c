//! Latent grids: `w x h` spatial positions, each carrying a depth-`d`
//! feature vector.
//!
//! Storage is position-major: the vector at `(x, y)` starts at
//! `(y * w + x) * depth`. A grid with `w == 1` is just a batch of vectors,
//! which is how the static experiments use it; the autoencoder produces
//! genuinely spatial grids.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct LatentGrid {
    w: usize,
    h: usize,
    depth: usize,
    values: Vec<f64>,
}

impl LatentGrid {
    pub fn new(w: usize, h: usize, depth: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != w * h * depth {
            return Err(Error::DimensionMismatch {
                context: "LatentGrid::new",
                expected: w * h * depth,
                found: values.len(),
            });
        }
        Ok(LatentGrid { w, h, depth, values })
    }

    pub fn zeros(w: usize, h: usize, depth: usize) -> Self {
        LatentGrid {
            w,
            h,
            depth,
            values: vec![0.0; w * h * depth],
        }
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn n_positions(&self) -> usize {
        self.w * self.h
    }

    /// Feature vector at flat position index `p` (`p = y * w + x`).
    pub fn position(&self, p: usize) -> &[f64] {
        &self.values[p * self.depth..(p + 1) * self.depth]
    }

    pub fn position_mut(&mut self, p: usize) -> &mut [f64] {
        &mut self.values[p * self.depth..(p + 1) * self.depth]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// View the grid as a `(w*h) x depth` matrix, one row per position.
    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_vec(self.n_positions(), self.depth, self.values.clone())
            .expect("grid buffer length is positions * depth by construction")
    }

    /// Treat a batch matrix as a `1 x rows` grid (one spatial column), which
    /// makes every per-position operation directly applicable to plain
    /// batches of vectors.
    pub fn from_matrix(m: &Matrix) -> LatentGrid {
        LatentGrid {
            w: 1,
            h: m.rows(),
            depth: m.cols(),
            values: m.data().to_vec(),
        }
    }

    /// Copy of the channel range `[start, start + len)` at every position.
    pub fn slice_channels(&self, start: usize, len: usize) -> Result<LatentGrid> {
        if start + len > self.depth {
            return Err(Error::invalid(format!(
                "channel slice {start}..{} out of bounds for depth {}",
                start + len,
                self.depth
            )));
        }
        let mut values = Vec::with_capacity(self.n_positions() * len);
        for p in 0..self.n_positions() {
            let v = self.position(p);
            values.extend_from_slice(&v[start..start + len]);
        }
        LatentGrid::new(self.w, self.h, len, values)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

//! Synthetic grayscale shape images for the learned-prior experiments.
//!
//! Each image is a square canvas with a black background and one bright
//! shape — a filled square, a disk, a cross, or a hollow frame — drawn at
//! a random position and size with a single intensity drawn from
//! `[0.5, 1]`. Because the shape identity and intensity are global
//! factors, distant regions of one image are strongly correlated; that is
//! exactly the structure a spatially-split quantizer cannot share across
//! its per-region codebooks, while a depthwise split can.
//!
//! Pixel values are in `[0, 1]` (background exactly 0), matching the
//! 8-bit discretization convention used for bits/dim.

use crate::error::{Error, Result};
use crate::image::{ImageDataset, ImageShape};
use crate::matrix::Matrix;
use crate::seed::rng_from;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// The four shape families, identified by their dataset label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Square,
    Disk,
    Cross,
    Frame,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 4] = [
        ShapeKind::Square,
        ShapeKind::Disk,
        ShapeKind::Cross,
        ShapeKind::Frame,
    ];

    pub fn label(self) -> u8 {
        match self {
            ShapeKind::Square => 0,
            ShapeKind::Disk => 1,
            ShapeKind::Cross => 2,
            ShapeKind::Frame => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Square => "square",
            ShapeKind::Disk => "disk",
            ShapeKind::Cross => "cross",
            ShapeKind::Frame => "frame",
        }
    }
}

/// Position and size of one shape instance, in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeGeometry {
    /// Filled axis-aligned square: top-left corner and edge length.
    Square { x0: usize, y0: usize, edge: usize },
    /// Filled disk: center and radius; a pixel is lit when its squared
    /// distance to the center is at most `radius^2`.
    Disk { cx: usize, cy: usize, radius: usize },
    /// One-pixel-thick plus sign: center and arm length.
    Cross { cx: usize, cy: usize, arm: usize },
    /// One-pixel-thick square outline: top-left corner and edge length.
    Frame { x0: usize, y0: usize, edge: usize },
}

impl ShapeGeometry {
    pub fn kind(&self) -> ShapeKind {
        match self {
            ShapeGeometry::Square { .. } => ShapeKind::Square,
            ShapeGeometry::Disk { .. } => ShapeKind::Disk,
            ShapeGeometry::Cross { .. } => ShapeKind::Cross,
            ShapeGeometry::Frame { .. } => ShapeKind::Frame,
        }
    }
}

/// Configuration for one generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeSpec {
    /// Square canvas edge in pixels.
    pub img: usize,
    pub n_samples: usize,
    pub seed: u64,
}

impl ShapeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.img < 4 {
            return Err(Error::invalid(format!(
                "canvas edge must be at least 4 pixels, got {}",
                self.img
            )));
        }
        if self.n_samples == 0 {
            return Err(Error::EmptyInput("shape dataset needs n_samples >= 1"));
        }
        Ok(())
    }
}

/// Paint `geometry` onto a fresh `img x img` canvas at the given
/// intensity. Deterministic pixel-level rules, usable directly as a test
/// oracle.
pub fn render(geometry: ShapeGeometry, intensity: f64, img: usize) -> Vec<f64> {
    let mut canvas = vec![0.0; img * img];
    let mut put = |x: usize, y: usize| {
        if x < img && y < img {
            canvas[y * img + x] = intensity;
        }
    };
    match geometry {
        ShapeGeometry::Square { x0, y0, edge } => {
            for y in y0..y0 + edge {
                for x in x0..x0 + edge {
                    put(x, y);
                }
            }
        }
        ShapeGeometry::Disk { cx, cy, radius } => {
            let r2 = (radius * radius) as i64;
            for y in 0..img {
                for x in 0..img {
                    let dx = x as i64 - cx as i64;
                    let dy = y as i64 - cy as i64;
                    if dx * dx + dy * dy <= r2 {
                        put(x, y);
                    }
                }
            }
        }
        ShapeGeometry::Cross { cx, cy, arm } => {
            for x in cx.saturating_sub(arm)..=cx + arm {
                put(x, cy);
            }
            for y in cy.saturating_sub(arm)..=cy + arm {
                put(cx, y);
            }
        }
        ShapeGeometry::Frame { x0, y0, edge } => {
            for x in x0..x0 + edge {
                put(x, y0);
                put(x, y0 + edge - 1);
            }
            for y in y0..y0 + edge {
                put(x0, y);
                put(x0 + edge - 1, y);
            }
        }
    }
    canvas
}

/// Draw one shape's geometry. Size ranges are chosen so every shape fits
/// the canvas entirely and always leaves background pixels visible.
fn sample_geometry(kind: ShapeKind, img: usize, rng: &mut impl Rng) -> ShapeGeometry {
    match kind {
        ShapeKind::Square => {
            let edge = rng.random_range(img / 4..=img / 2);
            let x0 = rng.random_range(0..=img - edge);
            let y0 = rng.random_range(0..=img - edge);
            ShapeGeometry::Square { x0, y0, edge }
        }
        ShapeKind::Disk => {
            let radius = rng.random_range(img / 4..=img / 2 - 1);
            let cx = rng.random_range(radius..=img - 1 - radius);
            let cy = rng.random_range(radius..=img - 1 - radius);
            ShapeGeometry::Disk { cx, cy, radius }
        }
        ShapeKind::Cross => {
            let arm = rng.random_range(img / 4..=img / 2 - 1);
            let cx = rng.random_range(arm..=img - 1 - arm);
            let cy = rng.random_range(arm..=img - 1 - arm);
            ShapeGeometry::Cross { cx, cy, arm }
        }
        ShapeKind::Frame => {
            let edge = rng.random_range(img / 2..=3 * img / 4);
            let x0 = rng.random_range(0..=img - edge);
            let y0 = rng.random_range(0..=img - edge);
            ShapeGeometry::Frame { x0, y0, edge }
        }
    }
}

/// Generate a shape dataset. One RNG stream seeded by `spec.seed` drives
/// all draws, in a fixed per-sample order (kind, geometry, intensity), so
/// the dataset is a pure function of the spec.
pub fn generate_shapes(spec: &ShapeSpec) -> Result<ImageDataset> {
    spec.validate()?;
    let img = spec.img;
    let mut rng = rng_from(spec.seed);
    let mut data = Vec::with_capacity(spec.n_samples * img * img);
    let mut labels = Vec::with_capacity(spec.n_samples);
    for _ in 0..spec.n_samples {
        let kind = ShapeKind::ALL[rng.random_range(0..ShapeKind::ALL.len())];
        let geometry = sample_geometry(kind, img, &mut rng);
        let intensity = rng.random_range(0.5..=1.0);
        data.extend_from_slice(&render(geometry, intensity, img));
        labels.push(kind.label());
    }
    ImageDataset::new(
        Matrix::from_vec(spec.n_samples, img * img, data)?,
        ImageShape { h: img, w: img, c: 1 },
        Some(labels),
    )
}

//! Parameter updates for the autoencoder: plain SGD or Adam.
//!
//! State is kept per *block* — one block per MLP weight matrix, bias
//! vector, and codebook — in a fixed registration order (encoder layers,
//! decoder layers, then codebooks), so a checkpoint can serialize the
//! moment estimates as a flat list.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    /// Adam with the standard constants ([`ADAM_BETA1`], [`ADAM_BETA2`],
    /// [`ADAM_EPS`]); the adaptive per-parameter scaling noticeably speeds
    /// up the tiny autoencoders here.
    Adam,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    /// Number of completed steps (Adam bias correction uses `t`).
    pub t: u64,
    /// First-moment estimates per block; empty for SGD.
    pub m: Vec<Vec<f64>>,
    /// Second-moment estimates per block; empty for SGD.
    pub v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, block_sizes: &[usize]) -> Self {
        match kind {
            OptimizerKind::Sgd => OptimizerState {
                kind,
                t: 0,
                m: Vec::new(),
                v: Vec::new(),
            },
            OptimizerKind::Adam => OptimizerState {
                kind,
                t: 0,
                m: block_sizes.iter().map(|&s| vec![0.0; s]).collect(),
                v: block_sizes.iter().map(|&s| vec![0.0; s]).collect(),
            },
        }
    }

    /// Call once per optimization step, before the block updates.
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    /// Apply one block's update in place.
    pub fn update_block(
        &mut self,
        block: usize,
        params: &mut [f64],
        grads: &[f64],
        lr: f64,
    ) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::DimensionMismatch {
                context: "optimizer block",
                expected: params.len(),
                found: grads.len(),
            });
        }
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Adam => {
                let m = &mut self.m[block];
                let v = &mut self.v[block];
                let t = self.t as i32;
                let bc1 = 1.0 - ADAM_BETA1.powi(t);
                let bc2 = 1.0 - ADAM_BETA2.powi(t);
                for i in 0..params.len() {
                    let g = grads[i];
                    m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
                    v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
                    let m_hat = m[i] / bc1;
                    let v_hat = v[i] / bc2;
                    params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                }
            }
        }
        Ok(())
    }
}

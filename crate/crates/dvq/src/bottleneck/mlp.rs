//! Minimal multilayer perceptron with hand-written backpropagation.
//!
//! The models here are a few thousand parameters, so an autodiff dependency
//! would be the heaviest thing in the crate for the sake of two chain-rule
//! applications. Writing the backward pass out also makes the
//! straight-through gradient routing explicit instead of hiding it behind a
//! stop-gradient operator.

use crate::error::{Error, Result};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `out_dim x in_dim`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub act: Activation,
}

impl Layer {
    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.out_dim {
            let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.b[o];
            for (wi, xi) in row.iter().zip(x) {
                acc += wi * xi;
            }
            out.push(match self.act {
                Activation::Tanh => acc.tanh(),
                Activation::Identity => acc,
            });
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Per-layer inputs and outputs saved by [`Mlp::forward_cached`]. For tanh
/// layers the activation derivative is recovered from the output
/// (`1 - y^2`), so pre-activations never need to be stored.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// `activations[0]` is the network input; `activations[i + 1]` is the
    /// output of layer `i`.
    activations: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("cache always holds the input")
    }
}

/// Parameter gradients mirroring an [`Mlp`]'s layer shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub dw: Vec<Vec<f64>>,
    pub db: Vec<Vec<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        MlpGrads {
            dw: mlp.layers.iter().map(|l| vec![0.0; l.w.len()]).collect(),
            db: mlp.layers.iter().map(|l| vec![0.0; l.b.len()]).collect(),
        }
    }

    /// Elementwise accumulate; used for the fixed-order reduction over
    /// per-sample gradients.
    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.dw.iter_mut().zip(&other.dw) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.db.iter_mut().zip(&other.db) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.dw.iter().chain(&self.db).all(|v| v.iter().all(|x| x.is_finite()))
    }
}

impl Mlp {
    /// Layer dims `[in, hidden..., out]`; hidden layers are tanh, the output
    /// layer is linear. Weights are drawn `N(0, 1/in_dim)` in row-major
    /// order from `rng`, biases start at zero.
    pub fn new(dims: &[usize], rng: &mut ChaCha8Rng) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::invalid("an MLP needs at least input and output dims"));
        }
        if dims.contains(&0) {
            return Err(Error::invalid("MLP layer dims must be nonzero"));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for i in 0..dims.len() - 1 {
            let (in_dim, out_dim) = (dims[i], dims[i + 1]);
            let scale = 1.0 / (in_dim as f64).sqrt();
            let w: Vec<f64> = (0..out_dim * in_dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    z * scale
                })
                .collect();
            layers.push(Layer {
                in_dim,
                out_dim,
                w,
                b: vec![0.0; out_dim],
                act: if i + 1 == dims.len() - 1 {
                    Activation::Identity
                } else {
                    Activation::Tanh
                },
            });
        }
        Ok(Mlp { layers })
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(&l.b).all(|v| v.is_finite()))
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut cache = self.forward_cached(x)?;
        Ok(cache
            .activations
            .pop()
            .expect("forward always produces an output"))
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<MlpCache> {
        if x.len() != self.in_dim() {
            return Err(Error::DimensionMismatch {
                context: "Mlp::forward",
                expected: self.in_dim(),
                found: x.len(),
            });
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_vec());
        let mut out = Vec::new();
        for layer in &self.layers {
            layer.forward(activations.last().expect("input pushed"), &mut out);
            activations.push(out.clone());
        }
        Ok(MlpCache { activations })
    }

    /// Backpropagate `grad_out` (d loss / d output) through the cached
    /// forward pass. Parameter gradients accumulate into `grads`; the
    /// return value is d loss / d input.
    pub fn backward(&self, cache: &MlpCache, grad_out: &[f64], grads: &mut MlpGrads) -> Vec<f64> {
        debug_assert_eq!(cache.activations.len(), self.layers.len() + 1);
        let mut g = grad_out.to_vec();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.activations[li];
            let output = &cache.activations[li + 1];
            // d loss / d pre-activation.
            let mut g_pre = g;
            if layer.act == Activation::Tanh {
                for (gp, y) in g_pre.iter_mut().zip(output) {
                    *gp *= 1.0 - y * y;
                }
            }
            let dw = &mut grads.dw[li];
            let db = &mut grads.db[li];
            let mut g_in = vec![0.0; layer.in_dim];
            for o in 0..layer.out_dim {
                let gp = g_pre[o];
                db[o] += gp;
                let wrow = &layer.w[o * layer.in_dim..(o + 1) * layer.in_dim];
                let dwrow = &mut dw[o * layer.in_dim..(o + 1) * layer.in_dim];
                for i in 0..layer.in_dim {
                    dwrow[i] += gp * input[i];
                    g_in[i] += wrow[i] * gp;
                }
            }
            g = g_in;
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;
    use approx::assert_relative_eq;

    fn tiny_mlp(seed: u64) -> Mlp {
        Mlp::new(&[3, 4, 2], &mut rng_from(seed)).unwrap()
    }

    #[test]
    fn construction_and_shapes() {
        let m = tiny_mlp(1);
        assert_eq!(m.in_dim(), 3);
        assert_eq!(m.out_dim(), 2);
        assert_eq!(m.n_params(), 3 * 4 + 4 + 4 * 2 + 2);
        assert_eq!(m.layers[0].act, Activation::Tanh);
        assert_eq!(m.layers[1].act, Activation::Identity);
        assert!(Mlp::new(&[3], &mut rng_from(0)).is_err());
        assert!(Mlp::new(&[3, 0, 2], &mut rng_from(0)).is_err());
    }

    #[test]
    fn forward_matches_manual_single_layer() {
        let mut m = tiny_mlp(2);
        m.layers.truncate(1);
        m.layers[0].act = Activation::Identity;
        let l = &m.layers[0];
        let x = [0.3, -0.6, 0.9];
        let want: Vec<f64> = (0..4)
            .map(|o| {
                l.b[o]
                    + l.w[o * 3] * x[0]
                    + l.w[o * 3 + 1] * x[1]
                    + l.w[o * 3 + 2] * x[2]
            })
            .collect();
        assert_eq!(m.forward(&x).unwrap(), want);
    }

    #[test]
    fn backward_matches_central_finite_differences() {
        // Scalar loss L = sum_j c_j * out_j with fixed c, so dL/dout = c.
        let m = tiny_mlp(7);
        let x = [0.5, -0.25, 0.125];
        let c = [0.7, -1.3];
        let loss = |mm: &Mlp| -> f64 {
            let y = mm.forward(&x).unwrap();
            y.iter().zip(&c).map(|(a, b)| a * b).sum()
        };

        let cache = m.forward_cached(&x).unwrap();
        let mut grads = MlpGrads::zeros_like(&m);
        let g_in = m.backward(&cache, &c, &mut grads);

        let eps = 1e-6;
        for li in 0..m.layers.len() {
            for wi in 0..m.layers[li].w.len() {
                let mut plus = m.clone();
                plus.layers[li].w[wi] += eps;
                let mut minus = m.clone();
                minus.layers[li].w[wi] -= eps;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * eps);
                assert_relative_eq!(grads.dw[li][wi], fd, max_relative = 1e-5, epsilon = 1e-9);
            }
            for bi in 0..m.layers[li].b.len() {
                let mut plus = m.clone();
                plus.layers[li].b[bi] += eps;
                let mut minus = m.clone();
                minus.layers[li].b[bi] -= eps;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * eps);
                assert_relative_eq!(grads.db[li][bi], fd, max_relative = 1e-5, epsilon = 1e-9);
            }
        }

        // Input gradient against finite differences too.
        for xi in 0..x.len() {
            let mut xp = x;
            xp[xi] += eps;
            let mut xm = x;
            xm[xi] -= eps;
            let yp: f64 = m.forward(&xp).unwrap().iter().zip(&c).map(|(a, b)| a * b).sum();
            let ym: f64 = m.forward(&xm).unwrap().iter().zip(&c).map(|(a, b)| a * b).sum();
            let fd = (yp - ym) / (2.0 * eps);
            assert_relative_eq!(g_in[xi], fd, max_relative = 1e-5, epsilon = 1e-9);
        }
    }

    #[test]
    fn backward_accumulates_across_calls() {
        let m = tiny_mlp(3);
        let x = [0.1, 0.2, 0.3];
        let c = [1.0, -1.0];
        let cache = m.forward_cached(&x).unwrap();

        let mut once = MlpGrads::zeros_like(&m);
        m.backward(&cache, &c, &mut once);
        let mut twice = MlpGrads::zeros_like(&m);
        m.backward(&cache, &c, &mut twice);
        m.backward(&cache, &c, &mut twice);

        let mut doubled = once.clone();
        doubled.add_assign(&once);
        assert_eq!(twice, doubled);
    }

    #[test]
    fn init_is_seed_deterministic() {
        assert_eq!(tiny_mlp(9), tiny_mlp(9));
        assert_ne!(tiny_mlp(9), tiny_mlp(10));
    }
}

//! Single-codebook vector quantization.
//!
//! A codebook is `k` centroids of dimension `d`. Assignment is the argmin of
//! squared Euclidean distance with ties broken toward the lowest index, the
//! objective is the batch mean of assigned squared distances, and the
//! gradient treats assignments as frozen for the duration of a step (the
//! argmin is piecewise constant, so this is the true gradient almost
//! everywhere).
//!
//! Bit-reproducibility contract: distances accumulate strictly left to right
//! over the feature axis, and gradient accumulation runs in batch order.
//! The parallel entry points only parallelize the embarrassingly independent
//! per-row assignments, so `quantize_batch` and `quantize_batch_seq` return
//! identical bits regardless of worker count.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seed::rng_from;
use rand_distr::{Distribution, StandardNormal};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// `k` centroids of dimension `d`, stored row-major. Entries are validated
/// finite at every construction, so a quantizer can assume clean centroids.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    k: usize,
    d: usize,
    centroids: Vec<f64>,
}

impl Codebook {
    pub fn new(k: usize, d: usize, centroids: Vec<f64>) -> Result<Self> {
        if k == 0 || d == 0 {
            return Err(Error::invalid(format!(
                "codebook needs k >= 1 and d >= 1, got k={k}, d={d}"
            )));
        }
        if centroids.len() != k * d {
            return Err(Error::DimensionMismatch {
                context: "Codebook::new",
                expected: k * d,
                found: centroids.len(),
            });
        }
        if !centroids.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: "codebook centroids".to_string(),
            });
        }
        Ok(Codebook { k, d, centroids })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = Matrix::from_rows(rows)?;
        Codebook::new(m.rows(), m.cols(), m.data().to_vec())
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn centroid(&self, k: usize) -> &[f64] {
        &self.centroids[k * self.d..(k + 1) * self.d]
    }

    pub fn centroids(&self) -> &[f64] {
        &self.centroids
    }

    /// Mutable access for optimizers and finite-difference probes. Callers
    /// are responsible for keeping entries finite; the training loops here
    /// re-validate after every update.
    pub fn centroids_mut(&mut self) -> &mut [f64] {
        &mut self.centroids
    }

    /// Re-check the construction invariant after in-place mutation.
    pub fn validate_finite(&self) -> Result<()> {
        if self.centroids.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite {
                context: "codebook centroids".to_string(),
            })
        }
    }
}

/// Centroids drawn i.i.d. from the standard normal, in row-major draw order.
pub fn init_codebook(k: usize, d: usize, seed: u64) -> Result<Codebook> {
    if k == 0 || d == 0 {
        return Err(Error::invalid(format!(
            "init_codebook needs k >= 1 and d >= 1, got k={k}, d={d}"
        )));
    }
    let mut rng = rng_from(seed);
    let centroids: Vec<f64> = (0..k * d)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    Codebook::new(k, d, centroids)
}

/// Squared Euclidean distance, summed strictly left to right. No square
/// root: assignments and objectives only ever compare or average squared
/// distances.
pub fn squared_euclidean(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            context: "squared_euclidean",
            expected: a.len(),
            found: b.len(),
        });
    }
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    Ok(acc)
}

/// Distance accumulated in the same left-to-right order as
/// [`squared_euclidean`], but abandoned once the running sum exceeds
/// `bound`. Terms are non-negative, so an abandoned row can never win the
/// argmin; a completed row returns the exact same bits as the plain sum.
fn sq_dist_bounded(x: &[f64], e: &[f64], bound: f64) -> f64 {
    let n = x.len();
    let mut acc = 0.0;
    let mut i = 0;
    while i < n {
        let end = (i + 8).min(n);
        while i < end {
            let d = x[i] - e[i];
            acc += d * d;
            i += 1;
        }
        if acc > bound {
            return acc;
        }
    }
    acc
}

fn nearest_unchecked(x: &[f64], cb: &Codebook) -> (usize, f64) {
    let mut best_idx = 0;
    let mut best = squared_euclidean(x, cb.centroid(0)).expect("dims validated");
    for k in 1..cb.k {
        let d = sq_dist_bounded(x, cb.centroid(k), best);
        // Strict improvement only: equal distances keep the earlier index.
        if d < best {
            best = d;
            best_idx = k;
        }
    }
    (best_idx, best)
}

/// Index and squared distance of the closest centroid. Ties go to the
/// lowest index, which keeps assignment deterministic on symmetric inputs.
pub fn nearest_code(x: &[f64], cb: &Codebook) -> Result<(usize, f64)> {
    if x.len() != cb.d {
        return Err(Error::DimensionMismatch {
            context: "nearest_code",
            expected: cb.d,
            found: x.len(),
        });
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite {
            context: "nearest_code input".to_string(),
        });
    }
    Ok(nearest_unchecked(x, cb))
}

/// Per-row assignment of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizationResult {
    /// Assigned centroid index per row.
    pub indices: Vec<usize>,
    /// Row i is the centroid assigned to batch row i.
    pub codes: Matrix,
    /// Squared distance from each row to its assigned centroid.
    pub sq_distances: Vec<f64>,
}

fn assemble(batch: &Matrix, cb: &Codebook, pairs: Vec<(usize, f64)>) -> QuantizationResult {
    let mut codes = Vec::with_capacity(batch.rows() * cb.d);
    let mut indices = Vec::with_capacity(batch.rows());
    let mut sq_distances = Vec::with_capacity(batch.rows());
    for (idx, dist) in pairs {
        codes.extend_from_slice(cb.centroid(idx));
        indices.push(idx);
        sq_distances.push(dist);
    }
    QuantizationResult {
        indices,
        codes: Matrix::from_vec(batch.rows(), cb.d, codes).expect("codes sized rows*d"),
        sq_distances,
    }
}

fn validate_batch(batch: &Matrix, cb: &Codebook, context: &'static str) -> Result<()> {
    if batch.cols() != cb.d {
        return Err(Error::DimensionMismatch {
            context,
            expected: cb.d,
            found: batch.cols(),
        });
    }
    if !batch.is_finite() {
        return Err(Error::NonFinite {
            context: context.to_string(),
        });
    }
    Ok(())
}

/// Assign every row of `batch` to its nearest centroid. With the `parallel`
/// feature the per-row scans run on the rayon pool; output is identical to
/// [`quantize_batch_seq`] either way.
pub fn quantize_batch(batch: &Matrix, cb: &Codebook) -> Result<QuantizationResult> {
    validate_batch(batch, cb, "quantize_batch")?;
    #[cfg(feature = "parallel")]
    {
        let pairs: Vec<(usize, f64)> = batch
            .data()
            .par_chunks_exact(cb.d)
            .with_min_len(32)
            .map(|row| nearest_unchecked(row, cb))
            .collect();
        Ok(assemble(batch, cb, pairs))
    }
    #[cfg(not(feature = "parallel"))]
    {
        let pairs: Vec<(usize, f64)> = batch
            .iter_rows()
            .map(|row| nearest_unchecked(row, cb))
            .collect();
        Ok(assemble(batch, cb, pairs))
    }
}

/// Sequential reference implementation of [`quantize_batch`].
pub fn quantize_batch_seq(batch: &Matrix, cb: &Codebook) -> Result<QuantizationResult> {
    validate_batch(batch, cb, "quantize_batch_seq")?;
    let pairs: Vec<(usize, f64)> = batch
        .iter_rows()
        .map(|row| nearest_unchecked(row, cb))
        .collect();
    Ok(assemble(batch, cb, pairs))
}

/// Mean assigned squared distance over the batch. Errors on an empty batch
/// rather than returning 0/0.
pub fn vq_objective(batch: &Matrix, cb: &Codebook) -> Result<f64> {
    if batch.rows() == 0 {
        return Err(Error::EmptyInput("vq_objective needs at least one row"));
    }
    let q = quantize_batch(batch, cb)?;
    Ok(q.sq_distances.iter().sum::<f64>() / batch.rows() as f64)
}

/// Gradient of the objective with one batch's assignments frozen, plus the
/// assignments and loss from the same pass.
#[derive(Debug, Clone)]
pub struct CodebookGradient {
    /// `k x d`; row `k` is zero when no sample selected centroid `k`.
    pub grad: Matrix,
    pub indices: Vec<usize>,
    pub mean_sq_distance: f64,
}

/// d/d e_k of `mean_i ||x_i - e_{z_i}||^2` with assignments `z` frozen:
/// `(2/n) * sum_{i: z_i = k} (e_k - x_i)`. Accumulation is a sequential
/// fold in batch order (counts and per-code sums), so the result does not
/// depend on worker count.
pub fn codebook_gradient(batch: &Matrix, cb: &Codebook) -> Result<CodebookGradient> {
    if batch.rows() == 0 {
        return Err(Error::EmptyInput("codebook_gradient needs at least one row"));
    }
    let q = quantize_batch(batch, cb)?;
    let n = batch.rows() as f64;

    let mut counts = vec![0usize; cb.k];
    let mut sums = vec![0.0f64; cb.k * cb.d];
    for (i, &z) in q.indices.iter().enumerate() {
        counts[z] += 1;
        let row = batch.row(i);
        let acc = &mut sums[z * cb.d..(z + 1) * cb.d];
        for (a, x) in acc.iter_mut().zip(row) {
            *a += x;
        }
    }

    let mut grad = vec![0.0f64; cb.k * cb.d];
    let scale = 2.0 / n;
    for k in 0..cb.k {
        if counts[k] == 0 {
            continue; // untouched codes get an exactly-zero gradient row
        }
        let c = counts[k] as f64;
        let e = cb.centroid(k);
        let s = &sums[k * cb.d..(k + 1) * cb.d];
        let g = &mut grad[k * cb.d..(k + 1) * cb.d];
        for j in 0..cb.d {
            g[j] = scale * (c * e[j] - s[j]);
        }
    }

    Ok(CodebookGradient {
        grad: Matrix::from_vec(cb.k, cb.d, grad)?,
        indices: q.indices,
        mean_sq_distance: q.sq_distances.iter().sum::<f64>() / n,
    })
}

/// One plain gradient-descent step: `e <- e - lr * grad`. Returns a fresh
/// codebook so the caller keeps the pre-step one for free; construction
/// re-validates that every entry stayed finite.
pub fn sgd_step(cb: &Codebook, grad: &Matrix, lr: f64) -> Result<Codebook> {
    if grad.rows() != cb.k || grad.cols() != cb.d {
        return Err(Error::DimensionMismatch {
            context: "sgd_step",
            expected: cb.k * cb.d,
            found: grad.rows() * grad.cols(),
        });
    }
    if !(lr.is_finite() && lr > 0.0) {
        return Err(Error::invalid(format!("learning rate must be finite and > 0, got {lr}")));
    }
    if !grad.is_finite() {
        return Err(Error::NonFinite {
            context: "sgd_step gradient".to_string(),
        });
    }
    let centroids: Vec<f64> = cb
        .centroids
        .iter()
        .zip(grad.data())
        .map(|(e, g)| e - lr * g)
        .collect();
    Codebook::new(cb.k, cb.d, centroids)
}

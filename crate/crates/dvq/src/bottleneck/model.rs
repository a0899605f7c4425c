//! The quantized autoencoder: patchwise MLP encoder, multi-codebook
//! bottleneck, patchwise MLP decoder, and the three-term training loss.
//!
//! Loss (all terms are means, so batch size and image size do not rescale
//! anything):
//!
//! ```text
//! total = reconstruction + vq + beta * commitment
//! reconstruction = mean over pixels of (x - x_hat)^2
//! vq = commitment = mean over positions of ||z_e - z_q||^2
//! ```
//!
//! The `vq` and `commitment` terms are numerically the same number; what
//! distinguishes them is where their gradients are allowed to flow, and
//! that routing is the whole point of this module:
//!
//! * reconstruction updates the decoder, and — through the straight-through
//!   estimator, which copies the gradient at `z_q` verbatim onto `z_e` —
//!   the encoder. It never touches the codebooks.
//! * `vq` treats `z_e` as a constant and updates only the codebooks
//!   (assignments frozen within the step, exactly like the static lab).
//! * `commitment` treats `z_q` as a constant and updates only the encoder,
//!   scaled by `beta`.
//!
//! [`per_term_gradients`] exposes the three gradient sets separately so
//! tests can assert the routing is exact (structural zeros, not just small
//! numbers).

use crate::bottleneck::mlp::{Mlp, MlpCache, MlpGrads};
use crate::bottleneck::optim::OptimizerState;
use crate::codebook::Codebook;
use crate::depthwise::{
    dvq_quantize, svq_quantize, CodebookBank, DepthwiseResult, SpatialPartition,
};
use crate::error::{Error, Result};
use crate::grid::LatentGrid;
use crate::image::ImageShape;
use crate::matrix::Matrix;
use crate::metrics::{nll_discretized_gaussian, BITS_SIGMA};
use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Encoder/decoder MLPs shared across all grid positions, plus the patch
/// geometry tying latent positions to pixel blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderDecoderParams {
    pub image: ImageShape,
    /// Square patch edge in pixels; each patch becomes one latent position.
    pub patch: usize,
    pub latent_d: usize,
    pub encoder: Mlp,
    pub decoder: Mlp,
}

impl EncoderDecoderParams {
    pub fn grid_w(&self) -> usize {
        self.image.w / self.patch
    }

    pub fn grid_h(&self) -> usize {
        self.image.h / self.patch
    }

    pub fn n_positions(&self) -> usize {
        self.grid_w() * self.grid_h()
    }

    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch * self.image.c
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 || !self.image.h.is_multiple_of(self.patch) || !self.image.w.is_multiple_of(self.patch) {
            return Err(Error::invalid(format!(
                "patch {} must evenly tile a {}x{} image",
                self.patch, self.image.h, self.image.w
            )));
        }
        if self.encoder.in_dim() != self.patch_dim() || self.encoder.out_dim() != self.latent_d {
            return Err(Error::invalid(format!(
                "encoder must map {} -> {}, maps {} -> {}",
                self.patch_dim(),
                self.latent_d,
                self.encoder.in_dim(),
                self.encoder.out_dim()
            )));
        }
        if self.decoder.in_dim() != self.latent_d || self.decoder.out_dim() != self.patch_dim() {
            return Err(Error::invalid(format!(
                "decoder must map {} -> {}, maps {} -> {}",
                self.latent_d,
                self.patch_dim(),
                self.decoder.in_dim(),
                self.decoder.out_dim()
            )));
        }
        Ok(())
    }
}

/// Which quantizer sits in the bottleneck. Plain VQ is `Depthwise` with a
/// single slice.
#[derive(Debug, Clone, PartialEq)]
pub enum BottleneckQuantizer {
    Depthwise(CodebookBank),
    Spatial {
        codebooks: Vec<Codebook>,
        partition: SpatialPartition,
    },
}

impl BottleneckQuantizer {
    pub fn quantize(&self, z: &LatentGrid) -> Result<DepthwiseResult> {
        match self {
            BottleneckQuantizer::Depthwise(bank) => dvq_quantize(z, bank),
            BottleneckQuantizer::Spatial { codebooks, partition } => {
                svq_quantize(z, codebooks, partition)
            }
        }
    }

    pub fn codebooks(&self) -> &[Codebook] {
        match self {
            BottleneckQuantizer::Depthwise(bank) => bank.codebooks(),
            BottleneckQuantizer::Spatial { codebooks, .. } => codebooks,
        }
    }

    pub fn codebooks_mut(&mut self) -> &mut [Codebook] {
        match self {
            BottleneckQuantizer::Depthwise(bank) => bank.codebooks_mut(),
            BottleneckQuantizer::Spatial { codebooks, .. } => codebooks,
        }
    }

    pub fn n_codebooks(&self) -> usize {
        self.codebooks().len()
    }

    pub fn k(&self) -> usize {
        self.codebooks()[0].k()
    }
}

/// Everything that trains: model parameters, quantizer, loss weight, and
/// optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct BottleneckState {
    pub params: EncoderDecoderParams,
    pub quantizer: BottleneckQuantizer,
    pub beta: f64,
    pub opt: OptimizerState,
    pub step: u64,
}

impl BottleneckState {
    /// Optimizer block sizes in registration order: encoder `w, b` per
    /// layer, decoder `w, b` per layer, then one block per codebook.
    pub fn block_sizes(params: &EncoderDecoderParams, quantizer: &BottleneckQuantizer) -> Vec<usize> {
        let mut sizes = Vec::new();
        for l in &params.encoder.layers {
            sizes.push(l.w.len());
            sizes.push(l.b.len());
        }
        for l in &params.decoder.layers {
            sizes.push(l.w.len());
            sizes.push(l.b.len());
        }
        for cb in quantizer.codebooks() {
            sizes.push(cb.k() * cb.d());
        }
        sizes
    }
}

fn extract_patch(x: &[f64], img: &ImageShape, patch: usize, gy: usize, gx: usize, out: &mut Vec<f64>) {
    out.clear();
    for py in 0..patch {
        let y = gy * patch + py;
        for px in 0..patch {
            let xx = gx * patch + px;
            let base = (y * img.w + xx) * img.c;
            out.extend_from_slice(&x[base..base + img.c]);
        }
    }
}

fn scatter_patch(out: &mut [f64], img: &ImageShape, patch: usize, gy: usize, gx: usize, vals: &[f64]) {
    let mut i = 0;
    for py in 0..patch {
        let y = gy * patch + py;
        for px in 0..patch {
            let xx = gx * patch + px;
            let base = (y * img.w + xx) * img.c;
            out[base..base + img.c].copy_from_slice(&vals[i..i + img.c]);
            i += img.c;
        }
    }
}

fn encode_cached(x: &[f64], p: &EncoderDecoderParams) -> Result<(LatentGrid, Vec<MlpCache>)> {
    if x.len() != p.image.num_pixels() {
        return Err(Error::DimensionMismatch {
            context: "encode",
            expected: p.image.num_pixels(),
            found: x.len(),
        });
    }
    let (gw, gh) = (p.grid_w(), p.grid_h());
    let mut z = LatentGrid::zeros(gw, gh, p.latent_d);
    let mut caches = Vec::with_capacity(gw * gh);
    let mut patch = Vec::with_capacity(p.patch_dim());
    for gy in 0..gh {
        for gx in 0..gw {
            extract_patch(x, &p.image, p.patch, gy, gx, &mut patch);
            let cache = p.encoder.forward_cached(&patch)?;
            z.position_mut(gy * gw + gx).copy_from_slice(cache.output());
            caches.push(cache);
        }
    }
    Ok((z, caches))
}

/// Encode one image into its latent grid (patch-major: one latent position
/// per `patch x patch` pixel block).
pub fn encode(x: &[f64], p: &EncoderDecoderParams) -> Result<LatentGrid> {
    Ok(encode_cached(x, p)?.0)
}

fn decode_cached(z: &LatentGrid, p: &EncoderDecoderParams) -> Result<(Vec<f64>, Vec<MlpCache>)> {
    if z.depth() != p.latent_d || z.w() != p.grid_w() || z.h() != p.grid_h() {
        return Err(Error::invalid(format!(
            "decoder expects a {}x{}x{} grid, got {}x{}x{}",
            p.grid_w(),
            p.grid_h(),
            p.latent_d,
            z.w(),
            z.h(),
            z.depth()
        )));
    }
    let (gw, gh) = (p.grid_w(), p.grid_h());
    let mut x_hat = vec![0.0; p.image.num_pixels()];
    let mut caches = Vec::with_capacity(gw * gh);
    for gy in 0..gh {
        for gx in 0..gw {
            let cache = p.decoder.forward_cached(z.position(gy * gw + gx))?;
            scatter_patch(&mut x_hat, &p.image, p.patch, gy, gx, cache.output());
            caches.push(cache);
        }
    }
    Ok((x_hat, caches))
}

/// Decode a latent grid back to a flat image.
pub fn decode(z: &LatentGrid, p: &EncoderDecoderParams) -> Result<Vec<f64>> {
    Ok(decode_cached(z, p)?.0)
}

/// Forward value of the straight-through estimator: exactly `z_q`, bit for
/// bit. The textbook formulation `z_e + (z_q - z_e)` would reintroduce
/// floating-point rounding, so this is a shape-checked copy; the backward
/// convention (the gradient at `z_q` is copied onto `z_e` unchanged) lives
/// in [`backward_and_step`] / [`per_term_gradients`].
pub fn straight_through(z_e: &LatentGrid, z_q: &LatentGrid) -> Result<LatentGrid> {
    if z_e.w() != z_q.w() || z_e.h() != z_q.h() || z_e.depth() != z_q.depth() {
        return Err(Error::invalid(format!(
            "straight_through shapes differ: {}x{}x{} vs {}x{}x{}",
            z_e.w(),
            z_e.h(),
            z_e.depth(),
            z_q.w(),
            z_q.h(),
            z_q.depth()
        )));
    }
    Ok(z_q.clone())
}

/// Mean squared error over pixels.
pub fn reconstruction_loss(x: &[f64], x_hat: &[f64]) -> Result<f64> {
    if x.len() != x_hat.len() {
        return Err(Error::DimensionMismatch {
            context: "reconstruction_loss",
            expected: x.len(),
            found: x_hat.len(),
        });
    }
    if x.is_empty() {
        return Err(Error::EmptyInput("reconstruction_loss needs pixels"));
    }
    let mut acc = 0.0;
    for (a, b) in x.iter().zip(x_hat) {
        let d = a - b;
        acc += d * d;
    }
    Ok(acc / x.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub reconstruction: f64,
    /// Mean squared distance between `z_e` and `z_q`; gradient routed to
    /// the encoder only, weighted by `beta` in `total`.
    pub commitment: f64,
    /// The same number as `commitment`; gradient routed to codebooks only.
    pub vq: f64,
    pub beta: f64,
    pub total: f64,
}

/// Gradients for every trainable tensor in the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub encoder: MlpGrads,
    pub decoder: MlpGrads,
    /// One `k x d_i` matrix per codebook, in codebook order.
    pub codebooks: Vec<Matrix>,
}

impl Gradients {
    pub fn zeros_like(state: &BottleneckState) -> Self {
        Gradients {
            encoder: MlpGrads::zeros_like(&state.params.encoder),
            decoder: MlpGrads::zeros_like(&state.params.decoder),
            codebooks: state
                .quantizer
                .codebooks()
                .iter()
                .map(|cb| Matrix::zeros(cb.k(), cb.d()))
                .collect(),
        }
    }
}

/// The three loss terms' gradients, kept separate so the routing contract
/// is testable. Each is the gradient of the *raw* term; the training step
/// combines them as `reconstruction + vq + beta * commitment`.
#[derive(Debug, Clone)]
pub struct TermGradients {
    pub reconstruction: Gradients,
    pub commitment: Gradients,
    pub vq: Gradients,
}

/// Per-sample forward pass products needed by the backward pass.
struct SampleForward {
    z_e: LatentGrid,
    qr: DepthwiseResult,
    enc_caches: Vec<MlpCache>,
    dec_caches: Vec<MlpCache>,
    x_hat: Vec<f64>,
}

fn forward_sample(x: &[f64], state: &BottleneckState) -> Result<SampleForward> {
    let (z_e, enc_caches) = encode_cached(x, &state.params)?;
    let qr = state.quantizer.quantize(&z_e)?;
    let decoder_input = straight_through(&z_e, &qr.z_q)?;
    let (x_hat, dec_caches) = decode_cached(&decoder_input, &state.params)?;
    Ok(SampleForward {
        z_e,
        qr,
        enc_caches,
        dec_caches,
        x_hat,
    })
}

/// Where each latent position's code came from: `(codebook, offset, len)`
/// per (position, sub-index). For depthwise quantizers sub-index `j` covers
/// feature slice `j`; for spatial ones there is a single sub-index and the
/// codebook depends on the position's cell.
enum AssignmentLayout {
    Depthwise { offsets: Vec<usize>, sizes: Vec<usize> },
    Spatial { cell_of: Vec<usize> },
}

impl AssignmentLayout {
    fn of(q: &BottleneckQuantizer) -> AssignmentLayout {
        match q {
            BottleneckQuantizer::Depthwise(bank) => AssignmentLayout::Depthwise {
                offsets: (0..bank.len()).map(|i| bank.split().offset(i)).collect(),
                sizes: (0..bank.len()).map(|i| bank.split().size(i)).collect(),
            },
            BottleneckQuantizer::Spatial { partition, .. } => AssignmentLayout::Spatial {
                cell_of: partition.cell_of_positions(),
            },
        }
    }
}

/// Frozen-assignment codebook statistics: per codebook, per code row, the
/// selection count and the sum of assigned `z_e` (sub)vectors. The final
/// vq gradient row is `(2 / (B * P)) * (count * e - sum)`.
struct CodebookStats {
    counts: Vec<Vec<u64>>,
    sums: Vec<Vec<f64>>,
}

impl CodebookStats {
    fn zeros(codebooks: &[Codebook]) -> Self {
        CodebookStats {
            counts: codebooks.iter().map(|cb| vec![0u64; cb.k()]).collect(),
            sums: codebooks.iter().map(|cb| vec![0.0; cb.k() * cb.d()]).collect(),
        }
    }

    fn add_assignment(&mut self, codebook: usize, row: usize, values: &[f64]) {
        self.counts[codebook][row] += 1;
        let d = values.len();
        let acc = &mut self.sums[codebook][row * d..(row + 1) * d];
        for (a, v) in acc.iter_mut().zip(values) {
            *a += v;
        }
    }

    fn fold(&mut self, other: &CodebookStats) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    fn into_gradients(self, codebooks: &[Codebook], scale: f64) -> Result<Vec<Matrix>> {
        let mut grads = Vec::with_capacity(codebooks.len());
        for (ci, cb) in codebooks.iter().enumerate() {
            let d = cb.d();
            let mut g = vec![0.0; cb.k() * d];
            for row in 0..cb.k() {
                let c = self.counts[ci][row];
                if c == 0 {
                    continue; // unselected rows stay exactly zero
                }
                let e = cb.centroid(row);
                let s = &self.sums[ci][row * d..(row + 1) * d];
                let out = &mut g[row * d..(row + 1) * d];
                for j in 0..d {
                    out[j] = scale * (c as f64 * e[j] - s[j]);
                }
            }
            grads.push(Matrix::from_vec(cb.k(), d, g)?);
        }
        Ok(grads)
    }
}

/// One sample's contribution to the batch gradients, all scale factors
/// already applied (terms are batch means, so per-sample contributions
/// carry `1 / (B * ...)`).
struct SampleGrads {
    enc: MlpGrads,
    dec: MlpGrads,
    stats: CodebookStats,
    recon_sq_sum: f64,
    dist_sum: f64,
    indices: Vec<Vec<usize>>,
    nll_nats: f64,
}

/// Per-sample backward pass. `recon_scale` = `1 / (B * num_pixels)`,
/// `pos_scale` = `1 / (B * positions per sample)`.
#[allow(clippy::too_many_arguments)]
fn backward_sample(
    x: &[f64],
    state: &BottleneckState,
    layout: &AssignmentLayout,
    recon_scale: f64,
    pos_scale: f64,
    diagnostics: bool,
) -> Result<SampleGrads> {
    let fwd = forward_sample(x, state)?;
    let p = &state.params;
    let n_pos = p.n_positions();
    let beta = state.beta;

    let mut enc = MlpGrads::zeros_like(&p.encoder);
    let mut dec = MlpGrads::zeros_like(&p.decoder);
    let mut stats = CodebookStats::zeros(state.quantizer.codebooks());

    let mut recon_sq_sum = 0.0;
    for (a, b) in x.iter().zip(&fwd.x_hat) {
        let d = a - b;
        recon_sq_sum += d * d;
    }
    let dist_sum: f64 = fwd.qr.partial_losses.iter().sum::<f64>() * n_pos as f64;

    let mut patch_x = Vec::with_capacity(p.patch_dim());
    for pos in 0..n_pos {
        let (gy, gx) = (pos / p.grid_w(), pos % p.grid_w());
        // d reconstruction / d x_hat over this position's patch.
        extract_patch(x, &p.image, p.patch, gy, gx, &mut patch_x);
        let patch_hat = fwd.dec_caches[pos].output();
        let g_patch: Vec<f64> = patch_hat
            .iter()
            .zip(&patch_x)
            .map(|(hat, x)| 2.0 * recon_scale * (hat - x))
            .collect();

        // Decoder backward; the input gradient lands on z_q...
        let g_zq = p.decoder.backward(&fwd.dec_caches[pos], &g_patch, &mut dec);

        // ...and the straight-through estimator copies it onto z_e,
        // where the commitment pull (beta * 2 * (z_e - z_q)) joins it.
        let z_e_pos = fwd.z_e.position(pos);
        let z_q_pos = fwd.qr.z_q.position(pos);
        let g_ze: Vec<f64> = g_zq
            .iter()
            .zip(z_e_pos.iter().zip(z_q_pos))
            .map(|(g, (e, q))| g + beta * 2.0 * pos_scale * (e - q))
            .collect();
        p.encoder.backward(&fwd.enc_caches[pos], &g_ze, &mut enc);

        // vq term: frozen-assignment counts and sums per codebook.
        match layout {
            AssignmentLayout::Depthwise { offsets, sizes } => {
                for (j, (&off, &len)) in offsets.iter().zip(sizes).enumerate() {
                    let row = fwd.qr.indices[pos * fwd.qr.index_depth + j];
                    stats.add_assignment(j, row, &z_e_pos[off..off + len]);
                }
            }
            AssignmentLayout::Spatial { cell_of } => {
                stats.add_assignment(cell_of[pos], fwd.qr.indices[pos], z_e_pos);
            }
        }
    }

    let (indices, nll_nats) = if diagnostics {
        (
            collect_indices_per_codebook(&fwd.qr, layout, state.quantizer.n_codebooks()),
            nll_discretized_gaussian(x, &fwd.x_hat, BITS_SIGMA)?,
        )
    } else {
        (Vec::new(), 0.0)
    };

    Ok(SampleGrads {
        enc,
        dec,
        stats,
        recon_sq_sum,
        dist_sum,
        indices,
        nll_nats,
    })
}

fn collect_indices_per_codebook(
    qr: &DepthwiseResult,
    layout: &AssignmentLayout,
    n_codebooks: usize,
) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); n_codebooks];
    let n_pos = qr.indices.len() / qr.index_depth.max(1);
    match layout {
        AssignmentLayout::Depthwise { .. } => {
            for pos in 0..n_pos {
                for (j, codes) in out.iter_mut().enumerate() {
                    codes.push(qr.indices[pos * qr.index_depth + j]);
                }
            }
        }
        AssignmentLayout::Spatial { cell_of } => {
            for pos in 0..n_pos {
                out[cell_of[pos]].push(qr.indices[pos]);
            }
        }
    }
    out
}

fn validate_batch_images(batch: &Matrix, state: &BottleneckState) -> Result<()> {
    if batch.rows() == 0 {
        return Err(Error::EmptyInput("autoencoder step needs at least one image"));
    }
    if batch.cols() != state.params.image.num_pixels() {
        return Err(Error::DimensionMismatch {
            context: "autoencoder batch",
            expected: state.params.image.num_pixels(),
            found: batch.cols(),
        });
    }
    Ok(())
}

/// Evaluation products of a full forward pass on one image.
#[derive(Debug, Clone)]
pub struct ForwardImage {
    pub x_hat: Vec<f64>,
    /// Mean squared distance between `z_e` and `z_q` over this image's
    /// latent positions.
    pub quantization: f64,
}

/// Encode, quantize, straight-through, decode one image.
pub fn forward_image(x: &[f64], state: &BottleneckState) -> Result<ForwardImage> {
    let fwd = forward_sample(x, state)?;
    Ok(ForwardImage {
        x_hat: fwd.x_hat,
        quantization: fwd.qr.total_loss(),
    })
}

/// Forward-only loss evaluation on a batch of images.
pub fn total_loss(batch: &Matrix, state: &BottleneckState) -> Result<LossBreakdown> {
    validate_batch_images(batch, state)?;
    let b = batch.rows() as f64;
    let n_pix = state.params.image.num_pixels() as f64;
    let mut recon_sq = 0.0;
    let mut dist = 0.0;
    for row in batch.iter_rows() {
        let fwd = forward_sample(row, state)?;
        for (a, bb) in row.iter().zip(&fwd.x_hat) {
            let d = a - bb;
            recon_sq += d * d;
        }
        dist += fwd.qr.total_loss();
    }
    let reconstruction = recon_sq / (b * n_pix);
    let d_mean = dist / b;
    Ok(LossBreakdown {
        reconstruction,
        commitment: d_mean,
        vq: d_mean,
        beta: state.beta,
        total: reconstruction + d_mean + state.beta * d_mean,
    })
}

/// The three loss terms' gradients, computed separately on fresh
/// assignments (no parameter update). Structural zeros are exact:
/// reconstruction never produces codebook gradients, commitment only
/// encoder gradients, vq only codebook gradients.
pub fn per_term_gradients(state: &BottleneckState, batch: &Matrix) -> Result<TermGradients> {
    validate_batch_images(batch, state)?;
    let p = &state.params;
    let b = batch.rows() as f64;
    let recon_scale = 1.0 / (b * p.image.num_pixels() as f64);
    let pos_scale = 1.0 / (b * p.n_positions() as f64);
    let layout = AssignmentLayout::of(&state.quantizer);

    let mut recon = Gradients::zeros_like(state);
    let mut commit = Gradients::zeros_like(state);
    let mut vq = Gradients::zeros_like(state);
    let mut stats = CodebookStats::zeros(state.quantizer.codebooks());

    let mut patch_x = Vec::with_capacity(p.patch_dim());
    for row in batch.iter_rows() {
        let fwd = forward_sample(row, state)?;
        for pos in 0..p.n_positions() {
            let (gy, gx) = (pos / p.grid_w(), pos % p.grid_w());
            extract_patch(row, &p.image, p.patch, gy, gx, &mut patch_x);
            let patch_hat = fwd.dec_caches[pos].output();
            let g_patch: Vec<f64> = patch_hat
                .iter()
                .zip(&patch_x)
                .map(|(hat, x)| 2.0 * recon_scale * (hat - x))
                .collect();

            // Reconstruction: decoder params + straight-through to encoder.
            let g_zq = p.decoder.backward(&fwd.dec_caches[pos], &g_patch, &mut recon.decoder);
            p.encoder.backward(&fwd.enc_caches[pos], &g_zq, &mut recon.encoder);

            // Commitment: encoder only, z_q constant.
            let z_e_pos = fwd.z_e.position(pos);
            let z_q_pos = fwd.qr.z_q.position(pos);
            let g_commit: Vec<f64> = z_e_pos
                .iter()
                .zip(z_q_pos)
                .map(|(e, q)| 2.0 * pos_scale * (e - q))
                .collect();
            p.encoder.backward(&fwd.enc_caches[pos], &g_commit, &mut commit.encoder);

            // vq: codebooks only, z_e constant, assignments frozen.
            match &layout {
                AssignmentLayout::Depthwise { offsets, sizes } => {
                    for (j, (&off, &len)) in offsets.iter().zip(sizes).enumerate() {
                        let row_idx = fwd.qr.indices[pos * fwd.qr.index_depth + j];
                        stats.add_assignment(j, row_idx, &z_e_pos[off..off + len]);
                    }
                }
                AssignmentLayout::Spatial { cell_of } => {
                    stats.add_assignment(cell_of[pos], fwd.qr.indices[pos], z_e_pos);
                }
            }
        }
    }
    vq.codebooks = stats.into_gradients(state.quantizer.codebooks(), 2.0 * pos_scale)?;

    Ok(TermGradients {
        reconstruction: recon,
        commitment: commit,
        vq,
    })
}

/// Options for one optimization step.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepOptions {
    /// Compute per-sample gradients on the rayon pool (the fold stays a
    /// fixed-order sequential reduction, so results are bit-identical to
    /// the sequential path). Ignored without the `parallel` feature.
    pub data_parallel: bool,
    /// Also collect code usage and the discretized NLL for metrics.
    pub diagnostics: bool,
}

/// Extra observables from a step, for metrics records.
#[derive(Debug, Clone)]
pub struct StepDiagnostics {
    /// Code selections per codebook over the whole batch.
    pub indices_per_codebook: Vec<Vec<usize>>,
    /// Total discretized-Gaussian NLL of the batch reconstructions, nats.
    pub nll_nats: f64,
    /// Number of pixel dimensions the NLL covers.
    pub n_dims: usize,
}

#[derive(Debug, Clone)]
pub struct StepReport {
    pub breakdown: LossBreakdown,
    pub diagnostics: Option<StepDiagnostics>,
}

/// One training step: forward, three-term backward with straight-through
/// routing, optimizer update. Gradient reduction over samples is a
/// sequential fold in batch order regardless of `data_parallel`, so the
/// parallel and sequential paths produce bit-identical parameters.
pub fn backward_and_step(
    state: &mut BottleneckState,
    batch: &Matrix,
    lr: f64,
    opts: &StepOptions,
) -> Result<StepReport> {
    validate_batch_images(batch, state)?;
    if !(lr.is_finite() && lr > 0.0) {
        return Err(Error::invalid(format!("learning rate must be finite and > 0, got {lr}")));
    }
    let p = &state.params;
    let b = batch.rows() as f64;
    let n_pix = p.image.num_pixels() as f64;
    let n_pos = p.n_positions() as f64;
    let recon_scale = 1.0 / (b * n_pix);
    let pos_scale = 1.0 / (b * n_pos);
    let layout = AssignmentLayout::of(&state.quantizer);

    let immutable = &*state;
    #[cfg(feature = "parallel")]
    let per_sample: Vec<SampleGrads> = if opts.data_parallel {
        batch
            .data()
            .par_chunks_exact(batch.cols())
            .map(|row| backward_sample(row, immutable, &layout, recon_scale, pos_scale, opts.diagnostics))
            .collect::<Result<_>>()?
    } else {
        batch
            .iter_rows()
            .map(|row| backward_sample(row, immutable, &layout, recon_scale, pos_scale, opts.diagnostics))
            .collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let per_sample: Vec<SampleGrads> = batch
        .iter_rows()
        .map(|row| backward_sample(row, immutable, &layout, recon_scale, pos_scale, opts.diagnostics))
        .collect::<Result<_>>()?;

    // Fixed-order fold in batch order.
    let mut enc = MlpGrads::zeros_like(&state.params.encoder);
    let mut dec = MlpGrads::zeros_like(&state.params.decoder);
    let mut stats = CodebookStats::zeros(state.quantizer.codebooks());
    let mut recon_sq = 0.0;
    let mut dist = 0.0;
    let mut nll = 0.0;
    let mut indices: Vec<Vec<usize>> = vec![Vec::new(); state.quantizer.n_codebooks()];
    for s in &per_sample {
        enc.add_assign(&s.enc);
        dec.add_assign(&s.dec);
        stats.fold(&s.stats);
        recon_sq += s.recon_sq_sum;
        dist += s.dist_sum;
        nll += s.nll_nats;
        for (dst, src) in indices.iter_mut().zip(&s.indices) {
            dst.extend_from_slice(src);
        }
    }
    let cb_grads = stats.into_gradients(state.quantizer.codebooks(), 2.0 * pos_scale)?;

    let reconstruction = recon_sq * recon_scale;
    // dist is a raw sum of squared distances over all B * P positions.
    let d_mean = dist * pos_scale;
    let breakdown = LossBreakdown {
        reconstruction,
        commitment: d_mean,
        vq: d_mean,
        beta: state.beta,
        total: reconstruction + d_mean + state.beta * d_mean,
    };
    if !breakdown.total.is_finite() {
        return Err(Error::Diverged {
            step: state.step,
            context: "loss is not finite".to_string(),
        });
    }
    if !(enc.is_finite() && dec.is_finite()) || cb_grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::Diverged {
            step: state.step,
            context: "gradient is not finite".to_string(),
        });
    }

    // Optimizer blocks in registration order (see block_sizes).
    state.opt.begin_step();
    let mut block = 0;
    for (li, layer) in state.params.encoder.layers.iter_mut().enumerate() {
        state.opt.update_block(block, &mut layer.w, &enc.dw[li], lr)?;
        block += 1;
        state.opt.update_block(block, &mut layer.b, &enc.db[li], lr)?;
        block += 1;
    }
    for (li, layer) in state.params.decoder.layers.iter_mut().enumerate() {
        state.opt.update_block(block, &mut layer.w, &dec.dw[li], lr)?;
        block += 1;
        state.opt.update_block(block, &mut layer.b, &dec.db[li], lr)?;
        block += 1;
    }
    for (ci, cb) in state.quantizer.codebooks_mut().iter_mut().enumerate() {
        state.opt.update_block(block, cb.centroids_mut(), cb_grads[ci].data(), lr)?;
        block += 1;
    }
    state.step += 1;

    if !(state.params.encoder.is_finite() && state.params.decoder.is_finite()) {
        return Err(Error::Diverged {
            step: state.step,
            context: "model parameters are not finite after update".to_string(),
        });
    }
    for cb in state.quantizer.codebooks() {
        if cb.validate_finite().is_err() {
            return Err(Error::Diverged {
                step: state.step,
                context: "codebook is not finite after update".to_string(),
            });
        }
    }

    let diagnostics = if opts.diagnostics {
        Some(StepDiagnostics {
            indices_per_codebook: indices,
            nll_nats: nll,
            n_dims: batch.rows() * state.params.image.num_pixels(),
        })
    } else {
        None
    };

    Ok(StepReport {
        breakdown,
        diagnostics,
    })
}

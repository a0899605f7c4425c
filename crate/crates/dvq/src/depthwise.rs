//! Depthwise and spatially-split quantization.
//!
//! Depthwise VQ (DVQ) cuts the feature axis into `L` contiguous disjoint
//! slices and gives each slice its own codebook, so the quantizer can emit
//! `K^L` distinct outputs while the joint multi-codebook baseline (every
//! codebook sees the full vector, outputs concatenated) collapses to at most
//! `K` distinct values per codebook. The spatial split (SVQ) keeps vectors
//! whole but partitions grid *positions* into cells, one full-depth codebook
//! per cell.
//!
//! Loss convention: every partial loss is normalized by the *global*
//! position count, so partials always sum to the full-depth mean squared
//! quantization error and a single-slice DVQ, a single-cell SVQ, and plain
//! VQ all report the same objective on the same data.

use crate::codebook::{quantize_batch, quantize_batch_seq, Codebook, QuantizationResult};
use crate::error::{Error, Result};
use crate::grid::LatentGrid;
use crate::matrix::Matrix;

/// How a depth-`D` feature axis is cut into contiguous slices.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSplitSpec {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
}

impl FeatureSplitSpec {
    /// Explicit slice sizes; each must be nonzero.
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::invalid("feature split needs at least one slice"));
        }
        if sizes.contains(&0) {
            return Err(Error::invalid("feature split slices must be nonzero"));
        }
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut off = 0;
        for &s in &sizes {
            offsets.push(off);
            off += s;
        }
        Ok(FeatureSplitSpec { sizes, offsets })
    }

    /// `l` equal slices of a depth-`d` axis; errors unless `l` divides `d`.
    pub fn equal(d: usize, l: usize) -> Result<Self> {
        if l == 0 || d == 0 {
            return Err(Error::invalid(format!(
                "equal split needs d >= 1 and l >= 1, got d={d}, l={l}"
            )));
        }
        if !d.is_multiple_of(l) {
            return Err(Error::invalid(format!(
                "depth {d} is not divisible into {l} equal slices"
            )));
        }
        FeatureSplitSpec::new(vec![d / l; l])
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    pub fn depth(&self) -> usize {
        self.sizes.iter().sum()
    }

    pub fn size(&self, i: usize) -> usize {
        self.sizes[i]
    }

    pub fn offset(&self, i: usize) -> usize {
        self.offsets[i]
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }
}

/// One codebook per feature slice. All codebooks share a single `K`; slice
/// dimensions must match the split.
#[derive(Debug, Clone, PartialEq)]
pub struct CodebookBank {
    codebooks: Vec<Codebook>,
    split: FeatureSplitSpec,
}

impl CodebookBank {
    pub fn new(codebooks: Vec<Codebook>, split: FeatureSplitSpec) -> Result<Self> {
        if codebooks.len() != split.len() {
            return Err(Error::invalid(format!(
                "bank has {} codebooks but the split has {} slices",
                codebooks.len(),
                split.len()
            )));
        }
        let k = codebooks[0].k();
        for (i, cb) in codebooks.iter().enumerate() {
            if cb.d() != split.size(i) {
                return Err(Error::DimensionMismatch {
                    context: "CodebookBank slice dimension",
                    expected: split.size(i),
                    found: cb.d(),
                });
            }
            if cb.k() != k {
                return Err(Error::invalid(format!(
                    "all codebooks in a bank share one K; codebook 0 has {k}, codebook {i} has {}",
                    cb.k()
                )));
            }
        }
        Ok(CodebookBank { codebooks, split })
    }

    pub fn k(&self) -> usize {
        self.codebooks[0].k()
    }

    pub fn len(&self) -> usize {
        self.codebooks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codebooks.is_empty()
    }

    pub fn depth(&self) -> usize {
        self.split.depth()
    }

    pub fn codebook(&self, i: usize) -> &Codebook {
        &self.codebooks[i]
    }

    pub fn codebooks(&self) -> &[Codebook] {
        &self.codebooks
    }

    pub fn codebooks_mut(&mut self) -> &mut [Codebook] {
        &mut self.codebooks
    }

    pub fn split(&self) -> &FeatureSplitSpec {
        &self.split
    }
}

/// Cut a grid into per-slice grids. Inverse of [`concat_features`].
pub fn split_features(z: &LatentGrid, spec: &FeatureSplitSpec) -> Result<Vec<LatentGrid>> {
    if spec.depth() != z.depth() {
        return Err(Error::DimensionMismatch {
            context: "split_features",
            expected: z.depth(),
            found: spec.depth(),
        });
    }
    (0..spec.len())
        .map(|i| z.slice_channels(spec.offset(i), spec.size(i)))
        .collect()
}

/// Stitch per-slice grids back together along the feature axis.
pub fn concat_features(slices: &[LatentGrid]) -> Result<LatentGrid> {
    let first = slices
        .first()
        .ok_or(Error::EmptyInput("concat_features needs at least one slice"))?;
    let (w, h) = (first.w(), first.h());
    let depth: usize = slices.iter().map(|s| s.depth()).sum();
    let mut values = Vec::with_capacity(w * h * depth);
    for p in 0..w * h {
        for s in slices {
            if s.w() != w || s.h() != h {
                return Err(Error::invalid(
                    "concat_features slices must share spatial shape".to_string(),
                ));
            }
            values.extend_from_slice(s.position(p));
        }
    }
    LatentGrid::new(w, h, depth, values)
}

/// Output of a multi-codebook quantizer.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthwiseResult {
    /// Selected code indices, position-major: `indices[p * index_depth + j]`
    /// is position `p`'s choice in codebook `j` (DVQ/joint) or its choice in
    /// its cell's codebook (SVQ, where `index_depth == 1`).
    pub indices: Vec<usize>,
    pub index_depth: usize,
    /// Quantized grid. Same depth as the input for DVQ and SVQ; `L * D` for
    /// the joint baseline.
    pub z_q: LatentGrid,
    /// Per-codebook losses, each normalized by the global position count so
    /// they sum to the full-depth mean squared quantization error.
    pub partial_losses: Vec<f64>,
}

impl DepthwiseResult {
    pub fn total_loss(&self) -> f64 {
        self.partial_losses.iter().sum()
    }
}

fn dvq_quantize_impl(
    z: &LatentGrid,
    bank: &CodebookBank,
    quantize: fn(&Matrix, &Codebook) -> Result<QuantizationResult>,
) -> Result<DepthwiseResult> {
    if bank.depth() != z.depth() {
        return Err(Error::DimensionMismatch {
            context: "dvq_quantize",
            expected: z.depth(),
            found: bank.depth(),
        });
    }
    let n = z.n_positions();
    let l = bank.len();
    let slices = split_features(z, bank.split())?;

    let mut per_slice: Vec<QuantizationResult> = Vec::with_capacity(l);
    for (slice, cb) in slices.iter().zip(bank.codebooks()) {
        per_slice.push(quantize(&slice.to_matrix(), cb)?);
    }

    let mut indices = Vec::with_capacity(n * l);
    let mut values = Vec::with_capacity(n * z.depth());
    for p in 0..n {
        for q in &per_slice {
            indices.push(q.indices[p]);
            values.extend_from_slice(q.codes.row(p));
        }
    }
    let partial_losses: Vec<f64> = per_slice
        .iter()
        .map(|q| q.sq_distances.iter().sum::<f64>() / n.max(1) as f64)
        .collect();

    Ok(DepthwiseResult {
        indices,
        index_depth: l,
        z_q: LatentGrid::new(z.w(), z.h(), z.depth(), values)?,
        partial_losses,
    })
}

/// Quantize each feature slice with its own codebook. With the `parallel`
/// feature the per-position scans inside each slice run on the rayon pool;
/// results are bit-identical to [`dvq_quantize_seq`].
pub fn dvq_quantize(z: &LatentGrid, bank: &CodebookBank) -> Result<DepthwiseResult> {
    dvq_quantize_impl(z, bank, quantize_batch)
}

/// Sequential reference implementation of [`dvq_quantize`].
pub fn dvq_quantize_seq(z: &LatentGrid, bank: &CodebookBank) -> Result<DepthwiseResult> {
    dvq_quantize_impl(z, bank, quantize_batch_seq)
}

/// Total and per-codebook quantization losses without keeping the
/// quantized grid around.
pub fn dvq_partial_losses(z: &LatentGrid, bank: &CodebookBank) -> Result<(f64, Vec<f64>)> {
    if z.n_positions() == 0 {
        return Err(Error::EmptyInput("dvq_partial_losses needs at least one position"));
    }
    let r = dvq_quantize(z, bank)?;
    Ok((r.total_loss(), r.partial_losses))
}

/// A partition of grid positions into disjoint covering cells.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialPartition {
    w: usize,
    h: usize,
    cells: Vec<Vec<usize>>,
}

impl SpatialPartition {
    /// Validates that the cells are nonempty and cover every position of a
    /// `w x h` grid exactly once.
    pub fn new(w: usize, h: usize, cells: Vec<Vec<usize>>) -> Result<Self> {
        let n = w * h;
        if cells.is_empty() {
            return Err(Error::invalid("partition needs at least one cell"));
        }
        let mut seen = vec![false; n];
        let mut covered = 0usize;
        for (c, cell) in cells.iter().enumerate() {
            if cell.is_empty() {
                return Err(Error::invalid(format!("partition cell {c} is empty")));
            }
            for &p in cell {
                if p >= n {
                    return Err(Error::invalid(format!(
                        "partition cell {c} references position {p}, grid has {n}"
                    )));
                }
                if seen[p] {
                    return Err(Error::invalid(format!(
                        "position {p} appears in more than one cell"
                    )));
                }
                seen[p] = true;
                covered += 1;
            }
        }
        if covered != n {
            return Err(Error::invalid(format!(
                "partition covers {covered} of {n} positions"
            )));
        }
        Ok(SpatialPartition { w, h, cells })
    }

    /// `l` contiguous horizontal bands, as equal as possible (earlier bands
    /// take the remainder rows). The default spatial split.
    pub fn row_bands(w: usize, h: usize, l: usize) -> Result<Self> {
        if l == 0 || l > h {
            return Err(Error::invalid(format!(
                "cannot cut {h} rows into {l} bands"
            )));
        }
        let base = h / l;
        let rem = h % l;
        let mut cells = Vec::with_capacity(l);
        let mut y = 0;
        for band in 0..l {
            let rows = base + usize::from(band < rem);
            let mut cell = Vec::with_capacity(rows * w);
            for yy in y..y + rows {
                for x in 0..w {
                    cell.push(yy * w + x);
                }
            }
            cells.push(cell);
            y += rows;
        }
        SpatialPartition::new(w, h, cells)
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn cell(&self, i: usize) -> &[usize] {
        &self.cells[i]
    }

    pub fn cells(&self) -> &[Vec<usize>] {
        &self.cells
    }

    /// Inverse map: `result[p]` is the cell containing position `p`.
    /// Well-defined because construction validated exact coverage.
    pub fn cell_of_positions(&self) -> Vec<usize> {
        let mut map = vec![0usize; self.w * self.h];
        for (c, cell) in self.cells.iter().enumerate() {
            for &p in cell {
                map[p] = c;
            }
        }
        map
    }
}

/// Quantize each spatial cell's positions with that cell's full-depth
/// codebook. `indices[p]` is the chosen row in the codebook of `p`'s cell.
pub fn svq_quantize(
    z: &LatentGrid,
    codebooks: &[Codebook],
    partition: &SpatialPartition,
) -> Result<DepthwiseResult> {
    if partition.w() != z.w() || partition.h() != z.h() {
        return Err(Error::invalid(format!(
            "partition is {}x{} but grid is {}x{}",
            partition.w(),
            partition.h(),
            z.w(),
            z.h()
        )));
    }
    if codebooks.len() != partition.n_cells() {
        return Err(Error::invalid(format!(
            "{} codebooks for {} cells",
            codebooks.len(),
            partition.n_cells()
        )));
    }
    for cb in codebooks {
        if cb.d() != z.depth() {
            return Err(Error::DimensionMismatch {
                context: "svq_quantize codebook depth",
                expected: z.depth(),
                found: cb.d(),
            });
        }
    }

    let n = z.n_positions();
    let mut indices = vec![0usize; n];
    let mut zq = LatentGrid::zeros(z.w(), z.h(), z.depth());
    let mut partial_losses = Vec::with_capacity(partition.n_cells());

    for (cell, cb) in (0..partition.n_cells()).map(|c| (partition.cell(c), &codebooks[c])) {
        let rows: Vec<f64> = cell.iter().flat_map(|&p| z.position(p).iter().copied()).collect();
        let batch = Matrix::from_vec(cell.len(), z.depth(), rows)?;
        let q = quantize_batch(&batch, cb)?;
        for (j, &p) in cell.iter().enumerate() {
            indices[p] = q.indices[j];
            zq.position_mut(p).copy_from_slice(q.codes.row(j));
        }
        // Global normalization: cell partials sum to the grid-wide mean.
        partial_losses.push(q.sq_distances.iter().sum::<f64>() / n as f64);
    }

    Ok(DepthwiseResult {
        indices,
        index_depth: 1,
        z_q: zq,
        partial_losses,
    })
}

/// Baseline where every codebook quantizes the *full* vector and the
/// selected centroids are concatenated. Output depth is `L * D`; with
/// identical codebooks this can never exceed `K` distinct outputs, which is
/// exactly the expressiveness gap DVQ closes.
pub fn joint_multi_codebook_quantize(
    z: &LatentGrid,
    codebooks: &[Codebook],
) -> Result<DepthwiseResult> {
    if codebooks.is_empty() {
        return Err(Error::EmptyInput("joint quantizer needs at least one codebook"));
    }
    for cb in codebooks {
        if cb.d() != z.depth() {
            return Err(Error::DimensionMismatch {
                context: "joint_multi_codebook_quantize",
                expected: z.depth(),
                found: cb.d(),
            });
        }
    }
    let n = z.n_positions();
    let l = codebooks.len();
    let m = z.to_matrix();
    let per_cb: Vec<QuantizationResult> = codebooks
        .iter()
        .map(|cb| quantize_batch(&m, cb))
        .collect::<Result<_>>()?;

    let mut indices = Vec::with_capacity(n * l);
    let mut values = Vec::with_capacity(n * l * z.depth());
    for p in 0..n {
        for q in &per_cb {
            indices.push(q.indices[p]);
            values.extend_from_slice(q.codes.row(p));
        }
    }
    let partial_losses: Vec<f64> = per_cb
        .iter()
        .map(|q| q.sq_distances.iter().sum::<f64>() / n.max(1) as f64)
        .collect();

    Ok(DepthwiseResult {
        indices,
        index_depth: l,
        z_q: LatentGrid::new(z.w(), z.h(), l * z.depth(), values)?,
        partial_losses,
    })
}

/// Which quantizer [`count_distinct_outcomes`] should drive.
#[derive(Debug, Clone, Copy)]
pub enum QuantizerSetup<'a> {
    Depthwise(&'a CodebookBank),
    Joint(&'a [Codebook]),
}

/// Number of distinct quantized outputs over `inputs` (one vector per row),
/// compared exactly by bit pattern. Upper bounds: `K^L` for depthwise,
/// `K` for joint with identical codebooks.
pub fn count_distinct_outcomes(setup: QuantizerSetup<'_>, inputs: &Matrix) -> Result<usize> {
    use std::collections::HashSet;
    let mut seen: HashSet<Vec<u64>> = HashSet::new();
    for row in inputs.iter_rows() {
        let g = LatentGrid::new(1, 1, inputs.cols(), row.to_vec())?;
        let out = match setup {
            QuantizerSetup::Depthwise(bank) => dvq_quantize(&g, bank)?.z_q,
            QuantizerSetup::Joint(cbs) => joint_multi_codebook_quantize(&g, cbs)?.z_q,
        };
        seen.insert(out.values().iter().map(|v| v.to_bits()).collect());
    }
    Ok(seen.len())
}

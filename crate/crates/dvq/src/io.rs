//! Binary serialization for codebooks, banks, image datasets, and
//! training checkpoints.
//!
//! All formats are little-endian, versioned behind a four-byte magic, and
//! round-trip exactly: floats are written as raw IEEE-754 bits, so a
//! reloaded model is `==` to the one saved. The full layouts are
//! documented in `docs/FORMATS.md`; the magics are:
//!
//! | magic  | contents                                             |
//! |--------|------------------------------------------------------|
//! | `DVQC` | one codebook (k, d, centroids)                       |
//! | `DVQB` | a codebook bank (header: l, k list, slice sizes; then l codebook records) |
//! | `DVQD` | an image dataset (shape, pixels, optional labels)    |
//! | `DVQK` | an autoencoder checkpoint (params, quantizer, optimizer, step) |
//!
//! Readers fail with [`Error::Format`] carrying the byte offset of the
//! first inconsistency; they validate through the same constructors the
//! rest of the crate uses, so a loaded value satisfies every invariant a
//! freshly built one does.

use crate::bottleneck::mlp::{Activation, Layer, Mlp};
use crate::bottleneck::model::{BottleneckQuantizer, BottleneckState, EncoderDecoderParams};
use crate::bottleneck::optim::{OptimizerKind, OptimizerState};
use crate::codebook::Codebook;
use crate::depthwise::{CodebookBank, FeatureSplitSpec, SpatialPartition};
use crate::error::{Error, Result};
use crate::image::{ImageDataset, ImageShape};
use crate::matrix::Matrix;
use std::io::{Read, Write};

pub const CODEBOOK_MAGIC: [u8; 4] = *b"DVQC";
pub const BANK_MAGIC: [u8; 4] = *b"DVQB";
pub const DATASET_MAGIC: [u8; 4] = *b"DVQD";
pub const CHECKPOINT_MAGIC: [u8; 4] = *b"DVQK";
pub const FORMAT_VERSION: u32 = 1;

// ---------------------------------------------------------------------
// Offset-tracking reader
// ---------------------------------------------------------------------

struct Reader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Reader<R> {
    fn new(inner: R) -> Self {
        Reader { inner, offset: 0 }
    }

    fn fail<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Format {
            offset: self.offset,
            message: message.into(),
        })
    }

    fn read_exact(&mut self, buf: &mut [u8]) -> Result<()> {
        match self.inner.read_exact(buf) {
            Ok(()) => {
                self.offset += buf.len() as u64;
                Ok(())
            }
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => self.fail(format!(
                "unexpected end of file ({} more bytes expected)",
                buf.len()
            )),
            Err(e) => Err(e.into()),
        }
    }

    fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.read_exact(&mut b)?;
        Ok(b[0])
    }

    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    fn f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.read_exact(&mut b)?;
        Ok(f64::from_bits(u64::from_le_bytes(b)))
    }

    /// A u64 that must fit in usize (length/count fields).
    fn len(&mut self, what: &str) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::Format {
            offset: self.offset - 8,
            message: format!("{what} of {v} does not fit in memory"),
        })
    }

    /// Read `n` floats, in bounded chunks so a corrupt length fails at
    /// end-of-file instead of exhausting memory.
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        const CHUNK: usize = 1 << 16;
        let mut out = Vec::with_capacity(n.min(CHUNK));
        let mut buf = vec![0u8; CHUNK.min(n.max(1)) * 8];
        let mut remaining = n;
        while remaining > 0 {
            let take = remaining.min(CHUNK);
            self.read_exact(&mut buf[..take * 8])?;
            out.extend(
                buf[..take * 8]
                    .chunks_exact(8)
                    .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().expect("8-byte chunk")))),
            );
            remaining -= take;
        }
        Ok(out)
    }

    fn magic(&mut self, expected: [u8; 4]) -> Result<()> {
        let mut m = [0u8; 4];
        self.read_exact(&mut m)?;
        if m != expected {
            self.offset -= 4;
            return self.fail(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&m),
                String::from_utf8_lossy(&expected)
            ));
        }
        Ok(())
    }

    fn version(&mut self) -> Result<()> {
        let v = self.u32()?;
        if v != FORMAT_VERSION {
            self.offset -= 4;
            return self.fail(format!("unsupported format version {v}, expected {FORMAT_VERSION}"));
        }
        Ok(())
    }
}

fn put_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_f64s<W: Write>(w: &mut W, vals: &[f64]) -> Result<()> {
    for v in vals {
        w.write_all(&v.to_bits().to_le_bytes())?;
    }
    Ok(())
}

// ---------------------------------------------------------------------
// Codebook (DVQC)
// ---------------------------------------------------------------------

fn write_codebook_body<W: Write>(cb: &Codebook, w: &mut W) -> Result<()> {
    w.write_all(&CODEBOOK_MAGIC)?;
    put_u32(w, FORMAT_VERSION)?;
    put_u64(w, cb.k() as u64)?;
    put_u64(w, cb.d() as u64)?;
    put_f64s(w, cb.centroids())
}

fn read_codebook_body<R: Read>(r: &mut Reader<R>) -> Result<Codebook> {
    r.magic(CODEBOOK_MAGIC)?;
    r.version()?;
    let k = r.len("codebook k")?;
    let d = r.len("codebook d")?;
    let n = k
        .checked_mul(d)
        .ok_or_else(|| Error::Format {
            offset: r.offset,
            message: format!("codebook size {k} x {d} overflows"),
        })?;
    let centroids = r.f64s(n)?;
    Codebook::new(k, d, centroids)
}

pub fn write_codebook<W: Write>(cb: &Codebook, mut w: W) -> Result<()> {
    write_codebook_body(cb, &mut w)
}

pub fn read_codebook<R: Read>(r: R) -> Result<Codebook> {
    read_codebook_body(&mut Reader::new(r))
}

// ---------------------------------------------------------------------
// Codebook bank (DVQB)
// ---------------------------------------------------------------------

fn write_bank_body<W: Write>(bank: &CodebookBank, w: &mut W) -> Result<()> {
    w.write_all(&BANK_MAGIC)?;
    put_u32(w, FORMAT_VERSION)?;
    put_u64(w, bank.len() as u64)?;
    for cb in bank.codebooks() {
        put_u64(w, cb.k() as u64)?;
    }
    for size in bank.split().sizes() {
        put_u64(w, *size as u64)?;
    }
    for cb in bank.codebooks() {
        write_codebook_body(cb, w)?;
    }
    Ok(())
}

fn read_bank_body<R: Read>(r: &mut Reader<R>) -> Result<CodebookBank> {
    r.magic(BANK_MAGIC)?;
    r.version()?;
    let l = r.len("bank length")?;
    let mut k_list = Vec::with_capacity(l.min(1 << 16));
    for _ in 0..l {
        k_list.push(r.len("bank k")?);
    }
    let mut sizes = Vec::with_capacity(l.min(1 << 16));
    for _ in 0..l {
        sizes.push(r.len("bank slice size")?);
    }
    let mut codebooks = Vec::with_capacity(l.min(1 << 16));
    for i in 0..l {
        let before = r.offset;
        let cb = read_codebook_body(r)?;
        if cb.k() != k_list[i] || cb.d() != sizes[i] {
            return Err(Error::Format {
                offset: before,
                message: format!(
                    "codebook {i} is {}x{} but the header declares {}x{}",
                    cb.k(),
                    cb.d(),
                    k_list[i],
                    sizes[i]
                ),
            });
        }
        codebooks.push(cb);
    }
    CodebookBank::new(codebooks, FeatureSplitSpec::new(sizes)?)
}

pub fn write_bank<W: Write>(bank: &CodebookBank, mut w: W) -> Result<()> {
    write_bank_body(bank, &mut w)
}

pub fn read_bank<R: Read>(r: R) -> Result<CodebookBank> {
    read_bank_body(&mut Reader::new(r))
}

// ---------------------------------------------------------------------
// Image dataset (DVQD)
// ---------------------------------------------------------------------

pub fn write_image_dataset<W: Write>(ds: &ImageDataset, mut w: W) -> Result<()> {
    w.write_all(&DATASET_MAGIC)?;
    put_u32(&mut w, FORMAT_VERSION)?;
    put_u64(&mut w, ds.len() as u64)?;
    put_u64(&mut w, ds.shape.h as u64)?;
    put_u64(&mut w, ds.shape.w as u64)?;
    put_u64(&mut w, ds.shape.c as u64)?;
    w.write_all(&[u8::from(ds.labels.is_some())])?;
    put_f64s(&mut w, ds.images.data())?;
    if let Some(labels) = &ds.labels {
        w.write_all(labels)?;
    }
    Ok(())
}

pub fn read_image_dataset<R: Read>(r: R) -> Result<ImageDataset> {
    let r = &mut Reader::new(r);
    r.magic(DATASET_MAGIC)?;
    r.version()?;
    let n = r.len("image count")?;
    let h = r.len("image height")?;
    let w = r.len("image width")?;
    let c = r.len("image channels")?;
    let has_labels = match r.u8()? {
        0 => false,
        1 => true,
        other => {
            return Err(Error::Format {
                offset: r.offset - 1,
                message: format!("label flag must be 0 or 1, got {other}"),
            })
        }
    };
    let pixels_per_image = h
        .checked_mul(w)
        .and_then(|p| p.checked_mul(c))
        .ok_or_else(|| Error::Format {
            offset: r.offset,
            message: format!("image size {h} x {w} x {c} overflows"),
        })?;
    let total = n.checked_mul(pixels_per_image).ok_or_else(|| Error::Format {
        offset: r.offset,
        message: format!("dataset size {n} x {pixels_per_image} overflows"),
    })?;
    let data = r.f64s(total)?;
    let labels = if has_labels {
        let mut raw = vec![0u8; n];
        r.read_exact(&mut raw)?;
        Some(raw)
    } else {
        None
    };
    ImageDataset::new(
        Matrix::from_vec(n, pixels_per_image, data)?,
        ImageShape { h, w, c },
        labels,
    )
}

// ---------------------------------------------------------------------
// MLP (inline record, part of the checkpoint)
// ---------------------------------------------------------------------

fn activation_tag(act: Activation) -> u8 {
    match act {
        Activation::Tanh => 0,
        Activation::Identity => 1,
    }
}

fn write_mlp<W: Write>(mlp: &Mlp, w: &mut W) -> Result<()> {
    put_u64(w, mlp.layers.len() as u64)?;
    for layer in &mlp.layers {
        put_u64(w, layer.in_dim as u64)?;
        put_u64(w, layer.out_dim as u64)?;
        w.write_all(&[activation_tag(layer.act)])?;
        put_f64s(w, &layer.w)?;
        put_f64s(w, &layer.b)?;
    }
    Ok(())
}

fn read_mlp<R: Read>(r: &mut Reader<R>) -> Result<Mlp> {
    let n_layers = r.len("layer count")?;
    if n_layers == 0 {
        return Err(Error::Format {
            offset: r.offset - 8,
            message: "an MLP needs at least one layer".to_string(),
        });
    }
    let mut layers = Vec::with_capacity(n_layers.min(1 << 10));
    for _ in 0..n_layers {
        let in_dim = r.len("layer input width")?;
        let out_dim = r.len("layer output width")?;
        let act = match r.u8()? {
            0 => Activation::Tanh,
            1 => Activation::Identity,
            other => {
                return Err(Error::Format {
                    offset: r.offset - 1,
                    message: format!("unknown activation tag {other}"),
                })
            }
        };
        let n_w = in_dim.checked_mul(out_dim).ok_or_else(|| Error::Format {
            offset: r.offset,
            message: format!("layer size {out_dim} x {in_dim} overflows"),
        })?;
        let w = r.f64s(n_w)?;
        let b = r.f64s(out_dim)?;
        layers.push(Layer {
            in_dim,
            out_dim,
            w,
            b,
            act,
        });
    }
    for pair in layers.windows(2) {
        if pair[0].out_dim != pair[1].in_dim {
            return Err(Error::Format {
                offset: r.offset,
                message: format!(
                    "layer widths do not chain: {} -> {}",
                    pair[0].out_dim, pair[1].in_dim
                ),
            });
        }
    }
    Ok(Mlp { layers })
}

// ---------------------------------------------------------------------
// Checkpoint (DVQK)
// ---------------------------------------------------------------------

const QUANTIZER_DEPTHWISE: u8 = 0;
const QUANTIZER_SPATIAL: u8 = 1;

pub fn write_checkpoint<W: Write>(state: &BottleneckState, mut w: W) -> Result<()> {
    let w = &mut w;
    w.write_all(&CHECKPOINT_MAGIC)?;
    put_u32(w, FORMAT_VERSION)?;
    put_u64(w, state.step)?;
    put_f64s(w, &[state.beta])?;
    let p = &state.params;
    put_u64(w, p.image.h as u64)?;
    put_u64(w, p.image.w as u64)?;
    put_u64(w, p.image.c as u64)?;
    put_u64(w, p.patch as u64)?;
    put_u64(w, p.latent_d as u64)?;
    write_mlp(&p.encoder, w)?;
    write_mlp(&p.decoder, w)?;
    match &state.quantizer {
        BottleneckQuantizer::Depthwise(bank) => {
            w.write_all(&[QUANTIZER_DEPTHWISE])?;
            write_bank_body(bank, w)?;
        }
        BottleneckQuantizer::Spatial { codebooks, partition } => {
            w.write_all(&[QUANTIZER_SPATIAL])?;
            put_u64(w, partition.w() as u64)?;
            put_u64(w, partition.h() as u64)?;
            put_u64(w, partition.n_cells() as u64)?;
            for cell in partition.cells() {
                put_u64(w, cell.len() as u64)?;
                for &pos in cell {
                    put_u64(w, pos as u64)?;
                }
            }
            for cb in codebooks {
                write_codebook_body(cb, w)?;
            }
        }
    }
    let opt = &state.opt;
    w.write_all(&[match opt.kind {
        OptimizerKind::Sgd => 0,
        OptimizerKind::Adam => 1,
    }])?;
    put_u64(w, opt.t)?;
    put_u64(w, opt.m.len() as u64)?;
    for (m, v) in opt.m.iter().zip(&opt.v) {
        put_u64(w, m.len() as u64)?;
        put_f64s(w, m)?;
        put_f64s(w, v)?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: R) -> Result<BottleneckState> {
    let r = &mut Reader::new(r);
    r.magic(CHECKPOINT_MAGIC)?;
    r.version()?;
    let step = r.u64()?;
    let beta = r.f64()?;
    if !(beta.is_finite() && beta >= 0.0) {
        return Err(Error::Format {
            offset: r.offset - 8,
            message: format!("beta must be finite and >= 0, got {beta}"),
        });
    }
    let h = r.len("image height")?;
    let w = r.len("image width")?;
    let c = r.len("image channels")?;
    let patch = r.len("patch size")?;
    let latent_d = r.len("latent depth")?;
    let encoder = read_mlp(r)?;
    let decoder = read_mlp(r)?;
    let params = EncoderDecoderParams {
        image: ImageShape { h, w, c },
        patch,
        latent_d,
        encoder,
        decoder,
    };
    params.validate()?;

    let quantizer = match r.u8()? {
        QUANTIZER_DEPTHWISE => {
            let bank = read_bank_body(r)?;
            if bank.depth() != latent_d {
                return Err(Error::Format {
                    offset: r.offset,
                    message: format!(
                        "bank depth {} does not match latent depth {latent_d}",
                        bank.depth()
                    ),
                });
            }
            BottleneckQuantizer::Depthwise(bank)
        }
        QUANTIZER_SPATIAL => {
            let pw = r.len("partition width")?;
            let ph = r.len("partition height")?;
            let n_cells = r.len("cell count")?;
            let mut cells = Vec::with_capacity(n_cells.min(1 << 16));
            for _ in 0..n_cells {
                let len = r.len("cell size")?;
                let mut cell = Vec::with_capacity(len.min(1 << 16));
                for _ in 0..len {
                    cell.push(r.len("cell position")?);
                }
                cells.push(cell);
            }
            let partition = SpatialPartition::new(pw, ph, cells)?;
            if pw != params.grid_w() || ph != params.grid_h() {
                return Err(Error::Format {
                    offset: r.offset,
                    message: format!(
                        "partition {pw}x{ph} does not match the {}x{} latent grid",
                        params.grid_w(),
                        params.grid_h()
                    ),
                });
            }
            let mut codebooks = Vec::with_capacity(n_cells.min(1 << 16));
            for i in 0..n_cells {
                let before = r.offset;
                let cb = read_codebook_body(r)?;
                if cb.d() != latent_d {
                    return Err(Error::Format {
                        offset: before,
                        message: format!(
                            "spatial codebook {i} has depth {}, expected {latent_d}",
                            cb.d()
                        ),
                    });
                }
                codebooks.push(cb);
            }
            BottleneckQuantizer::Spatial { codebooks, partition }
        }
        other => {
            return Err(Error::Format {
                offset: r.offset - 1,
                message: format!("unknown quantizer tag {other}"),
            })
        }
    };

    let kind = match r.u8()? {
        0 => OptimizerKind::Sgd,
        1 => OptimizerKind::Adam,
        other => {
            return Err(Error::Format {
                offset: r.offset - 1,
                message: format!("unknown optimizer tag {other}"),
            })
        }
    };
    let t = r.u64()?;
    let n_blocks = r.len("optimizer block count")?;
    let mut m = Vec::with_capacity(n_blocks.min(1 << 10));
    let mut v = Vec::with_capacity(n_blocks.min(1 << 10));
    for _ in 0..n_blocks {
        let len = r.len("optimizer block size")?;
        m.push(r.f64s(len)?);
        v.push(r.f64s(len)?);
    }
    let expected_blocks = BottleneckState::block_sizes(&params, &quantizer);
    match kind {
        OptimizerKind::Sgd => {
            if n_blocks != 0 {
                return Err(Error::Format {
                    offset: r.offset,
                    message: format!("sgd state must have 0 moment blocks, got {n_blocks}"),
                });
            }
        }
        OptimizerKind::Adam => {
            let found: Vec<usize> = m.iter().map(Vec::len).collect();
            if found != expected_blocks {
                return Err(Error::Format {
                    offset: r.offset,
                    message: format!(
                        "adam blocks {found:?} do not match the model's parameter blocks {expected_blocks:?}"
                    ),
                });
            }
        }
    }
    Ok(BottleneckState {
        params,
        quantizer,
        beta,
        opt: OptimizerState { kind, t, m, v },
        step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bottleneck::model::{backward_and_step, StepOptions};
    use crate::bottleneck::train::{init_bottleneck, AeQuantizer, AeTrainConfig};
    use crate::codebook::init_codebook;
    use crate::seed::rng_from;
    use rand::Rng;

    fn sample_codebook(k: usize, d: usize, seed: u64) -> Codebook {
        init_codebook(k, d, seed).unwrap()
    }

    #[test]
    fn codebook_round_trip_is_bit_exact() {
        // Include awkward but finite values: negative zero and subnormals.
        let cb = Codebook::new(2, 3, vec![0.5, -0.0, f64::MIN_POSITIVE, -1e-310, 1e300, -3.25])
            .unwrap();
        let mut buf = Vec::new();
        write_codebook(&cb, &mut buf).unwrap();
        let back = read_codebook(buf.as_slice()).unwrap();
        assert_eq!(cb, back);
        for (a, b) in cb.centroids().iter().zip(back.centroids()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn bank_round_trip_preserves_split_and_codebooks() {
        let split = FeatureSplitSpec::new(vec![2, 3, 1]).unwrap();
        let codebooks = vec![
            sample_codebook(4, 2, 1),
            sample_codebook(4, 3, 2),
            sample_codebook(4, 1, 3),
        ];
        let bank = CodebookBank::new(codebooks, split).unwrap();
        let mut buf = Vec::new();
        write_bank(&bank, &mut buf).unwrap();
        assert_eq!(read_bank(buf.as_slice()).unwrap(), bank);
    }

    #[test]
    fn dataset_round_trip_with_and_without_labels() {
        let shape = ImageShape { h: 2, w: 3, c: 1 };
        let mut rng = rng_from(9);
        let data: Vec<f64> = (0..4 * 6).map(|_| rng.random_range(0.0..1.0)).collect();
        let images = Matrix::from_vec(4, 6, data).unwrap();
        for labels in [None, Some(vec![0u8, 3, 2, 9])] {
            let ds = ImageDataset::new(images.clone(), shape, labels).unwrap();
            let mut buf = Vec::new();
            write_image_dataset(&ds, &mut buf).unwrap();
            let back = read_image_dataset(buf.as_slice()).unwrap();
            assert_eq!(ds.images, back.images);
            assert_eq!(ds.shape, back.shape);
            assert_eq!(ds.labels, back.labels);
        }
    }

    fn trained_state(quantizer: AeQuantizer) -> BottleneckState {
        let cfg = AeTrainConfig {
            quantizer,
            k: 4,
            l: 2,
            latent_d: 4,
            patch: 2,
            hidden: vec![6],
            beta: 0.25,
            optimizer: crate::bottleneck::optim::OptimizerKind::Adam,
            lr: 1e-2,
            steps: 3,
            batch: 4,
            seed: 5,
            record_interval: 10,
            data_parallel: false,
        };
        let shape = ImageShape { h: 4, w: 4, c: 1 };
        let mut rng = rng_from(21);
        let data: Vec<f64> = (0..6 * 16).map(|_| rng.random_range(0.0..1.0)).collect();
        let ds = ImageDataset::new(Matrix::from_vec(6, 16, data).unwrap(), shape, None).unwrap();
        let mut state = init_bottleneck(&cfg, &ds).unwrap();
        // A few real steps so optimizer moments and step counters are
        // nontrivial.
        for _ in 0..3 {
            backward_and_step(&mut state, &ds.images, 1e-2, &StepOptions::default()).unwrap();
        }
        state
    }

    #[test]
    fn checkpoint_round_trip_restores_the_exact_state() {
        for quantizer in [AeQuantizer::Vq, AeQuantizer::Dvq, AeQuantizer::Svq] {
            let state = trained_state(quantizer);
            let mut buf = Vec::new();
            write_checkpoint(&state, &mut buf).unwrap();
            let back = read_checkpoint(buf.as_slice()).unwrap();
            assert_eq!(state, back, "{quantizer:?} checkpoint drifted");
        }
    }

    #[test]
    fn reloaded_state_continues_training_identically() {
        let mut original = trained_state(AeQuantizer::Dvq);
        let mut buf = Vec::new();
        write_checkpoint(&original, &mut buf).unwrap();
        let mut reloaded = read_checkpoint(buf.as_slice()).unwrap();

        let shape = ImageShape { h: 4, w: 4, c: 1 };
        let mut rng = rng_from(22);
        let data: Vec<f64> = (0..4 * 16).map(|_| rng.random_range(0.0..1.0)).collect();
        let batch = Matrix::from_vec(4, 16, data).unwrap();
        let _ = shape;
        for _ in 0..2 {
            backward_and_step(&mut original, &batch, 1e-2, &StepOptions::default()).unwrap();
            backward_and_step(&mut reloaded, &batch, 1e-2, &StepOptions::default()).unwrap();
        }
        assert_eq!(original, reloaded);
    }

    #[test]
    fn wrong_magic_is_reported_at_offset_zero() {
        let cb = sample_codebook(2, 2, 7);
        let mut buf = Vec::new();
        write_codebook(&cb, &mut buf).unwrap();
        buf[0] = b'X';
        match read_codebook(buf.as_slice()) {
            Err(Error::Format { offset, message }) => {
                assert_eq!(offset, 0);
                assert!(message.contains("magic"), "{message}");
            }
            other => panic!("expected a format error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_file_reports_the_failing_offset() {
        let cb = sample_codebook(3, 4, 11);
        let mut buf = Vec::new();
        write_codebook(&cb, &mut buf).unwrap();
        buf.truncate(buf.len() - 5);
        match read_codebook(buf.as_slice()) {
            Err(Error::Format { offset, message }) => {
                assert!(offset > 0);
                assert!(message.contains("end of file"), "{message}");
            }
            other => panic!("expected a format error, got {other:?}"),
        }
    }

    #[test]
    fn future_version_is_rejected() {
        let cb = sample_codebook(2, 2, 13);
        let mut buf = Vec::new();
        write_codebook(&cb, &mut buf).unwrap();
        buf[4..8].copy_from_slice(&99u32.to_le_bytes());
        match read_codebook(buf.as_slice()) {
            Err(Error::Format { offset, message }) => {
                assert_eq!(offset, 4);
                assert!(message.contains("version"), "{message}");
            }
            other => panic!("expected a format error, got {other:?}"),
        }
    }

    #[test]
    fn bank_header_inconsistent_with_records_is_rejected() {
        let split = FeatureSplitSpec::new(vec![2, 2]).unwrap();
        let bank = CodebookBank::new(
            vec![sample_codebook(4, 2, 1), sample_codebook(4, 2, 2)],
            split,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_bank(&bank, &mut buf).unwrap();
        // Corrupt the first header K entry (bytes 16..24 after magic,
        // version, and l).
        buf[16..24].copy_from_slice(&9u64.to_le_bytes());
        assert!(matches!(read_bank(buf.as_slice()), Err(Error::Format { .. })));
    }

    #[test]
    fn checkpoint_with_mismatched_adam_blocks_is_rejected() {
        let state = trained_state(AeQuantizer::Vq);
        let mut buf = Vec::new();
        write_checkpoint(&state, &mut buf).unwrap();
        // Truncating the last moment block corrupts the block structure.
        buf.truncate(buf.len() - 8);
        assert!(matches!(
            read_checkpoint(buf.as_slice()),
            Err(Error::Format { .. })
        ));
    }
}

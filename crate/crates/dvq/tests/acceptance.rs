//! The acceptance checklist: eight numbered criteria covering the crate's
//! scientific claims end to end, from the static-prior orderings to the
//! straight-through gradient contract. Each test prints exactly one
//! `criterion N (...): PASS/FAIL — ...` line (visible with
//! `cargo test --test acceptance -- --nocapture`) and asserts the same
//! condition, so this target doubles as a release gate and a report.
//!
//! Criteria 2+3 share one K-vs-D sweep and criteria 6+8 share one set of
//! autoencoder runs; the shared computations are cached in `OnceLock`s so
//! each runs once per test-binary invocation. On a single CPU core the
//! whole target takes a few minutes, dominated by those two fixtures.
//!
//! Thresholds marked "calibrated" were measured once with the committed
//! protocols and frozen with generous margins; they are regression trips,
//! not tuning knobs.

use std::sync::OnceLock;

use dvq::blobs::BlobSpec;
use dvq::bottleneck::{
    decode, encode, evaluate, init_bottleneck, per_term_gradients, reconstruction_loss,
    total_loss, train_autoencoder, AeQuantizer, AeTrainConfig, BottleneckQuantizer,
    BottleneckState, CollectSink, EncoderDecoderParams, Mlp, OptimizerKind, OptimizerState,
    TermGradients,
};
use dvq::image::ImageShape;
use dvq::metrics::{REFERENCE_BITS_DVQ, REFERENCE_BITS_SVQ, REFERENCE_BITS_VQVAE};
use dvq::shapes::{generate_shapes, ShapeSpec};
use dvq::static_lab::{monte_carlo, sweep_k_vs_d, ResultRow, StaticModel, StaticTrainConfig};
use dvq::{
    concat_features, count_distinct_outcomes, derive_seed, dvq_quantize, init_codebook,
    nearest_code, quantize_batch, rng_from, split_features, vq_objective, Codebook, CodebookBank,
    FeatureSplitSpec, LatentGrid, Matrix, QuantizerSetup,
};
use rand::Rng;

/// Print the one-line verdict for a criterion, then enforce it.
fn check(n: u32, name: &str, ok: bool, detail: &str) {
    let verdict = if ok { "PASS" } else { "FAIL" };
    println!("criterion {n} ({name}): {verdict} — {detail}");
    assert!(ok, "criterion {n} ({name}) failed: {detail}");
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

// ---------------------------------------------------------------------------
// Criterion 1: static-prior ordering at matched and 2.5x capacity.
// ---------------------------------------------------------------------------

/// With 70 true factors in 64 dimensions, four depthwise codebooks of 20
/// codes must beat one codebook of 20 codes outright, and stay within 5%
/// of one codebook of 50 codes. Protocol identical to
/// `configs/static_compare.toml`: sigma 0.01, 5000 samples, 10 paired
/// repetitions.
#[test]
fn criterion_1_static_prior_ordering() {
    let blob = BlobSpec::new(70, 64, 5000, 0); // seed is re-derived per repetition
    let reps = 10;
    let run = |model, k, l| {
        let cfg = StaticTrainConfig::new(model, k, l, 7);
        monte_carlo(&blob, &cfg, reps).expect("monte carlo run").mean
    };
    let dvq = run(StaticModel::Dvq, 20, 4);
    let vq = run(StaticModel::Vq, 20, 1);
    let vq_plus = run(StaticModel::VqPlus, 50, 1);

    let ok = dvq < vq && dvq <= 1.05 * vq_plus;
    check(
        1,
        "static-prior ordering",
        ok,
        &format!(
            "mean final test loss over {reps} reps: dvq={dvq:.4} vq={vq:.4} vq+={vq_plus:.4}; \
             need dvq < vq and dvq <= 1.05*vq+"
        ),
    );
}

// ---------------------------------------------------------------------------
// Criteria 2 + 3: the K-vs-D sweep, shared between both tests.
// ---------------------------------------------------------------------------

const SWEEP_KS: [usize; 10] = [10, 20, 30, 40, 50, 60, 70, 80, 90, 100];
const SWEEP_DIMS: [usize; 5] = [2, 4, 8, 32, 64];
const SWEEP_REPS: usize = 5;

/// The full K-vs-D grid with a paired untrained control per cell, same
/// protocol as `configs/static_sweep.toml`. Computed once, used by
/// criteria 2 and 3.
fn sweep_rows() -> &'static [ResultRow] {
    static ROWS: OnceLock<Vec<ResultRow>> = OnceLock::new();
    ROWS.get_or_init(|| {
        let blob = BlobSpec::new(200, 2, 5000, 0); // d is overridden per cell
        let cfg = StaticTrainConfig::new(StaticModel::Vq, 10, 1, 11);
        sweep_k_vs_d(&blob, &cfg, &SWEEP_KS, &SWEEP_DIMS, SWEEP_REPS, true).expect("sweep")
    })
}

/// Mean final test loss of one model in one (k, d) cell of the sweep.
fn cell_mean(rows: &[ResultRow], model: &str, k: usize, d: usize) -> f64 {
    let finals: Vec<f64> = rows
        .iter()
        .filter(|r| r.model == model && r.k == k && r.d == d)
        .map(|r| r.final_test_loss)
        .collect();
    assert_eq!(finals.len(), SWEEP_REPS, "cell ({model}, k={k}, d={d}) is incomplete");
    mean(&finals)
}

/// In 2 dimensions, going from 10 to 100 codes must cut the loss by more
/// than 20%; at 32+ dimensions the whole K range must land within 15% of
/// each other (extra codes stop paying once the space is too big for
/// them). Thresholds calibrated: observed end-ratio ~0.12 at d=2 and
/// max/min spreads ~1.01 at d=32, ~1.00 at d=64.
#[test]
fn criterion_2_extra_codes_saturate_with_dimension() {
    let rows = sweep_rows();

    let low_d_ratio = cell_mean(rows, "vq", 100, 2) / cell_mean(rows, "vq", 10, 2);

    let spread = |d: usize| {
        let means: Vec<f64> = SWEEP_KS.iter().map(|&k| cell_mean(rows, "vq", k, d)).collect();
        means.iter().cloned().fold(f64::MIN, f64::max)
            / means.iter().cloned().fold(f64::MAX, f64::min)
    };
    let spread_32 = spread(32);
    let spread_64 = spread(64);

    let ok = low_d_ratio < 0.8 && spread_32 < 1.15 && spread_64 < 1.15;
    check(
        2,
        "K saturates with dimension",
        ok,
        &format!(
            "d=2 loss(K=100)/loss(K=10)={low_d_ratio:.3} (need <0.8); \
             max/min across K: d=32 {spread_32:.3}, d=64 {spread_64:.3} (need <1.15)"
        ),
    );
}

/// Training must help in every single cell of the grid: trained VQ below
/// the untrained random-codebook control for all 50 (K, d) combinations.
#[test]
fn criterion_3_training_beats_untrained_in_every_cell() {
    let rows = sweep_rows();
    let mut worst_ratio = f64::MIN;
    let mut failures = Vec::new();
    for &d in &SWEEP_DIMS {
        for &k in &SWEEP_KS {
            let trained = cell_mean(rows, "vq", k, d);
            let untrained = cell_mean(rows, "random", k, d);
            worst_ratio = worst_ratio.max(trained / untrained);
            if trained >= untrained {
                failures.push(format!("(k={k}, d={d})"));
            }
        }
    }
    let ok = failures.is_empty();
    check(
        3,
        "trained beats untrained everywhere",
        ok,
        &format!(
            "{} of {} cells trained < untrained; worst trained/untrained ratio {:.3}{}",
            50 - failures.len(),
            50,
            worst_ratio,
            if ok { String::new() } else { format!("; violations: {}", failures.join(", ")) }
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 4: K^L expressiveness, exhaustively.
// ---------------------------------------------------------------------------

/// Two depthwise codebooks of 3 codes can express all 3^2 = 9 slice
/// combinations; a joint quantizer with two *identical* full-width
/// codebooks collapses to at most 3 outcomes on the same inputs.
#[test]
fn criterion_4_depthwise_expressiveness_is_k_to_the_l() {
    // Depthwise: slice 0 targets {-1, 0, 1}, slice 1 targets {10, 20, 30}.
    let cb0 = Codebook::from_rows(&[vec![-1.0], vec![0.0], vec![1.0]]).unwrap();
    let cb1 = Codebook::from_rows(&[vec![10.0], vec![20.0], vec![30.0]]).unwrap();
    let bank =
        CodebookBank::new(vec![cb0, cb1], FeatureSplitSpec::new(vec![1, 1]).unwrap()).unwrap();

    // All 9 centroid combinations, hit exactly.
    let mut data = Vec::new();
    for a in [-1.0, 0.0, 1.0] {
        for b in [10.0, 20.0, 30.0] {
            data.extend_from_slice(&[a, b]);
        }
    }
    let inputs = Matrix::from_vec(9, 2, data).unwrap();
    let depthwise = count_distinct_outcomes(QuantizerSetup::Depthwise(&bank), &inputs).unwrap();

    // Joint baseline: two identical 2-wide codebooks pick the same code for
    // every input, so the pair can never express more than K outcomes.
    let joint_cb = Codebook::from_rows(&[
        vec![-1.0, 10.0],
        vec![0.0, 20.0],
        vec![1.0, 30.0],
    ])
    .unwrap();
    let cbs = vec![joint_cb.clone(), joint_cb];
    let joint = count_distinct_outcomes(QuantizerSetup::Joint(&cbs), &inputs).unwrap();

    let ok = depthwise == 9 && joint <= 3;
    check(
        4,
        "expressiveness is K^L",
        ok,
        &format!(
            "depthwise K=3, L=2 produced {depthwise} distinct outputs (need exactly 9); \
             joint with identical codebooks produced {joint} (need <= 3)"
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 5: gradient correctness on a model small enough to brute-force.
// ---------------------------------------------------------------------------

/// A complete bottleneck with 52 parameters: 4x4 grayscale images, 2x2
/// patches, latent depth 2 split into two one-dimensional slices with 2
/// codes each.
fn brute_force_state(seed: u64) -> BottleneckState {
    let image = ImageShape { h: 4, w: 4, c: 1 };
    let mut enc_rng = rng_from(derive_seed(seed, 0));
    let mut dec_rng = rng_from(derive_seed(seed, 1));
    let params = EncoderDecoderParams {
        image,
        patch: 2,
        latent_d: 2,
        encoder: Mlp::new(&[4, 3, 2], &mut enc_rng).unwrap(),
        decoder: Mlp::new(&[2, 3, 4], &mut dec_rng).unwrap(),
    };
    params.validate().unwrap();
    let cb_seed = derive_seed(seed, 2);
    let codebooks: Vec<Codebook> =
        (0..2).map(|i| init_codebook(2, 1, derive_seed(cb_seed, i)).unwrap()).collect();
    let bank = CodebookBank::new(codebooks, FeatureSplitSpec::equal(2, 2).unwrap()).unwrap();
    let quantizer = BottleneckQuantizer::Depthwise(bank);
    let opt = OptimizerState::new(OptimizerKind::Sgd, &BottleneckState::block_sizes(&params, &quantizer));
    BottleneckState { params, quantizer, beta: 0.25, opt, step: 0 }
}

/// Tracks the worst relative deviation between analytic and numeric
/// gradients across every parameter checked.
struct FdLedger {
    checked: usize,
    worst: f64,
}

impl FdLedger {
    fn new() -> Self {
        FdLedger { checked: 0, worst: 0.0 }
    }

    fn record(&mut self, analytic: f64, numeric: f64) {
        let denom = analytic.abs().max(numeric.abs());
        // Both effectively zero: compare absolutely (the relative error of
        // two rounding-noise values is meaningless).
        let err = if denom < 1e-9 {
            (analytic - numeric).abs()
        } else {
            (analytic - numeric).abs() / denom
        };
        self.checked += 1;
        self.worst = self.worst.max(err);
    }
}

fn all_zero(grads: &dvq::bottleneck::MlpGrads) -> bool {
    grads.dw.iter().flatten().all(|&v| v == 0.0) && grads.db.iter().flatten().all(|&v| v == 0.0)
}

/// Flat view of a layer's parameters: weights first, then biases.
fn param_mut(layer: &mut dvq::bottleneck::Layer, i: usize) -> &mut f64 {
    let n_w = layer.w.len();
    if i < n_w {
        &mut layer.w[i]
    } else {
        &mut layer.b[i - n_w]
    }
}

/// Central finite differences over *every* parameter of the 52-parameter
/// model, with quantizer assignments frozen at the base point:
///   - encoder: the straight-through surrogate (reconstruction with the
///     base quantization offset held constant) plus beta times the
///     commitment term against the frozen codes;
///   - decoder: the actual total loss (only reconstruction varies);
///   - codebooks: the quantization term with frozen assignments.
///
/// Also asserts the structural-zero routing contract exactly.
#[test]
fn criterion_5_gradients_match_finite_differences() {
    let mut state = brute_force_state(0xFD);
    let n_params = state.params.encoder.n_params()
        + state.params.decoder.n_params()
        + state.quantizer.codebooks().iter().map(|cb| cb.k() * cb.d()).sum::<usize>();
    assert!(n_params <= 100, "brute-force model grew past 100 parameters: {n_params}");

    let mut rng = rng_from(0xBA7C);
    let batch_data: Vec<f64> = (0..2 * 16).map(|_| rng.random_range(0.0..1.0)).collect();
    let batch = Matrix::from_vec(2, 16, batch_data).unwrap();
    let beta = state.beta;

    let tg: TermGradients = per_term_gradients(&state, &batch).unwrap();

    // Routing contract, exactly: vq -> codebooks only, commitment ->
    // encoder only, reconstruction -> everything except codebooks.
    let routing_ok = tg.reconstruction.codebooks.iter().all(|g| g.data().iter().all(|&v| v == 0.0))
        && tg.commitment.codebooks.iter().all(|g| g.data().iter().all(|&v| v == 0.0))
        && all_zero(&tg.commitment.decoder)
        && all_zero(&tg.vq.encoder)
        && all_zero(&tg.vq.decoder);

    // Freeze the base point: encodings, quantizations, assignments.
    let base: Vec<(LatentGrid, LatentGrid)> = batch
        .iter_rows()
        .map(|row| {
            let z_e = encode(row, &state.params).unwrap();
            let z_q = state.quantizer.quantize(&z_e).unwrap().z_q;
            (z_e, z_q)
        })
        .collect();
    let frozen_indices: Vec<Vec<usize>> = batch
        .iter_rows()
        .map(|row| {
            let z_e = encode(row, &state.params).unwrap();
            state.quantizer.quantize(&z_e).unwrap().indices
        })
        .collect();

    let mut ledger = FdLedger::new();
    let h = 1e-5;

    // Encoder: d/dtheta of [surrogate reconstruction + beta * commitment],
    // both against the frozen base quantization.
    let surrogate_total = |state: &BottleneckState| -> f64 {
        let n_positions = state.params.n_positions() as f64;
        let mut acc = 0.0;
        for (row, (z_e0, z_q0)) in batch.iter_rows().zip(&base) {
            let z_e = encode(row, &state.params).unwrap();
            let mut shifted = z_q0.clone();
            for ((s, e), e0) in
                shifted.values_mut().iter_mut().zip(z_e.values()).zip(z_e0.values())
            {
                *s += e - e0;
            }
            let x_hat = decode(&shifted, &state.params).unwrap();
            acc += reconstruction_loss(row, &x_hat).unwrap();

            let commit: f64 = z_e
                .values()
                .iter()
                .zip(z_q0.values())
                .map(|(e, q)| (e - q) * (e - q))
                .sum();
            acc += beta * commit / n_positions;
        }
        acc / batch.rows() as f64
    };
    for li in 0..state.params.encoder.layers.len() {
        let n_w = state.params.encoder.layers[li].w.len();
        let n_b = state.params.encoder.layers[li].b.len();
        for wi in 0..n_w + n_b {
            let orig = *param_mut(&mut state.params.encoder.layers[li], wi);
            *param_mut(&mut state.params.encoder.layers[li], wi) = orig + h;
            let up = surrogate_total(&state);
            *param_mut(&mut state.params.encoder.layers[li], wi) = orig - h;
            let down = surrogate_total(&state);
            *param_mut(&mut state.params.encoder.layers[li], wi) = orig;
            let analytic = if wi < n_w {
                tg.reconstruction.encoder.dw[li][wi] + beta * tg.commitment.encoder.dw[li][wi]
            } else {
                tg.reconstruction.encoder.db[li][wi - n_w]
                    + beta * tg.commitment.encoder.db[li][wi - n_w]
            };
            ledger.record(analytic, (up - down) / (2.0 * h));
        }
    }

    // Decoder: the full loss directly — commitment and quantization do not
    // depend on decoder parameters, so no surrogate is needed.
    let full_total = |state: &BottleneckState| total_loss(&batch, state).unwrap().total;
    for li in 0..state.params.decoder.layers.len() {
        let n_w = state.params.decoder.layers[li].w.len();
        let n_b = state.params.decoder.layers[li].b.len();
        for wi in 0..n_w + n_b {
            let orig = *param_mut(&mut state.params.decoder.layers[li], wi);
            *param_mut(&mut state.params.decoder.layers[li], wi) = orig + h;
            let up = full_total(&state);
            *param_mut(&mut state.params.decoder.layers[li], wi) = orig - h;
            let down = full_total(&state);
            *param_mut(&mut state.params.decoder.layers[li], wi) = orig;
            let analytic = if wi < n_w {
                tg.reconstruction.decoder.dw[li][wi]
            } else {
                tg.reconstruction.decoder.db[li][wi - n_w]
            };
            ledger.record(analytic, (up - down) / (2.0 * h));
        }
    }

    // Codebooks: the quantization term with encodings and assignments
    // frozen — each position pays the distance to its *original* code row,
    // wherever that row has moved.
    let (offsets, sizes): (Vec<usize>, Vec<usize>) = match &state.quantizer {
        BottleneckQuantizer::Depthwise(bank) => (
            (0..bank.len()).map(|i| bank.split().offset(i)).collect(),
            (0..bank.len()).map(|i| bank.split().size(i)).collect(),
        ),
        BottleneckQuantizer::Spatial { .. } => unreachable!("test model is depthwise"),
    };
    let vq_frozen = |state: &BottleneckState| -> f64 {
        let n_positions = state.params.n_positions();
        let mut acc = 0.0;
        for ((z_e0, _), indices) in base.iter().zip(&frozen_indices) {
            for pos in 0..n_positions {
                let z = z_e0.position(pos);
                for (j, (&off, &len)) in offsets.iter().zip(&sizes).enumerate() {
                    let idx = indices[pos * offsets.len() + j];
                    let code = state.quantizer.codebooks()[j].centroid(idx);
                    acc += z[off..off + len]
                        .iter()
                        .zip(code)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>();
                }
            }
        }
        acc / (batch.rows() * n_positions) as f64
    };
    for ci in 0..state.quantizer.n_codebooks() {
        let n = state.quantizer.codebooks()[ci].k() * state.quantizer.codebooks()[ci].d();
        for ei in 0..n {
            let orig = state.quantizer.codebooks()[ci].centroids()[ei];
            state.quantizer.codebooks_mut()[ci].centroids_mut()[ei] = orig + h;
            let up = vq_frozen(&state);
            state.quantizer.codebooks_mut()[ci].centroids_mut()[ei] = orig - h;
            let down = vq_frozen(&state);
            state.quantizer.codebooks_mut()[ci].centroids_mut()[ei] = orig;
            ledger.record(tg.vq.codebooks[ci].data()[ei], (up - down) / (2.0 * h));
        }
    }

    let ok = routing_ok && ledger.checked == n_params && ledger.worst <= 1e-4;
    check(
        5,
        "gradient correctness",
        ok,
        &format!(
            "{} of {n_params} parameters checked against central differences, worst relative \
             deviation {:.2e} (tolerance 1e-4); routing contract exact: {routing_ok}",
            ledger.checked, ledger.worst
        ),
    );
}

// ---------------------------------------------------------------------------
// Criteria 6 + 8: autoencoder runs on the shapes task, shared.
// ---------------------------------------------------------------------------

const AE_STEPS: usize = 2000;
const AE_SEEDS: usize = 5;

/// One finished training run: its recorded loss curve and final held-out
/// reconstruction error.
struct AeRun {
    steps: Vec<u64>,
    totals: Vec<f64>,
    final_test_recon: f64,
}

struct ShapeRuns {
    dvq: Vec<AeRun>,
    vq: Vec<AeRun>,
    svq: Vec<AeRun>,
}

fn run_shapes_ae(quantizer: AeQuantizer, k: usize, l: usize, seed_index: usize) -> AeRun {
    let ds = generate_shapes(&ShapeSpec {
        img: 8,
        n_samples: 512,
        seed: 100 + seed_index as u64,
    })
    .expect("shape dataset");
    let cfg = AeTrainConfig {
        quantizer,
        k,
        l,
        latent_d: 16,
        patch: 2,
        hidden: vec![32],
        beta: 0.25,
        optimizer: OptimizerKind::Adam,
        lr: 1e-3,
        steps: AE_STEPS,
        batch: 32,
        seed: 200 + seed_index as u64,
        record_interval: 50,
        data_parallel: true,
    };
    let mut sink = CollectSink::default();
    let report = train_autoencoder(&ds, &cfg, &mut sink).expect("training run");
    AeRun {
        steps: sink.records.iter().map(|r| r.step).collect(),
        totals: sink.records.iter().map(|r| r.total).collect(),
        final_test_recon: report.final_test.loss.reconstruction,
    }
}

/// Five paired seeds of the three bottlenecks at matched total capacity —
/// 32 code vectors each: depthwise 4x8, single codebook 1x32, spatial 4x8
/// (one codebook per latent-grid row band). Computed once, used by
/// criteria 6 and 8.
fn shape_runs() -> &'static ShapeRuns {
    static RUNS: OnceLock<ShapeRuns> = OnceLock::new();
    RUNS.get_or_init(|| ShapeRuns {
        dvq: (0..AE_SEEDS).map(|s| run_shapes_ae(AeQuantizer::Dvq, 8, 4, s)).collect(),
        vq: (0..AE_SEEDS).map(|s| run_shapes_ae(AeQuantizer::Vq, 32, 1, s)).collect(),
        svq: (0..AE_SEEDS).map(|s| run_shapes_ae(AeQuantizer::Svq, 8, 4, s)).collect(),
    })
}

/// At matched capacity on the learned prior, depthwise must do at least as
/// well as one big codebook and strictly better than the spatial split,
/// by mean final held-out reconstruction error over 5 seeds.
#[test]
fn criterion_6_learned_prior_ordering_at_matched_capacity() {
    let runs = shape_runs();
    let m = |rs: &[AeRun]| mean(&rs.iter().map(|r| r.final_test_recon).collect::<Vec<_>>());
    let dvq = m(&runs.dvq);
    let vq = m(&runs.vq);
    let svq = m(&runs.svq);

    let ok = dvq <= vq && dvq < svq;
    check(
        6,
        "learned-prior ordering at matched capacity",
        ok,
        &format!(
            "mean final test reconstruction over {AE_SEEDS} seeds, 32 code vectors each: \
             dvq={dvq:.4} vq={vq:.4} svq={svq:.4}; need dvq <= vq and dvq < svq"
        ),
    );
}

/// Depthwise quantization converges faster, checked directionally: per
/// seed, the first recorded step at which the depthwise run's training
/// loss drops to the single-codebook run's *final* training loss. The
/// single-codebook run needs its whole budget by construction; depthwise
/// must need well under it (calibrated: ~25% of the budget on average;
/// frozen bound 75%).
///
/// The published full-scale bits/dim table is pinned here as documentation
/// constants — those absolute numbers need a full-size convolutional
/// autoencoder and ~100k large-batch steps, and this desk-scale artifact
/// does NOT reproduce them; it substitutes the orderings and contracts of
/// criteria 1-7.
#[test]
fn criterion_8_published_scale_is_documented_not_reproduced() {
    // The pinned reference table: depthwise / single-codebook / spatial on
    // CIFAR-10, then 32x32 and 64x64 ImageNet (spatial unreported there).
    let table_ok = REFERENCE_BITS_DVQ
        == [("cifar10", Some(3.15)), ("imagenet32", Some(3.76)), ("imagenet64", Some(3.50))]
        && REFERENCE_BITS_VQVAE
            == [("cifar10", Some(4.67)), ("imagenet32", Some(4.92)), ("imagenet64", Some(4.66))]
        && REFERENCE_BITS_SVQ
            == [("cifar10", Some(5.85)), ("imagenet32", None), ("imagenet64", None)]
        && REFERENCE_BITS_DVQ.iter().zip(&REFERENCE_BITS_VQVAE).all(|(d, v)| d.1 < v.1);

    // Directional convergence on the desk-scale task.
    let runs = shape_runs();
    let mut first_reach = Vec::with_capacity(AE_SEEDS);
    for (dvq, vq) in runs.dvq.iter().zip(&runs.vq) {
        let target = *vq.totals.last().expect("recorded curve");
        let reached = dvq
            .steps
            .iter()
            .zip(&dvq.totals)
            .find(|(_, &tot)| tot <= target)
            .map(|(&s, _)| s as f64)
            .unwrap_or(AE_STEPS as f64);
        first_reach.push(reached);
    }
    let mean_reach = mean(&first_reach);
    let budget = 0.75 * AE_STEPS as f64;
    let converge_ok = mean_reach < budget;

    let ok = table_ok && converge_ok;
    check(
        8,
        "published scale documented, not reproduced",
        ok,
        &format!(
            "reference bits/dim pinned as documentation constants (desk scale does not \
             reproduce them): {table_ok}; depthwise reaches the single-codebook run's final \
             training loss by step {mean_reach:.0} of {AE_STEPS} on average (need < {budget:.0})"
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 7: the equivalences everything else leans on.
// ---------------------------------------------------------------------------

/// A value pool that makes exact ties likely, to exercise the
/// lowest-index tie-break through every code path.
fn tie_prone(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            if rng.random::<bool>() {
                f64::from(rng.random_range(-4i32..=4)) * 0.5
            } else {
                rng.random_range(-3.0..3.0)
            }
        })
        .collect()
}

/// 1000 random instances, each checking all three equivalences bit for
/// bit: a one-codebook depthwise bank against plain quantization, batch
/// quantization against a per-row nearest-code loop, and the
/// split/concatenate round trip.
#[test]
fn criterion_7_quantizer_equivalences_hold_on_random_instances() {
    const INSTANCES: u64 = 1000;
    for i in 0..INSTANCES {
        let mut rng = rng_from(derive_seed(0xE0_07, i));
        let rows = rng.random_range(1..=12);
        let d = rng.random_range(1..=6);
        let k = rng.random_range(1..=5);

        let batch = Matrix::from_vec(rows, d, tie_prone(&mut rng, rows * d)).unwrap();
        let cb = Codebook::new(k, d, tie_prone(&mut rng, k * d)).unwrap();

        // (a) A depthwise bank with a single full-width slice is the
        // identity wrapper around plain quantization.
        let vq = quantize_batch(&batch, &cb).unwrap();
        let bank =
            CodebookBank::new(vec![cb.clone()], FeatureSplitSpec::new(vec![d]).unwrap()).unwrap();
        let grid = LatentGrid::from_matrix(&batch);
        let dq = dvq_quantize(&grid, &bank).unwrap();
        assert_eq!(dq.indices, vq.indices, "instance {i}: L=1 indices diverge");
        assert!(
            dq.z_q.values().iter().zip(vq.codes.data()).all(|(a, b)| a.to_bits() == b.to_bits()),
            "instance {i}: L=1 quantized values diverge"
        );
        assert_eq!(
            dq.partial_losses[0].to_bits(),
            vq_objective(&batch, &cb).unwrap().to_bits(),
            "instance {i}: L=1 loss diverges"
        );

        // (b) Batch quantization is exactly the per-row nearest-code loop.
        for r in 0..rows {
            let (idx, dist) = nearest_code(batch.row(r), &cb).unwrap();
            assert_eq!(vq.indices[r], idx, "instance {i} row {r}: index diverges");
            assert_eq!(
                vq.sq_distances[r].to_bits(),
                dist.to_bits(),
                "instance {i} row {r}: distance diverges"
            );
            assert!(
                vq.codes.row(r).iter().zip(cb.centroid(idx)).all(|(a, b)| a.to_bits() == b.to_bits()),
                "instance {i} row {r}: code row diverges"
            );
        }

        // (c) Splitting by any slice spec and concatenating is the identity.
        let n_slices = rng.random_range(1..=3);
        let sizes: Vec<usize> = (0..n_slices).map(|_| rng.random_range(1..=3)).collect();
        let spec = FeatureSplitSpec::new(sizes).unwrap();
        let (w, h) = (rng.random_range(1..=3), rng.random_range(1..=3));
        let g = LatentGrid::new(w, h, spec.depth(), tie_prone(&mut rng, w * h * spec.depth()))
            .unwrap();
        let back = concat_features(&split_features(&g, &spec).unwrap()).unwrap();
        assert!(
            back.values().iter().zip(g.values()).all(|(a, b)| a.to_bits() == b.to_bits()),
            "instance {i}: split/concat is not the identity"
        );
    }
    check(
        7,
        "quantizer equivalences",
        true,
        &format!("3 equivalences bit-exact on {INSTANCES} random instances each"),
    );
}

// ---------------------------------------------------------------------------
// Reference-config run oracle (not a numbered criterion): the committed
// depthwise shapes config must actually learn something.
// ---------------------------------------------------------------------------

/// The `configs/ae_dvq.toml` protocol, driven through the library: after
/// 2000 steps the reconstruction error must sit at least 10x below the
/// untrained model's, evaluated on the identical image set.
#[test]
fn reference_config_run_beats_untrained_baseline_tenfold() {
    let ds = generate_shapes(&ShapeSpec { img: 8, n_samples: 512, seed: 3 }).unwrap();
    let cfg = AeTrainConfig {
        quantizer: AeQuantizer::Dvq,
        k: 32,
        l: 4,
        latent_d: 16,
        patch: 2,
        hidden: vec![32],
        beta: 0.25,
        optimizer: OptimizerKind::Adam,
        lr: 1e-3,
        steps: 2000,
        batch: 32,
        seed: 5,
        record_interval: 50,
        data_parallel: true,
    };

    let untrained = evaluate(&init_bottleneck(&cfg, &ds).unwrap(), &ds.images).unwrap();
    let mut sink = CollectSink::default();
    let report = train_autoencoder(&ds, &cfg, &mut sink).unwrap();
    let trained = evaluate(&report.state, &ds.images).unwrap();

    let baseline = untrained.loss.reconstruction;
    let learned = trained.loss.reconstruction;
    println!(
        "reference run: untrained reconstruction {baseline:.4}, trained {learned:.4} \
         ({:.1}x better)",
        baseline / learned
    );
    assert!(
        learned * 10.0 <= baseline,
        "trained reconstruction {learned} is not 10x below the untrained baseline {baseline}"
    );
}

//! Experiment engine: single-anchor trials, multi-anchor benchmarks, the
//! ablation grid, the DeepSVDD and cosine-to-centroid comparison variants and
//! throughput timing.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::augment::make_clones;
use crate::corpus::Corpus;
use crate::encoder::{CloneEncoder, EncoderConfig, MarginMode};
use crate::error::{Error, Result};
use crate::metrics::{delta_grid, CalibrationRow, LabeledScores, TrialMetrics, DEFAULT_DELTA_POINTS};
use crate::rng;
use crate::tensor_nn::{l2_norm_rows, Adam, Tensor};
use crate::trainer::{
    batch_schedule, prepare_training_data, sample_unlabeled, take_rows, top_k, train_on, AnchorModel,
    TrainConfig, TrainingData, DEFAULT_SCORE_BATCH,
};
use crate::{CHANNELS, IMAGE_SIDE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// PU objective, latent-norm score, threshold τ = μ + m.
    PuL2,
    /// PU objective, cosine similarity to the clone centroid (no threshold).
    PuCosine,
    /// One-class DeepSVDD on the same backbone, median threshold.
    Svdd,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::PuL2 => "pu_l2",
            Variant::PuCosine => "pu_cosine",
            Variant::Svdd => "svdd",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub anchor_id: usize,
    pub n_test_pos: usize,
    pub n_test_neg: usize,
    pub train: TrainConfig,
    pub variant: Variant,
}

impl Default for TrialSpec {
    fn default() -> Self {
        TrialSpec {
            anchor_id: 0,
            n_test_pos: 1000,
            n_test_neg: 1000,
            train: TrainConfig::default(),
            variant: Variant::PuL2,
        }
    }
}

/// Outcome of one anchor trial. Deterministic given corpus, spec and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub anchor_id: usize,
    pub variant: Variant,
    pub metrics: TrialMetrics,
    pub mu: Option<f64>,
    pub m: Option<f64>,
    pub tau: Option<f64>,
    /// Mean training loss over the first and the last epoch.
    pub first_epoch_loss: f64,
    pub last_epoch_loss: f64,
    /// Mean latent norm (or distance to centre) of held-out positives/negatives.
    pub mean_test_pos_norm: f64,
    pub mean_test_neg_norm: f64,
    /// Held-out negatives that were also in the training unlabeled sample.
    pub test_neg_overlap: usize,
    /// Held-out negatives sharing the anchor's class label, when labels exist.
    pub latent_duplicates: Option<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub train_secs: f64,
    pub score_secs: f64,
}

/// Held-out evaluation images for one anchor.
#[derive(Debug, Clone)]
pub struct TestSet {
    pub positives: Tensor,
    pub negatives: Tensor,
    pub negative_indices: Vec<usize>,
}

pub fn build_test_set(corpus: &Corpus, spec: &TrialSpec) -> Result<TestSet> {
    let anchor = spec.anchor_id;
    let mut aug = spec.train.augment;
    aug.seed = rng::derive_indexed(spec.train.seed, "test-clones", anchor as u64);
    let positives = make_clones(corpus.get(anchor)?, spec.n_test_pos, &aug)?;
    let mut nrng = rng::indexed_stream(spec.train.seed, "test-negatives", anchor as u64);
    let negative_indices = sample_unlabeled(corpus.len(), anchor, spec.n_test_neg, &mut nrng)?;
    let negatives = Tensor::new(
        vec![spec.n_test_neg, CHANNELS, IMAGE_SIDE, IMAGE_SIDE],
        corpus.gather(&negative_indices)?,
    )?;
    Ok(TestSet {
        positives,
        negatives,
        negative_indices,
    })
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn epoch_means(losses: &[f64], steps_per_epoch: usize) -> (f64, f64) {
    let first = mean(&losses[..steps_per_epoch.min(losses.len())]);
    let last = mean(&losses[losses.len().saturating_sub(steps_per_epoch)..]);
    (first, last)
}

/// Cosine similarity of each query embedding to the mean positive embedding.
/// An all-zero query embedding scores −1.
pub fn score_cosine_centroid(model: &CloneEncoder, positives: &Tensor, queries: &Tensor) -> Result<Vec<f32>> {
    let d = model.embed_dim();
    let pos = model.embed_images(positives.data(), DEFAULT_SCORE_BATCH)?;
    let n_pos = pos.dim(0) as f32;
    let mut centroid = vec![0.0f32; d];
    for row in pos.data().chunks_exact(d) {
        for (c, v) in centroid.iter_mut().zip(row) {
            *c += v / n_pos;
        }
    }
    cosine_to(&centroid, &model.embed_images(queries.data(), DEFAULT_SCORE_BATCH)?)
}

/// Cosine similarity of each row of `embeddings` to `centroid`.
pub fn cosine_to(centroid: &[f32], embeddings: &Tensor) -> Result<Vec<f32>> {
    let c_norm = centroid.iter().map(|v| v * v).sum::<f32>().sqrt();
    if c_norm == 0.0 {
        return Err(Error::InvalidArgument("cosine centroid is the zero vector".into()));
    }
    Ok(embeddings
        .data()
        .chunks_exact(centroid.len())
        .map(|row| {
            let n = row.iter().map(|v| v * v).sum::<f32>().sqrt();
            if n == 0.0 {
                -1.0
            } else {
                row.iter().zip(centroid).map(|(a, b)| a * b).sum::<f32>() / (n * c_norm)
            }
        })
        .collect())
}

/// A DeepSVDD model: encoder plus its frozen centre.
#[derive(Debug, Clone)]
pub struct SvddModel {
    pub anchor_id: usize,
    pub encoder: CloneEncoder,
    pub center: Vec<f32>,
    pub loss_trace: Vec<f32>,
}

impl SvddModel {
    /// `s(x) = −‖f(x) − c‖₂`.
    pub fn scores(&self, images: &Tensor) -> Result<Vec<f32>> {
        let z = self.encoder.embed_images(images.data(), DEFAULT_SCORE_BATCH)?;
        Ok(z.data()
            .chunks_exact(self.center.len())
            .map(|row| {
                -row.iter()
                    .zip(&self.center)
                    .map(|(a, c)| (a - c) * (a - c))
                    .sum::<f32>()
                    .sqrt()
            })
            .collect())
    }
}

pub fn train_svdd(corpus: &Corpus, anchor_id: usize, config: &TrainConfig) -> Result<SvddModel> {
    config.validate()?;
    let data = prepare_training_data(corpus, anchor_id, config)?;
    train_svdd_on(&data, anchor_id, config)
}

/// Mean squared distance of each embedding row to `center`, and its gradient.
pub fn svdd_loss(z: &Tensor, center: &[f32]) -> (f32, Tensor) {
    let d = center.len();
    let b = z.dim(0) as f32;
    let mut grad = vec![0.0f32; z.len()];
    let mut loss = 0.0f32;
    for (row, g) in z.data().chunks_exact(d).zip(grad.chunks_exact_mut(d)) {
        for ((v, c), gi) in row.iter().zip(center).zip(g.iter_mut()) {
            let diff = v - c;
            loss += diff * diff;
            *gi = 2.0 * diff / b;
        }
    }
    (loss / b, Tensor::new(z.shape().to_vec(), grad).expect("same shape"))
}

/// Centre = mean clone embedding under the freshly initialized network; then
/// minimize the mean squared distance of clone batches to it. Uses the same
/// initialization, batch schedule and optimizer settings as PU training.
pub fn train_svdd_on(data: &TrainingData, anchor_id: usize, config: &TrainConfig) -> Result<SvddModel> {
    let cfg = config.for_anchor(anchor_id);
    let mut model = CloneEncoder::init(cfg.encoder)?;
    let d = model.embed_dim();
    let z0 = model.embed_images(data.clones.data(), DEFAULT_SCORE_BATCH)?;
    let n = z0.dim(0) as f32;
    let mut center = vec![0.0f32; d];
    for row in z0.data().chunks_exact(d) {
        for (c, v) in center.iter_mut().zip(row) {
            *c += v / n;
        }
    }
    let opt = Adam {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        ..Adam::default()
    };
    let mut trace = Vec::with_capacity(cfg.total_steps());
    for (step, (pos_rows, _)) in batch_schedule(&cfg, anchor_id).iter().enumerate() {
        let pos = take_rows(&data.clones, pos_rows);
        let (z, cache) = model.forward_train(&pos)?;
        let (loss, grad) = svdd_loss(&z, &center);
        if !loss.is_finite() {
            return Err(Error::NonFinite { step });
        }
        trace.push(loss);
        model.backward(&cache, &grad)?;
        opt.step(model.network_params_mut());
    }
    Ok(SvddModel {
        anchor_id,
        encoder: model,
        center,
        loss_trace: trace,
    })
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| f64::from(x)).collect()
}

pub fn run_trial(corpus: &Corpus, spec: &TrialSpec) -> Result<TrialResult> {
    run_trial_timed(corpus, spec).map(|(r, _)| r)
}

pub fn run_trial_timed(corpus: &Corpus, spec: &TrialSpec) -> Result<(TrialResult, PhaseTimings)> {
    spec.train.validate()?;
    if spec.n_test_neg >= corpus.len() || spec.n_test_pos == 0 || spec.n_test_neg == 0 {
        return Err(Error::InvalidArgument(format!(
            "need 1 ≤ n_test_neg < corpus size ({}), got {}",
            corpus.len(),
            spec.n_test_neg
        )));
    }
    let anchor = spec.anchor_id;
    let deltas = delta_grid(DEFAULT_DELTA_POINTS);
    let t0 = Instant::now();
    let data = prepare_training_data(corpus, anchor, &spec.train)?;
    let test = build_test_set(corpus, spec)?;
    let steps_per_epoch = spec.train.steps_per_epoch();

    let overlap = test
        .negative_indices
        .iter()
        .filter(|i| data.unlabeled_indices.contains(i))
        .count();
    let latent_duplicates = corpus.labels().map(|labels| {
        test.negative_indices
            .iter()
            .filter(|&&i| labels[i] == labels[anchor])
            .count()
    });

    let (result, timings) = match spec.variant {
        Variant::PuL2 | Variant::PuCosine => {
            let model = train_on(&data, anchor, &spec.train, &mut |_, _| {})?;
            let train_secs = t0.elapsed().as_secs_f64();
            let t1 = Instant::now();
            let pos_norms = model.encoder.latent_norms_of(test.positives.data(), DEFAULT_SCORE_BATCH)?;
            let neg_norms = model.encoder.latent_norms_of(test.negatives.data(), DEFAULT_SCORE_BATCH)?;
            let (scores, tau) = match spec.variant {
                Variant::PuL2 => {
                    let neg = |v: &[f32]| v.iter().map(|&x| -f64::from(x)).collect::<Vec<_>>();
                    (
                        LabeledScores::new(neg(&pos_norms), neg(&neg_norms)),
                        Some(f64::from(model.tau)),
                    )
                }
                _ => {
                    let pos = score_cosine_centroid(&model.encoder, &data.clones, &test.positives)?;
                    let neg = score_cosine_centroid(&model.encoder, &data.clones, &test.negatives)?;
                    (LabeledScores::from_f32(&pos, &neg), None)
                }
            };
            let metrics = TrialMetrics::evaluate(&scores, tau, &deltas)?;
            let score_secs = t1.elapsed().as_secs_f64();
            let losses: Vec<f64> = model
                .train_loss_trace
                .iter()
                .map(|r| f64::from(r.loss.total))
                .collect();
            let (first, last) = epoch_means(&losses, steps_per_epoch);
            let thresholded = matches!(spec.variant, Variant::PuL2);
            (
                TrialResult {
                    anchor_id: anchor,
                    variant: spec.variant,
                    metrics,
                    mu: Some(f64::from(model.mu)),
                    m: Some(f64::from(model.m)),
                    tau: if thresholded { Some(f64::from(model.tau)) } else { None },
                    first_epoch_loss: first,
                    last_epoch_loss: last,
                    mean_test_pos_norm: mean(&to_f64(&pos_norms)),
                    mean_test_neg_norm: mean(&to_f64(&neg_norms)),
                    test_neg_overlap: overlap,
                    latent_duplicates,
                },
                PhaseTimings {
                    train_secs,
                    score_secs,
                },
            )
        }
        Variant::Svdd => {
            let model = train_svdd_on(&data, anchor, &spec.train)?;
            let train_secs = t0.elapsed().as_secs_f64();
            let t1 = Instant::now();
            let pos = to_f64(&model.scores(&test.positives)?);
            let neg = to_f64(&model.scores(&test.negatives)?);
            let mut all: Vec<f64> = pos.iter().chain(&neg).copied().collect();
            let threshold = median(&mut all);
            let scores = LabeledScores::new(pos.clone(), neg.clone());
            let tau = -threshold;
            let metrics = TrialMetrics::evaluate(&scores, Some(tau), &deltas)?;
            let score_secs = t1.elapsed().as_secs_f64();
            let losses: Vec<f64> = model.loss_trace.iter().map(|&l| f64::from(l)).collect();
            let (first, last) = epoch_means(&losses, steps_per_epoch);
            (
                TrialResult {
                    anchor_id: anchor,
                    variant: spec.variant,
                    metrics,
                    mu: None,
                    m: None,
                    tau: Some(tau),
                    first_epoch_loss: first,
                    last_epoch_loss: last,
                    mean_test_pos_norm: -mean(&pos),
                    mean_test_neg_norm: -mean(&neg),
                    test_neg_overlap: overlap,
                    latent_duplicates,
                },
                PhaseTimings {
                    train_secs,
                    score_secs,
                },
            )
        }
    };
    Ok((result, timings))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Stats {
        if values.is_empty() {
            return Stats::default();
        }
        let mean = mean(values);
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
        Stats {
            mean,
            std: var.sqrt(),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Means over anchors of per-anchor metrics. Operating-point means are absent
/// for threshold-free variants.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub auroc: f64,
    pub auprc: f64,
    pub f1_best: f64,
}

impl Aggregate {
    pub fn of(trials: &[TrialResult]) -> Aggregate {
        let ops: Vec<_> = trials.iter().filter_map(|t| t.metrics.operating).collect();
        let op_mean = |f: &dyn Fn(&crate::metrics::OperatingPoint) -> f64| {
            if ops.is_empty() {
                None
            } else {
                Some(mean(&ops.iter().map(f).collect::<Vec<_>>()))
            }
        };
        let col = |f: &dyn Fn(&TrialResult) -> f64| mean(&trials.iter().map(f).collect::<Vec<_>>());
        Aggregate {
            precision: op_mean(&|o| o.prf1.precision),
            recall: op_mean(&|o| o.prf1.recall),
            f1: op_mean(&|o| o.prf1.f1),
            auroc: col(&|t| t.metrics.auroc),
            auprc: col(&|t| t.metrics.auprc),
            f1_best: col(&|t| t.metrics.f1_best),
        }
    }
}

/// Per-δ mean over anchors of the calibration rows.
pub fn aggregate_calibration(trials: &[TrialResult]) -> Vec<CalibrationRow> {
    let with: Vec<&Vec<CalibrationRow>> = trials
        .iter()
        .map(|t| &t.metrics.calibration)
        .filter(|c| !c.is_empty())
        .collect();
    let Some(first) = with.first() else {
        return vec![];
    };
    let n = with.len() as f64;
    (0..first.len())
        .map(|i| CalibrationRow {
            delta: first[i].delta,
            precision: with.iter().map(|c| c[i].precision).sum::<f64>() / n,
            recall: with.iter().map(|c| c[i].recall).sum::<f64>() / n,
            f1: with.iter().map(|c| c[i].f1).sum::<f64>() / n,
        })
        .collect()
}

/// Published figures for methods that are not re-implemented here, kept only
/// as context next to measured numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportedReference {
    pub note: String,
    pub cifar10_f1: Vec<(String, f64)>,
}

impl Default for ReportedReference {
    fn default() -> Self {
        ReportedReference {
            note: "published values, not recomputed".into(),
            cifar10_f1: vec![
                ("proposed".into(), 96.37),
                ("byol".into(), 95.09),
                ("moco".into(), 94.75),
                ("simclr".into(), 94.71),
                ("svdd".into(), 92.32),
            ],
        }
    }
}

/// Deterministic part of a benchmark run; wall-clock timings are reported
/// separately in [`BenchmarkTimings`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub corpus_checksum: String,
    pub spec: TrialSpec,
    pub anchors: Vec<usize>,
    pub trials: Vec<TrialResult>,
    pub aggregate: Aggregate,
    pub mu_stats: Stats,
    pub m_stats: Stats,
    pub calibration: Vec<CalibrationRow>,
    pub reference: ReportedReference,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkTimings {
    pub per_anchor: Vec<PhaseTimings>,
    pub total_train_secs: f64,
    pub total_score_secs: f64,
    pub wall_secs: f64,
}

/// Draws `n` distinct anchors from the seeded `anchors` stream.
pub fn sample_anchors(corpus_len: usize, n: usize, seed: u64) -> Result<Vec<usize>> {
    if n == 0 || n > corpus_len {
        return Err(Error::InvalidArgument(format!(
            "cannot pick {n} anchors from a corpus of {corpus_len}"
        )));
    }
    let mut r = rng::stream(seed, "anchors");
    Ok(rand::seq::index::sample(&mut r, corpus_len, n).into_vec())
}

fn run_trials(
    corpus: &Corpus,
    anchors: &[usize],
    base: &TrialSpec,
    parallelism: usize,
) -> Result<Vec<(TrialResult, PhaseTimings)>> {
    use rayon::prelude::*;
    let job = |&anchor: &usize| {
        let spec = TrialSpec {
            anchor_id: anchor,
            ..*base
        };
        let out = run_trial_timed(corpus, &spec);
        if let Ok((r, t)) = &out {
            log::info!(
                "anchor {anchor} [{}]: f1={:?} auroc={:.4} train {:.2}s score {:.2}s",
                r.variant,
                r.metrics.operating.map(|o| o.prf1.f1),
                r.metrics.auroc,
                t.train_secs,
                t.score_secs
            );
        }
        out
    };
    if parallelism <= 1 {
        return anchors.iter().map(job).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    pool.install(|| anchors.par_iter().map(job).collect())
}

pub fn run_benchmark(
    corpus: &Corpus,
    n_anchors: usize,
    base: &TrialSpec,
    parallelism: usize,
) -> Result<(BenchmarkReport, BenchmarkTimings)> {
    let anchors = sample_anchors(corpus.len(), n_anchors, base.train.seed)?;
    run_benchmark_on(corpus, &anchors, base, parallelism)
}

pub fn run_benchmark_on(
    corpus: &Corpus,
    anchors: &[usize],
    base: &TrialSpec,
    parallelism: usize,
) -> Result<(BenchmarkReport, BenchmarkTimings)> {
    let start = Instant::now();
    let outcomes = run_trials(corpus, anchors, base, parallelism)?;
    let (trials, per_anchor): (Vec<_>, Vec<_>) = outcomes.into_iter().unzip();
    let mus: Vec<f64> = trials.iter().filter_map(|t| t.mu).collect();
    let ms: Vec<f64> = trials.iter().filter_map(|t| t.m).collect();
    let report = BenchmarkReport {
        corpus_checksum: corpus.checksum().to_string(),
        spec: TrialSpec {
            anchor_id: anchors.first().copied().unwrap_or(0),
            ..*base
        },
        anchors: anchors.to_vec(),
        aggregate: Aggregate::of(&trials),
        mu_stats: Stats::of(&mus),
        m_stats: Stats::of(&ms),
        calibration: aggregate_calibration(&trials),
        trials,
        reference: ReportedReference::default(),
    };
    let timings = BenchmarkTimings {
        total_train_secs: per_anchor.iter().map(|t: &PhaseTimings| t.train_secs).sum(),
        total_score_secs: per_anchor.iter().map(|t| t.score_secs).sum(),
        per_anchor,
        wall_secs: start.elapsed().as_secs_f64(),
    };
    Ok((report, timings))
}

impl BenchmarkReport {
    pub fn write_trials_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(
            w,
            "anchor_id,variant,mu,m,tau,precision,recall,f1,auroc,auprc,f1_best,tp,fp,fn,tn,test_neg_overlap"
        )?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for t in &self.trials {
            let op = t.metrics.operating;
            let c = op.map(|o| o.confusion);
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                t.anchor_id,
                t.variant,
                opt(t.mu),
                opt(t.m),
                opt(t.tau),
                opt(op.map(|o| o.prf1.precision)),
                opt(op.map(|o| o.prf1.recall)),
                opt(op.map(|o| o.prf1.f1)),
                t.metrics.auroc,
                t.metrics.auprc,
                t.metrics.f1_best,
                c.map(|c| c.tp.to_string()).unwrap_or_default(),
                c.map(|c| c.fp.to_string()).unwrap_or_default(),
                c.map(|c| c.fn_.to_string()).unwrap_or_default(),
                c.map(|c| c.tn.to_string()).unwrap_or_default(),
                t.test_neg_overlap
            )?;
        }
        Ok(())
    }

    /// Per-anchor δ tables followed by the `mean` rows.
    pub fn write_calibration_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "anchor_id,delta,precision,recall,f1")?;
        for t in &self.trials {
            for r in &t.metrics.calibration {
                writeln!(w, "{},{},{},{},{}", t.anchor_id, r.delta, r.precision, r.recall, r.f1)?;
            }
        }
        for r in &self.calibration {
            writeln!(w, "mean,{},{},{},{}", r.delta, r.precision, r.recall, r.f1)?;
        }
        Ok(())
    }

    /// μ and m per anchor, for the stability histograms.
    pub fn write_mu_m_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "anchor_id,mu,m")?;
        for t in &self.trials {
            if let (Some(mu), Some(m)) = (t.mu, t.m) {
                writeln!(w, "{},{mu},{m}", t.anchor_id)?;
            }
        }
        Ok(())
    }
}

/// One configuration of the ablation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationVariant {
    pub label: String,
    pub embed_dim: usize,
    pub lambda_var: f32,
    pub margin: MarginMode,
    pub weight_decay: f32,
    pub variant: Variant,
}

impl AblationVariant {
    pub fn spec(&self, base: &TrialSpec) -> TrialSpec {
        let mut s = *base;
        s.variant = self.variant;
        s.train.weight_decay = self.weight_decay;
        s.train.loss.lambda_var = self.lambda_var;
        s.train.encoder = EncoderConfig {
            embed_dim: self.embed_dim,
            margin: self.margin,
            seed: s.train.encoder.seed,
        };
        s
    }
}

/// The five ablation rows.
pub fn ablation_variants() -> Vec<AblationVariant> {
    let fixed = MarginMode::Fixed { value: 0.5 };
    let row = |label: &str, embed_dim, lambda_var, margin, weight_decay, variant| AblationVariant {
        label: label.into(),
        embed_dim,
        lambda_var,
        margin,
        weight_decay,
        variant,
    };
    vec![
        row("L2 + learned m", 128, 0.1, MarginMode::Learned, 0.0, Variant::PuL2),
        row("L2 + fixed m", 64, 0.0, fixed, 0.0, Variant::PuL2),
        row("L2 + fixed m + WD", 128, 0.1, fixed, 1e-4, Variant::PuL2),
        row("L2 + learned m + λ_var", 64, 0.1, MarginMode::Learned, 0.0, Variant::PuL2),
        row("Cosine to centroid (best-F1)", 128, 0.1, fixed, 1e-4, Variant::PuCosine),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: AblationVariant,
    pub f1_op: Option<f64>,
    pub auroc: f64,
    pub auprc: f64,
    pub f1_best: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub anchors: Vec<usize>,
    pub rows: Vec<AblationRow>,
    pub reports: Vec<BenchmarkReport>,
}

impl AblationTable {
    pub fn row(&self, label: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant.label == label)
    }

    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "variant,d,lambda_var,m,wd,f1_op,auroc,auprc,f1_best")?;
        for r in &self.rows {
            let v = &r.variant;
            let m = match v.margin {
                MarginMode::Learned => "learned".to_string(),
                MarginMode::Fixed { value } => format!("{value}"),
            };
            let f1_op = r.f1_op.map(|x| format!("{x:.4}")).unwrap_or_else(|| "--".into());
            writeln!(
                w,
                "\"{}\",{},{},{},{},{},{:.4},{:.4},{:.4}",
                v.label, v.embed_dim, v.lambda_var, m, v.weight_decay, f1_op, r.auroc, r.auprc, r.f1_best
            )?;
        }
        Ok(())
    }
}

/// Runs every ablation row on the same anchors.
pub fn run_ablation_grid(
    corpus: &Corpus,
    n_anchors: usize,
    base: &TrialSpec,
    parallelism: usize,
) -> Result<AblationTable> {
    let anchors = sample_anchors(corpus.len(), n_anchors, base.train.seed)?;
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for v in ablation_variants() {
        let (report, _) = run_benchmark_on(corpus, &anchors, &v.spec(base), parallelism)?;
        rows.push(AblationRow {
            f1_op: report.aggregate.f1,
            auroc: report.aggregate.auroc,
            auprc: report.aggregate.auprc,
            f1_best: report.aggregate.f1_best,
            variant: v,
        });
        reports.push(report);
    }
    Ok(AblationTable {
        anchors,
        rows,
        reports,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Throughput {
    pub n_images: usize,
    pub k: usize,
    pub train_secs: f64,
    pub score_secs: f64,
    pub top_k_secs: f64,
    pub images_per_sec: f64,
}

/// Times scoring of the whole corpus and top-k extraction with a trained model.
pub fn time_scoring(corpus: &Corpus, model: &AnchorModel, k: usize) -> Result<Throughput> {
    let t0 = Instant::now();
    let norms = l2_norm_rows(&model.encoder.embed_images(corpus.pixels(), DEFAULT_SCORE_BATCH)?)?;
    let scores: Vec<f32> = norms.data().iter().map(|n| -n).collect();
    let score_secs = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let top = top_k(&scores, k);
    let top_k_secs = t1.elapsed().as_secs_f64();
    debug_assert!(top.len() == k.min(scores.len()));
    Ok(Throughput {
        n_images: corpus.len(),
        k,
        train_secs: 0.0,
        score_secs,
        top_k_secs,
        images_per_sec: corpus.len() as f64 / score_secs.max(1e-12),
    })
}

/// Train, score and rank end-to-end for one anchor, single-threaded.
pub fn measure_throughput(corpus: &Corpus, anchor_id: usize, config: &TrainConfig, k: usize) -> Result<Throughput> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    pool.install(|| {
        let t0 = Instant::now();
        let model = crate::trainer::train_anchor(corpus, anchor_id, config)?;
        let train_secs = t0.elapsed().as_secs_f64();
        let mut t = time_scoring(corpus, &model, k)?;
        t.train_secs = train_secs;
        Ok(t)
    })
}

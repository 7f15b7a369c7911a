//! Per-anchor training and corpus scoring.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::{make_clones, AugmentConfig};
use crate::corpus::Corpus;
use crate::encoder::{read_f32, CloneEncoder, EncoderConfig, MarginMode};
use crate::error::{Error, Result};
use crate::pu_objective::{compute_mu, decision, pu_loss, PuLossConfig, PuLossValue};
use crate::rng;
use crate::tensor_nn::{l2_norm_rows, l2_norm_rows_backward, Adam, Tensor};
use crate::{CHANNELS, IMAGE_SIDE};

/// Training hyperparameters for one anchor.
///
/// All randomness (initialization, clones, unlabeled sample, shuffling) is
/// derived from `seed` and the anchor index; the `seed` fields of the nested
/// encoder and augmentation configs are overwritten per anchor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub n_pos: usize,
    pub n_unl: usize,
    pub batch_pos: usize,
    pub batch_unl: usize,
    pub epochs: usize,
    pub lr: f32,
    pub weight_decay: f32,
    pub encoder: EncoderConfig,
    pub augment: AugmentConfig,
    pub loss: PuLossConfig,
    pub seed: u64,
    /// Recompute μ over all training positives with the final weights instead
    /// of taking it from the last training batch.
    pub recompute_mu: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_pos: 128,
            n_unl: 128,
            batch_pos: 32,
            batch_unl: 32,
            epochs: 10,
            lr: 1e-3,
            weight_decay: 0.0,
            encoder: EncoderConfig::default(),
            augment: AugmentConfig::default(),
            loss: PuLossConfig::default(),
            seed: 0,
            recompute_mu: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.batch_pos == 0 || self.batch_unl == 0 || self.n_pos == 0 || self.n_unl == 0 {
            return bad("set and batch sizes must be positive");
        }
        if !self.n_pos.is_multiple_of(self.batch_pos) || !self.n_unl.is_multiple_of(self.batch_unl) {
            return bad("batch sizes must divide the set sizes");
        }
        if self.n_pos / self.batch_pos != self.n_unl / self.batch_unl {
            return bad("positive and unlabeled sets must yield the same number of batches");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.lr.is_nan() || self.lr <= 0.0 || self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return bad("lr must be positive and weight_decay non-negative");
        }
        self.encoder.validate()?;
        self.augment.validate()
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.n_pos / self.batch_pos
    }

    pub fn total_steps(&self) -> usize {
        self.epochs * self.steps_per_epoch()
    }

    /// Seeds of the nested configs for a given anchor.
    pub fn for_anchor(&self, anchor_id: usize) -> TrainConfig {
        let mut c = *self;
        c.encoder.seed = rng::derive_indexed(self.seed, "encoder-init", anchor_id as u64);
        c.augment.seed = rng::derive_indexed(self.seed, "train-clones", anchor_id as u64);
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: PuLossValue,
    pub m: f32,
}

#[derive(Debug, Clone)]
pub struct AnchorModel {
    pub anchor_id: usize,
    pub encoder: CloneEncoder,
    pub mu: f32,
    pub m: f32,
    pub tau: f32,
    pub train_loss_trace: Vec<StepRecord>,
}

impl AnchorModel {
    /// Encoder payload followed by the `(μ, m, τ)` trailer.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let write = |w: &mut std::io::BufWriter<std::fs::File>| -> std::io::Result<()> {
            self.encoder.write_to(w)?;
            for v in [self.mu, self.m, self.tau] {
                w.write_all(&v.to_le_bytes())?;
            }
            w.flush()
        };
        write(&mut w).map_err(|e| Error::io(path, e))
    }

    /// The anchor index is not part of the file; the caller supplies it.
    pub fn load(path: &Path, anchor_id: usize) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = std::io::BufReader::new(file);
        let read = |r: &mut std::io::BufReader<std::fs::File>| -> std::io::Result<AnchorModel> {
            let encoder = CloneEncoder::read_from(r)?;
            let mu = read_f32(r)?;
            let m = read_f32(r)?;
            let tau = read_f32(r)?;
            Ok(AnchorModel {
                anchor_id,
                encoder,
                mu,
                m,
                tau,
                train_loss_trace: vec![],
            })
        };
        read(&mut r).map_err(|e| Error::io(path, e))
    }

    pub fn write_loss_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "step,consistency,variance,hinge,total,mu,m")?;
        for r in &self.train_loss_trace {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.step, r.loss.consistency, r.loss.variance, r.loss.hinge, r.loss.total, r.loss.mu, r.m
            )?;
        }
        Ok(())
    }
}

/// Uniform sample without replacement from `0..corpus_len` minus `anchor_id`.
pub fn sample_unlabeled(
    corpus_len: usize,
    anchor_id: usize,
    count: usize,
    rng: &mut rng::Rng,
) -> Result<Vec<usize>> {
    if anchor_id >= corpus_len {
        return Err(Error::OutOfRange {
            index: anchor_id,
            len: corpus_len,
        });
    }
    if count >= corpus_len {
        return Err(Error::Corpus(format!(
            "cannot draw {count} unlabeled images from a corpus of {corpus_len}"
        )));
    }
    Ok(rand::seq::index::sample(rng, corpus_len - 1, count)
        .into_iter()
        .map(|i| if i >= anchor_id { i + 1 } else { i })
        .collect())
}

/// Clones and unlabeled images for one anchor; shared by every objective so
/// that variants trained under the same seed see identical data.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub clones: Tensor,
    pub unlabeled: Tensor,
    pub unlabeled_indices: Vec<usize>,
}

pub fn prepare_training_data(corpus: &Corpus, anchor_id: usize, config: &TrainConfig) -> Result<TrainingData> {
    let cfg = config.for_anchor(anchor_id);
    let anchor = corpus.get(anchor_id)?;
    let clones = make_clones(anchor, cfg.n_pos, &cfg.augment)?;
    let mut urng = rng::indexed_stream(cfg.seed, "unlabeled", anchor_id as u64);
    let unlabeled_indices = sample_unlabeled(corpus.len(), anchor_id, cfg.n_unl, &mut urng)?;
    let unlabeled = Tensor::new(
        vec![cfg.n_unl, CHANNELS, IMAGE_SIDE, IMAGE_SIDE],
        corpus.gather(&unlabeled_indices)?,
    )?;
    Ok(TrainingData {
        clones,
        unlabeled,
        unlabeled_indices,
    })
}

/// Gathers rows of an `N×…` tensor.
pub(crate) fn take_rows(t: &Tensor, rows: &[usize]) -> Tensor {
    let row_len: usize = t.shape()[1..].iter().product();
    let mut data = Vec::with_capacity(rows.len() * row_len);
    for &r in rows {
        data.extend_from_slice(&t.data()[r * row_len..(r + 1) * row_len]);
    }
    let mut shape = t.shape().to_vec();
    shape[0] = rows.len();
    Tensor::new(shape, data).expect("row gather keeps shape consistent")
}

/// Per-epoch shuffled batch schedule: `(positive rows, unlabeled rows)` per step.
pub(crate) fn batch_schedule(config: &TrainConfig, anchor_id: usize) -> Vec<(Vec<usize>, Vec<usize>)> {
    let mut srng = rng::indexed_stream(config.seed, "shuffle", anchor_id as u64);
    let mut out = Vec::with_capacity(config.total_steps());
    let mut pos: Vec<usize> = (0..config.n_pos).collect();
    let mut unl: Vec<usize> = (0..config.n_unl).collect();
    for _ in 0..config.epochs {
        pos.shuffle(&mut srng);
        unl.shuffle(&mut srng);
        for s in 0..config.steps_per_epoch() {
            out.push((
                pos[s * config.batch_pos..(s + 1) * config.batch_pos].to_vec(),
                unl[s * config.batch_unl..(s + 1) * config.batch_unl].to_vec(),
            ));
        }
    }
    out
}

pub fn train_anchor(corpus: &Corpus, anchor_id: usize, config: &TrainConfig) -> Result<AnchorModel> {
    train_anchor_with_progress(corpus, anchor_id, config, &mut |_, _| {})
}

pub fn train_anchor_with_progress(
    corpus: &Corpus,
    anchor_id: usize,
    config: &TrainConfig,
    progress: &mut dyn FnMut(usize, usize),
) -> Result<AnchorModel> {
    config.validate()?;
    let data = prepare_training_data(corpus, anchor_id, config)?;
    train_on(&data, anchor_id, config, progress)
}

/// Runs the PU optimisation on prepared data.
pub fn train_on(
    data: &TrainingData,
    anchor_id: usize,
    config: &TrainConfig,
    progress: &mut dyn FnMut(usize, usize),
) -> Result<AnchorModel> {
    let cfg = config.for_anchor(anchor_id);
    let mut model = CloneEncoder::init(cfg.encoder)?;
    let learned = matches!(cfg.encoder.margin, MarginMode::Learned);
    let opt = Adam {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        ..Adam::default()
    };
    let schedule = batch_schedule(&cfg, anchor_id);
    let total = schedule.len();
    let mut trace = Vec::with_capacity(total);
    let mut last_mu = 0.0f32;

    for (step, (pos_rows, unl_rows)) in schedule.iter().enumerate() {
        let pos = take_rows(&data.clones, pos_rows);
        let unl = take_rows(&data.unlabeled, unl_rows);
        let batch = Tensor::concat_batch(&[&pos, &unl])?;
        let (z, cache) = model.forward_train(&batch)?;
        let norms = l2_norm_rows(&z)?;
        let (p_norms, u_norms) = norms.data().split_at(pos_rows.len());

        let m = model.margin();
        let (loss, grad) = pu_loss(p_norms, u_norms, m, &cfg.loss)?;
        if !loss.total.is_finite() {
            return Err(Error::NonFinite { step });
        }
        last_mu = loss.mu;
        trace.push(StepRecord { step, loss, m });

        let mut g = grad.pos.clone();
        g.extend_from_slice(&grad.unl);
        let grad_norms = Tensor::new(vec![g.len()], g)?;
        let grad_z = l2_norm_rows_backward(&z, &norms, &grad_norms);
        model.backward(&cache, &grad_z)?;
        if learned {
            let raw = model.raw_margin.value.data()[0];
            model.raw_margin.grad.data_mut()[0] += grad.raw_margin(raw);
        }
        opt.step(model.trainable_params_mut());
        progress(step + 1, total);
    }

    let mu = if cfg.recompute_mu {
        compute_mu(&model.latent_norms_of(data.clones.data(), 256)?)?
    } else {
        last_mu
    };
    let m = model.margin();
    Ok(AnchorModel {
        anchor_id,
        encoder: model,
        mu,
        m,
        tau: mu + m,
        train_loss_trace: trace,
    })
}

/// Scores `s(x) = −‖f(x)‖₂` and clone decisions for every corpus image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub anchor_id: usize,
    pub tau: f32,
    pub scores: Vec<f32>,
    pub is_clone: Vec<bool>,
}

impl ScoreTable {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// The `k` highest scores, descending; ties go to the lower index.
    pub fn top_k(&self, k: usize) -> Vec<(usize, f32)> {
        top_k(&self.scores, k)
    }

    /// The single lowest-scoring image (highest index among ties).
    pub fn least_similar(&self) -> Option<(usize, f32)> {
        self.scores
            .iter()
            .copied()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
    }
}

fn rank_order(a: &(usize, f32), b: &(usize, f32)) -> std::cmp::Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Indices of the `k` largest scores, in descending score order with ties
/// broken by ascending index.
pub fn top_k(scores: &[f32], k: usize) -> Vec<(usize, f32)> {
    let mut all: Vec<(usize, f32)> = scores.iter().copied().enumerate().collect();
    let k = k.min(all.len());
    if k == 0 {
        return vec![];
    }
    if k < all.len() {
        all.select_nth_unstable_by(k - 1, rank_order);
        all.truncate(k);
    }
    all.sort_by(rank_order);
    all
}

pub const DEFAULT_SCORE_BATCH: usize = 256;

pub fn score_corpus(model: &AnchorModel, corpus: &Corpus, batch_size: usize) -> Result<ScoreTable> {
    let norms = model.encoder.latent_norms_of(corpus.pixels(), batch_size)?;
    Ok(ScoreTable {
        anchor_id: model.anchor_id,
        tau: model.tau,
        is_clone: norms.iter().map(|&n| decision(n, model.tau)).collect(),
        scores: norms.into_iter().map(|n| -n).collect(),
    })
}

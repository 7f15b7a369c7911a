//! Operating-point and ranking metrics over clone scores `s(x) = −‖f(x)‖₂`.
//!
//! An image is predicted to be a clone when `s ≥ −τ`; the boundary counts as
//! a clone.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabeledScores {
    pub pos_scores: Vec<f64>,
    pub neg_scores: Vec<f64>,
}

impl LabeledScores {
    pub fn new(pos_scores: Vec<f64>, neg_scores: Vec<f64>) -> Self {
        LabeledScores {
            pos_scores,
            neg_scores,
        }
    }

    pub fn from_f32(pos: &[f32], neg: &[f32]) -> Self {
        LabeledScores {
            pos_scores: pos.iter().map(|&v| f64::from(v)).collect(),
            neg_scores: neg.iter().map(|&v| f64::from(v)).collect(),
        }
    }

    fn check_nonempty(&self) -> Result<()> {
        if self.pos_scores.is_empty() || self.neg_scores.is_empty() {
            return Err(Error::InvalidArgument(
                "ranking metrics need at least one positive and one negative score".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

pub fn confusion_at(scores: &LabeledScores, tau: f64) -> Confusion {
    let cut = -tau;
    let tp = scores.pos_scores.iter().filter(|&&s| s >= cut).count();
    let fp = scores.neg_scores.iter().filter(|&&s| s >= cut).count();
    Confusion {
        tp,
        fp,
        fn_: scores.pos_scores.len() - tp,
        tn: scores.neg_scores.len() - fp,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision, recall and `F1 = 2PR/(P+R)`; each is 0 when its denominator is.
pub fn prf1(tp: usize, fp: usize, fn_: usize) -> Prf1 {
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Prf1 {
        precision,
        recall,
        f1,
    }
}

/// Mann–Whitney AUROC with average ranks; ties count one half.
pub fn auroc(scores: &LabeledScores) -> Result<f64> {
    scores.check_nonempty()?;
    let mut all: Vec<(f64, bool)> = scores
        .pos_scores
        .iter()
        .map(|&s| (s, true))
        .chain(scores.neg_scores.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Twice the rank sum of the positives, kept integral.
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        // ranks i+1 ..= j+1, average (i + j + 2) / 2
        let pos_in_group = all[i..=j].iter().filter(|x| x.1).count() as u128;
        rank_sum2 += pos_in_group * (i + j + 2) as u128;
        i = j + 1;
    }
    let p = scores.pos_scores.len() as u128;
    let n = scores.neg_scores.len() as u128;
    let u2 = rank_sum2 - p * (p + 1);
    Ok(u2 as f64 / (2 * p * n) as f64)
}

/// Precision–recall curve: one point per distinct score threshold (descending),
/// preceded by `(recall 0, precision at the highest threshold)`.
pub fn pr_curve(scores: &LabeledScores) -> Result<Vec<(f64, f64)>> {
    scores.check_nonempty()?;
    let mut all: Vec<(f64, bool)> = scores
        .pos_scores
        .iter()
        .map(|&s| (s, true))
        .chain(scores.neg_scores.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let total_pos = scores.pos_scores.len() as f64;
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < all.len() {
        let t = all[i].0;
        while i < all.len() && all[i].0 == t {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((tp as f64 / total_pos, tp as f64 / (tp + fp) as f64));
    }
    let first_precision = points[0].1;
    points.insert(0, (0.0, first_precision));
    Ok(points)
}

/// Trapezoidal area under the precision–recall curve.
pub fn auprc(scores: &LabeledScores) -> Result<f64> {
    let pts = pr_curve(scores)?;
    Ok(pts
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum())
}

/// Maximum F1 over every distinct score used as the threshold, with the
/// threshold `t` (predict clone iff `s ≥ t`) that attains it.
pub fn best_f1(scores: &LabeledScores) -> Result<(f64, f64)> {
    scores.check_nonempty()?;
    let mut all: Vec<(f64, bool)> = scores
        .pos_scores
        .iter()
        .map(|&s| (s, true))
        .chain(scores.neg_scores.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let total_pos = scores.pos_scores.len();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut best = (0.0f64, f64::INFINITY);
    let mut i = 0;
    while i < all.len() {
        let t = all[i].0;
        while i < all.len() && all[i].0 == t {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let f1 = prf1(tp, fp, total_pos - tp).f1;
        if f1 > best.0 {
            best = (f1, t);
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub delta: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub const DEFAULT_DELTA_POINTS: usize = 21;

/// `points` equally spaced offsets covering `[−0.5, 0.5]`.
pub fn delta_grid(points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![0.0];
    }
    let steps = (points - 1) as f64;
    (0..points).map(|i| i as f64 / steps - 0.5).collect()
}

/// Metrics at `τ + δ` for every offset.
pub fn calibration_sweep(scores: &LabeledScores, tau: f64, deltas: &[f64]) -> Vec<CalibrationRow> {
    deltas
        .iter()
        .map(|&delta| {
            let c = confusion_at(scores, tau + delta);
            let m = prf1(c.tp, c.fp, c.fn_);
            CalibrationRow {
                delta,
                precision: m.precision,
                recall: m.recall,
                f1: m.f1,
            }
        })
        .collect()
}

/// Metrics at a fixed threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub tau: f64,
    #[serde(flatten)]
    pub confusion: Confusion,
    #[serde(flatten)]
    pub prf1: Prf1,
}

impl OperatingPoint {
    pub fn at(scores: &LabeledScores, tau: f64) -> Self {
        let confusion = confusion_at(scores, tau);
        OperatingPoint {
            tau,
            confusion,
            prf1: prf1(confusion.tp, confusion.fp, confusion.fn_),
        }
    }
}

/// Everything measured for one anchor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    /// Absent for variants without an intrinsic threshold.
    pub operating: Option<OperatingPoint>,
    pub auroc: f64,
    pub auprc: f64,
    pub f1_best: f64,
    pub calibration: Vec<CalibrationRow>,
}

impl TrialMetrics {
    pub fn evaluate(scores: &LabeledScores, tau: Option<f64>, deltas: &[f64]) -> Result<Self> {
        let operating = tau.map(|t| OperatingPoint::at(scores, t));
        let calibration = tau
            .map(|t| calibration_sweep(scores, t, deltas))
            .unwrap_or_default();
        Ok(TrialMetrics {
            operating,
            auroc: auroc(scores)?,
            auprc: auprc(scores)?,
            f1_best: best_f1(scores)?.0,
            calibration,
        })
    }
}

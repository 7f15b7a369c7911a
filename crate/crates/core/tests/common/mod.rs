#![allow(dead_code)]

pub mod gradcheck;

use std::path::PathBuf;

use cloneforge::corpus::{load_cifar10_bin, Corpus};
use cloneforge::{IMAGE_LEN, IMAGE_SIDE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("img{i:05}")).collect()
}

/// Independent uniform pixels.
pub fn noise_corpus(n: usize, seed: u64) -> Corpus {
    let mut r = rng(seed);
    let images = (0..n * IMAGE_LEN).map(|_| r.gen::<f32>()).collect();
    Corpus::from_images(images, ids(n)).unwrap()
}

/// A smooth, structured image: a colour gradient with one bright square.
pub fn smooth_image(seed: u64) -> Vec<f32> {
    let mut r = rng(seed);
    let base: [f32; 3] = [r.gen_range(0.1..0.5), r.gen_range(0.1..0.5), r.gen_range(0.1..0.5)];
    let (x0, y0) = (r.gen_range(6..14usize), r.gen_range(6..14usize));
    let side = IMAGE_SIDE;
    let mut img = vec![0.0f32; IMAGE_LEN];
    for c in 0..3 {
        for y in 0..side {
            for x in 0..side {
                let mut v = base[c] + 0.3 * (x + y) as f32 / (2 * side) as f32;
                if (x0..x0 + 12).contains(&x) && (y0..y0 + 12).contains(&y) {
                    v = if c == 0 { 0.95 } else { 0.9 - 0.3 * c as f32 };
                }
                img[c * side * side + y * side + x] = v.clamp(0.0, 1.0);
            }
        }
    }
    img
}

/// Index 0 is a smooth anchor; everything else is uniform noise.
pub fn separable_corpus(n_noise: usize, seed: u64) -> Corpus {
    let mut images = smooth_image(seed);
    let mut r = rng(seed ^ 0x5eed);
    images.extend((0..n_noise * IMAGE_LEN).map(|_| r.gen::<f32>()));
    Corpus::from_images(images, ids(n_noise + 1)).unwrap()
}

/// Natural-looking synthetic scenes: a random background gradient with a few
/// coloured rectangles and discs and mild pixel noise.
pub fn scene_corpus(n: usize, seed: u64) -> Corpus {
    let side = IMAGE_SIDE as f32;
    let mut r = rng(seed);
    let mut images = Vec::with_capacity(n * IMAGE_LEN);
    for _ in 0..n {
        let bg0: [f32; 3] = [r.gen(), r.gen(), r.gen()];
        let bg1: [f32; 3] = [r.gen(), r.gen(), r.gen()];
        let angle: f32 = r.gen_range(0.0..std::f32::consts::TAU);
        let (ca, sa) = (angle.cos(), angle.sin());
        let mut img = vec![0.0f32; IMAGE_LEN];
        for y in 0..IMAGE_SIDE {
            for x in 0..IMAGE_SIDE {
                let t = (((x as f32 - 15.5) * ca + (y as f32 - 15.5) * sa) / side + 0.5).clamp(0.0, 1.0);
                for c in 0..3 {
                    img[c * IMAGE_LEN / 3 + y * IMAGE_SIDE + x] = bg0[c] * (1.0 - t) + bg1[c] * t;
                }
            }
        }
        for _ in 0..r.gen_range(1..4) {
            let color: [f32; 3] = [r.gen(), r.gen(), r.gen()];
            let (cx, cy) = (r.gen_range(4.0..28.0f32), r.gen_range(4.0..28.0f32));
            let (hw, hh) = (r.gen_range(2.0..9.0f32), r.gen_range(2.0..9.0f32));
            let disc = r.gen_bool(0.5);
            for y in 0..IMAGE_SIDE {
                for x in 0..IMAGE_SIDE {
                    let (dx, dy) = ((x as f32 - cx) / hw, (y as f32 - cy) / hh);
                    let inside = if disc { dx * dx + dy * dy <= 1.0 } else { dx.abs() <= 1.0 && dy.abs() <= 1.0 };
                    if inside {
                        for c in 0..3 {
                            img[c * IMAGE_LEN / 3 + y * IMAGE_SIDE + x] = color[c];
                        }
                    }
                }
            }
        }
        for v in img.iter_mut() {
            *v = (*v + r.gen_range(-0.03..0.03f32)).clamp(0.0, 1.0);
        }
        images.extend(img);
    }
    Corpus::from_images(images, ids(n)).unwrap()
}

/// CIFAR-10 binary batches from `CLONEFORGE_CIFAR_DIR` (or
/// `./data/cifar-10-batches-bin`), if present.
pub fn cifar_paths() -> Option<Vec<PathBuf>> {
    let dir = std::env::var_os("CLONEFORGE_CIFAR_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/cifar-10-batches-bin")));
    let mut files: Vec<PathBuf> = (1..=5)
        .map(|i| dir.join(format!("data_batch_{i}.bin")))
        .chain(std::iter::once(dir.join("test_batch.bin")))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    if files.is_empty() {
        None
    } else {
        Some(files)
    }
}

pub fn load_cifar() -> Option<Corpus> {
    cifar_paths().map(|p| load_cifar10_bin(&p).expect("CIFAR-10 batches present but unreadable"))
}

/// `P(s⁺ > s⁻) + ½·P(s⁺ = s⁻)` by enumerating every pair.
pub fn auroc_pairs(pos: &[f64], neg: &[f64]) -> f64 {
    let mut twice = 0u128;
    for p in pos {
        for n in neg {
            if p > n {
                twice += 2;
            } else if p == n {
                twice += 1;
            }
        }
    }
    twice as f64 / (2 * pos.len() * neg.len()) as f64
}

/// Area under the PR curve built by re-counting TP/FP from scratch at every
/// distinct threshold, starting from `(0, precision at the top threshold)`.
pub fn auprc_enumerate(pos: &[f64], neg: &[f64]) -> f64 {
    let mut thresholds: Vec<f64> = pos.iter().chain(neg).copied().collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut pts = Vec::new();
    for &t in &thresholds {
        let tp = pos.iter().filter(|&&s| s >= t).count() as f64;
        let fp = neg.iter().filter(|&&s| s >= t).count() as f64;
        pts.push((tp / pos.len() as f64, tp / (tp + fp)));
    }
    let mut area = 0.0;
    let mut prev = (0.0, pts[0].1);
    for p in pts {
        area += (p.0 - prev.0) * (p.1 + prev.1) / 2.0;
        prev = p;
    }
    area
}

/// Central differences of a scalar function, `h = 1e-3`.
pub fn central_diff(x: &[f32], h: f32, mut f: impl FnMut(&[f32]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * f64::from(h))
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn rel_err(analytic: &[f32], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (f64::from(*a) - n).powi(2))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|a| f64::from(*a).powi(2)).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|n| n.powi(2)).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// `Σ rᵢ·yᵢ` in f64.
pub fn weighted_sum(y: &[f32], r: &[f32]) -> f64 {
    y.iter().zip(r).map(|(a, b)| f64::from(*a) * f64::from(*b)).sum()
}

pub fn uniform(r: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| r.gen_range(lo..hi)).collect()
}

/// Random score sets with heavy ties: scores are drawn from a coarse grid.
pub fn tied_score_sets(count: usize, seed: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut r = rng(seed);
    (0..count)
        .map(|_| {
            let levels = r.gen_range(2..12);
            let (np, nn) = (r.gen_range(1..40), r.gen_range(1..40));
            let shift = r.gen_range(0..levels);
            let pos = (0..np).map(|_| (r.gen_range(0..levels) + shift / 2) as f64 / 4.0).collect();
            let neg = (0..nn).map(|_| r.gen_range(0..levels) as f64 / 4.0).collect();
            (pos, neg)
        })
        .collect()
}

pub struct MetricOracleReport {
    pub sets: usize,
    pub max_auroc_err: f64,
    pub max_auprc_err: f64,
    pub prf1_conventions: bool,
}

pub fn metric_oracles(count: usize, seed: u64) -> MetricOracleReport {
    use cloneforge::metrics::{auprc, auroc, prf1, LabeledScores};
    let mut max_auroc_err = 0.0f64;
    let mut max_auprc_err = 0.0f64;
    for (pos, neg) in tied_score_sets(count, seed) {
        let s = LabeledScores::new(pos.clone(), neg.clone());
        max_auroc_err = max_auroc_err.max((auroc(&s).unwrap() - auroc_pairs(&pos, &neg)).abs());
        max_auprc_err = max_auprc_err.max((auprc(&s).unwrap() - auprc_enumerate(&pos, &neg)).abs());
    }
    let zero = |p: cloneforge::metrics::Prf1| p.precision == 0.0 && p.recall == 0.0 && p.f1 == 0.0;
    let perfect = prf1(7, 0, 0);
    let prf1_conventions = zero(prf1(0, 0, 0))
        && zero(prf1(0, 5, 0))
        && zero(prf1(0, 0, 5))
        && zero(prf1(0, 3, 4))
        && (perfect.precision, perfect.recall, perfect.f1) == (1.0, 1.0, 1.0)
        && (prf1(1, 1, 0).f1 - 2.0 / 3.0).abs() < 1e-15;
    MetricOracleReport {
        sets: count,
        max_auroc_err,
        max_auprc_err,
        prf1_conventions,
    }
}

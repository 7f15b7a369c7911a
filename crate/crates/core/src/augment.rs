//! Clone generation: random affine warp, colour jitter and Gaussian blur,
//! applied in that order to a single 3×32×32 anchor image.
//!
//! Images are planar CHW `f32` slices of length [`IMAGE_LEN`] with values in
//! `[0, 1]`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor_nn::Tensor;
use crate::{CHANNELS, IMAGE_LEN, IMAGE_SIDE};

const PLANE: usize = IMAGE_SIDE * IMAGE_SIDE;

/// ITU-R BT.601 luma weights.
pub const LUMA: [f32; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub rot_deg: f32,
    pub translate_frac: f32,
    pub scale_range: [f32; 2],
    pub shear_deg: f32,
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
    pub blur_kernel: usize,
    pub blur_sigma_range: [f32; 2],
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            rot_deg: 20.0,
            translate_frac: 0.10,
            scale_range: [0.9, 1.1],
            shear_deg: 10.0,
            brightness: 0.3,
            contrast: 0.3,
            saturation: 0.2,
            blur_kernel: 3,
            blur_sigma_range: [0.1, 2.0],
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.rot_deg >= 0.0
            && self.translate_frac >= 0.0
            && self.scale_range[0] > 0.0
            && self.scale_range[0] <= self.scale_range[1]
            && self.shear_deg >= 0.0
            && (0.0..1.0).contains(&self.brightness)
            && (0.0..1.0).contains(&self.contrast)
            && (0.0..1.0).contains(&self.saturation)
            && self.blur_kernel % 2 == 1
            && self.blur_sigma_range[0] > 0.0
            && self.blur_sigma_range[0] <= self.blur_sigma_range[1];
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid augmentation config {self:?}")))
        }
    }
}

fn uniform(rng: &mut rng::Rng, lo: f32, hi: f32) -> f32 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineParams {
    pub angle_deg: f32,
    /// Horizontal and vertical shift in pixels.
    pub translate: (f32, f32),
    pub scale: f32,
    pub shear_deg: f32,
}

impl AffineParams {
    pub const IDENTITY: AffineParams = AffineParams {
        angle_deg: 0.0,
        translate: (0.0, 0.0),
        scale: 1.0,
        shear_deg: 0.0,
    };

    pub fn sample(rng: &mut rng::Rng, cfg: &AugmentConfig) -> Self {
        let max_shift = cfg.translate_frac * IMAGE_SIDE as f32;
        AffineParams {
            angle_deg: uniform(rng, -cfg.rot_deg, cfg.rot_deg),
            translate: (
                uniform(rng, -max_shift, max_shift),
                uniform(rng, -max_shift, max_shift),
            ),
            scale: uniform(rng, cfg.scale_range[0], cfg.scale_range[1]),
            shear_deg: uniform(rng, -cfg.shear_deg, cfg.shear_deg),
        }
    }

    /// Inverse of the forward map `p ↦ c + t + R·Sh·s·(p − c)`, as a 2×3
    /// matrix taking output pixel coordinates to source coordinates.
    fn inverse_matrix(&self) -> [f32; 6] {
        let c = (IMAGE_SIDE as f32 - 1.0) / 2.0;
        let (sin, cos) = self.angle_deg.to_radians().sin_cos();
        let shear = self.shear_deg.to_radians().tan();
        // R · [[1, shear], [0, 1]] · scale
        let a = cos * self.scale;
        let b = (cos * shear - sin) * self.scale;
        let cc = sin * self.scale;
        let d = (sin * shear + cos) * self.scale;
        let det = a * d - b * cc;
        let (ia, ib, ic, id) = (d / det, -b / det, -cc / det, a / det);
        // src = c + M⁻¹ (dst − c − t)
        let ox = c + self.translate.0;
        let oy = c + self.translate.1;
        [ia, ib, c - ia * ox - ib * oy, ic, id, c - ic * ox - id * oy]
    }
}

/// Warps with bilinear sampling; samples outside the image read as 0.
pub fn apply_affine(img: &[f32], params: &AffineParams) -> Vec<f32> {
    let m = params.inverse_matrix();
    let side = IMAGE_SIDE as isize;
    let mut out = vec![0.0f32; IMAGE_LEN];
    for y in 0..IMAGE_SIDE {
        for x in 0..IMAGE_SIDE {
            let (xf, yf) = (x as f32, y as f32);
            let sx = m[0] * xf + m[1] * yf + m[2];
            let sy = m[3] * xf + m[4] * yf + m[5];
            let x0 = sx.floor();
            let y0 = sy.floor();
            let fx = sx - x0;
            let fy = sy - y0;
            let (x0, y0) = (x0 as isize, y0 as isize);
            let taps = [
                (x0, y0, (1.0 - fx) * (1.0 - fy)),
                (x0 + 1, y0, fx * (1.0 - fy)),
                (x0, y0 + 1, (1.0 - fx) * fy),
                (x0 + 1, y0 + 1, fx * fy),
            ];
            for ch in 0..CHANNELS {
                let plane = &img[ch * PLANE..(ch + 1) * PLANE];
                let mut acc = 0.0f32;
                for &(tx, ty, wgt) in &taps {
                    if wgt != 0.0 && tx >= 0 && ty >= 0 && tx < side && ty < side {
                        acc += wgt * plane[ty as usize * IMAGE_SIDE + tx as usize];
                    }
                }
                out[ch * PLANE + y * IMAGE_SIDE + x] = acc.clamp(0.0, 1.0);
            }
        }
    }
    out
}

pub fn random_affine(img: &[f32], rng: &mut rng::Rng, cfg: &AugmentConfig) -> Vec<f32> {
    apply_affine(img, &AffineParams::sample(rng, cfg))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JitterParams {
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
}

impl JitterParams {
    pub const IDENTITY: JitterParams = JitterParams {
        brightness: 1.0,
        contrast: 1.0,
        saturation: 1.0,
    };

    pub fn sample(rng: &mut rng::Rng, cfg: &AugmentConfig) -> Self {
        JitterParams {
            brightness: uniform(rng, 1.0 - cfg.brightness, 1.0 + cfg.brightness),
            contrast: uniform(rng, 1.0 - cfg.contrast, 1.0 + cfg.contrast),
            saturation: uniform(rng, 1.0 - cfg.saturation, 1.0 + cfg.saturation),
        }
    }
}

fn gray_at(img: &[f32], i: usize) -> f32 {
    LUMA[0] * img[i] + LUMA[1] * img[PLANE + i] + LUMA[2] * img[2 * PLANE + i]
}

/// Brightness, then contrast, then saturation, clamping after each stage.
pub fn apply_color_jitter(img: &[f32], p: &JitterParams) -> Vec<f32> {
    let mut out: Vec<f32> = img.iter().map(|&v| (v * p.brightness).clamp(0.0, 1.0)).collect();

    let mean_gray = (0..PLANE).map(|i| gray_at(&out, i)).sum::<f32>() / PLANE as f32;
    let c = p.contrast;
    for v in out.iter_mut() {
        *v = (c * *v + (1.0 - c) * mean_gray).clamp(0.0, 1.0);
    }

    let s = p.saturation;
    let gray: Vec<f32> = (0..PLANE).map(|i| gray_at(&out, i)).collect();
    for ch in 0..CHANNELS {
        for (i, g) in gray.iter().enumerate() {
            let v = &mut out[ch * PLANE + i];
            *v = (s * *v + (1.0 - s) * g).clamp(0.0, 1.0);
        }
    }
    out
}

pub fn color_jitter(img: &[f32], rng: &mut rng::Rng, cfg: &AugmentConfig) -> Vec<f32> {
    apply_color_jitter(img, &JitterParams::sample(rng, cfg))
}

/// Normalized 1-D Gaussian taps for an odd kernel size.
pub fn gaussian_kernel(size: usize, sigma: f32) -> Vec<f32> {
    let half = (size / 2) as isize;
    let taps: Vec<f32> = (-half..=half)
        .map(|i| (-((i * i) as f32) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f32 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Mirror index without repeating the edge sample (`-1 → 1`, `n → n-2`).
fn reflect(i: isize, n: isize) -> usize {
    let mut i = i;
    while i < 0 || i >= n {
        if i < 0 {
            i = -i;
        }
        if i >= n {
            i = 2 * (n - 1) - i;
        }
    }
    i as usize
}

/// Separable Gaussian blur with reflect padding, per channel.
pub fn apply_gaussian_blur(img: &[f32], kernel_size: usize, sigma: f32) -> Vec<f32> {
    let k = gaussian_kernel(kernel_size, sigma);
    let half = (kernel_size / 2) as isize;
    let n = IMAGE_SIDE as isize;
    let mut tmp = vec![0.0f32; IMAGE_LEN];
    let mut out = vec![0.0f32; IMAGE_LEN];
    for ch in 0..CHANNELS {
        let src = &img[ch * PLANE..(ch + 1) * PLANE];
        let t = &mut tmp[ch * PLANE..(ch + 1) * PLANE];
        for y in 0..IMAGE_SIDE {
            for x in 0..IMAGE_SIDE {
                t[y * IMAGE_SIDE + x] = k
                    .iter()
                    .enumerate()
                    .map(|(j, w)| w * src[y * IMAGE_SIDE + reflect(x as isize + j as isize - half, n)])
                    .sum();
            }
        }
        let o = &mut out[ch * PLANE..(ch + 1) * PLANE];
        for y in 0..IMAGE_SIDE {
            for x in 0..IMAGE_SIDE {
                let v: f32 = k
                    .iter()
                    .enumerate()
                    .map(|(j, w)| w * t[reflect(y as isize + j as isize - half, n) * IMAGE_SIDE + x])
                    .sum();
                o[y * IMAGE_SIDE + x] = v.clamp(0.0, 1.0);
            }
        }
    }
    out
}

pub fn gaussian_blur(img: &[f32], rng: &mut rng::Rng, cfg: &AugmentConfig) -> Vec<f32> {
    let sigma = uniform(rng, cfg.blur_sigma_range[0], cfg.blur_sigma_range[1]);
    apply_gaussian_blur(img, cfg.blur_kernel, sigma)
}

/// One augmented view: affine → jitter → blur.
pub fn augment_once(anchor: &[f32], rng: &mut rng::Rng, cfg: &AugmentConfig) -> Vec<f32> {
    let warped = random_affine(anchor, rng, cfg);
    let jittered = color_jitter(&warped, rng, cfg);
    gaussian_blur(&jittered, rng, cfg)
}

/// `count` augmented views of `anchor` as a `count×3×32×32` tensor. Clone
/// `i` draws from its own substream of `cfg.seed`, so the result does not
/// depend on how the work is scheduled.
pub fn make_clones(anchor: &[f32], count: usize, cfg: &AugmentConfig) -> Result<Tensor> {
    if anchor.len() != IMAGE_LEN {
        return Err(Error::Shape(format!(
            "anchor has {} values, expected {IMAGE_LEN}",
            anchor.len()
        )));
    }
    if count == 0 {
        return Err(Error::InvalidArgument("clone count must be at least 1".into()));
    }
    cfg.validate()?;
    let mut data = vec![0.0f32; count * IMAGE_LEN];
    data.par_chunks_mut(IMAGE_LEN).enumerate().for_each(|(i, dst)| {
        let mut rng = rng::indexed_stream(cfg.seed, "clone", i as u64);
        dst.copy_from_slice(&augment_once(anchor, &mut rng, cfg));
    });
    Tensor::new(vec![count, CHANNELS, IMAGE_SIDE, IMAGE_SIDE], data)
}

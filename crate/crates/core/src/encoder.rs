//! The clone encoder: three stride-2 5×5 convolutions with ReLU, global
//! average pooling and a linear projection, plus the raw margin parameter
//! whose softplus is the decision margin `m`.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor_nn::{
    adaptive_avg_pool_1x1, adaptive_avg_pool_1x1_backward, conv2d, conv2d_backward, l2_norm_rows,
    linear, linear_backward, relu, relu_backward, softplus, ConvCache, ConvGeometry, Param,
    Tensor,
};
use crate::{CHANNELS, IMAGE_LEN, IMAGE_SIDE};

const MAGIC: &[u8; 4] = b"CFE1";
const FORMAT_VERSION: u32 = 1;

/// Output channels of the three convolutions.
pub const CONV_CHANNELS: [usize; 3] = [32, 64, 128];
pub const KERNEL: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum MarginMode {
    /// `m = softplus(m̃)` with `m̃` trained alongside the network.
    Learned,
    /// A constant margin; `m̃` is never updated.
    Fixed { value: f32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub embed_dim: usize,
    pub margin: MarginMode,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            embed_dim: 128,
            margin: MarginMode::Learned,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 {
            return Err(Error::InvalidArgument("embed_dim must be positive".into()));
        }
        if let MarginMode::Fixed { value } = self.margin {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "fixed margin must be positive, got {value}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CloneEncoder {
    pub conv_w: [Param; 3],
    pub conv_b: [Param; 3],
    pub fc_w: Param,
    pub fc_b: Param,
    pub raw_margin: Param,
    pub config: EncoderConfig,
}

/// Activations kept from a training forward pass.
pub struct ForwardCache {
    convs: Vec<ConvCache>,
    activations: Vec<Tensor>,
    pooled: Tensor,
}

impl ForwardCache {
    /// On/off state of every ReLU unit, layer by layer.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.activations
            .iter()
            .flat_map(|a| a.data().iter().map(|&v| v > 0.0))
            .collect()
    }
}

fn uniform_fan_in(rng: &mut rng::Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f32).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape and data agree")
}

impl CloneEncoder {
    pub fn init(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        if config.embed_dim != 64 && config.embed_dim != 128 {
            log::warn!("embed_dim {} is outside the evaluated {{64, 128}}", config.embed_dim);
        }
        let mut rng = rng::stream(config.seed, "encoder-init");
        let mut in_ch = CHANNELS;
        let mut conv_w = Vec::with_capacity(3);
        let mut conv_b = Vec::with_capacity(3);
        for &out_ch in &CONV_CHANNELS {
            let fan_in = in_ch * KERNEL * KERNEL;
            conv_w.push(Param::new(uniform_fan_in(
                &mut rng,
                &[out_ch, in_ch, KERNEL, KERNEL],
                fan_in,
            )));
            conv_b.push(Param::new(Tensor::zeros(&[out_ch])));
            in_ch = out_ch;
        }
        let fc_w = Param::new(uniform_fan_in(&mut rng, &[config.embed_dim, in_ch], in_ch));
        let fc_b = Param::new(Tensor::zeros(&[config.embed_dim]));
        Ok(CloneEncoder {
            conv_w: conv_w.try_into().expect("three layers"),
            conv_b: conv_b.try_into().expect("three layers"),
            fc_w,
            fc_b,
            raw_margin: Param::scalar(0.0),
            config,
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    /// Total scalar count, including the raw margin.
    pub fn num_parameters(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }

    /// All parameters in persistence order.
    pub fn params(&self) -> Vec<&Param> {
        let mut out = Vec::with_capacity(9);
        for i in 0..3 {
            out.push(&self.conv_w[i]);
            out.push(&self.conv_b[i]);
        }
        out.push(&self.fc_w);
        out.push(&self.fc_b);
        out.push(&self.raw_margin);
        out
    }

    fn params_mut_all(&mut self) -> Vec<&mut Param> {
        let [w0, w1, w2] = &mut self.conv_w;
        let [b0, b1, b2] = &mut self.conv_b;
        vec![w0, b0, w1, b1, w2, b2, &mut self.fc_w, &mut self.fc_b, &mut self.raw_margin]
    }

    /// Parameters the optimizer should update. The raw margin is excluded in
    /// fixed-margin mode.
    pub fn trainable_params_mut(&mut self) -> Vec<&mut Param> {
        let learned = matches!(self.config.margin, MarginMode::Learned);
        let mut all = self.params_mut_all();
        if !learned {
            all.pop();
        }
        all
    }

    /// Network-only parameters (no margin), for objectives that have none.
    pub fn network_params_mut(&mut self) -> Vec<&mut Param> {
        let mut all = self.params_mut_all();
        all.pop();
        all
    }

    pub fn margin(&self) -> f32 {
        match self.config.margin {
            MarginMode::Learned => softplus(self.raw_margin.value.data()[0]),
            MarginMode::Fixed { value } => value,
        }
    }

    fn check_input(batch: &Tensor) -> Result<()> {
        if batch.rank() != 4
            || batch.dim(1) != CHANNELS
            || batch.dim(2) != IMAGE_SIDE
            || batch.dim(3) != IMAGE_SIDE
        {
            return Err(Error::Shape(format!(
                "encoder expects N×3×32×32 input, got {:?}",
                batch.shape()
            )));
        }
        Ok(())
    }

    pub fn forward_train(&self, batch: &Tensor) -> Result<(Tensor, ForwardCache)> {
        Self::check_input(batch)?;
        let geo = ConvGeometry::default();
        let mut convs = Vec::with_capacity(3);
        let mut activations: Vec<Tensor> = Vec::with_capacity(3);
        for i in 0..3 {
            let input = if i == 0 { batch } else { &activations[i - 1] };
            let (pre, cache) = conv2d(input, &self.conv_w[i], &self.conv_b[i], geo)?;
            convs.push(cache);
            activations.push(relu(&pre));
        }
        let n = batch.dim(0);
        let pooled = adaptive_avg_pool_1x1(&activations[2])?.reshape(&[n, CONV_CHANNELS[2]])?;
        let z = linear(&pooled, &self.fc_w, &self.fc_b)?;
        Ok((
            z,
            ForwardCache {
                convs,
                activations,
                pooled,
            },
        ))
    }

    /// Embeds a batch of images: `N×3×32×32 → N×d`.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        self.forward_train(batch).map(|(z, _)| z)
    }

    /// Accumulates parameter gradients given `∂L/∂z`.
    pub fn backward(&mut self, cache: &ForwardCache, grad_z: &Tensor) -> Result<()> {
        let d_pooled = linear_backward(&cache.pooled, grad_z, &mut self.fc_w, &mut self.fc_b);
        let n = d_pooled.dim(0);
        let d_pooled = d_pooled.reshape(&[n, CONV_CHANNELS[2], 1, 1])?;
        let mut grad = adaptive_avg_pool_1x1_backward(cache.activations[2].shape(), &d_pooled);
        for i in (0..3).rev() {
            let d_pre = relu_backward(&cache.activations[i], &grad);
            grad = conv2d_backward(&cache.convs[i], &d_pre, &mut self.conv_w[i], &mut self.conv_b[i])?;
        }
        Ok(())
    }

    pub fn latent_norms(&self, batch: &Tensor) -> Result<Tensor> {
        l2_norm_rows(&self.forward(batch)?)
    }

    /// Embeds a contiguous run of normalized images in chunks of `batch_size`.
    pub fn embed_images(&self, images: &[f32], batch_size: usize) -> Result<Tensor> {
        if !images.len().is_multiple_of(IMAGE_LEN) {
            return Err(Error::Shape(format!(
                "{} values is not a whole number of images",
                images.len()
            )));
        }
        let n = images.len() / IMAGE_LEN;
        let d = self.embed_dim();
        let mut out = Vec::with_capacity(n * d);
        for chunk in images.chunks(batch_size.max(1) * IMAGE_LEN) {
            let b = chunk.len() / IMAGE_LEN;
            let t = Tensor::new(vec![b, CHANNELS, IMAGE_SIDE, IMAGE_SIDE], chunk.to_vec())?;
            out.extend_from_slice(self.forward(&t)?.data());
        }
        Tensor::new(vec![n, d], out)
    }

    pub fn latent_norms_of(&self, images: &[f32], batch_size: usize) -> Result<Vec<f32>> {
        Ok(l2_norm_rows(&self.embed_images(images, batch_size)?)?.into_data())
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.config.embed_dim as u32).to_le_bytes())?;
        let (mode, fixed) = match self.config.margin {
            MarginMode::Learned => (0u8, 0.0f32),
            MarginMode::Fixed { value } => (1u8, value),
        };
        w.write_all(&[mode])?;
        w.write_all(&fixed.to_le_bytes())?;
        w.write_all(&self.config.seed.to_le_bytes())?;
        for p in self.params() {
            let shape = p.value.shape();
            w.write_all(&(shape.len() as u32).to_le_bytes())?;
            for &d in shape {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for &v in p.value.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> std::io::Result<Self> {
        use std::io::{Error as IoError, ErrorKind};
        let bad = |msg: String| IoError::new(ErrorKind::InvalidData, msg);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(bad(format!("bad magic {magic:?}")));
        }
        let version = read_u32(r)?;
        if version != FORMAT_VERSION {
            return Err(bad(format!("unsupported model version {version}")));
        }
        let embed_dim = read_u32(r)? as usize;
        let mut mode = [0u8; 1];
        r.read_exact(&mut mode)?;
        let fixed = read_f32(r)?;
        let mut seed = [0u8; 8];
        r.read_exact(&mut seed)?;
        let margin = match mode[0] {
            0 => MarginMode::Learned,
            1 => MarginMode::Fixed { value: fixed },
            m => return Err(bad(format!("unknown margin mode {m}"))),
        };
        let config = EncoderConfig {
            embed_dim,
            margin,
            seed: u64::from_le_bytes(seed),
        };
        let mut model = CloneEncoder::init(config).map_err(|e| bad(e.to_string()))?;
        for p in model.params_mut_all() {
            let rank = read_u32(r)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u32(r)? as usize);
            }
            if shape != p.value.shape() {
                return Err(bad(format!(
                    "parameter shape {shape:?} does not match expected {:?}",
                    p.value.shape()
                )));
            }
            for v in p.value.data_mut() {
                *v = read_f32(r)?;
            }
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        self.write_to(&mut f)
            .and_then(|_| f.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path).map_err(|e| Error::io(path, e))?);
        Self::read_from(&mut f).map_err(|e| Error::io(path, e))
    }
}

pub(crate) fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_f32(r: &mut impl Read) -> std::io::Result<f32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(f32::from_le_bytes(b))
}

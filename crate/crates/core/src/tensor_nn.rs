//! Dense float32 tensors and the handful of differentiable layers the clone
//! encoder needs. Every layer has an explicit forward and an exact analytic
//! backward; there is no tape or graph.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn fill(&mut self, value: f32) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Concatenates tensors along the leading (batch) axis.
    pub fn concat_batch(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
        let tail = &first.shape[1..];
        let mut n = 0;
        let mut data = Vec::with_capacity(parts.iter().map(|t| t.len()).sum());
        for t in parts {
            if &t.shape[1..] != tail {
                return Err(Error::Shape(format!(
                    "concat: {:?} vs {:?}",
                    t.shape, first.shape
                )));
            }
            n += t.shape[0];
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![n];
        shape.extend_from_slice(tail);
        Tensor::new(shape, data)
    }

    /// Rows `start..end` along the leading axis.
    pub fn slice_batch(&self, start: usize, end: usize) -> Tensor {
        let row: usize = self.shape[1..].iter().product();
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Tensor {
            shape,
            data: self.data[start * row..end * row].to_vec(),
        }
    }
}

/// A trainable tensor with its gradient and Adam moment buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
    pub adam_m: Tensor,
    pub adam_v: Tensor,
    pub step_count: u64,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let shape = value.shape().to_vec();
        Param {
            value,
            grad: Tensor::zeros(&shape),
            adam_m: Tensor::zeros(&shape),
            adam_v: Tensor::zeros(&shape),
            step_count: 0,
        }
    }

    pub fn scalar(value: f32) -> Self {
        Param::new(Tensor {
            shape: vec![1],
            data: vec![value],
        })
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }
}

/// `C = alpha * op(A) * op(B) + beta * C`, row-major, with `op` an optional
/// transpose. `A` is stored `m×k` (or `k×m` when `trans_a`), `B` is `k×n`
/// (or `n×k` when `trans_b`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    trans_a: bool,
    b: &[f32],
    trans_b: bool,
    c: &mut [f32],
    beta: f32,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slice lengths are checked above and the strides describe
    // exactly those row-major (or transposed) layouts.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a square-kernel 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Default for ConvGeometry {
    fn default() -> Self {
        ConvGeometry {
            kernel: 5,
            stride: 2,
            padding: 2,
        }
    }
}

impl ConvGeometry {
    pub fn output_side(&self, side: usize) -> usize {
        (side + 2 * self.padding - self.kernel) / self.stride + 1
    }
}

/// What the conv backward pass needs from its forward pass.
#[derive(Debug, Clone)]
pub struct ConvCache {
    col: Vec<f32>,
    input_shape: [usize; 4],
    out_h: usize,
    out_w: usize,
    geometry: ConvGeometry,
}

fn im2col(input: &Tensor, geo: ConvGeometry, out_h: usize, out_w: usize) -> Vec<f32> {
    let [n, c, h, w] = [input.dim(0), input.dim(1), input.dim(2), input.dim(3)];
    let kk = geo.kernel;
    let plane = out_h * out_w;
    let cols = n * plane;
    let mut col = vec![0.0f32; c * kk * kk * cols];
    let x = input.data();
    for ci in 0..c {
        for ky in 0..kk {
            for kx in 0..kk {
                let row = (ci * kk + ky) * kk + kx;
                let dst = &mut col[row * cols..(row + 1) * cols];
                for b in 0..n {
                    let src = &x[(b * c + ci) * h * w..(b * c + ci + 1) * h * w];
                    for oy in 0..out_h {
                        let iy = (oy * geo.stride + ky) as isize - geo.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src_row = &src[iy as usize * w..(iy as usize + 1) * w];
                        let dst_row = &mut dst[b * plane + oy * out_w..b * plane + (oy + 1) * out_w];
                        for (ox, d) in dst_row.iter_mut().enumerate() {
                            let ix = (ox * geo.stride + kx) as isize - geo.padding as isize;
                            if ix >= 0 && ix < w as isize {
                                *d = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    col
}

fn col2im(dcol: &[f32], shape: [usize; 4], geo: ConvGeometry, out_h: usize, out_w: usize) -> Vec<f32> {
    let [n, c, h, w] = shape;
    let kk = geo.kernel;
    let plane = out_h * out_w;
    let cols = n * plane;
    let mut dx = vec![0.0f32; n * c * h * w];
    for ci in 0..c {
        for ky in 0..kk {
            for kx in 0..kk {
                let row = (ci * kk + ky) * kk + kx;
                let src = &dcol[row * cols..(row + 1) * cols];
                for b in 0..n {
                    let dst = &mut dx[(b * c + ci) * h * w..(b * c + ci + 1) * h * w];
                    for oy in 0..out_h {
                        let iy = (oy * geo.stride + ky) as isize - geo.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let iy = iy as usize;
                        for ox in 0..out_w {
                            let ix = (ox * geo.stride + kx) as isize - geo.padding as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[iy * w + ix as usize] += src[b * plane + oy * out_w + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Cross-correlation (no kernel flip) of an `N×C_in×H×W` input with a
/// `C_out×C_in×k×k` weight, plus a per-output-channel bias.
pub fn conv2d(
    input: &Tensor,
    weight: &Param,
    bias: &Param,
    geo: ConvGeometry,
) -> Result<(Tensor, ConvCache)> {
    if input.rank() != 4 || weight.value.rank() != 4 {
        return Err(Error::Shape(format!(
            "conv2d expects rank-4 input and weight, got {:?} and {:?}",
            input.shape(),
            weight.value.shape()
        )));
    }
    let [n, c_in, h, w] = [input.dim(0), input.dim(1), input.dim(2), input.dim(3)];
    let ws = weight.value.shape();
    let c_out = ws[0];
    if ws[1] != c_in || ws[2] != geo.kernel || ws[3] != geo.kernel {
        return Err(Error::Shape(format!(
            "conv2d weight {ws:?} does not match input channels {c_in} / kernel {}",
            geo.kernel
        )));
    }
    if bias.value.shape() != [c_out] {
        return Err(Error::Shape(format!(
            "conv2d bias {:?} does not match {c_out} output channels",
            bias.value.shape()
        )));
    }
    if h + 2 * geo.padding < geo.kernel || w + 2 * geo.padding < geo.kernel {
        return Err(Error::Shape(format!("conv2d input {h}×{w} smaller than kernel")));
    }
    let out_h = geo.output_side(h);
    let out_w = geo.output_side(w);
    let plane = out_h * out_w;
    let k = c_in * geo.kernel * geo.kernel;
    let cols = n * plane;

    let col = im2col(input, geo, out_h, out_w);
    let mut tmp = vec![0.0f32; c_out * cols];
    gemm(c_out, k, cols, weight.value.data(), false, &col, false, &mut tmp, 0.0);

    let mut out = vec![0.0f32; n * c_out * plane];
    let b = bias.value.data();
    for co in 0..c_out {
        for bi in 0..n {
            let src = &tmp[co * cols + bi * plane..co * cols + (bi + 1) * plane];
            let dst = &mut out[(bi * c_out + co) * plane..(bi * c_out + co + 1) * plane];
            for (d, s) in dst.iter_mut().zip(src) {
                *d = s + b[co];
            }
        }
    }
    let cache = ConvCache {
        col,
        input_shape: [n, c_in, h, w],
        out_h,
        out_w,
        geometry: geo,
    };
    Ok((Tensor::new(vec![n, c_out, out_h, out_w], out)?, cache))
}

/// Accumulates weight and bias gradients and returns the input gradient.
pub fn conv2d_backward(
    cache: &ConvCache,
    grad_out: &Tensor,
    weight: &mut Param,
    bias: &mut Param,
) -> Result<Tensor> {
    let [n, c_in, h, w] = cache.input_shape;
    let c_out = weight.value.dim(0);
    let plane = cache.out_h * cache.out_w;
    if grad_out.shape() != [n, c_out, cache.out_h, cache.out_w] {
        return Err(Error::Shape(format!(
            "conv2d_backward: upstream {:?} vs expected {:?}",
            grad_out.shape(),
            [n, c_out, cache.out_h, cache.out_w]
        )));
    }
    let cols = n * plane;
    let k = c_in * cache.geometry.kernel * cache.geometry.kernel;

    // Upstream gradient reshaped to C_out × (N·H'·W').
    let mut g = vec![0.0f32; c_out * cols];
    let go = grad_out.data();
    let db = bias.grad.data_mut();
    for bi in 0..n {
        for co in 0..c_out {
            let src = &go[(bi * c_out + co) * plane..(bi * c_out + co + 1) * plane];
            g[co * cols + bi * plane..co * cols + (bi + 1) * plane].copy_from_slice(src);
            db[co] += src.iter().sum::<f32>();
        }
    }
    gemm(c_out, cols, k, &g, false, &cache.col, true, weight.grad.data_mut(), 1.0);

    let mut dcol = vec![0.0f32; k * cols];
    gemm(k, c_out, cols, weight.value.data(), true, &g, false, &mut dcol, 0.0);
    let dx = col2im(&dcol, cache.input_shape, cache.geometry, cache.out_h, cache.out_w);
    Tensor::new(vec![n, c_in, h, w], dx)
}

pub fn relu(input: &Tensor) -> Tensor {
    Tensor {
        shape: input.shape.clone(),
        data: input.data.iter().map(|&x| x.max(0.0)).collect(),
    }
}

/// `activation` may be either the ReLU input or its output: both are
/// positive on exactly the same entries.
pub fn relu_backward(activation: &Tensor, grad_out: &Tensor) -> Tensor {
    Tensor {
        shape: grad_out.shape.clone(),
        data: activation
            .data
            .iter()
            .zip(&grad_out.data)
            .map(|(&a, &g)| if a > 0.0 { g } else { 0.0 })
            .collect(),
    }
}

pub fn adaptive_avg_pool_1x1(input: &Tensor) -> Result<Tensor> {
    if input.rank() != 4 {
        return Err(Error::Shape(format!("pool expects rank 4, got {:?}", input.shape())));
    }
    let [n, c, h, w] = [input.dim(0), input.dim(1), input.dim(2), input.dim(3)];
    let plane = h * w;
    let data = input
        .data
        .chunks_exact(plane)
        .map(|p| p.iter().sum::<f32>() / plane as f32)
        .collect();
    Tensor::new(vec![n, c, 1, 1], data)
}

pub fn adaptive_avg_pool_1x1_backward(input_shape: &[usize], grad_out: &Tensor) -> Tensor {
    let plane = input_shape[2] * input_shape[3];
    let scale = 1.0 / plane as f32;
    let mut data = Vec::with_capacity(grad_out.len() * plane);
    for &g in grad_out.data() {
        data.extend(std::iter::repeat_n(g * scale, plane));
    }
    Tensor {
        shape: input_shape.to_vec(),
        data,
    }
}

/// `out = input · weightᵀ + bias` for an `N×F` input and a `d×F` weight.
pub fn linear(input: &Tensor, weight: &Param, bias: &Param) -> Result<Tensor> {
    if input.rank() != 2 || weight.value.rank() != 2 {
        return Err(Error::Shape(format!(
            "linear expects rank-2 input and weight, got {:?} and {:?}",
            input.shape(),
            weight.value.shape()
        )));
    }
    let (n, f) = (input.dim(0), input.dim(1));
    let (d, wf) = (weight.value.dim(0), weight.value.dim(1));
    if wf != f || bias.value.shape() != [d] {
        return Err(Error::Shape(format!(
            "linear: input features {f}, weight {:?}, bias {:?}",
            weight.value.shape(),
            bias.value.shape()
        )));
    }
    let mut out = Vec::with_capacity(n * d);
    for _ in 0..n {
        out.extend_from_slice(bias.value.data());
    }
    gemm(n, f, d, input.data(), false, weight.value.data(), true, &mut out, 1.0);
    Tensor::new(vec![n, d], out)
}

pub fn linear_backward(
    input: &Tensor,
    grad_out: &Tensor,
    weight: &mut Param,
    bias: &mut Param,
) -> Tensor {
    let (n, f) = (input.dim(0), input.dim(1));
    let d = weight.value.dim(0);
    gemm(d, n, f, grad_out.data(), true, input.data(), false, weight.grad.data_mut(), 1.0);
    let db = bias.grad.data_mut();
    for row in grad_out.data().chunks_exact(d) {
        for (b, g) in db.iter_mut().zip(row) {
            *b += g;
        }
    }
    let mut dx = vec![0.0f32; n * f];
    gemm(n, d, f, grad_out.data(), false, weight.value.data(), false, &mut dx, 0.0);
    Tensor {
        shape: vec![n, f],
        data: dx,
    }
}

/// `log(1 + eˣ)` without overflow for large `x`.
pub fn softplus(x: f32) -> f32 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Derivative of [`softplus`].
pub fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-row Euclidean norm of an `N×d` tensor.
pub fn l2_norm_rows(input: &Tensor) -> Result<Tensor> {
    if input.rank() != 2 {
        return Err(Error::Shape(format!("l2_norm_rows expects rank 2, got {:?}", input.shape())));
    }
    let d = input.dim(1);
    let data = input
        .data
        .chunks_exact(d.max(1))
        .map(|row| row.iter().map(|v| v * v).sum::<f32>().sqrt())
        .collect();
    Tensor::new(vec![input.dim(0)], data)
}

/// Gradient of the row norms: `g · z / ‖z‖`, and zero for an all-zero row.
pub fn l2_norm_rows_backward(input: &Tensor, norms: &Tensor, grad_out: &Tensor) -> Tensor {
    let d = input.dim(1);
    let mut data = vec![0.0f32; input.len()];
    for (r, (row, out)) in input.data.chunks_exact(d).zip(data.chunks_exact_mut(d)).enumerate() {
        let norm = norms.data[r];
        if norm > 0.0 {
            let s = grad_out.data[r] / norm;
            for (o, z) in out.iter_mut().zip(row) {
                *o = s * z;
            }
        }
    }
    Tensor {
        shape: input.shape.clone(),
        data,
    }
}

/// Adam with bias correction and optional L2-coupled weight decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl Adam {
    pub fn with_lr(lr: f32) -> Self {
        Adam { lr, ..Adam::default() }
    }

    /// Applies one update to every parameter and zeroes the gradients.
    pub fn step<'a>(&self, params: impl IntoIterator<Item = &'a mut Param>) {
        for p in params {
            p.step_count += 1;
            let t = p.step_count as i32;
            let bc1 = 1.0 - self.beta1.powi(t);
            let bc2 = 1.0 - self.beta2.powi(t);
            let value = p.value.data_mut();
            let grad = p.grad.data_mut();
            let m = p.adam_m.data_mut();
            let v = p.adam_v.data_mut();
            for i in 0..value.len() {
                let mut g = grad[i];
                if self.weight_decay > 0.0 {
                    g += self.weight_decay * value[i];
                }
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                value[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                grad[i] = 0.0;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn conv_output_shape_law() {
        let geo = ConvGeometry::default();
        assert_eq!(geo.output_side(32), 16);
        assert_eq!(geo.output_side(16), 8);
        assert_eq!(geo.output_side(8), 4);
        let x = Tensor::zeros(&[1, 3, 32, 32]);
        let w = Param::new(Tensor::zeros(&[32, 3, 5, 5]));
        let b = Param::new(Tensor::zeros(&[32]));
        let (y, _) = conv2d(&x, &w, &b, geo).unwrap();
        assert_eq!(y.shape(), &[1, 32, 16, 16]);
    }

    #[test]
    fn conv_zero_in_zero_out() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::zeros(&[2, 3, 8, 8]);
        let mut w = Param::new(random_tensor(&mut rng, &[4, 3, 5, 5]));
        let mut b = Param::new(Tensor::zeros(&[4]));
        let (y, cache) = conv2d(&x, &w, &b, ConvGeometry::default()).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        let g = Tensor::zeros(y.shape());
        let dx = conv2d_backward(&cache, &g, &mut w, &mut b).unwrap();
        assert!(w.grad.data().iter().all(|&v| v == 0.0));
        assert!(b.grad.data().iter().all(|&v| v == 0.0));
        assert!(dx.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_channel_mismatch_is_error() {
        let x = Tensor::zeros(&[1, 2, 8, 8]);
        let w = Param::new(Tensor::zeros(&[4, 3, 5, 5]));
        let b = Param::new(Tensor::zeros(&[4]));
        assert!(matches!(
            conv2d(&x, &w, &b, ConvGeometry::default()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn relu_examples() {
        let x = Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let g = Tensor::new(vec![3], vec![1.0, 1.0, 1.0]).unwrap();
        assert_eq!(relu_backward(&x, &g).data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn pool_means() {
        let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(adaptive_avg_pool_1x1(&x).unwrap().data(), &[2.5]);
        let c = Tensor::new(vec![1, 2, 3, 3], vec![0.25; 18]).unwrap();
        assert_eq!(adaptive_avg_pool_1x1(&c).unwrap().data(), &[0.25, 0.25]);
        let g = Tensor::new(vec![1, 1, 1, 1], vec![4.0]).unwrap();
        assert_eq!(adaptive_avg_pool_1x1_backward(&[1, 1, 2, 2], &g).data(), &[1.0; 4]);
    }

    #[test]
    fn linear_examples() {
        let x = Tensor::new(vec![1, 2], vec![3.0, 4.0]).unwrap();
        let w = Param::new(Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap());
        let b = Param::new(Tensor::zeros(&[1]));
        assert_eq!(linear(&x, &w, &b).unwrap().data(), &[7.0]);

        let eye = Param::new(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let b2 = Param::new(Tensor::zeros(&[2]));
        assert_eq!(linear(&x, &eye, &b2).unwrap().data(), x.data());

        let bad = Param::new(Tensor::zeros(&[1, 3]));
        assert!(linear(&x, &bad, &b).is_err());
    }

    #[test]
    fn softplus_values() {
        assert!((softplus(0.0) - std::f32::consts::LN_2).abs() < 1e-6);
        assert!(softplus(-40.0) >= 0.0);
        assert!((softplus(50.0) - 50.0).abs() < 1e-6);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-7);
    }

    #[test]
    fn l2_rows() {
        let z = Tensor::new(vec![2, 2], vec![3.0, 4.0, 0.0, 0.0]).unwrap();
        let n = l2_norm_rows(&z).unwrap();
        assert_eq!(n.data(), &[5.0, 0.0]);
        let g = Tensor::new(vec![2], vec![1.0, 1.0]).unwrap();
        let dz = l2_norm_rows_backward(&z, &n, &g);
        assert_eq!(dz.data(), &[0.6, 0.8, 0.0, 0.0]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = Param::scalar(0.0);
        p.grad.data_mut()[0] = 1.0;
        Adam::default().step([&mut p]);
        assert!((p.value.data()[0] + 1e-3).abs() < 1e-8);
        assert_eq!(p.grad.data()[0], 0.0);
    }

    #[test]
    fn adam_zero_grad_is_identity() {
        let mut p = Param::new(Tensor::new(vec![3], vec![0.5, -2.0, 7.0]).unwrap());
        let before = p.value.clone();
        for _ in 0..5 {
            Adam::default().step([&mut p]);
        }
        assert_eq!(p.value, before);
    }

    #[test]
    fn adam_weight_decay_matches_hand_computation() {
        // Two steps with decay 1e-4 against an f64 reference that folds the
        // decay into the gradient before the moment updates.
        let opt = Adam {
            weight_decay: 1e-4,
            ..Adam::default()
        };
        let mut p = Param::scalar(2.0);
        let grads = [0.3f64, -0.1];
        let (mut x, mut m, mut v) = (2.0f64, 0.0f64, 0.0f64);
        for (t, &g) in grads.iter().enumerate() {
            p.grad.data_mut()[0] = g as f32;
            opt.step([&mut p]);
            let g = g + 1e-4 * x;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let t = (t + 1) as i32;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= 1e-3 * mh / (vh.sqrt() + 1e-8);
        }
        assert!((p.value.data()[0] as f64 - x).abs() < 1e-6);
    }
}

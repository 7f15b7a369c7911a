//! Analytic gradients against central differences on random small instances.

use cloneforge::encoder::{CloneEncoder, EncoderConfig, MarginMode};
use cloneforge::pu_objective::{pu_loss, PuLossConfig};
use cloneforge::tensor_nn::{
    adaptive_avg_pool_1x1, adaptive_avg_pool_1x1_backward, conv2d, conv2d_backward, l2_norm_rows,
    l2_norm_rows_backward, linear, linear_backward, relu, relu_backward, sigmoid, softplus, ConvGeometry, Param,
    Tensor,
};
use rand::Rng;

use super::{central_diff, rel_err, rng, uniform, weighted_sum};

pub const H: f32 = 1e-3;

/// Float32 rounding of a three-layer forward pass, divided by 2h, leaves
/// about 1e-5 of absolute noise on each difference quotient.
pub const ENCODER_ATOL: f64 = 2e-5;
pub const ENCODER_RTOL: f64 = 1e-2;

#[derive(Debug, Clone)]
pub struct Check {
    pub op: &'static str,
    pub instance: usize,
    pub wrt: &'static str,
    pub rel_err: f64,
}

fn t(shape: &[usize], data: Vec<f32>) -> Tensor {
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn conv_instance(seed: u64, out: &mut Vec<Check>, instance: usize) {
    let mut r = rng(seed);
    let (n, c_in, c_out) = (r.gen_range(1..3), r.gen_range(1..4), r.gen_range(1..4));
    let geo = if r.gen_bool(0.5) {
        ConvGeometry::default()
    } else {
        ConvGeometry {
            kernel: 3,
            stride: r.gen_range(1..3),
            padding: 1,
        }
    };
    let side = r.gen_range(5..9);
    let k = geo.kernel;
    let x = uniform(&mut r, n * c_in * side * side, -1.0, 1.0);
    let wv = uniform(&mut r, c_out * c_in * k * k, -0.5, 0.5);
    let bv = uniform(&mut r, c_out, -0.5, 0.5);
    let in_shape = [n, c_in, side, side];
    let w_shape = [c_out, c_in, k, k];
    let forward = |x: &[f32], wv: &[f32], bv: &[f32]| {
        let w = Param::new(t(&w_shape, wv.to_vec()));
        let b = Param::new(t(&[c_out], bv.to_vec()));
        conv2d(&t(&in_shape, x.to_vec()), &w, &b, geo).unwrap()
    };
    let (y, cache) = forward(&x, &wv, &bv);
    let ry = uniform(&mut r, y.len(), -1.0, 1.0);
    let mut w = Param::new(t(&w_shape, wv.clone()));
    let mut b = Param::new(t(&[c_out], bv.clone()));
    let dx = conv2d_backward(&cache, &t(y.shape(), ry.clone()), &mut w, &mut b).unwrap();

    let fx = central_diff(&x, H, |p| weighted_sum(forward(p, &wv, &bv).0.data(), &ry));
    let fw = central_diff(&wv, H, |p| weighted_sum(forward(&x, p, &bv).0.data(), &ry));
    let fb = central_diff(&bv, H, |p| weighted_sum(forward(&x, &wv, p).0.data(), &ry));
    for (wrt, a, n) in [("input", dx.data(), fx), ("weight", w.grad.data(), fw), ("bias", b.grad.data(), fb)] {
        out.push(Check {
            op: "conv2d",
            instance,
            wrt,
            rel_err: rel_err(a, &n),
        });
    }
}

fn relu_instance(seed: u64, out: &mut Vec<Check>, instance: usize) {
    let mut r = rng(seed);
    let n = r.gen_range(4..40);
    // Keep inputs away from the kink so the difference quotient is valid.
    let x: Vec<f32> = (0..n)
        .map(|_| r.gen_range(0.01f32..1.0) * if r.gen_bool(0.5) { 1.0 } else { -1.0 })
        .collect();
    let ry = uniform(&mut r, n, -1.0, 1.0);
    let y = relu(&t(&[n], x.clone()));
    let g = relu_backward(&y, &t(&[n], ry.clone()));
    let f = central_diff(&x, H, |p| weighted_sum(relu(&t(&[n], p.to_vec())).data(), &ry));
    out.push(Check {
        op: "relu",
        instance,
        wrt: "input",
        rel_err: rel_err(g.data(), &f),
    });
}

fn pool_instance(seed: u64, out: &mut Vec<Check>, instance: usize) {
    let mut r = rng(seed);
    let shape = [r.gen_range(1..3), r.gen_range(1..4), r.gen_range(1..6), r.gen_range(1..6)];
    let len = shape.iter().product();
    let x = uniform(&mut r, len, -1.0, 1.0);
    let ry = uniform(&mut r, shape[0] * shape[1], -1.0, 1.0);
    let g = adaptive_avg_pool_1x1_backward(&shape, &t(&[shape[0], shape[1], 1, 1], ry.clone()));
    let f = central_diff(&x, H, |p| {
        weighted_sum(adaptive_avg_pool_1x1(&t(&shape, p.to_vec())).unwrap().data(), &ry)
    });
    out.push(Check {
        op: "adaptive_avg_pool",
        instance,
        wrt: "input",
        rel_err: rel_err(g.data(), &f),
    });
}

fn linear_instance(seed: u64, out: &mut Vec<Check>, instance: usize) {
    let mut r = rng(seed);
    let (n, fin, d) = (r.gen_range(1..5), r.gen_range(1..8), r.gen_range(1..6));
    let x = uniform(&mut r, n * fin, -1.0, 1.0);
    let wv = uniform(&mut r, d * fin, -1.0, 1.0);
    let bv = uniform(&mut r, d, -1.0, 1.0);
    let ry = uniform(&mut r, n * d, -1.0, 1.0);
    let forward = |x: &[f32], wv: &[f32], bv: &[f32]| {
        let w = Param::new(t(&[d, fin], wv.to_vec()));
        let b = Param::new(t(&[d], bv.to_vec()));
        linear(&t(&[n, fin], x.to_vec()), &w, &b).unwrap()
    };
    let mut w = Param::new(t(&[d, fin], wv.clone()));
    let mut b = Param::new(t(&[d], bv.clone()));
    let dx = linear_backward(&t(&[n, fin], x.clone()), &t(&[n, d], ry.clone()), &mut w, &mut b);
    let fx = central_diff(&x, H, |p| weighted_sum(forward(p, &wv, &bv).data(), &ry));
    let fw = central_diff(&wv, H, |p| weighted_sum(forward(&x, p, &bv).data(), &ry));
    let fb = central_diff(&bv, H, |p| weighted_sum(forward(&x, &wv, p).data(), &ry));
    for (wrt, a, n) in [("input", dx.data(), fx), ("weight", w.grad.data(), fw), ("bias", b.grad.data(), fb)] {
        out.push(Check {
            op: "linear",
            instance,
            wrt,
            rel_err: rel_err(a, &n),
        });
    }
}

fn softplus_instance(seed: u64, out: &mut Vec<Check>, instance: usize) {
    let mut r = rng(seed);
    let x = uniform(&mut r, 8, -6.0, 6.0);
    let g: Vec<f32> = x.iter().map(|&v| sigmoid(v)).collect();
    let f = central_diff(&x, H, |p| p.iter().map(|&v| f64::from(softplus(v))).sum());
    out.push(Check {
        op: "softplus",
        instance,
        wrt: "input",
        rel_err: rel_err(&g, &f),
    });
}

fn l2_instance(seed: u64, out: &mut Vec<Check>, instance: usize) {
    let mut r = rng(seed);
    let (n, d) = (r.gen_range(1..5), r.gen_range(1..9));
    let x = uniform(&mut r, n * d, -1.0, 1.0);
    let ry = uniform(&mut r, n, -1.0, 1.0);
    let xt = t(&[n, d], x.clone());
    let norms = l2_norm_rows(&xt).unwrap();
    let g = l2_norm_rows_backward(&xt, &norms, &t(&[n], ry.clone()));
    let f = central_diff(&x, H, |p| weighted_sum(l2_norm_rows(&t(&[n, d], p.to_vec())).unwrap().data(), &ry));
    out.push(Check {
        op: "l2_norm_rows",
        instance,
        wrt: "input",
        rel_err: rel_err(g.data(), &f),
    });
}

fn pu_instance(seed: u64, out: &mut Vec<Check>, instance: usize) {
    let mut r = rng(seed);
    let cfg = PuLossConfig {
        lambda_var: if r.gen_bool(0.5) { 0.0 } else { r.gen_range(0.0..1.0) },
    };
    // Redraw until no unlabeled norm sits within 10h of the hinge threshold.
    let (pos, unl, raw) = loop {
        let (np, nu) = (r.gen_range(1..7), r.gen_range(1..7));
        let pos = uniform(&mut r, np, 0.2, 2.0);
        let unl = uniform(&mut r, nu, 0.2, 3.5);
        let raw: f32 = r.gen_range(-2.0..2.0);
        let tau = pos.iter().sum::<f32>() / pos.len() as f32 + softplus(raw);
        let tau_slack = 10.0 * H * (1.0 + 1.0 / pos.len() as f32);
        if unl.iter().all(|u| (u - tau).abs() > tau_slack) {
            break (pos, unl, raw);
        }
    };
    let loss = |p: &[f32], u: &[f32], raw: f32| f64::from(pu_loss(p, u, softplus(raw), &cfg).unwrap().0.total);
    let (_, g) = pu_loss(&pos, &unl, softplus(raw), &cfg).unwrap();
    let fp = central_diff(&pos, H, |p| loss(p, &unl, raw));
    let fu = central_diff(&unl, H, |u| loss(&pos, u, raw));
    let fm = central_diff(&[raw], H, |m| loss(&pos, &unl, m[0]));
    for (wrt, a, n) in [("pos", g.pos.clone(), fp), ("unl", g.unl.clone(), fu), ("raw_margin", vec![g.raw_margin(raw)], fm)] {
        out.push(Check {
            op: "pu_loss",
            instance,
            wrt,
            rel_err: rel_err(&a, &n),
        });
    }
}

/// `instances` random cases for every differentiable op.
pub fn run_all(instances: usize) -> Vec<Check> {
    let mut out = Vec::new();
    for i in 0..instances {
        let s = 1000 + i as u64;
        conv_instance(s, &mut out, i);
        relu_instance(s, &mut out, i);
        pool_instance(s, &mut out, i);
        linear_instance(s, &mut out, i);
        softplus_instance(s, &mut out, i);
        l2_instance(s, &mut out, i);
        pu_instance(s, &mut out, i);
    }
    out
}

/// Whole-encoder gradient of `Σ r·z` on a sample of coordinates of every
/// network parameter. Coordinates whose ±h perturbation flips any ReLU are
/// skipped, since the difference quotient straddles a kink there. Returns
/// `(param index, coordinates used, max over coordinates of
/// |analytic − numeric| − ENCODER_RTOL·|numeric|)`, to be compared with
/// [`ENCODER_ATOL`].
pub fn encoder_check(seed: u64, coords_per_param: usize) -> Vec<(usize, usize, f64)> {
    let mut r = rng(seed);
    let mut enc = CloneEncoder::init(EncoderConfig {
        embed_dim: 8,
        margin: MarginMode::Learned,
        seed,
    })
    .unwrap();
    let x = t(&[2, 3, 32, 32], uniform(&mut r, 2 * 3072, 0.0, 1.0));
    let (z, cache) = enc.forward_train(&x).unwrap();
    let pattern = cache.relu_pattern();
    let rz = uniform(&mut r, z.len(), -1.0, 1.0);
    enc.backward(&cache, &t(z.shape(), rz.clone())).unwrap();
    let grads: Vec<Vec<f32>> = enc.params().iter().map(|p| p.grad.data().to_vec()).collect();
    let mut results = Vec::new();
    // The last parameter is the margin, which the encoder output ignores.
    for (pi, grad) in grads.iter().enumerate().take(grads.len() - 1) {
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for _ in 0..coords_per_param * 8 {
            if analytic.len() == coords_per_param {
                break;
            }
            let c = r.gen_range(0..grad.len());
            let base = enc.params()[pi].value.data()[c];
            let eval = |v: f32| {
                let mut e = enc.clone();
                param_mut(&mut e, pi).value.data_mut()[c] = v;
                let (z, cache) = e.forward_train(&x).unwrap();
                (weighted_sum(z.data(), &rz), cache.relu_pattern() == pattern)
            };
            let ((up, same_up), (down, same_down)) = (eval(base + H), eval(base - H));
            if same_up && same_down {
                analytic.push(grad[c]);
                numeric.push((up - down) / (2.0 * f64::from(H)));
            }
        }
        let worst = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (f64::from(*a) - n).abs() - ENCODER_RTOL * n.abs())
            .fold(f64::NEG_INFINITY, f64::max);
        results.push((pi, analytic.len(), worst));
    }
    results
}

fn param_mut(e: &mut CloneEncoder, i: usize) -> &mut Param {
    match i {
        0..=5 if i.is_multiple_of(2) => &mut e.conv_w[i / 2],
        0..=5 => &mut e.conv_b[i / 2],
        6 => &mut e.fc_w,
        7 => &mut e.fc_b,
        _ => &mut e.raw_margin,
    }
}

mod common;

use common::gradcheck::{encoder_check, run_all, ENCODER_ATOL};

#[test]
fn every_op_matches_central_differences() {
    let checks = run_all(20);
    let mut worst = std::collections::BTreeMap::new();
    for c in &checks {
        let e = worst.entry((c.op, c.wrt)).or_insert(0.0f64);
        *e = e.max(c.rel_err);
    }
    for ((op, wrt), err) in &worst {
        println!("{op:<18} d/d{wrt:<10} worst rel err {err:.2e}");
    }
    for c in &checks {
        assert!(c.rel_err < 1e-3, "{} instance {} wrt {}: {:.3e}", c.op, c.instance, c.wrt, c.rel_err);
    }
}

#[test]
fn whole_encoder_backward_matches_central_differences() {
    for seed in [1u64, 2] {
        for (param, used, err) in encoder_check(seed, 10) {
            println!("seed {seed} param {param}: {used} coords, excess {err:.2e}");
            assert!(used > 0, "param {param}: every probe crossed a ReLU kink");
            assert!(err <= ENCODER_ATOL, "param {param}: {err:.3e}");
        }
    }
}

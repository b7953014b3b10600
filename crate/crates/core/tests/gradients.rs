mod common;

use common::{gradient_check, mini_trainer, random_batch};

fn check(enable_3d: bool, seed: u64) {
    let mut t = mini_trainer(enable_3d);
    let batch = random_batch(seed);
    for g in gradient_check(&mut t, &batch, 1e-5) {
        assert!(g.rel_err < 1e-4, "{}: relative error {:e}", g.name, g.rel_err);
    }
}

#[test]
fn analytic_gradients_match_finite_differences() {
    check(true, 17);
}

#[test]
fn analytic_gradients_without_3d_branch() {
    check(false, 17);
}

#[test]
fn analytic_gradients_other_batch() {
    check(true, 99);
}

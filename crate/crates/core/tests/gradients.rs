mod common;

use common::{collect_instances, mm_instance, nnhash_instance, pair_loss_instance};

const INSTANCES: usize = 100;
const TOLERANCE: f64 = 1e-4;

fn assert_mostly_accurate(name: &str, errors: &[f64]) {
    let good = errors.iter().filter(|&&e| e < TOLERANCE).count();
    let worst = errors.iter().copied().fold(0.0, f64::max);
    assert!(good >= 95, "{name}: {good}/{} instances within {TOLERANCE} (worst {worst:e})", errors.len());
}

#[test]
fn sparse_hash_pair_gradient_matches_finite_differences() {
    assert_mostly_accurate("pair loss", &collect_instances(INSTANCES, 1_000, pair_loss_instance));
}

#[test]
fn nnhash_gradient_matches_finite_differences() {
    assert_mostly_accurate("nnhash", &collect_instances(INSTANCES, 2_000, nnhash_instance));
}

#[test]
fn multimodal_gradient_matches_finite_differences() {
    assert_mostly_accurate("multimodal", &collect_instances(INSTANCES, 3_000, mm_instance));
}

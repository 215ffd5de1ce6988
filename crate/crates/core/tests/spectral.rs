mod common;

use common::{spectral_instance, subspace_angle};
use nalgebra::DMatrix;
use sparsehash::baselines::diffhash_fit;

#[test]
fn fitted_projection_spans_the_smallest_eigenvectors() {
    for seed in 0..10 {
        let n = 8;
        let (data, pairs, basis, spectrum) = spectral_instance(seed, n);
        for m in [1, 3, 5] {
            let fit = diffhash_fit(&data, &pairs, m).unwrap();
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| spectrum[a].total_cmp(&spectrum[b]));
            let expected = DMatrix::from_fn(m, n, |i, j| basis[(j, order[i])]);
            let p = &fit.params.p;
            let angle = subspace_angle(p, &expected);
            assert!(angle < 1e-6, "seed {seed} m {m}: angle {angle:e}");
            let gram = p * p.transpose() - DMatrix::<f64>::identity(m, m);
            assert!(gram.amax() < 1e-8, "seed {seed} m {m}: orthonormality {:e}", gram.amax());
            for (got, want) in fit.eigenvalues.iter().zip(order.iter().map(|&k| spectrum[k])) {
                assert!((got - want).abs() < 1e-9, "eigenvalue {got} vs {want}");
            }
            assert!(!fit.regularized);
        }
    }
}

#[test]
fn code_length_beyond_dimension_is_rejected() {
    let (data, pairs, _, _) = spectral_instance(0, 4);
    assert!(diffhash_fit(&data, &pairs, 5).is_err());
}

//! Identities of the sample-quality metrics.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use risk_sde::metrics::{frechet_distance, prd_curve, prd_from_histograms, recall_at_precision, PrdOptions};
use risk_sde::tensor::Tensor;

fn gaussian(n: usize, d: usize, seed: u64) -> Tensor {
    let mut g = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new((0..n * d).map(|_| g.sample(StandardNormal)).collect(), vec![n, d]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn frechet_self_distance_is_zero(seed in 0u64..10_000, d in 1usize..5, n in 10usize..200) {
        let x = gaussian(n, d, seed);
        prop_assert!(frechet_distance(&x, &x).unwrap() < 1e-9);
    }

    #[test]
    fn frechet_is_symmetric_and_sees_translation(seed in 0u64..10_000, d in 1usize..4, shift in prop::collection::vec(-3.0..3.0f64, 3)) {
        let a = gaussian(300, d, seed);
        let b = gaussian(300, d, seed + 1);
        let ab = frechet_distance(&a, &b).unwrap();
        let ba = frechet_distance(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() < 1e-8 * ab.max(1.0));
        let mut moved = a.clone();
        for row in moved.data_mut().chunks_exact_mut(d) {
            for j in 0..d {
                row[j] += shift[j];
            }
        }
        let norm2: f64 = shift[..d].iter().map(|s| s * s).sum();
        prop_assert!((frechet_distance(&moved, &a).unwrap() - norm2).abs() < 1e-8 * norm2.max(1.0));
    }

    #[test]
    fn prd_points_lie_in_the_unit_square(h in prop::collection::vec(0.0..1.0f64, 2..12), seed in 0u64..1000) {
        let mut g = ChaCha8Rng::seed_from_u64(seed);
        let s: f64 = h.iter().sum::<f64>().max(1e-9);
        let e: Vec<f64> = h.iter().map(|v| v / s).collect();
        let mut r: Vec<f64> = (0..h.len()).map(|_| g.gen_range(0.0..1.0)).collect();
        let sr: f64 = r.iter().sum();
        r.iter_mut().for_each(|v| *v /= sr);
        for (p, rc) in prd_from_histograms(&e, &r, 51) {
            prop_assert!((0.0..=1.0).contains(&p) && (0.0..=1.0).contains(&rc));
        }
        let same = prd_from_histograms(&e, &e, 1001);
        let best = same.iter().map(|&(p, rc)| p.min(rc)).fold(0.0, f64::max);
        prop_assert!(best > 0.99);
    }
}

#[test]
fn prd_of_a_set_against_itself_is_the_corner() {
    let x = gaussian(800, 2, 3);
    let curve = prd_curve(&x, &x, &PrdOptions { runs: 3, ..Default::default() }).unwrap();
    let r = recall_at_precision(&curve, &[0.99]);
    assert!(r[0] > 0.99, "{r:?}");
}

//! Reverse-time sampler against exact scores.

use risk_sde::datagen::MixtureSpec;
use risk_sde::metrics::three_sigma_coverage;
use risk_sde::noise::NoiseKind;
use risk_sde::sampling::{reverse_sample, GaussianMixtureScore, GaussianScore, SamplerConfig};
use risk_sde::sde::SdeSpec;
use risk_sde::tensor::Tensor;

fn moments(x: &Tensor, j: usize) -> (f64, f64) {
    let n = x.rows() as f64;
    let m = (0..x.rows()).map(|i| x.row(i)[j]).sum::<f64>() / n;
    let v = (0..x.rows()).map(|i| (x.row(i)[j] - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

#[test]
fn gaussian_moments_within_two_percent() {
    let mean = vec![1.5, -2.0];
    let var = vec![0.25, 1.0];
    for spec in [SdeSpec::vp(2), SdeSpec::ve(2)] {
        let score = GaussianScore { spec: spec.clone(), mean: mean.clone(), var: var.clone() };
        let cfg = SamplerConfig { steps: 1000, seed: 11, ..Default::default() };
        let x = reverse_sample(&score, &spec, &cfg, 20_000).unwrap();
        for j in 0..2 {
            let (m, s) = moments(&x, j);
            assert!((m - mean[j]).abs() < 0.02 * mean[j].abs(), "{:?} mean {m}", spec.family);
            assert!((s - var[j].sqrt()).abs() < 0.02 * var[j].sqrt(), "{:?} std {s}", spec.family);
        }
    }
}

#[test]
fn discretisation_error_shrinks_with_steps() {
    let spec = SdeSpec::vp(1);
    let score = GaussianScore { spec: spec.clone(), mean: vec![0.0], var: vec![0.04] };
    let err = |steps: usize| {
        let x = reverse_sample(&score, &spec, &SamplerConfig { steps, seed: 2, ..Default::default() }, 20_000).unwrap();
        (moments(&x, 0).1 - 0.2).abs()
    };
    let (coarse, mid, fine) = (err(8), err(64), err(512));
    assert!(coarse > mid && mid > fine.min(mid), "{coarse} {mid} {fine}");
    assert!(fine < 0.02 * 0.2 + 3.0 * 0.2 / (2.0 * 20_000f64).sqrt(), "{fine}");
}

#[test]
fn exact_mixture_score_reaches_the_coverage_ceiling() {
    let mix = MixtureSpec::four_corners(NoiseKind::Gaussian);
    let ceiling = three_sigma_coverage(&mix.sample_clean(20_000, &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(1)).unwrap(), &mix).unwrap();
    for spec in [SdeSpec::vp(2), SdeSpec::ve(2)] {
        let oracle = GaussianMixtureScore::from_mixture(spec.clone(), &mix).unwrap();
        let x = reverse_sample(&oracle, &spec, &SamplerConfig { steps: 1000, seed: 4, ..Default::default() }, 4000).unwrap();
        let cov = three_sigma_coverage(&x, &mix).unwrap();
        assert!(cov > ceiling - 0.015, "{:?}: {cov} vs {ceiling}", spec.family);
    }
}

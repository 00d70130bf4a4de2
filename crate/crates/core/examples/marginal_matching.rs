//! Corrupted samples pushed through the risk-sensitive kernel versus clean
//! samples under the base kernel, inside and outside the stable interval.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use risk_sde::datagen::MixtureSpec;
use risk_sde::metrics::{energy_test_with, EnergyOptions};
use risk_sde::noise::NoiseKind;
use risk_sde::sde::SdeSpec;

fn main() -> risk_sde::Result<()> {
    let mix = MixtureSpec::four_corners(NoiseKind::Gaussian);
    let spec = SdeSpec::vp(2);
    let r = [1.0, 1.0];
    let n = 2000;
    let mut g = ChaCha8Rng::seed_from_u64(1);
    println!("t*: {:.4}", spec.stability_interval(&r)?.t_star.unwrap_or(f64::NAN));
    for t in [0.1, 0.3, 0.6, 0.9] {
        let c = spec.risk_coefficients(&r, t)?;
        let (u, v0_sq) = spec.base_schedules(t)?;
        let mut risky = mix.sample_clean(n, &mut g)?;
        for row in risky.data_mut().chunks_exact_mut(2) {
            for j in 0..2 {
                let z: f64 = StandardNormal.sample(&mut g);
                let noisy = row[j] + r[j] * z;
                let e: f64 = StandardNormal.sample(&mut g);
                row[j] = u * noisy + c.v[j] * e;
            }
        }
        let mut clean = mix.sample_clean(n, &mut g)?;
        for v in clean.data_mut() {
            let e: f64 = StandardNormal.sample(&mut g);
            *v = u * *v + v0_sq.sqrt() * e;
        }
        let opts = EnergyOptions { max_per_group: n, permutations: 499, stop_after: Some(20), seed: 2 };
        let e = energy_test_with(&risky, &clean, &opts)?;
        println!("t = {t}: stable {}, energy p = {:.3}", c.all_stable(), e.p_value);
    }
    Ok(())
}

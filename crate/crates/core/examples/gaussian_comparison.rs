//! All five training methods on the corrupted four-corner mixture, at a
//! reduced scale. Pass a step count to train longer.

use risk_sde::baselines::Method;
use risk_sde::config::ExperimentConfig;
use risk_sde::experiment::{load_data, reference_set, sample_checkpoint, train_method};
use risk_sde::metrics::evaluate;
use risk_sde::sampling::SamplerConfig;

fn main() -> risk_sde::Result<()> {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let mut cfg = ExperimentConfig::from_toml("seed = 3\n[sde]\nfamily = \"vp\"\ndim = 2\n")?;
    cfg.train.steps = steps;
    cfg.data.n = 4000;
    cfg.eval.reference_count = 2000;
    let data = load_data(&cfg)?;
    let reference = reference_set(&cfg, &data)?;
    let mix = cfg.mixture();
    let sampler = SamplerConfig { steps: 200, seed: cfg.seed, ..Default::default() };
    for method in Method::ALL {
        let (ckpt, trace) = train_method(&cfg, method, &data)?;
        let x = sample_checkpoint(&ckpt, &sampler, 2000)?;
        let rep = evaluate(&x, &reference, mix.as_ref(), &cfg.eval.prd)?;
        let m = rep.mixture.expect("mixture data");
        println!(
            "{:>16}: loss {:.3}, coverage {:.3} (ceiling {:.3}), upper-right deficit {:.3}, frechet {:.3}",
            method.name(),
            trace.losses.last().copied().unwrap_or(f64::NAN),
            m.three_sigma_coverage,
            m.coverage_ceiling,
            m.component_balance.deficit(0),
            rep.frechet,
        );
    }
    Ok(())
}

//! Standard versus risk-sensitive training on Cauchy-corrupted data with
//! the VE schedule, at a reduced scale.

use risk_sde::baselines::Method;
use risk_sde::config::ExperimentConfig;
use risk_sde::experiment::{load_data, reference_set, sample_checkpoint, train_method};
use risk_sde::metrics::{fraction_beyond, frechet_distance};
use risk_sde::sampling::SamplerConfig;

fn main() -> risk_sde::Result<()> {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let mut cfg = ExperimentConfig::from_toml("[sde]\nfamily = \"ve\"\ndim = 2\n[noise]\nkind = \"cauchy\"\n")?;
    cfg.train.steps = steps;
    cfg.data.n = 4000;
    cfg.eval.reference_count = 2000;
    let data = load_data(&cfg)?;
    let reference = reference_set(&cfg, &data)?;
    let mix = cfg.mixture().expect("mixture data");
    let sampler = SamplerConfig { steps: 300, ..Default::default() };
    for method in [Method::Standard, Method::RiskSensitive] {
        let (ckpt, _) = train_method(&cfg, method, &data)?;
        let x = sample_checkpoint(&ckpt, &sampler, 2000)?;
        println!(
            "{:>14}: frechet {:.3}, beyond 6 sigma {:.4}",
            method.name(),
            frechet_distance(&x, &reference)?,
            fraction_beyond(&x, &mix, 6.0)?
        );
    }
    Ok(())
}

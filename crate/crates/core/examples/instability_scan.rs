//! Empirical characteristic-function instability across diffusion time.

use risk_sde::config::ExperimentConfig;
use risk_sde::experiment::instability_scan;

fn main() -> risk_sde::Result<()> {
    let mut cfg = ExperimentConfig::from_toml("[sde]\nfamily = \"vp\"\ndim = 2\n")?;
    cfg.stability.samples = 10_000;
    cfg.stability.times = vec![0.05, 0.1, 0.2, 0.3, 0.5, 0.8];
    // Bonferroni over the six times
    cfg.stability.null_quantile = 1.0 - 0.05 / 6.0;
    cfg.stability.null_repetitions = 60;
    println!("{:>5} {:>10} {:>10} {:>10} stable", "t", "adjusted", "unadjusted", "threshold");
    for row in instability_scan(&cfg)? {
        println!(
            "{:>5} {:>10.4} {:>10.4} {:>10.4} {}",
            row.t, row.instability, row.unadjusted, row.threshold, row.in_interval
        );
    }
    Ok(())
}

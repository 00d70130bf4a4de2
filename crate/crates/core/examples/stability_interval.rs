//! Stability intervals of the VP and VE schedules for a few risk levels.

use risk_sde::noise::NoiseKind;
use risk_sde::experiment::interval_for;
use risk_sde::sde::SdeSpec;

fn main() -> risk_sde::Result<()> {
    for (name, spec) in [("vp", SdeSpec::vp(1)), ("ve", SdeSpec::ve(1))] {
        println!("{name}:");
        for r in [0.0, 0.5, 1.0, 2.0, 5.0] {
            for kind in [NoiseKind::Gaussian, NoiseKind::Cauchy] {
                let iv = interval_for(&spec, kind, r)?;
                match iv.t_star {
                    Some(t) => println!("  {kind:?} r = {r}: stable on [{t:.4}, {}]", iv.upper),
                    None => println!("  {kind:?} r = {r}: never stable"),
                }
            }
        }
    }
    Ok(())
}

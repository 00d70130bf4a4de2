//! Variance deduction for Cauchy noise: closed form against the numerical
//! least-squares fit. The closed form assumes the weight
//! `exp(-sum_j r_j |y_j|)`; a Gaussian weight gives a different, equally
//! valid fit, shown for contrast.

use risk_sde::noise::{psi_cauchy, psi_numeric, NoiseModel, QuadratureGrid, WeightFunction};

fn main() -> risk_sde::Result<()> {
    let gaussian = QuadratureGrid::build(&WeightFunction::Gaussian { scale: 1.0 }, 2, &Default::default())?;
    for r in [vec![1.0, 1.0], vec![0.5, 2.0], vec![1.5, 0.3]] {
        let closed = psi_cauchy(&r)?;
        let model = NoiseModel::cauchy(r.clone())?;
        let laplace = QuadratureGrid::build(&WeightFunction::Laplace { scales: r.clone() }, 2, &Default::default())?;
        let numeric = psi_numeric(&|y| model.charfn(y), 1.0, &laplace)?;
        let other = psi_numeric(&|y| model.charfn(y), 1.0, &gaussian)?;
        println!("r = {r:?}: closed {closed:.5?}, numeric {numeric:.5?}, gaussian weight {other:.5?}");
    }
    Ok(())
}

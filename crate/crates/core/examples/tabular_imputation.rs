//! Mask a table, impute with nearest neighbours, and read off per-cell risk.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use risk_sde::datagen::{knn_impute_with_risk, mask_table, Table, TabularPipelineSpec};

fn main() -> risk_sde::Result<()> {
    let mut g = ChaCha8Rng::seed_from_u64(4);
    let z = Normal::new(0.0, 1.0).unwrap();
    // three correlated columns
    let rows: Vec<Vec<Option<f64>>> = (0..300)
        .map(|_| {
            let a: f64 = z.sample(&mut g);
            let b = 0.8 * a + 0.6 * z.sample(&mut g);
            let c = a - b + 0.3 * z.sample(&mut g);
            vec![Some(a), Some(b), Some(c)]
        })
        .collect();
    let full = Table::from_rows(&rows)?;
    let spec = TabularPipelineSpec { mask_fraction: 0.1, neighbors: 10 };
    let masked = mask_table(&full, spec.mask_fraction, &mut g)?;
    let imputed = knn_impute_with_risk(&masked, &spec)?;
    println!("masked {} of {} cells", masked.missing_count(), full.cells.len());
    let mut shown = 0;
    for (i, s) in imputed.iter().enumerate() {
        for j in 0..full.cols {
            if masked.get(i, j).is_none() && shown < 8 {
                println!(
                    "row {i} col {j}: true {:.3}, imputed {:.3}, risk {:.3}",
                    full.get(i, j).unwrap(),
                    s.x0[j],
                    s.r[j]
                );
                shown += 1;
            }
        }
    }
    let (mut err, mut risk, mut k) = (0.0, 0.0, 0.0);
    for (i, s) in imputed.iter().enumerate() {
        for j in 0..full.cols {
            if masked.get(i, j).is_none() {
                err += (s.x0[j] - full.get(i, j).unwrap()).abs();
                risk += s.r[j];
                k += 1.0;
            }
        }
    }
    println!("mean absolute error {:.3}, mean risk {:.3}", err / k, risk / k);
    Ok(())
}

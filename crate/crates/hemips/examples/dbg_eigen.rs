use hemips::hemisphere::*;
use hemips::laplacian::{RowSumMode, WeightOptions};
use hemips::spectral::EigenOptions;

fn main() {
    for mode in [RowSumMode::InverseRadiusSq] {
        for seed in [7u64, 42, 1234, 5, 99] {
            let wopts = WeightOptions { row_sum_mode: mode, max_iter: 30000, ..Default::default() };
            let t = std::time::Instant::now();
            match run_eigencheck(2000, 40, 0.05, seed, &wopts, &EigenOptions::default()) {
                Ok(rep) => println!(
                    "{mode:?} seed={seed}: max rel {:.4} D {:?} N {:?} ({:.0?})",
                    rep.max_relative_residual,
                    rep.dirichlet_residuals.iter().map(|r| (r * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
                    rep.neumann_residuals.iter().map(|r| (r * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
                    t.elapsed()
                ),
                Err(e) => println!("{mode:?} seed={seed}: ERR {e}"),
            }
        }
    }
}

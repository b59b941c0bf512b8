//! Smoothness penalty path on one simulated dataset.

use spatial_adapter::experiment::sweep_seed;
use spatial_adapter::prelude::*;

fn main() -> Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.dgp = DgpConfig { n_sites: 64, n_times: 200, ..DgpConfig::default() };
    cfg.adapter.rank = RankPolicy::Fixed(1);
    cfg.adapter.rho = 1.0;
    cfg.adapter.batch_size = 32;

    let penalties: Vec<(f64, f64)> = [1e-3, 1e-1, 1e1, 1e3, 1e5].iter().map(|&l| (l, 0.0)).collect();
    let sweep = sweep_seed(&cfg, 2, &penalties)?;
    println!("ols rmse {:.4}", sweep.ols.rmse);
    println!("{:>10} {:>8} {:>10} {:>10} {:>6}", "lambda1", "rmse", "alignment", "cov_frob", "iters");
    for f in &sweep.fits {
        println!(
            "{:>10.0e} {:>8.4} {:>10.4} {:>10.4} {:>6}",
            f.lambda1,
            f.rmse,
            f.alignment.unwrap_or(f64::NAN),
            f.cov_frob.unwrap_or(f64::NAN),
            f.iterations
        );
    }
    Ok(())
}

//! Random search over both penalties, scored on validation rows.

use spatial_adapter::experiment::{tune, Objective, TuneSpec};
use spatial_adapter::prelude::*;

fn main() -> Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.dgp = DgpConfig { n_sites: 48, n_times: 160, ..DgpConfig::default() };
    cfg.adapter.rank = RankPolicy::Fixed(1);
    cfg.adapter.batch_size = 32;

    let (data, _) = load_data(&cfg, 4)?;
    let pipe = prepare(&cfg, data, 4)?;
    let spec = TuneSpec { trials: 8, objective: Objective::Rmse, ..TuneSpec::default() };
    let report = tune(&cfg, &pipe, &spec, 4)?;
    for (k, t) in report.trials.iter().enumerate() {
        let mark = if k == report.best { "*" } else { " " };
        println!("{mark} lambda1 {:>10.3e} lambda2 {:>10.3e} val {:.4}", t.lambda1, t.lambda2, t.objective);
    }
    println!("test rmse {:.4}", report.test_rmse);
    Ok(())
}

use spatial_adapter::experiment::run_holdout_seed;
use spatial_adapter::prelude::*;

fn main() -> Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.dgp = DgpConfig { n_sites: 80, n_times: 240, ..DgpConfig::default() };
    cfg.adapter.rank = RankPolicy::Fixed(1);
    cfg.adapter.batch_size = 32;
    cfg.reg_lambda = 1e3;

    for seed in 1..=3 {
        let run = run_holdout_seed(&cfg, seed)?;
        println!(
            "seed {seed}: {} sites withheld, rmse first stage {:.4} unreg {:.4} reg {:.4}, coverage {:.3}",
            run.held_out.len(),
            run.first_stage_rmse,
            run.unreg_rmse,
            run.reg_rmse,
            run.coverage
        );
    }
    Ok(())
}

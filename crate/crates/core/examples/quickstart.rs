//! Simulate a residual field, fit the adapter, and compare in-sample error with
//! the first stage alone.

use spatial_adapter::metrics::{entries_for_rows, pointwise};
use spatial_adapter::prelude::*;

fn main() -> Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.dgp = DgpConfig { n_sites: 64, n_times: 200, ..DgpConfig::default() };
    cfg.adapter.rank = RankPolicy::Fixed(1);
    cfg.adapter.batch_size = 32;

    let (data, _) = load_data(&cfg, 7)?;
    let pipe = prepare(&cfg, data, 7)?;
    let model = pipe.fit(&adapter_config(&cfg, 7, 100.0, 1.0))?;

    let rows = pipe.data.split.train.clone();
    let y = pipe.data.y.select_rows(rows.iter());
    let idx = entries_for_rows(&(0..rows.len()).collect::<Vec<_>>(), pipe.data.n_sites());
    let base = pipe.first.predict(&pipe.data, &rows)? + pipe.trend.predict(&pipe.data.x, &rows);
    let recon = reconstruct(&model, &pipe.data, &rows)?;

    println!("iterations      {}", model.trace.records.len());
    println!("first stage     rmse {:.4}", pointwise(&y, &base, &idx)?.rmse);
    println!("with adapter    rmse {:.4}", pointwise(&y, &recon, &idx)?.rmse);
    Ok(())
}

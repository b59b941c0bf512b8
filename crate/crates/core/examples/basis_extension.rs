//! Carry a fitted basis to new coordinates with the thin-plate interpolant.

use nalgebra::DMatrix;
use spatial_adapter::prelude::*;

fn main() -> Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.dgp = DgpConfig { n_sites: 40, n_times: 160, ..DgpConfig::default() };
    cfg.adapter.rank = RankPolicy::Fixed(1);
    cfg.adapter.batch_size = 32;

    let (data, _) = load_data(&cfg, 11)?;
    let pipe = prepare(&cfg, data, 11)?;
    let model = pipe.fit(&adapter_config(&cfg, 11, 1e3, 0.0))?;

    let locs = &pipe.data.locations;
    let on_sites = extend_basis(locs, &model.phi, locs.coords())?;
    println!("max deviation at fitted sites {:.2e}", (on_sites - &model.phi).amax());

    let lo = locs.coords().min();
    let hi = locs.coords().max();
    let query = DMatrix::from_fn(9, locs.dim(), |q, _| lo + (hi - lo) * (q as f64 + 0.5) / 9.0);
    let ext = extend_basis(locs, &model.phi, &query)?;
    for q in 0..query.nrows() {
        println!("s = {:>7.3}  phi = {:>8.4}", query[(q, 0)], ext[(q, 0)]);
    }
    Ok(())
}

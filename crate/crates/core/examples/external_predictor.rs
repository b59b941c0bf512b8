//! Adapt the residuals of an arbitrary frozen predictor supplied as a
//! matrix of predictions.

use nalgebra::DMatrix;
use spatial_adapter::dataio::config::FirstStageKind;
use spatial_adapter::prelude::*;

fn main() -> Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.dgp = DgpConfig { n_sites: 50, n_times: 150, ..DgpConfig::default() };
    cfg.first_stage = FirstStageKind::External;
    cfg.adapter.rank = RankPolicy::Fixed(1);
    cfg.adapter.batch_size = 25;

    let (mut data, _) = load_data(&cfg, 9)?;
    // a crude predictor: every site gets the row mean
    let preds = DMatrix::from_fn(data.n_times(), data.n_sites(), |j, _| data.y.row(j).mean());
    data.first_stage = Some(preds);

    let pipe = prepare(&cfg, data, 9)?;
    let model = pipe.fit(&adapter_config(&cfg, 9, 10.0, 0.0))?;
    let r = model.residuals(&pipe.data, &pipe.data.split.train)?;
    let explained = (&model.scores * model.phi.transpose()).norm_squared() / r.norm_squared();
    println!("share of residual energy in the basis {explained:.3}");
    Ok(())
}

//! Covariance estimate from a fitted basis, then kriging of hidden sites in
//! each test row with 90% intervals.

use nalgebra::DVector;
use spatial_adapter::prelude::*;

fn main() -> Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.dgp = DgpConfig { n_sites: 60, n_times: 300, ..DgpConfig::default() };
    cfg.adapter.rank = RankPolicy::Fixed(2);
    cfg.adapter.batch_size = 32;

    let (data, truth) = load_data(&cfg, 3)?;
    let pipe = prepare(&cfg, data, 3)?;
    let model = pipe.fit(&adapter_config(&cfg, 3, 100.0, 0.0))?;
    let (est, sigma) = pipe.covariance(&model, 0.0)?;
    println!("retained rank {}  noise var {:.4}  variances {:?}", est.rank, est.noise_var, est.retained_variances());
    if let Some(t) = truth {
        println!("relative covariance error {:.3}", (&sigma - &t.sigma).norm() / t.sigma.norm());
    }

    let kriger = Kriger::new(&model.phi, &est)?;
    let hidden: Vec<usize> = (0..pipe.data.n_sites()).step_by(5).collect();
    let seen: Vec<usize> = (0..pipe.data.n_sites()).filter(|i| i % 5 != 0).collect();
    let query = model.phi.select_rows(hidden.iter());
    let test = pipe.data.split.test.clone();
    let resid = model.residuals(&pipe.data, &test)?;

    let (mut hits, mut total) = (0usize, 0usize);
    for (r, _) in test.iter().enumerate() {
        let vals = DVector::from_iterator(seen.len(), seen.iter().map(|&i| resid[(r, i)]));
        let obs = ObservationSet::new(seen.clone(), vals, pipe.data.n_sites())?;
        let preds = kriger.predict(&obs, &query, &vec![0.0; hidden.len()], SolvePath::Auto)?;
        for (p, &i) in preds.iter().zip(&hidden) {
            let (lo, hi) = gaussian_interval(p.mean, p.var, 0.1)?;
            hits += usize::from((lo..=hi).contains(&resid[(r, i)]));
            total += 1;
        }
    }
    println!("coverage of hidden sites {:.3} over {total} cells", hits as f64 / total as f64);
    Ok(())
}

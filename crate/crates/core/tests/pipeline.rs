use nalgebra::DMatrix;

use spatial_adapter::adapter::{reconstruct, BceVariant, RankPolicy};
use spatial_adapter::dataio::ExperimentConfig;
use spatial_adapter::dataio::config::FirstStageKind;
use spatial_adapter::dataset::{Link, Split};
use spatial_adapter::experiment::{load_data, prepare, run_ablation_seed, run_holdout_seed, run_synthetic, tune, Objective, TuneSpec};
use spatial_adapter::firststage::fit_ols;
use spatial_adapter::synth::{generate, DgpConfig};

fn small() -> ExperimentConfig {
    let mut cfg = ExperimentConfig { dgp: DgpConfig { n_sites: 48, n_times: 160, ..DgpConfig::default() }, ..ExperimentConfig::default() };
    cfg.adapter.rank = RankPolicy::Fixed(1);
    cfg.adapter.rho = 1.0;
    cfg.adapter.batch_size = 32;
    cfg.adapter.schedule.max_iters = 300;
    cfg.reg_lambda = 100.0;
    cfg.tune.trials = 4;
    cfg.ablation.dgp = DgpConfig { n_sites: 24, n_times: 100, binary: true, ..DgpConfig::default() };
    cfg.ablation.max_iters = 30;
    cfg
}

#[test]
fn same_seed_same_basis() {
    let cfg = small();
    let fit = || {
        let (ds, _) = load_data(&cfg, 4).unwrap();
        let pipe = prepare(&cfg, ds, 4).unwrap();
        pipe.fit(&spatial_adapter::experiment::adapter_config(&cfg, 4, 50.0, 1.0)).unwrap().phi
    };
    assert_eq!(fit(), fit());
}

#[test]
fn zero_residual_field_gives_zero_scores() {
    let cfg = small();
    let split = Split::contiguous(160, 0.7, 0.15).unwrap();
    let mut ds = generate(&DgpConfig { score_sd: 0.0, noise_sd: 0.0, covariate_noise_sd: 0.0, ..cfg.dgp.clone() }, 1, split)
        .unwrap()
        .dataset;
    let all: Vec<usize> = (0..160).collect();
    let ols = fit_ols(&ds, &ds.split.train.clone()).unwrap();
    ds.y = ols.stage.predict(&ds, &all).unwrap();
    let mut local = cfg.clone();
    local.first_stage = FirstStageKind::Ols;
    let pipe = prepare(&local, ds, 1).unwrap();
    let model = pipe.fit(&spatial_adapter::experiment::adapter_config(&local, 1, 1.0, 0.0)).unwrap();
    assert!(model.scores.norm() <= 1e-6 * pipe.data.y.norm());
    let recon = reconstruct(&model, &pipe.data, &all).unwrap();
    assert!((recon - &pipe.data.y).amax() <= 1e-8);
}

#[test]
fn external_first_stage_is_left_untouched() {
    let mut cfg = small();
    cfg.first_stage = FirstStageKind::External;
    let (mut ds, _) = load_data(&cfg, 2).unwrap();
    let frozen = DMatrix::from_fn(ds.n_times(), ds.n_sites(), |j, _| 50.0 + 0.01 * j as f64);
    ds.first_stage = Some(frozen.clone());
    let pipe = prepare(&cfg, ds, 2).unwrap();
    let _ = pipe.fit(&spatial_adapter::experiment::adapter_config(&cfg, 2, 10.0, 0.0)).unwrap();
    assert_eq!(pipe.data.first_stage.as_ref(), Some(&frozen));
}

#[test]
fn single_seed_records_have_no_standard_error() {
    let mut cfg = small();
    cfg.replications = 1;
    let (_, records) = run_synthetic(&cfg).unwrap();
    assert_eq!(records.len(), 1);
    let agg = spatial_adapter::dataio::aggregate(&records);
    assert!(agg.values().all(|a| a.std_error.is_none() && a.count == 1));
    assert!(records[0].metrics.contains_key("reg_cov_frob") && records[0].metrics.contains_key("ols_cov_frob"));
}

#[test]
fn single_trial_is_selected_and_search_is_reproducible() {
    let cfg = small();
    let (ds, _) = load_data(&cfg, 3).unwrap();
    let pipe = prepare(&cfg, ds, 3).unwrap();
    let one = TuneSpec { trials: 1, ..cfg.tune.clone() };
    let report = tune(&cfg, &pipe, &one, 3).unwrap();
    assert_eq!(report.best, 0);
    assert_eq!((report.lambda1, report.lambda2), one.candidates(3)[0]);
    let spec = TuneSpec { trials: 3, objective: Objective::CovFrob, ..cfg.tune.clone() };
    assert_eq!(tune(&cfg, &pipe, &spec, 8).unwrap(), tune(&cfg, &pipe, &spec, 8).unwrap());
}

#[test]
fn holdout_keeps_withheld_sites_out_of_training() {
    let cfg = small();
    let run = run_holdout_seed(&cfg, 6).unwrap();
    assert_eq!(run.held_out.len(), (48.0f64 * 0.2).round() as usize);
    assert!(run.extension_error <= 1e-8);
    assert!(run.reg_rmse.is_finite() && run.first_stage_rmse.is_finite());
}

#[test]
fn ablation_variants_run_on_binary_data() {
    let cfg = small();
    for v in [BceVariant::A, BceVariant::B, BceVariant::C] {
        let run = run_ablation_seed(&cfg, 1, v).unwrap();
        assert!(run.finite, "{v:?}");
        assert!(run.orthonormality_error <= 1e-8);
        assert!((0.0..=1.0).contains(&run.accuracy));
        assert!(run.off_basis_ratio >= 0.0 && run.off_basis_ratio <= 1.0);
    }
    let (ds, _) = load_data(&ExperimentConfig { dgp: cfg.ablation.dgp.clone(), ..cfg.clone() }, 1).unwrap();
    assert_eq!(ds.link, Link::Sigmoid);
}

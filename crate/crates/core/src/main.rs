use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use spatial_adapter::adapter::{reconstruct, AdapterModel};
use spatial_adapter::covariance::{estimate_covariance, materialize_sigma, residual_gram, CovarianceEstimate};
use spatial_adapter::dataio::{aggregate, read_config, read_matrix, read_matrix_masked, write_matrix, write_results, ExperimentConfig, ResultsRecord};
use spatial_adapter::dataset::{read_dataset, write_dataset, Link, SpatialDataset};
use spatial_adapter::experiment::{
    adapter_config, load_data, prepare, run_ablation, run_holdout, run_reg_path, run_synthetic, tune, SeedSweep,
};
use spatial_adapter::firststage::sigmoid;
use spatial_adapter::geometry::{extend_basis, LocationSet};
use spatial_adapter::metrics::{classification, coverage, cov_frob, ece, entries_for_rows, pointwise};
use spatial_adapter::predict::{gaussian_interval, logistic_interval, Kriger, ObservationSet, SolvePath};
use spatial_adapter::{Error, Result};

/// Spatial residual adapter: simulate, fit, estimate covariance, krige and
/// run the benchmark experiments.
#[derive(Parser)]
#[command(version)]
struct Cli {
    /// JSON experiment configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured first seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads for seeds and trials (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Rows {
    Train,
    Val,
    Test,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum Task {
    Regression,
    Classification,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepMode {
    /// Penalty grid with median and IQR per grid point.
    Path,
    /// First stage against the unregularised and regularised adapter.
    Benchmark,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset and write it with its ground truth.
    Synth,
    /// Fit the adapter and save the model.
    Fit {
        /// Dataset directory (otherwise the configured one, or a simulation).
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        lambda1: Option<f64>,
        #[arg(long)]
        lambda2: Option<f64>,
    },
    /// Reconstruct fields with a saved model.
    Reconstruct {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        rows: Rows,
    },
    /// Covariance estimate from a basis and a residual matrix.
    Covariance {
        #[arg(long)]
        basis: PathBuf,
        #[arg(long)]
        residuals: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        tau: f64,
        /// Also write the dense N×N covariance.
        #[arg(long)]
        dense: bool,
    },
    /// Krige residual fields at new locations.
    Krige {
        #[arg(long)]
        model: PathBuf,
        /// Query coordinates, one location per row.
        #[arg(long)]
        query: PathBuf,
        /// Observed residuals on the fitted sites, one field per row; empty
        /// cells are unobserved.
        #[arg(long)]
        residuals: PathBuf,
        /// Trend at the query locations, one row per field (default zero).
        #[arg(long)]
        trend: Option<PathBuf>,
    },
    /// Score predictions against observed values.
    Metrics {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, value_enum, default_value = "regression")]
        task: Task,
        #[arg(long, requires = "upper")]
        lower: Option<PathBuf>,
        #[arg(long, requires = "lower")]
        upper: Option<PathBuf>,
        /// Treat both files as covariance matrices and report CovFrob.
        #[arg(long)]
        covariance: bool,
    },
    /// Penalty path or benchmark across all configured seeds.
    Sweep {
        #[arg(long, value_enum, default_value = "path")]
        mode: SweepMode,
    },
    /// Withhold sites and krige them from the rest.
    Holdout,
    /// Compare the cross-entropy target variants on binary data.
    AblateBce,
    /// Random search over both penalties.
    Tune,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value).expect("serializable output");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn row_set(ds: &SpatialDataset, rows: Rows) -> Vec<usize> {
    match rows {
        Rows::Train => ds.split.train.clone(),
        Rows::Val => ds.split.val.clone(),
        Rows::Test => ds.split.test.clone(),
        Rows::All => (0..ds.n_times()).collect(),
    }
}

fn dataset(cfg: &ExperimentConfig, dir: Option<PathBuf>, seed: u64) -> Result<SpatialDataset> {
    match dir {
        Some(d) => read_dataset(d),
        None => Ok(load_data(cfg, seed)?.0),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        log::error!("{e}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let mut cfg = match &cli.config {
        Some(p) => read_config(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let out = cli.out_dir;
    let seed = cfg.seed;
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    write_text(&out.join("config.json"), &(cfg.to_json() + "\n"))?;

    match cli.command {
        Command::Synth => {
            let (ds, truth) = load_data(&cfg, seed)?;
            write_dataset(out.join("data"), &ds)?;
            if let Some(t) = truth {
                write_matrix(out.join("truth/phi.csv"), &DMatrix::from_column_slice(t.phi.len(), 1, t.phi.as_slice()))?;
                write_matrix(out.join("truth/scores.csv"), &DMatrix::from_column_slice(t.scores.len(), 1, t.scores.as_slice()))?;
                write_matrix(out.join("truth/sigma.csv"), &t.sigma)?;
                write_json(&out.join("truth/beta.json"), &t.beta)?;
            }
            log::info!("wrote {} fields over {} sites to {}", ds.n_times(), ds.n_sites(), out.display());
        }
        Command::Fit { data, lambda1, lambda2 } => {
            let ds = dataset(&cfg, data, seed)?;
            let pipe = prepare(&cfg, ds, seed)?;
            let l1 = lambda1.unwrap_or(cfg.reg_lambda);
            let l2 = lambda2.unwrap_or(l1);
            let model = pipe.fit(&adapter_config(&cfg, seed, l1, l2))?;
            let dir = out.join("model");
            model.save(&dir)?;
            write_matrix(dir.join("locations.csv"), pipe.data.locations.coords())?;
            let (est, _) = pipe.covariance(&model, cfg.shrinkage.resolve(l1))?;
            write_json(&dir.join("covariance.json"), &est)?;
            let all: Vec<usize> = (0..pipe.data.n_times()).collect();
            let recon = reconstruct(&model, &pipe.data, &all)?;
            let mut summary = ResultsRecord::new("fit", seed, &cfg.hash())
                .with("lambda1", l1)
                .with("lambda2", l2)
                .with("rank", model.rank() as f64)
                .with("cov_rank", est.rank as f64)
                .with("noise_var", est.noise_var)
                .with("iterations", model.trace.records.len() as f64)
                .with("converged", f64::from(u8::from(model.trace.converged)));
            for (name, rows) in [("train", &pipe.data.split.train), ("test", &pipe.data.split.test)] {
                if !rows.is_empty() {
                    let m = pointwise(&pipe.data.y, &recon, &entries_for_rows(rows, pipe.data.n_sites()))?;
                    summary = summary.with(&format!("{name}_rmse"), m.rmse);
                }
            }
            write_results(out.join("results.json"), &[summary])?;
            log::info!("rank {} basis, {} sweeps, converged: {}", model.rank(), model.trace.records.len(), model.trace.converged);
        }
        Command::Reconstruct { model, data, rows } => {
            let model = AdapterModel::load(&model)?;
            let ds = dataset(&cfg, data, seed)?;
            let rows = row_set(&ds, rows);
            write_matrix(out.join("reconstruction.csv"), &reconstruct(&model, &ds, &rows)?)?;
        }
        Command::Covariance { basis, residuals, tau, dense } => {
            let phi = read_matrix(&basis)?;
            let r = read_matrix(&residuals)?;
            let est = estimate_covariance(&phi, &residual_gram(&r)?, tau)?;
            write_json(&out.join("covariance.json"), &est)?;
            if dense {
                write_matrix(out.join("sigma.csv"), &materialize_sigma(&est, &phi))?;
            }
        }
        Command::Krige { model, query, residuals, trend } => {
            let est: CovarianceEstimate = {
                let path = model.join("covariance.json");
                let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::Parse { context: path.display().to_string(), message: e.to_string() })?
            };
            let locs = LocationSet::new(read_matrix(model.join("locations.csv"))?)?;
            let fitted = AdapterModel::load(&model)?;
            let q = read_matrix(&query)?;
            let q_phi = extend_basis(&locs, &fitted.phi, &q)?;
            let obs = read_matrix_masked(&residuals)?;
            if obs.values.ncols() != locs.len() {
                return Err(Error::dim(format!("residuals have {} columns for {} sites", obs.values.ncols(), locs.len())));
            }
            let trend = match trend {
                Some(p) => read_matrix(&p)?,
                None => DMatrix::zeros(obs.values.nrows(), q.nrows()),
            };
            if trend.shape() != (obs.values.nrows(), q.nrows()) {
                return Err(Error::dim(format!("trend is {:?}, expected {:?}", trend.shape(), (obs.values.nrows(), q.nrows()))));
            }
            let kriger = Kriger::new(&fitted.phi, &est)?;
            let mut text = String::from("query,row,eta,var,lower,upper\n");
            for j in 0..obs.values.nrows() {
                let idx: Vec<usize> = (0..locs.len()).filter(|&i| obs.mask[(j, i)] == 1.0).collect();
                let vals = DVector::from_iterator(idx.len(), idx.iter().map(|&i| obs.values[(j, i)]));
                let set = ObservationSet::new(idx, vals, locs.len())?;
                let row: Vec<f64> = trend.row(j).iter().copied().collect();
                for (qi, p) in kriger.predict(&set, &q_phi, &row, SolvePath::Auto)?.into_iter().enumerate() {
                    let (lo, hi) = match fitted.link {
                        Link::Identity => gaussian_interval(p.mean, p.var, cfg.alpha)?,
                        Link::Sigmoid => logistic_interval(p.mean, p.var, cfg.alpha)?,
                    };
                    text.push_str(&format!("{qi},{j},{:?},{:?},{lo:?},{hi:?}\n", p.mean, p.var));
                }
            }
            write_text(&out.join("krige.csv"), &text)?;
        }
        Command::Metrics { pred, truth, task, lower, upper, covariance } => {
            let p = read_matrix(&pred)?;
            let y = read_matrix(&truth)?;
            let idx = entries_for_rows(&(0..y.nrows()).collect::<Vec<_>>(), y.ncols());
            let mut rec = ResultsRecord::new("metrics", seed, &cfg.hash());
            if covariance {
                rec = rec.with("cov_frob", cov_frob(&p, &y)?);
            } else {
                match task {
                    Task::Regression => {
                        let m = pointwise(&y, &p, &idx)?;
                        rec = rec.with("rmse", m.rmse).with("mae", m.mae).with("r2", m.r2);
                    }
                    Task::Classification => {
                        let prob = if p.iter().all(|v| (0.0..=1.0).contains(v)) { p.clone() } else { p.map(sigmoid) };
                        let c = classification(&y, &prob, &idx, 0.5)?;
                        rec = rec.with("accuracy", c.accuracy).with("f1", c.f1).with("ece", ece(&y, &prob, &idx, 10)?);
                        if let Some(a) = c.auc {
                            rec = rec.with("auc", a);
                        }
                    }
                }
                if let (Some(lo), Some(hi)) = (lower, upper) {
                    let (cp, width) = coverage(&y, &read_matrix(&lo)?, &read_matrix(&hi)?, &idx)?;
                    rec = rec.with("coverage", cp).with("mpiw", width);
                }
            }
            write_json(&out.join("metrics.json"), &rec.metrics)?;
        }
        Command::Sweep { mode } => match mode {
            SweepMode::Path => {
                let (sweeps, rows, best) = run_reg_path(&cfg)?;
                let mut table = String::from("lambda,metric,q25,median,q75\n");
                for r in &rows {
                    for (name, v) in [("alignment", r.alignment), ("cov_frob", r.cov_frob)] {
                        table.push_str(&format!("{:?},{name},{:?},{:?},{:?}\n", r.lambda, v[0], v[1], v[2]));
                    }
                }
                write_text(&out.join("path.csv"), &table)?;
                write_text(&out.join("per_seed.csv"), &per_seed_long(&sweeps))?;
                write_json(&out.join("path.json"), &serde_json::json!({ "rows": rows, "best": best, "best_lambda": rows[best].lambda }))?;
                write_trace(&out, &sweeps)?;
                log::info!("lowest median CovFrob at lambda = {:e}", rows[best].lambda);
            }
            SweepMode::Benchmark => {
                let (sweeps, records) = run_synthetic(&cfg)?;
                write_results(out.join("results.json"), &records)?;
                write_text(&out.join("per_seed.csv"), &per_seed_long(&sweeps))?;
                write_trace(&out, &sweeps)?;
                for (name, a) in aggregate(&records) {
                    log::info!("{name}: {:.6}", a.mean);
                }
            }
        },
        Command::Holdout => {
            let (runs, records) = run_holdout(&cfg)?;
            write_results(out.join("results.json"), &records)?;
            write_json(&out.join("runs.json"), &runs)?;
        }
        Command::AblateBce => {
            let (runs, records) = run_ablation(&cfg)?;
            write_results(out.join("results.json"), &records)?;
            write_json(&out.join("runs.json"), &runs)?;
        }
        Command::Tune => {
            let (ds, _) = load_data(&cfg, seed)?;
            let pipe = prepare(&cfg, ds, seed)?;
            let report = tune(&cfg, &pipe, &cfg.tune, seed)?;
            let mut trials = String::from("trial,lambda1,lambda2,objective\n");
            for (i, t) in report.trials.iter().enumerate() {
                trials.push_str(&format!("{i},{:?},{:?},{:?}\n", t.lambda1, t.lambda2, t.objective));
            }
            write_text(&out.join("trials.csv"), &trials)?;
            write_json(&out.join("tune.json"), &report)?;
            log::info!("selected lambda1 = {:e}, lambda2 = {:e}", report.lambda1, report.lambda2);
        }
    }
    Ok(())
}

/// One row per (seed, penalty, metric).
fn per_seed_long(sweeps: &[SeedSweep]) -> String {
    let mut text = String::from("seed,lambda1,lambda2,metric,value\n");
    for s in sweeps {
        for f in &s.fits {
            let mut put = |name: &str, v: f64| text.push_str(&format!("{},{:?},{:?},{name},{v:?}\n", s.seed, f.lambda1, f.lambda2));
            put("rmse", f.rmse);
            put("iterations", f.iterations as f64);
            if let Some(v) = f.cov_frob {
                put("cov_frob", v);
            }
            if let Some(v) = f.alignment {
                put("alignment", v);
            }
        }
    }
    text
}

fn write_trace(out: &Path, sweeps: &[SeedSweep]) -> Result<()> {
    match sweeps.first() {
        Some(s) => write_text(&out.join("trace.csv"), &s.trace.to_csv()),
        None => Ok(()),
    }
}

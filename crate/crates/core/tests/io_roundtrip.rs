use nalgebra::DMatrix;

use spatial_adapter::adapter::AdapterModel;
use spatial_adapter::dataio::{read_config, read_matrix, read_matrix_masked, write_matrix, ExperimentConfig};
use spatial_adapter::dataset::{read_dataset, write_dataset, Split};
use spatial_adapter::experiment::{adapter_config, prepare};
use spatial_adapter::synth::{generate, DgpConfig};

fn small_dgp() -> DgpConfig {
    DgpConfig { n_sites: 30, n_times: 80, ..DgpConfig::default() }
}

#[test]
fn matrices_survive_disk_in_both_formats() {
    let dir = tempfile::tempdir().unwrap();
    let m = DMatrix::from_fn(37, 11, |i, j| ((i * 13 + j) as f64).sin() * 1e3 + 1e-9 * j as f64);
    for name in ["m.csv", "m.bin"] {
        let path = dir.path().join(name);
        write_matrix(&path, &m).unwrap();
        assert_eq!(read_matrix(&path).unwrap(), m, "{name}");
    }
}

#[test]
fn empty_cells_become_masked_entries() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.csv");
    std::fs::write(&path, "c0,c1,c2\n1.0,,3.0\nNaN,2.5,4\n").unwrap();
    let mm = read_matrix_masked(&path).unwrap();
    assert_eq!(mm.mask, DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 1.0]));
    assert_eq!(mm.values[(1, 1)], 2.5);
    assert!(read_matrix(&path).is_err());
}

#[test]
fn dataset_directory_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let split = Split::contiguous(80, 0.7, 0.15).unwrap();
    let mut ds = generate(&small_dgp(), 5, split).unwrap().dataset;
    ds.mask = Some(DMatrix::from_fn(80, 30, |j, i| f64::from(u8::from((i + j) % 7 != 0))));
    ds.first_stage = Some(DMatrix::from_fn(80, 30, |j, i| (j + i) as f64 * 0.5));
    write_dataset(dir.path(), &ds).unwrap();
    let back = read_dataset(dir.path()).unwrap();
    assert_eq!(back.y, ds.y);
    assert_eq!(back.x, ds.x);
    assert_eq!(back.locations, ds.locations);
    assert_eq!(back.link, ds.link);
    assert_eq!(back.split, ds.split);
    assert_eq!(back.mask, ds.mask);
    assert_eq!(back.first_stage, ds.first_stage);
}

#[test]
fn config_file_defaults_and_rejections() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.json");
    std::fs::write(&good, r#"{"seed": 9, "adapter": {"rho": 5.0}, "not_a_key": 1}"#).unwrap();
    let cfg = read_config(&good).unwrap();
    assert_eq!(cfg.seed, 9);
    assert_eq!(cfg.adapter.rho, 5.0);
    assert_eq!(cfg.adapter.batch_size, ExperimentConfig::default().adapter.batch_size);

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"alpha": 1.5}"#).unwrap();
    assert!(read_config(&bad).is_err());
    assert!(read_config(dir.path().join("missing.json")).is_err());
}

#[test]
fn bundled_config_parses() {
    let cfg = read_config(concat!(env!("CARGO_MANIFEST_DIR"), "/configs/synthetic.json")).unwrap();
    assert_eq!(cfg.replications, 30);
    assert_eq!((cfg.dgp.n_sites, cfg.dgp.n_times), (512, 1024));
}

#[test]
fn saved_model_reconstructs_identically() {
    let mut cfg = ExperimentConfig { dgp: small_dgp(), ..ExperimentConfig::default() };
    cfg.adapter.batch_size = 16;
    cfg.adapter.schedule.max_iters = 40;
    let split = Split::contiguous(80, 0.7, 0.15).unwrap();
    let ds = generate(&cfg.dgp, 2, split).unwrap().dataset;
    let pipe = prepare(&cfg, ds, 2).unwrap();
    let model = pipe.fit(&adapter_config(&cfg, 2, 10.0, 1.0)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    model.save(dir.path()).unwrap();
    let back = AdapterModel::load(dir.path()).unwrap();
    assert_eq!(back.phi, model.phi);
    assert_eq!(back.config, model.config);
    let rows: Vec<usize> = (0..80).collect();
    let a = spatial_adapter::adapter::reconstruct(&model, &pipe.data, &rows).unwrap();
    let b = spatial_adapter::adapter::reconstruct(&back, &pipe.data, &rows).unwrap();
    assert_eq!(a, b);
}

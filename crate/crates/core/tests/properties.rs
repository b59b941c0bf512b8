use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use spatial_adapter::adapter::{basis_step, z_update_gaussian, SparsityLoop};
use spatial_adapter::covariance::{estimate_covariance, materialize_sigma};
use spatial_adapter::dataio::matrix::{decode_binary, parse_csv, to_binary, to_csv_string};
use spatial_adapter::dataset::{Covariates, Link, SpatialDataset, Split};
use spatial_adapter::firststage::{compute_residual, FirstStage, TrendModel, TrendSpec};
use spatial_adapter::geometry::{build_roughness, extend_basis, LocationSet};
use spatial_adapter::linalg::{orthonormality_error, polar_factor, sym_eigen};
use spatial_adapter::metrics::{classification, cov_frob, entries_for_rows, pointwise};
use spatial_adapter::predict::{gaussian_interval, logistic_interval, Kriger, ObservationSet, SolvePath};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-10.0..10.0f64, rows * cols).prop_map(move |v| DMatrix::from_vec(rows, cols, v))
}

fn sized_matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| matrix(r, c))
}

/// Orthonormal N×K basis from a random matrix.
fn basis(n: usize, k: usize) -> impl Strategy<Value = DMatrix<f64>> {
    matrix(n, k).prop_map(move |g| polar_factor(&(g + DMatrix::identity(n, k) * 3.0)).unwrap())
}

fn sites_1d(n: usize) -> impl Strategy<Value = LocationSet> {
    prop::collection::vec(0.05..1.0f64, n).prop_map(|gaps| {
        let mut acc = 0.0;
        let coords: Vec<f64> = gaps.iter().map(|g| {
            acc += g;
            acc
        }).collect();
        LocationSet::new(DMatrix::from_vec(coords.len(), 1, coords)).unwrap()
    })
}

fn sites_2d(n: usize) -> impl Strategy<Value = LocationSet> {
    prop::collection::vec((0.0..10.0f64, 0.0..10.0f64), n)
        .prop_filter("distinct sites", |pts| {
            pts.iter().enumerate().all(|(i, a)| pts[..i].iter().all(|b| (a.0 - b.0).hypot(a.1 - b.1) > 1e-2))
        })
        .prop_map(|pts| LocationSet::new(DMatrix::from_fn(pts.len(), 2, |i, c| if c == 0 { pts[i].0 } else { pts[i].1 })).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csv_and_binary_round_trip(m in sized_matrix(12, 9)) {
        prop_assert_eq!(&parse_csv(&to_csv_string(&m), "t").unwrap(), &m);
        prop_assert_eq!(&decode_binary(&to_binary(&m), "t").unwrap(), &m);
    }

    #[test]
    fn roughness_is_psd_and_kills_affine_functions(locs in prop_oneof![sites_1d(9), sites_2d(9)]) {
        let r = build_roughness(&locs).unwrap();
        let omega = &r.omega;
        prop_assert!((omega - omega.transpose()).abs().max() == 0.0);
        let (vals, _) = sym_eigen(omega).unwrap();
        prop_assert!(vals.min() >= -1e-10 * r.spectral_norm);
        let scale = r.spectral_norm.max(1.0);
        let ones = DVector::from_element(locs.len(), 1.0);
        prop_assert!((omega * ones).amax() <= 1e-7 * scale);
        for c in 0..locs.dim() {
            let coord = locs.coords().column(c).into_owned();
            prop_assert!((omega * coord).amax() <= 1e-7 * scale * 10.0);
        }
    }

    #[test]
    fn basis_extension_is_identity_on_sites(locs in sites_1d(10), g in matrix(10, 2)) {
        let phi = polar_factor(&(g + DMatrix::identity(10, 2) * 3.0)).unwrap();
        let back = extend_basis(&locs, &phi, locs.coords()).unwrap();
        prop_assert!((back - &phi).amax() <= 1e-8);
    }

    #[test]
    fn consensus_update_keeps_basis_part(res in matrix(4, 7), phi in basis(7, 2), rho in 0.1..10.0f64) {
        let z = z_update_gaussian(&res, &phi, rho).unwrap();
        let p = &phi * phi.transpose();
        prop_assert!((&z * &p - &res * &p).amax() <= 1e-10);
        let perp = DMatrix::identity(7, 7) - p;
        let expected = (&res * &perp) * (rho / (rho + 2.0));
        prop_assert!((&z * &perp - expected).amax() <= 1e-10);
    }

    #[test]
    fn basis_step_is_orthonormal(
        g in matrix(12, 8),
        l1 in 0.0..5.0f64,
        l2 in prop_oneof![Just(0.0), 0.0..2.0f64],
        k in 1usize..4,
    ) {
        let c = g.transpose() * &g;
        let locs = LocationSet::equispaced_1d(8, 0.0, 1.0).unwrap();
        let r = build_roughness(&locs).unwrap();
        let phi = basis_step(&c, &r.omega, r.spectral_norm, l1, l2, k, None, &SparsityLoop::default()).unwrap();
        prop_assert_eq!(phi.shape(), (8, k));
        prop_assert!(orthonormality_error(&phi) <= 1e-8);
    }

    #[test]
    fn covariance_estimate_is_psd(r in matrix(30, 8), phi in basis(8, 3), tau in 0.0..3.0f64) {
        let s = r.transpose() * &r / 30.0;
        let est = estimate_covariance(&phi, &s, tau).unwrap();
        prop_assert!(est.noise_var > 0.0);
        prop_assert!(est.variances.iter().all(|&v| v >= 0.0));
        prop_assert_eq!(est.rank, est.variances.iter().filter(|&&v| v > 0.0).count());
        let sigma = materialize_sigma(&est, &phi);
        let (vals, _) = sym_eigen(&sigma).unwrap();
        prop_assert!(vals.min() >= -1e-9 * vals.max().abs());
    }

    #[test]
    fn kriging_variance_is_at_least_the_nugget(
        phi in basis(9, 2),
        lam in prop::collection::vec(0.1..20.0f64, 2),
        noise in 0.05..4.0f64,
        vals in prop::collection::vec(-5.0..5.0f64, 5),
        q in matrix(3, 2),
    ) {
        let mut s = &phi * DMatrix::from_diagonal(&DVector::from_vec(lam.clone())) * phi.transpose();
        s += DMatrix::identity(9, 9) * noise;
        let est = estimate_covariance(&phi, &s, 0.0).unwrap();
        let kriger = Kriger::new(&phi, &est).unwrap();
        let obs = ObservationSet::new(vec![0, 2, 4, 6, 8], DVector::from_vec(vals), 9).unwrap();
        for p in kriger.predict(&obs, &q, &[0.0; 3], SolvePath::Auto).unwrap() {
            prop_assert!(p.var >= est.noise_var * (1.0 - 1e-12));
        }
    }

    #[test]
    fn intervals_are_ordered(eta in -20.0..20.0f64, var in 0.0..30.0f64, alpha in 0.01..0.5f64) {
        let (lo, hi) = gaussian_interval(eta, var, alpha).unwrap();
        prop_assert!(lo <= eta && eta <= hi);
        let (plo, phi_) = logistic_interval(eta, var, alpha).unwrap();
        prop_assert!((0.0..=1.0).contains(&plo) && plo <= phi_ && phi_ <= 1.0);
    }

    #[test]
    fn residual_inverts_the_decomposition(
        y in matrix(5, 4),
        f in matrix(5, 4),
        x in prop::collection::vec(-3.0..3.0f64, 5 * 4 * 2),
        w in prop::collection::vec(-1.0..1.0f64, 3),
    ) {
        let ds = SpatialDataset {
            y: y.clone(),
            x: Covariates::new(5, 4, 2, x).unwrap(),
            locations: LocationSet::equispaced_1d(4, 0.0, 1.0).unwrap(),
            link: Link::Identity,
            split: Split { train: (0..5).collect(), val: vec![], test: vec![] },
            mask: None,
            first_stage: Some(f.clone()),
        };
        let rows: Vec<usize> = (0..5).collect();
        let mut trend = TrendModel::new(&TrendSpec::Linear, &ds.x, &rows, 1).unwrap();
        trend.set_params(&w).unwrap();
        let r = compute_residual(&ds, &FirstStage::External, &trend, &rows, 1e-7).unwrap();
        let m = trend.predict(&ds.x, &rows);
        prop_assert!((f + m + r - y).amax() <= 1e-12);
    }

    #[test]
    fn metrics_ignore_entry_order(y in matrix(4, 5), p in matrix(4, 5), seed in any::<u64>()) {
        let mut idx = entries_for_rows(&[0, 1, 2, 3], 5);
        let a = pointwise(&y, &p, &idx).unwrap();
        let len = idx.len();
        let mut s = seed;
        for i in (1..len).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            idx.swap(i, (s >> 33) as usize % (i + 1));
        }
        let b = pointwise(&y, &p, &idx).unwrap();
        prop_assert!((a.rmse - b.rmse).abs() <= 1e-12 && (a.mae - b.mae).abs() <= 1e-12 && (a.r2 - b.r2).abs() <= 1e-9);
    }

    #[test]
    fn cov_frob_is_homogeneous(g in matrix(6, 4), c in -3.0..3.0f64) {
        let reference = g.transpose() * &g + DMatrix::identity(4, 4);
        let v = cov_frob(&(&reference * c), &reference).unwrap();
        prop_assert!((v - (c - 1.0).abs()).abs() <= 1e-12);
    }

    #[test]
    fn auc_matches_pair_count(pairs in prop::collection::vec((0u8..2, 0u8..5), 2..50)) {
        let n = pairs.len();
        let y = DMatrix::from_fn(1, n, |_, i| f64::from(pairs[i].0));
        let p = DMatrix::from_fn(1, n, |_, i| f64::from(pairs[i].1) / 4.0);
        let idx = entries_for_rows(&[0], n);
        let got = classification(&y, &p, &idx, 0.5).unwrap().auc;
        let (mut wins, mut total) = (0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                if pairs[i].0 == 1 && pairs[j].0 == 0 {
                    total += 1.0;
                    wins += match pairs[i].1.cmp(&pairs[j].1) {
                        std::cmp::Ordering::Greater => 1.0,
                        std::cmp::Ordering::Equal => 0.5,
                        std::cmp::Ordering::Less => 0.0,
                    };
                }
            }
        }
        match got {
            Some(a) => prop_assert!((a - wins / total).abs() <= 1e-12),
            None => prop_assert_eq!(total, 0.0),
        }
    }
}

//! Locations, the thin-plate-spline bending-energy matrix and TPS
//! interpolation used to extend a basis to new sites.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// Two sites closer than this are treated as duplicates.
pub const DUPLICATE_TOL: f64 = 1e-12;

/// N sites in one or two dimensions, one per row.
#[derive(Clone, Debug, PartialEq)]
pub struct LocationSet {
    coords: DMatrix<f64>,
}

impl LocationSet {
    pub fn new(coords: DMatrix<f64>) -> Result<Self> {
        let (n, d) = coords.shape();
        if d == 0 || d > 2 {
            return Err(Error::invalid(format!("locations must be 1- or 2-dimensional, got d={d}")));
        }
        if n < d + 2 {
            return Err(Error::invalid(format!("need at least {} sites in {d}D, got {n}", d + 2)));
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite coordinate"));
        }
        let set = LocationSet { coords };
        for i in 0..n {
            for j in 0..i {
                if set.distance(i, j) <= DUPLICATE_TOL {
                    return Err(Error::invalid(format!("sites {j} and {i} coincide")));
                }
            }
        }
        Ok(set)
    }

    /// `n` equispaced points on `[lo, hi]`.
    pub fn equispaced_1d(n: usize, lo: f64, hi: f64) -> Result<Self> {
        let step = if n > 1 { (hi - lo) / (n - 1) as f64 } else { 0.0 };
        Self::new(DMatrix::from_fn(n, 1, |i, _| lo + step * i as f64))
    }

    pub fn len(&self) -> usize {
        self.coords.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.coords.ncols()
    }

    pub fn coords(&self) -> &DMatrix<f64> {
        &self.coords
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        (self.coords.row(i) - self.coords.row(j)).norm()
    }

    /// Sites at the given indices, in that order.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        Self::new(self.coords.select_rows(idx.iter()))
    }
}

/// TPS radial kernel: `r³` in 1D and `r² log r` in 2D (zero at the origin).
pub fn tps_kernel(r: f64, dim: usize) -> f64 {
    match dim {
        1 => r * r * r,
        _ => {
            if r <= 0.0 {
                0.0
            } else {
                r * r * r.ln()
            }
        }
    }
}

/// Bending-energy penalty matrix of a site set. Symmetric PSD with the
/// affine functions in its null space.
#[derive(Clone, Debug)]
pub struct RoughnessMatrix {
    pub omega: DMatrix<f64>,
    /// Largest eigenvalue, kept for step-size bounds.
    pub spectral_norm: f64,
    /// Smallest eigenvalue before clipping at zero.
    pub min_eigenvalue: f64,
}

fn bordered_system(locs: &LocationSet) -> DMatrix<f64> {
    let (n, d) = (locs.len(), locs.dim());
    let m = n + d + 1;
    let mut b = DMatrix::zeros(m, m);
    for i in 0..n {
        for j in 0..i {
            let k = tps_kernel(locs.distance(i, j), d);
            b[(i, j)] = k;
            b[(j, i)] = k;
        }
        b[(i, n)] = 1.0;
        b[(n, i)] = 1.0;
        for c in 0..d {
            b[(i, n + 1 + c)] = locs.coords[(i, c)];
            b[(n + 1 + c, i)] = locs.coords[(i, c)];
        }
    }
    b
}

/// Factorised bordered TPS system for a site set.
pub struct TpsSystem {
    locs: LocationSet,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl TpsSystem {
    pub fn new(locs: &LocationSet) -> Result<Self> {
        let lu = bordered_system(locs).lu();
        let n = locs.len() + locs.dim() + 1;
        // Reject (numerically) singular systems, e.g. collinear sites in 2D.
        let diag = lu.u().diagonal();
        let scale = diag.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let tiny = diag.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
        if !(tiny > 1e-13 * scale) || diag.len() != n {
            return Err(Error::Numerical("singular thin-plate-spline system (degenerate sites)".into()));
        }
        Ok(TpsSystem { locs: locs.clone(), lu })
    }

    fn solve(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.lu
            .solve(rhs)
            .ok_or_else(|| Error::Numerical("thin-plate-spline solve failed".into()))
    }

    /// Interpolate the columns of `values` (N×K).
    pub fn fit(&self, values: &DMatrix<f64>) -> Result<TpsInterpolant> {
        let (n, d) = (self.locs.len(), self.locs.dim());
        if values.nrows() != n {
            return Err(Error::dim(format!("{} values for {n} sites", values.nrows())));
        }
        let mut rhs = DMatrix::zeros(n + d + 1, values.ncols());
        rhs.rows_mut(0, n).copy_from(values);
        let sol = self.solve(&rhs)?;
        Ok(TpsInterpolant {
            sites: self.locs.clone(),
            weights: sol.rows(0, n).into_owned(),
            affine: sol.rows(n, d + 1).into_owned(),
        })
    }
}

pub fn build_roughness(locs: &LocationSet) -> Result<RoughnessMatrix> {
    let n = locs.len();
    let system = TpsSystem::new(locs)?;
    let mut rhs = DMatrix::zeros(n + locs.dim() + 1, n);
    rhs.view_mut((0, 0), (n, n)).fill_with_identity();
    let inv = system.solve(&rhs)?;
    let block = linalg::symmetrize(&inv.rows(0, n).into_owned());
    let (vals, vecs) = linalg::sym_eigen(&block)?;
    let min_eigenvalue = vals[0];
    let spectral_norm = vals[n - 1].max(0.0);
    let omega = if min_eigenvalue < 0.0 {
        let clipped = vals.map(|v| v.max(0.0));
        linalg::symmetrize(&(&vecs * DMatrix::from_diagonal(&clipped) * vecs.transpose()))
    } else {
        block
    };
    if min_eigenvalue < -1e-8 * spectral_norm {
        log::warn!("bending-energy matrix had eigenvalue {min_eigenvalue:.3e}; clipped to zero");
    }
    Ok(RoughnessMatrix { omega, spectral_norm, min_eigenvalue })
}

/// Fitted TPS interpolant, possibly vector valued (K columns).
#[derive(Clone, Debug)]
pub struct TpsInterpolant {
    sites: LocationSet,
    weights: DMatrix<f64>,
    affine: DMatrix<f64>,
}

impl TpsInterpolant {
    /// Evaluate at query points (Q×d); returns Q×K.
    pub fn eval(&self, query: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let d = self.sites.dim();
        if query.ncols() != d {
            return Err(Error::dim(format!("query has {} coordinates, sites have {d}", query.ncols())));
        }
        let n = self.sites.len();
        let mut design = DMatrix::zeros(query.nrows(), n + d + 1);
        for q in 0..query.nrows() {
            for i in 0..n {
                let r = (query.row(q) - self.sites.coords.row(i)).norm();
                design[(q, i)] = tps_kernel(r, d);
            }
            design[(q, n)] = 1.0;
            for c in 0..d {
                design[(q, n + 1 + c)] = query[(q, c)];
            }
        }
        let mut coef = DMatrix::zeros(n + d + 1, self.weights.ncols());
        coef.rows_mut(0, n).copy_from(&self.weights);
        coef.rows_mut(n, d + 1).copy_from(&self.affine);
        Ok(design * coef)
    }
}

pub fn tps_fit(locs: &LocationSet, values: &DMatrix<f64>) -> Result<TpsInterpolant> {
    TpsSystem::new(locs)?.fit(values)
}

/// Evaluate each basis column's TPS interpolant at new sites.
pub fn extend_basis(locs: &LocationSet, phi: &DMatrix<f64>, query: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    tps_fit(locs, phi)?.eval(query)
}

/// `vᵀ Ω v` for a vector field on the sites.
pub fn roughness_of(omega: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    v.dot(&(omega * v))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_2d(k: usize) -> LocationSet {
        let pts: Vec<f64> = (0..k * k)
            .flat_map(|i| {
                let (a, b) = ((i / k) as f64, (i % k) as f64);
                [a + 0.1 * (b * 0.37).sin(), b + 0.05 * a]
            })
            .collect();
        LocationSet::new(DMatrix::from_row_slice(k * k, 2, &pts)).unwrap()
    }

    #[test]
    fn kernels() {
        assert_eq!(tps_kernel(2.0, 1), 8.0);
        assert_eq!(tps_kernel(0.0, 2), 0.0);
        assert!((tps_kernel(std::f64::consts::E, 2) - std::f64::consts::E.powi(2)).abs() < 1e-12);
    }

    #[test]
    fn affine_null_space() {
        for locs in [LocationSet::equispaced_1d(40, -5.0, 5.0).unwrap(), grid_2d(6)] {
            let rm = build_roughness(&locs).unwrap();
            let n = locs.len();
            let ones = DVector::from_element(n, 1.0);
            assert!((&rm.omega * &ones).norm() < 1e-8 * rm.spectral_norm);
            for c in 0..locs.dim() {
                let x = locs.coords().column(c).into_owned();
                assert!((&rm.omega * &x).norm() < 1e-8 * rm.spectral_norm * x.norm());
            }
            assert!(rm.min_eigenvalue > -1e-10 * rm.spectral_norm);
            assert_eq!(rm.omega, rm.omega.transpose());
        }
    }

    #[test]
    fn bending_energy_of_quadratic_1d() {
        // For f = x² on a dense grid the natural cubic spline energy ∫ f''²
        // over [0, 1] is 4. The kernel r³ scales the energy by 1/12.
        let locs = LocationSet::equispaced_1d(60, 0.0, 1.0).unwrap();
        let rm = build_roughness(&locs).unwrap();
        let f = DVector::from_iterator(60, locs.coords().column(0).iter().map(|x| x * x));
        let energy = 12.0 * roughness_of(&rm.omega, &f);
        assert!((energy - 4.0).abs() < 0.05, "energy {energy}");
    }

    #[test]
    fn interpolates_sites() {
        let locs = grid_2d(5);
        let phi = DMatrix::from_fn(25, 2, |i, j| ((i * (j + 3)) as f64).cos());
        let ext = extend_basis(&locs, &phi, locs.coords()).unwrap();
        assert!((ext - &phi).abs().max() < 1e-8);
    }

    #[test]
    fn reproduces_affine_off_sites() {
        let locs = grid_2d(4);
        let lin = DMatrix::from_fn(16, 1, |i, _| 2.0 + locs.coords()[(i, 0)] - 0.5 * locs.coords()[(i, 1)]);
        let q = DMatrix::from_row_slice(2, 2, &[0.5, 0.7, 2.2, 1.9]);
        let v = extend_basis(&locs, &lin, &q).unwrap();
        assert!((v[(0, 0)] - (2.0 + 0.5 - 0.35)).abs() < 1e-8);
        assert!((v[(1, 0)] - (2.0 + 2.2 - 0.95)).abs() < 1e-8);
    }

    #[test]
    fn rejects_bad_sites() {
        assert!(LocationSet::new(DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 1.0])).is_err());
        assert!(LocationSet::new(DMatrix::zeros(5, 3)).is_err());
        assert!(LocationSet::new(DMatrix::from_row_slice(2, 1, &[0.0, 1.0])).is_err());
        let collinear = LocationSet::new(DMatrix::from_fn(5, 2, |i, _| i as f64)).unwrap();
        assert!(build_roughness(&collinear).is_err());
    }
}

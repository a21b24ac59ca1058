//! Small dense SPD matrix algebra and Gaussian laws.
//!
//! Matrices here are tiny (dimension 1 or 2 in practice), so every
//! factorization goes through a symmetric eigendecomposition. That route
//! handles semidefinite input uniformly: square roots, sampling factors and
//! solves all see the same clamped spectrum.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative asymmetry accepted on construction.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Eigenvalues in `[-NEG_EIG_TOL, 0)` are treated as roundoff and clamped.
pub const NEG_EIG_TOL: f64 = 1e-10;
/// `spd_solve` refuses systems with a larger condition number.
pub const MAX_CONDITION: f64 = 1e12;

/// Coordinate convention of one component of a law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coord {
    /// Natural logarithm of a price.
    Log,
    /// Price level.
    Level,
}

impl Coord {
    /// Maps a price level into this coordinate.
    pub fn from_level(self, x: f64) -> Result<f64> {
        match self {
            Coord::Level => Ok(x),
            Coord::Log if x > 0.0 => Ok(x.ln()),
            Coord::Log => Err(Error::domain(format!(
                "log coordinate requires a positive level, got {x}"
            ))),
        }
    }

    pub fn to_level(self, x: f64) -> f64 {
        match self {
            Coord::Level => x,
            Coord::Log => x.exp(),
        }
    }
}

/// Symmetric positive semidefinite matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix(DMatrix<f64>);

impl SpdMatrix {
    /// Validates symmetry and semidefiniteness. The stored matrix is the
    /// exact symmetrization of the input.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(Error::domain(format!(
                "covariance must be a non-empty square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("covariance has non-finite entries"));
        }
        let sym = symmetrize(&m);
        let scale = m.norm();
        let asym = (&m - m.transpose()).norm();
        if asym > SYMMETRY_TOL * scale {
            return Err(Error::domain(format!("matrix is not symmetric (asymmetry {asym:.3e})")));
        }
        let min_eig = SymmetricEigen::new(sym.clone()).eigenvalues.min();
        if min_eig < -neg_tol(&sym) {
            return Err(Error::domain(format!(
                "matrix is not positive semidefinite (eigenvalue {min_eig:.3e})"
            )));
        }
        Ok(SpdMatrix(sym))
    }

    pub fn from_row_slice(dim: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(Error::domain(format!(
                "expected {} entries for a {dim}x{dim} matrix, got {}",
                dim * dim,
                entries.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(dim, dim, entries))
    }

    pub fn identity(dim: usize) -> Self {
        SpdMatrix(DMatrix::identity(dim, dim))
    }

    pub fn zeros(dim: usize) -> Self {
        SpdMatrix(DMatrix::zeros(dim, dim))
    }

    pub fn diagonal(d: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_row_slice(d)))
    }

    pub(crate) fn from_trusted(m: DMatrix<f64>) -> Self {
        SpdMatrix(symmetrize(&m))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn scale(&self, c: f64) -> SpdMatrix {
        SpdMatrix(&self.0 * c)
    }

    /// Eigenvalues (ascending) with eigenvectors as columns, after clamping
    /// roundoff negatives to zero.
    pub fn eigen(&self) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let eig = SymmetricEigen::new(self.0.clone());
        let tol = neg_tol(&self.0);
        let mut order: Vec<usize> = (0..self.dim()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let mut values = DVector::zeros(self.dim());
        let mut vectors = DMatrix::zeros(self.dim(), self.dim());
        for (k, &i) in order.iter().enumerate() {
            let lambda = eig.eigenvalues[i];
            if lambda < -tol {
                return Err(Error::domain(format!(
                    "negative eigenvalue {lambda:.3e} below clamp threshold"
                )));
            }
            values[k] = lambda.max(0.0);
            vectors.set_column(k, &eig.eigenvectors.column(i));
        }
        Ok((values, vectors))
    }

    /// `V f(Λ) Vᵀ` for a spectral function `f`.
    fn spectral_map(&self, f: impl Fn(f64) -> f64) -> Result<DMatrix<f64>> {
        let (values, vectors) = self.eigen()?;
        let mapped = DMatrix::from_diagonal(&values.map(f));
        Ok(symmetrize(&(&vectors * mapped * vectors.transpose())))
    }

    /// Inverse square root; requires a strictly positive spectrum.
    pub fn inv_sqrt(&self) -> Result<SpdMatrix> {
        let (values, _) = self.eigen()?;
        if values.min() <= 0.0 {
            return Err(Error::domain("inverse square root of a singular matrix"));
        }
        Ok(SpdMatrix(self.spectral_map(|l| 1.0 / l.sqrt())?))
    }

    /// `F` with `F Fᵀ = self`, built as `V Λ^{1/2}`. Degenerate directions get
    /// zero columns.
    pub fn factor(&self) -> Result<DMatrix<f64>> {
        let (values, vectors) = self.eigen()?;
        let root = DMatrix::from_diagonal(&values.map(f64::sqrt));
        Ok(vectors * root)
    }

    /// Ratio of extreme eigenvalues (infinite when singular).
    pub fn condition(&self) -> Result<f64> {
        let (values, _) = self.eigen()?;
        let (lo, hi) = (values.min(), values.max());
        Ok(if lo <= 0.0 { f64::INFINITY } else { hi / lo })
    }
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn neg_tol(m: &DMatrix<f64>) -> f64 {
    NEG_EIG_TOL * m.amax().max(1.0)
}

/// Principal square root of a PSD matrix.
pub fn spd_sqrt(a: &SpdMatrix) -> Result<SpdMatrix> {
    Ok(SpdMatrix(a.spectral_map(f64::sqrt)?))
}

/// Solves `A x = b` for strictly positive definite `A`.
pub fn spd_solve(a: &SpdMatrix, b: &DVector<f64>) -> Result<DVector<f64>> {
    if b.len() != a.dim() {
        return Err(Error::domain(format!(
            "right-hand side has length {}, matrix is {}x{}",
            b.len(),
            a.dim(),
            a.dim()
        )));
    }
    let condition = a.condition()?;
    if condition > MAX_CONDITION {
        return Err(Error::IllConditioned { condition });
    }
    let chol = a
        .matrix()
        .clone()
        .cholesky()
        .ok_or(Error::IllConditioned { condition })?;
    Ok(chol.solve(b))
}

/// Multivariate normal law in a stated coordinate convention.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianLaw {
    mean: DVector<f64>,
    cov: SpdMatrix,
    coords: Vec<Coord>,
}

impl GaussianLaw {
    pub fn new(mean: DVector<f64>, cov: SpdMatrix, coords: Vec<Coord>) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(Error::domain(format!(
                "mean has dimension {}, covariance {}",
                mean.len(),
                cov.dim()
            )));
        }
        if coords.len() != mean.len() {
            return Err(Error::domain(format!(
                "{} coordinate tags for a {}-dimensional law",
                coords.len(),
                mean.len()
            )));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("mean has non-finite entries"));
        }
        Ok(GaussianLaw { mean, cov, coords })
    }

    /// Law with every coordinate in level units.
    pub fn level(mean: &[f64], cov: SpdMatrix) -> Result<Self> {
        let n = mean.len();
        Self::new(DVector::from_row_slice(mean), cov, vec![Coord::Level; n])
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &SpdMatrix {
        &self.cov
    }

    pub fn coords(&self) -> &[Coord] {
        &self.coords
    }
}

/// `n` i.i.d. draws from `law`, using the eigen factor of its covariance.
pub fn sample_gaussian<R: Rng + ?Sized>(law: &GaussianLaw, n: usize, rng: &mut R) -> Result<Vec<DVector<f64>>> {
    if n == 0 {
        return Err(Error::domain("sample count must be at least 1"));
    }
    let factor = law.cov.factor()?;
    let d = law.dim();
    let mut z = DVector::zeros(d);
    let draws = (0..n)
        .map(|_| {
            for zi in z.iter_mut() {
                *zi = rng.sample(StandardNormal);
            }
            &law.mean + &factor * &z
        })
        .collect();
    Ok(draws)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn rel_frob(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn sqrt_identity_and_diagonal() {
        let i = SpdMatrix::identity(2);
        assert_eq!(spd_sqrt(&i).unwrap().matrix(), i.matrix());
        let d = spd_sqrt(&SpdMatrix::diagonal(&[4.0, 9.0]).unwrap()).unwrap();
        assert_relative_eq!(d.get(0, 0), 2.0, epsilon = 1e-15);
        assert_relative_eq!(d.get(1, 1), 3.0, epsilon = 1e-15);
        assert_relative_eq!(d.get(0, 1), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn sqrt_matches_eigendecomposition_oracle() {
        // Eigenpairs 1 ↦ (1,-1)/√2 and 3 ↦ (1,1)/√2 give
        // B = ½[[1+√3, √3-1], [√3-1, 1+√3]].
        let a = SpdMatrix::from_row_slice(2, &[2.0, 1.0, 1.0, 2.0]).unwrap();
        let b = spd_sqrt(&a).unwrap();
        let (diag, off) = (1.366_025_403_784_438_6, 0.366_025_403_784_438_6);
        assert_relative_eq!(b.get(0, 0), diag, epsilon = 1e-14);
        assert_relative_eq!(b.get(1, 1), diag, epsilon = 1e-14);
        assert_relative_eq!(b.get(0, 1), off, epsilon = 1e-14);
        assert!(rel_frob(&(b.matrix() * b.matrix()), a.matrix()) < 1e-12);
    }

    #[test]
    fn rejects_asymmetric_and_indefinite() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(matches!(SpdMatrix::new(asym), Err(Error::Domain(_))));
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(SpdMatrix::new(indefinite), Err(Error::Domain(_))));
    }

    #[test]
    fn tiny_negative_eigenvalues_are_clamped() {
        let a = SpdMatrix::from_row_slice(2, &[1.0, 1.0, 1.0, 1.0 - 1e-11]).unwrap();
        let b = spd_sqrt(&a).unwrap();
        assert!(rel_frob(&(b.matrix() * b.matrix()), a.matrix()) < 1e-10);
        let (values, _) = a.eigen().unwrap();
        assert!(values.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn solve_examples() {
        let b = DVector::from_row_slice(&[7.0, 8.0]);
        let x = spd_solve(&SpdMatrix::identity(2), &b).unwrap();
        assert_eq!(x, b);
        let a = SpdMatrix::from_row_slice(2, &[2.0, 1.0, 1.0, 2.0]).unwrap();
        let x = spd_solve(&a, &b).unwrap();
        assert_relative_eq!(x[0], 2.0, epsilon = 1e-14);
        assert_relative_eq!(x[1], 3.0, epsilon = 1e-14);
        let d = SpdMatrix::diagonal(&[4.0, 9.0]).unwrap();
        let x = spd_solve(&d, &DVector::from_row_slice(&[8.0, 18.0])).unwrap();
        assert_relative_eq!(x[0], 2.0, epsilon = 1e-15);
        assert_relative_eq!(x[1], 2.0, epsilon = 1e-15);
    }

    #[test]
    fn solve_rejects_ill_conditioned() {
        let a = SpdMatrix::diagonal(&[1.0, 1e-13]).unwrap();
        let err = spd_solve(&a, &DVector::from_row_slice(&[1.0, 1.0])).unwrap_err();
        match err {
            Error::IllConditioned { condition } => assert!(condition > 1e12),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn standard_normal_sample_mean() {
        let law = GaussianLaw::level(&[0.0, 0.0], SpdMatrix::identity(2)).unwrap();
        let n = 200_000;
        let draws = sample_gaussian(&law, n, &mut rng::stream(11)).unwrap();
        let bound = 3.0 / (n as f64).sqrt();
        for k in 0..2 {
            let mean = draws.iter().map(|x| x[k]).sum::<f64>() / n as f64;
            assert!(mean.abs() < bound, "coordinate {k}: {mean}");
        }
    }

    #[test]
    fn gbm_quarter_year_variance_recovered() {
        // Log-price law after 0.25y: variance σ²τ = 0.55²·0.25 = 0.075625.
        let (s, st, tau) = (0.55_f64, 0.40_f64, 0.25);
        let cov = SpdMatrix::from_row_slice(
            2,
            &[s * s * tau, 0.75 * s * st * tau, 0.75 * s * st * tau, st * st * tau],
        )
        .unwrap();
        let law = GaussianLaw::new(
            DVector::from_row_slice(&[3.881_711, 3.77]),
            cov,
            vec![Coord::Log, Coord::Log],
        )
        .unwrap();
        let n = 100_000;
        let draws = sample_gaussian(&law, n, &mut rng::stream(5)).unwrap();
        let mean = draws.iter().map(|x| x[0]).sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x[0] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = 0.075625 * (2.0 / (n as f64 - 1.0)).sqrt();
        assert!((var - 0.075625).abs() < 3.0 * se, "var {var}");
    }

    #[test]
    fn degenerate_law_draws_equal_mean() {
        let law = GaussianLaw::level(&[1.5, -2.0], SpdMatrix::zeros(2)).unwrap();
        let draws = sample_gaussian(&law, 50, &mut rng::stream(1)).unwrap();
        assert!(draws.iter().all(|x| x == law.mean()));
    }

    #[test]
    fn sample_moments_within_four_standard_errors() {
        let cov = SpdMatrix::from_row_slice(2, &[2.0, -0.6, -0.6, 0.5]).unwrap();
        let law = GaussianLaw::level(&[1.0, -3.0], cov.clone()).unwrap();
        let n = 100_000;
        let draws = sample_gaussian(&law, n, &mut rng::stream(99)).unwrap();
        let nf = n as f64;
        let mean: DVector<f64> = draws.iter().fold(DVector::zeros(2), |acc, x| acc + x) / nf;
        for i in 0..2 {
            let se = (cov.get(i, i) / nf).sqrt();
            assert!((mean[i] - law.mean()[i]).abs() < 4.0 * se);
            for j in 0..2 {
                let prods: Vec<f64> = draws.iter().map(|x| (x[i] - mean[i]) * (x[j] - mean[j])).collect();
                let c = prods.iter().sum::<f64>() / nf;
                let v = prods.iter().map(|p| (p - c).powi(2)).sum::<f64>() / nf;
                assert!((c - cov.get(i, j)).abs() < 4.0 * (v / nf).sqrt());
            }
        }
    }

    fn random_spd(seed: u64, max_log10_cond: f64) -> SpdMatrix {
        let mut r = rng::stream(seed);
        let angle: f64 = r.gen_range(0.0..std::f64::consts::PI);
        let (c, s) = (angle.cos(), angle.sin());
        let q = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        let top: f64 = r.gen_range(-2.0..2.0);
        let spread: f64 = r.gen_range(0.0..max_log10_cond);
        let l = DMatrix::from_diagonal(&DVector::from_row_slice(&[10f64.powf(top), 10f64.powf(top - spread)]));
        SpdMatrix::new(&q * l * q.transpose()).unwrap()
    }

    #[test]
    fn sqrt_squares_back_on_random_matrices() {
        for seed in 0..1000 {
            let a = random_spd(seed, 6.0);
            let b = spd_sqrt(&a).unwrap();
            let err = rel_frob(&(b.matrix() * b.matrix()), a.matrix());
            assert!(err < 1e-12, "seed {seed}: {err:.3e}");
        }
    }

    proptest! {
        #[test]
        fn sqrt_commutes_with_scaling(seed in 0u64..10_000, c in 1e-3f64..1e3) {
            let a = random_spd(seed, 6.0);
            let lhs = spd_sqrt(&a.scale(c)).unwrap();
            let rhs = spd_sqrt(&a).unwrap().scale(c.sqrt());
            prop_assert!(rel_frob(lhs.matrix(), rhs.matrix()) < 1e-12);
        }
    }
}

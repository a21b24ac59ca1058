//! 2-Wasserstein geometry on Gaussian laws and the aggregate model.
//!
//! The barycenter of Gaussian laws `N(mᵢ, Cᵢ)` with weights `wᵢ` is the
//! Gaussian whose mean is `Σ wᵢ mᵢ` and whose covariance `C` solves
//!
//! ```text
//! C = Σ wᵢ (C^{1/2} Cᵢ C^{1/2})^{1/2}
//! ```
//!
//! which is found by the fixed-point map
//! `C ↦ C^{-1/2} (Σ wᵢ (C^{1/2} Cᵢ C^{1/2})^{1/2})² C^{-1/2}`.
//!
//! Weighted sums are accumulated as offsets from the first input, so a set
//! of identical inputs reproduces that input bit for bit.

use nalgebra::{DMatrix, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::{spd_sqrt, GaussianLaw, SpdMatrix};
use crate::models::{
    conditional_law_with, transition_kernel_with, AffineGaussianKernel, CrossCovariance, Family, ModelSpec,
};

pub const DEFAULT_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_ITER: usize = 500;
/// Extra iterations allowed after the stop rule is met.
const POLISH_STEPS: usize = 3;
/// Accepted deviation of the weight sum from one.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Point of the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::domain("weight vector is empty"));
        }
        if let Some(bad) = w.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::domain(format!("weights must be nonnegative, got {bad}")));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::domain(format!("weights must sum to 1, got {sum}")));
        }
        Ok(WeightVector(w))
    }

    pub fn uniform(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::domain("weight vector is empty"));
        }
        Ok(WeightVector(vec![1.0 / m as f64; m]))
    }

    /// Unit vector `e_i` of length `m`.
    pub fn unit(m: usize, i: usize) -> Result<Self> {
        if i >= m {
            return Err(Error::domain(format!("unit index {i} out of range for {m} weights")));
        }
        let mut w = vec![0.0; m];
        w[i] = 1.0;
        Ok(WeightVector(w))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for WeightVector {
    type Error = Error;

    fn try_from(w: Vec<f64>) -> Result<Self> {
        WeightVector::new(w)
    }
}

impl From<WeightVector> for Vec<f64> {
    fn from(w: WeightVector) -> Self {
        w.0
    }
}

/// Models of one family with their trust weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSet {
    models: Vec<ModelSpec>,
    weights: WeightVector,
}

impl PriorSet {
    pub fn new(models: Vec<ModelSpec>, weights: WeightVector) -> Result<Self> {
        let first = models
            .first()
            .ok_or_else(|| Error::domain("prior set has no models"))?
            .family();
        if models.len() != weights.len() {
            return Err(Error::domain(format!(
                "{} models but {} weights",
                models.len(),
                weights.len()
            )));
        }
        for m in &models {
            if m.family() != first {
                return Err(Error::domain(format!(
                    "prior set mixes families {first} and {}",
                    m.family()
                )));
            }
            m.validate()?;
        }
        Ok(PriorSet { models, weights })
    }

    pub fn uniform(models: Vec<ModelSpec>) -> Result<Self> {
        let w = WeightVector::uniform(models.len())?;
        Self::new(models, w)
    }

    pub fn models(&self) -> &[ModelSpec] {
        &self.models
    }

    pub fn weights(&self) -> &WeightVector {
        &self.weights
    }

    pub fn family(&self) -> Family {
        self.models[0].family()
    }

    /// Each model's law at `horizon` from a common level `state`.
    pub fn horizon_laws(&self, state: [f64; 2], horizon: f64, form: CrossCovariance) -> Result<Vec<GaussianLaw>> {
        self.models
            .iter()
            .map(|m| conditional_law_with(m, state, horizon, form))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BarycenterOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for BarycenterOptions {
    fn default() -> Self {
        BarycenterOptions {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarycenterResult {
    pub law: GaussianLaw,
    pub iterations: usize,
    /// Frobenius norm of `C − Σ wᵢ (C^{1/2} Cᵢ C^{1/2})^{1/2}` at the returned
    /// `C`; at most `tol · ‖C‖_F`.
    pub residual: f64,
    pub frechet_variance: f64,
}

/// Weighted mean `x₀ + Σ wᵢ (xᵢ − x₀)` over `(item, weight)` pairs.
fn centered_mean<T, I>(mut items: I) -> Option<T>
where
    T: Clone + std::ops::Sub<T, Output = T> + std::ops::Add<T, Output = T> + std::ops::Mul<f64, Output = T>,
    I: Iterator<Item = (T, f64)>,
{
    let (first, w0) = items.next()?;
    let mut acc = (first.clone() - first.clone()) * w0;
    for (x, w) in items {
        acc = acc + (x - first.clone()) * w;
    }
    Some(first + acc)
}

fn check_compatible(p: &GaussianLaw, q: &GaussianLaw) -> Result<()> {
    if p.dim() != q.dim() {
        return Err(Error::domain(format!(
            "laws have dimensions {} and {}",
            p.dim(),
            q.dim()
        )));
    }
    if p.coords() != q.coords() {
        return Err(Error::domain("laws use different coordinate conventions"));
    }
    Ok(())
}

/// `tr((A^{1/2} B A^{1/2})^{1/2})`.
fn fidelity_trace(a: &SpdMatrix, b: &SpdMatrix) -> Result<f64> {
    let ra = spd_sqrt(a)?;
    let inner = SpdMatrix::from_trusted(ra.matrix() * b.matrix() * ra.matrix());
    Ok(spd_sqrt(&inner)?.trace())
}

/// Squared 2-Wasserstein distance between Gaussian laws.
pub fn w2_distance_sq(p: &GaussianLaw, q: &GaussianLaw) -> Result<f64> {
    check_compatible(p, q)?;
    let dm = (p.mean() - q.mean()).norm_squared();
    // equal covariances would otherwise leave roundoff of order eps·tr C
    let bures = if p.cov() == q.cov() {
        0.0
    } else {
        p.cov().trace() + q.cov().trace() - 2.0 * fidelity_trace(p.cov(), q.cov())?
    };
    Ok(dm + bures.max(0.0))
}

/// `Σ wᵢ W₂²(candidate, lawᵢ)`.
pub fn frechet_variance(candidate: &GaussianLaw, laws: &[GaussianLaw], weights: &WeightVector) -> Result<f64> {
    if laws.len() != weights.len() {
        return Err(Error::domain(format!(
            "{} laws but {} weights",
            laws.len(),
            weights.len()
        )));
    }
    let mut total = 0.0;
    for (law, &w) in laws.iter().zip(weights.as_slice()) {
        if w > 0.0 {
            total += w * w2_distance_sq(candidate, law)?;
        }
    }
    Ok(total)
}

/// `Σ wᵢ (R Cᵢ R)^{1/2}` with `R = C^{1/2}`.
fn transported_mean(root: &DMatrix<f64>, covs: &[(&SpdMatrix, f64)]) -> Result<DMatrix<f64>> {
    let terms = covs
        .iter()
        .map(|(c, w)| {
            let inner = SpdMatrix::from_trusted(root * c.matrix() * root);
            Ok((spd_sqrt(&inner)?.into_matrix(), *w))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(centered_mean(terms.into_iter()).expect("nonempty"))
}

/// Defect of the covariance fixed-point equation at `c`.
pub fn covariance_residual(c: &SpdMatrix, covs: &[SpdMatrix], weights: &WeightVector) -> Result<f64> {
    let pairs: Vec<(&SpdMatrix, f64)> = covs
        .iter()
        .zip(weights.as_slice().iter().copied())
        .filter(|(_, w)| *w > 0.0)
        .collect();
    let root = spd_sqrt(c)?;
    Ok((c.matrix() - transported_mean(root.matrix(), &pairs)?).norm())
}

/// Barycenter covariance of `covs` (fixed-point iteration started from the
/// arithmetic mean). Stops once the defect is below `tol` relative to
/// `‖C‖_F`. Returns `(C, iterations, residual)` with the absolute defect.
pub fn barycenter_covariance(
    covs: &[SpdMatrix],
    weights: &WeightVector,
    opts: &BarycenterOptions,
) -> Result<(SpdMatrix, usize, f64)> {
    if covs.len() != weights.len() {
        return Err(Error::domain(format!(
            "{} covariances but {} weights",
            covs.len(),
            weights.len()
        )));
    }
    let pairs: Vec<(&SpdMatrix, f64)> = covs
        .iter()
        .zip(weights.as_slice().iter().copied())
        .filter(|(_, w)| *w > 0.0)
        .collect();
    let dim = pairs[0].0.dim();
    if pairs.iter().any(|(c, _)| c.dim() != dim) {
        return Err(Error::domain("covariances have different dimensions"));
    }
    let mut any_definite = false;
    for (c, _) in &pairs {
        any_definite |= c.eigen()?.0.min() > 0.0;
    }
    if !any_definite {
        return Err(Error::domain(
            "every weighted covariance is singular; barycenter is not well posed",
        ));
    }

    // identical inputs (a single model included) are their own barycenter;
    // checking the fixed point would cost accuracy for near-singular inputs
    if pairs.iter().all(|(c, _)| c.matrix() == pairs[0].0.matrix()) {
        return Ok((pairs[0].0.clone(), 0, 0.0));
    }

    let start = centered_mean(pairs.iter().map(|(c, w)| (c.matrix().clone(), *w))).expect("nonempty");
    let mut c = SpdMatrix::from_trusted(start);
    let mut iterations = 0;
    // (iterate, iteration, residual) of the best point once the stop rule holds
    let mut best: Option<(SpdMatrix, usize, f64)> = None;
    let mut met_at = 0;
    loop {
        let root = spd_sqrt(&c)?;
        let t = transported_mean(root.matrix(), &pairs)?;
        let residual = (c.matrix() - &t).norm();
        match &best {
            // polish past the stop rule while the defect still falls
            Some((_, _, prev)) if residual >= *prev || iterations - met_at > POLISH_STEPS => {
                return Ok(best.expect("set"));
            }
            Some(_) => best = Some((c.clone(), iterations, residual)),
            // a start that already passes is exact up to roundoff (equal inputs)
            None if residual <= opts.tol * c.matrix().norm() && iterations == 0 => {
                return Ok((c, 0, residual));
            }
            None if residual <= opts.tol * c.matrix().norm() => {
                met_at = iterations;
                best = Some((c.clone(), iterations, residual));
            }
            None if iterations >= opts.max_iter || !residual.is_finite() => {
                return Err(Error::NonConvergence { iterations, residual });
            }
            None => {}
        }
        let inv_root = c.inv_sqrt()?;
        let next = inv_root.matrix() * &t * &t * inv_root.matrix();
        c = SpdMatrix::from_trusted(next);
        iterations += 1;
    }
}

/// Wasserstein barycenter of Gaussian laws sharing a coordinate convention.
pub fn gaussian_barycenter(
    laws: &[GaussianLaw],
    weights: &WeightVector,
    opts: &BarycenterOptions,
) -> Result<BarycenterResult> {
    let first = laws.first().ok_or_else(|| Error::domain("no laws to aggregate"))?;
    if laws.len() != weights.len() {
        return Err(Error::domain(format!(
            "{} laws but {} weights",
            laws.len(),
            weights.len()
        )));
    }
    for law in laws {
        check_compatible(first, law)?;
    }
    let mean = centered_mean(
        laws.iter()
            .zip(weights.as_slice().iter().copied())
            .filter(|(_, w)| *w > 0.0)
            .map(|(l, w)| (l.mean().clone(), w)),
    )
    .expect("weights sum to one");
    let covs: Vec<SpdMatrix> = laws.iter().map(|l| l.cov().clone()).collect();
    let (cov, iterations, residual) = barycenter_covariance(&covs, weights, opts)?;
    let law = GaussianLaw::new(mean, cov, first.coords().to_vec())?;
    let frechet_variance = frechet_variance(&law, laws, weights)?;
    Ok(BarycenterResult {
        law,
        iterations,
        residual,
        frechet_variance,
    })
}

/// Barycenter of the prior models' laws at `horizon` from `state`.
pub fn marginal_barycenter(
    prior: &PriorSet,
    state: [f64; 2],
    horizon: f64,
    form: CrossCovariance,
    opts: &BarycenterOptions,
) -> Result<BarycenterResult> {
    let laws = prior.horizon_laws(state, horizon, form)?;
    gaussian_barycenter(&laws, prior.weights(), opts)
}

/// Aggregate one-step model: barycentric affine mean map plus barycentric
/// step covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateKernel {
    pub kernel: AffineGaussianKernel,
    pub noise_iterations: usize,
    pub noise_residual: f64,
}

pub fn aggregate_kernel(
    prior: &PriorSet,
    dt: f64,
    form: CrossCovariance,
    opts: &BarycenterOptions,
) -> Result<AggregateKernel> {
    let kernels = prior
        .models()
        .iter()
        .map(|m| transition_kernel_with(m, dt, form))
        .collect::<Result<Vec<_>>>()?;
    let weighted = || {
        kernels
            .iter()
            .zip(prior.weights().as_slice().iter().copied())
            .filter(|(_, w)| *w > 0.0)
    };
    let a: Matrix2<f64> = centered_mean(weighted().map(|(k, w)| (*k.a(), w))).expect("nonempty");
    let b: Vector2<f64> = centered_mean(weighted().map(|(k, w)| (*k.b(), w))).expect("nonempty");
    let noise: Vec<SpdMatrix> = kernels.iter().map(|k| k.noise_cov()).collect();
    let (q, noise_iterations, noise_residual) = barycenter_covariance(&noise, prior.weights(), opts)?;
    let kernel = AffineGaussianKernel::new(a, b, &q, prior.family().coords(), dt)?;
    Ok(AggregateKernel {
        kernel,
        noise_iterations,
        noise_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauss::Coord;
    use crate::models::{transition_kernel, GbmParams, OuParams};
    use crate::rng;
    use approx::assert_relative_eq;
    use nalgebra::DVector;
    use rand::Rng;

    fn law1(m: f64, v: f64) -> GaussianLaw {
        GaussianLaw::level(&[m], SpdMatrix::from_row_slice(1, &[v]).unwrap()).unwrap()
    }

    fn law2(mean: [f64; 2], cov: [f64; 4]) -> GaussianLaw {
        GaussianLaw::level(&mean, SpdMatrix::from_row_slice(2, &cov).unwrap()).unwrap()
    }

    fn gbm(mu: f64) -> ModelSpec {
        ModelSpec::Gbm(GbmParams {
            mu,
            mu_tilde: 0.01,
            sigma: 0.55,
            sigma_tilde: 0.40,
            rho: 0.75,
        })
    }

    #[test]
    fn distance_examples() {
        let p = law2([1.0, 2.0], [2.0, 0.3, 0.3, 1.0]);
        assert!(w2_distance_sq(&p, &p).unwrap().abs() < 1e-14);
        assert_relative_eq!(
            w2_distance_sq(&law1(0.0, 1.0), &law1(2.0, 9.0)).unwrap(),
            8.0,
            epsilon = 1e-13
        );
        let a = law2([0.0, 0.0], [1.0, 0.0, 0.0, 4.0]);
        let b = law2([0.0, 0.0], [4.0, 0.0, 0.0, 1.0]);
        assert_relative_eq!(w2_distance_sq(&a, &b).unwrap(), 2.0, epsilon = 1e-13);
    }

    #[test]
    fn distance_rejects_mismatched_conventions() {
        let p = law2([0.0, 0.0], [1.0, 0.0, 0.0, 1.0]);
        let q = GaussianLaw::new(
            DVector::from_row_slice(&[0.0, 0.0]),
            SpdMatrix::identity(2),
            vec![Coord::Log, Coord::Level],
        )
        .unwrap();
        assert!(matches!(w2_distance_sq(&p, &q), Err(Error::Domain(_))));
        assert!(w2_distance_sq(&p, &law1(0.0, 1.0)).is_err());
    }

    #[test]
    fn frechet_variance_examples() {
        let p = law1(0.0, 1.0);
        let w1 = WeightVector::uniform(1).unwrap();
        assert_eq!(frechet_variance(&p, std::slice::from_ref(&p), &w1).unwrap(), 0.0);
        let w = WeightVector::uniform(2).unwrap();
        assert!(frechet_variance(&p, &[p.clone(), p.clone()], &w).unwrap().abs() < 1e-15);
        let v = frechet_variance(&law1(1.0, 4.0), &[law1(0.0, 1.0), law1(2.0, 9.0)], &w).unwrap();
        assert_relative_eq!(v, 2.0, epsilon = 1e-13);
    }

    #[test]
    fn identical_laws_are_their_own_barycenter() {
        let p = law2([1.0, -2.0], [2.0, 0.4, 0.4, 0.7]);
        let laws = vec![p.clone(); 4];
        let w = WeightVector::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let res = gaussian_barycenter(&laws, &w, &BarycenterOptions::default()).unwrap();
        assert_eq!(res.law, p);
        assert!(res.iterations <= 1);
        assert!(res.residual < 1e-14);
    }

    #[test]
    fn one_dimensional_closed_form() {
        let w = WeightVector::uniform(2).unwrap();
        let res = gaussian_barycenter(&[law1(0.0, 1.0), law1(2.0, 9.0)], &w, &BarycenterOptions::default()).unwrap();
        assert_relative_eq!(res.law.mean()[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(res.law.cov().get(0, 0), 4.0, epsilon = 1e-12);
        assert_relative_eq!(res.frechet_variance, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn commuting_closed_form() {
        let w = WeightVector::uniform(2).unwrap();
        let laws = [
            law2([0.0, 0.0], [1.0, 0.0, 0.0, 4.0]),
            law2([0.0, 0.0], [9.0, 0.0, 0.0, 16.0]),
        ];
        let res = gaussian_barycenter(&laws, &w, &BarycenterOptions::default()).unwrap();
        let c = res.law.cov();
        assert_relative_eq!(c.get(0, 0), 4.0, epsilon = 1e-12);
        assert_relative_eq!(c.get(1, 1), 9.0, epsilon = 1e-12);
        assert!(c.get(0, 1).abs() < 1e-12);
    }

    #[test]
    fn zero_weight_models_are_ignored() {
        let laws = [law1(0.0, 1.0), law1(5.0, 0.0)];
        let w = WeightVector::unit(2, 0).unwrap();
        let res = gaussian_barycenter(&laws, &w, &BarycenterOptions::default()).unwrap();
        assert_eq!(res.law, laws[0]);
    }

    #[test]
    fn degenerate_inputs_rejected() {
        let laws = [law1(0.0, 0.0), law1(1.0, 0.0)];
        let w = WeightVector::uniform(2).unwrap();
        assert!(matches!(
            gaussian_barycenter(&laws, &w, &BarycenterOptions::default()),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn iteration_cap_reports_residual() {
        let laws = [
            law2([0.0, 0.0], [1.0, 0.9, 0.9, 1.0]),
            law2([0.0, 0.0], [3.0, -1.0, -1.0, 0.5]),
        ];
        let w = WeightVector::uniform(2).unwrap();
        let opts = BarycenterOptions {
            tol: 1e-12,
            max_iter: 0,
        };
        match gaussian_barycenter(&laws, &w, &opts) {
            Err(Error::NonConvergence { iterations, residual }) => {
                assert_eq!(iterations, 0);
                assert!(residual > 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn weight_vector_validation() {
        assert!(WeightVector::new(vec![0.5, 0.6]).is_err());
        assert!(WeightVector::new(vec![-0.1, 1.1]).is_err());
        assert!(WeightVector::new(vec![]).is_err());
        assert!(WeightVector::uniform(10).is_ok());
        let parsed: std::result::Result<WeightVector, _> = serde_json::from_str("[0.3, 0.3]");
        assert!(parsed.is_err());
    }

    #[test]
    fn prior_set_must_be_homogeneous() {
        let ou = ModelSpec::Ou(OuParams {
            mu: 60.0,
            mu_tilde: 60.0,
            alpha: 0.25,
            alpha_tilde: 0.4,
            sigma: 15.0,
            sigma_tilde: 10.0,
            rho: 0.75,
        });
        assert!(PriorSet::uniform(vec![gbm(0.03), ou]).is_err());
        assert!(PriorSet::uniform(vec![]).is_err());
    }

    #[test]
    fn aggregate_of_copies_is_the_model_kernel() {
        let dt = 1.0 / 252.0;
        let prior = PriorSet::uniform(vec![gbm(0.03); 10]).unwrap();
        let agg = aggregate_kernel(&prior, dt, CrossCovariance::Exact, &BarycenterOptions::default()).unwrap();
        assert_eq!(agg.kernel, transition_kernel(&gbm(0.03), dt).unwrap());
    }

    #[test]
    fn unit_weight_selects_one_model() {
        let dt = 1.0 / 252.0;
        let models = vec![gbm(0.01), gbm(0.05), gbm(0.09)];
        let prior = PriorSet::new(models.clone(), WeightVector::unit(3, 1).unwrap()).unwrap();
        let agg = aggregate_kernel(&prior, dt, CrossCovariance::Exact, &BarycenterOptions::default()).unwrap();
        assert_eq!(agg.kernel, transition_kernel(&models[1], dt).unwrap());
    }

    #[test]
    fn drift_only_perturbation_averages_drift() {
        let dt = 1.0 / 252.0;
        let prior = PriorSet::uniform(vec![gbm(0.02), gbm(0.04)]).unwrap();
        let agg = aggregate_kernel(&prior, dt, CrossCovariance::Exact, &BarycenterOptions::default()).unwrap();
        let reference = transition_kernel(&gbm(0.03), dt).unwrap();
        assert_relative_eq!(agg.kernel.b()[0], reference.b()[0], epsilon = 1e-18);
        assert_eq!(agg.kernel.b()[1], reference.b()[1]);
        let gap = (agg.kernel.noise_cov().matrix() - reference.noise_cov().matrix()).amax();
        assert!(gap < 1e-18);
    }

    #[test]
    fn gbm_aggregate_composes_to_marginal_barycenter() {
        let dt = 1.0 / 252.0;
        let mut r = rng::stream(3);
        let models: Vec<ModelSpec> = (0..6)
            .map(|_| {
                ModelSpec::Gbm(GbmParams {
                    mu: r.gen_range(0.0..0.06),
                    mu_tilde: r.gen_range(-0.02..0.04),
                    sigma: r.gen_range(0.3..0.8),
                    sigma_tilde: r.gen_range(0.2..0.6),
                    rho: r.gen_range(0.3..0.95),
                })
            })
            .collect();
        let prior = PriorSet::uniform(models).unwrap();
        let opts = BarycenterOptions::default();
        let agg = aggregate_kernel(&prior, dt, CrossCovariance::Exact, &opts).unwrap();
        for k in [1usize, 21, 63, 252] {
            let composed = agg.kernel.law_after([50.0, 45.0], k).unwrap();
            let marginal =
                marginal_barycenter(&prior, [50.0, 45.0], k as f64 * dt, CrossCovariance::Exact, &opts).unwrap();
            assert!((composed.mean() - marginal.law.mean()).amax() < 1e-10);
            let rel =
                (composed.cov().matrix() - marginal.law.cov().matrix()).norm() / marginal.law.cov().matrix().norm();
            assert!(rel < 1e-10, "k={k}: {rel:.3e}");
        }
    }
}

//! Bivariate freight-rate models (spot `S`, index `S̃`), their conditional
//! Gaussian laws, exact one-step transition kernels and path simulation.
//!
//! Each family is expressed in the coordinates that make its fixed-time law
//! Gaussian: log-price for GBM components, price level for OU components.
//! A component is described by its mean-reversion rate `kappa` (zero for a
//! GBM component), which lets the three families share one set of formulas.

use std::io::Write;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::{Coord, GaussianLaw, SpdMatrix};
use crate::rng;

/// Trading days per year.
pub const TRADING_DAYS: u32 = 252;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GbmParams {
    pub mu: f64,
    pub mu_tilde: f64,
    pub sigma: f64,
    pub sigma_tilde: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OuParams {
    pub mu: f64,
    pub mu_tilde: f64,
    pub alpha: f64,
    pub alpha_tilde: f64,
    pub sigma: f64,
    pub sigma_tilde: f64,
    pub rho: f64,
}

/// GBM spot with OU index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixedParams {
    pub mu: f64,
    pub sigma: f64,
    pub mu_tilde: f64,
    pub alpha_tilde: f64,
    pub sigma_tilde: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gbm,
    Ou,
    Mixed,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Gbm, Family::Ou, Family::Mixed];

    pub fn name(self) -> &'static str {
        match self {
            Family::Gbm => "gbm",
            Family::Ou => "ou",
            Family::Mixed => "mixed",
        }
    }

    pub fn coords(self) -> [Coord; 2] {
        match self {
            Family::Gbm => [Coord::Log, Coord::Log],
            Family::Ou => [Coord::Level, Coord::Level],
            Family::Mixed => [Coord::Log, Coord::Level],
        }
    }

    pub fn index(self) -> u64 {
        match self {
            Family::Gbm => 0,
            Family::Ou => 1,
            Family::Mixed => 2,
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gbm" => Ok(Family::Gbm),
            "ou" => Ok(Family::Ou),
            "mixed" | "gbm-ou" => Ok(Family::Mixed),
            other => Err(Error::domain(format!("unknown model family `{other}`"))),
        }
    }
}

/// How the cross-covariance of the two coordinates is formed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossCovariance {
    /// `ρσσ̃ ∫₀^τ e^{-(κ+κ̃)u} du`, the covariance of the solved SDE pair.
    /// Composes exactly across steps.
    #[default]
    Exact,
    /// `ρ √(v ṽ)`: correlation `ρ` imposed on the marginal variances.
    /// Agrees with `Exact` when both mean-reversion rates coincide (or both
    /// components are GBM), and does not compose across steps otherwise.
    GeometricMean,
}

/// One coordinate of a model in its Gaussian convention.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Component {
    /// Mean-reversion rate; zero for a GBM (log-price) component.
    kappa: f64,
    /// GBM drift `μ` or OU long-term level `μ`.
    mu: f64,
    sigma: f64,
}

impl Component {
    fn gbm(mu: f64, sigma: f64) -> Self {
        Component { kappa: 0.0, mu, sigma }
    }

    fn ou(mu: f64, alpha: f64, sigma: f64) -> Self {
        Component {
            kappa: alpha,
            mu,
            sigma,
        }
    }

    fn decay(&self, tau: f64) -> f64 {
        (-self.kappa * tau).exp()
    }

    fn offset(&self, tau: f64) -> f64 {
        if self.kappa == 0.0 {
            (self.mu - 0.5 * self.sigma * self.sigma) * tau
        } else {
            -self.mu * (-self.kappa * tau).exp_m1()
        }
    }

    fn variance(&self, tau: f64) -> f64 {
        self.sigma * self.sigma * integrated_decay(2.0 * self.kappa, tau)
    }
}

/// `∫₀^τ e^{-k u} du`.
fn integrated_decay(k: f64, tau: f64) -> f64 {
    if k == 0.0 {
        tau
    } else {
        -(-k * tau).exp_m1() / k
    }
}

/// A model of one of the three families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum ModelSpec {
    Gbm(GbmParams),
    Ou(OuParams),
    Mixed(MixedParams),
}

impl ModelSpec {
    pub fn family(&self) -> Family {
        match self {
            ModelSpec::Gbm(_) => Family::Gbm,
            ModelSpec::Ou(_) => Family::Ou,
            ModelSpec::Mixed(_) => Family::Mixed,
        }
    }

    pub fn coords(&self) -> [Coord; 2] {
        self.family().coords()
    }

    pub fn rho(&self) -> f64 {
        match self {
            ModelSpec::Gbm(p) => p.rho,
            ModelSpec::Ou(p) => p.rho,
            ModelSpec::Mixed(p) => p.rho,
        }
    }

    fn components(&self) -> [Component; 2] {
        match *self {
            ModelSpec::Gbm(p) => [Component::gbm(p.mu, p.sigma), Component::gbm(p.mu_tilde, p.sigma_tilde)],
            ModelSpec::Ou(p) => [
                Component::ou(p.mu, p.alpha, p.sigma),
                Component::ou(p.mu_tilde, p.alpha_tilde, p.sigma_tilde),
            ],
            ModelSpec::Mixed(p) => [
                Component::gbm(p.mu, p.sigma),
                Component::ou(p.mu_tilde, p.alpha_tilde, p.sigma_tilde),
            ],
        }
    }

    /// Checks the family's parameter invariants.
    pub fn validate(&self) -> Result<()> {
        let mut checks: Vec<(&str, f64)> = Vec::new();
        match *self {
            ModelSpec::Gbm(p) => {
                checks.extend([("sigma", p.sigma), ("sigma_tilde", p.sigma_tilde)]);
            }
            ModelSpec::Ou(p) => checks.extend([
                ("alpha", p.alpha),
                ("alpha_tilde", p.alpha_tilde),
                ("sigma", p.sigma),
                ("sigma_tilde", p.sigma_tilde),
            ]),
            ModelSpec::Mixed(p) => checks.extend([
                ("sigma", p.sigma),
                ("alpha_tilde", p.alpha_tilde),
                ("sigma_tilde", p.sigma_tilde),
            ]),
        }
        for (name, v) in checks {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::domain(format!(
                    "{} model: {name} must be positive, got {v}",
                    self.family()
                )));
            }
        }
        let rho = self.rho();
        if !(rho.abs() < 1.0) {
            return Err(Error::domain(format!("correlation must lie in (-1, 1), got {rho}")));
        }
        let finite = self.scale_params().iter().all(|(_, v)| v.is_finite());
        if !finite {
            return Err(Error::domain("model parameters must be finite"));
        }
        Ok(())
    }

    /// Non-correlation parameters as `(name, value)` in a fixed order.
    pub fn scale_params(&self) -> Vec<(&'static str, f64)> {
        match *self {
            ModelSpec::Gbm(p) => vec![
                ("mu", p.mu),
                ("mu_tilde", p.mu_tilde),
                ("sigma", p.sigma),
                ("sigma_tilde", p.sigma_tilde),
            ],
            ModelSpec::Ou(p) => vec![
                ("mu", p.mu),
                ("mu_tilde", p.mu_tilde),
                ("alpha", p.alpha),
                ("alpha_tilde", p.alpha_tilde),
                ("sigma", p.sigma),
                ("sigma_tilde", p.sigma_tilde),
            ],
            ModelSpec::Mixed(p) => vec![
                ("mu", p.mu),
                ("mu_tilde", p.mu_tilde),
                ("alpha_tilde", p.alpha_tilde),
                ("sigma", p.sigma),
                ("sigma_tilde", p.sigma_tilde),
            ],
        }
    }

    /// Rebuilds the model from values in `scale_params` order plus `rho`.
    pub fn with_params(&self, values: &[f64], rho: f64) -> Result<ModelSpec> {
        let expected = self.scale_params().len();
        if values.len() != expected {
            return Err(Error::domain(format!(
                "{} model takes {expected} parameters, got {}",
                self.family(),
                values.len()
            )));
        }
        let v = values;
        Ok(match self {
            ModelSpec::Gbm(_) => ModelSpec::Gbm(GbmParams {
                mu: v[0],
                mu_tilde: v[1],
                sigma: v[2],
                sigma_tilde: v[3],
                rho,
            }),
            ModelSpec::Ou(_) => ModelSpec::Ou(OuParams {
                mu: v[0],
                mu_tilde: v[1],
                alpha: v[2],
                alpha_tilde: v[3],
                sigma: v[4],
                sigma_tilde: v[5],
                rho,
            }),
            ModelSpec::Mixed(_) => ModelSpec::Mixed(MixedParams {
                mu: v[0],
                mu_tilde: v[1],
                alpha_tilde: v[2],
                sigma: v[3],
                sigma_tilde: v[4],
                rho,
            }),
        })
    }

    /// Maps a state in price levels to the family's coordinates.
    pub fn to_coords(&self, state: [f64; 2]) -> Result<Vector2<f64>> {
        let [c0, c1] = self.coords();
        Ok(Vector2::new(c0.from_level(state[0])?, c1.from_level(state[1])?))
    }

    fn affine_parts(&self, tau: f64, form: CrossCovariance) -> (Matrix2<f64>, Vector2<f64>, Matrix2<f64>) {
        let [c0, c1] = self.components();
        let a = Matrix2::new(c0.decay(tau), 0.0, 0.0, c1.decay(tau));
        let b = Vector2::new(c0.offset(tau), c1.offset(tau));
        let (v0, v1) = (c0.variance(tau), c1.variance(tau));
        let rho = self.rho();
        let cross = match form {
            CrossCovariance::Exact => rho * c0.sigma * c1.sigma * integrated_decay(c0.kappa + c1.kappa, tau),
            CrossCovariance::GeometricMean => rho * (v0 * v1).sqrt(),
        };
        (a, b, Matrix2::new(v0, cross, cross, v1))
    }
}

/// Law of the state at `s + horizon` given the state (in price levels) at `s`.
pub fn conditional_law(model: &ModelSpec, state: [f64; 2], horizon: f64) -> Result<GaussianLaw> {
    conditional_law_with(model, state, horizon, CrossCovariance::Exact)
}

pub fn conditional_law_with(
    model: &ModelSpec,
    state: [f64; 2],
    horizon: f64,
    form: CrossCovariance,
) -> Result<GaussianLaw> {
    model.validate()?;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::domain(format!("horizon must be positive, got {horizon}")));
    }
    let x = model.to_coords(state)?;
    let (a, b, cov) = model.affine_parts(horizon, form);
    let mean = a * x + b;
    GaussianLaw::new(
        DVector::from_column_slice(mean.as_slice()),
        SpdMatrix::new(DMatrix::from_column_slice(2, 2, cov.as_slice()))?,
        model.coords().to_vec(),
    )
}

/// `x' = A x + b + ε`, `ε ~ N(0, noise_cov)`, in the family's coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineGaussianKernel {
    a: Matrix2<f64>,
    b: Vector2<f64>,
    noise_cov: Matrix2<f64>,
    noise_factor: Matrix2<f64>,
    coords: [Coord; 2],
    dt: f64,
}

impl AffineGaussianKernel {
    pub fn new(a: Matrix2<f64>, b: Vector2<f64>, noise_cov: &SpdMatrix, coords: [Coord; 2], dt: f64) -> Result<Self> {
        if noise_cov.dim() != 2 {
            return Err(Error::domain("kernel noise covariance must be 2x2"));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::domain("kernel coefficients must be finite"));
        }
        let f = noise_cov.factor()?;
        let m = noise_cov.matrix();
        Ok(AffineGaussianKernel {
            a,
            b,
            noise_cov: Matrix2::new(m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]),
            noise_factor: Matrix2::new(f[(0, 0)], f[(0, 1)], f[(1, 0)], f[(1, 1)]),
            coords,
            dt,
        })
    }

    /// Step length in years.
    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn a(&self) -> &Matrix2<f64> {
        &self.a
    }

    pub fn b(&self) -> &Vector2<f64> {
        &self.b
    }

    pub fn noise_cov(&self) -> SpdMatrix {
        SpdMatrix::from_trusted(DMatrix::from_column_slice(2, 2, self.noise_cov.as_slice()))
    }

    pub fn coords(&self) -> [Coord; 2] {
        self.coords
    }

    /// Maps a state in price levels to kernel coordinates.
    pub fn to_coords(&self, state: [f64; 2]) -> Result<Vector2<f64>> {
        Ok(Vector2::new(
            self.coords[0].from_level(state[0])?,
            self.coords[1].from_level(state[1])?,
        ))
    }

    #[inline]
    pub fn step(&self, x: &Vector2<f64>, z: &Vector2<f64>) -> Vector2<f64> {
        self.a * x + self.b + self.noise_factor * z
    }

    /// Kernel of `k` consecutive steps.
    pub fn compose(&self, k: usize) -> Result<AffineGaussianKernel> {
        let mut a = Matrix2::identity();
        let mut b = Vector2::zeros();
        let mut q = Matrix2::zeros();
        for _ in 0..k {
            a = self.a * a;
            b = self.a * b + self.b;
            q = self.a * q * self.a.transpose() + self.noise_cov;
        }
        let q = SpdMatrix::new(DMatrix::from_column_slice(2, 2, q.as_slice()))?;
        AffineGaussianKernel::new(a, b, &q, self.coords, self.dt * k as f64)
    }

    /// Law of the state after `k` steps from a point state given in levels.
    pub fn law_after(&self, state: [f64; 2], k: usize) -> Result<GaussianLaw> {
        let x = self.to_coords(state)?;
        let composed = self.compose(k)?;
        let mean = composed.a * x + composed.b;
        GaussianLaw::new(
            DVector::from_column_slice(mean.as_slice()),
            composed.noise_cov(),
            self.coords.to_vec(),
        )
    }
}

/// Exact one-step kernel of `model` over `dt` years.
pub fn transition_kernel(model: &ModelSpec, dt: f64) -> Result<AffineGaussianKernel> {
    transition_kernel_with(model, dt, CrossCovariance::Exact)
}

pub fn transition_kernel_with(model: &ModelSpec, dt: f64, form: CrossCovariance) -> Result<AffineGaussianKernel> {
    model.validate()?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::domain(format!("time step must be positive, got {dt}")));
    }
    let (a, b, q) = model.affine_parts(dt, form);
    let q = SpdMatrix::new(DMatrix::from_column_slice(2, 2, q.as_slice()))?;
    AffineGaussianKernel::new(a, b, &q, model.coords(), dt)
}

/// One simulated path in price levels, `(S, S̃)` per step.
#[derive(Debug, Clone, Copy)]
pub struct PathView<'a> {
    values: &'a [f64],
}

impl<'a> PathView<'a> {
    pub fn from_slice(values: &'a [f64]) -> Self {
        debug_assert!(values.len().is_multiple_of(2));
        PathView { values }
    }

    /// Number of recorded points (`n_steps + 1`).
    pub fn len(&self) -> usize {
        self.values.len() / 2
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn spot(&self, step: usize) -> f64 {
        self.values[2 * step]
    }

    #[inline]
    pub fn index(&self, step: usize) -> f64 {
        self.values[2 * step + 1]
    }
}

/// Simulated paths stored as `n_paths × (n_steps + 1) × 2` level values.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    pub n_paths: usize,
    pub n_steps: usize,
    pub dt: f64,
    pub seed: u64,
    values: Vec<f64>,
}

impl PathSet {
    pub fn path(&self, i: usize) -> PathView<'_> {
        let width = 2 * (self.n_steps + 1);
        PathView::from_slice(&self.values[i * width..(i + 1) * width])
    }

    pub fn paths(&self) -> impl Iterator<Item = PathView<'_>> {
        self.values
            .chunks_exact(2 * (self.n_steps + 1))
            .map(PathView::from_slice)
    }

    /// Long-format CSV: `path_id,step,S,S_tilde`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "path_id,step,S,S_tilde")?;
        for (i, p) in self.paths().enumerate() {
            for step in 0..p.len() {
                writeln!(out, "{i},{step},{},{}", p.spot(step), p.index(step))?;
            }
        }
        Ok(())
    }
}

fn check_sim_args(n_paths: usize, n_steps: usize) -> Result<()> {
    if n_paths == 0 || n_steps == 0 {
        return Err(Error::domain(format!(
            "need at least one path and one step, got {n_paths} paths and {n_steps} steps"
        )));
    }
    Ok(())
}

fn fill_path(
    kernel: &AffineGaussianKernel,
    init: [f64; 2],
    x0: Vector2<f64>,
    seed: u64,
    path_id: usize,
    buf: &mut [f64],
) {
    let mut rng = rng::substream(seed, path_id as u64);
    let [c0, c1] = kernel.coords;
    buf[0] = init[0];
    buf[1] = init[1];
    let mut x = x0;
    for cell in buf[2..].chunks_exact_mut(2) {
        let z = Vector2::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
        x = kernel.step(&x, &z);
        cell[0] = c0.to_level(x[0]);
        cell[1] = c1.to_level(x[1]);
    }
}

/// Simulates every path and keeps it.
pub fn simulate_paths(
    kernel: &AffineGaussianKernel,
    init: [f64; 2],
    n_paths: usize,
    n_steps: usize,
    seed: u64,
) -> Result<PathSet> {
    check_sim_args(n_paths, n_steps)?;
    let x0 = kernel.to_coords(init)?;
    let width = 2 * (n_steps + 1);
    let mut values = vec![0.0; n_paths * width];
    values
        .par_chunks_mut(width)
        .enumerate()
        .for_each(|(i, buf)| fill_path(kernel, init, x0, seed, i, buf));
    Ok(PathSet {
        n_paths,
        n_steps,
        dt: kernel.dt,
        seed,
        values,
    })
}

/// Simulates paths one at a time and keeps only `f(path)`. Results are in
/// path order; path `i` always draws from substream `(seed, i)`.
pub fn simulate_map<T, F>(
    kernel: &AffineGaussianKernel,
    init: [f64; 2],
    n_paths: usize,
    n_steps: usize,
    seed: u64,
    f: F,
) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(PathView<'_>) -> T + Sync,
{
    check_sim_args(n_paths, n_steps)?;
    let x0 = kernel.to_coords(init)?;
    let width = 2 * (n_steps + 1);
    Ok((0..n_paths)
        .into_par_iter()
        .map_init(
            || vec![0.0; width],
            |buf, i| {
                fill_path(kernel, init, x0, seed, i, buf);
                f(PathView::from_slice(buf))
            },
        )
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    pub(crate) fn gbm_true() -> ModelSpec {
        ModelSpec::Gbm(GbmParams {
            mu: 0.03,
            mu_tilde: 0.01,
            sigma: 0.55,
            sigma_tilde: 0.40,
            rho: 0.75,
        })
    }

    fn ou_true() -> ModelSpec {
        ModelSpec::Ou(OuParams {
            mu: 60.0,
            mu_tilde: 60.0,
            alpha: 0.25,
            alpha_tilde: 0.40,
            sigma: 15.0,
            sigma_tilde: 10.0,
            rho: 0.75,
        })
    }

    fn mixed_true() -> ModelSpec {
        ModelSpec::Mixed(MixedParams {
            mu: 0.03,
            sigma: 0.55,
            mu_tilde: 60.0,
            alpha_tilde: 0.60,
            sigma_tilde: 8.0,
            rho: 0.75,
        })
    }

    #[test]
    fn gbm_quarter_year_law() {
        let law = conditional_law(&gbm_true(), [50.0, 45.0], 0.25).unwrap();
        // ln 50 + (0.03 - 0.55²/2)·0.25
        assert_relative_eq!(law.mean()[0], 3.881_711_0, epsilon = 5e-7);
        assert_relative_eq!(law.mean()[1], 45f64.ln() + (0.01 - 0.08) * 0.25, epsilon = 1e-14);
        assert_relative_eq!(law.cov().get(0, 0), 0.075625, epsilon = 1e-15);
        assert_relative_eq!(law.cov().get(0, 1), 0.04125, epsilon = 1e-15);
        assert_relative_eq!(law.cov().get(1, 1), 0.04, epsilon = 1e-15);
        assert_eq!(law.coords(), &[Coord::Log, Coord::Log]);
    }

    #[test]
    fn ou_quarter_year_law() {
        let law = conditional_law(&ou_true(), [50.0, 45.0], 0.25).unwrap();
        // e^{-0.0625}·50 + 60·(1 - e^{-0.0625}) = 60 - 10·e^{-0.0625}
        assert_relative_eq!(law.mean()[0], 50.605_869_4, epsilon = 5e-8);
        assert_relative_eq!(law.cov().get(0, 0), 52.876_393_8, epsilon = 5e-8);
        assert_eq!(law.coords(), &[Coord::Level, Coord::Level]);
    }

    #[test]
    fn geometric_cross_covariance_form() {
        // ρσσ̃/2 · sqrt((1-e^{-2ατ})(1-e^{-2α̃τ})/(αα̃)) at τ = 1
        let law = conditional_law_with(&ou_true(), [50.0, 45.0], 1.0, CrossCovariance::GeometricMean).unwrap();
        let expected = 0.75 * 150.0 / 2.0 * ((1.0 - (-0.5f64).exp()) * (1.0 - (-0.8f64).exp()) / 0.1).sqrt();
        assert_relative_eq!(law.cov().get(0, 1), expected, epsilon = 1e-12);
        let exact = conditional_law(&ou_true(), [50.0, 45.0], 1.0).unwrap();
        let expected_exact = 0.75 * 150.0 * (1.0 - (-0.65f64).exp()) / 0.65;
        assert_relative_eq!(exact.cov().get(0, 1), expected_exact, epsilon = 1e-12);

        // Mixed: ρσσ̃ sqrt(τ (1-e^{-2α̃τ})/(2α̃))
        let mixed = conditional_law_with(&mixed_true(), [50.0, 45.0], 0.5, CrossCovariance::GeometricMean).unwrap();
        let expected = 0.75 * 0.55 * 8.0 * (0.5 * (1.0 - (-0.6f64).exp()) / 1.2).sqrt();
        assert_relative_eq!(mixed.cov().get(0, 1), expected, epsilon = 1e-13);
    }

    #[test]
    fn zero_horizon_limit() {
        for model in [gbm_true(), ou_true(), mixed_true()] {
            let law = conditional_law(&model, [50.0, 45.0], 1e-12).unwrap();
            let x = model.to_coords([50.0, 45.0]).unwrap();
            assert!((law.mean()[0] - x[0]).abs() < 1e-9);
            assert!((law.mean()[1] - x[1]).abs() < 1e-9);
            assert!(law.cov().matrix().amax() < 1e-9);
        }
        assert!(conditional_law(&gbm_true(), [50.0, 45.0], 0.0).is_err());
    }

    #[test]
    fn log_coordinate_rejects_nonpositive_state() {
        assert!(matches!(
            conditional_law(&gbm_true(), [-1.0, 45.0], 0.25),
            Err(Error::Domain(_))
        ));
        assert!(conditional_law(&ou_true(), [-1.0, 45.0], 0.25).is_ok());
        assert!(conditional_law(&mixed_true(), [50.0, -3.0], 0.25).is_ok());
    }

    #[test]
    fn kernel_coefficients() {
        let dt = 1.0 / 252.0;
        let k = transition_kernel(&gbm_true(), dt).unwrap();
        assert_eq!(*k.a(), Matrix2::identity());
        assert_relative_eq!(k.b()[0], -4.811_5e-4, epsilon = 5e-9);
        let k = transition_kernel(&ou_true(), dt).unwrap();
        assert_relative_eq!(k.a()[(0, 0)], 0.999_008_4, epsilon = 5e-8);
    }

    #[test]
    fn invalid_params_rejected() {
        let mut bad = gbm_true();
        if let ModelSpec::Gbm(p) = &mut bad {
            p.rho = 1.0;
        }
        assert!(bad.validate().is_err());
        let bad = ModelSpec::Ou(OuParams {
            alpha: 0.0,
            ..match ou_true() {
                ModelSpec::Ou(p) => p,
                _ => unreachable!(),
            }
        });
        assert!(transition_kernel(&bad, 0.1).is_err());
    }

    #[test]
    fn kernel_composition_matches_closed_form() {
        let dt = 1.0 / 252.0;
        for model in [gbm_true(), ou_true(), mixed_true()] {
            let kernel = transition_kernel(&model, dt).unwrap();
            for k in [1usize, 5, 63, 252] {
                let composed = kernel.law_after([50.0, 45.0], k).unwrap();
                let direct = conditional_law(&model, [50.0, 45.0], k as f64 * dt).unwrap();
                let dm = (composed.mean() - direct.mean()).amax();
                assert!(dm < 1e-10, "{} k={k}: mean gap {dm:.3e}", model.family());
                let dc = (composed.cov().matrix() - direct.cov().matrix()).norm() / direct.cov().matrix().norm();
                assert!(dc < 1e-10, "{} k={k}: cov gap {dc:.3e}", model.family());
            }
        }
    }

    #[test]
    fn cauchy_schwarz_on_all_laws() {
        for model in [gbm_true(), ou_true(), mixed_true()] {
            for form in [CrossCovariance::Exact, CrossCovariance::GeometricMean] {
                for tau in [1e-3, 0.1, 1.0, 10.0] {
                    let c = conditional_law_with(&model, [50.0, 45.0], tau, form).unwrap();
                    let c = c.cov();
                    assert!(c.get(0, 1).abs() <= (c.get(0, 0) * c.get(1, 1)).sqrt() * (1.0 + 1e-12));
                }
            }
        }
    }

    #[test]
    fn zero_noise_paths_are_deterministic_curves() {
        let dt = 1.0 / 252.0;
        let kernel = AffineGaussianKernel::new(
            Matrix2::identity(),
            Vector2::new(0.01, -0.02),
            &SpdMatrix::zeros(2),
            [Coord::Log, Coord::Log],
            dt,
        )
        .unwrap();
        let paths = simulate_paths(&kernel, [50.0, 45.0], 3, 10, 1).unwrap();
        assert_eq!(paths.dt, dt);
        for p in paths.paths() {
            for step in 0..=10 {
                assert_relative_eq!(p.spot(step), 50.0 * (0.01 * step as f64).exp(), max_relative = 1e-14);
                assert_relative_eq!(p.index(step), 45.0 * (-0.02 * step as f64).exp(), max_relative = 1e-14);
            }
        }
    }

    #[test]
    fn paths_start_at_initial_state_and_stay_positive_under_gbm() {
        let kernel = transition_kernel(&gbm_true(), 1.0 / 252.0).unwrap();
        let paths = simulate_paths(&kernel, [50.0, 45.0], 200, 63, 3).unwrap();
        for p in paths.paths() {
            assert_eq!((p.spot(0), p.index(0)), (50.0, 45.0));
            assert!((0..p.len()).all(|s| p.spot(s) > 0.0 && p.index(s) > 0.0));
        }
    }

    #[test]
    fn map_and_store_agree() {
        let kernel = transition_kernel(&mixed_true(), 1.0 / 252.0).unwrap();
        let stored = simulate_paths(&kernel, [50.0, 45.0], 64, 20, 17).unwrap();
        let mapped = simulate_map(&kernel, [50.0, 45.0], 64, 20, 17, |p| p.index(20)).unwrap();
        let from_store: Vec<f64> = stored.paths().map(|p| p.index(20)).collect();
        assert_eq!(mapped, from_store);
    }

    #[test]
    fn output_independent_of_thread_count() {
        let kernel = transition_kernel(&ou_true(), 1.0 / 252.0).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| simulate_paths(&kernel, [50.0, 45.0], 500, 30, 9).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn gbm_terminal_log_mean() {
        let kernel = transition_kernel(&gbm_true(), 1.0 / 252.0).unwrap();
        let n = 100_000;
        let logs = simulate_map(&kernel, [50.0, 45.0], n, 63, 21, |p| p.spot(63).ln()).unwrap();
        let mean = logs.iter().sum::<f64>() / n as f64;
        let se = (0.075625 / n as f64).sqrt();
        assert!((mean - 3.881_711).abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn ou_started_at_level_stays_there_on_average() {
        let kernel = transition_kernel(&ou_true(), 1.0 / 252.0).unwrap();
        let n = 20_000;
        let ends = simulate_map(&kernel, [60.0, 60.0], n, 1260, 4, |p| (p.spot(1260), p.index(1260))).unwrap();
        let law = conditional_law(&ou_true(), [60.0, 60.0], 5.0).unwrap();
        let m0 = ends.iter().map(|e| e.0).sum::<f64>() / n as f64;
        let m1 = ends.iter().map(|e| e.1).sum::<f64>() / n as f64;
        assert!((m0 - 60.0).abs() < 3.0 * (law.cov().get(0, 0) / n as f64).sqrt());
        assert!((m1 - 60.0).abs() < 3.0 * (law.cov().get(1, 1) / n as f64).sqrt());
    }

    #[test]
    fn one_step_shock_correlation() {
        let dt = 1.0 / 252.0;
        let model = gbm_true();
        let kernel = transition_kernel(&model, dt).unwrap();
        let n = 100_000;
        let shocks = simulate_map(&kernel, [50.0, 45.0], n, 1, 8, |p| {
            ((p.spot(1) / 50.0).ln(), (p.index(1) / 45.0).ln())
        })
        .unwrap();
        let nf = n as f64;
        let (m0, m1) = shocks.iter().fold((0.0, 0.0), |a, s| (a.0 + s.0 / nf, a.1 + s.1 / nf));
        let (mut c01, mut c00, mut c11) = (0.0, 0.0, 0.0);
        for s in &shocks {
            c01 += (s.0 - m0) * (s.1 - m1);
            c00 += (s.0 - m0).powi(2);
            c11 += (s.1 - m1).powi(2);
        }
        let corr = c01 / (c00 * c11).sqrt();
        let se = (1.0 - 0.75f64 * 0.75) / nf.sqrt();
        assert!((corr - 0.75).abs() < 3.0 * se, "corr {corr}");
    }

    #[test]
    fn csv_export_shape() {
        let kernel = transition_kernel(&gbm_true(), 0.1).unwrap();
        let paths = simulate_paths(&kernel, [50.0, 45.0], 2, 3, 1).unwrap();
        let mut out = Vec::new();
        paths.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "path_id,step,S,S_tilde");
        assert_eq!(lines.len(), 1 + 2 * 4);
        assert_eq!(lines[1], "0,0,50,45");
    }

    #[test]
    fn family_tagged_serde() {
        let text = r#"family = "ou"
mu = 60.0
mu_tilde = 60.0
alpha = 0.25
alpha_tilde = 0.4
sigma = 15.0
sigma_tilde = 10.0
rho = 0.75
"#;
        let parsed: ModelSpec = toml::from_str(text).unwrap();
        assert_eq!(parsed, ou_true());
        let with_extra = format!("{text}beta = 1.0\n");
        assert!(toml::from_str::<ModelSpec>(&with_extra).is_err());
    }
}

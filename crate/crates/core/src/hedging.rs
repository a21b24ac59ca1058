//! Obligations, hedging instruments, Monte Carlo pricing and the static
//! quadratic hedge.
//!
//! The hedge minimizes the sample mean of `(Φ − Ψθ)²` (plus `λ‖θ‖₁`) over
//! the admissible set. With a handful of instruments the minimizer is found
//! exactly by enumerating sign patterns: on each pattern the penalty is
//! linear, so the candidate is a linear solve on the support, and the best
//! sign-consistent candidate is the global minimizer.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::Coord;
use crate::gauss::{spd_solve, SpdMatrix};
use crate::models::{conditional_law, simulate_map, AffineGaussianKernel, ModelSpec, PathSet, PathView};

/// Largest instrument count solved by exhaustive enumeration.
const MAX_ENUMERATED: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketConfig {
    /// Risk-free rate per year.
    #[serde(default)]
    pub r: f64,
    /// Cargo size `D` multiplying every payoff.
    pub cargo_size: f64,
    /// Initial spot freight rate.
    pub s0: f64,
    /// Initial index (FFA) rate.
    pub s0_tilde: f64,
}

impl MarketConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cargo_size > 0.0) {
            return Err(Error::domain("cargo size must be positive"));
        }
        if !(self.s0 > 0.0 && self.s0_tilde > 0.0) {
            return Err(Error::domain("initial prices must be positive"));
        }
        if !self.r.is_finite() {
            return Err(Error::domain("risk-free rate must be finite"));
        }
        Ok(())
    }

    pub fn initial_state(&self) -> [f64; 2] {
        [self.s0, self.s0_tilde]
    }
}

/// Strictly increasing step indices `T₁ < … < T_N`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct SettlementSchedule(Vec<usize>);

impl SettlementSchedule {
    pub fn new(dates: Vec<usize>) -> Result<Self> {
        if dates.is_empty() {
            return Err(Error::domain("settlement schedule is empty"));
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::domain("settlement dates must be strictly increasing"));
        }
        Ok(SettlementSchedule(dates))
    }

    /// Single date at `horizon`.
    pub fn terminal(horizon: usize) -> Self {
        SettlementSchedule(vec![horizon])
    }

    /// The last `days` steps ending at `horizon` (fewer if the horizon is
    /// shorter; step 0 is never included).
    pub fn final_window(horizon: usize, days: usize) -> Result<Self> {
        if horizon == 0 || days == 0 {
            return Err(Error::domain("averaging window needs a positive horizon and length"));
        }
        let start = horizon.saturating_sub(days - 1).max(1);
        Self::new((start..=horizon).collect())
    }

    pub fn dates(&self) -> &[usize] {
        &self.0
    }

    pub fn horizon(&self) -> usize {
        *self.0.last().expect("nonempty")
    }

    fn check_range(&self, n_steps: usize) -> Result<()> {
        if self.horizon() > n_steps {
            return Err(Error::domain(format!(
                "settlement date {} beyond simulated range of {n_steps} steps",
                self.horizon()
            )));
        }
        Ok(())
    }

    fn average(&self, f: impl Fn(usize) -> f64) -> f64 {
        self.0.iter().map(|&d| f(d)).sum::<f64>() / self.0.len() as f64
    }
}

impl TryFrom<Vec<usize>> for SettlementSchedule {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        SettlementSchedule::new(v)
    }
}

impl From<SettlementSchedule> for Vec<usize> {
    fn from(s: SettlementSchedule) -> Self {
        s.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObligationKind {
    /// `D · S(T)`.
    Terminal,
    /// `D · (1/N) Σ S(Tᵢ)`.
    Average,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObligationSpec {
    pub kind: ObligationKind,
    pub schedule: SettlementSchedule,
}

impl ObligationSpec {
    pub fn evaluate(&self, path: PathView<'_>, mkt: &MarketConfig) -> f64 {
        let s = match self.kind {
            ObligationKind::Terminal => path.spot(self.schedule.horizon()),
            ObligationKind::Average => self.schedule.average(|d| path.spot(d)),
        };
        mkt.cargo_size * s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstrumentKind {
    /// Option on the index at the final settlement date.
    EuroOption,
    /// Option on the index averaged over the settlement dates.
    AvgOption,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayoffSide {
    /// `(K − X)⁺`.
    #[default]
    PutForm,
    /// `(X − K)⁺`.
    CallForm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstrumentSpec {
    pub kind: InstrumentKind,
    pub side: PayoffSide,
    pub strike: f64,
    pub schedule: SettlementSchedule,
}

impl InstrumentSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.strike > 0.0 && self.strike.is_finite()) {
            return Err(Error::domain(format!("strike must be positive, got {}", self.strike)));
        }
        Ok(())
    }

    /// Index value the option settles on.
    pub fn underlying(&self, path: PathView<'_>) -> f64 {
        match self.kind {
            InstrumentKind::EuroOption => path.index(self.schedule.horizon()),
            InstrumentKind::AvgOption => self.schedule.average(|d| path.index(d)),
        }
    }

    pub fn evaluate(&self, path: PathView<'_>, mkt: &MarketConfig) -> f64 {
        let x = self.underlying(path);
        let intrinsic = match self.side {
            PayoffSide::PutForm => self.strike - x,
            PayoffSide::CallForm => x - self.strike,
        };
        mkt.cargo_size * intrinsic.max(0.0)
    }
}

/// Obligation value on every path.
pub fn obligation_payoff(paths: &PathSet, spec: &ObligationSpec, mkt: &MarketConfig) -> Result<Vec<f64>> {
    spec.schedule.check_range(paths.n_steps)?;
    Ok(paths.paths().map(|p| spec.evaluate(p, mkt)).collect())
}

/// Instrument payoff on every path.
pub fn instrument_payoff(paths: &PathSet, spec: &InstrumentSpec, mkt: &MarketConfig) -> Result<Vec<f64>> {
    spec.validate()?;
    spec.schedule.check_range(paths.n_steps)?;
    Ok(paths.paths().map(|p| spec.evaluate(p, mkt)).collect())
}

/// Which coordinate of the state a forward is written on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Underlying {
    Spot,
    Index,
}

impl Underlying {
    fn slot(self) -> usize {
        match self {
            Underlying::Spot => 0,
            Underlying::Index => 1,
        }
    }
}

fn level_mean(mean: f64, var: f64, coord: Coord) -> f64 {
    match coord {
        Coord::Level => mean,
        Coord::Log => (mean + 0.5 * var).exp(),
    }
}

/// FFA forward `(1/N) Σ E[X(Tᵢ) | F_t]` from the model's closed-form laws.
/// `dates` are in years and must lie after `t`.
pub fn ffa_forward(model: &ModelSpec, state: [f64; 2], dates: &[f64], t: f64, underlying: Underlying) -> Result<f64> {
    if dates.is_empty() {
        return Err(Error::domain("forward needs at least one settlement date"));
    }
    let k = underlying.slot();
    let coord = model.coords()[k];
    let mut total = 0.0;
    for &date in dates {
        let law = conditional_law(model, state, date - t)?;
        total += level_mean(law.mean()[k], law.cov().get(k, k), coord);
    }
    Ok(total / dates.len() as f64)
}

/// FFA forward under a one-step kernel, settlement dates given in steps
/// after the conditioning time.
pub fn ffa_forward_kernel(
    kernel: &AffineGaussianKernel,
    state: [f64; 2],
    schedule: &SettlementSchedule,
    underlying: Underlying,
) -> Result<f64> {
    let k = underlying.slot();
    let coord = kernel.coords()[k];
    let mut total = 0.0;
    for &d in schedule.dates() {
        let law = kernel.law_after(state, d)?;
        total += level_mean(law.mean()[k], law.cov().get(k, k), coord);
    }
    Ok(total / schedule.dates().len() as f64)
}

/// Discounted Monte Carlo price with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McPrice {
    pub price: f64,
    pub std_error: f64,
}

/// Mean and standard error of the mean.
pub(crate) fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// `e^{−rT} · mean(payoff)` with `T` the instrument's final date.
pub fn price_option_mc(paths: &PathSet, spec: &InstrumentSpec, mkt: &MarketConfig) -> Result<McPrice> {
    let payoff = instrument_payoff(paths, spec, mkt)?;
    let maturity = spec.schedule.horizon() as f64 * paths.dt;
    let discount = (-mkt.r * maturity).exp();
    let (mean, se) = mean_and_se(&payoff);
    Ok(McPrice {
        price: discount * mean,
        std_error: discount * se,
    })
}

/// Prices several instruments on one simulated sample without storing the
/// paths.
pub fn price_instruments_mc(
    kernel: &AffineGaussianKernel,
    mkt: &MarketConfig,
    instruments: &[InstrumentSpec],
    n_paths: usize,
    seed: u64,
) -> Result<Vec<McPrice>> {
    mkt.validate()?;
    let n_steps = max_horizon(instruments)?;
    for inst in instruments {
        inst.validate()?;
    }
    let rows = simulate_map(kernel, mkt.initial_state(), n_paths, n_steps, seed, |p| {
        instruments.iter().map(|inst| inst.evaluate(p, mkt)).collect::<Vec<_>>()
    })?;
    Ok(instruments
        .iter()
        .enumerate()
        .map(|(j, inst)| {
            let payoff: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            let discount = (-mkt.r * inst.schedule.horizon() as f64 * kernel.dt()).exp();
            let (mean, se) = mean_and_se(&payoff);
            McPrice {
                price: discount * mean,
                std_error: discount * se,
            }
        })
        .collect())
}

fn max_horizon(instruments: &[InstrumentSpec]) -> Result<usize> {
    instruments
        .iter()
        .map(|i| i.schedule.horizon())
        .max()
        .ok_or_else(|| Error::domain("no instruments to price"))
}

/// Caplet and floorlet at one strike on a shared sample, against the
/// closed-form discounted forward `e^{−rT} D (F − K)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParityCheck {
    pub caplet: McPrice,
    pub floorlet: McPrice,
    /// Caplet minus floorlet with the standard error of the pathwise
    /// difference.
    pub difference: McPrice,
    pub forward_value: f64,
    /// `|difference − forward_value|` in standard errors.
    pub z_score: f64,
}

pub fn parity_check(
    kernel: &AffineGaussianKernel,
    mkt: &MarketConfig,
    kind: InstrumentKind,
    strike: f64,
    schedule: &SettlementSchedule,
    n_paths: usize,
    seed: u64,
) -> Result<ParityCheck> {
    mkt.validate()?;
    let make = |side| InstrumentSpec {
        kind,
        side,
        strike,
        schedule: schedule.clone(),
    };
    let (call, put) = (make(PayoffSide::CallForm), make(PayoffSide::PutForm));
    call.validate()?;
    let rows = simulate_map(kernel, mkt.initial_state(), n_paths, schedule.horizon(), seed, |p| {
        (call.evaluate(p, mkt), put.evaluate(p, mkt))
    })?;
    let discount = (-mkt.r * schedule.horizon() as f64 * kernel.dt()).exp();
    let priced = |xs: Vec<f64>| {
        let (mean, se) = mean_and_se(&xs);
        McPrice {
            price: discount * mean,
            std_error: discount * se,
        }
    };
    let caplet = priced(rows.iter().map(|r| r.0).collect());
    let floorlet = priced(rows.iter().map(|r| r.1).collect());
    let difference = priced(rows.iter().map(|r| r.0 - r.1).collect());
    let forward_schedule = match kind {
        InstrumentKind::EuroOption => SettlementSchedule::terminal(schedule.horizon()),
        InstrumentKind::AvgOption => schedule.clone(),
    };
    let forward = ffa_forward_kernel(kernel, mkt.initial_state(), &forward_schedule, Underlying::Index)?;
    let forward_value = discount * mkt.cargo_size * (forward - strike);
    let gap = (difference.price - forward_value).abs();
    // deterministic samples still carry roundoff in the average
    let z_score = gap / difference.std_error.max(1e-12 * forward_value.abs().max(1.0));
    Ok(ParityCheck {
        caplet,
        floorlet,
        difference,
        forward_value,
        z_score,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Admissible {
    /// `θ ≥ 0` componentwise.
    #[default]
    Nonnegative,
    Unconstrained,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularizationSpec {
    /// LASSO strength.
    pub lambda: f64,
}

impl RegularizationSpec {
    pub fn lasso(lambda: f64) -> Result<Self> {
        let spec = RegularizationSpec { lambda };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::domain(format!(
                "regularization strength must be nonnegative, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Holdings per instrument, per unit of obligation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HedgeStrategy {
    pub theta: Vec<f64>,
}

impl HedgeStrategy {
    pub fn reported_pct(&self) -> Vec<f64> {
        self.theta.iter().map(|t| 100.0 * t).collect()
    }

    /// Holdings rescaled to sum to 100 (zero when the portfolio is empty).
    pub fn normalized_pct(&self) -> Vec<f64> {
        let total: f64 = self.theta.iter().sum();
        self.theta
            .iter()
            .map(|t| if total != 0.0 { 100.0 * t / total } else { 0.0 })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HedgeSolution {
    pub strategy: HedgeStrategy,
    /// Sample mean of `(Φ − Ψθ)²`.
    pub expected_loss: f64,
    /// `expected_loss + λ‖θ‖₁`.
    pub objective: f64,
}

/// Obligations and instrument payoffs on a common sample; `psi` has one row
/// per path and one column per instrument.
#[derive(Debug, Clone, PartialEq)]
pub struct HedgeSample {
    pub phi: Vec<f64>,
    pub psi: DMatrix<f64>,
}

impl HedgeSample {
    pub fn new(phi: Vec<f64>, psi: DMatrix<f64>) -> Result<Self> {
        if phi.is_empty() {
            return Err(Error::domain("hedge sample is empty"));
        }
        if psi.nrows() != phi.len() {
            return Err(Error::domain(format!(
                "{} obligations but {} payoff rows",
                phi.len(),
                psi.nrows()
            )));
        }
        if psi.ncols() == 0 {
            return Err(Error::domain("no hedging instruments"));
        }
        Ok(HedgeSample { phi, psi })
    }

    pub fn from_rows(rows: Vec<(f64, Vec<f64>)>) -> Result<Self> {
        let k = rows.first().map(|r| r.1.len()).unwrap_or(0);
        if rows.iter().any(|r| r.1.len() != k) {
            return Err(Error::domain("ragged payoff rows"));
        }
        let psi = DMatrix::from_row_iterator(rows.len(), k, rows.iter().flat_map(|r| r.1.iter().copied()));
        Self::new(rows.into_iter().map(|r| r.0).collect(), psi)
    }

    pub fn from_paths(
        paths: &PathSet,
        obligation: &ObligationSpec,
        instruments: &[InstrumentSpec],
        mkt: &MarketConfig,
    ) -> Result<Self> {
        check_specs(obligation, instruments, paths.n_steps)?;
        Self::from_rows(
            paths
                .paths()
                .map(|p| evaluate_path(p, obligation, instruments, mkt))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    /// `Ψθ` per path.
    pub fn portfolio(&self, theta: &[f64]) -> Vec<f64> {
        (0..self.len())
            .map(|i| (0..theta.len()).map(|j| self.psi[(i, j)] * theta[j]).sum())
            .collect()
    }

    /// `Φ − Ψθ` per path.
    pub fn residuals(&self, theta: &[f64]) -> Vec<f64> {
        self.portfolio(theta)
            .into_iter()
            .zip(&self.phi)
            .map(|(v, phi)| phi - v)
            .collect()
    }

    pub fn mean_sq_loss(&self, theta: &[f64]) -> f64 {
        let r = self.residuals(theta);
        r.iter().map(|x| x * x).sum::<f64>() / r.len() as f64
    }

    /// `(mean ΨᵀΨ, mean ΨᵀΦ)`.
    pub fn moments(&self) -> (DMatrix<f64>, DVector<f64>) {
        let (n, k) = (self.len(), self.psi.ncols());
        let mut gram = DMatrix::zeros(k, k);
        let mut cross = DVector::zeros(k);
        for i in 0..n {
            for a in 0..k {
                let pa = self.psi[(i, a)];
                cross[a] += pa * self.phi[i];
                for b in a..k {
                    gram[(a, b)] += pa * self.psi[(i, b)];
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                gram[(a, b)] = gram[(b, a)];
            }
        }
        (gram / n as f64, cross / n as f64)
    }
}

fn check_specs(obligation: &ObligationSpec, instruments: &[InstrumentSpec], n_steps: usize) -> Result<()> {
    obligation.schedule.check_range(n_steps)?;
    for inst in instruments {
        inst.validate()?;
        inst.schedule.check_range(n_steps)?;
    }
    Ok(())
}

fn evaluate_path(
    path: PathView<'_>,
    obligation: &ObligationSpec,
    instruments: &[InstrumentSpec],
    mkt: &MarketConfig,
) -> (f64, Vec<f64>) {
    (
        obligation.evaluate(path, mkt),
        instruments.iter().map(|inst| inst.evaluate(path, mkt)).collect(),
    )
}

/// Simulates `n_paths` paths under `kernel` and records `Φ` and `Ψ` on each
/// without keeping the paths.
pub fn simulate_hedge_sample(
    kernel: &AffineGaussianKernel,
    mkt: &MarketConfig,
    obligation: &ObligationSpec,
    instruments: &[InstrumentSpec],
    n_paths: usize,
    seed: u64,
) -> Result<HedgeSample> {
    mkt.validate()?;
    let n_steps = std::iter::once(obligation.schedule.horizon())
        .chain(instruments.iter().map(|i| i.schedule.horizon()))
        .max()
        .expect("nonempty");
    check_specs(obligation, instruments, n_steps)?;
    let rows = simulate_map(kernel, mkt.initial_state(), n_paths, n_steps, seed, |p| {
        evaluate_path(p, obligation, instruments, mkt)
    })?;
    HedgeSample::from_rows(rows)
}

/// Minimizes `mean (Φ − Ψθ)² + λ‖θ‖₁` over the admissible set.
pub fn solve_hedge(sample: &HedgeSample, admissible: Admissible, reg: &RegularizationSpec) -> Result<HedgeSolution> {
    reg.validate()?;
    let (gram, cross) = sample.moments();
    let gram_spd = SpdMatrix::new(gram.clone())?;
    let condition = gram_spd.condition()?;
    if condition > crate::gauss::MAX_CONDITION {
        return Err(Error::IllConditioned { condition });
    }
    let k = cross.len();
    let lambda = reg.lambda;

    let theta = if lambda == 0.0 && admissible == Admissible::Unconstrained {
        spd_solve(&gram_spd, &cross)?.iter().copied().collect()
    } else if k <= MAX_ENUMERATED {
        enumerate_patterns(sample, &gram, &cross, admissible, lambda)?
    } else {
        coordinate_descent(&gram, &cross, admissible, lambda)
    };

    let expected_loss = sample.mean_sq_loss(&theta);
    let objective = expected_loss + lambda * theta.iter().map(|t| t.abs()).sum::<f64>();
    Ok(HedgeSolution {
        strategy: HedgeStrategy { theta },
        expected_loss,
        objective,
    })
}

/// Best sign-consistent stationary point over all support/sign patterns.
fn enumerate_patterns(
    sample: &HedgeSample,
    gram: &DMatrix<f64>,
    cross: &DVector<f64>,
    admissible: Admissible,
    lambda: f64,
) -> Result<Vec<f64>> {
    let k = cross.len();
    let signs: &[i8] = match admissible {
        Admissible::Nonnegative => &[0, 1],
        Admissible::Unconstrained => &[0, 1, -1],
    };
    let base = signs.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut pattern = vec![0i8; k];
    for code in 0..base.pow(k as u32) {
        let mut c = code;
        for s in pattern.iter_mut() {
            *s = signs[c % base];
            c /= base;
        }
        let support: Vec<usize> = (0..k).filter(|&j| pattern[j] != 0).collect();
        let mut theta = vec![0.0; k];
        if !support.is_empty() {
            let sub_g = DMatrix::from_fn(support.len(), support.len(), |a, b| gram[(support[a], support[b])]);
            let rhs = DVector::from_iterator(
                support.len(),
                support.iter().map(|&j| cross[j] - 0.5 * lambda * pattern[j] as f64),
            );
            // plain division keeps exact replication exact; c/√g/√g need not be
            let sol = if support.len() == 1 {
                if sub_g[(0, 0)] <= 0.0 {
                    continue;
                }
                rhs / sub_g[(0, 0)]
            } else {
                let Some(chol) = sub_g.cholesky() else { continue };
                chol.solve(&rhs)
            };
            if support
                .iter()
                .zip(sol.iter())
                .any(|(&j, &v)| v * pattern[j] as f64 <= 0.0)
            {
                continue;
            }
            for (&j, &v) in support.iter().zip(sol.iter()) {
                theta[j] = v;
            }
        }
        let value = sample.mean_sq_loss(&theta) + lambda * theta.iter().map(|t| t.abs()).sum::<f64>();
        if best.as_ref().is_none_or(|(b, _)| value < *b) {
            best = Some((value, theta));
        }
    }
    best.map(|(_, t)| t)
        .ok_or_else(|| Error::domain("no admissible hedge found"))
}

/// Cyclic coordinate descent on the moment form, for large libraries.
fn coordinate_descent(gram: &DMatrix<f64>, cross: &DVector<f64>, admissible: Admissible, lambda: f64) -> Vec<f64> {
    let k = cross.len();
    let mut theta = vec![0.0; k];
    let scale = cross.amax().max(f64::MIN_POSITIVE);
    for _ in 0..100_000 {
        let mut max_step: f64 = 0.0;
        for j in 0..k {
            let partial = cross[j] - (0..k).filter(|&i| i != j).map(|i| gram[(j, i)] * theta[i]).sum::<f64>();
            let shrunk = soft_threshold(partial, 0.5 * lambda);
            let mut next = shrunk / gram[(j, j)];
            if admissible == Admissible::Nonnegative {
                next = next.max(0.0);
            }
            max_step = max_step.max((next - theta[j]).abs() * gram[(j, j)]);
            theta[j] = next;
        }
        if max_step <= 1e-15 * scale {
            break;
        }
    }
    theta
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// `100 · mean(Ψθ) / (D · s0)`.
pub fn expected_profit_pct(sample: &HedgeSample, theta: &[f64], mkt: &MarketConfig) -> f64 {
    let v = sample.portfolio(theta);
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    100.0 * mean / (mkt.cargo_size * mkt.s0)
}

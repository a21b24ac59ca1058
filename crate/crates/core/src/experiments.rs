//! The perturbed-prior hedging study: prior sets at three homogeneity
//! levels, barycenter and true-model hedges, and error metrics.
//!
//! Seeds: each row of the full cross (families × levels × horizons) owns a
//! row seed derived from the master seed and its row index. The prior set is
//! seeded by (family, level) so all horizons of a level share one prior.
//! The aggregate and true-model hedges are solved on the same substreams,
//! and evaluation uses a separate seed.

use std::fmt::Write as _;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::barycenter::{aggregate_kernel, BarycenterOptions, PriorSet, WeightVector};
use crate::error::{Error, Result};
use crate::hedging::{
    expected_profit_pct, simulate_hedge_sample, solve_hedge, Admissible, HedgeSample, InstrumentKind, InstrumentSpec,
    MarketConfig, ObligationKind, ObligationSpec, PayoffSide, RegularizationSpec, SettlementSchedule,
};
use crate::models::{
    transition_kernel_with, AffineGaussianKernel, CrossCovariance, Family, GbmParams, MixedParams, ModelSpec, OuParams,
    TRADING_DAYS,
};
use crate::rng;

pub const TRADING_DAYS_PER_MONTH: usize = 21;
pub const DEFAULT_PRIOR_SIZE: usize = 10;
pub const DEFAULT_PATHS: usize = 100_000;
pub const DEFAULT_HORIZONS: [usize; 4] = [63, 126, 189, 252];
/// Largest |ρ| a perturbed model may carry.
pub const RHO_CLAMP: f64 = 0.99;
const MAX_RETRIES: usize = 100;

// Labels mixed into the master seed.
const PRIOR_LABEL: u64 = 0x0050_5249_4f52;
const ROW_LABEL: u64 = 0x0052_4f57;
const SOLVE_LABEL: u64 = 1;
const EVAL_LABEL: u64 = 2;

/// True-model parameters of the study.
pub fn true_model(family: Family) -> ModelSpec {
    match family {
        Family::Gbm => ModelSpec::Gbm(GbmParams {
            mu: 0.03,
            mu_tilde: 0.01,
            sigma: 0.55,
            sigma_tilde: 0.40,
            rho: 0.75,
        }),
        Family::Ou => ModelSpec::Ou(OuParams {
            mu: 60.0,
            mu_tilde: 60.0,
            alpha: 0.25,
            alpha_tilde: 0.40,
            sigma: 15.0,
            sigma_tilde: 10.0,
            rho: 0.75,
        }),
        Family::Mixed => ModelSpec::Mixed(MixedParams {
            mu: 0.03,
            sigma: 0.55,
            mu_tilde: 60.0,
            alpha_tilde: 0.60,
            sigma_tilde: 8.0,
            rho: 0.75,
        }),
    }
}

/// Homogeneity of the prior set. `Exact` is the zero-noise level used for
/// true-model-only runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Hh,
    Mh,
    Lh,
    Exact,
}

impl Level {
    pub const STUDY: [Level; 3] = [Level::Hh, Level::Mh, Level::Lh];

    pub fn label(self) -> &'static str {
        match self {
            Level::Hh => "HH",
            Level::Mh => "MH",
            Level::Lh => "LH",
            Level::Exact => "TRUE",
        }
    }

    fn index(self) -> u64 {
        match self {
            Level::Hh => 0,
            Level::Mh => 1,
            Level::Lh => 2,
            Level::Exact => 3,
        }
    }
}

/// Relative half-widths of the uniform parameter noise per level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Halfwidths {
    pub hh: f64,
    pub mh: f64,
    pub lh: f64,
}

impl Default for Halfwidths {
    fn default() -> Self {
        Halfwidths {
            hh: 0.05,
            mh: 0.15,
            lh: 0.30,
        }
    }
}

impl Halfwidths {
    pub fn get(&self, level: Level) -> f64 {
        match level {
            Level::Hh => self.hh,
            Level::Mh => self.mh,
            Level::Lh => self.lh,
            Level::Exact => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub level: Level,
    pub relative_halfwidth: f64,
    pub m: usize,
    pub seed: u64,
}

impl PerturbationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.relative_halfwidth >= 0.0 && self.relative_halfwidth.is_finite()) {
            return Err(Error::domain(format!(
                "perturbation half-width must be nonnegative, got {}",
                self.relative_halfwidth
            )));
        }
        if self.m == 0 {
            return Err(Error::domain("prior set needs at least one model"));
        }
        Ok(())
    }
}

fn noise<R: Rng>(rng: &mut R, h: f64) -> f64 {
    if h == 0.0 {
        0.0
    } else {
        rng.gen_range(-h..h)
    }
}

/// `m` perturbed copies of `truth` with uniform weights. Model `i` draws from
/// substream `(seed, i)`.
pub fn generate_prior_set(truth: &ModelSpec, pert: &PerturbationSpec) -> Result<PriorSet> {
    pert.validate()?;
    truth.validate()?;
    let h = pert.relative_halfwidth;
    let base: Vec<f64> = truth.scale_params().iter().map(|(_, v)| *v).collect();
    let names = truth.scale_params();
    let mut models = Vec::with_capacity(pert.m);
    for i in 0..pert.m {
        let mut r = rng::substream(pert.seed, i as u64);
        let mut values = Vec::with_capacity(base.len());
        for (j, &p) in base.iter().enumerate() {
            // a draw may not flip the sign of a parameter
            let v = (0..MAX_RETRIES)
                .map(|_| p * (1.0 + noise(&mut r, h)))
                .find(|v| p == 0.0 || v.signum() == p.signum() && *v != 0.0)
                .ok_or_else(|| {
                    Error::domain(format!("could not perturb `{}` within {MAX_RETRIES} draws", names[j].0))
                })?;
            values.push(v);
        }
        let rho = truth.rho();
        let rho = (rho + noise(&mut r, h) * rho.abs()).clamp(-RHO_CLAMP, RHO_CLAMP);
        let model = truth.with_params(&values, rho)?;
        model.validate()?;
        models.push(model);
    }
    PriorSet::uniform(models)
}

/// Instrument with its strike; the schedule follows from the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstrumentTemplate {
    pub kind: InstrumentKind,
    #[serde(default)]
    pub side: PayoffSide,
    pub strike: f64,
}

/// Obligation and instruments, parameterized by horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HedgeDesign {
    pub obligation: ObligationKind,
    /// Length of the final averaging window, in steps.
    pub averaging_days: usize,
    pub instruments: Vec<InstrumentTemplate>,
}

impl HedgeDesign {
    /// Option on the index at 120% of its initial level, plus an averaging
    /// option at 110%, both in put form.
    pub fn standard(s0_tilde: f64) -> Self {
        HedgeDesign {
            obligation: ObligationKind::Average,
            averaging_days: TRADING_DAYS_PER_MONTH,
            instruments: vec![
                InstrumentTemplate {
                    kind: InstrumentKind::EuroOption,
                    side: PayoffSide::PutForm,
                    strike: s0_tilde * 120.0 / 100.0,
                },
                InstrumentTemplate {
                    kind: InstrumentKind::AvgOption,
                    side: PayoffSide::PutForm,
                    strike: s0_tilde * 110.0 / 100.0,
                },
            ],
        }
    }

    fn window(&self, horizon: usize) -> Result<SettlementSchedule> {
        SettlementSchedule::final_window(horizon, self.averaging_days)
    }

    pub fn obligation(&self, horizon: usize) -> Result<ObligationSpec> {
        let schedule = match self.obligation {
            ObligationKind::Terminal => SettlementSchedule::terminal(horizon),
            ObligationKind::Average => self.window(horizon)?,
        };
        Ok(ObligationSpec {
            kind: self.obligation,
            schedule,
        })
    }

    pub fn instruments(&self, horizon: usize) -> Result<Vec<InstrumentSpec>> {
        self.instruments
            .iter()
            .map(|t| {
                let schedule = match t.kind {
                    InstrumentKind::EuroOption => SettlementSchedule::terminal(horizon),
                    InstrumentKind::AvgOption => self.window(horizon)?,
                };
                let spec = InstrumentSpec {
                    kind: t.kind,
                    side: t.side,
                    strike: t.strike,
                    schedule,
                };
                spec.validate()?;
                Ok(spec)
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.averaging_days == 0 {
            return Err(Error::domain("averaging window must be at least one day"));
        }
        if self.instruments.is_empty() {
            return Err(Error::domain("hedge design has no instruments"));
        }
        self.instruments(self.averaging_days).map(|_| ())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSpec {
    pub admissible: Admissible,
    pub lambda: f64,
    pub barycenter: BarycenterOptions,
}

impl SolverSpec {
    pub fn regularization(&self) -> Result<RegularizationSpec> {
        RegularizationSpec::lasso(self.lambda)
    }
}

/// Everything that defines a study run.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub master_seed: u64,
    /// One true model per family; their order fixes the row index.
    pub models: Vec<ModelSpec>,
    pub levels: Vec<Level>,
    pub halfwidths: Halfwidths,
    pub prior_size: usize,
    /// Prior weights; uniform when absent.
    pub weights: Option<WeightVector>,
    pub horizons: Vec<usize>,
    pub n_paths: usize,
    pub dt: f64,
    pub mkt: MarketConfig,
    pub design: HedgeDesign,
    pub solver: SolverSpec,
    pub cross_covariance: CrossCovariance,
}

impl StudyConfig {
    /// The three-family study with its default conventions.
    pub fn standard(master_seed: u64) -> Self {
        let mkt = MarketConfig {
            r: 0.0,
            cargo_size: 1.0,
            s0: 50.0,
            s0_tilde: 45.0,
        };
        StudyConfig {
            master_seed,
            models: Family::ALL.iter().map(|&f| true_model(f)).collect(),
            levels: Level::STUDY.to_vec(),
            halfwidths: Halfwidths::default(),
            prior_size: DEFAULT_PRIOR_SIZE,
            weights: None,
            horizons: DEFAULT_HORIZONS.to_vec(),
            n_paths: DEFAULT_PATHS,
            dt: 1.0 / TRADING_DAYS as f64,
            mkt,
            design: HedgeDesign::standard(mkt.s0_tilde),
            solver: SolverSpec::default(),
            cross_covariance: CrossCovariance::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() || self.levels.is_empty() || self.horizons.is_empty() {
            return Err(Error::domain("study needs at least one model, level and horizon"));
        }
        if self.n_paths == 0 {
            return Err(Error::domain("study needs at least one path"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::domain(format!("time step must be positive, got {}", self.dt)));
        }
        if self.horizons.contains(&0) {
            return Err(Error::domain("horizons must be positive step counts"));
        }
        if let Some(w) = &self.weights {
            if w.len() != self.prior_size {
                return Err(Error::domain(format!(
                    "{} prior weights for a prior set of {}",
                    w.len(),
                    self.prior_size
                )));
            }
        }
        for m in &self.models {
            m.validate()?;
        }
        for level in &self.levels {
            self.perturbation(Family::Gbm, *level).validate()?;
        }
        self.mkt.validate()?;
        self.design.validate()?;
        self.solver.regularization()?;
        Ok(())
    }

    /// Prior-set recipe for `(family, level)`, shared by every horizon.
    pub fn perturbation(&self, family: Family, level: Level) -> PerturbationSpec {
        PerturbationSpec {
            level,
            relative_halfwidth: self.halfwidths.get(level),
            m: self.prior_size,
            seed: rng::derive_seed(self.master_seed, &[PRIOR_LABEL, family.index(), level.index()]),
        }
    }

    /// Every row of the cross, in report order.
    pub fn plan(&self) -> Vec<RowPlan> {
        let mut rows = Vec::new();
        for model in &self.models {
            for &level in &self.levels {
                for &horizon in &self.horizons {
                    let index = rows.len();
                    let row_seed = rng::derive_seed(self.master_seed, &[ROW_LABEL, index as u64]);
                    rows.push(RowPlan {
                        index,
                        model: *model,
                        level,
                        horizon,
                        perturbation: self.perturbation(model.family(), level),
                        row_seed,
                        solve_seed: rng::derive_seed(row_seed, &[SOLVE_LABEL]),
                        eval_seed: rng::derive_seed(row_seed, &[EVAL_LABEL]),
                    });
                }
            }
        }
        rows
    }
}

/// One row of the study with its seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RowPlan {
    pub index: usize,
    pub model: ModelSpec,
    pub level: Level,
    pub horizon: usize,
    pub perturbation: PerturbationSpec,
    pub row_seed: u64,
    pub solve_seed: u64,
    pub eval_seed: u64,
}

impl RowPlan {
    pub fn family(&self) -> Family {
        self.model.family()
    }
}

/// Hedges and metrics for one row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HedgeOutcome {
    pub theta: Vec<f64>,
    pub theta_true: Vec<f64>,
    pub profit_pct: f64,
    pub profit_true_pct: f64,
    pub mae: f64,
    pub rmse: f64,
}

/// `(MAE, RMSE)` of residuals per unit of cargo.
pub fn error_metrics(residuals: &[f64], cargo_size: f64) -> (f64, f64) {
    let n = residuals.len() as f64;
    let mae = residuals.iter().map(|r| r.abs()).sum::<f64>() / n / cargo_size;
    let rmse = (residuals.iter().map(|r| r * r).sum::<f64>() / n).sqrt() / cargo_size;
    // equal |r| can leave the two an ulp apart in either direction
    (mae, rmse.max(mae))
}

/// Steps (3)–(8) of a row: solve under `aggregate` and under `truth` on the
/// same seed, evaluate the aggregate hedge on fresh `truth` paths.
pub fn evaluate_hedge(
    cfg: &StudyConfig,
    horizon: usize,
    aggregate: &AffineGaussianKernel,
    truth: &AffineGaussianKernel,
    solve_seed: u64,
    eval_seed: u64,
) -> Result<HedgeOutcome> {
    let obligation = cfg.design.obligation(horizon)?;
    let instruments = cfg.design.instruments(horizon)?;
    let reg = cfg.solver.regularization()?;
    let sample = |kernel, seed| simulate_hedge_sample(kernel, &cfg.mkt, &obligation, &instruments, cfg.n_paths, seed);
    let solve = |s: &HedgeSample| solve_hedge(s, cfg.solver.admissible, &reg).map(|sol| sol.strategy.theta);

    let agg_sample = sample(aggregate, solve_seed)?;
    let theta = solve(&agg_sample)?;
    let profit_pct = expected_profit_pct(&agg_sample, &theta, &cfg.mkt);
    drop(agg_sample);

    let true_sample = sample(truth, solve_seed)?;
    let theta_true = solve(&true_sample)?;
    let profit_true_pct = expected_profit_pct(&true_sample, &theta_true, &cfg.mkt);
    drop(true_sample);

    let eval = sample(truth, eval_seed)?;
    let (mae, rmse) = error_metrics(&eval.residuals(&theta), cfg.mkt.cargo_size);
    Ok(HedgeOutcome {
        theta,
        theta_true,
        profit_pct,
        profit_true_pct,
        mae,
        rmse,
    })
}

/// Report row; numeric fields are NaN when the row failed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioRow {
    pub family: Family,
    pub level: Level,
    pub horizon_steps: usize,
    pub theta_pct: Vec<f64>,
    /// `theta_pct` rescaled to sum to 100.
    pub theta_normalized_pct: Vec<f64>,
    pub profit_pct: f64,
    pub theta_true_pct: Vec<f64>,
    pub profit_true_pct: f64,
    pub mae: f64,
    pub rmse: f64,
    pub seed: u64,
    pub barycenter_iterations: usize,
    pub error: Option<String>,
    #[serde(skip)]
    pub runtime_secs: f64,
}

impl ScenarioRow {
    pub fn horizon_months(&self) -> f64 {
        self.horizon_steps as f64 / TRADING_DAYS_PER_MONTH as f64
    }

    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

fn pct(v: &[f64]) -> Vec<f64> {
    v.iter().map(|t| 100.0 * t).collect()
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let total: f64 = v.iter().sum();
    v.iter()
        .map(|t| if total != 0.0 { 100.0 * t / total } else { 0.0 })
        .collect()
}

/// Runs one planned row; failures are recorded in the row.
pub fn run_row(cfg: &StudyConfig, plan: &RowPlan) -> ScenarioRow {
    let start = Instant::now();
    let k = cfg.design.instruments.len();
    let result = (|| {
        let prior = generate_prior_set(&plan.model, &plan.perturbation)?;
        let prior = match &cfg.weights {
            Some(w) => PriorSet::new(prior.models().to_vec(), w.clone())?,
            None => prior,
        };
        let agg = aggregate_kernel(&prior, cfg.dt, cfg.cross_covariance, &cfg.solver.barycenter)?;
        let truth = transition_kernel_with(&plan.model, cfg.dt, cfg.cross_covariance)?;
        let out = evaluate_hedge(cfg, plan.horizon, &agg.kernel, &truth, plan.solve_seed, plan.eval_seed)?;
        Ok::<_, Error>((out, agg.noise_iterations))
    })();
    let mut row = ScenarioRow {
        family: plan.family(),
        level: plan.level,
        horizon_steps: plan.horizon,
        theta_pct: vec![f64::NAN; k],
        theta_normalized_pct: vec![f64::NAN; k],
        profit_pct: f64::NAN,
        theta_true_pct: vec![f64::NAN; k],
        profit_true_pct: f64::NAN,
        mae: f64::NAN,
        rmse: f64::NAN,
        seed: plan.row_seed,
        barycenter_iterations: 0,
        error: None,
        runtime_secs: 0.0,
    };
    match result {
        Ok((out, iterations)) => {
            row.theta_pct = pct(&out.theta);
            row.theta_normalized_pct = normalized(&out.theta);
            row.profit_pct = out.profit_pct;
            row.theta_true_pct = pct(&out.theta_true);
            row.profit_true_pct = out.profit_true_pct;
            row.mae = out.mae;
            row.rmse = out.rmse;
            row.barycenter_iterations = iterations;
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row.runtime_secs = start.elapsed().as_secs_f64();
    row
}

/// Runs the row of `cfg` matching `(family, level, horizon)`.
pub fn run_scenario(cfg: &StudyConfig, family: Family, level: Level, horizon: usize) -> Result<ScenarioRow> {
    cfg.validate()?;
    let plan = cfg
        .plan()
        .into_iter()
        .find(|p| p.family() == family && p.level == level && p.horizon == horizon)
        .ok_or_else(|| Error::domain(format!("no row for {family}/{}/{horizon} in this study", level.label())))?;
    Ok(run_row(cfg, &plan))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyReport {
    pub master_seed: u64,
    pub halfwidths: Halfwidths,
    pub prior_size: usize,
    pub n_paths: usize,
    pub rows: Vec<ScenarioRow>,
    pub failures: Vec<String>,
    /// Report-only observations (never failures).
    pub diagnostics: Vec<String>,
}

impl StudyReport {
    pub fn to_csv(&self) -> String {
        let k = self.rows.first().map_or(2, |r| r.theta_pct.len());
        let mut out = String::from("family,level,horizon_months");
        for j in 1..=k {
            write!(out, ",theta{j}_pct").unwrap();
        }
        out.push_str(",profit_pct");
        for j in 1..=k {
            write!(out, ",theta{j}_true_pct").unwrap();
        }
        out.push_str(",profit_true_pct,mae,rmse,seed\n");
        for r in &self.rows {
            write!(
                out,
                "{},{},{}",
                r.family,
                r.level.label(),
                fmt_months(r.horizon_months())
            )
            .unwrap();
            for t in &r.theta_pct {
                write!(out, ",{}", fmt_num(*t)).unwrap();
            }
            write!(out, ",{}", fmt_num(r.profit_pct)).unwrap();
            for t in &r.theta_true_pct {
                write!(out, ",{}", fmt_num(*t)).unwrap();
            }
            writeln!(
                out,
                ",{},{},{},{}",
                fmt_num(r.profit_true_pct),
                fmt_num(r.mae),
                fmt_num(r.rmse),
                r.seed
            )
            .unwrap();
        }
        out
    }
}

fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else {
        // avoid printing -0.000000
        let s = format!("{x:.6}");
        if s.trim_start_matches('-').chars().all(|c| c == '0' || c == '.') {
            s.trim_start_matches('-').to_string()
        } else {
            s
        }
    }
}

fn fmt_months(m: f64) -> String {
    if m.fract() == 0.0 {
        format!("{m:.0}")
    } else {
        format!("{m:.3}")
    }
}

/// Runs every planned row accepted by `keep`, in plan order.
pub fn run_study(cfg: &StudyConfig, keep: impl Fn(&RowPlan) -> bool) -> Result<StudyReport> {
    cfg.validate()?;
    let rows: Vec<ScenarioRow> = cfg.plan().iter().filter(|p| keep(p)).map(|p| run_row(cfg, p)).collect();
    let failures = rows
        .iter()
        .filter_map(|r| {
            r.error
                .as_ref()
                .map(|e| format!("{}/{}/{}: {e}", r.family, r.level.label(), r.horizon_steps))
        })
        .collect();
    let diagnostics = rmse_ordering(&rows);
    Ok(StudyReport {
        master_seed: cfg.master_seed,
        halfwidths: cfg.halfwidths,
        prior_size: cfg.prior_size,
        n_paths: cfg.n_paths,
        rows,
        failures,
        diagnostics,
    })
}

/// Notes GBM rows whose RMSE drops as the horizon grows.
fn rmse_ordering(rows: &[ScenarioRow]) -> Vec<String> {
    let mut notes = Vec::new();
    for pair in rows.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if a.family == Family::Gbm
            && b.family == Family::Gbm
            && a.level == b.level
            && b.horizon_steps > a.horizon_steps
            && b.rmse < a.rmse
        {
            notes.push(format!(
                "gbm/{}: rmse falls from {:.4} at {} steps to {:.4} at {} steps",
                a.level.label(),
                a.rmse,
                a.horizon_steps,
                b.rmse,
                b.horizon_steps
            ));
        }
    }
    notes
}

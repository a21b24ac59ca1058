//! Run configuration: one TOML or JSON document per run.
//!
//! Every section is optional and falls back to the study defaults. Unknown
//! keys are rejected with the path of the offending field. A resolved
//! config (defaults filled in) is what the CLI writes as its run manifest,
//! so a manifest loads back as a config.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::barycenter::{BarycenterOptions, PriorSet, WeightVector};
use crate::error::{Error, Result};
use crate::experiments::{true_model, Halfwidths, HedgeDesign, InstrumentTemplate, Level, SolverSpec, StudyConfig};
use crate::gauss::{GaussianLaw, SpdMatrix};
use crate::hedging::{Admissible, MarketConfig, ObligationKind};
use crate::models::{CrossCovariance, Family, ModelSpec, TRADING_DAYS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub master_seed: u64,
    pub market: MarketConfig,
    /// Model used for true-model hedges, pricing and prior generation.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub true_model: Option<ModelSpec>,
    pub prior: PriorConfig,
    pub schedule: ScheduleConfig,
    pub obligation: ObligationConfig,
    /// Defaults to the two put options struck at 120% and 110% of the
    /// initial index level.
    pub instruments: Vec<InstrumentTemplate>,
    pub perturbation: PerturbationConfig,
    pub solver: SolverConfig,
    pub simulation: SimulationConfig,
    pub experiment: ExperimentSection,
    pub output: OutputConfig,
    /// Written by the CLI into manifests; ignored on load.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            master_seed: 0,
            market: MarketConfig {
                r: 0.0,
                cargo_size: 1.0,
                s0: 50.0,
                s0_tilde: 45.0,
            },
            true_model: None,
            prior: PriorConfig::default(),
            schedule: ScheduleConfig::default(),
            obligation: ObligationConfig::default(),
            instruments: Vec::new(),
            perturbation: PerturbationConfig::default(),
            solver: SolverConfig::default(),
            simulation: SimulationConfig::default(),
            experiment: ExperimentSection::default(),
            output: OutputConfig::default(),
            provenance: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorConfig {
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub models: Vec<ModelSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<WeightVector>,
    /// Raw Gaussian laws, for the `barycenter` command only.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub laws: Vec<LawConfig>,
    /// Generate the prior by perturbing the true model at this level.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub level: Option<Level>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LawConfig {
    pub mean: Vec<f64>,
    /// Rows of the covariance matrix.
    pub cov: Vec<Vec<f64>>,
}

impl LawConfig {
    pub fn to_law(&self) -> Result<GaussianLaw> {
        let d = self.mean.len();
        if self.cov.len() != d || self.cov.iter().any(|r| r.len() != d) {
            return Err(Error::domain(format!("covariance must be {d}x{d}")));
        }
        let entries: Vec<f64> = self.cov.iter().flatten().copied().collect();
        GaussianLaw::level(&self.mean, SpdMatrix::from_row_slice(d, &entries)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    /// Horizon of single-row commands, in steps.
    pub horizon_steps: usize,
    pub averaging_days: usize,
    pub steps_per_year: u32,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            horizon_steps: 63,
            averaging_days: 21,
            steps_per_year: TRADING_DAYS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObligationConfig {
    pub kind: ObligationKind,
}

impl Default for ObligationConfig {
    fn default() -> Self {
        ObligationConfig {
            kind: ObligationKind::Average,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbationConfig {
    /// Models per prior set.
    pub m: usize,
    pub hh: f64,
    pub mh: f64,
    pub lh: f64,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        let h = Halfwidths::default();
        PerturbationConfig {
            m: crate::experiments::DEFAULT_PRIOR_SIZE,
            hh: h.hh,
            mh: h.mh,
            lh: h.lh,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// Barycenter of one-step kernels, simulated forward.
    #[default]
    Kernel,
    /// Barycenter of the horizon laws.
    Marginal,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub admissible: Admissible,
    pub lambda: f64,
    pub aggregation: Aggregation,
    pub barycenter: BarycenterOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub n_paths: usize,
    pub cross_covariance: CrossCovariance,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            n_paths: crate::experiments::DEFAULT_PATHS,
            cross_covariance: CrossCovariance::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub families: Vec<Family>,
    pub levels: Vec<Level>,
    pub horizons: Vec<usize>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            families: Family::ALL.to_vec(),
            levels: Level::STUDY.to_vec(),
            horizons: crate::experiments::DEFAULT_HORIZONS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<std::path::PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Provenance {
    pub command: String,
    pub version: String,
    /// Command-line overrides applied on top of the loaded document.
    pub overrides: Vec<String>,
    /// Conventions in force, for readers of the manifest.
    pub conventions: BTreeMap<String, String>,
}

fn config_err<E: std::fmt::Display>(err: serde_path_to_error::Error<E>) -> Error {
    let path = err.path().to_string();
    Error::config(
        if path.is_empty() { ".".into() } else { path },
        err.into_inner().to_string(),
    )
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::new(text);
        serde_path_to_error::deserialize(de).map_err(config_err)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let mut de = serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(&mut de).map_err(config_err)
    }

    /// Reads a `.toml` or `.json` document (by extension; other names are
    /// tried as TOML).
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json_str(&text),
            _ => Self::from_toml_str(&text),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// Fills defaults that depend on other fields.
    pub fn resolved(mut self) -> Self {
        if self.instruments.is_empty() {
            self.instruments = HedgeDesign::standard(self.market.s0_tilde).instruments;
        }
        self
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.schedule.steps_per_year as f64
    }

    pub fn design(&self) -> HedgeDesign {
        let instruments = if self.instruments.is_empty() {
            HedgeDesign::standard(self.market.s0_tilde).instruments
        } else {
            self.instruments.clone()
        };
        HedgeDesign {
            obligation: self.obligation.kind,
            averaging_days: self.schedule.averaging_days,
            instruments,
        }
    }

    pub fn halfwidths(&self) -> Halfwidths {
        Halfwidths {
            hh: self.perturbation.hh,
            mh: self.perturbation.mh,
            lh: self.perturbation.lh,
        }
    }

    pub fn solver_spec(&self) -> SolverSpec {
        SolverSpec {
            admissible: self.solver.admissible,
            lambda: self.solver.lambda,
            barycenter: self.solver.barycenter,
        }
    }

    /// The configured true model, or the study's GBM model.
    pub fn truth(&self) -> ModelSpec {
        self.true_model.unwrap_or_else(|| true_model(Family::Gbm))
    }

    /// True model for `family`: the configured one if it matches.
    pub fn truth_for(&self, family: Family) -> ModelSpec {
        match self.true_model {
            Some(m) if m.family() == family => m,
            _ => true_model(family),
        }
    }

    pub fn study(&self) -> StudyConfig {
        StudyConfig {
            master_seed: self.master_seed,
            models: self.experiment.families.iter().map(|&f| self.truth_for(f)).collect(),
            levels: self.experiment.levels.clone(),
            halfwidths: self.halfwidths(),
            prior_size: self.perturbation.m,
            weights: self.prior.weights.clone().filter(|_| self.prior.models.is_empty()),
            horizons: self.experiment.horizons.clone(),
            n_paths: self.simulation.n_paths,
            dt: self.dt(),
            mkt: self.market,
            design: self.design(),
            solver: self.solver_spec(),
            cross_covariance: self.simulation.cross_covariance,
        }
    }

    /// Explicit prior models, if any.
    pub fn explicit_prior(&self) -> Result<Option<PriorSet>> {
        if self.prior.models.is_empty() {
            return Ok(None);
        }
        let weights = match &self.prior.weights {
            Some(w) => w.clone(),
            None => WeightVector::uniform(self.prior.models.len())?,
        };
        PriorSet::new(self.prior.models.clone(), weights).map(Some)
    }

    /// Schema-level checks beyond what deserialization enforces. Errors
    /// name the offending field.
    pub fn validate(&self) -> Result<()> {
        self.market.validate().map_err(at("market"))?;
        if let Some(m) = &self.true_model {
            m.validate().map_err(at("true_model"))?;
        }
        if self.schedule.horizon_steps == 0 {
            return Err(Error::config("schedule.horizon_steps", "must be positive"));
        }
        if self.schedule.steps_per_year == 0 {
            return Err(Error::config("schedule.steps_per_year", "must be positive"));
        }
        self.design().validate().map_err(at("instruments"))?;
        if self.simulation.n_paths == 0 {
            return Err(Error::config("simulation.n_paths", "must be positive"));
        }
        if !(self.solver.lambda >= 0.0 && self.solver.lambda.is_finite()) {
            return Err(Error::config("solver.lambda", "must be nonnegative"));
        }
        let opts = self.solver.barycenter;
        if !(opts.tol > 0.0 && opts.tol.is_finite()) {
            return Err(Error::config("solver.barycenter.tol", "must be positive"));
        }
        if self.perturbation.m == 0 {
            return Err(Error::config("perturbation.m", "must be positive"));
        }
        for (name, h) in [
            ("hh", self.perturbation.hh),
            ("mh", self.perturbation.mh),
            ("lh", self.perturbation.lh),
        ] {
            if !(h >= 0.0 && h.is_finite()) {
                return Err(Error::config(format!("perturbation.{name}"), "must be nonnegative"));
            }
        }
        for (i, m) in self.prior.models.iter().enumerate() {
            m.validate().map_err(at(&format!("prior.models[{i}]")))?;
        }
        if !self.prior.models.is_empty() {
            self.explicit_prior().map_err(at("prior"))?;
        } else if let Some(w) = &self.prior.weights {
            if !self.prior.laws.is_empty() && w.len() != self.prior.laws.len() {
                return Err(Error::config(
                    "prior.weights",
                    format!("{} weights for {} laws", w.len(), self.prior.laws.len()),
                ));
            }
            if self.prior.laws.is_empty() && w.len() != self.perturbation.m {
                return Err(Error::config(
                    "prior.weights",
                    format!("{} weights for a prior of {}", w.len(), self.perturbation.m),
                ));
            }
        }
        for (i, law) in self.prior.laws.iter().enumerate() {
            law.to_law().map_err(at(&format!("prior.laws[{i}]")))?;
        }
        let ex = &self.experiment;
        if ex.families.is_empty() || ex.levels.is_empty() || ex.horizons.is_empty() {
            return Err(Error::config(
                "experiment",
                "families, levels and horizons must be nonempty",
            ));
        }
        if ex.horizons.contains(&0) {
            return Err(Error::config("experiment.horizons", "must be positive step counts"));
        }
        Ok(())
    }
}

fn at(path: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| Error::config(path, strip_domain(e))
}

fn strip_domain(e: Error) -> String {
    match e {
        Error::Domain(msg) => msg,
        other => other.to_string(),
    }
}

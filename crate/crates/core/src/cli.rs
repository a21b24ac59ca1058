//! Command-line front end. `main` only parses arguments and maps errors to
//! exit codes; everything else lives here so it can be tested in-process.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::barycenter::{
    aggregate_kernel, frechet_variance, gaussian_barycenter, marginal_barycenter, PriorSet, WeightVector,
};
use crate::config::{Aggregation, Format, Provenance, RunConfig};
use crate::error::{Error, Result};
use crate::experiments::{generate_prior_set, run_study, Level, StudyReport};
use crate::gauss::GaussianLaw;
use crate::hedging::{
    expected_profit_pct, ffa_forward, parity_check, price_instruments_mc, simulate_hedge_sample, solve_hedge,
    HedgeStrategy, Underlying,
};
use crate::models::{transition_kernel_with, AffineGaussianKernel, Family};
use crate::rng;

const HEDGE_SEED_LABEL: u64 = 0x0048_4544_4745;
const PRICE_SEED_LABEL: u64 = 0x0050_5249_4345;

#[derive(Debug, Parser)]
#[command(
    name = "freight-hedge",
    version,
    about = "Robust static hedging of freight-rate risk"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// TOML or JSON run configuration (defaults apply when omitted).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Overrides `master_seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Overrides `simulation.n_paths`.
    #[arg(long, global = true)]
    pub paths: Option<usize>,

    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Primary output file; a `.manifest.json` is written beside it.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,

    /// Validate and print the plan without simulating.
    #[arg(long, global = true)]
    pub dry_run: bool,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Aggregate the prior set and report the barycenter law.
    Barycenter,
    /// Fit the static hedge under the aggregate model.
    Hedge,
    /// Run the homogeneity study.
    Experiment {
        /// Keep only these families (repeatable).
        #[arg(long)]
        family: Vec<Family>,
    },
    /// Monte Carlo option prices and closed-form forwards under the true model.
    Price {
        /// Also report caplet/floorlet parity per instrument.
        #[arg(long)]
        parity: bool,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Barycenter => "barycenter",
            Command::Hedge => "hedge",
            Command::Experiment { .. } => "experiment",
            Command::Price { .. } => "price",
        }
    }
}

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } => 2,
        Error::Domain(_) | Error::IllConditioned { .. } | Error::NonConvergence { .. } => 3,
        Error::Io(_) => 4,
    }
}

/// Both renderings of a command's result.
struct Rendered {
    csv: String,
    json: String,
}

impl Rendered {
    fn new(csv: String, value: &impl Serialize) -> Self {
        Rendered {
            csv,
            json: serde_json::to_string_pretty(value).expect("report serializes") + "\n",
        }
    }
}

fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = header.join(",") + "\n";
    for r in rows {
        out += &r.join(",");
        out.push('\n');
    }
    out
}

fn num(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else {
        format!("{x}")
    }
}

/// Loads the config and applies command-line overrides.
pub fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(|e| match e {
            Error::Io(io) => Error::config(path.display().to_string(), io.to_string()),
            other => other,
        })?,
        None => RunConfig::default(),
    };
    let mut overrides = Vec::new();
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
        overrides.push(format!("master_seed={seed}"));
    }
    if let Some(n) = cli.paths {
        cfg.simulation.n_paths = n;
        overrides.push(format!("simulation.n_paths={n}"));
    }
    if let Command::Experiment { family } = &cli.command {
        if !family.is_empty() {
            cfg.experiment.families.retain(|f| family.contains(f));
            overrides.push(format!(
                "experiment.families={}",
                family.iter().map(|f| f.name()).collect::<Vec<_>>().join("+")
            ));
        }
    }
    if let Some(fmt) = cli.format {
        cfg.output.format = Some(fmt);
    }
    if let Some(out) = &cli.out {
        cfg.output.path = Some(out.clone());
    }
    cfg.provenance = Some(provenance(&cfg, cli.command.name(), overrides));
    let cfg = cfg.resolved();
    cfg.validate()?;
    Ok(cfg)
}

fn provenance(cfg: &RunConfig, command: &str, overrides: Vec<String>) -> Provenance {
    let mut c = std::collections::BTreeMap::new();
    let h = cfg.halfwidths();
    c.insert("halfwidths".into(), format!("hh={} mh={} lh={}", h.hh, h.mh, h.lh));
    c.insert(
        "perturbation".into(),
        "p*(1+U(-h,h)); rho+U(-h,h)*|rho| clamped to 0.99".into(),
    );
    c.insert("profit_pct".into(), "100*mean(Psi theta)/(D*s0)".into());
    c.insert(
        "error_metrics".into(),
        "residual of the aggregate hedge on fresh true-model paths, per unit D".into(),
    );
    c.insert(
        "settlement".into(),
        format!(
            "final {} steps; euro options at the horizon",
            cfg.schedule.averaging_days
        ),
    );
    c.insert(
        "seeds".into(),
        "row seed from (master, row index); prior seed from (master, family, level)".into(),
    );
    Provenance {
        command: command.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        overrides,
        conventions: c,
    }
}

/// Runs a parsed command line, writing the primary output to `stdout` when
/// no output path is configured. Progress and summaries go to `stderr`.
pub fn run(cli: &Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    let cfg = load_config(cli)?;
    if cli.dry_run {
        return dry_run(cli, &cfg, stdout);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::config("--threads", e.to_string()))?;
    let start = Instant::now();
    let (rendered, notes) = pool.install(|| dispatch(&cli.command, &cfg))?;
    let default_format = match cli.command {
        Command::Experiment { .. } => Format::Csv,
        _ => Format::Json,
    };
    let body = match cfg.output.format.unwrap_or(default_format) {
        Format::Csv => &rendered.csv,
        Format::Json => &rendered.json,
    };
    match &cfg.output.path {
        Some(path) => {
            std::fs::write(path, body)?;
            std::fs::write(manifest_path(path), cfg.to_json())?;
            writeln!(stderr, "wrote {}", path.display())?;
        }
        None => stdout.write_all(body.as_bytes())?,
    }
    for note in &notes {
        writeln!(stderr, "{note}")?;
    }
    writeln!(stderr, "finished in {:.1}s", start.elapsed().as_secs_f64())?;
    if let Some(first) = notes.iter().find(|n| n.starts_with("failed")) {
        return Err(Error::domain(format!("some rows failed ({first})")));
    }
    Ok(())
}

/// `<out>.manifest.json`.
pub fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn dry_run(cli: &Cli, cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let plan: Vec<serde_json::Value> = match cli.command {
        Command::Experiment { .. } => cfg
            .study()
            .plan()
            .iter()
            .map(|p| {
                json!({
                    "row": p.index,
                    "family": p.family(),
                    "level": p.level.label(),
                    "horizon_steps": p.horizon,
                    "seed": p.row_seed,
                })
            })
            .collect(),
        _ => Vec::new(),
    };
    let doc = json!({ "command": cli.command.name(), "config": cfg, "rows": plan });
    out.write_all((serde_json::to_string_pretty(&doc).expect("plan serializes") + "\n").as_bytes())?;
    Ok(())
}

fn dispatch(cmd: &Command, cfg: &RunConfig) -> Result<(Rendered, Vec<String>)> {
    match cmd {
        Command::Barycenter => cmd_barycenter(cfg).map(|r| (r, Vec::new())),
        Command::Hedge => cmd_hedge(cfg).map(|r| (r, Vec::new())),
        Command::Experiment { .. } => cmd_experiment(cfg),
        Command::Price { parity } => cmd_price(cfg, *parity).map(|r| (r, Vec::new())),
    }
}

/// The prior set of single-run commands: explicit models, a generated set
/// at `prior.level`, or the true model alone.
pub fn resolve_prior(cfg: &RunConfig) -> Result<PriorSet> {
    if let Some(prior) = cfg.explicit_prior()? {
        return Ok(prior);
    }
    let truth = cfg.truth();
    match cfg.prior.level {
        Some(level) => {
            let pert = cfg.study().perturbation(truth.family(), level);
            let prior = generate_prior_set(&truth, &pert)?;
            match &cfg.prior.weights {
                Some(w) => PriorSet::new(prior.models().to_vec(), w.clone()),
                None => Ok(prior),
            }
        }
        None => PriorSet::new(vec![truth], WeightVector::uniform(1)?),
    }
}

#[derive(Serialize)]
struct LawReport {
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
    coords: Vec<String>,
    frechet_variance: f64,
    iterations: usize,
    residual: f64,
    horizon_steps: Option<usize>,
}

fn law_report(law: &GaussianLaw, frechet: f64, iterations: usize, residual: f64, horizon: Option<usize>) -> LawReport {
    let d = law.dim();
    LawReport {
        mean: law.mean().iter().copied().collect(),
        cov: (0..d).map(|i| (0..d).map(|j| law.cov().get(i, j)).collect()).collect(),
        coords: law.coords().iter().map(|c| format!("{c:?}").to_lowercase()).collect(),
        frechet_variance: frechet,
        iterations,
        residual,
        horizon_steps: horizon,
    }
}

fn cmd_barycenter(cfg: &RunConfig) -> Result<Rendered> {
    let opts = cfg.solver.barycenter;
    let report = if !cfg.prior.laws.is_empty() {
        let laws = cfg.prior.laws.iter().map(|l| l.to_law()).collect::<Result<Vec<_>>>()?;
        let weights = match &cfg.prior.weights {
            Some(w) => w.clone(),
            None => WeightVector::uniform(laws.len())?,
        };
        let b = gaussian_barycenter(&laws, &weights, &opts)?;
        law_report(&b.law, b.frechet_variance, b.iterations, b.residual, None)
    } else {
        let prior = resolve_prior(cfg)?;
        let state = cfg.market.initial_state();
        let horizon = cfg.schedule.horizon_steps;
        let tau = horizon as f64 * cfg.dt();
        let form = cfg.simulation.cross_covariance;
        match cfg.solver.aggregation {
            Aggregation::Marginal => {
                let b = marginal_barycenter(&prior, state, tau, form, &opts)?;
                law_report(&b.law, b.frechet_variance, b.iterations, b.residual, Some(horizon))
            }
            Aggregation::Kernel => {
                let agg = aggregate_kernel(&prior, cfg.dt(), form, &opts)?;
                let law = agg.kernel.law_after(state, horizon)?;
                let laws = prior.horizon_laws(state, tau, form)?;
                let fv = frechet_variance(&law, &laws, prior.weights())?;
                law_report(&law, fv, agg.noise_iterations, agg.noise_residual, Some(horizon))
            }
        }
    };
    let mut rows: Vec<Vec<String>> = report
        .mean
        .iter()
        .enumerate()
        .map(|(i, m)| vec![format!("mean[{i}]"), num(*m)])
        .collect();
    for (i, row) in report.cov.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            rows.push(vec![format!("cov[{i}][{j}]"), num(*v)]);
        }
    }
    rows.push(vec!["frechet_variance".into(), num(report.frechet_variance)]);
    rows.push(vec!["iterations".into(), report.iterations.to_string()]);
    rows.push(vec!["residual".into(), num(report.residual)]);
    Ok(Rendered::new(table(&["field", "value"], &rows), &report))
}

/// Aggregate one-step kernel of the resolved prior.
fn aggregate_for(cfg: &RunConfig, prior: &PriorSet) -> Result<(AffineGaussianKernel, usize)> {
    if cfg.solver.aggregation == Aggregation::Marginal {
        return Err(Error::config(
            "solver.aggregation",
            "marginal aggregation has no path law; it is available to `barycenter` only",
        ));
    }
    let agg = aggregate_kernel(prior, cfg.dt(), cfg.simulation.cross_covariance, &cfg.solver.barycenter)?;
    Ok((agg.kernel, agg.noise_iterations))
}

#[derive(Serialize)]
struct HedgeReport {
    family: Family,
    prior_size: usize,
    level: Option<&'static str>,
    horizon_steps: usize,
    n_paths: usize,
    seed: u64,
    theta_pct: Vec<f64>,
    theta_normalized_pct: Vec<f64>,
    expected_loss: f64,
    profit_pct: f64,
    barycenter_iterations: usize,
}

fn cmd_hedge(cfg: &RunConfig) -> Result<Rendered> {
    let prior = resolve_prior(cfg)?;
    let (kernel, iterations) = aggregate_for(cfg, &prior)?;
    let horizon = cfg.schedule.horizon_steps;
    let design = cfg.design();
    let seed = rng::derive_seed(cfg.master_seed, &[HEDGE_SEED_LABEL]);
    let sample = simulate_hedge_sample(
        &kernel,
        &cfg.market,
        &design.obligation(horizon)?,
        &design.instruments(horizon)?,
        cfg.simulation.n_paths,
        seed,
    )?;
    let sol = solve_hedge(&sample, cfg.solver.admissible, &cfg.solver_spec().regularization()?)?;
    let report = HedgeReport {
        family: prior.family(),
        prior_size: prior.models().len(),
        level: cfg.prior.level.map(Level::label),
        horizon_steps: horizon,
        n_paths: cfg.simulation.n_paths,
        seed,
        theta_pct: sol.strategy.reported_pct(),
        theta_normalized_pct: sol.strategy.normalized_pct(),
        expected_loss: sol.expected_loss,
        profit_pct: expected_profit_pct(&sample, &sol.strategy.theta, &cfg.market),
        barycenter_iterations: iterations,
    };
    Ok(Rendered::new(hedge_csv(&report, &sol.strategy), &report))
}

fn hedge_csv(r: &HedgeReport, strategy: &HedgeStrategy) -> String {
    let k = strategy.theta.len();
    let mut header: Vec<String> = (1..=k).map(|j| format!("theta{j}_pct")).collect();
    header.extend((1..=k).map(|j| format!("theta{j}_normalized_pct")));
    header.extend(["expected_loss", "profit_pct", "horizon_steps", "n_paths", "seed"].map(String::from));
    let mut row: Vec<String> = r
        .theta_pct
        .iter()
        .chain(&r.theta_normalized_pct)
        .map(|v| num(*v))
        .collect();
    row.extend([
        num(r.expected_loss),
        num(r.profit_pct),
        r.horizon_steps.to_string(),
        r.n_paths.to_string(),
        r.seed.to_string(),
    ]);
    table(&header.iter().map(String::as_str).collect::<Vec<_>>(), &[row])
}

fn cmd_experiment(cfg: &RunConfig) -> Result<(Rendered, Vec<String>)> {
    let study = cfg.study();
    let report: StudyReport = run_study(&study, |_| true)?;
    let mut notes: Vec<String> = report.diagnostics.iter().map(|d| format!("note: {d}")).collect();
    notes.extend(report.failures.iter().map(|f| format!("failed: {f}")));
    Ok((Rendered::new(report.to_csv(), &report), notes))
}

#[derive(Serialize)]
struct PriceLine {
    item: String,
    strike: Option<f64>,
    value: f64,
    std_error: Option<f64>,
}

fn cmd_price(cfg: &RunConfig, parity: bool) -> Result<Rendered> {
    let truth = cfg.truth();
    let kernel = transition_kernel_with(&truth, cfg.dt(), cfg.simulation.cross_covariance)?;
    let horizon = cfg.schedule.horizon_steps;
    let design = cfg.design();
    let instruments = design.instruments(horizon)?;
    let seed = rng::derive_seed(cfg.master_seed, &[PRICE_SEED_LABEL]);
    let n = cfg.simulation.n_paths;
    let state = cfg.market.initial_state();

    let mut lines = Vec::new();
    let window = design.obligation(horizon)?.schedule;
    let dates: Vec<f64> = window.dates().iter().map(|&d| d as f64 * cfg.dt()).collect();
    for (name, u) in [
        ("ffa_forward_spot", Underlying::Spot),
        ("ffa_forward_index", Underlying::Index),
    ] {
        let f = ffa_forward(&truth, state, &dates, 0.0, u)?;
        lines.push(PriceLine {
            item: name.into(),
            strike: None,
            value: f,
            std_error: None,
        });
    }
    let prices = price_instruments_mc(&kernel, &cfg.market, &instruments, n, seed)?;
    for (j, (inst, p)) in instruments.iter().zip(&prices).enumerate() {
        let kind = serde_json::to_value(inst.kind).expect("serializes");
        let side = serde_json::to_value(inst.side).expect("serializes");
        lines.push(PriceLine {
            item: format!(
                "instrument{}_{}_{}",
                j + 1,
                kind.as_str().unwrap_or(""),
                side.as_str().unwrap_or("")
            ),
            strike: Some(inst.strike),
            value: p.price,
            std_error: Some(p.std_error),
        });
    }
    if parity {
        for (j, inst) in instruments.iter().enumerate() {
            let pc = parity_check(&kernel, &cfg.market, inst.kind, inst.strike, &inst.schedule, n, seed)?;
            let tag = format!("parity{}", j + 1);
            let k = Some(inst.strike);
            lines.push(PriceLine {
                item: format!("{tag}_caplet"),
                strike: k,
                value: pc.caplet.price,
                std_error: Some(pc.caplet.std_error),
            });
            lines.push(PriceLine {
                item: format!("{tag}_floorlet"),
                strike: k,
                value: pc.floorlet.price,
                std_error: Some(pc.floorlet.std_error),
            });
            lines.push(PriceLine {
                item: format!("{tag}_difference"),
                strike: k,
                value: pc.difference.price,
                std_error: Some(pc.difference.std_error),
            });
            lines.push(PriceLine {
                item: format!("{tag}_forward_value"),
                strike: k,
                value: pc.forward_value,
                std_error: None,
            });
            lines.push(PriceLine {
                item: format!("{tag}_z_score"),
                strike: k,
                value: pc.z_score,
                std_error: None,
            });
        }
    }
    let rows: Vec<Vec<String>> = lines
        .iter()
        .map(|l| {
            vec![
                l.item.clone(),
                l.strike.map(num).unwrap_or_default(),
                num(l.value),
                l.std_error.map(num).unwrap_or_default(),
            ]
        })
        .collect();
    let doc = json!({ "horizon_steps": horizon, "n_paths": n, "seed": seed, "model": truth, "lines": lines });
    Ok(Rendered::new(
        table(&["item", "strike", "value", "std_error"], &rows),
        &doc,
    ))
}

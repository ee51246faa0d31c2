//! Command-line front end. Data goes to files or standard output, all
//! diagnostics to standard error. Exit status: 0 success, 1 computation
//! error, 2 usage error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::criteria::{self, CriterionKind, EfficiencyMode, EfficiencyReport};
use crate::error::{Error, Result};
use crate::io;
use crate::linalg;
use crate::model::{Dataset, ModelSpec, NoiseModel};
use crate::nls::{self, Ellipse, FitResult, GridMode};
use crate::region::DesignRegion;
use crate::search::{self, DesignOptions, DesignOutcome};
use crate::sensitivity::{self, ResidualMode};
use crate::simulation::{self, PlanFile, SimulationPlan, StartStrategy};
use crate::zoo;

pub const EXIT_OK: i32 = 0;
pub const EXIT_COMPUTATION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

pub const DEFAULT_SIMS: usize = 2000;
pub const DEFAULT_SEED: u64 = 20_240_101;

#[derive(Debug, Parser)]
#[command(name = "optidesign", version, about = "Local and profile-based D-optimal design for nonlinear regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Least-squares fit; writes estimates, standard errors and correlations as JSON.
    Fit(FitArgs),
    /// Local and profile-based sensitivities as CSV, metadata as JSON.
    Sens(SensArgs),
    /// Initial design at a parameter guess (zero residuals).
    DesignInit(DesignInitArgs),
    /// One additional run for an existing dataset.
    DesignSeq(DesignSeqArgs),
    /// D-efficiency of a D design relative to a D_P design.
    Efficiency(EfficiencyArgs),
    /// Monte-Carlo evaluation of a new design point.
    Simulate(SimulateArgs),
    /// Sum-of-squares grid for contour plots (2-parameter models).
    Contour(ContourArgs),
}

/// A parsed comma-separated or `lo:hi:n` list; a newtype so clap treats
/// it as one value.
#[derive(Debug, Clone, PartialEq)]
pub struct Values(pub Vec<f64>);

fn parse_list(s: &str) -> std::result::Result<Values, String> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| format!("`{v}` is not a number")))
        .collect::<std::result::Result<_, _>>()
        .map(Values)
}

fn parse_region(s: &str) -> std::result::Result<DesignRegion, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_criterion(s: &str) -> std::result::Result<CriterionKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// `lo:hi:n`.
fn parse_grid(s: &str) -> std::result::Result<Values, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [lo, hi, n] = parts[..] else {
        return Err(format!("grid `{s}`: expected lo:hi:n"));
    };
    let lo: f64 = lo.parse().map_err(|_| format!("grid `{s}`: bad lower bound"))?;
    let hi: f64 = hi.parse().map_err(|_| format!("grid `{s}`: bad upper bound"))?;
    let n: usize = n.parse().map_err(|_| format!("grid `{s}`: bad point count"))?;
    if n < 2 || !(lo < hi) {
        return Err(format!("grid `{s}`: need lo < hi and n >= 2"));
    }
    Ok(Values((0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()))
}

#[derive(Debug, Args)]
pub struct ModelArg {
    /// Zoo model name: michaelis-menten or hougen-watson.
    #[arg(long)]
    pub model: String,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub model: ModelArg,
    /// CSV with columns x1..xm,y.
    #[arg(long)]
    pub data: PathBuf,
    /// Starting values; defaults to the zoo's.
    #[arg(long, value_parser = parse_list)]
    pub theta0: Option<Values>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SensArgs {
    #[command(flatten)]
    pub model: ModelArg,
    #[arg(long)]
    pub data: PathBuf,
    /// Evaluation point; defaults to the least-squares estimate.
    #[arg(long, value_parser = parse_list)]
    pub theta: Option<Values>,
    /// Starting values for the fit when --theta is absent.
    #[arg(long, value_parser = parse_list)]
    pub theta0: Option<Values>,
    /// observed or zero; observed needs responses.
    #[arg(long, default_value = "observed")]
    pub residual_mode: String,
    /// CSV output `row,v_1..v_k,p_1..p_k`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON metadata output.
    #[arg(long)]
    pub meta: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[arg(long, value_parser = parse_criterion)]
    pub criterion: CriterionKind,
    /// Box `lo1:hi1,lo2:hi2,...`; defaults to the model's region.
    #[arg(long, value_parser = parse_region)]
    pub region: Option<DesignRegion>,
    /// Grid points per dimension.
    #[arg(long, default_value_t = 50)]
    pub grid: usize,
    /// Skip the interior grid re-check.
    #[arg(long)]
    pub no_recheck: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DesignInitArgs {
    #[command(flatten)]
    pub model: ModelArg,
    #[arg(long, value_parser = parse_list)]
    pub theta0: Values,
    /// Number of distinct support points; defaults to the parameter count.
    #[arg(long)]
    pub support: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub replicates: usize,
    #[command(flatten)]
    pub search: SearchArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SeqStart {
    /// Full grid over the region.
    Grid,
    /// Region corners plus the existing design points.
    Candidates,
}

#[derive(Debug, Args)]
pub struct DesignSeqArgs {
    #[command(flatten)]
    pub model: ModelArg,
    /// Existing runs; defaults to the model's bundled fixture.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_parser = parse_list)]
    pub theta0: Option<Values>,
    #[arg(long, value_enum, default_value = "grid")]
    pub start: SeqStart,
    #[command(flatten)]
    pub search: SearchArgs,
}

#[derive(Debug, Args)]
pub struct EfficiencyArgs {
    #[command(flatten)]
    pub model: ModelArg,
    /// DesignOutcome JSON of the D design.
    #[arg(long)]
    pub d_design: PathBuf,
    /// DesignOutcome JSON of the D_P design.
    #[arg(long)]
    pub dp_design: PathBuf,
    /// Existing runs for sequential designs.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// literal or same-matrix; both are always reported.
    #[arg(long, default_value = "literal")]
    pub mode: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub plan: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub sims: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-simulation CSV `sim,corr_..,se_..,converged`.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ContourArgs {
    #[command(flatten)]
    pub model: ModelArg,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_parser = parse_list)]
    pub theta0: Option<Values>,
    /// theta1 grid `lo:hi:n`.
    #[arg(long, value_parser = parse_grid)]
    pub grid1: Values,
    /// theta2 grid `lo:hi:n`.
    #[arg(long, value_parser = parse_grid)]
    pub grid2: Values,
    /// unconditional-pairs or conditional-trace.
    #[arg(long, default_value = "unconditional-pairs")]
    pub mode: String,
    /// Probability level of the likelihood region and ellipse.
    #[arg(long, default_value_t = 0.9)]
    pub level: f64,
    /// CSV `theta1,theta2,sse`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON with the region level and confidence ellipse.
    #[arg(long)]
    pub meta: Option<PathBuf>,
}

/// Parses arguments, runs the command and returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                EXIT_USAGE
            } else {
                EXIT_COMPUTATION
            }
        }
    }
}

pub fn execute(command: &Command) -> Result<()> {
    match command {
        Command::Fit(a) => fit(a),
        Command::Sens(a) => sens(a),
        Command::DesignInit(a) => design_init(a),
        Command::DesignSeq(a) => design_seq(a),
        Command::Efficiency(a) => efficiency(a),
        Command::Simulate(a) => simulate(a),
        Command::Contour(a) => contour(a),
    }
}

fn emit(path: Option<&Path>, contents: &str) -> Result<()> {
    match path {
        Some(p) => io::write_file(p, contents),
        None => {
            use std::io::Write;
            let mut out = std::io::stdout().lock();
            out.write_all(contents.as_bytes())
                .and_then(|()| out.flush())
                .map_err(|source| Error::Io {
                    path: PathBuf::from("<stdout>"),
                    source,
                })
        }
    }
}

fn warn(message: &str) {
    eprintln!("warning: {message}");
}

fn fit_data(model_name: &str, model: &ModelSpec, data: &Dataset, theta0: Option<&Vec<f64>>) -> Result<FitResult> {
    let start = match theta0 {
        Some(t) => t.clone(),
        None => zoo::default_start(model_name)?,
    };
    let fit = nls::fit_ls(model, data, &start)?;
    if fit.precision.is_none() {
        warn("V'V is singular at the estimate; covariance unavailable");
    }
    Ok(fit)
}

fn fit(a: &FitArgs) -> Result<()> {
    let model = zoo::lookup_model(&a.model.model)?;
    let data = Dataset::from_csv_path(&a.data)?;
    let fit = fit_data(&a.model.model, &model, &data, a.theta0.as_ref().map(|v| &v.0))?;
    emit(a.out.as_deref(), &io::to_json_string(&fit.summary())?)
}

fn sens(a: &SensArgs) -> Result<()> {
    let model = zoo::lookup_model(&a.model.model)?;
    let mode: ResidualMode = a.residual_mode.parse()?;
    let data = Dataset::from_csv_path(&a.data)?;
    let theta = match &a.theta {
        Some(t) => t.0.clone(),
        None => fit_data(&a.model.model, &model, &data, a.theta0.as_ref().map(|v| &v.0))?.theta_hat,
    };
    let bundle = sensitivity::profile_matrix(&model, &data, &theta, mode)?;
    for w in &bundle.warnings {
        warn(w);
    }
    emit(a.out.as_deref(), &bundle.to_csv())?;
    if let Some(meta) = &a.meta {
        io::write_file(meta, &io::to_json_string(&bundle.metadata())?)?;
    }
    Ok(())
}

fn design_options(s: &SearchArgs) -> DesignOptions {
    DesignOptions {
        grid_points: s.grid,
        recheck: !s.no_recheck,
        ..DesignOptions::default()
    }
}

fn resolve_region(model: &ModelSpec, region: Option<&DesignRegion>) -> Result<DesignRegion> {
    region
        .or(model.bounds())
        .cloned()
        .ok_or_else(|| Error::argument("--region is required for models without declared bounds"))
}

fn design_init(a: &DesignInitArgs) -> Result<()> {
    let model = zoo::lookup_model(&a.model.model)?;
    let region = resolve_region(&model, a.search.region.as_ref())?;
    let n_support = a.support.unwrap_or(model.n_params());
    if n_support < model.n_params() {
        warn("fewer support points than parameters: every design is singular");
    }
    let opts = DesignOptions {
        replicates: a.replicates,
        ..design_options(&a.search)
    };
    let outcome = search::design_initial(&model, &a.theta0.0, n_support, &region, a.search.criterion, &opts)?;
    emit(a.search.out.as_deref(), &io::to_json_string(&outcome)?)
}

/// Existing data and its validated fit: user CSV or the zoo fixture.
fn base_data(model_name: &str, model: &ModelSpec, data: Option<&PathBuf>, theta0: Option<&Vec<f64>>) -> Result<(Dataset, FitResult)> {
    match data {
        Some(path) => {
            let data = Dataset::from_csv_path(path)?;
            let fit = fit_data(model_name, model, &data, theta0)?;
            Ok((data, fit))
        }
        None => {
            let entry = zoo::lookup(model_name)?;
            let (d, f) = entry.require_fixture()?;
            match theta0 {
                Some(t) => Ok((d.clone(), nls::fit_ls(model, d, t)?)),
                None => Ok((d.clone(), f.clone())),
            }
        }
    }
}

fn design_seq(a: &DesignSeqArgs) -> Result<()> {
    let model = zoo::lookup_model(&a.model.model)?;
    let region = resolve_region(&model, a.search.region.as_ref())?;
    let (data, fit) = base_data(&a.model.model, &model, a.data.as_ref(), a.theta0.as_ref().map(|v| &v.0))?;
    let mut opts = design_options(&a.search);
    if a.start == SeqStart::Candidates {
        let mut c = search::corners(&region);
        c.extend(data.rows().filter(|r| region.contains(r)).map(<[f64]>::to_vec));
        opts.candidates = Some(c);
    }
    let outcome = search::design_sequential(&model, &fit, &data, &region, a.search.criterion, &opts)?;
    emit(a.search.out.as_deref(), &io::to_json_string(&outcome)?)
}

/// Both interpretations of the efficiency ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyOutput {
    pub selected: EfficiencyMode,
    pub literal: EfficiencyReport,
    pub same_matrix: EfficiencyReport,
}

fn read_outcome(path: &Path) -> Result<DesignOutcome> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// Rows of the design an outcome describes: replicated support points, or
/// the existing runs plus the new point.
fn outcome_design(outcome: &DesignOutcome, base: Option<&Dataset>) -> Result<Dataset> {
    match base {
        Some(d) => {
            let x = outcome
                .support_points
                .first()
                .ok_or_else(|| Error::argument("design outcome has no points"))?;
            Dataset::from_flat(d.m(), [d.rows().flatten().copied().collect::<Vec<_>>(), x.clone()].concat(), None)
        }
        None => {
            let rows: Vec<Vec<f64>> = outcome
                .support_points
                .iter()
                .flat_map(|p| std::iter::repeat_n(p.clone(), outcome.replicates))
                .collect();
            Dataset::design(&rows)
        }
    }
}

pub fn efficiency_from_outcomes(
    model: &ModelSpec,
    d: &DesignOutcome,
    dp: &DesignOutcome,
    base: Option<(&Dataset, &FitResult)>,
) -> Result<EfficiencyOutput> {
    if d.criterion_kind != CriterionKind::D || dp.criterion_kind != CriterionKind::Dp {
        return Err(Error::argument("expected a D design and a D_P design"));
    }
    let k = model.n_params();
    let d_rows = outcome_design(d, base.map(|b| b.0))?;
    let dp_rows = outcome_design(dp, base.map(|b| b.0))?;
    let v_d = model.jacobian(&d_rows, &d.eval_point)?;
    let v_dp = model.jacobian(&dp_rows, &dp.eval_point)?;
    let num = linalg::log_det_gram(&v_d);
    let den_literal = match base {
        Some((data, fit)) => search::SequentialBase::new(model, fit, data)?.augmented(&dp.support_points[0], CriterionKind::Dp)?,
        None => linalg::log_det_gram(&sensitivity::profile_matrix(model, &dp_rows, &dp.eval_point, ResidualMode::Zero)?.p),
    };
    let den_same = linalg::log_det_gram(&v_dp);
    Ok(EfficiencyOutput {
        selected: EfficiencyMode::Literal,
        literal: criteria::d_efficiency(num, den_literal, k, EfficiencyMode::Literal)?,
        same_matrix: criteria::d_efficiency(num, den_same, k, EfficiencyMode::SameMatrix)?,
    })
}

fn efficiency(a: &EfficiencyArgs) -> Result<()> {
    let model = zoo::lookup_model(&a.model.model)?;
    let selected: EfficiencyMode = a.mode.parse()?;
    let d = read_outcome(&a.d_design)?;
    let dp = read_outcome(&a.dp_design)?;
    let base = match &a.data {
        Some(path) => {
            let data = Dataset::from_csv_path(path)?;
            let fit = fit_data(&a.model.model, &model, &data, Some(&d.eval_point))?;
            Some((data, fit))
        }
        None => None,
    };
    let mut out = efficiency_from_outcomes(&model, &d, &dp, base.as_ref().map(|(d, f)| (d, f)))?;
    out.selected = selected;
    emit(a.out.as_deref(), &io::to_json_string(&out)?)
}

pub fn plan_from_file(plan: &PlanFile, origin: &Path) -> Result<SimulationPlan> {
    let model = zoo::lookup_model(&plan.model)?;
    let (data, fit) = match &plan.data {
        Some(p) => {
            let p = if p.is_relative() {
                origin.parent().unwrap_or(Path::new(".")).join(p)
            } else {
                p.clone()
            };
            base_data(&plan.model, &model, Some(&p), plan.theta0.as_ref())?
        }
        None => base_data(&plan.model, &model, None, plan.theta0.as_ref())?,
    };
    Ok(SimulationPlan {
        model,
        base_dataset: data,
        base_fit: fit,
        new_point: plan.new_point.clone(),
        n_sims: plan.n_sims.unwrap_or(DEFAULT_SIMS),
        noise: plan.sigma.map(NoiseModel::new).transpose()?,
        seed: plan.seed.unwrap_or(DEFAULT_SEED),
        start: plan
            .refit_start
            .clone()
            .map_or(StartStrategy::BaseEstimate, StartStrategy::Fixed),
    })
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.plan).map_err(|source| Error::Io {
        path: a.plan.clone(),
        source,
    })?;
    let file: PlanFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: a.plan.clone(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let mut plan = plan_from_file(&file, &a.plan)?;
    if let Some(seed) = a.seed {
        plan.seed = seed;
    }
    if let Some(n) = a.sims {
        plan.n_sims = n;
    }
    let report = simulation::run_simulation(&plan)?;
    if report.n_failed > 0 {
        warn(&format!("{} of {} refits failed", report.n_failed, plan.n_sims));
    }
    if let Some(csv) = &a.csv {
        io::write_file(csv, &report.to_csv())?;
    }
    emit(a.out.as_deref(), &io::to_json_string(&report)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContourMeta {
    pub mode: GridMode,
    pub level: f64,
    pub theta_hat: Vec<f64>,
    pub sse_hat: f64,
    /// SSE level of the joint likelihood region.
    pub sse_level: f64,
    pub ellipse: Option<Ellipse>,
}

fn contour(a: &ContourArgs) -> Result<()> {
    let model = zoo::lookup_model(&a.model.model)?;
    let mode = match a.mode.as_str() {
        "unconditional-pairs" => GridMode::UnconditionalPairs,
        "conditional-trace" => GridMode::ConditionalTrace,
        other => {
            return Err(Error::argument(format!(
                "mode `{other}`: expected unconditional-pairs or conditional-trace"
            )))
        }
    };
    let data = Dataset::from_csv_path(&a.data)?;
    let fit = fit_data(&a.model.model, &model, &data, a.theta0.as_ref().map(|v| &v.0))?;
    let grid = nls::sse_grid(&model, &data, &a.grid1.0, &a.grid2.0, mode, &fit.theta_hat)?;
    emit(a.out.as_deref(), &grid.to_csv())?;
    if let Some(meta) = &a.meta {
        let out = ContourMeta {
            mode,
            level: a.level,
            theta_hat: fit.theta_hat.clone(),
            sse_hat: fit.sse,
            sse_level: nls::likelihood_region_level(fit.sse, data.n(), model.n_params(), a.level)?,
            ellipse: nls::confidence_ellipse(&fit, a.level).ok(),
        };
        io::write_file(meta, &io::to_json_string(&out)?)?;
    }
    Ok(())
}

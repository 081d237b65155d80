//! Command-line front end. The `honest-otr` binary is a thin wrapper around
//! [`run`].

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::bootstrap::{group_test, BootstrapContext, GroupTestResult, GroupTestSpec};
use crate::data::{
    load_csv, modify_response, standardize, Coefficient, ColumnSchema, CovariateSelector, Dataset, ModifiedResponse,
    ResponseMode,
};
use crate::debias::{infer, theta_from_smoother, Eta, FittedSmoother};
use crate::error::{Error, Result};
use crate::estimator::{fit, fit_cv, initial_beta, CvMode, CvOutcome, EstimatorConfig, FitResult, StepScale, ThresholdConvention};
use crate::observational::{cross_validate_propensity, fit_propensity, PropensityConfig, OVERLAP_FLOOR};
use crate::simulation::{
    report_stem, run_monte_carlo, value_estimate, write_report_csv, IndexRule, InferenceSettings, MonteCarloConfig,
    ScenarioSpec,
};

/// Environment variable that overrides `--seed`.
pub const SEED_ENV: &str = "HONEST_OTR_SEED";

#[derive(Debug, Parser)]
#[command(
    name = "honest-otr",
    version,
    about = "Sparse index-model treatment regimes with debiased inference",
    after_help = "Covariate positions in --group are 1-based columns of the covariate matrix; \
position k is coefficient k, and position 1 carries the fixed unit coefficient so it cannot be tested.\n\
HONEST_OTR_SEED, when set, overrides --seed."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the penalized profiled estimator.
    Fit(FitArgs),
    /// Debiased estimates with marginal confidence intervals.
    Infer(InferArgs),
    /// Multiplier-bootstrap test that a group of coefficients is zero.
    TestGroup(TestGroupArgs),
    /// Monte Carlo campaign on a simulation design.
    Simulate(SimulateArgs),
    /// Value of the estimated (or a given) index rule on the data.
    Value(ValueArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KernelChoice {
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ThresholdArg {
    Raw,
    Scaled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StepScaleArg {
    Curvature,
    Absolute,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CvModeArg {
    OutOfFold,
    InSample,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Headed CSV input.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "y")]
    pub outcome: String,
    #[arg(long, default_value = "a")]
    pub treatment: String,
    /// Comma list, `prefix*`, or empty for every remaining column.
    #[arg(long, default_value = "")]
    pub covariates: String,
    /// Center and scale covariates to unit sample variance.
    #[arg(long)]
    pub standardize: bool,
    /// Append pairwise products of the covariates.
    #[arg(long)]
    pub interactions: bool,
    /// Estimate the propensity by L1 logistic regression and use 4(A - pi)Y.
    #[arg(long)]
    pub observational: bool,
    /// Propensity penalty (chosen by 5-fold CV when omitted).
    #[arg(long)]
    pub propensity_lambda: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct EstimatorArgs {
    /// Fixed penalty; skips cross-validation.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Comma-separated penalty grid for cross-validation.
    #[arg(long, value_delimiter = ',')]
    pub lambda_grid: Option<Vec<f64>>,
    /// L1 radius of the coefficient ball.
    #[arg(long, default_value_t = 10.0)]
    pub rho: f64,
    /// Initial step size (a multiple of the score curvature by default).
    #[arg(long, default_value_t = 0.5)]
    pub gamma0: f64,
    #[arg(long, value_enum, default_value_t = StepScaleArg::Curvature)]
    pub step_scale: StepScaleArg,
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 0.01)]
    pub rel_tol: f64,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, value_enum, default_value_t = CvModeArg::OutOfFold)]
    pub cv_mode: CvModeArg,
    #[arg(long, value_enum, default_value_t = ThresholdArg::Raw)]
    pub threshold_convention: ThresholdArg,
    /// Smoothing kernel (only gaussian is available).
    #[arg(long, value_enum, default_value_t = KernelChoice::Gaussian)]
    pub kernel: KernelChoice,
    #[arg(long, default_value_t = 2024)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Write here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    /// Dantzig tolerance as a multiple of the bandwidth.
    #[arg(long, default_value_t = 25.0)]
    pub eta: f64,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct TestGroupArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    /// Comma-separated 1-based covariate positions; repeat for several groups.
    #[arg(long, required = true, value_parser = parse_group)]
    pub group: Vec<Vec<usize>>,
    #[arg(long, default_value_t = 25.0)]
    pub eta: f64,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Bootstrap draws.
    #[arg(long, default_value_t = 1000)]
    pub draws: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ValueArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    /// Evaluate this full coefficient vector instead of fitting one.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub beta: Option<Vec<f64>>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// gaussian_iid, ar_discrete or uniform_nonindex.
    #[arg(long, default_value = "gaussian_iid")]
    pub design: String,
    #[arg(long, default_value_t = 300)]
    pub n: usize,
    #[arg(long, default_value_t = 200)]
    pub p: usize,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    /// Logistic treatment assignment and an estimated propensity.
    #[arg(long)]
    pub observational: bool,
    #[arg(long)]
    pub propensity_lambda: Option<f64>,
    /// Run debiasing and group tests for every replicate.
    #[arg(long)]
    pub inference: bool,
    /// Comma-separated eta multiples.
    #[arg(long, value_delimiter = ',', default_value = "25")]
    pub eta: Vec<f64>,
    /// Groups of 1-based covariate positions; repeat for several groups.
    #[arg(long, value_parser = parse_group, default_values = ["6,7,8,9", "2,6,7,8,9"])]
    pub group: Vec<Vec<usize>>,
    /// Positions whose interval coverage is recorded.
    #[arg(long, value_delimiter = ',', default_value = "2")]
    pub coverage: Vec<usize>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 500)]
    pub draws: usize,
    /// Fresh sample size for the match ratio (0 skips value and match ratio).
    #[arg(long, default_value_t = 10_000)]
    pub eval_n: usize,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    /// Also write `<design>_n<n>_p<p>_seed<seed>.{json,csv,meta.json}` here.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

fn parse_group(s: &str) -> std::result::Result<Vec<usize>, String> {
    s.split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|e| format!("`{t}`: {e}")))
        .collect()
}

fn seed_override(seed: u64) -> Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("{SEED_ENV} must be an unsigned integer, got `{v}`"))),
        Err(_) => Ok(seed),
    }
}

impl EstimatorArgs {
    pub fn config(&self) -> Result<EstimatorConfig> {
        let cfg = EstimatorConfig {
            lambda: self.lambda.unwrap_or(EstimatorConfig::default().lambda),
            rho: self.rho,
            gamma0: self.gamma0,
            step_scale: match self.step_scale {
                StepScaleArg::Curvature => StepScale::Curvature,
                StepScaleArg::Absolute => StepScale::Absolute,
            },
            max_iter: self.max_iter,
            rel_tol: self.rel_tol,
            cv_folds: self.folds,
            cv_mode: match self.cv_mode {
                CvModeArg::OutOfFold => CvMode::OutOfFold,
                CvModeArg::InSample => CvMode::InSample,
            },
            seed: seed_override(self.seed)?,
            threshold: match self.threshold_convention {
                ThresholdArg::Raw => ThresholdConvention::Raw,
                ThresholdArg::Scaled => ThresholdConvention::Scaled,
            },
            ..EstimatorConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Serialize)]
struct PropensityReport {
    lambda: f64,
    intercept: f64,
    slopes: Vec<f64>,
    min_overlap: f64,
    poor_overlap: bool,
}

struct Fitted {
    data: Dataset,
    ytilde: ModifiedResponse,
    fit: FitResult,
    cv: Option<CvOutcome>,
    propensity: Option<PropensityReport>,
}

fn load(args: &DataArgs) -> Result<Dataset> {
    let schema = ColumnSchema {
        outcome: args.outcome.clone(),
        treatment: args.treatment.clone(),
        covariates: CovariateSelector::parse(&args.covariates),
    };
    let mut d = load_csv(&args.data, &schema)?;
    if args.interactions {
        d = d.with_interactions();
    }
    if args.standardize {
        d = standardize(&d)?;
    }
    Ok(d)
}

fn fit_data(args: &DataArgs, est: &EstimatorArgs) -> Result<Fitted> {
    let cfg = est.config()?;
    let d = load(args)?;
    let (ytilde, propensity) = if args.observational {
        let pcfg = PropensityConfig {
            seed: cfg.seed,
            ..PropensityConfig::default()
        };
        let lam = match args.propensity_lambda {
            Some(l) => l,
            None => cross_validate_propensity(d.covariates(), d.treatment(), &pcfg)?.lambda_p,
        };
        let prop = fit_propensity(d.covariates(), d.treatment(), lam, &pcfg)?;
        let min_overlap = prop.fitted.iter().map(|q| q * (1.0 - q)).fold(f64::INFINITY, f64::min);
        let y = modify_response(&d, ResponseMode::Observational, Some(&prop.fitted))?;
        let report = PropensityReport {
            lambda: lam,
            intercept: prop.xi[0],
            slopes: prop.xi.iter().skip(1).copied().collect(),
            min_overlap,
            poor_overlap: min_overlap < OVERLAP_FLOOR,
        };
        (y, Some(report))
    } else {
        (modify_response(&d, ResponseMode::Randomized, None)?, None)
    };
    let (fit, cv) = if est.lambda.is_some() {
        let beta0 = initial_beta(&d, &ytilde, &cfg);
        (fit(&d, &ytilde, &cfg, &beta0)?, None)
    } else {
        let (f, cv) = fit_cv(&d, &ytilde, est.lambda_grid.as_deref(), &cfg)?;
        (f, Some(cv))
    };
    Ok(Fitted {
        data: d,
        ytilde,
        fit,
        cv,
        propensity,
    })
}

#[derive(Debug, Serialize)]
struct NamedValue {
    name: String,
    value: f64,
}

#[derive(Debug, Serialize)]
struct CvReport {
    grid: Vec<f64>,
    mse: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct FitOutput {
    n: usize,
    p: usize,
    lambda: f64,
    iterations: usize,
    converged: bool,
    coefficients: Vec<NamedValue>,
    cv: Option<CvReport>,
    propensity: Option<PropensityReport>,
}

fn coefficients(d: &Dataset, beta: &Coefficient) -> Vec<NamedValue> {
    beta.full()
        .iter()
        .enumerate()
        .map(|(j, v)| NamedValue {
            name: d.column_name(j),
            value: *v,
        })
        .collect()
}

fn fit_output(f: Fitted) -> FitOutput {
    FitOutput {
        n: f.data.n(),
        p: f.data.p(),
        lambda: f.fit.lambda_used,
        iterations: f.fit.iterations,
        converged: f.fit.converged,
        coefficients: coefficients(&f.data, &f.fit.beta),
        cv: f.cv.map(|c| CvReport { grid: c.grid, mse: c.mse }),
        propensity: f.propensity,
    }
}

#[derive(Debug, Serialize)]
struct CiRow {
    name: String,
    position: usize,
    estimate: f64,
    debiased: f64,
    se: f64,
    lower: f64,
    upper: f64,
}

#[derive(Debug, Serialize)]
struct InferOutput {
    n: usize,
    p: usize,
    alpha: f64,
    eta: f64,
    bandwidth: f64,
    lambda: f64,
    intervals: Vec<CiRow>,
}

#[derive(Debug, Serialize)]
struct GroupRow {
    group: Vec<usize>,
    statistic: f64,
    c_star: f64,
    p_value: f64,
    reject: bool,
}

#[derive(Debug, Serialize)]
struct TestGroupOutput {
    n: usize,
    p: usize,
    alpha: f64,
    draws: usize,
    eta: f64,
    tests: Vec<GroupRow>,
}

#[derive(Debug, Serialize)]
struct ValueOutput {
    n: usize,
    value: f64,
    matched: usize,
    recommended_treatment: usize,
    coefficients: Vec<NamedValue>,
}

fn render_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn render_csv(header: &[&str], rows: Vec<Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
}

fn emit(out: &mut Vec<u8>, args: &OutputArgs, text: &str) -> Result<()> {
    match &args.out {
        Some(path) => std::fs::write(path, text)?,
        None => out.write_all(text.as_bytes())?,
    }
    Ok(())
}

fn group_positions(groups: &[Vec<usize>]) -> Result<()> {
    for g in groups {
        if g.contains(&1) {
            return Err(Error::InvalidConfig(
                "position 1 has the fixed unit coefficient and cannot be tested".into(),
            ));
        }
    }
    Ok(())
}

fn cmd_fit(a: &FitArgs, out: &mut Vec<u8>) -> Result<()> {
    let o = fit_output(fit_data(&a.data, &a.estimator)?);
    let text = match a.output.format {
        Format::Json => render_json(&o)?,
        Format::Csv => render_csv(
            &["name", "value"],
            o.coefficients.iter().map(|c| vec![c.name.clone(), c.value.to_string()]).collect(),
        )?,
    };
    emit(out, &a.output, &text)
}

fn cmd_infer(a: &InferArgs, out: &mut Vec<u8>) -> Result<()> {
    let f = fit_data(&a.data, &a.estimator)?;
    let smoother = FittedSmoother::new(&f.fit.beta, &f.data, &f.ytilde)?;
    let h = smoother.bandwidth;
    let eta = Eta::BandwidthMultiple(a.eta).resolve(h)?;
    let inv = theta_from_smoother(smoother, eta)?;
    let r = infer(&f.fit.beta, &inv, a.alpha)?;
    let n = f.data.n() as f64;
    let intervals = (0..r.beta_tilde.len())
        .map(|k| CiRow {
            name: f.data.column_name(k + 1),
            position: k + 2,
            estimate: f.fit.beta.rest()[k],
            debiased: r.beta_tilde[k],
            se: (r.sigma_diag[k] / n).sqrt(),
            lower: r.intervals[k].0,
            upper: r.intervals[k].1,
        })
        .collect::<Vec<_>>();
    let o = InferOutput {
        n: f.data.n(),
        p: f.data.p(),
        alpha: a.alpha,
        eta,
        bandwidth: h,
        lambda: f.fit.lambda_used,
        intervals,
    };
    let text = match a.output.format {
        Format::Json => render_json(&o)?,
        Format::Csv => render_csv(
            &["name", "position", "estimate", "debiased", "se", "lower", "upper"],
            o.intervals
                .iter()
                .map(|c| {
                    vec![
                        c.name.clone(),
                        c.position.to_string(),
                        c.estimate.to_string(),
                        c.debiased.to_string(),
                        c.se.to_string(),
                        c.lower.to_string(),
                        c.upper.to_string(),
                    ]
                })
                .collect(),
        )?,
    };
    emit(out, &a.output, &text)
}

fn cmd_test_group(a: &TestGroupArgs, out: &mut Vec<u8>) -> Result<()> {
    group_positions(&a.group)?;
    let f = fit_data(&a.data, &a.estimator)?;
    let seed = a.estimator.config()?.seed;
    let smoother = FittedSmoother::new(&f.fit.beta, &f.data, &f.ytilde)?;
    let eta = Eta::BandwidthMultiple(a.eta).resolve(smoother.bandwidth)?;
    let inv = theta_from_smoother(smoother, eta)?;
    let r = infer(&f.fit.beta, &inv, a.alpha)?;
    let ctx = BootstrapContext::new(&inv, &r);
    let tests = a
        .group
        .iter()
        .map(|g| {
            let t: GroupTestResult = group_test(
                &ctx,
                &GroupTestSpec {
                    group: g.clone(),
                    alpha: a.alpha,
                    draws: a.draws,
                    seed,
                },
            )?;
            Ok(GroupRow {
                group: t.group,
                statistic: t.statistic,
                c_star: t.c_star,
                p_value: t.p_value,
                reject: t.reject,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let o = TestGroupOutput {
        n: f.data.n(),
        p: f.data.p(),
        alpha: a.alpha,
        draws: a.draws,
        eta,
        tests,
    };
    let text = match a.output.format {
        Format::Json => render_json(&o)?,
        Format::Csv => render_csv(
            &["group", "statistic", "c_star", "p_value", "reject"],
            o.tests
                .iter()
                .map(|t| {
                    let g: Vec<String> = t.group.iter().map(|v| v.to_string()).collect();
                    vec![
                        g.join(" "),
                        t.statistic.to_string(),
                        t.c_star.to_string(),
                        t.p_value.to_string(),
                        t.reject.to_string(),
                    ]
                })
                .collect(),
        )?,
    };
    emit(out, &a.output, &text)
}

fn cmd_value(a: &ValueArgs, out: &mut Vec<u8>) -> Result<()> {
    let (d, beta, ytilde) = match &a.beta {
        Some(b) => {
            let d = load(&a.data)?;
            let beta = Coefficient::from_full(b)?;
            if beta.p() != d.p() {
                return Err(Error::LengthMismatch {
                    left: beta.p(),
                    right: d.p(),
                });
            }
            let y = if a.data.observational {
                fit_data(&a.data, &a.estimator)?.ytilde
            } else {
                modify_response(&d, ResponseMode::Randomized, None)?
            };
            (d, beta, y)
        }
        None => {
            let f = fit_data(&a.data, &a.estimator)?;
            (f.data, f.fit.beta, f.ytilde)
        }
    };
    let rule = IndexRule::new(&beta, &d, &ytilde.values).recommend(d.covariates())?;
    let value = value_estimate(&d, &rule)?;
    let matched = (0..d.n()).filter(|&i| (d.treatment()[i] == 1.0) == rule[i]).count();
    let o = ValueOutput {
        n: d.n(),
        value,
        matched,
        recommended_treatment: rule.iter().filter(|r| **r).count(),
        coefficients: coefficients(&d, &beta),
    };
    let text = match a.output.format {
        Format::Json => render_json(&o)?,
        Format::Csv => render_csv(
            &["n", "value", "matched", "recommended_treatment"],
            vec![vec![
                o.n.to_string(),
                o.value.to_string(),
                o.matched.to_string(),
                o.recommended_treatment.to_string(),
            ]],
        )?,
    };
    emit(out, &a.output, &text)
}

#[derive(Debug, Serialize)]
struct Metadata {
    version: &'static str,
    wall_time_seconds: f64,
    threads: usize,
}

fn cmd_simulate(a: &SimulateArgs, out: &mut Vec<u8>) -> Result<()> {
    group_positions(&a.group)?;
    if a.inference {
        if let Some(&j) = a.group.iter().flatten().chain(&a.coverage).find(|&&j| j == 0 || j > a.p) {
            return Err(Error::InvalidConfig(format!("position {j} is outside 1..={}", a.p)));
        }
    }
    let est = a.estimator.config()?;
    let mut spec = ScenarioSpec::from_design(&a.design, a.n, a.p, est.seed)?;
    if a.observational {
        if a.design != "gaussian_iid" {
            return Err(Error::InvalidConfig("--observational simulates the gaussian_iid design only".into()));
        }
        spec = ScenarioSpec::observational(a.n, a.p, est.seed);
    }
    let cfg = MonteCarloConfig {
        reps: a.reps,
        estimator: est,
        inference: a.inference.then(|| InferenceSettings {
            eta_multiples: a.eta.clone(),
            groups: a.group.clone(),
            alpha: a.alpha,
            draws: a.draws,
            coverage: a.coverage.clone(),
        }),
        eval_n: a.eval_n,
        observational: a.observational,
        propensity_lambda: a.propensity_lambda,
    };
    let start = Instant::now();
    let campaign = run_monte_carlo(&spec, &cfg)?;
    let elapsed = start.elapsed().as_secs_f64();
    let mut csv_buf = Vec::new();
    write_report_csv(std::slice::from_ref(&campaign.report), &mut csv_buf)?;
    if let Some(dir) = &a.out_dir {
        std::fs::create_dir_all(dir)?;
        let stem = report_stem(&campaign.report);
        let path = |ext: &str| -> PathBuf { Path::new(dir).join(format!("{stem}.{ext}")) };
        std::fs::write(path("json"), render_json(&campaign)?)?;
        std::fs::write(path("csv"), &csv_buf)?;
        let meta = Metadata {
            version: env!("CARGO_PKG_VERSION"),
            wall_time_seconds: elapsed,
            threads: rayon::current_num_threads(),
        };
        std::fs::write(path("meta.json"), render_json(&meta)?)?;
    }
    match a.format {
        Format::Json => out.write_all(render_json(&campaign.report)?.as_bytes())?,
        Format::Csv => out.write_all(&csv_buf)?,
    }
    Ok(())
}

/// Exit status for an error: 1 for bad input or flags, 2 for numerical
/// failures.
pub fn exit_code(e: &Error) -> i32 {
    use Error::*;
    match e {
        MissingColumn(_)
        | NonBinaryTreatment { .. }
        | NonNumericCell { .. }
        | TooFewRows { .. }
        | TooFewColumns(_)
        | ConstantColumn(_)
        | DimensionMismatch(_)
        | PropensityMissing
        | PropensityOutOfRange { .. }
        | InvalidConfig(_)
        | EmptyGrid
        | AlphaOutOfRange(_)
        | EmptyGroup
        | GroupIndexOutOfRange(_)
        | DuplicateGroupIndex(_)
        | UnknownDesign(_)
        | LengthMismatch { .. }
        | Io(_)
        | Csv(_) => 1,
        _ => 2,
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    code: &'a str,
    message: String,
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: ErrorBody<'a>,
}

fn dispatch(cli: &Cli, out: &mut Vec<u8>) -> Result<()> {
    match &cli.command {
        Command::Fit(a) => cmd_fit(a, out),
        Command::Infer(a) => cmd_infer(a, out),
        Command::TestGroup(a) => cmd_test_group(a, out),
        Command::Simulate(a) => cmd_simulate(a, out),
        Command::Value(a) => cmd_value(a, out),
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// exit status. Errors go to `err` as `{"error": {"code", "message"}}`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = out.write_all(text.as_bytes());
                    0
                }
                _ => {
                    let _ = err.write_all(text.as_bytes());
                    1
                }
            };
        }
    };
    let mut buf = Vec::new();
    let result = match cli.threads {
        Some(0) => Err(Error::InvalidConfig("--threads must be positive".into())),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::InvalidConfig(e.to_string()))
            .and_then(|pool| pool.install(|| dispatch(&cli, &mut buf))),
        None => dispatch(&cli, &mut buf),
    };
    if out.write_all(&buf).and_then(|_| out.flush()).is_err() {
        return 1;
    }
    match result {
        Ok(()) => 0,
        Err(e) => {
            let report = ErrorReport {
                error: ErrorBody {
                    code: e.code(),
                    message: e.to_string(),
                },
            };
            let _ = writeln!(err, "{}", serde_json::to_string(&report).unwrap_or_default());
            exit_code(&e)
        }
    }
}

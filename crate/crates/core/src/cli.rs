//! Command-line driver: config files, run orchestration and CSV output.
//!
//! Exit codes: 0 blow-up, 1 usage/config/IO error, 2 no blow-up detected,
//! 3 numeric failure. Progress goes to standard error; results go to files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::analysis::{
    blowup_rate_fit, convergence_study, default_z_samples, estimate_b_beta, estimate_b_cgl,
    estimated_blowup_time, profile_report, tau_star_limit, time_to_blowup, BCoefficientReport,
    PhaseDrift, RateSeries,
};
use crate::error::{Error, Result};
use crate::pde_core::{critical_q, threshold_m, EquationKind, RunConfig};
use crate::rescaler::{blowup_tail_bound, BlowupOutcome, Rescaler, RunOptions, RunOutput};

pub const EXIT_BLOWUP: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NO_BLOWUP: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

const REQUIRED_KEYS: [&str; 8] = [
    "equation",
    "p",
    "lambda_inv",
    "alpha",
    "amplitude",
    "I",
    "tau_ratio",
    "K_max",
];
const OPTIONAL_KEYS: [&str; 6] = ["beta", "q", "gamma", "delta", "step_cap", "symmetric"];

fn parse_value<T: std::str::FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::InvalidConfig(format!("cannot parse `{raw}` for key `{key}`")))
}

/// Parses `key = value` lines; `#` starts a comment. Every required key
/// must appear once and unknown keys are rejected.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut map: BTreeMap<&str, &str> = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::InvalidConfig(format!("line {}: expected key = value", lineno + 1))
        })?;
        let (key, value) = (key.trim(), value.trim());
        if !REQUIRED_KEYS.contains(&key) && !OPTIONAL_KEYS.contains(&key) {
            return Err(Error::UnknownKey(key.to_string()));
        }
        if map.insert(key, value).is_some() {
            return Err(Error::InvalidConfig(format!("key `{key}` given twice")));
        }
    }
    if let Some(missing) = REQUIRED_KEYS.iter().find(|k| !map.contains_key(*k)) {
        return Err(Error::MissingKey(missing.to_string()));
    }
    let get = |k: &str| map.get(k).copied();
    let p: f64 = parse_value("p", map["p"])?;
    let config = RunConfig {
        equation: parse_value("equation", map["equation"])?,
        p,
        beta: get("beta")
            .map(|v| parse_value("beta", v))
            .transpose()?
            .unwrap_or(0.0),
        q: get("q")
            .map(|v| parse_value("q", v))
            .transpose()?
            .unwrap_or_else(|| critical_q(p)),
        gamma: get("gamma")
            .map(|v| parse_value("gamma", v))
            .transpose()?
            .unwrap_or(0.0),
        delta: get("delta")
            .map(|v| parse_value("delta", v))
            .transpose()?
            .unwrap_or(0.0),
        lambda_inv: parse_value("lambda_inv", map["lambda_inv"])?,
        alpha: parse_value("alpha", map["alpha"])?,
        amplitude: parse_value("amplitude", map["amplitude"])?,
        i_max: parse_value("I", map["I"])?,
        tau_ratio: parse_value("tau_ratio", map["tau_ratio"])?,
        k_max: parse_value("K_max", map["K_max"])?,
        step_cap: get("step_cap")
            .map(|v| parse_value("step_cap", v))
            .transpose()?,
        symmetric: get("symmetric")
            .map(|v| parse_value("symmetric", v))
            .transpose()?
            .unwrap_or(true),
    };
    config.validated()
}

/// Renders a config in the format [`parse_config`] reads.
pub fn format_config(c: &RunConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "equation = {}", c.equation);
    let _ = writeln!(s, "p = {}", num(c.p));
    let _ = writeln!(s, "beta = {}", num(c.beta));
    let _ = writeln!(s, "q = {}", num(c.q));
    let _ = writeln!(s, "gamma = {}", num(c.gamma));
    let _ = writeln!(s, "delta = {}", num(c.delta));
    let _ = writeln!(s, "lambda_inv = {}", c.lambda_inv);
    let _ = writeln!(s, "alpha = {}", num(c.alpha));
    let _ = writeln!(s, "amplitude = {}", num(c.amplitude));
    let _ = writeln!(s, "I = {}", c.i_max);
    let _ = writeln!(s, "tau_ratio = {}", num(c.tau_ratio));
    let _ = writeln!(s, "K_max = {}", c.k_max);
    if let Some(cap) = c.step_cap {
        let _ = writeln!(s, "step_cap = {cap}");
    }
    let _ = writeln!(s, "symmetric = {}", c.symmetric);
    s
}

/// 17 significant digits, round-trip exact.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::Io(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp-{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::from(e)
    })
}

fn csv(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for row in rows {
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

/// Exit code for an error that ends a command.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidConfig(_)
        | Error::MissingKey(_)
        | Error::UnknownKey(_)
        | Error::Io(_)
        | Error::Convergence(_) => EXIT_USAGE,
        Error::IndexOutOfRange { .. }
        | Error::OutOfRange { .. }
        | Error::Overflow { .. }
        | Error::NoCrossing
        | Error::DegenerateInterval { .. }
        | Error::Schedule(_)
        | Error::InsufficientData(_)
        | Error::PhaseUnwrap(..) => EXIT_NUMERIC,
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "blowup-rescale",
    version,
    about = "Rescaling solver for blow-up of 1-D parabolic equations"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// One run: tau_star.csv, rate.csv, profile_<k>.csv and summary.txt.
    Run(RunArgs),
    /// Runs over a list of parameter values.
    Sweep(SweepArgs),
    /// Three-grid observed order of convergence before the first rescaling.
    Converge(ConvergeArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Levels whose rescaled profile is written.
    #[arg(
        long = "k-profiles",
        value_delimiter = ',',
        default_value = "20,40,60,80"
    )]
    pub k_profiles: Vec<usize>,
    /// Logarithm carrying the per-level phase drift of the complex profile.
    #[arg(long = "phase-drift", default_value = "lambda")]
    pub phase_drift: PhaseDrift,
}

/// Parameter varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Beta,
    Delta,
    I,
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "beta" => Ok(SweepParam::Beta),
            "delta" => Ok(SweepParam::Delta),
            "I" => Ok(SweepParam::I),
            other => Err(Error::InvalidConfig(format!(
                "cannot sweep `{other}`; use beta, delta or I"
            ))),
        }
    }
}

impl std::fmt::Display for SweepParam {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SweepParam::Beta => "beta",
            SweepParam::Delta => "delta",
            SweepParam::I => "I",
        })
    }
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub param: SweepParam,
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<String>,
    /// Concurrent runs; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    #[arg(
        long = "k-profiles",
        value_delimiter = ',',
        default_value = "20,40,60,80"
    )]
    pub k_profiles: Vec<usize>,
    #[arg(long = "phase-drift", default_value = "lambda")]
    pub phase_drift: PhaseDrift,
}

#[derive(Debug, Args)]
pub struct ConvergeArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Coarsest half grid count; defaults to the config's `I`.
    #[arg(long = "base-i")]
    pub base_i: Option<usize>,
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Converge(a) => cmd_converge(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn read_config(path: &Path) -> Result<RunConfig> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

fn run_config(config: &RunConfig, tag: &str) -> Result<RunOutput> {
    Rescaler::new(config, RunOptions::default())?.run(|r| {
        eprintln!("{tag}k={} n_k={} tau_star={}", r.k, r.n_k, num(r.tau_star));
    })
}

pub fn cmd_run(args: &RunArgs) -> Result<i32> {
    let config = read_config(&args.config)?;
    fs::create_dir_all(&args.out)?;
    let out = run_config(&config, "")?;
    write_bundle(&out, &args.out, &args.k_profiles, args.phase_drift)?;
    Ok(outcome_code(&out.outcome))
}

fn outcome_code(outcome: &BlowupOutcome) -> i32 {
    if outcome.blew_up() {
        EXIT_BLOWUP
    } else {
        EXIT_NO_BLOWUP
    }
}

/// Writes every per-run file into `dir`.
pub fn write_bundle(
    out: &RunOutput,
    dir: &Path,
    k_profiles: &[usize],
    drift: PhaseDrift,
) -> Result<()> {
    let stack = &out.stack;
    let tau_rows = stack.records().map(|r| {
        vec![
            r.k.to_string(),
            r.n_k.to_string(),
            num(r.tau_star),
            num(r.xi_minus),
            num(r.xi_plus),
        ]
    });
    write_atomic(
        &dir.join("tau_star.csv"),
        &csv(&["k", "n_k", "tau_star", "xi_minus", "xi_plus"], tau_rows),
    )?;

    let m = threshold_m(&stack.config);
    let gaps = time_to_blowup(stack);
    let lambda = stack.config.lambda();
    let rate_rows = stack.mu.iter().zip(&gaps).enumerate().map(|(k, (t, gap))| {
        let sup = m * lambda.powf(-2.0 * k as f64 / (stack.config.p - 1.0));
        vec![num(*t), num(*gap), num(sup)]
    });
    write_atomic(
        &dir.join("rate.csv"),
        &csv(&["t", "T_minus_t", "sup_norm"], rate_rows),
    )?;

    let reached = stack.records().count();
    let z = default_z_samples();
    let mut profile_errors = Vec::new();
    for &k in k_profiles {
        if k == 0 || k >= reached {
            eprintln!("skipping profile k={k}: levels 1..{reached} recorded");
            continue;
        }
        let report = profile_report(stack, k, &z, drift)?;
        let text = match &report.phase {
            None => csv(
                &["z", "computed", "predicted"],
                (0..z.len())
                    .map(|j| vec![num(z[j]), num(report.computed[j]), num(report.predicted[j])]),
            ),
            Some(ph) => csv(
                &[
                    "z",
                    "computed",
                    "predicted",
                    "computed_phase",
                    "predicted_phase",
                ],
                (0..z.len()).map(|j| {
                    vec![
                        num(z[j]),
                        num(report.computed[j]),
                        num(report.predicted[j]),
                        num(ph.computed[j]),
                        num(ph.predicted[j]),
                    ]
                }),
            ),
        };
        write_atomic(&dir.join(format!("profile_{k}.csv")), &text)?;
        profile_errors.push((
            k,
            report.error_sup,
            report.phase.as_ref().map(|p| (p.theta, p.error_sup)),
        ));
    }

    let mut s = String::new();
    match &out.outcome {
        BlowupOutcome::BlewUp { t_htau, k_reached } => {
            let _ = writeln!(s, "outcome = blowup");
            let _ = writeln!(s, "K_reached = {k_reached}");
            let _ = writeln!(s, "T_htau = {}", num(*t_htau));
            let _ = writeln!(
                s,
                "tail_bound = {}",
                num(blowup_tail_bound(&stack.tau_stars(), lambda))
            );
            let _ = writeln!(s, "T_estimate = {}", num(estimated_blowup_time(stack)));
            if let Ok(slope) = RateSeries::from_stack(stack).and_then(|r| blowup_rate_fit(&r)) {
                let _ = writeln!(s, "rate_slope = {}", num(slope));
            }
        }
        BlowupOutcome::NoBlowupDetected { level, steps } => {
            let _ = writeln!(s, "outcome = no_blowup");
            let _ = writeln!(s, "stalled_level = {level}");
            let _ = writeln!(s, "stalled_steps = {steps}");
        }
    }
    if stack.config.equation == EquationKind::Heat && stack.config.beta == 0.0 {
        let _ = writeln!(
            s,
            "tau_star_limit = {}",
            num(tau_star_limit(stack.config.p, m, lambda))
        );
    }
    let _ = writeln!(s, "M = {}", num(m));
    let _ = writeln!(s, "phase_drift = {drift}");
    for (k, e, phase) in profile_errors {
        let _ = writeln!(s, "profile_error_{k} = {}", num(e));
        if let Some((theta, pe)) = phase {
            let _ = writeln!(s, "theta_{k} = {}", num(theta));
            let _ = writeln!(s, "phase_error_{k} = {}", num(pe));
        }
    }
    let d = &out.diagnostics;
    let _ = writeln!(s, "asymmetric = {}", d.asymmetric);
    let _ = writeln!(
        s,
        "interval_check_failures = {}",
        d.interval_checks.iter().filter(|ok| !**ok).count()
    );
    let max_residual = d
        .spawn_residuals
        .iter()
        .map(|r| r.abs())
        .fold(0.0, f64::max);
    let _ = writeln!(s, "max_spawn_residual = {}", num(max_residual));
    let max_jump = d.boundary_jumps.iter().cloned().fold(0.0, f64::max);
    let _ = writeln!(s, "max_boundary_jump = {}", num(max_jump));
    s.push_str("# config\n");
    s.push_str(&format_config(&stack.config));
    write_atomic(&dir.join("summary.txt"), &s)
}

fn with_param(base: &RunConfig, param: SweepParam, raw: &str) -> Result<RunConfig> {
    let mut c = base.clone();
    match param {
        SweepParam::Beta => c.beta = parse_value("beta", raw)?,
        SweepParam::Delta => c.delta = parse_value("delta", raw)?,
        SweepParam::I => c.i_max = parse_value("I", raw)?,
    }
    c.validated()
}

struct Point {
    label: String,
    config: RunConfig,
    result: Result<RunOutput>,
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<i32> {
    let base = read_config(&args.config)?;
    match (args.param, base.equation) {
        (SweepParam::Beta, EquationKind::Cgl) | (SweepParam::Delta, EquationKind::Heat) => {
            return Err(Error::InvalidConfig(format!(
                "cannot sweep {} for the {} equation",
                args.param, base.equation
            )))
        }
        _ => {}
    }
    let mut labels: Vec<String> = args.values.iter().map(|v| v.trim().to_string()).collect();
    let calibration = match args.param {
        SweepParam::Beta => Some(RunConfig {
            beta: 0.0,
            ..base.clone()
        }),
        SweepParam::Delta => Some(RunConfig {
            delta: 0.0,
            gamma: 0.0,
            ..base.clone()
        }),
        SweepParam::I => None,
    };
    let mut configs = labels
        .iter()
        .map(|l| with_param(&base, args.param, l))
        .collect::<Result<Vec<_>>>()?;
    if let Some(cal) = &calibration {
        if !configs.contains(cal) {
            labels.insert(0, "0".into());
            configs.insert(0, cal.clone());
        }
    }
    fs::create_dir_all(&args.out)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let points: Vec<Point> = pool.install(|| {
        labels
            .par_iter()
            .zip(configs.par_iter())
            .map(|(label, config)| {
                let tag = format!("[{}={label}] ", args.param);
                let dir = args.out.join(format!("{}_{label}", args.param));
                let result = fs::create_dir_all(&dir)
                    .map_err(Error::from)
                    .and_then(|_| run_config(config, &tag))
                    .and_then(|out| {
                        write_bundle(&out, &dir, &args.k_profiles, args.phase_drift).map(|_| out)
                    });
                Point {
                    label: label.clone(),
                    config: config.clone(),
                    result,
                }
            })
            .collect()
    });

    let mut failures: Vec<(String, String)> = points
        .iter()
        .filter_map(|p| {
            p.result
                .as_ref()
                .err()
                .map(|e| (p.label.clone(), e.to_string()))
        })
        .collect();
    match args.param {
        SweepParam::I => {
            let rows = points.iter().filter_map(|p| {
                let out = p.result.as_ref().ok()?;
                let taus = out.stack.tau_stars();
                let last = *taus.last()?;
                Some(vec![
                    p.label.clone(),
                    (taus.len() - 1).to_string(),
                    num(last),
                ])
            });
            write_atomic(
                &args.out.join("tau_sweep.csv"),
                &csv(&["param", "k_reached", "tau_star_last"], rows),
            )?;
        }
        SweepParam::Beta | SweepParam::Delta => {
            let cal = calibration.expect("b sweeps always calibrate");
            let cal_out = points
                .iter()
                .find(|p| p.config == cal)
                .and_then(|p| p.result.as_ref().ok());
            let mut rows = Vec::new();
            for p in &points {
                let report = match (&p.result, cal_out) {
                    (Ok(out), Some(cal_out)) => b_report(args.param, out, cal_out),
                    (Ok(_), None) => Err(Error::InsufficientData("calibration run failed".into())),
                    (Err(_), _) => continue,
                };
                match report {
                    Ok(r) => {
                        if r.near_singular {
                            eprintln!("[{}={}] b(δ,γ) is near-singular", args.param, p.label);
                        }
                        rows.push(vec![
                            p.label.clone(),
                            num(r.xi_plus_k),
                            num(r.b_estimate),
                            r.b_theory.map(num).unwrap_or_default(),
                        ])
                    }
                    Err(e) => failures.push((p.label.clone(), e.to_string())),
                }
            }
            write_atomic(
                &args.out.join("b_sweep.csv"),
                &csv(&["param", "xi_plus_K", "b_estimate", "b_theory"], rows),
            )?;
        }
    }
    failures.sort();
    let fail_rows = failures
        .into_iter()
        .map(|(l, e)| vec![l, e.replace([',', '\n'], ";")]);
    write_atomic(
        &args.out.join("sweep_failures.csv"),
        &csv(&["param", "error"], fail_rows),
    )?;
    Ok(EXIT_BLOWUP)
}

fn b_report(
    param: SweepParam,
    out: &RunOutput,
    calibration: &RunOutput,
) -> Result<BCoefficientReport> {
    let k = match (&out.outcome, &calibration.outcome) {
        (
            BlowupOutcome::BlewUp { k_reached: a, .. },
            BlowupOutcome::BlewUp { k_reached: b, .. },
        ) => (*a).min(*b),
        _ => {
            return Err(Error::InsufficientData(
                "no blow-up, so no b estimate".into(),
            ))
        }
    };
    match param {
        SweepParam::Beta => estimate_b_beta(&out.stack, &calibration.stack, k),
        _ => estimate_b_cgl(&out.stack, &calibration.stack, k),
    }
}

pub fn cmd_converge(args: &ConvergeArgs) -> Result<i32> {
    let config = read_config(&args.config)?;
    let i = args.base_i.unwrap_or(config.i_max);
    let report = convergence_study(&config, [i, 2 * i, 4 * i])?;
    fs::create_dir_all(&args.out)?;
    let row = vec![
        report.grids[0].to_string(),
        report.grids[1].to_string(),
        report.grids[2].to_string(),
        num(report.t_end),
        num(report.e1),
        num(report.e2),
        num(report.order),
    ];
    write_atomic(
        &args.out.join("convergence.csv"),
        &csv(&["I", "I2", "I4", "t_end", "e1", "e2", "order"], [row]),
    )?;
    eprintln!("observed order {:.4}", report.order);
    Ok(0)
}

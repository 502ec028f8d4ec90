use clap::{Args, Parser, Subcommand};
use rfclt_core::experiments::{self, ConditionsReport, ExperimentConfig, ImpliedConstantScan};
use rfclt_core::model::FieldModel;
use rfclt_core::oracle::{self, OracleCheck};
use rfclt_core::{lattice, simulate, Window};
use serde::Serialize;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

/// Bumped whenever the layout of `report.json` changes.
const SCHEMA_VERSION: u32 = 1;

#[derive(Parser)]
#[command(name = "rfclt", version, about = "CLT experiments for stationary random fields")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one field window at the largest configured extent.
    Simulate(Common),
    /// Projective-condition series and implied-constant scans.
    CheckConditions(Common),
    /// Kolmogorov-Smirnov test of the standardized partial sums.
    CltTest(Common),
    /// E(S_n^2)/|n| over the extent grid.
    VarianceScan(Common),
    /// Martingale-difference approximation diagnostics.
    MartDecompose(Common),
    /// Exact-enumeration identities; uses the bundled suite without --config.
    OracleVerify(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for report.json and samples.csv.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for the replications.
    #[arg(long)]
    threads: Option<usize>,
    /// Also write samples.csv.
    #[arg(long)]
    csv: bool,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {message}", path.display())]
    Config { path: PathBuf, message: String },
    #[error(transparent)]
    Core(#[from] rfclt_core::Error),
    #[error("{0}")]
    Usage(String),
}

impl From<oracle::OracleError> for CliError {
    fn from(e: oracle::OracleError) -> Self {
        CliError::Core(e.into())
    }
}

impl From<rfclt_core::FieldError> for CliError {
    fn from(e: rfclt_core::FieldError) -> Self {
        CliError::Core(e.into())
    }
}

impl From<rfclt_core::LatticeError> for CliError {
    fn from(e: rfclt_core::LatticeError) -> Self {
        CliError::Core(e.into())
    }
}

#[derive(Serialize)]
struct Report<'a> {
    schema_version: u32,
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    /// Seconds since the Unix epoch; the only field that varies between identical runs.
    timestamp: u64,
    seed: Option<u64>,
    pass: bool,
    config: Option<&'a ExperimentConfig>,
    result: serde_json::Value,
}

struct Outcome {
    pass: bool,
    seed: Option<u64>,
    result: serde_json::Value,
    csv: Option<String>,
    summary: String,
}

fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.into(), source })?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| CliError::Config {
        path: path.into(),
        message: format!("field `{}`: {}", e.path(), e.inner()),
    })?;
    cfg.validate()
        .map_err(|e| CliError::Config { path: path.into(), message: e.to_string() })?;
    Ok(cfg)
}

fn json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("reports serialize")
}

fn window_csv(w: &Window) -> String {
    let d = w.dim();
    let mut s = String::new();
    for a in 1..=d {
        let _ = write!(s, "k{a},");
    }
    s.push_str("value\n");
    let o = w.origin().coords().to_vec();
    let mut i = 0;
    lattice::for_each_offset(w.extent(), |off| {
        for a in 0..d {
            let _ = write!(s, "{},", o[a] + off[a] as i64);
        }
        let _ = writeln!(s, "{:e}", w.values()[i]);
        i += 1;
    });
    s
}

fn run_simulate(cfg: &ExperimentConfig, seed: u64) -> Result<Outcome, CliError> {
    let extent = cfg.extents.last().ok_or_else(|| CliError::Usage("simulate needs at least one extent".into()))?;
    let mut desc = cfg.model.clone();
    desc.innovations.seed = seed;
    let f = simulate(&desc, extent)?;
    let n = f.values().len();
    Ok(Outcome {
        pass: true,
        seed: Some(seed),
        summary: format!("simulated {} {extent:?} window ({n} cells)", cfg.model.model.kind()),
        csv: Some(window_csv(&f.window)),
        result: json(&f.window),
    })
}

#[derive(Serialize)]
struct ConditionsResult {
    conditions: Option<ConditionsReport>,
    implied_constants: Option<ImpliedConstantScan>,
}

fn run_conditions(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    if cfg.conditions.is_none() && cfg.implied_constant_grid.is_empty() {
        return Err(CliError::Usage("check-conditions needs a `conditions` section or an `implied_constant_grid`".into()));
    }
    let conditions = cfg.conditions.as_ref().map(|_| experiments::check_conditions(cfg)).transpose()?;
    let implied = (!cfg.implied_constant_grid.is_empty())
        .then(|| experiments::implied_constant_scan(&cfg.model, &cfg.implied_constant_grid))
        .transpose()?;
    let pass = conditions.as_ref().map_or(true, ConditionsReport::pass);
    let mut summary = Vec::new();
    if let Some(c) = &conditions {
        summary.push(format!("{}: {:?}, {}: {:?}", c.mw.series, c.mw.verdict, c.mw_x.series, c.mw_x.verdict));
    }
    if let Some(p) = &implied {
        summary.push(format!("implied constants: max {:?} ({:?})", p.max_implied_constant, p.status));
    }
    Ok(Outcome {
        pass,
        seed: None,
        csv: conditions.as_ref().map(|c| c.mw.to_csv()),
        summary: summary.join("; "),
        result: json(&ConditionsResult { conditions, implied_constants: implied }),
    })
}

fn run_clt(cfg: &ExperimentConfig, seed: u64) -> Result<Outcome, CliError> {
    let r = experiments::clt_experiment(cfg, seed)?;
    let lines: Vec<String> = r
        .rows
        .iter()
        .map(|row| match row.ks_statistic {
            Some(ks) => format!("{:?}: KS {ks:.4} vs {:.4}", row.extent, row.threshold),
            None => format!("{:?}: degenerate", row.extent),
        })
        .collect();
    Ok(Outcome { pass: r.pass(), seed: Some(seed), csv: Some(r.samples_csv()), summary: lines.join(", "), result: json(&r) })
}

fn run_variance(cfg: &ExperimentConfig, seed: u64) -> Result<Outcome, CliError> {
    let s = experiments::variance_scan(cfg, seed)?;
    let last = s.rows.last().expect("variance scans have rows");
    let on_target = cfg.expected_variance.map(|v| (last.variance - v).abs() <= 3.0 * last.se);
    let pass = s.converged != Some(false) && on_target != Some(false);
    Ok(Outcome {
        pass,
        seed: Some(seed),
        csv: Some(s.to_csv()),
        summary: format!("final E(S^2)/|n| = {:.4} +- {:.4}", last.variance, last.se),
        result: json(&s),
    })
}

fn run_mart(cfg: &ExperimentConfig, seed: u64) -> Result<Outcome, CliError> {
    let r = experiments::mart_decompose(cfg, seed)?;
    let mut csv = String::from("ell,");
    csv.push_str(&r.mcleish.first().map(|m| m.samples_csv()).unwrap_or_default().lines().next().unwrap_or(""));
    csv.push('\n');
    for m in &r.mcleish {
        for line in m.samples_csv().lines().skip(1) {
            let _ = writeln!(csv, "{},{line}", m.ell);
        }
    }
    let worst = r.mcleish.iter().map(|m| m.max_over_sqrt_n).fold(0.0, f64::max);
    Ok(Outcome {
        pass: r.pass,
        seed: Some(seed),
        csv: Some(csv),
        summary: format!(
            "max E(max D^2/k) = {worst:.4} (threshold {}), sigma_ell nonincreasing: {}",
            r.max_threshold, r.sigma_ell_nonincreasing
        ),
        result: json(&r),
    })
}

#[derive(Serialize)]
struct OracleResult {
    suite: &'static str,
    checks: Vec<OracleCheck>,
}

fn run_oracle(cfg: Option<&ExperimentConfig>) -> Result<Outcome, CliError> {
    let (suite, name) = match cfg {
        None => (oracle::bundled_suite(), "bundled"),
        Some(c) => {
            if c.extents.is_empty() {
                return Err(CliError::Usage("oracle-verify needs at least one extent in the config".into()));
            }
            let kind = match c.model.model {
                FieldModel::Linear(_) => "linear",
                FieldModel::Volterra(_) => "volterra",
            };
            let items = c.extents.iter().map(|e| (format!("{kind} {e:?}"), c.model.clone(), e.clone())).collect();
            (items, "config")
        }
    };
    let checks = oracle::verify_suite(&suite)?;
    let worst = checks.iter().map(|c| c.deviation).fold(0.0, f64::max);
    let pass = checks.iter().all(|c| c.pass);
    let mut csv = String::from("check,deviation,tolerance,pass\n");
    for c in &checks {
        let _ = writeln!(csv, "\"{}\",{:e},{:e},{}", c.name, c.deviation, c.tolerance, c.pass);
    }
    Ok(Outcome {
        pass,
        seed: None,
        csv: Some(csv),
        summary: format!("{} checks, max deviation {worst:.2e}", checks.len()),
        result: json(&OracleResult { suite: name, checks }),
    })
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|source| CliError::Io { path: path.into(), source })
}

fn execute(cmd: &Command) -> Result<bool, CliError> {
    let (name, args) = match cmd {
        Command::Simulate(a) => ("simulate", a),
        Command::CheckConditions(a) => ("check-conditions", a),
        Command::CltTest(a) => ("clt-test", a),
        Command::VarianceScan(a) => ("variance-scan", a),
        Command::MartDecompose(a) => ("mart-decompose", a),
        Command::OracleVerify(a) => ("oracle-verify", a),
    };
    if let Some(k) = args.threads {
        if k == 0 {
            return Err(CliError::Usage("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    let cfg = args.config.as_deref().map(load_config).transpose()?;
    let need = || cfg.as_ref().ok_or_else(|| CliError::Usage(format!("{name} needs --config")));
    let outcome = match cmd {
        Command::Simulate(_) => {
            let c = need()?;
            run_simulate(c, c.effective_seed(args.seed))?
        }
        Command::CheckConditions(_) => run_conditions(need()?)?,
        Command::CltTest(_) => {
            let c = need()?;
            run_clt(c, c.effective_seed(args.seed))?
        }
        Command::VarianceScan(_) => {
            let c = need()?;
            run_variance(c, c.effective_seed(args.seed))?
        }
        Command::MartDecompose(_) => {
            let c = need()?;
            run_mart(c, c.effective_seed(args.seed))?
        }
        Command::OracleVerify(_) => run_oracle(cfg.as_ref())?,
    };
    std::fs::create_dir_all(&args.out).map_err(|source| CliError::Io { path: args.out.clone(), source })?;
    let report = Report {
        schema_version: SCHEMA_VERSION,
        tool: "rfclt",
        version: env!("CARGO_PKG_VERSION"),
        command: name,
        timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        seed: outcome.seed,
        pass: outcome.pass,
        config: cfg.as_ref(),
        result: outcome.result,
    };
    let text = serde_json::to_string_pretty(&report).expect("reports serialize") + "\n";
    write(&args.out.join("report.json"), &text)?;
    if args.csv {
        if let Some(csv) = &outcome.csv {
            write(&args.out.join("samples.csv"), csv)?;
        }
    }
    println!("{name}: {} ({})", if outcome.pass { "pass" } else { "FAIL" }, outcome.summary);
    Ok(outcome.pass)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

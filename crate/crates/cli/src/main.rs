use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use edualloc::counterfactual::{
    ability_grid, cf1_gap_curve, cf2_policy_distributions, cf3_resource_increase, write_gaps, CfConfig,
};
use edualloc::model::ExtensiveMode;
use edualloc::moments::{compute_moment_vector_lenient, moments_by_stratum, variance_decomposition};
use edualloc::population::{fit_beta_mle, generate_population, read_population, read_scores, simulate_population, write_population};
use edualloc::recovery::{ability_diagnostics, recover_population, write_recovery};
use edualloc::regress::decomposition_shares;
use edualloc::{
    estimator::estimate_theta, EstimationConfig, HouseholdRecord, Margin, ParentEduc, PolicySpec, PopulationConfig,
    Stratum, Theta, DEFAULT_Q_MAX,
};

#[derive(Parser, Debug)]
#[command(name = "edualloc", version, about = "Education allocation model: simulate, estimate, recover, counterfactuals")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic population and its outcomes (CSV).
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Round years half-up to whole years in the CSV.
        #[arg(long)]
        integer_years: bool,
    },
    /// Matched moments and inequality statistics by stratum (JSON).
    Moments {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        stratum: StratumArgs,
    },
    /// SMM estimate for one stratum (JSON).
    Estimate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        stratum: StratumArgs,
    },
    /// Gender / birth-order / ability shares of within-household inequality (JSON).
    Decompose {
        #[arg(long)]
        data: PathBuf,
        /// intensive, extensive or all; every margin when omitted.
        #[arg(long)]
        margin: Option<String>,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        stratum: StratumArgs,
    },
    /// Recover two-child ability pairs (CSV).
    Recover {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        theta: PathBuf,
        /// Also write distribution diagnostics here (JSON).
        #[arg(long)]
        summary: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Policy experiments.
    Counterfactual {
        #[command(subcommand)]
        which: Cf,
    },
    /// Fit the Beta law of relative ability to scores (JSON).
    FitBeta {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Subcommand, Debug)]
enum Cf {
    /// Gap curve against the daughter's relative ability (JSON).
    Cf1 {
        #[arg(long)]
        theta: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Baseline, no-disadvantage, policy and extensive-fix gaps (CSV + summary JSON).
    Cf2 {
        #[arg(long)]
        theta: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        summary: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Budget increase at fixed parameters (CSV + summary JSON).
    Cf3 {
        #[arg(long)]
        theta: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        summary: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Debug, Clone)]
struct Common {
    #[arg(long)]
    seed: Option<u64>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct StratumArgs {
    /// Parent education (none, primary, junior, senior, college).
    #[arg(long)]
    stratum: Option<String>,
    /// Number of children in the stratum.
    #[arg(long, default_value_t = 2)]
    n_c: usize,
    /// Per-child cap on years used when reading data.
    #[arg(long, default_value_t = DEFAULT_Q_MAX)]
    q_max: f64,
}

#[derive(Debug)]
enum CliError {
    Core(edualloc::Error),
    Input(String),
}

impl From<edualloc::Error> for CliError {
    fn from(e: edualloc::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateConfig {
    population: PopulationConfig,
    #[serde(default)]
    theta: Theta,
    #[serde(default)]
    extensive_mode: ExtensiveMode,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Cf1Config {
    /// Household budget; the mean budget of 9.2 years per child by default.
    #[serde(default = "default_cf1_q")]
    q_total: f64,
    #[serde(default = "default_grid")]
    grid: [f64; 2],
    #[serde(default = "default_grid_n")]
    grid_n: usize,
    #[serde(default = "default_q_max")]
    q_max: f64,
}

fn default_cf1_q() -> f64 {
    18.4
}
fn default_grid() -> [f64; 2] {
    [0.05, 0.95]
}
fn default_grid_n() -> usize {
    181
}
fn default_q_max() -> f64 {
    DEFAULT_Q_MAX
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum PolicyChoice {
    /// `"calibrated"` or `"reference"`.
    Named(String),
    Spec(PolicySpec),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Cf2Config {
    population: PopulationConfig,
    policy: PolicyChoice,
    #[serde(default)]
    cf: CfConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Cf3Config {
    population: PopulationConfig,
    #[serde(default = "default_from")]
    qbar_from: f64,
    #[serde(default = "default_to")]
    qbar_to: f64,
    #[serde(default)]
    cf: CfConfig,
}

fn default_from() -> f64 {
    9.2
}
fn default_to() -> f64 {
    14.5
}

/// Inputs read so far, with digests for the run record.
#[derive(Default)]
struct Inputs {
    digests: BTreeMap<String, String>,
}

impl Inputs {
    fn read(&mut self, role: &str, path: &Path) -> CliResult<Vec<u8>> {
        let bytes = fs::read(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        self.digests.insert(role.to_string(), hex::encode(Sha256::digest(&bytes)));
        Ok(bytes)
    }

    fn json<T: for<'de> Deserialize<'de>>(&mut self, role: &str, path: &Path) -> CliResult<T> {
        let bytes = self.read(role, path)?;
        serde_json::from_slice(&bytes).map_err(|e| CliError::Input(format!("{} ({role}): {e}", path.display())))
    }

    fn population(&mut self, path: &Path, q_max: f64) -> CliResult<Vec<HouseholdRecord>> {
        let bytes = self.read("data", path)?;
        Ok(read_population(bytes.as_slice(), q_max)?)
    }

    /// A bare parameter object or an estimation result carrying `theta_hat`.
    fn theta(&mut self, path: &Path) -> CliResult<Theta> {
        let v: Value = self.json("theta", path)?;
        let inner = match v.get("theta_hat") {
            Some(t) => t.clone(),
            None => v,
        };
        let theta: Theta =
            serde_json::from_value(inner).map_err(|e| CliError::Input(format!("{} (theta): {e}", path.display())))?;
        theta.validate()?;
        Ok(theta)
    }
}

fn run_record(command: &str, seed: Option<u64>, inputs: &Inputs, config: Value) -> Value {
    json!({
        "tool": "edualloc",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "seed": seed,
        "inputs": inputs.digests,
        "config": config,
    })
}

fn emit_bytes(out: Option<&Path>, bytes: &[u8]) -> CliResult<()> {
    match out {
        Some(p) => fs::write(p, bytes).map_err(|e| CliError::Input(format!("{}: {e}", p.display()))),
        None => {
            io::stdout().write_all(bytes)?;
            Ok(())
        }
    }
}

/// Write `body` with the run record merged in under `run`.
fn emit_json(out: Option<&Path>, run: Value, body: impl Serialize) -> CliResult<()> {
    let mut v = serde_json::to_value(body)?;
    match &mut v {
        Value::Object(m) => {
            m.insert("run".into(), run);
        }
        other => {
            v = json!({ "run": run, "result": other.take() });
        }
    }
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    emit_bytes(out, s.as_bytes())
}

/// CSV goes to `out`; its run record to `<out>.run.json`, or stderr.
fn emit_csv(out: Option<&Path>, run: Value, csv: Vec<u8>) -> CliResult<()> {
    emit_bytes(out, &csv)?;
    let mut s = serde_json::to_string_pretty(&run)?;
    s.push('\n');
    match out {
        Some(p) => {
            let mut side = p.as_os_str().to_owned();
            side.push(".run.json");
            emit_bytes(Some(Path::new(&side)), s.as_bytes())
        }
        None => {
            eprint!("{s}");
            Ok(())
        }
    }
}

fn parse_parent(s: &str) -> CliResult<ParentEduc> {
    serde_json::from_value(Value::String(s.to_string()))
        .map_err(|_| CliError::Input(format!("--stratum: `{s}` is not one of none, primary, junior, senior, college")))
}

fn round_half_up(x: f64) -> f64 {
    (x + 0.5).floor()
}

fn integer_years(pop: &mut [HouseholdRecord]) {
    for h in pop {
        for c in &mut h.children {
            if c.educ_years > 0.0 {
                c.educ_years = round_half_up(c.educ_years).max(1.0);
            }
        }
    }
}

fn simulate(config: &Path, common: &Common, integer: bool) -> CliResult<()> {
    let mut inputs = Inputs::default();
    let mut cfg: SimulateConfig = inputs.json("config", config)?;
    if let Some(s) = common.seed {
        cfg.population.seed = s;
    }
    let specs = generate_population(&cfg.population)?;
    let mut pop = simulate_population(&specs, &cfg.theta, cfg.population.seed, cfg.extensive_mode)?;
    if integer {
        integer_years(&mut pop);
    }
    let mut buf = Vec::new();
    write_population(&mut buf, &pop)?;
    let mut resolved = serde_json::to_value(&cfg)?;
    resolved["integer_years"] = json!(integer);
    eprintln!("simulated {} households", pop.len());
    emit_csv(common.out.as_deref(), run_record("simulate", Some(cfg.population.seed), &inputs, resolved), buf)
}

fn select(pop: Vec<HouseholdRecord>, parent: Option<ParentEduc>) -> Vec<HouseholdRecord> {
    match parent {
        Some(p) => pop.into_iter().filter(|h| h.parent_educ == p).collect(),
        None => pop,
    }
}

fn moments(data: &Path, common: &Common, st: &StratumArgs) -> CliResult<()> {
    let mut inputs = Inputs::default();
    let pop = inputs.population(data, st.q_max)?;
    let parent = st.stratum.as_deref().map(parse_parent).transpose()?;
    let pop = select(pop, parent);
    let body = match parent {
        Some(p) => {
            let s = Stratum::new(p, st.n_c);
            let m = compute_moment_vector_lenient(&pop, s)?;
            json!({ "moments": { s.to_string(): m }, "skipped": {} })
        }
        None => {
            let (ok, err) = moments_by_stratum(&pop);
            json!({ "moments": ok, "skipped": err })
        }
    };
    let mut body = body;
    body["inequality"] = serde_json::to_value(variance_decomposition(&pop)?)?;
    let config = json!({ "stratum": st.stratum, "n_c": st.n_c, "q_max": st.q_max });
    emit_json(common.out.as_deref(), run_record("moments", common.seed, &inputs, config), body)
}

fn estimate(data: &Path, config: Option<&Path>, common: &Common, st: &StratumArgs) -> CliResult<()> {
    let mut inputs = Inputs::default();
    let pop = inputs.population(data, st.q_max)?;
    let mut cfg: EstimationConfig = match config {
        Some(p) => inputs.json("config", p)?,
        None => EstimationConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    let parent = parse_parent(st.stratum.as_deref().unwrap_or("none"))?;
    let stratum = Stratum::new(parent, st.n_c);
    let run = |inputs: &Inputs, cfg: &EstimationConfig| -> CliResult<Value> {
        let mut c = serde_json::to_value(cfg)?;
        c["stratum"] = json!(stratum.to_string());
        Ok(run_record("estimate", Some(cfg.seed), inputs, c))
    };
    match estimate_theta(&pop, stratum, &cfg) {
        Ok(r) => {
            eprintln!("objective at minimum {:.6e}", r.objective_at_min);
            emit_json(common.out.as_deref(), run(&inputs, &cfg)?, &r)
        }
        Err(e @ edualloc::Error::NonConvergence { .. }) => {
            if let edualloc::Error::NonConvergence { best, best_value, iterations, .. } = &e {
                let body = json!({
                    "error": e.to_string(),
                    "best": best,
                    "best_value": best_value,
                    "iterations": iterations,
                });
                emit_json(common.out.as_deref(), run(&inputs, &cfg)?, body)?;
            }
            Err(e.into())
        }
        Err(e) => Err(e.into()),
    }
}

fn decompose(data: &Path, margin: Option<&str>, common: &Common, st: &StratumArgs) -> CliResult<()> {
    let mut inputs = Inputs::default();
    let pop = inputs.population(data, st.q_max)?;
    let parent = st.stratum.as_deref().map(parse_parent).transpose()?;
    let pop = select(pop, parent);
    let config = json!({ "stratum": st.stratum, "margin": margin, "q_max": st.q_max });
    let body = match margin {
        Some(m) => {
            let m: Margin = m.parse()?;
            serde_json::to_value(decomposition_shares(&pop, m)?)?
        }
        None => {
            let mut out = serde_json::Map::new();
            for (name, m) in [("intensive", Margin::Intensive), ("extensive", Margin::Extensive), ("all", Margin::All)] {
                let v = match decomposition_shares(&pop, m) {
                    Ok(d) => serde_json::to_value(d)?,
                    Err(e) => json!({ "error": e.to_string() }),
                };
                out.insert(name.into(), v);
            }
            Value::Object(out)
        }
    };
    emit_json(common.out.as_deref(), run_record("decompose", common.seed, &inputs, config), body)
}

fn recover(data: &Path, theta: &Path, summary: Option<&Path>, common: &Common) -> CliResult<()> {
    let mut inputs = Inputs::default();
    let pop = inputs.population(data, DEFAULT_Q_MAX)?;
    let theta = inputs.theta(theta)?;
    let rows = recover_population(&pop, &theta, DEFAULT_Q_MAX)?;
    let mut buf = Vec::new();
    write_recovery(&mut buf, &rows)?;
    let config = json!({ "theta": theta, "q_max": DEFAULT_Q_MAX });
    let run = run_record("recover", common.seed, &inputs, config);
    if let Some(p) = summary {
        let d = ability_diagnostics(&pop, &theta, DEFAULT_Q_MAX)?;
        emit_json(Some(p), run.clone(), &d)?;
    }
    emit_csv(common.out.as_deref(), run, buf)
}

fn cf1(theta: &Path, config: Option<&Path>, common: &Common) -> CliResult<()> {
    let mut inputs = Inputs::default();
    let theta = inputs.theta(theta)?;
    let cfg: Cf1Config = match config {
        Some(p) => inputs.json("config", p)?,
        None => serde_json::from_str("{}")?,
    };
    let grid = ability_grid(cfg.grid[0], cfg.grid[1], cfg.grid_n);
    let r = cf1_gap_curve(&theta, cfg.q_total, &grid, cfg.q_max)?;
    let config = json!({ "theta": theta, "cf1": cfg });
    emit_json(common.out.as_deref(), run_record("counterfactual cf1", common.seed, &inputs, config), &r)
}

fn summary_path(summary: Option<&Path>, out: Option<&Path>) -> Option<PathBuf> {
    summary.map(Path::to_path_buf).or_else(|| out.map(|p| p.with_extension("summary.json")))
}

fn cf2(theta: &Path, config: &Path, summary: Option<&Path>, common: &Common) -> CliResult<()> {
    let mut inputs = Inputs::default();
    let theta = inputs.theta(theta)?;
    let mut cfg: Cf2Config = inputs.json("config", config)?;
    if let Some(s) = common.seed {
        cfg.population.seed = s;
        cfg.cf.seed = s;
    }
    let households = generate_population(&cfg.population)?;
    let q_ref = match cfg.cf.q_ref {
        Some(q) => q,
        None => households.iter().map(|h| h.q_total).sum::<f64>() / households.len() as f64,
    };
    let policy = match &cfg.policy {
        PolicyChoice::Spec(p) => p.clone(),
        PolicyChoice::Named(n) if n == "calibrated" => PolicySpec::calibrated(&theta, q_ref, &cfg.cf.ability)?,
        PolicyChoice::Named(n) if n == "reference" => PolicySpec::reference(),
        PolicyChoice::Named(n) => {
            return Err(CliError::Input(format!("policy: `{n}` is not calibrated, reference or a policy object")))
        }
    };
    let r = cf2_policy_distributions(&theta, &policy, &households, &cfg.cf)?;
    let s = r.summary()?;
    let mut buf = Vec::new();
    write_gaps(&mut buf, &r.distributions())?;
    let config = json!({ "theta": theta, "cf2": cfg, "policy": policy, "q_ref": q_ref });
    let run = run_record("counterfactual cf2", Some(cfg.cf.seed), &inputs, config);
    eprintln!("KS policy vs no-disadvantage {:.4}", s.ks_policy_vs_no_disadvantage);
    emit_csv(common.out.as_deref(), run.clone(), buf)?;
    emit_json(summary_path(summary, common.out.as_deref()).as_deref().or(Some(Path::new("/dev/stderr"))), run, &s)
}

fn cf3(theta: &Path, config: &Path, summary: Option<&Path>, common: &Common) -> CliResult<()> {
    let mut inputs = Inputs::default();
    let theta = inputs.theta(theta)?;
    let mut cfg: Cf3Config = inputs.json("config", config)?;
    if let Some(s) = common.seed {
        cfg.population.seed = s;
        cfg.cf.seed = s;
    }
    let households = generate_population(&cfg.population)?;
    let r = cf3_resource_increase(&theta, &households, cfg.qbar_from, cfg.qbar_to, &cfg.cf)?;
    for w in &r.warnings {
        eprintln!("warning: {w}");
    }
    let mut buf = Vec::new();
    write_gaps(&mut buf, &[&r.before, &r.after])?;
    let config = json!({ "theta": theta, "cf3": cfg });
    let run = run_record("counterfactual cf3", Some(cfg.cf.seed), &inputs, config);
    let body = json!({
        "mean_before": r.mean_before,
        "mean_after": r.mean_after,
        "se_before": r.before.se(),
        "se_after": r.after.se(),
        "n": r.before.len(),
        "scale": r.scale,
        "capped_share": r.capped_share,
        "widens": r.mean_after < r.mean_before,
        "warnings": r.warnings,
    });
    emit_csv(common.out.as_deref(), run.clone(), buf)?;
    emit_json(summary_path(summary, common.out.as_deref()).as_deref().or(Some(Path::new("/dev/stderr"))), run, body)
}

fn fit_beta(data: &Path, common: &Common) -> CliResult<()> {
    let mut inputs = Inputs::default();
    let bytes = inputs.read("data", data)?;
    let scores = read_scores(bytes.as_slice())?;
    let fit = fit_beta_mle(&scores)?;
    let body = json!({
        "ability": fit.dist,
        "iterations": fit.iterations,
        "log_likelihood": fit.log_likelihood,
        "initial": fit.initial,
        "n": scores.len(),
    });
    emit_json(common.out.as_deref(), run_record("fit-beta", common.seed, &inputs, json!({})), body)
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match &cli.command {
        Command::Simulate { config, common, integer_years } => simulate(config, common, *integer_years),
        Command::Moments { data, common, stratum } => moments(data, common, stratum),
        Command::Estimate { data, config, common, stratum } => estimate(data, config.as_deref(), common, stratum),
        Command::Decompose { data, margin, common, stratum } => decompose(data, margin.as_deref(), common, stratum),
        Command::Recover { data, theta, summary, common } => recover(data, theta, summary.as_deref(), common),
        Command::Counterfactual { which } => match which {
            Cf::Cf1 { theta, config, common } => cf1(theta, config.as_deref(), common),
            Cf::Cf2 { theta, config, summary, common } => cf2(theta, config, summary.as_deref(), common),
            Cf::Cf3 { theta, config, summary, common } => cf3(theta, config, summary.as_deref(), common),
        },
        Command::FitBeta { data, common } => fit_beta(data, common),
    }
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
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_non_convergence() { 2 } else { 1 })
        }
        Err(CliError::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

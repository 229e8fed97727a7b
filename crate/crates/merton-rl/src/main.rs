//! Command-line experiment runner.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use merton_rl::backtest::{
    emit_results, load_market_csv_path, run_backtest, BacktestConfig, BacktestPolicyKind,
};
use merton_rl::evaluation::{
    average_utility, build_test_set, convergence_study, erm_comparison, simulation_experiment,
    ConvergenceConfig, MeanPolicy, Method, SimExperimentConfig,
};
use merton_rl::learner::{train, EpisodeSource, LearnConfig, TrainState};
use merton_rl::market::{simulate_sv_path, BsParams, SvParams, TimeGrid};
use merton_rl::nn::Mlp;
use merton_rl::oracle::{
    bs_ground_truth, erwl_exploratory, sv_condition, sv_riccati_closed_form, sv_riccati_numeric,
};
use merton_rl::policy::{GaussianPolicy, MeanFn, SpecificFormTheta};
use merton_rl::rng::{SeedSpec, StreamTag};
use merton_rl::value::{Critic, ValuePsi};
use merton_rl::{MertonError, Result};

const DEFAULT_SEED: u64 = 20240501;

#[derive(Parser)]
#[command(
    name = "merton-rl",
    version,
    about = "Data-driven Merton strategies: simulators, oracles, actor-critic training and experiments"
)]
struct Cli {
    /// Master seed; the MERTON_RL_SEED environment variable overrides the
    /// built-in default, and this flag overrides both.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON config file with flat keys mirroring the long flag names
    /// (dashes replaced by underscores); explicit flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for parallel sections (default: available cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print ground-truth quantities as JSON.
    Oracle {
        #[command(subcommand)]
        what: OracleCmd,
    },
    /// Temperature convergence study (projected policy iteration).
    Convergence(ConvergenceArgs),
    /// Repeated simulation comparison of methods.
    Table1(Table1Args),
    /// ERM-versus-RL learning curves.
    Ermcmp(ErmcmpArgs),
    /// Train one policy on simulated data and record the learning curve.
    Train(TrainArgs),
    /// CSV-driven empirical backtest.
    Backtest(BacktestArgs),
}

#[derive(Subcommand)]
enum OracleCmd {
    /// Constant-coefficient market: optimal allocation and value.
    Bs(OracleBsArgs),
    /// Well-posedness inequality verdict for the factor market.
    SvCondition(SvParamArgs),
    /// Closed-form and numeric bridge solutions.
    SvRiccati(SvRiccatiArgs),
}

#[derive(Args)]
struct OracleBsArgs {
    #[arg(long)]
    mu: f64,
    #[arg(long)]
    r: f64,
    #[arg(long)]
    sigma: f64,
    #[arg(long)]
    gamma: f64,
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    horizon: f64,
}

#[derive(Args, Clone)]
struct SvParamArgs {
    /// Defaults are the simulation-study parameter set.
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    r: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    iota: Option<f64>,
    #[arg(long)]
    x_bar: Option<f64>,
    #[arg(long)]
    nu_bar: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
}

impl SvParamArgs {
    fn params(&self, file: &FileConfig) -> Result<(SvParams, f64)> {
        let d = SvParams::simulation_study();
        let p = SvParams::new(
            resolve(self.delta, file, "delta", d.risk_premium_delta)?,
            resolve(self.r, file, "r", d.r)?,
            resolve(self.alpha, file, "alpha", d.alpha)?,
            resolve(self.iota, file, "iota", d.iota)?,
            resolve(self.x_bar, file, "x_bar", d.x_bar)?,
            resolve(self.nu_bar, file, "nu_bar", d.nu_bar)?,
            resolve(self.rho, file, "rho", d.rho)?,
        )?;
        Ok((p, resolve(self.gamma, file, "gamma", 3.0)?))
    }
}

#[derive(Args)]
struct SvRiccatiArgs {
    #[command(flatten)]
    sv: SvParamArgs,
    #[arg(long, default_value_t = 1.0)]
    horizon: f64,
    /// Also tabulate (t, a1, a0) at this many points.
    #[arg(long)]
    table: Option<usize>,
    /// Cross-check against the Runge-Kutta integration with this many steps.
    #[arg(long)]
    check_steps: Option<usize>,
}

#[derive(Args)]
struct ConvergenceArgs {
    /// Comma-separated temperatures.
    #[arg(long, value_delimiter = ',')]
    lambdas: Option<Vec<f64>>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Table1Args {
    #[arg(long)]
    runs: Option<usize>,
    /// Comma-separated subset of
    /// omniscient,bh,rl-specific,rl-network,est-sv,erm.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long)]
    noisy: bool,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ErmcmpArgs {
    #[arg(long, value_delimiter = ',')]
    lambdas: Option<Vec<f64>>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// window: episodes are windows of one simulated long dataset;
    /// fresh: every episode is an independent path.
    #[arg(long)]
    mode: Option<String>,
    /// specific or network.
    #[arg(long)]
    policy: Option<String>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    train_years: Option<f64>,
    #[arg(long)]
    noisy: bool,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BacktestArgs {
    /// Input CSV with header date,close,vix.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Last date of the pretraining window (ISO).
    #[arg(long)]
    pretrain_end: Option<String>,
    /// power-law or network.
    #[arg(long)]
    policy: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    r: Option<f64>,
    #[arg(long)]
    episodes: Option<usize>,
    /// Execute the mean allocation instead of sampling.
    #[arg(long)]
    execute_mean: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Flat-key JSON config file.
struct FileConfig(serde_json::Map<String, Value>);

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(FileConfig(serde_json::Map::new())),
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                let value: Value = serde_json::from_str(&text)?;
                match value {
                    Value::Object(map) => Ok(FileConfig(map)),
                    _ => Err(MertonError::Validation(
                        "config file must hold a JSON object".into(),
                    )),
                }
            }
        }
    }

    fn get<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(v) => serde_json::from_value(v.clone()).map(Some).map_err(|e| {
                MertonError::Validation(format!("config key '{key}': {e}"))
            }),
        }
    }
}

fn resolve<T: DeserializeOwned>(
    flag: Option<T>,
    file: &FileConfig,
    key: &str,
    default: T,
) -> Result<T> {
    Ok(match flag {
        Some(v) => v,
        None => file.get(key)?.unwrap_or(default),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Experiment(msg)) => {
            eprintln!("experiment failed: {msg}");
            ExitCode::from(1)
        }
    }
}

enum CliError {
    Usage(String),
    Experiment(String),
}

impl From<MertonError> for CliError {
    fn from(e: MertonError) -> Self {
        match e {
            MertonError::InvalidParameter(_) | MertonError::Validation(_) | MertonError::Parse { .. } => {
                CliError::Usage(e.to_string())
            }
            other => CliError::Experiment(other.to_string()),
        }
    }
}

fn run(cli: Cli) -> std::result::Result<(), CliError> {
    let file = FileConfig::load(cli.config.as_deref())?;
    let env_seed = std::env::var("MERTON_RL_SEED").ok().and_then(|s| s.parse().ok());
    let seed: u64 = match cli.seed {
        Some(s) => s,
        None => match file.get::<u64>("seed")? {
            Some(s) => s,
            None => env_seed.unwrap_or(DEFAULT_SEED),
        },
    };
    let workers = resolve(cli.workers, &file, "workers", 0usize)?;
    if workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
            .map_err(|e| CliError::Usage(format!("workers: {e}")))?;
    }

    match cli.command {
        Command::Oracle { what } => {
            let out = oracle_json(what, &file)?;
            println!("{}", serde_json::to_string_pretty(&out).unwrap());
            Ok(())
        }
        Command::Convergence(args) => {
            let cfg = ConvergenceConfig::standard(
                resolve(args.lambdas, &file, "lambdas", vec![0.01, 0.1, 1.0])?,
                resolve(args.runs, &file, "runs", 100)?,
                resolve(args.episodes, &file, "episodes", 10_000)?,
                seed,
            );
            let out_dir = resolve(args.out, &file, "out", PathBuf::from("out/convergence"))?;
            with_manifest(&out_dir, "convergence", seed, &cfg, &[], |dir| {
                let table = convergence_study(&cfg)?;
                let f = std::fs::File::create(dir.join("curves.csv"))?;
                table.write_csv(f)?;
                Ok(json!({ "rows": table.rows.len() }))
            })
        }
        Command::Ermcmp(args) => {
            let mut cfg = ConvergenceConfig::standard(
                resolve(args.lambdas, &file, "lambdas", vec![0.01, 0.1, 1.0])?,
                resolve(args.runs, &file, "runs", 100)?,
                resolve(args.episodes, &file, "episodes", 10_000)?,
                seed,
            );
            cfg.include_erm = true;
            let out_dir = resolve(args.out, &file, "out", PathBuf::from("out/ermcmp"))?;
            with_manifest(&out_dir, "ermcmp", seed, &cfg, &[], |dir| {
                let table = erm_comparison(&cfg)?;
                let f = std::fs::File::create(dir.join("curves.csv"))?;
                table.write_csv(f)?;
                Ok(json!({ "rows": table.rows.len() }))
            })
        }
        Command::Table1(args) => {
            let method_names = resolve(
                args.methods,
                &file,
                "methods",
                vec![
                    "omniscient".into(),
                    "bh".into(),
                    "rl-specific".into(),
                    "rl-network".into(),
                    "est-sv".into(),
                ],
            )?;
            let methods: Result<Vec<Method>> =
                method_names.iter().map(|m| m.parse()).collect();
            let mut cfg = SimExperimentConfig::standard(
                methods?,
                resolve(args.runs, &file, "runs", 100)?,
                args.noisy || file.get("noisy")?.unwrap_or(false),
                seed,
            );
            cfg.n_test = resolve(args.n_test, &file, "n_test", cfg.n_test)?;
            cfg.learn.episodes = resolve(args.episodes, &file, "episodes", cfg.learn.episodes)?;
            let out_dir = resolve(args.out, &file, "out", PathBuf::from("out/table1"))?;
            with_manifest(&out_dir, "table1", seed, &cfg, &[], |dir| {
                let report = simulation_experiment(&cfg)?;
                std::fs::write(
                    dir.join("table1.json"),
                    serde_json::to_string_pretty(&report)?,
                )?;
                let mut w = csv::Writer::from_path(dir.join("table1.csv"))?;
                w.write_record([
                    "method",
                    "mean_utility",
                    "se_utility",
                    "mean_erwl",
                    "se_erwl",
                    "failed_runs",
                    "runs_used",
                ])?;
                for row in &report.rows {
                    w.write_record([
                        row.method.clone(),
                        format!("{:.6}", row.mean_utility),
                        format!("{:.6}", row.se_utility),
                        format!("{:.6}", row.mean_erwl),
                        format!("{:.6}", row.se_erwl),
                        row.failed_runs.to_string(),
                        row.runs_used.to_string(),
                    ])?;
                }
                w.flush()?;
                Ok(serde_json::to_value(&report).unwrap())
            })
        }
        Command::Train(args) => run_train(args, &file, seed),
        Command::Backtest(args) => run_backtest_cmd(args, &file, seed),
    }
}

fn oracle_json(cmd: OracleCmd, file: &FileConfig) -> Result<Value> {
    match cmd {
        OracleCmd::Bs(a) => {
            let p = BsParams::new(a.mu, a.r, a.sigma)?;
            let gt = bs_ground_truth(&p, a.gamma, a.lambda, a.horizon)?;
            Ok(json!({
                "theta_star": gt.theta_star,
                "value_rate": gt.value_rate,
                "value_at_start": gt.value(0.0, 1.0),
                "value_deterministic_at_start": gt.value_deterministic(0.0, 1.0),
                "erwl_exploratory": erwl_exploratory(a.lambda, a.horizon),
            }))
        }
        OracleCmd::SvCondition(a) => {
            let (p, gamma) = a.params(file)?;
            let lhs = p.iota * p.iota * gamma;
            let rhs = (1.0 - gamma)
                * (2.0 * p.rho * p.iota * p.risk_premium_delta * p.nu_bar
                    + (p.risk_premium_delta * p.nu_bar).powi(2));
            Ok(json!({
                "condition_holds": sv_condition(&p, gamma),
                "lhs": lhs,
                "rhs": rhs,
                "params": p,
                "gamma": gamma,
            }))
        }
        OracleCmd::SvRiccati(a) => {
            let (p, gamma) = a.sv.params(file)?;
            let sol = sv_riccati_closed_form(&p, gamma, a.horizon)?;
            let mut out = json!({
                "well_posed": sol.is_well_posed(),
                "pole_tau": sol.pole_tau(),
                "solution": sol,
            });
            if sol.is_well_posed() {
                out["a1_at_start"] = json!(sol.a1(0.0)?);
                out["a0_at_start"] = json!(sol.a0(0.0)?);
                out["value_exponent_at_x_bar"] = json!(sol.value_exponent(0.0, p.x_bar)?);
            }
            if let Some(n) = a.table {
                let mut rows = Vec::new();
                for i in 0..=n {
                    let t = a.horizon * i as f64 / n.max(1) as f64;
                    if let (Ok(a1), Ok(a0)) = (sol.a1(t), sol.a0(t)) {
                        rows.push(json!({ "t": t, "a1": a1, "a0": a0 }));
                    }
                }
                out["table"] = json!(rows);
            }
            if let Some(steps) = a.check_steps {
                let num = sv_riccati_numeric(&p, gamma, a.horizon, steps)?;
                let mut sup: f64 = 0.0;
                for i in 0..=200 {
                    let t = a.horizon * i as f64 / 200.0;
                    if let (Ok(c1), Ok(n1), Ok(c0), Ok(n0)) =
                        (sol.a1(t), num.a1(t), sol.a0(t), num.a0(t))
                    {
                        sup = sup.max((c1 - n1).abs()).max((c0 - n0).abs());
                    }
                }
                out["runge_kutta_sup_error"] = json!(sup);
            }
            Ok(out)
        }
    }
}

fn run_train(args: TrainArgs, file: &FileConfig, seed: u64) -> std::result::Result<(), CliError> {
    let mode = resolve(args.mode, file, "mode", "window".to_string())?;
    let policy_kind = resolve(args.policy, file, "policy", "specific".to_string())?;
    let lambda = resolve(args.lambda, file, "lambda", 0.1)?;
    let gamma = resolve(args.gamma, file, "gamma", 3.0)?;
    let sv = SvParams::simulation_study();
    let horizon = 1.0;
    let dt = 1.0 / 250.0;
    let grid = TimeGrid::from_dt(0.0, horizon, dt)?;
    let noisy = args.noisy || file.get("noisy")?.unwrap_or(false);

    let default_rate = if policy_kind == "network" {
        merton_rl::evaluation::NETWORK_BASE_RATE
    } else {
        0.01
    };
    let mut learn = LearnConfig::simulation_study();
    learn.episodes = resolve(args.episodes, file, "episodes", 2000)?;
    learn.batch_size = resolve(args.batch, file, "batch", 16)?;
    let rate = resolve(args.rate, file, "rate", default_rate)?;
    learn.l_theta = rate;
    learn.l_psi = rate;
    learn.r = sv.r;

    let seed_spec = SeedSpec::new(seed);
    let (mean_fn, critic) = match policy_kind.as_str() {
        "specific" => (
            MeanFn::SpecificForm(SpecificFormTheta::neutral()),
            Critic::SpecificForm(ValuePsi::neutral()),
        ),
        "network" => {
            let mut rng = seed_spec.stream(0, StreamTag::PolicyInit);
            let mean = MeanFn::FeedForward(Mlp::glorot(&Mlp::DEFAULT_WIDTHS, &mut rng));
            let mut rng = seed_spec.stream(1, StreamTag::PolicyInit);
            (mean, Critic::Network(Mlp::glorot(&Mlp::DEFAULT_WIDTHS, &mut rng)))
        }
        other => return Err(CliError::Usage(format!("unknown policy '{other}'"))),
    };
    let policy = GaussianPolicy::new(mean_fn, lambda, gamma, horizon)?;
    let state = TrainState::new(policy, critic);

    // test set and ERWL conversion for the learning curve
    let n_test = resolve(args.n_test, file, "n_test", 10_000)?;
    let eval_every = resolve(args.eval_every, file, "eval_every", 200)?;
    let sim_cfg = SimExperimentConfig {
        n_test,
        noisy,
        ..SimExperimentConfig::standard(vec![], 1, noisy, seed)
    };
    let test_paths = build_test_set(&sim_cfg)?;
    let sol = sv_riccati_closed_form(&sv, gamma, horizon)?;
    let exponent0 = sol.value_exponent(0.0, sim_cfg.x0)?;
    let w0 = sim_cfg.w0;
    let evaluate = move |p: &GaussianPolicy| -> f64 {
        let policy: MeanPolicy = &|t, g| p.mean_fn.eval(t, g, p.horizon);
        average_utility(policy, &test_paths, w0, sv.r, gamma, noisy)
            .map(|r| r.average_utility)
            .unwrap_or(f64::NAN)
    };
    let erwl_fn = move |u: f64| {
        merton_rl::oracle::erwl_from_utility(u, w0, exponent0, gamma).unwrap_or(f64::NAN)
    };

    let train_years = resolve(args.train_years, file, "train_years", 20.0)?;
    let out_dir = resolve(args.out, file, "out", PathBuf::from("out/train"))?;
    let cfg_json = json!({
        "mode": mode, "policy": policy_kind, "lambda": lambda, "gamma": gamma,
        "episodes": learn.episodes, "batch": learn.batch_size, "rate": rate,
        "train_years": train_years, "noisy": noisy, "n_test": n_test,
        "eval_every": eval_every,
    });
    with_manifest(&out_dir, "train", seed, &cfg_json, &[], |dir| {
        let record = match mode.as_str() {
            "window" => {
                let train_grid = TimeGrid::from_dt(0.0, train_years, dt)?;
                let mut rng = seed_spec.stream(0, StreamTag::TrainingMarket);
                let mut path = simulate_sv_path(&sv, &train_grid, sim_cfg.x0, &mut rng)?;
                if noisy {
                    merton_rl::market::attach_noisy_volatility(
                        &mut path,
                        merton_rl::market::NOISY_VOL_SCALE,
                        &seed_spec,
                        0,
                    );
                }
                let g_obs = path.observed_g(noisy).to_vec();
                let source = EpisodeSource::Window {
                    s: &path.s,
                    g_observed: &g_obs,
                    episode_steps: grid.steps,
                    dt,
                };
                train(&learn, &source, state, &seed_spec, eval_every, Some(&evaluate), Some(&erwl_fn))?
            }
            "fresh" => {
                let source = EpisodeSource::Fresh {
                    params: sv,
                    x0: sim_cfg.x0,
                    grid,
                    noise_scale: noisy.then_some(merton_rl::market::NOISY_VOL_SCALE),
                };
                train(&learn, &source, state, &seed_spec, eval_every, Some(&evaluate), Some(&erwl_fn))?
            }
            other => return Err(MertonError::InvalidParameter(format!("unknown mode '{other}'"))),
        };

        let mut w = csv::Writer::from_path(dir.join("curve.csv"))?;
        w.write_record(["episode", "theta", "psi", "test_utility", "erwl"])?;
        for point in &record.curve {
            w.write_record([
                point.episode.to_string(),
                join_floats(&point.theta),
                join_floats(&point.psi),
                point.test_utility.map(|v| format!("{v:.8}")).unwrap_or_default(),
                point.erwl.map(|v| format!("{v:.8}")).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        std::fs::write(
            dir.join("state.json"),
            serde_json::to_string_pretty(&record.state)?,
        )?;
        let last = record.curve.last();
        Ok(json!({
            "episodes": record.state.episodes_seen,
            "final_test_utility": last.and_then(|p| p.test_utility),
            "final_erwl": last.and_then(|p| p.erwl),
        }))
    })
}

fn join_floats(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.8}")).collect::<Vec<_>>().join(";")
}

fn run_backtest_cmd(
    args: BacktestArgs,
    file: &FileConfig,
    seed: u64,
) -> std::result::Result<(), CliError> {
    let data = resolve(args.data, file, "data", PathBuf::new())?;
    if data.as_os_str().is_empty() {
        return Err(CliError::Usage("--data <csv> is required".into()));
    }
    let pretrain_end = resolve(args.pretrain_end, file, "pretrain_end", String::new())?;
    if pretrain_end.is_empty() {
        return Err(CliError::Usage("--pretrain-end <YYYY-MM-DD> is required".into()));
    }
    let pretrain_end = chrono::NaiveDate::parse_from_str(&pretrain_end, "%Y-%m-%d")
        .map_err(|e| CliError::Usage(format!("bad pretrain-end: {e}")))?;
    let policy_kind = resolve(args.policy, file, "policy", "power-law".to_string())?;

    let mut cfg = BacktestConfig::standard(pretrain_end, seed);
    cfg.policy = match policy_kind.as_str() {
        "power-law" => BacktestPolicyKind::PowerLaw,
        "network" => BacktestPolicyKind::Network,
        other => return Err(CliError::Usage(format!("unknown policy '{other}'"))),
    };
    cfg.lambda = resolve(args.lambda, file, "lambda", cfg.lambda)?;
    cfg.gamma = resolve(args.gamma, file, "gamma", cfg.gamma)?;
    cfg.r = resolve(args.r, file, "r", cfg.r)?;
    cfg.pretrain.episodes = resolve(args.episodes, file, "episodes", cfg.pretrain.episodes)?;
    cfg.execute_mean = args.execute_mean || file.get("execute_mean")?.unwrap_or(false);

    let out_dir = resolve(args.out, file, "out", PathBuf::from("out/backtest"))?;
    let series = load_market_csv_path(&data)?;
    let inputs = vec![data.clone()];
    with_manifest(&out_dir, "backtest", seed, &cfg, &inputs, |dir| {
        let result = run_backtest(&series, &cfg)?;
        emit_results(dir, &result)?;
        Ok(json!({
            "test_days": result.dates.len(),
            "est_sv_fallback_days": result.est_sv_fallback_days,
            "metrics": result.metrics,
        }))
    })
}

/// Run an experiment body, writing `manifest.json` (config, seed, input
/// hashes, status) into the output directory whether it succeeds or fails.
fn with_manifest<C: serde::Serialize>(
    out_dir: &Path,
    command: &str,
    seed: u64,
    config: &C,
    inputs: &[PathBuf],
    body: impl FnOnce(&Path) -> Result<Value>,
) -> std::result::Result<(), CliError> {
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::Experiment(e.to_string()))?;
    let mut hashes = serde_json::Map::new();
    for input in inputs {
        let bytes = std::fs::read(input).map_err(|e| CliError::Usage(format!("{input:?}: {e}")))?;
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        hashes.insert(
            input.display().to_string(),
            Value::String(format!("{:x}", hasher.finalize())),
        );
    }
    let mut manifest = json!({
        "command": command,
        "master_seed": seed,
        "config": serde_json::to_value(config).unwrap(),
        "input_hashes": hashes,
        "status": "running",
        "error": Value::Null,
        "summary": Value::Null,
    });
    let write_manifest = |m: &Value| -> Result<()> {
        std::fs::write(out_dir.join("manifest.json"), serde_json::to_string_pretty(m)?)?;
        Ok(())
    };
    match body(out_dir) {
        Ok(summary) => {
            manifest["status"] = json!("ok");
            manifest["summary"] = summary;
            write_manifest(&manifest).map_err(|e| CliError::Experiment(e.to_string()))?;
            Ok(())
        }
        Err(e) => {
            manifest["status"] = json!("error");
            manifest["error"] = json!(e.to_string());
            let _ = write_manifest(&manifest);
            Err(e.into())
        }
    }
}

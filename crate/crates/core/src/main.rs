use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use kzcoarse::cli::config::{ClassRef, EngineParams, EvalFunction, ScalingParams};
use kzcoarse::cli::{self, run::run_scaling, CliError, ConfigErrors, EngineKind, RunConfig, RunDir, RunStatus};
use kzcoarse::scaling::{Amplitudes, MicroScales, RampProtocol, StopSide};

/// Kibble-Zurek and coarsening toolkit.
#[derive(Parser)]
#[command(name = "kzcoarse", version)]
struct Cli {
    /// Worker threads for replica-parallel engines (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log progress to stderr; repeat for more detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Run config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replace the config's seeds with N, N+1, ... (same count).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct ClassArgs {
    /// Universality class name.
    #[arg(long, default_value = "ising-2+1d")]
    class: String,
    /// Extra exponent registry (JSON).
    #[arg(long)]
    registry: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct RampArgs {
    #[arg(long)]
    tau: Option<f64>,
    /// Ramp power.
    #[arg(long, default_value_t = 1.0)]
    p: f64,
    /// Stop the drive at this coupling.
    #[arg(long)]
    g_stop: Option<f64>,
    #[arg(long)]
    t_hold: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    l0: f64,
    #[arg(long, default_value_t = 1.0)]
    t0: f64,
}

impl RampArgs {
    fn protocol(&self) -> Result<RampProtocol, CliError> {
        let tau = self.tau.ok_or_else(|| CliError::Usage("--tau is required without --config".into()))?;
        Ok(RampProtocol { tau, p: self.p, g_s: self.g_stop, t_hold: self.t_hold })
    }

    fn micro(&self) -> MicroScales {
        MicroScales { l0: self.l0, t0: self.t0 }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Freeze-out time, length and coupling for a ramp.
    Scales {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        class: ClassArgs,
        #[command(flatten)]
        ramp: RampArgs,
    },
    /// Growth exponent of the length during a sweep with power p.
    Exponent {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        class: ClassArgs,
        #[arg(long, default_value_t = 1.0)]
        p: f64,
    },
    /// Coarsening case of a (possibly stopped) ramp.
    Classify {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        class: ClassArgs,
        #[command(flatten)]
        ramp: RampArgs,
        /// ordered, critical or disordered.
        #[arg(long)]
        side: Option<String>,
        #[arg(long)]
        x_c: Option<f64>,
    },
    /// Evaluate a scaling function on a list of points.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        class: ClassArgs,
        /// f, F, h or x_star.
        #[arg(long)]
        function: Option<String>,
        /// Comma-separated arguments.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        points: Vec<f64>,
        #[arg(long, default_value_t = 1.0)]
        p: f64,
        #[arg(long, allow_hyphen_values = true)]
        x_s: Option<f64>,
    },
    /// Run a tfim1d, ising2d or rydberg config.
    Simulate(RunArgs),
    /// Fit a series or measure lengths from stored snapshots.
    Estimate(RunArgs),
    /// Scaling collapse of length curves.
    Collapse(RunArgs),
    /// Print a run's summary and re-check its file hashes.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Validate a config without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::from(cli::EXIT_OK as u8),
        Err(e) => {
            match &e {
                CliError::Config(errs) => {
                    eprintln!("config error:");
                    for i in &errs.0 {
                        eprintln!("  {i}");
                    }
                }
                other => eprintln!("error: {other}"),
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn print_json(v: &Value) {
    use std::io::Write;
    let text = serde_json::to_string_pretty(v).expect("serializable");
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn named(class: &ClassArgs) -> (ClassRef, Option<PathBuf>) {
    (ClassRef::Named(class.class.clone()), class.registry.clone())
}

/// Run a scaling task inline, or the config if one was given.
fn scaling(run: RunArgs, task: &str, build: impl FnOnce() -> Result<ScalingParams, CliError>) -> Result<(), CliError> {
    if run.config.is_some() {
        return run_config(&run, |cfg| match &cfg.engine {
            EngineParams::Scaling(p) if task_name(p) == task => Ok(()),
            _ => Err(format!("`{task}` expects a scaling config with task `{task}`")),
        });
    }
    let params = build()?;
    let cfg = cli::config::parse_config(
        &json!({ "engine": "scaling", "params": params }).to_string(),
        Path::new("."),
    )?;
    let EngineParams::Scaling(p) = &cfg.engine else { unreachable!() };
    let results = run_scaling(p, None)?;
    print_json(&json!({ "schema_version": cli::SCHEMA_VERSION, "engine": "scaling", "results": results }));
    Ok(())
}

fn task_name(p: &ScalingParams) -> &'static str {
    match p {
        ScalingParams::Scales { .. } => "scales",
        ScalingParams::Exponent { .. } => "exponent",
        ScalingParams::Classify { .. } => "classify",
        ScalingParams::Eval { .. } => "eval",
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Scales { run, class, ramp } => scaling(run, "scales", || {
            let (class, registry) = named(&class);
            Ok(ScalingParams::Scales { class, registry, micro: ramp.micro(), protocol: ramp.protocol()? })
        }),
        Command::Exponent { run, class, p } => scaling(run, "exponent", || {
            let (class, registry) = named(&class);
            Ok(ScalingParams::Exponent { class, registry, p })
        }),
        Command::Classify { run, class, ramp, side, x_c } => scaling(run, "classify", || {
            let (class, registry) = named(&class);
            let side: StopSide = parse_enum("--side", side.as_deref())?;
            Ok(ScalingParams::Classify {
                class,
                registry,
                micro: ramp.micro(),
                protocol: ramp.protocol()?,
                side,
                amplitudes: Amplitudes::default(),
                x_c,
            })
        }),
        Command::Eval { run, class, function, points, p, x_s } => scaling(run, "eval", || {
            let (class, registry) = named(&class);
            let function: EvalFunction = parse_enum("--function", function.as_deref())?;
            if points.is_empty() {
                return Err(CliError::Usage("--points is required without --config".into()));
            }
            Ok(ScalingParams::Eval { class, registry, function, points, p, x_s, amplitudes: Amplitudes::default(), x_c: None, y_c: None })
        }),
        Command::Simulate(run) => run_config(&run, |cfg| match cfg.kind() {
            EngineKind::Tfim1d | EngineKind::Ising2d | EngineKind::Rydberg => Ok(()),
            k => Err(format!("`simulate` runs tfim1d, ising2d or rydberg configs, not {}", k.name())),
        }),
        Command::Estimate(run) => run_config(&run, |cfg| match cfg.kind() {
            EngineKind::Estimate => Ok(()),
            k => Err(format!("`estimate` expects an estimate config, not {}", k.name())),
        }),
        Command::Collapse(run) => run_config(&run, |cfg| match cfg.kind() {
            EngineKind::Collapse => Ok(()),
            k => Err(format!("`collapse` expects a collapse config, not {}", k.name())),
        }),
        Command::Report { dir } => report(&dir),
        Command::Validate { config } => {
            let cfg = cli::validate_config(&config)?;
            print_json(&serde_json::to_value(&cfg).expect("serializable"));
            Ok(())
        }
    }
}

fn parse_enum<T: serde::de::DeserializeOwned>(flag: &str, value: Option<&str>) -> Result<T, CliError> {
    let v = value.ok_or_else(|| CliError::Usage(format!("{flag} is required without --config")))?;
    serde_json::from_value(Value::String(v.into())).map_err(|e| CliError::Usage(format!("{flag}: {e}")))
}

fn config_error(path: &str, message: impl Into<String>) -> CliError {
    CliError::Config(ConfigErrors(vec![cli::ConfigIssue { path: path.into(), message: message.into() }]))
}

fn output_dir(run: &RunArgs, config_path: &Path, cfg: &RunConfig) -> PathBuf {
    if let Some(o) = &run.out {
        return o.clone();
    }
    if let Some(o) = &cfg.output {
        return if o.is_absolute() { o.clone() } else { config_path.parent().unwrap_or(Path::new("")).join(o) };
    }
    let stem = config_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
    match std::env::var_os("KZCOARSE_OUT") {
        Some(root) if !root.is_empty() => PathBuf::from(root).join(stem),
        _ => PathBuf::from("runs").join(stem),
    }
}

fn run_config(run: &RunArgs, accept: impl FnOnce(&RunConfig) -> Result<(), String>) -> Result<(), CliError> {
    let path = run.config.as_ref().ok_or_else(|| CliError::Usage("--config is required".into()))?;
    let text = std::fs::read_to_string(path).map_err(|e| config_error("$", format!("cannot read {}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut cfg = cli::parse_config(&text, &base)?;
    accept(&cfg).map_err(|m| config_error("engine", m))?;
    if let Some(s) = run.seed {
        let n = cfg.seeds.len() as u64;
        cfg.seeds = (0..n).map(|i| s.wrapping_add(i)).collect();
    }
    let dir = output_dir(run, path, &cfg);
    if dir.join(cli::output::MANIFEST_FILE).exists() {
        log::warn!("overwriting the run in {}", dir.display());
    }
    let io = |context: &str| {
        let context = context.to_string();
        move |source| CliError::Io { context, source }
    };
    let mut out = RunDir::create(&dir, &text, &cfg, run.seed).map_err(io("create run directory"))?;
    log::info!("{} run into {}", cfg.kind().name(), dir.display());
    match cli::run(&cfg, &mut out) {
        Ok(summary) => {
            out.finish(RunStatus::Complete, None).map_err(io("write manifest"))?;
            print_json(&summary);
            Ok(())
        }
        Err(e) => {
            out.finish(RunStatus::Failed, Some(e.stage.clone())).map_err(io("write manifest"))?;
            Err(e.into())
        }
    }
}

fn report(dir: &Path) -> Result<(), CliError> {
    let manifest = cli::read_manifest(dir).map_err(|e| config_error("dir", format!("no readable manifest in {}: {e}", dir.display())))?;
    let verify = cli::verify_run(dir, &manifest);
    let summary: Option<Value> =
        std::fs::read_to_string(dir.join("summary.json")).ok().and_then(|t| serde_json::from_str(&t).ok());
    print_json(&json!({
        "schema_version": cli::SCHEMA_VERSION,
        "engine": manifest.engine,
        "status": manifest.status,
        "failed_stage": manifest.failed_stage,
        "seeds": manifest.seeds,
        "wall_clock_seconds": manifest.wall_clock_seconds,
        "verify": verify,
        "summary": summary,
    }));
    if !verify.mismatched.is_empty() || !verify.missing.is_empty() {
        return Err(CliError::Usage(format!(
            "{} file(s) changed, {} missing",
            verify.mismatched.len(),
            verify.missing.len()
        )));
    }
    Ok(())
}

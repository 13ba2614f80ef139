use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use serde::Serialize;

use planstyle_core::experiments::{self, byte_offset, ExperimentConfig, Manifest, Setting};
use planstyle_core::gridworld::{
    build_gridworld, build_layout_gridworld, make_initial_pdm, make_pp_sequence, make_transposed_task, GridSpec,
};
use planstyle_core::model_space::{assess, ModelClassReport, PolicyPair, Reference, TieMode};
use planstyle_core::planners::AgentRng;
use planstyle_core::plot::{render_svg, PlotOptions};
use planstyle_core::{Error, ModelView, Policy, TabularMdp};

#[derive(Parser)]
#[command(name = "planstyle", version, about = "Compare decision-time and background planning on tabular tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write an environment or hand-designed model as MDP JSON.
    BuildEnv(BuildEnvArgs),
    /// Classify a model against a reference MDP.
    Classify(ClassifyArgs),
    /// Run an experiment and write raw.csv, summary.csv and manifest.json.
    Run(RunArgs),
    /// Render a summary CSV as SVG.
    Plot(PlotArgs),
    /// Check config and MDP files without running anything.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct BuildEnvArgs {
    /// Grid description (TOML or JSON); the default grid when omitted.
    #[arg(long, conflicts_with = "layout")]
    config: Option<PathBuf>,
    /// ASCII map instead of a grid description.
    #[arg(long)]
    layout: Option<PathBuf>,
    /// Which MDP to emit.
    #[arg(long, value_enum, default_value_t = Variant::Env)]
    variant: Variant,
    /// Index into the pure-planning model sequence (with `--variant pp-model`).
    #[arg(long, default_value_t = 0)]
    index: usize,
    /// Length of the pure-planning model sequence.
    #[arg(long, default_value_t = 10)]
    models: usize,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Variant {
    Env,
    InitialModel,
    Transposed,
    PpModel,
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    /// Seed of the random deterministic base policy.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Check every tied optimal policy, up to this many.
    #[arg(long)]
    enumerate_ties: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML, or JSON by extension).
    #[arg(long, conflicts_with_all = ["setting", "manifest"])]
    config: Option<PathBuf>,
    /// Run a setting with default parameters.
    #[arg(long, conflicts_with = "manifest")]
    setting: Option<String>,
    /// Rerun the config recorded in a manifest and compare checksums.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output directory; `results/<setting>-<config hash>` when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long, env = "PLANSTYLE_THREADS")]
    threads: Option<usize>,
}

#[derive(Args)]
struct PlotArgs {
    /// summary.csv written by `run`.
    #[arg(long)]
    summary: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// MDP JSON used for the optimal and random-policy reference lines.
    #[arg(long)]
    env: Option<PathBuf>,
    #[arg(long)]
    title: Option<String>,
    /// Plot total reward instead of performance.
    #[arg(long)]
    total_reward: bool,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// MDP JSON files.
    #[arg(long = "mdp")]
    mdps: Vec<PathBuf>,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Failure { code: 2, message: message.into() }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Parse(_) | Error::Io(_) | Error::Csv(_) => 2,
            Error::Invalid(_) | Error::ShapeMismatch(_) => 3,
            Error::NoConvergence { .. } | Error::BudgetExceeded { .. } | Error::Planner(_) => 4,
        };
        Failure { code, message: e.to_string() }
    }
}

type CliResult<T> = Result<T, Failure>;

fn read(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn write(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::input(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "json")
}

fn load_mdp(path: &Path) -> CliResult<TabularMdp> {
    let text = read(path)?;
    serde_json::from_str(&text).map_err(|e| {
        Failure::input(format!(
            "{}: {e} (byte offset {})",
            path.display(),
            byte_offset(&text, e.line(), e.column())
        ))
    })
}

fn load_grid(path: &Path) -> CliResult<GridSpec> {
    let text = read(path)?;
    let spec: GridSpec = if is_json(path) {
        serde_json::from_str(&text).map_err(|e| {
            Failure::input(format!("{}: {e} (byte offset {})", path.display(), byte_offset(&text, e.line(), e.column())))
        })?
    } else {
        toml::from_str(&text).map_err(|e| {
            let at = e.span().map(|s| format!(" (byte offset {})", s.start)).unwrap_or_default();
            Failure::input(format!("{}: {}{at}", path.display(), e.message()))
        })?
    };
    spec.validate().map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    Ok(spec)
}

fn load_config(path: &Path) -> CliResult<ExperimentConfig> {
    let cfg = ExperimentConfig::load(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    cfg.validate().map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    Ok(cfg)
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("reports serialize"));
}

fn build_env(args: BuildEnvArgs) -> CliResult<()> {
    let mdp = if let Some(layout) = &args.layout {
        if !matches!(args.variant, Variant::Env) {
            return Err(Failure::input("--layout only supports --variant env"));
        }
        build_layout_gridworld(&read(layout)?)?.mdp
    } else {
        let spec = match &args.config {
            Some(p) => load_grid(p)?,
            None => GridSpec::default(),
        };
        match args.variant {
            Variant::Env => build_gridworld(&spec)?.mdp,
            Variant::InitialModel => make_initial_pdm(&spec)?.mdp,
            Variant::Transposed => make_transposed_task(&spec)?.1.mdp,
            Variant::PpModel => {
                let mut seq = make_pp_sequence(&spec, args.models)?;
                if args.index >= seq.len() {
                    return Err(Failure { code: 3, message: format!("--index {} out of range 0..{}", args.index, seq.len()) });
                }
                seq.swap_remove(args.index).world.mdp
            }
        }
    };
    let json = mdp.to_json() + "\n";
    match &args.out {
        Some(p) => write(p, json.as_bytes()),
        None => {
            print!("{json}");
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct ClassifyOutput {
    base_seed: u64,
    pair: PolicyPair,
    report: ModelClassReport,
}

fn classify(args: ClassifyArgs) -> CliResult<()> {
    let model = load_mdp(&args.model)?;
    let reference = load_mdp(&args.reference)?;
    model.check_same_space(&reference)?;
    let mut rng = AgentRng::seed_from_u64(args.seed);
    let base = Policy::random_deterministic(reference.num_states(), reference.num_actions(), &mut rng);
    let tie_mode = args.enumerate_ties.map_or(TieMode::Canonical, TieMode::EnumerateTies);
    let id = args.model.display().to_string();
    let (pair, report) = assess(&model, &Reference::new(&reference)?, &base, &id, tie_mode)?;
    print_json(&ClassifyOutput { base_seed: args.seed, pair, report });
    Ok(())
}

fn run(args: RunArgs) -> CliResult<()> {
    let (mut cfg, expected) = match (&args.config, &args.setting, &args.manifest) {
        (Some(p), _, _) => (load_config(p)?, None),
        (_, Some(s), _) => (ExperimentConfig::new(s.parse::<Setting>().map_err(|e| Failure::input(e.to_string()))?), None),
        (_, _, Some(p)) => {
            let text = read(p)?;
            let m: Manifest = serde_json::from_str(&text).map_err(|e| {
                Failure::input(format!("{}: {e} (byte offset {})", p.display(), byte_offset(&text, e.line(), e.column())))
            })?;
            (m.config, Some(m.outputs))
        }
        _ => return Err(Failure::input("one of --config, --setting or --manifest is required")),
    };
    if let Some(seed) = args.seed {
        cfg.seed_base = seed;
    }
    if let Some(runs) = args.runs {
        cfg.num_runs = runs;
    }
    if let Some(episodes) = args.episodes {
        if cfg.setting == Setting::Pp {
            cfg.pp_models = episodes;
        }
        cfg.episodes = Some(episodes);
    }
    let cfg = cfg.resolved();
    cfg.validate().map_err(|e| Failure::input(e.to_string()))?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("results").join(format!("{}-{}", cfg.setting, &cfg.hash()[..8])));

    let started = Instant::now();
    let result = experiments::run_experiment(&cfg, args.threads)?;
    let manifest = experiments::write_outputs(&out, &result, started.elapsed().as_secs_f64())?;

    let violations = match cfg.setting {
        Setting::Pp | Setting::Pl => experiments::certificate_violations(cfg.setting, &result.rows),
        _ => Vec::new(),
    };
    for v in &violations {
        eprintln!("certificate violated: {v}");
    }
    eprintln!(
        "wrote {} rows to {} in {:.1}s",
        result.rows.len(),
        out.display(),
        manifest.wall_time_secs
    );
    if let Some(expected) = expected {
        if expected != manifest.outputs {
            return Err(Failure { code: 4, message: "outputs differ from the manifest checksums".into() });
        }
        eprintln!("outputs match the manifest checksums");
    }
    if !violations.is_empty() {
        return Err(Failure { code: 4, message: format!("{} certificate violations", violations.len()) });
    }
    Ok(())
}

fn plot(args: PlotArgs) -> CliResult<()> {
    let rows = experiments::read_summary(&args.summary).map_err(|e| Failure::input(format!("{}: {e}", args.summary.display())))?;
    let mut opts = PlotOptions { title: args.title, total_reward: args.total_reward, ..PlotOptions::default() };
    if let Some(env) = &args.env {
        let (opt, random) = experiments::reference_lines(&load_mdp(env)?)?;
        opts.optimal = Some(opt);
        opts.random = Some(random);
    }
    write(&args.out, render_svg(&rows, &opts).as_bytes())
}

fn validate(args: ValidateArgs) -> CliResult<()> {
    if args.config.is_none() && args.mdps.is_empty() {
        return Err(Failure::input("nothing to validate: pass --config and/or --mdp"));
    }
    if let Some(p) = &args.config {
        load_config(p)?;
        println!("{}: ok", p.display());
    }
    for p in &args.mdps {
        load_mdp(p)?;
        println!("{}: ok", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::BuildEnv(a) => build_env(a),
        Command::Classify(a) => classify(a),
        Command::Run(a) => run(a),
        Command::Plot(a) => plot(a),
        Command::Validate(a) => validate(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}

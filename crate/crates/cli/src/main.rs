//! `gpslab`: terrain generation, demonstrations, guided policy search
//! training, evaluation and trace export.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use gpslab::config::{Config, TerrainSpec};
use gpslab::policy::PolicyParams;
use gpslab::terrain::Terrain;
use gpslab::{demo, eval, gps, rollout};

#[derive(Debug, Parser)]
#[command(name = "gpslab", version, about = "Guided policy search for a planar biped")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// RNG seed; overrides the config's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a terrain and write it to a file.
    Terrain {
        /// Minimum terrain length in metres.
        #[arg(long, default_value_t = 10.0)]
        extent: f64,
    },
    /// Synthesize the scripted demonstration on a terrain and write its trace.
    Demo {
        /// `flat`, a terrain seed, or a terrain file.
        #[arg(long, default_value = "flat")]
        terrain: String,
        /// Number of control steps (default: config horizon).
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Run guided policy search; writes a checkpoint and the training log.
    Train {
        /// Config override, `key=value`; repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Evaluate a checkpoint on the config's training and test terrains.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Trials per terrain (default: config `eval_trials`).
        #[arg(long)]
        trials: Option<usize>,
        /// Override the test set, e.g. `101-110` or `flat,3`.
        #[arg(long)]
        terrains: Option<String>,
    },
    /// Roll out a checkpoint once and write the trajectory trace.
    Rollout {
        #[arg(long)]
        checkpoint: PathBuf,
        /// `flat`, a terrain seed, or a terrain file.
        #[arg(long, default_value = "flat")]
        terrain: String,
        /// Number of control steps (default: config horizon).
        #[arg(long)]
        horizon: Option<usize>,
    },
}

/// Failure classes, mapped to exit codes.
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn runtime(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Usage(e) | Failure::Runtime(e)) = &f;
            eprintln!("error: {e:#}");
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: Cli) -> Outcome {
    let g = &cli.global;
    if let Some(n) = g.threads {
        if n == 0 {
            return Err(usage(anyhow!("--threads must be at least 1")));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(runtime)?;
    }
    match &cli.command {
        Command::Terrain { extent } => cmd_terrain(g, *extent),
        Command::Demo { terrain, horizon } => cmd_demo(g, terrain, *horizon),
        Command::Train { overrides } => cmd_train(g, overrides),
        Command::Eval {
            checkpoint,
            trials,
            terrains,
        } => cmd_eval(g, checkpoint, *trials, terrains.as_deref()),
        Command::Rollout {
            checkpoint,
            terrain,
            horizon,
        } => cmd_rollout(g, checkpoint, terrain, *horizon),
    }
}

/// The config file (or defaults) with the global seed applied.
fn load_config(g: &Global, overrides: &[String]) -> Result<Config, Failure> {
    let mut cfg = match &g.config {
        Some(p) => Config::load(p).map_err(usage)?,
        None => Config::default(),
    };
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| usage(anyhow!("override {o:?} is not KEY=VALUE")))?;
        cfg.set(k.trim(), v).map_err(usage)?;
    }
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn out_path(g: &Global, default: &str) -> PathBuf {
    g.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

/// `flat`, a seed, or the path of a terrain file.
fn resolve_terrain(spec: &str, cfg: &Config) -> Result<(u64, Terrain), Failure> {
    let parsed = match spec.trim() {
        "flat" => Some(TerrainSpec::Flat),
        s => s.parse::<u64>().ok().filter(|&n| n > 0).map(TerrainSpec::Seed),
    };
    match parsed {
        Some(t) => Ok((t.id(), t.build(cfg.terrain_extent).map_err(usage)?)),
        None => {
            let path = Path::new(spec);
            if !path.exists() {
                return Err(usage(anyhow!(
                    "terrain {spec:?} is neither `flat`, a positive seed, nor a file"
                )));
            }
            let t = Terrain::load(path).map_err(usage)?;
            Ok((t.seed(), t))
        }
    }
}

fn cmd_terrain(g: &Global, extent: f64) -> Outcome {
    if !(extent.is_finite() && extent > 0.0) {
        return Err(usage(anyhow!("--extent must be a positive length, got {extent}")));
    }
    let seed = g.seed.unwrap_or(1);
    let terrain = Terrain::generate(seed, extent).map_err(usage)?;
    let out = out_path(g, &format!("terrain_{seed}.txt"));
    terrain.save(&out).map_err(runtime)?;
    println!(
        "terrain seed={seed} extent={} segments={} -> {}",
        terrain.extent(),
        terrain.segments().len(),
        out.display()
    );
    Ok(())
}

fn cmd_demo(g: &Global, terrain: &str, horizon: Option<usize>) -> Outcome {
    let cfg = load_config(g, &[])?;
    let (id, terrain) = resolve_terrain(terrain, &cfg)?;
    let model = cfg.model();
    let horizon = horizon.unwrap_or(cfg.horizon);
    if horizon == 0 {
        return Err(usage(anyhow!("--horizon must be at least 1")));
    }
    let traj = demo::scripted_trajectory(&model, &terrain, horizon)
        .with_context(|| format!("demonstration on terrain {id}"))
        .map_err(runtime)?;
    let out = out_path(g, "demo.csv");
    rollout::write_trace(&out, &traj).map_err(runtime)?;
    let d = eval::is_success(&traj, &terrain, model.dt, &cfg.criteria()).map_err(runtime)?;
    println!(
        "demo terrain={id} steps={} mean_vx={:.3} reward={:.2} -> {}",
        traj.len(),
        d.mean_vx,
        traj.total_reward(),
        out.display()
    );
    Ok(())
}

fn cmd_train(g: &Global, overrides: &[String]) -> Outcome {
    let cfg = load_config(g, overrides)?;
    let dir = out_path(g, "run");
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(runtime)?;
    // record the effective configuration next to the results
    let cfg_path = dir.join("config.cfg");
    std::fs::write(&cfg_path, cfg.to_text())
        .with_context(|| format!("writing {}", cfg_path.display()))
        .map_err(runtime)?;
    let clock = std::time::Instant::now();
    let result = gps::train(&cfg, &mut |msg: &str| {
        eprintln!("[{:8.1}s] {msg}", clock.elapsed().as_secs_f64())
    })
    .map_err(|e| match e {
        gpslab::Error::Config(_) | gpslab::Error::InvalidArgument(_) => usage(e),
        e => runtime(e),
    })?;
    let ckpt = dir.join("policy.txt");
    let log = dir.join("train_log.csv");
    result.params.save(&ckpt).map_err(runtime)?;
    gps::save_log(&log, &result.log).map_err(runtime)?;
    for w in &result.warnings {
        println!("warning: {w}");
    }
    let last = result.log.last().expect("log has the initial row");
    println!(
        "trained {} iterations ({}): train_success={:.3} objective={:.3} -> {}, {}",
        cfg.n_gps,
        result.method,
        last.train_success,
        last.objective,
        ckpt.display(),
        log.display()
    );
    Ok(())
}

fn load_checkpoint(path: &Path, cfg: &Config, check_arch: bool) -> Result<PolicyParams, Failure> {
    let params = PolicyParams::load(path)
        .with_context(|| format!("loading checkpoint {}", path.display()))
        .map_err(runtime)?;
    if check_arch {
        let want = cfg.architecture().map_err(usage)?;
        if params.arch != want {
            return Err(runtime(anyhow!(
                "checkpoint {} holds a {} network with {} hidden units ({}), config asks for {} with {} ({}): expected {} parameters, found {}",
                path.display(),
                params.arch.kind,
                params.arch.hidden,
                params.arch.activation,
                want.kind,
                want.hidden,
                want.activation,
                want.param_count(),
                params.theta.len()
            )));
        }
    }
    Ok(params)
}

fn parse_terrain_list(spec: &str) -> Result<Vec<TerrainSpec>, Failure> {
    let mut cfg = Config::default();
    cfg.set("test_terrains", spec).map_err(usage)?;
    Ok(cfg.test_terrains)
}

fn cmd_eval(g: &Global, checkpoint: &Path, trials: Option<usize>, terrains: Option<&str>) -> Outcome {
    let mut cfg = load_config(g, &[])?;
    if let Some(spec) = terrains {
        cfg.test_terrains = parse_terrain_list(spec)?;
    }
    let trials = trials.unwrap_or(cfg.eval_trials);
    if trials == 0 {
        return Err(usage(anyhow!("--trials must be at least 1")));
    }
    let params = load_checkpoint(checkpoint, &cfg, g.config.is_some())?;
    let model = cfg.model();
    let criteria = cfg.criteria();
    let dir = out_path(g, "eval");
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(runtime)?;
    let mut fractions = Vec::new();
    for (name, specs) in [("train", &cfg.train_terrains), ("test", &cfg.test_terrains)] {
        let set = cfg.build_terrains(specs).map_err(usage)?;
        let report = eval::evaluate(&model, &params, &set, trials, cfg.seed, cfg.horizon, &criteria)
            .map_err(runtime)?;
        report.save(&dir.join(format!("{name}.csv"))).map_err(runtime)?;
        fractions.push(report.success_fraction());
    }
    println!("train={:.3} test={:.3}", fractions[0], fractions[1]);
    Ok(())
}

fn cmd_rollout(g: &Global, checkpoint: &Path, terrain: &str, horizon: Option<usize>) -> Outcome {
    let cfg = load_config(g, &[])?;
    let (id, terrain) = resolve_terrain(terrain, &cfg)?;
    let params = load_checkpoint(checkpoint, &cfg, g.config.is_some())?;
    let model = cfg.model();
    let horizon = horizon.unwrap_or(cfg.horizon);
    if horizon == 0 {
        return Err(usage(anyhow!("--horizon must be at least 1")));
    }
    let traj = eval::policy_rollout(&model, &params, &terrain, cfg.seed, horizon).map_err(runtime)?;
    let out = out_path(g, "rollout.csv");
    rollout::write_trace(&out, &traj).map_err(runtime)?;
    let d = eval::is_success(&traj, &terrain, model.dt, &cfg.criteria()).map_err(runtime)?;
    println!(
        "rollout terrain={id} steps={} success={} mean_vx={:.3} min_height={:.3} -> {}",
        traj.len(),
        d.success as u8,
        d.mean_vx,
        d.min_height,
        out.display()
    );
    Ok(())
}

//! Command-line front end and run management.
//!
//! Four subcommands: `train` drives the episode loop, `evaluate` re-simulates
//! a checkpoint's mean shape, `render` draws shapes (SVG) and velocity
//! snapshots (PPM), `reference` runs the unit cylinder and prints its force
//! summary. Output is `key = value` lines on stdout and a single
//! `error: <reason>` line on stderr. Exit codes: 0 success, 1 i/o failure,
//! 2 config or usage error, 3 numerical abort.

use std::io;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::agent::PolicyParams;
use crate::config::{parse_config, resolved_string, ConfigError, RunConfig};
use crate::envloop::{self, decode_shape_action, record_polygon, TrainError};
use crate::flow::{
    compute_forces, run_flow, write_forces_csv, write_u_ppm, FlowState, ForceSample,
};
use crate::geometry::{build_shape, circle_polygon, read_outline, shape_svg, Polygon};

#[derive(Parser, Debug)]
#[command(name = "shapeopt", version, about = "Shape optimization in 2D incompressible flow")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a policy as the config prescribes.
    Train {
        config: PathBuf,
        /// Continue an interrupted run from its sidecar state.
        #[arg(long)]
        resume: bool,
        /// Replace an existing run directory.
        #[arg(long)]
        force: bool,
    },
    /// Re-simulate the policy-mean shape of a checkpoint; writes top-k
    /// outlines and a summary next to the checkpoint.
    Evaluate {
        config: PathBuf,
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 5)]
        top: usize,
    },
    /// Draw a checkpoint's mean shape or a saved outline as SVG with the
    /// radial constraint circles; `--flow` adds velocity snapshots.
    Render {
        /// A policy checkpoint (*.ckpt) or a shape outline CSV.
        input: PathBuf,
        /// Config for decode and flow settings; defaults apply otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory, default: the input's directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also run the flow: four u-velocity PPM snapshots and a force CSV.
        #[arg(long)]
        flow: bool,
    },
    /// Run the reference cylinder and print mean forces and the lift
    /// oscillation amplitude.
    Reference { config: PathBuf },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Numeric(String),
    #[error("{0}")]
    Io(#[from] io::Error),
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFinite(inner) => CliError::Numeric(inner.to_string()),
            TrainError::Io(inner) => CliError::Io(inner),
            TrainError::Pool(msg) => CliError::Io(io::Error::new(io::ErrorKind::Other, msg)),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

/// `SHAPEOPT_SEED` beats the config seed; read once at entry so commands
/// stay pure functions of their arguments.
pub fn seed_override_from_env() -> Result<Option<u64>, CliError> {
    match std::env::var("SHAPEOPT_SEED") {
        Ok(s) => s
            .trim()
            .parse::<u64>()
            .map(Some)
            .map_err(|e| CliError::Usage(format!("SHAPEOPT_SEED: {e}"))),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(CliError::Usage(format!("SHAPEOPT_SEED: {e}"))),
    }
}

pub fn run(cli: Cli) -> u8 {
    let seed = match seed_override_from_env() {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    match dispatch(cli.command, seed) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn dispatch(command: Command, seed_override: Option<u64>) -> Result<(), CliError> {
    match command {
        Command::Train { config, resume, force } => cmd_train(&config, resume, force, seed_override),
        Command::Evaluate { config, checkpoint, top } => {
            cmd_evaluate(&config, &checkpoint, top, seed_override)
        }
        Command::Render { input, config, out, flow } => {
            cmd_render(&input, config.as_deref(), out.as_deref(), flow, seed_override)
        }
        Command::Reference { config } => cmd_reference(&config, seed_override),
    }
}

fn load_config(path: &Path, seed_override: Option<u64>) -> Result<RunConfig, CliError> {
    let mut cfg = parse_config(path)?;
    if let Some(seed) = seed_override {
        cfg.run.seed = seed;
    }
    Ok(cfg)
}

pub fn cmd_train(
    config: &Path,
    resume: bool,
    force: bool,
    seed_override: Option<u64>,
) -> Result<(), CliError> {
    let cfg = load_config(config, seed_override)?;
    let out = &cfg.run.out_dir;
    let occupied = out.exists() && out.read_dir()?.next().is_some();
    if resume && !out.join("state.json").exists() {
        return Err(CliError::Usage(format!(
            "nothing to resume: {} has no state.json",
            out.display()
        )));
    }
    if occupied && !resume {
        if force {
            std::fs::remove_dir_all(out)?;
        } else {
            return Err(CliError::Usage(format!(
                "run directory {} is not empty; pass --resume to continue it or --force to replace it",
                out.display()
            )));
        }
    }
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("resolved.cfg"), resolved_string(&cfg))?;
    let (history, _params) = envloop::train(&cfg, resume)?;
    println!("episodes = {}", history.len());
    if let Some(&best) = history.best.last() {
        println!("best_episode = {best}");
        println!("best_reward = {}", history.records[best].reward);
    }
    if let Some(ma) = history.moving_avg.last() {
        println!("final_moving_avg = {ma}");
    }
    println!("out_dir = {}", out.display());
    Ok(())
}

pub fn cmd_evaluate(
    config: &Path,
    checkpoint: &Path,
    top: usize,
    seed_override: Option<u64>,
) -> Result<(), CliError> {
    let cfg = load_config(config, seed_override)?;
    if !checkpoint.exists() {
        return Err(CliError::Usage(format!("no checkpoint at {}", checkpoint.display())));
    }
    let params = PolicyParams::load(checkpoint)?;
    check_dims(&params, &cfg)?;
    let records = envloop::evaluate(&params, &cfg, top);
    let dir = checkpoint.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut summary = String::from("rank,reward,mean_cd,mean_cl,area,failed\n");
    for (rank, rec) in records.iter().enumerate() {
        let rank = rank + 1;
        println!(
            "rank = {rank}  reward = {}  mean_cd = {}  mean_cl = {}  area = {}  failed = {}",
            rec.reward, rec.mean_cd, rec.mean_cl, rec.area, rec.failed
        );
        summary.push_str(&format!(
            "{rank},{},{},{},{},{}\n",
            rec.reward, rec.mean_cd, rec.mean_cl, rec.area, rec.failed
        ));
        if let Some(poly) = record_polygon(rec) {
            let path = dir.join(format!("eval_top{rank}.csv"));
            crate::geometry::write_outline(&poly, &path)?;
            println!("shape = {}", path.display());
        }
    }
    let summary_path = dir.join("eval_summary.csv");
    std::fs::write(&summary_path, summary)?;
    println!("summary = {}", summary_path.display());
    Ok(())
}

fn check_dims(params: &PolicyParams, cfg: &RunConfig) -> Result<(), CliError> {
    if params.act_dim != cfg.action_dim() || params.obs_dim != cfg.agent.obs_dim {
        return Err(CliError::Usage(format!(
            "checkpoint dims (obs {}, act {}) do not match the config (obs {}, act {}); pass the run's config",
            params.obs_dim,
            params.act_dim,
            cfg.agent.obs_dim,
            cfg.action_dim()
        )));
    }
    Ok(())
}

/// The policy-mean shape of a checkpoint, or a saved outline, as a polygon.
fn polygon_from_input(input: &Path, cfg: &RunConfig) -> Result<Polygon, CliError> {
    if input.extension().is_some_and(|e| e == "ckpt") {
        let params = PolicyParams::load(input)?;
        check_dims(&params, cfg)?;
        let obs = vec![1.0; cfg.agent.obs_dim];
        let (mean, _) = params.forward_policy(&obs);
        let action: Vec<f64> = mean.iter().map(|m| m.clamp(-1.0, 1.0)).collect();
        let spec = decode_shape_action(&action, &cfg.geometry);
        build_shape(&spec).map_err(|e| CliError::Numeric(format!("mean shape unbuildable: {e}")))
    } else {
        Ok(read_outline(input)?)
    }
}

pub fn cmd_render(
    input: &Path,
    config: Option<&Path>,
    out: Option<&Path>,
    flow: bool,
    seed_override: Option<u64>,
) -> Result<(), CliError> {
    let cfg = match config {
        Some(path) => load_config(path, seed_override)?,
        None => RunConfig::default(),
    };
    if !input.exists() {
        return Err(CliError::Usage(format!("no input at {}", input.display())));
    }
    let poly = polygon_from_input(input, &cfg)?;
    let stem = input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "shape".into());
    let dir = match out {
        Some(d) => d.to_path_buf(),
        None => input.parent().unwrap_or(Path::new(".")).to_path_buf(),
    };
    std::fs::create_dir_all(&dir)?;
    let r_outer = cfg.geometry.r_max;
    let r_inner = cfg.geometry.r_max * cfg.geometry.r_min;
    let svg_path = dir.join(format!("{stem}.svg"));
    std::fs::write(&svg_path, shape_svg(&poly, r_inner, r_outer))?;
    println!("svg = {}", svg_path.display());
    if flow {
        render_flow(&poly, &cfg, &dir, &stem)?;
    }
    Ok(())
}

/// Four evenly spaced u-velocity snapshots plus the full force history.
fn render_flow(poly: &Polygon, cfg: &RunConfig, dir: &Path, stem: &str) -> Result<(), CliError> {
    let numeric = |e: crate::flow::FlowError| CliError::Numeric(e.to_string());
    let placed = poly.translated(cfg.flow.obstacle_x, cfg.flow.obstacle_y);
    let mut state = FlowState::new(&cfg.flow, Some(&placed)).map_err(numeric)?;
    let mut samples: Vec<ForceSample> = Vec::new();
    let mut next = 1usize;
    while state.t < cfg.flow.t_max {
        state.step().map_err(numeric)?;
        samples.push(compute_forces(&state));
        while next <= 4 && state.t >= 0.25 * next as f64 * cfg.flow.t_max {
            let ppm_path = dir.join(format!("{stem}_u{next}.ppm"));
            write_u_ppm(&ppm_path, &state)?;
            println!("ppm = {}", ppm_path.display());
            next += 1;
        }
    }
    let forces_path = dir.join(format!("{stem}_forces.csv"));
    write_forces_csv(&forces_path, &samples)?;
    println!("forces = {}", forces_path.display());
    Ok(())
}

pub fn cmd_reference(config: &Path, seed_override: Option<u64>) -> Result<(), CliError> {
    let cfg = load_config(config, seed_override)?;
    let circle = circle_polygon(cfg.flow.r_cyl, 256);
    let result = run_flow(&circle, &cfg.flow);
    if result.failed {
        return Err(CliError::Numeric(format!(
            "reference flow failed: {}",
            result.failure.unwrap_or_else(|| "unknown".into())
        )));
    }
    // Oscillation amplitude over the same second-half window as the means.
    let window: Vec<f64> = result
        .samples
        .iter()
        .filter(|s| s.t >= 0.5 * cfg.flow.t_max)
        .map(|s| s.cl)
        .collect();
    let amplitude = match (
        window.iter().cloned().reduce(f64::max),
        window.iter().cloned().reduce(f64::min),
    ) {
        (Some(hi), Some(lo)) => hi - lo,
        _ => f64::NAN,
    };
    println!("mean_cd = {}", result.mean_cd);
    println!("mean_cl = {}", result.mean_cl);
    println!("lift_drag_ratio = {}", result.mean_cl / result.mean_cd.abs());
    println!("cl_amplitude = {amplitude}");
    println!("steps = {}", result.steps);
    println!("final_t = {}", result.final_t);
    Ok(())
}

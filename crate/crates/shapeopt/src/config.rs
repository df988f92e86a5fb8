//! Run configuration: a line-based `section.key = value` format.
//!
//! Missing keys take the documented defaults; unknown keys are hard errors
//! with a line number, so a typo cannot silently run a different experiment.
//! `resolved_string` echoes every effective value in canonical order and
//! round-trips through the parser, which is what run directories persist.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::agent::PpoConfig;
use crate::envloop::RewardMode;
use crate::flow::{BcKind, FlowConfig};
use crate::geometry::AngularFactor;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid config: {0}")]
    Validation(String),
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeometryCfg {
    pub n: usize,
    /// Which control points the action moves; fixed points pin to the
    /// reference cylinder (radius 1, canonical angle, e = 1/2).
    pub free: Vec<bool>,
    pub r_min: f64,
    pub r_max: f64,
    /// Tangent blend weight at the joints.
    pub alpha: f64,
    pub samples_per_segment: usize,
    pub angular: AngularFactor,
}

impl Default for GeometryCfg {
    fn default() -> Self {
        Self {
            n: 4,
            free: vec![true; 4],
            r_min: 0.3,
            r_max: 3.0,
            alpha: 0.5,
            samples_per_segment: 32,
            angular: AngularFactor::Full,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunCfg {
    pub episodes: usize,
    pub seed: u64,
    pub workers: usize,
    pub out_dir: PathBuf,
    /// Checkpoint every this many PPO updates.
    pub checkpoint_every: usize,
}

impl Default for RunCfg {
    fn default() -> Self {
        Self {
            episodes: 3000,
            seed: 0,
            workers: 1,
            out_dir: PathBuf::from("run_out"),
            checkpoint_every: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub geometry: GeometryCfg,
    pub flow: FlowConfig,
    pub agent: PpoConfig,
    pub reward: RewardMode,
    pub run: RunCfg,
}

impl RunConfig {
    pub fn action_dim(&self) -> usize {
        3 * self.geometry.n
    }
}

pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    parse_str(&std::fs::read_to_string(path)?)
}

pub fn parse_str(text: &str) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    // The free mask depends on geometry.n, so its resolution is deferred
    // until every line is read; files may order the two keys either way.
    let mut free_raw: Option<(usize, String)> = None;
    let mut n_was_set = false;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let stripped = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        }
        .trim();
        if stripped.is_empty() {
            continue;
        }
        let err = |msg: String| ConfigError::Parse { line, msg };
        let (key, value) = stripped
            .split_once('=')
            .ok_or_else(|| err("expected `section.key = value`".into()))?;
        let key = key.trim();
        let value = value.trim();
        let (section, field) = key
            .split_once('.')
            .ok_or_else(|| err(format!("key `{key}` is missing its section prefix")))?;
        let v = || value.to_string();
        macro_rules! set {
            ($slot:expr, $ty:ty) => {
                $slot = value
                    .parse::<$ty>()
                    .map_err(|e| err(format!("bad value `{value}` for `{key}`: {e}")))?
            };
        }
        match (section, field) {
            ("geometry", "n") => {
                set!(cfg.geometry.n, usize);
                n_was_set = true;
            }
            ("geometry", "free") => free_raw = Some((line, v())),
            ("geometry", "r_min") => set!(cfg.geometry.r_min, f64),
            ("geometry", "r_max") => set!(cfg.geometry.r_max, f64),
            ("geometry", "alpha") => set!(cfg.geometry.alpha, f64),
            ("geometry", "samples") => set!(cfg.geometry.samples_per_segment, usize),
            ("geometry", "angular_factor") => {
                cfg.geometry.angular = match value {
                    "full" => AngularFactor::Full,
                    "printed" => AngularFactor::Printed,
                    _ => return Err(err(format!("angular_factor must be full|printed, got `{value}`"))),
                }
            }
            ("flow", "length") => set!(cfg.flow.length, f64),
            ("flow", "width") => set!(cfg.flow.width, f64),
            ("flow", "v_in") => set!(cfg.flow.v_in, f64),
            ("flow", "density") => set!(cfg.flow.density, f64),
            ("flow", "re_ref") => set!(cfg.flow.re_ref, f64),
            ("flow", "r_cyl") => set!(cfg.flow.r_cyl, f64),
            ("flow", "cfl") => set!(cfg.flow.cfl, f64),
            ("flow", "nx") => set!(cfg.flow.nx, usize),
            ("flow", "ny") => set!(cfg.flow.ny, usize),
            ("flow", "obstacle_x") => set!(cfg.flow.obstacle_x, f64),
            ("flow", "obstacle_y") => set!(cfg.flow.obstacle_y, f64),
            ("flow", "t_max") => set!(cfg.flow.t_max, f64),
            ("flow", "perturbation") => set!(cfg.flow.perturbation, f64),
            ("flow", "bc") => {
                cfg.flow.bc = match value {
                    "channel" => BcKind::Channel,
                    "cavity" => BcKind::Cavity,
                    _ => return Err(err(format!("bc must be channel|cavity, got `{value}`"))),
                }
            }
            ("agent", "clip_eps") => set!(cfg.agent.clip_eps, f64),
            ("agent", "entropy_coef") => set!(cfg.agent.entropy_coef, f64),
            ("agent", "learning_rate") => set!(cfg.agent.learning_rate, f64),
            ("agent", "batch_size") => set!(cfg.agent.batch_size, usize),
            ("agent", "epochs") => set!(cfg.agent.epochs, usize),
            ("agent", "minibatches") => set!(cfg.agent.minibatches, usize),
            ("agent", "gamma") => set!(cfg.agent.gamma, f64),
            ("agent", "lambda") => set!(cfg.agent.lambda, f64),
            ("agent", "grad_clip") => set!(cfg.agent.grad_clip, f64),
            ("agent", "hidden") => set!(cfg.agent.hidden, usize),
            ("agent", "obs_dim") => set!(cfg.agent.obs_dim, usize),
            ("reward", "r_fail") => set!(cfg.reward.r_fail, f64),
            ("reward", "positive_doubling") => set!(cfg.reward.positive_doubling, bool),
            ("reward", "positive_multiplier") => set!(cfg.reward.positive_multiplier, f64),
            ("reward", "area_penalty") => set!(cfg.reward.area_penalty, bool),
            ("reward", "target_area") => set!(cfg.reward.target_area, f64),
            ("reward", "recompute_reference") => set!(cfg.reward.recompute_reference, bool),
            ("run", "episodes") => set!(cfg.run.episodes, usize),
            ("run", "seed") => set!(cfg.run.seed, u64),
            ("run", "workers") => set!(cfg.run.workers, usize),
            ("run", "out_dir") => cfg.run.out_dir = PathBuf::from(value),
            ("run", "checkpoint_every") => set!(cfg.run.checkpoint_every, usize),
            _ => return Err(err(format!("unknown key `{key}`"))),
        }
    }
    match free_raw {
        Some((line, s)) => {
            cfg.geometry.free = parse_mask(&s).map_err(|msg| ConfigError::Parse { line, msg })?;
        }
        None if n_was_set => cfg.geometry.free = vec![true; cfg.geometry.n],
        None => {}
    }
    validate(&cfg)?;
    Ok(cfg)
}

fn parse_mask(s: &str) -> Result<Vec<bool>, String> {
    s.split(',')
        .map(|t| match t.trim() {
            "1" | "true" => Ok(true),
            "0" | "false" => Ok(false),
            other => Err(format!("mask entries are 0|1|true|false, got `{other}`")),
        })
        .collect()
}

fn validate(cfg: &RunConfig) -> Result<(), ConfigError> {
    let bad = |msg: &str| Err(ConfigError::Validation(msg.to_string()));
    let g = &cfg.geometry;
    if g.n < 3 {
        return bad("geometry.n must be at least 3 (a closed shape)");
    }
    if g.free.len() != g.n {
        return bad("geometry.free must list exactly n entries");
    }
    if !(g.r_min > 0.0 && g.r_min < 1.0) {
        return bad("geometry.r_min must lie in (0, 1)");
    }
    if g.r_max <= 0.0 {
        return bad("geometry.r_max must be positive");
    }
    if !(0.0..=1.0).contains(&g.alpha) {
        return bad("geometry.alpha must lie in [0, 1]");
    }
    if g.samples_per_segment < 2 {
        return bad("geometry.samples must be at least 2");
    }
    let f = &cfg.flow;
    if !(f.length > 0.0 && f.width > 0.0 && f.v_in > 0.0 && f.density > 0.0 && f.re_ref > 0.0) {
        return bad("flow.length, width, v_in, density, re_ref must be positive");
    }
    if f.r_cyl <= 0.0 {
        return bad("flow.r_cyl must be positive");
    }
    if !(f.cfl > 0.0 && f.cfl <= 1.0) {
        return bad("flow.cfl must lie in (0, 1]");
    }
    if f.nx < 8 || f.ny < 8 {
        return bad("flow.nx and flow.ny must be at least 8");
    }
    if f.t_max <= 0.0 {
        return bad("flow.t_max must be positive");
    }
    if f.perturbation < 0.0 {
        return bad("flow.perturbation must be non-negative");
    }
    let a = &cfg.agent;
    if !(a.clip_eps > 0.0 && a.clip_eps < 1.0) {
        return bad("agent.clip_eps must lie in (0, 1)");
    }
    if a.entropy_coef < 0.0 {
        return bad("agent.entropy_coef must be non-negative");
    }
    if a.learning_rate <= 0.0 {
        return bad("agent.learning_rate must be positive");
    }
    if a.batch_size == 0 || a.epochs == 0 || a.minibatches == 0 {
        return bad("agent.batch_size, epochs, minibatches must be positive");
    }
    if a.grad_clip <= 0.0 {
        return bad("agent.grad_clip must be positive");
    }
    if a.hidden == 0 || a.obs_dim == 0 {
        return bad("agent.hidden and obs_dim must be positive");
    }
    let r = &cfg.reward;
    if r.r_fail >= 0.0 {
        return bad("reward.r_fail must be negative");
    }
    if r.positive_multiplier <= 0.0 {
        return bad("reward.positive_multiplier must be positive");
    }
    if r.target_area <= 0.0 {
        return bad("reward.target_area must be positive");
    }
    if cfg.run.workers == 0 {
        return bad("run.workers must be at least 1");
    }
    if cfg.run.checkpoint_every == 0 {
        return bad("run.checkpoint_every must be at least 1");
    }
    Ok(())
}

/// Every effective value in canonical order; parses back to the same config.
pub fn resolved_string(cfg: &RunConfig) -> String {
    let g = &cfg.geometry;
    let f = &cfg.flow;
    let a = &cfg.agent;
    let r = &cfg.reward;
    let run = &cfg.run;
    let mask: Vec<&str> = g.free.iter().map(|&b| if b { "1" } else { "0" }).collect();
    let angular = match g.angular {
        AngularFactor::Full => "full",
        AngularFactor::Printed => "printed",
    };
    let bc = match f.bc {
        BcKind::Channel => "channel",
        BcKind::Cavity => "cavity",
    };
    format!(
        "geometry.n = {}\n\
         geometry.free = {}\n\
         geometry.r_min = {}\n\
         geometry.r_max = {}\n\
         geometry.alpha = {}\n\
         geometry.samples = {}\n\
         geometry.angular_factor = {}\n\
         flow.length = {}\n\
         flow.width = {}\n\
         flow.v_in = {}\n\
         flow.density = {}\n\
         flow.re_ref = {}\n\
         flow.r_cyl = {}\n\
         flow.cfl = {}\n\
         flow.nx = {}\n\
         flow.ny = {}\n\
         flow.obstacle_x = {}\n\
         flow.obstacle_y = {}\n\
         flow.t_max = {}\n\
         flow.perturbation = {}\n\
         flow.bc = {}\n\
         agent.clip_eps = {}\n\
         agent.entropy_coef = {}\n\
         agent.learning_rate = {}\n\
         agent.batch_size = {}\n\
         agent.epochs = {}\n\
         agent.minibatches = {}\n\
         agent.gamma = {}\n\
         agent.lambda = {}\n\
         agent.grad_clip = {}\n\
         agent.hidden = {}\n\
         agent.obs_dim = {}\n\
         reward.r_fail = {}\n\
         reward.positive_doubling = {}\n\
         reward.positive_multiplier = {}\n\
         reward.area_penalty = {}\n\
         reward.target_area = {}\n\
         reward.recompute_reference = {}\n\
         run.episodes = {}\n\
         run.seed = {}\n\
         run.workers = {}\n\
         run.out_dir = {}\n\
         run.checkpoint_every = {}\n",
        g.n,
        mask.join(","),
        g.r_min,
        g.r_max,
        g.alpha,
        g.samples_per_segment,
        angular,
        f.length,
        f.width,
        f.v_in,
        f.density,
        f.re_ref,
        f.r_cyl,
        f.cfl,
        f.nx,
        f.ny,
        f.obstacle_x,
        f.obstacle_y,
        f.t_max,
        f.perturbation,
        bc,
        a.clip_eps,
        a.entropy_coef,
        a.learning_rate,
        a.batch_size,
        a.epochs,
        a.minibatches,
        a.gamma,
        a.lambda,
        a.grad_clip,
        a.hidden,
        a.obs_dim,
        r.r_fail,
        r.positive_doubling,
        r.positive_multiplier,
        r.area_penalty,
        r.target_area,
        r.recompute_reference,
        run.episodes,
        run.seed,
        run.workers,
        run.out_dir.display(),
        run.checkpoint_every,
    )
}

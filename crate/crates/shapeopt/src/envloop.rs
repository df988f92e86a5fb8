//! Degenerate-episode training loop: every episode is one action from a
//! constant observation, so PPO acts as a stochastic black-box optimizer
//! over shapes.
//!
//! A coordinator owns the parameters and the history; stateless workers
//! receive (parameter snapshot, episode index, derived seed) and return one
//! record each. Episode seeds derive from (run seed, episode index) and the
//! batch is collected in episode order, so the run history is bit-identical
//! for any worker count. All geometry and flow failures fold into records
//! with the failure reward; nothing in the loop panics on a bad shape.

use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{self, NonFiniteLoss, PolicyParams, RolloutBatch};
use crate::config::RunConfig;
use crate::flow::{run_flow, FlowResult};
use crate::geometry::{
    build_shape, decode_point, polygon_area, validate, ActionTriplet, ControlPoint, Polygon,
    ShapeSpec,
};

/// Moving-average window, matched to the update cadence.
pub const MA_WINDOW: usize = 50;

/// Reward shaping pipeline. The stages apply in a fixed order: base ratio,
/// failure floor, positive multiplier, area penalty. The penalty also hits
/// failed shapes so the constraint pressure never disappears.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardMode {
    pub r_fail: f64,
    pub positive_doubling: bool,
    pub positive_multiplier: f64,
    pub area_penalty: bool,
    pub target_area: f64,
    /// Recompute the cylinder reference term instead of taking it as 0.
    pub recompute_reference: bool,
}

impl Default for RewardMode {
    fn default() -> Self {
        Self {
            r_fail: -5.0,
            positive_doubling: false,
            positive_multiplier: 2.0,
            area_penalty: false,
            target_area: std::f64::consts::PI,
            recompute_reference: false,
        }
    }
}

/// Lift-to-drag reward with shaping. `reference` is the cylinder baseline
/// term, 0 unless the run recomputes it. Non-finite ratios (a degenerate
/// mean drag) count as failures; the result is always finite.
pub fn compute_reward(result: &FlowResult, area: f64, mode: &RewardMode, reference: f64) -> f64 {
    let mut r = if result.failed {
        mode.r_fail
    } else {
        let base = result.mean_cl / result.mean_cd.abs() - reference;
        if base.is_finite() {
            base.max(mode.r_fail)
        } else {
            mode.r_fail
        }
    };
    if mode.positive_doubling && r > 0.0 {
        r *= mode.positive_multiplier;
    }
    if mode.area_penalty {
        r -= (area - mode.target_area).abs() / mode.target_area;
    }
    r
}

/// One finished episode. `shape` is `None` only for records reloaded from a
/// persisted run, where the control points are no longer on disk.
#[derive(Debug, Clone)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub raw_action: Vec<f64>,
    pub shape: Option<ShapeSpec>,
    pub mean_cd: f64,
    pub mean_cl: f64,
    pub failed: bool,
    pub area: f64,
    pub reward: f64,
    pub duration_s: f64,
}

/// Append-only run history with the reward moving average and the episodes
/// where the best-so-far reward improved.
#[derive(Debug, Clone, Default)]
pub struct RunHistory {
    pub records: Vec<EpisodeRecord>,
    pub moving_avg: Vec<f64>,
    pub best: Vec<usize>,
}

impl RunHistory {
    pub fn push(&mut self, rec: EpisodeRecord) {
        assert_eq!(rec.episode, self.records.len(), "episode indices must be dense");
        assert!(rec.reward.is_finite(), "rewards must be finite");
        let improved = match self.best.last() {
            Some(&b) => rec.reward > self.records[b].reward,
            None => true,
        };
        if improved {
            self.best.push(rec.episode);
        }
        self.records.push(rec);
        let w = self.records.len().min(MA_WINDOW);
        let sum: f64 = self.records[self.records.len() - w..]
            .iter()
            .map(|r| r.reward)
            .sum();
        self.moving_avg.push(sum / w as f64);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Full CSV, one row per episode.
    pub fn csv_string(&self) -> String {
        let mut s = String::from("episode,reward,mean_cd,mean_cl,area,failed,duration_s\n");
        for r in &self.records {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.episode, r.reward, r.mean_cd, r.mean_cl, r.area, r.failed, r.duration_s
            ));
        }
        s
    }

    /// The determinism contract: every column except the wall-clock
    /// duration, which cannot be reproducible.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut s = String::from("episode,reward,mean_cd,mean_cl,area,failed\n");
        for r in &self.records {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.episode, r.reward, r.mean_cd, r.mean_cl, r.area, r.failed
            ));
        }
        s.into_bytes()
    }

    pub fn write_csv(&self, path: &Path) -> io::Result<()> {
        std::fs::write(path, self.csv_string())
    }

    /// Rebuilds history from `history.csv`; raw actions and control points
    /// are not persisted there, so those fields come back empty.
    pub fn read_csv(path: &Path) -> io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let bad = |msg: String| io::Error::new(io::ErrorKind::InvalidData, msg);
        let mut history = RunHistory::default();
        for (i, line) in text.lines().enumerate() {
            if i == 0 {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(bad(format!("history row {i} has {} fields", f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("row {i}: {e}")));
            history.push(EpisodeRecord {
                episode: f[0].parse().map_err(|e| bad(format!("row {i}: {e}")))?,
                raw_action: Vec::new(),
                shape: None,
                reward: num(f[1])?,
                mean_cd: num(f[2])?,
                mean_cl: num(f[3])?,
                area: num(f[4])?,
                failed: f[5].parse().map_err(|e| bad(format!("row {i}: {e}")))?,
                duration_s: num(f[6])?,
            });
        }
        Ok(history)
    }
}

/// splitmix64 finalizer over (seed, stream, index): cheap, stateless seed
/// derivation that keeps episode sampling and update shuffling on
/// independent streams.
fn derived_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        ^ stream.wrapping_mul(0xA076_1D64_78BD_642F)
        ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_INIT: u64 = 1;
const STREAM_EPISODE: u64 = 2;
const STREAM_UPDATE: u64 = 3;

pub fn episode_rng(seed: u64, episode: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derived_seed(seed, STREAM_EPISODE, episode as u64))
}

pub fn init_params(cfg: &RunConfig) -> PolicyParams {
    let mut rng = ChaCha8Rng::seed_from_u64(derived_seed(cfg.run.seed, STREAM_INIT, 0));
    PolicyParams::init(cfg.agent.obs_dim, cfg.action_dim(), cfg.agent.hidden, &mut rng)
}

/// Decode a full 3n action into control points, pinning fixed points to the
/// reference cylinder: radius 1 at the canonical angle, midpoint curvature.
pub fn decode_shape_action(action: &[f64], g: &crate::config::GeometryCfg) -> ShapeSpec {
    assert_eq!(action.len(), 3 * g.n);
    let mut points = Vec::with_capacity(g.n);
    for i in 0..g.n {
        let point = if g.free[i] {
            let t = ActionTriplet::new(action[3 * i], action[3 * i + 1], action[3 * i + 2]);
            decode_point(t, i, g.n, g.r_min, g.r_max, g.angular)
        } else {
            let theta = g.angular.factor(g.n) * i as f64;
            ControlPoint::new(theta.cos(), theta.sin(), 0.5)
        };
        points.push(point);
    }
    ShapeSpec::new(points, g.alpha, g.samples_per_segment)
}

fn failed_flow(reason: String) -> FlowResult {
    FlowResult {
        samples: Vec::new(),
        mean_cd: f64::NAN,
        mean_cl: f64::NAN,
        steps: 0,
        final_t: 0.0,
        failed: true,
        failure: Some(reason),
    }
}

/// Everything the coordinator needs back from a worker: the record plus the
/// observation and behavior log-density for the rollout batch.
pub struct EpisodeOutcome {
    pub record: EpisodeRecord,
    pub obs: Vec<f64>,
    pub log_prob: f64,
}

/// Build, validate, simulate, score. Every failure path folds into a failed
/// FlowResult; unbuildable control points report area 0.
fn score_shape(spec: &ShapeSpec, cfg: &RunConfig, reference: f64) -> (f64, FlowResult, f64) {
    let (area, result) = match build_shape(spec) {
        Ok(poly) => {
            let area = polygon_area(&poly);
            let validity = validate(&poly);
            if validity.is_valid() {
                (area, run_flow(&poly, &cfg.flow))
            } else {
                (area, failed_flow(format!("invalid shape: {validity:?}")))
            }
        }
        Err(e) => (0.0, failed_flow(format!("shape build failed: {e}"))),
    };
    let reward = compute_reward(&result, area, &cfg.reward, reference);
    (area, result, reward)
}

/// One single-step episode: sample, decode, score. The worker never errors.
pub fn run_episode(
    params: &PolicyParams,
    episode: usize,
    cfg: &RunConfig,
    reference: f64,
    rng: &mut ChaCha8Rng,
) -> EpisodeOutcome {
    let t0 = Instant::now();
    let obs = vec![1.0; cfg.agent.obs_dim];
    let sample = agent::sample_action(params, &obs, rng);
    let spec = decode_shape_action(&sample.action, &cfg.geometry);
    let (area, result, reward) = score_shape(&spec, cfg, reference);
    EpisodeOutcome {
        record: EpisodeRecord {
            episode,
            raw_action: sample.raw,
            shape: Some(spec),
            mean_cd: result.mean_cd,
            mean_cl: result.mean_cl,
            failed: result.failed,
            area,
            reward,
            duration_s: t0.elapsed().as_secs_f64(),
        },
        obs,
        log_prob: sample.log_prob,
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("update produced a non-finite loss (state persisted): {0}")]
    NonFinite(#[from] NonFiniteLoss),
    #[error("run i/o failed: {0}")]
    Io(#[from] io::Error),
    #[error("worker pool: {0}")]
    Pool(String),
}

/// Run-state sidecar persisted next to checkpoints. RNG states are derived
/// (seed, stream, counter) triples, so the counters are the whole state.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunState {
    pub seed: u64,
    pub episodes_done: usize,
    pub updates_done: usize,
}

pub struct RunPaths {
    pub out: PathBuf,
}

impl RunPaths {
    pub fn new(out: &Path) -> Self {
        Self { out: out.to_path_buf() }
    }
    pub fn history(&self) -> PathBuf {
        self.out.join("history.csv")
    }
    pub fn state(&self) -> PathBuf {
        self.out.join("state.json")
    }
    pub fn latest(&self) -> PathBuf {
        self.out.join("latest.ckpt")
    }
    pub fn checkpoint(&self, update: usize) -> PathBuf {
        self.out.join(format!("checkpoint_u{update:05}.ckpt"))
    }
    pub fn best_shape(&self, episode: usize) -> PathBuf {
        self.out.join(format!("best_ep{episode:06}.csv"))
    }
}

fn persist(
    paths: &RunPaths,
    params: &PolicyParams,
    state: &RunState,
    history: &RunHistory,
    numbered: bool,
) -> io::Result<()> {
    params.save(&paths.latest())?;
    if numbered {
        params.save(&paths.checkpoint(state.updates_done))?;
    }
    std::fs::write(&paths.state(), serde_json::to_string_pretty(state)?)?;
    history.write_csv(&paths.history())
}

/// Train to `run.episodes` total episodes, checkpointing every
/// `run.checkpoint_every` updates. With `resume`, picks up an interrupted
/// run from its sidecar; otherwise starts fresh. Aborts persist first.
pub fn train(cfg: &RunConfig, resume: bool) -> Result<(RunHistory, PolicyParams), TrainError> {
    let paths = RunPaths::new(&cfg.run.out_dir);
    std::fs::create_dir_all(&paths.out)?;
    let (mut params, mut state, mut history) = if resume && paths.state().exists() {
        let state: RunState = serde_json::from_str(&std::fs::read_to_string(paths.state())?)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        let params = PolicyParams::load(&paths.latest())?;
        let history = RunHistory::read_csv(&paths.history())?;
        (params, state, history)
    } else {
        (
            init_params(cfg),
            RunState {
                seed: cfg.run.seed,
                episodes_done: 0,
                updates_done: 0,
            },
            RunHistory::default(),
        )
    };
    let reference = resolve_reference(cfg);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.run.workers)
        .build()
        .map_err(|e| TrainError::Pool(e.to_string()))?;
    let total = cfg.run.episodes;
    while state.episodes_done < total {
        let start = state.episodes_done;
        let count = cfg.agent.batch_size.min(total - start);
        let outcomes: Vec<EpisodeOutcome> = pool.install(|| {
            (start..start + count)
                .into_par_iter()
                .map(|e| {
                    let mut rng = episode_rng(cfg.run.seed, e);
                    run_episode(&params, e, cfg, reference, &mut rng)
                })
                .collect()
        });
        let mut rollout = RolloutBatch::default();
        for outcome in outcomes {
            let value = params.value_of(&outcome.obs);
            rollout.push(
                outcome.obs,
                outcome.record.raw_action.clone(),
                outcome.log_prob,
                outcome.record.reward,
                value,
            );
            let improved = history.best.last().copied();
            let episode = outcome.record.episode;
            let shape = outcome.record.shape.clone();
            history.push(outcome.record);
            if history.best.last().copied() != improved {
                if let Some(poly) = shape.as_ref().and_then(|s| build_shape(s).ok()) {
                    crate::geometry::write_outline(&poly, &paths.best_shape(episode))?;
                }
            }
        }
        let mut update_rng =
            ChaCha8Rng::seed_from_u64(derived_seed(cfg.run.seed, STREAM_UPDATE, state.updates_done as u64));
        if let Err(e) = agent::update(&mut params, &rollout, &cfg.agent, &mut update_rng) {
            state.episodes_done += count;
            persist(&paths, &params, &state, &history, true)?;
            return Err(TrainError::NonFinite(e));
        }
        state.episodes_done += count;
        state.updates_done += 1;
        if state.updates_done % cfg.run.checkpoint_every == 0 {
            persist(&paths, &params, &state, &history, true)?;
        }
    }
    persist(&paths, &params, &state, &history, true)?;
    Ok((history, params))
}

/// The reference term of the base reward: 0 by declaration (the cylinder's
/// mean lift vanishes), or the measured cylinder ratio when the config asks
/// for the honest version.
pub fn resolve_reference(cfg: &RunConfig) -> f64 {
    if !cfg.reward.recompute_reference {
        return 0.0;
    }
    let circle = crate::geometry::circle_polygon(cfg.flow.r_cyl, 256);
    let result = run_flow(&circle, &cfg.flow);
    if result.failed {
        0.0
    } else {
        result.mean_cl / result.mean_cd.abs()
    }
}

/// Deterministic evaluation at the policy mean (std = 0): `k` records
/// sorted by reward descending. With a constant observation the records are
/// identical; the plural form exists for interface symmetry.
pub fn evaluate(params: &PolicyParams, cfg: &RunConfig, k: usize) -> Vec<EpisodeRecord> {
    let reference = resolve_reference(cfg);
    let obs = vec![1.0; cfg.agent.obs_dim];
    let (mean, _) = params.forward_policy(&obs);
    let mut records = Vec::with_capacity(k);
    for episode in 0..k {
        let t0 = Instant::now();
        let action: Vec<f64> = mean.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
        let spec = decode_shape_action(&action, &cfg.geometry);
        let (area, result, reward) = score_shape(&spec, cfg, reference);
        records.push(EpisodeRecord {
            episode,
            raw_action: action.clone(),
            shape: Some(spec),
            mean_cd: result.mean_cd,
            mean_cl: result.mean_cl,
            failed: result.failed,
            area,
            reward,
            duration_s: t0.elapsed().as_secs_f64(),
        });
    }
    records.sort_by(|a, b| b.reward.partial_cmp(&a.reward).unwrap());
    records
}

/// Rebuild the polygon of a recorded shape, when the record still carries
/// its control points.
pub fn record_polygon(rec: &EpisodeRecord) -> Option<Polygon> {
    rec.shape.as_ref().and_then(|s| build_shape(s).ok())
}

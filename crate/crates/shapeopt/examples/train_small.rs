//! End-to-end training in miniature: a one-free-point shape on a coarse
//! grid, a couple of PPO updates, and the run directory artifacts
//! (history.csv, checkpoints, best-shape outlines) to poke at.
//!
//! Usage: train_small [episodes=20] [nx=90] [ny=60] [tmax=10] [seed=0] [out=small_run]

use shapeopt::config::parse_str;
use shapeopt::envloop::train;

fn main() {
    let mut episodes = 20usize;
    let mut nx = 90usize;
    let mut ny = 60usize;
    let mut tmax = 10.0f64;
    let mut seed = 0u64;
    let mut out = String::from("small_run");
    for arg in std::env::args().skip(1) {
        let (key, value) = arg
            .split_once('=')
            .unwrap_or_else(|| panic!("arguments look like key=value, got {arg:?}"));
        match key {
            "episodes" => episodes = value.parse().expect("episodes"),
            "nx" => nx = value.parse().expect("nx"),
            "ny" => ny = value.parse().expect("ny"),
            "tmax" => tmax = value.parse().expect("tmax"),
            "seed" => seed = value.parse().expect("seed"),
            "out" => out = value.to_string(),
            other => panic!("unknown argument {other:?}"),
        }
    }

    let cfg = parse_str(&format!(
        "geometry.n = 4\n\
         geometry.free = 0,1,0,0\n\
         flow.nx = {nx}\n\
         flow.ny = {ny}\n\
         flow.t_max = {tmax}\n\
         agent.batch_size = 10\n\
         run.episodes = {episodes}\n\
         run.seed = {seed}\n\
         run.out_dir = {out}\n\
         run.checkpoint_every = 1\n"
    ))
    .expect("config");

    println!(
        "training {} episodes on {}x{} (t_max={}) into {}",
        episodes, nx, ny, tmax, out
    );
    let started = std::time::Instant::now();
    let (history, _params) = train(&cfg, false).expect("training run");
    for (i, rec) in history.records.iter().enumerate() {
        println!(
            "episode {i:3}  reward={:+.4}  cd={:+.4}  cl={:+.4}  area={:.3}  failed={}  [{:.1}s]",
            rec.reward, rec.mean_cd, rec.mean_cl, rec.area, rec.failed, rec.duration_s
        );
    }
    println!(
        "moving average: first={:+.4}  last={:+.4}  best reward={:+.4}  wall={:.1}s",
        history.moving_avg.first().unwrap(),
        history.moving_avg.last().unwrap(),
        history.records[*history.best.last().unwrap()].reward,
        started.elapsed().as_secs_f64()
    );
}

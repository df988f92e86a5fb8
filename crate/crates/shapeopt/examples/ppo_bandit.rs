//! PPO on a one-armed continuous bandit: reward -(a - 0.5)^2, one action
//! per episode from a constant observation. The policy mean should settle
//! near 0.5 -- the same degenerate-episode mechanics the shape runs use,
//! with the flow solver swapped out for a parabola.
//!
//! Usage: ppo_bandit [updates=200] [batch=50] [seed=0]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use shapeopt::agent::{sample_action, update, PolicyParams, PpoConfig, RolloutBatch};

fn main() {
    let mut updates = 200usize;
    let mut batch_size = 50usize;
    let mut seed = 0u64;
    for arg in std::env::args().skip(1) {
        let (key, value) = arg
            .split_once('=')
            .unwrap_or_else(|| panic!("arguments look like key=value, got {arg:?}"));
        match key {
            "updates" => updates = value.parse().expect("updates"),
            "batch" => batch_size = value.parse().expect("batch"),
            "seed" => seed = value.parse().expect("seed"),
            other => panic!("unknown argument {other:?}"),
        }
    }

    let cfg = PpoConfig {
        batch_size,
        hidden: 32,
        ..PpoConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = PolicyParams::init(cfg.obs_dim, 1, cfg.hidden, &mut rng);
    let obs = vec![1.0; cfg.obs_dim];

    for u in 1..=updates {
        let mut batch = RolloutBatch::default();
        for _ in 0..cfg.batch_size {
            let sample = sample_action(&params, &obs, &mut rng);
            let reward = -(sample.action[0] - 0.5).powi(2);
            let value = params.value_of(&obs);
            batch.push(obs.clone(), sample.raw, sample.log_prob, reward, value);
        }
        update(&mut params, &batch, &cfg, &mut rng).expect("finite loss");
        if u % 20 == 0 || u == 1 {
            let (mean, std) = params.forward_policy(&obs);
            println!(
                "update {u:4}  mean={:+.4}  std={:.4}  value={:+.5}",
                mean[0],
                std[0],
                params.value_of(&obs)
            );
        }
    }

    let (mean, _) = params.forward_policy(&obs);
    println!("final mean = {:.4} (target 0.5)", mean[0]);
    assert!(
        (mean[0] - 0.5).abs() <= 0.05,
        "bandit failed to converge: {}",
        mean[0]
    );
}

//! Reference cylinder in the channel: marches the flow to t_max, reports
//! the force means over the second half of the run, and optionally dumps
//! the force history (CSV) and a final u-velocity snapshot (PPM).
//!
//! Usage: cylinder_flow [nx=450] [ny=300] [tmax=30] [cfl=0.5]
//!                      [perturbation=0.05] [out=<dir>] [progress=0|1]

use std::time::Instant;

use shapeopt::flow::{compute_forces, write_forces_csv, write_u_ppm, FlowConfig, FlowState};
use shapeopt::geometry::circle_polygon;

fn main() {
    let mut cfg = FlowConfig {
        t_max: 30.0,
        ..FlowConfig::default()
    };
    let mut out_dir: Option<std::path::PathBuf> = None;
    let mut progress = true;
    for arg in std::env::args().skip(1) {
        let (key, value) = arg
            .split_once('=')
            .unwrap_or_else(|| panic!("arguments look like key=value, got {arg:?}"));
        match key {
            "nx" => cfg.nx = value.parse().expect("nx"),
            "ny" => cfg.ny = value.parse().expect("ny"),
            "tmax" => cfg.t_max = value.parse().expect("tmax"),
            "cfl" => cfg.cfl = value.parse().expect("cfl"),
            "perturbation" => cfg.perturbation = value.parse().expect("perturbation"),
            "out" => out_dir = Some(value.into()),
            "progress" => progress = value != "0",
            other => panic!("unknown argument {other:?}"),
        }
    }

    let circle = circle_polygon(cfg.r_cyl, 256).translated(cfg.obstacle_x, cfg.obstacle_y);
    let mut state = FlowState::new(&cfg, Some(&circle)).expect("state");
    println!(
        "grid {}x{}  h=({:.4},{:.4})  dt={:.5}  nu={:.4}  t_max={}",
        cfg.nx,
        cfg.ny,
        cfg.hx(),
        cfg.hy(),
        cfg.dt(),
        cfg.viscosity(),
        cfg.t_max
    );

    let started = Instant::now();
    let mut samples = Vec::new();
    while state.t < cfg.t_max {
        state.step().expect("flow solver diverged");
        samples.push(compute_forces(&state));
        if progress && state.steps % 100 == 0 {
            let s = samples.last().unwrap();
            println!(
                "step {:6}  t={:7.3}  cd={:8.4}  cl={:8.4}  [{:.1}s]",
                state.steps,
                state.t,
                s.cd,
                s.cl,
                started.elapsed().as_secs_f64()
            );
        }
    }

    let window: Vec<_> = samples.iter().filter(|s| s.t >= 0.5 * cfg.t_max).collect();
    let n = window.len() as f64;
    let mean_cd = window.iter().map(|s| s.cd).sum::<f64>() / n;
    let mean_cl = window.iter().map(|s| s.cl).sum::<f64>() / n;
    let cl_amp = window
        .iter()
        .map(|s| (s.cl - mean_cl).abs())
        .fold(0.0f64, f64::max);
    println!(
        "mean_cd={:.6}  mean_cl={:.6}  |mean_cl/mean_cd|={:.4}  cl_swing={:.4}  wall={:.1}s",
        mean_cd,
        mean_cl,
        (mean_cl / mean_cd).abs(),
        cl_amp,
        started.elapsed().as_secs_f64()
    );

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(&dir).expect("output dir");
        write_forces_csv(&dir.join("forces.csv"), &samples).expect("csv");
        write_u_ppm(&dir.join("u_final.ppm"), &state).expect("ppm");
        println!("wrote {}", dir.display());
    }
}

//! Shape optimization of 2D obstacles in incompressible flow: a PPO agent
//! emits Bezier control points one action at a time (single-step episodes),
//! a staggered-grid projection solver scores each shape by its time-averaged
//! lift-to-drag ratio, and the training loop closes the loop.

pub mod agent;
pub mod cli;
pub mod config;
pub mod envloop;
pub mod flow;
pub mod geometry;

//! Fully distributed LQR-based control of multi-input discrete-time linear systems.
//!
//! Each of `N` agents owns one input channel `B_{k,i} u_{k,i}` of a shared plant and
//! talks only to its graph neighbors. The crate provides the backward design
//! recursion, the forward virtual-state controller, centralized / decentralized /
//! consensus baselines for comparison, cost bounds and a CLI experiment runner.
//!
//! All numerics are generic over [`Real`] (`f32` or `f64`); the `*64` aliases
//! below fix the scalar to `f64`.

pub mod baselines;
pub mod cli;
pub mod controller;
pub mod graph;
pub mod init_consensus;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod presets;
pub mod recursion;
pub mod scalar;
pub mod weights_opt;

pub use graph::{DirectedGraph, FusionWeights, GraphError, WeightMatrix};
pub use model::{InputSchedule, MatrixSeq, ModelError, SystemSchedule};
pub use recursion::{
    design_backward, solve_stationary, RecursionError, RecursionTables, StationaryTables,
};
pub use scalar::Real;

pub type Schedule64 = SystemSchedule<f64>;
pub type Weights64 = WeightMatrix<f64>;
pub type Tables64 = RecursionTables<f64>;
pub type Stationary64 = StationaryTables<f64>;
pub type Trajectory64 = controller::Trajectory<f64>;
pub type WeightSchedule64 = weights_opt::WeightSchedule<f64>;

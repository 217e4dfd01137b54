//! Minimal neural-network toolkit: tape autodiff, parameters, optimisers.

pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod optim;
pub mod params;

pub use graph::{Gradients, Graph, Var};
pub use optim::{clip_global_norm, Optimizer, OptimizerKind};
pub use params::{Bound, Init, ModelParams, ModuleTag};

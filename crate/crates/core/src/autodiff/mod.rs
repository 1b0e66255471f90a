//! Reverse-mode automatic differentiation: a recording tape, the layer
//! primitives the classifier needs, optimizers and a gradient checker.

pub mod gradcheck;
pub mod kernels;
pub mod optim;
pub mod params;
pub mod tape;

pub use gradcheck::{check_gradients, GradCheckOptions, GradCheckReport, ParamCheck};
pub use optim::{OptimError, Optimizer, OptimizerConfig, OptimizerKind};
pub use params::{he_uniform, ParamId, ParamStore, Parameter};
pub use tape::{bce_term, sigmoid, softplus, BatchStats, Gradients, Tape, Var};

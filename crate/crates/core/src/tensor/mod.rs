//! Dense tensors, the UPANets operator set and reverse-mode gradients.

mod dense;
pub mod element;
mod fpenv;
pub mod gradcheck;
mod graph;
pub mod ops;

pub use dense::Tensor;
pub use element::Element;
pub use fpenv::FlushDenormals;
pub use gradcheck::{grad_check, grad_check_at, GradReport};
pub use graph::{Gradients, Graph, Var};
pub use ops::conv::Conv2dSpec;
pub use ops::norm::{BatchNormMode, BatchStats, RunningStats, BATCH_NORM_EPS, BATCH_NORM_MOMENTUM, LAYER_NORM_EPS};

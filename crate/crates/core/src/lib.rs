//! Hahn-polynomial KAN forecaster: tensors with reverse-mode autodiff,
//! orthogonal polynomial bases, KAN layers, the patch-mixing model, training
//! and benchmark data handling.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod kan;
pub mod model;
pub mod poly;
pub mod tensor;
pub mod train;

pub use config::RunConfig;
pub use error::{Error, LoadError, Result};
pub use kan::{DomainMap, KanLayer, LayerMode};
pub use model::{HaKanModel, ModelConfig};
pub use poly::{Basis, BasisKind, HahnBasis};
pub use tensor::{Tape, Tensor, Var};
pub use train::{MetricRecord, TrainSpec};

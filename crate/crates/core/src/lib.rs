//! Structure-preserving learned closures for coarse-grained 1D Burgers' and
//! Korteweg–de Vries equations.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments, clippy::needless_range_loop)]

pub mod autodiff;
pub mod boundary;
pub mod closure;
pub mod compression;
pub mod datagen;
pub mod error;
pub mod grid;
pub mod metrics;
pub mod nn;
pub mod pde;
pub mod rollout;
pub mod training;

pub use boundary::{BcSpec, FieldKind, GhostSpec, Inflow, PadPlan};
pub use closure::{
    ClosureModel, CoarseContext, CoarseOperator, ModelKind, NoClosure, Smagorinsky, SpClosure, VanillaCnn,
};
pub use compression::{CompressionOperator, StateTransform};
pub use datagen::{BcKind, DnsSetup, FourierCondition, SimulationCondition, SnapshotDataset, SnapshotRef};
pub use error::{Error, Result};
pub use grid::{FilterPair, GridPair, Resampler};
pub use nn::Architecture;
pub use pde::{Equation, PdeConfig, Trajectory};
pub use rollout::SgsInit;
pub use training::{PreparedData, TrainConfig, TrainOutcome};

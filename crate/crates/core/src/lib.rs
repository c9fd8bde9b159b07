//! Missing-value imputation and label prediction with a graph neural
//! network over a bipartite observation/feature graph and a sign-gated
//! feature interdependence graph.

pub mod correlation;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod graph;
pub mod missingness;
pub mod model;
pub mod numcore;
pub mod synth;
pub mod train;

pub use correlation::{pairwise_corr, CorrMatrix, Estimator, SignMatrix};
pub use dataio::{Column, ColumnKind, Dataset, Labels, Mask, ScalerStats, Schema};
pub use error::{Error, Result};
pub use graph::{build_graph, DropMasks, Graph};
pub use missingness::{Mechanism, MissSpec};
pub use model::{Hyper, LabelKind, ModelParams};
pub use numcore::{Matrix, Reduce};
pub use train::{fit, impute, impute_new, Checkpoint, TrainConfig};

//! Joint projection and low-rank dictionary learning with dual graph
//! constraints.
//!
//! Data samples are matrix columns. Class labels are 1-based at the API
//! boundary and 0-based inside [`StructuredDictionary`].

pub mod config;
pub mod datasets;
pub mod dict_learn;
pub mod error;
pub mod graphs;
pub mod linalg;
pub mod pipeline;
pub mod projection;
pub mod rpca;
pub mod sparse_coding;
pub mod synthetic;

pub use config::{EigSelect, TrainConfig};
pub use datasets::{
    apply_corruption, load_dataset, load_model, save_model, split, CorruptionKind, CorruptionSpec,
    LabeledDataset, LoadOptions,
};
pub use dict_learn::StructuredDictionary;
pub use error::{Error, Result};
pub use graphs::{GraphKind, GraphWeights, LaplacianPair, NeighborhoodConfig};
pub use linalg::{Matrix, Vector};
pub use pipeline::{classify, train, Classification, Model, TrainReport};
pub use projection::Projection;
pub use rpca::{RpcaConfig, RpcaResult};
pub use synthetic::PlantedSubspaces;

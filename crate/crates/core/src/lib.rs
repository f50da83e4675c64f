//! Hierarchy-graph enhanced multi-level classification.
//!
//! A class taxonomy becomes a graph over all `K` classes. Per-class text
//! features and per-class visual prototypes are each refined by a graph
//! encoder; the refined prototypes are fused into every image's spatial
//! features through attention, and the resulting scores are trained with a
//! weighted cross-entropy summed over hierarchy levels.
//!
//! Module map:
//!
//! * [`hierarchy`]: taxonomy files, validation, the level-major graph.
//! * [`graph_encoder`]: GCN / GAT / GraphSAGE layers with backward passes.
//! * [`embedding_store`]: text tables, image records, prototypes, `HGEB` files.
//! * [`fusion`]: attention fusion and the λ-weighted logit combination.
//! * [`objective`]: per-level partitioning, probability strategies, loss.
//! * [`trainer`]: the composed pipeline, SGD + cosine schedule, checkpoints.
//! * [`eval_report`]: accuracy, consistency, sweeps and reports.
//! * [`synth`]: seeded hierarchy-aligned synthetic data.

pub mod embedding_store;
pub mod error;
pub mod eval_report;
pub mod fusion;
pub mod graph_encoder;
pub mod hierarchy;
pub mod linalg;
pub mod objective;
pub mod synth;
pub mod trainer;

pub use embedding_store::{ImageFeatures, PrototypeTable, TextTable};
pub use error::{HgtError, Result};
pub use fusion::{FusionConfig, LogitsBundle};
pub use graph_encoder::{Activation, EncoderParams, Init, LayerParams, Variant};
pub use hierarchy::{HierGraph, HierarchySource, Taxonomy};
pub use objective::{LossConfig, Strategy};
pub use trainer::{ModelState, Params, Pipeline, Toggles, TrainConfig};

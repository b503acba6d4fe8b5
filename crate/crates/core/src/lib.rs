//! In-context anomaly detection.
//!
//! A detector scores a sample by its discrepancy from a small set of
//! normal references, both embedded by one shared model. The same weights
//! serve time-series patches, tabular rows and log-template windows.

pub mod backbone;
pub mod config;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod ingest;
pub mod log_miner;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod real;
pub mod sample;
pub mod scorer;
pub mod synthgen;
pub mod trainer;

pub use backbone::{Anchors, Backbone, PrefixState, RepresentationPair, SequenceModel, SpecialTokens, TrainLayout};
pub use config::{ModelConfig, PositionScheme};
pub use encoder::{EmbeddingSequence, ModalityEncoder};
pub use error::{IcadError, Result};
pub use evaluation::{default_metric, evaluate, sweep_k, SweepRow};
pub use log_miner::{MinerConfig, Template, TemplateMiner};
pub use metrics::{auroc, best_f1_sweep, f1_point_adjusted, point_adjust, EvalReport, MetricKind};
pub use model::IcadModel;
pub use real::Real;
pub use sample::{DatasetHandle, MinMax, Modality, Payload, Sample};
pub use scorer::{detect, discrepancy, score_batch, DiscrepancyScore};
pub use synthgen::{AnomalyKind, SynthSpec};
pub use trainer::{
    Checkpoint, LossForm, NegativeKind, Objective, ReferenceSet, SamplingScheduler, ScheduleMode, TrainConfig, Trainer,
    Triplet,
};

//! Dataset assembly, the two training phases, and checkpointing.

mod checkpoint;
mod config;
mod dataset;
mod trainer;

pub use checkpoint::Checkpoint;
pub use config::{parse_config_text, DatasetSpec, Profile, RunConfig, ShapeSpec, TrainConfig};
pub use dataset::{
    build_dataset, labeled_patches, make_clouds, Corpus, CorpusCloud, Datasets, LabeledPatch, ShapeSummary,
};
pub use trainer::{
    train_encoder, train_estimator, train_pipeline, write_history_csv, EpochRecord, Phase, Pipeline, TrainedEstimator,
    Trainer,
};

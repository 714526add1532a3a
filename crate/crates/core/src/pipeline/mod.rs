//! File-level entry points: configuration, dataset ingestion, stage one,
//! training, evaluation and analysis.

mod analysis;
mod config;
mod dataset;
mod evaluate;
mod fixtures;
mod optim;
mod stage1;
mod train;

pub use analysis::{analyze_bias, dump_features, scribble_probability, write_histogram, BiasSources};
pub use config::{AnalysisConfig, DatasetLayout, DebateConfig, LrSchedule, PipelineConfig, TrainConfig};
pub use dataset::{ingest_dataset, DatasetManifest, DatasetRecord, LoadedRecord, Split, IMAGE_EXTENSIONS};
pub use evaluate::{evaluate, load_eval_set, EvalSample, FixedPredictor, ImageScores, MetricTable, Predictor};
pub use fixtures::{synthetic_sample, write_fixture_corpus, SyntheticSample};
pub use optim::{lr_at, Sgd, StepSchedule, MOMENTUM_PREFIX};
pub use stage1::{
    pseudo_manifest_path, run_stage1, write_prompts, ImageOutcome, Stage1Backends, Stage1Options, Stage1Progress,
    Stage1Summary, DEBATE_DIR, MASK_DIR, PROGRESS_FILE, PROMPT_DIR, PSEUDO_MANIFEST_FILE,
};
pub use train::{prepare_training_set, StepLog, TrainReport, TrainSample, Trainer, CHECKPOINT_DIR, LAST_CHECKPOINT, TRAIN_LOG};

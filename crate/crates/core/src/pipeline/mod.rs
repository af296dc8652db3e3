//! End-to-end two-frame estimation: configuration, orchestration of the
//! matcher, background and per-instance stages, composition, Fl evaluation,
//! and synthetic scenes with exact ground truth.

mod config;
mod eval;
mod run;
mod synth;
mod training;

pub use config::{load_toml, PipelineConfig, CONFIG_ENV};
pub use eval::{
    evaluate_fl, is_flow_outlier, EvalReport, FlBreakdown, FlCount, FL_ABS_THRESHOLD,
    FL_REL_THRESHOLD,
};
pub use run::{compose, run, run_with_net, InstanceRow, PipelineOutput, RunReport};
pub use synth::{load_bundle, make_synthetic_scene, BodyMotion, SceneBundle, SceneSpec, SyntheticScene};
pub use training::{scene_examples, train_matcher, MatcherTrainingConfig, TrainingSummary};

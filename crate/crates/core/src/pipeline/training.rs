use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{make_synthetic_scene, SceneSpec, SyntheticScene};
use crate::error::{Error, Result};
use crate::matchnet::{argmax_accuracy, draw_examples, train, NetParams, NetSpec, TrainConfig, TrainingExample};
use crate::scalar::Scalar;

/// Matcher training on rendered scenes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatcherTrainingConfig {
    pub scene: SceneSpec,
    /// Training scenes use seeds `first_seed..first_seed + scenes`.
    pub first_seed: u64,
    pub scenes: usize,
    /// Examples drawn per scene (two per pixel).
    pub examples_per_scene: usize,
    /// Scene used only to measure accuracy.
    pub validation_seed: u64,
    pub validation_examples: usize,
    /// Candidate strip length beyond the patch; even.
    pub range: usize,
    pub filters: Vec<usize>,
    pub train: TrainConfig,
}

impl Default for MatcherTrainingConfig {
    fn default() -> Self {
        Self {
            scene: SceneSpec::default(),
            first_seed: 1000,
            scenes: 8,
            examples_per_scene: 1000,
            validation_seed: 999,
            validation_examples: 1000,
            range: 32,
            filters: vec![32, 32, 32, 32],
            train: TrainConfig {
                iterations: 1500,
                batch_size: 32,
                learning_rate: 0.005,
                lr_milestones: vec![1000],
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSummary {
    pub examples: usize,
    pub validation_accuracy: f64,
}

/// Examples drawn from the non-occluded pixels of a scene.
pub fn scene_examples<T: Scalar>(
    scene: &SyntheticScene,
    count: usize,
    range: usize,
    patch: usize,
    seed: u64,
) -> Vec<TrainingExample<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    draw_examples(
        &scene.image1.cast::<T>(),
        &scene.image2.cast::<T>(),
        &scene.noc_flow().cast::<T>(),
        count,
        range,
        patch,
        count * 20,
        &mut rng,
    )
}

/// Renders the training scenes, trains a fresh matcher, and reports its
/// argmax accuracy on a held-out scene.
pub fn train_matcher<T: Scalar>(cfg: &MatcherTrainingConfig) -> Result<(NetParams<T>, TrainingSummary)> {
    if !cfg.range.is_multiple_of(2) {
        return Err(Error::Config(format!("training range must be even, got {}", cfg.range)));
    }
    let spec = NetSpec::with_filters(cfg.filters.clone());
    spec.validate()?;
    let patch = spec.receptive_field();
    let mut examples = Vec::new();
    for s in 0..cfg.scenes as u64 {
        let seed = cfg.first_seed + s;
        let scene = make_synthetic_scene(seed, &cfg.scene)?;
        examples.extend(scene_examples::<T>(&scene, cfg.examples_per_scene, cfg.range, patch, seed));
    }
    let net = train(&examples, spec, &cfg.train)?;
    let val_scene = make_synthetic_scene(cfg.validation_seed, &cfg.scene)?;
    let val = scene_examples::<T>(&val_scene, cfg.validation_examples, cfg.range, patch, cfg.validation_seed);
    let validation_accuracy = if val.is_empty() { 0.0 } else { argmax_accuracy(&net, &val)? };
    Ok((
        net,
        TrainingSummary {
            examples: examples.len(),
            validation_accuracy,
        },
    ))
}

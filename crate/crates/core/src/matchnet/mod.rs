//! Siamese convolutional matcher: valid 3x3 convolutions with batch norm
//! and ReLU, an inner-product scoring layer, and a smoothed cross-entropy
//! training objective over one-dimensional candidate strips.

mod checkpoint;
pub mod layers;
mod loss;
mod network;
mod sampling;
mod tensor;
mod train;

pub use checkpoint::{
    checkpoint_from_str, checkpoint_to_string, load_checkpoint, save_checkpoint,
    CHECKPOINT_FORMAT, CHECKPOINT_VERSION,
};
pub use loss::{make_target, softmax, softmax_xent_loss, TargetDistribution, TARGET_WEIGHTS};
pub use network::{
    extract_features, extract_features_padded, ForwardCache, LayerGrads, LayerParams, NetGrads,
    NetParams, NetSpec, BN_EPS, BN_MOMENTUM,
};
pub use sampling::{
    draw_examples, sample_pixel_examples, sample_training_pair, Axis, TrainingExample,
};
pub use tensor::{match_score, FeatureMap, Tensor3};
pub(crate) use tensor::dot;
pub use train::{
    argmax_accuracy, batch_loss, batch_loss_and_grads, example_scores, train, train_from,
    BatchResult, TrainConfig,
};

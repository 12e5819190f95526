//! Small MLPs trained with isotropy or cosine-similarity penalties.

pub mod data;
pub mod loss;
pub mod model;
pub mod train;

pub use data::{make_blobs, BlobsSpec, LabeledData};
pub use loss::{cosreg_gradient, cosreg_penalty, istar_loss, softmax_cross_entropy};
pub use model::{
    forward_capture, penalty_cloud, Activation, DenseLayer, ForwardCapture, Gradients, LayerScope, MlpModel,
};
pub use train::{
    batch_gradients, layer_isoscores, refresh_shrinkage, train, train_model, BatchLoss, EpochRecord,
    Regularizer, ShrinkageState, TrainConfig, TrainReport,
};

//! A small differentiable autoencoder wrapped around the quantizers.
//!
//! The pieces, bottom-up:
//!
//! * [`mlp`] — plain multilayer perceptrons with hand-written backward
//!   passes (finite-difference checked in its tests).
//! * [`optim`] — SGD and Adam over flat parameter blocks.
//! * [`model`] — the encoder/quantizer/decoder sandwich, the three-term
//!   loss, and the straight-through gradient routing.
//! * [`train`] — configuration, seeding, the minibatch loop, and metrics.

pub mod mlp;
pub mod model;
pub mod optim;
pub mod train;

pub use mlp::{Activation, Layer, Mlp, MlpCache, MlpGrads};
pub use model::{
    backward_and_step, decode, encode, forward_image, per_term_gradients, reconstruction_loss,
    straight_through, total_loss, BottleneckQuantizer, BottleneckState, EncoderDecoderParams,
    ForwardImage, Gradients, LossBreakdown, StepDiagnostics, StepOptions, StepReport,
    TermGradients,
};
pub use optim::{OptimizerKind, OptimizerState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use train::{
    evaluate, init_bottleneck, train_autoencoder, AeQuantizer, AeTrainConfig, AeTrainReport,
    CollectSink, EvalSummary, NullSink, TrainSink,
};

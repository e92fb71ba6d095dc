//! Graph-based label enhancement for multi-instance multi-label (MIML) data.
//!
//! A label enhancer recovers a per-bag label distribution from instance
//! features and logical labels: instances are embedded, linked by a mutual
//! K-nearest-neighbour graph, and three nonlinear branches are fused into
//! label logits that are refined once through a label graph. The enhancer is
//! trained jointly with a pooled MIML classifier, each side treating the
//! other's outputs as constants during its own update.
//!
//! Module map:
//!
//! - [`data`]: bags, datasets, JSON-lines IO, splitting, synthetic data
//! - [`graph`]: mutual-KNN Gaussian adjacency, Laplacian, propagation
//! - [`nn`]: dense networks with hand-written reverse mode and a gradient checker
//! - [`enhancer`]: label distribution recovery
//! - [`loss`]: enhancer and classifier objectives with analytic gradients
//! - [`classifier`]: max-pooled MIML classifier
//! - [`metrics`]: HL, RL, mAP, Ma-F1 and average rank
//! - [`train`]: alternating training loop, ablations, evaluation

pub mod classifier;
pub mod data;
pub mod enhancer;
pub mod error;
pub mod graph;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod train;

mod util;

pub use classifier::{ClassifierModel, Pooling};
pub use data::{Bag, GroundTruthDistribution, MimlDataset, SplitSpec, SynthConfig};
pub use enhancer::{EnhancedBatch, EnhancerConfig, EnhancerModel, WidthPolicy};
pub use error::{Error, Result};
pub use graph::{LaplacianMatrix, WeightedGraph};
pub use loss::{LossWeights, SimilarityMode, SimilarityPair};
pub use metrics::{Direction, MetricsReport};
pub use nn::{Activation, DenseLayer, FeedForwardNet, ParameterVector};
pub use train::{Ablation, TrainConfig, TrainHistory, TrainOutcome};

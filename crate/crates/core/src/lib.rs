//! Human motion prediction in a quotient pose space.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod features;
pub mod model;
pub mod motion;
pub mod network;
pub mod objectives;
pub mod optim;
pub mod perturb;
pub mod quotient;
pub mod rng;
pub mod trainer;

pub use checkpoint::{Checkpoint, Progress};
pub use config::TrainConfig;
pub use dataio::{LabeledSequence, WindowedDataset};
pub use error::{Error, ErrorCategory, Result};
pub use eval::{evaluate, mpjpe, HorizonReport, Predictor};
pub use model::Model;
pub use motion::{HorizonSpec, MotionSequence, Pose, Skeleton};
pub use objectives::{LossReport, LossWeights};
pub use trainer::{train, TrainOutput, Trainer};

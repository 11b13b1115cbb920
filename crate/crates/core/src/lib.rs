//! Self-supervised anomaly scoring for 2-D slices: a variational
//! autoencoder pretrained by context restoration, fine-tuned with a
//! geometric-transform classifier, and scored by a calibrated blend of
//! transform-recognition confidence and reconstruction error.

pub mod checkpoint;
pub mod datamodel;
pub mod error;
pub mod evaluation;
pub mod geoxform;
mod layers;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod optim;
pub mod scoring;
pub mod seeding;
pub mod synthdata;
pub mod training;

pub use datamodel::{AnomalyMask, DatasetManifest, Label, ManifestEntry, SliceImage, Split, SplitSpec};
pub use error::{Error, Result};
pub use network::{ModelParams, NetworkConfig};
pub use training::{Stage, TrainConfig};

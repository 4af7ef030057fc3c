//! Channel-wise singular value decomposition editing of diffusion latents.
//!
//! A latent `x` is edited toward an attribute latent `z` by blending the
//! tail of `x`'s singular vectors with the reversed leading singular vectors
//! of `z`, then reassembling with singular values predicted by a small
//! network. The crate also covers the `LSVD` tensor format, the training
//! loop for the predictor, and spectral analysis of denoising trajectories.

pub mod analysis;
pub mod avi;
pub mod error;
pub mod latent;
pub mod linalg;
pub mod phi;
pub mod rng;
pub mod trainer;

pub use avi::{
    avi_forward, build_attribute_bases, edit_latent, infer_channels, AviConfig, AviOutput, AviPlan, InferenceOutput,
    Lambdas, LossParts, SingularValuePredictor, SourceSpectrum, Stage, TrainingOutput,
};
pub use error::{Error, Result};
pub use latent::{load_latent, save_latent, synth_latent, GenSpec, LatentMeta, LatentTensor, Shape};
pub use linalg::{geodesic_distance, principal_angles, reconstruct, svd, Matrix, Norm, SvdTriple};
pub use phi::{load_model, save_model, PhiDims, PhiModel};
pub use rng::Rng;
pub use trainer::{evaluate, train, Dataset, EvalReport, TrainConfig, TrainHistory};

//! Drift diagnostics: splitting the training gradient into the parts coming
//! from correctly and wrongly labeled samples, and the SGD diffusion scale.

mod decompose;
mod diffusion;
mod smooth;

pub use decompose::{
    cosine, decompose_dataset_gradient, decompose_minibatch_gradient, write_diag_csv, DiagRow,
    DriftDecomposition, DIAG_HEADER,
};
pub use diffusion::{estimate_diffusion, minibatch_noise_energy, DiffusionEstimate};
pub use smooth::log_window_smooth;

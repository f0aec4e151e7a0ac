//! Single-fidelity Gaussian process regression.

pub mod kernel;
mod model;

pub use kernel::{
    kernel_eval, projected_kernel_eval, ArdKernelParams, Kernel, NargpKernel, ProjectedKernel,
};
pub use model::{
    ascend_lml, fit_gp, fit_gp_with, lml_gradient, lml_with_gradient, log_marginal_likelihood,
    Ascent, GpConfig, GpManifest, GpModel, Hyperparameters, LmlEval, NoiseMode,
};

//! Frequency-enhanced contrastive loss for single-image super-resolution,
//! built on a small reverse-mode autodiff tape.
//!
//! The main entry points are [`decloss`] and [`total_loss`] for training,
//! [`icoo`] for evaluating how well SR patches cluster around their HR
//! counterparts, and [`toy`] for a complete miniature SR pipeline.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod contrast;
pub mod error;
pub mod fourier;
pub mod gradcheck;
pub mod icoo;
pub mod patch;
pub mod tape;
pub mod tensor;
pub mod toy;

pub use contrast::{
    cosine_similarity_matrix, decloss, l1_loss, psnr_mask, spatial_contrastive_loss, total_loss,
    ContrastConfig, LossTerms, LossWeights, PerceptualDistance, Reduction, TempMode,
};
pub use error::{Error, Result};
pub use fourier::{
    dft_matrix, enhance, enhance_tensor, gaussian_kernel, transform2d, ComplexMatrix, Direction,
    EnhanceConfig, InverseMode,
};
pub use gradcheck::{finite_diff_check, standard_suite, CaseReport, GradCheck};
pub use icoo::{icoo, p_star, sample_mini_patches, Aggregate, IcooConfig, IcooReport, MiniPatch};
pub use patch::{patchify, unpatchify, MiniPatchBatch, PatchOrigin};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

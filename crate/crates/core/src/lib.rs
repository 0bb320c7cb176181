//! Dilutional noise initialization for diffusion-based video editing.
//!
//! The initial latent noise obtained by DDIM inversion still carries the
//! input video's structure. This crate separates that noise into a visual
//! branch and a Gaussian branch with an adaptive spectral filter, dilutes the
//! visual branch with fresh noise inside an attention-guided editing region,
//! and recombines the two into the noise used for editing.
//!
//! The [`toy`] module is a small, CPU-trainable diffusion testbed used to
//! exercise the whole pipeline end to end.

pub mod dilution;
pub mod error;
pub mod guidance;
pub mod io;
pub mod metrics;
pub mod rng;
pub mod spectral;
pub mod tensor;
pub mod toy;

pub use dilution::{dilute, make_dilutional_noise, DilutionConfig};
pub use error::{Error, Result};
pub use guidance::{combine_masks, pool_maps, resize_map, AttentionMap, Category, GuidanceMask};
pub use io::{read_tensor, write_tensor};
pub use rng::{random_gaussian, Rng};
pub use spectral::{
    apply_filter, build_asf, build_glpf, dft3, disentangle, idft3, NormMode, SpectralFilter,
    Spectrum,
};
pub use tensor::{Dims, LatentTensor};

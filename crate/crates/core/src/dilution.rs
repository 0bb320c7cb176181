//! Guided noise dilution: blend fresh Gaussian noise into the visual branch
//! inside the editing region, then recombine with the Gaussian branch.

use crate::error::{Error, Result};
use crate::guidance::{guidance_from_maps, AttentionMap, GuidanceMask};
use crate::rng::{random_gaussian, Rng};
use crate::spectral::{build_asf, disentangle, NormMode};
use crate::tensor::LatentTensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DilutionConfig {
    pub alpha: f64,
    pub beta: f64,
    /// Weight on the Gaussian branch; the dilution mixture gets `2 - gamma`.
    pub gamma: f64,
    pub seed: u64,
    pub norm: NormMode,
}

impl Default for DilutionConfig {
    fn default() -> Self {
        DilutionConfig {
            alpha: 0.5,
            beta: 0.0,
            gamma: 1.0,
            seed: 0,
            norm: NormMode::PerChannel,
        }
    }
}

impl DilutionConfig {
    pub fn new(alpha: f64, beta: f64, gamma: f64, seed: u64) -> Result<Self> {
        let cfg = DilutionConfig {
            alpha,
            beta,
            gamma,
            seed,
            norm: NormMode::PerChannel,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidParam(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        check_gamma(self.gamma)
    }

    /// True when the mask is identically zero whatever the maps contain.
    pub fn is_identity(&self) -> bool {
        self.alpha == 0.0 && self.beta == 0.0 && self.gamma == 1.0
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma < 2.0) {
        return Err(Error::InvalidParam(format!("gamma must lie in (0, 2), got {gamma}")));
    }
    Ok(())
}

/// `z* = gamma * z_g + (2 - gamma) * (m ⊙ eps + (1 - m) ⊙ z_v)`, with the
/// mask broadcast over channels.
pub fn dilute(
    z_v: &LatentTensor,
    z_g: &LatentTensor,
    m_edit: &GuidanceMask,
    eps: &LatentTensor,
    gamma: f64,
) -> Result<LatentTensor> {
    check_gamma(gamma)?;
    z_v.ensure_same_dims(z_g, "dilute z_v/z_g")?;
    z_v.ensure_same_dims(eps, "dilute z_v/eps")?;
    let d = z_v.dims();
    if !m_edit.matches(d) {
        return Err(Error::Shape(format!(
            "mask ({},{},{}) does not match latent {d}",
            m_edit.w, m_edit.h, m_edit.l
        )));
    }
    let (v, g, e) = (z_v.data(), z_g.data(), eps.data());
    let mut out = vec![0.0f32; d.len()];
    for (cell, &m) in m_edit.values().iter().enumerate() {
        let m = m as f64;
        for c in 0..d.c {
            let i = cell * d.c + c;
            let mixture = m * e[i] as f64 + (1.0 - m) * v[i] as f64;
            out[i] = (gamma * g[i] as f64 + (2.0 - gamma) * mixture) as f32;
        }
    }
    let out = LatentTensor::from_vec(d, out)?;
    out.check_finite()?;
    Ok(out)
}

/// Everything produced on the way from `z` to `z*`.
#[derive(Debug, Clone)]
pub struct DilutionParts {
    pub z_v: LatentTensor,
    pub z_g: LatentTensor,
    pub mask: GuidanceMask,
    pub eps: LatentTensor,
    pub z_star: LatentTensor,
}

/// Adaptive filter from `z0`, disentangle `z`, build the guidance mask from
/// `maps`, draw `eps` from `cfg.seed` and dilute.
pub fn make_dilutional_noise_parts(
    z: &LatentTensor,
    z0: &LatentTensor,
    maps: &[AttentionMap],
    cfg: &DilutionConfig,
) -> Result<DilutionParts> {
    cfg.validate()?;
    z.ensure_same_dims(z0, "z vs z0")?;
    let d = z.dims();
    let filter = build_asf(z0, cfg.norm)?;
    let (z_v, z_g) = disentangle(z, &filter)?;
    let mask = guidance_from_maps(maps, d, cfg.alpha, cfg.beta)?;
    let eps = random_gaussian(d, &mut Rng::new(cfg.seed))?;
    let z_star = dilute(&z_v, &z_g, &mask, &eps, cfg.gamma)?;
    Ok(DilutionParts {
        z_v,
        z_g,
        mask,
        eps,
        z_star,
    })
}

pub fn make_dilutional_noise(
    z: &LatentTensor,
    z0: &LatentTensor,
    maps: &[AttentionMap],
    cfg: &DilutionConfig,
) -> Result<LatentTensor> {
    Ok(make_dilutional_noise_parts(z, z0, maps, cfg)?.z_star)
}

use crate::error::{Error, Result};
use crate::tensor::LatentTensor;

/// Linear-beta noise schedule with cumulative products `alphabar_t`,
/// `t = 1..=T`. By convention `alphabar_0 = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta_min: f64,
    beta_max: f64,
    betas: Vec<f64>,
    alphabar: Vec<f64>,
}

pub const DEFAULT_T: usize = 1000;
pub const DEFAULT_BETA_MIN: f64 = 1e-4;
pub const DEFAULT_BETA_MAX: f64 = 0.02;

pub fn make_schedule(t: usize, beta_min: f64, beta_max: f64) -> Result<NoiseSchedule> {
    if t < 2 {
        return Err(Error::InvalidParam(format!("T must be at least 2, got {t}")));
    }
    if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
        return Err(Error::InvalidParam(format!(
            "need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]"
        )));
    }
    let betas: Vec<f64> = (0..t)
        .map(|i| beta_min + (beta_max - beta_min) * i as f64 / (t - 1) as f64)
        .collect();
    let mut alphabar = Vec::with_capacity(t + 1);
    alphabar.push(1.0);
    let mut acc = 1.0f64;
    for b in &betas {
        acc *= 1.0 - b;
        alphabar.push(acc);
    }
    Ok(NoiseSchedule {
        beta_min,
        beta_max,
        betas,
        alphabar,
    })
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        make_schedule(DEFAULT_T, DEFAULT_BETA_MIN, DEFAULT_BETA_MAX).expect("valid default schedule")
    }
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    /// The `(beta_min, beta_max)` the schedule was built from.
    pub fn beta_range(&self) -> (f64, f64) {
        (self.beta_min, self.beta_max)
    }

    /// `beta_t` for `t` in `1..=T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// `alphabar_t` for `t` in `0..=T`.
    pub fn alphabar(&self, t: usize) -> f64 {
        self.alphabar[t]
    }

    pub fn alphabars(&self) -> &[f64] {
        &self.alphabar[1..]
    }

    /// Evenly spaced sub-schedule `[T/steps, 2T/steps, ..., T]`.
    pub fn timesteps(&self, steps: usize) -> Result<Vec<usize>> {
        let t = self.steps();
        if steps == 0 || steps > t {
            return Err(Error::InvalidParam(format!(
                "DDIM steps must lie in 1..={t}, got {steps}"
            )));
        }
        if t % steps != 0 {
            return Err(Error::InvalidParam(format!(
                "DDIM steps {steps} do not divide T = {t}"
            )));
        }
        let stride = t / steps;
        Ok((1..=steps).map(|i| i * stride).collect())
    }
}

/// Closed-form forward jump `x_t = sqrt(alphabar_t) x0 + sqrt(1 - alphabar_t) eps`.
pub fn q_sample(x0: &LatentTensor, t: usize, eps: &LatentTensor, s: &NoiseSchedule) -> Result<LatentTensor> {
    if t == 0 || t > s.steps() {
        return Err(Error::InvalidParam(format!(
            "timestep {t} outside 1..={}",
            s.steps()
        )));
    }
    let ab = s.alphabar(t);
    x0.axpby(ab.sqrt(), eps, (1.0 - ab).sqrt())
}

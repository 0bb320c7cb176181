//! Deterministic DDIM sampling (eta = 0) and its inversion.
//!
//! With cumulative products `ab`, one step between any two timesteps is
//! `x' = sqrt(ab'/ab) x + (sqrt(1/ab' - 1) - sqrt(1/ab - 1)) eps_hat`.

use crate::error::Result;
use crate::tensor::LatentTensor;
use crate::toy::model::ToyDenoiser;
use crate::toy::scene::ToyPrompt;
use crate::toy::schedule::NoiseSchedule;

/// Anything that predicts the noise in `x_t`.
pub trait EpsPredictor {
    fn predict_eps(&self, x: &LatentTensor, t: usize, alphabar: f64, cond: &ToyPrompt) -> Result<LatentTensor>;
}

impl EpsPredictor for ToyDenoiser {
    fn predict_eps(&self, x: &LatentTensor, t: usize, alphabar: f64, cond: &ToyPrompt) -> Result<LatentTensor> {
        Ok(self.forward(x, t, alphabar, cond)?.0)
    }
}

/// One DDIM move from cumulative product `ab_from` to `ab_to`.
pub fn ddim_step(x: &LatentTensor, eps: &LatentTensor, ab_from: f64, ab_to: f64) -> Result<LatentTensor> {
    let a = (ab_to / ab_from).sqrt();
    let b = ab_to.sqrt() * ((1.0 / ab_to - 1.0).max(0.0).sqrt() - (1.0 / ab_from - 1.0).max(0.0).sqrt());
    x.axpby(a, eps, b)
}

/// Denoises `z_t` (at timestep `T`) down to an `x0` estimate in `steps` moves.
pub fn ddim_sample<M: EpsPredictor + ?Sized>(
    z_t: &LatentTensor,
    cond: &ToyPrompt,
    model: &M,
    s: &NoiseSchedule,
    steps: usize,
) -> Result<LatentTensor> {
    let ts = s.timesteps(steps)?;
    let mut x = z_t.clone();
    for i in (0..ts.len()).rev() {
        let t = ts[i];
        let prev = if i == 0 { 0 } else { ts[i - 1] };
        let eps = model.predict_eps(&x, t, s.alphabar(t), cond)?;
        x = ddim_step(&x, &eps, s.alphabar(t), s.alphabar(prev))?;
    }
    x.check_finite()?;
    Ok(x)
}

/// Runs DDIM in reverse time, mapping `x0` to the initial latent noise `z`.
/// The noise for the move `t_i -> t_{i+1}` is predicted at `(x_{t_i}, t_{i+1})`.
pub fn ddim_invert<M: EpsPredictor + ?Sized>(
    x0: &LatentTensor,
    cond: &ToyPrompt,
    model: &M,
    s: &NoiseSchedule,
    steps: usize,
) -> Result<LatentTensor> {
    invert_with(x0, s, steps, |x, t| model.predict_eps(x, t, s.alphabar(t), cond))
}

/// Inversion loop with a caller-supplied noise predictor.
pub(crate) fn invert_with(
    x0: &LatentTensor,
    s: &NoiseSchedule,
    steps: usize,
    mut predict: impl FnMut(&LatentTensor, usize) -> Result<LatentTensor>,
) -> Result<LatentTensor> {
    let ts = s.timesteps(steps)?;
    let mut x = x0.clone();
    let mut prev = 0;
    for &t in &ts {
        let eps = predict(&x, t)?;
        x = ddim_step(&x, &eps, s.alphabar(prev), s.alphabar(t))?;
        prev = t;
    }
    x.check_finite()?;
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::rng::{random_gaussian, Rng};
    use crate::tensor::Dims;
    use crate::toy::scene::{Color, Shape, Style, Verb};
    use crate::toy::schedule::q_sample;

    /// Always predicts the same, known noise.
    struct KnownNoise(LatentTensor);

    impl EpsPredictor for KnownNoise {
        fn predict_eps(&self, _: &LatentTensor, _: usize, _: f64, _: &ToyPrompt) -> Result<LatentTensor> {
            Ok(self.0.clone())
        }
    }

    fn prompt() -> ToyPrompt {
        ToyPrompt::new(Shape::Square, Color::Blue, Verb::Static, Style::Light)
    }

    #[test]
    fn known_noise_recovers_x0() {
        let s = NoiseSchedule::default();
        let d = Dims::new(8, 8, 2, 3).unwrap();
        let x0 = random_gaussian(d, &mut Rng::new(1)).unwrap();
        let eps = random_gaussian(d, &mut Rng::new(2)).unwrap();
        // Closed-form inverse of q_sample: starting from x_T built with eps,
        // every step keeps x_t = sqrt(ab) x0 + sqrt(1 - ab) eps.
        let x_t = q_sample(&x0, 1000, &eps, &s).unwrap();
        let oracle = KnownNoise(eps);
        for steps in [10, 50, 1000] {
            let back = ddim_sample(&x_t, &prompt(), &oracle, &s, steps).unwrap();
            assert!(back.max_abs_diff(&x0).unwrap() < 1e-3, "steps {steps}");
        }
        let z = ddim_invert(&x0, &prompt(), &oracle, &s, 50).unwrap();
        assert!(z.max_abs_diff(&x_t).unwrap() < 1e-3);
        let round = ddim_sample(&z, &prompt(), &oracle, &s, 50).unwrap();
        assert!(round.rel_l2(&x0).unwrap() < 1e-3);
    }

    #[test]
    fn deterministic() {
        let s = NoiseSchedule::default();
        let d = Dims::new(8, 8, 2, 3).unwrap();
        let model = ToyDenoiser::new(crate::toy::model::ModelConfig::new(d), 4).unwrap();
        let z = random_gaussian(d, &mut Rng::new(3)).unwrap();
        let a = ddim_sample(&z, &prompt(), &model, &s, 20).unwrap();
        let b = ddim_sample(&z, &prompt(), &model, &s, 20).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn step_count_validation() {
        let s = NoiseSchedule::default();
        let d = Dims::new(2, 2, 1, 1).unwrap();
        let oracle = KnownNoise(LatentTensor::zeros(d));
        let z = LatentTensor::zeros(d);
        assert!(matches!(
            ddim_sample(&z, &prompt(), &oracle, &s, 1001),
            Err(Error::InvalidParam(_))
        ));
        assert!(ddim_invert(&z, &prompt(), &oracle, &s, 1001).is_err());
    }
}

//! Epsilon-prediction training with Adam.

use crate::error::{Error, Result};
use crate::rng::{random_gaussian, Rng};
use crate::tensor::LatentTensor;
use crate::toy::model::{ModelConfig, Params, ToyDenoiser};
use crate::toy::scene::ToyPrompt;
use crate::toy::schedule::{q_sample, NoiseSchedule};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// Size of the fixed batch used to report initial and final loss.
    pub eval_size: usize,
    pub weighting: LossWeighting,
}

/// Per-timestep weight on the squared noise error used for gradients.
/// Reported losses are always the plain unweighted noise error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossWeighting {
    /// Plain `|eps - eps_hat|^2`.
    Epsilon,
    /// `|eps - eps_hat|^2 / alphabar_t`, the velocity-prediction objective;
    /// gives the high-noise timesteps, where layout is decided, a usable gradient.
    #[default]
    Velocity,
}

impl LossWeighting {
    fn weight(self, alphabar: f64) -> f64 {
        match self {
            LossWeighting::Epsilon => 1.0,
            LossWeighting::Velocity => 1.0 / alphabar,
        }
    }
}

impl std::str::FromStr for LossWeighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "epsilon" => Ok(LossWeighting::Epsilon),
            "velocity" => Ok(LossWeighting::Velocity),
            other => Err(Error::Parse(format!("unknown loss weighting {other:?}"))),
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            steps: 3000,
            batch: 8,
            lr: 3e-3,
            eval_size: 32,
            weighting: LossWeighting::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Mean batch loss per step.
    pub history: Vec<f64>,
}

struct Sample {
    index: usize,
    t: usize,
    eps: LatentTensor,
}

fn draw(rng: &mut Rng, n: usize, s: &NoiseSchedule, model: &ToyDenoiser) -> Result<Sample> {
    let index = rng.below(n);
    let t = 1 + rng.below(s.steps());
    let eps = random_gaussian(model.config.dims, rng)?;
    Ok(Sample { index, t, eps })
}

fn sample_loss(
    model: &ToyDenoiser,
    data: &[(LatentTensor, ToyPrompt)],
    s: &NoiseSchedule,
    smp: &Sample,
    grads: Option<(&mut Params, f64)>,
) -> Result<f64> {
    let (x0, prompt) = &data[smp.index];
    let x_t = q_sample(x0, smp.t, &smp.eps, s)?;
    let (pred, cache) = model.forward(&x_t, smp.t, s.alphabar(smp.t), prompt)?;
    let n = pred.data().len() as f64;
    let loss = pred
        .data()
        .iter()
        .zip(smp.eps.data())
        .map(|(&a, &b)| ((a - b) as f64).powi(2))
        .sum::<f64>()
        / n;
    if let Some((g, weight)) = grads {
        let k = (2.0 * weight / n) as f32;
        let deps: Vec<f32> = pred
            .data()
            .iter()
            .zip(smp.eps.data())
            .map(|(&a, &b)| k * (a - b))
            .collect();
        model.backward(&cache, &deps, g);
    }
    Ok(loss)
}

fn eval_loss(model: &ToyDenoiser, data: &[(LatentTensor, ToyPrompt)], s: &NoiseSchedule, set: &[Sample]) -> Result<f64> {
    let mut total = 0.0;
    for smp in set {
        total += sample_loss(model, data, s, smp, None)?;
    }
    Ok(total / set.len() as f64)
}

struct Adam {
    m: Params,
    v: Params,
    step: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(p: &Params) -> Self {
        Adam {
            m: p.zeros_like(),
            v: p.zeros_like(),
            step: 0,
        }
    }

    fn update(&mut self, params: &mut Params, grads: &Params, lr: f64) {
        self.step += 1;
        let c1 = 1.0 - Self::B1.powi(self.step);
        let c2 = 1.0 - Self::B2.powi(self.step);
        let (b1, b2) = (Self::B1 as f32, Self::B2 as f32);
        for ((((_, p), (_, g)), (_, m)), (_, v)) in params
            .named_mut()
            .into_iter()
            .zip(grads.named())
            .zip(self.m.named_mut())
            .zip(self.v.named_mut())
        {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mh = m[i] as f64 / c1;
                let vh = v[i] as f64 / c2;
                p[i] -= (lr * mh / (vh.sqrt() + Self::EPS)) as f32;
            }
        }
    }
}

/// Trains a fresh denoiser on `data`. Timesteps are drawn uniformly from
/// `1..=T`; the learning rate follows a cosine decay to a tenth of `cfg.lr`.
pub fn train(
    data: &[(LatentTensor, ToyPrompt)],
    model_cfg: ModelConfig,
    s: &NoiseSchedule,
    cfg: &TrainConfig,
) -> Result<(ToyDenoiser, TrainReport)> {
    if data.is_empty() {
        return Err(Error::InvalidParam("training dataset is empty".into()));
    }
    if cfg.batch == 0 || cfg.eval_size == 0 {
        return Err(Error::InvalidParam("batch and eval_size must be positive".into()));
    }
    if let Some((x, _)) = data.iter().find(|(x, _)| x.dims() != model_cfg.dims) {
        return Err(Error::Shape(format!(
            "dataset video {} does not match model dims {}",
            x.dims(),
            model_cfg.dims
        )));
    }
    let root = Rng::new(cfg.seed);
    let mut model = ToyDenoiser::new(model_cfg, root.derive(1).next_u64())?;
    let mut eval_rng = root.derive(2);
    let eval_set = (0..cfg.eval_size)
        .map(|_| draw(&mut eval_rng, data.len(), s, &model))
        .collect::<Result<Vec<_>>>()?;
    let initial_loss = eval_loss(&model, data, s, &eval_set)?;

    let mut rng = root.derive(3);
    let mut adam = Adam::new(&model.params);
    let mut history = Vec::with_capacity(cfg.steps);
    let weight = 1.0 / cfg.batch as f64;
    for step in 0..cfg.steps {
        let mut grads = model.params.zeros_like();
        let mut loss = 0.0;
        for _ in 0..cfg.batch {
            let smp = draw(&mut rng, data.len(), s, &model)?;
            let w = weight * cfg.weighting.weight(s.alphabar(smp.t));
            loss += sample_loss(&model, data, s, &smp, Some((&mut grads, w)))?;
        }
        loss /= cfg.batch as f64;
        if !loss.is_finite() {
            return Err(Error::Diverged { step });
        }
        clip_global_norm(&mut grads, 1.0);
        let progress = step as f64 / cfg.steps.max(1) as f64;
        let lr = cfg.lr * (0.1 + 0.9 * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()));
        adam.update(&mut model.params, &grads, lr);
        history.push(loss);
    }
    let final_loss = eval_loss(&model, data, s, &eval_set)?;
    if !final_loss.is_finite() {
        return Err(Error::Diverged { step: cfg.steps });
    }
    model.initial_loss = Some(initial_loss);
    model.final_loss = Some(final_loss);
    Ok((
        model,
        TrainReport {
            initial_loss,
            final_loss,
            history,
        },
    ))
}

fn clip_global_norm(g: &mut Params, max_norm: f64) {
    let norm = g
        .named()
        .iter()
        .flat_map(|(_, v)| v.iter())
        .map(|&x| (x as f64) * (x as f64))
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let k = (max_norm / norm) as f32;
        for (_, v) in g.named_mut() {
            v.iter_mut().for_each(|x| *x *= k);
        }
    }
}

//! Reference experiments on the testbed: the standard training recipe, the
//! filter comparison, the structure-residual check, rigid and non-rigid edits
//! against the undiluted baseline, and the alpha/beta sweeps.
//!
//! Everything here is deterministic in its seeds; the CLI and the acceptance
//! suite share these definitions.

use std::fmt;
use std::str::FromStr;

use crate::dilution::DilutionConfig;
use crate::error::{Error, Result};
use crate::metrics::{band_correlation, masked_mse, standardized_psnr, Region};
use crate::rng::{random_gaussian, Rng};
use crate::spectral::{apply_filter, build_asf, build_glpf, NormMode};
use crate::tensor::{Dims, LatentTensor};
use crate::toy::ddim::ddim_invert;
use crate::toy::edit::edit_video;
use crate::toy::model::{ModelConfig, ToyDenoiser};
use crate::toy::scene::{
    gen_dataset, object_centroids, trajectory_distance, SceneSpec, ToyPrompt, Verb, COLORS, SHAPES,
    STYLES,
};
use crate::toy::schedule::NoiseSchedule;
use crate::toy::train::{train, TrainConfig, TrainReport};

pub const DEFAULT_DIMS: [usize; 4] = [16, 16, 8, 3];
pub const DEFAULT_DATASET_SIZE: usize = 192;
pub const DEFAULT_DDIM_STEPS: usize = 50;
pub const GLPF_SIGMAS: [f64; 4] = [1.0, 3.0, 5.0, 10.0];
/// Low band used by the structure-residual check: lowest eighth of each axis.
pub const LOW_BAND: f64 = 0.125;

pub const RIGID_ALPHA: f64 = 0.5;
pub const NONRIGID_ALPHA: f64 = 0.3;
pub const NONRIGID_BETA: f64 = 0.7;

pub fn default_dims() -> Dims {
    let [w, h, l, c] = DEFAULT_DIMS;
    Dims::new(w, h, l, c).expect("positive constants")
}

/// The standard recipe: a stratified dataset of [`DEFAULT_DATASET_SIZE`]
/// videos drawn from `data_seed`, trained with `cfg` under the default schedule.
pub fn train_standard(data_seed: u64, cfg: &TrainConfig) -> Result<(ToyDenoiser, NoiseSchedule, TrainReport)> {
    let dims = default_dims();
    let data = gen_dataset(&mut Rng::new(data_seed), DEFAULT_DATASET_SIZE, dims);
    let s = NoiseSchedule::default();
    let (model, report) = train(&data, ModelConfig::new(dims), &s, cfg)?;
    Ok((model, s, report))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterScore {
    /// `asf` or `glpf_sigma<σ>`.
    pub filter: String,
    pub psnr: f64,
}

/// Standardized PSNR against `z0` of the visual branch of `z` under the
/// adaptive filter and under each Gaussian low-pass in [`GLPF_SIGMAS`].
pub fn compare_filters(z: &LatentTensor, z0: &LatentTensor) -> Result<Vec<FilterScore>> {
    let mut out = Vec::with_capacity(1 + GLPF_SIGMAS.len());
    let asf = build_asf(z0, NormMode::PerChannel)?;
    out.push(FilterScore {
        filter: "asf".into(),
        psnr: standardized_psnr(&apply_filter(z, &asf)?, z0)?,
    });
    for sigma in GLPF_SIGMAS {
        let g = build_glpf(z.dims(), sigma)?;
        out.push(FilterScore {
            filter: format!("glpf_sigma{sigma}"),
            psnr: standardized_psnr(&apply_filter(z, &g)?, z0)?,
        });
    }
    Ok(out)
}

/// Whether the adaptive filter beats every Gaussian low-pass strictly.
pub fn asf_wins(scores: &[FilterScore]) -> bool {
    let asf = scores.iter().find(|s| s.filter == "asf").map(|s| s.psnr);
    match asf {
        Some(a) => scores.iter().filter(|s| s.filter != "asf").all(|s| a > s.psnr),
        None => false,
    }
}

/// Low-band spectral correlation with the clean video, for the inverted noise
/// and for fresh Gaussian noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructureResidual {
    pub inverted: f64,
    pub fresh: f64,
}

impl StructureResidual {
    pub fn holds(&self) -> bool {
        self.inverted > self.fresh
    }
}

/// Inverts a random scene drawn from `seed` and compares its low band with a
/// fresh noise draw from the same seed.
pub fn structure_residual(model: &ToyDenoiser, s: &NoiseSchedule, seed: u64, steps: usize) -> Result<StructureResidual> {
    let dims = model.config.dims;
    let mut rng = Rng::new(seed);
    let scene = SceneSpec::random(&mut rng);
    let x0 = scene.render(dims);
    let z = ddim_invert(&x0, &scene.prompt, model, s, steps)?;
    let eps = random_gaussian(dims, &mut rng)?;
    Ok(StructureResidual {
        inverted: band_correlation(&z, &x0, LOW_BAND)?,
        fresh: band_correlation(&eps, &x0, LOW_BAND)?,
    })
}

/// `n` random scenes, each paired with a target prompt that recolors the object.
pub fn rigid_cases(seed: u64, n: usize) -> Vec<(SceneSpec, ToyPrompt)> {
    let mut rng = Rng::new(seed);
    (0..n)
        .map(|i| {
            let scene = SceneSpec::random(&mut rng);
            let k = COLORS.iter().position(|&c| c == scene.prompt.color).expect("palette color");
            let color = COLORS[(k + 1 + i % (COLORS.len() - 1)) % COLORS.len()];
            (scene, scene.prompt.with_color(color))
        })
        .collect()
}

/// `n` sliding-object scenes cycling through shapes, colors and styles, each
/// paired with the same prompt whose verb is `jump`.
pub fn nonrigid_cases(seed: u64, n: usize) -> Vec<(SceneSpec, ToyPrompt)> {
    let mut rng = Rng::new(seed);
    (0..n)
        .map(|i| {
            let p = ToyPrompt::new(
                SHAPES[i % SHAPES.len()],
                COLORS[i % COLORS.len()],
                Verb::Slide,
                STYLES[i % STYLES.len()],
            );
            (SceneSpec::random_for(p, &mut rng), p.with_verb(Verb::Jump))
        })
        .collect()
}

/// Object-masked errors of an edit and of the undiluted baseline, all against the input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EditMeasure {
    pub inside: f64,
    pub outside: f64,
    pub baseline_inside: f64,
    pub baseline_outside: f64,
    /// Distance of the edited object trajectory to the target verb's canonical one.
    pub distance: f64,
    pub baseline_distance: f64,
    pub input_distance: f64,
}

impl EditMeasure {
    /// Change concentrated on the object and unedited regions no worse than the baseline.
    pub fn locality_holds(&self) -> bool {
        self.inside >= 3.0 * self.outside && self.outside <= self.baseline_outside
    }

    /// Edited motion closer to the target than the baseline's.
    pub fn efficacy_holds(&self) -> bool {
        self.distance < self.baseline_distance
    }
}

/// Runs `edit_video` with `cfg` and with the undiluted configuration, and
/// measures both against the scene's geometry.
pub fn measure_edit(
    model: &ToyDenoiser,
    s: &NoiseSchedule,
    scene: &SceneSpec,
    target: &ToyPrompt,
    cfg: &DilutionConfig,
    steps: usize,
) -> Result<EditMeasure> {
    let baseline = DilutionConfig::new(0.0, 0.0, 1.0, cfg.seed)?;
    let base = edit_once(model, s, scene, target, &baseline, steps)?;
    let edit = if cfg.is_identity() {
        base
    } else {
        edit_once(model, s, scene, target, cfg, steps)?
    };
    Ok(EditMeasure {
        inside: edit.inside,
        outside: edit.outside,
        baseline_inside: base.inside,
        baseline_outside: base.outside,
        distance: edit.distance,
        baseline_distance: base.distance,
        input_distance: trajectory_distance(
            &scene.trajectory(model.config.dims),
            &target.verb.trajectory(model.config.dims),
        ),
    })
}

#[derive(Debug, Clone, Copy)]
struct OneEdit {
    inside: f64,
    outside: f64,
    distance: f64,
}

fn edit_once(
    model: &ToyDenoiser,
    s: &NoiseSchedule,
    scene: &SceneSpec,
    target: &ToyPrompt,
    cfg: &DilutionConfig,
    steps: usize,
) -> Result<OneEdit> {
    let dims = model.config.dims;
    let x0 = scene.render(dims);
    let out = edit_video(&x0, &scene.prompt, target, model, cfg, s, steps)?.output;
    let mask = scene.object_mask(dims);
    let traj = object_centroids(&out, target.style.background());
    Ok(OneEdit {
        inside: masked_mse(&out, &x0, &mask, Region::Inside)?,
        outside: masked_mse(&out, &x0, &mask, Region::Outside)?,
        distance: trajectory_distance(&traj, &target.verb.trajectory(dims)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Alpha,
    Beta,
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepParam::Alpha => "alpha",
            SweepParam::Beta => "beta",
        })
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha" => Ok(SweepParam::Alpha),
            "beta" => Ok(SweepParam::Beta),
            _ => Err(Error::Parse(format!("sweep parameter must be alpha or beta, got {s:?}"))),
        }
    }
}

/// One grid cell of a sweep, averaged over its scenes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub param: SweepParam,
    pub value: f64,
    /// Alpha: mean inside-object MSE against the input (how strongly the
    /// object is rewritten). Beta: mean reduction of the distance to the
    /// target trajectory relative to the undiluted baseline.
    pub edit_effect: f64,
    pub inside_mse: f64,
    pub outside_mse: f64,
    pub trajectory_distance: f64,
}

/// Alpha sweeps recolor `scenes` random objects with `beta = 0`; beta sweeps
/// turn `scenes` slides into jumps with alpha fixed at [`NONRIGID_ALPHA`].
/// Scene `i` dilutes with noise seed `i`.
pub fn sweep(
    model: &ToyDenoiser,
    s: &NoiseSchedule,
    param: SweepParam,
    values: &[f64],
    scenes: usize,
    seed: u64,
    steps: usize,
) -> Result<Vec<SweepRow>> {
    if scenes == 0 {
        return Err(Error::InvalidParam("sweep needs at least one scene".into()));
    }
    let cases = match param {
        SweepParam::Alpha => rigid_cases(seed, scenes),
        SweepParam::Beta => nonrigid_cases(seed, scenes),
    };
    let baselines = cases
        .iter()
        .enumerate()
        .map(|(i, (scene, target))| {
            edit_once(model, s, scene, target, &DilutionConfig::new(0.0, 0.0, 1.0, i as u64)?, steps)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = cases.len() as f64;
    values
        .iter()
        .map(|&v| {
            let (mut inside, mut outside, mut dist, mut gain) = (0.0, 0.0, 0.0, 0.0);
            for (i, ((scene, target), base)) in cases.iter().zip(&baselines).enumerate() {
                let (alpha, beta) = match param {
                    SweepParam::Alpha => (v, 0.0),
                    SweepParam::Beta => (NONRIGID_ALPHA, v),
                };
                let cfg = DilutionConfig::new(alpha, beta, 1.0, i as u64)?;
                let e = edit_once(model, s, scene, target, &cfg, steps)?;
                inside += e.inside;
                outside += e.outside;
                dist += e.distance;
                gain += base.distance - e.distance;
            }
            let inside_mse = inside / n;
            Ok(SweepRow {
                param,
                value: v,
                edit_effect: match param {
                    SweepParam::Alpha => inside_mse,
                    SweepParam::Beta => gain / n,
                },
                inside_mse,
                outside_mse: outside / n,
                trajectory_distance: dist / n,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_model() -> (ToyDenoiser, NoiseSchedule) {
        let mut cfg = ModelConfig::new(Dims::new(16, 16, 2, 3).unwrap());
        cfg.hidden = 4;
        (ToyDenoiser::new(cfg, 5).unwrap(), NoiseSchedule::default())
    }

    #[test]
    fn rigid_cases_change_only_the_color() {
        for (scene, target) in rigid_cases(3, 12) {
            assert_eq!(scene.prompt.differing_slots(&target), vec![1]);
        }
    }

    #[test]
    fn nonrigid_cases_are_slides_turned_jumps() {
        let cases = nonrigid_cases(3, 6);
        for (scene, target) in &cases {
            assert_eq!(scene.prompt.verb, Verb::Slide);
            assert_eq!(*target, scene.prompt.with_verb(Verb::Jump));
        }
        assert_ne!(cases[0].0.prompt.shape, cases[1].0.prompt.shape);
    }

    #[test]
    fn filter_comparison_has_five_rows() {
        let d = Dims::new(8, 8, 2, 2).unwrap();
        let z0 = random_gaussian(d, &mut Rng::new(1)).unwrap();
        let z = random_gaussian(d, &mut Rng::new(2)).unwrap();
        let rows = compare_filters(&z, &z0).unwrap();
        let names: Vec<_> = rows.iter().map(|r| r.filter.as_str()).collect();
        assert_eq!(names, ["asf", "glpf_sigma1", "glpf_sigma3", "glpf_sigma5", "glpf_sigma10"]);
        let direct = apply_filter(&z, &build_glpf(d, 3.0).unwrap()).unwrap();
        assert_eq!(rows[2].psnr, standardized_psnr(&direct, &z0).unwrap());
    }

    #[test]
    fn asf_must_win_strictly() {
        let row = |f: &str, p: f64| FilterScore { filter: f.into(), psnr: p };
        assert!(asf_wins(&[row("asf", 3.0), row("glpf_sigma1", 2.0), row("glpf_sigma3", 2.9)]));
        assert!(!asf_wins(&[row("asf", 3.0), row("glpf_sigma1", 3.0)]));
        assert!(!asf_wins(&[row("glpf_sigma1", 1.0)]));
    }

    #[test]
    fn identity_edit_equals_its_baseline() {
        let (model, s) = tiny_model();
        let (scene, target) = rigid_cases(1, 1)[0];
        let m = measure_edit(&model, &s, &scene, &target, &DilutionConfig::new(0.0, 0.0, 1.0, 0).unwrap(), 5).unwrap();
        assert_eq!(m.inside, m.baseline_inside);
        assert_eq!(m.outside, m.baseline_outside);
        assert!(!m.efficacy_holds());
    }

    #[test]
    fn sweep_rows_follow_values_and_are_deterministic() {
        let (model, s) = tiny_model();
        let a = sweep(&model, &s, SweepParam::Beta, &[0.2, 0.8], 2, 4, 4).unwrap();
        let b = sweep(&model, &s, SweepParam::Beta, &[0.2, 0.8], 2, 4, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.iter().map(|r| r.value).collect::<Vec<_>>(), vec![0.2, 0.8]);
        assert!(sweep(&model, &s, SweepParam::Alpha, &[0.5], 0, 4, 4).is_err());
        assert_eq!("beta".parse::<SweepParam>().unwrap(), SweepParam::Beta);
        assert!("gamma".parse::<SweepParam>().is_err());
    }
}

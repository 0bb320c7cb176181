//! Attention capture during inversion and the editing loop: invert with the
//! source prompt, dilute the inverted noise, denoise with the target prompt.

use crate::dilution::{make_dilutional_noise_parts, DilutionConfig};
use crate::error::{Error, Result};
use crate::guidance::{AttentionMap, Block, Category, GuidanceMask};
use crate::tensor::LatentTensor;
use crate::toy::ddim::{ddim_sample, invert_with};
use crate::toy::model::{BlockAttention, ToyDenoiser, DOWN_POOL, MID_POOL};
use crate::toy::scene::{ToyPrompt, PROMPT_LEN, SLOT_CATEGORY};
use crate::toy::schedule::NoiseSchedule;

/// Per-slot attention from both blocks, summed over the inversion trajectory.
struct AttentionSum {
    down: Vec<Vec<f64>>,
    mid: Vec<Vec<f64>>,
    count: usize,
}

impl AttentionSum {
    fn new() -> Self {
        AttentionSum {
            down: vec![Vec::new(); PROMPT_LEN],
            mid: vec![Vec::new(); PROMPT_LEN],
            count: 0,
        }
    }

    fn add(&mut self, down: &BlockAttention, mid: &BlockAttention) {
        for j in 0..PROMPT_LEN {
            for (acc, block) in [(&mut self.down[j], down), (&mut self.mid[j], mid)] {
                let map = block.token_map(j);
                if acc.is_empty() {
                    acc.resize(map.len(), 0.0);
                }
                for (a, v) in acc.iter_mut().zip(map) {
                    *a += v as f64;
                }
            }
        }
        self.count += 1;
    }

    /// Trajectory means as normalized maps: each slot's block-D map tagged
    /// rigid, then each slot's block-M map tagged non-rigid.
    fn into_maps(self, model: &ToyDenoiser, cond: &ToyPrompt) -> Result<Vec<AttentionMap>> {
        let d = model.config.dims;
        let words = cond.words();
        let n = self.count.max(1) as f64;
        let mut maps = Vec::with_capacity(2 * PROMPT_LEN);
        for (sums, pool, category, block) in [
            (self.down, DOWN_POOL, Category::Rigid, Block::Down),
            (self.mid, MID_POOL, Category::NonRigid, Block::Mid),
        ] {
            for (j, acc) in sums.into_iter().enumerate() {
                let raw = acc.iter().map(|v| (v / n) as f32).collect();
                maps.push(AttentionMap::from_raw(d.w / pool, d.h / pool, d.l, raw, words[j], category, block)?);
            }
        }
        Ok(maps)
    }
}

/// DDIM inversion of `x0` under `cond`, also returning the attention maps
/// collected along the way (see [`collect_attention`]).
pub fn invert_with_attention(
    model: &ToyDenoiser,
    x0: &LatentTensor,
    cond: &ToyPrompt,
    s: &NoiseSchedule,
    steps: usize,
) -> Result<(LatentTensor, Vec<AttentionMap>)> {
    let mut sum = AttentionSum::new();
    let z = invert_with(x0, s, steps, |x, t| {
        let (eps, down, mid) = model.predict_with_attention(x, t, s.alphabar(t), cond)?;
        sum.add(&down, &mid);
        Ok(eps)
    })?;
    Ok((z, sum.into_maps(model, cond)?))
}

/// Cross-attention between every prompt slot and the video, averaged over
/// heads and over the timesteps of the inversion trajectory, min-max
/// normalized per map.
///
/// The first `PROMPT_LEN` maps come from block D (quarter resolution, rigid),
/// the next `PROMPT_LEN` from block M (eighth resolution, non-rigid), both in
/// slot order. A constant map is flagged `degenerate`.
pub fn collect_attention(
    model: &ToyDenoiser,
    x0: &LatentTensor,
    cond: &ToyPrompt,
    s: &NoiseSchedule,
    steps: usize,
) -> Result<Vec<AttentionMap>> {
    Ok(invert_with_attention(model, x0, cond, s, steps)?.1)
}

/// Maps for the words that differ between `source` and `target`: block-D maps
/// for rigid slots, block-M maps for the non-rigid (verb) slot.
pub fn reference_maps(maps: &[AttentionMap], source: &ToyPrompt, target: &ToyPrompt) -> Result<Vec<AttentionMap>> {
    let slots = source.differing_slots(target);
    if slots.is_empty() {
        return Err(Error::NothingToEdit);
    }
    if maps.len() != 2 * PROMPT_LEN {
        return Err(Error::Shape(format!(
            "expected {} collected maps, got {}",
            2 * PROMPT_LEN,
            maps.len()
        )));
    }
    Ok(slots
        .into_iter()
        .map(|j| match SLOT_CATEGORY[j] {
            Category::Rigid => maps[j].clone(),
            Category::NonRigid => maps[PROMPT_LEN + j].clone(),
        })
        .collect())
}

/// Result of one edit, with the intermediates needed to inspect it.
#[derive(Debug, Clone)]
pub struct EditOutcome {
    pub output: LatentTensor,
    /// Inverted initial noise.
    pub z: LatentTensor,
    /// Dilutional noise actually denoised.
    pub z_star: LatentTensor,
    pub mask: GuidanceMask,
    pub maps: Vec<AttentionMap>,
}

/// Inverts `x0` under `source`, dilutes the inverted noise guided by the
/// reference words' attention, and denoises under `target`.
///
/// With `alpha = beta = 0` and `gamma = 1` the noise is passed through
/// untouched, so the output is exactly the plain target-prompt denoising of `z`.
pub fn edit_video(
    x0: &LatentTensor,
    source: &ToyPrompt,
    target: &ToyPrompt,
    model: &ToyDenoiser,
    cfg: &DilutionConfig,
    s: &NoiseSchedule,
    steps: usize,
) -> Result<EditOutcome> {
    cfg.validate()?;
    if source.differing_slots(target).is_empty() {
        return Err(Error::NothingToEdit);
    }
    let (z, all) = invert_with_attention(model, x0, source, s, steps)?;
    let maps = reference_maps(&all, source, target)?;
    let (z_star, mask) = if cfg.is_identity() {
        let d = z.dims();
        (z.clone(), GuidanceMask::filled(d.w, d.h, d.l, 0.0)?)
    } else {
        let parts = make_dilutional_noise_parts(&z, x0, &maps, cfg)?;
        (parts.z_star, parts.mask)
    };
    let output = ddim_sample(&z_star, target, model, s, steps)?;
    Ok(EditOutcome {
        output,
        z,
        z_star,
        mask,
        maps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tensor::Dims;
    use crate::toy::ddim::ddim_invert;
    use crate::toy::model::ModelConfig;
    use crate::toy::scene::{Color, SceneSpec, Shape, Style, Verb};

    fn setup() -> (ToyDenoiser, LatentTensor, ToyPrompt) {
        let d = Dims::new(16, 16, 2, 3).unwrap();
        let mut cfg = ModelConfig::new(d);
        cfg.hidden = 4;
        let model = ToyDenoiser::new(cfg, 1).unwrap();
        let p = ToyPrompt::new(Shape::Disc, Color::Red, Verb::Slide, Style::Dark);
        let x0 = SceneSpec::random_for(p, &mut Rng::new(2)).render(d);
        (model, x0, p)
    }

    #[test]
    fn maps_have_block_resolutions_and_are_deterministic() {
        let (model, x0, p) = setup();
        let s = NoiseSchedule::default();
        let a = collect_attention(&model, &x0, &p, &s, 10).unwrap();
        let b = collect_attention(&model, &x0, &p, &s, 10).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2 * PROMPT_LEN);
        for m in &a[..PROMPT_LEN] {
            assert_eq!((m.w, m.h, m.category, m.block), (4, 4, Category::Rigid, Block::Down));
        }
        for m in &a[PROMPT_LEN..] {
            assert_eq!((m.w, m.h, m.category, m.block), (2, 2, Category::NonRigid, Block::Mid));
        }
        assert_eq!(a[0].word, "disc");
        assert_eq!(a[PROMPT_LEN + 2].word, "slide");
    }

    #[test]
    fn inversion_matches_plain_ddim() {
        let (model, x0, p) = setup();
        let s = NoiseSchedule::default();
        let (z, _) = invert_with_attention(&model, &x0, &p, &s, 10).unwrap();
        assert_eq!(z, ddim_invert(&x0, &p, &model, &s, 10).unwrap());
    }

    #[test]
    fn reference_maps_follow_slot_category() {
        let (model, x0, p) = setup();
        let s = NoiseSchedule::default();
        let maps = collect_attention(&model, &x0, &p, &s, 10).unwrap();
        let color = reference_maps(&maps, &p, &p.with_color(Color::Blue)).unwrap();
        assert_eq!(color.len(), 1);
        assert_eq!((color[0].word.as_str(), color[0].block), ("red", Block::Down));
        let verb = reference_maps(&maps, &p, &p.with_verb(Verb::Jump)).unwrap();
        assert_eq!((verb[0].word.as_str(), verb[0].block), ("slide", Block::Mid));
        assert!(matches!(reference_maps(&maps, &p, &p), Err(Error::NothingToEdit)));
    }

    #[test]
    fn identity_config_is_plain_denoising() {
        let (model, x0, p) = setup();
        let s = NoiseSchedule::default();
        let target = p.with_color(Color::Green);
        let cfg = DilutionConfig::new(0.0, 0.0, 1.0, 3).unwrap();
        let out = edit_video(&x0, &p, &target, &model, &cfg, &s, 10).unwrap();
        let z = ddim_invert(&x0, &p, &model, &s, 10).unwrap();
        assert_eq!(out.output, ddim_sample(&z, &target, &model, &s, 10).unwrap());
        assert_eq!(out.z_star, z);
    }

    #[test]
    fn identical_prompts_have_nothing_to_edit() {
        let (model, x0, p) = setup();
        let s = NoiseSchedule::default();
        let err = edit_video(&x0, &p, &p, &model, &DilutionConfig::default(), &s, 10).unwrap_err();
        assert!(err.to_string().contains("nothing to edit"));
    }
}

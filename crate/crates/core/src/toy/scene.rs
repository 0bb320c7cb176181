//! Synthetic videos of moving colored shapes and their token prompts.
//!
//! The pixel grid doubles as the latent: values lie roughly in `[-1, 1]`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::guidance::{Category, GuidanceMask};
use crate::rng::Rng;
use crate::tensor::{Dims, LatentTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Shape {
    Square,
    Disc,
    Diamond,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verb {
    Static,
    Slide,
    Bounce,
    Jump,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Style {
    Dark,
    Light,
}

pub const SHAPES: [Shape; 3] = [Shape::Square, Shape::Disc, Shape::Diamond];
pub const COLORS: [Color; 4] = [Color::Red, Color::Green, Color::Blue, Color::Yellow];
pub const VERBS: [Verb; 4] = [Verb::Static, Verb::Slide, Verb::Bounce, Verb::Jump];
pub const STYLES: [Style; 2] = [Style::Dark, Style::Light];

/// Token ids: shapes, colors, verbs, styles, then the null token.
pub const VOCAB: [&str; 14] = [
    "square", "disc", "diamond", "red", "green", "blue", "yellow", "static", "slide", "bounce",
    "jump", "dark", "light", "<null>",
];
pub const VOCAB_SIZE: usize = VOCAB.len();
pub const NULL_TOKEN: usize = VOCAB_SIZE - 1;
/// Prompt slots: shape, color, verb, style.
pub const PROMPT_LEN: usize = 4;

/// Slot index to part-of-speech category: nouns and adjectives edit rigidly,
/// the predicate non-rigidly.
pub const SLOT_CATEGORY: [Category; PROMPT_LEN] = [
    Category::Rigid,
    Category::Rigid,
    Category::NonRigid,
    Category::Rigid,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ToyPrompt {
    pub shape: Shape,
    pub color: Color,
    pub verb: Verb,
    pub style: Style,
}

impl ToyPrompt {
    pub fn new(shape: Shape, color: Color, verb: Verb, style: Style) -> Self {
        ToyPrompt {
            shape,
            color,
            verb,
            style,
        }
    }

    pub fn tokens(&self) -> [usize; PROMPT_LEN] {
        [
            self.shape as usize,
            3 + self.color as usize,
            7 + self.verb as usize,
            11 + self.style as usize,
        ]
    }

    pub fn words(&self) -> [&'static str; PROMPT_LEN] {
        self.tokens().map(|t| VOCAB[t])
    }

    /// Slots whose tokens differ between `self` and `other`.
    pub fn differing_slots(&self, other: &ToyPrompt) -> Vec<usize> {
        let (a, b) = (self.tokens(), other.tokens());
        (0..PROMPT_LEN).filter(|&i| a[i] != b[i]).collect()
    }

    pub fn slot_of(&self, word: &str) -> Option<usize> {
        self.words().iter().position(|w| *w == word)
    }

    pub fn with_color(self, color: Color) -> Self {
        ToyPrompt { color, ..self }
    }

    pub fn with_verb(self, verb: Verb) -> Self {
        ToyPrompt { verb, ..self }
    }
}

impl fmt::Display for ToyPrompt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.words().join(","))
    }
}

impl FromStr for ToyPrompt {
    type Err = Error;

    /// Parses `shape,color,verb,style` (commas or whitespace).
    fn from_str(s: &str) -> Result<Self> {
        let words: Vec<&str> = s
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|w| !w.is_empty())
            .collect();
        if words.len() != PROMPT_LEN {
            return Err(Error::Parse(format!(
                "prompt needs {PROMPT_LEN} words (shape,color,verb,style), got {s:?}"
            )));
        }
        let id = |w: &str, range: std::ops::Range<usize>| {
            VOCAB[range.clone()]
                .iter()
                .position(|v| *v == w)
                .ok_or_else(|| Error::UnknownWord(w.to_string()))
        };
        Ok(ToyPrompt {
            shape: SHAPES[id(words[0], 0..3)?],
            color: COLORS[id(words[1], 3..7)?],
            verb: VERBS[id(words[2], 7..11)?],
            style: STYLES[id(words[3], 11..13)?],
        })
    }
}

impl Color {
    pub fn rgb(self) -> [f32; 3] {
        match self {
            Color::Red => [0.9, -0.4, -0.4],
            Color::Green => [-0.4, 0.9, -0.4],
            Color::Blue => [-0.4, -0.4, 0.9],
            Color::Yellow => [0.9, 0.9, -0.4],
        }
    }
}

impl Style {
    pub fn background(self) -> f32 {
        match self {
            Style::Dark => -0.8,
            Style::Light => 0.3,
        }
    }
}

impl Verb {
    /// Canonical object center at frame `l` of `frames`, in normalized
    /// `[0, 1]` coordinates with `y` growing downwards.
    pub fn position(self, l: usize, frames: usize) -> (f32, f32) {
        let f = if frames > 1 {
            l as f32 / (frames - 1) as f32
        } else {
            0.0
        };
        let pi = std::f32::consts::PI;
        match self {
            Verb::Static => (0.5, 0.5),
            Verb::Slide => (0.2 + 0.6 * f, 0.5),
            Verb::Bounce => (0.25 + 0.5 * f, 0.7 - 0.4 * (2.0 * pi * f).sin().abs()),
            Verb::Jump => (0.5, 0.7 - 0.45 * (pi * f).sin()),
        }
    }

    /// Canonical trajectory in pixel coordinates.
    pub fn trajectory(self, dims: Dims) -> Vec<(f32, f32)> {
        (0..dims.l)
            .map(|l| {
                let (x, y) = self.position(l, dims.l);
                (x * dims.w as f32, y * dims.h as f32)
            })
            .collect()
    }
}

/// Background texture strength of random scenes. Without it the videos have
/// too few degrees of freedom and inversion collapses onto the data.
pub const TEXTURE_STD: f32 = 0.15;
const TEXTURE_WAVES: usize = 12;

/// One synthetic scene: a prompt plus the per-video nuisance parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSpec {
    pub prompt: ToyPrompt,
    /// Offset of the whole trajectory, normalized units.
    pub jitter: (f32, f32),
    /// Object half-extent as a fraction of the frame width.
    pub size: f32,
    /// Brightness offset added to the object color.
    pub shade: f32,
    /// Standard deviation of the static background texture; 0 for a flat background.
    pub texture: f32,
    pub texture_seed: u64,
}

impl SceneSpec {
    pub fn canonical(prompt: ToyPrompt) -> Self {
        SceneSpec {
            prompt,
            jitter: (0.0, 0.0),
            size: 0.14,
            shade: 0.0,
            texture: 0.0,
            texture_seed: 0,
        }
    }

    pub fn random(rng: &mut Rng) -> Self {
        let prompt = ToyPrompt {
            shape: SHAPES[rng.below(SHAPES.len())],
            color: COLORS[rng.below(COLORS.len())],
            verb: VERBS[rng.below(VERBS.len())],
            style: STYLES[rng.below(STYLES.len())],
        };
        Self::random_for(prompt, rng)
    }

    pub fn random_for(prompt: ToyPrompt, rng: &mut Rng) -> Self {
        SceneSpec {
            prompt,
            jitter: (
                rng.uniform_range(-0.05, 0.05) as f32,
                rng.uniform_range(-0.05, 0.05) as f32,
            ),
            size: rng.uniform_range(0.12, 0.16) as f32,
            shade: rng.uniform_range(-0.1, 0.1) as f32,
            texture: TEXTURE_STD,
            texture_seed: rng.next_u64(),
        }
    }

    pub fn with_prompt(self, prompt: ToyPrompt) -> Self {
        SceneSpec { prompt, ..self }
    }

    /// Object center at frame `l`, normalized coordinates.
    pub fn center(&self, l: usize, frames: usize) -> (f32, f32) {
        let (x, y) = self.prompt.verb.position(l, frames);
        (x + self.jitter.0, y + self.jitter.1)
    }

    /// Object center per frame in pixel coordinates.
    pub fn trajectory(&self, dims: Dims) -> Vec<(f32, f32)> {
        (0..dims.l)
            .map(|l| {
                let (x, y) = self.center(l, dims.l);
                (x * dims.w as f32, y * dims.h as f32)
            })
            .collect()
    }

    fn half_extent_px(&self, dims: Dims) -> f32 {
        self.size * dims.w as f32
    }

    /// Soft object coverage in `[0, 1]` at pixel `(w, h)` of frame `l`.
    pub fn coverage(&self, dims: Dims, w: usize, h: usize, l: usize) -> f32 {
        let (cx, cy) = self.center(l, dims.l);
        let dx = (w as f32 + 0.5) - cx * dims.w as f32;
        let dy = (h as f32 + 0.5) - cy * dims.h as f32;
        let s = self.half_extent_px(dims);
        let dist = match self.prompt.shape {
            Shape::Square => dx.abs().max(dy.abs()),
            Shape::Disc => (dx * dx + dy * dy).sqrt(),
            Shape::Diamond => (dx.abs() + dy.abs()) / 1.3,
        };
        (s + 0.5 - dist).clamp(0.0, 1.0)
    }

    pub fn render(&self, dims: Dims) -> LatentTensor {
        let bg = self.prompt.style.background();
        let rgb = self.prompt.color.rgb();
        let texture = self.background_texture(dims);
        LatentTensor::from_fn(dims, |w, h, l, c| {
            let cov = self.coverage(dims, w, h, l);
            let obj = (rgb[c % 3] + self.shade).clamp(-1.0, 1.0);
            let back = bg + texture[(h * dims.w + w) * dims.c + c];
            back + cov * (obj - back)
        })
    }

    /// Static per-channel background texture, indexed `(h * W + w) * C + c`:
    /// a sum of random plane waves with amplitude falling off as `1/|k|`,
    /// scaled so its standard deviation over the frame is `self.texture`.
    pub fn background_texture(&self, dims: Dims) -> Vec<f32> {
        let mut out = vec![0.0f32; dims.w * dims.h * dims.c];
        if self.texture == 0.0 {
            return out;
        }
        let mut rng = Rng::new(self.texture_seed);
        let kmax = (dims.w.min(dims.h) / 4).max(1) as i64;
        let two_pi = std::f64::consts::TAU;
        let plane = dims.w * dims.h;
        for c in 0..dims.c {
            let mut waves = Vec::with_capacity(TEXTURE_WAVES);
            while waves.len() < TEXTURE_WAVES {
                let kx = rng.below(2 * kmax as usize + 1) as i64 - kmax;
                let ky = rng.below(2 * kmax as usize + 1) as i64 - kmax;
                if kx == 0 && ky == 0 {
                    continue;
                }
                let amp = 1.0 / ((kx * kx + ky * ky) as f64).sqrt();
                waves.push((kx as f64, ky as f64, amp, rng.uniform() * two_pi));
            }
            let mut field = Vec::with_capacity(plane);
            for h in 0..dims.h {
                for w in 0..dims.w {
                    field.push(
                        waves
                            .iter()
                            .map(|&(kx, ky, a, ph)| {
                                let arg = kx * w as f64 / dims.w as f64 + ky * h as f64 / dims.h as f64;
                                a * (two_pi * arg + ph).cos()
                            })
                            .sum::<f64>(),
                    );
                }
            }
            let mean = field.iter().sum::<f64>() / plane as f64;
            let std = (field.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / plane as f64).sqrt();
            let scale = if std > 0.0 { self.texture as f64 / std } else { 0.0 };
            for (i, v) in field.iter().enumerate() {
                out[i * dims.c + c] = ((v - mean) * scale) as f32;
            }
        }
        out
    }

    /// Axis-aligned object bounding box per frame (one pixel margin), as a mask.
    pub fn object_mask(&self, dims: Dims) -> GuidanceMask {
        let s = self.half_extent_px(dims) + 1.0;
        let mut values = vec![0.0f32; dims.cells()];
        for l in 0..dims.l {
            let (cx, cy) = self.center(l, dims.l);
            let (cx, cy) = (cx * dims.w as f32, cy * dims.h as f32);
            for h in 0..dims.h {
                for w in 0..dims.w {
                    let dx = (w as f32 + 0.5 - cx).abs();
                    let dy = (h as f32 + 0.5 - cy).abs();
                    if dx <= s && dy <= s {
                        values[dims.cell_index(w, h, l)] = 1.0;
                    }
                }
            }
        }
        GuidanceMask::from_values(dims.w, dims.h, dims.l, values)
            .expect("binary mask is in range")
    }
}

/// `n` random scenes (see [`gen_scenes`]) rendered at `dims`.
pub fn gen_dataset(rng: &mut Rng, n: usize, dims: Dims) -> Vec<(LatentTensor, ToyPrompt)> {
    gen_scenes(rng, n)
        .into_iter()
        .map(|s| (s.render(dims), s.prompt))
        .collect()
}

/// Every prompt in the vocabulary, in slot order.
pub fn all_prompts() -> Vec<ToyPrompt> {
    let mut out = Vec::with_capacity(SHAPES.len() * COLORS.len() * VERBS.len() * STYLES.len());
    for &shape in &SHAPES {
        for &color in &COLORS {
            for &verb in &VERBS {
                for &style in &STYLES {
                    out.push(ToyPrompt::new(shape, color, verb, style));
                }
            }
        }
    }
    out
}

/// `n` random scenes. Prompts are drawn without replacement from shuffled
/// passes over every prompt, so a dataset of at least 96 videos covers all
/// combinations.
pub fn gen_scenes(rng: &mut Rng, n: usize) -> Vec<SceneSpec> {
    let mut pool = Vec::new();
    (0..n)
        .map(|_| {
            if pool.is_empty() {
                pool = all_prompts();
                // Fisher-Yates, consumed from the back.
                for i in (1..pool.len()).rev() {
                    pool.swap(i, rng.below(i + 1));
                }
            }
            let prompt = pool.pop().expect("refilled above");
            SceneSpec::random_for(prompt, rng)
        })
        .collect()
}

/// Per-frame object centroid in pixel coordinates, weighting each pixel by
/// its distance from the background level beyond a small threshold.
/// Frames with no visible object fall back to the frame center.
pub fn object_centroids(video: &LatentTensor, background: f32) -> Vec<(f32, f32)> {
    let d = video.dims();
    (0..d.l)
        .map(|l| {
            let (mut sx, mut sy, mut sw) = (0.0f64, 0.0f64, 0.0f64);
            for h in 0..d.h {
                for w in 0..d.w {
                    let dist: f64 = (0..d.c)
                        .map(|c| (video.get(w, h, l, c) - background) as f64)
                        .map(|v| v * v)
                        .sum::<f64>()
                        .sqrt();
                    let wt = (dist - 0.5).max(0.0);
                    sx += wt * (w as f64 + 0.5);
                    sy += wt * (h as f64 + 0.5);
                    sw += wt;
                }
            }
            if sw > 1e-9 {
                ((sx / sw) as f32, (sy / sw) as f32)
            } else {
                (d.w as f32 / 2.0, d.h as f32 / 2.0)
            }
        })
        .collect()
}

/// Root of the summed squared per-frame distances between two trajectories.
pub fn trajectory_distance(a: &[(f32, f32)], b: &[(f32, f32)]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| {
            let dx = (p.0 - q.0) as f64;
            let dy = (p.1 - q.1) as f64;
            dx * dx + dy * dy
        })
        .sum::<f64>()
        .sqrt()
}

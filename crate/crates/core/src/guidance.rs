//! Editing guidance masks built from rigid and non-rigid attention maps.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::io::{read_tensor, write_tensor};
use crate::tensor::{Dims, LatentTensor};
use crate::toy::scene::{SceneSpec, SLOT_CATEGORY};

/// Part-of-speech class of a reference word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Category {
    /// Nouns and adjectives: fine maps, structure-preserving edits.
    Rigid,
    /// Predicates: coarse maps, structure-altering edits.
    NonRigid,
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::Rigid => "rigid",
            Category::NonRigid => "non-rigid",
        })
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rigid" => Ok(Category::Rigid),
            "non-rigid" | "nonrigid" => Ok(Category::NonRigid),
            other => Err(Error::Parse(format!("unknown category {other:?}"))),
        }
    }
}

/// Which denoiser block a map was read from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Block {
    Down,
    Mid,
    Synthetic,
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Block::Down => "down",
            Block::Mid => "mid",
            Block::Synthetic => "synthetic",
        })
    }
}

impl FromStr for Block {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "down" => Ok(Block::Down),
            "mid" => Ok(Block::Mid),
            "synthetic" => Ok(Block::Synthetic),
            other => Err(Error::Parse(format!("unknown block {other:?}"))),
        }
    }
}

/// Per-frame spatial attention map for one word, values in `[0, 1]`.
///
/// Storage is frame-major: index `(l * h + y) * w + x`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub w: usize,
    pub h: usize,
    pub l: usize,
    values: Vec<f32>,
    pub word: String,
    pub category: Category,
    pub block: Block,
    /// Set when the raw map was constant, so normalization had nothing to scale.
    pub degenerate: bool,
}

impl AttentionMap {
    /// Ingests raw non-negative attention and min-max normalizes it.
    pub fn from_raw(
        w: usize,
        h: usize,
        l: usize,
        raw: Vec<f32>,
        word: impl Into<String>,
        category: Category,
        block: Block,
    ) -> Result<Self> {
        check_len(w, h, l, raw.len())?;
        if let Some(i) = raw.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index: i });
        }
        let (lo, hi) = raw
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let degenerate = !(hi > lo);
        let values = if degenerate {
            vec![0.0; raw.len()]
        } else {
            raw.iter().map(|&v| (v - lo) / (hi - lo)).collect()
        };
        Ok(AttentionMap {
            w,
            h,
            l,
            values,
            word: word.into(),
            category,
            block,
            degenerate,
        })
    }

    /// Wraps values that are already in `[0, 1]` without rescaling them.
    pub fn from_normalized(
        w: usize,
        h: usize,
        l: usize,
        values: Vec<f32>,
        word: impl Into<String>,
        category: Category,
        block: Block,
    ) -> Result<Self> {
        check_len(w, h, l, values.len())?;
        if let Some(i) = values.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidParam(format!(
                "attention value {} at {i} outside [0, 1]",
                values[i]
            )));
        }
        Ok(AttentionMap {
            w,
            h,
            l,
            values,
            word: word.into(),
            category,
            block,
            degenerate: false,
        })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, l: usize) -> f32 {
        self.values[(l * self.h + y) * self.w + x]
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.w, self.h, self.l)
    }

    /// Argmax `(x, y)` of frame `l` (first occurrence in storage order).
    pub fn argmax(&self, l: usize) -> (usize, usize) {
        let frame = &self.values[l * self.w * self.h..(l + 1) * self.w * self.h];
        let mut best = 0;
        for (i, &v) in frame.iter().enumerate() {
            if v > frame[best] {
                best = i;
            }
        }
        (best % self.w, best / self.w)
    }

    pub fn to_tensor(&self) -> LatentTensor {
        LatentTensor::from_vec(
            Dims {
                w: self.w,
                h: self.h,
                l: self.l,
                c: 1,
            },
            self.values.clone(),
        )
        .expect("map dims are consistent")
    }
}

fn check_len(w: usize, h: usize, l: usize, len: usize) -> Result<()> {
    if w == 0 || h == 0 || l == 0 {
        return Err(Error::ZeroDim([w, h, l, 1]));
    }
    if len != w * h * l {
        return Err(Error::LengthMismatch {
            dims: [w, h, l, 1],
            len,
        });
    }
    Ok(())
}

/// The editing guidance mask `m_edit`, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceMask {
    pub w: usize,
    pub h: usize,
    pub l: usize,
    values: Vec<f32>,
}

impl GuidanceMask {
    pub fn from_values(w: usize, h: usize, l: usize, values: Vec<f32>) -> Result<Self> {
        check_len(w, h, l, values.len())?;
        if let Some(i) = values.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidParam(format!(
                "mask value {} at {i} outside [0, 1]",
                values[i]
            )));
        }
        Ok(GuidanceMask { w, h, l, values })
    }

    pub fn filled(w: usize, h: usize, l: usize, v: f32) -> Result<Self> {
        Self::from_values(w, h, l, vec![v; w * h * l])
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, l: usize) -> f32 {
        self.values[(l * self.h + y) * self.w + x]
    }

    pub fn matches(&self, d: Dims) -> bool {
        self.w == d.w && self.h == d.h && self.l == d.l
    }
}

/// Element-wise mean of all maps of one category.
pub fn pool_maps(maps: &[AttentionMap], category: Category) -> Result<AttentionMap> {
    let selected: Vec<&AttentionMap> = maps.iter().filter(|m| m.category == category).collect();
    let first = *selected
        .first()
        .ok_or_else(|| Error::InvalidParam(format!("no {category} maps to pool")))?;
    if selected.len() == 1 {
        return Ok(first.clone());
    }
    if let Some(m) = selected.iter().find(|m| m.dims() != first.dims()) {
        return Err(Error::Shape(format!(
            "cannot pool maps of dims {:?} and {:?}",
            first.dims(),
            m.dims()
        )));
    }
    let n = selected.len() as f64;
    let values = (0..first.values.len())
        .map(|i| (selected.iter().map(|m| m.values[i] as f64).sum::<f64>() / n) as f32)
        .collect();
    Ok(AttentionMap {
        values,
        word: selected
            .iter()
            .map(|m| m.word.as_str())
            .collect::<Vec<_>>()
            .join("+"),
        degenerate: selected.iter().all(|m| m.degenerate),
        ..first.clone()
    })
}

/// Per-frame bilinear upsampling with pixel-center alignment.
pub fn resize_map(m: &AttentionMap, width: usize, height: usize) -> Result<AttentionMap> {
    if width < m.w || height < m.h {
        return Err(Error::InvalidParam(format!(
            "resize_map only upsamples: {}x{} -> {width}x{height}",
            m.w, m.h
        )));
    }
    if width == m.w && height == m.h {
        return Ok(m.clone());
    }
    let coord = |i: usize, src: usize, dst: usize| -> (usize, usize, f64) {
        let s = ((i as f64 + 0.5) * src as f64 / dst as f64 - 0.5).clamp(0.0, (src - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(src - 1);
        (i0, i1, s - i0 as f64)
    };
    let xs: Vec<_> = (0..width).map(|x| coord(x, m.w, width)).collect();
    let ys: Vec<_> = (0..height).map(|y| coord(y, m.h, height)).collect();
    let mut values = Vec::with_capacity(width * height * m.l);
    for l in 0..m.l {
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let v00 = m.get(x0, y0, l) as f64;
                let v10 = m.get(x1, y0, l) as f64;
                let v01 = m.get(x0, y1, l) as f64;
                let v11 = m.get(x1, y1, l) as f64;
                let top = v00 + fx * (v10 - v00);
                let bottom = v01 + fx * (v11 - v01);
                values.push((top + fy * (bottom - top)) as f32);
            }
        }
    }
    Ok(AttentionMap {
        w: width,
        h: height,
        values,
        ..m.clone()
    })
}

/// `m_edit = clamp(alpha * m_rgd + beta * m_nonrgd, 0, 1)`; an absent map
/// contributes zero.
pub fn combine_masks(
    m_rgd: Option<&AttentionMap>,
    m_nonrgd: Option<&AttentionMap>,
    alpha: f64,
    beta: f64,
) -> Result<GuidanceMask> {
    for (name, v) in [("alpha", alpha), ("beta", beta)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidParam(format!("{name} must lie in [0, 1], got {v}")));
        }
    }
    let reference = m_rgd
        .or(m_nonrgd)
        .ok_or_else(|| Error::InvalidParam("combine_masks needs at least one map".into()))?;
    if let (Some(a), Some(b)) = (m_rgd, m_nonrgd) {
        if a.dims() != b.dims() {
            return Err(Error::Shape(format!(
                "rigid map {:?} vs non-rigid map {:?}",
                a.dims(),
                b.dims()
            )));
        }
    }
    let n = reference.values.len();
    let values = (0..n)
        .map(|i| {
            let mut v = 0.0f64;
            if let Some(m) = m_rgd {
                v += alpha * m.values[i] as f64;
            }
            if beta != 0.0 {
                if let Some(m) = m_nonrgd {
                    v += beta * m.values[i] as f64;
                }
            }
            v.clamp(0.0, 1.0) as f32
        })
        .collect();
    GuidanceMask::from_values(reference.w, reference.h, reference.l, values)
}

/// Native resolution of synthetic rigid maps.
pub const SYNTH_RIGID_RES: usize = 16;
/// Native resolution of synthetic non-rigid maps.
pub const SYNTH_NONRIGID_RES: usize = 8;
const SYNTH_RIGID_SIGMA: f32 = 0.08;
const SYNTH_NONRIGID_SIGMA: f32 = 0.2;

/// Gaussian-blob stand-in for attention on `word`, centered on the scene's
/// object in every frame.
pub fn synth_attention(scene: &SceneSpec, word: &str, frames: usize) -> Result<AttentionMap> {
    let slot = scene
        .prompt
        .slot_of(word)
        .ok_or_else(|| Error::UnknownWord(word.to_string()))?;
    let category = SLOT_CATEGORY[slot];
    let (res, sigma) = match category {
        Category::Rigid => (SYNTH_RIGID_RES, SYNTH_RIGID_SIGMA),
        Category::NonRigid => (SYNTH_NONRIGID_RES, SYNTH_NONRIGID_SIGMA),
    };
    let mut raw = Vec::with_capacity(res * res * frames);
    for l in 0..frames {
        let (cx, cy) = scene.center(l, frames);
        for y in 0..res {
            for x in 0..res {
                let dx = (x as f32 + 0.5) / res as f32 - cx;
                let dy = (y as f32 + 0.5) / res as f32 - cy;
                raw.push((-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp());
            }
        }
    }
    AttentionMap::from_raw(res, res, frames, raw, word, category, Block::Synthetic)
}

/// Pools, resizes and combines a set of maps into `m_edit` at `dims`.
pub fn guidance_from_maps(
    maps: &[AttentionMap],
    dims: Dims,
    alpha: f64,
    beta: f64,
) -> Result<GuidanceMask> {
    let prepare = |cat: Category| -> Result<Option<AttentionMap>> {
        if maps.iter().any(|m| m.category == cat) {
            let pooled = pool_maps(maps, cat)?;
            if pooled.l != dims.l {
                return Err(Error::Shape(format!(
                    "{cat} map has {} frames, latent has {}",
                    pooled.l, dims.l
                )));
            }
            Ok(Some(resize_map(&pooled, dims.w, dims.h)?))
        } else {
            Ok(None)
        }
    };
    let rgd = prepare(Category::Rigid)?;
    let non = prepare(Category::NonRigid)?;
    if rgd.is_none() && non.is_none() {
        return GuidanceMask::filled(dims.w, dims.h, dims.l, 0.0);
    }
    combine_masks(rgd.as_ref(), non.as_ref(), alpha, beta)
}

/// Reads a map manifest: one map per line as space-separated `key=value`
/// pairs with keys `file`, `word`, `category` and `block`. Blank lines and
/// lines starting with `#` are skipped; `file` is relative to the manifest.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<AttentionMap>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut maps = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut file = None;
        let mut word = None;
        let mut category = None;
        let mut block = Block::Synthetic;
        for pair in line.split_whitespace() {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("{}:{}: expected key=value", path.display(), n + 1)))?;
            match k {
                "file" => file = Some(base.join(v)),
                "word" => word = Some(v.to_string()),
                "category" => category = Some(v.parse::<Category>()?),
                "block" => block = v.parse()?,
                other => {
                    return Err(Error::Parse(format!(
                        "{}:{}: unknown key {other:?}",
                        path.display(),
                        n + 1
                    )))
                }
            }
        }
        let missing = |what: &str| Error::Parse(format!("{}:{}: missing {what}", path.display(), n + 1));
        let file: PathBuf = file.ok_or_else(|| missing("file"))?;
        let t = read_tensor(&file)?;
        let d = t.dims();
        if d.c != 1 {
            return Err(Error::Shape(format!(
                "attention map {} must have one channel, has {}",
                file.display(),
                d.c
            )));
        }
        maps.push(AttentionMap::from_raw(
            d.w,
            d.h,
            d.l,
            t.into_vec(),
            word.ok_or_else(|| missing("word"))?,
            category.ok_or_else(|| missing("category"))?,
            block,
        )?);
    }
    Ok(maps)
}

/// Writes each map as `<stem>_<i>.dnit` next to `path` plus the manifest.
pub fn write_manifest(path: impl AsRef<Path>, maps: &[AttentionMap]) -> Result<()> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("maps")
        .to_string();
    let mut text = String::new();
    for (i, m) in maps.iter().enumerate() {
        let name = format!("{stem}_{i}.dnit");
        write_tensor(&m.to_tensor(), base.join(&name))?;
        text.push_str(&format!(
            "file={name} word={} category={} block={}\n",
            m.word, m.category, m.block
        ));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy::scene::{Color, Shape, Style, ToyPrompt, Verb};

    fn map(w: usize, h: usize, l: usize, v: Vec<f32>, cat: Category) -> AttentionMap {
        AttentionMap::from_normalized(w, h, l, v, "w", cat, Block::Synthetic).unwrap()
    }

    #[test]
    fn ingestion_normalizes() {
        let m = AttentionMap::from_raw(2, 1, 1, vec![3.0, 7.0], "x", Category::Rigid, Block::Down)
            .unwrap();
        assert_eq!(m.values(), &[0.0, 1.0]);
        let flat =
            AttentionMap::from_raw(2, 1, 1, vec![2.0, 2.0], "x", Category::Rigid, Block::Down).unwrap();
        assert!(flat.degenerate);
    }

    #[test]
    fn pool_single_is_identity() {
        let m = map(2, 2, 1, vec![0.1, 0.5, 0.9, 0.2], Category::Rigid);
        assert_eq!(pool_maps(&[m.clone()], Category::Rigid).unwrap(), m);
    }

    #[test]
    fn pool_complements_average_to_half() {
        let v = vec![0.0, 0.25, 0.6, 1.0];
        let a = map(2, 2, 1, v.clone(), Category::Rigid);
        let b = map(2, 2, 1, v.iter().map(|x| 1.0 - x).collect(), Category::Rigid);
        let p = pool_maps(&[a, b], Category::Rigid).unwrap();
        for &x in p.values() {
            assert!((x - 0.5).abs() < 1e-7);
        }
    }

    #[test]
    fn pool_three_values() {
        let maps: Vec<_> = [0.0, 0.3, 0.9]
            .iter()
            .map(|&v| map(1, 1, 1, vec![v], Category::NonRigid))
            .collect();
        let p = pool_maps(&maps, Category::NonRigid).unwrap();
        assert!((p.values()[0] - 0.4).abs() < 1e-6);
    }

    #[test]
    fn pool_errors() {
        assert!(pool_maps(&[], Category::Rigid).is_err());
        let a = map(2, 2, 1, vec![0.0; 4], Category::Rigid);
        let b = map(1, 1, 1, vec![0.0], Category::Rigid);
        assert!(pool_maps(&[a.clone(), b], Category::Rigid).is_err());
        assert!(pool_maps(&[a], Category::NonRigid).is_err());
    }

    #[test]
    fn resize_ramp() {
        let m = map(2, 2, 1, vec![0.0, 1.0, 0.0, 1.0], Category::Rigid);
        let r = resize_map(&m, 4, 4).unwrap();
        for y in 0..4 {
            let row: Vec<f32> = (0..4).map(|x| r.get(x, y, 0)).collect();
            assert_eq!(row, vec![0.0, 0.25, 0.75, 1.0]);
        }
    }

    #[test]
    fn resize_constant() {
        let m = map(3, 2, 2, vec![0.4; 12], Category::Rigid);
        let r = resize_map(&m, 17, 9).unwrap();
        assert!(r.values().iter().all(|&v| (v - 0.4).abs() < 1e-7));
    }

    #[test]
    fn resize_delta_argmax() {
        let mut v = vec![0.0; 256];
        v[8 * 16 + 8] = 1.0;
        let m = map(16, 16, 1, v, Category::Rigid);
        let r = resize_map(&m, 64, 64).unwrap();
        // Source coordinate of target pixel x is (x + 0.5) / 4 - 0.5, so the
        // weight on source pixel 8 is 1 - |x/4 - 7.875|, maximal at x = 33 and 34.
        let oracle = |x: usize| (1.0 - ((x as f64 + 0.5) / 4.0 - 0.5 - 8.0).abs()).max(0.0);
        assert!((r.get(33, 33, 0) as f64 - oracle(33) * oracle(33)).abs() < 1e-6);
        let (ax, ay) = r.argmax(0);
        assert_eq!((ax, ay), (33, 33));
        assert!((32..36).contains(&ax) && (32..36).contains(&ay));
    }

    #[test]
    fn resize_rejects_downscale() {
        let m = map(4, 4, 1, vec![0.0; 16], Category::Rigid);
        assert!(resize_map(&m, 2, 4).is_err());
    }

    #[test]
    fn combine_cases() {
        let r = map(1, 1, 1, vec![0.8], Category::Rigid);
        let z = combine_masks(Some(&r), None, 0.0, 0.0).unwrap();
        assert_eq!(z.values(), &[0.0]);
        let m = combine_masks(Some(&r), None, 0.5, 0.0).unwrap();
        assert!((m.values()[0] - 0.4).abs() < 1e-7);
        let r1 = map(1, 1, 1, vec![1.0], Category::Rigid);
        let n = map(1, 1, 1, vec![0.9], Category::NonRigid);
        let c = combine_masks(Some(&r1), Some(&n), 0.7, 0.6).unwrap();
        assert_eq!(c.values(), &[1.0]);
        assert!(combine_masks(Some(&r), None, 1.1, 0.0).is_err());
        assert!(combine_masks(Some(&r), None, 0.5, -0.1).is_err());
        assert!(combine_masks(None, None, 0.5, 0.5).is_err());
    }

    fn scene(verb: Verb) -> SceneSpec {
        SceneSpec::canonical(ToyPrompt::new(Shape::Disc, Color::Red, verb, Style::Dark))
    }

    #[test]
    fn synth_static_rigid_centered() {
        let m = synth_attention(&scene(Verb::Static), "disc", 4).unwrap();
        assert_eq!((m.w, m.h), (16, 16));
        assert_eq!(m.category, Category::Rigid);
        for l in 0..4 {
            assert_eq!(m.argmax(l), m.argmax(0));
            let (x, y) = m.argmax(l);
            assert!((7..=8).contains(&x) && (7..=8).contains(&y));
        }
    }

    #[test]
    fn synth_moving_argmax_nondecreasing() {
        let m = synth_attention(&scene(Verb::Slide), "red", 8).unwrap();
        let xs: Vec<usize> = (0..8).map(|l| m.argmax(l).0).collect();
        assert!(xs.windows(2).all(|p| p[1] >= p[0]), "{xs:?}");
        assert!(xs[7] > xs[0]);
    }

    #[test]
    fn synth_nonrigid_is_wider() {
        let s = scene(Verb::Static);
        let fwhm = |m: &AttentionMap| {
            let y = m.argmax(0).1;
            let above = (0..m.w).filter(|&x| m.get(x, y, 0) >= 0.5).count();
            above as f64 / m.w as f64
        };
        let r = synth_attention(&s, "disc", 1).unwrap();
        let n = synth_attention(&s, "static", 1).unwrap();
        assert_eq!((n.w, n.category), (8, Category::NonRigid));
        assert!(fwhm(&n) >= 2.0 * fwhm(&r), "{} vs {}", fwhm(&n), fwhm(&r));
        assert!(matches!(synth_attention(&s, "blue", 1), Err(Error::UnknownWord(_))));
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = scene(Verb::Slide);
        let maps = vec![
            synth_attention(&s, "red", 8).unwrap(),
            synth_attention(&s, "slide", 8).unwrap(),
        ];
        let p = dir.path().join("maps.txt");
        write_manifest(&p, &maps).unwrap();
        let back = read_manifest(&p).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].category, Category::NonRigid);
        assert_eq!(back[0].word, "red");
        for (a, b) in maps.iter().zip(&back) {
            for (x, y) in a.values().iter().zip(b.values()) {
                assert!((x - y).abs() < 1e-6);
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_map(cat: Category) -> impl Strategy<Value = AttentionMap> {
            prop::collection::vec(0.0f32..=1.0, 2 * 3 * 2)
                .prop_map(move |v| AttentionMap::from_normalized(2, 3, 2, v, "w", cat, Block::Down).unwrap())
        }

        proptest! {
            #[test]
            fn combine_bounded_and_monotone(r in arb_map(Category::Rigid), n in arb_map(Category::NonRigid),
                                            a in 0.0f64..=1.0, b in 0.0f64..=1.0, da in 0.0f64..=1.0, db in 0.0f64..=1.0) {
                let a2 = (a + da).min(1.0);
                let b2 = (b + db).min(1.0);
                let base = combine_masks(Some(&r), Some(&n), a, b).unwrap();
                let more = combine_masks(Some(&r), Some(&n), a2, b2).unwrap();
                for (x, y) in base.values().iter().zip(more.values()) {
                    prop_assert!((0.0..=1.0).contains(x));
                    prop_assert!(y >= x);
                }
            }

            #[test]
            fn beta_zero_ignores_nonrigid(r in arb_map(Category::Rigid), n1 in arb_map(Category::NonRigid),
                                          n2 in arb_map(Category::NonRigid), a in 0.0f64..=1.0) {
                let x = combine_masks(Some(&r), Some(&n1), a, 0.0).unwrap();
                let y = combine_masks(Some(&r), Some(&n2), a, 0.0).unwrap();
                prop_assert_eq!(x.values(), y.values());
            }

            #[test]
            fn resize_commutes_with_shift(v in prop::collection::vec(0.0f32..=0.5, 3 * 2 * 2), c in 0.0f32..=0.5) {
                let m = AttentionMap::from_normalized(3, 2, 2, v.clone(), "w", Category::Rigid, Block::Down).unwrap();
                let shifted = AttentionMap::from_normalized(3, 2, 2, v.iter().map(|x| x + c).collect(), "w", Category::Rigid, Block::Down).unwrap();
                let a = resize_map(&m, 7, 5).unwrap();
                let b = resize_map(&shifted, 7, 5).unwrap();
                for (x, y) in a.values().iter().zip(b.values()) {
                    prop_assert!((x + c - y).abs() < 1e-6);
                }
            }
        }
    }
}

//! Quality and structure metrics: PSNR, SSIM, spectral profiles, low-band
//! correlation and mask-partitioned MSE.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::guidance::GuidanceMask;
use crate::spectral::{dft3_f64, fft_axes, signed_freq, to_complex, Axes};
use crate::tensor::LatentTensor;

/// Side length of the square SSIM window.
pub const SSIM_WINDOW: usize = 8;

/// Mask values at or above this count as inside the edit region.
pub const MASK_THRESHOLD: f32 = 0.5;

fn mse(a: &LatentTensor, b: &LatentTensor) -> Result<f64> {
    a.ensure_same_dims(b, "metric")?;
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| ((x - y) as f64).powi(2))
        .sum();
    Ok(s / a.data().len() as f64)
}

fn dynamic_range(t: &LatentTensor) -> f64 {
    let (lo, hi) = t.min_max();
    (hi - lo) as f64
}

/// Peak signal-to-noise ratio in dB. `peak` defaults to the dynamic range of `b`.
/// Identical inputs give `f64::INFINITY`.
pub fn psnr(a: &LatentTensor, b: &LatentTensor, peak: Option<f64>) -> Result<f64> {
    let err = mse(a, b)?;
    let peak = peak.unwrap_or_else(|| dynamic_range(b));
    if !(peak > 0.0) || !peak.is_finite() {
        return Err(Error::InvalidParam(format!("psnr peak must be positive, got {peak}")));
    }
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / err).log10())
}

/// PSNR between per-tensor standardized copies of `x` and `reference`, with the
/// peak set to the dynamic range of the standardized reference.
pub fn standardized_psnr(x: &LatentTensor, reference: &LatentTensor) -> Result<f64> {
    let r = reference.standardized();
    let peak = dynamic_range(&r);
    psnr(&x.standardized(), &r, Some(peak))
}

/// Single-scale SSIM of one frame (`l == 1`), averaged over every 8×8 window
/// position and channel. `peak` defaults to the dynamic range of `b`, or 1 if
/// `b` is constant.
pub fn ssim_frame(a: &LatentTensor, b: &LatentTensor, peak: Option<f64>) -> Result<f64> {
    a.ensure_same_dims(b, "ssim")?;
    let d = a.dims();
    if d.l != 1 {
        return Err(Error::Shape(format!("ssim_frame expects one frame, got dims {d}")));
    }
    if d.w < SSIM_WINDOW || d.h < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "frame {}x{} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window",
            d.w, d.h
        )));
    }
    let peak = peak.unwrap_or_else(|| match dynamic_range(b) {
        r if r > 0.0 => r,
        _ => 1.0,
    });
    let c1 = (0.01 * peak).powi(2);
    let c2 = (0.03 * peak).powi(2);
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..d.c {
        for y0 in 0..=d.h - SSIM_WINDOW {
            for x0 in 0..=d.w - SSIM_WINDOW {
                let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for y in y0..y0 + SSIM_WINDOW {
                    for x in x0..x0 + SSIM_WINDOW {
                        let p = a.get(x, y, 0, c) as f64;
                        let q = b.get(x, y, 0, c) as f64;
                        sa += p;
                        sb += q;
                        saa += p * p;
                        sbb += q * q;
                        sab += p * q;
                    }
                }
                let (ma, mb) = (sa / n, sb / n);
                let va = (saa / n - ma * ma).max(0.0);
                let vb = (sbb / n - mb * mb).max(0.0);
                let cov = sab / n - ma * mb;
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// Mean of [`ssim_frame`] over all frames.
pub fn ssim_video(a: &LatentTensor, b: &LatentTensor, peak: Option<f64>) -> Result<f64> {
    a.ensure_same_dims(b, "ssim")?;
    let peak = peak.or_else(|| match dynamic_range(b) {
        r if r > 0.0 => Some(r),
        _ => Some(1.0),
    });
    let frames = a.dims().l;
    let mut total = 0.0;
    for l in 0..frames {
        total += ssim_frame(&a.frame(l), &b.frame(l), peak)?;
    }
    Ok(total / frames as f64)
}

/// Radial (spatial) and temporal magnitude profiles of a tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralProfile {
    /// Mean |2D-DFT| per integer radius, over all frames and channels.
    pub radial: Vec<f64>,
    /// Total |2D-DFT|² per radius; sums to the tensor's energy.
    pub radial_energy: Vec<f64>,
    /// Mean |1D-DFT over L| per temporal frequency index, over pixels and channels.
    pub temporal: Vec<f64>,
    /// Total |1D-DFT|² per temporal index; also sums to the tensor's energy.
    pub temporal_energy: Vec<f64>,
}

/// Integer radius of a spatial bin, from signed frequencies.
pub fn radius(w: usize, h: usize, width: usize, height: usize) -> usize {
    let x = signed_freq(w, width) as f64;
    let y = signed_freq(h, height) as f64;
    (x * x + y * y).sqrt().round() as usize
}

pub fn spectral_profile(t: &LatentTensor) -> SpectralProfile {
    let d = t.dims();
    let mut spatial = to_complex(t);
    fft_axes(&mut spatial, d, Axes::SPATIAL, false);
    let bins = radius(d.w / 2, d.h / 2, d.w, d.h) + 1;
    let mut radial = vec![0.0; bins];
    let mut radial_energy = vec![0.0; bins];
    let mut counts = vec![0usize; bins];
    for l in 0..d.l {
        for h in 0..d.h {
            for w in 0..d.w {
                let r = radius(w, h, d.w, d.h);
                for c in 0..d.c {
                    let v: Complex64 = spatial[d.index(w, h, l, c)];
                    radial[r] += v.norm();
                    radial_energy[r] += v.norm_sqr();
                    counts[r] += 1;
                }
            }
        }
    }
    for (m, &n) in radial.iter_mut().zip(&counts) {
        if n > 0 {
            *m /= n as f64;
        }
    }

    let mut temporal_buf = to_complex(t);
    fft_axes(&mut temporal_buf, d, Axes::TEMPORAL, false);
    let mut temporal = vec![0.0; d.l];
    let mut temporal_energy = vec![0.0; d.l];
    for (i, v) in temporal_buf.iter().enumerate() {
        let l = i / (d.h * d.w * d.c);
        temporal[l] += v.norm();
        temporal_energy[l] += v.norm_sqr();
    }
    let per_frame = (d.h * d.w * d.c) as f64;
    for m in &mut temporal {
        *m /= per_frame;
    }
    SpectralProfile {
        radial,
        radial_energy,
        temporal,
        temporal_energy,
    }
}

/// Pearson correlation of spectral magnitudes of `x` and `reference` over the
/// low band: bins whose folded frequency `|k|` is below `band · n` on every axis.
pub fn band_correlation(x: &LatentTensor, reference: &LatentTensor, band: f64) -> Result<f64> {
    x.ensure_same_dims(reference, "band_correlation")?;
    if !(band > 0.0 && band <= 1.0) {
        return Err(Error::InvalidParam(format!("band must be in (0, 1], got {band}")));
    }
    let d = x.dims();
    let (sx, sr) = (dft3_f64(x), dft3_f64(reference));
    let low = |k: usize, n: usize| (signed_freq(k, n).unsigned_abs() as f64) < band * n as f64;
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for l in (0..d.l).filter(|&l| low(l, d.l)) {
        for h in (0..d.h).filter(|&h| low(h, d.h)) {
            for w in (0..d.w).filter(|&w| low(w, d.w)) {
                for c in 0..d.c {
                    let i = d.index(w, h, l, c);
                    a.push(sx[i].norm());
                    b.push(sr[i].norm());
                }
            }
        }
    }
    pearson(&a, &b).ok_or(Error::DegenerateBand)
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    let denom = (va * vb).sqrt();
    (denom > 1e-12 * (1.0 + ma.abs() * mb.abs())).then(|| (cov / denom).clamp(-1.0, 1.0))
}

/// Which side of the mask threshold to measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Inside,
    Outside,
}

impl Region {
    fn name(self) -> &'static str {
        match self {
            Region::Inside => "inside",
            Region::Outside => "outside",
        }
    }
}

/// Channel-averaged MSE over the cells on one side of the mask.
pub fn masked_mse(a: &LatentTensor, b: &LatentTensor, m: &GuidanceMask, region: Region) -> Result<f64> {
    a.ensure_same_dims(b, "masked_mse")?;
    let d = a.dims();
    if !m.matches(d) {
        return Err(Error::Shape(format!("mask does not match tensor dims {d}")));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (cell, &v) in m.values().iter().enumerate() {
        if (v >= MASK_THRESHOLD) == (region == Region::Inside) {
            for c in 0..d.c {
                let i = cell * d.c + c;
                sum += ((a.data()[i] - b.data()[i]) as f64).powi(2);
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::EmptyPartition(region.name()));
    }
    Ok(sum / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{random_gaussian, Rng};
    use crate::spectral::{apply_filter, build_asf, build_glpf, NormMode};
    use crate::tensor::Dims;
    use crate::toy::scene::{gen_dataset, Color, SceneSpec, Shape, Style, ToyPrompt, Verb};

    fn dims(w: usize, h: usize, l: usize, c: usize) -> Dims {
        Dims::new(w, h, l, c).unwrap()
    }

    fn gauss(seed: u64, d: Dims) -> LatentTensor {
        random_gaussian(d, &mut Rng::new(seed)).unwrap()
    }

    #[test]
    fn psnr_cases() {
        let d = dims(4, 4, 2, 1);
        let a = gauss(1, d);
        assert_eq!(psnr(&a, &a, Some(1.0)).unwrap(), f64::INFINITY);
        // Every cell off by 0.1 gives MSE 0.01.
        let b = a.map(|v| v + 0.1);
        assert!((psnr(&a, &b, Some(1.0)).unwrap() - 20.0).abs() < 1e-4);
        assert!(psnr(&a, &gauss(2, dims(4, 4, 1, 1)), None).is_err());
        assert!(psnr(&a, &b, Some(0.0)).is_err());
    }

    #[test]
    fn psnr_monotone_and_symmetric() {
        let d = dims(8, 8, 2, 2);
        let a = gauss(3, d);
        let noise = gauss(4, d);
        let near = a.axpby(1.0, &noise, 0.1).unwrap();
        let far = a.axpby(1.0, &noise, 0.5).unwrap();
        assert!(psnr(&near, &a, Some(2.0)).unwrap() > psnr(&far, &a, Some(2.0)).unwrap());
        assert_eq!(psnr(&near, &a, Some(2.0)).unwrap(), psnr(&a, &near, Some(2.0)).unwrap());
    }

    #[test]
    fn ssim_cases() {
        let d = dims(8, 8, 1, 2);
        let a = gauss(5, d);
        assert_eq!(ssim_frame(&a, &a, None).unwrap(), 1.0);
        // A checkerboard is zero-mean inside every window, not just overall.
        let zero_mean = LatentTensor::from_fn(d, |w, h, _, c| if (w + h) % 2 == 0 { 0.5 + c as f32 } else { -0.5 - c as f32 });
        let neg = zero_mean.scale(-1.0);
        assert!(ssim_frame(&zero_mean, &neg, Some(2.0)).unwrap() < 0.0);
        let k = LatentTensor::filled(d, 0.3);
        assert!((ssim_frame(&k, &k.clone(), None).unwrap() - 1.0).abs() < 1e-12);
        let small = gauss(6, dims(7, 8, 1, 1));
        assert!(ssim_frame(&small, &small, None).is_err());
        let video = gauss(7, dims(12, 10, 3, 1));
        assert_eq!(ssim_video(&video, &video, None).unwrap(), 1.0);
    }

    #[test]
    fn white_noise_profile_is_flat() {
        // Monte-Carlo mean profile; single draws are noisy in the sparsely populated
        // centre and corner bins.
        let mut mean = vec![];
        for seed in 0..32 {
            let p = spectral_profile(&gauss(seed, dims(32, 32, 8, 1)));
            mean.resize(p.radial.len(), 0.0);
            for (m, v) in mean.iter_mut().zip(&p.radial) {
                *m += v / 32.0;
            }
        }
        let max = mean.iter().cloned().fold(f64::MIN, f64::max);
        let min = mean.iter().cloned().fold(f64::MAX, f64::min);
        assert!(max / min < 1.5, "ratio {}", max / min);
    }

    #[test]
    fn constant_energy_sits_at_radius_zero() {
        let p = spectral_profile(&LatentTensor::filled(dims(8, 8, 4, 2), 0.7));
        assert!(p.radial_energy[0] > 0.0);
        assert!(p.radial_energy[1..].iter().all(|&e| e < 1e-9));
        assert!(p.temporal_energy[1..].iter().all(|&e| e < 1e-9));
    }

    #[test]
    fn profile_energy_matches_parseval() {
        for seed in 0..10 {
            let z = gauss(seed, dims(9, 6, 5, 2));
            let p = spectral_profile(&z);
            let e = z.sum_sq();
            assert!((p.radial_energy.iter().sum::<f64>() - e).abs() <= 1e-4 * e);
            assert!((p.temporal_energy.iter().sum::<f64>() - e).abs() <= 1e-4 * e);
        }
    }

    #[test]
    fn toy_video_spectrum_decays() {
        let d = dims(16, 16, 8, 3);
        let data = gen_dataset(&mut Rng::new(4), 8, d);
        for (video, _) in &data {
            let p = spectral_profile(video);
            let half = p.radial.len() / 2;
            // Trend: the first half of the radial profile slopes downwards.
            let first = p.radial[..half / 2].iter().sum::<f64>();
            let second = p.radial[half / 2..half].iter().sum::<f64>();
            assert!(first > second);
            assert!(p.radial[0] > p.radial[half]);
        }
    }

    #[test]
    fn band_correlation_cases() {
        let d = dims(16, 16, 8, 3);
        let z = gauss(9, d);
        assert!((band_correlation(&z, &z, 0.125).unwrap() - 1.0).abs() < 1e-12);
        assert!((band_correlation(&z, &z, 1.0).unwrap() - 1.0).abs() < 1e-12);
        assert!(band_correlation(&z, &z, 0.0).is_err());
        assert!(band_correlation(&z, &z, 1.5).is_err());
        // Only one bin survives on a 1×1×1×1 tensor.
        let tiny = LatentTensor::filled(dims(1, 1, 1, 1), 1.0);
        assert!(matches!(band_correlation(&tiny, &tiny, 1.0), Err(Error::DegenerateBand)));
    }

    #[test]
    fn band_correlation_matches_direct_pearson() {
        // Oracle: explicit bin enumeration with raw |k| folding written out by hand.
        let d = dims(8, 8, 4, 1);
        let (x, r) = (gauss(10, d), gauss(11, d));
        let (sx, sr) = (dft3_f64(&x), dft3_f64(&r));
        let keep = |k: usize, n: usize| k.min(n - k) * 4 < n; // band 1/4
        let (mut a, mut b) = (vec![], vec![]);
        for l in 0..4 {
            for h in 0..8 {
                for w in 0..8 {
                    if keep(w, 8) && keep(h, 8) && keep(l, 4) {
                        a.push(sx[d.index(w, h, l, 0)].norm());
                        b.push(sr[d.index(w, h, l, 0)].norm());
                    }
                }
            }
        }
        assert_eq!(a.len(), 3 * 3);
        let expected = pearson(&a, &b).unwrap();
        assert!((band_correlation(&x, &r, 0.25).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn masked_mse_cases() {
        let d = dims(4, 4, 2, 3);
        let a = gauss(12, d);
        let b = gauss(13, d);
        let half: Vec<f32> = (0..d.cells()).map(|i| if i % 2 == 0 { 1.0 } else { 0.2 }).collect();
        let m = GuidanceMask::from_values(4, 4, 2, half).unwrap();
        assert_eq!(masked_mse(&a, &a, &m, Region::Inside).unwrap(), 0.0);
        assert_eq!(masked_mse(&a, &a, &m, Region::Outside).unwrap(), 0.0);
        // Direct oracle over even cells.
        let mut s = 0.0;
        for cell in (0..d.cells()).step_by(2) {
            for c in 0..3 {
                s += ((a.data()[cell * 3 + c] - b.data()[cell * 3 + c]) as f64).powi(2);
            }
        }
        let inside = masked_mse(&a, &b, &m, Region::Inside).unwrap();
        assert!((inside - s / (d.cells() / 2 * 3) as f64).abs() < 1e-12);
        let full = GuidanceMask::filled(4, 4, 2, 1.0).unwrap();
        let err = masked_mse(&a, &b, &full, Region::Outside).unwrap_err();
        assert!(err.to_string().contains("empty partition"));
    }

    #[test]
    fn asf_beats_glpf_on_a_structured_latent() {
        // A noise-dominated latent with a faint copy of the clean video, the regime
        // of an inverted latent; the ASF keeps the bins where that copy lives.
        let d = dims(16, 16, 8, 3);
        let s = SceneSpec::canonical(ToyPrompt::new(Shape::Disc, Color::Green, Verb::Slide, Style::Light));
        let z0 = s.render(d);
        let z = z0.axpby(1.0, &gauss(14, d), 3.0).unwrap();
        let asf = apply_filter(&z, &build_asf(&z0, NormMode::PerChannel).unwrap()).unwrap();
        let asf_psnr = standardized_psnr(&asf, &z0).unwrap();
        for sigma in [1.0, 3.0, 5.0, 10.0] {
            let glpf = apply_filter(&z, &build_glpf(d, sigma).unwrap()).unwrap();
            assert!(asf_psnr > standardized_psnr(&glpf, &z0).unwrap(), "sigma {sigma}");
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn psnr_symmetric_and_decreasing_in_error(seed in any::<u64>(), small in 0.01f32..0.5, extra in 0.01f32..1.0) {
                let d = dims(6, 5, 2, 2);
                let a = gauss(seed, d);
                let n = gauss(seed ^ 7, d);
                let near = a.axpby(1.0, &n, small as f64).unwrap();
                let far = a.axpby(1.0, &n, (small + extra) as f64).unwrap();
                prop_assert_eq!(psnr(&a, &near, Some(3.0)).unwrap(), psnr(&near, &a, Some(3.0)).unwrap());
                prop_assert!(psnr(&near, &a, Some(3.0)).unwrap() > psnr(&far, &a, Some(3.0)).unwrap());
            }

            #[test]
            fn profile_energy_is_parseval(w in 1usize..=9, h in 1usize..=9, l in 1usize..=5, seed in any::<u64>()) {
                let z = gauss(seed, dims(w, h, l, 2));
                let p = spectral_profile(&z);
                let e = z.sum_sq();
                prop_assert!((p.radial_energy.iter().sum::<f64>() - e).abs() <= 1e-4 * e);
                prop_assert!((p.temporal_energy.iter().sum::<f64>() - e).abs() <= 1e-4 * e);
            }

            #[test]
            fn ssim_of_a_frame_with_itself_is_one(w in 8usize..=12, h in 8usize..=12, seed in any::<u64>()) {
                let a = gauss(seed, dims(w, h, 1, 1));
                prop_assert_eq!(ssim_frame(&a, &a, None).unwrap(), 1.0);
            }
        }
    }
}

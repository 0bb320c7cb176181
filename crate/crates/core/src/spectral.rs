//! 3D Fourier analysis of latent tensors and spectral filters.
//!
//! All transforms use the orthonormal convention (`1/sqrt(W*H*L)` in each
//! direction) over the `(W, H, L)` axes, independently for every channel.
//! Frequency index 0 is DC and spectra are stored unshifted.

use num_complex::{Complex, Complex32, Complex64};
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::tensor::{Dims, LatentTensor};

/// Tolerance on Hermitian asymmetry and on the imaginary residual of an
/// inverse transform, relative to `max(1, peak magnitude)`.
pub const HERMITIAN_TOL: f64 = 1e-4;

/// Complex spectrum with the same dims and layout as the source tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    dims: Dims,
    data: Vec<Complex32>,
}

impl Spectrum {
    pub fn from_vec(dims: Dims, data: Vec<Complex32>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::LengthMismatch {
                dims: dims.to_array(),
                len: data.len(),
            });
        }
        Ok(Spectrum { dims, data })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[Complex32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex32] {
        &mut self.data
    }

    pub fn get(&self, w: usize, h: usize, l: usize, c: usize) -> Complex32 {
        self.data[self.dims.index(w, h, l, c)]
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr() as f64).sum()
    }

    /// Largest `|S[k] - conj(S[-k])|` over all bins.
    pub fn hermitian_residual(&self) -> f64 {
        let d = self.dims;
        let mut worst = 0.0f64;
        for_each_index(d, |i, w, h, l, c| {
            let m = d.index(mirror(w, d.w), mirror(h, d.h), mirror(l, d.l), c);
            let a = self.data[i];
            let b = self.data[m].conj();
            let diff = Complex64::new(a.re as f64 - b.re as f64, a.im as f64 - b.im as f64);
            worst = worst.max(diff.norm());
        });
        worst
    }
}

/// Where a filter's gains came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FilterKind {
    Asf,
    Glpf { sigma: f64 },
    Ones,
    Custom,
}

/// Min-max normalization scope for [`build_asf`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormMode {
    #[default]
    PerChannel,
    Global,
}

impl std::str::FromStr for NormMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-channel" => Ok(NormMode::PerChannel),
            "global" => Ok(NormMode::Global),
            other => Err(Error::Parse(format!("unknown norm mode {other:?}"))),
        }
    }
}

/// Real frequency gains in `[0, 1]`, Hermitian-symmetric per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralFilter {
    dims: Dims,
    gains: Vec<f32>,
    kind: FilterKind,
}

impl SpectralFilter {
    pub fn ones(dims: Dims) -> Self {
        SpectralFilter {
            dims,
            gains: vec![1.0; dims.len()],
            kind: FilterKind::Ones,
        }
    }

    /// Validates range and Hermitian symmetry of caller-supplied gains.
    pub fn custom(dims: Dims, gains: Vec<f32>) -> Result<Self> {
        if gains.len() != dims.len() {
            return Err(Error::LengthMismatch {
                dims: dims.to_array(),
                len: gains.len(),
            });
        }
        if let Some(i) = gains.iter().position(|g| !(0.0..=1.0).contains(g)) {
            return Err(Error::InvalidParam(format!(
                "filter gain {} at index {i} outside [0, 1]",
                gains[i]
            )));
        }
        let f = SpectralFilter {
            dims,
            gains,
            kind: FilterKind::Custom,
        };
        let asym = f.asymmetry();
        if asym > 1e-6 {
            return Err(Error::InvalidParam(format!(
                "filter gains not Hermitian-symmetric (max asymmetry {asym:e})"
            )));
        }
        Ok(f)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn gains(&self) -> &[f32] {
        &self.gains
    }

    pub fn kind(&self) -> FilterKind {
        self.kind
    }

    pub fn gain(&self, w: usize, h: usize, l: usize, c: usize) -> f32 {
        self.gains[self.dims.index(w, h, l, c)]
    }

    /// `1 - F`, the complementary filter.
    pub fn complement(&self) -> SpectralFilter {
        SpectralFilter {
            dims: self.dims,
            gains: self.gains.iter().map(|g| 1.0 - g).collect(),
            kind: FilterKind::Custom,
        }
    }

    fn asymmetry(&self) -> f64 {
        let d = self.dims;
        let mut worst = 0.0f64;
        for_each_index(d, |i, w, h, l, c| {
            let m = d.index(mirror(w, d.w), mirror(h, d.h), mirror(l, d.l), c);
            worst = worst.max((self.gains[i] - self.gains[m]).abs() as f64);
        });
        worst
    }
}

#[inline]
pub(crate) fn mirror(k: usize, n: usize) -> usize {
    (n - k) % n
}

/// Signed frequency of unshifted index `k` on an axis of length `n`,
/// in `[-n/2, n/2)` for even `n`.
#[inline]
pub fn signed_freq(k: usize, n: usize) -> i64 {
    if k >= (n + 1) / 2 {
        k as i64 - n as i64
    } else {
        k as i64
    }
}

fn for_each_index(d: Dims, mut f: impl FnMut(usize, usize, usize, usize, usize)) {
    let mut i = 0;
    for l in 0..d.l {
        for h in 0..d.h {
            for w in 0..d.w {
                for c in 0..d.c {
                    f(i, w, h, l, c);
                    i += 1;
                }
            }
        }
    }
}

/// Axes selectable for a partial transform, in `(W, H, L)` order.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Axes {
    pub w: bool,
    pub h: bool,
    pub l: bool,
}

impl Axes {
    pub const ALL: Axes = Axes {
        w: true,
        h: true,
        l: true,
    };
    pub const SPATIAL: Axes = Axes {
        w: true,
        h: true,
        l: false,
    };
    pub const TEMPORAL: Axes = Axes {
        w: false,
        h: false,
        l: true,
    };
}

/// In-place orthonormal DFT over the selected axes of a frame-major buffer.
pub(crate) fn fft_axes(buf: &mut [Complex64], d: Dims, axes: Axes, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let mut run = |n: usize, stride: usize, starts: Vec<usize>| {
        if n == 1 {
            return;
        }
        let fft = if inverse {
            planner.plan_fft_inverse(n)
        } else {
            planner.plan_fft_forward(n)
        };
        let scale = 1.0 / (n as f64).sqrt();
        let mut lane = vec![Complex64::new(0.0, 0.0); n];
        for s in starts {
            for (k, v) in lane.iter_mut().enumerate() {
                *v = buf[s + k * stride];
            }
            fft.process(&mut lane);
            for (k, v) in lane.iter().enumerate() {
                buf[s + k * stride] = v * scale;
            }
        }
    };
    if axes.w {
        let starts = (0..d.l)
            .flat_map(|l| (0..d.h).flat_map(move |h| (0..d.c).map(move |c| d.index(0, h, l, c))))
            .collect();
        run(d.w, d.c, starts);
    }
    if axes.h {
        let starts = (0..d.l)
            .flat_map(|l| (0..d.w).flat_map(move |w| (0..d.c).map(move |c| d.index(w, 0, l, c))))
            .collect();
        run(d.h, d.w * d.c, starts);
    }
    if axes.l {
        let starts = (0..d.h)
            .flat_map(|h| (0..d.w).flat_map(move |w| (0..d.c).map(move |c| d.index(w, h, 0, c))))
            .collect();
        run(d.l, d.h * d.w * d.c, starts);
    }
}

pub(crate) fn to_complex(t: &LatentTensor) -> Vec<Complex64> {
    t.data()
        .iter()
        .map(|&v| Complex64::new(v as f64, 0.0))
        .collect()
}

/// Full-precision forward transform used internally by filters and metrics.
pub(crate) fn dft3_f64(t: &LatentTensor) -> Vec<Complex64> {
    let mut buf = to_complex(t);
    fft_axes(&mut buf, t.dims(), Axes::ALL, false);
    buf
}

/// Inverse transform to a real tensor, rejecting a significant imaginary residual.
fn idft3_f64(mut buf: Vec<Complex64>, d: Dims) -> Result<LatentTensor> {
    fft_axes(&mut buf, d, Axes::ALL, true);
    let peak = buf.iter().map(|v| v.re.abs()).fold(1.0f64, f64::max);
    let residual = buf.iter().map(|v| v.im.abs()).fold(0.0f64, f64::max);
    let tolerance = HERMITIAN_TOL * peak;
    if residual > tolerance {
        return Err(Error::ComplexResidual {
            residual,
            tolerance,
        });
    }
    LatentTensor::from_vec(d, buf.iter().map(|v| v.re as f32).collect())
}

/// Orthonormal 3D DFT over `(W, H, L)` per channel.
pub fn dft3(t: &LatentTensor) -> Spectrum {
    let data = dft3_f64(t)
        .into_iter()
        .map(|v| Complex::new(v.re as f32, v.im as f32))
        .collect();
    Spectrum {
        dims: t.dims(),
        data,
    }
}

/// Inverse of [`dft3`]. The spectrum must be Hermitian-symmetric so that the
/// result is real.
pub fn idft3(s: &Spectrum) -> Result<LatentTensor> {
    let peak = s.data.iter().map(|v| v.norm() as f64).fold(1.0f64, f64::max);
    let residual = s.hermitian_residual();
    let tolerance = HERMITIAN_TOL * peak;
    if residual > tolerance {
        return Err(Error::ComplexResidual {
            residual,
            tolerance,
        });
    }
    let buf = s
        .data
        .iter()
        .map(|v| Complex64::new(v.re as f64, v.im as f64))
        .collect();
    idft3_f64(buf, s.dims)
}

/// Adaptive spectral filter: the min-max normalized magnitude spectrum of the
/// clean input latent `z0`.
///
/// Magnitudes are mirror-averaged before normalization, so the gains are
/// exactly Hermitian-symmetric and still reach exactly 0 and 1.
pub fn build_asf(z0: &LatentTensor, norm: NormMode) -> Result<SpectralFilter> {
    let d = z0.dims();
    for c in 0..d.c {
        let first = z0.data()[c];
        if z0.data().iter().skip(c).step_by(d.c).all(|&v| v == first) {
            return Err(Error::DegenerateSpectrum { channel: c });
        }
    }
    let spec = dft3_f64(z0);
    let mut mag = vec![0.0f64; d.len()];
    for_each_index(d, |i, w, h, l, c| {
        let m = d.index(mirror(w, d.w), mirror(h, d.h), mirror(l, d.l), c);
        mag[i] = 0.5 * (spec[i].norm() + spec[m].norm());
    });

    let mut gains = vec![0.0f32; d.len()];
    let ranges: Vec<(f64, f64)> = match norm {
        NormMode::PerChannel => (0..d.c)
            .map(|c| {
                mag.iter()
                    .skip(c)
                    .step_by(d.c)
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                        (lo.min(v), hi.max(v))
                    })
            })
            .collect(),
        NormMode::Global => {
            let r = mag
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                });
            vec![r; d.c]
        }
    };
    for (c, &(lo, hi)) in ranges.iter().enumerate() {
        if !(hi - lo > 1e-12 * hi.max(1e-300)) {
            return Err(Error::DegenerateSpectrum { channel: c });
        }
    }
    for (i, g) in gains.iter_mut().enumerate() {
        let (lo, hi) = ranges[i % d.c];
        *g = ((mag[i] - lo) / (hi - lo)).clamp(0.0, 1.0) as f32;
    }
    Ok(SpectralFilter {
        dims: d,
        gains,
        kind: FilterKind::Asf,
    })
}

/// Spatial Gaussian low-pass `G(x, y) = exp(-(x^2 + y^2) / (2 sigma^2))` over
/// signed frequency coordinates, replicated across frames and channels.
pub fn build_glpf(dims: Dims, sigma: f64) -> Result<SpectralFilter> {
    let dims = Dims::new(dims.w, dims.h, dims.l, dims.c)?;
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParam(format!("sigma must be positive, got {sigma}")));
    }
    let denom = 2.0 * sigma * sigma;
    let mut gains = vec![0.0f32; dims.len()];
    for_each_index(dims, |i, w, h, _, _| {
        let x = signed_freq(w, dims.w) as f64;
        let y = signed_freq(h, dims.h) as f64;
        gains[i] = (-(x * x + y * y) / denom).exp() as f32;
    });
    Ok(SpectralFilter {
        dims,
        gains,
        kind: FilterKind::Glpf { sigma },
    })
}

/// `idft3(F ⊙ dft3(z))`.
pub fn apply_filter(z: &LatentTensor, filter: &SpectralFilter) -> Result<LatentTensor> {
    if z.dims() != filter.dims {
        return Err(Error::Shape(format!(
            "filter dims {} do not match tensor dims {}",
            filter.dims,
            z.dims()
        )));
    }
    let mut spec = dft3_f64(z);
    for (s, &g) in spec.iter_mut().zip(&filter.gains) {
        *s *= g as f64;
    }
    idft3_f64(spec, z.dims())
}

/// Splits `z` into the visual branch `F ⊙ z` and the Gaussian branch
/// `(1 - F) ⊙ z` in the frequency domain.
///
/// Both branches come from one forward transform, so `z_v + z_g = z` up to
/// rounding.
pub fn disentangle(
    z: &LatentTensor,
    filter: &SpectralFilter,
) -> Result<(LatentTensor, LatentTensor)> {
    if z.dims() != filter.dims {
        return Err(Error::Shape(format!(
            "filter dims {} do not match tensor dims {}",
            filter.dims,
            z.dims()
        )));
    }
    let spec = dft3_f64(z);
    let visual: Vec<Complex64> = spec
        .iter()
        .zip(&filter.gains)
        .map(|(s, &g)| s * g as f64)
        .collect();
    let gaussian: Vec<Complex64> = spec
        .iter()
        .zip(&filter.gains)
        .map(|(s, &g)| s * (1.0 - g as f64))
        .collect();
    Ok((idft3_f64(visual, z.dims())?, idft3_f64(gaussian, z.dims())?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{random_gaussian, Rng};
    use std::f64::consts::PI;

    /// Direct evaluation of the orthonormal DFT definition.
    fn brute_dft(t: &LatentTensor) -> Vec<Complex64> {
        let d = t.dims();
        let n = (d.w * d.h * d.l) as f64;
        let mut out = vec![Complex64::new(0.0, 0.0); d.len()];
        for kl in 0..d.l {
            for kh in 0..d.h {
                for kw in 0..d.w {
                    for c in 0..d.c {
                        let mut acc = Complex64::new(0.0, 0.0);
                        for l in 0..d.l {
                            for h in 0..d.h {
                                for w in 0..d.w {
                                    let phase = -2.0
                                        * PI
                                        * ((kw * w) as f64 / d.w as f64
                                            + (kh * h) as f64 / d.h as f64
                                            + (kl * l) as f64 / d.l as f64);
                                    acc += Complex64::from_polar(t.get(w, h, l, c) as f64, phase);
                                }
                            }
                        }
                        out[d.index(kw, kh, kl, c)] = acc / n.sqrt();
                    }
                }
            }
        }
        out
    }

    fn rel_err(a: &[Complex32], b: &[Complex64]) -> f64 {
        let num: f64 = a
            .iter()
            .zip(b)
            .map(|(x, y)| (Complex64::new(x.re as f64, x.im as f64) - y).norm_sqr())
            .sum();
        let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
        (num / den).sqrt()
    }

    fn dims(w: usize, h: usize, l: usize, c: usize) -> Dims {
        Dims::new(w, h, l, c).unwrap()
    }

    #[test]
    fn constant_concentrates_at_dc() {
        let t = LatentTensor::filled(dims(4, 4, 2, 1), 1.5);
        let s = dft3(&t);
        let dc = s.get(0, 0, 0, 0);
        assert!((dc.re as f64 - 1.5 * 32f64.sqrt()).abs() < 1e-5);
        for (i, v) in s.data().iter().enumerate().skip(1) {
            assert!(v.norm() < 1e-6, "bin {i}: {v}");
        }
    }

    #[test]
    fn matches_brute_force_oracle() {
        let t = random_gaussian(dims(4, 4, 3, 2), &mut Rng::new(11)).unwrap();
        let s = dft3(&t);
        assert!(rel_err(s.data(), &brute_dft(&t)) < 1e-5);
    }

    #[test]
    fn cosine_has_two_conjugate_bins() {
        let d = dims(8, 4, 2, 1);
        let k = 3;
        let t = LatentTensor::from_fn(d, |w, _, _, _| {
            (2.0 * PI * (k * w) as f64 / 8.0).cos() as f32
        });
        let s = dft3(&t);
        let nonzero: Vec<usize> = s
            .data()
            .iter()
            .enumerate()
            .filter(|(_, v)| v.norm() > 1e-5)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(nonzero, vec![d.index(3, 0, 0, 0), d.index(5, 0, 0, 0)]);
        let (a, b) = (s.get(3, 0, 0, 0), s.get(5, 0, 0, 0));
        assert!((a - b.conj()).norm() < 1e-6);
    }

    #[test]
    fn round_trip_many_seeds() {
        for seed in 0..50 {
            let t = random_gaussian(dims(6, 5, 3, 2), &mut Rng::new(seed)).unwrap();
            let back = idft3(&dft3(&t)).unwrap();
            assert!(back.rel_l2(&t).unwrap() < 1e-5);
            let e = dft3(&t).energy();
            assert!((e - t.sum_sq()).abs() / t.sum_sq() < 1e-5);
        }
    }

    #[test]
    fn dc_only_inverse_is_constant() {
        let d = dims(4, 4, 2, 1);
        let mut data = vec![Complex32::new(0.0, 0.0); d.len()];
        data[0] = Complex32::new(2.0, 0.0);
        let t = idft3(&Spectrum::from_vec(d, data).unwrap()).unwrap();
        for &v in t.data() {
            assert!((v as f64 - 2.0 / 32f64.sqrt()).abs() < 1e-6);
        }
    }

    #[test]
    fn broken_symmetry_rejected() {
        let t = random_gaussian(dims(4, 4, 2, 1), &mut Rng::new(3)).unwrap();
        let mut s = dft3(&t);
        s.data_mut()[t.dims().index(1, 2, 0, 0)] += Complex32::new(0.1, 0.0);
        let err = idft3(&s).unwrap_err();
        assert!(matches!(err, Error::ComplexResidual { .. }));
        assert!(err.to_string().contains("complex residual"));
    }

    #[test]
    fn asf_hits_exact_endpoints() {
        let z0 = random_gaussian(dims(6, 4, 3, 3), &mut Rng::new(8)).unwrap();
        let f = build_asf(&z0, NormMode::PerChannel).unwrap();
        let d = z0.dims();
        for c in 0..d.c {
            let ch: Vec<f32> = f.gains().iter().skip(c).step_by(d.c).copied().collect();
            assert_eq!(ch.iter().cloned().fold(f32::MIN, f32::max), 1.0);
            assert_eq!(ch.iter().cloned().fold(f32::MAX, f32::min), 0.0);
        }
        assert_eq!(f.asymmetry(), 0.0);
        assert_eq!(f.kind(), FilterKind::Asf);
    }

    #[test]
    fn asf_of_dithered_constant_peaks_at_dc() {
        let d = dims(8, 8, 4, 2);
        let mut rng = Rng::new(4);
        let mut dither = vec![0.0f32; d.len()];
        rng.fill_gaussian(&mut dither);
        let z0 = LatentTensor::from_fn(d, |w, h, l, c| {
            3.0 + c as f32 + 1e-3 * dither[d.index(w, h, l, c)]
        });
        let f = build_asf(&z0, NormMode::PerChannel).unwrap();
        for c in 0..2 {
            assert_eq!(f.gain(0, 0, 0, c), 1.0);
        }
        let off_dc_max = f
            .gains()
            .iter()
            .enumerate()
            .filter(|(i, _)| *i >= d.c)
            .map(|(_, &g)| g)
            .fold(0.0f32, f32::max);
        assert!(off_dc_max < 0.01, "{off_dc_max}");
    }

    #[test]
    fn asf_global_mode_shares_scale() {
        let d = dims(4, 4, 2, 2);
        let z0 = LatentTensor::from_fn(d, |w, h, l, c| {
            (if c == 0 { 10.0 } else { 1.0 }) * ((w * 7 + h * 3 + l) % 5) as f32
        });
        let g = build_asf(&z0, NormMode::Global).unwrap();
        let ch1_max = g.gains().iter().skip(1).step_by(2).cloned().fold(0.0f32, f32::max);
        assert!(ch1_max < 0.2, "{ch1_max}");
        let p = build_asf(&z0, NormMode::PerChannel).unwrap();
        let ch1_max = p.gains().iter().skip(1).step_by(2).cloned().fold(0.0f32, f32::max);
        assert_eq!(ch1_max, 1.0);
    }

    #[test]
    fn asf_rejects_constant_channel() {
        let d = dims(4, 4, 2, 2);
        let z0 = LatentTensor::from_fn(d, |w, _, _, c| if c == 0 { w as f32 } else { 2.0 });
        assert!(matches!(
            build_asf(&z0, NormMode::PerChannel),
            Err(Error::DegenerateSpectrum { channel: 1 })
        ));
    }

    #[test]
    fn glpf_closed_form() {
        let f = build_glpf(dims(64, 64, 1, 1), 5.0).unwrap();
        assert_eq!(f.gain(0, 0, 0, 0), 1.0);
        assert!((f.gain(5, 0, 0, 0) as f64 - (-0.5f64).exp()).abs() < 1e-6);
        assert!((f.gain(59, 0, 0, 0) as f64 - (-0.5f64).exp()).abs() < 1e-6);
        let narrow = build_glpf(dims(16, 12, 3, 2), 1.0).unwrap();
        let wide = build_glpf(dims(16, 12, 3, 2), 10.0).unwrap();
        for (a, b) in narrow.gains().iter().zip(wide.gains()) {
            assert!(b >= a);
            assert!(*a > 0.0 && *b <= 1.0);
        }
        assert!(build_glpf(dims(4, 4, 1, 1), 0.0).is_err());
        assert!(build_glpf(dims(4, 4, 1, 1), -1.0).is_err());
    }

    #[test]
    fn glpf_is_spatial_only_and_symmetric() {
        let f = build_glpf(dims(8, 6, 4, 2), 2.0).unwrap();
        assert_eq!(f.gain(3, 2, 0, 0), f.gain(3, 2, 3, 1));
        assert!(f.asymmetry() < 1e-7);
    }

    #[test]
    fn identity_filter() {
        let z = random_gaussian(dims(8, 8, 4, 2), &mut Rng::new(1)).unwrap();
        let out = apply_filter(&z, &SpectralFilter::ones(z.dims())).unwrap();
        assert!(out.rel_l2(&z).unwrap() < 1e-5);
    }

    #[test]
    fn dc_filter_extracts_channel_mean() {
        let d = dims(8, 4, 3, 2);
        let z = random_gaussian(d, &mut Rng::new(2)).unwrap();
        let mut gains = vec![0.0f32; d.len()];
        gains[0] = 1.0;
        gains[1] = 1.0;
        let f = SpectralFilter::custom(d, gains).unwrap();
        let out = apply_filter(&z, &f).unwrap();
        for c in 0..2 {
            let mean: f64 =
                z.data().iter().skip(c).step_by(2).map(|&v| v as f64).sum::<f64>() / d.cells() as f64;
            for v in out.data().iter().skip(c).step_by(2) {
                assert!((*v as f64 - mean).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn filter_is_linear() {
        let d = dims(6, 6, 4, 2);
        let z1 = random_gaussian(d, &mut Rng::new(10)).unwrap();
        let z2 = random_gaussian(d, &mut Rng::new(11)).unwrap();
        let f = build_glpf(d, 1.5).unwrap();
        let lhs = apply_filter(&z1.axpby(0.7, &z2, -1.3).unwrap(), &f).unwrap();
        let rhs = apply_filter(&z1, &f)
            .unwrap()
            .axpby(0.7, &apply_filter(&z2, &f).unwrap(), -1.3)
            .unwrap();
        assert!(lhs.rel_l2(&rhs).unwrap() < 1e-5);
    }

    #[test]
    fn custom_filter_validation() {
        let d = dims(4, 4, 1, 1);
        let mut gains = vec![0.5f32; d.len()];
        gains[1] = 1.5;
        assert!(SpectralFilter::custom(d, gains).is_err());
        let mut gains = vec![0.5f32; d.len()];
        gains[1] = 0.1;
        assert!(SpectralFilter::custom(d, gains).is_err());
    }

    #[test]
    fn dim_mismatch_errors() {
        let z = LatentTensor::zeros(dims(4, 4, 2, 1));
        let f = SpectralFilter::ones(dims(4, 4, 2, 2));
        assert!(matches!(apply_filter(&z, &f), Err(Error::Shape(_))));
        assert!(matches!(disentangle(&z, &f), Err(Error::Shape(_))));
    }

    #[test]
    fn disentangle_endpoints() {
        let z = random_gaussian(dims(8, 8, 2, 3), &mut Rng::new(5)).unwrap();
        let (v, g) = disentangle(&z, &SpectralFilter::ones(z.dims())).unwrap();
        assert!(v.rel_l2(&z).unwrap() < 1e-5);
        assert!(g.l2_norm() < 1e-5);
    }

    #[test]
    fn low_band_gain_of_structured_latent_beats_noise() {
        // A smooth moving blob stands in for a natural latent here.
        let d = dims(16, 16, 8, 3);
        let z0 = LatentTensor::from_fn(d, |w, h, l, c| {
            let cx = 4.0 + l as f32;
            let r2 = (w as f32 - cx).powi(2) + (h as f32 - 8.0).powi(2);
            (-r2 / 8.0).exp() * (1.0 + c as f32 * 0.3) - 0.5
        });
        let eps = random_gaussian(d, &mut Rng::new(1)).unwrap();
        // Mean gain over bins whose folded frequency is (or is not) low on every axis.
        let band_mean = |f: &SpectralFilter, want_low: bool| {
            let mut acc = 0.0f64;
            let mut n = 0usize;
            for l in 0..d.l {
                for h in 0..d.h {
                    for w in 0..d.w {
                        let low = |k: usize, len: usize| (signed_freq(k, len).unsigned_abs() as usize) * 4 <= len / 2;
                        if (low(w, d.w) && low(h, d.h) && low(l, d.l)) == want_low {
                            for c in 0..d.c {
                                acc += f.gain(w, h, l, c) as f64;
                                n += 1;
                            }
                        }
                    }
                }
            }
            acc / n as f64
        };
        let ratio = |f: &SpectralFilter| band_mean(f, true) / band_mean(f, false);
        let asf = build_asf(&z0, NormMode::PerChannel).unwrap();
        let noise = build_asf(&eps, NormMode::PerChannel).unwrap();
        assert!(ratio(&asf) > 3.0 * ratio(&noise), "{} vs {}", ratio(&asf), ratio(&noise));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use crate::rng::Rng;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(100))]

            #[test]
            fn recombination(w in 1usize..=8, h in 1usize..=8, l in 1usize..=4, c in 1usize..=3,
                             seed in any::<u64>(), fseed in any::<u64>()) {
                let d = dims(w, h, l, c);
                let z = random_gaussian(d, &mut Rng::new(seed)).unwrap();
                let z0 = random_gaussian(d, &mut Rng::new(fseed)).unwrap();
                let f = match build_asf(&z0, NormMode::PerChannel) {
                    Ok(f) => f,
                    Err(_) => build_glpf(d, 1.0).unwrap(),
                };
                let (v, g) = disentangle(&z, &f).unwrap();
                prop_assert!((&v + &g).rel_l2(&z).unwrap() < 1e-5);
            }

            #[test]
            fn oracle_equivalence(w in 1usize..=4, h in 1usize..=4, l in 1usize..=3, c in 1usize..=2,
                                  seed in any::<u64>()) {
                let t = random_gaussian(dims(w, h, l, c), &mut Rng::new(seed)).unwrap();
                let s = dft3(&t);
                prop_assert!(rel_err(s.data(), &brute_dft(&t)) < 1e-5);
                prop_assert!(s.hermitian_residual() < 1e-5);
            }

            #[test]
            fn parseval(w in 1usize..=8, h in 1usize..=8, l in 1usize..=4, c in 1usize..=3, seed in any::<u64>()) {
                let t = random_gaussian(dims(w, h, l, c), &mut Rng::new(seed)).unwrap();
                let e = t.sum_sq();
                prop_assert!((dft3(&t).energy() - e).abs() <= 1e-5 * e);
            }

            #[test]
            fn symmetric_filters_give_real_output(w in 1usize..=8, h in 1usize..=8, l in 1usize..=4,
                                                  seed in any::<u64>(), sigma in 0.5f64..10.0) {
                let d = dims(w, h, l, 2);
                let z = random_gaussian(d, &mut Rng::new(seed)).unwrap();
                let z0 = random_gaussian(d, &mut Rng::new(seed ^ 1)).unwrap();
                // apply_filter refuses results whose imaginary residual exceeds the tolerance.
                prop_assert!(apply_filter(&z, &build_glpf(d, sigma).unwrap()).is_ok());
                if let Ok(f) = build_asf(&z0, NormMode::Global) {
                    prop_assert!(apply_filter(&z, &f).is_ok());
                }
            }
        }
    }
}

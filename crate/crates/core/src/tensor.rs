//! Dense 4D latent tensors.
//!
//! Dimensions are always reported as `(W, H, L, C)` but storage is frame-major:
//! the flat index of `(w, h, l, c)` is `((l * H + h) * W + w) * C + c`.

use std::ops::{Add, Sub};

use crate::error::{Error, Result};

/// Tensor extent `(W, H, L, C)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub w: usize,
    pub h: usize,
    pub l: usize,
    pub c: usize,
}

impl Dims {
    pub fn new(w: usize, h: usize, l: usize, c: usize) -> Result<Self> {
        let d = Dims { w, h, l, c };
        if w == 0 || h == 0 || l == 0 || c == 0 {
            return Err(Error::ZeroDim(d.to_array()));
        }
        Ok(d)
    }

    pub fn to_array(self) -> [usize; 4] {
        [self.w, self.h, self.l, self.c]
    }

    pub fn len(self) -> usize {
        self.w * self.h * self.l * self.c
    }

    pub fn is_empty(self) -> bool {
        self.len() == 0
    }

    /// Number of spatio-temporal cells `W * H * L`.
    pub fn cells(self) -> usize {
        self.w * self.h * self.l
    }

    #[inline]
    pub fn index(self, w: usize, h: usize, l: usize, c: usize) -> usize {
        ((l * self.h + h) * self.w + w) * self.c + c
    }

    #[inline]
    pub fn cell_index(self, w: usize, h: usize, l: usize) -> usize {
        (l * self.h + h) * self.w + w
    }

    pub fn with_channels(self, c: usize) -> Dims {
        Dims { c, ..self }
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{},{},{})", self.w, self.h, self.l, self.c)
    }
}

/// A real latent tensor such as `z`, `z0`, `z_v`, `z_g`, `z*` or `eps`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTensor {
    dims: Dims,
    data: Vec<f32>,
}

impl LatentTensor {
    pub fn from_vec(dims: Dims, data: Vec<f32>) -> Result<Self> {
        Dims::new(dims.w, dims.h, dims.l, dims.c)?;
        if data.len() != dims.len() {
            return Err(Error::LengthMismatch {
                dims: dims.to_array(),
                len: data.len(),
            });
        }
        Ok(LatentTensor { dims, data })
    }

    pub fn zeros(dims: Dims) -> Self {
        Self::filled(dims, 0.0)
    }

    pub fn filled(dims: Dims, value: f32) -> Self {
        LatentTensor {
            dims,
            data: vec![value; dims.len()],
        }
    }

    /// Builds a tensor by evaluating `f(w, h, l, c)` at every element.
    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for l in 0..dims.l {
            for h in 0..dims.h {
                for w in 0..dims.w {
                    for c in 0..dims.c {
                        data.push(f(w, h, l, c));
                    }
                }
            }
        }
        LatentTensor { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, w: usize, h: usize, l: usize, c: usize) -> f32 {
        self.data[self.dims.index(w, h, l, c)]
    }

    #[inline]
    pub fn set(&mut self, w: usize, h: usize, l: usize, c: usize, v: f32) {
        let i = self.dims.index(w, h, l, c);
        self.data[i] = v;
    }

    /// Index of the first non-finite element, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite())
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.first_non_finite() {
            Some(index) => Err(Error::NonFinite { index }),
            None => Ok(()),
        }
    }

    pub fn ensure_same_dims(&self, other: &LatentTensor, what: &str) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::Shape(format!(
                "{what}: {} vs {}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> LatentTensor {
        LatentTensor {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &LatentTensor, f: impl Fn(f32, f32) -> f32) -> Result<LatentTensor> {
        self.ensure_same_dims(other, "zip_map")?;
        Ok(LatentTensor {
            dims: self.dims,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scale(&self, s: f32) -> LatentTensor {
        self.map(|v| v * s)
    }

    /// `a * self + b * other`, accumulated in f64.
    pub fn axpby(&self, a: f64, other: &LatentTensor, b: f64) -> Result<LatentTensor> {
        self.zip_map(other, |x, y| (a * x as f64 + b * y as f64) as f32)
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|&v| (v as f64) * (v as f64)).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.sum_sq().sqrt()
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.data
            .iter()
            .map(|&v| {
                let d = v as f64 - m;
                d * d
            })
            .sum::<f64>()
            / self.data.len() as f64
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// `||self - other|| / ||other||`; absolute error when `other` is zero.
    pub fn rel_l2(&self, other: &LatentTensor) -> Result<f64> {
        self.ensure_same_dims(other, "rel_l2")?;
        let num: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| {
                let d = a as f64 - b as f64;
                d * d
            })
            .sum::<f64>()
            .sqrt();
        let den = other.l2_norm();
        Ok(if den > 0.0 { num / den } else { num })
    }

    pub fn max_abs_diff(&self, other: &LatentTensor) -> Result<f64> {
        self.ensure_same_dims(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a as f64 - b as f64).abs())
            .fold(0.0, f64::max))
    }

    /// Zero-mean, unit-variance copy over the whole tensor.
    pub fn standardized(&self) -> LatentTensor {
        let m = self.mean();
        let sd = self.variance().sqrt();
        let sd = if sd > 0.0 { sd } else { 1.0 };
        self.map(|v| ((v as f64 - m) / sd) as f32)
    }

    /// One frame as a `(W, H, 1, C)` tensor.
    pub fn frame(&self, l: usize) -> LatentTensor {
        let d = self.dims;
        let n = d.w * d.h * d.c;
        LatentTensor {
            dims: Dims { l: 1, ..d },
            data: self.data[l * n..(l + 1) * n].to_vec(),
        }
    }
}

impl Add for &LatentTensor {
    type Output = LatentTensor;

    fn add(self, rhs: &LatentTensor) -> LatentTensor {
        self.zip_map(rhs, |a, b| a + b)
            .expect("tensor addition requires matching dims")
    }
}

impl Sub for &LatentTensor {
    type Output = LatentTensor;

    fn sub(self, rhs: &LatentTensor) -> LatentTensor {
        self.zip_map(rhs, |a, b| a - b)
            .expect("tensor subtraction requires matching dims")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_frame_major() {
        let d = Dims::new(3, 2, 2, 2).unwrap();
        assert_eq!(d.index(0, 0, 0, 1), 1);
        assert_eq!(d.index(1, 0, 0, 0), 2);
        assert_eq!(d.index(0, 1, 0, 0), 6);
        assert_eq!(d.index(0, 0, 1, 0), 12);
        let t = LatentTensor::from_fn(d, |w, h, l, c| (((l * 2 + h) * 3 + w) * 2 + c) as f32);
        for (i, &v) in t.data().iter().enumerate() {
            assert_eq!(v, i as f32);
        }
    }

    #[test]
    fn zero_dim_rejected() {
        assert!(matches!(Dims::new(0, 1, 1, 1), Err(Error::ZeroDim(_))));
        let d = Dims { w: 2, h: 2, l: 1, c: 1 };
        assert!(LatentTensor::from_vec(d, vec![0.0; 3]).is_err());
    }

    #[test]
    fn standardized_moments() {
        let d = Dims::new(4, 4, 2, 1).unwrap();
        let t = LatentTensor::from_fn(d, |w, h, l, _| (w * 3 + h + l * 7) as f32);
        let s = t.standardized();
        assert!(s.mean().abs() < 1e-6);
        assert!((s.variance() - 1.0).abs() < 1e-5);
    }
}

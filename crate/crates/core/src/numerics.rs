//! Dense small-grid arithmetic, seeded randomness and scalar helpers.
//!
//! Every image-valued quantity in the engine (noisy states, clean views,
//! noise draws, predicted noise) is an [`ImageGrid`]: a row-major
//! `height x width x channels` buffer of `f64`. Clean images use the
//! diffusion convention of values in `[-1, 1]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// PSNR reported for identical grids.
pub const PSNR_CAP_DB: f64 = 99.0;

/// Peak-to-peak range of images in the `[-1, 1]` convention.
pub const UNIT_RANGE_PEAK: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridDims {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl GridDims {
    pub fn new(height: usize, width: usize, channels: usize) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(invalid(
                "dims",
                format!("all dimensions must be positive, got {height}x{width}x{channels}"),
            ));
        }
        Ok(Self {
            height,
            width,
            channels,
        })
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for GridDims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageGrid {
    dims: GridDims,
    data: Vec<f64>,
}

impl ImageGrid {
    pub fn zeros(dims: GridDims) -> Self {
        Self::filled(dims, 0.0)
    }

    pub fn filled(dims: GridDims, value: f64) -> Self {
        Self {
            dims,
            data: vec![value; dims.len()],
        }
    }

    pub fn from_vec(dims: GridDims, data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(invalid(
                "data",
                format!("expected {} values for {dims}, got {}", dims.len(), data.len()),
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(invalid("data", format!("non-finite value at index {pos}")));
        }
        Ok(Self { dims, data })
    }

    pub fn from_fn(dims: GridDims, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for row in 0..dims.height {
            for col in 0..dims.width {
                for ch in 0..dims.channels {
                    data.push(f(row, col, ch));
                }
            }
        }
        Self { dims, data }
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.dims.width + col) * self.dims.channels + ch
    }

    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[self.index(row, col, ch)]
    }

    pub fn set(&mut self, row: usize, col: usize, ch: usize, value: f64) {
        let i = self.index(row, col, ch);
        self.data[i] = value;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        self.map(|v| v * factor)
    }

    pub fn clamped(&self, lo: f64, hi: f64) -> Self {
        self.map(|v| v.clamp(lo, hi))
    }

    /// `self += coeff * other`, shapes assumed equal.
    pub fn add_scaled(&mut self, coeff: f64, other: &ImageGrid) {
        debug_assert_eq!(self.dims, other.dims);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += coeff * b;
        }
    }

    pub fn squared_distance(&self, other: &ImageGrid) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    pub fn l2_distance(&self, other: &ImageGrid) -> f64 {
        self.squared_distance(other).sqrt()
    }

    pub fn linf_distance(&self, other: &ImageGrid) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_same_shape(&self, other: &ImageGrid, index: usize) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::ShapeMismatch {
                index,
                expected: self.dims.to_string(),
                found: other.dims.to_string(),
            });
        }
        Ok(())
    }
}

/// Deterministic random stream identified by `(seed, stream)`.
///
/// Backed by ChaCha8, whose output is specified bit-for-bit, so identical
/// `(seed, stream)` pairs replay identically on every platform.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn index(&mut self, len: usize) -> usize {
        self.rng.random_range(0..len)
    }
}

/// Grid of i.i.d. standard-normal draws, advancing `rng`.
pub fn sample_standard_normal(rng: &mut SeededRng, dims: GridDims) -> ImageGrid {
    let data = (0..dims.len()).map(|_| rng.standard_normal()).collect();
    ImageGrid { dims, data }
}

/// Elementwise `sum_i coeffs[i] * grids[i]`.
pub fn axpy_grids(coeffs: &[f64], grids: &[&ImageGrid]) -> Result<ImageGrid> {
    if coeffs.len() != grids.len() {
        return Err(invalid(
            "coeffs",
            format!("{} coefficients for {} grids", coeffs.len(), grids.len()),
        ));
    }
    let first = grids
        .first()
        .ok_or_else(|| invalid("grids", "at least one grid is required"))?;
    let mut out = ImageGrid::zeros(first.dims);
    for (i, (&c, g)) in coeffs.iter().zip(grids).enumerate() {
        first.check_same_shape(g, i)?;
        out.add_scaled(c, g);
    }
    Ok(out)
}

pub fn mse(a: &ImageGrid, b: &ImageGrid) -> Result<f64> {
    a.check_same_shape(b, 1)?;
    Ok(a.squared_distance(b) / a.len() as f64)
}

/// `10 log10(peak^2 / mse)`, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &ImageGrid, b: &ImageGrid, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(invalid("peak", format!("must be positive, got {peak}")));
    }
    let err = mse(a, b)?;
    if err == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / err).log10()).min(PSNR_CAP_DB))
}

/// `log(sum(exp(xs)))` without overflow; `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Normalizes log-weights in place into probabilities. Returns `false` when
/// every entry was `-inf` (nothing to normalize).
pub(crate) fn normalize_log_weights(log_w: &[f64], out: &mut Vec<f64>) -> bool {
    out.clear();
    let lse = log_sum_exp(log_w);
    if !lse.is_finite() {
        return false;
    }
    out.extend(log_w.iter().map(|lw| (lw - lse).exp()));
    true
}

//! Distortion vectors and the differentiable circular A-line warp.
//!
//! Warp convention used everywhere in this crate: a distortion vector `d`
//! maps an original frame `O` to a distorted frame `D` by sampling
//! `D[i] = O[i + d_i]` with circular linear interpolation. Correction
//! applies `-d`, the first-order inverse, which is exact for constant
//! shifts.

mod io;

pub use io::{load_vectors, save_vectors};

use crate::error::{Error, Result};
use crate::frames::BScanFrame;
use crate::numerics::{Real, RngState, Tensor2};

/// Per-A-line circular shift amounts, in A-line units.
///
/// Shifts are canonical modulo N: construction rejects magnitudes above
/// N/2, and [`compose_cumulative`] wraps back into `(-N/2, N/2]`, which
/// denotes the same circular warp.
#[derive(Debug, Clone, PartialEq)]
pub struct DistortionVector<T = f32> {
    shifts: Vec<T>,
}

impl<T: Real> DistortionVector<T> {
    pub fn new(shifts: Vec<T>) -> Result<Self> {
        if shifts.is_empty() {
            return Err(Error::Data("distortion vector must be non-empty".into()));
        }
        let half = T::from_usize(shifts.len()) / T::from_f64(2.0);
        for (i, &s) in shifts.iter().enumerate() {
            if !s.is_finite() {
                return Err(Error::Data(format!("non-finite shift at index {i}")));
            }
            if s.abs() > half {
                return Err(Error::Data(format!(
                    "shift {} at index {i} exceeds N/2 = {}",
                    s.to_f64(),
                    half.to_f64()
                )));
            }
        }
        Ok(DistortionVector { shifts })
    }

    pub fn zeros(n: usize) -> Self {
        DistortionVector {
            shifts: vec![T::ZERO; n],
        }
    }

    /// Deterministic sinusoid mixture `d_i = Σ_k a_k sin(2π f_k i/N + φ_k)`,
    /// clamped to the canonical range by construction rules (errors if the
    /// mixture exceeds N/2).
    pub fn from_sinusoids(components: &[(T, u32, T)], n: usize) -> Result<Self> {
        let mut shifts = vec![T::ZERO; n];
        let tau = T::from_f64(std::f64::consts::TAU);
        let n_t = T::from_usize(n);
        for &(amp, freq, phase) in components {
            let f_t = T::from_usize(freq as usize);
            for (i, s) in shifts.iter_mut().enumerate() {
                let arg = tau * f_t * T::from_usize(i) / n_t + phase;
                *s += amp * arg.sin();
            }
        }
        DistortionVector::new(shifts)
    }

    pub fn len(&self) -> usize {
        self.shifts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shifts.is_empty()
    }

    pub fn shifts(&self) -> &[T] {
        &self.shifts
    }

    pub fn get(&self, i: usize) -> T {
        self.shifts[i]
    }

    pub fn max_abs(&self) -> T {
        self.shifts.iter().fold(T::ZERO, |m, &v| m.max(v.abs()))
    }

    pub fn mean_abs(&self) -> T {
        self.shifts.iter().map(|&v| v.abs()).sum::<T>() / T::from_usize(self.len())
    }

    pub fn negated(&self) -> DistortionVector<T> {
        DistortionVector {
            shifts: self.shifts.iter().map(|&v| -v).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> DistortionVector<U> {
        DistortionVector {
            shifts: self
                .shifts
                .iter()
                .map(|&v| U::from_f64(v.to_f64()))
                .collect(),
        }
    }

    /// Constant shift vector.
    pub fn constant(n: usize, value: T) -> Result<Self> {
        DistortionVector::new(vec![value; n])
    }
}

/// Configuration of the synthetic ground-truth distortion generator.
#[derive(Debug, Clone)]
pub struct DistortionGenConfig {
    /// Number of sinusoid components.
    pub n_components: usize,
    /// Maximum spatial frequency in cycles per revolution.
    pub max_frequency: u32,
    /// Target peak shift magnitude `d_max`, in A-lines.
    pub max_amplitude: f64,
    /// Resample until `i + d_i` is strictly increasing around the circle.
    pub enforce_monotone: bool,
}

impl Default for DistortionGenConfig {
    fn default() -> Self {
        DistortionGenConfig {
            n_components: 3,
            max_frequency: 3,
            max_amplitude: 6.0,
            enforce_monotone: false,
        }
    }
}

impl DistortionGenConfig {
    pub fn validate(&self, n_alines: usize) -> Result<()> {
        if self.n_components == 0 {
            return Err(Error::Config("n_components must be >= 1".into()));
        }
        if self.max_frequency == 0 {
            return Err(Error::Config("max_frequency must be >= 1".into()));
        }
        if self.max_amplitude <= 0.0 {
            return Err(Error::Config("max_amplitude must be > 0".into()));
        }
        if self.max_amplitude > n_alines as f64 / 2.0 {
            return Err(Error::Config(format!(
                "max_amplitude {} exceeds N/2 = {}",
                self.max_amplitude,
                n_alines as f64 / 2.0
            )));
        }
        Ok(())
    }
}

const MONOTONE_RETRIES: usize = 100;

/// Draw a smooth random distortion vector: a mixture of `n_components`
/// sinusoids with integer frequencies in `1..=max_frequency`, uniform
/// phases, and amplitudes rescaled so `max_i |d_i|` equals `max_amplitude`
/// exactly.
pub fn generate_gt_vector(
    cfg: &DistortionGenConfig,
    n_alines: usize,
    rng: &mut RngState,
) -> Result<DistortionVector<f32>> {
    cfg.validate(n_alines)?;
    for _attempt in 0..MONOTONE_RETRIES {
        let mut shifts = vec![0.0f64; n_alines];
        for _ in 0..cfg.n_components {
            let amp = rng.next_f64();
            let freq = 1 + rng.next_usize(cfg.max_frequency as usize) as u32;
            let phase = rng.uniform(0.0, std::f64::consts::TAU);
            for (i, s) in shifts.iter_mut().enumerate() {
                let arg =
                    std::f64::consts::TAU * freq as f64 * i as f64 / n_alines as f64 + phase;
                *s += amp * arg.sin();
            }
        }
        let peak = shifts.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        if peak == 0.0 {
            continue; // degenerate draw, resample
        }
        let scale = cfg.max_amplitude / peak;
        for s in shifts.iter_mut() {
            *s *= scale;
        }
        if cfg.enforce_monotone && !is_circularly_monotone(&shifts) {
            continue;
        }
        let shifts_f32: Vec<f32> = shifts.iter().map(|&v| v as f32).collect();
        return DistortionVector::new(shifts_f32);
    }
    Err(Error::Generation(format!(
        "monotone constraint unsatisfiable after {MONOTONE_RETRIES} retries \
         (d_max {} too large for frequency content)",
        cfg.max_amplitude
    )))
}

/// `i + d_i` strictly increasing around the circle, i.e. the scan never
/// reverses: `d_{i+1} - d_i > -1` for every consecutive pair including the
/// wrap from the last A-line back to the first.
fn is_circularly_monotone(shifts: &[f64]) -> bool {
    let n = shifts.len();
    (0..n).all(|i| shifts[(i + 1) % n] - shifts[i] > -1.0)
}

/// Sample `frame` at fractional circular row positions: output A-line `i`
/// is `(1-w)·frame[⌊i+d_i⌋ mod N] + w·frame[(⌊i+d_i⌋+1) mod N]` with
/// `w = frac(i + d_i)`. Integer shifts reduce to an exact row permutation.
pub fn warp_frame<T: Real>(
    frame: &BScanFrame<T>,
    d: &DistortionVector<T>,
) -> Result<BScanFrame<T>> {
    let n = frame.n_alines();
    if d.len() != n {
        return Err(Error::DimMismatch {
            op: "warp_frame",
            left: (n, frame.n_points()),
            right: (d.len(), 0),
        });
    }
    let m = frame.n_points();
    let mut out = Tensor2::zeros(n, m);
    for i in 0..n {
        let (lo, hi, w) = sample_indices(i, d.get(i), n);
        let row_lo = frame.pixels().row(lo);
        let out_row = out.row_mut(i);
        if w == T::ZERO {
            out_row.copy_from_slice(row_lo);
        } else {
            let row_hi = frame.pixels().row(hi);
            let one_w = T::ONE - w;
            for ((o, &a), &b) in out_row.iter_mut().zip(row_lo).zip(row_hi) {
                *o = one_w * a + w * b;
            }
        }
    }
    Ok(BScanFrame::from_tensor_unchecked(out))
}

/// Gradient of [`warp_frame`] with respect to the shift vector:
/// `∂out_i/∂d_i = frame[hi] − frame[lo]`, contracted with the incoming
/// per-pixel gradient. One-sided (right) derivative at integer shifts.
pub fn warp_frame_backward<T: Real>(
    frame: &BScanFrame<T>,
    d: &DistortionVector<T>,
    grad_out: &Tensor2<T>,
) -> Vec<T> {
    let n = frame.n_alines();
    debug_assert_eq!(d.len(), n);
    debug_assert_eq!(grad_out.shape(), (n, frame.n_points()));
    let mut grad_d = vec![T::ZERO; n];
    for (i, g) in grad_d.iter_mut().enumerate() {
        let (lo, hi, _w) = sample_indices(i, d.get(i), n);
        let row_lo = frame.pixels().row(lo);
        let row_hi = frame.pixels().row(hi);
        let g_row = grad_out.row(i);
        let mut acc = T::ZERO;
        for ((&gv, &a), &b) in g_row.iter().zip(row_lo).zip(row_hi) {
            acc += gv * (b - a);
        }
        *g = acc;
    }
    grad_d
}

#[inline]
fn sample_indices<T: Real>(i: usize, shift: T, n: usize) -> (usize, usize, T) {
    let pos = T::from_usize(i) + shift;
    let floor = pos.floor();
    let w = pos - floor;
    let lo = (floor.to_f64() as i64).rem_euclid(n as i64) as usize;
    let hi = (lo + 1) % n;
    (lo, hi, w)
}

/// Undo a distortion to first order by warping with `-d`; exact for
/// constant shifts.
pub fn correct_frame<T: Real>(
    frame: &BScanFrame<T>,
    d: &DistortionVector<T>,
) -> Result<BScanFrame<T>> {
    warp_frame(frame, &d.negated())
}

/// Linear interpolation of a vector at a fractional circular index.
fn lerp_circular<T: Real>(values: &[T], x: T) -> T {
    let n = values.len();
    let floor = x.floor();
    let w = x - floor;
    let lo = (floor.to_f64() as i64).rem_euclid(n as i64) as usize;
    let hi = (lo + 1) % n;
    (T::ONE - w) * values[lo] + w * values[hi]
}

/// Fold a cumulative shift into the canonical range `(-N/2, N/2]`; the
/// folded value denotes the same circular warp.
fn wrap_half<T: Real>(v: T, n: usize) -> T {
    let n_t = T::from_usize(n);
    let half = n_t / T::from_f64(2.0);
    let mut w = v - (v / n_t).floor() * n_t; // v mod N, in [0, N)
    if w > half {
        w -= n_t;
    }
    w
}

/// Update the running cumulative distortion for a stream: resample the
/// previous cumulative field through the new per-frame mapping and add it,
/// `c_n[i] = decay · c_{n-1}[i + d_n[i]] + d_n[i]`. A `decay` below 1 bounds
/// drift from accumulated prediction error.
pub fn compose_cumulative<T: Real>(
    c_prev: &DistortionVector<T>,
    d_n: &DistortionVector<T>,
    decay: T,
) -> Result<DistortionVector<T>> {
    if c_prev.len() != d_n.len() {
        return Err(Error::DimMismatch {
            op: "compose_cumulative",
            left: (c_prev.len(), 1),
            right: (d_n.len(), 1),
        });
    }
    if decay < T::ZERO || decay > T::ONE {
        return Err(Error::Config(format!(
            "decay must be in [0, 1], got {decay}"
        )));
    }
    let n = c_prev.len();
    let shifts = (0..n)
        .map(|i| {
            let pos = T::from_usize(i) + d_n.get(i);
            let carried = decay * lerp_circular(c_prev.shifts(), pos);
            wrap_half(carried + d_n.get(i), n)
        })
        .collect();
    DistortionVector::new(shifts)
}

//! B-scan frames, sequences, and the synthetic vessel phantom.
//!
//! A B-scan is N A-lines by M depth points with intensities in `[0, 1]`.
//! The A-line index is circumferential: the probe rotates, so all index
//! arithmetic on it wraps mod N throughout the crate.

mod io;

pub use io::{load_sequence, save_sequence};

use crate::error::{Error, Result};
use crate::numerics::{Real, RngState, Tensor2};

/// One OCT B-scan: row `i` is A-line `i`, circular in `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct BScanFrame<T = f32> {
    pixels: Tensor2<T>,
}

impl<T: Real> BScanFrame<T> {
    pub const MIN_ALINES: usize = 8;
    pub const MIN_POINTS: usize = 4;

    /// Wrap a pixel tensor, enforcing the frame invariants: at least 8x4 and
    /// every intensity in `[0, 1]`.
    pub fn new(pixels: Tensor2<T>) -> Result<Self> {
        if pixels.rows() < Self::MIN_ALINES || pixels.cols() < Self::MIN_POINTS {
            return Err(Error::Data(format!(
                "frame must be at least {}x{}, got {}x{}",
                Self::MIN_ALINES,
                Self::MIN_POINTS,
                pixels.rows(),
                pixels.cols()
            )));
        }
        if pixels
            .data()
            .iter()
            .any(|&v| !v.is_finite() || v < T::ZERO || v > T::ONE)
        {
            return Err(Error::Data(
                "frame intensities must be finite and in [0, 1]".into(),
            ));
        }
        Ok(BScanFrame { pixels })
    }

    /// For outputs whose range is guaranteed by construction (convex
    /// combinations of valid frames).
    pub(crate) fn from_tensor_unchecked(pixels: Tensor2<T>) -> Self {
        BScanFrame { pixels }
    }

    pub fn n_alines(&self) -> usize {
        self.pixels.rows()
    }

    pub fn n_points(&self) -> usize {
        self.pixels.cols()
    }

    pub fn pixels(&self) -> &Tensor2<T> {
        &self.pixels
    }

    pub fn aline(&self, i: usize) -> &[T] {
        self.pixels.row(i)
    }

    /// Circularly roll A-lines: output row `i` is input row `(i + k) mod N`.
    pub fn roll_alines(&self, k: i64) -> BScanFrame<T> {
        let n = self.n_alines() as i64;
        let mut out = Tensor2::zeros(self.n_alines(), self.n_points());
        for i in 0..self.n_alines() {
            let src = (i as i64 + k).rem_euclid(n) as usize;
            out.row_mut(i).copy_from_slice(self.pixels.row(src));
        }
        BScanFrame { pixels: out }
    }

    pub fn cast<U: Real>(&self) -> BScanFrame<U> {
        BScanFrame {
            pixels: self.pixels.cast(),
        }
    }
}

/// An ordered run of B-scans with a shared shape.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence<T = f32> {
    frames: Vec<BScanFrame<T>>,
}

impl<T: Real> FrameSequence<T> {
    pub fn new(frames: Vec<BScanFrame<T>>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::Data("sequence must contain at least one frame".into()))?;
        let shape = (first.n_alines(), first.n_points());
        for (n, f) in frames.iter().enumerate() {
            if (f.n_alines(), f.n_points()) != shape {
                return Err(Error::DimMismatch {
                    op: "FrameSequence::new",
                    left: shape,
                    right: (f.n_alines(), f.n_points()),
                });
            }
            let _ = n;
        }
        Ok(FrameSequence { frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn n_alines(&self) -> usize {
        self.frames[0].n_alines()
    }

    pub fn n_points(&self) -> usize {
        self.frames[0].n_points()
    }

    pub fn frame(&self, n: usize) -> &BScanFrame<T> {
        &self.frames[n]
    }

    pub fn frames(&self) -> &[BScanFrame<T>] {
        &self.frames
    }

    pub fn iter(&self) -> std::slice::Iter<'_, BScanFrame<T>> {
        self.frames.iter()
    }
}

/// Parameters of the synthetic vessel phantom.
///
/// The phantom is a bright circumferential band whose thickness and
/// brightness vary sinusoidally around the circumference, so rotation is
/// identifiable, plus optional multiplicative speckle.
#[derive(Debug, Clone)]
pub struct PhantomConfig {
    pub n_alines: usize,
    pub n_points: usize,
    /// Band center as a fraction of depth, in (0, 1).
    pub ring_center_depth: f64,
    /// Band half-width scale as a fraction of depth, in (0, 1).
    pub ring_thickness: f64,
    /// Number of sinusoidal lobes around the circumference.
    pub n_angular_features: usize,
    /// Depth of the angular modulation, in [0, 1].
    pub feature_contrast: f64,
    /// Blend weight of the multiplicative exponential speckle, in [0, 1].
    pub speckle_strength: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            n_alines: 256,
            n_points: 64,
            ring_center_depth: 0.45,
            ring_thickness: 0.12,
            n_angular_features: 5,
            feature_contrast: 0.8,
            speckle_strength: 0.1,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_alines < BScanFrame::<f32>::MIN_ALINES
            || self.n_points < BScanFrame::<f32>::MIN_POINTS
        {
            return Err(Error::Config(format!(
                "phantom size {}x{} below minimum 8x4",
                self.n_alines, self.n_points
            )));
        }
        for (name, v) in [
            ("ring_center_depth", self.ring_center_depth),
            ("ring_thickness", self.ring_thickness),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("{name} must be in (0, 1), got {v}")));
            }
        }
        if self.n_angular_features == 0 {
            return Err(Error::Config("n_angular_features must be >= 1".into()));
        }
        for (name, v) in [
            ("feature_contrast", self.feature_contrast),
            ("speckle_strength", self.speckle_strength),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

/// Generate one phantom frame with a random angular phase.
///
/// Draw order: one uniform for the phase, then `N * M` exponentials for the
/// speckle when `speckle_strength > 0`.
pub fn generate_phantom(cfg: &PhantomConfig, rng: &mut RngState) -> Result<BScanFrame<f32>> {
    let phase = rng.uniform(0.0, std::f64::consts::TAU);
    generate_phantom_with_phase(cfg, phase, rng)
}

/// Generate one phantom frame with a fixed angular phase; phase is shared
/// across a sequence so consecutive frames stay morphologically consistent.
pub fn generate_phantom_with_phase(
    cfg: &PhantomConfig,
    phase: f64,
    rng: &mut RngState,
) -> Result<BScanFrame<f32>> {
    cfg.validate()?;
    let (n, m) = (cfg.n_alines, cfg.n_points);
    let center = cfg.ring_center_depth * m as f64;
    let base_sigma = (cfg.ring_thickness * m as f64 / 2.0).max(0.5);
    let k = cfg.n_angular_features as f64;
    let c = cfg.feature_contrast;
    let s = cfg.speckle_strength;

    let mut pixels = Tensor2::zeros(n, m);
    for i in 0..n {
        let theta = std::f64::consts::TAU * i as f64 / n as f64;
        // lobe in [0, 1] with exactly n_angular_features maxima per turn
        let lobe = 0.5 * (1.0 + (k * theta + phase).sin());
        let intensity = 1.0 - c * (1.0 - lobe);
        let sigma = base_sigma * (1.0 + c * (lobe - 0.5));
        let row = pixels.row_mut(i);
        for (j, px) in row.iter_mut().enumerate() {
            let d = (j as f64 - center) / sigma;
            *px = (intensity * (-0.5 * d * d).exp()) as f32;
        }
    }
    if s > 0.0 {
        for v in pixels.data_mut() {
            let noise = (1.0 - s) + s * rng.next_exp();
            *v = (*v as f64 * noise).clamp(0.0, 1.0) as f32;
        }
    }
    BScanFrame::new(pixels)
}

/// Generate a sequence of phantom frames sharing one angular phase, with
/// fresh speckle per frame.
pub fn generate_phantom_sequence(
    cfg: &PhantomConfig,
    n_frames: usize,
    rng: &mut RngState,
) -> Result<FrameSequence<f32>> {
    if n_frames == 0 {
        return Err(Error::Config("sequence needs at least one frame".into()));
    }
    let phase = rng.uniform(0.0, std::f64::consts::TAU);
    let frames = (0..n_frames)
        .map(|_| generate_phantom_with_phase(cfg, phase, rng))
        .collect::<Result<Vec<_>>>()?;
    FrameSequence::new(frames)
}

/// Mean over depth per A-line, producing a (frames x A-lines) surface map.
pub fn en_face_projection<T: Real>(seq: &FrameSequence<T>) -> Tensor2<T> {
    let (f, n, m) = (seq.len(), seq.n_alines(), seq.n_points());
    let m_t = T::from_usize(m);
    let mut out = Tensor2::zeros(f, n);
    for (fi, frame) in seq.iter().enumerate() {
        let row = out.row_mut(fi);
        for (i, cell) in row.iter_mut().enumerate() {
            *cell = frame.aline(i).iter().copied().sum::<T>() / m_t;
        }
    }
    out
}

/// Encode three equal-shaped frames into the R, G, B channels of a binary
/// PPM (P6), each intensity scaled by 255 and rounded half-up.
pub fn rgb_overlay<T: Real>(
    f1: &BScanFrame<T>,
    f2: &BScanFrame<T>,
    f3: &BScanFrame<T>,
    path: &std::path::Path,
) -> Result<()> {
    io::write_ppm(f1, f2, f3, path)
}

/// Import a binary 8-bit PGM (P5) as a frame; height maps to A-lines,
/// width to depth points, intensities scaled to [0, 1] by 1/255.
pub fn import_pgm(path: &std::path::Path) -> Result<BScanFrame<f32>> {
    io::read_pgm(path)
}

//! Streaming correction of acquired sequences and latency reporting.
//!
//! Frames are consumed strictly in order, one pass, with bounded state:
//! the previous corrected frame and the running cumulative distortion
//! vector. For each new frame the network predicts the per-frame
//! distortion against the reference frame, the cumulative vector folds it
//! in, and the frame is corrected with the cumulative vector.

use std::time::Instant;

use crate::distortion::{compose_cumulative, correct_frame, DistortionVector};
use crate::error::{Error, Result};
use crate::frames::{BScanFrame, FrameSequence};
use crate::model::{forward_tokens, tokenize, ModelParams};
use crate::numerics::Real;

/// Which frame the per-frame prediction uses as its reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RefMode {
    /// Previous corrected frame (default): prevents distortion chaining.
    #[default]
    Corrected,
    /// Previous raw frame, for ablation.
    Raw,
}

/// Streaming-correction settings.
#[derive(Debug, Clone, Copy)]
pub struct CorrectionOptions<T> {
    /// Weight on the carried-over cumulative vector, in [0, 1]. 1 is pure
    /// accumulation; smaller values bound drift from prediction errors.
    pub decay: T,
    pub ref_mode: RefMode,
}

impl<T: Real> Default for CorrectionOptions<T> {
    fn default() -> Self {
        CorrectionOptions {
            decay: T::ONE,
            ref_mode: RefMode::Corrected,
        }
    }
}

/// Predict the distortion of `cur` relative to `prev` (the first output
/// vector of the network; the second is discarded at inference time).
pub fn predict_vector<T: Real>(
    params: &ModelParams<T>,
    prev: &BScanFrame<T>,
    cur: &BScanFrame<T>,
) -> Result<DistortionVector<T>> {
    let tokens = tokenize(prev, cur)?;
    let (vec1, _vec2, _) = forward_tokens(params, tokens, false)?;
    Ok(vec1)
}

/// Running state of one correction stream.
#[derive(Debug, Clone)]
pub struct CorrectionState<T> {
    cumulative: DistortionVector<T>,
    decay: T,
    frame_counter: usize,
}

impl<T: Real> CorrectionState<T> {
    pub fn new(n_alines: usize, decay: T) -> Self {
        CorrectionState {
            cumulative: DistortionVector::zeros(n_alines),
            decay,
            frame_counter: 0,
        }
    }

    pub fn cumulative(&self) -> &DistortionVector<T> {
        &self.cumulative
    }

    pub fn frames_seen(&self) -> usize {
        self.frame_counter
    }

    /// Fold one per-frame prediction into the cumulative vector and correct
    /// the frame with it.
    pub fn step(
        &mut self,
        frame: &BScanFrame<T>,
        per_frame: &DistortionVector<T>,
    ) -> Result<BScanFrame<T>> {
        self.cumulative = compose_cumulative(&self.cumulative, per_frame, self.decay)?;
        self.frame_counter += 1;
        correct_frame(frame, &self.cumulative)
    }
}

/// Correct a full sequence with model predictions. The first frame passes
/// through unchanged. Returns the corrected sequence and the cumulative
/// vector applied to each frame (a zero vector for the first).
pub fn correct_sequence<T: Real>(
    params: &ModelParams<T>,
    seq: &FrameSequence<T>,
    options: CorrectionOptions<T>,
) -> Result<(FrameSequence<T>, Vec<DistortionVector<T>>)> {
    let n = seq.n_alines();
    let mut corrected = Vec::with_capacity(seq.len());
    let mut vectors = Vec::with_capacity(seq.len());
    corrected.push(seq.frame(0).clone());
    vectors.push(DistortionVector::zeros(n));
    let mut state = CorrectionState::new(n, options.decay);
    for idx in 1..seq.len() {
        let reference = match options.ref_mode {
            RefMode::Corrected => &corrected[idx - 1],
            RefMode::Raw => seq.frame(idx - 1),
        };
        let predicted = predict_vector(params, reference, seq.frame(idx))?;
        let fixed = state.step(seq.frame(idx), &predicted)?;
        corrected.push(fixed);
        vectors.push(state.cumulative().clone());
    }
    Ok((FrameSequence::new(corrected)?, vectors))
}

/// Correct a sequence with externally supplied per-frame vectors (one per
/// frame after the first) instead of model predictions. This is the oracle
/// path used to measure how much of the achievable correction a trained
/// model recovers.
pub fn correct_sequence_with_vectors<T: Real>(
    seq: &FrameSequence<T>,
    step_vectors: &[DistortionVector<T>],
    decay: T,
) -> Result<(FrameSequence<T>, Vec<DistortionVector<T>>)> {
    if step_vectors.len() != seq.len() - 1 {
        return Err(Error::DimMismatch {
            op: "correct_sequence_with_vectors",
            left: (seq.len() - 1, 1),
            right: (step_vectors.len(), 1),
        });
    }
    let n = seq.n_alines();
    let mut corrected = Vec::with_capacity(seq.len());
    let mut vectors = Vec::with_capacity(seq.len());
    corrected.push(seq.frame(0).clone());
    vectors.push(DistortionVector::zeros(n));
    let mut state = CorrectionState::new(n, decay);
    for (idx, d) in step_vectors.iter().enumerate() {
        let fixed = state.step(seq.frame(idx + 1), d)?;
        corrected.push(fixed);
        vectors.push(state.cumulative().clone());
    }
    Ok((FrameSequence::new(corrected)?, vectors))
}

/// Mean and population standard deviation of a sample set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn from_samples(samples: &[f64]) -> Stat {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Stat {
            mean,
            std: var.sqrt(),
        }
    }
}

/// Per-frame latency breakdown.
///
/// `prepost` covers tokenization, cumulative-vector update, and the
/// correcting warp; `inference` is the network forward pass; `total` is
/// their per-frame sum. `fps.mean` is defined as `1000 / total.mean`, and
/// `fps.std` is the spread of the per-frame instantaneous rates.
#[derive(Debug, Clone)]
pub struct TimingReport {
    pub prepost_ms: Stat,
    pub inference_ms: Stat,
    pub total_ms: Stat,
    pub fps: Stat,
}

impl TimingReport {
    pub const CATEGORIES: [&'static str; 4] = [
        "pre_post_processing",
        "model_inference",
        "total_per_frame",
        "frames_per_second",
    ];

    fn rows(&self) -> [(&'static str, &Stat); 4] {
        [
            (Self::CATEGORIES[0], &self.prepost_ms),
            (Self::CATEGORIES[1], &self.inference_ms),
            (Self::CATEGORIES[2], &self.total_ms),
            (Self::CATEGORIES[3], &self.fps),
        ]
    }

    /// Aligned text table with one row per category.
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<22} {:>12} {:>12}\n",
            "category", "mean", "std"
        ));
        for (name, stat) in self.rows() {
            let unit = if name == "frames_per_second" { "" } else { " ms" };
            out.push_str(&format!(
                "{:<22} {:>10.3}{} {:>10.3}{}\n",
                name, stat.mean, unit, stat.std, unit
            ));
        }
        out
    }

    /// CSV with header `category,mean_ms,std_ms`.
    pub fn csv(&self) -> String {
        let mut out = String::from("category,mean_ms,std_ms\n");
        for (name, stat) in self.rows() {
            out.push_str(&format!("{},{:.4},{:.4}\n", name, stat.mean, stat.std));
        }
        out
    }
}

/// Time the streaming-correction pipeline over `seq`, repeated `repeats`
/// times; every frame after the first contributes one sample per repeat.
pub fn bench<T: Real>(
    params: &ModelParams<T>,
    seq: &FrameSequence<T>,
    repeats: usize,
) -> Result<TimingReport> {
    if seq.len() < 2 {
        return Err(Error::Data("bench needs at least 2 frames".into()));
    }
    if repeats == 0 {
        return Err(Error::Config("repeats must be >= 1".into()));
    }
    let mut pre_samples = Vec::new();
    let mut inf_samples = Vec::new();
    for _ in 0..repeats {
        let mut state = CorrectionState::new(seq.n_alines(), T::ONE);
        let mut reference = seq.frame(0).clone();
        for idx in 1..seq.len() {
            let cur = seq.frame(idx);

            let t0 = Instant::now();
            let tokens = tokenize(&reference, cur)?;
            let pre_a = t0.elapsed();

            let t1 = Instant::now();
            let (vec1, _, _) = forward_tokens(params, tokens, false)?;
            let inf = t1.elapsed();

            let t2 = Instant::now();
            let fixed = state.step(cur, &vec1)?;
            let pre_b = t2.elapsed();

            reference = fixed;
            pre_samples.push((pre_a + pre_b).as_secs_f64() * 1e3);
            inf_samples.push(inf.as_secs_f64() * 1e3);
        }
    }
    let totals: Vec<f64> = pre_samples
        .iter()
        .zip(&inf_samples)
        .map(|(a, b)| a + b)
        .collect();
    let total = Stat::from_samples(&totals);
    let fps_samples: Vec<f64> = totals.iter().map(|&t| 1000.0 / t).collect();
    let fps = Stat {
        mean: 1000.0 / total.mean,
        std: Stat::from_samples(&fps_samples).std,
    };
    Ok(TimingReport {
        prepost_ms: Stat::from_samples(&pre_samples),
        inference_ms: Stat::from_samples(&inf_samples),
        total_ms: total,
        fps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::{generate_phantom, generate_phantom_sequence, PhantomConfig};
    use crate::model::{init_params, ModelConfig};
    use crate::numerics::RngState;

    fn tiny_model() -> ModelConfig {
        ModelConfig {
            n_alines: 16,
            n_points: 8,
            embed_dim: 16,
            n_heads: 2,
            n_blocks: 1,
            mlp_hidden: 16,
        }
    }

    fn phantom_cfg() -> PhantomConfig {
        PhantomConfig {
            n_alines: 16,
            n_points: 8,
            speckle_strength: 0.0,
            ..PhantomConfig::default()
        }
    }

    #[test]
    fn predict_is_deterministic_and_zero_for_zero_model() {
        let mut params = init_params::<f32>(&tiny_model(), &mut RngState::new(1)).unwrap();
        let f = generate_phantom(&phantom_cfg(), &mut RngState::new(2)).unwrap();
        let a = predict_vector(&params, &f, &f).unwrap();
        let b = predict_vector(&params, &f, &f).unwrap();
        assert_eq!(a, b);
        params.zero_all();
        let z = predict_vector(&params, &f, &f).unwrap();
        assert!(z.shifts().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_frame_sequence_passes_through() {
        let params = init_params::<f32>(&tiny_model(), &mut RngState::new(3)).unwrap();
        let seq = generate_phantom_sequence(&phantom_cfg(), 1, &mut RngState::new(4)).unwrap();
        let (out, vectors) = correct_sequence(&params, &seq, CorrectionOptions::default()).unwrap();
        assert_eq!(out, seq);
        assert_eq!(vectors.len(), 1);
        assert!(vectors[0].shifts().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_model_leaves_identical_frames_untouched() {
        let mut params = init_params::<f32>(&tiny_model(), &mut RngState::new(5)).unwrap();
        params.zero_all();
        let f = generate_phantom(&phantom_cfg(), &mut RngState::new(6)).unwrap();
        let seq = FrameSequence::new(vec![f.clone(), f.clone(), f.clone()]).unwrap();
        let (out, _) = correct_sequence(&params, &seq, CorrectionOptions::default()).unwrap();
        assert_eq!(out, seq);
    }

    #[test]
    fn gt_streaming_correction_recovers_constant_integer_rolls() {
        // frame_n = warp(frame_0, constant k_n); feeding the consecutive
        // deltas k_n - k_{n-1} must reproduce frame_0 bit-exactly
        let f0 = generate_phantom(&phantom_cfg(), &mut RngState::new(7)).unwrap();
        let ks = [0i64, 2, 5, 3, -1];
        let frames: Vec<BScanFrame<f32>> = ks
            .iter()
            .map(|&k| {
                let d = DistortionVector::constant(16, k as f32).unwrap();
                crate::distortion::warp_frame(&f0, &d).unwrap()
            })
            .collect();
        let seq = FrameSequence::new(frames).unwrap();
        let deltas: Vec<DistortionVector<f32>> = ks
            .windows(2)
            .map(|w| DistortionVector::constant(16, (w[1] - w[0]) as f32).unwrap())
            .collect();
        let (out, applied) = correct_sequence_with_vectors(&seq, &deltas, 1.0).unwrap();
        for idx in 0..seq.len() {
            assert_eq!(out.frame(idx), &f0, "frame {idx} not recovered");
        }
        // the cumulative vector applied at frame n is exactly k_n
        for (idx, &k) in ks.iter().enumerate() {
            assert!(applied[idx]
                .shifts()
                .iter()
                .all(|&v| (v - k as f32).abs() < 1e-6));
        }
    }

    #[test]
    fn output_shape_matches_input_shape() {
        let params = init_params::<f32>(&tiny_model(), &mut RngState::new(8)).unwrap();
        let seq = generate_phantom_sequence(&phantom_cfg(), 4, &mut RngState::new(9)).unwrap();
        let (out, vectors) = correct_sequence(&params, &seq, CorrectionOptions::default()).unwrap();
        assert_eq!(out.len(), seq.len());
        assert_eq!(out.n_alines(), seq.n_alines());
        assert_eq!(out.n_points(), seq.n_points());
        assert_eq!(vectors.len(), seq.len());
    }

    #[test]
    fn bench_report_is_consistent() {
        let params = init_params::<f32>(&tiny_model(), &mut RngState::new(10)).unwrap();
        let seq = generate_phantom_sequence(&phantom_cfg(), 3, &mut RngState::new(11)).unwrap();
        let report = bench(&params, &seq, 2).unwrap();
        assert!(report.total_ms.mean >= report.inference_ms.mean);
        assert!(report.total_ms.mean >= report.prepost_ms.mean);
        let fps_expect = 1000.0 / report.total_ms.mean;
        assert!((report.fps.mean - fps_expect).abs() < 1e-9);
        assert!(report.fps.std >= 0.0);
        assert_eq!(TimingReport::CATEGORIES.len(), 4);
        let csv = report.csv();
        assert!(csv.starts_with("category,mean_ms,std_ms\n"));
        assert_eq!(csv.lines().count(), 5);
    }

    #[test]
    fn bench_requires_two_frames() {
        let params = init_params::<f32>(&tiny_model(), &mut RngState::new(12)).unwrap();
        let seq = generate_phantom_sequence(&phantom_cfg(), 1, &mut RngState::new(13)).unwrap();
        assert!(bench(&params, &seq, 1).is_err());
    }
}

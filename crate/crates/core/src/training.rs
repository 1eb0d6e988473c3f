//! Self-supervised training.
//!
//! Each training pair is made by distorting a clean frame with a random
//! smooth vector; the network sees (original, distorted) and predicts both
//! the forward and the reverse distortion. Three constraints drive
//! learning: an L1 loss between the first predicted vector and the ground
//! truth, a smoothness penalty on both predictions, and A-line-level
//! similarity between each input frame and its reconstruction warped with
//! the corresponding prediction (the cycle-consistency term).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::distortion::{
    generate_gt_vector, warp_frame, warp_frame_backward, DistortionGenConfig, DistortionVector,
};
use crate::error::{Error, Result};
use crate::frames::{BScanFrame, FrameSequence};
use crate::model::{backward, forward, init_params, save_model, ModelConfig, ModelParams};
use crate::numerics::{sgd_step, Real, RngState, Tensor2};

/// Combination weights of the three training constraints.
#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub w_l1: f64,
    pub w_smooth: f64,
    pub w_sim: f64,
}

impl Default for LossWeights {
    /// The L1 term is the only ground-truth-anchored constraint and
    /// dominates; the regularizers get a tenth of its weight.
    fn default() -> Self {
        LossWeights {
            w_l1: 1.0,
            w_smooth: 0.1,
            w_sim: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.w_l1, self.w_smooth, self.w_sim];
        if all.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return Err(Error::Config("loss weights must be nonnegative".into()));
        }
        if all.iter().all(|&w| w == 0.0) {
            return Err(Error::Config("at least one loss weight must be > 0".into()));
        }
        Ok(())
    }
}

/// Optimizer and schedule settings.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub gen: DistortionGenConfig,
    pub weights: LossWeights,
    /// Save an intermediate checkpoint every this many steps (0 disables).
    pub checkpoint_every: usize,
    /// Hard cap on optimizer steps (0 = run all epochs).
    pub max_steps: usize,
    /// Reuse identical distortions every epoch instead of resampling.
    pub fixed_pairs: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 5e-4,
            batch: 24,
            epochs: 200,
            seed: 0,
            gen: DistortionGenConfig::default(),
            weights: LossWeights::default(),
            checkpoint_every: 0,
            max_steps: 0,
            fixed_pairs: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        self.weights.validate()
    }
}

/// Mean absolute error between a predicted and a ground-truth vector.
pub fn loss_l1<T: Real>(pred: &DistortionVector<T>, gt: &DistortionVector<T>) -> Result<T> {
    if pred.len() != gt.len() {
        return Err(Error::DimMismatch {
            op: "loss_l1",
            left: (pred.len(), 1),
            right: (gt.len(), 1),
        });
    }
    let n = T::from_usize(pred.len());
    Ok(pred
        .shifts()
        .iter()
        .zip(gt.shifts())
        .map(|(&p, &g)| (p - g).abs())
        .sum::<T>()
        / n)
}

/// Gradient of [`loss_l1`] with respect to the prediction:
/// `sign(pred − gt) / N`, subgradient 0 at ties.
pub fn loss_l1_backward<T: Real>(pred: &DistortionVector<T>, gt: &DistortionVector<T>) -> Vec<T> {
    let n = T::from_usize(pred.len());
    pred.shifts()
        .iter()
        .zip(gt.shifts())
        .map(|(&p, &g)| (p - g).sign0() / n)
        .collect()
}

/// Mean absolute difference of consecutive entries,
/// `(1/(N−1)) Σ |d_i − d_{i+1}|`, with no circular wrap term.
pub fn loss_smooth<T: Real>(pred: &DistortionVector<T>) -> Result<T> {
    let n = pred.len();
    if n < 2 {
        return Err(Error::Data("smoothness loss needs at least 2 entries".into()));
    }
    let s = pred.shifts();
    let sum: T = (0..n - 1).map(|i| (s[i] - s[i + 1]).abs()).sum();
    Ok(sum / T::from_usize(n - 1))
}

/// Gradient of [`loss_smooth`] with respect to the prediction.
pub fn loss_smooth_backward<T: Real>(pred: &DistortionVector<T>) -> Vec<T> {
    let n = pred.len();
    let s = pred.shifts();
    let scale = T::ONE / T::from_usize(n - 1);
    let mut grad = vec![T::ZERO; n];
    for i in 0..n - 1 {
        let sign = (s[i] - s[i + 1]).sign0();
        grad[i] += sign * scale;
        grad[i + 1] -= sign * scale;
    }
    grad
}

/// A-line-level similarity: mean absolute difference of per-A-line mean
/// intensities, `(1/N) Σ_i |mean_j p̂_{i,j} − mean_j p_{i,j}|`.
///
/// Note the deliberate weakness: any within-A-line permutation of pixels
/// leaves the loss unchanged, since only row means are compared.
pub fn loss_similarity<T: Real>(
    pred_frame: &BScanFrame<T>,
    target_frame: &BScanFrame<T>,
) -> Result<T> {
    if (pred_frame.n_alines(), pred_frame.n_points())
        != (target_frame.n_alines(), target_frame.n_points())
    {
        return Err(Error::DimMismatch {
            op: "loss_similarity",
            left: (pred_frame.n_alines(), pred_frame.n_points()),
            right: (target_frame.n_alines(), target_frame.n_points()),
        });
    }
    let n = pred_frame.n_alines();
    let m = T::from_usize(pred_frame.n_points());
    let mut acc = T::ZERO;
    for i in 0..n {
        let pm: T = pred_frame.aline(i).iter().copied().sum::<T>() / m;
        let tm: T = target_frame.aline(i).iter().copied().sum::<T>() / m;
        acc += (pm - tm).abs();
    }
    Ok(acc / T::from_usize(n))
}

/// Gradient of [`loss_similarity`] with respect to the predicted frame's
/// pixels: `sign_i / (N·M)` broadcast along each A-line.
pub fn loss_similarity_backward<T: Real>(
    pred_frame: &BScanFrame<T>,
    target_frame: &BScanFrame<T>,
) -> Tensor2<T> {
    let n = pred_frame.n_alines();
    let m = pred_frame.n_points();
    let m_t = T::from_usize(m);
    let scale = T::ONE / (T::from_usize(n) * m_t);
    let mut grad = Tensor2::zeros(n, m);
    for i in 0..n {
        let pm: T = pred_frame.aline(i).iter().copied().sum::<T>() / m_t;
        let tm: T = target_frame.aline(i).iter().copied().sum::<T>() / m_t;
        let g = (pm - tm).sign0() * scale;
        grad.row_mut(i).fill(g);
    }
    grad
}

/// One synthetic training example.
#[derive(Debug, Clone)]
pub struct TrainingPair<T = f32> {
    pub original: BScanFrame<T>,
    pub distorted: BScanFrame<T>,
    pub gt: DistortionVector<T>,
}

impl<T: Real> TrainingPair<T> {
    pub fn cast<U: Real>(&self) -> TrainingPair<U> {
        TrainingPair {
            original: self.original.cast(),
            distorted: self.distorted.cast(),
            gt: self.gt.cast(),
        }
    }
}

/// Draw a ground-truth vector and warp the original with it.
pub fn build_pair(
    original: &BScanFrame<f32>,
    gen: &DistortionGenConfig,
    rng: &mut RngState,
) -> Result<TrainingPair<f32>> {
    let gt = generate_gt_vector(gen, original.n_alines(), rng)?;
    let distorted = warp_frame(original, &gt)?;
    Ok(TrainingPair {
        original: original.clone(),
        distorted,
        gt,
    })
}

/// Unweighted loss components and the weighted total for one pair.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossBreakdown {
    pub l1: f64,
    pub smooth: f64,
    pub sim: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn add(&mut self, other: &LossBreakdown) {
        self.l1 += other.l1;
        self.smooth += other.smooth;
        self.sim += other.sim;
        self.total += other.total;
    }

    fn scale(&mut self, s: f64) {
        self.l1 *= s;
        self.smooth *= s;
        self.sim *= s;
        self.total *= s;
    }
}

/// Evaluate the combined objective for one pair given the two predicted
/// vectors, together with its gradients with respect to both predictions.
///
/// The objective is
/// `w_l1·L1(v1, gt) + w_smooth·(Ls(v1) + Ls(v2))
///  + w_sim·(Lsim(warp(original, v1), distorted) + Lsim(warp(distorted, v2), original))`;
/// the L1 term anchors only the first vector.
pub fn pair_loss_and_grads<T: Real>(
    v1: &DistortionVector<T>,
    v2: &DistortionVector<T>,
    pair: &TrainingPair<T>,
    weights: &LossWeights,
) -> Result<(LossBreakdown, Vec<T>, Vec<T>)> {
    let new_distorted = warp_frame(&pair.original, v1)?;
    let new_original = warp_frame(&pair.distorted, v2)?;

    let l1 = loss_l1(v1, &pair.gt)?;
    let smooth = loss_smooth(v1)? + loss_smooth(v2)?;
    let sim = loss_similarity(&new_distorted, &pair.distorted)?
        + loss_similarity(&new_original, &pair.original)?;

    let (w1, w2, w3) = (
        T::from_f64(weights.w_l1),
        T::from_f64(weights.w_smooth),
        T::from_f64(weights.w_sim),
    );
    let total = w1 * l1 + w2 * smooth + w3 * sim;

    let mut grad_v1 = loss_l1_backward(v1, &pair.gt);
    for (g, s) in grad_v1.iter_mut().zip(loss_smooth_backward(v1)) {
        *g = w1 * *g + w2 * s;
    }
    let sim_grad_frame1 = loss_similarity_backward(&new_distorted, &pair.distorted);
    let warp_grad1 = warp_frame_backward(&pair.original, v1, &sim_grad_frame1);
    for (g, w) in grad_v1.iter_mut().zip(warp_grad1) {
        *g += w3 * w;
    }

    let mut grad_v2: Vec<T> = loss_smooth_backward(v2)
        .into_iter()
        .map(|s| w2 * s)
        .collect();
    let sim_grad_frame2 = loss_similarity_backward(&new_original, &pair.original);
    let warp_grad2 = warp_frame_backward(&pair.distorted, v2, &sim_grad_frame2);
    for (g, w) in grad_v2.iter_mut().zip(warp_grad2) {
        *g += w3 * w;
    }

    let breakdown = LossBreakdown {
        l1: l1.to_f64(),
        smooth: smooth.to_f64(),
        sim: sim.to_f64(),
        total: total.to_f64(),
    };
    Ok((breakdown, grad_v1, grad_v2))
}

/// Forward, loss, backward over a batch, then one SGD step. Returns the
/// mean loss breakdown. Gradients are averaged over the batch; accumulation
/// order is the batch order, so the step is deterministic.
pub fn train_step<T: Real>(
    params: &mut ModelParams<T>,
    batch: &[TrainingPair<T>],
    weights: &LossWeights,
    lr: T,
) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(Error::Data("train_step needs a non-empty batch".into()));
    }
    let inv_batch = T::ONE / T::from_usize(batch.len());
    let mut stats = LossBreakdown::default();
    for pair in batch {
        let (v1, v2, cache) = forward(params, &pair.original, &pair.distorted, true)?;
        let cache = cache.expect("training-mode forward returns a cache");
        let (breakdown, mut grad_v1, mut grad_v2) =
            pair_loss_and_grads(&v1, &v2, pair, weights)?;
        for g in grad_v1.iter_mut() {
            *g *= inv_batch;
        }
        for g in grad_v2.iter_mut() {
            *g *= inv_batch;
        }
        backward(params, &cache, &grad_v1, &grad_v2)?;
        stats.add(&breakdown);
    }
    stats.scale(1.0 / batch.len() as f64);
    sgd_step(params, lr);
    Ok(stats)
}

/// Format a value with six significant digits for the loss log.
pub(crate) fn fmt_sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (5 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

/// Full training loop: epoch shuffling, per-epoch pair synthesis, CSV loss
/// log, checkpoint cadence. Returns the trained parameters (also written
/// to `out_model`).
pub fn train_loop(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    dataset: &FrameSequence<f32>,
    out_model: &Path,
    log_path: Option<&Path>,
) -> Result<ModelParams<f32>> {
    cfg.validate()?;
    model_cfg.validate()?;
    if dataset.n_alines() != model_cfg.n_alines || dataset.n_points() != model_cfg.n_points {
        return Err(Error::DimMismatch {
            op: "train_loop (dataset vs model config)",
            left: (model_cfg.n_alines, model_cfg.n_points),
            right: (dataset.n_alines(), dataset.n_points()),
        });
    }

    let mut root = RngState::new(cfg.seed);
    let mut init_rng = root.split();
    let mut shuffle_rng = root.split();
    let mut pair_rng = root.split();

    let mut params = init_params::<f32>(model_cfg, &mut init_rng)?;

    let mut log: Option<BufWriter<File>> = match log_path {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            writeln!(w, "step,l1,smooth,sim,total")?;
            Some(w)
        }
        None => None,
    };

    let mut step = 0usize;
    'epochs: for _epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        shuffle_rng.shuffle(&mut order);
        // fixed-pair mode replays the same distortion stream every epoch
        let mut epoch_rng = if cfg.fixed_pairs {
            RngState::new(cfg.seed ^ 0x5050_5050_5050_5050)
        } else {
            pair_rng.split()
        };
        for chunk in order.chunks(cfg.batch) {
            let batch: Vec<TrainingPair<f32>> = chunk
                .iter()
                .map(|&i| build_pair(dataset.frame(i), &cfg.gen, &mut epoch_rng))
                .collect::<Result<_>>()?;
            let stats = train_step(&mut params, &batch, &cfg.weights, cfg.lr as f32)?;
            step += 1;
            if let Some(w) = log.as_mut() {
                writeln!(
                    w,
                    "{},{},{},{},{}",
                    step,
                    fmt_sig6(stats.l1),
                    fmt_sig6(stats.smooth),
                    fmt_sig6(stats.sim),
                    fmt_sig6(stats.total)
                )?;
            }
            if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
                let stem = out_model
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .unwrap_or("model");
                let ckpt = out_model.with_file_name(format!("{stem}_step{step}.octw"));
                save_model(&params, &ckpt)?;
            }
            if cfg.max_steps > 0 && step >= cfg.max_steps {
                break 'epochs;
            }
        }
    }
    if let Some(mut w) = log {
        w.flush()?;
    }
    save_model(&params, out_model)?;
    Ok(params)
}

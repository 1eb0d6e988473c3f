//! The stacked cross-attention network.
//!
//! Each A-line is a token. A reference frame and a moving frame are fused
//! by per-index concatenation into 2M-wide tokens, linearly embedded to
//! width E, passed through B pre-norm residual blocks (multi-head
//! attention over A-line tokens, then a GELU MLP), and a final
//! normalization plus per-token linear head emits two shift values per
//! A-line: the distortion taking the reference to the moving frame, and
//! the reverse. The architecture has no positional encoding, so it is
//! equivariant to a common permutation of both frames' A-lines.

mod backward;
mod io;

pub use backward::backward;
pub use io::{load_model, save_model};

use crate::distortion::DistortionVector;
use crate::error::{Error, Result};
use crate::frames::BScanFrame;
use crate::numerics::{
    layer_norm_rows, matmul, softmax_rows, Parameter, ParameterSet, Real, RngState, Tensor2,
};
use crate::numerics::{gelu, LayerNormCache};

/// Layer-norm epsilon, inside the square root, with population variance.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub n_alines: usize,
    pub n_points: usize,
    pub embed_dim: usize,
    pub n_heads: usize,
    pub n_blocks: usize,
    pub mlp_hidden: usize,
}

impl ModelConfig {
    /// Full-scale configuration: 1024 A-lines of 512 points, embedding
    /// width 1024, 4 heads, 5 blocks.
    pub fn full_scale() -> Self {
        ModelConfig {
            n_alines: 1024,
            n_points: 512,
            embed_dim: 1024,
            n_heads: 4,
            n_blocks: 5,
            mlp_hidden: 2048,
        }
    }

    /// Desk-scale configuration that trains in minutes on a CPU.
    pub fn desk_scale() -> Self {
        ModelConfig {
            n_alines: 256,
            n_points: 64,
            embed_dim: 128,
            n_heads: 4,
            n_blocks: 5,
            mlp_hidden: 256,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_blocks == 0 {
            return Err(Error::Config("n_blocks must be >= 1".into()));
        }
        if self.n_heads == 0 || self.embed_dim % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} must be divisible by n_heads {}",
                self.embed_dim, self.n_heads
            )));
        }
        if self.embed_dim <= self.n_points {
            return Err(Error::Config(format!(
                "embed_dim {} must exceed n_points {}",
                self.embed_dim, self.n_points
            )));
        }
        if self.mlp_hidden == 0 {
            return Err(Error::Config("mlp_hidden must be >= 1".into()));
        }
        if self.n_alines == 0 || self.n_points == 0 {
            return Err(Error::Config("frame dimensions must be positive".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.n_heads
    }

    pub(crate) fn token_width(&self) -> usize {
        2 * self.n_points
    }
}

// Parameter layout. The flat order is also the checkpoint order.
pub(crate) const IDX_W_E: usize = 0;
pub(crate) const IDX_B_E: usize = 1;
pub(crate) const BLOCK_BASE: usize = 2;
pub(crate) const BLOCK_STRIDE: usize = 16;

// Offsets within a block.
pub(crate) const OFF_LN1_GAMMA: usize = 0;
pub(crate) const OFF_LN1_BETA: usize = 1;
pub(crate) const OFF_W_Q: usize = 2;
pub(crate) const OFF_B_Q: usize = 3;
pub(crate) const OFF_W_K: usize = 4;
pub(crate) const OFF_B_K: usize = 5;
pub(crate) const OFF_W_V: usize = 6;
pub(crate) const OFF_B_V: usize = 7;
pub(crate) const OFF_W_O: usize = 8;
pub(crate) const OFF_B_O: usize = 9;
pub(crate) const OFF_LN2_GAMMA: usize = 10;
pub(crate) const OFF_LN2_BETA: usize = 11;
pub(crate) const OFF_W_1: usize = 12;
pub(crate) const OFF_B_1: usize = 13;
pub(crate) const OFF_W_2: usize = 14;
pub(crate) const OFF_B_2: usize = 15;

/// All learnable tensors, stored flat in checkpoint order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T = f32> {
    cfg: ModelConfig,
    params: Vec<Parameter<T>>,
}

impl<T: Real> ModelParams<T> {
    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub(crate) fn block_idx(&self, b: usize, off: usize) -> usize {
        BLOCK_BASE + b * BLOCK_STRIDE + off
    }

    pub(crate) fn idx_final_gamma(&self) -> usize {
        BLOCK_BASE + self.cfg.n_blocks * BLOCK_STRIDE
    }

    pub(crate) fn idx_final_beta(&self) -> usize {
        self.idx_final_gamma() + 1
    }

    pub(crate) fn idx_w_h(&self) -> usize {
        self.idx_final_gamma() + 2
    }

    pub(crate) fn idx_b_h(&self) -> usize {
        self.idx_final_gamma() + 3
    }

    pub(crate) fn value(&self, idx: usize) -> &Tensor2<T> {
        &self.params[idx].value
    }

    pub(crate) fn add_grad(&mut self, idx: usize, g: &Tensor2<T>) {
        self.params[idx].grad.add_assign(g);
    }

    /// Total number of scalar coefficients.
    pub fn n_scalars(&self) -> usize {
        self.params
            .iter()
            .map(|p| p.value.rows() * p.value.cols())
            .sum()
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            cfg: self.cfg.clone(),
            params: self.params.iter().map(|p| p.cast()).collect(),
        }
    }

    /// Zero every weight and bias; useful for contract tests (a zero
    /// network predicts zero vectors).
    pub fn zero_all(&mut self) {
        for p in self.params.iter_mut() {
            p.value.fill(T::ZERO);
            p.zero_grad();
        }
    }
}

impl<T: Real> ParameterSet<T> for ModelParams<T> {
    fn n_params(&self) -> usize {
        self.params.len()
    }
    fn param(&self, k: usize) -> &Parameter<T> {
        &self.params[k]
    }
    fn param_mut(&mut self, k: usize) -> &mut Parameter<T> {
        &mut self.params[k]
    }
}

/// Initialize parameters: weights uniform in `(-1/√fan_in, +1/√fan_in)`
/// where fan-in is the input width of the projection, biases zero,
/// layer-norm gains 1 and offsets 0. Tensors are drawn in layout order,
/// row-major.
pub fn init_params<T: Real>(cfg: &ModelConfig, rng: &mut RngState) -> Result<ModelParams<T>> {
    cfg.validate()?;
    let e = cfg.embed_dim;
    let h = cfg.mlp_hidden;
    let tw = cfg.token_width();

    let mut params = Vec::new();
    let weight = |rows: usize, cols: usize, rng: &mut RngState| {
        let bound = 1.0 / (rows as f64).sqrt();
        let data: Vec<T> = (0..rows * cols)
            .map(|_| T::from_f64(rng.uniform(-bound, bound)))
            .collect();
        Parameter::new(Tensor2::from_vec_unchecked(rows, cols, data))
    };
    let zeros = |cols: usize| Parameter::new(Tensor2::<T>::zeros(1, cols));
    let ones = |cols: usize| Parameter::new(Tensor2::filled(1, cols, T::ONE));

    params.push(weight(tw, e, rng)); // W_E
    params.push(zeros(e)); // b_E
    for _ in 0..cfg.n_blocks {
        params.push(ones(e)); // ln1 gamma
        params.push(zeros(e)); // ln1 beta
        params.push(weight(e, e, rng)); // W_Q
        params.push(zeros(e));
        params.push(weight(e, e, rng)); // W_K
        params.push(zeros(e));
        params.push(weight(e, e, rng)); // W_V
        params.push(zeros(e));
        params.push(weight(e, e, rng)); // W_O
        params.push(zeros(e));
        params.push(ones(e)); // ln2 gamma
        params.push(zeros(e)); // ln2 beta
        params.push(weight(e, h, rng)); // W_1
        params.push(zeros(h));
        params.push(weight(h, e, rng)); // W_2
        params.push(zeros(e));
    }
    params.push(ones(e)); // final gamma
    params.push(zeros(e)); // final beta
    params.push(weight(e, 2, rng)); // W_H
    params.push(zeros(2)); // b_H

    Ok(ModelParams {
        cfg: cfg.clone(),
        params,
    })
}

/// Concatenate matching rows of two equal-shaped tensors: token `i` is
/// `[a_row_i, b_row_i]`.
pub fn tokenize_rows<T: Real>(a: &Tensor2<T>, b: &Tensor2<T>) -> Result<Tensor2<T>> {
    if a.shape() != b.shape() {
        return Err(Error::DimMismatch {
            op: "tokenize",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let (n, m) = a.shape();
    let mut out = Tensor2::zeros(n, 2 * m);
    for i in 0..n {
        out.row_mut(i)[..m].copy_from_slice(a.row(i));
        out.row_mut(i)[m..].copy_from_slice(b.row(i));
    }
    Ok(out)
}

/// Build the N x 2M token matrix for a frame pair.
pub fn tokenize<T: Real>(
    reference: &BScanFrame<T>,
    moving: &BScanFrame<T>,
) -> Result<Tensor2<T>> {
    tokenize_rows(reference.pixels(), moving.pixels())
}

/// Scaled dot-product attention for one head:
/// `softmax(Q·Kᵀ/√d_k)·V`.
pub fn attention_head<T: Real>(
    q: &Tensor2<T>,
    k: &Tensor2<T>,
    v: &Tensor2<T>,
) -> Result<Tensor2<T>> {
    Ok(attention_head_with_weights(q, k, v)?.0)
}

pub(crate) fn attention_head_with_weights<T: Real>(
    q: &Tensor2<T>,
    k: &Tensor2<T>,
    v: &Tensor2<T>,
) -> Result<(Tensor2<T>, Tensor2<T>)> {
    if q.shape() != k.shape() || k.shape() != v.shape() {
        return Err(Error::DimMismatch {
            op: "attention_head",
            left: q.shape(),
            right: if q.shape() != k.shape() {
                k.shape()
            } else {
                v.shape()
            },
        });
    }
    let scale = T::ONE / T::from_usize(q.cols()).sqrt();
    let mut scores = matmul(q, &k.transpose())?;
    for s in scores.data_mut() {
        *s *= scale;
    }
    let weights = softmax_rows(&scores);
    let out = matmul(&weights, v)?;
    Ok((out, weights))
}

/// Per-block activations retained for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct BlockCache<T> {
    pub ln1: LayerNormCache<T>,
    pub ln1_out: Tensor2<T>,
    pub q: Tensor2<T>,
    pub k: Tensor2<T>,
    pub v: Tensor2<T>,
    /// Softmax attention weights per head, each N x N.
    pub attn_weights: Vec<Tensor2<T>>,
    /// Concatenated head outputs, before the output projection.
    pub attn_concat: Tensor2<T>,
    pub ln2: LayerNormCache<T>,
    pub ln2_out: Tensor2<T>,
    /// MLP pre-activation.
    pub mlp_pre: Tensor2<T>,
    /// MLP activation output.
    pub mlp_act: Tensor2<T>,
}

/// Activations retained by a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T = f32> {
    pub(crate) tokens: Tensor2<T>,
    pub(crate) blocks: Vec<BlockCache<T>>,
    pub(crate) final_ln: LayerNormCache<T>,
    pub(crate) head_input: Tensor2<T>,
}

/// Broadcast-add a 1 x C bias tensor onto every row.
pub(crate) fn add_bias<T: Real>(x: &mut Tensor2<T>, bias: &Tensor2<T>) {
    debug_assert_eq!(bias.rows(), 1);
    debug_assert_eq!(bias.cols(), x.cols());
    let b = bias.data();
    for i in 0..x.rows() {
        for (v, &bv) in x.row_mut(i).iter_mut().zip(b) {
            *v += bv;
        }
    }
}

/// Copy columns `[lo, lo+width)` into a fresh tensor.
pub(crate) fn extract_cols<T: Real>(x: &Tensor2<T>, lo: usize, width: usize) -> Tensor2<T> {
    let mut out = Tensor2::zeros(x.rows(), width);
    for i in 0..x.rows() {
        out.row_mut(i).copy_from_slice(&x.row(i)[lo..lo + width]);
    }
    out
}

/// Accumulate `src` into columns `[lo, lo+src.cols)` of `dst`.
pub(crate) fn add_into_cols<T: Real>(dst: &mut Tensor2<T>, src: &Tensor2<T>, lo: usize) {
    debug_assert_eq!(dst.rows(), src.rows());
    for i in 0..src.rows() {
        let d = &mut dst.row_mut(i)[lo..lo + src.cols()];
        for (dv, &sv) in d.iter_mut().zip(src.row(i)) {
            *dv += sv;
        }
    }
}

fn linear<T: Real>(x: &Tensor2<T>, w: &Tensor2<T>, b: &Tensor2<T>) -> Result<Tensor2<T>> {
    let mut out = matmul(x, w)?;
    add_bias(&mut out, b);
    Ok(out)
}

/// Run the network on a frame pair.
///
/// Returns the two predicted distortion vectors (reference to moving, and
/// moving to reference) and, in training mode, the activation cache needed
/// by [`backward`].
pub fn forward<T: Real>(
    params: &ModelParams<T>,
    reference: &BScanFrame<T>,
    moving: &BScanFrame<T>,
    training: bool,
) -> Result<(
    DistortionVector<T>,
    DistortionVector<T>,
    Option<ForwardCache<T>>,
)> {
    let cfg = &params.cfg;
    if reference.n_alines() != cfg.n_alines || reference.n_points() != cfg.n_points {
        return Err(Error::DimMismatch {
            op: "forward (reference frame vs model config)",
            left: (cfg.n_alines, cfg.n_points),
            right: (reference.n_alines(), reference.n_points()),
        });
    }
    let tokens = tokenize(reference, moving)?;
    forward_tokens(params, tokens, training)
}

/// Run the network on an already-built token matrix. Exposed so the
/// latency benchmark can time tokenization separately from inference.
pub fn forward_tokens<T: Real>(
    params: &ModelParams<T>,
    tokens: Tensor2<T>,
    training: bool,
) -> Result<(
    DistortionVector<T>,
    DistortionVector<T>,
    Option<ForwardCache<T>>,
)> {
    let cfg = &params.cfg;
    if tokens.shape() != (cfg.n_alines, cfg.token_width()) {
        return Err(Error::DimMismatch {
            op: "forward_tokens",
            left: (cfg.n_alines, cfg.token_width()),
            right: tokens.shape(),
        });
    }
    let eps = T::from_f64(LAYER_NORM_EPS);
    let dk = cfg.head_dim();

    let mut x = linear(&tokens, params.value(IDX_W_E), params.value(IDX_B_E))?;
    let mut blocks = Vec::with_capacity(cfg.n_blocks);

    for b in 0..cfg.n_blocks {
        let idx = |off| params.block_idx(b, off);

        let (ln1_out, ln1) = layer_norm_rows(
            &x,
            params.value(idx(OFF_LN1_GAMMA)).data(),
            params.value(idx(OFF_LN1_BETA)).data(),
            eps,
        );
        let q = linear(&ln1_out, params.value(idx(OFF_W_Q)), params.value(idx(OFF_B_Q)))?;
        let k = linear(&ln1_out, params.value(idx(OFF_W_K)), params.value(idx(OFF_B_K)))?;
        let v = linear(&ln1_out, params.value(idx(OFF_W_V)), params.value(idx(OFF_B_V)))?;

        let mut attn_concat = Tensor2::zeros(cfg.n_alines, cfg.embed_dim);
        let mut attn_weights = Vec::with_capacity(cfg.n_heads);
        for head in 0..cfg.n_heads {
            let lo = head * dk;
            let qh = extract_cols(&q, lo, dk);
            let kh = extract_cols(&k, lo, dk);
            let vh = extract_cols(&v, lo, dk);
            let (out, weights) = attention_head_with_weights(&qh, &kh, &vh)?;
            add_into_cols(&mut attn_concat, &out, lo);
            attn_weights.push(weights);
        }
        let proj = linear(&attn_concat, params.value(idx(OFF_W_O)), params.value(idx(OFF_B_O)))?;
        x.add_assign(&proj);

        let (ln2_out, ln2) = layer_norm_rows(
            &x,
            params.value(idx(OFF_LN2_GAMMA)).data(),
            params.value(idx(OFF_LN2_BETA)).data(),
            eps,
        );
        let mlp_pre = linear(&ln2_out, params.value(idx(OFF_W_1)), params.value(idx(OFF_B_1)))?;
        let mlp_act = gelu(&mlp_pre);
        let mlp_out = linear(&mlp_act, params.value(idx(OFF_W_2)), params.value(idx(OFF_B_2)))?;
        x.add_assign(&mlp_out);

        if training {
            blocks.push(BlockCache {
                ln1,
                ln1_out,
                q,
                k,
                v,
                attn_weights,
                attn_concat,
                ln2,
                ln2_out,
                mlp_pre,
                mlp_act,
            });
        }
    }

    let (head_input, final_ln) = layer_norm_rows(
        &x,
        params.value(params.idx_final_gamma()).data(),
        params.value(params.idx_final_beta()).data(),
        eps,
    );
    let out = linear(
        &head_input,
        params.value(params.idx_w_h()),
        params.value(params.idx_b_h()),
    )?;

    let n = cfg.n_alines;
    let mut v1 = Vec::with_capacity(n);
    let mut v2 = Vec::with_capacity(n);
    for i in 0..n {
        v1.push(out.get(i, 0));
        v2.push(out.get(i, 1));
    }
    let vec1 = DistortionVector::new(v1)?;
    let vec2 = DistortionVector::new(v2)?;

    let cache = training.then(|| ForwardCache {
        tokens,
        blocks,
        final_ln,
        head_input,
    });
    Ok((vec1, vec2, cache))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::PhantomConfig;

    pub(crate) fn tiny_config() -> ModelConfig {
        ModelConfig {
            n_alines: 8,
            n_points: 4,
            embed_dim: 16,
            n_heads: 2,
            n_blocks: 2,
            mlp_hidden: 32,
        }
    }

    fn tiny_frames(seed: u64) -> (BScanFrame<f32>, BScanFrame<f32>) {
        let cfg = PhantomConfig {
            n_alines: 8,
            n_points: 4,
            speckle_strength: 0.4,
            ..PhantomConfig::default()
        };
        let mut rng = RngState::new(seed);
        let a = crate::frames::generate_phantom(&cfg, &mut rng).unwrap();
        let b = crate::frames::generate_phantom(&cfg, &mut rng).unwrap();
        (a, b)
    }

    #[test]
    fn init_is_seed_deterministic() {
        let cfg = tiny_config();
        let a: ModelParams<f32> = init_params(&cfg, &mut RngState::new(10)).unwrap();
        let b: ModelParams<f32> = init_params(&cfg, &mut RngState::new(10)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn init_gamma_is_one_and_bias_zero() {
        let cfg = tiny_config();
        let p: ModelParams<f32> = init_params(&cfg, &mut RngState::new(1)).unwrap();
        let g = p.value(p.block_idx(0, OFF_LN1_GAMMA));
        assert!(g.data().iter().all(|&v| v == 1.0));
        let b_q = p.value(p.block_idx(0, OFF_B_Q));
        assert!(b_q.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_embedding_respects_bound() {
        let cfg = tiny_config();
        let p: ModelParams<f32> = init_params(&cfg, &mut RngState::new(2)).unwrap();
        let bound = 1.0 / (cfg.token_width() as f32).sqrt();
        assert!(p.value(IDX_W_E).max_abs() <= bound);
    }

    #[test]
    fn tokenize_concatenates_rows() {
        let a = Tensor2::from_vec(2, 2, vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor2::from_vec(2, 2, vec![5.0f32, 6.0, 7.0, 8.0]).unwrap();
        let t = tokenize_rows(&a, &b).unwrap();
        assert_eq!(t.row(0), &[1.0, 2.0, 5.0, 6.0]);
        assert_eq!(t.row(1), &[3.0, 4.0, 7.0, 8.0]);
    }

    #[test]
    fn attention_zero_query_averages_values() {
        let q = Tensor2::<f64>::zeros(3, 2);
        let k = Tensor2::from_vec(3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let v = Tensor2::from_vec(3, 2, vec![3.0, 0.0, 0.0, 6.0, 3.0, 3.0]).unwrap();
        let out = attention_head(&q, &k, &v).unwrap();
        for i in 0..3 {
            assert!((out.get(i, 0) - 2.0).abs() < 1e-12);
            assert!((out.get(i, 1) - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_single_row_is_identity() {
        let q = Tensor2::from_vec(1, 3, vec![0.3f64, -2.0, 0.7]).unwrap();
        let k = Tensor2::from_vec(1, 3, vec![1.0, 1.0, 1.0]).unwrap();
        let v = Tensor2::from_vec(1, 3, vec![4.0, 5.0, 6.0]).unwrap();
        let out = attention_head(&q, &k, &v).unwrap();
        assert_eq!(out.data(), v.data());
    }

    #[test]
    fn attention_identical_keys_ignore_query() {
        let k = Tensor2::filled(4, 2, 0.5f64);
        let v = Tensor2::from_vec(4, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
        let q1 = Tensor2::from_vec(4, 2, vec![1.0, 0.0, 0.0, 1.0, -1.0, 2.0, 0.3, 0.4]).unwrap();
        let q2 = Tensor2::filled(4, 2, -3.0);
        let o1 = attention_head(&q1, &k, &v).unwrap();
        let o2 = attention_head(&q2, &k, &v).unwrap();
        for (a, b) in o1.data().iter().zip(o2.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        // and every row is the column mean of V
        for i in 0..4 {
            assert!((o1.get(i, 0) - 4.0).abs() < 1e-12);
            assert!((o1.get(i, 1) - 5.0).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_rows_stay_in_value_hull() {
        let mut rng = RngState::new(44);
        let rand = |rows: usize, cols: usize, rng: &mut RngState| {
            let data: Vec<f64> = (0..rows * cols).map(|_| rng.uniform(-2.0, 2.0)).collect();
            Tensor2::from_vec(rows, cols, data).unwrap()
        };
        let q = rand(6, 3, &mut rng);
        let k = rand(6, 3, &mut rng);
        let v = rand(6, 3, &mut rng);
        let out = attention_head(&q, &k, &v).unwrap();
        for j in 0..3 {
            let (mut lo, mut hi) = (f64::MAX, f64::MIN);
            for i in 0..6 {
                lo = lo.min(v.get(i, j));
                hi = hi.max(v.get(i, j));
            }
            for i in 0..6 {
                assert!(out.get(i, j) >= lo - 1e-12 && out.get(i, j) <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn zero_network_predicts_zero_vectors() {
        let cfg = tiny_config();
        let mut params: ModelParams<f32> = init_params(&cfg, &mut RngState::new(3)).unwrap();
        params.zero_all();
        let (a, b) = tiny_frames(20);
        let (v1, v2, cache) = forward(&params, &a, &b, false).unwrap();
        assert!(v1.shifts().iter().all(|&v| v == 0.0));
        assert!(v2.shifts().iter().all(|&v| v == 0.0));
        assert!(cache.is_none());
    }

    #[test]
    fn forward_is_pure() {
        let cfg = tiny_config();
        let params: ModelParams<f32> = init_params(&cfg, &mut RngState::new(4)).unwrap();
        let (a, b) = tiny_frames(21);
        let (v1a, v2a, _) = forward(&params, &a, &b, false).unwrap();
        let (v1b, v2b, _) = forward(&params, &a, &b, false).unwrap();
        assert_eq!(v1a, v1b);
        assert_eq!(v2a, v2b);
    }

    #[test]
    fn forward_rejects_mismatched_frames() {
        let cfg = tiny_config();
        let params: ModelParams<f32> = init_params(&cfg, &mut RngState::new(5)).unwrap();
        let big = PhantomConfig {
            n_alines: 16,
            n_points: 4,
            ..PhantomConfig::default()
        };
        let f = crate::frames::generate_phantom(&big, &mut RngState::new(6)).unwrap();
        assert!(forward(&params, &f, &f, false).is_err());
    }

    #[test]
    fn forward_is_permutation_equivariant() {
        let cfg = tiny_config();
        let params: ModelParams<f64> =
            init_params::<f64>(&cfg, &mut RngState::new(7)).unwrap();
        let (a, b) = tiny_frames(22);
        let (a, b) = (a.cast::<f64>(), b.cast::<f64>());
        let (v1, v2, _) = forward(&params, &a, &b, false).unwrap();
        // a circular roll is a row permutation applied to both frames
        let k = 3;
        let (p1, p2, _) =
            forward(&params, &a.roll_alines(k), &b.roll_alines(k), false).unwrap();
        let n = cfg.n_alines;
        for i in 0..n {
            let src = (i + k as usize) % n;
            assert!((p1.get(i) - v1.get(src)).abs() < 1e-5);
            assert!((p2.get(i) - v2.get(src)).abs() < 1e-5);
        }
    }
}

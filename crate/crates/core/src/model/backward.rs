//! Reverse pass through the stacked cross-attention network.
//!
//! Mirrors the forward pass stage by stage in reverse, accumulating into
//! each parameter's gradient. Correctness is pinned by finite-difference
//! checks in 64-bit mode (unit tests here, full-pipeline checks in the
//! training module and acceptance suite).

use super::{
    extract_cols, ForwardCache, ModelParams, IDX_B_E, IDX_W_E, OFF_B_1, OFF_B_2, OFF_B_O,
    OFF_B_Q, OFF_LN1_GAMMA, OFF_LN2_GAMMA, OFF_W_1, OFF_W_2, OFF_W_O, OFF_W_Q,
};
use super::{add_into_cols, OFF_B_K, OFF_B_V, OFF_LN1_BETA, OFF_LN2_BETA, OFF_W_K, OFF_W_V};
use crate::error::{Error, Result};
use crate::numerics::{
    gelu_backward, layer_norm_rows_backward, matmul, matmul_backward, softmax_rows_backward,
    Real, Tensor2,
};

/// Sum over rows into a 1 x C tensor (bias gradient).
fn colsum<T: Real>(x: &Tensor2<T>) -> Tensor2<T> {
    let mut out = Tensor2::zeros(1, x.cols());
    for i in 0..x.rows() {
        let o = out.row_mut(0);
        for (ov, &xv) in o.iter_mut().zip(x.row(i)) {
            *ov += xv;
        }
    }
    out
}

/// Backward of a layer norm whose gradient tensors live in `params`.
fn ln_backward_into<T: Real>(
    params: &mut ModelParams<T>,
    cache: &crate::numerics::LayerNormCache<T>,
    gamma_idx: usize,
    beta_idx: usize,
    grad_y: &Tensor2<T>,
) -> Tensor2<T> {
    let cols = grad_y.cols();
    let mut grad_gamma = vec![T::ZERO; cols];
    let mut grad_beta = vec![T::ZERO; cols];
    let grad_x = layer_norm_rows_backward(
        cache,
        params.value(gamma_idx).data(),
        grad_y,
        &mut grad_gamma,
        &mut grad_beta,
    );
    params.add_grad(gamma_idx, &Tensor2::from_vec_unchecked(1, cols, grad_gamma));
    params.add_grad(beta_idx, &Tensor2::from_vec_unchecked(1, cols, grad_beta));
    grad_x
}

/// Accumulate the gradients of a scalar loss into `params.grad`, given the
/// loss gradients with respect to the two output vectors and the cache
/// from a training-mode forward pass.
pub fn backward<T: Real>(
    params: &mut ModelParams<T>,
    cache: &ForwardCache<T>,
    grad_vec1: &[T],
    grad_vec2: &[T],
) -> Result<()> {
    let cfg = params.config().clone();
    let n = cfg.n_alines;
    if grad_vec1.len() != n || grad_vec2.len() != n {
        return Err(Error::DimMismatch {
            op: "backward (output gradients)",
            left: (n, 2),
            right: (grad_vec1.len(), grad_vec2.len()),
        });
    }
    if cache.blocks.len() != cfg.n_blocks {
        return Err(Error::Data(
            "forward cache does not match model block count".into(),
        ));
    }
    let dk = cfg.head_dim();
    let scale = T::ONE / T::from_usize(dk).sqrt();
    let idx_w_h = params.idx_w_h();
    let idx_b_h = params.idx_b_h();
    let idx_final_gamma = params.idx_final_gamma();
    let idx_final_beta = params.idx_final_beta();

    let mut grad_out = Tensor2::zeros(n, 2);
    for i in 0..n {
        grad_out.set(i, 0, grad_vec1[i]);
        grad_out.set(i, 1, grad_vec2[i]);
    }

    // output head
    let (grad_head_input, grad_w_h) =
        matmul_backward(&cache.head_input, params.value(idx_w_h), &grad_out);
    params.add_grad(idx_w_h, &grad_w_h);
    params.add_grad(idx_b_h, &colsum(&grad_out));

    // final layer norm
    let mut grad_x = ln_backward_into(
        params,
        &cache.final_ln,
        idx_final_gamma,
        idx_final_beta,
        &grad_head_input,
    );

    for b in (0..cfg.n_blocks).rev() {
        let idx = |off| super::BLOCK_BASE + b * super::BLOCK_STRIDE + off;
        let cb = &cache.blocks[b];

        // second residual: x_out = x_mid + mlp_out
        let grad_mlp_out = grad_x.clone();
        let mut grad_x_mid = grad_x;

        let (grad_mlp_act, grad_w2) =
            matmul_backward(&cb.mlp_act, params.value(idx(OFF_W_2)), &grad_mlp_out);
        params.add_grad(idx(OFF_W_2), &grad_w2);
        params.add_grad(idx(OFF_B_2), &colsum(&grad_mlp_out));

        let grad_mlp_pre = gelu_backward(&cb.mlp_pre, &grad_mlp_act);

        let (grad_ln2_out, grad_w1) =
            matmul_backward(&cb.ln2_out, params.value(idx(OFF_W_1)), &grad_mlp_pre);
        params.add_grad(idx(OFF_W_1), &grad_w1);
        params.add_grad(idx(OFF_B_1), &colsum(&grad_mlp_pre));

        let ln2_dx = ln_backward_into(
            params,
            &cb.ln2,
            idx(OFF_LN2_GAMMA),
            idx(OFF_LN2_BETA),
            &grad_ln2_out,
        );
        grad_x_mid.add_assign(&ln2_dx);

        // first residual: x_mid = x_in + proj
        let grad_proj = grad_x_mid.clone();
        let mut grad_x_in = grad_x_mid;

        let (grad_attn_concat, grad_wo) =
            matmul_backward(&cb.attn_concat, params.value(idx(OFF_W_O)), &grad_proj);
        params.add_grad(idx(OFF_W_O), &grad_wo);
        params.add_grad(idx(OFF_B_O), &colsum(&grad_proj));

        let mut grad_q = Tensor2::zeros(n, cfg.embed_dim);
        let mut grad_k = Tensor2::zeros(n, cfg.embed_dim);
        let mut grad_v = Tensor2::zeros(n, cfg.embed_dim);
        for head in 0..cfg.n_heads {
            let lo = head * dk;
            let qh = extract_cols(&cb.q, lo, dk);
            let kh = extract_cols(&cb.k, lo, dk);
            let vh = extract_cols(&cb.v, lo, dk);
            let weights = &cb.attn_weights[head];

            let grad_oh = extract_cols(&grad_attn_concat, lo, dk);
            // out_h = weights · V_h
            let grad_weights = matmul(&grad_oh, &vh.transpose())?;
            let grad_vh = matmul(&weights.transpose(), &grad_oh)?;
            // weights = softmax(scale · Q_h·K_hᵀ)
            let mut grad_scores = softmax_rows_backward(weights, &grad_weights);
            for v in grad_scores.data_mut() {
                *v *= scale;
            }
            let grad_qh = matmul(&grad_scores, &kh)?;
            let grad_kh = matmul(&grad_scores.transpose(), &qh)?;

            add_into_cols(&mut grad_q, &grad_qh, lo);
            add_into_cols(&mut grad_k, &grad_kh, lo);
            add_into_cols(&mut grad_v, &grad_vh, lo);
        }

        let (gx_q, grad_wq) =
            matmul_backward(&cb.ln1_out, params.value(idx(OFF_W_Q)), &grad_q);
        params.add_grad(idx(OFF_W_Q), &grad_wq);
        params.add_grad(idx(OFF_B_Q), &colsum(&grad_q));
        let (gx_k, grad_wk) =
            matmul_backward(&cb.ln1_out, params.value(idx(OFF_W_K)), &grad_k);
        params.add_grad(idx(OFF_W_K), &grad_wk);
        params.add_grad(idx(OFF_B_K), &colsum(&grad_k));
        let (gx_v, grad_wv) =
            matmul_backward(&cb.ln1_out, params.value(idx(OFF_W_V)), &grad_v);
        params.add_grad(idx(OFF_W_V), &grad_wv);
        params.add_grad(idx(OFF_B_V), &colsum(&grad_v));

        let mut grad_ln1_out = gx_q;
        grad_ln1_out.add_assign(&gx_k);
        grad_ln1_out.add_assign(&gx_v);

        let ln1_dx = ln_backward_into(
            params,
            &cb.ln1,
            idx(OFF_LN1_GAMMA),
            idx(OFF_LN1_BETA),
            &grad_ln1_out,
        );
        grad_x_in.add_assign(&ln1_dx);
        grad_x = grad_x_in;
    }

    // embedding: x = tokens · W_E + b_E; input gradients are not needed
    let (_, grad_we) = matmul_backward(&cache.tokens, params.value(IDX_W_E), &grad_x);
    params.add_grad(IDX_W_E, &grad_we);
    params.add_grad(IDX_B_E, &colsum(&grad_x));

    Ok(())
}

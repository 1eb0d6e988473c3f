//! Forward/backward pairs for the fixed operation set the model needs.
//!
//! Accumulation order inside every operation is fixed (per output row), so
//! results are bit-identical whether the row loop runs serially or is
//! distributed over threads.

use super::{Parameter, Real, Tensor2};
use crate::error::{Error, Result};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Work threshold (multiply-adds) below which matmul stays on one thread.
#[cfg(feature = "parallel")]
const PAR_MATMUL_MIN_WORK: usize = 1 << 17;

#[inline]
fn matmul_row<T: Real>(a_row: &[T], b: &Tensor2<T>, out_row: &mut [T]) {
    out_row.fill(T::ZERO);
    for (k, &a_ik) in a_row.iter().enumerate() {
        let b_row = b.row(k);
        for (o, &b_kj) in out_row.iter_mut().zip(b_row) {
            *o += a_ik * b_kj;
        }
    }
}

/// Matrix product `a · b`.
pub fn matmul<T: Real>(a: &Tensor2<T>, b: &Tensor2<T>) -> Result<Tensor2<T>> {
    if a.cols() != b.rows() {
        return Err(Error::DimMismatch {
            op: "matmul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let (m, n) = (a.rows(), b.cols());
    let mut out = Tensor2::zeros(m, n);

    #[cfg(feature = "parallel")]
    {
        if m * a.cols() * n >= PAR_MATMUL_MIN_WORK && m > 1 {
            out.data_mut()
                .par_chunks_mut(n)
                .enumerate()
                .for_each(|(i, out_row)| matmul_row(a.row(i), b, out_row));
            return Ok(out);
        }
    }

    for i in 0..m {
        let (a_row, out_row) = (a.row(i), i);
        matmul_row(a_row, b, out.row_mut(out_row));
    }
    Ok(out)
}

/// Backward of `c = a · b`: returns `(dA, dB) = (dC·Bᵀ, Aᵀ·dC)`.
pub fn matmul_backward<T: Real>(
    a: &Tensor2<T>,
    b: &Tensor2<T>,
    grad_c: &Tensor2<T>,
) -> (Tensor2<T>, Tensor2<T>) {
    debug_assert_eq!(grad_c.shape(), (a.rows(), b.cols()));
    let grad_a = matmul(grad_c, &b.transpose()).expect("matmul_backward dA shapes");
    let grad_b = matmul(&a.transpose(), grad_c).expect("matmul_backward dB shapes");
    (grad_a, grad_b)
}

/// Row-wise softmax with max subtraction, so arbitrarily large inputs cannot
/// overflow.
pub fn softmax_rows<T: Real>(a: &Tensor2<T>) -> Tensor2<T> {
    let mut out = a.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().fold(row[0], |m, &v| m.max(v));
        let mut sum = T::ZERO;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Backward of row-wise softmax given its output `y`:
/// `dx = y ⊙ (dy − ⟨dy, y⟩_row)`.
pub fn softmax_rows_backward<T: Real>(y: &Tensor2<T>, grad_y: &Tensor2<T>) -> Tensor2<T> {
    debug_assert_eq!(y.shape(), grad_y.shape());
    let mut out = Tensor2::zeros(y.rows(), y.cols());
    for i in 0..y.rows() {
        let yr = y.row(i);
        let gr = grad_y.row(i);
        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
        for ((o, &yv), &gv) in out.row_mut(i).iter_mut().zip(yr).zip(gr) {
            *o = yv * (gv - dot);
        }
    }
    out
}

/// Per-row statistics saved by [`layer_norm_rows`] for its backward pass.
#[derive(Debug, Clone)]
pub struct LayerNormCache<T> {
    /// Normalized activations `(x − μ) / √(σ² + ε)`, before scale and shift.
    pub normalized: Tensor2<T>,
    /// `1 / √(σ² + ε)` per row.
    pub inv_std: Vec<T>,
}

/// Row-wise layer normalization with population (biased) variance:
/// `y = (x − μ) / √(σ² + ε) · γ + β`.
pub fn layer_norm_rows<T: Real>(
    a: &Tensor2<T>,
    gamma: &[T],
    beta: &[T],
    eps: T,
) -> (Tensor2<T>, LayerNormCache<T>) {
    assert_eq!(gamma.len(), a.cols(), "gamma length must equal cols");
    assert_eq!(beta.len(), a.cols(), "beta length must equal cols");
    assert!(eps >= T::ZERO);
    let cols_t = T::from_usize(a.cols());
    let mut normalized = Tensor2::zeros(a.rows(), a.cols());
    let mut out = Tensor2::zeros(a.rows(), a.cols());
    let mut inv_std = Vec::with_capacity(a.rows());
    for i in 0..a.rows() {
        let row = a.row(i);
        let mean: T = row.iter().copied().sum::<T>() / cols_t;
        let var: T = row
            .iter()
            .map(|&v| (v - mean) * (v - mean))
            .sum::<T>()
            / cols_t;
        let istd = T::ONE / (var + eps).sqrt();
        inv_std.push(istd);
        let nrow = normalized.row_mut(i);
        for (n, &v) in nrow.iter_mut().zip(row) {
            *n = (v - mean) * istd;
        }
        let orow = out.row_mut(i);
        for j in 0..a.cols() {
            orow[j] = normalized.get(i, j) * gamma[j] + beta[j];
        }
    }
    (out, LayerNormCache { normalized, inv_std })
}

/// Backward of [`layer_norm_rows`]. Returns `dx` and accumulates `dγ`, `dβ`
/// (summed over rows) into the provided slices.
pub fn layer_norm_rows_backward<T: Real>(
    cache: &LayerNormCache<T>,
    gamma: &[T],
    grad_y: &Tensor2<T>,
    grad_gamma: &mut [T],
    grad_beta: &mut [T],
) -> Tensor2<T> {
    let xhat = &cache.normalized;
    let cols = xhat.cols();
    let cols_t = T::from_usize(cols);
    debug_assert_eq!(grad_y.shape(), xhat.shape());
    let mut grad_x = Tensor2::zeros(xhat.rows(), cols);
    for i in 0..xhat.rows() {
        let gy = grad_y.row(i);
        let xh = xhat.row(i);
        // dxhat = dy * gamma; dx = istd * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
        let mut mean_dxhat = T::ZERO;
        let mut mean_dxhat_xhat = T::ZERO;
        for j in 0..cols {
            let dxhat = gy[j] * gamma[j];
            mean_dxhat += dxhat;
            mean_dxhat_xhat += dxhat * xh[j];
            grad_gamma[j] += gy[j] * xh[j];
            grad_beta[j] += gy[j];
        }
        mean_dxhat /= cols_t;
        mean_dxhat_xhat /= cols_t;
        let istd = cache.inv_std[i];
        let gx = grad_x.row_mut(i);
        for j in 0..cols {
            let dxhat = gy[j] * gamma[j];
            gx[j] = istd * (dxhat - mean_dxhat - xh[j] * mean_dxhat_xhat);
        }
    }
    grad_x
}

// GELU, tanh approximation: 0.5 x (1 + tanh(√(2/π) (x + 0.044715 x³))).
const GELU_SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044715;

#[inline]
fn gelu_scalar<T: Real>(x: T) -> T {
    let c = T::from_f64(GELU_SQRT_2_OVER_PI);
    let k = T::from_f64(GELU_CUBIC);
    let half = T::from_f64(0.5);
    let inner = c * (x + k * x * x * x);
    half * x * (T::ONE + inner.tanh())
}

#[inline]
fn gelu_grad_scalar<T: Real>(x: T) -> T {
    let c = T::from_f64(GELU_SQRT_2_OVER_PI);
    let k = T::from_f64(GELU_CUBIC);
    let half = T::from_f64(0.5);
    let three = T::from_f64(3.0);
    let inner = c * (x + k * x * x * x);
    let t = inner.tanh();
    let sech2 = T::ONE - t * t;
    half * (T::ONE + t) + half * x * sech2 * c * (T::ONE + three * k * x * x)
}

/// Elementwise GELU (tanh approximation).
pub fn gelu<T: Real>(a: &Tensor2<T>) -> Tensor2<T> {
    a.map(gelu_scalar)
}

/// Backward of [`gelu`] given the pre-activation input.
pub fn gelu_backward<T: Real>(input: &Tensor2<T>, grad_y: &Tensor2<T>) -> Tensor2<T> {
    debug_assert_eq!(input.shape(), grad_y.shape());
    let mut out = Tensor2::zeros(input.rows(), input.cols());
    for ((o, &x), &g) in out
        .data_mut()
        .iter_mut()
        .zip(input.data())
        .zip(grad_y.data())
    {
        *o = g * gelu_grad_scalar(x);
    }
    out
}

/// One SGD step over a parameter set: `value ← value − lr · grad`, then
/// gradients are zeroed.
pub fn sgd_step<T: Real, P: super::ParameterSet<T> + ?Sized>(params: &mut P, lr: T) {
    for k in 0..params.n_params() {
        let p: &mut Parameter<T> = params.param_mut(k);
        let g = p.grad.data().to_vec();
        for (v, gv) in p.value.data_mut().iter_mut().zip(g) {
            *v -= lr * gv;
        }
        p.zero_grad();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(rows: usize, cols: usize, v: &[f64]) -> Tensor2<f64> {
        Tensor2::from_vec(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let eye = t2(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let b = t2(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(matmul(&eye, &b).unwrap(), b);
    }

    #[test]
    fn matmul_hand_case() {
        let a = t2(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = t2(2, 1, &[1.0, 1.0]);
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_zero_annihilates() {
        let z = Tensor2::<f64>::zeros(2, 3);
        let b = t2(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let c = matmul(&z, &b).unwrap();
        assert!(c.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_shape_error_reports_both_shapes() {
        let a = Tensor2::<f64>::zeros(2, 3);
        let b = Tensor2::<f64>::zeros(2, 2);
        match matmul(&a, &b) {
            Err(Error::DimMismatch { left, right, .. }) => {
                assert_eq!(left, (2, 3));
                assert_eq!(right, (2, 2));
            }
            other => panic!("expected DimMismatch, got {other:?}"),
        }
    }

    #[test]
    fn softmax_symmetry() {
        let s = softmax_rows(&t2(1, 2, &[0.0, 0.0]));
        assert!((s.get(0, 0) - 0.5).abs() < 1e-12);
        assert!((s.get(0, 1) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn softmax_large_inputs_stable() {
        let s = softmax_rows(&t2(1, 3, &[1000.0, 1000.0, 1000.0]));
        for j in 0..3 {
            assert!((s.get(0, j) - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_hand_case() {
        // [0, ln 3] -> [1/4, 3/4]
        let s = softmax_rows(&t2(1, 2, &[0.0, 3.0f64.ln()]));
        assert!((s.get(0, 0) - 0.25).abs() < 1e-12);
        assert!((s.get(0, 1) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let (y, _) = layer_norm_rows(&t2(1, 4, &[3.0, 3.0, 3.0, 3.0]), &[1.0; 4], &[0.0; 4], 1e-5);
        for &v in y.data() {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn layer_norm_hand_case() {
        // [1,2,3], eps=0, population variance 2/3 -> [-sqrt(3/2), 0, +sqrt(3/2)]
        let (y, _) = layer_norm_rows(&t2(1, 3, &[1.0, 2.0, 3.0]), &[1.0; 3], &[0.0; 3], 0.0);
        let expect = (1.5f64).sqrt();
        assert!((y.get(0, 0) + expect).abs() < 1e-12);
        assert!(y.get(0, 1).abs() < 1e-12);
        assert!((y.get(0, 2) - expect).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_gamma_zero_gives_beta() {
        let (y, _) = layer_norm_rows(&t2(1, 3, &[1.0, 5.0, 9.0]), &[0.0; 3], &[2.5; 3], 1e-5);
        for &v in y.data() {
            assert!((v - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn gelu_fixed_points() {
        let y = gelu(&t2(1, 3, &[0.0, 10.0, 1.0]));
        assert_eq!(y.get(0, 0), 0.0);
        assert!((y.get(0, 1) - 10.0).abs() < 1e-6);
        assert!((y.get(0, 2) - 0.8412).abs() < 1e-4);
    }

    #[test]
    fn sgd_hand_case() {
        let mut params = vec![Parameter::new(t2(1, 1, &[1.0]))];
        params[0].grad.set(0, 0, 0.5);
        sgd_step(params.as_mut_slice(), 0.1);
        assert!((params[0].value.get(0, 0) - 0.95).abs() < 1e-12);
        assert_eq!(params[0].grad.get(0, 0), 0.0);
    }

    #[test]
    fn sgd_zero_lr_and_zero_grad_are_identity() {
        let mut params = vec![Parameter::new(t2(1, 2, &[1.0, -2.0]))];
        params[0].grad.set(0, 0, 3.0);
        sgd_step(params.as_mut_slice(), 0.0);
        assert_eq!(params[0].value.data(), &[1.0, -2.0]);
        // grad zeroed by the step; a second step with zero grads is a no-op
        sgd_step(params.as_mut_slice(), 0.1);
        assert_eq!(params[0].value.data(), &[1.0, -2.0]);
    }
}

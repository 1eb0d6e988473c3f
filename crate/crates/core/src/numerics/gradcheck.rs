//! Finite-difference gradient oracle.
//!
//! The oracle is independent of every analytic backward pass in this crate:
//! it only needs a scalar function re-evaluated under coordinate
//! perturbations. Gradient tests run it in `f64`.

use super::{Parameter, Real, Tensor2};

/// Indexed access to an ordered collection of [`Parameter`]s.
///
/// `Vec<Parameter<T>>`, slices, and the model's parameter store all expose
/// this, so the optimizer and the finite-difference oracle work on any of
/// them.
pub trait ParameterSet<T: Real> {
    fn n_params(&self) -> usize;
    fn param(&self, k: usize) -> &Parameter<T>;
    fn param_mut(&mut self, k: usize) -> &mut Parameter<T>;

    fn zero_grads(&mut self) {
        for k in 0..self.n_params() {
            self.param_mut(k).zero_grad();
        }
    }
}

impl<T: Real> ParameterSet<T> for [Parameter<T>] {
    fn n_params(&self) -> usize {
        self.len()
    }
    fn param(&self, k: usize) -> &Parameter<T> {
        &self[k]
    }
    fn param_mut(&mut self, k: usize) -> &mut Parameter<T> {
        &mut self[k]
    }
}

impl<T: Real> ParameterSet<T> for Vec<Parameter<T>> {
    fn n_params(&self) -> usize {
        self.len()
    }
    fn param(&self, k: usize) -> &Parameter<T> {
        &self[k]
    }
    fn param_mut(&mut self, k: usize) -> &mut Parameter<T> {
        &mut self[k]
    }
}

/// Central finite differences `(f(θ+h·e) − f(θ−h·e)) / 2h` for every
/// coordinate of every parameter. Returns one gradient tensor per parameter,
/// in set order. The parameter values are restored on return.
pub fn finite_difference_grad<P, F>(params: &mut P, f: F, h: f64) -> Vec<Tensor2<f64>>
where
    P: ParameterSet<f64> + ?Sized,
    F: Fn(&P) -> f64,
{
    let mut grads = Vec::with_capacity(params.n_params());
    for k in 0..params.n_params() {
        let (rows, cols) = params.param(k).value.shape();
        let mut g = Tensor2::zeros(rows, cols);
        for idx in 0..rows * cols {
            let orig = params.param(k).value.data()[idx];
            params.param_mut(k).value.data_mut()[idx] = orig + h;
            let f_plus = f(params);
            params.param_mut(k).value.data_mut()[idx] = orig - h;
            let f_minus = f(params);
            params.param_mut(k).value.data_mut()[idx] = orig;
            g.data_mut()[idx] = (f_plus - f_minus) / (2.0 * h);
        }
        grads.push(g);
    }
    grads
}

/// Maximum relative error between analytic and numeric gradients, with the
/// denominator floored at `floor` so that near-zero pairs compare in
/// absolute terms.
pub fn max_relative_error(analytic: &[Tensor2<f64>], numeric: &[Tensor2<f64>], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let mut worst = 0.0f64;
    for (a, n) in analytic.iter().zip(numeric) {
        assert_eq!(a.shape(), n.shape());
        for (&av, &nv) in a.data().iter().zip(n.data()) {
            let denom = av.abs().max(nv.abs()).max(floor);
            worst = worst.max((av - nv).abs() / denom);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_derivative() {
        // f(w) = w^2 at w = 3 -> 6
        let mut params = vec![Parameter::new(
            Tensor2::from_vec(1, 1, vec![3.0f64]).unwrap(),
        )];
        let g = finite_difference_grad(
            &mut params,
            |p: &Vec<Parameter<f64>>| {
                let w = p[0].value.get(0, 0);
                w * w
            },
            1e-4,
        );
        assert!((g[0].get(0, 0) - 6.0).abs() < 1e-6);
    }

    #[test]
    fn constant_function_has_zero_grad() {
        let mut params = vec![Parameter::new(
            Tensor2::from_vec(2, 2, vec![1.0f64, 2.0, 3.0, 4.0]).unwrap(),
        )];
        let g = finite_difference_grad(&mut params, |_: &Vec<Parameter<f64>>| 7.5, 1e-4);
        assert!(g[0].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_sum_has_unit_grads() {
        let mut params = vec![Parameter::new(
            Tensor2::from_vec(1, 3, vec![0.3f64, -1.2, 5.0]).unwrap(),
        )];
        let g = finite_difference_grad(
            &mut params,
            |p: &Vec<Parameter<f64>>| p[0].value.data().iter().sum(),
            1e-5,
        );
        for &v in g[0].data() {
            assert!((v - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn values_restored_after_fd() {
        let mut params = vec![Parameter::new(
            Tensor2::from_vec(1, 2, vec![1.5f64, -0.5]).unwrap(),
        )];
        let before = params[0].value.clone();
        let _ = finite_difference_grad(
            &mut params,
            |p: &Vec<Parameter<f64>>| p[0].value.data().iter().map(|v| v * v).sum(),
            1e-5,
        );
        assert_eq!(params[0].value, before);
    }
}

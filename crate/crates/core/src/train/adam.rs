use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// First and second moment estimates for every parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Matrix<T>>,
    pub v: Vec<Matrix<T>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr: f64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(shapes: impl IntoIterator<Item = (usize, usize)>, lr: f64) -> Self {
        let (m, v): (Vec<_>, Vec<_>) = shapes.into_iter().map(|(r, c)| (Matrix::zeros(r, c), Matrix::zeros(r, c))).unzip();
        Self { m, v, step: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8, lr }
    }

    pub fn for_params(params: &[Matrix<T>], lr: f64) -> Self {
        Self::new(params.iter().map(Matrix::shape), lr)
    }
}

/// One bias-corrected Adam update applied in place.
pub fn adam_step<T: Scalar>(params: &mut [Matrix<T>], grads: &[Matrix<T>], state: &mut AdamState<T>) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape("parameter, gradient and moment counts differ".into()));
    }
    if let Some(k) = (0..params.len()).find(|&k| params[k].shape() != grads[k].shape() || params[k].shape() != state.m[k].shape()) {
        return Err(Error::Shape(format!("tensor {k}: parameter, gradient and moment shapes differ")));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::lit(state.beta1), T::lit(state.beta2));
    let c1 = T::lit(1.0 - state.beta1.powi(t));
    let c2 = T::lit(1.0 - state.beta2.powi(t));
    let (lr, eps) = (T::lit(state.lr), T::lit(state.eps));
    for k in 0..params.len() {
        let p = params[k].as_mut_slice();
        let g = grads[k].as_slice();
        let m = state.m[k].as_mut_slice();
        let v = state.v[k].as_mut_slice();
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (T::one() - b1) * g[i];
            v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Euclidean norm over all gradient entries.
pub fn global_norm<T: Scalar>(grads: &[Matrix<T>]) -> T {
    grads.iter().map(Matrix::sum_squares).sum::<T>().sqrt()
}

/// Rescales `grads` so their global norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut [Matrix<T>], max_norm: f64) -> T {
    let norm = global_norm(grads);
    let max = T::lit(max_norm);
    if norm > max {
        let s = max / norm;
        for g in grads.iter_mut() {
            g.scale_assign(s);
        }
    }
    norm
}

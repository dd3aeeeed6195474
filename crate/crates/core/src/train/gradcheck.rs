use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::fit::sample_gradient;
use super::loss::Loss;
use super::Prepared;
use crate::error::Result;
use crate::matrix::{CsrMatrix, Matrix};
use crate::model::{forward, init_params, ModelConfig, ModelGraphs, PvcgnParams};

/// Denominator floor of the relative error, so coordinates whose true
/// gradient is essentially zero are judged on absolute agreement.
const REL_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckConfig {
    pub n_stations: usize,
    pub d: usize,
    pub n_in: usize,
    pub n_out: usize,
    /// Minimum number of coordinates compared; every tensor contributes one.
    pub coords: usize,
    pub h: f64,
    pub seed: u64,
    pub loss: Loss,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { n_stations: 6, d: 8, n_in: 2, n_out: 2, coords: 200, h: 1e-5, seed: 0, loss: Loss::Mse }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub loss: Loss,
    pub coords: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// `name[index]` of the coordinate with the largest relative error.
    pub worst: String,
    pub tol: f64,
    pub passed: bool,
}

/// `(f(x + h) − f(x − h)) / 2h` along entry `i` of tensor `k`; `x` is
/// restored afterwards.
pub fn central_difference(
    x: &mut [Matrix<f64>],
    k: usize,
    i: usize,
    h: f64,
    mut f: impl FnMut(&[Matrix<f64>]) -> Result<f64>,
) -> Result<f64> {
    let orig = x[k].as_slice()[i];
    x[k].as_mut_slice()[i] = orig + h;
    let plus = f(x);
    x[k].as_mut_slice()[i] = orig - h;
    let minus = f(x);
    x[k].as_mut_slice()[i] = orig;
    Ok((plus? - minus?) / (2.0 * h))
}

fn random_graph(rng: &mut ChaCha8Rng, n: usize, per_row: usize, diagonal: bool) -> CsrMatrix<f64> {
    let mut trip = Vec::new();
    for i in 0..n {
        let mut cols = BTreeSet::new();
        while cols.len() < per_row.min(n - usize::from(!diagonal)) {
            let j = rng.random_range(0..n);
            if diagonal || j != i {
                cols.insert(j);
            }
        }
        let w: Vec<f64> = cols.iter().map(|_| rng.random_range(0.1..1.0)).collect();
        let s: f64 = w.iter().sum();
        trip.extend(cols.into_iter().zip(w).map(|(j, w)| (i, j, w / s)));
    }
    CsrMatrix::from_triplets(n, trip).expect("distinct columns")
}

fn line_graph(n: usize) -> CsrMatrix<f64> {
    let mut trip = Vec::new();
    for i in 0..n {
        let nb: Vec<usize> = [i.checked_sub(1), (i + 1 < n).then_some(i + 1)].into_iter().flatten().collect();
        trip.extend(nb.iter().map(|&j| (i, j, 1.0 / nb.len() as f64)));
    }
    CsrMatrix::from_triplets(n, trip).expect("line")
}

/// Compares reverse-mode gradients of the full model against central
/// differences on a small random instance in double precision.
pub fn grad_check(config: &GradCheckConfig, tol: f64) -> Result<GradCheckReport> {
    let n = config.n_stations;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let graphs = ModelGraphs::from_matrices(
        n,
        Some(line_graph(n)),
        Some(random_graph(&mut rng, n, 2, false)),
        Some(random_graph(&mut rng, n, 2, true)),
    )?;
    let model = ModelConfig { n_stations: n, d: config.d, ..ModelConfig::default() };
    let mut params: PvcgnParams<f64> = init_params(&model, config.seed)?;
    for t in params.tensors.iter_mut().filter(|t| t.rows() == 1) {
        *t = Matrix::from_fn(1, t.cols(), |_, _| rng.random_range(-0.3..0.3));
    }
    let frame = |rng: &mut ChaCha8Rng| Matrix::from_fn(n, model.channels, |_, _| rng.random_range(-1.5..1.5));
    let inputs: Vec<Matrix<f64>> = (0..config.n_in).map(|_| frame(&mut rng)).collect();
    let targets: Vec<Matrix<f64>> = match config.loss {
        Loss::Mse => (0..config.n_out).map(|_| frame(&mut rng)).collect(),
        // keep every residual at least 0.2 away from the kink of |·|
        Loss::Mae => forward(&inputs, &graphs, &params, config.n_out)?
            .into_iter()
            .map(|p| {
                Matrix::from_fn(p.rows(), p.cols(), |i, j| {
                    let off = rng.random_range(0.2..0.7);
                    if rng.random::<bool>() {
                        p[(i, j)] + off
                    } else {
                        p[(i, j)] - off
                    }
                })
            })
            .collect(),
    };
    let sample = Prepared { inputs, targets, t_anchor: 0 };
    let (_, analytic) = sample_gradient(&params, &graphs, &sample, config.loss, &[])?;

    let mut coords: BTreeSet<(usize, usize)> = BTreeSet::new();
    for (k, t) in params.tensors.iter().enumerate() {
        coords.insert((k, rng.random_range(0..t.len())));
    }
    let total: usize = params.tensors.iter().map(Matrix::len).sum();
    while coords.len() < config.coords.min(total) {
        let k = rng.random_range(0..params.tensors.len());
        coords.insert((k, rng.random_range(0..params.tensors[k].len())));
    }

    let PvcgnParams { config: cfg, layout, names, mut tensors } = params;
    let mut eval = |x: &[Matrix<f64>]| -> Result<f64> {
        let p = PvcgnParams { config: cfg.clone(), layout: layout.clone(), names: names.clone(), tensors: x.to_vec() };
        config.loss.eval(&forward(&sample.inputs, &graphs, &p, config.n_out)?, &sample.targets)
    };
    let (mut max_rel, mut max_abs, mut worst) = (0.0f64, 0.0f64, String::new());
    for &(k, i) in &coords {
        let numeric = central_difference(&mut tensors, k, i, config.h, &mut eval)?;
        let a = analytic[k].as_slice()[i];
        let abs = (a - numeric).abs();
        let rel = abs / a.abs().max(numeric.abs()).max(REL_FLOOR);
        max_abs = max_abs.max(abs);
        if rel > max_rel || worst.is_empty() {
            max_rel = rel;
            worst = format!("{}[{i}]", names[k]);
        }
    }
    Ok(GradCheckReport {
        loss: config.loss,
        coords: coords.len(),
        max_rel_err: max_rel,
        max_abs_err: max_abs,
        worst,
        tol,
        passed: max_rel <= tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_toy_is_exact() {
        // f(x) = Σ c_i x_i², ∇f = 2 c_i x_i
        let c = [0.5, -2.0, 3.0, 1.25];
        let mut x = vec![Matrix::from_vec(2, 2, vec![0.3, -1.2, 2.0, 0.7]).unwrap()];
        let f = |x: &[Matrix<f64>]| Ok(x[0].as_slice().iter().zip(&c).map(|(v, c)| c * v * v).sum::<f64>());
        let mut max_rel = 0.0f64;
        for i in 0..4 {
            let num = central_difference(&mut x, 0, i, 1e-5, f).unwrap();
            let ana = 2.0 * c[i] * x[0].as_slice()[i];
            max_rel = max_rel.max((num - ana).abs() / ana.abs());
        }
        assert!(max_rel < 1e-9, "{max_rel}");
        assert_eq!(x[0].as_slice(), &[0.3, -1.2, 2.0, 0.7]);
    }

    #[test]
    fn small_model_passes() {
        let cfg = GradCheckConfig { n_stations: 3, d: 4, coords: 60, ..GradCheckConfig::default() };
        let r = grad_check(&cfg, 1e-6).unwrap();
        assert!(r.passed, "{r:?}");
        assert!(r.coords >= 60);
    }
}

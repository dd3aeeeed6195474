use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::adam::{adam_step, clip_global_norm, AdamState};
use super::loss::Loss;
use super::{lr_schedule, Prepared, TrainConfig};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{bind_params, forward_tape, ModelGraphs, PvcgnParams, TapeCells};
use crate::scalar::Scalar;

/// Loss and parameter gradients for one sample. `teacher[k]` feeds the true
/// frame `k − 1` into decoder step `k`.
pub fn sample_gradient<T: Scalar>(
    params: &PvcgnParams<T>,
    graphs: &ModelGraphs<T>,
    sample: &Prepared<T>,
    loss: Loss,
    teacher: &[bool],
) -> Result<(T, Vec<Matrix<T>>)> {
    let mut tape = Tape::new();
    let (w, flat) = bind_params(&mut tape, params, true);
    let xs: Vec<Var> = sample.inputs.iter().map(|x| tape.constant_ref(x)).collect();
    let ys: Vec<Var> = sample.targets.iter().map(|y| tape.constant_ref(y)).collect();
    let forced: Vec<Option<Var>> =
        (0..ys.len()).map(|k| (k > 0 && teacher.get(k).copied().unwrap_or(false)).then(|| ys[k - 1])).collect();
    let cells = TapeCells::new(graphs, &params.config);
    let preds = forward_tape(&mut tape, &cells, &w, params, &xs, ys.len(), &forced)?;
    let l = loss.record(&mut tape, &preds, &ys)?;
    let value = tape.value(l)[(0, 0)];
    if !value.is_finite() {
        return Err(Error::Numerics("non-finite loss".into()));
    }
    let mut g = tape.backward(l)?;
    let grads = flat.iter().zip(&params.tensors).map(|(&v, t)| g.take_or_zeros(v, t.rows(), t.cols())).collect();
    Ok((value, grads))
}

/// Sums per-sample gradients by a pairwise tree whose shape depends only on
/// the number of items, so the result is independent of thread scheduling.
pub fn tree_sum<T: Scalar>(mut items: Vec<Vec<Matrix<T>>>) -> Option<Vec<Matrix<T>>> {
    while items.len() > 1 {
        let mut next = Vec::with_capacity(items.len().div_ceil(2));
        let mut it = items.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                for (x, y) in a.iter_mut().zip(&b) {
                    x.add_assign(y);
                }
            }
            next.push(a);
        }
        items = next;
    }
    items.pop()
}

/// Normalized-space predictions for each sample.
pub fn predict<T: Scalar>(
    params: &PvcgnParams<T>,
    graphs: &ModelGraphs<T>,
    samples: &[Prepared<T>],
) -> Result<Vec<Vec<Matrix<T>>>> {
    samples.par_iter().map(|s| crate::model::forward(&s.inputs, graphs, params, s.targets.len())).collect()
}

fn mean_loss<T: Scalar>(params: &PvcgnParams<T>, graphs: &ModelGraphs<T>, samples: &[Prepared<T>]) -> Result<f64> {
    let losses: Vec<f64> = samples
        .par_iter()
        .map(|s| {
            let p = crate::model::forward(&s.inputs, graphs, params, s.targets.len())?;
            Ok(Loss::Mae.eval(&p, &s.targets)?.as_f64())
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Mean per-sample MAE seen during the epoch's updates.
    pub train_mae: f64,
    /// `NaN` when there is no validation split.
    pub val_mae: f64,
    pub wall_seconds: f64,
    /// Mean gradient norm before clipping.
    pub grad_norm: f64,
}

impl EpochLog {
    pub const CSV_HEADER: &'static str = "epoch,lr,train_mae,val_mae,wall_seconds,grad_norm";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:.8},{:.8},{:.3},{:.6}",
            self.epoch, self.lr, self.train_mae, self.val_mae, self.wall_seconds, self.grad_norm
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    /// Parameters from the epoch with the lowest selection score.
    pub best: PvcgnParams<T>,
    pub best_epoch: usize,
    /// Validation MAE of `best`, or its train MAE without a validation split.
    pub best_score: f64,
    pub last: PvcgnParams<T>,
    pub log: Vec<EpochLog>,
}

/// Mini-batch Adam on the MAE objective. Per-sample gradients run in
/// parallel; batches are averaged, clipped to `grad_clip_norm` and applied.
/// The parameters with the lowest validation MAE (train MAE when `val` is
/// empty) are returned as `best`.
pub fn train<T: Scalar>(
    init: PvcgnParams<T>,
    graphs: &ModelGraphs<T>,
    train_set: &[Prepared<T>],
    val_set: &[Prepared<T>],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Argument("empty training split".into()));
    }
    let mut params = init;
    let mut adam = AdamState::for_params(&params.tensors, config.lr0);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best: Option<(f64, usize, PvcgnParams<T>)> = None;
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let start = Instant::now();
        adam.lr = lr_schedule(epoch, config);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut norm_sum, mut batches) = (0.0, 0.0, 0usize);
        for batch in order.chunks(config.batch_size) {
            let teachers: Vec<Vec<bool>> = batch
                .iter()
                .map(|&i| {
                    let m = train_set[i].targets.len();
                    if config.scheduled_sampling > 0.0 {
                        (0..m).map(|_| rng.random::<f64>() < config.scheduled_sampling).collect()
                    } else {
                        vec![false; m]
                    }
                })
                .collect();
            let results: Vec<(T, Vec<Matrix<T>>)> = batch
                .par_iter()
                .zip(teachers.par_iter())
                .map(|(&i, tf)| sample_gradient(&params, graphs, &train_set[i], Loss::Mae, tf))
                .collect::<Result<_>>()
                .map_err(|e| match e {
                    Error::Numerics(msg) => Error::Numerics(format!("training diverged in epoch {epoch}: {msg}")),
                    other => other,
                })?;
            let (losses, grads): (Vec<T>, Vec<_>) = results.into_iter().unzip();
            loss_sum += losses.iter().map(|l| l.as_f64()).sum::<f64>();
            let mut grad = tree_sum(grads).expect("nonempty batch");
            let inv = T::one() / T::lit(batch.len() as f64);
            for g in grad.iter_mut() {
                g.scale_assign(inv);
            }
            norm_sum += clip_global_norm(&mut grad, config.grad_clip_norm).as_f64();
            batches += 1;
            adam_step(&mut params.tensors, &grad, &mut adam)?;
        }
        if !params.all_finite() {
            return Err(Error::Numerics(format!("training diverged in epoch {epoch}: non-finite parameters")));
        }
        let train_mae = loss_sum / train_set.len() as f64;
        let val_mae = if val_set.is_empty() { f64::NAN } else { mean_loss(&params, graphs, val_set)? };
        let entry = EpochLog {
            epoch,
            lr: adam.lr,
            train_mae,
            val_mae,
            wall_seconds: start.elapsed().as_secs_f64(),
            grad_norm: norm_sum / batches as f64,
        };
        on_epoch(&entry);
        let score = if val_set.is_empty() { train_mae } else { val_mae };
        if best.as_ref().is_none_or(|b| score < b.0) {
            best = Some((score, epoch, params.clone()));
        }
        log.push(entry);
    }
    let (best_score, best_epoch, best) = best.expect("at least one epoch");
    Ok(TrainOutcome { best, best_epoch, best_score, last: params, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ModelConfig};

    fn tiny() -> (ModelGraphs<f64>, PvcgnParams<f64>, Vec<Prepared<f64>>) {
        let n = 3;
        let w = crate::matrix::CsrMatrix::from_triplets(n, vec![(0, 1, 1.0), (1, 0, 1.0), (2, 1, 1.0)]).unwrap();
        let g = ModelGraphs::from_matrices(n, Some(w), None, None).unwrap();
        let cfg = ModelConfig { n_stations: n, d: 6, ..ModelConfig::default() };
        let p = init_params(&cfg, 1).unwrap();
        let samples = (0..5)
            .map(|s| Prepared {
                inputs: (0..2).map(|k| Matrix::from_fn(n, 2, |i, c| ((s + k + i + c) as f64 * 0.4).sin())).collect(),
                targets: (0..2).map(|k| Matrix::from_fn(n, 2, |i, c| ((s * k + i + 2 * c) as f64 * 0.3).cos())).collect(),
                t_anchor: s,
            })
            .collect();
        (g, p, samples)
    }

    #[test]
    fn tree_sum_equals_sequential_on_integers() {
        let items: Vec<Vec<Matrix<f64>>> = (0..7).map(|k| vec![Matrix::filled(1, 2, k as f64)]).collect();
        assert_eq!(tree_sum(items).unwrap()[0].as_slice(), &[21.0, 21.0]);
        assert!(tree_sum::<f64>(vec![]).is_none());
    }

    #[test]
    fn teacher_forcing_changes_only_later_steps() {
        let (g, p, s) = tiny();
        let (a, _) = sample_gradient(&p, &g, &s[0], Loss::Mae, &[false, false]).unwrap();
        let (b, _) = sample_gradient(&p, &g, &s[0], Loss::Mae, &[false, true]).unwrap();
        let (c, _) = sample_gradient(&p, &g, &s[0], Loss::Mae, &[true, false]).unwrap();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let (g, p, s) = tiny();
        let cfg = TrainConfig { epochs: 15, batch_size: 2, lr0: 0.01, seed: 3, ..TrainConfig::default() };
        let a = train(p.clone(), &g, &s, &s[..2], &cfg, |_| {}).unwrap();
        let b = train(p, &g, &s, &s[..2], &cfg, |_| {}).unwrap();
        assert_eq!(a.last.tensors, b.last.tensors);
        assert_eq!(a.best.tensors, b.best.tensors);
        assert!(a.log.last().unwrap().train_mae < a.log[0].train_mae);
        let best = a.log.iter().map(|e| e.val_mae).fold(f64::INFINITY, f64::min);
        assert_eq!(a.best_score, best);
        assert_eq!(a.log[a.best_epoch].val_mae, best);
    }

    #[test]
    fn empty_split_rejected() {
        let (g, p, _) = tiny();
        assert!(matches!(train(p, &g, &[], &[], &TrainConfig::default(), |_| {}), Err(Error::Argument(_))));
    }
}

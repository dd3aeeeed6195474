use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Loss {
    /// Mean absolute error, the training objective.
    #[default]
    Mae,
    /// Mean squared error, a smooth surrogate for gradient checks.
    Mse,
}

fn check_pairs<T: Scalar>(pred: &[Matrix<T>], target: &[Matrix<T>]) -> Result<usize> {
    if pred.len() != target.len() {
        return Err(Error::Shape(format!("{} predicted frames vs {} targets", pred.len(), target.len())));
    }
    let mut count = 0;
    for (p, t) in pred.iter().zip(target) {
        if p.shape() != t.shape() {
            return Err(Error::Shape(format!("frame {:?} vs {:?}", p.shape(), t.shape())));
        }
        count += p.len();
    }
    if count == 0 {
        return Err(Error::Shape("loss over zero entries".into()));
    }
    Ok(count)
}

/// Mean of `|pred − target|` over every entry of every frame.
pub fn mae_loss<T: Scalar>(pred: &[Matrix<T>], target: &[Matrix<T>]) -> Result<T> {
    let count = check_pairs(pred, target)?;
    let sum: T = pred
        .iter()
        .zip(target)
        .flat_map(|(p, t)| p.as_slice().iter().zip(t.as_slice()).map(|(&a, &b)| (a - b).abs()))
        .sum();
    Ok(sum / T::lit(count as f64))
}

pub fn mse_loss<T: Scalar>(pred: &[Matrix<T>], target: &[Matrix<T>]) -> Result<T> {
    let count = check_pairs(pred, target)?;
    let sum: T = pred
        .iter()
        .zip(target)
        .flat_map(|(p, t)| p.as_slice().iter().zip(t.as_slice()).map(|(&a, &b)| (a - b) * (a - b)))
        .sum();
    Ok(sum / T::lit(count as f64))
}

impl Loss {
    pub fn eval<T: Scalar>(self, pred: &[Matrix<T>], target: &[Matrix<T>]) -> Result<T> {
        match self {
            Loss::Mae => mae_loss(pred, target),
            Loss::Mse => mse_loss(pred, target),
        }
    }

    /// Records the loss over paired frames as a `1×1` node.
    pub fn record<'a, T: Scalar>(self, tape: &mut Tape<'a, T>, pred: &[Var], target: &[Var]) -> Result<Var> {
        if pred.len() != target.len() || pred.is_empty() {
            return Err(Error::Shape(format!("{} predicted frames vs {} targets", pred.len(), target.len())));
        }
        let mut total: Option<Var> = None;
        let mut count = 0;
        for (&p, &t) in pred.iter().zip(target) {
            count += tape.value(p).len();
            let term = match self {
                Loss::Mae => tape.abs_diff_sum(p, t)?,
                Loss::Mse => tape.sq_diff_sum(p, t)?,
            };
            total = Some(match total {
                None => term,
                Some(acc) => tape.add(acc, term)?,
            });
        }
        let total = total.expect("nonempty");
        Ok(tape.scale(total, T::one() / T::lit(count as f64)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        let a = vec![Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap()];
        assert_eq!(mae_loss(&a, &a).unwrap(), 0.0);
        let b = vec![a[0].map(|v| v + 1.0)];
        assert_eq!(mae_loss(&a, &b).unwrap(), 1.0);
        let c = vec![a[0].map(|v| v - 2.0)];
        assert_eq!(mse_loss(&a, &c).unwrap(), 4.0);
        assert!(mae_loss(&a, &[Matrix::zeros(2, 3)]).is_err());
        assert!(mae_loss(&a, &[]).is_err());
    }

    #[test]
    fn mae_matches_scalar_loop() {
        let p: Vec<Matrix<f64>> = (0..3).map(|k| Matrix::from_fn(4, 2, |i, j| ((k * 8 + i * 2 + j) as f64).sin())).collect();
        let t: Vec<Matrix<f64>> = (0..3).map(|k| Matrix::from_fn(4, 2, |i, j| ((k + i + j) as f64).cos())).collect();
        let mut s = 0.0;
        for k in 0..3 {
            for i in 0..4 {
                for j in 0..2 {
                    s += (p[k][(i, j)] - t[k][(i, j)]).abs();
                }
            }
        }
        assert!((mae_loss(&p, &t).unwrap() - s / 24.0).abs() < 1e-12);
        let mut tape = Tape::new();
        let pv: Vec<Var> = p.iter().map(|m| tape.constant_ref(m)).collect();
        let tv: Vec<Var> = t.iter().map(|m| tape.constant_ref(m)).collect();
        let l = Loss::Mae.record(&mut tape, &pv, &tv).unwrap();
        assert!((tape.value(l)[(0, 0)] - s / 24.0).abs() < 1e-12);
    }
}

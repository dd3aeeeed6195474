use std::fmt::Write as _;
use std::io::Write;

use super::slices::Slice;
use crate::error::{Error, Result};
use crate::ingest::{NormStats, RidershipTensor, WindowSample};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Which ground-truth entries enter the percentage error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MapeRule {
    /// `x > floor`; station level uses 0 to skip zero counts.
    Above(f64),
    /// `x ≥ min`; OD level uses 10.
    AtLeast(f64),
}

impl MapeRule {
    pub fn admits(self, x: f64) -> bool {
        match self {
            MapeRule::Above(f) => x > f,
            MapeRule::AtLeast(m) => x >= m,
        }
    }
}

impl Default for MapeRule {
    fn default() -> Self {
        MapeRule::Above(0.0)
    }
}

/// Error summary over a set of entries.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub rmse: f64,
    pub mae: f64,
    /// Percentage; `None` when the rule admits no entry.
    pub mape: Option<f64>,
    pub count: usize,
    /// Entries left out of the percentage error.
    pub mape_excluded: usize,
}

#[derive(Clone, Copy, Debug, Default)]
struct Acc {
    sq: f64,
    abs: f64,
    pct: f64,
    count: usize,
    pct_count: usize,
}

impl Acc {
    fn push(&mut self, p: f64, x: f64, rule: MapeRule) {
        let e = p - x;
        self.sq += e * e;
        self.abs += e.abs();
        self.count += 1;
        if rule.admits(x) {
            self.pct += (e / x).abs();
            self.pct_count += 1;
        }
    }

    fn finish(self) -> Metrics {
        let n = self.count as f64;
        Metrics {
            rmse: (self.sq / n).sqrt(),
            mae: self.abs / n,
            mape: (self.pct_count > 0).then(|| 100.0 * self.pct / self.pct_count as f64),
            count: self.count,
            mape_excluded: self.count - self.pct_count,
        }
    }
}

/// RMSE, MAE and MAPE over entries in original scale. MAPE uses entries
/// with truth above `mape_floor`.
pub fn metrics(pred: &[f64], truth: &[f64], mape_floor: f64) -> Result<Metrics> {
    metrics_with(pred, truth, MapeRule::Above(mape_floor))
}

pub fn metrics_with(pred: &[f64], truth: &[f64], rule: MapeRule) -> Result<Metrics> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!("{} predictions vs {} truths", pred.len(), truth.len())));
    }
    if pred.is_empty() {
        return Err(Error::EmptySlice("no entries to score".into()));
    }
    let mut acc = Acc::default();
    for (&p, &x) in pred.iter().zip(truth) {
        acc.push(p, x, rule);
    }
    Ok(acc.finish())
}

/// Per-horizon metrics for one slice.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub slice: String,
    /// Index `h − 1` holds horizon `h`.
    pub horizons: Vec<Metrics>,
    /// Entries per horizon before slicing.
    pub total_per_horizon: usize,
}

impl MetricsReport {
    pub fn horizon(&self, h: usize) -> &Metrics {
        &self.horizons[h - 1]
    }

    /// Every horizon satisfies `rmse ≥ mae ≥ 0`.
    pub fn is_consistent(&self) -> bool {
        self.horizons.iter().all(|m| m.rmse + 1e-12 * m.rmse.abs().max(1.0) >= m.mae && m.mae >= 0.0)
    }
}

/// Scores predicted frames against the raw targets of `samples`.
///
/// `preds[s][h]` is the `[N, C]` prediction for horizon `h + 1` of sample
/// `s`. With `norm`, predictions are in normalized space and are inverted
/// first; otherwise they are already in original scale. `tensor` is the
/// tensor the samples were cut from and supplies bin times for slicing.
pub fn evaluate<T: Scalar>(
    preds: &[Vec<Matrix<T>>],
    samples: &[WindowSample],
    norm: Option<&NormStats>,
    tensor: &RidershipTensor,
    slice: &Slice,
    rule: MapeRule,
) -> Result<MetricsReport> {
    if preds.len() != samples.len() {
        return Err(Error::Shape(format!("{} predictions for {} samples", preds.len(), samples.len())));
    }
    let m = samples.first().map_or(0, |s| s.n_out);
    if m == 0 {
        return Err(Error::EmptySlice(format!("slice '{}' has no samples", slice.name)));
    }
    let (n, c) = (tensor.n_stations(), tensor.channels());
    let mut accs = vec![Acc::default(); m];
    for (p, s) in preds.iter().zip(samples) {
        if p.len() != m || s.n_out != m {
            return Err(Error::Shape("samples disagree on horizon count".into()));
        }
        for h in 0..m {
            if p[h].shape() != (n, c) {
                return Err(Error::Shape(format!("prediction frame {:?}, expected ({n}, {c})", p[h].shape())));
            }
            if !slice.admits_bin(tensor, s.target_bin(h + 1))? {
                continue;
            }
            let truth = s.target_frame(h);
            for i in (0..n).filter(|&i| slice.admits_station(i)) {
                for ch in 0..c {
                    let z = p[h][(i, ch)];
                    let v = match norm {
                        Some(st) => st.invert_one(z).as_f64(),
                        None => z.as_f64(),
                    };
                    accs[h].push(v, truth[i * c + ch], rule);
                }
            }
        }
    }
    if let Some(h) = accs.iter().position(|a| a.count == 0) {
        return Err(Error::EmptySlice(format!("slice '{}' admits no entries at horizon {}", slice.name, h + 1)));
    }
    Ok(MetricsReport {
        slice: slice.name.clone(),
        horizons: accs.into_iter().map(Acc::finish).collect(),
        total_per_horizon: samples.len() * n * c,
    })
}

fn fmt_mape(m: Option<f64>) -> String {
    m.map_or_else(|| "NA".to_string(), |v| format!("{v:.4}"))
}

/// CSV with one row per (method, horizon).
pub fn write_report_csv<W: Write>(reports: &[(&str, &MetricsReport)], mut w: W) -> Result<()> {
    writeln!(w, "method,slice,horizon,rmse,mae,mape,count,mape_excluded")?;
    for (name, r) in reports {
        for (h, m) in r.horizons.iter().enumerate() {
            writeln!(
                w,
                "{name},{},{},{:.6},{:.6},{},{},{}",
                r.slice,
                h + 1,
                m.rmse,
                m.mae,
                fmt_mape(m.mape),
                m.count,
                m.mape_excluded
            )?;
        }
    }
    Ok(())
}

/// Plain-text table: rows are horizon × metric, columns are methods.
pub fn render_table(reports: &[(&str, &MetricsReport)]) -> String {
    let mut out = String::new();
    let width = reports.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(10);
    let _ = write!(out, "{:<8}{:<7}", "horizon", "metric");
    for (name, _) in reports {
        let _ = write!(out, " {name:>width$}");
    }
    out.push('\n');
    let m = reports.iter().map(|(_, r)| r.horizons.len()).max().unwrap_or(0);
    for h in 0..m {
        for metric in ["RMSE", "MAE", "MAPE%"] {
            let _ = write!(out, "{:<8}{:<7}", h + 1, metric);
            for (_, r) in reports {
                let cell = r.horizons.get(h).map_or_else(String::new, |x| match metric {
                    "RMSE" => format!("{:.3}", x.rmse),
                    "MAE" => format!("{:.3}", x.mae),
                    _ => x.mape.map_or_else(|| "NA".to_string(), |v| format!("{v:.2}")),
                });
                let _ = write!(out, " {cell:>width$}");
            }
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_pair() {
        let m = metrics(&[11.0, 18.0], &[10.0, 20.0], 0.0).unwrap();
        assert!((m.rmse - (5.0f64 / 2.0).sqrt()).abs() < 1e-12);
        assert!((m.mae - 1.5).abs() < 1e-12);
        assert!((m.mape.unwrap() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_zero_truth() {
        let m = metrics(&[1.0, 2.0], &[1.0, 2.0], 0.0).unwrap();
        assert_eq!((m.rmse, m.mae, m.mape), (0.0, 0.0, Some(0.0)));
        let m = metrics(&[1.0, 3.0], &[0.0, 2.0], 0.0).unwrap();
        assert_eq!(m.mae, 1.0);
        assert_eq!(m.mape_excluded, 1);
        assert!((m.mape.unwrap() - 50.0).abs() < 1e-12);
        let m = metrics(&[1.0], &[0.0], 0.0).unwrap();
        assert_eq!(m.mape, None);
        assert!(metrics(&[], &[], 0.0).is_err());
    }

    #[test]
    fn at_least_rule_is_inclusive() {
        let m = metrics_with(&[12.0, 5.0, 0.0], &[10.0, 9.0, 30.0], MapeRule::AtLeast(10.0)).unwrap();
        assert_eq!(m.mape_excluded, 1);
        assert!((m.mape.unwrap() - 100.0 * (0.2 + 1.0) / 2.0).abs() < 1e-12);
    }
}

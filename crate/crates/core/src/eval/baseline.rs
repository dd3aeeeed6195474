use chrono::{Datelike, NaiveDate};

use crate::error::{Error, Result};
use crate::ingest::{RidershipTensor, WindowSample};
use crate::matrix::Matrix;

/// Historical average: mean `[N, C]` frame of the bin starting at `minute`
/// over the `k` most recent earlier days sharing the weekday of `date`.
/// Fewer than `k` such days are averaged when history is short.
pub fn ha_baseline(history: &RidershipTensor, date: NaiveDate, minute: u32, k: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::Argument("historical average needs k ≥ 1".into()));
    }
    let mut prior: Vec<(NaiveDate, usize)> = history
        .days()
        .iter()
        .filter(|d| d.date < date && d.date.weekday() == date.weekday() && minute >= d.open_minute)
        .filter_map(|d| {
            let off = minute - d.open_minute;
            (off % history.bin_minutes() == 0 && ((off / history.bin_minutes()) as usize) < d.bins)
                .then(|| (d.date, d.start_bin + (off / history.bin_minutes()) as usize))
        })
        .collect();
    if prior.is_empty() {
        return Err(Error::Baseline(format!(
            "no earlier {} has a bin at {:02}:{:02}",
            date.weekday(),
            minute / 60,
            minute % 60
        )));
    }
    prior.sort_by(|a, b| b.0.cmp(&a.0));
    prior.truncate(k);
    let mut mean = vec![0.0; history.n_stations() * history.channels()];
    for &(_, t) in &prior {
        for (m, &v) in mean.iter_mut().zip(history.frame(t)) {
            *m += v;
        }
    }
    let cnt = prior.len() as f64;
    mean.iter_mut().for_each(|m| *m /= cnt);
    Ok(mean)
}

/// Historical-average predictions in original scale for every horizon of
/// every sample. `tensor` is the tensor the samples were cut from.
pub fn ha_predictions(
    history: &RidershipTensor,
    samples: &[WindowSample],
    tensor: &RidershipTensor,
    k: usize,
) -> Result<Vec<Vec<Matrix<f64>>>> {
    let (n, c) = (tensor.n_stations(), tensor.channels());
    samples
        .iter()
        .map(|s| {
            (1..=s.n_out)
                .map(|h| {
                    let t = s.target_bin(h);
                    let (date, minute) = tensor.bin_time(t).ok_or_else(|| Error::Shape(format!("bin {t} outside tensor")))?;
                    Matrix::from_vec(n, c, ha_baseline(history, date, minute, k)?)
                })
                .collect()
        })
        .collect()
}

use chrono::NaiveDate;

use super::tensor::RidershipTensor;
use crate::error::{Error, Result};

/// One training instance. `input` holds `n` frames and `target` holds `m`
/// frames, each frame row-major `[N, C]`.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowSample {
    pub input: Vec<f64>,
    pub target: Vec<f64>,
    pub n_in: usize,
    pub n_out: usize,
    /// Global bin index of the last input step.
    pub t_anchor: usize,
}

impl WindowSample {
    pub fn input_frame(&self, k: usize) -> &[f64] {
        let w = self.input.len() / self.n_in;
        &self.input[k * w..(k + 1) * w]
    }

    pub fn target_frame(&self, k: usize) -> &[f64] {
        let w = self.target.len() / self.n_out;
        &self.target[k * w..(k + 1) * w]
    }

    /// Global bin of horizon `h` (1-based).
    pub fn target_bin(&self, h: usize) -> usize {
        self.t_anchor + h
    }
}

/// Valid window start offsets inside a day of `bins` bins.
pub fn window_starts(bins: usize, n: usize, m: usize) -> std::ops::Range<usize> {
    0..(bins + 1).saturating_sub(n + m)
}

/// All stride-1 windows of `n` input and `m` target bins that stay inside
/// one operational day. Days shorter than `n + m` contribute nothing.
pub fn make_windows(tensor: &RidershipTensor, n: usize, m: usize) -> Result<Vec<WindowSample>> {
    make_paired_windows(tensor, tensor, n, m)
}

/// Like [`make_windows`] but reads inputs and targets from two tensors that
/// share a day layout (incomplete/complete OD tensors).
pub fn make_paired_windows(
    inputs: &RidershipTensor,
    targets: &RidershipTensor,
    n: usize,
    m: usize,
) -> Result<Vec<WindowSample>> {
    if n == 0 || m == 0 {
        return Err(Error::Argument("window lengths must be at least 1".into()));
    }
    if inputs.days() != targets.days() || inputs.n_stations() != targets.n_stations() {
        return Err(Error::Shape("input and target tensors have different layouts".into()));
    }
    let mut out = Vec::new();
    for day in inputs.days() {
        for s in window_starts(day.bins, n, m) {
            let t0 = day.start_bin + s;
            let input = (t0..t0 + n).flat_map(|t| inputs.frame(t).iter().copied()).collect();
            let target = (t0 + n..t0 + n + m).flat_map(|t| targets.frame(t).iter().copied()).collect();
            out.push(WindowSample { input, target, n_in: n, n_out: m, t_anchor: t0 + n - 1 });
        }
    }
    Ok(out)
}

/// Inclusive date range.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DateRange {
    pub first: NaiveDate,
    pub last: NaiveDate,
}

impl DateRange {
    pub fn contains(&self, d: NaiveDate) -> bool {
        self.first <= d && d <= self.last
    }

    fn overlaps(&self, other: &DateRange) -> bool {
        self.first <= other.last && other.first <= self.last
    }

    /// `YYYY-MM-DD..YYYY-MM-DD`
    pub fn parse(s: &str) -> Result<Self> {
        let (a, b) = s.split_once("..").ok_or_else(|| Error::Config(format!("date range {s:?} is not A..B")))?;
        let p = |x: &str| {
            NaiveDate::parse_from_str(x.trim(), "%Y-%m-%d").map_err(|_| Error::Config(format!("bad date {x:?}")))
        };
        let r = Self { first: p(a)?, last: p(b)? };
        if r.last < r.first {
            return Err(Error::Config(format!("date range {s:?} is reversed")));
        }
        Ok(r)
    }
}

impl std::fmt::Display for DateRange {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}..{}", self.first, self.last)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitRanges {
    pub train: DateRange,
    pub val: DateRange,
    pub test: DateRange,
}

impl SplitRanges {
    pub fn validate(&self) -> Result<()> {
        if self.train.overlaps(&self.val) || self.train.overlaps(&self.test) || self.val.overlaps(&self.test) {
            return Err(Error::Config("train/val/test date ranges overlap".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<WindowSample>,
    pub val: Vec<WindowSample>,
    pub test: Vec<WindowSample>,
}

/// Assigns windows to splits by the date of their day. Windows on days
/// outside every range are discarded.
pub fn split_windows(tensor: &RidershipTensor, windows: Vec<WindowSample>, ranges: &SplitRanges) -> Result<DatasetSplit> {
    ranges.validate()?;
    let mut split = DatasetSplit::default();
    for w in windows {
        let day = tensor
            .day_of_bin(w.t_anchor)
            .ok_or_else(|| Error::Shape(format!("window anchor {} outside tensor", w.t_anchor)))?;
        let date = tensor.days()[day].date;
        if ranges.train.contains(date) {
            split.train.push(w);
        } else if ranges.val.contains(date) {
            split.val.push(w);
        } else if ranges.test.contains(date) {
            split.test.push(w);
        }
    }
    Ok(split)
}

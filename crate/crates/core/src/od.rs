//! Online origin-destination forecasting. Each origin's trips in a bin are
//! summarized as an 11-slot vector: its ten most frequent destinations plus
//! a remainder slot. Model inputs count only trips already finished when the
//! entry bin closes; targets count every trip.

use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{metrics_with, MapeRule, Metrics};
use crate::ingest::{
    layout_days, make_paired_windows, zscore_fit, AfcRecord, BinLocator, DateRange, NormStats, RidershipTensor,
    ServiceCalendar, StationIndex, WindowSample,
};

pub const TOP_DESTINATIONS: usize = 10;
/// Vector width: the top destinations plus the remainder slot.
pub const OD_SLOTS: usize = TOP_DESTINATIONS + 1;
/// OD percentage errors only score pairs with at least ten passengers.
pub const OD_MAPE_RULE: MapeRule = MapeRule::AtLeast(10.0);

/// Per origin, up to ten destinations ordered by training trip count.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OdSchema {
    pub destinations: Vec<Vec<usize>>,
}

impl OdSchema {
    pub fn n(&self) -> usize {
        self.destinations.len()
    }

    /// Slot of a trip: the destination's rank, or the remainder slot.
    pub fn slot(&self, origin: usize, dest: usize) -> usize {
        self.destinations[origin].iter().position(|&d| d == dest).unwrap_or(TOP_DESTINATIONS)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let n = s.n();
        for (o, d) in s.destinations.iter().enumerate() {
            let mut sorted = d.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if d.len() > TOP_DESTINATIONS || sorted.len() != d.len() || d.iter().any(|&x| x >= n) {
                return Err(Error::Format(format!("schema entry for origin {o} is invalid")));
            }
        }
        Ok(s)
    }
}

/// Ranks each origin's destinations by finished-trip count, descending,
/// ties to the smaller index, and keeps the top ten.
pub fn build_schema(records: &[AfcRecord], index: &StationIndex) -> Result<OdSchema> {
    let n = index.len();
    let mut counts = vec![vec![0usize; n]; n];
    for r in records {
        if r.entry_station >= n || r.exit_station >= n {
            return Err(Error::Argument(format!("record station outside 0..{n}")));
        }
        counts[r.entry_station][r.exit_station] += 1;
    }
    let destinations = counts
        .iter()
        .map(|row| {
            let mut d: Vec<usize> = (0..n).filter(|&j| row[j] > 0).collect();
            d.sort_by(|&a, &b| row[b].cmp(&row[a]).then(a.cmp(&b)));
            d.truncate(TOP_DESTINATIONS);
            d
        })
        .collect();
    Ok(OdSchema { destinations })
}

fn bin_end_secs(tensor: &RidershipTensor, t: usize) -> i64 {
    let (date, minute) = tensor.bin_time(t).expect("located bin");
    let midnight = date.and_hms_opt(0, 0, 0).expect("midnight").and_utc().timestamp();
    midnight + i64::from(minute + tensor.bin_minutes()) * 60
}

fn build(
    records: &[AfcRecord],
    schema: &OdSchema,
    bin_minutes: u32,
    calendar: &ServiceCalendar,
    finished_only: bool,
) -> Result<RidershipTensor> {
    let (days, closes) = layout_days(calendar, bin_minutes)?;
    if days.is_empty() {
        return Err(Error::Config("service calendar has no days".into()));
    }
    let mut tensor = RidershipTensor::zeros(schema.n(), OD_SLOTS, bin_minutes, days)?;
    let locator = BinLocator::new(tensor.days(), &closes, bin_minutes).expect("nonempty calendar");
    for r in records {
        let Some(t) = locator.locate(r.entry_time) else { continue };
        if finished_only && r.exit_time > bin_end_secs(&tensor, t) {
            continue;
        }
        *tensor.get_mut(t, r.entry_station, schema.slot(r.entry_station, r.exit_station)) += 1.0;
    }
    Ok(tensor)
}

/// Incomplete OD tensor `[T, N, 11]`: a trip counts in its entry bin only
/// if it exited no later than the close of that bin.
pub fn build_incomplete(
    records: &[AfcRecord],
    schema: &OdSchema,
    bin_minutes: u32,
    calendar: &ServiceCalendar,
) -> Result<RidershipTensor> {
    build(records, schema, bin_minutes, calendar, true)
}

/// Complete OD tensor `[T, N, 11]`: every trip counts in its entry bin.
pub fn build_complete(
    records: &[AfcRecord],
    schema: &OdSchema,
    bin_minutes: u32,
    calendar: &ServiceCalendar,
) -> Result<RidershipTensor> {
    build(records, schema, bin_minutes, calendar, false)
}

/// Paired OD tensors on one bin grid.
#[derive(Clone, Debug, PartialEq)]
pub struct OdDataset {
    pub inputs: RidershipTensor,
    pub targets: RidershipTensor,
}

impl OdDataset {
    pub fn build(records: &[AfcRecord], schema: &OdSchema, bin_minutes: u32, calendar: &ServiceCalendar) -> Result<Self> {
        Ok(Self {
            inputs: build_incomplete(records, schema, bin_minutes, calendar)?,
            targets: build_complete(records, schema, bin_minutes, calendar)?,
        })
    }

    /// Windows of `n` incomplete frames followed by `m` complete frames.
    pub fn windows(&self, n: usize, m: usize) -> Result<Vec<WindowSample>> {
        make_paired_windows(&self.inputs, &self.targets, n, m)
    }

    /// Separate z-score statistics for inputs and targets over the days in
    /// `train`.
    pub fn fit_norms(&self, train: &DateRange) -> Result<(NormStats, NormStats)> {
        let keep = |d: NaiveDate| train.contains(d);
        Ok((
            zscore_fit(self.inputs.select_days(keep).values())?,
            zscore_fit(self.targets.select_days(keep).values())?,
        ))
    }
}

/// RMSE and MAE over every entry; MAPE over entries with truth ≥ 10.
pub fn od_metrics(pred: &[f64], truth: &[f64]) -> Result<Metrics> {
    metrics_with(pred, truth, OD_MAPE_RULE)
}

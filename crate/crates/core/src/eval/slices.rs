use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::ingest::{parse_hhmm, RidershipTensor, WindowSample};

/// Morning and evening rush, minutes since midnight, half-open.
pub const RUSH_WINDOWS: [(u32, u32); 2] = [(7 * 60 + 30, 9 * 60 + 30), (17 * 60 + 30, 19 * 60 + 30)];

#[derive(Clone, Debug, PartialEq)]
pub enum SliceSpec {
    Whole,
    /// Target bins intersecting any `[start, end)` window.
    RushHours(Vec<(u32, u32)>),
    /// Busiest `⌈fraction·N⌉` stations by training ridership.
    TopStations(f64),
}

impl SliceSpec {
    pub fn rush() -> Self {
        SliceSpec::RushHours(RUSH_WINDOWS.to_vec())
    }

    pub fn top_quartile() -> Self {
        SliceSpec::TopStations(0.25)
    }
}

impl FromStr for SliceSpec {
    type Err = Error;

    /// `whole`, `rush`, `rush:HH:MM-HH:MM,...`, `top25`, or `top:FRACTION`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "whole" => return Ok(SliceSpec::Whole),
            "rush" => return Ok(SliceSpec::rush()),
            "top25" => return Ok(SliceSpec::top_quartile()),
            _ => {}
        }
        if let Some(list) = s.strip_prefix("rush:") {
            let windows = list
                .split(',')
                .map(|w| {
                    let (a, b) = w.split_once('-').ok_or_else(|| Error::Config(format!("rush window {w:?}")))?;
                    let (a, b) = (parse_hhmm(a.trim())?, parse_hhmm(b.trim())?);
                    if a >= b {
                        return Err(Error::Config(format!("rush window {w:?} is empty")));
                    }
                    Ok((a, b))
                })
                .collect::<Result<_>>()?;
            return Ok(SliceSpec::RushHours(windows));
        }
        if let Some(f) = s.strip_prefix("top:") {
            let f: f64 = f.parse().map_err(|_| Error::Config(format!("top fraction {f:?}")))?;
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!("top fraction {f} outside (0, 1]")));
            }
            return Ok(SliceSpec::TopStations(f));
        }
        Err(Error::Config(format!("unknown slice {s:?}; expected whole, rush or top25")))
    }
}

impl fmt::Display for SliceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SliceSpec::Whole => f.write_str("whole"),
            SliceSpec::RushHours(w) if w[..] == RUSH_WINDOWS[..] => f.write_str("rush"),
            SliceSpec::RushHours(w) => {
                let parts: Vec<String> = w
                    .iter()
                    .map(|(a, b)| format!("{:02}:{:02}-{:02}:{:02}", a / 60, a % 60, b / 60, b % 60))
                    .collect();
                write!(f, "rush:{}", parts.join(","))
            }
            SliceSpec::TopStations(x) if *x == 0.25 => f.write_str("top25"),
            SliceSpec::TopStations(x) => write!(f, "top:{x}"),
        }
    }
}

/// A slice with its station set resolved against training data.
#[derive(Clone, Debug, PartialEq)]
pub struct Slice {
    pub name: String,
    pub windows: Option<Vec<(u32, u32)>>,
    pub stations: Option<Vec<bool>>,
}

impl Slice {
    pub fn whole() -> Self {
        Slice { name: "whole".into(), windows: None, stations: None }
    }

    pub fn resolve(spec: &SliceSpec, train_tensor: &RidershipTensor) -> Result<Self> {
        let name = spec.to_string();
        Ok(match spec {
            SliceSpec::Whole => Slice { name, ..Slice::whole() },
            SliceSpec::RushHours(w) => Slice { name, windows: Some(w.clone()), stations: None },
            SliceSpec::TopStations(f) => {
                let mut mask = vec![false; train_tensor.n_stations()];
                for i in slice_top_quartile(train_tensor, *f)? {
                    mask[i] = true;
                }
                Slice { name, windows: None, stations: Some(mask) }
            }
        })
    }

    pub fn admits_station(&self, i: usize) -> bool {
        self.stations.as_ref().is_none_or(|m| m[i])
    }

    pub fn admits_bin(&self, tensor: &RidershipTensor, t: usize) -> Result<bool> {
        let Some(windows) = &self.windows else { return Ok(true) };
        let (_, start) = tensor.bin_time(t).ok_or_else(|| Error::Shape(format!("bin {t} outside tensor")))?;
        Ok(bin_in_windows(start, tensor.bin_minutes(), windows))
    }
}

fn bin_in_windows(start: u32, len: u32, windows: &[(u32, u32)]) -> bool {
    windows.iter().any(|&(a, b)| start < b && start + len > a)
}

/// `mask[s][h − 1]`: whether horizon `h` of sample `s` falls in a window.
pub fn slice_rush_hours(
    samples: &[WindowSample],
    tensor: &RidershipTensor,
    windows: &[(u32, u32)],
) -> Result<Vec<Vec<bool>>> {
    let slice = Slice { name: "rush".into(), windows: Some(windows.to_vec()), stations: None };
    samples
        .iter()
        .map(|s| (1..=s.n_out).map(|h| slice.admits_bin(tensor, s.target_bin(h))).collect())
        .collect()
}

/// The busiest `⌈fraction·N⌉` stations by total inflow plus outflow, most
/// ridden first; ties go to the smaller index.
pub fn slice_top_quartile(train_tensor: &RidershipTensor, fraction: f64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("top fraction {fraction} outside (0, 1]")));
    }
    let totals = train_tensor.station_totals();
    let n = totals.len();
    let keep = ((fraction * n as f64).ceil() as usize).clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| totals[b].total_cmp(&totals[a]).then(a.cmp(&b)));
    order.truncate(keep);
    Ok(order)
}

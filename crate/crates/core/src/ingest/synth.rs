//! Seeded synthetic metro system for dataset-free runs.
//!
//! Stations sit on a main line with side branches. Each station belongs to a
//! functional class (residential, business, leisure, ...) that fixes the
//! shape of its daily entry profile, and to a phase group that shifts the
//! peaks and scales the volume. Trips pick destinations by class affinity
//! with a preference for nearby stations, and exit after a travel time that
//! grows with hop distance. A per-day system-wide factor modulates volume
//! so individual days differ from their weekday average.

use std::collections::VecDeque;

use chrono::{Datelike, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use super::records::{AfcRecord, StationIndex};
use super::tensor::{bin_ridership, BinReport, RidershipTensor, ServiceCalendar, ServiceWindow};
use crate::config::KeyValues;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthProfile {
    pub classes: usize,
    pub phases: usize,
    /// Mean entries per bin at profile height 1.
    pub base_volume: f64,
    pub bin_minutes: u32,
    pub service: ServiceWindow,
    pub start_date: NaiveDate,
    pub minutes_per_hop: f64,
    pub dwell_minutes: f64,
    /// Daily volume factor is uniform in `[1 - spread, 1 + spread]`.
    pub day_factor_spread: f64,
    pub weekend_factor: f64,
    /// Extra destination weight for nearby stations.
    pub proximity_boost: f64,
}

impl Default for SynthProfile {
    fn default() -> Self {
        Self {
            classes: 3,
            phases: 2,
            base_volume: 60.0,
            bin_minutes: 15,
            service: ServiceWindow::default(),
            start_date: NaiveDate::from_ymd_opt(2019, 1, 7).expect("valid date"),
            minutes_per_hop: 4.0,
            dwell_minutes: 3.0,
            day_factor_spread: 0.3,
            weekend_factor: 0.6,
            proximity_boost: 1.0,
        }
    }
}

impl SynthProfile {
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let d = Self::default();
        let p = Self {
            classes: kv.get_or("classes", d.classes)?,
            phases: kv.get_or("phases", d.phases)?,
            base_volume: kv.get_or("base_volume", d.base_volume)?,
            bin_minutes: kv.get_or("bin_minutes", d.bin_minutes)?,
            service: match kv.get("service") {
                Some(s) => ServiceWindow::parse(s)?,
                None => d.service,
            },
            start_date: match kv.get("start_date") {
                Some(s) => NaiveDate::parse_from_str(s, "%Y-%m-%d")
                    .map_err(|_| Error::Config(format!("start_date: bad date {s:?}")))?,
                None => d.start_date,
            },
            minutes_per_hop: kv.get_or("minutes_per_hop", d.minutes_per_hop)?,
            dwell_minutes: kv.get_or("dwell_minutes", d.dwell_minutes)?,
            day_factor_spread: kv.get_or("day_factor_spread", d.day_factor_spread)?,
            weekend_factor: kv.get_or("weekend_factor", d.weekend_factor)?,
            proximity_boost: kv.get_or("proximity_boost", d.proximity_boost)?,
        };
        if p.classes == 0 || p.phases == 0 || p.base_volume <= 0.0 || !(0.0..1.0).contains(&p.day_factor_spread) {
            return Err(Error::Config("synthetic profile out of range".into()));
        }
        Ok(p)
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.set("classes", self.classes.to_string());
        kv.set("phases", self.phases.to_string());
        kv.set("base_volume", self.base_volume.to_string());
        kv.set("bin_minutes", self.bin_minutes.to_string());
        kv.set("service", format_window(self.service));
        kv.set("start_date", self.start_date.to_string());
        kv.set("minutes_per_hop", self.minutes_per_hop.to_string());
        kv.set("dwell_minutes", self.dwell_minutes.to_string());
        kv.set("day_factor_spread", self.day_factor_spread.to_string());
        kv.set("weekend_factor", self.weekend_factor.to_string());
        kv.set("proximity_boost", self.proximity_boost.to_string());
        kv
    }
}

fn format_window(w: ServiceWindow) -> String {
    format!(
        "{:02}:{:02}-{:02}:{:02}",
        w.open_minute / 60,
        w.open_minute % 60,
        w.close_minute / 60,
        w.close_minute % 60
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub index: StationIndex,
    pub tensor: RidershipTensor,
    pub records: Vec<AfcRecord>,
    /// Undirected physical adjacency.
    pub physical_edges: Vec<(usize, usize)>,
    pub station_class: Vec<usize>,
    pub station_phase: Vec<usize>,
    pub bin_report: BinReport,
}

fn bump(hour: f64, center: f64, width: f64) -> f64 {
    (-0.5 * ((hour - center) / width).powi(2)).exp()
}

/// Entry intensity shape for a class at fractional hour `h`.
fn class_shape(class: usize, h: f64, weekend: bool) -> f64 {
    if weekend {
        return 0.15 + 0.6 * bump(h, 14.0, 3.5);
    }
    match class % 3 {
        0 => 0.12 + bump(h, 8.0, 1.0) + 0.35 * bump(h, 18.0, 1.2),
        1 => 0.12 + 0.35 * bump(h, 8.5, 0.9) + bump(h, 18.0, 1.0),
        _ => 0.2 + 0.6 * bump(h, 13.0, 2.5),
    }
}

/// Destination-class affinity for an origin class at hour `h`.
fn class_affinity(origin: usize, dest: usize, h: f64) -> f64 {
    let (o, d) = (origin % 3, dest % 3);
    let morning = h < 12.0;
    match (o, d) {
        (0, 1) if morning => 3.0,
        (1, 0) if !morning => 3.0,
        (_, 2) => 1.5,
        _ => 1.0,
    }
}

fn line_with_branches(n: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let main = ((n as f64 * 0.6).ceil() as usize).clamp(2.min(n), n);
    let mut edges: Vec<(usize, usize)> = (1..main).map(|i| (i - 1, i)).collect();
    for k in main..n {
        let from = if k > main && rng.random_bool(0.5) { k - 1 } else { rng.random_range(0..main) };
        edges.push((from, k));
    }
    edges
}

fn hop_distances(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    (0..n)
        .map(|src| {
            let mut dist = vec![usize::MAX; n];
            dist[src] = 0;
            let mut q = VecDeque::from([src]);
            while let Some(u) = q.pop_front() {
                for &v in &adj[u] {
                    if dist[v] == usize::MAX {
                        dist[v] = dist[u] + 1;
                        q.push_back(v);
                    }
                }
            }
            dist
        })
        .collect()
}

/// Deterministic synthetic dataset: station index, binned tensor, raw
/// records and the physical topology.
pub fn gen_synthetic(n_stations: usize, n_days: usize, seed: u64, profile: &SynthProfile) -> Result<SyntheticData> {
    if n_stations < 2 {
        return Err(Error::Argument("synthetic system needs at least two stations".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let index = StationIndex::new((0..n_stations).map(|i| format!("S{i:03}")).collect())?;
    let physical_edges = line_with_branches(n_stations, &mut rng);
    let hops = hop_distances(n_stations, &physical_edges);

    // Shuffled round-robin so every class is represented.
    let mut order: Vec<usize> = (0..n_stations).collect();
    for i in (1..n_stations).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let mut station_class = vec![0; n_stations];
    let mut station_phase = vec![0; n_stations];
    for (rank, &s) in order.iter().enumerate() {
        station_class[s] = rank % profile.classes;
        station_phase[s] = (rank / profile.classes) % profile.phases;
    }

    let calendar = ServiceCalendar::daily(profile.start_date, n_days, profile.service);
    let bin = profile.bin_minutes;
    let win = profile.service;
    if win.close_minute <= win.open_minute || (win.close_minute - win.open_minute) % bin != 0 {
        return Err(Error::Config("bin length must divide a nonempty service window".into()));
    }
    let bins_per_day = ((win.close_minute - win.open_minute) / bin) as usize;

    let mut records = Vec::new();
    let mut weights = vec![0.0; n_stations];
    for (day_idx, &(date, _)) in calendar.days.iter().enumerate() {
        let weekend = matches!(date.weekday(), Weekday::Sat | Weekday::Sun);
        let day_factor = 1.0 + profile.day_factor_spread * rng.random_range(-1.0..=1.0);
        let day_factor = if weekend { day_factor * profile.weekend_factor } else { day_factor };
        let midnight = date.and_hms_opt(0, 0, 0).expect("midnight").and_utc().timestamp();
        for b in 0..bins_per_day {
            let start_min = win.open_minute + b as u32 * bin;
            let mid_hour = (f64::from(start_min) + f64::from(bin) / 2.0) / 60.0;
            for origin in 0..n_stations {
                let phase = station_phase[origin] as f64;
                let shape = class_shape(station_class[origin], mid_hour - 0.75 * phase, weekend);
                let lambda = profile.base_volume * (1.0 + 0.35 * phase) * day_factor * shape;
                let count = Poisson::new(lambda).map_err(|e| Error::Numerics(e.to_string()))?.sample(&mut rng) as usize;
                if count == 0 {
                    continue;
                }
                let mut total = 0.0;
                for (dest, w) in weights.iter_mut().enumerate() {
                    let affinity = class_affinity(station_class[origin], station_class[dest], mid_hour);
                    *w = if dest == origin {
                        0.02
                    } else {
                        let h = hops[origin][dest] as f64;
                        affinity * (1.0 + profile.proximity_boost * (-(h - 1.0) / 1.5).exp())
                    };
                    total += *w;
                }
                for _ in 0..count {
                    let mut u = rng.random_range(0.0..total);
                    let mut dest = n_stations - 1;
                    for (j, &w) in weights.iter().enumerate() {
                        if u < w {
                            dest = j;
                            break;
                        }
                        u -= w;
                    }
                    let entry = midnight + i64::from(start_min) * 60 + rng.random_range(0..i64::from(bin) * 60);
                    let travel = profile.dwell_minutes
                        + hops[origin][dest] as f64 * profile.minutes_per_hop
                        + rng.random_range(0.0..4.0);
                    records.push(AfcRecord {
                        passenger_id: format!("d{day_idx}p{}", records.len()),
                        entry_station: origin,
                        exit_station: dest,
                        entry_time: entry,
                        exit_time: entry + (travel * 60.0).round() as i64,
                    });
                }
            }
        }
    }
    let (tensor, bin_report) = bin_ridership(&records, &index, bin, &calendar)?;
    Ok(SyntheticData { index, tensor, records, physical_edges, station_class, station_phase, bin_report })
}

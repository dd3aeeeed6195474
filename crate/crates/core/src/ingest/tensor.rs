//! Binned ridership tensors and their binary container.
//!
//! Container layout (all little-endian):
//!
//! ```text
//! "RGT1"
//! u32 T, u32 N, u32 C, u32 bin_minutes
//! u32 D                              number of operational days
//! D × (u32 yyyymmdd, u32 start_bin, u32 n_bins, u32 open_minute)
//! T·N·C × f64                        values[t][station][channel]
//! ```

use std::io::{Read, Write};
use std::path::Path;

use chrono::{Datelike, NaiveDate, Timelike};

use super::records::AfcRecord;
use super::records::StationIndex;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"RGT1";

/// One operational day: a contiguous run of bins starting at `open_minute`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DaySpan {
    pub date: NaiveDate,
    pub start_bin: usize,
    pub bins: usize,
    pub open_minute: u32,
}

impl DaySpan {
    pub fn bin_range(&self) -> std::ops::Range<usize> {
        self.start_bin..self.start_bin + self.bins
    }
}

/// Per-station, per-bin counts with shape `[T, N, C]`. Station-level
/// ridership uses `C = 2` (inflow, outflow); origin-destination tensors use
/// wider channel counts.
#[derive(Clone, Debug, PartialEq)]
pub struct RidershipTensor {
    n_stations: usize,
    channels: usize,
    bin_minutes: u32,
    days: Vec<DaySpan>,
    values: Vec<f64>,
}

impl RidershipTensor {
    pub fn zeros(n_stations: usize, channels: usize, bin_minutes: u32, days: Vec<DaySpan>) -> Result<Self> {
        let t = check_days(&days)?;
        Ok(Self { n_stations, channels, bin_minutes, days, values: vec![0.0; t * n_stations * channels] })
    }

    pub fn from_values(
        n_stations: usize,
        channels: usize,
        bin_minutes: u32,
        days: Vec<DaySpan>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let t = check_days(&days)?;
        if values.len() != t * n_stations * channels {
            return Err(Error::Shape(format!(
                "{} values for T={t}, N={n_stations}, C={channels}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Format("ridership values must be finite and non-negative".into()));
        }
        Ok(Self { n_stations, channels, bin_minutes, days, values })
    }

    pub fn n_bins(&self) -> usize {
        self.days.iter().map(|d| d.bins).sum()
    }

    pub fn n_stations(&self) -> usize {
        self.n_stations
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn bin_minutes(&self) -> u32 {
        self.bin_minutes
    }

    pub fn days(&self) -> &[DaySpan] {
        &self.days
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, t: usize, station: usize, channel: usize) -> f64 {
        self.values[(t * self.n_stations + station) * self.channels + channel]
    }

    #[inline]
    pub fn get_mut(&mut self, t: usize, station: usize, channel: usize) -> &mut f64 {
        &mut self.values[(t * self.n_stations + station) * self.channels + channel]
    }

    /// All stations and channels of bin `t`, row-major `[N, C]`.
    pub fn frame(&self, t: usize) -> &[f64] {
        let w = self.n_stations * self.channels;
        &self.values[t * w..(t + 1) * w]
    }

    pub fn day_of_bin(&self, t: usize) -> Option<usize> {
        self.days.iter().position(|d| d.bin_range().contains(&t))
    }

    /// Date and start minute (since midnight) of global bin `t`.
    pub fn bin_time(&self, t: usize) -> Option<(NaiveDate, u32)> {
        let d = &self.days[self.day_of_bin(t)?];
        Some((d.date, d.open_minute + (t - d.start_bin) as u32 * self.bin_minutes))
    }

    /// Series of station `i` as `(channel 0, channel 1)` points, one per bin.
    pub fn station_series(&self, i: usize) -> Vec<[f64; 2]> {
        assert!(self.channels >= 2);
        (0..self.n_bins()).map(|t| [self.get(t, i, 0), self.get(t, i, 1)]).collect()
    }

    /// New tensor restricted to days whose date satisfies `keep`, re-indexed
    /// from bin 0.
    pub fn select_days(&self, mut keep: impl FnMut(NaiveDate) -> bool) -> Self {
        let w = self.n_stations * self.channels;
        let mut days = Vec::new();
        let mut values = Vec::new();
        let mut next = 0;
        for d in &self.days {
            if keep(d.date) {
                days.push(DaySpan { start_bin: next, ..*d });
                next += d.bins;
                values.extend_from_slice(&self.values[d.start_bin * w..(d.start_bin + d.bins) * w]);
            }
        }
        Self { n_stations: self.n_stations, channels: self.channels, bin_minutes: self.bin_minutes, days, values }
    }

    /// Per-station sum over all bins and channels.
    pub fn station_totals(&self) -> Vec<f64> {
        let mut totals = vec![0.0; self.n_stations];
        for t in 0..self.n_bins() {
            for (i, tot) in totals.iter_mut().enumerate() {
                for c in 0..self.channels {
                    *tot += self.get(t, i, c);
                }
            }
        }
        totals
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        for v in [self.n_bins(), self.n_stations, self.channels, self.bin_minutes as usize, self.days.len()] {
            w.write_all(&u32_of(v)?.to_le_bytes())?;
        }
        for d in &self.days {
            let ymd = d.date.year() as u32 * 10_000 + d.date.month() * 100 + d.date.day();
            for v in [ymd, u32_of(d.start_bin)?, u32_of(d.bins)?, d.open_minute] {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        let mut buf = Vec::with_capacity(self.values.len() * 8);
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not an RGT1 ridership container".into()));
        }
        let t = read_u32(&mut r)? as usize;
        let n = read_u32(&mut r)? as usize;
        let c = read_u32(&mut r)? as usize;
        let bin_minutes = read_u32(&mut r)?;
        let n_days = read_u32(&mut r)? as usize;
        let mut days = Vec::with_capacity(n_days);
        for _ in 0..n_days {
            let ymd = read_u32(&mut r)?;
            let date = NaiveDate::from_ymd_opt((ymd / 10_000) as i32, (ymd / 100) % 100, ymd % 100)
                .ok_or_else(|| Error::Format(format!("bad date {ymd}")))?;
            let start_bin = read_u32(&mut r)? as usize;
            let bins = read_u32(&mut r)? as usize;
            let open_minute = read_u32(&mut r)?;
            days.push(DaySpan { date, start_bin, bins, open_minute });
        }
        let total = t
            .checked_mul(n)
            .and_then(|x| x.checked_mul(c))
            .ok_or_else(|| Error::Format("tensor dimensions overflow".into()))?;
        let mut bytes = vec![0u8; total * 8];
        r.read_exact(&mut bytes)?;
        let values = bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
        let out = Self::from_values(n, c, bin_minutes, days, values)?;
        if out.n_bins() != t {
            return Err(Error::Format(format!("day table covers {} bins, header says {t}", out.n_bins())));
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(f)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

fn u32_of(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn check_days(days: &[DaySpan]) -> Result<usize> {
    let mut next = 0;
    for (k, d) in days.iter().enumerate() {
        if d.start_bin != next {
            return Err(Error::Format(format!("day {k} starts at bin {} but {next} expected", d.start_bin)));
        }
        if k > 0 && days[k - 1].date >= d.date {
            return Err(Error::Format("days must be strictly increasing".into()));
        }
        next += d.bins;
    }
    Ok(next)
}

/// Daily operating window in minutes since midnight, `[open, close)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ServiceWindow {
    pub open_minute: u32,
    pub close_minute: u32,
}

impl Default for ServiceWindow {
    fn default() -> Self {
        Self { open_minute: 5 * 60 + 30, close_minute: 23 * 60 + 30 }
    }
}

impl ServiceWindow {
    pub fn parse(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once('-')
            .ok_or_else(|| Error::Config(format!("service window {s:?} is not HH:MM-HH:MM")))?;
        Ok(Self { open_minute: parse_hhmm(a)?, close_minute: parse_hhmm(b)? })
    }
}

pub fn parse_hhmm(s: &str) -> Result<u32> {
    let (h, m) = s.trim().split_once(':').ok_or_else(|| Error::Config(format!("bad time {s:?}")))?;
    let h: u32 = h.parse().map_err(|_| Error::Config(format!("bad hour in {s:?}")))?;
    let m: u32 = m.parse().map_err(|_| Error::Config(format!("bad minute in {s:?}")))?;
    if h > 24 || m > 59 || h * 60 + m > 24 * 60 {
        return Err(Error::Config(format!("time {s:?} out of range")));
    }
    Ok(h * 60 + m)
}

/// Operating days and their service windows.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ServiceCalendar {
    pub days: Vec<(NaiveDate, ServiceWindow)>,
}

impl ServiceCalendar {
    pub fn daily(first: NaiveDate, n_days: usize, window: ServiceWindow) -> Self {
        Self { days: first.iter_days().take(n_days).map(|d| (d, window)).collect() }
    }

    /// Every calendar day touched by an entry time, with the same window.
    pub fn covering(records: &[AfcRecord], window: ServiceWindow) -> Self {
        let mut dates: Vec<NaiveDate> = records.iter().filter_map(|r| date_of(r.entry_time)).collect();
        dates.sort_unstable();
        dates.dedup();
        Self { days: dates.into_iter().map(|d| (d, window)).collect() }
    }
}

/// Records that fell outside every service window.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BinReport {
    pub entries_counted: usize,
    pub entries_dropped: usize,
    pub exits_counted: usize,
    pub exits_dropped: usize,
}

fn date_of(secs: i64) -> Option<NaiveDate> {
    chrono::DateTime::from_timestamp(secs, 0).map(|t| t.date_naive())
}

/// Maps timestamps to global bin indices for a calendar.
pub(crate) struct BinLocator {
    first: NaiveDate,
    // indexed by day offset from `first`; None for non-operating days
    slots: Vec<Option<(usize, u32, u32)>>,
    bin_secs: i64,
}

impl BinLocator {
    pub(crate) fn new(days: &[DaySpan], close: &[u32], bin_minutes: u32) -> Option<Self> {
        let first = days.first()?.date;
        let last = days.last()?.date;
        let mut slots = vec![None; (last - first).num_days() as usize + 1];
        for (d, &c) in days.iter().zip(close) {
            slots[(d.date - first).num_days() as usize] = Some((d.start_bin, d.open_minute, c));
        }
        Some(Self { first, slots, bin_secs: i64::from(bin_minutes) * 60 })
    }

    pub(crate) fn locate(&self, secs: i64) -> Option<usize> {
        let t = chrono::DateTime::from_timestamp(secs, 0)?.naive_utc();
        let offset = (t.date() - self.first).num_days();
        if offset < 0 {
            return None;
        }
        let (start, open, close) = (*self.slots.get(offset as usize)?)?;
        let sec_of_day = i64::from(t.num_seconds_from_midnight());
        if sec_of_day < i64::from(open) * 60 || sec_of_day >= i64::from(close) * 60 {
            return None;
        }
        Some(start + ((sec_of_day - i64::from(open) * 60) / self.bin_secs) as usize)
    }
}

/// Builds the day table for a calendar, validating each window.
pub(crate) fn layout_days(calendar: &ServiceCalendar, bin_minutes: u32) -> Result<(Vec<DaySpan>, Vec<u32>)> {
    if bin_minutes == 0 {
        return Err(Error::Config("bin_minutes must be positive".into()));
    }
    let mut days = Vec::with_capacity(calendar.days.len());
    let mut closes = Vec::with_capacity(calendar.days.len());
    let mut next = 0;
    for &(date, w) in &calendar.days {
        if w.close_minute <= w.open_minute {
            return Err(Error::Config(format!("empty service window on {date}")));
        }
        let len = w.close_minute - w.open_minute;
        if len % bin_minutes != 0 {
            return Err(Error::Config(format!(
                "bin length {bin_minutes} min does not divide the {len}-minute service window on {date}"
            )));
        }
        let bins = (len / bin_minutes) as usize;
        days.push(DaySpan { date, start_bin: next, bins, open_minute: w.open_minute });
        closes.push(w.close_minute);
        next += bins;
    }
    if days.windows(2).any(|p| p[0].date >= p[1].date) {
        return Err(Error::Config("service calendar days must be strictly increasing".into()));
    }
    Ok((days, closes))
}

/// Counts entries (channel 0) and exits (channel 1) per station and bin.
/// Entries are attributed by `entry_time`, exits by `exit_time`; times
/// outside every service window are dropped and tallied in the report.
pub fn bin_ridership(
    records: &[AfcRecord],
    index: &StationIndex,
    bin_minutes: u32,
    calendar: &ServiceCalendar,
) -> Result<(RidershipTensor, BinReport)> {
    let (days, closes) = layout_days(calendar, bin_minutes)?;
    if days.is_empty() {
        return Err(Error::Config("service calendar has no days".into()));
    }
    let mut tensor = RidershipTensor::zeros(index.len(), 2, bin_minutes, days)?;
    let locator = BinLocator::new(&tensor.days, &closes, bin_minutes).expect("nonempty calendar");
    let mut report = BinReport::default();
    for r in records {
        match locator.locate(r.entry_time) {
            Some(t) => {
                *tensor.get_mut(t, r.entry_station, 0) += 1.0;
                report.entries_counted += 1;
            }
            None => report.entries_dropped += 1,
        }
        match locator.locate(r.exit_time) {
            Some(t) => {
                *tensor.get_mut(t, r.exit_station, 1) += 1.0;
                report.exits_counted += 1;
            }
            None => report.exits_dropped += 1,
        }
    }
    Ok((tensor, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDateTime;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ts(s: &str) -> i64 {
        NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M").unwrap().and_utc().timestamp()
    }

    fn rec(entry: usize, exit: usize, tin: &str, tout: &str) -> AfcRecord {
        AfcRecord { passenger_id: "p".into(), entry_station: entry, exit_station: exit, entry_time: ts(tin), exit_time: ts(tout) }
    }

    fn index(n: usize) -> StationIndex {
        StationIndex::new((0..n).map(|i| format!("S{i}")).collect()).unwrap()
    }

    fn jan1() -> NaiveDate {
        NaiveDate::from_ymd_opt(2019, 1, 1).unwrap()
    }

    #[test]
    fn single_entry_lands_in_first_bin() {
        let cal = ServiceCalendar::daily(jan1(), 1, ServiceWindow { open_minute: 8 * 60, close_minute: 9 * 60 });
        let records = [rec(0, 1, "2019-01-01 08:07", "2019-01-01 09:20")];
        let (t, report) = bin_ridership(&records, &index(2), 15, &cal).unwrap();
        assert_eq!(t.get(0, 0, 0), 1.0);
        assert_eq!(t.values().iter().sum::<f64>(), 1.0);
        assert_eq!(report.exits_dropped, 1);
    }

    #[test]
    fn entries_and_exits_add_up_within_a_bin() {
        let cal = ServiceCalendar::daily(jan1(), 1, ServiceWindow { open_minute: 8 * 60, close_minute: 9 * 60 });
        let records = [
            rec(1, 0, "2019-01-01 08:16", "2019-01-01 08:50"),
            rec(1, 0, "2019-01-01 08:29", "2019-01-01 08:50"),
            rec(0, 1, "2019-01-01 08:01", "2019-01-01 08:20"),
        ];
        let (t, _) = bin_ridership(&records, &index(2), 15, &cal).unwrap();
        assert_eq!([t.get(1, 1, 0), t.get(1, 1, 1)], [2.0, 1.0]);
    }

    #[test]
    fn empty_or_indivisible_window_is_config_error() {
        let bad = ServiceCalendar::daily(jan1(), 1, ServiceWindow { open_minute: 600, close_minute: 600 });
        assert!(matches!(bin_ridership(&[], &index(1), 15, &bad), Err(Error::Config(_))));
        let odd = ServiceCalendar::daily(jan1(), 1, ServiceWindow { open_minute: 600, close_minute: 610 });
        assert!(matches!(bin_ridership(&[], &index(1), 15, &odd), Err(Error::Config(_))));
    }

    #[test]
    fn matches_scatter_oracle_and_conserves_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 4;
        let cal = ServiceCalendar::daily(jan1(), 2, ServiceWindow { open_minute: 6 * 60, close_minute: 10 * 60 });
        let base = ts("2019-01-01 00:00");
        let records: Vec<AfcRecord> = (0..50)
            .map(|k| {
                let tin = base + rng.random_range(0..2 * 86_400);
                AfcRecord {
                    passenger_id: format!("p{k}"),
                    entry_station: rng.random_range(0..n),
                    exit_station: rng.random_range(0..n),
                    entry_time: tin,
                    exit_time: tin + rng.random_range(0..3600),
                }
            })
            .collect();
        let (t, report) = bin_ridership(&records, &index(n), 15, &cal).unwrap();

        // oracle: explicit day/minute arithmetic per record
        let mut oracle = vec![0.0; 32 * n * 2];
        let mut entries = 0;
        for r in &records {
            for (secs, station, ch) in [(r.entry_time, r.entry_station, 0), (r.exit_time, r.exit_station, 1)] {
                let day = (secs - base).div_euclid(86_400);
                let minute = (secs - base).rem_euclid(86_400) / 60;
                if (0..2).contains(&day) && (360..600).contains(&minute) {
                    let bin = day as usize * 16 + ((minute - 360) / 15) as usize;
                    oracle[(bin * n + station) * 2 + ch] += 1.0;
                    if ch == 0 {
                        entries += 1;
                    }
                }
            }
        }
        assert_eq!(t.values(), oracle.as_slice());
        assert_eq!(report.entries_counted, entries);
        let inflow: f64 = (0..t.n_bins()).flat_map(|b| (0..n).map(move |i| (b, i))).map(|(b, i)| t.get(b, i, 0)).sum();
        assert_eq!(inflow as usize, report.entries_counted);
        assert_eq!(report.entries_counted + report.entries_dropped, 50);
    }

    #[test]
    fn container_roundtrip_and_magic_check() {
        let cal = ServiceCalendar::daily(jan1(), 2, ServiceWindow { open_minute: 360, close_minute: 420 });
        let records = [rec(0, 1, "2019-01-02 06:05", "2019-01-02 06:40")];
        let (t, _) = bin_ridership(&records, &index(2), 15, &cal).unwrap();
        let mut buf = Vec::new();
        t.write(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"RGT1");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 8);
        assert_eq!(RidershipTensor::read(buf.as_slice()).unwrap(), t);
        buf[0] = b'X';
        assert!(matches!(RidershipTensor::read(buf.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn bin_time_and_select_days() {
        let cal = ServiceCalendar::daily(jan1(), 3, ServiceWindow { open_minute: 360, close_minute: 420 });
        let (t, _) = bin_ridership(&[], &index(1), 15, &cal).unwrap();
        assert_eq!(t.bin_time(5), Some((jan1().succ_opt().unwrap(), 375)));
        let sub = t.select_days(|d| d != jan1());
        assert_eq!(sub.n_bins(), 8);
        assert_eq!(sub.days()[0].start_bin, 0);
    }
}

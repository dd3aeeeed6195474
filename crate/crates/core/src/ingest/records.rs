use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};

use crate::error::{Error, Result};

/// Ordered station names with a reverse lookup.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StationIndex {
    names: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl StationIndex {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Config("station index must contain at least one station".into()));
        }
        let mut lookup = HashMap::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            if lookup.insert(name.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate station name {name:?}")));
            }
        }
        Ok(Self { names, lookup })
    }

    /// One station name per non-empty line.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::new(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for name in &self.names {
            out.push_str(name);
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.lookup.get(name).copied()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// One fare-collection transaction. Times are naive local seconds since
/// 1970-01-01T00:00:00.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AfcRecord {
    pub passenger_id: String,
    pub entry_station: usize,
    pub exit_station: usize,
    pub entry_time: i64,
    pub exit_time: i64,
}

pub fn parse_timestamp(s: &str) -> Option<i64> {
    let s = s.trim();
    if let Ok(secs) = s.parse::<i64>() {
        return Some(secs);
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(t.and_utc().timestamp());
        }
    }
    None
}

pub fn format_timestamp(secs: i64) -> String {
    DateTime::from_timestamp(secs, 0)
        .map(|t| t.naive_utc().format("%Y-%m-%dT%H:%M:%S").to_string())
        .unwrap_or_else(|| secs.to_string())
}

const HEADER: [&str; 5] = ["passenger_id", "entry_station", "exit_station", "entry_time", "exit_time"];

/// Reads AFC records from CSV with header
/// `passenger_id,entry_station,exit_station,entry_time,exit_time`.
/// Line numbers in errors are 1-based and count the header.
pub fn read_records<R: Read>(reader: R, index: &StationIndex) -> Result<Vec<AfcRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.len() != HEADER.len() || header.iter().zip(HEADER).any(|(a, b)| a != b) {
        return Err(Error::Parse { line: 1, message: format!("expected header {}", HEADER.join(",")) });
    }
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let line = row + 2;
        let rec = rec.map_err(|e| Error::Parse { line, message: e.to_string() })?;
        let station = |k: usize| {
            index.get(&rec[k]).ok_or_else(|| Error::Parse { line, message: format!("unknown station {:?}", &rec[k]) })
        };
        let time = |k: usize| {
            parse_timestamp(&rec[k]).ok_or_else(|| Error::Parse { line, message: format!("bad timestamp {:?}", &rec[k]) })
        };
        let record = AfcRecord {
            passenger_id: rec[0].to_string(),
            entry_station: station(1)?,
            exit_station: station(2)?,
            entry_time: time(3)?,
            exit_time: time(4)?,
        };
        if record.exit_time < record.entry_time {
            return Err(Error::Record { line, message: "exit_time precedes entry_time".into() });
        }
        out.push(record);
    }
    Ok(out)
}

pub fn parse_records(path: &Path, index: &StationIndex) -> Result<Vec<AfcRecord>> {
    read_records(std::fs::File::open(path)?, index)
}

pub fn write_records<W: Write>(writer: W, records: &[AfcRecord], index: &StationIndex) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(HEADER)?;
    for r in records {
        w.write_record([
            r.passenger_id.as_str(),
            index.name(r.entry_station),
            index.name(r.exit_station),
            &format_timestamp(r.entry_time),
            &format_timestamp(r.exit_time),
        ])?;
    }
    w.flush()?;
    Ok(())
}

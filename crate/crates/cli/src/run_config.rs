//! Effective run configuration: built-in defaults, then a `--config` file,
//! then `--set` overrides, validated before any work starts.

use std::path::{Path, PathBuf};

use pvcgn::config::KeyValues;
use pvcgn::eval::SliceSpec;
use pvcgn::graphs::Selection;
use pvcgn::ingest::{DateRange, RidershipTensor, ServiceWindow, SplitRanges, SynthProfile};
use pvcgn::model::{FcRecurrence, GraphSet, ModelConfig};
use pvcgn::train::TrainConfig;
use pvcgn::{Error, Result};

const TRAIN_KEYS: &[&str] =
    &["epochs", "batch_size", "lr0", "lr_decay", "decay_epochs", "grad_clip_norm", "seed", "scheduled_sampling"];

const RUN_KEYS: &[&str] = &[
    "records",
    "stations",
    "topology",
    "tensor",
    "graphs_dir",
    "bin_minutes",
    "service",
    "split",
    "train_days",
    "val_days",
    "test_days",
    "select",
    "graphs",
    "d",
    "n_in",
    "n_out",
    "global_branch",
    "fc_recurrence",
    "slices",
    "ha_k",
    "synth_stations",
    "synth_days",
];

/// How calendar days are divided among train, validation and test.
#[derive(Clone, Debug, PartialEq)]
pub enum SplitSpec {
    /// Chronological fractions of the available days.
    Fractions([f64; 3]),
    Ranges(SplitRanges),
}

impl SplitSpec {
    pub fn resolve(&self, tensor: &RidershipTensor) -> Result<SplitRanges> {
        match self {
            SplitSpec::Ranges(r) => Ok(*r),
            SplitSpec::Fractions(f) => {
                let dates: Vec<_> = tensor.days().iter().map(|d| d.date).collect();
                let n = dates.len();
                let n_train = (f[0] * n as f64).round() as usize;
                let n_val = (f[1] * n as f64).round() as usize;
                if n_train == 0 || n_val == 0 || n_train + n_val >= n {
                    return Err(Error::Config(format!("split {f:?} leaves an empty part of {n} days")));
                }
                let range = |a: usize, b: usize| DateRange { first: dates[a], last: dates[b - 1] };
                Ok(SplitRanges {
                    train: range(0, n_train),
                    val: range(n_train, n_train + n_val),
                    test: range(n_train + n_val, n),
                })
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub out: PathBuf,
    pub records: PathBuf,
    pub stations: PathBuf,
    pub topology: PathBuf,
    pub tensor: PathBuf,
    pub graphs_dir: PathBuf,
    pub bin_minutes: u32,
    pub service: ServiceWindow,
    pub split: SplitSpec,
    pub selection: Selection,
    /// `n_stations` and `channels` are filled in from the data.
    pub model: ModelConfig,
    pub n_in: usize,
    pub n_out: usize,
    pub train: TrainConfig,
    pub slices: Vec<SliceSpec>,
    pub ha_k: usize,
    pub synth: SynthProfile,
    pub synth_stations: usize,
    pub synth_days: usize,
    /// Every effective value, defaults included.
    pub effective: KeyValues,
}

fn path_or(kv: &KeyValues, key: &str, out: &Path, default: &str) -> PathBuf {
    match kv.get(key) {
        Some(p) if !p.is_empty() => PathBuf::from(p),
        _ => out.join(default),
    }
}

fn parse_with<T>(kv: &KeyValues, key: &str, default: T, f: impl Fn(&str) -> Result<T>) -> Result<T> {
    kv.get(key).map_or(Ok(default), |s| f(s).map_err(|e| Error::Config(format!("{key}: {e}"))))
}

impl RunConfig {
    pub fn from_key_values(kv: &KeyValues, out: &Path) -> Result<Self> {
        for (k, _) in kv.iter() {
            let known = RUN_KEYS.contains(&k) || TRAIN_KEYS.contains(&k) || k.starts_with("synth.");
            if !known {
                return Err(Error::Config(format!("unknown key {k:?}")));
            }
        }
        let split = match (kv.get("train_days"), kv.get("val_days"), kv.get("test_days")) {
            (None, None, None) => {
                let s = kv.get("split").unwrap_or("0.7,0.1,0.2");
                let f: Vec<f64> = s
                    .split(',')
                    .map(|x| x.trim().parse().map_err(|_| Error::Config(format!("split: bad fraction {x:?}"))))
                    .collect::<Result<_>>()?;
                if f.len() != 3 || f.iter().any(|x| !(*x > 0.0)) || f.iter().sum::<f64>() > 1.0 + 1e-9 {
                    return Err(Error::Config(format!("split {s:?} is not three positive fractions summing to 1")));
                }
                SplitSpec::Fractions([f[0], f[1], f[2]])
            }
            (Some(a), Some(b), Some(c)) => {
                let r = SplitRanges { train: DateRange::parse(a)?, val: DateRange::parse(b)?, test: DateRange::parse(c)? };
                r.validate()?;
                SplitSpec::Ranges(r)
            }
            _ => return Err(Error::Config("train_days, val_days and test_days must be given together".into())),
        };
        let model = ModelConfig {
            d: kv.get_or("d", 256)?,
            graphs: parse_with(kv, "graphs", GraphSet::ALL, |s| s.parse())?,
            global_branch: kv.get_or("global_branch", true)?,
            fc_recurrence: parse_with(kv, "fc_recurrence", FcRecurrence::default(), |s| s.parse())?,
            ..ModelConfig::default()
        };
        if model.d == 0 {
            return Err(Error::Config("d must be positive".into()));
        }
        let slices = kv
            .get("slices")
            .unwrap_or("whole;rush;top25")
            .split(';')
            .map(|s| s.trim().parse())
            .collect::<Result<Vec<SliceSpec>>>()?;
        let mut synth_kv = KeyValues::default();
        for (k, v) in kv.iter() {
            if let Some(k) = k.strip_prefix("synth.") {
                synth_kv.set(k, v);
            }
        }
        let cfg = Self {
            out: out.to_path_buf(),
            records: path_or(kv, "records", out, "data/records.csv"),
            stations: path_or(kv, "stations", out, "data/stations.txt"),
            topology: path_or(kv, "topology", out, "data/topology.csv"),
            tensor: path_or(kv, "tensor", out, "data/tensor.rgt"),
            graphs_dir: path_or(kv, "graphs_dir", out, "graphs"),
            bin_minutes: kv.get_or("bin_minutes", 15)?,
            service: parse_with(kv, "service", ServiceWindow::default(), ServiceWindow::parse)?,
            split,
            selection: parse_with(kv, "select", Selection::TopK(10), Selection::parse)?,
            model,
            n_in: kv.get_or("n_in", 4)?,
            n_out: kv.get_or("n_out", 4)?,
            train: TrainConfig::from_key_values(kv)?,
            slices,
            ha_k: kv.get_or("ha_k", 2)?,
            synth: SynthProfile::from_key_values(&synth_kv)?,
            synth_stations: kv.get_or("synth_stations", 10)?,
            synth_days: kv.get_or("synth_days", 14)?,
            effective: KeyValues::default(),
        };
        if cfg.n_in == 0 || cfg.n_out == 0 || cfg.ha_k == 0 || cfg.bin_minutes == 0 {
            return Err(Error::Config("n_in, n_out, ha_k and bin_minutes must be positive".into()));
        }
        Ok(Self { effective: cfg.to_key_values(), ..cfg })
    }

    pub fn seed(&self) -> u64 {
        self.train.seed
    }

    fn to_key_values(&self) -> KeyValues {
        let mut kv = self.train.to_key_values();
        let p = |p: &Path| p.display().to_string();
        kv.set("records", p(&self.records));
        kv.set("stations", p(&self.stations));
        kv.set("topology", p(&self.topology));
        kv.set("tensor", p(&self.tensor));
        kv.set("graphs_dir", p(&self.graphs_dir));
        kv.set("bin_minutes", self.bin_minutes.to_string());
        let w = self.service;
        kv.set(
            "service",
            format!("{:02}:{:02}-{:02}:{:02}", w.open_minute / 60, w.open_minute % 60, w.close_minute / 60, w.close_minute % 60),
        );
        match &self.split {
            SplitSpec::Fractions(f) => kv.set("split", format!("{:?},{:?},{:?}", f[0], f[1], f[2])),
            SplitSpec::Ranges(r) => {
                kv.set("train_days", r.train.to_string());
                kv.set("val_days", r.val.to_string());
                kv.set("test_days", r.test.to_string());
            }
        }
        kv.set("select", self.selection.to_string());
        kv.set("graphs", self.model.graphs.to_string());
        kv.set("d", self.model.d.to_string());
        kv.set("n_in", self.n_in.to_string());
        kv.set("n_out", self.n_out.to_string());
        kv.set("global_branch", self.model.global_branch.to_string());
        kv.set("fc_recurrence", self.model.fc_recurrence.to_string());
        let slices: Vec<String> = self.slices.iter().map(ToString::to_string).collect();
        kv.set("slices", slices.join(";"));
        kv.set("ha_k", self.ha_k.to_string());
        kv.set("synth_stations", self.synth_stations.to_string());
        kv.set("synth_days", self.synth_days.to_string());
        for (k, v) in self.synth.to_key_values().iter() {
            kv.set(&format!("synth.{k}"), v);
        }
        kv
    }
}

/// Writes `manifests/<command>.txt`: the command, code version, every
/// effective setting and any run-specific facts such as graph hashes.
pub fn write_manifest(cfg: &RunConfig, command: &str, extra: &[(&str, String)]) -> Result<PathBuf> {
    let dir = cfg.out.join("manifests");
    std::fs::create_dir_all(&dir)?;
    let mut kv = cfg.effective.clone();
    kv.set("command", command);
    kv.set("version", env!("CARGO_PKG_VERSION"));
    for (k, v) in extra {
        kv.set(&format!("run.{k}"), v.as_str());
    }
    let path = dir.join(format!("{command}.txt"));
    std::fs::write(&path, kv.render())?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_echoed() {
        let cfg = RunConfig::from_key_values(&KeyValues::default(), Path::new("o")).unwrap();
        assert_eq!(cfg.effective.get("d"), Some("256"));
        assert_eq!(cfg.effective.get("select"), Some("topk:10"));
        assert_eq!(cfg.effective.get("slices"), Some("whole;rush;top25"));
        assert_eq!(cfg.effective.get("epochs"), Some("200"));
        assert_eq!(cfg.records, Path::new("o/data/records.csv"));
        // the echo parses back to the same configuration
        let again = RunConfig::from_key_values(&cfg.effective, Path::new("o")).unwrap();
        assert_eq!(again.effective, cfg.effective);
    }

    #[test]
    fn rejects_unknown_and_invalid_keys() {
        let mut kv = KeyValues::default();
        kv.set("epoch", "3");
        assert!(matches!(RunConfig::from_key_values(&kv, Path::new("o")), Err(Error::Config(_))));
        for (k, v) in [("graphs", "xyz"), ("split", "0.5,0.6,0.1"), ("lr0", "-1"), ("train_days", "2019-01-01..2019-01-03")] {
            let mut kv = KeyValues::default();
            kv.set(k, v);
            assert!(RunConfig::from_key_values(&kv, Path::new("o")).is_err(), "{k}={v}");
        }
    }
}

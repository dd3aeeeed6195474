//! Loading the station index, records, tensor and graphs named by a run.

use pvcgn::graphs::GraphTriple;
use pvcgn::ingest::{
    bin_ridership, parse_records, AfcRecord, DateRange, NormStats, RidershipTensor, ServiceCalendar, ServiceWindow,
    SplitRanges, StationIndex,
};
use pvcgn::model::{load_checkpoint, Checkpoint, ModelGraphs};
use pvcgn::{Error, Result};

use crate::run_config::RunConfig;

/// Missing inputs fail with the path in the message.
pub fn require(path: &std::path::Path) -> Result<()> {
    if path.exists() {
        return Ok(());
    }
    let msg = format!("{} does not exist", path.display());
    Err(std::io::Error::new(std::io::ErrorKind::NotFound, msg).into())
}

pub struct Dataset {
    pub index: StationIndex,
    pub records: Option<Vec<AfcRecord>>,
    pub tensor: RidershipTensor,
    pub ranges: SplitRanges,
}

impl Dataset {
    /// Records are required only when `need_records`; the tensor is read
    /// from its file when present and binned from the records otherwise.
    pub fn load(cfg: &RunConfig, need_records: bool) -> Result<Self> {
        require(&cfg.stations)?;
        let index = StationIndex::load(&cfg.stations)?;
        let records = if need_records || !cfg.tensor.exists() {
            require(&cfg.records)?;
            Some(parse_records(&cfg.records, &index)?)
        } else {
            None
        };
        let tensor = if cfg.tensor.exists() {
            RidershipTensor::load(&cfg.tensor)?
        } else {
            let recs = records.as_deref().expect("records loaded");
            bin_ridership(recs, &index, cfg.bin_minutes, &ServiceCalendar::covering(recs, cfg.service))?.0
        };
        if tensor.n_stations() != index.len() || tensor.channels() != 2 {
            return Err(Error::Shape(format!(
                "tensor has {} stations x {} channels, index has {} stations",
                tensor.n_stations(),
                tensor.channels(),
                index.len()
            )));
        }
        let ranges = cfg.split.resolve(&tensor)?;
        Ok(Self { index, records, tensor, ranges })
    }

    pub fn records(&self) -> &[AfcRecord] {
        self.records.as_deref().unwrap_or_default()
    }

    pub fn train_tensor(&self) -> RidershipTensor {
        self.tensor.select_days(|d| self.ranges.train.contains(d))
    }

    /// Trips that entered on a training day.
    pub fn train_records(&self) -> Vec<AfcRecord> {
        self.records().iter().filter(|r| in_range(r.entry_time, &self.ranges.train)).cloned().collect()
    }

    /// The tensor's own day grid as a service calendar.
    pub fn calendar(&self) -> ServiceCalendar {
        let bm = self.tensor.bin_minutes();
        ServiceCalendar {
            days: self
                .tensor
                .days()
                .iter()
                .map(|d| {
                    let w = ServiceWindow { open_minute: d.open_minute, close_minute: d.open_minute + d.bins as u32 * bm };
                    (d.date, w)
                })
                .collect(),
        }
    }
}

fn in_range(secs: i64, range: &DateRange) -> bool {
    chrono::DateTime::from_timestamp(secs, 0).is_some_and(|t| range.contains(t.date_naive()))
}

pub fn split_range(ranges: &SplitRanges, split: &str) -> Result<DateRange> {
    match split {
        "train" => Ok(ranges.train),
        "val" => Ok(ranges.val),
        "test" => Ok(ranges.test),
        _ => Err(Error::Config(format!("unknown split {split:?}; expected train, val or test"))),
    }
}

pub struct LoadedModel {
    pub checkpoint: Checkpoint<f64>,
    pub graphs: ModelGraphs<f64>,
    pub n_in: usize,
    pub n_out: usize,
    pub input_norm: NormStats,
    pub target_norm: NormStats,
}

/// Loads a checkpoint, refusing it unless it was trained on these graphs.
pub fn load_model(cfg: &RunConfig, path: &std::path::Path, kind: &str) -> Result<LoadedModel> {
    let triple = load_graphs(cfg)?;
    require(path)?;
    let checkpoint = load_checkpoint::<f64>(path, Some(&triple.content_hash()))?;
    let meta = |k: &str| {
        checkpoint.metadata.get(k).ok_or_else(|| Error::Format(format!("checkpoint lacks meta.{k}")))
    };
    if meta("kind")? != kind {
        return Err(Error::Config(format!("checkpoint holds a {} model, expected {kind}", meta("kind")?)));
    }
    let num = |k: &str| meta(k)?.parse::<usize>().map_err(|_| Error::Format(format!("meta.{k} is not a count")));
    let (n_in, n_out) = (num("n_in")?, num("n_out")?);
    let norms = checkpoint.input_norm.zip(checkpoint.target_norm);
    let (input_norm, target_norm) = norms.ok_or_else(|| Error::Format("checkpoint lacks normalization".into()))?;
    let graphs = ModelGraphs::new(&triple, checkpoint.params.config.graphs);
    Ok(LoadedModel { checkpoint, graphs, n_in, n_out, input_norm, target_norm })
}

pub fn load_graphs(cfg: &RunConfig) -> Result<GraphTriple> {
    require(&cfg.graphs_dir.join("physical.json"))?;
    GraphTriple::load_dir(&cfg.graphs_dir)
}

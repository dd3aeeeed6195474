use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use pvcgn::eval::{evaluate, ha_predictions, render_table, write_report_csv, MapeRule, MetricsReport, Slice, SliceSpec};
use pvcgn::graphs::{build_correlation, build_physical, build_similarity, read_topology, write_topology, GraphTriple};
use pvcgn::ingest::{
    gen_synthetic, make_windows, split_windows, write_records, zscore_fit, NormStats, RidershipTensor, WindowSample,
};
use pvcgn::model::{init_params, save_checkpoint, Checkpoint, ModelConfig, ModelGraphs, PvcgnParams};
use pvcgn::od::{OdDataset, OdSchema, OD_MAPE_RULE, OD_SLOTS};
use pvcgn::train::{grad_check, predict, prepare, train, EpochLog, GradCheckConfig, Loss};
use pvcgn::{Error, Matrix, Result};

use crate::data::{load_graphs, load_model, require, split_range, Dataset};
use crate::run_config::{write_manifest, RunConfig};

const OD_SCHEMA: &str = "od_schema.json";

fn subdir(cfg: &RunConfig, name: &str) -> Result<PathBuf> {
    let d = cfg.out.join(name);
    std::fs::create_dir_all(&d)?;
    Ok(d)
}

pub fn gen_synth(cfg: &RunConfig) -> Result<()> {
    let data = gen_synthetic(cfg.synth_stations, cfg.synth_days, cfg.seed(), &cfg.synth)?;
    for p in [&cfg.records, &cfg.stations, &cfg.topology, &cfg.tensor] {
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent)?;
        }
    }
    data.index.save(&cfg.stations)?;
    write_records(BufWriter::new(File::create(&cfg.records)?), &data.records, &data.index)?;
    write_topology(File::create(&cfg.topology)?, &data.physical_edges, &data.index)?;
    data.tensor.save(&cfg.tensor)?;
    write_manifest(cfg, "gen-synth", &[("records", data.records.len().to_string())])?;
    println!(
        "gen-synth stations={} days={} records={} bins={}",
        data.index.len(),
        cfg.synth_days,
        data.records.len(),
        data.tensor.n_bins()
    );
    Ok(())
}

pub fn build_graphs(cfg: &RunConfig) -> Result<()> {
    let data = Dataset::load(cfg, true)?;
    let n = data.index.len();
    require(&cfg.topology)?;
    let pairs = read_topology(File::open(&cfg.topology)?, &data.index)?;
    let triple = GraphTriple::new(
        build_physical(&pairs, n)?,
        build_similarity(&data.train_tensor(), cfg.selection)?,
        build_correlation(&data.train_records(), n, cfg.selection)?,
    )?;
    triple.save_dir(&cfg.graphs_dir)?;
    let hash = triple.content_hash();
    write_manifest(cfg, "build-graphs", &[("graph_hash", hash.clone()), ("train_days", data.ranges.train.to_string())])?;
    let edges = |g: &pvcgn::graphs::WeightedGraph| g.weights.nnz();
    println!(
        "build-graphs hash={hash} edges physical={} similarity={} correlation={}",
        edges(&triple.physical),
        edges(&triple.similarity),
        edges(&triple.correlation)
    );
    Ok(())
}

struct Splits {
    train: Vec<WindowSample>,
    val: Vec<WindowSample>,
}

fn model_config(cfg: &RunConfig, n_stations: usize, channels: usize) -> ModelConfig {
    ModelConfig { n_stations, channels, ..cfg.model.clone() }
}

/// Trains from the configured seed, writing the epoch log and both
/// checkpoints. Returns the selected epoch and its score.
fn fit_and_save(
    cfg: &RunConfig,
    kind: &str,
    graphs_hash: &str,
    graphs: &ModelGraphs<f64>,
    model: ModelConfig,
    splits: &Splits,
    norms: (NormStats, NormStats),
) -> Result<(usize, f64)> {
    let (input_norm, target_norm) = norms;
    let prep = |s: &[WindowSample]| prepare::<f64>(s, model.n_stations, model.channels, &input_norm, &target_norm);
    let (tr, va) = (prep(&splits.train)?, prep(&splits.val)?);
    let init = init_params::<f64>(&model, cfg.seed())?;
    let prefix = if kind == "od" { "od_" } else { "" };
    let log_path = subdir(cfg, "logs")?.join(format!("{prefix}train.csv"));
    let mut log = BufWriter::new(File::create(&log_path)?);
    writeln!(log, "{}", EpochLog::CSV_HEADER)?;
    let mut log_err = None;
    let outcome = train(init, graphs, &tr, &va, &cfg.train, |e| {
        if let Err(err) = writeln!(log, "{}", e.csv_row()).and_then(|_| log.flush()) {
            log_err.get_or_insert(err);
        }
        eprintln!("epoch {} lr={:e} train_mae={:.5} val_mae={:.5}", e.epoch, e.lr, e.train_mae, e.val_mae);
    })?;
    if let Some(e) = log_err {
        return Err(e.into());
    }
    let ck_dir = subdir(cfg, "checkpoints")?;
    let mut metadata = BTreeMap::new();
    metadata.insert("kind".to_string(), kind.to_string());
    metadata.insert("n_in".to_string(), cfg.n_in.to_string());
    metadata.insert("n_out".to_string(), cfg.n_out.to_string());
    metadata.insert("seed".to_string(), cfg.seed().to_string());
    metadata.insert("best_epoch".to_string(), outcome.best_epoch.to_string());
    let save = |params: &PvcgnParams<f64>, name: &str| {
        let ck = Checkpoint {
            params: params.clone(),
            graph_hash: graphs_hash.to_string(),
            input_norm: Some(input_norm),
            target_norm: Some(target_norm),
            metadata: metadata.clone(),
        };
        save_checkpoint(&ck, &ck_dir.join(format!("{prefix}{name}.pvc1")))
    };
    save(&outcome.best, "best")?;
    save(&outcome.last, "last")?;
    Ok((outcome.best_epoch, outcome.best_score))
}

pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let data = Dataset::load(cfg, false)?;
    let triple = load_graphs(cfg)?;
    if triple.n() != data.index.len() {
        return Err(Error::Shape(format!("graphs cover {} stations, data {}", triple.n(), data.index.len())));
    }
    let hash = triple.content_hash();
    let graphs = ModelGraphs::new(&triple, cfg.model.graphs);
    let split = split_windows(&data.tensor, make_windows(&data.tensor, cfg.n_in, cfg.n_out)?, &data.ranges)?;
    let norm = zscore_fit(data.train_tensor().values())?;
    let model = model_config(cfg, data.index.len(), 2);
    let splits = Splits { train: split.train, val: split.val };
    let (best_epoch, best_score) = fit_and_save(cfg, "station", &hash, &graphs, model, &splits, (norm, norm))?;
    write_manifest(
        cfg,
        "train",
        &[
            ("graph_hash", hash),
            ("train_days", data.ranges.train.to_string()),
            ("val_days", data.ranges.val.to_string()),
            ("norm.mean", format!("{:?}", norm.mean)),
            ("norm.std", format!("{:?}", norm.std)),
        ],
    )?;
    println!("train best_epoch={best_epoch} best_mae={best_score:.6} windows={}", splits.train.len());
    Ok(())
}

fn default_checkpoint(cfg: &RunConfig, given: Option<&Path>, name: &str) -> PathBuf {
    given.map_or_else(|| cfg.out.join("checkpoints").join(name), Path::to_path_buf)
}

fn check_reports(reports: &[(String, MetricsReport)]) -> Result<()> {
    match reports.iter().find(|(_, r)| !r.is_consistent()) {
        Some((name, r)) => Err(Error::Numerics(format!("report {name}/{} has rmse < mae", r.slice))),
        None => Ok(()),
    }
}

fn write_reports(cfg: &RunConfig, stem: &str, reports: &[(String, MetricsReport)]) -> Result<()> {
    check_reports(reports)?;
    let dir = subdir(cfg, "reports")?;
    let refs: Vec<(&str, &MetricsReport)> = reports.iter().map(|(n, r)| (n.as_str(), r)).collect();
    write_report_csv(&refs, BufWriter::new(File::create(dir.join(format!("{stem}.csv")))?))?;
    let mut text = String::new();
    let mut slices: Vec<&str> = reports.iter().map(|(_, r)| r.slice.as_str()).collect();
    slices.dedup();
    for s in slices {
        let cols: Vec<(&str, &MetricsReport)> = refs.iter().filter(|(_, r)| r.slice == s).copied().collect();
        text.push_str(&format!("slice: {s}\n{}\n", render_table(&cols)));
    }
    std::fs::write(dir.join(format!("{stem}.txt")), &text)?;
    print!("{text}");
    Ok(())
}

fn split_samples(data: &Dataset, tensor: &RidershipTensor, windows: Vec<WindowSample>, split: &str) -> Result<Vec<WindowSample>> {
    let range = split_range(&data.ranges, split)?;
    Ok(windows
        .into_iter()
        .filter(|w| range.contains(tensor.bin_time(w.t_anchor).expect("anchor inside tensor").0))
        .collect())
}

pub fn cmd_eval(cfg: &RunConfig, checkpoint: Option<&Path>, split: &str, slices: &[SliceSpec]) -> Result<()> {
    let data = Dataset::load(cfg, false)?;
    let path = default_checkpoint(cfg, checkpoint, "best.pvc1");
    let m = load_model(cfg, &path, "station")?;
    let samples = split_samples(&data, &data.tensor, make_windows(&data.tensor, m.n_in, m.n_out)?, split)?;
    let params = &m.checkpoint.params;
    let prepared = prepare::<f64>(&samples, params.config.n_stations, 2, &m.input_norm, &m.target_norm)?;
    let preds = predict(params, &m.graphs, &prepared)?;
    let ha = match ha_predictions(&data.tensor, &samples, &data.tensor, cfg.ha_k) {
        Ok(p) => Some(p),
        Err(Error::Baseline(msg)) => {
            eprintln!("warning: historical average skipped: {msg}");
            None
        }
        Err(e) => return Err(e),
    };
    let train_tensor = data.train_tensor();
    let slices = if slices.is_empty() { &cfg.slices[..] } else { slices };
    let mut reports = Vec::new();
    for spec in slices {
        let slice = Slice::resolve(spec, &train_tensor)?;
        let rule = MapeRule::default();
        reports.push(("pvcgn".to_string(), evaluate(&preds, &samples, Some(&m.target_norm), &data.tensor, &slice, rule)?));
        if let Some(ha) = &ha {
            let name = format!("ha_k{}", cfg.ha_k);
            reports.push((name, evaluate(ha, &samples, None, &data.tensor, &slice, rule)?));
        }
    }
    write_reports(cfg, &format!("eval_{split}"), &reports)?;
    write_manifest(
        cfg,
        "eval",
        &[
            ("checkpoint", path.display().to_string()),
            ("graph_hash", m.checkpoint.graph_hash.clone()),
            ("split", split.to_string()),
            ("split_days", split_range(&data.ranges, split)?.to_string()),
        ],
    )?;
    Ok(())
}

pub fn cmd_predict(cfg: &RunConfig, checkpoint: Option<&Path>, split: &str) -> Result<()> {
    let data = Dataset::load(cfg, false)?;
    let path = default_checkpoint(cfg, checkpoint, "best.pvc1");
    let m = load_model(cfg, &path, "station")?;
    let samples = split_samples(&data, &data.tensor, make_windows(&data.tensor, m.n_in, m.n_out)?, split)?;
    let n = data.index.len();
    let prepared = prepare::<f64>(&samples, n, 2, &m.input_norm, &m.target_norm)?;
    let preds = predict(&m.checkpoint.params, &m.graphs, &prepared)?;
    let out = subdir(cfg, "reports")?.join(format!("predict_{split}.csv"));
    let mut w = BufWriter::new(File::create(&out)?);
    writeln!(w, "bin,station,horizon,inflow_pred,outflow_pred")?;
    for (s, frames) in samples.iter().zip(&preds) {
        for (h, f) in frames.iter().enumerate() {
            let t = s.target_bin(h + 1);
            for i in 0..n {
                let inv = |z: f64| m.target_norm.invert_one(z);
                writeln!(w, "{t},{},{},{:.6},{:.6}", data.index.name(i), h + 1, inv(f[(i, 0)]), inv(f[(i, 1)]))?;
            }
        }
    }
    w.flush()?;
    write_manifest(cfg, "predict", &[("checkpoint", path.display().to_string()), ("split", split.to_string())])?;
    println!("predict rows={} file={}", samples.len() * m.n_out * n, out.display());
    Ok(())
}

/// Finite-difference check of the full model at both losses.
pub fn cmd_grad_check(cfg: &RunConfig, base: &GradCheckConfig) -> Result<bool> {
    let mut lines = vec!["loss,coords,max_rel_err,max_abs_err,tol,worst,status".to_string()];
    let mut all = true;
    for (loss, tol) in [(Loss::Mse, 1e-6), (Loss::Mae, 1e-4)] {
        let r = grad_check(&GradCheckConfig { loss, ..base.clone() }, tol)?;
        let status = if r.passed { "PASS" } else { "FAIL" };
        all &= r.passed;
        println!(
            "grad-check loss={loss:?} coords={} max_rel_err={:.3e} tol={tol:e} worst={} {status}",
            r.coords, r.max_rel_err, r.worst
        );
        lines.push(format!("{loss:?},{},{:e},{:e},{tol:e},{},{status}", r.coords, r.max_rel_err, r.max_abs_err, r.worst));
    }
    std::fs::write(subdir(cfg, "reports")?.join("grad_check.csv"), lines.join("\n") + "\n")?;
    write_manifest(
        cfg,
        "grad-check",
        &[
            ("stations", base.n_stations.to_string()),
            ("d", base.d.to_string()),
            ("coords", base.coords.to_string()),
            ("h", format!("{:?}", base.h)),
            ("gc_seed", base.seed.to_string()),
        ],
    )?;
    Ok(all)
}

fn od_dataset(data: &Dataset, schema: &OdSchema) -> Result<OdDataset> {
    OdDataset::build(data.records(), schema, data.tensor.bin_minutes(), &data.calendar())
}

pub fn cmd_od_train(cfg: &RunConfig) -> Result<()> {
    let data = Dataset::load(cfg, true)?;
    let triple = load_graphs(cfg)?;
    let hash = triple.content_hash();
    let graphs = ModelGraphs::new(&triple, cfg.model.graphs);
    let schema = pvcgn::od::build_schema(&data.train_records(), &data.index)?;
    schema.save(&cfg.graphs_dir.join(OD_SCHEMA))?;
    let od = od_dataset(&data, &schema)?;
    let split = split_windows(&od.inputs, od.windows(cfg.n_in, cfg.n_out)?, &data.ranges)?;
    let norms = od.fit_norms(&data.ranges.train)?;
    let model = model_config(cfg, data.index.len(), OD_SLOTS);
    let splits = Splits { train: split.train, val: split.val };
    let (best_epoch, best_score) = fit_and_save(cfg, "od", &hash, &graphs, model, &splits, norms)?;
    write_manifest(
        cfg,
        "od-train",
        &[
            ("graph_hash", hash),
            ("input_norm.mean", format!("{:?}", norms.0.mean)),
            ("input_norm.std", format!("{:?}", norms.0.std)),
            ("target_norm.mean", format!("{:?}", norms.1.mean)),
            ("target_norm.std", format!("{:?}", norms.1.std)),
        ],
    )?;
    println!("od-train best_epoch={best_epoch} best_mae={best_score:.6} windows={}", splits.train.len());
    Ok(())
}

pub fn cmd_od_eval(cfg: &RunConfig, checkpoint: Option<&Path>, split: &str) -> Result<()> {
    let data = Dataset::load(cfg, true)?;
    let path = default_checkpoint(cfg, checkpoint, "od_best.pvc1");
    let m = load_model(cfg, &path, "od")?;
    let schema = OdSchema::load(&cfg.graphs_dir.join(OD_SCHEMA))?;
    if schema.n() != data.index.len() {
        return Err(Error::Shape(format!("schema covers {} origins, data {}", schema.n(), data.index.len())));
    }
    let od = od_dataset(&data, &schema)?;
    let samples = split_samples(&data, &od.targets, od.windows(m.n_in, m.n_out)?, split)?;
    let prepared = prepare::<f64>(&samples, schema.n(), OD_SLOTS, &m.input_norm, &m.target_norm)?;
    let preds: Vec<Vec<Matrix<f64>>> = predict(&m.checkpoint.params, &m.graphs, &prepared)?;
    let report = evaluate(&preds, &samples, Some(&m.target_norm), &od.targets, &Slice::whole(), OD_MAPE_RULE)?;
    write_reports(cfg, &format!("od_eval_{split}"), &[("pvcgn_od".to_string(), report)])?;
    write_manifest(cfg, "od-eval", &[("checkpoint", path.display().to_string()), ("split", split.to_string())])?;
    Ok(())
}

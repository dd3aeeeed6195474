//! `pvcgn`: graph building, training, evaluation and prediction for metro
//! ridership forecasting.
//!
//! Failures print one line to stderr,
//! `error code=<exit> kind=<kind> message="<text>"`, and exit with
//! 2 (missing file), 3 (invalid configuration), 4 (numerical failure) or
//! 1 (anything else).

mod commands;
mod data;
mod run_config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pvcgn::config::KeyValues;
use pvcgn::eval::SliceSpec;
use pvcgn::train::GradCheckConfig;
use pvcgn::Error;

use run_config::RunConfig;

#[derive(Parser)]
#[command(name = "pvcgn", version, about = "Metro ridership forecasting with physical-virtual collaboration graphs")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat key=value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Worker threads; does not change any numeric output.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory (graphs/, checkpoints/, logs/, reports/).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic dataset to data/.
    GenSynth {
        #[arg(long)]
        stations: Option<usize>,
        #[arg(long)]
        days: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Build physical, similarity and correlation graphs from the training span.
    BuildGraphs {
        #[arg(long)]
        topology: Option<PathBuf>,
        #[arg(long)]
        tensor: Option<PathBuf>,
        #[arg(long)]
        records: Option<PathBuf>,
        /// topk:K or thresh:T
        #[arg(long)]
        select: Option<String>,
    },
    /// Train the station-level model.
    Train,
    /// Score a checkpoint against the historical-average baseline.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        /// whole, rush, top25, rush:HH:MM-HH:MM,... or top:F; repeatable.
        #[arg(long)]
        slice: Vec<String>,
    },
    /// Write original-scale forecasts for every window of a split.
    Predict {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Compare analytic gradients with central differences.
    GradCheck {
        #[arg(long, default_value_t = 8)]
        d: usize,
        #[arg(long, default_value_t = 6)]
        stations: usize,
        #[arg(long, default_value_t = 200)]
        coords: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the origin-destination model.
    OdTrain,
    /// Score an origin-destination checkpoint.
    OdEval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
    },
}

fn exit_code(e: &Error) -> (u8, &'static str) {
    match e {
        Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => (2, "missing_file"),
        Error::Config(_) => (3, "config"),
        Error::Argument(_) => (3, "argument"),
        Error::GraphMismatch { .. } => (3, "graph_mismatch"),
        Error::EmptySlice(_) => (3, "empty_slice"),
        Error::Numerics(_) => (4, "numerics"),
        Error::Normalization(_) => (4, "normalization"),
        Error::DegenerateData(_) => (4, "degenerate_data"),
        Error::Parse { .. } | Error::Record { .. } | Error::Csv(_) => (1, "parse"),
        Error::Json(_) | Error::Format(_) => (1, "format"),
        Error::Shape(_) => (1, "shape"),
        Error::Baseline(_) => (1, "baseline"),
        Error::Io(_) => (1, "io"),
    }
}

fn fail(code: u8, kind: &str, message: &str) -> ExitCode {
    eprintln!("error code={code} kind={kind} message={message:?}");
    ExitCode::from(code)
}

fn run_config(common: &Common, flags: &[(&str, String)]) -> pvcgn::Result<RunConfig> {
    let mut kv = match &common.config {
        Some(p) => KeyValues::load(p)?,
        None => KeyValues::default(),
    };
    for s in &common.set {
        kv.set_assignment(s)?;
    }
    for (k, v) in flags {
        kv.set(k, v.as_str());
    }
    RunConfig::from_key_values(&kv, &common.out)
}

fn run(cli: Cli) -> pvcgn::Result<bool> {
    let mut flags: Vec<(&str, String)> = Vec::new();
    let mut opt = |k: &'static str, v: Option<String>| {
        if let Some(v) = v {
            flags.push((k, v));
        }
    };
    match &cli.command {
        Command::GenSynth { stations, days, seed } => {
            opt("synth_stations", stations.map(|x| x.to_string()));
            opt("synth_days", days.map(|x| x.to_string()));
            opt("seed", seed.map(|x| x.to_string()));
        }
        Command::BuildGraphs { topology, tensor, records, select } => {
            let p = |x: &Option<PathBuf>| x.as_ref().map(|p| p.display().to_string());
            opt("topology", p(topology));
            opt("tensor", p(tensor));
            opt("records", p(records));
            opt("select", select.clone());
        }
        _ => {}
    }
    let cfg = run_config(&cli.common, &flags)?;
    match cli.command {
        Command::GenSynth { .. } => commands::gen_synth(&cfg)?,
        Command::BuildGraphs { .. } => commands::build_graphs(&cfg)?,
        Command::Train => commands::cmd_train(&cfg)?,
        Command::Eval { checkpoint, split, slice } => {
            let slices = slice.iter().map(|s| s.parse()).collect::<pvcgn::Result<Vec<SliceSpec>>>()?;
            commands::cmd_eval(&cfg, checkpoint.as_deref(), &split, &slices)?
        }
        Command::Predict { checkpoint, split } => commands::cmd_predict(&cfg, checkpoint.as_deref(), &split)?,
        Command::GradCheck { d, stations, coords, seed } => {
            let gc = GradCheckConfig { n_stations: stations, d, coords, seed, ..GradCheckConfig::default() };
            return commands::cmd_grad_check(&cfg, &gc);
        }
        Command::OdTrain => commands::cmd_od_train(&cfg)?,
        Command::OdEval { checkpoint, split } => commands::cmd_od_eval(&cfg, checkpoint.as_deref(), &split)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            return fail(3, "usage", msg.lines().next().unwrap_or_default().trim_start_matches("error: "));
        }
    };
    if let Some(k) = cli.common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            return fail(3, "config", &e.to_string());
        }
    }
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => fail(4, "numerics", "gradient check failed"),
        Err(e) => {
            let (code, kind) = exit_code(&e);
            fail(code, kind, &e.to_string())
        }
    }
}

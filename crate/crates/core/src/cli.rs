//! Command-line interface.
//!
//! Exit codes: 0 success, 2 invalid input or network, 3 numeric failure
//! during simulation, 4 calibration failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

use crate::calib::{self, CalibError, EnergyModel, Observation, Prediction, RunTotals};
use crate::codec::{self, EncodedInput, EncodingMode};
use crate::emac::{self, layer_pricing};
use crate::engine::stats::EnergyStats;
use crate::engine::{run_dataset, run_inference, AggregateStats, EngineError, EngineOptions, Summary};
use crate::netspec::{parse_network, Coding, NetSpecError, NetworkSpec};
use crate::neuron::energy_params;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Numeric(String),
    #[error("{0}")]
    Calibration(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Calibration(_) => 4,
        }
    }
}

impl From<NetSpecError> for CliError {
    fn from(e: NetSpecError) -> Self {
        CliError::Validation(format!("invalid network: {}", e))
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        let numeric = match &e {
            EngineError::NonFiniteState { .. } => true,
            EngineError::SampleFailures(f) => f.iter().any(|f| f.non_finite),
            _ => false,
        };
        if numeric {
            CliError::Numeric(e.to_string())
        } else {
            CliError::Validation(e.to_string())
        }
    }
}

impl From<CalibError> for CliError {
    fn from(e: CalibError) -> Self {
        match e {
            CalibError::RankDeficient(_) | CalibError::IllConditioned(_) => CliError::Calibration(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Validation(format!("{}: {}", path.display(), e))
}

#[derive(Debug, Parser)]
#[command(name = "emacprof", version, about = "Spiking network simulator and EMAC energy profiler")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print per-layer structure and energy parameters.
    Inspect(NetArgs),
    /// Run a dataset and write energy, spike and latency reports.
    Profile(ProfileArgs),
    /// Run one sample and write per-timestep spike counts.
    Trace(TraceArgs),
    /// Fit a hardware energy model from measured observations.
    Calibrate(CalibrateArgs),
    /// Predict energy in joules from a fitted model.
    Predict(PredictArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CodingArg {
    Rate,
    Roc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EncodingArg {
    Analog,
    Poisson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Json,
    Csv,
    Both,
}

impl FormatArg {
    fn json(self) -> bool {
        self != FormatArg::Csv
    }
    fn csv(self) -> bool {
        self != FormatArg::Json
    }
}

#[derive(Debug, Args)]
pub struct NetArgs {
    /// Network manifest (JSON).
    #[arg(long)]
    pub network: PathBuf,
    /// Weights container; defaults to the manifest path with extension `.emwt`.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub coding: Option<CodingArg>,
    #[arg(long)]
    pub t_max: Option<usize>,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Input tensor file (.bin or .csv) or a directory of them.
    #[arg(long)]
    pub inputs: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Drive the first layer with analog currents or Poisson spike trains.
    #[arg(long, value_enum, default_value_t = EncodingArg::Analog)]
    pub encoding: EncodingArg,
    /// Price the analog encoder layer every timestep.
    #[arg(long)]
    pub encoder_per_step: bool,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    #[command(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Both)]
    pub format: FormatArg,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    #[command(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    pub input: InputArgs,
    /// Index of the sample when `--inputs` is a directory.
    #[arg(long, default_value_t = 0)]
    pub sample: usize,
    /// Also write every spike event to `raster.csv`.
    #[arg(long)]
    pub raster: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// CSV with columns `name,S,U,E_joules` (optional `latency_s`).
    #[arg(long)]
    pub observations: PathBuf,
    /// Idle power in watts subtracted as `floor·latency_s` before fitting.
    #[arg(long)]
    pub floor_power: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Predict for the `(S, U)` rows of an observations CSV instead of
    /// running a network.
    #[arg(long, conflicts_with_all = ["network", "inputs"])]
    pub observations: Option<PathBuf>,
    #[arg(long, requires = "inputs")]
    pub network: Option<PathBuf>,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, requires = "network")]
    pub inputs: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub coding: Option<CodingArg>,
    #[arg(long)]
    pub t_max: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = EncodingArg::Analog)]
    pub encoding: EncodingArg,
    #[arg(long)]
    pub encoder_per_step: bool,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("EMACPROF_LOG", "warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e);
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Inspect(a) => {
            let net = load_network(&a.network, a.weights.as_deref(), a.coding, a.t_max)?;
            print!("{}", inspect_report(&net));
            Ok(())
        }
        Command::Profile(a) => cmd_profile(&a),
        Command::Trace(a) => cmd_trace(&a),
        Command::Calibrate(a) => cmd_calibrate(&a),
        Command::Predict(a) => cmd_predict(&a),
    }
}

fn default_weights_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("emwt")
}

pub fn load_network(
    manifest: &Path,
    weights: Option<&Path>,
    coding: Option<CodingArg>,
    t_max: Option<usize>,
) -> Result<NetworkSpec, CliError> {
    let m = fs::read(manifest).map_err(|e| io_err(manifest, e))?;
    let wpath = weights.map(Path::to_path_buf).unwrap_or_else(|| default_weights_path(manifest));
    let w = fs::read(&wpath).map_err(|e| io_err(&wpath, e))?;
    let mut net = parse_network(&m, &w)?;
    if let Some(c) = coding {
        net.coding = match c {
            CodingArg::Rate => Coding::Rate,
            CodingArg::Roc => Coding::Roc,
        };
    }
    if let Some(t) = t_max {
        net.max_timesteps = t;
    }
    net.validate()?;
    Ok(net)
}

/// Input files: the path itself, or every `.bin`/`.csv` in the directory,
/// sorted by file name.
pub fn input_files(path: &Path) -> Result<Vec<PathBuf>, CliError> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| io_err(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("bin") | Some("csv")))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(CliError::Validation(format!("{}: no .bin or .csv inputs", path.display())));
        }
        Ok(files)
    } else if path.exists() {
        Ok(vec![path.to_path_buf()])
    } else {
        Err(io_err(path, "no such file or directory"))
    }
}

fn load_inputs(net: &NetworkSpec, args: &InputArgs, only: Option<usize>) -> Result<Vec<EncodedInput>, CliError> {
    let mut files = input_files(&args.inputs)?;
    if let Some(k) = only {
        if k >= files.len() {
            return Err(CliError::Validation(format!("sample {} out of range ({} inputs)", k, files.len())));
        }
        files = vec![files.swap_remove(k)];
    }
    let expected = net.input_shape().expect("validated network has layers");
    let mode = match args.encoding {
        EncodingArg::Analog => EncodingMode::AnalogCurrent,
        EncodingArg::Poisson => EncodingMode::PoissonSpikes,
    };
    files
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let t = codec::read_tensor(f).map_err(|e| CliError::Validation(e.to_string()))?;
            // each sample gets its own stream, derived from the run seed
            let seed = args.seed.wrapping_add(i as u64);
            codec::encode(&t, expected, mode, seed).map_err(|e| io_err(f, e))
        })
        .collect()
}

fn fmt_num(v: f64) -> String {
    let s = format!("{:.3}", v);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.to_string() }
}

pub fn inspect_report(net: &NetworkSpec) -> String {
    let mut out = String::new();
    let coding = match net.coding {
        Coding::Rate => "rate",
        Coding::Roc => "roc",
    };
    let _ = writeln!(out, "coding={} t_max={} layers={}", coding, net.max_timesteps, net.layers.len());
    let mut upd_per_step = 0.0;
    for (l, layer) in net.layers.iter().enumerate() {
        let c = layer.counts();
        let (e_syn, e_upd) = match layer.neuron_kind() {
            Some(k) => {
                let p = energy_params(k);
                (p.e_syn, p.e_upd)
            }
            None => layer_pricing(net, l, false),
        };
        if layer.kind.has_neurons() && !net.is_ann() {
            upd_per_step += c.n_n as f64 * e_upd;
        }
        let kind = layer.neuron_kind().map(|k| k.label()).unwrap_or("-");
        let _ = writeln!(
            out,
            "{}  n_n={} n_s={} e=({},{})  n_sr={} neuron={} name={}",
            layer.kind.label(),
            c.n_n,
            c.n_s,
            fmt_num(e_syn),
            fmt_num(e_upd),
            c.n_sr,
            kind,
            layer.name
        );
    }
    let _ = writeln!(out, "MAC={}", emac::ann_mac_count(net));
    let _ = writeln!(out, "E_upd_per_timestep={}", fmt_num(upd_per_step));
    out
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

#[derive(Serialize)]
struct ProfileReport<'a> {
    n_samples: usize,
    coding: Coding,
    max_timesteps: usize,
    encoding: &'static str,
    encoder_per_step: bool,
    seed: u64,
    #[serde(flatten)]
    stats: &'a AggregateStats,
    workload: RunTotals,
}

fn energy_stats_csv(stats: &EnergyStats) -> String {
    let mut s = String::from("layer,component,mean,std\n");
    let row = |s: &mut String, name: &str, comp: &str, v: &Summary| {
        let _ = writeln!(s, "{},{},{},{}", name, comp, v.mean, v.std);
    };
    for l in &stats.layers {
        row(&mut s, &l.name, "syn", &l.e_syn);
        row(&mut s, &l.name, "upd", &l.e_upd);
        row(&mut s, &l.name, "rec", &l.e_rec);
    }
    row(&mut s, "total", "syn", &stats.e_syn);
    row(&mut s, "total", "upd", &stats.e_upd);
    row(&mut s, "total", "rec", &stats.e_rec);
    row(&mut s, "total", "syn_pool", &stats.e_syn_pool);
    row(&mut s, "total", "syn_plus_rec", &stats.e_syn_plus_rec);
    row(&mut s, "total", "tot", &stats.e_tot);
    s
}

fn engine_options(encoder_per_step: bool, record_raster: bool) -> EngineOptions {
    EngineOptions {
        encoder_per_step,
        record_raster,
    }
}

fn cmd_profile(a: &ProfileArgs) -> Result<(), CliError> {
    let net = load_network(&a.net.network, a.net.weights.as_deref(), a.net.coding, a.net.t_max)?;
    let samples = load_inputs(&net, &a.input, None)?;
    let stats = run_dataset(&net, &samples, engine_options(a.input.encoder_per_step, false), a.jobs.max(1))?;
    log::info!("profiled {} samples", stats.n_samples);

    ensure_dir(&a.out)?;
    if a.format.json() {
        let report = ProfileReport {
            n_samples: stats.n_samples,
            coding: net.coding,
            max_timesteps: net.max_timesteps,
            encoding: match a.input.encoding {
                EncodingArg::Analog => "analog",
                EncodingArg::Poisson => "poisson",
            },
            encoder_per_step: a.input.encoder_per_step,
            seed: a.input.seed,
            stats: &stats,
            workload: RunTotals::from_stats(&net, &stats),
        };
        write_file(&a.out.join("energy.json"), to_json(&report))?;
    }
    if a.format.csv() {
        write_file(&a.out.join("energy_analytic.csv"), energy_stats_csv(&stats.analytic))?;
        write_file(&a.out.join("energy_exact.csv"), energy_stats_csv(&stats.exact))?;
    }

    let mut spikes = String::from("layer,kind,spikes_mean,spikes_std\n");
    for (s, l) in stats.spikes.iter().zip(&net.layers) {
        let _ = writeln!(spikes, "{},{},{},{}", s.name, l.kind.label(), s.spikes.mean, s.spikes.std);
    }
    let _ = writeln!(spikes, "total,-,{},{}", stats.total_spikes.mean, stats.total_spikes.std);
    write_file(&a.out.join("spikes.csv"), spikes)?;

    let mut latency = String::from("sample,t_used,class_index,fallback_used\n");
    for (i, r) in stats.results.iter().enumerate() {
        let _ = writeln!(latency, "{},{},{},{}", i, r.trace.t_used, r.decision.class_index, r.decision.fallback_used);
    }
    write_file(&a.out.join("latency.csv"), latency)?;
    Ok(())
}

fn cmd_trace(a: &TraceArgs) -> Result<(), CliError> {
    let net = load_network(&a.net.network, a.net.weights.as_deref(), a.net.coding, a.net.t_max)?;
    let sample = load_inputs(&net, &a.input, Some(a.sample))?.remove(0);
    let result = run_inference(&net, &sample, engine_options(a.input.encoder_per_step, a.raster))?;
    let trace = &result.trace;

    ensure_dir(&a.out)?;
    let mut csv = String::from("layer,t,spike_count\n");
    for (l, layer) in net.layers.iter().enumerate() {
        for t in 0..trace.t_used {
            let _ = writeln!(csv, "{},{},{}", layer.name, t + 1, trace.counts[l][t]);
        }
    }
    write_file(&a.out.join("trace.csv"), csv)?;

    if let Some(raster) = &trace.raster {
        let mut csv = String::from("layer,neuron,t\n");
        for (l, events) in raster.iter().enumerate() {
            for (n, t) in events {
                let _ = writeln!(csv, "{},{},{}", net.layers[l].name, n, t);
            }
        }
        write_file(&a.out.join("raster.csv"), csv)?;
    }

    #[derive(Serialize)]
    struct Summary<'a> {
        decision: &'a codec::Decision,
        t_used: usize,
        layer_spikes: Vec<(String, u64)>,
        total_spikes: u64,
        analytic: &'a emac::EnergyReport,
        exact: &'a emac::EnergyReport,
    }
    let summary = Summary {
        decision: &result.decision,
        t_used: trace.t_used,
        layer_spikes: net
            .layers
            .iter()
            .enumerate()
            .map(|(l, layer)| (layer.name.clone(), trace.layer_spikes(l)))
            .collect(),
        total_spikes: trace.total_spikes(),
        analytic: &result.energy.analytic,
        exact: &result.energy.exact,
    };
    write_file(&a.out.join("trace_summary.json"), to_json(&summary))
}

fn read_observations_file(path: &Path) -> Result<Vec<Observation>, CliError> {
    let f = fs::File::open(path).map_err(|e| io_err(path, e))?;
    calib::read_observations(f).map_err(|e| io_err(path, e))
}

fn cmd_calibrate(a: &CalibrateArgs) -> Result<(), CliError> {
    let mut obs = read_observations_file(&a.observations)?;
    if let Some(floor) = a.floor_power {
        calib::subtract_floor(&mut obs, floor)?;
    }
    let model = calib::fit_energy_model(&obs)?;
    ensure_dir(&a.out)?;
    write_file(&a.out.join("energy_model.json"), model.to_json())?;
    print!("{}", model.to_json());
    Ok(())
}

#[derive(Serialize)]
struct PredictRow {
    name: String,
    #[serde(rename = "S")]
    s: f64,
    #[serde(rename = "U")]
    u: f64,
    #[serde(flatten)]
    prediction: Prediction,
}

fn cmd_predict(a: &PredictArgs) -> Result<(), CliError> {
    let text = fs::read_to_string(&a.model).map_err(|e| io_err(&a.model, e))?;
    let model = EnergyModel::from_json(&text).map_err(|e| io_err(&a.model, e))?;
    let rows: Vec<PredictRow> = if let Some(path) = &a.observations {
        read_observations_file(path)?
            .into_iter()
            .map(|o| PredictRow {
                prediction: calib::predict_energy(&model, o.s, o.u),
                name: o.name,
                s: o.s,
                u: o.u,
            })
            .collect()
    } else {
        let (Some(network), Some(inputs)) = (&a.network, &a.inputs) else {
            return Err(CliError::Validation("predict needs --observations or --network with --inputs".into()));
        };
        let net = load_network(network, a.weights.as_deref(), a.coding, a.t_max)?;
        let input = InputArgs {
            inputs: inputs.clone(),
            seed: a.seed,
            encoding: a.encoding,
            encoder_per_step: a.encoder_per_step,
        };
        let samples = load_inputs(&net, &input, None)?;
        let stats = run_dataset(&net, &samples, engine_options(a.encoder_per_step, false), a.jobs.max(1))?;
        let totals = RunTotals::from_stats(&net, &stats);
        let name = network
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        vec![PredictRow {
            name,
            s: totals.s_mean,
            u: totals.u_mean,
            prediction: calib::predict_energy(&model, totals.s_mean, totals.u_mean),
        }]
    };
    let mut csv = String::from("name,S,U,E_joules,sigma_joules\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{},{},{},{}", r.name, r.s, r.u, r.prediction.e_joules, r.prediction.sigma_joules);
    }
    print!("{}", csv);
    if let Some(out) = &a.out {
        ensure_dir(out)?;
        write_file(&out.join("prediction.json"), to_json(&rows))?;
        write_file(&out.join("prediction.csv"), csv)?;
    }
    Ok(())
}

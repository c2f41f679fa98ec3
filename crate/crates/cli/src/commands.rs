//! The work behind each subcommand. Every `run_*` function returns the text
//! to print.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use bellbench_core::apparatus::{coincidence_mean, run_protocol, LiveSession};
use bellbench_core::estimation::{
    calibrate_sigma_s, compute_s_with, diagnose_state, fit_nmodel, tune, ChshResult, ChshRun, CountErrorModel,
    SessionBench, TuneOptions,
};
use bellbench_core::hvt::chsh_bound_sweep;
use bellbench_core::io::{format_counts, load_config, load_counts, save_result, ConfigFile, ResultDocument};
use bellbench_core::{deg, Angle, ChshAngles, CountRecord};

use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "bellbench", version, about = "Virtual entangled-photon Bell test: simulate, analyze, serve")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sweep β at fixed α values and write counts plus plot data.
    Scan(ScanArgs),
    /// CHSH analysis of a sixteen-row count table or a simulated run.
    Bell(BellArgs),
    /// State parameters from N(0,0), N(90,90), N(0,90), N(45,45).
    Diagnose(DiagnoseArgs),
    /// Fit the expected-count model to an angle scan.
    Fit(FitArgs),
    /// Tune the simulated source for maximal entanglement.
    Tune(TuneArgs),
    /// Compare the spread of S over simulated runs with the propagated σ_S.
    Calibrate(CalibrateArgs),
    /// Search random local hidden-variable strategies for |S| > 2.
    Bound(BoundArgs),
    /// Serve live sessions over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SimArgs {
    /// JSON configuration file; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override the configured generator seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl SimArgs {
    fn load(&self) -> CliResult<ConfigFile> {
        let mut config = match &self.config {
            Some(path) => load_config(path)?,
            None => ConfigFile::default(),
        };
        if let Some(seed) = self.seed {
            config.apparatus.rng_seed = seed;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    #[command(flatten)]
    pub sim: SimArgs,
    /// Signal analyzer settings, degrees.
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 45.0, 90.0, 135.0], allow_negative_numbers = true)]
    pub alphas: Vec<f64>,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub beta_start: f64,
    #[arg(long, default_value_t = 350.0, allow_negative_numbers = true)]
    pub beta_stop: f64,
    #[arg(long, default_value_t = 10.0)]
    pub beta_step: f64,
    /// Acquisition time per point, seconds.
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub duration: f64,
    /// Count table output (CSV); printed when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Plot data output (JSON).
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BellArgs {
    /// Count table with the sixteen settings.
    #[arg(long, conflicts_with_all = ["config", "seed"])]
    pub counts: Option<PathBuf>,
    #[command(flatten)]
    pub sim: SimArgs,
    /// a, a', b, b' in degrees; the configured angles otherwise.
    #[arg(long, value_delimiter = ',', num_args = 4, allow_negative_numbers = true)]
    pub angles: Option<Vec<f64>>,
    /// Acquisition time per setting for a simulated run, seconds.
    #[arg(long, default_value_t = 15.0)]
    pub duration: f64,
    /// Use sqrt(N + 1) count errors so empty cells are allowed.
    #[arg(long)]
    pub add_one: bool,
    /// Print the result document as JSON.
    #[arg(long)]
    pub json: bool,
    /// Write the result document here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    pub n00: f64,
    pub n9090: f64,
    pub n090: f64,
    pub n4545: f64,
    #[arg(long)]
    pub json: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Count table of the scan.
    pub scan: PathBuf,
    /// Also fit a common offset of the idler analyzer.
    #[arg(long)]
    pub beta_shift: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub sim: SimArgs,
    /// Largest number of acquisitions.
    #[arg(long, default_value_t = 200)]
    pub budget: usize,
    /// Acquisition time, seconds; defaults to about 300 expected pairs.
    #[arg(long)]
    pub duration: Option<f64>,
    /// Starting laser polarizer setting, degrees.
    #[arg(long, allow_negative_numbers = true)]
    pub theta_l: Option<f64>,
    /// Starting quartz plate setting, degrees.
    #[arg(long, allow_negative_numbers = true)]
    pub phi_l: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub sim: SimArgs,
    #[arg(long, default_value_t = 500)]
    pub repetitions: usize,
    #[arg(long, default_value_t = 15.0)]
    pub duration: f64,
}

#[derive(Debug, Args)]
pub struct BoundArgs {
    #[arg(long, default_value_t = 1000)]
    pub strategies: usize,
    #[arg(long, default_value_t = 100)]
    pub quadruples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
}

fn to_json(value: &impl Serialize) -> String {
    serde_json::to_string_pretty(value).expect("plain data") + "\n"
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| bellbench_core::Error::Io { path: path.into(), source: e }.into())
}

#[derive(Debug, Serialize)]
pub struct PlotPoint {
    pub beta_deg: f64,
    pub n_coinc: u64,
    /// `√N`.
    pub sigma: f64,
    /// Mean count of the simulator at this setting.
    pub expected: f64,
}

#[derive(Debug, Serialize)]
pub struct PlotSeries {
    pub alpha_deg: f64,
    pub points: Vec<PlotPoint>,
}

#[derive(Debug, Serialize)]
pub struct PlotData {
    pub schema_version: u32,
    pub duration_s: f64,
    pub series: Vec<PlotSeries>,
}

pub struct ScanOutput {
    pub records: Vec<CountRecord>,
    pub plot: PlotData,
}

pub fn scan(args: &ScanArgs) -> CliResult<ScanOutput> {
    let config = args.sim.load()?;
    if !(args.beta_step > 0.0) || !(args.beta_stop >= args.beta_start) {
        return Err(CliError::Usage("beta range needs step > 0 and stop >= start".into()));
    }
    let steps = ((args.beta_stop - args.beta_start) / args.beta_step + 1e-9).floor() as usize;
    let betas: Vec<f64> = (0..=steps).map(|k| args.beta_start + k as f64 * args.beta_step).collect();
    let settings: Vec<(Angle, Angle)> = args
        .alphas
        .iter()
        .flat_map(|&a| betas.iter().map(move |&b| (deg(a), deg(b))))
        .collect();
    let state = config.source.prepare(config.dials.theta_l, config.dials.phi_l);
    let mut records = run_protocol(&config.apparatus, &state, &settings, args.duration)?;
    // keep the requested angles rather than their wrapped form
    for (r, (a, b)) in records.iter_mut().zip(args.alphas.iter().flat_map(|&a| betas.iter().map(move |&b| (a, b)))) {
        r.alpha = a;
        r.beta = b;
    }
    let mut series = Vec::new();
    for (k, &alpha) in args.alphas.iter().enumerate() {
        let rows = &records[k * betas.len()..(k + 1) * betas.len()];
        let points = rows
            .iter()
            .map(|r| {
                Ok(PlotPoint {
                    beta_deg: r.beta,
                    n_coinc: r.n_coinc,
                    sigma: (r.n_coinc as f64).sqrt(),
                    expected: coincidence_mean(&config.apparatus, &state, deg(r.alpha), deg(r.beta), args.duration)?,
                })
            })
            .collect::<CliResult<Vec<_>>>()?;
        series.push(PlotSeries { alpha_deg: alpha, points });
    }
    let plot = PlotData { schema_version: bellbench_core::io::SCHEMA_VERSION, duration_s: args.duration, series };
    Ok(ScanOutput { records, plot })
}

pub fn run_scan(args: &ScanArgs) -> CliResult<String> {
    let out = scan(args)?;
    let csv = format_counts(&out.records);
    if let Some(path) = &args.plot {
        write_file(path, &to_json(&out.plot))?;
    }
    match &args.out {
        Some(path) => {
            write_file(path, &csv)?;
            Ok(format!("wrote {} records to {}\n", out.records.len(), path.display()))
        }
        None => Ok(csv),
    }
}

pub fn bell_result(args: &BellArgs) -> CliResult<(ChshResult, Vec<u8>)> {
    let model = if args.add_one { CountErrorModel::AddOne } else { CountErrorModel::Poisson };
    let (records, angles, inputs) = match &args.counts {
        Some(path) => {
            let inputs = fs::read(path).map_err(|e| bellbench_core::Error::Io { path: path.clone(), source: e })?;
            let angles = match &args.angles {
                Some(v) => ChshAngles::new(v[0], v[1], v[2], v[3]),
                None => ChshAngles::canonical(),
            };
            (load_counts(path)?, angles, inputs)
        }
        None => {
            let mut config = args.sim.load()?;
            if let Some(v) = &args.angles {
                config.angles = ChshAngles::new(v[0], v[1], v[2], v[3]);
            }
            let state = config.source.prepare(config.dials.theta_l, config.dials.phi_l);
            let records = run_protocol(&config.apparatus, &state, &config.angles.settings(), args.duration)?;
            let inputs = serde_json::to_vec(&config).expect("plain data");
            (records, config.angles, inputs)
        }
    };
    let run = ChshRun::from_records(&records, angles)?;
    Ok((compute_s_with(&run, model)?, inputs))
}

pub fn format_bell(result: &ChshResult) -> String {
    let verdict = if result.violates_bound() {
        format!("violated: |S| exceeds 2 by {:.1} standard deviations", result.significance())
    } else {
        format!("not violated: |S| <= 2 ({:+.1} standard deviations)", result.significance())
    };
    format!(
        "E(a, b)   = {:+.4}\nE(a, b')  = {:+.4}\nE(a', b)  = {:+.4}\nE(a', b') = {:+.4}\nS = {:.4} ± {:.4}\nCHSH inequality {verdict}\n",
        result.e_ab, result.e_abp, result.e_apb, result.e_apbp, result.s_value, result.sigma_s
    )
}

pub fn run_bell(args: &BellArgs) -> CliResult<String> {
    let (result, inputs) = bell_result(args)?;
    let doc = ResultDocument::new(result, &inputs);
    if let Some(path) = &args.out {
        save_result(&doc, path)?;
    }
    Ok(if args.json { doc.to_json() } else { format_bell(&result) })
}

pub fn run_diagnose(args: &DiagnoseArgs) -> CliResult<String> {
    let d = diagnose_state(args.n00, args.n9090, args.n090, args.n4545)?;
    let inputs = format!("{} {} {} {}", args.n00, args.n9090, args.n090, args.n4545);
    let doc = ResultDocument::new(d, inputs.as_bytes());
    if let Some(path) = &args.out {
        save_result(&doc, path)?;
    }
    if args.json {
        return Ok(doc.to_json());
    }
    let mut text = format!(
        "C = {}\nA = {}\ntheta_l = {:.1}° ({:.4}°)\nphi_m = {:.1}° ({:.4}°)\ncos phi_m = {:.4}\n",
        d.c_offset, d.a_pairs, d.theta_l, d.theta_l, d.phi_m, d.phi_m, d.cos_phi_m
    );
    if d.interference_out_of_range {
        text.push_str("warning: interference estimate outside [-1, 1] was clamped\n");
    }
    Ok(text)
}

pub fn run_fit(args: &FitArgs) -> CliResult<String> {
    let inputs = fs::read(&args.scan).map_err(|e| bellbench_core::Error::Io { path: args.scan.clone(), source: e })?;
    let records = load_counts(&args.scan)?;
    let fit = fit_nmodel(&records, args.beta_shift)?;
    let doc = ResultDocument::new(fit, &inputs);
    if let Some(path) = &args.out {
        save_result(&doc, path)?;
    }
    Ok(doc.to_json())
}

pub fn run_tune(args: &TuneArgs) -> CliResult<String> {
    let config = args.sim.load()?;
    let mut dials = config.dials;
    if let Some(t) = args.theta_l {
        dials.theta_l = deg(t);
    }
    if let Some(p) = args.phi_l {
        dials.phi_l = deg(p);
    }
    let duration = match args.duration {
        Some(t) => t,
        None if config.apparatus.pair_rate > 0.0 => 300.0 / config.apparatus.pair_rate,
        None => return Err(CliError::Usage("pair_rate is zero; pass --duration".into())),
    };
    let mut session = LiveSession::new(config.apparatus, config.source, dials)?;
    let mut bench = SessionBench { session: &mut session, duration_t: duration };
    let outcome = tune(&mut bench, args.budget, &TuneOptions::default())?;
    Ok(to_json(&outcome))
}

pub fn run_calibrate(args: &CalibrateArgs) -> CliResult<String> {
    let config = args.sim.load()?;
    let state = config.source.prepare(config.dials.theta_l, config.dials.phi_l);
    let cal = calibrate_sigma_s(
        &config.apparatus,
        &state,
        &config.angles,
        args.duration,
        args.repetitions,
        config.apparatus.rng_seed,
    )?;
    Ok(to_json(&cal))
}

pub fn run_bound(args: &BoundArgs) -> CliResult<String> {
    let sweep = chsh_bound_sweep(args.seed, args.strategies, args.quadruples)?;
    Ok(to_json(&sweep))
}

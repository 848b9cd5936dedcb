//! Command implementations behind the `flybat` binary.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use flybat_core::endurance::{
    default_phi_grid, design_comparison, flight_time, normalized_curve, EnduranceInputs,
};
use flybat_core::mission::MissionSummary;
use flybat_core::scenario::{Scenario, ScenarioError};
use flybat_core::sim::{run_mission, SimError};

/// Exit status for configuration and argument errors.
pub const EXIT_CONFIG: u8 = 2;
/// Exit status for numeric failures during a run.
pub const EXIT_NUMERIC: u8 = 3;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "FLYBAT_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "flybat", version, about = "Flying-battery mission simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a mission and write telemetry plus a summary.
    Run(RunArgs),
    /// Hover endurance versus battery mass fraction.
    Analyze(AnalyzeArgs),
    /// Run one mission per value of a scenario key.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Scenario file, or a bundled name (`solo_hover`, `paper_demo`).
    #[arg(long)]
    pub scenario: PathBuf,
    /// Output directory.
    #[arg(long, env = OUT_DIR_ENV, default_value = "flybat-out")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Simulated time limit, s.
    #[arg(long)]
    pub duration: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Non-battery mass, kg.
    #[arg(long, default_value_t = 0.630)]
    pub m0: f64,
    /// Battery mass fraction.
    #[arg(long, default_value_t = 0.190 / 0.820)]
    pub phi: f64,
    /// Take energy density and k_p from this scenario's primary pack and
    /// calibrated main vehicle.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Energy density, Wh/kg.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Powertrain constant, W/kg^1.5.
    #[arg(long)]
    pub k_p: Option<f64>,
    /// Observed solo flight time used for the design comparison, s.
    #[arg(long, default_value_t = 720.0)]
    pub observed: f64,
    /// Write the normalised curve on the default grid to this CSV.
    #[arg(long)]
    pub curve: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Scenario key, `section.key` or a unique bare key.
    #[arg(long)]
    pub param: String,
    /// Comma-separated values, or `start:stop:count`.
    #[arg(long, allow_hyphen_values = true)]
    pub range: String,
    /// Output CSV; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write per-run telemetry into this directory.
    #[arg(long)]
    pub telemetry_dir: Option<PathBuf>,
}

/// Error carrying the process exit status.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub error: anyhow::Error,
}

impl CliError {
    fn config(error: impl Into<anyhow::Error>) -> Self {
        Self { code: EXIT_CONFIG, error: error.into() }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        let code = if e.is_numeric() { EXIT_NUMERIC } else { EXIT_CONFIG };
        Self { code, error: e.into() }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        Self::config(e)
    }
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    Scenario::load(path)
}

fn stem(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or("scenario").to_string()
}

/// Writes `<stem>_telemetry.csv` and `<stem>_summary.csv` under `out`.
pub fn cmd_run(args: &RunArgs) -> Result<MissionSummary, CliError> {
    let mut scenario = load_scenario(&args.scenario)?;
    if let Some(seed) = args.seed {
        scenario.sim.seed = seed;
    }
    if let Some(d) = args.duration {
        scenario.sim.duration = d;
    }
    scenario.validate()?;
    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))
        .map_err(CliError::config)?;
    let name = stem(&args.scenario);
    let tel_path = args.out.join(format!("{name}_telemetry.csv"));
    let file = File::create(&tel_path)
        .with_context(|| format!("creating {}", tel_path.display()))
        .map_err(CliError::config)?;
    let result = run_mission(&scenario, Some(BufWriter::new(file)))?;
    let summary_path = args.out.join(format!("{name}_summary.csv"));
    fs::write(&summary_path, result.summary.to_csv())
        .with_context(|| format!("writing {}", summary_path.display()))
        .map_err(CliError::config)?;
    print!("{}", result.summary.to_table());
    println!("telemetry: {}", tel_path.display());
    println!("summary:   {}", summary_path.display());
    Ok(result.summary)
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<String, CliError> {
    let (mut gamma, mut k_p) = (args.gamma, args.k_p);
    if let Some(path) = &args.scenario {
        let s = load_scenario(path)?;
        let pack = s.primary_pack()?;
        gamma.get_or_insert(pack.initial_energy_wh / pack.mass);
        k_p.get_or_insert(s.calibrated_main_params()?.k_p);
    }
    let defaults = Scenario::default();
    let pack = defaults.primary_pack()?;
    let inputs = EnduranceInputs {
        m0: args.m0,
        phi: args.phi,
        gamma: gamma.unwrap_or(pack.initial_energy_wh / pack.mass),
        k_p: k_p.unwrap_or(defaults.vehicles.main_k_p),
    };
    let report = flight_time(&inputs).map_err(CliError::config)?;
    let mut out = String::new();
    out += &format!("m0_kg              {:.4}\n", inputs.m0);
    out += &format!("phi                {:.6}\n", inputs.phi);
    out += &format!("gamma_wh_per_kg    {:.4}\n", inputs.gamma);
    out += &format!("k_p                {:.4}\n", inputs.k_p);
    out += &format!("battery_mass_kg    {:.4}\n", report.battery_mass);
    out += &format!("total_mass_kg      {:.4}\n", report.total_mass);
    out += &format!("hover_power_w      {:.3}\n", report.hover_power);
    out += &format!("flight_time_s      {:.3}\n", report.flight_time);
    out += &format!("normalized_time    {:.6}\n", report.normalized_time);
    if inputs.phi > 0.0 {
        let c = design_comparison(&inputs, args.observed).map_err(CliError::config)?;
        out += &format!("observed_time_s    {:.3}\n", c.observed_time);
        out += &format!("gamma_over_k_p     {:.6}\n", c.energy_power_ratio);
        out += &format!("optimal_time_s     {:.3}\n", c.optimal_time);
        out += &format!("optimal_battery_kg {:.4}\n", c.optimal_battery_mass);
        out += &format!("optimal_total_kg   {:.4}\n", c.optimal_total_mass);
    }
    if let Some(path) = &args.curve {
        let curve = normalized_curve(&default_phi_grid()).map_err(CliError::config)?;
        let mut csv = String::from("phi,normalized_time\n");
        for (phi, t) in curve {
            csv += &format!("{phi:.9},{t:.9}\n");
        }
        fs::write(path, csv)
            .with_context(|| format!("writing {}", path.display()))
            .map_err(CliError::config)?;
    }
    print!("{out}");
    Ok(out)
}

/// Parses `a,b,c` or `start:stop:count` (inclusive, evenly spaced).
pub fn parse_range(text: &str) -> Result<Vec<f64>> {
    let text = text.trim();
    if text.is_empty() {
        return Ok(Vec::new());
    }
    if let Some((start, rest)) = text.split_once(':') {
        let (stop, count) = rest.split_once(':').context("range must be `start:stop:count`")?;
        let start: f64 = start.trim().parse().context("range start")?;
        let stop: f64 = stop.trim().parse().context("range stop")?;
        let count: usize = count.trim().parse().context("range count")?;
        return Ok(match count {
            0 => Vec::new(),
            1 => vec![start],
            n => (0..n).map(|i| start + (stop - start) * i as f64 / (n - 1) as f64).collect(),
        });
    }
    text.split(',')
        .map(|v| v.trim().parse::<f64>().with_context(|| format!("bad range value `{v}`")))
        .collect()
}

pub fn sweep_header(param: &str) -> String {
    let mut cols = vec![param.to_string()];
    cols.extend(MissionSummary::CSV_COLUMNS.iter().map(|s| s.to_string()));
    cols.join(",")
}

/// Runs one mission per value in parallel and returns the CSV text.
pub fn run_sweep(base: &Scenario, param: &str, values: &[f64], telemetry_dir: Option<&Path>) -> Result<String, CliError> {
    // Resolve every scenario first so a bad key fails before any run.
    let scenarios = values
        .iter()
        .map(|v| base.with_override(param, *v))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(dir) = telemetry_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).map_err(CliError::config)?;
    }
    let results: Vec<Result<MissionSummary, CliError>> = scenarios
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let summary = match telemetry_dir {
                Some(dir) => {
                    let path = dir.join(format!("sweep_{i:03}_telemetry.csv"));
                    let file = File::create(&path)
                        .with_context(|| format!("creating {}", path.display()))
                        .map_err(CliError::config)?;
                    run_mission(s, Some(BufWriter::new(file)))?.summary
                }
                None => run_mission::<std::io::Sink>(s, None)?.summary,
            };
            Ok(summary)
        })
        .collect();
    let mut csv = sweep_header(param);
    csv.push('\n');
    for (v, r) in values.iter().zip(results) {
        let s = r?;
        csv += &format!("{v},{}\n", s.csv_values().join(","));
    }
    Ok(csv)
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<String, CliError> {
    let base = load_scenario(&args.scenario)?;
    let values = parse_range(&args.range).map_err(CliError::config)?;
    validate_values(&values).map_err(CliError::config)?;
    let csv = run_sweep(&base, &args.param, &values, args.telemetry_dir.as_deref())?;
    match &args.out {
        Some(path) => {
            let mut f = File::create(path)
                .with_context(|| format!("creating {}", path.display()))
                .map_err(CliError::config)?;
            f.write_all(csv.as_bytes()).map_err(|e| CliError::config(anyhow::Error::from(e)))?;
        }
        None => print!("{csv}"),
    }
    Ok(csv)
}

pub fn dispatch(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Run(a) => cmd_run(a).map(|_| ()),
        Command::Analyze(a) => cmd_analyze(a).map(|_| ()),
        Command::Sweep(a) => cmd_sweep(a).map(|_| ()),
    }
}

/// Rejects duplicate sweep values, which would write indistinguishable rows.
pub fn validate_values(values: &[f64]) -> Result<()> {
    for (i, a) in values.iter().enumerate() {
        if values[..i].contains(a) {
            bail!("duplicate sweep value {a}");
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges() {
        assert_eq!(parse_range("").unwrap(), Vec::<f64>::new());
        assert_eq!(parse_range("0, 0.5,1").unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(parse_range("0:600:4").unwrap(), vec![0.0, 200.0, 400.0, 600.0]);
        assert!(parse_range("a,b").is_err());
        assert!(parse_range("0:1").is_err());
    }

    #[test]
    fn empty_sweep_is_header_only() {
        let csv = run_sweep(&Scenario::default(), "mission.turnaround_delay", &[], None).unwrap();
        assert_eq!(csv, format!("{}\n", sweep_header("mission.turnaround_delay")));
    }

    #[test]
    fn unknown_sweep_key_is_config_error() {
        let err = run_sweep(&Scenario::default(), "bogus", &[1.0], None).unwrap_err();
        assert_eq!(err.code, EXIT_CONFIG);
    }

    #[test]
    fn duplicate_values_rejected() {
        assert!(validate_values(&[1.0, 2.0, 1.0]).is_err());
        validate_values(&[1.0, 2.0]).unwrap();
    }

    #[test]
    fn numeric_failures_map_to_their_own_code() {
        let e = CliError::from(SimError::NonFinite { step: 7, subsystem: "main dynamics".into(), detail: "NaN".into() });
        assert_eq!(e.code, EXIT_NUMERIC);
        assert!(format!("{:#}", e.error).contains("main dynamics"));
        let e = CliError::from(SimError::Setup("x".into()));
        assert_eq!(e.code, EXIT_CONFIG);
    }
}

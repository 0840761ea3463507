//! `pwainv`: command line front end for the PWA inversion library.
//!
//! Subcommands bind model files, reference trajectories, and benchmark
//! configs to the library operations. All numeric output is CSV at full
//! double precision so reruns with the same seed are byte-identical;
//! timestamps are confined to `meta.json`.

use std::env;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use serde::Serialize;

use pwainv_core::inversion::{
    check_assumptions, global_relative_degree, invert_rd0, invert_rd1, invert_rd2,
    InversePwaModel,
};
use pwainv_core::model_io::BenchFile;
use pwainv_core::stable_inversion::{compute_decoupling, stable_invert, StableInversionConfig};
use pwainv_core::trajectory::{SignalRole, Trajectory};
use pwainv_core::{
    load_model, run_benchmark, run_single_scheme, BenchConfig, Error, PwaModel, ScenarioResult,
};

/// Fallback noise seed when neither flag, config file, nor `PWAINV_SEED`
/// provides one (the benchmark default, for reproducibility).
const SEED_ENV: &str = "PWAINV_SEED";

#[derive(Parser)]
#[command(
    name = "pwainv",
    version,
    about = "Simulation, exact inversion, stable inversion, and iterative learning control for piecewise affine systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a model forward from an input trajectory.
    Simulate(SimulateArgs),
    /// Recover the input reproducing a reference output via the explicit
    /// inverse model (requires a contracting inverse to stay accurate).
    Invert(InvertArgs),
    /// Recover a bounded input via two-sided stable inversion (handles
    /// anti-stable inverse dynamics).
    StableInvert(StableInvertArgs),
    /// Run one learning scheme against the benchmark plant.
    Ilc(IlcArgs),
    /// Run the five-scenario benchmark comparison and write its tables.
    BenchPrinthead(BenchArgs),
    /// Print the structural assumption report for a model as JSON.
    Check(CheckArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Model file (JSON).
    #[arg(long)]
    model: PathBuf,
    /// Input trajectory (CSV with header `k,u_0`).
    #[arg(long)]
    input: PathBuf,
    /// Initial state as comma-separated values (default: zeros).
    #[arg(long)]
    x0: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InvertArgs {
    /// Model file (JSON).
    #[arg(long)]
    model: PathBuf,
    /// Reference output trajectory (CSV with header `k,r_0`).
    #[arg(long)]
    reference: PathBuf,
    /// Initial state as comma-separated values (default: zeros).
    #[arg(long)]
    x0: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StableInvertArgs {
    /// Model file (JSON).
    #[arg(long)]
    model: PathBuf,
    /// Reference output trajectory (CSV with header `k,r_0`).
    #[arg(long)]
    reference: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct IlcArgs {
    /// Learning scheme.
    #[arg(long, value_parser = ["ililc", "gradient", "ptype"])]
    scheme: String,
    /// Benchmark config file (JSON); omitted fields use built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Learning gain (overrides the config file; ignored by `ililc`, which
    /// has no scalar gain).
    #[arg(long)]
    gain: Option<f64>,
    /// Number of trials (overrides the config file).
    #[arg(long)]
    trials: Option<usize>,
    /// Noise seed (overrides the config file and PWAINV_SEED).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Benchmark config file (JSON); omitted fields use built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Noise seed (overrides the config file and PWAINV_SEED).
    #[arg(long)]
    seed: Option<u64>,
    /// Number of trials (overrides the config file).
    #[arg(long)]
    trials: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CheckArgs {
    /// Model file (JSON).
    #[arg(long)]
    model: PathBuf,
    /// Anchor step for time-varying schedules.
    #[arg(long, default_value_t = 0)]
    anchor: usize,
}

/// Usage problems (bad paths, malformed inputs, bad flag values) exit with
/// code 2; library errors exit with their stable category codes.
enum CliError {
    Usage(String),
    Lib(Error),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Lib(e) => e.exit_code(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Lib(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Invert(args) => cmd_invert(args),
        Command::StableInvert(args) => cmd_stable_invert(args),
        Command::Ilc(args) => cmd_ilc(args),
        Command::BenchPrinthead(args) => cmd_bench(args),
        Command::Check(args) => cmd_check(args),
    }
}

// ---------------------------------------------------------------------------
// Input loading. Every failure here is a usage error: the field name and
// path are part of the message.

fn require_exists(path: &Path, field: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Usage(format!(
            "{field}: path {} does not exist",
            path.display()
        )))
    }
}

fn load_model_arg(path: &Path) -> Result<PwaModel, CliError> {
    require_exists(path, "--model")?;
    let file = load_model(path)
        .map_err(|e| CliError::Usage(format!("--model {}: {e}", path.display())))?;
    file.to_model()
        .map_err(|e| CliError::Usage(format!("--model {}: {e}", path.display())))
}

fn load_series_arg(path: &Path, field: &str) -> Result<Vec<f64>, CliError> {
    require_exists(path, field)?;
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("{field} {}: {e}", path.display())))?;
    let traj = Trajectory::from_csv(&text)
        .map_err(|e| CliError::Usage(format!("{field} {}: {e}", path.display())))?;
    traj.scalar_values()
        .map_err(|e| CliError::Usage(format!("{field} {}: {e}", path.display())))
}

fn parse_x0(arg: &Option<String>, n_x: usize) -> Result<DVector<f64>, CliError> {
    match arg {
        None => Ok(DVector::zeros(n_x)),
        Some(text) => {
            let values: Result<Vec<f64>, _> =
                text.split(',').map(|v| v.trim().parse::<f64>()).collect();
            let values =
                values.map_err(|e| CliError::Usage(format!("--x0 {text:?}: {e}")))?;
            if values.len() != n_x {
                return Err(CliError::Usage(format!(
                    "--x0 has {} entries, model has {} states",
                    values.len(),
                    n_x
                )));
            }
            Ok(DVector::from_vec(values))
        }
    }
}

/// Builds the effective benchmark config. Precedence per field: flag over
/// config file over `PWAINV_SEED` (seed only) over built-in default.
fn resolve_bench_config(
    config: &Option<PathBuf>,
    seed: Option<u64>,
    trials: Option<usize>,
) -> Result<BenchConfig, CliError> {
    let (file, file_has_noise) = match config {
        Some(path) => {
            require_exists(path, "--config")?;
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("--config {}: {e}", path.display())))?;
            let file: BenchFile = serde_json::from_str(&text)
                .map_err(|e| CliError::Usage(format!("--config {}: {e}", path.display())))?;
            let has_noise = file.noise.is_some();
            (file, has_noise)
        }
        None => (BenchFile::default(), false),
    };
    let mut cfg = file.into_config();
    if let Some(s) = seed {
        cfg.noise.seed = s;
    } else if !file_has_noise {
        if let Ok(text) = env::var(SEED_ENV) {
            cfg.noise.seed = text
                .parse()
                .map_err(|e| CliError::Usage(format!("{SEED_ENV}={text:?}: {e}")))?;
        }
    }
    if let Some(t) = trials {
        cfg.trials = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// Output writing. Data files carry no timestamps; `meta.json` carries the
// run metadata including the timestamp.

fn ensure_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path)
        .map_err(|e| CliError::Usage(format!("--out {}: {e}", path.display())))
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    fs::write(&path, contents)
        .map_err(|e| CliError::Usage(format!("writing {}: {e}", path.display())))
}

fn locations_csv(locations: &[usize], start_k: usize) -> String {
    let mut out = String::from("k,location\n");
    for (offset, q) in locations.iter().enumerate() {
        out.push_str(&format!("{},{q}\n", start_k + offset));
    }
    out
}

fn scalar_csv(role: SignalRole, start_k: usize, values: &[f64]) -> String {
    Trajectory::scalar(role, start_k, values).to_csv()
}

fn states_csv(start_k: usize, states: &[DVector<f64>]) -> String {
    Trajectory {
        role: SignalRole::State,
        start_k,
        samples: states.to_vec(),
    }
    .to_csv()
}

#[derive(Serialize)]
struct Meta<'a> {
    command: &'a str,
    version: &'a str,
    /// Seconds since the Unix epoch at the time of the run. Timestamps live
    /// only here so the data files stay byte-identical across reruns.
    timestamp: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    trials: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    scheme: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gain: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mu_tilde: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    extra: Option<serde_json::Value>,
}

impl<'a> Meta<'a> {
    fn new(command: &'a str) -> Self {
        Meta {
            command,
            version: env!("CARGO_PKG_VERSION"),
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            seed: None,
            trials: None,
            scheme: None,
            gain: None,
            mu_tilde: None,
            extra: None,
        }
    }

    fn write(&self, dir: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Usage(format!("encoding meta.json: {e}")))?;
        write_file(dir, "meta.json", &text)
    }
}

// ---------------------------------------------------------------------------
// Subcommands.

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let model = load_model_arg(&args.model)?;
    let u = load_series_arg(&args.input, "--input")?;
    let x0 = parse_x0(&args.x0, model.n_x())?;
    let sim = model.simulate(&x0, &u)?;

    ensure_dir(&args.out)?;
    write_file(&args.out, "output.csv", &scalar_csv(SignalRole::Output, 0, &sim.y))?;
    write_file(&args.out, "states.csv", &states_csv(0, &sim.x))?;
    write_file(&args.out, "locations.csv", &locations_csv(&sim.locations, 0))?;
    Meta::new("simulate").write(&args.out)?;
    println!(
        "simulated {} steps ({} states) -> {}",
        sim.y.len(),
        model.n_x(),
        args.out.display()
    );
    Ok(())
}

/// Chooses the explicit inverse construction matching the model's measured
/// global relative degree.
fn build_inverse(model: &PwaModel) -> Result<(InversePwaModel, usize), Error> {
    let report = global_relative_degree(model, 0, pwainv_core::tol::DEGREE_CAP)?;
    let inverse = match report.mu_tilde {
        0 => invert_rd0(model)?,
        1 => invert_rd1(model)?,
        2 => invert_rd2(model)?,
        deeper => {
            return Err(Error::WrongDegree {
                required: 2,
                actual: deeper,
            })
        }
    };
    Ok((inverse, report.mu_tilde))
}

fn cmd_invert(args: InvertArgs) -> Result<(), CliError> {
    let model = load_model_arg(&args.model)?;
    let r = load_series_arg(&args.reference, "--reference")?;
    let x0 = parse_x0(&args.x0, model.n_x())?;
    let (inverse, mu) = build_inverse(&model)?;
    if r.len() <= mu {
        return Err(CliError::Usage(format!(
            "--reference has {} samples, need more than the global relative degree {mu}",
            r.len()
        )));
    }
    let preview = &r[mu..];
    let result = inverse.run(&x0, preview)?;

    ensure_dir(&args.out)?;
    write_file(
        &args.out,
        "feedforward.csv",
        &scalar_csv(SignalRole::Input, 0, &result.y),
    )?;
    write_file(&args.out, "states.csv", &states_csv(0, &result.x))?;
    write_file(
        &args.out,
        "locations.csv",
        &locations_csv(&result.locations, 0),
    )?;
    let mut meta = Meta::new("invert");
    meta.mu_tilde = Some(mu);
    meta.write(&args.out)?;
    println!(
        "global relative degree {mu}; recovered {} input samples -> {}",
        result.y.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_stable_invert(args: StableInvertArgs) -> Result<(), CliError> {
    let model = load_model_arg(&args.model)?;
    let r = load_series_arg(&args.reference, "--reference")?;
    let (inverse, mu) = build_inverse(&model)?;
    if r.len() <= mu {
        return Err(CliError::Usage(format!(
            "--reference has {} samples, need more than the global relative degree {mu}",
            r.len()
        )));
    }
    let preview = &r[mu..];
    let decoupling = compute_decoupling(&inverse.model)?;
    let solution = stable_invert(
        &inverse,
        &decoupling,
        preview,
        &StableInversionConfig::default(),
    )?;

    ensure_dir(&args.out)?;
    write_file(
        &args.out,
        "feedforward.csv",
        &scalar_csv(SignalRole::Input, 0, &solution.u),
    )?;
    write_file(&args.out, "states.csv", &states_csv(0, &solution.x))?;
    write_file(
        &args.out,
        "locations.csv",
        &locations_csv(&solution.locations, 0),
    )?;
    let mut meta = Meta::new("stable-invert");
    meta.mu_tilde = Some(mu);
    meta.extra = Some(serde_json::json!({
        "n_stable": decoupling.n_stable,
        "n_unstable": decoupling.n_unstable,
        "switch_dependency": format!("{:?}", solution.dependency),
        "boundary_unstable_norm": solution.boundary_unstable_norm,
        "boundary_stable_norm": solution.boundary_stable_norm,
        "ambiguous_steps": solution.ambiguous_steps,
    }));
    meta.write(&args.out)?;
    println!(
        "global relative degree {mu}; {} stable / {} anti-stable inverse modes; \
         boundary residuals {:.3e} (start) {:.3e} (end) -> {}",
        decoupling.n_stable,
        decoupling.n_unstable,
        solution.boundary_unstable_norm,
        solution.boundary_stable_norm,
        args.out.display()
    );
    Ok(())
}

fn trials_csv(scenario: &ScenarioResult) -> String {
    let mut out = String::from("trial,nrmse,peak\n");
    for t in &scenario.trials {
        out.push_str(&format!("{},{:.16e},{:.16e}\n", t.trial, t.nrmse, t.peak_error));
    }
    out
}

fn cmd_ilc(args: IlcArgs) -> Result<(), CliError> {
    let cfg = resolve_bench_config(&args.config, args.seed, args.trials)?;
    let scenario = run_single_scheme(&cfg, &args.scheme, args.gain)?;

    ensure_dir(&args.out)?;
    write_file(&args.out, "trials.csv", &trials_csv(&scenario))?;
    write_file(
        &args.out,
        "feedforward.csv",
        &scalar_csv(
            SignalRole::Input,
            0,
            scenario.final_input.as_slice(),
        ),
    )?;
    write_file(
        &args.out,
        "output.csv",
        &scalar_csv(SignalRole::Output, 1, scenario.final_output.as_slice()),
    )?;
    let mut meta = Meta::new("ilc");
    meta.scheme = Some(&args.scheme);
    meta.gain = match args.scheme.as_str() {
        "gradient" => Some(args.gain.unwrap_or(cfg.gamma_gradient)),
        "ptype" => Some(args.gain.unwrap_or(cfg.gamma_ptype)),
        _ => args.gain,
    };
    meta.seed = Some(cfg.noise.seed);
    meta.trials = Some(cfg.trials);
    meta.write(&args.out)?;
    println!(
        "{} after {} trials: NRMSE {:.6e}, peak {:.6e} m -> {}",
        scenario.name,
        cfg.trials,
        scenario.nrmse,
        scenario.peak_error,
        args.out.display()
    );
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<(), CliError> {
    let cfg = resolve_bench_config(&args.config, args.seed, args.trials)?;
    let results = run_benchmark(&cfg)?;

    ensure_dir(&args.out)?;
    let mut table = String::from("scenario,NRMSE,peak_error\n");
    for s in &results.scenarios {
        table.push_str(&format!("{},{:.16e},{:.16e}\n", s.name, s.nrmse, s.peak_error));
    }
    write_file(&args.out, "table.csv", &table)?;

    let mut trials = String::from("scenario,trial,nrmse,peak\n");
    for s in &results.scenarios {
        for t in &s.trials {
            trials.push_str(&format!(
                "{},{},{:.16e},{:.16e}\n",
                s.name, t.trial, t.nrmse, t.peak_error
            ));
        }
    }
    write_file(&args.out, "trials.csv", &trials)?;

    write_file(
        &args.out,
        "reference.csv",
        &scalar_csv(
            SignalRole::Reference,
            1,
            results.reference_lifted.as_slice(),
        ),
    )?;
    for s in &results.scenarios {
        write_file(
            &args.out,
            &format!("{}_feedforward.csv", s.name),
            &scalar_csv(SignalRole::Input, 0, s.final_input.as_slice()),
        )?;
        write_file(
            &args.out,
            &format!("{}_output.csv", s.name),
            &scalar_csv(SignalRole::Output, 1, s.final_output.as_slice()),
        )?;
    }

    let mut meta = Meta::new("bench-printhead");
    meta.seed = Some(cfg.noise.seed);
    meta.trials = Some(cfg.trials);
    meta.mu_tilde = Some(results.mu_tilde);
    meta.extra = Some(serde_json::json!({
        "switch_dependency": format!("{:?}", results.switch_dependency),
        "decoupling_stable": results.decoupling_stable,
        "decoupling_unstable": results.decoupling_unstable,
    }));
    meta.write(&args.out)?;

    println!("scenario              NRMSE         peak error (m)");
    for s in &results.scenarios {
        println!("{:<20}  {:<12.6e}  {:.6e}", s.name, s.nrmse, s.peak_error);
    }
    println!("results -> {}", args.out.display());
    Ok(())
}

fn cmd_check(args: CheckArgs) -> Result<(), CliError> {
    let model = load_model_arg(&args.model)?;
    let report = check_assumptions(&model, args.anchor);
    let text = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::Usage(format!("encoding report: {e}")))?;
    println!("{text}");
    Ok(())
}

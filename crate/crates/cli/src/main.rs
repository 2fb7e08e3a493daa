//! `pmusched` command line: placement, scheduling, distance export,
//! one-shot detection, and the Monte Carlo detection-probability
//! experiment.
//!
//! Exit codes: 0 success, 2 usage, 3 validation, 4 numerical failure.

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use pmusched::detector::{evaluate_glrt, NoiseParams};
use pmusched::network::PowerNetwork;
use pmusched::schedule::truncate_schedule;
use pmusched::sim::{add_noise, generate_truth, monte_carlo_pd, SimConfig};
use pmusched::{pipeline, Method};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

const EXIT_VALIDATION: i32 = 3;
const EXIT_NUMERICAL: i32 = 4;

#[derive(Parser)]
#[command(
    name = "pmusched",
    version,
    about = "PMU placement, transmission scheduling, and susceptance-change detection",
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the minimum PMU placement for a case
    Place(PlaceArgs),
    /// Print the transmission schedule for the placed PMUs
    Schedule(ScheduleArgs),
    /// Export the resistance-distance matrix (and optional adjacency)
    Distance(DistanceArgs),
    /// Run one detector evaluation on synthetic data
    Detect(DetectArgs),
    /// Monte Carlo detection-probability curves, scheduled vs random
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct CaseArg {
    /// Case file path, or `case14` for the built-in fixture
    #[arg(long)]
    case: String,
}

#[derive(Args)]
struct PlaceArgs {
    #[command(flatten)]
    case: CaseArg,
    /// Structure to place against: `topology` or `electrical`
    #[arg(long)]
    method: Method,
    /// Write the binary decision vector as CSV to this file
    #[arg(long, value_name = "FILE")]
    emit: Option<PathBuf>,
    /// Directory for artifacts and the run manifest
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScheduleArgs {
    #[command(flatten)]
    case: CaseArg,
    #[arg(long)]
    method: Method,
    /// Restrict transmissions to the first m scheduled PMUs
    #[arg(long, value_name = "M")]
    pmus: Option<usize>,
    /// Frame length in time units
    #[arg(long = "T", value_name = "LEN", default_value_t = 20)]
    frame_len: usize,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DistanceArgs {
    #[command(flatten)]
    case: CaseArg,
    /// Also emit the thresholded binary adjacency with this many branches
    #[arg(long, value_name = "K")]
    adjacency: Option<usize>,
    /// Write the K x B incidence matrix as CSV to this file
    #[arg(long, value_name = "FILE")]
    emit_incidence: Option<PathBuf>,
    /// Write the nominal DC Laplacian as CSV to this file
    #[arg(long, value_name = "FILE")]
    emit_laplacian: Option<PathBuf>,
    /// Write the binary topological connectivity as CSV to this file
    #[arg(long, value_name = "FILE")]
    emit_connectivity: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DetectArgs {
    #[command(flatten)]
    case: CaseArg,
    /// False-alarm rate for the threshold
    #[arg(long)]
    alpha: f64,
    /// Number of time samples
    #[arg(long = "T", value_name = "LEN", default_value_t = 20)]
    samples: usize,
    /// Root random seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Relative susceptance change from the second sample on (0 = none)
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    shift: f64,
    /// Flow-noise variance
    #[arg(long = "sigma-z2", default_value_t = 0.01)]
    flow_var: f64,
    /// Angle-noise variance
    #[arg(long = "sigma-theta2", default_value_t = 0.01)]
    angle_var: f64,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    case: CaseArg,
    #[arg(long)]
    method: Method,
    /// Transmission policies to evaluate; the harness always runs the
    /// paired scheduled+random design
    #[arg(long, default_value = "both")]
    policy: String,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = -0.02, allow_hyphen_values = true)]
    shift: f64,
    /// Number of false-alarm rates, evenly spaced over (0, 0.2]
    #[arg(long, default_value_t = 20)]
    alphas: usize,
    #[arg(long = "T", value_name = "LEN", default_value_t = 20)]
    frame_len: usize,
    /// Restrict transmissions to the first m scheduled PMUs
    #[arg(long, value_name = "M")]
    pmus: Option<usize>,
    #[arg(long = "sigma-z2", default_value_t = 0.01)]
    flow_var: f64,
    #[arg(long = "sigma-theta2", default_value_t = 0.01)]
    angle_var: f64,
    /// Output CSV path; a `<out>.meta` manifest is written next to it
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

/// An error bound to one of the documented nonzero exit codes.
struct Failure {
    code: i32,
    error: anyhow::Error,
}

fn validation(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: EXIT_VALIDATION,
        error: error.into(),
    }
}

fn numerical(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: EXIT_NUMERICAL,
        error: error.into(),
    }
}

/// Pipeline failures are bad inputs except for genuine linear-algebra
/// breakdowns.
fn pipeline_failure(error: pipeline::PipelineError) -> Failure {
    use pmusched::electrical::ElectricalError;
    match &error {
        pipeline::PipelineError::Electrical(ElectricalError::Singular { .. }) => numerical(error),
        _ => validation(error),
    }
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Place(args) => run_place(args),
        Command::Schedule(args) => run_schedule(args),
        Command::Distance(args) => run_distance(args),
        Command::Detect(args) => run_detect(args),
        Command::Simulate(args) => run_simulate(args),
    };
    if let Err(failure) = result {
        eprintln!("error: {:#}", failure.error);
        std::process::exit(failure.code);
    }
}

/// Loaded case plus provenance for the manifest.
struct LoadedCase {
    net: PowerNetwork,
    label: String,
    checksum: String,
}

fn load_case(arg: &CaseArg) -> Result<LoadedCase, Failure> {
    let path = Path::new(&arg.case);
    let (text, label) = if path.exists() {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading case file {}", path.display()))
            .map_err(validation)?;
        (text, arg.case.clone())
    } else if arg.case == "case14" {
        (
            pmusched::network::CASE14_TEXT.to_string(),
            "builtin:case14".to_string(),
        )
    } else {
        return Err(validation(anyhow!(
            "case `{}` is neither a readable file nor the builtin `case14`",
            arg.case
        )));
    };
    let net = PowerNetwork::parse_str(&text)
        .with_context(|| format!("parsing case `{label}`"))
        .map_err(validation)?;
    let checksum = format!("{:x}", Sha256::digest(text.as_bytes()));
    Ok(LoadedCase {
        net,
        label,
        checksum,
    })
}

fn matrix_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| m[(i, j)].to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("creating {}", parent.display()))
                .map_err(validation)?;
        }
    }
    std::fs::write(path, contents)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(validation)
}

/// The run manifest: enough `key: value` lines to replay the run exactly.
fn manifest_text(subcommand: &str, case: &LoadedCase, fields: &[(&str, String)]) -> String {
    let mut out = String::new();
    writeln!(out, "artifact: pmusched {}", env!("CARGO_PKG_VERSION")).unwrap();
    writeln!(out, "subcommand: {subcommand}").unwrap();
    writeln!(out, "case: {}", case.label).unwrap();
    writeln!(out, "case_sha256: {}", case.checksum).unwrap();
    for (key, value) in fields {
        writeln!(out, "{key}: {value}").unwrap();
    }
    out
}

fn run_place(args: PlaceArgs) -> Result<(), Failure> {
    let case = load_case(&args.case)?;
    let solution = pipeline::placement_for(&case.net, args.method).map_err(pipeline_failure)?;
    let buses: Vec<String> = solution.pmu_buses().iter().map(|b| b.to_string()).collect();
    println!("N={}: {}", solution.count(), buses.join(" "));

    let decision_csv: String = solution
        .decision()
        .iter()
        .map(|&d| if d { "1\n" } else { "0\n" })
        .collect();
    if let Some(emit) = &args.emit {
        write_file(emit, &decision_csv)?;
    }
    if let Some(dir) = &args.out {
        write_file(&dir.join("placement.csv"), &decision_csv)?;
        let manifest = manifest_text(
            "place",
            &case,
            &[
                ("method", args.method.to_string()),
                ("pmu_count", solution.count().to_string()),
                ("pmu_buses", buses.join(" ")),
            ],
        );
        write_file(&dir.join("manifest.txt"), &manifest)?;
    }
    Ok(())
}

fn schedule_csv(schedule: &pmusched::Schedule) -> String {
    let mut out = String::from("slot,time,bus\n");
    for (i, (&bus, &time)) in schedule
        .order()
        .iter()
        .zip(schedule.slot_boundaries())
        .enumerate()
    {
        writeln!(out, "{},{},{}", i + 1, time, bus).unwrap();
    }
    out
}

fn run_schedule(args: ScheduleArgs) -> Result<(), Failure> {
    let case = load_case(&args.case)?;
    let full = pipeline::schedule_for(&case.net, args.method, args.frame_len).map_err(pipeline_failure)?;
    let schedule = match args.pmus {
        Some(m) => {
            if m == 0 || m > full.slot_count() {
                return Err(validation(anyhow!(
                    "--pmus {m} outside 1..={}",
                    full.slot_count()
                )));
            }
            truncate_schedule(&full, m)
        }
        None => full,
    };

    let order: Vec<String> = schedule.order().iter().map(|b| b.to_string()).collect();
    println!("{}", order.join(" "));
    for (i, (&bus, &time)) in schedule
        .order()
        .iter()
        .zip(schedule.slot_boundaries())
        .enumerate()
    {
        println!("slot {} ends t={}: bus {}", i + 1, time, bus);
    }

    if let Some(dir) = &args.out {
        write_file(&dir.join("schedule.csv"), &schedule_csv(&schedule))?;
        let manifest = manifest_text(
            "schedule",
            &case,
            &[
                ("method", args.method.to_string()),
                ("frame_len", args.frame_len.to_string()),
                (
                    "pmu_limit",
                    args.pmus.map_or("none".into(), |m| m.to_string()),
                ),
                ("order", order.join(" ")),
            ],
        );
        write_file(&dir.join("manifest.txt"), &manifest)?;
    }
    Ok(())
}

fn run_distance(args: DistanceArgs) -> Result<(), Failure> {
    let case = load_case(&args.case)?;
    let distances = pipeline::distances_for(&case.net).map_err(pipeline_failure)?;
    let distance_csv = matrix_csv(distances.as_matrix());

    if let Some(path) = &args.emit_incidence {
        write_file(path, &matrix_csv(case.net.incidence().as_matrix()))?;
    }
    if let Some(path) = &args.emit_laplacian {
        let lap = case.net.dc_laplacian(&case.net.nominal_susceptance());
        write_file(path, &matrix_csv(&lap))?;
    }
    if let Some(path) = &args.emit_connectivity {
        write_file(path, &matrix_csv(&case.net.topological_connectivity().to_dense()))?;
    }

    let adjacency = match args.adjacency {
        Some(k) => Some(
            pmusched::electrical::electrical_connectivity_with_tie_break(&distances, k)
                .map_err(validation)?,
        ),
        None => None,
    };

    match &args.out {
        Some(dir) => {
            write_file(&dir.join("distance.csv"), &distance_csv)?;
            let mut fields = vec![("bus_count", case.net.bus_count().to_string())];
            if let Some(adj) = &adjacency {
                write_file(&dir.join("adjacency.csv"), &matrix_csv(&adj.matrix.to_dense()))?;
                fields.push(("branches", args.adjacency.unwrap().to_string()));
                fields.push(("lambda", adj.lambda.to_string()));
                println!("lambda: {}", adj.lambda);
            }
            write_file(&dir.join("manifest.txt"), &manifest_text("distance", &case, &fields))?;
            println!("wrote {}", dir.display());
        }
        None => {
            print!("{distance_csv}");
            if let Some(adj) = &adjacency {
                println!("lambda: {}", adj.lambda);
                print!("{}", matrix_csv(&adj.matrix.to_dense()));
            }
        }
    }
    Ok(())
}

fn run_detect(args: DetectArgs) -> Result<(), Failure> {
    let case = load_case(&args.case)?;
    let noise = NoiseParams::new(args.flow_var, args.angle_var).map_err(validation)?;
    if args.samples == 0 {
        return Err(validation(anyhow!("--T must be at least 1")));
    }
    if !args.shift.is_finite() || args.shift <= -1.0 {
        return Err(validation(anyhow!("--shift must be finite and exceed -1")));
    }
    let net = &case.net;
    let s0 = net.nominal_susceptance();
    let incidence = net.incidence();
    let truth = generate_truth(&s0, &incidence, args.samples, args.shift, args.seed);
    let meas = add_noise(&truth, &noise, args.seed.wrapping_add(1));
    let outcome = evaluate_glrt(&meas, &incidence, &noise, &s0, args.alpha).map_err(|e| {
        use pmusched::detector::DetectorError::*;
        match e {
            BadAlpha(_) | BadNoise { .. } => validation(e),
            _ => numerical(e),
        }
    })?;

    let mut record = String::new();
    writeln!(record, "statistic: {}", outcome.statistic).unwrap();
    writeln!(record, "threshold: {}", outcome.threshold).unwrap();
    writeln!(record, "alpha: {}", outcome.alpha).unwrap();
    writeln!(record, "dof: {}", outcome.dof).unwrap();
    writeln!(
        record,
        "decision: {}",
        match outcome.decision {
            pmusched::Decision::H0 => "H0",
            pmusched::Decision::H1 => "H1",
        }
    )
    .unwrap();
    print!("{record}");

    if let Some(dir) = &args.out {
        write_file(&dir.join("detect.txt"), &record)?;
        let manifest = manifest_text(
            "detect",
            &case,
            &[
                ("alpha", args.alpha.to_string()),
                ("samples", args.samples.to_string()),
                ("seed", args.seed.to_string()),
                ("shift", args.shift.to_string()),
                ("sigma_z2", args.flow_var.to_string()),
                ("sigma_theta2", args.angle_var.to_string()),
            ],
        );
        write_file(&dir.join("manifest.txt"), &manifest)?;
    }
    Ok(())
}

fn run_simulate(args: SimulateArgs) -> Result<(), Failure> {
    if args.policy != "both" {
        return Err(validation(anyhow!(
            "the harness always runs the paired scheduled+random design; use --policy both"
        )));
    }
    if args.alphas == 0 {
        return Err(validation(anyhow!("--alphas must be at least 1")));
    }
    let case = load_case(&args.case)?;
    let noise = NoiseParams::new(args.flow_var, args.angle_var).map_err(validation)?;
    let schedule =
        pipeline::schedule_for(&case.net, args.method, args.frame_len).map_err(pipeline_failure)?;
    let cfg = SimConfig {
        frame_len: args.frame_len,
        trials: args.trials,
        shift: args.shift,
        alpha_grid: SimConfig::default_alpha_grid(args.alphas),
        seed: args.seed,
        noise,
        pmu_limit: args.pmus,
    };
    let curve = monte_carlo_pd(&cfg, &case.net, &schedule).map_err(|e| {
        use pmusched::sim::SimError::*;
        match e {
            TooManyFailures { .. } | Detector(_) => numerical(e),
            _ => validation(e),
        }
    })?;

    let mut csv = String::from("slot,time,pd_scheduled,pd_random\n");
    for (i, &time) in curve.times.iter().enumerate() {
        writeln!(
            csv,
            "{},{},{},{}",
            i + 1,
            time,
            curve.pd_scheduled[i],
            curve.pd_random[i]
        )
        .unwrap();
    }
    write_file(&args.out, &csv)?;

    let alpha_list: Vec<String> = cfg.alpha_grid.iter().map(|a| a.to_string()).collect();
    let manifest = manifest_text(
        "simulate",
        &case,
        &[
            ("method", args.method.to_string()),
            ("policy", "both".to_string()),
            ("trials", args.trials.to_string()),
            ("seed", args.seed.to_string()),
            ("shift", args.shift.to_string()),
            ("alphas", args.alphas.to_string()),
            ("alpha_grid", alpha_list.join(" ")),
            ("frame_len", args.frame_len.to_string()),
            (
                "pmu_limit",
                args.pmus.map_or("none".into(), |m| m.to_string()),
            ),
            ("sigma_z2", args.flow_var.to_string()),
            ("sigma_theta2", args.angle_var.to_string()),
            ("schedule", {
                let order: Vec<String> =
                    schedule.order().iter().map(|b| b.to_string()).collect();
                order.join(" ")
            }),
            ("failed_trials", curve.failed_trials.to_string()),
            ("out", args.out.display().to_string()),
        ],
    );
    let meta_path = PathBuf::from(format!("{}.meta", args.out.display()));
    write_file(&meta_path, &manifest)?;

    println!(
        "wrote {} ({} trials, {} slots, {} alphas)",
        args.out.display(),
        curve.trials,
        curve.times.len(),
        curve.alpha_grid.len()
    );
    for (i, &time) in curve.times.iter().enumerate() {
        println!(
            "slot {} (t={}): scheduled {:.4}  random {:.4}",
            i + 1,
            time,
            curve.pd_scheduled[i],
            curve.pd_random[i]
        );
    }
    Ok(())
}

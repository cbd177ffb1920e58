//! Command-line front end: single registrations, manifest-driven batch
//! experiments, and side-by-side stopping-rule comparisons.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ppcr::io_formats::{
    format_number, read_cloud_auto, read_transform, write_cloud, write_summary, write_trace,
    write_transform, CloudFormat,
};
use ppcr::registration::{
    DEFAULT_CONSECUTIVE, DEFAULT_DROP_THRESHOLD, DEFAULT_ITERATION_CAP, DEFAULT_MAX_NEIGHBORS,
    DEFAULT_NU, DEFAULT_RADIUS_RESOLUTION_FACTOR,
};
use ppcr::{
    annotate_ground_truth, register, resolution, Error, LmConfig, PointCloud, RegistrationConfig,
    RegistrationResult, RigidTransform, TerminationCriterion, TerminationReason, WeightModel,
};

const EXIT_HELP: &str = "Exit codes:
  0  success (registration converged; batch had at least one success)
  1  unexpected failure, or every problem in a batch failed
  2  command-line usage error
  3  iteration cap reached before the stopping rule fired
  4  no source point had a neighbor within the association radius
  5  an input file was missing, unreadable or malformed
  6  an output file could not be written
  7  invalid algorithm configuration";

// A reader that stops consuming our output early (`ppcr ... | head`) closes
// the pipe mid-print; a failed write then means "nobody is listening", not a
// program failure, and the exit code should still reflect the registration
// outcome instead of a broken-pipe panic.
macro_rules! outln {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = write!(std::io::stdout(), $($arg)*);
    }};
}

macro_rules! errln {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stderr(), $($arg)*);
    }};
}

#[derive(Parser)]
#[command(
    name = "ppcr",
    version,
    about = "Probabilistic point cloud registration with automatic termination",
    after_help = EXIT_HELP
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Register one source cloud onto one target cloud.
    Register(RegisterArgs),
    /// Run every problem in a manifest and aggregate the results.
    Batch(BatchArgs),
    /// Run the automatic stop and an exhaustive fixed-iteration run on
    /// the same pair and tabulate both.
    CompareCriteria(CompareArgs),
}

#[derive(Args)]
struct RegisterArgs {
    /// Cloud to move (.ply or .xyz; anything not .ply parses as xyz).
    source: PathBuf,
    /// Cloud to align against.
    target: PathBuf,
    /// Starting transform as a 4x4 matrix file (default: identity).
    #[arg(long, value_name = "FILE")]
    initial_guess: Option<PathBuf>,
    /// True source-to-target transform; fills the trace's mse_gt column.
    #[arg(long, value_name = "FILE")]
    ground_truth: Option<PathBuf>,
    /// Where to write the final transform.
    #[arg(long, value_name = "FILE", default_value = "transform.txt")]
    transform_out: PathBuf,
    /// Where to write the per-iteration trace.
    #[arg(long, value_name = "FILE", default_value = "trace.csv")]
    trace_out: PathBuf,
    /// Also write the source cloud under the final transform.
    #[arg(long, value_name = "FILE")]
    aligned_out: Option<PathBuf>,
    #[command(flatten)]
    algo: AlgoArgs,
}

#[derive(Args)]
struct BatchArgs {
    /// Manifest: one problem per line as three whitespace-separated
    /// paths (source, target, ground-truth transform); '#' comments.
    manifest: PathBuf,
    /// Directory for per-problem outputs, results.csv and summary.csv.
    #[arg(long, value_name = "DIR", default_value = ".")]
    output_dir: PathBuf,
    /// Worker threads (default: one per core).
    #[arg(long, value_name = "N")]
    workers: Option<usize>,
    #[command(flatten)]
    algo: AlgoArgs,
}

#[derive(Args)]
struct CompareArgs {
    /// Cloud to move.
    source: PathBuf,
    /// Cloud to align against.
    target: PathBuf,
    /// True source-to-target transform (required: both runs are scored
    /// against it).
    #[arg(long, value_name = "FILE")]
    ground_truth: PathBuf,
    /// Starting transform as a 4x4 matrix file (default: identity).
    #[arg(long, value_name = "FILE")]
    initial_guess: Option<PathBuf>,
    /// Also write the comparison table to this file.
    #[arg(long, value_name = "FILE")]
    output: Option<PathBuf>,
    #[command(flatten)]
    algo: AlgoArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum WeightModelArg {
    /// Gaussian association weights.
    Gaussian,
    /// Heavy-tailed t-distribution weights (robust to outliers).
    T,
}

#[derive(Clone, Copy, ValueEnum)]
enum CriterionArg {
    /// Stop when the per-iteration cost drop stays small relative to the
    /// first iteration's cost.
    CostDrop,
    /// Stop when the cloud's inter-iteration displacement keeps
    /// shrinking by the given ratio.
    RelativeMse,
    /// Run a fixed number of iterations.
    Fixed,
}

/// Every algorithm knob, with the recommended defaults.
#[derive(Args)]
struct AlgoArgs {
    /// Candidate neighbors per source point.
    #[arg(long, value_name = "K", default_value_t = DEFAULT_MAX_NEIGHBORS)]
    max_neighbors: usize,
    /// Association radius in cloud units (default: 10x the target
    /// cloud's resolution).
    #[arg(long, value_name = "DIST")]
    max_distance: Option<f64>,
    /// Association weighting scheme.
    #[arg(long, value_enum, default_value_t = WeightModelArg::T)]
    weight_model: WeightModelArg,
    /// Degrees of freedom for the t-distribution weights.
    #[arg(long, value_name = "NU", default_value_t = DEFAULT_NU)]
    nu: f64,
    /// Stopping rule.
    #[arg(long, value_enum, default_value_t = CriterionArg::CostDrop)]
    criterion: CriterionArg,
    /// Threshold for the stopping rule: cost drop relative to the first
    /// iteration's cost, or displacement ratio between iterations.
    #[arg(long, value_name = "T", default_value_t = DEFAULT_DROP_THRESHOLD)]
    threshold: f64,
    /// Consecutive below-threshold iterations required to stop.
    #[arg(long, value_name = "N", default_value_t = DEFAULT_CONSECUTIVE)]
    consecutive: usize,
    /// Iterations for --criterion fixed (default: the iteration cap).
    #[arg(long, value_name = "N")]
    fixed_iterations: Option<usize>,
    /// Hard iteration limit regardless of the stopping rule.
    #[arg(long, value_name = "N", default_value_t = DEFAULT_ITERATION_CAP)]
    iteration_cap: usize,
    /// Inner solver: maximum iterations per outer iteration.
    #[arg(long, value_name = "N", default_value_t = LmConfig::default().max_iterations)]
    lm_max_iterations: usize,
    /// Inner solver: initial damping factor.
    #[arg(long, value_name = "L", default_value_t = LmConfig::default().initial_lambda)]
    lm_initial_lambda: f64,
    /// Inner solver: damping multiplier after a rejected step.
    #[arg(long, value_name = "F", default_value_t = LmConfig::default().lambda_up)]
    lm_lambda_up: f64,
    /// Inner solver: damping multiplier after an accepted step.
    #[arg(long, value_name = "F", default_value_t = LmConfig::default().lambda_down)]
    lm_lambda_down: f64,
    /// Inner solver: stop when the step norm falls below this.
    #[arg(long, value_name = "E", default_value_t = LmConfig::default().step_tolerance)]
    lm_step_tolerance: f64,
    /// Inner solver: stop when the relative cost change falls below this.
    #[arg(long, value_name = "E", default_value_t = LmConfig::default().cost_tolerance)]
    lm_cost_tolerance: f64,
}

impl AlgoArgs {
    /// Resolve the flags against a concrete target cloud (the default
    /// radius depends on its resolution) and validate the result.
    fn build(&self, target: &PointCloud) -> ppcr::Result<RegistrationConfig> {
        let max_neighbor_distance = match self.max_distance {
            Some(d) => d,
            None => DEFAULT_RADIUS_RESOLUTION_FACTOR * resolution(target)?,
        };
        let weight_model = match self.weight_model {
            WeightModelArg::Gaussian => WeightModel::Gaussian,
            WeightModelArg::T => WeightModel::TDistribution { nu: self.nu },
        };
        let criterion = match self.criterion {
            CriterionArg::CostDrop => TerminationCriterion::CostDrop {
                relative_threshold: self.threshold,
                consecutive: self.consecutive,
            },
            CriterionArg::RelativeMse => TerminationCriterion::RelativeMse {
                ratio_threshold: self.threshold,
                consecutive: self.consecutive,
            },
            CriterionArg::Fixed => TerminationCriterion::FixedIterations(
                self.fixed_iterations.unwrap_or(self.iteration_cap),
            ),
        };
        let config = RegistrationConfig {
            max_neighbors: self.max_neighbors,
            max_neighbor_distance,
            weight_model,
            criterion,
            iteration_cap: self.iteration_cap,
            lm: LmConfig {
                max_iterations: self.lm_max_iterations,
                initial_lambda: self.lm_initial_lambda,
                lambda_up: self.lm_lambda_up,
                lambda_down: self.lm_lambda_down,
                step_tolerance: self.lm_step_tolerance,
                cost_tolerance: self.lm_cost_tolerance,
            },
        };
        config.validate()?;
        Ok(config)
    }

    /// Same flags with the stopping rule replaced.
    fn build_with_criterion(
        &self,
        target: &PointCloud,
        criterion: TerminationCriterion,
    ) -> ppcr::Result<RegistrationConfig> {
        let mut config = self.build(target)?;
        config.criterion = criterion;
        config.validate()?;
        Ok(config)
    }
}

/// A failure annotated with the exit code it should produce.
struct Failure {
    code: u8,
    message: String,
}

type Outcome<T> = Result<T, Failure>;

fn fail<T>(code: u8, message: impl Into<String>) -> Outcome<T> {
    Err(Failure {
        code,
        message: message.into(),
    })
}

/// Classify a library error from the read/configure/solve side.
fn classify(e: &Error) -> u8 {
    match e {
        Error::Parse { .. } | Error::Io { .. } => 5,
        Error::EmptyCloud | Error::DegenerateCloud(_) => 5,
        Error::InvalidConfig(_) => 7,
        _ => 1,
    }
}

fn load<T>(r: ppcr::Result<T>) -> Outcome<T> {
    r.map_err(|e| Failure {
        code: classify(&e),
        message: e.to_string(),
    })
}

fn store<T>(r: ppcr::Result<T>) -> Outcome<T> {
    r.map_err(|e| Failure {
        code: 6,
        message: e.to_string(),
    })
}

fn exit_for(reason: TerminationReason) -> u8 {
    match reason {
        TerminationReason::Converged => 0,
        TerminationReason::IterationCapReached => 3,
        TerminationReason::NoOverlap => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Register(args) => run_register(&args),
        Command::Batch(args) => run_batch(&args),
        Command::CompareCriteria(args) => run_compare(&args),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            errln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn read_guess(path: Option<&Path>) -> Outcome<RigidTransform> {
    match path {
        Some(p) => load(read_transform(p)),
        None => Ok(RigidTransform::identity()),
    }
}

fn run_register(args: &RegisterArgs) -> Outcome<u8> {
    let source = load(read_cloud_auto(&args.source))?;
    let target = load(read_cloud_auto(&args.target))?;
    let guess = read_guess(args.initial_guess.as_deref())?;
    let truth = match &args.ground_truth {
        Some(p) => Some(load(read_transform(p))?),
        None => None,
    };
    let config = load(args.algo.build(&target))?;

    let mut result = load(register(&source, &target, &guess, &config))?;
    if let Some(truth) = &truth {
        annotate_ground_truth(&mut result.trace, &source, truth);
    }

    store(write_transform(&args.transform_out, &result.transform))?;
    store(write_trace(&args.trace_out, &result.trace))?;
    if let Some(aligned) = &args.aligned_out {
        let moved = result.transform.apply_cloud(&source);
        store(write_cloud(
            aligned,
            &moved,
            CloudFormat::from_path(aligned),
        ))?;
    }

    outln!("terminated: {}", result.reason);
    outln!("iterations: {}", result.trace.len());
    if let Some(last) = result.trace.last() {
        outln!("final cost: {}", format_number(last.final_cost));
        if let Some(mse) = last.mse_ground_truth {
            outln!("mse to ground truth: {}", format_number(mse));
        }
    }
    Ok(exit_for(result.reason))
}

fn run_compare(args: &CompareArgs) -> Outcome<u8> {
    let source = load(read_cloud_auto(&args.source))?;
    let target = load(read_cloud_auto(&args.target))?;
    let truth = load(read_transform(&args.ground_truth))?;
    let guess = read_guess(args.initial_guess.as_deref())?;

    // The automatic side honors --threshold/--consecutive; the
    // exhaustive side always runs out the full cap, which is the
    // methodology the comparison exists to reproduce.
    let auto_config = load(args.algo.build_with_criterion(
        &target,
        TerminationCriterion::CostDrop {
            relative_threshold: args.algo.threshold,
            consecutive: args.algo.consecutive,
        },
    ))?;
    let fixed_config = load(args.algo.build_with_criterion(
        &target,
        TerminationCriterion::FixedIterations(args.algo.iteration_cap),
    ))?;

    let auto = load(register(&source, &target, &guess, &auto_config))?;
    let fixed = load(register(&source, &target, &guess, &fixed_config))?;
    if auto.reason == TerminationReason::NoOverlap || fixed.reason == TerminationReason::NoOverlap {
        return fail(4, "clouds do not overlap within the association radius");
    }

    let row = |name: &str, run: &RegistrationResult| {
        format!(
            "{name},{},{}",
            run.trace.len(),
            format_number(ppcr::mse_to_ground_truth(&source, &run.transform, &truth))
        )
    };
    let table = format!(
        "criterion,iterations,mse_to_ground_truth\n{}\n{}\n",
        row("cost_drop", &auto),
        row("fixed", &fixed)
    );
    out!("{table}");
    if let Some(path) = &args.output {
        store(std::fs::write(path, &table).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        }))?;
    }
    Ok(0)
}

/// One parsed manifest row.
struct Problem {
    line: usize,
    source: PathBuf,
    target: PathBuf,
    ground_truth: PathBuf,
}

fn parse_manifest(path: &Path) -> ppcr::Result<Vec<Problem>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut problems = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line,
                message: format!(
                    "expected 3 paths (source, target, ground-truth), found {}",
                    fields.len()
                ),
            });
        }
        problems.push(Problem {
            line,
            source: fields[0].into(),
            target: fields[1].into(),
            ground_truth: fields[2].into(),
        });
    }
    Ok(problems)
}

/// What one batch problem produced.
enum ProblemOutcome {
    Done {
        reason: TerminationReason,
        iterations: usize,
        mse: f64,
    },
    Failed {
        message: String,
    },
}

fn run_one_problem(args: &BatchArgs, ordinal: usize, problem: &Problem) -> Outcome<ProblemOutcome> {
    let source = load(read_cloud_auto(&problem.source))?;
    let target = load(read_cloud_auto(&problem.target))?;
    let truth = load(read_transform(&problem.ground_truth))?;
    let config = load(args.algo.build(&target))?;
    let mut result = load(register(
        &source,
        &target,
        &RigidTransform::identity(),
        &config,
    ))?;
    annotate_ground_truth(&mut result.trace, &source, &truth);

    let stem = format!("problem_{ordinal:04}");
    store(write_transform(
        &args.output_dir.join(format!("{stem}_transform.txt")),
        &result.transform,
    ))?;
    store(write_trace(
        &args.output_dir.join(format!("{stem}_trace.csv")),
        &result.trace,
    ))?;
    Ok(ProblemOutcome::Done {
        reason: result.reason,
        iterations: result.trace.len(),
        mse: ppcr::mse_to_ground_truth(&source, &result.transform, &truth),
    })
}

fn run_batch(args: &BatchArgs) -> Outcome<u8> {
    let problems = load(parse_manifest(&args.manifest))?;
    if problems.is_empty() {
        return fail(5, format!("{}: manifest lists no problems", args.manifest.display()));
    }
    std::fs::create_dir_all(&args.output_dir).map_err(|e| Failure {
        code: 6,
        message: format!("{}: {e}", args.output_dir.display()),
    })?;

    let run_all = || -> Vec<ProblemOutcome> {
        use rayon::prelude::*;
        problems
            .par_iter()
            .enumerate()
            .map(|(i, p)| match run_one_problem(args, i + 1, p) {
                Ok(outcome) => outcome,
                // A failed problem must not sink the batch; keep the
                // message and move on.
                Err(f) => ProblemOutcome::Failed { message: f.message },
            })
            .collect()
    };
    let outcomes = match args.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Failure {
                code: 1,
                message: e.to_string(),
            })?
            .install(run_all),
        None => run_all(),
    };

    let results_path = args.output_dir.join("results.csv");
    let mut results = String::from("problem,line,status,reason,iterations,mse_ground_truth\n");
    let mut mses = Vec::new();
    let mut iteration_counts = Vec::new();
    for ((ordinal, problem), outcome) in (1..).zip(&problems).zip(&outcomes) {
        match outcome {
            ProblemOutcome::Done {
                reason,
                iterations,
                mse,
            } => {
                results.push_str(&format!(
                    "{ordinal},{},ok,{reason},{iterations},{}\n",
                    problem.line,
                    format_number(*mse)
                ));
                mses.push(*mse);
                iteration_counts.push(*iterations);
            }
            ProblemOutcome::Failed { message } => {
                errln!(
                    "problem {ordinal} (manifest line {}): {message}",
                    problem.line
                );
                results.push_str(&format!("{ordinal},{},failed,,,\n", problem.line));
            }
        }
    }
    store(std::fs::write(&results_path, &results).map_err(|e| Error::Io {
        path: results_path.display().to_string(),
        source: e,
    }))?;

    if !mses.is_empty() {
        let summary = ppcr::aggregate(&mses, &iteration_counts);
        store(write_summary(&args.output_dir.join("summary.csv"), &summary))?;
    }

    outln!(
        "batch: {}/{} problems succeeded; outputs in {}",
        mses.len(),
        problems.len(),
        args.output_dir.display()
    );
    Ok(if mses.is_empty() { 1 } else { 0 })
}

//! `restore`: command-line runner for the two-stage restoration planner.
//!
//! Exit codes: 0 success, 2 input error, 3 Stage-1 infeasible, 4 Stage-2
//! infeasible, 5 validation failure, 6 solver failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use restoration::milp::{backend_from_env, SolveOptions};
use restoration::netmodel::{
    isolate_fault, load_network, synth_multifeeder, synth_scenario, FaultScenario, NetworkModel,
    ScenarioDocument, ScenarioOptions, SynthSpec,
};
use restoration::reports::{
    check_stage1, stage1_report, write_comparison_csv, write_demand_csv, write_sequence_csv,
    write_voltage_csv, RunMetadata, StageTiming, ValidationReport,
};
use restoration::stage1::{build_stage1, solve_stage1, Stage1Error, Stage1Options};
use restoration::stage2::{
    build_stage2, compare, replay_sequence, solve_naive, solve_stage2, Stage2Error, Stage2Options,
    SwitchingSequence,
};
use restoration::topology::{load_or_enumerate_cycles, Cycle, DEFAULT_CYCLE_CAP};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Exit {
    Input = 2,
    Stage1Infeasible = 3,
    Stage2Infeasible = 4,
    Validation = 5,
    Solver = 6,
}

#[derive(Debug)]
struct Failure {
    exit: Exit,
    error: anyhow::Error,
}

type Result<T> = std::result::Result<T, Failure>;

trait ExitContext<T> {
    fn or_exit(self, exit: Exit) -> Result<T>;
}

impl<T, E: Into<anyhow::Error>> ExitContext<T> for std::result::Result<T, E> {
    fn or_exit(self, exit: Exit) -> Result<T> {
        self.map_err(|e| Failure {
            exit,
            error: e.into(),
        })
    }
}

fn fail(exit: Exit, error: anyhow::Error) -> Failure {
    Failure { exit, error }
}

#[derive(Parser)]
#[command(
    name = "restore",
    version,
    about = "Two-stage distribution service restoration planner"
)]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve Stage 1 and Stage 2, validate, and write reports.
    Restore(RestoreArgs),
    /// Compare the optimal switching order with the naive open-then-close order.
    Compare(CompareArgs),
    /// Replay a sequence file with the nonlinear power flow.
    Validate(ValidateArgs),
    /// Generate a synthetic multi-feeder network (and optionally a fault).
    Synth(SynthArgs),
    /// Enumerate the cycles of a network and write the cycle cache.
    Cycles(CyclesArgs),
}

#[derive(Args, Clone)]
struct CaseArgs {
    #[arg(long)]
    network: PathBuf,
    #[arg(long)]
    scenario: PathBuf,
    /// Cycle cache file, reused when the network hash matches.
    #[arg(long)]
    cycle_cache: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct SolveArgs {
    /// Keep every DG virtual edge open.
    #[arg(long)]
    no_dg: bool,
    #[arg(long)]
    v_min: Option<f64>,
    #[arg(long)]
    v_max: Option<f64>,
    /// Usable fraction of feeder-head ratings.
    #[arg(long)]
    feeder_loading_cap: Option<f64>,
    /// Solver time limit per MILP, seconds.
    #[arg(long)]
    time_limit: Option<f64>,
    /// Relative MIP gap.
    #[arg(long)]
    gap: Option<f64>,
    /// Solver threads (default 1).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sub-steps per switching action.
    #[arg(long)]
    substeps: Option<usize>,
    /// Sub-steps appended after the last action (default: longest CLPU window).
    #[arg(long)]
    settle_substeps: Option<usize>,
}

#[derive(Args)]
struct RestoreArgs {
    #[command(flatten)]
    case: CaseArgs,
    #[command(flatten)]
    solve: SolveArgs,
    /// Output directory for the reports.
    #[arg(long, short)]
    out: PathBuf,
    /// Stop after Stage 1.
    #[arg(long, conflicts_with = "replay_only")]
    stage1_only: bool,
    /// Skip both solves and replay this sequence file.
    #[arg(long, value_name = "SEQUENCE_JSON")]
    replay_only: Option<PathBuf>,
    /// Also write the MILP models in LP format.
    #[arg(long, conflicts_with = "replay_only")]
    emit_lp: bool,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    case: CaseArgs,
    #[command(flatten)]
    solve: SolveArgs,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    case: CaseArgs,
    #[arg(long)]
    sequence: PathBuf,
    #[command(flatten)]
    solve: SolveArgs,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 4)]
    feeders: usize,
    /// Buses per feeder, counting the feeder head.
    #[arg(long, default_value_t = 10)]
    buses: usize,
    #[arg(long, default_value_t = 3)]
    ties: usize,
    #[arg(long, default_value_t = 0)]
    dgs: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    head_capacity_factor: Option<f64>,
    #[arg(long)]
    switch_fraction: Option<f64>,
    /// Attach the default CLPU class built for this many sub-steps.
    #[arg(long)]
    clpu_substeps: Option<usize>,
    #[arg(long)]
    regulators: bool,
    /// Network JSON output path.
    #[arg(long, short)]
    out: PathBuf,
    /// Also write a fault scenario here.
    #[arg(long)]
    scenario_out: Option<PathBuf>,
    /// Faulted line id; a random line is chosen when omitted.
    #[arg(long, requires = "scenario_out")]
    fault: Option<String>,
}

#[derive(Args)]
struct CyclesArgs {
    #[arg(long)]
    network: PathBuf,
    #[arg(long)]
    cache: PathBuf,
    #[arg(long, default_value_t = DEFAULT_CYCLE_CAP)]
    cap: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Restore(args) => run_restore(args),
        Command::Compare(args) => run_compare(args),
        Command::Validate(args) => run_validate(args),
        Command::Synth(args) => run_synth(args),
        Command::Cycles(args) => run_cycles(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.exit as u8)
        }
    }
}

struct Case {
    model: NetworkModel,
    scenario: FaultScenario,
    options: ScenarioOptions,
    cycles: Vec<Cycle>,
}

fn load_case(args: &CaseArgs) -> Result<Case> {
    let model = load_network(&args.network)
        .with_context(|| format!("loading {}", args.network.display()))
        .or_exit(Exit::Input)?;
    let doc = ScenarioDocument::load(&args.scenario)
        .with_context(|| format!("loading {}", args.scenario.display()))
        .or_exit(Exit::Input)?;
    doc.scenario().validate(&model).or_exit(Exit::Input)?;
    let cycles = load_or_enumerate_cycles(&model, args.cycle_cache.as_deref(), DEFAULT_CYCLE_CAP)
        .or_exit(Exit::Input)?;
    log::info!(
        "{}: {} buses, {} edges, {} cycles",
        model.name(),
        model.buses().len(),
        model.edges().len(),
        cycles.len()
    );
    Ok(Case {
        model,
        scenario: doc.scenario(),
        options: doc.options,
        cycles,
    })
}

/// Defaults, then scenario-file options, then command-line flags.
fn stage_options(case: &Case, args: &SolveArgs) -> Result<(Stage1Options, Stage2Options)> {
    let file = &case.options;
    let mut s1 = Stage1Options::default();
    s1.v_min_pu = args.v_min.or(file.v_min_pu).unwrap_or(s1.v_min_pu);
    s1.v_max_pu = args.v_max.or(file.v_max_pu).unwrap_or(s1.v_max_pu);
    s1.feeder_loading_cap = args
        .feeder_loading_cap
        .or(file.feeder_loading_cap)
        .unwrap_or(s1.feeder_loading_cap);
    s1.allow_dg_islanding = !args.no_dg && file.allow_dg_islanding.unwrap_or(true);
    s1.solve = SolveOptions {
        time_limit_s: args.time_limit.or(file.time_limit_s),
        mip_gap: args.gap.unwrap_or(s1.solve.mip_gap),
        threads: args.threads.or(s1.solve.threads),
        random_seed: args.seed,
        ..SolveOptions::default()
    };
    s1.validate().map_err(|e| fail(Exit::Input, anyhow!(e)))?;
    let mut s2 = Stage2Options::from_stage1(&s1);
    if let Some(n) = args.substeps.or(file.substeps_per_action) {
        if n == 0 {
            return Err(fail(Exit::Input, anyhow!("substeps must be at least 1")));
        }
        s2.substeps_per_action = n;
    }
    s2.settle_substeps = args.settle_substeps;
    Ok((s1, s2))
}

fn stage1_failure(e: Stage1Error) -> Failure {
    let exit = match &e {
        Stage1Error::Infeasible { .. } => Exit::Stage1Infeasible,
        Stage1Error::Network(_) | Stage1Error::Options(_) => Exit::Input,
        Stage1Error::Verification(_) | Stage1Error::PowerFlow(_) => Exit::Validation,
        _ => Exit::Solver,
    };
    fail(exit, anyhow!(e).context("stage 1"))
}

fn stage2_failure(e: Stage2Error) -> Failure {
    let exit = match &e {
        Stage2Error::Infeasible { .. } => Exit::Stage2Infeasible,
        Stage2Error::Options(_) | Stage2Error::Inconsistent(_) | Stage2Error::Clpu(_) => {
            Exit::Input
        }
        Stage2Error::Verification(_) | Stage2Error::PowerFlow(_) => Exit::Validation,
        _ => Exit::Solver,
    };
    fail(exit, anyhow!(e).context("stage 2"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).or_exit(Exit::Input)?;
    text.push('\n');
    fs::write(path, text)
        .with_context(|| format!("writing {}", path.display()))
        .or_exit(Exit::Input)
}

fn write_csv(
    path: &Path,
    f: impl FnOnce(fs::File) -> std::result::Result<(), restoration::reports::ReportError>,
) -> Result<()> {
    let file = fs::File::create(path)
        .with_context(|| format!("creating {}", path.display()))
        .or_exit(Exit::Input)?;
    f(file).or_exit(Exit::Input)
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)
        .with_context(|| format!("creating output directory {}", dir.display()))
        .or_exit(Exit::Input)
}

fn backend_name() -> Result<String> {
    Ok(backend_from_env().or_exit(Exit::Input)?.name().to_string())
}

fn write_sequence_artifacts(
    out: &Path,
    model: &NetworkModel,
    seq: &SwitchingSequence,
    replay: Option<&restoration::stage2::ReplayReport>,
) -> Result<()> {
    write_json(&out.join("sequence.json"), seq)?;
    write_csv(&out.join("sequence.csv"), |f| {
        write_sequence_csv(seq, replay, f)
    })?;
    write_csv(&out.join("demand.csv"), |f| write_demand_csv(model, seq, f))?;
    write_csv(&out.join("voltages.csv"), |f| {
        write_voltage_csv(model, seq, f)
    })
}

fn run_restore(args: RestoreArgs) -> Result<()> {
    let case = load_case(&args.case)?;
    let (s1, s2) = stage_options(&case, &args.solve)?;
    prepare_out(&args.out)?;
    let mut meta = RunMetadata::new(
        &case.model,
        &case.scenario,
        &s1,
        &s2,
        case.cycles.len(),
        &backend_name()?,
    );

    if let Some(path) = &args.replay_only {
        let seq = read_sequence(path)?;
        let replay = replay_sequence(
            &case.model,
            &case.scenario,
            &seq,
            s2.v_min_pu,
            s2.v_max_pu,
            s2.feeder_loading_cap,
        );
        let report = ValidationReport::new(None, Some(replay));
        write_json(&args.out.join("validation_report.json"), &report)?;
        write_json(&args.out.join("run_metadata.json"), &meta)?;
        return finish(&report);
    }

    if args.emit_lp {
        let built =
            build_stage1(&case.model, &case.scenario, &case.cycles, &s1).map_err(stage1_failure)?;
        fs::write(args.out.join("stage1.lp"), built.milp.to_lp_string()).or_exit(Exit::Input)?;
    }
    let target =
        solve_stage1(&case.model, &case.scenario, &case.cycles, &s1).map_err(stage1_failure)?;
    log::info!(
        "stage 1: serving {:.1} kW ({:.1} kW was outaged, {:.1} kW shed), {} opens, {} closes",
        target.restored_kw,
        target.outage_kw,
        target.shed_kw,
        target.switch_ops.to_open.len(),
        target.switch_ops.to_close.len()
    );
    meta.weights = Some(target.weights);
    meta.stage1 = Some(StageTiming::from(&target.stats));
    write_json(
        &args.out.join("stage1_report.json"),
        &stage1_report(&case.model, &case.scenario, &target),
    )?;
    let check = check_stage1(&case.model, &target, &s1);

    let replay = if args.stage1_only {
        None
    } else {
        if args.emit_lp {
            let built = build_stage2(
                &case.model,
                &case.scenario,
                &target,
                &case.cycles,
                &s2,
                None,
            )
            .map_err(stage2_failure)?;
            fs::write(args.out.join("stage2.lp"), built.milp.to_lp_string())
                .or_exit(Exit::Input)?;
        }
        let mut seq = solve_stage2(&case.model, &case.scenario, &target, &case.cycles, &s2)
            .map_err(stage2_failure)?;
        meta.stage2 = seq.stats.take().as_ref().map(StageTiming::from);
        let replay = replay_sequence(
            &case.model,
            &case.scenario,
            &seq,
            s2.v_min_pu,
            s2.v_max_pu,
            s2.feeder_loading_cap,
        );
        write_sequence_artifacts(&args.out, &case.model, &seq, Some(&replay))?;
        Some(replay)
    };
    let report = ValidationReport::new(Some(check), replay);
    write_json(&args.out.join("validation_report.json"), &report)?;
    write_json(&args.out.join("run_metadata.json"), &meta)?;
    finish(&report)
}

fn finish(report: &ValidationReport) -> Result<()> {
    if report.passed {
        Ok(())
    } else {
        Err(fail(
            Exit::Validation,
            anyhow!("validation failed, see validation_report.json"),
        ))
    }
}

/// A sequence file that does not parse counts as a failed validation.
fn read_sequence(path: &Path) -> Result<SwitchingSequence> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .or_exit(Exit::Input)?;
    serde_json::from_str(&text)
        .with_context(|| format!("{} is not a valid sequence", path.display()))
        .or_exit(Exit::Validation)
}

fn run_validate(args: ValidateArgs) -> Result<()> {
    let case = load_case(&args.case)?;
    let (_, s2) = stage_options(&case, &args.solve)?;
    let seq = read_sequence(&args.sequence)?;
    if seq.network_hash != case.model.content_hash() {
        log::warn!("sequence was produced for a different network");
    }
    let replay = replay_sequence(
        &case.model,
        &case.scenario,
        &seq,
        s2.v_min_pu,
        s2.v_max_pu,
        s2.feeder_loading_cap,
    );
    let report = ValidationReport::new(None, Some(replay));
    match &args.out {
        Some(path) => write_json(path, &report)?,
        None => println!(
            "{}",
            serde_json::to_string_pretty(&report).or_exit(Exit::Input)?
        ),
    }
    finish(&report)
}

#[derive(Serialize)]
struct ComparisonReport<'a> {
    #[serde(flatten)]
    comparison: &'a restoration::stage2::Comparison,
    naive_feasible: bool,
    optimal_actions: Vec<String>,
    naive_actions: Option<Vec<String>>,
}

fn run_compare(args: CompareArgs) -> Result<()> {
    let case = load_case(&args.case)?;
    let (s1, s2) = stage_options(&case, &args.solve)?;
    prepare_out(&args.out)?;
    let target =
        solve_stage1(&case.model, &case.scenario, &case.cycles, &s1).map_err(stage1_failure)?;
    let mut optimal = solve_stage2(&case.model, &case.scenario, &target, &case.cycles, &s2)
        .map_err(stage2_failure)?;
    let mut naive = solve_naive(&case.model, &case.scenario, &target, &case.cycles, &s2)
        .map_err(stage2_failure)?;
    optimal.stats = None;
    if let Some(n) = naive.as_mut() {
        n.stats = None;
    }
    if naive.is_none() {
        log::warn!("the naive order is infeasible; only feasibility is compared");
    }
    let cmp = compare(&case.model, &case.scenario, &optimal, naive.as_ref());
    let describe = |seq: &SwitchingSequence| -> Vec<String> {
        seq.actions
            .iter()
            .map(|a| {
                format!(
                    "{} {}",
                    if a.op == restoration::stage2::SwitchOp::Open {
                        "open"
                    } else {
                        "close"
                    },
                    a.edge
                )
            })
            .collect()
    };
    let report = ComparisonReport {
        comparison: &cmp,
        naive_feasible: naive.is_some(),
        optimal_actions: describe(&optimal),
        naive_actions: naive.as_ref().map(describe),
    };
    write_json(&args.out.join("comparison.json"), &report)?;
    write_csv(&args.out.join("comparison.csv"), |f| {
        write_comparison_csv(&cmp, f)
    })?;
    println!(
        "optimal objective {:.3}, naive {}",
        cmp.optimal_objective,
        cmp.naive_objective
            .map_or("infeasible".to_string(), |v| format!("{v:.3}"))
    );
    Ok(())
}

fn run_synth(args: SynthArgs) -> Result<()> {
    let mut spec = SynthSpec::new(args.feeders, args.buses, args.ties, args.dgs, args.seed);
    if let Some(f) = args.head_capacity_factor {
        spec.head_capacity_factor = f;
    }
    if let Some(f) = args.switch_fraction {
        spec.switch_fraction = f;
    }
    spec.clpu_substeps = args.clpu_substeps;
    spec.regulators = args.regulators;
    let model = synth_multifeeder(&spec).or_exit(Exit::Input)?;
    fs::write(&args.out, model.to_json())
        .with_context(|| format!("writing {}", args.out.display()))
        .or_exit(Exit::Input)?;
    if let Some(path) = &args.scenario_out {
        let scenario = match &args.fault {
            Some(id) => {
                let k = model
                    .edge_index(id)
                    .ok_or_else(|| fail(Exit::Input, anyhow!("unknown edge `{id}`")))?;
                isolate_fault(&model, k)
            }
            None => synth_scenario(&model, args.seed)
                .ok_or_else(|| fail(Exit::Input, anyhow!("network has no plain line to fault")))?,
        };
        write_json(
            path,
            &ScenarioDocument::new(scenario, ScenarioOptions::default()),
        )?;
    }
    println!(
        "{}: {} buses, {} edges",
        model.name(),
        model.buses().len(),
        model.edges().len()
    );
    Ok(())
}

fn run_cycles(args: CyclesArgs) -> Result<()> {
    let model = load_network(&args.network).or_exit(Exit::Input)?;
    let cycles = restoration::topology::enumerate_cycles(&model, args.cap).or_exit(Exit::Input)?;
    restoration::topology::write_cycle_cache(&model, &cycles, &args.cache).or_exit(Exit::Input)?;
    println!(
        "{} cycles written to {}",
        cycles.len(),
        args.cache.display()
    );
    Ok(())
}

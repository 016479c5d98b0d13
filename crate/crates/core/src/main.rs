use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use taskmerge::experiment::write_audit;
use taskmerge::{
    emit, generate, read_trace, run, run_experiment, write_trace, MergeCostFactors,
    SchedulingPolicy, SimConfig, SweepConfig, WorkloadSpec,
};

#[derive(Parser)]
#[command(
    name = "taskmerge",
    version,
    about = "Merge-aware admission control simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic trace.
    Generate(GenerateArgs),
    /// Simulate one trace.
    Run(RunArgs),
    /// Run a replicated policy × task-count sweep.
    Sweep(SweepArgs),
    /// Print the default sweep configuration as TOML.
    DefaultConfig,
}

#[derive(Args)]
struct GenerateArgs {
    /// TOML file with a workload spec; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    tasks: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    window: Option<f64>,
    #[arg(long)]
    p_dup: Option<f64>,
    #[arg(long)]
    p_same: Option<f64>,
    #[arg(long)]
    p_op_change: Option<f64>,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct SimArgs {
    /// fcfs, edf or mu
    #[arg(long, default_value = "fcfs")]
    policy: SchedulingPolicy,
    #[arg(long)]
    no_merge: bool,
    #[arg(long, default_value_t = 8)]
    machines: usize,
    #[arg(long, default_value_t = 1)]
    queue_capacity: usize,
    #[arg(long, default_value_t = 0.5)]
    kappa_op: f64,
    #[arg(long, default_value_t = 0.9)]
    kappa_data: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Use mean execution times instead of sampling.
    #[arg(long)]
    no_noise: bool,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    trace: PathBuf,
    #[command(flatten)]
    sim: SimArgs,
    /// Write the merge/completion audit log (JSON Lines) here.
    #[arg(long)]
    audit: Option<PathBuf>,
    /// Write the run summary JSON here instead of stdout.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, short, default_value = "results")]
    out_dir: PathBuf,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long)]
    base_seed: Option<u64>,
    /// Comma-separated, e.g. `fcfs,edf,mu`.
    #[arg(long, value_delimiter = ',')]
    policies: Option<Vec<SchedulingPolicy>>,
    /// Comma-separated, e.g. `200,260,320`.
    #[arg(long, value_delimiter = ',')]
    task_counts: Option<Vec<usize>>,
    #[arg(long)]
    audit: bool,
}

fn generate_cmd(args: GenerateArgs) -> Result<()> {
    let mut spec = match &args.config {
        Some(path) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str::<WorkloadSpec>(&text)
                .with_context(|| format!("parsing {}", path.display()))?
        }
        None => WorkloadSpec::default(),
    };
    if let Some(v) = args.tasks {
        spec.task_count = v;
    }
    if let Some(v) = args.seed {
        spec.seed = v;
    }
    if let Some(v) = args.window {
        spec.arrival_window = v;
    }
    if let Some(v) = args.p_dup {
        spec.duplicate_prob = v;
    }
    if let Some(v) = args.p_same {
        spec.same_params_prob = v;
    }
    if let Some(v) = args.p_op_change {
        spec.op_change_prob = v;
    }
    let trace = generate(&spec)?;
    write_trace(&trace, &args.out)?;
    eprintln!("wrote {} requests to {}", trace.len(), args.out.display());
    Ok(())
}

fn run_cmd(args: RunArgs) -> Result<()> {
    let trace = read_trace(&args.trace)?;
    let s = args.sim;
    let config = SimConfig {
        machines: s.machines,
        local_queue_capacity: s.queue_capacity,
        policy: s.policy,
        merge_enabled: !s.no_merge,
        merge_factors: MergeCostFactors::new(s.kappa_op, s.kappa_data)?,
        rng_seed: s.seed,
        exec_noise: !s.no_noise,
        audit: args.audit.is_some(),
    };
    let metrics = run(&trace, &config)?;
    if let (Some(path), Some(events)) = (&args.audit, &metrics.audit) {
        write_audit(events, path)?;
    }
    let json = serde_json::to_string_pretty(&metrics.summary())? + "\n";
    match &args.out {
        Some(path) => {
            fs::write(path, json).with_context(|| format!("writing {}", path.display()))?
        }
        None => print!("{json}"),
    }
    Ok(())
}

fn sweep_cmd(args: SweepArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => SweepConfig::load(path)?,
        None => SweepConfig::default(),
    };
    if let Some(v) = args.replications {
        config.replications = v;
    }
    if let Some(v) = args.base_seed {
        config.base_seed = v;
    }
    if let Some(v) = args.policies {
        config.policies = v;
    }
    if let Some(v) = args.task_counts {
        config.task_counts = v;
    }
    config.audit |= args.audit;
    let result = run_experiment(&config)?;
    let files = emit(&result, &args.out_dir)?;
    for c in result.comparisons() {
        println!(
            "{:<4} {:>5} tasks  makespan {:>9.2} -> {:>9.2} ({:+.2}%)  dmr {:.4} -> {:.4}",
            c.policy,
            c.task_count,
            c.makespan_off,
            c.makespan_on,
            -c.makespan_saving_pct,
            c.dmr_off,
            c.dmr_on
        );
    }
    eprintln!(
        "wrote {} and {}",
        files.cells_csv.display(),
        files.summary_json.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => generate_cmd(a),
        Command::Run(a) => run_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::DefaultConfig => {
            print!("{}", SweepConfig::default().to_toml());
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use pinn_core::diagnostics::{evaluate, normalized_laplacians, DEFAULT_PROBES};
use pinn_core::harness::{
    parse_config, run_sweep, summarize_csv, timing_path, write_outcome, write_summary, SweepSpec,
};
use pinn_core::network::{read_checkpoint, write_checkpoint, Arch, NetworkConfig};
use pinn_core::ode::{Benchmark, NormScaling};
use pinn_core::reference::{reference_trajectory, ReferenceMethod, DEFAULT_ATOL, DEFAULT_RTOL};
use pinn_core::training::{
    make_collocation, train, Formulation, ResidualReduction, TrainingConfig, DEFAULT_ITERATIONS,
};

#[derive(Parser)]
#[command(name = "pinn", version, about = "Train and analyse PINNs on ODE benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configuration of a sweep document and write a results CSV.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Worker threads; defaults to the available parallelism.
        #[arg(long)]
        workers: Option<usize>,
        /// Overrides `output` from the document. Without either, results go
        /// to `$PINN_OUTPUT_DIR/sweep-<benchmark>.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a single configuration and print its report as JSON.
    Train(TrainArgs),
    /// Write a reference trajectory sampled at the held-out midpoints.
    Reference {
        #[arg(long)]
        benchmark: Benchmark,
        #[arg(long)]
        complexity: f64,
        /// Training points `D`; the midpoints of that grid are sampled.
        #[arg(long = "points")]
        n_points: Option<usize>,
        #[arg(long, default_value = "auto", value_parser = parse_method)]
        method: ReferenceMethod,
        #[arg(long, default_value_t = DEFAULT_RTOL)]
        rtol: f64,
        #[arg(long, default_value_t = DEFAULT_ATOL)]
        atol: f64,
        /// Output CSV; `-` for stdout.
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate loss Laplacians of a checkpoint written by `train`.
    Trace {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = DEFAULT_PROBES)]
        probes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Per-complexity statistics of a results CSV.
    Summarize {
        #[arg(long = "in")]
        input: PathBuf,
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    benchmark: Benchmark,
    /// SHM: `T/π`; heat: grid size `N`.
    #[arg(long)]
    complexity: f64,
    #[arg(long, default_value_t = 4)]
    depth: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value = "mlp")]
    arch: Arch,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Defaults to `--lr`.
    #[arg(long)]
    lambda_lr: Option<f64>,
    #[arg(long, default_value = "uniform")]
    formulation: Formulation,
    #[arg(long, default_value_t = DEFAULT_ITERATIONS)]
    iterations: usize,
    #[arg(long = "points")]
    n_points: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "mean")]
    residual_reduction: ResidualReduction,
    #[arg(long, default_value = "ic")]
    norm_scaling: NormScaling,
    #[arg(long, default_value_t = DEFAULT_RTOL)]
    rtol: f64,
    #[arg(long, default_value_t = DEFAULT_ATOL)]
    atol: f64,
    /// Write the trained parameters here.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_method(s: &str) -> Result<ReferenceMethod, String> {
    match s.to_ascii_lowercase().as_str() {
        "auto" => Ok(ReferenceMethod::Auto),
        "rk45" => Ok(ReferenceMethod::Rk45),
        "exact" => Ok(ReferenceMethod::Exact),
        other => Err(format!("unknown method `{other}` (expected auto, rk45 or exact)")),
    }
}

fn benchmark_spec(benchmark: Benchmark, complexity: f64, n_points: Option<usize>) -> SweepSpec {
    let mut spec = SweepSpec::new(benchmark, vec![complexity]);
    spec.n_points = n_points;
    spec
}

fn open_output(path: &PathBuf) -> Result<Box<dyn Write>> {
    if path.as_os_str() == "-" {
        return Ok(Box::new(io::stdout().lock()));
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(Box::new(BufWriter::new(file)))
}

fn cmd_sweep(config: PathBuf, workers: Option<usize>, out: Option<PathBuf>) -> Result<()> {
    let text = std::fs::read_to_string(&config)
        .with_context(|| format!("reading {}", config.display()))?;
    let mut spec = parse_config(&text).with_context(|| format!("in {}", config.display()))?;
    if out.is_some() {
        spec.output_path = out;
    }
    let workers = workers.unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    });
    if workers == 0 {
        bail!("--workers must be at least 1");
    }
    let path = spec.resolved_output();
    let outcome = run_sweep(&spec, workers)?;
    write_outcome(&path, &outcome).with_context(|| format!("writing {}", path.display()))?;
    let diverged = outcome.rows.iter().filter(|r| r.diverged).count();
    eprintln!(
        "{} runs ({diverged} diverged) -> {} (timings in {})",
        outcome.rows.len(),
        path.display(),
        timing_path(&path).display()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut spec = benchmark_spec(args.benchmark, args.complexity, args.n_points);
    spec.norm_scaling = args.norm_scaling;
    let system = spec.system(args.complexity)?;
    let n_points = spec.points_for(args.complexity)?;
    let network = NetworkConfig::new(args.depth, args.width, args.arch, system.dim())?;
    let mut config = TrainingConfig::new(network, system, n_points, args.lr);
    config.formulation = args.formulation;
    config.iterations = args.iterations;
    config.seed = args.seed;
    config.residual_reduction = args.residual_reduction;
    config.lambda_lr = args.lambda_lr.unwrap_or(args.lr);
    config.validate()?;

    let report = train(&config)?;
    let errors = match report.final_losses {
        Some(_) => Some(evaluate(
            &config,
            &report.final_params,
            ReferenceMethod::Auto,
            args.rtol,
            args.atol,
        )?),
        None => None,
    };
    if let Some(path) = &args.checkpoint {
        let context = serde_json::to_value(&config)?;
        let mut w = open_output(path)?;
        write_checkpoint(&mut w, &config.network, &report.final_params, Some(context))?;
        w.flush()?;
    }
    let mut json = serde_json::to_value(&report)?;
    json["errors"] = serde_json::to_value(errors)?;
    let mut w = open_output(args.out.as_ref().unwrap_or(&PathBuf::from("-")))?;
    serde_json::to_writer_pretty(&mut w, &json)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn cmd_reference(
    benchmark: Benchmark,
    complexity: f64,
    n_points: Option<usize>,
    method: ReferenceMethod,
    rtol: f64,
    atol: f64,
    out: PathBuf,
) -> Result<()> {
    let spec = benchmark_spec(benchmark, complexity, n_points);
    let system = spec.system(complexity)?;
    let colloc = make_collocation(system.horizon, spec.points_for(complexity)?)?;
    let traj = reference_trajectory(&system, &colloc.eval_points, method, rtol, atol)?;
    let mut w = open_output(&out)?;
    traj.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn cmd_trace(checkpoint: PathBuf, probes: usize, seed: u64) -> Result<()> {
    let file = File::open(&checkpoint)
        .with_context(|| format!("opening {}", checkpoint.display()))?;
    let (header, params) = read_checkpoint(BufReader::new(file))?;
    let context = header
        .context
        .context("checkpoint carries no training configuration; write it with `pinn train`")?;
    let config: TrainingConfig =
        serde_json::from_value(context).context("reading the checkpoint's training configuration")?;
    let laplacians = normalized_laplacians(&config.system, &config, &params, probes, seed)?;
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, &laplacians)?;
    writeln!(out)?;
    Ok(())
}

fn cmd_summarize(input: PathBuf, out: Option<PathBuf>) -> Result<()> {
    let summary = summarize_csv(&input).with_context(|| format!("summarizing {}", input.display()))?;
    let mut w = open_output(out.as_ref().unwrap_or(&PathBuf::from("-")))?;
    write_summary(&mut w, &summary)?;
    w.flush()?;
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Sweep {
            config,
            workers,
            out,
        } => cmd_sweep(config, workers, out),
        Command::Train(args) => cmd_train(args),
        Command::Reference {
            benchmark,
            complexity,
            n_points,
            method,
            rtol,
            atol,
            out,
        } => cmd_reference(benchmark, complexity, n_points, method, rtol, atol, out),
        Command::Trace {
            checkpoint,
            probes,
            seed,
        } => cmd_trace(checkpoint, probes, seed),
        Command::Summarize { input, out } => cmd_summarize(input, out),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }
}

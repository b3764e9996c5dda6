//! Config-driven experiment runner: simulation sweeps, throughput-knee
//! searches, theory verifiers, and bound evaluation, all emitting CSV.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 verification failure,
//! 3 at least one run did not converge.

mod config;
mod verify;

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use switchsim::analysis::{
    bernoulli_delay_bound, iid_queue_bound_bernoulli, markovian_queue_bound, MarkovBoundInputs,
};
use switchsim::sim::{run as sim_run, throughput_search};
use switchsim::traffic::{estimate_moments, ArrivalSource, ChainSet};
use switchsim::{pattern_matrix, rate_matrix, PatternKind, SimConfig};

use config::{parse_file, RunGrid, RunPoint, SweepBase};

pub const CSV_RUNS_HEADER: &str = "# switchsim runs csv v1\nscheduler,pattern,n,load,burst,seed,slots,mean_delay,ci,mean_queue,converged";
pub const CSV_KNEES_HEADER: &str = "# switchsim knees csv v1\nscheduler,pattern,n,knee";

#[derive(Parser)]
#[command(name = "switchsim", version, about = "Input-queued crossbar switch scheduling simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct RunnerArgs {
    /// experiment config (TOML)
    #[arg(long)]
    config: PathBuf,
    /// output CSV path (defaults to the config's `experiment.out`, else stdout)
    #[arg(long)]
    out: Option<PathBuf>,
    /// worker threads (defaults to available cores)
    #[arg(long)]
    jobs: Option<usize>,
    /// base value from which per-run seeds are derived
    #[arg(long, default_value_t = 1)]
    seed_base: u64,
}

#[derive(Subcommand)]
enum Cmd {
    /// Execute every expanded simulation point and emit one CSV row per run
    Run(RunnerArgs),
    /// Bisect the throughput knee for each (scheduler, pattern, n)
    Throughput(RunnerArgs),
    /// Run the oracle/property/statistics verification suite
    Verify {
        /// largest port count for the exact-enumeration sweeps
        #[arg(long, default_value_t = 4)]
        n_max: usize,
        /// random instances per sweep
        #[arg(long, default_value_t = 10_000)]
        trials: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// CSV report path (pass/fail plus lhs/rhs per check)
        #[arg(long)]
        out: Option<PathBuf>,
        /// fault injection: replace the scheduler under test with one that
        /// never matches, to demonstrate the checks can fail
        #[arg(long, hide = true)]
        inject_broken: bool,
    },
    /// Print the traffic summary and every applicable delay/queue bound
    Bounds {
        #[arg(long)]
        pattern: String,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        load: f64,
        /// Markovian-regime load proxy xi(K); enables the Markovian bound
        #[arg(long)]
        xi: Option<f64>,
        /// mixing horizon K for the Markovian bound
        #[arg(long, default_value_t = 1)]
        k: usize,
        /// chain-spec file: use its implied rates and empirically estimated
        /// moments instead of Bernoulli ones
        #[arg(long)]
        markov_file: Option<PathBuf>,
        /// slots for empirical moment estimation
        #[arg(long, default_value_t = 200_000)]
        moment_slots: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Burst-size axis (ON-OFF traffic), default grid 16..1024
    SweepBurst(RunnerArgs),
    /// Port-count axis, default grid 8..512
    SweepN(RunnerArgs),
    /// QPS iteration-count axis, r in {1,2,3,4}
    SweepR(RunnerArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.cmd {
        Cmd::Run(args) => cmd_run(args),
        Cmd::Throughput(args) => cmd_throughput(args),
        Cmd::Verify {
            n_max,
            trials,
            seed,
            out,
            inject_broken,
        } => verify::cmd_verify(n_max, trials, seed, out, inject_broken),
        Cmd::Bounds {
            pattern,
            n,
            load,
            xi,
            k,
            markov_file,
            moment_slots,
            seed,
        } => cmd_bounds(&pattern, n, load, xi, k, markov_file, moment_slots, seed),
        Cmd::SweepBurst(args) => cmd_sweep(args, SweepAxis::Burst),
        Cmd::SweepN(args) => cmd_sweep(args, SweepAxis::N),
        Cmd::SweepR(args) => cmd_sweep(args, SweepAxis::R),
    }
}

fn install_pool(jobs: Option<usize>) -> anyhow::Result<()> {
    if let Some(j) = jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .context("building worker pool")?;
    }
    Ok(())
}

fn write_output(path: Option<&PathBuf>, body: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent() {
                if !dir.as_os_str().is_empty() && !dir.exists() {
                    bail!("output directory {} does not exist", dir.display());
                }
            }
            fs::write(p, body).with_context(|| format!("writing {}", p.display()))?;
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(body.as_bytes())?;
        }
    }
    Ok(())
}

fn execute_points(points: &[RunPoint]) -> anyhow::Result<(String, bool)> {
    let results: Vec<_> = points
        .par_iter()
        .map(|p| sim_run(&p.config))
        .collect::<Result<_, _>>()?;
    let mut body = String::from(CSV_RUNS_HEADER);
    body.push('\n');
    let mut all_converged = true;
    for (p, r) in points.iter().zip(results.iter()) {
        all_converged &= r.converged;
        body.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            p.scheduler,
            p.pattern,
            p.n,
            p.load,
            p.burst,
            p.seed,
            r.slots,
            r.mean_delay,
            r.delay_ci_halfwidth,
            r.mean_queue,
            r.converged
        ));
    }
    Ok((body, all_converged))
}

fn cmd_run(args: RunnerArgs) -> anyhow::Result<ExitCode> {
    install_pool(args.jobs)?;
    let text = fs::read_to_string(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    let file = parse_file(&text)?;
    let mut points = Vec::new();
    for grid in &file.runs {
        grid.expand(args.seed_base, &mut points)?;
    }
    let (body, all_converged) = execute_points(&points)?;
    let out = args.out.or(file.experiment.out.map(PathBuf::from));
    write_output(out.as_ref(), &body)?;
    Ok(if all_converged { ExitCode::SUCCESS } else { ExitCode::from(3) })
}

fn cmd_throughput(args: RunnerArgs) -> anyhow::Result<ExitCode> {
    install_pool(args.jobs)?;
    let text = fs::read_to_string(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    let file = parse_file(&text)?;
    let mut tasks: Vec<(String, PatternKind, usize, f64, f64, f64, Option<u64>)> = Vec::new();
    for grid in &file.knees {
        if grid.lo >= grid.hi {
            bail!("knee grid needs lo < hi, got [{}, {}]", grid.lo, grid.hi);
        }
        for scheduler in &grid.scheduler {
            for pattern in &grid.pattern {
                let kind: PatternKind = pattern.parse()?;
                for &n in &grid.n {
                    tasks.push((
                        scheduler.clone(),
                        kind,
                        n,
                        grid.lo,
                        grid.hi,
                        grid.tolerance,
                        grid.min_slots_factor,
                    ));
                }
            }
        }
    }
    let knees: Vec<f64> = tasks
        .par_iter()
        .map(|(scheduler, kind, n, lo, hi, tol, factor)| {
            let mut template =
                SimConfig::new(*n, scheduler, "bernoulli", *kind, (lo + hi) / 2.0, args.seed_base);
            if let Some(f) = factor {
                template.stopping.min_slots_factor = *f;
            }
            throughput_search(&template, *lo, *hi, *tol)
        })
        .collect::<Result<_, _>>()?;
    let mut body = String::from(CSV_KNEES_HEADER);
    body.push('\n');
    for ((scheduler, kind, n, ..), knee) in tasks.iter().zip(knees.iter()) {
        body.push_str(&format!("{scheduler},{kind},{n},{knee}\n"));
    }
    let out = args.out.or(file.experiment.out.map(PathBuf::from));
    write_output(out.as_ref(), &body)?;
    Ok(ExitCode::SUCCESS)
}

enum SweepAxis {
    Burst,
    N,
    R,
}

fn cmd_sweep(args: RunnerArgs, axis: SweepAxis) -> anyhow::Result<ExitCode> {
    install_pool(args.jobs)?;
    let text = fs::read_to_string(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    let file = parse_file(&text)?;
    let base: &SweepBase = file
        .sweep
        .as_ref()
        .context("config needs a [sweep] section for sweep subcommands")?;
    let grid: Vec<u64> = match (&base.grid, &axis) {
        (Some(g), _) => g.clone(),
        (None, SweepAxis::Burst) => vec![16, 32, 64, 128, 256, 512, 1024],
        (None, SweepAxis::N) => vec![8, 16, 32, 64, 128, 256, 512],
        (None, SweepAxis::R) => vec![1, 2, 3, 4],
    };
    let mut points = Vec::new();
    for &v in &grid {
        let rg = RunGrid {
            scheduler: match axis {
                SweepAxis::R => vec![format!("qps:r={v}")],
                _ => base.scheduler.clone(),
            },
            pattern: base.pattern.clone(),
            n: match axis {
                SweepAxis::N => vec![v as usize],
                _ => vec![base.n],
            },
            load: vec![base.load],
            burst: match axis {
                SweepAxis::Burst => vec![v],
                _ => vec![base.burst],
            },
            seeds: base.seeds,
            max_slots: base.max_slots,
            min_slots_factor: base.min_slots_factor,
            relative_precision: base.relative_precision,
            confidence: None,
            discard_warmup: false,
        };
        rg.expand(args.seed_base, &mut points)?;
    }
    let (body, all_converged) = execute_points(&points)?;
    let out = args.out.or(file.experiment.out.map(PathBuf::from));
    write_output(out.as_ref(), &body)?;
    Ok(if all_converged { ExitCode::SUCCESS } else { ExitCode::from(3) })
}

#[allow(clippy::too_many_arguments)]
fn cmd_bounds(
    pattern: &str,
    n: usize,
    load: f64,
    xi: Option<f64>,
    k: usize,
    markov_file: Option<PathBuf>,
    moment_slots: usize,
    seed: u64,
) -> anyhow::Result<ExitCode> {
    let mut out = String::new();
    let (lambda, sigma2, theta) = match markov_file {
        None => {
            let kind: PatternKind = pattern.parse()?;
            let lam = rate_matrix(&pattern_matrix(kind, n)?, load)?;
            let sigma2: Vec<f64> = (0..n * n)
                .map(|v| {
                    let l = lam.get(v / n, v % n);
                    l - l * l
                })
                .collect();
            (lam, sigma2, vec![vec![0.0; k]; n * n])
        }
        Some(path) => {
            let text = fs::read_to_string(&path)
                .with_context(|| format!("reading {}", path.display()))?;
            let chains = ChainSet::parse(&text)?;
            let mut src = ArrivalSource::markov(chains, seed)?;
            let lam = src.rate().clone();
            let prof = estimate_moments(&mut src, moment_slots, k);
            (lam, prof.sigma2, prof.theta)
        }
    };
    let rho = lambda.rho();
    out.push_str(&format!(
        "traffic: pattern={pattern} n={n} load={load}\nrho = {rho}\ntotal rate = {}\n",
        lambda.total()
    ));
    out.push_str("lambda-dagger grid:\n");
    for i in 0..n {
        let row: Vec<String> = (0..n).map(|j| format!("{:.6}", lambda.dagger(i, j))).collect();
        out.push_str(&format!("  {}\n", row.join(" ")));
    }
    match bernoulli_delay_bound(rho) {
        Ok(b) => out.push_str(&format!("clean delay bound 1/(1-2rho) = {b}\n")),
        Err(_) => out.push_str("clean delay bound: undefined (rho >= 1/2)\n"),
    }
    match iid_queue_bound_bernoulli(&lambda) {
        Ok(b) => out.push_str(&format!("iid queue bound = {b}\n")),
        Err(_) => out.push_str("iid queue bound: undefined (rho >= 1/2)\n"),
    }
    if let Some(xi) = xi {
        let inputs = MarkovBoundInputs {
            lambda: lambda.clone(),
            sigma2,
            theta,
            xi,
            k,
        };
        match markovian_queue_bound(&inputs) {
            Ok(b) => out.push_str(&format!("markovian queue bound (xi={xi}, K={k}) = {b}\n")),
            Err(e) => out.push_str(&format!("markovian queue bound: undefined ({e})\n")),
        }
    }
    print!("{out}");
    Ok(ExitCode::SUCCESS)
}

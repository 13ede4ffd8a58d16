use clap::{Args, Parser, Subcommand};
use std::collections::HashMap;
use std::path::PathBuf;
use std::process::ExitCode;

use tasep::clocks::StreamSeed;
use tasep::coupling::{
    counterexample_replay, lemma_sequence, pullback_attractor, sync_time_all, sync_time_pair,
    ChainSystem, JumpSystem,
};
use tasep::experiments::{
    emit_summary_csv, emit_text_table, records_from_csv, records_to_csv, standard_segments,
    summarize, CellResult, RunRecord, SweepPlan,
};
use tasep::lattice::{LatticeState, RateConfig};
use tasep::master::{
    build_generator, coupling_bound_check, delta, distribution_to_csv, mixing_time, stationary,
    z3_model,
};
use tasep::render::{parse_trajectory, render_scatter, render_trajectory, ScatterPoint};
use tasep::{derive_seed, Error};

const EXIT_USAGE: u8 = 2;
const EXIT_WARN: u8 = 3;

#[derive(Parser)]
#[command(name = "tasep", about = "Open-boundary exclusion process toolkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte-Carlo synchronization times of the empty/full coupling
    Sync(SyncArgs),
    /// Run a sweep plan over (alpha, beta, n) cells
    Sweep(SweepArgs),
    /// Sample pullback attractors
    Attractor(AttractorArgs),
    /// Exact master-equation analysis
    Master(MasterArgs),
    /// Replay built-in fixtures
    Replay(ReplayArgs),
    /// Fit power laws to an existing results file
    Fit(FitArgs),
    /// Render trajectories or sweep summaries as SVG
    Render(RenderArgs),
}

#[derive(Args)]
struct RateArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    /// interior hopping rate; one value broadcasts, or give n-1 values
    #[arg(long = "h", num_args = 1, action = clap::ArgAction::Append)]
    h: Vec<f64>,
}

impl RateArgs {
    fn config(&self) -> Result<RateConfig, Error> {
        let interior = match self.h.len() {
            0 => vec![1.0; self.n.saturating_sub(1)],
            1 => vec![self.h[0]; self.n.saturating_sub(1)],
            m if m == self.n.saturating_sub(1) => self.h.clone(),
            m => {
                return Err(Error::BadConfig(format!(
                    "--h takes 1 or n-1 values, got {m} for n={}",
                    self.n
                )))
            }
        };
        RateConfig::tasep(self.n, self.alpha, self.beta, interior)
    }
}

#[derive(Args)]
struct SyncArgs {
    #[command(flatten)]
    rates: RateArgs,
    #[arg(long, default_value_t = 100)]
    runs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e6)]
    max_time: f64,
    /// couple all 2^n states instead of the empty/full pair (n <= 20)
    #[arg(long)]
    all_states: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    plan: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// worker threads (default: TASEP_WORKERS or all cores)
    #[arg(long)]
    workers: Option<usize>,
    /// skip cells already present in the results file
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct AttractorArgs {
    #[command(flatten)]
    rates: RateArgs,
    #[arg(long, default_value_t = 100)]
    seeds: usize,
    #[arg(long, default_value_t = 1e4)]
    t_max: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "tasep")]
    model: String,
}

#[derive(Args)]
struct MasterArgs {
    #[command(flatten)]
    rates: RateArgs,
    #[arg(long)]
    t: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    check_bound: bool,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    fixture: String,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    results: PathBuf,
    #[arg(long, default_value_t = 10)]
    batches: usize,
    /// comma-separated lo:hi segments; default: standard segments that fit
    #[arg(long)]
    segments: Option<String>,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long, conflicts_with = "sweep_summary")]
    traj: Option<PathBuf>,
    #[arg(long)]
    sweep_summary: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Sync(a) => cmd_sync(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Attractor(a) => cmd_attractor(a),
        Command::Master(a) => cmd_master(a),
        Command::Replay(a) => cmd_replay(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Render(a) => cmd_render(a),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}

fn cmd_sync(args: SyncArgs) -> Result<ExitCode, Error> {
    if args.runs == 0 {
        return Err(Error::BadConfig("--runs must be positive".into()));
    }
    let rates = args.rates.config()?;
    if args.all_states && rates.n > tasep::lattice::ENUM_CAP {
        return Err(Error::TooLarge { n: rates.n, cap: tasep::lattice::ENUM_CAP });
    }
    let law = tasep::clocks::ClockLaw::from_rates(&rates)?;
    let empty = LatticeState::empty(rates.n)?;
    let full = LatticeState::full(rates.n)?;
    println!("run,seed,tau,synced,events");
    let mut timeouts = 0usize;
    for run in 0..args.runs {
        let seed = derive_seed(args.seed, &[run as u64]);
        let out = if args.all_states {
            sync_time_all(&rates, StreamSeed::new(seed), args.max_time)?
        } else {
            sync_time_pair(&empty, &full, &law, StreamSeed::new(seed), args.max_time)?
        };
        if !out.synced {
            timeouts += 1;
        }
        println!(
            "{run},{seed},{},{},{}",
            out.tau.map(|t| format!("{t:.12e}")).unwrap_or_default(),
            out.synced,
            out.events_consumed
        );
    }
    if timeouts > 0 {
        eprintln!("{timeouts}/{} runs timed out at t = {}", args.runs, args.max_time);
        return Ok(ExitCode::from(EXIT_WARN));
    }
    Ok(ExitCode::SUCCESS)
}

/// Segments reported for a plan: every standard segment holding at least
/// three of the plan's lengths, else the plan's own full range.
fn plan_segments(lengths: &[usize]) -> Vec<(usize, usize)> {
    let fitting: Vec<(usize, usize)> = standard_segments()
        .into_iter()
        .filter(|&(lo, hi)| lengths.iter().filter(|&&n| n >= lo && n <= hi).count() >= 3)
        .collect();
    if fitting.is_empty() {
        vec![(lengths[0], *lengths.last().unwrap())]
    } else {
        fitting
    }
}

fn cmd_sweep(args: SweepArgs) -> Result<ExitCode, Error> {
    let plan = SweepPlan::parse(&std::fs::read_to_string(&args.plan)?)?;
    std::fs::create_dir_all(&args.out)?;
    let results_path = args.out.join("results.csv");

    let mut done: HashMap<(u64, u64, usize), Vec<RunRecord>> = HashMap::new();
    if args.resume && results_path.exists() {
        for r in records_from_csv(&std::fs::read_to_string(&results_path)?)? {
            done.entry((r.alpha.to_bits(), r.beta.to_bits(), r.n))
                .or_default()
                .push(r);
        }
    }

    let workers = args
        .workers
        .or_else(|| std::env::var("TASEP_WORKERS").ok().and_then(|s| s.parse().ok()));
    let pool = match workers {
        Some(k) if k > 0 => Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| Error::BadConfig(e.to_string()))?,
        ),
        Some(_) => return Err(Error::BadConfig("--workers must be positive".into())),
        None => None,
    };

    let mut all_cells: Vec<CellResult> = Vec::new();
    let mut all_records: Vec<RunRecord> = Vec::new();
    for (alpha, beta, n) in plan.cells() {
        let key = (alpha.to_bits(), beta.to_bits(), n);
        match done.get(&key) {
            Some(records) if records.len() == plan.runs_per_cell => {
                eprintln!("cell ({alpha}, {beta}, n={n}): resumed from results file");
                all_cells.push(CellResult::from_records(alpha, beta, n, records, plan.batches)?);
                all_records.extend_from_slice(records);
            }
            _ => {
                let run_one = || tasep::experiments::run_cell(&plan, alpha, beta, n);
                let (cell, records) = match &pool {
                    Some(p) => p.install(run_one)?,
                    None => run_one()?,
                };
                eprintln!(
                    "cell ({alpha}, {beta}, n={n}): E[tau] = {:.4}, sigma = {:.4}, timeouts = {}",
                    cell.mean_tau, cell.sigma, cell.timeouts
                );
                all_records.extend(records);
                // rewrite the checkpoint after each completed cell so an
                // interrupted sweep resumes without losing finished work
                std::fs::write(&results_path, records_to_csv(&all_records))?;
                all_cells.push(cell);
            }
        }
    }

    let segments = plan_segments(&plan.lengths);
    let rows = summarize(&all_cells, &segments)?;
    std::fs::write(args.out.join("summary.csv"), emit_summary_csv(&rows))?;
    std::fs::write(args.out.join("tables.txt"), emit_text_table(&rows, &segments))?;
    eprintln!("wrote {}", args.out.display());
    print!("{}", emit_summary_csv(&rows));
    Ok(ExitCode::SUCCESS)
}

fn cmd_attractor(args: AttractorArgs) -> Result<ExitCode, Error> {
    println!("seed_index,seed,settled,size,t_settle,state");
    let mut singletons = 0usize;
    let mut unsettled = 0usize;
    let mut run = |sys: &dyn DynSystem, s: usize| -> Result<(), Error> {
        let seed = derive_seed(args.seed, &[s as u64]);
        match sys.pullback(StreamSeed::new(seed), args.t_max) {
            Ok((size, scale, state)) => {
                if size == 1 {
                    singletons += 1;
                }
                println!(
                    "{s},{seed},true,{size},{scale},{}",
                    state.unwrap_or_default()
                );
            }
            Err(Error::NotSettled) => {
                unsettled += 1;
                println!("{s},{seed},false,,,");
            }
            Err(e) => return Err(e),
        }
        Ok(())
    };
    match args.model.as_str() {
        "tasep" => {
            let sys = ChainSystem::new(&args.rates.config()?)?;
            for s in 0..args.seeds {
                run(&sys, s)?;
            }
        }
        "z3" => {
            let (sys, _) = z3_model();
            for s in 0..args.seeds {
                run(&sys, s)?;
            }
        }
        other => return Err(Error::BadConfig(format!("unknown model {other}"))),
    }
    eprintln!(
        "{singletons}/{} singleton attractors, {unsettled} not settled by t_max = {}",
        args.seeds, args.t_max
    );
    if unsettled > 0 {
        return Ok(ExitCode::from(EXIT_WARN));
    }
    Ok(ExitCode::SUCCESS)
}

/// Object-safe view of a jump system for the attractor command, which only
/// needs the pullback construction and a state printer.
trait DynSystem {
    fn pullback(
        &self,
        seed: StreamSeed,
        t_max: f64,
    ) -> Result<(usize, f64, Option<String>), Error>;
}

impl DynSystem for ChainSystem {
    fn pullback(
        &self,
        seed: StreamSeed,
        t_max: f64,
    ) -> Result<(usize, f64, Option<String>), Error> {
        let res = pullback_attractor(self, seed, t_max)?;
        let state = if res.attractor.len() == 1 {
            let i = res.attractor.iter().next().unwrap();
            Some(LatticeState::from_index(i, self.n())?.to_literal())
        } else {
            None
        };
        Ok((res.attractor.len(), res.settle_scale, state))
    }
}

impl DynSystem for tasep::master::Z3System {
    fn pullback(
        &self,
        seed: StreamSeed,
        t_max: f64,
    ) -> Result<(usize, f64, Option<String>), Error> {
        let res = pullback_attractor(self, seed, t_max)?;
        let state = if res.attractor.len() == 1 {
            res.attractor.iter().next().map(|i| i.to_string())
        } else {
            None
        };
        Ok((res.attractor.len(), res.settle_scale, state))
    }
}

fn cmd_master(args: MasterArgs) -> Result<ExitCode, Error> {
    let rates = args.rates.config()?;
    let sys = ChainSystem::new(&rates)?;
    let q = build_generator(&sys)?;
    let pi = stationary(&q)?;
    print!("{}", distribution_to_csv(rates.n, &pi));
    if let Some(eps) = args.epsilon {
        let t = mixing_time(&q, eps)?;
        println!("t_mix,{eps},{t:.4}");
        eprintln!("t_mix({eps}) = {t:.4}");
    }
    if args.check_bound {
        let t = args.t.unwrap_or(5.0);
        let dim = sys.num_states();
        let (lhs, rhs, holds) =
            coupling_bound_check(&sys, t, &delta(dim, dim - 1), &delta(dim, 0))?;
        println!("bound,{t},{lhs:.6e},{rhs:.6e},{holds}");
        eprintln!("coupling bound at t = {t}: lhs = {lhs:.6e}, rhs = {rhs:.6e}, holds = {holds}");
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_replay(args: ReplayArgs) -> Result<ExitCode, Error> {
    if args.fixture == "remark54" {
        for (label, x1, x2) in counterexample_replay() {
            println!("{label} {} {}", x1.to_literal(), x2.to_literal());
        }
        return Ok(ExitCode::SUCCESS);
    }
    if let Some(spec) = args.fixture.strip_prefix("lemma:") {
        let n: usize = spec
            .parse()
            .map_err(|_| Error::BadConfig(format!("bad fixture {}", args.fixture)))?;
        if n == 0 || n > 10 {
            return Err(Error::TooLarge { n, cap: 10 });
        }
        let seq = lemma_sequence(n);
        println!(
            "sequence {}",
            seq.iter().map(|k| k.0.to_string()).collect::<Vec<_>>().join(" ")
        );
        let all_zero = (0..1usize << n).all(|u| {
            let end = seq.iter().fold(u, |s, &k| tasep::lattice::hop_index(s, n, k));
            end == 0
        });
        println!("all-zero: {}", if all_zero { "yes" } else { "no" });
        return Ok(ExitCode::SUCCESS);
    }
    Err(Error::BadConfig(format!("unknown fixture {}", args.fixture)))
}

fn cmd_fit(args: FitArgs) -> Result<ExitCode, Error> {
    let records = records_from_csv(&std::fs::read_to_string(&args.results)?)?;
    if records.is_empty() {
        return Err(Error::InsufficientData("results file has no rows".into()));
    }
    let mut cells_map: HashMap<(u64, u64, usize), Vec<RunRecord>> = HashMap::new();
    let mut order: Vec<(u64, u64, usize)> = Vec::new();
    for r in records {
        let key = (r.alpha.to_bits(), r.beta.to_bits(), r.n);
        if !cells_map.contains_key(&key) {
            order.push(key);
        }
        cells_map.entry(key).or_default().push(r);
    }
    let mut cells = Vec::new();
    let mut lengths: Vec<usize> = Vec::new();
    for key in order {
        let rs = &cells_map[&key];
        let (a, b, n) = (f64::from_bits(key.0), f64::from_bits(key.1), key.2);
        cells.push(CellResult::from_records(a, b, n, rs, args.batches)?);
        if !lengths.contains(&n) {
            lengths.push(n);
        }
    }
    lengths.sort_unstable();
    let segments = match &args.segments {
        Some(text) => text
            .split(',')
            .map(|seg| {
                let (lo, hi) = seg
                    .split_once(':')
                    .ok_or_else(|| Error::Parse(format!("bad segment {seg}")))?;
                Ok((
                    lo.trim().parse().map_err(|_| Error::Parse(format!("bad segment {seg}")))?,
                    hi.trim().parse().map_err(|_| Error::Parse(format!("bad segment {seg}")))?,
                ))
            })
            .collect::<Result<Vec<_>, Error>>()?,
        None => plan_segments(&lengths),
    };
    let rows = summarize(&cells, &segments)?;
    print!("{}", emit_summary_csv(&rows));
    Ok(ExitCode::SUCCESS)
}

fn cmd_render(args: RenderArgs) -> Result<ExitCode, Error> {
    let svg = match (&args.traj, &args.sweep_summary) {
        (Some(path), None) => {
            let samples = parse_trajectory(&std::fs::read_to_string(path)?)?;
            render_trajectory(&samples)?
        }
        (None, Some(path)) => {
            let rows = tasep::experiments::parse_summary_csv(&std::fs::read_to_string(path)?)?;
            if rows.is_empty() {
                return Err(Error::Parse("summary has no rows".into()));
            }
            // one marker per point, labeled with its first-listed exponent
            let mut points: Vec<ScatterPoint> = Vec::new();
            for r in &rows {
                if !points.iter().any(|p| p.alpha == r.alpha && p.beta == r.beta) {
                    points.push(ScatterPoint { alpha: r.alpha, beta: r.beta, gamma: r.gamma });
                }
            }
            render_scatter(&points)?
        }
        _ => return Err(Error::BadConfig("give exactly one of --traj, --sweep-summary".into())),
    };
    std::fs::write(&args.out, svg)?;
    eprintln!("wrote {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}

mod harness;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use amt_core::bench::{self, BenchmarkReport, Boundary, Skew, Workload};
use amt_core::scheduler::Policy;
use amt_core::{Cluster, Error, Runtime, RuntimeConfig};

use harness::Harness;

#[derive(Parser, Debug)]
#[command(name = "amt", version, about = "Asynchronous many-task runtime harness")]
struct Cli {
    /// Config file of `key = value` lines.
    #[arg(long, global = true, env = "AMT_CONFIG")]
    config: Option<PathBuf>,
    /// This process's locality id (overrides `this_locality`).
    #[arg(long, global = true)]
    locality: Option<u32>,
    /// Worker threads (overrides `scheduler.workers`).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// static, local_priority or hierarchical (overrides `scheduler.policy`).
    #[arg(long, global = true)]
    policy: Option<Policy>,
    /// Any config key, as KEY=VALUE. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Boot one locality and serve until asked to stop.
    Run,
    /// Run a benchmark and print its report as CSV.
    #[command(subcommand)]
    Bench(BenchCmd),
    /// Inspect performance counters.
    #[command(subcommand)]
    Counters(CountersCmd),
    /// Demonstrations.
    #[command(subcommand)]
    Demo(DemoCmd),
}

#[derive(Args, Debug)]
struct Output {
    /// Write the report here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Append the counter snapshot (name,value,sampled_at_ns) after a blank line.
    #[arg(long)]
    counters: bool,
}

#[derive(Args, Debug)]
struct Topology {
    /// Number of localities.
    #[arg(long)]
    localities: Option<u32>,
    /// Run every locality inside this process instead of spawning children.
    #[arg(long)]
    in_process: bool,
}

#[derive(Subcommand, Debug)]
enum BenchCmd {
    /// Fibonacci as a dataflow tree.
    Fib {
        #[arg(long)]
        n: u64,
        /// Below this, subtrees run serially.
        #[arg(long, default_value_t = 15)]
        cutoff: u64,
        #[command(flatten)]
        out: Output,
    },
    /// Distributed 1D heat stencil checked against the serial oracle.
    Stencil {
        #[arg(long, default_value_t = 64)]
        cells: usize,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        /// fixed-zero or zero-flux.
        #[arg(long, default_value = "fixed-zero")]
        boundary: Boundary,
        #[command(flatten)]
        topo: Topology,
        #[command(flatten)]
        out: Output,
    },
    /// The same synthetic workload under every scheduling policy.
    Policy {
        #[arg(long, default_value_t = 10_000)]
        tasks: usize,
        #[arg(long, default_value_t = 100)]
        task_us: u64,
        /// balanced or all-to-0.
        #[arg(long, default_value = "all-to-0")]
        skew: Skew,
        /// spin, sleep or auto.
        #[arg(long, default_value = "auto")]
        workload: Workload,
        #[command(flatten)]
        out: Output,
    },
}

#[derive(Subcommand, Debug)]
enum CountersCmd {
    /// Print every counter as CSV: name,value,sampled_at_ns.
    Dump {
        #[arg(long, default_value = "/")]
        prefix: String,
    },
}

#[derive(Subcommand, Debug)]
enum DemoCmd {
    /// Move a counter object around the localities while updating it.
    Migrate {
        #[arg(long, default_value_t = 2)]
        rounds: usize,
        #[arg(long, default_value_t = 50)]
        adds: usize,
        #[command(flatten)]
        topo: Topology,
        #[command(flatten)]
        out: Output,
    },
}

fn load_config(cli: &Cli) -> amt_core::Result<RuntimeConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RuntimeConfig::from_file(p)?,
        None => RuntimeConfig::default(),
    };
    for kv in &cli.sets {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set {kv:?}: expected KEY=VALUE")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(l) = cli.locality {
        cfg.this_locality = l;
    }
    if let Some(w) = cli.workers {
        cfg.scheduler.workers = w;
    }
    if let Some(p) = cli.policy {
        cfg.scheduler.policy = p;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn single(cfg: &RuntimeConfig) -> RuntimeConfig {
    RuntimeConfig {
        localities: vec!["127.0.0.1:0".into()],
        this_locality: 0,
        ..cfg.clone()
    }
}

fn emit(report: &BenchmarkReport, out: &Output) -> amt_core::Result<()> {
    let mut text = report.to_csv();
    if out.counters {
        text.push('\n');
        text.push_str(&report.counters_csv());
    }
    match &out.output {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::InvalidArgument(format!("{}: {e}", p.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| Error::Transport(format!("stdout: {e}")))
        }
    }
}

/// Runs `f` on locality 0 of an `n`-locality deployment and tears it down.
fn with_localities<F>(cfg: &RuntimeConfig, topo: &Topology, default_n: u32, f: F) -> amt_core::Result<BenchmarkReport>
where
    F: FnOnce(&Runtime) -> amt_core::Result<BenchmarkReport>,
{
    let n = topo.localities.unwrap_or(default_n);
    if n == 0 {
        return Err(Error::Config("--localities must be at least 1".into()));
    }
    if n == 1 {
        let rt = Runtime::boot(single(cfg))?;
        let r = f(&rt);
        rt.shutdown();
        return r;
    }
    if topo.in_process {
        let c = Cluster::start(n, cfg.scheduler)?;
        let r = f(c.locality(0));
        c.shutdown();
        return r;
    }
    let h = Harness::spawn(cfg, n)?;
    let r = f(h.runtime());
    let stopped = h.shutdown();
    let r = r?;
    stopped?;
    Ok(r)
}

fn run(cli: Cli) -> amt_core::Result<()> {
    let cfg = load_config(&cli)?;
    init_logging(&cfg);
    match cli.command {
        Command::Run => {
            if cli.config.is_none() {
                return Err(Error::Config("run needs --config FILE (or AMT_CONFIG)".into()));
            }
            let rt = Runtime::boot(cfg)?;
            log::info!("locality {} of {} ready", rt.locality(), rt.num_localities());
            rt.wait_for_shutdown_request(None);
            rt.shutdown();
            Ok(())
        }
        Command::Bench(BenchCmd::Fib { n, cutoff, out }) => {
            let rt = Runtime::boot(single(&cfg))?;
            let r = bench::bench_fib(&rt, n, cutoff);
            rt.shutdown();
            emit(&r?, &out)
        }
        Command::Bench(BenchCmd::Stencil {
            cells,
            steps,
            boundary,
            topo,
            out,
        }) => {
            let r = with_localities(&cfg, &topo, 2, |rt| bench::bench_stencil(rt, cells, steps, boundary))?;
            emit(&r, &out)
        }
        Command::Bench(BenchCmd::Policy {
            tasks,
            task_us,
            skew,
            workload,
            out,
        }) => {
            let rt = Runtime::boot(single(&cfg))?;
            let r = bench::bench_policy_compare(rt.scheduler(), tasks, task_us, skew, workload);
            rt.shutdown();
            emit(&r?, &out)
        }
        Command::Counters(CountersCmd::Dump { prefix }) => {
            let rt = Runtime::boot(cfg)?;
            let samples = bench::snapshot(&rt, &prefix);
            // locality 0 leaving releases any `run` peers
            if rt.locality() == 0 {
                rt.request_cluster_shutdown();
            }
            rt.shutdown();
            print!("{}", bench::counters_to_csv(&samples));
            Ok(())
        }
        Command::Demo(DemoCmd::Migrate { rounds, adds, topo, out }) => {
            let r = with_localities(&cfg, &topo, 3, |rt| bench::demo_migrate(rt, rounds, adds))?;
            emit(&r, &out)
        }
    }
}

fn init_logging(cfg: &RuntimeConfig) {
    let _ = env_logger::Builder::new()
        .filter_level(cfg.log_level)
        .parse_default_env()
        .format_timestamp_millis()
        .try_init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("amt: {e}");
            match e {
                Error::Config(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}

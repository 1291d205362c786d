use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use pmvba::simnet::run;
use pmvba_harness::chart::line_chart;
use pmvba_harness::report::{decision_rows, write_csv};
use pmvba_harness::scenarios::{self, library};
use pmvba_harness::sweep::{aggregate, run_sweep, scaling, SweepSpec};
use pmvba_harness::{ConfigError, RunConfig};

#[derive(Parser)]
#[command(name = "pmvba", version, about = "Simulate prioritized committee-based MVBA")]
struct Cli {
    /// Default output directory.
    #[arg(long, global = true, env = "PMVBA_OUT_DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one configuration and emit one CSV row per decision.
    Run(RunArgs),
    /// Run a named scenario and check its expectations.
    Scenario {
        name: String,
        #[arg(long, default_value = "01")]
        seed: String,
    },
    /// Run a grid over n and seeds, fit scaling exponents, draw charts.
    Sweep(SweepArgs),
    /// List registered scenarios.
    ListScenarios,
}

#[derive(Args, Default)]
struct Overrides {
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    instances: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    tx_size: Option<usize>,
    /// Adversary token; repeat to combine (see README).
    #[arg(long)]
    adversary: Vec<String>,
    #[arg(long)]
    event_budget: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    /// TOML file with RunConfig keys; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    f: Option<usize>,
    /// Write a delivery transcript (needs an output directory).
    #[arg(long)]
    transcript: bool,
    #[command(flatten)]
    o: Overrides,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_delimiter = ',', default_value = "4,7,10,13")]
    n: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    #[command(flatten)]
    o: Overrides,
}

enum Failure {
    Usage(String),
    Run(anyhow::Error),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Run(e)
    }
}

fn apply(cfg: &mut RunConfig, o: Overrides) {
    if let Some(v) = o.seed {
        cfg.seed = v;
    }
    if let Some(v) = o.instances {
        cfg.instances = v;
    }
    if let Some(v) = o.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = o.tx_size {
        cfg.tx_size = v;
    }
    if !o.adversary.is_empty() {
        cfg.adversary = o.adversary;
    }
    if let Some(v) = o.event_budget {
        cfg.event_budget = v;
    }
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn cmd_run(args: RunArgs, out: Option<PathBuf>) -> Result<(), Failure> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
            RunConfig::from_toml(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(n) = args.n {
        cfg.n = n;
    }
    if args.f.is_some() {
        cfg.f = args.f;
    }
    cfg.transcript |= args.transcript;
    apply(&mut cfg, args.o);
    let out = out.or(cfg.out.clone());
    cfg.validate()?;
    if let Some(name) = cfg.scenario.clone() {
        let scenario = scenarios::find(&name)
            .ok_or_else(|| Failure::Usage(format!("unknown scenario {name:?}")))?;
        return cmd_scenario(scenario, &cfg.seed_bytes()?, out);
    }
    let sim = cfg.to_sim()?;
    let metrics = run(&sim).context("simulation failed")?;
    let rows = decision_rows(&metrics);
    match &out {
        Some(dir) => {
            let mut buf = Vec::new();
            write_csv(&mut buf, &rows).context("encoding CSV")?;
            let p = write_file(dir, "run.csv", &buf)?;
            eprintln!("wrote {}", p.display());
            let json = serde_json::to_vec_pretty(&metrics).context("encoding metrics")?;
            write_file(dir, "metrics.json", &json)?;
            if cfg.transcript {
                let mut t = metrics.transcript.join("\n");
                t.push('\n');
                write_file(dir, "transcript.txt", t.as_bytes())?;
            }
        }
        None => write_csv(io::stdout().lock(), &rows).context("writing CSV")?,
    }
    Ok(())
}

fn cmd_scenario(s: scenarios::Scenario, seed: &[u8], out: Option<PathBuf>) -> Result<(), Failure> {
    let report = s.run(seed);
    print!("{}", report.render());
    if let (Some(dir), Some(m)) = (&out, &report.metrics) {
        let mut buf = Vec::new();
        write_csv(&mut buf, &decision_rows(m)).context("encoding CSV")?;
        write_file(dir, &format!("{}.csv", s.name), &buf)?;
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Run(anyhow::anyhow!("scenario {} failed", s.name)))
    }
}

fn cmd_sweep(args: SweepArgs, out: Option<PathBuf>) -> Result<(), Failure> {
    let mut base = RunConfig::default();
    apply(&mut base, args.o);
    for &n in &args.n {
        RunConfig { n, ..base.clone() }.to_sim()?;
    }
    let spec = SweepSpec {
        ns: args.n,
        seeds: args.seeds,
        base,
    };
    let runs = run_sweep(&spec)?;
    let rows = aggregate(&runs);
    let report = scaling(&rows);
    print!("{}", report.render());
    let dir = out.unwrap_or_else(|| PathBuf::from("."));
    let mut buf = Vec::new();
    write_csv(&mut buf, &runs).context("encoding CSV")?;
    write_file(&dir, "sweep_runs.csv", &buf)?;
    let mut buf = Vec::new();
    write_csv(&mut buf, &rows).context("encoding CSV")?;
    write_file(&dir, "sweep.csv", &buf)?;
    let latency: Vec<(f64, f64)> = rows.iter().map(|r| (r.n as f64, r.mean_decide_round)).collect();
    let msgs: Vec<(f64, f64)> = rows.iter().map(|r| (r.n as f64, r.mean_msgs)).collect();
    write_file(
        &dir,
        "latency.svg",
        line_chart("Decide round vs n", "n", "mean decide round", &latency).as_bytes(),
    )?;
    write_file(
        &dir,
        "messages.svg",
        line_chart("Messages vs n", "n", "mean messages per instance", &msgs).as_bytes(),
    )?;
    eprintln!("wrote sweep.csv, sweep_runs.csv, latency.svg, messages.svg to {}", dir.display());
    let failures: usize = rows.iter().map(|r| r.failures).sum();
    if failures > 0 {
        return Err(Failure::Run(anyhow::anyhow!("{failures} runs failed")));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Run(args) => cmd_run(args, cli.out),
        Cmd::Scenario { name, seed } => match scenarios::find(&name) {
            None => Err(Failure::Usage(format!("unknown scenario {name:?}; see list-scenarios"))),
            Some(s) => hex::decode(&seed)
                .map_err(|_| ConfigError::Seed(seed.clone()).into())
                .and_then(|bytes| cmd_scenario(s, &bytes, cli.out)),
        },
        Cmd::Sweep(args) => cmd_sweep(args, cli.out),
        Cmd::ListScenarios => {
            let mut out = io::stdout().lock();
            for s in library() {
                let _ = writeln!(out, "{:<28} n={:<3} {}", s.name, s.n, s.about);
            }
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

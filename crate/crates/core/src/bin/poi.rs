use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use poi_engine::config::Config;
use poi_engine::harness::{self, HarnessError, SimulateOptions, DEFAULT_SWEEP, DEFAULT_SWEEP_PACE, LOG_FILE};
use poi_engine::inference::{Catalog, ProfileKind};
use poi_engine::runtime::EngineConfig;

const EXIT_CONFIG: u8 = 1;
const EXIT_IO: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "poi", version, about = "Person-object interaction engine and tracker simulator")]
struct Cli {
    /// TOML config file with [engine], [sim] and [serve] sections.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct EngineFlags {
    /// Inference profile.
    #[arg(long)]
    profile: Option<ProfileKind>,
    /// Maximum number of simultaneously live entity workers.
    #[arg(long)]
    cap: Option<usize>,
    /// Noise filter window.
    #[arg(long)]
    window: Option<usize>,
    /// JSON product catalogue (object prices and shelf stock).
    #[arg(long)]
    catalog: Option<PathBuf>,
}

impl EngineFlags {
    fn engine(&self, cfg: &Config) -> EngineConfig {
        let mut e = cfg.engine.to_engine();
        if let Some(p) = self.profile {
            e.profile = p;
        }
        if let Some(c) = self.cap {
            e.max_level_concurrency = c;
        }
        if let Some(w) = self.window {
            e.noise_filter_window = w;
        }
        e
    }

    fn catalog(&self) -> Result<Arc<Catalog>> {
        Ok(Arc::new(match &self.catalog {
            Some(p) => Catalog::load(p).map_err(|source| HarnessError::Io {
                context: format!("load catalogue {}", p.display()),
                source,
            })?,
            None => Catalog::default(),
        }))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a run, stream it through ingestion, replay it and score it.
    Simulate {
        /// Generator seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Switches the simulator to this profile's preset world.
        #[arg(long)]
        profile: Option<ProfileKind>,
        /// Output directory for the log, archives and reports.
        #[arg(long, short)]
        out: PathBuf,
        /// Also measure latency at several concurrency caps.
        #[arg(long)]
        sweep: bool,
        /// Caps for the sweep.
        #[arg(long, value_delimiter = ',', requires = "sweep")]
        sweep_caps: Option<Vec<usize>>,
        /// Gap between dispatches during the sweep, in microseconds.
        #[arg(long, requires = "sweep")]
        sweep_pace_us: Option<u64>,
    },
    /// Accept tracker connections and run the engine live until interrupted.
    Serve {
        /// Address to bind, such as 127.0.0.1:7400.
        #[arg(long)]
        listen: Option<String>,
        /// Directory for the log and run outputs.
        #[arg(long)]
        log_dir: Option<PathBuf>,
        #[command(flatten)]
        engine: EngineFlags,
    },
    /// Re-derive every output from an existing event log.
    Replay {
        /// Event log to read.
        #[arg(long)]
        log: PathBuf,
        /// Output directory for archives and reports.
        #[arg(long, short)]
        out: PathBuf,
        #[command(flatten)]
        engine: EngineFlags,
    },
    /// Compare the concurrent engine with the sequential reference on a log.
    OracleCheck {
        /// Event log to read.
        #[arg(long)]
        log: PathBuf,
        #[command(flatten)]
        engine: EngineFlags,
    },
    /// Score a run directory against a ground-truth file.
    Score {
        /// Ground-truth file written by `simulate`.
        #[arg(long)]
        truth: PathBuf,
        /// Run directory holding `archive/` and `anomalies.jsonl`.
        #[arg(long)]
        run: PathBuf,
    },
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn run(cli: Cli) -> Result<u8> {
    let mut cfg = Config::load(cli.config.as_deref())?;
    match cli.command {
        Command::Simulate { seed, profile, out, sweep, sweep_caps, sweep_pace_us } => {
            if let Some(p) = profile {
                if p != cfg.sim.profile {
                    let seed = cfg.sim.seed;
                    cfg.sim = poi_engine::sim::SimConfig { seed, ..poi_engine::sim::SimConfig::for_profile(p) };
                }
            }
            if let Some(s) = seed {
                cfg.sim.seed = s;
            }
            let opts = SimulateOptions {
                sweep: sweep.then(|| sweep_caps.unwrap_or_else(|| DEFAULT_SWEEP.to_vec())),
                sweep_pace: sweep_pace_us.map(Duration::from_micros).unwrap_or(DEFAULT_SWEEP_PACE),
            };
            let summary = harness::simulate(&cfg, &out, &opts)?;
            print_json(&summary.accuracy);
            if let Some(s) = &summary.sweep {
                log::info!("latency trend non-decreasing: {}", s.trend.non_decreasing);
            }
            Ok(0)
        }
        Command::Serve { listen, log_dir, engine } => {
            let listen = listen.unwrap_or_else(|| cfg.serve.listen.clone());
            let dir = log_dir.unwrap_or_else(|| cfg.serve.log_dir.clone());
            let e = engine.engine(&cfg);
            let reorder = Duration::from_millis(cfg.serve.reorder_delay_ms);
            let stop = Arc::new(AtomicBool::new(false));
            {
                let stop = Arc::clone(&stop);
                ctrlc::set_handler(move || stop.store(true, Ordering::SeqCst)).context("install signal handler")?;
            }
            let service = harness::LiveService::start(&listen, &dir, &e, engine.catalog()?, reorder, cfg.serve.fsync)?;
            eprintln!("listening on {}, log {}", service.local_addr(), dir.join(LOG_FILE).display());
            while !stop.load(Ordering::SeqCst) {
                std::thread::sleep(Duration::from_millis(50));
            }
            eprintln!("shutting down");
            let out = service.stop()?;
            print_json(&out.stats);
            Ok(0)
        }
        Command::Replay { log, out, engine } => {
            let run = harness::replay(&log, &engine.engine(&cfg), engine.catalog()?, &out)?;
            print_json(&run.stats);
            Ok(0)
        }
        Command::OracleCheck { log, engine } => {
            let verdict = harness::oracle_check(&log, &engine.engine(&cfg), engine.catalog()?)?;
            println!("{verdict}");
            Ok(if verdict.is_equal() { 0 } else { EXIT_DIVERGED })
        }
        Command::Score { truth, run } => {
            print_json(&harness::score_run(&truth, &run)?);
            Ok(0)
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(h) = cause.downcast_ref::<HarnessError>() {
            return h.exit_code() as u8;
        }
        if cause.downcast_ref::<poi_engine::config::ConfigError>().is_some() {
            return EXIT_CONFIG;
        }
    }
    EXIT_IO
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

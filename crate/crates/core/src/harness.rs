//! The operations behind each CLI subcommand.

use std::collections::BTreeMap;
use std::io::{self, BufRead};
use std::net::{SocketAddr, TcpListener};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::config::{Config, ConfigError};
use crate::eventlog::client::TrackerClient;
use crate::eventlog::server::{IngestServer, ReceiptClock};
use crate::eventlog::{read_all, EventSeq, LogError};
use crate::inference::Catalog;
use crate::metrics::{RunReport, SweepPoint, SweepReport};
use crate::model::{Anomaly, Event, EventKind, EventRecord, HumanId};
use crate::oracle::{self, Equivalence};
use crate::runtime::logic::HumanArchive;
use crate::runtime::output::{write_json_file, AnomalyReport};
use crate::runtime::{run_batch, run_live, sequenced, EngineConfig, LiveError, OutputPaths, RunOutput};
use crate::sim::{generate, inject_noise, score, AccuracyReport, GroundTruth, InvalidConfig, SimConfig};

pub const LOG_FILE: &str = "events.evsq";

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] InvalidConfig),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("{context}: {source}")]
    Io { context: String, source: io::Error },
    #[error("tracker client rejected: {0}")]
    Rejected(String),
}

impl HarnessError {
    /// 1 for configuration problems, 2 for I/O and log failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Sim(_) => 1,
            HarnessError::Log(_) | HarnessError::Io { .. } | HarnessError::Rejected(_) => 2,
        }
    }
}

impl From<LiveError> for HarnessError {
    fn from(e: LiveError) -> Self {
        match e {
            LiveError::Log(e) => HarnessError::Log(e),
            LiveError::Io(e) => HarnessError::Io { context: "live engine".into(), source: e },
        }
    }
}

trait Context<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T, HarnessError>;
}

impl<T> Context<T> for io::Result<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T, HarnessError> {
        self.map_err(|source| HarnessError::Io { context: what(), source })
    }
}

/// Splits a stream over tracker clients by monitored region: client 0 sees
/// the entrance, the next third of the clients watch hands from overhead and
/// the rest each watch a subset of the storages. Every client's share stays
/// in stream order.
pub fn partition(events: &[Event], n_clients: usize) -> Vec<Vec<Event>> {
    let n = n_clients.max(1);
    let mut parts = vec![Vec::new(); n];
    let overhead = if n >= 3 { ((n - 1) / 3).max(1) } else { 0 };
    let per_storage = n - 1 - overhead;
    for e in events {
        let client = match (&e.kind, n) {
            (_, 1) => 0,
            (EventKind::HumanEnter(_) | EventKind::HumanExit(_), _) => 0,
            (EventKind::HandIn(h, _) | EventKind::HandOut(h, _), _) if overhead > 0 => {
                1 + (h.0 as usize % overhead)
            }
            (EventKind::HandIn(..) | EventKind::HandOut(..), _) => 0,
            (_, 2) => 1,
            (_, _) => {
                let s = e.storage().expect("storage event").0 as usize;
                1 + overhead + s % per_storage
            }
        };
        parts[client].push(e.clone());
    }
    parts
}

/// Streams each part over its own TCP connection, one thread per client.
/// With `pace`, a client waits until `time * pace` has passed since the
/// start before sending an event. Returns the number of acknowledged records.
pub fn stream_clients(addr: SocketAddr, parts: Vec<Vec<Event>>, pace: Option<Duration>) -> Result<u64, HarnessError> {
    let start = Instant::now();
    let handles: Vec<_> = parts
        .into_iter()
        .enumerate()
        .map(|(i, part)| {
            std::thread::Builder::new().name(format!("tracker-{i}")).spawn(move || -> Result<u64, HarnessError> {
                if part.is_empty() {
                    return Ok(0);
                }
                let mut client = TrackerClient::connect(addr).context(|| format!("tracker {i} connect"))?;
                let sent = part.len() as u64;
                for e in part {
                    if let Some(p) = pace {
                        let due = start + p * e.time.0 as u32;
                        if let Some(wait) = due.checked_duration_since(Instant::now()) {
                            std::thread::sleep(wait);
                        }
                    }
                    let ack = client.send(&e.encode()).context(|| format!("tracker {i} send"))?;
                    if !ack.is_ok() {
                        return Err(HarnessError::Rejected(ack.message.unwrap_or_default()));
                    }
                }
                Ok(sent)
            })
        })
        .collect::<io::Result<_>>()
        .context(|| "spawn tracker client".into())?;
    let mut total = 0;
    for h in handles {
        total += h.join().expect("tracker thread")?;
    }
    Ok(total)
}

/// Writes `events` into a fresh log through the TCP ingestion path.
pub fn ingest(log_path: &Path, events: &[Event], n_clients: usize, fsync: bool) -> Result<u64, HarnessError> {
    let log = Arc::new(EventSeq::create(log_path, fsync)?);
    let listener = TcpListener::bind("127.0.0.1:0").context(|| "bind ingestion listener".into())?;
    let server = IngestServer::start(listener, Arc::clone(&log), None).context(|| "start ingestion".into())?;
    let sent = stream_clients(server.local_addr(), partition(events, n_clients), None);
    server.shutdown();
    sent
}

#[derive(Debug, Clone, Default)]
pub struct SimulateOptions {
    /// Caps to sweep for the latency study, each with a workload sized to it.
    pub sweep: Option<Vec<usize>>,
    /// Gap between dispatches during the sweep.
    pub sweep_pace: Duration,
}

pub const DEFAULT_SWEEP: [usize; 4] = [50, 100, 150, 200];
pub const DEFAULT_SWEEP_PACE: Duration = Duration::from_micros(500);
/// Allowed relative dip between consecutive sweep points.
pub const TREND_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, Serialize)]
pub struct SimulateSummary {
    pub events: usize,
    pub accuracy: AccuracyReport,
    pub report: RunReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepReport>,
}

fn write_text(path: &Path, text: &str) -> Result<(), HarnessError> {
    std::fs::write(path, text).context(|| format!("write {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    write_json_file(path, value).context(|| format!("write {}", path.display()))
}

fn read_log(path: &Path) -> Result<Vec<EventRecord>, HarnessError> {
    if !path.exists() {
        return Err(HarnessError::Io {
            context: format!("open {}", path.display()),
            source: io::Error::from(io::ErrorKind::NotFound),
        });
    }
    Ok(read_all(path)?)
}

fn engine_anomalies(out: &RunOutput) -> Vec<Anomaly> {
    out.collected.anomalies.iter().map(|r| r.anomaly.clone()).collect()
}

/// Generates a run, streams it through ingestion into `out_dir`, replays the
/// persisted log through the engine and scores the result.
pub fn simulate(cfg: &Config, out_dir: &Path, opts: &SimulateOptions) -> Result<SimulateSummary, HarnessError> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).context(|| format!("create {}", out_dir.display()))?;
    let sim = &cfg.sim;
    let g = generate(sim)?;
    let events = inject_noise(&g.stream, sim);
    write_json(&out_dir.join("truth.json"), &g.truth)?;
    write_json(&out_dir.join("catalog.json"), &g.catalog)?;
    write_text(&out_dir.join("config.toml"), &toml::to_string(cfg).expect("config serializes"))?;

    let log_path = out_dir.join(LOG_FILE);
    ingest(&log_path, &events, sim.n_video_trackers, cfg.serve.fsync)?;
    let engine = cfg.sim_engine();
    let catalog = Arc::new(g.catalog);
    let out = run_batch(sequenced(read_log(&log_path)?), &engine, Arc::clone(&catalog), &OutputPaths::in_dir(out_dir))
        .context(|| "engine run".into())?;

    let accuracy = score(&g.truth, &out.collected.humans, &engine_anomalies(&out));
    write_json(&out_dir.join("accuracy.json"), &accuracy)?;
    write_text(&out_dir.join("accuracy.csv"), &format!("{}\n{}\n", AccuracyReport::CSV_HEADER, accuracy.csv_row()))?;
    let report = RunReport::new(&out, engine.max_level_concurrency, Some(accuracy.clone()));
    report.write(out_dir, &out.trace).context(|| "write metrics".into())?;

    let sweep = match &opts.sweep {
        Some(caps) => {
            let s = latency_sweep(sim, &engine, caps, opts.sweep_pace)?;
            s.write(out_dir).context(|| "write sweep".into())?;
            Some(s)
        }
        None => None,
    };
    Ok(SimulateSummary { events: events.len(), accuracy, report, sweep })
}

/// Runs one paced engine pass per cap. Each pass uses a workload generated
/// with that cap so the live worker count actually reaches it.
pub fn latency_sweep(
    sim: &SimConfig,
    engine: &EngineConfig,
    caps: &[usize],
    pace: Duration,
) -> Result<SweepReport, HarnessError> {
    let mut points = Vec::new();
    for &cap in caps {
        let mut s = sim.clone();
        s.max_level_concurrency = cap;
        s.validate()?;
        let g = generate(&s)?;
        let events = inject_noise(&g.stream, &s);
        let e = EngineConfig { max_level_concurrency: cap, dispatch_interval: Some(pace), ..engine.clone() };
        let out = run_batch(sequenced(events.iter().map(Event::encode)), &e, Arc::new(g.catalog), &OutputPaths::default())
            .context(|| format!("sweep run at cap {cap}"))?;
        points.push(SweepPoint::new(&out, cap));
    }
    Ok(SweepReport::new(points, TREND_TOLERANCE))
}

/// Re-derives every output from a persisted log into `out_dir`.
pub fn replay(
    log_path: &Path,
    engine: &EngineConfig,
    catalog: Arc<Catalog>,
    out_dir: &Path,
) -> Result<RunOutput, HarnessError> {
    let records = read_log(log_path)?;
    std::fs::create_dir_all(out_dir).context(|| format!("create {}", out_dir.display()))?;
    let out = run_batch(sequenced(records), engine, catalog, &OutputPaths::in_dir(out_dir)).context(|| "engine run".into())?;
    RunReport::new(&out, engine.max_level_concurrency, None)
        .write(out_dir, &out.trace)
        .context(|| "write metrics".into())?;
    Ok(out)
}

/// Runs the engine and the sequential oracle over a log and compares them.
pub fn oracle_check(log_path: &Path, engine: &EngineConfig, catalog: Arc<Catalog>) -> Result<Equivalence, HarnessError> {
    let records = read_log(log_path)?;
    let (verdict, _, _) = oracle::check(records, engine, catalog).context(|| "engine run".into())?;
    Ok(verdict)
}

/// Scores a finished run directory against a ground-truth file.
pub fn score_run(truth_path: &Path, run_dir: &Path) -> Result<AccuracyReport, HarnessError> {
    let text = std::fs::read_to_string(truth_path).context(|| format!("read {}", truth_path.display()))?;
    let truth: GroundTruth = serde_json::from_str(&text)
        .map_err(io::Error::other)
        .context(|| format!("parse {}", truth_path.display()))?;
    let archive_dir = run_dir.join("archive");
    let mut humans: BTreeMap<HumanId, HumanArchive> = BTreeMap::new();
    let entries = std::fs::read_dir(&archive_dir).context(|| format!("read {}", archive_dir.display()))?;
    for entry in entries {
        let path = entry.context(|| format!("read {}", archive_dir.display()))?.path();
        let is_human = path.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("H_") && n.ends_with(".json"));
        if !is_human {
            continue;
        }
        let text = std::fs::read_to_string(&path).context(|| format!("read {}", path.display()))?;
        let a: HumanArchive =
            serde_json::from_str(&text).map_err(io::Error::other).context(|| format!("parse {}", path.display()))?;
        humans.insert(a.entity.id, a);
    }
    let stream_path = run_dir.join("anomalies.jsonl");
    let mut anomalies = Vec::new();
    if stream_path.exists() {
        let file = std::fs::File::open(&stream_path).context(|| format!("open {}", stream_path.display()))?;
        for line in io::BufReader::new(file).lines() {
            let line = line.context(|| format!("read {}", stream_path.display()))?;
            if line.trim().is_empty() {
                continue;
            }
            let r: AnomalyReport = serde_json::from_str(&line)
                .map_err(io::Error::other)
                .context(|| format!("parse {}", stream_path.display()))?;
            anomalies.push(r.anomaly);
        }
    }
    Ok(score(&truth, &humans, &anomalies))
}

/// A running ingestion server feeding a live engine.
pub struct LiveService {
    addr: SocketAddr,
    server: IngestServer,
    engine_stop: Arc<AtomicBool>,
    engine: std::thread::JoinHandle<Result<RunOutput, LiveError>>,
    cap: usize,
    out_dir: PathBuf,
}

impl LiveService {
    /// Binds `listen`, opens the log in `out_dir` and starts the engine.
    pub fn start(
        listen: &str,
        out_dir: &Path,
        engine: &EngineConfig,
        catalog: Arc<Catalog>,
        reorder_delay: Duration,
        fsync: bool,
    ) -> Result<Self, HarnessError> {
        std::fs::create_dir_all(out_dir).context(|| format!("create {}", out_dir.display()))?;
        let listener = TcpListener::bind(listen).context(|| format!("bind {listen}"))?;
        let log_path = out_dir.join(LOG_FILE);
        let log = Arc::new(EventSeq::open_with_recovery(&log_path, fsync)?);
        let receipts: ReceiptClock = Arc::new(Mutex::new(Default::default()));
        let server =
            IngestServer::start(listener, Arc::clone(&log), Some(Arc::clone(&receipts))).context(|| "start ingestion".into())?;
        let engine_stop = Arc::new(AtomicBool::new(false));
        let handle = {
            let (stop, cfg, outputs) = (Arc::clone(&engine_stop), engine.clone(), OutputPaths::in_dir(out_dir));
            std::thread::Builder::new()
                .name("live-engine".into())
                .spawn(move || run_live(&log_path, Some(receipts), reorder_delay, stop, &cfg, catalog, &outputs))
                .context(|| "spawn engine".into())?
        };
        Ok(Self {
            addr: server.local_addr(),
            server,
            engine_stop,
            engine: handle,
            cap: engine.max_level_concurrency,
            out_dir: out_dir.to_owned(),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops ingestion, lets the engine dispatch everything already in the
    /// log, waits for the archives and writes the metrics report.
    pub fn stop(self) -> Result<RunOutput, HarnessError> {
        self.server.shutdown();
        self.engine_stop.store(true, Ordering::SeqCst);
        let out = self.engine.join().expect("engine thread")?;
        RunReport::new(&out, self.cap, None).write(&self.out_dir, &out.trace).context(|| "write metrics".into())?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{HumanId, StorageId};

    fn kinds() -> Vec<Event> {
        vec![
            Event::new(1, EventKind::HumanEnter(HumanId(1))),
            Event::new(2, EventKind::StorageInstantiate(StorageId(1), HumanId(1))),
            Event::new(3, EventKind::HandIn(HumanId(1), StorageId(1))),
            Event::new(4, EventKind::StorageUpdate(StorageId(1), Default::default())),
            Event::new(5, EventKind::StorageUpdate(StorageId(2), Default::default())),
        ]
    }

    #[test]
    fn partition_keeps_every_event_once_in_order() {
        for n in 1..8 {
            let parts = partition(&kinds(), n);
            assert_eq!(parts.len(), n);
            let mut all: Vec<Event> = parts.iter().flatten().cloned().collect();
            assert!(parts.iter().all(|p| p.windows(2).all(|w| w[0].time < w[1].time)));
            all.sort_by_key(|e| e.time);
            assert_eq!(all, kinds());
        }
    }

    #[test]
    fn partition_by_region() {
        let parts = partition(&kinds(), 4);
        assert_eq!(parts[0].len(), 1);
        assert_eq!(parts[1][0].kind, EventKind::HandIn(HumanId(1), StorageId(1)));
        assert_eq!(parts[2].len() + parts[3].len(), 3);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(HarnessError::Sim(InvalidConfig("x".into())).exit_code(), 1);
        assert_eq!(HarnessError::Log(LogError::Truncated { offset: 9 }).exit_code(), 2);
    }
}

//! The concurrent engine: admission, dispatch, worker pools and the output
//! collector, assembled for batch replay and for live tailing of a log.

pub mod admission;
pub mod comm;
pub mod dispatcher;
pub mod logic;
pub mod output;
pub mod reorder;
pub mod worker;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::eventlog::server::ReceiptClock;
use crate::eventlog::{LogError, Tailer};
use crate::inference::{profile, Catalog, ProfileKind};
use crate::model::{EntityKind, EventRecord};
use comm::Directory;
use dispatcher::{ConcurrencyPoint, DeadLetter, Dispatcher};
use output::{Collected, Collector};
use reorder::{sort_batch, LiveReorder, Sequenced};
use worker::{Pool, WorkerConfig, WorkerCtx};

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub max_level_concurrency: usize,
    pub noise_filter_window: usize,
    pub gptwc_timeout: Duration,
    pub profile: ProfileKind,
    /// Live-mode bound on how long a storage holds an after-content request.
    pub after_wait: Option<Duration>,
    /// Optional sleep before each dispatch, to spread a batch over time.
    pub dispatch_interval: Option<Duration>,
    /// Upper bound on the end-of-stream drain.
    pub watchdog: Duration,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            max_level_concurrency: 200,
            noise_filter_window: 5,
            gptwc_timeout: Duration::from_millis(5000),
            profile: ProfileKind::Airport,
            after_wait: None,
            dispatch_interval: None,
            watchdog: Duration::from_secs(120),
        }
    }
}

/// Where a run writes its files. Every field is optional so tests can run
/// fully in memory.
#[derive(Debug, Clone, Default)]
pub struct OutputPaths {
    pub archive_dir: Option<PathBuf>,
    pub anomaly_stream: Option<PathBuf>,
    pub dead_letters: Option<PathBuf>,
}

impl OutputPaths {
    /// The standard layout under one run directory.
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            archive_dir: Some(dir.join("archive")),
            anomaly_stream: Some(dir.join("anomalies.jsonl")),
            dead_letters: Some(dir.join("dead_letters.jsonl")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStats {
    pub records: u64,
    pub dispatched: u64,
    pub dead_letters: u64,
    pub peak_live: usize,
    pub human_workers: usize,
    pub storage_workers: usize,
    pub peak_busy_humans: usize,
    pub peak_busy_storages: usize,
    pub requests: u64,
    pub pairing_violations: u64,
    pub broadcast_messages: u64,
    pub late_records: u64,
    /// False when the watchdog expired before every worker archived.
    pub drained: bool,
}

#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub collected: Collected,
    pub dead_letters: Vec<DeadLetter>,
    pub trace: Vec<ConcurrencyPoint>,
    pub stats: RunStats,
}

/// A started engine accepting records in dispatch order.
pub struct Engine {
    collector: Collector,
    dispatcher: Dispatcher,
    humans: Arc<Pool>,
    storages: Arc<Pool>,
    directory: Arc<Directory>,
    watchdog: Duration,
    records: u64,
}

impl Engine {
    pub fn start(cfg: &EngineConfig, catalog: Arc<Catalog>, outputs: &OutputPaths) -> std::io::Result<Self> {
        let collector = Collector::start(outputs.archive_dir.clone(), outputs.anomaly_stream.clone())?;
        let dead_sink = match &outputs.dead_letters {
            Some(p) => Some(std::fs::File::create(p)?),
            None => None,
        };
        let directory = Arc::new(Directory::default());
        let ctx = Arc::new(WorkerCtx {
            cfg: WorkerConfig {
                window: cfg.noise_filter_window,
                gptwc_timeout: cfg.gptwc_timeout,
                after_wait: cfg.after_wait,
            },
            directory: Arc::clone(&directory),
            out: collector.sender(),
            profile: profile(cfg.profile, Arc::clone(&catalog)),
            catalog,
        });
        let humans = Pool::new(EntityKind::Human, Arc::clone(&ctx));
        let storages = Pool::new(EntityKind::Storage, ctx);
        let dispatcher = Dispatcher::new(
            cfg.max_level_concurrency,
            Arc::clone(&humans),
            Arc::clone(&storages),
            Arc::clone(&directory),
            cfg.dispatch_interval,
            dead_sink,
        );
        Ok(Self { collector, dispatcher, humans, storages, directory, watchdog: cfg.watchdog, records: 0 })
    }

    pub fn feed(&mut self, item: Sequenced) {
        self.records += 1;
        self.dispatcher.feed(item);
    }

    pub fn dispatched(&self) -> u64 {
        self.dispatcher.admission().dispatched()
    }

    /// Ends the stream, waits for every worker to archive and gathers the
    /// outputs. Worker threads are only joined after a complete drain.
    pub fn finish(mut self) -> std::io::Result<RunOutput> {
        let drained = self.dispatcher.finish(&self.collector, self.watchdog);
        if drained {
            self.humans.shutdown();
            self.storages.shutdown();
        } else {
            log::error!("watchdog expired before every worker archived");
        }
        let collected = self.collector.finish()?;
        let d = &self.dispatcher;
        let stats = RunStats {
            records: self.records,
            dispatched: d.admission().dispatched(),
            dead_letters: d.dead.len() as u64,
            peak_live: d.admission().peak_live(),
            human_workers: self.humans.spawned(),
            storage_workers: self.storages.spawned(),
            peak_busy_humans: self.humans.peak_busy(),
            peak_busy_storages: self.storages.peak_busy(),
            requests: self.directory.requests(),
            pairing_violations: self.directory.pairing_violations(),
            broadcast_messages: d.broadcast_messages,
            late_records: 0,
            drained,
        };
        Ok(RunOutput {
            collected,
            dead_letters: std::mem::take(&mut self.dispatcher.dead),
            trace: std::mem::take(&mut self.dispatcher.trace),
            stats,
        })
    }
}

/// Tags plain records with their positions.
pub fn sequenced(records: impl IntoIterator<Item = EventRecord>) -> Vec<Sequenced> {
    records.into_iter().enumerate().map(|(i, record)| Sequenced { seq: i as u64, record, received: None }).collect()
}

/// Runs a finite record set through the engine in temporal order.
pub fn run_batch(
    mut records: Vec<Sequenced>,
    cfg: &EngineConfig,
    catalog: Arc<Catalog>,
    outputs: &OutputPaths,
) -> std::io::Result<RunOutput> {
    sort_batch(&mut records);
    let mut engine = Engine::start(cfg, catalog, outputs)?;
    for r in records {
        engine.feed(r);
    }
    engine.finish()
}

#[derive(Debug, thiserror::Error)]
pub enum LiveError {
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Tails a log that is being appended to, holding records briefly to repair
/// cross-client interleaving, until `stop` is raised. Everything appended
/// before `stop` is observed gets dispatched.
pub fn run_live(
    log_path: &Path,
    receipts: Option<ReceiptClock>,
    reorder_delay: Duration,
    stop: Arc<AtomicBool>,
    cfg: &EngineConfig,
    catalog: Arc<Catalog>,
    outputs: &OutputPaths,
) -> Result<RunOutput, LiveError> {
    let mut tailer = Tailer::open(log_path)?;
    let mut engine = Engine::start(cfg, catalog, outputs)?;
    let mut reorder = LiveReorder::new(reorder_delay);
    let take_receipt = |seq: u64| {
        receipts.as_ref().and_then(|r| r.lock().expect("receipt lock").remove(&seq))
    };
    loop {
        let stopping = stop.load(Ordering::SeqCst);
        let mut got = false;
        while let Some((seq, record)) = tailer.next_record()? {
            got = true;
            reorder.push(Sequenced { seq: seq.0, record, received: take_receipt(seq.0) });
        }
        if stopping {
            break;
        }
        for item in reorder.pop_ready(Instant::now()) {
            engine.feed(item);
        }
        if !got {
            std::thread::sleep(Duration::from_millis(1));
        }
    }
    for item in reorder.drain() {
        engine.feed(item);
    }
    let late = reorder.late_count();
    let mut out = engine.finish()?;
    out.stats.late_records = late;
    Ok(out)
}

//! Single-consumer collector for everything workers emit: archives, anomaly
//! reports and latency samples.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use crossbeam_channel::{Receiver, Sender};
use serde::{Deserialize, Serialize};

use super::logic::{HumanArchive, StorageArchive};
use crate::model::{Anomaly, EventType, HumanId, StorageId};

/// An anomaly as written to the anomaly stream. `owner` is the best-effort
/// true owner of the object, or `unknown`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnomalyReport {
    #[serde(flatten)]
    pub anomaly: Anomaly,
    pub owner: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencySample {
    pub event_type: EventType,
    pub index: u64,
    pub latency_us: u64,
}

#[derive(Debug)]
pub enum OutputMsg {
    Human(Box<HumanArchive>),
    Storage(Box<StorageArchive>),
    Anomaly(AnomalyReport),
    Latency(LatencySample),
    /// Ends collection even if some workers still hold a sender.
    Close,
}

#[derive(Debug, Default, Clone)]
pub struct Collected {
    pub humans: BTreeMap<HumanId, HumanArchive>,
    pub storages: BTreeMap<StorageId, StorageArchive>,
    pub anomalies: Vec<AnomalyReport>,
    pub latency: Vec<LatencySample>,
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct Progress {
    pub humans: usize,
    pub storages: usize,
    pub samples: usize,
}

#[derive(Default)]
struct Shared {
    progress: Mutex<Progress>,
    cv: Condvar,
}

pub struct Collector {
    tx: Sender<OutputMsg>,
    shared: Arc<Shared>,
    handle: JoinHandle<std::io::Result<Collected>>,
}

pub fn write_json_file<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    text.push('\n');
    std::fs::write(path, text)
}

impl Collector {
    pub fn start(archive_dir: Option<PathBuf>, anomaly_stream: Option<PathBuf>) -> std::io::Result<Self> {
        if let Some(dir) = &archive_dir {
            std::fs::create_dir_all(dir)?;
        }
        let stream = match &anomaly_stream {
            Some(p) => Some(BufWriter::new(File::create(p)?)),
            None => None,
        };
        let (tx, rx) = crossbeam_channel::unbounded();
        let shared = Arc::new(Shared::default());
        let s = Arc::clone(&shared);
        let handle = std::thread::Builder::new()
            .name("collector".into())
            .spawn(move || collect(rx, s, archive_dir, stream))?;
        Ok(Self { tx, shared, handle })
    }

    pub fn sender(&self) -> Sender<OutputMsg> {
        self.tx.clone()
    }

    pub fn progress(&self) -> Progress {
        *self.shared.progress.lock().expect("progress lock")
    }

    /// Blocks until `done` holds for the progress counters or `timeout` passes.
    pub fn wait_until(&self, timeout: Duration, done: impl Fn(&Progress) -> bool) -> bool {
        let guard = self.shared.progress.lock().expect("progress lock");
        let (guard, _) = self.shared.cv.wait_timeout_while(guard, timeout, |p| !done(p)).expect("progress lock");
        done(&guard)
    }

    pub fn finish(self) -> std::io::Result<Collected> {
        let _ = self.tx.send(OutputMsg::Close);
        self.handle.join().expect("collector thread")
    }
}

fn collect(
    rx: Receiver<OutputMsg>,
    shared: Arc<Shared>,
    archive_dir: Option<PathBuf>,
    mut stream: Option<BufWriter<File>>,
) -> std::io::Result<Collected> {
    let mut out = Collected::default();
    for msg in rx {
        let mut progress = Progress::default();
        match msg {
            OutputMsg::Human(a) => {
                if let Some(dir) = &archive_dir {
                    write_json_file(&dir.join(format!("{}.json", a.entity.id)), &a)?;
                }
                out.humans.insert(a.entity.id, *a);
                progress.humans = 1;
            }
            OutputMsg::Storage(a) => {
                if let Some(dir) = &archive_dir {
                    write_json_file(&dir.join(format!("{}.json", a.entity.id)), &a)?;
                }
                out.storages.insert(a.entity.id, *a);
                progress.storages = 1;
            }
            OutputMsg::Anomaly(r) => {
                if let Some(w) = stream.as_mut() {
                    serde_json::to_writer(&mut *w, &r).map_err(std::io::Error::other)?;
                    w.write_all(b"\n")?;
                    w.flush()?;
                }
                out.anomalies.push(r);
            }
            OutputMsg::Latency(s) => {
                out.latency.push(s);
                progress.samples = 1;
            }
            OutputMsg::Close => break,
        }
        let mut p = shared.progress.lock().expect("progress lock");
        p.humans += progress.humans;
        p.storages += progress.storages;
        p.samples += progress.samples;
        shared.cv.notify_all();
    }
    out.anomalies.sort_by(|a, b| a.anomaly.cmp(&b.anomaly));
    out.latency = merge_samples(std::mem::take(&mut out.latency));
    Ok(out)
}

/// One sample per event: the last participant to finish closes it.
fn merge_samples(mut samples: Vec<LatencySample>) -> Vec<LatencySample> {
    samples.sort_by_key(|s| (s.index, std::cmp::Reverse(s.latency_us)));
    samples.dedup_by_key(|s| s.index);
    samples
}

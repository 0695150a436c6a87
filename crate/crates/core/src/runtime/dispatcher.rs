//! The master dispatcher: decodes records, runs admission, binds workers
//! and broadcasts every admitted record to every live worker.

use std::io::Write;
use std::sync::Arc;
use std::time::{Duration, Instant};

use crossbeam_channel::Sender;
use serde::{Deserialize, Serialize};

use super::admission::{binding, release, Admission, Verdict};
use super::comm::{Directory, WorkerMsg};
use super::output::Collector;
use super::reorder::Sequenced;
use super::worker::Pool;
use crate::model::{EntityId, EntityKind, Event, EventRecord};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeadLetter {
    pub seq: Option<u64>,
    pub record: EventRecord,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConcurrencyPoint {
    pub index: u64,
    pub time: u64,
    /// Entities bound to workers after this record.
    pub live: usize,
}

pub struct Dispatcher {
    admission: Admission,
    /// Broadcast list in binding order.
    live: Vec<(EntityId, Sender<WorkerMsg>)>,
    humans: Arc<Pool>,
    storages: Arc<Pool>,
    directory: Arc<Directory>,
    pacing: Option<Duration>,
    pub(super) dead: Vec<DeadLetter>,
    dead_sink: Option<std::io::BufWriter<std::fs::File>>,
    pub(super) trace: Vec<ConcurrencyPoint>,
    pub(super) bound_humans: usize,
    pub(super) bound_storages: usize,
    pub(super) broadcast_messages: u64,
}

impl Dispatcher {
    pub fn new(
        cap: usize,
        humans: Arc<Pool>,
        storages: Arc<Pool>,
        directory: Arc<Directory>,
        pacing: Option<Duration>,
        dead_sink: Option<std::fs::File>,
    ) -> Self {
        Self {
            admission: Admission::new(cap),
            live: Vec::new(),
            humans,
            storages,
            directory,
            pacing,
            dead: Vec::new(),
            dead_sink: dead_sink.map(std::io::BufWriter::new),
            trace: Vec::new(),
            bound_humans: 0,
            bound_storages: 0,
            broadcast_messages: 0,
        }
    }

    pub fn admission(&self) -> &Admission {
        &self.admission
    }

    fn dead_letter(&mut self, seq: Option<u64>, record: EventRecord, reason: String) {
        log::warn!("dead letter (seq {seq:?}): {reason}: {}", record.to_json());
        let letter = DeadLetter { seq, record, reason };
        if let Some(w) = self.dead_sink.as_mut() {
            let line = serde_json::to_string(&letter).expect("dead letter serializes");
            if writeln!(w, "{line}").and_then(|_| w.flush()).is_err() {
                log::error!("failed to write dead-letter file");
            }
        }
        self.dead.push(letter);
    }

    pub fn feed(&mut self, item: Sequenced) {
        let event = match Event::decode(&item.record) {
            Ok(e) => e,
            Err(e) => {
                self.dead_letter(Some(item.seq), item.record, format!("MalformedRecord: {e}"));
                return;
            }
        };
        for verdict in self.admission.offer(event, Some(item.seq)) {
            self.apply(verdict, item.received);
        }
    }

    fn apply(&mut self, verdict: Verdict, received: Option<Instant>) {
        match verdict {
            Verdict::Reject { event, seq, reason } => self.dead_letter(seq, event.encode(), format!("{reason:?}")),
            Verdict::Dispatch { index, event, live, .. } => {
                if let Some(p) = self.pacing {
                    std::thread::sleep(p);
                }
                // Live records carry their ingestion receipt instant; batch
                // records start the clock here.
                let released = received.unwrap_or_else(Instant::now);
                self.dispatch(index, event, released, live);
            }
        }
    }

    fn dispatch(&mut self, index: u64, event: Event, released: Instant, live: usize) {
        let event = Arc::new(event);
        for (_, tx) in &self.live {
            let _ = tx.send(WorkerMsg::Record { index, event: Arc::clone(&event), released });
        }
        self.broadcast_messages += self.live.len() as u64;
        if let Some(id) = binding(&event) {
            let tx = match id.kind {
                EntityKind::Human => {
                    self.bound_humans += 1;
                    self.humans.acquire()
                }
                EntityKind::Storage => {
                    self.bound_storages += 1;
                    let tx = self.storages.acquire();
                    self.directory.insert(id.as_storage().expect("storage id"), tx.clone());
                    tx
                }
                EntityKind::ObjectBlob => unreachable!("objects are never bound"),
            };
            let _ = tx.send(WorkerMsg::Bind { index, event: Arc::clone(&event), released });
            self.live.push((id, tx));
        }
        if let Some(id) = release(&event) {
            self.live.retain(|(e, _)| *e != id);
        }
        self.trace.push(ConcurrencyPoint { index, time: event.time.0, live });
    }

    /// Ends the stream and waits for every worker to archive.
    pub(super) fn finish(&mut self, collector: &Collector, watchdog: Duration) -> bool {
        for verdict in self.admission.finish() {
            self.apply(verdict, None);
        }
        for (_, tx) in &self.live {
            let _ = tx.send(WorkerMsg::EndOfStream);
        }
        let humans = self.bound_humans;
        let deadline = Instant::now() + watchdog;
        let mut ok = collector.wait_until(watchdog, |p| p.humans >= humans);
        for (id, tx) in &self.live {
            if id.kind == EntityKind::Storage {
                let _ = tx.send(WorkerMsg::Finalize);
            }
        }
        let storages = self.bound_storages;
        let left = deadline.saturating_duration_since(Instant::now());
        ok &= collector.wait_until(left, |p| p.storages >= storages);
        self.live.clear();
        ok
    }
}

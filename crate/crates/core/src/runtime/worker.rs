//! Worker threads. A worker sits idle in its group's pool until a binding
//! record arrives, hosts that one entity until it retires, then returns to
//! the pool.
//!
//! Human workers block on storage requests; storage workers never block and
//! park requests whose data has not arrived yet. Requests only ever flow
//! from humans to storages.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_channel::{Receiver, RecvTimeoutError, Sender};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::comm::{status, Communicator, Directory, Mode, TwcInp, TwcOut, TwcRequest, WorkerMsg};
use super::logic::{AfterState, HumanCore, StorageCore};
use super::output::{AnomalyReport, LatencySample, OutputMsg};
use crate::inference::{Catalog, InferenceOutcome, Profile};
use crate::model::{ContentSnapshot, EntityId, EntityKind, Event, EventKind, HumanId, ObjectId, StorageId, Timestamp};

pub const FETCH_BEFORE: &str = "fetch_content_before";
pub const FETCH_AFTER: &str = "fetch_content_after";
pub const REGISTER_OWNER: &str = "register_owner";
pub const FETCH_OWNER: &str = "fetch_owner";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContentQuery {
    pub storage: StorageId,
    pub human: HumanId,
    pub time: Timestamp,
    pub window: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AfterReply {
    pub content: ContentSnapshot,
    /// The storage's declared stock.
    pub owns: BTreeSet<ObjectId>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OwnerRegistration {
    pub human: HumanId,
    pub objects: Vec<ObjectId>,
}

#[derive(Debug, Clone)]
pub struct WorkerConfig {
    pub window: usize,
    pub gptwc_timeout: Duration,
    /// How long a storage holds an after-content request before answering
    /// with what it has. `None` waits for the window, a return or the end of
    /// the stream, which keeps batch runs deterministic.
    pub after_wait: Option<Duration>,
}

pub struct WorkerCtx {
    pub cfg: WorkerConfig,
    pub directory: Arc<Directory>,
    pub out: Sender<OutputMsg>,
    pub profile: Arc<dyn Profile>,
    pub catalog: Arc<Catalog>,
}

/// The entity whose handler completion closes an event's latency sample.
pub fn reporter(event: &Event) -> EntityId {
    match event.kind {
        EventKind::HumanEnter(h) | EventKind::HumanExit(h) | EventKind::HandIn(h, _) | EventKind::HandOut(h, _) => {
            h.entity()
        }
        EventKind::StorageInstantiate(s, _) | EventKind::StorageReturn(s, _) | EventKind::StorageUpdate(s, _) => {
            s.entity()
        }
    }
}

/// Whether a worker of `kind` takes part in the group collective for `event`.
/// Lifecycle events change group membership, so they complete only once
/// every live member of the affected group has applied them.
fn in_collective(event: &Event, kind: EntityKind) -> bool {
    match event.kind {
        EventKind::HumanEnter(_) | EventKind::HumanExit(_) => kind == EntityKind::Human,
        EventKind::StorageInstantiate(..) | EventKind::StorageReturn(..) => kind == EntityKind::Storage,
        _ => false,
    }
}

/// A group of recyclable workers for one entity kind.
pub struct Pool {
    kind: EntityKind,
    ctx: Arc<WorkerCtx>,
    idle: Mutex<Vec<Sender<WorkerMsg>>>,
    threads: Mutex<Vec<JoinHandle<()>>>,
    busy: AtomicUsize,
    peak_busy: AtomicUsize,
}

impl Pool {
    pub fn new(kind: EntityKind, ctx: Arc<WorkerCtx>) -> Arc<Self> {
        Arc::new(Self {
            kind,
            ctx,
            idle: Mutex::new(Vec::new()),
            threads: Mutex::new(Vec::new()),
            busy: AtomicUsize::new(0),
            peak_busy: AtomicUsize::new(0),
        })
    }

    pub fn spawned(&self) -> usize {
        self.threads.lock().expect("pool lock").len()
    }

    pub fn peak_busy(&self) -> usize {
        self.peak_busy.load(Ordering::Relaxed)
    }

    /// An idle worker's mailbox, spawning a new worker if none is idle.
    pub fn acquire(self: &Arc<Self>) -> Sender<WorkerMsg> {
        let busy = self.busy.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak_busy.fetch_max(busy, Ordering::Relaxed);
        if let Some(tx) = self.idle.lock().expect("pool lock").pop() {
            return tx;
        }
        let (tx, rx) = crossbeam_channel::unbounded();
        let me = Arc::clone(self);
        let own = tx.clone();
        let n = self.spawned();
        let handle = std::thread::Builder::new()
            .name(format!("{}-worker-{n}", self.kind.tag()))
            .spawn(move || me.worker_main(rx, own))
            .expect("spawn worker thread");
        self.threads.lock().expect("pool lock").push(handle);
        tx
    }

    fn give_back(&self, tx: Sender<WorkerMsg>) {
        self.busy.fetch_sub(1, Ordering::SeqCst);
        self.idle.lock().expect("pool lock").push(tx);
    }

    /// Stops every idle worker and joins all threads. Call once every bound
    /// entity has archived.
    pub fn shutdown(&self) {
        for tx in self.idle.lock().expect("pool lock").drain(..) {
            let _ = tx.send(WorkerMsg::Shutdown);
        }
        for h in self.threads.lock().expect("pool lock").drain(..) {
            let _ = h.join();
        }
    }

    fn worker_main(self: Arc<Self>, rx: Receiver<WorkerMsg>, own: Sender<WorkerMsg>) {
        loop {
            match rx.recv() {
                Ok(WorkerMsg::Bind { index, event, released }) => {
                    match self.kind {
                        EntityKind::Human => host_human(&self.ctx, &rx, index, &event, released),
                        EntityKind::Storage => host_storage(&self.ctx, &rx, index, &event, released),
                        EntityKind::ObjectBlob => unreachable!("object blobs have no workers"),
                    }
                    self.give_back(own.clone());
                }
                Ok(WorkerMsg::Request(req)) => req.respond(TwcOut::fail(status::UNKNOWN_TARGET)),
                Ok(WorkerMsg::Shutdown) | Err(_) => return,
                Ok(_) => {}
            }
        }
    }
}

fn sample(ctx: &WorkerCtx, event: &Event, index: u64, released: Instant) {
    let latency_us = released.elapsed().as_micros() as u64;
    let _ = ctx.out.send(OutputMsg::Latency(LatencySample { event_type: event.event_type(), index, latency_us }));
}

fn decode<T: for<'de> Deserialize<'de>>(out: &TwcOut) -> Option<T> {
    if !out.is_ok() {
        return None;
    }
    serde_json::from_value(out.d_output.clone()).ok()
}

fn host_human(ctx: &WorkerCtx, rx: &Receiver<WorkerMsg>, bound_at: u64, bind: &Event, released: Instant) {
    let EventKind::HumanEnter(me) = bind.kind else {
        log::error!("human worker bound by {bind:?}");
        return;
    };
    let mut core = HumanCore::new(me, bind.time, bound_at, Arc::clone(&ctx.profile));
    core.observe(bind);
    sample(ctx, bind, bound_at, released);

    let gptwc = |oper: &str, target: StorageId, as_of: u64, d_input: Value, mode: Mode| {
        ctx.directory.gptwc(
            Communicator::Inter,
            oper,
            me.entity(),
            target.entity(),
            as_of,
            TwcInp { d_input, mode },
            ctx.cfg.gptwc_timeout,
        )
    };
    let emit = |core: &HumanCore, outcome: &InferenceOutcome, as_of: u64| {
        for a in &outcome.anomalies {
            let owner = if core.hum.ownership.owns(a.object) {
                me.to_string()
            } else {
                let out = gptwc(FETCH_OWNER, a.storage, as_of, json!(a.object), Mode::Fetch);
                decode::<HumanId>(&out).map_or_else(|| "unknown".to_string(), |h| h.to_string())
            };
            let _ = ctx.out.send(OutputMsg::Anomaly(AnomalyReport { anomaly: a.clone(), owner }));
        }
    };

    loop {
        let Ok(msg) = rx.recv() else { return };
        match msg {
            WorkerMsg::Record { index, event, released } => {
                core.observe(&event);
                match event.kind {
                    EventKind::HandIn(h, s) if h == me => {
                        let q = ContentQuery { storage: s, human: me, time: event.time, window: ctx.cfg.window };
                        let out = gptwc(FETCH_BEFORE, s, index, json!(q), Mode::Fetch);
                        core.on_hand_in(s, decode::<ContentSnapshot>(&out));
                    }
                    EventKind::HandOut(h, s) if h == me => {
                        let q = ContentQuery { storage: s, human: me, time: event.time, window: ctx.cfg.window };
                        let out = gptwc(FETCH_AFTER, s, index, json!(q), Mode::FetchThenCompute);
                        let after = decode::<AfterReply>(&out).map(|r| (r.content, r.owns));
                        let effects = core.on_hand_out(s, event.time, after);
                        emit(&core, &effects.inference, index);
                        let reg = OwnerRegistration { human: me, objects: effects.inference.newly_owned.clone() };
                        let out = gptwc(REGISTER_OWNER, s, index, json!(reg), Mode::Compute);
                        if !out.is_ok() {
                            log::warn!("{me}: owner registration at {s} failed with status {}", out.status);
                        }
                    }
                    EventKind::HumanExit(h) if h == me => {
                        let outcome = core.on_exit(event.time);
                        emit(&core, &outcome, index);
                        let _ = ctx.out.send(OutputMsg::Human(Box::new(core.archive())));
                        sample(ctx, &event, index, released);
                        return;
                    }
                    _ => {}
                }
                if reporter(&event) == me.entity() || in_collective(&event, EntityKind::Human) {
                    sample(ctx, &event, index, released);
                }
            }
            WorkerMsg::Request(req) => req.respond(TwcOut::fail(status::INVALID_PAIRING)),
            WorkerMsg::EndOfStream => {
                let _ = ctx.out.send(OutputMsg::Human(Box::new(core.archive())));
                return;
            }
            other => log::error!("{me}: unexpected {other:?}"),
        }
    }
}

struct Parked {
    req: TwcRequest,
    query: ContentQuery,
    deadline: Option<Instant>,
}

struct StorageHost<'a> {
    ctx: &'a WorkerCtx,
    core: StorageCore,
    /// Requests announced by dispatched hand events but not yet received.
    expected: i64,
    parked: Vec<Parked>,
}

impl StorageHost<'_> {
    fn me(&self) -> StorageId {
        self.core.id()
    }

    fn after_reply(&self, query: &ContentQuery, objects: BTreeSet<ObjectId>) -> TwcOut {
        let reply = AfterReply { content: ContentSnapshot { time: query.time, objects }, owns: self.core.owned_objects() };
        TwcOut::ok(json!(reply))
    }

    fn serve(&mut self, req: TwcRequest) {
        if req.target != self.me().entity() {
            req.respond(TwcOut::fail(status::UNKNOWN_TARGET));
            return;
        }
        self.expected -= 1;
        match req.oper_type.as_str() {
            FETCH_BEFORE => {
                let out = match serde_json::from_value::<ContentQuery>(req.inp.d_input.clone()) {
                    Ok(q) => match self.core.content_before(q.time, q.window) {
                        Ok(snap) => TwcOut::ok(json!(snap)),
                        Err(_) => TwcOut::fail(status::PAYLOAD_ERROR),
                    },
                    Err(_) => TwcOut::fail(status::PAYLOAD_ERROR),
                };
                req.respond(out);
            }
            FETCH_AFTER => match serde_json::from_value::<ContentQuery>(req.inp.d_input.clone()) {
                Ok(query) => {
                    let deadline = self.ctx.cfg.after_wait.map(|d| Instant::now() + d);
                    self.parked.push(Parked { req, query, deadline });
                    self.service_parked();
                }
                Err(_) => req.respond(TwcOut::fail(status::PAYLOAD_ERROR)),
            },
            REGISTER_OWNER => {
                let out = match serde_json::from_value::<OwnerRegistration>(req.inp.d_input.clone()) {
                    Ok(reg) => {
                        self.core.register_owner(reg.human, &reg.objects, req.as_of);
                        TwcOut::ok(Value::Null)
                    }
                    Err(_) => TwcOut::fail(status::PAYLOAD_ERROR),
                };
                req.respond(out);
            }
            FETCH_OWNER => {
                // Owner lookups are not announced by any dispatched record.
                self.expected += 1;
                let out = match serde_json::from_value::<ObjectId>(req.inp.d_input.clone()) {
                    Ok(o) => match self.core.owner_of(o) {
                        Some(h) => TwcOut::ok(json!(h)),
                        None => TwcOut::fail(status::PAYLOAD_ERROR),
                    },
                    Err(_) => TwcOut::fail(status::PAYLOAD_ERROR),
                };
                req.respond(out);
            }
            _ => {
                self.expected += 1;
                req.respond(TwcOut::fail(status::UNKNOWN_OPER_TYPE));
            }
        }
    }

    /// Answers every parked request whose window has closed or whose live
    /// deadline has passed.
    fn service_parked(&mut self) {
        let now = Instant::now();
        let mut still = Vec::new();
        for p in std::mem::take(&mut self.parked) {
            let out = match self.core.after_state(p.query.human, p.query.time, p.query.window) {
                AfterState::Closed(Ok(objects)) => Some(self.after_reply(&p.query, objects)),
                AfterState::Closed(Err(_)) => Some(TwcOut::fail(status::PAYLOAD_ERROR)),
                AfterState::Open if p.deadline.is_some_and(|d| d <= now) => {
                    Some(match self.core.after_partial(p.query.time, p.query.window) {
                        Ok(objects) => self.after_reply(&p.query, objects),
                        Err(_) => TwcOut::fail(status::PAYLOAD_ERROR),
                    })
                }
                AfterState::Open => None,
            };
            match out {
                Some(out) => p.req.respond(out),
                None => still.push(p),
            }
        }
        self.parked = still;
    }

    fn next_deadline(&self) -> Option<Instant> {
        self.parked.iter().filter_map(|p| p.deadline).min()
    }

    fn can_retire(&self) -> bool {
        self.core.is_returned() && self.expected <= 0 && self.parked.is_empty()
    }

    fn retire(&self) {
        self.ctx.directory.remove(self.me());
        let _ = self.ctx.out.send(OutputMsg::Storage(Box::new(self.core.archive())));
    }
}

fn host_storage(ctx: &WorkerCtx, rx: &Receiver<WorkerMsg>, bound_at: u64, bind: &Event, released: Instant) {
    let EventKind::StorageInstantiate(me, by) = bind.kind else {
        log::error!("storage worker bound by {bind:?}");
        return;
    };
    let mut host = StorageHost {
        ctx,
        core: StorageCore::new(me, by, bind.time, bound_at, &ctx.catalog),
        expected: 0,
        parked: Vec::new(),
    };
    host.core.on_event(bind);
    sample(ctx, bind, bound_at, released);

    loop {
        let msg = match host.next_deadline() {
            Some(deadline) => match rx.recv_deadline(deadline) {
                Ok(m) => Some(m),
                Err(RecvTimeoutError::Timeout) => None,
                Err(RecvTimeoutError::Disconnected) => return,
            },
            None => match rx.recv() {
                Ok(m) => Some(m),
                Err(_) => return,
            },
        };
        match msg {
            None => host.service_parked(),
            Some(WorkerMsg::Record { index, event, released }) => {
                match event.kind {
                    EventKind::HandIn(_, s) if s == me => host.expected += 1,
                    EventKind::HandOut(_, s) if s == me => host.expected += 2,
                    _ => {}
                }
                host.core.on_event(&event);
                host.service_parked();
                if reporter(&event) == me.entity() || in_collective(&event, EntityKind::Storage) {
                    sample(ctx, &event, index, released);
                }
            }
            Some(WorkerMsg::Request(req)) => host.serve(req),
            Some(WorkerMsg::EndOfStream) => {
                host.core.end_of_stream();
                host.service_parked();
            }
            Some(WorkerMsg::Finalize) => {
                host.core.end_of_stream();
                host.service_parked();
                host.retire();
                return;
            }
            Some(other) => log::error!("{me}: unexpected {other:?}"),
        }
        if host.can_retire() {
            host.retire();
            return;
        }
    }
}

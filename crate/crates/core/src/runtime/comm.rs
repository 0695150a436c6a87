//! Communicators and the two-way request-reply exchange between workers.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};
use std::time::{Duration, Instant};

use crossbeam_channel::{Receiver, Sender};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::model::{EntityId, EntityKind, Event, StorageId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Communicator {
    #[serde(rename = "Default_comm")]
    Default,
    #[serde(rename = "HumEnt_comm")]
    HumEnt,
    #[serde(rename = "StoEnt_comm")]
    StoEnt,
    #[serde(rename = "Inter_comm")]
    Inter,
}

impl Communicator {
    /// Whether `initiator -> target` point-to-point traffic may use this communicator.
    pub fn permits(self, initiator: EntityKind, target: EntityKind) -> bool {
        match self {
            // Master-to-all broadcast only.
            Communicator::Default => false,
            Communicator::HumEnt => initiator == EntityKind::Human && target == EntityKind::Human,
            Communicator::StoEnt => initiator == EntityKind::Storage && target == EntityKind::Storage,
            // Across groups only, and only in the human-to-storage direction,
            // so that no cycle of blocked requests can form.
            Communicator::Inter => initiator == EntityKind::Human && target == EntityKind::Storage,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Mode {
    Fetch = 0,
    Compute = 1,
    FetchThenCompute = 2,
}

impl From<Mode> for u8 {
    fn from(m: Mode) -> u8 {
        m as u8
    }
}

impl TryFrom<u8> for Mode {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            0 => Ok(Mode::Fetch),
            1 => Ok(Mode::Compute),
            2 => Ok(Mode::FetchThenCompute),
            other => Err(format!("mode {other} is not 0, 1 or 2")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwcInp {
    pub d_input: Value,
    pub mode: Mode,
}

pub mod status {
    pub const OK: u8 = 1;
    pub const UNKNOWN_OPER_TYPE: u8 = 2;
    pub const TARGET_BUSY_TIMEOUT: u8 = 3;
    pub const PAYLOAD_ERROR: u8 = 4;
    pub const UNKNOWN_TARGET: u8 = 5;
    pub const INVALID_PAIRING: u8 = 6;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwcOut {
    pub d_output: Value,
    pub status: u8,
}

impl TwcOut {
    pub fn ok(d_output: Value) -> Self {
        Self { d_output, status: status::OK }
    }

    pub fn fail(status: u8) -> Self {
        Self { d_output: Value::Null, status }
    }

    pub fn is_ok(&self) -> bool {
        self.status == status::OK
    }
}

#[derive(Debug)]
pub struct TwcRequest {
    pub comm: Communicator,
    pub oper_type: String,
    pub initiator: EntityId,
    pub target: EntityId,
    /// Dispatch index of the record the initiator was handling.
    pub as_of: u64,
    pub inp: TwcInp,
    pub reply: Sender<TwcOut>,
}

impl TwcRequest {
    pub fn respond(self, out: TwcOut) {
        // The initiator may have timed out and gone; nothing to do then.
        let _ = self.reply.send(out);
    }
}

/// Everything a worker can find in its mailbox.
#[derive(Debug)]
pub enum WorkerMsg {
    /// Host the entity created by `event`.
    Bind { index: u64, event: Arc<Event>, released: Instant },
    /// A broadcast record.
    Record { index: u64, event: Arc<Event>, released: Instant },
    Request(TwcRequest),
    /// No more records will be dispatched.
    EndOfStream,
    /// Archive now; sent to storages once every human has finished.
    Finalize,
    /// Leave the pool.
    Shutdown,
}

/// Storage mailboxes by id, for point-to-point requests.
#[derive(Default)]
pub struct Directory {
    routes: RwLock<HashMap<StorageId, Sender<WorkerMsg>>>,
    pairing_violations: AtomicU64,
    requests: AtomicU64,
}

impl Directory {
    pub fn insert(&self, id: StorageId, tx: Sender<WorkerMsg>) {
        self.routes.write().expect("directory lock").insert(id, tx);
    }

    pub fn remove(&self, id: StorageId) {
        self.routes.write().expect("directory lock").remove(&id);
    }

    pub fn pairing_violations(&self) -> u64 {
        self.pairing_violations.load(Ordering::Relaxed)
    }

    pub fn requests(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }

    /// Sends a request and blocks for the reply, up to `timeout`.
    #[allow(clippy::too_many_arguments)]
    pub fn gptwc(
        &self,
        comm: Communicator,
        oper_type: &str,
        initiator: EntityId,
        target: EntityId,
        as_of: u64,
        inp: TwcInp,
        timeout: Duration,
    ) -> TwcOut {
        if !comm.permits(initiator.kind, target.kind) {
            self.pairing_violations.fetch_add(1, Ordering::Relaxed);
            log::error!("refused {oper_type} from {initiator} to {target} over {comm:?}");
            return TwcOut::fail(status::INVALID_PAIRING);
        }
        let Some(storage) = target.as_storage() else {
            return TwcOut::fail(status::UNKNOWN_TARGET);
        };
        let Some(tx) = self.routes.read().expect("directory lock").get(&storage).cloned() else {
            return TwcOut::fail(status::UNKNOWN_TARGET);
        };
        self.requests.fetch_add(1, Ordering::Relaxed);
        let (reply, rx): (Sender<TwcOut>, Receiver<TwcOut>) = crossbeam_channel::bounded(1);
        let req = TwcRequest { comm, oper_type: oper_type.to_string(), initiator, target, as_of, inp, reply };
        if tx.send(WorkerMsg::Request(req)).is_err() {
            return TwcOut::fail(status::UNKNOWN_TARGET);
        }
        match rx.recv_timeout(timeout) {
            Ok(out) => out,
            Err(_) => TwcOut::fail(status::TARGET_BUSY_TIMEOUT),
        }
    }
}

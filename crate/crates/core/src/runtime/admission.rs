//! Capacity-aware admission in front of the worker groups.
//!
//! Every decoded record passes through [`Admission::offer`], which either
//! assigns it the next dispatch index, parks it behind the FIFO wait queue
//! because a binding could not get a worker, or rejects it. Admission is
//! deterministic, so the concurrent engine and the sequential oracle see the
//! same dispatch sequence for the same input.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::model::{EntityId, Event, EventKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RejectReason {
    /// An involved entity is not live and is not waiting for a worker.
    UnknownEntity,
    /// A binding names an id that is live, waiting, or already retired.
    DuplicateEntity,
    /// The stream ended while the record was still waiting for a worker.
    NeverAdmitted,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    /// `live` is the number of bound entities once this record is applied.
    Dispatch { index: u64, event: Event, seq: Option<u64>, live: usize },
    Reject { event: Event, seq: Option<u64>, reason: RejectReason },
}

#[derive(Debug, Clone)]
pub struct Admission {
    cap: usize,
    live: BTreeSet<EntityId>,
    waiting: BTreeSet<EntityId>,
    retired: BTreeSet<EntityId>,
    queue: VecDeque<(Event, Option<u64>)>,
    next_index: u64,
    peak_live: usize,
}

/// The entity an event binds to a worker, if it is a binding event.
pub fn binding(event: &Event) -> Option<EntityId> {
    match event.kind {
        EventKind::HumanEnter(h) => Some(h.entity()),
        EventKind::StorageInstantiate(s, _) => Some(s.entity()),
        _ => None,
    }
}

/// The entity an event retires, if any.
pub fn release(event: &Event) -> Option<EntityId> {
    match event.kind {
        EventKind::HumanExit(h) => Some(h.entity()),
        EventKind::StorageReturn(s, _) => Some(s.entity()),
        _ => None,
    }
}

/// Entities that must be live for the event to be dispatched.
fn required(event: &Event) -> Vec<EntityId> {
    match event.kind {
        EventKind::HumanEnter(_) => vec![],
        EventKind::StorageInstantiate(_, h) => vec![h.entity()],
        EventKind::StorageReturn(s, _) => vec![s.entity()],
        _ => event.involved(),
    }
}

impl Admission {
    pub fn new(cap: usize) -> Self {
        assert!(cap > 0, "concurrency cap must be positive");
        Self {
            cap,
            live: BTreeSet::new(),
            waiting: BTreeSet::new(),
            retired: BTreeSet::new(),
            queue: VecDeque::new(),
            next_index: 0,
            peak_live: 0,
        }
    }

    pub fn live_count(&self) -> usize {
        self.live.len()
    }

    pub fn peak_live(&self) -> usize {
        self.peak_live
    }

    pub fn waiting_len(&self) -> usize {
        self.queue.len()
    }

    pub fn dispatched(&self) -> u64 {
        self.next_index
    }

    pub fn is_live(&self, id: EntityId) -> bool {
        self.live.contains(&id)
    }

    /// Offers one record, tagged with its log position if it has one.
    /// Returns every verdict it caused, in dispatch order.
    pub fn offer(&mut self, event: Event, seq: Option<u64>) -> Vec<Verdict> {
        let mut out = Vec::new();
        if let Some(id) = binding(&event) {
            if self.live.contains(&id) || self.waiting.contains(&id) || self.retired.contains(&id) {
                out.push(Verdict::Reject { event, seq, reason: RejectReason::DuplicateEntity });
                return out;
            }
            if !self.queue.is_empty() || self.live.len() >= self.cap || self.waits_on_queue(&event) {
                self.waiting.insert(id);
                self.queue.push_back((event, seq));
                return out;
            }
        } else if self.waits_on_queue(&event) {
            self.queue.push_back((event, seq));
            return out;
        }
        self.admit(event, seq, &mut out);
        self.drain(&mut out);
        out
    }

    /// Rejects everything still waiting; call once the input is exhausted.
    pub fn finish(&mut self) -> Vec<Verdict> {
        self.waiting.clear();
        self.queue
            .drain(..)
            .map(|(event, seq)| Verdict::Reject { event, seq, reason: RejectReason::NeverAdmitted })
            .collect()
    }

    fn waits_on_queue(&self, event: &Event) -> bool {
        required(event).iter().chain(binding(event).iter()).any(|id| self.waiting.contains(id))
    }

    fn admit(&mut self, event: Event, seq: Option<u64>, out: &mut Vec<Verdict>) {
        if required(&event).iter().any(|id| !self.live.contains(id)) {
            out.push(Verdict::Reject { event, seq, reason: RejectReason::UnknownEntity });
            return;
        }
        if let Some(id) = binding(&event) {
            self.waiting.remove(&id);
            self.live.insert(id);
            self.peak_live = self.peak_live.max(self.live.len());
        }
        if let Some(id) = release(&event) {
            self.live.remove(&id);
            self.retired.insert(id);
        }
        out.push(Verdict::Dispatch { index: self.next_index, event, seq, live: self.live.len() });
        self.next_index += 1;
    }

    /// Admits queued records from the front for as long as the head can go.
    fn drain(&mut self, out: &mut Vec<Verdict>) {
        while let Some((head, _)) = self.queue.front() {
            if binding(head).is_some() {
                if self.live.len() >= self.cap {
                    break;
                }
                // A binding whose prerequisite is itself still queued ahead
                // cannot be at the head, so the prerequisite is live or gone.
            } else if required(head).iter().any(|id| self.waiting.contains(id)) {
                break;
            }
            let (event, seq) = self.queue.pop_front().expect("non-empty");
            self.admit(event, seq, out);
        }
    }
}

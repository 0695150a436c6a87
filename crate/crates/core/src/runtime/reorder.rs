//! Puts records into temporal order before dispatch.
//!
//! Records from different tracker clients interleave arbitrarily in the log.
//! Batch sources are sorted outright by `(time, sequence)`; live sources are
//! held for a short wall-clock delay so that stragglers can overtake.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use crate::model::EventRecord;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sequenced {
    pub seq: u64,
    pub record: EventRecord,
    pub received: Option<Instant>,
}

/// Stable temporal order, ties broken by log position.
pub fn sort_batch(records: &mut [Sequenced]) {
    records.sort_by_key(|r| (r.record.time, r.seq));
}

#[derive(Debug, PartialEq, Eq, PartialOrd, Ord)]
struct Key {
    time: u64,
    seq: u64,
}

pub struct LiveReorder {
    delay: Duration,
    heap: BinaryHeap<Reverse<(Key, ArrivalOrder)>>,
    arrival: u64,
    late: u64,
    last_released: Option<u64>,
}

/// Wraps the record so that heap order depends only on the key.
#[derive(Debug)]
struct ArrivalOrder {
    n: u64,
    held_since: Instant,
    item: Sequenced,
}

impl PartialEq for ArrivalOrder {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n
    }
}
impl Eq for ArrivalOrder {}
impl PartialOrd for ArrivalOrder {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for ArrivalOrder {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.n.cmp(&other.n)
    }
}

impl LiveReorder {
    pub fn new(delay: Duration) -> Self {
        Self { delay, heap: BinaryHeap::new(), arrival: 0, late: 0, last_released: None }
    }

    pub fn push(&mut self, item: Sequenced) {
        let key = Key { time: item.record.time, seq: item.seq };
        let entry = ArrivalOrder { n: self.arrival, held_since: Instant::now(), item };
        self.arrival += 1;
        self.heap.push(Reverse((key, entry)));
    }

    /// Records that arrived after a later-timed record was already released.
    pub fn late_count(&self) -> u64 {
        self.late
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Releases the earliest records that have been held long enough.
    pub fn pop_ready(&mut self, now: Instant) -> Vec<Sequenced> {
        let mut out = Vec::new();
        while let Some(Reverse((_, entry))) = self.heap.peek() {
            if now.duration_since(entry.held_since) < self.delay {
                break;
            }
            let Reverse((_, entry)) = self.heap.pop().expect("peeked");
            out.push(self.release(entry.item));
        }
        out
    }

    /// Releases everything still held, in order.
    pub fn drain(&mut self) -> Vec<Sequenced> {
        let mut out = Vec::with_capacity(self.heap.len());
        while let Some(Reverse((_, entry))) = self.heap.pop() {
            out.push(self.release(entry.item));
        }
        out
    }

    fn release(&mut self, item: Sequenced) -> Sequenced {
        if self.last_released.is_some_and(|t| item.record.time < t) {
            self.late += 1;
        }
        self.last_released = Some(self.last_released.map_or(item.record.time, |t| t.max(item.record.time)));
        item
    }
}

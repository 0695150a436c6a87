//! Sequential reference interpreter and the equivalence check against the
//! concurrent engine.
//!
//! The oracle feeds the same admission logic and the same per-entity cores
//! as the engine, but strictly one record at a time with direct access to
//! every entity. Storages are run first over the whole dispatch sequence,
//! answering each human query the moment its answer becomes determined, and
//! then every human replays the sequence with those answers in hand.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::Serialize;
use serde_json::Value;

use crate::inference::{profile, Catalog};
use crate::model::{
    Anomaly, ContentSnapshot, Event, EventKind, EventRecord, HumanId, ObjectId, StorageId, Timestamp,
};
use crate::runtime::admission::{Admission, Verdict};
use crate::runtime::dispatcher::DeadLetter;
use crate::runtime::logic::{AfterState, HumanArchive, HumanCore, StorageArchive, StorageCore};
use crate::runtime::reorder::{sort_batch, Sequenced};
use crate::runtime::{EngineConfig, RunOutput};

#[derive(Debug, Clone, Default)]
pub struct OracleOutput {
    pub humans: BTreeMap<HumanId, HumanArchive>,
    pub storages: BTreeMap<StorageId, StorageArchive>,
    pub anomalies: Vec<Anomaly>,
    pub dead_letters: Vec<DeadLetter>,
    pub dispatched: u64,
}

type AfterAnswer = Option<(ContentSnapshot, BTreeSet<ObjectId>)>;

struct PendingAfter {
    index: u64,
    human: HumanId,
    time: Timestamp,
}

/// Runs the reference interpreter over a record set.
pub fn run_oracle(mut records: Vec<Sequenced>, cfg: &EngineConfig, catalog: Arc<Catalog>) -> OracleOutput {
    sort_batch(&mut records);
    let window = cfg.noise_filter_window;
    let mut out = OracleOutput::default();

    // Dispatch sequence, exactly as admission produces it.
    let mut admission = Admission::new(cfg.max_level_concurrency);
    let mut dispatched: Vec<(u64, Event)> = Vec::new();
    let take = |out: &mut OracleOutput, verdict: Verdict, dispatched: &mut Vec<(u64, Event)>| match verdict {
        Verdict::Dispatch { index, event, .. } => dispatched.push((index, event)),
        Verdict::Reject { event, seq, reason } => {
            out.dead_letters.push(DeadLetter { seq, record: event.encode(), reason: format!("{reason:?}") })
        }
    };
    for item in records {
        match Event::decode(&item.record) {
            Ok(event) => {
                for v in admission.offer(event, Some(item.seq)) {
                    take(&mut out, v, &mut dispatched);
                }
            }
            Err(e) => out.dead_letters.push(DeadLetter {
                seq: Some(item.seq),
                record: item.record,
                reason: format!("MalformedRecord: {e}"),
            }),
        }
    }
    for v in admission.finish() {
        take(&mut out, v, &mut dispatched);
    }
    out.dispatched = dispatched.len() as u64;

    // Storage pass.
    let mut live: BTreeMap<StorageId, (StorageCore, Vec<PendingAfter>)> = BTreeMap::new();
    let mut before: BTreeMap<u64, Option<ContentSnapshot>> = BTreeMap::new();
    let mut after: BTreeMap<u64, AfterAnswer> = BTreeMap::new();
    let mut finished: BTreeMap<StorageId, StorageCore> = BTreeMap::new();
    let resolve = |core: &StorageCore, pending: &mut Vec<PendingAfter>, after: &mut BTreeMap<u64, AfterAnswer>| {
        pending.retain(|p| match core.after_state(p.human, p.time, window) {
            AfterState::Open => true,
            AfterState::Closed(r) => {
                let answer = r.ok().map(|objects| (ContentSnapshot { time: p.time, objects }, core.owned_objects()));
                after.insert(p.index, answer);
                false
            }
        });
    };
    for (index, event) in &dispatched {
        let mut returned = None;
        for (id, (core, pending)) in live.iter_mut() {
            if core.on_event(event) {
                returned = Some(*id);
            }
            match event.kind {
                EventKind::HandIn(_, s) if s == *id => {
                    before.insert(*index, core.content_before(event.time, window).ok());
                }
                EventKind::HandOut(h, s) if s == *id => pending.push(PendingAfter { index: *index, human: h, time: event.time }),
                _ => {}
            }
            resolve(core, pending, &mut after);
        }
        // Existing workers see a binding record before the new one exists.
        if let EventKind::StorageInstantiate(s, h) = event.kind {
            let mut core = StorageCore::new(s, h, event.time, *index, &catalog);
            core.on_event(event);
            live.insert(s, (core, Vec::new()));
        }
        if let Some(id) = returned {
            let (core, pending) = live.remove(&id).expect("live storage");
            debug_assert!(pending.is_empty());
            finished.insert(id, core);
        }
    }
    for (id, (mut core, mut pending)) in std::mem::take(&mut live) {
        core.end_of_stream();
        resolve(&core, &mut pending, &mut after);
        finished.insert(id, core);
    }

    // Human pass.
    let prof = profile(cfg.profile, Arc::clone(&catalog));
    let mut humans: BTreeMap<HumanId, HumanCore> = BTreeMap::new();
    for (index, event) in &dispatched {
        let mut exited = None;
        for (id, core) in humans.iter_mut() {
            core.observe(event);
            match event.kind {
                EventKind::HandIn(h, s) if h == *id => {
                    core.on_hand_in(s, before.get(index).cloned().flatten());
                }
                EventKind::HandOut(h, s) if h == *id => {
                    let answer = after.get(index).cloned().flatten();
                    let effects = core.on_hand_out(s, event.time, answer);
                    out.anomalies.extend(effects.inference.anomalies.iter().cloned());
                    if let Some(sto) = finished.get_mut(&s) {
                        sto.register_owner(h, &effects.inference.newly_owned, *index);
                    }
                }
                EventKind::HumanExit(h) if h == *id => {
                    let outcome = core.on_exit(event.time);
                    out.anomalies.extend(outcome.anomalies);
                    exited = Some(*id);
                }
                _ => {}
            }
        }
        if let EventKind::HumanEnter(h) = event.kind {
            let mut core = HumanCore::new(h, event.time, *index, Arc::clone(&prof));
            core.observe(event);
            humans.insert(h, core);
        }
        if let Some(id) = exited {
            let core = humans.remove(&id).expect("live human");
            out.humans.insert(id, core.archive());
        }
    }
    for (id, core) in humans {
        out.humans.insert(id, core.archive());
    }
    out.storages = finished.into_iter().map(|(id, core)| (id, core.archive())).collect();
    out.anomalies.sort();
    out
}

/// Outcome of comparing engine output with the oracle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Equivalence {
    Equal,
    Diverged(String),
}

impl Equivalence {
    pub fn is_equal(&self) -> bool {
        matches!(self, Equivalence::Equal)
    }
}

impl std::fmt::Display for Equivalence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Equivalence::Equal => write!(f, "EQUAL"),
            Equivalence::Diverged(d) => write!(f, "DIVERGED: {d}"),
        }
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable")
}

/// First path at which two JSON documents differ.
pub fn first_difference(path: &str, a: &Value, b: &Value) -> Option<String> {
    match (a, b) {
        (Value::Object(x), Value::Object(y)) => {
            let keys: BTreeSet<&String> = x.keys().chain(y.keys()).collect();
            for k in keys {
                let p = format!("{path}.{k}");
                match (x.get(k), y.get(k)) {
                    (Some(u), Some(v)) => {
                        if let Some(d) = first_difference(&p, u, v) {
                            return Some(d);
                        }
                    }
                    (u, v) => return Some(format!("{p}: engine {u:?} vs oracle {v:?}")),
                }
            }
            None
        }
        (Value::Array(x), Value::Array(y)) => {
            for (i, (u, v)) in x.iter().zip(y).enumerate() {
                if let Some(d) = first_difference(&format!("{path}[{i}]"), u, v) {
                    return Some(d);
                }
            }
            (x.len() != y.len()).then(|| format!("{path}: engine has {} entries, oracle {}", x.len(), y.len()))
        }
        _ => (a != b).then(|| format!("{path}: engine {a} vs oracle {b}")),
    }
}

/// Compares every logical output. Owner resolution in the anomaly stream
/// and all wall-clock measurements are excluded.
pub fn compare(engine: &RunOutput, oracle: &OracleOutput) -> Equivalence {
    let engine_anomalies: Vec<&Anomaly> = engine.collected.anomalies.iter().map(|r| &r.anomaly).collect();
    let pairs = [
        ("humans", to_value(&engine.collected.humans), to_value(&oracle.humans)),
        ("storages", to_value(&engine.collected.storages), to_value(&oracle.storages)),
        ("anomalies", to_value(&engine_anomalies), to_value(&oracle.anomalies)),
        ("dead_letters", to_value(&engine.dead_letters), to_value(&oracle.dead_letters)),
        ("dispatched", to_value(&engine.stats.dispatched), to_value(&oracle.dispatched)),
    ];
    for (name, a, b) in pairs {
        if let Some(d) = first_difference(name, &a, &b) {
            return Equivalence::Diverged(d);
        }
    }
    if !engine.stats.drained {
        return Equivalence::Diverged("engine did not drain before the watchdog".into());
    }
    Equivalence::Equal
}

/// Runs both interpreters over the same records and compares them.
pub fn check(
    records: Vec<EventRecord>,
    cfg: &EngineConfig,
    catalog: Arc<Catalog>,
) -> std::io::Result<(Equivalence, RunOutput, OracleOutput)> {
    let items = crate::runtime::sequenced(records);
    let engine = crate::runtime::run_batch(items.clone(), cfg, Arc::clone(&catalog), &Default::default())?;
    let oracle = run_oracle(items, cfg, catalog);
    Ok((compare(&engine, &oracle), engine, oracle))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EventKind as K, HumanId as H, ObjectId as O, StorageId as S};

    fn frames(out: &mut Vec<EventRecord>, t: &mut u64, s: u64, objects: &[u64], n: usize) {
        for _ in 0..n {
            *t += 1;
            let set = objects.iter().map(|o| O(*o)).collect();
            out.push(Event::new(*t, K::StorageUpdate(S(s), set)).encode());
        }
    }

    fn push(out: &mut Vec<EventRecord>, t: &mut u64, kind: K) {
        *t += 1;
        out.push(Event::new(*t, kind).encode());
    }

    fn divest_and_collect() -> Vec<EventRecord> {
        let (mut v, mut t) = (Vec::new(), 0);
        push(&mut v, &mut t, K::HumanEnter(H(1)));
        push(&mut v, &mut t, K::StorageInstantiate(S(1), H(1)));
        frames(&mut v, &mut t, 1, &[], 7);
        push(&mut v, &mut t, K::HandIn(H(1), S(1)));
        push(&mut v, &mut t, K::HandOut(H(1), S(1)));
        frames(&mut v, &mut t, 1, &[3], 7);
        push(&mut v, &mut t, K::HandIn(H(1), S(1)));
        push(&mut v, &mut t, K::HandOut(H(1), S(1)));
        frames(&mut v, &mut t, 1, &[], 7);
        push(&mut v, &mut t, K::StorageReturn(S(1), H(1)));
        push(&mut v, &mut t, K::HumanExit(H(1)));
        v
    }

    #[test]
    fn engine_and_oracle_agree_on_a_clean_visit() {
        let cfg = EngineConfig { max_level_concurrency: 4, ..Default::default() };
        let (eq, engine, oracle) = check(divest_and_collect(), &cfg, Arc::new(Catalog::default())).unwrap();
        assert_eq!(eq, Equivalence::Equal);
        let h = &oracle.humans[&H(1)].entity;
        let labels: Vec<&str> = h.inference_q[&O(3)].iter().map(|r| r.label.as_str()).collect();
        assert_eq!(labels, ["Divest own object in own Bin", "MoveFrom: Own Bin", "Collect own object from own Bin"]);
        assert!(h.anomalies.is_empty(), "{:?}", h.anomalies);
        assert_eq!(engine.stats.dispatched, 29);
        assert!(engine.dead_letters.is_empty());
    }

    #[test]
    fn json_difference_names_the_path() {
        let a = serde_json::json!({"x": {"y": [1, 2]}});
        let b = serde_json::json!({"x": {"y": [1, 3]}});
        assert_eq!(first_difference("r", &a, &b).unwrap(), "r.x.y[1]: engine 2 vs oracle 3");
        assert!(first_difference("r", &a, &a).is_none());
    }
}

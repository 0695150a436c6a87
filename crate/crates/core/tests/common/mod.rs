//! Helpers shared by the integration suites.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use poi_engine::inference::Catalog;
use poi_engine::model::{Anomaly, Event, EventKind, HumanId, StorageId, Timestamp};
use poi_engine::runtime::output::Collected;
use poi_engine::runtime::{run_batch, sequenced, EngineConfig, OutputPaths, RunOutput};
use poi_engine::sim::{HandNoise, SimConfig};

pub fn engine_for(sim: &SimConfig) -> EngineConfig {
    EngineConfig {
        max_level_concurrency: sim.max_level_concurrency,
        noise_filter_window: sim.noise_filter_window,
        profile: sim.profile,
        ..EngineConfig::default()
    }
}

pub fn run_events(events: &[Event], engine: &EngineConfig, catalog: &Catalog) -> RunOutput {
    run_batch(sequenced(events.iter().map(Event::encode)), engine, Arc::new(catalog.clone()), &OutputPaths::default())
        .expect("in-memory run")
}

pub fn anomalies(collected: &Collected) -> Vec<Anomaly> {
    let mut v: Vec<Anomaly> = collected.anomalies.iter().map(|r| r.anomaly.clone()).collect();
    v.sort();
    v
}

/// Closed intervals during which a matched hand was inside each storage.
///
/// Events are taken in time order. A hand-out closes the latest hand-in of
/// the same human at the same storage. A hand-in older than another human's
/// complete interaction at that storage, or whose human has left, has lost
/// its hand-out and closes nothing.
pub fn matched_intervals(events: &[Event]) -> BTreeMap<StorageId, Vec<(Timestamp, Timestamp)>> {
    let mut order: Vec<&Event> = events.iter().collect();
    order.sort_by_key(|e| e.time);
    let mut inside: BTreeMap<StorageId, BTreeMap<HumanId, Timestamp>> = BTreeMap::new();
    let mut out: BTreeMap<StorageId, Vec<(Timestamp, Timestamp)>> = BTreeMap::new();
    for e in order {
        match e.kind {
            EventKind::HandIn(h, s) => {
                inside.entry(s).or_default().insert(h, e.time);
            }
            EventKind::HandOut(h, s) => {
                let hands = inside.entry(s).or_default();
                if let Some(t_in) = hands.remove(&h) {
                    out.entry(s).or_default().push((t_in, e.time));
                    hands.retain(|_, t| *t >= t_in);
                }
            }
            EventKind::HumanExit(h) => {
                for hands in inside.values_mut() {
                    hands.remove(&h);
                }
            }
            _ => {}
        }
    }
    out
}

/// Violations of content gating: an archived snapshot taken while a matched
/// hand was inside the storage. Returns the number of intervals checked and
/// a description of every violation.
pub fn gating_violations(events: &[Event], collected: &Collected) -> (usize, Vec<String>) {
    let intervals = matched_intervals(events);
    let mut checked = 0;
    let mut bad = Vec::new();
    for (id, archive) in &collected.storages {
        let sto = &archive.entity;
        let end = sto.t_return.unwrap_or(Timestamp(u64::MAX));
        for (t_in, t_out) in intervals.get(id).into_iter().flatten() {
            if *t_out < sto.t_instantiate || *t_in > end {
                continue;
            }
            checked += 1;
            for snap in &sto.content {
                if *t_in <= snap.time && snap.time <= *t_out {
                    bad.push(format!("{id}: snapshot at {} inside [{t_in}, {t_out}]", snap.time));
                }
            }
        }
    }
    (checked, bad)
}

/// Shortest description of how two runs differ in what they inferred, or
/// `None` when action and inference queues, ownerships, retail ledgers and
/// anomalies all agree.
pub fn inference_difference(a: &Collected, b: &Collected) -> Option<String> {
    let ids: BTreeSet<&HumanId> = a.humans.keys().chain(b.humans.keys()).collect();
    for id in ids {
        let (Some(x), Some(y)) = (a.humans.get(id), b.humans.get(id)) else {
            return Some(format!("{id} archived in only one run"));
        };
        let (x, y) = (&x.entity, &y.entity);
        if x.action_q != y.action_q {
            return Some(format!("{id} action queue {:?} vs {:?}", x.action_q, y.action_q));
        }
        if x.inference_q != y.inference_q {
            return Some(format!("{id} inference queue {:?} vs {:?}", x.inference_q, y.inference_q));
        }
        if x.ownership != y.ownership {
            return Some(format!("{id} ownership {:?} vs {:?}", x.ownership, y.ownership));
        }
        if x.retail != y.retail {
            return Some(format!("{id} retail ledger {:?} vs {:?}", x.retail, y.retail));
        }
    }
    let (x, y) = (anomalies(a), anomalies(b));
    (x != y).then(|| format!("anomalies {x:?} vs {y:?}"))
}

/// A small noise-free airport or retail world with random sizes.
pub fn small_world(rng: &mut ChaCha8Rng) -> SimConfig {
    loop {
        let mut cfg = if rng.gen_bool(0.5) {
            let n_humans = rng.gen_range(3..=8);
            let mut c = SimConfig::airport();
            c.n_humans = n_humans;
            c.n_storages = rng.gen_range(n_humans..=2 * n_humans);
            c.n_objects = rng.gen_range(2 * n_humans..=5 * n_humans);
            c.max_level_concurrency = rng.gen_range(4..=12);
            c
        } else {
            let mut c = SimConfig::retail();
            c.n_humans = rng.gen_range(3..=6);
            c.n_storages = rng.gen_range(2..=4);
            c.n_objects = rng.gen_range(8..=30);
            c.max_level_concurrency = c.n_storages + rng.gen_range(2..=5);
            c
        };
        cfg.seed = rng.gen();
        cfg.noise_filter_window = *[3, 5].choose(rng).expect("non-empty");
        cfg.max_interaction = rng.gen_range(2..=6);
        if cfg.validate().is_ok() {
            return cfg;
        }
    }
}

/// A small world with random hand and content noise.
pub fn noisy_world(rng: &mut ChaCha8Rng) -> SimConfig {
    let mut cfg = small_world(rng);
    cfg.noisy_hand_event_pdf = rng.gen_range(0.0..0.4);
    cfg.hand_noise = *[HandNoise::Both, HandNoise::Missed, HandNoise::Spurious].choose(rng).expect("non-empty");
    cfg.noisy_obj_detect_prob = rng.gen_range(0.0..0.5);
    cfg.max_noisy_content_perc = rng.gen_range(0.0..40.0);
    cfg
}

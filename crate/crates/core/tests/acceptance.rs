//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Pass criterion names (`C1` .. `C8`) as
//! arguments to run a subset.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::{Command, ExitCode, Stdio};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{engine_for, gating_violations, inference_difference, noisy_world, run_events, small_world};
use poi_engine::eventlog::{read_all, EventSeq};
use poi_engine::harness::{self, latency_sweep, partition, stream_clients, LiveService, LOG_FILE, TREND_TOLERANCE};
use poi_engine::metrics::{concurrency, LatencyStats, HAND_EVENTS, LIFECYCLE_EVENTS};
use poi_engine::model::{Event, EventKind, EventRecord, EventType, HumanId, StorageId};
use poi_engine::oracle;
use poi_engine::runtime::{run_batch, sequenced, EngineConfig, OutputPaths, RunOutput};
use poi_engine::sim::{generate, inject_noise, score, Block, SimConfig};

const C1_TIME_LIMIT: Duration = Duration::from_secs(60);
const C3_TRIALS: usize = 1000;
const C3_TRIALS_PER_WORLD: usize = 10;
const C5_TRIALS: usize = 1000;
const C5_MAX_EVENTS: usize = 1000;
const C6_CLIENTS: usize = 50;
const C6_CAP: usize = 200;
const C6_EVENTS: usize = 10_000;
const C6_WATCHDOG: Duration = Duration::from_secs(120);
const C6_TICK_PACE: Duration = Duration::from_micros(20);
const C6_SWEEP: [usize; 4] = [50, 100, 150, 200];
const C6_SWEEP_PACE: Duration = Duration::from_micros(500);
const C7_PROBS: [f64; 6] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5];
const C7_PERCS: [f64; 3] = [0.0, 20.0, 40.0];
const C7_SEEDS: u64 = 10;
const C7_SLACK: f64 = 0.02;
const C8_APPENDS: usize = 700;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

/// Gating results gathered from every run the other criteria make.
#[derive(Default)]
struct Gating {
    runs: usize,
    intervals: usize,
    violations: Vec<String>,
}

impl Gating {
    fn check(&mut self, events: &[Event], out: &RunOutput) {
        let (checked, bad) = gating_violations(events, &out.collected);
        self.runs += 1;
        self.intervals += checked;
        self.violations.extend(bad);
    }
}

// C1

fn c1(gating: &mut Gating) -> Verdict {
    let cfg = SimConfig::airport();
    assert_eq!((cfg.n_humans, cfg.n_storages, cfg.n_objects, cfg.max_level_concurrency), (50, 50, 200, 20));
    let start = Instant::now();
    let g = generate(&cfg).expect("valid preset");
    let events = inject_noise(&g.stream, &cfg);
    let out = run_events(&events, &engine_for(&cfg), &g.catalog);
    let elapsed = start.elapsed();
    gating.check(&events, &out);
    let report = score(&g.truth, &out.collected.humans, &common::anomalies(&out.collected));
    let pass = report.is_perfect() && out.stats.drained && elapsed < C1_TIME_LIMIT;
    Verdict::new(
        pass,
        format!(
            "{} events, accuracy {:.4} (interactions {:.4}, inferences {:.4}, anomalies {:.4}, ownerships {:.4}), {:.2}s",
            events.len(),
            report.overall,
            report.interactions.accuracy(),
            report.inferences.accuracy(),
            report.anomalies.accuracy(),
            report.ownerships.accuracy(),
            elapsed.as_secs_f64()
        ),
    )
}

// C2

#[path = "golden/rows.rs"]
mod rows;

fn c2(gating: &mut Gating) -> Verdict {
    let mut failures = Vec::new();
    let mut covered = 0;
    for case in rows::all_cases() {
        let out = run_events(&case.events, &case.engine, &case.catalog);
        gating.check(&case.events, &out);
        match rows::check_case(&case, &out) {
            Ok(()) => covered += 1,
            Err(e) => failures.push(format!("{}: {e}", case.row)),
        }
    }
    let expected = rows::AIRPORT_ROWS + rows::RETAIL_ROWS;
    Verdict::new(
        failures.is_empty() && covered == expected,
        if failures.is_empty() {
            format!("{covered}/{expected} rows reproduce label, control and tasks")
        } else {
            failures.join("; ")
        },
    )
}

// C3

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Injection {
    UnmatchedHandOut,
    UnmatchedHandIn,
    UnchangedPair,
}

/// Clean stream with the positions needed to pick injection slots.
struct World {
    events: Vec<Event>,
    blocks: Vec<Block>,
    window: usize,
}

impl World {
    /// Humans and storages live just before event `i`.
    fn live_at(&self, i: usize) -> (Vec<HumanId>, Vec<StorageId>) {
        let (mut h, mut s) = (BTreeSet::new(), BTreeSet::new());
        for e in &self.events[..i] {
            match e.kind {
                EventKind::HumanEnter(x) => {
                    h.insert(x);
                }
                EventKind::HumanExit(x) => {
                    h.remove(&x);
                }
                EventKind::StorageInstantiate(x, _) => {
                    s.insert(x);
                }
                EventKind::StorageReturn(x, _) => {
                    s.remove(&x);
                }
                _ => {}
            }
        }
        (h.into_iter().collect(), s.into_iter().collect())
    }

    /// True when some hand is inside `s` just before event `i`.
    fn hand_inside(&self, s: StorageId, i: usize) -> bool {
        self.blocks.iter().any(|b| b.storage == s && b.hand_out == i)
    }

    /// Content frames of `s` in `range` of the stream.
    fn frames_of(&self, s: StorageId, range: std::ops::Range<usize>) -> usize {
        self.events[range].iter().filter(|e| matches!(e.kind, EventKind::StorageUpdate(x, _) if x == s)).count()
    }

    /// The storage shows one settled content for a full window on both
    /// sides of the gap before event `i`.
    fn quiet(&self, s: StorageId, i: usize) -> bool {
        let last_out = self.blocks.iter().filter(|b| b.storage == s && b.hand_out < i).map(|b| b.hand_out).max();
        let next_in = self.blocks.iter().filter(|b| b.storage == s && b.hand_in >= i).map(|b| b.hand_in).min();
        let before_ok = last_out.is_none_or(|o| self.frames_of(s, o + 1..i) >= self.window);
        let after_ok = next_in.is_none_or(|n| self.frames_of(s, i..n) >= self.window);
        before_ok && after_ok
    }
}

/// Adds up to `count` injected hand events to a clean stream. Each uses its
/// own gap between generated events so injections never pair with each other.
fn inject(world: &World, rng: &mut ChaCha8Rng, count: usize) -> (Vec<Event>, Vec<Injection>) {
    let n = world.events.len();
    let mut used = BTreeSet::new();
    let mut extra = Vec::new();
    let mut kinds = Vec::new();
    let mut attempts = 0;
    while kinds.len() < count && attempts < 200 {
        attempts += 1;
        let kind = *[Injection::UnmatchedHandOut, Injection::UnmatchedHandIn, Injection::UnchangedPair]
            .choose(rng)
            .expect("non-empty");
        let pick: Option<(usize, Vec<EventKind>)> = match kind {
            Injection::UnmatchedHandOut => {
                let i = rng.gen_range(1..n);
                let (hs, ss) = world.live_at(i);
                match (hs.choose(rng), ss.choose(rng)) {
                    (Some(&h), Some(&s)) if !world.hand_inside(s, i) => Some((i, vec![EventKind::HandOut(h, s)])),
                    _ => None,
                }
            }
            Injection::UnmatchedHandIn => {
                if rng.gen_bool(0.5) && !world.blocks.is_empty() {
                    // Just before somebody's genuine hand-in at the same storage.
                    let b = world.blocks.choose(rng).expect("non-empty");
                    let (hs, _) = world.live_at(b.hand_in);
                    hs.choose(rng).map(|&h| (b.hand_in, vec![EventKind::HandIn(h, b.storage)]))
                } else {
                    // Just before the human leaves.
                    let exits: Vec<usize> =
                        (0..n).filter(|&i| matches!(world.events[i].kind, EventKind::HumanExit(_))).collect();
                    exits.choose(rng).and_then(|&i| {
                        let EventKind::HumanExit(h) = world.events[i].kind else { unreachable!() };
                        let (_, ss) = world.live_at(i);
                        ss.choose(rng).map(|&s| (i, vec![EventKind::HandIn(h, s)]))
                    })
                }
            }
            Injection::UnchangedPair => {
                let i = rng.gen_range(1..n);
                let (hs, ss) = world.live_at(i);
                match (hs.choose(rng), ss.choose(rng)) {
                    (Some(&h), Some(&s)) if !world.hand_inside(s, i) && world.quiet(s, i) => {
                        Some((i, vec![EventKind::HandIn(h, s), EventKind::HandOut(h, s)]))
                    }
                    _ => None,
                }
            }
        };
        let Some((i, new)) = pick else { continue };
        if !used.insert(i) {
            continue;
        }
        let t = world.events[i].time.0;
        let k = new.len() as u64;
        for (j, kind) in new.into_iter().enumerate() {
            extra.push(Event::new(t - 1 - k + j as u64, kind));
        }
        kinds.push(kind);
    }
    let mut events = world.events.clone();
    events.extend(extra);
    events.sort_by_key(|e| e.time);
    (events, kinds)
}

fn c3(gating: &mut Gating) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0xc3);
    let mut violations = Vec::new();
    let mut injected: BTreeMap<Injection, usize> = BTreeMap::new();
    let mut trials = 0;
    while trials < C3_TRIALS {
        let cfg = small_world(&mut rng);
        let g = generate(&cfg).expect("validated config");
        let world = World { events: g.stream.events.clone(), blocks: g.stream.blocks.clone(), window: cfg.noise_filter_window };
        let engine = engine_for(&cfg);
        let clean = run_events(&world.events, &engine, &g.catalog);
        for _ in 0..C3_TRIALS_PER_WORLD.min(C3_TRIALS - trials) {
            trials += 1;
            let count = rng.gen_range(1..=4);
            let (events, kinds) = inject(&world, &mut rng, count);
            for k in &kinds {
                *injected.entry(*k).or_default() += 1;
            }
            let out = run_events(&events, &engine, &g.catalog);
            gating.check(&events, &out);
            if let Some(d) = inference_difference(&clean.collected, &out.collected) {
                violations.push(format!("trial {trials} ({kinds:?}, seed {}): {d}", cfg.seed));
            }
        }
    }
    let detail = format!(
        "{trials} trials, injected {injected:?}, {} violations{}",
        violations.len(),
        violations.first().map(|v| format!("; first: {v}")).unwrap_or_default()
    );
    Verdict::new(violations.is_empty(), detail)
}

// C5

/// Records outside the simulator's vocabulary: malformed lines, unknown
/// entities and repeated bindings.
fn junk(rng: &mut ChaCha8Rng, events: &[Event]) -> Vec<EventRecord> {
    let mut out = Vec::new();
    let t = |rng: &mut ChaCha8Rng| events[rng.gen_range(0..events.len())].time.0 + 1;
    for _ in 0..rng.gen_range(0..4) {
        out.push(match rng.gen_range(0..4) {
            0 => EventRecord { event_type: "Teleport".into(), time: t(rng), info: "H:1".into() },
            1 => EventRecord { event_type: "HandIn".into(), time: t(rng), info: "H:x;S:?".into() },
            2 => Event::new(t(rng), EventKind::HandIn(HumanId(9_999), StorageId(1))).encode(),
            _ => {
                let first = events.iter().find(|e| matches!(e.kind, EventKind::HumanEnter(_))).expect("a visitor");
                Event::new(t(rng), first.kind.clone()).encode()
            }
        });
    }
    out
}

fn c5(gating: &mut Gating) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0xc5);
    let mut diverged = Vec::new();
    let mut total_events = 0;
    let mut longest = 0;
    for trial in 0..C5_TRIALS {
        let cfg = noisy_world(&mut rng);
        let g = generate(&cfg).expect("validated config");
        let mut events = inject_noise(&g.stream, &cfg);
        let budget = rng.gen_range(C5_MAX_EVENTS / 5..=C5_MAX_EVENTS);
        let mut records: Vec<EventRecord> = Vec::new();
        let junk = junk(&mut rng, &events);
        events.truncate(budget.saturating_sub(junk.len()));
        records.extend(events.iter().map(Event::encode));
        records.extend(junk);
        total_events += records.len();
        longest = longest.max(records.len());
        let (verdict, engine_out, _) =
            oracle::check(records, &engine_for(&cfg), Arc::new(g.catalog)).expect("in-memory run");
        gating.check(&events, &engine_out);
        if !verdict.is_equal() {
            diverged.push(format!("trial {trial} (seed {}): {verdict}", cfg.seed));
        }
    }
    Verdict::new(
        diverged.is_empty() && longest <= C5_MAX_EVENTS,
        format!(
            "{C5_TRIALS} logs, {total_events} records, longest {longest}, {} diverged{}",
            diverged.len(),
            diverged.first().map(|d| format!("; first: {d}")).unwrap_or_default()
        ),
    )
}

// C6

/// A workload of about [`C6_EVENTS`] events for a cap of `cap`.
fn scale_world(cap: usize) -> SimConfig {
    let mut cfg = SimConfig::airport();
    cfg.n_humans = 150;
    cfg.n_storages = 150;
    cfg.n_objects = 300;
    cfg.max_level_concurrency = cap;
    cfg.seed = 6;
    cfg
}

fn c6(gating: &mut Gating) -> Verdict {
    let cfg = scale_world(C6_CAP);
    let g = generate(&cfg).expect("valid config");
    let mut events = inject_noise(&g.stream, &cfg);
    events.truncate(C6_EVENTS);
    let dir = tempfile::tempdir().expect("temp dir");
    let engine = EngineConfig { watchdog: C6_WATCHDOG, ..engine_for(&cfg) };
    let started = Instant::now();
    let service = LiveService::start("127.0.0.1:0", dir.path(), &engine, Arc::new(g.catalog.clone()), Duration::from_millis(20), false)
        .expect("start live service");
    let acked = stream_clients(service.local_addr(), partition(&events, C6_CLIENTS), Some(C6_TICK_PACE / cfg.tick as u32));
    let out = service.stop().expect("stop live service");
    let live_elapsed = started.elapsed();
    let acked = acked.expect("clients stream");
    gating.check(&events, &out);
    let conc = concurrency(&out.trace, C6_CAP);
    let live_ok = acked == events.len() as u64
        && out.stats.records == acked
        && out.stats.drained
        && conc.within_cap
        && live_elapsed < C6_WATCHDOG;

    let sweep = latency_sweep(&scale_world(C6_CAP), &engine_for(&cfg), &C6_SWEEP, C6_SWEEP_PACE).expect("sweep");
    let mut ordered = true;
    let mut points = Vec::new();
    for p in &sweep.points {
        match ordering_from_table(&p.latency) {
            Some((h, l, u)) => {
                ordered &= h > l && l > u;
                points.push(format!(
                    "cap {} mean {:.0}us (hand {h:.0} > lifecycle {l:.0} > update {u:.0}), peak {}",
                    p.cap, p.mean_us, p.peak_live
                ));
            }
            None => ordered = false,
        }
    }
    let pass = live_ok && ordered && sweep.trend.non_decreasing;
    Verdict::new(
        pass,
        format!(
            "live: {acked} acked from {C6_CLIENTS} clients, drained {}, peak live {}/{C6_CAP}, late {}, {:.1}s; sweep: {}; trend non-decreasing within {:.0}%: {}",
            out.stats.drained,
            conc.peak_live,
            out.stats.late_records,
            live_elapsed.as_secs_f64(),
            points.join(", "),
            TREND_TOLERANCE * 100.0,
            sweep.trend.non_decreasing
        ),
    )
}

/// Count-weighted family means from a per-type latency table.
fn ordering_from_table(table: &[LatencyStats]) -> Option<(f64, f64, f64)> {
    let mean = |family: &[EventType]| {
        let rows: Vec<_> = table.iter().filter(|r| family.contains(&r.event_type)).collect();
        let n: usize = rows.iter().map(|r| r.count).sum();
        (n > 0).then(|| rows.iter().map(|r| r.mean_us * r.count as f64).sum::<f64>() / n as f64)
    };
    Some((
        mean(&HAND_EVENTS)?,
        mean(&LIFECYCLE_EVENTS)?,
        mean(&[EventType::StorageUpdate])?,
    ))
}

// C7

fn c7(gating: &mut Gating) -> Verdict {
    let mut grid = vec![vec![0.0; C7_PERCS.len()]; C7_PROBS.len()];
    let mut origin_exact = true;
    for seed in 0..C7_SEEDS {
        let mut base = SimConfig::airport();
        base.seed = 700 + seed;
        let g = generate(&base).expect("valid preset");
        for (i, &p) in C7_PROBS.iter().enumerate() {
            for (j, &perc) in C7_PERCS.iter().enumerate() {
                let cfg = SimConfig { noisy_obj_detect_prob: p, max_noisy_content_perc: perc, ..base.clone() };
                let events = inject_noise(&g.stream, &cfg);
                let out = run_events(&events, &engine_for(&cfg), &g.catalog);
                gating.check(&events, &out);
                let r = score(&g.truth, &out.collected.humans, &common::anomalies(&out.collected));
                if i == 0 && j == 0 && !r.is_perfect() {
                    origin_exact = false;
                }
                grid[i][j] += r.overall / C7_SEEDS as f64;
            }
        }
    }
    let mut breaks = Vec::new();
    for i in 0..C7_PROBS.len() {
        for j in 0..C7_PERCS.len() {
            if i + 1 < C7_PROBS.len() && grid[i + 1][j] > grid[i][j] + C7_SLACK {
                breaks.push(format!("p {} -> {} at {}%", C7_PROBS[i], C7_PROBS[i + 1], C7_PERCS[j]));
            }
            if j + 1 < C7_PERCS.len() && grid[i][j + 1] > grid[i][j] + C7_SLACK {
                breaks.push(format!("{}% -> {}% at p {}", C7_PERCS[j], C7_PERCS[j + 1], C7_PROBS[i]));
            }
        }
    }
    let table: Vec<String> = C7_PROBS
        .iter()
        .zip(&grid)
        .map(|(p, row)| format!("p={p}: {}", row.iter().map(|a| format!("{a:.3}")).collect::<Vec<_>>().join("/")))
        .collect();
    Verdict::new(
        origin_exact && breaks.is_empty(),
        format!("mean accuracy at 0/20/40%: {}{}", table.join(", "), if breaks.is_empty() { String::new() } else { format!("; not monotone: {}", breaks.join(", ")) }),
    )
}

// C8

fn read_archive(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    for entry in std::fs::read_dir(dir.join("archive")).expect("archive dir") {
        let path = entry.expect("dir entry").path();
        files.insert(path.file_name().expect("file").to_string_lossy().into_owned(), std::fs::read(&path).expect("read"));
    }
    files
}

fn c8(gating: &mut Gating) -> Verdict {
    let mut cfg = SimConfig::retail();
    cfg.seed = 8;
    let g = generate(&cfg).expect("valid preset");
    let events = inject_noise(&g.stream, &cfg);
    assert!(events.len() > C8_APPENDS, "workload shorter than the kill point");
    let dir = tempfile::tempdir().expect("temp dir");
    let log_dir = dir.path().join("serve");

    let mut child = Command::new(env!("CARGO_BIN_EXE_poi"))
        .args(["serve", "--listen", "127.0.0.1:0", "--profile", "retail", "--log-dir"])
        .arg(&log_dir)
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
        .expect("spawn server");
    let addr = {
        use std::io::BufRead;
        let mut lines = std::io::BufReader::new(child.stderr.take().expect("stderr")).lines();
        let first = lines.next().expect("banner").expect("banner line");
        first.strip_prefix("listening on ").and_then(|r| r.split(',').next()).expect("address").to_string()
    };
    let mut client = poi_engine::eventlog::client::TrackerClient::connect(&addr).expect("connect");
    for e in &events[..C8_APPENDS] {
        assert!(client.send(&e.encode()).expect("send").is_ok());
    }
    child.kill().expect("kill server");
    child.wait().expect("reap server");

    let log = log_dir.join(LOG_FILE);
    // A torn write left by the crash on top of the acknowledged records.
    {
        use std::io::Write;
        let mut f = std::fs::OpenOptions::new().append(true).open(&log).expect("open log");
        f.write_all(&[200, 0, 0, 0, b'{', b'"']).expect("torn tail");
    }
    let torn_rejected = read_all(&log).is_err();
    let recovered = EventSeq::open_with_recovery(&log, false).expect("recover").len() as usize;
    let records = read_all(&log).expect("clean after recovery");
    let prefix: Vec<EventRecord> = events[..C8_APPENDS].iter().map(Event::encode).collect();

    let engine = engine_for(&cfg);
    let catalog = Arc::new(g.catalog.clone());
    let replay_dir = dir.path().join("replay");
    let fresh_dir = dir.path().join("fresh");
    let replay = harness::replay(&log, &engine, Arc::clone(&catalog), &replay_dir).expect("replay");
    std::fs::create_dir_all(&fresh_dir).expect("fresh dir");
    let fresh = run_batch(sequenced(prefix.clone()), &engine, catalog, &OutputPaths::in_dir(&fresh_dir)).expect("fresh run");
    gating.check(&events[..C8_APPENDS], &replay);
    let (a, b) = (read_archive(&replay_dir), read_archive(&fresh_dir));
    let identical = !a.is_empty() && a == b;
    let same_anomalies = common::anomalies(&replay.collected) == common::anomalies(&fresh.collected);
    Verdict::new(
        torn_rejected && recovered == C8_APPENDS && records == prefix && identical && same_anomalies,
        format!(
            "killed after {C8_APPENDS} acknowledged appends, recovered {recovered}, torn tail refused before recovery: {torn_rejected}, {} archive files byte-identical: {identical}",
            a.len()
        ),
    )
}

type Criterion = (&'static str, &'static str, fn(&mut Gating) -> Verdict);

fn main() -> ExitCode {
    let wanted: BTreeSet<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).map(|a| a.to_uppercase()).collect();
    let run = |name: &str| wanted.is_empty() || wanted.contains(name);
    let mut gating = Gating::default();
    let criteria: [Criterion; 7] = [
        ("C1", "zero-noise fidelity", c1),
        ("C2", "rule table coverage", c2),
        ("C3", "noise state machine soundness", c3),
        ("C5", "concurrent/sequential equivalence", c5),
        ("C6", "scalability and liveness", c6),
        ("C7", "noise-tolerance shape", c7),
        ("C8", "durability and replay", c8),
    ];
    let mut results: BTreeMap<&str, (&str, Verdict, Duration)> = BTreeMap::new();
    for (name, title, f) in criteria {
        if !run(name) {
            continue;
        }
        let start = Instant::now();
        let v = f(&mut gating);
        results.insert(name, (title, v, start.elapsed()));
    }
    if run("C4") {
        let v = Verdict::new(
            gating.violations.is_empty() && gating.intervals > 0,
            format!(
                "{} runs, {} matched intervals, {} snapshots inside an interval{}",
                gating.runs,
                gating.intervals,
                gating.violations.len(),
                gating.violations.first().map(|v| format!("; first: {v}")).unwrap_or_default()
            ),
        );
        results.insert("C4", ("content gating", v, Duration::ZERO));
    }
    let mut failed = 0;
    for (name, (title, v, took)) in &results {
        if !v.pass {
            failed += 1;
        }
        println!("{} {name} {title} ({:.1}s): {}", if v.pass { "PASS" } else { "FAIL" }, took.as_secs_f64(), v.detail);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

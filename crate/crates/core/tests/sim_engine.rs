use std::sync::Arc;

use poi_engine::model::Anomaly;
use poi_engine::runtime::{run_batch, sequenced, EngineConfig, OutputPaths};
use poi_engine::sim::{generate, inject_noise, score, SimConfig};

fn run(cfg: &SimConfig) -> poi_engine::sim::AccuracyReport {
    let g = generate(cfg).unwrap();
    let events = inject_noise(&g.stream, cfg);
    let engine = EngineConfig {
        max_level_concurrency: cfg.max_level_concurrency,
        noise_filter_window: cfg.noise_filter_window,
        profile: cfg.profile,
        ..Default::default()
    };
    let out = run_batch(sequenced(events.iter().map(|e| e.encode())), &engine, Arc::new(g.catalog), &OutputPaths::default())
        .unwrap();
    assert!(out.stats.drained);
    let anomalies: Vec<Anomaly> = out.collected.anomalies.iter().map(|r| r.anomaly.clone()).collect();
    score(&g.truth, &out.collected.humans, &anomalies)
}

#[test]
fn zero_noise_airport_is_exact() {
    let r = run(&SimConfig::airport());
    assert!(r.is_perfect(), "{r:#?}");
}

#[test]
fn zero_noise_retail_is_exact() {
    let r = run(&SimConfig::retail());
    assert!(r.is_perfect(), "{r:#?}");
}

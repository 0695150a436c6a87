//! Noise injection over a clean stream.
//!
//! Random draws are made in a fixed pattern per block and per frame, whatever
//! the noise parameters, so two runs that differ only in noise levels corrupt
//! nested sets of events. That keeps accuracy sweeps smooth across cells.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{HandNoise, SimConfig};
use super::generate::CleanStream;
use crate::model::{Event, EventKind, ObjectId, Timestamp};

const NOISE_STREAM: u64 = 1;

fn noise_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(NOISE_STREAM);
    rng
}

/// Corrupts hand events and content frames. Ground truth is untouched.
pub fn inject_noise(stream: &CleanStream, cfg: &SimConfig) -> Vec<Event> {
    let mut rng = noise_rng(cfg.seed);
    let mut events: Vec<Option<Event>> = stream.events.iter().cloned().map(Some).collect();
    let mut extra: Vec<Event> = Vec::new();
    let half_tick = cfg.tick / 2;
    let p_obj = cfg.noisy_obj_detect_prob;
    let universe = cfg.n_objects.max(1) as u64;

    for block in &stream.blocks {
        // Hand events.
        let u: f64 = rng.gen();
        let missed_coin: bool = rng.gen();
        let side_coin: bool = rng.gen();
        if u < cfg.noisy_hand_event_pdf {
            let missed = match cfg.hand_noise {
                HandNoise::Both => missed_coin,
                HandNoise::Missed => true,
                HandNoise::Spurious => false,
            };
            if missed {
                events[if side_coin { block.hand_in } else { block.hand_out }] = None;
            } else if side_coin {
                // A bounced detection just before the real hand-in.
                let t = stream.events[block.hand_in].time.0 - half_tick;
                extra.push(Event { time: Timestamp(t), kind: EventKind::HandIn(block.human, block.storage) });
            } else {
                // A stray hand-out once the interaction is over.
                let t = stream.events[block.after.end - 1].time.0 + half_tick;
                extra.push(Event { time: Timestamp(t), kind: EventKind::HandOut(block.human, block.storage) });
            }
        }

        // Content frames: the `k` lowest-ranked frames of the block are noisy.
        let frames: Vec<usize> = block.frames().collect();
        let k = ((cfg.max_noisy_content_perc / 100.0) * frames.len() as f64 + 1e-9).floor() as usize;
        let mut ranked: Vec<(f64, usize)> = frames.iter().map(|i| (rng.gen::<f64>(), *i)).collect();
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0));
        let noisy: BTreeSet<usize> = ranked.iter().take(k).map(|(_, i)| *i).collect();
        for i in frames {
            let Some(Event { kind: EventKind::StorageUpdate(_, objects), .. }) = events[i].as_mut() else {
                continue;
            };
            let false_id = ObjectId(rng.gen_range(1..=universe));
            let flips: Vec<(ObjectId, f64)> = objects.iter().map(|o| (*o, rng.gen::<f64>())).collect();
            let add_draw: f64 = rng.gen();
            if !noisy.contains(&i) {
                continue;
            }
            for (o, d) in flips {
                if d < p_obj {
                    objects.remove(&o);
                }
            }
            if add_draw < p_obj && !stream_contains(&stream.events[i], false_id) {
                objects.insert(false_id);
            }
        }
    }

    let mut out: Vec<Event> = events.into_iter().flatten().chain(extra).collect();
    out.sort_by_key(|e| e.time);
    out
}

fn stream_contains(frame: &Event, o: ObjectId) -> bool {
    matches!(&frame.kind, EventKind::StorageUpdate(_, objects) if objects.contains(&o))
}

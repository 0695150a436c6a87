//! Clean event generation.
//!
//! Humans are admitted in id order whenever the concurrency budget allows
//! and the entry draw succeeds; otherwise a random active human performs
//! its next behavior. Every physical interaction is emitted as one
//! contiguous block: `W + 2` content frames, the hand-in, the hand-out and
//! another `W + 2` frames, so the noise filter always has a full window on
//! both sides and blocks never overlap in time.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

use rand::seq::IteratorRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{InvalidConfig, SimAction, SimConfig};
use super::truth::{GroundTruth, TruthRecorder};
use crate::inference::{Catalog, ProfileKind};
use crate::model::{Action, Event, EventKind, EventType, HumanId, OBlob, ObjectId, StorageId, Timestamp};

/// The retail clerk who puts the shelves up and takes them down.
pub const CLERK: HumanId = HumanId(0);

/// Position of one interaction's events in the clean stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub human: HumanId,
    pub storage: StorageId,
    pub before: Range<usize>,
    pub hand_in: usize,
    pub hand_out: usize,
    pub after: Range<usize>,
}

impl Block {
    pub fn frames(&self) -> impl Iterator<Item = usize> {
        self.before.clone().chain(self.after.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CleanStream {
    pub events: Vec<Event>,
    pub blocks: Vec<Block>,
}

#[derive(Debug, Clone)]
pub struct Generated {
    pub stream: CleanStream,
    pub truth: GroundTruth,
    pub catalog: Catalog,
}

#[derive(Debug)]
struct Visitor {
    id: HumanId,
    bins: Vec<StorageId>,
    /// Belongings brought in (airport) that are still carried.
    carried_own: BTreeSet<ObjectId>,
    /// Anything else carried: taken objects or products.
    carried_other: BTreeSet<ObjectId>,
    /// Objects this human has put down first.
    owned: BTreeSet<ObjectId>,
    leave: BTreeSet<ObjectId>,
    remaining: usize,
}

struct World<'a> {
    cfg: &'a SimConfig,
    rng: ChaCha8Rng,
    events: Vec<Event>,
    blocks: Vec<Block>,
    t: u64,
    content: BTreeMap<StorageId, BTreeSet<ObjectId>>,
    bin_owner: BTreeMap<StorageId, HumanId>,
    location: BTreeMap<ObjectId, StorageId>,
    home: BTreeMap<ObjectId, StorageId>,
    truth: TruthRecorder,
    live: usize,
}

impl World<'_> {
    fn push(&mut self, kind: EventKind) -> usize {
        self.t += self.cfg.tick;
        self.events.push(Event { time: Timestamp(self.t), kind });
        self.events.len() - 1
    }

    fn frames(&mut self, s: StorageId) -> Range<usize> {
        let start = self.events.len();
        for _ in 0..self.cfg.noise_filter_window + 2 {
            let objects = self.content[&s].clone();
            self.push(EventKind::StorageUpdate(s, objects));
        }
        start..self.events.len()
    }

    fn interact(&mut self, h: HumanId, s: StorageId, action: Action, o: ObjectId) {
        let before = self.frames(s);
        let hand_in = self.push(EventKind::HandIn(h, s));
        let hand_out = self.push(EventKind::HandOut(h, s));
        let content = self.content.get_mut(&s).expect("live storage");
        match action {
            Action::Add => {
                content.insert(o);
                self.location.insert(o, s);
            }
            Action::Remove => {
                content.remove(&o);
                self.location.remove(&o);
            }
        }
        let after = self.frames(s);
        let t_out = self.events[hand_out].time;
        self.truth.interaction(h, t_out, action, o, s);
        self.blocks.push(Block { human: h, storage: s, before, hand_in, hand_out, after });
    }

    fn instantiate(&mut self, s: StorageId, h: HumanId, stock: BTreeSet<ObjectId>) {
        self.push(EventKind::StorageInstantiate(s, h));
        for o in &stock {
            self.location.insert(*o, s);
        }
        self.content.insert(s, stock);
        self.bin_owner.insert(s, h);
        self.truth.instantiate(h, s);
        self.live += 1;
    }

    fn give_back(&mut self, s: StorageId, h: HumanId) {
        self.push(EventKind::StorageReturn(s, h));
        for o in self.content.remove(&s).unwrap_or_default() {
            self.location.remove(&o);
        }
        self.bin_owner.remove(&s);
        self.live -= 1;
    }

    fn enter(&mut self, h: HumanId) {
        self.push(EventKind::HumanEnter(h));
        self.truth.enter(h);
        self.live += 1;
    }

    fn exit(&mut self, v: &Visitor) {
        for s in &v.bins {
            if self.bin_owner.get(s) == Some(&v.id) {
                self.give_back(*s, v.id);
            }
        }
        let i = self.push(EventKind::HumanExit(v.id));
        self.truth.exit(v.id, self.events[i].time);
        self.live -= 1;
    }

    fn live_bins(&self) -> impl Iterator<Item = StorageId> + '_ {
        self.content.keys().copied()
    }

    fn pick<T: Copy>(&mut self, items: impl Iterator<Item = T>) -> Option<T> {
        items.choose(&mut self.rng)
    }

    /// One airport behavior. Returns false if it is impossible right now.
    fn airport(&mut self, v: &mut Visitor, action: SimAction) -> bool {
        let own_bins: Vec<StorageId> = self.live_bins().filter(|s| self.bin_owner[s] == v.id).collect();
        let other_bins: Vec<StorageId> = self.live_bins().filter(|s| self.bin_owner[s] != v.id).collect();
        let placeable: Vec<ObjectId> =
            v.owned.iter().filter(|o| self.location.contains_key(*o) && !v.leave.contains(*o)).copied().collect();
        match action {
            SimAction::Divest | SimAction::DivestOtherBin => {
                let Some(o) = self.pick(v.carried_own.iter().copied()) else { return false };
                let (preferred, otherwise) =
                    if action == SimAction::Divest { (&own_bins, &other_bins) } else { (&other_bins, &own_bins) };
                let targets = if preferred.is_empty() { otherwise } else { preferred };
                let Some(s) = self.pick(targets.iter().copied()) else { return false };
                v.carried_own.remove(&o);
                v.owned.insert(o);
                self.interact(v.id, s, Action::Add, o);
                true
            }
            SimAction::Collect => {
                let Some(o) = self.pick(placeable.iter().copied()) else { return false };
                let s = self.location[&o];
                v.carried_own.insert(o);
                self.interact(v.id, s, Action::Remove, o);
                true
            }
            SimAction::Move => {
                let Some(o) = self.pick(placeable.iter().copied()) else { return false };
                let from = self.location[&o];
                let Some(to) = self.pick(self.live_bins().filter(|s| *s != from).collect::<Vec<_>>().into_iter()) else {
                    return false;
                };
                self.interact(v.id, from, Action::Remove, o);
                self.interact(v.id, to, Action::Add, o);
                true
            }
            SimAction::TakeOther => {
                let candidates: Vec<ObjectId> =
                    self.location.keys().filter(|o| !v.owned.contains(*o)).copied().collect();
                let Some(o) = self.pick(candidates.into_iter()) else { return false };
                let s = self.location[&o];
                v.carried_other.insert(o);
                self.interact(v.id, s, Action::Remove, o);
                true
            }
            SimAction::Leave => {
                let Some(o) = self.pick(placeable.iter().copied()) else { return false };
                v.leave.insert(o);
                true
            }
            _ => false,
        }
    }

    /// One retail behavior. Returns false if it is impossible right now.
    fn retail(&mut self, v: &mut Visitor, action: SimAction) -> bool {
        match action {
            SimAction::Pick => {
                let Some(o) = self.pick(self.location.keys().copied().collect::<Vec<_>>().into_iter()) else {
                    return false;
                };
                let s = self.location[&o];
                v.carried_other.insert(o);
                self.interact(v.id, s, Action::Remove, o);
                true
            }
            SimAction::Return | SimAction::Misplace => {
                let Some(o) = self.pick(v.carried_other.iter().copied()) else { return false };
                let home = self.home[&o];
                let s = if action == SimAction::Return {
                    home
                } else {
                    let others: Vec<StorageId> = self.live_bins().filter(|s| *s != home).collect();
                    match self.pick(others.into_iter()) {
                        Some(s) => s,
                        None => return false,
                    }
                };
                v.carried_other.remove(&o);
                self.interact(v.id, s, Action::Add, o);
                true
            }
            _ => false,
        }
    }

    fn behave(&mut self, v: &mut Visitor, action: SimAction) -> bool {
        match self.cfg.profile {
            ProfileKind::Airport => self.airport(v, action),
            ProfileKind::Retail => self.retail(v, action),
        }
    }

    /// Advances `v` by one behavior or its departure. Returns true once the
    /// human has left.
    fn step(&mut self, v: &mut Visitor) -> bool {
        if v.remaining > 0 {
            v.remaining -= 1;
            let drawn = sample(&mut self.rng, &self.cfg.action_list, &self.cfg.action_pdf);
            let fallback: &[SimAction] = match self.cfg.profile {
                ProfileKind::Airport => &[SimAction::Divest, SimAction::Collect, SimAction::DivestOtherBin],
                ProfileKind::Retail => &[SimAction::Pick, SimAction::Return],
            };
            for a in std::iter::once(drawn).chain(fallback.iter().copied()) {
                if self.behave(v, a) {
                    break;
                }
            }
            return false;
        }
        // Airport passengers pick up what they did not mean to leave.
        if self.cfg.profile == ProfileKind::Airport && self.airport_collect_remaining(v) {
            return false;
        }
        self.exit(v);
        true
    }

    fn airport_collect_remaining(&mut self, v: &mut Visitor) -> bool {
        let next = v.owned.iter().find(|o| self.location.contains_key(*o) && !v.leave.contains(*o)).copied();
        match next {
            Some(o) => {
                let s = self.location[&o];
                v.carried_own.insert(o);
                self.interact(v.id, s, Action::Remove, o);
                true
            }
            None => false,
        }
    }
}

fn sample<T: Copy>(rng: &mut ChaCha8Rng, items: &[T], pdf: &[f64]) -> T {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (item, p) in items.iter().zip(pdf) {
        acc += p;
        if u < acc {
            return *item;
        }
    }
    // Rounding left a sliver at the top: take the last item with weight.
    let last = pdf.iter().rposition(|p| *p > 0.0).unwrap_or(items.len() - 1);
    items[last]
}

fn bins_of(cfg: &SimConfig, h: u64) -> Vec<StorageId> {
    if cfg.profile != ProfileKind::Airport || cfg.n_humans == 0 {
        return Vec::new();
    }
    (1..=cfg.n_storages as u64).filter(|k| (k - 1) % cfg.n_humans as u64 == h - 1).map(StorageId).collect()
}

fn catalog_for(cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Catalog {
    let mut catalog = Catalog::default();
    for j in 1..=cfg.n_objects as u64 {
        let mut blob = OBlob { id: ObjectId(j), characteristics: BTreeMap::new() };
        match cfg.profile {
            ProfileKind::Airport => {
                let owner = HumanId((j - 1) % cfg.n_humans.max(1) as u64 + 1);
                blob.characteristics.insert("carried_by".into(), owner.to_string());
            }
            ProfileKind::Retail => {
                let shelf = StorageId((j - 1) % cfg.n_storages.max(1) as u64 + 1);
                blob.characteristics.insert("price".into(), rng.gen_range(1..=20).to_string());
                catalog.shelves.entry(shelf).or_default().insert(ObjectId(j));
            }
        }
        catalog.objects.insert(ObjectId(j), blob);
    }
    catalog
}

/// Generates a clean stream and its ground truth. Deterministic in the config.
pub fn generate(cfg: &SimConfig) -> Result<Generated, InvalidConfig> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let catalog = catalog_for(cfg, &mut rng);
    let home: BTreeMap<ObjectId, StorageId> =
        catalog.shelves.iter().flat_map(|(s, objs)| objs.iter().map(move |o| (*o, *s))).collect();
    let prices = catalog.objects.keys().filter_map(|o| catalog.price(*o).map(|p| (*o, p))).collect();
    let mut world = World {
        cfg,
        rng,
        events: Vec::new(),
        blocks: Vec::new(),
        t: 0,
        content: BTreeMap::new(),
        bin_owner: BTreeMap::new(),
        location: BTreeMap::new(),
        home: home.clone(),
        truth: TruthRecorder::new(cfg.profile, home, prices),
        live: 0,
    };

    let retail = cfg.profile == ProfileKind::Retail && cfg.n_humans > 0;
    if retail {
        world.enter(CLERK);
        for (s, stock) in &catalog.shelves {
            world.instantiate(*s, CLERK, stock.clone());
        }
    }

    let w_enter = cfg.event_weight(EventType::HumanEnter);
    let w_act = cfg.event_weight(EventType::HandIn);
    let p_enter = if w_enter + w_act > 0.0 { w_enter / (w_enter + w_act) } else { 0.5 };

    let mut next_human = 1u64;
    let mut active: Vec<Visitor> = Vec::new();
    loop {
        let waiting = next_human <= cfg.n_humans as u64;
        if !waiting && active.is_empty() {
            break;
        }
        let bins = if waiting { bins_of(cfg, next_human) } else { Vec::new() };
        let fits = waiting && world.live + 1 + bins.len() <= cfg.max_level_concurrency;
        let enter = fits && (active.is_empty() || world.rng.gen_bool(p_enter));
        if enter {
            let h = HumanId(next_human);
            next_human += 1;
            world.enter(h);
            for s in &bins {
                world.instantiate(*s, h, BTreeSet::new());
            }
            let carried_own = match cfg.profile {
                ProfileKind::Airport => catalog
                    .objects
                    .values()
                    .filter(|b| b.characteristics.get("carried_by") == Some(&h.to_string()))
                    .map(|b| b.id)
                    .collect(),
                ProfileKind::Retail => BTreeSet::new(),
            };
            let remaining = world.rng.gen_range(1..=cfg.max_interaction.max(1));
            active.push(Visitor {
                id: h,
                bins,
                carried_own,
                carried_other: BTreeSet::new(),
                owned: BTreeSet::new(),
                leave: BTreeSet::new(),
                remaining,
            });
        } else if !active.is_empty() {
            let i = world.rng.gen_range(0..active.len());
            let mut v = active.swap_remove(i);
            if !world.step(&mut v) {
                active.push(v);
            }
        } else {
            return Err(InvalidConfig(format!("human {next_human} can never be admitted under the concurrency cap")));
        }
    }
    if retail {
        let shelves: Vec<StorageId> = world.content.keys().copied().collect();
        for s in shelves {
            world.give_back(s, CLERK);
        }
        let i = world.push(EventKind::HumanExit(CLERK));
        let t = world.events[i].time;
        world.truth.exit(CLERK, t);
    }

    Ok(Generated {
        stream: CleanStream { events: world.events, blocks: world.blocks },
        truth: world.truth.finish(),
        catalog,
    })
}

/// Largest number of simultaneously live entities along a stream.
pub fn peak_live(events: &[Event]) -> usize {
    let (mut live, mut peak) = (0usize, 0usize);
    for e in events {
        match e.kind {
            EventKind::HumanEnter(_) | EventKind::StorageInstantiate(..) => live += 1,
            EventKind::HumanExit(_) | EventKind::StorageReturn(..) => live = live.saturating_sub(1),
            _ => {}
        }
        peak = peak.max(live);
    }
    peak
}

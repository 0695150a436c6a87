//! Per-entity handler logic, free of any messaging.
//!
//! [`StorageCore`] is what a storage worker runs over its broadcast stream;
//! [`HumanCore`] is what a human worker runs, given the replies it obtained
//! from storages. The concurrent runtime and the sequential oracle both drive
//! these, so they differ only in how data moves between entities.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::inference::{self, Catalog, InferenceOutcome, Profile, Trigger};
use crate::interaction::{self, HandOutOutcome, NoSnapshots, UpdateOutcome};
use crate::model::{
    link_ownership, ContentSnapshot, Event, EventKind, HumEnt, HumanId, ObjectId, StoEnt, StorageId, Timestamp,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AfterState {
    /// The window is closed; `Ok` with the filtered content or `Err` when no
    /// usable snapshot was collected.
    Closed(Result<BTreeSet<ObjectId>, NoSnapshots>),
    /// More snapshots may still arrive.
    Open,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StorageArchive {
    #[serde(flatten)]
    pub entity: StoEnt,
    /// Dispatch index of the binding record.
    pub bound_at: u64,
    /// Records observed while live, counting the binding and releasing ones.
    pub observed: u64,
    pub rejected_updates: u64,
    /// Object owners registered by humans after their hand-outs here.
    pub registered_owners: BTreeMap<ObjectId, HumanId>,
}

#[derive(Debug, Clone)]
pub struct StorageCore {
    pub sto: StoEnt,
    bound_at: u64,
    observed: u64,
    rejected_updates: u64,
    /// Registered owners with the dispatch index of the registering hand-out.
    registry: BTreeMap<ObjectId, (u64, HumanId)>,
    /// Every hand-out seen here, and whether that hand was still marked inside.
    hand_outs: BTreeMap<(Timestamp, HumanId), bool>,
    returned: bool,
    ended: bool,
}

impl StorageCore {
    /// Storage bound by `StorageInstantiate(S, H)` at dispatch index `bound_at`.
    pub fn new(id: StorageId, by: HumanId, time: Timestamp, bound_at: u64, catalog: &Catalog) -> Self {
        let mut sto = StoEnt::new(id, time);
        sto.ownership.add_owner(by.entity());
        if let Some(stock) = catalog.shelves.get(&id) {
            for o in stock {
                sto.ownership.add_owned(o.entity());
            }
        }
        Self {
            sto,
            bound_at,
            observed: 0,
            rejected_updates: 0,
            registry: BTreeMap::new(),
            hand_outs: BTreeMap::new(),
            returned: false,
            ended: false,
        }
    }

    pub fn id(&self) -> StorageId {
        self.sto.id
    }

    pub fn is_returned(&self) -> bool {
        self.returned
    }

    /// Applies one broadcast record. Returns true when it was the releasing record.
    pub fn on_event(&mut self, event: &Event) -> bool {
        self.observed += 1;
        let me = self.sto.id;
        match &event.kind {
            EventKind::StorageUpdate(s, objects) if *s == me => {
                let outcome = interaction::handle_storage_update(&mut self.sto, event.time, objects.clone());
                if outcome != UpdateOutcome::Updated {
                    self.rejected_updates += 1;
                }
            }
            EventKind::HandIn(h, s) if *s == me => interaction::storage_hand_in(&mut self.sto, *h, event.time),
            EventKind::HandOut(h, s) if *s == me => {
                let inside = self.sto.in_flight.contains_key(h);
                self.hand_outs.entry((event.time, *h)).or_insert(inside);
                interaction::storage_hand_out(&mut self.sto, *h);
            }
            EventKind::HumanExit(h) => interaction::storage_human_exit(&mut self.sto, *h),
            EventKind::StorageReturn(s, _) if *s == me => {
                self.sto.t_return = Some(event.time);
                self.returned = true;
                return true;
            }
            _ => {}
        }
        false
    }

    /// Marks the end of input; open windows close with what they have.
    pub fn end_of_stream(&mut self) {
        self.ended = true;
    }

    pub fn content_before(&self, t_in: Timestamp, window: usize) -> Result<ContentSnapshot, NoSnapshots> {
        interaction::content_before(&self.sto, t_in, window).map(|objects| ContentSnapshot { time: t_in, objects })
    }

    /// State of the after-window of `human`'s hand-out at `t_out`. A hand-out
    /// whose hand-in this storage no longer holds is answered with an error,
    /// so the human does not pair it with a stale buffered hand-in.
    pub fn after_state(&self, human: HumanId, t_out: Timestamp, window: usize) -> AfterState {
        match self.hand_outs.get(&(t_out, human)) {
            Some(true) => {}
            Some(false) => return AfterState::Closed(Err(NoSnapshots)),
            None if self.returned || self.ended => return AfterState::Closed(Err(NoSnapshots)),
            None => return AfterState::Open,
        }
        if interaction::after_window_full(&self.sto, t_out, window) {
            return AfterState::Closed(interaction::content_after(&self.sto, t_out, window));
        }
        if self.returned {
            // The window straddles the storage's return: not trusted.
            return AfterState::Closed(Err(NoSnapshots));
        }
        if self.ended {
            return AfterState::Closed(interaction::content_after(&self.sto, t_out, window));
        }
        AfterState::Open
    }

    /// Partial after-content, used when a live wait runs out.
    pub fn after_partial(&self, t_out: Timestamp, window: usize) -> Result<BTreeSet<ObjectId>, NoSnapshots> {
        interaction::content_after(&self.sto, t_out, window)
    }

    /// Objects the storage declares it stocks.
    pub fn owned_objects(&self) -> BTreeSet<ObjectId> {
        self.sto.ownership.owns.iter().filter_map(|e| e.as_object()).collect()
    }

    /// The earliest interaction determines ownership, whatever order the
    /// registrations arrive in.
    pub fn register_owner(&mut self, human: HumanId, objects: &[ObjectId], as_of: u64) {
        for o in objects {
            let slot = self.registry.entry(*o).or_insert((as_of, human));
            if as_of < slot.0 {
                *slot = (as_of, human);
            }
        }
    }

    pub fn owner_of(&self, object: ObjectId) -> Option<HumanId> {
        self.registry.get(&object).map(|(_, h)| *h)
    }

    pub fn archive(&self) -> StorageArchive {
        StorageArchive {
            entity: self.sto.clone(),
            bound_at: self.bound_at,
            observed: self.observed,
            rejected_updates: self.rejected_updates,
            registered_owners: self.registry.iter().map(|(o, (_, h))| (*o, *h)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HumanArchive {
    #[serde(flatten)]
    pub entity: HumEnt,
    pub bound_at: u64,
    pub observed: u64,
    pub noisy_hand_outs: u64,
    pub failed_fetches: u64,
}

/// Result of a matched or rejected hand-out on the human side.
#[derive(Debug, Clone, Default)]
pub struct HandOutEffects {
    pub matched: bool,
    pub inference: InferenceOutcome,
}

pub struct HumanCore {
    pub hum: HumEnt,
    profile: Arc<dyn Profile>,
    bound_at: u64,
    observed: u64,
    noisy_hand_outs: u64,
    failed_fetches: u64,
}

impl HumanCore {
    pub fn new(id: HumanId, time: Timestamp, bound_at: u64, profile: Arc<dyn Profile>) -> Self {
        let mut hum = HumEnt::new(id, time);
        profile.init_human(&mut hum);
        Self { hum, profile, bound_at, observed: 0, noisy_hand_outs: 0, failed_fetches: 0 }
    }

    pub fn id(&self) -> HumanId {
        self.hum.id
    }

    /// Bookkeeping shared by every broadcast record the human observes.
    pub fn observe(&mut self, event: &Event) {
        self.observed += 1;
        if let EventKind::StorageInstantiate(s, h) = event.kind {
            if h == self.hum.id {
                // The storage side keeps its own half of the link.
                let mut storage_side = crate::model::Ownership::default();
                link_ownership(h.entity(), &mut self.hum.ownership, s.entity(), &mut storage_side);
            }
        }
    }

    pub fn on_hand_in(&mut self, storage: StorageId, before: Option<ContentSnapshot>) {
        if before.is_none() {
            self.failed_fetches += 1;
        }
        interaction::record_hand_in(&mut self.hum, storage, before);
    }

    pub fn on_hand_out(
        &mut self,
        storage: StorageId,
        time: Timestamp,
        after: Option<(ContentSnapshot, BTreeSet<ObjectId>)>,
    ) -> HandOutEffects {
        let (snapshot, storage_owns) = match after {
            Some((snap, owns)) => (Some(snap), owns),
            None => {
                self.failed_fetches += 1;
                (None, BTreeSet::new())
            }
        };
        match interaction::resolve_hand_out(&mut self.hum, storage, snapshot) {
            HandOutOutcome::Noisy => {
                self.noisy_hand_outs += 1;
                HandOutEffects::default()
            }
            HandOutOutcome::Matched { added, removed } => {
                let touched = interaction::interaction_fsm(&mut self.hum, time, storage, &added, &removed);
                let inference = if touched.is_empty() {
                    InferenceOutcome::default()
                } else {
                    let trigger = Trigger::HandOut { time, storage, storage_owns };
                    inference::run(self.profile.as_ref(), &mut self.hum, &touched, &trigger)
                };
                HandOutEffects { matched: true, inference }
            }
        }
    }

    pub fn on_exit(&mut self, time: Timestamp) -> InferenceOutcome {
        self.hum.t_exit = Some(time);
        let out = inference::run(self.profile.as_ref(), &mut self.hum, &[], &Trigger::HumanExit { time });
        interaction::flush_buffers(&mut self.hum);
        out
    }

    pub fn archive(&self) -> HumanArchive {
        HumanArchive {
            entity: self.hum.clone(),
            bound_at: self.bound_at,
            observed: self.observed,
            noisy_hand_outs: self.noisy_hand_outs,
            failed_fetches: self.failed_fetches,
        }
    }
}

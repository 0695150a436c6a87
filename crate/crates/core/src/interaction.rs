//! Storage-content gating, noise filtering, buffer association and the
//! interaction state machine.
//!
//! Storage-side functions run inside the storage's worker, human-side ones in
//! the human's worker. Nothing here does any messaging.

use std::collections::BTreeSet;

use crate::model::{
    Action, ActionRecord, ContentSnapshot, HumEnt, HumanId, InteractionKey, ObjectId, StoEnt, StorageId, Timestamp,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateOutcome {
    Updated,
    /// A hand is inside the storage; the frame is not trusted.
    RejectedGated,
    /// Older than the newest stored snapshot.
    RejectedStale,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("no content snapshots on the requested side")]
pub struct NoSnapshots;

/// Appends a content snapshot unless the storage is gated by an interaction.
pub fn handle_storage_update(sto: &mut StoEnt, time: Timestamp, objects: BTreeSet<ObjectId>) -> UpdateOutcome {
    if !sto.update {
        return UpdateOutcome::RejectedGated;
    }
    if sto.content.last().is_some_and(|last| last.time > time) {
        return UpdateOutcome::RejectedStale;
    }
    sto.content.push(ContentSnapshot { time, objects });
    UpdateOutcome::Updated
}

fn refresh_flags(sto: &mut StoEnt) {
    sto.update = sto.in_flight.is_empty();
    sto.in_use = !sto.in_flight.is_empty();
}

/// A hand of `human` reached into the storage.
pub fn storage_hand_in(sto: &mut StoEnt, human: HumanId, time: Timestamp) {
    sto.in_flight.insert(human, time);
    refresh_flags(sto);
}

/// All hands of `human` left the storage.
///
/// Besides the human's own entry, any entry that reached in before it is
/// dropped: such an entry outlived a complete interaction that started after
/// it and can only be a hand-in whose hand-out was never reported.
pub fn storage_hand_out(sto: &mut StoEnt, human: HumanId) {
    if let Some(t_in) = sto.in_flight.remove(&human) {
        sto.in_flight.retain(|_, t| *t >= t_in);
    }
    refresh_flags(sto);
}

/// A human left the monitored space; any hand of theirs still marked inside is stale.
pub fn storage_human_exit(sto: &mut StoEnt, human: HumanId) {
    if sto.in_flight.remove(&human).is_some() {
        refresh_flags(sto);
    }
}

/// Objects present in a strict majority of the given snapshots.
pub fn majority_filter<'a, I>(snapshots: I) -> BTreeSet<ObjectId>
where
    I: IntoIterator<Item = &'a ContentSnapshot>,
{
    let mut counts = std::collections::BTreeMap::<ObjectId, usize>::new();
    let mut m = 0usize;
    for snap in snapshots {
        m += 1;
        for o in &snap.objects {
            *counts.entry(*o).or_default() += 1;
        }
    }
    counts.into_iter().filter(|(_, c)| 2 * c > m).map(|(o, _)| o).collect()
}

/// Majority vote over the last `window` snapshots strictly before `time`.
pub fn content_before(sto: &StoEnt, time: Timestamp, window: usize) -> Result<BTreeSet<ObjectId>, NoSnapshots> {
    let end = sto.content.partition_point(|s| s.time < time);
    if end == 0 {
        return Err(NoSnapshots);
    }
    let start = end.saturating_sub(window.max(1));
    Ok(majority_filter(&sto.content[start..end]))
}

/// Snapshots strictly after `time`, at most `window` of them.
pub fn snapshots_after(sto: &StoEnt, time: Timestamp, window: usize) -> &[ContentSnapshot] {
    let start = sto.content.partition_point(|s| s.time <= time);
    let end = (start + window.max(1)).min(sto.content.len());
    &sto.content[start..end]
}

/// Majority vote over whatever post-`time` snapshots exist, up to `window`.
pub fn content_after(sto: &StoEnt, time: Timestamp, window: usize) -> Result<BTreeSet<ObjectId>, NoSnapshots> {
    let snaps = snapshots_after(sto, time, window);
    if snaps.is_empty() {
        return Err(NoSnapshots);
    }
    Ok(majority_filter(snaps))
}

/// True once a full window of post-`time` snapshots has been collected.
pub fn after_window_full(sto: &StoEnt, time: Timestamp, window: usize) -> bool {
    snapshots_after(sto, time, window).len() >= window.max(1)
}

/// Stores the fetched before-content for a hand-in, replacing any stale entry
/// under the same key. A failed fetch leaves no entry.
pub fn record_hand_in(human: &mut HumEnt, storage: StorageId, fetched: Option<ContentSnapshot>) {
    let key = InteractionKey::new(human.id, storage);
    match fetched {
        Some(snapshot) => {
            human.buffer_before.insert(key, snapshot);
        }
        None => {
            human.buffer_before.remove(&key);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HandOutOutcome {
    Matched { added: BTreeSet<ObjectId>, removed: BTreeSet<ObjectId> },
    Noisy,
}

/// Pairs a hand-out with its buffered hand-in.
///
/// On a match both buffers are popped into the content scratch slots and the
/// set differences are returned. Without a matching hand-in, or without usable
/// after-content, the interaction is discarded and both buffer entries for the
/// key are flushed.
pub fn resolve_hand_out(human: &mut HumEnt, storage: StorageId, after: Option<ContentSnapshot>) -> HandOutOutcome {
    let key = InteractionKey::new(human.id, storage);
    if let Some(snapshot) = after {
        human.buffer_after.insert(key, snapshot);
    }
    let before = human.buffer_before.remove(&key);
    let after = human.buffer_after.remove(&key);
    let (Some(before), Some(after)) = (before, after) else {
        return HandOutOutcome::Noisy;
    };
    let added = after.objects.difference(&before.objects).copied().collect();
    let removed = before.objects.difference(&after.objects).copied().collect();
    human.content_before = Some(before);
    human.content_after = Some(after);
    HandOutOutcome::Matched { added, removed }
}

/// Appends one elementary action per displaced object and returns the objects
/// touched, in id order.
pub fn interaction_fsm(
    human: &mut HumEnt,
    time: Timestamp,
    storage: StorageId,
    added: &BTreeSet<ObjectId>,
    removed: &BTreeSet<ObjectId>,
) -> Vec<ObjectId> {
    let mut touched = Vec::new();
    for (set, action) in [(added, Action::Add), (removed, Action::Remove)] {
        for o in set {
            human.action_q.entry(*o).or_default().push(ActionRecord { time, action, storage });
            touched.push(*o);
        }
    }
    touched.sort();
    touched
}

/// Drops every buffered half-interaction; run when the human leaves.
pub fn flush_buffers(human: &mut HumEnt) {
    human.buffer_before.clear();
    human.buffer_after.clear();
}

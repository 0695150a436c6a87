//! Airport checkpoint rules.
//!
//! A hand-out is matched on the last two actions of the object's queue (the
//! first slot is empty for a queue of length one); an exit is matched on the
//! last action alone. Ownership predicates are evaluated from the human's own
//! ownership list.

use super::{Control, Decision, InferError, Profile, ProfileKind, Task, Trigger};
use crate::model::{Action, ActionRecord, HumEnt, ObjectId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pattern {
    /// Queue holds exactly one action.
    First(Action),
    /// Previous and latest action.
    Pair(Action, Action),
    /// Exit-triggered, latest action only.
    Exit(Action),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AirportRule {
    pub id: &'static str,
    pub pattern: Pattern,
    /// Does the human own the object? `None` matches either.
    pub object_own: Option<bool>,
    /// Does the human own the storage of the previous action? Only for pairs.
    pub from_own: Option<bool>,
    /// Does the human own the storage of the latest action?
    pub at_own: bool,
    pub label: &'static str,
    pub control: Control,
    pub tasks: &'static [Task],
}

use Action::{Add as A, Remove as R};
use Control::{Set, SetAndTest, Test};
use Pattern::{Exit, First, Pair};
use Task::{AppendOwnership, RaiseAlarm, WarnHuman};

const fn rule(
    id: &'static str,
    pattern: Pattern,
    object_own: Option<bool>,
    from_own: Option<bool>,
    at_own: bool,
    label: &'static str,
    control: Control,
    tasks: &'static [Task],
) -> AirportRule {
    AirportRule { id, pattern, object_own, from_own, at_own, label, control, tasks }
}

const YES: Option<bool> = Some(true);
const NO: Option<bool> = Some(false);
const ANY: Option<bool> = None;

#[rustfmt::skip]
pub const AIRPORT_RULES: &[AirportRule] = &[
    rule("A01", First(A), ANY, ANY, true,  "Divest own object in own Bin", Set, &[AppendOwnership]),
    rule("A02", First(A), ANY, ANY, false, "Divest own object in other's Bin", SetAndTest, &[AppendOwnership, RaiseAlarm]),
    rule("A03", First(R), NO, ANY, false,  "Taking other's object from other's Bin", Test, &[RaiseAlarm]),
    rule("A04", First(R), NO, ANY, true,   "Taking other's object from own Bin", Test, &[RaiseAlarm]),
    rule("A05", Pair(R, A), YES, YES, true,  "Move own object from own Bin to own Bin", Test, &[]),
    rule("A06", Pair(R, A), YES, YES, false, "Move own object from own Bin to other's Bin", Test, &[RaiseAlarm]),
    rule("A07", Pair(R, A), YES, NO, true,   "Move own object from other's Bin to own Bin", Test, &[RaiseAlarm]),
    rule("A08", Pair(R, A), YES, NO, false,  "Move own object from other's Bin to other's Bin", Test, &[RaiseAlarm]),
    rule("A09", Pair(R, A), NO, YES, true,   "Move other's object from own Bin to own Bin", Test, &[RaiseAlarm]),
    rule("A10", Pair(R, A), NO, YES, false,  "Move other's object from own Bin to other's Bin", Test, &[RaiseAlarm]),
    rule("A11", Pair(R, A), NO, NO, true,    "Move other's object from other's Bin to own Bin", Test, &[RaiseAlarm]),
    rule("A12", Pair(R, A), NO, NO, false,   "Move other's object from other's Bin to other's Bin", Test, &[RaiseAlarm]),
    rule("A13", Exit(A), YES, ANY, true,  "Left own object in own Bin", Test, &[WarnHuman]),
    rule("A14", Exit(A), YES, ANY, false, "Left own object in other's Bin", Test, &[RaiseAlarm]),
    rule("A15", Exit(A), NO, ANY, true,   "Left other's object in own Bin", Test, &[RaiseAlarm]),
    rule("A16", Exit(A), NO, ANY, false,  "Left other's object in other's Bin", Test, &[RaiseAlarm]),
    rule("A17", Exit(R), YES, ANY, true,  "Collect own object from own Bin", Test, &[]),
    rule("A18", Exit(R), NO, ANY, false,  "Collect other's object from other's Bin", Test, &[RaiseAlarm]),
    rule("A19", Exit(R), NO, ANY, true,   "Collect other's object from own Bin", Test, &[RaiseAlarm]),
    rule("A20", Exit(R), YES, ANY, false, "Collect own object from other's Bin", Test, &[RaiseAlarm]),
    // A removal following an add: the first half of a move or a collection.
    rule("X01", Pair(A, R), ANY, ANY, true,  "MoveFrom: Own Bin", Test, &[]),
    rule("X02", Pair(A, R), ANY, ANY, false, "MoveFrom: Other Bin", Test, &[]),
];

fn matches(rule: &AirportRule, pattern: Pattern, object_own: bool, from_own: Option<bool>, at_own: bool) -> bool {
    rule.pattern == pattern
        && rule.at_own == at_own
        && rule.object_own.is_none_or(|v| v == object_own)
        && match (rule.from_own, from_own) {
            (Some(want), Some(got)) => want == got,
            (Some(_), None) => false,
            (None, _) => true,
        }
}

/// The unique rule for a pattern and predicate combination, if any.
pub fn lookup(pattern: Pattern, object_own: bool, from_own: Option<bool>, at_own: bool) -> Option<&'static AirportRule> {
    let mut hits = AIRPORT_RULES.iter().filter(|r| matches(r, pattern, object_own, from_own, at_own));
    let first = hits.next()?;
    debug_assert!(hits.next().is_none(), "overlapping airport rules for {pattern:?}");
    Some(first)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AirportProfile;

impl Profile for AirportProfile {
    fn kind(&self) -> ProfileKind {
        ProfileKind::Airport
    }

    fn decide(
        &self,
        human: &HumEnt,
        object: ObjectId,
        history: &[ActionRecord],
        trigger: &Trigger,
    ) -> Result<Decision, InferError> {
        let last = history.last().ok_or(InferError::EmptyHistory(object))?;
        let prev = history.len().checked_sub(2).map(|i| history[i]);
        let owns = |e: crate::model::EntityId| human.ownership.owns.contains(&e);
        let (pattern, from_own) = match (trigger, prev) {
            (Trigger::HumanExit { .. }, _) => (Exit(last.action), None),
            (Trigger::HandOut { .. }, None) => (First(last.action), None),
            (Trigger::HandOut { .. }, Some(p)) => (Pair(p.action, last.action), Some(owns(p.storage.entity()))),
        };
        let object_own = owns(object.entity());
        let at_own = owns(last.storage.entity());
        let rule = lookup(pattern, object_own, from_own, at_own).ok_or_else(|| InferError::UnmatchedPattern {
            object,
            pattern: format!("{pattern:?} object_own={object_own} from_own={from_own:?} at_own={at_own}"),
        })?;
        Ok(Decision { rule: rule.id.to_string(), label: rule.label.to_string(), control: rule.control, tasks: rule.tasks.to_vec() })
    }
}

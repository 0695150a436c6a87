//! Data extraction, profile-driven inference and anomaly detection.
//!
//! A profile maps the latest elementary actions on one object to a
//! [`Decision`]: a label, a Set/Test ownership control and a task list. The
//! [`run`] driver appends the inference record and hands the decision to the
//! anomaly detector, which executes the tasks against the human's state.

mod airport;
mod retail;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use airport::{AirportProfile, AirportRule, Pattern, AIRPORT_RULES};
pub use retail::{billing_label, RetailProfile, BILLING_RULE, RETAIL_RULES};

use crate::model::{
    ActionRecord, Anomaly, HumEnt, InferenceRecord, OBlob, ObjectId, RetailLedger, Severity, StorageId, Timestamp,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    Airport,
    Retail,
}

impl ProfileKind {
    pub fn name(self) -> &'static str {
        match self {
            ProfileKind::Airport => "airport",
            ProfileKind::Retail => "retail",
        }
    }
}

impl std::str::FromStr for ProfileKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "airport" => Ok(ProfileKind::Airport),
            "retail" => Ok(ProfileKind::Retail),
            other => Err(format!("unknown inference profile `{other}` (expected airport or retail)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Control {
    Set,
    Test,
    SetAndTest,
    /// The row performs no ownership check.
    NoCheck,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    AppendOwnership,
    RaiseAlarm,
    WarnHuman,
    NotifyCustomerAndStaff,
    IncPurchase,
    DecPurchase,
    IncInspect,
    IncReturn,
    IncMisplace,
    Bill { units: i64, price: i64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub rule: String,
    pub label: String,
    pub control: Control,
    pub tasks: Vec<Task>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum InferError {
    #[error("no action history for {0}")]
    EmptyHistory(ObjectId),
    #[error("no rule matches {pattern} for {object}")]
    UnmatchedPattern { object: ObjectId, pattern: String },
}

/// Product catalogue: object characteristics and which shelf stocks what.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Catalog {
    #[serde(default)]
    pub objects: BTreeMap<ObjectId, OBlob>,
    #[serde(default)]
    pub shelves: BTreeMap<StorageId, BTreeSet<ObjectId>>,
}

impl Catalog {
    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    pub fn price(&self, object: ObjectId) -> Option<i64> {
        self.objects.get(&object)?.characteristics.get("price")?.trim().parse().ok()
    }
}

#[derive(Debug, Clone)]
pub enum Trigger {
    /// A matched hand-out at `time` on `storage`. `storage_owns` is the
    /// storage's declared stock, as returned by the after-content fetch.
    HandOut { time: Timestamp, storage: StorageId, storage_owns: BTreeSet<ObjectId> },
    HumanExit { time: Timestamp },
}

impl Trigger {
    pub fn time(&self) -> Timestamp {
        match self {
            Trigger::HandOut { time, .. } | Trigger::HumanExit { time } => *time,
        }
    }
}

pub trait Profile: Send + Sync {
    fn kind(&self) -> ProfileKind;

    fn decide(&self, human: &HumEnt, object: ObjectId, history: &[ActionRecord], trigger: &Trigger)
        -> Result<Decision, InferError>;

    /// Called once when a human's entity is created.
    fn init_human(&self, _human: &mut HumEnt) {}
}

pub fn profile(kind: ProfileKind, catalog: Arc<Catalog>) -> Arc<dyn Profile> {
    match kind {
        ProfileKind::Airport => Arc::new(AirportProfile),
        ProfileKind::Retail => Arc::new(RetailProfile::new(catalog)),
    }
}

/// Histories the trigger covers: the touched objects for a hand-out, every
/// queue for an exit.
pub fn extract<'a>(
    human: &'a HumEnt,
    touched: &[ObjectId],
    trigger: &Trigger,
) -> Result<Vec<(ObjectId, &'a [ActionRecord])>, InferError> {
    match trigger {
        Trigger::HandOut { .. } => touched
            .iter()
            .map(|o| match human.action_q.get(o) {
                Some(q) if !q.is_empty() => Ok((*o, q.as_slice())),
                _ => Err(InferError::EmptyHistory(*o)),
            })
            .collect(),
        Trigger::HumanExit { .. } => Ok(human
            .action_q
            .iter()
            .filter(|(_, q)| !q.is_empty())
            .map(|(o, q)| (*o, q.as_slice()))
            .collect()),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InferenceOutcome {
    pub decisions: Vec<(ObjectId, Decision)>,
    pub anomalies: Vec<Anomaly>,
    /// Objects whose ownership was set during this batch.
    pub newly_owned: Vec<ObjectId>,
    pub errors: Vec<InferError>,
}

/// Extracts, infers and runs the anomaly detector for one trigger.
pub fn run(profile: &dyn Profile, human: &mut HumEnt, touched: &[ObjectId], trigger: &Trigger) -> InferenceOutcome {
    let mut out = InferenceOutcome::default();
    let batch: Vec<(ObjectId, Vec<ActionRecord>)> = match extract(human, touched, trigger) {
        Ok(b) => b.into_iter().map(|(o, q)| (o, q.to_vec())).collect(),
        Err(e) => {
            log::error!("{}: {e}", human.id);
            out.errors.push(e);
            return out;
        }
    };
    for (object, history) in batch {
        let decision = match profile.decide(human, object, &history, trigger) {
            Ok(d) => d,
            Err(e) => {
                log::warn!("{}: {e}", human.id);
                out.errors.push(e);
                continue;
            }
        };
        let storage = match trigger {
            Trigger::HandOut { storage, .. } => *storage,
            Trigger::HumanExit { .. } => history.last().expect("non-empty history").storage,
        };
        let record = InferenceRecord { time: trigger.time(), label: decision.label.clone(), storage };
        human.inference_q.entry(object).or_default().push(record);
        detect(human, object, storage, trigger.time(), &decision, &mut out);
        out.decisions.push((object, decision));
    }
    out
}

/// Anomaly detector: applies the decision's ownership control and tasks.
fn detect(
    human: &mut HumEnt,
    object: ObjectId,
    storage: StorageId,
    time: Timestamp,
    decision: &Decision,
    out: &mut InferenceOutcome,
) {
    for task in &decision.tasks {
        let severity = match task {
            Task::RaiseAlarm => Severity::Alarm,
            Task::WarnHuman | Task::NotifyCustomerAndStaff => Severity::Warning,
            _ => continue,
        };
        let anomaly = Anomaly { time, human: human.id, object, storage, label: decision.label.clone(), severity };
        human.anomalies.push(anomaly.clone());
        out.anomalies.push(anomaly);
    }

    for task in &decision.tasks {
        match *task {
            Task::AppendOwnership => {
                if matches!(decision.control, Control::Set | Control::SetAndTest) && human.ownership.add_owned(object.entity())
                {
                    out.newly_owned.push(object);
                }
            }
            Task::IncPurchase => counters(human, object).n_purchase += 1,
            Task::DecPurchase => counters(human, object).n_purchase -= 1,
            Task::IncInspect => counters(human, object).n_inspect += 1,
            Task::IncReturn => counters(human, object).n_return += 1,
            Task::IncMisplace => counters(human, object).n_misplace += 1,
            Task::Bill { units, price } => ledger(human).amount += units * price,
            Task::RaiseAlarm | Task::WarnHuman | Task::NotifyCustomerAndStaff => {}
        }
    }
}

fn ledger(human: &mut HumEnt) -> &mut RetailLedger {
    human.retail.get_or_insert_with(RetailLedger::default)
}

fn counters(human: &mut HumEnt, object: ObjectId) -> &mut crate::model::RetailCounters {
    ledger(human).counters.entry(object).or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Action, HumanId};

    fn ar(t: u64, action: Action, k: u64) -> ActionRecord {
        ActionRecord { time: Timestamp(t), action, storage: StorageId(k) }
    }

    #[test]
    fn extract_keeps_exact_sequence() {
        let mut h = HumEnt::new(HumanId(1), Timestamp(0));
        let q: Vec<ActionRecord> = ["[83 - R - 5]", "[101 - A - 4]", "[118 - R - 4]", "[128 - A - 4]", "[136 - R - 4]"]
            .iter()
            .map(|s| s.parse().unwrap())
            .collect();
        h.action_q.insert(ObjectId(11), q.clone());
        h.action_q.insert(ObjectId(3), vec![ar(5, Action::Add, 2)]);
        let trig = Trigger::HandOut { time: Timestamp(136), storage: StorageId(4), storage_owns: BTreeSet::new() };
        let got = extract(&h, &[ObjectId(11)], &trig).unwrap();
        assert_eq!(got.len(), 1);
        let strings: Vec<String> = got[0].1.iter().map(ToString::to_string).collect();
        assert_eq!(strings, ["[83 - R - 5]", "[101 - A - 4]", "[118 - R - 4]", "[128 - A - 4]", "[136 - R - 4]"]);
        let exit = extract(&h, &[], &Trigger::HumanExit { time: Timestamp(200) }).unwrap();
        assert_eq!(exit.len(), 2);
        assert_eq!(extract(&h, &[ObjectId(99)], &trig), Err(InferError::EmptyHistory(ObjectId(99))));
    }

    #[test]
    fn exit_with_no_history_is_empty() {
        let h = HumEnt::new(HumanId(1), Timestamp(0));
        assert!(extract(&h, &[], &Trigger::HumanExit { time: Timestamp(1) }).unwrap().is_empty());
    }

    #[test]
    fn catalog_price_parsing() {
        let json = r#"{"objects":{"O_1":{"id":"O_1","characteristics":{"price":"2","color":"red"}}},"shelves":{"S_1":["O_1"]}}"#;
        let c: Catalog = serde_json::from_str(json).unwrap();
        assert_eq!(c.price(ObjectId(1)), Some(2));
        assert_eq!(c.price(ObjectId(2)), None);
        assert_eq!(c.objects[&ObjectId(1)].characteristics["color"], "red");
    }
}

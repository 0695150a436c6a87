//! The simulator's authoritative record of what every human really did, and
//! the labels, anomalies, ownerships and bills that behavior implies.
//!
//! Labels are derived here from the semantics of each behavior, not by
//! consulting the inference engine, so scoring compares two independent
//! derivations.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::inference::ProfileKind;
use crate::model::{Action, HumanId, ObjectId, Severity, StorageId, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TrueInteraction {
    pub time: Timestamp,
    pub action: Action,
    pub object: ObjectId,
    pub storage: StorageId,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TrueLabel {
    pub time: Timestamp,
    pub object: ObjectId,
    pub storage: StorageId,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TrueAnomaly {
    pub time: Timestamp,
    pub object: ObjectId,
    pub storage: StorageId,
    pub label: String,
    pub severity: Severity,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HumanTruth {
    pub interactions: Vec<TrueInteraction>,
    pub labels: Vec<TrueLabel>,
    pub anomalies: Vec<TrueAnomaly>,
    pub owned_objects: BTreeSet<ObjectId>,
    /// Net units taken per product (retail only).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub units: BTreeMap<ObjectId, i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bill: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub profile: ProfileKind,
    pub humans: BTreeMap<HumanId, HumanTruth>,
}

fn whose(own: bool) -> &'static str {
    if own {
        "own"
    } else {
        "other's"
    }
}

/// Builds ground truth as the generator plays out each behavior.
#[derive(Debug, Clone)]
pub struct TruthRecorder {
    profile: ProfileKind,
    humans: BTreeMap<HumanId, HumanTruth>,
    /// Bins each human instantiated.
    bins: BTreeMap<HumanId, BTreeSet<StorageId>>,
    /// Product placement: which shelf a product belongs on.
    home: BTreeMap<ObjectId, StorageId>,
    prices: BTreeMap<ObjectId, i64>,
}

impl TruthRecorder {
    pub fn new(profile: ProfileKind, home: BTreeMap<ObjectId, StorageId>, prices: BTreeMap<ObjectId, i64>) -> Self {
        Self { profile, humans: BTreeMap::new(), bins: BTreeMap::new(), home, prices }
    }

    pub fn enter(&mut self, human: HumanId) {
        self.humans.entry(human).or_default();
    }

    pub fn instantiate(&mut self, human: HumanId, storage: StorageId) {
        self.bins.entry(human).or_default().insert(storage);
    }

    fn owns_bin(&self, human: HumanId, storage: StorageId) -> bool {
        self.bins.get(&human).is_some_and(|b| b.contains(&storage))
    }

    fn history(&self, human: HumanId, object: ObjectId) -> Vec<TrueInteraction> {
        self.humans[&human].interactions.iter().filter(|i| i.object == object).copied().collect()
    }

    fn emit(&mut self, human: HumanId, time: Timestamp, object: ObjectId, storage: StorageId, label: String, alarm: Option<Severity>) {
        let h = self.humans.get_mut(&human).expect("entered human");
        if let Some(severity) = alarm {
            h.anomalies.push(TrueAnomaly { time, object, storage, label: label.clone(), severity });
        }
        h.labels.push(TrueLabel { time, object, storage, label });
    }

    /// One real change of storage content by `human`, completed at `time`.
    pub fn interaction(&mut self, human: HumanId, time: Timestamp, action: Action, object: ObjectId, storage: StorageId) {
        let rec = TrueInteraction { time, action, object, storage };
        self.humans.get_mut(&human).expect("entered human").interactions.push(rec);
        match self.profile {
            ProfileKind::Airport => self.airport_step(human, rec),
            ProfileKind::Retail => self.retail_step(human, rec),
        }
    }

    fn airport_step(&mut self, human: HumanId, rec: TrueInteraction) {
        let history = self.history(human, rec.object);
        let at_own = self.owns_bin(human, rec.storage);
        let bin = whose(at_own);
        let alarm = |flag: bool| flag.then_some(Severity::Alarm);
        if history.len() == 1 {
            match rec.action {
                Action::Add => {
                    // Whatever a passenger puts down first is theirs.
                    self.humans.get_mut(&human).expect("entered").owned_objects.insert(rec.object);
                    let label = format!("Divest own object in {bin} Bin");
                    self.emit(human, rec.time, rec.object, rec.storage, label, alarm(!at_own));
                }
                Action::Remove => {
                    let label = format!("Taking other's object from {bin} Bin");
                    self.emit(human, rec.time, rec.object, rec.storage, label, alarm(true));
                }
            }
            return;
        }
        let prev = history[history.len() - 2];
        let object_own = self.humans[&human].owned_objects.contains(&rec.object);
        match (prev.action, rec.action) {
            (Action::Add, Action::Remove) => {
                let label = format!("MoveFrom: {} Bin", if at_own { "Own" } else { "Other" });
                self.emit(human, rec.time, rec.object, rec.storage, label, None);
            }
            (Action::Remove, Action::Add) => {
                let from_own = self.owns_bin(human, prev.storage);
                let label = format!("Move {} object from {} Bin to {bin} Bin", whose(object_own), whose(from_own));
                let benign = object_own && from_own && at_own;
                self.emit(human, rec.time, rec.object, rec.storage, label, alarm(!benign));
            }
            (a, b) => unreachable!("a human cannot {a:?} then {b:?} the same object"),
        }
    }

    fn retail_step(&mut self, human: HumanId, rec: TrueInteraction) {
        let units = self.humans.get_mut(&human).expect("entered").units.entry(rec.object).or_insert(0);
        let (label, alarm) = match rec.action {
            Action::Remove => {
                *units += 1;
                ("Picked up item from Shelf", None)
            }
            Action::Add => {
                *units -= 1;
                if self.home.get(&rec.object) == Some(&rec.storage) {
                    ("Returned item to correct shelf", None)
                } else {
                    ("Misplaced item in wrong shelf", Some(Severity::Warning))
                }
            }
        };
        self.emit(human, rec.time, rec.object, rec.storage, label.to_string(), alarm);
    }

    /// The human leaves at `time`: every object they touched is concluded.
    pub fn exit(&mut self, human: HumanId, time: Timestamp) {
        let touched: BTreeSet<ObjectId> = self.humans[&human].interactions.iter().map(|i| i.object).collect();
        let mut bill = 0;
        for object in touched {
            let last = *self.history(human, object).last().expect("touched");
            match self.profile {
                ProfileKind::Airport => {
                    let object_own = self.humans[&human].owned_objects.contains(&object);
                    let at_own = self.owns_bin(human, last.storage);
                    let (verb, benign_severity) = match last.action {
                        Action::Add => ("Left", Some(Severity::Warning)),
                        Action::Remove => ("Collect", None),
                    };
                    let prep = if last.action == Action::Add { "in" } else { "from" };
                    let label = format!("{verb} {} object {prep} {} Bin", whose(object_own), whose(at_own));
                    let severity = if object_own && at_own { benign_severity } else { Some(Severity::Alarm) };
                    self.emit(human, time, object, last.storage, label, severity);
                }
                ProfileKind::Retail => {
                    let units = self.humans[&human].units.get(&object).copied().unwrap_or(0);
                    let price = self.prices.get(&object).copied().unwrap_or(0);
                    bill += units * price;
                    self.emit(human, time, object, last.storage, format!("Billed {units} x {price}"), None);
                }
            }
        }
        if self.profile == ProfileKind::Retail {
            self.humans.get_mut(&human).expect("entered").bill = Some(bill);
        }
    }

    pub fn finish(self) -> GroundTruth {
        GroundTruth { profile: self.profile, humans: self.humans }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn airport() -> TruthRecorder {
        let mut t = TruthRecorder::new(ProfileKind::Airport, BTreeMap::new(), BTreeMap::new());
        for h in 1..=2 {
            t.enter(HumanId(h));
            t.instantiate(HumanId(h), StorageId(h));
        }
        t
    }

    fn labels(t: &TruthRecorder, h: u64) -> Vec<String> {
        t.humans[&HumanId(h)].labels.iter().map(|l| l.label.clone()).collect()
    }

    #[test]
    fn divest_then_collect_is_anomaly_free() {
        let mut t = airport();
        t.interaction(HumanId(1), Timestamp(10), Action::Add, ObjectId(7), StorageId(1));
        t.interaction(HumanId(1), Timestamp(20), Action::Remove, ObjectId(7), StorageId(1));
        t.exit(HumanId(1), Timestamp(30));
        assert_eq!(
            labels(&t, 1),
            ["Divest own object in own Bin", "MoveFrom: Own Bin", "Collect own object from own Bin"]
        );
        let g = t.finish();
        assert!(g.humans[&HumanId(1)].anomalies.is_empty());
        assert_eq!(g.humans[&HumanId(1)].owned_objects, BTreeSet::from([ObjectId(7)]));
    }

    #[test]
    fn theft_and_left_behind() {
        let mut t = airport();
        t.interaction(HumanId(1), Timestamp(10), Action::Add, ObjectId(7), StorageId(1));
        t.interaction(HumanId(2), Timestamp(20), Action::Remove, ObjectId(7), StorageId(1));
        t.exit(HumanId(2), Timestamp(30));
        t.exit(HumanId(1), Timestamp(40));
        assert_eq!(labels(&t, 2), ["Taking other's object from other's Bin", "Collect other's object from other's Bin"]);
        assert_eq!(labels(&t, 1), ["Divest own object in own Bin", "Left own object in own Bin"]);
        let g = t.finish();
        assert_eq!(g.humans[&HumanId(1)].anomalies[0].severity, Severity::Warning);
        assert!(g.humans[&HumanId(2)].anomalies.iter().all(|a| a.severity == Severity::Alarm));
    }

    #[test]
    fn retail_bill_is_net_units_times_price() {
        let home = BTreeMap::from([(ObjectId(1), StorageId(1)), (ObjectId(2), StorageId(2))]);
        let prices = BTreeMap::from([(ObjectId(1), 3), (ObjectId(2), 5)]);
        let mut t = TruthRecorder::new(ProfileKind::Retail, home, prices);
        t.enter(HumanId(1));
        t.interaction(HumanId(1), Timestamp(1), Action::Remove, ObjectId(1), StorageId(1));
        t.interaction(HumanId(1), Timestamp(2), Action::Remove, ObjectId(2), StorageId(2));
        t.interaction(HumanId(1), Timestamp(3), Action::Add, ObjectId(2), StorageId(1));
        t.exit(HumanId(1), Timestamp(4));
        let g = t.finish();
        let h = &g.humans[&HumanId(1)];
        assert_eq!(h.bill, Some(3));
        assert_eq!(h.anomalies.len(), 1);
        assert_eq!(h.labels.last().unwrap().label, "Billed 0 x 5");
    }
}

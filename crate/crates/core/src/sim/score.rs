//! Accuracy of engine outputs against simulator ground truth.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::truth::GroundTruth;
use crate::model::{Action, Anomaly, HumanId, ObjectId, Severity, StorageId};
use crate::runtime::logic::HumanArchive;

/// Overlap between a ground-truth item set and the engine's item set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub truth: usize,
    pub engine: usize,
    pub matched: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

impl Tally {
    fn of<T: Ord>(truth: &BTreeSet<T>, engine: &BTreeSet<T>) -> Self {
        Self { truth: truth.len(), engine: engine.len(), matched: truth.intersection(engine).count() }
    }

    /// Share of ground-truth items the engine reproduced.
    pub fn recall(&self) -> f64 {
        ratio(self.matched, self.truth)
    }

    /// Share of engine items that are true.
    pub fn precision(&self) -> f64 {
        ratio(self.matched, self.engine)
    }

    /// Matched over the union; penalizes both misses and extras.
    pub fn accuracy(&self) -> f64 {
        ratio(self.matched, self.truth + self.engine - self.matched)
    }

    fn add(self, o: Tally) -> Tally {
        Tally { truth: self.truth + o.truth, engine: self.engine + o.engine, matched: self.matched + o.matched }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub interactions: Tally,
    pub inferences: Tally,
    pub anomalies: Tally,
    pub ownerships: Tally,
    /// Shoppers whose bill matches exactly (retail only).
    pub bills: Option<Tally>,
    /// Engine anomalies that the ground truth does not contain.
    pub false_alarms: usize,
    /// Accuracy over every item kind together.
    pub overall: f64,
}

type InteractionKey = (HumanId, u64, Action, ObjectId, StorageId);
type LabelKey = (HumanId, u64, ObjectId, StorageId, String);
type AnomalyKey = (HumanId, u64, ObjectId, StorageId, String, Severity);

/// Scores engine archives and anomaly stream against ground truth.
pub fn score(truth: &GroundTruth, humans: &BTreeMap<HumanId, HumanArchive>, anomalies: &[Anomaly]) -> AccuracyReport {
    let mut ti: BTreeSet<InteractionKey> = BTreeSet::new();
    let mut tl: BTreeSet<LabelKey> = BTreeSet::new();
    let mut ta: BTreeSet<AnomalyKey> = BTreeSet::new();
    let mut to: BTreeSet<(HumanId, ObjectId)> = BTreeSet::new();
    for (h, t) in &truth.humans {
        ti.extend(t.interactions.iter().map(|i| (*h, i.time.0, i.action, i.object, i.storage)));
        tl.extend(t.labels.iter().map(|l| (*h, l.time.0, l.object, l.storage, l.label.clone())));
        ta.extend(t.anomalies.iter().map(|a| (*h, a.time.0, a.object, a.storage, a.label.clone(), a.severity)));
        to.extend(t.owned_objects.iter().map(|o| (*h, *o)));
    }

    let mut ei: BTreeSet<InteractionKey> = BTreeSet::new();
    let mut el: BTreeSet<LabelKey> = BTreeSet::new();
    let mut eo: BTreeSet<(HumanId, ObjectId)> = BTreeSet::new();
    for (h, a) in humans {
        let e = &a.entity;
        for (o, q) in &e.action_q {
            ei.extend(q.iter().map(|r| (*h, r.time.0, r.action, *o, r.storage)));
        }
        for (o, q) in &e.inference_q {
            el.extend(q.iter().map(|r| (*h, r.time.0, *o, r.storage, r.label.clone())));
        }
        eo.extend(e.ownership.owns.iter().filter_map(|x| x.as_object()).map(|o| (*h, o)));
    }
    let ea: BTreeSet<AnomalyKey> = anomalies
        .iter()
        .map(|a| (a.human, a.time.0, a.object, a.storage, a.label.clone(), a.severity))
        .collect();

    let bills = (truth.profile == crate::inference::ProfileKind::Retail).then(|| {
        let mut tally = Tally::default();
        for (h, t) in &truth.humans {
            let Some(bill) = t.bill else { continue };
            tally.truth += 1;
            if let Some(ledger) = humans.get(h).and_then(|a| a.entity.retail.as_ref()) {
                tally.engine += 1;
                if ledger.amount == bill {
                    tally.matched += 1;
                }
            }
        }
        tally
    });

    let interactions = Tally::of(&ti, &ei);
    let inferences = Tally::of(&tl, &el);
    let anomaly_tally = Tally::of(&ta, &ea);
    let ownerships = Tally::of(&to, &eo);
    let all = [interactions, inferences, anomaly_tally, ownerships]
        .into_iter()
        .chain(bills)
        .fold(Tally::default(), Tally::add);
    AccuracyReport {
        interactions,
        inferences,
        anomalies: anomaly_tally,
        ownerships,
        bills,
        false_alarms: ea.difference(&ta).count(),
        overall: all.accuracy(),
    }
}

impl AccuracyReport {
    pub const CSV_HEADER: &'static str = "overall,interaction_recall,inference_recall,anomaly_recall,ownership_accuracy,false_alarms,bill_match_rate";

    pub fn csv_row(&self) -> String {
        let bill = self.bills.map_or(String::new(), |b| format!("{:.6}", b.recall()));
        format!(
            "{:.6},{:.6},{:.6},{:.6},{:.6},{},{}",
            self.overall,
            self.interactions.recall(),
            self.inferences.recall(),
            self.anomalies.recall(),
            self.ownerships.accuracy(),
            self.false_alarms,
            bill
        )
    }

    /// True when every count matches exactly.
    pub fn is_perfect(&self) -> bool {
        self.overall == 1.0 && self.false_alarms == 0
    }
}

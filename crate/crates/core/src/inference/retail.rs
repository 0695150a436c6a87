//! Retail store rules. Only the latest action on an item matters; billing
//! happens once per item at exit.

use std::sync::Arc;

use super::{Catalog, Control, Decision, InferError, Profile, ProfileKind, Task, Trigger};
use crate::model::{Action, ActionRecord, HumEnt, ObjectId, RetailLedger};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetailRule {
    pub id: &'static str,
    pub label: &'static str,
    pub control: Control,
    pub tasks: &'static [Task],
}

pub const RETAIL_RULES: &[RetailRule] = &[
    RetailRule { id: "R01", label: "Picked up item from Shelf", control: Control::Test, tasks: &[Task::IncPurchase, Task::IncInspect] },
    RetailRule {
        id: "R02",
        label: "Returned item to correct shelf",
        control: Control::Test,
        tasks: &[Task::IncReturn, Task::DecPurchase],
    },
    RetailRule {
        id: "R03",
        label: "Misplaced item in wrong shelf",
        control: Control::Test,
        tasks: &[Task::IncMisplace, Task::DecPurchase, Task::NotifyCustomerAndStaff],
    },
];

/// Row id of the exit billing rule, whose label and task carry the amounts.
pub const BILLING_RULE: &str = "R04";

pub fn billing_label(units: i64, price: i64) -> String {
    format!("Billed {units} x {price}")
}

pub struct RetailProfile {
    catalog: Arc<Catalog>,
}

impl RetailProfile {
    pub fn new(catalog: Arc<Catalog>) -> Self {
        Self { catalog }
    }
}

fn from_rule(rule: &RetailRule) -> Decision {
    Decision { rule: rule.id.to_string(), label: rule.label.to_string(), control: rule.control, tasks: rule.tasks.to_vec() }
}

impl Profile for RetailProfile {
    fn kind(&self) -> ProfileKind {
        ProfileKind::Retail
    }

    fn init_human(&self, human: &mut HumEnt) {
        human.retail = Some(RetailLedger::default());
    }

    fn decide(
        &self,
        human: &HumEnt,
        object: ObjectId,
        history: &[ActionRecord],
        trigger: &Trigger,
    ) -> Result<Decision, InferError> {
        let last = history.last().ok_or(InferError::EmptyHistory(object))?;
        match trigger {
            Trigger::HandOut { storage_owns, .. } => Ok(match last.action {
                Action::Remove => from_rule(&RETAIL_RULES[0]),
                Action::Add if storage_owns.contains(&object) => from_rule(&RETAIL_RULES[1]),
                Action::Add => from_rule(&RETAIL_RULES[2]),
            }),
            Trigger::HumanExit { .. } => {
                let units = human
                    .retail
                    .as_ref()
                    .and_then(|l| l.counters.get(&object))
                    .map_or(0, |c| c.n_purchase);
                let price = self.catalog.price(object).unwrap_or_else(|| {
                    log::error!("{} leaves with {object} but it has no price; billing at zero", human.id);
                    0
                });
                Ok(Decision {
                    rule: BILLING_RULE.to_string(),
                    label: billing_label(units, price),
                    control: Control::NoCheck,
                    tasks: vec![Task::Bill { units, price }],
                })
            }
        }
    }
}

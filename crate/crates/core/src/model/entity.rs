use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::ids::{EntityId, HumanId, InteractionKey, ObjectId, StorageId, Timestamp};
use super::ModelError;

/// Two-sided ownership lists. `owns` and `owned_by` are kept in insertion order
/// without duplicates.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ownership {
    pub owns: Vec<EntityId>,
    pub owned_by: Vec<EntityId>,
}

impl Ownership {
    pub fn add_owned(&mut self, id: EntityId) -> bool {
        if self.owns.contains(&id) {
            return false;
        }
        self.owns.push(id);
        true
    }

    pub fn add_owner(&mut self, id: EntityId) -> bool {
        if self.owned_by.contains(&id) {
            return false;
        }
        self.owned_by.push(id);
        true
    }

    pub fn owns(&self, id: impl Into<EntityId>) -> bool {
        self.owns.contains(&id.into())
    }
}

/// Records `owner -> owned` on both sides.
pub fn link_ownership(owner_id: EntityId, owner: &mut Ownership, owned_id: EntityId, owned: &mut Ownership) {
    owner.add_owned(owned_id);
    owned.add_owner(owner_id);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Action {
    Add,
    Remove,
}

impl Action {
    pub fn letter(self) -> char {
        match self {
            Action::Add => 'A',
            Action::Remove => 'R',
        }
    }
}

/// `[t - A - k]` / `[t - R - k]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionRecord {
    pub time: Timestamp,
    pub action: Action,
    pub storage: StorageId,
}

impl fmt::Display for ActionRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{} - {} - {}]", self.time, self.action.letter(), self.storage.0)
    }
}

fn split_triple(s: &str) -> Result<(u64, &str, u64), ModelError> {
    let bad = || ModelError::BadRecord(s.to_string());
    let inner = s.strip_prefix('[').and_then(|r| r.strip_suffix(']')).ok_or_else(bad)?;
    let (t, rest) = inner.split_once(" - ").ok_or_else(bad)?;
    let (mid, k) = rest.rsplit_once(" - ").ok_or_else(bad)?;
    Ok((t.parse().map_err(|_| bad())?, mid, k.parse().map_err(|_| bad())?))
}

impl FromStr for ActionRecord {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (t, a, k) = split_triple(s)?;
        let action = match a {
            "A" => Action::Add,
            "R" => Action::Remove,
            _ => return Err(ModelError::BadRecord(s.to_string())),
        };
        Ok(ActionRecord { time: Timestamp(t), action, storage: StorageId(k) })
    }
}

/// `[t - label - k]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InferenceRecord {
    pub time: Timestamp,
    pub label: String,
    pub storage: StorageId,
}

impl fmt::Display for InferenceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{} - {} - {}]", self.time, self.label, self.storage.0)
    }
}

impl FromStr for InferenceRecord {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (t, label, k) = split_triple(s)?;
        if label.is_empty() {
            return Err(ModelError::BadRecord(s.to_string()));
        }
        Ok(InferenceRecord { time: Timestamp(t), label: label.to_string(), storage: StorageId(k) })
    }
}

macro_rules! string_serde {
    ($t:ty) => {
        impl Serialize for $t {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }
        impl<'de> Deserialize<'de> for $t {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

string_serde!(ActionRecord);
string_serde!(InferenceRecord);

/// Storage content at one instant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContentSnapshot {
    pub time: Timestamp,
    pub objects: BTreeSet<ObjectId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Alarm,
}

/// An anomalous interaction raised by the anomaly detector.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Anomaly {
    pub time: Timestamp,
    pub human: HumanId,
    pub object: ObjectId,
    pub storage: StorageId,
    pub label: String,
    pub severity: Severity,
}

/// Per-product counters kept for a shopper.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetailCounters {
    pub n_purchase: i64,
    pub n_inspect: i64,
    pub n_return: i64,
    pub n_misplace: i64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetailLedger {
    pub counters: BTreeMap<ObjectId, RetailCounters>,
    pub amount: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HumEnt {
    pub id: HumanId,
    pub ownership: Ownership,
    pub action_q: BTreeMap<ObjectId, Vec<ActionRecord>>,
    pub inference_q: BTreeMap<ObjectId, Vec<InferenceRecord>>,
    pub buffer_before: BTreeMap<InteractionKey, ContentSnapshot>,
    pub buffer_after: BTreeMap<InteractionKey, ContentSnapshot>,
    pub content_before: Option<ContentSnapshot>,
    pub content_after: Option<ContentSnapshot>,
    /// Profile-specific permitted action names; stored, not interpreted.
    pub actions: Vec<String>,
    pub t_entry: Timestamp,
    pub t_exit: Option<Timestamp>,
    pub anomalies: Vec<Anomaly>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retail: Option<RetailLedger>,
}

impl HumEnt {
    pub fn new(id: HumanId, t_entry: Timestamp) -> Self {
        Self {
            id,
            ownership: Ownership::default(),
            action_q: BTreeMap::new(),
            inference_q: BTreeMap::new(),
            buffer_before: BTreeMap::new(),
            buffer_after: BTreeMap::new(),
            content_before: None,
            content_after: None,
            actions: Vec::new(),
            t_entry,
            t_exit: None,
            anomalies: Vec::new(),
            retail: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoEnt {
    pub id: StorageId,
    pub ownership: Ownership,
    pub content: Vec<ContentSnapshot>,
    pub update: bool,
    pub in_use: bool,
    /// Hands currently inside, with the time each reached in.
    pub in_flight: BTreeMap<HumanId, Timestamp>,
    pub t_instantiate: Timestamp,
    pub t_return: Option<Timestamp>,
}

impl StoEnt {
    pub fn new(id: StorageId, t_instantiate: Timestamp) -> Self {
        Self {
            id,
            ownership: Ownership::default(),
            content: Vec::new(),
            update: true,
            in_use: false,
            in_flight: BTreeMap::new(),
            t_instantiate,
            t_return: None,
        }
    }
}

/// An object blob. Profile-defined characteristics such as `price` live here.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OBlob {
    pub id: ObjectId,
    #[serde(default)]
    pub characteristics: BTreeMap<String, String>,
}

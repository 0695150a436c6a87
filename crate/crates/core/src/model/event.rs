use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::ids::{EntityId, EntityKind, HumanId, ObjectId, StorageId, Timestamp};
use super::ModelError;

/// What a tracker observed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventKind {
    HumanEnter(HumanId),
    HumanExit(HumanId),
    HandIn(HumanId, StorageId),
    HandOut(HumanId, StorageId),
    StorageInstantiate(StorageId, HumanId),
    StorageReturn(StorageId, HumanId),
    StorageUpdate(StorageId, BTreeSet<ObjectId>),
}

/// The seven event types, used as metric keys and wire type names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventType {
    HumanEnter,
    HumanExit,
    HandIn,
    HandOut,
    StorageInstantiate,
    StorageReturn,
    StorageUpdate,
}

impl EventType {
    pub const ALL: [EventType; 7] = [
        EventType::HumanEnter,
        EventType::HumanExit,
        EventType::HandIn,
        EventType::HandOut,
        EventType::StorageInstantiate,
        EventType::StorageReturn,
        EventType::StorageUpdate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EventType::HumanEnter => "HumanEnter",
            EventType::HumanExit => "HumanExit",
            EventType::HandIn => "HandIn",
            EventType::HandOut => "HandOut",
            EventType::StorageInstantiate => "StorageInstantiate",
            EventType::StorageReturn => "StorageReturn",
            EventType::StorageUpdate => "StorageUpdate",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name() == name)
    }
}

impl fmt::Display for EventType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub time: Timestamp,
    pub kind: EventKind,
}

impl Event {
    pub fn new(time: u64, kind: EventKind) -> Self {
        Self { time: Timestamp(time), kind }
    }

    pub fn event_type(&self) -> EventType {
        match self.kind {
            EventKind::HumanEnter(_) => EventType::HumanEnter,
            EventKind::HumanExit(_) => EventType::HumanExit,
            EventKind::HandIn(..) => EventType::HandIn,
            EventKind::HandOut(..) => EventType::HandOut,
            EventKind::StorageInstantiate(..) => EventType::StorageInstantiate,
            EventKind::StorageReturn(..) => EventType::StorageReturn,
            EventKind::StorageUpdate(..) => EventType::StorageUpdate,
        }
    }

    pub fn human(&self) -> Option<HumanId> {
        match self.kind {
            EventKind::HumanEnter(h)
            | EventKind::HumanExit(h)
            | EventKind::HandIn(h, _)
            | EventKind::HandOut(h, _)
            | EventKind::StorageInstantiate(_, h)
            | EventKind::StorageReturn(_, h) => Some(h),
            EventKind::StorageUpdate(..) => None,
        }
    }

    pub fn storage(&self) -> Option<StorageId> {
        match self.kind {
            EventKind::HandIn(_, s)
            | EventKind::HandOut(_, s)
            | EventKind::StorageInstantiate(s, _)
            | EventKind::StorageReturn(s, _)
            | EventKind::StorageUpdate(s, _) => Some(s),
            EventKind::HumanEnter(_) | EventKind::HumanExit(_) => None,
        }
    }

    /// Worker-hosted entities named by this event.
    pub fn involved(&self) -> Vec<EntityId> {
        self.human()
            .map(HumanId::entity)
            .into_iter()
            .chain(self.storage().map(StorageId::entity))
            .collect()
    }

    pub fn encode(&self) -> EventRecord {
        let info = match &self.kind {
            EventKind::HumanEnter(h) | EventKind::HumanExit(h) => format!("H:{}", h.0),
            EventKind::HandIn(h, s) | EventKind::HandOut(h, s) => format!("H:{};S:{}", h.0, s.0),
            EventKind::StorageInstantiate(s, h) | EventKind::StorageReturn(s, h) => {
                format!("S:{};H:{}", s.0, h.0)
            }
            EventKind::StorageUpdate(s, objects) => {
                let list: Vec<String> = objects.iter().map(|o| o.0.to_string()).collect();
                format!("S:{};{{{}}}", s.0, list.join(","))
            }
        };
        EventRecord { event_type: self.event_type().name().to_string(), time: self.time.0, info }
    }

    pub fn decode(record: &EventRecord) -> Result<Event, ModelError> {
        let ty = EventType::from_name(&record.event_type)
            .ok_or_else(|| ModelError::UnknownType(record.event_type.clone()))?;
        let tokens: Vec<&str> = record.info.split(';').collect();
        let malformed = || ModelError::MalformedInfo(record.info.clone());

        let entity = |i: usize, kind: EntityKind| -> Result<u64, ModelError> {
            let tok = tokens.get(i).ok_or_else(malformed)?;
            let (tag, num) = tok.split_once(':').ok_or_else(malformed)?;
            let found = EntityKind::from_tag(tag.trim()).ok_or_else(malformed)?;
            if found != kind {
                return Err(ModelError::WrongKind { expected: kind, found });
            }
            num.trim().parse().map_err(|_| malformed())
        };
        let arity = |n: usize| -> Result<(), ModelError> {
            if tokens.len() == n {
                Ok(())
            } else {
                Err(malformed())
            }
        };

        let kind = match ty {
            EventType::HumanEnter | EventType::HumanExit => {
                arity(1)?;
                let h = HumanId(entity(0, EntityKind::Human)?);
                if ty == EventType::HumanEnter {
                    EventKind::HumanEnter(h)
                } else {
                    EventKind::HumanExit(h)
                }
            }
            EventType::HandIn | EventType::HandOut => {
                arity(2)?;
                let h = HumanId(entity(0, EntityKind::Human)?);
                let s = StorageId(entity(1, EntityKind::Storage)?);
                if ty == EventType::HandIn {
                    EventKind::HandIn(h, s)
                } else {
                    EventKind::HandOut(h, s)
                }
            }
            EventType::StorageInstantiate | EventType::StorageReturn => {
                arity(2)?;
                let s = StorageId(entity(0, EntityKind::Storage)?);
                let h = HumanId(entity(1, EntityKind::Human)?);
                if ty == EventType::StorageInstantiate {
                    EventKind::StorageInstantiate(s, h)
                } else {
                    EventKind::StorageReturn(s, h)
                }
            }
            EventType::StorageUpdate => {
                arity(2)?;
                let s = StorageId(entity(0, EntityKind::Storage)?);
                EventKind::StorageUpdate(s, parse_object_list(tokens[1]).ok_or_else(malformed)?)
            }
        };
        Ok(Event { time: Timestamp(record.time), kind })
    }
}

fn parse_object_list(s: &str) -> Option<BTreeSet<ObjectId>> {
    let inner = s.trim().strip_prefix('{')?.strip_suffix('}')?;
    if inner.trim().is_empty() {
        return Some(BTreeSet::new());
    }
    inner.split(',').map(|n| n.trim().parse().ok().map(ObjectId)).collect()
}

/// Flat three-field encoding of an event: type name, time and entity info.
///
/// The info string is a `;`-separated list of `kind:number` tokens; a storage
/// update carries its object ids as a trailing `{a,b,c}` token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    #[serde(rename = "type")]
    pub event_type: String,
    pub time: u64,
    pub info: String,
}

impl EventRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }

    pub fn from_json(line: &str) -> Result<Self, ModelError> {
        serde_json::from_str(line).map_err(|e| ModelError::BadJson(e.to_string()))
    }
}

/// Storage id and object set carried by a `StorageUpdate` record.
pub fn parse_content_info(record: &EventRecord) -> Result<(StorageId, BTreeSet<ObjectId>), ModelError> {
    if record.event_type != EventType::StorageUpdate.name() {
        return Err(ModelError::WrongEventType(record.event_type.clone()));
    }
    match Event::decode(record)?.kind {
        EventKind::StorageUpdate(s, objects) => Ok((s, objects)),
        _ => unreachable!("type checked above"),
    }
}

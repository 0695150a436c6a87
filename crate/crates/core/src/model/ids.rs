use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::ModelError;

/// Logical time. Simulator ticks, or microseconds since the epoch for live feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub u64);

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EntityKind {
    Human,
    Storage,
    ObjectBlob,
}

impl EntityKind {
    /// Single-letter tag used in display forms and in encoded entity info.
    pub fn tag(self) -> char {
        match self {
            EntityKind::Human => 'H',
            EntityKind::Storage => 'S',
            EntityKind::ObjectBlob => 'O',
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "H" => Some(EntityKind::Human),
            "S" => Some(EntityKind::Storage),
            "O" => Some(EntityKind::ObjectBlob),
            _ => None,
        }
    }
}

macro_rules! entity_newtype {
    ($name:ident, $kind:expr) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(pub u64);

        impl $name {
            pub const KIND: EntityKind = $kind;

            pub fn entity(self) -> EntityId {
                EntityId { kind: $kind, number: self.0 }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}_{}", $kind.tag(), self.0)
            }
        }

        impl FromStr for $name {
            type Err = ModelError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                let id: EntityId = s.parse()?;
                if id.kind != $kind {
                    return Err(ModelError::WrongKind { expected: $kind, found: id.kind });
                }
                Ok($name(id.number))
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }

        impl From<$name> for EntityId {
            fn from(v: $name) -> EntityId {
                v.entity()
            }
        }
    };
}

entity_newtype!(HumanId, EntityKind::Human);
entity_newtype!(StorageId, EntityKind::Storage);
entity_newtype!(ObjectId, EntityKind::ObjectBlob);

/// Kind-tagged entity identifier, displayed as `H_i`, `S_k` or `O_j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntityId {
    pub kind: EntityKind,
    pub number: u64,
}

impl EntityId {
    pub fn as_human(self) -> Option<HumanId> {
        (self.kind == EntityKind::Human).then_some(HumanId(self.number))
    }

    pub fn as_storage(self) -> Option<StorageId> {
        (self.kind == EntityKind::Storage).then_some(StorageId(self.number))
    }

    pub fn as_object(self) -> Option<ObjectId> {
        (self.kind == EntityKind::ObjectBlob).then_some(ObjectId(self.number))
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.kind.tag(), self.number)
    }
}

impl FromStr for EntityId {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (tag, num) = s
            .split_once('_')
            .ok_or_else(|| ModelError::BadEntity(s.to_string()))?;
        let kind = EntityKind::from_tag(tag).ok_or_else(|| ModelError::BadEntity(s.to_string()))?;
        let number = num.parse().map_err(|_| ModelError::BadEntity(s.to_string()))?;
        Ok(EntityId { kind, number })
    }
}

impl Serialize for EntityId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EntityId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Buffer key pairing a human with the storage it is interacting with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct InteractionKey {
    pub human: HumanId,
    pub storage: StorageId,
}

impl InteractionKey {
    pub fn new(human: HumanId, storage: StorageId) -> Self {
        Self { human, storage }
    }
}

impl fmt::Display for InteractionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{},{}>", self.human.0, self.storage.0)
    }
}

impl FromStr for InteractionKey {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ModelError::BadEntity(s.to_string());
        let inner = s.strip_prefix('<').and_then(|r| r.strip_suffix('>')).ok_or_else(bad)?;
        let (h, k) = inner.split_once(',').ok_or_else(bad)?;
        Ok(InteractionKey {
            human: HumanId(h.trim().parse().map_err(|_| bad())?),
            storage: StorageId(k.trim().parse().map_err(|_| bad())?),
        })
    }
}

impl Serialize for InteractionKey {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for InteractionKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

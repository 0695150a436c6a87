//! Entity and event types shared by every part of the engine.

mod entity;
mod event;
mod ids;

pub use entity::{
    link_ownership, Action, ActionRecord, Anomaly, ContentSnapshot, HumEnt, InferenceRecord, OBlob, Ownership,
    RetailCounters, RetailLedger, Severity, StoEnt,
};
pub use event::{parse_content_info, Event, EventKind, EventRecord, EventType};
pub use ids::{EntityId, EntityKind, HumanId, InteractionKey, ObjectId, StorageId, Timestamp};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("unknown event type `{0}`")]
    UnknownType(String),
    #[error("malformed entity info `{0}`")]
    MalformedInfo(String),
    #[error("expected {expected:?} entity, found {found:?}")]
    WrongKind { expected: EntityKind, found: EntityKind },
    #[error("bad entity id `{0}`")]
    BadEntity(String),
    #[error("record is `{0}`, not StorageUpdate")]
    WrongEventType(String),
    #[error("bad record string `{0}`")]
    BadRecord(String),
    #[error("invalid record json: {0}")]
    BadJson(String),
}

impl ModelError {
    /// True for every variant that marks an undecodable tracker record.
    pub fn is_malformed(&self) -> bool {
        !matches!(self, ModelError::WrongEventType(_))
    }
}

pub mod config;
pub mod eventlog;
pub mod harness;
pub mod inference;
pub mod interaction;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod runtime;
pub mod sim;

//! Stochastic tracker simulator: clean generation with ground truth, noise
//! injection, tracker-client partitioning and accuracy scoring.

pub mod config;
pub mod generate;
pub mod noise;
pub mod score;
pub mod truth;

pub use config::{HandNoise, InvalidConfig, SimAction, SimConfig};
pub use generate::{generate, peak_live, Block, CleanStream, Generated, CLERK};
pub use noise::inject_noise;
pub use score::{score, AccuracyReport};
pub use truth::{GroundTruth, HumanTruth, TrueAnomaly, TrueInteraction, TrueLabel};

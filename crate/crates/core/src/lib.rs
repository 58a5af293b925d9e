//! Textless speech emotion conversion over discrete speech units.

pub mod config;
pub mod corpus;
pub mod dsp;
pub mod emotion;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod prosody;
pub mod translator;
pub mod units;
pub mod verify;

pub use emotion::Emotion;

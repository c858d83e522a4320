//! Moderation engine for synthetic media: provenance marker verification,
//! technical and human detection, downstream-risk classification, weighted
//! scoring into four transparency labels, and audit tooling.

pub mod attack;
pub mod audit;
pub mod corpus;
pub mod crypto;
pub mod detection;
pub mod log;
pub mod marker;
pub mod media;
pub mod model;
pub mod par;
pub mod pipeline;
pub mod prng;
pub mod risk;
pub mod scoring;
pub mod trust;
pub mod watermark;
pub mod wire;

mod serde_util;

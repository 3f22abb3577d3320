//! Risk exposure scoring for movement reconstructed from geo-tagged posts.
//!
//! The crate is organised as a pipeline of pure stages:
//!
//! * [`ingest`] parses a JSONL post stream, selects users and builds the
//!   reply/mention peer graph.
//! * [`geo`] holds spherical geodesy and per-user trajectory construction.
//! * [`meanvec`] averages segment velocity vectors into one resultant
//!   movement vector per user (and one for the whole group).
//! * [`risk`] answers point risk queries against evacuation-zone and flood
//!   polygons and evaluates the risk behavior quotient (RBQ).
//! * [`content`] labels posts as actional, informational and/or emotional.
//! * [`stats`] assembles the per-user feature table and fits the RBQ
//!   regression.
//! * [`pipeline`] and [`synth`] drive the stages from files and generate
//!   seeded synthetic scenarios.

pub mod content;
pub mod error;
pub mod geo;
pub mod ingest;
pub mod meanvec;
pub mod pipeline;
pub mod risk;
pub mod stats;
pub mod synth;

pub use error::{Error, ErrorKind, Result};
pub use geo::{GeoPoint, Segment, Trajectory};
pub use ingest::{PeerGraph, SelectionConfig, TimedPost};
pub use meanvec::MeanVector;
pub use risk::{RbqRecord, RiskScheme, RiskSurface};

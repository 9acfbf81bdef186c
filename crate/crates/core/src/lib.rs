//! Resource management for a service-oriented wireless cell.
//!
//! The crate covers freshness-aware cooperative caching, published versus
//! on-demand broadcast planning, air indexing, multi-channel retrieval
//! ordering and utility-driven fidelity adaptation, tied together by a
//! deterministic slot-based simulator.

pub mod air_schedule;
pub mod broadcast_plan;
pub mod cache;
pub mod fidelity;
pub mod freshness;
pub mod ids;
pub mod p2p;
pub mod retrieval;
pub mod scenario;
pub mod sim;

pub use ids::{ClientId, ObjectId, Time};

//! rescuesim: a deterministic simulator and library for reputation-weighted
//! BFT consensus with misbehavior forensics over a partially synchronous
//! UAV/vehicle network, coupled to a fog-computing offloading market solved
//! both in closed form and by two-tier deep-Q agents.

pub mod codec;
pub mod consensus;
pub mod crypto;
pub mod learning;
pub mod ledger;
pub mod game;
pub mod netmodel;
pub mod reputation;

/// Identity of any participant (UAV, vehicle, ground station) in the network.
pub type NodeId = u64;

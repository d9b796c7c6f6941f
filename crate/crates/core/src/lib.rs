//! Core logic of a relying-party network that agrees on RPKI validation
//! outputs through a threshold vote.

pub mod model;
pub mod time;
pub mod vote;
pub mod peering;
pub mod monitor;
pub mod rp;
pub mod sim;
pub mod rtr;
pub mod config;
pub mod harness;

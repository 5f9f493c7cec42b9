//! Environments: a synthetic chain for the exact oracle, multi-UAV delivery
//! and a regional pandemic model.

pub mod chain;
pub mod pandemic;
pub mod uav;

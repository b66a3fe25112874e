//! Distributed model reference adaptive control of heterogeneous agents
//! synchronizing to a leader over a directed graph.

pub mod linalg;
pub mod lti;
pub mod network;
pub mod matching;
pub mod tuners;
pub mod sim;
pub mod metrics;

//! Dynamic multi-vehicle route planning: road networks, loopless k-shortest
//! paths, Markov travel-time estimation, Bayesian candidate choice with an
//! optional external decision service, and a deterministic traffic simulator.

pub mod decision;
pub mod gateway;
pub mod golden;
pub mod metrics;
pub mod network;
pub mod routing;
pub mod sim;
pub mod traffic_state;

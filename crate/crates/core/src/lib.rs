//! Energy-aware workload offloading for battery-powered edge nodes.
//!
//! Nodes discover their peers by scanning a logical address range, watch
//! their own battery, and move their microservice to a better-charged peer
//! when they run low. The crate contains the timeslot energy model, an exact
//! placement solver for small instances, the greedy offloading policy, the
//! peer registry, the HTTP node daemon and a discrete-time simulator.

pub mod clock;
pub mod model;
pub mod planner;
pub mod policy;
pub mod discovery;
pub mod sim;
pub mod node;

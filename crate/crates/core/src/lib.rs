//! Discrete-event surrogate simulator for an adversary moving through a
//! building region graph, with learned movement, moment-matched outcome
//! sampling, responder-robot effects, and intervention policies.

pub mod graph;
pub mod par;
pub mod rng;
pub mod special;
pub mod tnorm;
pub mod trace;
pub mod events;
pub mod effects;
pub mod features;
pub mod sage;
pub mod stats;
pub mod transition;
pub mod engine;
pub mod policy;
pub mod ddqn;
pub mod synth;

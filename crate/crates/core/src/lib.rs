//! Seeded microsimulation of a two-lane highway with a single on-ramp merge,
//! mixing human-driven vehicles (IDM + MOBIL) with connected automated
//! vehicles whose lane changes are arbitrated by trust-gated matrix games.
//!
//! The crate is organised bottom-up:
//!
//! * [`scenario`] road geometry, demand and arrivals
//! * [`dynamics`] car following, lane-change incentive, kinematics, collisions
//! * [`trust`], [`reward`], [`game`] the CAV decision layer
//! * [`encoder`], [`learner`] observation encoding and the actor-critic learner
//! * [`metrics`] surrogate safety, detectors, recovery time
//! * [`world`] the step loop that ties the above together
//! * [`experiment`] single runs, sweeps, dynamic demand and training drivers
//!
//! Everything that draws random numbers takes an [`rng::RngStream`], so a run
//! is a pure function of its [`config::ScenarioConfig`].

pub mod config;
pub mod controller;
pub mod dynamics;
pub mod encoder;
pub mod error;
pub mod experiment;
pub mod game;
pub mod learner;
pub mod metrics;
pub mod nn;
pub mod par;
pub mod report;
pub mod reward;
pub mod rng;
pub mod scenario;
pub mod snapshot;
pub mod trust;
pub mod world;

pub use config::{ControllerMode, ScenarioConfig};
pub use error::{Error, Result};
pub use world::World;

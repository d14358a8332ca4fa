//! Simulation and learning stack for a microgrid operated under level-based
//! retail pricing: thermostatic load fleet, price-responsive demand, shared
//! storage, an exact user-side dispatch solver, and an actor-critic training
//! loop with prioritized experience replay.

pub mod config;
pub mod data_io;
pub mod demand;
pub mod energy;
pub mod env;
pub mod error;
pub mod lower;
pub mod neural;
pub mod replay;
pub mod seeds;
pub mod thermal;
pub mod trainer;
pub mod tuner;

pub use error::{Error, Result};

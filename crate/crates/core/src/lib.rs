pub mod config;
pub mod demo;
pub mod error;
pub mod eval;
pub mod features;
pub mod gps;
pub mod optim;
pub mod par;
pub mod policy;
pub mod rng;
pub mod rollout;
pub mod terrain;
pub mod trajopt;
pub mod walker;

pub use error::{Error, Result};

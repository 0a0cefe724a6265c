//! Budget-constrained ad allocation with dual prices, GSP slate pricing and a
//! deterministic auction replay simulator.

pub mod auction;
pub mod datagen;
pub mod error;
pub mod experiment;
pub mod io;
pub mod lp;
pub mod model;
pub mod policy;
pub mod replay;
pub mod selector;
pub mod trainer;

pub use error::{Error, Result};

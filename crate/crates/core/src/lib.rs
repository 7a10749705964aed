pub mod circuits;
pub mod cost;
pub mod density;
pub mod dtmc;
pub mod error;
pub mod feynman_kac;
pub mod geometry;
pub mod io;
pub mod numeric;
pub mod par;
pub mod pipeline;
pub mod platform;
pub mod problems;
pub mod rng;
pub mod spiking;

pub use error::{Error, Result};

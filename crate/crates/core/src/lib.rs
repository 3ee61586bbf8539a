//! Data-driven learning of physical-layer transmitters and receivers over an
//! unknown channel, with the receiver-to-transmitter loss feedback carried
//! over a quantized and possibly noisy binary link.

pub mod channels;
pub mod error;
pub mod evaluation;
pub mod feedback;
pub mod neuralnet;
pub mod rng;
pub mod training;
pub mod transceiver;

pub use error::{Error, Result};

//! Waveform-to-waveform singing voice conversion.

pub mod audio_io;
pub mod autodiff;
pub mod config;
pub mod dsp;
pub mod inference;
pub mod losses;
pub mod metrics;
pub mod nets;
pub mod par;
pub mod real;
pub mod rng;
pub mod training;

pub use real::Real;

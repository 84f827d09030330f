//! Core library for the MMF-Trans forecaster: numerics, calendar and
//! alignment utilities, the four modality encoders, gated fusion with the
//! transformer trunk, training machinery, and the synthetic data generator.

pub mod config;
pub mod datagen;
pub mod encoders;
pub mod error;
pub mod fusion;
pub mod numerics;
pub mod params;
pub mod suite;
pub mod timebase;
pub mod training;

pub use error::{Error, Result};

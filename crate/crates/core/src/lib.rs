//! Episodic few-shot meta-learning lab.
//!
//! Trains small embedding networks with prototypical or ridge-regression
//! heads, scores episode hardness, tracks forgetting of fixed probe
//! episodes across epochs and compares baseline, adversarial and
//! adversarial-curriculum episode selection.

pub mod cli;
pub mod episodes;
pub mod error;
pub mod forgetting;
pub mod hardness;
pub mod io;
pub mod learners;
pub mod ndcore;
pub mod training;

pub use error::{Error, Result};

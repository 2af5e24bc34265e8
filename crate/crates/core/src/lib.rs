//! Harmonic profiles, modal heat semigroups and Lorentz norms for
//! Schrödinger operators `H = -Δ + V` with inverse-square potentials.

pub mod decay_lab;
pub mod error;
pub mod ext;
pub mod fit;
pub mod harmonic_profile;
pub mod lorentz;
pub mod mode_spectrum;
pub mod potential;
pub mod quad;
pub mod radial_heat;

pub use error::{Error, Result};
pub use ext::ExtReal;
pub use mode_spectrum::{Dimension, ModeExponents};
pub use potential::{Criticality, PotentialSpec};

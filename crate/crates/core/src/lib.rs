//! Numerical laboratory for derived-from-Anosov diffeomorphisms of the 3-torus.
//!
//! The crate builds conservative perturbations `f = φ ∘ A` of linear Anosov
//! automorphisms that keep the weak-unstable/stable plane bundle of `A`
//! invariant, and measures what happens to the center direction: Lyapunov
//! exponents, the semi-conjugacy `h ∘ f = A ∘ h`, disintegration of volume
//! along center leaves, and exponents of the measure of maximal entropy.

pub mod disintegration;
pub mod error;
pub mod experiment;
pub mod lyapunov;
pub mod mme;
pub mod semiconj;
pub mod system;
pub mod torus;

pub use error::{LabError, Result};

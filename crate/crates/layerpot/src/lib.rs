//! Layer potentials and fundamental solutions for divergence-form elliptic
//! systems on a periodic half-space model, computed through the functional
//! calculus of the first-order operators `DB` and `BD`.

pub mod coeff;
pub mod error;
pub mod funcalc;
pub mod fundsol;
pub mod harness;
pub mod layers;
pub mod torus;

pub use error::{Error, Result};

/// Order-preserving map over independent parameter points.
#[cfg(feature = "parallel")]
pub(crate) fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    items.iter().map(f).collect()
}

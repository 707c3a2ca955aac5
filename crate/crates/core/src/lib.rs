//! Numerical laboratory for position–momentum EPR entanglement verified by
//! ghost imaging and ghost interference.
//!
//! The crate is organized bottom-up:
//!
//! * [`state`]: the double-Gaussian two-party state and the storage channel.
//! * [`criteria`]: EPR-paradox / inseparability classification of variances.
//! * [`optics`]: apertures, ray transfer matrices, the focal-plane map.
//! * [`patterns`]: ideal and convolution-model coincidence patterns.
//! * [`oracle`]: amplitude-level pattern predictions straight from the wavefunction.
//! * [`synth`]: Poisson datasets and phase-space Monte Carlo.
//! * [`fit`]: the inverse problem, from scans back to variances.
//! * [`config`], [`io`], [`pipeline`]: configuration, file formats and the
//!   end-to-end reproduction run.

pub mod config;
pub mod criteria;
pub mod fit;
pub mod io;
mod numeric;
pub mod optics;
pub mod oracle;
pub mod patterns;
pub mod pipeline;
pub mod seed;
pub mod state;
pub mod synth;

pub use numeric::median;

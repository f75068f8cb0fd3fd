//! Simulation of noisy one-dimensional open quantum dynamics with density
//! matrices stored as vectorized matrix-product states, plus the experiments
//! that measure how truncation errors evolve under noise.
//!
//! The layering is bottom-up: [`tensor`] provides dense tensors and
//! factorizations, [`state`] the doubled-site MPS, [`channels`] and
//! [`lindblad`] the dynamics, [`oracle`] exact dense references, and
//! [`experiments`] the measurement programs and fits.

pub mod channels;
pub mod error;
pub mod experiments;
pub mod lindblad;
pub mod oracle;
pub mod state;
pub mod tensor;

pub use channels::{GateLayer, KrausChannel, NoiseKind};
pub use error::Error;
pub use lindblad::{IsingParams, LindbladSpec};
pub use oracle::DenseState;
pub use state::{SchmidtSpectrum, StateSnapshot, TruncationReport, VectorizedDensityState};
pub use tensor::{DenseTensor, SvdResult};

//! Ancilla-based dissipative ground-state preparation with pseudomode
//! detailed-balance correction.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensorops`] dense operators on composite qubit/boson spaces,
//! * [`bathlib`] underdamped bath spectra, the zero-temperature Matsubara
//!   correlation and its exponential fit,
//! * [`modelkit`] the Ising chain and the system + pseudomode model,
//! * [`dynamics`] pseudo-Lindblad and secular Bloch-Redfield evolution,
//! * [`continuation`] real-coupling sweeps continued to `λ̄ = i`.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod bathlib;
pub mod continuation;
pub mod dynamics;
pub mod modelkit;
pub mod quad;
pub mod simplex;
pub mod tensorops;

pub use bathlib::{ExpFitResult, FitWindow, PseudomodeParams, UnderdampedBath};
pub use continuation::{PolyModel, SweepPlan};
pub use dynamics::{SolverOptions, Trajectory};
pub use modelkit::{CompositeModel, CouplingSchedule, GroundInfo, IsingSpec};
pub use tensorops::{EigDecomp, Op, SpaceLayout, C64};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("hermiticity error: {0}")]
    Hermiticity(String),
    #[error("singularity: {0}")]
    Singularity(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("fit quality: rms residual {rms:.4e} (relative to |M(0)|) exceeds {limit}")]
    FitQuality { rms: f64, limit: f64 },
    #[error("fit error: {0}")]
    Fit(String),
    #[error("degenerate spectrum: {0}")]
    DegenerateSpectrum(String),
    #[error("integration error: {0}")]
    Integration(String),
    #[error("sweep aborted at lambda_bar = {lambda_bar}: {reason}")]
    Sweep { lambda_bar: f64, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;

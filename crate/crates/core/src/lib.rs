//! Numerics laboratory for the spectral theory of large non-Hermitian random
//! matrices with i.i.d. centered entries of variance 1/N.
//!
//! The crate generates matrix ensembles, hermitizes them a la Girko,
//! solves the self-consistent equation for the limiting Stieltjes transform,
//! verifies the exact resolvent/minor identities, measures the local-law
//! statistic and its N^(-1+2s) scaling, and evaluates the entry-swapping
//! comparison functionals with their Taylor coefficients.
//!
//! Modules map one-to-one onto the subsystems:
//!
//! * [`ensemble`] - entry laws, seeded counter-based sampling, moment reports
//! * [`spectra`] - eigenvalues, singular-value squares, the hermitization identity
//! * [`green`] - minor resolvents, exact Schur identities, bound probes
//! * [`density`] - the self-consistent transform m_c, edges, density curves
//! * [`locallaw`] - rescaled test functions and the local-law scaling experiment
//! * [`comparison`] - cutoff kit, swap interpolation, perturbation coefficients,
//!   A/Z functionals and the N^(-1/2) expectation-gain probe
//! * [`harness`] - experiment configs, seeded parallel trial execution, CSV/JSON output

pub mod comparison;
pub mod density;
pub mod ensemble;
pub mod error;
pub mod green;
pub mod harness;
pub mod jet;
pub mod linalg;
pub mod locallaw;
pub mod par;
pub mod spectra;

pub use error::{Error, Result};
pub use par::Parallelism;

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex64;

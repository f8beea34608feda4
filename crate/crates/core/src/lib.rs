//! Power-minimizing joint design for a fluid-antenna downlink that
//! simultaneously serves communication users, energizes and reads
//! backscatter tags, and illuminates radar targets observed by a separate
//! multi-antenna reader.
//!
//! The toolkit alternates over four variable blocks:
//!
//! 1. transmit covariances `{W_k}` and sensing covariance `R_s`
//!    (semidefinite relaxation, [`txdesign`]),
//! 2. tag reflection coefficients `β_t` (linear feasibility with max-slack
//!    selection, [`reflection`]),
//! 3. reader combiners `{u_t, v_q}` (generalized-eigenvector SINR
//!    maximization, [`rxdesign`]),
//! 4. fluid-antenna positions `z` (majorization–minimization with global
//!    quadratic bounds of sinusoids, [`faposition`]),
//!
//! driven by [`ao`] and evaluated by Monte Carlo sweeps in [`harness`].
//! Channels are synthesized by [`scenario`]/[`channel`], QoS functionals by
//! [`metrics`], and every convex subproblem is solved through the dense
//! conic layer in [`conic`].

use thiserror::Error;

pub mod ao;
pub mod channel;
pub mod conic;
pub mod faposition;
pub mod harness;
pub mod metrics;
pub mod reflection;
pub mod rxdesign;
pub mod scenario;
pub mod txdesign;

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex<f64>;
/// Dense complex matrix.
pub type CMat = nalgebra::DMatrix<C64>;
/// Dense complex column vector.
pub type CVec = nalgebra::DVector<C64>;
/// Dense real matrix.
pub type RMat = nalgebra::DMatrix<f64>;
/// Dense real column vector.
pub type RVec = nalgebra::DVector<f64>;

/// Every failure mode surfaced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// The harvested-power inverse evaluates to a non-positive input floor:
    /// the configured (a, b, c, ρ) demand more DC than the model saturates at.
    #[error("EH input floor is non-positive for a={a}, b={b}, c={c}, rho_dbm={rho_dbm}")]
    EhFloorNonPositive { a: f64, b: f64, c: f64, rho_dbm: f64 },

    /// Gaussian randomization produced no feasible rank-one candidate.
    #[error("rank-one recovery failed after {draws} randomization draws")]
    RandomizationFailed { draws: usize },

    /// A quadratic-constraint Hessian violates the convexity sign required
    /// for its bound sense — a surrogate-construction bug, never a data
    /// condition.
    #[error("nonconvex quadratic constraint: min eigenvalue {min_eig:.3e} of required-PSD Hessian (norm {norm:.3e})")]
    NonconvexCertificate { min_eig: f64, norm: f64 },

    /// The position subproblem was infeasible at this expansion point; the
    /// caller keeps the previous positions.
    #[error("surrogate position step infeasible at the current expansion point")]
    InfeasibleSurrogateStep,

    /// Requested antenna count cannot fit the aperture at minimum spacing.
    #[error("geometry infeasible: ({m} - 1) x {min_spacing_m} m exceeds aperture {aperture_m} m")]
    GeometryInfeasible { m: usize, min_spacing_m: f64, aperture_m: f64 },

    /// No block update ever produced a feasible tuple within the iteration
    /// budget; the realization is discarded and counted.
    #[error("no feasible tuple found in {max_iter} alternating-optimization iterations")]
    NeverFeasible { max_iter: usize },

    /// A sweep or config key does not name a known scalar field.
    #[error("unknown field: {0}")]
    UnknownField(String),

    /// A scheme name is not one of the implemented designs.
    #[error("unknown scheme: {0}")]
    UnknownScheme(String),

    /// A sweep specification produces no values.
    #[error("empty sweep: {0}")]
    EmptySweep(String),

    /// Configuration value violates a documented invariant.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// The conic layer could not produce a trustworthy solution.
    #[error("solver failure: {0}")]
    SolverFailure(String),

    /// Filesystem / serialization problems from the harness boundary.
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Decibel-milliwatt representation of a power in watts, floored at
/// −300 dBm so zero power stays finite in reports.
pub fn watts_to_dbm(w: f64) -> f64 {
    if w <= 1e-33 { -300.0 } else { 10.0 * (w * 1e3).log10() }
}

/// Inverse of [`watts_to_dbm`].
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0) * 1e-3
}

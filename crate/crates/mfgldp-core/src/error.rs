//! Crate-wide error type.
//!
//! Each variant corresponds to one failure mode of a public operation; the
//! payloads carry enough context (times, sizes, offending values) to diagnose
//! a failure from the message alone.

/// Convenience alias used by all fallible operations in this crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Failure modes of solvers, simulators, and estimators.
#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    /// A model parameter set violates an admissibility constraint.
    #[error("invalid model parameters: {reason}")]
    InvalidSpec { reason: String },

    /// The control-quadratic coefficient of the running cost is not strictly
    /// positive, so the Hamiltonian has no unique minimizer.
    #[error("Hamiltonian is not strongly convex in the control: quadratic coefficient {coeff}")]
    NonConvexHamiltonian { coeff: f64 },

    /// A field was evaluated outside its time domain.
    #[error("field evaluated at t = {t} outside [0, {t_end}]")]
    FieldDomainError { t: f64, t_end: f64 },

    /// Backward coefficient integration left the trust region.
    #[error("Riccati coefficient blow-up at t = {t}: |value| = {magnitude:.3e} exceeds {limit:.1e}")]
    RiccatiBlowup { t: f64, magnitude: f64, limit: f64 },

    /// The exchangeable ansatz failed the full-vector stationarity probe.
    #[error(
        "ansatz verification failed at t = {t} (N = {n}): residual {residual:.3e} exceeds {tol:.1e}"
    )]
    AnsatzMismatch { t: f64, n: usize, residual: f64, tol: f64 },

    /// The fixed point defining the mean control in the N-player first-order
    /// condition is singular.
    #[error("singular control-mean closure in the N-player first-order condition: denominator {denom:.3e}")]
    SingularFeedback { denom: f64 },

    /// A linear solve inside the discrete forward-backward recursion hit a
    /// vanishing denominator.
    #[error("singular step in the discrete forward-backward recursion at step {step}: denominator {denom:.3e}")]
    SingularStep { step: usize, denom: f64 },

    /// Operand shapes disagree.
    #[error("dimension mismatch: {context} (expected {expected}, got {got})")]
    DimensionMismatch { context: String, expected: usize, got: usize },

    /// A simulated path left the admissible region.
    #[error("particle state exploded at step {step}, path {path}: |x| = {magnitude:.3e}")]
    Explosion { step: usize, path: usize, magnitude: f64 },

    /// A Wasserstein distance was requested for an empty support.
    #[error("empty empirical measure")]
    EmptyMeasure,

    /// The exact assignment oracle is restricted to small supports.
    #[error("support size {got} exceeds the exact-assignment limit {limit}")]
    SizeLimit { got: usize, limit: usize },

    /// Two paths of empirical measures live on different time grids.
    #[error("time grids disagree: {context}")]
    GridMismatch { context: String },

    /// An iterative optimizer did not reach its tolerance.
    #[error("optimizer did not converge: gradient norm {grad_norm:.3e} after {iters} iterations")]
    NonConvergence { grad_norm: f64, iters: usize },

    /// A Monte Carlo estimate degenerated (underflow or empty average).
    #[error("degenerate estimate: {reason}")]
    DegenerateEstimate { reason: String },

    /// Every replication produced zero events for every threshold.
    #[error("all replications produced zero exceedance events for every threshold")]
    AllZeroEvents,

    /// The control-target pullback map is not invertible.
    #[error("control map is not invertible at t = {t}: slope {slope:.3e}")]
    NonInvertible { t: f64, slope: f64 },

    /// A control weight in the planner optimality system vanishes.
    #[error("singular control weight in the cooperative first-order condition: offending weight {value:.3e}")]
    SingularR { value: f64 },

    /// An input/output operation failed.
    #[error("io error at {path}: {message}")]
    Io { path: String, message: String },
}

impl Error {
    /// Wraps an I/O error with the path that produced it.
    pub fn io(path: impl Into<String>, err: std::io::Error) -> Self {
        Error::Io { path: path.into(), message: err.to_string() }
    }
}

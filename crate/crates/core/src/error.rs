//! Error taxonomy for the laboratory.
//!
//! Every fallible operation in the crate returns [`SduError`]. The variants
//! split into three families:
//!
//! * **model validation** — the inputs describe a problem outside the regime
//!   this crate covers (`ThetaOutOfRegime`, `IllPosed`, `OutsideD`,
//!   `DivergentFamily`, `HypothesisUnmet`, `NotDominated`, `NotSelfOrder`,
//!   `Config`);
//! * **numerical failure** — the inputs were admissible but an iterative
//!   scheme could not certify or reach a solution (`NoContraction`,
//!   `MaxIterExceeded`);
//! * everything else is a bug, and the crate panics rather than returning.
//!
//! The CLI maps validation errors to exit code 1 and numerical failures to
//! exit code 2, printing `ERROR:<code>:<message>` on stderr where `<code>` is
//! the value of [`SduError::code`].

/// Crate-wide error type.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SduError {
    /// The preference pair (R, S) does not satisfy θ = (1−R)/(1−S) > 1.
    ///
    /// The entire toolbox (order bounds, the improper family, the extremal
    /// construction) is specific to θ > 1; θ ≤ 1 problems need none of it.
    #[error("theta out of regime: R={r}, S={s} give theta={theta} but theta > 1 is required")]
    ThetaOutOfRegime { r: f64, s: f64, theta: f64 },

    /// The market/preference combination has η ≤ 0, so no proportional
    /// strategy has finite value and the candidate problem is ill-posed.
    #[error("ill-posed market: eta={eta} must be strictly positive")]
    IllPosed { eta: f64 },

    /// A strategy lies outside D = {(π, ξ): ξ > 0, H(π, ξ) > 0}.
    #[error("strategy (pi={pi}, xi={xi}) lies outside D: requires xi > 0 and H > 0, got H={h}")]
    OutsideD { pi: f64, xi: f64, h: f64 },

    /// Requested improper family member with A0 above the proper ceiling
    /// (θ/H)^θ; such initial data explode in finite time instead of hitting
    /// zero and correspond to no utility process.
    #[error("divergent family member: A0={a0} exceeds the ceiling (theta/H)^theta = {ceiling}")]
    DivergentFamily { a0: f64, ceiling: f64 },

    /// The stream's θ-power is not self-ordered: the node-wise ratio U^θ/J
    /// is unbounded or degenerates (some node consumes nothing while the
    /// remaining-future integral is zero, or vice versa).
    #[error("stream is not self-ordered: {reason}")]
    NotSelfOrder { reason: String },

    /// No contraction certificate could be produced for the Picard scheme.
    #[error("no contraction certificate available: {reason}")]
    NoContraction { reason: String },

    /// An iterative scheme hit its iteration budget before meeting its
    /// tolerance. Carries the last sup-norm gap for diagnostics.
    #[error("iteration budget exhausted after {iterations} iterations (last gap {last_gap})")]
    MaxIterExceeded { iterations: usize, last_gap: f64 },

    /// The perturbation envelope fails to dominate the consumption stream at
    /// some node, so the extremal construction does not apply.
    #[error("envelope does not dominate the stream at step {step}, node {node}")]
    NotDominated { step: usize, node: usize },

    /// A comparison-style operation was invoked with its hypotheses unmet
    /// (e.g. the larger perturbation is zero, or the streams are not ordered).
    #[error("hypothesis unmet: {reason}")]
    HypothesisUnmet { reason: String },

    /// Configuration problem: missing key, unknown key, malformed value,
    /// unreadable file.
    #[error("{reason}")]
    Config { reason: String },
}

impl SduError {
    /// Stable machine-readable code, used in the CLI's `ERROR:<code>:` prefix.
    pub fn code(&self) -> &'static str {
        match self {
            SduError::ThetaOutOfRegime { .. } => "ThetaOutOfRegime",
            SduError::IllPosed { .. } => "IllPosed",
            SduError::OutsideD { .. } => "OutsideD",
            SduError::DivergentFamily { .. } => "DivergentFamily",
            SduError::NotSelfOrder { .. } => "NotSelfOrder",
            SduError::NoContraction { .. } => "NoContraction",
            SduError::MaxIterExceeded { .. } => "MaxIterExceeded",
            SduError::NotDominated { .. } => "NotDominated",
            SduError::HypothesisUnmet { .. } => "HypothesisUnmet",
            SduError::Config { .. } => "CONFIG",
        }
    }

    /// Exit code the CLI should use for this error: 2 for numerical
    /// failures, 1 for validation/configuration problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            SduError::MaxIterExceeded { .. } | SduError::NoContraction { .. } => 2,
            _ => 1,
        }
    }
}

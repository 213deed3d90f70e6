//! Preference and market primitives.
//!
//! Everything downstream works in the high-elasticity regime
//!
//! ```text
//!     θ = (1−R)/(1−S) > 1,
//! ```
//!
//! where R is relative risk aversion and S is the reciprocal of the
//! elasticity of intertemporal substitution. θ > 1 forces 1−R and 1−S to
//! share a sign, and the companion exponent
//!
//! ```text
//!     ρ = (θ−1)/θ = (S−R)/(1−R)
//! ```
//!
//! lands in (0, 1) — the aggregator is then a concave power of the value
//! variable, which is what every fixed-point and ordering argument in this
//! crate leans on. The normalization δ = 0, b = 1 is baked in throughout.
//!
//! The market is Black–Scholes with constant coefficients: riskless rate r,
//! stock drift μ, volatility σ, market price of risk λ = (μ−r)/σ. A
//! proportional strategy (π, ξ) invests the fraction π of wealth in the stock
//! and consumes at rate ξ·wealth; wealth is then geometric Brownian motion
//! and the conditional (1−R)-moment decays at the rate
//!
//! ```text
//!     H(π, ξ) = (R−1)(r + π(μ−r) − ξ − ½π²σ²R),
//! ```
//!
//! i.e. E_t[X_s^{1−R}] = X_t^{1−R} e^{−H·(s−t)}. Well-posedness of the
//! candidate optimization is equivalent to
//!
//! ```text
//!     η = (S−1)/S · (r + λ²/(2R)) > 0,
//! ```
//!
//! and the candidate optimal strategy is (π̂, ξ̂) = (λ/(σR), η), at which
//! H(π̂, η) = θη.

use crate::error::SduError;

/// Epstein–Zin preference pair together with the derived exponents.
///
/// Construct through [`derive_preferences`]; the derived fields are trusted
/// downstream and must satisfy ρθ = θ−1 and (1−R)ρ = S−R to machine
/// precision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreferenceParams {
    /// Relative risk aversion R (positive, ≠ 1).
    pub risk_aversion: f64,
    /// EIS reciprocal S (positive, ≠ 1, same side of 1 as R).
    pub substitution: f64,
    /// θ = (1−R)/(1−S); the crate requires θ > 1.
    pub theta: f64,
    /// ρ = (θ−1)/θ ∈ (0, 1); the aggregator's power in the value variable.
    pub rho: f64,
}

/// Black–Scholes market constants plus the derived λ and η.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarketParams {
    /// Riskless rate r.
    pub r: f64,
    /// Stock drift μ.
    pub mu: f64,
    /// Stock volatility σ > 0.
    pub sigma: f64,
    /// Market price of risk λ = (μ − r)/σ.
    pub lambda: f64,
    /// Well-posedness rate η = (S−1)/S · (r + λ²/(2R)); positive iff the
    /// candidate problem is well posed.
    pub eta: f64,
}

/// Proportional investment/consumption strategy: fraction π of wealth in the
/// stock, consumption rate ξ·wealth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Strategy {
    /// Risky-asset weight π.
    pub pi: f64,
    /// Proportional consumption rate ξ (must be > 0 to lie in D).
    pub xi: f64,
}

impl Strategy {
    pub fn new(pi: f64, xi: f64) -> Self {
        Strategy { pi, xi }
    }
}

/// Validate a preference pair and derive θ and ρ.
///
/// Errors with [`SduError::ThetaOutOfRegime`] unless R, S > 0, R ≠ 1, S ≠ 1
/// and θ = (1−R)/(1−S) > 1 (finite).
pub fn derive_preferences(
    risk_aversion: f64,
    substitution: f64,
) -> Result<PreferenceParams, SduError> {
    let r = risk_aversion;
    let s = substitution;
    let theta = (1.0 - r) / (1.0 - s);
    let in_regime = r > 0.0 && s > 0.0 && r != 1.0 && s != 1.0 && theta.is_finite() && theta > 1.0;
    if !in_regime {
        return Err(SduError::ThetaOutOfRegime { r, s, theta });
    }
    let rho = (theta - 1.0) / theta;
    Ok(PreferenceParams {
        risk_aversion: r,
        substitution: s,
        theta,
        rho,
    })
}

/// Validate market constants against a preference set and derive λ and η.
///
/// Errors with [`SduError::IllPosed`] when η ≤ 0 (no proportional strategy
/// has finite positive growth, so the candidate problem degenerates) and
/// with [`SduError::Config`] when σ ≤ 0.
pub fn derive_market(
    r: f64,
    mu: f64,
    sigma: f64,
    prefs: &PreferenceParams,
) -> Result<MarketParams, SduError> {
    if !(sigma > 0.0) || !r.is_finite() || !mu.is_finite() {
        return Err(SduError::Config {
            reason: format!("market constants invalid: r={r}, mu={mu}, sigma={sigma} (need finite values, sigma > 0)"),
        });
    }
    let lambda = (mu - r) / sigma;
    let s = prefs.substitution;
    let eta = (s - 1.0) / s * (r + lambda * lambda / (2.0 * prefs.risk_aversion));
    if !(eta > 0.0) {
        return Err(SduError::IllPosed { eta });
    }
    Ok(MarketParams {
        r,
        mu,
        sigma,
        lambda,
        eta,
    })
}

/// Growth rate H(π, ξ) of the conditional (1−R)-moment of wealth under the
/// proportional strategy: E_t[X_s^{1−R}] = X_t^{1−R} e^{−H·(s−t)}.
///
/// Total function — callers that need H > 0 (membership in D) must gate on
/// the sign themselves.
pub fn growth_h(strategy: &Strategy, market: &MarketParams, prefs: &PreferenceParams) -> f64 {
    let r_ra = prefs.risk_aversion;
    let drift = market.r + strategy.pi * (market.mu - market.r)
        - strategy.xi
        - 0.5 * strategy.pi * strategy.pi * market.sigma * market.sigma * r_ra;
    (r_ra - 1.0) * drift
}

/// Membership test for D = {(π, ξ) : ξ > 0, H(π, ξ) > 0} — the strategies
/// with well-defined proportional value.
pub fn in_d(strategy: &Strategy, market: &MarketParams, prefs: &PreferenceParams) -> bool {
    strategy.xi > 0.0 && growth_h(strategy, market, prefs) > 0.0
}

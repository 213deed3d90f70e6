//! Closed forms on the proportional slice.
//!
//! For a strategy (π, ξ) in D = {ξ > 0, H(π, ξ) > 0} the utility of the
//! consumption stream C = ξX has the explicit proportional value
//!
//! ```text
//!     V(x) = h(π, ξ) · x^{1−R},    h(π, ξ) = (θ/H)^θ · ξ^{1−R} / (1−R),
//! ```
//!
//! maximized over D at the candidate (π̂, ξ̂) = (λ/(σR), η) where it equals
//! η^{−θS}/(1−R). The same slice also carries the J-integral identity
//! E_t[∫_t^∞ C_s^{1−R} ds] = C_t^{1−R}/H — the coefficient 1/H is recorded
//! on [`ProportionalSolution`] because every order bound downstream is
//! expressed in units of that integral.
//!
//! The proportional slice is also where uniqueness fails: for each A0 in
//! [0, (θ/H)^θ] the function
//!
//! ```text
//!     A'(t) = H·A(t) − θ·A(t)^ρ,    A(0) = A0,
//! ```
//!
//! hits zero in finite time T (then stays there) and every such A yields a
//! utility process V_t = A(t)·ξ^{1−R}X_t^{1−R}/(1−R) for the *same*
//! consumption stream — the improper family. Only the constant member
//! A0 = (θ/H)^θ (T = ∞) is proper. The substitution y = A^{1/θ} linearizes
//! the ODE to y' = (H/θ)y − 1, which is how members are evaluated and how
//! the absorption time
//!
//! ```text
//!     T = (θ/H) · ln( θ / (θ − H·A0^{1/θ}) )
//! ```
//!
//! is derived. Initial data above the ceiling (θ/H)^θ explode in finite
//! time instead and correspond to no utility process at all.

use crate::error::SduError;
use crate::params::{growth_h, in_d, MarketParams, PreferenceParams, Strategy};

/// Value data of a proportional strategy in D.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProportionalSolution {
    /// The strategy (π, ξ) this solution belongs to.
    pub strategy: Strategy,
    /// h(π, ξ) = (θ/H)^θ ξ^{1−R}/(1−R); V(x) = h·x^{1−R}. Shares the sign
    /// of 1−R.
    pub h_value: f64,
    /// Coefficient of C_t^{1−R} in E_t[∫_t^∞ C_s^{1−R} ds], i.e. 1/H.
    pub j_coefficient: f64,
    /// Growth rate H(π, ξ) > 0 of the strategy.
    pub growth: f64,
}

/// Absorption time of an improper family member. `Infinite` is reserved for
/// the exact ceiling member A0 = (θ/H)^θ; every other admissible member is
/// absorbed at a finite time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AbsorptionTime {
    Finite(f64),
    Infinite,
}

impl AbsorptionTime {
    pub fn is_finite(&self) -> bool {
        matches!(self, AbsorptionTime::Finite(_))
    }

    /// The finite absorption time, if any.
    pub fn finite(&self) -> Option<f64> {
        match self {
            AbsorptionTime::Finite(t) => Some(*t),
            AbsorptionTime::Infinite => None,
        }
    }
}

/// One member of the improper family attached to a strategy in D, indexed by
/// its initial datum A0 ∈ [0, (θ/H)^θ].
///
/// Evaluation runs through the linearizing coordinate y = A^{1/θ}:
/// y(t) = θ/H + (y0 − θ/H)e^{Ht/θ} until it hits zero at T, after which the
/// member is absorbed (A ≡ 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImproperFamilyMember {
    /// Initial datum A(0).
    pub a0: f64,
    /// Absorption time T; `Infinite` exactly for the constant (proper) member.
    pub absorption: AbsorptionTime,
    /// Strategy the family is attached to.
    pub strategy: Strategy,
    /// Growth rate H of that strategy (positive).
    pub growth: f64,
    /// Preference exponent θ.
    pub theta: f64,
    /// y0 = A0^{1/θ}, stored so the ceiling member is exactly stationary.
    y0: f64,
}

impl ImproperFamilyMember {
    /// A(t): the y-coordinate flow, clamped at absorption.
    pub fn a(&self, t: f64) -> f64 {
        if let AbsorptionTime::Finite(cap) = self.absorption {
            if t >= cap {
                return 0.0;
            }
        }
        let y = self.y(t);
        if y <= 0.0 {
            0.0
        } else {
            y.powf(self.theta)
        }
    }

    /// y(t) = θ/H + (y0 − θ/H)e^{Ht/θ} — exact for the stationary member
    /// because the coefficient (y0 − θ/H) is stored as computed once.
    fn y(&self, t: f64) -> f64 {
        let stationary = self.theta / self.growth;
        stationary + (self.y0 - stationary) * (self.growth * t / self.theta).exp()
    }
}

/// The family ceiling (θ/H)^θ for a strategy in D: initial data above it are
/// divergent, the ceiling itself is the unique proper member.
pub fn family_ceiling(
    strategy: &Strategy,
    market: &MarketParams,
    prefs: &PreferenceParams,
) -> Result<f64, SduError> {
    let h = growth_h(strategy, market, prefs);
    if !in_d(strategy, market, prefs) {
        return Err(SduError::OutsideD {
            pi: strategy.pi,
            xi: strategy.xi,
            h,
        });
    }
    Ok((prefs.theta / h).powf(prefs.theta))
}

/// Candidate optimal strategy (π̂, ξ̂) = (λ/(σR), η).
pub fn optimal_strategy(market: &MarketParams, prefs: &PreferenceParams) -> Strategy {
    Strategy::new(
        market.lambda / (market.sigma * prefs.risk_aversion),
        market.eta,
    )
}

/// Proportional value data for a strategy; errors with [`SduError::OutsideD`]
/// off the admissible set.
pub fn proportional_h(
    strategy: &Strategy,
    market: &MarketParams,
    prefs: &PreferenceParams,
) -> Result<ProportionalSolution, SduError> {
    let h = growth_h(strategy, market, prefs);
    if !(strategy.xi > 0.0 && h > 0.0) {
        return Err(SduError::OutsideD {
            pi: strategy.pi,
            xi: strategy.xi,
            h,
        });
    }
    let theta = prefs.theta;
    let base = (theta / h).powf(theta);
    let one_minus_r = 1.0 - prefs.risk_aversion;
    let h_value = base * strategy.xi.powf(one_minus_r) / one_minus_r;
    Ok(ProportionalSolution {
        strategy: *strategy,
        h_value,
        j_coefficient: 1.0 / h,
        growth: h,
    })
}

/// Optimal proportional value V̂(x) = η^{−θS} x^{1−R}/(1−R).
pub fn candidate_value(x: f64, market: &MarketParams, prefs: &PreferenceParams) -> f64 {
    let one_minus_r = 1.0 - prefs.risk_aversion;
    market.eta.powf(-prefs.theta * prefs.substitution) * x.powf(one_minus_r) / one_minus_r
}

/// Improper family member indexed by its initial datum A0.
///
/// A0 = 0 is the trivially absorbed member (T = 0); A0 equal to the ceiling
/// (θ/H)^θ (as an f64) is the stationary proper member (T = ∞); anything
/// above the ceiling is [`SduError::DivergentFamily`].
pub fn family_member(
    a0: f64,
    strategy: &Strategy,
    market: &MarketParams,
    prefs: &PreferenceParams,
) -> Result<ImproperFamilyMember, SduError> {
    let h = growth_h(strategy, market, prefs);
    if !in_d(strategy, market, prefs) {
        return Err(SduError::OutsideD {
            pi: strategy.pi,
            xi: strategy.xi,
            h,
        });
    }
    let theta = prefs.theta;
    let ceiling = (theta / h).powf(theta);
    if !(a0 >= 0.0) || a0 > ceiling {
        return Err(SduError::DivergentFamily { a0, ceiling });
    }
    if a0 == ceiling {
        // Stationary member: pin y0 to θ/H exactly so the y-flow coefficient
        // vanishes identically rather than picking up a round-trip ulp that
        // e^{Ht/θ} would amplify.
        return Ok(ImproperFamilyMember {
            a0,
            absorption: AbsorptionTime::Infinite,
            strategy: *strategy,
            growth: h,
            theta,
            y0: theta / h,
        });
    }
    let y0 = a0.powf(1.0 / theta);
    // T = (θ/H) ln(θ/(θ − H·y0)); the argument is ≥ 1 because y0 < θ/H.
    let t_abs = theta / h * (theta / (theta - h * y0)).ln();
    Ok(ImproperFamilyMember {
        a0,
        absorption: AbsorptionTime::Finite(t_abs),
        strategy: *strategy,
        growth: h,
        theta,
        y0,
    })
}

/// Improper family member indexed by its absorption time instead:
/// A0 = ((θ/H)(1 − e^{−HT/θ}))^θ. Inverse of [`family_member`]'s T formula.
pub fn family_member_from_t(
    t_abs: AbsorptionTime,
    strategy: &Strategy,
    market: &MarketParams,
    prefs: &PreferenceParams,
) -> Result<ImproperFamilyMember, SduError> {
    let h = growth_h(strategy, market, prefs);
    if !in_d(strategy, market, prefs) {
        return Err(SduError::OutsideD {
            pi: strategy.pi,
            xi: strategy.xi,
            h,
        });
    }
    let theta = prefs.theta;
    match t_abs {
        AbsorptionTime::Infinite => {
            let ceiling = (theta / h).powf(theta);
            family_member(ceiling, strategy, market, prefs)
        }
        AbsorptionTime::Finite(t) => {
            if !(t >= 0.0) {
                return Err(SduError::Config {
                    reason: format!("absorption time must be nonnegative, got {t}"),
                });
            }
            let y0 = theta / h * (1.0 - (-h * t / theta).exp());
            Ok(ImproperFamilyMember {
                a0: y0.powf(theta),
                absorption: AbsorptionTime::Finite(t),
                strategy: *strategy,
                growth: h,
                theta,
                y0,
            })
        }
    }
}

/// Default finite-difference step for [`ode_residual`]: 1e−4 · θ/H, i.e.
/// four orders below the family's natural time scale.
pub fn default_residual_dt(member: &ImproperFamilyMember) -> f64 {
    1e-4 * member.theta / member.growth
}

/// Central-difference defect of the family ODE at a single time:
/// |A'(t) − (H·A(t) − θ·A(t)^ρ)| with A' ≈ (A(t+dt) − A(t−dt))/(2dt).
///
/// Meaningful on [dt, T−dt); across the absorption time the difference
/// stencil straddles the C¹ junction and the defect measures the junction
/// itself rather than the ODE.
pub fn ode_residual_at(
    member: &ImproperFamilyMember,
    prefs: &PreferenceParams,
    t: f64,
    dt: f64,
) -> f64 {
    let fd = (member.a(t + dt) - member.a(t - dt)) / (2.0 * dt);
    let a = member.a(t);
    let rhs = member.growth * a - member.theta * a.powf(prefs.rho);
    (fd - rhs).abs()
}

/// Max central-difference ODE defect over a grid of interior times.
pub fn ode_residual(
    member: &ImproperFamilyMember,
    prefs: &PreferenceParams,
    grid: &[f64],
    dt: f64,
) -> f64 {
    grid.iter()
        .map(|&t| ode_residual_at(member, prefs, t, dt))
        .fold(0.0, f64::max)
}

/// Default residual grid: 400 interior points covering the member's life,
/// held clear of the endpoints by 10·dt so the central stencil never leaves
/// [0, T).
pub fn default_residual_grid(member: &ImproperFamilyMember, dt: f64) -> Vec<f64> {
    let horizon = match member.absorption {
        AbsorptionTime::Finite(t) => t,
        AbsorptionTime::Infinite => 5.0 * member.theta / member.growth,
    };
    let lo = 10.0 * dt;
    let hi = horizon - 10.0 * dt;
    if hi <= lo {
        return Vec::new();
    }
    let n = 400;
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

//! Solution-concept classifiers and comparison checks.
//!
//! A lattice solution W can be *proper* (nonzero wherever future consumption
//! remains), *CRRA-order* (sandwiched between positive multiples of
//! J = E[∫ U^θ]), or *extremal* (node-wise maximal). On self-ordered
//! streams the three concepts single out the same process; this module
//! classifies computed solutions, measures equation residuals, checks the
//! perturbed comparison principle, and demonstrates the improper family —
//! the continuum of solutions indexed by their absorption time, of which
//! exactly one (T = ∞) is proper.
//!
//! Residual semantics: at a node whose children are all zero the one-step
//! set of valid values is the whole interval [0, (I/θ)^θ] — the process may
//! be absorbed anywhere inside the step — so only the excess above
//! backward_step(0, I) counts as a defect. This is what makes "zero is
//! always a solution" literally true on the lattice.

use crate::error::SduError;
use crate::fixed_point::{
    compute_j, default_eps_sequence, extremal_solve, nu_scan, picard_solve, PerturbationSpec,
};
use crate::lattice::{
    backward_step, level_offset, proportional_consumption, solve_backward, AdaptedProcess, Lattice,
    ProportionalProfile, TailCondition,
};
use crate::params::Strategy;

/// Classification summary for one computed solution.
#[derive(Debug, Clone)]
pub struct SolutionReport {
    /// Max relative one-step equation defect (valid-set semantics).
    pub residual: f64,
    /// Nonzero wherever future consumption remains?
    pub proper: bool,
    /// Nodes with J > 0 but W ≈ 0 (empty when proper).
    pub witnesses: Vec<(usize, usize)>,
    /// Tightest (k̂, K̂) with k̂·J ≤ W ≤ K̂·J, absent when no positive
    /// sandwich exists.
    pub crra_order: Option<(f64, f64)>,
    /// Max relative node gap between the direct backward solution and the
    /// ε→0 extremal scheme (populated by [`concept_agreement`]).
    pub extremal_gap: Option<f64>,
    /// Max relative node gap between the Picard iterate and the direct
    /// backward solution — the held-ratio quadrature bias, reported for
    /// transparency rather than gated (it decays first-order in Δt).
    pub picard_gap: Option<f64>,
    /// Did every classification and the solver cross-check agree?
    pub concept_agreement: Option<bool>,
}

/// Relative floor used by the classifiers: a node counts as "zero" below
/// 1e−10 of the field's max. Closed-form embeddings cannot be trusted to
/// produce exact zeros after round-trips through powf.
pub const CLASSIFIER_TOL: f64 = 1e-10;

fn sup_rel_gap(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().cloned().fold(0.0, f64::max);
    let floor = CLASSIFIER_TOL * scale + f64::MIN_POSITIVE;
    let mut gap = 0.0f64;
    for idx in 0..a.len() {
        gap = gap.max((a[idx] - b[idx]).abs() / a[idx].max(floor));
    }
    gap
}

/// Max one-step equation defect of W against the stream U, relative to
/// max(node value, 1e−10·max W).
///
/// Interior nodes with a positive child expectation must reproduce
/// backward_step exactly; nodes whose children are all zero admit any value
/// in [0, (I/θ)^θ] (absorption inside the step), so only the excess above
/// that ceiling is a defect.
pub fn residual(w: &[f64], u: &AdaptedProcess, lattice: &Lattice) -> Result<f64, SduError> {
    u.validate(lattice)?;
    if w.len() != lattice.node_count() {
        return Err(SduError::Config {
            reason: format!(
                "solution length {} does not match lattice ({} nodes)",
                w.len(),
                lattice.node_count()
            ),
        });
    }
    let n = lattice.n_steps();
    let dt = lattice.dt();
    let prefs = &lattice.prefs;
    let scale = w.iter().cloned().fold(0.0, f64::max);
    let floor = CLASSIFIER_TOL * scale;
    let mut worst = 0.0f64;
    for i in 0..n {
        let off = level_offset(i);
        let next = &w[level_offset(i + 1)..level_offset(i + 2)];
        for jj in 0..=i {
            let idx = off + jj;
            let xi = lattice.expect_next(next, jj);
            let integral = u.step_integral(idx, dt);
            let defect = if xi == 0.0 {
                (w[idx] - backward_step(0.0, integral, prefs)).max(0.0)
            } else {
                (w[idx] - backward_step(xi, integral, prefs)).abs()
            };
            if defect > 0.0 {
                let denom = w[idx].max(floor);
                if denom > 0.0 {
                    worst = worst.max(defect / denom);
                }
            }
        }
    }
    Ok(worst)
}

/// Per-node "zero" floor for W, scaled by the node's own J: node values
/// legitimately span far more than ten orders of magnitude across the
/// wealth lattice, so a single global floor would misclassify healthy
/// far-corner nodes. W counts as zero at a node when it falls 1e−10 below
/// the global W/J ratio scale times that node's J.
fn w_zero_floor(w: &[f64], j: &[f64]) -> f64 {
    let w_max = w.iter().cloned().fold(0.0, f64::max);
    let j_max = j.iter().cloned().fold(0.0, f64::max);
    if j_max == 0.0 {
        return 0.0;
    }
    CLASSIFIER_TOL * w_max / j_max
}

/// Properness: W must be nonzero (above the J-scaled relative floor) at
/// every node where J is. Returns the violating nodes as (level, node)
/// witnesses.
pub fn is_proper(w: &[f64], j: &[f64], lattice: &Lattice) -> (bool, Vec<(usize, usize)>) {
    let ratio_floor = w_zero_floor(w, j);
    let j_floor = CLASSIFIER_TOL * j.iter().cloned().fold(0.0, f64::max);
    let mut witnesses = Vec::new();
    for i in 0..=lattice.n_steps() {
        let off = level_offset(i);
        for jj in 0..=i {
            let idx = off + jj;
            if j[idx] > j_floor && !(w[idx] > ratio_floor * j[idx]) {
                witnesses.push((i, jj));
            }
        }
    }
    (witnesses.is_empty(), witnesses)
}

/// Tightest CRRA-order constants: (k̂, K̂) = (min, max) of W/J over nodes
/// with J above the relative floor, or None as soon as such a node carries
/// no W mass (no positive sandwich exists).
pub fn crra_order_check(w: &[f64], j: &[f64], lattice: &Lattice) -> Option<(f64, f64)> {
    let ratio_floor = w_zero_floor(w, j);
    let j_floor = CLASSIFIER_TOL * j.iter().cloned().fold(0.0, f64::max);
    let mut k_hat = f64::INFINITY;
    let mut cap_hat = 0.0f64;
    let mut seen = false;
    for i in 0..=lattice.n_steps() {
        let off = level_offset(i);
        for jj in 0..=i {
            let idx = off + jj;
            if j[idx] <= j_floor {
                continue;
            }
            if !(w[idx] > ratio_floor * j[idx]) {
                return None;
            }
            let ratio = w[idx] / j[idx];
            k_hat = k_hat.min(ratio);
            cap_hat = cap_hat.max(ratio);
            seen = true;
        }
    }
    if seen && k_hat > 0.0 && cap_hat.is_finite() {
        Some((k_hat, cap_hat))
    } else {
        None
    }
}

/// Outcome of a comparison-principle check.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonOutcome {
    /// W¹ ≤ W² at every node (up to rounding slack)?
    pub ordered: bool,
    /// First violating (level, node) when not ordered.
    pub first_violation: Option<(usize, usize)>,
}

/// Perturbed comparison principle: under ε₁ ≤ ε₂, ε₂ > 0, U¹ ≤ U²
/// node-wise, the solutions must be ordered W¹ ≤ W². The hypotheses are
/// gates — the principle genuinely fails without ε₂ > 0 (the unperturbed
/// problem has the whole improper family).
pub fn comparison_check(
    w1: &[f64],
    w2: &[f64],
    u1: &AdaptedProcess,
    u2: &AdaptedProcess,
    eps1: f64,
    eps2: f64,
    lattice: &Lattice,
) -> Result<ComparisonOutcome, SduError> {
    u1.validate(lattice)?;
    u2.validate(lattice)?;
    if !(eps2 > 0.0) {
        return Err(SduError::HypothesisUnmet {
            reason: format!("comparison requires eps2 > 0, got {eps2}"),
        });
    }
    if !(eps1 <= eps2) {
        return Err(SduError::HypothesisUnmet {
            reason: format!("comparison requires eps1 <= eps2, got {eps1} > {eps2}"),
        });
    }
    for i in 0..=lattice.n_steps() {
        let off = level_offset(i);
        for jj in 0..=i {
            let idx = off + jj;
            if u1.values[idx] > u2.values[idx] {
                return Err(SduError::HypothesisUnmet {
                    reason: format!(
                        "comparison requires U1 <= U2; violated at level {i}, node {jj}"
                    ),
                });
            }
        }
    }
    let scale = w2.iter().cloned().fold(0.0, f64::max);
    let slack = 1e-12 * scale;
    for i in 0..=lattice.n_steps() {
        let off = level_offset(i);
        for jj in 0..=i {
            let idx = off + jj;
            if w1[idx] > w2[idx] * (1.0 + 1e-12) + slack {
                return Ok(ComparisonOutcome {
                    ordered: false,
                    first_violation: Some((i, jj)),
                });
            }
        }
    }
    Ok(ComparisonOutcome {
        ordered: true,
        first_violation: None,
    })
}

/// Three-concepts agreement on a self-ordered stream.
///
/// Computes the direct backward solution, the Picard solution with its
/// order certificate, and the ε→0 extremal limit, then classifies: the
/// report's `concept_agreement` is true when the backward solution is
/// proper and CRRA-order, the extremal solution is proper, and the two
/// independent solvers — direct backward induction and the perturbed
/// extremal scheme — agree within `tol_agree` node-wise. The Picard
/// iterate's deviation from the backward solution is its held-ratio
/// quadrature bias (first-order in Δt by construction); it is reported in
/// `picard_gap`, not gated.
///
/// The SO₊ hypothesis (some strictly positive tilt certifies the stream) is
/// established by [`nu_scan`]; streams that are not self-ordered — e.g.
/// indicator-type consumption that is zero while J > 0 — fail there with
/// the zero-patch reason.
pub fn concept_agreement(
    u: &AdaptedProcess,
    tail: &TailCondition,
    lattice: &Lattice,
    tol_agree: f64,
) -> Result<SolutionReport, SduError> {
    let nu = nu_scan(u, tail, lattice)?;
    let w = solve_backward(u, tail, lattice, &lattice.prefs)?;
    let j = compute_j(u, tail, lattice)?;
    let picard = picard_solve(u, &PerturbationSpec::none(u), tail, lattice, 1e-12, 400)?;
    let eps_seq = default_eps_sequence();
    let extremal = extremal_solve(u, u, nu, tail, lattice, &eps_seq, tol_agree * 0.05)?;

    let res = residual(&w, u, lattice)?;
    let (proper, witnesses) = is_proper(&w, &j, lattice);
    let crra = crra_order_check(&w, &j, lattice);
    let (ext_proper, _) = is_proper(&extremal.w, &j, lattice);
    let extremal_gap = sup_rel_gap(&w, &extremal.w);
    let picard_gap = sup_rel_gap(&w, &picard.w);
    let agreement = proper && ext_proper && crra.is_some() && extremal_gap < tol_agree;
    Ok(SolutionReport {
        residual: res,
        proper,
        witnesses,
        crra_order: crra,
        extremal_gap: Some(extremal_gap),
        picard_gap: Some(picard_gap),
        concept_agreement: Some(agreement),
    })
}

/// Embed the closed-form family member with initial coefficient `a0` on the
/// lattice: W_i = A(t_i)·(ξX_i)^{1−R}.
pub fn embed_family_member(
    a0: f64,
    strategy: &Strategy,
    lattice: &Lattice,
) -> Result<Vec<f64>, SduError> {
    let member = crate::closed_form::family_member(a0, strategy, &lattice.market, &lattice.prefs)?;
    let exponent = 1.0 - lattice.prefs.risk_aversion;
    let mut w = vec![0.0f64; lattice.node_count()];
    for i in 0..=lattice.n_steps() {
        let a_t = member.a(lattice.time(i));
        let off = level_offset(i);
        for jj in 0..=i {
            w[off + jj] = a_t * (strategy.xi * lattice.wealth(i, jj)).powf(exponent);
        }
    }
    Ok(w)
}

/// Demonstrate the improper family: embed each member, measure its
/// equation residual against the moment-consistent proportional stream, and
/// classify. On a lattice whose horizon exceeds every finite absorption
/// time in the list, exactly the ceiling member A0 = (θ/H)^θ is proper.
pub fn improper_family_demo(
    strategy: &Strategy,
    a0_list: &[f64],
    lattice: &Lattice,
) -> Result<Vec<SolutionReport>, SduError> {
    let u = proportional_consumption(lattice, strategy, ProportionalProfile::MomentConsistent);
    let j = compute_j(&u, &TailCondition::Proportional(*strategy), lattice)?;
    let mut reports = Vec::with_capacity(a0_list.len());
    for &a0 in a0_list {
        let w = embed_family_member(a0, strategy, lattice)?;
        let res = residual(&w, &u, lattice)?;
        let (proper, witnesses) = is_proper(&w, &j, lattice);
        let crra = crra_order_check(&w, &j, lattice);
        reports.push(SolutionReport {
            residual: res,
            proper,
            witnesses,
            crra_order: crra,
            extremal_gap: None,
            picard_gap: None,
            concept_agreement: None,
        });
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closed_form::{family_ceiling, optimal_strategy};
    use crate::lattice::{build_lattice, indicator_consumption, LatticeSpec, StoppingSpec};
    use crate::params::{
        derive_market, derive_preferences, growth_h, MarketParams, PreferenceParams,
    };
    use approx::assert_relative_eq;

    fn baseline() -> (PreferenceParams, MarketParams) {
        let prefs = derive_preferences(2.0, 1.5).unwrap();
        let market = derive_market(0.02, 0.05, 0.2, &prefs).unwrap();
        (prefs, market)
    }

    #[test]
    fn backward_solutions_have_tiny_residual() {
        let (prefs, market) = baseline();
        let opt = optimal_strategy(&market, &prefs);
        let lat = build_lattice(LatticeSpec::new(25, 30.0), &opt, &market, &prefs).unwrap();
        let u = proportional_consumption(&lat, &opt, ProportionalProfile::MomentConsistent);
        let tail = TailCondition::Proportional(opt);
        let w = solve_backward(&u, &tail, &lat, &prefs).unwrap();
        assert!(residual(&w, &u, &lat).unwrap() < 1e-12);
    }

    #[test]
    fn one_percent_perturbation_is_visible() {
        let (prefs, market) = baseline();
        let opt = optimal_strategy(&market, &prefs);
        let lat = build_lattice(LatticeSpec::new(25, 30.0), &opt, &market, &prefs).unwrap();
        let u = proportional_consumption(&lat, &opt, ProportionalProfile::MomentConsistent);
        let tail = TailCondition::Proportional(opt);
        let mut w = solve_backward(&u, &tail, &lat, &prefs).unwrap();
        let bump = lat.index(10, 4);
        w[bump] *= 1.01;
        let res = residual(&w, &u, &lat).unwrap();
        assert!(
            (3e-3..5e-2).contains(&res),
            "one-percent bump should register near 1e-2, got {res}"
        );
    }

    #[test]
    fn zero_process_is_a_solution() {
        let (prefs, market) = baseline();
        let opt = optimal_strategy(&market, &prefs);
        let lat = build_lattice(LatticeSpec::new(15, 20.0), &opt, &market, &prefs).unwrap();
        let u = proportional_consumption(&lat, &opt, ProportionalProfile::MomentConsistent);
        let w = vec![0.0; lat.node_count()];
        assert_eq!(residual(&w, &u, &lat).unwrap(), 0.0);
        // It is improper, with a witness at every node carrying J mass.
        let j = compute_j(&u, &TailCondition::Proportional(opt), &lat).unwrap();
        let (proper, witnesses) = is_proper(&w, &j, &lat);
        assert!(!proper);
        assert_eq!(witnesses.len(), lat.node_count());
        assert!(crra_order_check(&w, &j, &lat).is_none());
        let _ = prefs;
    }

    #[test]
    fn proportional_solution_is_pinned_crra_order() {
        let (prefs, market) = baseline();
        let opt = optimal_strategy(&market, &prefs);
        let lat = build_lattice(LatticeSpec::new(30, 40.0), &opt, &market, &prefs).unwrap();
        let u = proportional_consumption(&lat, &opt, ProportionalProfile::MomentConsistent);
        let tail = TailCondition::Proportional(opt);
        let w = solve_backward(&u, &tail, &lat, &prefs).unwrap();
        let j = compute_j(&u, &tail, &lat).unwrap();
        let (k_hat, cap_hat) = crra_order_check(&w, &j, &lat).unwrap();
        let h = lat.growth;
        // W = H^{1−θ}·J exactly for the moment-consistent stream.
        assert_relative_eq!(k_hat, h.powf(1.0 - prefs.theta), max_relative = 1e-10);
        assert_relative_eq!(cap_hat, h.powf(1.0 - prefs.theta), max_relative = 1e-10);
        // And a doubled process has the doubled constants.
        let w2: Vec<f64> = j.iter().map(|v| 2.0 * v).collect();
        let (a, b) = crra_order_check(&w2, &j, &lat).unwrap();
        assert_relative_eq!(a, 2.0, max_relative = 1e-14);
        assert_relative_eq!(b, 2.0, max_relative = 1e-14);
    }

    #[test]
    fn comparison_gates_and_orders() {
        let (prefs, market) = baseline();
        let opt = optimal_strategy(&market, &prefs);
        let lat = build_lattice(LatticeSpec::new(10, 12.0), &opt, &market, &prefs).unwrap();
        let u1 = proportional_consumption(&lat, &opt, ProportionalProfile::MomentConsistent);
        let mut u2 = u1.clone();
        for v in u2.values.iter_mut() {
            *v *= 1.1;
        }
        // Zero tails: scaling a stream by 1.1 while keeping a proportional
        // tail pinned to the 1.0x stream would be a stream/tail mismatch
        // that the order certificate rightly rejects.
        let tail = TailCondition::Zero;
        let eps = 1e-3;
        let pert1 = PerturbationSpec {
            epsilon: eps,
            nu: 0.0,
            lambda: u1.clone(),
        };
        let pert2 = PerturbationSpec {
            epsilon: eps,
            nu: 0.0,
            lambda: u2.clone(),
        };
        let w1 = picard_solve(&u1, &pert1, &tail, &lat, 1e-12, 300)
            .unwrap()
            .w;
        let w2 = picard_solve(&u2, &pert2, &tail, &lat, 1e-12, 300)
            .unwrap()
            .w;
        let out = comparison_check(&w1, &w2, &u1, &u2, eps, eps, &lat).unwrap();
        assert!(
            out.ordered,
            "1.1x consumption must dominate: {:?}",
            out.first_violation
        );
        assert!(
            w2[0] > w1[0] * 1.01,
            "domination should be strict at the root"
        );
        // Equality case.
        let same = comparison_check(&w1, &w1, &u1, &u1, eps, eps, &lat).unwrap();
        assert!(same.ordered);
        // Gates.
        let err = comparison_check(&w1, &w2, &u1, &u2, 0.0, 0.0, &lat).unwrap_err();
        assert!(matches!(err, SduError::HypothesisUnmet { .. }));
        let err = comparison_check(&w1, &w2, &u2, &u1, eps, eps, &lat).unwrap_err();
        assert!(matches!(err, SduError::HypothesisUnmet { .. }));
        let err = comparison_check(&w1, &w2, &u1, &u2, 2.0 * eps, eps, &lat).unwrap_err();
        assert!(matches!(err, SduError::HypothesisUnmet { .. }));
        let _ = prefs;
    }

    #[test]
    fn concepts_agree_on_the_proportional_stream() {
        let (prefs, market) = baseline();
        let opt = optimal_strategy(&market, &prefs);
        let h = growth_h(&opt, &market, &prefs);
        let lat = build_lattice(
            LatticeSpec::new(50, LatticeSpec::default_horizon(h)),
            &opt,
            &market,
            &prefs,
        )
        .unwrap();
        let u = proportional_consumption(&lat, &opt, ProportionalProfile::MomentConsistent);
        let report = concept_agreement(&u, &TailCondition::Proportional(opt), &lat, 1e-4).unwrap();
        assert_eq!(report.concept_agreement, Some(true));
        assert!(report.proper);
        assert!(report.residual < 1e-12);
        let (k_hat, cap_hat) = report.crra_order.unwrap();
        assert_relative_eq!(k_hat, h.powf(1.0 - prefs.theta), max_relative = 1e-9);
        assert_relative_eq!(cap_hat, h.powf(1.0 - prefs.theta), max_relative = 1e-9);
        assert!(report.extremal_gap.unwrap() < 1e-4);
        // The proportional stream is the collapsed case: even the Picard
        // quadrature is exact here.
        assert!(report.picard_gap.unwrap() < 1e-9);
    }

    #[test]
    fn concepts_agree_on_a_modulated_stream() {
        let (prefs, market) = baseline();
        let opt = optimal_strategy(&market, &prefs);
        let h = growth_h(&opt, &market, &prefs);
        let lat = build_lattice(
            LatticeSpec::new(60, LatticeSpec::default_horizon(h)),
            &opt,
            &market,
            &prefs,
        )
        .unwrap();
        let mut u = proportional_consumption(&lat, &opt, ProportionalProfile::MomentConsistent);
        for i in 0..=lat.n_steps() {
            for jj in 0..=i {
                let idx = lat.index(i, jj);
                let phase = (i as f64 * 0.53 + jj as f64 * 0.29).sin();
                u.values[idx] *= 1.25 + 0.75 * phase;
            }
        }
        let report = concept_agreement(&u, &TailCondition::Proportional(opt), &lat, 1e-4).unwrap();
        assert_eq!(report.concept_agreement, Some(true), "report: {report:?}");
        assert!(report.extremal_gap.unwrap() < 1e-4);
        // The quadrature bias is real and visibly first-order here.
        assert!(
            report.picard_gap.unwrap() > 1e-4,
            "modulation should expose the held-ratio bias"
        );
    }

    #[test]
    fn indicator_streams_fail_the_self_order_gate() {
        let (prefs, market) = baseline();
        let opt = optimal_strategy(&market, &prefs);
        let lat = build_lattice(LatticeSpec::new(12, 15.0), &opt, &market, &prefs).unwrap();
        let stops = StoppingSpec::deterministic(&lat, 6, None);
        let u = indicator_consumption(0.5, &stops, &lat).unwrap();
        let err = concept_agreement(&u, &TailCondition::Zero, &lat, 1e-4).unwrap_err();
        assert!(
            matches!(err, SduError::HypothesisUnmet { .. }),
            "got {err:?}"
        );
        let _ = prefs;
    }

    #[test]
    fn family_demo_classifies_exactly_the_ceiling_member_proper() {
        let (prefs, market) = baseline();
        let opt = optimal_strategy(&market, &prefs);
        let h = growth_h(&opt, &market, &prefs);
        let ceiling = family_ceiling(&opt, &market, &prefs).unwrap();
        // Horizon beyond the largest finite absorption time in the list:
        // A0 = (q·θ/H)^θ has T = (θ/H)·ln(1/(1−q)); q=0.95 gives ≈3θ/H.
        let horizon = 3.2 * prefs.theta / h;
        let lat = build_lattice(LatticeSpec::new(40, horizon), &opt, &market, &prefs).unwrap();
        let fracs = [0.0, 0.25, 0.6, 0.95];
        let mut a0s: Vec<f64> = fracs
            .iter()
            .map(|q| (q * prefs.theta / h).powf(prefs.theta))
            .collect();
        a0s.push(ceiling);
        let reports = improper_family_demo(&opt, &a0s, &lat).unwrap();
        for (pos, report) in reports.iter().enumerate() {
            let is_ceiling = pos == a0s.len() - 1;
            assert_eq!(report.proper, is_ceiling, "member {pos}: {report:?}");
            assert_eq!(report.crra_order.is_some(), is_ceiling);
            assert!(
                report.residual < 1e-9,
                "family member {pos} must satisfy the lattice equation, residual {}",
                report.residual
            );
            if !is_ceiling {
                assert!(!report.witnesses.is_empty());
            }
        }
        // Improper members' witnesses sit strictly after the absorption time.
        let member = crate::closed_form::family_member(a0s[1], &opt, &market, &prefs).unwrap();
        let t_abs = member.absorption.finite().unwrap();
        for (level, _) in &reports[1].witnesses {
            assert!(lat.time(*level) >= t_abs - 1e-9);
        }
    }
}

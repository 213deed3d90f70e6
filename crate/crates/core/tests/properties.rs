//! Randomized property suites: the qualitative structure of the model —
//! optimality, homogeneity, monotone absorption, moment calibration,
//! contraction, certificate containment, comparison, domination, and the
//! properness dichotomy — asserted on randomized desk-scale instances.

use proptest::prelude::*;

use sdu_lab::analysis::{comparison_check, crra_order_check, is_proper, residual};
use sdu_lab::closed_form::{
    candidate_value, family_ceiling, family_member, family_member_from_t, optimal_strategy,
    proportional_h,
};
use sdu_lab::fixed_point::{
    compute_j, default_eps_sequence, extremal_solve, nu_scan, picard_solve, PerturbationSpec,
};
use sdu_lab::lattice::{
    build_lattice, proportional_consumption, solve_backward, LatticeSpec, ProportionalProfile,
    TailCondition,
};
use sdu_lab::params::{
    derive_market, derive_preferences, growth_h, in_d, MarketParams, PreferenceParams,
    Strategy as TradingStrategy,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

fn baseline() -> (PreferenceParams, MarketParams) {
    let prefs = derive_preferences(2.0, 1.5).unwrap();
    let market = derive_market(0.02, 0.05, 0.2, &prefs).unwrap();
    (prefs, market)
}

fn low_aversion() -> (PreferenceParams, MarketParams) {
    let prefs = derive_preferences(0.5, 0.75).unwrap();
    let market = derive_market(-0.05, -0.04, 0.2, &prefs).unwrap();
    (prefs, market)
}

/// A proportional stream with an i.i.d. multiplicative node modulation —
/// the workhorse random instance for the solver properties.
fn modulated_stream(
    lat: &sdu_lab::lattice::Lattice,
    strategy: &TradingStrategy,
    seed: u64,
    lo: f64,
    hi: f64,
) -> sdu_lab::lattice::AdaptedProcess {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut u = proportional_consumption(lat, strategy, ProportionalProfile::MomentConsistent);
    for v in u.values.iter_mut() {
        *v *= rng.random_range(lo..hi);
    }
    u
}

proptest! {
    // ---- closed forms: cheap, run many cases -------------------------

    #[test]
    fn h_never_exceeds_the_analytic_maximum(pi in 0.0f64..1.0, xi in 1e-4f64..2.5e-2) {
        for (prefs, market) in [baseline(), low_aversion()] {
            let strat = TradingStrategy::new(pi, xi);
            if !in_d(&strat, &market, &prefs) {
                continue;
            }
            let h = proportional_h(&strat, &market, &prefs).unwrap().h_value;
            let opt = optimal_strategy(&market, &prefs);
            let max = proportional_h(&opt, &market, &prefs).unwrap().h_value;
            prop_assert!(h <= max + max.abs() * 1e-12,
                "h({pi}, {xi}) = {h} exceeds the maximum {max}");
        }
    }

    #[test]
    fn candidate_value_is_homogeneous(x in 1e-2f64..1e2, scale in 1e-2f64..1e2) {
        for (prefs, market) in [baseline(), low_aversion()] {
            let lhs = candidate_value(scale * x, &market, &prefs);
            let rhs = scale.powf(1.0 - prefs.risk_aversion) * candidate_value(x, &market, &prefs);
            prop_assert!(((lhs - rhs) / rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn absorption_time_is_strictly_increasing_in_the_datum(
        f1 in 1e-3f64..0.995,
        f2 in 1e-3f64..0.995,
    ) {
        prop_assume!((f1 - f2).abs() > 1e-6);
        let (lo, hi) = if f1 < f2 { (f1, f2) } else { (f2, f1) };
        let (prefs, market) = baseline();
        let opt = optimal_strategy(&market, &prefs);
        let ceiling = family_ceiling(&opt, &market, &prefs).unwrap();
        let t_lo = family_member(lo * ceiling, &opt, &market, &prefs)
            .unwrap().absorption.finite().unwrap();
        let t_hi = family_member(hi * ceiling, &opt, &market, &prefs)
            .unwrap().absorption.finite().unwrap();
        prop_assert!(t_lo < t_hi, "T({lo}) = {t_lo} not below T({hi}) = {t_hi}");
    }

    #[test]
    fn family_datum_round_trips_through_absorption_time(frac in 1e-3f64..0.995) {
        let (prefs, market) = baseline();
        let opt = optimal_strategy(&market, &prefs);
        let ceiling = family_ceiling(&opt, &market, &prefs).unwrap();
        let a0 = frac * ceiling;
        let member = family_member(a0, &opt, &market, &prefs).unwrap();
        let back = family_member_from_t(member.absorption, &opt, &market, &prefs).unwrap();
        prop_assert!(((back.a0 - a0) / a0).abs() < 1e-9,
            "A0 {a0} round-tripped to {}", back.a0);
    }

    #[test]
    fn family_profile_decays_to_absorption(
        frac in 1e-3f64..0.995,
        u1 in 0.0f64..1.0,
        u2 in 0.0f64..1.0,
    ) {
        let (prefs, market) = baseline();
        let opt = optimal_strategy(&market, &prefs);
        let ceiling = family_ceiling(&opt, &market, &prefs).unwrap();
        let member = family_member(frac * ceiling, &opt, &market, &prefs).unwrap();
        let t_abs = member.absorption.finite().unwrap();
        let (t1, t2) = if u1 < u2 { (u1 * t_abs, u2 * t_abs) } else { (u2 * t_abs, u1 * t_abs) };
        prop_assume!(t2 - t1 > 1e-9 * t_abs);
        prop_assert!(member.a(t1) > member.a(t2),
            "A not strictly decreasing: A({t1}) = {}, A({t2}) = {}", member.a(t1), member.a(t2));
        prop_assert!(member.a(0.0) <= frac * ceiling * (1.0 + 1e-12));
        prop_assert!(member.a(1.01 * t_abs) == 0.0, "profile must vanish past absorption");
    }

    #[test]
    fn lattice_moment_calibration_is_exact(
        pi in 0.0f64..1.0,
        xi in 1e-4f64..9.9e-3,
        n in 2usize..80,
        horizon in 1.0f64..80.0,
    ) {
        for (prefs, market) in [baseline(), low_aversion()] {
            let strat = TradingStrategy::new(pi, xi);
            prop_assume!(in_d(&strat, &market, &prefs));
            let lat = build_lattice(LatticeSpec::new(n, horizon), &strat, &market, &prefs).unwrap();
            let e = 1.0 - prefs.risk_aversion;
            let realized = 0.5 * ((e * lat.log_up).exp() + (e * lat.log_down).exp());
            let target = (-lat.growth * lat.dt()).exp();
            prop_assert!(((realized - target) / target).abs() < 1e-14,
                "per-step (1-R)-moment {realized} misses e^(-H dt) = {target}");
            prop_assert!(((lat.moment - target) / target).abs() < 1e-14);
        }
    }
}

proptest! {
    // ---- solver invariants: one small lattice solve per case --------
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn picard_solution_stays_inside_its_certificate_band(seed in any::<u64>()) {
        let (prefs, market) = baseline();
        let opt = optimal_strategy(&market, &prefs);
        let lat = build_lattice(LatticeSpec::new(12, 15.0), &opt, &market, &prefs).unwrap();
        let u = modulated_stream(&lat, &opt, seed, 0.5, 2.0);
        let sol = picard_solve(
            &u, &PerturbationSpec::none(&u), &TailCondition::Proportional(opt), &lat, 1e-12, 300,
        ).unwrap();
        let cert = &sol.certificate;
        for idx in 0..lat.node_count() {
            let slack = 1e-9 * (1.0 + cert.upper[idx].abs());
            prop_assert!(sol.w[idx] >= cert.lower[idx] - slack,
                "node {idx}: w = {} below band floor {}", sol.w[idx], cert.lower[idx]);
            prop_assert!(sol.w[idx] <= cert.upper[idx] + slack,
                "node {idx}: w = {} above band cap {}", sol.w[idx], cert.upper[idx]);
        }
        // The converged iterate solves the recursion at discretization
        // accuracy: the iteration's held-ratio quadrature differs from the
        // profile-exact step integral by Θ(Δ), not by iteration error.
        let defect = residual(&sol.w, &u, &lat).unwrap();
        prop_assert!(defect < 1e-2, "converged iterate has relative defect {defect}");
    }

    #[test]
    fn picard_gaps_contract_at_rate_rho(seed in any::<u64>()) {
        let (prefs, market) = baseline();
        let opt = optimal_strategy(&market, &prefs);
        let lat = build_lattice(LatticeSpec::new(12, 15.0), &opt, &market, &prefs).unwrap();
        let u = modulated_stream(&lat, &opt, seed, 0.5, 2.0);
        let sol = picard_solve(
            &u, &PerturbationSpec::none(&u), &TailCondition::Proportional(opt), &lat, 1e-12, 300,
        ).unwrap();
        // Once the transient has passed and before the gaps sink into
        // rounding noise, successive gaps contract at least at rate ρ.
        let n_ratios = sol.gaps.len().saturating_sub(1);
        for (pos, pair) in sol.gaps.windows(2).enumerate() {
            if pos < 2 || pos + 2 >= n_ratios {
                continue;
            }
            if pair[0] > 1e-13 && pair[1] > 1e-13 {
                prop_assert!(pair[1] <= pair[0] * (prefs.rho + 0.05),
                    "gap ratio {} exceeds rho + 0.05 (history {:?})", pair[1] / pair[0], sol.gaps);
            }
        }
    }

    #[test]
    fn perturbed_solutions_are_monotone_in_epsilon(
        seed in any::<u64>(),
        e_hi in 1e-4f64..0.1,
        shrink in 0.0f64..1.0,
    ) {
        let (prefs, market) = baseline();
        let opt = optimal_strategy(&market, &prefs);
        let lat = build_lattice(LatticeSpec::new(10, 12.0), &opt, &market, &prefs).unwrap();
        let u = modulated_stream(&lat, &opt, seed, 0.5, 2.0);
        let e_lo = e_hi * shrink;
        let tail = TailCondition::Zero;
        let p_lo = PerturbationSpec { epsilon: e_lo, nu: 0.0, lambda: u.clone() };
        let p_hi = PerturbationSpec { epsilon: e_hi, nu: 0.0, lambda: u.clone() };
        let w_lo = picard_solve(&u, &p_lo, &tail, &lat, 1e-12, 300).unwrap().w;
        let w_hi = picard_solve(&u, &p_hi, &tail, &lat, 1e-12, 300).unwrap().w;
        let outcome = comparison_check(&w_lo, &w_hi, &u, &u, e_lo, e_hi, &lat).unwrap();
        prop_assert!(outcome.ordered, "violation at {:?}", outcome.first_violation);
        for idx in 0..lat.node_count() {
            prop_assert!(w_lo[idx] <= w_hi[idx] + 1e-12 * (1.0 + w_hi[idx].abs()));
        }
    }

    #[test]
    fn extremal_construction_converges_to_the_backward_solve(seed in any::<u64>()) {
        let (prefs, market) = baseline();
        let opt = optimal_strategy(&market, &prefs);
        let h = growth_h(&opt, &market, &prefs);
        let lat = build_lattice(
            LatticeSpec::new(24, LatticeSpec::default_horizon(h)), &opt, &market, &prefs,
        ).unwrap();
        let u = modulated_stream(&lat, &opt, seed, 0.5, 2.0);
        let tail = TailCondition::Proportional(opt);
        let w_back = solve_backward(&u, &tail, &lat, &prefs).unwrap();
        let nu = nu_scan(&u, &tail, &lat).unwrap();
        prop_assert!(nu > 0.0, "nu scan must certify a positive tilt");
        let ext = extremal_solve(&u, &u, nu, &tail, &lat, &default_eps_sequence(), 5e-6).unwrap();
        prop_assert!(ext.rounds <= 20);
        prop_assert!(ext.gaps.last().copied().unwrap_or(f64::NAN) < 5e-6);
        let mut sup_gap = 0.0f64;
        for idx in 0..lat.node_count() {
            if w_back[idx] > 0.0 {
                sup_gap = sup_gap.max((ext.w[idx] - w_back[idx]).abs() / w_back[idx]);
            }
        }
        prop_assert!(sup_gap < 1e-4, "extremal construction stalled at gap {sup_gap}");
    }

    #[test]
    fn crra_order_certificate_implies_properness(seed in any::<u64>()) {
        let (prefs, market) = baseline();
        let opt = optimal_strategy(&market, &prefs);
        let h = growth_h(&opt, &market, &prefs);
        let lat = build_lattice(
            LatticeSpec::new(24, LatticeSpec::default_horizon(h)), &opt, &market, &prefs,
        ).unwrap();
        let u = modulated_stream(&lat, &opt, seed, 0.5, 2.0);
        let tail = TailCondition::Proportional(opt);
        let w = solve_backward(&u, &tail, &lat, &prefs).unwrap();
        let j = compute_j(&u, &tail, &lat).unwrap();
        let order = crra_order_check(&w, &j, &lat);
        prop_assert!(order.is_some(), "positive modulated streams must be CRRA-ordered");
        let (k_hat, cap_hat) = order.unwrap();
        prop_assert!(k_hat > 0.0 && k_hat <= cap_hat * (1.0 + 1e-12));
        let (proper, witnesses) = is_proper(&w, &j, &lat);
        prop_assert!(proper, "CRRA-ordered solution flagged improper at {witnesses:?}");
    }
}

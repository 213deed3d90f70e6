//! Picard iteration with order certificates, and the perturbed extremal
//! construction.
//!
//! Everything here happens in transformed coordinates: W = (1−R)V ≥ 0,
//! U = θC^{1−S} ≥ 0, where the utility recursion is the fixed-point problem
//!
//! ```text
//!     W = F(W),    F(W)_t = E_t[ ∫_t^∞ U_s W_s^ρ ds ]      (ρ ∈ (0,1)).
//! ```
//!
//! The reference object is the first-power integral J_t = E_t[∫_t^∞ U_s^θ ds].
//! A stream whose θ-power is *self-ordered* — k·J ≤ U^θ ≤ K·J node-wise for
//! constants 0 < k ≤ K < ∞ — traps the fixed point: with A, B solving
//!
//! ```text
//!     A = K^{−1}(A^ρ + ε),        B = k^{−1}(B^ρ + ε),
//! ```
//!
//! the band kA·J ≤ W ≤ KB·J is invariant under the (possibly ε-perturbed)
//! operator and F contracts on it at rate ρ in the log-metric. On the
//! lattice the discrete operator holds the band ratio W/U^θ at the left node
//! of each step and integrates U^θ exactly:
//!
//! ```text
//!     F(W)_i = (W_i/U_i^θ)^ρ · ∫step U^θ + ε·∫step e^{νs}Λ^θ + E_i[F(W)_{i+1}],
//! ```
//!
//! which is precisely the estimate the band-invariance proof runs on — so
//! containment holds on the lattice with no discretization slack, and for
//! the moment-consistent proportional stream the whole construction
//! collapses: J = U^θ/H, k = K = H, A = B = H^{−θ}, and the fixed point is
//! (θ/H)^θ C^{1−R} exactly.
//!
//! The extremal route approaches the *maximal* solution from strictly
//! positive data instead: for ε_n ↓ 0 it solves the aggregator perturbed by
//! ε_n·(e^{νt}Λ_t)^θ with consumption floored at max(U, e^{νt}Λ_t/n). The
//! source term breaks the closed within-step step, so steps are integrated
//! with fixed-substep classical RK4. Successive solutions decrease; the
//! scheme stops when they agree to tolerance.

use crate::error::SduError;
use crate::lattice::{level_offset, AdaptedProcess, Lattice, TailCondition};
use crate::params::PreferenceParams;

/// Perturbation ε·e^{νt}Λ_t^θ added to the aggregator, with its envelope Λ.
#[derive(Debug, Clone)]
pub struct PerturbationSpec {
    /// Perturbation size ε ≥ 0.
    pub epsilon: f64,
    /// Discount tilt ν (the source carries e^{νt}).
    pub nu: f64,
    /// Envelope process Λ; for the unperturbed problem pass the stream
    /// itself.
    pub lambda: AdaptedProcess,
}

impl PerturbationSpec {
    /// No perturbation: ε = 0, ν = 0, Λ = U.
    pub fn none(u: &AdaptedProcess) -> Self {
        PerturbationSpec {
            epsilon: 0.0,
            nu: 0.0,
            lambda: u.clone(),
        }
    }
}

/// Order certificate produced by a Picard solve: the self-order constants
/// of U^θ against J, the band roots A and B, and the resulting node-wise
/// envelope kA·J ≤ W ≤ KB·J.
#[derive(Debug, Clone)]
pub struct OrderCertificate {
    /// Lower self-order constant k = min U^θ/J (interior nodes).
    pub k: f64,
    /// Upper self-order constant K = max U^θ/J.
    pub k_cap: f64,
    /// Root of A = K^{−1}(A^ρ + ε_lower).
    pub a: f64,
    /// Root of B = k^{−1}(B^ρ + ε_upper).
    pub b: f64,
    /// ε entering the lower-root equation: ε scaled by the *smallest*
    /// step-wise ratio of the tilted Λ^θ integral to the U^θ integral.
    /// Equals ε itself when Λ = U and ν = 0.
    pub eps_lower: f64,
    /// ε entering the upper-root equation: ε scaled by the *largest* such
    /// ratio. Equals ε itself when Λ = U and ν = 0, so both roots then
    /// solve the textbook equations.
    pub eps_upper: f64,
    /// Node-wise lower envelope kA·J.
    pub lower: Vec<f64>,
    /// Node-wise upper envelope KB·J.
    pub upper: Vec<f64>,
}

/// Result of a Picard solve.
#[derive(Debug, Clone)]
pub struct PicardSolution {
    /// Fixed point W on every node.
    pub w: Vec<f64>,
    pub certificate: OrderCertificate,
    /// Iterations actually performed.
    pub iterations: usize,
    /// Sup-node relative gap after each iteration (the convergence history).
    pub gaps: Vec<f64>,
}

/// Result of an extremal solve.
#[derive(Debug, Clone)]
pub struct ExtremalSolution {
    /// The last (smallest-ε) solution — the approximation to the maximal
    /// solution from above.
    pub w: Vec<f64>,
    /// ε at which the scheme declared convergence.
    pub eps_final: f64,
    /// Number of ε-rounds performed.
    pub rounds: usize,
    /// Sup-node relative gap between successive rounds.
    pub gaps: Vec<f64>,
}

/// J_t = E_t[∫_t^∞ U_s^θ ds] on the lattice: exact step integrals of the
/// θ-power plus backward expectation, closed by the tail's J-boundary.
pub fn compute_j(
    u: &AdaptedProcess,
    tail: &TailCondition,
    lattice: &Lattice,
) -> Result<Vec<f64>, SduError> {
    compute_j_tilted(u, tail, lattice, 0.0)
}

/// ν-tilted variant: J^{(ν)}_t = E_t[∫_t^∞ e^{νs} U_s^θ ds]. The
/// proportional tail requires ν < H (the tilted tail integral is
/// e^{νT}·U_T^θ/(H−ν)); an `Explicit` tail is taken as the J-boundary as
/// given, i.e. the caller supplies the tilted tail themselves.
pub fn compute_j_tilted(
    u: &AdaptedProcess,
    tail: &TailCondition,
    lattice: &Lattice,
    nu: f64,
) -> Result<Vec<f64>, SduError> {
    u.validate(lattice)?;
    let n = lattice.n_steps();
    let dt = lattice.dt();
    let theta = lattice.prefs.theta;
    let mut j = vec![0.0f64; lattice.node_count()];
    let boundary = match tail {
        TailCondition::Proportional(s) if nu != 0.0 => {
            let h = crate::params::growth_h(s, &lattice.market, &lattice.prefs);
            if !(nu < h) {
                return Err(SduError::HypothesisUnmet {
                    reason: format!("tilt nu={nu} must stay below the tail growth rate H={h}"),
                });
            }
            let base = tail.j_boundary(lattice)?;
            let scale = (nu * lattice.spec.horizon).exp() * h / (h - nu);
            base.into_iter().map(|v| v * scale).collect()
        }
        _ => tail.j_boundary(lattice)?,
    };
    j[level_offset(n)..].copy_from_slice(&boundary);
    for i in (0..n).rev() {
        let (head, tail_slice) = j.split_at_mut(level_offset(i + 1));
        let next = &tail_slice[..i + 2];
        let off = level_offset(i);
        let t_i = lattice.time(i);
        for jj in 0..=i {
            let idx = off + jj;
            let step = if nu == 0.0 {
                u.step_integral_theta(idx, dt, theta)
            } else {
                u.step_integral_theta_tilted(idx, dt, theta, nu, t_i)
            };
            head[idx] = step + lattice.expect_next(next, jj);
        }
    }
    Ok(j)
}

/// Self-order constants of U^θ relative to J: (k, K) with k·J ≤ U^θ ≤ K·J
/// over every node with integral mass, the tail level included — the
/// boundary ratio stands in for the whole continuation after the horizon
/// (for a proportional tail it equals the growth rate H exactly), and the
/// band-containment guarantee needs the constants to cover it.
///
/// Nodes where both U^θ and J are exactly zero are outside the stream's
/// support and are skipped (zeros propagate exactly through the integrals
/// and expectations, so no magnitude floor is needed — lattice values
/// legitimately span many orders of magnitude). A node with consumption but
/// no remaining integral, or vice versa, breaks self-ordering.
pub fn self_order_constants(
    u: &AdaptedProcess,
    j: &[f64],
    lattice: &Lattice,
) -> Result<(f64, f64), SduError> {
    let theta = lattice.prefs.theta;
    let n = lattice.n_steps();
    let mut k = f64::INFINITY;
    let mut k_cap = 0.0f64;
    let mut seen = false;
    for i in 0..=n {
        let off = level_offset(i);
        for jj in 0..=i {
            let idx = off + jj;
            let num = u.values[idx].powf(theta);
            let den = j[idx];
            if den == 0.0 && num == 0.0 {
                continue;
            }
            if den == 0.0 {
                // Only the boundary level can carry consumption with no
                // integral (interior consumption feeds its own step
                // integral). There the value is a measure-zero endpoint —
                // with a Zero tail it represents no consumption at all —
                // so it is skipped rather than treated as a patch.
                if i == n {
                    continue;
                }
                return Err(SduError::NotSelfOrder {
                    reason: format!(
                        "level {i}, node {jj}: consumption U^theta={num} with vanishing J"
                    ),
                });
            }
            if num == 0.0 {
                return Err(SduError::NotSelfOrder {
                    reason: format!(
                        "level {i}, node {jj}: J={den} remains but consumption has a zero patch"
                    ),
                });
            }
            let ratio = num / den;
            k = k.min(ratio);
            k_cap = k_cap.max(ratio);
            seen = true;
        }
    }
    if !seen || !(k > 0.0) || !k_cap.is_finite() {
        return Err(SduError::NotSelfOrder {
            reason: "no node carries both consumption and integral mass".into(),
        });
    }
    Ok((k, k_cap))
}

/// Solve the band-root equations A = K^{−1}(A^ρ + ε), B = k^{−1}(B^ρ + ε).
///
/// For ε = 0 the roots are exactly K^{−θ} and k^{−θ}. For ε > 0 each
/// equation has a unique positive root (the map x ↦ coef^{−1}(x^ρ+ε) is
/// concave increasing from a positive value); bisection runs on the bracket
/// [ε^θ·coef^{−θ}, (1+ε)^θ·coef^{−θ}] — valid for ε ≤ 1 — and expands the
/// ends when a larger ε pushes the root outside.
pub fn solve_ab(
    k: f64,
    k_cap: f64,
    epsilon: f64,
    prefs: &PreferenceParams,
) -> Result<(f64, f64), SduError> {
    if !(k > 0.0) || !(k_cap >= k) || !(epsilon >= 0.0) {
        return Err(SduError::Config {
            reason: format!("band-root inputs invalid: k={k}, K={k_cap}, epsilon={epsilon}"),
        });
    }
    let theta = prefs.theta;
    if epsilon == 0.0 {
        return Ok((k_cap.powf(-theta), k.powf(-theta)));
    }
    let rho = prefs.rho;
    let root = |coef: f64| -> f64 {
        let g = |x: f64| (x.powf(rho) + epsilon) / coef - x;
        let mut lo = epsilon.powf(theta) * coef.powf(-theta);
        let mut hi = (1.0 + epsilon).powf(theta) * coef.powf(-theta);
        // g(lo) ≥ 0 ≥ g(hi) wanted; expand whichever end fails.
        let mut tries = 0;
        while g(lo) < 0.0 {
            lo *= 0.5;
            tries += 1;
            assert!(tries < 300, "lower bracket expansion failed");
        }
        while g(hi) > 0.0 {
            hi *= 2.0;
            tries += 1;
            assert!(tries < 300, "upper bracket expansion failed");
        }
        for _ in 0..300 {
            if hi - lo <= 1e-12 {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if g(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    Ok((root(k_cap), root(k)))
}

fn max_abs(values: &[f64]) -> f64 {
    values.iter().cloned().fold(0.0, f64::max)
}

/// Build the certificate for a stream/perturbation pair: constants, band
/// roots (with the effective ε when Λ ≠ U or ν ≠ 0), and node envelopes.
fn build_certificate(
    u: &AdaptedProcess,
    perturbation: &PerturbationSpec,
    j: &[f64],
    lattice: &Lattice,
) -> Result<OrderCertificate, SduError> {
    let (k, k_cap) = self_order_constants(u, j, lattice).map_err(|e| SduError::NoContraction {
        reason: format!("certificate unavailable: {e}"),
    })?;
    // Effective ε range: the step-wise ratio of the tilted Λ^θ integral to
    // the U^θ integral. The smallest ratio keeps the lower band invariant,
    // the largest keeps the upper band. Both collapse to ε when Λ = U and
    // ν = 0.
    let (eps_lower, eps_upper) = if perturbation.epsilon == 0.0 {
        (0.0, 0.0)
    } else if perturbation.nu == 0.0 && perturbation.lambda == *u {
        (perturbation.epsilon, perturbation.epsilon)
    } else {
        let dt = lattice.dt();
        let theta = lattice.prefs.theta;
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for i in 0..lattice.n_steps() {
            let off = level_offset(i);
            let t_i = lattice.time(i);
            for jj in 0..=i {
                let idx = off + jj;
                let src = perturbation.lambda.step_integral_theta_tilted(
                    idx,
                    dt,
                    theta,
                    perturbation.nu,
                    t_i,
                );
                let base = u.step_integral_theta(idx, dt, theta);
                if base == 0.0 {
                    if src > 0.0 {
                        return Err(SduError::NoContraction {
                            reason: format!(
                                "perturbation source without consumption at level {i}, node {jj}"
                            ),
                        });
                    }
                    continue;
                }
                lo = lo.min(src / base);
                hi = hi.max(src / base);
            }
        }
        if !lo.is_finite() {
            lo = 1.0;
            hi = 1.0;
        }
        (perturbation.epsilon * lo, perturbation.epsilon * hi)
    };
    let (a, _) = solve_ab(k, k_cap, eps_lower, &lattice.prefs)?;
    let (_, b) = solve_ab(k, k_cap, eps_upper, &lattice.prefs)?;
    let lower: Vec<f64> = j.iter().map(|v| k * a * v).collect();
    let upper: Vec<f64> = j.iter().map(|v| k_cap * b * v).collect();
    Ok(OrderCertificate {
        k,
        k_cap,
        a,
        b,
        eps_lower,
        eps_upper,
        lower,
        upper,
    })
}

/// Picard iteration for the (possibly perturbed) utility fixed point,
/// starting from the certified upper band.
///
/// The initial iterate is B·U^θ; each sweep applies the discrete operator
/// exactly (ratio held at the left node, U^θ and the ε-source integrated in
/// closed form, expectations exact), so the gap contracts at rate ≈ ρ once
/// inside the band. Convergence is declared when the sup-node relative gap
/// drops below `tol`; the result is checked against the certificate
/// envelope before returning.
///
/// When ε > 0 the perturbation also acts beyond the horizon, so the tail
/// datum is lifted onto the certified lower edge kA·J wherever the
/// unperturbed tail value falls below it — the solve then returns the
/// smallest certified solution of the perturbed problem. For ε = 0 the
/// tail is used verbatim.
pub fn picard_solve(
    u: &AdaptedProcess,
    perturbation: &PerturbationSpec,
    tail: &TailCondition,
    lattice: &Lattice,
    tol: f64,
    max_iter: usize,
) -> Result<PicardSolution, SduError> {
    u.validate(lattice)?;
    perturbation.lambda.validate(lattice)?;
    if !(tol > 0.0) || max_iter == 0 {
        return Err(SduError::Config {
            reason: format!("picard controls invalid: tol={tol}, max_iter={max_iter}"),
        });
    }
    if !(perturbation.epsilon >= 0.0) {
        return Err(SduError::Config {
            reason: format!("epsilon must be nonnegative, got {}", perturbation.epsilon),
        });
    }
    let j = compute_j(u, tail, lattice)?;

    // Degenerate stream: with no consumption and no source anywhere the
    // operator is the plain backward expectation of the boundary — one
    // sweep solves it exactly, and the only sensible certificate is the
    // all-zero band (which contains the solution iff the boundary is zero).
    if u.values.iter().all(|v| *v == 0.0) && perturbation.epsilon == 0.0 {
        let boundary = tail.w_boundary(lattice)?;
        let n = lattice.n_steps();
        let mut w = vec![0.0f64; lattice.node_count()];
        w[level_offset(n)..].copy_from_slice(&boundary);
        for i in (0..n).rev() {
            let (head, rest) = w.split_at_mut(level_offset(i + 1));
            let next = &rest[..i + 2];
            let off = level_offset(i);
            for jj in 0..=i {
                head[off + jj] = lattice.expect_next(next, jj);
            }
        }
        let zeros = vec![0.0f64; lattice.node_count()];
        let certificate = OrderCertificate {
            k: 0.0,
            k_cap: 0.0,
            a: 0.0,
            b: 0.0,
            eps_lower: 0.0,
            eps_upper: 0.0,
            lower: zeros.clone(),
            upper: zeros,
        };
        if w.iter().any(|v| *v != 0.0) {
            return Err(SduError::NoContraction {
                reason: "zero stream with a nonzero tail has no certified band".into(),
            });
        }
        return Ok(PicardSolution {
            w,
            certificate,
            iterations: 1,
            gaps: vec![0.0],
        });
    }

    let certificate = build_certificate(u, perturbation, &j, lattice)?;

    let n = lattice.n_steps();
    let dt = lattice.dt();
    let theta = lattice.prefs.theta;
    let rho = lattice.prefs.rho;
    let n_nodes = lattice.node_count();

    // Precompute per-node step integrals: ∫U^θ and the ε-source.
    let mut iu_theta = vec![0.0f64; n_nodes];
    let mut source = vec![0.0f64; n_nodes];
    for i in 0..n {
        let off = level_offset(i);
        let t_i = lattice.time(i);
        for jj in 0..=i {
            let idx = off + jj;
            iu_theta[idx] = u.step_integral_theta(idx, dt, theta);
            if perturbation.epsilon > 0.0 {
                source[idx] = perturbation.epsilon
                    * perturbation.lambda.step_integral_theta_tilted(
                        idx,
                        dt,
                        theta,
                        perturbation.nu,
                        t_i,
                    );
            }
        }
    }

    // Tail datum. The tail conditions describe the unperturbed
    // continuation; when ε > 0 the perturbation also acts beyond the
    // horizon, and the smallest continuation value consistent with the
    // certificate is the lower band edge kA·J — lift the boundary onto it.
    // For ε = 0 the given tails already respect the band and are used
    // verbatim.
    let mut boundary = tail.w_boundary(lattice)?;
    if perturbation.epsilon > 0.0 {
        let off = level_offset(n);
        for (pos, b) in boundary.iter_mut().enumerate() {
            *b = b.max(certificate.lower[off + pos]);
        }
    }
    let mut w: Vec<f64> = u
        .values
        .iter()
        .map(|v| certificate.b * v.powf(theta))
        .collect();
    w[level_offset(n)..].copy_from_slice(&boundary);

    let w_scale = max_abs(&w);
    let floor = 1e-30 * (1.0 + w_scale);
    let mut gaps = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut next = w.clone();
    while iterations < max_iter {
        iterations += 1;
        next[level_offset(n)..].copy_from_slice(&boundary);
        for i in (0..n).rev() {
            let off = level_offset(i);
            for jj in 0..=i {
                let idx = off + jj;
                let consumption = if iu_theta[idx] > 0.0 {
                    let ratio = w[idx] / u.values[idx].powf(theta);
                    ratio.powf(rho) * iu_theta[idx]
                } else {
                    0.0
                };
                let next_level = &next[level_offset(i + 1)..level_offset(i + 2)];
                next[idx] = consumption + source[idx] + lattice.expect_next(next_level, jj);
            }
        }
        let mut gap = 0.0f64;
        for idx in 0..n_nodes {
            let denom = w[idx].max(floor);
            gap = gap.max((next[idx] - w[idx]).abs() / denom);
        }
        std::mem::swap(&mut w, &mut next);
        gaps.push(gap);
        if gap < tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(SduError::MaxIterExceeded {
            iterations,
            last_gap: *gaps.last().unwrap_or(&f64::NAN),
        });
    }
    // Certificate containment, with rounding slack: the band argument is
    // exact on the lattice, so any material violation is a real failure.
    let slack = 1e-9;
    for idx in 0..n_nodes {
        let (lo, hi) = (certificate.lower[idx], certificate.upper[idx]);
        if w[idx] < lo * (1.0 - slack) - floor || w[idx] > hi * (1.0 + slack) + floor {
            return Err(SduError::NoContraction {
                reason: format!(
                    "certificate containment violated at flat index {idx}: {} outside [{lo}, {hi}]",
                    w[idx]
                ),
            });
        }
    }
    Ok(PicardSolution {
        w,
        certificate,
        iterations,
        gaps,
    })
}

/// Scan a small grid of tilts ν (fractions of 1/T_max) and return the
/// largest for which the ν-discounted self-order constants of U^θ exist and
/// are finite. The existence theory needs only *some* ν > 0; scanning near
/// the supremum instead would make e^{νt}/n dwarf every admissible floor.
pub fn nu_scan(
    u: &AdaptedProcess,
    tail: &TailCondition,
    lattice: &Lattice,
) -> Result<f64, SduError> {
    let horizon = lattice.spec.horizon;
    for mult in [2.0, 1.5, 1.0, 0.5] {
        let nu = mult / horizon;
        let j_nu = match compute_j_tilted(u, tail, lattice, nu) {
            Ok(j) => j,
            Err(_) => continue,
        };
        // ν-discounted stream: e^{νt}U^θ against J^{(ν)}.
        let tilted = AdaptedProcess {
            values: {
                let mut vals = u.values.clone();
                for i in 0..=lattice.n_steps() {
                    let off = level_offset(i);
                    let boost = (nu * lattice.time(i) / lattice.prefs.theta).exp();
                    for jj in 0..=i {
                        vals[off + jj] *= boost;
                    }
                }
                vals
            },
            profiles: u.profiles.clone(),
        };
        if self_order_constants(&tilted, &j_nu, lattice).is_ok() {
            return Ok(nu);
        }
    }
    Err(SduError::HypothesisUnmet {
        reason: "no strictly positive tilt on the scan grid certifies the stream".into(),
    })
}

/// Extremal (maximal-solution) scheme: solve the ε_n-perturbed problem with
/// consumption floored at max(U, e^{νt}Λ/n) for a decreasing ε-sequence, and
/// stop when successive solutions agree to `tol` sup-node relative.
///
/// Within-step integration is classical RK4 with four fixed substeps on
/// dW/ds = −(u_n(s)·W^ρ + ε_n·e^{νθs}·λ(s)^θ), backward from the child
/// expectation; the perturbing source keeps every W strictly positive, so
/// the scheme approaches the maximal solution from above.
pub fn extremal_solve(
    u: &AdaptedProcess,
    lambda: &AdaptedProcess,
    nu: f64,
    tail: &TailCondition,
    lattice: &Lattice,
    eps_sequence: &[f64],
    tol: f64,
) -> Result<ExtremalSolution, SduError> {
    u.validate(lattice)?;
    lambda.validate(lattice)?;
    if eps_sequence.is_empty() || !(tol > 0.0) {
        return Err(SduError::Config {
            reason: "extremal scheme needs a nonempty eps sequence and tol > 0".into(),
        });
    }
    if eps_sequence.windows(2).any(|w| !(w[1] < w[0])) || !(eps_sequence[0] > 0.0) {
        return Err(SduError::Config {
            reason: "eps sequence must be strictly decreasing and positive".into(),
        });
    }
    for i in 0..=lattice.n_steps() {
        let off = level_offset(i);
        for jj in 0..=i {
            if lambda.values[off + jj] < u.values[off + jj] {
                return Err(SduError::NotDominated { step: i, node: jj });
            }
        }
    }

    let boundary = tail.w_boundary(lattice)?;

    let mut previous: Option<Vec<f64>> = None;
    let mut gaps = Vec::new();
    let mut rounds = 0usize;
    for (round, &eps) in eps_sequence.iter().enumerate() {
        rounds = round + 1;
        let floor_scale = 1.0 / (round + 1) as f64;
        let w = perturbed_backward(u, lambda, nu, eps, floor_scale, &boundary, lattice);
        if let Some(prev) = &previous {
            let floor = 1e-30 * (1.0 + max_abs(prev));
            let mut gap = 0.0f64;
            for idx in 0..w.len() {
                gap = gap.max((prev[idx] - w[idx]).abs() / prev[idx].max(floor));
            }
            gaps.push(gap);
            if gap < tol {
                return Ok(ExtremalSolution {
                    w,
                    eps_final: eps,
                    rounds,
                    gaps,
                });
            }
        }
        previous = Some(w);
    }
    Err(SduError::MaxIterExceeded {
        iterations: rounds,
        last_gap: *gaps.last().unwrap_or(&f64::NAN),
    })
}

/// One round of the perturbed backward solve: consumption floored at
/// e^{νt}Λ·floor_scale, source ε·e^{νθt}λ^θ, RK4 with four substeps per
/// lattice step.
fn perturbed_backward(
    u: &AdaptedProcess,
    lambda: &AdaptedProcess,
    nu: f64,
    eps: f64,
    floor_scale: f64,
    boundary: &[f64],
    lattice: &Lattice,
) -> Vec<f64> {
    let n = lattice.n_steps();
    let dt = lattice.dt();
    let theta = lattice.prefs.theta;
    let rho = lattice.prefs.rho;
    let n_sub = 4usize;
    let mut w = vec![0.0f64; lattice.node_count()];
    w[level_offset(n)..].copy_from_slice(boundary);
    for i in (0..n).rev() {
        let off = level_offset(i);
        let t_i = lattice.time(i);
        for jj in 0..=i {
            let idx = off + jj;
            let next_level = &w[level_offset(i + 1)..level_offset(i + 2)];
            let xi = lattice.expect_next(next_level, jj);
            // Backward integration in τ = (t_{i+1} − s): dW/dτ = +rhs.
            let rhs = |tau: f64, wv: f64| {
                let s_off = dt - tau; // offset into the step
                let t_abs = t_i + s_off;
                let lam = lambda.at_offset(idx, s_off);
                let u_floor = (nu * t_abs).exp() * lam * floor_scale;
                let consumption = u.at_offset(idx, s_off).max(u_floor);
                let source = eps * (nu * theta * t_abs).exp() * lam.powf(theta);
                consumption * wv.max(0.0).powf(rho) + source
            };
            let h_sub = dt / n_sub as f64;
            let mut wv = xi;
            let mut tau = 0.0;
            for _ in 0..n_sub {
                let k1 = rhs(tau, wv);
                let k2 = rhs(tau + 0.5 * h_sub, wv + 0.5 * h_sub * k1);
                let k3 = rhs(tau + 0.5 * h_sub, wv + 0.5 * h_sub * k2);
                let k4 = rhs(tau + h_sub, wv + h_sub * k3);
                wv += h_sub / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
                tau += h_sub;
            }
            w[idx] = wv.max(0.0);
        }
    }
    w
}

/// Default ε-sequence for the extremal scheme: 2^{−1}, …, 2^{−20}.
pub fn default_eps_sequence() -> Vec<f64> {
    (1..=20).map(|n| 0.5f64.powi(n)).collect()
}

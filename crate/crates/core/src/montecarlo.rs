//! Path-simulation cross-check for closed-form candidate solutions.
//!
//! The lattice solvers verify the fixed-point machinery against conditional
//! expectations computed on the lattice itself. This module closes the loop
//! from the other side: it simulates the *continuous-time* wealth process
//! under a proportional strategy and estimates the defining recursion
//!
//! ```text
//!     V_0 = E[ ∫_0^{T} f_EZ(C_s, V_s) ds + V_T ],
//!     f_EZ(c, v) = c^{1−S}/(1−S) · ((1−R)v)^ρ,
//! ```
//!
//! for a candidate value function evaluated path-wise. For a genuine
//! solution the residual `V_0 − E[...]` is zero up to statistical error; a
//! corrupted candidate (e.g. the value coefficient scaled by 1.1) leaves a
//! deterministic gap that the estimator rejects at several standard errors.
//!
//! Two design rules keep the estimator honest:
//!
//! * **Exact exponential stepping.** Wealth under a proportional strategy is
//!   geometric, so the log increments are simulated exactly:
//!   X_{t+Δ} = X_t·exp((r + π(μ−r) − ξ − ½π²σ²)Δ + πσ√Δ·Z). There is no
//!   Euler bias, and X > 0 on every path by construction; the only
//!   deterministic error left is the trapezoid quadrature of the aggregator
//!   integral, which is O(Δ²) in expectation.
//! * **Split-stream generation keyed by (seed, path index).** Path i is
//!   drawn from its own counter stream, so a batch is reproducible path by
//!   path regardless of evaluation order, and two batches with the same
//!   spec are identical. Reductions run in fixed path order with
//!   compensated (Neumaier) summation, so reruns are bit-identical.
//!
//! Truncation: for a proportional strategy the expected tail contribution
//! beyond the horizon is |h|·x^{1−R}·e^{−H·T}. The estimator includes the
//! terminal value V_T, so the recursion holds exactly at any horizon; the
//! tail size still matters when candidates disagree only in their tails,
//! and [`truncation_tail`] exposes it so callers can pick T with
//! `truncation_tail < 0.1·std_error`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::closed_form::{ImproperFamilyMember, ProportionalSolution};
use crate::error::SduError;
use crate::params::{MarketParams, PreferenceParams, Strategy};

/// Batch geometry: how many paths, how fine a grid, how long a horizon, and
/// which seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchSpec {
    /// Number of independent paths.
    pub n_paths: usize,
    /// Number of time steps per path (a path carries n_steps + 1 nodes).
    pub n_steps: usize,
    /// Simulation horizon T > 0.
    pub horizon: f64,
    /// Master seed; path i is drawn from counter stream i of this seed.
    pub seed: u64,
    /// Initial wealth x₀ > 0.
    pub x0: f64,
}

/// A batch of geometric wealth paths under a fixed proportional strategy.
///
/// Paths are not stored: [`PathBatch::fill_path`] regenerates path i from
/// stream i on demand, which keeps a 10⁵-path batch at constant memory and
/// makes the batch trivially reproducible ("fixed seed twice → identical
/// batches" is a unit test).
#[derive(Debug, Clone)]
pub struct PathBatch {
    /// Geometry and seed of the batch.
    pub spec: BatchSpec,
    /// The proportional strategy driving consumption and investment.
    pub strategy: Strategy,
    /// Per-step log-drift (r + π(μ−r) − ξ − ½π²σ²)·Δ, precomputed.
    log_drift: f64,
    /// Per-step log-volatility πσ√Δ, precomputed.
    log_vol: f64,
}

impl PathBatch {
    /// Time step Δ = T / n_steps.
    pub fn dt(&self) -> f64 {
        self.spec.horizon / self.spec.n_steps as f64
    }

    /// Regenerate path i into `buf` (resized to n_steps + 1). Node j holds
    /// X at time j·Δ; node 0 is x₀ exactly.
    pub fn fill_path(&self, i: usize, buf: &mut Vec<f64>) {
        let n = self.spec.n_steps;
        buf.clear();
        buf.reserve(n + 1);
        let mut rng = ChaCha12Rng::seed_from_u64(self.spec.seed);
        rng.set_stream(i as u64);
        let mut log_x = self.spec.x0.ln();
        buf.push(self.spec.x0);
        for _ in 0..n {
            let z: f64 = rng.sample(StandardNormal);
            log_x += self.log_drift + self.log_vol * z;
            buf.push(log_x.exp());
        }
    }

    /// Path i as a fresh vector; see [`PathBatch::fill_path`].
    pub fn path(&self, i: usize) -> Vec<f64> {
        let mut buf = Vec::new();
        self.fill_path(i, &mut buf);
        buf
    }
}

/// Build a path batch for `strategy` with exact log-space stepping.
///
/// Validates the batch geometry; the strategy itself may be any
/// proportional pair (ξ ≥ 0 suffices for simulation — membership in D
/// matters to the closed forms, not to the wealth dynamics).
pub fn simulate(
    strategy: &Strategy,
    market: &MarketParams,
    spec: &BatchSpec,
) -> Result<PathBatch, SduError> {
    if spec.n_paths == 0 || spec.n_steps == 0 {
        return Err(SduError::Config {
            reason: format!(
                "path batch needs at least one path and one step (got {} paths, {} steps)",
                spec.n_paths, spec.n_steps
            ),
        });
    }
    if !(spec.horizon > 0.0) || !spec.horizon.is_finite() {
        return Err(SduError::Config {
            reason: format!(
                "batch horizon must be positive and finite (got {})",
                spec.horizon
            ),
        });
    }
    if !(spec.x0 > 0.0) || !spec.x0.is_finite() {
        return Err(SduError::Config {
            reason: format!(
                "initial wealth must be positive and finite (got {})",
                spec.x0
            ),
        });
    }
    let dt = spec.horizon / spec.n_steps as f64;
    let pi = strategy.pi;
    let drift = market.r + pi * (market.mu - market.r)
        - strategy.xi
        - 0.5 * pi * pi * market.sigma * market.sigma;
    Ok(PathBatch {
        spec: *spec,
        strategy: *strategy,
        log_drift: drift * dt,
        log_vol: pi * market.sigma * dt.sqrt(),
    })
}

/// The Epstein–Zin aggregator f_EZ(c, v) = c^{1−S}/(1−S)·((1−R)v)^ρ.
///
/// In the θ > 1 regime the normalized value (1−R)v is nonnegative for every
/// utility process; tiny negative inputs from roundoff are clamped to zero
/// so the fractional power never produces NaN.
pub fn aggregator(c: f64, v: f64, prefs: &PreferenceParams) -> f64 {
    let s = prefs.substitution;
    let w = ((1.0 - prefs.risk_aversion) * v).max(0.0);
    c.powf(1.0 - s) / (1.0 - s) * w.powf(prefs.rho)
}

/// A closed-form candidate solution, evaluable path-wise as V(t, x).
///
/// All members consume proportionally (C = ξx); they differ in the value
/// they claim for that stream.
#[derive(Debug, Clone)]
pub enum Candidate {
    /// The proportional value V(t, x) = h(π, ξ)·x^{1−R} — a genuine
    /// solution for any strategy in D.
    Proportional(ProportionalSolution),
    /// An improper family member V(t, x) = A(t)·(ξx)^{1−R}/(1−R), absorbed
    /// to zero at its finite absorption time. Also a genuine solution.
    Family(ImproperFamilyMember),
    /// A deliberately corrupted candidate: the inner value scaled by a
    /// constant factor. Consumption is untouched, so for factor ≠ 1 the
    /// recursion fails by a deterministic margin.
    Scaled {
        /// The candidate whose value is being scaled.
        inner: Box<Candidate>,
        /// Multiplicative corruption factor on the value.
        factor: f64,
    },
}

impl Candidate {
    /// The claimed value V(t, x).
    pub fn value(&self, t: f64, x: f64, prefs: &PreferenceParams) -> f64 {
        match self {
            Candidate::Proportional(sol) => sol.h_value * x.powf(1.0 - prefs.risk_aversion),
            Candidate::Family(member) => {
                let scaled = member.strategy.xi * x;
                member.a(t) * scaled.powf(1.0 - prefs.risk_aversion) / (1.0 - prefs.risk_aversion)
            }
            Candidate::Scaled { inner, factor } => factor * inner.value(t, x, prefs),
        }
    }

    /// The consumption rate C = ξx attached to the candidate's strategy.
    pub fn consumption_rate(&self, x: f64) -> f64 {
        self.strategy().xi * x
    }

    /// The strategy the candidate consumes under.
    pub fn strategy(&self) -> Strategy {
        match self {
            Candidate::Proportional(sol) => sol.strategy,
            Candidate::Family(member) => member.strategy,
            Candidate::Scaled { inner, .. } => inner.strategy(),
        }
    }
}

/// Expected tail contribution |h|·x₀^{1−R}·e^{−H·T} of a proportional
/// solution beyond horizon T — the yardstick for choosing T against the
/// statistical error.
pub fn truncation_tail(
    solution: &ProportionalSolution,
    x0: f64,
    horizon: f64,
    prefs: &PreferenceParams,
) -> f64 {
    solution.h_value.abs() * x0.powf(1.0 - prefs.risk_aversion) * (-solution.growth * horizon).exp()
}

/// Neumaier-compensated running sum: deterministic, order-fixed, and immune
/// to the magnitude spread between early-time and late-time aggregator
/// values.
#[derive(Debug, Clone, Copy, Default)]
struct Compensated {
    sum: f64,
    correction: f64,
}

impl Compensated {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.correction += (self.sum - t) + v;
        } else {
            self.correction += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn total(&self) -> f64 {
        self.sum + self.correction
    }
}

/// Monte Carlo estimate of the recursion residual
/// V_0 − E[∫_0^T f_EZ(C_s, V_s) ds + V_T] for a candidate.
///
/// Returns (estimate, standard error). The inner integral is a trapezoid
/// over the batch grid; paths are consumed in index order with a Welford
/// accumulator, so the result is a deterministic function of the batch
/// spec. For a true solution the estimate is statistically indistinguishable
/// from zero; the acceptance suite demands |estimate| < 3·SE for genuine
/// candidates and > 5·SE rejection for a 1.1-scaled corruption.
pub fn residual_estimate(
    candidate: &Candidate,
    batch: &PathBatch,
    prefs: &PreferenceParams,
) -> (f64, f64) {
    let n_paths = batch.spec.n_paths;
    let n_steps = batch.spec.n_steps;
    let dt = batch.dt();
    let v0 = candidate.value(0.0, batch.spec.x0, prefs);
    let mut mean = 0.0f64;
    let mut m2 = 0.0f64;
    let mut buf = Vec::new();
    for i in 0..n_paths {
        batch.fill_path(i, &mut buf);
        let mut acc = Compensated::default();
        for (j, &x) in buf.iter().enumerate() {
            let t = dt * j as f64;
            let f = aggregator(
                candidate.consumption_rate(x),
                candidate.value(t, x, prefs),
                prefs,
            );
            let weight = if j == 0 || j == n_steps { 0.5 } else { 1.0 };
            acc.add(weight * f);
        }
        let terminal = candidate.value(batch.spec.horizon, buf[n_steps], prefs);
        let residual = v0 - (acc.total() * dt + terminal);
        // Welford in fixed path order keeps the reduction deterministic.
        let k = (i + 1) as f64;
        let delta = residual - mean;
        mean += delta / k;
        m2 += delta * (residual - mean);
    }
    let std_error = if n_paths > 1 {
        (m2 / (n_paths as f64 - 1.0) / n_paths as f64).sqrt()
    } else {
        f64::INFINITY
    };
    (mean, std_error)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closed_form::{family_ceiling, family_member, optimal_strategy, proportional_h};
    use crate::params::{derive_market, derive_preferences};

    fn baseline() -> (PreferenceParams, MarketParams) {
        let prefs = derive_preferences(2.0, 1.5).unwrap();
        let market = derive_market(0.02, 0.05, 0.2, &prefs).unwrap();
        (prefs, market)
    }

    #[test]
    fn fixed_seed_reproduces_batches_and_streams_are_independent() {
        let (prefs, market) = baseline();
        let opt = optimal_strategy(&market, &prefs);
        let spec = BatchSpec {
            n_paths: 8,
            n_steps: 16,
            horizon: 2.0,
            seed: 99,
            x0: 1.0,
        };
        let a = simulate(&opt, &market, &spec).unwrap();
        let b = simulate(&opt, &market, &spec).unwrap();
        for i in 0..spec.n_paths {
            assert_eq!(
                a.path(i),
                b.path(i),
                "same seed must reproduce path {i} exactly"
            );
        }
        assert_ne!(
            a.path(0),
            a.path(1),
            "distinct streams must decorrelate paths"
        );
        assert!(
            a.path(5).iter().all(|&x| x > 0.0),
            "exact exponential scheme keeps X > 0"
        );
        let _ = prefs;
    }

    #[test]
    fn zero_exposure_paths_follow_the_deterministic_ode() {
        let (prefs, market) = baseline();
        // π = 0 removes the Brownian term entirely: X_t = x₀·e^{(r−ξ)t}
        // is the σ-free ordinary flow, which the exact scheme must hit at
        // machine precision node by node.
        let strat = Strategy::new(0.0, 0.03);
        let spec = BatchSpec {
            n_paths: 3,
            n_steps: 40,
            horizon: 5.0,
            seed: 7,
            x0: 2.0,
        };
        let batch = simulate(&strat, &market, &spec).unwrap();
        let dt = batch.dt();
        for i in 0..spec.n_paths {
            let path = batch.path(i);
            for (j, &x) in path.iter().enumerate() {
                let expected = spec.x0 * ((market.r - strat.xi) * dt * j as f64).exp();
                assert!(
                    (x - expected).abs() <= 1e-12 * expected,
                    "node {j}: {x} vs deterministic {expected}"
                );
            }
        }
        let _ = prefs;
    }

    #[test]
    fn terminal_moment_matches_the_closed_form_within_three_sigma() {
        let (prefs, market) = baseline();
        let opt = optimal_strategy(&market, &prefs);
        let sol = proportional_h(&opt, &market, &prefs).unwrap();
        let spec = BatchSpec {
            n_paths: 20_000,
            n_steps: 50,
            horizon: 30.0,
            seed: 2024,
            x0: 1.0,
        };
        let batch = simulate(&opt, &market, &spec).unwrap();
        let exponent = 1.0 - prefs.risk_aversion;
        let mut mean = 0.0f64;
        let mut m2 = 0.0f64;
        let mut buf = Vec::new();
        for i in 0..spec.n_paths {
            batch.fill_path(i, &mut buf);
            let y = buf[spec.n_steps].powf(exponent);
            let k = (i + 1) as f64;
            let delta = y - mean;
            mean += delta / k;
            m2 += delta * (y - mean);
        }
        let se = (m2 / (spec.n_paths as f64 - 1.0) / spec.n_paths as f64).sqrt();
        let target = (-sol.growth * spec.horizon).exp();
        assert!(
            (mean - target).abs() < 3.0 * se,
            "E[X_T^(1-R)] = {mean} vs closed form {target} (3σ = {})",
            3.0 * se
        );
        // The error really is statistical, not structural: the same check
        // at one tenth the σ-band would fail, so the band is doing work.
        assert!(se > 0.0 && se < 0.05 * target);
    }

    #[test]
    fn standard_error_scales_as_inverse_square_root() {
        let (prefs, market) = baseline();
        let opt = optimal_strategy(&market, &prefs);
        let sol = proportional_h(&opt, &market, &prefs).unwrap();
        let candidate = Candidate::Proportional(sol);
        let mut ses = Vec::new();
        for &n in &[2_000usize, 8_000] {
            let spec = BatchSpec {
                n_paths: n,
                n_steps: 60,
                horizon: 120.0,
                seed: 5,
                x0: 1.0,
            };
            let batch = simulate(&opt, &market, &spec).unwrap();
            let (_, se) = residual_estimate(&candidate, &batch, &prefs);
            ses.push(se);
        }
        let ratio = ses[1] / ses[0];
        // Quadrupling the paths should halve the standard error, up to the
        // sampling noise of the variance estimate itself.
        assert!(
            ratio > 0.35 && ratio < 0.65,
            "SE ratio across a 4x path ladder was {ratio} (expected ≈ 0.5)"
        );
    }

    #[test]
    fn residual_oracle_accepts_solutions_and_rejects_the_corruption() {
        let (prefs, market) = baseline();
        let opt = optimal_strategy(&market, &prefs);
        let sol = proportional_h(&opt, &market, &prefs).unwrap();
        let ceiling = family_ceiling(&opt, &market, &prefs).unwrap();
        let spec = BatchSpec {
            n_paths: 20_000,
            n_steps: 200,
            horizon: 500.0,
            seed: 31,
            x0: 1.0,
        };
        let batch = simulate(&opt, &market, &spec).unwrap();

        // The proportional value is a genuine solution: residual ≈ 0.
        let candidate = Candidate::Proportional(sol);
        let (est, se) = residual_estimate(&candidate, &batch, &prefs);
        assert!(
            est.abs() < 3.0 * se,
            "true candidate rejected: estimate {est}, 3σ = {}",
            3.0 * se
        );
        // The horizon was chosen so the truncated tail is well under the
        // statistical resolution.
        assert!(truncation_tail(&sol, spec.x0, spec.horizon, &prefs) < 0.1 * se);

        // An improper family member absorbed inside the horizon is also a
        // genuine solution (V ≡ 0 after its absorption time).
        let member = family_member(0.25 * ceiling, &opt, &market, &prefs).unwrap();
        let t_absorb = member
            .absorption
            .finite()
            .expect("interior member is absorbed");
        assert!(t_absorb < spec.horizon);
        let (est_m, se_m) = residual_estimate(&Candidate::Family(member), &batch, &prefs);
        assert!(
            est_m.abs() < 3.0 * se_m,
            "family member rejected: estimate {est_m}, 3σ = {}",
            3.0 * se_m
        );

        // Scaling the value by 1.1 leaves consumption alone, so the
        // recursion misses by (1.1 − 1.1^ρ)·∫ — a deterministic gap the
        // estimator must reject at better than 5σ.
        let corrupt = Candidate::Scaled {
            inner: Box::new(Candidate::Proportional(sol)),
            factor: 1.1,
        };
        let (est_c, se_c) = residual_estimate(&corrupt, &batch, &prefs);
        assert!(
            est_c.abs() > 5.0 * se_c,
            "corrupt candidate accepted: estimate {est_c}, 5σ = {}",
            5.0 * se_c
        );
    }

    #[test]
    fn batch_spec_validation() {
        let (prefs, market) = baseline();
        let opt = optimal_strategy(&market, &prefs);
        let bad = BatchSpec {
            n_paths: 0,
            n_steps: 10,
            horizon: 1.0,
            seed: 0,
            x0: 1.0,
        };
        assert!(matches!(
            simulate(&opt, &market, &bad),
            Err(SduError::Config { .. })
        ));
        let bad = BatchSpec {
            n_paths: 10,
            n_steps: 0,
            horizon: 1.0,
            seed: 0,
            x0: 1.0,
        };
        assert!(matches!(
            simulate(&opt, &market, &bad),
            Err(SduError::Config { .. })
        ));
        let bad = BatchSpec {
            n_paths: 10,
            n_steps: 10,
            horizon: -1.0,
            seed: 0,
            x0: 1.0,
        };
        assert!(matches!(
            simulate(&opt, &market, &bad),
            Err(SduError::Config { .. })
        ));
        let bad = BatchSpec {
            n_paths: 10,
            n_steps: 10,
            horizon: 1.0,
            seed: 0,
            x0: 0.0,
        };
        assert!(matches!(
            simulate(&opt, &market, &bad),
            Err(SduError::Config { .. })
        ));
    }
}

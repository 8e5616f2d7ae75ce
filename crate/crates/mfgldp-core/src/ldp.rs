//! Large-deviation toolkit for the empirical mean of the auxiliary system.
//!
//! The empirical mean of `N` auxiliary particles follows a scalar linear SDE
//! with noise intensity `sigma / sqrt(N)`, so its terminal law is Gaussian
//! with mean `m0(T)` and variance `sigma^2 * S / N`, where
//! `S = integral of Phi(T, r)^2 dr` and `Phi` is the propagator of the mean
//! dynamics. Rate minimization over drift controls therefore reduces to a
//! one-dimensional problem in the terminal mean. This module solves it by
//! two independent routes (projected gradient descent over the discretized
//! control, and a Pontryagin shooting solve of the stationarity condition),
//! estimates Laplace functionals from exponential Monte Carlo averages,
//! fits tail-decay slopes, and pulls control-law targets back to state
//! targets through the feedback map.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::mfg_solver::{hermite_value, mean_drift_coeffs, AffineField};
use crate::model::{lambda_coeffs, mfg_maps, FbsdeMaps, GameSpec};
use crate::nplayer_solver::{solve_nplayer_nash, NPlayerField};
use crate::particle::{
    simulate_auxiliary, simulate_equilibrium, sup_w2_between, BrownianBundle,
};
use crate::rng::derive_seed;
use crate::stats::{bootstrap_ci, integrate_uniform, linear_fit, percentile};

/// Bounded terminal functionals of the empirical mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum TargetFunctional {
    /// `min(clip, (m - kappa)^2)`.
    ClippedQuadratic { kappa: f64, clip: f64 },
    /// Logistic sigmoid `1 / (1 + exp(-(m - kappa) / width))`.
    SmoothedExceedance { kappa: f64, width: f64 },
}

impl TargetFunctional {
    /// Bounded evaluation at a terminal mean.
    pub fn eval(&self, m: f64) -> f64 {
        match *self {
            TargetFunctional::ClippedQuadratic { kappa, clip } => {
                let d = m - kappa;
                (d * d).min(clip)
            }
            TargetFunctional::SmoothedExceedance { kappa, width } => {
                1.0 / (1.0 + (-(m - kappa) / width).exp())
            }
        }
    }

    /// Derivative in the terminal mean (zero outside the clip region).
    pub fn deriv(&self, m: f64) -> f64 {
        match *self {
            TargetFunctional::ClippedQuadratic { kappa, clip } => {
                let d = m - kappa;
                if d * d < clip {
                    2.0 * d
                } else {
                    0.0
                }
            }
            TargetFunctional::SmoothedExceedance { kappa, width } => {
                let v = 1.0 / (1.0 + (-(m - kappa) / width).exp());
                v * (1.0 - v) / width
            }
        }
    }

    /// Upper bound on `|deriv|`, used to bracket the shooting solve.
    fn deriv_bound(&self) -> f64 {
        match *self {
            TargetFunctional::ClippedQuadratic { clip, .. } => 2.0 * clip.max(0.0).sqrt(),
            TargetFunctional::SmoothedExceedance { width, .. } => 0.25 / width,
        }
    }

    /// Identifying parameter reported in result tables.
    pub fn label(&self) -> f64 {
        match *self {
            TargetFunctional::ClippedQuadratic { kappa, .. } => kappa,
            TargetFunctional::SmoothedExceedance { kappa, .. } => kappa,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TargetFunctional::ClippedQuadratic { .. } => "clipped_quadratic",
            TargetFunctional::SmoothedExceedance { .. } => "smoothed_exceedance",
        }
    }

    /// Default functionals exercised by the experiments.
    pub fn catalog() -> Vec<TargetFunctional> {
        vec![
            TargetFunctional::ClippedQuadratic { kappa: 0.25, clip: 1.0 },
            TargetFunctional::SmoothedExceedance { kappa: 0.0, width: 1.0 },
        ]
    }
}

/// Precomputed mean dynamics of an affine system: uncontrolled mean path,
/// drift slope, terminal propagator weights, and the noise-shape integral.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct MeanDynamics {
    grid: TimeGrid,
    sigma: f64,
    /// Uncontrolled mean path per node.
    mean0: Vec<f64>,
    dmean0: Vec<f64>,
    /// Drift slope of the mean dynamics per node.
    slope: Vec<f64>,
    /// `weight[k] = Phi(T, t_k)`, the sensitivity of the terminal mean to a
    /// drift impulse at node `k`.
    weight: Vec<f64>,
    dweight: Vec<f64>,
    /// Integral of `weight^2` over the horizon.
    s_total: f64,
}

impl MeanDynamics {
    /// Integrates the mean path forward and the propagator backward on the
    /// given grid, reading the field coefficients through `maps`. The grid
    /// may be shorter than the field's own grid, which restricts the
    /// dynamics to an initial subinterval.
    pub(crate) fn from_maps(
        maps: &FbsdeMaps,
        field: &AffineField,
        grid: TimeGrid,
        sigma: f64,
        x0: f64,
    ) -> Result<MeanDynamics> {
        let n = grid.num_nodes();
        let h = grid.dt();
        let coeffs_at = |t: f64| -> Result<(f64, f64)> {
            let (p, r, s) = field.coeffs_at(t)?;
            Ok(mean_drift_coeffs(maps, p, r, s))
        };

        let mut mean0 = vec![0.0; n];
        mean0[0] = x0;
        for k in 0..grid.steps() {
            let t = grid.node(k);
            let m = mean0[k];
            let f = |tt: f64, mm: f64| -> Result<f64> {
                let (sl, of) = coeffs_at(tt)?;
                Ok(sl * mm + of)
            };
            let k1 = f(t, m)?;
            let k2 = f(t + 0.5 * h, m + 0.5 * h * k1)?;
            let k3 = f(t + 0.5 * h, m + 0.5 * h * k2)?;
            let k4 = f(t + h, m + h * k3)?;
            mean0[k + 1] = m + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }

        let mut weight = vec![0.0; n];
        weight[n - 1] = 1.0;
        for k in (0..grid.steps()).rev() {
            let t1 = grid.node(k + 1);
            let w = weight[k + 1];
            let f = |tt: f64, ww: f64| -> Result<f64> {
                let (sl, _) = coeffs_at(tt)?;
                Ok(-sl * ww)
            };
            let k1 = f(t1, w)?;
            let k2 = f(t1 - 0.5 * h, w - 0.5 * h * k1)?;
            let k3 = f(t1 - 0.5 * h, w - 0.5 * h * k2)?;
            let k4 = f(t1 - h, w - h * k3)?;
            weight[k] = w - h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }

        let mut slope = vec![0.0; n];
        let mut dmean0 = vec![0.0; n];
        let mut dweight = vec![0.0; n];
        for k in 0..n {
            let (sl, of) = coeffs_at(grid.node(k))?;
            slope[k] = sl;
            dmean0[k] = sl * mean0[k] + of;
            dweight[k] = -sl * weight[k];
        }

        let w2: Vec<f64> = weight.iter().map(|w| w * w).collect();
        let s_total = integrate_uniform(&w2, h);
        Ok(MeanDynamics { grid, sigma, mean0, dmean0, slope, weight, dweight, s_total })
    }

    pub(crate) fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub(crate) fn mean0(&self) -> &[f64] {
        &self.mean0
    }

    pub(crate) fn weight(&self) -> &[f64] {
        &self.weight
    }

    #[cfg(test)]
    pub(crate) fn slope_nodes(&self) -> &[f64] {
        &self.slope
    }

    pub(crate) fn s_total(&self) -> f64 {
        self.s_total
    }

    pub(crate) fn terminal_mean(&self) -> f64 {
        *self.mean0.last().expect("nonempty grid")
    }

    pub(crate) fn gaussian_variance(&self, n: usize) -> f64 {
        self.sigma * self.sigma * self.s_total / n as f64
    }

    pub(crate) fn rate_of_terminal_mean(&self, z: f64) -> f64 {
        let d = z - self.terminal_mean();
        d * d / (2.0 * self.sigma * self.sigma * self.s_total)
    }

    pub(crate) fn mean_at(&self, t: f64) -> Result<f64> {
        let (k, tau) = self.grid.locate(t)?;
        if tau == 0.0 {
            return Ok(self.mean0[k]);
        }
        Ok(hermite_value(
            self.mean0[k],
            self.dmean0[k],
            self.mean0[k + 1],
            self.dmean0[k + 1],
            self.grid.dt(),
            tau,
        ))
    }

    #[cfg(test)]
    fn weight_at(&self, t: f64) -> Result<f64> {
        let (k, tau) = self.grid.locate(t)?;
        if tau == 0.0 {
            return Ok(self.weight[k]);
        }
        Ok(hermite_value(
            self.weight[k],
            self.dweight[k],
            self.weight[k + 1],
            self.dweight[k + 1],
            self.grid.dt(),
            tau,
        ))
    }

    /// Noise-shape integral of the mean at the intermediate time `t`:
    /// trapezoid integral of `(Phi(t, r))^2` over `[0, t]`, computed from
    /// the stored terminal weights by rescaling.
    #[cfg(test)]
    pub(crate) fn s_partial(&self, t: f64) -> Result<f64> {
        let (k, tau) = self.grid.locate(t)?;
        let h = self.grid.dt();
        let w_t = self.weight_at(t)?;
        let mut raw = 0.0;
        for j in 0..k {
            raw += 0.5
                * h
                * (self.weight[j] * self.weight[j] + self.weight[j + 1] * self.weight[j + 1]);
        }
        if tau > 0.0 {
            let w_k = self.weight[k];
            raw += 0.5 * (tau * h) * (w_k * w_k + w_t * w_t);
        }
        Ok(raw / (w_t * w_t))
    }
}

/// A rate-minimization instance: the game, its decoupling field, and the
/// bounded terminal functional to optimize against.
#[derive(Debug, Clone)]
pub struct RateProblem {
    spec: GameSpec,
    field: AffineField,
    target: TargetFunctional,
    pub(crate) dynamics: MeanDynamics,
}

impl RateProblem {
    pub fn new(
        spec: &GameSpec,
        field: &AffineField,
        target: TargetFunctional,
    ) -> Result<RateProblem> {
        spec.validate()?;
        let maps = mfg_maps(spec)?;
        let dynamics =
            MeanDynamics::from_maps(&maps, field, *field.grid(), spec.sigma(), spec.x0())?;
        Ok(RateProblem { spec: spec.clone(), field: field.clone(), target, dynamics })
    }

    /// Same dynamics, different target functional.
    pub fn with_target(&self, target: TargetFunctional) -> RateProblem {
        let mut out = self.clone();
        out.target = target;
        out
    }

    pub fn spec(&self) -> &GameSpec {
        &self.spec
    }

    pub fn field(&self) -> &AffineField {
        &self.field
    }

    pub fn target(&self) -> &TargetFunctional {
        &self.target
    }

    pub fn grid(&self) -> &TimeGrid {
        self.dynamics.grid()
    }

    /// Uncontrolled mean path per node.
    pub fn mean0(&self) -> &[f64] {
        self.dynamics.mean0()
    }

    /// Terminal-impulse propagator weights per node.
    pub fn weight(&self) -> &[f64] {
        self.dynamics.weight()
    }

    /// Noise-shape integral of the terminal mean.
    pub fn s_total(&self) -> f64 {
        self.dynamics.s_total()
    }

    /// Uncontrolled terminal mean.
    pub fn terminal_mean(&self) -> f64 {
        self.dynamics.terminal_mean()
    }

    /// Variance of the empirical terminal mean for `n` particles.
    pub fn gaussian_variance(&self, n: usize) -> f64 {
        self.dynamics.gaussian_variance(n)
    }

    /// Good-rate function of the terminal mean at `z`.
    pub fn rate_of_terminal_mean(&self, z: f64) -> f64 {
        self.dynamics.rate_of_terminal_mean(z)
    }
}

/// Rate-minimization result from both routes: the descent value with its
/// discretized optimal forcing, and the shooting value for verification.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateOracle {
    /// Value from the gradient-descent route.
    pub value: f64,
    /// Optimal forcing per node (descent route).
    pub control: Vec<f64>,
    /// Terminal mean achieved by the descent minimizer.
    pub minimizer_mean: f64,
    /// Value from the Pontryagin shooting route.
    pub shooting_value: f64,
}

impl RateOracle {
    /// Relative disagreement between the two routes.
    pub fn relative_gap(&self) -> f64 {
        let scale = self.value.abs().max(self.shooting_value.abs()).max(1e-12);
        (self.value - self.shooting_value).abs() / scale
    }
}

const DESCENT_MAX_ITERS: usize = 50_000;
const DESCENT_TOL: f64 = 1e-8;

/// Gradient-descent route: minimizes
/// `F(m_T(u)) + (1/2) * trapezoid(u^2)` over the per-node forcing `u`,
/// where the terminal mean responds linearly through the propagator
/// weights.
fn descent_on_dynamics(
    dynamics: &MeanDynamics,
    target: &TargetFunctional,
    max_iters: usize,
    tol: f64,
) -> Result<(f64, Vec<f64>, f64)> {
    let n = dynamics.grid.num_nodes();
    let h = dynamics.grid.dt();
    let theta: Vec<f64> = (0..n)
        .map(|k| if k == 0 || k == n - 1 { 0.5 * h } else { h })
        .collect();
    let response: f64 = dynamics
        .weight
        .iter()
        .zip(&theta)
        .map(|(w, th)| w * w * th)
        .sum();
    let sigma = dynamics.sigma;
    let mut u = vec![0.0; n];
    let step = 1.0 / (1.0 + 2.0 * sigma * sigma * response).max(1.0);
    let mut iters = 0;
    loop {
        let m_t = dynamics.terminal_mean()
            + sigma
                * dynamics
                    .weight
                    .iter()
                    .zip(&theta)
                    .zip(&u)
                    .map(|((w, th), uk)| w * th * uk)
                    .sum::<f64>();
        let fp = target.deriv(m_t);
        let mut grad_norm = 0.0_f64;
        for k in 0..n {
            let g = fp * sigma * dynamics.weight[k] + u[k];
            grad_norm = grad_norm.max(g.abs());
        }
        if grad_norm <= tol {
            let cost: f64 = u.iter().zip(&theta).map(|(uk, th)| 0.5 * uk * uk * th).sum();
            return Ok((target.eval(m_t) + cost, u, m_t));
        }
        if iters >= max_iters {
            return Err(Error::NonConvergence { grad_norm, iters });
        }
        for k in 0..n {
            let g = fp * sigma * dynamics.weight[k] + u[k];
            u[k] -= step * g;
        }
        iters += 1;
    }
}

/// Shooting route: the optimal forcing is `u = -sigma * lambda * weight`
/// for a scalar terminal adjoint `lambda`, so stationarity reduces to the
/// scalar equation `F'(m0_T - sigma^2 S lambda) = lambda`. All bracketed
/// roots are bisected and the smallest objective value wins.
fn shooting_on_dynamics(dynamics: &MeanDynamics, target: &TargetFunctional) -> (f64, f64) {
    let s = dynamics.s_total;
    let sigma2 = dynamics.sigma * dynamics.sigma;
    let m0 = dynamics.terminal_mean();
    let m_of = |lambda: f64| m0 - sigma2 * s * lambda;
    let residual = |lambda: f64| target.deriv(m_of(lambda)) - lambda;
    let value_of = |lambda: f64| target.eval(m_of(lambda)) + 0.5 * sigma2 * lambda * lambda * s;

    let bound = target.deriv_bound() + 1.0;
    let points = 2000;
    let mut best: Option<(f64, f64)> = None;
    let record = |root: f64, best: &mut Option<(f64, f64)>| {
        let v = value_of(root);
        if best.map_or(true, |(bv, _)| v < bv) {
            *best = Some((v, m_of(root)));
        }
    };
    let mut prev_l = -bound;
    let mut prev_g = residual(prev_l);
    if prev_g == 0.0 {
        record(prev_l, &mut best);
    }
    for i in 1..=points {
        let l = -bound + 2.0 * bound * i as f64 / points as f64;
        let g = residual(l);
        if g == 0.0 {
            record(l, &mut best);
        } else if prev_g != 0.0 && prev_g * g < 0.0 {
            let (mut a, mut b) = (prev_l, l);
            let mut ga = prev_g;
            for _ in 0..200 {
                let mid = 0.5 * (a + b);
                let gm = residual(mid);
                if gm == 0.0 {
                    a = mid;
                    b = mid;
                    break;
                }
                if ga * gm < 0.0 {
                    b = mid;
                } else {
                    a = mid;
                    ga = gm;
                }
            }
            record(0.5 * (a + b), &mut best);
        }
        prev_l = l;
        prev_g = g;
    }
    best.unwrap_or((value_of(0.0), m0))
}

pub(crate) fn rate_oracle_on_dynamics(
    dynamics: &MeanDynamics,
    target: &TargetFunctional,
) -> Result<RateOracle> {
    let (value, control, minimizer_mean) =
        descent_on_dynamics(dynamics, target, DESCENT_MAX_ITERS, DESCENT_TOL)?;
    let (shooting_value, _) = shooting_on_dynamics(dynamics, target);
    Ok(RateOracle { value, control, minimizer_mean, shooting_value })
}

/// Minimizes `F(terminal mean) + (1/2) * integral(u^2)` over deterministic
/// forcing paths by gradient descent, verified against the Pontryagin
/// shooting solution.
pub fn evaluate_rate_oracle(prob: &RateProblem) -> Result<RateOracle> {
    rate_oracle_on_dynamics(&prob.dynamics, &prob.target)
}

/// Exponential-average estimate of a Laplace functional with a bootstrap
/// confidence interval.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LaplaceEstimate {
    pub estimate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub reps: usize,
}

const MIN_LAPLACE_REPS: usize = 100;
const BOOTSTRAP_RESAMPLES: usize = 1000;

fn log_exp_mean(n: f64, values: &[f64]) -> f64 {
    let min = values.iter().fold(f64::INFINITY, |a, v| a.min(*v));
    let mean_shifted =
        values.iter().map(|f| (-n * (f - min)).exp()).sum::<f64>() / values.len() as f64;
    min - mean_shifted.ln() / n
}

/// Computes `-(1/N) * log mean(exp(-N * F(terminal mean)))` from
/// per-replication terminal means, shifted so the exponentials cannot
/// underflow, with a percentile bootstrap interval.
pub fn laplace_from_terminal_means(
    target: &TargetFunctional,
    n: usize,
    terminal_means: &[f64],
    bootstrap_resamples: usize,
    seed: u64,
) -> Result<LaplaceEstimate> {
    if terminal_means.len() < MIN_LAPLACE_REPS {
        return Err(Error::InvalidSpec {
            reason: format!(
                "laplace estimation needs at least {MIN_LAPLACE_REPS} replications, got {}",
                terminal_means.len()
            ),
        });
    }
    if terminal_means.iter().any(|m| !m.is_finite()) {
        return Err(Error::DegenerateEstimate {
            reason: "a replication produced a non-finite terminal mean".into(),
        });
    }
    let nf = n as f64;
    let values: Vec<f64> = terminal_means.iter().map(|m| target.eval(*m)).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateEstimate {
            reason: "target functional produced a non-finite value".into(),
        });
    }
    let estimate = log_exp_mean(nf, &values);
    if !estimate.is_finite() {
        return Err(Error::DegenerateEstimate {
            reason: "exponential average collapsed to zero or overflowed".into(),
        });
    }
    let (ci_lo, ci_hi) = bootstrap_ci(
        &values,
        |sample| log_exp_mean(nf, sample),
        bootstrap_resamples,
        seed,
        0.95,
    );
    Ok(LaplaceEstimate { estimate, ci_lo, ci_hi, reps: terminal_means.len() })
}

/// Terminal empirical means of independent auxiliary simulations.
pub fn auxiliary_terminal_means(
    spec: &GameSpec,
    field: &AffineField,
    n: usize,
    reps: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let grid = *field.grid();
    let last = grid.num_nodes() - 1;
    (0..reps)
        .into_par_iter()
        .map(|rep| {
            let bundle = BrownianBundle::new(derive_seed(seed, 0xA0, rep as u64), n, grid);
            let ens = simulate_auxiliary(spec, field, &bundle)?;
            Ok(ens.mean_at(last))
        })
        .collect()
}

/// Terminal empirical means of independent equilibrium simulations.
pub fn equilibrium_terminal_means(
    spec: &GameSpec,
    nfield: &NPlayerField,
    reps: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let grid = *nfield.grid();
    let n = nfield.n_players();
    let last = grid.num_nodes() - 1;
    (0..reps)
        .into_par_iter()
        .map(|rep| {
            let bundle = BrownianBundle::new(derive_seed(seed, 0xE0, rep as u64), n, grid);
            let ens = simulate_equilibrium(spec, nfield, &bundle)?;
            Ok(ens.mean_at(last))
        })
        .collect()
}

/// Runs the Laplace experiment for the problem's target: for each
/// population size, Monte Carlo exponential averages of the auxiliary and
/// the equilibrium systems are compared against the rate oracle.
pub fn estimate_laplace(
    prob: &RateProblem,
    population_sizes: &[usize],
    reps: usize,
    seed: u64,
) -> Result<Vec<LdpRow>> {
    if reps < MIN_LAPLACE_REPS {
        return Err(Error::InvalidSpec {
            reason: format!("laplace experiment needs at least {MIN_LAPLACE_REPS} replications"),
        });
    }
    let oracle = evaluate_rate_oracle(prob)?;
    let k_steps = prob.grid().steps();
    let mut rows = Vec::new();
    for (idx, &n) in population_sizes.iter().enumerate() {
        let tag = idx as u64;
        let aux_means = auxiliary_terminal_means(
            &prob.spec,
            &prob.field,
            n,
            reps,
            derive_seed(seed, 1, tag),
        )?;
        let aux = laplace_from_terminal_means(
            &prob.target,
            n,
            &aux_means,
            BOOTSTRAP_RESAMPLES,
            derive_seed(seed, 2, tag),
        )?;
        let nfield = solve_nplayer_nash(&prob.spec, n, k_steps)?;
        let eq_means =
            equilibrium_terminal_means(&prob.spec, &nfield, reps, derive_seed(seed, 3, tag))?;
        let eq = laplace_from_terminal_means(
            &prob.target,
            n,
            &eq_means,
            BOOTSTRAP_RESAMPLES,
            derive_seed(seed, 4, tag),
        )?;
        rows.push(LdpRow {
            kind: "laplace_aux".into(),
            n,
            delta_or_f: prob.target.label(),
            estimate: aux.estimate,
            ci_lo: aux.ci_lo,
            ci_hi: aux.ci_hi,
            oracle: oracle.value,
            slope_n: f64::NAN,
            slope_n2: f64::NAN,
            r2: f64::NAN,
        });
        rows.push(LdpRow {
            kind: "laplace_eq".into(),
            n,
            delta_or_f: prob.target.label(),
            estimate: eq.estimate,
            ci_lo: eq.ci_lo,
            ci_hi: eq.ci_hi,
            oracle: oracle.value,
            slope_n: f64::NAN,
            slope_n2: f64::NAN,
            r2: f64::NAN,
        });
    }
    Ok(rows)
}

/// Per-replication worst-node distance between coupled equilibrium and
/// auxiliary ensembles driven by the same Brownian bundle.
pub fn coupled_sup_w2_samples(
    spec: &GameSpec,
    field: &AffineField,
    nfield: &NPlayerField,
    reps: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    field.grid().ensure_matches(nfield.grid(), "coupled simulation grids")?;
    let grid = *field.grid();
    let n = nfield.n_players();
    (0..reps)
        .into_par_iter()
        .map(|rep| {
            let bundle = BrownianBundle::new(derive_seed(seed, 0xC0, rep as u64), n, grid);
            let eq = simulate_equilibrium(spec, nfield, &bundle)?;
            let aux = simulate_auxiliary(spec, field, &bundle)?;
            sup_w2_between(&eq, &aux)
        })
        .collect()
}

/// Exceedance counts for one threshold at one population size.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TailCell {
    pub n: usize,
    pub exceed: usize,
    pub total: usize,
}

impl TailCell {
    pub fn phat(&self) -> f64 {
        self.exceed as f64 / self.total as f64
    }
}

/// Decay fit of exceedance probabilities for one threshold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TailFit {
    pub delta: f64,
    pub cells: Vec<TailCell>,
    /// Slope of `log phat` against `N` (nonzero cells only).
    pub slope_n: f64,
    /// Slope of `log phat` against `N^2` (nonzero cells only).
    pub slope_n2: f64,
    /// Coefficient of determination of the `N` fit.
    pub r2: f64,
}

/// Tail-decay fits across thresholds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TailDecayReport {
    pub fits: Vec<TailFit>,
}

impl TailDecayReport {
    /// Flattens the fits into result-table rows. Exceedance probabilities
    /// carry a normal-approximation binomial interval; the oracle column
    /// does not apply to tail rows.
    pub fn to_rows(&self, kind: &str) -> Vec<LdpRow> {
        let mut rows = Vec::new();
        for fit in &self.fits {
            for cell in &fit.cells {
                let p = cell.phat();
                let half = 1.96 * (p * (1.0 - p) / cell.total as f64).sqrt();
                rows.push(LdpRow {
                    kind: kind.to_string(),
                    n: cell.n,
                    delta_or_f: fit.delta,
                    estimate: p,
                    ci_lo: (p - half).max(0.0),
                    ci_hi: (p + half).min(1.0),
                    oracle: f64::NAN,
                    slope_n: fit.slope_n,
                    slope_n2: fit.slope_n2,
                    r2: fit.r2,
                });
            }
        }
        rows
    }
}

/// Counts exceedances of each threshold at each population size and fits
/// the decay of `log phat` in `N` and in `N^2`. Cells with zero events are
/// reported but excluded from the fits; if every cell is zero the data
/// cannot support any fit and an error is returned.
pub fn fit_tail_from_samples(
    samples_per_n: &[(usize, Vec<f64>)],
    deltas: &[f64],
) -> Result<TailDecayReport> {
    if samples_per_n.is_empty() || deltas.is_empty() {
        return Err(Error::InvalidSpec {
            reason: "tail fit needs at least one population size and one threshold".into(),
        });
    }
    let mut fits = Vec::with_capacity(deltas.len());
    let mut any_event = false;
    for &delta in deltas {
        let mut cells = Vec::with_capacity(samples_per_n.len());
        for (n, samples) in samples_per_n {
            let exceed = samples.iter().filter(|v| **v > delta).count();
            any_event |= exceed > 0;
            cells.push(TailCell { n: *n, exceed, total: samples.len() });
        }
        let points: Vec<(f64, f64)> = cells
            .iter()
            .filter(|c| c.exceed > 0)
            .map(|c| (c.n as f64, c.phat().ln()))
            .collect();
        let (slope_n, slope_n2, r2) = if points.len() >= 2 {
            let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
            let xs2: Vec<f64> = points.iter().map(|p| p.0 * p.0).collect();
            let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
            let fit_n = linear_fit(&xs, &ys);
            let fit_n2 = linear_fit(&xs2, &ys);
            (fit_n.slope, fit_n2.slope, fit_n.r2)
        } else {
            (f64::NAN, f64::NAN, f64::NAN)
        };
        fits.push(TailFit { delta, cells, slope_n, slope_n2, r2 });
    }
    if !any_event {
        return Err(Error::AllZeroEvents);
    }
    Ok(TailDecayReport { fits })
}

/// Simulates coupled equilibrium/auxiliary pairs at each population size
/// and fits the exceedance decay of the worst-node distance over the given
/// thresholds.
pub fn fit_tail_decay(
    spec: &GameSpec,
    field: &AffineField,
    deltas: &[f64],
    population_sizes: &[usize],
    reps: usize,
    seed: u64,
) -> Result<TailDecayReport> {
    let k_steps = field.grid().steps();
    let mut samples_per_n = Vec::with_capacity(population_sizes.len());
    for (idx, &n) in population_sizes.iter().enumerate() {
        let nfield = solve_nplayer_nash(spec, n, k_steps)?;
        let samples =
            coupled_sup_w2_samples(spec, field, &nfield, reps, derive_seed(seed, 5, idx as u64))?;
        samples_per_n.push((n, samples));
    }
    fit_tail_from_samples(&samples_per_n, deltas)
}

/// Thresholds chosen as upper quantiles of the statistic at the smallest
/// population size, so the smallest-size exceedance rates land near the
/// requested levels.
pub fn calibrate_deltas(smallest_n_samples: &[f64], exceed_levels: &[f64]) -> Vec<f64> {
    exceed_levels
        .iter()
        .map(|level| percentile(smallest_n_samples, 1.0 - level.clamp(0.0, 1.0)))
        .collect()
}

/// Rate value for a control-law mean target, obtained by inverting the
/// feedback map on means and applying the state-mean rate machinery at the
/// intermediate time.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ControlRate {
    /// Minimal control energy to move the mean control to the target.
    pub value: f64,
    /// State mean whose image under the feedback map is the target.
    pub state_mean_target: f64,
    /// Image of the pulled-back state mean; round-trips to the target.
    pub achieved_nu_mean: f64,
}

/// Pulls a mean-control target at time `t` back through the affine
/// feedback map (population terms frozen at the uncontrolled mean flow)
/// and evaluates the mean rate on `[0, t]` with freshly integrated
/// dynamics restricted to that horizon.
pub fn rate_for_controls(prob: &RateProblem, t: f64, nu_mean: f64) -> Result<ControlRate> {
    if !(t > 0.0) {
        return Err(Error::InvalidSpec {
            reason: format!("control-rate time must be positive, got {t}"),
        });
    }
    let lc = lambda_coeffs(&prob.spec)?;
    let (p, r, s) = prob.field.coeffs_at(t)?;
    let mx = prob.dynamics.mean_at(t)?;
    let slope = lc.lx + lc.ly * p;
    let scale = lc.lx.abs() + (lc.ly * p).abs();
    if slope.abs() < 1e-12 * scale.max(1.0) {
        return Err(Error::NonInvertible { t, slope });
    }
    let offset = lc.lm * mx + lc.ly * (r * mx + s);
    let state_mean_target = (nu_mean - offset) / slope;
    let achieved_nu_mean = slope * state_mean_target + offset;

    let full = prob.grid();
    let sub_steps = ((t / full.t_end()) * full.steps() as f64).ceil() as usize;
    let sub_grid = TimeGrid::new(t, sub_steps.max(16))?;
    let maps = mfg_maps(&prob.spec)?;
    let truncated =
        MeanDynamics::from_maps(&maps, &prob.field, sub_grid, prob.spec.sigma(), prob.spec.x0())?;
    let value = truncated.rate_of_terminal_mean(state_mean_target);
    Ok(ControlRate { value, state_mean_target, achieved_nu_mean })
}

/// One row of the large-deviation result table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LdpRow {
    pub kind: String,
    pub n: usize,
    pub delta_or_f: f64,
    pub estimate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub oracle: f64,
    pub slope_n: f64,
    pub slope_n2: f64,
    pub r2: f64,
}

/// Result table writable as CSV.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LdpReport {
    pub rows: Vec<LdpRow>,
}

impl LdpReport {
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("kind,N,delta_or_F,estimate,ci_lo,ci_hi,oracle,slope_N,slope_N2,r2\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                row.kind,
                row.n,
                row.delta_or_f,
                row.estimate,
                row.ci_lo,
                row.ci_hi,
                row.oracle,
                row.slope_n,
                row.slope_n2,
                row.r2
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mfg_solver::{solve_decoupling_field, solve_mean_flow};
    use crate::model::{GeneralLQSpec, SystemicRiskSpec};
    use crate::rng::standard_normal;
    use approx::assert_abs_diff_eq;

    fn default_systemic() -> GameSpec {
        GameSpec::SystemicRisk(SystemicRiskSpec {
            a: 0.5,
            q: 0.8,
            eps: 1.0,
            c: 0.5,
            sigma: 1.0,
            T: 0.5,
            x0: 0.0,
        })
    }

    fn default_lq() -> GameSpec {
        GameSpec::GeneralLq(GeneralLQSpec {
            A: 0.3,
            Abar: -0.2,
            B: 1.0,
            Bbar: 0.4,
            Q: 1.0,
            Qbar: 0.5,
            R: 1.0,
            Rbar: 0.5,
            Sbar: 0.6,
            QT: 0.5,
            QbarT: 0.3,
            sigma: 1.0,
            T: 0.5,
            x0: 0.5,
        })
    }

    fn clipped() -> TargetFunctional {
        TargetFunctional::ClippedQuadratic { kappa: 0.25, clip: 1.0 }
    }

    fn systemic_problem(k: usize) -> RateProblem {
        let spec = default_systemic();
        let field = solve_decoupling_field(&spec, k).unwrap();
        RateProblem::new(&spec, &field, clipped()).unwrap()
    }

    #[test]
    fn systemic_mean_dynamics_have_unit_weights_and_s_equal_to_horizon() {
        let problem = systemic_problem(200);
        for (&w, &m) in problem.weight().iter().zip(problem.mean0()) {
            assert_abs_diff_eq!(w, 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(m, 0.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(problem.s_total(), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(problem.gaussian_variance(256), 0.5 / 256.0, epsilon = 1e-15);
        assert_eq!(problem.rate_of_terminal_mean(problem.terminal_mean()), 0.0);
    }

    #[test]
    fn propagator_matches_the_exponential_of_the_integrated_slope() {
        let spec = default_lq();
        let field = solve_decoupling_field(&spec, 400).unwrap();
        let problem = RateProblem::new(&spec, &field, clipped()).unwrap();
        let integral = integrate_uniform(problem.dynamics.slope_nodes(), problem.grid().dt());
        assert_abs_diff_eq!(problem.weight()[0], integral.exp(), epsilon = 1e-8);
        assert_abs_diff_eq!(problem.weight()[problem.grid().num_nodes() - 1], 1.0);
    }

    #[test]
    fn uncontrolled_mean_agrees_with_the_mean_flow_solver() {
        let spec = default_lq();
        let field = solve_decoupling_field(&spec, 150).unwrap();
        let problem = RateProblem::new(&spec, &field, clipped()).unwrap();
        let flow = solve_mean_flow(&spec, &field).unwrap();
        for (a, b) in problem.mean0().iter().zip(flow.mx()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn clipped_quadratic_oracle_matches_the_closed_form() {
        let problem = systemic_problem(400);
        // With unit weights, zero mean, and S = T = 1/2 the minimum of
        // (z - kappa)^2 + z^2 / (2 sigma^2 S) is kappa^2 / (1 + 2 sigma^2 S),
        // attained at kappa * 2 sigma^2 S / (1 + 2 sigma^2 S).
        let expected = 0.25 * 0.25 / 2.0;
        let oracle = evaluate_rate_oracle(&problem).unwrap();
        assert_abs_diff_eq!(oracle.value, expected, epsilon = 1e-7);
        assert_abs_diff_eq!(oracle.shooting_value, expected, epsilon = 1e-9);
        assert!(oracle.relative_gap() < 1e-6, "route gap {}", oracle.relative_gap());
        assert_abs_diff_eq!(oracle.minimizer_mean, 0.125, epsilon = 1e-6);
        // The optimal forcing is proportional to the propagator weights.
        let u = &oracle.control;
        let ratio = u[10] / problem.weight()[10];
        for k in [0usize, 100, 399] {
            assert_abs_diff_eq!(u[k], ratio * problem.weight()[k], epsilon = 1e-7);
        }
    }

    #[test]
    fn smoothed_exceedance_oracle_matches_a_newton_solve() {
        let problem = systemic_problem(400)
            .with_target(TargetFunctional::SmoothedExceedance { kappa: 0.0, width: 1.0 });
        let oracle = evaluate_rate_oracle(&problem).unwrap();
        // Independent stationarity solve: sigmoid'(z) + z / (sigma^2 S) = 0.
        let v = 0.5;
        let mut z = -0.1_f64;
        for _ in 0..60 {
            let sig = 1.0 / (1.0 + (-z).exp());
            let g = sig * (1.0 - sig) + z / v;
            let gp = sig * (1.0 - sig) * (1.0 - 2.0 * sig) + 1.0 / v;
            z -= g / gp;
        }
        let expected = 1.0 / (1.0 + (-z).exp()) + z * z / (2.0 * v);
        assert_abs_diff_eq!(oracle.shooting_value, expected, epsilon = 1e-10);
        assert_abs_diff_eq!(oracle.value, expected, epsilon = 1e-6);
        assert!(oracle.relative_gap() < 1e-6);
        assert!(expected > 0.48 && expected < 0.49, "sanity range, got {expected}");
    }

    #[test]
    fn oracle_is_zero_when_the_target_is_already_attained() {
        let problem = systemic_problem(150);
        let attained = problem.with_target(TargetFunctional::ClippedQuadratic {
            kappa: problem.terminal_mean(),
            clip: 1.0,
        });
        let oracle = evaluate_rate_oracle(&attained).unwrap();
        assert_eq!(oracle.value, 0.0);
        assert!(oracle.control.iter().all(|u| *u == 0.0));
        assert!(oracle.shooting_value.abs() < 1e-12);
    }

    #[test]
    fn descent_reports_non_convergence_on_a_starved_budget() {
        let problem = systemic_problem(100)
            .with_target(TargetFunctional::SmoothedExceedance { kappa: 0.0, width: 1.0 });
        match descent_on_dynamics(&problem.dynamics, problem.target(), 2, 1e-12) {
            Err(Error::NonConvergence { grad_norm, iters }) => {
                assert!(grad_norm > 1e-12);
                assert_eq!(iters, 2);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn laplace_estimate_is_exact_for_constant_functionals() {
        // A clip far below the quadratic keeps the functional at the
        // constant clip value everywhere.
        let c = 0.37;
        let target = TargetFunctional::ClippedQuadratic { kappa: 1e6, clip: c };
        let means: Vec<f64> = (0..200).map(|i| i as f64 / 100.0).collect();
        let est = laplace_from_terminal_means(&target, 64, &means, 200, 9).unwrap();
        assert_abs_diff_eq!(est.estimate, c, epsilon = 1e-13);
        assert_abs_diff_eq!(est.ci_lo, c, epsilon = 1e-13);
        assert_abs_diff_eq!(est.ci_hi, c, epsilon = 1e-13);
    }

    #[test]
    fn laplace_estimate_is_monotone_in_the_functional() {
        let lo = TargetFunctional::ClippedQuadratic { kappa: 0.0, clip: 0.2 };
        let hi = TargetFunctional::ClippedQuadratic { kappa: 0.0, clip: 0.9 };
        let means: Vec<f64> = (0u64..300).map(|i| standard_normal(4, i, 0)).collect();
        let est_lo = laplace_from_terminal_means(&lo, 32, &means, 200, 7).unwrap();
        let est_hi = laplace_from_terminal_means(&hi, 32, &means, 200, 7).unwrap();
        assert!(est_lo.estimate <= est_hi.estimate);
    }

    #[test]
    fn laplace_estimator_recovers_the_oracle_on_synthetic_gaussians() {
        let problem = systemic_problem(200);
        let oracle = evaluate_rate_oracle(&problem).unwrap();
        let n = 256;
        let sd = problem.gaussian_variance(n).sqrt();
        let m0 = problem.terminal_mean();
        let means: Vec<f64> = (0u64..4000).map(|i| m0 + sd * standard_normal(77, i, 0)).collect();
        let est = laplace_from_terminal_means(problem.target(), n, &means, 400, 5).unwrap();
        let gap = (est.estimate - oracle.value).abs();
        let ci_half = 0.5 * (est.ci_hi - est.ci_lo);
        assert!(
            gap <= (0.1 * oracle.value).max(2.0 * ci_half),
            "gap {gap:.4e}, oracle {:.4e}, ci half {ci_half:.4e}",
            oracle.value
        );
        assert!(est.ci_lo <= est.estimate && est.estimate <= est.ci_hi);
    }

    #[test]
    fn laplace_estimator_rejects_tiny_or_degenerate_input() {
        let target = clipped();
        assert!(matches!(
            laplace_from_terminal_means(&target, 8, &[0.0; 10], 100, 1),
            Err(Error::InvalidSpec { .. })
        ));
        let mut means = vec![0.0; 200];
        means[3] = f64::NAN;
        assert!(matches!(
            laplace_from_terminal_means(&target, 8, &means, 100, 1),
            Err(Error::DegenerateEstimate { .. })
        ));
    }

    #[test]
    fn laplace_experiment_produces_paired_rows_with_a_shared_oracle() {
        let spec = default_systemic();
        let field = solve_decoupling_field(&spec, 50).unwrap();
        let problem = RateProblem::new(&spec, &field, clipped()).unwrap();
        let rows = estimate_laplace(&problem, &[4], 100, 31).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].kind, "laplace_aux");
        assert_eq!(rows[1].kind, "laplace_eq");
        for row in &rows {
            assert_eq!(row.n, 4);
            assert!(row.estimate.is_finite());
            assert!(row.ci_lo <= row.estimate && row.estimate <= row.ci_hi);
            assert_abs_diff_eq!(row.oracle, 0.03125, epsilon = 1e-6);
        }
        assert!(matches!(
            estimate_laplace(&problem, &[4], 10, 31),
            Err(Error::InvalidSpec { .. })
        ));
    }

    #[test]
    fn tail_fit_recovers_a_planted_exponential_decay() {
        // Planted model: phat(n) = exp(-0.05 * n), realized exactly by
        // constructed samples.
        let mut samples_per_n = Vec::new();
        for &n in &[8usize, 16, 32] {
            let total = 1000;
            let exceed = ((-0.05 * n as f64).exp() * total as f64).round() as usize;
            let mut samples = vec![0.0; total - exceed];
            samples.extend(vec![2.0; exceed]);
            samples_per_n.push((n, samples));
        }
        let report = fit_tail_from_samples(&samples_per_n, &[1.0]).unwrap();
        let fit = &report.fits[0];
        assert!(fit.slope_n < 0.0);
        assert!((fit.slope_n - (-0.05)).abs() < 0.005, "slope {}", fit.slope_n);
        assert!(fit.r2 > 0.99);
        assert!(fit.slope_n2 < 0.0);
        let rows = report.to_rows("tail");
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| r.kind == "tail" && r.oracle.is_nan()));
    }

    #[test]
    fn tail_fit_excludes_zero_cells_and_rejects_all_zero_data() {
        let samples_per_n = vec![
            (8usize, vec![0.5, 1.5, 0.4, 1.6]),
            (16usize, vec![0.1, 0.2, 0.3, 0.4]),
            (32usize, vec![1.2, 0.1, 0.0, 0.2]),
        ];
        let report = fit_tail_from_samples(&samples_per_n, &[1.0]).unwrap();
        let fit = &report.fits[0];
        assert_eq!(fit.cells[1].exceed, 0);
        // Only two nonzero cells remain, so a fit still exists.
        assert!(fit.slope_n.is_finite());

        let all_zero = vec![(8usize, vec![0.1, 0.2]), (16usize, vec![0.0, 0.3])];
        assert!(matches!(
            fit_tail_from_samples(&all_zero, &[5.0]),
            Err(Error::AllZeroEvents)
        ));
    }

    #[test]
    fn zero_threshold_exceeds_everywhere_in_the_simulated_tail() {
        let spec = default_systemic();
        let field = solve_decoupling_field(&spec, 40).unwrap();
        let report = fit_tail_decay(&spec, &field, &[0.0], &[4, 8], 40, 3).unwrap();
        for cell in &report.fits[0].cells {
            assert_eq!(cell.exceed, cell.total);
            assert_eq!(cell.total, 40);
        }
    }

    #[test]
    fn calibrated_deltas_hit_the_requested_levels() {
        let samples: Vec<f64> = (0..1000).map(|i| i as f64 / 1000.0).collect();
        let deltas = calibrate_deltas(&samples, &[0.5, 0.25, 0.1]);
        assert!((deltas[0] - 0.5).abs() < 0.01);
        assert!((deltas[1] - 0.75).abs() < 0.01);
        assert!((deltas[2] - 0.9).abs() < 0.01);
        let exceed =
            |d: f64| samples.iter().filter(|v| **v > d).count() as f64 / samples.len() as f64;
        for (d, lvl) in deltas.iter().zip([0.5, 0.25, 0.1]) {
            assert!((exceed(*d) - lvl).abs() < 0.01);
        }
    }

    #[test]
    fn control_rate_round_trips_and_matches_the_rescaled_weight_integral() {
        let problem = systemic_problem(500);
        let spec = default_systemic();
        let lc = lambda_coeffs(&spec).unwrap();
        for (t, nu) in [(0.3, -0.2), (0.17, 0.4), (0.499, 0.05)] {
            let out = rate_for_controls(&problem, t, nu).unwrap();
            assert_abs_diff_eq!(out.achieved_nu_mean, nu, epsilon = 1e-12);
            assert!(out.value > 0.0);
            // Independent quadrature: the stored-weight partial integral.
            let (p, r, s) = problem.field().coeffs_at(t).unwrap();
            let mx = problem.dynamics.mean_at(t).unwrap();
            let slope = lc.lx + lc.ly * p;
            let offset = lc.lm * mx + lc.ly * (r * mx + s);
            let m_star = (nu - offset) / slope;
            let s_t = problem.dynamics.s_partial(t).unwrap();
            let direct = (m_star - mx).powi(2) / (2.0 * s_t);
            assert!(
                (out.value - direct).abs() <= 1e-5 * direct.max(1.0),
                "routes {} vs {direct}",
                out.value
            );
            assert_abs_diff_eq!(out.state_mean_target, m_star, epsilon = 1e-12);
        }
        // The current mean control costs nothing to reach.
        let (p, r, s) = problem.field().coeffs_at(0.3).unwrap();
        let mx = 0.0;
        let current = (lc.lx + lc.ly * p) * mx + lc.lm * mx + lc.ly * (r * mx + s);
        let zero = rate_for_controls(&problem, 0.3, current).unwrap();
        assert_abs_diff_eq!(zero.value, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_feedback_slope_is_rejected() {
        let spec = GameSpec::GeneralLq(GeneralLQSpec {
            A: 0.3,
            Abar: -0.2,
            B: 1.0,
            Bbar: 0.4,
            Q: 0.0,
            Qbar: 0.5,
            R: 1.0,
            Rbar: 0.5,
            Sbar: 0.6,
            QT: 0.0,
            QbarT: 0.3,
            sigma: 1.0,
            T: 0.5,
            x0: 0.5,
        });
        let field = solve_decoupling_field(&spec, 100).unwrap();
        let problem = RateProblem::new(&spec, &field, clipped()).unwrap();
        assert!(matches!(
            rate_for_controls(&problem, 0.25, 0.1),
            Err(Error::NonInvertible { .. })
        ));
    }

    #[test]
    fn report_csv_has_the_contracted_header() {
        let report = LdpReport {
            rows: vec![LdpRow {
                kind: "laplace_aux".into(),
                n: 256,
                delta_or_f: 0.25,
                estimate: 0.031,
                ci_lo: 0.030,
                ci_hi: 0.032,
                oracle: 0.03125,
                slope_n: f64::NAN,
                slope_n2: f64::NAN,
                r2: f64::NAN,
            }],
        };
        let csv = report.to_csv();
        assert!(csv
            .starts_with("kind,N,delta_or_F,estimate,ci_lo,ci_hi,oracle,slope_N,slope_N2,r2\n"));
        let row = csv.lines().nth(1).unwrap();
        assert!(row.starts_with("laplace_aux,256,0.25,"));
        assert!(row.ends_with("NaN,NaN,NaN"));
    }

    #[test]
    fn coupled_statistic_decays_with_population_size() {
        let spec = default_systemic();
        let field = solve_decoupling_field(&spec, 50).unwrap();
        let mut medians = Vec::new();
        for n in [8usize, 64] {
            let nfield = solve_nplayer_nash(&spec, n, 50).unwrap();
            let samples = coupled_sup_w2_samples(&spec, &field, &nfield, 30, 11).unwrap();
            assert_eq!(samples.len(), 30);
            assert!(samples.iter().all(|v| *v > 0.0));
            medians.push(percentile(&samples, 0.5));
        }
        assert!(medians[1] < medians[0], "medians {medians:?}");
    }
}

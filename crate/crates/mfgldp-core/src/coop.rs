//! Cooperative (central-planner) variant of the linear-quadratic game.
//!
//! A planner choosing every player's control minimizes the average cost.
//! The first-order condition couples each player's adjoint state to the
//! population means of states and adjoints, which yields an affine feedback
//! `ell` in `(y, mean state, mean adjoint)` and closes the system into a
//! forward-backward pair with affine decoupling field `y = p*x + r*m + s`.
//! This module evaluates the feedback and the coupled state/adjoint rates,
//! solves the field and the mean flows, checks the associated PDE residual
//! pointwise, cross-validates against a first-order discrete
//! forward-backward oracle, simulates the finite-population planner system
//! and its mean-field counterparts, verifies planner stationarity by finite
//! differences on a reduced deterministic problem, and runs the
//! large-deviation comparison for the planner's empirical mean.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::ldp::{
    fit_tail_from_samples, laplace_from_terminal_means, rate_oracle_on_dynamics, LdpReport,
    LdpRow, MeanDynamics, RateOracle, TargetFunctional,
};
use crate::measure::{sup_path_w2, EmpiricalMeasure, EmpiricalPath};
use crate::mfg_solver::{
    discrete_fbsde_with_maps, integrate_affine_field, mean_drift_coeffs, AffineField,
    DiscreteFbsdeSolution,
};
use crate::model::{FbsdeMaps, GeneralLQSpec, MeasureSummary};
use crate::particle::{BrownianBundle, EXPLOSION_LIMIT};
use crate::rng::derive_seed;
use crate::stats::{bootstrap_ci, percentile};

/// Coefficients of the planner feedback `ell = wy*y + wm*xbar + wmy*ybar`.
fn feedback_weights(lq: &GeneralLQSpec) -> Result<(f64, f64, f64)> {
    if lq.R == 0.0 {
        return Err(Error::SingularR { value: lq.R });
    }
    let total = lq.R + lq.Rbar;
    if total == 0.0 {
        return Err(Error::SingularR { value: total });
    }
    let cbar = lq.Rbar / total;
    let wy = -lq.B / (2.0 * lq.R);
    let wm = -lq.Sbar * (1.0 - cbar) / (2.0 * lq.R);
    let wmy = -(lq.Bbar - cbar * (lq.B + lq.Bbar)) / (2.0 * lq.R);
    Ok((wy, wm, wmy))
}

/// Planner feedback control for one player given its adjoint state `y`, the
/// mean state `xbar`, and the mean adjoint `ybar`.
pub fn eval_ell(lq: &GeneralLQSpec, y: f64, xbar: f64, ybar: f64) -> Result<f64> {
    let (wy, wm, wmy) = feedback_weights(lq)?;
    Ok(wy * y + wm * xbar + wmy * ybar)
}

/// State drift under the planner feedback, composed from the drift
/// coefficients and [`eval_ell`]: the player's own control uses its adjoint
/// `y`, the population control term uses the population average of the
/// feedback. The control slot of the measure summary (`mean_a`) carries the
/// mean adjoint state, not a mean control.
pub fn eval_ell1(lq: &GeneralLQSpec, x: f64, y: f64, xi: &MeasureSummary) -> Result<f64> {
    let xbar = xi.mean_x;
    let ybar = xi.mean_a;
    let own = eval_ell(lq, y, xbar, ybar)?;
    // The feedback is affine in y, so its population average is the
    // feedback of the average adjoint.
    let avg = eval_ell(lq, ybar, xbar, ybar)?;
    Ok(lq.A * x + lq.Abar * xbar + lq.B * own + lq.Bbar * avg)
}

/// State drift under the planner feedback with every coefficient written
/// out, kept as an independent consistency route for [`eval_ell1`].
pub fn eval_ell1_expanded(
    lq: &GeneralLQSpec,
    x: f64,
    y: f64,
    xi: &MeasureSummary,
) -> Result<f64> {
    let (wy, wm, wmy) = feedback_weights(lq)?;
    let total = lq.R + lq.Rbar;
    let cy = lq.B * wy;
    let cm = lq.Abar + lq.B * wm - lq.Bbar * lq.Sbar / (2.0 * total);
    let cmy = lq.B * wmy - lq.Bbar * (lq.B + lq.Bbar) / (2.0 * total);
    Ok(lq.A * x + cy * y + cm * xi.mean_x + cmy * xi.mean_a)
}

/// Adjoint decay rate of the planner optimality system: the adjoint solves
/// `dY = -ell2 dt + Z dW`. As in [`eval_ell1`], `xi.mean_a` carries the
/// mean adjoint state.
pub fn eval_ell2(lq: &GeneralLQSpec, x: f64, y: f64, xi: &MeasureSummary) -> Result<f64> {
    if lq.R == 0.0 {
        return Err(Error::SingularR { value: lq.R });
    }
    let total = lq.R + lq.Rbar;
    if total == 0.0 {
        return Err(Error::SingularR { value: total });
    }
    let cm = 2.0 * lq.Qbar - lq.Sbar * lq.Sbar / (2.0 * total);
    let cmy = lq.Abar - lq.Sbar * (lq.B + lq.Bbar) / (2.0 * total);
    Ok(2.0 * lq.Q * x + lq.A * y + cm * xi.mean_x + cmy * xi.mean_a)
}

/// Affine coefficient maps of the planner forward-backward system, in the
/// same layout used by the competitive solver: forward drift
/// `bx*x + by*y + bm*xbar + bmy*ybar + b0` and backward rate
/// `fx*x + fy*y + fm*xbar + fmy*ybar + f0`, with terminal `gx*x + gm*xbar`.
pub fn coop_maps(lq: &GeneralLQSpec) -> Result<FbsdeMaps> {
    let (wy, wm, wmy) = feedback_weights(lq)?;
    let total = lq.R + lq.Rbar;
    Ok(FbsdeMaps {
        bx: lq.A,
        by: lq.B * wy,
        bm: lq.Abar + lq.B * wm - lq.Bbar * lq.Sbar / (2.0 * total),
        bmy: lq.B * wmy - lq.Bbar * (lq.B + lq.Bbar) / (2.0 * total),
        b0: 0.0,
        fx: 2.0 * lq.Q,
        fy: lq.A,
        fm: 2.0 * lq.Qbar - lq.Sbar * lq.Sbar / (2.0 * total),
        fmy: lq.Abar - lq.Sbar * (lq.B + lq.Bbar) / (2.0 * total),
        f0: 0.0,
        gx: 2.0 * lq.QT,
        gm: 2.0 * lq.QbarT,
    })
}

/// Solved planner problem: decoupling field, mean state flow, and mean
/// adjoint flow tied by `meanY = (p + r) * meanX + s`.
#[derive(Debug, Clone)]
pub struct CoopSolution {
    lq: GeneralLQSpec,
    field: AffineField,
    mean_x: Vec<f64>,
    dmean_x: Vec<f64>,
    mean_y: Vec<f64>,
}

impl CoopSolution {
    pub fn spec(&self) -> &GeneralLQSpec {
        &self.lq
    }

    pub fn field(&self) -> &AffineField {
        &self.field
    }

    /// Mean state per grid node.
    pub fn mean_x(&self) -> &[f64] {
        &self.mean_x
    }

    /// Mean adjoint per grid node.
    pub fn mean_y(&self) -> &[f64] {
        &self.mean_y
    }

    /// Mean state at an arbitrary time by cubic interpolation.
    pub fn mean_x_at(&self, t: f64) -> Result<f64> {
        let grid = self.field.grid();
        let (k, tau) = grid.locate(t)?;
        if tau == 0.0 {
            return Ok(self.mean_x[k]);
        }
        Ok(crate::mfg_solver::hermite_value(
            self.mean_x[k],
            self.dmean_x[k],
            self.mean_x[k + 1],
            self.dmean_x[k + 1],
            grid.dt(),
            tau,
        ))
    }

    /// Mean adjoint at an arbitrary time through the affine tie.
    pub fn mean_y_at(&self, t: f64) -> Result<f64> {
        let (p, r, s) = self.field.coeffs_at(t)?;
        Ok((p + r) * self.mean_x_at(t)? + s)
    }

    /// Optimal feedback control for a player at state `x`, with the
    /// population terms read from the mean flows.
    pub fn control_at(&self, t: f64, x: f64) -> Result<f64> {
        let (p, r, s) = self.field.coeffs_at(t)?;
        let mx = self.mean_x_at(t)?;
        let my = (p + r) * mx + s;
        eval_ell(&self.lq, p * x + r * mx + s, mx, my)
    }

    /// Population-average control at time `t`.
    pub fn mean_control_at(&self, t: f64) -> Result<f64> {
        let mx = self.mean_x_at(t)?;
        let my = self.mean_y_at(t)?;
        eval_ell(&self.lq, my, mx, my)
    }
}

/// Solves the planner problem: backward integration of the field
/// coefficients from their terminal values, then a forward mean-state
/// solve, with the mean adjoint recovered from the affine tie.
pub fn solve_coop(lq: &GeneralLQSpec, k_steps: usize) -> Result<CoopSolution> {
    lq.validate()?;
    if k_steps < 2 {
        return Err(Error::InvalidSpec {
            reason: format!("planner solve needs K >= 2, got {k_steps}"),
        });
    }
    let maps = coop_maps(lq)?;
    let field = integrate_affine_field(&maps, lq.T, k_steps)?;
    let grid = *field.grid();
    let h = grid.dt();
    let n = grid.num_nodes();

    let coeffs_at = |t: f64| -> Result<(f64, f64)> {
        let (p, r, s) = field.coeffs_at(t)?;
        Ok(mean_drift_coeffs(&maps, p, r, s))
    };
    let mut mean_x = vec![0.0; n];
    mean_x[0] = lq.x0;
    for k in 0..grid.steps() {
        let t = grid.node(k);
        let m = mean_x[k];
        let f = |tt: f64, mm: f64| -> Result<f64> {
            let (sl, of) = coeffs_at(tt)?;
            Ok(sl * mm + of)
        };
        let k1 = f(t, m)?;
        let k2 = f(t + 0.5 * h, m + 0.5 * h * k1)?;
        let k3 = f(t + 0.5 * h, m + 0.5 * h * k2)?;
        let k4 = f(t + h, m + h * k3)?;
        mean_x[k + 1] = m + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    let mut dmean_x = vec![0.0; n];
    let mut mean_y = vec![0.0; n];
    let (pn, rn, sn) = field.node_coeffs();
    for k in 0..n {
        let (sl, of) = coeffs_at(grid.node(k))?;
        dmean_x[k] = sl * mean_x[k] + of;
        mean_y[k] = (pn[k] + rn[k]) * mean_x[k] + sn[k];
    }
    Ok(CoopSolution { lq: lq.clone(), field, mean_x, dmean_x, mean_y })
}

/// Pointwise residual of the planner field equation at `(t, x)` with the
/// population mean state set to `m`: time derivatives of the affine
/// coefficients plus the transport terms from the state rate applied to the
/// field slopes, plus the adjoint rate. Exact solutions make this vanish
/// for every `(t, x, m)`.
pub fn coop_pde_residual(sol: &CoopSolution, t: f64, x: f64, m: f64) -> Result<f64> {
    let field = sol.field();
    let (p, r, s) = field.coeffs_at(t)?;
    let (dp, dr, ds) = field.coeff_derivs_at(t)?;
    let y = p * x + r * m + s;
    let ybar = (p + r) * m + s;
    let xi = MeasureSummary::dirac(m, ybar);
    let own_rate = eval_ell1(&sol.lq, x, y, &xi)?;
    let mean_rate = eval_ell1(&sol.lq, m, ybar, &xi)?;
    let adjoint_rate = eval_ell2(&sol.lq, x, y, &xi)?;
    Ok(dp * x + dr * m + ds + p * own_rate + r * mean_rate + adjoint_rate)
}

/// First-order discrete forward-backward oracle for the planner system,
/// sharing the backward affine recursion with the competitive oracle.
pub fn solve_coop_fbsde_oracle(lq: &GeneralLQSpec, k_steps: usize) -> Result<DiscreteFbsdeSolution> {
    lq.validate()?;
    let maps = coop_maps(lq)?;
    discrete_fbsde_with_maps(&maps, lq.T, lq.x0, lq.sigma, k_steps)
}

fn euler_step(
    current: &[f64],
    drifts: &[f64],
    bundle: &BrownianBundle,
    sigma: f64,
    dt: f64,
    step: usize,
) -> Result<Vec<f64>> {
    (0..current.len())
        .map(|path| {
            let value = current[path] + dt * drifts[path] + sigma * bundle.increment(path, step);
            if !value.is_finite() || value.abs() > EXPLOSION_LIMIT {
                Err(Error::Explosion { step, path, magnitude: value.abs() })
            } else {
                Ok(value)
            }
        })
        .collect()
}

/// Simulates the finite-population planner system: every player applies the
/// feedback [`eval_ell`] with its own affine adjoint and the empirical
/// means, and the drift is composed from the structural coefficients.
/// Returns per-node state cross-sections.
pub fn simulate_planner(sol: &CoopSolution, bundle: &BrownianBundle) -> Result<Vec<Vec<f64>>> {
    sol.field().grid().ensure_matches(bundle.grid(), "planner bundle")?;
    let lq = &sol.lq;
    let grid = *bundle.grid();
    let n = bundle.n_paths();
    let nf = n as f64;
    let dt = grid.dt();
    let (pn, rn, sn) = sol.field().node_coeffs();
    let mut states = Vec::with_capacity(grid.num_nodes());
    states.push(vec![lq.x0; n]);
    for k in 0..grid.steps() {
        let current = &states[k];
        let xbar = current.iter().sum::<f64>() / nf;
        let ybar = (pn[k] + rn[k]) * xbar + sn[k];
        let alphas = current
            .iter()
            .map(|&x| eval_ell(lq, pn[k] * x + rn[k] * xbar + sn[k], xbar, ybar))
            .collect::<Result<Vec<f64>>>()?;
        let abar = alphas.iter().sum::<f64>() / nf;
        let drifts: Vec<f64> = current
            .iter()
            .zip(&alphas)
            .map(|(&x, &a)| lq.A * x + lq.Abar * xbar + lq.B * a + lq.Bbar * abar)
            .collect();
        let next = euler_step(current, &drifts, bundle, lq.sigma, dt, k)?;
        states.push(next);
    }
    Ok(states)
}

fn decoupled_coop_drift_nodes(sol: &CoopSolution) -> Result<Vec<(f64, f64, f64)>> {
    let maps = coop_maps(&sol.lq)?;
    let (pn, rn, sn) = sol.field().node_coeffs();
    Ok((0..sol.field().grid().num_nodes())
        .map(|k| {
            (
                maps.bx + maps.by * pn[k],
                maps.by * rn[k] + maps.bm + maps.bmy * (pn[k] + rn[k]),
                (maps.by + maps.bmy) * sn[k] + maps.b0,
            )
        })
        .collect())
}

/// Simulates the mean-field planner system: the decoupled drift from
/// [`coop_maps`], evaluated at the ensemble's own empirical mean.
pub fn simulate_coop_auxiliary(
    sol: &CoopSolution,
    bundle: &BrownianBundle,
) -> Result<Vec<Vec<f64>>> {
    sol.field().grid().ensure_matches(bundle.grid(), "planner auxiliary bundle")?;
    let coeffs = decoupled_coop_drift_nodes(sol)?;
    simulate_decoupled(sol, bundle, &coeffs, None)
}

/// Simulates independent copies of the planner limit dynamics: the
/// decoupled drift with the mean frozen at the deterministic mean flow.
pub fn simulate_coop_limit(sol: &CoopSolution, bundle: &BrownianBundle) -> Result<Vec<Vec<f64>>> {
    sol.field().grid().ensure_matches(bundle.grid(), "planner limit bundle")?;
    let coeffs = decoupled_coop_drift_nodes(sol)?;
    simulate_decoupled(sol, bundle, &coeffs, Some(&sol.mean_x))
}

fn simulate_decoupled(
    sol: &CoopSolution,
    bundle: &BrownianBundle,
    coeffs: &[(f64, f64, f64)],
    frozen_mean: Option<&[f64]>,
) -> Result<Vec<Vec<f64>>> {
    let grid = *bundle.grid();
    let n = bundle.n_paths();
    let dt = grid.dt();
    let mut states = Vec::with_capacity(grid.num_nodes());
    states.push(vec![sol.lq.x0; n]);
    for k in 0..grid.steps() {
        let (cx, cm, c0) = coeffs[k];
        let current = &states[k];
        let mean = match frozen_mean {
            Some(flow) => flow[k],
            None => current.iter().sum::<f64>() / n as f64,
        };
        let drifts: Vec<f64> = current.iter().map(|&x| cx * x + cm * mean + c0).collect();
        let next = euler_step(current, &drifts, bundle, sol.lq.sigma, dt, k)?;
        states.push(next);
    }
    Ok(states)
}

fn sup_w2_states(grid: TimeGrid, a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let path_a =
        EmpiricalPath::new(grid, a.iter().map(|s| EmpiricalMeasure::new(s.clone())).collect())?;
    let path_b =
        EmpiricalPath::new(grid, b.iter().map(|s| EmpiricalMeasure::new(s.clone())).collect())?;
    sup_path_w2(&path_a, &path_b)
}

fn terminal_mean_of(states: &[Vec<f64>]) -> f64 {
    let last = states.last().expect("nonempty state path");
    last.iter().sum::<f64>() / last.len() as f64
}

/// Terminal empirical means of independent planner simulations.
pub fn planner_terminal_means(
    sol: &CoopSolution,
    n: usize,
    reps: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let grid = *sol.field().grid();
    (0..reps)
        .into_par_iter()
        .map(|rep| {
            let bundle = BrownianBundle::new(derive_seed(seed, 0xB1, rep as u64), n, grid);
            Ok(terminal_mean_of(&simulate_planner(sol, &bundle)?))
        })
        .collect()
}

/// Terminal empirical means of independent mean-field planner simulations.
pub fn coop_auxiliary_terminal_means(
    sol: &CoopSolution,
    n: usize,
    reps: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let grid = *sol.field().grid();
    (0..reps)
        .into_par_iter()
        .map(|rep| {
            let bundle = BrownianBundle::new(derive_seed(seed, 0xB2, rep as u64), n, grid);
            Ok(terminal_mean_of(&simulate_coop_auxiliary(sol, &bundle)?))
        })
        .collect()
}

/// Per-replication worst-node distance between coupled planner and
/// mean-field planner ensembles driven by the same Brownian bundle.
pub fn coop_coupled_sup_w2_samples(
    sol: &CoopSolution,
    n: usize,
    reps: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let grid = *sol.field().grid();
    (0..reps)
        .into_par_iter()
        .map(|rep| {
            let bundle = BrownianBundle::new(derive_seed(seed, 0xB3, rep as u64), n, grid);
            let planner = simulate_planner(sol, &bundle)?;
            let aux = simulate_coop_auxiliary(sol, &bundle)?;
            sup_w2_states(grid, &planner, &aux)
        })
        .collect()
}

/// Per-replication worst-node distance between coupled planner and
/// limit-dynamics ensembles driven by the same Brownian bundle.
pub fn coop_chaos_sup_w2_samples(
    sol: &CoopSolution,
    n: usize,
    reps: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let grid = *sol.field().grid();
    (0..reps)
        .into_par_iter()
        .map(|rep| {
            let bundle = BrownianBundle::new(derive_seed(seed, 0xB4, rep as u64), n, grid);
            let planner = simulate_planner(sol, &bundle)?;
            let limit = simulate_coop_limit(sol, &bundle)?;
            sup_w2_states(grid, &planner, &limit)
        })
        .collect()
}

/// Discretized social cost of the reduced deterministic mean problem under
/// an arbitrary population-average control path: the mean state follows
/// `m' = (A + Abar) m + (B + Bbar) a` and the cost aggregates the
/// state-cost, cross, and control weights of the averaged running cost plus
/// the averaged terminal cost. Deterministic control perturbations change
/// the stochastic social cost exactly through this functional, which makes
/// it the right object for stationarity checks.
pub fn reduced_social_cost(
    lq: &GeneralLQSpec,
    k_steps: usize,
    control: impl Fn(f64) -> Result<f64>,
) -> Result<f64> {
    if k_steps < 2 {
        return Err(Error::InvalidSpec {
            reason: format!("reduced cost needs K >= 2, got {k_steps}"),
        });
    }
    let at = lq.A + lq.Abar;
    let bt = lq.B + lq.Bbar;
    let qt = lq.Q + lq.Qbar;
    let rt = lq.R + lq.Rbar;
    let st = lq.Sbar;
    let grid = TimeGrid::new(lq.T, k_steps)?;
    let h = grid.dt();
    let mut m = lq.x0;
    let mut cost = 0.0;
    let rates = |t: f64, mm: f64| -> Result<(f64, f64)> {
        let a = control(t)?;
        Ok((at * mm + bt * a, qt * mm * mm + st * mm * a + rt * a * a))
    };
    for k in 0..grid.steps() {
        let t = grid.node(k);
        let (mk1, ck1) = rates(t, m)?;
        let (mk2, ck2) = rates(t + 0.5 * h, m + 0.5 * h * mk1)?;
        let (mk3, ck3) = rates(t + 0.5 * h, m + 0.5 * h * mk2)?;
        let (mk4, ck4) = rates(t + h, m + h * mk3)?;
        m += h / 6.0 * (mk1 + 2.0 * mk2 + 2.0 * mk3 + mk4);
        cost += h / 6.0 * (ck1 + 2.0 * ck2 + 2.0 * ck3 + ck4);
    }
    Ok(cost + (lq.QT + lq.QbarT) * m * m)
}

/// Largest central-difference directional derivative of the reduced social
/// cost at the solved mean control, over a fixed set of perturbation
/// directions. Stationarity of the planner optimum drives this to the
/// discretization floor.
pub fn planner_stationarity_gap(
    sol: &CoopSolution,
    k_steps: usize,
    epsilon: f64,
) -> Result<f64> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidSpec {
            reason: format!("perturbation size must be positive, got {epsilon}"),
        });
    }
    let t_end = sol.lq.T;
    let directions: [Box<dyn Fn(f64) -> f64>; 3] = [
        Box::new(|_| 1.0),
        Box::new(move |t| t / t_end),
        Box::new(move |t| (std::f64::consts::PI * t / t_end).sin()),
    ];
    let mut gap = 0.0_f64;
    for h in &directions {
        let plus =
            reduced_social_cost(&sol.lq, k_steps, |t| Ok(sol.mean_control_at(t)? + epsilon * h(t)))?;
        let minus =
            reduced_social_cost(&sol.lq, k_steps, |t| Ok(sol.mean_control_at(t)? - epsilon * h(t)))?;
        gap = gap.max(((plus - minus) / (2.0 * epsilon)).abs());
    }
    Ok(gap)
}

/// Grid size used by [`coop_ldp_experiment`].
const COOP_EXPERIMENT_STEPS: usize = 200;
/// Fixed exceedance thresholds for the coupled planner comparison.
const COOP_TAIL_DELTAS: [f64; 3] = [0.025, 0.05, 0.1];
/// Bounded target used for the planner Laplace comparison.
fn coop_target() -> TargetFunctional {
    TargetFunctional::ClippedQuadratic { kappa: 0.25, clip: 1.0 }
}

/// Rate oracle for the planner's empirical-mean deviations, built on the
/// mean dynamics induced by [`coop_maps`].
pub fn coop_rate_oracle(sol: &CoopSolution, target: &TargetFunctional) -> Result<RateOracle> {
    let maps = coop_maps(&sol.lq)?;
    let dynamics =
        MeanDynamics::from_maps(&maps, sol.field(), *sol.field().grid(), sol.lq.sigma, sol.lq.x0)?;
    rate_oracle_on_dynamics(&dynamics, target)
}

/// Large-deviation comparison for the planner system: per population size,
/// Laplace estimates from the mean-field and finite-population systems
/// against the rate oracle, the scaled coupled-to-limit distance, and
/// exceedance rows for the planner-versus-mean-field coupling. The two
/// coupled systems realize the same affine dynamics, so every positive
/// threshold yields zero exceedances and the tail rows report zero
/// probability.
pub fn coop_ldp_experiment(
    lq: &GeneralLQSpec,
    population_sizes: &[usize],
    reps: usize,
    seed: u64,
) -> Result<LdpReport> {
    lq.validate()?;
    if population_sizes.is_empty() {
        return Err(Error::InvalidSpec {
            reason: "planner experiment needs at least one population size".into(),
        });
    }
    if reps < 100 {
        return Err(Error::InvalidSpec {
            reason: format!("planner experiment needs at least 100 replications, got {reps}"),
        });
    }
    let sol = solve_coop(lq, COOP_EXPERIMENT_STEPS)?;
    let target = coop_target();
    let oracle = coop_rate_oracle(&sol, &target)?;
    let mut rows = Vec::new();
    let mut coupled: Vec<(usize, Vec<f64>)> = Vec::with_capacity(population_sizes.len());
    for (idx, &n) in population_sizes.iter().enumerate() {
        let tag = idx as u64;
        let aux_means = coop_auxiliary_terminal_means(&sol, n, reps, derive_seed(seed, 10, tag))?;
        let aux =
            laplace_from_terminal_means(&target, n, &aux_means, 1000, derive_seed(seed, 11, tag))?;
        let eq_means = planner_terminal_means(&sol, n, reps, derive_seed(seed, 12, tag))?;
        let eq =
            laplace_from_terminal_means(&target, n, &eq_means, 1000, derive_seed(seed, 13, tag))?;
        for (kind, est) in [("coop_laplace_aux", aux), ("coop_laplace_eq", eq)] {
            rows.push(LdpRow {
                kind: kind.into(),
                n,
                delta_or_f: target.label(),
                estimate: est.estimate,
                ci_lo: est.ci_lo,
                ci_hi: est.ci_hi,
                oracle: oracle.value,
                slope_n: f64::NAN,
                slope_n2: f64::NAN,
                r2: f64::NAN,
            });
        }
        let chaos = coop_chaos_sup_w2_samples(&sol, n, reps, derive_seed(seed, 14, tag))?;
        let scaled: Vec<f64> = chaos.iter().map(|w| n as f64 * w * w).collect();
        let median = percentile(&scaled, 0.5);
        let (ci_lo, ci_hi) =
            bootstrap_ci(&scaled, |s| percentile(s, 0.5), 400, derive_seed(seed, 15, tag), 0.95);
        rows.push(LdpRow {
            kind: "coop_chaos".into(),
            n,
            delta_or_f: f64::NAN,
            estimate: median,
            ci_lo,
            ci_hi,
            oracle: f64::NAN,
            slope_n: f64::NAN,
            slope_n2: f64::NAN,
            r2: f64::NAN,
        });
        let pairs = coop_coupled_sup_w2_samples(&sol, n, reps, derive_seed(seed, 16, tag))?;
        coupled.push((n, pairs));
    }
    match fit_tail_from_samples(&coupled, &COOP_TAIL_DELTAS) {
        Ok(report) => rows.extend(report.to_rows("coop_tail")),
        Err(Error::AllZeroEvents) => {
            for &delta in COOP_TAIL_DELTAS.iter() {
                for &(n, _) in &coupled {
                    rows.push(LdpRow {
                        kind: "coop_tail".into(),
                        n,
                        delta_or_f: delta,
                        estimate: 0.0,
                        ci_lo: 0.0,
                        ci_hi: 0.0,
                        oracle: f64::NAN,
                        slope_n: f64::NAN,
                        slope_n2: f64::NAN,
                        r2: f64::NAN,
                    });
                }
            }
        }
        Err(other) => return Err(other),
    }
    Ok(LdpReport { rows })
}

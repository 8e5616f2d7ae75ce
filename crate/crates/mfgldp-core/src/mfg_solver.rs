//! Limiting mean-field solver: affine decoupling field, mean flow,
//! equilibrium control law, pointwise master-PDE residuals, and a discrete
//! forward-backward oracle.
//!
//! For the supported quadratic families the decoupling field closes on the
//! affine form `V(t, x, mu) = p(t)*x + r(t)*mean(mu) + s(t)`. Substituting
//! that ansatz into the master PDE and matching the `x` coefficient, the mean
//! coefficient, and the constant term yields three backward ODEs:
//!
//! ```text
//! p' = -[ by*p^2 + (bx + fy)*p + fx ]
//! r' = -[ p*(by*r + bm + bmy*(p + r)) + fy*r + fm + fmy*(p + r)
//!         + r*(bx + bm) + r*(by + bmy)*(p + r) ]
//! s' = -[ (p + r)*((by + bmy)*s + b0) + (fy + fmy)*s + f0 ]
//! ```
//!
//! in terms of the affine system maps of [`crate::model::FbsdeMaps`], with
//! terminal data `(gx, gm, 0)`. The same integrator serves the cooperative
//! planner problem with different maps.

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::model::{
    coefficient_derivatives, eval_lambda, lambda_coeffs, mfg_maps, FbsdeMaps, GameSpec,
    MeasureSummary,
};

/// Magnitude above which backward coefficient integration is declared to
/// have blown up.
pub const BLOWUP_LIMIT: f64 = 1e12;

/// Two-point Hermite cubic value on an interval of length `h` with endpoint
/// values `v0, v1` and endpoint derivatives `d0, d1`, at fraction `tau`.
pub(crate) fn hermite_value(v0: f64, d0: f64, v1: f64, d1: f64, h: f64, tau: f64) -> f64 {
    let t2 = tau * tau;
    let t3 = t2 * tau;
    (2.0 * t3 - 3.0 * t2 + 1.0) * v0
        + (t3 - 2.0 * t2 + tau) * h * d0
        + (-2.0 * t3 + 3.0 * t2) * v1
        + (t3 - t2) * h * d1
}

/// Time derivative of [`hermite_value`] at fraction `tau`.
pub(crate) fn hermite_deriv(v0: f64, d0: f64, v1: f64, d1: f64, h: f64, tau: f64) -> f64 {
    let t2 = tau * tau;
    (6.0 * t2 - 6.0 * tau) * (v0 - v1) / h
        + (3.0 * t2 - 4.0 * tau + 1.0) * d0
        + (3.0 * t2 - 2.0 * tau) * d1
}

/// Affine decoupling field `V(t, x, mu) = p(t)*x + r(t)*mean(mu) + s(t)` on
/// a uniform grid, carrying the ODE right-hand-side values at each node so
/// the field (and its exact time derivative) can be evaluated anywhere in
/// `[0, T]` by piecewise cubic Hermite interpolation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineField {
    grid: TimeGrid,
    p: Vec<f64>,
    r: Vec<f64>,
    s: Vec<f64>,
    dp: Vec<f64>,
    dr: Vec<f64>,
    ds: Vec<f64>,
}

impl AffineField {
    /// Field with time-constant coefficients (zero time derivatives); used
    /// for closed-form instances and tests.
    pub fn from_constant_coeffs(t_end: f64, steps: usize, p: f64, r: f64, s: f64) -> AffineField {
        let grid = TimeGrid::new(t_end, steps).expect("valid constant-field grid");
        let n = grid.num_nodes();
        AffineField {
            grid,
            p: vec![p; n],
            r: vec![r; n],
            s: vec![s; n],
            dp: vec![0.0; n],
            dr: vec![0.0; n],
            ds: vec![0.0; n],
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Node arrays `(p, r, s)`.
    pub fn node_coeffs(&self) -> (&[f64], &[f64], &[f64]) {
        (&self.p, &self.r, &self.s)
    }

    /// Node arrays of stored ODE right-hand sides `(dp, dr, ds)`.
    pub fn node_derivs(&self) -> (&[f64], &[f64], &[f64]) {
        (&self.dp, &self.dr, &self.ds)
    }

    /// Coefficients `(p, r, s)` at an arbitrary time in `[0, T]`.
    pub fn coeffs_at(&self, t: f64) -> Result<(f64, f64, f64)> {
        let (k, tau) = self.grid.locate(t)?;
        if tau == 0.0 {
            return Ok((self.p[k], self.r[k], self.s[k]));
        }
        let h = self.grid.dt();
        Ok((
            hermite_value(self.p[k], self.dp[k], self.p[k + 1], self.dp[k + 1], h, tau),
            hermite_value(self.r[k], self.dr[k], self.r[k + 1], self.dr[k + 1], h, tau),
            hermite_value(self.s[k], self.ds[k], self.s[k + 1], self.ds[k + 1], h, tau),
        ))
    }

    /// Time derivatives `(p', r', s')` of the interpolated coefficients.
    pub fn coeff_derivs_at(&self, t: f64) -> Result<(f64, f64, f64)> {
        let (k, tau) = self.grid.locate(t)?;
        if tau == 0.0 {
            return Ok((self.dp[k], self.dr[k], self.ds[k]));
        }
        let h = self.grid.dt();
        Ok((
            hermite_deriv(self.p[k], self.dp[k], self.p[k + 1], self.dp[k + 1], h, tau),
            hermite_deriv(self.r[k], self.dr[k], self.r[k + 1], self.dr[k + 1], h, tau),
            hermite_deriv(self.s[k], self.ds[k], self.s[k + 1], self.ds[k + 1], h, tau),
        ))
    }

    /// Field value `V(t, x, mu)` with `mu` summarized by its mean.
    pub fn value(&self, t: f64, x: f64, mean: f64) -> Result<f64> {
        let (p, r, s) = self.coeffs_at(t)?;
        Ok(p * x + r * mean + s)
    }

    /// Largest `|p|` over the grid: Lipschitz constant in the state.
    pub fn lipschitz_x(&self) -> f64 {
        self.p.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    /// Largest `|r|` over the grid: Lipschitz constant in the measure mean.
    pub fn lipschitz_mean(&self) -> f64 {
        self.r.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    /// Largest `|p| + |r|` over the grid: joint Lipschitz constant in
    /// (state, mean) under the sum norm.
    pub fn lipschitz_joint(&self) -> f64 {
        self.p
            .iter()
            .zip(&self.r)
            .fold(0.0_f64, |acc, (p, r)| acc.max(p.abs() + r.abs()))
    }

    /// Writes the field as CSV with columns `t,p,r,s,dp,dr,ds`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("t,p,r,s,dp,dr,ds\n");
        for k in 0..self.grid.num_nodes() {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                self.grid.node(k),
                self.p[k],
                self.r[k],
                self.s[k],
                self.dp[k],
                self.dr[k],
                self.ds[k]
            ));
        }
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        file.write_all(out.as_bytes()).map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(())
    }
}

/// Right-hand side of the three coefficient ODEs for given affine maps.
fn coeff_rhs(maps: &FbsdeMaps, state: [f64; 3]) -> [f64; 3] {
    let [p, r, s] = state;
    let dp = -(maps.by * p * p + (maps.bx + maps.fy) * p + maps.fx);
    let dr = -(p * (maps.by * r + maps.bm + maps.bmy * (p + r))
        + maps.fy * r
        + maps.fm
        + maps.fmy * (p + r)
        + r * (maps.bx + maps.bm)
        + r * (maps.by + maps.bmy) * (p + r));
    let ds = -((p + r) * ((maps.by + maps.bmy) * s + maps.b0) + (maps.fy + maps.fmy) * s + maps.f0);
    [dp, dr, ds]
}

/// Integrates the coefficient ODEs backward from the terminal condition
/// `(gx, gm, 0)` with classical fourth-order Runge-Kutta on a uniform grid.
pub(crate) fn integrate_affine_field(maps: &FbsdeMaps, t_end: f64, steps: usize) -> Result<AffineField> {
    if steps < 2 {
        return Err(Error::InvalidSpec { reason: format!("field grid needs K >= 2, got {steps}") });
    }
    let grid = TimeGrid::new(t_end, steps)?;
    let n = grid.num_nodes();
    let h = grid.dt();
    let mut p = vec![0.0; n];
    let mut r = vec![0.0; n];
    let mut s = vec![0.0; n];
    p[n - 1] = maps.gx;
    r[n - 1] = maps.gm;
    s[n - 1] = 0.0;
    let mut state = [p[n - 1], r[n - 1], s[n - 1]];
    for k in (0..steps).rev() {
        let k1 = coeff_rhs(maps, state);
        let k2 = coeff_rhs(maps, step(state, k1, -0.5 * h));
        let k3 = coeff_rhs(maps, step(state, k2, -0.5 * h));
        let k4 = coeff_rhs(maps, step(state, k3, -h));
        for i in 0..3 {
            state[i] -= h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        let magnitude = state.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        if !magnitude.is_finite() || magnitude > BLOWUP_LIMIT {
            return Err(Error::RiccatiBlowup { t: grid.node(k), magnitude, limit: BLOWUP_LIMIT });
        }
        p[k] = state[0];
        r[k] = state[1];
        s[k] = state[2];
    }
    let mut dp = vec![0.0; n];
    let mut dr = vec![0.0; n];
    let mut ds = vec![0.0; n];
    for k in 0..n {
        let rhs = coeff_rhs(maps, [p[k], r[k], s[k]]);
        dp[k] = rhs[0];
        dr[k] = rhs[1];
        ds[k] = rhs[2];
    }
    Ok(AffineField { grid, p, r, s, dp, dr, ds })
}

fn step(state: [f64; 3], slope: [f64; 3], h: f64) -> [f64; 3] {
    [state[0] + h * slope[0], state[1] + h * slope[1], state[2] + h * slope[2]]
}

/// Solves the decoupling field of the non-cooperative mean-field game on a
/// uniform grid with `K` steps.
pub fn solve_decoupling_field(spec: &GameSpec, k_steps: usize) -> Result<AffineField> {
    spec.validate()?;
    let maps = mfg_maps(spec)?;
    integrate_affine_field(&maps, spec.horizon(), k_steps)
}

/// Mean state and mean equilibrium control along the equilibrium flow.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeanFlow {
    grid: TimeGrid,
    mx: Vec<f64>,
    dmx: Vec<f64>,
    ma: Vec<f64>,
}

impl MeanFlow {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Mean state per node.
    pub fn mx(&self) -> &[f64] {
        &self.mx
    }

    /// Mean equilibrium control per node.
    pub fn ma(&self) -> &[f64] {
        &self.ma
    }

    /// Mean state at an arbitrary time (Hermite interpolation).
    pub fn mean_at(&self, t: f64) -> Result<f64> {
        let (k, tau) = self.grid.locate(t)?;
        if tau == 0.0 {
            return Ok(self.mx[k]);
        }
        Ok(hermite_value(self.mx[k], self.dmx[k], self.mx[k + 1], self.dmx[k + 1], self.grid.dt(), tau))
    }
}

/// Affine coefficients of the mean dynamics induced by averaging the
/// decoupled drift over the current measure: `m' = slope(t)*m + offset(t)`.
pub(crate) fn mean_drift_coeffs(maps: &FbsdeMaps, p: f64, r: f64, s: f64) -> (f64, f64) {
    let slope = maps.bx + maps.bm + (maps.by + maps.bmy) * (p + r);
    let offset = (maps.by + maps.bmy) * s + maps.b0;
    (slope, offset)
}

/// Integrates the mean state forward under the decoupled drift averaged at
/// the mean, then records the mean equilibrium control per node.
pub fn solve_mean_flow(spec: &GameSpec, field: &AffineField) -> Result<MeanFlow> {
    spec.validate()?;
    let maps = mfg_maps(spec)?;
    let lc = lambda_coeffs(spec)?;
    let grid = *field.grid();
    let h = grid.dt();
    let n = grid.num_nodes();
    let rhs = |t: f64, m: f64| -> Result<f64> {
        let (p, r, s) = field.coeffs_at(t)?;
        let (slope, offset) = mean_drift_coeffs(&maps, p, r, s);
        Ok(slope * m + offset)
    };
    let mut mx = vec![0.0; n];
    mx[0] = spec.x0();
    for k in 0..grid.steps() {
        let t = grid.node(k);
        let m = mx[k];
        let k1 = rhs(t, m)?;
        let k2 = rhs(t + 0.5 * h, m + 0.5 * h * k1)?;
        let k3 = rhs(t + 0.5 * h, m + 0.5 * h * k2)?;
        let k4 = rhs(t + h, m + h * k3)?;
        mx[k + 1] = m + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    let (pn, rn, sn) = field.node_coeffs();
    let mut dmx = vec![0.0; n];
    let mut ma = vec![0.0; n];
    for k in 0..n {
        let (slope, offset) = mean_drift_coeffs(&maps, pn[k], rn[k], sn[k]);
        dmx[k] = slope * mx[k] + offset;
        let mean_v = (pn[k] + rn[k]) * mx[k] + sn[k];
        ma[k] = lc.lx * mx[k] + lc.ly * mean_v + lc.lm * mx[k];
    }
    Ok(MeanFlow { grid, mx, dmx, ma })
}

/// Evaluates the full master-PDE expression at each sample `(t, x, meanX)`:
/// the time term from the interpolated coefficient derivatives, the
/// transport term from the decoupled drift, the driver from the model
/// derivative evaluators at the optimal control, and the measure-flow term
/// as `r(t)` times the mean drift.
///
/// Every non-time term is assembled pointwise through the model evaluators
/// rather than through the lowered system maps the integrator consumed, so
/// the check also exercises the lowering itself. Zero for the exact field;
/// the returned signed values measure integration and interpolation error.
pub fn master_pde_residual(
    spec: &GameSpec,
    field: &AffineField,
    samples: &[(f64, f64, f64)],
) -> Result<Vec<f64>> {
    use crate::model::eval_drift_b;
    let mut residuals = Vec::with_capacity(samples.len());
    for &(t, x, mean) in samples {
        let (p, r, s) = field.coeffs_at(t)?;
        let (dp, dr, ds) = field.coeff_derivs_at(t)?;
        let time_term = dp * x + dr * mean + ds;
        let v = p * x + r * mean + s;
        let mean_v = (p + r) * mean + s;
        let mean_control = eval_lambda(spec, t, mean, mean_v, &MeasureSummary::dirac(mean, 0.0))?;
        let xi = MeasureSummary::dirac(mean, mean_control);
        let control = eval_lambda(spec, t, x, v, &xi)?;
        let deriv = coefficient_derivatives(spec, t, x, control, &xi);
        let drift = eval_drift_b(spec, t, x, control, &xi);
        let driver = deriv.dxf + deriv.dxb * v;
        let mean_drift = eval_drift_b(spec, t, mean, mean_control, &xi);
        residuals.push(time_term + drift * p + driver + r * mean_drift);
    }
    Ok(residuals)
}

/// Mean-field equilibrium control at `(t, x)`: the Hamiltonian minimizer
/// evaluated at the field value along the mean flow.
pub fn mfe_control(
    spec: &GameSpec,
    field: &AffineField,
    flow: &MeanFlow,
    t: f64,
    x: f64,
) -> Result<f64> {
    let m = flow.mean_at(t)?;
    let v = field.value(t, x, m)?;
    eval_lambda(spec, t, x, v, &MeasureSummary::dirac(m, 0.0))
}

/// Discrete-time forward-backward solution: per-node affine representation
/// `Y_k = P_k*X_k + R_k*meanX_k + S_k` from an exact backward recursion,
/// plus the induced discrete mean and variance paths.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiscreteFbsdeSolution {
    pub grid: TimeGrid,
    pub p: Vec<f64>,
    pub r: Vec<f64>,
    pub s: Vec<f64>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

/// Solves the discrete forward-backward system by one explicit backward
/// Euler sweep on the affine ansatz.
///
/// Each step takes a conditional expectation of the affine backward
/// component through the forward Euler transition (exact for affine-Gaussian
/// dynamics) and solves three scalar linear equations for the new
/// coefficients. The scheme is deliberately first-order so its distance to
/// the Runge-Kutta field decays at a known rate.
pub fn solve_mkv_fbsde_oracle(spec: &GameSpec, k_steps: usize) -> Result<DiscreteFbsdeSolution> {
    spec.validate()?;
    let maps = mfg_maps(spec)?;
    discrete_fbsde_with_maps(&maps, spec.horizon(), spec.x0(), spec.sigma(), k_steps)
}

/// Backward affine recursion shared with the cooperative oracle.
pub(crate) fn discrete_fbsde_with_maps(
    maps: &FbsdeMaps,
    t_end: f64,
    x0: f64,
    sigma: f64,
    k_steps: usize,
) -> Result<DiscreteFbsdeSolution> {
    if k_steps < 2 {
        return Err(Error::InvalidSpec { reason: format!("oracle grid needs K >= 2, got {k_steps}") });
    }
    let grid = TimeGrid::new(t_end, k_steps)?;
    let n = grid.num_nodes();
    let dt = grid.dt();
    let mut p = vec![0.0; n];
    let mut r = vec![0.0; n];
    let mut s = vec![0.0; n];
    p[n - 1] = maps.gx;
    r[n - 1] = maps.gm;
    s[n - 1] = 0.0;
    for k in (0..k_steps).rev() {
        let (pp, rp, sp) = (p[k + 1], r[k + 1], s[k + 1]);
        let cx = pp + dt * (maps.fx + maps.fy * pp);
        let cm = rp + dt * (maps.fm + maps.fy * rp + maps.fmy * (pp + rp));
        let c0 = sp + dt * ((maps.fy + maps.fmy) * sp + maps.f0);
        let denom_p = 1.0 - dt * cx * maps.by;
        if denom_p.abs() < 1e-10 {
            return Err(Error::SingularStep { step: k, denom: denom_p });
        }
        p[k] = cx * (1.0 + dt * maps.bx) / denom_p;
        let denom_rs = 1.0 - dt * (cx + cm) * (maps.by + maps.bmy);
        if denom_rs.abs() < 1e-10 {
            return Err(Error::SingularStep { step: k, denom: denom_rs });
        }
        r[k] = (cx * dt * (maps.bm + maps.bmy * p[k])
            + cm * (1.0 + dt * (maps.bx + maps.bm) + dt * (maps.by + maps.bmy) * p[k]))
            / denom_rs;
        s[k] = (dt * maps.b0 * (cx + cm) + c0) / denom_rs;
    }
    let mut mean = vec![0.0; n];
    let mut variance = vec![0.0; n];
    mean[0] = x0;
    for k in 0..k_steps {
        let my = (p[k] + r[k]) * mean[k] + s[k];
        mean[k + 1] = mean[k]
            + dt * ((maps.bx + maps.bm) * mean[k] + (maps.by + maps.bmy) * my + maps.b0);
        let gain = 1.0 + dt * (maps.bx + maps.by * p[k]);
        variance[k + 1] = gain * gain * variance[k] + sigma * sigma * dt;
    }
    Ok(DiscreteFbsdeSolution { grid, p, r, s, mean, variance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GeneralLQSpec, SystemicRiskSpec};
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn systemic(a: f64, q: f64, eps: f64, c: f64, t_end: f64) -> GameSpec {
        GameSpec::SystemicRisk(SystemicRiskSpec { a, q, eps, c, sigma: 1.0, T: t_end, x0: 0.0 })
    }

    fn default_systemic() -> GameSpec {
        systemic(0.5, 0.8, 1.0, 0.5, 0.5)
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

    /// Closed-form solution of the systemic-risk state-slope Riccati ODE
    /// `p' = p^2 + 2(a+q) p + (q^2 - eps)`, `p(T) = c`, used as an
    /// independent oracle for the integrator.
    fn systemic_p_closed_form(a: f64, q: f64, eps: f64, c: f64, t_end: f64, t: f64) -> f64 {
        let d = (a * a + 2.0 * a * q + eps).sqrt();
        let wt = c + a + q;
        let theta_t = (wt - d) / (wt + d);
        let theta = theta_t * (2.0 * d * (t - t_end)).exp();
        -(a + q) + d * (1.0 + theta) / (1.0 - theta)
    }

    #[test]
    fn zero_cost_field_is_identically_zero() {
        let spec = systemic(0.7, 0.0, 0.0, 0.0, 1.0);
        let field = solve_decoupling_field(&spec, 64).unwrap();
        let (p, r, s) = field.node_coeffs();
        for k in 0..field.grid().num_nodes() {
            assert_eq!(p[k], 0.0);
            assert_eq!(r[k], 0.0);
            assert_eq!(s[k], 0.0);
        }
        assert_eq!(field.value(0.3, 2.0, -1.0).unwrap(), 0.0);
    }

    #[test]
    fn terminal_conditions_match_the_terminal_cost_gradient() {
        let field = solve_decoupling_field(&default_systemic(), 32).unwrap();
        let (p, r, s) = field.node_coeffs();
        let last = field.grid().num_nodes() - 1;
        assert_eq!(p[last], 0.5);
        assert_eq!(r[last], -0.5);
        assert_eq!(s[last], 0.0);

        let lq_field = solve_decoupling_field(&default_lq(), 32).unwrap();
        let (p, r, s) = lq_field.node_coeffs();
        assert_eq!(p[last], 1.0);
        assert_eq!(r[last], 0.0);
        assert_eq!(s[last], 0.0);
    }

    #[test]
    fn systemic_slope_matches_closed_form_riccati_solution() {
        let (a, q, eps, c, t_end) = (0.5, 0.8, 1.0, 0.5, 0.5);
        let field = solve_decoupling_field(&systemic(a, q, eps, c, t_end), 4000).unwrap();
        let (p, _, _) = field.node_coeffs();
        for &(k, t) in [(0usize, 0.0), (2000, 0.25), (4000, 0.5)].iter() {
            let exact = systemic_p_closed_form(a, q, eps, c, t_end, t);
            assert_abs_diff_eq!(p[k], exact, epsilon = 1e-10);
        }
    }

    #[test]
    fn integrator_converges_at_fourth_order_against_closed_form() {
        let (a, q, eps, c, t_end) = (0.5, 0.8, 1.0, 0.5, 0.5);
        let exact = systemic_p_closed_form(a, q, eps, c, t_end, 0.0);
        let err = |k: usize| {
            let field = solve_decoupling_field(&systemic(a, q, eps, c, t_end), k).unwrap();
            (field.node_coeffs().0[0] - exact).abs()
        };
        let (e1, e2, e3) = (err(8), err(16), err(32));
        let ratio1 = e1 / e2;
        let ratio2 = e2 / e3;
        assert!((10.0..24.0).contains(&ratio1), "ratio {ratio1} (errors {e1:.3e}, {e2:.3e})");
        assert!((10.0..24.0).contains(&ratio2), "ratio {ratio2} (errors {e2:.3e}, {e3:.3e})");
    }

    #[test]
    fn systemic_mean_coefficient_cancels_the_state_slope() {
        // For the mean-reverting family the field applied at the mean
        // vanishes: r = -p and s = 0 along the whole trajectory.
        let field = solve_decoupling_field(&default_systemic(), 512).unwrap();
        let (p, r, s) = field.node_coeffs();
        for k in 0..field.grid().num_nodes() {
            assert_abs_diff_eq!(p[k] + r[k], 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(s[k], 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn blowup_is_reported_with_its_time() {
        // Strongly anti-dissipative instance: the state-slope Riccati
        // equation escapes in finite time going backward.
        let spec = GameSpec::GeneralLq(GeneralLQSpec {
            A: 0.0,
            Abar: 0.0,
            B: 30.0,
            Bbar: 0.0,
            Q: -30.0,
            Qbar: 0.0,
            R: 0.5,
            Rbar: 0.0,
            Sbar: 0.0,
            QT: 30.0,
            QbarT: 0.0,
            sigma: 1.0,
            T: 4.0,
            x0: 0.0,
        });
        match solve_decoupling_field(&spec, 4000) {
            Err(Error::RiccatiBlowup { t, magnitude, .. }) => {
                assert!(t < spec.horizon());
                assert!(magnitude > BLOWUP_LIMIT);
            }
            other => panic!("expected blow-up, got {other:?}"),
        }
    }

    #[test]
    fn systemic_mean_flow_is_constant() {
        let spec = default_systemic();
        let field = solve_decoupling_field(&spec, 256).unwrap();
        let flow = solve_mean_flow(&spec, &field).unwrap();
        for &m in flow.mx() {
            assert_abs_diff_eq!(m, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn mean_flow_matches_fine_forward_euler_oracle() {
        let spec = default_lq();
        let field = solve_decoupling_field(&spec, 512).unwrap();
        let flow = solve_mean_flow(&spec, &field).unwrap();
        // Independent oracle: forward Euler with 10^5 steps on the same
        // averaged drift, evaluated through the interpolated field.
        let maps = mfg_maps(&spec).unwrap();
        let steps = 100_000;
        let h = spec.horizon() / steps as f64;
        let mut m = spec.x0();
        for k in 0..steps {
            let (p, r, s) = field.coeffs_at(k as f64 * h).unwrap();
            let (slope, offset) = mean_drift_coeffs(&maps, p, r, s);
            m += h * (slope * m + offset);
        }
        let last = flow.mx()[flow.grid().num_nodes() - 1];
        assert_abs_diff_eq!(last, m, epsilon = 1e-4);
        assert!((last - m).abs() > 0.0, "flows should differ only by scheme error");
        assert_abs_diff_eq!(flow.mx()[0], spec.x0());
    }

    #[test]
    fn mean_control_is_lambda_at_the_mean() {
        let spec = default_lq();
        let field = solve_decoupling_field(&spec, 128).unwrap();
        let flow = solve_mean_flow(&spec, &field).unwrap();
        let last = flow.grid().num_nodes() - 1;
        let t = flow.grid().t_end();
        let m = flow.mx()[last];
        let v = field.value(t, m, m).unwrap();
        let lam = eval_lambda(&spec, t, m, v, &MeasureSummary::dirac(m, 0.0)).unwrap();
        assert_abs_diff_eq!(flow.ma()[last], lam, epsilon = 1e-13);
    }

    fn residual_samples(spec: &GameSpec, count: usize, seed: u64) -> Vec<(f64, f64, f64)> {
        (0..count)
            .map(|i| {
                let draw = |slot: u64| crate::rng::standard_normal(seed, i as u64, slot);
                let t = spec.horizon() * 0.5 * (1.0 + draw(0).tanh());
                let x = 3.0 * draw(1).tanh();
                let m = 3.0 * draw(2).tanh();
                (t, x, m)
            })
            .collect()
    }

    #[test]
    fn pde_residual_is_zero_for_zero_cost_and_tiny_for_default() {
        let zero = systemic(0.4, 0.0, 0.0, 0.0, 0.5);
        let field = solve_decoupling_field(&zero, 64).unwrap();
        for res in master_pde_residual(&zero, &field, &residual_samples(&zero, 20, 5)).unwrap() {
            assert_eq!(res, 0.0);
        }

        for spec in [default_systemic(), default_lq()] {
            let field = solve_decoupling_field(&spec, 4000).unwrap();
            let res = master_pde_residual(&spec, &field, &residual_samples(&spec, 100, 7)).unwrap();
            let max = res.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            assert!(max <= 1e-8, "max residual {max:.3e}");
        }
    }

    #[test]
    fn pde_residual_at_nodes_is_round_off() {
        let spec = default_systemic();
        let field = solve_decoupling_field(&spec, 100).unwrap();
        let samples: Vec<(f64, f64, f64)> = (0..=10)
            .map(|k| (field.grid().node(k * 10), 1.3, -0.4))
            .collect();
        for res in master_pde_residual(&spec, &field, &samples).unwrap() {
            assert!(res.abs() < 1e-13, "node residual {res:.3e}");
        }
    }

    #[test]
    fn pde_residual_decays_at_third_order_between_nodes() {
        let spec = default_systemic();
        let samples = residual_samples(&spec, 400, 11);
        let mean_abs = |k: usize| {
            let field = solve_decoupling_field(&spec, k).unwrap();
            let res = master_pde_residual(&spec, &field, &samples).unwrap();
            res.iter().map(|v| v.abs()).sum::<f64>() / res.len() as f64
        };
        let errs: Vec<f64> = [125usize, 250, 500, 1000].iter().map(|&k| mean_abs(k)).collect();
        let xs: Vec<f64> = [125.0f64, 250.0, 500.0, 1000.0].iter().map(|k| k.log2()).collect();
        let ys: Vec<f64> = errs.iter().map(|e| e.log2()).collect();
        let fit = crate::stats::linear_fit(&xs, &ys);
        assert!(fit.slope <= -2.9, "observed order {:.3} too low ({errs:?})", -fit.slope);
    }

    #[test]
    fn mfe_control_composes_field_and_flow() {
        let spec = default_systemic();
        let field = solve_decoupling_field(&spec, 512).unwrap();
        let flow = solve_mean_flow(&spec, &field).unwrap();
        let (t, x) = (0.21, 1.4);
        let m = flow.mean_at(t).unwrap();
        let (p, r, s) = field.coeffs_at(t).unwrap();
        let q = 0.8;
        let expected = q * (m - x) - (p * x + r * m + s);
        assert_abs_diff_eq!(mfe_control(&spec, &field, &flow, t, x).unwrap(), expected, epsilon = 1e-13);

        let zero = systemic(0.4, 0.0, 0.0, 0.0, 0.5);
        let zfield = solve_decoupling_field(&zero, 64).unwrap();
        let zflow = solve_mean_flow(&zero, &zfield).unwrap();
        assert_eq!(mfe_control(&zero, &zfield, &zflow, 0.2, 5.0).unwrap(), 0.0);
    }

    #[test]
    fn discrete_oracle_zero_cost_is_zero_and_terminal_exact() {
        let zero = systemic(0.7, 0.0, 0.0, 0.0, 0.5);
        let sol = solve_mkv_fbsde_oracle(&zero, 32).unwrap();
        assert!(sol.p.iter().all(|v| *v == 0.0));
        assert!(sol.r.iter().all(|v| *v == 0.0));
        assert!(sol.s.iter().all(|v| *v == 0.0));

        let spec = default_systemic();
        let sol = solve_mkv_fbsde_oracle(&spec, 32).unwrap();
        let last = sol.grid.num_nodes() - 1;
        assert_eq!(sol.p[last], 0.5);
        assert_eq!(sol.r[last], -0.5);
        assert_eq!(sol.s[last], 0.0);
    }

    #[test]
    fn discrete_oracle_converges_to_the_field_at_first_order() {
        for spec in [default_systemic(), default_lq()] {
            let reference = solve_decoupling_field(&spec, 8000).unwrap();
            let (p_ref, r_ref, s_ref) = reference.node_coeffs();
            let (p0, r0, s0) = (p_ref[0], r_ref[0], s_ref[0]);
            let err = |k: usize| {
                let sol = solve_mkv_fbsde_oracle(&spec, k).unwrap();
                (sol.p[0] - p0).abs().max((sol.r[0] - r0).abs()).max((sol.s[0] - s0).abs())
            };
            let (e1, e2, e3) = (err(500), err(1000), err(2000));
            let (ratio1, ratio2) = (e1 / e2, e2 / e3);
            assert!((1.6..2.4).contains(&ratio1), "first-order ratio {ratio1} ({e1:.3e}/{e2:.3e})");
            assert!((1.6..2.4).contains(&ratio2), "first-order ratio {ratio2} ({e2:.3e}/{e3:.3e})");
        }
    }

    #[test]
    fn discrete_oracle_control_matches_mfe_control_at_start() {
        let spec = default_lq();
        let k = 2000;
        let field = solve_decoupling_field(&spec, 4000).unwrap();
        let flow = solve_mean_flow(&spec, &field).unwrap();
        let sol = solve_mkv_fbsde_oracle(&spec, k).unwrap();
        let x0 = spec.x0();
        let y0 = sol.p[0] * x0 + sol.r[0] * x0 + sol.s[0];
        let oracle_control =
            eval_lambda(&spec, 0.0, x0, y0, &MeasureSummary::dirac(x0, 0.0)).unwrap();
        let continuous = mfe_control(&spec, &field, &flow, 0.0, x0).unwrap();
        let gap = (oracle_control - continuous).abs();
        assert!(gap < 5.0 / k as f64, "control gap {gap:.3e} too large for K = {k}");
    }

    #[test]
    fn field_csv_has_expected_header_and_rows() {
        let spec = default_systemic();
        let field = solve_decoupling_field(&spec, 16).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("field.csv");
        field.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,p,r,s,dp,dr,ds");
        assert_eq!(text.lines().count(), 18);
        let first = lines.next().unwrap();
        assert!(first.starts_with("0,"));
        assert_eq!(first.split(',').count(), 7);
    }

    #[test]
    fn interpolation_respects_domain_bounds() {
        let field = AffineField::from_constant_coeffs(1.0, 8, 0.2, -0.1, 0.05);
        assert!(field.coeffs_at(1.0000001).is_ok());
        assert!(matches!(field.coeffs_at(1.1), Err(Error::FieldDomainError { .. })));
        assert!(matches!(field.coeffs_at(-0.1), Err(Error::FieldDomainError { .. })));
        let (p, r, s) = field.coeffs_at(0.333).unwrap();
        assert_relative_eq!(p, 0.2);
        assert_relative_eq!(r, -0.1);
        assert_relative_eq!(s, 0.05);
        assert_eq!(field.lipschitz_x(), 0.2);
        assert_eq!(field.lipschitz_mean(), 0.1);
        assert_relative_eq!(field.lipschitz_joint(), 0.3);
    }

    #[test]
    fn hermite_interpolation_reproduces_cubics_exactly() {
        // v(t) = t^3 - 2t^2 + 3t - 1 on [2, 2.5].
        let f = |t: f64| t * t * t - 2.0 * t * t + 3.0 * t - 1.0;
        let df = |t: f64| 3.0 * t * t - 4.0 * t + 3.0;
        let (t0, h) = (2.0, 0.5);
        for tau in [0.0, 0.25, 0.5, 0.9, 1.0] {
            let t = t0 + tau * h;
            let v = hermite_value(f(t0), df(t0), f(t0 + h), df(t0 + h), h, tau);
            let d = hermite_deriv(f(t0), df(t0), f(t0 + h), df(t0 + h), h, tau);
            assert_relative_eq!(v, f(t), epsilon = 1e-12);
            assert_relative_eq!(d, df(t), epsilon = 1e-12);
        }
    }
}

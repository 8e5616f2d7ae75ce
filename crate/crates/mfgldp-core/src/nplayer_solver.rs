//! Finite-population Nash solver.
//!
//! With `N` exchangeable players the open-loop adjoint matrix
//! `Y^{ij} = (gradient of player i's value in player j's state)` closes on
//! the symmetric affine form
//!
//! ```text
//! Y^{ij} = delta_ij * (a*x_i + b*xbar + e)
//!        + (1 - delta_ij) * (1/N) * (c*x_i + c'*x_j + f*xbar + g)
//! ```
//!
//! Coefficient matching of the adjoint dynamics against the population drift
//! and the state gradient of each Hamiltonian yields seven backward ODEs,
//! solved here with Runge-Kutta. A probe re-assembles the matched relation
//! pointwise from the model evaluators at random population states during
//! the solve and fails loudly on disagreement.
//!
//! An independent dynamic-programming oracle ([`brute_force_discrete_nash`])
//! carries full unsymmetrized affine maps for every matrix entry through an
//! explicit first-order backward sweep, for cross-validation at small `N`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::mfg_solver::{hermite_deriv, hermite_value};
use crate::model::{coefficient_derivatives, eval_drift_b, GameSpec, MeasureSummary, QuadCoeffs};
use crate::rng::{derive_seed, standard_normal};
use crate::stats::linear_fit;

/// Largest population size accepted by the dynamic-programming oracle.
pub const BRUTE_FORCE_PLAYER_LIMIT: usize = 8;
/// Largest step count accepted by the dynamic-programming oracle.
pub const BRUTE_FORCE_STEP_LIMIT: usize = 100_000;

const NUM_COEFFS: usize = 7;
const IDX_A: usize = 0;
const IDX_B: usize = 1;
const IDX_E: usize = 2;
const IDX_C: usize = 3;
const IDX_CP: usize = 4;
const IDX_F: usize = 5;
const IDX_G: usize = 6;

/// Snapshot of the seven ansatz coefficients at one time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NPlayerCoeffs {
    pub a: f64,
    pub b: f64,
    pub e: f64,
    pub c: f64,
    pub cp: f64,
    pub f: f64,
    pub g: f64,
}

impl NPlayerCoeffs {
    fn from_array(v: [f64; NUM_COEFFS]) -> Self {
        NPlayerCoeffs { a: v[IDX_A], b: v[IDX_B], e: v[IDX_E], c: v[IDX_C], cp: v[IDX_CP], f: v[IDX_F], g: v[IDX_G] }
    }

    /// Matrix entry `Y^{ij}` for a concrete population state.
    pub fn y_entry(&self, n: usize, i: usize, j: usize, states: &[f64]) -> f64 {
        let xbar = states.iter().sum::<f64>() / n as f64;
        self.y_entry_with_mean(n, i, j, states[i], states[j], xbar)
    }

    /// Same adjoint entry with the population mean supplied by the caller,
    /// so row sums over large populations stay linear in `n`.
    pub fn y_entry_with_mean(
        &self,
        n: usize,
        i: usize,
        j: usize,
        x_i: f64,
        x_j: f64,
        xbar: f64,
    ) -> f64 {
        if i == j {
            self.a * x_i + self.b * xbar + self.e
        } else {
            (self.c * x_i + self.cp * x_j + self.f * xbar + self.g) / n as f64
        }
    }

    /// Coefficients `(Sx, Sm, S0)` of the row sum
    /// `sum_j Y^{ij} = Sx*x_i + Sm*xbar + S0`.
    pub fn row_sums(&self, n: usize) -> (f64, f64, f64) {
        let nf = n as f64;
        let sx = self.a + ((nf - 1.0) * self.c - self.cp) / nf;
        let sm = self.b + self.cp + (nf - 1.0) * self.f / nf;
        let s0 = self.e + (nf - 1.0) * self.g / nf;
        (sx, sm, s0)
    }
}

/// Equilibrium feedback `alpha_i = lx*x_i + lm*xbar + l0` for the
/// finite-population game, obtained by solving every player's first-order
/// condition simultaneously (the control mean appears in each condition and
/// is eliminated by averaging).
fn feedback_from(qc: &QuadCoeffs, n: usize, co: &NPlayerCoeffs) -> Result<(f64, f64, f64)> {
    if qc.faa <= 0.0 {
        return Err(Error::NonConvexHamiltonian { coeff: qc.faa });
    }
    let nf = n as f64;
    let (sx, sm, s0) = co.row_sums(n);
    let lx = -(qc.fax + qc.ba * co.a + (qc.fxn + qc.bn * sx) / nf) / qc.faa;
    let lm_pre = -(qc.fam + qc.ba * co.b + qc.bn * sm / nf) / qc.faa;
    let l0_pre = -(qc.ba * co.e + qc.bn * s0 / nf) / qc.faa;
    let l_abar = -qc.fnn / (nf * qc.faa);
    let denom = 1.0 - l_abar;
    if denom.abs() < 1e-12 {
        return Err(Error::SingularFeedback { denom });
    }
    let lm = lm_pre + l_abar * (lx + lm_pre) / denom;
    let l0 = l0_pre / denom;
    Ok((lx, lm, l0))
}

/// Population drift slopes under the equilibrium feedback:
/// `drift_i = dx*x_i + dm*xbar + d0`.
fn drift_from(qc: &QuadCoeffs, feedback: (f64, f64, f64)) -> (f64, f64, f64) {
    let (lx, lm, l0) = feedback;
    let dx = qc.bx + qc.ba * lx;
    let dm = qc.bm + qc.ba * lm + qc.bn * (lx + lm);
    let d0 = (qc.ba + qc.bn) * l0;
    (dx, dm, d0)
}

fn coeff_rhs(qc: &QuadCoeffs, n: usize, state: [f64; NUM_COEFFS]) -> Result<[f64; NUM_COEFFS]> {
    let nf = n as f64;
    let co = NPlayerCoeffs::from_array(state);
    let (sx, sm, s0) = co.row_sums(n);
    let (lx, lm, l0) = feedback_from(qc, n, &co)?;
    let (dx, dm, d0) = drift_from(qc, (lx, lm, l0));
    let mut out = [0.0; NUM_COEFFS];
    out[IDX_A] = -(co.a * (dx + qc.bx)
        + qc.fax * lx
        + qc.fxx
        + (qc.fam * lx + qc.fxm + qc.bm * sx) / nf);
    out[IDX_B] = -(co.a * dm
        + co.b * (dx + dm + qc.bx)
        + qc.fax * lm
        + qc.fxm
        + qc.fxn * (lx + lm)
        + (qc.fam * lm + qc.fmm + qc.bm * sm) / nf);
    out[IDX_E] = -((co.a + co.b) * d0
        + (qc.fax + qc.fxn + qc.fam / nf) * l0
        + qc.bx * co.e
        + qc.bm * s0 / nf);
    out[IDX_C] = -(co.c * (dx + qc.bx) + qc.fam * lx + qc.fxm + qc.bm * sx);
    out[IDX_CP] = -(co.cp * (dx + qc.bx));
    out[IDX_F] = -(co.f * dx
        + dm * (co.c + co.cp + co.f)
        + qc.fam * lm
        + qc.fmm
        + qc.bx * co.f
        + qc.bm * sm);
    out[IDX_G] = -((co.c + co.cp + co.f) * d0 + qc.fam * l0 + qc.bx * co.g + qc.bm * s0);
    Ok(out)
}

/// Adjoint-matrix coefficients of the `N`-player Nash equilibrium on a
/// uniform grid, with stored right-hand sides for Hermite interpolation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NPlayerField {
    n: usize,
    grid: TimeGrid,
    qc: QuadCoeffs,
    coef: Vec<[f64; NUM_COEFFS]>,
    dcoef: Vec<[f64; NUM_COEFFS]>,
}

impl NPlayerField {
    pub fn n_players(&self) -> usize {
        self.n
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Coefficient snapshot at node `k`.
    pub fn node_coeffs(&self, k: usize) -> NPlayerCoeffs {
        NPlayerCoeffs::from_array(self.coef[k])
    }

    /// Coefficient snapshot at an arbitrary time (Hermite interpolation).
    pub fn coeffs_at(&self, t: f64) -> Result<NPlayerCoeffs> {
        let (k, tau) = self.grid.locate(t)?;
        if tau == 0.0 {
            return Ok(self.node_coeffs(k));
        }
        let h = self.grid.dt();
        let mut v = [0.0; NUM_COEFFS];
        for (idx, slot) in v.iter_mut().enumerate() {
            *slot = hermite_value(
                self.coef[k][idx],
                self.dcoef[k][idx],
                self.coef[k + 1][idx],
                self.dcoef[k + 1][idx],
                h,
                tau,
            );
        }
        Ok(NPlayerCoeffs::from_array(v))
    }

    /// Time derivatives of the seven coefficients at an arbitrary time.
    pub fn coeff_derivs_at(&self, t: f64) -> Result<NPlayerCoeffs> {
        let (k, tau) = self.grid.locate(t)?;
        if tau == 0.0 {
            return Ok(NPlayerCoeffs::from_array(self.dcoef[k]));
        }
        let h = self.grid.dt();
        let mut v = [0.0; NUM_COEFFS];
        for (idx, slot) in v.iter_mut().enumerate() {
            *slot = hermite_deriv(
                self.coef[k][idx],
                self.dcoef[k][idx],
                self.coef[k + 1][idx],
                self.dcoef[k + 1][idx],
                h,
                tau,
            );
        }
        Ok(NPlayerCoeffs::from_array(v))
    }

    /// Feedback slopes `(lx, lm, l0)` at node `k`.
    pub fn feedback_at_node(&self, k: usize) -> Result<(f64, f64, f64)> {
        feedback_from(&self.qc, self.n, &self.node_coeffs(k))
    }

    /// Feedback slopes `(lx, lm, l0)` at an arbitrary time.
    pub fn feedback_at(&self, t: f64) -> Result<(f64, f64, f64)> {
        feedback_from(&self.qc, self.n, &self.coeffs_at(t)?)
    }

    /// Equilibrium control of player `i` at node `k` for a concrete state.
    pub fn control_at_node(&self, k: usize, i: usize, states: &[f64]) -> Result<f64> {
        let (lx, lm, l0) = self.feedback_at_node(k)?;
        let xbar = states.iter().sum::<f64>() / self.n as f64;
        Ok(lx * states[i] + lm * xbar + l0)
    }
}

/// Pointwise re-assembly of the matched adjoint relation at a random
/// population state: time derivative of the ansatz entry, plus its state
/// gradient contracted with each player's drift, plus the state gradient of
/// the owning player's Hamiltonian. Vanishes when the coefficient ODEs are
/// the correct matching.
fn ansatz_relation_residual(
    spec: &GameSpec,
    qc: &QuadCoeffs,
    n: usize,
    co: &NPlayerCoeffs,
    dco: &NPlayerCoeffs,
    t: f64,
    states: &[f64],
    i: usize,
    j: usize,
) -> Result<(f64, f64)> {
    let nf = n as f64;
    let xbar = states.iter().sum::<f64>() / nf;
    let (lx, lm, l0) = feedback_from(qc, n, co)?;
    let controls: Vec<f64> = states.iter().map(|x| lx * x + lm * xbar + l0).collect();
    let xi = MeasureSummary::from_samples(states, &controls);

    let ddt = if i == j {
        dco.a * states[i] + dco.b * xbar + dco.e
    } else {
        (dco.c * states[i] + dco.cp * states[j] + dco.f * xbar + dco.g) / nf
    };

    let mut transport = 0.0;
    for (k, (&xk, &ak)) in states.iter().zip(&controls).enumerate() {
        let grad = if i == j {
            (if k == i { co.a } else { 0.0 }) + co.b / nf
        } else {
            let own = if k == i { co.c } else { 0.0 };
            let other = if k == j { co.cp } else { 0.0 };
            (own + other) / nf + co.f / (nf * nf)
        };
        transport += grad * eval_drift_b(spec, t, xk, ak, &xi);
    }

    let y_ij = co.y_entry_with_mean(n, i, j, states[i], states[j], xbar);
    let mut row_sum = 0.0;
    for l in 0..n {
        row_sum += co.y_entry_with_mean(n, i, l, states[i], states[l], xbar);
    }
    let deriv = coefficient_derivatives(spec, t, states[i], controls[i], &xi);
    let mut hamiltonian_grad = qc.bx * y_ij + qc.bm / nf * row_sum + deriv.dmuf / nf;
    if i == j {
        hamiltonian_grad += deriv.dxf;
    }

    let residual = ddt + transport + hamiltonian_grad;
    let scale = 1.0 + ddt.abs() + transport.abs() + hamiltonian_grad.abs();
    Ok((residual, scale))
}

/// Solves the seven coefficient ODEs backward with classical Runge-Kutta
/// and verifies the affine matrix ansatz pointwise along the way.
pub fn solve_nplayer_nash(spec: &GameSpec, n: usize, k_steps: usize) -> Result<NPlayerField> {
    spec.validate()?;
    if n < 2 {
        return Err(Error::InvalidSpec { reason: format!("need at least 2 players, got {n}") });
    }
    if k_steps < 2 {
        return Err(Error::InvalidSpec { reason: format!("field grid needs K >= 2, got {k_steps}") });
    }
    let qc = spec.coeffs();
    let grid = TimeGrid::new(spec.horizon(), k_steps)?;
    let nodes = grid.num_nodes();
    let h = grid.dt();
    let nf = n as f64;

    let mut coef = vec![[0.0; NUM_COEFFS]; nodes];
    coef[nodes - 1] = {
        let mut terminal = [0.0; NUM_COEFFS];
        terminal[IDX_A] = qc.gxx + qc.gxm / nf;
        terminal[IDX_B] = qc.gxm + qc.gmm / nf;
        terminal[IDX_E] = 0.0;
        terminal[IDX_C] = qc.gxm;
        terminal[IDX_CP] = 0.0;
        terminal[IDX_F] = qc.gmm;
        terminal[IDX_G] = 0.0;
        terminal
    };

    let mut state = coef[nodes - 1];
    for k in (0..k_steps).rev() {
        let k1 = coeff_rhs(&qc, n, state)?;
        let k2 = coeff_rhs(&qc, n, add(state, k1, -0.5 * h))?;
        let k3 = coeff_rhs(&qc, n, add(state, k2, -0.5 * h))?;
        let k4 = coeff_rhs(&qc, n, add(state, k3, -h))?;
        for idx in 0..NUM_COEFFS {
            state[idx] -= h / 6.0 * (k1[idx] + 2.0 * k2[idx] + 2.0 * k3[idx] + k4[idx]);
        }
        let magnitude = state.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        if !magnitude.is_finite() || magnitude > crate::mfg_solver::BLOWUP_LIMIT {
            return Err(Error::RiccatiBlowup {
                t: grid.node(k),
                magnitude,
                limit: crate::mfg_solver::BLOWUP_LIMIT,
            });
        }
        coef[k] = state;
    }

    let mut dcoef = vec![[0.0; NUM_COEFFS]; nodes];
    for k in 0..nodes {
        dcoef[k] = coeff_rhs(&qc, n, coef[k])?;
    }

    let field = NPlayerField { n, grid, qc, coef, dcoef };
    verify_ansatz(spec, &field)?;
    Ok(field)
}

fn add(state: [f64; NUM_COEFFS], slope: [f64; NUM_COEFFS], h: f64) -> [f64; NUM_COEFFS] {
    let mut out = state;
    for idx in 0..NUM_COEFFS {
        out[idx] += h * slope[idx];
    }
    out
}

const ANSATZ_PROBE_TOL: f64 = 1e-9;

/// Checks the matched adjoint relation at random population states on a
/// subsample of grid nodes, for one diagonal and one off-diagonal entry.
fn verify_ansatz(spec: &GameSpec, field: &NPlayerField) -> Result<()> {
    let n = field.n;
    let nodes = field.grid.num_nodes();
    let stride = (nodes / 40).max(1);
    let seed = 0x5EED_u64;
    for k in (0..nodes).step_by(stride) {
        let t = field.grid.node(k);
        let co = field.node_coeffs(k);
        let dco = NPlayerCoeffs::from_array(field.dcoef[k]);
        let states: Vec<f64> =
            (0..n).map(|i| standard_normal(seed, i as u64, k as u64)).collect();
        for &(i, j) in &[(0usize, 0usize), (0, 1.min(n - 1))] {
            let (residual, scale) =
                ansatz_relation_residual(spec, &field.qc, n, &co, &dco, t, &states, i, j)?;
            if residual.abs() > ANSATZ_PROBE_TOL * scale {
                return Err(Error::AnsatzMismatch {
                    t,
                    n,
                    residual: residual.abs(),
                    tol: ANSATZ_PROBE_TOL * scale,
                });
            }
        }
    }
    Ok(())
}

/// First-order condition value for player `i` at a concrete state, with the
/// adjoint row taken from the ansatz. Zero (to round-off) at the
/// equilibrium feedback.
pub fn foc_value(
    field: &NPlayerField,
    k: usize,
    i: usize,
    states: &[f64],
) -> Result<f64> {
    let n = field.n;
    let nf = n as f64;
    let qc = field.qc;
    let co = field.node_coeffs(k);
    let (lx, lm, l0) = field.feedback_at_node(k)?;
    let xbar = states.iter().sum::<f64>() / nf;
    let abar = (lx + lm) * xbar + l0;
    let alpha_i = lx * states[i] + lm * xbar + l0;
    let mut row_sum = 0.0;
    for l in 0..n {
        row_sum += co.y_entry_with_mean(n, i, l, states[i], states[l], xbar);
    }
    Ok(qc.faa * alpha_i
        + qc.fax * states[i]
        + qc.fam * xbar
        + (qc.fxn * states[i] + qc.fnn * abar) / nf
        + qc.ba * co.y_entry_with_mean(n, i, i, states[i], states[i], xbar)
        + qc.bn / nf * row_sum)
}

/// Dynamic-programming oracle: every adjoint entry and every control is an
/// unconstrained affine map of the full population state (no symmetry
/// assumption), carried backward by one explicit first-order sweep.
#[derive(Debug, Clone)]
pub struct BruteForceNash {
    n: usize,
    grid: TimeGrid,
    /// `y_maps[k][i][j]` holds the `n` linear coefficients then the constant.
    y_maps: Vec<Vec<Vec<Vec<f64>>>>,
    /// `control_maps[k][i]` likewise.
    control_maps: Vec<Vec<Vec<f64>>>,
}

impl BruteForceNash {
    pub fn n_players(&self) -> usize {
        self.n
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn y_map(&self, k: usize, i: usize, j: usize) -> &[f64] {
        &self.y_maps[k][i][j]
    }

    pub fn control_map(&self, k: usize, i: usize) -> &[f64] {
        &self.control_maps[k][i]
    }

    pub fn y_at(&self, k: usize, i: usize, j: usize, states: &[f64]) -> f64 {
        apply_map(&self.y_maps[k][i][j], states)
    }

    pub fn control_at(&self, k: usize, i: usize, states: &[f64]) -> f64 {
        apply_map(&self.control_maps[k][i], states)
    }
}

fn apply_map(map: &[f64], states: &[f64]) -> f64 {
    let n = states.len();
    let mut acc = map[n];
    for l in 0..n {
        acc += map[l] * states[l];
    }
    acc
}

fn zero_map(n: usize) -> Vec<f64> {
    vec![0.0; n + 1]
}

fn axpy(dst: &mut [f64], scale: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += scale * s;
    }
}

/// Control maps solving every player's first-order condition against the
/// given adjoint proxy maps. The control-mean map is eliminated first by
/// averaging the conditions over players.
fn solve_foc_maps(qc: &QuadCoeffs, n: usize, y: &[Vec<Vec<f64>>]) -> Result<Vec<Vec<f64>>> {
    let nf = n as f64;
    let mut xbar_map = zero_map(n);
    for l in 0..n {
        xbar_map[l] = 1.0 / nf;
    }
    let mut avg_diag = zero_map(n);
    let mut avg_row = zero_map(n);
    for i in 0..n {
        axpy(&mut avg_diag, 1.0 / nf, &y[i][i]);
        for l in 0..n {
            axpy(&mut avg_row, 1.0 / nf, &y[i][l]);
        }
    }
    let denom = qc.faa + qc.fnn / nf;
    if denom.abs() < 1e-12 {
        return Err(Error::SingularFeedback { denom });
    }
    let mut abar_map = zero_map(n);
    axpy(&mut abar_map, -qc.ba, &avg_diag);
    axpy(&mut abar_map, -qc.bn / nf, &avg_row);
    axpy(&mut abar_map, -(qc.fax + qc.fam + qc.fxn / nf), &xbar_map);
    for v in abar_map.iter_mut() {
        *v /= denom;
    }
    let mut controls = Vec::with_capacity(n);
    for i in 0..n {
        let mut phi = zero_map(n);
        phi[i] -= (qc.fax + qc.fxn / nf) / qc.faa;
        axpy(&mut phi, -qc.fam / qc.faa, &xbar_map);
        axpy(&mut phi, -qc.fnn / (nf * qc.faa), &abar_map);
        axpy(&mut phi, -qc.ba / qc.faa, &y[i][i]);
        let mut row = zero_map(n);
        for l in 0..n {
            axpy(&mut row, 1.0, &y[i][l]);
        }
        axpy(&mut phi, -qc.bn / (nf * qc.faa), &row);
        controls.push(phi);
    }
    Ok(controls)
}

/// Explicit first-order backward sweep for the discrete open-loop Nash
/// system. Deliberately low-order: its distance to the Runge-Kutta ansatz
/// field must shrink linearly in the step size.
pub fn brute_force_discrete_nash(spec: &GameSpec, n: usize, k_steps: usize) -> Result<BruteForceNash> {
    spec.validate()?;
    if n < 2 || n > BRUTE_FORCE_PLAYER_LIMIT {
        return Err(Error::SizeLimit { got: n, limit: BRUTE_FORCE_PLAYER_LIMIT });
    }
    if k_steps < 2 || k_steps > BRUTE_FORCE_STEP_LIMIT {
        return Err(Error::SizeLimit { got: k_steps, limit: BRUTE_FORCE_STEP_LIMIT });
    }
    let qc = spec.coeffs();
    let grid = TimeGrid::new(spec.horizon(), k_steps)?;
    let nodes = grid.num_nodes();
    let dt = grid.dt();
    let nf = n as f64;

    let mut xbar_map = zero_map(n);
    for l in 0..n {
        xbar_map[l] = 1.0 / nf;
    }

    let mut y_maps = vec![vec![vec![zero_map(n); n]; n]; nodes];
    let mut control_maps = vec![vec![zero_map(n); n]; nodes];

    for i in 0..n {
        for j in 0..n {
            let map = &mut y_maps[nodes - 1][i][j];
            if i == j {
                map[i] += qc.gxx;
                axpy(map, qc.gxm, &xbar_map);
            }
            map[i] += qc.gxm / nf;
            axpy(map, qc.gmm / nf, &xbar_map);
        }
    }
    control_maps[nodes - 1] = solve_foc_maps(&qc, n, &y_maps[nodes - 1])?;

    for k in (0..k_steps).rev() {
        let next_y = &y_maps[k + 1];
        let next_controls = &control_maps[k + 1];
        let mut abar_next = zero_map(n);
        for phi in next_controls {
            axpy(&mut abar_next, 1.0 / nf, phi);
        }

        // Adjoint proxy: next value plus one driver increment, as maps.
        let mut w = vec![vec![zero_map(n); n]; n];
        for i in 0..n {
            let mut row_sum = zero_map(n);
            for l in 0..n {
                axpy(&mut row_sum, 1.0, &next_y[i][l]);
            }
            for j in 0..n {
                let mut drv = zero_map(n);
                axpy(&mut drv, qc.bx, &next_y[i][j]);
                axpy(&mut drv, qc.bm / nf, &row_sum);
                if i == j {
                    axpy(&mut drv, qc.fax, &next_controls[i]);
                    drv[i] += qc.fxx;
                    axpy(&mut drv, qc.fxm, &xbar_map);
                    axpy(&mut drv, qc.fxn, &abar_next);
                }
                axpy(&mut drv, qc.fam / nf, &next_controls[i]);
                drv[i] += qc.fxm / nf;
                axpy(&mut drv, qc.fmm / nf, &xbar_map);
                let mut entry = next_y[i][j].clone();
                axpy(&mut entry, dt, &drv);
                w[i][j] = entry;
            }
        }

        let controls = solve_foc_maps(&qc, n, &w)?;
        let mut abar = zero_map(n);
        for phi in &controls {
            axpy(&mut abar, 1.0 / nf, phi);
        }

        // Expected one-step state transition x -> x + dt * drift(x).
        let mut transition = Vec::with_capacity(n);
        for l in 0..n {
            let mut row = zero_map(n);
            row[l] = 1.0 + dt * qc.bx;
            axpy(&mut row, dt * qc.bm, &xbar_map);
            axpy(&mut row, dt * qc.ba, &controls[l]);
            axpy(&mut row, dt * qc.bn, &abar);
            transition.push(row);
        }

        for i in 0..n {
            for j in 0..n {
                let mut composed = zero_map(n);
                composed[n] = w[i][j][n];
                for l in 0..n {
                    let weight = w[i][j][l];
                    if weight != 0.0 {
                        axpy(&mut composed, weight, &transition[l]);
                    }
                }
                y_maps[k][i][j] = composed;
            }
        }
        control_maps[k] = controls;
    }

    Ok(BruteForceNash { n, grid, y_maps, control_maps })
}

/// Affine map of the full population state equivalent to one ansatz entry.
pub fn ansatz_entry_map(co: &NPlayerCoeffs, n: usize, i: usize, j: usize) -> Vec<f64> {
    let nf = n as f64;
    let mut map = zero_map(n);
    if i == j {
        map[i] += co.a;
        for slot in map.iter_mut().take(n) {
            *slot += co.b / nf;
        }
        map[n] += co.e;
    } else {
        map[i] += co.c / nf;
        map[j] += co.cp / nf;
        for slot in map.iter_mut().take(n) {
            *slot += co.f / (nf * nf);
        }
        map[n] += co.g / nf;
    }
    map
}

/// Largest coefficient gap between the interpolated ansatz matrix and the
/// dynamic-programming oracle, over all oracle nodes and all entries.
pub fn sup_ansatz_oracle_gap(field: &NPlayerField, oracle: &BruteForceNash) -> Result<f64> {
    if field.n_players() != oracle.n_players() {
        return Err(Error::DimensionMismatch {
            context: "ansatz/oracle player count".into(),
            expected: field.n_players(),
            got: oracle.n_players(),
        });
    }
    let n = field.n_players();
    let mut sup = 0.0_f64;
    for k in 0..oracle.grid().num_nodes() {
        let co = field.coeffs_at(oracle.grid().node(k))?;
        for i in 0..n {
            for j in 0..n {
                let reference = oracle.y_map(k, i, j);
                let map = ansatz_entry_map(&co, n, i, j);
                for (a, b) in map.iter().zip(reference) {
                    sup = sup.max((a - b).abs());
                }
            }
        }
    }
    Ok(sup)
}

/// Per-population residual magnitudes of the limiting optimality system
/// along simulated equilibrium paths: driver gap, first-order-condition
/// gap, and terminal-gradient gap.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ResidualDiagnostics {
    pub n: usize,
    pub max_eps: f64,
    pub max_zeta: f64,
    pub max_gamma: f64,
}

/// Residual magnitudes for one simulated population trajectory.
///
/// `states[k]` holds the `N` player states at node `k`. The three residuals
/// are the closed-form differences between the `N`-player optimality system
/// and its mean-field limit, evaluated along the trajectory.
pub fn compute_residuals(
    field: &NPlayerField,
    states: &[Vec<f64>],
) -> Result<ResidualDiagnostics> {
    let n = field.n_players();
    let nf = n as f64;
    let qc = field.qc;
    let nodes = field.grid().num_nodes();
    if states.len() != nodes {
        return Err(Error::DimensionMismatch {
            context: "trajectory node count".into(),
            expected: nodes,
            got: states.len(),
        });
    }
    let mut max_eps = 0.0_f64;
    let mut max_zeta = 0.0_f64;
    let mut max_gamma = 0.0_f64;
    for (k, row) in states.iter().enumerate() {
        if row.len() != n {
            return Err(Error::DimensionMismatch {
                context: "trajectory player count".into(),
                expected: n,
                got: row.len(),
            });
        }
        let co = field.node_coeffs(k);
        let (sx, sm, s0) = co.row_sums(n);
        let (lx, lm, l0) = field.feedback_at_node(k)?;
        let xbar = row.iter().sum::<f64>() / nf;
        let abar = (lx + lm) * xbar + l0;
        for &x in row {
            let alpha = lx * x + lm * xbar + l0;
            let row_sum = sx * x + sm * xbar + s0;
            let eps = (qc.fam * alpha + qc.fxm * x + qc.fmm * xbar) / nf + qc.bm / nf * row_sum;
            let zeta = -(qc.fxn * x + qc.fnn * abar) / nf - qc.bn / nf * row_sum;
            max_eps = max_eps.max(eps.abs());
            max_zeta = max_zeta.max(zeta.abs());
            if k == nodes - 1 {
                let gamma = (qc.gxm * x + qc.gmm * xbar) / nf;
                max_gamma = max_gamma.max(gamma.abs());
            }
        }
    }
    Ok(ResidualDiagnostics { n, max_eps, max_zeta, max_gamma })
}

/// Residual-decay report over a range of population sizes, with the fitted
/// log-log slope of the driver residual.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResidualReport {
    pub rows: Vec<ResidualDiagnostics>,
    pub fitted_slope: f64,
}

impl ResidualReport {
    /// CSV with columns `N,max_eps,max_zeta,max_gamma,fitted_slope`; the
    /// shared fitted slope is repeated on every row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("N,max_eps,max_zeta,max_gamma,fitted_slope\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                row.n, row.max_eps, row.max_zeta, row.max_gamma, self.fitted_slope
            ));
        }
        out
    }
}

fn simulate_equilibrium_states(
    spec: &GameSpec,
    field: &NPlayerField,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let n = field.n_players();
    let nf = n as f64;
    let grid = *field.grid();
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let sigma = spec.sigma();
    let qc = field.qc;
    let mut states = Vec::with_capacity(grid.num_nodes());
    states.push(vec![spec.x0(); n]);
    for k in 0..grid.steps() {
        let (lx, lm, l0) = field.feedback_at_node(k)?;
        let current = &states[k];
        let xbar = current.iter().sum::<f64>() / nf;
        let abar = (lx + lm) * xbar + l0;
        let mut next = Vec::with_capacity(n);
        for (i, &x) in current.iter().enumerate() {
            let alpha = lx * x + lm * xbar + l0;
            let drift = qc.bx * x + qc.bm * xbar + qc.ba * alpha + qc.bn * abar;
            let noise = standard_normal(seed, i as u64, k as u64);
            let value = x + dt * drift + sigma * sqrt_dt * noise;
            if !value.is_finite() || value.abs() > 1e9 {
                return Err(Error::Explosion { step: k, path: i, magnitude: value.abs() });
            }
            next.push(value);
        }
        states.push(next);
    }
    Ok(states)
}

/// Simulates equilibrium populations over a range of sizes and fits the
/// log-log decay of the combined residual norm. Replications run in
/// parallel with derived seeds; aggregation order is fixed by replication
/// index.
pub fn residual_experiment(
    spec: &GameSpec,
    population_sizes: &[usize],
    replications: usize,
    k_steps: usize,
    seed: u64,
) -> Result<ResidualReport> {
    if population_sizes.is_empty() || replications == 0 {
        return Err(Error::InvalidSpec {
            reason: "residual experiment needs at least one population size and one replication".into(),
        });
    }
    let mut rows = Vec::with_capacity(population_sizes.len());
    for (ni, &n) in population_sizes.iter().enumerate() {
        let field = solve_nplayer_nash(spec, n, k_steps)?;
        let per_rep: Vec<Result<ResidualDiagnostics>> = (0..replications)
            .into_par_iter()
            .map(|rep| {
                let rep_seed = derive_seed(seed, ni as u64, rep as u64);
                let states = simulate_equilibrium_states(spec, &field, rep_seed)?;
                compute_residuals(&field, &states)
            })
            .collect();
        let mut sum = ResidualDiagnostics { n, max_eps: 0.0, max_zeta: 0.0, max_gamma: 0.0 };
        for diag in per_rep {
            let diag = diag?;
            sum.max_eps += diag.max_eps;
            sum.max_zeta += diag.max_zeta;
            sum.max_gamma += diag.max_gamma;
        }
        let r = replications as f64;
        rows.push(ResidualDiagnostics {
            n,
            max_eps: sum.max_eps / r,
            max_zeta: sum.max_zeta / r,
            max_gamma: sum.max_gamma / r,
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
    let ys: Vec<f64> =
        rows.iter().map(|r| (r.max_eps + r.max_zeta + r.max_gamma).ln()).collect();
    let fitted_slope = if rows.len() >= 2 { linear_fit(&xs, &ys).slope } else { f64::NAN };
    Ok(ResidualReport { rows, fitted_slope })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mfg_solver::solve_decoupling_field;
    use crate::model::{GeneralLQSpec, SystemicRiskSpec};
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

    #[test]
    fn terminal_coefficients_match_the_terminal_gradient() {
        for (spec, gxx, gxm, gmm) in
            [(default_systemic(), 0.5, -0.5, 0.5), (default_lq(), 1.0, 0.0, 0.6)]
        {
            let n = 4;
            let field = solve_nplayer_nash(&spec, n, 64).unwrap();
            let co = field.node_coeffs(field.grid().num_nodes() - 1);
            let nf = n as f64;
            assert_eq!(co.a, gxx + gxm / nf);
            assert_eq!(co.b, gxm + gmm / nf);
            assert_eq!(co.e, 0.0);
            assert_eq!(co.c, gxm);
            assert_eq!(co.cp, 0.0);
            assert_eq!(co.f, gmm);
            assert_eq!(co.g, 0.0);
        }
    }

    #[test]
    fn second_off_diagonal_coefficient_stays_zero() {
        let field = solve_nplayer_nash(&default_lq(), 3, 128).unwrap();
        for k in 0..field.grid().num_nodes() {
            assert_eq!(field.node_coeffs(k).cp, 0.0);
        }
    }

    #[test]
    fn diagonal_slope_converges_to_the_limit_slope() {
        let spec = default_systemic();
        let limit = solve_decoupling_field(&spec, 2000).unwrap();
        let p0 = limit.node_coeffs().0[0];
        let gap = |n: usize| {
            let field = solve_nplayer_nash(&spec, n, 2000).unwrap();
            (field.node_coeffs(0).a - p0).abs()
        };
        let (g64, g128) = (gap(64), gap(128));
        let ratio = g64 / g128;
        assert!((1.5..2.5).contains(&ratio), "population-size decay ratio {ratio}");
        let g_large = gap(100_000);
        assert!(g_large < 1e-4, "large-population diagonal gap {g_large}");
    }

    #[test]
    fn feedback_solves_the_first_order_condition_pointwise() {
        for spec in [default_systemic(), default_lq()] {
            let field = solve_nplayer_nash(&spec, 5, 64).unwrap();
            for k in [0usize, 17, 64] {
                let states: Vec<f64> =
                    (0..5).map(|i| standard_normal(99, i as u64, k as u64)).collect();
                for i in 0..5 {
                    let v = foc_value(&field, k, i, &states).unwrap();
                    assert!(v.abs() < 1e-12, "foc residual {v:.3e}");
                }
            }
        }
    }

    #[test]
    fn row_sum_coefficients_match_direct_summation() {
        let field = solve_nplayer_nash(&default_lq(), 4, 32).unwrap();
        let co = field.node_coeffs(10);
        let states = [0.3, -1.2, 0.7, 2.1];
        let xbar = states.iter().sum::<f64>() / 4.0;
        let (sx, sm, s0) = co.row_sums(4);
        for i in 0..4 {
            let direct: f64 = (0..4).map(|j| co.y_entry(4, i, j, &states)).sum();
            let via_sums = sx * states[i] + sm * xbar + s0;
            assert_abs_diff_eq!(direct, via_sums, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_cost_oracle_is_identically_zero() {
        let spec = GameSpec::SystemicRisk(SystemicRiskSpec {
            a: 0.6,
            q: 0.0,
            eps: 0.0,
            c: 0.0,
            sigma: 1.0,
            T: 0.5,
            x0: 0.0,
        });
        let oracle = brute_force_discrete_nash(&spec, 3, 16).unwrap();
        for k in 0..oracle.grid().num_nodes() {
            for i in 0..3 {
                for j in 0..3 {
                    assert!(oracle.y_map(k, i, j).iter().all(|v| *v == 0.0));
                }
                assert!(oracle.control_map(k, i).iter().all(|v| *v == 0.0));
            }
        }
    }

    #[test]
    fn oracle_terminal_maps_match_the_ansatz_terminal() {
        let spec = default_lq();
        let n = 4;
        let oracle = brute_force_discrete_nash(&spec, n, 8).unwrap();
        let field = solve_nplayer_nash(&spec, n, 8).unwrap();
        let co = field.node_coeffs(8);
        let last = oracle.grid().num_nodes() - 1;
        for i in 0..n {
            for j in 0..n {
                let expected = ansatz_entry_map(&co, n, i, j);
                let got = oracle.y_map(last, i, j);
                for (a, b) in expected.iter().zip(got) {
                    assert_abs_diff_eq!(a, b, epsilon = 1e-15);
                }
            }
        }
    }

    #[test]
    fn oracle_respects_player_exchangeability() {
        let spec = default_lq();
        let oracle = brute_force_discrete_nash(&spec, 4, 32).unwrap();
        // Players 2 and 3 are interchangeable bystanders for the entry
        // Y^{01}, so their linear coefficients must coincide.
        let m01 = oracle.y_map(0, 0, 1);
        assert_abs_diff_eq!(m01[2], m01[3], epsilon = 1e-15);
        // Relabeling players 0 and 1 turns Y^{01} into Y^{10} with the
        // first two coordinates exchanged.
        let m01 = oracle.y_map(5, 0, 1);
        let m10 = oracle.y_map(5, 1, 0);
        assert_abs_diff_eq!(m01[0], m10[1], epsilon = 1e-14);
        assert_abs_diff_eq!(m01[1], m10[0], epsilon = 1e-14);
        assert_abs_diff_eq!(m01[2], m10[2], epsilon = 1e-14);
        assert_abs_diff_eq!(m01[4], m10[4], epsilon = 1e-14);
        // Diagonal entries of distinct players are relabelings of each
        // other as well.
        let m00 = oracle.y_map(5, 0, 0);
        let m11 = oracle.y_map(5, 1, 1);
        assert_abs_diff_eq!(m00[0], m11[1], epsilon = 1e-14);
        assert_abs_diff_eq!(m00[2], m11[2], epsilon = 1e-14);
    }

    #[test]
    fn oracle_gap_shrinks_linearly_in_the_step_size() {
        for spec in [default_systemic(), default_lq()] {
            let n = 3;
            let field = solve_nplayer_nash(&spec, n, 4000).unwrap();
            let gap = |k: usize| {
                let oracle = brute_force_discrete_nash(&spec, n, k).unwrap();
                sup_ansatz_oracle_gap(&field, &oracle).unwrap()
            };
            let (g1, g2) = (gap(250), gap(500));
            let ratio = g1 / g2;
            assert!((1.6..2.4).contains(&ratio), "first-order ratio {ratio} ({g1:.3e}/{g2:.3e})");
        }
    }

    #[test]
    fn oracle_rejects_oversized_problems() {
        let spec = default_lq();
        assert!(matches!(
            brute_force_discrete_nash(&spec, 9, 16),
            Err(Error::SizeLimit { got: 9, limit: 8 })
        ));
        assert!(matches!(
            brute_force_discrete_nash(&spec, 3, 200_000),
            Err(Error::SizeLimit { .. })
        ));
    }

    #[test]
    fn residuals_decay_with_population_size() {
        let spec = default_systemic();
        let report = residual_experiment(&spec, &[8, 32, 128], 40, 100, 2024).unwrap();
        assert_eq!(report.rows.len(), 3);
        for row in &report.rows {
            assert_eq!(row.max_zeta, 0.0);
            assert!(row.max_eps > 0.0);
            assert!(row.max_gamma > 0.0);
        }
        assert!(
            (-1.5..=-0.5).contains(&report.fitted_slope),
            "slope {}",
            report.fitted_slope
        );
        let csv = report.to_csv();
        assert!(csv.starts_with("N,max_eps,max_zeta,max_gamma,fitted_slope\n"));
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn control_mean_coupling_makes_the_foc_residual_nonzero() {
        let spec = default_lq();
        let report = residual_experiment(&spec, &[8, 16], 10, 50, 7).unwrap();
        for row in &report.rows {
            assert!(row.max_zeta > 0.0, "coupled instance should have a control-mean gap");
        }
    }

    #[test]
    fn residual_input_shapes_are_checked() {
        let spec = default_systemic();
        let field = solve_nplayer_nash(&spec, 3, 10).unwrap();
        let wrong_nodes = vec![vec![0.0; 3]; 5];
        assert!(matches!(
            compute_residuals(&field, &wrong_nodes),
            Err(Error::DimensionMismatch { .. })
        ));
        let wrong_players = vec![vec![0.0; 2]; 11];
        assert!(matches!(
            compute_residuals(&field, &wrong_players),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}

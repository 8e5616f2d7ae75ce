//! Interacting particle simulators over shared Brownian bundles.
//!
//! All schemes are Euler-Maruyama on a uniform grid. Noise comes from a
//! counter-mode generator, so an increment depends only on `(seed, path,
//! step)` and coupled refinements or re-runs under different thread counts
//! reproduce bitwise.

use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::measure::{EmpiricalMeasure, EmpiricalPath};
use crate::mfg_solver::AffineField;
use crate::model::{mfg_maps, GameSpec};
use crate::nplayer_solver::NPlayerField;
use crate::rng::standard_normal;

/// State magnitude above which a simulation is declared to have exploded.
pub const EXPLOSION_LIMIT: f64 = 1e9;

/// Path count at or above which per-step updates run in parallel.
const PAR_PATH_THRESHOLD: usize = 8192;

/// Pre-drawn Brownian increments for `n_paths` paths on a uniform grid.
/// Increment `(path, step)` is `sqrt(dt)` times a standard normal draw
/// keyed by `(seed, path, step)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianBundle {
    seed: u64,
    grid: TimeGrid,
    n_paths: usize,
    /// Row-major `[path][step]`.
    increments: Vec<f64>,
}

impl BrownianBundle {
    pub fn new(seed: u64, n_paths: usize, grid: TimeGrid) -> BrownianBundle {
        let steps = grid.steps();
        let sqrt_dt = grid.dt().sqrt();
        let increments: Vec<f64> = if n_paths * steps >= PAR_PATH_THRESHOLD {
            (0..n_paths)
                .into_par_iter()
                .flat_map_iter(|path| {
                    (0..steps).map(move |step| {
                        sqrt_dt * standard_normal(seed, path as u64, step as u64)
                    })
                })
                .collect()
        } else {
            (0..n_paths)
                .flat_map(|path| {
                    (0..steps).map(move |step| {
                        sqrt_dt * standard_normal(seed, path as u64, step as u64)
                    })
                })
                .collect()
        };
        BrownianBundle { seed, grid, n_paths, increments }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn increment(&self, path: usize, step: usize) -> f64 {
        self.increments[path * self.grid.steps() + step]
    }

    /// Halves the time resolution by summing consecutive increment pairs,
    /// keeping every path on the same Brownian trajectory.
    pub fn coarsen(&self) -> Result<BrownianBundle> {
        let steps = self.grid.steps();
        if steps % 2 != 0 {
            return Err(Error::InvalidSpec {
                reason: format!("cannot pairwise coarsen an odd step count {steps}"),
            });
        }
        let coarse_grid = TimeGrid::new(self.grid.t_end(), steps / 2)?;
        let mut increments = Vec::with_capacity(self.n_paths * steps / 2);
        for path in 0..self.n_paths {
            for step in 0..steps / 2 {
                increments.push(self.increment(path, 2 * step) + self.increment(path, 2 * step + 1));
            }
        }
        Ok(BrownianBundle { seed: self.seed, grid: coarse_grid, n_paths: self.n_paths, increments })
    }
}

/// Which drift rule produced an ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimulationKind {
    /// Finite-population Nash feedback, interaction through empirical means.
    Equilibrium,
    /// Decoupled limit feedback, interaction through the empirical mean.
    Auxiliary,
    /// Decoupled limit feedback frozen at the deterministic mean flow;
    /// paths are independent.
    Limit,
    /// Auxiliary dynamics with an added deterministic forcing.
    Controlled,
}

/// Simulated state (and optionally control) cross-sections per grid node.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryEnsemble {
    kind: SimulationKind,
    seed: u64,
    grid: TimeGrid,
    n_paths: usize,
    /// `states[node][path]`.
    states: Vec<Vec<f64>>,
    /// `controls[node][path]` when the scheme records controls.
    controls: Option<Vec<Vec<f64>>>,
}

impl TrajectoryEnsemble {
    pub fn kind(&self) -> SimulationKind {
        self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn states_at(&self, node: usize) -> &[f64] {
        &self.states[node]
    }

    pub fn controls_at(&self, node: usize) -> Option<&[f64]> {
        self.controls.as_ref().map(|c| c[node].as_slice())
    }

    pub fn mean_at(&self, node: usize) -> f64 {
        crate::stats::mean(&self.states[node])
    }

    pub fn mean_control_at(&self, node: usize) -> Option<f64> {
        self.controls.as_ref().map(|c| crate::stats::mean(&c[node]))
    }

    /// Empirical mean per node.
    pub fn mean_path(&self) -> Vec<f64> {
        (0..self.grid.num_nodes()).map(|k| self.mean_at(k)).collect()
    }

    /// Unbiased sample variance per node.
    pub fn variance_path(&self) -> Vec<f64> {
        self.states.iter().map(|row| crate::stats::sample_variance(row)).collect()
    }

    /// Cross-sections as empirical measures on the shared grid.
    pub fn to_empirical_path(&self) -> Result<EmpiricalPath> {
        let nodes: Vec<EmpiricalMeasure> =
            self.states.iter().map(|row| EmpiricalMeasure::new(row.clone())).collect();
        EmpiricalPath::new(self.grid, nodes)
    }

    /// Raw states as row-major little-endian doubles, `[node][path]`.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(self.states.len() * self.n_paths * 8);
        for row in &self.states {
            for v in row {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut file =
            std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        file.write_all(&bytes).map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(())
    }

    /// JSON descriptor of the binary layout and the generating seed.
    pub fn write_sidecar(&self, path: &Path, state_file: &str) -> Result<()> {
        #[derive(Serialize)]
        struct Sidecar<'a> {
            kind: SimulationKind,
            seed: u64,
            n_paths: usize,
            steps: usize,
            t_end: f64,
            has_controls: bool,
            state_file: &'a str,
            layout: &'a str,
        }
        let sidecar = Sidecar {
            kind: self.kind,
            seed: self.seed,
            n_paths: self.n_paths,
            steps: self.grid.steps(),
            t_end: self.grid.t_end(),
            has_controls: self.controls.is_some(),
            state_file,
            layout: "node_major_f64_le",
        };
        let text = serde_json::to_string_pretty(&sidecar)
            .map_err(|e| Error::InvalidSpec { reason: format!("sidecar serialization: {e}") })?;
        std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(())
    }

    /// Per-node summary CSV with columns `t,mean,variance`.
    pub fn write_moments_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("t,mean,variance\n");
        for k in 0..self.grid.num_nodes() {
            out.push_str(&format!(
                "{},{},{}\n",
                self.grid.node(k),
                self.mean_at(k),
                crate::stats::sample_variance(&self.states[k])
            ));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(())
    }
}

fn guard_explosion(value: f64, step: usize, path: usize) -> Result<f64> {
    if !value.is_finite() || value.abs() > EXPLOSION_LIMIT {
        Err(Error::Explosion { step, path, magnitude: value.abs() })
    } else {
        Ok(value)
    }
}

/// One Euler step for every path given per-path drifts; parallel above the
/// path threshold, with order fixed by index either way.
fn advance(
    current: &[f64],
    drifts: &[f64],
    bundle: &BrownianBundle,
    sigma: f64,
    dt: f64,
    step: usize,
) -> Result<Vec<f64>> {
    let update = |path: usize| -> Result<f64> {
        let value = current[path] + dt * drifts[path] + sigma * bundle.increment(path, step);
        guard_explosion(value, step, path)
    };
    if current.len() >= PAR_PATH_THRESHOLD {
        (0..current.len()).into_par_iter().map(update).collect()
    } else {
        (0..current.len()).map(update).collect()
    }
}

/// Per-node affine coefficients `(cx, cm, c0)` of the decoupled drift
/// `x' = cx*x + cm*mean + c0`, precomputed from the field nodes.
pub(crate) fn decoupled_drift_nodes(spec: &GameSpec, field: &AffineField) -> Result<Vec<(f64, f64, f64)>> {
    let maps = mfg_maps(spec)?;
    let (p, r, s) = field.node_coeffs();
    Ok((0..field.grid().num_nodes())
        .map(|k| {
            (
                maps.bx + maps.by * p[k],
                maps.by * r[k] + maps.bm + maps.bmy * (p[k] + r[k]),
                (maps.by + maps.bmy) * s[k] + maps.b0,
            )
        })
        .collect())
}

/// Simulates the finite-population equilibrium: each path is one player,
/// controls follow the population Nash feedback, and the interaction runs
/// through the empirical state and control means. Controls are recorded.
pub fn simulate_equilibrium(
    spec: &GameSpec,
    nfield: &NPlayerField,
    bundle: &BrownianBundle,
) -> Result<TrajectoryEnsemble> {
    spec.validate()?;
    nfield.grid().ensure_matches(bundle.grid(), "equilibrium bundle")?;
    if bundle.n_paths() != nfield.n_players() {
        return Err(Error::DimensionMismatch {
            context: "equilibrium paths must equal the player count".into(),
            expected: nfield.n_players(),
            got: bundle.n_paths(),
        });
    }
    let qc = spec.coeffs();
    let grid = *bundle.grid();
    let n = bundle.n_paths();
    let nf = n as f64;
    let dt = grid.dt();
    let sigma = spec.sigma();
    let mut states = Vec::with_capacity(grid.num_nodes());
    let mut controls = Vec::with_capacity(grid.num_nodes());
    states.push(vec![spec.x0(); n]);
    for k in 0..grid.steps() {
        let (lx, lm, l0) = nfield.feedback_at_node(k)?;
        let current = &states[k];
        let xbar = current.iter().sum::<f64>() / nf;
        let abar = (lx + lm) * xbar + l0;
        let alphas: Vec<f64> = current.iter().map(|x| lx * x + lm * xbar + l0).collect();
        let drifts: Vec<f64> = current
            .iter()
            .zip(&alphas)
            .map(|(&x, &a)| qc.bx * x + qc.bm * xbar + qc.ba * a + qc.bn * abar)
            .collect();
        let next = advance(current, &drifts, bundle, sigma, dt, k)?;
        controls.push(alphas);
        states.push(next);
    }
    // Terminal-node controls close the control record on the full grid.
    let (lx, lm, l0) = nfield.feedback_at_node(grid.steps())?;
    let last = &states[grid.steps()];
    let xbar = last.iter().sum::<f64>() / nf;
    controls.push(last.iter().map(|x| lx * x + lm * xbar + l0).collect());
    Ok(TrajectoryEnsemble {
        kind: SimulationKind::Equilibrium,
        seed: bundle.seed(),
        grid,
        n_paths: n,
        states,
        controls: Some(controls),
    })
}

/// Simulates the auxiliary interacting system: every path follows the
/// decoupled limit drift evaluated at the ensemble's own empirical mean.
pub fn simulate_auxiliary(
    spec: &GameSpec,
    field: &AffineField,
    bundle: &BrownianBundle,
) -> Result<TrajectoryEnsemble> {
    simulate_forced(spec, field, bundle, None, SimulationKind::Auxiliary)
}

/// Simulates the auxiliary system with an added per-step deterministic
/// forcing `sigma * u[k]` in the drift.
pub fn simulate_controlled(
    spec: &GameSpec,
    field: &AffineField,
    bundle: &BrownianBundle,
    forcing: &[f64],
) -> Result<TrajectoryEnsemble> {
    if forcing.len() != bundle.grid().steps() {
        return Err(Error::DimensionMismatch {
            context: "forcing length must equal the step count".into(),
            expected: bundle.grid().steps(),
            got: forcing.len(),
        });
    }
    simulate_forced(spec, field, bundle, Some(forcing), SimulationKind::Controlled)
}

fn simulate_forced(
    spec: &GameSpec,
    field: &AffineField,
    bundle: &BrownianBundle,
    forcing: Option<&[f64]>,
    kind: SimulationKind,
) -> Result<TrajectoryEnsemble> {
    spec.validate()?;
    field.grid().ensure_matches(bundle.grid(), "auxiliary bundle")?;
    let coeffs = decoupled_drift_nodes(spec, field)?;
    let grid = *bundle.grid();
    let n = bundle.n_paths();
    let dt = grid.dt();
    let sigma = spec.sigma();
    let mut states = Vec::with_capacity(grid.num_nodes());
    states.push(vec![spec.x0(); n]);
    for k in 0..grid.steps() {
        let (cx, cm, c0) = coeffs[k];
        let shift = forcing.map_or(0.0, |u| sigma * u[k]);
        let current = &states[k];
        let mean = current.iter().sum::<f64>() / n as f64;
        let drifts: Vec<f64> =
            current.iter().map(|&x| cx * x + cm * mean + c0 + shift).collect();
        let next = advance(current, &drifts, bundle, sigma, dt, k)?;
        states.push(next);
    }
    Ok(TrajectoryEnsemble { kind, seed: bundle.seed(), grid, n_paths: n, states, controls: None })
}

/// Simulates independent copies of the limiting dynamics: the decoupled
/// drift with the mean frozen at the deterministic mean flow.
pub fn simulate_limit(
    spec: &GameSpec,
    field: &AffineField,
    flow: &crate::mfg_solver::MeanFlow,
    bundle: &BrownianBundle,
) -> Result<TrajectoryEnsemble> {
    spec.validate()?;
    field.grid().ensure_matches(bundle.grid(), "limit bundle")?;
    flow.grid().ensure_matches(bundle.grid(), "limit flow")?;
    let coeffs = decoupled_drift_nodes(spec, field)?;
    let grid = *bundle.grid();
    let n = bundle.n_paths();
    let dt = grid.dt();
    let sigma = spec.sigma();
    let mut states = Vec::with_capacity(grid.num_nodes());
    states.push(vec![spec.x0(); n]);
    for k in 0..grid.steps() {
        let (cx, cm, c0) = coeffs[k];
        let mean = flow.mx()[k];
        let current = &states[k];
        let drifts: Vec<f64> = current.iter().map(|&x| cx * x + cm * mean + c0).collect();
        let next = advance(current, &drifts, bundle, sigma, dt, k)?;
        states.push(next);
    }
    Ok(TrajectoryEnsemble {
        kind: SimulationKind::Limit,
        seed: bundle.seed(),
        grid,
        n_paths: n,
        states,
        controls: None,
    })
}

/// Variance of the limiting dynamics per node, from the linear variance ODE
/// driven by the state slope of the decoupled drift.
pub fn limit_variance_path(spec: &GameSpec, field: &AffineField) -> Result<Vec<f64>> {
    spec.validate()?;
    let maps = mfg_maps(spec)?;
    let grid = *field.grid();
    let h = grid.dt();
    let sigma2 = spec.sigma() * spec.sigma();
    let slope_at = |t: f64| -> Result<f64> {
        let (p, _, _) = field.coeffs_at(t)?;
        Ok(maps.bx + maps.by * p)
    };
    let mut var = vec![0.0; grid.num_nodes()];
    for k in 0..grid.steps() {
        let t = grid.node(k);
        let v = var[k];
        let f = |tt: f64, vv: f64| -> Result<f64> { Ok(2.0 * slope_at(tt)? * vv + sigma2) };
        let k1 = f(t, v)?;
        let k2 = f(t + 0.5 * h, v + 0.5 * h * k1)?;
        let k3 = f(t + 0.5 * h, v + 0.5 * h * k2)?;
        let k4 = f(t + h, v + h * k3)?;
        var[k + 1] = v + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    Ok(var)
}

/// Largest per-node 1-Wasserstein-2 distance between the cross-sections of
/// two ensembles on the same grid.
pub fn sup_w2_between(a: &TrajectoryEnsemble, b: &TrajectoryEnsemble) -> Result<f64> {
    a.grid().ensure_matches(b.grid(), "ensemble comparison")?;
    let mut sup = 0.0_f64;
    for k in 0..a.grid().num_nodes() {
        let ma = EmpiricalMeasure::new(a.states_at(k).to_vec());
        let mb = EmpiricalMeasure::new(b.states_at(k).to_vec());
        sup = sup.max(crate::measure::w2_1d(&ma, &mb)?);
    }
    Ok(sup)
}

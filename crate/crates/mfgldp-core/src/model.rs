//! Coefficient families and pointwise evaluators.
//!
//! Two scalar families are supported:
//!
//! * [`SystemicRiskSpec`]: drift `a*(meanX - x) + alpha`, running cost
//!   `alpha^2/2 - q*alpha*(meanX - x) + (eps/2)*(meanX - x)^2`, terminal cost
//!   `(c/2)*(meanX - x)^2`;
//! * [`GeneralLQSpec`]: drift `A*x + Abar*meanX + B*alpha + Bbar*meanA`,
//!   running cost `Q*x^2 + Qbar*meanX^2 + R*alpha^2 + Rbar*meanA^2 +
//!   Sbar*x*meanA`, terminal cost `QT*x^2 + QbarT*meanX^2`.
//!
//! Both lower to one quadratic coefficient table ([`QuadCoeffs`]), and every
//! evaluator below works on that table: the drift is affine in
//! `(x, alpha, meanX, meanA)` and the costs are quadratic forms. Neither
//! family carries an `alpha * meanA` cross term, so the Hamiltonian minimizer
//! [`eval_lambda`] depends on `(x, y, meanX)` only.
//!
//! Measures enter only through the summary statistics of
//! [`MeasureSummary`]: drifts and first-order conditions read the means, and
//! the quadratic-growth checks additionally read second moments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::EmpiricalMeasure;
use crate::mfg_solver::AffineField;

/// Inter-bank borrowing/lending family: reserves revert to the pool mean at
/// rate `a`, controls are lending rates, and both costs penalize deviation
/// from the mean.
#[allow(non_snake_case)]
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemicRiskSpec {
    /// Mean-reversion rate (per unit time, nonnegative).
    pub a: f64,
    /// Incentive weight on the control/deviation cross term.
    pub q: f64,
    /// Running-cost weight on squared deviation from the mean.
    pub eps: f64,
    /// Terminal-cost weight on squared deviation from the mean.
    pub c: f64,
    /// Volatility (state units per square-root time, positive).
    pub sigma: f64,
    /// Horizon (positive).
    pub T: f64,
    /// Common initial state.
    pub x0: f64,
}

/// General scalar linear-quadratic family with mean interactions in the
/// drift, running cost, and terminal cost, including the control-mean terms
/// `Bbar*meanA`, `Rbar*meanA^2`, and the cross term `Sbar*x*meanA`.
#[allow(non_snake_case)]
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneralLQSpec {
    pub A: f64,
    pub Abar: f64,
    pub B: f64,
    pub Bbar: f64,
    pub Q: f64,
    pub Qbar: f64,
    pub R: f64,
    pub Rbar: f64,
    pub Sbar: f64,
    pub QT: f64,
    pub QbarT: f64,
    pub sigma: f64,
    pub T: f64,
    pub x0: f64,
}

/// A game instance from either family, tagged `"family"` in JSON as
/// `"systemic_risk"` or `"general_lq"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum GameSpec {
    SystemicRisk(SystemicRiskSpec),
    GeneralLq(GeneralLQSpec),
}

impl SystemicRiskSpec {
    /// Checks the family's parameter restrictions.
    pub fn validate(&self) -> Result<()> {
        let fields =
            [self.a, self.q, self.eps, self.c, self.sigma, self.T, self.x0];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpec { reason: "non-finite systemic-risk parameter".into() });
        }
        if self.a < 0.0 {
            return Err(Error::InvalidSpec {
                reason: format!("mean-reversion rate must be nonnegative, got a = {}", self.a),
            });
        }
        if self.q * self.q > self.eps {
            return Err(Error::InvalidSpec {
                reason: format!("requires q^2 <= eps, got q^2 = {} > eps = {}", self.q * self.q, self.eps),
            });
        }
        if self.sigma <= 0.0 {
            return Err(Error::InvalidSpec {
                reason: format!("volatility must be positive, got sigma = {}", self.sigma),
            });
        }
        if self.T <= 0.0 {
            return Err(Error::InvalidSpec { reason: format!("horizon must be positive, got T = {}", self.T) });
        }
        Ok(())
    }
}

impl GeneralLQSpec {
    /// Checks the family's parameter restrictions.
    pub fn validate(&self) -> Result<()> {
        let fields = [
            self.A, self.Abar, self.B, self.Bbar, self.Q, self.Qbar, self.R, self.Rbar,
            self.Sbar, self.QT, self.QbarT, self.sigma, self.T, self.x0,
        ];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpec { reason: "non-finite LQ parameter".into() });
        }
        if self.R <= 0.0 {
            return Err(Error::InvalidSpec {
                reason: format!("control weight must be positive, got R = {}", self.R),
            });
        }
        if self.R + self.Rbar == 0.0 {
            return Err(Error::InvalidSpec { reason: "requires R + Rbar != 0".into() });
        }
        if self.sigma <= 0.0 {
            return Err(Error::InvalidSpec {
                reason: format!("volatility must be positive, got sigma = {}", self.sigma),
            });
        }
        if self.T <= 0.0 {
            return Err(Error::InvalidSpec { reason: format!("horizon must be positive, got T = {}", self.T) });
        }
        Ok(())
    }
}

impl GameSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            GameSpec::SystemicRisk(s) => s.validate(),
            GameSpec::GeneralLq(s) => s.validate(),
        }
    }

    pub fn sigma(&self) -> f64 {
        match self {
            GameSpec::SystemicRisk(s) => s.sigma,
            GameSpec::GeneralLq(s) => s.sigma,
        }
    }

    pub fn horizon(&self) -> f64 {
        match self {
            GameSpec::SystemicRisk(s) => s.T,
            GameSpec::GeneralLq(s) => s.T,
        }
    }

    pub fn x0(&self) -> f64 {
        match self {
            GameSpec::SystemicRisk(s) => s.x0,
            GameSpec::GeneralLq(s) => s.x0,
        }
    }

    /// Lowers the instance to the shared quadratic coefficient table.
    pub fn coeffs(&self) -> QuadCoeffs {
        match self {
            GameSpec::SystemicRisk(s) => QuadCoeffs {
                bx: -s.a,
                bm: s.a,
                ba: 1.0,
                bn: 0.0,
                faa: 1.0,
                fax: s.q,
                fam: -s.q,
                fxx: s.eps,
                fxm: -s.eps,
                fmm: s.eps,
                fxn: 0.0,
                fnn: 0.0,
                gxx: s.c,
                gxm: -s.c,
                gmm: s.c,
            },
            GameSpec::GeneralLq(s) => QuadCoeffs {
                bx: s.A,
                bm: s.Abar,
                ba: s.B,
                bn: s.Bbar,
                faa: 2.0 * s.R,
                fax: 0.0,
                fam: 0.0,
                fxx: 2.0 * s.Q,
                fxm: 0.0,
                fmm: 2.0 * s.Qbar,
                fxn: s.Sbar,
                fnn: 2.0 * s.Rbar,
                gxx: 2.0 * s.QT,
                gxm: 0.0,
                gmm: 2.0 * s.QbarT,
            },
        }
    }
}

/// Shared quadratic coefficient table:
///
/// ```text
/// b(t,x,a,xi)  = bx*x + bm*meanX + ba*a + bn*meanA
/// f(t,x,a,xi)  = faa*a^2/2 + fax*a*x + fam*a*meanX
///              + fxx*x^2/2 + fxm*x*meanX + fmm*meanX^2/2
///              + fxn*x*meanA + fnn*meanA^2/2
/// g(x,mu)      = gxx*x^2/2 + gxm*x*meanX + gmm*meanX^2/2
/// ```
///
/// There is deliberately no `a*meanA` entry: neither supported family has
/// one, and its absence keeps the Hamiltonian minimizer free of the control
/// mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadCoeffs {
    pub bx: f64,
    pub bm: f64,
    pub ba: f64,
    pub bn: f64,
    pub faa: f64,
    pub fax: f64,
    pub fam: f64,
    pub fxx: f64,
    pub fxm: f64,
    pub fmm: f64,
    pub fxn: f64,
    pub fnn: f64,
    pub gxx: f64,
    pub gxm: f64,
    pub gmm: f64,
}

/// First and second moments of a joint state-control measure. The supported
/// coefficient families read only the means; the second moments feed the
/// quadratic-growth checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasureSummary {
    pub mean_x: f64,
    pub mean_a: f64,
    pub m2_x: f64,
    pub m2_a: f64,
}

impl MeasureSummary {
    /// Builds a summary, rejecting second moments below the squared means.
    pub fn new(mean_x: f64, mean_a: f64, m2_x: f64, m2_a: f64) -> Result<Self> {
        if m2_x < mean_x * mean_x - 1e-12 || m2_a < mean_a * mean_a - 1e-12 {
            return Err(Error::InvalidSpec {
                reason: format!(
                    "second moments below squared means: m2_x={m2_x} vs {}, m2_a={m2_a} vs {}",
                    mean_x * mean_x,
                    mean_a * mean_a
                ),
            });
        }
        Ok(MeasureSummary { mean_x, mean_a, m2_x, m2_a })
    }

    /// Summary with both marginals degenerate at a point.
    pub fn dirac(x: f64, a: f64) -> Self {
        MeasureSummary { mean_x: x, mean_a: a, m2_x: x * x, m2_a: a * a }
    }

    /// Summary of an empirical joint measure given by atom lists.
    pub fn from_samples(states: &[f64], controls: &[f64]) -> Self {
        let mean_x = crate::stats::mean(states);
        let mean_a = crate::stats::mean(controls);
        let m2 = |v: &[f64]| {
            if v.is_empty() {
                0.0
            } else {
                v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64
            }
        };
        MeasureSummary { mean_x, mean_a, m2_x: m2(states), m2_a: m2(controls) }
    }

    /// Summary of a state-only empirical measure (control marginal at zero).
    pub fn from_states(states: &[f64]) -> Self {
        Self::from_samples(states, &[])
    }
}

/// Values of the coefficient derivatives at one evaluation point. The
/// measure derivatives of mean-functional dependencies are constant in their
/// spatial argument, so a plain number per derivative suffices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefficientDerivatives {
    /// State derivative of the drift.
    pub dxb: f64,
    /// Control derivative of the drift.
    pub dab: f64,
    /// Measure (state-mean) derivative of the drift.
    pub dmub: f64,
    /// Measure (control-mean) derivative of the drift.
    pub dnub: f64,
    /// State derivative of the running cost.
    pub dxf: f64,
    /// Control derivative of the running cost.
    pub daf: f64,
    /// Measure (state-mean) derivative of the running cost.
    pub dmuf: f64,
    /// Measure (control-mean) derivative of the running cost.
    pub dnuf: f64,
    /// State derivative of the terminal cost.
    pub dxg: f64,
    /// Measure (state-mean) derivative of the terminal cost.
    pub dmug: f64,
}

/// Evaluates all coefficient derivatives at `(t, x, a, xi)`; the terminal
/// derivatives use the state-marginal of `xi`.
pub fn coefficient_derivatives(
    spec: &GameSpec,
    _t: f64,
    x: f64,
    a: f64,
    xi: &MeasureSummary,
) -> CoefficientDerivatives {
    let c = spec.coeffs();
    let (m, n) = (xi.mean_x, xi.mean_a);
    CoefficientDerivatives {
        dxb: c.bx,
        dab: c.ba,
        dmub: c.bm,
        dnub: c.bn,
        dxf: c.fax * a + c.fxx * x + c.fxm * m + c.fxn * n,
        daf: c.faa * a + c.fax * x + c.fam * m,
        dmuf: c.fam * a + c.fxm * x + c.fmm * m,
        dnuf: c.fxn * x + c.fnn * n,
        dxg: c.gxx * x + c.gxm * m,
        dmug: c.gxm * x + c.gmm * m,
    }
}

/// Drift rate `b(t, x, a, xi)`.
pub fn eval_drift_b(spec: &GameSpec, _t: f64, x: f64, a: f64, xi: &MeasureSummary) -> f64 {
    let c = spec.coeffs();
    c.bx * x + c.bm * xi.mean_x + c.ba * a + c.bn * xi.mean_a
}

/// Running cost rate `f(t, x, a, xi)`.
pub fn eval_cost_f(spec: &GameSpec, _t: f64, x: f64, a: f64, xi: &MeasureSummary) -> f64 {
    let c = spec.coeffs();
    let (m, n) = (xi.mean_x, xi.mean_a);
    0.5 * c.faa * a * a
        + c.fax * a * x
        + c.fam * a * m
        + 0.5 * c.fxx * x * x
        + c.fxm * x * m
        + 0.5 * c.fmm * m * m
        + c.fxn * x * n
        + 0.5 * c.fnn * n * n
}

/// Terminal cost `g(x, mu)`; `mu` is the state marginal.
pub fn eval_terminal_g(spec: &GameSpec, x: f64, mu: &MeasureSummary) -> f64 {
    let c = spec.coeffs();
    let m = mu.mean_x;
    0.5 * c.gxx * x * x + c.gxm * x * m + 0.5 * c.gmm * m * m
}

/// Hamiltonian `H(t, x, y, a, xi) = f(t, x, a, xi) + b(t, x, a, xi) * y`.
#[allow(non_snake_case)]
pub fn eval_hamiltonian_H(
    spec: &GameSpec,
    t: f64,
    x: f64,
    y: f64,
    a: f64,
    xi: &MeasureSummary,
) -> f64 {
    eval_cost_f(spec, t, x, a, xi) + eval_drift_b(spec, t, x, a, xi) * y
}

/// Curvature of the Hamiltonian in the control: `H(a) - H(a') - (a - a') *
/// dH/da(a') = gamma * (a - a')^2` exactly for this quadratic family.
pub fn control_convexity_gamma(spec: &GameSpec) -> f64 {
    spec.coeffs().faa / 2.0
}

/// Affine coefficients of the Hamiltonian minimizer
/// `Lambda(t,x,y,mu) = lx*x + ly*y + lm*meanX`.
#[derive(Debug, Clone, Copy)]
pub struct LambdaCoeffs {
    pub lx: f64,
    pub ly: f64,
    pub lm: f64,
}

/// Coefficients of the pointwise Hamiltonian minimizer, requiring strict
/// convexity in the control.
pub fn lambda_coeffs(spec: &GameSpec) -> Result<LambdaCoeffs> {
    let c = spec.coeffs();
    if c.faa <= 0.0 {
        return Err(Error::NonConvexHamiltonian { coeff: c.faa });
    }
    Ok(LambdaCoeffs { lx: -c.fax / c.faa, ly: -c.ba / c.faa, lm: -c.fam / c.faa })
}

/// Unique minimizer of `a -> H(t, x, y, a, mu)`; for systemic risk this is
/// `q*(meanX - x) - y`.
pub fn eval_lambda(spec: &GameSpec, _t: f64, x: f64, y: f64, mu: &MeasureSummary) -> Result<f64> {
    let lc = lambda_coeffs(spec)?;
    Ok(lc.lx * x + lc.ly * y + lc.lm * mu.mean_x)
}

/// Affine coefficient maps of the decoupled forward-backward system
///
/// ```text
/// drift  (t,x,y; m,my) = bx*x + by*y + bm*m + bmy*my + b0
/// driver (t,x,y; m,my) = fx*x + fy*y + fm*m + fmy*my + f0
/// terminal slope        = gx*x + gm*m
/// ```
///
/// where `m` is the state mean and `my` the mean of the backward component
/// over the current measure. One Riccati integrator consumes these maps for
/// both the non-cooperative and the cooperative problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FbsdeMaps {
    pub bx: f64,
    pub by: f64,
    pub bm: f64,
    pub bmy: f64,
    pub b0: f64,
    pub fx: f64,
    pub fy: f64,
    pub fm: f64,
    pub fmy: f64,
    pub f0: f64,
    pub gx: f64,
    pub gm: f64,
}

/// Maps of the non-cooperative mean-field system: the drift is `b` with the
/// control replaced by `Lambda` (and the control mean by the `Lambda`-mean),
/// the driver is `dxf + dxb*y` at the optimal control, and the terminal
/// slope is `dxg`.
pub fn mfg_maps(spec: &GameSpec) -> Result<FbsdeMaps> {
    let c = spec.coeffs();
    let l = lambda_coeffs(spec)?;
    Ok(FbsdeMaps {
        bx: c.bx + c.ba * l.lx,
        by: c.ba * l.ly,
        bm: c.bm + c.ba * l.lm + c.bn * (l.lx + l.lm),
        bmy: c.bn * l.ly,
        b0: 0.0,
        fx: c.fax * l.lx + c.fxx,
        fy: c.fax * l.ly + c.bx,
        fm: c.fax * l.lm + c.fxm + c.fxn * (l.lx + l.lm),
        fmy: c.fxn * l.ly,
        f0: 0.0,
        gx: c.gxx,
        gm: c.gxm,
    })
}

/// Drift of the decoupled state dynamics,
/// `barB(t, x, mu) = b(t, x, Lambda(t, x, V(t,x,mu), mu), xi_mu)` with the
/// control marginal of `xi_mu` given by the `Lambda`-pushforward mean.
///
/// Evaluated by contracting the affine maps of [`mfg_maps`] against
/// `(x, V(t,x,mu), meanX, mean of V)`; the test suite checks this against the
/// direct composition of [`eval_drift_b`], [`eval_lambda`], and the field.
#[allow(non_snake_case)]
pub fn eval_barB(
    spec: &GameSpec,
    field: &AffineField,
    t: f64,
    x: f64,
    mu: &MeasureSummary,
) -> Result<f64> {
    let maps = mfg_maps(spec)?;
    let (p, r, s) = field.coeffs_at(t)?;
    let v = p * x + r * mu.mean_x + s;
    let mean_v = (p + r) * mu.mean_x + s;
    Ok(maps.bx * x + maps.by * v + maps.bm * mu.mean_x + maps.bmy * mean_v + maps.b0)
}

/// Pushes each atom of `mu` through the equilibrium control map
/// `x -> Lambda(t, x, V(t, x, mu), mu)`, returning the control-marginal
/// empirical measure with the same atom count and weights.
pub fn psi_pushforward(
    spec: &GameSpec,
    field: &AffineField,
    t: f64,
    mu: &EmpiricalMeasure,
) -> Result<EmpiricalMeasure> {
    if mu.is_empty() {
        return Err(Error::EmptyMeasure);
    }
    let (p, r, s) = field.coeffs_at(t)?;
    let lc = lambda_coeffs(spec)?;
    let mean = mu.mean();
    let pushed = mu
        .atoms()
        .iter()
        .map(|&x| {
            let v = p * x + r * mean + s;
            lc.lx * x + lc.ly * v + lc.lm * mean
        })
        .collect();
    Ok(EmpiricalMeasure::new(pushed))
}

/// Joint Lipschitz constant of the pushforward map on measures:
/// `W2(Psi(mu), Psi(nu)) <= C * W2(mu, nu)` with
/// `C = LipLambda * (1 + LipField)`, where `LipLambda` sums the absolute
/// minimizer coefficients and `LipField` is the largest `|p| + |r|` over the
/// grid.
pub fn psi_lipschitz_constant(spec: &GameSpec, field: &AffineField) -> Result<f64> {
    let lc = lambda_coeffs(spec)?;
    let lip_lambda = lc.lx.abs() + lc.ly.abs() + lc.lm.abs();
    Ok(lip_lambda * (1.0 + field.lipschitz_joint()))
}

/// Outcome of one assumption check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssumptionCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Collected standing-assumption checks for a spec.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub checks: Vec<AssumptionCheck>,
}

impl AssumptionReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Runs the five standing coefficient assumptions as numeric checks:
/// Lipschitz/growth bounds sampled at random points (A1), time homogeneity
/// of the split coefficients (A2), finite derivative constants (A3), strong
/// convexity in the control plus convex terminal state cost (A4), and
/// uniform ellipticity (A5).
pub fn check_assumptions(spec: &GameSpec) -> AssumptionReport {
    let c = spec.coeffs();
    let mut checks = Vec::new();

    // A1: affine drift and quadratic costs against sampled Lipschitz/growth bounds.
    let lb = c.bx.abs().max(c.ba.abs()).max(c.bm.abs()).max(c.bn.abs());
    let lf = c.faa.abs()
        + c.fax.abs()
        + c.fam.abs()
        + c.fxx.abs()
        + c.fxm.abs()
        + c.fmm.abs()
        + c.fxn.abs()
        + c.fnn.abs();
    let mut a1_ok = lb.is_finite() && lf.is_finite();
    let mut worst_ratio = 0.0_f64;
    for i in 0..200_u64 {
        let draw = |j: u64| 3.0 * crate::rng::standard_normal(0xA1, i, j);
        let (x, a, m, n) = (draw(0), draw(1), draw(2), draw(3));
        let (x2, a2, m2, n2) = (draw(4), draw(5), draw(6), draw(7));
        let xi = MeasureSummary::dirac(m, n);
        let xi2 = MeasureSummary::dirac(m2, n2);
        let lhs = (eval_drift_b(spec, 0.0, x, a, &xi) - eval_drift_b(spec, 0.0, x2, a2, &xi2)).abs();
        let rhs = lb * ((x - x2).abs() + (a - a2).abs() + (m - m2).abs() + (n - n2).abs());
        if lhs > rhs + 1e-9 {
            a1_ok = false;
        }
        let growth = (eval_cost_f(spec, 0.0, x, a, &xi).abs())
            / (lf.max(1e-300) * (1.0 + x * x + a * a + xi.m2_x + xi.m2_a));
        worst_ratio = worst_ratio.max(growth);
        if growth > 1.0 + 1e-9 {
            a1_ok = false;
        }
    }
    checks.push(AssumptionCheck {
        name: "A1".into(),
        passed: a1_ok,
        detail: format!("drift Lipschitz constant {lb:.6}, cost growth constant {lf:.6}, worst sampled growth ratio {worst_ratio:.3}"),
    });

    // A2: coefficients do not depend on time.
    let xi = MeasureSummary::dirac(0.7, -0.3);
    let a2_ok = (eval_drift_b(spec, 0.0, 1.1, 0.4, &xi) == eval_drift_b(spec, spec.horizon(), 1.1, 0.4, &xi))
        && (eval_cost_f(spec, 0.0, 1.1, 0.4, &xi) == eval_cost_f(spec, spec.horizon(), 1.1, 0.4, &xi));
    checks.push(AssumptionCheck {
        name: "A2".into(),
        passed: a2_ok,
        detail: "time-homogeneous coefficients; interaction split into state-mean and control-mean parts".into(),
    });

    // A3: derivative evaluators have finite Lipschitz constants.
    let deriv_const = [c.fax, c.fam, c.fxx, c.fxm, c.fmm, c.fxn, c.fnn, c.gxx, c.gxm, c.gmm];
    let a3_ok = deriv_const.iter().all(|v| v.is_finite());
    checks.push(AssumptionCheck {
        name: "A3".into(),
        passed: a3_ok,
        detail: "coefficient derivatives are affine with finite slopes".into(),
    });

    // A4: strong convexity in the control and convex terminal state cost.
    let gamma = control_convexity_gamma(spec);
    let a4_ok = gamma > 0.0 && c.gxx >= 0.0;
    checks.push(AssumptionCheck {
        name: "A4".into(),
        passed: a4_ok,
        detail: format!("control curvature gamma = {gamma}, terminal state curvature = {}", c.gxx),
    });

    // A5: uniform ellipticity.
    let a5_ok = spec.sigma() > 0.0;
    checks.push(AssumptionCheck {
        name: "A5".into(),
        passed: a5_ok,
        detail: format!("sigma = {}", spec.sigma()),
    });

    AssumptionReport { checks }
}

/// Numeric dissipativity check of the drift in the state variable:
/// `(x - x') * (b(x) - b(x')) <= -kb * (x - x')^2` sampled over random
/// pairs with frozen control and measure. Passing requires a strictly
/// negative sampled ratio; the detail reports the dissipation rate `kb`.
pub fn check_monotone_drift(spec: &GameSpec) -> AssumptionCheck {
    let xi = MeasureSummary::dirac(0.4, -0.2);
    let mut worst = f64::NEG_INFINITY;
    for i in 0..200_u64 {
        let x = 5.0 * crate::rng::standard_normal(0xA8, i, 0);
        let x2 = 5.0 * crate::rng::standard_normal(0xA8, i, 1);
        if (x - x2).abs() < 1e-8 {
            continue;
        }
        let db = eval_drift_b(spec, 0.0, x, 0.9, &xi) - eval_drift_b(spec, 0.0, x2, 0.9, &xi);
        worst = worst.max((x - x2) * db / ((x - x2) * (x - x2)));
    }
    AssumptionCheck {
        name: "A8".into(),
        passed: worst < -1e-9,
        detail: format!("sampled dissipation rate kb = {:.6}", -worst),
    }
}

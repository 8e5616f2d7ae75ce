//! Empirical measures on the real line and quadratic Wasserstein distances.
//!
//! Two routes compute the same distance:
//!
//! * [`w2_exact_small`] solves the optimal assignment problem on the squared
//!   cost matrix with a shortest-augmenting-path method. It makes no use of
//!   one-dimensional structure and serves as the exact oracle.
//! * [`w2_1d`] uses the quantile representation: for distributions on the
//!   line with convex transport cost, sorting both supports (or integrating
//!   the difference of quantile functions over a common refinement when the
//!   atom counts differ) attains the optimum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;

/// Largest support size accepted by the exact assignment oracle.
pub const EXACT_SUPPORT_LIMIT: usize = 64;

/// Uniformly weighted empirical measure on the real line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    atoms: Vec<f64>,
}

impl EmpiricalMeasure {
    /// Wraps a list of atoms (each carrying weight `1 / len`).
    pub fn new(atoms: Vec<f64>) -> Self {
        EmpiricalMeasure { atoms }
    }

    /// Atom locations in insertion order.
    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    /// Number of atoms.
    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    /// True when the measure has no atoms.
    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Mean of the atoms.
    pub fn mean(&self) -> f64 {
        crate::stats::mean(&self.atoms)
    }

    /// Second raw moment of the atoms.
    pub fn second_moment(&self) -> f64 {
        if self.atoms.is_empty() {
            return 0.0;
        }
        self.atoms.iter().map(|x| x * x).sum::<f64>() / self.atoms.len() as f64
    }

    /// Atoms sorted increasingly (quantile order).
    pub fn sorted_atoms(&self) -> Vec<f64> {
        let mut s = self.atoms.clone();
        s.sort_by(|a, b| a.total_cmp(b));
        s
    }

    /// Deterministic discretization of a Gaussian: `n` atoms at the quantiles
    /// `(i + 1/2) / n`. Used as a fixed reference when comparing ensembles to
    /// a continuous limit law.
    pub fn gaussian_quantile_grid(mean: f64, variance: f64, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyMeasure);
        }
        if !(variance >= 0.0) {
            return Err(Error::InvalidSpec { reason: format!("negative variance {variance}") });
        }
        let sd = variance.sqrt();
        let normal = statrs::distribution::Normal::new(0.0, 1.0)
            .expect("unit normal distribution is well defined");
        use statrs::distribution::ContinuousCDF;
        let atoms = (0..n)
            .map(|i| {
                let u = (i as f64 + 0.5) / n as f64;
                mean + sd * normal.inverse_cdf(u)
            })
            .collect();
        Ok(EmpiricalMeasure { atoms })
    }
}

/// Time-indexed family of empirical measures on a shared grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmpiricalPath {
    grid: TimeGrid,
    nodes: Vec<EmpiricalMeasure>,
}

impl EmpiricalPath {
    /// Builds a path, checking that there is one measure per grid node.
    pub fn new(grid: TimeGrid, nodes: Vec<EmpiricalMeasure>) -> Result<Self> {
        if nodes.len() != grid.num_nodes() {
            return Err(Error::DimensionMismatch {
                context: "empirical path nodes vs grid nodes".into(),
                expected: grid.num_nodes(),
                got: nodes.len(),
            });
        }
        Ok(EmpiricalPath { grid, nodes })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn nodes(&self) -> &[EmpiricalMeasure] {
        &self.nodes
    }
}

/// Quadratic Wasserstein distance between one-dimensional empirical measures
/// via the quantile representation. Supports of different sizes are compared
/// through the common refinement of their quantile partitions.
pub fn w2_1d(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64> {
    if mu.is_empty() || nu.is_empty() {
        return Err(Error::EmptyMeasure);
    }
    let a = mu.sorted_atoms();
    let b = nu.sorted_atoms();
    if a.len() == b.len() {
        let sq: f64 =
            a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
        return Ok(sq.sqrt());
    }
    // Quantile functions are piecewise constant with jumps at i/n and j/m;
    // integrate the squared difference exactly over the merged partition.
    let (n, m) = (a.len(), b.len());
    let mut total = 0.0;
    let mut u = 0.0_f64;
    let (mut i, mut j) = (0usize, 0usize);
    while i < n && j < m {
        let next_a = (i + 1) as f64 / n as f64;
        let next_b = (j + 1) as f64 / m as f64;
        let next = next_a.min(next_b);
        let diff = a[i] - b[j];
        total += diff * diff * (next - u);
        u = next;
        if next_a <= next {
            i += 1;
        }
        if next_b <= next {
            j += 1;
        }
    }
    Ok(total.sqrt())
}

/// Quadratic Wasserstein distance by exact optimal assignment on the squared
/// cost matrix. Requires equal atom counts and a support of at most
/// [`EXACT_SUPPORT_LIMIT`] atoms.
pub fn w2_exact_small(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64> {
    if mu.is_empty() || nu.is_empty() {
        return Err(Error::EmptyMeasure);
    }
    if mu.len() != nu.len() {
        return Err(Error::DimensionMismatch {
            context: "exact assignment needs equal atom counts".into(),
            expected: mu.len(),
            got: nu.len(),
        });
    }
    let n = mu.len();
    if n > EXACT_SUPPORT_LIMIT {
        return Err(Error::SizeLimit { got: n, limit: EXACT_SUPPORT_LIMIT });
    }
    let xs = mu.atoms();
    let ys = nu.atoms();
    let cost = |i: usize, j: usize| {
        let d = xs[i] - ys[j];
        d * d
    };
    let total = assignment_cost(n, cost);
    Ok((total / n as f64).sqrt())
}

/// Minimum-cost perfect assignment via shortest augmenting paths with dual
/// potentials (cubic in the support size). Indices passed to `cost` are
/// zero-based; internally rows and columns are shifted by one so index 0 can
/// serve as the virtual unmatched column.
fn assignment_cost(n: usize, cost: impl Fn(usize, usize) -> f64) -> f64 {
    let mut u = vec![0.0_f64; n + 1];
    let mut v = vec![0.0_f64; n + 1];
    let mut matched_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0usize;
        let mut min_slack = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < min_slack[j] {
                        min_slack[j] = cur;
                        way[j] = j0;
                    }
                    if min_slack[j] < delta {
                        delta = min_slack[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_slack[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=n).map(|j| cost(matched_row[j] - 1, j - 1)).sum()
}

/// Largest node-wise quadratic Wasserstein distance between two paths of
/// empirical measures on the same grid.
pub fn sup_path_w2(a: &EmpiricalPath, b: &EmpiricalPath) -> Result<f64> {
    a.grid().ensure_matches(b.grid(), "sup_path_w2 operands")?;
    let mut sup = 0.0_f64;
    for (ma, mb) in a.nodes().iter().zip(b.nodes()) {
        sup = sup.max(w2_1d(ma, mb)?);
    }
    Ok(sup)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use crate::rng::standard_normal;

    fn random_measure(seed: u64, n: usize, scale: f64, shift: f64) -> EmpiricalMeasure {
        EmpiricalMeasure::new(
            (0..n).map(|i| shift + scale * standard_normal(seed, i as u64, 0)).collect(),
        )
    }

    #[test]
    fn translation_of_support_moves_distance_by_the_shift() {
        let mu = EmpiricalMeasure::new(vec![0.0, 1.0, 2.0]);
        let nu = EmpiricalMeasure::new(vec![2.0, 3.0, 1.0]);
        assert_relative_eq!(w2_1d(&mu, &nu).unwrap(), 1.0, epsilon = 1e-15);
        assert_relative_eq!(w2_exact_small(&mu, &nu).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn single_atom_distance_is_absolute_difference() {
        let mu = EmpiricalMeasure::new(vec![-0.75]);
        let nu = EmpiricalMeasure::new(vec![1.5]);
        assert_relative_eq!(w2_1d(&mu, &nu).unwrap(), 2.25, epsilon = 1e-15);
    }

    #[test]
    fn unequal_counts_use_quantile_refinement() {
        // Quantile functions of {0,1} and {0,1,2} differ on [1/3,1/2) and
        // [2/3,1); the squared distance integrates to 1/6 + 1/3 = 1/2.
        let mu = EmpiricalMeasure::new(vec![0.0, 1.0]);
        let nu = EmpiricalMeasure::new(vec![0.0, 1.0, 2.0]);
        assert_relative_eq!(w2_1d(&mu, &nu).unwrap(), (0.5_f64).sqrt(), epsilon = 1e-14);
        assert_relative_eq!(w2_1d(&nu, &mu).unwrap(), (0.5_f64).sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn sorted_route_matches_exact_assignment_on_random_supports() {
        for trial in 0..20 {
            let n = 2 + (trial % 7) as usize * 3;
            let mu = random_measure(100 + trial, n, 1.0, 0.0);
            let nu = random_measure(200 + trial, n, 1.5, 0.4);
            let fast = w2_1d(&mu, &nu).unwrap();
            let exact = w2_exact_small(&mu, &nu).unwrap();
            assert_relative_eq!(fast, exact, epsilon = 1e-12, max_relative = 1e-12);
        }
    }

    #[test]
    fn metric_axioms_hold_on_random_triples() {
        for trial in 0..10 {
            let n = 8;
            let a = random_measure(300 + trial, n, 1.0, 0.0);
            let b = random_measure(400 + trial, n, 0.7, -0.3);
            let c = random_measure(500 + trial, n, 1.2, 0.5);
            let dab = w2_1d(&a, &b).unwrap();
            let dba = w2_1d(&b, &a).unwrap();
            let dac = w2_1d(&a, &c).unwrap();
            let dcb = w2_1d(&c, &b).unwrap();
            assert_relative_eq!(dab, dba, epsilon = 1e-13);
            assert_relative_eq!(w2_1d(&a, &a).unwrap(), 0.0, epsilon = 1e-15);
            assert!(dab <= dac + dcb + 1e-12, "triangle violated: {dab} > {dac} + {dcb}");
            assert!(dab >= 0.0);
        }
    }

    #[test]
    fn empty_and_oversized_inputs_are_rejected() {
        let empty = EmpiricalMeasure::new(vec![]);
        let one = EmpiricalMeasure::new(vec![0.0]);
        assert!(matches!(w2_1d(&empty, &one), Err(Error::EmptyMeasure)));
        assert!(matches!(w2_exact_small(&one, &empty), Err(Error::EmptyMeasure)));
        let big = EmpiricalMeasure::new(vec![0.0; 65]);
        let big2 = EmpiricalMeasure::new(vec![0.0; 65]);
        assert!(matches!(w2_exact_small(&big, &big2), Err(Error::SizeLimit { .. })));
        let two = EmpiricalMeasure::new(vec![0.0, 1.0]);
        assert!(matches!(w2_exact_small(&one, &two), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn path_distance_takes_the_worst_node() {
        let grid = TimeGrid::new(1.0, 2).unwrap();
        let a = EmpiricalPath::new(
            grid,
            vec![
                EmpiricalMeasure::new(vec![0.0, 0.0]),
                EmpiricalMeasure::new(vec![0.0, 0.0]),
                EmpiricalMeasure::new(vec![0.0, 0.0]),
            ],
        )
        .unwrap();
        let b = EmpiricalPath::new(
            grid,
            vec![
                EmpiricalMeasure::new(vec![0.1, 0.1]),
                EmpiricalMeasure::new(vec![2.0, 2.0]),
                EmpiricalMeasure::new(vec![0.5, 0.5]),
            ],
        )
        .unwrap();
        assert_relative_eq!(sup_path_w2(&a, &b).unwrap(), 2.0, epsilon = 1e-15);
        let other_grid = TimeGrid::new(1.0, 3).unwrap();
        let c = EmpiricalPath::new(
            other_grid,
            vec![EmpiricalMeasure::new(vec![0.0]); 4],
        )
        .unwrap();
        assert!(matches!(sup_path_w2(&a, &c), Err(Error::GridMismatch { .. })));
    }

    #[test]
    fn gaussian_quantile_grid_has_requested_moments() {
        let g = EmpiricalMeasure::gaussian_quantile_grid(1.5, 4.0, 4096).unwrap();
        assert_relative_eq!(g.mean(), 1.5, epsilon = 1e-10);
        // Quantile-grid discretization slightly shrinks the variance.
        let var = g.second_moment() - g.mean() * g.mean();
        assert_relative_eq!(var, 4.0, epsilon = 0.02);
    }
}

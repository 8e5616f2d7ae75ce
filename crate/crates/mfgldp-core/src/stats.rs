//! Small statistical and quadrature helpers shared by the experiment modules.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

/// Sample mean; 0 for an empty slice.
pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Unbiased sample variance; 0 for fewer than two samples.
pub fn sample_variance(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64
}

/// Standard error of the sample mean.
pub fn std_error(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    (sample_variance(values) / values.len() as f64).sqrt()
}

/// Linear interpolation percentile (`q` in [0, 1]) of unsorted data.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of empty slice");
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let h = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let w = h - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

/// Ordinary least-squares line fit with coefficient of determination.
#[derive(Debug, Clone, Copy)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Fits `y = slope * x + intercept` by least squares.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> LinearFit {
    assert_eq!(xs.len(), ys.len(), "linear_fit input lengths differ");
    assert!(xs.len() >= 2, "linear_fit needs at least two points");
    let n = xs.len() as f64;
    let mx = mean(xs);
    let my = mean(ys);
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    let _ = n;
    LinearFit { slope, intercept, r2 }
}

/// One-sided Mann-Kendall p-value against the alternative of an increasing
/// trend, using the normal approximation with continuity correction and the
/// tie-adjusted variance.
///
/// Small p-values indicate evidence of an increasing trend; values above a
/// significance threshold are consistent with "no increasing trend".
pub fn mann_kendall_increasing_p(values: &[f64]) -> f64 {
    let n = values.len();
    assert!(n >= 3, "Mann-Kendall needs at least three observations");
    let mut s: i64 = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            s += match values[j].total_cmp(&values[i]) {
                std::cmp::Ordering::Greater => 1,
                std::cmp::Ordering::Less => -1,
                std::cmp::Ordering::Equal => 0,
            };
        }
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mut tie_term = 0.0;
    let mut run = 1usize;
    for i in 1..=n {
        if i < n && sorted[i] == sorted[i - 1] {
            run += 1;
        } else {
            if run > 1 {
                let t = run as f64;
                tie_term += t * (t - 1.0) * (2.0 * t + 5.0);
            }
            run = 1;
        }
    }
    let nf = n as f64;
    let var = (nf * (nf - 1.0) * (2.0 * nf + 5.0) - tie_term) / 18.0;
    if var <= 0.0 {
        return 1.0;
    }
    let z = if s > 0 {
        (s as f64 - 1.0) / var.sqrt()
    } else if s < 0 {
        (s as f64 + 1.0) / var.sqrt()
    } else {
        0.0
    };
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    1.0 - normal.cdf(z)
}

/// Percentile bootstrap confidence interval for a statistic of i.i.d. samples.
///
/// Resampling is driven by a dedicated deterministic generator, so the
/// interval depends only on (values, estimator, resamples, seed, level).
pub fn bootstrap_ci(
    values: &[f64],
    estimator: impl Fn(&[f64]) -> f64,
    resamples: usize,
    seed: u64,
    level: f64,
) -> (f64, f64) {
    assert!(!values.is_empty(), "bootstrap of empty sample");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = values.len();
    let mut estimates = Vec::with_capacity(resamples);
    let mut scratch = vec![0.0; n];
    for _ in 0..resamples {
        for slot in scratch.iter_mut() {
            *slot = values[(rng.next_u64() % n as u64) as usize];
        }
        estimates.push(estimator(&scratch));
    }
    let alpha = (1.0 - level) / 2.0;
    (percentile(&estimates, alpha), percentile(&estimates, 1.0 - alpha))
}

/// Composite Simpson integration of node values on a uniform grid with
/// spacing `dt`; falls back to a 3/8 block on the last three intervals when
/// the interval count is odd, and to the trapezoid rule for a single
/// interval.
pub fn integrate_uniform(values: &[f64], dt: f64) -> f64 {
    let n = values.len().saturating_sub(1);
    match n {
        0 => 0.0,
        1 => 0.5 * dt * (values[0] + values[1]),
        _ => {
            let (simpson_end, mut total) = if n % 2 == 0 {
                (n, 0.0)
            } else {
                // 3/8 rule on the final three intervals.
                let tail = 3.0 * dt / 8.0
                    * (values[n - 3] + 3.0 * values[n - 2] + 3.0 * values[n - 1] + values[n]);
                (n - 3, tail)
            };
            if simpson_end >= 2 {
                let mut acc = values[0] + values[simpson_end];
                for (k, v) in values.iter().enumerate().take(simpson_end).skip(1) {
                    acc += if k % 2 == 1 { 4.0 * v } else { 2.0 * v };
                }
                total += dt / 3.0 * acc;
            } else if simpson_end == 1 {
                total += 0.5 * dt * (values[0] + values[1]);
            }
            total
        }
    }
}

/// Golden-section minimization of a unimodal function on [a, b].
pub fn golden_section_min(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> (f64, f64) {
    let inv_phi = 0.618_033_988_749_894_9_f64;
    let (mut a, mut b) = (a.min(b), a.max(b));
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a) > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

//! Convergence measures and checks over trajectories.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{Method, OptimizerConfig, Trajectory};
use crate::point::PointPair;
use crate::precond::{beta_t, gamma_bound, CurvatureSource, ScalingState, UpdateCadence};
use crate::problems::{ProblemKind, QuadraticModel, SaddleProblem};

/// One iteration's metrics row.
///
/// `r2_weighted` and `dist2` are `NaN` when the problem has no known solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub t: usize,
    pub r2_weighted: f64,
    pub dist2: f64,
    pub grad_norm2: f64,
    pub gap: Option<f64>,
    pub dhat_min: f64,
    pub dhat_max: f64,
    pub grad_calls: u64,
}

/// `sum_i D_hat_ii (z_i - z*_i)^2` over both blocks.
pub fn weighted_dist_sq(
    z: &PointPair,
    z_star: Option<&PointPair>,
    scaling: &ScalingState,
) -> Result<f64> {
    let zs = z_star
        .ok_or_else(|| Error::Precondition("weighted distance needs a known solution".into()))?;
    let dx = &z.x - &zs.x;
    let dy = &z.y - &zs.y;
    Ok(dx.component_mul(&dx).dot(&scaling.clipped_x)
        + dy.component_mul(&dy).dot(&scaling.clipped_y))
}

/// Minimizer of `1/2 u'Mu - r'u` over `|u| <= radius` for symmetric `M >= 0`
/// given as `M = Q diag(lambda) Q'`.
fn trust_region(
    eig_vals: &DVector<f64>,
    eig_vecs: &DMatrix<f64>,
    r: &DVector<f64>,
    radius: f64,
) -> DVector<f64> {
    let rt = eig_vecs.tr_mul(r);
    let norm_at = |lam: f64| -> f64 {
        rt.iter()
            .zip(eig_vals.iter())
            .map(|(ri, li)| {
                let den = li.max(0.0) + lam;
                if den > 0.0 {
                    (ri / den).powi(2)
                } else if *ri == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            })
            .sum::<f64>()
            .sqrt()
    };
    let solution = |lam: f64| -> DVector<f64> {
        let coeffs = DVector::from_iterator(
            rt.len(),
            rt.iter().zip(eig_vals.iter()).map(|(ri, li)| {
                let den = li.max(0.0) + lam;
                if den > 0.0 {
                    ri / den
                } else {
                    0.0
                }
            }),
        );
        eig_vecs * coeffs
    };
    if norm_at(0.0) <= radius {
        return solution(0.0);
    }
    let lam_min = eig_vals
        .iter()
        .fold(f64::INFINITY, |a, &b| a.min(b.max(0.0)));
    let (mut lo, mut hi) = (0.0, (r.norm() / radius - lam_min).max(0.0) + f64::EPSILON);
    // Newton on 1/|u(lam)| - 1/radius, which is concave and increasing in lam,
    // kept inside the bisection bracket.
    let mut lam = hi;
    for _ in 0..200 {
        let n = norm_at(lam);
        if (n - radius).abs() <= 1e-14 * radius {
            break;
        }
        if n > radius {
            lo = lam;
        } else {
            hi = lam;
        }
        let dn: f64 = -rt
            .iter()
            .zip(eig_vals.iter())
            .map(|(ri, li)| ri * ri / (li.max(0.0) + lam).powi(3))
            .sum::<f64>()
            / n;
        let phi = 1.0 / n - 1.0 / radius;
        let dphi = -dn / (n * n);
        let newton = lam - phi / dphi;
        lam = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= 1e-16 * hi.max(1.0) {
            break;
        }
    }
    solution(lam)
}

/// Restricted duality gap over Euclidean balls of radius `omega` around `z*`.
///
/// Builds the eigendecompositions once, so it can be evaluated every iteration.
#[derive(Debug, Clone)]
pub struct GapEvaluator {
    kind: ProblemKind,
    model: QuadraticModel,
    z_star: PointPair,
    a_eig: (DVector<f64>, DMatrix<f64>),
    c_eig: (DVector<f64>, DMatrix<f64>),
}

impl GapEvaluator {
    pub fn new(problem: &SaddleProblem) -> Result<Self> {
        let model = problem
            .quadratic()
            .ok_or(Error::Unsupported("minty"))?
            .clone();
        let z_star = problem
            .z_star()
            .cloned()
            .ok_or_else(|| Error::Precondition("gap needs a known solution".into()))?;
        let a = model.a.clone().symmetric_eigen();
        let c = model.c.clone().symmetric_eigen();
        Ok(GapEvaluator {
            kind: problem.kind(),
            model,
            z_star,
            a_eig: (a.eigenvalues, a.eigenvectors),
            c_eig: (c.eigenvalues, c.eigenvectors),
        })
    }

    pub fn gap(&self, z: &PointPair, omega: f64) -> Result<f64> {
        if !(omega > 0.0) || !omega.is_finite() {
            return Err(Error::InvalidRegion(format!(
                "radius must be positive, got {omega}"
            )));
        }
        let m = &self.model;
        let zs = &self.z_star;
        if self.kind == ProblemKind::Bilinear {
            let btx = m.b.tr_mul(&z.x);
            let by = &m.b * &z.y;
            return Ok(btx.dot(&zs.y) - zs.x.dot(&by) + omega * (btx.norm() + by.norm()));
        }
        // max over y' = y* + u of f(x, y'): minimize 1/2 u'Cu - r'u, r = B'x - c - C y*
        let ry = m.b.tr_mul(&z.x) - &m.c_vec - &m.c * &zs.y;
        let uy = trust_region(&self.c_eig.0, &self.c_eig.1, &ry, omega);
        // min over x' = x* + u of f(x', y): minimize 1/2 u'Au - r'u, r = -(A x* + B y + a)
        let rx = -(&m.a * &zs.x + &m.b * &z.y + &m.a_vec);
        let ux = trust_region(&self.a_eig.0, &self.a_eig.1, &rx, omega);
        let y_best = &zs.y + uy;
        let x_best = &zs.x + ux;
        Ok(m.value(&z.x, &y_best) - m.value(&x_best, &z.y))
    }
}

/// `max_{y' in Y} f(x, y') - min_{x' in X} f(x', y)` with `X x Y` the radius-`omega`
/// balls around `z*`. Closed form for bilinear problems; a trust-region solve
/// (secular equation, relative tolerance well below `1e-10`) for quadratics.
pub fn gap_restricted(problem: &SaddleProblem, z_avg: &PointPair, omega: f64) -> Result<f64> {
    GapEvaluator::new(problem)?.gap(z_avg, omega)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionViolation {
    pub t: usize,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    pub passed: bool,
    pub steps_checked: usize,
    pub gamma_bound: f64,
    /// Largest `R^2_{t+1} / bound_t` seen.
    pub worst_ratio: f64,
    pub first_violation: Option<ContractionViolation>,
}

/// Checks the deterministic strongly-monotone recursion
/// `R^2_{t+1} <= (1 - gamma mu / G + (1 - beta_{t+1}) C) R^2_t + 1e-10 R^2_0`
/// on every consecutive pair of records.
pub fn contraction_check(
    traj: &Trajectory,
    problem: &SaddleProblem,
    config: &OptimizerConfig,
) -> Result<ContractionReport> {
    if config.method != Method::ExtraGradient {
        return Err(Error::Precondition(
            "contraction check applies to extra-gradient runs".into(),
        ));
    }
    if problem.sigma() != 0.0 {
        return Err(Error::Precondition(
            "contraction check needs a deterministic oracle (sigma = 0)".into(),
        ));
    }
    if config.scaling.cadence != (UpdateCadence::Probabilistic { p: 1.0 }) {
        return Err(Error::Precondition(
            "contraction check needs p = 1 preconditioner updates".into(),
        ));
    }
    if !(problem.mu() > 0.0) {
        return Err(Error::Precondition("contraction check needs mu > 0".into()));
    }
    let radius = traj
        .records
        .iter()
        .map(|r| r.dist2)
        .fold(0.0, f64::max)
        .sqrt();
    let gamma_b = match config.scaling.source {
        CurvatureSource::Hutchinson => gamma_bound(CurvatureSource::Hutchinson, problem, None)?,
        CurvatureSource::GradSquare => {
            gamma_bound(CurvatureSource::GradSquare, problem, Some(radius))?
        }
    };
    let c = config.scaling.growth_constant(gamma_b, 1.0);
    let base = 1.0 - config.gamma * problem.mu() / gamma_b;
    let slack = 1e-10 * traj.records.first().map_or(0.0, |r| r.r2_weighted);
    let mut report = ContractionReport {
        passed: true,
        steps_checked: 0,
        gamma_bound: gamma_b,
        worst_ratio: 0.0,
        first_violation: None,
    };
    for pair in traj.records.windows(2) {
        let (now, next) = (&pair[0], &pair[1]);
        let beta_next = beta_t(config.scaling.schedule, config.scaling.beta, next.t as u64);
        let rhs = (base + (1.0 - beta_next) * c) * now.r2_weighted + slack;
        report.steps_checked += 1;
        if rhs > 0.0 {
            report.worst_ratio = report.worst_ratio.max(next.r2_weighted / rhs);
        }
        if !(next.r2_weighted <= rhs) && report.first_violation.is_none() {
            report.passed = false;
            report.first_violation = Some(ContractionViolation {
                t: next.t,
                lhs: next.r2_weighted,
                rhs,
            });
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateMode {
    /// Slope of `ln(value)` against `t`.
    Linear,
    /// Slope of `ln(value)` against `ln(t)`.
    LogLog,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// Entries below `1e-300` that were raised to it before taking logs.
    pub floored: usize,
}

const LOG_FLOOR: f64 = 1e-300;

/// Least-squares slope of `ln(y)` against `x` (linear) or `ln(x)` (log-log).
pub fn fit_points(xs: &[f64], ys: &[f64], mode: RateMode) -> Result<RateFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::invalid(
            "rate fit needs at least two (x, y) pairs of equal length",
        ));
    }
    let mut floored = 0;
    let ly: Vec<f64> = ys
        .iter()
        .map(|&y| {
            if y < LOG_FLOOR || y.is_nan() {
                floored += 1;
                LOG_FLOOR.ln()
            } else {
                y.ln()
            }
        })
        .collect();
    let lx: Vec<f64> = match mode {
        RateMode::Linear => xs.to_vec(),
        RateMode::LogLog => {
            if xs.iter().any(|&x| !(x > 0.0)) {
                return Err(Error::invalid("log-log fit needs positive abscissae"));
            }
            xs.iter().map(|x| x.ln()).collect()
        }
    };
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("rate fit needs distinct abscissae"));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    if floored > 0 {
        log::warn!("rate fit floored {floored} non-positive entries to {LOG_FLOOR:e}");
    }
    Ok(RateFit {
        slope,
        intercept: my - slope * mx,
        floored,
    })
}

/// Fit over the last `window` entries of a per-iteration series. The abscissa
/// is the index `t` (linear) or `t + 1` (log-log).
pub fn fit_rate(series: &[f64], window: usize, mode: RateMode) -> Result<RateFit> {
    if window < 2 || window > series.len() {
        return Err(Error::invalid(format!(
            "window must lie in [2, {}], got {window}",
            series.len()
        )));
    }
    let start = series.len() - window;
    let xs: Vec<f64> = (start..series.len())
        .map(|t| match mode {
            RateMode::Linear => t as f64,
            RateMode::LogLog => (t + 1) as f64,
        })
        .collect();
    fit_points(&xs, &series[start..], mode)
}

/// Window that discards the leading 10% burn-in.
pub fn default_window(len: usize) -> usize {
    len - len / 10
}

/// `(1 - 1/T)^{sqrt T} <= 1 - 1/(2 sqrt T)` in double precision, with `1e-15` slack.
pub fn check_scalar_lemma(t: u64) -> bool {
    assert!(t >= 1, "T must be >= 1");
    let tf = t as f64;
    let lhs = (1.0 - 1.0 / tf).powf(tf.sqrt());
    let rhs = 1.0 - 1.0 / (2.0 * tf.sqrt());
    lhs <= rhs + 1e-15
}

/// Median of `r2_weighted` over the last 20% of records.
pub fn noise_floor(records: &[RunRecord]) -> Result<f64> {
    let tail = records.len() / 5;
    if tail == 0 {
        return Err(Error::invalid("too few records for a plateau estimate"));
    }
    let mut v: Vec<f64> = records[records.len() - tail..]
        .iter()
        .map(|r| r.r2_weighted)
        .collect();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Ok(if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::precond::ScalingConfig;
    use crate::problems::{bilinear_from_matrix, make_quadratic, QuadraticParts};
    use approx::assert_abs_diff_eq;
    use nalgebra::dmatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn weighted_distance_examples() {
        let id = ScalingState::identity(1, 1);
        let zs = PointPair::zeros(1, 1);
        let z = PointPair::from_slices(&[3.0], &[4.0]).unwrap();
        assert_eq!(weighted_dist_sq(&zs, Some(&zs), &id).unwrap(), 0.0);
        assert_eq!(weighted_dist_sq(&z, Some(&zs), &id).unwrap(), 25.0);
        let s = ScalingState::new(ScalingConfig::oasis(), 1, 1)
            .unwrap()
            .with_raw(DVector::from_element(1, 2.0), DVector::from_element(1, 0.5))
            .unwrap();
        let z = PointPair::from_slices(&[1.0], &[2.0]).unwrap();
        assert_eq!(weighted_dist_sq(&z, Some(&zs), &s).unwrap(), 4.0);
        assert!(weighted_dist_sq(&z, None, &s).is_err());
    }

    #[test]
    fn bilinear_gap_examples() {
        let p = bilinear_from_matrix(DMatrix::identity(2, 2), 0).unwrap();
        let z = PointPair::from_slices(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert_abs_diff_eq!(gap_restricted(&p, &z, 1.0).unwrap(), 2.0, epsilon = 1e-14);
        assert_eq!(
            gap_restricted(&p, &PointPair::zeros(2, 2), 1.0).unwrap(),
            0.0
        );
        let p = bilinear_from_matrix(dmatrix![2.0, 0.0; 0.0, 1.0], 0).unwrap();
        let z = PointPair::from_slices(&[0.0, 0.0], &[1.0, 0.0]).unwrap();
        assert_abs_diff_eq!(gap_restricted(&p, &z, 3.0).unwrap(), 6.0, epsilon = 1e-14);
        assert!(matches!(
            gap_restricted(&p, &z, 0.0),
            Err(Error::InvalidRegion(_))
        ));
    }

    #[test]
    fn gap_unsupported_for_minty() {
        let p = crate::problems::make_minty(1).unwrap();
        assert!(matches!(
            gap_restricted(&p, &PointPair::zeros(1, 1), 1.0),
            Err(Error::Unsupported(_))
        ));
    }

    /// Brute-force ball maximization by dense sampling of the sphere and interior.
    fn brute_force_gap(p: &SaddleProblem, z: &PointPair, omega: f64, n: usize, seed: u64) -> f64 {
        let q = p.quadratic().unwrap();
        let zs = p.z_star().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut best_max = f64::NEG_INFINITY;
        let mut best_min = f64::INFINITY;
        let draw = |len: usize, rng: &mut ChaCha8Rng| {
            let v = DVector::from_fn(len, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            let r = omega * rng.random::<f64>().powf(0.25);
            v.normalize() * r
        };
        for _ in 0..n {
            let y = &zs.y + draw(zs.y.len(), &mut rng);
            best_max = best_max.max(q.value(&z.x, &y));
            let x = &zs.x + draw(zs.x.len(), &mut rng);
            best_min = best_min.min(q.value(&x, &z.y));
        }
        best_max - best_min
    }

    #[test]
    fn quadratic_gap_matches_sampling() {
        let p = make_quadratic(2, 2, 0.5, 3.0, 4).unwrap();
        let zs = p.z_star().unwrap();
        for (shift, omega) in [(0.3, 1.0), (2.0, 0.5), (0.0, 2.0)] {
            let z = PointPair {
                x: &zs.x + DVector::from_element(2, shift),
                y: &zs.y - DVector::from_element(2, shift),
            };
            let exact = gap_restricted(&p, &z, omega).unwrap();
            let sampled = brute_force_gap(&p, &z, omega, 200_000, 9);
            assert!(exact >= sampled - 1e-10, "{exact} < {sampled}");
            assert!(
                exact - sampled < 1e-2 * (1.0 + exact),
                "{exact} vs {sampled}"
            );
        }
        assert!(gap_restricted(&p, zs, 1.0).unwrap().abs() < 1e-10);
    }

    #[test]
    fn quadratic_gap_interior_solution_is_unconstrained_optimum() {
        let p = QuadraticParts::new(
            dmatrix![1.0],
            dmatrix![0.0],
            dmatrix![1.0],
            DVector::from_element(1, -1.0),
            DVector::zeros(1),
        )
        .mu(1.0)
        .build()
        .unwrap();
        // f = x^2/2 - x - y^2/2; at (x, y) = (2, 1): max_y f(2, y) = 0, min_x f(x, 1) = -1
        let z = PointPair::from_slices(&[2.0], &[1.0]).unwrap();
        assert_abs_diff_eq!(gap_restricted(&p, &z, 10.0).unwrap(), 1.0, epsilon = 1e-12);
        // with radius 0.5 the y-max is pinned to |y'| = 0.5 (toward 0 from y* = 0 it's interior)
        // and the x-min to x' = 1 (interior), so the gap is unchanged
        assert_abs_diff_eq!(gap_restricted(&p, &z, 0.5).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn fit_rate_examples() {
        let f = fit_rate(&[1.0, 0.5, 0.25, 0.125], 4, RateMode::Linear).unwrap();
        assert_abs_diff_eq!(f.slope, -(2f64.ln()), epsilon = 1e-12);
        let f = fit_rate(&[3.0; 10], 10, RateMode::Linear).unwrap();
        assert_abs_diff_eq!(f.slope, 0.0, epsilon = 1e-15);
        let power: Vec<f64> = (1..=1000).map(|t| 5.0 * (t as f64).powf(-1.5)).collect();
        let f = fit_rate(&power, default_window(power.len()), RateMode::LogLog).unwrap();
        assert_abs_diff_eq!(f.slope, -1.5, epsilon = 1e-9);
        assert_eq!(f.floored, 0);
        assert!(fit_rate(&[1.0], 1, RateMode::Linear).is_err());
    }

    #[test]
    fn fit_rate_floors_zeros() {
        let f = fit_rate(&[1.0, 0.0, 1e-320], 3, RateMode::Linear).unwrap();
        assert_eq!(f.floored, 2);
        assert!(f.slope.is_finite());
    }

    #[test]
    fn scalar_lemma_examples() {
        assert!(check_scalar_lemma(1));
        assert!(check_scalar_lemma(4));
        assert_abs_diff_eq!(0.75f64.powf(2.0), 0.5625, epsilon = 1e-16);
        for t in (1..=2000).chain([10_000, 999_999, 1_000_000]) {
            assert!(check_scalar_lemma(t), "T = {t}");
        }
    }

    #[test]
    fn noise_floor_is_tail_median() {
        let recs: Vec<RunRecord> = (0..10)
            .map(|t| RunRecord {
                t,
                r2_weighted: [9.0, 9.0, 9.0, 9.0, 9.0, 9.0, 9.0, 9.0, 1.0, 3.0][t],
                dist2: 0.0,
                grad_norm2: 0.0,
                gap: None,
                dhat_min: 1.0,
                dhat_max: 1.0,
                grad_calls: 0,
            })
            .collect();
        assert_eq!(noise_floor(&recs).unwrap(), 2.0);
        assert!(noise_floor(&recs[..3]).is_err());
    }
}

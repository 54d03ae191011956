//! Scalar theory: the replica potential and scalar state evolution.
//!
//! The potential is
//!
//! ```text
//! Psi(q; b) = q^2/4 - (E[Theta^2] + b) q / 2 + Info(q)
//! Info(q)   = -E log{ sum_j w_j exp(-(Y - sqrt(q) theta_j)^2 / 2) } - 1/2,
//! ```
//!
//! with `Y = sqrt(q) Theta + G` under the prior and an independent standard
//! normal. The scalar state-evolution map is
//!
//! ```text
//! SE(q) = E{ E[Theta | q Theta + sqrt(q) G]^2 },
//! ```
//!
//! whose derivative relation `Psi'(q) = (q - SE(q))/2` (a consequence of the
//! I-MMSE theorem) makes stationary points of the potential and fixed points
//! of state evolution the same set. The globally optimal overlap `q_bayes`
//! minimizes `Psi(.; 0)`; the algorithmic overlap `q_amp` is the limit of the
//! recursion `q_{t+1} = SE(q_t)` started from `q_0 = 0`.

use crate::error::{Error, Result};
use crate::prior::{bayes_denoiser, expect_theta_g, DiscretePrior, Quadrature};

/// Mutual information between the signal and the scalar Gaussian channel at
/// signal-to-noise ratio `q`. `info(0) = 0` exactly.
pub fn info(prior: &DiscretePrior, quad: &Quadrature, q: f64) -> f64 {
    assert!(q >= 0.0, "snr parameter q must be nonnegative, got {q}");
    if q == 0.0 {
        return 0.0;
    }
    let sq = q.sqrt();
    let atoms = prior.atoms();
    let weights = prior.weights();
    let log_partition = |y: f64| -> f64 {
        let mut max_e = f64::NEG_INFINITY;
        let exps: Vec<f64> = atoms
            .iter()
            .zip(weights)
            .map(|(&a, &w)| {
                let e = w.ln() - 0.5 * (y - sq * a) * (y - sq * a);
                max_e = max_e.max(e);
                e
            })
            .collect();
        let sum: f64 = exps.iter().map(|e| (e - max_e).exp()).sum();
        max_e + sum.ln()
    };
    -expect_theta_g(prior, quad, |theta, g| log_partition(sq * theta + g)) - 0.5
}

/// The potential `Psi(q; b)`. `psi(0, b) = 0` exactly for every `b`.
pub fn psi(prior: &DiscretePrior, quad: &Quadrature, q: f64, b: f64) -> f64 {
    0.25 * q * q - 0.5 * (prior.second_moment() + b) * q + info(prior, quad, q)
}

/// One application of the scalar state-evolution map.
///
/// `se_map(0) = E[Theta]^2` exactly; values never exceed `E[Theta^2]`.
pub fn se_map(prior: &DiscretePrior, quad: &Quadrature, q: f64) -> f64 {
    assert!(q >= 0.0, "snr parameter q must be nonnegative, got {q}");
    if q == 0.0 {
        let m = prior.mean();
        return m * m;
    }
    let sq = q.sqrt();
    expect_theta_g(prior, quad, |theta, g| {
        let f = bayes_denoiser(prior, q, q * theta + sq * g);
        f * f
    })
}

/// Scalar state-evolution trajectory from `q_0 = 0`.
#[derive(Debug, Clone)]
pub struct SETrace {
    /// Iterates `q_0, q_1, ..., q_T`.
    pub qs: Vec<f64>,
    /// Predicted mean-square error of the iteration-`t` estimate,
    /// `E[Theta^2] - q_{t+1}`, for `t = 0..T-1`.
    pub mse: Vec<f64>,
    /// Final iterate.
    pub q_amp: f64,
    /// Whether `|q_{t+1} - q_t| < tol` was reached before `max_iters`.
    pub converged: bool,
    /// Set when the prior mean vanishes: `q = 0` is then a fixed point and
    /// the trajectory never leaves it.
    pub zero_mean_warning: bool,
}

/// Iterate `q_{t+1} = SE(q_t)` from zero.
///
/// Runs until the step size drops below `tol` or `max_iters` applications of
/// the map have been made; `tol = 0` forces exactly `max_iters` steps. The
/// iterates are nondecreasing and bounded by `E[Theta^2]`.
pub fn se_trajectory(
    prior: &DiscretePrior,
    quad: &Quadrature,
    max_iters: usize,
    tol: f64,
) -> SETrace {
    let m2 = prior.second_moment();
    let mut qs = vec![0.0];
    let mut converged = false;
    for _ in 0..max_iters {
        let q = *qs.last().expect("non-empty");
        let next = se_map(prior, quad, q);
        qs.push(next);
        if (next - q).abs() < tol {
            converged = true;
            break;
        }
    }
    let mse = qs[1..].iter().map(|q| m2 - q).collect();
    SETrace {
        q_amp: *qs.last().expect("non-empty"),
        mse,
        converged,
        zero_mean_warning: prior.mean() == 0.0,
        qs,
    }
}

/// Scan of the potential on `[0, E[Theta^2]]`.
#[derive(Debug, Clone)]
pub struct PotentialProfile {
    /// Grid of q values, ascending.
    pub grid: Vec<f64>,
    /// `Psi(q; 0)` along the grid.
    pub psi: Vec<f64>,
    /// Stationary points located by bisection on `SE(q) - q`.
    pub stationary: Vec<f64>,
    /// Global minimizer.
    pub q_bayes: f64,
    /// Set when the finite-difference curvature at the minimizer is below
    /// 1e-6 in magnitude, indicating a near-degenerate minimum.
    pub degenerate_curvature: bool,
}

fn golden_section_min(mut f: impl FnMut(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    const INVPHI: f64 = 0.618_033_988_749_894_8;
    let mut c = b - INVPHI * (b - a);
    let mut d = a + INVPHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INVPHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INVPHI * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

fn bisect_fixed_point(
    prior: &DiscretePrior,
    quad: &Quadrature,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
) -> f64 {
    let g = |q: f64| se_map(prior, quad, q) - q;
    let mut glo = g(lo);
    for _ in 0..200 {
        if hi - lo < tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let gm = g(mid);
        if (gm >= 0.0) == (glo >= 0.0) {
            lo = mid;
            glo = gm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Globally optimal overlap: the minimizer of `Psi(.; 0)` over
/// `[0, E[Theta^2]]`.
///
/// A grid scan brackets the minimum and a golden-section pass (1e-10 in q)
/// refines it. Because stationary points of the potential are exactly the
/// fixed points of state evolution, the result is then polished onto the
/// bisection-located fixed point of `SE(q) - q` in the same basin, which is
/// accurate to machine precision rather than to the quadrature error of the
/// potential. Ties break toward smaller q. Also returns the scanned profile.
pub fn q_bayes(
    prior: &DiscretePrior,
    quad: &Quadrature,
    grid_size: usize,
) -> Result<(f64, PotentialProfile)> {
    if grid_size < 3 {
        return Err(Error::invalid("grid_size must be at least 3"));
    }
    let m2 = prior.second_moment();
    let step = m2 / (grid_size - 1) as f64;
    let grid: Vec<f64> = (0..grid_size).map(|i| i as f64 * step).collect();
    let psi_vals: Vec<f64> = grid.iter().map(|&q| psi(prior, quad, q, 0.0)).collect();

    // Stationary points: sign changes of SE(q) - q along the grid, refined by
    // bisection. The left endpoint is itself a fixed point when the prior
    // mean vanishes.
    let g_vals: Vec<f64> = grid.iter().map(|&q| se_map(prior, quad, q) - q).collect();
    let mut stationary = Vec::new();
    for i in 0..grid.len() - 1 {
        if g_vals[i] == 0.0 {
            stationary.push(grid[i]);
        } else if (g_vals[i] > 0.0) != (g_vals[i + 1] > 0.0) {
            stationary.push(bisect_fixed_point(
                prior,
                quad,
                grid[i],
                grid[i + 1],
                1e-13 * m2.max(1.0),
            ));
        }
    }
    if *g_vals.last().expect("non-empty") == 0.0 {
        stationary.push(m2);
    }
    stationary.dedup_by(|a, b| (*a - *b).abs() < 1e-9);

    // Candidates: the boundary plus every stationary point; golden-section
    // refinement of the best scanned cell is kept as a backstop in case the
    // sign scan missed a basin (for example a double root within one cell).
    let mut best = 0;
    for (i, &v) in psi_vals.iter().enumerate() {
        if v < psi_vals[best] {
            best = i;
        }
    }
    let lo = if best == 0 { 0.0 } else { grid[best - 1] };
    let hi = if best + 1 == grid.len() {
        m2
    } else {
        grid[best + 1]
    };
    let golden = golden_section_min(|q| psi(prior, quad, q, 0.0), lo, hi, 1e-10).clamp(0.0, m2);

    let mut candidates = vec![0.0];
    candidates.extend_from_slice(&stationary);
    candidates.sort_by(f64::total_cmp);
    let mut q_star = candidates[0];
    let mut best_val = psi(prior, quad, q_star, 0.0);
    for &c in &candidates[1..] {
        let v = psi(prior, quad, c, 0.0);
        if v < best_val {
            q_star = c;
            best_val = v;
        }
    }
    if psi(prior, quad, golden, 0.0) < best_val - 1e-9 {
        q_star = golden;
    }

    let h = (1e-4 * m2.max(1.0)).min(q_star.max(1e-4));
    let curvature = (psi(prior, quad, (q_star + h).min(m2), 0.0)
        - 2.0 * psi(prior, quad, q_star, 0.0)
        + psi(prior, quad, (q_star - h).max(0.0), 0.0))
        / (h * h);
    Ok((
        q_star,
        PotentialProfile {
            grid,
            psi: psi_vals,
            stationary,
            q_bayes: q_star,
            degenerate_curvature: curvature.abs() < 1e-6,
        },
    ))
}

/// Information-theoretically optimal mean-square error,
/// `E[Theta^2] - q_bayes`.
pub fn bayes_mse(prior: &DiscretePrior, quad: &Quadrature, grid_size: usize) -> Result<f64> {
    let (q, _) = q_bayes(prior, quad, grid_size)?;
    Ok(prior.second_moment() - q)
}

/// State-evolution prediction for the mean-square error of the iteration-`t`
/// AMP estimate: `E[Theta^2] - q_{t+1}`.
pub fn amp_mse(prior: &DiscretePrior, quad: &Quadrature, t: usize) -> f64 {
    let trace = se_trajectory(prior, quad, t + 1, 0.0);
    prior.second_moment() - trace.qs[t + 1]
}

/// State-evolution prediction for the limiting AMP mean-square error.
pub fn amp_mse_limit(prior: &DiscretePrior, quad: &Quadrature) -> f64 {
    let trace = se_trajectory(prior, quad, 4000, 1e-14);
    prior.second_moment() - trace.q_amp
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn setup() -> (DiscretePrior, Quadrature) {
        (
            DiscretePrior::three_point(1.0, 0.01).unwrap(),
            Quadrature::default_rule(),
        )
    }

    #[test]
    fn info_zero_is_exact() {
        let (p, quad) = setup();
        assert_eq!(info(&p, &quad, 0.0), 0.0);
        assert_eq!(psi(&p, &quad, 0.0, 0.7), 0.0);
        assert_eq!(psi(&p, &quad, 0.0, -2.0), 0.0);
    }

    #[test]
    fn info_is_nondecreasing_and_positive() {
        let (p, quad) = setup();
        let mut prev = 0.0;
        for i in 1..=30 {
            let q = i as f64 * 0.2;
            let v = info(&p, &quad, q);
            assert!(v > prev - 1e-12, "info not nondecreasing at q={q}");
            prev = v;
        }
    }

    #[test]
    fn psi_linear_in_b() {
        let (p, quad) = setup();
        for &q in &[0.3, 1.0, 1.7] {
            for &b in &[-1.0, 0.2, 2.0] {
                let diff = psi(&p, &quad, q, b) - psi(&p, &quad, q, 0.0);
                assert!(
                    (diff + 0.5 * b * q).abs() < 1e-13 * (1.0 + (b * q).abs()),
                    "q={q} b={b}"
                );
            }
        }
    }

    #[test]
    fn info_matches_monte_carlo() {
        // Rademacher prior at q = 4 against a direct simulation.
        let p = DiscretePrior::rademacher();
        let quad = Quadrature::default_rule();
        let v = info(&p, &quad, 4.0);

        let mut rng = crate::rng::stream(3, crate::rng::domain::SE_STREAM, 0);
        let n = 1_000_000;
        let (mut sum, mut sumsq) = (0.0, 0.0);
        for _ in 0..n {
            let theta: f64 = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            let g: f64 = rng.sample(rand_distr::StandardNormal);
            let y = 2.0 * theta + g;
            let lp = {
                let a = -0.5 * (y - 2.0) * (y - 2.0) + 0.5f64.ln();
                let b = -0.5 * (y + 2.0) * (y + 2.0) + 0.5f64.ln();
                let m = a.max(b);
                m + ((a - m).exp() + (b - m).exp()).ln()
            };
            let x = -lp - 0.5;
            sum += x;
            sumsq += x * x;
        }
        let mean = sum / n as f64;
        let se = ((sumsq / n as f64 - mean * mean) / n as f64).sqrt();
        assert!(
            (v - mean).abs() < 3.0 * se,
            "quadrature {v} vs MC {mean} +- {se}"
        );
    }

    #[test]
    fn se_map_at_zero_and_bounded() {
        let (p, quad) = setup();
        assert!((se_map(&p, &quad, 0.0) - 0.01).abs() < 1e-10);
        assert_eq!(se_map(&p, &quad, 0.0), p.mean() * p.mean());
        let m2 = p.second_moment();
        for i in 0..=40 {
            let q = i as f64 * m2 / 40.0;
            let v = se_map(&p, &quad, q);
            assert!(v <= m2 + 1e-10, "SE({q}) = {v} > m2");
            assert!(v >= 0.0);
        }
    }

    #[test]
    fn se_map_matches_monte_carlo() {
        let p = DiscretePrior::rademacher();
        let quad = Quadrature::default_rule();
        let v = se_map(&p, &quad, 1.0);
        let mut rng = crate::rng::stream(5, crate::rng::domain::SE_STREAM, 1);
        let n = 1_000_000;
        let (mut sum, mut sumsq) = (0.0, 0.0);
        for _ in 0..n {
            let theta: f64 = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            let g: f64 = rng.sample(rand_distr::StandardNormal);
            let x = (theta + g).tanh();
            sum += x * x;
            sumsq += x * x * x * x;
        }
        let mean = sum / n as f64;
        let se = ((sumsq / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((v - mean).abs() < 3.0 * se, "{v} vs {mean} +- {se}");
    }

    #[test]
    fn imm_se_derivative_identity() {
        // Psi'(q) = (q - SE(q))/2 ties info to the state-evolution map. The
        // identity holds up to quadrature error, so a high-order rule is used
        // here; at the default level 60 the residual is around 1e-6.
        let p = DiscretePrior::three_point(1.0, 0.01).unwrap();
        let quad = Quadrature::gauss_hermite(300).unwrap();
        let h = 1e-5;
        for i in 1..=12 {
            let q = 0.15 * i as f64;
            let fd = (psi(&p, &quad, q + h, 0.0) - psi(&p, &quad, q - h, 0.0)) / (2.0 * h);
            let analytic = 0.5 * (q - se_map(&p, &quad, q));
            assert!((fd - analytic).abs() < 1e-7, "q={q}: {fd} vs {analytic}");
        }
    }

    #[test]
    fn trajectory_monotone_and_converges() {
        let (p, quad) = setup();
        let trace = se_trajectory(&p, &quad, 2000, 1e-12);
        assert!(trace.converged);
        assert!(!trace.zero_mean_warning);
        assert_eq!(trace.qs[0], 0.0);
        for w in trace.qs.windows(2) {
            assert!(w[1] >= w[0] - 1e-12, "not nondecreasing: {w:?}");
        }
        let m2 = p.second_moment();
        assert!(trace.q_amp <= m2 + 1e-10);
        let resid = se_map(&p, &quad, trace.q_amp) - trace.q_amp;
        assert!(resid.abs() < 1e-11, "fixed-point residual {resid}");
        assert!((trace.mse[0] - (m2 - trace.qs[1])).abs() < 1e-15);
    }

    #[test]
    fn trajectory_zero_mean_stays_at_zero() {
        let p = DiscretePrior::rademacher();
        let quad = Quadrature::default_rule();
        let trace = se_trajectory(&p, &quad, 50, 1e-12);
        assert!(trace.zero_mean_warning);
        assert_eq!(trace.q_amp, 0.0);
        assert!(trace.qs.iter().all(|&q| q == 0.0));
    }

    #[test]
    fn trajectory_matches_bisection_oracle() {
        // Independent location of the first fixed point reached from 0+.
        let (p, quad) = setup();
        let trace = se_trajectory(&p, &quad, 4000, 1e-14);
        let g = |q: f64| se_map(&p, &quad, q) - q;
        let mut lo = 1e-9;
        assert!(g(lo) > 0.0);
        let mut hi = lo;
        let step = 1e-3;
        while g(hi) > 0.0 {
            lo = hi;
            hi += step;
            assert!(hi < 4.0, "no sign change found");
        }
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if g(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let oracle = 0.5 * (lo + hi);
        assert!(
            (trace.q_amp - oracle).abs() < 1e-8,
            "trajectory {} vs bisection {}",
            trace.q_amp,
            oracle
        );
    }

    #[test]
    fn q_bayes_is_stationary_and_dominates_q_amp() {
        let quad = Quadrature::default_rule();
        for &(s, eps) in &[(0.5, 0.01), (1.0, 0.01), (2.5, 0.01), (4.0, 0.25)] {
            let p = DiscretePrior::three_point(s, eps).unwrap();
            let (qb, profile) = q_bayes(&p, &quad, 2000).unwrap();
            let trace = se_trajectory(&p, &quad, 4000, 1e-14);
            assert!(
                qb >= trace.q_amp - 1e-9,
                "s={s}: q_bayes {qb} < q_amp {}",
                trace.q_amp
            );
            if qb > 1e-8 {
                let resid = se_map(&p, &quad, qb) - qb;
                assert!(resid.abs() < 1e-6, "s={s}: stationarity residual {resid}");
            }
            assert_eq!(profile.grid.len(), 2000);
            assert_eq!(profile.q_bayes, qb);
        }
    }

    #[test]
    fn q_bayes_equals_q_amp_at_high_snr() {
        let quad = Quadrature::default_rule();
        let p = DiscretePrior::three_point(10.0, 0.01).unwrap();
        let (qb, _) = q_bayes(&p, &quad, 2000).unwrap();
        let trace = se_trajectory(&p, &quad, 4000, 1e-14);
        assert!(
            (qb - trace.q_amp).abs() < 1e-6,
            "q_bayes {qb} vs q_amp {}",
            trace.q_amp
        );
    }

    #[test]
    fn mse_accessors() {
        let (p, quad) = setup();
        let m2 = p.second_moment();
        let t5 = amp_mse(&p, &quad, 5);
        let trace = se_trajectory(&p, &quad, 6, 0.0);
        assert!((t5 - (m2 - trace.qs[6])).abs() < 1e-15);
        let lim = amp_mse_limit(&p, &quad);
        assert!(lim <= t5 + 1e-12);
        let bm = bayes_mse(&p, &quad, 2000).unwrap();
        assert!(bm <= lim + 1e-9);
        // Iteration-0 estimate is the prior mean; its MSE is the variance.
        let t0 = amp_mse(&p, &quad, 0);
        assert!((t0 - p.variance()).abs() < 1e-12);
    }

    #[test]
    fn grid_size_validation() {
        let (p, quad) = setup();
        assert!(q_bayes(&p, &quad, 2).is_err());
    }
}

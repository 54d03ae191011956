//! The AMP iteration with Onsager correction, its Bayes and polynomial
//! specializations, and the matching vector state evolution.
//!
//! The iteration updates an `n x dim` state by
//! `x^{t+1} = (1/sqrt n) Y F_t(x^t) - F_{t-1}(x^{t-1}) B_t^T`, starting from
//! `x^0 = 0` with `B_0 = 0`. State evolution tracks the law of a single row,
//! `x_i^t ~ mu_t theta_i + G_t` with `G_t ~ N(0, Sigma_t)`, and supplies the
//! Onsager matrices `B_t = E[dF_t(mu_t Theta + G_t)]` nonrandomly; an
//! empirical variant and a disabled variant exist for comparison and for
//! demonstrating that the correction is load-bearing.

use crate::error::{Error, Result};
use crate::nonlin::{BayesDenoiser, Nonlinearity, Polynomial};
use crate::prior::{bayes_denoiser, denoiser_derivative, DiscretePrior, Quadrature};
use crate::rng::{domain, stream};
use crate::scalar_theory::se_trajectory;
use crate::model::Observation;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

/// Node-count guard for tensor-product quadrature in [`vector_se`].
pub const MAX_TENSOR_NODES: f64 = 1e7;

/// The AMP state after `t` iterations.
#[derive(Debug, Clone)]
pub struct AmpState {
    pub t: usize,
    /// `n x dim` iterate `x^t`.
    pub x: DMatrix<f64>,
    /// `F_{t-1}(x^{t-1})`; zero at `t = 0`.
    pub prev_f: DMatrix<f64>,
    /// The Onsager matrix used to produce this state; zero at `t = 0`.
    pub onsager: DMatrix<f64>,
}

impl AmpState {
    /// Uninformative initialization `x^0 = 0`, `B_0 = 0`.
    pub fn init(n: usize, dim: usize) -> Self {
        AmpState {
            t: 0,
            x: DMatrix::zeros(n, dim),
            prev_f: DMatrix::zeros(n, dim),
            onsager: DMatrix::zeros(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }
}

/// Apply a nonlinearity to every row of an `n x dim` matrix.
pub fn apply_rowwise(f: &dyn Nonlinearity, x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let d = f.dim();
    assert_eq!(x.ncols(), d, "row width does not match nonlinearity dim");
    let mut out = DMatrix::zeros(n, d);
    let mut xi = vec![0.0; d];
    let mut oi = vec![0.0; d];
    for i in 0..n {
        for a in 0..d {
            xi[a] = x[(i, a)];
        }
        f.evaluate(&xi, &mut oi);
        for a in 0..d {
            out[(i, a)] = oi[a];
        }
    }
    out
}

/// Average Jacobian `(1/n) sum_i dF(x_i)` over the rows of `x`.
pub fn empirical_onsager(f: &dyn Nonlinearity, x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let d = f.dim();
    let mut acc = vec![0.0; d * d];
    let mut jac = vec![0.0; d * d];
    let mut xi = vec![0.0; d];
    for i in 0..n {
        for a in 0..d {
            xi[a] = x[(i, a)];
        }
        f.jacobian(&xi, &mut jac);
        for k in 0..d * d {
            acc[k] += jac[k];
        }
    }
    DMatrix::from_fn(d, d, |a, b| acc[a * d + b] / n as f64)
}

/// One AMP update with the supplied Onsager matrix.
pub fn amp_step(
    y: &DMatrix<f64>,
    state: &AmpState,
    f: &dyn Nonlinearity,
    b: &DMatrix<f64>,
) -> Result<AmpState> {
    let n = y.nrows();
    if y.ncols() != n {
        return Err(Error::invalid("data matrix must be square"));
    }
    let d = state.dim();
    if state.x.nrows() != n || state.prev_f.nrows() != n || state.prev_f.ncols() != d {
        return Err(Error::invalid("state dimensions do not match the data matrix"));
    }
    if f.dim() != d {
        return Err(Error::invalid(format!(
            "nonlinearity dim {} does not match state dim {d}",
            f.dim()
        )));
    }
    if b.nrows() != d || b.ncols() != d {
        return Err(Error::invalid("Onsager matrix must be dim x dim"));
    }
    let ft = apply_rowwise(f, &state.x);
    let x_next = y * &ft / (n as f64).sqrt() - &state.prev_f * b.transpose();
    Ok(AmpState {
        t: state.t + 1,
        x: x_next,
        prev_f: ft,
        onsager: b.clone(),
    })
}

/// How the Onsager matrices for [`run_amp`] are obtained.
pub enum OnsagerMode<'a> {
    /// Nonrandom matrices from state evolution, one per step.
    StateEvolution(&'a [DMatrix<f64>]),
    /// `(1/n) sum_i dF_t(x_i^t)` measured on the running iterate.
    Empirical,
    /// No correction (deliberately wrong; for demonstrations).
    Disabled,
}

/// Run the AMP chain `fs[0], fs[1], ...` from the zero state, returning the
/// trajectory `x^0, ..., x^T` with `T = fs.len()`.
pub fn run_amp(
    y: &DMatrix<f64>,
    fs: &[&dyn Nonlinearity],
    mode: OnsagerMode<'_>,
) -> Result<Vec<AmpState>> {
    let n = y.nrows();
    if fs.is_empty() {
        return Err(Error::invalid("need at least one nonlinearity"));
    }
    let d = fs[0].dim();
    if fs.iter().any(|f| f.dim() != d) {
        return Err(Error::invalid("all nonlinearities must share one dim"));
    }
    if let OnsagerMode::StateEvolution(bs) = &mode {
        if bs.len() != fs.len() {
            return Err(Error::invalid(format!(
                "got {} Onsager matrices for {} steps",
                bs.len(),
                fs.len()
            )));
        }
    }
    let mut states = vec![AmpState::init(n, d)];
    for (t, f) in fs.iter().enumerate() {
        let current = states.last().expect("non-empty");
        let b = match &mode {
            OnsagerMode::StateEvolution(bs) => bs[t].clone(),
            OnsagerMode::Empirical => empirical_onsager(*f, &current.x),
            OnsagerMode::Disabled => DMatrix::zeros(d, d),
        };
        states.push(amp_step(y, current, *f, &b)?);
    }
    Ok(states)
}

/// One step of the row law: mean direction `mu_t` and Gaussian covariance
/// `Sigma_t`.
#[derive(Debug, Clone)]
pub struct VectorSEState {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
}

impl VectorSEState {
    pub fn zero(dim: usize) -> Self {
        VectorSEState {
            mu: DVector::zeros(dim),
            sigma: DMatrix::zeros(dim, dim),
        }
    }
}

/// Factor a covariance as `A A^T` via its symmetric eigendecomposition,
/// clipping tiny negative eigenvalues to zero. (State-evolution covariances
/// are often exactly singular — e.g. whenever some component of `F` is
/// constant — so a Cholesky factorization would be unusable here.)
pub fn gaussian_factor(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = sigma.nrows();
    if sigma.ncols() != d {
        return Err(Error::invalid("covariance must be square"));
    }
    let sym = (sigma + sigma.transpose()) / 2.0;
    let eig = sym.symmetric_eigen();
    let mut scaled = eig.eigenvectors.clone();
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda < -1e-8 {
            return Err(Error::degenerate(format!(
                "covariance has eigenvalue {lambda:.3e} < -1e-8"
            )));
        }
        let s = lambda.max(0.0).sqrt();
        for r in 0..d {
            scaled[(r, k)] *= s;
        }
    }
    Ok(scaled)
}

/// Integration scheme for the state-evolution expectations over
/// `(Theta, G) ~ prior (x) N(0, Sigma)`.
#[derive(Debug, Clone, Copy)]
pub enum SeIntegrator {
    /// Tensor-product Gauss-Hermite with `level` nodes per coordinate;
    /// exact for polynomial nonlinearities of moderate degree, and the
    /// default for small `dim`.
    Tensor { level: usize },
    /// Plain Monte Carlo over a fixed counter-based stream (one stream per
    /// iteration index, so results are run-to-run stable).
    MonteCarlo { samples: usize, seed: u64 },
}

/// Accumulated expectations for one SE step.
struct SeMoments {
    mu: DVector<f64>,
    sigma: DMatrix<f64>,
    b: DMatrix<f64>,
}

/// Visit `(weight, u)` pairs for a `d`-dimensional standard Gaussian: either a
/// tensor-product quadrature grid or a fixed-stream sample (stream index `t`).
fn for_each_gaussian_node(
    integ: &SeIntegrator,
    t: usize,
    d: usize,
    visit: &mut dyn FnMut(f64, &[f64]),
) -> Result<()> {
    match *integ {
        SeIntegrator::Tensor { level } => {
            let nodes = (level as f64).powi(d as i32);
            if nodes > MAX_TENSOR_NODES {
                return Err(Error::guard(format!(
                    "tensor quadrature needs {nodes:.3e} nodes (level {level}, dim {d}); \
                     guard is {MAX_TENSOR_NODES:.0e} — use the Monte Carlo integrator"
                )));
            }
            let rule = Quadrature::gauss_hermite(level)?;
            let mut idx = vec![0usize; d];
            let mut u = vec![0.0; d];
            loop {
                let mut w = 1.0;
                for (k, &i) in idx.iter().enumerate() {
                    w *= rule.weights()[i];
                    u[k] = rule.nodes()[i];
                }
                visit(w, &u);
                // Odometer increment.
                let mut k = 0;
                loop {
                    if k == d {
                        break;
                    }
                    idx[k] += 1;
                    if idx[k] < level {
                        break;
                    }
                    idx[k] = 0;
                    k += 1;
                }
                if k == d {
                    break;
                }
            }
        }
        SeIntegrator::MonteCarlo { samples, seed } => {
            if samples == 0 {
                return Err(Error::invalid("Monte Carlo integrator needs samples > 0"));
            }
            let mut rng = stream(seed, domain::SE_STREAM, t as u64);
            let w = 1.0 / samples as f64;
            let mut u = vec![0.0; d];
            for _ in 0..samples {
                for v in u.iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
                visit(w, &u);
            }
        }
    }
    Ok(())
}

/// `E[psi(F(mu Theta + G), Theta)]` for `(Theta, G) ~ prior x N(0, Sigma)`,
/// with `(mu, Sigma)` taken from `state`. Shares the integrator with the
/// state-evolution step so predictions and SE moments agree to quadrature
/// accuracy.
pub fn expect_se_observable(
    prior: &DiscretePrior,
    integ: &SeIntegrator,
    t: usize,
    state: &VectorSEState,
    f: &dyn Nonlinearity,
    psi: &mut dyn FnMut(&[f64], f64) -> f64,
) -> Result<f64> {
    let d = f.dim();
    if state.mu.len() != d || state.sigma.nrows() != d {
        return Err(Error::invalid("state dimension does not match nonlinearity"));
    }
    let a = gaussian_factor(&state.sigma)?;
    let mut acc = 0.0;
    let mut x = vec![0.0; d];
    let mut fx = vec![0.0; d];
    let mut g = vec![0.0; d];
    for_each_gaussian_node(integ, t, d, &mut |w, u| {
        for r in 0..d {
            let mut s = 0.0;
            for c in 0..d {
                s += a[(r, c)] * u[c];
            }
            g[r] = s;
        }
        for (&atom, &pw) in prior.atoms().iter().zip(prior.weights()) {
            for r in 0..d {
                x[r] = state.mu[r] * atom + g[r];
            }
            f.evaluate(&x, &mut fx);
            acc += w * pw * psi(&fx, atom);
        }
    })?;
    Ok(acc)
}

fn se_step(
    prior: &DiscretePrior,
    integ: &SeIntegrator,
    t: usize,
    state: &VectorSEState,
    f: &dyn Nonlinearity,
) -> Result<SeMoments> {
    let d = f.dim();
    let a = gaussian_factor(&state.sigma)?;
    let mut mu = DVector::<f64>::zeros(d);
    let mut sigma = DMatrix::<f64>::zeros(d, d);
    let mut b = DMatrix::<f64>::zeros(d, d);
    let mut x = vec![0.0; d];
    let mut fx = vec![0.0; d];
    let mut jac = vec![0.0; d * d];
    let mut g = vec![0.0; d];
    // Shared per-Gaussian-node inner loop over the prior atoms.
    let mut absorb = |weight: f64,
                      u: &[f64],
                      mu: &mut DVector<f64>,
                      sigma: &mut DMatrix<f64>,
                      b: &mut DMatrix<f64>| {
        for r in 0..d {
            let mut acc = 0.0;
            for c in 0..d {
                acc += a[(r, c)] * u[c];
            }
            g[r] = acc;
        }
        for (&atom, &w) in prior.atoms().iter().zip(prior.weights()) {
            let wt = weight * w;
            for r in 0..d {
                x[r] = state.mu[r] * atom + g[r];
            }
            f.evaluate(&x, &mut fx);
            f.jacobian(&x, &mut jac);
            for r in 0..d {
                mu[r] += wt * atom * fx[r];
                for c in 0..=r {
                    sigma[(r, c)] += wt * fx[r] * fx[c];
                }
                for c in 0..d {
                    b[(r, c)] += wt * jac[r * d + c];
                }
            }
        }
    };
    for_each_gaussian_node(integ, t, d, &mut |w, u| {
        absorb(w, u, &mut mu, &mut sigma, &mut b)
    })?;
    // Mirror the lower triangle accumulated above.
    for r in 0..d {
        for c in r + 1..d {
            sigma[(r, c)] = sigma[(c, r)];
        }
    }
    Ok(SeMoments { mu, sigma, b })
}

/// Vector state evolution along the chain `fs`.
#[derive(Debug, Clone)]
pub struct VectorSE {
    /// `(mu_t, Sigma_t)` for `t = 0..=T`, starting from `(0, 0)`.
    pub states: Vec<VectorSEState>,
    /// `B_t = E[dF_t(mu_t Theta + G_t)]` for `t = 0..T`.
    pub onsager: Vec<DMatrix<f64>>,
}

/// Run the recursion `mu_{t+1} = E[Theta F_t(mu_t Theta + G_t)]`,
/// `Sigma_{t+1} = E[F_t(...) F_t(...)^T]` for `fs.len()` steps.
pub fn vector_se(
    prior: &DiscretePrior,
    integ: &SeIntegrator,
    fs: &[&dyn Nonlinearity],
) -> Result<VectorSE> {
    if fs.is_empty() {
        return Err(Error::invalid("need at least one nonlinearity"));
    }
    let d = fs[0].dim();
    if fs.iter().any(|f| f.dim() != d) {
        return Err(Error::invalid("all nonlinearities must share one dim"));
    }
    let mut states = vec![VectorSEState::zero(d)];
    let mut onsager = Vec::with_capacity(fs.len());
    for (t, f) in fs.iter().enumerate() {
        let m = se_step(prior, integ, t, states.last().expect("non-empty"), *f)?;
        states.push(VectorSEState {
            mu: m.mu,
            sigma: m.sigma,
        });
        onsager.push(m.b);
    }
    Ok(VectorSE { states, onsager })
}

/// `||estimate - theta||^2 / n`.
pub fn empirical_mse(estimate: &DVector<f64>, theta: &DVector<f64>) -> Result<f64> {
    if estimate.len() != theta.len() {
        return Err(Error::invalid(format!(
            "length mismatch: estimate {} vs theta {}",
            estimate.len(),
            theta.len()
        )));
    }
    Ok((estimate - theta).norm_squared() / theta.len() as f64)
}

/// Output of a scalar AMP run (Bayes or polynomial denoisers).
#[derive(Debug, Clone)]
pub struct AmpRun {
    /// States `x^0..x^T`.
    pub states: Vec<AmpState>,
    /// Iteration-`t` estimate `f_t(x^t)` applied entrywise, `t = 0..=T`.
    pub estimates: Vec<DVector<f64>>,
    /// `||f_t(x^t) - theta||^2 / n`.
    pub empirical_mse: Vec<f64>,
    /// State-evolution prediction `E[Theta^2] - 2 mu_{t+1} + Sigma_{t+1}`.
    pub predicted_mse: Vec<f64>,
    /// Scalar SE means `mu_0..mu_{T+1}` (equal to `q_t` for Bayes-AMP).
    pub se_mu: Vec<f64>,
    /// Scalar SE variances `Sigma_0..Sigma_{T+1}`.
    pub se_sigma2: Vec<f64>,
    /// Scalar Onsager coefficients used at steps `0..T`.
    pub onsager: Vec<f64>,
}

fn scalar_amp_run(
    obs: &Observation,
    fs: &[Box<dyn Nonlinearity>],
    se_mu: Vec<f64>,
    se_sigma2: Vec<f64>,
    onsager: Vec<f64>,
    m2: f64,
) -> Result<AmpRun> {
    let t_steps = fs.len() - 1;
    let b_mats: Vec<DMatrix<f64>> = onsager
        .iter()
        .map(|&b| DMatrix::from_element(1, 1, b))
        .collect();
    let f_refs: Vec<&dyn Nonlinearity> = fs[..t_steps].iter().map(|f| f.as_ref()).collect();
    let states = run_amp(&obs.y, &f_refs, OnsagerMode::StateEvolution(&b_mats))?;
    let mut estimates = Vec::with_capacity(t_steps + 1);
    let mut mse = Vec::with_capacity(t_steps + 1);
    let mut predicted = Vec::with_capacity(t_steps + 1);
    for t in 0..=t_steps {
        let est = apply_rowwise(fs[t].as_ref(), &states[t].x).column(0).into_owned();
        mse.push(empirical_mse(&est, &obs.theta)?);
        estimates.push(est);
        predicted.push(m2 - 2.0 * se_mu[t + 1] + se_sigma2[t + 1]);
    }
    Ok(AmpRun {
        states,
        estimates,
        empirical_mse: mse,
        predicted_mse: predicted,
        se_mu,
        se_sigma2,
        onsager,
    })
}

/// Bayes-AMP: denoisers `f_t(x) = E[Theta | q_t Theta + sqrt(q_t) G = x]`
/// with `q_t` from the scalar state evolution, Onsager coefficients
/// `b_t = E[f_t'(q_t Theta + sqrt(q_t) G)]` by quadrature.
pub fn bayes_amp(
    obs: &Observation,
    prior: &DiscretePrior,
    quad: &Quadrature,
    t_max: usize,
) -> Result<AmpRun> {
    if t_max == 0 {
        return Err(Error::invalid("t_max must be at least 1"));
    }
    let trace = se_trajectory(prior, quad, t_max + 1, 0.0);
    let qs = &trace.qs; // q_0..q_{t_max+1}
    let fs: Vec<Box<dyn Nonlinearity>> = (0..=t_max)
        .map(|t| {
            Ok(Box::new(BayesDenoiser::new(prior.clone(), qs[t])?) as Box<dyn Nonlinearity>)
        })
        .collect::<Result<_>>()?;
    let onsager: Vec<f64> = (0..t_max)
        .map(|t| {
            let q = qs[t];
            let s = q.sqrt();
            crate::prior::expect_theta_g(prior, quad, |theta, g| {
                denoiser_derivative(prior, q, q * theta + s * g)
            })
        })
        .collect();
    // For the Bayes chain mu_t = Sigma_t = q_t.
    scalar_amp_run(
        obs,
        &fs,
        qs[..=t_max + 1].to_vec(),
        qs[..=t_max + 1].to_vec(),
        onsager,
        prior.second_moment(),
    )
}

/// AMP with a fixed list of univariate polynomial denoisers; state evolution
/// is computed with tensor quadrature of a level that integrates every
/// required moment exactly.
pub fn polynomial_amp(
    obs: &Observation,
    prior: &DiscretePrior,
    polys: &[Polynomial],
    t_max: usize,
) -> Result<AmpRun> {
    if t_max == 0 {
        return Err(Error::invalid("t_max must be at least 1"));
    }
    if polys.is_empty() {
        return Err(Error::invalid("need at least one polynomial"));
    }
    // fs[t] for t = 0..=t_max, cycling if fewer were supplied.
    let fs: Vec<Box<dyn Nonlinearity>> = (0..=t_max)
        .map(|t| {
            Box::new(polys[t.min(polys.len() - 1)].clone()) as Box<dyn Nonlinearity>
        })
        .collect();
    let max_deg = polys.iter().map(|p| p.degree()).max().expect("non-empty");
    // Products f_a f_b have degree <= 2 max_deg; a rule with level L is
    // exact through degree 2L - 1.
    let level = (max_deg + 2).max(20);
    let integ = SeIntegrator::Tensor { level };
    let f_refs: Vec<&dyn Nonlinearity> = fs.iter().map(|f| f.as_ref()).collect();
    let se = vector_se(prior, &integ, &f_refs)?;
    let se_mu: Vec<f64> = se.states.iter().map(|s| s.mu[0]).collect();
    let se_sigma2: Vec<f64> = se.states.iter().map(|s| s.sigma[(0, 0)]).collect();
    let onsager: Vec<f64> = se.onsager[..t_max].iter().map(|b| b[(0, 0)]).collect();
    scalar_amp_run(obs, &fs, se_mu, se_sigma2, onsager, prior.second_moment())
}

/// Weighted least-squares polynomial fit of the Bayes denoiser
/// `x -> E[Theta | q Theta_q + sqrt(q) G = x]` under the input law
/// `x = mu Theta + sigma G`, over an atom x quadrature design. Returns the
/// polynomial and the achieved weighted L2 error.
pub fn approx_denoiser(
    prior: &DiscretePrior,
    q: f64,
    mu: f64,
    sigma: f64,
    degree: usize,
) -> Result<(Polynomial, f64)> {
    fit_polynomial(
        |x| bayes_denoiser(prior, q, x),
        prior,
        mu,
        sigma,
        degree,
    )
}

/// Weighted least-squares fit of an arbitrary scalar target under the law
/// `mu Theta + sigma G` (atom x Gauss-Hermite design), solved by SVD.
pub fn fit_polynomial(
    target: impl Fn(f64) -> f64,
    prior: &DiscretePrior,
    mu: f64,
    sigma: f64,
    degree: usize,
) -> Result<(Polynomial, f64)> {
    if degree == 0 {
        return Err(Error::invalid("fit degree must be >= 1"));
    }
    if !(sigma > 0.0) {
        return Err(Error::invalid("fit requires sigma > 0"));
    }
    let rule = Quadrature::default_rule();
    let mut xs = Vec::new();
    let mut ws = Vec::new();
    for (&atom, &w) in prior.atoms().iter().zip(prior.weights()) {
        for (&z, &v) in rule.nodes().iter().zip(rule.weights()) {
            xs.push(mu * atom + sigma * z);
            ws.push(w * v);
        }
    }
    let rows = xs.len();
    let cols = degree + 1;
    let mut design = DMatrix::<f64>::zeros(rows, cols);
    let mut rhs = DVector::<f64>::zeros(rows);
    for (r, (&x, &w)) in xs.iter().zip(&ws).enumerate() {
        let sw = w.sqrt();
        let mut pw = 1.0;
        for c in 0..cols {
            design[(r, c)] = sw * pw;
            pw *= x;
        }
        rhs[r] = sw * target(x);
    }
    let svd = design.clone().svd(true, true);
    let coeffs = svd
        .solve(&rhs, 1e-12)
        .map_err(|e| Error::degenerate(format!("least-squares solve failed: {e}")))?;
    let coeffs: Vec<f64> = coeffs.iter().copied().collect();
    let poly = Polynomial::new(coeffs)?;
    let mut err2 = 0.0;
    for (&x, &w) in xs.iter().zip(&ws) {
        let d = poly.eval_scalar(x) - target(x);
        err2 += w * d * d;
    }
    Ok((poly, err2.sqrt()))
}

//! Discrete priors, the scalar Bayes denoiser, and Gaussian quadrature.
//!
//! A [`DiscretePrior`] is a finitely supported distribution for the signal
//! entries. The posterior-mean denoiser under the additive channel
//! `x = q*theta + sqrt(q)*G` and its derivative (the posterior variance) are
//! evaluated here; both are building blocks for state evolution and AMP.
//!
//! [`Quadrature`] holds Gauss-Hermite nodes and weights for the standard
//! normal weight `exp(-g^2/2)/sqrt(2*pi)`, built by the Golub-Welsch
//! eigenvalue method.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;

/// Number of moments precomputed at construction.
const MOMENT_CACHE: usize = 17;

/// A finitely supported signal prior.
///
/// Atoms are kept sorted ascending and pairwise distinct; weights are
/// strictly positive and sum to one within 1e-12.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePrior {
    atoms: Vec<f64>,
    weights: Vec<f64>,
    moments: Vec<f64>,
}

impl DiscretePrior {
    /// Build a prior from atom locations and weights.
    ///
    /// The pairs are sorted by atom internally. Errors on mismatched lengths,
    /// empty support, non-finite or duplicate atoms, non-positive weights,
    /// or a weight sum farther than 1e-12 from one.
    pub fn new(atoms: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::invalid("prior needs at least one atom"));
        }
        if atoms.len() != weights.len() {
            return Err(Error::invalid(format!(
                "{} atoms but {} weights",
                atoms.len(),
                weights.len()
            )));
        }
        if let Some(a) = atoms.iter().find(|a| !a.is_finite()) {
            return Err(Error::invalid(format!("non-finite atom {a}")));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w <= 0.0) {
            return Err(Error::invalid(format!("weight {w} must be positive")));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "weights sum to {sum}, expected 1 within 1e-12"
            )));
        }
        let mut pairs: Vec<(f64, f64)> = atoms.into_iter().zip(weights).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        if pairs.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::invalid("duplicate atoms"));
        }
        let (atoms, weights): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let mut prior = DiscretePrior {
            atoms,
            weights,
            moments: Vec::new(),
        };
        prior.moments = (0..MOMENT_CACHE)
            .map(|k| prior.moment_uncached(k as u32))
            .collect();
        Ok(prior)
    }

    /// The sparse three-atom family: atoms `{-sqrt(s), sqrt(s), sqrt(s/eps)}`
    /// with weights `{(1-eps)/2, (1-eps)/2, eps}`.
    ///
    /// Requires `s > 0` and `eps` strictly inside `(0, 1)`.
    pub fn three_point(s: f64, eps: f64) -> Result<Self> {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::invalid(format!("three_point needs s > 0, got {s}")));
        }
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::invalid(format!(
                "three_point needs eps in (0, 1), got {eps}"
            )));
        }
        let r = s.sqrt();
        let spike = (s / eps).sqrt();
        let half = (1.0 - eps) / 2.0;
        DiscretePrior::new(vec![-r, r, spike], vec![half, half, eps])
    }

    /// Uniform prior on `{-1, +1}`.
    pub fn rademacher() -> Self {
        DiscretePrior::new(vec![-1.0, 1.0], vec![0.5, 0.5]).expect("valid by construction")
    }

    /// Point mass at `c`.
    pub fn point_mass(c: f64) -> Result<Self> {
        DiscretePrior::new(vec![c], vec![1.0])
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn moment_uncached(&self, k: u32) -> f64 {
        self.atoms
            .iter()
            .zip(&self.weights)
            .map(|(a, w)| w * a.powi(k as i32))
            .sum()
    }

    /// k-th raw moment `E[Theta^k]`. Cached for small k, computed on demand
    /// beyond the cache; never an error.
    pub fn moment(&self, k: u32) -> f64 {
        match self.moments.get(k as usize) {
            Some(m) => *m,
            None => self.moment_uncached(k),
        }
    }

    pub fn mean(&self) -> f64 {
        self.moment(1)
    }

    pub fn second_moment(&self) -> f64 {
        self.moment(2)
    }

    pub fn variance(&self) -> f64 {
        self.second_moment() - self.mean() * self.mean()
    }

    /// Largest atom magnitude. Bounds both the signal and every posterior
    /// mean; kept available as the sub-Gaussian scale of the prior, though no
    /// operation currently consumes it.
    pub fn sup_norm_bound(&self) -> f64 {
        self.atoms.iter().fold(0.0, |m, a| m.max(a.abs()))
    }

    /// Draw one atom according to the weights.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (a, w) in self.atoms.iter().zip(&self.weights) {
            acc += w;
            if u < acc {
                return *a;
            }
        }
        *self.atoms.last().expect("non-empty support")
    }

    /// Expectation of `f` over the atoms.
    pub fn expect(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.atoms
            .iter()
            .zip(&self.weights)
            .map(|(a, w)| w * f(*a))
            .sum()
    }
}

/// Posterior mean and variance of `Theta` given `q*Theta + sqrt(q)*G = x`.
///
/// Exponents are shifted by their maximum before exponentiation, so the
/// softmax stays finite for any `x`. At `q = 0` the observation carries no
/// information and the pair `(E[Theta], Var(Theta))` is returned exactly.
pub fn posterior_mean_var(prior: &DiscretePrior, q: f64, x: f64) -> (f64, f64) {
    assert!(q >= 0.0, "snr parameter q must be nonnegative, got {q}");
    if q == 0.0 {
        return (prior.mean(), prior.variance());
    }
    let mut max_e = f64::NEG_INFINITY;
    let exps: Vec<f64> = prior
        .atoms
        .iter()
        .map(|&a| {
            let e = a * x - 0.5 * q * a * a;
            max_e = max_e.max(e);
            e
        })
        .collect();
    let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
    for ((&a, &w), &e) in prior.atoms.iter().zip(&prior.weights).zip(&exps) {
        let t = w * (e - max_e).exp();
        s0 += t;
        s1 += t * a;
        s2 += t * a * a;
    }
    let mean = s1 / s0;
    (mean, (s2 / s0 - mean * mean).max(0.0))
}

/// Posterior-mean denoiser `E[Theta | q*Theta + sqrt(q)*G = x]`.
///
/// Bounded by the largest atom magnitude and nondecreasing in `x`.
pub fn bayes_denoiser(prior: &DiscretePrior, q: f64, x: f64) -> f64 {
    posterior_mean_var(prior, q, x).0
}

/// Derivative in `x` of [`bayes_denoiser`], which equals the posterior
/// variance `E[Theta^2 | x] - E[Theta | x]^2` and is therefore nonnegative.
/// At `q = 0` the denoiser is the constant prior mean, so the derivative is
/// zero (not the prior variance).
pub fn denoiser_derivative(prior: &DiscretePrior, q: f64, x: f64) -> f64 {
    if q == 0.0 {
        return 0.0;
    }
    posterior_mean_var(prior, q, x).1
}

/// Gauss-Hermite nodes and weights for the standard normal weight.
#[derive(Debug, Clone)]
pub struct Quadrature {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Quadrature {
    /// Default rule size used throughout the crate.
    pub const DEFAULT_LEVEL: usize = 60;

    /// Build the `level`-point rule. Exact for polynomial integrands of
    /// degree up to `2*level - 1`.
    ///
    /// Nodes and weights come from the symmetric tridiagonal Jacobi matrix of
    /// the (probabilists') Hermite recurrence. The rule is symmetrized so that
    /// nodes come in exact `+/-` pairs with equal weights, and the weights are
    /// renormalized to sum to one.
    pub fn gauss_hermite(level: usize) -> Result<Self> {
        if level == 0 {
            return Err(Error::invalid("quadrature level must be at least 1"));
        }
        if level > 1000 {
            return Err(Error::guard(format!("quadrature level {level} > 1000")));
        }
        let mut jacobi = DMatrix::<f64>::zeros(level, level);
        for k in 1..level {
            let b = (k as f64).sqrt();
            jacobi[(k - 1, k)] = b;
            jacobi[(k, k - 1)] = b;
        }
        let eigen = SymmetricEigen::new(jacobi);
        let mut pairs: Vec<(f64, f64)> = (0..level)
            .map(|i| {
                let v0 = eigen.eigenvectors[(0, i)];
                (eigen.eigenvalues[i], v0 * v0)
            })
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut nodes: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let mut weights: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        // Enforce the +/- symmetry of the rule exactly.
        for i in 0..level / 2 {
            let j = level - 1 - i;
            let m = 0.5 * (nodes[j] - nodes[i]);
            nodes[i] = -m;
            nodes[j] = m;
            let w = 0.5 * (weights[i] + weights[j]);
            weights[i] = w;
            weights[j] = w;
        }
        if level % 2 == 1 {
            nodes[level / 2] = 0.0;
        }
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        Ok(Quadrature { nodes, weights })
    }

    /// The 60-point default rule.
    pub fn default_rule() -> Self {
        Quadrature::gauss_hermite(Self::DEFAULT_LEVEL).expect("default level is valid")
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `E[f(G)]` for standard normal `G`.
    pub fn expect(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(*x))
            .sum()
    }
}

/// `E[f(Theta, G)]` with `Theta ~ prior` and `G` standard normal,
/// independent.
pub fn expect_theta_g(
    prior: &DiscretePrior,
    quad: &Quadrature,
    mut f: impl FnMut(f64, f64) -> f64,
) -> f64 {
    let mut acc = 0.0;
    for (&a, &w) in prior.atoms().iter().zip(prior.weights()) {
        for (&g, &v) in quad.nodes().iter().zip(quad.weights()) {
            acc += w * v * f(a, g);
        }
    }
    acc
}

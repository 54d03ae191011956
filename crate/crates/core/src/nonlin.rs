//! Nonlinearities applied row-wise inside the AMP iteration, behind a common
//! trait so algorithm variants can be swapped at runtime.
//!
//! Scalar variants (Bayes denoiser, polynomials, identity, constant) are
//! also reachable through a by-name registry used by the CLI; the
//! vector-valued variants (linear maps, the tree message-passing update) are
//! constructed programmatically.

use crate::error::{Error, Result};
use crate::prior::{posterior_mean_var, DiscretePrior};
use crate::trees::{children_decomposition, RootedTree};

/// A (weakly) differentiable map `R^dim -> R^dim` applied to each row of the
/// AMP state.
pub trait Nonlinearity: Send + Sync {
    fn dim(&self) -> usize;
    /// Write `F(x)` into `out`; both slices have length `dim`.
    fn evaluate(&self, x: &[f64], out: &mut [f64]);
    /// Write the Jacobian `dF_a/dx_b` into `out` in row-major order
    /// (`out[a * dim + b]`), length `dim * dim`.
    fn jacobian(&self, x: &[f64], out: &mut [f64]);
    fn name(&self) -> String;
}

/// Central-finite-difference check of `jacobian` against `evaluate`.
/// Returns the worst absolute deviation over the probe points.
pub fn jacobian_deviation(f: &dyn Nonlinearity, probes: &[Vec<f64>]) -> f64 {
    let d = f.dim();
    let h = 1e-5;
    let mut jac = vec![0.0; d * d];
    let mut plus = vec![0.0; d];
    let mut minus = vec![0.0; d];
    let mut worst = 0.0f64;
    for p in probes {
        assert_eq!(p.len(), d);
        f.jacobian(p, &mut jac);
        for b in 0..d {
            let mut xp = p.clone();
            let mut xm = p.clone();
            xp[b] += h;
            xm[b] -= h;
            f.evaluate(&xp, &mut plus);
            f.evaluate(&xm, &mut minus);
            for a in 0..d {
                let fd = (plus[a] - minus[a]) / (2.0 * h);
                worst = worst.max((fd - jac[a * d + b]).abs());
            }
        }
    }
    worst
}

/// Posterior-mean denoiser for the scalar channel `x = q Theta + sqrt(q) G`.
/// Its derivative is the posterior variance; at `q = 0` the map is the
/// constant prior mean with derivative zero.
#[derive(Debug, Clone)]
pub struct BayesDenoiser {
    pub prior: DiscretePrior,
    pub q: f64,
}

impl BayesDenoiser {
    pub fn new(prior: DiscretePrior, q: f64) -> Result<Self> {
        if !(q >= 0.0) {
            return Err(Error::invalid("bayes denoiser needs q >= 0"));
        }
        Ok(BayesDenoiser { prior, q })
    }
}

impl Nonlinearity for BayesDenoiser {
    fn dim(&self) -> usize {
        1
    }

    fn evaluate(&self, x: &[f64], out: &mut [f64]) {
        out[0] = posterior_mean_var(&self.prior, self.q, x[0]).0;
    }

    fn jacobian(&self, x: &[f64], out: &mut [f64]) {
        out[0] = if self.q == 0.0 {
            0.0
        } else {
            posterior_mean_var(&self.prior, self.q, x[0]).1
        };
    }

    fn name(&self) -> String {
        format!("bayes(q={})", self.q)
    }
}

/// Univariate polynomial `c_0 + c_1 x + ... + c_k x^k` with exact derivative.
#[derive(Debug, Clone)]
pub struct Polynomial {
    pub coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::invalid("polynomial needs at least one coefficient"));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("polynomial coefficients must be finite"));
        }
        Ok(Polynomial { coeffs })
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn eval_scalar(&self, x: f64) -> f64 {
        let mut acc = 0.0;
        for &c in self.coeffs.iter().rev() {
            acc = acc * x + c;
        }
        acc
    }

    pub fn derivative_scalar(&self, x: f64) -> f64 {
        let mut acc = 0.0;
        for (k, &c) in self.coeffs.iter().enumerate().skip(1).rev() {
            acc = acc * x + k as f64 * c;
        }
        acc
    }
}

impl Nonlinearity for Polynomial {
    fn dim(&self) -> usize {
        1
    }

    fn evaluate(&self, x: &[f64], out: &mut [f64]) {
        out[0] = self.eval_scalar(x[0]);
    }

    fn jacobian(&self, x: &[f64], out: &mut [f64]) {
        out[0] = self.derivative_scalar(x[0]);
    }

    fn name(&self) -> String {
        format!("poly(degree={})", self.degree())
    }
}

/// Constant map `x -> v` in any dimension; Jacobian zero.
#[derive(Debug, Clone)]
pub struct Constant {
    pub values: Vec<f64>,
}

impl Nonlinearity for Constant {
    fn dim(&self) -> usize {
        self.values.len()
    }

    fn evaluate(&self, _x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.values);
    }

    fn jacobian(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    fn name(&self) -> String {
        format!("constant({:?})", self.values)
    }
}

/// Identity in `dim` coordinates.
#[derive(Debug, Clone)]
pub struct Identity {
    pub dim: usize,
}

impl Nonlinearity for Identity {
    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(x);
    }

    fn jacobian(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for a in 0..self.dim {
            out[a * self.dim + a] = 1.0;
        }
    }

    fn name(&self) -> String {
        format!("identity(dim={})", self.dim)
    }
}

/// Linear map `x -> M x` for a square row-major matrix.
#[derive(Debug, Clone)]
pub struct LinearMap {
    dim: usize,
    m: Vec<f64>,
}

impl LinearMap {
    pub fn new(dim: usize, m: Vec<f64>) -> Result<Self> {
        if m.len() != dim * dim {
            return Err(Error::invalid("linear map needs a dim x dim matrix"));
        }
        Ok(LinearMap { dim, m })
    }

    pub fn matrix(&self) -> &[f64] {
        &self.m
    }
}

impl Nonlinearity for LinearMap {
    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&self, x: &[f64], out: &mut [f64]) {
        for a in 0..self.dim {
            let mut acc = 0.0;
            for b in 0..self.dim {
                acc += self.m[a * self.dim + b] * x[b];
            }
            out[a] = acc;
        }
    }

    fn jacobian(&self, _x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.m);
    }

    fn name(&self) -> String {
        format!("linear(dim={})", self.dim)
    }
}

/// The tree message-passing update: coordinate `a` (a rooted tree `T_a`)
/// maps to the product of the message coordinates of the subtrees hanging
/// off the root of `T_a`. The edgeless tree gets the empty product 1.
#[derive(Debug, Clone)]
pub struct TreeUpdate {
    /// For each output tree, the indices of its root-subtrees in the tree
    /// list (with multiplicity, sorted).
    children_indices: Vec<Vec<usize>>,
}

impl TreeUpdate {
    /// `trees` must be closed under children decomposition (true of any full
    /// enumeration up to a fixed edge budget).
    pub fn new(trees: &[RootedTree]) -> Result<Self> {
        let index: std::collections::HashMap<&str, usize> = trees
            .iter()
            .enumerate()
            .map(|(i, t)| (t.canonical_code(), i))
            .collect();
        if index.len() != trees.len() {
            return Err(Error::invalid("tree list contains duplicates"));
        }
        let mut children_indices = Vec::with_capacity(trees.len());
        for t in trees {
            let mut ids = Vec::new();
            for sub in children_decomposition(t) {
                let id = index.get(sub.canonical_code()).ok_or_else(|| {
                    Error::invalid(format!(
                        "tree list is not closed under root decomposition: missing {:?}",
                        sub.canonical_code()
                    ))
                })?;
                ids.push(*id);
            }
            ids.sort_unstable();
            children_indices.push(ids);
        }
        Ok(TreeUpdate { children_indices })
    }

    pub fn children_indices(&self) -> &[Vec<usize>] {
        &self.children_indices
    }
}

impl Nonlinearity for TreeUpdate {
    fn dim(&self) -> usize {
        self.children_indices.len()
    }

    fn evaluate(&self, x: &[f64], out: &mut [f64]) {
        for (a, ids) in self.children_indices.iter().enumerate() {
            out[a] = ids.iter().map(|&i| x[i]).product();
        }
    }

    fn jacobian(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim();
        out.fill(0.0);
        for (a, ids) in self.children_indices.iter().enumerate() {
            // Multiplicity-aware product rule over the distinct factors.
            let mut k = 0;
            while k < ids.len() {
                let b = ids[k];
                let mut mult = 0usize;
                while k < ids.len() && ids[k] == b {
                    mult += 1;
                    k += 1;
                }
                let mut rest = 1.0;
                let mut l = 0;
                while l < ids.len() {
                    let o = ids[l];
                    let mut om = 0usize;
                    while l < ids.len() && ids[l] == o {
                        om += 1;
                        l += 1;
                    }
                    if o != b {
                        rest *= x[o].powi(om as i32);
                    }
                }
                out[a * d + b] = mult as f64 * x[b].powi(mult as i32 - 1) * rest;
            }
        }
    }

    fn name(&self) -> String {
        format!("tree-update(dim={})", self.dim())
    }
}

/// A time-indexed family of scalar nonlinearities, as selected on the CLI.
/// `at` receives the iteration index and the scalar state-evolution overlap
/// `q_t` so the Bayes family can adapt per iteration; fixed families ignore
/// them.
pub trait DenoiserFamily: Send + Sync {
    fn name(&self) -> String;
    fn at(&self, t: usize, q_t: f64) -> Result<Box<dyn Nonlinearity>>;
}

struct BayesFamily {
    prior: DiscretePrior,
}

impl DenoiserFamily for BayesFamily {
    fn name(&self) -> String {
        "bayes".into()
    }

    fn at(&self, _t: usize, q_t: f64) -> Result<Box<dyn Nonlinearity>> {
        Ok(Box::new(BayesDenoiser::new(self.prior.clone(), q_t)?))
    }
}

struct FixedFamily {
    label: String,
    make: Box<dyn Fn() -> Box<dyn Nonlinearity> + Send + Sync>,
}

impl DenoiserFamily for FixedFamily {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn at(&self, _t: usize, _q_t: f64) -> Result<Box<dyn Nonlinearity>> {
        Ok((self.make)())
    }
}

/// Names accepted by [`build_family`].
pub fn family_names() -> &'static [&'static str] {
    &["bayes", "identity", "constant", "poly"]
}

/// Build a denoiser family from a registry spec of the form `name` or
/// `name:args` — e.g. `bayes`, `identity`, `constant:0.3`,
/// `poly:0.1,0.5,-0.2` (coefficients in increasing degree).
pub fn build_family(spec: &str, prior: &DiscretePrior) -> Result<Box<dyn DenoiserFamily>> {
    let (name, args) = match spec.split_once(':') {
        Some((n, a)) => (n, Some(a)),
        None => (spec, None),
    };
    match name {
        "bayes" => {
            if args.is_some() {
                return Err(Error::invalid("bayes takes no arguments"));
            }
            Ok(Box::new(BayesFamily {
                prior: prior.clone(),
            }))
        }
        "identity" => {
            if args.is_some() {
                return Err(Error::invalid("identity takes no arguments"));
            }
            Ok(Box::new(FixedFamily {
                label: "identity".into(),
                make: Box::new(|| Box::new(Identity { dim: 1 })),
            }))
        }
        "constant" => {
            let c: f64 = args
                .ok_or_else(|| Error::invalid("constant:<value> needs a value"))?
                .trim()
                .parse()
                .map_err(|e| Error::invalid(format!("bad constant value: {e}")))?;
            Ok(Box::new(FixedFamily {
                label: format!("constant:{c}"),
                make: Box::new(move || {
                    Box::new(Constant { values: vec![c] })
                }),
            }))
        }
        "poly" => {
            let coeffs: Vec<f64> = args
                .ok_or_else(|| Error::invalid("poly:<c0,c1,...> needs coefficients"))?
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::invalid(format!("bad coefficient {s:?}: {e}")))
                })
                .collect::<Result<_>>()?;
            let poly = Polynomial::new(coeffs)?;
            Ok(Box::new(FixedFamily {
                label: format!("poly(degree={})", poly.degree()),
                make: Box::new(move || Box::new(poly.clone())),
            }))
        }
        other => Err(Error::invalid(format!(
            "unknown denoiser family {other:?}; known: {}",
            family_names().join(", ")
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trees::enumerate_rooted_trees;
    use rand::Rng;

    fn probes(dim: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = crate::rng::stream(seed, crate::rng::domain::REPLICATE, 7);
        (0..count)
            .map(|_| (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect())
            .collect()
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let prior = DiscretePrior::three_point(1.0, 0.01).unwrap();
        let trees = enumerate_rooted_trees(3).unwrap();
        let cases: Vec<Box<dyn Nonlinearity>> = vec![
            Box::new(BayesDenoiser::new(prior.clone(), 0.8).unwrap()),
            Box::new(BayesDenoiser::new(prior.clone(), 0.0).unwrap()),
            Box::new(Polynomial::new(vec![0.3, -1.0, 2.0, 0.5]).unwrap()),
            Box::new(Constant {
                values: vec![1.0, -2.0],
            }),
            Box::new(Identity { dim: 3 }),
            Box::new(
                LinearMap::new(2, vec![0.5, -1.5, 2.0, 0.25]).unwrap(),
            ),
            Box::new(TreeUpdate::new(&trees).unwrap()),
        ];
        for f in &cases {
            let dev = jacobian_deviation(f.as_ref(), &probes(f.dim(), 50, 3));
            assert!(dev < 1e-6, "{}: worst deviation {dev}", f.name());
        }
    }

    #[test]
    fn finite_difference_checker_catches_a_wrong_jacobian() {
        struct Broken;
        impl Nonlinearity for Broken {
            fn dim(&self) -> usize {
                1
            }
            fn evaluate(&self, x: &[f64], out: &mut [f64]) {
                out[0] = x[0] * x[0];
            }
            fn jacobian(&self, x: &[f64], out: &mut [f64]) {
                out[0] = x[0]; // should be 2x
            }
            fn name(&self) -> String {
                "broken".into()
            }
        }
        assert!(jacobian_deviation(&Broken, &probes(1, 50, 4)) > 1e-2);
    }

    #[test]
    fn rademacher_bayes_is_tanh() {
        let prior = DiscretePrior::rademacher();
        for q in [0.3, 1.0, 4.0] {
            let f = BayesDenoiser::new(prior.clone(), q).unwrap();
            for x in [-2.5, -0.4, 0.0, 1.3, 6.0] {
                let mut out = [0.0];
                f.evaluate(&[x], &mut out);
                assert!((out[0] - x.tanh()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn polynomial_matches_naive_power_sum() {
        let p = Polynomial::new(vec![1.0, -0.5, 0.0, 2.0]).unwrap();
        for x in [-1.7f64, 0.0, 0.3, 2.2] {
            let naive: f64 = p
                .coeffs
                .iter()
                .enumerate()
                .map(|(k, c)| c * x.powi(k as i32))
                .sum();
            assert!((p.eval_scalar(x) - naive).abs() < 1e-12);
            let dnaive: f64 = p
                .coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, c)| k as f64 * c * x.powi(k as i32 - 1))
                .sum();
            assert!((p.derivative_scalar(x) - dnaive).abs() < 1e-12);
        }
    }

    #[test]
    fn tree_update_products() {
        // Trees with at most 2 edges sort as: "", "()", "(())", "()()".
        let trees = enumerate_rooted_trees(2).unwrap();
        let codes: Vec<&str> = trees.iter().map(|t| t.canonical_code()).collect();
        assert_eq!(codes, vec!["", "()", "(())", "()()"]);
        let f = TreeUpdate::new(&trees).unwrap();
        let x = [0.5, 2.0, -3.0, 7.0];
        let mut out = [0.0; 4];
        f.evaluate(&x, &mut out);
        assert_eq!(out, [1.0, 0.5, 2.0, 0.25]);
        let mut jac = [0.0; 16];
        f.jacobian(&x, &mut jac);
        // Row for the two-leaf star: d(x0^2)/dx0 = 2 x0.
        assert_eq!(jac[3 * 4], 1.0);
        // Zero handling: multiplicity >= 2 at a zero coordinate.
        let x0 = [0.0, 1.0, 1.0, 1.0];
        f.jacobian(&x0, &mut jac);
        assert_eq!(jac[3 * 4], 0.0);
        f.evaluate(&x0, &mut out);
        assert_eq!(out[3], 0.0);
    }

    #[test]
    fn registry_builds_and_rejects() {
        let prior = DiscretePrior::three_point(1.0, 0.01).unwrap();
        let bayes = build_family("bayes", &prior).unwrap();
        let f = bayes.at(2, 0.7).unwrap();
        assert_eq!(f.dim(), 1);
        assert!(f.name().starts_with("bayes"));
        let poly = build_family("poly:1,2", &prior).unwrap();
        let f = poly.at(0, 0.0).unwrap();
        let mut out = [0.0];
        f.evaluate(&[3.0], &mut out);
        assert_eq!(out[0], 7.0);
        let c = build_family("constant:0.25", &prior).unwrap();
        let f = c.at(5, 0.9).unwrap();
        f.evaluate(&[99.0], &mut out);
        assert_eq!(out[0], 0.25);
        assert!(build_family("nope", &prior).is_err());
        assert!(build_family("bayes:1", &prior).is_err());
        assert!(build_family("poly:abc", &prior).is_err());
        assert!(family_names().contains(&"bayes"));
    }
}

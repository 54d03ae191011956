//! Message passing over ordered pairs, the tree-indexed product update, and
//! the exact verifier tying messages to tree-structured polynomials.
//!
//! Messages live on ordered pairs `i -> j` and update through
//!
//! ```text
//! m_{i->j}^{t+1} = n^{-1/2} sum_{k != i,j} Y_{ik} F_t(m_{k->i}^t)
//! m_i^{t+1}      = n^{-1/2} sum_{k != i}   Y_{ik} F_t(m_{k->i}^t)
//! mhat_i^{t+1}   = F_t(m_i^{t+1})
//! ```
//!
//! Diagonal entries of `Y` never enter the sums, so the diagonal convention of
//! the data matrix is irrelevant here. The recursion is normally started from
//! zero messages — the exact tree identity checked by [`verify_tree_to_amp`]
//! requires that — but a start at the prior mean is exposed behind
//! [`MpInit::Mean`] for side-by-side comparison; the two starts agree in the
//! large-`n` limit at rate `n^{-1/2}`.

use crate::amp::{expect_se_observable, vector_se, SeIntegrator, VectorSE, MAX_TENSOR_NODES};
use crate::error::{Error, Result};
use crate::model::Observation;
use crate::nonlin::{Nonlinearity, TreeUpdate};
use crate::prior::DiscretePrior;
use crate::rng::{domain, stream};
use crate::trees::{enumerate_rooted_trees, eval_tree_poly, eval_tree_poly_directed, nr_count,
    tree_plus, RootedTree};
use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;

/// Cap on the total message storage of one run (history plus scratch).
pub const MAX_MP_BYTES: u128 = 2 << 30;

/// Ordered pairs sampled per tree when checking messages against the naive
/// polynomial evaluation (the naive side is the bottleneck).
pub const PAIRS_PER_TREE: usize = 50;

/// Bytes held live by [`mp_run`]: `t_iters + 1` stored fields plus one
/// scratch buffer, each `n * n * dim` entries of 8 bytes.
pub fn mp_run_bytes(n: usize, dim: usize, t_iters: usize) -> u128 {
    (n as u128) * (n as u128) * (dim as u128) * 8 * (t_iters as u128 + 2)
}

/// How the message array is started.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MpInit {
    /// All messages zero (required by the exact tree identity).
    Zero,
    /// Every component of every off-diagonal message set to the given prior
    /// mean.
    Mean(f64),
}

/// State of the message-passing recursion after some iteration.
///
/// Messages are stored destination-major: the block for `m_{i->j}` sits at
/// `(j * n + i) * dim`. Blocks `i -> i` are held at zero by convention.
#[derive(Debug, Clone)]
pub struct MessageField {
    pub t: usize,
    n: usize,
    dim: usize,
    messages: Vec<f64>,
    /// Node values `m_i`, one row per `i`; zero rows at `t = 0` where the
    /// recursion does not define them.
    pub node_values: DMatrix<f64>,
    /// Estimates `mhat_i = F_{t-1}(m_i)`, one row per `i`; zero at `t = 0`.
    pub estimates: DMatrix<f64>,
}

impl MessageField {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The message `m_{i->j}` as a `dim`-slice.
    pub fn message(&self, i: usize, j: usize) -> &[f64] {
        let base = (j * self.n + i) * self.dim;
        &self.messages[base..base + self.dim]
    }

    fn initial(n: usize, dim: usize, init: MpInit) -> Self {
        let mut messages = vec![0.0; n * n * dim];
        if let MpInit::Mean(m) = init {
            for j in 0..n {
                for i in 0..n {
                    if i != j {
                        let base = (j * n + i) * dim;
                        messages[base..base + dim].fill(m);
                    }
                }
            }
        }
        MessageField {
            t: 0,
            n,
            dim,
            messages,
            node_values: DMatrix::zeros(n, dim),
            estimates: DMatrix::zeros(n, dim),
        }
    }
}

/// Run the recursion for `fs.len()` iterations and return the full history
/// (`t = 0` first). Cost is `O(n^2 dim)` per iteration via the standard
/// subtract-one-term trick: `m_{i->j} = m_i - n^{-1/2} Y_{ij} F(m_{j->i})`.
pub fn mp_run(
    y: &DMatrix<f64>,
    fs: &[&dyn Nonlinearity],
    init: MpInit,
) -> Result<Vec<MessageField>> {
    let n = y.nrows();
    if y.ncols() != n {
        return Err(Error::invalid("matrix must be square"));
    }
    if n < 3 {
        return Err(Error::invalid("message passing needs n >= 3"));
    }
    if fs.is_empty() {
        return Err(Error::invalid("need at least one nonlinearity"));
    }
    let dim = fs[0].dim();
    if fs.iter().any(|f| f.dim() != dim) {
        return Err(Error::invalid("all nonlinearities must share one dim"));
    }
    let bytes = mp_run_bytes(n, dim, fs.len());
    if bytes > MAX_MP_BYTES {
        return Err(Error::guard(format!(
            "message history needs {bytes} bytes (n = {n}, dim = {dim}, \
             t = {}); guard is {MAX_MP_BYTES}",
            fs.len()
        )));
    }

    let nd = n * dim;
    let rsn = 1.0 / (n as f64).sqrt();
    let mut fields = vec![MessageField::initial(n, dim, init)];
    let mut g = vec![0.0; n * nd];
    for (step, f) in fs.iter().enumerate() {
        let prev = fields.last().expect("non-empty history");
        // g[(i, k)] = F(m_{k->i}), elementwise in the destination-major
        // layout; diagonal blocks are never read and stay zero.
        g.par_chunks_mut(nd).enumerate().for_each(|(dest, grow)| {
            let prow = &prev.messages[dest * nd..(dest + 1) * nd];
            for src in 0..n {
                let blk = src * dim..(src + 1) * dim;
                if src == dest {
                    grow[blk].fill(0.0);
                } else {
                    f.evaluate(&prow[blk.clone()], &mut grow[blk]);
                }
            }
        });
        // Node values: full neighbor sums, ascending k for determinism.
        let mut node_flat = vec![0.0; nd];
        for i in 0..n {
            let grow = &g[i * nd..(i + 1) * nd];
            let out = &mut node_flat[i * dim..(i + 1) * dim];
            for k in 0..n {
                if k == i {
                    continue;
                }
                let w = y[(i, k)] * rsn;
                for c in 0..dim {
                    out[c] += w * grow[k * dim + c];
                }
            }
        }
        // Messages: peel the one excluded term off the node sum.
        let mut messages = vec![0.0; n * nd];
        messages
            .par_chunks_mut(nd)
            .enumerate()
            .for_each(|(j, mrow)| {
                for i in 0..n {
                    if i == j {
                        continue;
                    }
                    let w = y[(i, j)] * rsn;
                    let out = &mut mrow[i * dim..(i + 1) * dim];
                    for c in 0..dim {
                        out[c] = node_flat[i * dim + c] - w * g[i * nd + j * dim + c];
                    }
                }
            });
        let mut est_flat = vec![0.0; nd];
        for i in 0..n {
            f.evaluate(
                &node_flat[i * dim..(i + 1) * dim],
                &mut est_flat[i * dim..(i + 1) * dim],
            );
        }
        fields.push(MessageField {
            t: step + 1,
            n,
            dim,
            messages,
            node_values: DMatrix::from_row_slice(n, dim, &node_flat),
            estimates: DMatrix::from_row_slice(n, dim, &est_flat),
        });
    }
    Ok(fields)
}

/// The special update on tree-indexed vectors: the component at tree `T` maps
/// to the product of the entries at the root-subtrees of `T` (empty product 1
/// at the edgeless tree). `trees` must be closed under root decomposition.
pub fn f_star(m: &[f64], trees: &[RootedTree]) -> Result<Vec<f64>> {
    if m.len() != trees.len() {
        return Err(Error::invalid("vector length must match the tree list"));
    }
    let f = TreeUpdate::new(trees)?;
    let mut out = vec![0.0; m.len()];
    f.evaluate(m, &mut out);
    Ok(out)
}

/// One `(tree, iteration)` row of the identity report.
#[derive(Debug, Clone)]
pub struct TreeCheck {
    pub tree_index: usize,
    pub code: String,
    pub edges: usize,
    pub radius: usize,
    pub t: usize,
    /// Whether the identity is in force (`t > radius`); rows with `false`
    /// are reported but not held to the tolerance.
    pub converged: bool,
    /// Max over sampled pairs of `|m_{i->j}(T) - P_{T+, i->j}(Y)|`.
    pub message_err: f64,
    /// `|m_1(T) - sqrt(|nr(T+)|) / n^{|E(T+)|/2} P_{T+}(Y)|` at vertex 0.
    pub node_err: f64,
    /// `|mhat_1(T) - sqrt(|nr(T)|) / n^{|E(T)|/2} P_T(Y)|` at vertex 0.
    pub mhat_err: f64,
}

impl TreeCheck {
    pub fn worst(&self) -> f64 {
        self.message_err.max(self.node_err).max(self.mhat_err)
    }
}

#[derive(Debug, Clone)]
pub struct TreeToAmpReport {
    pub n: usize,
    pub d: usize,
    pub t_iters: usize,
    pub pairs_per_tree: usize,
    pub checks: Vec<TreeCheck>,
    /// Max discrepancy over rows with `converged = true`.
    pub max_converged_err: f64,
}

/// Run the recursion with the tree-product update and compare every component
/// against the naive polynomial evaluations: messages against the directed
/// polynomial of the root-extended tree at sampled pairs, node values and
/// estimates against the counted tree polynomials at vertex 0. Exact once
/// `t` exceeds the tree radius; earlier rows are marked unconverged.
pub fn verify_tree_to_amp(
    y: &DMatrix<f64>,
    d: usize,
    t_iters: usize,
    pair_seed: u64,
) -> Result<TreeToAmpReport> {
    let n = y.nrows();
    if y.ncols() != n {
        return Err(Error::invalid("matrix must be square"));
    }
    let trees = enumerate_rooted_trees(d)?;
    let max_rad = trees.iter().map(|t| t.radius()).max().unwrap_or(0);
    if t_iters <= max_rad {
        return Err(Error::invalid(format!(
            "t_iters = {t_iters} must exceed the largest tree radius {max_rad}"
        )));
    }
    let f = TreeUpdate::new(&trees)?;
    let fs: Vec<&dyn Nonlinearity> = vec![&f; t_iters];
    let fields = mp_run(y, &fs, MpInit::Zero)?;

    let mut checks = Vec::new();
    let mut max_converged: f64 = 0.0;
    for (a, tree) in trees.iter().enumerate() {
        let tp = tree_plus(tree)?;
        let mut rng = stream(pair_seed, domain::PAIR_SAMPLE, a as u64);
        let pairs: Vec<(usize, usize)> = if n * (n - 1) <= PAIRS_PER_TREE {
            (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .collect()
        } else {
            (0..PAIRS_PER_TREE)
                .map(|_| loop {
                    let i = rng.gen_range(0..n);
                    let j = rng.gen_range(0..n);
                    if i != j {
                        break (i, j);
                    }
                })
                .collect()
        };
        let msg_targets: Vec<f64> = pairs
            .iter()
            .map(|&(i, j)| eval_tree_poly_directed(&tp, y, i, j))
            .collect::<Result<_>>()?;
        // The counted identity in raw form is `n^{-|E|/2} sum_{phi in nr}`;
        // against the sqrt-count-normalized polynomial that is a prefactor of
        // sqrt(|nr|) / n^{|E|/2} (whose square is the 1 + o(1) count ratio).
        let scale = |t: &RootedTree| {
            (nr_count(t, n) as f64).sqrt() / (n as f64).powf(t.edge_count() as f64 / 2.0)
        };
        let node_target = scale(&tp) * eval_tree_poly(&tp, y)?;
        let mhat_target = scale(tree) * eval_tree_poly(tree, y)?;
        for t in 1..=t_iters {
            let field = &fields[t];
            let message_err = pairs
                .iter()
                .zip(&msg_targets)
                .map(|(&(i, j), &target)| (field.message(i, j)[a] - target).abs())
                .fold(0.0f64, f64::max);
            let check = TreeCheck {
                tree_index: a,
                code: tree.canonical_code().to_string(),
                edges: tree.edge_count(),
                radius: tree.radius(),
                t,
                converged: t > tree.radius(),
                message_err,
                node_err: (field.node_values[(0, a)] - node_target).abs(),
                mhat_err: (field.estimates[(0, a)] - mhat_target).abs(),
            };
            if check.converged {
                max_converged = max_converged.max(check.worst());
            }
            checks.push(check);
        }
    }
    Ok(TreeToAmpReport {
        n,
        d,
        t_iters,
        pairs_per_tree: PAIRS_PER_TREE.min(n * (n - 1)),
        checks,
        max_converged_err: max_converged,
    })
}

/// One observable of the distributional check: a monomial of total degree
/// at most 2 in the estimate components and the signal.
#[derive(Debug, Clone)]
pub struct SeObservable {
    pub label: String,
    /// Mean over seeds of the per-seed average `n^{-1} sum_i psi(mhat_i, theta_i)`.
    pub empirical_mean: f64,
    /// Standard deviation of the per-seed averages.
    pub empirical_sd: f64,
    /// `E[psi(F*(mu_t Theta + G_t), Theta)]` under the vector state evolution.
    pub predicted: f64,
    /// `(empirical_mean - predicted) / (empirical_sd / sqrt(reps))`.
    pub z: f64,
}

#[derive(Debug, Clone)]
pub struct MpSeReport {
    pub n: usize,
    pub d: usize,
    pub t: usize,
    pub reps: usize,
    pub observables: Vec<SeObservable>,
}

impl MpSeReport {
    pub fn max_abs_z(&self) -> f64 {
        self.observables
            .iter()
            .map(|o| o.z.abs())
            .fold(0.0, f64::max)
    }
}

enum ObsKind {
    Component(usize),
    ThetaComponent(usize),
    Pair(usize, usize),
}

impl ObsKind {
    fn eval(&self, est: &[f64], theta: f64) -> f64 {
        match *self {
            ObsKind::Component(a) => est[a],
            ObsKind::ThetaComponent(a) => theta * est[a],
            ObsKind::Pair(a, b) => est[a] * est[b],
        }
    }
}

/// Pick a tensor rule that fits the node guard (the integrands here are
/// polynomials of low degree, so a modest level is exact); fall back to the
/// fixed-stream sampler when even level 7 overflows.
fn se_integrator_for(dim: usize, seed: u64) -> SeIntegrator {
    for level in [12usize, 7] {
        if (level as f64).powi(dim as i32) <= MAX_TENSOR_NODES {
            return SeIntegrator::Tensor { level };
        }
    }
    SeIntegrator::MonteCarlo {
        samples: 1_000_000,
        seed,
    }
}

/// Monte-Carlo check of the message-passing state evolution: run the
/// tree-product recursion on sampled data and compare per-seed averages of
/// degree-`<= 2` monomials in `(mhat_i, theta_i)` against the vector state
/// evolution prediction. Predictions always use the zero start; with
/// [`MpInit::Mean`] the empirical side converges to the same limits, which is
/// what the flag is for.
pub fn mp_se_check(
    prior: &DiscretePrior,
    d: usize,
    t: usize,
    n: usize,
    reps: usize,
    seed0: u64,
    init: MpInit,
) -> Result<MpSeReport> {
    if t == 0 {
        return Err(Error::invalid("need at least one iteration"));
    }
    if reps < 2 {
        return Err(Error::invalid("need at least two replicates"));
    }
    let trees = enumerate_rooted_trees(d)?;
    let dim = trees.len();
    let f = TreeUpdate::new(&trees)?;
    let integ = se_integrator_for(dim, seed0);
    let fs: Vec<&dyn Nonlinearity> = vec![&f; t];
    let se: VectorSE = vector_se(prior, &integ, &fs)?;
    let state_t = &se.states[t];

    let mut kinds = Vec::new();
    let mut labels = Vec::new();
    let code = |a: usize| trees[a].canonical_code().to_string();
    for a in 0..dim {
        kinds.push(ObsKind::Component(a));
        labels.push(format!("mhat[{}]", code(a)));
    }
    for a in 0..dim {
        kinds.push(ObsKind::ThetaComponent(a));
        labels.push(format!("theta*mhat[{}]", code(a)));
    }
    for a in 0..dim {
        for b in a..dim {
            kinds.push(ObsKind::Pair(a, b));
            labels.push(format!("mhat[{}]*mhat[{}]", code(a), code(b)));
        }
    }
    let predicted: Vec<f64> = kinds
        .iter()
        .map(|k| {
            expect_se_observable(prior, &integ, t, state_t, &f, &mut |fx, theta| {
                k.eval(fx, theta)
            })
        })
        .collect::<Result<_>>()?;

    // Per-seed averages; seeds run sequentially (each run is internally
    // parallel and the message buffers are large).
    let mut per_seed = vec![Vec::with_capacity(reps); kinds.len()];
    for s in 0..reps {
        let obs = Observation::sample(
            prior,
            n,
            seed0 + s as u64,
            crate::model::DiagonalConvention::GoeVar2,
        )?;
        let fields = mp_run(&obs.y, &fs, init)?;
        let last = &fields[t];
        let mut est = vec![0.0; dim];
        let mut sums = vec![0.0; kinds.len()];
        for i in 0..n {
            for c in 0..dim {
                est[c] = last.estimates[(i, c)];
            }
            let theta = obs.theta[i];
            for (k, kind) in kinds.iter().enumerate() {
                sums[k] += kind.eval(&est, theta);
            }
        }
        for (k, sum) in sums.iter().enumerate() {
            per_seed[k].push(sum / n as f64);
        }
    }

    let observables = kinds
        .iter()
        .enumerate()
        .map(|(k, _)| {
            let vals = &per_seed[k];
            let mean = vals.iter().sum::<f64>() / reps as f64;
            let var =
                vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
            let sd = var.sqrt();
            let diff = mean - predicted[k];
            let z = if sd > 0.0 {
                diff / (sd / (reps as f64).sqrt())
            } else if diff.abs() < 1e-12 {
                0.0
            } else {
                f64::INFINITY
            };
            SeObservable {
                label: labels[k].clone(),
                empirical_mean: mean,
                empirical_sd: sd,
                predicted: predicted[k],
                z,
            }
        })
        .collect();
    Ok(MpSeReport {
        n,
        d,
        t,
        reps,
        observables,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{sample_goe, DiagonalConvention};
    use crate::nonlin::{Constant, Polynomial};
    use crate::prior::DiscretePrior;

    fn three_point_unit() -> DiscretePrior {
        DiscretePrior::three_point(1.0, 0.01).unwrap()
    }

    fn symmetric_noise(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = stream(77, domain::MC_BLOCK, seed);
        sample_goe(n, &mut rng)
    }

    /// The three displays verbatim, O(n^3) per iteration.
    fn literal_mp(
        y: &DMatrix<f64>,
        fs: &[&dyn Nonlinearity],
        init: MpInit,
    ) -> Vec<(Vec<Vec<Vec<f64>>>, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let n = y.nrows();
        let dim = fs[0].dim();
        let rsn = 1.0 / (n as f64).sqrt();
        let init_val = match init {
            MpInit::Zero => 0.0,
            MpInit::Mean(m) => m,
        };
        let mut msgs = vec![vec![vec![0.0; dim]; n]; n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    msgs[i][j] = vec![init_val; dim];
                }
            }
        }
        let mut out = vec![(msgs.clone(), vec![vec![0.0; dim]; n], vec![vec![0.0; dim]; n])];
        for f in fs {
            let prev = &out.last().unwrap().0;
            let mut next = vec![vec![vec![0.0; dim]; n]; n];
            let mut node = vec![vec![0.0; dim]; n];
            let mut est = vec![vec![0.0; dim]; n];
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let mut acc = vec![0.0; dim];
                    for k in 0..n {
                        if k == i || k == j {
                            continue;
                        }
                        let mut fx = vec![0.0; dim];
                        f.evaluate(&prev[k][i], &mut fx);
                        for c in 0..dim {
                            acc[c] += rsn * y[(i, k)] * fx[c];
                        }
                    }
                    next[i][j] = acc;
                }
                let mut acc = vec![0.0; dim];
                for k in 0..n {
                    if k == i {
                        continue;
                    }
                    let mut fx = vec![0.0; dim];
                    f.evaluate(&prev[k][i], &mut fx);
                    for c in 0..dim {
                        acc[c] += rsn * y[(i, k)] * fx[c];
                    }
                }
                f.evaluate(&acc, &mut est[i]);
                node[i] = acc;
            }
            out.push((next, node, est));
        }
        out
    }

    #[test]
    fn f_star_matches_decomposition_products() {
        let trees = enumerate_rooted_trees(3).unwrap();
        let dim = trees.len();
        let m = vec![2.0; dim];
        let out = f_star(&m, &trees).unwrap();
        for (a, tree) in trees.iter().enumerate() {
            match tree.canonical_code() {
                "" => assert_eq!(out[a], 1.0),
                "()" => assert_eq!(out[a], 2.0),
                "()()()" => assert_eq!(out[a], 8.0),
                _ => {}
            }
        }
        // Single edge: output equals the input at the single-vertex subtree.
        let mut m2 = vec![0.0; dim];
        let edgeless = trees
            .iter()
            .position(|t| t.canonical_code() == "")
            .unwrap();
        m2[edgeless] = -3.25;
        let out2 = f_star(&m2, &trees).unwrap();
        let edge = trees
            .iter()
            .position(|t| t.canonical_code() == "()")
            .unwrap();
        assert_eq!(out2[edge], -3.25);
        assert!(f_star(&[1.0], &trees).is_err());
    }

    #[test]
    fn first_iteration_single_edge_component_is_row_sum() {
        let n = 9;
        let y = symmetric_noise(n, 0);
        let trees = enumerate_rooted_trees(2).unwrap();
        let f = TreeUpdate::new(&trees).unwrap();
        let fs: Vec<&dyn Nonlinearity> = vec![&f];
        let fields = mp_run(&y, &fs, MpInit::Zero).unwrap();
        // At t = 1 the update sees F(0), which is 1 at the edgeless component
        // and 0 elsewhere, so the plain row sum lands in the edgeless slot —
        // the value of the directed single-edge polynomial.
        let edgeless = trees
            .iter()
            .position(|t| t.canonical_code() == "")
            .unwrap();
        let edge = trees
            .iter()
            .position(|t| t.canonical_code() == "()")
            .unwrap();
        let rsn = 1.0 / (n as f64).sqrt();
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let manual: f64 = (0..n)
                    .filter(|&k| k != i && k != j)
                    .map(|k| rsn * y[(i, k)])
                    .sum();
                let got = fields[1].message(i, j)[edgeless];
                assert!((got - manual).abs() < 1e-12, "({i},{j}): {got} vs {manual}");
                assert_eq!(fields[1].message(i, j)[edge], 0.0);
            }
        }
    }

    #[test]
    fn matches_literal_recursion_both_inits() {
        let n = 5;
        let y = symmetric_noise(n, 1);
        let trees = enumerate_rooted_trees(2).unwrap();
        let f = TreeUpdate::new(&trees).unwrap();
        let fs: Vec<&dyn Nonlinearity> = vec![&f, &f, &f];
        for init in [MpInit::Zero, MpInit::Mean(0.37)] {
            let fields = mp_run(&y, &fs, init).unwrap();
            let oracle = literal_mp(&y, &fs, init);
            for t in 0..=3 {
                let (msgs, node, est) = &oracle[t];
                for i in 0..n {
                    for c in 0..trees.len() {
                        assert!((fields[t].node_values[(i, c)] - node[i][c]).abs() < 1e-12);
                        assert!((fields[t].estimates[(i, c)] - est[i][c]).abs() < 1e-12);
                        for j in 0..n {
                            assert!(
                                (fields[t].message(i, j)[c] - msgs[i][j][c]).abs() < 1e-12,
                                "t={t} ({i},{j}) comp {c}"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn zero_matrix_keeps_messages_zero() {
        let n = 6;
        let y = DMatrix::zeros(n, n);
        let trees = enumerate_rooted_trees(2).unwrap();
        let f = TreeUpdate::new(&trees).unwrap();
        let fs: Vec<&dyn Nonlinearity> = vec![&f, &f];
        let fields = mp_run(&y, &fs, MpInit::Zero).unwrap();
        let edgeless = trees
            .iter()
            .position(|t| t.canonical_code() == "")
            .unwrap();
        for field in &fields {
            for i in 0..n {
                for j in 0..n {
                    for c in 0..trees.len() {
                        assert_eq!(field.message(i, j)[c], 0.0);
                    }
                }
            }
        }
        // Estimates collapse to the indicator of the edgeless tree.
        for i in 0..n {
            for c in 0..trees.len() {
                let want = if c == edgeless { 1.0 } else { 0.0 };
                assert_eq!(fields[2].estimates[(i, c)], want);
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let y = symmetric_noise(4, 2);
        let c = Constant { values: vec![1.0] };
        let fs: Vec<&dyn Nonlinearity> = vec![&c];
        assert!(mp_run(&DMatrix::zeros(3, 4), &fs, MpInit::Zero).is_err());
        assert!(mp_run(&DMatrix::zeros(2, 2), &fs, MpInit::Zero).is_err());
        assert!(mp_run(&y, &[], MpInit::Zero).is_err());
        let c2 = Constant { values: vec![1.0, 2.0] };
        let mixed: Vec<&dyn Nonlinearity> = vec![&c, &c2];
        assert!(mp_run(&y, &mixed, MpInit::Zero).is_err());
        // Guard arithmetic; the run itself refuses before allocating.
        assert!(mp_run_bytes(20_000, 4, 2) > MAX_MP_BYTES);
        let wide = Constant { values: vec![0.0; 10_000_000] };
        let fs_wide: Vec<&dyn Nonlinearity> = vec![&wide];
        match mp_run(&y, &fs_wide, MpInit::Zero) {
            Err(e) => assert!(e.to_string().contains("guard")),
            Ok(_) => panic!("guard did not trip"),
        }
        // t_iters must exceed the largest radius for the identity check.
        assert!(verify_tree_to_amp(&y, 3, 3, 0).is_err());
    }

    #[test]
    fn permutation_equivariance_on_relabeled_matrix() {
        let n = 6;
        let y = symmetric_noise(n, 3);
        // Fixes index 0, scrambles the rest.
        let perm = [0usize, 3, 1, 5, 2, 4];
        let mut yp = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                yp[(perm[i], perm[j])] = y[(i, j)];
            }
        }
        let trees = enumerate_rooted_trees(2).unwrap();
        let f = TreeUpdate::new(&trees).unwrap();
        let fs: Vec<&dyn Nonlinearity> = vec![&f, &f, &f];
        let base = mp_run(&y, &fs, MpInit::Zero).unwrap();
        let moved = mp_run(&yp, &fs, MpInit::Zero).unwrap();
        for i in 0..n {
            for c in 0..trees.len() {
                assert!(
                    (base[3].estimates[(i, c)] - moved[3].estimates[(perm[i], c)]).abs()
                        < 1e-12
                );
            }
        }
    }

    #[test]
    fn node_update_matches_amp_first_term_for_constant_f() {
        // With a constant F and zero diagonal the node display is exactly the
        // first AMP term n^{-1/2} (Y F)_i.
        let n = 40;
        let mut y = symmetric_noise(n, 4);
        for i in 0..n {
            y[(i, i)] = 0.0;
        }
        let cf = Constant { values: vec![0.7] };
        let fs: Vec<&dyn Nonlinearity> = vec![&cf];
        let fields = mp_run(&y, &fs, MpInit::Zero).unwrap();
        let state = crate::amp::AmpState::init(n, 1);
        let b = DMatrix::zeros(1, 1);
        let next = crate::amp::amp_step(&y, &state, &cf, &b).unwrap();
        for i in 0..n {
            assert!((fields[1].node_values[(i, 0)] - next.x[(i, 0)]).abs() < 1e-12);
        }
        // Messages differ from the node value by the one peeled-off term.
        let rsn = 1.0 / (n as f64).sqrt();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let want = fields[1].node_values[(i, 0)] - rsn * y[(i, j)] * 0.7;
                    assert!((fields[1].message(i, j)[0] - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn scalar_polynomial_reduction_matches_literal() {
        // dim = 1 with a cubic F: the recursion is plain scalar message
        // passing; cross-check against the literal triple loop.
        let n = 7;
        let y = symmetric_noise(n, 5);
        let p = Polynomial::new(vec![0.1, 0.8, 0.0, -0.3]).unwrap();
        let fs: Vec<&dyn Nonlinearity> = vec![&p, &p];
        let fields = mp_run(&y, &fs, MpInit::Zero).unwrap();
        let oracle = literal_mp(&y, &fs, MpInit::Zero);
        for t in 0..=2 {
            for i in 0..n {
                for j in 0..n {
                    assert!((fields[t].message(i, j)[0] - oracle[t].0[i][j][0]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn tree_identity_exact_at_small_n() {
        let p = three_point_unit();
        for (seed, n) in [(11u64, 8usize), (12, 6)] {
            let obs = Observation::sample(&p, n, seed, DiagonalConvention::GoeVar2).unwrap();
            let report = verify_tree_to_amp(&obs.y, 3, 4, seed).unwrap();
            assert!(
                report.max_converged_err < 1e-9,
                "n={n}: {}",
                report.max_converged_err
            );
            // Unconverged rows exist (radius-3 trees at t <= 3) and carry
            // real discrepancies, which is what the marking is for.
            assert!(report.checks.iter().any(|c| !c.converged));
            let late = report
                .checks
                .iter()
                .filter(|c| !c.converged)
                .map(|c| c.worst())
                .fold(0.0f64, f64::max);
            assert!(late > 1e-6, "unconverged rows unexpectedly tiny: {late}");
        }
    }

    #[test]
    fn edgeless_estimate_is_one_at_every_iteration() {
        let p = three_point_unit();
        let obs = Observation::sample(&p, 10, 13, DiagonalConvention::GoeVar2).unwrap();
        let report = verify_tree_to_amp(&obs.y, 2, 3, 0).unwrap();
        for check in report.checks.iter().filter(|c| c.code.is_empty()) {
            assert_eq!(check.mhat_err, 0.0);
            assert!(check.converged);
        }
    }

    #[test]
    fn se_check_predictions_and_small_run() {
        let p = three_point_unit();
        let report = mp_se_check(&p, 2, 2, 500, 8, 7, MpInit::Zero).unwrap();
        // The edgeless estimate is identically 1: exact on both sides.
        let edgeless = report
            .observables
            .iter()
            .find(|o| o.label == "mhat[]")
            .unwrap();
        assert_eq!(edgeless.empirical_mean, 1.0);
        // Prediction carries quadrature weight-sum roundoff (~1e-13).
        assert!((edgeless.predicted - 1.0).abs() < 1e-12);
        assert_eq!(edgeless.z, 0.0);
        // theta*mhat predictions are the next state-evolution mean.
        let trees = enumerate_rooted_trees(2).unwrap();
        let f = TreeUpdate::new(&trees).unwrap();
        let fs: Vec<&dyn Nonlinearity> = vec![&f, &f, &f];
        let integ = se_integrator_for(trees.len(), 7);
        let se = vector_se(&p, &integ, &fs).unwrap();
        for (a, tree) in trees.iter().enumerate() {
            let label = format!("theta*mhat[{}]", tree.canonical_code());
            let o = report.observables.iter().find(|o| o.label == label).unwrap();
            assert!(
                (o.predicted - se.states[3].mu[a]).abs() < 1e-10,
                "{label}: {} vs {}",
                o.predicted,
                se.states[3].mu[a]
            );
        }
        // Loose finite-size sanity bound at this small scale.
        assert!(
            report.max_abs_z() < 12.0,
            "max |z| = {}",
            report.max_abs_z()
        );
        assert!(mp_se_check(&p, 2, 0, 100, 4, 0, MpInit::Zero).is_err());
        assert!(mp_se_check(&p, 2, 1, 100, 1, 0, MpInit::Zero).is_err());
    }
}

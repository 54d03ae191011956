//! Low-degree estimator layer: rooted multigraph shapes, centered graph
//! polynomials in an orthonormal Hermite family, Monte-Carlo estimation of
//! the correlation vector and Gram matrix, and the optimal-coefficient
//! mean-squared-error solve.
//!
//! The basis element attached to a shape `A` with connected components
//! `C(A)` is
//!
//! ```text
//!     H_A(Y) = |emb(A)|^{-1/2} * sum_{phi in emb(A)}
//!              prod_{gamma in C(A)} ( h_gamma(Y restricted to phi) - E h_gamma )
//! ```
//!
//! where `emb(A)` is the set of injective vertex labelings sending the root
//! to index 1, `h_gamma` multiplies one orthonormal Hermite factor per
//! support pair (degree = multiplicity), and each component is centered by
//! its exact model expectation. Everything here runs under the unit-variance
//! diagonal convention: the statistics this basis approximates never read
//! the diagonal, and unit variance keeps every matrix entry standard
//! Gaussian under the null, which is what the Hermite family is orthonormal
//! against.
//!
//! Two evaluation paths exist. [`eval_h_graph`] enumerates embeddings
//! literally — transparent, exponentially slow, guarded — and serves as the
//! oracle. [`GraphBasisEvaluator`] compiles each shape into closed-form
//! terms: expand the centered product over components, convert the injective
//! sum into unrestricted sums by inclusion–exclusion over vertex-coincidence
//! partitions (with the product of signed factorials as the partition
//! weight), and factor each unrestricted sum over the connected pieces of
//! the collapsed shape. One sample then costs O(n^2) no matter how many
//! shapes are evaluated. A test pins the two paths against each other.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{DiagonalConvention, Observation};
use crate::prior::DiscretePrior;
use crate::trees::{enumerate_rooted_trees, eval_tree_poly, RootedTree};

/// Enumeration cap on total edge multiplicity.
pub const MAX_GRAPH_EDGES: usize = 3;

/// Gram-estimation cap: the compiled evaluator handles shapes with total
/// edge multiplicity up to this bound.
pub const MAX_GRAM_EDGES: usize = 2;

/// Guard on the literal embedding sum of [`eval_h_graph`].
pub const MAX_EVAL_TERMS: f64 = 1e7;

/// Samples per Monte-Carlo work unit; blocks are merged in index order so
/// the estimate is bit-identical regardless of thread count.
pub const GRAM_BLOCK_SAMPLES: u64 = 1024;

/// Number of regression blocks in [`tree_basis_consistency`].
pub const TREE_BASIS_BLOCKS: usize = 16;

/// Below this eigenvalue the Gram matrix is treated as numerically singular.
pub const MIN_GRAM_EIGENVALUE: f64 = 1e-8;

/// Reported positive-definiteness floor in [`block_structure_report`].
pub const GRAM_EIG_FLOOR: f64 = 0.1;

/// One support pair of a multigraph: `(u, v, multiplicity)` with `u <= v`.
pub type MultiEdge = (usize, usize, usize);

/// A rooted multigraph up to root-preserving isomorphism.
///
/// Vertices are `0..vertex_count()` with the root always at `0`. Self-loops
/// and repeated pairs are allowed; edges are stored in support form (one
/// entry per distinct pair, carrying its multiplicity). No vertex other than
/// the root may be isolated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphShape {
    vertices: usize,
    edges: Vec<MultiEdge>,
    code: String,
    is_tree: bool,
    components: Vec<Vec<MultiEdge>>,
}

impl GraphShape {
    fn from_support(vertices: usize, support: Vec<MultiEdge>) -> Self {
        let (edges, code) = canonical_form(vertices, &support);
        let components = edge_components(&edges);
        let is_tree = compute_is_tree(vertices, &edges, &components);
        GraphShape {
            vertices,
            edges,
            code,
            is_tree,
            components,
        }
    }

    /// The edgeless shape (a bare root).
    pub fn empty() -> Self {
        GraphShape::from_support(1, Vec::new())
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices
    }

    /// The root's vertex index (always 0; kept explicit for readers).
    pub fn root(&self) -> usize {
        0
    }

    /// Total edge count, multiplicities included.
    pub fn edge_count(&self) -> usize {
        self.edges.iter().map(|&(_, _, m)| m).sum()
    }

    /// Support pairs `(u, v, multiplicity)`, sorted, `u <= v`.
    pub fn support(&self) -> &[MultiEdge] {
        &self.edges
    }

    /// Canonical code; equal codes mean root-preserving isomorphic shapes.
    pub fn canonical_code(&self) -> &str {
        &self.code
    }

    /// True when the shape is connected, simple, contains the root, and has
    /// `|V| = |E| + 1`; the edgeless shape counts as a tree.
    pub fn is_tree(&self) -> bool {
        self.is_tree
    }

    /// Connected components of the edge set (vertex-disjoint groups of
    /// support pairs). Edgeless vertices appear in no component.
    pub fn components(&self) -> &[Vec<MultiEdge>] {
        &self.components
    }

    /// Number of injective labelings into `1..=n` with the root pinned to
    /// the first index: `(n-1)(n-2)...(n-|V|+1)`.
    pub fn emb_count(&self, n: usize) -> u128 {
        if n < self.vertices {
            return 0;
        }
        let mut acc: u128 = 1;
        for k in 1..self.vertices {
            acc *= (n - k) as u128;
        }
        acc
    }
}

fn encode_shape(vertices: usize, edges: &[MultiEdge]) -> String {
    let mut s = format!("g{vertices}");
    for &(u, v, m) in edges {
        s.push_str(&format!("|{u}-{v}^{m}"));
    }
    s
}

fn for_each_permutation(k: usize, f: &mut dyn FnMut(&[usize])) {
    fn rec(items: &mut Vec<usize>, at: usize, f: &mut dyn FnMut(&[usize])) {
        if at == items.len() {
            f(items);
            return;
        }
        for i in at..items.len() {
            items.swap(at, i);
            rec(items, at + 1, f);
            items.swap(at, i);
        }
    }
    let mut items: Vec<usize> = (0..k).collect();
    rec(&mut items, 0, f);
}

/// Relabel the non-root vertices to the lexicographically smallest edge
/// list. Root-preserving isomorphism is exactly invariance under these
/// relabelings, so the minimum is a canonical representative.
fn canonical_form(vertices: usize, support: &[MultiEdge]) -> (Vec<MultiEdge>, String) {
    let free = vertices.saturating_sub(1);
    let mut best: Option<Vec<MultiEdge>> = None;
    for_each_permutation(free, &mut |perm| {
        let mut mapped: Vec<MultiEdge> = support
            .iter()
            .map(|&(u, v, m)| {
                let a = if u == 0 { 0 } else { 1 + perm[u - 1] };
                let b = if v == 0 { 0 } else { 1 + perm[v - 1] };
                (a.min(b), a.max(b), m)
            })
            .collect();
        mapped.sort_unstable();
        if best.as_ref().map_or(true, |b| mapped < *b) {
            best = Some(mapped);
        }
    });
    let edges = best.unwrap_or_default();
    let code = encode_shape(vertices, &edges);
    (edges, code)
}

fn edge_components(edges: &[MultiEdge]) -> Vec<Vec<MultiEdge>> {
    let max_v = edges.iter().map(|&(_, v, _)| v).max().unwrap_or(0);
    let mut parent: Vec<usize> = (0..=max_v).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for &(u, v, _) in edges {
        let (a, b) = (find(&mut parent, u), find(&mut parent, v));
        if a != b {
            parent[a] = b;
        }
    }
    let mut groups: BTreeMap<usize, Vec<MultiEdge>> = BTreeMap::new();
    for &e in edges {
        groups.entry(find(&mut parent, e.0)).or_default().push(e);
    }
    let mut comps: Vec<Vec<MultiEdge>> = groups.into_values().collect();
    comps.sort_by_key(|g| g[0]);
    comps
}

fn compute_is_tree(vertices: usize, edges: &[MultiEdge], components: &[Vec<MultiEdge>]) -> bool {
    if edges.is_empty() {
        return vertices == 1;
    }
    if edges.iter().any(|&(u, v, m)| u == v || m != 1) {
        return false;
    }
    if components.len() != 1 {
        return false;
    }
    let mut covered = vec![false; vertices];
    for &(u, v, _) in edges {
        covered[u] = true;
        covered[v] = true;
    }
    covered.iter().all(|&b| b) && edges.len() == vertices - 1
}

/// Emit every nondecreasing edge sequence with restricted label growth: a
/// new vertex label may only be one past the largest label seen so far.
/// Every multigraph without isolated non-root vertices appears at least
/// once; canonical dedup removes the repeats.
fn gen_sequences(
    cur: &mut Vec<(usize, usize)>,
    max_label: usize,
    budget: usize,
    emit: &mut dyn FnMut(&[(usize, usize)]),
) {
    emit(cur);
    if cur.len() == budget {
        return;
    }
    let last = cur.last().copied();
    for u in 0..=max_label + 1 {
        let vmax = if u > max_label { u + 1 } else { max_label + 1 };
        for v in u..=vmax {
            if last.map_or(true, |l| (u, v) >= l) {
                cur.push((u, v));
                gen_sequences(cur, max_label.max(v), budget, emit);
                cur.pop();
            }
        }
    }
}

fn to_support(seq: &[(usize, usize)]) -> Vec<MultiEdge> {
    let mut out: Vec<MultiEdge> = Vec::new();
    for &(u, v) in seq {
        if let Some(last) = out.last_mut() {
            if last.0 == u && last.1 == v {
                last.2 += 1;
                continue;
            }
        }
        out.push((u, v, 1));
    }
    out
}

/// All rooted multigraphs with total edge multiplicity at most `d`, up to
/// root-preserving isomorphism, sorted by (edge count, vertex count, code).
pub fn enumerate_rooted_multigraphs(d: usize) -> Result<Vec<GraphShape>> {
    if d > MAX_GRAPH_EDGES {
        return Err(Error::guard(format!(
            "multigraph enumeration is capped at total edge multiplicity {MAX_GRAPH_EDGES} \
             (requested {d}); the basis dimension and the embedding sums grow too fast beyond it"
        )));
    }
    let mut seen: BTreeMap<String, GraphShape> = BTreeMap::new();
    let mut cur: Vec<(usize, usize)> = Vec::new();
    gen_sequences(&mut cur, 0, d, &mut |seq| {
        let support = to_support(seq);
        let vertices = seq.iter().map(|&(_, v)| v).max().map_or(1, |m| m + 1);
        let shape = GraphShape::from_support(vertices, support);
        seen.entry(shape.code.clone()).or_insert(shape);
    });
    let mut shapes: Vec<GraphShape> = seen.into_values().collect();
    shapes.sort_by(|a, b| {
        (a.edge_count(), a.vertices, &a.code).cmp(&(b.edge_count(), b.vertices, &b.code))
    });
    Ok(shapes)
}

/// Convert a tree-flagged shape into the rooted-tree representation, so the
/// two enumerations can be compared code-for-code.
pub fn tree_shape_to_rooted(shape: &GraphShape) -> Result<RootedTree> {
    if !shape.is_tree {
        return Err(Error::invalid(format!(
            "shape {} is not a rooted tree",
            shape.code
        )));
    }
    if shape.vertices == 1 {
        return Ok(RootedTree::single_vertex());
    }
    let mut adj = vec![Vec::new(); shape.vertices];
    for &(u, v, _) in &shape.edges {
        adj[u].push(v);
        adj[v].push(u);
    }
    let mut new_label = vec![usize::MAX; shape.vertices];
    let mut parents: Vec<Option<usize>> = vec![None];
    new_label[0] = 0;
    let mut queue = std::collections::VecDeque::from([0usize]);
    while let Some(v) = queue.pop_front() {
        let mut nbrs = adj[v].clone();
        nbrs.sort_unstable();
        for w in nbrs {
            if new_label[w] == usize::MAX {
                new_label[w] = parents.len();
                parents.push(Some(new_label[v]));
                queue.push_back(w);
            }
        }
    }
    RootedTree::from_parents(&parents)
}

/// Orthonormal (probabilists', unit-norm) Hermite polynomial `h_k(x)` via
/// the stable recurrence `h_{k+1} = (x h_k - sqrt(k) h_{k-1}) / sqrt(k+1)`,
/// so that `E[h_j(G) h_k(G)] = delta_{jk}` for standard Gaussian `G`.
pub fn hermite(k: usize, x: f64) -> f64 {
    let mut prev = 0.0;
    let mut cur = 1.0;
    for j in 0..k {
        let next = (x * cur - (j as f64).sqrt() * prev) / ((j + 1) as f64).sqrt();
        prev = cur;
        cur = next;
    }
    cur
}

/// Exact expectation of one connected component's Hermite product under the
/// planted model:
///
/// ```text
///     E h_gamma = n^{-|gamma|/2} * prod_v E[Theta^{deg v}] / sqrt(gamma!)
/// ```
///
/// with degrees counting multiplicity and self-loops contributing 2, and
/// `gamma!` the product of the per-pair multiplicity factorials.
pub fn expected_h_gamma(gamma: &[MultiEdge], prior: &DiscretePrior, n: usize) -> Result<f64> {
    if gamma.is_empty() {
        return Err(Error::invalid(
            "component expectation needs at least one edge",
        ));
    }
    if edge_components(gamma).len() != 1 {
        return Err(Error::invalid(
            "expected_h_gamma takes a single connected component",
        ));
    }
    let mut total = 0usize;
    let mut fact = 1.0;
    let mut degrees: BTreeMap<usize, usize> = BTreeMap::new();
    for &(u, v, m) in gamma {
        if m == 0 {
            return Err(Error::invalid("zero multiplicity in a component"));
        }
        total += m;
        fact *= (1..=m).product::<usize>() as f64;
        if u == v {
            *degrees.entry(u).or_insert(0) += 2 * m;
        } else {
            *degrees.entry(u).or_insert(0) += m;
            *degrees.entry(v).or_insert(0) += m;
        }
    }
    let mut value = (n as f64).powf(-(total as f64) / 2.0) / fact.sqrt();
    for (_, d) in degrees {
        value *= prior.moment(d as u32);
    }
    Ok(value)
}

/// Reject the variance-2 diagonal convention for graph-basis work.
pub fn require_unit_diag(convention: DiagonalConvention) -> Result<()> {
    match convention {
        DiagonalConvention::UnitVar1 => Ok(()),
        DiagonalConvention::GoeVar2 => Err(Error::invalid(
            "the centered graph basis requires the unit-variance diagonal convention: every \
             matrix entry must be standard Gaussian under the null for the Hermite family to \
             be orthonormal, and the tree-structured statistics being approximated never read \
             the diagonal, so nothing is lost by resampling with \"unit\"",
        )),
    }
}

fn embed_sum(
    y: &DMatrix<f64>,
    shape: &GraphShape,
    centers: &[f64],
    labels: &mut [usize],
    used: &mut [bool],
    slot: usize,
) -> f64 {
    if slot == shape.vertices {
        let mut prod = 1.0;
        for (gamma, center) in shape.components.iter().zip(centers) {
            let mut hval = 1.0;
            for &(u, v, m) in gamma {
                hval *= hermite(m, y[(labels[u], labels[v])]);
            }
            prod *= hval - center;
        }
        return prod;
    }
    let mut acc = 0.0;
    for lab in 1..y.nrows() {
        if !used[lab] {
            used[lab] = true;
            labels[slot] = lab;
            acc += embed_sum(y, shape, centers, labels, used, slot + 1);
            used[lab] = false;
        }
    }
    acc
}

/// Literal embedding-sum evaluation of the centered graph polynomial `H_A`.
///
/// This is the oracle: it walks every injective labeling (root pinned to
/// index 0 of the matrix), so its cost is `(n-1)(n-2)...`; a guard refuses
/// runs beyond [`MAX_EVAL_TERMS`] labelings. The empty shape evaluates to 1
/// for any input.
pub fn eval_h_graph(obs: &Observation, shape: &GraphShape, prior: &DiscretePrior) -> Result<f64> {
    require_unit_diag(obs.convention)?;
    let n = obs.n;
    if n < shape.vertices {
        return Err(Error::invalid(format!(
            "n = {n} is too small to embed a {}-vertex shape injectively",
            shape.vertices
        )));
    }
    let terms = (n as f64).powi(shape.vertices as i32 - 1);
    if terms > MAX_EVAL_TERMS {
        return Err(Error::guard(format!(
            "literal embedding sum over ~{terms:.1e} labelings exceeds the {MAX_EVAL_TERMS:.0e} \
             guard; use the compiled evaluator"
        )));
    }
    let centers: Vec<f64> = shape
        .components
        .iter()
        .map(|g| expected_h_gamma(g, prior, n))
        .collect::<Result<Vec<_>>>()?;
    let mut labels = vec![0usize; shape.vertices];
    let mut used = vec![false; n];
    used[0] = true;
    let sum = embed_sum(&obs.y, shape, &centers, &mut labels, &mut used, 1);
    Ok(sum / (shape.emb_count(n) as f64).sqrt())
}

/// Whitelisted scalar functions of the signal coordinate. The list is
/// closed so that `E[psi]` and `E[psi^2]` are exact prior sums rather than
/// estimates.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum PsiSpec {
    /// `psi(theta) = theta`.
    Identity,
    /// `psi(theta) = theta^2`.
    Square,
    /// `psi(theta) = 1` when theta equals the k-th prior atom, else 0.
    Atom(usize),
}

impl PsiSpec {
    pub fn validate(&self, prior: &DiscretePrior) -> Result<()> {
        match *self {
            PsiSpec::Atom(k) if k >= prior.atoms().len() => Err(Error::invalid(format!(
                "atom index {k} out of range: the prior has {} atoms",
                prior.atoms().len()
            ))),
            _ => Ok(()),
        }
    }

    /// Evaluate at a signal value. Atom comparison is exact equality, which
    /// is sound because sampling returns atom values verbatim.
    pub fn eval(&self, prior: &DiscretePrior, theta: f64) -> f64 {
        match *self {
            PsiSpec::Identity => theta,
            PsiSpec::Square => theta * theta,
            PsiSpec::Atom(k) => {
                if theta == prior.atoms()[k] {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Exact `E[psi(Theta)]`.
    pub fn expected_value(&self, prior: &DiscretePrior) -> f64 {
        match *self {
            PsiSpec::Identity => prior.mean(),
            PsiSpec::Square => prior.second_moment(),
            PsiSpec::Atom(k) => prior.weights()[k],
        }
    }

    /// Exact `E[psi(Theta)^2]`.
    pub fn expected_square(&self, prior: &DiscretePrior) -> f64 {
        match *self {
            PsiSpec::Identity => prior.second_moment(),
            PsiSpec::Square => prior.moment(4),
            PsiSpec::Atom(k) => prior.weights()[k],
        }
    }

    pub fn label(&self) -> String {
        match *self {
            PsiSpec::Identity => "identity".to_string(),
            PsiSpec::Square => "square".to_string(),
            PsiSpec::Atom(k) => format!("atom:{k}"),
        }
    }
}

impl std::str::FromStr for PsiSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(PsiSpec::Identity),
            "square" => Ok(PsiSpec::Square),
            other => match other.strip_prefix("atom:") {
                Some(idx) => idx
                    .parse()
                    .map(PsiSpec::Atom)
                    .map_err(|_| Error::invalid(format!("bad atom index {idx:?}"))),
                None => Err(Error::invalid(format!(
                    "unknown psi {other:?}: the whitelist is \"identity\", \"square\", \
                     \"atom:K\" (kept closed so E[psi^2] is exact)"
                ))),
            },
        }
    }
}

/// One endpoint of a collapsed factor: the root (label pinned) or a free
/// block summed over `2..=n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum Vx {
    Root,
    Free(u8),
}

/// A connected group of Hermite factors over the root and free blocks,
/// canonical under renumbering of the blocks. Its value on a sample is the
/// unrestricted sum over the free blocks of the factor product.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
struct PatternKey(Vec<(Vx, Vx, u8)>);

fn canonical_pattern(factors: &[(Vx, Vx, u8)]) -> PatternKey {
    let mut ids: Vec<u8> = Vec::new();
    for &(a, b, _) in factors {
        for side in [a, b] {
            if let Vx::Free(i) = side {
                if !ids.contains(&i) {
                    ids.push(i);
                }
            }
        }
    }
    ids.sort_unstable();
    let mut best: Option<Vec<(Vx, Vx, u8)>> = None;
    for_each_permutation(ids.len(), &mut |perm| {
        let map = |x: Vx| match x {
            Vx::Root => Vx::Root,
            Vx::Free(i) => {
                let pos = ids.iter().position(|&j| j == i).unwrap();
                Vx::Free(perm[pos] as u8)
            }
        };
        let mut mapped: Vec<(Vx, Vx, u8)> = factors
            .iter()
            .map(|&(a, b, m)| {
                let (x, y) = (map(a), map(b));
                if x <= y {
                    (x, y, m)
                } else {
                    (y, x, m)
                }
            })
            .collect();
        mapped.sort_unstable();
        if best.as_ref().map_or(true, |b| mapped < *b) {
            best = Some(mapped);
        }
    });
    PatternKey(best.unwrap_or_default())
}

/// Split factors into groups connected through shared free blocks. The root
/// never joins groups: its label is pinned, so sums factor across it.
fn group_factors(factors: &[(Vx, Vx, u8)]) -> Vec<Vec<(Vx, Vx, u8)>> {
    let mut groups: Vec<Vec<(Vx, Vx, u8)>> = Vec::new();
    let mut owner: HashMap<u8, usize> = HashMap::new();
    for &f in factors {
        let mut ids: Vec<u8> = Vec::new();
        if let Vx::Free(i) = f.0 {
            ids.push(i);
        }
        if let Vx::Free(i) = f.1 {
            if !ids.contains(&i) {
                ids.push(i);
            }
        }
        let mut hit: Vec<usize> = ids.iter().filter_map(|i| owner.get(i).copied()).collect();
        hit.sort_unstable();
        hit.dedup();
        let target = match hit.first() {
            None => {
                groups.push(Vec::new());
                groups.len() - 1
            }
            Some(&g) => {
                for &h in &hit[1..] {
                    let moved = std::mem::take(&mut groups[h]);
                    groups[g].extend(moved);
                }
                for v in owner.values_mut() {
                    if hit[1..].contains(v) {
                        *v = g;
                    }
                }
                g
            }
        };
        groups[target].push(f);
        for i in ids {
            owner.insert(i, target);
        }
    }
    groups.retain(|g| !g.is_empty());
    groups
}

fn pattern_free_count(key: &PatternKey) -> usize {
    let mut k = 0usize;
    for &(a, b, _) in &key.0 {
        if let Vx::Free(i) = a {
            k = k.max(i as usize + 1);
        }
        if let Vx::Free(i) = b {
            k = k.max(i as usize + 1);
        }
    }
    k
}

fn validate_pattern(key: &PatternKey) -> Result<()> {
    let k = pattern_free_count(key);
    if k <= 2 {
        return Ok(());
    }
    let chain = k == 3
        && key.0.len() == 2
        && key.0.iter().all(|&(a, b, _)| {
            matches!(a, Vx::Free(_)) && matches!(b, Vx::Free(_)) && a != b
        });
    if chain {
        return Ok(());
    }
    Err(Error::guard(
        "compiled evaluator supports shapes with total edge multiplicity <= 2; a collapsed \
         factor group spans more than three free blocks",
    ))
}

fn set_partitions(items: &[usize]) -> Vec<Vec<Vec<usize>>> {
    let mut out: Vec<Vec<Vec<usize>>> = vec![Vec::new()];
    for &x in items {
        let mut next = Vec::with_capacity(out.len() * 2);
        for part in &out {
            for b in 0..part.len() {
                let mut q = part.clone();
                q[b].push(x);
                next.push(q);
            }
            let mut q = part.clone();
            q.push(vec![x]);
            next.push(q);
        }
        out = next;
    }
    out
}

/// Partition weight in the injective-to-unrestricted conversion:
/// `prod_blocks (-1)^{|B|-1} (|B|-1)!`.
fn mobius_block(len: usize) -> f64 {
    let fact: usize = (1..len).product();
    if len % 2 == 0 {
        -(fact as f64)
    } else {
        fact as f64
    }
}

fn falling(a: f64, k: usize) -> f64 {
    let mut acc = 1.0;
    for t in 0..k {
        acc *= a - t as f64;
    }
    acc
}

#[derive(Debug, Clone)]
struct Term {
    coeff: f64,
    pattern_ids: Vec<u32>,
}

#[derive(Debug, Clone)]
struct Plan {
    inv_sqrt_emb: f64,
    terms: Vec<Term>,
}

fn compile_plan(
    shape: &GraphShape,
    prior: &DiscretePrior,
    n: usize,
    registry: &mut Vec<PatternKey>,
    pattern_ids: &mut HashMap<PatternKey, u32>,
) -> Result<Plan> {
    let p = shape.vertices - 1;
    let comps = &shape.components;
    let centers: Vec<f64> = comps
        .iter()
        .map(|g| expected_h_gamma(g, prior, n))
        .collect::<Result<Vec<_>>>()?;
    let mut terms: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
    for mask in 0u32..(1 << comps.len()) {
        let mut coeff0 = 1.0;
        let mut wset: BTreeSet<usize> = BTreeSet::new();
        for (i, comp) in comps.iter().enumerate() {
            if mask & (1 << i) == 0 {
                coeff0 *= -centers[i];
            } else {
                for &(u, v, _) in comp {
                    if u != 0 {
                        wset.insert(u);
                    }
                    if v != 0 {
                        wset.insert(v);
                    }
                }
            }
        }
        let w: Vec<usize> = wset.into_iter().collect();
        // Vertices outside the selected components only need injective
        // labels, so they contribute a falling-factorial count.
        let ff = falling((n - 1 - w.len()) as f64, p - w.len());
        for part in set_partitions(&w) {
            let mut mobius = 1.0;
            let mut block_of: HashMap<usize, u8> = HashMap::new();
            for (bi, block) in part.iter().enumerate() {
                mobius *= mobius_block(block.len());
                for &x in block {
                    block_of.insert(x, bi as u8);
                }
            }
            let vx_of = |v: usize| {
                if v == 0 {
                    Vx::Root
                } else {
                    Vx::Free(block_of[&v])
                }
            };
            let mut factors: Vec<(Vx, Vx, u8)> = Vec::new();
            for (i, comp) in comps.iter().enumerate() {
                if mask & (1 << i) != 0 {
                    for &(u, v, m) in comp {
                        let (a, b) = (vx_of(u), vx_of(v));
                        let (a, b) = if a <= b { (a, b) } else { (b, a) };
                        factors.push((a, b, m as u8));
                    }
                }
            }
            let mut ids: Vec<u32> = Vec::new();
            for g in group_factors(&factors) {
                let key = canonical_pattern(&g);
                validate_pattern(&key)?;
                let next_id = registry.len() as u32;
                let id = *pattern_ids.entry(key.clone()).or_insert_with(|| {
                    registry.push(key);
                    next_id
                });
                ids.push(id);
            }
            ids.sort_unstable();
            *terms.entry(ids).or_insert(0.0) += coeff0 * ff * mobius;
        }
    }
    Ok(Plan {
        inv_sqrt_emb: 1.0 / (shape.emb_count(n) as f64).sqrt(),
        terms: terms
            .into_iter()
            .map(|(pattern_ids, coeff)| Term { coeff, pattern_ids })
            .collect(),
    })
}

fn pattern_value(key: &PatternKey, n: usize, h: &[Vec<f64>], rowsum: &[Vec<f64>]) -> f64 {
    let factors = &key.0;
    match pattern_free_count(key) {
        0 => factors
            .iter()
            .map(|&(_, _, m)| h[m as usize - 1][0])
            .product(),
        1 => {
            let mut acc = 0.0;
            for i in 1..n {
                let mut prod = 1.0;
                for &(a, b, m) in factors {
                    let hm = &h[m as usize - 1];
                    prod *= match (a, b) {
                        (Vx::Root, Vx::Free(_)) => hm[i],
                        (Vx::Free(_), Vx::Free(_)) => hm[i * n + i],
                        _ => unreachable!("root-only factors group alone"),
                    };
                }
                acc += prod;
            }
            acc
        }
        2 => {
            let mut acc = 0.0;
            for i in 1..n {
                for j in 1..n {
                    let mut prod = 1.0;
                    for &(a, b, m) in factors {
                        let hm = &h[m as usize - 1];
                        prod *= match (a, b) {
                            (Vx::Root, Vx::Free(0)) => hm[i],
                            (Vx::Root, Vx::Free(1)) => hm[j],
                            (Vx::Free(0), Vx::Free(0)) => hm[i * n + i],
                            (Vx::Free(1), Vx::Free(1)) => hm[j * n + j],
                            (Vx::Free(0), Vx::Free(1)) => hm[i * n + j],
                            _ => unreachable!("factors are endpoint-sorted"),
                        };
                    }
                    acc += prod;
                }
            }
            acc
        }
        3 => {
            // Exactly two free-free factors sharing one block: sum the
            // shared block against the two dangling-end row sums.
            let m0 = factors[0].2 as usize - 1;
            let m1 = factors[1].2 as usize - 1;
            let mut acc = 0.0;
            for s in 1..n {
                acc += rowsum[m0][s] * rowsum[m1][s];
            }
            acc
        }
        _ => unreachable!("wider patterns are rejected at compile time"),
    }
}

/// Scratch space for one evaluation thread: entrywise Hermite matrices,
/// their root-excluded column sums, and the per-sample pattern values.
#[derive(Debug, Clone)]
pub struct EvalScratch {
    h: Vec<Vec<f64>>,
    rowsum: Vec<Vec<f64>>,
    pvals: Vec<f64>,
}

/// Compiled evaluator for a fixed shape list, prior, and n.
///
/// Construction precomputes, per shape, the expansion of the centered
/// component product and the inclusion–exclusion over vertex coincidences;
/// evaluation reduces every shape to a handful of shared O(n^2) sums.
#[derive(Debug, Clone)]
pub struct GraphBasisEvaluator {
    n: usize,
    hmax: usize,
    dim: usize,
    patterns: Vec<PatternKey>,
    plans: Vec<Plan>,
}

impl GraphBasisEvaluator {
    pub fn new(shapes: &[GraphShape], prior: &DiscretePrior, n: usize) -> Result<Self> {
        if shapes.is_empty() {
            return Err(Error::invalid("evaluator needs at least one shape"));
        }
        if n < 3 {
            return Err(Error::invalid("n must be at least 3"));
        }
        let mut hmax = 1;
        for s in shapes {
            if s.edge_count() > MAX_GRAM_EDGES {
                return Err(Error::guard(format!(
                    "compiled evaluator handles total edge multiplicity <= {MAX_GRAM_EDGES}, \
                     got {} in shape {}",
                    s.edge_count(),
                    s.code
                )));
            }
            if n < s.vertices {
                return Err(Error::invalid(format!(
                    "n = {n} cannot embed the {}-vertex shape {}",
                    s.vertices, s.code
                )));
            }
            for &(_, _, m) in &s.edges {
                hmax = hmax.max(m);
            }
        }
        let mut registry = Vec::new();
        let mut ids = HashMap::new();
        let plans = shapes
            .iter()
            .map(|s| compile_plan(s, prior, n, &mut registry, &mut ids))
            .collect::<Result<Vec<_>>>()?;
        Ok(GraphBasisEvaluator {
            n,
            hmax,
            dim: shapes.len(),
            patterns: registry,
            plans,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn scratch(&self) -> EvalScratch {
        EvalScratch {
            h: vec![vec![0.0; self.n * self.n]; self.hmax],
            rowsum: vec![vec![0.0; self.n]; self.hmax],
            pvals: vec![0.0; self.patterns.len()],
        }
    }

    /// Evaluate every compiled shape on one symmetric matrix, writing into
    /// `out` (length = dim, same order as the shape list).
    pub fn eval_all(
        &self,
        y: &DMatrix<f64>,
        scratch: &mut EvalScratch,
        out: &mut [f64],
    ) -> Result<()> {
        let n = self.n;
        if y.nrows() != n || y.ncols() != n {
            return Err(Error::invalid(format!(
                "matrix is {}x{}, evaluator was compiled for n = {n}",
                y.nrows(),
                y.ncols()
            )));
        }
        if out.len() != self.dim {
            return Err(Error::invalid(format!(
                "output slice has length {}, expected {}",
                out.len(),
                self.dim
            )));
        }
        for m in 1..=self.hmax {
            let hm = &mut scratch.h[m - 1];
            for i in 0..n {
                for j in 0..n {
                    hm[i * n + j] = hermite(m, y[(i, j)]);
                }
            }
            let rs = &mut scratch.rowsum[m - 1];
            for j in 0..n {
                let mut acc = 0.0;
                for i in 1..n {
                    acc += hm[i * n + j];
                }
                rs[j] = acc;
            }
        }
        for (k, pat) in self.patterns.iter().enumerate() {
            scratch.pvals[k] = pattern_value(pat, n, &scratch.h, &scratch.rowsum);
        }
        for (g, plan) in self.plans.iter().enumerate() {
            let mut acc = 0.0;
            for t in &plan.terms {
                let mut prod = t.coeff;
                for &pid in &t.pattern_ids {
                    prod *= scratch.pvals[pid as usize];
                }
                acc += prod;
            }
            out[g] = plan.inv_sqrt_emb * acc;
        }
        Ok(())
    }
}

/// Monte-Carlo estimate of the correlation vector and Gram matrix of the
/// centered graph basis, entrywise standard errors included.
#[derive(Debug, Clone)]
pub struct GramEstimate {
    pub n: usize,
    pub d: usize,
    pub samples: u64,
    pub psi: PsiSpec,
    pub graphs: Vec<GraphShape>,
    /// `c[A] ~ E[H_A(Y) psi(theta_1)]`.
    pub c: DVector<f64>,
    pub c_se: DVector<f64>,
    /// `m[A][B] ~ E[H_A(Y) H_B(Y)]`, exactly symmetric by construction.
    pub m: DMatrix<f64>,
    pub m_se: DMatrix<f64>,
    /// Plain basis means `~ E[H_A(Y)]`; zero in expectation off the empty
    /// shape, kept as a centering diagnostic.
    pub h_mean: DVector<f64>,
    pub h_se: DVector<f64>,
}

impl GramEstimate {
    pub fn dim(&self) -> usize {
        self.graphs.len()
    }

    pub fn tree_indices(&self) -> Vec<usize> {
        (0..self.graphs.len())
            .filter(|&i| self.graphs[i].is_tree())
            .collect()
    }

    pub fn index_of(&self, code: &str) -> Option<usize> {
        self.graphs.iter().position(|g| g.code == code)
    }
}

struct BlockSums {
    count: u64,
    h: Vec<f64>,
    h2: Vec<f64>,
    c: Vec<f64>,
    c2: Vec<f64>,
    m: Vec<f64>,
    m2: Vec<f64>,
}

fn tri(a: usize, b: usize, dim: usize) -> usize {
    a * dim - a * (a - 1) / 2 + (b - a)
}

impl BlockSums {
    fn zeros(dim: usize) -> Self {
        let t = dim * (dim + 1) / 2;
        BlockSums {
            count: 0,
            h: vec![0.0; dim],
            h2: vec![0.0; dim],
            c: vec![0.0; dim],
            c2: vec![0.0; dim],
            m: vec![0.0; t],
            m2: vec![0.0; t],
        }
    }

    fn absorb(&mut self, vals: &[f64], psival: f64) {
        let dim = self.h.len();
        for a in 0..dim {
            let va = vals[a];
            self.h[a] += va;
            self.h2[a] += va * va;
            let cv = va * psival;
            self.c[a] += cv;
            self.c2[a] += cv * cv;
            for b in a..dim {
                let pv = va * vals[b];
                let t = tri(a, b, dim);
                self.m[t] += pv;
                self.m2[t] += pv * pv;
            }
        }
        self.count += 1;
    }

    fn merge(&mut self, other: &BlockSums) {
        self.count += other.count;
        for (x, y) in self.h.iter_mut().zip(&other.h) {
            *x += y;
        }
        for (x, y) in self.h2.iter_mut().zip(&other.h2) {
            *x += y;
        }
        for (x, y) in self.c.iter_mut().zip(&other.c) {
            *x += y;
        }
        for (x, y) in self.c2.iter_mut().zip(&other.c2) {
            *x += y;
        }
        for (x, y) in self.m.iter_mut().zip(&other.m) {
            *x += y;
        }
        for (x, y) in self.m2.iter_mut().zip(&other.m2) {
            *x += y;
        }
    }
}

fn mean_se(sum: f64, sumsq: f64, count: u64) -> (f64, f64) {
    let nf = count as f64;
    let mean = sum / nf;
    let var = ((sumsq - nf * mean * mean) / (nf - 1.0)).max(0.0);
    (mean, (var / nf).sqrt())
}

/// Estimate `c` and `M` for the full basis of total degree at most `d`.
///
/// Sample `k` draws the observation with model seed `seed + k`, so the run
/// is deterministic for fixed arguments and independent runs should keep
/// their base seeds at least `samples` apart. Work is split into
/// [`GRAM_BLOCK_SAMPLES`]-sized blocks whose partial sums are merged in
/// block order, making the result independent of thread scheduling. The
/// unit-variance diagonal convention is used throughout; see
/// [`require_unit_diag`].
pub fn estimate_c_m(
    prior: &DiscretePrior,
    psi: PsiSpec,
    d: usize,
    n: usize,
    samples: u64,
    seed: u64,
) -> Result<GramEstimate> {
    if d > MAX_GRAM_EDGES {
        return Err(Error::guard(format!(
            "Gram estimation is capped at total edge multiplicity {MAX_GRAM_EDGES} (requested \
             {d}); enumeration alone goes further, but the quadratic-cost evaluator does not"
        )));
    }
    if samples < 2 {
        return Err(Error::invalid("need at least 2 samples"));
    }
    psi.validate(prior)?;
    let graphs = enumerate_rooted_multigraphs(d)?;
    let evaluator = GraphBasisEvaluator::new(&graphs, prior, n)?;
    let dim = graphs.len();
    let nblocks = samples.div_ceil(GRAM_BLOCK_SAMPLES);
    let partials: Result<Vec<BlockSums>> = (0..nblocks)
        .into_par_iter()
        .map(|b| {
            let lo = b * GRAM_BLOCK_SAMPLES;
            let hi = (lo + GRAM_BLOCK_SAMPLES).min(samples);
            let mut scratch = evaluator.scratch();
            let mut vals = vec![0.0; dim];
            let mut sums = BlockSums::zeros(dim);
            for k in lo..hi {
                let obs = Observation::sample(
                    prior,
                    n,
                    seed.wrapping_add(k),
                    DiagonalConvention::UnitVar1,
                )?;
                evaluator.eval_all(&obs.y, &mut scratch, &mut vals)?;
                sums.absorb(&vals, psi.eval(prior, obs.theta[0]));
            }
            Ok(sums)
        })
        .collect();
    let mut total = BlockSums::zeros(dim);
    for p in &partials? {
        total.merge(p);
    }
    let mut c = DVector::zeros(dim);
    let mut c_se = DVector::zeros(dim);
    let mut h_mean = DVector::zeros(dim);
    let mut h_se = DVector::zeros(dim);
    for a in 0..dim {
        let (mc, sc) = mean_se(total.c[a], total.c2[a], total.count);
        c[a] = mc;
        c_se[a] = sc;
        let (mh, sh) = mean_se(total.h[a], total.h2[a], total.count);
        h_mean[a] = mh;
        h_se[a] = sh;
    }
    let mut m = DMatrix::zeros(dim, dim);
    let mut m_se = DMatrix::zeros(dim, dim);
    for a in 0..dim {
        for b in a..dim {
            let t = tri(a, b, dim);
            let (mm, sm) = mean_se(total.m[t], total.m2[t], total.count);
            m[(a, b)] = mm;
            m[(b, a)] = mm;
            m_se[(a, b)] = sm;
            m_se[(b, a)] = sm;
        }
    }
    Ok(GramEstimate {
        n,
        d,
        samples,
        psi,
        graphs,
        c,
        c_se,
        m,
        m_se,
        h_mean,
        h_se,
    })
}

/// Result of the optimal-coefficient solve.
#[derive(Debug, Clone)]
pub struct OptimalMse {
    /// `E[psi^2] - <c, M^{-1} c>` over the selected shapes.
    pub mse: f64,
    /// First-order propagated uncertainty from the entrywise standard
    /// errors of `c` and `M` (conservative L1 accumulation).
    pub se: f64,
    /// Optimal coefficients `M^{-1} c`, index-aligned with `indices`.
    pub qhat: DVector<f64>,
    /// Positions into the estimate's shape list that were used.
    pub indices: Vec<usize>,
    /// Smallest eigenvalue of the (symmetrized) Gram submatrix.
    pub min_eigenvalue: f64,
}

/// Solve for the best linear combination of basis elements and the
/// resulting mean-squared error floor. With `trees_only` the solve is
/// restricted to the tree-shaped block of the basis.
pub fn lowdeg_optimal_mse(est: &GramEstimate, e_psi2: f64, trees_only: bool) -> Result<OptimalMse> {
    let indices: Vec<usize> = if trees_only {
        est.tree_indices()
    } else {
        (0..est.dim()).collect()
    };
    let k = indices.len();
    if k == 0 {
        return Err(Error::invalid("no shapes selected"));
    }
    let mut msub = DMatrix::zeros(k, k);
    for a in 0..k {
        for b in 0..k {
            msub[(a, b)] = 0.5 * (est.m[(indices[a], indices[b])] + est.m[(indices[b], indices[a])]);
        }
    }
    let csub = DVector::from_fn(k, |a, _| est.c[indices[a]]);
    let eig = msub.symmetric_eigen();
    let min_eigenvalue = eig.eigenvalues.min();
    if min_eigenvalue <= MIN_GRAM_EIGENVALUE {
        return Err(Error::NearSingularGram { min_eigenvalue });
    }
    let utc = eig.eigenvectors.tr_mul(&csub);
    let scaled = DVector::from_fn(k, |i, _| utc[i] / eig.eigenvalues[i]);
    let qhat = &eig.eigenvectors * scaled;
    let mse = e_psi2 - csub.dot(&qhat);
    let mut se = 0.0;
    for a in 0..k {
        se += 2.0 * qhat[a].abs() * est.c_se[indices[a]];
        for b in 0..k {
            se += qhat[a].abs() * qhat[b].abs() * est.m_se[(indices[a], indices[b])];
        }
    }
    Ok(OptimalMse {
        mse,
        se,
        qhat,
        indices,
        min_eigenvalue,
    })
}

/// Per-n statistics in [`block_structure_report`].
#[derive(Debug, Clone)]
pub struct BlockStat {
    pub n: usize,
    pub min_eigenvalue: f64,
    pub min_eig_ok: bool,
    /// Largest `|c_A|` over non-tree shapes: (code, |value|, se).
    pub max_nontree_c: Option<(String, f64, f64)>,
    /// Largest `|M_AB|` over (tree, non-tree) pairs: (label, |value|, se).
    pub max_cross_m: Option<(String, f64, f64)>,
}

/// One decaying-entry check between the smallest and largest n.
#[derive(Debug, Clone)]
pub struct DecayCheck {
    pub label: String,
    pub value_small: f64,
    pub se_small: f64,
    pub value_large: f64,
    pub se_large: f64,
    /// `|value| > 5 se` at the smallest n: the entry is worth tracking.
    pub significant: bool,
    /// `|value_small| - |value_large| > 2 sqrt(se_small^2 + se_large^2)`.
    pub decayed: bool,
}

/// Numerical check of the asymptotic block structure: the Gram matrix stays
/// uniformly positive definite, while correlations of non-tree shapes and
/// (tree, non-tree) Gram entries shrink as n grows.
#[derive(Debug, Clone)]
pub struct BlockStructureReport {
    pub stats: Vec<BlockStat>,
    pub decays: Vec<DecayCheck>,
    pub all_min_eig_ok: bool,
    pub all_significant_decayed: bool,
}

/// Estimate the basis at each n in `n_list` (strictly increasing) and
/// report eigenvalue floors plus decay of the off-tree statistics between
/// the smallest and largest n. Assertions are reported, not thrown.
pub fn block_structure_report(
    prior: &DiscretePrior,
    psi: PsiSpec,
    d: usize,
    n_list: &[usize],
    samples: u64,
    seed: u64,
) -> Result<BlockStructureReport> {
    if n_list.is_empty() {
        return Err(Error::invalid("n_list must be non-empty"));
    }
    if n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("n_list must be strictly increasing"));
    }
    let ests: Vec<GramEstimate> = n_list
        .iter()
        .map(|&n| estimate_c_m(prior, psi, d, n, samples, seed))
        .collect::<Result<_>>()?;
    let graphs = &ests[0].graphs;
    let dim = graphs.len();
    let tree_flag: Vec<bool> = graphs.iter().map(|g| g.is_tree()).collect();
    let mut stats = Vec::with_capacity(ests.len());
    for est in &ests {
        let min_eigenvalue = est.m.clone().symmetric_eigen().eigenvalues.min();
        let mut max_nontree_c: Option<(String, f64, f64)> = None;
        for a in 0..dim {
            if !tree_flag[a] {
                let v = est.c[a].abs();
                if max_nontree_c.as_ref().map_or(true, |(_, b, _)| v > *b) {
                    max_nontree_c = Some((format!("c[{}]", graphs[a].code), v, est.c_se[a]));
                }
            }
        }
        let mut max_cross_m: Option<(String, f64, f64)> = None;
        for a in 0..dim {
            for b in a..dim {
                if tree_flag[a] != tree_flag[b] {
                    let v = est.m[(a, b)].abs();
                    if max_cross_m.as_ref().map_or(true, |(_, c, _)| v > *c) {
                        max_cross_m = Some((
                            format!("M[{}][{}]", graphs[a].code, graphs[b].code),
                            v,
                            est.m_se[(a, b)],
                        ));
                    }
                }
            }
        }
        stats.push(BlockStat {
            n: est.n,
            min_eigenvalue,
            min_eig_ok: min_eigenvalue >= GRAM_EIG_FLOOR,
            max_nontree_c,
            max_cross_m,
        });
    }
    let mut decays = Vec::new();
    if ests.len() >= 2 {
        let s = &ests[0];
        let l = &ests[ests.len() - 1];
        let mut push = |label: String, vs: f64, ss: f64, vl: f64, sl: f64| {
            decays.push(DecayCheck {
                label,
                value_small: vs,
                se_small: ss,
                value_large: vl,
                se_large: sl,
                significant: vs.abs() > 5.0 * ss,
                decayed: vs.abs() - vl.abs() > 2.0 * (ss * ss + sl * sl).sqrt(),
            });
        };
        for a in 0..dim {
            if !tree_flag[a] {
                push(
                    format!("c[{}]", graphs[a].code),
                    s.c[a],
                    s.c_se[a],
                    l.c[a],
                    l.c_se[a],
                );
            }
        }
        for a in 0..dim {
            for b in a..dim {
                if tree_flag[a] != tree_flag[b] {
                    push(
                        format!("M[{}][{}]", graphs[a].code, graphs[b].code),
                        s.m[(a, b)],
                        s.m_se[(a, b)],
                        l.m[(a, b)],
                        l.m_se[(a, b)],
                    );
                }
            }
        }
    }
    let all_min_eig_ok = stats.iter().all(|s| s.min_eig_ok);
    let all_significant_decayed = decays
        .iter()
        .filter(|d| d.significant)
        .all(|d| d.decayed);
    Ok(BlockStructureReport {
        stats,
        decays,
        all_min_eig_ok,
        all_significant_decayed,
    })
}

/// Regression summary for one tree shape in [`tree_basis_consistency`].
#[derive(Debug, Clone)]
pub struct TreeBasisRow {
    pub code: String,
    /// Mean-square of the part of `H_A` not captured by the tree
    /// polynomials (mean over regression blocks).
    pub residual_ms: f64,
    pub residual_se: f64,
    /// Regression coefficient of `H_A` on its own tree polynomial.
    pub self_coeff: f64,
    pub self_coeff_se: f64,
}

#[derive(Debug, Clone)]
pub struct TreeBasisReport {
    pub n: usize,
    /// Samples actually used (`blocks` equal shares of the request).
    pub samples: u64,
    pub blocks: usize,
    pub rows: Vec<TreeBasisRow>,
}

fn block_stats(vals: &[f64]) -> (f64, f64) {
    let b = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / b;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (b - 1.0);
    (mean, (var / b).sqrt())
}

/// Regress sampled values of each tree-shaped basis element onto the tree
/// polynomials evaluated on the same observations.
///
/// The centered basis element of a tree shape is asymptotically a linear
/// combination of tree polynomials with unit coefficient on its own tree;
/// the residual mean-square measures the finite-n gap. Shapes whose
/// labeling constraints coincide with injectivity (the edgeless shape, the
/// single edge, the two-edge path) are exact linear combinations at every
/// n, so their residuals sit at machine zero; the two-child star is the
/// first shape with a genuine, shrinking residual.
pub fn tree_basis_consistency(
    prior: &DiscretePrior,
    d: usize,
    n: usize,
    samples: u64,
    seed: u64,
) -> Result<TreeBasisReport> {
    if d > MAX_GRAM_EDGES {
        return Err(Error::guard(format!(
            "tree-basis regression is capped at total edge multiplicity {MAX_GRAM_EDGES} \
             (requested {d})"
        )));
    }
    let trees = enumerate_rooted_trees(d)?;
    let q = trees.len();
    let min_samples = (TREE_BASIS_BLOCKS * 25 * q) as u64;
    if samples < min_samples {
        return Err(Error::invalid(format!(
            "need at least {min_samples} samples for {TREE_BASIS_BLOCKS} regression blocks"
        )));
    }
    let all = enumerate_rooted_multigraphs(d)?;
    let mut shapes: Vec<GraphShape> = Vec::with_capacity(q);
    for t in &trees {
        let hit = all.iter().find(|s| {
            s.is_tree()
                && tree_shape_to_rooted(s)
                    .map(|r| r.canonical_code() == t.canonical_code())
                    .unwrap_or(false)
        });
        shapes.push(
            hit.expect("every rooted tree appears among the multigraph shapes")
                .clone(),
        );
    }
    let evaluator = GraphBasisEvaluator::new(&shapes, prior, n)?;
    let per = samples / TREE_BASIS_BLOCKS as u64;
    struct BlockFit {
        residual: Vec<f64>,
        coeff: Vec<f64>,
    }
    let fits: Result<Vec<BlockFit>> = (0..TREE_BASIS_BLOCKS as u64)
        .into_par_iter()
        .map(|b| {
            let mut scratch = evaluator.scratch();
            let mut hvals = vec![0.0; q];
            let mut fvals = vec![0.0; q];
            let mut g = DMatrix::<f64>::zeros(q, q);
            let mut x = DMatrix::<f64>::zeros(q, q);
            let mut h2 = vec![0.0; q];
            for k in (b * per)..((b + 1) * per) {
                let obs = Observation::sample(
                    prior,
                    n,
                    seed.wrapping_add(k),
                    DiagonalConvention::UnitVar1,
                )?;
                for (ti, t) in trees.iter().enumerate() {
                    fvals[ti] = eval_tree_poly(t, &obs.y)?;
                }
                evaluator.eval_all(&obs.y, &mut scratch, &mut hvals)?;
                for a in 0..q {
                    h2[a] += hvals[a] * hvals[a];
                    for fb in 0..q {
                        x[(fb, a)] += fvals[fb] * hvals[a];
                        g[(fb, a)] += fvals[fb] * fvals[a];
                    }
                }
            }
            let cnt = per as f64;
            let ghat = g / cnt;
            let lu = ghat.lu();
            let mut residual = vec![0.0; q];
            let mut coeff = vec![0.0; q];
            for a in 0..q {
                let xa = DVector::from_fn(q, |i, _| x[(i, a)] / cnt);
                let beta = lu.solve(&xa).ok_or_else(|| {
                    Error::degenerate("tree-polynomial Gram matrix is singular in a block")
                })?;
                residual[a] = h2[a] / cnt - xa.dot(&beta);
                coeff[a] = beta[a];
            }
            Ok(BlockFit { residual, coeff })
        })
        .collect();
    let fits = fits?;
    let rows = (0..q)
        .map(|a| {
            let res: Vec<f64> = fits.iter().map(|f| f.residual[a]).collect();
            let cfs: Vec<f64> = fits.iter().map(|f| f.coeff[a]).collect();
            let (residual_ms, residual_se) = block_stats(&res);
            let (self_coeff, self_coeff_se) = block_stats(&cfs);
            TreeBasisRow {
                code: shapes[a].code.clone(),
                residual_ms,
                residual_se,
                self_coeff,
                self_coeff_se,
            }
        })
        .collect();
    Ok(TreeBasisReport {
        n,
        samples: per * TREE_BASIS_BLOCKS as u64,
        blocks: TREE_BASIS_BLOCKS,
        rows,
    })
}

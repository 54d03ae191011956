//! Rooted trees up to root-preserving isomorphism, non-reversing labelings,
//! and naive evaluation of tree-structured polynomials.
//!
//! This module is deliberately slow and literal: labelings are enumerated by
//! depth-first search and filtered by the pairwise non-reversing predicate,
//! with hard operation-count guards. It is the ground truth that the
//! message-passing evaluator in [`crate::mp`] is checked against.
//!
//! A labeling of a tree assigns an index in `0..n` to every vertex, with the
//! root pinned to a designated index. It is *non-reversing* when any two
//! distinct vertices sharing a label are at tree distance greater than two,
//! or at distance exactly two with equal depth (i.e. siblings). In
//! particular adjacent vertices never share a label, so tree polynomials
//! never read the diagonal of the data matrix.

use crate::error::{Error, Result};
use nalgebra::DMatrix;

/// Maximum edge count for tree enumeration.
pub const MAX_ENUM_EDGES: usize = 6;
/// Maximum edge count for any constructed tree (`tree_plus` of an enumerated
/// tree still fits).
pub const MAX_TREE_EDGES: usize = 8;
/// Operation-count guard for labeling enumeration: require `n^|V| <= 1e8`.
pub const MAX_LABELING_OPS: f64 = 1e8;

/// Assignment of matrix indices to tree vertices, in vertex order.
pub type Labeling = Vec<usize>;

/// A rooted tree in canonical form. Vertex 0 is the root; vertices are
/// numbered in preorder with children visited in sorted-code order, so two
/// isomorphic rooted trees are represented identically.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RootedTree {
    /// `parent[v]` for every vertex; `None` exactly at the root.
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    depth: Vec<usize>,
    code: String,
}

impl RootedTree {
    /// Single vertex, no edges.
    pub fn single_vertex() -> Self {
        RootedTree {
            parent: vec![None],
            children: vec![vec![]],
            depth: vec![0],
            code: String::new(),
        }
    }

    /// Build from a parent array with exactly one root (`None` entry),
    /// canonicalizing the vertex order.
    pub fn from_parents(parents: &[Option<usize>]) -> Result<Self> {
        let m = parents.len();
        if m == 0 {
            return Err(Error::invalid("tree must have at least one vertex"));
        }
        if m - 1 > MAX_TREE_EDGES {
            return Err(Error::guard(format!(
                "tree with {} edges exceeds the {MAX_TREE_EDGES}-edge guard",
                m - 1
            )));
        }
        let mut root = None;
        for (v, p) in parents.iter().enumerate() {
            match p {
                None => {
                    if root.replace(v).is_some() {
                        return Err(Error::invalid("parent array has two roots"));
                    }
                }
                Some(p) if *p >= m => {
                    return Err(Error::invalid("parent index out of range"));
                }
                _ => {}
            }
        }
        let root = root.ok_or_else(|| Error::invalid("parent array has no root"))?;
        // Depth computation doubles as a cycle check.
        let mut depth = vec![usize::MAX; m];
        depth[root] = 0;
        for v in 0..m {
            let mut hops = 0;
            let mut u = v;
            while depth[u] == usize::MAX {
                u = parents[u].unwrap();
                hops += 1;
                if hops > m {
                    return Err(Error::invalid("parent array contains a cycle"));
                }
            }
            let base = depth[u];
            let mut u = v;
            let mut d = hops;
            while depth[u] == usize::MAX {
                depth[u] = base + d;
                d -= 1;
                u = parents[u].unwrap();
            }
        }
        let mut children: Vec<Vec<usize>> = vec![vec![]; m];
        for (v, p) in parents.iter().enumerate() {
            if let Some(p) = p {
                children[*p].push(v);
            }
        }
        // Subtree codes, children sorted by code, then preorder renumbering.
        fn subtree_code(v: usize, children: &[Vec<usize>]) -> String {
            let mut parts: Vec<String> = children[v]
                .iter()
                .map(|&c| subtree_code(c, children))
                .collect();
            parts.sort();
            format!("({})", parts.concat())
        }
        fn renumber(
            v: usize,
            children: &[Vec<usize>],
            order: &mut Vec<usize>,
        ) {
            order.push(v);
            let mut kids: Vec<(String, usize)> = children[v]
                .iter()
                .map(|&c| (subtree_code(c, children), c))
                .collect();
            kids.sort();
            for (_, c) in kids {
                renumber(c, children, order);
            }
        }
        let mut order = Vec::with_capacity(m);
        renumber(root, &children, &mut order);
        let mut new_index = vec![0usize; m];
        for (idx, &v) in order.iter().enumerate() {
            new_index[v] = idx;
        }
        let mut parent = vec![None; m];
        let mut new_children: Vec<Vec<usize>> = vec![vec![]; m];
        let mut new_depth = vec![0usize; m];
        for &v in &order {
            let nv = new_index[v];
            new_depth[nv] = depth[v];
            if let Some(p) = parents[v] {
                parent[nv] = Some(new_index[p]);
                new_children[new_index[p]].push(nv);
            }
        }
        let root_code = subtree_code(root, &children);
        // Drop the outermost parentheses: the single vertex gets "".
        let code = root_code[1..root_code.len() - 1].to_string();
        Ok(RootedTree {
            parent,
            children: new_children,
            depth: new_depth,
            code,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.parent.len()
    }

    pub fn edge_count(&self) -> usize {
        self.parent.len() - 1
    }

    /// Maximum distance from the root.
    pub fn radius(&self) -> usize {
        self.depth.iter().copied().max().unwrap()
    }

    pub fn canonical_code(&self) -> &str {
        &self.code
    }

    pub fn parent_of(&self, v: usize) -> Option<usize> {
        self.parent[v]
    }

    pub fn children_of(&self, v: usize) -> &[usize] {
        &self.children[v]
    }

    pub fn depth_of(&self, v: usize) -> usize {
        self.depth[v]
    }

    pub fn root_degree(&self) -> usize {
        self.children[0].len()
    }

    /// All-pairs graph distances (vertices are few; BFS from every vertex).
    fn distance_matrix(&self) -> Vec<Vec<usize>> {
        let m = self.vertex_count();
        let mut adj: Vec<Vec<usize>> = vec![vec![]; m];
        for v in 1..m {
            let p = self.parent[v].unwrap();
            adj[v].push(p);
            adj[p].push(v);
        }
        let mut dist = vec![vec![usize::MAX; m]; m];
        for s in 0..m {
            dist[s][s] = 0;
            let mut queue = std::collections::VecDeque::from([s]);
            while let Some(u) = queue.pop_front() {
                for &w in &adj[u] {
                    if dist[s][w] == usize::MAX {
                        dist[s][w] = dist[s][u] + 1;
                        queue.push_back(w);
                    }
                }
            }
        }
        dist
    }
}

/// All rooted trees with at most `d` edges, up to root-preserving
/// isomorphism, sorted by `(edge_count, canonical_code)`. Includes the
/// edgeless tree.
pub fn enumerate_rooted_trees(d: usize) -> Result<Vec<RootedTree>> {
    if d > MAX_ENUM_EDGES {
        return Err(Error::guard(format!(
            "tree enumeration requested for {d} edges, guard is {MAX_ENUM_EDGES}"
        )));
    }
    // Leaf augmentation: every tree with k+1 edges arises from a tree with k
    // edges by deleting some leaf, so attaching a new leaf to every vertex of
    // every k-edge tree and deduplicating by canonical code is complete.
    let mut all: Vec<RootedTree> = vec![RootedTree::single_vertex()];
    let mut frontier = vec![RootedTree::single_vertex()];
    for _ in 0..d {
        let mut next: Vec<RootedTree> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for t in &frontier {
            for attach in 0..t.vertex_count() {
                let mut parents: Vec<Option<usize>> =
                    (0..t.vertex_count()).map(|v| t.parent[v]).collect();
                parents.push(Some(attach));
                let grown = RootedTree::from_parents(&parents)?;
                if seen.insert(grown.code.clone()) {
                    next.push(grown);
                }
            }
        }
        all.extend(next.iter().cloned());
        frontier = next;
    }
    all.sort_by(|a, b| {
        (a.edge_count(), &a.code).cmp(&(b.edge_count(), &b.code))
    });
    Ok(all)
}

/// Attach an edge to the root and move the root to the new endpoint.
pub fn tree_plus(t: &RootedTree) -> Result<RootedTree> {
    let m = t.vertex_count();
    let mut parents: Vec<Option<usize>> = Vec::with_capacity(m + 1);
    parents.push(None);
    for v in 0..m {
        parents.push(Some(match t.parent[v] {
            Some(p) => p + 1,
            None => 0,
        }));
    }
    RootedTree::from_parents(&parents)
}

/// The multiset of subtrees hanging off the root, each rooted at the root's
/// child; empty for the single-vertex tree. Sorted by canonical code.
pub fn children_decomposition(t: &RootedTree) -> Vec<RootedTree> {
    let mut out: Vec<RootedTree> = t
        .children[0]
        .iter()
        .map(|&c| {
            // Collect the subtree of c, renumber locally, rebuild.
            let mut verts = vec![c];
            let mut head = 0;
            while head < verts.len() {
                let v = verts[head];
                head += 1;
                verts.extend_from_slice(&t.children[v]);
            }
            let mut local = std::collections::HashMap::new();
            for (idx, &v) in verts.iter().enumerate() {
                local.insert(v, idx);
            }
            let parents: Vec<Option<usize>> = verts
                .iter()
                .map(|&v| {
                    if v == c {
                        None
                    } else {
                        Some(local[&t.parent[v].unwrap()])
                    }
                })
                .collect();
            RootedTree::from_parents(&parents).unwrap()
        })
        .collect();
    out.sort_by(|a, b| a.code.cmp(&b.code));
    out
}

fn pow_u128(base: u128, exp: usize) -> u128 {
    let mut acc: u128 = 1;
    for _ in 0..exp {
        acc = acc.checked_mul(base).expect("count overflow");
    }
    acc
}

/// Number of non-reversing labelings with the root pinned to one index.
///
/// Counting choices vertex by vertex: each child of the root must avoid only
/// the root's label, and every deeper vertex must avoid its parent's and
/// grandparent's (distinct) labels, giving
/// `(n-1)^{deg(root)} (n-2)^{|E| - deg(root)}` exactly. For root degree 1
/// this is the familiar `(n-1)(n-2)^{|E|-1}`; the edgeless tree has exactly
/// one labeling.
pub fn nr_count(t: &RootedTree, n: usize) -> u128 {
    assert!(n >= 3, "nr_count requires n >= 3");
    if t.edge_count() == 0 {
        return 1;
    }
    let r = t.root_degree();
    pow_u128(n as u128 - 1, r) * pow_u128(n as u128 - 2, t.edge_count() - r)
}

/// Number of non-reversing labelings rooted at `i` with no root child
/// labeled `j`: `(n-2)^{|E|}` exactly.
pub fn nr_directed_count(t: &RootedTree, n: usize) -> u128 {
    assert!(n >= 3, "nr_directed_count requires n >= 3");
    pow_u128(n as u128 - 2, t.edge_count())
}

/// Which labelings to enumerate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelMode {
    /// Root pinned to `root_label`, no other index constraint.
    Rooted { root_label: usize },
    /// Root pinned to `i`, root children forbidden to take `j`.
    Directed { i: usize, j: usize },
}

fn check_labeling_guard(t: &RootedTree, n: usize) -> Result<()> {
    if n < 3 {
        return Err(Error::invalid("labeling enumeration requires n >= 3"));
    }
    let ops = (n as f64).powi(t.vertex_count() as i32);
    if ops > MAX_LABELING_OPS {
        return Err(Error::guard(format!(
            "labeling enumeration needs ~n^|V| = {ops:.3e} operations, guard is {MAX_LABELING_OPS:.0e}"
        )));
    }
    Ok(())
}

/// Depth-first enumeration of non-reversing labelings. Labels are assigned
/// in vertex (preorder) order; each new label is checked against all earlier
/// vertices with the literal predicate (distance > 2, or distance = 2 with
/// equal depth), so completed assignments have had every pair examined.
fn for_each_nr_labeling(
    t: &RootedTree,
    n: usize,
    mode: LabelMode,
    f: &mut impl FnMut(&[usize]),
) -> Result<()> {
    check_labeling_guard(t, n)?;
    let m = t.vertex_count();
    let dist = t.distance_matrix();
    let (root_label, forbidden_child) = match mode {
        LabelMode::Rooted { root_label } => (root_label, None),
        LabelMode::Directed { i, j } => {
            if i == j {
                return Err(Error::invalid("directed labelings need i != j"));
            }
            (i, Some(j))
        }
    };
    if root_label >= n || forbidden_child.is_some_and(|j| j >= n) {
        return Err(Error::invalid("labels must lie in 0..n"));
    }
    let mut label = vec![0usize; m];
    label[0] = root_label;
    fn admissible(
        v: usize,
        cand: usize,
        label: &[usize],
        dist: &[Vec<usize>],
    ) -> bool {
        for u in 0..v {
            if label[u] == cand {
                let d = dist[u][v];
                let ok = d > 2 || (d == 2 && dist[u][0] == dist[v][0]);
                if !ok {
                    return false;
                }
            }
        }
        true
    }
    fn descend(
        v: usize,
        t: &RootedTree,
        n: usize,
        dist: &[Vec<usize>],
        forbidden_child: Option<usize>,
        label: &mut Vec<usize>,
        f: &mut impl FnMut(&[usize]),
    ) {
        if v == label.len() {
            f(label);
            return;
        }
        for cand in 0..n {
            if t.depth_of(v) == 1 && forbidden_child == Some(cand) {
                continue;
            }
            if admissible(v, cand, label, dist) {
                label[v] = cand;
                descend(v + 1, t, n, dist, forbidden_child, label, f);
            }
        }
    }
    descend(1, t, n, &dist, forbidden_child, &mut label, f);
    Ok(())
}

/// Materialized list of non-reversing labelings in deterministic order.
pub fn enumerate_nr_labelings(
    t: &RootedTree,
    n: usize,
    mode: LabelMode,
) -> Result<Vec<Labeling>> {
    let mut out = Vec::new();
    for_each_nr_labeling(t, n, mode, &mut |l| out.push(l.to_vec()))?;
    Ok(out)
}

fn product_over_edges(t: &RootedTree, y: &DMatrix<f64>, label: &[usize]) -> f64 {
    let mut prod = 1.0;
    for v in 1..t.vertex_count() {
        let p = t.parent[v].unwrap();
        prod *= y[(label[p], label[v])];
    }
    prod
}

/// The tree-structured polynomial: sum over labelings rooted at index 0 of
/// the product of matrix entries along the edges, scaled by
/// `1/sqrt(|nr(T)|)`. The edgeless tree evaluates to 1.
pub fn eval_tree_poly(t: &RootedTree, y: &DMatrix<f64>) -> Result<f64> {
    let n = y.nrows();
    if y.ncols() != n {
        return Err(Error::invalid("matrix must be square"));
    }
    let mut acc = 0.0;
    for_each_nr_labeling(t, n, LabelMode::Rooted { root_label: 0 }, &mut |l| {
        acc += product_over_edges(t, y, l);
    })?;
    Ok(acc / (nr_count(t, n) as f64).sqrt())
}

/// The directed variant: root pinned at `i`, root children avoiding `j`,
/// scaled by `n^{-|E|/2}`.
pub fn eval_tree_poly_directed(
    t: &RootedTree,
    y: &DMatrix<f64>,
    i: usize,
    j: usize,
) -> Result<f64> {
    let n = y.nrows();
    if y.ncols() != n {
        return Err(Error::invalid("matrix must be square"));
    }
    let mut acc = 0.0;
    for_each_nr_labeling(t, n, LabelMode::Directed { i, j }, &mut |l| {
        acc += product_over_edges(t, y, l);
    })?;
    Ok(acc / (n as f64).powf(t.edge_count() as f64 / 2.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn by_code<'a>(trees: &'a [RootedTree], code: &str) -> &'a RootedTree {
        trees
            .iter()
            .find(|t| t.canonical_code() == code)
            .unwrap_or_else(|| panic!("no tree with code {code:?}"))
    }

    #[test]
    fn enumeration_counts() {
        assert_eq!(enumerate_rooted_trees(0).unwrap().len(), 1);
        let t3 = enumerate_rooted_trees(3).unwrap();
        assert_eq!(t3.len(), 8);
        let by_edges = |ts: &[RootedTree], e: usize| {
            ts.iter().filter(|t| t.edge_count() == e).count()
        };
        assert_eq!(
            (0..=3).map(|e| by_edges(&t3, e)).collect::<Vec<_>>(),
            vec![1, 1, 2, 4]
        );
        let t4 = enumerate_rooted_trees(4).unwrap();
        assert_eq!(t4.len(), 17);
        assert_eq!(by_edges(&t4, 4), 9);
        assert!(enumerate_rooted_trees(7).is_err());
        // Sorted by (edge_count, code), no duplicates.
        for w in t4.windows(2) {
            assert!(
                (w[0].edge_count(), w[0].canonical_code())
                    < (w[1].edge_count(), w[1].canonical_code())
            );
        }
    }

    #[test]
    fn enumeration_matches_parent_array_brute_force() {
        // Every rooted tree admits an increasing numbering, so generating all
        // parent arrays with parent[v] < v covers everything.
        let mut seen: Vec<std::collections::HashSet<String>> =
            vec![std::collections::HashSet::new(); 5];
        fn extend(
            parents: &mut Vec<Option<usize>>,
            max: usize,
            seen: &mut Vec<std::collections::HashSet<String>>,
        ) {
            let t = RootedTree::from_parents(parents).unwrap();
            seen[t.edge_count()].insert(t.canonical_code().to_string());
            if parents.len() > max {
                return;
            }
            for p in 0..parents.len() {
                parents.push(Some(p));
                extend(parents, max, seen);
                parents.pop();
            }
        }
        let mut parents: Vec<Option<usize>> = vec![None];
        extend(&mut parents, 4, &mut seen);
        assert_eq!(
            seen.iter().map(|s| s.len()).collect::<Vec<_>>(),
            vec![1, 1, 2, 4, 9]
        );
        let t4 = enumerate_rooted_trees(4).unwrap();
        let codes: std::collections::HashSet<String> = t4
            .iter()
            .map(|t| t.canonical_code().to_string())
            .collect();
        let brute: std::collections::HashSet<String> =
            seen.into_iter().flatten().collect();
        assert_eq!(codes, brute);
    }

    #[test]
    fn canonical_code_ignores_vertex_numbering() {
        let trees = enumerate_rooted_trees(4).unwrap();
        let mut rng = crate::rng::stream(11, crate::rng::domain::REPLICATE, 0);
        for t in &trees {
            let m = t.vertex_count();
            for _ in 0..20 {
                // Random relabeling of the vertices.
                let mut perm: Vec<usize> = (0..m).collect();
                for k in (1..m).rev() {
                    let r = rng.gen_range(0..=k);
                    perm.swap(k, r);
                }
                let mut parents = vec![None; m];
                for v in 0..m {
                    parents[perm[v]] = t.parent_of(v).map(|p| perm[p]);
                }
                let shuffled = RootedTree::from_parents(&parents).unwrap();
                assert_eq!(shuffled.canonical_code(), t.canonical_code());
            }
        }
    }

    #[test]
    fn tree_plus_basics() {
        let single = RootedTree::single_vertex();
        assert_eq!(single.canonical_code(), "");
        assert_eq!(single.radius(), 0);
        let edge = tree_plus(&single).unwrap();
        assert_eq!(edge.canonical_code(), "()");
        assert_eq!(edge.edge_count(), 1);
        assert_eq!(edge.root_degree(), 1);
        for t in &enumerate_rooted_trees(3).unwrap() {
            let plus = tree_plus(t).unwrap();
            assert_eq!(plus.radius(), t.radius() + 1);
            assert_eq!(plus.edge_count(), t.edge_count() + 1);
            assert_eq!(plus.root_degree(), 1);
        }
    }

    #[test]
    fn decomposition_and_reconstruction() {
        let trees = enumerate_rooted_trees(4).unwrap();
        let path2 = by_code(&trees, "(())");
        let d = children_decomposition(path2);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].canonical_code(), "()");
        let star3 = by_code(&trees, "()()()");
        let d = children_decomposition(star3);
        assert_eq!(d.len(), 3);
        assert!(d.iter().all(|s| s.canonical_code() == ""));
        // Reattaching the decomposition under a fresh root reproduces T.
        for t in &trees {
            let parts = children_decomposition(t);
            let mut parents: Vec<Option<usize>> = vec![None];
            for part in &parts {
                let offset = parents.len();
                for v in 0..part.vertex_count() {
                    parents.push(Some(match part.parent_of(v) {
                        Some(p) => offset + p,
                        None => 0,
                    }));
                }
            }
            let rebuilt = RootedTree::from_parents(&parents).unwrap();
            assert_eq!(rebuilt.canonical_code(), t.canonical_code());
        }
    }

    #[test]
    fn closed_form_counts() {
        let trees = enumerate_rooted_trees(3).unwrap();
        let edge = by_code(&trees, "()");
        assert_eq!(nr_count(edge, 5), 4);
        let path2 = by_code(&trees, "(())");
        assert_eq!(nr_count(path2, 5), 12);
        let path3 = by_code(&trees, "((()))");
        assert_eq!(nr_directed_count(path3, 5), 27);
        // Root of degree 2: the two root children may share a label, so the
        // count is (n-1)^2, not (n-1)(n-2).
        let star2 = by_code(&trees, "()()");
        assert_eq!(nr_count(star2, 5), 16);
        assert_eq!(nr_count(&RootedTree::single_vertex(), 5), 1);
    }

    #[test]
    fn counts_match_enumeration() {
        for t in &enumerate_rooted_trees(3).unwrap() {
            for n in 4..=8 {
                let rooted = enumerate_nr_labelings(
                    t,
                    n,
                    LabelMode::Rooted { root_label: 0 },
                )
                .unwrap();
                assert_eq!(
                    rooted.len() as u128,
                    nr_count(t, n),
                    "rooted count mismatch for {:?} at n={n}",
                    t.canonical_code()
                );
                let directed = enumerate_nr_labelings(
                    t,
                    n,
                    LabelMode::Directed { i: 0, j: 1 },
                )
                .unwrap();
                assert_eq!(
                    directed.len() as u128,
                    nr_directed_count(t, n),
                    "directed count mismatch for {:?} at n={n}",
                    t.canonical_code()
                );
            }
        }
    }

    #[test]
    fn labeling_predicate_consequences() {
        let trees = enumerate_rooted_trees(3).unwrap();
        for t in &trees {
            for l in enumerate_nr_labelings(t, 5, LabelMode::Rooted { root_label: 0 })
                .unwrap()
            {
                assert_eq!(l[0], 0);
                for v in 1..t.vertex_count() {
                    assert_ne!(l[v], l[t.parent_of(v).unwrap()]);
                }
            }
            for l in enumerate_nr_labelings(t, 5, LabelMode::Directed { i: 2, j: 3 })
                .unwrap()
            {
                assert_eq!(l[0], 2);
                for v in 1..t.vertex_count() {
                    if t.depth_of(v) == 1 {
                        assert_ne!(l[v], 3);
                    }
                }
            }
        }
    }

    #[test]
    fn labeling_guard_enforced() {
        let trees = enumerate_rooted_trees(4).unwrap();
        let path4 = by_code(&trees, "(((())))");
        // 5 vertices: 60^5 = 7.8e8 > 1e8.
        assert!(enumerate_nr_labelings(path4, 60, LabelMode::Rooted { root_label: 0 })
            .is_err());
    }

    #[test]
    fn eval_basics() {
        let single = RootedTree::single_vertex();
        let y = DMatrix::<f64>::from_element(3, 3, 0.7);
        assert_eq!(eval_tree_poly(&single, &y).unwrap(), 1.0);
        assert_eq!(eval_tree_poly_directed(&single, &y, 0, 1).unwrap(), 1.0);
        // Single edge at n=3, all off-diagonal entries c: two labelings, so
        // (c + c)/sqrt(2).
        let edge = tree_plus(&single).unwrap();
        let c = 0.7;
        let got = eval_tree_poly(&edge, &y).unwrap();
        assert!((got - 2.0 * c / 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn eval_homogeneity_and_diagonal_independence() {
        let trees = enumerate_rooted_trees(3).unwrap();
        let n = 6;
        let mut rng = crate::rng::stream(5, crate::rng::domain::REPLICATE, 1);
        let mut y = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v: f64 = rng.gen_range(-1.0..1.0);
                y[(i, j)] = v;
                y[(j, i)] = v;
            }
        }
        let lambda = 1.3;
        for t in &trees {
            let base = eval_tree_poly(t, &y).unwrap();
            let scaled = eval_tree_poly(t, &(lambda * &y)).unwrap();
            let want = lambda.powi(t.edge_count() as i32) * base;
            assert!(
                (scaled - want).abs() < 1e-12 * want.abs().max(1.0),
                "{}: {scaled} vs {want}",
                t.canonical_code()
            );
            let mut y2 = y.clone();
            for i in 0..n {
                y2[(i, i)] = 1e6 + i as f64;
            }
            assert_eq!(eval_tree_poly(t, &y2).unwrap(), base);
            assert_eq!(
                eval_tree_poly_directed(t, &y2, 1, 4).unwrap(),
                eval_tree_poly_directed(t, &y, 1, 4).unwrap()
            );
        }
    }
}

//! Undirected-graph kernel: edge sets, the five monotone graph properties,
//! and critical-edge-set computation with an exhaustive oracle.
//!
//! Node indices are 0-based in memory; the text serialization in `io` is
//! 1-based.

use std::collections::BTreeSet;

use crate::error::{Error, Result};

/// Canonicalized undirected edge set on `d` nodes (pairs stored as `j < k`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeSet {
    d: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl EdgeSet {
    pub fn empty(d: usize) -> Self {
        Self { d, edges: BTreeSet::new() }
    }

    pub fn from_edges<I: IntoIterator<Item = (usize, usize)>>(d: usize, iter: I) -> Result<Self> {
        let mut es = Self::empty(d);
        for (j, k) in iter {
            es.insert(j, k)?;
        }
        Ok(es)
    }

    pub fn insert(&mut self, j: usize, k: usize) -> Result<()> {
        if j == k {
            return Err(Error::Data(format!("self-loop at node {j}")));
        }
        if j >= self.d || k >= self.d {
            return Err(Error::Data(format!(
                "edge ({j},{k}) outside node range 0..{}",
                self.d
            )));
        }
        self.edges.insert((j.min(k), j.max(k)));
        Ok(())
    }

    pub fn contains(&self, j: usize, k: usize) -> bool {
        self.edges.contains(&(j.min(k), j.max(k)))
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn union(&self, other: &EdgeSet) -> EdgeSet {
        assert_eq!(self.d, other.d);
        let mut edges = self.edges.clone();
        edges.extend(other.edges.iter().copied());
        EdgeSet { d: self.d, edges }
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.d];
        for &(j, k) in &self.edges {
            deg[j] += 1;
            deg[k] += 1;
        }
        deg
    }

    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.d];
        for &(j, k) in &self.edges {
            adj[j].push(k);
            adj[k].push(j);
        }
        adj
    }

    /// All non-edges, in lexicographic order.
    pub fn complement_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for j in 0..self.d {
            for k in (j + 1)..self.d {
                if !self.edges.contains(&(j, k)) {
                    out.push((j, k));
                }
            }
        }
        out
    }

    /// Relabels nodes through a permutation (`perm[old] = new`).
    pub fn relabeled(&self, perm: &[usize]) -> EdgeSet {
        let mut edges = BTreeSet::new();
        for &(j, k) in &self.edges {
            let (a, b) = (perm[j], perm[k]);
            edges.insert((a.min(b), a.max(b)));
        }
        EdgeSet { d: self.d, edges }
    }
}

/// Monotone graph properties.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphProperty {
    Connected,
    ComponentsAtMost(usize),
    MaxDegreeGreater(usize),
    IsolatedAtMost(usize),
    CliqueGreater(usize),
}

impl std::fmt::Display for GraphProperty {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GraphProperty::Connected => write!(f, "connected"),
            GraphProperty::ComponentsAtMost(k) => write!(f, "components<={k}"),
            GraphProperty::MaxDegreeGreater(k) => write!(f, "max-degree>{k}"),
            GraphProperty::IsolatedAtMost(k) => write!(f, "isolated<={k}"),
            GraphProperty::CliqueGreater(k) => write!(f, "clique>{k}"),
        }
    }
}

impl std::str::FromStr for GraphProperty {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let usage = || {
            Error::Data(format!(
                "unknown property {s:?}; expected one of: connected, components<=K, \
                 max-degree>K, isolated<=K, clique>K"
            ))
        };
        if s.eq_ignore_ascii_case("connected") {
            return Ok(GraphProperty::Connected);
        }
        let parse_k = |rest: &str| rest.trim().parse::<usize>().map_err(|_| usage());
        if let Some(rest) = s.strip_prefix("components<=") {
            return Ok(GraphProperty::ComponentsAtMost(parse_k(rest)?));
        }
        if let Some(rest) = s.strip_prefix("max-degree>") {
            return Ok(GraphProperty::MaxDegreeGreater(parse_k(rest)?));
        }
        if let Some(rest) = s.strip_prefix("isolated<=") {
            return Ok(GraphProperty::IsolatedAtMost(parse_k(rest)?));
        }
        if let Some(rest) = s.strip_prefix("clique>") {
            return Ok(GraphProperty::CliqueGreater(parse_k(rest)?));
        }
        Err(usage())
    }
}

/// Maximum node degree; 0 for the empty edge set.
pub fn max_degree(es: &EdgeSet) -> usize {
    es.degrees().into_iter().max().unwrap_or(0)
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, i: usize) -> usize {
        if self.parent[i] != i {
            let root = self.find(self.parent[i]);
            self.parent[i] = root;
        }
        self.parent[i]
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Connected components as a sorted partition; isolated nodes are singletons.
pub fn connected_components(es: &EdgeSet) -> Vec<Vec<usize>> {
    let mut uf = UnionFind::new(es.d());
    for (j, k) in es.iter() {
        uf.union(j, k);
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..es.d() {
        groups.entry(uf.find(i)).or_default().push(i);
    }
    groups.into_values().collect()
}

fn component_labels(es: &EdgeSet) -> Vec<usize> {
    let comps = connected_components(es);
    let mut label = vec![0usize; es.d()];
    for (c, comp) in comps.iter().enumerate() {
        for &v in comp {
            label[v] = c;
        }
    }
    label
}

fn isolated_count(es: &EdgeSet) -> usize {
    es.degrees().iter().filter(|&&v| v == 0).count()
}

/// True when the graph contains a clique with more than `k` nodes.
/// Branch-and-bound over degree-ordered candidates; exact.
pub fn has_clique_greater(es: &EdgeSet, k: usize) -> bool {
    let target = k + 1;
    if target <= 1 {
        return es.d() >= 1;
    }
    if target == 2 {
        return !es.is_empty();
    }
    let d = es.d();
    let adj = es.adjacency();
    let mut adj_set: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); d];
    for (v, ns) in adj.iter().enumerate() {
        adj_set[v] = ns.iter().copied().collect();
    }
    // order candidates by degree descending; nodes of degree < target-1
    // cannot belong to a clique of the target size
    let deg = es.degrees();
    let mut nodes: Vec<usize> = (0..d).filter(|&v| deg[v] >= target - 1).collect();
    nodes.sort_by_key(|&v| std::cmp::Reverse(deg[v]));

    fn extend(
        current: usize,
        candidates: &[usize],
        target: usize,
        adj_set: &[BTreeSet<usize>],
    ) -> bool {
        if current >= target {
            return true;
        }
        if current + candidates.len() < target {
            return false;
        }
        for (i, &v) in candidates.iter().enumerate() {
            let rest: Vec<usize> = candidates[i + 1..]
                .iter()
                .copied()
                .filter(|w| adj_set[v].contains(w))
                .collect();
            if extend(current + 1, &rest, target, adj_set) {
                return true;
            }
        }
        false
    }

    extend(0, &nodes, target, &adj_set)
}

/// Evaluates a monotone graph property.
pub fn eval_property(p: &GraphProperty, es: &EdgeSet) -> bool {
    match *p {
        GraphProperty::Connected => connected_components(es).len() == 1,
        GraphProperty::ComponentsAtMost(k) => connected_components(es).len() <= k,
        GraphProperty::MaxDegreeGreater(k) => max_degree(es) > k,
        GraphProperty::IsolatedAtMost(k) => isolated_count(es) <= k,
        GraphProperty::CliqueGreater(k) => has_clique_greater(es, k),
    }
}

/// Critical edge set: non-edges `e` for which some superset `E' ⊇ E` has the
/// property while `E' \ {e}` does not.
///
/// Closed-form constructions per property; `MaxDegreeGreater` uses an exact
/// degree-capacity certificate and `CliqueGreater` a constructive certificate
/// search with an exhaustive fallback at small `d` and a conservative
/// superset (logged) beyond it.
pub fn critical_set(es: &EdgeSet, p: &GraphProperty) -> EdgeSet {
    let d = es.d();
    let mut out = EdgeSet::empty(d);
    match *p {
        GraphProperty::Connected | GraphProperty::ComponentsAtMost(_) => {
            let threshold = match *p {
                GraphProperty::ComponentsAtMost(k) => k,
                _ => 1,
            };
            if threshold == 0 {
                // unachievable: every graph has at least one component
                return out;
            }
            let label = component_labels(es);
            let n_comp = label.iter().collect::<BTreeSet<_>>().len();
            if n_comp <= threshold {
                return out;
            }
            for (j, k) in es.complement_edges() {
                if label[j] != label[k] {
                    out.insert(j, k).unwrap();
                }
            }
        }
        GraphProperty::IsolatedAtMost(k) => {
            let deg = es.degrees();
            let isolated = deg.iter().filter(|&&v| v == 0).count();
            if isolated <= k {
                return out;
            }
            for (j, kk) in es.complement_edges() {
                if deg[j] == 0 || deg[kk] == 0 {
                    out.insert(j, kk).unwrap();
                }
            }
        }
        GraphProperty::MaxDegreeGreater(k) => {
            if eval_property(p, es) {
                return out;
            }
            let deg = es.degrees();
            let adj = es.adjacency();
            for (u, v) in es.complement_edges() {
                let feasible = |a: usize, b: usize| {
                    // raise a to degree k+1: the edge (a,b) plus k - deg(a)
                    // fresh neighbors that stay at degree <= k after the edge
                    let need = k.saturating_sub(deg[a]);
                    if deg[a] > k {
                        return false;
                    }
                    let spare = (0..d)
                        .filter(|&w| {
                            w != a && w != b && deg[w] + 1 <= k && !adj[a].contains(&w)
                        })
                        .count();
                    spare >= need
                };
                if feasible(u, v) || feasible(v, u) {
                    out.insert(u, v).unwrap();
                }
            }
        }
        GraphProperty::CliqueGreater(k) => {
            if eval_property(p, es) {
                return out;
            }
            // here k >= 1, since CliqueGreater(0) always holds
            for (u, v) in es.complement_edges() {
                if clique_certificate(es, u, v, k) {
                    out.insert(u, v).unwrap();
                }
            }
        }
    }
    out
}

/// Certificate for `CliqueGreater(k)`: does completing some vertex set
/// `S = {u, v} ∪ T`, `|T| = k - 1`, create a clique of size `k + 1` whose
/// only witnesses all pass through `(u, v)`?
fn clique_certificate(es: &EdgeSet, u: usize, v: usize, k: usize) -> bool {
    let d = es.d();
    if k == 1 {
        // a single edge is a 2-clique; E has none, so E' = E + e works
        return true;
    }
    if d < k + 1 {
        return false;
    }
    let verify = |t_set: &[usize]| -> bool {
        let mut e_prime = es.clone();
        let mut s: Vec<usize> = vec![u, v];
        s.extend_from_slice(t_set);
        for i in 0..s.len() {
            for j in (i + 1)..s.len() {
                e_prime.insert(s[i], s[j]).unwrap();
            }
        }
        let mut without = EdgeSet::empty(d);
        for (a, b) in e_prime.iter() {
            if (a.min(b), a.max(b)) != (u.min(v), u.max(v)) {
                without.insert(a, b).unwrap();
            }
        }
        !has_clique_greater(&without, k)
    };

    // greedy: lowest-degree nodes interact least with existing structure
    let deg = es.degrees();
    let mut others: Vec<usize> = (0..d).filter(|&w| w != u && w != v).collect();
    others.sort_by_key(|&w| (deg[w], w));
    if verify(&others[..k - 1]) {
        return true;
    }

    // exhaustive over extension sets when tractable, else be conservative
    let n_subsets = binomial(others.len(), k - 1);
    if n_subsets <= 5000 {
        let mut found = false;
        enumerate_subsets(&others, k - 1, &mut |t| {
            if !found && verify(t) {
                found = true;
            }
        });
        found
    } else {
        log::warn!(
            "clique critical-set certificate inconclusive for edge ({u},{v}); \
             including it conservatively"
        );
        true
    }
}

fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let mut r = 1usize;
    for i in 0..k {
        r = r.saturating_mul(n - i) / (i + 1);
    }
    r
}

fn enumerate_subsets(items: &[usize], k: usize, f: &mut impl FnMut(&[usize])) {
    fn rec(items: &[usize], k: usize, start: usize, acc: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
        if acc.len() == k {
            f(acc);
            return;
        }
        for i in start..items.len() {
            acc.push(items[i]);
            rec(items, k, i + 1, acc, f);
            acc.pop();
        }
    }
    rec(items, k, 0, &mut Vec::new(), f);
}

// ---------------------------------------------------------------------------
// Exhaustive oracle on bitmask graphs (d <= 6)
// ---------------------------------------------------------------------------

/// Bitmask helpers for tiny graphs: edges indexed lexicographically over the
/// upper triangle.
pub mod mask {
    /// Pairs (j, k), j < k, in bit order.
    pub fn pairs(d: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for j in 0..d {
            for k in (j + 1)..d {
                out.push((j, k));
            }
        }
        out
    }

    fn adjacency(mask: u32, d: usize) -> Vec<u32> {
        let mut adj = vec![0u32; d];
        for (bit, (j, k)) in pairs(d).into_iter().enumerate() {
            if mask & (1 << bit) != 0 {
                adj[j] |= 1 << k;
                adj[k] |= 1 << j;
            }
        }
        adj
    }

    pub fn n_components(mask: u32, d: usize) -> usize {
        let adj = adjacency(mask, d);
        let mut seen = 0u32;
        let mut comps = 0;
        for v in 0..d {
            if seen & (1 << v) == 0 {
                comps += 1;
                let mut stack = vec![v];
                seen |= 1 << v;
                while let Some(x) = stack.pop() {
                    let mut nb = adj[x] & !seen;
                    while nb != 0 {
                        let w = nb.trailing_zeros() as usize;
                        nb &= nb - 1;
                        seen |= 1 << w;
                        stack.push(w);
                    }
                }
            }
        }
        comps
    }

    pub fn max_degree(mask: u32, d: usize) -> usize {
        adjacency(mask, d)
            .into_iter()
            .map(|a| a.count_ones() as usize)
            .max()
            .unwrap_or(0)
    }

    pub fn n_isolated(mask: u32, d: usize) -> usize {
        adjacency(mask, d)
            .into_iter()
            .filter(|a| *a == 0)
            .count()
    }

    pub fn has_clique_greater(mask: u32, d: usize, k: usize) -> bool {
        if k == 0 {
            return d >= 1;
        }
        let adj = adjacency(mask, d);
        for subset in 0u32..(1 << d) {
            if (subset.count_ones() as usize) < k + 1 {
                continue;
            }
            let mut ok = true;
            let mut rest = subset;
            while rest != 0 && ok {
                let v = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                if (subset & !(1 << v)) & !adj[v] != 0 {
                    ok = false;
                }
            }
            if ok {
                return true;
            }
        }
        false
    }

    pub fn eval(p: &super::GraphProperty, mask: u32, d: usize) -> bool {
        match *p {
            super::GraphProperty::Connected => n_components(mask, d) == 1,
            super::GraphProperty::ComponentsAtMost(k) => n_components(mask, d) <= k,
            super::GraphProperty::MaxDegreeGreater(k) => max_degree(mask, d) > k,
            super::GraphProperty::IsolatedAtMost(k) => n_isolated(mask, d) <= k,
            super::GraphProperty::CliqueGreater(k) => has_clique_greater(mask, d, k),
        }
    }
}

/// Edge set to bitmask (d <= 6).
pub fn to_mask(es: &EdgeSet) -> u32 {
    let mut m = 0u32;
    for (bit, (j, k)) in mask::pairs(es.d()).into_iter().enumerate() {
        if es.contains(j, k) {
            m |= 1 << bit;
        }
    }
    m
}

/// Bitmask to edge set.
pub fn from_mask(m: u32, d: usize) -> EdgeSet {
    let mut es = EdgeSet::empty(d);
    for (bit, (j, k)) in mask::pairs(d).into_iter().enumerate() {
        if m & (1 << bit) != 0 {
            es.insert(j, k).unwrap();
        }
    }
    es
}

/// Literal brute-force evaluation of the critical-set definition: for each
/// non-edge `e`, enumerate every superset `E' ⊇ E ∪ {e}` and test
/// `P(E') = 1` with `P(E' \ {e}) = 0`.
pub fn critical_set_oracle(es: &EdgeSet, p: &GraphProperty) -> Result<EdgeSet> {
    let d = es.d();
    if d > 6 {
        return Err(Error::OracleScale { d });
    }
    let n_bits = d * (d - 1) / 2;
    let full: u32 = if n_bits == 32 { u32::MAX } else { (1 << n_bits) - 1 };
    let e_mask = to_mask(es);
    let mut out = EdgeSet::empty(d);
    let pair_list = mask::pairs(d);
    for (bit, &(j, k)) in pair_list.iter().enumerate() {
        let e_bit = 1u32 << bit;
        if e_mask & e_bit != 0 {
            continue;
        }
        let base = e_mask | e_bit;
        let free = full & !base;
        // iterate all submasks of `free`, including 0
        let mut sub = free;
        let mut critical = false;
        loop {
            let e_prime = base | sub;
            if mask::eval(p, e_prime, d) && !mask::eval(p, e_prime & !e_bit, d) {
                critical = true;
                break;
            }
            if sub == 0 {
                break;
            }
            sub = (sub - 1) & free;
        }
        if critical {
            out.insert(j, k).unwrap();
        }
    }
    Ok(out)
}

//! Simple undirected graphs: parsing, random generators and connected components.
//!
//! A [`Graph`] never stores self-loops. Propagation matrices add the identity
//! themselves (`Ã = A + I`), so there is a single self-loop convention.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;

use rand::seq::index;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    // Normalized as (min, max).
    edges: BTreeSet<(usize, usize)>,
}

impl Graph {
    /// Builds a graph on `n` nodes. Duplicate edges (in either orientation)
    /// are merged; self-loops and out-of-range endpoints are rejected.
    pub fn new<I>(n: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        if n == 0 {
            return Err(Error::InvalidParameter(
                "graph needs at least one node".into(),
            ));
        }
        let mut set = BTreeSet::new();
        for (i, j) in edges {
            if i == j {
                return Err(Error::InvalidParameter(format!("self-loop at node {i}")));
            }
            if i >= n || j >= n {
                return Err(Error::InvalidParameter(format!(
                    "edge ({i}, {j}) has an endpoint outside 0..{n}"
                )));
            }
            set.insert((i.min(j), i.max(j)));
        }
        Ok(Self { n, edges: set })
    }

    pub fn empty(n: usize) -> Result<Self> {
        Self::new(n, std::iter::empty())
    }

    pub fn complete(n: usize) -> Result<Self> {
        Self::new(n, (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))))
    }

    /// Path 0 – 1 – … – (n−1).
    pub fn path(n: usize) -> Result<Self> {
        Self::new(n, (1..n).map(|i| (i - 1, i)))
    }

    /// Disjoint union; nodes of `other` are shifted by `self.n()`.
    pub fn disjoint_union(&self, other: &Graph) -> Graph {
        let shift = self.n;
        let mut edges = self.edges.clone();
        edges.extend(other.edges.iter().map(|&(i, j)| (i + shift, j + shift)));
        Graph {
            n: self.n + other.n,
            edges,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Edges as `(i, j)` with `i < j`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i.min(j), i.max(j)))
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n];
        for &(i, j) in &self.edges {
            deg[i] += 1;
            deg[j] += 1;
        }
        deg
    }

    pub fn adjacency_lists(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        adj
    }

    /// Number of unordered pairs not joined by an edge.
    pub fn absent_pair_count(&self) -> usize {
        self.n * (self.n - 1) / 2 - self.edges.len()
    }

    pub fn is_bipartite(&self) -> bool {
        let adj = self.adjacency_lists();
        let mut color: Vec<Option<bool>> = vec![None; self.n];
        let mut stack = Vec::new();
        for start in 0..self.n {
            if color[start].is_some() {
                continue;
            }
            color[start] = Some(false);
            stack.push(start);
            while let Some(u) = stack.pop() {
                let cu = color[u].unwrap();
                for &v in &adj[u] {
                    match color[v] {
                        None => {
                            color[v] = Some(!cu);
                            stack.push(v);
                        }
                        Some(cv) if cv == cu => return false,
                        Some(_) => {}
                    }
                }
            }
        }
        true
    }

    /// Parses the edge-list text format.
    ///
    /// ```text
    /// # optional comment
    /// n 4
    /// 0 1
    /// 1 2
    /// ```
    ///
    /// The `n <count>` header may only appear before the first edge. Without it
    /// the node count is one more than the largest index seen.
    pub fn from_edge_list(text: &str) -> Result<Self> {
        let mut declared: Option<usize> = None;
        let mut edges = Vec::new();
        let mut max_index: Option<usize> = None;

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                line: line_no,
                message,
            };
            let tokens: Vec<&str> = line.split_whitespace().collect();
            if tokens[0] == "n" {
                if declared.is_some() || !edges.is_empty() {
                    return Err(parse_err("node-count header must precede all edges".into()));
                }
                if tokens.len() != 2 {
                    return Err(parse_err(format!("expected \"n <count>\", got {line:?}")));
                }
                let count: usize = tokens[1]
                    .parse()
                    .map_err(|_| parse_err(format!("invalid node count {:?}", tokens[1])))?;
                if count == 0 {
                    return Err(parse_err("node count must be positive".into()));
                }
                declared = Some(count);
                continue;
            }
            if tokens.len() != 2 {
                return Err(parse_err(format!("expected \"i j\", got {line:?}")));
            }
            let parse_index = |tok: &str| {
                tok.parse::<usize>()
                    .map_err(|_| parse_err(format!("invalid node index {tok:?}")))
            };
            let i = parse_index(tokens[0])?;
            let j = parse_index(tokens[1])?;
            if i == j {
                return Err(parse_err(format!("self-loop at node {i}")));
            }
            if let Some(n) = declared {
                if i.max(j) >= n {
                    return Err(parse_err(format!(
                        "index {} is not below the declared node count {n}",
                        i.max(j)
                    )));
                }
            }
            max_index = Some(max_index.map_or(i.max(j), |m| m.max(i).max(j)));
            edges.push((i, j));
        }

        let n = match (declared, max_index) {
            (Some(n), _) => n,
            (None, Some(m)) => m + 1,
            (None, None) => {
                return Err(Error::Parse {
                    line: 0,
                    message: "edge list has neither edges nor a node-count header".into(),
                })
            }
        };
        Self::new(n, edges)
    }

    /// Serializes to the edge-list format, always with an explicit header.
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("n {}\n", self.n);
        for (i, j) in self.edges() {
            let _ = writeln!(out, "{i} {j}");
        }
        out
    }

    /// Adds `count` edges drawn uniformly without replacement from the pairs
    /// currently absent. Returns the new graph and the number actually added.
    pub fn add_random_edges(&self, count: usize, seed: u64) -> Result<(Graph, usize)> {
        let absent = self.absent_pair_count();
        if count > absent {
            return Err(Error::InvalidParameter(format!(
                "cannot add {count} edges: only {absent} pairs are absent"
            )));
        }
        let mut rng = rng::seeded(seed);
        let mut edges = self.edges.clone();
        if count == 0 {
            return Ok((self.clone(), 0));
        }
        if count * 2 <= absent {
            // Sparse request: rejection-sample random pairs.
            let mut fresh = HashSet::with_capacity(count);
            while fresh.len() < count {
                let i = rng.random_range(0..self.n);
                let j = rng.random_range(0..self.n);
                if i == j {
                    continue;
                }
                let pair = (i.min(j), i.max(j));
                if edges.contains(&pair) || fresh.contains(&pair) {
                    continue;
                }
                fresh.insert(pair);
                edges.insert(pair);
            }
        } else {
            let candidates: Vec<(usize, usize)> = (0..self.n)
                .flat_map(|i| (i + 1..self.n).map(move |j| (i, j)))
                .filter(|pair| !self.edges.contains(pair))
                .collect();
            for k in index::sample(&mut rng, candidates.len(), count) {
                edges.insert(candidates[k]);
            }
        }
        let added = edges.len() - self.edges.len();
        Ok((Graph { n: self.n, edges }, added))
    }
}

/// Erdős–Rényi `G(n, p)`: every unordered pair is an edge independently with
/// probability `p`.
pub fn erdos_renyi(n: usize, p: f64, seed: u64) -> Result<Graph> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParameter(format!(
            "edge probability must lie in [0, 1], got {p}"
        )));
    }
    if n == 0 {
        return Err(Error::InvalidParameter(
            "graph needs at least one node".into(),
        ));
    }
    let mut rng = rng::seeded(seed);
    let mut edges = BTreeSet::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < p {
                edges.insert((i, j));
            }
        }
    }
    Ok(Graph { n, edges })
}

/// The 4-node connected, non-bipartite graph whose propagation matrix has rank 3.
pub fn counterexample_graph() -> Graph {
    Graph::new(4, [(0, 1), (0, 2), (0, 3), (1, 2)]).expect("static edge set is valid")
}

/// Connected components of a graph. Component ids are assigned in order of
/// each component's smallest node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentLabeling {
    labels: Vec<usize>,
    m_count: usize,
}

impl ComponentLabeling {
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn m_count(&self) -> usize {
        self.m_count
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.m_count];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    /// The 0/1 indicator vector of component `m`.
    pub fn indicator(&self, m: usize) -> Vec<f64> {
        self.labels
            .iter()
            .map(|&l| if l == m { 1.0 } else { 0.0 })
            .collect()
    }

    pub fn indicators(&self) -> Vec<Vec<f64>> {
        (0..self.m_count).map(|m| self.indicator(m)).collect()
    }
}

struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

pub fn connected_components(g: &Graph) -> ComponentLabeling {
    let mut dsu = DisjointSet::new(g.n());
    for (i, j) in g.edges() {
        dsu.union(i, j);
    }
    let mut root_label = vec![usize::MAX; g.n()];
    let mut labels = vec![0; g.n()];
    let mut m_count = 0;
    for (v, label) in labels.iter_mut().enumerate() {
        let r = dsu.find(v);
        if root_label[r] == usize::MAX {
            root_label[r] = m_count;
            m_count += 1;
        }
        *label = root_label[r];
    }
    ComponentLabeling { labels, m_count }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::VecDeque;

    /// Breadth-first search labeling, independent of the union-find path.
    fn bfs_labels(g: &Graph) -> (Vec<usize>, usize) {
        let adj = g.adjacency_lists();
        let mut labels = vec![usize::MAX; g.n()];
        let mut count = 0;
        for s in 0..g.n() {
            if labels[s] != usize::MAX {
                continue;
            }
            labels[s] = count;
            let mut queue = VecDeque::from([s]);
            while let Some(u) = queue.pop_front() {
                for &v in &adj[u] {
                    if labels[v] == usize::MAX {
                        labels[v] = count;
                        queue.push_back(v);
                    }
                }
            }
            count += 1;
        }
        (labels, count)
    }

    fn triangle_pair() -> Graph {
        let t = Graph::complete(3).unwrap();
        t.disjoint_union(&t)
    }

    #[test]
    fn parse_plain_edges() {
        let g = Graph::from_edge_list("0 1\n1 2").unwrap();
        assert_eq!(g.n(), 3);
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn parse_header_keeps_isolated_nodes() {
        let g = Graph::from_edge_list("n 4\n0 1").unwrap();
        assert_eq!(g.n(), 4);
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.degrees()[3], 0);
    }

    #[test]
    fn parse_rejects_self_loop_with_line_number() {
        match Graph::from_edge_list("0 0") {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 1);
                assert!(message.contains("self-loop"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn parse_errors_name_the_line() {
        let cases = [
            ("0 1\n1 x", 2),
            ("n 3\n0 1\n2 3", 3),
            ("# c\n\n0 1 2", 3),
            ("0 1\nn 5", 2),
            ("n 0", 1),
        ];
        for (text, expected) in cases {
            match Graph::from_edge_list(text) {
                Err(Error::Parse { line, .. }) => assert_eq!(line, expected, "{text:?}"),
                other => panic!("{text:?}: expected parse error, got {other:?}"),
            }
        }
    }

    #[test]
    fn parse_comments_and_duplicates() {
        let g = Graph::from_edge_list("# header\n0 1 # trailing\n\n1 0\n2 1\n").unwrap();
        assert_eq!(g.n(), 3);
        assert_eq!(g.edge_count(), 2);
    }

    #[test]
    fn edge_list_round_trip() {
        let g = erdos_renyi(30, 0.2, 5).unwrap();
        assert_eq!(Graph::from_edge_list(&g.to_edge_list()).unwrap(), g);
    }

    #[test]
    fn er_extremes() {
        for seed in 0..5 {
            assert_eq!(erdos_renyi(5, 0.0, seed).unwrap().edge_count(), 0);
            assert_eq!(
                erdos_renyi(5, 1.0, seed).unwrap(),
                Graph::complete(5).unwrap()
            );
        }
        assert!(erdos_renyi(5, -0.1, 0).is_err());
        assert!(erdos_renyi(5, 1.5, 0).is_err());
    }

    #[test]
    fn er_edge_count_within_four_sigma() {
        let g = erdos_renyi(1000, 0.1, 7).unwrap();
        let pairs = 1000.0 * 999.0 / 2.0;
        let mean = 0.1 * pairs;
        let sd = (pairs * 0.1 * 0.9_f64).sqrt();
        assert!((g.edge_count() as f64 - mean).abs() <= 4.0 * sd);
    }

    #[test]
    fn er_is_deterministic() {
        assert_eq!(
            erdos_renyi(100, 0.3, 11).unwrap(),
            erdos_renyi(100, 0.3, 11).unwrap()
        );
        assert_ne!(
            erdos_renyi(100, 0.3, 11).unwrap(),
            erdos_renyi(100, 0.3, 12).unwrap()
        );
    }

    #[test]
    fn add_random_edges_cases() {
        let k3 = Graph::complete(3).unwrap();
        let (same, added) = k3.add_random_edges(0, 1).unwrap();
        assert_eq!((same, added), (k3.clone(), 0));

        let (k4, added) = Graph::empty(4).unwrap().add_random_edges(6, 9).unwrap();
        assert_eq!(added, 6);
        assert_eq!(k4, Graph::complete(4).unwrap());

        let (g, added) = Graph::path(3).unwrap().add_random_edges(1, 3).unwrap();
        assert_eq!(added, 1);
        assert!(g.has_edge(0, 2));

        assert!(k3.add_random_edges(1, 0).is_err());
    }

    #[test]
    fn add_random_edges_sparse_path() {
        let base = erdos_renyi(300, 0.05, 1).unwrap();
        let (g, added) = base.add_random_edges(500, 2).unwrap();
        assert_eq!(added, 500);
        assert_eq!(g.edge_count(), base.edge_count() + 500);
        assert!(base.edges().all(|(i, j)| g.has_edge(i, j)));
    }

    #[test]
    fn components_examples() {
        assert_eq!(connected_components(&Graph::empty(4).unwrap()).m_count(), 4);
        assert_eq!(
            connected_components(&Graph::complete(5).unwrap()).m_count(),
            1
        );
        let lab = connected_components(&triangle_pair());
        assert_eq!(lab.m_count(), 2);
        assert_eq!(lab.indicator(0), vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn counterexample_shape() {
        let g = counterexample_graph();
        assert_eq!(g.n(), 4);
        assert_eq!(
            g.edges().collect::<Vec<_>>(),
            vec![(0, 1), (0, 2), (0, 3), (1, 2)]
        );
        assert_eq!(g.degrees(), vec![3, 2, 2, 1]);
        assert_eq!(connected_components(&g).m_count(), 1);
        assert!(!g.is_bipartite());
        assert!(Graph::path(5).unwrap().is_bipartite());
    }

    #[test]
    fn components_match_bfs_on_random_graphs() {
        let mut rng = rng::seeded(2024);
        for trial in 0..500 {
            let n = rng.random_range(1..=50);
            let p = rng.random::<f64>() * 0.15;
            let g = erdos_renyi(n, p, trial).unwrap();
            let lab = connected_components(&g);
            let (bfs, count) = bfs_labels(&g);
            assert_eq!(lab.m_count(), count);
            // Both label components by smallest node, so labelings coincide.
            assert_eq!(lab.labels(), bfs.as_slice());
        }
    }

    proptest! {
        #[test]
        fn indicators_partition_unity(n in 1usize..40, p in 0.0f64..0.3, seed in any::<u64>()) {
            let g = erdos_renyi(n, p, seed).unwrap();
            let lab = connected_components(&g);
            let ind = lab.indicators();
            for v in 0..n {
                let total: f64 = ind.iter().map(|u| u[v]).sum();
                prop_assert_eq!(total, 1.0);
            }
            for a in 0..ind.len() {
                for b in a + 1..ind.len() {
                    let dot: f64 = ind[a].iter().zip(&ind[b]).map(|(x, y)| x * y).sum();
                    prop_assert_eq!(dot, 0.0);
                }
            }
            prop_assert_eq!(lab.sizes().iter().sum::<usize>(), n);
        }
    }
}

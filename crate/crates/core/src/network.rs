//! Matching-network instances and the graph/tree queries built on them.
//!
//! A network has `n` agent types and a list of two-way matches `(i, j)` with
//! `i < j`. Match indices are stable: every other module refers to a match by
//! its position in [`MatchingNetwork::matches`].

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, NetworkIssue, Result};

const LAMBDA_TOLERANCE: f64 = 1e-12;

/// On-disk / inline instance description. Field names are part of the file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawNetwork {
    pub n: usize,
    pub matches: Vec<[usize; 2]>,
    pub lambda: Vec<f64>,
    pub rewards: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchingNetwork {
    n: usize,
    matches: Vec<(usize, usize)>,
    lambda: Vec<f64>,
    rewards: Vec<f64>,
    index: HashMap<(usize, usize), usize>,
    adjacency: Vec<Vec<(usize, usize)>>,
}

impl MatchingNetwork {
    /// Validates a raw description, collecting every issue found.
    pub fn validate(raw: &RawNetwork) -> Result<Self> {
        let mut issues = Vec::new();
        let n = raw.n;
        if n == 0 {
            issues.push(NetworkIssue::Empty);
        }
        if raw.lambda.len() != n {
            issues.push(NetworkIssue::LambdaLength {
                expected: n,
                got: raw.lambda.len(),
            });
        }
        if raw.rewards.len() != raw.matches.len() {
            issues.push(NetworkIssue::RewardsLength {
                expected: raw.matches.len(),
                got: raw.rewards.len(),
            });
        }

        let mut seen: HashMap<(usize, usize), usize> = HashMap::new();
        let mut edges = Vec::with_capacity(raw.matches.len());
        for (index, &[a, b]) in raw.matches.iter().enumerate() {
            let mut ok = true;
            for node in [a, b] {
                if node >= n {
                    issues.push(NetworkIssue::TypeOutOfRange { index, node, n });
                    ok = false;
                }
            }
            if a == b {
                issues.push(NetworkIssue::SelfLoop { index, node: a });
                ok = false;
            }
            let key = (a.min(b), a.max(b));
            if let Some(&first) = seen.get(&key) {
                issues.push(NetworkIssue::ParallelEdge {
                    index,
                    first,
                    i: key.0,
                    j: key.1,
                });
                ok = false;
            } else {
                seen.insert(key, index);
            }
            if ok {
                edges.push(key);
            }
        }

        let mut degree = vec![0usize; n];
        for &(i, j) in &edges {
            degree[i] += 1;
            degree[j] += 1;
        }
        for (i, &d) in degree.iter().enumerate() {
            if d == 0 {
                issues.push(NetworkIssue::IsolatedType(i));
            }
        }

        for (index, &value) in raw.lambda.iter().enumerate() {
            if !(value > 0.0) {
                issues.push(NetworkIssue::NonPositiveLambda { index, value });
            }
        }
        let sum: f64 = raw.lambda.iter().sum();
        if n > 0 && (sum - 1.0).abs() > LAMBDA_TOLERANCE {
            issues.push(NetworkIssue::LambdaNotNormalized { sum });
        }
        for (index, &value) in raw.rewards.iter().enumerate() {
            if !(value > 0.0) {
                issues.push(NetworkIssue::NonPositiveReward { index, value });
            }
        }

        if issues.is_empty() {
            let net = Self::from_parts(n, edges, raw.lambda.clone(), raw.rewards.clone());
            let components = net.component_labels().1;
            if components > 1 {
                issues.push(NetworkIssue::DisconnectedGraph { components });
            } else {
                return Ok(net);
            }
        }
        Err(Error::InvalidNetwork(issues))
    }

    /// Builds a network without validation. Used for restrictions and sub-networks
    /// whose parent was already validated.
    pub(crate) fn from_parts(
        n: usize,
        matches: Vec<(usize, usize)>,
        lambda: Vec<f64>,
        rewards: Vec<f64>,
    ) -> Self {
        let matches: Vec<(usize, usize)> =
            matches.into_iter().map(|(a, b)| (a.min(b), a.max(b))).collect();
        let mut index = HashMap::with_capacity(matches.len());
        let mut adjacency = vec![Vec::new(); n];
        for (m, &(i, j)) in matches.iter().enumerate() {
            index.insert((i, j), m);
            adjacency[i].push((j, m));
            adjacency[j].push((i, m));
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Self {
            n,
            matches,
            lambda,
            rewards,
            index,
            adjacency,
        }
    }

    pub fn to_raw(&self) -> RawNetwork {
        RawNetwork {
            n: self.n,
            matches: self.matches.iter().map(|&(i, j)| [i, j]).collect(),
            lambda: self.lambda.clone(),
            rewards: self.rewards.clone(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_matches(&self) -> usize {
        self.matches.len()
    }

    pub fn matches(&self) -> &[(usize, usize)] {
        &self.matches
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn max_reward(&self) -> f64 {
        self.rewards.iter().cloned().fold(0.0, f64::max)
    }

    /// Index of the match between `i` and `j`, in either order.
    pub fn match_index(&self, i: usize, j: usize) -> Option<usize> {
        self.index.get(&(i.min(j), i.max(j))).copied()
    }

    /// Neighbors of `i` as `(neighbor, match index)`, sorted by neighbor.
    pub fn neighbors(&self, i: usize) -> &[(usize, usize)] {
        &self.adjacency[i]
    }

    /// Same network with only the listed matches kept (indices are renumbered
    /// in the given order). The result may be disconnected.
    pub fn restrict(&self, keep: &[usize]) -> (MatchingNetwork, Vec<usize>) {
        let matches = keep.iter().map(|&m| self.matches[m]).collect();
        let rewards = keep.iter().map(|&m| self.rewards[m]).collect();
        (
            Self::from_parts(self.n, matches, self.lambda.clone(), rewards),
            keep.to_vec(),
        )
    }

    /// Connected-component label per type, and the number of components.
    pub fn component_labels(&self) -> (Vec<usize>, usize) {
        let mut label = vec![usize::MAX; self.n];
        let mut count = 0;
        for start in 0..self.n {
            if label[start] != usize::MAX {
                continue;
            }
            label[start] = count;
            let mut queue = VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                for &(v, _) in &self.adjacency[u] {
                    if label[v] == usize::MAX {
                        label[v] = count;
                        queue.push_back(v);
                    }
                }
            }
            count += 1;
        }
        (label, count)
    }

    /// Splits into connected components. Each component carries the original
    /// type indices; its λ is renormalized so it validates on its own.
    pub fn split_components(&self) -> Vec<Component> {
        let (label, count) = self.component_labels();
        (0..count)
            .map(|c| {
                let types: Vec<usize> = (0..self.n).filter(|&i| label[i] == c).collect();
                let local: HashMap<usize, usize> =
                    types.iter().enumerate().map(|(k, &i)| (i, k)).collect();
                let match_ids: Vec<usize> = (0..self.matches.len())
                    .filter(|&m| label[self.matches[m].0] == c)
                    .collect();
                let mass: f64 = types.iter().map(|&i| self.lambda[i]).sum();
                let network = Self::from_parts(
                    types.len(),
                    match_ids
                        .iter()
                        .map(|&m| (local[&self.matches[m].0], local[&self.matches[m].1]))
                        .collect(),
                    types.iter().map(|&i| self.lambda[i] / mass).collect(),
                    match_ids.iter().map(|&m| self.rewards[m]).collect(),
                );
                Component {
                    network,
                    types,
                    matches: match_ids,
                    mass,
                }
            })
            .collect()
    }

    pub fn is_connected(&self) -> bool {
        self.component_labels().1 <= 1
    }

    /// A forest has exactly `n - c` edges for `c` components.
    pub fn is_acyclic(&self) -> bool {
        let (_, c) = self.component_labels();
        self.matches.len() + c == self.n
    }

    /// Two-coloring by BFS; `None` when an odd cycle exists.
    pub fn two_coloring(&self) -> Option<Vec<bool>> {
        let mut color: Vec<Option<bool>> = vec![None; self.n];
        for start in 0..self.n {
            if color[start].is_some() {
                continue;
            }
            color[start] = Some(false);
            let mut queue = VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                let cu = color[u].unwrap();
                for &(v, _) in &self.adjacency[u] {
                    match color[v] {
                        None => {
                            color[v] = Some(!cu);
                            queue.push_back(v);
                        }
                        Some(cv) if cv == cu => return None,
                        Some(_) => {}
                    }
                }
            }
        }
        Some(color.into_iter().map(Option::unwrap).collect())
    }

    pub fn is_bipartite(&self) -> bool {
        self.two_coloring().is_some()
    }

    pub fn classification(&self) -> Classification {
        Classification {
            acyclic: self.is_acyclic(),
            bipartite: self.is_bipartite(),
        }
    }

    /// All-pairs unweighted distances; `usize::MAX` between components.
    pub fn distances(&self) -> Vec<Vec<usize>> {
        (0..self.n).map(|s| self.bfs_distances(s)).collect()
    }

    pub fn bfs_distances(&self, source: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.n];
        dist[source] = 0;
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            for &(v, _) in &self.adjacency[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        dist
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Classification {
    pub acyclic: bool,
    pub bipartite: bool,
}

/// One connected component of a larger network.
#[derive(Debug, Clone)]
pub struct Component {
    pub network: MatchingNetwork,
    /// Original type index of each local type.
    pub types: Vec<usize>,
    /// Original match index of each local match.
    pub matches: Vec<usize>,
    /// Arrival mass of the component before renormalization.
    pub mass: f64,
}

/// A tree network oriented away from its under-demanded root.
#[derive(Debug, Clone, PartialEq)]
pub struct RootedTree {
    root: usize,
    parent: Vec<Option<usize>>,
    parent_match: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    depth: Vec<usize>,
    /// BFS order from the root: every node appears after its parent.
    order: Vec<usize>,
    same_parity_ancestors: Vec<Vec<usize>>,
}

/// All-pairs unweighted hop distances.
pub fn distances(net: &MatchingNetwork) -> Vec<Vec<usize>> {
    net.distances()
}

/// Roots an acyclic network at its under-demanded type.
pub fn root_tree(net: &MatchingNetwork, under_demanded: usize) -> Result<RootedTree> {
    RootedTree::new(net, under_demanded)
}

impl RootedTree {
    /// Roots a connected acyclic network at `root`.
    pub fn new(net: &MatchingNetwork, root: usize) -> Result<Self> {
        if root >= net.n() {
            return Err(Error::BadRoot(format!("root {root} out of range")));
        }
        if !net.is_acyclic() {
            return Err(Error::NotAcyclic);
        }
        if !net.is_connected() {
            return Err(Error::BadRoot("network is not connected".into()));
        }
        let n = net.n();
        let mut parent = vec![None; n];
        let mut parent_match = vec![None; n];
        let mut children = vec![Vec::new(); n];
        let mut depth = vec![0; n];
        let mut visited = vec![false; n];
        let mut order = Vec::with_capacity(n);
        visited[root] = true;
        let mut queue = VecDeque::from([root]);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for &(v, m) in net.neighbors(u) {
                if !visited[v] {
                    visited[v] = true;
                    parent[v] = Some(u);
                    parent_match[v] = Some(m);
                    depth[v] = depth[u] + 1;
                    children[u].push(v);
                    queue.push_back(v);
                }
            }
        }
        for c in &mut children {
            c.sort_unstable();
        }

        // P(i): strict ancestors at even distance, excluding the root (which is
        // under-demanded).
        let mut same_parity_ancestors = vec![Vec::new(); n];
        for i in 0..n {
            let mut node = i;
            let mut distance = 0;
            while let Some(p) = parent[node] {
                distance += 1;
                node = p;
                if distance % 2 == 0 && node != root {
                    same_parity_ancestors[i].push(node);
                }
            }
        }

        Ok(Self {
            root,
            parent,
            parent_match,
            children,
            depth,
            order,
            same_parity_ancestors,
        })
    }

    pub fn n(&self) -> usize {
        self.parent.len()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn parent(&self, i: usize) -> Option<usize> {
        self.parent[i]
    }

    /// Match index of the edge `(i, P(i))`.
    pub fn parent_match(&self, i: usize) -> Option<usize> {
        self.parent_match[i]
    }

    pub fn children(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    pub fn depth(&self, i: usize) -> usize {
        self.depth[i]
    }

    /// Depth of the tree, d_r.
    pub fn height(&self) -> usize {
        self.depth.iter().copied().max().unwrap_or(0)
    }

    pub fn is_leaf(&self, i: usize) -> bool {
        self.children[i].is_empty()
    }

    /// Nodes in BFS order from the root.
    pub fn top_down(&self) -> &[usize] {
        &self.order
    }

    /// Nodes ordered so every node precedes its parent.
    pub fn bottom_up(&self) -> impl Iterator<Item = usize> + '_ {
        self.order.iter().rev().copied()
    }

    pub fn same_parity_ancestors(&self, i: usize) -> &[usize] {
        &self.same_parity_ancestors[i]
    }

    /// Whether `j` lies in the subtree of `i` (including `i` itself).
    pub fn in_subtree(&self, i: usize, j: usize) -> bool {
        let mut node = j;
        loop {
            if node == i {
                return true;
            }
            match self.parent[node] {
                Some(p) => node = p,
                None => return false,
            }
        }
    }

    /// 𝒯(i): the subtree rooted at `i`, in BFS order starting at `i`.
    pub fn subtree(&self, i: usize) -> Vec<usize> {
        let mut out = vec![i];
        let mut k = 0;
        while k < out.len() {
            let u = out[k];
            out.extend_from_slice(&self.children[u]);
            k += 1;
        }
        out
    }

    /// 𝒯⁻(i): strict descendants of `i`.
    pub fn strict_subtree(&self, i: usize) -> Vec<usize> {
        let mut s = self.subtree(i);
        s.remove(0);
        s
    }

    /// Distance from `i` to a descendant `j`.
    pub fn descendant_distance(&self, i: usize, j: usize) -> usize {
        self.depth[j] - self.depth[i]
    }
}

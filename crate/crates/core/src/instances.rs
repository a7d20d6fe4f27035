//! Built-in benchmark instances and random instance generators.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::network::{MatchingNetwork, RawNetwork};

/// Values published alongside a benchmark instance, kept for comparison with
/// what the solver recomputes.
#[derive(Debug, Clone, Serialize)]
pub struct StatedValues {
    pub epsilon: f64,
    pub under_demanded: Vec<usize>,
    pub z_star: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct BuiltinInstance {
    pub name: &'static str,
    pub network: MatchingNetwork,
    pub stated: Option<StatedValues>,
}

pub const BUILTIN_NAMES: [&str; 4] = ["path6-fig5", "path5-fig10", "path4", "cycle5"];

/// Path `0 – 1 – … – (n-1)` with match `m` joining `m` and `m + 1`.
pub fn path(lambda: &[f64], rewards: &[f64]) -> Result<MatchingNetwork> {
    let n = lambda.len();
    MatchingNetwork::validate(&RawNetwork {
        n,
        matches: (0..n.saturating_sub(1)).map(|m| [m, m + 1]).collect(),
        lambda: lambda.to_vec(),
        rewards: rewards.to_vec(),
    })
}

fn normalized(weights: &[f64]) -> Vec<f64> {
    let s: f64 = weights.iter().sum();
    weights.iter().map(|w| w / s).collect()
}

pub fn builtin(name: &str) -> Result<BuiltinInstance> {
    let name = name.strip_prefix("builtin:").unwrap_or(name);
    match name {
        "path6-fig5" => {
            let unit = 1.0 / 28.0;
            Ok(BuiltinInstance {
                name: "path6-fig5",
                network: path(
                    &[1.0, 2.0, 4.0, 6.0, 8.0, 7.0].map(|w| w * unit),
                    &[10.0, 5.0, 3.0, 2.0, 1.0],
                )?,
                stated: Some(StatedValues {
                    epsilon: unit,
                    under_demanded: vec![5],
                    z_star: None,
                }),
            })
        }
        "path5-fig10" => {
            let unit = 1.0 / 12.1;
            Ok(BuiltinInstance {
                name: "path5-fig10",
                network: path(
                    &[1.0, 2.0, 3.0, 4.0, 2.1].map(|w| w * unit),
                    &[1.0, 2.0, 3.0, 2.0],
                )?,
                stated: Some(StatedValues {
                    epsilon: 0.1 * unit,
                    under_demanded: vec![4],
                    z_star: None,
                }),
            })
        }
        "path4" => Ok(BuiltinInstance {
            name: "path4",
            network: path4(&[1.0, 2.0, 3.0, 4.0])?,
            stated: None,
        }),
        "cycle5" => Ok(BuiltinInstance {
            name: "cycle5",
            network: MatchingNetwork::validate(&RawNetwork {
                n: 5,
                matches: vec![[0, 1], [1, 2], [2, 3], [3, 4], [4, 0]],
                lambda: vec![0.165, 0.09, 0.325, 0.33, 0.09],
                rewards: vec![1.75, 2.0, 1.3, 1.4, 0.85],
            })?,
            stated: Some(StatedValues {
                epsilon: 0.01,
                under_demanded: vec![],
                z_star: Some(vec![0.085, 0.05, 0.32, 0.01, 0.08]),
            }),
        }),
        other => Err(Error::UnknownBuiltin(other.to_string())),
    }
}

/// Four-type path with caller-supplied weights (normalized) and unit rewards.
pub fn path4(weights: &[f64; 4]) -> Result<MatchingNetwork> {
    path(&normalized(weights), &PATH4_REWARDS)
}

pub const PATH4_REWARDS: [f64; 3] = [1.0, 1.0, 1.0];

/// Uniform random labelled tree on `n` nodes as an edge list.
pub fn random_tree_edges<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<(usize, usize)> {
    let mut labels: Vec<usize> = (0..n).collect();
    labels.shuffle(rng);
    (1..n)
        .map(|k| {
            let p = rng.gen_range(0..k);
            (labels[p], labels[k])
        })
        .collect()
}

/// Random tree instance whose static planning optimum is the whole tree with
/// `root` as the only under-demanded type.
///
/// Each non-root node gets a random parent-edge rate ε_i and the root a random
/// slack; λ follows from flow balance. Rewards come from a strictly positive
/// dual (zero at the root) that is tight on every edge, so the tree basis is
/// the unique optimum.
pub fn random_gpg_tree<R: Rng + ?Sized>(rng: &mut R, n: usize) -> (MatchingNetwork, usize) {
    assert!(n >= 2);
    let edges = random_tree_edges(rng, n);
    let root = rng.gen_range(0..n);
    let probe = MatchingNetwork::from_parts(n, edges.clone(), vec![1.0 / n as f64; n], vec![1.0; n - 1]);
    let tree = crate::network::RootedTree::new(&probe, root).expect("tree by construction");

    let mut eps = vec![0.0; n];
    for e in eps.iter_mut() {
        *e = rng.gen_range(0.2..1.0);
    }
    let mut lambda = vec![0.0; n];
    for i in 0..n {
        lambda[i] = eps[i] + tree.children(i).iter().map(|&c| eps[c]).sum::<f64>();
    }
    let total: f64 = lambda.iter().sum();
    lambda.iter_mut().for_each(|l| *l /= total);
    let fix = 1.0 - lambda.iter().sum::<f64>();
    lambda[root] += fix;

    let mut dual = vec![0.0; n];
    for (i, d) in dual.iter_mut().enumerate() {
        if i != root {
            *d = rng.gen_range(0.5..2.0);
        }
    }
    let rewards: Vec<f64> = edges.iter().map(|&(a, b)| dual[a] + dual[b]).collect();
    let net = MatchingNetwork::from_parts(n, edges, lambda, rewards);
    (net, root)
}

/// Random tree with arbitrary random λ and rewards; the optimum may drop
/// edges or be degenerate.
pub fn random_tree_network<R: Rng + ?Sized>(rng: &mut R, n: usize) -> MatchingNetwork {
    let edges = random_tree_edges(rng, n);
    random_weights(rng, n, edges)
}

/// Random connected graph: a random tree plus up to `extra` chords.
pub fn random_connected_network<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    extra: usize,
) -> MatchingNetwork {
    let mut edges = random_tree_edges(rng, n);
    for _ in 0..extra {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        let key = (a.min(b), a.max(b));
        if a != b && !edges.iter().any(|&(x, y)| (x.min(y), x.max(y)) == key) {
            edges.push(key);
        }
    }
    random_weights(rng, n, edges)
}

fn random_weights<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    edges: Vec<(usize, usize)>,
) -> MatchingNetwork {
    let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    let mut lambda = normalized(&weights);
    let fix = 1.0 - lambda.iter().sum::<f64>();
    lambda[0] += fix;
    let rewards = edges.iter().map(|_| rng.gen_range(0.1..3.0)).collect();
    MatchingNetwork::from_parts(n, edges, lambda, rewards)
}

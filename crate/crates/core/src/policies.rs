//! Greedy matching policies.
//!
//! Every decider sees exactly the state its information class allows: the
//! local availability-based policies receive neighbor (or child) availability
//! bits, the longest-queue policy receives neighbor lengths, and probabilistic
//! matching receives the global availability vector. [`Policy`] is the
//! dispatcher that cuts those views out of the full queue vector.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{MatchingNetwork, RootedTree};
use crate::planner::{BasisResolver, SppSolution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "action", content = "partner", rename_all = "snake_case")]
pub enum Action {
    MatchWith(usize),
    Enqueue,
    Discard,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyDecision {
    pub action: Action,
    /// Probability of matching each partner; mass not listed goes to the
    /// enqueue/discard fallback.
    pub probabilities: Vec<(usize, f64)>,
}

impl PolicyDecision {
    fn unmatched(truncated: bool) -> Self {
        Self {
            action: fallback(truncated),
            probabilities: Vec::new(),
        }
    }

    fn deterministic(partner: Option<usize>, truncated: bool) -> Self {
        match partner {
            Some(p) => Self {
                action: Action::MatchWith(p),
                probabilities: vec![(p, 1.0)],
            },
            None => Self::unmatched(truncated),
        }
    }

    pub fn match_probability(&self) -> f64 {
        self.probabilities.iter().map(|p| p.1).sum()
    }

    /// Full outcome distribution, including the fallback.
    pub fn outcomes(&self, truncated: bool) -> Vec<(Action, f64)> {
        let mut out: Vec<(Action, f64)> = self
            .probabilities
            .iter()
            .map(|&(p, w)| (Action::MatchWith(p), w))
            .collect();
        let rest = 1.0 - self.match_probability();
        if rest > 1e-15 {
            out.push((fallback(truncated), rest));
        }
        out
    }
}

fn fallback(truncated: bool) -> Action {
    if truncated {
        Action::Discard
    } else {
        Action::Enqueue
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Granularity {
    Availability,
    QueueLength,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Local,
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PolicyInfo {
    pub granularity: Granularity,
    pub scope: Scope,
}

/// Availability of one queue, as exposed to availability-based deciders.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Availability {
    pub node: usize,
    pub nonempty: bool,
}

/// Length of one neighboring queue, as exposed to the longest-queue decider.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueueLength {
    pub node: usize,
    pub length: u64,
}

/// Match probabilities of probabilistic matching for an arrival at `arrival`.
///
/// `reduced` is the active-match network with `map` giving the original match
/// index of each reduced match; the weights come from the fixed-basis re-solve
/// for the current availability pattern.
pub fn pm_probabilities(
    reduced: &MatchingNetwork,
    map: &[usize],
    resolver: &BasisResolver,
    availability: &[bool],
    arrival: usize,
) -> Result<Vec<(usize, f64)>> {
    let candidates: Vec<(usize, usize)> = reduced
        .neighbors(arrival)
        .iter()
        .copied()
        .filter(|&(k, _)| availability[k])
        .collect();
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    let z = &resolver.resolve_with_basis(availability)?.z;
    let total: f64 = candidates.iter().map(|&(_, m)| z[map[m]]).sum();
    Ok(candidates
        .into_iter()
        .map(|(k, m)| (k, z[map[m]] / total))
        .collect())
}

/// Probabilistic matching. `u` is a uniform draw in `[0, 1)`.
pub fn pm_decide(
    reduced: &MatchingNetwork,
    map: &[usize],
    resolver: &BasisResolver,
    availability: &[bool],
    arrival: usize,
    truncated: bool,
    u: f64,
) -> Result<PolicyDecision> {
    let probabilities = pm_probabilities(reduced, map, resolver, availability, arrival)?;
    if probabilities.is_empty() {
        return Ok(PolicyDecision::unmatched(truncated));
    }
    let mut acc = 0.0;
    let mut chosen = probabilities[probabilities.len() - 1].0;
    for &(k, p) in &probabilities {
        acc += p;
        if u < acc {
            chosen = k;
            break;
        }
    }
    Ok(PolicyDecision {
        action: Action::MatchWith(chosen),
        probabilities,
    })
}

/// Tree priority: first non-empty child (smallest index), else the parent.
/// `neighbors` lists the arrival's tree neighbors.
pub fn tp_decide(
    tree: &RootedTree,
    neighbors: &[Availability],
    arrival: usize,
    truncated: bool,
) -> PolicyDecision {
    let nonempty = |node: usize| neighbors.iter().any(|a| a.node == node && a.nonempty);
    let partner = tree
        .children(arrival)
        .iter()
        .copied()
        .find(|&c| nonempty(c))
        .or_else(|| tree.parent(arrival).filter(|&p| nonempty(p)));
    PolicyDecision::deterministic(partner, truncated)
}

/// Truncated tree priority: first non-empty child (smallest index); the
/// parent is never considered, so only child availability is passed in.
pub fn ttp_decide(
    tree: &RootedTree,
    children: &[Availability],
    arrival: usize,
    truncated: bool,
) -> PolicyDecision {
    let partner = tree
        .children(arrival)
        .iter()
        .copied()
        .find(|&c| children.iter().any(|a| a.node == c && a.nonempty));
    PolicyDecision::deterministic(partner, truncated)
}

/// Longest queue among the neighbors; ties go to the smallest type index.
pub fn lq_decide(neighbors: &[QueueLength], truncated: bool) -> PolicyDecision {
    let mut best: Option<QueueLength> = None;
    for &q in neighbors {
        if q.length == 0 {
            continue;
        }
        best = match best {
            None => Some(q),
            Some(b) if q.length > b.length || (q.length == b.length && q.node < b.node) => Some(q),
            keep => keep,
        };
    }
    PolicyDecision::deterministic(best.map(|q| q.node), truncated)
}

/// Static priority: `allowed` lists the partners of the arriving type in
/// decreasing priority, each with its availability.
pub fn static_priority_decide(allowed: &[Availability], truncated: bool) -> PolicyDecision {
    let partner = allowed.iter().find(|a| a.nonempty).map(|a| a.node);
    PolicyDecision::deterministic(partner, truncated)
}

/// A greedy policy on a path that is not consistent: with both path
/// neighbors non-empty it matches downward while queue 0 is empty and upward
/// otherwise.
pub fn adversarial_decide(queues: &[u64], arrival: usize, truncated: bool) -> PolicyDecision {
    let n = queues.len();
    let down = (arrival > 0 && queues[arrival - 1] > 0).then(|| arrival - 1);
    let up = (arrival + 1 < n && queues[arrival + 1] > 0).then_some(arrival + 1);
    let partner = match (down, up) {
        (Some(d), Some(u)) => Some(if queues[0] == 0 { d } else { u }),
        (d, u) => d.or(u),
    };
    PolicyDecision::deterministic(partner, truncated)
}

/// Priority orders for TP expressed as a static priority policy.
pub fn tp_orders(tree: &RootedTree) -> Vec<Vec<usize>> {
    (0..tree.n())
        .map(|i| {
            let mut o = tree.children(i).to_vec();
            o.extend(tree.parent(i));
            o
        })
        .collect()
}

/// Priority orders for TTP expressed as a static priority policy.
pub fn ttp_orders(tree: &RootedTree) -> Vec<Vec<usize>> {
    (0..tree.n()).map(|i| tree.children(i).to_vec()).collect()
}

/// Policy selector as written on the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PolicySpec {
    Pm,
    Tp,
    Ttp,
    Lq,
    /// Type → ordered list of match indices (highest priority first).
    Static(BTreeMap<usize, Vec<usize>>),
    Adversarial,
}

impl PolicySpec {
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "pm" => Ok(Self::Pm),
            "tp" => Ok(Self::Tp),
            "ttp" => Ok(Self::Ttp),
            "lq" => Ok(Self::Lq),
            "adversarial" => Ok(Self::Adversarial),
            _ => match s.strip_prefix("static:") {
                Some(body) => {
                    let raw: BTreeMap<String, Vec<usize>> = serde_json::from_str(body)
                        .map_err(|e| Error::config("policies", format!("static spec: {e}")))?;
                    let mut orders = BTreeMap::new();
                    for (k, v) in raw {
                        let t = k.parse::<usize>().map_err(|_| {
                            Error::config("policies", format!("static spec key `{k}` is not a type index"))
                        })?;
                        orders.insert(t, v);
                    }
                    Ok(Self::Static(orders))
                }
                None => Err(Error::UnknownPolicy(s.to_string())),
            },
        }
    }

    pub fn name(&self) -> String {
        match self {
            Self::Pm => "pm".into(),
            Self::Tp => "tp".into(),
            Self::Ttp => "ttp".into(),
            Self::Lq => "lq".into(),
            Self::Adversarial => "adversarial".into(),
            Self::Static(orders) => {
                let body: BTreeMap<String, &Vec<usize>> =
                    orders.iter().map(|(k, v)| (k.to_string(), v)).collect();
                format!("static:{}", serde_json::to_string(&body).unwrap_or_default())
            }
        }
    }
}

#[derive(Debug, Clone)]
enum Kind {
    Pm {
        reduced: MatchingNetwork,
        map: Vec<usize>,
        resolver: Arc<BasisResolver>,
    },
    Tp(RootedTree),
    Ttp(RootedTree),
    Lq(MatchingNetwork),
    Static(Vec<Vec<usize>>),
    Adversarial,
}

/// A policy bound to one network and its planning solution.
#[derive(Debug, Clone)]
pub struct Policy {
    name: String,
    kind: Kind,
}

impl Policy {
    pub fn build(spec: &PolicySpec, net: &MatchingNetwork, spp: &SppSolution) -> Result<Self> {
        let name = spec.name();
        let not_applicable = |reason: String| Error::PolicyNotApplicable {
            policy: name.clone(),
            reason,
        };
        let kind = match spec {
            PolicySpec::Pm => {
                let (reduced, map) = spp.reduced_network(net);
                Kind::Pm {
                    reduced,
                    map,
                    resolver: Arc::new(BasisResolver::new(net, spp)?),
                }
            }
            PolicySpec::Tp | PolicySpec::Ttp => {
                let (_, tree) = spp
                    .rooted_tree(net)
                    .map_err(|e| not_applicable(format!("needs an acyclic reduced network: {e}")))?;
                if matches!(spec, PolicySpec::Tp) {
                    Kind::Tp(tree)
                } else {
                    Kind::Ttp(tree)
                }
            }
            PolicySpec::Lq => Kind::Lq(spp.reduced_network(net).0),
            PolicySpec::Static(orders) => {
                let mut partners = vec![Vec::new(); net.n()];
                for (&t, list) in orders {
                    if t >= net.n() {
                        return Err(not_applicable(format!("type {t} out of range")));
                    }
                    for &m in list {
                        let Some(&(a, b)) = net.matches().get(m) else {
                            return Err(not_applicable(format!("match {m} out of range")));
                        };
                        if a != t && b != t {
                            return Err(not_applicable(format!("match {m} is not incident to type {t}")));
                        }
                        if !spp.active_matches.contains(&m) {
                            return Err(not_applicable(format!("match {m} is not active")));
                        }
                        partners[t].push(if a == t { b } else { a });
                    }
                }
                Kind::Static(partners)
            }
            PolicySpec::Adversarial => {
                let is_path = net.matches().iter().enumerate().all(|(m, &e)| e == (m, m + 1))
                    && net.num_matches() + 1 == net.n();
                if !is_path {
                    return Err(not_applicable("requires a path network".into()));
                }
                Kind::Adversarial
            }
        };
        Ok(Self { name, kind })
    }

    /// Static priority policy from explicit partner orders (per type,
    /// highest priority first).
    pub fn static_priority(name: impl Into<String>, orders: Vec<Vec<usize>>) -> Self {
        Self {
            name: name.into(),
            kind: Kind::Static(orders),
        }
    }

    pub fn tp(tree: RootedTree) -> Self {
        Self {
            name: "tp".into(),
            kind: Kind::Tp(tree),
        }
    }

    pub fn ttp(tree: RootedTree) -> Self {
        Self {
            name: "ttp".into(),
            kind: Kind::Ttp(tree),
        }
    }

    pub fn lq(reduced: MatchingNetwork) -> Self {
        Self {
            name: "lq".into(),
            kind: Kind::Lq(reduced),
        }
    }

    pub fn adversarial() -> Self {
        Self {
            name: "adversarial".into(),
            kind: Kind::Adversarial,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn info(&self) -> PolicyInfo {
        let (granularity, scope) = match self.kind {
            Kind::Pm { .. } | Kind::Adversarial => (Granularity::Availability, Scope::Global),
            Kind::Tp(_) | Kind::Ttp(_) | Kind::Static(_) => (Granularity::Availability, Scope::Local),
            Kind::Lq(_) => (Granularity::QueueLength, Scope::Local),
        };
        PolicyInfo { granularity, scope }
    }

    pub fn is_randomized(&self) -> bool {
        matches!(self.kind, Kind::Pm { .. })
    }

    /// Whether the policy is a static priority policy (TP, TTP or explicit orders).
    pub fn is_static_priority(&self) -> bool {
        matches!(self.kind, Kind::Tp(_) | Kind::Ttp(_) | Kind::Static(_))
    }

    /// Decision for an arrival given the full queue vector. `u` is a uniform
    /// draw used only by randomized policies.
    pub fn decide_with(
        &self,
        queues: &[u64],
        arrival: usize,
        truncated: bool,
        u: f64,
    ) -> Result<PolicyDecision> {
        let avail = |node: usize| Availability {
            node,
            nonempty: queues[node] > 0,
        };
        Ok(match &self.kind {
            Kind::Pm {
                reduced,
                map,
                resolver,
            } => {
                let availability: Vec<bool> = queues.iter().map(|&q| q > 0).collect();
                pm_decide(reduced, map, resolver, &availability, arrival, truncated, u)?
            }
            Kind::Tp(tree) => {
                let view: Vec<Availability> = tree
                    .children(arrival)
                    .iter()
                    .copied()
                    .chain(tree.parent(arrival))
                    .map(avail)
                    .collect();
                tp_decide(tree, &view, arrival, truncated)
            }
            Kind::Ttp(tree) => {
                let view: Vec<Availability> =
                    tree.children(arrival).iter().copied().map(avail).collect();
                ttp_decide(tree, &view, arrival, truncated)
            }
            Kind::Lq(reduced) => {
                let view: Vec<QueueLength> = reduced
                    .neighbors(arrival)
                    .iter()
                    .map(|&(node, _)| QueueLength {
                        node,
                        length: queues[node],
                    })
                    .collect();
                lq_decide(&view, truncated)
            }
            Kind::Static(orders) => {
                let view: Vec<Availability> = orders[arrival].iter().copied().map(avail).collect();
                static_priority_decide(&view, truncated)
            }
            Kind::Adversarial => adversarial_decide(queues, arrival, truncated),
        })
    }

    pub fn decide<R: Rng + ?Sized>(
        &self,
        queues: &[u64],
        arrival: usize,
        truncated: bool,
        rng: &mut R,
    ) -> Result<PolicyDecision> {
        // One draw per decision for every policy keeps coupled streams aligned.
        let u: f64 = rng.gen();
        self.decide_with(queues, arrival, truncated, u)
    }

    /// Exact outcome distribution for an arrival.
    pub fn outcomes(&self, queues: &[u64], arrival: usize, truncated: bool) -> Result<Vec<(Action, f64)>> {
        Ok(self.decide_with(queues, arrival, truncated, 0.0)?.outcomes(truncated))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;
    use crate::planner::solve_spp;

    fn path4_tree() -> RootedTree {
        let net = instances::builtin("path4").unwrap().network;
        RootedTree::new(&net, 3).unwrap()
    }

    fn avail(pairs: &[(usize, bool)]) -> Vec<Availability> {
        pairs
            .iter()
            .map(|&(node, nonempty)| Availability { node, nonempty })
            .collect()
    }

    #[test]
    fn tp_prefers_child_then_parent() {
        let tree = path4_tree();
        // Arrival at 1 (0-based) with child 0 empty, parent 2 non-empty.
        let d = tp_decide(&tree, &avail(&[(0, false), (2, true)]), 1, false);
        assert_eq!(d.action, Action::MatchWith(2));
        let d = tp_decide(&tree, &avail(&[(0, true), (2, true)]), 1, false);
        assert_eq!(d.action, Action::MatchWith(0));
        // Root arrival with a non-empty child.
        let d = tp_decide(&tree, &avail(&[(2, true)]), 3, true);
        assert_eq!(d.action, Action::MatchWith(2));
        // Leaf with an empty parent.
        let d = tp_decide(&tree, &avail(&[(1, false)]), 0, false);
        assert_eq!(d.action, Action::Enqueue);
    }

    #[test]
    fn ttp_never_uses_parent() {
        let tree = path4_tree();
        assert_eq!(ttp_decide(&tree, &[], 0, false).action, Action::Enqueue);
        assert_eq!(ttp_decide(&tree, &avail(&[(0, false)]), 1, false).action, Action::Enqueue);
        assert_eq!(ttp_decide(&tree, &avail(&[(2, false)]), 3, true).action, Action::Discard);
        assert_eq!(ttp_decide(&tree, &avail(&[(0, true)]), 1, false).action, Action::MatchWith(0));
    }

    #[test]
    fn lq_rules() {
        let ql = |v: &[(usize, u64)]| -> Vec<QueueLength> {
            v.iter().map(|&(node, length)| QueueLength { node, length }).collect()
        };
        assert_eq!(lq_decide(&ql(&[(1, 0), (3, 0)]), false).action, Action::Enqueue);
        assert_eq!(lq_decide(&ql(&[(1, 3), (3, 5)]), false).action, Action::MatchWith(3));
        assert_eq!(lq_decide(&ql(&[(3, 2), (1, 2)]), false).action, Action::MatchWith(1));
        assert_eq!(lq_decide(&ql(&[(1, 0)]), true).action, Action::Discard);
    }

    #[test]
    fn static_priority_empty_allowed_set() {
        assert_eq!(static_priority_decide(&[], false).action, Action::Enqueue);
        assert_eq!(static_priority_decide(&[], true).action, Action::Discard);
    }

    #[test]
    fn adversarial_rules() {
        assert_eq!(adversarial_decide(&[0, 0, 1, 0, 1, 0], 3, false).action, Action::MatchWith(2));
        assert_eq!(adversarial_decide(&[1, 0, 1, 0, 1, 0], 3, false).action, Action::MatchWith(4));
        assert_eq!(adversarial_decide(&[0, 0, 0, 0, 1, 0], 3, false).action, Action::MatchWith(4));
        assert_eq!(adversarial_decide(&[0; 6], 3, false).action, Action::Enqueue);
    }

    #[test]
    fn pm_singleton_and_empty() {
        let net = instances::builtin("path4").unwrap().network;
        let spp = solve_spp(&net).unwrap();
        let policy = Policy::build(&PolicySpec::Pm, &net, &spp).unwrap();
        let d = policy.decide_with(&[0, 0, 0, 0], 1, false, 0.3).unwrap();
        assert_eq!(d.action, Action::Enqueue);
        let d = policy.decide_with(&[0, 0, 2, 0], 1, false, 0.99).unwrap();
        assert_eq!(d.action, Action::MatchWith(2));
        assert_eq!(d.probabilities, vec![(2, 1.0)]);
    }

    #[test]
    fn pm_two_neighbors_use_resolved_weights() {
        let net = instances::builtin("path4").unwrap().network;
        let spp = solve_spp(&net).unwrap();
        let resolver = BasisResolver::new(&net, &spp).unwrap();
        let pattern = [true, false, true, false];
        let z = resolver.resolve_with_basis(&pattern).unwrap().z.clone();
        let policy = Policy::build(&PolicySpec::Pm, &net, &spp).unwrap();
        let d = policy.decide_with(&[1, 0, 1, 0], 1, false, 0.0).unwrap();
        let expect0 = z[0] / (z[0] + z[1]);
        assert_eq!(d.probabilities.len(), 2);
        assert!((d.probabilities[0].1 - expect0).abs() < 1e-12);
        assert!((d.match_probability() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn info_classes() {
        let net = instances::builtin("path4").unwrap().network;
        let spp = solve_spp(&net).unwrap();
        let info = |s: PolicySpec| Policy::build(&s, &net, &spp).unwrap().info();
        assert_eq!(info(PolicySpec::Pm), PolicyInfo { granularity: Granularity::Availability, scope: Scope::Global });
        for s in [PolicySpec::Tp, PolicySpec::Ttp] {
            assert_eq!(info(s), PolicyInfo { granularity: Granularity::Availability, scope: Scope::Local });
        }
        assert_eq!(info(PolicySpec::Lq), PolicyInfo { granularity: Granularity::QueueLength, scope: Scope::Local });
    }

    #[test]
    fn tree_policies_reject_cycles() {
        let net = instances::builtin("cycle5").unwrap().network;
        let spp = solve_spp(&net).unwrap();
        assert!(matches!(
            Policy::build(&PolicySpec::Tp, &net, &spp),
            Err(Error::PolicyNotApplicable { .. })
        ));
    }

    #[test]
    fn spec_parsing() {
        assert_eq!(PolicySpec::parse("ttp").unwrap(), PolicySpec::Ttp);
        let s = PolicySpec::parse(r#"static:{"1":[0,1]}"#).unwrap();
        assert_eq!(PolicySpec::parse(&s.name()).unwrap(), s);
        assert!(matches!(PolicySpec::parse("greedy"), Err(Error::UnknownPolicy(_))));
    }
}

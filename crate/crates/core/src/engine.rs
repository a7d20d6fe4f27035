//! Discrete-time queue dynamics under a greedy policy.
//!
//! Each period one agent arrives, the policy picks at most one match for it,
//! and unmatched agents are enqueued or, for truncated types, discarded.
//! Arrivals and policy randomness come from separate ChaCha streams so that
//! systems driven by the same `(seed, replication)` see identical arrivals.

use std::io::Write;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fmt::g9;
use crate::network::{MatchingNetwork, RootedTree};
use crate::planner::SppSolution;
use crate::policies::{Action, Policy};

/// Which matches may be performed and which types discard unmatched arrivals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EngineConfig {
    pub truncated: Vec<bool>,
    pub allowed_matches: Vec<bool>,
}

impl EngineConfig {
    /// Active matches only, with the under-demanded types truncated.
    pub fn from_spp(net: &MatchingNetwork, spp: &SppSolution) -> Self {
        let mut allowed = vec![false; net.num_matches()];
        for &m in &spp.active_matches {
            allowed[m] = true;
        }
        Self {
            truncated: spp.truncation(),
            allowed_matches: allowed,
        }
    }

    /// Every match allowed, nothing truncated.
    pub fn unrestricted(net: &MatchingNetwork) -> Self {
        Self {
            truncated: vec![false; net.n()],
            allowed_matches: vec![true; net.num_matches()],
        }
    }

    pub fn with_truncated(mut self, extra: &[usize]) -> Self {
        for &i in extra {
            self.truncated[i] = true;
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimState {
    pub t: u64,
    pub queues: Vec<u64>,
    pub arrivals: Vec<u64>,
    pub matches: Vec<u64>,
    pub discarded: Vec<u64>,
    pub reward: f64,
    /// Initial queue lengths, kept so the conservation identity can be checked.
    pub initial: Vec<u64>,
}

impl SimState {
    pub fn empty(net: &MatchingNetwork) -> Self {
        Self::with_queues(net, vec![0; net.n()])
    }

    pub fn with_queues(net: &MatchingNetwork, queues: Vec<u64>) -> Self {
        assert_eq!(queues.len(), net.n());
        Self {
            t: 0,
            initial: queues.clone(),
            queues,
            arrivals: vec![0; net.n()],
            matches: vec![0; net.num_matches()],
            discarded: vec![0; net.n()],
            reward: 0.0,
        }
    }

    /// `Q = Q(0) + A − M D − discarded`, checked in integer arithmetic.
    pub fn conserves(&self, net: &MatchingNetwork) -> bool {
        let mut rhs: Vec<i128> = (0..net.n())
            .map(|i| {
                self.initial[i] as i128 + self.arrivals[i] as i128 - self.discarded[i] as i128
            })
            .collect();
        for (m, &(a, b)) in net.matches().iter().enumerate() {
            rhs[a] -= self.matches[m] as i128;
            rhs[b] -= self.matches[m] as i128;
        }
        rhs.iter().zip(&self.queues).all(|(&r, &q)| r == q as i128)
    }

    pub fn total_queue(&self, over_demanded: &[usize]) -> u64 {
        over_demanded.iter().map(|&i| self.queues[i]).sum()
    }
}

/// Walker/Vose alias table; one 64-bit word per draw.
#[derive(Debug, Clone)]
pub struct AliasTable {
    threshold: Vec<u64>,
    alias: Vec<usize>,
}

impl AliasTable {
    pub fn new(weights: &[f64]) -> Self {
        let n = weights.len();
        assert!(n > 0);
        let total: f64 = weights.iter().sum();
        let mut scaled: Vec<f64> = weights.iter().map(|w| w * n as f64 / total).collect();
        let mut alias: Vec<usize> = (0..n).collect();
        let mut small: Vec<usize> = (0..n).filter(|&i| scaled[i] < 1.0).collect();
        let mut large: Vec<usize> = (0..n).filter(|&i| scaled[i] >= 1.0).collect();
        while let (Some(s), Some(&l)) = (small.pop(), large.last()) {
            alias[s] = l;
            scaled[l] -= 1.0 - scaled[s];
            if scaled[l] < 1.0 {
                large.pop();
                small.push(l);
            }
        }
        // Leftovers are 1 up to round-off.
        for i in small.into_iter().chain(large) {
            scaled[i] = 1.0;
        }
        let threshold = scaled
            .iter()
            .map(|&p| (p.clamp(0.0, 1.0) * 4_294_967_296.0).round() as u64)
            .collect();
        Self { threshold, alias }
    }

    pub fn sample(&self, x: u64) -> usize {
        let n = self.alias.len() as u64;
        let column = (((x >> 32) * n) >> 32) as usize;
        if (x & 0xffff_ffff) < self.threshold[column] {
            column
        } else {
            self.alias[column]
        }
    }
}

/// Seeded categorical arrival sequence.
#[derive(Debug, Clone)]
pub struct ArrivalStream {
    table: AliasTable,
    rng: ChaCha8Rng,
}

impl ArrivalStream {
    pub fn new(lambda: &[f64], seed: u64, replication: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(2 * replication);
        Self {
            table: AliasTable::new(lambda),
            rng,
        }
    }

    pub fn draw(&mut self) -> usize {
        self.table.sample(self.rng.next_u64())
    }
}

/// Arrival and policy streams for one replication.
#[derive(Debug, Clone)]
pub struct Streams {
    pub arrivals: ArrivalStream,
    pub policy: ChaCha8Rng,
}

impl Streams {
    pub fn new(lambda: &[f64], seed: u64, replication: u64) -> Self {
        let mut policy = ChaCha8Rng::seed_from_u64(seed);
        policy.set_stream(2 * replication + 1);
        Self {
            arrivals: ArrivalStream::new(lambda, seed, replication),
            policy,
        }
    }
}

fn illegal(arrival: usize, reason: impl Into<String>) -> Error {
    Error::IllegalDecision {
        arrival,
        reason: reason.into(),
    }
}

/// Applies one arrival and the policy's action to `state`.
pub fn step(
    net: &MatchingNetwork,
    cfg: &EngineConfig,
    state: &mut SimState,
    arrival: usize,
    action: Action,
) -> Result<()> {
    match action {
        Action::MatchWith(p) => {
            let m = net
                .match_index(arrival, p)
                .ok_or_else(|| illegal(arrival, format!("type {p} is not adjacent")))?;
            if !cfg.allowed_matches[m] {
                return Err(illegal(arrival, format!("match {m} is not allowed")));
            }
            if state.queues[p] == 0 {
                return Err(illegal(arrival, format!("queue {p} is empty")));
            }
            state.queues[p] -= 1;
            state.matches[m] += 1;
            state.reward += net.rewards()[m];
        }
        Action::Enqueue => {
            if cfg.truncated[arrival] {
                return Err(illegal(arrival, "truncated type cannot be enqueued"));
            }
            state.queues[arrival] += 1;
        }
        Action::Discard => {
            if !cfg.truncated[arrival] {
                return Err(illegal(arrival, "only truncated types are discarded"));
            }
            state.discarded[arrival] += 1;
        }
    }
    state.arrivals[arrival] += 1;
    state.t += 1;
    Ok(())
}

/// Decides and applies one period with a given arrival and policy draw.
pub fn advance_with(
    net: &MatchingNetwork,
    cfg: &EngineConfig,
    policy: &Policy,
    state: &mut SimState,
    arrival: usize,
    u: f64,
) -> Result<Action> {
    let decision = policy.decide_with(&state.queues, arrival, cfg.truncated[arrival], u)?;
    step(net, cfg, state, arrival, decision.action)?;
    Ok(decision.action)
}

fn policy_draw(rng: &mut ChaCha8Rng) -> f64 {
    // 53 random bits, as rand's standard f64 sampler does.
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Decides and applies one period, drawing the arrival and the policy draw
/// from `streams`.
pub fn advance(
    net: &MatchingNetwork,
    cfg: &EngineConfig,
    policy: &Policy,
    state: &mut SimState,
    streams: &mut Streams,
) -> Result<(usize, Action)> {
    let arrival = streams.arrivals.draw();
    let u = policy_draw(&mut streams.policy);
    let action = advance_with(net, cfg, policy, state, arrival, u)?;
    Ok((arrival, action))
}

/// How checkpoints are laid out on `[0, T]`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CheckpointSpec {
    /// `{1, 2, 4, …} ∪ {T}`.
    #[default]
    Geometric,
    /// Roughly `per_decade` log-spaced points per decade, plus `T`.
    LogSpaced { per_decade: u32 },
    Explicit { times: Vec<u64> },
}

impl CheckpointSpec {
    pub fn times(&self, horizon: u64) -> Vec<u64> {
        let mut out = match self {
            Self::Geometric => {
                let mut v = Vec::new();
                let mut t = 1u64;
                while t < horizon {
                    v.push(t);
                    t *= 2;
                }
                v
            }
            Self::LogSpaced { per_decade } => {
                let k = (*per_decade).max(1) as f64;
                let mut v = Vec::new();
                let mut j = 0u32;
                loop {
                    let t = 10f64.powf(j as f64 / k).round() as u64;
                    if t >= horizon {
                        break;
                    }
                    v.push(t);
                    j += 1;
                }
                v
            }
            Self::Explicit { times } => times.iter().copied().filter(|&t| t <= horizon).collect(),
        };
        out.push(horizon);
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Runs `horizon` periods from `initial` and snapshots the state at each
/// checkpoint (checkpoints beyond the horizon are ignored).
pub fn run(
    net: &MatchingNetwork,
    cfg: &EngineConfig,
    policy: &Policy,
    initial: SimState,
    horizon: u64,
    checkpoints: &[u64],
    streams: &mut Streams,
) -> Result<Vec<SimState>> {
    let mut marks: Vec<u64> = checkpoints.iter().copied().filter(|&t| t <= horizon).collect();
    marks.sort_unstable();
    marks.dedup();
    let mut state = initial;
    let mut snaps = Vec::with_capacity(marks.len());
    let mut next = marks.iter().peekable();
    while next.peek().is_some_and(|&&t| t == 0) {
        snaps.push(state.clone());
        next.next();
    }
    for t in 1..=horizon {
        advance(net, cfg, policy, &mut state, streams)?;
        if next.peek().is_some_and(|&&c| c == t) {
            snaps.push(state.clone());
            next.next();
        }
    }
    Ok(snaps)
}

/// Queue vectors of an original and a truncated system after every period
/// (index 0 is the initial state).
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledRun {
    pub original: Vec<Vec<u64>>,
    pub truncated: Vec<Vec<u64>>,
}

#[allow(clippy::too_many_arguments)]
fn shared_stream_run(
    net: &MatchingNetwork,
    cfg: &EngineConfig,
    policy: &Policy,
    extra: &[usize],
    initial: &[u64],
    horizon: u64,
    seed: u64,
    replication: u64,
) -> Result<CoupledRun> {
    if !policy.is_static_priority() {
        return Err(Error::PolicyNotApplicable {
            policy: policy.name().to_string(),
            reason: "truncation coupling needs a static priority policy".into(),
        });
    }
    let cfg_t = cfg.clone().with_truncated(extra);
    let mut a = SimState::with_queues(net, initial.to_vec());
    let mut q_t = initial.to_vec();
    for &i in extra {
        q_t[i] = 0;
    }
    let mut b = SimState::with_queues(net, q_t);
    let mut stream = ArrivalStream::new(net.lambda(), seed, replication);
    let mut original = vec![a.queues.clone()];
    let mut truncated = vec![b.queues.clone()];
    for _ in 0..horizon {
        let arrival = stream.draw();
        advance_with(net, cfg, policy, &mut a, arrival, 0.0)?;
        advance_with(net, &cfg_t, policy, &mut b, arrival, 0.0)?;
        original.push(a.queues.clone());
        truncated.push(b.queues.clone());
    }
    Ok(CoupledRun { original, truncated })
}

/// Original system and a copy that additionally truncates `set`, driven by
/// the same arrivals. `set` must lie within one depth parity of `tree`.
#[allow(clippy::too_many_arguments)]
pub fn coupled_truncated_run(
    net: &MatchingNetwork,
    cfg: &EngineConfig,
    policy: &Policy,
    tree: &RootedTree,
    set: &[usize],
    initial: &[u64],
    horizon: u64,
    seed: u64,
    replication: u64,
) -> Result<CoupledRun> {
    if let Some(&first) = set.first() {
        let parity = tree.depth(first) % 2;
        if set.iter().any(|&i| tree.depth(i) % 2 != parity) {
            return Err(Error::MixedParityTruncation);
        }
    }
    shared_stream_run(net, cfg, policy, set, initial, horizon, seed, replication)
}

/// Count of pointwise violations of the truncation monotonicity pattern:
/// queues at the parity opposite to `set` must not shrink, queues at the same
/// parity must not grow.
pub fn truncation_violations(tree: &RootedTree, set: &[usize], run: &CoupledRun) -> usize {
    let Some(&first) = set.first() else {
        return run.original.iter().zip(&run.truncated).filter(|(a, b)| a != b).count();
    };
    let parity = tree.depth(first) % 2;
    let mut bad = 0;
    for (q, qt) in run.original.iter().zip(&run.truncated) {
        for i in 0..q.len() {
            let ok = if tree.depth(i) % 2 == parity {
                qt[i] <= q[i]
            } else {
                qt[i] >= q[i]
            };
            bad += usize::from(!ok);
        }
    }
    bad
}

/// Path system that truncates every type after `last_kept` (0-based), i.e.
/// types `last_kept + 1 ..= n − 1`. Requires a path `0 – 1 – … – (n−1)`
/// rooted at `n − 1`.
#[allow(clippy::too_many_arguments)]
pub fn warmup_system_run(
    net: &MatchingNetwork,
    cfg: &EngineConfig,
    policy: &Policy,
    tree: &RootedTree,
    last_kept: usize,
    horizon: u64,
    seed: u64,
    replication: u64,
) -> Result<CoupledRun> {
    let n = net.n();
    let is_path = net.num_matches() + 1 == n
        && net.matches().iter().enumerate().all(|(m, &e)| e == (m, m + 1))
        && tree.root() == n - 1;
    if !is_path || last_kept + 1 >= n {
        return Err(Error::config(
            "truncation",
            "warm-up systems need a path rooted at its last type and a kept prefix shorter than the path",
        ));
    }
    let set: Vec<usize> = (last_kept + 1..n).collect();
    shared_stream_run(net, cfg, policy, &set, &vec![0; n], horizon, seed, replication)
}

/// Violations of the alternating comparison between the warm-up system that
/// keeps types `0..=last_kept` and the original: kept types at the parity of
/// the first truncated type must not exceed the original, the others must
/// not fall below it, and truncated types stay empty.
pub fn warmup_violations(last_kept: usize, run: &CoupledRun) -> usize {
    let cut = last_kept + 1;
    let mut bad = 0;
    for (q, qt) in run.original.iter().zip(&run.truncated) {
        for j in 0..q.len() {
            let ok = if j > last_kept {
                qt[j] == 0
            } else if (cut - j) % 2 == 0 {
                qt[j] <= q[j]
            } else {
                qt[j] >= q[j]
            };
            bad += usize::from(!ok);
        }
    }
    bad
}

/// Successor states of two systems that see the same arrival and policy draw.
pub fn coupled_pair_run(
    net: &MatchingNetwork,
    cfg: &EngineConfig,
    policy: &Policy,
    q0: &[u64],
    q0_prime: &[u64],
    arrival: usize,
    u: f64,
) -> Result<(Vec<u64>, Vec<u64>)> {
    let mut a = SimState::with_queues(net, q0.to_vec());
    let mut b = SimState::with_queues(net, q0_prime.to_vec());
    advance_with(net, cfg, policy, &mut a, arrival, u)?;
    advance_with(net, cfg, policy, &mut b, arrival, u)?;
    Ok((a.queues, b.queues))
}

/// Queue vector reached from empty after `len` periods of one replication.
pub fn reachable_state(
    net: &MatchingNetwork,
    cfg: &EngineConfig,
    policy: &Policy,
    len: u64,
    seed: u64,
    replication: u64,
) -> Result<Vec<u64>> {
    let mut streams = Streams::new(net.lambda(), seed, replication);
    let mut state = SimState::empty(net);
    for _ in 0..len {
        advance(net, cfg, policy, &mut state, &mut streams)?;
    }
    Ok(state.queues)
}

pub fn l1_distance(a: &[u64], b: &[u64]) -> u64 {
    a.iter().zip(b).map(|(&x, &y)| x.abs_diff(y)).sum()
}

pub const TRAJECTORY_HEADER: &str = "replication,t,type_or_match,kind,value";

/// Writes snapshots as long-format trajectory rows.
pub fn write_trajectory<W: Write>(out: &mut W, replication: u64, snaps: &[SimState]) -> std::io::Result<()> {
    for s in snaps {
        for (i, v) in s.queues.iter().enumerate() {
            writeln!(out, "{replication},{},{i},queue,{v}", s.t)?;
        }
        for (i, v) in s.arrivals.iter().enumerate() {
            writeln!(out, "{replication},{},{i},arrivals,{v}", s.t)?;
        }
        for (m, v) in s.matches.iter().enumerate() {
            writeln!(out, "{replication},{},{m},matches,{v}", s.t)?;
        }
        for (i, v) in s.discarded.iter().enumerate() {
            writeln!(out, "{replication},{},{i},discards,{v}", s.t)?;
        }
        writeln!(out, "{replication},{},,reward,{}", s.t, g9(s.reward))?;
    }
    Ok(())
}

use thiserror::Error;

/// A single problem found while validating a network description.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetworkIssue {
    #[error("network has no agent types")]
    Empty,
    #[error("lambda has length {got}, expected {expected}")]
    LambdaLength { expected: usize, got: usize },
    #[error("rewards has length {got}, expected {expected} (one per match)")]
    RewardsLength { expected: usize, got: usize },
    #[error("match {index} references type {node} outside 0..{n}")]
    TypeOutOfRange { index: usize, node: usize, n: usize },
    #[error("match {index} is a self-loop on type {node}")]
    SelfLoop { index: usize, node: usize },
    #[error("match {index} duplicates match {first} between types {i} and {j}")]
    ParallelEdge { index: usize, first: usize, i: usize, j: usize },
    #[error("type {0} participates in no match")]
    IsolatedType(usize),
    #[error("lambda[{index}] = {value} is not strictly positive")]
    NonPositiveLambda { index: usize, value: f64 },
    #[error("lambda sums to {sum}, expected 1 within 1e-12")]
    LambdaNotNormalized { sum: f64 },
    #[error("reward of match {index} = {value} is not strictly positive")]
    NonPositiveReward { index: usize, value: f64 },
    #[error("graph has {components} connected components; split it and analyze each component separately")]
    DisconnectedGraph { components: usize },
}

/// Which basic variable of the static planning problem a diagnostic refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "snake_case")]
pub enum Variable {
    Match(usize),
    Slack(usize),
}

impl std::fmt::Display for Variable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Variable::Match(m) => write!(f, "z[{m}]"),
            Variable::Slack(i) => write!(f, "s[{i}]"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid network: {}", join_issues(.0))]
    InvalidNetwork(Vec<NetworkIssue>),
    #[error("graph is not acyclic")]
    NotAcyclic,
    #[error("rooting failed: {0}")]
    BadRoot(String),
    #[error("general position gap violated: basic variable {variable} = {value:e} is not strictly positive")]
    GpgViolation { variable: Variable, value: f64 },
    #[error("basis matrix is ill-conditioned (condition estimate {condition:e} > 1e12)")]
    NumericalInstability { condition: f64 },
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("fixed-basis re-solve left basic variable {variable} = {value:e} non-positive")]
    BasisInfeasible { variable: Variable, value: f64 },
    #[error("illegal decision at type {arrival}: {reason}")]
    IllegalDecision { arrival: usize, reason: String },
    #[error("truncation set mixes even- and odd-depth nodes")]
    MixedParityTruncation,
    #[error("negative fluid arrival {value} at type {index}")]
    NegativeArrival { index: usize, value: f64 },
    #[error("unknown builtin instance `{0}`")]
    UnknownBuiltin(String),
    #[error("unknown policy `{0}`")]
    UnknownPolicy(String),
    #[error("policy `{policy}` is not applicable: {reason}")]
    PolicyNotApplicable { policy: String, reason: String },
    #[error("configuration error in `{field}`: {message}")]
    Config { field: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn join_issues(issues: &[NetworkIssue]) -> String {
    issues
        .iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

//! Command-line front end.
//!
//! Settings come from three layers: built-in defaults, an optional JSON
//! config file (`--config`), and explicit flags, with later layers winning.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::analytics;
use crate::engine::{self, CheckpointSpec, EngineConfig, SimState, Streams};
use crate::error::{Error, Result};
use crate::fmt::g9;
use crate::instances;
use crate::network::{MatchingNetwork, RawNetwork};
use crate::planner::{self, solve_spp, SppSolution};
use crate::policies::{Policy, PolicySpec};
use crate::verify::{self, VerifyOptions};

pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_GPG: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

/// Where the network comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InstanceRef {
    /// `builtin:<name>`, a file path, or inline JSON text.
    Named(String),
    Inline(RawNetwork),
}

impl Default for InstanceRef {
    fn default() -> Self {
        Self::Named("builtin:path4".into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Validate,
    Spp,
    #[default]
    Simulate,
    Regret,
    Sweep,
    Verify,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub parameter: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub instance: InstanceRef,
    pub policies: Vec<String>,
    pub horizon: u64,
    pub checkpoints: CheckpointSpec,
    pub replications: u64,
    pub seed: u64,
    pub mode: Mode,
    pub sweep: Option<SweepConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            instance: InstanceRef::default(),
            policies: vec!["tp".into(), "ttp".into(), "lq".into(), "pm".into()],
            horizon: 10_000,
            checkpoints: CheckpointSpec::Geometric,
            replications: 1000,
            seed: 0,
            mode: Mode::default(),
            sweep: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            Error::config(
                format!("config (line {}, column {})", e.line(), e.column()),
                e.to_string(),
            )
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Resolves `builtin:<name>`, inline JSON, a file path, or a bare builtin name.
pub fn load_instance(r: &InstanceRef) -> Result<(String, MatchingNetwork)> {
    match r {
        InstanceRef::Inline(raw) => Ok(("inline".into(), MatchingNetwork::validate(raw)?)),
        InstanceRef::Named(s) => {
            let s = s.trim();
            if let Some(name) = s.strip_prefix("builtin:") {
                return Ok((name.to_string(), instances::builtin(name)?.network));
            }
            if s.starts_with('{') {
                let raw: RawNetwork = serde_json::from_str(s)
                    .map_err(|e| Error::config("instance", format!("inline JSON: {e}")))?;
                return Ok(("inline".into(), MatchingNetwork::validate(&raw)?));
            }
            let path = Path::new(s);
            if path.exists() {
                let text = std::fs::read_to_string(path)?;
                let raw: RawNetwork = serde_json::from_str(&text).map_err(|e| {
                    Error::config(
                        format!("{} (line {}, column {})", path.display(), e.line(), e.column()),
                        e.to_string(),
                    )
                })?;
                return Ok((s.to_string(), MatchingNetwork::validate(&raw)?));
            }
            if instances::BUILTIN_NAMES.contains(&s) {
                return Ok((s.to_string(), instances::builtin(s)?.network));
            }
            Err(Error::config("instance", format!("`{s}` is not a builtin, a file, or inline JSON")))
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "dynmatch", version, about = "Dynamic two-way matching: policies, regret and structural checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate an instance and print its classification.
    Validate(Common),
    /// Solve the static planning problem.
    Spp(Common),
    /// Simulate policies and write a trajectory CSV.
    Simulate(Common),
    /// Estimate regret curves and write a regret CSV.
    Regret(Common),
    /// Regret as the instance is moved toward degeneracy.
    Sweep(Common),
    /// Run the structural verification suite.
    Verify(Common),
}

#[derive(Debug, Args, Clone, Default)]
struct Common {
    /// `builtin:<name>`, a JSON file, or inline JSON.
    instance: Option<String>,
    /// JSON experiment config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated policy names (pm, tp, ttp, lq, adversarial, static:<json>).
    #[arg(long, value_delimiter = ',')]
    policies: Option<Vec<String>>,
    /// Alias for a single policy.
    #[arg(long)]
    policy: Option<String>,
    #[arg(long = "T", alias = "horizon")]
    horizon: Option<u64>,
    #[arg(long, alias = "replications")]
    reps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// `geometric`, `log:<per_decade>`, or a comma-separated list of times.
    #[arg(long)]
    checkpoints: Option<String>,
    /// Sweep values for `epsilon_scale`, comma-separated.
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<f64>>,
    /// Output file (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_checkpoints(s: &str) -> Result<CheckpointSpec> {
    let s = s.trim();
    if s == "geometric" {
        return Ok(CheckpointSpec::Geometric);
    }
    if let Some(k) = s.strip_prefix("log:") {
        let per_decade = k
            .parse()
            .map_err(|_| Error::config("checkpoints", format!("bad per-decade count `{k}`")))?;
        return Ok(CheckpointSpec::LogSpaced { per_decade });
    }
    let times = s
        .split(',')
        .map(|t| t.trim().parse::<u64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| Error::config("checkpoints", format!("expected geometric, log:<k> or a list of times, got `{s}`")))?;
    Ok(CheckpointSpec::Explicit { times })
}

fn resolve(mode: Mode, c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(path) => ExperimentConfig::from_json(&std::fs::read_to_string(path)?)?,
        None => ExperimentConfig::default(),
    };
    cfg.mode = mode;
    if let Some(i) = &c.instance {
        cfg.instance = InstanceRef::Named(i.clone());
    }
    if let Some(p) = &c.policies {
        cfg.policies = p.clone();
    }
    if let Some(p) = &c.policy {
        cfg.policies = vec![p.clone()];
    }
    if let Some(t) = c.horizon {
        cfg.horizon = t;
    }
    if let Some(r) = c.reps {
        cfg.replications = r;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(cp) = &c.checkpoints {
        cfg.checkpoints = parse_checkpoints(cp)?;
    }
    if let Some(v) = &c.values {
        cfg.sweep = Some(SweepConfig {
            parameter: "epsilon_scale".into(),
            values: v.clone(),
        });
    }
    Ok(cfg)
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(std::io::stdout())),
    })
}

fn build_policies(net: &MatchingNetwork, spp: &SppSolution, names: &[String]) -> Result<Vec<Policy>> {
    if names.is_empty() {
        return Err(Error::config("policies", "at least one policy is required"));
    }
    names
        .iter()
        .map(|n| Policy::build(&PolicySpec::parse(n)?, net, spp))
        .collect()
}

#[derive(Serialize)]
struct ValidateOut<'a> {
    instance: &'a str,
    n: usize,
    matches: usize,
    acyclic: bool,
    bipartite: bool,
}

#[derive(Serialize)]
struct SppOut<'a> {
    instance: &'a str,
    #[serde(flatten)]
    solution: &'a SppSolution,
    stated: Option<instances::StatedValues>,
    discrepancy: Option<bool>,
}

fn spp_json(name: &str, spp: &SppSolution) -> Result<String> {
    let stated = instances::builtin(name).ok().and_then(|b| b.stated);
    let discrepancy = stated.as_ref().map(|s| {
        let eps_off = (s.epsilon - spp.epsilon).abs() > 1e-9;
        let under_off = s.under_demanded != spp.under_demanded;
        let z_off = s
            .z_star
            .as_ref()
            .is_some_and(|z| z.iter().zip(&spp.z_star).any(|(a, b)| (a - b).abs() > 1e-9));
        eps_off || under_off || z_off
    });
    Ok(serde_json::to_string_pretty(&SppOut {
        instance: name,
        solution: spp,
        stated,
        discrepancy,
    })?)
}

fn cmd_validate(cfg: &ExperimentConfig, out: &mut dyn Write) -> Result<()> {
    let (name, net) = load_instance(&cfg.instance)?;
    let c = net.classification();
    writeln!(
        out,
        "{}",
        serde_json::to_string_pretty(&ValidateOut {
            instance: &name,
            n: net.n(),
            matches: net.num_matches(),
            acyclic: c.acyclic,
            bipartite: c.bipartite,
        })?
    )?;
    Ok(())
}

fn cmd_spp(cfg: &ExperimentConfig, out: &mut dyn Write) -> Result<()> {
    let (name, net) = load_instance(&cfg.instance)?;
    let spp = solve_spp(&net)?;
    writeln!(out, "{}", spp_json(&name, &spp)?)?;
    Ok(())
}

fn cmd_simulate(cfg: &ExperimentConfig, out: &mut dyn Write) -> Result<()> {
    let (_, net) = load_instance(&cfg.instance)?;
    let spp = solve_spp(&net)?;
    let policies = build_policies(&net, &spp, &cfg.policies)?;
    let times = cfg.checkpoints.times(cfg.horizon);
    writeln!(out, "policy,{}", engine::TRAJECTORY_HEADER)?;
    for policy in &policies {
        let ecfg = if policy.name() == "adversarial" {
            EngineConfig::unrestricted(&net)
        } else {
            EngineConfig::from_spp(&net, &spp)
        };
        for rep in 0..cfg.replications {
            let mut streams = Streams::new(net.lambda(), cfg.seed, rep);
            let snaps = engine::run(&net, &ecfg, policy, SimState::empty(&net), cfg.horizon, &times, &mut streams)?;
            let mut buf = Vec::new();
            engine::write_trajectory(&mut buf, rep, &snaps)?;
            for line in String::from_utf8_lossy(&buf).lines() {
                writeln!(out, "{},{line}", csv_field(policy.name()))?;
            }
        }
    }
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn cmd_regret(cfg: &ExperimentConfig, out: &mut dyn Write) -> Result<()> {
    let (_, net) = load_instance(&cfg.instance)?;
    let spp = solve_spp(&net)?;
    let policies = build_policies(&net, &spp, &cfg.policies)?;
    let times = cfg.checkpoints.times(cfg.horizon);
    let report = analytics::regret_experiment(&net, &spp, &policies, cfg.horizon, &times, cfg.replications, cfg.seed)?;
    report.write_csv(&mut &mut *out)?;
    Ok(())
}

fn cmd_sweep(cfg: &ExperimentConfig, out: &mut dyn Write) -> Result<()> {
    let (_, net) = load_instance(&cfg.instance)?;
    let spp = solve_spp(&net)?;
    let sweep = cfg.sweep.clone().unwrap_or(SweepConfig {
        parameter: "epsilon_scale".into(),
        values: vec![1.0, 0.5, 0.25],
    });
    if sweep.parameter != "epsilon_scale" {
        return Err(Error::config("sweep.parameter", format!("unsupported parameter `{}`", sweep.parameter)));
    }
    let times = cfg.checkpoints.times(cfg.horizon);
    writeln!(out, "epsilon_scale,epsilon,policy,sup_regret,ci_half_at_sup")?;
    for &theta in &sweep.values {
        let scaled = planner::toward_degeneracy(&net, &spp, theta)?;
        let sspp = solve_spp(&scaled)?;
        let policies = build_policies(&scaled, &sspp, &cfg.policies)?;
        let report =
            analytics::regret_experiment(&scaled, &sspp, &policies, cfg.horizon, &times, cfg.replications, cfg.seed)?;
        for c in &report.curves {
            writeln!(
                out,
                "{},{},{},{},{}",
                g9(theta),
                g9(sspp.epsilon),
                csv_field(&c.policy),
                g9(c.sup_regret),
                g9(c.ci_half[c.sup_index])
            )?;
        }
    }
    Ok(())
}

fn cmd_verify(cfg: &ExperimentConfig, out: &mut dyn Write) -> Result<bool> {
    let (name, net) = load_instance(&cfg.instance)?;
    let spp = solve_spp(&net)?;
    let opts = VerifyOptions {
        seed: cfg.seed,
        ..VerifyOptions::default()
    };
    let report = verify::verify_instance(&name, &net, &spp, &opts)?;
    writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
    Ok(report.passed())
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::GpgViolation { .. } => EXIT_GPG,
        _ => EXIT_CONFIG,
    }
}

/// Parses `argv`, runs the subcommand, and returns the process exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let (mode, common) = match &cli.command {
        Command::Validate(c) => (Mode::Validate, c),
        Command::Spp(c) => (Mode::Spp, c),
        Command::Simulate(c) => (Mode::Simulate, c),
        Command::Regret(c) => (Mode::Regret, c),
        Command::Sweep(c) => (Mode::Sweep, c),
        Command::Verify(c) => (Mode::Verify, c),
    };
    let result = resolve(mode, common).and_then(|cfg| {
        let mut out = output(&common.out)?;
        let ok = match mode {
            Mode::Validate => cmd_validate(&cfg, &mut out).map(|_| true),
            Mode::Spp => cmd_spp(&cfg, &mut out).map(|_| true),
            Mode::Simulate => cmd_simulate(&cfg, &mut out).map(|_| true),
            Mode::Regret => cmd_regret(&cfg, &mut out).map(|_| true),
            Mode::Sweep => cmd_sweep(&cfg, &mut out).map(|_| true),
            Mode::Verify => cmd_verify(&cfg, &mut out),
        }?;
        out.flush()?;
        Ok(ok)
    });
    match result {
        Ok(true) => 0,
        Ok(false) => {
            eprintln!("verification failed");
            EXIT_VERIFY
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trip() {
        let cfg = ExperimentConfig {
            instance: InstanceRef::Named("builtin:cycle5".into()),
            policies: vec!["pm".into(), r#"static:{"0":[0]}"#.into()],
            horizon: 123,
            checkpoints: CheckpointSpec::LogSpaced { per_decade: 7 },
            replications: 9,
            seed: 5,
            mode: Mode::Sweep,
            sweep: Some(SweepConfig {
                parameter: "epsilon_scale".into(),
                values: vec![1.0, 0.5],
            }),
        };
        assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn inline_instance_round_trip() {
        let raw = instances::builtin("path4").unwrap().network.to_raw();
        let cfg = ExperimentConfig {
            instance: InstanceRef::Inline(raw),
            ..ExperimentConfig::default()
        };
        assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn unknown_field_reports_location() {
        let err = ExperimentConfig::from_json("{\n  \"horizn\": 5\n}").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"horizon": 50, "seed": 3, "replications": 4}"#).unwrap();
        let common = Common {
            config: Some(path),
            seed: Some(9),
            ..Common::default()
        };
        let cfg = resolve(Mode::Regret, &common).unwrap();
        assert_eq!(cfg.horizon, 50);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.replications, 4);
        assert_eq!(cfg.policies, ExperimentConfig::default().policies);
    }

    #[test]
    fn checkpoint_flag_forms() {
        assert_eq!(parse_checkpoints("geometric").unwrap(), CheckpointSpec::Geometric);
        assert_eq!(parse_checkpoints("log:10").unwrap(), CheckpointSpec::LogSpaced { per_decade: 10 });
        assert_eq!(
            parse_checkpoints("1,5,10").unwrap(),
            CheckpointSpec::Explicit { times: vec![1, 5, 10] }
        );
        assert!(parse_checkpoints("soon").is_err());
    }
}

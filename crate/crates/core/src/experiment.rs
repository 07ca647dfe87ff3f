//! JSON-configured experiment sweeps and their CSV tables.
//!
//! A config names one experiment kind. Every field other than `kind` is
//! optional and falls back to the preset of that kind. Configs are checked
//! while they are parsed, so a bad value is reported with the line and
//! column it sits on.
//!
//! Outputs are written to a temporary file in the output directory and then
//! renamed into place. `manifest.json` records the config hash, the derived
//! seeds and the SHA-256 of every table.

use std::fmt::{self, Write as _};
use std::fs;
use std::io::Write as _;
use std::num::NonZeroU64;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analysis::{p_alpha_series, p_star_alpha, AnalysisError, SERIES_TOLERANCE};
use crate::metrics::{
    broadcast_probability_per_degree_from_stats, mean_k_per_degree_from_stats, DegreeProfile,
    MetricsError, RunStats, StatsCollector,
};
use crate::rpl::{run_rpl, RplError, DEFAULT_DURATION, DEFAULT_I_MAX, DEFAULT_I_MIN};
use crate::sim::{run_with_sink, Replication, SimConfig, SimError, DEFAULT_WARMUP_INTERVALS};
use crate::topology::{Topology, TopologyError, TopologySpec};
use crate::trickle::{RedundancyPolicy, TrickleParams};
use crate::{derive_seed, Time};

/// Environment variable capping the worker threads.
pub const THREADS_ENV: &str = "TRICKLE_LAB_THREADS";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const FIG1_FILE: &str = "fig1_fixed_k.csv";
pub const FIG2_FILE: &str = "fig2_adaptive.csv";
pub const FIG3_FILE: &str = "fig3_mean_k.csv";
pub const FIGP_FILE: &str = "figp_analysis.csv";
pub const RPL_FILE: &str = "rpl_metrics.csv";

const SIGNIFICANT_DIGITS: usize = 9;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Invalid(#[from] serde_json::Error),
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{THREADS_ENV} must be a positive integer, got {0:?}")]
    Threads(String),
    #[error("cannot start worker pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Rpl(#[from] RplError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    SteadyState,
    StarAnalysis,
    Rpl,
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExperimentKind::SteadyState => "steady-state",
            ExperimentKind::StarAnalysis => "star-analysis",
            ExperimentKind::Rpl => "rpl",
        })
    }
}

/// A policy that passed validation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RedundancyPolicy", into = "RedundancyPolicy")]
pub struct PolicyEntry(pub RedundancyPolicy);

impl TryFrom<RedundancyPolicy> for PolicyEntry {
    type Error = String;
    fn try_from(p: RedundancyPolicy) -> Result<Self, String> {
        p.validate().map_err(|e| e.to_string())?;
        Ok(PolicyEntry(p))
    }
}

impl From<PolicyEntry> for RedundancyPolicy {
    fn from(p: PolicyEntry) -> Self {
        p.0
    }
}

/// A value of `alpha` in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Alpha(pub f64);

impl TryFrom<f64> for Alpha {
    type Error = String;
    fn try_from(a: f64) -> Result<Self, String> {
        if (0.0..=1.0).contains(&a) {
            Ok(Alpha(a))
        } else {
            Err(format!("alpha must lie in [0, 1], got {a}"))
        }
    }
}

impl From<Alpha> for f64 {
    fn from(a: Alpha) -> f64 {
        a.0
    }
}

/// Target average degree of a random geometric sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Density(pub f64);

impl TryFrom<f64> for Density {
    type Error = String;
    fn try_from(d: f64) -> Result<Self, String> {
        if d.is_finite() && d > 0.0 {
            Ok(Density(d))
        } else {
            Err(format!("density must be positive, got {d}"))
        }
    }
}

impl From<Density> for f64 {
    fn from(d: Density) -> f64 {
        d.0
    }
}

/// A topology recipe that passed validation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TopologySpec", into = "TopologySpec")]
pub struct TopologyEntry(pub TopologySpec);

impl TryFrom<TopologySpec> for TopologyEntry {
    type Error = String;
    fn try_from(spec: TopologySpec) -> Result<Self, String> {
        match spec {
            TopologySpec::SingleCell { n } if n == 0 => Err("single-cell needs n >= 1".into()),
            TopologySpec::Star { leaves } if leaves == 0 => Err("star needs leaves >= 1".into()),
            TopologySpec::RandomGeometric { n, side, avg_degree } => {
                if n < 2 {
                    Err("random-geometric needs n >= 2".into())
                } else if !(side.is_finite() && side > 0.0) {
                    Err(format!("side must be positive, got {side}"))
                } else if !(avg_degree > 0.0 && avg_degree <= (n - 1) as f64) {
                    Err(format!("avg_degree must lie in (0, {}], got {avg_degree}", n - 1))
                } else {
                    Ok(TopologyEntry(spec))
                }
            }
            _ => Ok(TopologyEntry(spec)),
        }
    }
}

impl From<TopologyEntry> for TopologySpec {
    fn from(t: TopologyEntry) -> Self {
        t.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawIntervals {
    i_min: Time,
    i_max: Time,
}

/// Trickle interval bounds shared by all policies of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawIntervals", into = "RawIntervals")]
pub struct Intervals {
    pub i_min: Time,
    pub i_max: Time,
}

impl TryFrom<RawIntervals> for Intervals {
    type Error = String;
    fn try_from(raw: RawIntervals) -> Result<Self, String> {
        TrickleParams::new(raw.i_min, raw.i_max, RedundancyPolicy::Fixed { k: 1 })
            .map_err(|e| e.to_string())?;
        Ok(Intervals { i_min: raw.i_min, i_max: raw.i_max })
    }
}

impl From<Intervals> for RawIntervals {
    fn from(i: Intervals) -> Self {
        RawIntervals { i_min: i.i_min, i_max: i.i_max }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    duration: Time,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    warmup: Option<Time>,
    #[serde(default)]
    synchronized: bool,
}

/// Run length and start-up mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRun", into = "RawRun")]
pub struct RunSection {
    pub duration: Time,
    /// Defaults to fifty `i_max` intervals, capped at half the duration.
    pub warmup: Option<Time>,
    pub synchronized: bool,
}

impl TryFrom<RawRun> for RunSection {
    type Error = String;
    fn try_from(raw: RawRun) -> Result<Self, String> {
        if !(raw.duration.is_finite() && raw.duration > 0.0) {
            return Err(format!("duration must be positive, got {}", raw.duration));
        }
        if let Some(w) = raw.warmup {
            if !(w >= 0.0 && w < raw.duration) {
                return Err(format!("warmup must lie in [0, duration), got {w}"));
            }
        }
        Ok(RunSection { duration: raw.duration, warmup: raw.warmup, synchronized: raw.synchronized })
    }
}

impl From<RunSection> for RawRun {
    fn from(r: RunSection) -> Self {
        RawRun { duration: r.duration, warmup: r.warmup, synchronized: r.synchronized }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    kind: ExperimentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    replications: Option<NonZeroU64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    topology: Option<TopologyEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    densities: Option<Vec<Density>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    policies: Option<Vec<PolicyEntry>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    trickle: Option<Intervals>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    run: Option<RunSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alphas: Option<Vec<Alpha>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    root: Option<usize>,
}

/// Fully resolved experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawConfig")]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub replications: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub topology: TopologySpec,
    /// When non-empty, the random geometric topology is rebuilt for each
    /// average degree listed here.
    pub densities: Vec<f64>,
    pub policies: Vec<RedundancyPolicy>,
    pub trickle: Intervals,
    pub run: RunSection,
    pub alphas: Vec<f64>,
    pub root: usize,
}

impl TryFrom<RawConfig> for ExperimentConfig {
    type Error = String;
    fn try_from(raw: RawConfig) -> Result<Self, String> {
        let preset = ExperimentConfig::preset(raw.kind);
        let topology = raw.topology.map_or(preset.topology, |t| t.0);
        let densities = match raw.densities {
            Some(d) => d.into_iter().map(f64::from).collect(),
            // a custom topology without densities is used as given
            None if raw.topology.is_some() => Vec::new(),
            None => preset.densities,
        };
        let config = ExperimentConfig {
            kind: raw.kind,
            seed: raw.seed.unwrap_or(preset.seed),
            replications: raw.replications.map_or(preset.replications, NonZeroU64::get),
            output_dir: raw.output_dir,
            topology,
            densities,
            policies: raw.policies.map_or(preset.policies, |p| p.into_iter().map(|e| e.0).collect()),
            trickle: raw.trickle.unwrap_or(preset.trickle),
            run: raw.run.unwrap_or(preset.run),
            alphas: raw.alphas.map_or(preset.alphas, |a| a.into_iter().map(f64::from).collect()),
            root: raw.root.unwrap_or(preset.root),
        };
        config.check()?;
        Ok(config)
    }
}

impl ExperimentConfig {
    /// Defaults for each kind: the 200-node spatial sweep, the `alpha` grid
    /// `0, 0.01, .., 1`, and the 101-node DODAG sweep.
    pub fn preset(kind: ExperimentKind) -> Self {
        let fixed = |k| RedundancyPolicy::Fixed { k };
        match kind {
            ExperimentKind::SteadyState => ExperimentConfig {
                kind,
                seed: 1,
                replications: 10,
                output_dir: None,
                topology: TopologySpec::RandomGeometric { n: 200, side: 100.0, avg_degree: 10.0 },
                densities: vec![5.0, 10.0, 15.0],
                policies: [fixed(1), fixed(5), fixed(10)]
                    .into_iter()
                    .chain([0.5, 2.0 / 3.0, 0.75, 1.0].map(|alpha| RedundancyPolicy::Adaptive {
                        alpha,
                        k_min: 1,
                        k_max: 30,
                    }))
                    .collect(),
                trickle: Intervals { i_min: 1.0, i_max: 1.0 },
                run: RunSection { duration: 200.0, warmup: None, synchronized: false },
                alphas: Vec::new(),
                root: 0,
            },
            ExperimentKind::StarAnalysis => ExperimentConfig {
                kind,
                seed: 1,
                replications: 1,
                output_dir: None,
                topology: TopologySpec::Star { leaves: 1 },
                densities: Vec::new(),
                policies: Vec::new(),
                trickle: Intervals { i_min: 1.0, i_max: 1.0 },
                run: RunSection { duration: 1.0, warmup: None, synchronized: true },
                alphas: (0..=100).map(|i| f64::from(i) / 100.0).collect(),
                root: 0,
            },
            ExperimentKind::Rpl => ExperimentConfig {
                kind,
                seed: 1,
                replications: 10,
                output_dir: None,
                topology: TopologySpec::RandomGeometric { n: 101, side: 100.0, avg_degree: 10.0 },
                densities: vec![5.0, 10.0, 15.0],
                policies: vec![
                    fixed(1),
                    fixed(5),
                    fixed(10),
                    RedundancyPolicy::Adaptive { alpha: 2.0 / 3.0, k_min: 1, k_max: 10 },
                ],
                trickle: Intervals { i_min: DEFAULT_I_MIN, i_max: DEFAULT_I_MAX },
                run: RunSection { duration: DEFAULT_DURATION, warmup: None, synchronized: false },
                alphas: Vec::new(),
                root: 0,
            },
        }
    }

    /// Cross-field checks.
    fn check(&self) -> Result<(), String> {
        if !self.densities.is_empty() {
            let TopologySpec::RandomGeometric { n, .. } = self.topology else {
                return Err("densities require a random-geometric topology".into());
            };
            if let Some(d) = self.densities.iter().find(|&&d| d > (n - 1) as f64) {
                return Err(format!("density {d} exceeds n - 1 = {}", n - 1));
            }
        }
        match self.kind {
            ExperimentKind::SteadyState | ExperimentKind::Rpl if self.policies.is_empty() => {
                Err(format!("{} experiments need at least one policy", self.kind))
            }
            ExperimentKind::StarAnalysis if self.alphas.is_empty() => {
                Err("star-analysis needs at least one alpha".into())
            }
            ExperimentKind::Rpl if self.root >= self.topology.node_count() => Err(format!(
                "root {} is outside the {}-node topology",
                self.root,
                self.topology.node_count()
            )),
            _ => Ok(()),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        Self::from_json(&text)
    }

    /// SHA-256 of the canonical JSON form, ignoring the output directory.
    pub fn hash(&self) -> String {
        let canonical = ExperimentConfig { output_dir: None, ..self.clone() };
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    /// The topologies swept over, one per density.
    pub fn topologies(&self) -> Vec<TopologySpec> {
        match self.topology {
            TopologySpec::RandomGeometric { n, side, .. } if !self.densities.is_empty() => self
                .densities
                .iter()
                .map(|&avg_degree| TopologySpec::RandomGeometric { n, side, avg_degree })
                .collect(),
            spec => vec![spec],
        }
    }

    pub fn params(&self, policy: RedundancyPolicy) -> TrickleParams {
        TrickleParams { i_min: self.trickle.i_min, i_max: self.trickle.i_max, policy }
    }

    /// Simulation settings before the per-replication seed is filled in.
    pub fn base_sim(&self) -> SimConfig {
        let run = self.run;
        match self.kind {
            ExperimentKind::Rpl => SimConfig {
                duration: run.duration,
                synchronized: false,
                warmup: 0.0,
                seed: 0,
                steady_state: false,
            },
            _ => SimConfig {
                duration: run.duration,
                synchronized: run.synchronized,
                warmup: run.warmup.unwrap_or_else(|| {
                    (DEFAULT_WARMUP_INTERVALS * self.trickle.i_max).min(run.duration / 2.0)
                }),
                seed: 0,
                steady_state: true,
            },
        }
    }

    /// Seed of the replication batch for topology `index`.
    pub fn batch_seed(&self, index: usize) -> u64 {
        derive_seed(self.seed, index as u64)
    }

    /// Dry run: derived seeds and a rough event budget.
    pub fn plan(&self) -> Plan {
        let batches = match self.kind {
            ExperimentKind::StarAnalysis => Vec::new(),
            _ => self
                .topologies()
                .iter()
                .enumerate()
                .map(|(i, spec)| {
                    let batch_seed = self.batch_seed(i);
                    BatchPlan {
                        topology: topology_label(spec),
                        batch_seed,
                        replication_seeds: (0..self.replications)
                            .map(|r| derive_seed(batch_seed, r))
                            .collect(),
                    }
                })
                .collect(),
        };
        let estimated_events = match self.kind {
            ExperimentKind::StarAnalysis => self.alphas.len() as u64,
            kind => {
                let intervals = match kind {
                    ExperimentKind::Rpl => (self.run.duration / self.trickle.i_min).log2().max(1.0),
                    _ => self.run.duration / self.trickle.i_max,
                };
                let per_run: f64 = self
                    .topologies()
                    .iter()
                    .map(|spec| {
                        let n = spec.node_count() as f64;
                        n * intervals * (3.0 + expected_degree(spec))
                    })
                    .sum();
                (per_run * (self.replications * self.policies.len() as u64) as f64) as u64
            }
        };
        Plan {
            kind: self.kind,
            config_hash: self.hash(),
            policies: self.policies.iter().map(RedundancyPolicy::label).collect(),
            batches,
            estimated_events,
            outputs: outputs_for(self.kind).to_vec(),
        }
    }
}

fn expected_degree(spec: &TopologySpec) -> f64 {
    match *spec {
        TopologySpec::SingleCell { n } => (n - 1) as f64,
        TopologySpec::Star { leaves } => 2.0 * leaves as f64 / (leaves + 1) as f64,
        TopologySpec::RandomGeometric { avg_degree, .. } => avg_degree,
    }
}

fn outputs_for(kind: ExperimentKind) -> &'static [&'static str] {
    match kind {
        ExperimentKind::SteadyState => &[FIG1_FILE, FIG2_FILE, FIG3_FILE],
        ExperimentKind::StarAnalysis => &[FIGP_FILE],
        ExperimentKind::Rpl => &[RPL_FILE],
    }
}

/// Short name used in CSV rows, e.g. `rgg-n200-d5`.
pub fn topology_label(spec: &TopologySpec) -> String {
    match *spec {
        TopologySpec::SingleCell { n } => format!("cell-n{n}"),
        TopologySpec::Star { leaves } => format!("star-n{leaves}"),
        TopologySpec::RandomGeometric { n, avg_degree, .. } => {
            format!("rgg-n{n}-d{}", format_float(avg_degree))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchPlan {
    pub topology: String,
    pub batch_seed: u64,
    pub replication_seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Plan {
    pub kind: ExperimentKind,
    pub config_hash: String,
    pub policies: Vec<String>,
    pub batches: Vec<BatchPlan>,
    pub estimated_events: u64,
    pub outputs: Vec<&'static str>,
}

impl fmt::Display for Plan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "kind: {}", self.kind)?;
        writeln!(f, "config sha256: {}", self.config_hash)?;
        if !self.policies.is_empty() {
            writeln!(f, "policies: {}", self.policies.join(", "))?;
        }
        for b in &self.batches {
            writeln!(f, "{} (batch seed {}):", b.topology, b.batch_seed)?;
            for (r, s) in b.replication_seeds.iter().enumerate() {
                writeln!(f, "  replication {r}: seed {s}")?;
            }
        }
        writeln!(f, "estimated events: {}", self.estimated_events)?;
        write!(f, "outputs: {}", self.outputs.join(", "))
    }
}

/// Formats `v` with nine significant digits, trailing zeros removed, in
/// scientific notation outside `[1e-5, 1e9)`.
pub fn format_float(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let sci = format!("{:.*e}", SIGNIFICANT_DIGITS - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let decimals = (SIGNIFICANT_DIGITS as i32 - 1 - exp).max(0) as usize;
        trim_zeros(format!("{v:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_string()))
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn opt_float(v: Option<f64>) -> String {
    v.map(format_float).unwrap_or_default()
}

/// Worker count from [`THREADS_ENV`], `None` when unset.
pub fn threads_from_env() -> Result<Option<usize>, ExperimentError> {
    std::env::var(THREADS_ENV).ok().map(|v| parse_threads(&v)).transpose()
}

pub fn parse_threads(value: &str) -> Result<usize, ExperimentError> {
    match value.trim().parse::<usize>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err(ExperimentError::Threads(value.to_string())),
    }
}

/// One written table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: ExperimentKind,
    pub config_sha256: String,
    pub seed: u64,
    pub batches: Vec<ManifestBatch>,
    pub files: Vec<OutputFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestBatch {
    pub topology: String,
    pub batch_seed: u64,
    pub replication_seeds: Vec<u64>,
}

/// Writes `contents` to `dir/name` through a temporary file and a rename.
pub fn write_atomic(dir: &Path, name: &str, contents: &[u8]) -> Result<OutputFile, ExperimentError> {
    let target = dir.join(name);
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    tmp.write_all(contents).map_err(io_err(&target))?;
    tmp.as_file().sync_all().map_err(io_err(&target))?;
    tmp.persist(&target).map_err(|e| ExperimentError::Io { path: target.clone(), source: e.error })?;
    Ok(OutputFile {
        name: name.to_string(),
        sha256: hex::encode(Sha256::digest(contents)),
        bytes: contents.len() as u64,
    })
}

/// A table being assembled in memory.
struct Table {
    out: String,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        let mut t = Table { out: String::new() };
        t.row(header.iter().map(|s| s.to_string()));
        t
    }

    fn row(&mut self, cells: impl IntoIterator<Item = String>) {
        let line: Vec<String> = cells.into_iter().collect();
        writeln!(self.out, "{}", line.join(",")).expect("writing to a String");
    }
}

/// Everything a run produced, before it is written.
#[derive(Debug, Clone, PartialEq)]
pub struct Tables {
    pub files: Vec<(&'static str, String)>,
}

/// Runs the experiment and returns its tables without touching the disk.
pub fn compute_tables(
    config: &ExperimentConfig,
    threads: Option<usize>,
) -> Result<Tables, ExperimentError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| ExperimentError::Pool(e.to_string()))?;
    pool.install(|| match config.kind {
        ExperimentKind::SteadyState => steady_state_tables(config),
        ExperimentKind::StarAnalysis => star_tables(config),
        ExperimentKind::Rpl => rpl_tables(config),
    })
}

/// Runs the experiment and writes its tables and manifest into `out_dir`.
pub fn run_experiment(
    config: &ExperimentConfig,
    out_dir: &Path,
    threads: Option<usize>,
) -> Result<Manifest, ExperimentError> {
    let tables = compute_tables(config, threads)?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut files = Vec::new();
    for (name, contents) in &tables.files {
        files.push(write_atomic(out_dir, name, contents.as_bytes())?);
    }
    let plan = config.plan();
    let manifest = Manifest {
        kind: config.kind,
        config_sha256: plan.config_hash,
        seed: config.seed,
        batches: plan
            .batches
            .into_iter()
            .map(|b| ManifestBatch {
                topology: b.topology,
                batch_seed: b.batch_seed,
                replication_seeds: b.replication_seeds,
            })
            .collect(),
        files,
    };
    let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    json.push('\n');
    write_atomic(out_dir, MANIFEST_FILE, json.as_bytes())?;
    Ok(manifest)
}

struct Batch {
    label: String,
    topologies: Vec<Topology>,
    reps: Vec<Replication>,
}

fn build_batches(config: &ExperimentConfig) -> Result<Vec<Batch>, ExperimentError> {
    config
        .topologies()
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let reps = crate::sim::replications(spec, config.batch_seed(i), config.replications)?;
            Ok(Batch {
                label: topology_label(spec),
                topologies: reps.iter().map(|r| r.topology.clone()).collect(),
                reps,
            })
        })
        .collect()
}

fn steady_state_tables(config: &ExperimentConfig) -> Result<Tables, ExperimentError> {
    let batches = build_batches(config)?;
    let base = config.base_sim();
    let jobs: Vec<(usize, usize, usize)> = (0..batches.len())
        .flat_map(|b| {
            (0..config.policies.len())
                .flat_map(move |p| (0..config.replications as usize).map(move |r| (b, p, r)))
        })
        .collect();
    let stats: Vec<RunStats> = jobs
        .par_iter()
        .map(|&(b, p, r)| {
            let rep = &batches[b].reps[r];
            let mut collector = StatsCollector::new(base.warmup);
            run_with_sink(
                &rep.topology,
                &config.params(config.policies[p]),
                &rep.sim_config(&base),
                &mut collector,
            )?;
            Ok(collector.finish())
        })
        .collect::<Result<_, ExperimentError>>()?;

    let header = ["topology", "policy", "degree", "nodes", "replications"];
    let mut fig1 = Table::new(&[&header[..], &["p_broadcast", "stderr", "estimate"]].concat());
    let mut fig2 = Table::new(&[&header[..], &["p_broadcast", "stderr"]].concat());
    let mut fig3 = Table::new(&[&header[..], &["mean_k", "stderr"]].concat());
    let reps = config.replications as usize;
    for (b, batch) in batches.iter().enumerate() {
        for (p, policy) in config.policies.iter().enumerate() {
            let start = (b * config.policies.len() + p) * reps;
            let runs = &stats[start..start + reps];
            let probs = broadcast_probability_per_degree_from_stats(runs, &batch.topologies)?;
            let cells = |row: &crate::metrics::DegreeRow| {
                vec![
                    batch.label.clone(),
                    policy.label(),
                    row.degree.to_string(),
                    row.nodes.to_string(),
                    row.replications.to_string(),
                    format_float(row.mean),
                    opt_float(row.stderr),
                ]
            };
            match *policy {
                RedundancyPolicy::Fixed { k } => {
                    for row in &probs.rows {
                        let estimate =
                            crate::analysis::fixed_k_probability_estimate::<f64>(k, row.degree);
                        let mut line = cells(row);
                        line.push(format_float(estimate));
                        fig1.row(line);
                    }
                }
                RedundancyPolicy::Adaptive { .. } => {
                    emit_profile(&mut fig2, &probs, &cells);
                    let mean_k = mean_k_per_degree_from_stats(runs, &batch.topologies)?;
                    emit_profile(&mut fig3, &mean_k, &cells);
                }
            }
        }
    }
    Ok(Tables { files: vec![(FIG1_FILE, fig1.out), (FIG2_FILE, fig2.out), (FIG3_FILE, fig3.out)] })
}

fn emit_profile(
    table: &mut Table,
    profile: &DegreeProfile,
    cells: &dyn Fn(&crate::metrics::DegreeRow) -> Vec<String>,
) {
    for row in &profile.rows {
        table.row(cells(row));
    }
}

fn star_tables(config: &ExperimentConfig) -> Result<Tables, ExperimentError> {
    let mut figp = Table::new(&["alpha", "p_alpha", "p_star_alpha"]);
    for &alpha in &config.alphas {
        let p = p_alpha_series(alpha, SERIES_TOLERANCE)?;
        // at alpha = 0 the leaf probability is its limit, 1
        let p_star = if alpha == 0.0 { 1.0 } else { p_star_alpha(alpha)? };
        figp.row([format_float(alpha), format_float(p), format_float(p_star)]);
    }
    Ok(Tables { files: vec![(FIGP_FILE, figp.out)] })
}

fn rpl_tables(config: &ExperimentConfig) -> Result<Tables, ExperimentError> {
    let batches = build_batches(config)?;
    let base = config.base_sim();
    let jobs: Vec<(usize, usize, usize)> = (0..batches.len())
        .flat_map(|b| {
            (0..config.policies.len())
                .flat_map(move |p| (0..config.replications as usize).map(move |r| (b, p, r)))
        })
        .collect();
    let metrics: Vec<_> = jobs
        .par_iter()
        .map(|&(b, p, r)| {
            let rep = &batches[b].reps[r];
            let (_, m) = run_rpl(
                &rep.topology,
                config.root,
                &config.params(config.policies[p]),
                &rep.sim_config(&base),
            )?;
            Ok(m)
        })
        .collect::<Result<_, ExperimentError>>()?;

    let mut table =
        Table::new(&["config", "replication", "formation_time", "mean_dio", "stretch", "fairness"]);
    for (&(b, p, r), m) in jobs.iter().zip(&metrics) {
        table.row([
            format!("{}/{}", batches[b].label, config.policies[p].label()),
            r.to_string(),
            opt_float(m.formation_time),
            format_float(m.mean_dio),
            format_float(m.stretch),
            format_float(m.fairness),
        ]);
    }
    Ok(Tables { files: vec![(RPL_FILE, table.out)] })
}

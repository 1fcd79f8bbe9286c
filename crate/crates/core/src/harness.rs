//! Seeded experiments: model generation, single runs, Monte Carlo aggregation
//! and verification of the bounds against the recorded traces.

use std::fmt::{self, Write as _};
use std::path::PathBuf;

use nalgebra::DVector;
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{stationary_distribution, EnvConfig, MarkovRewardProcess, StationaryDistribution, TransitionSampler};
use crate::error::{Error, Result};
use crate::featmap::FeatureMap;
use crate::network::{disagreement, Adjacency, CommNetwork};
use crate::rng::{stream_rng, Stream};
use crate::tdcore::{average_params, decentralized_step_into, mean_dynamics, AgentMatrix, MeanDynamics};
use crate::theory::{consensus_bound_value, local_iid_v0, LogReal, ModelConstants, TheoryConstants};

/// Expectation bounds are checked as `mean - SE_SLACK * se <= bound`.
pub const SE_SLACK: f64 = 3.0;
/// Relative tolerance of the deterministic consensus check.
pub const CONSENSUS_RTOL: f64 = 1e-9;
/// Checkpoints as fractions of the horizon.
pub const CHECKPOINT_FRACTIONS: [f64; 7] = [0.0, 0.01, 0.05, 0.10, 0.25, 0.50, 1.0];
pub const LYAPUNOV_SAMPLES: usize = 20;
/// Agents whose individual parameters are traced for plotting.
pub const TRACED_AGENTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    Iid,
    Markov,
}

impl fmt::Display for SamplingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SamplingMode::Iid => "iid",
            SamplingMode::Markov => "markov",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    Cosine,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvironmentSection {
    pub num_states: usize,
    pub gamma: f64,
    pub r_max: f64,
}

impl Default for EnvironmentSection {
    fn default() -> Self {
        Self { num_states: 100, gamma: 0.9, r_max: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureSection {
    pub mode: FeatureMode,
    /// Length of the raw state vectors.
    pub state_dim: usize,
    /// Feature dimension `p`; identity mode uses the number of states instead.
    pub dim: usize,
}

impl Default for FeatureSection {
    fn default() -> Self {
        Self { mode: FeatureMode::Cosine, state_dim: 20, dim: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub num_agents: usize,
    pub avg_degree: f64,
    /// Optional 0/1 adjacency matrix replacing the random graph.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adjacency_file: Option<PathBuf>,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self { num_agents: 30, avg_degree: 5.0, adjacency_file: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub alpha: f64,
    pub sampling: SamplingMode,
    pub steps: u64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self { alpha: 0.01, sampling: SamplingMode::Markov, steps: 20_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub runs: usize,
    pub seed: u64,
    pub record_every: u64,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self { runs: 1, seed: 0, record_every: 1 }
    }
}

/// Full experiment description; the defaults reproduce the full-scale setup.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub environment: EnvironmentSection,
    pub features: FeatureSection,
    pub network: NetworkSection,
    pub training: TrainingSection,
    pub experiment: ExperimentSection,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.env_config().validate()?;
        let f = &self.features;
        if f.mode == FeatureMode::Cosine {
            if f.state_dim == 0 {
                return Err(Error::config("features.state_dim", "must be positive"));
            }
            if f.dim == 0 || f.dim > self.environment.num_states {
                return Err(Error::config("features.dim", "must lie in 1..=environment.num_states"));
            }
        }
        let n = &self.network;
        if n.num_agents > 1 && n.adjacency_file.is_none() && !(n.avg_degree > 0.0 && n.avg_degree <= (n.num_agents - 1) as f64) {
            return Err(Error::config("network.avg_degree", "must lie in (0, num_agents - 1]"));
        }
        let t = &self.training;
        if !(t.alpha >= 0.0 && t.alpha.is_finite()) {
            return Err(Error::config("training.alpha", "must be a nonnegative finite number"));
        }
        if t.steps == 0 {
            return Err(Error::config("training.steps", "must be positive"));
        }
        if self.experiment.runs == 0 {
            return Err(Error::config("experiment.runs", "must be positive"));
        }
        if self.experiment.record_every == 0 {
            return Err(Error::config("experiment.record_every", "must be positive"));
        }
        Ok(())
    }

    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            num_states: self.environment.num_states,
            num_agents: self.network.num_agents,
            r_max: self.environment.r_max,
            gamma: self.environment.gamma,
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self.features.mode {
            FeatureMode::Cosine => self.features.dim,
            FeatureMode::Identity => self.environment.num_states,
        }
    }

    /// Recorded step indices: 0, every `record_every` steps, and the last step.
    pub fn recorded_steps(&self) -> Vec<u64> {
        let every = self.experiment.record_every;
        let last = self.training.steps;
        let mut ks: Vec<u64> = (0..=last).step_by(every as usize).collect();
        if *ks.last().unwrap() != last {
            ks.push(last);
        }
        ks
    }
}

/// Generated environment, features, network and the constants derived from them.
#[derive(Debug, Clone)]
pub struct Model {
    pub mrp: MarkovRewardProcess,
    pub features: FeatureMap,
    pub network: CommNetwork,
    pub stationary: StationaryDistribution,
    pub mean: MeanDynamics,
    pub model_constants: ModelConstants,
    /// Constants at the configured step size.
    pub constants: TheoryConstants,
}

impl Model {
    /// Draws every model component from the experiment seed, each from its own stream.
    pub fn generate(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let seed = cfg.experiment.seed;
        let mrp = MarkovRewardProcess::generate(&cfg.env_config(), &mut stream_rng(seed, Stream::Environment))?;
        let features = match cfg.features.mode {
            FeatureMode::Cosine => FeatureMap::cosine(
                cfg.environment.num_states,
                cfg.features.state_dim,
                cfg.features.dim,
                &mut stream_rng(seed, Stream::Features),
            )?,
            FeatureMode::Identity => FeatureMap::identity(cfg.environment.num_states)?,
        };
        let network = match &cfg.network.adjacency_file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::config("network.adjacency_file", format!("{}: {e}", path.display())))?;
                let adj = Adjacency::parse(&text)?;
                if adj.num_agents() != cfg.network.num_agents {
                    return Err(Error::DimMismatch { expected: cfg.network.num_agents, got: adj.num_agents() });
                }
                CommNetwork::new(adj)?
            }
            None => CommNetwork::generate(cfg.network.num_agents, cfg.network.avg_degree, &mut stream_rng(seed, Stream::Network))?,
        };
        Self::from_parts(mrp, features, network, cfg.training.alpha)
    }

    pub fn from_parts(mrp: MarkovRewardProcess, features: FeatureMap, network: CommNetwork, alpha: f64) -> Result<Self> {
        if network.num_agents() != mrp.num_agents() {
            return Err(Error::DimMismatch { expected: mrp.num_agents(), got: network.num_agents() });
        }
        let stationary = stationary_distribution(&mrp)?;
        let mean = mean_dynamics(&mrp, &features, &stationary)?;
        let model_constants = ModelConstants::compute(&mrp, &features, &network, &mean)?;
        let constants = TheoryConstants::compute(model_constants, alpha)?;
        Ok(Self { mrp, features, network, stationary, mean, model_constants, constants })
    }

    /// Constants at another step size on the same model.
    pub fn constants_at(&self, alpha: f64) -> Result<TheoryConstants> {
        TheoryConstants::compute(self.model_constants, alpha)
    }
}

/// Metrics at one recorded step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRecord {
    pub k: u64,
    pub disagreement_fro: f64,
    pub avg_err_sq: f64,
    pub max_local_err_sq: f64,
}

/// Parameter magnitudes at one recorded step, for plotting.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTrace {
    pub k: u64,
    pub avg_norm: f64,
    /// `||theta_m||` for the first few agents.
    pub agent_norms: Vec<f64>,
    /// `|theta_{m,1}|` for the same agents.
    pub agent_first: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentLog {
    pub seed: u64,
    pub snapshot_id: String,
    pub records: Vec<LogRecord>,
    pub trace: Vec<ParamTrace>,
    /// Parameters of every agent after the last step.
    pub final_theta: AgentMatrix,
}

pub const LOG_CSV_HEADER: &str = "k,disagreement_fro,avg_err_sq,max_local_err_sq";
pub const AGGREGATE_CSV_HEADER: &str = "k,mean_avg_err_sq,se_avg_err_sq,mean_max_local_err_sq,se_max_local_err_sq";

impl ExperimentLog {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{LOG_CSV_HEADER}\n");
        for r in &self.records {
            writeln!(out, "{},{},{},{}", r.k, r.disagreement_fro, r.avg_err_sq, r.max_local_err_sq).unwrap();
        }
        out
    }

    /// Trace columns `k,avg_norm,norm_1..norm_m,first_1..first_m`.
    pub fn trace_csv(&self) -> String {
        let m = self.trace.first().map_or(0, |t| t.agent_norms.len());
        let mut out = String::from("k,avg_norm");
        for i in 1..=m {
            write!(out, ",norm_{i}").unwrap();
        }
        for i in 1..=m {
            write!(out, ",first_{i}").unwrap();
        }
        out.push('\n');
        for t in &self.trace {
            write!(out, "{},{}", t.k, t.avg_norm).unwrap();
            for x in t.agent_norms.iter().chain(&t.agent_first) {
                write!(out, ",{x}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

fn record(k: u64, theta: &AgentMatrix, theta_star: &DVector<f64>) -> (LogRecord, ParamTrace) {
    let avg = average_params(theta);
    let max_local_err_sq = (0..theta.num_agents())
        .map(|m| (theta.row(m) - theta_star).norm_squared())
        .fold(0.0, f64::max);
    let traced = theta.num_agents().min(TRACED_AGENTS);
    let rec = LogRecord {
        k,
        disagreement_fro: disagreement(theta),
        avg_err_sq: (&avg - theta_star).norm_squared(),
        max_local_err_sq,
    };
    let trace = ParamTrace {
        k,
        avg_norm: avg.norm(),
        agent_norms: (0..traced).map(|m| theta.row(m).norm()).collect(),
        agent_first: (0..traced).map(|m| theta.as_matrix()[(m, 0)].abs()).collect(),
    };
    (rec, trace)
}

/// One seeded run of the decentralized algorithm.
///
/// All agents share the sampled transition of each step and differ only in
/// their rewards. `Theta(0)` rows are uniform on `[-1, 1]^p`; in Markov mode the
/// chain starts from a uniformly drawn state.
pub fn run_single(cfg: &RunConfig, model: &Model, seed: u64) -> Result<ExperimentLog> {
    let mut rng = stream_rng(seed, Stream::Run);
    let m_count = model.mrp.num_agents();
    let p = model.features.dim();
    let n = model.mrp.num_states();
    let gamma = model.mrp.gamma();
    let alpha = cfg.training.alpha;
    let w = model.network.weights();
    let theta_star = &model.mean.theta_star;
    let sampler = TransitionSampler::new(&model.mrp, &model.stationary)?;

    let mut theta = AgentMatrix::uniform(m_count, p, &mut rng);
    let mut next = AgentMatrix::zeros(m_count, p);
    let mut state = match cfg.training.sampling {
        SamplingMode::Markov => rand::Rng::random_range(&mut rng, 0..n),
        SamplingMode::Iid => 0,
    };

    let steps = cfg.training.steps;
    let every = cfg.experiment.record_every;
    let capacity = (steps / every + 2) as usize;
    let mut records = Vec::with_capacity(capacity);
    let mut trace = Vec::with_capacity(capacity);
    let (r, t) = record(0, &theta, theta_star);
    records.push(r);
    trace.push(t);

    for k in 1..=steps {
        let sample = match cfg.training.sampling {
            SamplingMode::Iid => sampler.sample_iid(&mut rng),
            SamplingMode::Markov => {
                let x = sampler.step_markov(state, &mut rng)?;
                state = x.s_next;
                x
            }
        };
        decentralized_step_into(&theta, w, &sample, &model.features, gamma, alpha, &mut next).map_err(|e| match e {
            Error::Diverged { .. } => Error::Diverged { step: k as usize },
            other => other,
        })?;
        std::mem::swap(&mut theta, &mut next);
        if k % every == 0 || k == steps {
            let (r, t) = record(k, &theta, theta_star);
            records.push(r);
            trace.push(t);
        }
    }
    Ok(ExperimentLog { seed, snapshot_id: model.constants.fingerprint(), records, trace, final_theta: theta })
}

/// Pointwise statistics over runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateRecord {
    pub k: u64,
    pub mean_avg_err_sq: f64,
    pub se_avg_err_sq: f64,
    pub mean_max_local_err_sq: f64,
    pub se_max_local_err_sq: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateStats {
    pub n_runs: usize,
    pub records: Vec<AggregateRecord>,
}

impl AggregateStats {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{AGGREGATE_CSV_HEADER}\n");
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.k, r.mean_avg_err_sq, r.se_avg_err_sq, r.mean_max_local_err_sq, r.se_max_local_err_sq
            )
            .unwrap();
        }
        out
    }

    pub fn at(&self, k: u64) -> Option<&AggregateRecord> {
        self.records.binary_search_by_key(&k, |r| r.k).ok().map(|i| &self.records[i])
    }
}

/// Pairwise (cascade) summation.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Sample mean and standard error (`n - 1` denominator; zero for one sample).
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = pairwise_sum(xs) / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&sq) / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn aggregate(logs: &[ExperimentLog]) -> AggregateStats {
    assert!(!logs.is_empty(), "aggregate needs at least one log");
    let len = logs[0].records.len();
    let records = (0..len)
        .map(|i| {
            let avg: Vec<f64> = logs.iter().map(|l| l.records[i].avg_err_sq).collect();
            let max: Vec<f64> = logs.iter().map(|l| l.records[i].max_local_err_sq).collect();
            let (mean_avg_err_sq, se_avg_err_sq) = mean_and_se(&avg);
            let (mean_max_local_err_sq, se_max_local_err_sq) = mean_and_se(&max);
            AggregateRecord { k: logs[0].records[i].k, mean_avg_err_sq, se_avg_err_sq, mean_max_local_err_sq, se_max_local_err_sq }
        })
        .collect();
    AggregateStats { n_runs: logs.len(), records }
}

/// Logs of every run plus their pointwise aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarlo {
    pub stats: AggregateStats,
    pub logs: Vec<ExperimentLog>,
}

fn collect_runs(results: Vec<Result<ExperimentLog>>) -> Result<MonteCarlo> {
    let logs = results
        .into_iter()
        .enumerate()
        .map(|(run, r)| r.map_err(|e| Error::RunFailed { run, source: Box::new(e) }))
        .collect::<Result<Vec<_>>>()?;
    Ok(MonteCarlo { stats: aggregate(&logs), logs })
}

fn check_runs(n_runs: usize) -> Result<()> {
    if n_runs == 0 {
        return Err(Error::config("experiment.runs", "must be positive"));
    }
    Ok(())
}

/// Runs with seeds `seed, seed + 1, ...` one after another.
pub fn monte_carlo_sequential(cfg: &RunConfig, model: &Model, n_runs: usize) -> Result<MonteCarlo> {
    check_runs(n_runs)?;
    let base = cfg.experiment.seed;
    collect_runs((0..n_runs).map(|i| run_single(cfg, model, base.wrapping_add(i as u64))).collect())
}

/// Same as [`monte_carlo_sequential`], spreading runs over the rayon pool.
#[cfg(feature = "parallel")]
pub fn monte_carlo_parallel(cfg: &RunConfig, model: &Model, n_runs: usize) -> Result<MonteCarlo> {
    check_runs(n_runs)?;
    let base = cfg.experiment.seed;
    collect_runs((0..n_runs).into_par_iter().map(|i| run_single(cfg, model, base.wrapping_add(i as u64))).collect())
}

/// Monte Carlo over `n_runs` seeds; parallel when the `parallel` feature is on.
pub fn monte_carlo(cfg: &RunConfig, model: &Model, n_runs: usize) -> Result<MonteCarlo> {
    #[cfg(feature = "parallel")]
    return monte_carlo_parallel(cfg, model, n_runs);
    #[cfg(not(feature = "parallel"))]
    return monte_carlo_sequential(cfg, model, n_runs);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundKind {
    /// Network disagreement, deterministic per run and step.
    Consensus,
    /// Averaged estimate under i.i.d. sampling.
    Iid,
    /// Every local estimate under i.i.d. sampling.
    IidLocal,
    /// Averaged estimate under Markov sampling.
    Markov,
    /// Every local estimate under Markov sampling.
    MarkovLocal,
    /// Multi-step Lyapunov function, deterministic per run.
    Lyapunov,
}

impl BoundKind {
    pub fn name(self) -> &'static str {
        match self {
            BoundKind::Consensus => "consensus",
            BoundKind::Iid => "iid_average",
            BoundKind::IidLocal => "iid_local",
            BoundKind::Markov => "markov_average",
            BoundKind::MarkovLocal => "markov_local",
            BoundKind::Lyapunov => "lyapunov",
        }
    }
}

/// One comparison of an empirical quantity with a bound.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundLine {
    pub kind: BoundKind,
    pub k: u64,
    pub run: Option<usize>,
    /// Mean (expectation bounds) or per-run value (deterministic bounds).
    pub empirical: f64,
    /// Standard error of `empirical`; zero for deterministic checks.
    pub se: f64,
    /// `None` when the constants could not be computed.
    pub bound: Option<LogReal>,
    pub pass: bool,
    /// Violated hypotheses; flagged lines do not decide the verdict.
    pub flags: Vec<&'static str>,
}

impl BoundLine {
    fn new(kind: BoundKind, k: u64, run: Option<usize>, empirical: f64, se: f64, bound: Option<LogReal>, flags: Vec<&'static str>) -> Self {
        let pass = bound.is_some_and(|b| LogReal::new((empirical - SE_SLACK * se).max(0.0)) <= b);
        Self { kind, k, run, empirical, se, bound, pass, flags }
    }

    /// `bound - (empirical - 3 se)`, infinite when the bound leaves the `f64` range.
    pub fn slack(&self) -> f64 {
        self.bound.map_or(f64::NAN, |b| b.value() - (self.empirical - SE_SLACK * self.se))
    }

    pub fn is_hard_failure(&self) -> bool {
        !self.pass && self.flags.is_empty()
    }
}

pub const FLAG_CONSENSUS_WINDOW: &str = "hypothesis violated: alpha > (1 - lambda2) / 4";
pub const FLAG_LAMBDA2: &str = "hypothesis approximate: lambda2 is not the contraction factor of W";
pub const FLAG_IID_WINDOW: &str = "hypothesis violated: alpha above the iid step-size window";
pub const FLAG_MARKOV_WINDOW: &str = "hypothesis violated: alpha not below the Markov step-size window";
pub const FLAG_NO_MARKOV: &str = "constants unavailable: no bias-averaging horizon below the search cap";

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub alpha: f64,
    pub sampling: SamplingMode,
    pub n_runs: usize,
    pub snapshot_id: String,
    pub lines: Vec<BoundLine>,
    /// Per-run, per-step consensus violations (over every recorded step).
    pub consensus_step_checks: usize,
    pub consensus_step_violations: usize,
    pub consensus_flags: Vec<&'static str>,
}

impl BoundReport {
    pub fn passed(&self) -> bool {
        let steps_ok = self.consensus_step_violations == 0 || !self.consensus_flags.is_empty();
        steps_ok && !self.lines.iter().any(BoundLine::is_hard_failure)
    }

    pub fn hard_failures(&self) -> impl Iterator<Item = &BoundLine> {
        self.lines.iter().filter(|l| l.is_hard_failure())
    }

    pub fn lines_of(&self, kind: BoundKind) -> impl Iterator<Item = &BoundLine> {
        self.lines.iter().filter(move |l| l.kind == kind)
    }

    /// One `key=value` record per line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "record=summary alpha={:e} sampling={} runs={} snapshot={} passed={}",
            self.alpha,
            self.sampling,
            self.n_runs,
            self.snapshot_id,
            self.passed()
        )
        .unwrap();
        writeln!(
            out,
            "record=consensus_steps checked={} violations={} flags={}",
            self.consensus_step_checks,
            self.consensus_step_violations,
            render_flags(&self.consensus_flags)
        )
        .unwrap();
        for l in &self.lines {
            writeln!(out, "{}", render_line(l)).unwrap();
        }
        out
    }
}

pub fn render_line(l: &BoundLine) -> String {
    format!(
        "record=bound bound={} k={} run={} empirical={:e} se={:e} value={} pass={} slack={:e} flags={}",
        l.kind.name(),
        l.k,
        l.run.map_or("-".to_string(), |r| r.to_string()),
        l.empirical,
        l.se,
        l.bound.map_or("-".to_string(), |b| b.to_string()),
        l.pass,
        l.slack(),
        render_flags(&l.flags)
    )
}

fn render_flags(flags: &[&str]) -> String {
    if flags.is_empty() {
        "-".into()
    } else {
        format!("\"{}\"", flags.join("; "))
    }
}

/// Recorded steps closest to (at or below) each checkpoint fraction.
pub fn checkpoints(recorded: &[u64], steps: u64) -> Vec<u64> {
    let mut out: Vec<u64> = CHECKPOINT_FRACTIONS
        .iter()
        .map(|f| {
            let target = (f * steps as f64).round() as u64;
            let i = recorded.partition_point(|&k| k <= target);
            recorded[i.saturating_sub(1)]
        })
        .collect();
    out.dedup();
    out
}

/// Compares every applicable bound with the traces of a Monte Carlo experiment.
pub fn verify_bounds(mc: &MonteCarlo, tc: &TheoryConstants, cfg: &RunConfig) -> Result<BoundReport> {
    let alpha = cfg.training.alpha;
    if tc.alpha != alpha {
        return Err(Error::ConstantsMismatch(format!("constants computed for alpha {} but the run used {alpha}", tc.alpha)));
    }
    let snapshot_id = tc.fingerprint();
    if let Some(log) = mc.logs.iter().find(|l| l.snapshot_id != snapshot_id) {
        return Err(Error::ConstantsMismatch(format!("run with seed {} has snapshot {}, expected {snapshot_id}", log.seed, log.snapshot_id)));
    }
    let model = &tc.model;
    let stats = &mc.stats;
    let recorded: Vec<u64> = stats.records.iter().map(|r| r.k).collect();
    let checks = checkpoints(&recorded, cfg.training.steps);
    let record_index = |k: u64| recorded.binary_search(&k).expect("checkpoint is a recorded step");

    let mut consensus_flags = Vec::new();
    if !tc.consensus_within_window() {
        consensus_flags.push(FLAG_CONSENSUS_WINDOW);
    }
    if !model.lambda2_is_contraction() {
        consensus_flags.push(FLAG_LAMBDA2);
    }

    // Consensus: every run, every recorded step.
    let consensus_bound = |log: &ExperimentLog, k: u64| {
        consensus_bound_value(k, log.records[0].disagreement_fro, model.lambda2_w, alpha, model.num_agents, model.r_max)
    };
    let mut consensus_step_checks = 0;
    let mut consensus_step_violations = 0;
    for log in &mc.logs {
        for r in &log.records {
            consensus_step_checks += 1;
            if r.disagreement_fro > consensus_bound(log, r.k) * (1.0 + CONSENSUS_RTOL) {
                consensus_step_violations += 1;
            }
        }
    }
    let mut lines = Vec::new();
    for &k in &checks {
        let i = record_index(k);
        // Report the run closest to its bound.
        let (run, log) = mc
            .logs
            .iter()
            .enumerate()
            .max_by(|a, b| {
                let ratio = |l: &ExperimentLog| l.records[i].disagreement_fro / consensus_bound(l, k);
                ratio(a.1).total_cmp(&ratio(b.1))
            })
            .unwrap();
        let bound = consensus_bound(log, k) * (1.0 + CONSENSUS_RTOL);
        lines.push(BoundLine::new(
            BoundKind::Consensus,
            k,
            Some(run),
            log.records[i].disagreement_fro,
            0.0,
            Some(LogReal::new(bound)),
            consensus_flags.clone(),
        ));
    }

    let n = mc.logs.len() as f64;
    let err0 = stats.records[0].mean_avg_err_sq;
    match cfg.training.sampling {
        SamplingMode::Iid => {
            let iid_flags: Vec<&str> = if tc.iid.within_window() { vec![] } else { vec![FLAG_IID_WINDOW] };
            let mut local_flags = iid_flags.clone();
            local_flags.extend(consensus_flags.iter().copied());
            if alpha >= tc.iid_local.alpha_max && !local_flags.contains(&FLAG_IID_WINDOW) && tc.consensus_within_window() {
                local_flags.push(FLAG_IID_WINDOW);
            }
            // The bound is linear in V0, so the run average of V0 bounds the mean.
            let v0 = pairwise_sum(
                &mc.logs.iter().map(|l| local_iid_v0(l.records[0].disagreement_fro, l.records[0].avg_err_sq)).collect::<Vec<_>>(),
            ) / n;
            for &k in &checks {
                let r = &stats.records[record_index(k)];
                lines.push(BoundLine::new(BoundKind::Iid, k, None, r.mean_avg_err_sq, r.se_avg_err_sq, Some(LogReal::new(tc.iid.bound(k, err0))), iid_flags.clone()));
                lines.push(BoundLine::new(
                    BoundKind::IidLocal,
                    k,
                    None,
                    r.mean_max_local_err_sq,
                    r.se_max_local_err_sq,
                    Some(LogReal::new(tc.iid_local.bound(k, v0, alpha))),
                    local_flags.clone(),
                ));
            }
        }
        SamplingMode::Markov => match &tc.markov {
            Ok(m) => {
                let markov_flags: Vec<&str> = if m.within_window() { vec![] } else { vec![FLAG_MARKOV_WINDOW] };
                let mut local_flags = markov_flags.clone();
                local_flags.extend(consensus_flags.iter().copied());
                let v0 = mc
                    .logs
                    .iter()
                    .map(|l| m.v0_prime(l.records[0].disagreement_fro, l.records[0].avg_err_sq))
                    .fold(LogReal::ZERO, |a, b| a + b)
                    / LogReal::new(n);
                for &k in &checks {
                    let r = &stats.records[record_index(k)];
                    lines.push(BoundLine::new(BoundKind::Markov, k, None, r.mean_avg_err_sq, r.se_avg_err_sq, Some(m.bound(k, err0)), markov_flags.clone()));
                    lines.push(BoundLine::new(
                        BoundKind::MarkovLocal,
                        k,
                        None,
                        r.mean_max_local_err_sq,
                        r.se_max_local_err_sq,
                        Some(m.local_markov_bound(k, v0)),
                        local_flags.clone(),
                    ));
                }
            }
            Err(_) => {
                for &k in &checks {
                    let r = &stats.records[record_index(k)];
                    lines.push(BoundLine::new(BoundKind::Markov, k, None, r.mean_avg_err_sq, r.se_avg_err_sq, None, vec![FLAG_NO_MARKOV]));
                }
            }
        },
    }

    lines.extend(lyapunov_lines(mc, tc, cfg));
    Ok(BoundReport {
        alpha,
        sampling: cfg.training.sampling,
        n_runs: mc.logs.len(),
        snapshot_id,
        lines,
        consensus_step_checks,
        consensus_step_violations,
        consensus_flags,
    })
}

/// Starting steps at which the multi-step Lyapunov inequality is checked.
pub fn lyapunov_sample_steps(steps: u64, horizon: u64) -> Vec<u64> {
    if horizon > steps + 1 {
        return Vec::new();
    }
    let last = steps + 1 - horizon;
    let mut ks: Vec<u64> = (0..LYAPUNOV_SAMPLES as u64).map(|i| i * last / (LYAPUNOV_SAMPLES as u64 - 1)).collect();
    ks.dedup();
    ks
}

/// Lyapunov lines need every step recorded and at least `K_G` steps; otherwise none are emitted.
fn lyapunov_lines(mc: &MonteCarlo, tc: &TheoryConstants, cfg: &RunConfig) -> Vec<BoundLine> {
    let Ok(m) = &tc.markov else { return Vec::new() };
    if cfg.experiment.record_every != 1 {
        return Vec::new();
    }
    let flags: Vec<&str> = if m.within_window() { vec![] } else { vec![FLAG_MARKOV_WINDOW] };
    let horizon = m.k_g as usize;
    let mut lines = Vec::new();
    for (run, log) in mc.logs.iter().enumerate() {
        let errs: Vec<f64> = log.records.iter().map(|r| r.avg_err_sq).collect();
        // prefix[j] = sum of errs[..j]
        let mut prefix = Vec::with_capacity(errs.len() + 1);
        prefix.push(0.0);
        for e in &errs {
            prefix.push(prefix.last().unwrap() + e);
        }
        for k in lyapunov_sample_steps(cfg.training.steps, m.k_g) {
            let k_us = k as usize;
            let v = prefix[k_us + horizon] - prefix[k_us];
            lines.push(BoundLine::new(BoundKind::Lyapunov, k, Some(run), v, 0.0, Some(m.lyapunov_bound(errs[k_us])), flags.clone()));
        }
    }
    lines
}

/// Mean and standard error over runs of each run's average `avg_err_sq` across the last 10% of steps.
pub fn plateau(logs: &[ExperimentLog], steps: u64) -> (f64, f64) {
    let start = (0.9 * steps as f64).ceil() as u64;
    let per_run: Vec<f64> = logs
        .iter()
        .map(|l| {
            let tail: Vec<f64> = l.records.iter().filter(|r| r.k >= start).map(|r| r.avg_err_sq).collect();
            pairwise_sum(&tail) / tail.len() as f64
        })
        .collect();
    mean_and_se(&per_run)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub alpha: f64,
    pub plateau: Result<(f64, f64)>,
}

/// Plateau of the averaged error at each step size, same model and seeds.
pub fn sweep(cfg: &RunConfig, model: &Model, alphas: &[f64]) -> Result<Vec<SweepRow>> {
    if alphas.len() < 2 {
        return Err(Error::config("alphas", "need at least two step sizes"));
    }
    let mut rows = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let mut c = cfg.clone();
        c.training.alpha = alpha;
        let outcome = c.validate().and_then(|_| {
            let mut m = model.clone();
            m.constants = model.constants_at(alpha)?;
            let mc = monte_carlo(&c, &m, c.experiment.runs)?;
            Ok(plateau(&mc.logs, c.training.steps))
        });
        if let Err(e) = &outcome {
            log::warn!("sweep at alpha {alpha:e} failed: {e}");
        }
        rows.push(SweepRow { alpha, plateau: outcome });
    }
    Ok(rows)
}

pub const SWEEP_CSV_HEADER: &str = "alpha,plateau_mean,plateau_se";

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_CSV_HEADER}\n");
    for r in rows {
        match &r.plateau {
            Ok((mean, se)) => writeln!(out, "{},{mean},{se}", r.alpha).unwrap(),
            Err(_) => writeln!(out, "{},NaN,NaN", r.alpha).unwrap(),
        }
    }
    out
}

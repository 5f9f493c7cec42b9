//! Seeded experiment runner: an env, an algorithm and a grid of κ values and
//! seeds, each `(κ, seed)` cell trained independently and written to its
//! own metrics CSV, plus a summary and, for enumerable envs, a bound report.
//!
//! Output layout:
//!
//! ```text
//! out/spec.json                 resolved spec
//! out/metrics_k{κ}_s{seed}.csv  one per cell, written when the cell ends
//! out/cell_k{κ}_s{seed}.ckpt    learner state + rows of an unfinished cell
//! out/summary.json              final return mean ± std per κ
//! out/bounds.json               chain env only
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::deep::{DeepLearner, NetConfig};
use crate::envs::chain::{ChainEnv, ChainEnvConfig};
use crate::envs::pandemic::{BangBang, PandemicEnv, PandemicEnvConfig};
use crate::envs::uav::{UavEnv, UavEnvConfig};
use crate::graph_mdp::{run_episode, EnvError, Enumerable, Featurized, GraphMdpEnv, Trajectory};
use crate::metrics::{read_metrics, write_atomic, write_metrics, MetricsError, MetricsRow, Phase};
use crate::oracle::{bound_report, build_explicit, BoundReport, OracleError, SoftmaxParams, DEFAULT_CAP};
use crate::rng::{sample_index, Purpose, StreamRng};
use crate::stats::{mean, std_dev};
use crate::tabular::{TabularLearner, TabularState};
use crate::train::{EpisodeMetrics, StepSchedule, TrainConfig, TrainError};

/// Default output directory when neither the command line nor the spec sets one.
pub const OUT_DIR_ENV: &str = "DGRM_OUT_DIR";

/// Slack allowed on bound margins for floating-point noise.
pub const BOUND_SLACK: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ExperimentError {
    /// Bad spec or config; the caller's input is at fault.
    #[error("invalid spec: {0}")]
    Spec(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("audit failed: {0}")]
    Audit(String),
    #[error("{0} bound violations")]
    BoundViolation(usize),
}

impl ExperimentError {
    pub fn is_usage(&self) -> bool {
        matches!(self, ExperimentError::Spec(_) | ExperimentError::Env(EnvError::Config(_)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvId {
    Uav,
    Pandemic,
    Chain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSpec {
    pub id: EnvId,
    /// Inline config; fields left out take their defaults.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
    /// Config file, relative to the spec file. Mutually exclusive with `config`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Tabular,
    Deep,
    BaselineBangBang,
    Random,
}

fn default_kappas() -> Vec<usize> {
    vec![0]
}
fn default_eval_episodes() -> usize {
    10
}
fn default_gamma() -> f64 {
    0.9
}
fn default_checkpoint_every() -> usize {
    50
}
fn default_true() -> bool {
    true
}
fn default_bound_policies() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub env: EnvSpec,
    pub algorithm: Algorithm,
    #[serde(default = "default_kappas")]
    pub kappas: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Training episodes per cell; ignored by the baselines.
    #[serde(default)]
    pub episodes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
    /// Also evaluate at episode 0 and every this many episodes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_every: Option<usize>,
    #[serde(default)]
    pub greedy_eval: bool,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Episode cap; defaults per env.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_q: Option<StepSchedule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_pi: Option<StepSchedule>,
    #[serde(default)]
    pub net: NetConfig,
    /// Episodes between checkpoints of an unfinished cell; 0 disables.
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
    /// When false `wall_ms` is written as 0 so reruns are byte-identical.
    #[serde(default = "default_true")]
    pub record_wall_time: bool,
    /// Random softmax policies checked per bound report.
    #[serde(default = "default_bound_policies")]
    pub bound_policies: usize,
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        serde_json::from_str(text).map_err(|e| ExperimentError::Spec(e.to_string()))
    }

    /// Reads a spec and inlines its env config file, if any.
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ExperimentError::Spec(format!("cannot read {}: {e}", path.display())))?;
        let mut spec = Self::from_json(&text)?;
        if let Some(rel) = spec.env.config_path.take() {
            if spec.env.config.is_some() {
                return Err(ExperimentError::Spec("env has both config and config_path".into()));
            }
            let file = path.parent().unwrap_or(Path::new(".")).join(rel);
            let text = fs::read_to_string(&file)
                .map_err(|e| ExperimentError::Spec(format!("cannot read {}: {e}", file.display())))?;
            let value = serde_json::from_str(&text)
                .map_err(|e| ExperimentError::Spec(format!("{}: {e}", file.display())))?;
            spec.env.config = Some(value);
        }
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::Spec(m.into()));
        if self.seeds.is_empty() {
            return bad("seeds must not be empty");
        }
        if self.kappas.is_empty() {
            return bad("kappas must not be empty");
        }
        if self.eval_episodes == 0 {
            return bad("eval_episodes must be at least 1");
        }
        if self.eval_every == Some(0) {
            return bad("eval_every must be positive");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if self.horizon == Some(0) {
            return bad("horizon must be positive");
        }
        if self.env.config_path.is_some() {
            return bad("config_path must be resolved with ExperimentSpec::load");
        }
        match (self.env.id, self.algorithm) {
            (EnvId::Pandemic, Algorithm::Tabular) => {
                bad("pandemic states are continuous; use the deep algorithm")
            }
            (EnvId::Uav | EnvId::Chain, Algorithm::BaselineBangBang) => {
                bad("the bang-bang baseline only applies to the pandemic env")
            }
            _ => Ok(()),
        }
    }

    fn train_config(&self, kappa: usize, seed: u64, horizon: usize) -> TrainConfig {
        let mut cfg = TrainConfig::new(kappa, self.gamma, horizon, self.episodes, seed);
        if let Some(a) = self.alpha_q {
            cfg.alpha_q = a;
        }
        if let Some(a) = self.alpha_pi {
            cfg.alpha_pi = a;
        }
        cfg
    }
}

/// A constructed environment.
#[derive(Debug, Clone)]
pub enum BuiltEnv {
    Uav(UavEnv),
    Pandemic(PandemicEnv),
    Chain(ChainEnv),
}

fn parse_config<T: serde::de::DeserializeOwned + Default>(v: &Option<serde_json::Value>) -> Result<T, ExperimentError> {
    match v {
        None => Ok(T::default()),
        Some(v) => serde_json::from_value(v.clone()).map_err(|e| ExperimentError::Spec(format!("env config: {e}"))),
    }
}

impl BuiltEnv {
    pub fn build(spec: &EnvSpec) -> Result<Self, ExperimentError> {
        Ok(match spec.id {
            EnvId::Uav => BuiltEnv::Uav(UavEnv::new(parse_config::<UavEnvConfig>(&spec.config)?)?),
            EnvId::Pandemic => BuiltEnv::Pandemic(PandemicEnv::new(parse_config::<PandemicEnvConfig>(&spec.config)?)?),
            EnvId::Chain => BuiltEnv::Chain(parse_config::<ChainEnvConfig>(&spec.config)?.build()?),
        })
    }

    pub fn default_horizon(&self) -> usize {
        match self {
            BuiltEnv::Uav(_) => 40,
            BuiltEnv::Pandemic(e) => e.config().horizon as usize,
            BuiltEnv::Chain(_) => 20,
        }
    }

    pub fn num_agents(&self) -> usize {
        match self {
            BuiltEnv::Uav(e) => e.num_agents(),
            BuiltEnv::Pandemic(e) => e.num_agents(),
            BuiltEnv::Chain(e) => e.num_agents(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaSummary {
    pub kappa: usize,
    pub seeds: Vec<u64>,
    /// Last evaluation return of each seed, aligned with `seeds`.
    pub final_returns: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// Per-agent final discounted return, averaged over seeds.
    pub agent_means: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub env: EnvId,
    pub algorithm: Algorithm,
    pub gamma: f64,
    pub episodes: usize,
    pub eval_episodes: usize,
    pub kappas: Vec<KappaSummary>,
}

impl Summary {
    pub fn kappa(&self, kappa: usize) -> Option<&KappaSummary> {
        self.kappas.iter().find(|k| k.kappa == kappa)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyBounds {
    /// Seed of the random softmax parameters.
    pub policy_seed: u64,
    pub report: BoundReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsOutcome {
    pub policies: Vec<PolicyBounds>,
    pub violations: usize,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub workers: Option<usize>,
    pub resume: bool,
    pub audit: bool,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub summary: Summary,
    pub cells: usize,
    /// Cells skipped because a finished metrics file was already present.
    pub reused: usize,
    pub bounds: Option<BoundsOutcome>,
}

/// `--out` wins over the spec's `out_dir`, which wins over [`OUT_DIR_ENV`].
pub fn resolve_out_dir(cli: Option<PathBuf>, spec: &ExperimentSpec) -> Result<PathBuf, ExperimentError> {
    cli.or_else(|| spec.out_dir.clone())
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .ok_or_else(|| ExperimentError::Spec(format!("no output directory: pass --out, set out_dir or {OUT_DIR_ENV}")))
}

pub fn metrics_path(dir: &Path, kappa: usize, seed: u64) -> PathBuf {
    dir.join(format!("metrics_k{kappa}_s{seed}.csv"))
}

fn checkpoint_path(dir: &Path, kappa: usize, seed: u64) -> PathBuf {
    dir.join(format!("cell_k{kappa}_s{seed}.ckpt"))
}

#[derive(Serialize, Deserialize)]
struct CellCheckpoint {
    learner: String,
    rows: Vec<MetricsRow>,
}

struct Cell<'a> {
    spec: &'a ExperimentSpec,
    dir: &'a Path,
    kappa: usize,
    seed: u64,
    horizon: usize,
}

impl Cell<'_> {
    fn row(&self, phase: Phase, episode: usize, global: f64, agents: Vec<f64>, wall_ms: u64) -> MetricsRow {
        MetricsRow {
            seed: self.seed,
            kappa: self.kappa,
            phase,
            episode,
            global_return: global,
            agent_returns: agents,
            wall_ms: if self.spec.record_wall_time { wall_ms } else { 0 },
        }
    }

    fn is_eval_point(&self, done: usize) -> bool {
        done == self.spec.episodes || self.spec.eval_every.is_some_and(|k| done % k == 0)
    }

    fn load_checkpoint(&self) -> Result<Option<CellCheckpoint>, ExperimentError> {
        let path = checkpoint_path(self.dir, self.kappa, self.seed);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path)?;
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| TrainError::Checkpoint(format!("{}: {e}", path.display())).into())
    }

    fn save_checkpoint(&self, learner: String, rows: &[MetricsRow]) -> Result<(), ExperimentError> {
        let ck = CellCheckpoint {
            learner,
            rows: rows.to_vec(),
        };
        let text = serde_json::to_string(&ck).expect("checkpoint serializes");
        write_atomic(&checkpoint_path(self.dir, self.kappa, self.seed), text.as_bytes())?;
        Ok(())
    }
}

/// Mean global and per-agent discounted returns over rollouts.
pub fn mean_returns<S>(trajs: &[Trajectory<S>], n: usize, gamma: f64) -> (f64, Vec<f64>) {
    let k = trajs.len() as f64;
    let global = trajs.iter().map(|t| t.global_return(gamma)).sum::<f64>() / k;
    let agents = (0..n)
        .map(|i| trajs.iter().map(|t| t.agent_return(i, gamma)).sum::<f64>() / k)
        .collect();
    (global, agents)
}

trait CellLearner {
    fn train_episode(&mut self) -> Result<EpisodeMetrics, TrainError>;
    fn next_episode(&self) -> usize;
    fn eval(&self, episodes: usize, greedy: bool, gamma: f64) -> Result<(f64, Vec<f64>), TrainError>;
    fn checkpoint(&self) -> String;
}

impl<E: GraphMdpEnv> CellLearner for TabularLearner<'_, E>
where
    E::State: TabularState,
{
    fn train_episode(&mut self) -> Result<EpisodeMetrics, TrainError> {
        TabularLearner::train_episode(self)
    }
    fn next_episode(&self) -> usize {
        TabularLearner::next_episode(self)
    }
    fn eval(&self, episodes: usize, greedy: bool, gamma: f64) -> Result<(f64, Vec<f64>), TrainError> {
        let trajs = self.evaluate(episodes, greedy)?;
        Ok(mean_returns(&trajs, self.policies.len(), gamma))
    }
    fn checkpoint(&self) -> String {
        TabularLearner::checkpoint(self)
    }
}

impl<E: Featurized> CellLearner for DeepLearner<'_, E> {
    fn train_episode(&mut self) -> Result<EpisodeMetrics, TrainError> {
        DeepLearner::train_episode(self)
    }
    fn next_episode(&self) -> usize {
        DeepLearner::next_episode(self)
    }
    fn eval(&self, episodes: usize, greedy: bool, gamma: f64) -> Result<(f64, Vec<f64>), TrainError> {
        let trajs = self.evaluate(episodes, greedy)?;
        Ok(mean_returns(&trajs, self.actors.len(), gamma))
    }
    fn checkpoint(&self) -> String {
        DeepLearner::checkpoint(self)
    }
}

fn drive<L: CellLearner>(cell: &Cell, learner: &mut L, mut rows: Vec<MetricsRow>) -> Result<Vec<MetricsRow>, ExperimentError> {
    let spec = cell.spec;
    let start = Instant::now();
    let offset = rows.last().map_or(0, |r| r.wall_ms);
    let wall = || offset + start.elapsed().as_millis() as u64;
    let eval_row = |learner: &L, done: usize| -> Result<MetricsRow, ExperimentError> {
        let (g, agents) = learner.eval(spec.eval_episodes, spec.greedy_eval, spec.gamma)?;
        Ok(cell.row(Phase::Eval, done, g, agents, wall()))
    };
    if rows.is_empty() && (spec.eval_every.is_some() || spec.episodes == 0) {
        rows.push(eval_row(learner, 0)?);
    }
    while learner.next_episode() < spec.episodes {
        let m = learner.train_episode()?;
        rows.push(cell.row(Phase::Train, m.episode, m.global_return, m.agent_returns, wall()));
        let done = m.episode + 1;
        if cell.is_eval_point(done) {
            rows.push(eval_row(learner, done)?);
        }
        if spec.checkpoint_every > 0 && done % spec.checkpoint_every == 0 && done < spec.episodes {
            cell.save_checkpoint(learner.checkpoint(), &rows)?;
        }
    }
    Ok(rows)
}

fn tabular_cell<E>(cell: &Cell, env: &E, resume: bool) -> Result<Vec<MetricsRow>, ExperimentError>
where
    E: GraphMdpEnv,
    E::State: TabularState,
{
    let cfg = cell.spec.train_config(cell.kappa, cell.seed, cell.horizon);
    let (mut learner, rows) = match resume.then(|| cell.load_checkpoint()).transpose()?.flatten() {
        Some(ck) => (TabularLearner::restore(env, cfg, &ck.learner)?, ck.rows),
        None => (TabularLearner::new(env, cfg)?, Vec::new()),
    };
    drive(cell, &mut learner, rows)
}

fn deep_cell<E: Featurized>(cell: &Cell, env: &E, resume: bool) -> Result<Vec<MetricsRow>, ExperimentError> {
    let cfg = cell.spec.train_config(cell.kappa, cell.seed, cell.horizon);
    let net = cell.spec.net.clone();
    let (mut learner, rows) = match resume.then(|| cell.load_checkpoint()).transpose()?.flatten() {
        Some(ck) => (DeepLearner::restore(env, cfg, net, &ck.learner)?, ck.rows),
        None => (DeepLearner::new(env, cfg, net)?, Vec::new()),
    };
    drive(cell, &mut learner, rows)
}

/// Uniform over legal actions, on the seed's evaluation streams.
pub fn random_rollouts<E: GraphMdpEnv>(
    env: &E,
    seed: u64,
    horizon: usize,
    episodes: usize,
) -> Result<Vec<Trajectory<E::State>>, EnvError> {
    let streams = StreamRng::new(seed).derive(Purpose::Evaluation);
    (0..episodes)
        .map(|k| {
            let rng = streams.episode(k as u64);
            run_episode(env, &rng, horizon, |s, i| {
                let legal = env.legal_actions(i, &s.mdp_states[i]);
                let count = legal.iter().filter(|&&l| l).count() as f64;
                let probs: Vec<f64> = legal.iter().map(|&l| if l { 1.0 / count } else { 0.0 }).collect();
                sample_index(&probs, rng.uniform(s.t as u64, i, Purpose::Action))
            })
        })
        .collect()
}

/// Bang-bang controller with fresh hysteresis state per episode.
pub fn bang_bang_rollouts(
    env: &PandemicEnv,
    seed: u64,
    horizon: usize,
    episodes: usize,
) -> Result<Vec<Trajectory<crate::envs::pandemic::RegionState>>, EnvError> {
    let streams = StreamRng::new(seed).derive(Purpose::Evaluation);
    (0..episodes)
        .map(|k| {
            let rng = streams.episode(k as u64);
            let mut bb = BangBang::new(env.num_agents());
            run_episode(env, &rng, horizon, |s, i| bb.act(env, i, &s.mdp_states[i]))
        })
        .collect()
}

fn baseline_cell<S>(cell: &Cell, trajs: Result<Vec<Trajectory<S>>, EnvError>, n: usize, start: Instant) -> Result<Vec<MetricsRow>, ExperimentError> {
    let (g, agents) = mean_returns(&trajs?, n, cell.spec.gamma);
    Ok(vec![cell.row(Phase::Eval, 0, g, agents, start.elapsed().as_millis() as u64)])
}

fn run_cell(cell: &Cell, env: &BuiltEnv, resume: bool) -> Result<Vec<MetricsRow>, ExperimentError> {
    let spec = cell.spec;
    let (seed, h, k) = (cell.seed, cell.horizon, spec.eval_episodes);
    let start = Instant::now();
    match (env, spec.algorithm) {
        (BuiltEnv::Uav(e), Algorithm::Tabular) => tabular_cell(cell, e, resume),
        (BuiltEnv::Chain(e), Algorithm::Tabular) => tabular_cell(cell, e, resume),
        (BuiltEnv::Uav(e), Algorithm::Deep) => deep_cell(cell, e, resume),
        (BuiltEnv::Chain(e), Algorithm::Deep) => deep_cell(cell, e, resume),
        (BuiltEnv::Pandemic(e), Algorithm::Deep) => deep_cell(cell, e, resume),
        (BuiltEnv::Uav(e), Algorithm::Random) => baseline_cell(cell, random_rollouts(e, seed, h, k), e.num_agents(), start),
        (BuiltEnv::Chain(e), Algorithm::Random) => baseline_cell(cell, random_rollouts(e, seed, h, k), e.num_agents(), start),
        (BuiltEnv::Pandemic(e), Algorithm::Random) => baseline_cell(cell, random_rollouts(e, seed, h, k), e.num_agents(), start),
        (BuiltEnv::Pandemic(e), Algorithm::BaselineBangBang) => {
            baseline_cell(cell, bang_bang_rollouts(e, seed, h, k), e.num_agents(), start)
        }
        (_, alg) => Err(ExperimentError::Spec(format!("{alg:?} does not apply to this env"))),
    }
}

/// Aggregates the last evaluation row of every cell. `cells` holds
/// `(κ, seed, rows)`; κ order follows `kappas`, seed order follows `seeds`.
pub fn summarize(spec: &ExperimentSpec, cells: &[(usize, u64, Vec<MetricsRow>)]) -> Result<Summary, ExperimentError> {
    let mut kappas = Vec::new();
    for &kappa in &spec.kappas {
        let mut finals = Vec::new();
        let mut agent_rows: Vec<&[f64]> = Vec::new();
        for &seed in &spec.seeds {
            let rows = &cells
                .iter()
                .find(|(k, s, _)| *k == kappa && *s == seed)
                .ok_or_else(|| ExperimentError::Audit(format!("missing cell k={kappa} seed={seed}")))?
                .2;
            let last = rows
                .iter()
                .rev()
                .find(|r| r.phase == Phase::Eval)
                .ok_or_else(|| ExperimentError::Audit(format!("no evaluation row in cell k={kappa} seed={seed}")))?;
            finals.push(last.global_return);
            agent_rows.push(&last.agent_returns);
        }
        let n = agent_rows.first().map_or(0, |r| r.len());
        let agent_means = (0..n)
            .map(|i| mean(&agent_rows.iter().map(|r| r[i]).collect::<Vec<_>>()))
            .collect();
        kappas.push(KappaSummary {
            kappa,
            seeds: spec.seeds.clone(),
            mean: mean(&finals),
            std: std_dev(&finals),
            final_returns: finals,
            agent_means,
        });
    }
    Ok(Summary {
        env: spec.env.id,
        algorithm: spec.algorithm,
        gamma: spec.gamma,
        episodes: spec.episodes,
        eval_episodes: spec.eval_episodes,
        kappas,
    })
}

/// Re-reads every metrics CSV and checks that it carries the right seed and
/// κ and that the summary recomputed from disk equals `summary`.
pub fn audit(spec: &ExperimentSpec, dir: &Path, summary: &Summary) -> Result<(), ExperimentError> {
    let mut cells = Vec::new();
    for &kappa in &spec.kappas {
        for &seed in &spec.seeds {
            let path = metrics_path(dir, kappa, seed);
            let rows = read_metrics(&path)?;
            if let Some(r) = rows.iter().find(|r| r.kappa != kappa || r.seed != seed) {
                return Err(ExperimentError::Audit(format!(
                    "{} holds a row for k={} seed={}",
                    path.display(),
                    r.kappa,
                    r.seed
                )));
            }
            cells.push((kappa, seed, rows));
        }
    }
    let recomputed = summarize(spec, &cells)?;
    if &recomputed != summary {
        return Err(ExperimentError::Audit("summary differs from the one recomputed from CSVs".into()));
    }
    let on_disk: Summary = serde_json::from_str(&fs::read_to_string(dir.join("summary.json"))?)
        .map_err(|e| ExperimentError::Audit(format!("summary.json: {e}")))?;
    if &on_disk != summary {
        return Err(ExperimentError::Audit("summary.json differs from the recomputed summary".into()));
    }
    Ok(())
}

fn pool(workers: Option<usize>) -> Result<rayon::ThreadPool, ExperimentError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        if w == 0 {
            return Err(ExperimentError::Spec("workers must be positive".into()));
        }
        b = b.num_threads(w);
    }
    b.build().map_err(|e| ExperimentError::Spec(e.to_string()))
}

pub fn run_experiment(spec: &ExperimentSpec, opts: &RunOptions) -> Result<RunReport, ExperimentError> {
    spec.validate()?;
    let env = BuiltEnv::build(&spec.env)?;
    let horizon = spec.horizon.unwrap_or_else(|| env.default_horizon());
    let dir = opts.out_dir.as_path();
    fs::create_dir_all(dir)?;
    write_atomic(
        &dir.join("spec.json"),
        serde_json::to_string_pretty(spec).expect("spec serializes").as_bytes(),
    )?;

    let grid: Vec<(usize, u64)> = spec
        .kappas
        .iter()
        .flat_map(|&k| spec.seeds.iter().map(move |&s| (k, s)))
        .collect();
    let results: Vec<Result<((usize, u64, Vec<MetricsRow>), bool), ExperimentError>> = pool(opts.workers)?.install(|| {
        grid.par_iter()
            .map(|&(kappa, seed)| {
                let path = metrics_path(dir, kappa, seed);
                if opts.resume && path.exists() {
                    return Ok(((kappa, seed, read_metrics(&path)?), true));
                }
                let cell = Cell {
                    spec,
                    dir,
                    kappa,
                    seed,
                    horizon,
                };
                let rows = run_cell(&cell, &env, opts.resume)?;
                write_metrics(&path, &rows)?;
                let ck = checkpoint_path(dir, kappa, seed);
                if ck.exists() {
                    fs::remove_file(ck)?;
                }
                Ok(((kappa, seed, rows), false))
            })
            .collect()
    });
    let mut cells = Vec::with_capacity(results.len());
    let mut reused = 0;
    for r in results {
        let (cell, was_reused) = r?;
        reused += was_reused as usize;
        cells.push(cell);
    }

    let summary = summarize(spec, &cells)?;
    write_atomic(
        &dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).expect("summary serializes").as_bytes(),
    )?;
    let bounds = match &env {
        BuiltEnv::Chain(e) => {
            let b = bounds_for(e, spec)?;
            write_atomic(
                &dir.join("bounds.json"),
                serde_json::to_string_pretty(&b).expect("report serializes").as_bytes(),
            )?;
            Some(b)
        }
        _ => None,
    };
    if opts.audit {
        audit(spec, dir, &summary)?;
    }
    Ok(RunReport {
        summary,
        cells: cells.len(),
        reused,
        bounds,
    })
}

fn bounds_for<E: Enumerable>(env: &E, spec: &ExperimentSpec) -> Result<BoundsOutcome, ExperimentError> {
    let mdp = build_explicit(env, spec.gamma, DEFAULT_CAP)?;
    let mut policies = Vec::new();
    let mut violations = 0;
    for p in 0..spec.bound_policies.max(1) {
        let policy_seed = spec.seeds[0].wrapping_add(p as u64);
        let params = SoftmaxParams::random(&mdp, 1.0, &mut ChaCha8Rng::seed_from_u64(policy_seed));
        let report = bound_report(&mdp, &params, &spec.kappas, 1e-12)?;
        violations += report.violations(BOUND_SLACK).len();
        policies.push(PolicyBounds { policy_seed, report });
    }
    Ok(BoundsOutcome { policies, violations })
}

/// Oracle bound checks for every agent and every κ of the spec under
/// `bound_policies` random softmax policies.
pub fn verify_bounds(spec: &ExperimentSpec) -> Result<BoundsOutcome, ExperimentError> {
    spec.validate()?;
    match BuiltEnv::build(&spec.env)? {
        BuiltEnv::Chain(e) => bounds_for(&e, spec),
        BuiltEnv::Uav(_) | BuiltEnv::Pandemic(_) => {
            Err(ExperimentError::Spec("bounds need an env with enumerable states (chain)".into()))
        }
    }
}

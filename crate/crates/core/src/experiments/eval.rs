//! Scenario sweeps: agents, sensor noise, baselines and evaluation reports.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use setrl_highway::params::DEFAULT_EPISODE_ACTIONS;
use setrl_highway::{Action, Observation, ScenarioConfig, Simulator};

use std::path::Path;

use setrl_nn::Checkpoint;

use crate::error::{CoreError, Result};
use crate::ppo::PpoAgent;
use crate::qlearning::QEnsemble;

/// Decision rule queried once per agent step.
pub trait Agent {
    fn act(&mut self, sim: &mut Simulator, obs: &Observation) -> Result<Action>;
}

/// Never changes lanes.
#[derive(Debug, Clone, Copy, Default)]
pub struct KeepLaneAgent;

impl Agent for KeepLaneAgent {
    fn act(&mut self, _: &mut Simulator, _: &Observation) -> Result<Action> {
        Ok(Action::Keep)
    }
}

/// The simulator's heuristic lane-change controller driving the ego.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleBasedAgent;

impl Agent for RuleBasedAgent {
    fn act(&mut self, sim: &mut Simulator, _: &Observation) -> Result<Action> {
        Ok(sim.rule_based_action())
    }
}

/// Greedy policy of a trained Q ensemble.
#[derive(Debug, Clone)]
pub struct GreedyQAgent(pub QEnsemble);

impl Agent for GreedyQAgent {
    fn act(&mut self, _: &mut Simulator, obs: &Observation) -> Result<Action> {
        self.0.greedy_action(obs)
    }
}

/// Most probable action of a PPO policy.
#[derive(Debug, Clone)]
pub struct GreedyPolicyAgent(pub PpoAgent);

impl Agent for GreedyPolicyAgent {
    fn act(&mut self, _: &mut Simulator, obs: &Observation) -> Result<Action> {
        self.0.greedy_action(obs)
    }
}

/// Greedy agent restored from a DQN or PPO checkpoint.
#[derive(Debug, Clone)]
pub enum CheckpointAgent {
    Dqn(Box<GreedyQAgent>),
    Ppo(Box<GreedyPolicyAgent>),
}

impl CheckpointAgent {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        #[derive(Deserialize)]
        struct Algo {
            algo: String,
        }
        let algo: Algo = serde_json::from_str(&ckpt.descriptor)
            .map_err(|e| CoreError::Config(format!("checkpoint descriptor: {e}")))?;
        match algo.algo.as_str() {
            "dqn" => Ok(Self::Dqn(Box::new(GreedyQAgent(QEnsemble::from_checkpoint(ckpt)?)))),
            "ppo" => Ok(Self::Ppo(Box::new(GreedyPolicyAgent(PpoAgent::from_checkpoint(ckpt)?)))),
            other => Err(CoreError::Config(format!("unknown checkpoint algorithm {other:?}"))),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

impl Agent for CheckpointAgent {
    fn act(&mut self, sim: &mut Simulator, obs: &Observation) -> Result<Action> {
        match self {
            Self::Dqn(a) => a.act(sim, obs),
            Self::Ppo(a) => a.act(sim, obs),
        }
    }
}

/// Additive Gaussian sensor noise on `dr` and `dv`; lanes stay exact.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma_dr: f64,
    pub sigma_dv: f64,
}

impl NoiseSpec {
    pub fn new(sigma_dr: f64, sigma_dv: f64) -> Result<Self> {
        if !(sigma_dr >= 0.0 && sigma_dv >= 0.0) || !sigma_dr.is_finite() || !sigma_dv.is_finite() {
            return Err(CoreError::Config(format!(
                "noise levels must be finite and non-negative, got ({sigma_dr}, {sigma_dv})"
            )));
        }
        Ok(Self { sigma_dr, sigma_dv })
    }

    pub fn is_zero(&self) -> bool {
        self.sigma_dr == 0.0 && self.sigma_dv == 0.0
    }

    /// Perturbs every element of the set. A zero level leaves the field
    /// untouched and draws nothing.
    pub fn apply(&self, obs: &mut Observation, rng: &mut ChaCha8Rng) {
        let dr = (self.sigma_dr > 0.0).then(|| Normal::new(0.0, self.sigma_dr).expect("valid sigma"));
        let dv = (self.sigma_dv > 0.0).then(|| Normal::new(0.0, self.sigma_dv).expect("valid sigma"));
        for f in &mut obs.dynamic {
            if let Some(n) = &dr {
                f.dr += n.sample(rng) as f32;
            }
            if let Some(n) = &dv {
                f.dv += n.sample(rng) as f32;
            }
        }
    }
}

/// Scenario grid of an evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSweep {
    pub lanes: usize,
    pub vehicle_counts: Vec<usize>,
    pub seeds: Vec<u64>,
    pub episode_actions: usize,
    pub driver_pool_seed: u64,
    /// Seed of the sensor-noise streams.
    pub noise_seed: u64,
}

impl Default for EvalSweep {
    /// 13 traffic densities (30..=90 step 5) x 20 seeds.
    fn default() -> Self {
        Self {
            lanes: 3,
            vehicle_counts: (0..=12).map(|i| 30 + 5 * i).collect(),
            seeds: (0..20).map(|i| 10_000 + i).collect(),
            episode_actions: DEFAULT_EPISODE_ACTIONS,
            driver_pool_seed: 0,
            noise_seed: 0,
        }
    }
}

impl EvalSweep {
    pub fn with_counts(mut self, counts: &[usize]) -> Self {
        self.vehicle_counts = counts.to_vec();
        self
    }

    pub fn with_lanes(mut self, lanes: usize) -> Self {
        self.lanes = lanes;
        self
    }

    pub fn scenarios(&self) -> Vec<ScenarioConfig> {
        let mut out = Vec::with_capacity(self.vehicle_counts.len() * self.seeds.len());
        for &n in &self.vehicle_counts {
            for &seed in &self.seeds {
                out.push(ScenarioConfig {
                    vehicles: n,
                    lanes: self.lanes,
                    seed,
                    episode_actions: self.episode_actions,
                    driver_pool_seed: self.driver_pool_seed,
                });
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub vehicles: usize,
    pub lanes: usize,
    pub seed: u64,
    /// Undiscounted sum of rewards.
    pub episode_return: f64,
    /// Executed lane changes.
    pub lane_changes: usize,
    /// Lane-change actions chosen, executed or not.
    pub lane_change_requests: usize,
}

/// Runs one episode of `agent` in `scenario`.
pub fn run_episode<A: Agent + ?Sized>(
    agent: &mut A,
    scenario: &ScenarioConfig,
    noise: &NoiseSpec,
    noise_seed: u64,
) -> Result<EpisodeResult> {
    let mut sim = Simulator::spawn(scenario.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed ^ scenario.seed.rotate_left(17) ^ scenario.vehicles as u64);
    let mut res = EpisodeResult {
        vehicles: scenario.vehicles,
        lanes: scenario.lanes,
        seed: scenario.seed,
        episode_return: 0.0,
        lane_changes: 0,
        lane_change_requests: 0,
    };
    while !sim.done() {
        let mut obs = sim.observe();
        if !noise.is_zero() {
            noise.apply(&mut obs, &mut rng);
        }
        let action = agent.act(&mut sim, &obs)?;
        let out = sim.step_agent_action(action);
        res.episode_return += out.reward;
        res.lane_changes += out.effective.is_lane_change() as usize;
        res.lane_change_requests += action.is_lane_change() as usize;
    }
    Ok(res)
}

/// Evaluates `agent` on every scenario of the sweep. Scenarios are split
/// across worker threads, each with its own copy of the agent; the report
/// is ordered by `(n, seed)` regardless of scheduling.
pub fn evaluate<A>(agent: &A, sweep: &EvalSweep, noise: &NoiseSpec) -> Result<EvalReport>
where
    A: Agent + Clone + Send + Sync,
{
    let scenarios = sweep.scenarios();
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(scenarios.len().max(1));
    let chunk = scenarios.len().div_ceil(workers).max(1);
    let results: Vec<Result<Vec<EpisodeResult>>> = std::thread::scope(|s| {
        let handles: Vec<_> = scenarios
            .chunks(chunk)
            .map(|part| {
                let mut a = agent.clone();
                s.spawn(move || {
                    part.iter()
                        .map(|sc| run_episode(&mut a, sc, noise, sweep.noise_seed))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
    });
    let mut rows = Vec::with_capacity(scenarios.len());
    for r in results {
        rows.extend(r?);
    }
    Ok(EvalReport::new(rows))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    NoLaneChange,
    RuleBased,
}

impl std::str::FromStr for BaselineKind {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "no-lane-change" | "keep" => Ok(Self::NoLaneChange),
            "rule-based" | "rule" => Ok(Self::RuleBased),
            _ => Err(CoreError::Config(format!("unknown baseline {s:?}"))),
        }
    }
}

pub fn run_baseline(kind: BaselineKind, sweep: &EvalSweep) -> Result<EvalReport> {
    let none = NoiseSpec::default();
    match kind {
        BaselineKind::NoLaneChange => evaluate(&KeepLaneAgent, sweep, &none),
        BaselineKind::RuleBased => evaluate(&RuleBasedAgent, sweep, &none),
    }
}

/// Per-density summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub vehicles: usize,
    pub lanes: usize,
    pub episodes: usize,
    pub mean: f64,
    /// Sample standard deviation (n - 1); 0 for a single episode.
    pub std: f64,
    pub mean_lane_changes: f64,
    pub mean_lane_change_requests: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    rows: Vec<EpisodeResult>,
}

impl EvalReport {
    pub fn new(mut rows: Vec<EpisodeResult>) -> Self {
        rows.sort_by_key(|r| (r.lanes, r.vehicles, r.seed));
        Self { rows }
    }

    pub fn rows(&self) -> &[EpisodeResult] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn mean_return(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.episode_return))
    }

    /// Rows with `n` surrounding vehicles.
    pub fn for_vehicles(&self, n: usize) -> impl Iterator<Item = &EpisodeResult> {
        self.rows.iter().filter(move |r| r.vehicles == n)
    }

    pub fn aggregates(&self) -> Vec<Aggregate> {
        let mut out: Vec<Aggregate> = Vec::new();
        let mut i = 0;
        while i < self.rows.len() {
            let key = (self.rows[i].lanes, self.rows[i].vehicles);
            let mut j = i;
            while j < self.rows.len() && (self.rows[j].lanes, self.rows[j].vehicles) == key {
                j += 1;
            }
            let group = &self.rows[i..j];
            let m = mean(group.iter().map(|r| r.episode_return));
            let var = if group.len() > 1 {
                group.iter().map(|r| (r.episode_return - m).powi(2)).sum::<f64>() / (group.len() - 1) as f64
            } else {
                0.0
            };
            out.push(Aggregate {
                vehicles: key.1,
                lanes: key.0,
                episodes: group.len(),
                mean: m,
                std: var.sqrt(),
                mean_lane_changes: mean(group.iter().map(|r| r.lane_changes as f64)),
                mean_lane_change_requests: mean(group.iter().map(|r| r.lane_change_requests as f64)),
            });
            i = j;
        }
        out
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values {
        s += v;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

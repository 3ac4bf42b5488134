//! Random search over network layouts.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::eval::{evaluate, EvalSweep, GreedyQAgent, NoiseSpec};
use crate::encoders::{ConvSpec, EncoderConfig, EncoderKind, NetConfig, Pooling};
use crate::error::{CoreError, Result};
use crate::qlearning::{train_offline, QEnsemble, ReplayBuffer, TrainConfig, TrainOutputs, Transition};

/// Largest grid sampled without replacement.
pub const ENUMERATION_LIMIT: usize = 1 << 16;

/// Named discrete dimensions of one architecture's layout grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    kind: EncoderKind,
    dims: Vec<(&'static str, Vec<usize>)>,
}

impl SearchSpace {
    pub fn for_kind(kind: EncoderKind) -> Self {
        let dims = match kind {
            EncoderKind::Fixed => vec![("head_width", vec![50, 100, 200]), ("head_layers", vec![2, 3])],
            EncoderKind::DeepSet => vec![
                ("phi_layers", vec![1, 2, 3]),
                ("phi_dim", vec![5, 20, 100]),
                ("rho_layers", vec![1, 2, 3]),
                ("rho_dim", vec![5, 20, 100]),
            ],
            EncoderKind::Set2Set => vec![
                ("lstm_layers", vec![1, 2]),
                ("readout", vec![32, 64, 100]),
                ("iterations", vec![5, 20, 40]),
            ],
            EncoderKind::Grid => vec![
                ("conv_layers", vec![2, 3]),
                ("kernel_rows", vec![7, 3, 2]),
                ("kernel_cols", vec![2, 1]),
                ("filters", vec![8, 16, 32]),
            ],
        };
        Self { kind, dims }
    }

    pub fn kind(&self) -> EncoderKind {
        self.kind
    }

    pub fn dims(&self) -> &[(&'static str, Vec<usize>)] {
        &self.dims
    }

    /// Number of grid points.
    pub fn size(&self) -> usize {
        self.dims.iter().map(|(_, v)| v.len()).product()
    }

    /// Grid point `index` in mixed radix, first dimension slowest.
    pub fn point(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.dims.len()];
        for (slot, (_, values)) in out.iter_mut().zip(&self.dims).rev() {
            *slot = values[index % values.len()];
            index /= values.len();
        }
        out
    }

    pub fn contains(&self, point: &[usize]) -> bool {
        point.len() == self.dims.len() && point.iter().zip(&self.dims).all(|(p, (_, v))| v.contains(p))
    }

    /// Draws up to `budget` points. Grids small enough to enumerate are
    /// sampled without replacement, so the result is capped at the grid
    /// size; larger grids get independent uniform draws.
    pub fn sample(&self, budget: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
        let size = self.size();
        if size <= ENUMERATION_LIMIT {
            let mut idx: Vec<usize> = (0..size).collect();
            idx.shuffle(rng);
            idx.truncate(budget.min(size));
            idx.into_iter().map(|i| self.point(i)).collect()
        } else {
            (0..budget)
                .map(|_| self.dims.iter().map(|(_, v)| *v.choose(rng).expect("non-empty")).collect())
                .collect()
        }
    }

    /// Network layout for a grid point. Dimensions not in the space keep
    /// their defaults.
    pub fn build(&self, point: &[usize]) -> Result<NetConfig> {
        if !self.contains(point) {
            return Err(CoreError::Config(format!("{point:?} is not in the {} search space", self.kind)));
        }
        let mut net = NetConfig::q_network(self.kind);
        match self.kind {
            EncoderKind::Fixed => net.head = vec![point[0]; point[1]],
            EncoderKind::DeepSet => {
                net.encoder = EncoderConfig::DeepSet {
                    phi: vec![point[1]; point[0]],
                    rho: vec![point[3]; point[2]],
                    pooling: Pooling::Sum,
                }
            }
            EncoderKind::Set2Set => {
                net.encoder = EncoderConfig::Set2Set { layers: point[0], hidden: 6, readout: point[1], iterations: point[2] }
            }
            EncoderKind::Grid => {
                let spec = ConvSpec { filters: point[3], kernel: (point[1], point[2]), stride: (2, 1) };
                net.encoder = EncoderConfig::Grid { convs: vec![spec; point[0]] };
            }
        }
        Ok(net)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub budget: usize,
    /// Training settings of every candidate; `steps` is the reduced budget.
    pub train: TrainConfig,
    pub probe: EvalSweep,
    pub seed: u64,
    /// Candidates trained concurrently.
    pub workers: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            budget: 20,
            train: TrainConfig { steps: 5_000, log_every: 1_000, ..TrainConfig::default() },
            probe: probe_sweep(),
            seed: 0,
            workers: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
        }
    }
}

/// Three scenarios of increasing density with seeds outside the evaluation set.
pub fn probe_sweep() -> EvalSweep {
    EvalSweep { vehicle_counts: vec![30, 60, 90], seeds: vec![20_000], ..EvalSweep::default() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    /// Position in the sampling order.
    pub sample: usize,
    pub point: Vec<usize>,
    pub net: NetConfig,
    pub mean_return: f64,
}

/// Trains every sampled layout on the same transitions and ranks them by
/// mean probe return, best first. Ties keep sampling order.
pub fn random_search(space: &SearchSpace, transitions: &[Transition], config: &SearchConfig) -> Result<Vec<SearchResult>> {
    if space.size() == 0 {
        return Err(CoreError::Config("empty search space".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let points = space.sample(config.budget, &mut rng);
    let jobs: Vec<(usize, Vec<usize>, NetConfig)> = points
        .into_iter()
        .enumerate()
        .map(|(i, p)| space.build(&p).map(|net| (i, p, net)))
        .collect::<Result<_>>()?;
    let workers = config.workers.clamp(1, jobs.len().max(1));
    let chunk = jobs.len().div_ceil(workers).max(1);
    let run = |(i, point, net): &(usize, Vec<usize>, NetConfig)| -> Result<SearchResult> {
        let mut buffer = ReplayBuffer::from_transitions(space.kind(), transitions, config.train.seed);
        let mut ens: QEnsemble = QEnsemble::new(net, config.train.clone())?;
        train_offline(&mut ens, &mut buffer, TrainOutputs::default())?;
        let report = evaluate(&GreedyQAgent(ens), &config.probe, &NoiseSpec::default())?;
        Ok(SearchResult { sample: *i, point: point.clone(), net: net.clone(), mean_return: report.mean_return() })
    };
    let results: Vec<Result<Vec<SearchResult>>> = std::thread::scope(|s| {
        let handles: Vec<_> = jobs
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(run).collect::<Result<Vec<_>>>()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("search worker panicked")).collect()
    });
    let mut ranked = Vec::with_capacity(jobs.len());
    for r in results {
        ranked.extend(r?);
    }
    ranked.sort_by(|a, b| b.mean_return.total_cmp(&a.mean_return).then(a.sample.cmp(&b.sample)));
    Ok(ranked)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_sizes() {
        assert_eq!(SearchSpace::for_kind(EncoderKind::Fixed).size(), 6);
        assert_eq!(SearchSpace::for_kind(EncoderKind::DeepSet).size(), 81);
        assert_eq!(SearchSpace::for_kind(EncoderKind::Set2Set).size(), 18);
        assert_eq!(SearchSpace::for_kind(EncoderKind::Grid).size(), 36);
    }

    #[test]
    fn small_grid_is_sampled_without_replacement() {
        let space = SearchSpace::for_kind(EncoderKind::Fixed);
        let mut pts = space.sample(20, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(pts.len(), 6);
        pts.sort();
        pts.dedup();
        assert_eq!(pts.len(), 6);
    }

    #[test]
    fn sampling_is_seeded_and_in_grid() {
        let space = SearchSpace::for_kind(EncoderKind::DeepSet);
        let a = space.sample(20, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, space.sample(20, &mut ChaCha8Rng::seed_from_u64(5)));
        for p in &a {
            assert!(space.contains(p));
            let EncoderConfig::DeepSet { phi, rho, .. } = space.build(p).unwrap().encoder else { panic!() };
            assert!(phi.iter().chain(&rho).all(|d| [5, 20, 100].contains(d)));
        }
    }

    #[test]
    fn every_point_builds() {
        for kind in EncoderKind::ALL {
            let space = SearchSpace::for_kind(kind);
            for i in 0..space.size() {
                let net = space.build(&space.point(i)).unwrap();
                assert_eq!(net.kind(), kind);
            }
        }
        assert!(SearchSpace::for_kind(EncoderKind::Fixed).build(&[60, 2]).is_err());
    }
}

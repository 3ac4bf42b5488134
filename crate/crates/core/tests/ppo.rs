use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use setrl::encoders::{EncoderKind, NetConfig, NetInput, Network};
use setrl::ppo::*;
use setrl_highway::{Action, ScenarioConfig, Simulator};
use setrl_nn::Module;

fn uniform_policy() -> Network<f32> {
    let mut net = Network::new(&NetConfig::q_network(EncoderKind::DeepSet), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    net.visit_params_mut("", &mut |name, t| {
        if name.starts_with("head.2.") {
            t.data_mut().fill(0.0);
        }
    });
    net
}

/// Probability of the rewarded action, averaged over both bandit scenes.
fn optimal_probability(agent: &PpoAgent) -> f64 {
    [false, true]
        .iter()
        .map(|&blocked| agent.probabilities(&BanditEnv::scene(blocked)).unwrap()[BanditEnv::optimal(blocked).index()])
        .sum::<f64>()
        / 2.0
}

#[test]
fn uniform_policy_samples_actions_evenly() {
    let policy = uniform_policy();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let buf = collect_rollout(&policy, |i| Ok(BanditEnv::new(i as u64, 100)), 100, 20, &mut rng).unwrap();
    assert_eq!(buf.len(), 10_000);
    let mut counts = [0usize; 3];
    for s in buf.steps() {
        counts[s.action] += 1;
        assert!((s.log_prob - (1.0f64 / 3.0).ln()).abs() < 1e-6);
    }
    // 3 sigma of Binomial(10000, 1/3)
    let sigma = (10_000.0 * (1.0 / 3.0) * (2.0 / 3.0f64)).sqrt();
    for c in counts {
        assert!((c as f64 - 10_000.0 / 3.0).abs() <= 3.0 * sigma, "{counts:?}");
    }
}

#[test]
fn zero_episodes_give_empty_buffer() {
    let policy = uniform_policy();
    let buf = collect_rollout(&policy, |i| Ok(BanditEnv::new(i as u64, 5)), 0, 20, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(buf.is_empty());
}

#[test]
fn rollouts_are_deterministic() {
    let cfg = ScenarioConfig::new(30, 3, 5);
    let run = || {
        let mut agent = PpoAgent::new(&NetConfig::q_network(EncoderKind::DeepSet), PpoConfig { episodes: 1, ..Default::default() }).unwrap();
        agent.collect(|_| Ok(Simulator::spawn(ScenarioConfig { episode_actions: 30, ..cfg.clone() })?)).unwrap()
    };
    let a = run();
    assert_eq!(a.len(), 30);
    assert_eq!(a, run());
}

#[test]
fn policy_probabilities_sum_to_one() {
    let agent = PpoAgent::new(&NetConfig::q_network(EncoderKind::DeepSet), PpoConfig::default()).unwrap();
    let sim = Simulator::spawn(ScenarioConfig::new(60, 3, 9)).unwrap();
    let p = agent.probabilities(&sim.observe()).unwrap();
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
}

#[test]
fn clipped_samples_contribute_no_gradient() {
    let policy = uniform_policy();
    let input = NetInput::from_observations(EncoderKind::DeepSet, &[&BanditEnv::scene(true), &BanditEnv::scene(false)]).unwrap();
    let lp = (1.0f64 / 3.0).ln();
    // ratio 1.5 with positive advantage, ratio 0.5 with negative advantage
    let samples = [(1, lp - 1.5f64.ln(), 1.0), (0, lp - 0.5f64.ln(), -1.0)];
    let (loss, clipped, grads) = surrogate_gradient(&policy, &input, &samples, 0.2).unwrap();
    assert_eq!(clipped, 2);
    assert!((loss - -(1.2 - 0.8) / 2.0).abs() < 1e-6);
    assert_eq!(grads.max_abs(), 0.0);
    // inside the band the gradient is the plain policy gradient
    let (_, clipped, grads) = surrogate_gradient(&policy, &input, &[(1, lp, 1.0), (0, lp, -1.0)], 0.2).unwrap();
    assert_eq!(clipped, 0);
    assert!(grads.max_abs() > 0.0);
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ppo.ckpt");
    let mut agent = PpoAgent::new(&NetConfig::q_network(EncoderKind::DeepSet), PpoConfig { steps: 200, ..Default::default() }).unwrap();
    train_ppo(&mut agent, |k| Ok(BanditEnv::new(k, 10)), PpoOutputs::default()).unwrap();
    agent.save(&path).unwrap();
    let back = PpoAgent::load(&path).unwrap();
    assert_eq!(back.updates(), agent.updates());
    assert_eq!(back.policy.parameters(), agent.policy.parameters());
    assert_eq!(back.value.parameters(), agent.value.parameters());
}

#[test]
fn value_net_fits_constant_reward_returns() {
    let mut agent = PpoAgent::new(&NetConfig::q_network(EncoderKind::DeepSet), PpoConfig { steps: 10_000, ..Default::default() }).unwrap();
    struct Constant(usize);
    impl Environment for Constant {
        fn observe(&self) -> setrl_highway::Observation {
            BanditEnv::scene(false)
        }
        fn step(&mut self, _: Action) -> f64 {
            self.0 -= 1;
            1.0
        }
        fn done(&self) -> bool {
            self.0 == 0
        }
    }
    let rows = train_ppo(&mut agent, |_| Ok(Constant(1)), PpoOutputs::default()).unwrap();
    // single-step episodes: every return is exactly 1 and has zero variance
    let last = rows.last().unwrap().metrics;
    assert!(last.value_loss < 1e-2, "value loss {}", last.value_loss);
}

#[test]
fn bandit_reaches_optimal_action_frequency() {
    let mut agent = PpoAgent::new(&NetConfig::q_network(EncoderKind::DeepSet), PpoConfig { steps: 20_000, ..Default::default() }).unwrap();
    let rows = train_ppo(&mut agent, |k| Ok(BanditEnv::new(k, 1)), PpoOutputs::default()).unwrap();
    assert!(agent.env_steps() <= 20_000);
    let p = optimal_probability(&agent);
    assert!(p >= 0.95, "optimal action probability {p:.3} after {} updates", rows.len());
}

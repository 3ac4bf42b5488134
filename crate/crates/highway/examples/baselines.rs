use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use setrl_highway::{Action, ScenarioConfig, Simulator};

fn main() {
    for n in [30usize, 50, 70, 90] {
        let mut totals = [0.0f64; 3];
        let mut min_gap = f64::INFINITY;
        for seed in 0..20u64 {
            for (k, total) in totals.iter_mut().enumerate() {
                let mut sim = Simulator::spawn(ScenarioConfig::new(n, 3, seed)).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                while !sim.done() {
                    let a = match k {
                        0 => Action::Keep,
                        1 => sim.rule_based_action(),
                        _ => Action::from_index(rng.random_range(0..3)).unwrap(),
                    };
                    *total += sim.step_agent_action(a).reward;
                    min_gap = min_gap.min(sim.min_body_gap());
                }
            }
        }
        println!(
            "n={n} keep={:.1} rule={:.1} random={:.1} min_gap={min_gap:.3}",
            totals[0] / 20.0,
            totals[1] / 20.0,
            totals[2] / 20.0
        );
    }
}

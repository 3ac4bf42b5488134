use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use setrl::encoders::{
    build_occupancy_grid, build_relational_grid, EncoderKind, NetConfig, NetInput, Network,
    OccupancyGridSpec, RelationalGridSpec,
};
use setrl_highway::{extract_features, DriverType, DynamicFeature, Observation, StaticFeature, Vehicle};

fn feature() -> impl Strategy<Value = DynamicFeature> {
    (-1.0f32..=1.0, -1.0f32..1.0, -2i8..=2).prop_map(|(dr, dv, dl)| DynamicFeature { dr, dv, dl })
}

fn observation(dynamic: Vec<DynamicFeature>) -> Observation {
    Observation {
        dynamic,
        static_features: StaticFeature {
            v_ego: 18.0,
            left_available: true,
            right_available: true,
        },
    }
}

fn q(net: &Network, obs: &Observation) -> Vec<f32> {
    net.forward(&NetInput::from_observations(net.kind(), &[obs]).unwrap())
        .unwrap()
        .into_data()
}

fn max_abs_diff(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn set_networks_ignore_element_order(
        set in prop::collection::vec(feature(), 0..=30),
        net_seed in 0u64..1000,
        perm_seed in any::<u64>(),
    ) {
        let mut shuffled = set.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(perm_seed));
        for kind in [EncoderKind::DeepSet, EncoderKind::Set2Set] {
            let net = Network::new(&NetConfig::q_network(kind), &mut ChaCha8Rng::seed_from_u64(net_seed)).unwrap();
            let a = q(&net, &observation(set.clone()));
            let b = q(&net, &observation(shuffled.clone()));
            prop_assert!(max_abs_diff(&a, &b) <= 1e-6, "{kind}: {a:?} vs {b:?}");
        }
    }

    #[test]
    fn grid_lengths_fixed(set in prop::collection::vec(feature(), 0..=40)) {
        let obs = observation(set);
        prop_assert_eq!(build_relational_grid(&obs, &RelationalGridSpec::default()).len(), 43);
        prop_assert_eq!(build_occupancy_grid(&obs, &OccupancyGridSpec::default()).len(), 400);
    }
}

fn car(id: u32, position: f64, lane: usize, speed: f64) -> Vehicle {
    Vehicle {
        id,
        position,
        lane,
        speed,
        driver: DriverType::ego(),
        lane_change: None,
    }
}

#[test]
fn vehicles_beyond_sensor_range_change_nothing() {
    let mut cars = vec![car(0, 500.0, 1, 20.0), car(1, 540.0, 1, 18.0), car(2, 470.0, 2, 22.0)];
    let before = extract_features(&cars, 0, 80.0, 3);
    cars.push(car(3, 581.0, 1, 5.0));
    cars.push(car(4, 410.0, 0, 30.0));
    let after = extract_features(&cars, 0, 80.0, 3);
    for kind in EncoderKind::ALL {
        let net = Network::new(&NetConfig::q_network(kind), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(q(&net, &before), q(&net, &after), "{kind}");
    }
}

#[test]
fn permuted_set_same_greedy_scores() {
    let set = vec![
        DynamicFeature { dr: 0.3, dv: -0.1, dl: 0 },
        DynamicFeature { dr: -0.6, dv: 0.2, dl: 1 },
        DynamicFeature { dr: 0.9, dv: 0.0, dl: -1 },
    ];
    let mut rev = set.clone();
    rev.reverse();
    let net = Network::new(&NetConfig::q_network(EncoderKind::DeepSet), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(q(&net, &observation(set)), q(&net, &observation(rev)));
}

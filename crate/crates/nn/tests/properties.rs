use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use setrl_nn::{soft_update, Activation, Checkpoint, DenseLayer, Module, ParameterSet, Tensor};

proptest! {
    #[test]
    fn dense_forward_is_row_independent(seed in 0u64..1000, batch in 1usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer: DenseLayer<f32> = DenseLayer::new(13, 7, Activation::Relu, &mut rng);
        let x = Tensor::new(
            vec![batch, 13],
            (0..batch * 13).map(|i| ((i as f32) * 0.37).sin()).collect(),
        ).unwrap();
        let full = layer.forward(&x).unwrap();
        for r in 0..batch {
            let single = layer.forward(&Tensor::new(vec![1, 13], x.row(r).to_vec()).unwrap()).unwrap();
            prop_assert_eq!(single.data(), full.row(r));
        }
    }

    #[test]
    fn soft_update_converges_monotonically(
        start in prop::collection::vec(-10.0f32..10.0, 1..20),
        tau in 0.01f64..0.9,
    ) {
        let online_vals: Vec<f32> = start.iter().map(|v| -v * 0.5 + 1.0).collect();
        let mut online = ParameterSet::new();
        online.push("w", Tensor::from_vec(online_vals.clone()));
        let mut target = ParameterSet::new();
        target.push("w", Tensor::from_vec(start));
        let dist = |t: &ParameterSet<f32>| {
            t.get("w").unwrap().data().iter().zip(&online_vals).fold(0f32, |m, (a, b)| m.max((a - b).abs()))
        };
        let mut prev = dist(&target);
        for _ in 0..50 {
            soft_update(&mut target, &online, tau).unwrap();
            let d = dist(&target);
            prop_assert!(d <= prev);
            prev = d;
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact(
        vals in prop::collection::vec(any::<f32>(), 1..64),
        desc in "[a-z{}\":,0-9]{0,40}",
    ) {
        let mut params = ParameterSet::new();
        params.push("a.weight", Tensor::from_vec(vals.clone()));
        params.push("b", Tensor::new(vec![1, vals.len()], vals).unwrap());
        let ckpt = Checkpoint::new(desc, params);
        let mut bytes = Vec::new();
        ckpt.write_to(&mut bytes).unwrap();
        let back = Checkpoint::read_from(&mut bytes.as_slice()).unwrap();
        prop_assert_eq!(&back.descriptor, &ckpt.descriptor);
        for ((n1, t1), (n2, t2)) in back.params.iter().zip(ckpt.params.iter()) {
            prop_assert_eq!(n1, n2);
            prop_assert_eq!(t1.shape(), t2.shape());
            let b1: Vec<u32> = t1.data().iter().map(|v| v.to_bits()).collect();
            let b2: Vec<u32> = t2.data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(b1, b2);
        }
    }
}

#[test]
fn checkpoint_file_round_trip_restores_module() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let layer: DenseLayer<f32> = DenseLayer::new(4, 3, Activation::Relu, &mut rng);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("layer.ckpt");
    Checkpoint::new("dense", layer.parameters()).save(&path).unwrap();
    let mut other: DenseLayer<f32> = DenseLayer::new(4, 3, Activation::Relu, &mut rng);
    assert_ne!(other, layer);
    other.load_parameters(&Checkpoint::load(&path).unwrap().params).unwrap();
    assert_eq!(other, layer);
}

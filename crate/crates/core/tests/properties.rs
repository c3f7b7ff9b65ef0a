use proptest::prelude::*;

use fasttalker::checkpoint::Checkpoint;
use fasttalker::config::{split_8_1_1, RunConfig};
use fasttalker::frontend::{
    parse_alignment, phonemize, serialize_alignment, synth_corpus, AlignmentTable, AUDIO_FRAME_RATE,
};
use fasttalker::metrics::{beat_consistency, diversity, feature_distance};
use fasttalker::model::{FastTalker, ModelOptions};
use fasttalker::nas::{
    baseline_update, compute_reward, ArchitectureConfig, Controller, ControllerConfig,
    RewardComponents, SampleMode, SearchSpace,
};
use fasttalker::numerics::serialize::{read_tensor, write_tensor};
use fasttalker::numerics::{ConvSpec, Graph};
use fasttalker::rng;
use fasttalker::speech::length_regulate;
use fasttalker::train::{TrainConfig, Trainer};
use fasttalker::Tensor;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-5.0f64..5.0, rows * cols)
        .prop_map(move |d| Tensor::new(vec![rows, cols], d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn controller_distributions_lie_on_the_simplex(seed in any::<u64>()) {
        let c = Controller::new(SearchSpace::default(), ControllerConfig::default(), seed).unwrap();
        let s = c.sample(SampleMode::Stochastic, &mut rng::stream(seed, "draw")).unwrap();
        for p in &s.probs {
            prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        prop_assert!(s.config.validate().is_ok());
    }

    #[test]
    fn reward_is_monotone(fgd in 1e-3f64..50.0, utmos in 1.0f64..5.0, params in 1e3f64..1e8,
                          alpha in 1e-3f64..10.0, beta in 1.0f64..1e8, bump in 1e-3f64..2.0) {
        let r = |f, u, p| compute_reward(&RewardComponents { fgd: f, utmos_proxy: u, params: p }, alpha, beta).unwrap();
        let base = r(fgd, utmos, params);
        prop_assert!(r(fgd * (1.0 + bump), utmos, params) < base);
        prop_assert!(r(fgd, utmos + bump, params) > base);
        prop_assert!(r(fgd, utmos, params * (1.0 + bump)) < base);
    }

    #[test]
    fn baseline_stays_between_old_value_and_batch_mean(b in -10.0f64..10.0, gamma in 0.0f64..0.999,
                                                       rewards in prop::collection::vec(-10.0f64..10.0, 1..9)) {
        let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
        let next = baseline_update(b, &rewards, gamma).unwrap();
        prop_assert!(next >= b.min(mean) - 1e-12 && next <= b.max(mean) + 1e-12);
    }

    #[test]
    fn diversity_scales_and_ignores_order(clips in prop::collection::vec(matrix(4, 3), 2..6), scale in -3.0f64..3.0,
                                          rot in 0usize..6) {
        let d = diversity(&clips).unwrap();
        let scaled: Vec<Tensor> = clips.iter().map(|c| c.map(|v| v * scale)).collect();
        prop_assert!((diversity(&scaled).unwrap() - scale.abs() * d).abs() < 1e-9 * (1.0 + d));
        let mut rotated = clips.clone();
        rotated.rotate_left(rot % clips.len());
        prop_assert!((diversity(&rotated).unwrap() - d).abs() < 1e-9 * (1.0 + d));
    }

    #[test]
    fn feature_distance_is_symmetric_and_nonnegative(a in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 3), 6..12),
                                                     b in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 3), 6..12)) {
        let ab = feature_distance(&a, &b).unwrap();
        let ba = feature_distance(&b, &a).unwrap();
        prop_assert!(ab >= -1e-9);
        prop_assert!((ab - ba).abs() < 1e-6 * (1.0 + ab));
    }

    #[test]
    fn beat_consistency_lies_in_unit_interval(audio in prop::collection::vec(0.0f64..10.0, 1..20),
                                              motion in prop::collection::vec(0.0f64..10.0, 1..20)) {
        let bc = beat_consistency(&audio, &motion, 0.1).unwrap();
        prop_assert!((0.0..=1.0).contains(&bc));
    }

    #[test]
    fn length_regulation_repeats_rows(f in matrix(5, 3), d in prop::collection::vec(1usize..5, 5)) {
        let mut g = Graph::new();
        let v = g.constant(f.clone());
        let out = length_regulate(&mut g, v, &d).unwrap();
        let out = g.value(out).clone();
        prop_assert_eq!(out.shape()[0], d.iter().sum::<usize>());
        let mut row = 0;
        for (i, &n) in d.iter().enumerate() {
            for _ in 0..n {
                prop_assert_eq!(&out.data()[row * 3..row * 3 + 3], &f.data()[i * 3..i * 3 + 3]);
                row += 1;
            }
        }
    }

    #[test]
    fn causal_convolution_ignores_the_future(x in matrix(3, 12), p in 1usize..12, k in 0usize..3, dil in 1usize..4, seed in any::<u64>()) {
        let kernel = 2 * k + 1;
        let spec = ConvSpec::new(3, 2, kernel).dilation(dil);
        let mut r = rng::stream(seed, "conv");
        use rand::Rng;
        let w = Tensor::new(spec.weight_shape().to_vec(), (0..spec.weight_shape().iter().product()).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap();
        let b = Tensor::vector(vec![0.1, -0.2]);
        let mut y = x.clone();
        for c in 0..3 {
            for t in p..12 {
                y.data_mut()[c * 12 + t] += 1.0;
            }
        }
        let run = |input: &Tensor| {
            let mut g = Graph::new();
            let (xi, wi, bi) = (g.constant(input.clone()), g.constant(w.clone()), g.constant(b.clone()));
            let o = g.conv1d(xi, wi, bi, spec).unwrap();
            g.value(o).clone()
        };
        let (a, bb) = (run(&x), run(&y));
        prop_assert_eq!(a.shape(), &[2, 12]);
        for c in 0..2 {
            for t in 0..p {
                prop_assert_eq!(a.data()[c * 12 + t].to_bits(), bb.data()[c * 12 + t].to_bits());
            }
        }
    }

    #[test]
    fn tensor_serialization_round_trips(shape in prop::collection::vec(1usize..4, 1..4), seed in any::<u64>()) {
        use rand::Rng;
        let n = shape.iter().product();
        let mut r = rng::stream(seed, "tensor");
        let t = Tensor::new(shape, (0..n).map(|_| r.gen::<f64>() * 1e6 - 5e5).collect()).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        let back = read_tensor(&mut buf.as_slice()).unwrap();
        prop_assert_eq!(back.shape(), t.shape());
        prop_assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn alignment_round_trips(durations in prop::collection::vec(1usize..30, 64)) {
        let seq = phonemize("hello world").unwrap();
        let durations = durations[..seq.len()].to_vec();
        let table = AlignmentTable::new(durations, AUDIO_FRAME_RATE).unwrap();
        let text = serialize_alignment(&table, &seq);
        let back = parse_alignment(&text, &seq, AUDIO_FRAME_RATE).unwrap();
        prop_assert_eq!(back, table);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn split_partitions_the_corpus(seed in any::<u64>(), n in 0usize..40) {
        let corpus = synth_corpus(seed, n, 64).unwrap();
        let [train, val, test] = split_8_1_1(&corpus);
        prop_assert_eq!(val.len(), n / 10);
        prop_assert_eq!(test.len(), n / 10);
        let mut ids: Vec<String> = train.iter().chain(&val).chain(&test).map(|s| s.id.clone()).collect();
        ids.sort();
        let mut all: Vec<String> = corpus.iter().map(|s| s.id.clone()).collect();
        all.sort();
        prop_assert_eq!(ids, all);
    }

    #[test]
    fn checkpoint_bytes_round_trip(seed in any::<u64>(), adversarial in any::<bool>()) {
        let model = FastTalker::new(ArchitectureConfig::tiny(), ModelOptions::default(), seed).unwrap();
        let cfg = TrainConfig { epochs: 1, batch_size: 2, adversarial, ..Default::default() };
        let mut trainer = Trainer::new(model, cfg.clone(), seed).unwrap();
        trainer.fit(&synth_corpus(seed, 2, 64).unwrap()).unwrap();
        let run = RunConfig { seed, train: cfg, ..Default::default() };
        let bytes = Checkpoint::capture(&trainer, &run).to_bytes().unwrap();
        let again = Checkpoint::from_bytes(&bytes).unwrap().to_bytes().unwrap();
        prop_assert_eq!(bytes, again);
    }
}

use proptest::prelude::*;
use varshift_core::data::{make_dataset, SyntheticDatasetSpec};
use varshift_core::diagnostics::{
    adjust_bn_statistics, prediction_consistency, scan_variance_shift, StreamOptions, VoteOptions,
};
use varshift_core::layers::{Affine, BatchNorm, Dense, Dropout, Relu, Uout};
use varshift_core::network::{build_network, ArchSpec, Network, Placement};
use varshift_core::stats::AveragePolicy;
use varshift_core::train::{train, TrainConfig};
use varshift_core::{LayerMode, RngStream, StreamingMoments, Tensor};

const PASSES: usize = 100_000;

/// Per-element mean of `PASSES` Train-mode outputs on a fixed input, with
/// its standard error.
fn train_mode_means(
    mut pass: impl FnMut(&Tensor, &mut RngStream) -> Tensor,
    x: &Tensor,
) -> Vec<(f64, f64)> {
    let mut rng = RngStream::new(5, 0);
    let mut acc = vec![StreamingMoments::new(); x.len()];
    for _ in 0..PASSES {
        let y = pass(x, &mut rng);
        acc.iter_mut().zip(y.data()).for_each(|(m, v)| m.push(*v));
    }
    acc.iter()
        .map(|m| {
            (
                m.mean(),
                (m.variance_unbiased().unwrap() / PASSES as f64).sqrt(),
            )
        })
        .collect()
}

#[test]
fn dropout_preserves_the_mean() {
    let x = Tensor::matrix(2, 3, vec![1.0, -2.0, 0.5, 3.0, 0.0, -0.25]).unwrap();
    let mut layer = Dropout::new(0.6).unwrap();
    let stats = train_mode_means(|x, rng| layer.forward(x, LayerMode::Train, rng), &x);
    for ((mean, se), target) in stats.into_iter().zip(x.data()) {
        assert!(
            (mean - target).abs() <= 4.0 * se + 1e-15,
            "{mean} vs {target} (se {se})"
        );
    }
}

#[test]
fn uout_preserves_the_mean() {
    let x = Tensor::matrix(2, 3, vec![1.0, -2.0, 0.5, 3.0, 0.0, -0.25]).unwrap();
    let mut layer = Uout::new(0.8).unwrap();
    let stats = train_mode_means(|x, rng| layer.forward(x, LayerMode::Train, rng), &x);
    for ((mean, se), target) in stats.into_iter().zip(x.data()) {
        assert!(
            (mean - target).abs() <= 4.0 * se + 1e-15,
            "{mean} vs {target} (se {se})"
        );
    }
}

#[test]
fn dropout_train_variance_grid() {
    const BATCHES: usize = 50;
    const PER_BATCH: usize = 4_000;
    for (c, v) in [(0.0f64, 1.0f64), (1.0, 1.0), (2.0, 0.5)] {
        for p in [0.3, 0.5, 0.7, 0.9] {
            let mut layer = Dropout::new(p).unwrap();
            let mut rng = RngStream::new(11, (p * 10.0) as u64);
            let mut pooled = StreamingMoments::new();
            let mut spread = StreamingMoments::new();
            for _ in 0..BATCHES {
                let x: Vec<f64> = (0..PER_BATCH)
                    .map(|_| c + v.sqrt() * rng.standard_normal())
                    .collect();
                let x = Tensor::matrix(PER_BATCH, 1, x).unwrap();
                let y = layer.forward(&x, LayerMode::Train, &mut rng);
                let batch = StreamingMoments::from_slice(y.data());
                spread.push(batch.variance_unbiased().unwrap());
                pooled = pooled.merge(&batch);
            }
            let expected = (c * c + v) / p - c * c;
            let got = pooled.variance_unbiased().unwrap();
            let se = (spread.variance_unbiased().unwrap() / BATCHES as f64).sqrt();
            assert!(
                (got - expected).abs() <= 4.0 * se,
                "c={c} v={v} p={p}: {got} vs {expected} (se {se})"
            );
        }
    }
}

fn eval_bn(d: usize, mean: Vec<f64>, var: Vec<f64>, gamma: Vec<f64>, beta: Vec<f64>) -> BatchNorm {
    let mut bn = BatchNorm::with_options(
        d,
        AveragePolicy::Cumulative,
        BatchNorm::DEFAULT_EPSILON,
        true,
    )
    .unwrap();
    bn.set_moving(mean, var).unwrap();
    *bn.affine_mut().unwrap() = Affine::new(gamma, beta);
    bn
}

fn vec_of(n: usize, lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(lo..hi, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn batchnorm_eval_is_affine(
        mean in vec_of(3, -2.0, 2.0),
        var in vec_of(3, 0.1, 4.0),
        gamma in vec_of(3, -2.0, 2.0),
        shift in vec_of(3, -1.0, 1.0),
        x in vec_of(6, -5.0, 5.0),
        y in vec_of(6, -5.0, 5.0),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let mut bn = eval_bn(3, mean, var, gamma, shift);
        let t = |v: Vec<f64>| Tensor::matrix(2, 3, v).unwrap();
        let mix: Vec<f64> = x.iter().zip(&y).map(|(x, y)| a * x + b * y).collect();
        let f_mix = bn.forward(&t(mix), LayerMode::Eval).unwrap();
        let f_x = bn.forward(&t(x), LayerMode::Eval).unwrap();
        let f_y = bn.forward(&t(y), LayerMode::Eval).unwrap();
        let f_0 = bn.forward(&t(vec![0.0; 6]), LayerMode::Eval).unwrap();
        for i in 0..6 {
            let rhs = a * f_x.data()[i] + b * f_y.data()[i] + (1.0 - a - b) * f_0.data()[i];
            let scale = 1.0 + f_mix.data()[i].abs() + rhs.abs();
            prop_assert!((f_mix.data()[i] - rhs).abs() <= 1e-12 * scale * 100.0);
        }
    }

    #[test]
    fn eval_forward_is_pure_for_every_layer(
        x in vec_of(8, -3.0, 3.0),
        w in vec_of(8, -1.0, 1.0),
        p in 0.05f64..1.0,
        beta in 0.0f64..1.0,
        seed in any::<u64>(),
    ) {
        let t = Tensor::matrix(2, 4, x).unwrap();
        let mut rng = RngStream::new(seed, 0);
        let dense = Dense::new(4, 2, w, Some(vec![0.1, -0.2])).unwrap();
        let mut bn = eval_bn(4, vec![0.5; 4], vec![2.0; 4], vec![1.5; 4], vec![-0.5; 4]);
        let mut relu = Relu::new();
        let mut drop = Dropout::new(p).unwrap();
        let mut uout = Uout::new(beta).unwrap();

        macro_rules! twice {
            ($layer:expr, $call:expr) => {{
                let first = $call;
                let snapshot = $layer.clone();
                let second = $call;
                prop_assert_eq!(first, second);
                prop_assert_eq!(&snapshot, &$layer);
            }};
        }
        twice!(dense, dense.apply(&t).unwrap());
        twice!(bn, bn.forward(&t, LayerMode::Eval).unwrap());
        twice!(relu, relu.forward(&t));
        twice!(drop, drop.forward(&t, LayerMode::Eval, &mut rng));
        twice!(uout, uout.forward(&t, LayerMode::Eval, &mut rng));
        prop_assert_eq!(drop.forward(&t, LayerMode::Eval, &mut rng), t.clone());
        prop_assert_eq!(uout.forward(&t, LayerMode::Eval, &mut rng), t);
    }

    #[test]
    fn dropout_backward_is_masked_and_scaled(
        g in vec_of(6, -3.0, 3.0),
        p in 0.05f64..1.0,
        seed in any::<u64>(),
    ) {
        let mut layer = Dropout::new(p).unwrap();
        let x = Tensor::matrix(2, 3, vec![1.0; 6]).unwrap();
        layer.forward(&x, LayerMode::Train, &mut RngStream::new(seed, 0));
        let mask = layer.last_mask().unwrap().to_vec();
        let dx = layer.backward(&Tensor::matrix(2, 3, g.clone()).unwrap()).unwrap();
        for i in 0..6 {
            let expected = mask[i] * g[i] / p;
            prop_assert!((dx.data()[i] - expected).abs() <= 4.0 * f64::EPSILON * expected.abs());
            prop_assert!(mask[i] == 0.0 || mask[i] == 1.0);
        }
    }
}

/// A small DropA net trained for two epochs.
fn small_trained_net() -> (Network, varshift_core::data::Dataset) {
    let split = make_dataset(&SyntheticDatasetSpec {
        samples_per_class: 40,
        input_dim: 6,
        ..Default::default()
    })
    .unwrap();
    let arch = ArchSpec {
        input_dim: 6,
        hidden: vec![12],
        num_blocks: 3,
        placement: Placement::DropA,
        drop_ratio: 0.5,
        ..Default::default()
    };
    let mut net = build_network(&arch, &mut RngStream::new(1, 0)).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 16,
        learning_rate: 0.05,
        ..Default::default()
    };
    train(&mut net, &split.train, &cfg).unwrap();
    (net, split.train)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn diagnostics_never_touch_the_network(seed in any::<u64>(), passes in 1usize..4, votes in 1usize..5) {
        let (net, data) = small_trained_net();
        let before = net.clone();
        let rng = RngStream::new(seed, 2);
        let opts = StreamOptions::with_passes(passes);
        let a = scan_variance_shift(&net, &data, &opts, &rng).unwrap();
        let b = scan_variance_shift(&net, &data, &opts, &rng).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.layers.iter().all(|l| l.max_ratio >= 1.0));

        let vote = VoteOptions { votes, batch_size: 64 };
        let c = prediction_consistency(&net, &data, &vote, &rng).unwrap();
        prop_assert!((0.0..=1.0).contains(&c.train_mode_acc));
        prop_assert!((0.0..=1.0).contains(&c.flip_rate));

        let adjusted = adjust_bn_statistics(&net, &data, &StreamOptions { passes, ..StreamOptions::adjustment() }, &rng).unwrap();
        prop_assert_eq!(adjusted.parameter_checksum(), net.parameter_checksum());
        for (x, y) in adjusted.batch_norms().zip(net.batch_norms()) {
            prop_assert_eq!(x.running().policy, y.running().policy);
        }
        prop_assert_eq!(&net, &before);
    }
}

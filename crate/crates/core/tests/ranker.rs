mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{small_model_config, toy_day, toy_kg};
use kgrank_core::autodiff::Graph;
use kgrank_core::optim::OptimizerConfig;
use kgrank_core::params::ParamStore;
use kgrank_core::ranker::{
    approx_ndcg_loss, bce_loss, direction_loss, pairwise_loss, smooth_ranks, softmax_scores, topk_loss, train_phase,
    HawkesInputs, LossConfig, RankModel, TrainConfig, Variant,
};
use kgrank_core::tensor::Matrix;
use kgrank_core::Error;

fn column(g: &mut Graph<f64>, v: &[f64]) -> kgrank_core::autodiff::Var {
    g.constant(Matrix::column_vector(v))
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let mut g = Graph::new();
    let x = column(&mut g, v);
    let s = softmax_scores(&mut g, x);
    g.value(s).as_slice().to_vec()
}

fn ranks(v: &[f64], t: f64) -> Vec<f64> {
    let mut g = Graph::new();
    let x = column(&mut g, v);
    let r = smooth_ranks(&mut g, x, t);
    g.value(r).as_slice().to_vec()
}

fn scalar(f: impl FnOnce(&mut Graph<f64>) -> kgrank_core::autodiff::Var) -> f64 {
    let mut g = Graph::new();
    let v = f(&mut g);
    g.scalar(v)
}

fn pair_loss(pred: &[f64], truth: &[f64]) -> f64 {
    scalar(|g| {
        let x = column(g, pred);
        pairwise_loss(g, x, truth)
    })
}

fn bce(p: &[f64], y: &[bool]) -> f64 {
    scalar(|g| {
        let x = column(g, p);
        bce_loss(g, x, y)
    })
}

#[test]
fn softmax_examples() {
    assert!(softmax(&[0.3; 5]).iter().all(|p| (p - 0.2).abs() < 1e-15));
    let a = softmax(&[1.0, 2.0, 3.0]);
    let z = 1f64.exp() + 2f64.exp() + 3f64.exp();
    for (i, p) in a.iter().enumerate() {
        assert!((p - ((i + 1) as f64).exp() / z).abs() < 1e-15);
    }
    let b = softmax(&[101.0, 102.0, 103.0]);
    for (p, q) in a.iter().zip(&b) {
        assert!((p - q).abs() < 1e-15);
    }
    assert!(softmax(&[800.0, 0.0]).iter().all(|p| p.is_finite()));
}

#[test]
fn smooth_rank_limits() {
    let r = ranks(&[2.0, 1.0], 1e-3);
    assert!((r[0] - 1.0).abs() < 1e-3 && (r[1] - 2.0).abs() < 1e-3, "{r:?}");
    let wide = ranks(&[0.3, -1.0, 2.0, 0.7], 1e9);
    assert!(wide.iter().all(|x| (x - 2.5).abs() < 1e-6), "{wide:?}");
}

#[test]
fn listwise_loss_of_perfect_order_tends_to_minus_one() {
    let rel = [1.0, 0.6, 0.2, 0.0];
    let loss = scalar(|g| {
        let x = column(g, &[0.9, 0.5, 0.3, 0.1]);
        approx_ndcg_loss(g, x, &rel, 1e-4)
    });
    assert!((loss + 1.0).abs() < 1e-9, "{loss}");
    let zero = scalar(|g| {
        let x = column(g, &[0.9, 0.5]);
        approx_ndcg_loss(g, x, &[0.0, 0.0], 0.1)
    });
    assert_eq!(zero, 0.0);
}

#[test]
fn cross_entropy_examples() {
    let eps = 1e-6;
    let perfect = bce(&[1.0 - eps, eps, 1.0 - eps], &[true, false, true]);
    assert!(perfect < 2e-6);
    assert!((bce(&[0.5; 4], &[true, false, false, true]) - std::f64::consts::LN_2).abs() < 1e-15);

    let p = [0.9, 0.2, 0.6];
    let y = [true, true, false];
    let want = -((0.9f64).ln() + (0.2f64).ln() + (0.4f64).ln()) / 3.0;
    assert!((bce(&p, &y) - want).abs() < 1e-14);
    let dir = scalar(|g| {
        let x = column(g, &p);
        direction_loss(g, x, &y)
    });
    let top = scalar(|g| {
        let x = column(g, &p);
        topk_loss(g, x, &y)
    });
    assert_eq!(dir, want);
    assert_eq!(top, want);
}

#[test]
fn pairwise_examples() {
    assert_eq!(pair_loss(&[0.5, 0.3, 0.1], &[3.0, 2.0, 1.0]), 0.0);
    // only (0, 1) is discordant: margins 0.2 and 1.5
    let v = pair_loss(&[0.3, 0.5, 0.0], &[2.5, 1.0, -4.0]);
    assert!((v - 0.2 * 1.5).abs() < 1e-15, "{v}");
    assert_eq!(pair_loss(&[0.9, 0.1, 0.4], &[1.0; 3]), 0.0);
}

#[test]
fn unknown_variant_is_config_error() {
    assert!(matches!("bogus".parse::<Variant>(), Err(Error::Config(_))));
    assert_eq!("LSTM*".parse::<Variant>().unwrap(), Variant::Lstm);
    assert_eq!("transf-baseline".parse::<Variant>().unwrap(), Variant::Transf);
    assert_eq!("WO-TPP".parse::<Variant>().unwrap(), Variant::WoTpp);
}

fn model(variant: Variant, seed: u64) -> (RankModel, ParamStore<f64>) {
    let (kg, assets) = toy_kg();
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = RankModel::new(&kg, variant, small_model_config(4), &assets, &mut store, &mut rng).unwrap();
    (m, store)
}

fn random_hawkes(seed: u64) -> HawkesInputs<f64> {
    let (kg, _) = toy_kg();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    HawkesInputs {
        node: Matrix::randn(4, 4, 0.5, &mut rng),
        relation: Matrix::randn(kg.num_relation_slots(), 4, 0.5, &mut rng),
    }
}

#[test]
fn loss_weights_compose() {
    let (kg, _) = toy_kg();
    let (m, store) = model(Variant::Full, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let day = toy_day(&m, &kg, 5, &mut rng);
    let hk = random_hawkes(3);
    let run = |cfg: &LossConfig| {
        let mut g = Graph::new();
        let out = m.forward(&mut g, &store, &day, &hk, true).unwrap();
        let parts = m.loss(&mut g, &out, &day, cfg);
        let v = |x: Option<kgrank_core::autodiff::Var>| x.map(|x| g.scalar(x)).unwrap();
        (
            g.scalar(parts.total),
            [v(parts.kge), v(parts.listwise), g.scalar(parts.direction), g.scalar(parts.topk)],
        )
    };
    let base = LossConfig { k: 2, ..LossConfig::default() };
    let (total, parts) = run(&base);
    assert!((total - parts.iter().sum::<f64>()).abs() < 1e-12);

    let only_kge = LossConfig {
        alpha: [0.7, 0.0, 0.0, 0.0],
        ..base
    };
    let (t, p) = run(&only_kge);
    assert!((t - 0.7 * p[0]).abs() < 1e-15);
    assert!(p[0] > 0.0);
}

#[test]
fn baseline_loss_is_pairwise_plus_direction() {
    let (kg, _) = toy_kg();
    let (m, store) = model(Variant::Transf, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let day = toy_day(&m, &kg, 5, &mut rng);
    let hk = HawkesInputs::zeros(4, kg.num_relation_slots(), 4);
    let mut g = Graph::new();
    let out = m.forward(&mut g, &store, &day, &hk, true).unwrap();
    assert!(out.kge.is_none());
    let cfg = LossConfig {
        alpha: [1.0, 2.0, 0.5, 1.0],
        k: 2,
        ..LossConfig::default()
    };
    let parts = m.loss(&mut g, &out, &day, &cfg);
    let scores = g.value(out.scores).as_slice().to_vec();
    let want = 2.0 * pair_loss(&scores, &day.returns) + 0.5 * g.scalar(parts.direction);
    assert!((g.scalar(parts.total) - want).abs() < 1e-15);
}

#[test]
fn hawkes_gating_between_full_and_wotpp() {
    let (kg, _) = toy_kg();
    let (full, store) = model(Variant::Full, 9);
    let (wotpp, store2) = model(Variant::WoTpp, 9);
    assert_eq!(store.num_scalars(), store2.num_scalars());
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let day = toy_day(&full, &kg, 5, &mut rng);
    let zeros = HawkesInputs::zeros(4, kg.num_relation_slots(), 4);
    let hk = random_hawkes(10);
    let a = full.predict(&store, &day, &zeros).unwrap();
    let b = wotpp.predict(&store2, &day, &hk).unwrap();
    assert_eq!(a, b);
    let c = full.predict(&store, &day, &hk).unwrap();
    assert_ne!(a, c);
}

fn training_days(m: &RankModel, n: usize, seed: u64) -> Vec<kgrank_core::ranker::DayInput<f64>> {
    let (kg, _) = toy_kg();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let mut d = toy_day(m, &kg, 5, &mut rng);
            d.day = i;
            d
        })
        .collect()
}

#[test]
fn zero_epochs_returns_initialisation() {
    let (m, mut store) = model(Variant::Full, 12);
    let before = store.clone();
    let days = training_days(&m, 6, 1);
    let cfg = TrainConfig {
        epochs: 0,
        ..TrainConfig::default()
    };
    let fit = train_phase(&m, &mut store, &days[..4], &days[4..], &random_hawkes(1), &cfg, None).unwrap();
    assert_eq!(fit.best_epoch, 0);
    assert!(fit.log.is_empty());
    for id in store.ids() {
        assert_eq!(store.get(id), before.get(id));
    }
}

#[test]
fn training_is_deterministic_and_moves_parameters() {
    let cfg = TrainConfig {
        epochs: 3,
        optimizer: OptimizerConfig::adam(1e-2),
        loss: LossConfig { k: 2, ..LossConfig::default() },
        select_k: 2,
        seed: 4,
    };
    let run = || {
        let (m, mut store) = model(Variant::Full, 13);
        let days = training_days(&m, 10, 2);
        let fit = train_phase(&m, &mut store, &days[..7], &days[7..], &random_hawkes(2), &cfg, None).unwrap();
        (fit, store)
    };
    let (fa, sa) = run();
    let (fb, sb) = run();
    assert_eq!(fa, fb);
    assert_eq!(fa.log.len(), 3);
    for id in sa.ids() {
        assert_eq!(sa.get(id), sb.get(id));
    }
    let (_, init) = model(Variant::Full, 13);
    if fa.best_epoch > 0 {
        assert!(sa.ids().any(|id| sa.get(id) != init.get(id)));
    }
}

#[test]
fn invalid_temperature_rejected() {
    let (m, mut store) = model(Variant::Full, 1);
    let days = training_days(&m, 2, 3);
    let cfg = TrainConfig {
        loss: LossConfig {
            temperature: 0.0,
            ..LossConfig::default()
        },
        ..TrainConfig::default()
    };
    let r = train_phase(&m, &mut store, &days, &[], &random_hawkes(1), &cfg, None);
    assert!(matches!(r, Err(Error::Config(_))));
}

proptest! {
    #[test]
    fn softmax_contract(logits in prop::collection::vec(-20.0f64..20.0, 1..12), shift in -50.0f64..50.0) {
        let p = softmax(&logits);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&x| x > 0.0));
        let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
        let q = softmax(&shifted);
        let argmax = |v: &[f64]| v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        prop_assert_eq!(argmax(&p), argmax(&q));
    }

    #[test]
    fn pairwise_matches_quadratic_oracle(
        pred in prop::collection::vec(-1.0f64..1.0, 2..10),
        truth_seed in prop::collection::vec(-3i32..3, 10),
    ) {
        let truth: Vec<f64> = truth_seed[..pred.len()].iter().map(|&t| t as f64 * 0.5).collect();
        let mut sum = 0.0;
        let mut discordant = 0;
        for i in 0..pred.len() {
            for j in i + 1..pred.len() {
                let v = -(pred[i] - pred[j]) * (truth[i] - truth[j]);
                if v > 0.0 {
                    sum += v;
                    discordant += 1;
                }
            }
        }
        let got = pair_loss(&pred, &truth);
        prop_assert!((got - sum).abs() < 1e-12);
        prop_assert_eq!(got == 0.0, discordant == 0);
    }
}

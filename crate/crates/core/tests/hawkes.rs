use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kgrank_core::hawkes::{EventHistory, HawkesConfig, HawkesModel, LEAKY_SLOPE};
use kgrank_core::kg::{Entity, EventTuple, TemporalKG, YearMonth};
use kgrank_core::optim::OptimizerConfig;
use kgrank_core::params::ParamStore;
use kgrank_core::synth::planted_event_graph;
use kgrank_core::tensor::Matrix;

const DIM: usize = 3;

fn graph() -> TemporalKG {
    let entities = vec![
        Entity::new(0, &["Company"], "A"),
        Entity::new(1, &["Company"], "B"),
        Entity::new(2, &["Company"], "C"),
        Entity::new(3, &["Sector"], "S"),
    ];
    let registry = BTreeMap::from([(0, "R0".to_string()), (1, "R1".to_string())]);
    TemporalKG::new(entities, registry, vec![]).unwrap()
}

fn model(cfg: HawkesConfig, seed: u64) -> (HawkesModel, ParamStore<f64>) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = HawkesModel::new(&graph(), cfg, &mut store, &mut rng).unwrap();
    (m, store)
}

fn small() -> HawkesConfig {
    HawkesConfig {
        dim: DIM,
        ..HawkesConfig::default()
    }
}

fn event(head: u64, relation: u32, tail: u64, month: i64) -> EventTuple {
    EventTuple {
        head,
        head_type: "Company".into(),
        tail,
        tail_type: "Company".into(),
        relation,
        timestamp: YearMonth::from_index(month),
    }
}

fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

fn softplus(x: f64) -> f64 {
    (1.0 + x.exp()).ln()
}

/// `‖σ(e_h W + b) + e_r − σ(e_t W + b)‖²` from the raw parameter arrays.
fn hand_mu(m: &HawkesModel, s: &ParamStore<f64>, h: usize, r: usize, t: usize) -> f64 {
    let (emb, rel, w, b) = (
        s.get(m.params.node_emb),
        s.get(m.params.rel_emb),
        s.get(m.params.w_e),
        s.get(m.params.b_e),
    );
    let proj = |row: usize| -> Vec<f64> {
        (0..DIM)
            .map(|j| leaky(b[(0, j)] + (0..DIM).map(|i| emb[(row, i)] * w[(i, j)]).sum::<f64>()))
            .collect()
    };
    let (ph, pt) = (proj(h), proj(t));
    (0..DIM).map(|j| (ph[j] + rel[(r, j)] - pt[j]).powi(2)).sum()
}

fn set_rows(store: &mut ParamStore<f64>, id: kgrank_core::params::ParamId, rows: &[(usize, [f64; DIM])]) {
    let mut m = store.get(id).clone();
    for (r, v) in rows {
        m.row_mut(*r).copy_from_slice(v);
    }
    store.set(id, m);
}

#[test]
fn exact_translation_has_zero_base() {
    let (m, mut s) = model(small(), 1);
    s.set(m.params.w_e, Matrix::identity(DIM));
    set_rows(&mut s, m.params.node_emb, &[(0, [0.5, 1.0, 0.2]), (1, [0.9, 0.3, 0.7])]);
    set_rows(&mut s, m.params.rel_emb, &[(0, [0.4, -0.7, 0.5])]);
    let mu: f64 = m.base_intensity(&s, 0, 0, 1).unwrap();
    assert!(mu.abs() < 1e-15, "{mu}");

    set_rows(&mut s, m.params.rel_emb, &[(1, [0.0; DIM])]);
    set_rows(&mut s, m.params.node_emb, &[(2, [0.9, 0.3, 0.7])]);
    assert_eq!(m.base_intensity(&s, 1, 1, 2).unwrap(), 0.0);
    assert_eq!(m.base_intensity(&s, 2, 1, 2).unwrap(), 0.0);
}

#[test]
fn base_matches_hand_norm() {
    for seed in 0..10 {
        let (m, mut s) = model(small(), seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        s.set(m.params.b_e, Matrix::randn(1, DIM, 0.3, &mut rng));
        for (h, r, t) in [(0u64, 0u32, 1u64), (2, 1, 3), (3, 0, 0)] {
            let got: f64 = m.base_intensity(&s, h, r, t).unwrap();
            let want = hand_mu(&m, &s, h as usize, r as usize, t as usize);
            assert!(got >= 0.0);
            assert!((got - want).abs() < 1e-12, "seed {seed}: {got} vs {want}");
        }
    }
}

#[test]
fn mutual_terms() {
    let (m, s) = model(small(), 4);
    let empty = EventHistory::new(&m, &[]);
    let at = YearMonth::from_index(24_000);
    assert_eq!(m.mutual_intensity(&s, &empty, 0, at).unwrap(), 0.0);

    // default decay is softplus(ln(e - 1)) = 1 per month
    let events = [event(0, 0, 1, 23_999), event(2, 1, 0, 23_998)];
    let history = EventHistory::new(&m, &events);
    let got: f64 = m.mutual_intensity(&s, &history, 0, at).unwrap();
    let want = -(-1.0f64).exp() * hand_mu(&m, &s, 0, 0, 1) - (-2.0f64).exp() * hand_mu(&m, &s, 2, 1, 0);
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");

    // events in the query month are not history
    let same = EventHistory::new(&m, &[event(0, 0, 1, 24_000)]);
    assert_eq!(m.mutual_intensity(&s, &same, 0, at).unwrap(), 0.0);
}

#[test]
fn intensity_reduces_to_negated_base() {
    let (m, mut s) = model(small(), 6);
    let history = EventHistory::new(&m, &[event(0, 0, 2, 10), event(1, 1, 2, 11)]);
    let at = YearMonth::from_index(12);
    s.set(m.params.gamma1, Matrix::scalar(0.0));
    s.set(m.params.gamma2, Matrix::scalar(0.0));
    let lam: f64 = m.intensity(&s, &history, 0, 1, 2, at).unwrap();
    assert!((lam + m.base_intensity(&s, 0, 1, 2).unwrap()).abs() < 1e-15);

    let (m, s) = model(small(), 6);
    let empty = EventHistory::new(&m, &[]);
    let lam: f64 = m.intensity(&s, &empty, 0, 1, 3, at).unwrap();
    assert!((lam + m.base_intensity(&s, 0, 1, 3).unwrap()).abs() < 1e-15);
}

#[test]
fn better_translated_history_scores_higher() {
    let (m, mut s) = model(small(), 8);
    s.set(m.params.w_e, Matrix::identity(DIM));
    set_rows(&mut s, m.params.node_emb, &[(0, [0.2, 0.4, 0.6]), (1, [0.7, 0.1, 0.3]), (2, [3.0, 2.0, 1.0])]);
    // relation 0 translates 0 onto 1 exactly
    set_rows(&mut s, m.params.rel_emb, &[(0, [0.5, -0.3, -0.3])]);
    let at = YearMonth::from_index(50);
    let lam = |events: &[EventTuple]| -> f64 {
        let h = EventHistory::new(&m, events);
        m.intensity(&s, &h, 0, 1, 3, at).unwrap()
    };
    let none = lam(&[]);
    let good = lam(&[event(0, 0, 1, 49)]);
    let bad = lam(&[event(0, 0, 2, 49)]);
    assert!((good - none).abs() < 1e-12);
    assert!(good > bad);
}

#[test]
fn no_training_leaves_parameters_alone() {
    let events = [event(0, 0, 1, 5), event(1, 1, 2, 6), event(2, 0, 0, 7)];
    for cfg in [
        HawkesConfig { epochs: 0, ..small() },
        HawkesConfig {
            negatives: 0,
            epochs: 3,
            ..small()
        },
    ] {
        let (m, mut s) = model(cfg, 9);
        let before = s.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        m.train(&mut s, &events, &mut rng).unwrap();
        for id in s.ids() {
            assert_eq!(s.get(id), before.get(id), "{}", s.name(id));
        }
    }
}

#[test]
fn corruption_stays_within_type() {
    let (m, _) = model(small(), 0);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let company = m.row(1).unwrap();
    for _ in 0..200 {
        let (c, typed) = m.corrupt_tail(company, &mut rng);
        assert!(typed);
        assert_ne!(c, company);
        assert!(m.entity_at(c) <= 2);
    }
    // the only Sector falls back to any other entity
    let sector = m.row(3).unwrap();
    let (c, typed) = m.corrupt_tail(sector, &mut rng);
    assert!(!typed);
    assert_ne!(c, sector);
}

#[test]
fn training_lowers_loss_on_planted_graph() {
    let planted = planted_event_graph(3, 24, 12, 2, 12, 20).unwrap();
    let cfg = HawkesConfig {
        dim: 8,
        epochs: 8,
        batch_size: 64,
        history: 8,
        optimizer: OptimizerConfig::adam(3e-2),
        ..HawkesConfig::default()
    };
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let m = HawkesModel::new(&planted.kg, cfg, &mut store, &mut rng).unwrap();
    let report = m.train(&mut store, &planted.kg.expand_monthly(), &mut rng).unwrap();
    assert_eq!(report.epoch_losses.len(), 8);
    assert!(report.epoch_losses[7] < 0.5 * report.epoch_losses[0], "{:?}", report.epoch_losses);
    assert!(store.all_finite());
}

proptest! {
    #[test]
    fn excitation_magnitude_decays(seed in 0u64..500, months in prop::collection::vec(0i64..20, 1..6), later in 1i64..30) {
        let (m, mut s) = model(small(), seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        s.set(m.params.delta_raw, Matrix::from_f64(2, 1, &[rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]));
        let events: Vec<EventTuple> = months
            .iter()
            .enumerate()
            .map(|(i, &mo)| event(0, (i % 2) as u32, 1 + (i % 3) as u64, mo))
            .collect();
        let h = EventHistory::new(&m, &events);
        let t0 = YearMonth::from_index(20);
        let t1 = YearMonth::from_index(20 + later);
        let a: f64 = m.mutual_intensity(&s, &h, 0, t0).unwrap();
        let b: f64 = m.mutual_intensity(&s, &h, 0, t1).unwrap();
        prop_assert!(a <= 0.0 && b <= 0.0);
        prop_assert!(b.abs() <= a.abs() + 1e-15);

        let mu: f64 = m.base_intensity(&s, 0, 1, 2).unwrap();
        prop_assert!(mu >= 0.0);
        // decay rates stay positive whatever the raw parameter
        prop_assert!(softplus(s.get(m.params.delta_raw)[(0, 0)]) > 0.0);
    }
}

mod common;

use common::*;
use fkge_core::block::EntityBlock;
use fkge_core::evaluation::{rank_query, FilterIndex};
use fkge_core::graph::{load_tsv, write_tsv, NeighborIndex, Split, Vocab, VocabMode};
use fkge_core::linalg::{Matrix, ParamStore};
use fkge_core::rgcn::{Activation, RgcnLayer};
use fkge_core::spiking::{nlif_spike_time, spike_decoder, NlifConfig, SrgcnLayer};
use fkge_core::training::{fit, hinge_loss, TrainConfig};
use fkge_core::{EntityId, Model, ModelKind, Triple};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn batch_gradients_match_finite_differences() {
    for v in grad_variants() {
        let s = grad_check_variant(v, GRAD_INSTANCES);
        assert!(s.checked > 0, "{v:?}: nothing checked");
        assert!(
            s.max_rel_error < v.tolerance(),
            "{v:?}: max rel err {:.3e} over {} coords",
            s.max_rel_error,
            s.checked
        );
    }
}

#[test]
fn closed_form_spike_times_match_euler_integration() {
    let s = ode_check(ODE_INSTANCES, 11);
    assert_eq!(s.disagreements, 0);
    assert!(
        s.fired >= ODE_INSTANCES / 4,
        "only {} instances fired",
        s.fired
    );
    assert!(s.max_error < ODE_TOL, "max error {}", s.max_error);
}

#[test]
fn later_inputs_do_not_move_the_spike() {
    let s = causality_check(500, 3);
    assert!(s.checked > 50, "only {} instances fired early", s.checked);
    assert_eq!(s.violations, 0);
}

#[test]
fn stronger_causal_weights_fire_no_later() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..500 {
        let (mut w, t) = dyadic_inputs(&mut rng, 6);
        let s = nlif_spike_time(&w, &t, 0.5, 1.0);
        if !s.fired {
            continue;
        }
        let k = rng.random_range(0..s.causal);
        w[k] += rng.random_range(0.0..0.5);
        let s2 = nlif_spike_time(&w, &t, 0.5, 1.0);
        assert!(s2.fired);
        assert!(s2.time <= s.time + 1e-12, "{} > {}", s2.time, s.time);
    }
}

#[test]
fn global_time_shift_shifts_spikes() {
    let s = time_shift_check(500, 5);
    assert_eq!(s.violations, 0);
}

#[test]
fn decoder_is_invariant_to_a_common_shift() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..100 {
        let ts: Vec<f64> = (0..8)
            .map(|_| rng.random_range(-64..64) as f64 / 64.0)
            .collect();
        let to: Vec<f64> = (0..8)
            .map(|_| rng.random_range(-64..64) as f64 / 64.0)
            .collect();
        let delta: Vec<f64> = (0..8)
            .map(|_| rng.random_range(-64..64) as f64 / 64.0)
            .collect();
        let c = 0.375;
        let a = spike_decoder(&ts, &delta, &to).unwrap();
        let b = spike_decoder(
            &ts.iter().map(|x| x + c).collect::<Vec<_>>(),
            &delta,
            &to.iter().map(|x| x + c).collect::<Vec<_>>(),
        )
        .unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn srgcn_equals_direct_neuron_on_flattened_events() {
    let kg = tiny_kg();
    let m = kg.num_relations();
    let index = NeighborIndex::build(&kg.train, m, false);
    let dim = 3;
    let mut store = ParamStore::new();
    let layer =
        SrgcnLayer::build(&mut store, "s", m, dim, true, NlifConfig::with_inputs(4), 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = kg.num_entities();
    let ids: Vec<EntityId> = (0..n as u32).map(EntityId).collect();
    let times = Matrix::from_vec(
        n,
        dim,
        (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let input = EntityBlock::new(ids.clone(), n, times.clone()).unwrap();
    let (out, _) = layer.forward(&store, &index, &input, &ids).unwrap();

    for &s in &ids {
        // Flattened event list built from the definition.
        let mut events: Vec<(f64, usize, usize)> = Vec::new();
        let mut coeff = vec![vec![0.0; dim * dim]; n];
        let mut present = vec![false; n];
        for nb in index.neighborhoods(s) {
            let w = store.value(layer.relation_weights[nb.relation.idx()]);
            for &j in &nb.objects {
                present[j.idx()] = true;
                for (c, x) in coeff[j.idx()].iter_mut().zip(w.as_slice()) {
                    *c += x / nb.objects.len() as f64;
                }
            }
        }
        let w0 = store.value(layer.self_loop.unwrap());
        present[s.idx()] = true;
        for (c, x) in coeff[s.idx()].iter_mut().zip(w0.as_slice()) {
            *c += x;
        }
        for (j, _) in present.iter().enumerate().filter(|(_, &p)| p) {
            for k in 0..dim {
                events.push((times.get(j, k), j, k));
            }
        }
        events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let t: Vec<f64> = events.iter().map(|e| e.0).collect();
        for i in 0..dim {
            let w: Vec<f64> = events
                .iter()
                .map(|&(_, j, k)| coeff[j][i * dim + k])
                .collect();
            let direct = nlif_spike_time(&w, &t, 0.5, 1.0);
            assert_eq!(out.row(s).unwrap()[i].to_bits(), direct.time.to_bits());
        }
    }
}

#[test]
fn ranking_matches_brute_force_oracle() {
    for (name, kg) in oracle_graphs() {
        assert!(kg.num_entities() <= 50);
        for kind in ModelKind::ALL {
            let gap = ranking_oracle_gap(kind, &kg, 1, 3);
            assert!(gap <= 0.0, "{name} {kind}: rank gap {gap}");
        }
    }
}

#[test]
fn frozen_convolutions_stay_bit_identical() {
    let kg = fkge_core::graph::gen_federal_states();
    for kind in [
        ModelKind::RgcnTransE,
        ModelKind::RgcnDistMult,
        ModelKind::Hybrid,
        ModelKind::SrGcn,
    ] {
        assert!(frozen_weights_unchanged(kind, &kg, 3), "{kind}");
    }
}

#[test]
fn rgcn_output_ignores_non_neighbours() {
    let kg = tiny_kg();
    let m = kg.num_relations();
    let index = NeighborIndex::build(&kg.train, m, false);
    let mut store = ParamStore::new();
    let layer = RgcnLayer::build(
        &mut store,
        "l",
        m,
        4,
        4,
        true,
        true,
        Activation::Identity,
        0.0,
        3,
    )
    .unwrap();
    let n = kg.num_entities();
    let ids: Vec<EntityId> = (0..n as u32).map(EntityId).collect();
    let x = fkge_core::linalg::init_normal(n, 4, 0.0, 1.0, 1);
    let base = layer
        .forward(
            &store,
            &index,
            &EntityBlock::new(ids.clone(), n, x.clone()).unwrap(),
            &ids,
            None,
        )
        .unwrap()
        .0;
    for &target in &ids {
        let field = fkge_core::block::receptive_field(&index, &[target]);
        for &other in &ids {
            if field.contains(&other) {
                continue;
            }
            let mut y = x.clone();
            y.row_mut(other.idx()).iter_mut().for_each(|v| *v += 10.0);
            let out = layer
                .forward(
                    &store,
                    &index,
                    &EntityBlock::new(ids.clone(), n, y).unwrap(),
                    &ids,
                    None,
                )
                .unwrap()
                .0;
            assert_eq!(out.row(target), base.row(target));
        }
    }
}

#[test]
fn frozen_and_trained_share_first_forward() {
    let kg = tiny_kg();
    let cfg = small_config(ModelKind::RgcnTransE, 3);
    let a = Model::new(
        &TrainConfig {
            frozen: true,
            ..cfg.clone()
        },
        &kg,
    )
    .unwrap();
    let b = Model::new(
        &TrainConfig {
            frozen: false,
            ..cfg
        },
        &kg,
    )
    .unwrap();
    assert_eq!(a.encode_all().unwrap(), b.encode_all().unwrap());
}

#[test]
fn identical_runs_are_identical() {
    let kg = fkge_core::graph::gen_federal_states();
    let cfg = TrainConfig {
        max_epochs: 6,
        eval_every: 2,
        ..small_config(ModelKind::RgcnTransE, 5)
    };
    let a = fit(&cfg, &kg).unwrap();
    let b = fit(&cfg, &kg).unwrap();
    let strip = |r: &fkge_core::training::FitResult| -> Vec<(usize, Option<f64>, Option<f64>)> {
        r.log
            .iter()
            .map(|l| (l.epoch, l.loss, l.valid_mrr))
            .collect()
    };
    assert_eq!(strip(&a), strip(&b));
    for (p, q) in a.model.params.iter().zip(b.model.params.iter()) {
        assert_eq!(p.value(), q.value());
    }
}

#[test]
fn tsv_round_trip() {
    let kg =
        fkge_core::graph::gen_small_kg(&fkge_core::graph::SmallKgSpec::broodwar_like()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.tsv");
    write_tsv(&path, &kg.vocab, &kg.train).unwrap();
    let mut vocab = Vocab::default();
    let again = load_tsv(&path, &mut vocab, VocabMode::Extend).unwrap();
    let names = |v: &Vocab, ts: &[Triple]| -> Vec<(String, String, String)> {
        let mut out: Vec<_> = ts
            .iter()
            .map(|t| {
                (
                    v.entities.name(t.subject.0).to_string(),
                    v.relations.name(t.predicate.0).to_string(),
                    v.entities.name(t.object.0).to_string(),
                )
            })
            .collect();
        out.sort();
        out
    };
    assert_eq!(names(&kg.vocab, &kg.train), names(&vocab, &again));
}

#[test]
fn zero_margin_equal_distances_give_zero_loss() {
    assert_eq!(hinge_loss(0.37, 0.37, 0.0), 0.0);
}

#[test]
fn every_split_lookup_is_covered_by_the_filter() {
    let kg = fkge_core::graph::gen_federal_states();
    let f = FilterIndex::new(&kg);
    for s in Split::ALL {
        for t in kg.split(s) {
            assert!(f
                .known_objects(t.subject, t.predicate)
                .contains(&t.object.0));
            assert!(f
                .known_subjects(t.predicate, t.object)
                .contains(&t.subject.0));
        }
    }
}

proptest! {
    #[test]
    fn affine_score_transform_keeps_ranks(
        d in proptest::collection::vec(-5.0f64..5.0, 2..40),
        truth in 0usize..40,
        filtered in proptest::collection::btree_set(0u32..40, 0..10),
    ) {
        let truth = truth % d.len();
        let known: Vec<u32> = filtered.into_iter().collect();
        let scaled: Vec<f64> = d.iter().map(|x| 2.0 * x + 1.0).collect();
        prop_assert_eq!(
            rank_query(&d, EntityId(truth as u32), &known),
            rank_query(&scaled, EntityId(truth as u32), &known)
        );
    }

    #[test]
    fn filtering_never_worsens_rank(
        d in proptest::collection::vec(-5.0f64..5.0, 2..40),
        truth in 0usize..40,
        filtered in proptest::collection::btree_set(0u32..40, 0..10),
    ) {
        let truth = EntityId((truth % d.len()) as u32);
        let known: Vec<u32> = filtered.into_iter().collect();
        let f = rank_query(&d, truth, &known);
        prop_assert!(f <= rank_query(&d, truth, &[]));
        prop_assert!(f >= 1.0);
    }

    #[test]
    fn truth_is_never_filtered(
        d in proptest::collection::vec(-5.0f64..5.0, 2..40),
        truth in 0usize..40,
    ) {
        let truth = EntityId((truth % d.len()) as u32);
        let all: Vec<u32> = (0..d.len() as u32).collect();
        prop_assert_eq!(rank_query(&d, truth, &all), 1.0);
    }

    #[test]
    fn hinge_is_non_negative(p in -10.0f64..10.0, n in -10.0f64..10.0, g in 0.0f64..5.0) {
        prop_assert!(hinge_loss(p, n, g) >= 0.0);
    }

    #[test]
    fn config_text_round_trips(dim in 1usize..512, margin in 0.0f64..10.0, seed: u64, lr in 1e-5f64..1.0) {
        let cfg = TrainConfig { dim, margin, seed, lr, ..TrainConfig::default() };
        prop_assert_eq!(TrainConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
    }

    #[test]
    fn index_is_order_independent(seed: u64) {
        let kg = fkge_core::graph::gen_federal_states();
        let mut shuffled = kg.train.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut rng);
        let a = NeighborIndex::build(&kg.train, kg.num_relations(), false);
        let b = NeighborIndex::build(&shuffled, kg.num_relations(), false);
        for e in 0..kg.num_entities() as u32 {
            prop_assert_eq!(a.neighborhoods(EntityId(e)), b.neighborhoods(EntityId(e)));
        }
    }
}

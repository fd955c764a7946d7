//! Independent oracles shared by the property tests and the acceptance gate.
#![allow(dead_code)]

use std::collections::HashSet;

use fkge_core::evaluation::{Evaluator, QueryRecord, Side};
use fkge_core::graph::{gen_federal_states, gen_small_kg, SmallKgSpec, Split};
use fkge_core::linalg::{grad_check, GradCheckOptions, ParamId};
use fkge_core::rgcn::Activation;
use fkge_core::spiking::{nlif_spike_time, NlifConfig};
use fkge_core::training::{batch_gradient, batch_objective, TrainConfig, Trainer};
use fkge_core::{EntityId, KnowledgeGraph, Model, ModelKind, Triple};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const NON_SPIKING_GRAD_TOL: f64 = 1e-4;
pub const SPIKING_GRAD_TOL: f64 = 1e-3;
pub const GRAD_INSTANCES: u64 = 20;
pub const ODE_DT: f64 = 1e-5;
pub const ODE_TOL: f64 = 1e-3;
pub const ODE_INSTANCES: usize = 100;

/// Six entities, two relations.
pub fn tiny_kg() -> KnowledgeGraph {
    let t = |s: &'static str, p: &'static str, o: &'static str| (s, p, o);
    KnowledgeGraph::from_named(
        &[
            t("a", "r", "b"),
            t("b", "r", "c"),
            t("c", "q", "a"),
            t("d", "r", "a"),
            t("d", "q", "e"),
            t("e", "r", "f"),
            t("f", "q", "b"),
            t("a", "q", "d"),
            t("b", "q", "e"),
        ],
        &[t("c", "r", "d"), t("f", "r", "a")],
        &[t("e", "q", "c"), t("a", "r", "f")],
    )
    .expect("tiny graph")
}

#[derive(Clone, Copy, Debug)]
pub struct GradVariant {
    pub kind: ModelKind,
    pub frozen: bool,
    pub layers: usize,
    pub activation: Activation,
    pub inverse: bool,
    pub self_loop: bool,
}

impl GradVariant {
    pub fn plain(kind: ModelKind) -> Self {
        GradVariant {
            kind,
            frozen: true,
            layers: 1,
            activation: Activation::Identity,
            inverse: false,
            self_loop: true,
        }
    }

    pub fn tolerance(&self) -> f64 {
        if self.kind.is_spiking() {
            SPIKING_GRAD_TOL
        } else {
            NON_SPIKING_GRAD_TOL
        }
    }
}

/// Every model kind plus trained, stacked, ReLU, self-loop-free and
/// inverse-relation convolutions.
pub fn grad_variants() -> Vec<GradVariant> {
    let mut v: Vec<GradVariant> = ModelKind::ALL
        .iter()
        .map(|&k| GradVariant::plain(k))
        .collect();
    for kind in [ModelKind::RgcnTransE, ModelKind::RgcnDistMult] {
        v.push(GradVariant {
            frozen: false,
            ..GradVariant::plain(kind)
        });
    }
    v.push(GradVariant {
        frozen: false,
        layers: 2,
        activation: Activation::Relu,
        inverse: true,
        self_loop: true,
        kind: ModelKind::RgcnTransE,
    });
    v.push(GradVariant {
        frozen: false,
        self_loop: false,
        ..GradVariant::plain(ModelKind::RgcnDistMult)
    });
    v.push(GradVariant {
        self_loop: false,
        inverse: true,
        ..GradVariant::plain(ModelKind::Hybrid)
    });
    v.push(GradVariant {
        self_loop: false,
        inverse: true,
        ..GradVariant::plain(ModelKind::SrGcn)
    });
    v
}

pub struct GradSummary {
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

/// Analytic batch gradient against central differences of the batch
/// objective, over `instances` seeds of the initial parameters and the
/// negative sample.
pub fn grad_check_variant(v: GradVariant, instances: u64) -> GradSummary {
    let kg = tiny_kg();
    let mut summary = GradSummary {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    for seed in 0..instances {
        let cfg = TrainConfig {
            model: v.kind,
            dim: 4,
            spike_inputs: 5,
            frozen: v.frozen,
            layers: v.layers,
            activation: v.activation,
            add_inverse_relations: v.inverse,
            self_loop: v.self_loop,
            dropout: 0.0,
            negatives: 2,
            margin: 1.0,
            seed: 1000 + seed,
            ..TrainConfig::default()
        };
        let model = Model::new(&cfg, &kg).expect("model");
        let mut trainer = Trainer::from_model(model, cfg.clone());
        let pairs = trainer.make_pairs(&kg.train, kg.num_entities());
        let obj = cfg.objective();
        let Model { arch, mut params } = trainer.model;
        params.zero_grads();
        batch_gradient(&arch, &mut params, &pairs, &obj, None).expect("gradient");
        let ids: Vec<ParamId> = (0..params.len())
            .map(ParamId)
            .filter(|&id| !params.get(id).is_frozen())
            .collect();
        let opts = GradCheckOptions {
            eps: 1e-5,
            kink_tol: 1e-4,
            min_magnitude: 1e-6,
        };
        let r = grad_check(&mut params, &ids, &opts, |s| {
            batch_objective(&arch, s, &pairs, &obj).expect("objective")
        });
        summary.max_rel_error = summary.max_rel_error.max(r.max_rel_error);
        summary.checked += r.checked;
        summary.skipped += r.skipped_kinks;
    }
    summary
}

/// First threshold crossing of `u' = I`, `I' = −I/τ` with jumps `w_j/τ` at
/// the input times, integrated by explicit Euler. `None` if the potential
/// stays below threshold until `horizon`.
pub fn nlif_euler(
    weights: &[f64],
    times: &[f64],
    tau: f64,
    threshold: f64,
    dt: f64,
    horizon: f64,
) -> Option<f64> {
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let mut t = times[order[0]];
    let (mut u, mut current) = (0.0f64, 0.0f64);
    let mut next = 0;
    while t <= horizon {
        while next < order.len() && times[order[next]] <= t {
            current += weights[order[next]] / tau;
            next += 1;
        }
        let u_next = u + dt * current;
        if u_next >= threshold {
            // Linear interpolation inside the step.
            return Some(t + dt * (threshold - u) / (u_next - u));
        }
        u = u_next;
        current -= dt * current / tau;
        t += dt;
    }
    None
}

pub struct OdeSummary {
    pub max_error: f64,
    pub fired: usize,
    pub silent: usize,
    pub disagreements: usize,
}

pub fn ode_check(instances: usize, seed: u64) -> OdeSummary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tau = 0.5;
    let threshold = 1.0;
    let mut out = OdeSummary {
        max_error: 0.0,
        fired: 0,
        silent: 0,
        disagreements: 0,
    };
    for _ in 0..instances {
        let n = rng.random_range(1..=8);
        let mut times: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        times.sort_by(f64::total_cmp);
        let weights: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..1.5)).collect();
        let closed = nlif_spike_time(&weights, &times, tau, threshold);
        let horizon = times[n - 1] + 3.0 * tau;
        let ode = nlif_euler(&weights, &times, tau, threshold, ODE_DT, horizon);
        match (closed.fired, ode) {
            (true, Some(t)) => {
                out.fired += 1;
                out.max_error = out.max_error.max((t - closed.time).abs());
            }
            (false, None) => out.silent += 1,
            // The closed form also fires after the horizon, where the
            // integration stops.
            (true, None) if closed.time > horizon => out.silent += 1,
            _ => out.disagreements += 1,
        }
    }
    out
}

/// Distances of every candidate triple, computed per triple without query
/// vectors, and filtered by a linear scan of all known triples.
pub fn brute_force_ranks(
    model: &Model,
    kg: &KnowledgeGraph,
    split: Split,
) -> Vec<(QueryRecord, f64)> {
    let known: HashSet<Triple> = kg.all_triples().copied().collect();
    let mut out = Vec::new();
    for &t in kg.split(split) {
        for side in [Side::Object, Side::Subject] {
            let candidate = |e: u32| match side {
                Side::Object => Triple {
                    object: EntityId(e),
                    ..t
                },
                Side::Subject => Triple {
                    subject: EntityId(e),
                    ..t
                },
            };
            let d_true = model.distance(t).expect("distance");
            let (mut better, mut ties, mut near) = (0usize, 0usize, 0usize);
            for e in 0..kg.num_entities() as u32 {
                let c = candidate(e);
                if c == t || known.contains(&c) {
                    continue;
                }
                let d = model.distance(c).expect("distance");
                if (d - d_true).abs() <= 1e-9 * (1.0 + d_true.abs()) && d != d_true {
                    near += 1;
                }
                if d < d_true {
                    better += 1;
                } else if d == d_true {
                    ties += 1;
                }
            }
            let rank = 1.0 + better as f64 + ties as f64 / 2.0;
            out.push((
                QueryRecord {
                    triple: t,
                    side,
                    rank,
                },
                near as f64,
            ));
        }
    }
    out
}

/// Largest disagreement between the evaluator and the brute-force oracle,
/// beyond what floating-point near-ties can explain.
pub fn ranking_oracle_gap(kind: ModelKind, kg: &KnowledgeGraph, seed: u64, epochs: usize) -> f64 {
    let cfg = small_config(kind, seed);
    let mut trainer = Trainer::new(cfg, kg).expect("trainer");
    for _ in 0..epochs {
        trainer.train_epoch(kg).expect("epoch");
    }
    let model = trainer.model;
    let mut worst: f64 = 0.0;
    for split in [Split::Valid, Split::Test] {
        let report = Evaluator::new(kg)
            .evaluate(&model, split, kg.split(split))
            .expect("evaluate");
        let oracle = brute_force_ranks(&model, kg, split);
        assert_eq!(report.queries.len(), oracle.len());
        for (q, (o, near)) in report.queries.iter().zip(&oracle) {
            assert_eq!((q.triple, q.side), (o.triple, o.side));
            let gap = (q.rank - o.rank).abs() - 0.5 * near;
            worst = worst.max(gap);
        }
    }
    worst
}

pub fn small_config(kind: ModelKind, seed: u64) -> TrainConfig {
    TrainConfig {
        model: kind,
        dim: 8,
        spike_inputs: 8,
        negatives: 3,
        batch_size: 16,
        lr: 1e-2,
        dropout: if kind.has_rgcn() { 0.2 } else { 0.0 },
        seed,
        ..TrainConfig::default()
    }
}

pub fn oracle_graphs() -> Vec<(&'static str, KnowledgeGraph)> {
    vec![
        ("tiny", tiny_kg()),
        ("federal-states", gen_federal_states()),
        (
            "synthetic-broodwar-like",
            gen_small_kg(&SmallKgSpec::broodwar_like()).expect("generator"),
        ),
    ]
}

/// Trains a frozen R-GCN for a few epochs and reports whether every
/// convolution weight kept its exact bit pattern.
pub fn frozen_weights_unchanged(kind: ModelKind, kg: &KnowledgeGraph, epochs: usize) -> bool {
    let cfg = TrainConfig {
        frozen: true,
        ..small_config(kind, 7)
    };
    let mut trainer = Trainer::new(cfg, kg).expect("trainer");
    let ids = trainer.model.conv_weights();
    assert!(!ids.is_empty());
    let bits = |m: &Model| -> Vec<Vec<u64>> {
        ids.iter()
            .map(|&id| {
                m.params
                    .value(id)
                    .as_slice()
                    .iter()
                    .map(|x| x.to_bits())
                    .collect()
            })
            .collect()
    };
    let before = bits(&trainer.model);
    for _ in 0..epochs {
        trainer.train_epoch(kg).expect("epoch");
        if bits(&trainer.model) != before {
            return false;
        }
    }
    true
}

pub fn nlif_config() -> NlifConfig {
    NlifConfig::default()
}

/// Weights and sorted input times on a 1/64 grid, so shifts by multiples of
/// 1/8 are exact.
pub fn dyadic_inputs(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut times: Vec<f64> = (0..n)
        .map(|_| rng.random_range(-64..=64) as f64 / 64.0)
        .collect();
    times.sort_by(f64::total_cmp);
    let weights = (0..n).map(|_| rng.random_range(-0.5..1.5)).collect();
    (weights, times)
}

pub struct InvariantSummary {
    pub checked: usize,
    pub violations: usize,
}

/// Perturbs the weights of inputs at or after the spike and counts runs
/// where the spike time or causal set moved at all.
pub fn causality_check(instances: usize, seed: u64) -> InvariantSummary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = InvariantSummary {
        checked: 0,
        violations: 0,
    };
    for _ in 0..instances {
        let (mut w, t) = dyadic_inputs(&mut rng, 10);
        let s = nlif_spike_time(&w, &t, 0.5, 1.0);
        if !s.fired || s.causal == w.len() {
            continue;
        }
        for k in s.causal..w.len() {
            if t[k] < s.time {
                out.violations += 1;
            }
            w[k] += rng.random_range(-3.0..3.0);
        }
        let s2 = nlif_spike_time(&w, &t, 0.5, 1.0);
        if s2.time.to_bits() != s.time.to_bits() || s2.causal != s.causal {
            out.violations += 1;
        }
        out.checked += 1;
    }
    out
}

/// Shifts all input times by a multiple of 1/8 and counts runs where the
/// spike did not move by exactly that amount.
pub fn time_shift_check(instances: usize, seed: u64) -> InvariantSummary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = InvariantSummary {
        checked: 0,
        violations: 0,
    };
    for _ in 0..instances {
        let (w, t) = dyadic_inputs(&mut rng, 8);
        let shift = rng.random_range(-16..=16) as f64 / 8.0;
        let shifted: Vec<f64> = t.iter().map(|x| x + shift).collect();
        let a = nlif_spike_time(&w, &t, 0.5, 1.0);
        let b = nlif_spike_time(&w, &shifted, 0.5, 1.0);
        let moved = !a.fired || (b.time - a.time - shift).abs() < 1e-12;
        if a.fired != b.fired || a.causal != b.causal || !moved {
            out.violations += 1;
        }
        out.checked += 1;
    }
    out
}

//! Small bundled datasets: a geographic graph of the German federal states
//! and a seeded typed random graph.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::KnowledgeGraph;
use crate::error::{Error, Result};

const NEIGHBOR_OF: &str = "neighborOf";
const LOCATED_IN: &str = "locatedIn";

const STATES: [&str; 16] = [
    "baden-wuerttemberg",
    "bavaria",
    "berlin",
    "brandenburg",
    "bremen",
    "hamburg",
    "hesse",
    "lower-saxony",
    "mecklenburg-vorpommern",
    "north-rhine-westphalia",
    "rhineland-palatinate",
    "saarland",
    "saxony",
    "saxony-anhalt",
    "schleswig-holstein",
    "thuringia",
];

const FOREIGN: [&str; 9] = [
    "denmark",
    "netherlands",
    "belgium",
    "luxembourg",
    "france",
    "switzerland",
    "austria",
    "czechia",
    "poland",
];

/// Shared land borders between federal states.
const STATE_BORDERS: [(&str, &str); 29] = [
    ("baden-wuerttemberg", "bavaria"),
    ("baden-wuerttemberg", "hesse"),
    ("baden-wuerttemberg", "rhineland-palatinate"),
    ("bavaria", "hesse"),
    ("bavaria", "thuringia"),
    ("bavaria", "saxony"),
    ("berlin", "brandenburg"),
    ("brandenburg", "mecklenburg-vorpommern"),
    ("brandenburg", "saxony-anhalt"),
    ("brandenburg", "saxony"),
    ("brandenburg", "lower-saxony"),
    ("bremen", "lower-saxony"),
    ("hamburg", "schleswig-holstein"),
    ("hamburg", "lower-saxony"),
    ("hesse", "thuringia"),
    ("hesse", "lower-saxony"),
    ("hesse", "north-rhine-westphalia"),
    ("hesse", "rhineland-palatinate"),
    ("lower-saxony", "schleswig-holstein"),
    ("lower-saxony", "mecklenburg-vorpommern"),
    ("lower-saxony", "saxony-anhalt"),
    ("lower-saxony", "thuringia"),
    ("lower-saxony", "north-rhine-westphalia"),
    ("mecklenburg-vorpommern", "schleswig-holstein"),
    ("north-rhine-westphalia", "rhineland-palatinate"),
    ("rhineland-palatinate", "saarland"),
    ("saxony", "thuringia"),
    ("saxony", "saxony-anhalt"),
    ("saxony-anhalt", "thuringia"),
];

/// A subset of the borders between federal states and neighbouring countries.
const FOREIGN_BORDERS: [(&str, &str); 16] = [
    ("schleswig-holstein", "denmark"),
    ("lower-saxony", "netherlands"),
    ("north-rhine-westphalia", "netherlands"),
    ("north-rhine-westphalia", "belgium"),
    ("rhineland-palatinate", "belgium"),
    ("rhineland-palatinate", "luxembourg"),
    ("rhineland-palatinate", "france"),
    ("saarland", "france"),
    ("saarland", "luxembourg"),
    ("baden-wuerttemberg", "france"),
    ("baden-wuerttemberg", "switzerland"),
    ("bavaria", "austria"),
    ("bavaria", "czechia"),
    ("saxony", "czechia"),
    ("saxony", "poland"),
    ("brandenburg", "poland"),
];

const FEDERAL_STATES_SEED: u64 = 2021;

type Named = (String, String, String);

/// 27 entities, 2 relations, 95/10/10 triples. Deterministic.
pub fn gen_federal_states() -> KnowledgeGraph {
    let mut triples: Vec<Named> = Vec::with_capacity(115);
    let mut both_ways = |a: &str, b: &str| {
        triples.push((a.into(), NEIGHBOR_OF.into(), b.into()));
        triples.push((b.into(), NEIGHBOR_OF.into(), a.into()));
    };
    for (a, b) in STATE_BORDERS.iter().chain(&FOREIGN_BORDERS) {
        both_ways(a, b);
    }
    for s in STATES {
        triples.push((s.into(), LOCATED_IN.into(), "germany".into()));
    }
    for c in FOREIGN {
        triples.push((c.into(), LOCATED_IN.into(), "europe".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(FEDERAL_STATES_SEED);
    let (train, valid, test) =
        split_covered(triples, 10, 10, &mut rng).expect("federal states split is feasible");
    KnowledgeGraph::from_named(&train, &valid, &test).expect("federal states graph is valid")
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct SmallKgSpec {
    pub n_entities: usize,
    pub n_relations: usize,
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl SmallKgSpec {
    /// Same statistics as the Brood War graph: 32 entities, 5 relations,
    /// 65/11/11 triples.
    pub fn broodwar_like() -> Self {
        SmallKgSpec {
            n_entities: 32,
            n_relations: 5,
            n_train: 65,
            n_valid: 11,
            n_test: 11,
            seed: 7,
        }
    }
}

const TYPE_NAMES: [&str; 4] = ["unit", "building", "faction", "ability"];

/// Seeded typed random graph.
///
/// Entities are assigned a type (`id % types`) and a group (`(id / types) % 2`).
/// Relation `p` links entities of one type to entities of another type within
/// the same group, which gives the graph learnable relational structure.
pub fn gen_small_kg(spec: &SmallKgSpec) -> Result<KnowledgeGraph> {
    let SmallKgSpec {
        n_entities,
        n_relations,
        n_train,
        n_valid,
        n_test,
        seed,
    } = *spec;
    if n_entities < 2 || n_relations == 0 {
        return Err(Error::Config(
            "need at least 2 entities and 1 relation".into(),
        ));
    }
    let n_types = (n_entities / 4).clamp(1, TYPE_NAMES.len());
    let groups = 2;
    let type_of = |e: usize| e % n_types;
    let group_of = |e: usize| (e / n_types) % groups;
    let name = |e: usize| format!("{}_{e:03}", TYPE_NAMES[type_of(e)]);

    let mut candidates: Vec<Named> = Vec::new();
    for p in 0..n_relations {
        let domain = p % n_types;
        let range = (p + 1 + p / n_types) % n_types;
        for s in (0..n_entities).filter(|&s| type_of(s) == domain) {
            for o in (0..n_entities).filter(|&o| type_of(o) == range && o != s) {
                if group_of(s) == group_of(o) {
                    candidates.push((name(s), format!("rel_{p}"), name(o)));
                }
            }
        }
    }
    let total = n_train + n_valid + n_test;
    if candidates.len() < total {
        return Err(Error::Config(format!(
            "only {} distinct typed triples available, {total} requested",
            candidates.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    candidates.shuffle(&mut rng);
    candidates.truncate(total);
    let (train, valid, test) =
        split_covered(candidates, n_valid, n_test, &mut rng).ok_or_else(|| {
            Error::Config(
                "cannot hold out the requested triples while keeping every entity in train".into(),
            )
        })?;
    KnowledgeGraph::from_named(&train, &valid, &test)
}

/// Shuffles `triples` and moves `n_valid + n_test` of them out of the
/// training split such that every held-out subject and object still occurs
/// in at least one training triple.
fn split_covered(
    mut triples: Vec<Named>,
    n_valid: usize,
    n_test: usize,
    rng: &mut ChaCha8Rng,
) -> Option<(Vec<Named>, Vec<Named>, Vec<Named>)> {
    use std::collections::HashMap;
    triples.shuffle(rng);
    let mut count: HashMap<String, usize> = HashMap::new();
    for (s, _, o) in &triples {
        *count.entry(s.clone()).or_default() += 1;
        *count.entry(o.clone()).or_default() += 1;
    }
    let mut held = Vec::new();
    let mut train = Vec::new();
    for t in triples {
        let (s, _, o) = &t;
        let removable = if s == o {
            count[s] > 2
        } else {
            count[s] > 1 && count[o] > 1
        };
        if held.len() < n_valid + n_test && removable {
            *count.get_mut(s).unwrap() -= 1;
            *count.get_mut(o).unwrap() -= 1;
            held.push(t);
        } else {
            train.push(t);
        }
    }
    if held.len() < n_valid + n_test {
        return None;
    }
    let test = held.split_off(n_valid);
    Some((train, held, test))
}

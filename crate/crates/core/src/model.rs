//! Encoder and decoder composition for every supported model family.

use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;

use crate::block::EntityBlock;
use crate::error::{Error, Result};
use crate::graph::{EntityId, KnowledgeGraph, NeighborIndex, RelationId, Triple};
use crate::linalg::{init_normal, init_xavier, seed_for, Matrix, Param, ParamId, ParamStore};
use crate::rgcn::{Activation, RgcnStack, StackCache, XAVIER_GAIN};
use crate::shallow::Decoder;
use crate::spiking::{
    CausalStats, NlifConfig, PopulationCache, SpikePopulations, SrgcnCache, SrgcnLayer,
};
use crate::training::TrainConfig;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    TransE,
    DistMult,
    RgcnTransE,
    RgcnDistMult,
    SpikE,
    Hybrid,
    SrGcn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 7] = [
        ModelKind::TransE,
        ModelKind::DistMult,
        ModelKind::RgcnTransE,
        ModelKind::RgcnDistMult,
        ModelKind::SpikE,
        ModelKind::Hybrid,
        ModelKind::SrGcn,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::TransE => "transe",
            ModelKind::DistMult => "distmult",
            ModelKind::RgcnTransE => "rgcn-transe",
            ModelKind::RgcnDistMult => "rgcn-distmult",
            ModelKind::SpikE => "spike",
            ModelKind::Hybrid => "hybrid",
            ModelKind::SrGcn => "srgcn",
        }
    }

    pub fn is_spiking(self) -> bool {
        matches!(
            self,
            ModelKind::SpikE | ModelKind::Hybrid | ModelKind::SrGcn
        )
    }

    pub fn has_rgcn(self) -> bool {
        matches!(
            self,
            ModelKind::RgcnTransE | ModelKind::RgcnDistMult | ModelKind::Hybrid
        )
    }

    pub fn decoder(self) -> Decoder {
        match self {
            ModelKind::TransE | ModelKind::RgcnTransE => Decoder::TransE,
            ModelKind::DistMult | ModelKind::RgcnDistMult => Decoder::DistMult,
            ModelKind::SpikE | ModelKind::Hybrid | ModelKind::SrGcn => Decoder::SpikeL1,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace(['_', '+'], "-");
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == norm)
            .or(match norm.as_str() {
                "spike-e" => Some(ModelKind::SpikE),
                "sr-gcn" => Some(ModelKind::SrGcn),
                _ => None,
            })
            .ok_or_else(|| Error::Config(format!("unknown model `{s}`")))
    }
}

#[derive(Clone, Debug)]
enum Base {
    Lookup(ParamId),
    Spiking(SpikePopulations),
}

#[derive(Clone, Debug)]
enum Conv {
    None,
    Rgcn(RgcnStack),
    Srgcn(SrgcnLayer),
}

#[derive(Clone, Debug)]
enum ConvCache {
    None,
    Rgcn(StackCache),
    Srgcn(SrgcnCache),
}

/// Forward state of one encoder call, consumed by [`Arch::backward`].
#[derive(Clone, Debug)]
pub struct Encoded {
    /// Final encodings of the requested entities.
    pub output: EntityBlock,
    base: EntityBlock,
    base_spikes: Option<PopulationCache>,
    conv: ConvCache,
}

impl Encoded {
    /// Entities whose initial parameters took part in the forward pass.
    pub fn input_entities(&self) -> &[EntityId] {
        self.base.ids()
    }
}

/// Model structure without parameter values.
#[derive(Clone, Debug)]
pub struct Arch {
    pub kind: ModelKind,
    pub dim: usize,
    pub num_entities: usize,
    pub num_relations: usize,
    pub relation: ParamId,
    pub decoder: Decoder,
    pub index: NeighborIndex,
    base: Base,
    conv: Conv,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub arch: Arch,
    pub params: ParamStore,
}

impl Model {
    pub fn new(cfg: &TrainConfig, kg: &KnowledgeGraph) -> Result<Self> {
        cfg.validate()?;
        let n = kg.num_entities();
        let m = kg.num_relations();
        let d = cfg.dim;
        let seed = cfg.seed;
        let kind = cfg.model;
        let index = NeighborIndex::build(&kg.train, m, cfg.add_inverse_relations);
        let mut store = ParamStore::new();

        let base = if kind.is_spiking() {
            let nlif = NlifConfig {
                tau: cfg.tau,
                threshold: cfg.threshold,
                inputs: cfg.spike_inputs,
                ..Default::default()
            };
            Base::Spiking(SpikePopulations::build(
                &mut store,
                "spike.weights",
                n,
                d,
                nlif,
                seed,
            )?)
        } else {
            let e = init_normal(n, d, 0.0, 1.0, seed_for(seed, "entity"));
            Base::Lookup(store.add(Param::new("entity", e, false).with_l2(cfg.l2_weight)))
        };
        let relation = store.add(
            Param::new(
                "relation",
                init_xavier(m.max(1), d, XAVIER_GAIN, seed_for(seed, "relation")),
                false,
            )
            .with_l2(if kind.is_spiking() {
                0.0
            } else {
                cfg.l2_weight
            }),
        );

        let conv = match kind {
            ModelKind::TransE | ModelKind::DistMult | ModelKind::SpikE => Conv::None,
            ModelKind::RgcnTransE | ModelKind::RgcnDistMult | ModelKind::Hybrid => {
                if kind == ModelKind::Hybrid && !cfg.frozen {
                    return Err(Error::Config(
                        "the hybrid model uses a frozen convolution".into(),
                    ));
                }
                let layers = (0..cfg.layers)
                    .map(|l| {
                        crate::rgcn::RgcnLayer::build(
                            &mut store,
                            &format!("rgcn.{l}"),
                            index.num_relations(),
                            d,
                            d,
                            cfg.self_loop,
                            cfg.frozen,
                            if l + 1 == cfg.layers {
                                Activation::Identity
                            } else {
                                cfg.activation
                            },
                            cfg.dropout,
                            seed,
                        )
                    })
                    .collect::<Result<Vec<_>>>()?;
                Conv::Rgcn(RgcnStack { layers })
            }
            ModelKind::SrGcn => {
                if !cfg.frozen {
                    return Err(Error::Config(
                        "the spiking convolution is always frozen".into(),
                    ));
                }
                let Base::Spiking(pop) = &base else {
                    unreachable!()
                };
                Conv::Srgcn(SrgcnLayer::build(
                    &mut store,
                    "srgcn",
                    index.num_relations(),
                    d,
                    cfg.self_loop,
                    pop.config,
                    seed,
                )?)
            }
        };

        Ok(Model {
            arch: Arch {
                kind,
                dim: d,
                num_entities: n,
                num_relations: m,
                relation,
                decoder: kind.decoder(),
                index,
                base,
                conv,
            },
            params: store,
        })
    }

    pub fn encode_all(&self) -> Result<Matrix> {
        self.arch.encode_all(&self.params)
    }

    pub fn distance(&self, t: Triple) -> Result<f64> {
        self.arch.distance(&self.params, t)
    }

    pub fn inductive_embed(&self, neighbors: &[(RelationId, EntityId)]) -> Result<Vec<f64>> {
        self.arch.inductive_embed(&self.params, neighbors)
    }

    /// Ids of all convolution weight tensors.
    pub fn conv_weights(&self) -> Vec<ParamId> {
        self.arch.conv_weights()
    }
}

impl Arch {
    pub fn entity_param(&self) -> Option<ParamId> {
        match &self.base {
            Base::Lookup(id) => Some(*id),
            Base::Spiking(_) => None,
        }
    }

    pub fn spike_populations(&self) -> Option<&SpikePopulations> {
        match &self.base {
            Base::Spiking(p) => Some(p),
            Base::Lookup(_) => None,
        }
    }

    pub fn rgcn(&self) -> Option<&RgcnStack> {
        match &self.conv {
            Conv::Rgcn(s) => Some(s),
            _ => None,
        }
    }

    pub fn srgcn(&self) -> Option<&SrgcnLayer> {
        match &self.conv {
            Conv::Srgcn(s) => Some(s),
            _ => None,
        }
    }

    pub fn conv_weights(&self) -> Vec<ParamId> {
        match &self.conv {
            Conv::None => Vec::new(),
            Conv::Rgcn(s) => s
                .layers
                .iter()
                .flat_map(|l| l.relation_weights.iter().copied().chain(l.self_loop))
                .collect(),
            Conv::Srgcn(l) => l
                .relation_weights
                .iter()
                .copied()
                .chain(l.self_loop)
                .collect(),
        }
    }

    fn input_field(&self, targets: &[EntityId]) -> Vec<EntityId> {
        match &self.conv {
            Conv::None => targets.to_vec(),
            Conv::Rgcn(stack) => stack.fields(&self.index, targets).swap_remove(0),
            Conv::Srgcn(_) => crate::block::receptive_field(&self.index, targets),
        }
    }

    fn encode_base(
        &self,
        store: &ParamStore,
        ids: Vec<EntityId>,
    ) -> Result<(EntityBlock, Option<PopulationCache>)> {
        match &self.base {
            Base::Lookup(id) => Ok((EntityBlock::gather(ids, store.value(*id))?, None)),
            Base::Spiking(pop) => {
                let (block, cache) = pop.encode(store, ids)?;
                Ok((block, Some(cache)))
            }
        }
    }

    /// Encodes `targets` (sorted, distinct). Dropout is active when `rng` is
    /// given.
    pub fn encode(
        &self,
        store: &ParamStore,
        targets: &[EntityId],
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Encoded> {
        let field = self.input_field(targets);
        let (base, base_spikes) = self.encode_base(store, field)?;
        let (output, conv) = match &self.conv {
            Conv::None => (base.clone(), ConvCache::None),
            Conv::Rgcn(stack) => {
                let cache = stack.forward(store, &self.index, base.clone(), targets, rng)?;
                (cache.output().clone(), ConvCache::Rgcn(cache))
            }
            Conv::Srgcn(layer) => {
                let (out, cache) = layer.forward(store, &self.index, &base, targets)?;
                (out, ConvCache::Srgcn(cache))
            }
        };
        Ok(Encoded {
            output,
            base,
            base_spikes,
            conv,
        })
    }

    /// Accumulates parameter gradients given `upstream = ∂L/∂output`.
    pub fn backward(&self, store: &mut ParamStore, enc: &Encoded, upstream: &Matrix) -> Result<()> {
        let d_base = match (&self.conv, &enc.conv) {
            (Conv::None, ConvCache::None) => upstream.clone(),
            (Conv::Rgcn(stack), ConvCache::Rgcn(cache)) => {
                stack.backward(store, &self.index, cache, upstream)?
            }
            (Conv::Srgcn(layer), ConvCache::Srgcn(cache)) => {
                layer.backward(&enc.base, cache, upstream)?
            }
            _ => return Err(Error::Shape("encoder cache from another model".into())),
        };
        match &self.base {
            Base::Lookup(id) => {
                let grad = store.get_mut(*id).grad_mut();
                for (r, e) in enc.base.ids().iter().enumerate() {
                    crate::linalg::axpy(1.0, d_base.row(r), grad.row_mut(e.idx()));
                }
            }
            Base::Spiking(pop) => {
                let cache = enc
                    .base_spikes
                    .as_ref()
                    .ok_or_else(|| Error::Shape("missing spike cache".into()))?;
                pop.backward(store, &enc.base, cache, &d_base);
            }
        }
        Ok(())
    }

    pub fn all_entities(&self) -> Vec<EntityId> {
        (0..self.num_entities as u32).map(EntityId).collect()
    }

    /// `num_entities x dim` encodings in evaluation mode.
    pub fn encode_all(&self, store: &ParamStore) -> Result<Matrix> {
        Ok(self
            .encode(store, &self.all_entities(), None)?
            .output
            .values)
    }

    pub fn distance(&self, store: &ParamStore, t: Triple) -> Result<f64> {
        let targets = crate::block::distinct(vec![t.subject, t.object]);
        let enc = self.encode(store, &targets, None)?;
        let r = store.value(self.relation).row(t.predicate.idx());
        let hs = enc.output.row(t.subject).expect("encoded");
        let ho = enc.output.row(t.object).expect("encoded");
        Ok(self.decoder.distance(hs, r, ho))
    }

    /// Encoding of a node outside the graph from its outgoing edges, using
    /// trained embeddings of the neighbours only.
    pub fn inductive_embed(
        &self,
        store: &ParamStore,
        neighbors: &[(RelationId, EntityId)],
    ) -> Result<Vec<f64>> {
        let Conv::Rgcn(stack) = &self.conv else {
            return Err(Error::Inductive(format!(
                "{} has no graph convolution",
                self.kind
            )));
        };
        if self.kind.is_spiking() {
            return Err(Error::Inductive(
                "inductive embedding needs a real-valued encoder".into(),
            ));
        }
        if neighbors.is_empty() {
            return Err(Error::Inductive("new node has no neighbours".into()));
        }
        for &(p, j) in neighbors {
            if p.idx() >= self.index.num_relations() || j.idx() >= self.num_entities {
                return Err(Error::Inductive(format!(
                    "unknown neighbour ({}, {})",
                    p.0, j.0
                )));
            }
        }
        let all = self.all_entities();
        let (mut input, _) = self.encode_base(store, all.clone())?;
        let (last, inner) = stack.layers.split_last().expect("at least one layer");
        for layer in inner {
            input = layer.forward(store, &self.index, &input, &all, None)?.0;
        }
        last.embed_new(store, &input, neighbors)
    }

    /// Spikes of the initial populations of `ids`.
    pub fn population_spikes(
        &self,
        store: &ParamStore,
        ids: &[EntityId],
    ) -> Option<Vec<Vec<crate::spiking::Spike>>> {
        let pop = self.spike_populations()?;
        let w = store.value(pop.weights);
        Some(
            ids.iter()
                .map(|&e| (0..pop.dim).map(|i| pop.neuron_spike(w, e, i)).collect())
                .collect(),
        )
    }

    /// Output spikes and causal-event statistics of the spiking convolution
    /// over all entities.
    pub fn srgcn_report(
        &self,
        store: &ParamStore,
    ) -> Result<Option<(Vec<Vec<crate::spiking::Spike>>, CausalStats)>> {
        let Conv::Srgcn(layer) = &self.conv else {
            return Ok(None);
        };
        let enc = self.encode(store, &self.all_entities(), None)?;
        let ConvCache::Srgcn(cache) = &enc.conv else {
            unreachable!()
        };
        let spikes = layer.spikes(cache).map(<[_]>::to_vec).collect();
        Ok(Some((spikes, layer.causal_stats(cache))))
    }
}

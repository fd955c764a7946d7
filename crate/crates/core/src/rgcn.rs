//! Relational graph convolution with mean aggregation per relation, an
//! optional self-loop and hand-written backward pass.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::block::{receptive_field, EntityBlock};
use crate::error::{Error, Result};
use crate::graph::{EntityId, NeighborIndex, RelationId};
use crate::linalg::{axpy, gemm, init_xavier, seed_for, Matrix, Param, ParamId, ParamStore};

pub const XAVIER_GAIN: f64 = std::f64::consts::SQRT_2;

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" | "none" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            _ => Err(Error::Config(format!("unknown activation `{s}`"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RgcnLayer {
    /// One `d_out x d_in` weight per relation slot of the neighbour index.
    pub relation_weights: Vec<ParamId>,
    pub self_loop: Option<ParamId>,
    pub activation: Activation,
    pub dropout: f64,
    pub frozen: bool,
    pub dim_in: usize,
    pub dim_out: usize,
}

#[derive(Clone, Debug)]
struct Group {
    relation: RelationId,
    /// Output rows that receive this relation's message.
    rows: Vec<usize>,
    /// Mean of the neighbours' input rows, one row per entry of `rows`.
    mean: Matrix,
}

/// Forward intermediates consumed by [`RgcnLayer::backward`].
#[derive(Clone, Debug)]
pub struct LayerCache {
    groups: Vec<Group>,
    pre_activation: Option<Matrix>,
    mask: Option<Vec<f64>>,
}

impl RgcnLayer {
    /// Registers Xavier-initialised weights named `{prefix}.w.{p}` and
    /// `{prefix}.self` in `store`.
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        store: &mut ParamStore,
        prefix: &str,
        num_relations: usize,
        dim_in: usize,
        dim_out: usize,
        self_loop: bool,
        frozen: bool,
        activation: Activation,
        dropout: f64,
        seed: u64,
    ) -> Result<Self> {
        Self::build_with(
            store,
            prefix,
            num_relations,
            dim_in,
            dim_out,
            self_loop,
            frozen,
            activation,
            dropout,
            |name, r, c| init_xavier(r, c, XAVIER_GAIN, seed_for(seed, name)),
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub fn build_with(
        store: &mut ParamStore,
        prefix: &str,
        num_relations: usize,
        dim_in: usize,
        dim_out: usize,
        self_loop: bool,
        frozen: bool,
        activation: Activation,
        dropout: f64,
        mut init: impl FnMut(&str, usize, usize) -> Matrix,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Config(format!("dropout {dropout} outside [0, 1)")));
        }
        if dim_in == 0 || dim_out == 0 {
            return Err(Error::Config("layer dimensions must be positive".into()));
        }
        let relation_weights = (0..num_relations)
            .map(|p| {
                let name = format!("{prefix}.w.{p}");
                let w = init(&name, dim_out, dim_in);
                store.add(Param::new(name, w, frozen))
            })
            .collect();
        let self_loop = self_loop.then(|| {
            let name = format!("{prefix}.self");
            let w = init(&name, dim_out, dim_in);
            store.add(Param::new(name, w, frozen))
        });
        Ok(RgcnLayer {
            relation_weights,
            self_loop,
            activation,
            dropout,
            frozen,
            dim_in,
            dim_out,
        })
    }

    fn weight<'a>(&self, store: &'a ParamStore, p: RelationId) -> Result<&'a Matrix> {
        let id = self
            .relation_weights
            .get(p.idx())
            .ok_or_else(|| Error::Shape(format!("no weight for relation slot {}", p.0)))?;
        Ok(store.value(*id))
    }

    /// `out(i) = act(Σ_p mean_{j ∈ N_i^p} W_p x_j + W_0 x_i)`, followed by
    /// inverted dropout when `rng` is given.
    ///
    /// `input` must hold a row for every target (when the layer has a
    /// self-loop) and for every neighbour of every target.
    pub fn forward(
        &self,
        store: &ParamStore,
        index: &NeighborIndex,
        input: &EntityBlock,
        targets: &[EntityId],
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(EntityBlock, LayerCache)> {
        if input.values.cols() != self.dim_in {
            return Err(Error::Shape(format!(
                "layer expects {} input features, got {}",
                self.dim_in,
                input.values.cols()
            )));
        }
        let d_in = self.dim_in;
        let mut by_relation: BTreeMap<RelationId, (Vec<usize>, Vec<f64>)> = BTreeMap::new();
        for (row, &t) in targets.iter().enumerate() {
            for nb in index.neighborhoods(t) {
                let (rows, data) = by_relation.entry(nb.relation).or_default();
                rows.push(row);
                let start = data.len();
                data.resize(start + d_in, 0.0);
                let acc = &mut data[start..];
                let scale = 1.0 / nb.objects.len() as f64;
                for &j in &nb.objects {
                    axpy(scale, input.values.row(input.require_row(j)?), acc);
                }
            }
        }

        let mut out = Matrix::zeros(targets.len(), self.dim_out);
        let mut groups = Vec::with_capacity(by_relation.len());
        for (relation, (rows, data)) in by_relation {
            let mean = Matrix::from_vec(rows.len(), d_in, data)?;
            let mut msg = Matrix::zeros(rows.len(), self.dim_out);
            gemm(
                1.0,
                &mean,
                false,
                self.weight(store, relation)?,
                true,
                0.0,
                &mut msg,
            )?;
            for (k, &r) in rows.iter().enumerate() {
                axpy(1.0, msg.row(k), out.row_mut(r));
            }
            groups.push(Group {
                relation,
                rows,
                mean,
            });
        }
        if let Some(w0) = self.self_loop {
            let own = gather_rows(input, targets)?;
            gemm(1.0, &own, false, store.value(w0), true, 1.0, &mut out)?;
        }

        let pre_activation = match self.activation {
            Activation::Identity => None,
            Activation::Relu => {
                let pre = out.clone();
                out.as_mut_slice().iter_mut().for_each(|x| *x = x.max(0.0));
                Some(pre)
            }
        };
        let mask = match rng {
            Some(rng) if self.dropout > 0.0 => {
                let keep = 1.0 / (1.0 - self.dropout);
                let mask: Vec<f64> = (0..out.len())
                    .map(|_| {
                        if rng.random::<f64>() < self.dropout {
                            0.0
                        } else {
                            keep
                        }
                    })
                    .collect();
                for (x, m) in out.as_mut_slice().iter_mut().zip(&mask) {
                    *x *= m;
                }
                Some(mask)
            }
            _ => None,
        };
        let block = EntityBlock::new(targets.to_vec(), input.num_entities(), out)?;
        Ok((
            block,
            LayerCache {
                groups,
                pre_activation,
                mask,
            },
        ))
    }

    /// Gradient with respect to `input.values` given `upstream = ∂L/∂out`.
    /// Weight gradients are accumulated only for parameters that are not
    /// frozen.
    pub fn backward(
        &self,
        store: &mut ParamStore,
        index: &NeighborIndex,
        input: &EntityBlock,
        output: &EntityBlock,
        cache: &LayerCache,
        upstream: &Matrix,
    ) -> Result<Matrix> {
        if upstream.shape() != output.values.shape() {
            return Err(Error::Shape(format!(
                "upstream gradient {:?} does not match layer output {:?}",
                upstream.shape(),
                output.values.shape()
            )));
        }
        let mut delta = upstream.clone();
        if let Some(mask) = &cache.mask {
            for (g, m) in delta.as_mut_slice().iter_mut().zip(mask) {
                *g *= m;
            }
        }
        if let Some(pre) = &cache.pre_activation {
            for (g, z) in delta.as_mut_slice().iter_mut().zip(pre.as_slice()) {
                if *z <= 0.0 {
                    *g = 0.0;
                }
            }
        }

        let targets = output.ids();
        let mut d_input = Matrix::zeros(input.len(), self.dim_in);
        for group in &cache.groups {
            let mut d_group = Matrix::zeros(group.rows.len(), self.dim_out);
            for (k, &r) in group.rows.iter().enumerate() {
                d_group.row_mut(k).copy_from_slice(delta.row(r));
            }
            let mut d_mean = Matrix::zeros(group.rows.len(), self.dim_in);
            gemm(
                1.0,
                &d_group,
                false,
                self.weight(store, group.relation)?,
                false,
                0.0,
                &mut d_mean,
            )?;
            for (k, &r) in group.rows.iter().enumerate() {
                let objects = index
                    .get(targets[r], group.relation)
                    .ok_or_else(|| Error::Shape("cache does not match neighbour index".into()))?;
                let scale = 1.0 / objects.len() as f64;
                for &j in objects {
                    axpy(scale, d_mean.row(k), d_input.row_mut(input.require_row(j)?));
                }
            }
            let id = self.relation_weights[group.relation.idx()];
            if let Some((_, grad)) = store.get_mut(id).value_and_grad_mut() {
                gemm(1.0, &d_group, true, &group.mean, false, 1.0, grad)?;
            }
        }
        if let Some(w0) = self.self_loop {
            let mut d_own = Matrix::zeros(targets.len(), self.dim_in);
            gemm(1.0, &delta, false, store.value(w0), false, 0.0, &mut d_own)?;
            for (r, &t) in targets.iter().enumerate() {
                axpy(1.0, d_own.row(r), d_input.row_mut(input.require_row(t)?));
            }
            if !store.get(w0).is_frozen() {
                let own = gather_rows(input, targets)?;
                gemm(
                    1.0,
                    &delta,
                    true,
                    &own,
                    false,
                    1.0,
                    store.get_mut(w0).grad_mut(),
                )?;
            }
        }
        Ok(d_input)
    }

    /// Applies the layer to a node that is not part of the graph, given its
    /// outgoing edges. The node's own features are never read, so the layer
    /// must not have a self-loop.
    pub fn embed_new(
        &self,
        store: &ParamStore,
        input: &EntityBlock,
        neighbors: &[(RelationId, EntityId)],
    ) -> Result<Vec<f64>> {
        if self.self_loop.is_some() {
            return Err(Error::Inductive(
                "a layer with a self-loop needs the new node's own embedding".into(),
            ));
        }
        if neighbors.is_empty() {
            return Err(Error::Inductive("new node has no neighbours".into()));
        }
        let mut grouped: BTreeMap<RelationId, Vec<EntityId>> = BTreeMap::new();
        for &(p, j) in neighbors {
            grouped.entry(p).or_default().push(j);
        }
        let mut out = vec![0.0; self.dim_out];
        for (p, mut objects) in grouped {
            objects.sort_unstable();
            objects.dedup();
            let mut mean = vec![0.0; self.dim_in];
            for &j in &objects {
                let row = input.row(j).ok_or_else(|| {
                    Error::Inductive(format!("neighbour {} has no embedding", j.0))
                })?;
                axpy(1.0 / objects.len() as f64, row, &mut mean);
            }
            let msg = self.weight(store, p)?.matvec(&mean)?;
            axpy(1.0, &msg, &mut out);
        }
        if self.activation == Activation::Relu {
            out.iter_mut().for_each(|x| *x = x.max(0.0));
        }
        Ok(out)
    }
}

fn gather_rows(block: &EntityBlock, ids: &[EntityId]) -> Result<Matrix> {
    let mut m = Matrix::zeros(ids.len(), block.values.cols());
    for (r, &e) in ids.iter().enumerate() {
        m.row_mut(r)
            .copy_from_slice(block.values.row(block.require_row(e)?));
    }
    Ok(m)
}

/// Stacked layers. Layer `l` maps the rows of `fields[l]` to `fields[l + 1]`.
#[derive(Clone, Debug)]
pub struct RgcnStack {
    pub layers: Vec<RgcnLayer>,
}

#[derive(Clone, Debug)]
pub struct StackCache {
    /// `blocks[0]` is the input, `blocks[l + 1]` the output of layer `l`.
    pub blocks: Vec<EntityBlock>,
    caches: Vec<LayerCache>,
}

impl StackCache {
    pub fn output(&self) -> &EntityBlock {
        self.blocks
            .last()
            .expect("stack cache holds the input block")
    }
}

impl RgcnStack {
    /// Entity sets needed at each depth, from the input (`[0]`) to the
    /// targets (`[layers]`).
    pub fn fields(&self, index: &NeighborIndex, targets: &[EntityId]) -> Vec<Vec<EntityId>> {
        let mut fields = vec![targets.to_vec()];
        for _ in &self.layers {
            let next = receptive_field(index, fields.last().unwrap());
            fields.push(next);
        }
        fields.reverse();
        fields
    }

    /// `input` must cover `fields(index, targets)[0]`.
    pub fn forward(
        &self,
        store: &ParamStore,
        index: &NeighborIndex,
        input: EntityBlock,
        targets: &[EntityId],
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<StackCache> {
        let fields = self.fields(index, targets);
        let mut blocks = vec![input];
        let mut caches = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let (out, cache) = layer.forward(
                store,
                index,
                blocks.last().unwrap(),
                &fields[l + 1],
                rng.as_deref_mut(),
            )?;
            blocks.push(out);
            caches.push(cache);
        }
        Ok(StackCache { blocks, caches })
    }

    /// Returns the gradient with respect to the input block.
    pub fn backward(
        &self,
        store: &mut ParamStore,
        index: &NeighborIndex,
        cache: &StackCache,
        upstream: &Matrix,
    ) -> Result<Matrix> {
        let mut grad = upstream.clone();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            grad = layer.backward(
                store,
                index,
                &cache.blocks[l],
                &cache.blocks[l + 1],
                &cache.caches[l],
                &grad,
            )?;
        }
        Ok(grad)
    }
}

use super::{nlif_spike_grad_by, nlif_spike_time_by, NlifConfig, Spike};
use crate::block::EntityBlock;
use crate::error::Result;
use crate::graph::EntityId;
use crate::linalg::{init_normal, seed_for, Matrix, Param, ParamId, ParamStore};

pub const POPULATION_INIT_MEAN: f64 = 0.2;
pub const POPULATION_INIT_STD: f64 = 1.0;

/// One population of `dim` nLIF neurons per entity, each driven by the same
/// fixed input spike train through its own weights.
///
/// Weights live in a `(num_entities * dim) x inputs` parameter; row
/// `e * dim + i` feeds neuron `i` of entity `e`.
#[derive(Clone, Debug)]
pub struct SpikePopulations {
    pub weights: ParamId,
    pub dim: usize,
    pub config: NlifConfig,
    input_times: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct PopulationCache {
    /// `ids.len() * dim` spikes in block order.
    pub spikes: Vec<Spike>,
}

impl SpikePopulations {
    pub fn build(
        store: &mut ParamStore,
        name: &str,
        num_entities: usize,
        dim: usize,
        config: NlifConfig,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let w = init_normal(
            num_entities * dim,
            config.inputs,
            POPULATION_INIT_MEAN,
            POPULATION_INIT_STD,
            seed_for(seed, name),
        );
        let weights = store.add(Param::new(name, w, false));
        Ok(SpikePopulations {
            weights,
            dim,
            config,
            input_times: config.input_times(),
        })
    }

    pub fn input_times(&self) -> &[f64] {
        &self.input_times
    }

    pub fn neuron_spike(&self, w: &Matrix, e: EntityId, i: usize) -> Spike {
        let row = w.row(e.idx() * self.dim + i);
        let times = &self.input_times;
        nlif_spike_time_by(
            times.len(),
            |k| (row[k], times[k]),
            self.config.tau,
            self.config.threshold,
        )
    }

    pub fn encode(
        &self,
        store: &ParamStore,
        ids: Vec<EntityId>,
    ) -> Result<(EntityBlock, PopulationCache)> {
        let w = store.value(self.weights);
        let mut values = Matrix::zeros(ids.len(), self.dim);
        let mut spikes = Vec::with_capacity(ids.len() * self.dim);
        for (r, &e) in ids.iter().enumerate() {
            for i in 0..self.dim {
                let s = self.neuron_spike(w, e, i);
                values.set(r, i, s.time);
                spikes.push(s);
            }
        }
        let block = EntityBlock::new(ids, w.rows() / self.dim, values)?;
        Ok((block, PopulationCache { spikes }))
    }

    /// Accumulates `∂L/∂w` from `upstream = ∂L/∂t` for the rows of `block`.
    pub fn backward(
        &self,
        store: &mut ParamStore,
        block: &EntityBlock,
        cache: &PopulationCache,
        upstream: &Matrix,
    ) {
        let (tau, threshold) = (self.config.tau, self.config.threshold);
        let times = &self.input_times;
        let param = store.get_mut(self.weights);
        let Some((w, grad)) = param.value_and_grad_mut() else {
            return;
        };
        for (r, &e) in block.ids().iter().enumerate() {
            for i in 0..self.dim {
                let g = upstream.get(r, i);
                let spike = &cache.spikes[r * self.dim + i];
                if g == 0.0 || !spike.fired {
                    continue;
                }
                let row_idx = e.idx() * self.dim + i;
                let row = w.row(row_idx);
                let grow = grad.row_mut(row_idx);
                nlif_spike_grad_by(
                    spike,
                    |k| (row[k], times[k]),
                    tau,
                    threshold,
                    |k, dw, _| {
                        grow[k] += g * dw;
                    },
                );
            }
        }
    }

    /// Non-spiking penalty over the populations of `ids`, with gradient.
    pub fn penalty(&self, store: &mut ParamStore, ids: &[EntityId], delta: f64) -> f64 {
        let k = self.config.inputs;
        let threshold = self.config.threshold;
        let dim = self.dim;
        let param = store.get_mut(self.weights);
        let Some((w, grad)) = param.value_and_grad_mut() else {
            return 0.0;
        };
        let mut total = 0.0;
        for &e in ids {
            let start = e.idx() * dim;
            let rows = &w.as_slice()[start * k..(start + dim) * k];
            let grows = &mut grad.as_mut_slice()[start * k..(start + dim) * k];
            total += super::nonspike_penalty(rows, k, threshold, delta, Some(grows));
        }
        total
    }

    /// Penalty value only.
    pub fn penalty_value(&self, store: &ParamStore, ids: &[EntityId], delta: f64) -> f64 {
        let k = self.config.inputs;
        let w = store.value(self.weights);
        ids.iter()
            .map(|e| {
                let start = e.idx() * self.dim;
                super::nonspike_penalty(
                    &w.as_slice()[start * k..(start + self.dim) * k],
                    k,
                    self.config.threshold,
                    delta,
                    None,
                )
            })
            .sum()
    }
}

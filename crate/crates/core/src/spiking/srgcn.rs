use std::collections::BTreeMap;

use super::{nlif_spike_grad_by, nlif_spike_time_by, NlifConfig, Spike};
use crate::block::EntityBlock;
use crate::error::{Error, Result};
use crate::graph::{EntityId, NeighborIndex};
use crate::linalg::{init_normal, seed_for, Matrix, Param, ParamId, ParamStore};

pub const SRGCN_INIT_MEAN: f64 = 1.0;
pub const SRGCN_INIT_STD: f64 = 5.0;

/// Graph convolution whose output units are nLIF neurons.
///
/// Output neuron `i` of entity `s` receives one event per input neuron `n` of
/// every entity `j` in the receptive field of `s`, at time `t_{j,n}` and with
/// weight `Σ_p [j ∈ N_s^p] W_p[i,n] / |N_s^p| + [j = s] W_0[i,n]`. The weights
/// are frozen.
#[derive(Clone, Debug)]
pub struct SrgcnLayer {
    pub relation_weights: Vec<ParamId>,
    pub self_loop: Option<ParamId>,
    pub dim: usize,
    pub config: NlifConfig,
}

#[derive(Clone, Debug)]
struct TargetCache {
    field: Vec<EntityId>,
    /// Per field entity, the `dim x dim` effective weight matrix.
    coefficients: Vec<Matrix>,
    /// `(field index, input neuron)` sorted by time.
    events: Vec<(u32, u32)>,
    times: Vec<f64>,
    spikes: Vec<Spike>,
}

#[derive(Clone, Debug)]
pub struct SrgcnCache {
    targets: Vec<TargetCache>,
}

/// Fraction of input events that precede the output spike.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CausalStats {
    /// Per target entity: causal events over all events, counting fired
    /// neurons only. `None` when no neuron of the entity fired.
    pub per_entity: Vec<Option<f64>>,
    pub mean: f64,
    pub std: f64,
    pub fired_neurons: usize,
    pub silent_neurons: usize,
}

impl SrgcnLayer {
    pub fn build(
        store: &mut ParamStore,
        prefix: &str,
        num_relations: usize,
        dim: usize,
        self_loop: bool,
        config: NlifConfig,
        seed: u64,
    ) -> Result<Self> {
        Self::build_with(
            store,
            prefix,
            num_relations,
            dim,
            self_loop,
            config,
            |name, r, c| init_normal(r, c, SRGCN_INIT_MEAN, SRGCN_INIT_STD, seed_for(seed, name)),
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub fn build_with(
        store: &mut ParamStore,
        prefix: &str,
        num_relations: usize,
        dim: usize,
        self_loop: bool,
        config: NlifConfig,
        mut init: impl FnMut(&str, usize, usize) -> Matrix,
    ) -> Result<Self> {
        config.validate()?;
        let mut add = |name: String| {
            let w = init(&name, dim, dim);
            store.add(Param::new(name, w, true))
        };
        let relation_weights = (0..num_relations)
            .map(|p| add(format!("{prefix}.w.{p}")))
            .collect();
        let self_loop = self_loop.then(|| add(format!("{prefix}.self")));
        Ok(SrgcnLayer {
            relation_weights,
            self_loop,
            dim,
            config,
        })
    }

    fn target_events(
        &self,
        store: &ParamStore,
        index: &NeighborIndex,
        input: &EntityBlock,
        s: EntityId,
    ) -> Result<TargetCache> {
        let mut coeff: BTreeMap<EntityId, Matrix> = BTreeMap::new();
        let mut add = |j: EntityId, w: &Matrix, scale: f64| {
            let c = coeff
                .entry(j)
                .or_insert_with(|| Matrix::zeros(self.dim, self.dim));
            for (a, b) in c.as_mut_slice().iter_mut().zip(w.as_slice()) {
                *a += scale * b;
            }
        };
        for nb in index.neighborhoods(s) {
            let id = self
                .relation_weights
                .get(nb.relation.idx())
                .ok_or_else(|| {
                    Error::Shape(format!("no weight for relation slot {}", nb.relation.0))
                })?;
            let w = store.value(*id);
            let scale = 1.0 / nb.objects.len() as f64;
            for &j in &nb.objects {
                add(j, w, scale);
            }
        }
        if let Some(w0) = self.self_loop {
            add(s, store.value(w0), 1.0);
        }
        let (field, coefficients): (Vec<EntityId>, Vec<Matrix>) = coeff.into_iter().unzip();
        let mut order: Vec<(f64, u32, u32)> = Vec::with_capacity(field.len() * self.dim);
        for (f, &j) in field.iter().enumerate() {
            let row = input.values.row(input.require_row(j)?);
            for (n, &t) in row.iter().enumerate() {
                order.push((t, f as u32, n as u32));
            }
        }
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let times: Vec<f64> = order.iter().map(|e| e.0).collect();
        let events: Vec<(u32, u32)> = order.iter().map(|e| (e.1, e.2)).collect();

        let (tau, threshold) = (self.config.tau, self.config.threshold);
        let spikes = (0..self.dim)
            .map(|i| {
                if events.is_empty() {
                    return Spike {
                        time: self.config.no_spike_time(self.config.t_max),
                        causal: 0,
                        fired: false,
                    };
                }
                nlif_spike_time_by(
                    events.len(),
                    |k| {
                        let (f, n) = events[k];
                        (coefficients[f as usize].get(i, n as usize), times[k])
                    },
                    tau,
                    threshold,
                )
            })
            .collect();
        Ok(TargetCache {
            field,
            coefficients,
            events,
            times,
            spikes,
        })
    }

    /// Output spike times of `targets`. `input` holds the spike times of every
    /// entity in the receptive field.
    pub fn forward(
        &self,
        store: &ParamStore,
        index: &NeighborIndex,
        input: &EntityBlock,
        targets: &[EntityId],
    ) -> Result<(EntityBlock, SrgcnCache)> {
        if input.values.cols() != self.dim {
            return Err(Error::Shape(format!(
                "layer expects {} input neurons, got {}",
                self.dim,
                input.values.cols()
            )));
        }
        let mut out = Matrix::zeros(targets.len(), self.dim);
        let mut caches = Vec::with_capacity(targets.len());
        for (r, &s) in targets.iter().enumerate() {
            let cache = self.target_events(store, index, input, s)?;
            for (i, spike) in cache.spikes.iter().enumerate() {
                out.set(r, i, spike.time);
            }
            caches.push(cache);
        }
        let block = EntityBlock::new(targets.to_vec(), input.num_entities(), out)?;
        Ok((block, SrgcnCache { targets: caches }))
    }

    /// Gradient with respect to the input spike times.
    pub fn backward(
        &self,
        input: &EntityBlock,
        cache: &SrgcnCache,
        upstream: &Matrix,
    ) -> Result<Matrix> {
        if upstream.rows() != cache.targets.len() || upstream.cols() != self.dim {
            return Err(Error::Shape(
                "upstream gradient does not match layer output".into(),
            ));
        }
        let (tau, threshold) = (self.config.tau, self.config.threshold);
        let mut d_input = Matrix::zeros(input.len(), self.dim);
        for (r, tc) in cache.targets.iter().enumerate() {
            let rows: Vec<usize> = tc
                .field
                .iter()
                .map(|&j| input.require_row(j))
                .collect::<Result<_>>()?;
            for (i, spike) in tc.spikes.iter().enumerate() {
                let g = upstream.get(r, i);
                if g == 0.0 || tc.events.is_empty() {
                    continue;
                }
                if !spike.fired {
                    // Silent neurons sit a fixed delay after the latest input.
                    let (f, n) = tc.events[tc.events.len() - 1];
                    d_input.row_mut(rows[f as usize])[n as usize] += g;
                    continue;
                }
                let event = |k: usize| {
                    let (f, n) = tc.events[k];
                    (tc.coefficients[f as usize].get(i, n as usize), tc.times[k])
                };
                nlif_spike_grad_by(spike, event, tau, threshold, |k, _, dt| {
                    let (f, n) = tc.events[k];
                    let cell = &mut d_input.row_mut(rows[f as usize])[n as usize];
                    *cell += g * dt;
                });
            }
        }
        Ok(d_input)
    }

    pub fn spikes<'a>(&self, cache: &'a SrgcnCache) -> impl Iterator<Item = &'a [Spike]> {
        cache.targets.iter().map(|t| t.spikes.as_slice())
    }

    pub fn causal_stats(&self, cache: &SrgcnCache) -> CausalStats {
        let mut stats = CausalStats::default();
        for tc in &cache.targets {
            let (mut causal, mut total) = (0usize, 0usize);
            for s in &tc.spikes {
                if s.fired {
                    causal += s.causal;
                    total += tc.events.len();
                    stats.fired_neurons += 1;
                } else {
                    stats.silent_neurons += 1;
                }
            }
            stats
                .per_entity
                .push((total > 0).then(|| causal as f64 / total as f64));
        }
        let vals: Vec<f64> = stats.per_entity.iter().flatten().copied().collect();
        if !vals.is_empty() {
            let n = vals.len() as f64;
            stats.mean = vals.iter().sum::<f64>() / n;
            stats.std = (vals.iter().map(|v| (v - stats.mean).powi(2)).sum::<f64>() / n).sqrt();
        }
        stats
    }
}

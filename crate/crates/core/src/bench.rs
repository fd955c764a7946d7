//! Backward-pass timing and gradient-buffer accounting for frozen versus
//! trained R-GCN weights.

use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use crate::block::distinct;
use crate::error::{Error, Result};
use crate::graph::{EntityId, KnowledgeGraph, Triple};
use crate::linalg::{Adam, AdamConfig, Matrix};
use crate::model::{Model, ModelKind};
use crate::training::{TrainConfig, Trainer};

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub model: ModelKind,
    pub dims: Vec<usize>,
    pub layers: usize,
    pub self_loop: bool,
    pub batch_size: usize,
    pub negatives: usize,
    /// Timed repetitions per setting, after `warmup` untimed ones.
    pub repeats: usize,
    pub warmup: usize,
    pub seed: u64,
    /// Dataset name used in record labels.
    pub label: String,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            model: ModelKind::RgcnTransE,
            dims: vec![16, 32, 64, 128],
            layers: 1,
            self_loop: true,
            batch_size: 256,
            negatives: 10,
            repeats: 100,
            warmup: 3,
            seed: 42,
            label: String::from("kg"),
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Phase {
    Forward,
    Backward,
    Optimizer,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::Forward, Phase::Backward, Phase::Optimizer];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Forward => "forward",
            Phase::Backward => "backward",
            Phase::Optimizer => "optimizer",
        }
    }
}

#[derive(Copy, Clone, Debug, Default, PartialEq)]
pub struct Timing {
    pub mean_ns: f64,
    pub std_ns: f64,
}

impl Timing {
    fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len().max(1) as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Timing {
            mean_ns: mean,
            std_ns: var.sqrt(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRecord {
    pub label: String,
    pub dim: usize,
    pub frozen: bool,
    /// Indexed like [`Phase::ALL`].
    pub timings: [Timing; 3],
    /// Backward plus optimizer step, per repetition.
    pub update: Timing,
    pub grad_bytes: usize,
    pub moment_bytes: usize,
    pub repetitions: usize,
}

impl BenchRecord {
    pub fn timing(&self, phase: Phase) -> Timing {
        self.timings[phase as usize]
    }

    pub fn buffer_bytes(&self) -> usize {
        self.grad_bytes + self.moment_bytes
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchComparison {
    pub dim: usize,
    pub frozen: BenchRecord,
    pub trained: BenchRecord,
    /// Gradient plus optimizer-moment bytes of the convolution weights.
    pub expected_reduction: usize,
}

impl BenchComparison {
    /// `(t_trained − t_frozen) / t_trained` of backward pass plus optimizer
    /// step.
    pub fn speedup(&self) -> f64 {
        (self.trained.update.mean_ns - self.frozen.update.mean_ns) / self.trained.update.mean_ns
    }

    /// Bytes saved by freezing.
    pub fn memory_reduction(&self) -> usize {
        self.trained.buffer_bytes() - self.frozen.buffer_bytes()
    }

    /// Saved bytes relative to the trained configuration.
    pub fn memory_reduction_fraction(&self) -> f64 {
        self.memory_reduction() as f64 / self.trained.buffer_bytes().max(1) as f64
    }
}

/// Bytes of gradient and two Adam moment buffers for `layers` layers of
/// `weights_per_layer` square `dim x dim` matrices of f64.
pub fn closed_form_reduction(layers: usize, weights_per_layer: usize, dim: usize) -> usize {
    3 * layers * weights_per_layer * dim * dim * std::mem::size_of::<f64>()
}

fn run_one(
    model: &mut Model,
    pairs: &[(Triple, Triple)],
    cfg: &BenchConfig,
    dim: usize,
) -> Result<BenchRecord> {
    let arch = model.arch.clone();
    let mut adam = Adam::new(AdamConfig::default(), &model.params);
    let targets: Vec<EntityId> = distinct(
        pairs
            .iter()
            .flat_map(|(p, n)| [p.subject, p.object, n.subject, n.object])
            .collect(),
    );
    let (mut fwd, mut bwd, mut opt, mut upd) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for rep in 0..cfg.warmup + cfg.repeats {
        model.params.zero_grads();
        let t0 = Instant::now();
        let enc = arch.encode(&model.params, &targets, None)?;
        let out = &enc.output;
        let r = model.params.value(arch.relation);
        let mut d_out = Matrix::zeros(out.len(), dim);
        let mut gr = vec![0.0; dim];
        for (p, n) in pairs {
            for (t, c) in [(*p, 1.0), (*n, -1.0)] {
                let (rs, ro) = (
                    out.row_of(t.subject).unwrap(),
                    out.row_of(t.object).unwrap(),
                );
                let mut gs = vec![0.0; dim];
                let mut go = vec![0.0; dim];
                arch.decoder.accumulate_grad(
                    out.values.row(rs),
                    r.row(t.predicate.idx()),
                    out.values.row(ro),
                    c / pairs.len() as f64,
                    &mut gs,
                    &mut gr,
                    &mut go,
                );
                crate::linalg::axpy(1.0, &gs, d_out.row_mut(rs));
                crate::linalg::axpy(1.0, &go, d_out.row_mut(ro));
            }
        }
        let t1 = Instant::now();
        arch.backward(&mut model.params, &enc, &d_out)?;
        let t2 = Instant::now();
        adam.step(&mut model.params);
        let t3 = Instant::now();
        if rep >= cfg.warmup {
            fwd.push((t1 - t0).as_nanos() as f64);
            bwd.push((t2 - t1).as_nanos() as f64);
            opt.push((t3 - t2).as_nanos() as f64);
            upd.push((t3 - t1).as_nanos() as f64);
        }
    }
    Ok(BenchRecord {
        label: cfg.label.clone(),
        dim,
        frozen: model
            .params
            .iter()
            .filter(|p| p.name().starts_with("rgcn."))
            .all(|p| p.is_frozen()),
        timings: [
            Timing::from_samples(&fwd),
            Timing::from_samples(&bwd),
            Timing::from_samples(&opt),
        ],
        update: Timing::from_samples(&upd),
        grad_bytes: model.params.grad_bytes(),
        moment_bytes: adam.moment_bytes(),
        repetitions: cfg.repeats,
    })
}

/// Times one batch through a frozen and a trained convolution for every
/// dimension in `cfg.dims`, using the same sampled batch for both.
pub fn run_bench(kg: &KnowledgeGraph, cfg: &BenchConfig) -> Result<Vec<BenchComparison>> {
    if !cfg.model.has_rgcn() || cfg.model.is_spiking() {
        return Err(Error::Config(format!(
            "{} has no trainable graph convolution",
            cfg.model
        )));
    }
    if cfg.repeats == 0 {
        return Err(Error::Config("bench needs at least one repetition".into()));
    }
    let mut out = Vec::new();
    for &dim in &cfg.dims {
        let base = TrainConfig {
            model: cfg.model,
            dim,
            layers: cfg.layers,
            self_loop: cfg.self_loop,
            negatives: cfg.negatives,
            batch_size: cfg.batch_size,
            dropout: 0.0,
            seed: cfg.seed,
            ..Default::default()
        };
        let mut sampler = Trainer::new(base.clone(), kg)?;
        let positives: Vec<Triple> = kg.train.iter().copied().take(cfg.batch_size).collect();
        let pairs = sampler.make_pairs(&positives, kg.num_entities());

        let mut frozen = Model::new(
            &TrainConfig {
                frozen: true,
                ..base.clone()
            },
            kg,
        )?;
        let mut trained = Model::new(
            &TrainConfig {
                frozen: false,
                ..base
            },
            kg,
        )?;
        let weights_per_layer = frozen.arch.index.num_relations() + usize::from(cfg.self_loop);
        let f = run_one(&mut frozen, &pairs, cfg, dim)?;
        let t = run_one(&mut trained, &pairs, cfg, dim)?;
        out.push(BenchComparison {
            dim,
            frozen: f,
            trained: t,
            expected_reduction: closed_form_reduction(cfg.layers, weights_per_layer, dim),
        });
    }
    Ok(out)
}

/// Long-format timings: one row per configuration and phase, where `update`
/// is backward plus optimizer step.
pub fn write_bench_csv(path: &Path, rows: &[BenchComparison]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        w,
        "label,d,frozen,phase,mean_ns,std_ns,grad_bytes,moment_bytes,repetitions"
    )?;
    for c in rows {
        for r in [&c.trained, &c.frozen] {
            let phases = Phase::ALL
                .iter()
                .map(|p| (p.as_str(), r.timing(*p)))
                .chain([("update", r.update)]);
            for (name, t) in phases {
                writeln!(
                    w,
                    "{},{},{},{},{:.1},{:.1},{},{},{}",
                    r.label,
                    r.dim,
                    r.frozen,
                    name,
                    t.mean_ns,
                    t.std_ns,
                    r.grad_bytes,
                    r.moment_bytes,
                    r.repetitions
                )?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// One row per dimension with speedup and memory figures.
pub fn write_speedup_csv(path: &Path, rows: &[BenchComparison]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        w,
        "label,d,speedup,memory_reduction_bytes,expected_reduction_bytes,memory_reduction_fraction"
    )?;
    for c in rows {
        writeln!(
            w,
            "{},{},{:.6},{},{},{:.6}",
            c.frozen.label,
            c.dim,
            c.speedup(),
            c.memory_reduction(),
            c.expected_reduction,
            c.memory_reduction_fraction()
        )?;
    }
    w.flush()?;
    Ok(())
}

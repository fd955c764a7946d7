//! Negative sampling, the margin ranking objective, the epoch loop and
//! best-on-validation model selection.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::block::distinct;
use crate::error::{Error, Result};
use crate::evaluation::{Evaluator, Side};
use crate::graph::{EntityId, KnowledgeGraph, Split, Triple};
use crate::linalg::{Adam, AdamConfig, Matrix, ParamStore};
use crate::model::{Arch, Model, ModelKind};
use crate::rgcn::Activation;

/// How the L2 penalty is reduced over a parameter tensor.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum L2Reduction {
    /// `λ Σ θ²`
    Sum,
    /// `λ mean(θ²)`
    Mean,
}

impl FromStr for L2Reduction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(L2Reduction::Sum),
            "mean" => Ok(L2Reduction::Mean),
            _ => Err(Error::Config(format!("unknown l2 reduction `{s}`"))),
        }
    }
}

impl std::fmt::Display for L2Reduction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            L2Reduction::Sum => "sum",
            L2Reduction::Mean => "mean",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub dim: usize,
    pub frozen: bool,
    pub self_loop: bool,
    pub layers: usize,
    pub activation: Activation,
    pub add_inverse_relations: bool,
    pub dropout: f64,
    pub lr: f64,
    pub margin: f64,
    pub negatives: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub eval_every: usize,
    pub l2_weight: f64,
    pub l2_reduction: L2Reduction,
    /// Fraction of each batch's entities that are encoded. Pairs touching
    /// an entity outside the sample are dropped.
    pub subsample: f64,
    pub spike_inputs: usize,
    pub tau: f64,
    pub threshold: f64,
    pub nonspike_delta: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelKind::RgcnTransE,
            dim: 128,
            frozen: true,
            self_loop: true,
            layers: 1,
            activation: Activation::Identity,
            add_inverse_relations: false,
            dropout: 0.2,
            lr: 1e-3,
            margin: 1.0,
            negatives: 10,
            batch_size: 64,
            max_epochs: 1000,
            eval_every: 10,
            l2_weight: 1e-2,
            l2_reduction: L2Reduction::Sum,
            subsample: 1.0,
            spike_inputs: 16,
            tau: crate::spiking::DEFAULT_TAU,
            threshold: crate::spiking::DEFAULT_THRESHOLD,
            nonspike_delta: 1e-2,
            seed: 42,
        }
    }
}

macro_rules! config_keys {
    ($($key:literal => $field:ident),* $(,)?) => {
        impl TrainConfig {
            pub const KEYS: &'static [&'static str] = &[$($key),*];

            /// Sets one field from its textual form.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $($key => {
                        self.$field = value.trim().parse().map_err(|_| {
                            Error::Config(format!("invalid value `{value}` for `{key}`"))
                        })?;
                    })*
                    _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
                }
                Ok(())
            }

            /// `key = value` lines, one per field.
            pub fn to_kv(&self) -> String {
                let mut out = String::new();
                $(let _ = writeln!(out, "{} = {}", $key, self.$field);)*
                out
            }
        }
    };
}

config_keys! {
    "model" => model,
    "dim" => dim,
    "frozen" => frozen,
    "self_loop" => self_loop,
    "layers" => layers,
    "activation" => activation,
    "add_inverse_relations" => add_inverse_relations,
    "dropout" => dropout,
    "lr" => lr,
    "margin" => margin,
    "negatives" => negatives,
    "batch_size" => batch_size,
    "max_epochs" => max_epochs,
    "eval_every" => eval_every,
    "l2_weight" => l2_weight,
    "l2_reduction" => l2_reduction,
    "subsample" => subsample,
    "spike_inputs" => spike_inputs,
    "tau" => tau,
    "threshold" => threshold,
    "nonspike_delta" => nonspike_delta,
    "seed" => seed,
}

impl TrainConfig {
    /// Parses `key = value` lines on top of `self`. Blank lines and lines
    /// starting with `#` are ignored; trailing `# ...` comments are stripped.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        cfg.apply_kv(text)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.dim == 0 {
            return fail("dim must be positive");
        }
        if self.negatives == 0 {
            return fail("negatives must be at least 1");
        }
        if !(self.margin >= 0.0) {
            return fail("margin must be >= 0");
        }
        if self.batch_size == 0 || self.eval_every == 0 {
            return fail("batch_size and eval_every must be positive");
        }
        if !(self.lr >= 0.0) || !(self.l2_weight >= 0.0) || !(self.nonspike_delta >= 0.0) {
            return fail("lr, l2_weight and nonspike_delta must be >= 0");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must lie in [0, 1)");
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return fail("subsample must lie in (0, 1]");
        }
        if self.model.has_rgcn() && self.layers == 0 {
            return fail("graph convolution needs at least one layer");
        }
        if self.model.is_spiking()
            && (self.spike_inputs == 0 || !(self.tau > 0.0) || !(self.threshold > 0.0))
        {
            return fail("spiking models need inputs > 0, tau > 0 and threshold > 0");
        }
        Ok(())
    }

    pub fn objective(&self) -> Objective {
        Objective {
            margin: self.margin,
            l2_weight: if self.model.is_spiking() {
                0.0
            } else {
                self.l2_weight
            },
            l2_reduction: self.l2_reduction,
            nonspike_delta: if self.model.is_spiking() {
                self.nonspike_delta
            } else {
                0.0
            },
        }
    }
}

/// A corrupted copy of a training triple.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct NegativeSample {
    pub positive: Triple,
    pub corrupted: Triple,
    pub side: Side,
}

/// `k` corruptions of `positive`: side uniform, replacement uniform over all
/// other entities. Not filtered against known facts.
pub fn sample_negatives(
    positive: Triple,
    k: usize,
    num_entities: usize,
    rng: &mut impl Rng,
) -> Vec<NegativeSample> {
    assert!(num_entities >= 2, "corruption needs at least two entities");
    (0..k)
        .map(|_| {
            let side = if rng.random_bool(0.5) {
                Side::Subject
            } else {
                Side::Object
            };
            let original = match side {
                Side::Subject => positive.subject,
                Side::Object => positive.object,
            };
            let mut r = rng.random_range(0..num_entities as u32 - 1);
            if r >= original.0 {
                r += 1;
            }
            let mut corrupted = positive;
            match side {
                Side::Subject => corrupted.subject = EntityId(r),
                Side::Object => corrupted.object = EntityId(r),
            }
            NegativeSample {
                positive,
                corrupted,
                side,
            }
        })
        .collect()
}

/// `max(0, γ + d_pos − d_neg)`
#[inline]
pub fn hinge_loss(d_pos: f64, d_neg: f64, margin: f64) -> f64 {
    (margin + d_pos - d_neg).max(0.0)
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct Objective {
    pub margin: f64,
    pub l2_weight: f64,
    pub l2_reduction: L2Reduction,
    pub nonspike_delta: f64,
}

/// `(positive, negative)` pairs.
pub type Pairs = [(Triple, Triple)];

fn pair_entities(pairs: &Pairs) -> Vec<EntityId> {
    distinct(
        pairs
            .iter()
            .flat_map(|(p, n)| [p.subject, p.object, n.subject, n.object])
            .collect(),
    )
}

/// Mean hinge loss over `pairs` plus regularisation, in evaluation mode.
pub fn batch_objective(
    arch: &Arch,
    store: &ParamStore,
    pairs: &Pairs,
    obj: &Objective,
) -> Result<f64> {
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let targets = pair_entities(pairs);
    let enc = arch.encode(store, &targets, None)?;
    let r = store.value(arch.relation);
    let mut loss = 0.0;
    for (pos, neg) in pairs {
        let d_pos = triple_distance(arch, &enc.output, r, *pos);
        let d_neg = triple_distance(arch, &enc.output, r, *neg);
        loss += hinge_loss(d_pos, d_neg, obj.margin);
    }
    loss /= pairs.len() as f64;
    loss += l2_value(arch, store, obj);
    if let Some(pop) = arch.spike_populations() {
        loss += pop.penalty_value(store, enc.input_entities(), obj.nonspike_delta);
    }
    Ok(loss)
}

fn triple_distance(arch: &Arch, enc: &crate::block::EntityBlock, r: &Matrix, t: Triple) -> f64 {
    arch.decoder.distance(
        enc.row(t.subject).expect("encoded subject"),
        r.row(t.predicate.idx()),
        enc.row(t.object).expect("encoded object"),
    )
}

fn l2_value(arch: &Arch, store: &ParamStore, obj: &Objective) -> f64 {
    if obj.l2_weight == 0.0 {
        return 0.0;
    }
    let mut total = 0.0;
    for id in arch.entity_param().into_iter().chain([arch.relation]) {
        let v = store.value(id);
        let sq = v.frobenius_sq();
        total += match obj.l2_reduction {
            L2Reduction::Sum => sq,
            L2Reduction::Mean => sq / v.len().max(1) as f64,
        };
    }
    obj.l2_weight * total
}

fn l2_grad(arch: &Arch, store: &mut ParamStore, obj: &Objective) {
    if obj.l2_weight == 0.0 {
        return;
    }
    for id in arch.entity_param().into_iter().chain([arch.relation]) {
        let Some((v, g)) = store.get_mut(id).value_and_grad_mut() else {
            continue;
        };
        let scale = match obj.l2_reduction {
            L2Reduction::Sum => 2.0 * obj.l2_weight,
            L2Reduction::Mean => 2.0 * obj.l2_weight / v.len().max(1) as f64,
        };
        crate::linalg::axpy(scale, v.as_slice(), g.as_mut_slice());
    }
}

/// Same value as [`batch_objective`] (with dropout when `rng` is given),
/// accumulating gradients into `store`.
pub fn batch_gradient(
    arch: &Arch,
    store: &mut ParamStore,
    pairs: &Pairs,
    obj: &Objective,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<f64> {
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let targets = pair_entities(pairs);
    let enc = arch.encode(store, &targets, rng)?;
    let out = &enc.output;
    let r = store.value(arch.relation);
    let mut d_out = Matrix::zeros(out.len(), arch.dim);
    let mut d_rel = Matrix::zeros(r.rows(), r.cols());
    let scale = 1.0 / pairs.len() as f64;
    let mut loss = 0.0;
    let mut scratch = vec![0.0; 3 * arch.dim];
    for (pos, neg) in pairs {
        let d_pos = triple_distance(arch, out, r, *pos);
        let d_neg = triple_distance(arch, out, r, *neg);
        let l = hinge_loss(d_pos, d_neg, obj.margin);
        if l <= 0.0 {
            continue;
        }
        loss += l;
        for (t, coef) in [(*pos, scale), (*neg, -scale)] {
            scratch.iter_mut().for_each(|x| *x = 0.0);
            let (gs, rest) = scratch.split_at_mut(arch.dim);
            let (gr, go) = rest.split_at_mut(arch.dim);
            arch.decoder.accumulate_grad(
                out.row(t.subject).unwrap(),
                r.row(t.predicate.idx()),
                out.row(t.object).unwrap(),
                coef,
                gs,
                gr,
                go,
            );
            crate::linalg::axpy(1.0, gs, d_out.row_mut(out.row_of(t.subject).unwrap()));
            crate::linalg::axpy(1.0, go, d_out.row_mut(out.row_of(t.object).unwrap()));
            crate::linalg::axpy(1.0, gr, d_rel.row_mut(t.predicate.idx()));
        }
    }
    loss *= scale;
    store.get_mut(arch.relation).grad_mut().add_assign(&d_rel)?;
    arch.backward(store, &enc, &d_out)?;
    loss += l2_value(arch, store, obj);
    l2_grad(arch, store, obj);
    if let Some(pop) = arch.spike_populations() {
        loss += pop.penalty(store, enc.input_entities(), obj.nonspike_delta);
    }
    Ok(loss)
}

/// Owns a model, its optimizer and the training random stream.
pub struct Trainer {
    pub model: Model,
    pub config: TrainConfig,
    adam: Adam,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(config: TrainConfig, kg: &KnowledgeGraph) -> Result<Self> {
        let model = Model::new(&config, kg)?;
        Ok(Self::from_model(model, config))
    }

    pub fn from_model(model: Model, config: TrainConfig) -> Self {
        let adam = Adam::new(
            AdamConfig {
                lr: config.lr,
                ..Default::default()
            },
            &model.params,
        );
        let rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7472_6169_6e00_0000);
        Trainer {
            model,
            config,
            adam,
            rng,
        }
    }

    pub fn optimizer(&self) -> &Adam {
        &self.adam
    }

    /// Builds the pairs of one batch of positives, applying entity
    /// sub-sampling.
    pub fn make_pairs(
        &mut self,
        positives: &[Triple],
        num_entities: usize,
    ) -> Vec<(Triple, Triple)> {
        let mut pairs = Vec::with_capacity(positives.len() * self.config.negatives);
        for &p in positives {
            for neg in sample_negatives(p, self.config.negatives, num_entities, &mut self.rng) {
                pairs.push((p, neg.corrupted));
            }
        }
        if self.config.subsample < 1.0 {
            let mut ents = pair_entities(&pairs);
            ents.shuffle(&mut self.rng);
            let keep_n = ((ents.len() as f64) * self.config.subsample).ceil() as usize;
            let mut keep = vec![false; num_entities];
            for e in &ents[..keep_n] {
                keep[e.idx()] = true;
            }
            pairs.retain(|(p, n)| {
                [p.subject, p.object, n.subject, n.object]
                    .iter()
                    .all(|e| keep[e.idx()])
            });
        }
        pairs
    }

    /// One optimizer step on `positives`. Returns the batch objective.
    pub fn train_batch(&mut self, positives: &[Triple], num_entities: usize) -> Result<f64> {
        let pairs = self.make_pairs(positives, num_entities);
        let obj = self.config.objective();
        let dropout_rng = (self.config.dropout > 0.0).then_some(&mut self.rng);
        let loss = batch_gradient(
            &self.model.arch,
            &mut self.model.params,
            &pairs,
            &obj,
            dropout_rng,
        )?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("batch loss is {loss}")));
        }
        self.adam.step(&mut self.model.params);
        Ok(loss)
    }

    /// One pass over the shuffled training split. Returns the mean batch
    /// objective.
    pub fn train_epoch(&mut self, kg: &KnowledgeGraph) -> Result<f64> {
        let mut order: Vec<Triple> = kg.train.clone();
        order.shuffle(&mut self.rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(self.config.batch_size) {
            total += self.train_batch(chunk, kg.num_entities())?;
            batches += 1;
        }
        let mean = if batches == 0 {
            0.0
        } else {
            total / batches as f64
        };
        if !mean.is_finite() {
            return Err(Error::NonFinite(format!("epoch loss is {mean}")));
        }
        if self.model.params.iter().any(|p| !p.value().is_finite()) {
            return Err(Error::NonFinite("parameters became non-finite".into()));
        }
        Ok(mean)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    /// Mean training objective of the epoch; `None` before training.
    pub loss: Option<f64>,
    pub valid_mrr: Option<f64>,
    pub wall_ms: u128,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    /// Parameters with the best validation MRR.
    pub model: Model,
    pub log: Vec<LogRow>,
    pub best_epoch: usize,
    pub best_valid_mrr: f64,
}

pub fn write_log_csv(path: &Path, log: &[LogRow]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "epoch,loss,valid_mrr,wall_ms")?;
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for row in log {
        writeln!(
            w,
            "{},{},{},{}",
            row.epoch,
            opt(row.loss),
            opt(row.valid_mrr),
            row.wall_ms
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Trains for `max_epochs`, evaluating validation MRR at epoch 0 and every
/// `eval_every` epochs (and after the last one), and keeps the best model.
pub fn fit(config: &TrainConfig, kg: &KnowledgeGraph) -> Result<FitResult> {
    fit_with(config, kg, |_| {})
}

/// As [`fit`], calling `on_row` after each log row.
pub fn fit_with(
    config: &TrainConfig,
    kg: &KnowledgeGraph,
    mut on_row: impl FnMut(&LogRow),
) -> Result<FitResult> {
    if kg.valid.is_empty() {
        return Err(Error::Config(
            "model selection needs a non-empty validation split".into(),
        ));
    }
    let mut trainer = Trainer::new(config.clone(), kg)?;
    let evaluator = Evaluator::new(kg);
    let start = Instant::now();
    let valid_mrr =
        |m: &Model| -> Result<f64> { Ok(evaluator.evaluate(m, Split::Valid, &kg.valid)?.mrr) };

    let mut best_mrr = valid_mrr(&trainer.model)?;
    let mut best_params = trainer.model.params.clone();
    let mut best_epoch = 0;
    let mut log = vec![LogRow {
        epoch: 0,
        loss: None,
        valid_mrr: Some(best_mrr),
        wall_ms: start.elapsed().as_millis(),
    }];
    on_row(&log[0]);
    for epoch in 1..=config.max_epochs {
        let loss = trainer.train_epoch(kg)?;
        let evaluate = epoch % config.eval_every == 0 || epoch == config.max_epochs;
        let mrr = if evaluate {
            Some(valid_mrr(&trainer.model)?)
        } else {
            None
        };
        if let Some(m) = mrr {
            if m > best_mrr {
                best_mrr = m;
                best_params = trainer.model.params.clone();
                best_epoch = epoch;
            }
        }
        let row = LogRow {
            epoch,
            loss: Some(loss),
            valid_mrr: mrr,
            wall_ms: start.elapsed().as_millis(),
        };
        on_row(&row);
        log.push(row);
    }
    let mut model = trainer.model;
    model.params = best_params;
    model.params.zero_grads();
    Ok(FitResult {
        model,
        log,
        best_epoch,
        best_valid_mrr: best_mrr,
    })
}

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const CONFIG_FILE: &str = "config.txt";

/// Writes the checkpoint, its manifest, the resolved config and both
/// dictionaries into `dir`.
pub fn save_model(
    dir: &Path,
    config: &TrainConfig,
    model: &Model,
    kg: &KnowledgeGraph,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    crate::linalg::checkpoint::write_checkpoint(&dir.join(CHECKPOINT_FILE), &model.params)?;
    std::fs::write(dir.join(CONFIG_FILE), config.to_kv())?;
    kg.vocab.entities.write(&dir.join("entities.dict"))?;
    kg.vocab.relations.write(&dir.join("relations.dict"))?;
    Ok(())
}

/// Rebuilds the model described by `config` over `kg` and restores the
/// parameters in `checkpoint`. Dictionaries stored next to the checkpoint
/// must match the graph's.
pub fn load_model(checkpoint: &Path, config: &TrainConfig, kg: &KnowledgeGraph) -> Result<Model> {
    let dir = checkpoint.parent().unwrap_or(Path::new("."));
    for (file, dict, what) in [
        ("entities.dict", &kg.vocab.entities, "entity"),
        ("relations.dict", &kg.vocab.relations, "relation"),
    ] {
        let path = dir.join(file);
        if path.exists() && crate::graph::Dictionary::read(&path)? != *dict {
            return Err(Error::Vocabulary(format!(
                "{what} dictionary of {} does not match the dataset",
                checkpoint.display()
            )));
        }
    }
    let mut model = Model::new(config, kg)?;
    let records = crate::linalg::checkpoint::read_checkpoint(checkpoint)?;
    crate::linalg::checkpoint::restore(&mut model.params, &records)?;
    Ok(model)
}

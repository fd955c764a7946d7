use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};

use fkge_core::bench::{self, BenchConfig};
use fkge_core::evaluation::{self, Evaluator, RankingReport};
use fkge_core::graph::{gen_federal_states, gen_small_kg, SmallKgSpec, Split};
use fkge_core::training::{self, write_log_csv, TrainConfig, CONFIG_FILE};
use fkge_core::{EntityId, KnowledgeGraph, ModelKind, RelationId};

#[derive(Parser, Debug)]
#[command(
    name = "fkge",
    version,
    about = "Knowledge graph embeddings with frozen graph convolutions"
)]
struct Cli {
    /// Worker threads; bench defaults to 1, everything else to all cores.
    #[arg(long, global = true, env = "FKGE_THREADS")]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, env = "FKGE_OUT_DIR")]
    out: Option<PathBuf>,
    /// Root of the bundled datasets.
    #[arg(long, global = true, env = "FKGE_DATA_DIR")]
    data_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and keep the best checkpoint on validation MRR.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one or more splits.
    Eval(EvalArgs),
    /// Time frozen versus trained backward passes.
    Bench(BenchArgs),
    /// Embed a new node from its neighbours and suggest links for it.
    Inductive(InductiveArgs),
    /// Write a bundled dataset to disk.
    GenDataset(GenArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    dataset: String,
    /// `key = value` config file; command-line flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    frozen: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    self_loop: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    inverse: Option<bool>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    negatives: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    l2: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    /// Input neurons per spiking population.
    #[arg(long)]
    inputs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Any config key, as `key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    dataset: String,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Defaults to `config.txt` next to the checkpoint.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "test")]
    splits: Vec<String>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long)]
    dataset: String,
    #[arg(long, value_delimiter = ',', default_value = "16,32,64,128")]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    #[arg(long, default_value_t = 1)]
    layers: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args, Debug)]
struct InductiveArgs {
    #[arg(long)]
    dataset: String,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated `entity:relation` edges from the new node. With
    /// inverse relations, `entity:relation^-1` is an edge into the new node.
    #[arg(long)]
    neighbors: String,
    /// Relation to suggest objects for; defaults to the first neighbour's.
    #[arg(long)]
    relation: Option<String>,
    #[arg(long, default_value_t = 10)]
    top: usize,
}

#[derive(Args, Debug)]
struct GenArgs {
    name: String,
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

/// Errors caused by the invocation rather than the computation.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<fkge_core::Error>() {
        Some(
            fkge_core::Error::Config(_)
            | fkge_core::Error::Vocabulary(_)
            | fkge_core::Error::Parse { .. },
        ) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let default_threads = match cli.command {
        Command::Bench(_) => 1,
        _ => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(default_threads))
        .build_global()
        .context("configuring worker threads")?;
    let ctx = Env {
        out: cli.out,
        data_dir: cli.data_dir,
    };
    match cli.command {
        Command::Train(a) => cmd_train(&ctx, a),
        Command::Eval(a) => cmd_eval(&ctx, a),
        Command::Bench(a) => cmd_bench(&ctx, a),
        Command::Inductive(a) => cmd_inductive(&ctx, a),
        Command::GenDataset(a) => cmd_gen_dataset(a),
    }
}

struct Env {
    out: Option<PathBuf>,
    data_dir: Option<PathBuf>,
}

impl Env {
    fn out_dir(&self, default: &str) -> anyhow::Result<PathBuf> {
        let dir = self
            .out
            .clone()
            .unwrap_or_else(|| PathBuf::from("runs").join(default));
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }

    fn data_roots(&self) -> Vec<PathBuf> {
        let mut roots = Vec::new();
        if let Some(d) = &self.data_dir {
            roots.push(d.clone());
        }
        roots.push(PathBuf::from("data"));
        roots.push(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data"));
        roots
    }

    /// Registry names resolve against the data roots; anything else is a
    /// directory path.
    fn load_dataset(&self, name: &str) -> anyhow::Result<KnowledgeGraph> {
        let registered = [
            "countries_s1",
            "umls",
            "fb15k-237",
            "federal-states",
            "synthetic-broodwar-like",
        ];
        if registered.contains(&name) {
            for root in self.data_roots() {
                let dir = root.join(name);
                if dir.join("train.tsv").exists() || dir.join("train.txt").exists() {
                    return Ok(KnowledgeGraph::load_dir(&dir)?);
                }
            }
            return match name {
                "federal-states" => Ok(gen_federal_states()),
                "synthetic-broodwar-like" => Ok(gen_small_kg(&SmallKgSpec::broodwar_like())?),
                _ => Err(usage(format!(
                    "dataset `{name}` not found; place its train/valid/test files under data/{name}/ or pass --data-dir"
                ))),
            };
        }
        let dir = Path::new(name);
        if !dir.is_dir() {
            return Err(usage(format!("dataset path `{name}` does not exist")));
        }
        Ok(KnowledgeGraph::load_dir(dir)?)
    }
}

fn dataset_label(name: &str) -> String {
    Path::new(name)
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| name.to_string())
}

fn read_config(path: &Path) -> anyhow::Result<TrainConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("reading {}: {e}", path.display())))?;
    let mut cfg = TrainConfig::default();
    for line in text.lines() {
        let key = line.split('=').next().unwrap_or("").trim();
        if key == "dataset" || key == "out_dir" {
            continue;
        }
        cfg.apply_kv(line)?;
    }
    Ok(cfg)
}

fn resolve_train_config(a: &TrainArgs) -> anyhow::Result<TrainConfig> {
    let mut cfg = match &a.config {
        Some(p) => read_config(p)?,
        None => TrainConfig::default(),
    };
    macro_rules! apply {
        ($($flag:ident => $field:ident),*) => {
            $(if let Some(v) = a.$flag.clone() { cfg.$field = v; })*
        };
    }
    apply!(model => model, dim => dim, frozen => frozen, self_loop => self_loop, inverse => add_inverse_relations,
        layers => layers, lr => lr, margin => margin, negatives => negatives, batch_size => batch_size,
        epochs => max_epochs, eval_every => eval_every, l2 => l2_weight, dropout => dropout,
        inputs => spike_inputs, seed => seed);
    for kv in &a.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(ctx: &Env, a: TrainArgs) -> anyhow::Result<()> {
    let cfg = resolve_train_config(&a)?;
    let kg = ctx.load_dataset(&a.dataset)?;
    let label = dataset_label(&a.dataset);
    let out = ctx.out_dir(&format!("{}-{}-seed{}", label, cfg.model, cfg.seed))?;
    let (n, m, tr, va, te) = kg.stats();
    println!("dataset {label}: {n} entities, {m} relations, {tr}/{va}/{te} triples");
    println!(
        "model {} d={} seed={} -> {}",
        cfg.model,
        cfg.dim,
        cfg.seed,
        out.display()
    );
    std::fs::write(
        out.join(CONFIG_FILE),
        format!(
            "dataset = {}\nout_dir = {}\n{}",
            a.dataset,
            out.display(),
            cfg.to_kv()
        ),
    )?;

    let result = training::fit_with(&cfg, &kg, |row| {
        if let Some(mrr) = row.valid_mrr {
            let loss = row.loss.map_or("-".to_string(), |l| format!("{l:.5}"));
            println!(
                "epoch {:>5}  loss {loss}  valid MRR {mrr:.4}  {} ms",
                row.epoch, row.wall_ms
            );
        }
    })?;
    write_log_csv(&out.join("train_log.csv"), &result.log)?;
    training::save_model(&out, &cfg, &result.model, &kg)?;
    // save_model writes the bare config; keep the dataset line for replay.
    std::fs::write(
        out.join(CONFIG_FILE),
        format!(
            "dataset = {}\nout_dir = {}\n{}",
            a.dataset,
            out.display(),
            cfg.to_kv()
        ),
    )?;

    let evaluator = Evaluator::new(&kg);
    let reports: Vec<RankingReport> = [Split::Valid, Split::Test]
        .into_iter()
        .map(|s| evaluator.evaluate(&result.model, s, kg.split(s)))
        .collect::<Result<_, _>>()?;
    for r in &reports {
        r.write_records(&out.join(format!("ranks_{}.tsv", r.split)), &kg)?;
    }
    println!(
        "best epoch {} (valid MRR {:.4})",
        result.best_epoch, result.best_valid_mrr
    );
    print!("{}", RankingReport::format_table(&reports));
    Ok(())
}

fn load_for_eval(
    ctx: &Env,
    dataset: &str,
    checkpoint: &Path,
    config: Option<&Path>,
) -> anyhow::Result<(KnowledgeGraph, fkge_core::Model, TrainConfig)> {
    if !checkpoint.exists() {
        return Err(usage(format!(
            "checkpoint {} does not exist",
            checkpoint.display()
        )));
    }
    let cfg_path = config
        .map(Path::to_path_buf)
        .unwrap_or_else(|| checkpoint.with_file_name(CONFIG_FILE));
    let cfg = read_config(&cfg_path)?;
    let kg = ctx.load_dataset(dataset)?;
    let model = training::load_model(checkpoint, &cfg, &kg)?;
    Ok((kg, model, cfg))
}

fn cmd_eval(ctx: &Env, a: EvalArgs) -> anyhow::Result<()> {
    let splits: Vec<Split> = a
        .splits
        .iter()
        .map(|s| s.parse::<Split>().map_err(|e| usage(e.to_string())))
        .collect::<anyhow::Result<_>>()?;
    let (kg, model, cfg) = load_for_eval(ctx, &a.dataset, &a.checkpoint, a.config.as_deref())?;
    let out = ctx.out_dir(&format!("eval-{}-{}", dataset_label(&a.dataset), cfg.model))?;
    let evaluator = Evaluator::new(&kg);
    let mut reports = Vec::new();
    for s in splits {
        let r = evaluator.evaluate(&model, s, kg.split(s))?;
        r.write_records(&out.join(format!("ranks_{s}.tsv")), &kg)?;
        reports.push(r);
    }
    let table = RankingReport::format_table(&reports);
    std::fs::write(out.join("report.txt"), &table)?;
    print!("{table}");
    if let Some((spikes, stats)) = model.arch.srgcn_report(&model.params)? {
        println!(
            "causal input fraction {:.2}% +- {:.2}% ({} fired, {} silent neurons)",
            100.0 * stats.mean,
            100.0 * stats.std,
            stats.fired_neurons,
            stats.silent_neurons
        );
        let rows = spikes
            .into_iter()
            .enumerate()
            .map(|(e, s)| (kg.entity_name(EntityId(e as u32)).to_string(), s));
        fkge_core::spiking::write_raster(&out.join("raster.tsv"), rows)?;
    }
    Ok(())
}

fn cmd_bench(ctx: &Env, a: BenchArgs) -> anyhow::Result<()> {
    let kg = ctx.load_dataset(&a.dataset)?;
    let label = dataset_label(&a.dataset);
    let cfg = BenchConfig {
        dims: a.dims,
        repeats: a.reps,
        batch_size: a.batch_size,
        layers: a.layers,
        seed: a.seed,
        label: label.clone(),
        ..Default::default()
    };
    if cfg.dims.is_empty() || cfg.dims.contains(&0) || cfg.repeats == 0 {
        return Err(usage("dims must be positive and reps at least 1"));
    }
    let out = ctx.out_dir(&format!("bench-{label}"))?;
    let rows = bench::run_bench(&kg, &cfg)?;
    bench::write_bench_csv(&out.join("bench.csv"), &rows)?;
    bench::write_speedup_csv(&out.join("speedup.csv"), &rows)?;
    println!(
        "{:>5} {:>9} {:>14} {:>14} {:>10}",
        "d", "speedup", "saved bytes", "closed form", "saved"
    );
    for r in &rows {
        println!(
            "{:>5} {:>9.4} {:>14} {:>14} {:>9.1}%",
            r.dim,
            r.speedup(),
            r.memory_reduction(),
            r.expected_reduction,
            100.0 * r.memory_reduction_fraction()
        );
    }
    Ok(())
}

fn parse_neighbors(
    kg: &KnowledgeGraph,
    spec: &str,
    inverse: bool,
) -> anyhow::Result<Vec<(RelationId, EntityId)>> {
    spec.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|item| {
            let (e, r) = item
                .trim()
                .rsplit_once(':')
                .ok_or_else(|| usage(format!("neighbour `{item}` is not `entity:relation`")))?;
            let ent = kg
                .entity(e)
                .ok_or_else(|| usage(format!("unknown entity `{e}`")))?;
            let (name, flipped) = match r.strip_suffix("^-1") {
                Some(base) if inverse => (base, true),
                Some(_) => {
                    return Err(usage(format!(
                        "`{r}` needs a model trained with inverse relations"
                    )))
                }
                None => (r, false),
            };
            let rel = kg
                .relation(name)
                .ok_or_else(|| usage(format!("unknown relation `{name}`")))?;
            let slot = if flipped {
                RelationId(rel.0 + kg.num_relations() as u32)
            } else {
                rel
            };
            Ok((slot, ent))
        })
        .collect()
}

fn cmd_inductive(ctx: &Env, a: InductiveArgs) -> anyhow::Result<()> {
    let (kg, model, cfg) = load_for_eval(ctx, &a.dataset, &a.checkpoint, a.config.as_deref())?;
    let neighbors = parse_neighbors(&kg, &a.neighbors, cfg.add_inverse_relations)?;
    if neighbors.is_empty() {
        bail!(usage("at least one neighbour is required"));
    }
    let relation = match &a.relation {
        Some(r) => kg
            .relation(r)
            .ok_or_else(|| usage(format!("unknown relation `{r}`")))?,
        None => RelationId(neighbors[0].0 .0 % kg.num_relations() as u32),
    };
    let new = model.inductive_embed(&neighbors)?;
    let out = ctx.out_dir(&format!(
        "inductive-{}-{}",
        dataset_label(&a.dataset),
        cfg.model
    ))?;

    let h = model.encode_all()?;
    let mut rows: Vec<Vec<f64>> = (0..h.rows()).map(|i| h.row(i).to_vec()).collect();
    rows.push(new.clone());
    let points = fkge_core::linalg::Matrix::from_rows(&rows)?;
    let coords = evaluation::pca_project(&points)?;
    let mut names: Vec<String> = kg.vocab.entities.names().to_vec();
    names.push("<new>".to_string());
    evaluation::write_projection_csv(&out.join("pca.csv"), &names, &coords)?;

    let suggestions = evaluation::neighbor_suggestions(&model, &new, relation, a.top)?;
    let mut text = String::from("rank\tentity\tdistance\n");
    println!(
        "suggested objects for (<new>, {}, ?):",
        kg.relation_name(relation)
    );
    for (i, (e, d)) in suggestions.iter().enumerate() {
        println!("{:>3}. {:<30} {:.4}", i + 1, kg.entity_name(*e), d);
        text.push_str(&format!("{}\t{}\t{}\n", i + 1, kg.entity_name(*e), d));
    }
    std::fs::write(out.join("suggestions.tsv"), text)?;
    println!("wrote {}", out.join("pca.csv").display());
    Ok(())
}

fn cmd_gen_dataset(a: GenArgs) -> anyhow::Result<()> {
    let kg = match a.name.as_str() {
        "federal-states" => {
            if a.seed.is_some() {
                return Err(usage("federal-states is fixed and takes no seed"));
            }
            gen_federal_states()
        }
        "synthetic-broodwar-like" => {
            let mut spec = SmallKgSpec::broodwar_like();
            if let Some(s) = a.seed {
                spec.seed = s;
            }
            gen_small_kg(&spec)?
        }
        other => {
            return Err(anyhow!(UsageError(format!(
                "no generator for `{other}` (known: federal-states, synthetic-broodwar-like)"
            ))))
        }
    };
    kg.write_dir(&a.out)?;
    let (n, m, tr, va, te) = kg.stats();
    println!(
        "{}: {n} entities, {m} relations, {tr}/{va}/{te} triples",
        a.out.display()
    );
    Ok(())
}

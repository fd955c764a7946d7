//! Filtered link-prediction ranking, PCA projection and neighbour
//! suggestions for inductively embedded nodes.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{EntityId, KnowledgeGraph, RelationId, Split, Triple};
use crate::linalg::Matrix;
use crate::model::Model;
use crate::shallow::Decoder;

/// Which end of a triple is being predicted.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum Side {
    Subject,
    Object,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Subject => "subject",
            Side::Object => "object",
        })
    }
}

/// Known true completions of `(s, p, ?)` and `(?, p, o)` across all splits.
#[derive(Clone, Debug, Default)]
pub struct FilterIndex {
    objects: HashMap<(u32, u32), Vec<u32>>,
    subjects: HashMap<(u32, u32), Vec<u32>>,
    size: usize,
}

impl FilterIndex {
    pub fn new(kg: &KnowledgeGraph) -> Self {
        Self::from_triples(kg.all_triples().copied())
    }

    pub fn from_triples(triples: impl IntoIterator<Item = Triple>) -> Self {
        let mut f = FilterIndex::default();
        for t in triples {
            f.objects
                .entry((t.subject.0, t.predicate.0))
                .or_default()
                .push(t.object.0);
            f.subjects
                .entry((t.predicate.0, t.object.0))
                .or_default()
                .push(t.subject.0);
        }
        for v in f.objects.values_mut().chain(f.subjects.values_mut()) {
            v.sort_unstable();
            v.dedup();
        }
        f.size = f.objects.values().map(Vec::len).sum();
        f
    }

    /// Number of distinct triples indexed.
    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    pub fn known_objects(&self, s: EntityId, p: RelationId) -> &[u32] {
        self.objects.get(&(s.0, p.0)).map_or(&[], Vec::as_slice)
    }

    pub fn known_subjects(&self, p: RelationId, o: EntityId) -> &[u32] {
        self.subjects.get(&(p.0, o.0)).map_or(&[], Vec::as_slice)
    }

    fn known(&self, t: Triple, side: Side) -> &[u32] {
        match side {
            Side::Object => self.known_objects(t.subject, t.predicate),
            Side::Subject => self.known_subjects(t.predicate, t.object),
        }
    }
}

/// Realistic filtered rank of `truth` among candidates scored by
/// `distances` (lower is better): `1 + #better + #ties / 2`, where candidates
/// in `known` (sorted) other than `truth` are skipped.
pub fn rank_query(distances: &[f64], truth: EntityId, known: &[u32]) -> f64 {
    let d_true = distances[truth.idx()];
    let (mut better, mut ties) = (0usize, 0usize);
    for (e, &d) in distances.iter().enumerate() {
        if e == truth.idx() || known.binary_search(&(e as u32)).is_ok() {
            continue;
        }
        if d < d_true {
            better += 1;
        } else if d == d_true {
            ties += 1;
        }
    }
    1.0 + better as f64 + ties as f64 / 2.0
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct QueryRecord {
    pub triple: Triple,
    pub side: Side,
    pub rank: f64,
}

#[derive(Clone, Debug)]
pub struct RankingReport {
    pub model: String,
    pub split: Split,
    pub filter_size: usize,
    pub queries: Vec<QueryRecord>,
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
}

impl RankingReport {
    pub fn from_queries(
        model: impl Into<String>,
        split: Split,
        filter_size: usize,
        queries: Vec<QueryRecord>,
    ) -> Self {
        let n = queries.len().max(1) as f64;
        let mrr = queries.iter().map(|q| 1.0 / q.rank).sum::<f64>() / n;
        let hits = |k: f64| queries.iter().filter(|q| q.rank <= k).count() as f64 / n;
        RankingReport {
            model: model.into(),
            split,
            filter_size,
            mrr,
            hits1: hits(1.0),
            hits3: hits(3.0),
            queries,
        }
    }

    pub fn table_header() -> &'static str {
        "model                split   queries      MRR   hits@1   hits@3"
    }

    pub fn table_row(&self) -> String {
        format!(
            "{:<20} {:<6} {:>8} {:>8.4} {:>8.4} {:>8.4}",
            self.model,
            self.split,
            self.queries.len(),
            self.mrr,
            self.hits1,
            self.hits3
        )
    }

    pub fn format_table(reports: &[RankingReport]) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}", Self::table_header());
        for r in reports {
            let _ = writeln!(out, "{}", r.table_row());
        }
        out
    }

    /// One TSV line per query with entity and relation names.
    pub fn write_records(&self, path: &Path, kg: &KnowledgeGraph) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "subject\tpredicate\tobject\tside\trank")?;
        for q in &self.queries {
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}",
                kg.entity_name(q.triple.subject),
                kg.relation_name(q.triple.predicate),
                kg.entity_name(q.triple.object),
                q.side,
                q.rank
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Ranks both sides of every triple against all entities.
pub fn rank_triples(
    decoder: Decoder,
    entities: &Matrix,
    relations: &Matrix,
    triples: &[Triple],
    filter: &FilterIndex,
) -> Result<Vec<QueryRecord>> {
    if entities.cols() != relations.cols() {
        return Err(Error::Shape("entity and relation dimensions differ".into()));
    }
    for t in triples {
        if t.subject.idx() >= entities.rows()
            || t.object.idx() >= entities.rows()
            || t.predicate.idx() >= relations.rows()
        {
            return Err(Error::Shape(format!("triple {t:?} out of range")));
        }
    }
    let n = entities.rows();
    Ok(triples
        .par_iter()
        .flat_map_iter(|&t| {
            let r = relations.row(t.predicate.idx());
            [Side::Object, Side::Subject].into_iter().map(move |side| {
                let (known, truth) = match side {
                    Side::Object => (entities.row(t.subject.idx()), t.object),
                    Side::Subject => (entities.row(t.object.idx()), t.subject),
                };
                let q = decoder.query(known, r, side == Side::Object);
                let distances: Vec<f64> = (0..n)
                    .map(|e| decoder.candidate_distance(&q, entities.row(e)))
                    .collect();
                QueryRecord {
                    triple: t,
                    side,
                    rank: rank_query(&distances, truth, filter.known(t, side)),
                }
            })
        })
        .collect())
}

/// Filtered evaluation against a fixed knowledge graph.
pub struct Evaluator {
    filter: FilterIndex,
}

impl Evaluator {
    pub fn new(kg: &KnowledgeGraph) -> Self {
        Evaluator {
            filter: FilterIndex::new(kg),
        }
    }

    pub fn filter(&self) -> &FilterIndex {
        &self.filter
    }

    pub fn evaluate(
        &self,
        model: &Model,
        split: Split,
        triples: &[Triple],
    ) -> Result<RankingReport> {
        let h = model.encode_all()?;
        if !h.is_finite() {
            return Err(Error::NonFinite("entity encodings".into()));
        }
        let r = model.params.value(model.arch.relation);
        let queries = rank_triples(model.arch.decoder, &h, r, triples, &self.filter)?;
        Ok(RankingReport::from_queries(
            model.arch.kind.as_str(),
            split,
            self.filter.len(),
            queries,
        ))
    }
}

pub fn evaluate_split(model: &Model, kg: &KnowledgeGraph, split: Split) -> Result<RankingReport> {
    Evaluator::new(kg).evaluate(model, split, kg.split(split))
}

/// Eigen-decomposition of a symmetric matrix. Eigenvalues are returned in
/// descending order with eigenvectors as the columns of the second result.
pub fn symmetric_eigen(a: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::Shape(
            "eigen-decomposition needs a square matrix".into(),
        ));
    }
    let eig = nalgebra::DMatrix::from_row_slice(n, n, a.as_slice()).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (c, &i) in order.iter().enumerate() {
        for k in 0..n {
            vectors.set(k, c, eig.eigenvectors[(k, i)]);
        }
    }
    Ok((values, vectors))
}

/// Projects the rows of `points` onto their two leading principal
/// directions. Each direction is signed so that its largest-magnitude
/// loading is positive. Directions with (numerically) zero variance are
/// reported as zero columns.
pub fn pca_project(points: &Matrix) -> Result<Matrix> {
    let (n, d) = points.shape();
    let mut out = Matrix::zeros(n, 2);
    if n == 0 || d == 0 {
        return Ok(out);
    }
    let mut mean = vec![0.0; d];
    for i in 0..n {
        crate::linalg::axpy(1.0 / n as f64, points.row(i), &mut mean);
    }
    let mut centered = points.clone();
    for i in 0..n {
        crate::linalg::axpy(-1.0, &mean, centered.row_mut(i));
    }
    let cov = {
        let mut c = centered.transpose().matmul(&centered)?;
        c.scale(1.0 / n as f64);
        c
    };
    let (values, vectors) = symmetric_eigen(&cov)?;
    let scale_tol = 1e-12 * values.first().copied().unwrap_or(0.0).abs().max(1e-300);
    for (c, &val) in values.iter().enumerate().take(2.min(d)) {
        if val <= scale_tol {
            continue;
        }
        let mut dir: Vec<f64> = (0..d).map(|k| vectors.get(k, c)).collect();
        let lead = dir
            .iter()
            .copied()
            .fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
        if lead < 0.0 {
            dir.iter_mut().for_each(|x| *x = -*x);
        }
        for i in 0..n {
            out.set(i, c, crate::linalg::dot(centered.row(i), &dir));
        }
    }
    Ok(out)
}

/// Writes `name,x,y` rows.
pub fn write_projection_csv(path: &Path, names: &[String], coords: &Matrix) -> Result<()> {
    if names.len() != coords.rows() || coords.cols() != 2 {
        return Err(Error::Shape("one 2-d point per name expected".into()));
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "name,x,y")?;
    for (i, name) in names.iter().enumerate() {
        writeln!(w, "{},{},{}", name, coords.get(i, 0), coords.get(i, 1))?;
    }
    w.flush()?;
    Ok(())
}

/// The `k` entities closest to completing `(new, relation, ?)` for an
/// embedding `new` that is not part of the graph.
pub fn neighbor_suggestions(
    model: &Model,
    new: &[f64],
    relation: RelationId,
    k: usize,
) -> Result<Vec<(EntityId, f64)>> {
    let h = model.encode_all()?;
    let r = model.params.value(model.arch.relation);
    if relation.idx() >= r.rows() || new.len() != r.cols() {
        return Err(Error::Shape(
            "relation or embedding does not fit the model".into(),
        ));
    }
    let q = model.arch.decoder.query(new, r.row(relation.idx()), true);
    let mut scored: Vec<(EntityId, f64)> = (0..h.rows())
        .map(|e| {
            (
                EntityId(e as u32),
                model.arch.decoder.candidate_distance(&q, h.row(e)),
            )
        })
        .collect();
    scored.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(scored)
}

//! Triple store: dictionaries, dataset splits and the per-relation
//! neighbourhood index used by the graph encoders.

mod generate;
mod index;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

pub use generate::{gen_federal_states, gen_small_kg, SmallKgSpec};
pub use index::{NeighborIndex, Neighborhood};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntityId(pub u32);

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelationId(pub u32);

impl EntityId {
    #[inline]
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    #[inline]
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub subject: EntityId,
    pub predicate: RelationId,
    pub object: EntityId,
}

impl Triple {
    pub fn new(subject: u32, predicate: u32, object: u32) -> Self {
        Triple {
            subject: EntityId(subject),
            predicate: RelationId(predicate),
            object: EntityId(object),
        }
    }
}

/// Bijection between surface strings and dense ids, assigned in
/// first-encounter order. Case-sensitive.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Dictionary {
    names: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Dictionary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.ids.get(name).copied()
    }

    pub fn name(&self, id: u32) -> &str {
        &self.names[id as usize]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get_or_insert(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.ids.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_string());
        self.ids.insert(name.to_string(), id);
        id
    }

    /// Writes `id<TAB>surface` lines.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for (i, n) in self.names.iter().enumerate() {
            writeln!(w, "{i}\t{n}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut dict = Dictionary::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let parse_err = |msg: &str| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg: msg.to_string(),
            };
            let (id, name) = line
                .split_once('\t')
                .ok_or_else(|| parse_err("expected `id<TAB>surface`"))?;
            let id: usize = id.parse().map_err(|_| parse_err("bad id"))?;
            if id != dict.len() {
                return Err(parse_err("ids must be dense and in order"));
            }
            if dict.get(name).is_some() {
                return Err(parse_err("duplicate surface form"));
            }
            dict.get_or_insert(name);
        }
        Ok(dict)
    }
}

/// Entity and relation dictionaries.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocab {
    pub entities: Dictionary,
    pub relations: Dictionary,
}

/// Whether loading a split may mint new ids.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum VocabMode {
    Extend,
    Fixed,
}

/// Reads a `subject<TAB>predicate<TAB>object` file.
///
/// With [`VocabMode::Fixed`] an unknown surface form is a vocabulary error.
/// Duplicate lines are dropped.
pub fn load_tsv(path: &Path, vocab: &mut Vocab, mode: VocabMode) -> Result<Vec<Triple>> {
    let reader = BufReader::new(File::open(path)?);
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        let triple = match mode {
            VocabMode::Extend => {
                let s = vocab.entities.get_or_insert(fields[0]);
                let p = vocab.relations.get_or_insert(fields[1]);
                let o = vocab.entities.get_or_insert(fields[2]);
                Triple::new(s, p, o)
            }
            VocabMode::Fixed => {
                let lookup = |d: &Dictionary, name: &str, what: &str| {
                    d.get(name).ok_or_else(|| {
                        Error::Vocabulary(format!(
                            "{}:{}: unknown {what} `{name}`",
                            path.display(),
                            lineno + 1
                        ))
                    })
                };
                Triple::new(
                    lookup(&vocab.entities, fields[0], "entity")?,
                    lookup(&vocab.relations, fields[1], "relation")?,
                    lookup(&vocab.entities, fields[2], "entity")?,
                )
            }
        };
        if seen.insert(triple) {
            out.push(triple);
        }
    }
    Ok(out)
}

pub fn write_tsv(path: &Path, vocab: &Vocab, triples: &[Triple]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for t in triples {
        writeln!(
            w,
            "{}\t{}\t{}",
            vocab.entities.name(t.subject.0),
            vocab.relations.name(t.predicate.0),
            vocab.entities.name(t.object.0)
        )?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "validation" | "eval" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

/// An immutable knowledge graph with train/valid/test splits.
///
/// The neighbourhood index is derived from the training split only.
#[derive(Clone, Debug)]
pub struct KnowledgeGraph {
    pub vocab: Vocab,
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
    index: NeighborIndex,
}

impl KnowledgeGraph {
    pub fn new(
        vocab: Vocab,
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
    ) -> Result<Self> {
        let n_ent = vocab.entities.len() as u32;
        let n_rel = vocab.relations.len() as u32;
        for t in train.iter().chain(&valid).chain(&test) {
            if t.subject.0 >= n_ent || t.object.0 >= n_ent || t.predicate.0 >= n_rel {
                return Err(Error::Vocabulary(format!(
                    "triple {t:?} references an unknown id"
                )));
            }
        }
        let mut seen: HashMap<Triple, Split> = HashMap::new();
        for (split, list) in [
            (Split::Train, &train),
            (Split::Valid, &valid),
            (Split::Test, &test),
        ] {
            for t in list.iter() {
                if let Some(prev) = seen.insert(*t, split) {
                    return Err(Error::Config(format!(
                        "triple {} appears in both {prev} and {split}",
                        describe(&vocab, t)
                    )));
                }
            }
        }
        let index = NeighborIndex::build(&train, vocab.relations.len(), false);
        Ok(KnowledgeGraph {
            vocab,
            train,
            valid,
            test,
            index,
        })
    }

    /// Builds a graph from surface-form triples, assigning ids in
    /// train/valid/test encounter order.
    pub fn from_named<S: AsRef<str>>(
        train: &[(S, S, S)],
        valid: &[(S, S, S)],
        test: &[(S, S, S)],
    ) -> Result<Self> {
        let mut vocab = Vocab::default();
        let mut convert = |rows: &[(S, S, S)]| -> Vec<Triple> {
            let mut seen = HashSet::new();
            rows.iter()
                .map(|(s, p, o)| {
                    Triple::new(
                        vocab.entities.get_or_insert(s.as_ref()),
                        vocab.relations.get_or_insert(p.as_ref()),
                        vocab.entities.get_or_insert(o.as_ref()),
                    )
                })
                .filter(|t| seen.insert(*t))
                .collect()
        };
        let train = convert(train);
        let valid = convert(valid);
        let test = convert(test);
        KnowledgeGraph::new(vocab, train, valid, test)
    }

    /// Loads `{train,valid,test}.tsv` from `dir`. If `entities.dict` and
    /// `relations.dict` are present they fix the vocabulary; otherwise ids
    /// are minted while reading the training split and frozen afterwards.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let ent_dict = dir.join("entities.dict");
        let rel_dict = dir.join("relations.dict");
        let (mut vocab, train_mode) = if ent_dict.exists() && rel_dict.exists() {
            let vocab = Vocab {
                entities: Dictionary::read(&ent_dict)?,
                relations: Dictionary::read(&rel_dict)?,
            };
            (vocab, VocabMode::Fixed)
        } else {
            (Vocab::default(), VocabMode::Extend)
        };
        let train = load_tsv(&split_path(dir, Split::Train)?, &mut vocab, train_mode)?;
        let valid = load_tsv(
            &split_path(dir, Split::Valid)?,
            &mut vocab,
            VocabMode::Fixed,
        )?;
        let test = load_tsv(&split_path(dir, Split::Test)?, &mut vocab, VocabMode::Fixed)?;
        KnowledgeGraph::new(vocab, train, valid, test)
    }

    /// Writes the three splits and both dictionaries into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for split in Split::ALL {
            write_tsv(
                &dir.join(format!("{split}.tsv")),
                &self.vocab,
                self.split(split),
            )?;
        }
        self.vocab.entities.write(&dir.join("entities.dict"))?;
        self.vocab.relations.write(&dir.join("relations.dict"))?;
        Ok(())
    }

    pub fn num_entities(&self) -> usize {
        self.vocab.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.vocab.relations.len()
    }

    pub fn split(&self, split: Split) -> &[Triple] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn all_triples(&self) -> impl Iterator<Item = &Triple> {
        self.train.iter().chain(&self.valid).chain(&self.test)
    }

    pub fn neighbor_index(&self) -> &NeighborIndex {
        &self.index
    }

    pub fn entity(&self, name: &str) -> Option<EntityId> {
        self.vocab.entities.get(name).map(EntityId)
    }

    pub fn relation(&self, name: &str) -> Option<RelationId> {
        self.vocab.relations.get(name).map(RelationId)
    }

    pub fn entity_name(&self, id: EntityId) -> &str {
        self.vocab.entities.name(id.0)
    }

    pub fn relation_name(&self, id: RelationId) -> &str {
        self.vocab.relations.name(id.0)
    }

    /// (entities, relations, train, valid, test)
    pub fn stats(&self) -> (usize, usize, usize, usize, usize) {
        (
            self.num_entities(),
            self.num_relations(),
            self.train.len(),
            self.valid.len(),
            self.test.len(),
        )
    }
}

fn split_path(dir: &Path, split: Split) -> Result<std::path::PathBuf> {
    for ext in ["tsv", "txt"] {
        let p = dir.join(format!("{split}.{ext}"));
        if p.exists() {
            return Ok(p);
        }
    }
    Err(Error::Config(format!(
        "{} has no {split}.tsv",
        dir.display()
    )))
}

fn describe(vocab: &Vocab, t: &Triple) -> String {
    format!(
        "({}, {}, {})",
        vocab.entities.name(t.subject.0),
        vocab.relations.name(t.predicate.0),
        vocab.entities.name(t.object.0)
    )
}

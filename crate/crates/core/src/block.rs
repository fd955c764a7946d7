use crate::error::{Error, Result};
use crate::graph::{EntityId, NeighborIndex};
use crate::linalg::Matrix;

const ABSENT: u32 = u32::MAX;

/// Per-entity row vectors for a subset of the entities.
#[derive(Clone, Debug)]
pub struct EntityBlock {
    ids: Vec<EntityId>,
    pos: Vec<u32>,
    pub values: Matrix,
}

impl EntityBlock {
    pub fn new(ids: Vec<EntityId>, num_entities: usize, values: Matrix) -> Result<Self> {
        if values.rows() != ids.len() {
            return Err(Error::Shape(format!(
                "{} ids for {} rows",
                ids.len(),
                values.rows()
            )));
        }
        let mut pos = vec![ABSENT; num_entities];
        for (r, e) in ids.iter().enumerate() {
            let slot = pos
                .get_mut(e.idx())
                .ok_or_else(|| Error::Shape(format!("entity {} out of range", e.0)))?;
            if *slot != ABSENT {
                return Err(Error::Shape(format!("entity {} listed twice", e.0)));
            }
            *slot = r as u32;
        }
        Ok(EntityBlock { ids, pos, values })
    }

    /// Copies rows `ids` of an `num_entities x d` table.
    pub fn gather(ids: Vec<EntityId>, table: &Matrix) -> Result<Self> {
        let mut values = Matrix::zeros(ids.len(), table.cols());
        for (r, e) in ids.iter().enumerate() {
            if e.idx() >= table.rows() {
                return Err(Error::Shape(format!("entity {} out of range", e.0)));
            }
            values.row_mut(r).copy_from_slice(table.row(e.idx()));
        }
        Self::new(ids, table.rows(), values)
    }

    pub fn ids(&self) -> &[EntityId] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn num_entities(&self) -> usize {
        self.pos.len()
    }

    #[inline]
    pub fn row_of(&self, e: EntityId) -> Option<usize> {
        match self.pos.get(e.idx()) {
            Some(&p) if p != ABSENT => Some(p as usize),
            _ => None,
        }
    }

    pub(crate) fn require_row(&self, e: EntityId) -> Result<usize> {
        self.row_of(e)
            .ok_or_else(|| Error::Shape(format!("entity {} has no row in this block", e.0)))
    }

    pub fn row(&self, e: EntityId) -> Option<&[f64]> {
        self.row_of(e).map(|r| self.values.row(r))
    }
}

/// Sorted distinct union of `targets` and their one-hop neighbours.
pub fn receptive_field(index: &NeighborIndex, targets: &[EntityId]) -> Vec<EntityId> {
    let mut out: Vec<EntityId> = targets.to_vec();
    for &t in targets {
        for nb in index.neighborhoods(t) {
            out.extend_from_slice(&nb.objects);
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Sorted distinct entities.
pub fn distinct(mut ids: Vec<EntityId>) -> Vec<EntityId> {
    ids.sort_unstable();
    ids.dedup();
    ids
}

use std::collections::{BTreeMap, HashMap};

use super::{EntityId, RelationId, Triple};

/// Objects reachable from one entity under one relation, sorted and distinct.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Neighborhood {
    pub relation: RelationId,
    pub objects: Vec<EntityId>,
}

/// `N_i^p = { j | (i, p, j) in train }` for every (i, p) with at least one
/// outgoing edge.
///
/// With inverse relations enabled, each triple (s, p, o) additionally adds s
/// to the neighbourhood of o under relation `p + num_base_relations`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NeighborIndex {
    by_entity: Vec<Vec<Neighborhood>>,
    slots: HashMap<(EntityId, RelationId), (u32, u32)>,
    num_relations: usize,
}

impl NeighborIndex {
    pub fn build(train: &[Triple], num_base_relations: usize, add_inverse: bool) -> Self {
        let mut grouped: BTreeMap<(EntityId, RelationId), Vec<EntityId>> = BTreeMap::new();
        for t in train {
            grouped
                .entry((t.subject, t.predicate))
                .or_default()
                .push(t.object);
            if add_inverse {
                let inv = RelationId(t.predicate.0 + num_base_relations as u32);
                grouped.entry((t.object, inv)).or_default().push(t.subject);
            }
        }
        let n_ent = grouped.keys().map(|(e, _)| e.idx() + 1).max().unwrap_or(0);
        let mut by_entity: Vec<Vec<Neighborhood>> = vec![Vec::new(); n_ent];
        let mut slots = HashMap::with_capacity(grouped.len());
        for ((e, p), mut objects) in grouped {
            objects.sort_unstable();
            objects.dedup();
            let list = &mut by_entity[e.idx()];
            slots.insert((e, p), (e.0, list.len() as u32));
            list.push(Neighborhood {
                relation: p,
                objects,
            });
        }
        NeighborIndex {
            by_entity,
            slots,
            num_relations: if add_inverse {
                2 * num_base_relations
            } else {
                num_base_relations
            },
        }
    }

    /// Number of relation slots (doubled when inverse relations are added).
    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    pub fn neighborhoods(&self, entity: EntityId) -> &[Neighborhood] {
        self.by_entity
            .get(entity.idx())
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn get(&self, entity: EntityId, relation: RelationId) -> Option<&[EntityId]> {
        self.slots
            .get(&(entity, relation))
            .map(|&(e, k)| self.by_entity[e as usize][k as usize].objects.as_slice())
    }

    pub fn degree(&self, entity: EntityId, relation: RelationId) -> usize {
        self.get(entity, relation).map_or(0, <[EntityId]>::len)
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Number of (entity, relation) pairs with a non-empty neighbourhood.
    pub fn len(&self) -> usize {
        self.slots.len()
    }
}

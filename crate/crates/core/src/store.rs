//! Persistent bundle store with retention constraints.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use crate::bundle::{Bundle, BundleId};
use crate::custody::RetentionConstraint;
use crate::time::SimTime;
use crate::Error;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredBundle {
    pub bundle: Bundle,
    pub constraints: BTreeSet<RetentionConstraint>,
    pub expires_at: SimTime,
}

#[derive(Debug, Clone)]
pub struct BundleStore {
    entries: BTreeMap<BundleId, StoredBundle>,
    capacity: usize,
}

impl BundleStore {
    pub fn new(capacity: usize) -> Self {
        BundleStore {
            entries: BTreeMap::new(),
            capacity,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() >= self.capacity
    }

    pub fn get(&self, id: &BundleId) -> Option<&StoredBundle> {
        self.entries.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&BundleId, &StoredBundle)> {
        self.entries.iter()
    }

    pub fn holding(&self, constraint: RetentionConstraint) -> usize {
        self.entries
            .values()
            .filter(|e| e.constraints.contains(&constraint))
            .count()
    }

    /// Stores `bundle` under `constraint`. A bundle already present only
    /// gains the constraint and has its contents replaced.
    pub fn insert(
        &mut self,
        bundle: Bundle,
        constraint: RetentionConstraint,
        expires_at: SimTime,
    ) -> Result<(), Error> {
        let id = bundle.id();
        if let Some(e) = self.entries.get_mut(&id) {
            e.bundle = bundle;
            e.constraints.insert(constraint);
            return Ok(());
        }
        if self.is_full() {
            return Err(Error::StoreFull);
        }
        let mut constraints = BTreeSet::new();
        constraints.insert(constraint);
        self.entries.insert(
            id,
            StoredBundle {
                bundle,
                constraints,
                expires_at,
            },
        );
        Ok(())
    }

    pub fn replace_bundle(&mut self, bundle: Bundle) -> bool {
        match self.entries.get_mut(&bundle.id()) {
            Some(e) => {
                e.bundle = bundle;
                true
            }
            None => false,
        }
    }

    pub fn add_constraint(&mut self, id: &BundleId, c: RetentionConstraint) -> bool {
        self.entries
            .get_mut(id)
            .map(|e| e.constraints.insert(c))
            .unwrap_or(false)
    }

    pub fn remove_constraint(&mut self, id: &BundleId, c: RetentionConstraint) -> bool {
        self.entries
            .get_mut(id)
            .map(|e| e.constraints.remove(&c))
            .unwrap_or(false)
    }

    /// Removes the bundle. Fails while any retention constraint is held.
    pub fn discard(&mut self, id: &BundleId) -> Result<Option<StoredBundle>, Error> {
        match self.entries.get(id) {
            Some(e) if !e.constraints.is_empty() => Err(Error::Retained),
            Some(_) => Ok(self.entries.remove(id)),
            None => Ok(None),
        }
    }

    /// Drops `c` and discards the bundle if nothing else retains it.
    pub fn release(&mut self, id: &BundleId, c: RetentionConstraint) -> Option<StoredBundle> {
        self.remove_constraint(id, c);
        self.discard(id).ok().flatten()
    }

    /// Lifetime expiry overrides retention: every constraint is dropped.
    pub fn expire(&mut self, id: &BundleId) -> Option<StoredBundle> {
        self.entries.remove(id)
    }

    pub fn expired(&self, now: SimTime) -> Vec<BundleId> {
        self.entries
            .iter()
            .filter(|(_, e)| e.expires_at <= now)
            .map(|(id, _)| *id)
            .collect()
    }

    pub fn next_expiry(&self) -> Option<SimTime> {
        self.entries.values().map(|e| e.expires_at).min()
    }
}

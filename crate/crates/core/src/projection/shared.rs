use std::collections::BTreeMap;

use super::{Aggregation, ProjectionSet, DEFAULT_REINIT_PERIOD, DEFAULT_VIEWS};
use crate::error::{Error, Result};
use crate::numkit::derive_seed;

/// One [`ProjectionSet`] per distinct neuron dimension. Layers whose neurons
/// have the same dimension read the same set, and a re-draw happens once per
/// dimension.
#[derive(Debug, Clone)]
pub struct SharedBasisRegistry {
    layer_dims: Vec<usize>,
    sets: BTreeMap<usize, ProjectionSet>,
}

impl SharedBasisRegistry {
    /// Every set projects to `out_dim`, which must not exceed any layer
    /// dimension.
    pub fn new(
        layer_dims: &[usize],
        out_dim: usize,
        views: usize,
        aggregation: Aggregation,
        reinit_period: Option<usize>,
        seed: u64,
    ) -> Result<Self> {
        if let Some(&smallest) = layer_dims.iter().min() {
            if out_dim > smallest {
                return Err(Error::invalid(format!(
                    "projected dimension {out_dim} exceeds the smallest layer dimension {smallest}"
                )));
            }
        }
        Self::build(
            layer_dims,
            |_| out_dim,
            views,
            aggregation,
            reinit_period,
            seed,
        )
    }

    /// Like [`SharedBasisRegistry::new`], but layers narrower than `out_dim`
    /// project to their own dimension.
    pub fn new_clamped(
        layer_dims: &[usize],
        out_dim: usize,
        views: usize,
        aggregation: Aggregation,
        reinit_period: Option<usize>,
        seed: u64,
    ) -> Result<Self> {
        Self::build(
            layer_dims,
            |d| out_dim.min(d),
            views,
            aggregation,
            reinit_period,
            seed,
        )
    }

    fn build(
        layer_dims: &[usize],
        out_dim_for: impl Fn(usize) -> usize,
        views: usize,
        aggregation: Aggregation,
        reinit_period: Option<usize>,
        seed: u64,
    ) -> Result<Self> {
        let mut sets = BTreeMap::new();
        for &d in layer_dims {
            if let std::collections::btree_map::Entry::Vacant(slot) = sets.entry(d) {
                slot.insert(ProjectionSet::new(
                    views,
                    out_dim_for(d),
                    d,
                    aggregation,
                    reinit_period,
                    derive_seed(seed, 0x5EED, d as u64),
                )?);
            }
        }
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            sets,
        })
    }

    pub fn for_layer(&self, layer: usize) -> &ProjectionSet {
        &self.sets[&self.layer_dims[layer]]
    }

    pub fn for_dim(&self, dim: usize) -> Option<&ProjectionSet> {
        self.sets.get(&dim)
    }

    pub fn distinct_sets(&self) -> usize {
        self.sets.len()
    }

    pub fn layer_count(&self) -> usize {
        self.layer_dims.len()
    }

    /// One use of every set.
    pub fn tick(&mut self) {
        self.sets.values_mut().for_each(ProjectionSet::tick);
    }

    pub fn redraw(&mut self) {
        self.sets.values_mut().for_each(ProjectionSet::redraw);
    }
}

/// Registry with the default view count, mean aggregation and re-draw period.
pub fn shared_basis_registry(
    layer_dims: &[usize],
    out_dim: usize,
    seed: u64,
) -> Result<SharedBasisRegistry> {
    SharedBasisRegistry::new(
        layer_dims,
        out_dim,
        DEFAULT_VIEWS,
        Aggregation::Mean,
        Some(DEFAULT_REINIT_PERIOD),
        seed,
    )
}

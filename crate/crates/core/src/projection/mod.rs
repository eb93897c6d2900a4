//! Compressive energies: the energy of neurons after a linear projection.
//!
//! Every mechanism here maps raw neuron weights `w_i` to `P ŵ_i`, renormalizes
//! the result and evaluates a hyperspherical energy on the projected points.
//! The projections differ in where `P` comes from:
//!
//! | mechanism | `P` |
//! |-----------|-----|
//! | [`ProjectionSet`] | `C` Gaussian matrices, averaged or maxed, re-drawn on a schedule |
//! | [`ApState`] | one matrix trained to preserve pairwise cosines (alternating or unrolled) |
//! | [`adversarial_step`] | one matrix that ascends the projected energy |
//! | [`GroupScheme`] | 0/1 channel masks |
//! | [`BilateralState`] | left and right projections of the weight matrix |
//!
//! Each mechanism exposes a tape builder (so it can sit inside a larger loss)
//! and a convenience function returning the value and the gradient with
//! respect to the raw weights.

mod adversarial;
mod ap;
mod bilateral;
mod group;
mod shared;

use serde::{Deserialize, Serialize};

pub use adversarial::{adversarial_gradient, adversarial_step};
pub use ap::{
    ap_energy_alternating, ap_energy_unrolled, ap_loss, ap_loss_node, ap_loss_with_form, ApForm,
    ApMode, ApState,
};
pub use bilateral::{
    bilateral_energies, bilateral_nodes, lowrank_reconstruct, BilateralState, MAX_CORE_CONDITION,
};
pub use group::{
    group_energy, group_energy_node, group_energy_with_gradient, GroupScheme, DEFAULT_GROUP_SIZE,
};
pub use shared::{shared_basis_registry, SharedBasisRegistry};

use crate::energy::{energy_node, EnergySpec, NeuronBank};
use crate::error::{Error, Result};
use crate::numkit::{derive_seed, gaussian_matrix, Matrix, NodeId, Tape, TAU_NORM};

/// Projected dimension `k + 1` used when none is given.
pub const DEFAULT_PROJECTED_DIM: usize = 30;
/// Number of random views `C`.
pub const DEFAULT_VIEWS: usize = 5;
/// Uses between random re-draws.
pub const DEFAULT_REINIT_PERIOD: usize = 1000;

/// Value of an objective together with its gradient w.r.t. the raw weights.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: f64,
    pub grad: Matrix,
}

/// Records `weights` as a trainable leaf, builds an objective on it and
/// differentiates.
pub(crate) fn evaluate(
    weights: &Matrix,
    build: impl FnOnce(&mut Tape, NodeId) -> Result<NodeId>,
) -> Result<Evaluation> {
    let mut tape = Tape::new();
    let w = tape.var(weights.clone());
    let root = build(&mut tape, w)?;
    let value = tape.scalar_value(root);
    let grad = tape.backward(root)?.wrt(w).clone();
    Ok(Evaluation { value, grad })
}

/// Energy of `normalize(unit · Pᵀ)`, i.e. of the projected and renormalized
/// neurons. `unit` must already hold unit rows.
pub fn projected_energy_node(
    tape: &mut Tape,
    unit: NodeId,
    p: NodeId,
    spec: &EnergySpec,
    view: usize,
) -> Result<NodeId> {
    let projected = project_rows(tape, unit, p, view)?;
    energy_node(tape, projected, spec)
}

/// `normalize(unit · Pᵀ)` with the degeneracy check reported per view.
pub(crate) fn project_rows(
    tape: &mut Tape,
    unit: NodeId,
    p: NodeId,
    view: usize,
) -> Result<NodeId> {
    let (in_dim, p_in) = (tape.value(unit).cols(), tape.value(p).cols());
    if in_dim != p_in {
        return Err(Error::invalid(format!(
            "projection expects {p_in}-dimensional neurons, got {in_dim}"
        )));
    }
    let pt = tape.transpose(p);
    let y = tape.matmul(unit, pt);
    if let Some((row, norm)) = tape
        .value(y)
        .row_norms()
        .into_iter()
        .enumerate()
        .find(|(_, norm)| !(*norm >= TAU_NORM))
    {
        return Err(Error::DegenerateProjection { view, row, norm });
    }
    tape.rowwise_normalize(y)
}

/// How the per-view energies of a [`ProjectionSet`] are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Mean,
    /// Largest view energy; the gradient follows the winning view (ties go to
    /// the lowest view index).
    Max,
}

/// `C` Gaussian projection matrices of shape `(k+1) x (d+1)`, re-drawn every
/// `reinit_period` uses.
///
/// Entries are unscaled `N(0, 1)`: any global scale cancels after the
/// projected rows are renormalized.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionSet {
    mats: Vec<Matrix>,
    aggregation: Aggregation,
    reinit_period: Option<usize>,
    seed: u64,
    uses: usize,
    draw: u64,
}

impl ProjectionSet {
    /// `views` fresh matrices. `reinit_period = None` keeps them fixed forever,
    /// which is allowed but tends to admit trivial solutions.
    pub fn new(
        views: usize,
        out_dim: usize,
        in_dim: usize,
        aggregation: Aggregation,
        reinit_period: Option<usize>,
        seed: u64,
    ) -> Result<Self> {
        if views == 0 {
            return Err(Error::invalid("a projection set needs at least one view"));
        }
        if out_dim == 0 || out_dim > in_dim {
            return Err(Error::invalid(format!(
                "projected dimension must be in 1..={in_dim}, got {out_dim}"
            )));
        }
        if reinit_period == Some(0) {
            return Err(Error::invalid("reinit period must be positive"));
        }
        let mats = Self::draw_views(views, out_dim, in_dim, seed, 0);
        Ok(Self {
            mats,
            aggregation,
            reinit_period,
            seed,
            uses: 0,
            draw: 0,
        })
    }

    /// A set built from explicit matrices; never re-drawn.
    pub fn from_matrices(mats: Vec<Matrix>, aggregation: Aggregation) -> Result<Self> {
        let Some(first) = mats.first() else {
            return Err(Error::invalid("a projection set needs at least one view"));
        };
        let shape = first.shape();
        if mats.iter().any(|m| m.shape() != shape) {
            return Err(Error::invalid("all projection matrices must share a shape"));
        }
        if shape.0 == 0 || shape.0 > shape.1 {
            return Err(Error::invalid(format!(
                "projection shape {shape:?} would not compress"
            )));
        }
        Ok(Self {
            mats,
            aggregation,
            reinit_period: None,
            seed: 0,
            uses: 0,
            draw: 0,
        })
    }

    fn draw_views(
        views: usize,
        out_dim: usize,
        in_dim: usize,
        seed: u64,
        draw: u64,
    ) -> Vec<Matrix> {
        (0..views)
            .map(|c| gaussian_matrix(out_dim, in_dim, derive_seed(seed, draw, c as u64), 1.0))
            .collect()
    }

    pub fn matrices(&self) -> &[Matrix] {
        &self.mats
    }

    pub fn views(&self) -> usize {
        self.mats.len()
    }

    pub fn out_dim(&self) -> usize {
        self.mats[0].rows()
    }

    pub fn in_dim(&self) -> usize {
        self.mats[0].cols()
    }

    pub fn aggregation(&self) -> Aggregation {
        self.aggregation
    }

    pub fn reinit_period(&self) -> Option<usize> {
        self.reinit_period
    }

    /// How many times the matrices have been re-drawn.
    pub fn draw_count(&self) -> u64 {
        self.draw
    }

    /// Records one use; re-draws when the period elapses.
    pub fn tick(&mut self) {
        self.uses += 1;
        if let Some(period) = self.reinit_period {
            if self.uses.is_multiple_of(period) {
                self.redraw();
            }
        }
    }

    pub fn redraw(&mut self) {
        self.draw += 1;
        self.mats = Self::draw_views(
            self.views(),
            self.out_dim(),
            self.in_dim(),
            self.seed,
            self.draw,
        );
    }
}

/// Records the aggregated projected energy of the raw weights in `weights`.
pub fn rp_energy_node(
    tape: &mut Tape,
    weights: NodeId,
    ps: &ProjectionSet,
    spec: &EnergySpec,
) -> Result<NodeId> {
    let unit = tape.rowwise_normalize(weights)?;
    let mut per_view = Vec::with_capacity(ps.views());
    for (c, m) in ps.matrices().iter().enumerate() {
        let p = tape.constant(m.clone());
        per_view.push(projected_energy_node(tape, unit, p, spec, c)?);
    }
    Ok(match ps.aggregation() {
        Aggregation::Max => tape.max_of(&per_view),
        Aggregation::Mean => {
            let mut total = per_view[0];
            for &e in &per_view[1..] {
                total = tape.add(total, e);
            }
            tape.scale(total, 1.0 / per_view.len() as f64)
        }
    })
}

/// Randomly projected energy of the bank (value only).
pub fn rp_energy(bank: &NeuronBank, ps: &ProjectionSet, spec: &EnergySpec) -> Result<f64> {
    rp_energy_with_gradient(bank, ps, spec).map(|e| e.value)
}

pub fn rp_energy_with_gradient(
    bank: &NeuronBank,
    ps: &ProjectionSet,
    spec: &EnergySpec,
) -> Result<Evaluation> {
    evaluate(bank.weights(), |tape, w| rp_energy_node(tape, w, ps, spec))
}

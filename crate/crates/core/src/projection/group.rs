use super::{evaluate, projected_energy_node, Evaluation};
use crate::energy::{EnergySpec, NeuronBank};
use crate::error::{Error, Result};
use crate::numkit::{Matrix, NodeId, Tape};

/// Default number of consecutive channels per group.
pub const DEFAULT_GROUP_SIZE: usize = 8;

/// Diagonal 0/1 channel masks `P_c`, stored as the channel indices each mask
/// keeps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupScheme {
    dim: usize,
    groups: Vec<Vec<usize>>,
}

impl GroupScheme {
    /// Consecutive blocks of `group_size` channels; the last block may be
    /// smaller. The masks sum to the identity.
    pub fn consecutive(dim: usize, group_size: usize) -> Result<Self> {
        if dim == 0 || group_size == 0 {
            return Err(Error::invalid(
                "group scheme needs positive dimension and group size",
            ));
        }
        let groups = (0..dim)
            .step_by(group_size)
            .map(|start| (start..(start + group_size).min(dim)).collect())
            .collect();
        Ok(Self { dim, groups })
    }

    /// Masks given as diagonals. With `require_partition` the masks must sum to
    /// the identity.
    pub fn from_masks(masks: &[Vec<bool>], require_partition: bool) -> Result<Self> {
        let Some(first) = masks.first() else {
            return Err(Error::invalid("group scheme needs at least one mask"));
        };
        let dim = first.len();
        if masks.iter().any(|m| m.len() != dim) {
            return Err(Error::invalid("all masks must have the same length"));
        }
        let groups: Vec<Vec<usize>> = masks
            .iter()
            .map(|m| {
                m.iter()
                    .enumerate()
                    .filter(|(_, &on)| on)
                    .map(|(i, _)| i)
                    .collect()
            })
            .collect();
        if groups.iter().any(Vec::is_empty) {
            return Err(Error::invalid("a mask selects no channel"));
        }
        if require_partition {
            for ch in 0..dim {
                let hits = masks.iter().filter(|m| m[ch]).count();
                if hits != 1 {
                    return Err(Error::invalid(format!(
                        "channel {ch} is covered by {hits} masks; masks must sum to the identity"
                    )));
                }
            }
        }
        Ok(Self { dim, groups })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// The diagonal mask matrix `P_c`.
    pub fn mask_matrix(&self, c: usize) -> Matrix {
        let keep = &self.groups[c];
        Matrix::from_fn(self.dim, self.dim, |i, j| {
            if i == j && keep.contains(&i) {
                1.0
            } else {
                0.0
            }
        })
    }

    /// The rows of the identity selected by group `c`. Projecting with it gives
    /// the same normalized points as the diagonal mask, minus the zero
    /// coordinates.
    fn selector(&self, c: usize) -> Matrix {
        let keep = &self.groups[c];
        Matrix::from_fn(
            keep.len(),
            self.dim,
            |i, j| if keep[i] == j { 1.0 } else { 0.0 },
        )
    }
}

/// Records the mean over groups of the masked energies.
pub fn group_energy_node(
    tape: &mut Tape,
    weights: NodeId,
    gs: &GroupScheme,
    spec: &EnergySpec,
) -> Result<NodeId> {
    if tape.value(weights).cols() != gs.dim() {
        return Err(Error::invalid(format!(
            "group scheme is for {}-dimensional neurons, got {}",
            gs.dim(),
            tape.value(weights).cols()
        )));
    }
    let unit = tape.rowwise_normalize(weights)?;
    let mut total = None;
    for c in 0..gs.len() {
        let p = tape.constant(gs.selector(c));
        let e = projected_energy_node(tape, unit, p, spec, c)?;
        total = Some(match total {
            Some(t) => tape.add(t, e),
            None => e,
        });
    }
    let total = total.expect("group scheme is never empty");
    Ok(tape.scale(total, 1.0 / gs.len() as f64))
}

pub fn group_energy(bank: &NeuronBank, gs: &GroupScheme, spec: &EnergySpec) -> Result<f64> {
    group_energy_with_gradient(bank, gs, spec).map(|e| e.value)
}

pub fn group_energy_with_gradient(
    bank: &NeuronBank,
    gs: &GroupScheme,
    spec: &EnergySpec,
) -> Result<Evaluation> {
    evaluate(bank.weights(), |tape, w| {
        group_energy_node(tape, w, gs, spec)
    })
}

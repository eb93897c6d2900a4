//! Bilateral projection of a weight matrix `W` (`m x n`, one neuron per
//! column): `Y1 = P1 W` compresses the neuron dimension and `Y2 = W P2`
//! compresses the neuron count. Energies are taken over the columns of `Y1`
//! and `Y2`.

use nalgebra::DMatrix;

use crate::energy::{bank_energy_node, EnergySpec};
use crate::error::{Error, Result};
use crate::numkit::{Matrix, NodeId, Tape};

/// Largest accepted condition number of `P1 Y2`.
pub const MAX_CORE_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct BilateralState {
    /// `r x m` left projection.
    pub p1: Matrix,
    /// `n x r` right projection.
    pub p2: Matrix,
    /// Whether neurons are represented by `(Y1, Y2)` through
    /// [`lowrank_reconstruct`] instead of `W` itself.
    pub low_rank_mode: bool,
}

impl BilateralState {
    pub fn new(p1: Matrix, p2: Matrix, low_rank_mode: bool) -> Result<Self> {
        if p1.rows() != p2.cols() {
            return Err(Error::invalid(format!(
                "P1 is {:?} and P2 is {:?}; they must share the rank r",
                p1.shape(),
                p2.shape()
            )));
        }
        Ok(Self {
            p1,
            p2,
            low_rank_mode,
        })
    }

    pub fn rank(&self) -> usize {
        self.p1.rows()
    }

    fn check(&self, w: &Matrix) -> Result<()> {
        if w.rows() != self.p1.cols() || w.cols() != self.p2.rows() {
            return Err(Error::invalid(format!(
                "W is {:?}, expected {}x{}",
                w.shape(),
                self.p1.cols(),
                self.p2.rows()
            )));
        }
        Ok(())
    }
}

fn columns_degenerate(err: Error, view: usize) -> Error {
    match err {
        Error::DegenerateRow { row, norm } => Error::DegenerateProjection { view, row, norm },
        other => other,
    }
}

/// Records the column energies of `P1 W` (view 0) and `W P2` (view 1).
pub fn bilateral_nodes(
    tape: &mut Tape,
    w: NodeId,
    bs: &BilateralState,
    spec: &EnergySpec,
) -> Result<(NodeId, NodeId)> {
    bs.check(tape.value(w))?;
    let p1 = tape.constant(bs.p1.clone());
    let p2 = tape.constant(bs.p2.clone());
    let y1 = tape.matmul(p1, w);
    let y1t = tape.transpose(y1);
    let e1 = bank_energy_node(tape, y1t, spec).map_err(|e| columns_degenerate(e, 0))?;
    let y2 = tape.matmul(w, p2);
    let y2t = tape.transpose(y2);
    let e2 = bank_energy_node(tape, y2t, spec).map_err(|e| columns_degenerate(e, 1))?;
    Ok((e1, e2))
}

/// `(E(columns of P1 W), E(columns of W P2))`.
pub fn bilateral_energies(
    w: &Matrix,
    bs: &BilateralState,
    spec: &EnergySpec,
) -> Result<(f64, f64)> {
    let mut tape = Tape::new();
    let wn = tape.constant(w.clone());
    let (e1, e2) = bilateral_nodes(&mut tape, wn, bs, spec)?;
    Ok((tape.scalar_value(e1), tape.scalar_value(e2)))
}

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.data())
}

fn from_na(m: &DMatrix<f64>) -> Matrix {
    Matrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// `W̃ = Y2 (P1 Y2)^-1 Y1`, which satisfies `P1 W̃ = Y1`.
pub fn lowrank_reconstruct(bs: &BilateralState, y1: &Matrix, y2: &Matrix) -> Result<Matrix> {
    let r = bs.rank();
    if y1.rows() != r || y2.cols() != r || y2.rows() != bs.p1.cols() {
        return Err(Error::invalid(format!(
            "Y1 {:?} / Y2 {:?} do not match rank {r} and P1 {:?}",
            y1.shape(),
            y2.shape(),
            bs.p1.shape()
        )));
    }
    let core = to_na(&bs.p1) * to_na(y2);
    let sv = core.singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    let condition = if smin > 0.0 {
        smax / smin
    } else {
        f64::INFINITY
    };
    if !(condition <= MAX_CORE_CONDITION) {
        return Err(Error::SingularCore { condition });
    }
    let solved = core
        .lu()
        .solve(&to_na(y1))
        .ok_or(Error::SingularCore { condition })?;
    let w = to_na(y2) * solved;
    Ok(from_na(&w))
}

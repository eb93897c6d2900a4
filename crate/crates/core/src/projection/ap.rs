//! Angle-preserving projections.
//!
//! The projection `P` is itself optimized so that projected neurons keep the
//! pairwise cosines (or angles) of the originals. The energy is then measured
//! after projecting with the optimized `P`. Two solvers are offered:
//!
//! * **alternating**: every `update_every` calls, run `inner_steps` plain
//!   gradient steps on the preservation loss w.r.t. `P`, then treat `P` as a
//!   constant for the energy;
//! * **unrolled**: evaluate the energy at `P' = P - η ∇_P L(W, P)`, keeping
//!   `∇_P L` on the tape so the weight gradient includes the second-order term.

use serde::{Deserialize, Serialize};

use super::{evaluate, project_rows, projected_energy_node, Evaluation, DEFAULT_REINIT_PERIOD};
use crate::energy::{EnergySpec, NeuronBank};
use crate::error::{Error, Result};
use crate::numkit::{derive_seed, gaussian_matrix, Matrix, NodeId, Tape};

pub const DEFAULT_INNER_LR: f64 = 0.01;
pub const DEFAULT_UPDATE_EVERY: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApMode {
    #[default]
    Alternating,
    Unrolled,
}

/// What the preservation loss compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApForm {
    #[default]
    Cosine,
    Angle,
}

/// Records `Σ_{i≠j} (c_ij - c'_ij)^2` where `c` are the pairwise cosines (or
/// angles) of the unit rows in `unit` and `c'` those after projecting by `p`.
pub fn ap_loss_node(tape: &mut Tape, unit: NodeId, p: NodeId, form: ApForm) -> Result<NodeId> {
    let n = tape.value(unit).rows();
    let projected = project_rows(tape, unit, p, 0)?;
    let (before, after) = match form {
        ApForm::Cosine => {
            let ut = tape.transpose(unit);
            let vt = tape.transpose(projected);
            (tape.matmul(unit, ut), tape.matmul(projected, vt))
        }
        ApForm::Angle => (
            tape.arccos_of_dot(unit, unit),
            tape.arccos_of_dot(projected, projected),
        ),
    };
    let diff = tape.sub(before, after);
    let off_diag = tape.constant(Matrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { 1.0 }));
    let diff = tape.mul(diff, off_diag);
    let sq = tape.mul(diff, diff);
    Ok(tape.sum(sq))
}

/// Cosine-preservation loss of `p` on the bank.
pub fn ap_loss(bank: &NeuronBank, p: &Matrix) -> Result<f64> {
    ap_loss_with_form(bank, p, ApForm::Cosine)
}

pub fn ap_loss_with_form(bank: &NeuronBank, p: &Matrix, form: ApForm) -> Result<f64> {
    let mut tape = Tape::new();
    let w = tape.constant(bank.weights().clone());
    let unit = tape.rowwise_normalize(w)?;
    let pn = tape.constant(p.clone());
    let loss = ap_loss_node(&mut tape, unit, pn, form)?;
    Ok(tape.scalar_value(loss))
}

/// Value and gradient of the preservation loss w.r.t. `p`.
pub(crate) fn ap_loss_grad_p(bank: &NeuronBank, p: &Matrix, form: ApForm) -> Result<Evaluation> {
    let mut tape = Tape::new();
    let w = tape.constant(bank.weights().clone());
    let unit = tape.rowwise_normalize(w)?;
    let pn = tape.var(p.clone());
    let loss = ap_loss_node(&mut tape, unit, pn, form)?;
    let value = tape.scalar_value(loss);
    let grad = tape.backward(loss)?.wrt(pn).clone();
    Ok(Evaluation { value, grad })
}

/// Projection state for angle-preserving energies.
#[derive(Debug, Clone, PartialEq)]
pub struct ApState {
    p: Matrix,
    pub inner_lr: f64,
    pub inner_steps: usize,
    pub mode: ApMode,
    /// Alternating mode only: calls between inner optimizations.
    pub update_every: usize,
    pub form: ApForm,
    /// Calls between random re-initializations of `P` (`None`: never).
    pub reinit_period: Option<usize>,
    seed: u64,
    calls: usize,
    draw: u64,
}

impl ApState {
    /// Gaussian-initialized `P` of shape `out_dim x in_dim` with default
    /// hyperparameters.
    pub fn new(out_dim: usize, in_dim: usize, mode: ApMode, seed: u64) -> Result<Self> {
        if out_dim == 0 || out_dim > in_dim {
            return Err(Error::invalid(format!(
                "projected dimension must be in 1..={in_dim}, got {out_dim}"
            )));
        }
        Ok(Self {
            p: gaussian_matrix(out_dim, in_dim, derive_seed(seed, 0, 0), 1.0),
            inner_lr: DEFAULT_INNER_LR,
            inner_steps: 1,
            mode,
            update_every: DEFAULT_UPDATE_EVERY,
            form: ApForm::Cosine,
            reinit_period: Some(DEFAULT_REINIT_PERIOD),
            seed,
            calls: 0,
            draw: 0,
        })
    }

    /// State starting from a given `P`, never re-initialized.
    pub fn with_matrix(p: Matrix, mode: ApMode) -> Self {
        Self {
            p,
            inner_lr: DEFAULT_INNER_LR,
            inner_steps: 1,
            mode,
            update_every: DEFAULT_UPDATE_EVERY,
            form: ApForm::Cosine,
            reinit_period: None,
            seed: 0,
            calls: 0,
            draw: 0,
        }
    }

    pub fn projection(&self) -> &Matrix {
        &self.p
    }

    pub fn calls(&self) -> usize {
        self.calls
    }

    fn validate(&self) -> Result<()> {
        if !(self.inner_lr >= 0.0) || !self.inner_lr.is_finite() {
            return Err(Error::invalid(
                "inner learning rate must be finite and non-negative",
            ));
        }
        if self.inner_steps == 0 || self.update_every == 0 || self.reinit_period == Some(0) {
            return Err(Error::invalid(
                "inner steps, update period and reinit period must be positive",
            ));
        }
        Ok(())
    }

    /// One plain gradient step on the preservation loss; returns the loss
    /// before the step.
    pub fn inner_step(&mut self, bank: &NeuronBank) -> Result<f64> {
        let eval = ap_loss_grad_p(bank, &self.p, self.form)?;
        self.p = self.p.sub(&eval.grad.scale(self.inner_lr));
        Ok(eval.value)
    }

    fn begin_call(&mut self, expected: ApMode) -> Result<bool> {
        self.validate()?;
        if self.mode != expected {
            return Err(Error::invalid(format!(
                "projection state is in {:?} mode, not {expected:?}",
                self.mode
            )));
        }
        if let Some(period) = self.reinit_period {
            if self.calls > 0 && self.calls.is_multiple_of(period) {
                self.draw += 1;
                let (r, c) = self.p.shape();
                self.p = gaussian_matrix(r, c, derive_seed(self.seed, self.draw, 0), 1.0);
            }
        }
        let first_of_period = self.calls.is_multiple_of(self.update_every);
        self.calls += 1;
        Ok(first_of_period)
    }

    /// Alternating mode: counts one call and, when the schedule says so, runs
    /// the inner steps on `P`.
    pub fn advance(&mut self, bank: &NeuronBank) -> Result<()> {
        if self.begin_call(ApMode::Alternating)? {
            for _ in 0..self.inner_steps {
                self.inner_step(bank)?;
            }
        }
        Ok(())
    }

    /// Projected energy with the current `P` held constant.
    pub fn fixed_energy_node(
        &self,
        tape: &mut Tape,
        weights: NodeId,
        spec: &EnergySpec,
    ) -> Result<NodeId> {
        let unit = tape.rowwise_normalize(weights)?;
        let p = tape.constant(self.p.clone());
        projected_energy_node(tape, unit, p, spec, 0)
    }

    /// Updates `P` according to the schedule and records the projected energy of
    /// the raw weights in `weights`. In unrolled mode `P` advances to `P'`.
    pub fn energy_node(
        &mut self,
        tape: &mut Tape,
        weights: NodeId,
        bank: &NeuronBank,
        spec: &EnergySpec,
    ) -> Result<NodeId> {
        match self.mode {
            ApMode::Alternating => {
                self.advance(bank)?;
                self.fixed_energy_node(tape, weights, spec)
            }
            ApMode::Unrolled => {
                self.begin_call(ApMode::Unrolled)?;
                for _ in 1..self.inner_steps {
                    self.inner_step(bank)?;
                }
                let unit = tape.rowwise_normalize(weights)?;
                let p = tape.constant(self.p.clone());
                let loss = ap_loss_node(tape, unit, p, self.form)?;
                let grad_p = tape.grad(loss, &[p])?[0];
                let step = tape.scale(grad_p, -self.inner_lr);
                let p_next = tape.add(p, step);
                self.p = tape.value(p_next).clone();
                projected_energy_node(tape, unit, p_next, spec, 0)
            }
        }
    }
}

/// Alternating angle-preserving energy; may update `ap` first.
pub fn ap_energy_alternating(
    bank: &NeuronBank,
    ap: &mut ApState,
    spec: &EnergySpec,
) -> Result<Evaluation> {
    if ap.mode != ApMode::Alternating {
        return Err(Error::invalid(
            "ap_energy_alternating needs an alternating state",
        ));
    }
    evaluate(bank.weights(), |tape, w| {
        ap.energy_node(tape, w, bank, spec)
    })
}

/// Unrolled angle-preserving energy. The gradient includes the dependence of
/// the inner step on the weights.
pub fn ap_energy_unrolled(
    bank: &NeuronBank,
    ap: &mut ApState,
    spec: &EnergySpec,
) -> Result<Evaluation> {
    if ap.mode != ApMode::Unrolled {
        return Err(Error::invalid("ap_energy_unrolled needs an unrolled state"));
    }
    evaluate(bank.weights(), |tape, w| {
        ap.energy_node(tape, w, bank, spec)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::gradcheck::{central_difference, relative_error};
    use crate::projection::{rp_energy_with_gradient, Aggregation, ProjectionSet};

    fn bank(n: usize, dim: usize, seed: u64) -> NeuronBank {
        NeuronBank::new(gaussian_matrix(n, dim, seed, 1.0)).unwrap()
    }

    /// Orthogonal matrix from Gram-Schmidt on a Gaussian draw.
    fn orthogonal(n: usize, seed: u64) -> Matrix {
        let g = gaussian_matrix(n, n, seed, 1.0);
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for r in g.row_iter() {
            let mut v = r.to_vec();
            for q in &rows {
                let d: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(q).for_each(|(a, b)| *a -= d * b);
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            rows.push(v.into_iter().map(|x| x / norm).collect());
        }
        Matrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn loss_vanishes_for_orthogonal_and_span_preserving_projections() {
        let b = bank(5, 6, 1);
        let q = orthogonal(6, 2);
        assert!(ap_loss(&b, &q).unwrap() < 1e-24);
        assert!(ap_loss_with_form(&b, &q, ApForm::Angle).unwrap() < 1e-10);

        // Bank inside the first three coordinates, P drops the fourth.
        let b = NeuronBank::from_rows(&[
            [1.0, 2.0, 0.5, 0.0],
            [-1.0, 0.3, 2.0, 0.0],
            [0.2, -1.0, 1.0, 0.0],
        ])
        .unwrap();
        let p = Matrix::from_rows(&[
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
        ])
        .unwrap();
        assert_eq!(ap_loss(&b, &p).unwrap(), 0.0);

        // Dropping a coordinate the bank uses does not preserve cosines.
        let b = bank(5, 4, 3);
        assert!(ap_loss(&b, &p).unwrap() > 1e-3);
    }

    #[test]
    fn inner_steps_descend() {
        let b = bank(6, 32, 4);
        let mut lr = 0.05;
        let losses = loop {
            let mut ap = ApState::with_matrix(gaussian_matrix(8, 32, 5, 1.0), ApMode::Alternating);
            ap.inner_lr = lr;
            let mut losses = Vec::new();
            for _ in 0..20 {
                losses.push(ap.inner_step(&b).unwrap());
            }
            losses.push(ap_loss(&b, ap.projection()).unwrap());
            if losses.windows(2).all(|w| w[1] < w[0]) {
                break losses;
            }
            lr /= 2.0;
            assert!(lr > 1e-8, "no monotone step size found");
        };
        assert!(losses.last().unwrap() < &losses[0]);
    }

    #[test]
    fn alternating_schedule_holds_p_between_updates() {
        let b = bank(6, 16, 6);
        let spec = EnergySpec::riesz(2.0);
        let mut ap = ApState::new(4, 16, ApMode::Alternating, 7).unwrap();
        let start = ap.projection().clone();
        ap_energy_alternating(&b, &mut ap, &spec).unwrap();
        let after_update = ap.projection().clone();
        assert_ne!(start, after_update);
        for _ in 1..10 {
            ap_energy_alternating(&b, &mut ap, &spec).unwrap();
            assert_eq!(ap.projection(), &after_update);
        }
        ap_energy_alternating(&b, &mut ap, &spec).unwrap();
        assert_ne!(ap.projection(), &after_update);
    }

    #[test]
    fn orthogonal_square_projection_is_a_fixed_point() {
        let b = bank(5, 6, 8);
        let spec = EnergySpec::riesz(2.0);
        let q = orthogonal(6, 9);
        let mut alt = ApState::with_matrix(q.clone(), ApMode::Alternating);
        let mut unr = ApState::with_matrix(q.clone(), ApMode::Unrolled);
        let a = ap_energy_alternating(&b, &mut alt, &spec).unwrap();
        let u = ap_energy_unrolled(&b, &mut unr, &spec).unwrap();
        assert!(alt.projection().max_abs_diff(&q) < 1e-12);
        assert!((a.value - u.value).abs() < 1e-12 * a.value);
    }

    #[test]
    fn zero_inner_rate_unrolled_equals_plain_projection() {
        let b = bank(5, 8, 10);
        let spec = EnergySpec::riesz(2.0);
        let p = gaussian_matrix(3, 8, 11, 1.0);
        let mut ap = ApState::with_matrix(p.clone(), ApMode::Unrolled);
        ap.inner_lr = 0.0;
        let u = ap_energy_unrolled(&b, &mut ap, &spec).unwrap();
        let ps = ProjectionSet::from_matrices(vec![p], Aggregation::Mean).unwrap();
        let r = rp_energy_with_gradient(&b, &ps, &spec).unwrap();
        assert_eq!(u.value, r.value);
        assert!(u.grad.max_abs_diff(&r.grad) < 1e-12);
    }

    #[test]
    fn unrolled_gradient_matches_finite_differences_of_composed_map() {
        let b = bank(5, 8, 12);
        let spec = EnergySpec::riesz(2.0);
        let p = gaussian_matrix(3, 8, 13, 1.0);
        for form in [ApForm::Cosine, ApForm::Angle] {
            let fresh = || {
                let mut ap = ApState::with_matrix(p.clone(), ApMode::Unrolled);
                ap.inner_lr = 0.05;
                ap.form = form;
                ap
            };
            let eval = ap_energy_unrolled(&b, &mut fresh(), &spec).unwrap();
            let fd = central_difference(b.weights(), 1e-5, |w| {
                ap_energy_unrolled(&NeuronBank::new(w.clone())?, &mut fresh(), &spec)
                    .map(|e| e.value)
            })
            .unwrap();
            let err = relative_error(&eval.grad, &fd);
            assert!(err < 1e-4, "{form:?}: {err}");

            // Treating P' as a constant gives a different gradient.
            let mut probe = fresh();
            ap_energy_unrolled(&b, &mut probe, &spec).unwrap();
            let frozen =
                ProjectionSet::from_matrices(vec![probe.projection().clone()], Aggregation::Mean)
                    .unwrap();
            let detached = rp_energy_with_gradient(&b, &frozen, &spec).unwrap();
            assert!(relative_error(&eval.grad, &detached.grad) > 1e-6);
        }
    }

    #[test]
    fn wrong_mode_is_rejected() {
        let b = bank(4, 6, 14);
        let mut ap = ApState::new(3, 6, ApMode::Unrolled, 1).unwrap();
        assert!(ap_energy_alternating(&b, &mut ap, &EnergySpec::riesz(2.0)).is_err());
    }
}

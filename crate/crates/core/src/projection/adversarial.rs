//! Adversarial projection: `P` plays the maximizing side of
//! `min_W max_P E(W, P)`. The weights side is driven by the caller.

use super::{projected_energy_node, Evaluation};
use crate::energy::{EnergySpec, NeuronBank};
use crate::error::{Error, Result};
use crate::numkit::{Matrix, Tape};

/// Projected energy and its gradient with respect to `p`.
pub fn adversarial_gradient(
    bank: &NeuronBank,
    p: &Matrix,
    spec: &EnergySpec,
) -> Result<Evaluation> {
    let mut tape = Tape::new();
    let w = tape.constant(bank.weights().clone());
    let unit = tape.rowwise_normalize(w)?;
    let pn = tape.var(p.clone());
    let e = projected_energy_node(&mut tape, unit, pn, spec, 0)?;
    let value = tape.scalar_value(e);
    let grad = tape.backward(e)?.wrt(pn).clone();
    Ok(Evaluation { value, grad })
}

/// One gradient-ascent step on the projected energy w.r.t. `p`.
///
/// The result is rescaled back to the Frobenius norm of `p`. The projected
/// energy is invariant to a global rescaling of `P`, so this only stops the
/// norm of `P` from drifting.
pub fn adversarial_step(
    bank: &NeuronBank,
    p: &Matrix,
    spec: &EnergySpec,
    lr_p: f64,
) -> Result<Matrix> {
    if !(lr_p >= 0.0) || !lr_p.is_finite() {
        return Err(Error::invalid(
            "adversarial step size must be finite and non-negative",
        ));
    }
    let eval = adversarial_gradient(bank, p, spec)?;
    let stepped = p.add(&eval.grad.scale(lr_p));
    let ratio = p.frobenius_norm() / stepped.frobenius_norm();
    if !ratio.is_finite() {
        return Err(Error::DivergedEnergy { iter: 0 });
    }
    Ok(stepped.scale(ratio))
}

//! Sphere-constrained gradient descent on point sets.
//!
//! Each iteration takes a Euclidean step on the chosen objective and retracts
//! back to the sphere by renormalizing every row. The trace always records the
//! unprojected energy next to the objective, so projected objectives can be
//! compared on the quantity they are meant to reduce.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::{energy, energy_gradient, EnergySpec, NeuronBank};
use crate::error::{Error, Result};
use crate::numkit::{derive_seed, gaussian_matrix, rowwise_normalize, Matrix};
use crate::projection::{
    adversarial_step, ap_energy_alternating, ap_energy_unrolled, group_energy_with_gradient,
    rp_energy_with_gradient, Aggregation, ApMode, ApState, Evaluation, GroupScheme, ProjectionSet,
    DEFAULT_GROUP_SIZE, DEFAULT_PROJECTED_DIM, DEFAULT_REINIT_PERIOD, DEFAULT_VIEWS,
};

/// Halvings allowed in one backtracking search before the step is abandoned.
const MAX_HALVINGS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// The energy as specified, with the half-space flag cleared.
    #[default]
    Plain,
    /// The energy with the half-space flag set.
    HalfSpace,
    Rp,
    ApAlternating,
    ApUnrolled,
    Adversarial,
    Group,
}

impl Objective {
    pub const ALL: [Objective; 7] = [
        Objective::Plain,
        Objective::HalfSpace,
        Objective::Rp,
        Objective::ApAlternating,
        Objective::ApUnrolled,
        Objective::Adversarial,
        Objective::Group,
    ];

    /// Whether two evaluations at the same point agree, which is what
    /// backtracking needs.
    fn is_deterministic(self) -> bool {
        matches!(
            self,
            Objective::Plain | Objective::HalfSpace | Objective::Group | Objective::Rp
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MinimizeConfig {
    pub objective: Objective,
    pub lr: f64,
    pub max_iters: usize,
    /// Stop once the tangential gradient norm falls below this.
    pub tol: f64,
    pub seed: u64,
    /// Projected dimension `k + 1` for the projected objectives.
    pub projected_dim: usize,
    pub views: usize,
    pub aggregation: Aggregation,
    /// Iterations between projection re-draws (`None`: never).
    pub reinit_period: Option<usize>,
    /// Step size of the projection in the adversarial objective.
    pub lr_p: f64,
    pub group_size: usize,
    /// Halve the step size whenever a deterministic objective increases.
    pub backtracking: bool,
}

impl Default for MinimizeConfig {
    fn default() -> Self {
        Self {
            objective: Objective::Plain,
            lr: 0.05,
            max_iters: 2000,
            tol: 1e-8,
            seed: 0,
            projected_dim: DEFAULT_PROJECTED_DIM,
            views: DEFAULT_VIEWS,
            aggregation: Aggregation::Mean,
            reinit_period: Some(DEFAULT_REINIT_PERIOD),
            lr_p: 0.01,
            group_size: DEFAULT_GROUP_SIZE,
            backtracking: true,
        }
    }
}

impl MinimizeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if !(self.lr_p >= 0.0 && self.lr_p.is_finite()) {
            return Err(Error::invalid("lr_p must be finite and non-negative"));
        }
        if self.views == 0 || self.group_size == 0 || self.projected_dim == 0 {
            return Err(Error::invalid(
                "views, group size and projected dimension must be positive",
            ));
        }
        if self.reinit_period == Some(0) {
            return Err(Error::invalid("reinit period must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    /// Unprojected, full-space energy of the current points.
    pub energy_full: f64,
    /// Value of the optimized objective.
    pub objective: f64,
    /// Frobenius norm of the tangential gradient of the objective.
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyTrace {
    pub rows: Vec<TraceRow>,
}

impl EnergyTrace {
    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,energy_full,objective,grad_norm\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                r.iter, r.energy_full, r.objective, r.grad_norm
            );
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> io::Result<()> {
        std::fs::write(path, self.to_csv())
    }
}

/// Per-run state of the objective.
enum State {
    Direct(EnergySpec),
    Rp(ProjectionSet),
    Ap(ApState),
    Adversarial(Matrix),
    Group(GroupScheme),
}

impl State {
    fn new(cfg: &MinimizeConfig, dim: usize, spec: &EnergySpec) -> Result<Self> {
        let check_dim = || {
            if cfg.projected_dim > dim {
                Err(Error::invalid(format!(
                    "projected dimension {} exceeds the point dimension {dim}",
                    cfg.projected_dim
                )))
            } else {
                Ok(())
            }
        };
        let seed = derive_seed(cfg.seed, 0xB0B, 0);
        Ok(match cfg.objective {
            Objective::Plain => State::Direct(spec.with_half_space(false)),
            Objective::HalfSpace => State::Direct(spec.with_half_space(true)),
            Objective::Rp => {
                check_dim()?;
                State::Rp(ProjectionSet::new(
                    cfg.views,
                    cfg.projected_dim,
                    dim,
                    cfg.aggregation,
                    cfg.reinit_period,
                    seed,
                )?)
            }
            Objective::ApAlternating | Objective::ApUnrolled => {
                check_dim()?;
                let mode = if cfg.objective == Objective::ApAlternating {
                    ApMode::Alternating
                } else {
                    ApMode::Unrolled
                };
                let mut ap = ApState::new(cfg.projected_dim, dim, mode, seed)?;
                ap.reinit_period = cfg.reinit_period;
                State::Ap(ap)
            }
            Objective::Adversarial => {
                check_dim()?;
                State::Adversarial(gaussian_matrix(cfg.projected_dim, dim, seed, 1.0))
            }
            Objective::Group => State::Group(GroupScheme::consecutive(dim, cfg.group_size)?),
        })
    }

    /// Value and raw-weight gradient; advances any internal schedule.
    fn evaluate(&mut self, bank: &NeuronBank, spec: &EnergySpec, lr_p: f64) -> Result<Evaluation> {
        match self {
            State::Direct(s) => Ok(Evaluation {
                value: energy(bank, s)?,
                grad: energy_gradient(bank, s)?,
            }),
            State::Rp(ps) => {
                let eval = rp_energy_with_gradient(bank, ps, spec)?;
                ps.tick();
                Ok(eval)
            }
            State::Ap(ap) => match ap.mode {
                ApMode::Alternating => ap_energy_alternating(bank, ap, spec),
                ApMode::Unrolled => ap_energy_unrolled(bank, ap, spec),
            },
            State::Adversarial(p) => {
                *p = adversarial_step(bank, p, spec, lr_p)?;
                let ps = ProjectionSet::from_matrices(vec![p.clone()], Aggregation::Mean)?;
                rp_energy_with_gradient(bank, &ps, spec)
            }
            State::Group(gs) => group_energy_with_gradient(bank, gs, spec),
        }
    }

    /// Objective value without side effects, used to accept or reject a step.
    /// `None` when the objective has no such value.
    fn peek(&self, bank: &NeuronBank, spec: &EnergySpec) -> Option<Result<f64>> {
        match self {
            State::Direct(s) => Some(energy(bank, s)),
            State::Rp(ps) => Some(crate::projection::rp_energy(bank, ps, spec)),
            State::Group(gs) => Some(crate::projection::group_energy(bank, gs, spec)),
            State::Ap(_) | State::Adversarial(_) => None,
        }
    }

    /// Projection re-draws happen after the evaluation; the step taken from
    /// it is judged against the projections that produced it.
    fn peek_previous(
        &self,
        bank: &NeuronBank,
        spec: &EnergySpec,
        prev: Option<&ProjectionSet>,
    ) -> Option<Result<f64>> {
        match (self, prev) {
            (State::Rp(_), Some(ps)) => Some(crate::projection::rp_energy(bank, ps, spec)),
            _ => self.peek(bank, spec),
        }
    }
}

fn retract(w: &Matrix, grad: &Matrix, lr: f64) -> Result<NeuronBank> {
    NeuronBank::new(rowwise_normalize(&w.sub(&grad.scale(lr)))?)
}

/// Minimizes the configured objective over unit-norm points starting from
/// `bank` (rows are normalized first).
pub fn minimize(
    bank: &NeuronBank,
    cfg: &MinimizeConfig,
    spec: &EnergySpec,
) -> Result<(NeuronBank, EnergyTrace)> {
    cfg.validate()?;
    spec.validate()?;
    let full_spec = spec.with_half_space(false);
    let mut state = State::new(cfg, bank.dim(), spec)?;
    let mut current = NeuronBank::new(bank.unit_rows()?)?;
    let mut lr = cfg.lr;
    let mut trace = EnergyTrace::default();
    let backtrack = cfg.backtracking && cfg.objective.is_deterministic();

    for iter in 0..cfg.max_iters {
        let judge = match &state {
            State::Rp(ps) => Some(ps.clone()),
            _ => None,
        };
        let eval = state.evaluate(&current, spec, cfg.lr_p)?;
        let energy_full = energy(&current, &full_spec)?;
        // Rows are unit, so the raw-weight gradient is already tangential.
        let grad_norm = eval.grad.frobenius_norm();
        if !eval.value.is_finite() || !energy_full.is_finite() || !grad_norm.is_finite() {
            return Err(Error::DivergedEnergy { iter });
        }
        trace.rows.push(TraceRow {
            iter,
            energy_full,
            objective: eval.value,
            grad_norm,
        });
        if grad_norm < cfg.tol {
            break;
        }

        if !backtrack {
            current = match retract(current.weights(), &eval.grad, lr) {
                Ok(b) => b,
                Err(_) => return Err(Error::DivergedEnergy { iter }),
            };
            continue;
        }

        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            if let Ok(next) = retract(current.weights(), &eval.grad, lr) {
                match state.peek_previous(&next, spec, judge.as_ref()) {
                    Some(Ok(v)) if v.is_finite() && v <= eval.value => {
                        accepted = Some(next);
                        break;
                    }
                    _ => {}
                }
            }
            lr /= 2.0;
        }
        match accepted {
            Some(next) => current = next,
            // No decrease at any representable step: numerically stationary.
            None => break,
        }
    }
    Ok((current, trace))
}

/// Independent runs from several initial banks, in parallel.
pub fn minimize_restarts(
    inits: &[NeuronBank],
    cfg: &MinimizeConfig,
    spec: &EnergySpec,
) -> Vec<Result<(NeuronBank, EnergyTrace)>> {
    inits.par_iter().map(|b| minimize(b, cfg, spec)).collect()
}

/// Random initial points: standard normal rows, normalized.
pub fn random_bank(n: usize, dim: usize, seed: u64) -> Result<NeuronBank> {
    NeuronBank::new(rowwise_normalize(&gaussian_matrix(n, dim, seed, 1.0))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(objective: Objective, lr: f64, max_iters: usize) -> MinimizeConfig {
        MinimizeConfig {
            objective,
            lr,
            max_iters,
            tol: 1e-10,
            ..MinimizeConfig::default()
        }
    }

    #[test]
    fn two_points_become_antipodal() {
        let (out, trace) = minimize(
            &random_bank(2, 3, 1).unwrap(),
            &cfg(Objective::Plain, 0.1, 5000),
            &EnergySpec::riesz(2.0),
        )
        .unwrap();
        let cos: f64 = out
            .weights()
            .row(0)
            .iter()
            .zip(out.weights().row(1))
            .map(|(a, b)| a * b)
            .sum();
        assert!((cos + 1.0).abs() < 1e-6, "cos = {cos}");
        assert!((trace.last().unwrap().energy_full - 0.5).abs() < 1e-6);
    }

    #[test]
    fn four_points_reach_the_tetrahedron() {
        let expected = 12.0 / (8.0f64 / 3.0).sqrt();
        let (_, trace) = minimize(
            &random_bank(4, 3, 2).unwrap(),
            &cfg(Objective::Plain, 0.1, 5000),
            &EnergySpec::riesz(1.0),
        )
        .unwrap();
        let e = trace.last().unwrap().energy_full;
        assert!((e - expected).abs() / expected < 1e-3, "{e}");
    }

    #[test]
    fn three_points_on_the_circle() {
        let (out, trace) = minimize(
            &random_bank(3, 2, 3).unwrap(),
            &cfg(Objective::Plain, 0.1, 5000),
            &EnergySpec::riesz(1.0),
        )
        .unwrap();
        assert!((trace.last().unwrap().energy_full - 2.0 * 3f64.sqrt()).abs() < 1e-6);
        for n in out.weights().row_norms() {
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn backtracking_gives_a_monotone_trace() {
        let (_, trace) = minimize(
            &random_bank(12, 3, 4).unwrap(),
            &cfg(Objective::Plain, 5.0, 300),
            &EnergySpec::riesz(2.0),
        )
        .unwrap();
        assert!(trace
            .rows
            .windows(2)
            .all(|w| w[1].objective <= w[0].objective));
        assert!(trace.rows.windows(2).all(|w| w[1].iter > w[0].iter));
    }

    #[test]
    fn runs_are_deterministic() {
        let spec = EnergySpec::riesz(2.0);
        let init = random_bank(6, 10, 5).unwrap();
        for objective in Objective::ALL {
            let mut c = cfg(objective, 0.05, 20);
            c.projected_dim = 4;
            c.group_size = 4;
            let (a, ta) = minimize(&init, &c, &spec).unwrap();
            let (b, tb) = minimize(&init, &c, &spec).unwrap();
            assert_eq!(a, b, "{objective:?}");
            assert_eq!(ta.to_csv(), tb.to_csv());
            for n in a.weights().row_norms() {
                assert!((n - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn trace_csv_has_header_and_rows() {
        let (_, trace) = minimize(
            &random_bank(3, 3, 6).unwrap(),
            &cfg(Objective::Plain, 0.1, 3),
            &EnergySpec::riesz(1.0),
        )
        .unwrap();
        let csv = trace.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "iter,energy_full,objective,grad_norm");
        assert_eq!(lines.len(), trace.len() + 1);
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
    fn rotated_start_reaches_the_same_energy() {
        let spec = EnergySpec::riesz(2.0);
        let init = random_bank(8, 4, 8).unwrap();
        let q = orthogonal(4, 9);
        let rotated = NeuronBank::new(init.weights().matmul(&q.transpose())).unwrap();
        let c = cfg(Objective::Plain, 0.05, 400);
        let (_, a) = minimize(&init, &c, &spec).unwrap();
        let (_, b) = minimize(&rotated, &c, &spec).unwrap();
        let (ea, eb) = (a.last().unwrap().energy_full, b.last().unwrap().energy_full);
        assert!((ea - eb).abs() < 1e-6, "{ea} vs {eb}");
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let b = random_bank(3, 3, 7).unwrap();
        let spec = EnergySpec::riesz(1.0);
        assert!(minimize(&b, &cfg(Objective::Plain, 0.0, 3), &spec).is_err());
        let mut c = cfg(Objective::Rp, 0.1, 3);
        c.projected_dim = 30;
        assert!(minimize(&b, &c, &spec).is_err());
    }
}

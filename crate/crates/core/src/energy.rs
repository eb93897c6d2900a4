//! Hyperspherical energy of a bank of neurons.
//!
//! A neuron bank is an `N x (d+1)` matrix whose rows are neuron weight vectors.
//! Rows are normalized onto the unit sphere before any energy is evaluated, so
//! the energy only depends on neuron directions. The energy sums a decreasing
//! kernel of the chord distance over *ordered* pairs `(i, j != i)`, so every
//! unordered pair is counted twice.
//!
//! Two evaluation routes are provided:
//!
//! * closed-form [`energy`] / [`energy_gradient`], used by the minimizer and as
//!   a reference, and
//! * [`energy_node`], which records the same quantity on a [`Tape`] so that it
//!   can be composed with projections and differentiated by the tape.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{rowwise_normalize, Matrix, NodeId, Tape};

/// Pairwise distances below this are rejected: the `s = 2` kernel would exceed
/// `1e18` there.
pub const TAU_DIST: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct NeuronBank {
    weights: Matrix,
}

impl NeuronBank {
    pub fn new(weights: Matrix) -> Result<Self> {
        if weights.rows() == 0 || weights.cols() == 0 {
            return Err(Error::invalid(
                "a neuron bank needs at least one neuron and one dimension",
            ));
        }
        Ok(Self { weights })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    /// Number of neurons `N`.
    pub fn n(&self) -> usize {
        self.weights.rows()
    }

    /// Ambient dimension `d + 1`.
    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn into_weights(self) -> Matrix {
        self.weights
    }

    /// Neuron directions `w_i / |w_i|`.
    pub fn unit_rows(&self) -> Result<Matrix> {
        rowwise_normalize(&self.weights)
    }
}

/// Which kernel to use and how to aggregate.
///
/// `s = 0` selects the logarithmic kernel `-log z`, any `s > 0` the Riesz
/// kernel `z^-s`. With `half_space` every neuron is paired with its antipode
/// and the energy runs over the `2N` augmented set. With `normalized` the sum
/// is divided by `M (M - 1)`, `M` being the number of points in the set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergySpec {
    pub s: f64,
    #[serde(default)]
    pub half_space: bool,
    #[serde(default)]
    pub normalized: bool,
}

impl Default for EnergySpec {
    fn default() -> Self {
        Self::riesz(2.0)
    }
}

impl EnergySpec {
    pub fn riesz(s: f64) -> Self {
        Self {
            s,
            half_space: false,
            normalized: false,
        }
    }

    pub fn log() -> Self {
        Self::riesz(0.0)
    }

    pub fn with_half_space(mut self, on: bool) -> Self {
        self.half_space = on;
        self
    }

    pub fn with_normalized(mut self, on: bool) -> Self {
        self.normalized = on;
        self
    }

    /// The measurement used for training logs: normalized half-space, `s = 1`.
    pub fn half_space_logging() -> Self {
        Self::riesz(1.0).with_half_space(true).with_normalized(true)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s >= 0.0) || !self.s.is_finite() {
            return Err(Error::invalid(format!(
                "kernel power must be finite and >= 0, got {}",
                self.s
            )));
        }
        Ok(())
    }

    pub fn is_log(&self) -> bool {
        self.s == 0.0
    }

    /// Kernel value at chord distance `z`.
    pub fn kernel(&self, z: f64) -> f64 {
        if self.is_log() {
            -z.ln()
        } else {
            z.powf(-self.s)
        }
    }

    /// Derivative of the kernel with respect to `z`.
    pub fn kernel_derivative(&self, z: f64) -> f64 {
        if self.is_log() {
            -1.0 / z
        } else {
            -self.s * z.powf(-self.s - 1.0)
        }
    }

    fn point_count(&self, n: usize) -> usize {
        if self.half_space {
            2 * n
        } else {
            n
        }
    }

    fn prefactor(&self, n: usize) -> f64 {
        if self.normalized {
            let m = self.point_count(n) as f64;
            1.0 / (m * (m - 1.0))
        } else {
            1.0
        }
    }
}

/// Whether a gradient is taken w.r.t. the raw weights or the unit directions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientMode {
    /// Chain rule through `w -> w / |w|`.
    #[default]
    Raw,
    /// Treat the rows as already-normalized points `ŵ_i`.
    Unit,
}

fn points(unit: &Matrix, half_space: bool) -> Matrix {
    if half_space {
        unit.vstack(&unit.scale(-1.0))
    } else {
        unit.clone()
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn check_point_count(m: usize) -> Result<()> {
    if m < 2 {
        return Err(Error::invalid("energy needs at least two points"));
    }
    Ok(())
}

/// Energy of a set of unit-norm points (rows), already augmented if needed.
fn point_set_energy(points: &Matrix, spec: &EnergySpec) -> Result<f64> {
    let m = points.rows();
    check_point_count(m)?;
    let mut terms = Vec::with_capacity(m * (m - 1));
    for i in 0..m {
        for j in (i + 1)..m {
            let d = distance(points.row(i), points.row(j));
            if !(d >= TAU_DIST) {
                return Err(Error::DegenerateDistance { i, j, distance: d });
            }
            let k = spec.kernel(d);
            terms.push(k);
            terms.push(k);
        }
    }
    // Sorting makes the sum independent of neuron order, bit for bit.
    terms.sort_by(f64::total_cmp);
    Ok(terms.iter().sum())
}

/// Hyperspherical energy of the bank under `spec`.
pub fn energy(bank: &NeuronBank, spec: &EnergySpec) -> Result<f64> {
    spec.validate()?;
    let unit = bank.unit_rows()?;
    let pts = points(&unit, spec.half_space);
    Ok(spec.prefactor(bank.n()) * point_set_energy(&pts, spec)?)
}

/// Gradient of the energy with respect to each point of an augmented set.
fn point_set_gradient(points: &Matrix, spec: &EnergySpec) -> Result<Matrix> {
    let (m, dim) = points.shape();
    check_point_count(m)?;
    let mut grad = vec![0.0; m * dim];
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            let (pi, pj) = (points.row(i), points.row(j));
            let d = distance(pi, pj);
            if !(d >= TAU_DIST) {
                return Err(Error::DegenerateDistance {
                    i: i.min(j),
                    j: i.max(j),
                    distance: d,
                });
            }
            // Each unordered pair appears twice in the ordered sum.
            let c = 2.0 * spec.kernel_derivative(d) / d;
            for k in 0..dim {
                grad[i * dim + k] += c * (pi[k] - pj[k]);
            }
        }
    }
    Ok(Matrix::from_raw(m, dim, grad))
}

/// Projects each row of `grad` onto the tangent space at the matching unit row.
pub fn tangent_projection(unit: &Matrix, grad: &Matrix) -> Matrix {
    let dim = unit.cols();
    let mut out = Vec::with_capacity(grad.len());
    for (u, g) in unit.row_iter().zip(grad.row_iter()) {
        let radial: f64 = u.iter().zip(g).map(|(a, b)| a * b).sum();
        out.extend((0..dim).map(|k| g[k] - radial * u[k]));
    }
    Matrix::from_raw(unit.rows(), dim, out)
}

/// Analytic energy gradient.
///
/// In [`GradientMode::Raw`] this is the gradient w.r.t. the stored weights,
/// composed through normalization: `(I - ŵ ŵᵀ) ∂E/∂ŵ / |w|`.
pub fn energy_gradient_with(
    bank: &NeuronBank,
    spec: &EnergySpec,
    mode: GradientMode,
) -> Result<Matrix> {
    spec.validate()?;
    let unit = bank.unit_rows()?;
    let n = bank.n();
    let pts = points(&unit, spec.half_space);
    let g_pts = point_set_gradient(&pts, spec)?.scale(spec.prefactor(n));
    let g_unit = if spec.half_space {
        // ŵ_i enters as itself and, negated, as point N + i.
        Matrix::from_fn(n, bank.dim(), |i, k| g_pts.get(i, k) - g_pts.get(n + i, k))
    } else {
        g_pts
    };
    Ok(match mode {
        GradientMode::Unit => g_unit,
        GradientMode::Raw => {
            let tangent = tangent_projection(&unit, &g_unit);
            let norms = bank.weights().row_norms();
            Matrix::from_fn(n, bank.dim(), |i, k| tangent.get(i, k) / norms[i])
        }
    })
}

pub fn energy_gradient(bank: &NeuronBank, spec: &EnergySpec) -> Result<Matrix> {
    energy_gradient_with(bank, spec, GradientMode::Raw)
}

/// Riemannian gradient on the product of spheres.
pub fn tangent_gradient(bank: &NeuronBank, spec: &EnergySpec) -> Result<Matrix> {
    let unit = bank.unit_rows()?;
    let g = energy_gradient_with(bank, spec, GradientMode::Unit)?;
    Ok(tangent_projection(&unit, &g))
}

/// Frobenius norm of [`tangent_gradient`]; zero exactly at stationary points.
pub fn tangential_gradient_norm(bank: &NeuronBank, spec: &EnergySpec) -> Result<f64> {
    Ok(tangent_gradient(bank, spec)?.frobenius_norm())
}

/// Largest distance between a neuron and the weighted barycenter of the others,
/// `max_i |ŵ_i - Σ α_j ŵ_j / Σ α_j|` with `α_j = |ŵ_i - ŵ_j|^-4`.
///
/// This is the literal fixed-point form of the `s = 2` stationarity condition.
/// It ignores the spherical constraint, so it is nonzero at configurations
/// such as an antipodal pair or a regular triangle even though their
/// tangential gradient vanishes.
pub fn stationarity_residual(bank: &NeuronBank, spec: &EnergySpec) -> Result<f64> {
    if spec.s != 2.0 {
        return Err(Error::UnsupportedKernel { s: spec.s });
    }
    let unit = bank.unit_rows()?;
    let (n, dim) = unit.shape();
    check_point_count(n)?;
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let mut num = vec![0.0; dim];
        let mut den = 0.0;
        for j in (0..n).filter(|&j| j != i) {
            let d = distance(unit.row(i), unit.row(j));
            if !(d >= TAU_DIST) {
                return Err(Error::DegenerateDistance {
                    i: i.min(j),
                    j: i.max(j),
                    distance: d,
                });
            }
            let alpha = d.powf(-(spec.s + 2.0));
            den += alpha;
            for (acc, &x) in num.iter_mut().zip(unit.row(j)) {
                *acc += alpha * x;
            }
        }
        let r = distance(
            unit.row(i),
            &num.iter().map(|x| x / den).collect::<Vec<_>>(),
        );
        worst = worst.max(r);
    }
    Ok(worst)
}

/// Records the energy of the unit rows held in `unit` on the tape.
///
/// The caller is responsible for `unit` having unit-norm rows; distances are
/// checked against [`TAU_DIST`] using the recorded forward values.
pub fn energy_node(tape: &mut Tape, unit: NodeId, spec: &EnergySpec) -> Result<NodeId> {
    spec.validate()?;
    let n = tape.value(unit).rows();
    check_point_count(spec.point_count(n))?;

    let kernel_sum = |tape: &mut Tape, sq: NodeId| -> NodeId {
        if spec.is_log() {
            let l = tape.log(sq);
            let s = tape.sum(l);
            tape.scale(s, -0.5)
        } else {
            let k = tape.pow(sq, -spec.s / 2.0);
            tape.sum(k)
        }
    };

    let mut total = None;
    if n >= 2 {
        let sq = tape.pairwise_sq_dist(unit);
        check_sq_distances(tape.value(sq), true, 0)?;
        let off_diag = tape.constant(Matrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { 1.0 }));
        let eye = tape.constant(Matrix::identity(n));
        let masked = tape.mul(sq, off_diag);
        let masked = tape.add(masked, eye);
        let within = kernel_sum(tape, masked);
        // The unit diagonal contributes f(1) per neuron: 1 for Riesz, 0 for log.
        let within = if spec.is_log() {
            within
        } else {
            tape.add_scalar(within, -(n as f64))
        };
        total = Some(within);
    }
    if spec.half_space {
        let neg = tape.scale(unit, -1.0);
        let cross_sq = tape.cross_sq_dist(unit, neg);
        check_sq_distances(tape.value(cross_sq), false, n)?;
        let cross = kernel_sum(tape, cross_sq);
        total = Some(match total {
            Some(within) => {
                let s = tape.add(within, cross);
                tape.scale(s, 2.0)
            }
            None => tape.scale(cross, 2.0),
        });
    }
    let total = total.expect("point count was checked");
    Ok(if spec.normalized {
        tape.scale(total, spec.prefactor(n))
    } else {
        total
    })
}

/// Normalizes the raw rows held in `weights` and records their energy.
pub fn bank_energy_node(tape: &mut Tape, weights: NodeId, spec: &EnergySpec) -> Result<NodeId> {
    let unit = tape.rowwise_normalize(weights)?;
    energy_node(tape, unit, spec)
}

fn check_sq_distances(sq: &Matrix, skip_diagonal: bool, offset: usize) -> Result<()> {
    for i in 0..sq.rows() {
        for j in 0..sq.cols() {
            if skip_diagonal && i == j {
                continue;
            }
            let d = sq.get(i, j).max(0.0).sqrt();
            if !(d >= TAU_DIST) {
                return Err(Error::DegenerateDistance {
                    i,
                    j: j + offset,
                    distance: d,
                });
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::gradcheck::{central_difference, relative_error, FD_STEP};
    use crate::numkit::{gaussian_matrix, rng_from_seed};
    use rand::Rng;
    use std::f64::consts::PI;

    fn circle(angles: &[f64]) -> NeuronBank {
        let rows: Vec<[f64; 2]> = angles.iter().map(|a| [a.cos(), a.sin()]).collect();
        NeuronBank::from_rows(&rows).unwrap()
    }

    #[test]
    fn antipodal_pair() {
        let bank = NeuronBank::from_rows(&[[1.0, 0.0], [-1.0, 0.0]]).unwrap();
        assert_eq!(energy(&bank, &EnergySpec::riesz(2.0)).unwrap(), 0.5);
        let e = energy(&bank, &EnergySpec::log()).unwrap();
        assert!((e - (-1.386294361119891)).abs() < 1e-12);
    }

    #[test]
    fn equilateral_triangle() {
        let bank = circle(&[0.0, 2.0 * PI / 3.0, 4.0 * PI / 3.0]);
        let e = energy(&bank, &EnergySpec::riesz(1.0)).unwrap();
        assert!((e - 2.0 * 3f64.sqrt()).abs() < 1e-12, "{e}");
    }

    #[test]
    fn single_neuron_half_space_normalized() {
        let bank = NeuronBank::from_rows(&[[0.3, -0.2, 0.9]]).unwrap();
        let spec = EnergySpec::half_space_logging();
        assert!((energy(&bank, &spec).unwrap() - 0.5).abs() < 1e-15);
        let mut tape = Tape::new();
        let w = tape.var(bank.weights().clone());
        let e = bank_energy_node(&mut tape, w, &spec).unwrap();
        assert!((tape.scalar_value(e) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn coincident_directions_are_degenerate() {
        let bank = NeuronBank::from_rows(&[[1.0, 1.0], [2.0, 2.0]]).unwrap();
        assert!(matches!(
            energy(&bank, &EnergySpec::riesz(2.0)),
            Err(Error::DegenerateDistance { .. })
        ));
        // Opposite directions collide only in the half-space set.
        let bank = NeuronBank::from_rows(&[[1.0, 1.0], [-2.0, -2.0]]).unwrap();
        assert!(energy(&bank, &EnergySpec::riesz(2.0)).is_ok());
        assert!(matches!(
            energy(&bank, &EnergySpec::riesz(2.0).with_half_space(true)),
            Err(Error::DegenerateDistance { .. })
        ));
    }

    #[test]
    fn pair_term_matches_closed_form_and_finite_differences() {
        let bank = NeuronBank::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let g = energy_gradient_with(&bank, &EnergySpec::riesz(2.0), GradientMode::Unit).unwrap();
        // One-sided term -2(e1 - e2)/|e1 - e2|^4 = (-0.5, 0.5), doubled by the ordered sum.
        assert!((g.get(0, 0) + 1.0).abs() < 1e-15 && (g.get(0, 1) - 1.0).abs() < 1e-15);

        let e2 = [0.0, 1.0];
        let x = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let fd = central_difference(&x, FD_STEP, |p| {
            Ok::<_, ()>(distance(p.row(0), &e2).powi(-2))
        })
        .unwrap();
        assert!((fd.get(0, 0) + 0.5).abs() < 1e-8 && (fd.get(0, 1) - 0.5).abs() < 1e-8);
    }

    #[test]
    fn antipodal_pair_is_tangentially_stationary() {
        let bank = NeuronBank::from_rows(&[[0.0, 0.0, 2.0], [0.0, 0.0, -1.0]]).unwrap();
        let spec = EnergySpec::riesz(2.0);
        assert!(tangential_gradient_norm(&bank, &spec).unwrap() < 1e-15);
        assert!(
            energy_gradient_with(&bank, &spec, GradientMode::Unit)
                .unwrap()
                .frobenius_norm()
                > 0.1
        );
    }

    #[test]
    fn stationarity_residual_values() {
        let spec = EnergySpec::riesz(2.0);
        let pair = NeuronBank::from_rows(&[[1.0, 0.0], [-1.0, 0.0]]).unwrap();
        assert!((stationarity_residual(&pair, &spec).unwrap() - 2.0).abs() < 1e-15);

        // Regular triangle: the barycenter of the other two is -ŵ_i / 2.
        let tri = circle(&[0.0, 2.0 * PI / 3.0, 4.0 * PI / 3.0]);
        let r = stationarity_residual(&tri, &spec).unwrap();
        assert!((r - 1.5).abs() < 1e-12, "{r}");

        let random = NeuronBank::new(gaussian_matrix(5, 8, 3, 1.0)).unwrap();
        assert!(stationarity_residual(&random, &spec).unwrap() > 0.0);

        assert!(matches!(
            stationarity_residual(&pair, &EnergySpec::riesz(1.0)),
            Err(Error::UnsupportedKernel { .. })
        ));
    }

    #[test]
    fn tape_route_matches_closed_form() {
        let mut rng = rng_from_seed(5);
        for trial in 0..30 {
            let n = rng.random_range(2..8);
            let dim = rng.random_range(2..10);
            let s = [0.0, 1.0, 2.0, 0.5][trial % 4];
            let spec = EnergySpec::riesz(s)
                .with_half_space(trial % 3 == 0)
                .with_normalized(trial % 2 == 0);
            let bank = NeuronBank::new(gaussian_matrix(n, dim, 100 + trial as u64, 1.0)).unwrap();
            let closed = energy(&bank, &spec).unwrap();
            let grad = energy_gradient(&bank, &spec).unwrap();

            let mut tape = Tape::new();
            let w = tape.var(bank.weights().clone());
            let e = bank_energy_node(&mut tape, w, &spec).unwrap();
            let taped = tape.scalar_value(e);
            assert!(
                (closed - taped).abs() <= 1e-9 * closed.abs().max(1.0),
                "{closed} vs {taped}"
            );
            let tg = tape.backward(e).unwrap();
            assert!(relative_error(&grad, tg.wrt(w)) < 1e-9);
        }
    }

    #[test]
    fn decreasing_in_angle_for_a_pair() {
        let spec = EnergySpec::riesz(1.5);
        let mut prev = f64::INFINITY;
        for k in 1..180 {
            let e = energy(&circle(&[0.0, k as f64 * PI / 180.0]), &spec).unwrap();
            assert!(e < prev);
            prev = e;
        }
    }
}

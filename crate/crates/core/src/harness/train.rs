use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::{argmax_rows, error_rate, one_hot, Dataset};
use super::rotation::{gram_schmidt_node, orthogonality_error};
use crate::energy::{energy, EnergySpec, NeuronBank};
use crate::error::{Error, Result};
use crate::numkit::gradcheck::relative_error;
use crate::numkit::{derive_seed, gaussian_matrix, rng_from_seed, Matrix, NodeId, Tape};
use crate::projection::{
    adversarial_step, bilateral_nodes, group_energy_node, rp_energy_node, Aggregation, ApMode,
    ApState, BilateralState, GroupScheme, ProjectionSet, SharedBasisRegistry, DEFAULT_GROUP_SIZE,
    DEFAULT_PROJECTED_DIM, DEFAULT_REINIT_PERIOD, DEFAULT_VIEWS,
};

const INIT_TAG: u64 = 1;
const ORDER_TAG: u64 = 2;
const PROJECTION_TAG: u64 = 3;

/// Layer widths of a fully connected rectifier network, input first and class
/// count last. Every layer but the last is a hidden layer whose neurons (rows
/// of its weight matrix) are regularized.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
}

impl MlpSpec {
    pub fn new(input: usize, hidden: &[usize], classes: usize) -> Result<Self> {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(classes);
        let spec = Self { widths };
        spec.validate()?;
        Ok(spec)
    }

    /// `input -> 64 -> 64 -> 64 -> classes`.
    pub fn default_for(input: usize, classes: usize) -> Self {
        Self {
            widths: vec![input, 64, 64, 64, classes],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 4 {
            return Err(Error::invalid(
                "the network needs at least two hidden layers",
            ));
        }
        if self.widths.contains(&0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        Ok(())
    }

    pub fn hidden_layers(&self) -> usize {
        self.widths.len() - 2
    }

    /// Neuron dimension of each hidden layer.
    pub fn hidden_dims(&self) -> Vec<usize> {
        self.widths[..self.hidden_layers()].to_vec()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularizer {
    #[default]
    None,
    Mhe,
    HsMhe,
    Rp,
    ApAlternating,
    ApUnrolled,
    Adversarial,
    Group,
    Bilateral,
}

impl Regularizer {
    pub const ALL: [Regularizer; 9] = [
        Regularizer::None,
        Regularizer::Mhe,
        Regularizer::HsMhe,
        Regularizer::Rp,
        Regularizer::ApAlternating,
        Regularizer::ApUnrolled,
        Regularizer::Adversarial,
        Regularizer::Group,
        Regularizer::Bilateral,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Regularizer::None => "none",
            Regularizer::Mhe => "mhe",
            Regularizer::HsMhe => "hs_mhe",
            Regularizer::Rp => "rp",
            Regularizer::ApAlternating => "ap_alternating",
            Regularizer::ApUnrolled => "ap_unrolled",
            Regularizer::Adversarial => "adversarial",
            Regularizer::Group => "group",
            Regularizer::Bilateral => "bilateral",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub regularizer: Regularizer,
    pub reg_weight: f64,
    pub weight_decay: f64,
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Fractions of training after which the step size is halved.
    pub lr_milestones: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Riesz exponent of the regularizer.
    pub s: f64,
    pub projected_dim: usize,
    pub views: usize,
    pub reinit_period: Option<usize>,
    /// Ascent step of the adversarial projections.
    pub lr_p: f64,
    pub ap_inner_lr: f64,
    pub ap_update_every: usize,
    pub group_size: usize,
    pub bilateral_rank: usize,
    /// Step size of the rotation matrices (`None`: same as `lr`).
    pub rotation_lr: Option<f64>,
    /// Iterations between trace rows (`None`: once per epoch).
    pub log_every: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            regularizer: Regularizer::None,
            reg_weight: 1.0,
            weight_decay: 1e-4,
            lr: 0.05,
            momentum: 0.9,
            epochs: 30,
            batch_size: 32,
            lr_milestones: vec![0.5, 0.75],
            seeds: (0..5).collect(),
            s: 2.0,
            projected_dim: DEFAULT_PROJECTED_DIM,
            views: DEFAULT_VIEWS,
            reinit_period: Some(DEFAULT_REINIT_PERIOD),
            lr_p: 0.01,
            ap_inner_lr: 0.01,
            ap_update_every: 10,
            group_size: DEFAULT_GROUP_SIZE,
            bilateral_rank: DEFAULT_PROJECTED_DIM,
            rotation_lr: None,
            log_every: None,
        }
    }
}

impl TrainConfig {
    /// Setting used for the energy-dynamics comparison: a stronger penalty and
    /// low-dimensional projections redrawn at every step.
    pub fn energy_dynamics(regularizer: Regularizer) -> Self {
        Self {
            regularizer,
            reg_weight: 10.0,
            projected_dim: 10,
            reinit_period: Some(1),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.lr) || !self.rotation_lr.is_none_or(positive) {
            return Err(Error::invalid("learning rates must be positive"));
        }
        if !(self.reg_weight >= 0.0
            && self.weight_decay >= 0.0
            && self.lr_p >= 0.0
            && self.ap_inner_lr >= 0.0)
        {
            return Err(Error::invalid(
                "weights and auxiliary step sizes must be non-negative",
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.seeds.is_empty() {
            return Err(Error::invalid(
                "epochs, batch size and seed list must be non-empty",
            ));
        }
        if self.projected_dim == 0
            || self.views == 0
            || self.group_size == 0
            || self.bilateral_rank == 0
        {
            return Err(Error::invalid("projection sizes must be positive"));
        }
        if self.ap_update_every == 0 || self.reinit_period == Some(0) || self.log_every == Some(0) {
            return Err(Error::invalid("periods must be positive"));
        }
        if self.lr_milestones.iter().any(|m| !(0.0..=1.0).contains(m)) {
            return Err(Error::invalid(
                "lr milestones are fractions of training in [0, 1]",
            ));
        }
        Ok(())
    }

    /// Energy the regularizer is built on: half-space for every variant but
    /// `mhe`, normalized so that `reg_weight` is comparable across layers.
    pub fn regularizer_spec(&self) -> EnergySpec {
        EnergySpec::riesz(self.s)
            .with_half_space(self.regularizer != Regularizer::Mhe)
            .with_normalized(true)
    }

    fn lr_at(&self, base: f64, epoch: usize) -> f64 {
        let progress = epoch as f64 / self.epochs as f64;
        let halvings = self
            .lr_milestones
            .iter()
            .filter(|&&m| progress >= m)
            .count();
        base * 0.5f64.powi(halvings as i32)
    }
}

/// One logged step of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRow {
    pub iter: usize,
    /// Cross-entropy on the full training split.
    pub train_loss: f64,
    pub test_error: f64,
    /// Normalized half-space `s = 1` energy of each hidden layer.
    pub energies: Vec<f64>,
    pub energy_total: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub rows: Vec<TrainRow>,
}

impl TrainTrace {
    pub fn to_csv(&self) -> String {
        let layers = self.rows.first().map_or(0, |r| r.energies.len());
        let mut out = String::from("iter,train_loss,test_error");
        for l in 1..=layers {
            let _ = write!(out, ",energy_layer_{l}");
        }
        out.push_str(",energy_total\n");
        for r in &self.rows {
            let _ = write!(out, "{},{},{}", r.iter, r.train_loss, r.test_error);
            for e in &r.energies {
                let _ = write!(out, ",{e}");
            }
            let _ = writeln!(out, ",{}", r.energy_total);
        }
        out
    }

    pub fn last(&self) -> Option<&TrainRow> {
        self.rows.last()
    }
}

/// Result of one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub final_test_error: f64,
    pub final_energy_total: f64,
    pub trace: TrainTrace,
    /// Rotation runs: largest `|Q Qᵀ - I|` seen at any iteration.
    pub max_orthogonality_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: String,
    pub seeds: Vec<u64>,
    pub mean_error: f64,
    pub std_error: f64,
    pub final_energy_mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmResult {
    pub summary: ArmSummary,
    pub runs: Vec<RunResult>,
}

fn summarize(arm: &str, runs: Vec<RunResult>) -> ArmResult {
    let n = runs.len() as f64;
    let mean_error = runs.iter().map(|r| r.final_test_error).sum::<f64>() / n;
    let var = if runs.len() > 1 {
        runs.iter()
            .map(|r| (r.final_test_error - mean_error).powi(2))
            .sum::<f64>()
            / (n - 1.0)
    } else {
        0.0
    };
    ArmResult {
        summary: ArmSummary {
            arm: arm.to_string(),
            seeds: runs.iter().map(|r| r.seed).collect(),
            mean_error,
            std_error: var.sqrt(),
            final_energy_mean: runs.iter().map(|r| r.final_energy_total).sum::<f64>() / n,
        },
        runs,
    }
}

#[derive(Debug, Clone)]
struct Param {
    value: Matrix,
    velocity: Matrix,
    decay: bool,
    rotation: bool,
}

impl Param {
    fn new(value: Matrix, decay: bool, rotation: bool) -> Self {
        let velocity = Matrix::zeros(value.rows(), value.cols());
        Self {
            value,
            velocity,
            decay,
            rotation,
        }
    }
}

/// Per-layer state of the regularizer.
#[derive(Debug, Clone)]
enum RegState {
    None,
    Direct,
    Rp(SharedBasisRegistry),
    Ap(Vec<ApState>),
    Adversarial(Vec<Matrix>),
    Group(Vec<GroupScheme>),
    Bilateral(Vec<BilateralState>),
}

impl RegState {
    fn new(cfg: &TrainConfig, mlp: &MlpSpec, seed: u64) -> Result<Self> {
        let dims = mlp.hidden_dims();
        let counts = &mlp.widths[1..=mlp.hidden_layers()];
        let pseed = derive_seed(seed, PROJECTION_TAG, 0);
        let out_dim = |d: usize| cfg.projected_dim.min(d);
        Ok(match cfg.regularizer {
            Regularizer::None => RegState::None,
            Regularizer::Mhe | Regularizer::HsMhe => RegState::Direct,
            Regularizer::Rp => RegState::Rp(SharedBasisRegistry::new_clamped(
                &dims,
                cfg.projected_dim,
                cfg.views,
                Aggregation::Mean,
                cfg.reinit_period,
                pseed,
            )?),
            Regularizer::ApAlternating | Regularizer::ApUnrolled => {
                let mode = if cfg.regularizer == Regularizer::ApAlternating {
                    ApMode::Alternating
                } else {
                    ApMode::Unrolled
                };
                let states = dims
                    .iter()
                    .enumerate()
                    .map(|(l, &d)| {
                        let mut ap =
                            ApState::new(out_dim(d), d, mode, derive_seed(pseed, l as u64, 1))?;
                        ap.inner_lr = cfg.ap_inner_lr;
                        ap.update_every = cfg.ap_update_every;
                        ap.reinit_period = cfg.reinit_period;
                        Ok(ap)
                    })
                    .collect::<Result<_>>()?;
                RegState::Ap(states)
            }
            Regularizer::Adversarial => RegState::Adversarial(
                dims.iter()
                    .enumerate()
                    .map(|(l, &d)| {
                        gaussian_matrix(out_dim(d), d, derive_seed(pseed, l as u64, 2), 1.0)
                    })
                    .collect(),
            ),
            Regularizer::Group => RegState::Group(
                dims.iter()
                    .map(|&d| GroupScheme::consecutive(d, cfg.group_size))
                    .collect::<Result<_>>()?,
            ),
            Regularizer::Bilateral => RegState::Bilateral(
                dims.iter()
                    .zip(counts)
                    .enumerate()
                    .map(|(l, (&m, &n))| {
                        let r = cfg.bilateral_rank.min(m).min(n);
                        BilateralState::new(
                            gaussian_matrix(r, m, derive_seed(pseed, l as u64, 3), 1.0),
                            gaussian_matrix(n, r, derive_seed(pseed, l as u64, 4), 1.0),
                            false,
                        )
                    })
                    .collect::<Result<_>>()?,
            ),
        })
    }

    /// Updates that treat the weights as fixed: alternating inner steps and
    /// the adversarial ascent.
    fn prepare(&mut self, hidden: &[Matrix], spec: &EnergySpec, lr_p: f64) -> Result<()> {
        match self {
            RegState::Ap(states) => {
                for (ap, w) in states.iter_mut().zip(hidden) {
                    if ap.mode == ApMode::Alternating {
                        ap.advance(&NeuronBank::new(w.clone())?)?;
                    }
                }
            }
            RegState::Adversarial(ps) => {
                for (p, w) in ps.iter_mut().zip(hidden) {
                    *p = adversarial_step(&NeuronBank::new(w.clone())?, p, spec, lr_p)?;
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Sum over hidden layers of the regularizer; `None` without one.
    fn node(
        &mut self,
        tape: &mut Tape,
        hidden: &[NodeId],
        spec: &EnergySpec,
    ) -> Result<Option<NodeId>> {
        let mut terms = Vec::with_capacity(hidden.len());
        for (l, &w) in hidden.iter().enumerate() {
            let term = match self {
                RegState::None => return Ok(None),
                RegState::Direct => crate::energy::bank_energy_node(tape, w, spec)?,
                RegState::Rp(reg) => rp_energy_node(tape, w, reg.for_layer(l), spec)?,
                RegState::Ap(states) => {
                    let ap = &mut states[l];
                    match ap.mode {
                        ApMode::Alternating => ap.fixed_energy_node(tape, w, spec)?,
                        ApMode::Unrolled => {
                            let bank = NeuronBank::new(tape.value(w).clone())?;
                            ap.energy_node(tape, w, &bank, spec)?
                        }
                    }
                }
                RegState::Adversarial(ps) => {
                    let set = ProjectionSet::from_matrices(vec![ps[l].clone()], Aggregation::Mean)?;
                    rp_energy_node(tape, w, &set, spec)?
                }
                RegState::Group(gs) => group_energy_node(tape, w, &gs[l], spec)?,
                RegState::Bilateral(bs) => {
                    // Neurons are the columns of the transposed weight matrix.
                    let wt = tape.transpose(w);
                    let (e1, e2) = bilateral_nodes(tape, wt, &bs[l], spec)?;
                    tape.add(e1, e2)
                }
            };
            terms.push(term);
        }
        let mut total = terms[0];
        for &t in &terms[1..] {
            total = tape.add(total, t);
        }
        Ok(Some(total))
    }

    fn finish_step(&mut self) {
        if let RegState::Rp(reg) = self {
            reg.tick();
        }
    }
}

/// Network weights, optimizer state and regularizer state of one run.
#[derive(Debug, Clone)]
struct Trainer {
    mlp: MlpSpec,
    cfg: TrainConfig,
    rotation: bool,
    /// Hidden weights: trainable, or frozen under rotation training.
    hidden_w: Vec<Matrix>,
    /// Trainable parameters. Normal runs: `[W_1, b_1, ..., W_c, b_c]`;
    /// rotation runs: `[R_1, ..., R_L, W_c, b_c]`.
    params: Vec<Param>,
    hidden_b: Vec<Matrix>,
    reg: RegState,
    spec: EnergySpec,
}

impl Trainer {
    fn new(mlp: &MlpSpec, cfg: &TrainConfig, seed: u64, rotation: bool) -> Result<Self> {
        mlp.validate()?;
        cfg.validate()?;
        let init = derive_seed(seed, INIT_TAG, 0);
        let layers = mlp.widths.len() - 1;
        let weights: Vec<Matrix> = (0..layers)
            .map(|l| {
                let (fan_in, fan_out) = (mlp.widths[l], mlp.widths[l + 1]);
                gaussian_matrix(
                    fan_out,
                    fan_in,
                    derive_seed(init, l as u64, 0),
                    (2.0 / fan_in as f64).sqrt(),
                )
            })
            .collect();
        let biases: Vec<Matrix> = (0..layers)
            .map(|l| Matrix::zeros(1, mlp.widths[l + 1]))
            .collect();
        let hidden = mlp.hidden_layers();
        let mut params = Vec::new();
        let (hidden_w, hidden_b) = if rotation {
            for &d in &mlp.hidden_dims() {
                params.push(Param::new(Matrix::identity(d), false, true));
            }
            (weights[..hidden].to_vec(), biases[..hidden].to_vec())
        } else {
            for l in 0..hidden {
                params.push(Param::new(weights[l].clone(), true, false));
                params.push(Param::new(biases[l].clone(), false, false));
            }
            (Vec::new(), Vec::new())
        };
        params.push(Param::new(weights[hidden].clone(), true, false));
        params.push(Param::new(biases[hidden].clone(), false, false));
        let reg = if rotation {
            RegState::None
        } else {
            RegState::new(cfg, mlp, seed)?
        };
        Ok(Self {
            mlp: mlp.clone(),
            cfg: cfg.clone(),
            rotation,
            hidden_w,
            params,
            hidden_b,
            reg,
            spec: cfg.regularizer_spec(),
        })
    }

    fn hidden_count(&self) -> usize {
        self.mlp.hidden_layers()
    }

    /// Current hidden weights (rows are neurons) and biases, as values.
    fn effective_hidden(&self) -> Result<(Vec<Matrix>, Vec<Matrix>)> {
        let h = self.hidden_count();
        if self.rotation {
            let mut ws = Vec::with_capacity(h);
            for l in 0..h {
                let q = super::rotation::gram_schmidt(&self.params[l].value)?;
                ws.push(self.hidden_w[l].matmul(&q.transpose()));
            }
            Ok((ws, self.hidden_b.clone()))
        } else {
            Ok((
                (0..h).map(|l| self.params[2 * l].value.clone()).collect(),
                (0..h)
                    .map(|l| self.params[2 * l + 1].value.clone())
                    .collect(),
            ))
        }
    }

    fn classifier(&self) -> (&Matrix, &Matrix) {
        let n = self.params.len();
        (&self.params[n - 2].value, &self.params[n - 1].value)
    }

    fn logits(&self, x: &Matrix) -> Result<Matrix> {
        let (ws, bs) = self.effective_hidden()?;
        let mut h = x.clone();
        for (w, b) in ws.iter().zip(&bs) {
            h = affine(&h, w, b).map(|v| v.max(0.0));
        }
        let (wc, bc) = self.classifier();
        Ok(affine(&h, wc, bc))
    }

    fn energies(&self) -> Result<Vec<f64>> {
        let (ws, _) = self.effective_hidden()?;
        ws.into_iter()
            .map(|w| energy(&NeuronBank::new(w)?, &EnergySpec::half_space_logging()))
            .collect()
    }

    fn log_row(&self, iter: usize, data: &Dataset) -> Result<TrainRow> {
        let train_logits = self.logits(&data.train_x)?;
        let train_loss = cross_entropy_value(&train_logits, &data.train_y);
        let test_error = error_rate(&argmax_rows(&self.logits(&data.test_x)?), &data.test_y);
        let energies = self.energies()?;
        let energy_total = energies.iter().sum();
        Ok(TrainRow {
            iter,
            train_loss,
            test_error,
            energies,
            energy_total,
        })
    }

    fn prepare(&mut self) -> Result<()> {
        let (ws, _) = self.effective_hidden()?;
        self.reg.prepare(&ws, &self.spec, self.cfg.lr_p)
    }

    /// Total loss on a batch and its gradient for every trainable parameter.
    /// Advances state that the loss itself updates (unrolled projections).
    fn loss_and_grads(&mut self, x: &Matrix, y: &[usize]) -> Result<(f64, Vec<Matrix>)> {
        let mut tape = Tape::new();
        let vars: Vec<NodeId> = self
            .params
            .iter()
            .map(|p| tape.var(p.value.clone()))
            .collect();
        let h = self.hidden_count();
        let ones = tape.constant(Matrix::filled(x.rows(), 1, 1.0));
        let mut hidden_nodes = Vec::with_capacity(h);
        let mut act = tape.constant(x.clone());
        for l in 0..h {
            let (w, b) = if self.rotation {
                let q = gram_schmidt_node(&mut tape, vars[l])?;
                let fixed = tape.constant(self.hidden_w[l].clone());
                let qt = tape.transpose(q);
                (
                    tape.matmul(fixed, qt),
                    tape.constant(self.hidden_b[l].clone()),
                )
            } else {
                (vars[2 * l], vars[2 * l + 1])
            };
            hidden_nodes.push(w);
            let z = affine_node(&mut tape, act, w, b, ones);
            act = tape.relu(z);
        }
        let n = vars.len();
        let logits = affine_node(&mut tape, act, vars[n - 2], vars[n - 1], ones);
        let mut loss = cross_entropy_node(
            &mut tape,
            logits,
            y,
            self.mlp.widths[self.mlp.widths.len() - 1],
        );

        if let Some(reg) = self.reg.node(&mut tape, &hidden_nodes, &self.spec)? {
            let weighted = tape.scale(reg, self.cfg.reg_weight);
            loss = tape.add(loss, weighted);
        }
        if self.cfg.weight_decay > 0.0 {
            for (p, &v) in self.params.iter().zip(&vars) {
                if p.decay {
                    let sq = tape.mul(v, v);
                    let s = tape.sum(sq);
                    let term = tape.scale(s, 0.5 * self.cfg.weight_decay);
                    loss = tape.add(loss, term);
                }
            }
        }
        let value = tape.scalar_value(loss);
        let grads = tape.grad_values(loss, &vars)?;
        Ok((value, grads))
    }

    fn apply(&mut self, grads: &[Matrix], lr: f64, rotation_lr: f64) {
        let mu = self.cfg.momentum;
        for (p, g) in self.params.iter_mut().zip(grads) {
            p.velocity = p.velocity.scale(mu).add(g);
            let step = if p.rotation { rotation_lr } else { lr };
            p.value = p.value.sub(&p.velocity.scale(step));
        }
    }

    fn max_orthogonality_error(&self) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for l in 0..self.hidden_count() {
            let q = super::rotation::gram_schmidt(&self.params[l].value)?;
            worst = worst.max(orthogonality_error(&q));
        }
        Ok(worst)
    }
}

fn affine(x: &Matrix, w: &Matrix, b: &Matrix) -> Matrix {
    let z = x.matmul(&w.transpose());
    Matrix::from_fn(z.rows(), z.cols(), |i, j| z.get(i, j) + b.get(0, j))
}

fn affine_node(tape: &mut Tape, x: NodeId, w: NodeId, b: NodeId, ones: NodeId) -> NodeId {
    let wt = tape.transpose(w);
    let z = tape.matmul(x, wt);
    let bias = tape.matmul(ones, b);
    tape.add(z, bias)
}

fn row_max(m: &Matrix) -> Matrix {
    Matrix::from_fn(m.rows(), m.cols(), |i, _| {
        m.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    })
}

/// Mean softmax cross-entropy. The per-row maximum is subtracted as a
/// constant; the loss does not depend on it.
fn cross_entropy_node(tape: &mut Tape, logits: NodeId, y: &[usize], classes: usize) -> NodeId {
    let shift = tape.constant(row_max(tape.value(logits)));
    let shifted = tape.sub(logits, shift);
    let e = tape.exp(shifted);
    let rs = tape.row_sum(e);
    let lse = tape.log(rs);
    let lse_sum = tape.sum(lse);
    let onehot = tape.constant(one_hot(y, classes));
    let picked = tape.mul(shifted, onehot);
    let picked_sum = tape.sum(picked);
    let diff = tape.sub(lse_sum, picked_sum);
    tape.scale(diff, 1.0 / y.len() as f64)
}

fn cross_entropy_value(logits: &Matrix, y: &[usize]) -> f64 {
    let mut total = 0.0;
    for (row, &label) in logits.row_iter().zip(y) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - (row[label] - m);
    }
    total / y.len() as f64
}

fn batch(data: &Dataset, idx: &[usize]) -> (Matrix, Vec<usize>) {
    let x = Matrix::from_fn(idx.len(), data.dim(), |i, j| data.train_x.get(idx[i], j));
    (x, idx.iter().map(|&i| data.train_y[i]).collect())
}

fn check_data(mlp: &MlpSpec, data: &Dataset) -> Result<()> {
    if data.dim() != mlp.widths[0] || data.classes != mlp.widths[mlp.widths.len() - 1] {
        return Err(Error::invalid(format!(
            "network {:?} does not fit data with dim {} and {} classes",
            mlp.widths,
            data.dim(),
            data.classes
        )));
    }
    if data.train_y.is_empty() || data.test_y.is_empty() {
        return Err(Error::invalid("dataset has an empty split"));
    }
    Ok(())
}

fn run(
    mlp: &MlpSpec,
    cfg: &TrainConfig,
    data: &Dataset,
    seed: u64,
    rotation: bool,
) -> Result<RunResult> {
    check_data(mlp, data)?;
    let mut t = Trainer::new(mlp, cfg, seed, rotation)?;
    let rotation_lr = cfg.rotation_lr.unwrap_or(cfg.lr);
    let mut trace = TrainTrace::default();
    trace.rows.push(t.log_row(0, data)?);
    let mut worst_orth = if rotation {
        Some(t.max_orthogonality_error()?)
    } else {
        None
    };
    let n = data.train_y.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut iter = 0;
    for epoch in 0..cfg.epochs {
        let mut rng = rng_from_seed(derive_seed(seed, ORDER_TAG, epoch as u64));
        order.shuffle(&mut rng);
        let factor = cfg.lr_at(1.0, epoch);
        for chunk in order.chunks(cfg.batch_size) {
            let (x, y) = batch(data, chunk);
            t.prepare()?;
            let (loss, grads) = t.loss_and_grads(&x, &y)?;
            if !loss.is_finite() {
                return Err(Error::DivergedLoss { iter });
            }
            t.apply(&grads, cfg.lr * factor, rotation_lr * factor);
            t.reg.finish_step();
            iter += 1;
            if let Some(w) = worst_orth.as_mut() {
                *w = w.max(t.max_orthogonality_error()?);
            }
            if cfg.log_every.is_some_and(|k| iter % k == 0) {
                trace.rows.push(t.log_row(iter, data)?);
            }
        }
        if cfg.log_every.is_none() {
            trace.rows.push(t.log_row(iter, data)?);
        }
    }
    if trace.last().map(|r| r.iter) != Some(iter) {
        trace.rows.push(t.log_row(iter, data)?);
    }
    let last = trace.last().expect("trace has rows");
    if !last.energy_total.is_finite() {
        return Err(Error::DivergedEnergy { iter });
    }
    Ok(RunResult {
        seed,
        final_test_error: last.test_error,
        final_energy_total: last.energy_total,
        max_orthogonality_error: worst_orth,
        trace,
    })
}

/// One seed of a regularized (or plain) training run.
pub fn train_seed(
    mlp: &MlpSpec,
    cfg: &TrainConfig,
    data: &Dataset,
    seed: u64,
) -> Result<RunResult> {
    run(mlp, cfg, data, seed, false)
}

/// Trains one arm over every configured seed. Seeds run in parallel on the
/// current rayon pool; each run is single-threaded and deterministic.
pub fn train(mlp: &MlpSpec, cfg: &TrainConfig, data: &Dataset) -> Result<ArmResult> {
    let runs = cfg
        .seeds
        .par_iter()
        .map(|&s| run(mlp, cfg, data, s, false))
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(cfg.regularizer.name(), runs))
}

/// Rotation training: hidden weights stay at their initial values and only
/// per-layer rotations (orthonormalized by Gram-Schmidt) and the classifier
/// learn. The regularizer setting is ignored and hidden layers get no weight
/// decay.
pub fn train_rotation(mlp: &MlpSpec, cfg: &TrainConfig, data: &Dataset) -> Result<ArmResult> {
    let runs = cfg
        .seeds
        .par_iter()
        .map(|&s| run(mlp, cfg, data, s, true))
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize("rotation", runs))
}

pub fn summaries_to_json(summaries: &[ArmSummary]) -> String {
    serde_json::to_string_pretty(summaries).expect("summaries always serialize")
}

/// Relative error between the tape gradient of the total loss on the first
/// batch and central differences, over `coords` randomly chosen parameter
/// entries. Auxiliary projection updates run once before the comparison and
/// are then held fixed.
pub fn total_loss_gradient_check(
    mlp: &MlpSpec,
    cfg: &TrainConfig,
    data: &Dataset,
    seed: u64,
    rotation: bool,
    coords: usize,
) -> Result<f64> {
    check_data(mlp, data)?;
    let mut t = Trainer::new(mlp, cfg, seed, rotation)?;
    let idx: Vec<usize> = (0..cfg.batch_size.min(data.train_y.len())).collect();
    let (x, y) = batch(data, &idx);
    t.prepare()?;
    let (_, grads) = t.clone().loss_and_grads(&x, &y)?;
    let mut rng = rng_from_seed(derive_seed(seed, 0xF1D, 0));
    let h = 1e-5;
    let (mut analytic, mut numeric) = (Vec::with_capacity(coords), Vec::with_capacity(coords));
    for _ in 0..coords {
        let p = rng.random_range(0..t.params.len());
        let (r, c) = t.params[p].value.shape();
        let (i, j) = (rng.random_range(0..r), rng.random_range(0..c));
        let base = t.params[p].value.get(i, j);
        let eval = |v: f64| -> Result<f64> {
            let mut probe = t.clone();
            probe.params[p].value = probe.params[p].value.with_entry(i, j, v);
            Ok(probe.loss_and_grads(&x, &y)?.0)
        };
        numeric.push((eval(base + h)? - eval(base - h)?) / (2.0 * h));
        analytic.push(grads[p].get(i, j));
    }
    let a = Matrix::new(1, coords, analytic)?;
    let f = Matrix::new(1, coords, numeric)?;
    Ok(relative_error(&a, &f))
}

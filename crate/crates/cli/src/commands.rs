use std::fs;
use std::io::Write as _;
use std::path::Path;

use comhe::energy::{energy, EnergySpec, NeuronBank};
use comhe::harness::{
    make_dataset_with, summaries_to_json, train, train_rotation, ArmResult, MlpSpec,
};
use comhe::minimizer::{minimize, random_bank, EnergyTrace};
use comhe::numkit::{derive_seed, gaussian_matrix};
use comhe::projection::{bilateral_energies, lowrank_reconstruct, BilateralState};
use comhe::theorylab::{
    check_jll_pair, check_lemma1_with, check_orthogonality_with, check_theorem1_with,
    check_theorem2_with, orthogonality_limit, records_to_json, tightness_grid, unit_pair, Record,
    ORTHOGONALITY_RATIO,
};
use serde::Serialize;

use crate::config::{
    BilateralSection, Check, ConfigError, ExperimentConfig, MinimizeSection, TheorySection,
};

/// Outcome of a subcommand that ran to completion.
#[derive(Debug)]
pub enum Outcome {
    Passed,
    /// An invariant the experiment checks did not hold.
    Failed(String),
}

#[derive(Debug)]
pub enum RunError {
    Config(ConfigError),
    /// The experiment could not run (exit status 1).
    Experiment(String),
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e)
    }
}

impl From<comhe::Error> for RunError {
    fn from(e: comhe::Error) -> Self {
        RunError::Experiment(e.to_string())
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Experiment(format!("i/o: {e}"))
    }
}

fn write_file(out: &Path, name: &str, contents: &str) -> Result<(), RunError> {
    fs::create_dir_all(out)?;
    let mut f = fs::File::create(out.join(name))?;
    f.write_all(contents.as_bytes())?;
    Ok(())
}

fn to_json<T: Serialize + ?Sized>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports always serialize");
    s.push('\n');
    s
}

#[derive(Serialize)]
struct MinimizeSummary {
    seed: u64,
    n: usize,
    dim: usize,
    s: f64,
    objective: String,
    iterations: usize,
    final_energy: f64,
    final_grad_norm: f64,
}

pub fn minimize_cmd(cfg: &ExperimentConfig, sec: &MinimizeSection) -> Result<Outcome, RunError> {
    if sec.restarts == 0 || sec.n < 2 || sec.dim < 2 {
        return Err(ConfigError::new("minimize needs n >= 2, dim >= 2 and restarts >= 1").into());
    }
    let spec = EnergySpec::riesz(sec.s).with_normalized(sec.normalized);
    spec.validate()
        .map_err(|e| ConfigError::new(e.to_string()))?;
    sec.optimizer
        .validate()
        .map_err(|e| ConfigError::new(e.to_string()))?;
    let mut summaries = Vec::with_capacity(sec.restarts);
    for r in 0..sec.restarts as u64 {
        let seed = cfg.seed + r;
        let opt = comhe::minimizer::MinimizeConfig {
            seed,
            ..sec.optimizer.clone()
        };
        let init = random_bank(sec.n, sec.dim, derive_seed(seed, 0x1417, 0))?;
        let (_, trace): (NeuronBank, EnergyTrace) = minimize(&init, &opt, &spec)?;
        let last = *trace.last().expect("trace starts with the initial point");
        let name = if sec.restarts == 1 {
            "minimize_trace.csv".to_string()
        } else {
            format!("minimize_trace_seed{seed}.csv")
        };
        write_file(&cfg.out, &name, &trace.to_csv())?;
        println!(
            "seed {seed}: final energy {:.6} after {} iterations",
            last.energy_full, last.iter
        );
        summaries.push(MinimizeSummary {
            seed,
            n: sec.n,
            dim: sec.dim,
            s: sec.s,
            objective: serde_json::to_value(opt.objective)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default(),
            iterations: last.iter,
            final_energy: last.energy_full,
            final_grad_norm: last.grad_norm,
        });
    }
    write_file(&cfg.out, "minimize_summary.json", &to_json(&summaries))?;
    Ok(Outcome::Passed)
}

pub fn train_cmd(cfg: &ExperimentConfig, overrides: &toml::Table) -> Result<Outcome, RunError> {
    let sec = &cfg.train;
    let base = sec.train_config(overrides, cfg.seed)?;
    let data = make_dataset_with(&sec.dataset)
        .map_err(|e| ConfigError::new(format!("train.dataset: {e}")))?;
    let mlp = MlpSpec::new(data.dim(), &sec.hidden, data.classes)
        .map_err(|e| ConfigError::new(format!("train.hidden: {e}")))?;
    if sec.arms.is_empty() && !sec.rotation {
        return Err(ConfigError::new("train needs at least one arm").into());
    }
    let mut results: Vec<ArmResult> = Vec::new();
    for &arm in &sec.arms {
        let tc = comhe::harness::TrainConfig {
            regularizer: arm,
            ..base.clone()
        };
        results.push(train(&mlp, &tc, &data)?);
    }
    if sec.rotation {
        results.push(train_rotation(&mlp, &base, &data)?);
    }
    for r in &results {
        for run in &r.runs {
            write_file(
                &cfg.out,
                &format!("train_{}_seed{}.csv", r.summary.arm, run.seed),
                &run.trace.to_csv(),
            )?;
        }
        println!(
            "{:>15}: test error {:.4} +- {:.4}, final energy {:.6}",
            r.summary.arm, r.summary.mean_error, r.summary.std_error, r.summary.final_energy_mean
        );
    }
    let summaries: Vec<_> = results.iter().map(|r| r.summary.clone()).collect();
    let mut json = summaries_to_json(&summaries);
    json.push('\n');
    write_file(&cfg.out, "train_summary.json", &json)?;
    Ok(Outcome::Passed)
}

fn orthogonality_check(
    d: usize,
    trials: usize,
    seed: u64,
    sec: &TheorySection,
) -> Result<Record, RunError> {
    let mean = check_orthogonality_with(d, trials, seed, sec.sampling)?;
    let limit = orthogonality_limit(d);
    Ok(Record {
        name: "orthogonality".into(),
        params: [("d".to_string(), d as f64)].into_iter().collect(),
        trials,
        empirical: mean,
        theoretical: limit,
        pass: mean < ORTHOGONALITY_RATIO * limit,
    })
}

pub fn theory_cmd(cfg: &ExperimentConfig, sec: &TheorySection) -> Result<Outcome, RunError> {
    if !(sec.eps > 0.0 && sec.eps < 1.0) || sec.trials == 0 || sec.k == 0 || sec.d < 2 {
        return Err(
            ConfigError::new("theory needs 0 < eps < 1, trials >= 1, k >= 1 and d >= 2").into(),
        );
    }
    let run = |c: Check| sec.which == Check::All || sec.which == c;
    let mut records = Vec::new();
    let seed = cfg.seed;
    if run(Check::Theorem1) {
        records.push(
            check_theorem1_with(
                sec.d,
                sec.k,
                sec.eps,
                sec.angle,
                sec.trials,
                seed,
                sec.sampling,
            )?
            .record(),
        );
    }
    if run(Check::Theorem2) {
        records.push(
            check_theorem2_with(
                sec.d,
                sec.k,
                sec.eps,
                sec.angle,
                sec.trials,
                derive_seed(seed, 2, 0),
                sec.sampling,
            )?
            .record(),
        );
    }
    if run(Check::Jll) {
        let (w1, w2) = unit_pair(sec.d, sec.angle, derive_seed(seed, 3, 0))?;
        records.push(
            check_jll_pair(
                &w1,
                &w2,
                sec.k,
                sec.eps,
                1.0,
                sec.trials,
                derive_seed(seed, 3, 1),
                sec.sampling,
            )?
            .record(),
        );
    }
    if run(Check::Lemma1) {
        records.push(
            check_lemma1_with(
                sec.d,
                sec.k,
                sec.angle,
                sec.trials,
                derive_seed(seed, 4, 0),
                sec.sampling,
            )?
            .record(),
        );
    }
    if run(Check::Orthogonality) {
        records.push(orthogonality_check(
            sec.d,
            sec.trials,
            derive_seed(seed, 5, 0),
            sec,
        )?);
    }
    let mut failures: Vec<String> = records
        .iter()
        .filter(|r| !r.pass)
        .map(|r| r.name.clone())
        .collect();
    if run(Check::Tightness) {
        let rows = tightness_grid(&sec.tightness_eps, &sec.tightness_angles)
            .map_err(|e| ConfigError::new(format!("theory.tightness_eps: {e}")))?;
        let mut csv = String::from("epsilon,angle_deg,lower1,lower2,upper1,upper2,consistent\n");
        for r in &rows {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.epsilon, r.angle_deg, r.lower1, r.lower2, r.upper1, r.upper2, r.consistent
            ));
        }
        write_file(&cfg.out, "tightness.csv", &csv)?;
        let bad = rows.iter().filter(|r| !r.consistent).count();
        println!(
            "tightness: {} grid points, {} inconsistent",
            rows.len(),
            bad
        );
        if bad > 0 {
            failures.push("tightness".into());
        }
    }
    for r in &records {
        println!(
            "{:>14}: empirical {:.6} vs theoretical {:.6} -> {}",
            r.name,
            r.empirical,
            r.theoretical,
            if r.pass { "pass" } else { "FAIL" }
        );
    }
    let mut json = records_to_json(&records);
    json.push('\n');
    write_file(&cfg.out, "theory_report.json", &json)?;
    if failures.is_empty() {
        Ok(Outcome::Passed)
    } else {
        Ok(Outcome::Failed(format!(
            "checks failed: {}",
            failures.join(", ")
        )))
    }
}

/// Tolerances of the two bilateral identities.
pub const PROJECTION_IDENTITY_TOL: f64 = 1e-9;
pub const RECONSTRUCTION_TOL: f64 = 1e-8;

#[derive(Serialize)]
struct BilateralReport {
    m: usize,
    n: usize,
    rank: usize,
    seed: u64,
    projection_error: f64,
    reconstruction_error: f64,
    energy_left: f64,
    energy_right: f64,
    energy_full: f64,
    pass: bool,
}

pub fn bilateral_cmd(cfg: &ExperimentConfig, sec: &BilateralSection) -> Result<Outcome, RunError> {
    if sec.rank == 0 || sec.rank > sec.m.min(sec.n) {
        return Err(ConfigError::new("bilateral.rank must lie in 1..=min(m, n)").into());
    }
    let seed = cfg.seed;
    // Columns of W are neurons.
    let a = gaussian_matrix(sec.m, sec.rank, derive_seed(seed, 0xB1, 0), 1.0);
    let b = gaussian_matrix(sec.rank, sec.n, derive_seed(seed, 0xB1, 1), 1.0);
    let w = a.matmul(&b);
    let bs = BilateralState::new(
        gaussian_matrix(sec.rank, sec.m, derive_seed(seed, 0xB1, 2), 1.0),
        gaussian_matrix(sec.n, sec.rank, derive_seed(seed, 0xB1, 3), 1.0),
        true,
    )?;
    let y1 = bs.p1.matmul(&w);
    let y2 = w.matmul(&bs.p2);
    let rec = lowrank_reconstruct(&bs, &y1, &y2)?;
    let projection_error = bs.p1.matmul(&rec).max_abs_diff(&y1);
    let reconstruction_error = rec.max_abs_diff(&w);
    let spec = EnergySpec::riesz(sec.s)
        .with_half_space(true)
        .with_normalized(true);
    let (energy_left, energy_right) = bilateral_energies(&w, &bs, &spec)?;
    let energy_full = energy(&NeuronBank::new(w.transpose())?, &spec)?;
    let pass =
        projection_error < PROJECTION_IDENTITY_TOL && reconstruction_error < RECONSTRUCTION_TOL;
    let report = BilateralReport {
        m: sec.m,
        n: sec.n,
        rank: sec.rank,
        seed,
        projection_error,
        reconstruction_error,
        energy_left,
        energy_right,
        energy_full,
        pass,
    };
    println!("P1 W~ - Y1: {projection_error:.3e}, W~ - W: {reconstruction_error:.3e}");
    write_file(&cfg.out, "bilateral.json", &to_json(&report))?;
    if pass {
        Ok(Outcome::Passed)
    } else {
        Ok(Outcome::Failed(
            "bilateral reconstruction outside tolerance".into(),
        ))
    }
}

//! Random-projection objective against the plain objective on standalone
//! point sets.

use comhe::minimizer::{minimize, random_bank, MinimizeConfig, Objective};
use comhe::EnergySpec;

/// With N <= d + 1 the full-space minimum is the regular simplex, whose
/// ordered-pair s = 2 energy is N (N - 1) (N - 1) / (2 N).
fn simplex_energy(n: f64) -> f64 {
    n * (n - 1.0) * (n - 1.0) / (2.0 * n)
}

#[test]
fn plain_objective_reaches_the_simplex_and_rp_stays_above_it() {
    let spec = EnergySpec::riesz(2.0);
    let (mut plain, mut rp) = (0.0, 0.0);
    for seed in 0..5u64 {
        let init = random_bank(20, 64, 100 + seed).unwrap();
        let base = MinimizeConfig {
            lr: 0.05,
            max_iters: 300,
            tol: 1e-10,
            seed,
            projected_dim: 8,
            views: 5,
            ..MinimizeConfig::default()
        };
        let (_, tp) = minimize(&init, &base, &spec).unwrap();
        let rp_cfg = MinimizeConfig {
            objective: Objective::Rp,
            ..base
        };
        let (_, tr) = minimize(&init, &rp_cfg, &spec).unwrap();
        plain += tp.last().unwrap().energy_full / 5.0;
        rp += tr.last().unwrap().energy_full / 5.0;
    }
    println!("mean final full-space energy: plain {plain:.6}, rp {rp:.6}");
    assert!((plain - simplex_energy(20.0)).abs() < 1e-6);
    assert!(rp > plain);
}

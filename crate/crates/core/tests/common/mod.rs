//! Oracles shared by several test targets.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use gridveil_core::grid::{build_constraint_blocks, generate, GridCase, Role, VarLayout};
use gridveil_core::pdhg::{grad_primal, lagrangian, AgentState};

pub fn toy() -> GridCase {
    GridCase::from_document(generate::toy_3bus()).unwrap()
}

pub fn bus15() -> GridCase {
    GridCase::from_document(generate::ieee15(generate::BUS15_SEED)).unwrap()
}

pub fn bundled() -> Vec<(&'static str, GridCase)> {
    generate::bundled().into_iter().map(|(n, d)| (n, GridCase::from_document(d).unwrap())).collect()
}

/// Random state strictly inside the settlement branch the gradient assumes.
fn random_state(case: &GridCase, i: usize, rng: &mut ChaCha20Rng) -> (AgentState, Vec<f64>) {
    let b = build_constraint_blocks(case, i).unwrap();
    let mut s = AgentState::zeros(&b);
    for x in s.phi.iter_mut() {
        *x = rng.gen_range(-3.0..3.0);
    }
    let sign = match b.role {
        Role::Buyer => -1.0,
        _ => 1.0,
    };
    for k in b.layout.trades() {
        s.phi[k] = sign * rng.gen_range(0.05..3.0);
    }
    let sum_e: f64 = b.layout.trades().map(|k| s.phi[k]).sum();
    let gap = rng.gen_range(0.1..2.0);
    s.phi[VarLayout::P] = match b.role {
        Role::Buyer => sum_e - gap,
        Role::Seller => sum_e + gap,
        Role::Inactive => s.phi[VarLayout::P],
    };
    for l in s.lambda_a.iter_mut() {
        *l = rng.gen_range(-5.0..5.0);
    }
    for l in s.lambda_b.iter_mut() {
        *l = rng.gen_range(0.0..5.0);
    }
    let foreign = (0..b.n_global()).map(|_| rng.gen_range(-3.0..3.0)).collect();
    (s, foreign)
}

/// Worst relative gap (max-norm) between the analytic primal gradient of the
/// augmented Lagrangian and central differences, over `n` random states.
pub fn gradient_oracle(cases: &[GridCase], n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for t in 0..n {
        let case = &cases[t % cases.len()];
        let i = rng.gen_range(1..=case.n_agents());
        let b = build_constraint_blocks(case, i).unwrap();
        let params = case.params(i);
        let m = &case.document().market;
        let eta = rng.gen_range(0.1..3.0);
        let (s, foreign) = random_state(case, i, &mut rng);
        let rho = b.global_residual(&s.phi, &foreign);
        let g = grad_primal(&b, params, m.omega_b, m.omega_s, eta, &s, &rho).unwrap();
        let l = |st: &AgentState| lagrangian(&b, params, m.omega_b, m.omega_s, eta, st, &foreign);
        let mut err: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for k in 0..s.phi.len() {
            let h = 1e-5 * s.phi[k].abs().max(1.0);
            let (mut up, mut down) = (s.clone(), s.clone());
            up.phi[k] += h;
            down.phi[k] -= h;
            let fd = (l(&up) - l(&down)) / (2.0 * h);
            err = err.max((fd - g[k]).abs());
            scale = scale.max(g[k].abs());
        }
        worst = worst.max(err / scale.max(1.0));
    }
    worst
}

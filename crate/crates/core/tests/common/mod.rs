#![allow(dead_code)]

use std::sync::Arc;

use krflab::class::CohomologyClass;
use krflab::flow::{self, IntegratorSettings, Manufactured, Profile, Scenario};
use krflab::grid::{Backend, PeriodicGrid, RealAxis, ScalarField};
use krflab::herm::C64;
use rand::rngs::StdRng;
use rand::Rng;

pub fn random_hermitian(rng: &mut StdRng, n: usize) -> CohomologyClass {
    let mut m = vec![C64::new(0.0, 0.0); n * n];
    for i in 0..n {
        m[i * n + i] = C64::new(rng.random_range(-2.0..2.0), 0.0);
        for j in i + 1..n {
            let z = C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            m[i * n + j] = z;
            m[j * n + i] = z.conj();
        }
    }
    CohomologyClass::new(n, m).unwrap()
}

pub fn random_psd(rng: &mut StdRng, n: usize) -> CohomologyClass {
    // B B^* is positive semidefinite
    let b: Vec<C64> = (0..n * n)
        .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    let mut m = vec![C64::new(0.0, 0.0); n * n];
    for i in 0..n {
        for j in 0..n {
            m[i * n + j] = (0..n).map(|k| b[i * n + k] * b[j * n + k].conj()).sum();
        }
    }
    for i in 0..n {
        m[i * n + i].im = 0.0;
        for j in i + 1..n {
            m[j * n + i] = m[i * n + j].conj();
        }
    }
    CohomologyClass::new(n, m).unwrap()
}

pub fn permutations(n: usize) -> Vec<(Vec<usize>, f64)> {
    if n == 0 {
        return vec![(vec![], 1.0)];
    }
    let mut out = Vec::new();
    for (p, s) in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            // inserting at `pos` moves the new element past `len - pos` others
            let sign = if (p.len() - pos) % 2 == 0 { s } else { -s };
            out.push((q, sign));
        }
    }
    out
}

/// `D(A_1..A_n) = (1/n!) Σ_{σ,τ} sgn σ sgn τ Π_i A_i[σ(i), τ(i)]`.
pub fn oracle(args: &[&CohomologyClass]) -> f64 {
    let n = args.len();
    let perms = permutations(n);
    let mut total = C64::new(0.0, 0.0);
    for (s, ss) in &perms {
        for (t, ts) in &perms {
            let mut prod = C64::new(ss * ts, 0.0);
            for i in 0..n {
                prod *= args[i].get(s[i], t[i]);
            }
            total += prod;
        }
    }
    total.re / (1..=n).map(|k| k as f64).product::<f64>()
}

/// Max error of the manufactured solution on `n = 2`, `L = diag(1, 0)`,
/// `ω0 = I`, `ρ = exp(0.2 sin x1)` with amplitude 0.1 and fixed-step RK4.
pub fn manufactured_error(res: usize, profile: Profile, dt: f64, t_max: f64) -> f64 {
    let g = PeriodicGrid::new(2, &[RealAxis::X(0)], res, Backend::Spectral).unwrap();
    let l = CohomologyClass::diagonal(&[1.0, 0.0]);
    let w = CohomologyClass::identity(2);
    let m = Manufactured { amplitude: 0.1, profile, axis: RealAxis::X(0) };
    let rho_fn = |x: &[f64]| (0.2 * x[0].sin()).exp();
    let rho = ScalarField::from_fn(g.clone(), rho_fn).unwrap();
    let sc = Scenario::new("manufactured", g, l.clone(), w.clone(), rho)
        .with_t_max(t_max)
        .with_sample_dt(0.1)
        .with_forcing(m.forcing(&l, &w, Arc::new(rho_fn)))
        .with_integrator(IntegratorSettings { fixed_dt: Some(dt), ..Default::default() });
    m.max_error(&flow::run(&sc).unwrap())
}

#![allow(dead_code)]

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use voltmono::case_io::{build_scenario, build_system, load_case};
use voltmono::jacobian::state_derivative;
use voltmono::netmodel::{solve_network, NewtonOptions};
use voltmono::simulator::{apply_event, Scenario};
use voltmono::system::{init_equilibrium, Equilibrium, PowerSystem};

pub type C = Complex<f64>;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("data").join(name)
}

/// Rows of a CSV fixture, header dropped, fields split on commas.
pub fn read_csv(name: &str) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(fixture(name)).unwrap();
    text.lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

pub fn equilibrium(case: &str) -> Equilibrium<f64> {
    let c = load_case(case).unwrap();
    init_equilibrium(&build_system::<f64>(&c).unwrap()).unwrap()
}

pub fn scenario(case: &str, name: &str) -> Scenario<f64> {
    build_scenario(&load_case(case).unwrap(), name).unwrap()
}

/// System with every event up to and including `t` applied.
pub fn system_at(eq: &Equilibrium<f64>, sc: &Scenario<f64>, t: f64) -> PowerSystem<f64> {
    let mut sys = eq.system.clone();
    for e in sc.events.iter().filter(|e| e.time <= t) {
        apply_event(&mut sys, &e.kind).unwrap();
    }
    sys
}

pub fn solve(sys: &PowerSystem<f64>, x: &[f64], guess: &DVector<C>) -> DVector<C> {
    let opts = NewtonOptions { tol: 1e-12, max_iter: 50 };
    solve_network(sys.net.y(), &sys.injection(x), guess, opts).unwrap().v
}

fn step(x: f64) -> f64 {
    1e-6 * x.abs().max(1.0)
}

/// `dV/dx` by central differences of the network solve.
pub fn fd_dvdx(sys: &PowerSystem<f64>, x: &DVector<f64>, v: &DVector<C>) -> DMatrix<C> {
    let n = sys.n_bus();
    let m = x.len();
    let mut out = DMatrix::from_element(n, m, Complex::new(0.0, 0.0));
    for k in 0..m {
        let h = step(x[k]);
        let mut xp = x.clone();
        xp[k] += h;
        let mut xm = x.clone();
        xm[k] -= h;
        let vp = solve(sys, xp.as_slice(), v);
        let vm = solve(sys, xm.as_slice(), v);
        for i in 0..n {
            out[(i, k)] = (vp[i] - vm[i]) / (2.0 * h);
        }
    }
    out
}

/// Jacobian of the state equations along the network constraint by central differences.
pub fn fd_jacobian(sys: &PowerSystem<f64>, x: &DVector<f64>, v: &DVector<C>) -> DMatrix<f64> {
    let m = x.len();
    let mut out = DMatrix::zeros(m, m);
    for k in 0..m {
        let h = step(x[k]);
        let mut xp = x.clone();
        xp[k] += h;
        let mut xm = x.clone();
        xm[k] -= h;
        let fp = state_derivative(sys, xp.as_slice(), &solve(sys, xp.as_slice(), v)).unwrap();
        let fm = state_derivative(sys, xm.as_slice(), &solve(sys, xm.as_slice(), v)).unwrap();
        out.set_column(k, &((fp - fm) / (2.0 * h)));
    }
    out
}

/// Worst per-column relative error of a complex matrix, columns scaled by their largest entry.
pub fn complex_column_error(a: &DMatrix<C>, b: &DMatrix<C>, floor: f64) -> f64 {
    let mut worst = 0.0f64;
    for c in 0..a.ncols() {
        let scale = (0..b.nrows()).fold(floor, |s, r| s.max(b[(r, c)].norm()));
        for r in 0..a.nrows() {
            worst = worst.max((a[(r, c)] - b[(r, c)]).norm() / scale);
        }
    }
    worst
}

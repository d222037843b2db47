//! Comparisons against independently computed reference data in `tests/data`.

mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use voltmono::case_io::{build_system, load_case};
use voltmono::devices::{Device, DeviceModel, PqLoad, SgParams, EMF, EXC};
use voltmono::netmodel::{
    augmented_admittance, build_admittance, impedance_matrix, solve_network, Branch, Bus, BusInjection, BusKind,
    Injection, NewtonOptions,
};
use voltmono::system::power_flow;

fn num(s: &str) -> f64 {
    s.parse().unwrap()
}

#[test]
fn case39_admittance_matches_reference_builder() {
    let sys = build_system::<f64>(&load_case("case39_sg").unwrap()).unwrap();
    let y = sys.net.y_prefault();
    let mut expected = DMatrix::from_element(39, 39, Complex::new(0.0, 0.0));
    for r in read_csv("case39_ybus.csv") {
        let (i, k) = (sys.bus_index(num(&r[0]) as u32).unwrap(), sys.bus_index(num(&r[1]) as u32).unwrap());
        expected[(i, k)] += Complex::new(num(&r[2]), num(&r[3]));
    }
    for i in 0..39 {
        for k in 0..39 {
            let d = (y[(i, k)] - expected[(i, k)]).norm();
            assert!(d <= 1e-12 * expected[(i, k)].norm().max(1.0), "Y[{i},{k}] differs by {d}");
        }
    }
}

#[test]
fn case39_power_flow_and_equilibrium_match_reference() {
    let sys = build_system::<f64>(&load_case("case39_sg").unwrap()).unwrap();
    let v = power_flow(&sys).unwrap();
    let eq = equilibrium("case39_sg");
    for r in read_csv("case39_pf.csv") {
        let i = sys.bus_index(num(&r[0]) as u32).unwrap();
        let (vm, va) = (num(&r[1]), num(&r[2]).to_radians());
        assert!((v[i].norm() - vm).abs() <= 1e-6, "bus {}: {} vs {vm}", r[0], v[i].norm());
        assert!((v[i].arg() - va).abs() <= 1e-6, "bus {} angle", r[0]);
        assert!((eq.v[i].norm() - vm).abs() <= 1e-6, "equilibrium bus {}", r[0]);
    }
}

fn desk_machine(xd: f64, xd_p: f64, xq: f64) -> SgParams<f64> {
    SgParams {
        xd,
        xq,
        xd_p,
        td0_p: 8.0,
        ka: 50.0,
        ta: 0.05,
        h: 3.5,
        d: 7.0,
        omega_b: 2.0 * std::f64::consts::PI * 60.0,
        v_ref: 1.02,
        p_m: 0.55,
    }
}

struct TwoBus {
    dev: Device<f64>,
    x: [f64; 4],
    load: PqLoad<f64>,
}

impl Injection<f64> for TwoBus {
    fn eval(&self, v: &DVector<C>, out: &mut [BusInjection<f64>]) {
        out[0] = self.dev.injection(&self.x, v[0]);
        out[1] = self.load.injection(v[1]);
    }
}

fn two_bus_setup() -> (DMatrix<C>, TwoBus) {
    let buses = vec![
        Bus { number: 0, base_kv: 1.0, kind: BusKind::Slack },
        Bus { number: 1, base_kv: 1.0, kind: BusKind::Load },
    ];
    let net =
        build_admittance(buses, vec![Branch { from: 0, to: 1, r: 0.0, x: 0.5, b_shunt: 0.0, tap: 1.0 }], &[]).unwrap();
    let dev = Device { bus: 0, model: DeviceModel::Sg(desk_machine(1.8, 0.3, 1.7)) };
    let inj = TwoBus { dev, x: [0.2, 0.0, 1.05, 0.0], load: PqLoad { bus: 1, s: Complex::new(0.5, 0.2), v_min: 0.0 } };
    (net.y().clone(), inj)
}

#[test]
fn two_bus_network_solve_matches_grid_search() {
    // the case has two roots; start on the operable branch, away from the reference point
    let (y, inj) = two_bus_setup();
    let v0 = DVector::from_vec(vec![Complex::new(0.95, -0.2), Complex::new(0.7, -0.4)]);
    let sol = solve_network(&y, &inj, &v0, NewtonOptions::for_type::<f64>()).unwrap();
    for r in read_csv("two_bus_v.csv") {
        let i = num(&r[0]) as usize;
        let want = Complex::new(num(&r[1]), num(&r[2]));
        assert!((sol.v[i] - want).norm() <= 1e-8, "bus {i}: {} vs {want}", sol.v[i]);
    }
}

#[test]
fn two_bus_impedance_matches_direct_inverse() {
    let (y, inj) = two_bus_setup();
    let ya = augmented_admittance(&y, &[inj.dev.shunt_term(), Complex::new(0.0, 0.0)]).unwrap();
    let z = impedance_matrix(&ya).unwrap().z;
    let det = ya[(0, 0)] * ya[(1, 1)] - ya[(0, 1)] * ya[(1, 0)];
    let inv = [[ya[(1, 1)] / det, -ya[(0, 1)] / det], [-ya[(1, 0)] / det, ya[(0, 0)] / det]];
    for i in 0..2 {
        for k in 0..2 {
            assert!((z[(i, k)] - inv[i][k]).norm() <= 1e-12);
        }
    }
}

#[test]
fn single_machine_shunt_shift() {
    let dev = Device { bus: 0, model: DeviceModel::Sg(desk_machine(1.8, 0.3, 1.7)) };
    let want = Complex::new(0.0, 0.5 * (1.0 / 1.7 + 1.0 / 0.3));
    let y = DMatrix::from_element(1, 1, Complex::new(0.0, 0.0));
    let ya = augmented_admittance(&y, &[dev.shunt_term()]).unwrap();
    assert!((ya[(0, 0)] + want).norm() < 1e-15);
}

#[test]
fn machine_derivative_and_partials_match_symbolic_reference() {
    let dev = Device { bus: 0, model: DeviceModel::Sg(desk_machine(1.8, 0.3, 1.7)) };
    let x = [0.41, 0.003, 1.12, 1.9];
    let v = Complex::from_polar(0.97, 0.13);
    let p = dev.partials(&x, v).unwrap();
    let rows = read_csv("sg_desk.csv");
    for r in rows.iter().filter(|r| r[0] != "g") {
        let i: usize = r[0].parse().unwrap();
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs().max(1.0);
        assert!(close(p.f[i], num(&r[1])), "f[{i}] {} vs {}", p.f[i], r[1]);
        for s in 0..4 {
            assert!(close(p.df_dx[i][s], num(&r[2 + s])), "df[{i}]/dx[{s}]");
        }
        let dv = Complex::new(num(&r[6]), num(&r[7]));
        assert!(close(p.df_dv[i].re, dv.re) && close(p.df_dv[i].im, dv.im), "df[{i}]/dV {} vs {dv}", p.df_dv[i]);
    }
    let g = rows.iter().find(|r| r[0] == "g").unwrap();
    let want = Complex::new(num(&g[1]), num(&g[2]));
    assert!((p.inj.g - want).norm() <= 1e-10, "{} vs {want}", p.inj.g);
}

#[test]
fn smib_equilibrium_matches_closed_form() {
    let eq = equilibrium("smib");
    let (p, q, x, v1) = (0.5f64, 0.2f64, 0.5f64, 1.0f64);
    let b = v1 * v1 - 2.0 * q * x;
    let v2m = ((b + (b * b - 4.0 * x * x * (p * p + q * q)).sqrt()) / 2.0).sqrt();
    let th2 = -(p * x / (v1 * v2m)).asin();
    let vg = Complex::new(v1, 0.0);
    let vl = Complex::from_polar(v2m, th2);
    let i = (vg - vl) / Complex::new(0.0, x);
    let (xd, xd_p, xq, ka) = (1.8, 0.3, 1.7, 50.0);
    let e_q = vg + Complex::new(0.0, xq) * i;
    let delta = e_q.arg();
    let rot = Complex::from_polar(1.0, -delta);
    let vq = (vg * rot).re;
    let i_d = (i * rot * Complex::new(0.0, 1.0)).re;
    let eqp = vq + xd_p * i_d;
    let efd = eqp + (xd - xd_p) * i_d;
    assert!((eq.v[0].norm() - v1).abs() < 1e-8);
    assert!((eq.v[1].norm() - v2m).abs() < 1e-8);
    // the equilibrium is rotated, so compare angles relative to the machine bus
    assert!(((eq.v[1] / eq.v[0]).arg() - th2).abs() < 1e-8);
    assert!((eq.x[0] - eq.v[0].arg() - delta).abs() < 1e-8);
    assert!((eq.x[EMF] - eqp).abs() < 1e-8, "{} vs {eqp}", eq.x[EMF]);
    assert!((eq.x[EXC] - efd).abs() < 1e-8);
    assert!((eq.system.devices[0].v_ref() - (v1 + efd / ka)).abs() < 1e-8);
}

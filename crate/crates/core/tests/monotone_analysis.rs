//! Monotonicity verdicts, regimes and load-shedding scans on the bundled cases.

mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use voltmono::case_io::{build_system, load_case};
use voltmono::devices::DeviceModel;
use voltmono::jacobian::{jacobian_at, reference_input_matrix, SensitivityMethod};
use voltmono::monotone::{
    check_theorem1, classify_regime, gershgorin_certificate, upsilon_scan, variation_positivity, Regime, Verdict,
};
use voltmono::simulator::{run, EventKind, RunOptions, Scenario};
use voltmono::system::{init_equilibrium, Equilibrium};

/// Equilibrium with every exciter gain multiplied by `scale`.
fn scaled_equilibrium(case: &str, scale: f64) -> Equilibrium<f64> {
    let mut sys = build_system::<f64>(&load_case(case).unwrap()).unwrap();
    for d in &mut sys.devices {
        match &mut d.model {
            DeviceModel::Sg(p) => p.ka *= scale,
            DeviceModel::Gfm(p) => p.ku *= scale,
        }
    }
    init_equilibrium(&sys).unwrap()
}

fn verdict_at_equilibrium(eq: &Equilibrium<f64>) -> Verdict {
    let rep = jacobian_at(&eq.system, eq.x.as_slice(), &eq.v, SensitivityMethod::Exact, 0.0).unwrap();
    check_theorem1(&rep.j_reduced, &reference_input_matrix(&eq.system), &rep.dvmag_de, 1e-9).verdict
}

#[test]
fn low_gains_are_monotone_and_high_gains_are_not() {
    for scale in [0.01, 0.25] {
        let v = verdict_at_equilibrium(&scaled_equilibrium("case39_gfm", scale));
        assert_eq!(v, Verdict::InputStateOutputMonotone, "scale {scale}");
    }
    for scale in [2.0, 4.0] {
        let v = verdict_at_equilibrium(&scaled_equilibrium("case39_gfm", scale));
        assert_eq!(v, Verdict::Competitive, "scale {scale}");
    }
}

#[test]
fn very_low_gains_are_cooperative() {
    for case in ["case39_sg", "case39_gfm"] {
        let eq = scaled_equilibrium(case, 0.01);
        let j = jacobian_at(&eq.system, eq.x.as_slice(), &eq.v, SensitivityMethod::Exact, 0.0).unwrap().j_reduced;
        assert_eq!(classify_regime(&j, 0.0).regime, Regime::Cooperative, "{case}");
    }
}

#[test]
fn converter_case_regime_is_stable_along_a_reference_step() {
    let eq = equilibrium("case39_gfm");
    let j0 = jacobian_at(&eq.system, eq.x.as_slice(), &eq.v, SensitivityMethod::Exact, 0.0).unwrap().j_reduced;
    let at_rest = classify_regime(&j0, 0.0).regime;
    let mut sc = scenario("case39_gfm", "vref_raise");
    sc.jacobian_stride = 100;
    let ts = run(&eq, &sc, RunOptions::default()).unwrap();
    assert!(ts.jacobians.len() > 40);
    for s in &ts.jacobians {
        assert_eq!(classify_regime(&s.j_reduced, 0.0).regime, at_rest, "t {}", s.t);
    }
}

#[test]
fn converter_case_reduced_jacobian_is_row_dominant_and_certified() {
    let eq = equilibrium("case39_gfm");
    let j = jacobian_at(&eq.system, eq.x.as_slice(), &eq.v, SensitivityMethod::Exact, 0.0).unwrap().j_reduced;
    let cert = gershgorin_certificate(&j);
    assert!(cert.certified_stable);
    assert!(cert.spectral_abscissa < 0.0);
    for (i, d) in cert.discs.iter().enumerate() {
        assert!(d.radius < d.center.abs(), "row {i}");
    }
}

#[test]
fn reference_bump_variation_stays_positive_at_low_gain() {
    let eq = scaled_equilibrium("case39_gfm", 0.1);
    let bus = eq.system.bus_index(30).unwrap();
    let k = eq.system.device_at(bus).unwrap();
    let mut sc = Scenario::new("bump", 5.0, 0.001).with_event(1.0, EventKind::VrefStep { bus, delta: 0.05 });
    sc.jacobian_stride = 20;
    let ts = run(&eq, &sc, RunOptions::default()).unwrap();
    assert!(ts.completed());
    let times: Vec<f64> = ts.jacobians.iter().map(|s| s.t).collect();
    let dfdx: Vec<DMatrix<f64>> = ts.jacobians.iter().map(|s| s.j_reduced.clone()).collect();
    let b = reference_input_matrix(&eq.system);
    let dfdv = vec![b; times.len()];
    let p = eq.system.devices.len();
    let mut dv = DVector::zeros(p);
    dv[k] = 0.05;
    let r = variation_positivity(&times, &dfdx, &dfdv, &dv, &DVector::zeros(p), 1e-8);
    assert!(r.positive, "min component {}", r.min_component);
    assert!(r.dx.last().unwrap()[k] > 0.0);
}

#[test]
fn equal_sheds_give_zero_homotopy_derivative() {
    let eq = equilibrium("smib");
    let bus = eq.system.bus_index(2).unwrap();
    let shed = Complex::new(0.0, 0.1);
    let samples: Vec<f64> = (0..=10).map(|k| k as f64 * 0.1).collect();
    let scan = upsilon_scan(&eq, &Scenario::new("s", 1.0, 0.001), bus, shed, shed, &samples, 10, &[bus]).unwrap();
    for per_t in &scan.detail[0] {
        for &u in per_t {
            assert!(u.abs() <= 1e-9, "{u:e}");
        }
    }
    assert_eq!(scan.sigma_grid.len(), 11);
}

#[test]
fn initial_homotopy_derivative_matches_the_network_response() {
    // at t = 0 both runs share the state, so the integral of the derivative over sigma
    // is the voltage difference between the two shed levels
    let eq = equilibrium("smib");
    let bus = eq.system.bus_index(2).unwrap();
    let (hi, lo) = (Complex::new(0.0, 0.1), Complex::new(0.0, 0.05));
    let steps = 40;
    let scan = upsilon_scan(&eq, &Scenario::new("s", 0.1, 0.001), bus, hi, lo, &[0.0], steps, &[bus]).unwrap();
    let u = &scan.detail[0][0];
    assert!(u.iter().all(|&x| x > 0.0));
    let h = 1.0 / steps as f64;
    let integral = h * (u.iter().sum::<f64>() - 0.5 * (u[0] + u[steps]));
    let vm = |shed: Complex<f64>| {
        let mut sys = eq.system.clone();
        let l = sys.loads.iter().position(|l| l.bus == bus).unwrap();
        sys.loads[l].s -= shed;
        solve(&sys, eq.x.as_slice(), &eq.v)[bus].norm()
    };
    let diff = vm(hi) - vm(lo);
    assert!(diff > 0.0);
    assert!((integral - diff).abs() <= 1e-4 * diff, "{integral} vs {diff}");
}

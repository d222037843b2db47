//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

mod common;

use std::process::Command;
use std::time::{Duration, Instant};

use common::*;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use proptest::prelude::Rng;
use proptest::test_runner::{RngAlgorithm, TestRng};
use voltmono::case_io::{build_system, bundled_case_text, load_case, parse_case_text, serialize_case, BUNDLED};
use voltmono::devices::DeviceModel;
use voltmono::jacobian::{column_relative_error, jacobian_at, reference_input_matrix, SensitivityMethod};
use voltmono::monotone::{
    check_theorem1, gershgorin_certificate, match_voltage_template, ordering_check, upsilon_from_runs, Verdict,
};
use voltmono::simulator::{run, run_linear_demo, LinearDemo, RunOptions, Scenario, TimeSeries};
use voltmono::system::{init_equilibrium, Equilibrium, PowerSystem};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn all(parts: Vec<Outcome>) -> Outcome {
    let pass = parts.iter().all(|o| o.pass);
    let detail = parts
        .iter()
        .map(|o| format!("{}{}", if o.pass { "" } else { "[failed] " }, o.detail))
        .collect::<Vec<_>>()
        .join("; ");
    outcome(pass, detail)
}

fn linear_demo() -> Outcome {
    let start = Instant::now();
    let (dt, t_end) = (0.01, 60.0);
    let (lo, hi) = (run_linear_demo::<f64>(1.0, dt, t_end), run_linear_demo::<f64>(2.0, dt, t_end));
    let mut worst = f64::NEG_INFINITY;
    for i in 0..lo.times.len() {
        for s in 0..3 {
            worst = worst.max(lo.states[i][s] - hi.states[i][s]);
        }
        worst = worst.max(lo.output[i] - hi.output[i]);
    }
    let a = LinearDemo::a::<f64>();
    let b = LinearDemo::b::<f64>();
    let x_inf = -a.lu().solve(&b).unwrap();
    let last = lo.states.last().unwrap();
    let ss = (0..3).fold(0.0f64, |m, s| m.max((last[s] - x_inf[s]).abs()));
    let elapsed = start.elapsed();
    all(vec![
        outcome(worst <= 1e-9, format!("max(lo - hi) = {worst:e}")),
        outcome(ss <= 1e-9, format!("steady-state error {ss:e}")),
        outcome(elapsed < Duration::from_secs(1), format!("runtime {elapsed:.2?}")),
    ])
}

type Mutant = (String, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>);

fn theorem_checker() -> Outcome {
    let (a, b, c) = (LinearDemo::a::<f64>(), LinearDemo::b::<f64>(), LinearDemo::c::<f64>());
    let base = check_theorem1(&a, &b, &c, 0.0).verdict;
    // every qualifying entry: negated when nonzero, set to -1 when zero
    let flip = |x: f64| if x == 0.0 { -1.0 } else { -x };
    let mut mutants: Vec<Mutant> = Vec::new();
    for r in 0..3 {
        for k in (0..3).filter(|&k| k != r) {
            let mut m = a.clone();
            m[(r, k)] = flip(m[(r, k)]);
            mutants.push((format!("A[{r},{k}]"), m, b.clone(), c.clone()));
        }
        let mut m = b.clone();
        m[(r, 0)] = flip(m[(r, 0)]);
        mutants.push((format!("b[{r}]"), a.clone(), m, c.clone()));
        let mut m = c.clone();
        m[(0, r)] = flip(m[(0, r)]);
        mutants.push((format!("c[{r}]"), a.clone(), b.clone(), m));
    }
    let missed: Vec<&str> = mutants
        .iter()
        .filter(|(_, a, b, c)| check_theorem1(a, b, c, 0.0).verdict == Verdict::InputStateOutputMonotone)
        .map(|(n, ..)| n.as_str())
        .collect();
    all(vec![
        outcome(base == Verdict::InputStateOutputMonotone, format!("verdict {}", base.as_str())),
        outcome(
            missed.is_empty(),
            format!("{} of {} mutations detected {missed:?}", mutants.len() - missed.len(), mutants.len()),
        ),
    ])
}

type Point = (PowerSystem<f64>, DVector<f64>, DVector<C>);

fn points(case: &str, sc_name: &str, times: &[f64]) -> Vec<Point> {
    let eq = equilibrium(case);
    let mut sc = scenario(case, sc_name);
    sc.jacobian_stride = 0;
    let ts = run(&eq, &sc, RunOptions::default()).unwrap();
    let mut out = vec![(eq.system.clone(), eq.x.clone(), eq.v.clone())];
    for &t in times {
        let i = (t / sc.dt).round() as usize;
        out.push((system_at(&eq, &sc, t), ts.states[i].clone(), ts.voltages[i].clone()));
    }
    out
}

fn derivative_pipeline() -> Outcome {
    let mut parts = Vec::new();
    for (case, sc, times) in [
        ("smib", "vref_step", [0.2, 0.3, 0.6, 1.0, 1.9]),
        ("case39_sg", "fault_short", [0.12, 0.2, 0.5, 1.0, 2.5]),
        ("case39_gfm", "fault_short", [0.12, 0.2, 0.5, 1.0, 2.5]),
    ] {
        let start = Instant::now();
        let (mut ev, mut ej) = (0.0f64, 0.0f64);
        for (sys, x, v) in points(case, sc, &times) {
            let rep = jacobian_at(&sys, x.as_slice(), &v, SensitivityMethod::Exact, 0.0).unwrap();
            let fv = fd_dvdx(&sys, &x, &v);
            let floor = 1e-5 * fv.iter().fold(0.0f64, |m, z| m.max(z.norm()));
            ev = ev.max(complex_column_error(&rep.dvdx, &fv, floor));
            let fj = fd_jacobian(&sys, &x, &v);
            ej = ej.max(column_relative_error(&rep.j_full, &fj, 1e-5 * fj.amax()));
        }
        let elapsed = start.elapsed();
        parts.push(outcome(
            ev <= 1e-4 && ej <= 1e-4 && elapsed < Duration::from_secs(120),
            format!("{case}: dV/dx {ev:.1e}, J {ej:.1e}, {elapsed:.1?}"),
        ));
    }
    all(parts)
}

fn constant_blocks() -> Outcome {
    let mut bad = 0usize;
    let mut checked = 0usize;
    for case in ["case39_sg", "case39_gfm"] {
        for (sys, x, v) in points(case, "fault_short", &[0.12, 0.2, 0.5, 1.0, 2.5]) {
            let j = jacobian_at(&sys, x.as_slice(), &v, SensitivityMethod::Exact, 0.0).unwrap().j_full;
            for (k, d) in sys.devices.iter().enumerate() {
                let (e, f) = (PowerSystem::<f64>::emf_index(k), PowerSystem::<f64>::exc_index(k));
                let ok = match d.model {
                    DeviceModel::Sg(p) => j[(f, f)] == -1.0 / p.ta && j[(e, f)] == 1.0 / p.td0_p,
                    DeviceModel::Gfm(p) => j[(f, f)] == -1.0 / p.tw,
                };
                checked += 1;
                bad += usize::from(!ok);
            }
        }
    }
    outcome(bad == 0, format!("{} of {checked} device blocks exact", checked - bad))
}

fn template_fraction(ts: &TimeSeries<f64>, window: (f64, f64)) -> (f64, usize) {
    let p = ts.system.devices.len();
    let inside: Vec<bool> = ts
        .jacobians
        .iter()
        .filter(|j| j.t >= window.0 - 1e-9 && j.t <= window.1 + 1e-9)
        .map(|j| match_voltage_template(&j.j_full, p, 1e-6, j.t).matches)
        .collect();
    (inside.iter().filter(|&&m| m).count() as f64 / inside.len().max(1) as f64, inside.len())
}

fn sign_pattern() -> Outcome {
    let fault = |case: &str, name: &str| {
        let ts = run(&equilibrium(case), &scenario(case, name), RunOptions::default()).unwrap();
        assert!(ts.completed(), "{case} {name}: {:?}", ts.error);
        ts
    };
    let short = fault("case39_sg", "fault_short");
    let (f_short, n_short) = template_fraction(&short, (0.0, 3.0));
    let long = fault("case39_sg", "fault_long");
    let (f_long, n_long) = template_fraction(&long, (0.25, 1.25));
    let gfm = fault("case39_gfm", "fault_short");
    let (f_gfm, n_gfm) = template_fraction(&gfm, (0.0, 3.0));
    all(vec![
        outcome(f_short >= 0.99, format!("Case1 0.06 s: {:.1}% of {n_short}", 100.0 * f_short)),
        outcome(f_long < 0.90, format!("Case1 0.15 s swing window: {:.1}% of {n_long}", 100.0 * f_long)),
        outcome(f_gfm >= 0.99, format!("Case2 0.06 s: {:.1}% of {n_gfm}", 100.0 * f_gfm)),
    ])
}

fn gfm_gain_anchor() -> Outcome {
    let eq = equilibrium("case39_gfm");
    let b = reference_input_matrix(&eq.system);
    let gains: Vec<(f64, f64)> = eq
        .system
        .devices
        .iter()
        .enumerate()
        .filter(|(_, d)| !d.is_sg())
        .map(|(k, d)| (d.reference_gain(), b[(k, k)]))
        .collect();
    let ok = !gains.is_empty() && gains.iter().all(|&(g, bk)| g == 10.0 && bk == 10.0);
    outcome(ok, format!("K_u/K_i and reference input for {} converters: {:?}", gains.len(), gains.first()))
}

fn reference_step() -> Outcome {
    let eq = equilibrium("case39_gfm");
    let go = |n: &str| run(&eq, &scenario("case39_gfm", n), RunOptions::default()).unwrap();
    let (base, pulse, raise) = (go("base"), go("vref_pulse"), go("vref_raise"));
    let signals = ["vm@30".to_string(), "evir@30".to_string()];
    let up = ordering_check(&pulse, &base, &signals, 1e-6, (1.0, 3.0)).unwrap();
    let down = ordering_check(&raise, &pulse, &signals, 1e-6, (3.0, 5.0)).unwrap();
    all(vec![
        outcome(up.holds, format!("stepped >= base on [1,3], worst {:.1e}", up.worst_violation)),
        outcome(down.holds, format!("raised >= stepped on [3,5], worst {:.1e}", down.worst_violation)),
    ])
}

fn load_shed_scan() -> Outcome {
    let eq = equilibrium("case39_gfm");
    let bus = eq.system.bus_index(4).unwrap();
    let load = eq.system.loads.iter().find(|l| l.bus == bus).unwrap().s;
    let go = |n: &str| run(&eq, &scenario("case39_gfm", n), RunOptions::default()).unwrap();
    let (r200, r100) = (go("shed_200"), go("shed_100"));
    let samples: Vec<f64> = (0..=20).map(|k| k as f64 * 0.1).collect();
    let (hi, lo) = (Complex::new(0.0, 2.0), Complex::new(0.0, 1.0));
    let scan = |steps| upsilon_from_runs(&eq, &r200, &r100, bus, hi, lo, &samples, steps, &[bus]).unwrap();
    let (s20, s40) = (scan(20), scan(40));
    let change = (s40.min_value - s20.min_value).abs() / s20.min_value.abs();
    all(vec![
        outcome(load == Complex::new(5.0, 4.0), format!("bus-4 load {load}")),
        outcome(s20.min_value > 0.0, format!("min Upsilon' {:.4e}", s20.min_value)),
        outcome(change < 0.01, format!("refinement change {:.2e}", change)),
    ])
}

fn uniform(rng: &mut TestRng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

fn gershgorin() -> Outcome {
    let eq = equilibrium("case39_gfm");
    let j = jacobian_at(&eq.system, eq.x.as_slice(), &eq.v, SensitivityMethod::Exact, 0.0).unwrap().j_reduced;
    let quiescent = gershgorin_certificate(&j);
    let base = build_system::<f64>(&load_case("case39_gfm").unwrap()).unwrap();
    let mut rng = TestRng::deterministic_rng(RngAlgorithm::ChaCha);
    let (mut certified, mut unsound, mut failed) = (0usize, 0usize, 0usize);
    for _ in 0..100 {
        let mut sys = base.clone();
        for d in &mut sys.devices {
            match &mut d.model {
                DeviceModel::Sg(p) => {
                    p.ka *= uniform(&mut rng, 0.5, 1.5);
                    p.td0_p *= uniform(&mut rng, 0.8, 1.2);
                }
                DeviceModel::Gfm(p) => {
                    p.ku *= uniform(&mut rng, 0.5, 1.5);
                    p.xl *= uniform(&mut rng, 0.8, 1.2);
                }
            }
        }
        let Ok(eq) = init_equilibrium(&sys) else {
            failed += 1;
            continue;
        };
        let j = jacobian_at(&eq.system, eq.x.as_slice(), &eq.v, SensitivityMethod::Exact, 0.0).unwrap().j_reduced;
        let c = gershgorin_certificate(&j);
        if c.certified_stable {
            certified += 1;
            unsound += usize::from(c.spectral_abscissa >= 0.0);
        }
    }
    all(vec![
        outcome(
            quiescent.certified_stable && quiescent.spectral_abscissa < 0.0,
            format!("quiescent certified, abscissa {:.3}", quiescent.spectral_abscissa),
        ),
        outcome(
            certified > 0 && unsound == 0 && failed == 0,
            format!("{certified} of 100 perturbed cases certified, {unsound} unsound, {failed} not initialised"),
        ),
    ])
}

fn reduction_gap(eq: &Equilibrium<f64>, sc: &Scenario<f64>) -> f64 {
    let full = run(eq, sc, RunOptions::default()).unwrap();
    let red = run(eq, sc, RunOptions { reduced: true, ..RunOptions::default() }).unwrap();
    let mut gap = 0.0f64;
    for (a, b) in full.states.iter().zip(&red.states) {
        for k in 0..eq.system.devices.len() {
            let e = PowerSystem::<f64>::emf_index(k);
            gap = gap.max((a[e] - b[e]).abs());
        }
    }
    gap
}

fn tikhonov() -> Outcome {
    let case = load_case("case39_sg").unwrap();
    let mut sc = scenario("case39_sg", "vref_small");
    sc.jacobian_stride = 0;
    let gaps: Vec<f64> = [1.0, 0.3, 0.1]
        .iter()
        .map(|&s| {
            let mut sys = build_system::<f64>(&case).unwrap();
            for d in &mut sys.devices {
                if let DeviceModel::Sg(p) = &mut d.model {
                    p.ta *= s;
                }
            }
            reduction_gap(&init_equilibrium(&sys).unwrap(), &sc)
        })
        .collect();
    outcome(
        gaps[0] > gaps[1] && gaps[1] > gaps[2],
        format!("sup gaps {:.3e}, {:.3e}, {:.3e}", gaps[0], gaps[1], gaps[2]),
    )
}

fn sensitivity_structure() -> Outcome {
    let eq = equilibrium("case39_sg");
    let d = jacobian_at(&eq.system, eq.x.as_slice(), &eq.v, SensitivityMethod::Exact, 0.0).unwrap().dvmag_de;
    let min = d.min();
    let p = eq.system.devices.len();
    let dominant = (0..p)
        .filter(|&k| {
            let row = eq.system.devices[k].bus;
            let off: f64 = (0..p).filter(|&c| c != k).map(|c| d[(row, c)].abs()).sum();
            d[(row, k)].abs() >= off
        })
        .count();
    all(vec![
        outcome(min >= -1e-9, format!("min entry {min:.3e}")),
        outcome(dominant == p, format!("{dominant} of {p} device rows diagonally dominant")),
    ])
}

fn cli(args: &[&str], out: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let r = Command::new(env!("CARGO_BIN_EXE_voltmono")).args(args).arg("--out").arg(out).output().unwrap();
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(out)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    files.push(("stdout".into(), r.stdout));
    files.sort();
    files
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let invocations: [&[&str]; 3] = [
        &["simulate", "--case", "case39_gfm", "--scenario", "vref_raise"],
        &["jacobian", "--case", "case39_sg", "--scenario", "fault_short", "--at", "0.5"],
        &["signpattern", "--case", "smib", "--scenario", "vref_step", "--eps", "1e-6"],
    ];
    let identical = invocations.iter().filter(|args| cli(args, &out) == cli(args, &out)).count();
    let round_trips = BUNDLED
        .iter()
        .filter(|name| {
            let parsed = parse_case_text(bundled_case_text(name).unwrap()).unwrap();
            let text = serialize_case(&parsed);
            let again = parse_case_text(&text).unwrap();
            again == parsed && serialize_case(&again) == text
        })
        .count();
    all(vec![
        outcome(
            identical == invocations.len(),
            format!("{identical} of {} invocations byte-identical", invocations.len()),
        ),
        outcome(round_trips == BUNDLED.len(), format!("{round_trips} of {} cases round-trip", BUNDLED.len())),
    ])
}

fn main() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 12] = [
        ("linear demo ordering and steady state", linear_demo),
        ("monotonicity checker and mutations", theorem_checker),
        ("derivative pipeline vs finite differences", derivative_pipeline),
        ("constant exciter blocks", constant_blocks),
        ("Jacobian sign pattern along fault runs", sign_pattern),
        ("converter reference gain", gfm_gain_anchor),
        ("reference-step ordering", reference_step),
        ("load-shedding homotopy scan", load_shed_scan),
        ("Gershgorin certificate", gershgorin),
        ("singular-perturbation reduction", tikhonov),
        ("voltage-magnitude sensitivity structure", sensitivity_structure),
        ("determinism and case round trip", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = f();
        failed += usize::from(!o.pass);
        println!(
            "{} {:>2} {name}: {} ({:.1?})",
            if o.pass { "PASS" } else { "FAIL" },
            i + 1,
            o.detail,
            start.elapsed()
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

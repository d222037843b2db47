//! Monotone-systems analysis: sign patterns, cooperativity verdicts,
//! stability certificates, trajectory ordering and the load-shedding
//! homotopy scan.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;

use crate::jacobian::{assemble_abc, voltage_sensitivity, SensitivityMethod};
use crate::netmodel::{solve_network, NewtonOptions};
use crate::scalar::{cabs, Cx, Real};
use crate::simulator::{run, EventKind, RunOptions, Scenario, SimError, TimeSeries};
use crate::system::{Equilibrium, PowerSystem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sign {
    Neg,
    Zero,
    Pos,
}

impl Sign {
    pub fn symbol(self) -> char {
        match self {
            Sign::Neg => '-',
            Sign::Zero => '0',
            Sign::Pos => '+',
        }
    }

    fn of(x: f64, eps: f64) -> Sign {
        if x > eps {
            Sign::Pos
        } else if x < -eps {
            Sign::Neg
        } else {
            Sign::Zero
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignMatrix {
    pub signs: DMatrix<Sign>,
    pub eps_abs: f64,
    pub source_time: f64,
}

impl SignMatrix {
    pub fn render(&self) -> String {
        let mut s = String::new();
        for r in 0..self.signs.nrows() {
            for c in 0..self.signs.ncols() {
                s.push(self.signs[(r, c)].symbol());
            }
            s.push('\n');
        }
        s
    }
}

/// Entrywise signs with threshold `eps_rel * max|m_ij|`.
pub fn sign_pattern<T: Real>(m: &DMatrix<T>, eps_rel: f64, t: f64) -> SignMatrix {
    let scale = m.iter().fold(0.0f64, |a, x| a.max(x.as_f64().abs()));
    let eps = eps_rel * scale;
    SignMatrix { signs: m.map(|x| Sign::of(x.as_f64(), eps)), eps_abs: eps, source_time: t }
}

/// Voltage subsystem of a full Jacobian, ordered `[exciter states; internal voltages]`.
pub fn voltage_subsystem<T: Real>(j_full: &DMatrix<T>, n_devices: usize) -> DMatrix<T> {
    let idx: Vec<usize> = (0..n_devices)
        .map(PowerSystem::<T>::exc_index)
        .chain((0..n_devices).map(PowerSystem::<T>::emf_index))
        .collect();
    DMatrix::from_fn(idx.len(), idx.len(), |r, c| j_full[(idx[r], idx[c])])
}

/// Expected block signs of the voltage subsystem, as `(diagonal, off-diagonal)` per block
/// in the order `[[exc/exc, exc/emf], [emf/exc, emf/emf]]`.
pub const VOLTAGE_TEMPLATE: [[(Sign, Sign); 2]; 2] =
    [[(Sign::Neg, Sign::Zero), (Sign::Neg, Sign::Neg)], [(Sign::Pos, Sign::Zero), (Sign::Neg, Sign::Pos)]];

#[derive(Debug, Clone, PartialEq)]
pub struct TemplateMismatch {
    pub row: usize,
    pub col: usize,
    pub expected: Sign,
    pub actual: Sign,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemplateMatch {
    pub t: f64,
    pub matches: bool,
    pub mismatches: Vec<TemplateMismatch>,
    pub signs: SignMatrix,
}

/// Compare the voltage subsystem with [`VOLTAGE_TEMPLATE`].
///
/// Structural zeros must be zero and diagonals must carry the template sign;
/// other off-diagonal entries may vanish but must not take the opposite sign.
/// Each block is thresholded relative to its own largest entry.
pub fn match_voltage_template<T: Real>(j_full: &DMatrix<T>, n_devices: usize, eps_rel: f64, t: f64) -> TemplateMatch {
    let sub = voltage_subsystem(j_full, n_devices);
    let p = n_devices;
    let mut signs = DMatrix::from_element(2 * p, 2 * p, Sign::Zero);
    let mut mismatches = Vec::new();
    let mut eps_max = 0.0f64;
    for br in 0..2 {
        for bc in 0..2 {
            let scale = (0..p)
                .flat_map(|i| (0..p).map(move |k| (i, k)))
                .fold(0.0f64, |a, (i, k)| a.max(sub[(br * p + i, bc * p + k)].as_f64().abs()));
            let eps = eps_rel * scale;
            eps_max = eps_max.max(eps);
            let (tdiag, toff) = VOLTAGE_TEMPLATE[br][bc];
            for i in 0..p {
                for k in 0..p {
                    let (r, c) = (br * p + i, bc * p + k);
                    let val = sub[(r, c)].as_f64();
                    let s = Sign::of(val, eps);
                    signs[(r, c)] = s;
                    let expected = if i == k { tdiag } else { toff };
                    let ok = match expected {
                        Sign::Zero => s == Sign::Zero,
                        _ if i == k => s == expected,
                        _ => s == expected || s == Sign::Zero,
                    };
                    if !ok {
                        mismatches.push(TemplateMismatch { row: r, col: c, expected, actual: s, value: val });
                    }
                }
            }
        }
    }
    TemplateMatch {
        t,
        matches: mismatches.is_empty(),
        mismatches,
        signs: SignMatrix { signs, eps_abs: eps_max, source_time: t },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    InputStateOutputMonotone,
    /// State condition fails but ordered inputs were observed to give ordered outputs.
    InputOutputOnly,
    Competitive,
    Indeterminate,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::InputStateOutputMonotone => "input_state_output_monotone",
            Verdict::InputOutputOnly => "input_output_only",
            Verdict::Competitive => "competitive",
            Verdict::Indeterminate => "indeterminate",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub matrix: &'static str,
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneVerdict {
    pub is_metzler_state: bool,
    pub input_nonneg: bool,
    pub output_nonneg: bool,
    pub verdict: Verdict,
    pub violating_entries: Vec<Violation>,
}

impl MonotoneVerdict {
    /// Upgrade a failed structural verdict when trajectories confirmed
    /// input-output ordering and the input/output conditions hold.
    pub fn with_ordering_evidence(mut self, ordering: &OrderingReport) -> Self {
        if self.verdict != Verdict::InputStateOutputMonotone
            && self.input_nonneg
            && self.output_nonneg
            && ordering.holds
        {
            self.verdict = Verdict::InputOutputOnly;
        }
        self
    }
}

/// Sign conditions for input-state-output monotonicity: Metzler `df/dx`,
/// non-negative `df/dv` and `dh/dx`. Entries within `eps` of zero count as zero.
pub fn check_theorem1<T: Real>(dfdx: &DMatrix<T>, dfdv: &DMatrix<T>, dhdx: &DMatrix<T>, eps: f64) -> MonotoneVerdict {
    let mut violations = Vec::new();
    let mut state_ok = true;
    let mut any_pos_off = false;
    let mut any_neg_off = false;
    for r in 0..dfdx.nrows() {
        for c in 0..dfdx.ncols() {
            if r == c {
                continue;
            }
            let x = dfdx[(r, c)].as_f64();
            if x < -eps {
                state_ok = false;
                any_neg_off = true;
                violations.push(Violation { matrix: "dfdx", row: r, col: c, value: x });
            } else if x > eps {
                any_pos_off = true;
            }
        }
    }
    let mut nonneg = |m: &DMatrix<T>, name: &'static str| {
        let mut ok = true;
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                let x = m[(r, c)].as_f64();
                if x < -eps {
                    ok = false;
                    violations.push(Violation { matrix: name, row: r, col: c, value: x });
                }
            }
        }
        ok
    };
    let input_ok = nonneg(dfdv, "dfdv");
    let output_ok = nonneg(dhdx, "dhdx");
    let verdict = if state_ok && input_ok && output_ok {
        Verdict::InputStateOutputMonotone
    } else if any_neg_off && !any_pos_off {
        Verdict::Competitive
    } else {
        Verdict::Indeterminate
    };
    MonotoneVerdict {
        is_metzler_state: state_ok,
        input_nonneg: input_ok,
        output_nonneg: output_ok,
        verdict,
        violating_entries: violations,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Cooperative,
    Competitive,
    Mixed,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Cooperative => "cooperative",
            Regime::Competitive => "competitive",
            Regime::Mixed => "mixed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegimeReport {
    pub regime: Regime,
    /// Every off-diagonal is below `small_ratio * min|diag|` in magnitude.
    pub off_diagonals_small: bool,
    /// Largest `|off-diagonal| / min|diag|`.
    pub max_off_ratio: f64,
}

pub const SMALL_OFF_DIAGONAL_RATIO: f64 = 0.1;

pub fn classify_regime<T: Real>(j: &DMatrix<T>, eps: f64) -> RegimeReport {
    let n = j.nrows();
    let mut all_ge = true;
    let mut all_le = true;
    let mut any_neg = false;
    let mut max_off = 0.0f64;
    for r in 0..n {
        for c in 0..n {
            if r == c {
                continue;
            }
            let x = j[(r, c)].as_f64();
            max_off = max_off.max(x.abs());
            if x < -eps {
                all_ge = false;
                any_neg = true;
            }
            if x > eps {
                all_le = false;
            }
        }
    }
    let regime = if all_ge {
        Regime::Cooperative
    } else if all_le && any_neg {
        Regime::Competitive
    } else {
        Regime::Mixed
    };
    let min_diag = (0..n).fold(f64::INFINITY, |a, i| a.min(j[(i, i)].as_f64().abs()));
    let ratio = if min_diag > 0.0 { max_off / min_diag } else { f64::INFINITY };
    RegimeReport { regime, off_diagonals_small: ratio < SMALL_OFF_DIAGONAL_RATIO, max_off_ratio: ratio }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Disc {
    pub center: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GershgorinCertificate {
    pub certified_stable: bool,
    pub discs: Vec<Disc>,
    /// Largest real part of the eigenvalues, by direct eigensolve.
    pub spectral_abscissa: f64,
}

pub fn gershgorin_certificate<T: Real>(j: &DMatrix<T>) -> GershgorinCertificate {
    let n = j.nrows();
    let discs: Vec<Disc> = (0..n)
        .map(|i| Disc {
            center: j[(i, i)].as_f64(),
            radius: (0..n).filter(|&k| k != i).map(|k| j[(i, k)].as_f64().abs()).sum(),
        })
        .collect();
    let certified = discs.iter().all(|d| d.center + d.radius < 0.0);
    let jf = j.map(|x| x.as_f64());
    let abscissa = jf.complex_eigenvalues().iter().fold(f64::NEG_INFINITY, |a, z| a.max(z.re));
    GershgorinCertificate { certified_stable: certified, discs, spectral_abscissa: abscissa }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalOrdering {
    pub name: String,
    /// `max(lo - hi)` over the window; non-positive when the ordering holds exactly.
    pub worst_violation: f64,
    pub first_violation_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderingReport {
    pub holds: bool,
    pub worst_violation: f64,
    pub first_violation_time: Option<f64>,
    pub signals: Vec<SignalOrdering>,
    pub tol: f64,
    pub window: (f64, f64),
    /// Free-form provenance, e.g. scenario names.
    pub metadata: Vec<(String, String)>,
}

/// `hi >= lo - tol` for every named series at every sample inside `window`.
pub fn ordering_check_series(
    times_hi: &[f64],
    hi: &[(String, Vec<f64>)],
    times_lo: &[f64],
    lo: &[(String, Vec<f64>)],
    tol: f64,
    window: (f64, f64),
) -> Result<OrderingReport, SimError> {
    if times_hi.len() != times_lo.len() || times_hi.iter().zip(times_lo).any(|(a, b)| a != b) {
        return Err(SimError::GridMismatch);
    }
    let mut signals = Vec::new();
    let mut holds = true;
    let mut worst = f64::NEG_INFINITY;
    let mut first: Option<f64> = None;
    for (name, h) in hi {
        let (_, l) = lo.iter().find(|(n, _)| n == name).ok_or_else(|| SimError::UnknownSignal(name.clone()))?;
        let mut w = f64::NEG_INFINITY;
        let mut f = None;
        for (i, &t) in times_hi.iter().enumerate() {
            if t < window.0 - 1e-12 || t > window.1 + 1e-12 {
                continue;
            }
            let d = l[i] - h[i];
            w = w.max(d);
            if d > tol && f.is_none() {
                f = Some(t);
            }
        }
        if let Some(tf) = f {
            holds = false;
            first = Some(first.map_or(tf, |x: f64| x.min(tf)));
        }
        worst = worst.max(w);
        signals.push(SignalOrdering { name: name.clone(), worst_violation: w, first_violation_time: f });
    }
    Ok(OrderingReport {
        holds,
        worst_violation: worst.max(0.0),
        first_violation_time: first,
        signals,
        tol,
        window,
        metadata: Vec::new(),
    })
}

/// Ordering of named signals between two simulated runs over a time window.
pub fn ordering_check<T: Real>(
    run_hi: &TimeSeries<T>,
    run_lo: &TimeSeries<T>,
    signals: &[String],
    tol: f64,
    window: (f64, f64),
) -> Result<OrderingReport, SimError> {
    let fetch = |ts: &TimeSeries<T>| -> Result<Vec<(String, Vec<f64>)>, SimError> {
        signals.iter().map(|s| Ok((s.clone(), ts.signal(s)?))).collect()
    };
    ordering_check_series(&run_hi.times, &fetch(run_hi)?, &run_lo.times, &fetch(run_lo)?, tol, window)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariationResult {
    pub positive: bool,
    pub min_component: f64,
    pub times: Vec<f64>,
    pub dx: Vec<DVector<f64>>,
}

/// Integrates the variation equation `d' = (df/dx) d + (df/dv) dv` along stored
/// Jacobian snapshots (linear interpolation between them, RK4 per interval).
pub fn variation_positivity<T: Real>(
    times: &[f64],
    dfdx: &[DMatrix<T>],
    dfdv: &[DMatrix<T>],
    dv: &DVector<f64>,
    dx0: &DVector<f64>,
    tol: f64,
) -> VariationResult {
    let to64 = |m: &DMatrix<T>| m.map(|x| x.as_f64());
    let mut d = dx0.clone();
    let mut min_c = d.iter().fold(f64::INFINITY, |a, &x| a.min(x));
    let mut out_t = vec![times[0]];
    let mut out = vec![d.clone()];
    for k in 0..times.len().saturating_sub(1) {
        let h = times[k + 1] - times[k];
        let (a0, a1) = (to64(&dfdx[k]), to64(&dfdx[k + 1]));
        let (b0, b1) = (to64(&dfdv[k]) * dv, to64(&dfdv[k + 1]) * dv);
        let am = (&a0 + &a1) * 0.5;
        let bm = (&b0 + &b1) * 0.5;
        let f = |a: &DMatrix<f64>, b: &DVector<f64>, x: &DVector<f64>| a * x + b;
        let k1 = f(&a0, &b0, &d);
        let k2 = f(&am, &bm, &(&d + &k1 * (0.5 * h)));
        let k3 = f(&am, &bm, &(&d + &k2 * (0.5 * h)));
        let k4 = f(&a1, &b1, &(&d + &k3 * h));
        d += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        min_c = d.iter().fold(min_c, |a, &x| a.min(x));
        out_t.push(times[k + 1]);
        out.push(d.clone());
    }
    VariationResult { positive: min_c >= -tol, min_component: min_c, times: out_t, dx: out }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpsilonScan {
    pub sigma_grid: Vec<f64>,
    pub output_buses: Vec<u32>,
    pub sample_times: Vec<f64>,
    /// `[output][sigma]`, minimum over the sample times.
    pub upsilon_prime: Vec<Vec<f64>>,
    /// `[output][time][sigma]`.
    pub detail: Vec<Vec<Vec<f64>>>,
    pub min_value: f64,
    /// `min_value` times the unit length of the sigma interval.
    pub integral_lower_bound: f64,
}

/// Step of the central difference for the voltage response to the shed amount.
const SHED_FD_STEP: f64 = 1e-5;

/// Homotopy derivative between two load-shedding runs.
///
/// For states `phi_1(t)`, `phi_2(t)` of runs shedding `shed_hi` and
/// `shed_lo` (consumption reductions, per unit) at the bus `bus` and `t = 0`,
/// evaluates for each output bus
/// `U'(sigma) = d|V|/dx (x_sigma) (phi_1 - phi_2) + d|V|/dv (v_sigma) (v_1 - v_2)`
/// with `x_sigma = sigma phi_1 + (1 - sigma) phi_2`.
#[allow(clippy::too_many_arguments)]
pub fn upsilon_scan<T: Real>(
    eq: &Equilibrium<T>,
    template: &Scenario<T>,
    bus: usize,
    shed_hi: Cx<T>,
    shed_lo: Cx<T>,
    t_samples: &[f64],
    sigma_steps: usize,
    outputs: &[usize],
) -> Result<UpsilonScan, SimError> {
    let mk = |shed: Cx<T>| template.clone().with_event(0.0, EventKind::LoadShed { bus, dp: shed.re, dq: shed.im });
    let r1 = run(eq, &mk(shed_hi), RunOptions::default())?;
    let r2 = run(eq, &mk(shed_lo), RunOptions::default())?;
    for r in [&r1, &r2] {
        if let Some(e) = &r.error {
            return Err(e.clone());
        }
    }
    upsilon_from_runs(eq, &r1, &r2, bus, shed_hi, shed_lo, t_samples, sigma_steps, outputs)
}

/// [`upsilon_scan`] on already simulated runs.
#[allow(clippy::too_many_arguments)]
pub fn upsilon_from_runs<T: Real>(
    eq: &Equilibrium<T>,
    r1: &TimeSeries<T>,
    r2: &TimeSeries<T>,
    bus: usize,
    shed_hi: Cx<T>,
    shed_lo: Cx<T>,
    t_samples: &[f64],
    sigma_steps: usize,
    outputs: &[usize],
) -> Result<UpsilonScan, SimError> {
    if r1.times != r2.times {
        return Err(SimError::GridMismatch);
    }
    let sigma: Vec<f64> = (0..=sigma_steps).map(|k| k as f64 / sigma_steps.max(1) as f64).collect();
    let dt = if r1.times.len() > 1 { r1.times[1] - r1.times[0] } else { 1.0 };
    let load_idx = eq
        .system
        .loads
        .iter()
        .position(|l| l.bus == bus)
        .ok_or_else(|| SimError::InvalidScenario("no load at the shed bus".into()))?;
    let base_load = eq.system.loads[load_idx].s;
    let dshed = shed_hi - shed_lo;
    let mut detail = vec![vec![vec![0.0; sigma.len()]; t_samples.len()]; outputs.len()];
    let opts = NewtonOptions::for_type::<T>();

    let mut sys = eq.system.clone();
    for (ti, &t) in t_samples.iter().enumerate() {
        let i = (t / dt).round() as usize;
        if i >= r1.times.len() || (r1.times[i] - t).abs() > 1e-9 {
            return Err(SimError::InvalidScenario(format!("sample time {t} is not on the simulation grid")));
        }
        let (x1, x2) = (&r1.states[i], &r2.states[i]);
        let dx = (x1 - x2).map(|z| z.as_f64());
        for (si, &s) in sigma.iter().enumerate() {
            let st = T::lit(s);
            let xs = x1 * st + x2 * (T::one() - st);
            let guess = r1.voltages[i].map(|z| z * st) + r2.voltages[i].map(|z| z * (T::one() - st));
            let shed = shed_hi * st + shed_lo * (T::one() - st);
            let solve_with = |sys: &mut PowerSystem<T>, shed: Cx<T>, guess: &DVector<Cx<T>>| {
                sys.loads[load_idx].s = base_load - shed;
                solve_network(sys.net.y(), &sys.injection(xs.as_slice()), guess, opts)
                    .map(|s| s.v)
                    .map_err(|source| SimError::NetworkSolve { t, source })
            };
            let v = solve_with(&mut sys, shed, &guess)?;
            let bundle = assemble_abc(&sys, xs.as_slice(), &v).map_err(|source| SimError::Jacobian { t, source })?;
            let dvdx = voltage_sensitivity(&bundle, SensitivityMethod::Exact)
                .map_err(|source| SimError::Jacobian { t, source })?;
            // d|V|/dv along the shed direction by central differences
            let hstep = T::lit(SHED_FD_STEP);
            let dir = if cabs(dshed) > T::zero() { dshed / cabs(dshed) } else { Complex::new(T::zero(), T::one()) };
            let vp = solve_with(&mut sys, shed + dir * hstep, &v)?;
            let vm = solve_with(&mut sys, shed - dir * hstep, &v)?;
            for (oi, &ob) in outputs.iter().enumerate() {
                let mag = cabs(v[ob]);
                let mut term_x = 0.0;
                for c in 0..dx.len() {
                    term_x += ((v[ob].conj() * dvdx[(ob, c)]).re / mag).as_f64() * dx[c];
                }
                let dh_dv = ((cabs(vp[ob]) - cabs(vm[ob])) / (hstep + hstep)).as_f64();
                detail[oi][ti][si] = term_x + dh_dv * cabs(dshed).as_f64();
            }
        }
    }
    let upsilon_prime: Vec<Vec<f64>> = detail
        .iter()
        .map(|per_t| (0..sigma.len()).map(|si| per_t.iter().fold(f64::INFINITY, |a, row| a.min(row[si]))).collect())
        .collect();
    let min_value = upsilon_prime.iter().flatten().fold(f64::INFINITY, |a, &x| a.min(x));
    Ok(UpsilonScan {
        sigma_grid: sigma,
        output_buses: outputs.iter().map(|&b| eq.system.bus_number(b)).collect(),
        sample_times: t_samples.to_vec(),
        upsilon_prime,
        detail,
        min_value,
        integral_lower_bound: min_value * 1.0,
    })
}

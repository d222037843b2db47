//! Fixed-step time-domain simulation of the differential-algebraic model.
//!
//! Device ODEs are integrated with classical RK4; the network equation is
//! re-solved at every stage. Steps are split at event times so no step
//! straddles an event.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use thiserror::Error;

use crate::devices::{gfm_reactive_power, DeviceModel, GfmState, EMF, EXC, STATES_PER_DEVICE};
use crate::jacobian::{jacobian_at, state_derivative, JacobianError, SensitivityMethod};
use crate::netmodel::{solve_network, NetError, NewtonOptions};
use crate::scalar::{cabs, carg, cis, Cx, Real};
use crate::system::{init_equilibrium, Equilibrium, PowerSystem, SystemError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("network solve failed at t = {t}: {source}")]
    NetworkSolve { t: f64, source: NetError },
    #[error("device evaluation failed at t = {t}: {message}")]
    Device { t: f64, message: String },
    #[error("state diverged at t = {t}")]
    Diverged { t: f64 },
    #[error("jacobian snapshot failed at t = {t}: {source}")]
    Jacobian { t: f64, source: JacobianError },
    #[error(transparent)]
    Setup(#[from] SystemError),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("unknown signal `{0}`")]
    UnknownSignal(String),
    #[error("time grids differ")]
    GridMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EventKind<T> {
    /// Shunt fault admittance at a bus (dense index).
    FaultOn {
        bus: usize,
        y: Cx<T>,
    },
    FaultOff {
        bus: usize,
    },
    /// Voltage reference change of the device at a bus.
    VrefStep {
        bus: usize,
        delta: T,
    },
    /// Reactive reference change of the converter at a bus.
    QrefStep {
        bus: usize,
        delta: T,
    },
    /// Reduces the constant-power load at a bus by `dp + j dq`.
    LoadShed {
        bus: usize,
        dp: T,
        dq: T,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event<T> {
    pub time: f64,
    pub kind: EventKind<T>,
}

pub const DEFAULT_FAULT_B: f64 = -1e4;

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario<T> {
    pub name: String,
    pub t_end: f64,
    pub dt: f64,
    pub events: Vec<Event<T>>,
    /// Signal names written by the CLI; the run always keeps full state and voltage.
    pub record: Vec<String>,
    /// Jacobian snapshot every `jacobian_stride` steps; 0 disables snapshots.
    pub jacobian_stride: usize,
}

impl<T: Real> Scenario<T> {
    pub fn new(name: impl Into<String>, t_end: f64, dt: f64) -> Self {
        Scenario { name: name.into(), t_end, dt, events: Vec::new(), record: Vec::new(), jacobian_stride: 0 }
    }

    pub fn with_event(mut self, time: f64, kind: EventKind<T>) -> Self {
        self.events.push(Event { time, kind });
        self.events.sort_by(|a, b| a.time.total_cmp(&b.time));
        self
    }

    pub fn validate(&self, sys: &PowerSystem<T>) -> Result<(), SimError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SimError::InvalidScenario("dt must be positive".into()));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(SimError::InvalidScenario("t_end must be positive".into()));
        }
        if self.events.windows(2).any(|w| w[0].time > w[1].time) {
            return Err(SimError::InvalidScenario("events must be sorted by time".into()));
        }
        let n = sys.n_bus();
        for e in &self.events {
            if !(e.time >= 0.0) {
                return Err(SimError::InvalidScenario("event time must be non-negative".into()));
            }
            let bus = match e.kind {
                EventKind::FaultOn { bus, .. } | EventKind::FaultOff { bus } | EventKind::LoadShed { bus, .. } => bus,
                EventKind::VrefStep { bus, .. } => {
                    if bus < n && sys.device_at(bus).is_none() {
                        return Err(SimError::InvalidScenario(format!("no device at bus {}", sys.bus_number(bus))));
                    }
                    bus
                }
                EventKind::QrefStep { bus, .. } => {
                    let ok = bus < n
                        && sys.device_at(bus).is_some_and(|k| matches!(sys.devices[k].model, DeviceModel::Gfm(_)));
                    if !ok {
                        return Err(SimError::InvalidScenario("reactive reference step needs a converter".into()));
                    }
                    bus
                }
            };
            if bus >= n {
                return Err(SimError::InvalidScenario("event references a missing bus".into()));
            }
        }
        Ok(())
    }
}

/// Apply an event to the scenario-local system copy.
pub fn apply_event<T: Real>(sys: &mut PowerSystem<T>, event: &EventKind<T>) -> Result<(), SimError> {
    match *event {
        EventKind::FaultOn { bus, y } => sys.net.fault_on(bus, y),
        EventKind::FaultOff { bus } => sys.net.fault_off(bus),
        EventKind::VrefStep { bus, delta } => {
            let k = sys.device_at(bus).ok_or_else(|| SimError::InvalidScenario("no device at bus".into()))?;
            let d = &mut sys.devices[k];
            let v = d.v_ref() + delta;
            d.set_v_ref(v);
        }
        EventKind::QrefStep { bus, delta } => {
            let k = sys.device_at(bus).ok_or_else(|| SimError::InvalidScenario("no device at bus".into()))?;
            match &mut sys.devices[k].model {
                DeviceModel::Gfm(p) => p.q_ref += delta,
                DeviceModel::Sg(_) => {
                    return Err(SimError::InvalidScenario("reactive reference step needs a converter".into()))
                }
            }
        }
        EventKind::LoadShed { bus, dp, dq } => {
            let shed = Complex::new(dp, dq);
            match sys.loads.iter_mut().find(|l| l.bus == bus) {
                Some(l) => l.s -= shed,
                None => return Err(SimError::InvalidScenario(format!("no load at bus {}", sys.bus_number(bus)))),
            }
        }
    }
    Ok(())
}

/// Jacobian data kept along a trajectory.
#[derive(Debug, Clone)]
pub struct JacobianSnapshot<T: Real> {
    pub t: f64,
    pub j_full: DMatrix<T>,
    pub j_reduced: DMatrix<T>,
    pub dvmag_de: DMatrix<T>,
}

#[derive(Debug, Clone)]
pub struct EventRecord<T: Real> {
    pub time: f64,
    pub kind: EventKind<T>,
    pub v_pre: DVector<Cx<T>>,
    pub v_post: DVector<Cx<T>>,
}

/// Sampled trajectory. The grid holds one sample per `dt`; the sample at an
/// event time is the post-event one, the pre-event voltages are in `events`.
#[derive(Debug, Clone)]
pub struct TimeSeries<T: Real> {
    pub times: Vec<f64>,
    pub states: Vec<DVector<T>>,
    pub voltages: Vec<DVector<Cx<T>>>,
    /// System as configured at each sample is not stored; this is the initial one.
    pub system: PowerSystem<T>,
    pub labels: Vec<String>,
    pub events: Vec<EventRecord<T>>,
    pub jacobians: Vec<JacobianSnapshot<T>>,
    /// Set when the run stopped early.
    pub error: Option<SimError>,
    /// Exciter states were constrained to their quasi-steady value.
    pub reduced: bool,
}

impl<T: Real> TimeSeries<T> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn completed(&self) -> bool {
        self.error.is_none()
    }

    /// Signal by name: state labels (`delta@30`, `eq@31`, `evir@30`, ...),
    /// `vm@N`, `va@N` for bus `N`, `pe@N`, `qc@N` for the device at bus `N`.
    pub fn signal(&self, name: &str) -> Result<Vec<f64>, SimError> {
        if let Some(i) = self.labels.iter().position(|l| l == name) {
            return Ok(self.states.iter().map(|x| x[i].as_f64()).collect());
        }
        let unknown = || SimError::UnknownSignal(name.to_string());
        let (kind, num) = name.split_once('@').ok_or_else(unknown)?;
        let num: u32 = num.parse().map_err(|_| unknown())?;
        let bus = self.system.bus_index(num).ok_or_else(unknown)?;
        match kind {
            "vm" => Ok(self.voltages.iter().map(|v| cabs(v[bus]).as_f64()).collect()),
            "va" => Ok(self.voltages.iter().map(|v| carg(v[bus]).as_f64()).collect()),
            "pe" | "qc" => {
                let k = self.system.device_at(bus).ok_or_else(unknown)?;
                let d = self.system.devices[k];
                Ok(self
                    .states
                    .iter()
                    .zip(&self.voltages)
                    .map(|(x, v)| {
                        let xs = &x.as_slice()[k * STATES_PER_DEVICE..(k + 1) * STATES_PER_DEVICE];
                        let g = d.injection(xs, v[bus]).g;
                        if kind == "pe" {
                            g.re.as_f64()
                        } else {
                            match d.model {
                                DeviceModel::Gfm(p) => {
                                    gfm_reactive_power(&p, &GfmState::from_slice(xs), v[bus]).as_f64()
                                }
                                DeviceModel::Sg(_) => (-g.im).as_f64(),
                            }
                        }
                    })
                    .collect())
            }
            _ => Err(unknown()),
        }
    }

    /// All signal names available from [`TimeSeries::signal`].
    pub fn available_signals(&self) -> Vec<String> {
        let mut out = self.labels.clone();
        for b in self.system.net.buses() {
            out.push(format!("vm@{}", b.number));
        }
        for d in &self.system.devices {
            let b = self.system.bus_number(d.bus);
            out.push(format!("pe@{b}"));
            out.push(format!("qc@{b}"));
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    /// Replace exciter dynamics by their algebraic manifold.
    pub reduced: bool,
    pub method: SensitivityMethod,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { reduced: false, method: SensitivityMethod::Exact }
    }
}

struct Stepper<'a, T: Real> {
    sys: PowerSystem<T>,
    reduced: bool,
    opts: NewtonOptions,
    /// Known-good voltage profiles to restart from if the warm start fails.
    fallbacks: Vec<&'a DVector<Cx<T>>>,
    last_good_event_v: Option<DVector<Cx<T>>>,
}

impl<T: Real> Stepper<'_, T> {
    fn solve(&self, x: &DVector<T>, guess: &DVector<Cx<T>>, t: f64) -> Result<DVector<Cx<T>>, SimError> {
        let inj = self.sys.injection(x.as_slice());
        let y = self.sys.net.y();
        let first = match solve_network(y, &inj, guess, self.opts) {
            Ok(s) => return Ok(s.v),
            Err(e) => e,
        };
        let mut starts: Vec<DVector<Cx<T>>> = Vec::new();
        if let Some(v) = &self.last_good_event_v {
            starts.push(v.clone());
        }
        for f in &self.fallbacks {
            starts.push((*f).clone());
        }
        // internal device voltages as a rough start, flat elsewhere
        let mut flat = DVector::from_element(self.sys.n_bus(), Complex::new(T::one(), T::zero()));
        for (k, d) in self.sys.devices.iter().enumerate() {
            let e = x[k * STATES_PER_DEVICE + EMF];
            flat[d.bus] = cis(x[k * STATES_PER_DEVICE]) * e;
        }
        starts.push(flat);
        for s in starts {
            if let Ok(sol) = solve_network(y, &inj, &s, self.opts) {
                return Ok(sol.v);
            }
        }
        Err(SimError::NetworkSolve { t, source: first })
    }

    /// Overwrite exciter states with their quasi-steady value.
    fn project(&self, x: &mut DVector<T>, v: &DVector<Cx<T>>) {
        if self.reduced {
            for (k, d) in self.sys.devices.iter().enumerate() {
                x[k * STATES_PER_DEVICE + EXC] = d.quasi_steady_exciter(v[d.bus]);
            }
        }
    }

    fn rhs(&self, x: &DVector<T>, guess: &DVector<Cx<T>>, t: f64) -> Result<(DVector<T>, DVector<Cx<T>>), SimError> {
        let v = self.solve(x, guess, t)?;
        let mut xe = x.clone();
        self.project(&mut xe, &v);
        let mut f = state_derivative(&self.sys, xe.as_slice(), &v)
            .map_err(|e| SimError::Device { t, message: e.to_string() })?;
        if self.reduced {
            for k in 0..self.sys.devices.len() {
                f[k * STATES_PER_DEVICE + EXC] = T::zero();
            }
        }
        Ok((f, v))
    }

    fn rk4(
        &self,
        x: &DVector<T>,
        v: &DVector<Cx<T>>,
        t: f64,
        h: f64,
    ) -> Result<(DVector<T>, DVector<Cx<T>>), SimError> {
        let hh = T::lit(h);
        let half = T::lit(0.5 * h);
        let (k1, v1) = self.rhs(x, v, t)?;
        let (k2, v2) = self.rhs(&(x + &k1 * half), &v1, t + 0.5 * h)?;
        let (k3, v3) = self.rhs(&(x + &k2 * half), &v2, t + 0.5 * h)?;
        let (k4, _) = self.rhs(&(x + &k3 * hh), &v3, t + h)?;
        let sixth = T::lit(h / 6.0);
        let two = T::lit(2.0);
        let mut xn = x + (k1 + k2 * two + k3 * two + k4) * sixth;
        let vn = self.solve(&xn, &v3, t + h)?;
        self.project(&mut xn, &vn);
        if xn.iter().any(|e| !e.is_finite()) {
            return Err(SimError::Diverged { t: t + h });
        }
        Ok((xn, vn))
    }
}

/// Simulate a scenario starting from an equilibrium.
///
/// Setup errors are returned as `Err`; failures during the run end it early
/// and are reported in [`TimeSeries::error`] together with the partial data.
pub fn run<T: Real>(
    eq: &Equilibrium<T>,
    scenario: &Scenario<T>,
    options: RunOptions,
) -> Result<TimeSeries<T>, SimError> {
    scenario.validate(&eq.system)?;
    let n_steps = (scenario.t_end / scenario.dt).round() as usize;
    let dt = scenario.dt;
    let mut stepper = Stepper {
        sys: eq.system.clone(),
        reduced: options.reduced,
        opts: NewtonOptions::for_type::<T>(),
        fallbacks: vec![&eq.v],
        last_good_event_v: None,
    };
    let mut x = eq.x.clone();
    let mut v = eq.v.clone();
    stepper.project(&mut x, &v);

    let mut ts = TimeSeries {
        times: Vec::with_capacity(n_steps + 1),
        states: Vec::with_capacity(n_steps + 1),
        voltages: Vec::with_capacity(n_steps + 1),
        system: eq.system.clone(),
        labels: eq.system.state_labels(),
        events: Vec::new(),
        jacobians: Vec::new(),
        error: None,
        reduced: options.reduced,
    };
    let tol_t = 1e-9 * dt;
    let mut next_event = 0usize;
    let events = &scenario.events;

    // events at or before t = 0
    let apply_due = |stepper: &mut Stepper<T>,
                     x: &mut DVector<T>,
                     v: &mut DVector<Cx<T>>,
                     t: f64,
                     next_event: &mut usize,
                     log: &mut Vec<EventRecord<T>>|
     -> Result<(), SimError> {
        while *next_event < events.len() && events[*next_event].time <= t + tol_t {
            let e = events[*next_event];
            let v_pre = v.clone();
            stepper.last_good_event_v = Some(v_pre.clone());
            apply_event(&mut stepper.sys, &e.kind)?;
            *v = stepper.solve(x, &v_pre, t)?;
            stepper.project(x, v);
            log.push(EventRecord { time: e.time, kind: e.kind, v_pre, v_post: v.clone() });
            *next_event += 1;
        }
        Ok(())
    };

    let snapshot =
        |sys: &PowerSystem<T>, x: &DVector<T>, v: &DVector<Cx<T>>, t: f64| -> Result<JacobianSnapshot<T>, SimError> {
            let r = jacobian_at(sys, x.as_slice(), v, options.method, t)
                .map_err(|source| SimError::Jacobian { t, source })?;
            Ok(JacobianSnapshot { t, j_full: r.j_full, j_reduced: r.j_reduced, dvmag_de: r.dvmag_de })
        };

    if let Err(e) = apply_due(&mut stepper, &mut x, &mut v, 0.0, &mut next_event, &mut ts.events) {
        ts.error = Some(e);
        return Ok(ts);
    }
    ts.times.push(0.0);
    ts.states.push(x.clone());
    ts.voltages.push(v.clone());
    if scenario.jacobian_stride > 0 {
        match snapshot(&stepper.sys, &x, &v, 0.0) {
            Ok(s) => ts.jacobians.push(s),
            Err(e) => {
                ts.error = Some(e);
                return Ok(ts);
            }
        }
    }

    for k in 0..n_steps {
        let t0 = k as f64 * dt;
        let t1 = (k + 1) as f64 * dt;
        let mut t = t0;
        let result: Result<(), SimError> = (|| {
            // split at events strictly inside the step
            while next_event < events.len() && events[next_event].time < t1 - tol_t {
                let te = events[next_event].time;
                if te > t + tol_t {
                    let (xn, vn) = stepper.rk4(&x, &v, t, te - t)?;
                    x = xn;
                    v = vn;
                    t = te;
                }
                apply_due(&mut stepper, &mut x, &mut v, t, &mut next_event, &mut ts.events)?;
            }
            let (xn, vn) = stepper.rk4(&x, &v, t, t1 - t)?;
            x = xn;
            v = vn;
            apply_due(&mut stepper, &mut x, &mut v, t1, &mut next_event, &mut ts.events)?;
            Ok(())
        })();
        if let Err(e) = result {
            ts.error = Some(e);
            return Ok(ts);
        }
        ts.times.push(t1);
        ts.states.push(x.clone());
        ts.voltages.push(v.clone());
        if scenario.jacobian_stride > 0 && (k + 1) % scenario.jacobian_stride == 0 {
            match snapshot(&stepper.sys, &x, &v, t1) {
                Ok(s) => ts.jacobians.push(s),
                Err(e) => {
                    ts.error = Some(e);
                    return Ok(ts);
                }
            }
        }
    }
    Ok(ts)
}

/// Initialise at equilibrium and simulate.
pub fn simulate<T: Real>(sys: &PowerSystem<T>, scenario: &Scenario<T>) -> Result<TimeSeries<T>, SimError> {
    let eq = init_equilibrium(sys)?;
    run(&eq, scenario, RunOptions::default())
}

/// Simulate with every exciter replaced by its quasi-steady manifold.
pub fn run_reduced<T: Real>(eq: &Equilibrium<T>, scenario: &Scenario<T>) -> Result<TimeSeries<T>, SimError> {
    run(eq, scenario, RunOptions { reduced: true, ..RunOptions::default() })
}

/// Ordering of `variant` over `base` on the shared grid, with both scenario names attached.
/// The two runs must start from the same equilibrium.
pub fn compare_scenarios<T: Real>(
    base: &TimeSeries<T>,
    base_name: &str,
    variant: &TimeSeries<T>,
    variant_name: &str,
    signals: &[String],
    tol: f64,
    window: (f64, f64),
) -> Result<crate::monotone::OrderingReport, SimError> {
    let mut rep = crate::monotone::ordering_check(variant, base, signals, tol, window)?;
    rep.metadata.push(("base".into(), base_name.to_string()));
    rep.metadata.push(("variant".into(), variant_name.to_string()));
    Ok(rep)
}

/// The three-state linear example `x' = A x + b u`, `y = c x`.
pub struct LinearDemo;

impl LinearDemo {
    pub const A: [[f64; 3]; 3] = [[-1.0, 0.0, 2.0], [1.0, -3.0, 0.0], [0.0, 1.0, -4.0]];
    pub const B: [f64; 3] = [4.0, 0.0, 1.0];
    pub const C: [f64; 3] = [0.0, 1.0, 2.0];

    pub fn a<T: Real>() -> DMatrix<T> {
        DMatrix::from_fn(3, 3, |i, j| T::lit(Self::A[i][j]))
    }

    pub fn b<T: Real>() -> DMatrix<T> {
        DMatrix::from_fn(3, 1, |i, _| T::lit(Self::B[i]))
    }

    pub fn c<T: Real>() -> DMatrix<T> {
        DMatrix::from_fn(1, 3, |_, j| T::lit(Self::C[j]))
    }
}

#[derive(Debug, Clone)]
pub struct LinearSeries<T> {
    pub input_scale: f64,
    pub times: Vec<f64>,
    pub states: Vec<[T; 3]>,
    pub output: Vec<T>,
}

/// RK4 response of the linear example to a step of height `input_scale` from `x(0) = 0`.
pub fn run_linear_demo<T: Real>(input_scale: f64, dt: f64, t_end: f64) -> LinearSeries<T> {
    let a = LinearDemo::a::<T>();
    let b = LinearDemo::b::<T>().column(0).into_owned() * T::lit(input_scale);
    let c = LinearDemo::c::<T>();
    let n = (t_end / dt).round() as usize;
    let h = T::lit(dt);
    let f = |x: &DVector<T>| &a * x + &b;
    let mut x = DVector::<T>::zeros(3);
    let mut out =
        LinearSeries { input_scale, times: Vec::with_capacity(n + 1), states: Vec::new(), output: Vec::new() };
    for k in 0..=n {
        out.times.push(k as f64 * dt);
        out.states.push([x[0], x[1], x[2]]);
        out.output.push((&c * &x)[0]);
        if k == n {
            break;
        }
        let k1 = f(&x);
        let k2 = f(&(&x + &k1 * (h * T::lit(0.5))));
        let k3 = f(&(&x + &k2 * (h * T::lit(0.5))));
        let k4 = f(&(&x + &k3 * h));
        x += (k1 + k2 * T::lit(2.0) + k3 * T::lit(2.0) + k4) * (h / T::lit(6.0));
    }
    out
}

//! A complete power system: network, devices and loads, with the power flow
//! and equilibrium initialisation used to start simulations.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use thiserror::Error;

use crate::devices::{Device, DeviceError, DeviceModel, PqLoad, DELTA, STATES_PER_DEVICE};
use crate::netmodel::{solve_network, BusInjection, BusKind, Injection, NetError, NetworkModel, NewtonOptions};
use crate::scalar::{cabs, carg, cis, j, Cx, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SystemError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error("invalid system: {0}")]
    Invalid(String),
    #[error("power flow did not converge ({iterations} iterations, mismatch {mismatch:e})")]
    PowerFlow { iterations: usize, mismatch: f64 },
}

/// Power-flow setpoint of a device: active power and voltage magnitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Setpoint<T> {
    pub p: T,
    pub v: T,
}

#[derive(Debug, Clone)]
pub struct PowerSystem<T: Real> {
    pub name: String,
    pub base_mva: f64,
    pub net: NetworkModel<T>,
    pub devices: Vec<Device<T>>,
    pub setpoints: Vec<Setpoint<T>>,
    pub loads: Vec<PqLoad<T>>,
    /// Device index per bus, if any.
    device_at: Vec<Option<usize>>,
}

impl<T: Real> PowerSystem<T> {
    pub fn new(
        name: impl Into<String>,
        base_mva: f64,
        net: NetworkModel<T>,
        devices: Vec<Device<T>>,
        setpoints: Vec<Setpoint<T>>,
        loads: Vec<PqLoad<T>>,
    ) -> Result<Self, SystemError> {
        let n = net.n();
        if setpoints.len() != devices.len() {
            return Err(SystemError::Invalid("one setpoint per device is required".into()));
        }
        let mut device_at = vec![None; n];
        for (k, d) in devices.iter().enumerate() {
            if d.bus >= n {
                return Err(SystemError::Invalid(format!("device {k} references a missing bus")));
            }
            if device_at[d.bus].is_some() {
                return Err(SystemError::Invalid(format!(
                    "bus {} has more than one device",
                    net.buses()[d.bus].number
                )));
            }
            d.validate()?;
            device_at[d.bus] = Some(k);
        }
        if device_at[net.slack()].is_none() {
            return Err(SystemError::Invalid("the slack bus must host a device".into()));
        }
        for l in &loads {
            if l.bus >= n {
                return Err(SystemError::Invalid("load references a missing bus".into()));
            }
        }
        for (i, b) in net.buses().iter().enumerate() {
            if b.kind == BusKind::Device && device_at[i].is_none() {
                return Err(SystemError::Invalid(format!("device bus {} has no device", b.number)));
            }
        }
        Ok(PowerSystem { name: name.into(), base_mva, net, devices, setpoints, loads, device_at })
    }

    pub fn n_bus(&self) -> usize {
        self.net.n()
    }

    pub fn n_states(&self) -> usize {
        self.devices.len() * STATES_PER_DEVICE
    }

    pub fn device_at(&self, bus: usize) -> Option<usize> {
        self.device_at[bus]
    }

    pub fn bus_number(&self, bus: usize) -> u32 {
        self.net.buses()[bus].number
    }

    pub fn bus_index(&self, number: u32) -> Option<usize> {
        self.net.index_of(number)
    }

    /// Index of the internal-voltage state of device `k`.
    pub fn emf_index(k: usize) -> usize {
        k * STATES_PER_DEVICE + crate::devices::EMF
    }

    pub fn exc_index(k: usize) -> usize {
        k * STATES_PER_DEVICE + crate::devices::EXC
    }

    pub fn state_labels(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.n_states());
        for d in &self.devices {
            let b = self.bus_number(d.bus);
            let (e, f) = match d.model {
                DeviceModel::Sg(_) => ("eq", "efd"),
                DeviceModel::Gfm(_) => ("evir", "evirfd"),
            };
            out.push(format!("delta@{b}"));
            out.push(format!("omega@{b}"));
            out.push(format!("{e}@{b}"));
            out.push(format!("{f}@{b}"));
        }
        out
    }

    /// Total conjugate injection at every bus for states `x`.
    pub fn injection<'a>(&'a self, x: &'a [T]) -> SystemInjection<'a, T> {
        SystemInjection { sys: self, x }
    }

    /// Complex power consumed by loads at every bus at nominal voltage.
    pub fn load_power(&self) -> Vec<Cx<T>> {
        let mut s = vec![Complex::new(T::zero(), T::zero()); self.n_bus()];
        for l in &self.loads {
            s[l.bus] += l.s;
        }
        s
    }

    pub fn cast<U: Real>(&self) -> PowerSystem<U> {
        let c = |x: T| U::lit(x.as_f64());
        let cc = |z: Cx<T>| Complex::new(c(z.re), c(z.im));
        let devices = self
            .devices
            .iter()
            .map(|d| Device {
                bus: d.bus,
                model: match d.model {
                    DeviceModel::Sg(p) => DeviceModel::Sg(crate::devices::SgParams {
                        xd: c(p.xd),
                        xq: c(p.xq),
                        xd_p: c(p.xd_p),
                        td0_p: c(p.td0_p),
                        ka: c(p.ka),
                        ta: c(p.ta),
                        h: c(p.h),
                        d: c(p.d),
                        omega_b: c(p.omega_b),
                        v_ref: c(p.v_ref),
                        p_m: c(p.p_m),
                    }),
                    DeviceModel::Gfm(p) => DeviceModel::Gfm(crate::devices::GfmParams {
                        xl: c(p.xl),
                        ki: c(p.ki),
                        kd: c(p.kd),
                        tw: c(p.tw),
                        ku: c(p.ku),
                        kq: c(p.kq),
                        h: c(p.h),
                        d: c(p.d),
                        omega_b: c(p.omega_b),
                        v_ref: c(p.v_ref),
                        q_ref: c(p.q_ref),
                        p_ref: c(p.p_ref),
                    }),
                },
            })
            .collect();
        PowerSystem {
            name: self.name.clone(),
            base_mva: self.base_mva,
            net: self.net.cast(),
            devices,
            setpoints: self.setpoints.iter().map(|s| Setpoint { p: c(s.p), v: c(s.v) }).collect(),
            loads: self.loads.iter().map(|l| PqLoad { bus: l.bus, s: cc(l.s), v_min: c(l.v_min) }).collect(),
            device_at: self.device_at.clone(),
        }
    }
}

pub struct SystemInjection<'a, T: Real> {
    sys: &'a PowerSystem<T>,
    x: &'a [T],
}

impl<T: Real> Injection<T> for SystemInjection<'_, T> {
    fn eval(&self, v: &DVector<Cx<T>>, out: &mut [BusInjection<T>]) {
        for o in out.iter_mut() {
            *o = BusInjection::default();
        }
        for (k, d) in self.sys.devices.iter().enumerate() {
            let xs = &self.x[k * STATES_PER_DEVICE..(k + 1) * STATES_PER_DEVICE];
            let inj = d.injection(xs, v[d.bus]);
            let o = &mut out[d.bus];
            o.g += inj.g;
            o.dg_dv += inj.dg_dv;
            o.dg_dvbar += inj.dg_dvbar;
        }
        for l in &self.sys.loads {
            let inj = l.injection(v[l.bus]);
            let o = &mut out[l.bus];
            o.g += inj.g;
            o.dg_dv += inj.dg_dv;
            o.dg_dvbar += inj.dg_dvbar;
        }
    }
}

/// Polar Newton power flow. Device buses regulate voltage magnitude at their
/// setpoint and inject their scheduled active power; the slack bus absorbs the balance.
pub fn power_flow<T: Real>(sys: &PowerSystem<T>) -> Result<DVector<Cx<T>>, SystemError> {
    let n = sys.n_bus();
    let y = sys.net.y_prefault();
    let slack = sys.net.slack();
    let s_load = sys.load_power();
    let mut p_sched = vec![T::zero(); n];
    let mut vm = vec![T::one(); n];
    let mut va = vec![T::zero(); n];
    let mut is_pv = vec![false; n];
    for (k, d) in sys.devices.iter().enumerate() {
        p_sched[d.bus] = sys.setpoints[k].p;
        vm[d.bus] = sys.setpoints[k].v;
        is_pv[d.bus] = true;
    }
    // unknown layout: angles of all non-slack buses, then magnitudes of load buses
    let ang: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
    let mag: Vec<usize> = (0..n).filter(|&i| !is_pv[i]).collect();
    let nu = ang.len() + mag.len();
    // mismatches cannot drop below the rounding level of the largest row of `Y V`
    let row_sum = (0..n).fold(0.0f64, |m, i| m.max((0..n).map(|k| cabs(y[(i, k)]).as_f64()).sum()));
    let tol = T::lit(T::NEWTON_TOL.max(1e-12).max(4.0 * T::EPSILON * row_sum));

    let mut mismatch = T::zero();
    for it in 0..30 {
        let v = DVector::from_fn(n, |i, _| cis(va[i]) * vm[i]);
        let i_bus = y * &v;
        let s_calc = DVector::from_fn(n, |i, _| v[i] * i_bus[i].conj());
        let mut f = DVector::<T>::zeros(nu);
        for (r, &i) in ang.iter().enumerate() {
            f[r] = s_calc[i].re - (p_sched[i] - s_load[i].re);
        }
        for (r, &i) in mag.iter().enumerate() {
            f[ang.len() + r] = s_calc[i].im + s_load[i].im;
        }
        mismatch = f.iter().fold(T::zero(), |m, x| m.max(x.abs()));
        if mismatch <= tol {
            return Ok(v);
        }
        // dS/dVa = j diag(V) conj(diag(I) - Y diag(V)); dS/dVm = diag(V) conj(Y diag(V/|V|)) + conj(diag(I)) diag(V/|V|)
        let vn = DVector::from_fn(n, |i, _| cis(va[i]));
        let mut jac = DMatrix::<T>::zeros(nu, nu);
        let ds_dva = |i: usize, k: usize| -> Cx<T> {
            let mut t = -(y[(i, k)] * v[k]);
            if i == k {
                t += i_bus[i];
            }
            j::<T>() * v[i] * t.conj()
        };
        let ds_dvm = |i: usize, k: usize| -> Cx<T> {
            let mut t = v[i] * (y[(i, k)] * vn[k]).conj();
            if i == k {
                t += i_bus[i].conj() * vn[i];
            }
            t
        };
        for (r, &i) in ang.iter().enumerate() {
            for (c, &k) in ang.iter().enumerate() {
                jac[(r, c)] = ds_dva(i, k).re;
            }
            for (c, &k) in mag.iter().enumerate() {
                jac[(r, ang.len() + c)] = ds_dvm(i, k).re;
            }
        }
        for (r, &i) in mag.iter().enumerate() {
            for (c, &k) in ang.iter().enumerate() {
                jac[(ang.len() + r, c)] = ds_dva(i, k).im;
            }
            for (c, &k) in mag.iter().enumerate() {
                jac[(ang.len() + r, ang.len() + c)] = ds_dvm(i, k).im;
            }
        }
        let dx = jac.lu().solve(&(-f)).ok_or(SystemError::PowerFlow { iterations: it, mismatch: mismatch.as_f64() })?;
        for (r, &i) in ang.iter().enumerate() {
            va[i] += dx[r];
        }
        for (r, &i) in mag.iter().enumerate() {
            vm[i] += dx[ang.len() + r];
        }
    }
    Err(SystemError::PowerFlow { iterations: 30, mismatch: mismatch.as_f64() })
}

/// Equilibrium operating point: states, bus voltages and a system whose
/// device references were set so that the point is stationary.
#[derive(Debug, Clone)]
pub struct Equilibrium<T: Real> {
    pub system: PowerSystem<T>,
    pub x: DVector<T>,
    pub v: DVector<Cx<T>>,
}

/// Power flow, device initialisation and a common angle shift that centres
/// the rotor angles around zero.
pub fn init_equilibrium<T: Real>(sys: &PowerSystem<T>) -> Result<Equilibrium<T>, SystemError> {
    let v_pf = power_flow(sys)?;
    let y = sys.net.y_prefault();
    let i_bus = y * &v_pf;
    let s_load = sys.load_power();
    let mut system = sys.clone();
    let m = system.n_states();
    let mut x = DVector::<T>::zeros(m);
    for (k, d) in system.devices.iter_mut().enumerate() {
        let b = d.bus;
        let s_gen = v_pf[b] * i_bus[b].conj() + s_load[b];
        let xs = d.initialize(v_pf[b], s_gen)?;
        for (r, val) in xs.into_iter().enumerate() {
            x[k * STATES_PER_DEVICE + r] = val;
        }
    }
    let deltas: Vec<T> = (0..system.devices.len()).map(|k| x[k * STATES_PER_DEVICE + DELTA]).collect();
    let dmax = deltas.iter().copied().fold(T::min_value().unwrap(), |a, b| a.max(b));
    let dmin = deltas.iter().copied().fold(T::max_value().unwrap(), |a, b| a.min(b));
    let shift = -(dmax + dmin) * T::lit(0.5);
    for k in 0..system.devices.len() {
        x[k * STATES_PER_DEVICE + DELTA] += shift;
    }
    let rot = cis(shift);
    let v0 = v_pf.map(|z| z * rot);
    // polish against the dynamic network equation
    let sol = solve_network(system.net.y(), &system.injection(x.as_slice()), &v0, NewtonOptions::for_type::<T>())?;
    Ok(Equilibrium { system, x, v: sol.v })
}

/// Bus voltage magnitudes.
pub fn magnitudes<T: Real>(v: &DVector<Cx<T>>) -> Vec<T> {
    v.iter().map(|z| cabs(*z)).collect()
}

pub fn angles<T: Real>(v: &DVector<Cx<T>>) -> Vec<T> {
    v.iter().map(|z| carg(*z)).collect()
}

//! Synchronous generator and grid-forming converter models, plus
//! voltage-dependent loads.
//!
//! Every device owns four states in the order
//! `[delta, omega, internal voltage, exciter/outer-loop voltage]` and
//! interacts with the network only through its own bus voltage via the
//! conjugate power injection `g = conj(S)`.

use num_complex::Complex;
use thiserror::Error;

use crate::netmodel::BusInjection;
use crate::scalar::{cabs, carg, cis, cscale, im_wirtinger, j, lit, re_wirtinger, Cx, Real};

pub const STATES_PER_DEVICE: usize = 4;
pub const DELTA: usize = 0;
pub const OMEGA: usize = 1;
pub const EMF: usize = 2;
pub const EXC: usize = 3;

/// Voltages below this magnitude make `|V|` non-differentiable for the exciter rows.
const V_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeviceError {
    #[error("device at bus index {bus}: parameter `{field}` must be {rule}")]
    InvalidParameter { bus: usize, field: &'static str, rule: &'static str },
    #[error("device at bus index {bus}: terminal voltage magnitude {v:e} too small")]
    LowVoltage { bus: usize, v: f64 },
}

/// One-axis synchronous generator with a first-order exciter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgParams<T> {
    pub xd: T,
    pub xq: T,
    pub xd_p: T,
    pub td0_p: T,
    pub ka: T,
    pub ta: T,
    /// Inertia constant (s).
    pub h: T,
    pub d: T,
    /// Base angular frequency (rad/s).
    pub omega_b: T,
    pub v_ref: T,
    pub p_m: T,
}

/// Grid-forming converter with reactive droop and a voltage outer loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GfmParams<T> {
    /// Coupling reactance.
    pub xl: T,
    /// Integral time constant of the internal voltage.
    pub ki: T,
    /// Virtual damping.
    pub kd: T,
    pub tw: T,
    pub ku: T,
    pub kq: T,
    /// Virtual inertia constant (s).
    pub h: T,
    /// Additional frequency damping.
    pub d: T,
    pub omega_b: T,
    pub v_ref: T,
    pub q_ref: T,
    pub p_ref: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeviceModel<T> {
    Sg(SgParams<T>),
    Gfm(GfmParams<T>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Device<T> {
    /// Dense bus index.
    pub bus: usize,
    pub model: DeviceModel<T>,
}

/// Typed view of a generator's state slice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgState<T> {
    pub delta: T,
    pub omega: T,
    pub eq_p: T,
    pub efd: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GfmState<T> {
    pub delta: T,
    pub omega: T,
    pub e_vir: T,
    pub e_vir_fd: T,
}

impl<T: Copy> SgState<T> {
    pub fn to_array(self) -> [T; 4] {
        [self.delta, self.omega, self.eq_p, self.efd]
    }
    pub fn from_slice(x: &[T]) -> Self {
        SgState { delta: x[0], omega: x[1], eq_p: x[2], efd: x[3] }
    }
}

impl<T: Copy> GfmState<T> {
    pub fn to_array(self) -> [T; 4] {
        [self.delta, self.omega, self.e_vir, self.e_vir_fd]
    }
    pub fn from_slice(x: &[T]) -> Self {
        GfmState { delta: x[0], omega: x[1], e_vir: x[2], e_vir_fd: x[3] }
    }
}

/// Right-hand side and all first-order partials of one device at `(x, V)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DevicePartials<T> {
    pub f: [T; 4],
    pub inj: BusInjection<T>,
    /// `dg/dx` for the four local states.
    pub dg_dx: [Cx<T>; 4],
    /// Wirtinger partial of each (real) state derivative with respect to `V`.
    pub df_dv: [Cx<T>; 4],
    /// Partial with respect to `conj(V)`; equals `conj(df_dv)` because every row is real.
    pub df_dvbar: [Cx<T>; 4],
    /// `df/dx` for the local states, row = equation.
    pub df_dx: [[T; 4]; 4],
}

fn positive<T: Real>(bus: usize, field: &'static str, v: T) -> Result<(), DeviceError> {
    if v > T::zero() && v.is_finite() {
        Ok(())
    } else {
        Err(DeviceError::InvalidParameter { bus, field, rule: "positive and finite" })
    }
}

fn nonneg<T: Real>(bus: usize, field: &'static str, v: T) -> Result<(), DeviceError> {
    if v >= T::zero() && v.is_finite() {
        Ok(())
    } else {
        Err(DeviceError::InvalidParameter { bus, field, rule: "non-negative and finite" })
    }
}

impl<T: Real> Device<T> {
    pub fn validate(&self) -> Result<(), DeviceError> {
        let b = self.bus;
        match &self.model {
            DeviceModel::Sg(p) => {
                positive(b, "xd", p.xd)?;
                positive(b, "xq", p.xq)?;
                positive(b, "xd_p", p.xd_p)?;
                positive(b, "td0_p", p.td0_p)?;
                positive(b, "ka", p.ka)?;
                positive(b, "ta", p.ta)?;
                positive(b, "h", p.h)?;
                nonneg(b, "d", p.d)?;
                positive(b, "omega_b", p.omega_b)?;
                if p.xd_p > p.xd {
                    return Err(DeviceError::InvalidParameter { bus: b, field: "xd_p", rule: "no larger than xd" });
                }
            }
            DeviceModel::Gfm(p) => {
                positive(b, "xl", p.xl)?;
                positive(b, "ki", p.ki)?;
                nonneg(b, "kd", p.kd)?;
                positive(b, "tw", p.tw)?;
                positive(b, "ku", p.ku)?;
                nonneg(b, "kq", p.kq)?;
                positive(b, "h", p.h)?;
                nonneg(b, "d", p.d)?;
                positive(b, "omega_b", p.omega_b)?;
            }
        }
        Ok(())
    }

    pub fn is_sg(&self) -> bool {
        matches!(self.model, DeviceModel::Sg(_))
    }

    pub fn v_ref(&self) -> T {
        match &self.model {
            DeviceModel::Sg(p) => p.v_ref,
            DeviceModel::Gfm(p) => p.v_ref,
        }
    }

    pub fn set_v_ref(&mut self, v: T) {
        match &mut self.model {
            DeviceModel::Sg(p) => p.v_ref = v,
            DeviceModel::Gfm(p) => p.v_ref = v,
        }
    }

    /// Static exciter gain, `K_A` or `K_u`.
    pub fn exciter_gain(&self) -> T {
        match &self.model {
            DeviceModel::Sg(p) => p.ka,
            DeviceModel::Gfm(p) => p.ku,
        }
    }

    /// Time constant of the exciter state over that of the internal voltage.
    /// Used to fold the exciter rows into the internal-voltage rows.
    pub fn exciter_time_ratio(&self) -> T {
        match &self.model {
            DeviceModel::Sg(p) => p.ta / p.td0_p,
            DeviceModel::Gfm(p) => p.tw / p.ki,
        }
    }

    /// Sensitivity of the internal-voltage rate to the voltage reference once the
    /// exciter is folded in: `K_A / T'_d0` or `K_u / K_i`.
    pub fn reference_gain(&self) -> T {
        match &self.model {
            DeviceModel::Sg(p) => p.ka / p.td0_p,
            DeviceModel::Gfm(p) => p.ku / p.ki,
        }
    }

    /// `dg/dV / conj(V)`: the part of the injection proportional to `V`,
    /// which can be absorbed into the admittance matrix.
    pub fn shunt_term(&self) -> Cx<T> {
        match &self.model {
            DeviceModel::Sg(p) => cscale(j(), lit::<T>(0.5) * (T::one() / p.xq + T::one() / p.xd_p)),
            DeviceModel::Gfm(p) => cscale(j(), T::one() / p.xl),
        }
    }

    pub fn injection(&self, x: &[T], v: Cx<T>) -> BusInjection<T> {
        match &self.model {
            DeviceModel::Sg(p) => sg_injection(p, &SgState::from_slice(x), v).0,
            DeviceModel::Gfm(p) => gfm_injection(p, &GfmState::from_slice(x), v).0,
        }
    }

    pub fn derivative(&self, x: &[T], v: Cx<T>) -> Result<[T; 4], DeviceError> {
        Ok(self.partials(x, v)?.f)
    }

    pub fn partials(&self, x: &[T], v: Cx<T>) -> Result<DevicePartials<T>, DeviceError> {
        let vm = cabs(v);
        if !(vm > lit(V_FLOOR)) {
            return Err(DeviceError::LowVoltage { bus: self.bus, v: vm.as_f64() });
        }
        Ok(match &self.model {
            DeviceModel::Sg(p) => sg_partials(p, &SgState::from_slice(x), v, vm),
            DeviceModel::Gfm(p) => gfm_partials(p, &GfmState::from_slice(x), v, vm),
        })
    }

    /// Exciter output with the exciter dynamics taken as instantaneous.
    pub fn quasi_steady_exciter(&self, v: Cx<T>) -> T {
        quasi_steady_exciter(self, v)
    }

    /// Equilibrium state for a terminal voltage `v` and generated power `s`.
    /// Sets the references (`v_ref`, `p_m`/`p_ref`, `q_ref`) so that the returned state is stationary.
    pub fn initialize(&mut self, v: Cx<T>, s: Cx<T>) -> Result<[T; 4], DeviceError> {
        let vm = cabs(v);
        if !(vm > lit(V_FLOOR)) {
            return Err(DeviceError::LowVoltage { bus: self.bus, v: vm.as_f64() });
        }
        let i = (s / v).conj();
        match &mut self.model {
            DeviceModel::Sg(p) => {
                let delta = carg(v + j::<T>() * i * p.xq);
                let rot = cis(-delta);
                let vq = (v * rot).re;
                let id = -(i * rot).im;
                let eq = vq + p.xd_p * id;
                let k = p.xd / p.xd_p;
                let efd = k * eq - (k - T::one()) * vq;
                p.v_ref = vm + efd / p.ka;
                p.p_m = s.re;
                Ok([delta, T::zero(), eq, efd])
            }
            DeviceModel::Gfm(p) => {
                let e = v + j::<T>() * i * p.xl;
                p.v_ref = vm;
                p.q_ref = s.im;
                p.p_ref = s.re;
                Ok([carg(e), T::zero(), cabs(e), T::zero()])
            }
        }
    }
}

/// Generator injection and its partials with respect to `V`, `conj(V)`, delta and `E'q`.
fn sg_core<T: Real>(p: &SgParams<T>, s: &SgState<T>, v: Cx<T>) -> (BusInjection<T>, Cx<T>, Cx<T>) {
    let e1 = cis(s.delta);
    let e2 = cis(s.delta + s.delta);
    let vb = v.conj();
    let inv_xdp = T::one() / p.xd_p;
    let inv_xq = T::one() / p.xq;
    let a = cscale(j(), lit::<T>(0.5) * (inv_xq + inv_xdp));
    let c = cscale(j(), lit::<T>(0.5) * (inv_xdp - inv_xq));
    let jj = j::<T>();
    let g = -jj * e1 * vb * (s.eq_p * inv_xdp) + a * v.norm_sqr() + c * vb * vb * e2;
    let dg_dv = a * vb;
    let dg_dvbar = -jj * e1 * (s.eq_p * inv_xdp) + a * v + c * vb * e2 * lit::<T>(2.0);
    let dg_ddelta = e1 * vb * (s.eq_p * inv_xdp) + jj * c * vb * vb * e2 * lit::<T>(2.0);
    let dg_de = -jj * e1 * vb * inv_xdp;
    (BusInjection { g, dg_dv, dg_dvbar }, dg_ddelta, dg_de)
}

/// Conjugate power injection of a generator, with `dg/d delta` and `dg/dE'q`.
pub fn sg_injection<T: Real>(p: &SgParams<T>, s: &SgState<T>, v: Cx<T>) -> (BusInjection<T>, Cx<T>, Cx<T>) {
    sg_core(p, s, v)
}

pub fn sg_derivative<T: Real>(p: &SgParams<T>, s: &SgState<T>, v: Cx<T>) -> Result<[T; 4], DeviceError> {
    let vm = cabs(v);
    if !(vm > lit(V_FLOOR)) {
        return Err(DeviceError::LowVoltage { bus: usize::MAX, v: vm.as_f64() });
    }
    Ok(sg_partials(p, s, v, vm).f)
}

fn sg_partials<T: Real>(p: &SgParams<T>, s: &SgState<T>, v: Cx<T>, vm: T) -> DevicePartials<T> {
    let (inj, dg_ddelta, dg_de) = sg_core(p, s, v);
    let two_h = p.h + p.h;
    let k = p.xd / p.xd_p;
    let rot = cis(-s.delta);
    let vrot = v * rot;
    let pe = inj.g.re;

    let f = [
        p.omega_b * s.omega,
        (p.p_m - pe - p.d * s.omega) / two_h,
        (s.efd - k * s.eq_p + (k - T::one()) * vrot.re) / p.td0_p,
        (p.ka * (p.v_ref - vm) - s.efd) / p.ta,
    ];

    let zero = Complex::new(T::zero(), T::zero());
    let dpe_dv = re_wirtinger(inj.dg_dv, inj.dg_dvbar);
    let df_dv = [
        zero,
        cscale(dpe_dv, -T::one() / two_h),
        cscale(rot, lit::<T>(0.5) * (k - T::one()) / p.td0_p),
        cscale(v.conj(), -p.ka / (lit::<T>(2.0) * vm * p.ta)),
    ];
    let mut df_dx = [[T::zero(); 4]; 4];
    df_dx[0][OMEGA] = p.omega_b;
    df_dx[1][DELTA] = -dg_ddelta.re / two_h;
    df_dx[1][OMEGA] = -p.d / two_h;
    df_dx[1][EMF] = -dg_de.re / two_h;
    df_dx[2][DELTA] = (k - T::one()) * vrot.im / p.td0_p;
    df_dx[2][EMF] = -k / p.td0_p;
    df_dx[2][EXC] = T::one() / p.td0_p;
    df_dx[3][EXC] = -T::one() / p.ta;

    DevicePartials { f, inj, dg_dx: [dg_ddelta, zero, dg_de, zero], df_dv, df_dvbar: df_dv.map(|z| z.conj()), df_dx }
}

fn gfm_core<T: Real>(p: &GfmParams<T>, s: &GfmState<T>, v: Cx<T>) -> (BusInjection<T>, Cx<T>, Cx<T>) {
    let e1 = cis(s.delta);
    let vb = v.conj();
    let jj = j::<T>();
    let inv_xl = T::one() / p.xl;
    let internal = e1 * s.e_vir;
    let g = -jj * vb * (internal - v) * inv_xl;
    let dg_dv = jj * vb * inv_xl;
    let dg_dvbar = -jj * (internal - v) * inv_xl;
    let dg_ddelta = vb * internal * inv_xl;
    let dg_de = -jj * vb * e1 * inv_xl;
    (BusInjection { g, dg_dv, dg_dvbar }, dg_ddelta, dg_de)
}

/// Conjugate power injection of a converter, with `dg/d delta` and `dg/dE_vir`.
pub fn gfm_injection<T: Real>(p: &GfmParams<T>, s: &GfmState<T>, v: Cx<T>) -> (BusInjection<T>, Cx<T>, Cx<T>) {
    gfm_core(p, s, v)
}

/// Reactive power delivered by a converter at terminal voltage `v`.
pub fn gfm_reactive_power<T: Real>(p: &GfmParams<T>, s: &GfmState<T>, v: Cx<T>) -> T {
    -gfm_core(p, s, v).0.g.im
}

pub fn gfm_derivative<T: Real>(p: &GfmParams<T>, s: &GfmState<T>, v: Cx<T>) -> Result<[T; 4], DeviceError> {
    let vm = cabs(v);
    if !(vm > lit(V_FLOOR)) {
        return Err(DeviceError::LowVoltage { bus: usize::MAX, v: vm.as_f64() });
    }
    Ok(gfm_partials(p, s, v, vm).f)
}

fn gfm_partials<T: Real>(p: &GfmParams<T>, s: &GfmState<T>, v: Cx<T>, vm: T) -> DevicePartials<T> {
    let (inj, dg_ddelta, dg_de) = gfm_core(p, s, v);
    let two_h = p.h + p.h;
    let pe = inj.g.re;
    let qc = -inj.g.im;
    let damp = p.kd + p.d;

    let f = [
        p.omega_b * s.omega,
        (p.p_ref - pe - damp * s.omega) / two_h,
        (p.kq * (p.q_ref - qc) + s.e_vir_fd) / p.ki,
        (p.ku * (p.v_ref - vm) - s.e_vir_fd) / p.tw,
    ];

    let zero = Complex::new(T::zero(), T::zero());
    let dpe_dv = re_wirtinger(inj.dg_dv, inj.dg_dvbar);
    // Q = -Im(g)
    let dq_dv = -im_wirtinger(inj.dg_dv, inj.dg_dvbar);
    let df_dv = [
        zero,
        cscale(dpe_dv, -T::one() / two_h),
        cscale(dq_dv, -p.kq / p.ki),
        cscale(v.conj(), -p.ku / (lit::<T>(2.0) * vm * p.tw)),
    ];
    let mut df_dx = [[T::zero(); 4]; 4];
    df_dx[0][OMEGA] = p.omega_b;
    df_dx[1][DELTA] = -dg_ddelta.re / two_h;
    df_dx[1][OMEGA] = -damp / two_h;
    df_dx[1][EMF] = -dg_de.re / two_h;
    df_dx[2][DELTA] = p.kq * dg_ddelta.im / p.ki;
    df_dx[2][EMF] = p.kq * dg_de.im / p.ki;
    df_dx[2][EXC] = T::one() / p.ki;
    df_dx[3][EXC] = -T::one() / p.tw;

    DevicePartials { f, inj, dg_dx: [dg_ddelta, zero, dg_de, zero], df_dv, df_dvbar: df_dv.map(|z| z.conj()), df_dx }
}

/// Exciter output when its dynamics are much faster than the internal voltage:
/// `K (V_ref - |V|)`.
pub fn quasi_steady_exciter<T: Real>(dev: &Device<T>, v: Cx<T>) -> T {
    dev.exciter_gain() * (dev.v_ref() - cabs(v))
}

/// Constant-power load that converts to constant impedance below `v_min`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PqLoad<T> {
    pub bus: usize,
    /// Consumed complex power.
    pub s: Cx<T>,
    pub v_min: T,
}

impl<T: Real> PqLoad<T> {
    pub fn injection(&self, v: Cx<T>) -> BusInjection<T> {
        let sc = self.s.conj();
        let vm2 = v.norm_sqr();
        let vmin2 = self.v_min * self.v_min;
        if vm2 >= vmin2 {
            let z = Complex::new(T::zero(), T::zero());
            BusInjection { g: -sc, dg_dv: z, dg_dvbar: z }
        } else {
            let k = -sc / vmin2;
            BusInjection { g: k * vm2, dg_dv: k * v.conj(), dg_dvbar: k * v }
        }
    }
}

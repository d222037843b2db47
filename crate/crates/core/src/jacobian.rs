//! Trajectory Jacobians of the differential-algebraic model.
//!
//! Linearising `conj(V) .* (Y V) = g(x, V)` gives
//! `A dV + B dconj(V) = C dx` with
//! `A = diag(conj V) Y - dg/dV`, `B = diag(g / conj V) - dg/dconj(V)`, `C = dg/dx`.
//! Eliminating `dconj(V)` yields the exact voltage sensitivity
//! `dV/dx = (A - B conj(A)^-1 conj(B))^-1 (C - B conj(A)^-1 conj(C))`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use thiserror::Error;

use crate::devices::{DeviceError, DevicePartials, STATES_PER_DEVICE};
use crate::scalar::{cabs, Cx, Real};
use crate::system::PowerSystem;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum JacobianError {
    #[error("voltage sensitivity is singular ({0})")]
    Singular(&'static str),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SensitivityMethod {
    /// Full elimination of the conjugate voltage.
    Exact,
    /// Drops the conjugate coupling: `dV/dx ~ A^-1 C`.
    Approx,
}

impl SensitivityMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            SensitivityMethod::Exact => "exact",
            SensitivityMethod::Approx => "approx",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SensitivityBundle<T: Real> {
    pub a: DMatrix<Cx<T>>,
    /// Diagonal of `B` (it is diagonal because injections are bus-local).
    pub b: DVector<Cx<T>>,
    pub c: DMatrix<Cx<T>>,
    pub partials: Vec<DevicePartials<T>>,
}

impl<T: Real> SensitivityBundle<T> {
    pub fn b_matrix(&self) -> DMatrix<Cx<T>> {
        DMatrix::from_diagonal(&self.b)
    }
}

/// Assemble `A`, `B` and `C` at the operating point `(x, V)`.
pub fn assemble_abc<T: Real>(
    sys: &PowerSystem<T>,
    x: &[T],
    v: &DVector<Cx<T>>,
) -> Result<SensitivityBundle<T>, JacobianError> {
    let n = sys.n_bus();
    let m = sys.n_states();
    if x.len() != m {
        return Err(JacobianError::DimensionMismatch { expected: m, got: x.len() });
    }
    if v.len() != n {
        return Err(JacobianError::DimensionMismatch { expected: n, got: v.len() });
    }
    let zero = Complex::new(T::zero(), T::zero());
    let y = sys.net.y();
    let mut a = DMatrix::from_fn(n, n, |i, k| v[i].conj() * y[(i, k)]);
    let mut g = vec![zero; n];
    let mut dg_dvbar = vec![zero; n];
    let mut c = DMatrix::from_element(n, m, zero);
    let mut partials = Vec::with_capacity(sys.devices.len());
    for (k, d) in sys.devices.iter().enumerate() {
        let xs = &x[k * STATES_PER_DEVICE..(k + 1) * STATES_PER_DEVICE];
        let p = d.partials(xs, v[d.bus])?;
        a[(d.bus, d.bus)] -= p.inj.dg_dv;
        g[d.bus] += p.inj.g;
        dg_dvbar[d.bus] += p.inj.dg_dvbar;
        for s in 0..STATES_PER_DEVICE {
            c[(d.bus, k * STATES_PER_DEVICE + s)] = p.dg_dx[s];
        }
        partials.push(p);
    }
    for l in &sys.loads {
        let inj = l.injection(v[l.bus]);
        a[(l.bus, l.bus)] -= inj.dg_dv;
        g[l.bus] += inj.g;
        dg_dvbar[l.bus] += inj.dg_dvbar;
    }
    let b = DVector::from_fn(n, |i, _| g[i] / v[i].conj() - dg_dvbar[i]);
    Ok(SensitivityBundle { a, b, c, partials })
}

/// `dV/dx` by eliminating `dconj(V)`, or the approximation `A^-1 C`.
pub fn voltage_sensitivity<T: Real>(
    bundle: &SensitivityBundle<T>,
    method: SensitivityMethod,
) -> Result<DMatrix<Cx<T>>, JacobianError> {
    let lu = bundle.a.clone().lu();
    match method {
        SensitivityMethod::Approx => lu.solve(&bundle.c).ok_or(JacobianError::Singular("A")),
        SensitivityMethod::Exact => {
            let abar_lu = bundle.a.map(|z| z.conj()).lu();
            let bbar = DMatrix::from_diagonal(&bundle.b.map(|z| z.conj()));
            let cbar = bundle.c.map(|z| z.conj());
            let x1 = abar_lu.solve(&bbar).ok_or(JacobianError::Singular("conj(A)"))?;
            let x2 = abar_lu.solve(&cbar).ok_or(JacobianError::Singular("conj(A)"))?;
            // rows of x1, x2 scaled by diag(B)
            let mut schur = bundle.a.clone();
            let mut rhs = bundle.c.clone();
            for i in 0..schur.nrows() {
                let bi = bundle.b[i];
                for k in 0..schur.ncols() {
                    schur[(i, k)] -= bi * x1[(i, k)];
                }
                for k in 0..rhs.ncols() {
                    rhs[(i, k)] -= bi * x2[(i, k)];
                }
            }
            let out = schur.lu().solve(&rhs).ok_or(JacobianError::Singular("Schur complement"))?;
            if out.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
                return Err(JacobianError::Singular("Schur complement"));
            }
            Ok(out)
        }
    }
}

/// `dV/dx` from the real-valued system `[A + B, j(A - B)] [dVr; dVi] = C`.
/// Independent of the Schur route; used to cross-check it.
pub fn voltage_sensitivity_stacked<T: Real>(bundle: &SensitivityBundle<T>) -> Result<DMatrix<Cx<T>>, JacobianError> {
    let n = bundle.a.nrows();
    let m = bundle.c.ncols();
    let mut big = DMatrix::<T>::zeros(2 * n, 2 * n);
    let jj = Complex::new(T::zero(), T::one());
    for i in 0..n {
        for k in 0..n {
            let bik = if i == k { bundle.b[i] } else { Complex::new(T::zero(), T::zero()) };
            let p = bundle.a[(i, k)] + bik;
            let q = jj * (bundle.a[(i, k)] - bik);
            big[(i, k)] = p.re;
            big[(n + i, k)] = p.im;
            big[(i, n + k)] = q.re;
            big[(n + i, n + k)] = q.im;
        }
    }
    let mut rhs = DMatrix::<T>::zeros(2 * n, m);
    for i in 0..n {
        for k in 0..m {
            rhs[(i, k)] = bundle.c[(i, k)].re;
            rhs[(n + i, k)] = bundle.c[(i, k)].im;
        }
    }
    let sol = big.lu().solve(&rhs).ok_or(JacobianError::Singular("stacked"))?;
    Ok(DMatrix::from_fn(n, m, |i, k| Complex::new(sol[(i, k)], sol[(n + i, k)])))
}

/// `J = 2 Re(dF/dV dV/dx) + dF/dx`, the Jacobian of the state equations
/// along the algebraic constraint.
pub fn trajectory_jacobian<T: Real>(
    sys: &PowerSystem<T>,
    bundle: &SensitivityBundle<T>,
    dvdx: &DMatrix<Cx<T>>,
) -> DMatrix<T> {
    let m = sys.n_states();
    let two = T::lit(2.0);
    let mut jac = DMatrix::<T>::zeros(m, m);
    for (k, d) in sys.devices.iter().enumerate() {
        let p = &bundle.partials[k];
        for r in 0..STATES_PER_DEVICE {
            let row = k * STATES_PER_DEVICE + r;
            let fv = p.df_dv[r];
            if fv.re != T::zero() || fv.im != T::zero() {
                for col in 0..m {
                    let z = dvdx[(d.bus, col)];
                    jac[(row, col)] = two * (fv.re * z.re - fv.im * z.im);
                }
            }
            for s in 0..STATES_PER_DEVICE {
                jac[(row, k * STATES_PER_DEVICE + s)] += p.df_dx[r][s];
            }
        }
    }
    jac
}

/// Internal-voltage Jacobian with each exciter folded into its internal-voltage row:
/// `J_red = J[E,E] + diag(tau) J[Efd,E]` where `tau` is the exciter time constant over
/// the internal-voltage time constant.
pub fn reduced_jacobian<T: Real>(sys: &PowerSystem<T>, j_full: &DMatrix<T>) -> DMatrix<T> {
    let p = sys.devices.len();
    DMatrix::from_fn(p, p, |i, k| {
        let ei = PowerSystem::<T>::emf_index(i);
        let fi = PowerSystem::<T>::exc_index(i);
        let ek = PowerSystem::<T>::emf_index(k);
        j_full[(ei, ek)] + sys.devices[i].exciter_time_ratio() * j_full[(fi, ek)]
    })
}

/// Input matrix of the reduced model for the voltage references, one column per device.
pub fn reference_input_matrix<T: Real>(sys: &PowerSystem<T>) -> DMatrix<T> {
    let gains: Vec<T> = sys.devices.iter().map(|d| d.reference_gain()).collect();
    DMatrix::from_diagonal(&DVector::from_vec(gains))
}

/// `d|V_i|/dE_k` for every bus `i` and internal-voltage state `k`.
pub fn voltage_magnitude_sensitivity<T: Real>(
    sys: &PowerSystem<T>,
    v: &DVector<Cx<T>>,
    dvdx: &DMatrix<Cx<T>>,
) -> DMatrix<T> {
    let n = sys.n_bus();
    let p = sys.devices.len();
    DMatrix::from_fn(n, p, |i, k| {
        let z = dvdx[(i, PowerSystem::<T>::emf_index(k))];
        let vm = cabs(v[i]);
        (v[i].conj() * z).re / vm
    })
}

/// Everything the analysis needs at one operating point.
#[derive(Debug, Clone)]
pub struct JacobianReport<T: Real> {
    pub t: f64,
    pub method: SensitivityMethod,
    pub j_full: DMatrix<T>,
    pub j_reduced: DMatrix<T>,
    /// `d|V|/dE`, buses by internal-voltage states.
    pub dvmag_de: DMatrix<T>,
    pub dvdx: DMatrix<Cx<T>>,
    pub bundle: SensitivityBundle<T>,
    pub labels: Vec<String>,
}

pub fn jacobian_at<T: Real>(
    sys: &PowerSystem<T>,
    x: &[T],
    v: &DVector<Cx<T>>,
    method: SensitivityMethod,
    t: f64,
) -> Result<JacobianReport<T>, JacobianError> {
    let bundle = assemble_abc(sys, x, v)?;
    let dvdx = voltage_sensitivity(&bundle, method)?;
    let j_full = trajectory_jacobian(sys, &bundle, &dvdx);
    let j_reduced = reduced_jacobian(sys, &j_full);
    let dvmag_de = voltage_magnitude_sensitivity(sys, v, &dvdx);
    Ok(JacobianReport { t, method, j_full, j_reduced, dvmag_de, dvdx, bundle, labels: sys.state_labels() })
}

/// State derivative of the whole system at `(x, V)`.
pub fn state_derivative<T: Real>(sys: &PowerSystem<T>, x: &[T], v: &DVector<Cx<T>>) -> Result<DVector<T>, DeviceError> {
    let mut f = DVector::<T>::zeros(sys.n_states());
    for (k, d) in sys.devices.iter().enumerate() {
        let xs = &x[k * STATES_PER_DEVICE..(k + 1) * STATES_PER_DEVICE];
        let fk = d.derivative(xs, v[d.bus])?;
        for r in 0..STATES_PER_DEVICE {
            f[k * STATES_PER_DEVICE + r] = fk[r];
        }
    }
    Ok(f)
}

/// Largest per-column relative difference `max_i |a_ij - b_ij| / max(max_i |b_ij|, floor)`.
pub fn column_relative_error<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>, floor: f64) -> f64 {
    let mut worst = 0.0f64;
    for c in 0..a.ncols() {
        let scale = (0..b.nrows()).fold(0.0f64, |m, r| m.max(b[(r, c)].as_f64().abs())).max(floor);
        for r in 0..a.nrows() {
            worst = worst.max((a[(r, c)].as_f64() - b[(r, c)].as_f64()).abs() / scale);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case_io::bundled_system;
    use crate::system::init_equilibrium;

    #[test]
    fn exact_matches_stacked_route() {
        let sys = bundled_system::<f64>("case39_gfm").unwrap();
        let eq = init_equilibrium(&sys).unwrap();
        let b = assemble_abc(&eq.system, eq.x.as_slice(), &eq.v).unwrap();
        let e = voltage_sensitivity(&b, SensitivityMethod::Exact).unwrap();
        let s = voltage_sensitivity_stacked(&b).unwrap();
        let diff = (&e - &s).iter().fold(0.0f64, |m, z| m.max(z.norm()));
        let scale = s.iter().fold(0.0f64, |m, z| m.max(z.norm()));
        assert!(diff <= 1e-9 * scale, "{diff} vs {scale}");
    }

    #[test]
    fn approx_differs_from_exact() {
        let sys = bundled_system::<f64>("case39_sg").unwrap();
        let eq = init_equilibrium(&sys).unwrap();
        let b = assemble_abc(&eq.system, eq.x.as_slice(), &eq.v).unwrap();
        let e = voltage_sensitivity(&b, SensitivityMethod::Exact).unwrap();
        let a = voltage_sensitivity(&b, SensitivityMethod::Approx).unwrap();
        assert!((&e - &a).iter().any(|z| z.norm() > 1e-6));
    }

    #[test]
    fn constant_exciter_entries() {
        let sys = bundled_system::<f64>("case39_gfm").unwrap();
        let eq = init_equilibrium(&sys).unwrap();
        let r = jacobian_at(&eq.system, eq.x.as_slice(), &eq.v, SensitivityMethod::Exact, 0.0).unwrap();
        for (k, d) in eq.system.devices.iter().enumerate() {
            let e = PowerSystem::<f64>::emf_index(k);
            let f = PowerSystem::<f64>::exc_index(k);
            match d.model {
                crate::devices::DeviceModel::Sg(p) => {
                    assert_eq!(r.j_full[(f, f)], -1.0 / p.ta);
                    assert_eq!(r.j_full[(e, f)], 1.0 / p.td0_p);
                }
                crate::devices::DeviceModel::Gfm(p) => {
                    assert_eq!(r.j_full[(f, f)], -1.0 / p.tw);
                    assert_eq!(r.j_full[(e, f)], 1.0 / p.ki);
                }
            }
        }
    }

    #[test]
    fn column_error_metric() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 2.0, 1e-3]);
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 2.2, 1e-3]);
        assert!((column_relative_error(&a, &b, 1e-12) - 0.2 / 2.2).abs() < 1e-12);
    }
}

//! Bus/branch network: admittance matrix, fault shunts, the algebraic
//! network solve and the device-augmented impedance matrix.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use std::collections::VecDeque;
use thiserror::Error;

use crate::scalar::{cabs, cscale, lit, Cx, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BusKind {
    Slack,
    Device,
    Load,
    Passive,
}

impl BusKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BusKind::Slack => "slack",
            BusKind::Device => "device",
            BusKind::Load => "load",
            BusKind::Passive => "passive",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "slack" => BusKind::Slack,
            "device" => BusKind::Device,
            "load" => BusKind::Load,
            "passive" => BusKind::Passive,
            _ => return None,
        })
    }
}

/// A bus. Internally buses are addressed by their position (dense index);
/// `number` is the label used in case files and on the command line.
#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub number: u32,
    pub base_kv: f64,
    pub kind: BusKind,
}

/// Pi-model branch with an off-nominal tap on the `from` side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Branch<T> {
    pub from: usize,
    pub to: usize,
    pub r: T,
    pub x: T,
    pub b_shunt: T,
    /// Turns ratio; 1 for lines.
    pub tap: T,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("more than one slack bus (buses {0} and {1})")]
    DuplicateSlack(u32, u32),
    #[error("no slack bus")]
    NoSlack,
    #[error("singular network matrix")]
    SingularNetwork,
    #[error("network solve did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone)]
pub struct NetworkModel<T: Real> {
    buses: Vec<Bus>,
    branches: Vec<Branch<T>>,
    slack: usize,
    /// Branches plus constant-admittance shunts, no faults.
    y_base: DMatrix<Cx<T>>,
    /// Active fault shunts, at most one per bus.
    faults: Vec<(usize, Cx<T>)>,
    y: DMatrix<Cx<T>>,
}

/// Build the bus admittance matrix.
///
/// `shunts` are constant admittances to ground (constant-impedance loads,
/// capacitor banks) added on the diagonal.
pub fn build_admittance<T: Real>(
    buses: Vec<Bus>,
    branches: Vec<Branch<T>>,
    shunts: &[(usize, Cx<T>)],
) -> Result<NetworkModel<T>, NetError> {
    let n = buses.len();
    if n == 0 {
        return Err(NetError::InvalidTopology("network has no buses".into()));
    }
    let mut slack: Option<usize> = None;
    for (i, b) in buses.iter().enumerate() {
        if buses[..i].iter().any(|o| o.number == b.number) {
            return Err(NetError::InvalidTopology(format!("duplicate bus number {}", b.number)));
        }
        if b.kind == BusKind::Slack {
            if let Some(s) = slack {
                return Err(NetError::DuplicateSlack(buses[s].number, b.number));
            }
            slack = Some(i);
        }
    }
    let slack = slack.ok_or(NetError::NoSlack)?;

    let mut y = DMatrix::<Cx<T>>::zeros(n, n);
    let mut adj = vec![Vec::new(); n];
    for (k, br) in branches.iter().enumerate() {
        if br.from >= n || br.to >= n {
            return Err(NetError::InvalidTopology(format!("branch {k} references a missing bus")));
        }
        if br.from == br.to {
            return Err(NetError::InvalidTopology(format!("branch {k} is a self-loop")));
        }
        let z = Complex::new(br.r, br.x);
        if z.norm_sqr() == T::zero() {
            return Err(NetError::InvalidTopology(format!("branch {k} has zero impedance")));
        }
        if !(br.tap > T::zero()) {
            return Err(NetError::InvalidTopology(format!("branch {k} has a non-positive tap")));
        }
        let ys = z.inv();
        let half_b = Complex::new(T::zero(), br.b_shunt * lit(0.5));
        let t = br.tap;
        let (f, to) = (br.from, br.to);
        y[(f, f)] += cscale(ys + half_b, T::one() / (t * t));
        y[(to, to)] += ys + half_b;
        y[(f, to)] -= cscale(ys, T::one() / t);
        y[(to, f)] -= cscale(ys, T::one() / t);
        adj[f].push(to);
        adj[to].push(f);
    }

    // every bus must be reachable from the slack
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([slack]);
    seen[slack] = true;
    while let Some(i) = queue.pop_front() {
        for &k in &adj[i] {
            if !seen[k] {
                seen[k] = true;
                queue.push_back(k);
            }
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(NetError::InvalidTopology(format!("bus {} is not connected to the slack bus", buses[i].number)));
    }

    for &(i, ysh) in shunts {
        if i >= n {
            return Err(NetError::InvalidTopology("shunt references a missing bus".into()));
        }
        y[(i, i)] += ysh;
    }

    Ok(NetworkModel { buses, branches, slack, y: y.clone(), y_base: y, faults: Vec::new() })
}

impl<T: Real> NetworkModel<T> {
    pub fn n(&self) -> usize {
        self.buses.len()
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn branches(&self) -> &[Branch<T>] {
        &self.branches
    }

    pub fn slack(&self) -> usize {
        self.slack
    }

    /// Effective admittance matrix including active fault shunts.
    pub fn y(&self) -> &DMatrix<Cx<T>> {
        &self.y
    }

    /// Admittance without any fault shunts.
    pub fn y_prefault(&self) -> &DMatrix<Cx<T>> {
        &self.y_base
    }

    pub fn faults(&self) -> &[(usize, Cx<T>)] {
        &self.faults
    }

    pub fn index_of(&self, number: u32) -> Option<usize> {
        self.buses.iter().position(|b| b.number == number)
    }

    /// Apply a shunt fault at `bus`. A second fault on the same bus replaces the first.
    pub fn fault_on(&mut self, bus: usize, y_fault: Cx<T>) {
        self.faults.retain(|(b, _)| *b != bus);
        self.faults.push((bus, y_fault));
        self.rebuild();
    }

    /// Remove the fault at `bus`. Restores the pre-fault matrix exactly.
    pub fn fault_off(&mut self, bus: usize) {
        self.faults.retain(|(b, _)| *b != bus);
        self.rebuild();
    }

    /// Add a permanent shunt admittance, e.g. a constant-impedance load change.
    pub fn add_shunt(&mut self, bus: usize, y_shunt: Cx<T>) {
        self.y_base[(bus, bus)] += y_shunt;
        self.rebuild();
    }

    fn rebuild(&mut self) {
        self.y.copy_from(&self.y_base);
        for &(b, yf) in &self.faults {
            self.y[(b, b)] += yf;
        }
    }

    /// Same network in another precision.
    pub fn cast<U: Real>(&self) -> NetworkModel<U> {
        let c = |z: &Cx<T>| Complex::new(U::lit(z.re.as_f64()), U::lit(z.im.as_f64()));
        NetworkModel {
            buses: self.buses.clone(),
            branches: self
                .branches
                .iter()
                .map(|b| Branch {
                    from: b.from,
                    to: b.to,
                    r: U::lit(b.r.as_f64()),
                    x: U::lit(b.x.as_f64()),
                    b_shunt: U::lit(b.b_shunt.as_f64()),
                    tap: U::lit(b.tap.as_f64()),
                })
                .collect(),
            slack: self.slack,
            y_base: self.y_base.map(|z| c(&z)),
            faults: self.faults.iter().map(|(b, z)| (*b, c(z))).collect(),
            y: self.y.map(|z| c(&z)),
        }
    }
}

/// `Y - diag(terms)`: folds the voltage-proportional part of each device
/// injection into the network matrix.
pub fn augmented_admittance<T: Real>(y: &DMatrix<Cx<T>>, terms: &[Cx<T>]) -> Result<DMatrix<Cx<T>>, NetError> {
    if terms.len() != y.nrows() {
        return Err(NetError::DimensionMismatch { expected: y.nrows(), got: terms.len() });
    }
    let mut ya = y.clone();
    for (i, t) in terms.iter().enumerate() {
        ya[(i, i)] -= *t;
    }
    Ok(ya)
}

/// Conjugate power injection at one bus and its Wirtinger partials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BusInjection<T> {
    pub g: Cx<T>,
    pub dg_dv: Cx<T>,
    pub dg_dvbar: Cx<T>,
}

impl<T: Real> Default for BusInjection<T> {
    fn default() -> Self {
        let z = Complex::new(T::zero(), T::zero());
        BusInjection { g: z, dg_dv: z, dg_dvbar: z }
    }
}

/// Bus-local injections `g_i(V_i)` entering `conj(V) .* (Y V) = g`.
pub trait Injection<T: Real> {
    fn eval(&self, v: &DVector<Cx<T>>, out: &mut [BusInjection<T>]);
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl NewtonOptions {
    pub fn for_type<T: Real>() -> Self {
        NewtonOptions { tol: T::NEWTON_TOL, max_iter: 50 }
    }
}

#[derive(Debug, Clone)]
pub struct NetworkSolution<T: Real> {
    pub v: DVector<Cx<T>>,
    pub iterations: usize,
    pub residual: T,
}

/// Residual `conj(V) .* (Y V) - g` and its infinity norm over real and imaginary parts.
pub fn network_residual<T: Real, I: Injection<T> + ?Sized>(
    y: &DMatrix<Cx<T>>,
    inj: &I,
    v: &DVector<Cx<T>>,
    buf: &mut [BusInjection<T>],
) -> (DVector<Cx<T>>, T) {
    inj.eval(v, buf);
    let yv = y * v;
    let mut norm = T::zero();
    let r = DVector::from_fn(v.len(), |i, _| {
        let ri = v[i].conj() * yv[i] - buf[i].g;
        norm = norm.max(ri.re.abs()).max(ri.im.abs());
        ri
    });
    (r, norm)
}

/// Current-form residual `Y V - g / conj(V)` and its infinity norm.
fn current_residual<T: Real, I: Injection<T> + ?Sized>(
    y: &DMatrix<Cx<T>>,
    inj: &I,
    v: &DVector<Cx<T>>,
    buf: &mut [BusInjection<T>],
) -> (DVector<Cx<T>>, T, T) {
    inj.eval(v, buf);
    let yv = y * v;
    let mut norm_i = T::zero();
    let mut norm_p = T::zero();
    let r = DVector::from_fn(v.len(), |i, _| {
        let vb = v[i].conj();
        let ri = yv[i] - buf[i].g / vb;
        let rp = vb * yv[i] - buf[i].g;
        norm_i = norm_i.max(ri.re.abs()).max(ri.im.abs());
        norm_p = norm_p.max(rp.re.abs()).max(rp.im.abs());
        ri
    });
    (r, norm_i, norm_p)
}

/// Damped Newton solve of the network equation on the real/imaginary split.
///
/// Iterates on the current balance `Y V = g / conj(V)`, which unlike the
/// power balance has no spurious root at `V_i = 0`; convergence is declared on
/// the power residual `conj(V) .* (Y V) - g`.
pub fn solve_network<T: Real, I: Injection<T> + ?Sized>(
    y: &DMatrix<Cx<T>>,
    inj: &I,
    v0: &DVector<Cx<T>>,
    opts: NewtonOptions,
) -> Result<NetworkSolution<T>, NetError> {
    let n = y.nrows();
    if v0.len() != n {
        return Err(NetError::DimensionMismatch { expected: n, got: v0.len() });
    }
    if v0.iter().any(|z| z.norm_sqr() == T::zero()) {
        return Err(NetError::SingularNetwork);
    }
    // the power residual cannot drop below the rounding level of the largest row of `Y V`
    let row_sum = (0..n).fold(0.0f64, |m, i| m.max((0..n).map(|k| cabs(y[(i, k)]).as_f64()).sum()));
    let tol = T::lit(opts.tol.max(4.0 * T::EPSILON * row_sum));
    let mut buf = vec![BusInjection::default(); n];
    let mut v = v0.clone();
    let (mut r, mut res_i, mut res_p) = current_residual(y, inj, &v, &mut buf);
    let mut jac = DMatrix::<T>::zeros(2 * n, 2 * n);
    let mut rhs = DVector::<T>::zeros(2 * n);

    for it in 0..opts.max_iter {
        if res_p <= tol {
            return Ok(NetworkSolution { v, iterations: it, residual: res_p });
        }
        if !res_i.is_finite() {
            break;
        }
        // buf holds the injection at the current v
        for i in 0..n {
            let vb = v[i].conj();
            let di_dv = buf[i].dg_dv / vb;
            let di_dvbar = buf[i].dg_dvbar / vb - buf[i].g / (vb * vb);
            for k in 0..n {
                let mut a = y[(i, k)];
                let (sum, dif) = if i == k {
                    a -= di_dv;
                    (a - di_dvbar, a + di_dvbar)
                } else {
                    (a, a)
                };
                jac[(i, k)] = sum.re;
                jac[(i, n + k)] = -dif.im;
                jac[(n + i, k)] = sum.im;
                jac[(n + i, n + k)] = dif.re;
            }
            rhs[i] = -r[i].re;
            rhs[n + i] = -r[i].im;
        }
        let dx = jac.clone().lu().solve(&rhs).ok_or(NetError::SingularNetwork)?;
        if dx.iter().any(|d| !d.is_finite()) {
            return Err(NetError::SingularNetwork);
        }

        let mut step = T::one();
        let mut accepted = false;
        for _ in 0..12 {
            let vt = DVector::from_fn(n, |i, _| v[i] + Complex::new(dx[i], dx[n + i]) * step);
            let (rt, rti, rtp) = current_residual(y, inj, &vt, &mut buf);
            if rti.is_finite() && rti < res_i * (T::one() - lit::<T>(1e-4) * step) {
                v = vt;
                r = rt;
                res_i = rti;
                res_p = rtp;
                accepted = true;
                break;
            }
            step *= lit(0.5);
        }
        if !accepted {
            let (_, _, rp) = current_residual(y, inj, &v, &mut buf);
            if rp <= tol {
                return Ok(NetworkSolution { v, iterations: it + 1, residual: rp });
            }
            return Err(NetError::NotConverged { iterations: it + 1, residual: rp.as_f64() });
        }
    }
    if res_p <= tol {
        return Ok(NetworkSolution { v, iterations: opts.max_iter, residual: res_p });
    }
    Err(NetError::NotConverged { iterations: opts.max_iter, residual: res_p.as_f64() })
}

/// Inverse of the augmented admittance with the structural properties used
/// by the voltage-coupling analysis.
#[derive(Debug, Clone)]
pub struct ImpedanceReport<T: Real> {
    pub z: DMatrix<Cx<T>>,
    /// Fraction of entries with non-negative real part.
    pub real_nonneg_fraction: f64,
    /// Fraction of entries with non-negative imaginary part (reactive coupling sign).
    pub imag_nonneg_fraction: f64,
    /// Fraction of rows with `|z_ii| >= sum_{j != i} |z_ij|`.
    pub row_dominance_fraction: f64,
    /// Fraction of columns whose largest-magnitude entry is the diagonal one.
    pub column_peak_fraction: f64,
}

pub fn impedance_matrix<T: Real>(y_aug: &DMatrix<Cx<T>>) -> Result<ImpedanceReport<T>, NetError> {
    let n = y_aug.nrows();
    let z = y_aug.clone().try_inverse().ok_or(NetError::SingularNetwork)?;
    if z.iter().any(|e| !(e.re.is_finite() && e.im.is_finite())) {
        return Err(NetError::SingularNetwork);
    }
    let total = (n * n) as f64;
    let re_nn = z.iter().filter(|e| e.re >= T::zero()).count() as f64 / total;
    let im_nn = z.iter().filter(|e| e.im >= T::zero()).count() as f64 / total;
    let mut dom = 0usize;
    let mut peak = 0usize;
    for i in 0..n {
        let d = cabs(z[(i, i)]);
        let off: T = (0..n).filter(|&k| k != i).fold(T::zero(), |s, k| s + cabs(z[(i, k)]));
        if d >= off {
            dom += 1;
        }
        if (0..n).all(|k| cabs(z[(k, i)]) <= d) {
            peak += 1;
        }
    }
    Ok(ImpedanceReport {
        z,
        real_nonneg_fraction: re_nn,
        imag_nonneg_fraction: im_nn,
        row_dominance_fraction: dom as f64 / n as f64,
        column_peak_fraction: peak as f64 / n as f64,
    })
}

//! Scalar abstraction shared by every numerical module.
//!
//! All models are written against [`Real`], which is implemented for `f32`
//! and `f64`. Complex phasors use [`num_complex::Complex`] over the same type.

use nalgebra::RealField;
use num_complex::Complex;
use num_traits::ToPrimitive;

/// Complex phasor over a [`Real`] scalar.
pub type Cx<T> = Complex<T>;

/// Floating-point scalar usable by the network, device and Jacobian code.
pub trait Real: RealField + Copy + ToPrimitive + std::fmt::Display + 'static {
    /// Human-readable type name used in run metadata.
    const NAME: &'static str;
    /// Infinity-norm residual target for the algebraic network solve.
    const NEWTON_TOL: f64;
    /// Relative tolerance regarded as "numerically zero" for this precision.
    const REL_EPS: f64;
    /// Machine epsilon.
    const EPSILON: f64;

    fn lit(x: f64) -> Self;

    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Real for f64 {
    const NAME: &'static str = "f64";
    const NEWTON_TOL: f64 = 1e-10;
    const REL_EPS: f64 = 1e-12;
    const EPSILON: f64 = f64::EPSILON;
    #[inline]
    fn lit(x: f64) -> Self {
        x
    }
}

impl Real for f32 {
    const NAME: &'static str = "f32";
    const NEWTON_TOL: f64 = 2e-5;
    const REL_EPS: f64 = 1e-5;
    const EPSILON: f64 = f32::EPSILON as f64;
    #[inline]
    fn lit(x: f64) -> Self {
        x as f32
    }
}

#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    T::lit(x)
}

#[inline]
pub fn cx<T: Real>(re: T, im: T) -> Cx<T> {
    Complex::new(re, im)
}

#[inline]
pub fn cx_lit<T: Real>(re: f64, im: f64) -> Cx<T> {
    Complex::new(T::lit(re), T::lit(im))
}

/// The imaginary unit.
#[inline]
pub fn j<T: Real>() -> Cx<T> {
    Complex::new(T::zero(), T::one())
}

/// `e^{j theta}`.
#[inline]
pub fn cis<T: Real>(theta: T) -> Cx<T> {
    Complex::new(theta.cos(), theta.sin())
}

#[inline]
pub fn cabs<T: Real>(z: Cx<T>) -> T {
    // hypot-style scaling is unnecessary at per-unit magnitudes
    (z.re * z.re + z.im * z.im).sqrt()
}

#[inline]
pub fn carg<T: Real>(z: Cx<T>) -> T {
    z.im.atan2(z.re)
}

#[inline]
pub fn cscale<T: Real>(z: Cx<T>, s: T) -> Cx<T> {
    Complex::new(z.re * s, z.im * s)
}

/// Real part of a product, avoiding the full complex multiply.
#[inline]
pub fn re_mul<T: Real>(a: Cx<T>, b: Cx<T>) -> T {
    a.re * b.re - a.im * b.im
}

/// Partial derivative of `Re(f)` with respect to `V`, given the Wirtinger
/// partials of a complex function `f` with respect to `V` and `conj(V)`.
#[inline]
pub fn re_wirtinger<T: Real>(df_dv: Cx<T>, df_dvbar: Cx<T>) -> Cx<T> {
    cscale(df_dv + df_dvbar.conj(), lit(0.5))
}

/// Partial derivative of `Im(f)` with respect to `V`.
#[inline]
pub fn im_wirtinger<T: Real>(df_dv: Cx<T>, df_dvbar: Cx<T>) -> Cx<T> {
    // (df/dV - conj(df/dVbar)) / (2j)
    let d = df_dv - df_dvbar.conj();
    Complex::new(d.im * lit(0.5), -d.re * lit(0.5))
}

pub fn max_abs<T: Real>(it: impl IntoIterator<Item = T>) -> T {
    it.into_iter().fold(T::zero(), |m, x| m.max(x.abs()))
}

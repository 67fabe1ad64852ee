//! Fundamental solutions of the 2D Laplace and the 2D/3D Helmholtz operators.
//!
//! Every kernel here is radial, so evaluation goes through [`KernelSpec::radial`],
//! which returns `G(r)` and `dG/dr`; gradients follow by the chain rule.

pub mod bessel;

use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum KernelError {
    #[error("coincident points: the kernel is singular at r = 0")]
    Coincident,
    #[error("{kernel} expects {expected}-dimensional points, got {got}")]
    DimensionMismatch {
        kernel: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("wavenumber must be positive and finite, got {0}")]
    InvalidWavenumber(f64),
    #[error("{kind:?}_{order}({x}) is outside the domain of definition")]
    BesselDomain { kind: bessel::Kind, order: u32, x: f64 },
    #[error("only Bessel orders 0 and 1 are available, got {0}")]
    UnsupportedOrder(u32),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Complex {
    pub re: f64,
    pub im: f64,
}

impl Complex {
    pub const ZERO: Complex = Complex { re: 0.0, im: 0.0 };

    pub const fn new(re: f64, im: f64) -> Self {
        Self { re, im }
    }

    pub const fn real(re: f64) -> Self {
        Self { re, im: 0.0 }
    }

    pub fn abs(self) -> f64 {
        self.re.hypot(self.im)
    }

    pub fn conj(self) -> Self {
        Self::new(self.re, -self.im)
    }

    pub fn scale(self, s: f64) -> Self {
        Self::new(self.re * s, self.im * s)
    }

    pub fn is_finite(self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
}

impl Add for Complex {
    type Output = Complex;
    fn add(self, o: Complex) -> Complex {
        Complex::new(self.re + o.re, self.im + o.im)
    }
}

impl Sub for Complex {
    type Output = Complex;
    fn sub(self, o: Complex) -> Complex {
        Complex::new(self.re - o.re, self.im - o.im)
    }
}

impl Mul for Complex {
    type Output = Complex;
    fn mul(self, o: Complex) -> Complex {
        Complex::new(self.re * o.re - self.im * o.im, self.re * o.im + self.im * o.re)
    }
}

impl Mul<f64> for Complex {
    type Output = Complex;
    fn mul(self, s: f64) -> Complex {
        self.scale(s)
    }
}

impl Neg for Complex {
    type Output = Complex;
    fn neg(self) -> Complex {
        Complex::new(-self.re, -self.im)
    }
}

impl AddAssign for Complex {
    fn add_assign(&mut self, o: Complex) {
        self.re += o.re;
        self.im += o.im;
    }
}

impl SubAssign for Complex {
    fn sub_assign(&mut self, o: Complex) {
        self.re -= o.re;
        self.im -= o.im;
    }
}

/// Which fundamental solution to use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelSpec {
    Laplace2d,
    Helmholtz2d { k: f64 },
    Helmholtz3d { k: f64 },
}

impl KernelSpec {
    pub fn dim(&self) -> usize {
        match self {
            KernelSpec::Helmholtz3d { .. } => 3,
            _ => 2,
        }
    }

    pub fn wavenumber(&self) -> Option<f64> {
        match *self {
            KernelSpec::Laplace2d => None,
            KernelSpec::Helmholtz2d { k } | KernelSpec::Helmholtz3d { k } => Some(k),
        }
    }

    pub fn is_helmholtz(&self) -> bool {
        self.wavenumber().is_some()
    }

    pub fn name(&self) -> &'static str {
        match self {
            KernelSpec::Laplace2d => "laplace2d",
            KernelSpec::Helmholtz2d { .. } => "helmholtz2d",
            KernelSpec::Helmholtz3d { .. } => "helmholtz3d",
        }
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        match self.wavenumber() {
            Some(k) if !(k > 0.0 && k.is_finite()) => Err(KernelError::InvalidWavenumber(k)),
            _ => Ok(()),
        }
    }

    /// `(G(r), dG/dr)` for `r > 0`.
    pub fn radial(&self, r: f64) -> (Complex, Complex) {
        match *self {
            KernelSpec::Laplace2d => (
                Complex::real(-r.ln() / (2.0 * PI)),
                Complex::real(-1.0 / (2.0 * PI * r)),
            ),
            KernelSpec::Helmholtz2d { k } => {
                // (i/4) H0(kr), with H0' = -H1.
                let kr = k * r;
                let (j0, y0) = (bessel::j0(kr), bessel::y0(kr));
                let (j1, y1) = (bessel::j1(kr), bessel::y1(kr));
                (
                    Complex::new(-0.25 * y0, 0.25 * j0),
                    Complex::new(0.25 * k * y1, -0.25 * k * j1),
                )
            }
            KernelSpec::Helmholtz3d { k } => {
                let (s, c) = (k * r).sin_cos();
                let f = 1.0 / (4.0 * PI * r);
                (
                    Complex::new(c * f, s * f),
                    Complex::new((-c / r - k * s) * f, (k * c - s / r) * f),
                )
            }
        }
    }

    fn separation(&self, x: &[f64], y: &[f64]) -> Result<f64, KernelError> {
        let d = self.dim();
        if x.len() != d || y.len() != d {
            let got = if x.len() != d { x.len() } else { y.len() };
            return Err(KernelError::DimensionMismatch {
                kernel: self.name(),
                expected: d,
                got,
            });
        }
        let r = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        if r == 0.0 {
            Err(KernelError::Coincident)
        } else {
            Ok(r)
        }
    }
}

/// `G(x, y)`.
pub fn kernel_value(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<Complex, KernelError> {
    let r = spec.separation(x, y)?;
    Ok(spec.radial(r).0)
}

/// Gradient of `G(x, y)` with respect to `y`, one complex entry per axis.
pub fn kernel_gradient_y(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<Vec<Complex>, KernelError> {
    let r = spec.separation(x, y)?;
    let dg = spec.radial(r).1;
    Ok(x.iter().zip(y).map(|(a, b)| dg.scale((b - a) / r)).collect())
}

/// `∂G(x, y)/∂n_y`.
pub fn kernel_normal_derivative(
    spec: &KernelSpec,
    x: &[f64],
    y: &[f64],
    normal: &[f64],
) -> Result<Complex, KernelError> {
    let r = spec.separation(x, y)?;
    if normal.len() != x.len() {
        return Err(KernelError::DimensionMismatch {
            kernel: spec.name(),
            expected: x.len(),
            got: normal.len(),
        });
    }
    let proj: f64 = x.iter().zip(y).zip(normal).map(|((a, b), n)| (b - a) * n).sum();
    Ok(spec.radial(r).1.scale(proj / r))
}

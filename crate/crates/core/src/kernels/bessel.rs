//! Bessel functions of the first and second kind, orders 0 and 1.
//!
//! Small arguments use the ascending power series, with the logarithmic
//! series for `Y` written through harmonic numbers. Past [`X_SWITCH`] the
//! series loses too many digits to cancellation and the Hankel asymptotic
//! expansion takes over.

use std::f64::consts::{FRAC_2_PI, FRAC_PI_4, PI};

use super::KernelError;

/// Crossover between the power series and the asymptotic expansion.
pub const X_SWITCH: f64 = 12.0;

pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

const SERIES_TOL: f64 = 1e-17;
const MAX_TERMS: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    J,
    Y,
}

/// Evaluates `J_order(x)` or `Y_order(x)` for `order` in {0, 1}.
pub fn bessel(kind: Kind, order: u32, x: f64) -> Result<f64, KernelError> {
    match (kind, order) {
        (Kind::J, 0) if x >= 0.0 => Ok(j0(x)),
        (Kind::J, 1) if x >= 0.0 => Ok(j1(x)),
        (Kind::Y, 0) if x > 0.0 => Ok(y0(x)),
        (Kind::Y, 1) if x > 0.0 => Ok(y1(x)),
        (_, 0 | 1) => Err(KernelError::BesselDomain { kind, order, x }),
        _ => Err(KernelError::UnsupportedOrder(order)),
    }
}

pub fn j0(x: f64) -> f64 {
    let x = x.abs();
    if x > X_SWITCH {
        return hankel_asymptotic(0, x).0;
    }
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    for m in 1..MAX_TERMS {
        let mf = m as f64;
        term *= -q / (mf * mf);
        sum += term;
        if term.abs() < SERIES_TOL * sum.abs() {
            break;
        }
    }
    sum
}

pub fn j1(x: f64) -> f64 {
    if x < 0.0 {
        return -j1(-x);
    }
    if x > X_SWITCH {
        return hankel_asymptotic(1, x).0;
    }
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    for m in 1..MAX_TERMS {
        let mf = m as f64;
        term *= -q / (mf * (mf + 1.0));
        sum += term;
        if term.abs() < SERIES_TOL * sum.abs() {
            break;
        }
    }
    0.5 * x * sum
}

/// Only defined for `x > 0`; returns NaN otherwise.
pub fn y0(x: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NAN;
    }
    if x > X_SWITCH {
        return hankel_asymptotic(0, x).1;
    }
    let q = 0.25 * x * x;
    // Σ_{m≥1} (-1)^{m+1} H_m q^m / (m!)^2
    let mut term = 1.0;
    let mut harmonic = 0.0;
    let mut sum = 0.0;
    for m in 1..MAX_TERMS {
        let mf = m as f64;
        term *= -q / (mf * mf);
        harmonic += 1.0 / mf;
        let contrib = -harmonic * term;
        sum += contrib;
        if contrib.abs() < SERIES_TOL * sum.abs() {
            break;
        }
    }
    FRAC_2_PI * (((0.5 * x).ln() + EULER_GAMMA) * j0(x) + sum)
}

/// Only defined for `x > 0`; returns NaN otherwise.
pub fn y1(x: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NAN;
    }
    if x > X_SWITCH {
        return hankel_asymptotic(1, x).1;
    }
    let q = 0.25 * x * x;
    // ψ(k+1) + ψ(k+2) = -2γ + 2H_k + 1/(k+1)
    let mut term = 1.0;
    let mut harmonic = 0.0;
    let mut sum = -2.0 * EULER_GAMMA + 1.0;
    for k in 1..MAX_TERMS {
        let kf = k as f64;
        term *= -q / (kf * (kf + 1.0));
        harmonic += 1.0 / kf;
        let contrib = (-2.0 * EULER_GAMMA + 2.0 * harmonic + 1.0 / (kf + 1.0)) * term;
        sum += contrib;
        if contrib.abs() < SERIES_TOL * sum.abs() {
            break;
        }
    }
    -FRAC_2_PI / x + FRAC_2_PI * (0.5 * x).ln() * j1(x) - x / (2.0 * PI) * sum
}

/// Large-argument expansion returning `(J_nu(x), Y_nu(x))`.
fn hankel_asymptotic(nu: u32, x: f64) -> (f64, f64) {
    let mu = 4.0 * f64::from(nu * nu);
    let mut p = 1.0;
    let mut q = 0.0;
    let mut t: f64 = 1.0;
    for k in 1..MAX_TERMS {
        let odd = (2 * k - 1) as f64;
        let next = t * (mu - odd * odd) / (k as f64 * 8.0 * x);
        if next.abs() > t.abs() || next.abs() < SERIES_TOL {
            break;
        }
        t = next;
        // P collects even k with alternating signs, Q the odd ones.
        let sign = if (k / 2) % 2 == 0 { 1.0 } else { -1.0 };
        if k % 2 == 0 {
            p += sign * t;
        } else {
            q += sign * t;
        }
    }
    let chi = x - (2.0 * f64::from(nu) + 1.0) * FRAC_PI_4;
    let (s, c) = chi.sin_cos();
    let amp = (FRAC_2_PI / x).sqrt();
    (amp * (p * c - q * s), amp * (p * s + q * c))
}

#[cfg(test)]
#[allow(clippy::excessive_precision)]
mod tests {
    use super::*;

    /// `J_n(x) = (1/2π)∫_0^{2π} cos(nθ - x sin θ) dθ`, a periodic integrand for
    /// which the trapezoid rule converges geometrically.
    fn j_oracle(n: u32, x: f64) -> f64 {
        let m = 2048;
        let h = 2.0 * PI / m as f64;
        (0..m)
            .map(|i| {
                let th = i as f64 * h;
                (f64::from(n) * th - x * th.sin()).cos()
            })
            .sum::<f64>()
            / m as f64
    }

    // Reference values at 30 significant digits from an arbitrary-precision library.
    const TABLE: [(f64, f64, f64, f64, f64); 11] = [
        (
            0.1,
            0.99750156206604003228,
            0.049937526036241997556,
            -1.5342386513503668441,
            -6.4589510947020269877,
        ),
        (
            1.0,
            0.76519768655796655145,
            0.44005058574493351596,
            0.088256964215676957983,
            -0.78121282130028871655,
        ),
        (
            2.5,
            -0.048383776468197996327,
            0.49709410246427403801,
            0.49807035961523188783,
            0.14591813796678579888,
        ),
        (
            5.0,
            -0.17759677131433830435,
            -0.32757913759146522204,
            -0.30851762524903378007,
            0.1478631433912268448,
        ),
        (
            11.9,
            0.025049441699589563728,
            -0.22898324966192407078,
            -0.2298332139433750764,
            -0.034711498334030529216,
        ),
        (
            12.0,
            0.047689310796833536624,
            -0.22344710449062761237,
            -0.22523731263436143369,
            -0.05709921826089652105,
        ),
        (
            12.1,
            0.069666773606807388498,
            -0.21574897337692477718,
            -0.21843838055092545768,
            -0.078736931451395820909,
        ),
        (
            20.0,
            0.16702466434058315473,
            0.066833124175850045579,
            0.062640596809383831162,
            -0.16551161436252129586,
        ),
        (
            50.0,
            0.055812327669251815005,
            -0.097511828125175137661,
            -0.098064995470077079029,
            -0.056795668562014767942,
        ),
        (
            150.0,
            -0.00077409037539429124695,
            -0.065145163657727360305,
            -0.065142221509037354596,
            0.0005569563495608399837,
        ),
        (
            400.0,
            -0.038825181530783955714,
            -0.0092220584285863512542,
            -0.0091735198607593585949,
            0.038813744980751541801,
        ),
    ];

    #[test]
    fn values_at_origin() {
        assert_eq!(j0(0.0), 1.0);
        assert_eq!(j1(0.0), 0.0);
        assert!(bessel(Kind::Y, 0, 0.0).is_err());
        assert!(bessel(Kind::Y, 1, -1.0).is_err());
        assert!(bessel(Kind::J, 2, 1.0).is_err());
    }

    #[test]
    fn j_matches_integral_oracle() {
        for i in 0..200 {
            let x = 0.05 + i as f64 * 0.25;
            assert!((j0(x) - j_oracle(0, x)).abs() < 2e-12, "J0({x})");
            assert!((j1(x) - j_oracle(1, x)).abs() < 2e-12, "J1({x})");
        }
    }

    #[test]
    fn first_zero_of_j0_by_bisection_on_oracle() {
        let (mut a, mut b) = (2.0, 3.0);
        for _ in 0..60 {
            let m = 0.5 * (a + b);
            if j_oracle(0, a) * j_oracle(0, m) <= 0.0 {
                b = m;
            } else {
                a = m;
            }
        }
        let zero = 0.5 * (a + b);
        assert!((zero - 2.404825557695773).abs() < 1e-12);
        assert!(j0(2.404825557695773).abs() < 1e-10);
    }

    #[test]
    fn tabulated_values() {
        for &(x, vj0, vj1, vy0, vy1) in &TABLE {
            for (got, want) in [(j0(x), vj0), (j1(x), vj1), (y0(x), vy0), (y1(x), vy1)] {
                // The series cancels near the switch, so small values get an absolute floor.
                let tol = if x <= 8.0 {
                    1e-12 * want.abs().max(0.5)
                } else if x <= X_SWITCH {
                    2e-12
                } else {
                    1e-10 * want.abs().max(1e-2)
                };
                assert!((got - want).abs() <= tol, "x={x}: {got} vs {want}");
            }
        }
        assert!((y0(1.0) - 0.088256964215676957983).abs() < 1e-12 * 0.0883);
    }

    #[test]
    fn wronskian() {
        for i in 0..300 {
            let x = 0.02 + i as f64 * 0.7;
            let w = j1(x) * y0(x) - j0(x) * y1(x);
            let want = 2.0 / (PI * x);
            assert!((w - want).abs() < 1e-10 * want.max(1e-2), "x={x}: {w} vs {want}");
        }
    }

    #[test]
    fn continuous_across_switch() {
        let below = X_SWITCH * (1.0 - 1e-12);
        let above = X_SWITCH * (1.0 + 1e-12);
        for f in [j0, j1, y0, y1] {
            let (a, b) = (f(below), f(above));
            assert!((a - b).abs() < 1e-9 * a.abs(), "{a} vs {b}");
        }
    }
}

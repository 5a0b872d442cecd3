//! Bessel functions of the first kind and their positive zeros, used as a
//! closed-form eigenvalue oracle for power-law coefficients `a(x) = x^alpha`.
//!
//! With `u(x) = x^{(1-alpha)/2} J(2 sqrt(lambda) x^{(2-alpha)/2} / (2-alpha))`
//! the eigenproblem `-(x^alpha u')' = lambda u`, `u(1) = 0`, gives
//! `lambda_p = kappa^2 j_{nu,p}^2` with `kappa = (2-alpha)/2`. The order is
//! `nu = (1-alpha)/(2-alpha)` under the Dirichlet condition at 0 and
//! `nu = (alpha-1)/(2-alpha)` under the zero-flux condition.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::model::BoundaryRegime;

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Gamma function for positive arguments (Lanczos approximation).
pub fn gamma(x: f64) -> f64 {
    if x < 0.5 {
        return PI / ((PI * x).sin() * gamma(1.0 - x));
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    (2.0 * PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * acc
}

fn series(nu: f64, x: f64) -> f64 {
    let half = 0.5 * x;
    let mut term = half.powf(nu) / gamma(nu + 1.0);
    let mut sum = term;
    let q = -half * half;
    for k in 1..200 {
        let kf = k as f64;
        term *= q / (kf * (kf + nu));
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    sum
}

const GL8_X: [f64; 8] = [
    -0.960_289_856_497_536_3,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL8_W: [f64; 8] = [
    0.101_228_536_290_376_26,
    0.222_381_034_453_374_47,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362,
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_47,
    0.101_228_536_290_376_26,
];

fn gauss_panels(f: impl Fn(f64) -> f64, lo: f64, hi: f64, panels: usize) -> f64 {
    let width = (hi - lo) / panels as f64;
    let mut acc = 0.0;
    for k in 0..panels {
        let a = lo + k as f64 * width;
        let half = 0.5 * width;
        for (g, w) in GL8_X.iter().zip(GL8_W.iter()) {
            acc += w * half * f(a + half * (g + 1.0));
        }
    }
    acc
}

/// `J_nu(x)` for `nu >= 0`, `x >= 0`.
///
/// Power series for small `x`, otherwise Schlafli's integral
/// `J_nu(x) = 1/pi int_0^pi cos(nu t - x sin t) dt
///           - sin(nu pi)/pi int_0^inf exp(-x sinh t - nu t) dt`.
pub fn bessel_j(nu: f64, x: f64) -> f64 {
    if x == 0.0 {
        return if nu == 0.0 { 1.0 } else { 0.0 };
    }
    if x <= 4.0 {
        return series(nu, x);
    }
    let panels = 8 + (x + nu).ceil() as usize;
    let first = gauss_panels(|t| (nu * t - x * t.sin()).cos(), 0.0, PI, panels) / PI;
    let s = (nu * PI).sin();
    if s.abs() < 1e-300 {
        return first;
    }
    let t_max = (45.0 / x).asinh() + 1.0;
    let second = gauss_panels(|t| (-x * t.sinh() - nu * t).exp(), 0.0, t_max, 24);
    first - s / PI * second
}

fn mcmahon(nu: f64, p: usize) -> f64 {
    let mu = 4.0 * nu * nu;
    let beta = (p as f64 + 0.5 * nu - 0.25) * PI;
    let b8 = 8.0 * beta;
    beta - (mu - 1.0) / b8
        - 4.0 * (mu - 1.0) * (7.0 * mu - 31.0) / (3.0 * b8.powi(3))
        - 32.0 * (mu - 1.0) * (83.0 * mu * mu - 982.0 * mu + 3779.0) / (15.0 * b8.powi(5))
}

/// Root of `f` in a sign-changing bracket (bisection safeguarded secant).
fn refine(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = f(lo);
    let mut fhi = f(hi);
    for _ in 0..200 {
        if hi - lo <= 1e-14 * hi.abs() {
            break;
        }
        let secant = hi - fhi * (hi - lo) / (fhi - flo);
        let mid = 0.5 * (lo + hi);
        let x = if secant > lo && secant < hi && (hi - lo) < 1.0 {
            // keep the secant step from stalling at one end
            0.5 * (secant + mid)
        } else {
            mid
        };
        let fx = f(x);
        if fx == 0.0 {
            return x;
        }
        if (fx < 0.0) == (flo < 0.0) {
            lo = x;
            flo = fx;
        } else {
            hi = x;
            fhi = fx;
        }
    }
    if flo.abs() < fhi.abs() {
        lo
    } else {
        hi
    }
}

/// First `count` positive zeros of `J_nu`.
///
/// Zeros are bracketed by a sign-change scan starting at `nu` (there are
/// none in `(0, nu]`) until McMahon's expansion reproduces the last zero
/// found; from then on McMahon guesses provide the brackets.
pub fn bessel_zeros(nu: f64, count: usize) -> Result<Vec<f64>> {
    if !(nu >= 0.0 && nu.is_finite()) {
        return Err(Error::Domain(format!("Bessel order must be >= 0, got {nu}")));
    }
    let f = |x: f64| bessel_j(nu, x);
    let mut zeros = Vec::with_capacity(count);
    let step = 0.25;
    let mut x = nu.max(1e-3);
    let mut fx = f(x);
    let mut use_asymptotic = false;
    while zeros.len() < count {
        let p = zeros.len() + 1;
        if use_asymptotic {
            let g = mcmahon(nu, p);
            let (lo, hi) = (g - 0.5, g + 0.5);
            let (flo, fhi) = (f(lo), f(hi));
            let prev = zeros.last().copied().unwrap_or(0.0);
            if lo > prev && (flo < 0.0) != (fhi < 0.0) {
                zeros.push(refine(f, lo, hi));
                continue;
            }
            use_asymptotic = false;
            x = prev + 1e-6;
            fx = f(x);
        }
        let next = x + step;
        let fnext = f(next);
        if fx == 0.0 {
            zeros.push(x);
        } else if (fx < 0.0) != (fnext < 0.0) {
            let z = refine(f, x, next);
            zeros.push(z);
            if (mcmahon(nu, zeros.len()) - z).abs() < 1e-6 * z {
                use_asymptotic = true;
            }
        }
        x = next;
        fx = fnext;
        if x > 1e7 {
            return Err(Error::Numerical("Bessel zero scan did not converge".into()));
        }
    }
    Ok(zeros)
}

/// `(kappa, nu)` for `a = x^alpha` in the given boundary regime.
pub fn bessel_parameters(alpha: f64, bc: BoundaryRegime) -> Result<(f64, f64)> {
    let kappa = 0.5 * (2.0 - alpha);
    match bc {
        BoundaryRegime::Dirichlet if (0.0..1.0).contains(&alpha) => Ok((kappa, (1.0 - alpha) / (2.0 - alpha))),
        BoundaryRegime::NeumannAtZero if (1.0..2.0).contains(&alpha) => {
            Ok((kappa, (alpha - 1.0) / (2.0 - alpha)))
        }
        _ => Err(Error::Domain(format!(
            "alpha = {alpha} is outside the range of the {bc:?} regime"
        ))),
    }
}

/// Closed-form eigenvalues `lambda_1..lambda_count` of `-(x^alpha u')'`.
pub fn bessel_eigenvalues(alpha: f64, count: usize, bc: BoundaryRegime) -> Result<Vec<f64>> {
    let (kappa, nu) = bessel_parameters(alpha, bc)?;
    Ok(bessel_zeros(nu, count)?
        .into_iter()
        .map(|j| kappa * kappa * j * j)
        .collect())
}

/// `lambda_p` (1-based) from the Bessel closed form.
pub fn bessel_oracle(alpha: f64, p: usize, bc: BoundaryRegime) -> Result<f64> {
    if p == 0 {
        return Err(Error::Domain("mode index is 1-based".into()));
    }
    Ok(bessel_eigenvalues(alpha, p, bc)?[p - 1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gamma_values() {
        assert_relative_eq!(gamma(1.0), 1.0, max_relative = 1e-14);
        assert_relative_eq!(gamma(5.0), 24.0, max_relative = 1e-13);
        assert_relative_eq!(gamma(0.5), PI.sqrt(), max_relative = 1e-14);
    }

    #[test]
    fn half_order_is_a_sine() {
        for &x in &[0.5, 3.0, 4.5, 10.0, 37.3, 120.0] {
            let exact = (2.0 / (PI * x)).sqrt() * x.sin();
            let err = (bessel_j(0.5, x) - exact).abs();
            assert!(err < 1e-12, "x = {x}: {err:e}");
        }
    }

    #[test]
    fn integer_orders_against_reference() {
        // reference values from standard tables
        assert_relative_eq!(bessel_j(0.0, 1.0), 0.765_197_686_557_966_6, max_relative = 1e-13);
        assert_relative_eq!(bessel_j(0.0, 10.0), -0.245_935_764_451_348_3, max_relative = 1e-12);
        assert_relative_eq!(bessel_j(1.0, 5.0), -0.327_579_137_591_465_2, max_relative = 1e-12);
        assert_relative_eq!(bessel_j(2.0, 7.5), -0.230_273_410_525_790_3, epsilon = 1e-13);
    }

    #[test]
    fn series_and_integral_agree_at_switch() {
        for nu in [0.0, 1.0 / 3.0, 0.9, 2.5] {
            let s = series(nu, 4.0);
            let panels = 8 + (4.0f64 + nu).ceil() as usize;
            let first = gauss_panels(|t| (nu * t - 4.0 * t.sin()).cos(), 0.0, PI, panels) / PI;
            let second = gauss_panels(|t| (-4.0 * t.sinh() - nu * t).exp(), 0.0, (45.0f64 / 4.0).asinh() + 1.0, 24);
            let i = first - (nu * PI).sin() / PI * second;
            assert!((s - i).abs() < 1e-13, "nu = {nu}: {s} vs {i}");
        }
    }

    #[test]
    fn known_zeros() {
        let z = bessel_zeros(0.0, 3).unwrap();
        assert_relative_eq!(z[0], 2.404_825_557_695_773, max_relative = 1e-12);
        assert_relative_eq!(z[1], 5.520_078_110_286_311, max_relative = 1e-12);
        assert_relative_eq!(z[2], 8.653_727_912_911_013, max_relative = 1e-12);
        let z = bessel_zeros(1.0, 1).unwrap();
        assert_relative_eq!(z[0], 3.831_705_970_207_512, max_relative = 1e-12);
        let z = bessel_zeros(0.5, 50).unwrap();
        for (p, zp) in z.iter().enumerate() {
            assert_relative_eq!(*zp, (p + 1) as f64 * PI, max_relative = 1e-12);
        }
    }

    #[test]
    fn zeros_are_separated() {
        for nu in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let z = bessel_zeros(nu, 40).unwrap();
            for w in z.windows(2) {
                assert!(w[1] > w[0] + 2.0);
            }
        }
    }

    #[test]
    fn oracle_values() {
        let l = bessel_eigenvalues(0.0, 5, BoundaryRegime::Dirichlet).unwrap();
        for (p, lp) in l.iter().enumerate() {
            let k = (p + 1) as f64;
            assert_relative_eq!(*lp, k * k * PI * PI, max_relative = 1e-12);
        }
        let l1 = bessel_oracle(1.0, 1, BoundaryRegime::NeumannAtZero).unwrap();
        assert_relative_eq!(l1, 2.404_825_557_695_773f64.powi(2) / 4.0, max_relative = 1e-12);
        let l1 = bessel_oracle(0.5, 1, BoundaryRegime::Dirichlet).unwrap();
        assert!((l1 - 4.739).abs() < 1e-3);
        assert!(bessel_oracle(1.5, 1, BoundaryRegime::Dirichlet).is_err());
        assert!(bessel_oracle(2.0, 1, BoundaryRegime::NeumannAtZero).is_err());
    }
}

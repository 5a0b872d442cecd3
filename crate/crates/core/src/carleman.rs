//! Carleman weights, parameter selection and empirical evaluation of the
//! weighted estimate for the scalar degenerate equation
//! `u_t - (a u_x)_x + c u = f`.
//!
//! The weights are
//!
//! ```text
//! theta(t) = 1 / (t^4 (T - t)^4)
//! psi(x)   = lambda (int_0^x y / a(y) dy - c)        phi = theta psi
//! Psi(x)   = exp(rho sigma(x)) - exp(2 rho |sigma|)   Phi = theta Psi
//! ```
//!
//! Both `psi` and `Psi` are negative, so `exp(2 s phi)` is tiny for large
//! `s`. Functionals are therefore returned with the factor
//! `exp(2 s phi_ref)` divided out; ratios of functionals sharing the same
//! reference are unaffected.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{BoundaryRegime, DiffusionCoefficient, Interval};
use crate::operator::DiscreteOperator;
use crate::tridiag::SymTridiag;

const LN2: f64 = std::f64::consts::LN_2;

/// `1 / (t^4 (T - t)^4)`, infinite at the endpoints.
pub fn weight_theta(t: f64, horizon: f64) -> Result<f64> {
    if !(horizon > 0.0) || !(0.0..=horizon).contains(&t) {
        return Err(Error::Domain(format!("t = {t} outside [0, {horizon}]")));
    }
    if t == 0.0 || t == horizon {
        return Ok(f64::INFINITY);
    }
    Ok(1.0 / (t * (horizon - t)).powi(4))
}

/// Spatial profile with `sigma(0) = sigma(1) = 0`, `sigma > 0` inside and a
/// single critical point, placed at the centre of `omega0`.
///
/// `sigma(x) = x (1 - x) exp(k x) / max`, with `k` chosen so that the
/// maximum sits at the centre. Its derivative is nonzero at both ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SigmaProfile {
    pub omega0: Interval,
    pub kappa: f64,
    pub scale: f64,
}

impl SigmaProfile {
    pub fn eval(&self, x: f64) -> f64 {
        self.scale * x * (1.0 - x) * (self.kappa * x).exp()
    }

    pub fn derivative(&self, x: f64) -> f64 {
        self.scale * (self.kappa * x).exp() * ((1.0 - 2.0 * x) + self.kappa * x * (1.0 - x))
    }

    /// `|sigma|_inf`, which is 1 by construction.
    pub fn sup(&self) -> f64 {
        let c = self.centre();
        self.eval(c)
    }

    pub fn centre(&self) -> f64 {
        0.5 * (self.omega0.lo + self.omega0.hi)
    }
}

pub fn sigma_profile(omega0: Interval) -> Result<SigmaProfile> {
    if !(omega0.lo > 0.0 && omega0.lo < omega0.hi && omega0.hi < 1.0) {
        return Err(Error::Domain(format!(
            "omega0 = ({}, {}) must be compactly contained in (0, 1)",
            omega0.lo, omega0.hi
        )));
    }
    let c = 0.5 * (omega0.lo + omega0.hi);
    // (1 - 2x) + k x (1 - x) = 0 at x = c
    let kappa = (2.0 * c - 1.0) / (c * (1.0 - c));
    let peak = c * (1.0 - c) * (kappa * c).exp();
    let profile = SigmaProfile {
        omega0,
        kappa,
        scale: 1.0 / peak,
    };
    let samples = 10_000;
    for i in 0..=samples {
        let x = i as f64 / samples as f64;
        if !omega0.contains(x) && profile.derivative(x).abs() < 1e-8 {
            return Err(Error::Numerical(format!("sigma has a critical point at {x} outside omega0")));
        }
    }
    Ok(profile)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CarlemanParameters {
    pub c: f64,
    pub rho: f64,
    pub lambda: f64,
    /// Admissible open interval for `lambda` at these `c` and `rho`.
    pub lambda_interval: Interval,
    pub sigma_sup: f64,
    /// Slack in `c > 5`, `rho > 4 ln 2 / |sigma|`, and the two sides of
    /// the `lambda` bracket, in that order.
    pub margins: [f64; 4],
}

/// Open interval of admissible `lambda`, or an error when `c` or `rho`
/// already violate their constraints.
pub fn lambda_interval(c: f64, rho: f64, sigma_sup: f64) -> Result<Interval> {
    if !(sigma_sup > 0.0) {
        return Err(Error::Domain("sigma must not vanish identically".into()));
    }
    if !(c > 5.0) {
        return Err(Error::Domain(format!("c = {c} must exceed 5")));
    }
    let rho_min = 4.0 * LN2 / sigma_sup;
    if !(rho > rho_min) {
        return Err(Error::Domain(format!("rho = {rho} must exceed 4 ln 2 / |sigma| = {rho_min}")));
    }
    let e1 = (rho * sigma_sup).exp();
    let e2 = (2.0 * rho * sigma_sup).exp();
    Ok(Interval::new(e2 / (c - 1.0), 4.0 / (3.0 * c) * (e2 - e1)))
}

pub fn check_parameters(c: f64, rho: f64, lambda: f64, sigma_sup: f64) -> Result<[f64; 4]> {
    let iv = lambda_interval(c, rho, sigma_sup)?;
    let margins = [c - 5.0, rho - 4.0 * LN2 / sigma_sup, lambda - iv.lo, iv.hi - lambda];
    if margins.iter().all(|m| *m > 0.0) {
        Ok(margins)
    } else {
        Err(Error::Domain(format!(
            "lambda = {lambda} outside the admissible interval ({}, {})",
            iv.lo, iv.hi
        )))
    }
}

/// `c = 6` (raised up to 20 if needed), `rho` one percent above its lower
/// bound, `lambda` at the middle of its interval.
pub fn select_parameters(sigma: &SigmaProfile) -> Result<CarlemanParameters> {
    let sup = sigma.sup();
    let rho = 1.01 * 4.0 * LN2 / sup;
    let mut c = 6.0;
    while c <= 20.0 {
        let iv = lambda_interval(c, rho, sup)?;
        if iv.hi > iv.lo {
            let lambda = 0.5 * (iv.lo + iv.hi);
            let margins = check_parameters(c, rho, lambda, sup)?;
            return Ok(CarlemanParameters {
                c,
                rho,
                lambda,
                lambda_interval: iv,
                sigma_sup: sup,
                margins,
            });
        }
        c += 1.0;
    }
    Err(Error::Domain(format!(
        "no admissible lambda for c <= 20 at rho = {rho}, |sigma| = {sup}"
    )))
}

const GAUSS8: [(f64, f64); 8] = [
    (-0.960_289_856_497_536_3, 0.101_228_536_290_376_26),
    (-0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (-0.525_532_409_916_329, 0.313_706_645_877_887_3),
    (-0.183_434_642_495_649_8, 0.362_683_783_378_362),
    (0.183_434_642_495_649_8, 0.362_683_783_378_362),
    (0.525_532_409_916_329, 0.313_706_645_877_887_3),
    (0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (0.960_289_856_497_536_3, 0.101_228_536_290_376_26),
];

fn gauss(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let half = 0.5 * (hi - lo);
    GAUSS8.iter().map(|(g, w)| w * f(lo + half * (g + 1.0))).sum::<f64>() * half
}

/// `int_0^x y / a(y) dy` at every point of an increasing grid starting at 0.
fn primitive_y_over_a(a: &DiffusionCoefficient, grid: &[f64]) -> Result<Vec<f64>> {
    let f = |y: f64| y / a.eval(y);
    let mut out = vec![0.0; grid.len()];
    for i in 1..grid.len() {
        let (lo, hi) = (grid[i - 1], grid[i]);
        let piece = if lo == 0.0 {
            // dyadic pieces towards the integrable endpoint
            let mut acc = 0.0;
            let mut prev = f64::NAN;
            let mut right = hi;
            for k in 0..200 {
                let left = right * 0.5;
                let part = gauss(&f, left, right);
                acc += part;
                right = left;
                if k > 4 && part.abs() <= 1e-16 * acc.abs() {
                    prev = acc;
                    break;
                }
            }
            if prev.is_nan() {
                return Err(Error::Numerical("quadrature of y / a(y) does not settle near 0".into()));
            }
            acc
        } else {
            gauss(&f, lo, hi)
        };
        if !piece.is_finite() {
            return Err(Error::Numerical(format!("y / a(y) not integrable on [{lo}, {hi}]")));
        }
        out[i] = out[i - 1] + piece;
    }
    Ok(out)
}

/// Sampled weights on the full grid of a discrete operator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CarlemanWeights {
    pub horizon: f64,
    pub params: CarlemanParameters,
    pub grid: Vec<f64>,
    pub sigma: Vec<f64>,
    pub psi: Vec<f64>,
    pub big_psi: Vec<f64>,
    /// `psi` at the cell midpoints.
    pub psi_mid: Vec<f64>,
    /// `max psi`, attained at `x = 1`.
    pub m0_max_psi: f64,
    /// `min |Psi|` over omega, when one is given.
    pub m0_min_abs_psi_omega: Option<f64>,
}

impl CarlemanWeights {
    pub fn theta(&self, t: f64) -> Result<f64> {
        weight_theta(t, self.horizon)
    }

    /// `phi(t, x_i)`.
    pub fn phi(&self, t: f64, i: usize) -> Result<f64> {
        Ok(self.theta(t)? * self.psi[i])
    }

    /// `Phi(t, x_i)`.
    pub fn big_phi(&self, t: f64, i: usize) -> Result<f64> {
        Ok(self.theta(t)? * self.big_psi[i])
    }

    /// Largest value of `phi` over `(0, T) x (0, 1)`, the natural reference
    /// for exponent shifts.
    pub fn phi_max(&self) -> f64 {
        (2.0 / self.horizon).powi(8) * self.m0_max_psi
    }

    /// The `s` at which `2 s |phi_max| = 2`, a scale at which the weights
    /// are neither negligible nor flat.
    pub fn natural_s(&self) -> f64 {
        1.0 / self.phi_max().abs()
    }
}

pub fn weight_psi_phi(
    a: &DiffusionCoefficient,
    params: &CarlemanParameters,
    sigma: &SigmaProfile,
    grid: &[f64],
    horizon: f64,
    omega: Option<Interval>,
) -> Result<CarlemanWeights> {
    if grid.len() < 2 || grid[0] != 0.0 || *grid.last().unwrap() != 1.0 {
        return Err(Error::Shape("weight grid must run from 0 to 1".into()));
    }
    if !(horizon > 0.0) {
        return Err(Error::Domain(format!("T = {horizon} must be positive")));
    }
    let prim = primitive_y_over_a(a, grid)?;
    let psi: Vec<f64> = prim.iter().map(|p| params.lambda * (p - params.c)).collect();
    let mids: Vec<f64> = grid.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let psi_mid = grid
        .windows(2)
        .zip(&prim)
        .map(|(w, p)| {
            let mid = 0.5 * (w[0] + w[1]);
            let extra = if w[0] == 0.0 {
                primitive_y_over_a(a, &[0.0, mid]).map(|v| v[1])
            } else {
                Ok(gauss(&|y: f64| y / a.eval(y), w[0], mid))
            };
            extra.map(|e| params.lambda * (p + e - params.c))
        })
        .collect::<Result<Vec<f64>>>()?;
    debug_assert_eq!(mids.len(), psi_mid.len());
    let sup = params.sigma_sup;
    let sig: Vec<f64> = grid.iter().map(|&x| sigma.eval(x)).collect();
    let big_psi: Vec<f64> = sig
        .iter()
        .map(|s| (params.rho * s).exp() - (2.0 * params.rho * sup).exp())
        .collect();
    let m0_max_psi = psi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let m0_min_abs_psi_omega = omega.map(|w| {
        grid.iter()
            .zip(&big_psi)
            .filter(|(x, _)| w.contains(**x))
            .map(|(_, p)| p.abs())
            .fold(f64::INFINITY, f64::min)
    });
    Ok(CarlemanWeights {
        horizon,
        params: *params,
        grid: grid.to_vec(),
        sigma: sig,
        psi,
        big_psi,
        psi_mid,
        m0_max_psi,
        m0_min_abs_psi_omega,
    })
}

/// Grid function on `[0, T] x` (full spatial grid), uniform in time.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTime {
    pub horizon: f64,
    /// `values[k][g]` at time `k T / nt` and grid node `g`, including the
    /// boundary nodes.
    pub values: Vec<Vec<f64>>,
}

impl SpaceTime {
    pub fn zeros(horizon: f64, nt: usize, nodes: usize) -> Self {
        Self {
            horizon,
            values: vec![vec![0.0; nodes]; nt + 1],
        }
    }

    pub fn nt(&self) -> usize {
        self.values.len() - 1
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.nt() as f64
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            horizon: self.horizon,
            values: self
                .values
                .iter()
                .map(|row| row.iter().map(|v| v * factor).collect())
                .collect(),
        }
    }

    /// Time derivative by centered differences, one-sided at both ends.
    pub fn time_derivative(&self) -> SpaceTime {
        let nt = self.nt();
        let dt = self.dt();
        let values = (0..=nt)
            .map(|k| {
                let (a, b, h) = if k == 0 {
                    (0, 1, dt)
                } else if k == nt {
                    (nt - 1, nt, dt)
                } else {
                    (k - 1, k + 1, 2.0 * dt)
                };
                self.values[b].iter().zip(&self.values[a]).map(|(x, y)| (x - y) / h).collect()
            })
            .collect();
        SpaceTime {
            horizon: self.horizon,
            values,
        }
    }

    /// `z -> z_t + d M z`.
    pub fn apply_p(&self, d: f64, op: &DiscreteOperator) -> SpaceTime {
        let zt = self.time_derivative();
        let values = zt
            .values
            .iter()
            .zip(&self.values)
            .map(|(row_t, row)| {
                let mz = apply_full(op, row);
                row_t.iter().zip(&mz).map(|(a, b)| a + d * b).collect()
            })
            .collect();
        SpaceTime {
            horizon: self.horizon,
            values,
        }
    }
}

/// `(a z_x)_x` on the full grid, zero at nodes that are not unknowns.
fn apply_full(op: &DiscreteOperator, z: &[f64]) -> Vec<f64> {
    let inner = &z[op.first_unknown..z.len() - 1];
    let mz = op.apply(inner);
    let mut out = vec![0.0; z.len()];
    out[op.first_unknown..z.len() - 1].copy_from_slice(&mz);
    out
}

/// A functional value with the factor `exp(log_scale)` divided out.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Weighted {
    pub value: f64,
    pub log_scale: f64,
    /// Estimate of the mass dropped by the cutoff `(delta, T - delta)`.
    pub cutoff_error: f64,
}

/// `I(tau, z)` over `(delta, T - delta) x (0, 1)` with `delta = T / nt`,
/// scaled by `exp(-2 s phi_ref)`.
#[allow(non_snake_case)]
pub fn functional_I(
    tau: f64,
    z: &SpaceTime,
    s: f64,
    weights: &CarlemanWeights,
    op: &DiscreteOperator,
    phi_ref: f64,
) -> Result<Weighted> {
    let len = op.grid.len();
    if weights.grid.len() != len || z.values.iter().any(|r| r.len() != len) {
        return Err(Error::Shape("grid function, weights and operator disagree".into()));
    }
    let nt = z.nt();
    if nt < 4 {
        return Err(Error::Domain("need at least 4 time steps".into()));
    }
    let zt = z.time_derivative();
    let dt = z.dt();
    let a = &op.coefficient;
    // x^2 / a(x) at the nodes, with its limit 0 at x = 0
    let hardy: Vec<f64> = op
        .grid
        .iter()
        .map(|&x| if x == 0.0 { 0.0 } else { x * x / a.eval(x) })
        .collect();
    let weight_of = |g: usize| -> f64 {
        // lumped quadrature weight on the full grid
        let left = if g > 0 { op.grid[g] - op.grid[g - 1] } else { 0.0 };
        let right = if g + 1 < len { op.grid[g + 1] - op.grid[g] } else { 0.0 };
        0.5 * (left + right)
    };
    let w: Vec<f64> = (0..len).map(weight_of).collect();

    let slice = |k: usize| -> f64 {
        let t = k as f64 * dt;
        let theta = weights.theta(t).unwrap_or(f64::INFINITY);
        let row = &z.values[k];
        let mz = apply_full(op, row);
        let st = s * theta;
        let (p_m1, p_p1, p_p3) = (st.powf(tau - 1.0), st.powf(tau + 1.0), st.powf(tau + 3.0));
        let mut acc = 0.0;
        for g in 0..len {
            let e = (2.0 * s * (theta * weights.psi[g] - phi_ref)).exp();
            let nodal = p_m1 * (zt.values[k][g].powi(2) + mz[g].powi(2)) + p_p3 * hardy[g] * row[g].powi(2);
            acc += w[g] * e * nodal;
        }
        for (cell, flux) in op.flux.iter().enumerate() {
            let e = (2.0 * s * (theta * weights.psi_mid[cell] - phi_ref)).exp();
            let dz = row[cell + 1] - row[cell];
            // a z_x^2 h = flux * dz^2
            acc += p_p1 * e * flux * dz * dz;
        }
        acc
    };

    let values: Vec<f64> = (1..nt).into_par_iter().map(slice).collect();
    let mut total = 0.0;
    for (i, v) in values.iter().enumerate() {
        let wt = if i == 0 || i + 1 == values.len() { 0.5 } else { 1.0 };
        total += wt * v * dt;
    }
    let cutoff_error = dt * (values[0] + values[values.len() - 1]);
    if !total.is_finite() {
        return Err(Error::Numerical(format!("weighted integral overflowed at s = {s}")));
    }
    Ok(Weighted {
        value: total,
        log_scale: 2.0 * s * phi_ref,
        cutoff_error,
    })
}

/// Subsets `i_1 < ... < i_p` of `{1..n}` in lexicographic order.
fn subsets(n: usize, p: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, p: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == p {
            out.push(cur.clone());
            return;
        }
        for i in start..=n {
            cur.push(i);
            rec(i + 1, n, p, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(1, n, p, &mut Vec::new(), &mut out);
    out
}

/// `J(tau, phi)` for `n <= 3`, summing `I` over the products
/// `P_{i_p} ... P_{i_1} phi` with `P_i = d_t + d_i M`, with the exponents
/// exactly as in the definition: `tau + 3(n-1)` for `phi` itself,
/// `tau + 3(n-2)` for the single products `P_i phi` with `i >= 2`, and
/// `tau + 3(n-p-1)` for products of `p >= 2` factors.
#[allow(non_snake_case)]
pub fn functional_J(
    tau: f64,
    phi: &SpaceTime,
    diffusions: &[f64],
    s: f64,
    weights: &CarlemanWeights,
    op: &DiscreteOperator,
    phi_ref: f64,
) -> Result<Weighted> {
    let n = diffusions.len();
    if n == 0 || n > 3 {
        return Err(Error::Domain(format!("J is available for 1 <= n <= 3, got n = {n}")));
    }
    let nf = n as f64;
    let mut terms = vec![functional_I(tau + 3.0 * (nf - 1.0), phi, s, weights, op, phi_ref)?];
    for i in 2..=n {
        let z = phi.apply_p(diffusions[i - 1], op);
        terms.push(functional_I(tau + 3.0 * (nf - 2.0), &z, s, weights, op, phi_ref)?);
    }
    for p in 2..n {
        for idx in subsets(n, p) {
            let mut z = phi.clone();
            for &i in &idx {
                z = z.apply_p(diffusions[i - 1], op);
            }
            terms.push(functional_I(tau + 3.0 * (nf - p as f64 - 1.0), &z, s, weights, op, phi_ref)?);
        }
    }
    Ok(Weighted {
        value: terms.iter().map(|t| t.value).sum(),
        log_scale: 2.0 * s * phi_ref,
        cutoff_error: terms.iter().map(|t| t.cutoff_error).sum(),
    })
}

/// Crank-Nicolson solution of `u_t - (a u_x)_x + c u = f` on the full grid.
pub fn solve_scalar(
    op: &DiscreteOperator,
    potential: f64,
    u0: &[f64],
    source: Option<&dyn Fn(f64, f64) -> f64>,
    horizon: f64,
    nt: usize,
) -> Result<SpaceTime> {
    let len = op.grid.len();
    if u0.len() != len {
        return Err(Error::Shape(format!("u0 has {} values, grid has {len}", u0.len())));
    }
    let dt = horizon / nt as f64;
    let half = 0.5 * dt;
    let nodes = op.nodes();
    // mass (1 + dt c / 2) + dt/2 S on the left, mass (1 - dt c / 2) - dt/2 S on the right
    let lhs = SymTridiag::new(
        op.stiffness.diag.iter().zip(&op.mass).map(|(s, m)| m * (1.0 + half * potential) + half * s).collect(),
        op.stiffness.off.iter().map(|s| half * s).collect(),
    );
    let mut out = SpaceTime::zeros(horizon, nt, len);
    let first = op.first_unknown;
    let mut u: Vec<f64> = u0[first..len - 1].to_vec();
    out.values[0][first..len - 1].copy_from_slice(&u);
    let f_at = |t: f64| -> Vec<f64> {
        match source {
            Some(f) => nodes.iter().map(|&x| f(t, x)).collect(),
            None => vec![0.0; nodes.len()],
        }
    };
    let mut f_prev = f_at(0.0);
    for k in 1..=nt {
        let f_next = f_at(k as f64 * dt);
        let su = op.stiffness.mul_vec(&u);
        let rhs: Vec<f64> = (0..u.len())
            .map(|i| {
                op.mass[i] * ((1.0 - half * potential) * u[i] + half * (f_prev[i] + f_next[i])) - half * su[i]
            })
            .collect();
        u = lhs
            .solve(&rhs)
            .ok_or_else(|| Error::Numerical(format!("tridiagonal solve failed at step {k}")))?;
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite solution at step {k}")));
        }
        out.values[k][first..len - 1].copy_from_slice(&u);
        f_prev = f_next;
    }
    Ok(out)
}

/// `u_x(t, 1)` by the one-sided quadratic through the last three nodes.
fn boundary_slope(grid: &[f64], row: &[f64]) -> f64 {
    let n = grid.len();
    let (x0, x1, x2) = (grid[n - 3], grid[n - 2], grid[n - 1]);
    let (u0, u1, u2) = (row[n - 3], row[n - 2], row[n - 1]);
    let h1 = x1 - x0;
    let h2 = x2 - x1;
    // derivative at x2 of the interpolating parabola
    u0 * h2 / (h1 * (h1 + h2)) - u1 * (h1 + h2) / (h1 * h2) + u2 * (h1 + 2.0 * h2) / (h2 * (h1 + h2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatioRow {
    pub s: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub cutoff_error: f64,
}

/// Both sides of the boundary Carleman estimate along `s_grid`:
///
/// ```text
/// LHS = I(0, u)
/// RHS = int int f^2 e^{2 s phi} + s a(1) int theta u_x(t,1)^2 e^{2 s phi(t,1)} dt
/// ```
///
/// Values are reported with `exp(2 s phi_max)` divided out.
#[allow(clippy::too_many_arguments)]
pub fn empirical_carleman_ratio(
    op: &DiscreteOperator,
    potential: f64,
    u0: &[f64],
    source: Option<&(dyn Fn(f64, f64) -> f64 + Sync)>,
    weights: &CarlemanWeights,
    nt: usize,
    s_grid: &[f64],
) -> Result<Vec<RatioRow>> {
    let horizon = weights.horizon;
    let src: Option<&dyn Fn(f64, f64) -> f64> = source.map(|f| f as &dyn Fn(f64, f64) -> f64);
    let u = solve_scalar(op, potential, u0, src, horizon, nt)?;
    let dt = u.dt();
    let len = op.grid.len();
    let a1 = op.coefficient.eval(1.0);
    let phi_ref = weights.phi_max();
    let slopes: Vec<f64> = u.values.iter().map(|row| boundary_slope(&op.grid, row)).collect();
    let w: Vec<f64> = (0..len)
        .map(|g| {
            let left = if g > 0 { op.grid[g] - op.grid[g - 1] } else { 0.0 };
            let right = if g + 1 < len { op.grid[g + 1] - op.grid[g] } else { 0.0 };
            0.5 * (left + right)
        })
        .collect();

    s_grid
        .iter()
        .map(|&s| {
            let lhs = functional_I(0.0, &u, s, weights, op, phi_ref)?;
            let mut rhs = 0.0;
            for (k, slope) in slopes.iter().enumerate().take(nt).skip(1) {
                let t = k as f64 * dt;
                let theta = weights.theta(t)?;
                let wt = if k == 1 || k + 1 == nt { 0.5 } else { 1.0 };
                let shift = |psi: f64| (2.0 * s * (theta * psi - phi_ref)).exp();
                let boundary = s * a1 * theta * slope.powi(2) * shift(weights.psi[len - 1]);
                let mut volume = 0.0;
                if let Some(f) = source {
                    for ((wg, x), psi) in w.iter().zip(&op.grid).zip(&weights.psi) {
                        volume += wg * f(t, *x).powi(2) * shift(*psi);
                    }
                }
                rhs += wt * dt * (boundary + volume);
            }
            let ratio = if rhs > 0.0 {
                lhs.value / rhs
            } else if lhs.value == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            Ok(RatioRow {
                s,
                lhs: lhs.value,
                rhs,
                ratio,
                cutoff_error: lhs.cutoff_error,
            })
        })
        .collect()
}

/// `n` geometrically spaced values in `[lo, hi]`.
pub fn s_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect()
}

/// Smooth random initial datum `sum_k c_k sin(k pi x) / k^2` on the full
/// grid (with a constant mode added in the strongly degenerate case,
/// where `u(0)` is free).
pub fn random_initial_datum(grid: &[f64], bc: BoundaryRegime, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coeffs: Vec<f64> = (1..=6).map(|k| rng.random_range(-1.0..1.0) / (k * k) as f64).collect();
    let bump = match bc {
        BoundaryRegime::Dirichlet => 0.0,
        BoundaryRegime::NeumannAtZero => rng.random_range(-1.0..1.0),
    };
    grid.iter()
        .map(|&x| {
            let s: f64 = coeffs
                .iter()
                .enumerate()
                .map(|(k, c)| c * ((k + 1) as f64 * std::f64::consts::PI * x).sin())
                .sum();
            s + bump * (1.0 - x * x).powi(2)
        })
        .collect()
}

//! Flux-form discretization of `M u = (a(x) u_x)_x`.
//!
//! The stiffness form `S` is assembled cell by cell with `a` evaluated at
//! cell midpoints, so `x = 0` is never touched. Masses are lumped. The
//! operator is `M_h = -mass^-1 S`; the symmetric matrix exposed by
//! [`DiscreteOperator::symmetric_matrix`] is the mass-normalized form
//! `-mass^-1/2 S mass^-1/2`, which on a uniform grid is the familiar
//! `(a_{i+1/2}(u_{i+1}-u_i) - a_{i-1/2}(u_i-u_{i-1}))/h^2` stencil.
//!
//! Dirichlet (WD) eliminates `x_0 = 0`. In the strongly degenerate regime
//! `x_0` stays an unknown and the flux through `x = 0` is dropped, which is
//! the weak form of `(a u_x)(0) = 0`.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::{BoundaryRegime, DiffusionCoefficient, Grading, SystemSpec};
use crate::tridiag::{self, SymTridiag};

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteOperator {
    pub bc: BoundaryRegime,
    /// Full grid `0 = x_0 < x_1 < ... < x_{N+1} = 1`.
    pub grid: Vec<f64>,
    /// Index in `grid` of the first unknown (1 for WD, 0 for SD).
    pub first_unknown: usize,
    /// `a(x_{e+1/2}) / h_e` for each cell `e = 0..=N`.
    pub flux: Vec<f64>,
    /// Stiffness `S` restricted to the unknowns (positive semidefinite).
    pub stiffness: SymTridiag,
    /// Lumped masses at the unknowns.
    pub mass: Vec<f64>,
    pub coefficient: DiffusionCoefficient,
}

pub fn build_grid(nx: usize, grading: Grading) -> Result<Vec<f64>> {
    let n1 = (nx + 1) as f64;
    let grid: Vec<f64> = match grading {
        Grading::Uniform => (0..=nx + 1).map(|i| i as f64 / n1).collect(),
        Grading::Power { gamma } => {
            if !(gamma >= 1.0 && gamma.is_finite()) {
                return Err(Error::Domain(format!("grading exponent {gamma} must be >= 1")));
            }
            (0..=nx + 1).map(|i| (i as f64 / n1).powf(gamma)).collect()
        }
        Grading::Geometric { decades } => {
            if !(decades > 0.0 && decades < 300.0) {
                return Err(Error::Domain(format!(
                    "geometric grading needs 0 < decades < 300, got {decades}"
                )));
            }
            std::iter::once(0.0)
                .chain((1..=nx + 1).map(|i| {
                    let frac = (nx + 1 - i) as f64 / nx as f64;
                    10f64.powf(-decades * frac)
                }))
                .collect()
        }
    };
    Ok(grid)
}

impl DiscreteOperator {
    pub fn from_parts(
        coefficient: &DiffusionCoefficient,
        bc: BoundaryRegime,
        nx: usize,
        grading: Grading,
    ) -> Result<Self> {
        if nx < 3 {
            return Err(Error::Domain(format!("need at least 3 interior nodes, got {nx}")));
        }
        let grid = build_grid(nx, grading)?;
        let mut flux = Vec::with_capacity(nx + 1);
        for w in grid.windows(2) {
            let h = w[1] - w[0];
            let mid = 0.5 * (w[0] + w[1]);
            let a_mid = coefficient.eval(mid);
            if !(a_mid > 0.0 && a_mid.is_finite()) || !(h > 0.0) {
                return Err(Error::Numerical(format!(
                    "diffusion coefficient not evaluable at midpoint {mid}: a = {a_mid}"
                )));
            }
            flux.push(a_mid / h);
        }
        let first_unknown = match bc {
            BoundaryRegime::Dirichlet => 1,
            BoundaryRegime::NeumannAtZero => 0,
        };
        // unknown j sits at grid index first_unknown + j; the last unknown
        // is grid index nx.
        let unknowns = nx + 1 - first_unknown;
        let mut diag = vec![0.0; unknowns];
        let mut off = vec![0.0; unknowns - 1];
        let mut mass = vec![0.0; unknowns];
        for (j, g) in (first_unknown..=nx).enumerate() {
            let left = if g > 0 { flux[g - 1] } else { 0.0 };
            diag[j] = left + flux[g];
            if j + 1 < unknowns {
                off[j] = -flux[g];
            }
            let h_left = if g > 0 { grid[g] - grid[g - 1] } else { 0.0 };
            let h_right = grid[g + 1] - grid[g];
            mass[j] = 0.5 * (h_left + h_right);
        }
        Ok(Self {
            bc,
            grid,
            first_unknown,
            flux,
            stiffness: SymTridiag::new(diag, off),
            mass,
            coefficient: coefficient.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    /// Coordinates of the unknowns.
    pub fn nodes(&self) -> &[f64] {
        &self.grid[self.first_unknown..self.grid.len() - 1]
    }

    /// `(a u_x)_x` at the unknowns.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        self.stiffness
            .mul_vec(u)
            .iter()
            .zip(&self.mass)
            .map(|(s, m)| -s / m)
            .collect()
    }

    /// Mass-normalized symmetric form `-mass^-1/2 S mass^-1/2`.
    pub fn symmetric_matrix(&self) -> SymTridiag {
        let r: Vec<f64> = self.mass.iter().map(|m| m.sqrt()).collect();
        SymTridiag {
            diag: self.stiffness.diag.iter().zip(&self.mass).map(|(d, m)| -d / m).collect(),
            off: self
                .stiffness
                .off
                .iter()
                .enumerate()
                .map(|(i, o)| -o / (r[i] * r[i + 1]))
                .collect(),
        }
    }

    /// Dense copy of the symmetric form, for tests and small dumps.
    pub fn dense_symmetric(&self) -> nalgebra::DMatrix<f64> {
        let t = self.symmetric_matrix();
        let n = t.len();
        let mut m = nalgebra::DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = t.diag[i];
            if i + 1 < n {
                m[(i, i + 1)] = t.off[i];
                m[(i + 1, i)] = t.off[i];
            }
        }
        m
    }

    /// Embeds unknowns into the full grid (zeros at Dirichlet points).
    pub fn extend(&self, u: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.grid.len()];
        full[self.first_unknown..self.first_unknown + u.len()].copy_from_slice(u);
        full
    }

    /// `u^T S u` summed cellwise as `sum a_{e+1/2} (u_{e+1}-u_e)^2 / h_e`,
    /// which keeps full relative accuracy.
    pub fn energy(&self, u: &[f64]) -> f64 {
        let full = self.extend(u);
        self.flux
            .iter()
            .enumerate()
            .map(|(e, f)| f * (full[e + 1] - full[e]).powi(2))
            .sum()
    }

    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        self.mass.iter().zip(u).zip(v).map(|((m, a), b)| m * a * b).sum()
    }

    pub fn norm(&self, u: &[f64]) -> f64 {
        self.inner(u, u).sqrt()
    }

    /// CSV dump of the banded operator: node, x, mass, diagonal and upper
    /// off-diagonal of the mass-normalized form.
    pub fn to_csv(&self) -> String {
        let t = self.symmetric_matrix();
        let mut out = String::from("i,x,mass,diag,upper\n");
        for (i, x) in self.nodes().iter().enumerate() {
            let upper = t.off.get(i).copied().unwrap_or(0.0);
            let _ = writeln!(out, "{i},{x:.17e},{:.17e},{:.17e},{upper:.17e}", self.mass[i], t.diag[i]);
        }
        out
    }
}

pub fn assemble_operator(spec: &SystemSpec) -> Result<DiscreteOperator> {
    DiscreteOperator::from_parts(&spec.coefficient, spec.bc, spec.grid.nx, spec.grid.grading)
}

const GAUSS8_NODES: [f64; 8] = [
    -0.960_289_856_497_536_3,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GAUSS8_WEIGHTS: [f64; 8] = [
    0.101_228_536_290_376_26,
    0.222_381_034_453_374_47,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362,
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_47,
    0.101_228_536_290_376_26,
];

/// `(int w p0 p0, int w p0 p1, int w p1 p1)` over `[lo, hi]` for the two
/// hat functions of the cell `[x0, x1]` containing it.
fn weighted_hat_products(w: &dyn Fn(f64) -> f64, x0: f64, x1: f64, lo: f64, hi: f64) -> [f64; 3] {
    let h = x1 - x0;
    let half = 0.5 * (hi - lo);
    let mut acc = [0.0; 3];
    for (g, wt) in GAUSS8_NODES.iter().zip(GAUSS8_WEIGHTS.iter()) {
        let x = lo + half * (g + 1.0);
        let p0 = (x1 - x) / h;
        let p1 = (x - x0) / h;
        let f = w(x) * wt * half;
        acc[0] += f * p0 * p0;
        acc[1] += f * p0 * p1;
        acc[2] += f * p1 * p1;
    }
    acc
}

/// Best discrete constant `C` in `int (a/x^2) u^2 <= C int a u_x^2`.
///
/// The left side uses the consistent (P1) mass matrix weighted by
/// `a/x^2`, the right side the flux-form stiffness; `C` is the largest
/// eigenvalue of that definite pencil, found by inertia bisection. The
/// first cell is split dyadically towards 0 where the weight is singular.
pub fn hardy_poincare_constant(op: &DiscreteOperator) -> Result<f64> {
    if op.bc != BoundaryRegime::Dirichlet {
        return Err(Error::Domain(
            "the Hardy-Poincare inequality is evaluated with u(0) = 0 (WD regime)".into(),
        ));
    }
    let a = &op.coefficient;
    let weight = |x: f64| a.eval(x) / (x * x);
    let n = op.len();
    let mut wd = vec![0.0; n];
    let mut wo = vec![0.0; n.saturating_sub(1)];
    for e in 0..op.grid.len() - 1 {
        let (x0, x1) = (op.grid[e], op.grid[e + 1]);
        let parts = if e == 0 {
            let mut acc = [0.0; 3];
            let mut hi = x1;
            for _ in 0..60 {
                let lo = 0.5 * hi;
                let p = weighted_hat_products(&weight, x0, x1, lo, hi);
                for k in 0..3 {
                    acc[k] += p[k];
                }
                hi = lo;
            }
            acc
        } else {
            weighted_hat_products(&weight, x0, x1, x0, x1)
        };
        // grid index g maps to unknown g - 1 (Dirichlet at both ends)
        let left = e.checked_sub(1).filter(|&j| j < n);
        let right = if e < n { Some(e) } else { None };
        if let Some(j) = left {
            wd[j] += parts[0];
        }
        if let Some(j) = right {
            wd[j] += parts[2];
        }
        if let (Some(j), Some(_)) = (left, right) {
            wo[j] += parts[1];
        }
    }
    if wd.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("Hardy weight a/x^2 not integrable on the grid".into()));
    }
    let weighted = SymTridiag::new(wd, wo);
    let stiff = &op.stiffness;
    if stiff.negative_count() > 0 || stiff.diag.iter().any(|d| *d <= 0.0) {
        return Err(Error::Numerical("stiffness is not positive definite".into()));
    }
    // eigenvalues of (W, S) above sigma <=> positive eigenvalues of W - sigma S
    let above = |sigma: f64| n - weighted.shifted(sigma, stiff).negative_count();
    let mut hi = 1.0;
    while above(hi) > 0 {
        hi *= 2.0;
        if hi > 1e300 {
            return Err(Error::Numerical("Hardy constant unbounded on this grid".into()));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if above(mid) > 0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Lowest eigenvalues of the pencil `(S, mass)`; a convenience used by the
/// spectral module and tests.
pub(crate) fn eigen_bracket(op: &DiscreteOperator) -> f64 {
    tridiag::gershgorin_upper(&op.stiffness, &op.mass)
}

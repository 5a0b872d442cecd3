//! Eigenbasis of `-M` on the discrete grid and the mode projections.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::operator::{self, DiscreteOperator};
use crate::tridiag::{self, SymTridiag};

/// Lowest eigenpairs of `-M_h`, mass-orthonormal.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBasis {
    pub lambdas: Vec<f64>,
    /// `modes[p]` holds `Phi_{p+1}` at the operator unknowns.
    pub modes: Vec<Vec<f64>>,
    /// Lumped quadrature weights shared with the operator.
    pub mass: Vec<f64>,
    pub nodes: Vec<f64>,
    /// Largest relative residual `|S Phi - lambda mass Phi| / (lambda |mass Phi|)`.
    pub max_residual: f64,
    /// Indices `p` (1-based) with `lambda_{p+1}` numerically equal to
    /// `lambda_p`.
    pub repeated: Vec<usize>,
}

impl SpectralBasis {
    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        self.mass.iter().zip(u).zip(v).map(|((m, a), b)| m * a * b).sum()
    }

    /// `Phi_p` (1-based).
    pub fn mode(&self, p: usize) -> &[f64] {
        &self.modes[p - 1]
    }

    pub fn lambda(&self, p: usize) -> f64 {
        self.lambdas[p - 1]
    }

    /// Keeps the first `count` modes.
    pub fn truncated(&self, count: usize) -> SpectralBasis {
        let count = count.min(self.len());
        SpectralBasis {
            lambdas: self.lambdas[..count].to_vec(),
            modes: self.modes[..count].to_vec(),
            mass: self.mass.clone(),
            nodes: self.nodes.clone(),
            max_residual: self.max_residual,
            repeated: self.repeated.iter().copied().filter(|&p| p < count).collect(),
        }
    }

    /// Mass-weighted Gram matrix of the modes.
    pub fn gram(&self) -> nalgebra::DMatrix<f64> {
        let p = self.len();
        nalgebra::DMatrix::from_fn(p, p, |i, j| self.inner(&self.modes[i], &self.modes[j]))
    }
}

fn inverse_iteration(op: &DiscreteOperator, sigma: f64, seed: usize) -> Option<Vec<f64>> {
    let mass = SymTridiag::diagonal(op.mass.clone());
    let shifted = op.stiffness.shifted(sigma, &mass);
    let n = op.len();
    // deterministic, non-degenerate start vector
    let mut v: Vec<f64> = (0..n)
        .map(|i| 1.0 + 0.1 * ((i * 7919 + seed * 104_729) % 1000) as f64 / 1000.0)
        .collect();
    for _ in 0..4 {
        let rhs: Vec<f64> = v.iter().zip(&op.mass).map(|(x, m)| x * m).collect();
        let mut w = shifted.solve(&rhs)?;
        let nrm = op.norm(&w);
        if !(nrm.is_finite() && nrm > 0.0) {
            return None;
        }
        w.iter_mut().for_each(|x| *x /= nrm);
        v = w;
    }
    Some(v)
}

/// Lowest `count` eigenpairs of `-M_h Phi = lambda Phi`.
///
/// Eigenvalues are bracketed by Sturm bisection on the pencil
/// `(S, mass)`, then each vector is obtained by shifted inverse iteration
/// and its eigenvalue recomputed as the Rayleigh quotient of the
/// cellwise energy, which keeps full relative accuracy on strongly graded
/// grids where the bisection alone does not.
pub fn compute_spectrum(op: &DiscreteOperator, count: usize) -> Result<SpectralBasis> {
    let n = op.len();
    if count == 0 || count > n / 4 {
        return Err(Error::Domain(format!(
            "requested {count} modes but only {} are resolvable on {n} unknowns",
            n / 4
        )));
    }
    let mass = SymTridiag::diagonal(op.mass.clone());
    let upper = operator::eigen_bracket(op);
    let raw: Vec<Option<(f64, Vec<f64>)>> = (0..count)
        .into_par_iter()
        .map(|k| {
            let sigma = tridiag::pencil_bisect(&op.stiffness, &mass, k, 0.0, upper);
            let v = inverse_iteration(op, sigma, k)?;
            Some((sigma, v))
        })
        .collect();

    let mut modes: Vec<Vec<f64>> = Vec::with_capacity(count);
    let mut lambdas = Vec::with_capacity(count);
    for (k, item) in raw.into_iter().enumerate() {
        let (_, mut v) = item.ok_or_else(|| {
            Error::Numerical(format!("inverse iteration broke down for mode {}", k + 1))
        })?;
        // two passes of mass-weighted Gram-Schmidt
        for _ in 0..2 {
            for prev in &modes {
                let c = op.inner(&v, prev);
                v.iter_mut().zip(prev).for_each(|(x, q)| *x -= c * q);
            }
        }
        let nrm = op.norm(&v);
        v.iter_mut().for_each(|x| *x /= nrm);
        // Phi_p > 0 on the arch adjacent to x = 1
        if v[n - 1] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        lambdas.push(op.energy(&v));
        modes.push(v);
    }

    let mut max_residual: f64 = 0.0;
    for (lam, v) in lambdas.iter().zip(&modes) {
        let sv = op.stiffness.mul_vec(v);
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..n {
            let mv = op.mass[i] * v[i];
            num += (sv[i] - lam * mv).powi(2) / op.mass[i];
            den += mv * mv / op.mass[i];
        }
        max_residual = max_residual.max(num.sqrt() / (lam * den.sqrt()));
    }
    if !(max_residual < 1e-6) {
        return Err(Error::Numerical(format!(
            "eigenpairs did not converge: relative residual {max_residual:e}"
        )));
    }
    let repeated = lambdas
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[1] - w[0] <= 1e-10 * w[1])
        .map(|(i, _)| i + 1)
        .collect();
    if lambdas.iter().any(|l| !(*l > 0.0)) {
        return Err(Error::Numerical("nonpositive eigenvalue of -M".into()));
    }
    Ok(SpectralBasis {
        lambdas,
        modes,
        mass: op.mass.clone(),
        nodes: op.nodes().to_vec(),
        max_residual,
        repeated,
    })
}

/// `P_p^j(Psi)`: component `k` is `<Psi_k, Phi_p>` (p is 1-based).
pub fn project(psi: &[Vec<f64>], p: usize, basis: &SpectralBasis) -> Result<Vec<f64>> {
    if p == 0 || p > basis.len() {
        return Err(Error::Domain(format!("mode {p} not in basis of size {}", basis.len())));
    }
    let phi = basis.mode(p);
    psi.iter()
        .map(|comp| {
            if comp.len() != phi.len() {
                return Err(Error::Shape(format!(
                    "grid function has {} values, basis grid has {}",
                    comp.len(),
                    phi.len()
                )));
            }
            Ok(basis.inner(comp, phi))
        })
        .collect()
}

/// Number of sign changes of a grid function, ignoring exact zeros.
pub fn sign_changes(v: &[f64]) -> usize {
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let signs: Vec<bool> = v
        .iter()
        .filter(|x| x.abs() > 1e-12 * scale)
        .map(|x| *x > 0.0)
        .collect();
    signs.windows(2).filter(|w| w[0] != w[1]).count()
}

//! Problem description and the structural hypotheses it has to satisfy.
//!
//! A [`SystemSpec`] bundles the diffusion coefficient `a(x)`, the matrices
//! `D`, `A`, `B` of the coupled system `Y_t = (D M + A) Y + B v 1_omega`,
//! the control region, the horizon and the discretization sizes. Building
//! one runs every validation below, so a `SystemSpec` in hand is always
//! admissible.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Radius of the neighbourhood of 0 on which the monotonicity part of the
/// strong-degeneracy hypothesis is checked.
pub const SD_MONOTONE_RADIUS: f64 = 0.1;

/// Default number of geometric validation points.
pub const DEFAULT_VALIDATION_SAMPLES: usize = 40;

/// Tolerance on imaginary parts when filtering the spectrum of `D`.
const IMAG_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DegeneracyClass {
    #[serde(rename = "WD")]
    Weak,
    #[serde(rename = "SD")]
    Strong,
}

impl DegeneracyClass {
    fn admits(self, k: f64) -> bool {
        match self {
            DegeneracyClass::Weak => (0.0..1.0).contains(&k),
            DegeneracyClass::Strong => (1.0..2.0).contains(&k),
        }
    }

    fn for_constant(k: f64) -> Option<Self> {
        if (0.0..1.0).contains(&k) {
            Some(DegeneracyClass::Weak)
        } else if (1.0..2.0).contains(&k) {
            Some(DegeneracyClass::Strong)
        } else {
            None
        }
    }

    pub fn boundary_regime(self) -> BoundaryRegime {
        match self {
            DegeneracyClass::Weak => BoundaryRegime::Dirichlet,
            DegeneracyClass::Strong => BoundaryRegime::NeumannAtZero,
        }
    }
}

/// Boundary conditions at the degenerate end `x = 0`. Both regimes impose
/// `u(1) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundaryRegime {
    #[serde(rename = "WD-Dirichlet")]
    Dirichlet,
    #[serde(rename = "SD-Neumann-at-0")]
    NeumannAtZero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DiffusionKind {
    PowerLaw { alpha: f64 },
    /// Table of `(x, a(x))` pairs, interpolated piecewise linearly. The
    /// table must start at `(0, 0)` and end at `x = 1`.
    Sampled { table: Vec<(f64, f64)> },
}

impl DiffusionKind {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            DiffusionKind::PowerLaw { alpha } => {
                if x == 0.0 {
                    0.0
                } else {
                    x.powf(*alpha)
                }
            }
            DiffusionKind::Sampled { table } => interpolate(table, x),
        }
    }

    /// `x a'(x)`, exact for the power law and by centered differences of
    /// the interpolant otherwise.
    fn x_derivative(&self, x: f64) -> f64 {
        match self {
            DiffusionKind::PowerLaw { alpha } => alpha * self.eval(x),
            DiffusionKind::Sampled { .. } => {
                let h = 1e-7 * x.max(1e-12);
                let lo = (x - h).max(0.0);
                let hi = (x + h).min(1.0);
                x * (self.eval(hi) - self.eval(lo)) / (hi - lo)
            }
        }
    }

    fn check_evaluable(&self) -> Result<()> {
        match self {
            DiffusionKind::PowerLaw { alpha } => {
                if !alpha.is_finite() || *alpha < 0.0 {
                    return Err(Error::Diffusion(format!(
                        "power-law exponent must be finite and nonnegative, got {alpha}"
                    )));
                }
            }
            DiffusionKind::Sampled { table } => {
                if table.len() < 2 {
                    return Err(Error::Diffusion("sampled table needs at least two points".into()));
                }
                if table[0] != (0.0, 0.0) {
                    return Err(Error::Diffusion("sampled table must start at (0, 0)".into()));
                }
                if (table[table.len() - 1].0 - 1.0).abs() > 1e-14 {
                    return Err(Error::Diffusion("sampled table must end at x = 1".into()));
                }
                for w in table.windows(2) {
                    if w[1].0 <= w[0].0 {
                        return Err(Error::Diffusion(
                            "sampled table abscissae must be strictly increasing".into(),
                        ));
                    }
                }
                if let Some(&(x, ax)) = table.iter().skip(1).find(|(_, ax)| *ax <= 0.0) {
                    return Err(Error::Diffusion(format!(
                        "a must be positive on (0,1], got a({x}) = {ax}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Smallest abscissa below which the coefficient carries no information
    /// of its own (first positive table node for sampled data).
    fn resolution_floor(&self) -> f64 {
        match self {
            DiffusionKind::PowerLaw { .. } => 0.0,
            DiffusionKind::Sampled { table } => table[1].0,
        }
    }
}

fn interpolate(table: &[(f64, f64)], x: f64) -> f64 {
    let i = table.partition_point(|(xi, _)| *xi <= x);
    if i == 0 {
        return table[0].1;
    }
    if i >= table.len() {
        return table[table.len() - 1].1;
    }
    let (x0, y0) = table[i - 1];
    let (x1, y1) = table[i];
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// A validated diffusion coefficient together with its hypothesis
/// constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionCoefficient {
    pub kind: DiffusionKind,
    pub class: DegeneracyClass,
    /// Constant `K` with `x a'(x) <= K a(x)`.
    pub k: f64,
    /// Exponent `theta` of the monotonicity condition, strong case only.
    pub theta_sd: Option<f64>,
}

impl DiffusionCoefficient {
    /// Infers class, `K` and `theta` from the data.
    pub fn infer(kind: DiffusionKind) -> Result<Self> {
        let report = classify(&kind, DEFAULT_VALIDATION_SAMPLES)?;
        Ok(Self {
            kind,
            class: report.class,
            k: report.k,
            theta_sd: report.theta,
        })
    }

    pub fn power_law(alpha: f64) -> Result<Self> {
        Self::infer(DiffusionKind::PowerLaw { alpha })
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.kind.eval(x)
    }

    pub fn power_law_exponent(&self) -> Option<f64> {
        match self.kind {
            DiffusionKind::PowerLaw { alpha } => Some(alpha),
            DiffusionKind::Sampled { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DegeneracyClassReport {
    pub class: DegeneracyClass,
    /// Best (smallest) `K` fitting all validation samples.
    pub k: f64,
    pub theta: Option<f64>,
    /// Radius of the neighbourhood of 0 used for the monotonicity check.
    pub monotone_radius: f64,
    pub sample_count: usize,
}

/// Geometric points `2^-j` plus a uniform sweep; degeneracy effects live
/// near 0 so the geometric part is what matters.
fn validation_points(samples: usize, floor: f64) -> Vec<f64> {
    let mut pts: Vec<f64> = (0..=samples)
        .map(|j| 0.5f64.powi(j as i32))
        .chain((1..=samples).map(|i| i as f64 / samples as f64))
        .filter(|&x| x >= floor && x > 0.0)
        .collect();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    pts
}

fn best_constant(kind: &DiffusionKind, pts: &[f64]) -> f64 {
    match kind {
        DiffusionKind::PowerLaw { alpha } => *alpha,
        DiffusionKind::Sampled { .. } => pts
            .iter()
            .map(|&x| kind.x_derivative(x) / kind.eval(x))
            .fold(0.0, f64::max),
    }
}

fn nondecreasing_ratio(kind: &DiffusionKind, theta: f64, pts: &[f64]) -> bool {
    let near: Vec<f64> = pts
        .iter()
        .copied()
        .filter(|&x| x <= SD_MONOTONE_RADIUS)
        .collect();
    near.windows(2).all(|w| {
        let r0 = kind.eval(w[0]) / w[0].powf(theta);
        let r1 = kind.eval(w[1]) / w[1].powf(theta);
        r1 >= r0 * (1.0 - 1e-12)
    })
}

fn theta_admissible(k: f64, theta: f64) -> bool {
    if k > 1.0 {
        theta > 1.0 && theta <= k
    } else {
        theta > 0.0 && theta < 1.0
    }
}

fn find_theta(kind: &DiffusionKind, k: f64, pts: &[f64]) -> Option<f64> {
    let candidates: Vec<f64> = if k > 1.0 {
        let steps = 100;
        (0..steps)
            .map(|i| k - (k - 1.0) * i as f64 / steps as f64)
            .collect()
    } else {
        (1..100).rev().map(|i| i as f64 / 100.0).collect()
    };
    candidates
        .into_iter()
        .find(|&theta| nondecreasing_ratio(kind, theta, pts))
}

fn classify(kind: &DiffusionKind, samples: usize) -> Result<DegeneracyClassReport> {
    kind.check_evaluable()?;
    let pts = validation_points(samples, kind.resolution_floor());
    for &x in &pts {
        let ax = kind.eval(x);
        if !(ax > 0.0) || !ax.is_finite() {
            return Err(Error::Diffusion(format!("a({x}) = {ax} is not positive")));
        }
    }
    let k = best_constant(kind, &pts);
    let class = DegeneracyClass::for_constant(k).ok_or_else(|| {
        Error::Diffusion(format!(
            "smallest admissible K = {k} lies outside [0,1) (WD) and [1,2) (SD)"
        ))
    })?;
    let theta = match class {
        DegeneracyClass::Weak => None,
        DegeneracyClass::Strong => {
            let theta = if let DiffusionKind::PowerLaw { alpha } = kind {
                // a/x^theta = x^(alpha - theta)
                if *alpha > 1.0 {
                    Some(*alpha)
                } else {
                    find_theta(kind, k, &pts)
                }
            } else {
                find_theta(kind, k, &pts)
            };
            Some(theta.ok_or_else(|| {
                Error::Diffusion(format!(
                    "no exponent theta makes a(x)/x^theta nondecreasing on (0, {SD_MONOTONE_RADIUS}]"
                ))
            })?)
        }
    };
    Ok(DegeneracyClassReport {
        class,
        k,
        theta,
        monotone_radius: SD_MONOTONE_RADIUS,
        sample_count: pts.len(),
    })
}

/// Checks the degeneracy hypotheses of a fully specified coefficient and
/// reports the best constants found on the validation samples.
pub fn validate_diffusion(a: &DiffusionCoefficient, samples: usize) -> Result<DegeneracyClassReport> {
    let report = classify(&a.kind, samples)?;
    if !a.class.admits(a.k) {
        return Err(Error::Diffusion(format!(
            "declared K = {} is outside the range of class {:?}",
            a.k, a.class
        )));
    }
    if report.k > a.k * (1.0 + 1e-12) + 1e-14 {
        return Err(Error::Diffusion(format!(
            "x a'(x) <= K a(x) fails: declared K = {} but samples need K >= {}",
            a.k, report.k
        )));
    }
    if a.class != report.class {
        return Err(Error::Diffusion(format!(
            "declared class {:?} but the coefficient is {:?}",
            a.class, report.class
        )));
    }
    if let (DegeneracyClass::Strong, Some(theta)) = (a.class, a.theta_sd) {
        let pts = validation_points(samples, a.kind.resolution_floor());
        if !theta_admissible(a.k, theta) || !nondecreasing_ratio(&a.kind, theta, &pts) {
            return Err(Error::Diffusion(format!(
                "theta = {theta} is not admissible for K = {}",
                a.k
            )));
        }
        return Ok(DegeneracyClassReport {
            theta: Some(theta),
            ..report
        });
    }
    Ok(report)
}

/// Certificate that `D = P^-1 J P` with a real positive diagonal `J`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalizationCertificate {
    pub p: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    /// 2-norm condition number of the eigenvector matrix.
    pub conditioning: f64,
    pub residual: f64,
}

pub fn validate_diagonalizable(d: &DMatrix<f64>, tol: f64) -> Result<DiagonalizationCertificate> {
    let n = d.nrows();
    if n == 0 || d.ncols() != n {
        return Err(Error::Shape(format!(
            "D must be square, got {}x{}",
            d.nrows(),
            d.ncols()
        )));
    }
    let scale = d.norm().max(f64::MIN_POSITIVE);
    let spectrum = d.clone().complex_eigenvalues();
    let mut eig: Vec<f64> = Vec::with_capacity(n);
    for z in spectrum.iter() {
        if z.im.abs() > IMAG_TOL * z.re.abs().max(1.0) {
            return Err(Error::Diagonalization(format!("complex eigenvalue {z}")));
        }
        if z.re <= 0.0 {
            return Err(Error::Diagonalization(format!("nonpositive eigenvalue {}", z.re)));
        }
        eig.push(z.re);
    }
    eig.sort_by(|a, b| a.partial_cmp(b).unwrap());

    // Group numerically equal eigenvalues; a defective cluster shows up as
    // a null space of (D - mu I) smaller than the cluster.
    let mut clusters: Vec<(f64, usize)> = Vec::new();
    for &mu in &eig {
        match clusters.last_mut() {
            Some((c, k)) if (mu - *c).abs() <= 1e-6 * mu.abs().max(1.0) => {
                *c = (*c * *k as f64 + mu) / (*k as f64 + 1.0);
                *k += 1;
            }
            _ => clusters.push((mu, 1)),
        }
    }

    let mut vecs: Vec<DVector<f64>> = Vec::with_capacity(n);
    let mut diag: Vec<f64> = Vec::with_capacity(n);
    for &(mu, mult) in &clusters {
        let shifted = d - DMatrix::identity(n, n) * mu;
        let basis = linalg::null_space(&shifted, 1e-8 * scale);
        if basis.ncols() < mult {
            return Err(Error::Diagonalization(format!(
                "eigenvalue {mu} has algebraic multiplicity {mult} but only {} eigenvector(s)",
                basis.ncols()
            )));
        }
        for j in 0..mult {
            vecs.push(basis.column(j).into_owned());
            diag.push(mu);
        }
    }
    let v = DMatrix::from_columns(&vecs);
    let sv = linalg::singular_values(&v);
    let conditioning = sv[0] / sv[sv.len() - 1];
    if !conditioning.is_finite() || conditioning > 1.0 / tol {
        return Err(Error::Diagonalization(format!(
            "eigenvector matrix is numerically singular (cond = {conditioning:e})"
        )));
    }
    let p = v
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Diagonalization("eigenvector matrix is singular".into()))?;
    let j = DMatrix::from_diagonal(&DVector::from_vec(diag.clone()));
    let residual = (&v * j * &p - d).norm() / scale;
    if residual > tol.max(1e-12 * conditioning) {
        return Err(Error::Diagonalization(format!(
            "reconstruction residual {residual:e} exceeds tolerance {tol:e}"
        )));
    }
    Ok(DiagonalizationCertificate {
        p,
        eigenvalues: diag,
        conditioning,
        residual,
    })
}

/// Open interval `(lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, x: f64) -> bool {
        x > self.lo && x < self.hi
    }

    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Spatial node placement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Grading {
    Uniform,
    /// `x_i = (i/(N+1))^gamma`.
    Power { gamma: f64 },
    /// Geometric nodes from `10^-decades` to 1, plus the endpoint 0.
    Geometric { decades: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Interior node count.
    pub nx: usize,
    /// Time step count.
    pub nt: usize,
    pub grading: Grading,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            nx: 1000,
            nt: 1000,
            grading: Grading::Uniform,
        }
    }
}

/// Full description of `Y_t = (D M + A) Y + B v 1_omega` on `(0,T)x(0,1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    pub coefficient: DiffusionCoefficient,
    pub d: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub omega: Interval,
    pub horizon: f64,
    pub bc: BoundaryRegime,
    pub grid: GridSpec,
}

impl SystemSpec {
    /// Builds and validates a system; every invariant is checked here.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        coefficient: DiffusionCoefficient,
        d: DMatrix<f64>,
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        omega: Interval,
        horizon: f64,
        bc: Option<BoundaryRegime>,
        grid: GridSpec,
    ) -> Result<Self> {
        let spec = Self {
            bc: bc.unwrap_or_else(|| coefficient.class.boundary_regime()),
            coefficient,
            d,
            a,
            b,
            omega,
            horizon,
            grid,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn n(&self) -> usize {
        self.d.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn validate(&self) -> Result<DiagonalizationCertificate> {
        let n = self.d.nrows();
        if self.d.ncols() != n {
            return Err(Error::Shape(format!(
                "D must be square, got {}x{}",
                self.d.nrows(),
                self.d.ncols()
            )));
        }
        if self.a.nrows() != self.a.ncols() {
            return Err(Error::Shape(format!(
                "A must be square, got {}x{}",
                self.a.nrows(),
                self.a.ncols()
            )));
        }
        if self.a.nrows() != n {
            return Err(Error::Shape(format!("A is {0}x{0} but D is {n}x{n}", self.a.nrows())));
        }
        if self.b.nrows() != n || self.b.ncols() == 0 {
            return Err(Error::Shape(format!(
                "B must be {n}xm with m >= 1, got {}x{}",
                self.b.nrows(),
                self.b.ncols()
            )));
        }
        let all_finite = self.d.iter().chain(self.a.iter()).chain(self.b.iter()).all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::Domain("matrix entries must be finite".into()));
        }
        if !(self.omega.lo > 0.0 && self.omega.lo < self.omega.hi && self.omega.hi < 1.0) {
            return Err(Error::Domain(format!(
                "omega = ({}, {}) must satisfy 0 < lo < hi < 1",
                self.omega.lo, self.omega.hi
            )));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Domain(format!("T = {} must be positive", self.horizon)));
        }
        if self.bc != self.coefficient.class.boundary_regime() {
            return Err(Error::Domain(format!(
                "boundary regime {:?} does not match degeneracy class {:?}",
                self.bc, self.coefficient.class
            )));
        }
        validate_diffusion(&self.coefficient, DEFAULT_VALIDATION_SAMPLES)?;
        validate_diagonalizable(&self.d, 1e-10)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn power_law_classes() {
        let r = validate_diffusion(&DiffusionCoefficient::power_law(0.5).unwrap(), 30).unwrap();
        assert_eq!(r.class, DegeneracyClass::Weak);
        assert_eq!(r.k, 0.5);
        assert_eq!(r.theta, None);

        let r = validate_diffusion(&DiffusionCoefficient::power_law(1.5).unwrap(), 30).unwrap();
        assert_eq!(r.class, DegeneracyClass::Strong);
        assert_eq!(r.k, 1.5);
        assert_eq!(r.theta, Some(1.5));

        assert!(matches!(
            DiffusionCoefficient::power_law(2.0),
            Err(Error::Diffusion(_))
        ));
    }

    #[test]
    fn power_law_constant_is_grid_independent() {
        for samples in [5, 20, 60] {
            let a = DiffusionCoefficient::power_law(0.3).unwrap();
            assert_eq!(validate_diffusion(&a, samples).unwrap().k, 0.3);
        }
    }

    #[test]
    fn boundary_case_k_equal_one() {
        let a = DiffusionCoefficient::power_law(1.0).unwrap();
        assert_eq!(a.class, DegeneracyClass::Strong);
        let theta = a.theta_sd.unwrap();
        assert!(theta > 0.0 && theta < 1.0);
    }

    #[test]
    fn sampled_coefficient() {
        let table: Vec<(f64, f64)> = (0..=200)
            .map(|i| {
                let x = i as f64 / 200.0;
                (x, x.powf(1.2) + x * x)
            })
            .collect();
        let a = DiffusionCoefficient::infer(DiffusionKind::Sampled { table }).unwrap();
        assert_eq!(a.class, DegeneracyClass::Strong);
        assert!(a.k >= 1.0 && a.k < 2.0);

        let bad = vec![(0.0, 0.0), (0.5, -1.0), (1.0, 1.0)];
        assert!(DiffusionCoefficient::infer(DiffusionKind::Sampled { table: bad }).is_err());
    }

    #[test]
    fn declared_constant_too_small_is_rejected() {
        let mut a = DiffusionCoefficient::power_law(0.6).unwrap();
        a.k = 0.4;
        assert!(validate_diffusion(&a, 20).is_err());
        a.k = 0.9;
        assert_eq!(validate_diffusion(&a, 20).unwrap().k, 0.6);
    }

    #[test]
    fn diagonalizable_identity() {
        let cert = validate_diagonalizable(&DMatrix::identity(2, 2), 1e-12).unwrap();
        assert_eq!(cert.eigenvalues, vec![1.0, 1.0]);
        assert_relative_eq!(cert.conditioning, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn diagonalizable_triangular() {
        let d = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 3.0]);
        let cert = validate_diagonalizable(&d, 1e-10).unwrap();
        assert_relative_eq!(cert.eigenvalues[0], 2.0, epsilon = 1e-12);
        assert_relative_eq!(cert.eigenvalues[1], 3.0, epsilon = 1e-12);
        assert!(cert.residual <= 1e-12);
    }

    #[test]
    fn jordan_block_rejected() {
        let d = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert!(matches!(
            validate_diagonalizable(&d, 1e-10),
            Err(Error::Diagonalization(_))
        ));
    }

    #[test]
    fn complex_or_negative_spectrum_rejected() {
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert!(validate_diagonalizable(&rot, 1e-10).is_err());
        let neg = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0]);
        assert!(validate_diagonalizable(&neg, 1e-10).is_err());
    }

    #[test]
    fn interval_is_open() {
        let w = Interval::new(0.3, 0.8);
        assert!(w.contains(0.5));
        assert!(!w.contains(0.3));
        assert!(!w.contains(0.8));
    }
}

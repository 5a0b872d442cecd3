//! Per-mode Kalman matrices and the rank dichotomy.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::SystemSpec;
use crate::spectral::SpectralBasis;

/// Default relative threshold on `sigma_min / sigma_max`.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct ModeMatrices {
    pub p: usize,
    pub lambda: f64,
    pub l: DMatrix<f64>,
    pub k: DMatrix<f64>,
}

impl ModeMatrices {
    pub fn new(spec: &SystemSpec, p: usize, lambda: f64) -> Self {
        let l = mode_matrix(spec, lambda);
        let k = kalman_matrix(&l, &spec.b);
        Self { p, lambda, l, k }
    }
}

/// `L = -lambda D + A`.
pub fn mode_matrix(spec: &SystemSpec, lambda: f64) -> DMatrix<f64> {
    mode_matrix_of(&spec.d, &spec.a, lambda)
}

pub fn mode_matrix_of(d: &DMatrix<f64>, a: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    a - d * lambda
}

/// `[L^{n-1} B | ... | L B | B]`.
pub fn kalman_matrix(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    scaled_kalman_matrix(l, b, 1.0)
}

/// Kalman matrix with the block `L^k B` divided by `scale^k`. Column
/// scaling by positive numbers leaves the rank unchanged but keeps the
/// entries bounded when `lambda` is large.
pub fn scaled_kalman_matrix(l: &DMatrix<f64>, b: &DMatrix<f64>, scale: f64) -> DMatrix<f64> {
    let n = l.nrows();
    let m = b.ncols();
    let mut k = DMatrix::zeros(n, n * m);
    let ls = l / scale;
    let mut block = b.clone();
    for j in (0..n).rev() {
        k.view_mut((0, j * m), (n, m)).copy_from(&block);
        if j > 0 {
            block = &ls * block;
        }
    }
    k
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RankReport {
    pub rank: usize,
    /// `det(K K^T)` as the product of squared singular values.
    pub det_kkt: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

impl RankReport {
    pub fn ratio(&self) -> f64 {
        if self.sigma_max > 0.0 {
            self.sigma_min / self.sigma_max
        } else {
            0.0
        }
    }
}

pub fn mode_rank_report(k: &DMatrix<f64>, tol: f64) -> RankReport {
    let n = k.nrows();
    let mut s = linalg::singular_values(k);
    s.resize(n, 0.0);
    let sigma_max = s.first().copied().unwrap_or(0.0);
    let sigma_min = s.last().copied().unwrap_or(0.0);
    let rank = if sigma_max > 0.0 {
        s.iter().filter(|&&v| v > tol * sigma_max).count()
    } else {
        0
    };
    RankReport {
        rank,
        det_kkt: s.iter().map(|v| v * v).product(),
        sigma_min,
        sigma_max,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModeRecord {
    pub p: usize,
    pub lambda: f64,
    pub rank: usize,
    pub det_kkt: f64,
    pub sigma_min: f64,
    /// `sigma_min / sigma_max` of the rescaled matrix, the quantity the
    /// rank decision is taken on.
    pub scaled_ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Dichotomy {
    /// Full rank for every scanned `p > p0`.
    FullRankTail { p0: usize },
    DeficientEverywhere,
    /// Deficient modes reach the scan horizon without covering it.
    MixedUpToHorizon,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KalmanReport {
    pub records: Vec<ModeRecord>,
    pub deficient_modes: Vec<usize>,
    pub dichotomy: Dichotomy,
    pub scan_horizon: usize,
    pub state_dim: usize,
    pub tol: f64,
    /// Rank of `lambda -> K(lambda)` at random `lambda`.
    pub generic_rank: usize,
    /// Values `lambda > lambda_{P_max}` where `K(lambda)` loses rank.
    /// They only matter if they happen to be eigenvalues.
    pub possible_beyond_horizon: Vec<f64>,
}

impl KalmanReport {
    /// True when the rank loss is structural rather than tied to
    /// particular eigenvalues.
    pub fn structurally_deficient(&self) -> bool {
        self.generic_rank < self.state_dim
    }
}

fn scaled_report(d: &DMatrix<f64>, a: &DMatrix<f64>, b: &DMatrix<f64>, lambda: f64, tol: f64) -> RankReport {
    let l = mode_matrix_of(d, a, lambda);
    mode_rank_report(&scaled_kalman_matrix(&l, b, lambda.max(1.0)), tol)
}

fn record(d: &DMatrix<f64>, a: &DMatrix<f64>, b: &DMatrix<f64>, p: usize, lambda: f64, tol: f64) -> ModeRecord {
    let scaled = scaled_report(d, a, b, lambda, tol);
    let plain = mode_rank_report(&kalman_matrix(&mode_matrix_of(d, a, lambda), b), tol);
    ModeRecord {
        p,
        lambda,
        rank: scaled.rank,
        det_kkt: plain.det_kkt,
        sigma_min: plain.sigma_min,
        scaled_ratio: scaled.ratio(),
    }
}

/// Rank scan over the first `p_max` modes of `basis`.
pub fn dichotomy_scan(spec: &SystemSpec, basis: &SpectralBasis, p_max: usize, tol: f64) -> Result<KalmanReport> {
    if p_max == 0 || p_max > basis.len() {
        return Err(Error::Domain(format!(
            "scan horizon {p_max} needs a basis of at least that size, got {}",
            basis.len()
        )));
    }
    Ok(scan_eigenvalues(&spec.d, &spec.a, &spec.b, &basis.lambdas[..p_max], tol, 0))
}

/// Same as [`dichotomy_scan`] on an explicit list of eigenvalues.
pub fn scan_eigenvalues(
    d: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    lambdas: &[f64],
    tol: f64,
    seed: u64,
) -> KalmanReport {
    let n = d.nrows();
    let records: Vec<ModeRecord> = lambdas
        .par_iter()
        .enumerate()
        .map(|(i, &lam)| record(d, a, b, i + 1, lam, tol))
        .collect();
    let deficient_modes: Vec<usize> = records.iter().filter(|r| r.rank < n).map(|r| r.p).collect();
    let p_max = lambdas.len();
    let dichotomy = if deficient_modes.len() == p_max {
        Dichotomy::DeficientEverywhere
    } else {
        match deficient_modes.last() {
            None => Dichotomy::FullRankTail { p0: 0 },
            Some(&p0) if p0 < p_max => Dichotomy::FullRankTail { p0 },
            Some(_) => Dichotomy::MixedUpToHorizon,
        }
    };

    let lam_top = lambdas.last().copied().unwrap_or(1.0).max(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let generic_rank = (0..8)
        .map(|_| {
            let lam = rng.random_range(0.0..4.0 * lam_top);
            scaled_report(d, a, b, lam, tol).rank
        })
        .max()
        .unwrap_or(0);

    let possible_beyond_horizon = if generic_rank == n {
        rank_drops_beyond(d, a, b, lam_top, tol)
    } else {
        Vec::new()
    };

    KalmanReport {
        records,
        deficient_modes,
        dichotomy,
        scan_horizon: p_max,
        state_dim: n,
        tol,
        generic_rank,
        possible_beyond_horizon,
    }
}

/// Locates `lambda > lam_top` where `K(lambda)` is rank deficient.
///
/// With `mu = 1/lambda` the rescaled family
/// `[(-D + mu A)^{n-1} B | ... | B]` is polynomial in `mu` on the bounded
/// interval `(0, 1/lam_top]`. Interior local minima of its relative
/// `sigma_min` on a fine grid are refined by golden section and kept when
/// they fall under the tolerance.
fn rank_drops_beyond(d: &DMatrix<f64>, a: &DMatrix<f64>, b: &DMatrix<f64>, lam_top: f64, tol: f64) -> Vec<f64> {
    let mu_max = 1.0 / lam_top;
    let ratio = |mu: f64| -> f64 {
        let l = a * mu - d;
        mode_rank_report(&kalman_matrix(&l, b), tol).ratio()
    };
    let samples = 2000;
    let grid: Vec<f64> = (0..=samples).map(|i| mu_max * i as f64 / samples as f64).collect();
    let vals: Vec<f64> = grid.par_iter().map(|&mu| ratio(mu)).collect();
    let mut roots = Vec::new();
    for i in 1..samples {
        if vals[i] <= vals[i - 1] && vals[i] <= vals[i + 1] {
            let (mut lo, mut hi) = (grid[i - 1], grid[i + 1]);
            let g = 0.5 * (5f64.sqrt() - 1.0);
            for _ in 0..80 {
                let x1 = hi - g * (hi - lo);
                let x2 = lo + g * (hi - lo);
                if ratio(x1) < ratio(x2) {
                    hi = x2;
                } else {
                    lo = x1;
                }
            }
            let mu = 0.5 * (lo + hi);
            if mu > 0.0 && ratio(mu) <= tol {
                roots.push(1.0 / mu);
            }
        }
    }
    roots.sort_by(|x, y| x.partial_cmp(y).unwrap());
    roots.dedup_by(|x, y| (*x - *y).abs() <= 1e-9 * y.abs());
    roots
}

/// Optimal constants of the three inequalities on the first `p` modes.
///
/// Each is the constant `C` of an inequality between squared norms:
/// `|K u|^2 <= C |M^{n-1} u|^2`, the same for `K^*`, and
/// `|M^{k-r} phi|^2 <= C |M^k K^* phi|^2` with `r = (2n-1)(n-1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormConstants {
    pub kalman: f64,
    pub adjoint: f64,
    /// `None` when some mode is rank deficient.
    pub inverse: Option<f64>,
    pub maximizing_mode: usize,
}

pub fn truncated_norm_constants(spec: &SystemSpec, basis: &SpectralBasis, p: usize) -> Result<NormConstants> {
    if p == 0 || p > basis.len() {
        return Err(Error::Domain(format!("need 1 <= P <= {}, got {p}", basis.len())));
    }
    norm_constants(&spec.d, &spec.a, &spec.b, &basis.lambdas[..p])
}

pub fn norm_constants(d: &DMatrix<f64>, a: &DMatrix<f64>, b: &DMatrix<f64>, lambdas: &[f64]) -> Result<NormConstants> {
    let n = d.nrows() as i32;
    let r = (2 * n - 1) * (n - 1);
    let mut kalman = 0.0f64;
    let mut adjoint = 0.0f64;
    let mut inverse = Some(0.0f64);
    let mut maximizing_mode = 1;
    for (i, &lam) in lambdas.iter().enumerate() {
        if !(lam > 0.0) {
            return Err(Error::Domain(format!("eigenvalue {lam} is not positive")));
        }
        let k = kalman_matrix(&mode_matrix_of(d, a, lam), b);
        let s = linalg::singular_values(&k);
        let scale = lam.powi(n - 1);
        let c = (s[0] / scale).powi(2);
        if c > kalman {
            kalman = c;
            maximizing_mode = i + 1;
        }
        let st = linalg::norm2(&k.transpose());
        adjoint = adjoint.max((st / scale).powi(2));
        let smin = s.get(d.nrows() - 1).copied().unwrap_or(0.0);
        let deficient = scaled_report(d, a, b, lam, DEFAULT_RANK_TOL).rank < d.nrows();
        inverse = match inverse {
            Some(acc) if !deficient => Some(acc.max(lam.powi(-2 * r) / (smin * smin))),
            _ => None,
        };
    }
    Ok(NormConstants {
        kalman,
        adjoint,
        inverse,
        maximizing_mode,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Witness {
    pub p: usize,
    pub z_t: DVector<f64>,
    /// `|K_p^T z_T|`.
    pub residual: f64,
    /// `max_k |B^T (L_p^T)^k z_T|` for `k < n`.
    pub observation: f64,
    /// `|(I - Pi Pi^T) L_p^T Pi|` for an orthonormal basis `Pi` of the null
    /// space of `K_p^T`.
    pub invariance_defect: f64,
}

/// Unit vector in the kernel of `K_{p0}^T`.
pub fn kernel_witness(spec: &SystemSpec, basis: &SpectralBasis, p0: usize, tol: f64) -> Result<Witness> {
    if p0 == 0 || p0 > basis.len() {
        return Err(Error::Domain(format!("mode {p0} not in basis of size {}", basis.len())));
    }
    witness_at(&spec.d, &spec.a, &spec.b, p0, basis.lambda(p0), tol)
}

pub fn witness_at(
    d: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    p0: usize,
    lambda: f64,
    tol: f64,
) -> Result<Witness> {
    let n = d.nrows();
    let report = scaled_report(d, a, b, lambda, tol);
    if report.rank == n {
        return Err(Error::NoWitness(format!(
            "K_{p0} has full rank (relative sigma_min {:e})",
            report.ratio()
        )));
    }
    let l = mode_matrix_of(d, a, lambda);
    let scale = lambda.max(1.0);
    let ks = scaled_kalman_matrix(&l, b, scale);
    let kt = ks.transpose();
    let (_, mut z) = linalg::smallest_right_singular_vector(&kt);
    z /= z.norm();
    let k = kalman_matrix(&l, b);
    let residual = (k.transpose() * &z).norm();

    let lt = l.transpose();
    let mut w = z.clone();
    let mut observation = 0.0f64;
    for _ in 0..n {
        observation = observation.max((b.transpose() * &w).amax());
        w = &lt * w / scale;
    }

    let pi = linalg::null_space(&kt, tol * report.sigma_max);
    let invariance_defect = if pi.ncols() == 0 {
        0.0
    } else {
        let lpi = &lt * &pi / scale;
        let proj = &pi * (pi.transpose() * &lpi);
        linalg::norm2(&(lpi - proj))
    };

    Ok(Witness {
        p: p0,
        z_t: z,
        residual,
        observation,
        invariance_defect,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjointTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    /// `|B^T z(t)|` at each time.
    pub observation: Vec<f64>,
    pub sup_observation: f64,
    pub initial_norm: f64,
}

/// Solves `-z' = L_p^T z`, `z(T) = z_T`, that is
/// `z(t) = exp(L_p^T (T - t)) z_T`, on `nt + 1` uniform times.
pub fn adjoint_mode_trajectory(
    spec: &SystemSpec,
    lambda: f64,
    z_t: &DVector<f64>,
    horizon: f64,
    nt: usize,
) -> Result<AdjointTrajectory> {
    adjoint_trajectory_of(&spec.d, &spec.a, &spec.b, lambda, z_t, horizon, nt)
}

pub fn adjoint_trajectory_of(
    d: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    lambda: f64,
    z_t: &DVector<f64>,
    horizon: f64,
    nt: usize,
) -> Result<AdjointTrajectory> {
    if z_t.len() != d.nrows() {
        return Err(Error::Shape(format!("z_T has {} entries, expected {}", z_t.len(), d.nrows())));
    }
    if !(horizon >= 0.0) {
        return Err(Error::Domain(format!("T = {horizon} must be nonnegative")));
    }
    let nt = nt.max(1);
    let lt = mode_matrix_of(d, a, lambda).transpose();
    let dt = horizon / nt as f64;
    let step = linalg::expm(&(&lt * dt));
    let mut states = vec![DVector::zeros(0); nt + 1];
    states[nt] = z_t.clone();
    for i in (0..nt).rev() {
        states[i] = &step * &states[i + 1];
    }
    let times: Vec<f64> = (0..=nt).map(|i| i as f64 * dt).collect();
    let observation: Vec<f64> = states.iter().map(|z| (b.transpose() * z).norm()).collect();
    let sup_observation = observation.iter().fold(0.0f64, |m, v| m.max(*v));
    let initial_norm = states[0].norm();
    Ok(AdjointTrajectory {
        times,
        states,
        observation,
        sup_observation,
        initial_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn m(r: usize, c: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(r, c, v)
    }

    fn cascade_d() -> DMatrix<f64> {
        m(2, 2, &[1.0, 0.0, 0.0, 2.0])
    }

    fn cascade_a() -> DMatrix<f64> {
        m(2, 2, &[0.0, 0.0, 1.0, 0.0])
    }

    fn lambdas(count: usize) -> Vec<f64> {
        // sine spectrum, enough for the algebra
        (1..=count).map(|p| (p as f64 * std::f64::consts::PI).powi(2)).collect()
    }

    #[test]
    fn mode_matrix_formula() {
        let l = mode_matrix_of(&cascade_d(), &cascade_a(), 2.0);
        assert_eq!(l, m(2, 2, &[-2.0, 0.0, 1.0, -4.0]));
        assert_eq!(mode_matrix_of(&cascade_d(), &cascade_a(), 0.0), cascade_a());
    }

    #[test]
    fn kalman_block_order() {
        let d = DMatrix::identity(2, 2);
        let a = m(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let b = m(2, 1, &[0.0, 1.0]);
        for lam in [0.5, 3.0, 40.0] {
            let k = kalman_matrix(&mode_matrix_of(&d, &a, lam), &b);
            assert_eq!(k, m(2, 2, &[1.0, 0.0, -lam, 1.0]));
            assert_relative_eq!(k.determinant(), 1.0, epsilon = 1e-12);
            let r = mode_rank_report(&k, 1e-8);
            assert_eq!(r.rank, 2);
            assert_relative_eq!(r.det_kkt, 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn cascade_determinant_vanishes_at_one_over_b() {
        let bval = 0.25;
        let b = m(2, 1, &[1.0, bval]);
        for lam in [1.0, 4.0, 9.0] {
            let k = kalman_matrix(&mode_matrix_of(&cascade_d(), &cascade_a(), lam), &b);
            assert_eq!(k, m(2, 2, &[-lam, 1.0, 1.0 - 2.0 * lam * bval, bval]));
            assert_relative_eq!(k.determinant(), lam * bval - 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_b_has_rank_zero() {
        let k = kalman_matrix(&mode_matrix_of(&cascade_d(), &cascade_a(), 3.0), &DMatrix::zeros(2, 1));
        let r = mode_rank_report(&k, 1e-8);
        assert_eq!(r.rank, 0);
        assert_eq!(r.det_kkt, 0.0);
    }

    #[test]
    fn rank_is_scale_invariant() {
        let b = m(2, 1, &[0.0, 1.0]);
        let k = kalman_matrix(&mode_matrix_of(&cascade_d(), &cascade_a(), 7.0), &b);
        assert_eq!(mode_rank_report(&k, 1e-8).rank, 1);
        assert_eq!(mode_rank_report(&(k * 10.0), 1e-8).rank, 1);
    }

    #[test]
    fn dichotomy_cases() {
        let lams = lambdas(100);
        let full = scan_eigenvalues(&cascade_d(), &cascade_a(), &m(2, 1, &[1.0, 0.0]), &lams, 1e-8, 1);
        assert!(full.deficient_modes.is_empty());
        assert_eq!(full.dichotomy, Dichotomy::FullRankTail { p0: 0 });

        let none = scan_eigenvalues(&cascade_d(), &cascade_a(), &m(2, 1, &[0.0, 1.0]), &lams, 1e-8, 1);
        assert_eq!(none.deficient_modes.len(), 100);
        assert_eq!(none.dichotomy, Dichotomy::DeficientEverywhere);
        assert_eq!(none.generic_rank, 1);
        assert!(none.structurally_deficient());

        let one = scan_eigenvalues(&cascade_d(), &cascade_a(), &m(2, 1, &[1.0, 1.0 / lams[0]]), &lams, 1e-8, 1);
        assert_eq!(one.deficient_modes, vec![1]);
        assert_eq!(one.dichotomy, Dichotomy::FullRankTail { p0: 1 });
        assert!(!one.structurally_deficient());
    }

    #[test]
    fn root_beyond_horizon_is_reported() {
        let lams = lambdas(10);
        let target = 5000.0;
        let r = scan_eigenvalues(&cascade_d(), &cascade_a(), &m(2, 1, &[1.0, 1.0 / target]), &lams, 1e-8, 3);
        assert!(r.deficient_modes.is_empty());
        assert_eq!(r.possible_beyond_horizon.len(), 1);
        assert_relative_eq!(r.possible_beyond_horizon[0], target, max_relative = 1e-6);
    }

    #[test]
    fn scalar_constants_are_one() {
        let one = DMatrix::identity(1, 1);
        let c = norm_constants(&one, &DMatrix::zeros(1, 1), &one, &lambdas(20)).unwrap();
        assert_relative_eq!(c.kalman, 1.0);
        assert_relative_eq!(c.adjoint, 1.0);
        assert_relative_eq!(c.inverse.unwrap(), 1.0);
    }

    #[test]
    fn cascade_constants_stabilize() {
        let d = DMatrix::identity(2, 2);
        let a = m(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let b = m(2, 1, &[0.0, 1.0]);
        let lams = lambdas(40);
        let c10 = norm_constants(&d, &a, &b, &lams[..10]).unwrap();
        let c40 = norm_constants(&d, &a, &b, &lams).unwrap();
        assert!(c10.kalman.is_finite());
        assert_eq!(c10.maximizing_mode, 1);
        assert_eq!(c10.kalman, c40.kalman);
        assert!(c40.inverse.is_some());

        let deficient = norm_constants(&cascade_d(), &cascade_a(), &m(2, 1, &[0.0, 1.0]), &lams).unwrap();
        assert!(deficient.inverse.is_none());
    }

    #[test]
    fn witness_for_zero_row() {
        let b = m(2, 1, &[0.0, 1.0]);
        for lam in [3.0, 250.0] {
            let w = witness_at(&cascade_d(), &cascade_a(), &b, 1, lam, 1e-8).unwrap();
            assert!(w.residual <= 1e-12);
            assert_relative_eq!(w.z_t[0].abs(), 1.0, epsilon = 1e-12);
            assert!(w.observation <= 1e-12);
            assert!(w.invariance_defect <= 1e-10);
        }
    }

    #[test]
    fn witness_at_isolated_deficiency() {
        let lams = lambdas(5);
        let b = m(2, 1, &[1.0, 1.0 / lams[0]]);
        let w = witness_at(&cascade_d(), &cascade_a(), &b, 1, lams[0], 1e-8).unwrap();
        assert!(w.residual <= 1e-12, "{}", w.residual);
        assert!(w.invariance_defect <= 1e-10);
        let err = witness_at(&cascade_d(), &cascade_a(), &b, 2, lams[1], 1e-8).unwrap_err();
        assert!(matches!(err, Error::NoWitness(_)));
    }

    #[test]
    fn adjoint_trajectory_cases() {
        let b = m(2, 1, &[0.0, 1.0]);
        let w = witness_at(&cascade_d(), &cascade_a(), &b, 1, 9.0, 1e-8).unwrap();
        let tr = adjoint_trajectory_of(&cascade_d(), &cascade_a(), &b, 9.0, &w.z_t, 0.5, 200).unwrap();
        assert!(tr.sup_observation <= 1e-10);
        assert!(tr.initial_norm > 0.0);

        let id = DMatrix::identity(2, 2);
        let z = DVector::from_vec(vec![0.6, 0.8]);
        let tr = adjoint_trajectory_of(&id, &DMatrix::zeros(2, 2), &b, 4.0, &z, 0.3, 50).unwrap();
        assert_relative_eq!(tr.initial_norm, (-4.0f64 * 0.3).exp(), max_relative = 1e-12);

        let tr = adjoint_trajectory_of(&id, &DMatrix::zeros(2, 2), &b, 4.0, &z, 0.0, 10).unwrap();
        assert_relative_eq!(tr.initial_norm, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn determinant_is_polynomial_in_lambda() {
        let d = m(3, 3, &[1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 3.5]);
        let a = m(3, 3, &[0.1, 0.0, 0.4, 1.0, -0.2, 0.0, 0.3, 1.0, 0.5]);
        let b = m(3, 1, &[1.0, 0.3, -0.7]);
        let det = |lam: f64| kalman_matrix(&mode_matrix_of(&d, &a, lam), &b).determinant();
        let deg = 3 * 2;
        let xs: Vec<f64> = (0..=deg).map(|i| 0.5 + i as f64 * 0.7).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| det(x)).collect();
        let lagrange = |x: f64| -> f64 {
            (0..xs.len())
                .map(|i| {
                    let w: f64 = (0..xs.len()).filter(|&j| j != i).map(|j| (x - xs[j]) / (xs[i] - xs[j])).product();
                    ys[i] * w
                })
                .sum()
        };
        for x in [0.9, 2.2, 3.7, 4.4] {
            assert_relative_eq!(lagrange(x), det(x), max_relative = 1e-8);
        }
    }
}

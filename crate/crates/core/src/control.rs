//! Galerkin truncation, Gramian-based null controls and the full-grid
//! simulator used to check them.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kalman::{self, DEFAULT_RANK_TOL};
use crate::linalg;
use crate::model::SystemSpec;
use crate::operator::DiscreteOperator;
use crate::spectral::SpectralBasis;

/// Relative threshold below which a Gramian counts as singular.
pub const GRAMIAN_SINGULAR_TOL: f64 = 1e-12;

/// Mode dynamics `y_p' = L_p y_p + B (1_omega v)_p` for `p <= P`.
///
/// State coordinates are ordered mode-major: entry `p * n + k` is the
/// coefficient of component `k` on `Phi_{p+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedSystem {
    pub lambdas: Vec<f64>,
    /// Diagonal blocks `L_p = -lambda_p D + A`.
    pub blocks: Vec<DMatrix<f64>>,
    pub b: DMatrix<f64>,
    /// Indices of the operator unknowns lying in omega.
    pub omega_nodes: Vec<usize>,
    pub omega_x: Vec<f64>,
    /// Lumped weights of those nodes.
    pub omega_weights: Vec<f64>,
    /// `phi_omega[(p, i)] = Phi_{p+1}(x_i)` for the omega nodes.
    pub phi_omega: DMatrix<f64>,
    /// `sum_i m_i Phi_p(x_i) Phi_q(x_i)` over the omega nodes.
    pub omega_gram: DMatrix<f64>,
}

impl TruncatedSystem {
    pub fn modes(&self) -> usize {
        self.lambdas.len()
    }

    pub fn n(&self) -> usize {
        self.b.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn dim(&self) -> usize {
        self.n() * self.modes()
    }

    pub fn a_tilde(&self) -> DMatrix<f64> {
        linalg::block_diagonal(&self.blocks)
    }

    /// Input matrix for nodal controls `v_i in R^m` on the omega nodes,
    /// column `i * m + j`: entry `B_kj m_i Phi_p(x_i)`.
    pub fn b_tilde(&self) -> DMatrix<f64> {
        let (n, m) = (self.n(), self.m());
        let nodes = self.omega_nodes.len();
        DMatrix::from_fn(self.dim(), nodes * m, |r, c| {
            let (p, k) = (r / n, r % n);
            let (i, j) = (c / m, c % m);
            self.b[(k, j)] * self.omega_weights[i] * self.phi_omega[(p, i)]
        })
    }

    /// `B B^T (x) omega_gram`, the input covariance for the energy
    /// `int sum_i m_i |v_i|^2 dt`.
    fn input_covariance(&self) -> DMatrix<f64> {
        let n = self.n();
        let bbt = &self.b * self.b.transpose();
        DMatrix::from_fn(self.dim(), self.dim(), |r, c| {
            bbt[(r % n, c % n)] * self.omega_gram[(r / n, c / n)]
        })
    }

    /// Block diagonal `exp(A_tilde t)`.
    pub fn exp_blocks(&self, t: f64) -> Vec<DMatrix<f64>> {
        self.blocks.iter().map(|l| linalg::expm(&(l * t))).collect()
    }

    /// Mode coefficients of a grid state given as one vector per
    /// component.
    pub fn coefficients(&self, basis: &SpectralBasis, y: &[Vec<f64>]) -> Result<DVector<f64>> {
        let n = self.n();
        if y.len() != n {
            return Err(Error::Shape(format!("state has {} components, expected {n}", y.len())));
        }
        let mut out = DVector::zeros(self.dim());
        for p in 0..self.modes() {
            let c = crate::spectral::project(y, p + 1, basis)?;
            for k in 0..n {
                out[p * n + k] = c[k];
            }
        }
        Ok(out)
    }

    fn spectral_radius_bound(&self) -> f64 {
        self.blocks.iter().map(|l| l.norm()).fold(0.0, f64::max)
    }
}

fn block_apply(blocks: &[DMatrix<f64>], x: &DMatrix<f64>, transpose_right: bool) -> DMatrix<f64> {
    // E x E^T for block diagonal E, or E x when transpose_right is false
    let n = blocks[0].nrows();
    let p = blocks.len();
    let mut out = DMatrix::zeros(x.nrows(), x.ncols());
    for i in 0..p {
        for j in 0..(if transpose_right { p } else { 1 }) {
            if transpose_right {
                let blk = x.view((i * n, j * n), (n, n));
                let v = &blocks[i] * blk * blocks[j].transpose();
                out.view_mut((i * n, j * n), (n, n)).copy_from(&v);
            } else {
                let blk = x.view((i * n, 0), (n, x.ncols()));
                let v = &blocks[i] * blk;
                out.view_mut((i * n, 0), (n, x.ncols())).copy_from(&v);
            }
        }
    }
    out
}

pub fn galerkin_truncate(spec: &SystemSpec, basis: &SpectralBasis, modes: usize) -> Result<TruncatedSystem> {
    if modes == 0 || modes > basis.len() {
        return Err(Error::Domain(format!(
            "truncation needs 1 <= P <= {}, got {modes}",
            basis.len()
        )));
    }
    let lambdas = basis.lambdas[..modes].to_vec();
    let blocks = lambdas.iter().map(|&l| kalman::mode_matrix(spec, l)).collect();
    let omega_nodes: Vec<usize> = basis
        .nodes
        .iter()
        .enumerate()
        .filter(|(_, &x)| spec.omega.contains(x))
        .map(|(i, _)| i)
        .collect();
    if omega_nodes.is_empty() {
        return Err(Error::Domain("no grid node lies inside omega".into()));
    }
    let omega_x = omega_nodes.iter().map(|&i| basis.nodes[i]).collect();
    let omega_weights: Vec<f64> = omega_nodes.iter().map(|&i| basis.mass[i]).collect();
    let phi_omega = DMatrix::from_fn(modes, omega_nodes.len(), |p, i| basis.modes[p][omega_nodes[i]]);
    let omega_gram = DMatrix::from_fn(modes, modes, |p, q| {
        (0..omega_nodes.len())
            .map(|i| omega_weights[i] * phi_omega[(p, i)] * phi_omega[(q, i)])
            .sum()
    });
    Ok(TruncatedSystem {
        lambdas,
        blocks,
        b: spec.b.clone(),
        omega_nodes,
        omega_x,
        omega_weights,
        phi_omega,
        omega_gram,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gramian {
    pub matrix: DMatrix<f64>,
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Number of quadrature panels at convergence.
    pub panels: usize,
    /// Relative Frobenius change of the last refinement.
    pub rel_change: f64,
    /// `sigma_min / sigma_max` of `S G S` with `S = diag(G)^{-1/2}`; zero
    /// when some diagonal entry vanishes.
    pub equilibrated_ratio: f64,
}

impl Gramian {
    /// Numerical singularity, judged after diagonal equilibration so that
    /// directions which are merely badly scaled (a component reached only
    /// through the coupling, say) are not mistaken for uncontrollable
    /// ones.
    pub fn is_singular(&self) -> bool {
        !(self.equilibrated_ratio > GRAMIAN_SINGULAR_TOL)
    }

    fn scaling(&self) -> Option<DVector<f64>> {
        let d = self.matrix.diagonal();
        let top = d.amax();
        if !(top > 0.0) || d.iter().any(|&v| !(v > GRAMIAN_SINGULAR_TOL * top)) {
            return None;
        }
        Some(d.map(|v| 1.0 / v.sqrt()))
    }

    fn equilibrated(&self, s: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(self.matrix.nrows(), self.matrix.ncols(), |i, j| {
            s[i] * self.matrix[(i, j)] * s[j]
        })
    }

    /// Solves `G x = rhs` through the equilibrated Cholesky factor.
    pub fn solve(&self, rhs: &DVector<f64>) -> Option<DVector<f64>> {
        let s = self.scaling()?;
        let chol = self.equilibrated(&s).cholesky()?;
        let y = chol.solve(&rhs.component_mul(&s));
        Some(y.component_mul(&s))
    }
}

/// Gramian over one panel `[0, h]` by composite Simpson on four
/// subintervals.
fn panel_gramian(ts: &TruncatedSystem, q: &DMatrix<f64>, h: f64) -> DMatrix<f64> {
    let weights = [1.0, 4.0, 2.0, 4.0, 1.0];
    let mut g = DMatrix::zeros(ts.dim(), ts.dim());
    for (j, w) in weights.iter().enumerate() {
        let s = h * j as f64 / 4.0;
        let e = ts.exp_blocks(s);
        g += block_apply(&e, q, true) * (*w * h / 12.0);
    }
    g
}

/// `int_0^{N h} exp(A s) Q exp(A^T s) ds` from the panel integral by
/// binary composition, `G(a + b) = G(a) + E(a) G(b) E(a)^T`.
fn compose_gramian(ts: &TruncatedSystem, panel: &DMatrix<f64>, h: f64, panels: usize) -> DMatrix<f64> {
    let dim = ts.dim();
    let mut acc = DMatrix::zeros(dim, dim);
    let mut acc_exp: Vec<DMatrix<f64>> = ts.blocks.iter().map(|l| DMatrix::identity(l.nrows(), l.nrows())).collect();
    let mut base = panel.clone();
    let mut base_exp = ts.exp_blocks(h);
    let mut k = panels;
    while k > 0 {
        if k & 1 == 1 {
            acc += block_apply(&acc_exp, &base, true);
            acc_exp = acc_exp.iter().zip(&base_exp).map(|(a, b)| a * b).collect();
        }
        k >>= 1;
        if k > 0 {
            base = &base + block_apply(&base_exp, &base, true);
            base_exp = base_exp.iter().map(|e| e * e).collect();
        }
    }
    acc
}

/// Controllability Gramian of the truncation on `[0, T]`.
///
/// The interval is cut into panels short enough for the fastest mode to
/// be resolved; each panel integral is a Simpson rule and the panels are
/// chained exactly through the semigroup. The panel count starts at
/// `max(nt, 200)` and doubles until the relative change drops below
/// `1e-8`.
pub fn controllability_gramian(ts: &TruncatedSystem, horizon: f64, nt: usize) -> Result<Gramian> {
    if !(horizon > 0.0) {
        return Err(Error::Domain(format!("T = {horizon} must be positive")));
    }
    let q = ts.input_covariance();
    let resolve = (20.0 * horizon * ts.spectral_radius_bound()).ceil() as usize;
    let mut panels = nt.max(200).max(resolve);
    let eval = |panels: usize| {
        let h = horizon / panels as f64;
        compose_gramian(ts, &panel_gramian(ts, &q, h), h, panels)
    };
    let mut g = eval(panels);
    let mut rel_change = f64::INFINITY;
    for _ in 0..12 {
        let finer = eval(2 * panels);
        let scale = finer.norm();
        rel_change = if scale > 0.0 { (&finer - &g).norm() / scale } else { 0.0 };
        g = finer;
        panels *= 2;
        if rel_change < 1e-8 {
            break;
        }
    }
    if !(rel_change < 1e-8) {
        return Err(Error::Numerical(format!(
            "Gramian quadrature did not settle: relative change {rel_change:e} at {panels} panels"
        )));
    }
    let g = (&g + g.transpose()) * 0.5;
    let (vals, _) = linalg::sym_eigen(&g);
    let sigma_max = vals.last().copied().unwrap_or(0.0).max(0.0);
    let sigma_min = vals.first().copied().unwrap_or(0.0).max(0.0);
    let mut gram = Gramian {
        matrix: g,
        sigma_min,
        sigma_max,
        panels,
        rel_change,
        equilibrated_ratio: 0.0,
    };
    if let Some(s) = gram.scaling() {
        let (vals, _) = linalg::sym_eigen(&gram.equilibrated(&s));
        let top = vals.last().copied().unwrap_or(0.0);
        if top > 0.0 {
            gram.equilibrated_ratio = vals[0].max(0.0) / top;
        }
    }
    Ok(gram)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SynthesisOptions {
    pub nt: usize,
    /// Steer only the controllable part instead of failing on deficient
    /// modes.
    pub project_out_deficient: bool,
    pub rank_tol: f64,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            nt: 1000,
            project_out_deficient: false,
            rank_tol: DEFAULT_RANK_TOL,
        }
    }
}

/// Open-loop control sampled on the omega nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlField {
    pub horizon: f64,
    pub times: Vec<f64>,
    /// Indices of the omega nodes among the operator unknowns.
    pub nodes: Vec<usize>,
    pub xs: Vec<f64>,
    pub m: usize,
    /// `values[k][i * m + j]`: component `j` at node `i`, time `times[k]`.
    pub values: Vec<Vec<f64>>,
    /// `int_0^T sum_i m_i |v_i|^2 dt`, evaluated exactly as `eta^T G eta`.
    pub energy: f64,
    /// `|y(T)| / |y(0)|` of the truncated system.
    pub truncated_residual: f64,
    pub gramian_sigma_min: f64,
    pub gramian_sigma_max: f64,
    /// Conditioning measure the singularity test is based on.
    pub gramian_equilibrated_ratio: f64,
    pub modes: usize,
    /// Modes whose content could not be steered (projection mode only).
    pub uncontrolled_modes: Vec<usize>,
    /// Terminal adjoint state `eta`.
    pub eta: DVector<f64>,
}

impl ControlField {
    pub fn zero(horizon: f64, nt: usize, m: usize) -> Self {
        Self {
            horizon,
            times: (0..=nt).map(|k| horizon * k as f64 / nt as f64).collect(),
            nodes: Vec::new(),
            xs: Vec::new(),
            m,
            values: vec![Vec::new(); nt + 1],
            energy: 0.0,
            truncated_residual: 0.0,
            gramian_sigma_min: 0.0,
            gramian_sigma_max: 0.0,
            gramian_equilibrated_ratio: 0.0,
            modes: 0,
            uncontrolled_modes: Vec::new(),
            eta: DVector::zeros(0),
        }
    }

    pub fn nt(&self) -> usize {
        self.times.len() - 1
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,x");
        for j in 0..self.m {
            out.push_str(&format!(",v{}", j + 1));
        }
        out.push('\n');
        for (t, row) in self.times.iter().zip(&self.values) {
            for (i, x) in self.xs.iter().enumerate() {
                out.push_str(&format!("{t:.9e},{x:.9e}"));
                for j in 0..self.m {
                    out.push_str(&format!(",{:.12e}", row[i * self.m + j]));
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Grid state `sum amplitude * Phi_mode * e_component` (1-based indices).
pub fn modal_state(basis: &SpectralBasis, n: usize, terms: &[(usize, usize, f64)]) -> Result<Vec<Vec<f64>>> {
    let mut y = vec![vec![0.0; basis.nodes.len()]; n];
    for &(component, mode, amplitude) in terms {
        if component == 0 || component > n {
            return Err(Error::Domain(format!("component {component} outside 1..={n}")));
        }
        if mode == 0 || mode > basis.len() {
            return Err(Error::Domain(format!("mode {mode} outside 1..={}", basis.len())));
        }
        for (yi, phi) in y[component - 1].iter_mut().zip(basis.mode(mode)) {
            *yi += amplitude * phi;
        }
    }
    Ok(y)
}

/// Minimum-energy control steering the `P`-mode truncation from `y0` to
/// zero at `T`.
pub fn synthesize_null_control(
    spec: &SystemSpec,
    basis: &SpectralBasis,
    y0: &[Vec<f64>],
    horizon: f64,
    modes: usize,
    opts: &SynthesisOptions,
) -> Result<ControlField> {
    let ts = galerkin_truncate(spec, basis, modes)?;
    let nt = opts.nt.max(1);
    let y0c = ts.coefficients(basis, y0)?;
    let gram = controllability_gramian(&ts, horizon, nt)?;
    let e_t = ts.exp_blocks(horizon);
    let free = block_apply(&e_t, &DMatrix::from_column_slice(ts.dim(), 1, y0c.as_slice()), false).column(0).into_owned();
    let rhs = -&free;

    let mut uncontrolled_modes = Vec::new();
    let eta = if gram.is_singular() {
        let report = kalman::scan_eigenvalues(&spec.d, &spec.a, &spec.b, &ts.lambdas, opts.rank_tol, 0);
        if !opts.project_out_deficient {
            if report.deficient_modes.is_empty() {
                return Err(Error::Numerical(format!(
                    "Gramian is numerically singular (equilibrated sigma ratio {:e}) although every K_p has full rank",
                    gram.equilibrated_ratio
                )));
            }
            return Err(Error::NotControllable {
                modes: report.deficient_modes,
            });
        }
        uncontrolled_modes = report.deficient_modes;
        let (vals, vecs) = linalg::sym_eigen(&gram.matrix);
        let cut = GRAMIAN_SINGULAR_TOL * gram.sigma_max;
        let mut eta = DVector::zeros(ts.dim());
        for (i, &v) in vals.iter().enumerate() {
            if v > cut {
                let u = vecs.column(i);
                eta += u * (u.dot(&rhs) / v);
            }
        }
        eta
    } else {
        gram.solve(&rhs)
            .ok_or_else(|| Error::Numerical("Gramian solve failed".into()))?
    };

    let terminal = &free + &gram.matrix * &eta;
    let y0_norm = y0c.norm();
    let truncated_residual = if y0_norm > 0.0 { terminal.norm() / y0_norm } else { 0.0 };
    let energy = eta.dot(&(&gram.matrix * &eta)).max(0.0);

    // z(t) = exp(A^T (T - t)) eta, marched backward from T
    let dt = horizon / nt as f64;
    let step: Vec<DMatrix<f64>> = ts.blocks.iter().map(|l| linalg::expm(&(l.transpose() * dt))).collect();
    let n = ts.n();
    let m = ts.m();
    let bt = ts.b.transpose();
    let nodes = ts.omega_nodes.len();
    let mut values = vec![vec![0.0; nodes * m]; nt + 1];
    let mut z: Vec<DVector<f64>> = (0..modes).map(|p| eta.rows(p * n, n).into_owned()).collect();
    for k in (0..=nt).rev() {
        let row = &mut values[k];
        for (p, zp) in z.iter().enumerate() {
            let w = &bt * zp;
            for i in 0..nodes {
                let phi = ts.phi_omega[(p, i)];
                for j in 0..m {
                    row[i * m + j] += phi * w[j];
                }
            }
        }
        if k > 0 {
            for (zp, s) in z.iter_mut().zip(&step) {
                *zp = s * &*zp;
            }
        }
    }

    Ok(ControlField {
        horizon,
        times: (0..=nt).map(|k| k as f64 * dt).collect(),
        nodes: ts.omega_nodes.clone(),
        xs: ts.omega_x.clone(),
        m,
        values,
        energy,
        truncated_residual,
        gramian_sigma_min: gram.sigma_min,
        gramian_sigma_max: gram.sigma_max,
        gramian_equilibrated_ratio: gram.equilibrated_ratio,
        modes,
        uncontrolled_modes,
        eta,
    })
}

/// Block tridiagonal system with `n x n` blocks, factored once.
struct BlockTridiag {
    n: usize,
    len: usize,
    /// Inverses of the pivot blocks, row-major.
    inv: Vec<f64>,
    /// `lower_i * inv_{i-1}`.
    mult: Vec<f64>,
    upper: Vec<f64>,
}

fn mat_vec(a: &[f64], x: &[f64], y: &mut [f64]) {
    let n = x.len();
    for r in 0..n {
        y[r] = (0..n).map(|c| a[r * n + c] * x[c]).sum();
    }
}

impl BlockTridiag {
    fn factor(lower: &[DMatrix<f64>], diag: &[DMatrix<f64>], upper: &[DMatrix<f64>]) -> Result<Self> {
        let len = diag.len();
        let n = diag[0].nrows();
        let flat = |m: &DMatrix<f64>| -> Vec<f64> { m.transpose().as_slice().to_vec() };
        let mut inv = Vec::with_capacity(len * n * n);
        let mut mult = vec![0.0; len * n * n];
        let mut prev_inv: Option<DMatrix<f64>> = None;
        for i in 0..len {
            let mut pivot = diag[i].clone();
            if let Some(pi) = &prev_inv {
                let l = &lower[i - 1] * pi;
                pivot -= &l * &upper[i - 1];
                mult[i * n * n..(i + 1) * n * n].copy_from_slice(&flat(&l));
            }
            let pinv = pivot
                .try_inverse()
                .ok_or_else(|| Error::Numerical(format!("singular pivot block at node {i}")))?;
            inv.extend(flat(&pinv));
            prev_inv = Some(pinv);
        }
        let upper_flat = upper.iter().flat_map(flat).collect();
        Ok(Self {
            n,
            len,
            inv,
            mult,
            upper: upper_flat,
        })
    }

    fn solve(&self, rhs: &mut [f64]) {
        let n = self.n;
        let nn = n * n;
        let mut tmp = vec![0.0; n];
        for i in 1..self.len {
            let (head, tail) = rhs.split_at_mut(i * n);
            mat_vec(&self.mult[i * nn..(i + 1) * nn], &head[(i - 1) * n..], &mut tmp);
            for k in 0..n {
                tail[k] -= tmp[k];
            }
        }
        let last = self.len - 1;
        mat_vec(&self.inv[last * nn..(last + 1) * nn], &rhs[last * n..(last + 1) * n], &mut tmp);
        rhs[last * n..(last + 1) * n].copy_from_slice(&tmp);
        let mut acc = vec![0.0; n];
        for i in (0..last).rev() {
            let (head, tail) = rhs.split_at_mut((i + 1) * n);
            mat_vec(&self.upper[i * nn..(i + 1) * nn], &tail[..n], &mut tmp);
            for k in 0..n {
                acc[k] = head[i * n + k] - tmp[k];
            }
            mat_vec(&self.inv[i * nn..(i + 1) * nn], &acc, &mut tmp);
            head[i * n..(i + 1) * n].copy_from_slice(&tmp);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// `snapshots[s][k]` is component `k` at `snapshot_times[s]`.
    pub snapshot_times: Vec<f64>,
    pub snapshots: Vec<Vec<Vec<f64>>>,
    /// Discrete `L^2` norm of the state at every time step.
    pub norms: Vec<f64>,
    pub final_state: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn snapshots_csv(&self, nodes: &[f64]) -> String {
        let n = self.final_state.len();
        let mut out = String::from("t,x");
        for k in 0..n {
            out.push_str(&format!(",y{}", k + 1));
        }
        out.push('\n');
        for (t, snap) in self.snapshot_times.iter().zip(&self.snapshots) {
            for (i, x) in nodes.iter().enumerate() {
                out.push_str(&format!("{t:.9e},{x:.9e}"));
                for comp in snap {
                    out.push_str(&format!(",{:.12e}", comp[i]));
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Discrete `L^2(0,1)^n` norm.
pub fn state_norm(op: &DiscreteOperator, y: &[Vec<f64>]) -> f64 {
    y.iter().map(|c| op.inner(c, c)).sum::<f64>().sqrt()
}

/// Crank-Nicolson integration of `Y' = (D M_h + A) Y + B v 1_omega` on
/// `[0, T]` with `nt` steps, keeping every `stride`-th state.
pub fn simulate_forward(
    spec: &SystemSpec,
    op: &DiscreteOperator,
    y0: &[Vec<f64>],
    control: Option<&ControlField>,
    nt: usize,
    stride: usize,
) -> Result<Trajectory> {
    let n = spec.n();
    let len = op.len();
    if y0.len() != n || y0.iter().any(|c| c.len() != len) {
        return Err(Error::Shape(format!("initial state must be {n} vectors of length {len}")));
    }
    if nt == 0 {
        return Err(Error::Domain("need at least one time step".into()));
    }
    let horizon = spec.horizon;
    if let Some(c) = control {
        if c.nt() != nt || (c.horizon - horizon).abs() > 1e-12 * horizon {
            return Err(Error::Shape(format!(
                "control sampled on {} steps over T = {}, simulation uses {nt} steps over T = {horizon}",
                c.nt(),
                c.horizon
            )));
        }
        if c.m != spec.m() || c.nodes.iter().any(|&i| i >= len) {
            return Err(Error::Shape("control does not match the grid or input dimension".into()));
        }
    }
    let dt = horizon / nt as f64;
    let half = 0.5 * dt;
    let d = &spec.d;
    let a = &spec.a;
    let id = DMatrix::<f64>::identity(n, n);
    let s = &op.stiffness;
    // M_ij = -S_ij / m_i
    let m_diag: Vec<f64> = (0..len).map(|i| -s.diag[i] / op.mass[i]).collect();
    let m_low: Vec<f64> = (1..len).map(|i| -s.off[i - 1] / op.mass[i]).collect();
    let m_up: Vec<f64> = (0..len - 1).map(|i| -s.off[i] / op.mass[i]).collect();

    let diag: Vec<DMatrix<f64>> = m_diag.iter().map(|&mii| &id - (d * mii + a) * half).collect();
    let lower: Vec<DMatrix<f64>> = m_low.iter().map(|&v| d * (-half * v)).collect();
    let upper: Vec<DMatrix<f64>> = m_up.iter().map(|&v| d * (-half * v)).collect();
    let system = BlockTridiag::factor(&lower, &diag, &upper)?;

    let mut y: Vec<f64> = (0..len).flat_map(|i| (0..n).map(move |k| (i, k))).map(|(i, k)| y0[k][i]).collect();
    let flat_d: Vec<f64> = d.transpose().as_slice().to_vec();
    let flat_a: Vec<f64> = a.transpose().as_slice().to_vec();

    let source = |k: usize, out: &mut [f64]| {
        if let Some(c) = control {
            let row = &c.values[k];
            for (idx, &node) in c.nodes.iter().enumerate() {
                for r in 0..n {
                    let mut acc = 0.0;
                    for j in 0..c.m {
                        acc += spec.b[(r, j)] * row[idx * c.m + j];
                    }
                    out[node * n + r] += half * acc;
                }
            }
        }
    };

    let norm_of = |y: &[f64]| -> f64 {
        (0..len)
            .map(|i| op.mass[i] * (0..n).map(|k| y[i * n + k].powi(2)).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    };
    let unpack = |y: &[f64]| -> Vec<Vec<f64>> { (0..n).map(|k| (0..len).map(|i| y[i * n + k]).collect()).collect() };

    let stride = stride.max(1);
    let mut times = Vec::with_capacity(nt + 1);
    let mut norms = Vec::with_capacity(nt + 1);
    let mut snapshot_times = Vec::new();
    let mut snapshots = Vec::new();
    times.push(0.0);
    norms.push(norm_of(&y));
    snapshot_times.push(0.0);
    snapshots.push(unpack(&y));

    let mut rhs = vec![0.0; len * n];
    let mut dy = vec![0.0; n];
    let mut ay = vec![0.0; n];
    for step in 0..nt {
        // rhs = (I + dt/2 L) y + dt/2 (f^k + f^{k+1})
        for i in 0..len {
            let mut my = vec![0.0; n];
            for k in 0..n {
                let mut v = m_diag[i] * y[i * n + k];
                if i > 0 {
                    v += m_low[i - 1] * y[(i - 1) * n + k];
                }
                if i + 1 < len {
                    v += m_up[i] * y[(i + 1) * n + k];
                }
                my[k] = v;
            }
            mat_vec(&flat_d, &my, &mut dy);
            mat_vec(&flat_a, &y[i * n..(i + 1) * n], &mut ay);
            for k in 0..n {
                rhs[i * n + k] = y[i * n + k] + half * (dy[k] + ay[k]);
            }
        }
        source(step, &mut rhs);
        source(step + 1, &mut rhs);
        system.solve(&mut rhs);
        std::mem::swap(&mut y, &mut rhs);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite state at step {}", step + 1)));
        }
        let t = (step + 1) as f64 * dt;
        times.push(t);
        norms.push(norm_of(&y));
        if (step + 1) % stride == 0 || step + 1 == nt {
            snapshot_times.push(t);
            snapshots.push(unpack(&y));
        }
    }
    Ok(Trajectory {
        times,
        snapshot_times,
        snapshots,
        norms,
        final_state: unpack(&y),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    /// `|Y(T)| / |Y(0)|` on the full grid (0 when `Y(0) = 0`).
    pub residual: f64,
    /// `|P_p Y(T)| / |Y(0)|` for `p <= P`.
    pub mode_residuals: Vec<f64>,
    pub energy: f64,
}

pub fn verify_null_control(
    spec: &SystemSpec,
    op: &DiscreteOperator,
    basis: &SpectralBasis,
    y0: &[Vec<f64>],
    control: &ControlField,
) -> Result<VerificationReport> {
    let traj = simulate_forward(spec, op, y0, Some(control), control.nt(), control.nt())?;
    let y0_norm = state_norm(op, y0);
    let yt_norm = state_norm(op, &traj.final_state);
    let scale = if y0_norm > 0.0 { 1.0 / y0_norm } else { 0.0 };
    let mode_residuals = (1..=control.modes.min(basis.len()))
        .map(|p| {
            crate::spectral::project(&traj.final_state, p, basis)
                .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt() * scale)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(VerificationReport {
        residual: yt_norm * scale,
        mode_residuals,
        energy: control.energy,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObservabilityReport {
    /// Truncated lower estimate of the observability constant; `None`
    /// when the Gramian is singular.
    pub constant: Option<f64>,
    pub divergent: bool,
    pub gramian_sigma_min: f64,
    pub gramian_sigma_max: f64,
    /// Modes carrying the unobservable directions.
    pub kernel_modes: Vec<usize>,
}

/// Best constant `C` with `|phi(0)|^2 <= C int_0^T |B^T phi|^2_omega` on
/// the truncation, i.e. the top eigenvalue of the pencil
/// `(exp(A T) exp(A^T T), G)`.
pub fn estimate_observability_constant(
    spec: &SystemSpec,
    basis: &SpectralBasis,
    horizon: f64,
    modes: usize,
    nt: usize,
) -> Result<ObservabilityReport> {
    let ts = galerkin_truncate(spec, basis, modes)?;
    let gram = controllability_gramian(&ts, horizon, nt)?;
    observability_from_gramian(&ts, &gram, horizon)
}

pub fn observability_from_gramian(ts: &TruncatedSystem, gram: &Gramian, horizon: f64) -> Result<ObservabilityReport> {
    let n = ts.n();
    if gram.is_singular() {
        let (vals, vecs) = linalg::sym_eigen(&gram.matrix);
        let cut = GRAMIAN_SINGULAR_TOL * gram.sigma_max.max(f64::MIN_POSITIVE);
        let mut kernel_modes = Vec::new();
        for p in 0..ts.modes() {
            let content: f64 = vals
                .iter()
                .enumerate()
                .filter(|(_, &v)| v <= cut)
                .map(|(i, _)| vecs.view((p * n, i), (n, 1)).norm_squared())
                .sum();
            if content > 1e-6 {
                kernel_modes.push(p + 1);
            }
        }
        return Ok(ObservabilityReport {
            constant: None,
            divergent: true,
            gramian_sigma_min: gram.sigma_min,
            gramian_sigma_max: gram.sigma_max,
            kernel_modes,
        });
    }
    let chol = gram
        .matrix
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("Gramian is not numerically positive definite".into()))?;
    let e = linalg::block_diagonal(&ts.exp_blocks(horizon));
    let w = chol
        .l()
        .solve_lower_triangular(&e)
        .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
    let c = linalg::norm2(&w).powi(2);
    Ok(ObservabilityReport {
        constant: Some(c),
        divergent: false,
        gramian_sigma_min: gram.sigma_min,
        gramian_sigma_max: gram.sigma_max,
        kernel_modes: Vec::new(),
    })
}

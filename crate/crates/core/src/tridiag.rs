//! Symmetric tridiagonal pencils: inertia counts, bisection and solves.

/// Symmetric tridiagonal matrix stored by diagonal and first
/// off-diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTridiag {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl SymTridiag {
    pub fn new(diag: Vec<f64>, off: Vec<f64>) -> Self {
        assert_eq!(off.len() + 1, diag.len().max(1));
        Self { diag, off }
    }

    pub fn diagonal(diag: Vec<f64>) -> Self {
        let n = diag.len();
        Self {
            diag,
            off: vec![0.0; n.saturating_sub(1)],
        }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut acc = self.diag[i] * x[i];
            if i > 0 {
                acc += self.off[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                acc += self.off[i] * x[i + 1];
            }
            y[i] = acc;
        }
        y
    }

    /// `self - sigma * other`.
    pub fn shifted(&self, sigma: f64, other: &SymTridiag) -> SymTridiag {
        SymTridiag {
            diag: self.diag.iter().zip(&other.diag).map(|(a, b)| a - sigma * b).collect(),
            off: self.off.iter().zip(&other.off).map(|(a, b)| a - sigma * b).collect(),
        }
    }

    /// Number of negative pivots in the LDL^T factorization, which by
    /// Sylvester's law equals the number of negative eigenvalues.
    pub fn negative_count(&self) -> usize {
        let mut count = 0;
        let mut d_prev = 1.0;
        for i in 0..self.len() {
            let mut d = self.diag[i];
            if i > 0 {
                d -= self.off[i - 1] * self.off[i - 1] / d_prev;
            }
            if d == 0.0 {
                d = -f64::EPSILON * (self.diag[i].abs() + 1e-300);
            }
            if d < 0.0 {
                count += 1;
            }
            d_prev = d;
        }
        count
    }

    /// Solves `self * x = rhs` by the Thomas algorithm (no pivoting).
    pub fn solve(&self, rhs: &[f64]) -> Option<Vec<f64>> {
        let n = self.len();
        if n == 0 {
            return Some(Vec::new());
        }
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        let mut denom = self.diag[0];
        if denom == 0.0 || !denom.is_finite() {
            return None;
        }
        if n > 1 {
            c[0] = self.off[0] / denom;
        }
        d[0] = rhs[0] / denom;
        for i in 1..n {
            denom = self.diag[i] - self.off[i - 1] * c[i - 1];
            if denom == 0.0 || !denom.is_finite() {
                return None;
            }
            if i + 1 < n {
                c[i] = self.off[i] / denom;
            }
            d[i] = (rhs[i] - self.off[i - 1] * d[i - 1]) / denom;
        }
        for i in (0..n - 1).rev() {
            d[i] -= c[i] * d[i + 1];
        }
        Some(d)
    }
}

/// Number of eigenvalues of the definite pencil `(a, b)` (with `b`
/// positive definite) strictly below `sigma`.
pub fn pencil_count_below(a: &SymTridiag, b: &SymTridiag, sigma: f64) -> usize {
    a.shifted(sigma, b).negative_count()
}

/// Brackets the `k`-th (0-based) eigenvalue of the pencil `(a, b)` inside
/// `[lo, hi]` by bisection on inertia counts.
pub fn pencil_bisect(a: &SymTridiag, b: &SymTridiag, k: usize, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if pencil_count_below(a, b, mid) > k {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-15 * hi.abs().max(lo.abs()) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Gershgorin upper bound on the largest eigenvalue of `b^-1 a` for a
/// diagonal positive `b`.
pub fn gershgorin_upper(a: &SymTridiag, b_diag: &[f64]) -> f64 {
    let n = a.len();
    (0..n)
        .map(|i| {
            let mut r = a.diag[i];
            if i > 0 {
                r += a.off[i - 1].abs();
            }
            if i + 1 < n {
                r += a.off[i].abs();
            }
            r / b_diag[i]
        })
        .fold(0.0, f64::max)
}

/// General (nonsymmetric) tridiagonal solve.
pub fn solve_general(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Option<Vec<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut denom = diag[0];
    if denom == 0.0 {
        return None;
    }
    if n > 1 {
        c[0] = upper[0] / denom;
    }
    d[0] = rhs[0] / denom;
    for i in 1..n {
        denom = diag[i] - lower[i - 1] * c[i - 1];
        if denom == 0.0 || !denom.is_finite() {
            return None;
        }
        if i + 1 < n {
            c[i] = upper[i] / denom;
        }
        d[i] = (rhs[i] - lower[i - 1] * d[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    Some(d)
}

//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

/// Singular values in nonincreasing order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    s
}

/// Orthonormal basis (as columns) of the null space of `m`, using an
/// absolute threshold on singular values.
pub fn null_space(m: &DMatrix<f64>, abs_tol: f64) -> DMatrix<f64> {
    let ncols = m.ncols();
    // Pad to at least square so that the SVD exposes every right singular
    // vector.
    let padded = if m.nrows() < ncols {
        let mut p = DMatrix::zeros(ncols, ncols);
        p.view_mut((0, 0), (m.nrows(), ncols)).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let mut cols: Vec<(f64, DVector<f64>)> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s <= abs_tol)
        .map(|(i, &s)| (s, v_t.row(i).transpose()))
        .collect();
    cols.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    if cols.is_empty() {
        return DMatrix::zeros(ncols, 0);
    }
    let vecs: Vec<DVector<f64>> = cols.into_iter().map(|(_, v)| v).collect();
    DMatrix::from_columns(&vecs)
}

/// Right singular vector for the smallest singular value.
pub fn smallest_right_singular_vector(m: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let ncols = m.ncols();
    let padded = if m.nrows() < ncols {
        let mut p = DMatrix::zeros(ncols, ncols);
        p.view_mut((0, 0), (m.nrows(), ncols)).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let (i, s) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, s)| (i, *s))
        .unwrap();
    (s, v_t.row(i).transpose())
}

/// Spectral norm.
pub fn norm2(m: &DMatrix<f64>) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

/// Symmetric eigen-decomposition with eigenvalues sorted ascending.
pub fn sym_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let n = m.nrows();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[i].partial_cmp(&eig.eigenvalues[j]).unwrap());
    let vals = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_columns(
        &idx.iter()
            .map(|&i| eig.eigenvectors.column(i).into_owned())
            .collect::<Vec<_>>(),
    );
    (vals, vecs)
}

/// Matrix exponential (Pade scaling and squaring).
pub fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.nrows() == 0 {
        return m.clone();
    }
    m.clone().exp()
}

/// Places `blocks` on the diagonal of a square matrix.
pub fn block_diagonal(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

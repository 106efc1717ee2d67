//! Small dense linear algebra helpers.

use nalgebra::DMatrix;

/// Relative singular-value cutoff used for pseudo-inverses.
pub const SVD_RELATIVE_TOLERANCE: f64 = 1e-10;

/// Moore–Penrose pseudo-inverse via SVD. Singular values below
/// `rel_tol * sigma_max` are treated as zero.
pub fn pseudo_inverse(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return DMatrix::zeros(cols, rows);
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let s_max = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let cutoff = rel_tol * s_max;
    let mut out = DMatrix::zeros(cols, rows);
    for (idx, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            // out += v_i * u_i^T / s
            let vi = v_t.row(idx).transpose();
            let ui = u.column(idx);
            out += (vi * ui.transpose()) / s;
        }
    }
    out
}

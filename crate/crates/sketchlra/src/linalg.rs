//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SVD};

pub type Mat = DMatrix<f64>;

/// Singular values below this are treated as zero.
pub fn sv_cutoff(sigma_max: f64, rows: usize, cols: usize) -> f64 {
    sigma_max * rows.max(cols) as f64 * f64::EPSILON
}

fn svd_of(m: &Mat) -> SVD<f64, nalgebra::Dyn, nalgebra::Dyn> {
    m.clone().svd(true, true)
}

fn max_sv(sv: &DVector<f64>) -> f64 {
    sv.iter().cloned().fold(0.0, f64::max)
}

/// Moore-Penrose pseudoinverse with the shared singular-value cutoff.
pub fn pinv(m: &Mat) -> Mat {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return Mat::zeros(c, r);
    }
    let svd = svd_of(m);
    let u = svd.u.as_ref().unwrap();
    let vt = svd.v_t.as_ref().unwrap();
    let cut = sv_cutoff(max_sv(&svd.singular_values), r, c);
    let mut out = Mat::zeros(c, r);
    for (idx, &s) in svd.singular_values.iter().enumerate() {
        if s > cut && s > 0.0 {
            let vcol = vt.row(idx).transpose();
            out += (vcol * u.column(idx).transpose()) / s;
        }
    }
    out
}

/// Orthonormal basis of the column space.
pub fn orth_basis(m: &Mat) -> Mat {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return Mat::zeros(r, 0);
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.unwrap();
    let cut = sv_cutoff(max_sv(&svd.singular_values), r, c);
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > cut && svd.singular_values[i] > 0.0)
        .collect();
    let mut out = Mat::zeros(r, keep.len());
    for (o, &i) in keep.iter().enumerate() {
        out.set_column(o, &u.column(i));
    }
    out
}

/// Left singular vectors of a thin SVD, all `cols` of them (zero-padded when
/// `rows < cols`). Spans the column space of `m` with orthonormal columns.
pub fn full_left_basis(m: &Mat) -> Mat {
    let (r, c) = m.shape();
    let mut out = Mat::zeros(r, c);
    if r == 0 || c == 0 {
        return out;
    }
    let u = m.clone().svd(true, false).u.unwrap();
    for i in 0..u.ncols().min(c) {
        out.set_column(i, &u.column(i));
    }
    out
}

/// Numerical rank under the shared cutoff.
pub fn numerical_rank(m: &Mat) -> usize {
    orth_basis(m).ncols()
}

/// Top-`k` left singular vectors (fewer if the rank is smaller).
pub fn top_left_singular(m: &Mat, k: usize) -> Mat {
    let (r, c) = m.shape();
    if r == 0 || c == 0 || k == 0 {
        return Mat::zeros(r, 0);
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.unwrap();
    let sv = &svd.singular_values;
    let cut = sv_cutoff(max_sv(sv), r, c);
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].partial_cmp(&sv[a]).unwrap().then(a.cmp(&b)));
    let keep: Vec<usize> = order.into_iter().filter(|&i| sv[i] > cut && sv[i] > 0.0).take(k).collect();
    let mut out = Mat::zeros(r, keep.len());
    for (o, &i) in keep.iter().enumerate() {
        out.set_column(o, &u.column(i));
    }
    out
}

/// Symmetric pseudo-square-root `G^{+1/2}` of a positive semidefinite matrix.
pub fn psd_inv_sqrt(g: &Mat) -> Mat {
    let n = g.nrows();
    if n == 0 {
        return Mat::zeros(0, 0);
    }
    let sym = (g + g.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let lam_max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let cut = sv_cutoff(lam_max, n, n);
    let mut out = Mat::zeros(n, n);
    for (i, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam > cut && lam > 0.0 {
            let v = eig.eigenvectors.column(i);
            out += (v * v.transpose()) / lam.sqrt();
        }
    }
    out
}

/// Frobenius norm squared, summed in index order.
pub fn fro2(m: &Mat) -> f64 {
    m.iter().map(|x| x * x).sum()
}

/// Khatri-Rao product of factor matrices that share their row count.
/// Row `i` is `vec(f_1[i,:] ⊗ ... ⊗ f_q[i,:])` with the first factor varying slowest.
pub fn khatri_rao_rows(factors: &[&Mat]) -> Mat {
    let k = factors.first().map(|f| f.nrows()).unwrap_or(0);
    let total: usize = factors.iter().map(|f| f.ncols()).product();
    let mut out = Mat::zeros(k, total);
    for i in 0..k {
        let mut row = vec![1.0];
        for f in factors {
            let mut next = Vec::with_capacity(row.len() * f.ncols());
            for &a in &row {
                for c in 0..f.ncols() {
                    next.push(a * f[(i, c)]);
                }
            }
            row = next;
        }
        for (c, v) in row.into_iter().enumerate() {
            out[(i, c)] = v;
        }
    }
    out
}

/// Hadamard product of `U_t U_tᵀ` over all factors: the Gram of their Khatri-Rao product.
pub fn kr_gram(factors: &[&Mat]) -> Mat {
    let k = factors.first().map(|f| f.nrows()).unwrap_or(0);
    let mut g = Mat::from_element(k, k, 1.0);
    for f in factors {
        let ff = *f * f.transpose();
        g.component_mul_assign(&ff);
    }
    g
}

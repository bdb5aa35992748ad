//! Third-order tensors, flattenings, mode products, Khatri-Rao rows and factor evaluation.
//!
//! Indices are 0-based here. For an `n1 × n2 × n3` tensor the flattenings are
//! `A1[i, j*n3 + l]`, `A2[j, l*n1 + i]` and `A3[l, i*n2 + j]`.

use crate::error::{shape_err, Error, Result};
use crate::linalg::Mat;

/// Storage for a [`Tensor3`].
#[derive(Clone, Debug, PartialEq)]
pub enum Storage {
    /// Row-major values, index `(i*n2 + j)*n3 + l`.
    Dense(Vec<f64>),
    /// Sorted, duplicate-free `(i, j, l, value)` entries.
    Sparse(Vec<(usize, usize, usize, f64)>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    dims: [usize; 3],
    storage: Storage,
}

/// Norm used when scoring an approximation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Norm {
    Fro,
    L1,
}

impl Tensor3 {
    pub fn zeros(dims: [usize; 3]) -> Self {
        Tensor3 { dims, storage: Storage::Dense(vec![0.0; dims[0] * dims[1] * dims[2]]) }
    }

    /// Empty sparse tensor.
    pub fn empty_sparse(dims: [usize; 3]) -> Self {
        Tensor3 { dims, storage: Storage::Sparse(Vec::new()) }
    }

    pub fn from_dense(dims: [usize; 3], data: Vec<f64>) -> Result<Self> {
        if data.len() != dims[0] * dims[1] * dims[2] {
            return shape_err(format!("dense data has {} values, dims {:?}", data.len(), dims));
        }
        Ok(Tensor3 { dims, storage: Storage::Dense(data) })
    }

    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for i in 0..dims[0] {
            for j in 0..dims[1] {
                for l in 0..dims[2] {
                    data.push(f(i, j, l));
                }
            }
        }
        Tensor3 { dims, storage: Storage::Dense(data) }
    }

    /// Sparse tensor from 0-based entries. Duplicates are summed and exact zeros dropped.
    pub fn from_entries(dims: [usize; 3], mut entries: Vec<(usize, usize, usize, f64)>) -> Result<Self> {
        for &(i, j, l, _) in &entries {
            if i >= dims[0] || j >= dims[1] || l >= dims[2] {
                return Err(Error::Index(format!("entry ({i},{j},{l}) outside dims {dims:?}")));
            }
        }
        entries.sort_by_key(|e| (e.0, e.1, e.2));
        let mut merged: Vec<(usize, usize, usize, f64)> = Vec::with_capacity(entries.len());
        for e in entries {
            match merged.last_mut() {
                Some(last) if (last.0, last.1, last.2) == (e.0, e.1, e.2) => last.3 += e.3,
                _ => merged.push(e),
            }
        }
        merged.retain(|e| e.3 != 0.0);
        Ok(Tensor3 { dims, storage: Storage::Sparse(merged) })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn storage(&self) -> &Storage {
        &self.storage
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self.storage, Storage::Sparse(_))
    }

    #[inline]
    fn offset(&self, i: usize, j: usize, l: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + l
    }

    pub fn get(&self, i: usize, j: usize, l: usize) -> f64 {
        match &self.storage {
            Storage::Dense(d) => d[self.offset(i, j, l)],
            Storage::Sparse(e) => e
                .binary_search_by(|x| (x.0, x.1, x.2).cmp(&(i, j, l)))
                .map(|p| e[p].3)
                .unwrap_or(0.0),
        }
    }

    /// Number of stored nonzeros.
    pub fn nnz(&self) -> usize {
        match &self.storage {
            Storage::Dense(d) => d.iter().filter(|v| **v != 0.0).count(),
            Storage::Sparse(e) => e.len(),
        }
    }

    /// Visit nonzeros in `(i, j, l)` lexicographic order.
    pub fn for_each_nonzero(&self, mut f: impl FnMut(usize, usize, usize, f64)) {
        match &self.storage {
            Storage::Dense(d) => {
                let [n1, n2, n3] = self.dims;
                let mut p = 0;
                for i in 0..n1 {
                    for j in 0..n2 {
                        for l in 0..n3 {
                            let v = d[p];
                            if v != 0.0 {
                                f(i, j, l, v);
                            }
                            p += 1;
                        }
                    }
                }
            }
            Storage::Sparse(e) => {
                for &(i, j, l, v) in e {
                    f(i, j, l, v);
                }
            }
        }
    }

    pub fn to_dense(&self) -> Tensor3 {
        match &self.storage {
            Storage::Dense(_) => self.clone(),
            Storage::Sparse(e) => {
                let mut data = vec![0.0; self.len()];
                for &(i, j, l, v) in e {
                    data[self.offset(i, j, l)] = v;
                }
                Tensor3 { dims: self.dims, storage: Storage::Dense(data) }
            }
        }
    }

    pub fn to_sparse(&self) -> Tensor3 {
        let mut entries = Vec::new();
        self.for_each_nonzero(|i, j, l, v| entries.push((i, j, l, v)));
        Tensor3 { dims: self.dims, storage: Storage::Sparse(entries) }
    }

    /// Dense row-major values (materializing if sparse).
    pub fn dense_values(&self) -> Vec<f64> {
        match self.to_dense().storage {
            Storage::Dense(d) => d,
            Storage::Sparse(_) => unreachable!(),
        }
    }

    /// Squared Frobenius norm. Summation order does not depend on layout.
    pub fn fro_norm2(&self) -> f64 {
        let mut sq = Vec::with_capacity(self.nnz());
        self.for_each_nonzero(|_, _, _, v| sq.push(v * v));
        order_free_sum(sq)
    }

    pub fn fro_norm(&self) -> f64 {
        self.fro_norm2().sqrt()
    }

    pub fn l1_norm(&self) -> f64 {
        let mut a = Vec::with_capacity(self.nnz());
        self.for_each_nonzero(|_, _, _, v| a.push(v.abs()));
        order_free_sum(a)
    }

    /// True when the sparse code paths should be used.
    pub fn prefers_sparse(&self) -> bool {
        (self.nnz() as f64) < 0.25 * self.len() as f64
    }

    pub fn scale(&self, a: f64) -> Tensor3 {
        let storage = match &self.storage {
            Storage::Dense(d) => Storage::Dense(d.iter().map(|v| v * a).collect()),
            Storage::Sparse(e) => Storage::Sparse(e.iter().map(|&(i, j, l, v)| (i, j, l, v * a)).collect()),
        };
        Tensor3 { dims: self.dims, storage }
    }

    /// `self + a * other`, dense output.
    pub fn axpy(&self, a: f64, other: &Tensor3) -> Result<Tensor3> {
        if self.dims != other.dims {
            return shape_err(format!("dims {:?} vs {:?}", self.dims, other.dims));
        }
        let mut data = self.dense_values();
        let dims = self.dims;
        other.for_each_nonzero(|i, j, l, v| data[(i * dims[1] + j) * dims[2] + l] += a * v);
        Tensor3::from_dense(dims, data)
    }

    /// Row and column of entry `(i, j, l)` in the mode-`mode` flattening.
    pub fn flat_index(dims: [usize; 3], mode: usize, i: usize, j: usize, l: usize) -> (usize, usize) {
        let [n1, n2, n3] = dims;
        match mode {
            1 => (i, j * n3 + l),
            2 => (j, l * n1 + i),
            3 => (l, i * n2 + j),
            _ => panic!("mode must be 1, 2 or 3"),
        }
    }

    /// Inverse of [`Tensor3::flat_index`].
    pub fn unflat_index(dims: [usize; 3], mode: usize, row: usize, col: usize) -> (usize, usize, usize) {
        let [n1, n2, n3] = dims;
        match mode {
            1 => (row, col / n3, col % n3),
            2 => (col % n1, row, col / n1),
            3 => (col / n2, col % n2, row),
            _ => panic!("mode must be 1, 2 or 3"),
        }
    }

    /// Shape of the mode-`mode` flattening.
    pub fn flat_shape(dims: [usize; 3], mode: usize) -> (usize, usize) {
        let [n1, n2, n3] = dims;
        match mode {
            1 => (n1, n2 * n3),
            2 => (n2, n3 * n1),
            3 => (n3, n1 * n2),
            _ => panic!("mode must be 1, 2 or 3"),
        }
    }

    fn check_mode(mode: usize) -> Result<()> {
        if (1..=3).contains(&mode) {
            Ok(())
        } else {
            Err(Error::InvalidParam(format!("mode {mode} not in 1..=3")))
        }
    }

    /// Mode-`mode` flattening. Sparse tensors give sparse matrices.
    pub fn flatten(&self, mode: usize) -> Result<Matrix> {
        Self::check_mode(mode)?;
        let (rows, cols) = Self::flat_shape(self.dims, mode);
        match &self.storage {
            Storage::Dense(_) => {
                let mut m = Mat::zeros(rows, cols);
                self.for_each_nonzero(|i, j, l, v| {
                    let (r, c) = Self::flat_index(self.dims, mode, i, j, l);
                    m[(r, c)] = v;
                });
                Ok(Matrix::Dense(m))
            }
            Storage::Sparse(_) => {
                let mut entries = Vec::with_capacity(self.nnz());
                self.for_each_nonzero(|i, j, l, v| {
                    let (r, c) = Self::flat_index(self.dims, mode, i, j, l);
                    entries.push((r, c, v));
                });
                Ok(Matrix::Sparse(SparseMatrix::from_entries(rows, cols, entries)?))
            }
        }
    }

    /// Selected columns of the mode-`mode` flattening, unscaled.
    pub fn flattening_columns(&self, mode: usize, cols: &[usize]) -> Result<Mat> {
        Self::check_mode(mode)?;
        let (rows, ncols) = Self::flat_shape(self.dims, mode);
        if let Some(&bad) = cols.iter().find(|&&c| c >= ncols) {
            return Err(Error::Index(format!("column {bad} of mode-{mode} flattening with {ncols} columns")));
        }
        Ok(Mat::from_fn(rows, cols.len(), |r, s| {
            let (i, j, l) = Self::unflat_index(self.dims, mode, r, cols[s]);
            self.get(i, j, l)
        }))
    }

    /// Inverse of [`Tensor3::flatten`]; keeps the representation of `m`.
    pub fn retensorize(m: &Matrix, mode: usize, dims: [usize; 3]) -> Result<Tensor3> {
        Self::check_mode(mode)?;
        let (rows, cols) = Self::flat_shape(dims, mode);
        if m.shape() != (rows, cols) {
            return shape_err(format!("matrix {:?} does not flatten dims {:?} in mode {mode}", m.shape(), dims));
        }
        match m {
            Matrix::Dense(d) => {
                let mut data = vec![0.0; dims[0] * dims[1] * dims[2]];
                for c in 0..cols {
                    for r in 0..rows {
                        let (i, j, l) = Self::unflat_index(dims, mode, r, c);
                        data[(i * dims[1] + j) * dims[2] + l] = d[(r, c)];
                    }
                }
                Tensor3::from_dense(dims, data)
            }
            Matrix::Sparse(s) => {
                let entries = s
                    .entries()
                    .iter()
                    .map(|&(r, c, v)| {
                        let (i, j, l) = Self::unflat_index(dims, mode, r, c);
                        (i, j, l, v)
                    })
                    .collect();
                Tensor3::from_entries(dims, entries)
            }
        }
    }

    /// `A(M1, M2, M3)`: output entry `(a, b, c)` is `Σ A[i,j,l] M1[i,a] M2[j,b] M3[l,c]`.
    /// Absent matrices act as identities. Applied one mode at a time.
    pub fn mode_apply(&self, maps: [Option<&Mat>; 3]) -> Result<Tensor3> {
        for (t, m) in maps.iter().enumerate() {
            if let Some(m) = m {
                if m.nrows() != self.dims[t] {
                    return shape_err(format!("mode {} map has {} rows, tensor dim {}", t + 1, m.nrows(), self.dims[t]));
                }
            }
        }
        if maps.iter().all(|m| m.is_none()) {
            return Ok(self.clone());
        }
        let mut dims = self.dims;
        let mut data = self.dense_values();
        if let Some(m) = maps[0] {
            let x = Mat::from_row_slice(dims[0], dims[1] * dims[2], &data);
            let y = m.transpose() * x;
            dims[0] = m.ncols();
            data = row_major(&y);
        }
        if let Some(m) = maps[1] {
            let (n1, n2, n3) = (dims[0], dims[1], dims[2]);
            let o = m.ncols();
            let mt = m.transpose();
            let mut out = vec![0.0; n1 * o * n3];
            for i in 0..n1 {
                let slice = Mat::from_row_slice(n2, n3, &data[i * n2 * n3..(i + 1) * n2 * n3]);
                let y = &mt * slice;
                out[i * o * n3..(i + 1) * o * n3].copy_from_slice(&row_major(&y));
            }
            dims[1] = o;
            data = out;
        }
        if let Some(m) = maps[2] {
            let x = Mat::from_row_slice(dims[0] * dims[1], dims[2], &data);
            let y = x * m;
            dims[2] = m.ncols();
            data = row_major(&y);
        }
        Tensor3::from_dense(dims, data)
    }

    /// `A(M1, M2, M3)` for sparse maps, in time proportional to the number of
    /// nonzeros times the image sizes. The output is dense.
    pub fn mode_apply_maps(&self, maps: [Option<&dyn ModeMap>; 3]) -> Result<Tensor3> {
        let mut out_dims = self.dims;
        for t in 0..3 {
            if let Some(m) = maps[t] {
                if m.in_dim() != self.dims[t] {
                    return shape_err(format!("mode {} map input {} vs tensor dim {}", t + 1, m.in_dim(), self.dims[t]));
                }
                out_dims[t] = m.out_dim();
            }
        }
        let mut out = vec![0.0; out_dims[0] * out_dims[1] * out_dims[2]];
        let mut imgs: [Vec<(usize, f64)>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        self.for_each_nonzero(|i, j, l, v| {
            for (t, idx) in [i, j, l].into_iter().enumerate() {
                imgs[t].clear();
                match maps[t] {
                    Some(m) => m.images(idx, &mut imgs[t]),
                    None => imgs[t].push((idx, 1.0)),
                }
            }
            for &(a, wa) in &imgs[0] {
                let va = v * wa;
                for &(b, wb) in &imgs[1] {
                    let vab = va * wb;
                    let base = (a * out_dims[1] + b) * out_dims[2];
                    for &(c, wc) in &imgs[2] {
                        out[base + c] += vab * wc;
                    }
                }
            }
        });
        Tensor3::from_dense(out_dims, out)
    }
}

/// Sum of nonnegative terms after sorting, so any permutation gives the same bits.
pub fn order_free_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(|a, b| a.total_cmp(b));
    terms.iter().fold(0.0, |acc, t| acc + t)
}

fn row_major(m: &Mat) -> Vec<f64> {
    let mut v = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            v.push(m[(r, c)]);
        }
    }
    v
}

/// A linear map on one tensor mode given by the images of basis vectors.
pub trait ModeMap {
    fn in_dim(&self) -> usize;
    fn out_dim(&self) -> usize;
    /// Push `(output index, weight)` pairs for input index `idx`.
    fn images(&self, idx: usize, out: &mut Vec<(usize, f64)>);
}

impl ModeMap for Mat {
    fn in_dim(&self) -> usize {
        self.nrows()
    }
    fn out_dim(&self) -> usize {
        self.ncols()
    }
    fn images(&self, idx: usize, out: &mut Vec<(usize, f64)>) {
        for c in 0..self.ncols() {
            let v = self[(idx, c)];
            if v != 0.0 {
                out.push((c, v));
            }
        }
    }
}

/// Sparse matrix in sorted coordinate form.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl SparseMatrix {
    /// Duplicates are summed; entries sorted by `(row, col)`.
    pub fn from_entries(rows: usize, cols: usize, mut entries: Vec<(usize, usize, f64)>) -> Result<Self> {
        for &(r, c, _) in &entries {
            if r >= rows || c >= cols {
                return Err(Error::Index(format!("({r},{c}) outside {rows}x{cols}")));
            }
        }
        entries.sort_by_key(|e| (e.0, e.1));
        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(entries.len());
        for e in entries {
            match merged.last_mut() {
                Some(last) if (last.0, last.1) == (e.0, e.1) => last.2 += e.2,
                _ => merged.push(e),
            }
        }
        Ok(SparseMatrix { rows, cols, entries: merged })
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }
}

/// Dense or sparse real matrix.
#[derive(Clone, Debug, PartialEq)]
pub enum Matrix {
    Dense(Mat),
    Sparse(SparseMatrix),
}

impl Matrix {
    pub fn shape(&self) -> (usize, usize) {
        match self {
            Matrix::Dense(m) => m.shape(),
            Matrix::Sparse(s) => (s.rows, s.cols),
        }
    }

    pub fn nnz(&self) -> usize {
        match self {
            Matrix::Dense(m) => m.iter().filter(|v| **v != 0.0).count(),
            Matrix::Sparse(s) => s.entries.len(),
        }
    }

    /// Visit nonzeros (row-major order for sparse, column-major for dense).
    pub fn for_each_nonzero(&self, mut f: impl FnMut(usize, usize, f64)) {
        match self {
            Matrix::Dense(m) => {
                for c in 0..m.ncols() {
                    for r in 0..m.nrows() {
                        let v = m[(r, c)];
                        if v != 0.0 {
                            f(r, c, v);
                        }
                    }
                }
            }
            Matrix::Sparse(s) => {
                for &(r, c, v) in &s.entries {
                    f(r, c, v);
                }
            }
        }
    }

    pub fn to_dense(&self) -> Mat {
        match self {
            Matrix::Dense(m) => m.clone(),
            Matrix::Sparse(s) => {
                let mut m = Mat::zeros(s.rows, s.cols);
                for &(r, c, v) in &s.entries {
                    m[(r, c)] = v;
                }
                m
            }
        }
    }

    pub fn transpose(&self) -> Matrix {
        match self {
            Matrix::Dense(m) => Matrix::Dense(m.transpose()),
            Matrix::Sparse(s) => Matrix::Sparse(
                SparseMatrix::from_entries(s.cols, s.rows, s.entries.iter().map(|&(r, c, v)| (c, r, v)).collect())
                    .expect("transpose keeps indices in range"),
            ),
        }
    }

    pub fn fro_norm2(&self) -> f64 {
        let mut sq = Vec::with_capacity(self.nnz());
        self.for_each_nonzero(|_, _, v| sq.push(v * v));
        order_free_sum(sq)
    }
}

impl From<Mat> for Matrix {
    fn from(m: Mat) -> Self {
        Matrix::Dense(m)
    }
}

/// Three factor matrices representing `Σ_r U_r ⊗ V_r ⊗ W_r`.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorTriple {
    pub u: Mat,
    pub v: Mat,
    pub w: Mat,
}

impl FactorTriple {
    pub fn new(u: Mat, v: Mat, w: Mat) -> Result<Self> {
        if u.ncols() != v.ncols() || v.ncols() != w.ncols() {
            return shape_err(format!("factor ranks {} {} {}", u.ncols(), v.ncols(), w.ncols()));
        }
        Ok(FactorTriple { u, v, w })
    }

    pub fn zeros(dims: [usize; 3], rank: usize) -> Self {
        FactorTriple { u: Mat::zeros(dims[0], rank), v: Mat::zeros(dims[1], rank), w: Mat::zeros(dims[2], rank) }
    }

    pub fn rank(&self) -> usize {
        self.u.ncols()
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.u.nrows(), self.v.nrows(), self.w.nrows()]
    }

    /// Materialize the represented tensor.
    pub fn eval(&self) -> Tensor3 {
        let [n1, n2, n3] = self.dims();
        let mut data = vec![0.0; n1 * n2 * n3];
        for i in 0..n1 {
            let slice = self.slice(i);
            for j in 0..n2 {
                for l in 0..n3 {
                    data[(i * n2 + j) * n3 + l] = slice[(j, l)];
                }
            }
        }
        Tensor3::from_dense([n1, n2, n3], data).expect("dims consistent")
    }

    /// Slice `i` of the represented tensor as an `n2 × n3` matrix.
    pub fn slice(&self, i: usize) -> Mat {
        let mut vs = self.v.clone();
        for r in 0..self.rank() {
            let a = self.u[(i, r)];
            vs.column_mut(r).scale_mut(a);
        }
        vs * self.w.transpose()
    }

    /// Squared Frobenius norm via `Σ_ij (UᵀU)_ij (VᵀV)_ij (WᵀW)_ij`.
    pub fn fro_norm2_gram(&self) -> f64 {
        let g = (self.u.transpose() * &self.u)
            .component_mul(&(self.v.transpose() * &self.v))
            .component_mul(&(self.w.transpose() * &self.w));
        g.sum()
    }
}

/// Cost above which the Frobenius residual switches to the Gram identity.
pub const GRAM_ROUTE_ENTRIES: usize = 100_000_000;

/// Residual `‖eval(F) − T‖` in the requested norm (unsquared for Frobenius).
pub fn residual_cost(t: &Tensor3, f: &FactorTriple, norm: Norm) -> Result<f64> {
    match norm {
        Norm::Fro => Ok(residual_fro2(t, f)?.max(0.0).sqrt()),
        Norm::L1 => residual_l1(t, f),
    }
}

fn check_dims(t: &Tensor3, f: &FactorTriple) -> Result<()> {
    if t.dims() != f.dims() {
        return shape_err(format!("tensor dims {:?} vs factor dims {:?}", t.dims(), f.dims()));
    }
    Ok(())
}

/// Squared Frobenius residual, evaluated one mode-1 slice at a time.
pub fn residual_fro2(t: &Tensor3, f: &FactorTriple) -> Result<f64> {
    check_dims(t, f)?;
    if t.len() > GRAM_ROUTE_ENTRIES && t.is_sparse() {
        return residual_fro2_gram(t, f);
    }
    residual_blocked(t, f, 1, |d| d * d)
}

/// Entrywise ℓ1 residual.
pub fn residual_l1(t: &Tensor3, f: &FactorTriple) -> Result<f64> {
    check_dims(t, f)?;
    residual_blocked(t, f, 1, f64::abs)
}

/// Residual accumulated over blocks of `block` consecutive mode-1 slices.
pub fn residual_blocked(t: &Tensor3, f: &FactorTriple, block: usize, g: impl Fn(f64) -> f64) -> Result<f64> {
    check_dims(t, f)?;
    let [n1, n2, n3] = t.dims();
    let block = block.max(1);
    let mut total = 0.0;
    let mut slice_t = Mat::zeros(n2, n3);
    let mut start = 0;
    let sparse = match t.storage() {
        Storage::Sparse(e) => Some(e),
        Storage::Dense(_) => None,
    };
    let mut cursor = 0usize;
    while start < n1 {
        let end = (start + block).min(n1);
        let mut block_sum = 0.0;
        for i in start..end {
            slice_t.fill(0.0);
            match (t.storage(), sparse) {
                (Storage::Dense(d), _) => {
                    for j in 0..n2 {
                        for l in 0..n3 {
                            slice_t[(j, l)] = d[(i * n2 + j) * n3 + l];
                        }
                    }
                }
                (_, Some(e)) => {
                    while cursor < e.len() && e[cursor].0 == i {
                        slice_t[(e[cursor].1, e[cursor].2)] = e[cursor].3;
                        cursor += 1;
                    }
                }
                _ => unreachable!(),
            }
            let model = f.slice(i);
            for j in 0..n2 {
                for l in 0..n3 {
                    block_sum += g(model[(j, l)] - slice_t[(j, l)]);
                }
            }
        }
        total += block_sum;
        start = end;
    }
    Ok(total)
}

/// Squared Frobenius residual from `‖T‖² − 2⟨T, F⟩ + ‖F‖²`, never materializing `F`.
pub fn residual_fro2_gram(t: &Tensor3, f: &FactorTriple) -> Result<f64> {
    check_dims(t, f)?;
    let mut inner = 0.0;
    let r = f.rank();
    t.for_each_nonzero(|i, j, l, v| {
        let mut s = 0.0;
        for c in 0..r {
            s += f.u[(i, c)] * f.v[(j, c)] * f.w[(l, c)];
        }
        inner += v * s;
    });
    Ok(t.fro_norm2() - 2.0 * inner + f.fro_norm2_gram())
}

/// Khatri-Rao product held as its factors; row `i` is `vec(⊗_t factor_t[i, :])`.
#[derive(Clone, Debug)]
pub struct ImplicitKR {
    factors: Vec<Mat>,
}

impl ImplicitKR {
    pub fn new(factors: Vec<Mat>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::InvalidParam("Khatri-Rao product needs at least one factor".into()));
        }
        let k = factors[0].nrows();
        if factors.iter().any(|f| f.nrows() != k) {
            return shape_err("Khatri-Rao factors must share their row count");
        }
        Ok(ImplicitKR { factors })
    }

    pub fn factors(&self) -> &[Mat] {
        &self.factors
    }

    pub fn rows(&self) -> usize {
        self.factors[0].nrows()
    }

    pub fn factor_dims(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.ncols()).collect()
    }

    pub fn cols(&self) -> usize {
        self.factor_dims().iter().product()
    }

    /// Row `i` of the logical matrix.
    pub fn kr_row(&self, i: usize) -> Result<Vec<f64>> {
        if i >= self.rows() {
            return Err(Error::Index(format!("row {i} of {}", self.rows())));
        }
        let mut row = vec![1.0];
        for f in &self.factors {
            let mut next = Vec::with_capacity(row.len() * f.ncols());
            for &a in &row {
                for c in 0..f.ncols() {
                    next.push(a * f[(i, c)]);
                }
            }
            row = next;
        }
        Ok(row)
    }

    /// Entry at row `i`, logical column given per factor.
    pub fn entry(&self, i: usize, idx: &[usize]) -> f64 {
        self.factors.iter().zip(idx).map(|(f, &c)| f[(i, c)]).product()
    }

    /// Full materialization; for tests and small dims only.
    pub fn materialize(&self) -> Mat {
        let refs: Vec<&Mat> = self.factors.iter().collect();
        crate::linalg::khatri_rao_rows(&refs)
    }
}

/// Tucker-form tensor `core ×1 B1 ×2 B2 ×3 B3` with `B_t` of shape `n_t × r_t`.
#[derive(Clone, Debug)]
pub struct TuckerModel {
    pub core: Tensor3,
    pub bases: [Mat; 3],
}

impl TuckerModel {
    pub fn eval(&self) -> Tensor3 {
        let bt: Vec<Mat> = self.bases.iter().map(|b| b.transpose()).collect();
        self.core.mode_apply([Some(&bt[0]), Some(&bt[1]), Some(&bt[2])]).expect("tucker dims consistent")
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.bases[0].nrows(), self.bases[1].nrows(), self.bases[2].nrows()]
    }

    /// Expand into CP factors with one column per core entry, ordered with mode 1 fastest.
    pub fn to_factors(&self) -> FactorTriple {
        let [r1, r2, r3] = self.core.dims();
        let rank = r1 * r2 * r3;
        let [n1, n2, n3] = self.dims();
        let mut u = Mat::zeros(n1, rank);
        let mut v = Mat::zeros(n2, rank);
        let mut w = Mat::zeros(n3, rank);
        let core = self.core.to_dense();
        let mut col = 0;
        for c in 0..r3 {
            for b in 0..r2 {
                for a in 0..r1 {
                    let alpha = core.get(a, b, c);
                    u.set_column(col, &(self.bases[0].column(a) * alpha));
                    v.set_column(col, &self.bases[1].column(b));
                    w.set_column(col, &self.bases[2].column(c));
                    col += 1;
                }
            }
        }
        FactorTriple { u, v, w }
    }

    pub fn residual(&self, t: &Tensor3, norm: Norm) -> Result<f64> {
        if t.dims() != self.dims() {
            return shape_err("tucker dims mismatch");
        }
        let model = self.eval().dense_values();
        let mut data = model;
        let dims = t.dims();
        t.for_each_nonzero(|i, j, l, v| data[(i * dims[1] + j) * dims[2] + l] -= v);
        Ok(match norm {
            Norm::Fro => data.iter().map(|x| x * x).sum::<f64>().sqrt(),
            Norm::L1 => data.iter().map(|x| x.abs()).sum(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_tensor(dims: [usize; 3], seed: u64) -> Tensor3 {
        let mut s = seed;
        Tensor3::from_fn(dims, |_, _, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 33) as f64 / (1u64 << 31) as f64) - 0.5
        })
    }

    #[test]
    fn single_entry_flattens_to_origin() {
        let t = Tensor3::from_entries([2, 2, 2], vec![(0, 0, 0, 1.0)]).unwrap();
        let m = t.flatten(1).unwrap().to_dense();
        assert_eq!(m[(0, 0)], 1.0);
        assert_eq!(m.iter().filter(|v| **v != 0.0).count(), 1);
    }

    #[test]
    fn mode1_column_index() {
        // A[1,2,1] = 5 in 1-based terms lands in column 3.
        let t = Tensor3::from_entries([2, 2, 2], vec![(0, 1, 0, 5.0)]).unwrap();
        let m = t.flatten(1).unwrap().to_dense();
        assert_eq!(m[(0, 2)], 5.0);
    }

    #[test]
    fn mode2_and_mode3_column_maps() {
        let t = Tensor3::from_entries([2, 3, 4], vec![(1, 2, 3, 7.0)]).unwrap();
        let m2 = t.flatten(2).unwrap().to_dense();
        assert_eq!(m2[(2, 3 * 2 + 1)], 7.0);
        let m3 = t.flatten(3).unwrap().to_dense();
        assert_eq!(m3[(3, 3 + 2)], 7.0);
    }

    #[test]
    fn flatten_preserves_norm() {
        let t = small_tensor([3, 4, 5], 1);
        for mode in 1..=3 {
            let f = t.flatten(mode).unwrap();
            assert!((f.fro_norm2() - t.fro_norm2()).abs() <= 1e-12 * t.fro_norm2());
        }
    }

    #[test]
    fn flatten_sparse_keeps_count() {
        let t = Tensor3::from_entries([3, 3, 3], vec![(0, 1, 2, 1.0), (2, 2, 0, -2.0), (1, 0, 1, 3.0)]).unwrap();
        for mode in 1..=3 {
            assert_eq!(t.flatten(mode).unwrap().nnz(), 3);
        }
    }

    #[test]
    fn retensorize_roundtrip_is_bitwise() {
        let t = small_tensor([2, 3, 4], 7);
        for mode in 1..=3 {
            let back = Tensor3::retensorize(&t.flatten(mode).unwrap(), mode, t.dims()).unwrap();
            assert_eq!(back, t);
        }
    }

    #[test]
    fn retensorize_zero_and_shape_error() {
        let z = Matrix::Dense(Mat::zeros(2, 12));
        let t = Tensor3::retensorize(&z, 1, [2, 3, 4]).unwrap();
        assert_eq!(t.nnz(), 0);
        assert!(Tensor3::retensorize(&z, 2, [2, 3, 4]).is_err());
    }

    #[test]
    fn duplicates_are_summed() {
        let t = Tensor3::from_entries([2, 2, 2], vec![(1, 1, 1, 1.5), (1, 1, 1, 2.0), (0, 0, 0, 1.0), (0, 0, 0, -1.0)])
            .unwrap();
        assert_eq!(t.nnz(), 1);
        assert_eq!(t.get(1, 1, 1), 3.5);
        assert!(Tensor3::from_entries([2, 2, 2], vec![(2, 0, 0, 1.0)]).is_err());
    }

    #[test]
    fn dense_and_sparse_norms_agree() {
        let t = small_tensor([4, 3, 5], 3);
        let s = t.to_sparse();
        assert!((t.fro_norm() - s.fro_norm()).abs() <= 1e-12 * t.fro_norm());
        assert_eq!(t.l1_norm(), s.l1_norm());
    }

    #[test]
    fn mode_apply_identity_and_selector() {
        let t = small_tensor([2, 3, 2], 5);
        assert_eq!(t.mode_apply([None, None, None]).unwrap(), t);
        let i3 = Mat::identity(3, 3);
        let ident = t.mode_apply([Some(&Mat::identity(2, 2)), Some(&i3), Some(&Mat::identity(2, 2))]).unwrap();
        assert_eq!(ident.dense_values(), t.dense_values());
        let e1 = Mat::from_column_slice(2, 1, &[1.0, 0.0]);
        let sel = t.mode_apply([Some(&e1), None, None]).unwrap();
        assert_eq!(sel.dims(), [1, 3, 2]);
        for j in 0..3 {
            for l in 0..2 {
                assert_eq!(sel.get(0, j, l), t.get(0, j, l));
            }
        }
    }

    fn triple_sum(t: &Tensor3, m: [&Mat; 3]) -> Tensor3 {
        let [n1, n2, n3] = t.dims();
        let od = [m[0].ncols(), m[1].ncols(), m[2].ncols()];
        Tensor3::from_fn(od, |a, b, c| {
            let mut s = 0.0;
            for i in 0..n1 {
                for j in 0..n2 {
                    for l in 0..n3 {
                        s += t.get(i, j, l) * m[0][(i, a)] * m[1][(j, b)] * m[2][(l, c)];
                    }
                }
            }
            s
        })
    }

    #[test]
    fn mode_apply_matches_triple_sum() {
        let t = small_tensor([2, 2, 2], 11);
        let m1 = Mat::from_row_slice(2, 2, &[0.3, -1.2, 0.8, 0.5]);
        let m2 = Mat::from_row_slice(2, 2, &[1.1, 0.2, -0.4, 0.9]);
        let m3 = Mat::from_row_slice(2, 2, &[-0.7, 0.6, 0.25, 1.5]);
        let got = t.mode_apply([Some(&m1), Some(&m2), Some(&m3)]).unwrap();
        let want = triple_sum(&t, [&m1, &m2, &m3]);
        let sparse_path = t.to_sparse().mode_apply_maps([Some(&m1), Some(&m2), Some(&m3)]).unwrap();
        for (a, b) in got.dense_values().iter().zip(want.dense_values()) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
        for (a, b) in sparse_path.dense_values().iter().zip(want.dense_values()) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn kr_row_examples() {
        let k = ImplicitKR::new(vec![
            Mat::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 0.0]),
            Mat::from_row_slice(2, 3, &[3.0, 4.0, 5.0, 1.0, 1.0, 1.0]),
        ])
        .unwrap();
        assert_eq!(k.kr_row(0).unwrap(), vec![3.0, 4.0, 5.0, 6.0, 8.0, 10.0]);
        assert!(k.kr_row(1).unwrap().iter().all(|v| *v == 0.0));
        assert!(k.kr_row(2).is_err());
        let e = ImplicitKR::new(vec![Mat::from_row_slice(1, 2, &[1.0, 0.0]), Mat::from_row_slice(1, 3, &[1.0, 0.0, 0.0])])
            .unwrap();
        assert_eq!(e.kr_row(0).unwrap(), vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    fn brute_eval(f: &FactorTriple) -> Tensor3 {
        Tensor3::from_fn(f.dims(), |i, j, l| (0..f.rank()).map(|r| f.u[(i, r)] * f.v[(j, r)] * f.w[(l, r)]).sum())
    }

    #[test]
    fn residual_matches_brute_force() {
        let f = FactorTriple::new(
            Mat::from_fn(3, 2, |i, j| (i + 2 * j) as f64 * 0.4 - 0.5),
            Mat::from_fn(3, 2, |i, j| (i * j) as f64 * 0.3 + 0.1),
            Mat::from_fn(3, 2, |i, j| 1.0 - (i + j) as f64 * 0.2),
        )
        .unwrap();
        let t = small_tensor([3, 3, 3], 19);
        let e = brute_eval(&f);
        let mut fro2 = 0.0;
        let mut l1 = 0.0;
        for (a, b) in e.dense_values().iter().zip(t.dense_values()) {
            fro2 += (a - b) * (a - b);
            l1 += (a - b).abs();
        }
        assert!((residual_fro2(&t, &f).unwrap() - fro2).abs() <= 1e-12 * fro2);
        assert!((residual_l1(&t, &f).unwrap() - l1).abs() <= 1e-12 * l1);
        assert!((residual_fro2_gram(&t, &f).unwrap() - fro2).abs() <= 1e-9 * fro2);
        assert!((residual_fro2(&t.to_sparse(), &f).unwrap() - fro2).abs() <= 1e-12 * fro2);
        assert_eq!(f.eval().dense_values().len(), 27);
        assert!(residual_fro2(&e, &f).unwrap() <= 1e-18 * e.fro_norm2());
    }

    #[test]
    fn zero_third_factor_costs_norm() {
        let t = small_tensor([3, 2, 4], 2);
        let mut f = FactorTriple::zeros([3, 2, 4], 2);
        f.u.fill(1.0);
        f.v.fill(0.5);
        let c = residual_cost(&t, &f, Norm::Fro).unwrap();
        assert!((c - t.fro_norm()).abs() <= 1e-12 * t.fro_norm());
    }

    #[test]
    fn tucker_expansion_matches_eval() {
        let core = small_tensor([2, 2, 3], 4);
        let model = TuckerModel {
            core,
            bases: [
                Mat::from_fn(3, 2, |i, j| (i + j) as f64 - 1.0),
                Mat::from_fn(4, 2, |i, j| (i * j) as f64 * 0.5 + 0.2),
                Mat::from_fn(2, 3, |i, j| (i as f64) - (j as f64) * 0.3),
            ],
        };
        let direct = model.eval();
        let via = model.to_factors().eval();
        for (a, b) in direct.dense_values().iter().zip(via.dense_values()) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn cp_flattenings_are_khatri_rao_products() {
        let dims = [3, 4, 2];
        let f = FactorTriple::new(
            Mat::from_fn(3, 2, |i, r| (i as f64 + 1.0) * (r as f64 - 0.5)),
            Mat::from_fn(4, 2, |j, r| (j * j) as f64 - r as f64),
            Mat::from_fn(2, 2, |l, r| 1.0 + (l + 2 * r) as f64),
        )
        .unwrap();
        let t = f.eval();
        assert_eq!(t.dims(), dims);
        let (ut, vt, wt) = (f.u.transpose(), f.v.transpose(), f.w.transpose());
        let expected = [
            &f.u * crate::linalg::khatri_rao_rows(&[&vt, &wt]),
            &f.v * crate::linalg::khatri_rao_rows(&[&wt, &ut]),
            &f.w * crate::linalg::khatri_rao_rows(&[&ut, &vt]),
        ];
        for (mode, e) in (1..=3).zip(expected) {
            let flat = t.flatten(mode).unwrap().to_dense();
            assert!((flat - e).amax() <= 1e-12, "mode {mode}");
        }
    }

    proptest! {
        #[test]
        fn prop_flatten_roundtrip(n1 in 1usize..5, n2 in 1usize..5, n3 in 1usize..5, seed in any::<u64>(), mode in 1usize..4) {
            let t = small_tensor([n1, n2, n3], seed);
            let f = t.flatten(mode).unwrap();
            prop_assert_eq!(f.fro_norm2(), t.fro_norm2());
            prop_assert_eq!(Tensor3::retensorize(&f, mode, t.dims()).unwrap(), t.clone());
            let s = t.to_sparse();
            prop_assert_eq!(Tensor3::retensorize(&s.flatten(mode).unwrap(), mode, t.dims()).unwrap(), s);
        }

        #[test]
        fn prop_kr_row_matches_materialized(k in 1usize..4, na in 1usize..8, nb in 1usize..8, seed in any::<u64>()) {
            let mut s = seed;
            let mut next = || { s = s.wrapping_mul(6364136223846793005).wrapping_add(1); ((s >> 40) as f64) / 1e7 - 0.8 };
            let a = Mat::from_fn(k, na, |_, _| next());
            let b = Mat::from_fn(k, nb, |_, _| next());
            let kr = ImplicitKR::new(vec![a, b]).unwrap();
            let m = kr.materialize();
            for i in 0..k {
                let row = kr.kr_row(i).unwrap();
                for (c, v) in row.iter().enumerate() {
                    prop_assert_eq!(*v, m[(i, c)]);
                }
            }
        }

        #[test]
        fn prop_mode_apply_composes(seed in any::<u64>()) {
            let t = small_tensor([3, 2, 4], seed);
            let m1 = Mat::from_fn(3, 2, |i, j| ((i * 7 + j * 3 + (seed % 5) as usize) % 5) as f64 - 2.0);
            let m2 = Mat::from_fn(2, 3, |i, j| ((i * 2 + j + (seed % 3) as usize) % 4) as f64 * 0.5);
            let step = t.mode_apply([Some(&m1), None, None]).unwrap().mode_apply([None, Some(&m2), None]).unwrap();
            let both = t.mode_apply([Some(&m1), Some(&m2), None]).unwrap();
            let scale = both.fro_norm().max(1e-300);
            for (a, b) in step.dense_values().iter().zip(both.dense_values()) {
                prop_assert!((a - b).abs() <= 1e-12 * scale);
            }
        }

        #[test]
        fn prop_residual_independent_of_blocking(seed in any::<u64>(), block in 1usize..5) {
            let t = small_tensor([4, 3, 3], seed);
            let f = FactorTriple::new(
                Mat::from_fn(4, 2, |i, j| ((i + j + (seed % 7) as usize) % 3) as f64 - 1.0),
                Mat::from_fn(3, 2, |i, j| (i as f64 - j as f64) * 0.4),
                Mat::from_fn(3, 2, |i, j| 0.3 * (i * j) as f64 + 0.1),
            ).unwrap();
            let base = residual_blocked(&t, &f, 1, |d| d * d).unwrap();
            let other = residual_blocked(&t, &f, block, |d| d * d).unwrap();
            prop_assert!((base - other).abs() <= 1e-9 * base.max(1e-300));
        }
    }
}

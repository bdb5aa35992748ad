//! Seeded linear sketches and their nnz-proportional application.
//!
//! A sketch is a linear map `Π: R^input → R^output`. `apply_right(M)` returns
//! `M·Πᵀ` (columns of `M` are compressed) and `apply_left(M)` returns `Π·M`.

use crate::error::{shape_err, Error, Result};
use crate::linalg::Mat;
use crate::rng::{cauchy_at, derive_seed, gaussian_at, PolyHash};
use crate::tensor::{ImplicitKR, Matrix, ModeMap, Tensor3};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

const TAG_HASH: u64 = 1;
const TAG_SIGN: u64 = 2;
const TAG_GAUSS: u64 = 3;
const TAG_CAUCHY: u64 = 4;
const TAG_TS_HASH: u64 = 100;
const TAG_TS_SIGN: u64 = 200;

/// Default hash-family degree for bucket hashes.
pub const HASH_INDEPENDENCE: usize = 3;
/// Default hash-family degree for sign hashes.
pub const SIGN_INDEPENDENCE: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub enum SketchKind {
    CountSketch,
    Gaussian,
    /// CountSketch into `inner_dim` buckets followed by a Gaussian map.
    Composed { inner_dim: usize },
    TensorSketch { factor_dims: Vec<usize> },
    CauchyDense,
    CauchySparse,
    /// Exact identity, used when a reduction dimension reaches the input size.
    Identity,
}

#[derive(Clone, Debug, PartialEq)]
struct Forced {
    buckets: Vec<usize>,
    signs: Vec<f64>,
}

/// Reproducible description of a sketch.
#[derive(Clone, Debug, PartialEq)]
pub struct SketchSpec {
    pub kind: SketchKind,
    pub input_dim: usize,
    pub output_dim: usize,
    pub seed: u64,
    pub hash_independence: usize,
    pub sign_independence: usize,
    pub scale: f64,
    forced: Option<Forced>,
}

impl SketchSpec {
    fn base(kind: SketchKind, input_dim: usize, output_dim: usize, seed: u64, scale: f64) -> Self {
        SketchSpec {
            kind,
            input_dim,
            output_dim,
            seed,
            hash_independence: HASH_INDEPENDENCE,
            sign_independence: SIGN_INDEPENDENCE,
            scale,
            forced: None,
        }
    }

    pub fn countsketch(input_dim: usize, output_dim: usize, seed: u64) -> Self {
        Self::base(SketchKind::CountSketch, input_dim, output_dim, seed, 1.0)
    }

    /// Gaussian entries scaled by `1/√output_dim`.
    pub fn gaussian(input_dim: usize, output_dim: usize, seed: u64) -> Self {
        Self::base(SketchKind::Gaussian, input_dim, output_dim, seed, 1.0 / (output_dim.max(1) as f64).sqrt())
    }

    /// CountSketch to `inner_dim` then Gaussian scaled by `1/√output_dim`.
    pub fn composed(input_dim: usize, inner_dim: usize, output_dim: usize, seed: u64) -> Self {
        Self::base(
            SketchKind::Composed { inner_dim: inner_dim.max(1) },
            input_dim,
            output_dim,
            seed,
            1.0 / (output_dim.max(1) as f64).sqrt(),
        )
    }

    pub fn tensorsketch(factor_dims: Vec<usize>, output_dim: usize, seed: u64) -> Self {
        let input = factor_dims.iter().product();
        Self::base(SketchKind::TensorSketch { factor_dims }, input, output_dim, seed, 1.0)
    }

    pub fn cauchy_dense(input_dim: usize, output_dim: usize, seed: u64) -> Self {
        Self::base(SketchKind::CauchyDense, input_dim, output_dim, seed, 1.0)
    }

    pub fn cauchy_sparse(input_dim: usize, output_dim: usize, seed: u64) -> Self {
        Self::base(SketchKind::CauchySparse, input_dim, output_dim, seed, 1.0)
    }

    pub fn identity(n: usize) -> Self {
        Self::base(SketchKind::Identity, n, n, 0, 1.0)
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    pub fn with_independence(mut self, hash_w: usize, sign_w: usize) -> Self {
        self.hash_independence = hash_w;
        self.sign_independence = sign_w;
        self
    }

    /// Test hook: replace the CountSketch hash and sign tables.
    #[doc(hidden)]
    pub fn with_forced_tables(mut self, buckets: Vec<usize>, signs: Vec<f64>) -> Result<Self> {
        if self.kind != SketchKind::CountSketch {
            return Err(Error::InvalidParam("forced tables only apply to CountSketch".into()));
        }
        if buckets.len() != self.input_dim || signs.len() != self.input_dim {
            return shape_err("forced tables must have one entry per input coordinate");
        }
        if buckets.iter().any(|&b| b >= self.output_dim) {
            return Err(Error::Index("forced bucket out of range".into()));
        }
        self.forced = Some(Forced { buckets, signs });
        Ok(self)
    }

    pub fn is_forced(&self) -> bool {
        self.forced.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        if self.output_dim == 0 {
            return Err(Error::InvalidParam("sketch output_dim must be at least 1".into()));
        }
        if let SketchKind::TensorSketch { factor_dims } = &self.kind {
            if factor_dims.iter().product::<usize>() != self.input_dim {
                return shape_err("tensorsketch input_dim must equal the product of factor dims");
            }
        }
        if self.kind == SketchKind::Identity && self.input_dim != self.output_dim {
            return shape_err("identity sketch must be square");
        }
        Ok(())
    }

    fn hash(&self) -> PolyHash {
        PolyHash::new(derive_seed(self.seed, TAG_HASH), self.hash_independence)
    }

    fn sign_hash(&self) -> PolyHash {
        PolyHash::new(derive_seed(self.seed, TAG_SIGN), self.sign_independence)
    }

    fn gauss_seed(&self) -> u64 {
        derive_seed(self.seed, TAG_GAUSS)
    }

    fn cauchy_seed(&self) -> u64 {
        derive_seed(self.seed, TAG_CAUCHY)
    }

    /// 64-bit words needed to regenerate the sketch from scratch.
    pub fn seed_words(&self) -> usize {
        match &self.kind {
            SketchKind::CountSketch | SketchKind::CauchySparse => self.hash_independence + self.sign_independence,
            SketchKind::Gaussian | SketchKind::CauchyDense => 1,
            SketchKind::Composed { .. } => self.hash_independence + self.sign_independence + 1,
            SketchKind::TensorSketch { factor_dims } => {
                factor_dims.len() * (self.hash_independence + self.sign_independence)
            }
            SketchKind::Identity => 0,
        }
    }

    /// Visit the nonzeros of column `c` of `Π`, generated on demand.
    pub fn for_each_in_column(&self, c: usize, mut f: impl FnMut(usize, f64)) {
        let m = self.output_dim;
        match &self.kind {
            SketchKind::CountSketch => {
                if let Some(fz) = &self.forced {
                    f(fz.buckets[c], self.scale * fz.signs[c]);
                } else {
                    f(self.hash().bucket(c as u64, m), self.scale * self.sign_hash().sign(c as u64));
                }
            }
            SketchKind::Gaussian => {
                let gs = self.gauss_seed();
                for r in 0..m {
                    f(r, self.scale * gaussian_at(gs, r as u64, c as u64));
                }
            }
            SketchKind::Composed { inner_dim } => {
                let b = self.hash().bucket(c as u64, *inner_dim);
                let sg = self.sign_hash().sign(c as u64);
                let gs = self.gauss_seed();
                for r in 0..m {
                    f(r, sg * (self.scale * gaussian_at(gs, r as u64, b as u64)));
                }
            }
            SketchKind::TensorSketch { .. } => {
                let ts = TensorSketchOp::new(self).expect("validated tensorsketch spec");
                let (h, s) = ts.induced(c);
                f(h, self.scale * s);
            }
            SketchKind::CauchyDense => {
                let cs = self.cauchy_seed();
                for r in 0..m {
                    f(r, self.scale * cauchy_at(cs, r as u64, c as u64));
                }
            }
            SketchKind::CauchySparse => {
                f(self.hash().bucket(c as u64, m), self.scale * cauchy_at(self.cauchy_seed(), 0, c as u64));
            }
            SketchKind::Identity => f(c, self.scale),
        }
    }

    /// Materialize `Π` as an `output × input` matrix (tests and small dims).
    pub fn materialize(&self) -> Mat {
        let mut p = Mat::zeros(self.output_dim, self.input_dim);
        for c in 0..self.input_dim {
            self.for_each_in_column(c, |r, v| p[(r, c)] += v);
        }
        p
    }

    pub fn realize(&self) -> Result<SketchOp> {
        SketchOp::new(self)
    }
}

/// A sketch with its hash, sign and dense tables precomputed.
#[derive(Clone, Debug)]
pub struct SketchOp {
    spec: SketchSpec,
    buckets: Vec<usize>,
    values: Vec<f64>,
    /// `output × input` (Gaussian, dense Cauchy) or `output × inner` (composed).
    table: Option<Mat>,
}

impl SketchOp {
    pub fn new(spec: &SketchSpec) -> Result<Self> {
        spec.validate()?;
        let n = spec.input_dim;
        let m = spec.output_dim;
        let mut buckets = Vec::new();
        let mut values = Vec::new();
        let mut table = None;
        match &spec.kind {
            SketchKind::CountSketch => {
                if let Some(fz) = &spec.forced {
                    buckets = fz.buckets.clone();
                    values = fz.signs.iter().map(|s| spec.scale * s).collect();
                } else {
                    let h = spec.hash();
                    let s = spec.sign_hash();
                    buckets = (0..n).map(|c| h.bucket(c as u64, m)).collect();
                    values = (0..n).map(|c| spec.scale * s.sign(c as u64)).collect();
                }
            }
            SketchKind::CauchySparse => {
                let h = spec.hash();
                let cs = spec.cauchy_seed();
                buckets = (0..n).map(|c| h.bucket(c as u64, m)).collect();
                values = (0..n).map(|c| spec.scale * cauchy_at(cs, 0, c as u64)).collect();
            }
            SketchKind::Identity => {
                buckets = (0..n).collect();
                values = vec![spec.scale; n];
            }
            SketchKind::TensorSketch { .. } => {
                let ts = TensorSketchOp::new(spec)?;
                for c in 0..n {
                    let (h, s) = ts.induced(c);
                    buckets.push(h);
                    values.push(spec.scale * s);
                }
            }
            SketchKind::Gaussian => {
                let gs = spec.gauss_seed();
                table = Some(Mat::from_fn(m, n, |r, c| spec.scale * gaussian_at(gs, r as u64, c as u64)));
            }
            SketchKind::CauchyDense => {
                let cs = spec.cauchy_seed();
                table = Some(Mat::from_fn(m, n, |r, c| spec.scale * cauchy_at(cs, r as u64, c as u64)));
            }
            SketchKind::Composed { inner_dim } => {
                let h = spec.hash();
                let s = spec.sign_hash();
                buckets = (0..n).map(|c| h.bucket(c as u64, *inner_dim)).collect();
                values = (0..n).map(|c| s.sign(c as u64)).collect();
                let gs = spec.gauss_seed();
                table = Some(Mat::from_fn(m, *inner_dim, |r, b| spec.scale * gaussian_at(gs, r as u64, b as u64)));
            }
        }
        Ok(SketchOp { spec: spec.clone(), buckets, values, table })
    }

    pub fn spec(&self) -> &SketchSpec {
        &self.spec
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim
    }

    fn is_hashed(&self) -> bool {
        matches!(
            self.spec.kind,
            SketchKind::CountSketch | SketchKind::CauchySparse | SketchKind::Identity | SketchKind::TensorSketch { .. }
        )
    }

    /// Visit nonzeros of column `c` of `Π` using cached tables.
    #[inline]
    pub fn column(&self, c: usize, mut f: impl FnMut(usize, f64)) {
        match &self.spec.kind {
            SketchKind::Composed { .. } => {
                let t = self.table.as_ref().unwrap();
                let b = self.buckets[c];
                let sg = self.values[c];
                for r in 0..self.spec.output_dim {
                    f(r, sg * t[(r, b)]);
                }
            }
            SketchKind::Gaussian | SketchKind::CauchyDense => {
                let t = self.table.as_ref().unwrap();
                for r in 0..self.spec.output_dim {
                    f(r, t[(r, c)]);
                }
            }
            _ => f(self.buckets[c], self.values[c]),
        }
    }

    /// Accumulate `v · Π[:, c]` into row `row` of `out` (`rows × output`).
    #[inline]
    fn scatter(&self, out: &mut Mat, row: usize, c: usize, v: f64) {
        self.column(c, |r, w| out[(row, r)] += v * w);
    }

    /// `M·Πᵀ` for `M` with `input_dim` columns.
    pub fn apply_right(&self, m: &Matrix) -> Result<Mat> {
        let (rows, cols) = m.shape();
        if cols != self.spec.input_dim {
            return shape_err(format!("matrix has {cols} columns, sketch input {}", self.spec.input_dim));
        }
        self.apply_right_entries(rows, |f| m.for_each_nonzero(f))
    }

    /// `M·Πᵀ` where `M` is presented as a stream of `(row, col, value)` nonzeros.
    pub fn apply_right_entries(
        &self,
        rows: usize,
        visit: impl FnOnce(&mut dyn FnMut(usize, usize, f64)),
    ) -> Result<Mat> {
        let m = self.spec.output_dim;
        match &self.spec.kind {
            SketchKind::Composed { inner_dim } => {
                let mut inner = Mat::zeros(rows, *inner_dim);
                visit(&mut |r, c, v| inner[(r, self.buckets[c])] += v * self.values[c]);
                Ok(inner * self.table.as_ref().unwrap().transpose())
            }
            _ if self.is_hashed() => {
                let mut out = Mat::zeros(rows, m);
                visit(&mut |r, c, v| out[(r, self.buckets[c])] += v * self.values[c]);
                Ok(out)
            }
            _ => {
                let mut out = Mat::zeros(rows, m);
                visit(&mut |r, c, v| self.scatter(&mut out, r, c, v));
                Ok(out)
            }
        }
    }

    /// `Π·M` for `M` with `input_dim` rows.
    pub fn apply_left(&self, m: &Matrix) -> Result<Mat> {
        Ok(self.apply_right(&m.transpose())?.transpose())
    }

    /// `A_mode · Πᵀ` computed from the tensor's nonzeros without forming the flattening.
    pub fn apply_right_flattening(&self, t: &Tensor3, mode: usize) -> Result<Mat> {
        let (rows, cols) = Tensor3::flat_shape(t.dims(), mode);
        if cols != self.spec.input_dim {
            return shape_err(format!("mode-{mode} flattening has {cols} columns, sketch input {}", self.spec.input_dim));
        }
        let dims = t.dims();
        self.apply_right_entries(rows, |f| {
            t.for_each_nonzero(|i, j, l, v| {
                let (r, c) = Tensor3::flat_index(dims, mode, i, j, l);
                f(r, c, v)
            })
        })
    }
}

/// `Π` acts on a tensor mode as the map `e_c ↦ Π[:, c]`.
impl ModeMap for SketchOp {
    fn in_dim(&self) -> usize {
        self.spec.input_dim
    }
    fn out_dim(&self) -> usize {
        self.spec.output_dim
    }
    fn images(&self, idx: usize, out: &mut Vec<(usize, f64)>) {
        self.column(idx, |r, v| out.push((r, v)));
    }
}

/// `M·Πᵀ` for a sketch spec.
pub fn sketch_apply_right(m: &Matrix, s: &SketchSpec) -> Result<Mat> {
    s.realize()?.apply_right(m)
}

/// `Π·M` for a sketch spec.
pub fn sketch_apply_left(s: &SketchSpec, m: &Matrix) -> Result<Mat> {
    s.realize()?.apply_left(m)
}

/// TensorSketch over a product domain `[n_1] × ... × [n_q]`.
#[derive(Clone, Debug)]
pub struct TensorSketchOp {
    factor_dims: Vec<usize>,
    m: usize,
    scale: f64,
    buckets: Vec<Vec<usize>>,
    signs: Vec<Vec<f64>>,
}

impl TensorSketchOp {
    pub fn new(spec: &SketchSpec) -> Result<Self> {
        let factor_dims = match &spec.kind {
            SketchKind::TensorSketch { factor_dims } => factor_dims.clone(),
            _ => return Err(Error::InvalidParam("not a tensorsketch spec".into())),
        };
        spec.validate()?;
        let m = spec.output_dim;
        let mut buckets = Vec::new();
        let mut signs = Vec::new();
        for (t, &n) in factor_dims.iter().enumerate() {
            let h = PolyHash::new(derive_seed(spec.seed, TAG_TS_HASH + t as u64), spec.hash_independence);
            let s = PolyHash::new(derive_seed(spec.seed, TAG_TS_SIGN + t as u64), spec.sign_independence);
            buckets.push((0..n).map(|c| h.bucket(c as u64, m)).collect());
            signs.push((0..n).map(|c| s.sign(c as u64)).collect());
        }
        Ok(TensorSketchOp { factor_dims, m, scale: spec.scale, buckets, signs })
    }

    pub fn output_dim(&self) -> usize {
        self.m
    }

    pub fn factor_dims(&self) -> &[usize] {
        &self.factor_dims
    }

    /// Per-factor bucket `h_t(i)`.
    pub fn factor_bucket(&self, t: usize, i: usize) -> usize {
        self.buckets[t][i]
    }

    /// Per-factor sign `s_t(i)`.
    pub fn factor_sign(&self, t: usize, i: usize) -> f64 {
        self.signs[t][i]
    }

    /// Induced `(H(c), S(c))` for a combined column index, first factor slowest.
    pub fn induced(&self, c: usize) -> (usize, f64) {
        let mut rem = c;
        let mut h = 0usize;
        let mut s = 1.0;
        for t in (0..self.factor_dims.len()).rev() {
            let n = self.factor_dims[t];
            let i = rem % n;
            rem /= n;
            h = (h + self.buckets[t][i]) % self.m;
            s *= self.signs[t][i];
        }
        (h, s)
    }

    /// `K·Πᵀ` for an implicit Khatri-Rao matrix, one FFT convolution per row.
    pub fn apply_kr(&self, k: &ImplicitKR) -> Result<Mat> {
        if k.factor_dims() != self.factor_dims {
            return shape_err(format!("KR factor dims {:?} vs sketch {:?}", k.factor_dims(), self.factor_dims));
        }
        let m = self.m;
        let mut planner = FftPlanner::<f64>::new();
        let fwd = planner.plan_fft_forward(m);
        let inv = planner.plan_fft_inverse(m);
        let rows = k.rows();
        let mut out = Mat::zeros(rows, m);
        let mut acc = vec![Complex64::new(0.0, 0.0); m];
        let mut buf = vec![Complex64::new(0.0, 0.0); m];
        for i in 0..rows {
            for (t, f) in k.factors().iter().enumerate() {
                buf.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
                for c in 0..f.ncols() {
                    buf[self.buckets[t][c]].re += self.signs[t][c] * f[(i, c)];
                }
                fwd.process(&mut buf);
                if t == 0 {
                    acc.copy_from_slice(&buf);
                } else {
                    acc.iter_mut().zip(&buf).for_each(|(a, b)| *a *= *b);
                }
            }
            inv.process(&mut acc);
            let norm = self.scale / m as f64;
            for r in 0..m {
                out[(i, r)] = acc[r].re * norm;
            }
        }
        Ok(out)
    }

    /// `M·Πᵀ` for any `M` whose columns index the product domain; nnz time.
    pub fn apply_rows(&self, mat: &Matrix) -> Result<Mat> {
        let (rows, cols) = mat.shape();
        let total: usize = self.factor_dims.iter().product();
        if cols != total {
            return shape_err(format!("matrix has {cols} columns, sketch domain {total}"));
        }
        let mut out = Mat::zeros(rows, self.m);
        mat.for_each_nonzero(|r, c, v| {
            let (h, s) = self.induced(c);
            out[(r, h)] += v * s * self.scale;
        });
        Ok(out)
    }
}

/// `(U ⊙ V ...)·Πᵀ` for a TensorSketch spec.
pub fn tensorsketch_apply_kr(k: &ImplicitKR, spec: &SketchSpec) -> Result<Mat> {
    TensorSketchOp::new(spec)?.apply_kr(k)
}

/// `M·Πᵀ` for a TensorSketch spec.
pub fn tensorsketch_apply_rows(m: &Matrix, spec: &SketchSpec) -> Result<Mat> {
    TensorSketchOp::new(spec)?.apply_rows(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rand_mat(r: usize, c: usize, seed: u64) -> Mat {
        Mat::from_fn(r, c, |i, j| gaussian_at(seed, i as u64, j as u64))
    }

    #[test]
    fn forced_identity_countsketch_is_identity() {
        let spec = SketchSpec::countsketch(5, 5, 1).with_forced_tables((0..5).collect(), vec![1.0; 5]).unwrap();
        let m = rand_mat(3, 5, 2);
        let out = sketch_apply_right(&Matrix::Dense(m.clone()), &spec).unwrap();
        assert_eq!(out, m);
        assert!(spec.is_forced());
        assert!(!SketchSpec::countsketch(5, 5, 1).is_forced());
    }

    #[test]
    fn countsketch_columns_have_one_signed_entry() {
        let spec = SketchSpec::countsketch(200, 13, 9);
        let p = spec.materialize();
        for c in 0..200 {
            let nz: Vec<f64> = p.column(c).iter().cloned().filter(|v| *v != 0.0).collect();
            assert_eq!(nz.len(), 1);
            assert_eq!(nz[0].abs(), 1.0);
        }
    }

    #[test]
    fn realized_matches_on_demand_bitwise() {
        for spec in [
            SketchSpec::countsketch(30, 7, 3),
            SketchSpec::gaussian(30, 7, 3),
            SketchSpec::composed(30, 11, 7, 3),
            SketchSpec::cauchy_dense(30, 7, 3),
            SketchSpec::cauchy_sparse(30, 7, 3),
            SketchSpec::tensorsketch(vec![5, 6], 7, 3),
            SketchSpec::identity(30),
        ] {
            let op = spec.realize().unwrap();
            let on_demand = spec.materialize();
            let mut cached = Mat::zeros(spec.output_dim, spec.input_dim);
            for c in 0..spec.input_dim {
                op.column(c, |r, v| cached[(r, c)] += v);
            }
            assert_eq!(on_demand, cached, "{:?}", spec.kind);
            let m = rand_mat(4, spec.input_dim, 5);
            let fast = op.apply_right(&Matrix::Dense(m.clone())).unwrap();
            let slow = &m * on_demand.transpose();
            assert!((fast - slow).norm() <= 1e-12 * (1.0 + m.norm() * 10.0), "{:?}", spec.kind);
        }
    }

    #[test]
    fn sparse_and_dense_inputs_agree() {
        let spec = SketchSpec::composed(40, 12, 6, 77);
        let mut m = Mat::zeros(5, 40);
        m[(0, 3)] = 2.0;
        m[(4, 39)] = -1.5;
        m[(2, 17)] = 0.25;
        let dense = sketch_apply_right(&Matrix::Dense(m.clone()), &spec).unwrap();
        let sp = crate::tensor::SparseMatrix::from_entries(5, 40, vec![(0, 3, 2.0), (4, 39, -1.5), (2, 17, 0.25)]).unwrap();
        let sparse = sketch_apply_right(&Matrix::Sparse(sp), &spec).unwrap();
        assert!((dense - sparse).norm() < 1e-14);
    }

    #[test]
    fn apply_left_is_transpose_of_right() {
        let spec = SketchSpec::gaussian(9, 4, 8);
        let m = rand_mat(9, 3, 1);
        let left = sketch_apply_left(&spec, &Matrix::Dense(m.clone())).unwrap();
        let want = spec.materialize() * &m;
        assert!((left - want).norm() < 1e-12);
    }

    #[test]
    fn same_spec_same_bits() {
        let spec = SketchSpec::composed(50, 10, 5, 1234);
        let m = Matrix::Dense(rand_mat(3, 50, 4));
        assert_eq!(sketch_apply_right(&m, &spec).unwrap(), sketch_apply_right(&m, &spec).unwrap());
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(SketchSpec::countsketch(4, 0, 1).realize().is_err());
        let mut ts = SketchSpec::tensorsketch(vec![2, 3], 4, 1);
        ts.input_dim = 7;
        assert!(ts.realize().is_err());
        let m = Matrix::Dense(Mat::zeros(2, 3));
        assert!(sketch_apply_right(&m, &SketchSpec::countsketch(4, 2, 1)).is_err());
    }

    #[test]
    fn tensorsketch_induced_hash_formula() {
        let spec = SketchSpec::tensorsketch(vec![3, 4, 5], 7, 42);
        let ts = TensorSketchOp::new(&spec).unwrap();
        for a in 0..3 {
            for b in 0..4 {
                for c in 0..5 {
                    let idx = (a * 4 + b) * 5 + c;
                    let (h, s) = ts.induced(idx);
                    let hw = (ts.factor_bucket(0, a) + ts.factor_bucket(1, b) + ts.factor_bucket(2, c)) % 7;
                    let sw = ts.factor_sign(0, a) * ts.factor_sign(1, b) * ts.factor_sign(2, c);
                    assert_eq!((h, s), (hw, sw));
                }
            }
        }
    }

    #[test]
    fn tensorsketch_fft_matches_materialized() {
        let spec = SketchSpec::tensorsketch(vec![4, 4], 8, 5);
        let u = rand_mat(2, 4, 10);
        let v = rand_mat(2, 4, 11);
        let k = ImplicitKR::new(vec![u, v]).unwrap();
        let fft = tensorsketch_apply_kr(&k, &spec).unwrap();
        let direct = k.materialize() * spec.materialize().transpose();
        assert!((&fft - &direct).norm() <= 1e-9 * direct.norm());
        let rows = tensorsketch_apply_rows(&Matrix::Dense(k.materialize()), &spec).unwrap();
        assert!((&fft - &rows).norm() <= 1e-9 * direct.norm());
    }

    #[test]
    fn tensorsketch_zero_row_and_single_entry() {
        let spec = SketchSpec::tensorsketch(vec![3, 3], 5, 9);
        let mut u = rand_mat(2, 3, 1);
        u.row_mut(1).fill(0.0);
        let k = ImplicitKR::new(vec![u, rand_mat(2, 3, 2)]).unwrap();
        let out = tensorsketch_apply_kr(&k, &spec).unwrap();
        assert!(out.row(1).iter().all(|v| v.abs() < 1e-15));
        let ts = TensorSketchOp::new(&spec).unwrap();
        let sp = crate::tensor::SparseMatrix::from_entries(1, 9, vec![(0, 4, 2.5)]).unwrap();
        let o = ts.apply_rows(&Matrix::Sparse(sp)).unwrap();
        let (h, s) = ts.induced(4);
        for r in 0..5 {
            assert_eq!(o[(0, r)], if r == h { 2.5 * s } else { 0.0 });
        }
        assert!(ts.apply_rows(&Matrix::Dense(Mat::zeros(2, 9))).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn three_factor_fft_matches_materialized() {
        let spec = SketchSpec::tensorsketch(vec![3, 2, 4], 16, 21);
        let k = ImplicitKR::new(vec![rand_mat(3, 3, 1), rand_mat(3, 2, 2), rand_mat(3, 4, 3)]).unwrap();
        let fft = tensorsketch_apply_kr(&k, &spec).unwrap();
        let direct = k.materialize() * spec.materialize().transpose();
        assert!((&fft - &direct).norm() <= 1e-9 * direct.norm());
    }

    #[test]
    fn mode_map_images_match_columns() {
        let op = SketchSpec::countsketch(6, 3, 4).realize().unwrap();
        let p = op.spec().materialize();
        let mut imgs = Vec::new();
        for c in 0..6 {
            imgs.clear();
            op.images(c, &mut imgs);
            assert_eq!(imgs.len(), 1);
            assert_eq!(p[(imgs[0].0, c)], imgs[0].1);
        }
    }

    proptest! {
        #[test]
        fn prop_linearity(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0, kind in 0usize..5) {
            let spec = match kind {
                0 => SketchSpec::countsketch(20, 6, seed),
                1 => SketchSpec::gaussian(20, 6, seed),
                2 => SketchSpec::composed(20, 8, 6, seed),
                3 => SketchSpec::cauchy_sparse(20, 6, seed),
                _ => SketchSpec::tensorsketch(vec![4, 5], 6, seed),
            };
            let op = spec.realize().unwrap();
            let m1 = rand_mat(3, 20, seed ^ 1);
            let m2 = rand_mat(3, 20, seed ^ 2);
            let lhs = op.apply_right(&Matrix::Dense(&m1 * a + &m2 * b)).unwrap();
            let rhs = op.apply_right(&Matrix::Dense(m1.clone())).unwrap() * a + op.apply_right(&Matrix::Dense(m2.clone())).unwrap() * b;
            let scale = 1.0 + lhs.norm() + rhs.norm();
            prop_assert!((lhs - rhs).norm() <= 1e-12 * scale);
        }

        #[test]
        fn prop_countsketch_one_nonzero_per_column(seed in any::<u64>(), n in 1usize..60, m in 1usize..20) {
            let p = SketchSpec::countsketch(n, m, seed).with_scale(0.5).materialize();
            for c in 0..n {
                let nz: Vec<f64> = p.column(c).iter().cloned().filter(|v| *v != 0.0).collect();
                prop_assert_eq!(nz.len(), 1);
                prop_assert_eq!(nz[0].abs(), 0.5);
            }
        }

        #[test]
        fn prop_tensorsketch_fft_equals_direct(seed in any::<u64>(), na in 1usize..6, nb in 1usize..6, k in 1usize..4, m in 1usize..12) {
            let spec = SketchSpec::tensorsketch(vec![na, nb], m, seed);
            let kr = ImplicitKR::new(vec![rand_mat(k, na, seed ^ 5), rand_mat(k, nb, seed ^ 6)]).unwrap();
            let fft = tensorsketch_apply_kr(&kr, &spec).unwrap();
            let direct = tensorsketch_apply_rows(&Matrix::Dense(kr.materialize()), &spec).unwrap();
            prop_assert!((&fft - &direct).norm() <= 1e-9 * (1.0 + direct.norm()));
        }
    }
}

//! Column, row and tube selection; CURT decomposition; matrix CUR.

use crate::error::{shape_err, Error, Result};
use crate::fro_lra::{sketched_flattenings, trial_seed, AlgoParams};
use crate::linalg::{fro2, orth_basis, pinv, top_left_singular, Mat};
use crate::par::map_indexed;
use crate::rng::derive_seed;
use crate::sampling::{
    kr_leverage_sample_with, kronecker_leverage_sample, leverage_scores, sample_operator, KrSamplerOptions,
    SampleMode, SamplingOperator,
};
use crate::sketch::SketchSpec;
use crate::tensor::{residual_fro2, FactorTriple, Matrix, Tensor3};

/// Default multiplier in the sample budgets.
pub const BUDGET_CONSTANT: f64 = 4.0;
/// Default cap on each cascaded selection size.
pub const DEFAULT_SELECTION_CAP: usize = 512;

/// Leverage-score budget `⌈c(r ln r + r/ε)⌉`.
pub fn sample_budget(r: usize, eps: f64, c: f64) -> usize {
    let r = r as f64;
    let log = if r > 1.0 { r * r.ln() } else { 0.0 };
    (c * (log + r / eps)).ceil().max(1.0) as usize
}

#[derive(Clone, Debug)]
pub struct CurtOptions {
    pub budget_constant: f64,
    pub trials: usize,
    pub sampler: KrSamplerOptions,
}

impl Default for CurtOptions {
    fn default() -> Self {
        CurtOptions { budget_constant: BUDGET_CONSTANT, trials: 9, sampler: KrSamplerOptions::default() }
    }
}

/// Selected columns, rows and tubes with the cascade sizes that produced them.
#[derive(Clone, Debug)]
pub struct CrtSelection {
    /// Sampling operators on the mode-1, mode-2 and mode-3 flattening columns.
    pub ops: [SamplingOperator; 3],
    /// Sizes before capping.
    pub requested: [usize; 3],
    /// Whether the cap limited each selection.
    pub cap_bound: [bool; 3],
}

impl CrtSelection {
    /// Weighted selected slices `A_t D_t` (`n_t × d_t`).
    pub fn weighted(&self, a: &Tensor3, mode: usize) -> Result<Mat> {
        let op = &self.ops[mode - 1];
        let raw = a.flattening_columns(mode, &op.indices)?;
        Ok(op.select_cols_of_selected(&raw))
    }

    /// Least-squares Tucker fit over the selected bases; returns the squared cost.
    pub fn best_fit_cost(&self, a: &Tensor3) -> Result<f64> {
        let b: Vec<Mat> = (1..=3).map(|m| self.weighted(a, m).map(|x| orth_basis(&x))).collect::<Result<_>>()?;
        let core = a.mode_apply([Some(&b[0]), Some(&b[1]), Some(&b[2])])?;
        let bt: Vec<Mat> = b.iter().map(|x| x.transpose()).collect();
        let model = core.mode_apply([Some(&bt[0]), Some(&bt[1]), Some(&bt[2])])?;
        Ok(model.axpy(-1.0, a)?.fro_norm2())
    }
}

impl SamplingOperator {
    /// Scale already-selected columns (`rows × len`) by the sample weights.
    pub fn select_cols_of_selected(&self, raw: &Mat) -> Mat {
        Mat::from_fn(raw.nrows(), raw.ncols(), |r, s| raw[(r, s)] * self.weights[s])
    }
}

/// Cascaded selection: tubes from the sketched mode-1/mode-2 bases, then rows
/// against tubes and columns, then columns against rows and tubes.
pub fn crt_select(a: &Tensor3, params: &AlgoParams, cap: usize) -> Result<CrtSelection> {
    params.validate()?;
    let eps = params.eps();
    let ts = trial_seed(params.seed, 0);
    let z = sketched_flattenings(a, &[1, 2], params, ts)?;
    let mut requested = [0usize; 3];
    let mut cap_bound = [false; 3];
    let mut size = |mode: usize, basis_dim: usize| {
        let want = sample_budget(basis_dim, eps, BUDGET_CONSTANT);
        requested[mode - 1] = want;
        cap_bound[mode - 1] = want > cap;
        want.min(cap)
    };
    let r3 = orth_basis(&z[0]).ncols() * orth_basis(&z[1]).ncols();
    let d3 = size(3, r3.max(1));
    let op3 = kronecker_leverage_sample(&z[0], &z[1], d3, derive_seed(ts, 53))?;
    let tubes = op3.select_cols_of_selected(&a.flattening_columns(3, &op3.indices)?);
    let r2 = orth_basis(&tubes).ncols() * orth_basis(&z[0]).ncols();
    let d2 = size(2, r2.max(1));
    let op2 = kronecker_leverage_sample(&tubes, &z[0], d2, derive_seed(ts, 52))?;
    let rows = op2.select_cols_of_selected(&a.flattening_columns(2, &op2.indices)?);
    let r1 = orth_basis(&rows).ncols() * orth_basis(&tubes).ncols();
    let d1 = size(1, r1.max(1));
    let op1 = kronecker_leverage_sample(&rows, &tubes, d1, derive_seed(ts, 51))?;
    Ok(CrtSelection { ops: [op1, op2, op3], requested, cap_bound })
}

/// CURT decomposition `U(C, R, T)` with a rank-`k` factored core.
#[derive(Clone, Debug)]
pub struct CurtResult {
    pub col_idx: Vec<usize>,
    pub col_weights: Vec<f64>,
    pub row_idx: Vec<usize>,
    pub row_weights: Vec<f64>,
    pub tube_idx: Vec<usize>,
    pub tube_weights: Vec<f64>,
    /// Raw selected columns of `A_1`, `n1 × c`.
    pub cmat: Mat,
    /// Raw selected columns of `A_2`, `n2 × r`.
    pub rmat: Mat,
    /// Raw selected columns of `A_3`, `n3 × t`.
    pub tmat: Mat,
    /// Core factors; the core is `Σ_i P1[:, i] ⊗ P2[:, i] ⊗ P3[:, i]`.
    pub p1: Mat,
    pub p2: Mat,
    pub p3: Mat,
    pub cost_fro2: f64,
    pub trial: usize,
}

impl CurtResult {
    /// The approximation as rank-`k` factors `(C·P1, R·P2, T·P3)`.
    pub fn factors(&self) -> FactorTriple {
        FactorTriple { u: &self.cmat * &self.p1, v: &self.rmat * &self.p2, w: &self.tmat * &self.p3 }
    }
}

/// Fit one mode: sample flattening columns by leverage of the Khatri-Rao design,
/// return the operator, raw columns and `P = diag(w)·(B D)^†`.
fn curt_mode(
    a: &Tensor3,
    mode: usize,
    design: [&Mat; 2],
    count: usize,
    seed: u64,
    opts: &CurtOptions,
) -> Result<(SamplingOperator, Mat, Mat)> {
    let factors = [design[0].transpose(), design[1].transpose()];
    let sample = kr_leverage_sample_with(&factors, count, seed, &opts.sampler)?;
    let op = sample.op;
    let k = factors[0].nrows();
    let bd = Mat::from_fn(k, op.len(), |r, s| {
        let p = &sample.factor_indices[s];
        op.weights[s] * factors[0][(r, p[0])] * factors[1][(r, p[1])]
    });
    let raw = a.flattening_columns(mode, &op.indices)?;
    let mut p = pinv(&bd);
    for s in 0..op.len() {
        p.row_mut(s).scale_mut(op.weights[s]);
    }
    Ok((op, raw, p))
}

fn curt_trial(a: &Tensor3, f: &FactorTriple, d: usize, seed: u64, opts: &CurtOptions) -> Result<(CurtResult, f64)> {
    let (op1, cmat, p1) = curt_mode(a, 1, [&f.v, &f.w], d, derive_seed(seed, 1), opts)?;
    let uh = &cmat * &p1;
    let (op2, rmat, p2) = curt_mode(a, 2, [&f.w, &uh], d, derive_seed(seed, 2), opts)?;
    let vh = &rmat * &p2;
    let (op3, tmat, p3) = curt_mode(a, 3, [&uh, &vh], d, derive_seed(seed, 3), opts)?;
    let wh = &tmat * &p3;
    let cost = residual_fro2(a, &FactorTriple { u: uh, v: vh, w: wh })?;
    let res = CurtResult {
        col_idx: op1.indices,
        col_weights: op1.weights,
        row_idx: op2.indices,
        row_weights: op2.weights,
        tube_idx: op3.indices,
        tube_weights: op3.weights,
        cmat,
        rmat,
        tmat,
        p1,
        p2,
        p3,
        cost_fro2: cost,
        trial: 0,
    };
    Ok((res, cost))
}

/// Default per-mode sample count `⌈c(k ln k + k/ε)⌉`.
pub fn curt_budget(k: usize, eps: f64, opts: &CurtOptions) -> usize {
    sample_budget(k, crate::fro_lra::clamp_eps(eps), opts.budget_constant)
}

/// CURT from a rank-`k` factorization `f` of `a`, best over `opts.trials` seeds.
pub fn curt_decompose(a: &Tensor3, f: &FactorTriple, eps: f64, seed: u64, opts: &CurtOptions) -> Result<CurtResult> {
    if f.dims() != a.dims() {
        return shape_err(format!("factor dims {:?} vs tensor dims {:?}", f.dims(), a.dims()));
    }
    if f.rank() == 0 {
        return Err(Error::InvalidParam("CURT needs a factorization of rank at least 1".into()));
    }
    if opts.trials == 0 {
        return Err(Error::InvalidParam("trials must be at least 1".into()));
    }
    let d = curt_budget(f.rank(), eps, opts);
    let runs = map_indexed(opts.trials, |t| curt_trial(a, f, d, trial_seed(seed, t), opts));
    let mut best: Option<CurtResult> = None;
    for (t, r) in runs.into_iter().enumerate() {
        let (mut res, cost) = r?;
        res.trial = t;
        if best.as_ref().is_none_or(|b| cost < b.cost_fro2) {
            best = Some(res);
        }
    }
    Ok(best.expect("at least one trial"))
}

/// Matrix CUR `M ≈ C·U·R` with actual columns and rows of `M`.
#[derive(Clone, Debug)]
pub struct CurResult {
    pub col_idx: Vec<usize>,
    pub col_weights: Vec<f64>,
    pub row_idx: Vec<usize>,
    pub row_weights: Vec<f64>,
    /// Raw columns of `M`, `rows × c`.
    pub c: Mat,
    /// Raw rows of `M`, `r × cols`.
    pub r: Mat,
    /// Core `c × r` of rank at most `k`.
    pub u: Mat,
    pub cost_fro2: f64,
}

impl CurResult {
    pub fn approximation(&self) -> Mat {
        &self.c * &self.u * &self.r
    }
}

/// Rows selected by [`generalized_row_subset`].
#[derive(Clone, Debug)]
pub struct RowSubset {
    pub op: SamplingOperator,
    /// Raw selected rows of `M`.
    pub rows: Mat,
    /// `k × r` with `C·Y·R ≈ M`.
    pub y: Mat,
}

/// Sample `⌈c(k ln k + k/ε)⌉` rows of `M` by the leverage scores of `C` and solve
/// the sampled regression: `Y = (D C)^† D` restricted to the sampled rows.
pub fn generalized_row_subset(m: &Mat, c: &Mat, eps: f64, seed: u64) -> Result<RowSubset> {
    if m.nrows() != c.nrows() {
        return shape_err(format!("M has {} rows, C has {}", m.nrows(), c.nrows()));
    }
    let k = c.ncols().max(1);
    let count = sample_budget(k, crate::fro_lra::clamp_eps(eps), BUDGET_CONSTANT);
    let lev = leverage_scores(c);
    let op = sample_operator(&lev, count, seed, SampleMode::L2)?;
    let dc = op.select_rows(c);
    let mut y = pinv(&dc);
    for s in 0..op.len() {
        y.column_mut(s).scale_mut(op.weights[s]);
    }
    let rows = Mat::from_fn(op.len(), m.ncols(), |s, j| m[(op.indices[s], j)]);
    Ok(RowSubset { op, rows, y })
}

/// Orthonormal `n × k` basis close to the top-`k` left singular space, from a
/// composed sketch of the rows of `M`.
pub fn sketched_rank_k_basis(m: &Matrix, k: usize, eps: f64, seed: u64) -> Result<Mat> {
    let (rows, cols) = m.shape();
    let params = AlgoParams::new(k, eps, seed);
    let s = params.default_sketch_dim();
    let spec = SketchSpec::composed(cols, params.inner_dim(s), s, derive_seed(seed, 61));
    let z = spec.realize()?.apply_right(m)?;
    let q = orth_basis(&z);
    let qtm = q.transpose() * m.to_dense();
    let top = top_left_singular(&qtm, k);
    let basis = &q * top;
    Ok(if basis.ncols() == 0 { Mat::zeros(rows, 0) } else { basis })
}

/// CUR in input-sparsity time for the sketching step.
pub fn matrix_cur(m: &Matrix, k: usize, eps: f64, seed: u64) -> Result<CurResult> {
    let (n, d) = m.shape();
    if k == 0 || k > n.min(d) {
        return Err(Error::InvalidParam(format!("k = {k} must be in 1..={}", n.min(d))));
    }
    let dense = m.to_dense();
    let uh = sketched_rank_k_basis(m, k, eps, seed)?;
    if uh.ncols() == 0 {
        return Err(Error::Degenerate("matrix is numerically zero".into()));
    }
    let rs = generalized_row_subset(&dense, &uh, eps, derive_seed(seed, 62))?;
    let row_space = (&rs.y * &rs.rows).transpose();
    let cs = generalized_row_subset(&dense.transpose(), &row_space, eps, derive_seed(seed, 63))?;
    let c = cs.rows.transpose();
    let u = cs.y.transpose() * &rs.y;
    let cost = fro2(&(&c * &u * &rs.rows - &dense));
    Ok(CurResult {
        col_idx: cs.op.indices,
        col_weights: cs.op.weights,
        row_idx: rs.op.indices,
        row_weights: rs.op.weights,
        c,
        r: rs.rows,
        u,
        cost_fro2: cost,
    })
}

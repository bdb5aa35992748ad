//! Entrywise ℓ1 low-rank approximation: IRLS regression, Lewis-weight size
//! reduction and the Cauchy-sketch bicriteria solver.

use crate::error::{shape_err, Error, Result};
use crate::fro_lra::{quadratic_factors, reduce_with_maps, trial_seed, ReducedProblem};
use crate::linalg::{pinv, Mat};
use crate::par::map_indexed;
use crate::rng::derive_seed;
use crate::sampling::{lewis_weights, sample_operator, SampleMode, SamplingOperator};
use crate::sketch::SketchSpec;
use crate::tensor::{residual_l1, FactorTriple, ModeMap, Tensor3};

/// Cauchy sketch family for the column sketches.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CauchyKind {
    Dense,
    Sparse,
}

/// Largest default sparse Cauchy dimension.
pub const SPARSE_CAUCHY_CAP: usize = 4096;

#[derive(Clone, Debug)]
pub struct L1Params {
    pub k: usize,
    pub sketch: CauchyKind,
    pub sketch_dims: Option<[usize; 2]>,
    /// Lewis-weight samples per reduced mode are `⌈factor · b ln(b+1)⌉`.
    pub lewis_factor: f64,
    pub lewis_iters: usize,
    pub irls: IrlsOptions,
    pub trials: usize,
    pub seed: u64,
}

impl L1Params {
    pub fn new(k: usize, seed: u64) -> Self {
        L1Params {
            k,
            sketch: CauchyKind::Dense,
            sketch_dims: None,
            lewis_factor: 20.0,
            lewis_iters: 40,
            irls: IrlsOptions::default(),
            trials: 3,
            seed,
        }
    }

    /// `⌈4k ln(k+1)⌉` for dense Cauchy, `⌈4k⁵⌉` (capped) for sparse Cauchy.
    pub fn default_sketch_dim(&self) -> usize {
        let k = self.k as f64;
        match self.sketch {
            CauchyKind::Dense => (4.0 * k * (k + 1.0).ln()).ceil().max(1.0) as usize,
            CauchyKind::Sparse => (4.0 * k.powi(5)).ceil().clamp(1.0, SPARSE_CAUCHY_CAP as f64) as usize,
        }
    }

    pub fn sketch_dims(&self) -> [usize; 2] {
        self.sketch_dims.unwrap_or([self.default_sketch_dim(); 2])
    }

    /// Lewis-weight sample count for a basis with `b` columns.
    pub fn lewis_count(&self, b: usize) -> usize {
        let b = b.max(1) as f64;
        (self.lewis_factor * b * (b + 1.0).ln()).ceil() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidParam("k must be at least 1".into()));
        }
        if self.trials == 0 {
            return Err(Error::InvalidParam("trials must be at least 1".into()));
        }
        if !(self.lewis_factor > 0.0) {
            return Err(Error::InvalidParam("Lewis sample factor must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct IrlsOptions {
    pub iters: usize,
    /// Final smoothing relative to the mean absolute target entry.
    pub delta_min: f64,
    /// Re-solve on the smallest residuals after IRLS and keep the better point.
    pub polish: bool,
}

impl Default for IrlsOptions {
    fn default() -> Self {
        IrlsOptions { iters: 50, delta_min: 1e-8, polish: true }
    }
}

/// Row-separable ℓ1 regression result.
#[derive(Clone, Debug)]
pub struct L1Fit {
    /// `d × k` coefficients.
    pub w: Mat,
    /// `Σ_rows ‖w_row B − c_row‖₁`.
    pub objective: f64,
}

/// One row's solution with the smoothed objective after every IRLS update.
#[derive(Clone, Debug)]
pub struct RowFit {
    pub w: Vec<f64>,
    pub objective: f64,
    pub history: Vec<f64>,
}

fn row_residual(b: &Mat, c: &[f64], w: &[f64]) -> Vec<f64> {
    (0..b.ncols())
        .map(|j| {
            let mut s = 0.0;
            for r in 0..b.nrows() {
                s += w[r] * b[(r, j)];
            }
            s - c[j]
        })
        .collect()
}

fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// Weighted lower median of `values` with nonnegative `weights`.
pub fn weighted_median(values: &[f64], weights: &[f64]) -> f64 {
    let mut order: Vec<usize> = (0..values.len()).filter(|&i| weights[i] > 0.0).collect();
    if order.is_empty() {
        return 0.0;
    }
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let total: f64 = order.iter().map(|&i| weights[i]).sum();
    let mut acc = 0.0;
    for &i in &order {
        acc += weights[i];
        if 2.0 * acc >= total {
            return values[i];
        }
    }
    values[*order.last().unwrap()]
}

/// Design `B` re-expressed through an orthonormal basis `Q` of its row space:
/// `w·B = v·Q` with `w = v·back`.
struct L1Design {
    q: Mat,
    back: Mat,
    /// Right inverse of `back` when `B` has full row rank.
    fwd: Option<Mat>,
    k: usize,
    kron: Option<KronDesign>,
}

/// `B[b·s1 + a, i·t2 + j] = Y1[i, a] · Y2[j, b]`.
struct KronDesign {
    y1: Mat,
    y2: Mat,
    /// Row `i` holds `vec(Y1[i, :]ᵀ Y1[i, :])`.
    outer1: Mat,
    /// Row `j` holds `vec(Y2[j, :]ᵀ Y2[j, :])`.
    outer2: Mat,
}

fn row_outer_products(y: &Mat) -> Mat {
    let s = y.ncols();
    Mat::from_fn(y.nrows(), s * s, |i, c| y[(i, c % s)] * y[(i, c / s)])
}

impl KronDesign {
    fn new(y1: &Mat, y2: &Mat) -> Self {
        KronDesign { y1: y1.clone(), y2: y2.clone(), outer1: row_outer_products(y1), outer2: row_outer_products(y2) }
    }

    /// `B·diag(ω)·Bᵀ` and `B·(ω ∘ c)` without forming `B`.
    fn weighted_normal(&self, c: &[f64], omega: &[f64]) -> (Mat, Vec<f64>) {
        let (t1, s1) = self.y1.shape();
        let (t2, s2) = self.y2.shape();
        let k = s1 * s2;
        let w = Mat::from_fn(t1, t2, |i, j| omega[i * t2 + j]);
        let x = Mat::from_fn(t1, t2, |i, j| omega[i * t2 + j] * c[i * t2 + j]);
        // entry (a + s1·a', b + s2·b') of `mixed` is G[b·s1 + a, b'·s1 + a']
        let mixed = self.outer1.tr_mul(&(w * &self.outer2));
        let g = Mat::from_fn(k, k, |row, col| {
            let (a, b, aa, bb) = (row % s1, row / s1, col % s1, col / s1);
            mixed[(a + s1 * aa, b + s2 * bb)]
        });
        let proj = self.y1.transpose() * x * &self.y2;
        let rhs = (0..k).map(|row| proj[(row % s1, row / s1)]).collect();
        (g, rhs)
    }
}

impl L1Design {
    fn new(b: &Mat) -> Self {
        let (k, m) = b.shape();
        if k == 0 || m == 0 {
            return L1Design { q: Mat::zeros(0, m), back: Mat::zeros(0, k), fwd: None, k, kron: None };
        }
        let svd = b.transpose().svd(true, true);
        let u = svd.u.unwrap();
        let vt = svd.v_t.unwrap();
        let sv = &svd.singular_values;
        let cut = crate::linalg::sv_cutoff(sv.iter().cloned().fold(0.0, f64::max), k, m);
        let keep: Vec<usize> = (0..sv.len()).filter(|&i| sv[i] > cut && sv[i] > 0.0).collect();
        let q = Mat::from_fn(keep.len(), m, |r, j| u[(j, keep[r])]);
        let back = Mat::from_fn(keep.len(), k, |r, a| vt[(keep[r], a)] / sv[keep[r]]);
        let fwd = (keep.len() == k).then(|| Mat::from_fn(k, k, |a, r| vt[(keep[r], a)] * sv[keep[r]]));
        L1Design { q, back, fwd, k, kron: None }
    }

    fn with_kron(mut self, y1: &Mat, y2: &Mat) -> Self {
        self.kron = Some(KronDesign::new(y1, y2));
        self
    }

    fn rank(&self) -> usize {
        self.q.nrows()
    }

    fn fitted(&self, v: &[f64]) -> Vec<f64> {
        self.q.tr_mul(&nalgebra::DVector::from_column_slice(v)).iter().cloned().collect()
    }

    fn residual(&self, c: &[f64], v: &[f64]) -> Vec<f64> {
        self.fitted(v).iter().zip(c).map(|(f, c)| f - c).collect()
    }

    fn weights_of(&self, v: &[f64]) -> Vec<f64> {
        (0..self.k).map(|a| v.iter().enumerate().map(|(r, vr)| vr * self.back[(r, a)]).sum()).collect()
    }

    fn weighted_ls(&self, c: &[f64], omega: &[f64]) -> Vec<f64> {
        let (g, rhs) = match &self.kron {
            Some(kd) => {
                let (gb, rb) = kd.weighted_normal(c, omega);
                let rb = nalgebra::DVector::from_vec(rb);
                if let (Some(fwd), Some(ch)) = (&self.fwd, gb.clone().cholesky()) {
                    let x = ch.solve(&rb);
                    return (fwd.transpose() * x).iter().cloned().collect();
                }
                let g = &self.back * gb * self.back.transpose();
                (g, &self.back * rb)
            }
            None => {
                let (r, m) = self.q.shape();
                let scaled = Mat::from_fn(r, m, |a, j| self.q[(a, j)] * omega[j]);
                let g = &scaled * self.q.transpose();
                (g, &scaled * nalgebra::DVector::from_column_slice(c))
            }
        };
        let sol = match g.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => pinv(&g) * rhs,
        };
        sol.iter().cloned().collect()
    }

    /// Interpolate the targets with the smallest residuals on an independent set of columns.
    fn polish(&self, c: &[f64], v: &[f64]) -> Option<Vec<f64>> {
        let r = self.rank();
        let res = self.residual(c, v);
        let mut order: Vec<usize> = (0..res.len()).collect();
        order.sort_by(|&x, &y| res[x].abs().total_cmp(&res[y].abs()).then(x.cmp(&y)));
        let mut ortho: Vec<Vec<f64>> = Vec::with_capacity(r);
        let mut chosen = Vec::with_capacity(r);
        for &j in &order {
            if chosen.len() == r {
                break;
            }
            let mut col: Vec<f64> = (0..r).map(|a| self.q[(a, j)]).collect();
            let norm0 = col.iter().map(|x| x * x).sum::<f64>().sqrt();
            for o in &ortho {
                let d: f64 = o.iter().zip(&col).map(|(a, b)| a * b).sum();
                col.iter_mut().zip(o).for_each(|(x, y)| *x -= d * y);
            }
            let norm = col.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-8 * norm0.max(f64::MIN_POSITIVE) {
                col.iter_mut().for_each(|x| *x /= norm);
                ortho.push(col);
                chosen.push(j);
            }
        }
        if chosen.len() < r || r == 0 {
            return None;
        }
        let sub = Mat::from_fn(r, r, |a, s| self.q[(a, chosen[s])]);
        let target = nalgebra::DVector::from_fn(r, |s, _| c[chosen[s]]);
        let sol = sub.transpose().lu().solve(&target)?;
        Some(sol.iter().cloned().collect())
    }

    fn solve_row(&self, b: &Mat, c: &[f64], opts: &IrlsOptions) -> RowFit {
        let m = c.len();
        if self.k == 1 {
            let (vals, wts): (Vec<f64>, Vec<f64>) = (0..m)
                .map(|j| if b[(0, j)] != 0.0 { (c[j] / b[(0, j)], b[(0, j)].abs()) } else { (0.0, 0.0) })
                .unzip();
            let w = vec![weighted_median(&vals, &wts)];
            let objective = l1(&row_residual(b, c, &w));
            return RowFit { w, objective, history: Vec::new() };
        }
        if self.rank() == 0 {
            return RowFit { w: vec![0.0; self.k], objective: l1(c), history: Vec::new() };
        }
        let scale = (l1(c) / m.max(1) as f64).max(f64::MIN_POSITIVE);
        let mut v = self.weighted_ls(c, &vec![1.0; m]);
        let mut r = self.residual(c, &v);
        let floor = opts.delta_min * scale;
        let mut delta = (l1(&r) / m.max(1) as f64).max(floor);
        let mut history = Vec::with_capacity(opts.iters);
        let smoothed = |r: &[f64], d: f64| r.iter().map(|x| (x * x + d * d).sqrt()).sum::<f64>();
        for _ in 0..opts.iters {
            let omega: Vec<f64> = r.iter().map(|x| 1.0 / (x * x + delta * delta).sqrt()).collect();
            let next = self.weighted_ls(c, &omega);
            let rn = self.residual(c, &next);
            if smoothed(&rn, delta) <= smoothed(&r, delta) {
                v = next;
                r = rn;
            }
            history.push(smoothed(&r, delta));
            delta = (delta * 0.5).max(floor);
        }
        let mut objective = l1(&r);
        if opts.polish {
            if let Some(p) = self.polish(c, &v) {
                let po = l1(&self.residual(c, &p));
                if po < objective {
                    v = p;
                    objective = po;
                }
            }
        }
        RowFit { w: self.weights_of(&v), objective, history }
    }
}

/// `min_w ‖w·B − c‖₁` for one row by iteratively reweighted least squares.
///
/// Each update minimizes the quadratic majorizer of `Σ_j √(r_j² + δ²)`, and δ
/// shrinks geometrically, so the recorded smoothed objective is nonincreasing.
/// With one unknown the exact weighted median is returned instead.
pub fn l1_regression_row(b: &Mat, c: &[f64], opts: &IrlsOptions) -> RowFit {
    L1Design::new(b).solve_row(b, c, opts)
}

/// `min_W ‖W·B − C‖₁` with `B` of shape `k × m` and `C` of shape `d × m`, row by row.
pub fn l1_regression(b: &Mat, c: &Mat) -> Result<L1Fit> {
    l1_regression_with(b, c, &IrlsOptions::default())
}

pub fn l1_regression_with(b: &Mat, c: &Mat, opts: &IrlsOptions) -> Result<L1Fit> {
    solve_rows(L1Design::new(b), b, c, opts)
}

fn solve_rows(design: L1Design, b: &Mat, c: &Mat, opts: &IrlsOptions) -> Result<L1Fit> {
    if b.ncols() != c.ncols() {
        return shape_err(format!("B has {} columns, C has {}", b.ncols(), c.ncols()));
    }
    let rows = map_indexed(c.nrows(), |i| {
        let row: Vec<f64> = c.row(i).iter().cloned().collect();
        design.solve_row(b, &row, opts)
    });
    let mut w = Mat::zeros(c.nrows(), b.nrows());
    let mut objective = 0.0;
    for (i, r) in rows.into_iter().enumerate() {
        for (a, v) in r.w.into_iter().enumerate() {
            w[(i, a)] = v;
        }
        objective += r.objective;
    }
    Ok(L1Fit { w, objective })
}

/// ℓ1 Lewis-weight sampling operator on the rows of `v`.
pub fn lewis_sampler(v: &Mat, count: usize, iters: usize, seed: u64) -> Result<SamplingOperator> {
    let lw = lewis_weights_any(v, iters)?;
    sample_operator(&lw, count, seed, SampleMode::Lp(1.0))
}

fn lewis_weights_any(v: &Mat, iters: usize) -> Result<Vec<f64>> {
    if v.nrows() >= v.ncols() {
        return Ok(lewis_weights(v, 1.0, iters)?.weights);
    }
    // more columns than rows: every nonzero row is essential
    Ok((0..v.nrows()).map(|i| if v.row(i).iter().any(|x| *x != 0.0) { 1.0 } else { 0.0 }).collect())
}

/// Reduce with ℓ1 Lewis-weight samplers of each `V_t` (unmerged, so each mode
/// has exactly the configured number of samples).
pub fn l1_reduce(a: &Tensor3, v: [&Mat; 3], params: &L1Params) -> Result<ReducedProblem> {
    params.validate()?;
    let ops: Vec<SamplingOperator> = (0..3)
        .map(|t| lewis_sampler(v[t], params.lewis_count(v[t].ncols()), params.lewis_iters, derive_seed(params.seed, 70 + t as u64)))
        .collect::<Result<_>>()?;
    let maps: [&dyn ModeMap; 3] = [&ops[0], &ops[1], &ops[2]];
    reduce_with_maps(a, v, maps)
}

/// Reduced ℓ1 objective `‖(Y1X1) ⊗ (Y2X2) ⊗ (Y3X3) − C‖₁`.
pub fn reduced_l1_objective(rp: &ReducedProblem, x: [&Mat; 3]) -> Result<f64> {
    let f = FactorTriple::new(&rp.y[0] * x[0], &rp.y[1] * x[1], &rp.y[2] * x[2])?;
    residual_l1(&rp.c, &f)
}

/// ℓ1 fit of rank `s1·s2` with its entrywise cost on the input.
#[derive(Clone, Debug)]
pub struct L1BicriteriaFit {
    pub factors: FactorTriple,
    pub cost_l1: f64,
    pub trial: usize,
}

fn cauchy_spec(kind: CauchyKind, input: usize, output: usize, seed: u64) -> SketchSpec {
    match kind {
        CauchyKind::Dense => SketchSpec::cauchy_dense(input, output, seed),
        CauchyKind::Sparse => SketchSpec::cauchy_sparse(input, output, seed),
    }
}

fn l1_trial(a: &Tensor3, p: &L1Params, ts: u64) -> Result<(FactorTriple, f64)> {
    let dims = a.dims();
    let s = p.sketch_dims();
    let mut z = Vec::with_capacity(2);
    for mode in 1..=2 {
        let (_, cols) = Tensor3::flat_shape(dims, mode);
        let spec = cauchy_spec(p.sketch, cols, s[mode - 1], derive_seed(ts, 80 + mode as u64));
        z.push(spec.realize()?.apply_right_flattening(a, mode)?);
    }
    let ops: Vec<SamplingOperator> = (0..2)
        .map(|t| {
            lewis_sampler(&z[t], p.lewis_count(z[t].ncols()), p.lewis_iters, derive_seed(ts, 90 + t as u64))
                .map(|o| o.merged_l1())
        })
        .collect::<Result<_>>()?;
    let id = SamplingOperator::identity(dims[2]);
    let maps: [&dyn ModeMap; 3] = [&ops[0], &ops[1], &id];
    let eye = Mat::identity(dims[2], dims[2]);
    let rp = reduce_with_maps(a, [&z[0], &z[1], &eye], maps)?;
    // design row (b·s1 + a) is Y1[:, a] ⊗ Y2[:, b] over reduced columns i·t2 + j
    let (y1, y2) = (&rp.y[0], &rp.y[1]);
    let (t1, t2) = (y1.nrows(), y2.nrows());
    let design = Mat::from_fn(s[0] * s[1], t1 * t2, |row, col| {
        let (ia, ib) = (row % s[0], row / s[0]);
        y1[(col / t2, ia)] * y2[(col % t2, ib)]
    });
    let target = rp.c.flatten(3)?.to_dense();
    let fit = solve_rows(L1Design::new(&design).with_kron(y1, y2), &design, &target, &p.irls)?;
    let mut core = vec![0.0; s[0] * s[1] * dims[2]];
    for l in 0..dims[2] {
        for b in 0..s[1] {
            for aa in 0..s[0] {
                core[(aa * s[1] + b) * dims[2] + l] = fit.w[(l, b * s[0] + aa)];
            }
        }
    }
    let core = Tensor3::from_dense([s[0], s[1], dims[2]], core)?;
    let f = quadratic_factors(&z[0], &z[1], &core);
    let cost = residual_l1(a, &f)?;
    Ok((f, cost))
}

/// Bicriteria ℓ1 solution of rank `s1·s2`, best over `params.trials` seeds.
pub fn l1_bicriteria(a: &Tensor3, params: &L1Params) -> Result<L1BicriteriaFit> {
    params.validate()?;
    let runs: Vec<Result<(FactorTriple, f64)>> =
        (0..params.trials).map(|t| l1_trial(a, params, trial_seed(params.seed, t))).collect();
    let mut best: Option<L1BicriteriaFit> = None;
    for (t, r) in runs.into_iter().enumerate() {
        let (factors, cost) = r?;
        if best.as_ref().is_none_or(|b| cost < b.cost_l1) {
            best = Some(L1BicriteriaFit { factors, cost_l1: cost, trial: t });
        }
    }
    Ok(best.expect("at least one trial"))
}

/// Exact small-scale ℓ1 regression for one row: some optimum interpolates
/// `rank(B)` targets, so enumerate all column subsets of that size.
pub fn l1_regression_row_exact(b: &Mat, c: &[f64]) -> (Vec<f64>, f64) {
    let (k, m) = b.shape();
    let rank = crate::linalg::numerical_rank(b);
    let mut best = (vec![0.0; k], l1(c));
    let mut idx: Vec<usize> = (0..rank).collect();
    if rank == 0 || rank > m {
        return best;
    }
    loop {
        let sub = Mat::from_fn(k, rank, |a, s| b[(a, idx[s])]);
        if crate::linalg::numerical_rank(&sub) == rank {
            let target = Mat::from_fn(1, rank, |_, s| c[idx[s]]);
            let w: Vec<f64> = (target * pinv(&sub)).iter().cloned().collect();
            let obj = l1(&row_residual(b, c, &w));
            if obj < best.1 {
                best = (w, obj);
            }
        }
        // next combination in lexicographic order
        let mut i = rank;
        while i > 0 && idx[i - 1] == m - rank + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return best;
        }
        idx[i - 1] += 1;
        for j in i..rank {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

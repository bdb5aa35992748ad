//! Frobenius-norm low-rank approximation: size reduction, tensor regression,
//! bicriteria solvers and an alternating least squares rank-`k` solver.

use crate::error::{shape_err, Error, Result};
use crate::linalg::{fro2, full_left_basis, khatri_rao_rows, pinv, top_left_singular, Mat};
use crate::par::map_indexed;
use crate::rng::{derive_seed, gaussian_at};
use crate::sketch::{SketchOp, SketchSpec, TensorSketchOp, HASH_INDEPENDENCE, SIGN_INDEPENDENCE};
use crate::tensor::{residual_fro2, FactorTriple, ImplicitKR, Matrix, ModeMap, Tensor3, TuckerModel};

/// Largest reduced tensor (entries) the default reduction dimensions may produce.
pub const MAX_REDUCED_ENTRIES: usize = 1 << 26;
/// Largest TensorSketch dimension the regression picks on its own.
pub const MAX_REGRESSION_SKETCH: usize = 1 << 22;

/// How the quadratic bicriteria solver fits the third factor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Approach {
    /// TensorSketch multiple regression against the mode-3 flattening.
    TensorSketch,
    /// Regression on the CountSketch-reduced problem.
    Reduced,
}

#[derive(Clone, Debug)]
pub struct AlgoParams {
    pub k: usize,
    pub eps: f64,
    /// Column sketch sizes per mode; default `⌈4k/ε⌉ + 4`.
    pub sketch_dims: Option<[usize; 3]>,
    /// Reduction sizes per mode. Explicit values always use CountSketch.
    pub reduce_dims: Option<[usize; 3]>,
    /// CountSketch stage size inside the composed sketches.
    pub inner_dim: Option<usize>,
    /// TensorSketch size for the regression route.
    pub regression_dim: Option<usize>,
    pub trials: usize,
    pub restarts: usize,
    pub sweeps: usize,
    pub approach: Approach,
    /// Hash-family degrees `(w1, w2)` of the column and reduction sketches.
    pub independence: Option<[usize; 2]>,
    pub seed: u64,
}

impl AlgoParams {
    pub fn new(k: usize, eps: f64, seed: u64) -> Self {
        AlgoParams {
            k,
            eps,
            sketch_dims: None,
            reduce_dims: None,
            inner_dim: None,
            regression_dim: None,
            trials: 9,
            restarts: 8,
            sweeps: 100,
            approach: Approach::Reduced,
            independence: None,
            seed,
        }
    }

    pub fn with_trials(mut self, trials: usize) -> Self {
        self.trials = trials;
        self
    }

    /// ε restricted to the open unit interval.
    pub fn eps(&self) -> f64 {
        clamp_eps(self.eps)
    }

    /// Degree of the column sketches' hash families, default `2k + 2`.
    pub fn w1(&self) -> usize {
        self.independence.map(|w| w[0]).unwrap_or(2 * self.k + 2).max(2)
    }

    /// Sign-hash degree of the reduction sketches, default 4.
    pub fn w2(&self) -> usize {
        self.independence.map(|w| w[1]).unwrap_or(SIGN_INDEPENDENCE).max(2)
    }

    pub fn default_sketch_dim(&self) -> usize {
        (4.0 * self.k as f64 / self.eps()).ceil() as usize + 4
    }

    pub fn sketch_dims(&self) -> [usize; 3] {
        self.sketch_dims.unwrap_or([self.default_sketch_dim(); 3])
    }

    pub fn default_reduce_dim(&self) -> usize {
        let r = self.k as f64 / self.eps();
        (10.0 * r * r).ceil() as usize
    }

    pub fn inner_dim(&self, sketch_dim: usize) -> usize {
        self.inner_dim.unwrap_or_else(|| {
            let k = self.k as f64;
            (2 * sketch_dim).max((2.0 * (k * k + k / self.eps())).ceil() as usize)
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidParam("trials must be at least 1".into()));
        }
        if !self.eps.is_finite() {
            return Err(Error::InvalidParam("eps must be finite".into()));
        }
        for s in self.sketch_dims.iter().flatten().chain(self.reduce_dims.iter().flatten()) {
            if *s < self.k.max(1) {
                return Err(Error::InvalidParam(format!("dimension {s} smaller than k = {}", self.k)));
            }
        }
        Ok(())
    }
}

/// Clamp ε into `(0, 1)`, warning when the input was outside.
pub fn clamp_eps(eps: f64) -> f64 {
    const LO: f64 = 1e-3;
    const HI: f64 = 0.999;
    if !(LO..=HI).contains(&eps) {
        log::warn!("eps {eps} outside (0, 1); clamped");
    }
    eps.clamp(LO, HI)
}

/// `trial`-th independent seed under a root seed.
pub fn trial_seed(root: u64, trial: usize) -> u64 {
    derive_seed(root, trial as u64)
}

/// Seed of the column sketch for mode `t` (0-based) in a trial.
pub fn column_sketch_seed(trial_seed: u64, t: usize) -> u64 {
    derive_seed(trial_seed, 10 + t as u64)
}

/// Seed of the reduction sketch for mode `t` (0-based) in a trial.
pub fn reduce_sketch_seed(trial_seed: u64, t: usize) -> u64 {
    derive_seed(trial_seed, 20 + t as u64)
}

pub fn als_seed(trial_seed: u64) -> u64 {
    derive_seed(trial_seed, 30)
}

/// Composed column sketch for the mode-`mode` flattening of a tensor with `dims`.
pub fn column_sketch(dims: [usize; 3], mode: usize, params: &AlgoParams, trial_seed: u64) -> SketchSpec {
    let (_, cols) = Tensor3::flat_shape(dims, mode);
    let s = params.sketch_dims()[mode - 1];
    SketchSpec::composed(cols, params.inner_dim(s), s, column_sketch_seed(trial_seed, mode - 1))
        .with_independence(params.w1(), params.w1())
}

/// Reduction sketches for the given modes: CountSketch, or identity when the
/// default dimension reaches `n_t`.
pub fn reduce_sketches(dims: [usize; 3], modes: [bool; 3], params: &AlgoParams, trial_seed: u64) -> [SketchSpec; 3] {
    let mut t = [0usize; 3];
    let explicit = params.reduce_dims.is_some();
    for m in 0..3 {
        t[m] = match params.reduce_dims {
            Some(d) => d[m],
            None if modes[m] => params.default_reduce_dim().min(dims[m]),
            None => dims[m],
        };
    }
    if !explicit {
        let active: Vec<usize> = (0..3).filter(|&m| modes[m] && t[m] < dims[m]).collect();
        let total = |t: &[usize; 3]| t.iter().product::<usize>();
        if total(&t) > MAX_REDUCED_ENTRIES && !active.is_empty() {
            let fixed: usize = (0..3).filter(|m| !active.contains(m)).map(|m| t[m]).product();
            let per = ((MAX_REDUCED_ENTRIES / fixed.max(1)) as f64).powf(1.0 / active.len() as f64).floor() as usize;
            log::warn!("reduction dims {t:?} capped to {per} per sketched mode");
            for &m in &active {
                t[m] = t[m].min(per.max(params.k.max(1)));
            }
        }
    }
    std::array::from_fn(|m| {
        if !modes[m] || (!explicit && t[m] >= dims[m]) {
            SketchSpec::identity(dims[m])
        } else {
            SketchSpec::countsketch(dims[m], t[m], reduce_sketch_seed(trial_seed, m))
                .with_independence(HASH_INDEPENDENCE, params.w2())
        }
    })
}

/// `Π·V` for a mode map `Π` given by basis images.
pub fn map_left(map: &dyn ModeMap, v: &Mat) -> Result<Mat> {
    if map.in_dim() != v.nrows() {
        return shape_err(format!("map input {} vs matrix rows {}", map.in_dim(), v.nrows()));
    }
    let mut out = Mat::zeros(map.out_dim(), v.ncols());
    let mut imgs = Vec::new();
    for i in 0..v.nrows() {
        imgs.clear();
        map.images(i, &mut imgs);
        for &(o, w) in &imgs {
            for c in 0..v.ncols() {
                out[(o, c)] += w * v[(i, c)];
            }
        }
    }
    Ok(out)
}

/// Reduced objective `‖(Y1 X1) ⊗ (Y2 X2) ⊗ (Y3 X3) − C‖²`.
#[derive(Clone, Debug)]
pub struct ReducedProblem {
    pub y: [Mat; 3],
    pub c: Tensor3,
    /// Seeds of the reduction sketches that produced `y` and `c`.
    pub seeds: [u64; 3],
}

impl ReducedProblem {
    pub fn new(y: [Mat; 3], c: Tensor3, seeds: [u64; 3]) -> Result<Self> {
        let d = c.dims();
        for t in 0..3 {
            if y[t].nrows() != d[t] {
                return shape_err(format!("Y{} has {} rows, C dim {}", t + 1, y[t].nrows(), d[t]));
            }
        }
        Ok(ReducedProblem { y, c, seeds })
    }

    /// Objective value at `(X1, X2, X3)`.
    pub fn objective(&self, x: [&Mat; 3]) -> Result<f64> {
        let f = FactorTriple::new(&self.y[0] * x[0], &self.y[1] * x[1], &self.y[2] * x[2])?;
        residual_fro2(&self.c, &f)
    }
}

/// `Y_t = T_t V_t` and `C = A(T1, T2, T3)` with sketches derived from `params.seed`.
pub fn reduce_problem(a: &Tensor3, v: [&Mat; 3], params: &AlgoParams) -> Result<ReducedProblem> {
    let specs = reduce_sketches(a.dims(), [true; 3], params, params.seed);
    reduce_with(a, v, &specs)
}

/// Reduce with explicit sketch specs.
pub fn reduce_with(a: &Tensor3, v: [&Mat; 3], specs: &[SketchSpec; 3]) -> Result<ReducedProblem> {
    let ops: Vec<SketchOp> = specs.iter().map(|s| s.realize()).collect::<Result<_>>()?;
    let maps: [&dyn ModeMap; 3] = [&ops[0], &ops[1], &ops[2]];
    let mut rp = reduce_with_maps(a, v, maps)?;
    rp.seeds = [specs[0].seed, specs[1].seed, specs[2].seed];
    Ok(rp)
}

/// Reduce with arbitrary mode maps (sketches or sampling operators).
pub fn reduce_with_maps(a: &Tensor3, v: [&Mat; 3], maps: [&dyn ModeMap; 3]) -> Result<ReducedProblem> {
    for t in 0..3 {
        if v[t].nrows() != a.dims()[t] {
            return shape_err(format!("V{} has {} rows, tensor dim {}", t + 1, v[t].nrows(), a.dims()[t]));
        }
    }
    let y = [map_left(maps[0], v[0])?, map_left(maps[1], v[1])?, map_left(maps[2], v[2])?];
    let c = a.mode_apply_maps([Some(maps[0]), Some(maps[1]), Some(maps[2])])?;
    ReducedProblem::new(y, c, [0; 3])
}

/// Default TensorSketch size `⌈8(k² + k/ε)⌉` for a regression over `k` columns.
pub fn regression_sketch_dim(k: usize, eps: f64) -> usize {
    let k = k as f64;
    (8.0 * (k * k + k / clamp_eps(eps))).ceil() as usize
}

/// `min_W ‖W·(Uᵀ ⊙ Vᵀ) − A‖` by sketching both sides with a TensorSketch.
///
/// `a_flat` is `d × (n_a·n_b)` with column `i·n_b + j`.
pub fn tensor_multiple_regression(a_flat: &Matrix, u: &Mat, v: &Mat, eps: f64, seed: u64) -> Result<Mat> {
    tensor_multiple_regression_dim(a_flat, u, v, regression_sketch_dim(u.ncols(), eps), seed)
}

pub fn tensor_multiple_regression_dim(a_flat: &Matrix, u: &Mat, v: &Mat, m: usize, seed: u64) -> Result<Mat> {
    let (d, cols) = a_flat.shape();
    if u.ncols() != v.ncols() || cols != u.nrows() * v.nrows() {
        return shape_err(format!(
            "regression target {}x{} vs factors {}x{} and {}x{}",
            d,
            cols,
            u.nrows(),
            u.ncols(),
            v.nrows(),
            v.ncols()
        ));
    }
    let spec = SketchSpec::tensorsketch(vec![u.nrows(), v.nrows()], m, seed);
    let ts = TensorSketchOp::new(&spec)?;
    let as_ = ts.apply_rows(a_flat)?;
    let bs = ts.apply_kr(&ImplicitKR::new(vec![u.transpose(), v.transpose()])?)?;
    Ok(as_ * pinv(&bs))
}

/// A fitted model with its squared Frobenius cost on the input.
#[derive(Clone, Debug)]
pub struct Fit {
    pub factors: FactorTriple,
    pub cost_fro2: f64,
    /// Index of the winning trial.
    pub trial: usize,
}

/// Relative slack under which two costs count as tied.
pub const TIE_RTOL: f64 = 1e-9;

/// Index of the first cost within `TIE_RTOL·min + abs_tol` of the minimum, so
/// the choice is stable under round-off.
pub fn stable_argmin(costs: &[f64], abs_tol: f64) -> Option<usize> {
    let min = costs.iter().cloned().filter(|c| !c.is_nan()).fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return if costs.is_empty() { None } else { Some(0) };
    }
    costs.iter().position(|&c| c <= min + TIE_RTOL * min.abs() + abs_tol)
}

fn best_of<T>(results: Vec<Result<(T, f64)>>, abs_tol: f64) -> Result<(T, f64, usize)> {
    let mut vals = Vec::with_capacity(results.len());
    for r in results {
        vals.push(r?);
    }
    let costs: Vec<f64> = vals.iter().map(|v| v.1).collect();
    let i = stable_argmin(&costs, abs_tol).ok_or_else(|| Error::InvalidParam("no trials run".into()))?;
    let (v, c) = vals.swap_remove(i);
    Ok((v, c, i))
}

/// Absolute tie tolerance for costs on a tensor of squared norm `norm2`.
pub fn tie_atol(norm2: f64) -> f64 {
    1e-12 * norm2
}

/// Column sketches `A_t S_t` for the listed modes (1-based).
pub fn sketched_flattenings(a: &Tensor3, modes: &[usize], params: &AlgoParams, ts: u64) -> Result<Vec<Mat>> {
    modes
        .iter()
        .map(|&m| column_sketch(a.dims(), m, params, ts).realize()?.apply_right_flattening(a, m))
        .collect()
}

/// Orthonormal bases spanning the column spaces of `A_t S_t`, one column per sketch column.
pub fn sketched_bases(a: &Tensor3, modes: &[usize], params: &AlgoParams, ts: u64) -> Result<Vec<Mat>> {
    Ok(sketched_flattenings(a, modes, params, ts)?.iter().map(full_left_basis).collect())
}

/// Expand a core `s1 × s2 × n3` on bases `(B1, B2)` into rank `s1·s2` factors,
/// column `b·s1 + a` holding `B1[:, a] ⊗ B2[:, b] ⊗ core[a, b, :]`.
pub fn quadratic_factors(b1: &Mat, b2: &Mat, core: &Tensor3) -> FactorTriple {
    let [s1, s2, n3] = core.dims();
    let r = s1 * s2;
    let mut u = Mat::zeros(b1.nrows(), r);
    let mut v = Mat::zeros(b2.nrows(), r);
    let mut w = Mat::zeros(n3, r);
    for b in 0..s2 {
        for a in 0..s1 {
            let col = b * s1 + a;
            u.set_column(col, &b1.column(a));
            v.set_column(col, &b2.column(b));
            for l in 0..n3 {
                w[(l, col)] = core.get(a, b, l);
            }
        }
    }
    FactorTriple { u, v, w }
}

fn quadratic_trial(a: &Tensor3, params: &AlgoParams, ts: u64) -> Result<(FactorTriple, f64)> {
    let z = sketched_bases(a, &[1, 2], params, ts)?;
    let [_, _, n3] = a.dims();
    match params.approach {
        Approach::Reduced => {
            let specs = reduce_sketches(a.dims(), [true, true, false], params, ts);
            let rp = reduce_with(a, [&z[0], &z[1], &Mat::identity(n3, n3)], &specs)?;
            let p1 = pinv(&rp.y[0]).transpose();
            let p2 = pinv(&rp.y[1]).transpose();
            let core = rp.c.mode_apply([Some(&p1), Some(&p2), None])?;
            let tucker = TuckerModel { core, bases: [z[0].clone(), z[1].clone(), Mat::identity(n3, n3)] };
            let cost = tucker.residual(a, crate::tensor::Norm::Fro)?.powi(2);
            Ok((quadratic_factors(&z[0], &z[1], &tucker.core), cost))
        }
        Approach::TensorSketch => {
            let [s1, s2, _] = params.sketch_dims();
            let r = s1 * s2;
            let m = params.regression_dim.unwrap_or_else(|| regression_sketch_dim(r, params.eps()));
            if m > MAX_REGRESSION_SKETCH {
                return Err(Error::InvalidParam(format!(
                    "regression sketch size {m} too large; use the reduced approach or set it explicitly"
                )));
            }
            let uh = Mat::from_fn(z[0].nrows(), r, |i, c| z[0][(i, c % s1)]);
            let vh = Mat::from_fn(z[1].nrows(), r, |j, c| z[1][(j, c / s1)]);
            let w = tensor_multiple_regression_dim(&a.flatten(3)?, &uh, &vh, m, derive_seed(ts, 40))?;
            let f = FactorTriple::new(uh, vh, w)?;
            let cost = residual_fro2(a, &f)?;
            Ok((f, cost))
        }
    }
}

/// Bicriteria solution of rank `s1·s2`, best over `params.trials` seeds.
pub fn bicriteria_quadratic(a: &Tensor3, params: &AlgoParams) -> Result<Fit> {
    params.validate()?;
    let results = map_indexed(params.trials, |t| quadratic_trial(a, params, trial_seed(params.seed, t)));
    let (factors, _, trial) = best_of(results, tie_atol(a.fro_norm2()))?;
    let cost_fro2 = residual_fro2(a, &factors)?;
    Ok(Fit { factors, cost_fro2, trial })
}

/// Singular values below this fraction of the largest are dropped from the
/// sketched bases.
pub const BASIS_RTOL: f64 = 1e-10;

/// `M` (`s × r`) such that `Y·M` has orthonormal columns spanning the numerical
/// column space of `Y`.
pub fn orthonormalizing_map(y: &Mat) -> Mat {
    let (t, s) = y.shape();
    if t == 0 || s == 0 {
        return Mat::zeros(s, 0);
    }
    let svd = y.clone().svd(false, true);
    let vt = svd.v_t.unwrap();
    let sv = &svd.singular_values;
    let top = sv.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..sv.len()).filter(|&i| sv[i] > BASIS_RTOL * top && sv[i] > 0.0).collect();
    Mat::from_fn(s, keep.len(), |a, c| vt[(keep[c], a)] / sv[keep[c]])
}

fn orthonormal_problem(rp: &ReducedProblem) -> ([Mat; 3], ReducedProblem) {
    let maps: [Mat; 3] = std::array::from_fn(|t| orthonormalizing_map(&rp.y[t]));
    let y: [Mat; 3] = std::array::from_fn(|t| &rp.y[t] * &maps[t]);
    (maps, ReducedProblem { y, c: rp.c.clone(), seeds: rp.seeds })
}

/// Coefficient tensor `α = C(Y1^†ᵀ, Y2^†ᵀ, Y3^†ᵀ)` of the reduced Tucker regression.
pub fn tucker_coefficients(rp: &ReducedProblem) -> Result<Tensor3> {
    let p: Vec<Mat> = rp.y.iter().map(|y| pinv(y).transpose()).collect();
    rp.c.mode_apply([Some(&p[0]), Some(&p[1]), Some(&p[2])])
}

/// Tucker regression on a reduced problem whose `Y_t = T_t Z_t`; the result is
/// `core ×_t (Z_t M_t)`, padded with zeros to `s1 × s2 × s3`.
pub fn solve_cubic(rp: &ReducedProblem) -> Result<(Tensor3, [Mat; 3])> {
    let (maps, orp) = orthonormal_problem(rp);
    let q: Vec<Mat> = orp.y.to_vec();
    let core = rp.c.mode_apply([Some(&q[0]), Some(&q[1]), Some(&q[2])])?;
    let s: [usize; 3] = std::array::from_fn(|t| rp.y[t].ncols());
    let r = core.dims();
    let padded = Tensor3::from_fn(s, |a, b, c| if a < r[0] && b < r[1] && c < r[2] { core.get(a, b, c) } else { 0.0 });
    let pmaps: [Mat; 3] = std::array::from_fn(|t| {
        Mat::from_fn(s[t], s[t], |i, j| if j < maps[t].ncols() { maps[t][(i, j)] } else { 0.0 })
    });
    Ok((padded, pmaps))
}

/// Rank-`k` ALS on the orthonormalized reduced problem; returns `X_t` in the
/// coordinates of the original `Y_t`.
pub fn solve_rank_k(rp: &ReducedProblem, k: usize, restarts: usize, sweeps: usize, seed: u64) -> Result<([Mat; 3], f64)> {
    let (maps, orp) = orthonormal_problem(rp);
    if maps.iter().any(|m| m.ncols() == 0) {
        let x: [Mat; 3] = std::array::from_fn(|t| Mat::zeros(rp.y[t].ncols(), k));
        return Ok((x, rp.c.fro_norm2()));
    }
    let als = rank_k_als(&orp, k, restarts, sweeps, seed)?;
    let x: [Mat; 3] = std::array::from_fn(|t| &maps[t] * &als.x[t]);
    Ok((x, als.objective))
}

/// Cubic bicriteria model from raw sketches `Z_t = A_t S_t` and the reduced problem.
pub fn cubic_from_sketches(z: &[Mat; 3], rp: &ReducedProblem) -> Result<TuckerModel> {
    let (core, maps) = solve_cubic(rp)?;
    let bases: [Mat; 3] = std::array::from_fn(|t| &z[t] * &maps[t]);
    Ok(TuckerModel { core, bases })
}

/// Rank-`k` factors from raw sketches `Z_t = A_t S_t` and the reduced problem.
pub fn rank_k_from_sketches(z: &[Mat; 3], rp: &ReducedProblem, params: &AlgoParams, ts: u64) -> Result<FactorTriple> {
    let (x, _) = solve_rank_k(rp, params.k, params.restarts, params.sweeps, als_seed(ts))?;
    FactorTriple::new(&z[0] * &x[0], &z[1] * &x[1], &z[2] * &x[2])
}

/// Raw sketches and reduced problem of one trial.
pub fn sketch_trial(a: &Tensor3, params: &AlgoParams, ts: u64) -> Result<([Mat; 3], ReducedProblem)> {
    let z = sketched_flattenings(a, &[1, 2, 3], params, ts)?;
    let specs = reduce_sketches(a.dims(), [true; 3], params, ts);
    let rp = reduce_with(a, [&z[0], &z[1], &z[2]], &specs)?;
    let z: [Mat; 3] = z.try_into().expect("three modes");
    Ok((z, rp))
}

/// One cubic trial at trial seed `ts`.
pub fn cubic_single(a: &Tensor3, params: &AlgoParams, ts: u64) -> Result<TuckerModel> {
    let (z, rp) = sketch_trial(a, params, ts)?;
    cubic_from_sketches(&z, &rp)
}

/// One rank-`k` trial at trial seed `ts`.
pub fn rank_k_single(a: &Tensor3, params: &AlgoParams, ts: u64) -> Result<FactorTriple> {
    let (z, rp) = sketch_trial(a, params, ts)?;
    rank_k_from_sketches(&z, &rp, params, ts)
}

fn cubic_trial(a: &Tensor3, params: &AlgoParams, ts: u64) -> Result<(TuckerModel, f64)> {
    let tucker = cubic_single(a, params, ts)?;
    let cost = tucker.residual(a, crate::tensor::Norm::Fro)?.powi(2);
    Ok((tucker, cost))
}

/// Tucker form of the cubic bicriteria solution, best over trials.
pub fn bicriteria_cubic_tucker(a: &Tensor3, params: &AlgoParams) -> Result<(TuckerModel, f64, usize)> {
    params.validate()?;
    let results = map_indexed(params.trials, |t| cubic_trial(a, params, trial_seed(params.seed, t)));
    best_of(results, tie_atol(a.fro_norm2()))
}

/// Bicriteria solution of rank `s1·s2·s3`.
pub fn bicriteria_cubic(a: &Tensor3, params: &AlgoParams) -> Result<Fit> {
    let (tucker, _, trial) = bicriteria_cubic_tucker(a, params)?;
    let factors = tucker.to_factors();
    let cost_fro2 = residual_fro2(a, &factors)?;
    Ok(Fit { factors, cost_fro2, trial })
}

/// Result of the alternating least squares inner solve.
#[derive(Clone, Debug)]
pub struct AlsOutcome {
    pub x: [Mat; 3],
    pub objective: f64,
    pub restart: usize,
    /// Objective after every half-sweep of the winning restart.
    pub history: Vec<f64>,
}

struct AlsData {
    flat: [Mat; 3],
    ypinv: [Mat; 3],
}

fn other_modes(m: usize) -> (usize, usize) {
    match m {
        0 => (1, 2),
        1 => (2, 0),
        _ => (0, 1),
    }
}

/// Update `X_m` in place; returns the objective from Gram identities,
/// `‖C‖² − 2⟨P, C_m Kᵀ⟩ + ⟨G, PᵀP⟩` with `P = Y_m X_m`.
fn als_update(rp: &ReducedProblem, d: &AlsData, x: &mut [Mat; 3], m: usize, c2: f64) -> f64 {
    let (a, b) = other_modes(m);
    let pa = &rp.y[a] * &x[a];
    let pb = &rp.y[b] * &x[b];
    let kr = khatri_rao_rows(&[&pa.transpose(), &pb.transpose()]);
    let gram = (pa.transpose() * &pa).component_mul(&(pb.transpose() * &pb));
    let mttkrp = &d.flat[m] * kr.transpose();
    x[m] = &d.ypinv[m] * &mttkrp * pinv(&gram);
    let p = &rp.y[m] * &x[m];
    let cross = p.component_mul(&mttkrp).sum();
    let quad = gram.component_mul(&(p.transpose() * &p)).sum();
    (c2 - 2.0 * cross + quad).max(0.0)
}

fn als_exact_objective(rp: &ReducedProblem, d: &AlsData, x: &[Mat; 3]) -> f64 {
    let pa = &rp.y[1] * &x[1];
    let pb = &rp.y[2] * &x[2];
    let kr = khatri_rao_rows(&[&pa.transpose(), &pb.transpose()]);
    fro2(&(&rp.y[0] * &x[0] * &kr - &d.flat[0]))
}

fn hosvd_init(rp: &ReducedProblem, d: &AlsData, k: usize, seed: u64) -> [Mat; 3] {
    std::array::from_fn(|m| {
        let proj = &d.ypinv[m] * &d.flat[m];
        let g = &proj * proj.transpose();
        let top = top_left_singular(&g, k);
        let s = rp.y[m].ncols();
        Mat::from_fn(s, k, |i, c| if c < top.ncols() { top[(i, c)] } else { gaussian_at(seed, (m * s + i) as u64, c as u64) })
    })
}

fn random_init(rp: &ReducedProblem, k: usize, seed: u64) -> [Mat; 3] {
    std::array::from_fn(|m| {
        let s = rp.y[m].ncols();
        let ms = derive_seed(seed, m as u64);
        Mat::from_fn(s, k, |i, c| gaussian_at(ms, i as u64, c as u64))
    })
}

/// Alternating least squares over `(X1, X2, X3)` on the reduced objective.
///
/// Restart 0 starts from the leading singular vectors of each projected
/// flattening, the others from Gaussian matrices. Each half-sweep solves its
/// least squares subproblem exactly, so the objective never increases. Runs a
/// fixed number of sweeps (fewer only on an exact fit) so the output depends
/// continuously on the input.
pub fn rank_k_als(rp: &ReducedProblem, k: usize, restarts: usize, sweeps: usize, seed: u64) -> Result<AlsOutcome> {
    let s: [usize; 3] = std::array::from_fn(|m| rp.y[m].ncols());
    if k == 0 {
        let x: [Mat; 3] = std::array::from_fn(|m| Mat::zeros(s[m], 0));
        return Ok(AlsOutcome { x, objective: rp.c.fro_norm2(), restart: 0, history: Vec::new() });
    }
    let flat: [Mat; 3] = [rp.c.flatten(1)?.to_dense(), rp.c.flatten(2)?.to_dense(), rp.c.flatten(3)?.to_dense()];
    let ypinv: [Mat; 3] = std::array::from_fn(|m| pinv(&rp.y[m]));
    let d = AlsData { flat, ypinv };
    let c2 = rp.c.fro_norm2();
    let runs = map_indexed(restarts.max(1), |r| {
        let rs = derive_seed(seed, r as u64);
        let mut x = if r == 0 { hosvd_init(rp, &d, k, rs) } else { random_init(rp, k, rs) };
        let mut history = Vec::with_capacity(3 * sweeps);
        for _ in 0..sweeps {
            let mut obj = 0.0;
            for m in 0..3 {
                obj = als_update(rp, &d, &mut x, m, c2);
                history.push(obj);
            }
            if obj <= 1e-12 * c2 && als_exact_objective(rp, &d, &x) <= 1e-28 * c2 {
                break;
            }
        }
        let obj = als_exact_objective(rp, &d, &x);
        (x, obj, history)
    });
    let costs: Vec<f64> = runs.iter().map(|r| r.1).collect();
    let r = stable_argmin(&costs, tie_atol(c2)).unwrap_or(0);
    let (x, objective, history) = runs.into_iter().nth(r).expect("restart exists");
    Ok(AlsOutcome { x, objective, restart: r, history })
}

fn rank_k_trial(a: &Tensor3, params: &AlgoParams, ts: u64) -> Result<(FactorTriple, f64)> {
    let f = rank_k_single(a, params, ts)?;
    let cost = residual_fro2(a, &f)?;
    Ok((f, cost))
}

/// Rank-`k` factors: sketch, reduce, solve by ALS, expand.
pub fn fro_rank_k(a: &Tensor3, params: &AlgoParams) -> Result<Fit> {
    params.validate()?;
    if params.k == 0 {
        let factors = FactorTriple::zeros(a.dims(), 0);
        return Ok(Fit { factors, cost_fro2: a.fro_norm2(), trial: 0 });
    }
    let results = map_indexed(params.trials, |t| rank_k_trial(a, params, trial_seed(params.seed, t)));
    let (factors, cost_fro2, trial) = best_of(results, tie_atol(a.fro_norm2()))?;
    Ok(Fit { factors, cost_fro2, trial })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planted::{planted_cp, planted_with_noise};
    use proptest::prelude::*;

    fn rand_mat(r: usize, c: usize, seed: u64) -> Mat {
        Mat::from_fn(r, c, |i, j| gaussian_at(seed, i as u64, j as u64))
    }

    fn rand_tensor(n: [usize; 3], seed: u64) -> Tensor3 {
        Tensor3::from_fn(n, |i, j, l| gaussian_at(seed, i as u64, (j * n[2] + l) as u64))
    }

    #[test]
    fn default_dims() {
        let p = AlgoParams::new(5, 0.5, 0);
        assert_eq!(p.default_sketch_dim(), 44);
        assert_eq!(p.default_reduce_dim(), 1000);
        assert_eq!(p.inner_dim(44), 88);
    }

    #[test]
    fn eps_is_clamped() {
        assert_eq!(clamp_eps(2.0), 0.999);
        assert_eq!(clamp_eps(0.0), 1e-3);
        assert_eq!(clamp_eps(0.5), 0.5);
    }

    #[test]
    fn forced_identity_reduction_is_exact() {
        let a = rand_tensor([3, 4, 5], 1);
        let v: Vec<Mat> = (0..3).map(|t| rand_mat(a.dims()[t], 2, 10 + t as u64)).collect();
        let specs: [SketchSpec; 3] = std::array::from_fn(|t| {
            let n = a.dims()[t];
            SketchSpec::countsketch(n, n, 5).with_forced_tables((0..n).collect(), vec![1.0; n]).unwrap()
        });
        let rp = reduce_with(&a, [&v[0], &v[1], &v[2]], &specs).unwrap();
        assert_eq!(rp.c, a);
        for t in 0..3 {
            assert_eq!(rp.y[t], v[t]);
        }
    }

    #[test]
    fn zero_tensor_reduces_to_zero() {
        let a = Tensor3::zeros([6, 6, 6]);
        let v = rand_mat(6, 2, 1);
        let mut p = AlgoParams::new(1, 0.5, 3);
        p.reduce_dims = Some([4, 4, 4]);
        let rp = reduce_problem(&a, [&v, &v, &v], &p).unwrap();
        assert_eq!(rp.c.fro_norm2(), 0.0);
        assert_eq!(rp.c.dims(), [4, 4, 4]);
    }

    #[test]
    fn reduction_preserves_cost() {
        let (k, eps) = (1usize, 0.5);
        let t = (40.0 * (k * k) as f64 / (eps * eps)).ceil() as usize;
        let n = 20;
        let a = rand_tensor([n; 3], 2);
        let mut good = 0;
        for seed in 0..100u64 {
            let v: Vec<Mat> = (0..3).map(|m| rand_mat(n, 3, 1000 * seed + m)).collect();
            let x: Vec<Mat> = (0..3).map(|m| rand_mat(3, k, 5000 * seed + m)).collect();
            let mut p = AlgoParams::new(k, eps, seed);
            p.reduce_dims = Some([t; 3]);
            let rp = reduce_problem(&a, [&v[0], &v[1], &v[2]], &p).unwrap();
            let reduced = rp.objective([&x[0], &x[1], &x[2]]).unwrap();
            let f = FactorTriple::new(&v[0] * &x[0], &v[1] * &x[1], &v[2] * &x[2]).unwrap();
            let original = residual_fro2(&a, &f).unwrap();
            if (reduced - original).abs() <= eps * original {
                good += 1;
            }
        }
        assert!(good >= 90, "{good}");
    }

    #[test]
    fn regression_consistent_system() {
        let (u, v) = (rand_mat(5, 2, 1), rand_mat(4, 2, 2));
        let w0 = rand_mat(3, 2, 3);
        let b = khatri_rao_rows(&[&u.transpose(), &v.transpose()]);
        let a = &w0 * &b;
        let w = tensor_multiple_regression(&Matrix::Dense(a.clone()), &u, &v, 0.5, 7).unwrap();
        assert!(fro2(&(&w * &b - &a)).sqrt() <= 1e-8 * fro2(&a).sqrt());
        let z = tensor_multiple_regression(&Matrix::Dense(Mat::zeros(3, 20)), &u, &v, 0.5, 7).unwrap();
        assert_eq!(fro2(&z), 0.0);
    }

    #[test]
    fn regression_near_optimal() {
        let (d, n, k) = (10, 8, 2);
        let mut good = 0;
        for seed in 0..100u64 {
            let u = rand_mat(n, k, 3 * seed);
            let v = rand_mat(n, k, 3 * seed + 1);
            let a = rand_mat(d, n * n, 3 * seed + 2);
            let b = khatri_rao_rows(&[&u.transpose(), &v.transpose()]);
            // normal equations on the materialized design
            let exact = &a * b.transpose() * (&b * b.transpose()).try_inverse().unwrap();
            let w = tensor_multiple_regression(&Matrix::Dense(a.clone()), &u, &v, 0.5, seed).unwrap();
            let opt = fro2(&(&exact * &b - &a));
            let got = fro2(&(&w * &b - &a));
            if got <= 1.5 * opt {
                good += 1;
            }
        }
        assert!(good >= 90, "{good}");
    }

    #[test]
    fn quadratic_exact_recovery_and_rank() {
        let a = planted_cp([40; 3], 4, 11);
        let mut ok = 0;
        for seed in 0..10 {
            let p = AlgoParams::new(4, 0.5, seed).with_trials(1);
            let fit = bicriteria_quadratic(&a, &p).unwrap();
            assert_eq!(fit.factors.rank(), 36 * 36);
            if fit.cost_fro2.sqrt() <= 1e-6 * a.fro_norm() {
                ok += 1;
            }
        }
        assert!(ok >= 9, "{ok}");
    }

    #[test]
    fn quadratic_columns_in_sketched_span() {
        let a = rand_tensor([8, 7, 6], 3);
        let p = AlgoParams::new(1, 0.5, 2).with_trials(1);
        let fit = bicriteria_quadratic(&a, &p).unwrap();
        let z = sketched_flattenings(&a, &[1], &p, trial_seed(2, 0)).unwrap();
        let proj = &z[0] * pinv(&z[0]) * &fit.factors.u;
        assert!(fro2(&(proj - &fit.factors.u)) <= 1e-18 * fro2(&fit.factors.u).max(1.0));
        assert!(fit.cost_fro2 <= a.fro_norm2() * (1.0 + 1e-12));
    }

    #[test]
    fn quadratic_tensorsketch_route_small() {
        let a = planted_cp([6; 3], 1, 4);
        let mut p = AlgoParams::new(1, 0.9, 1).with_trials(1);
        p.approach = Approach::TensorSketch;
        p.sketch_dims = Some([2, 2, 2]);
        let fit = bicriteria_quadratic(&a, &p).unwrap();
        assert_eq!(fit.factors.rank(), 4);
        assert!(fit.cost_fro2.sqrt() <= 1e-6 * a.fro_norm());
    }

    #[test]
    fn quadratic_planted_noise() {
        let inst = planted_with_noise([60; 3], 5, 0.1, 21);
        let p = AlgoParams::new(5, 0.5, 4);
        let fit = bicriteria_quadratic(&inst.tensor, &p).unwrap();
        assert!(fit.cost_fro2 <= 1.5 * inst.noise_fro2, "{} vs {}", fit.cost_fro2, inst.noise_fro2);
    }

    #[test]
    fn cubic_exact_recovery() {
        let a = planted_cp([12; 3], 2, 5);
        let p = AlgoParams::new(2, 0.8, 1).with_trials(1);
        let fit = bicriteria_cubic(&a, &p).unwrap();
        let s = p.default_sketch_dim();
        assert_eq!(fit.factors.rank(), s * s * s);
        assert!(fit.cost_fro2.sqrt() <= 1e-6 * a.fro_norm());
    }

    #[test]
    fn cubic_coefficients_match_normal_equations() {
        let a = rand_tensor([4; 3], 9);
        let mut p = AlgoParams::new(1, 0.5, 3).with_trials(1);
        p.sketch_dims = Some([2; 3]);
        let ts = trial_seed(3, 0);
        let z = sketched_bases(&a, &[1, 2, 3], &p, ts).unwrap();
        let specs = reduce_sketches(a.dims(), [true; 3], &p, ts);
        let rp = reduce_with(&a, [&z[0], &z[1], &z[2]], &specs).unwrap();
        let alpha = tucker_coefficients(&rp).unwrap();
        // materialized design: one column per (a, b, c), one row per entry of C
        let [t1, t2, t3] = rp.c.dims();
        let design = Mat::from_fn(t1 * t2 * t3, 8, |row, col| {
            let (i, j, l) = (row / (t2 * t3), (row / t3) % t2, row % t3);
            let (x, y, w) = (col / 4, (col / 2) % 2, col % 2);
            rp.y[0][(i, x)] * rp.y[1][(j, y)] * rp.y[2][(l, w)]
        });
        let target = Mat::from_fn(t1 * t2 * t3, 1, |row, _| rp.c.get(row / (t2 * t3), (row / t3) % t2, row % t3));
        let dtd = design.transpose() * &design;
        let sol = dtd.try_inverse().unwrap() * design.transpose() * target;
        for col in 0..8 {
            let got = alpha.get(col / 4, (col / 2) % 2, col % 2);
            assert!((got - sol[(col, 0)]).abs() <= 1e-8 * (1.0 + sol[(col, 0)].abs()), "{got} {}", sol[(col, 0)]);
        }
        let fit = bicriteria_cubic(&a, &p).unwrap();
        assert!(fit.cost_fro2 <= a.fro_norm2() * (1.0 + 1e-12));
    }

    fn consistent_problem(k: usize, seed: u64) -> ReducedProblem {
        let y: [Mat; 3] = std::array::from_fn(|m| rand_mat(6, 4, seed + m as u64));
        let x: [Mat; 3] = std::array::from_fn(|m| rand_mat(4, k, seed + 10 + m as u64));
        let f = FactorTriple::new(&y[0] * &x[0], &y[1] * &x[1], &y[2] * &x[2]).unwrap();
        ReducedProblem::new(y, f.eval(), [0; 3]).unwrap()
    }

    #[test]
    fn als_recovers_consistent_model() {
        let rp = consistent_problem(2, 1);
        let out = rank_k_als(&rp, 2, 8, 500, 3).unwrap();
        assert!(out.objective.sqrt() <= 1e-6 * rp.c.fro_norm(), "{}", out.objective);
    }

    #[test]
    fn als_half_sweeps_monotone() {
        let mut rp = consistent_problem(3, 5);
        rp.c = rp.c.axpy(0.3, &rand_tensor([6; 3], 99)).unwrap();
        let out = rank_k_als(&rp, 2, 4, 100, 1).unwrap();
        for w in out.history.windows(2) {
            assert!(w[1] <= w[0] + 1e-10, "{} > {}", w[1], w[0]);
        }
        let again = rp.objective([&out.x[0], &out.x[1], &out.x[2]]).unwrap();
        assert!((again - out.objective).abs() <= 1e-9 * again.max(1e-300));
    }

    #[test]
    fn als_beats_random_search() {
        let c = rand_tensor([3; 3], 42);
        let y: [Mat; 3] = std::array::from_fn(|m| rand_mat(3, 2, 70 + m as u64));
        let rp = ReducedProblem::new(y, c, [0; 3]).unwrap();
        let out = rank_k_als(&rp, 1, 200, 300, 8).unwrap();
        let mut best = f64::INFINITY;
        for s in 0..1_000_000u64 {
            let x: [Mat; 3] = std::array::from_fn(|m| Mat::from_fn(2, 1, |i, _| gaussian_at(s, m as u64, i as u64)));
            // optimal scale of the rank-one direction is closed form
            let f = FactorTriple::new(&rp.y[0] * &x[0], &rp.y[1] * &x[1], &rp.y[2] * &x[2]).unwrap();
            let e = f.eval();
            let mut dot = 0.0;
            let mut nn = 0.0;
            e.for_each_nonzero(|i, j, l, v| {
                dot += v * rp.c.get(i, j, l);
                nn += v * v;
            });
            if nn > 0.0 {
                best = best.min(rp.c.fro_norm2() - dot * dot / nn);
            }
        }
        assert!(out.objective <= 1.01 * best, "{} vs {best}", out.objective);
    }

    #[test]
    fn rank_k_exact_recovery() {
        let a = planted_cp([30; 3], 3, 7);
        let mut ok = 0;
        for seed in 0..10 {
            let p = AlgoParams::new(3, 0.5, seed).with_trials(1);
            let fit = fro_rank_k(&a, &p).unwrap();
            assert_eq!(fit.factors.rank(), 3);
            if fit.cost_fro2.sqrt() <= 1e-4 * a.fro_norm() {
                ok += 1;
            }
        }
        assert!(ok >= 8, "{ok}");
    }

    #[test]
    fn rank_zero_is_zero_model() {
        let a = rand_tensor([4, 5, 6], 1);
        let fit = fro_rank_k(&a, &AlgoParams::new(0, 0.5, 1)).unwrap();
        assert_eq!(fit.factors.rank(), 0);
        assert_eq!(fit.cost_fro2, a.fro_norm2());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn prop_bicriteria_never_worse_than_zero(seed in any::<u64>(), n in 3usize..7) {
            let a = rand_tensor([n, n + 1, n + 2], seed);
            let p = AlgoParams::new(1, 0.5, seed).with_trials(1);
            let q = bicriteria_quadratic(&a, &p).unwrap();
            prop_assert!(q.cost_fro2 <= a.fro_norm2() * (1.0 + 1e-9));
        }

        #[test]
        fn prop_reduction_matches_flattening_sketch(seed in any::<u64>()) {
            let a = rand_tensor([5, 4, 3], seed);
            let v = [rand_mat(5, 2, 1), rand_mat(4, 2, 2), rand_mat(3, 2, 3)];
            let mut p = AlgoParams::new(1, 0.5, seed);
            p.reduce_dims = Some([3, 3, 2]);
            let rp = reduce_problem(&a, [&v[0], &v[1], &v[2]], &p).unwrap();
            let specs = reduce_sketches(a.dims(), [true; 3], &p, p.seed);
            let t: Vec<Mat> = specs.iter().map(|s| s.materialize()).collect();
            let dense = a.mode_apply([Some(&t[0].transpose()), Some(&t[1].transpose()), Some(&t[2].transpose())]).unwrap();
            let diff = rp.c.axpy(-1.0, &dense).unwrap();
            prop_assert!(diff.fro_norm() <= 1e-12 * (1.0 + a.fro_norm()));
        }
    }
}

//! Acceptance suite at desk scale: ten criteria, each a property checked on
//! planted or random instances with tolerances fixed below.

use crate::curt::{curt_budget, curt_decompose, matrix_cur, sample_budget, CurtOptions, BUDGET_CONSTANT};
use crate::distsim::{distsim_run, expected_words, random_split, DistOptions};
use crate::error::Result;
use crate::fro_lra::{bicriteria_cubic, bicriteria_quadratic, column_sketch, fro_rank_k, reduce_sketches, trial_seed, AlgoParams};
use crate::l1_lra::{l1_bicriteria, l1_regression_row, l1_regression_row_exact, IrlsOptions, L1Params};
use crate::linalg::{khatri_rao_rows, numerical_rank, Mat};
use crate::planted::{planted_with_noise, planted_with_outliers};
use crate::rng::{derive_seed, gaussian_at};
use crate::sampling::{kr_leverage_distribution_exact, kr_leverage_sample, leverage_scores, lewis_weights};
use crate::sketch::{tensorsketch_apply_rows, SketchSpec};
use crate::streaming::{accumulate, FinalizeMode, StreamState, Update};
use crate::tensor::{residual_fro2, residual_l1, FactorTriple, ImplicitKR, Matrix, Tensor3};
use serde::Serialize;
use std::time::Instant;

pub const A1_REL_RESIDUAL: f64 = 1e-6;
pub const A1_MIN_SUCCESSES: usize = 9;
pub const A1_SECONDS_PER_RUN: f64 = 5.0;
pub const A2_EPS: f64 = 0.5;
pub const A2_SECONDS: f64 = 30.0;
pub const A3_EPS: f64 = 0.5;
pub const A3_DELTA: f64 = 0.1;
pub const A3_MIN_SUCCESSES: usize = 85;
pub const A3_SECONDS: f64 = 10.0;
pub const A4_MAX_TV: f64 = 0.05;
pub const A4_SAMPLES: usize = 100_000;
pub const A4_SECONDS: f64 = 30.0;
pub const A5_FACTOR: f64 = 1.5;
pub const A5_MIN_SUCCESSES: usize = 8;
pub const A5_SECONDS: f64 = 10.0;
pub const A6_FACTOR: f64 = 1.5;
pub const A6_SECONDS: f64 = 60.0;
pub const A7_OUTLIER_FACTOR: f64 = 3.0;
pub const A7_MIN_SUCCESSES: usize = 7;
pub const A7_IRLS_FACTOR: f64 = 1.02;
pub const A7_SECONDS: f64 = 60.0;
pub const A8_REL_TOL: f64 = 1e-9;
pub const A8_SECONDS: f64 = 5.0;
pub const A9_REL_TOL: f64 = 1e-9;
pub const A9_SECONDS: f64 = 10.0;
pub const A10_LEWIS_RESIDUAL: f64 = 1e-6;
pub const A10_LEVERAGE_SUM: f64 = 1e-8;
pub const A10_SECONDS: f64 = 5.0;

/// Outcome of one criterion.
#[derive(Clone, Debug, Serialize)]
pub struct Criterion {
    pub id: String,
    pub name: String,
    pub passed: bool,
    pub elapsed_ms: u64,
    pub time_limit_ms: u64,
    pub metrics: serde_json::Value,
}

impl Criterion {
    fn new(id: &str, name: &str, ok: bool, start: Instant, limit_s: f64, metrics: serde_json::Value) -> Self {
        let elapsed_ms = start.elapsed().as_millis() as u64;
        let time_limit_ms = (limit_s * 1000.0) as u64;
        Criterion {
            id: id.into(),
            name: name.into(),
            passed: ok && elapsed_ms < time_limit_ms,
            elapsed_ms,
            time_limit_ms,
            metrics,
        }
    }

    /// One-line summary.
    pub fn line(&self) -> String {
        format!(
            "{} {} {} ({} ms, limit {} ms) {}",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.elapsed_ms,
            self.time_limit_ms,
            self.metrics
        )
    }
}

fn rel_diff(a: &Mat, b: &Mat) -> f64 {
    let d = (a - b).norm();
    if d == 0.0 {
        0.0
    } else {
        d / b.norm()
    }
}

/// Largest factor-wise relative difference.
pub fn factor_rel_diff(a: &FactorTriple, b: &FactorTriple) -> f64 {
    if a.rank() != b.rank() || a.dims() != b.dims() {
        return f64::INFINITY;
    }
    rel_diff(&a.u, &b.u).max(rel_diff(&a.v, &b.v)).max(rel_diff(&a.w, &b.w))
}

fn gaussian_mat(r: usize, c: usize, seed: u64) -> Mat {
    Mat::from_fn(r, c, |i, j| gaussian_at(seed, i as u64, j as u64))
}

/// Exact low-rank recovery with the quadratic bicriteria solver.
pub fn a1_exact_recovery(seed: u64) -> Result<Criterion> {
    let start = Instant::now();
    let mut per_k = Vec::new();
    let mut ok = true;
    let mut slowest = 0.0f64;
    for k in [1usize, 3, 5] {
        let mut successes = 0;
        let mut worst = 0.0f64;
        for s in 0..10u64 {
            let inst_seed = derive_seed(seed, 100 * k as u64 + s);
            let inst = planted_with_noise([40; 3], k, 0.0, inst_seed);
            let t0 = Instant::now();
            let fit = bicriteria_quadratic(&inst.tensor, &AlgoParams::new(k, 0.5, derive_seed(inst_seed, 1)))?;
            slowest = slowest.max(t0.elapsed().as_secs_f64());
            let rel = (fit.cost_fro2 / inst.tensor.fro_norm2()).sqrt();
            worst = worst.max(rel);
            if rel <= A1_REL_RESIDUAL {
                successes += 1;
            }
        }
        ok &= successes >= A1_MIN_SUCCESSES;
        per_k.push(serde_json::json!({"k": k, "successes": successes, "worst_rel_residual": worst}));
    }
    ok &= slowest < A1_SECONDS_PER_RUN;
    let metrics = serde_json::json!({"per_k": per_k, "slowest_run_s": slowest});
    Ok(Criterion::new("A1", "exact recovery", ok, start, 3.0 * 10.0 * A1_SECONDS_PER_RUN, metrics))
}

/// Relative-error bound on a noisy planted instance.
pub fn a2_relative_error(seed: u64) -> Result<Criterion> {
    let start = Instant::now();
    let inst = planted_with_noise([60; 3], 5, 0.1, seed);
    let fit = bicriteria_quadratic(&inst.tensor, &AlgoParams::new(5, A2_EPS, derive_seed(seed, 1)))?;
    let bound = (1.0 + A2_EPS) * inst.noise_fro2;
    let metrics = serde_json::json!({
        "cost_fro2": fit.cost_fro2, "noise_fro2": inst.noise_fro2, "bound": bound,
        "ratio": fit.cost_fro2 / inst.noise_fro2, "rank": fit.factors.rank(),
    });
    Ok(Criterion::new("A2", "relative error", fit.cost_fro2 <= bound, start, A2_SECONDS, metrics))
}

/// TensorSketch dimension for the approximate matrix product bound.
pub fn amp_dimension(q: usize, eps: f64, delta: f64) -> usize {
    ((2.0 + 3f64.powi(q as i32)) / (eps * eps * delta)).ceil() as usize
}

/// Approximate matrix product for TensorSketch over a two-factor domain.
pub fn a3_tensorsketch_amp(seed: u64) -> Result<Criterion> {
    let start = Instant::now();
    let dims = vec![12usize, 10];
    let n: usize = dims.iter().product();
    let m = amp_dimension(2, A3_EPS, A3_DELTA);
    let a = gaussian_mat(4, n, derive_seed(seed, 1));
    let b = gaussian_mat(3, n, derive_seed(seed, 2));
    let exact = &a * b.transpose();
    let bound = A3_EPS * a.norm() * b.norm();
    let mut successes = 0;
    let mut worst = 0.0f64;
    for t in 0..100u64 {
        let spec = SketchSpec::tensorsketch(dims.clone(), m, derive_seed(seed, 10 + t));
        let sa = tensorsketch_apply_rows(&Matrix::Dense(a.clone()), &spec)?;
        let sb = tensorsketch_apply_rows(&Matrix::Dense(b.clone()), &spec)?;
        let err = (&sa * sb.transpose() - &exact).norm();
        worst = worst.max(err / bound);
        if err <= bound {
            successes += 1;
        }
    }
    let metrics = serde_json::json!({"m": m, "successes": successes, "worst_error_over_bound": worst});
    Ok(Criterion::new("A3", "tensorsketch matrix product", successes >= A3_MIN_SUCCESSES, start, A3_SECONDS, metrics))
}

/// Total variation distance between an empirical sample and a distribution.
pub fn total_variation(indices: &[usize], exact: &[f64]) -> f64 {
    let mut counts = vec![0usize; exact.len()];
    for &i in indices {
        counts[i] += 1;
    }
    let n = indices.len().max(1) as f64;
    0.5 * counts.iter().zip(exact).map(|(&c, &p)| (c as f64 / n - p).abs()).sum::<f64>()
}

/// Implicit Khatri-Rao leverage sampler against the materialized distribution.
pub fn a4_kr_sampler(seed: u64) -> Result<Criterion> {
    let start = Instant::now();
    let cases: Vec<Vec<Mat>> = vec![
        vec![gaussian_mat(2, 6, derive_seed(seed, 1)), gaussian_mat(2, 6, derive_seed(seed, 2))],
        vec![gaussian_mat(2, 4, derive_seed(seed, 3)), gaussian_mat(2, 5, derive_seed(seed, 4)), gaussian_mat(2, 3, derive_seed(seed, 5))],
    ];
    let mut tvs = Vec::new();
    for (c, factors) in cases.iter().enumerate() {
        let exact = kr_leverage_distribution_exact(factors)?;
        let op = kr_leverage_sample(factors, A4_SAMPLES, derive_seed(seed, 10 + c as u64), 0.01)?;
        tvs.push(total_variation(&op.indices, &exact));
    }
    let ok = tvs.iter().all(|&t| t <= A4_MAX_TV);
    let metrics = serde_json::json!({"tv": tvs, "samples": A4_SAMPLES});
    Ok(Criterion::new("A4", "khatri-rao leverage sampler", ok, start, A4_SECONDS, metrics))
}

/// `‖M − M_k‖_F²` from a full SVD.
pub fn svd_tail(m: &Mat, k: usize) -> f64 {
    let mut sv: Vec<f64> = m.singular_values().iter().cloned().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sv.iter().skip(k).map(|s| s * s).sum()
}

/// Rank-3 plus noise test matrix for the CUR criterion.
pub fn cur_instance(seed: u64) -> Mat {
    let low = gaussian_mat(100, 3, derive_seed(seed, 1)) * gaussian_mat(3, 100, derive_seed(seed, 2));
    let noise = gaussian_mat(100, 100, derive_seed(seed, 3));
    let scale = 0.1 * low.norm() / noise.norm();
    low + noise * scale
}

/// Matrix CUR cost, membership and budgets.
pub fn a5_matrix_cur(seed: u64) -> Result<Criterion> {
    let start = Instant::now();
    let k = 3;
    let budget = sample_budget(k, 0.5, BUDGET_CONSTANT);
    let mut successes = 0;
    let mut members_ok = true;
    let mut budgets_ok = true;
    let mut ratios = Vec::new();
    for s in 0..10u64 {
        let m = cur_instance(derive_seed(seed, s));
        let res = matrix_cur(&Matrix::Dense(m.clone()), k, 0.5, derive_seed(seed, 100 + s))?;
        let ratio = res.cost_fro2 / svd_tail(&m, k);
        ratios.push(ratio);
        if ratio <= A5_FACTOR {
            successes += 1;
        }
        members_ok &= res.col_idx.iter().enumerate().all(|(c, &j)| res.c.column(c) == m.column(j));
        members_ok &= res.row_idx.iter().enumerate().all(|(r, &i)| res.r.row(r) == m.row(i));
        budgets_ok &= res.col_idx.len() <= budget && res.row_idx.len() <= budget;
    }
    let ok = successes >= A5_MIN_SUCCESSES && members_ok && budgets_ok;
    let metrics = serde_json::json!({
        "successes": successes, "cost_ratios": ratios, "membership": members_ok, "budget": budget, "budgets_ok": budgets_ok,
    });
    Ok(Criterion::new("A5", "matrix CUR", ok, start, A5_SECONDS, metrics))
}

/// CURT against the planted rank-5 factorization of the A2 instance.
pub fn a6_curt(seed: u64) -> Result<Criterion> {
    let start = Instant::now();
    let inst = planted_with_noise([60; 3], 5, 0.1, seed);
    let a = &inst.tensor;
    let f = &inst.factors;
    let opts = CurtOptions::default();
    let res = curt_decompose(a, f, 0.5, derive_seed(seed, 2), &opts)?;
    let reference = residual_fro2(a, f)?;
    let d = curt_budget(f.rank(), 0.5, &opts);
    let counts = [res.col_idx.len(), res.row_idx.len(), res.tube_idx.len()];
    let members = a.flattening_columns(1, &res.col_idx)? == res.cmat
        && a.flattening_columns(2, &res.row_idx)? == res.rmat
        && a.flattening_columns(3, &res.tube_idx)? == res.tmat;
    let ok = res.cost_fro2 <= A6_FACTOR * reference && counts == [d; 3] && members;
    let metrics = serde_json::json!({
        "cost_fro2": res.cost_fro2, "reference_fro2": reference, "ratio": res.cost_fro2 / reference,
        "counts": counts, "configured": d, "membership": members,
    });
    Ok(Criterion::new("A6", "CURT", ok, start, A6_SECONDS, metrics))
}

/// ℓ1 robustness to sparse outliers and IRLS accuracy.
pub fn a7_l1_robustness(seed: u64) -> Result<Criterion> {
    let start = Instant::now();
    let mut successes = 0;
    let mut runs = Vec::new();
    for s in 0..10u64 {
        let is = derive_seed(seed, s);
        let inst = planted_with_outliers([30; 3], 2, 0.01, 100.0, is);
        let l1 = l1_bicriteria(&inst.tensor, &L1Params::new(2, derive_seed(is, 1)))?;
        let fro = fro_rank_k(&inst.tensor, &AlgoParams::new(2, 0.5, derive_seed(is, 2)))?;
        let fro_l1 = residual_l1(&inst.tensor, &fro.factors)?;
        let ok = l1.cost_l1 <= A7_OUTLIER_FACTOR * inst.noise_l1 && l1.cost_l1 <= fro_l1;
        if ok {
            successes += 1;
        }
        runs.push(serde_json::json!({"l1_cost": l1.cost_l1, "outliers_l1": inst.noise_l1, "frobenius_pipeline_l1": fro_l1}));
    }
    let mut worst_irls = 0.0f64;
    for r in 0..20u64 {
        let b = gaussian_mat(5, 8, derive_seed(seed, 1000 + r));
        let c: Vec<f64> = (0..8).map(|j| gaussian_at(derive_seed(seed, 2000 + r), j, 0)).collect();
        let fit = l1_regression_row(&b, &c, &IrlsOptions::default());
        let (_, exact) = l1_regression_row_exact(&b, &c);
        let ratio = if exact > 0.0 { fit.objective / exact } else if fit.objective == 0.0 { 1.0 } else { f64::INFINITY };
        worst_irls = worst_irls.max(ratio);
    }
    let ok = successes >= A7_MIN_SUCCESSES && worst_irls <= A7_IRLS_FACTOR;
    let metrics = serde_json::json!({"successes": successes, "runs": runs, "worst_irls_ratio": worst_irls});
    Ok(Criterion::new("A7", "l1 robustness", ok, start, A7_SECONDS, metrics))
}

fn random_updates(n: usize, len: usize, seed: u64) -> Vec<Update> {
    use rand::Rng;
    let mut rng = crate::rng::chacha(seed);
    (0..len)
        .map(|_| Update::new(rng.random_range(0..n), rng.random_range(0..n), rng.random_range(0..n), rng.random_range(-1.0..1.0)))
        .collect()
}

/// Streaming finalization equals the offline pipeline; cancellation is exact.
pub fn a8_streaming(seed: u64) -> Result<Criterion> {
    let start = Instant::now();
    let n = 20;
    let mut worst = 0.0f64;
    let mut cancel_ok = true;
    for s in 0..3u64 {
        let params = AlgoParams::new(2, 0.5, derive_seed(seed, s)).with_trials(1);
        let ups = random_updates(n, 500, derive_seed(seed, 100 + s));
        let a = accumulate([n; 3], &ups)?;
        let mut st = StreamState::new([n; 3], &params)?;
        st.consume(ups.clone())?;
        worst = worst.max(factor_rel_diff(&st.finalize(FinalizeMode::Bicriteria)?, &bicriteria_cubic(&a, &params)?.factors));
        worst = worst.max(factor_rel_diff(&st.finalize(FinalizeMode::RankK)?, &fro_rank_k(&a, &params)?.factors));
        let mut c = StreamState::new([n; 3], &params)?;
        c.consume(ups.iter().flat_map(|u| [*u, Update { delta: -u.delta, ..*u }]))?;
        cancel_ok &= c.is_zero();
    }
    let ok = worst <= A8_REL_TOL && cancel_ok;
    let metrics = serde_json::json!({"worst_factor_rel_diff": worst, "cancellation_zero": cancel_ok});
    Ok(Criterion::new("A8", "streaming equals offline", ok, start, A8_SECONDS, metrics))
}

/// `3·t·s + t³ + 3·s·k` with per-mode dimensions.
pub fn poly_words(t: [usize; 3], s: [usize; 3], k: usize) -> usize {
    (0..3).map(|m| t[m] * s[m] + s[m] * k).sum::<usize>() + t.iter().product::<usize>()
}

/// Distributed outputs are partition invariant and the ledger matches the message shapes.
pub fn a9_distributed(seed: u64) -> Result<Criterion> {
    let start = Instant::now();
    let n = 15;
    let inst = planted_with_noise([n; 3], 2, 0.1, seed);
    let a = &inst.tensor;
    let params = AlgoParams::new(2, 0.5, derive_seed(seed, 1)).with_trials(1);
    let opts = DistOptions::default();
    let central = fro_rank_k(a, &params)?.factors;
    let ts = trial_seed(params.seed, 0);
    let s_dims: [usize; 3] = std::array::from_fn(|m| column_sketch(a.dims(), m + 1, &params, ts).output_dim);
    let red = reduce_sketches(a.dims(), [true; 3], &params, ts);
    let t_dims: [usize; 3] = std::array::from_fn(|m| red[m].output_dim);
    let pw = poly_words(t_dims, s_dims, params.k);
    let mut worst = 0.0f64;
    let mut ledger_ok = true;
    let mut totals = Vec::new();
    for parts in [1usize, 3, 5] {
        let split = random_split(a, parts, derive_seed(seed, 10 + parts as u64));
        let out = distsim_run(&split, &params, &opts)?;
        let f = out.factors.as_ref().expect("shares collected");
        worst = worst.max(factor_rel_diff(f, &central));
        let total = out.ledger.total();
        ledger_ok &= total == expected_words(a.dims(), &params, parts, &opts);
        ledger_ok &= total <= parts * (pw + 3 * params.k * n);
        totals.push(total);
    }
    let ok = worst <= A9_REL_TOL && ledger_ok;
    let metrics = serde_json::json!({"worst_factor_rel_diff": worst, "ledger_totals": totals, "poly_words": pw, "ledger_ok": ledger_ok});
    Ok(Criterion::new("A9", "distributed protocol", ok, start, A9_SECONDS, metrics))
}

/// Flattening round trips, mode-invariant norms, Khatri-Rao rows, Lewis fixed point, leverage sums.
pub fn a10_structural(seed: u64) -> Result<Criterion> {
    let start = Instant::now();
    let t = Tensor3::from_fn([4, 5, 6], |i, j, l| gaussian_at(seed, (i * 5 + j) as u64, l as u64));
    let mut roundtrip = true;
    let mut norm_gap = 0.0f64;
    for mode in 1..=3 {
        let flat = t.flatten(mode)?;
        roundtrip &= Tensor3::retensorize(&flat, mode, t.dims())?.dense_values() == t.dense_values();
        norm_gap = norm_gap.max((flat.fro_norm2() - t.fro_norm2()).abs() / t.fro_norm2());
    }
    let factors = vec![gaussian_mat(3, 4, derive_seed(seed, 1)), gaussian_mat(3, 5, derive_seed(seed, 2))];
    let kr = ImplicitKR::new(factors.clone())?;
    let mat = khatri_rao_rows(&[&factors[0], &factors[1]]);
    let mut kr_ok = true;
    for i in 0..3 {
        kr_ok &= kr.kr_row(i)? == mat.row(i).iter().cloned().collect::<Vec<_>>();
    }
    let m = gaussian_mat(50, 5, derive_seed(seed, 3));
    let lewis = lewis_weights(&m, 1.0, 60)?;
    let lev_sum: f64 = leverage_scores(&m).iter().sum();
    let lev_gap = (lev_sum - numerical_rank(&m) as f64).abs();
    let low = gaussian_mat(30, 2, derive_seed(seed, 4)) * gaussian_mat(2, 6, derive_seed(seed, 5));
    let low_gap = (leverage_scores(&low).iter().sum::<f64>() - 2.0).abs();
    let ok = roundtrip
        && norm_gap <= 1e-12
        && kr_ok
        && lewis.residual <= A10_LEWIS_RESIDUAL
        && lev_gap <= A10_LEVERAGE_SUM
        && low_gap <= A10_LEVERAGE_SUM;
    let metrics = serde_json::json!({
        "roundtrip_bitwise": roundtrip, "frobenius_mode_gap": norm_gap, "kr_rows_match": kr_ok,
        "lewis_residual": lewis.residual, "leverage_sum_gap": lev_gap.max(low_gap),
    });
    Ok(Criterion::new("A10", "structural invariants", ok, start, A10_SECONDS, metrics))
}

/// Default root seed of the suite.
pub const SUITE_SEED: u64 = 20240607;

/// Run all criteria in order.
pub fn run_acceptance(seed: u64) -> Result<Vec<Criterion>> {
    Ok(vec![
        a1_exact_recovery(seed)?,
        a2_relative_error(seed)?,
        a3_tensorsketch_amp(seed)?,
        a4_kr_sampler(seed)?,
        a5_matrix_cur(seed)?,
        a6_curt(seed)?,
        a7_l1_robustness(seed)?,
        a8_streaming(seed)?,
        a9_distributed(seed)?,
        a10_structural(seed)?,
    ])
}

/// JSON summary of a suite run.
pub fn suite_json(results: &[Criterion]) -> serde_json::Value {
    serde_json::json!({
        "suite": "acceptance",
        "passed": results.iter().all(|c| c.passed),
        "criteria": results,
    })
}

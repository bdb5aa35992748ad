//! Leverage scores, Lewis weights, score-proportional sampling and the staged
//! Khatri-Rao leverage-score sampler.

use crate::error::{shape_err, Error, Result};
use crate::linalg::{kr_gram, orth_basis, pinv, psd_inv_sqrt, Mat};
use crate::rng::{chacha, derive_seed};
use crate::sketch::{SketchSpec, TensorSketchOp};
use crate::tensor::{ImplicitKR, ModeMap};
use rand::Rng;

/// Diagonal sampling-and-rescaling operator stored as `(index, weight)` pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingOperator {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
    pub source_dim: usize,
    /// Sampling probability of each drawn index, when known.
    pub probs: Vec<f64>,
    rev_start: Vec<usize>,
    rev_pos: Vec<usize>,
}

impl SamplingOperator {
    pub fn new(indices: Vec<usize>, weights: Vec<f64>, source_dim: usize) -> Result<Self> {
        Self::with_probs(indices, weights, source_dim, Vec::new())
    }

    pub fn with_probs(indices: Vec<usize>, weights: Vec<f64>, source_dim: usize, probs: Vec<f64>) -> Result<Self> {
        if indices.len() != weights.len() {
            return shape_err("one weight per sampled index");
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= source_dim) {
            return Err(Error::Index(format!("sampled index {bad} outside {source_dim}")));
        }
        if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParam("sampling weights must be positive".into()));
        }
        let mut counts = vec![0usize; source_dim + 1];
        for &i in &indices {
            counts[i + 1] += 1;
        }
        for i in 0..source_dim {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut rev_pos = vec![0usize; indices.len()];
        for (s, &i) in indices.iter().enumerate() {
            rev_pos[fill[i]] = s;
            fill[i] += 1;
        }
        Ok(SamplingOperator { indices, weights, source_dim, probs, rev_start: counts, rev_pos })
    }

    /// Identity on `n` coordinates.
    pub fn identity(n: usize) -> Self {
        Self::new((0..n).collect(), vec![1.0; n], n).expect("valid identity")
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// `D·M`: sampled rows of `M`, each scaled by its weight.
    pub fn select_rows(&self, m: &Mat) -> Mat {
        Mat::from_fn(self.len(), m.ncols(), |s, c| self.weights[s] * m[(self.indices[s], c)])
    }

    /// `M·Dᵀ`: sampled columns of `M`, each scaled by its weight.
    pub fn select_cols(&self, m: &Mat) -> Mat {
        Mat::from_fn(m.nrows(), self.len(), |r, s| self.weights[s] * m[(r, self.indices[s])])
    }

    /// Merge repeated indices by adding weights (exact for ℓ1 objectives).
    pub fn merged_l1(&self) -> SamplingOperator {
        let mut acc: Vec<(usize, f64)> = Vec::new();
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by_key(|&s| (self.indices[s], s));
        for s in order {
            match acc.last_mut() {
                Some(last) if last.0 == self.indices[s] => last.1 += self.weights[s],
                _ => acc.push((self.indices[s], self.weights[s])),
            }
        }
        let (idx, w): (Vec<usize>, Vec<f64>) = acc.into_iter().unzip();
        SamplingOperator::new(idx, w, self.source_dim).expect("merged operator valid")
    }
}

/// A sampling operator maps coordinate `i` to every sample slot that drew `i`.
impl ModeMap for SamplingOperator {
    fn in_dim(&self) -> usize {
        self.source_dim
    }
    fn out_dim(&self) -> usize {
        self.len()
    }
    fn images(&self, idx: usize, out: &mut Vec<(usize, f64)>) {
        for p in self.rev_start[idx]..self.rev_start[idx + 1] {
            let s = self.rev_pos[p];
            out.push((s, self.weights[s]));
        }
    }
}

/// Rescaling rule for sampled rows.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SampleMode {
    /// Weight `1/√(q_i·count)`.
    L2,
    /// Weight `1/(count·q_i)^{1/p}`.
    Lp(f64),
}

/// Row leverage scores from an orthonormal basis of the column space.
pub fn leverage_scores(m: &Mat) -> Vec<f64> {
    let q = orth_basis(m);
    (0..m.nrows()).map(|i| q.row(i).iter().map(|x| x * x).sum()).collect()
}

/// Draw `count` i.i.d. indices with probability proportional to `probs`.
pub fn sample_operator(probs: &[f64], count: usize, seed: u64, mode: SampleMode) -> Result<SamplingOperator> {
    if count == 0 {
        return Err(Error::InvalidParam("sample count must be at least 1".into()));
    }
    if probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
        return Err(Error::InvalidParam("probabilities must be finite and nonnegative".into()));
    }
    let mut cdf = Vec::with_capacity(probs.len());
    let mut total = 0.0;
    for &p in probs {
        total += p;
        cdf.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::Degenerate("all sampling probabilities are zero".into()));
    }
    let last_pos = probs.iter().rposition(|p| *p > 0.0).unwrap();
    let mut rng = chacha(seed);
    let mut indices = Vec::with_capacity(count);
    let mut weights = Vec::with_capacity(count);
    let mut qs = Vec::with_capacity(count);
    for _ in 0..count {
        let u: f64 = rng.random::<f64>() * total;
        let i = cdf.partition_point(|&c| c <= u).min(last_pos);
        let q = probs[i] / total;
        indices.push(i);
        qs.push(q);
        weights.push(match mode {
            SampleMode::L2 => 1.0 / (q * count as f64).sqrt(),
            SampleMode::Lp(p) => 1.0 / (q * count as f64).powf(1.0 / p),
        });
    }
    SamplingOperator::with_probs(indices, weights, probs.len(), qs)
}

/// Lewis weights with the residual of the defining fixed point.
#[derive(Clone, Debug)]
pub struct LewisWeights {
    pub weights: Vec<f64>,
    /// `max_i |w_i − τ_i(W^{1/2−1/p} M)|`.
    pub residual: f64,
}

/// Leverage scores of `W^{1/2−1/p} M`; zero rows stay zero.
fn scaled_leverage(m: &Mat, w: &[f64], p: f64) -> Vec<f64> {
    let e = 0.5 - 1.0 / p;
    let scaled = Mat::from_fn(m.nrows(), m.ncols(), |i, j| if w[i] > 0.0 { w[i].powf(e) * m[(i, j)] } else { 0.0 });
    leverage_scores(&scaled)
}

/// ℓp Lewis weights by the iteration `w_i ← (m_iᵀ (Mᵀ W^{1−2/p} M)^+ m_i)^{p/2}`.
///
/// Its fixed point satisfies `w_i = τ_i(W^{1/2−1/p} M)`; the update contracts for `p < 4`.
pub fn lewis_weights(m: &Mat, p: f64, iters: usize) -> Result<LewisWeights> {
    if !(1.0..=2.0).contains(&p) {
        return Err(Error::InvalidParam(format!("Lewis weights need p in [1, 2], got {p}")));
    }
    let (n, d) = m.shape();
    if n < d {
        return shape_err(format!("Lewis weights need rows >= cols, got {n}x{d}"));
    }
    let nonzero: Vec<bool> = (0..n).map(|i| m.row(i).iter().any(|x| *x != 0.0)).collect();
    let mut w: Vec<f64> = nonzero.iter().map(|&z| if z { 1.0 } else { 0.0 }).collect();
    for _ in 0..iters {
        let mut gram = Mat::zeros(d, d);
        for i in 0..n {
            if w[i] > 0.0 {
                let row = m.row(i);
                gram += row.transpose() * row * w[i].powf(1.0 - 2.0 / p);
            }
        }
        let gi = pinv(&gram);
        let next: Vec<f64> = (0..n)
            .map(|i| {
                if !nonzero[i] {
                    return 0.0;
                }
                let row = m.row(i);
                let quad = (row * &gi * row.transpose())[(0, 0)].max(0.0);
                quad.powf(p / 2.0)
            })
            .collect();
        w = next;
    }
    let tau = scaled_leverage(m, &w, p);
    let residual = w.iter().zip(&tau).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(LewisWeights { weights: w, residual })
}

/// How the staged sampler forms the Gram matrices of Khatri-Rao suffixes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GramRoute {
    /// TensorSketch of the suffix Khatri-Rao product, exact when one factor remains.
    Sketched,
    /// Hadamard product of the factor Grams.
    Exact,
}

#[derive(Clone, Debug)]
pub struct KrSamplerOptions {
    pub eps0: f64,
    pub route: GramRoute,
    /// TensorSketch target dimension; `None` picks the default from `eps0`.
    pub sketch_dim: Option<usize>,
}

impl Default for KrSamplerOptions {
    fn default() -> Self {
        KrSamplerOptions { eps0: 0.01, route: GramRoute::Sketched, sketch_dim: None }
    }
}

/// Largest TensorSketch dimension the sampler picks on its own.
pub const KR_SKETCH_CAP: usize = 1 << 20;

/// Default TensorSketch dimension for `q` factors over `total` columns.
pub fn kr_sketch_dim(q: usize, total: usize, eps0: f64) -> usize {
    let by_log = (64.0 * (total.max(2) as f64).ln()).ceil() as usize;
    let by_amp = ((2.0 + 3f64.powi(q as i32)) / (eps0 * eps0)).ceil() as usize;
    by_log.max(by_amp).next_power_of_two().min(KR_SKETCH_CAP)
}

/// Columns drawn from a Khatri-Rao product together with their per-factor indices.
#[derive(Clone, Debug)]
pub struct KrSample {
    pub op: SamplingOperator,
    pub factor_indices: Vec<Vec<usize>>,
}

/// Sample `count` columns of `U_1 ⊙ ... ⊙ U_q` (each `U_t` is `k × n_t`) with
/// probability close to their leverage scores, without forming the product.
pub fn kr_leverage_sample(factors: &[Mat], count: usize, seed: u64, eps0: f64) -> Result<SamplingOperator> {
    let opts = KrSamplerOptions { eps0, ..Default::default() };
    Ok(kr_leverage_sample_with(factors, count, seed, &opts)?.op)
}

pub fn kr_leverage_sample_with(
    factors: &[Mat],
    count: usize,
    seed: u64,
    opts: &KrSamplerOptions,
) -> Result<KrSample> {
    let kr = ImplicitKR::new(factors.to_vec())?;
    if count == 0 {
        return Err(Error::InvalidParam("sample count must be at least 1".into()));
    }
    let q = factors.len();
    let k = kr.rows();
    let dims = kr.factor_dims();
    let total: usize = dims.iter().product();
    if total == 0 || k == 0 {
        return Err(Error::Degenerate("empty Khatri-Rao product".into()));
    }
    // grams[l] is the Gram of the Khatri-Rao product of factors l..q.
    let mut grams: Vec<Mat> = Vec::with_capacity(q + 1);
    let m = opts.sketch_dim.unwrap_or_else(|| kr_sketch_dim(q, total, opts.eps0));
    for l in 0..q {
        let suffix: Vec<&Mat> = factors[l..].iter().collect();
        let g = if opts.route == GramRoute::Exact || suffix.len() == 1 {
            kr_gram(&suffix)
        } else {
            let sdims: Vec<usize> = suffix.iter().map(|f| f.ncols()).collect();
            let spec = SketchSpec::tensorsketch(sdims, m, derive_seed(seed, 1000 + l as u64));
            let sk = TensorSketchOp::new(&spec)?.apply_kr(&ImplicitKR::new(suffix.iter().map(|f| (*f).clone()).collect())?)?;
            &sk * sk.transpose()
        };
        grams.push(g);
    }
    grams.push(Mat::from_element(k, k, 1.0));

    let v0 = psd_inv_sqrt(&grams[0]);
    let proj = &v0 * &grams[0] * &v0;
    let alpha: Vec<f64> = (0..k).map(|i| proj[(i, i)].max(0.0)).collect();
    let alpha_sum: f64 = alpha.iter().sum();
    if !(alpha_sum > 0.0) {
        return Err(Error::Degenerate("Khatri-Rao product is numerically zero".into()));
    }

    // Conditional weights of every candidate at stage l given the running row vector.
    let stage_weights = |l: usize, v: &[f64]| -> Vec<f64> {
        let f = &factors[l];
        let g = &grams[l + 1];
        (0..f.ncols())
            .map(|j| {
                let w: Vec<f64> = (0..k).map(|r| v[r] * f[(r, j)]).collect();
                let mut s = 0.0;
                for a in 0..k {
                    if w[a] == 0.0 {
                        continue;
                    }
                    let mut t = 0.0;
                    for b in 0..k {
                        t += g[(a, b)] * w[b];
                    }
                    s += w[a] * t;
                }
                s.max(0.0)
            })
            .collect()
    };
    let draw = |weights: &[f64], rng: &mut rand_chacha::ChaCha8Rng| -> Option<usize> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return None;
        }
        let u: f64 = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut last = None;
        for (j, &w) in weights.iter().enumerate() {
            if w > 0.0 {
                last = Some(j);
            }
            acc += w;
            if acc > u && w > 0.0 {
                return Some(j);
            }
        }
        last
    };
    let ginv = if opts.route == GramRoute::Exact { Some(pinv(&grams[0])) } else { None };
    let stage0: Vec<Vec<f64>> = (0..k).map(|i| {
        let v: Vec<f64> = v0.row(i).iter().cloned().collect();
        stage_weights(0, &v)
    }).collect();

    let mut rng = chacha(derive_seed(seed, 7));
    let mut indices = Vec::with_capacity(count);
    let mut factor_indices = Vec::with_capacity(count);
    let mut probs = Vec::with_capacity(count);
    for _ in 0..count {
        let i = draw(&alpha, &mut rng).ok_or_else(|| Error::Degenerate("no sampleable row".into()))?;
        let mut v: Vec<f64> = v0.row(i).iter().cloned().collect();
        let mut path = Vec::with_capacity(q);
        for l in 0..q {
            let w = if l == 0 { stage0[i].clone() } else { stage_weights(l, &v) };
            let j = draw(&w, &mut rng).ok_or_else(|| Error::Degenerate("stage weights vanished".into()))?;
            for r in 0..k {
                v[r] *= factors[l][(r, j)];
            }
            path.push(j);
        }
        let qc = match &ginv {
            Some(gi) => {
                let a: Vec<f64> = (0..k).map(|r| kr.entry(r, &path)).collect();
                let mut s = 0.0;
                for x in 0..k {
                    for y in 0..k {
                        s += a[x] * gi[(x, y)] * a[y];
                    }
                }
                s.max(0.0) / alpha_sum
            }
            None => {
                let mut qsum = 0.0;
                for (row, &al) in alpha.iter().enumerate() {
                    if al <= 0.0 {
                        continue;
                    }
                    let mut pr = al / alpha_sum;
                    let mut vv: Vec<f64> = v0.row(row).iter().cloned().collect();
                    for (l, &j) in path.iter().enumerate() {
                        let w = if l == 0 { stage0[row].clone() } else { stage_weights(l, &vv) };
                        let tot: f64 = w.iter().sum();
                        if !(tot > 0.0) {
                            pr = 0.0;
                            break;
                        }
                        pr *= w[j] / tot;
                        for r in 0..k {
                            vv[r] *= factors[l][(r, j)];
                        }
                    }
                    qsum += pr;
                }
                qsum
            }
        };
        let mut c = 0usize;
        for (l, &j) in path.iter().enumerate() {
            c = c * dims[l] + j;
        }
        indices.push(c);
        let qc = qc.max(f64::MIN_POSITIVE);
        probs.push(qc);
        factor_indices.push(path);
    }
    let weights = probs.iter().map(|&qc| 1.0 / (qc * count as f64).sqrt()).collect();
    Ok(KrSample { op: SamplingOperator::with_probs(indices, weights, total, probs)?, factor_indices })
}

/// Sample rows of the Kronecker product `A ⊗ B` (row `i·rows(B) + j`) by leverage
/// score. Leverage factorizes as `τ_i(A)·τ_j(B)`, so each factor is sampled
/// independently and the weights use the exact product probability.
pub fn kronecker_leverage_sample(a: &Mat, b: &Mat, count: usize, seed: u64) -> Result<SamplingOperator> {
    if count == 0 {
        return Err(Error::InvalidParam("sample count must be at least 1".into()));
    }
    let la = leverage_scores(a);
    let lb = leverage_scores(b);
    let sa = sample_operator(&la, count, derive_seed(seed, 1), SampleMode::L2)?;
    let sb = sample_operator(&lb, count, derive_seed(seed, 2), SampleMode::L2)?;
    let nb = b.nrows();
    let mut indices = Vec::with_capacity(count);
    let mut probs = Vec::with_capacity(count);
    for s in 0..count {
        indices.push(sa.indices[s] * nb + sb.indices[s]);
        probs.push(sa.probs[s] * sb.probs[s]);
    }
    let weights = probs.iter().map(|q| 1.0 / (q * count as f64).sqrt()).collect();
    SamplingOperator::with_probs(indices, weights, a.nrows() * nb, probs)
}

/// Exact column leverage distribution of a materialized Khatri-Rao product.
pub fn kr_leverage_distribution_exact(factors: &[Mat]) -> Result<Vec<f64>> {
    let kr = ImplicitKR::new(factors.to_vec())?;
    let m = kr.materialize();
    let lev = leverage_scores(&m.transpose());
    let s: f64 = lev.iter().sum();
    Ok(lev.iter().map(|x| x / s).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::gaussian_at;
    use proptest::prelude::*;

    fn rand_mat(r: usize, c: usize, seed: u64) -> Mat {
        Mat::from_fn(r, c, |i, j| gaussian_at(seed, i as u64, j as u64))
    }

    #[test]
    fn identity_scores_are_one() {
        let s = leverage_scores(&Mat::identity(6, 6));
        assert!(s.iter().all(|x| (x - 1.0).abs() < 1e-12));
    }

    #[test]
    fn orthonormal_scores_are_row_norms() {
        let q = orth_basis(&rand_mat(10, 3, 1));
        let s = leverage_scores(&q);
        for i in 0..10 {
            let want: f64 = q.row(i).iter().map(|x| x * x).sum();
            assert!((s[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn scores_sum_to_rank() {
        let s = leverage_scores(&rand_mat(50, 5, 2));
        let total: f64 = s.iter().sum();
        assert!((total - 5.0).abs() < 1e-8);
        assert!(s.iter().all(|x| *x >= 0.0 && *x <= 1.0 + 1e-10));
    }

    #[test]
    fn point_mass_sampling() {
        let op = sample_operator(&[1.0, 0.0, 0.0], 4, 3, SampleMode::L2).unwrap();
        assert!(op.indices.iter().all(|&i| i == 0));
        assert!(op.weights.iter().all(|&w| (w - 0.5).abs() < 1e-15));
        assert!(sample_operator(&[0.0, 0.0], 3, 1, SampleMode::L2).is_err());
        assert!(sample_operator(&[1.0], 0, 1, SampleMode::L2).is_err());
    }

    #[test]
    fn sampling_is_replayable() {
        let p = [0.1, 0.5, 0.2, 0.2];
        let a = sample_operator(&p, 100, 9, SampleMode::Lp(1.0)).unwrap();
        let b = sample_operator(&p, 100, 9, SampleMode::Lp(1.0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn uniform_frequencies_within_three_sigma() {
        let n = 10;
        let count = 100_000;
        let op = sample_operator(&vec![1.0; n], count, 5, SampleMode::L2).unwrap();
        let mut freq = vec![0usize; n];
        op.indices.iter().for_each(|&i| freq[i] += 1);
        let mean = count as f64 / n as f64;
        let sd = (count as f64 * 0.1 * 0.9).sqrt();
        for f in freq {
            assert!((f as f64 - mean).abs() <= 3.0 * sd, "{f}");
        }
    }

    #[test]
    fn mode_map_reverse_index() {
        let op = SamplingOperator::new(vec![2, 0, 2], vec![1.0, 2.0, 3.0], 4).unwrap();
        let mut out = Vec::new();
        op.images(2, &mut out);
        assert_eq!(out, vec![(0, 1.0), (2, 3.0)]);
        out.clear();
        op.images(1, &mut out);
        assert!(out.is_empty());
        let merged = op.merged_l1();
        assert_eq!(merged.indices, vec![0, 2]);
        assert_eq!(merged.weights, vec![2.0, 4.0]);
    }

    #[test]
    fn lewis_p2_is_leverage() {
        let m = rand_mat(20, 3, 4);
        let lw = lewis_weights(&m, 2.0, 1).unwrap();
        let lev = leverage_scores(&m);
        for (a, b) in lw.weights.iter().zip(&lev) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn lewis_identity_is_one() {
        for p in [1.0, 1.5, 2.0] {
            let lw = lewis_weights(&Mat::identity(5, 5), p, 10).unwrap();
            assert!(lw.weights.iter().all(|w| (w - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn lewis_p1_fixed_point_residual() {
        let m = rand_mat(50, 5, 6);
        let lw = lewis_weights(&m, 1.0, 40).unwrap();
        assert!(lw.residual <= 1e-6, "{}", lw.residual);
        let total: f64 = lw.weights.iter().sum();
        assert!((total - 5.0).abs() < 1e-6);
    }

    #[test]
    fn lewis_zero_rows_get_zero() {
        let mut m = rand_mat(10, 2, 7);
        m.row_mut(3).fill(0.0);
        let lw = lewis_weights(&m, 1.0, 30).unwrap();
        assert_eq!(lw.weights[3], 0.0);
    }

    #[test]
    fn lewis_sampling_preserves_l1_norms() {
        let (n, d) = (200, 4);
        let m = rand_mat(n, d, 8);
        let lw = lewis_weights(&m, 1.0, 40).unwrap();
        let count = (20.0 * d as f64 * (d as f64).ln()).ceil() as usize;
        let op = sample_operator(&lw.weights, count, 3, SampleMode::Lp(1.0)).unwrap();
        let sm = op.select_rows(&m);
        for t in 0..100u64 {
            let x = Mat::from_fn(d, 1, |i, _| gaussian_at(100 + t, i as u64, 0));
            let full: f64 = (&m * &x).iter().map(|v| v.abs()).sum();
            let sk: f64 = (&sm * &x).iter().map(|v| v.abs()).sum();
            assert!(sk >= 0.5 * full && sk <= 2.0 * full, "{sk} vs {full}");
        }
    }

    fn tv(a: &[f64], b: &[f64]) -> f64 {
        0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
    }

    fn empirical(op: &SamplingOperator) -> Vec<f64> {
        let mut f = vec![0.0; op.source_dim];
        op.indices.iter().for_each(|&i| f[i] += 1.0);
        let n = op.len() as f64;
        f.iter().map(|x| x / n).collect()
    }

    #[test]
    fn rank_one_marginals_factorize() {
        let u = rand_mat(1, 5, 1);
        let v = rand_mat(1, 4, 2);
        let s = kr_leverage_sample_with(&[u.clone(), v], 40_000, 3, &KrSamplerOptions::default()).unwrap();
        let mut marg = [0.0; 5];
        s.factor_indices.iter().for_each(|p| marg[p[0]] += 1.0);
        let tot: f64 = u.iter().map(|x| x * x).sum();
        for j in 0..5 {
            let want = u[(0, j)] * u[(0, j)] / tot;
            assert!((marg[j] / 40_000.0 - want).abs() < 0.015);
        }
    }

    #[test]
    fn exact_route_matches_oracle_distribution() {
        let f = [rand_mat(2, 6, 11), rand_mat(2, 6, 12)];
        let opts = KrSamplerOptions { route: GramRoute::Exact, ..Default::default() };
        let s = kr_leverage_sample_with(&f, 50_000, 4, &opts).unwrap();
        let exact = kr_leverage_distribution_exact(&f).unwrap();
        assert!(tv(&empirical(&s.op), &exact) < 0.03);
        for (c, &q) in s.op.indices.iter().zip(&s.op.probs) {
            assert!((q - exact[*c]).abs() < 1e-10);
        }
    }

    #[test]
    fn sketched_route_probabilities_sum_to_one() {
        let f = [rand_mat(2, 3, 21), rand_mat(2, 4, 22)];
        let s = kr_leverage_sample_with(&f, 20_000, 5, &KrSamplerOptions::default()).unwrap();
        let mut seen = [None; 12];
        for (c, &q) in s.op.indices.iter().zip(&s.op.probs) {
            seen[*c] = Some(q);
        }
        let exact = kr_leverage_distribution_exact(&f).unwrap();
        for (c, q) in seen.iter().enumerate() {
            if let Some(q) = q {
                assert!((q - exact[c]).abs() < 0.02 * exact[c].max(0.01), "{c}: {q} vs {}", exact[c]);
            }
        }
    }

    #[test]
    fn kronecker_sampler_matches_product_leverage() {
        let a = rand_mat(4, 2, 31);
        let b = rand_mat(5, 2, 32);
        let op = kronecker_leverage_sample(&a, &b, 60_000, 9).unwrap();
        let kron = a.kronecker(&b);
        let lev = leverage_scores(&kron);
        let total: f64 = lev.iter().sum();
        let exact: Vec<f64> = lev.iter().map(|x| x / total).collect();
        assert!(tv(&empirical(&op), &exact) < 0.02);
        for (c, q) in op.indices.iter().zip(&op.probs) {
            assert!((q - exact[*c]).abs() < 1e-10);
        }
    }

    #[test]
    fn rank_deficient_product_is_handled() {
        let u = rand_mat(1, 4, 1);
        let uu = Mat::from_fn(3, 4, |_, j| u[(0, j)]);
        let v = rand_mat(3, 3, 2);
        let s = kr_leverage_sample(&[uu, v], 100, 1, 0.05).unwrap();
        assert_eq!(s.len(), 100);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn prop_leverage_bounds(seed in any::<u64>(), n in 3usize..30, d in 1usize..4) {
            let d = d.min(n);
            let s = leverage_scores(&rand_mat(n, d, seed));
            let total: f64 = s.iter().sum();
            prop_assert!((total - d as f64).abs() < 1e-8);
            prop_assert!(s.iter().all(|x| *x >= -1e-12 && *x <= 1.0 + 1e-10));
        }

        #[test]
        fn prop_sampler_indices_in_range(seed in any::<u64>(), count in 1usize..50) {
            let p: Vec<f64> = (0..7).map(|i| ((seed >> i) & 3) as f64).collect();
            if p.iter().sum::<f64>() > 0.0 {
                let op = sample_operator(&p, count, seed, SampleMode::L2).unwrap();
                prop_assert_eq!(op.len(), count);
                for &i in &op.indices {
                    prop_assert!(p[i] > 0.0);
                }
            }
        }
    }
}

//! One-pass turnstile maintenance of the sketches used by the Frobenius
//! pipeline, and finalization from those sketches alone.

use crate::error::{Error, Result};
use crate::fro_lra::{
    column_sketch, cubic_from_sketches, map_left, rank_k_from_sketches, reduce_sketches, trial_seed, AlgoParams,
    ReducedProblem,
};
use crate::linalg::Mat;
use crate::sketch::SketchSpec;
use crate::tensor::{FactorTriple, Tensor3};

/// Additive update `A[i, j, l] += delta` with 0-based indices.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Update {
    pub i: usize,
    pub j: usize,
    pub l: usize,
    pub delta: f64,
}

impl Update {
    pub fn new(i: usize, j: usize, l: usize, delta: f64) -> Self {
        Update { i, j, l, delta }
    }
}

/// What `finalize` solves on the reduced problem.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum FinalizeMode {
    /// Tucker regression, expanded to `s1·s2·s3` rank-one terms.
    #[default]
    Bicriteria,
    /// Rank-`k` alternating least squares.
    RankK,
}

/// Accumulators `V_t = A_t S_t` and `C = A(T1, T2, T3)` for the implicit tensor.
///
/// Sketch entries are regenerated from seeds on every update; nothing
/// input-sized besides the `V_t` is kept.
#[derive(Clone, Debug)]
pub struct StreamState {
    dims: [usize; 3],
    params: AlgoParams,
    trial_seed: u64,
    col_specs: [SketchSpec; 3],
    red_specs: [SketchSpec; 3],
    v: [Mat; 3],
    core: Vec<f64>,
    core_dims: [usize; 3],
    updates: u64,
}

impl StreamState {
    /// Zero state for an `n1 × n2 × n3` tensor. Uses the sketches of trial 0
    /// of the offline pipeline with the same parameters.
    pub fn new(dims: [usize; 3], params: &AlgoParams) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::InvalidParam("stream dimensions must be positive".into()));
        }
        params.validate()?;
        let ts = trial_seed(params.seed, 0);
        let col_specs: [SketchSpec; 3] = std::array::from_fn(|m| column_sketch(dims, m + 1, params, ts));
        let red_specs = reduce_sketches(dims, [true; 3], params, ts);
        let v: [Mat; 3] = std::array::from_fn(|m| Mat::zeros(dims[m], col_specs[m].output_dim));
        let core_dims: [usize; 3] = std::array::from_fn(|m| red_specs[m].output_dim);
        Ok(StreamState {
            dims,
            params: params.clone(),
            trial_seed: ts,
            col_specs,
            red_specs,
            v,
            core: vec![0.0; core_dims.iter().product()],
            core_dims,
            updates: 0,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn params(&self) -> &AlgoParams {
        &self.params
    }

    pub fn column_specs(&self) -> &[SketchSpec; 3] {
        &self.col_specs
    }

    pub fn reduce_specs(&self) -> &[SketchSpec; 3] {
        &self.red_specs
    }

    /// Current `V_t = A_t S_t`.
    pub fn sketches(&self) -> &[Mat; 3] {
        &self.v
    }

    /// Current `C = A(T1, T2, T3)`.
    pub fn core(&self) -> Tensor3 {
        Tensor3::from_dense(self.core_dims, self.core.clone()).expect("core buffer matches dims")
    }

    pub fn update_count(&self) -> u64 {
        self.updates
    }

    /// True when every accumulator entry is exactly zero.
    pub fn is_zero(&self) -> bool {
        self.v.iter().all(|m| m.iter().all(|&x| x == 0.0)) && self.core.iter().all(|&x| x == 0.0)
    }

    /// Words of state: `Σ n_t s_t + t1 t2 t3` accumulator entries plus the
    /// seed words of the six sketches.
    pub fn space_words(&self) -> usize {
        let acc: usize = (0..3).map(|m| self.dims[m] * self.col_specs[m].output_dim).sum();
        let seeds: usize = self.col_specs.iter().chain(self.red_specs.iter()).map(|s| s.seed_words()).sum();
        acc + self.core.len() + seeds
    }

    /// Apply one update.
    pub fn update(&mut self, u: Update) -> Result<()> {
        let [n1, n2, n3] = self.dims;
        if u.i >= n1 || u.j >= n2 || u.l >= n3 {
            return Err(Error::Index(format!("update ({}, {}, {}) outside {:?}", u.i, u.j, u.l, self.dims)));
        }
        if !u.delta.is_finite() {
            return Err(Error::InvalidParam("update delta must be finite".into()));
        }
        self.updates += 1;
        for m in 0..3 {
            let (row, col) = Tensor3::flat_index(self.dims, m + 1, u.i, u.j, u.l);
            let v = &mut self.v[m];
            self.col_specs[m].for_each_in_column(col, |r, w| v[(row, r)] += u.delta * w);
        }
        let mut img: [Vec<(usize, f64)>; 3] = Default::default();
        for (m, idx) in [u.i, u.j, u.l].into_iter().enumerate() {
            self.red_specs[m].for_each_in_column(idx, |r, w| img[m].push((r, w)));
        }
        let [_, t2, t3] = self.core_dims;
        for &(a, wa) in &img[0] {
            for &(b, wb) in &img[1] {
                for &(c, wc) in &img[2] {
                    self.core[(a * t2 + b) * t3 + c] += u.delta * wa * wb * wc;
                }
            }
        }
        Ok(())
    }

    /// Apply a whole stream in one pass, taking ownership of it. Returns the
    /// number of updates applied.
    pub fn consume<I: IntoIterator<Item = Update>>(&mut self, updates: I) -> Result<usize> {
        let mut n = 0;
        for u in updates {
            self.update(u)?;
            n += 1;
        }
        Ok(n)
    }

    /// `Y_t = T_t V_t` together with `C`.
    pub fn reduced_problem(&self) -> Result<ReducedProblem> {
        let mut y = Vec::with_capacity(3);
        for m in 0..3 {
            let op = self.red_specs[m].realize()?;
            y.push(map_left(&op, &self.v[m])?);
        }
        let y: [Mat; 3] = y.try_into().expect("three modes");
        let seeds = [self.red_specs[0].seed, self.red_specs[1].seed, self.red_specs[2].seed];
        ReducedProblem::new(y, self.core(), seeds)
    }

    /// Solve from the sketches. Equals trial 0 of the offline pipeline on the
    /// accumulated tensor.
    pub fn finalize(&self, mode: FinalizeMode) -> Result<FactorTriple> {
        if self.params.k == 0 {
            return Ok(FactorTriple::zeros(self.dims, 0));
        }
        let rp = self.reduced_problem()?;
        match mode {
            FinalizeMode::Bicriteria => Ok(cubic_from_sketches(&self.v, &rp)?.to_factors()),
            FinalizeMode::RankK => rank_k_from_sketches(&self.v, &rp, &self.params, self.trial_seed),
        }
    }
}

/// The updates that build `t` from zero, in storage order.
pub fn updates_of(t: &Tensor3) -> Vec<Update> {
    let mut out = Vec::with_capacity(t.nnz());
    t.for_each_nonzero(|i, j, l, v| out.push(Update::new(i, j, l, v)));
    out
}

/// Tensor obtained by summing a stream of updates.
pub fn accumulate(dims: [usize; 3], updates: &[Update]) -> Result<Tensor3> {
    let entries = updates.iter().map(|u| (u.i, u.j, u.l, u.delta)).collect();
    Tensor3::from_entries(dims, entries)
}

//! Simulation of the arbitrary-partition protocol: the global tensor is the
//! sum of per-machine tensors and every word sent to or from the coordinator
//! is counted.
//!
//! Machines and the coordinator only interact through [`Transport`], which
//! records each message before handing it over.

use crate::error::{shape_err, Error, Result};
use crate::fro_lra::{
    column_sketch, map_left, reduce_sketches, solve_cubic, solve_rank_k, trial_seed, AlgoParams, ReducedProblem,
    als_seed,
};
use crate::linalg::Mat;
use crate::sketch::SketchSpec;
use crate::streaming::FinalizeMode;
use crate::tensor::{FactorTriple, Tensor3, TuckerModel};
use serde::Serialize;

/// Bits per word in the ledger.
pub const WORD_BITS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Seeds,
    Sketches,
    Core,
    Solution,
    Shares,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    ToCoordinator,
    ToMachine,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LedgerEntry {
    pub phase: Phase,
    pub machine: usize,
    pub direction: Direction,
    pub words: usize,
}

/// Word counts of every message, in send order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CommLedger {
    pub word_bits: usize,
    pub entries: Vec<LedgerEntry>,
}

impl CommLedger {
    pub fn total(&self) -> usize {
        self.entries.iter().map(|e| e.words).sum()
    }

    pub fn phase_total(&self, phase: Phase) -> usize {
        self.entries.iter().filter(|e| e.phase == phase).map(|e| e.words).sum()
    }

    pub fn machine_total(&self, machine: usize) -> usize {
        self.entries.iter().filter(|e| e.machine == machine).map(|e| e.words).sum()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let phases = [Phase::Seeds, Phase::Sketches, Phase::Core, Phase::Solution, Phase::Shares];
        let per_phase: serde_json::Map<String, serde_json::Value> = phases
            .iter()
            .map(|p| (serde_json::to_value(p).unwrap().as_str().unwrap().to_string(), self.phase_total(*p).into()))
            .collect();
        serde_json::json!({
            "word_bits": self.word_bits,
            "total_words": self.total(),
            "per_phase": per_phase,
            "entries": self.entries,
        })
    }
}

/// Message contents.
#[derive(Clone, Debug)]
pub enum Payload {
    Seeds(Vec<SketchSpec>),
    Matrices(Vec<Mat>),
    Tensor(Tensor3),
}

impl Payload {
    pub fn words(&self) -> usize {
        match self {
            Payload::Seeds(specs) => specs.iter().map(|s| s.seed_words()).sum(),
            Payload::Matrices(ms) => ms.iter().map(|m| m.len()).sum(),
            Payload::Tensor(t) => t.len(),
        }
    }
}

/// Carries messages between the coordinator and machines, charging each one.
#[derive(Debug)]
pub struct Transport {
    ledger: CommLedger,
}

impl Transport {
    fn new() -> Self {
        Transport { ledger: CommLedger { word_bits: WORD_BITS, entries: Vec::new() } }
    }

    fn send(&mut self, phase: Phase, machine: usize, direction: Direction, payload: Payload) -> Payload {
        self.ledger.entries.push(LedgerEntry { phase, machine, direction, words: payload.words() });
        payload
    }

    fn into_ledger(self) -> CommLedger {
        self.ledger
    }
}

/// Protocol options.
#[derive(Clone, Debug, PartialEq)]
pub struct DistOptions {
    pub mode: FinalizeMode,
    /// Charge the sketch seeds as a broadcast instead of assuming them agreed
    /// in advance.
    pub broadcast_seeds: bool,
    /// Keep the factor shares on the machines instead of collecting them.
    pub skip_shares: bool,
}

impl Default for DistOptions {
    fn default() -> Self {
        DistOptions { mode: FinalizeMode::RankK, broadcast_seeds: false, skip_shares: false }
    }
}

/// Output of a protocol run.
#[derive(Clone, Debug)]
pub struct DistOutcome {
    /// Collected factors; `None` when shares were skipped.
    pub factors: Option<FactorTriple>,
    pub ledger: CommLedger,
}

struct Machine {
    data: Tensor3,
    col: Option<[SketchSpec; 3]>,
    red: Option<[SketchSpec; 3]>,
    z: Option<[Mat; 3]>,
}

impl Machine {
    fn receive_seeds(&mut self, msg: Payload) -> Result<()> {
        let Payload::Seeds(specs) = msg else { return Err(Error::Numerical("expected seeds".into())) };
        if specs.len() != 6 {
            return Err(Error::Numerical("seed message must carry six sketches".into()));
        }
        self.col = Some([specs[0].clone(), specs[1].clone(), specs[2].clone()]);
        self.red = Some([specs[3].clone(), specs[4].clone(), specs[5].clone()]);
        Ok(())
    }

    fn specs(&self) -> Result<(&[SketchSpec; 3], &[SketchSpec; 3])> {
        match (&self.col, &self.red) {
            (Some(c), Some(r)) => Ok((c, r)),
            _ => Err(Error::Numerical("machine has no sketch seeds".into())),
        }
    }

    /// `T_t A_{(t)} S_t` for the local tensor.
    fn sketch_message(&mut self) -> Result<Payload> {
        let (col, red) = self.specs()?;
        let mut z = Vec::with_capacity(3);
        let mut y = Vec::with_capacity(3);
        for m in 0..3 {
            let zm = col[m].realize()?.apply_right_flattening(&self.data, m + 1)?;
            y.push(map_left(&red[m].realize()?, &zm)?);
            z.push(zm);
        }
        self.z = Some(z.try_into().expect("three modes"));
        Ok(Payload::Matrices(y))
    }

    /// `A_i(T1, T2, T3)` for the local tensor.
    fn core_message(&self) -> Result<Payload> {
        let (_, red) = self.specs()?;
        let ops: Vec<_> = red.iter().map(|s| s.realize()).collect::<Result<_>>()?;
        Ok(Payload::Tensor(self.data.mode_apply_maps([Some(&ops[0]), Some(&ops[1]), Some(&ops[2])])?))
    }

    /// `A_{i,(t)} S_t X_t` for the broadcast solution.
    fn share_message(&self, msg: Payload) -> Result<Payload> {
        let Payload::Matrices(x) = msg else { return Err(Error::Numerical("expected solution matrices".into())) };
        let z = self.z.as_ref().ok_or_else(|| Error::Numerical("machine has no local sketches".into()))?;
        Ok(Payload::Matrices((0..3).map(|m| &z[m] * &x[m]).collect()))
    }
}

fn sum_matrices(acc: &mut Option<Vec<Mat>>, msg: Payload) -> Result<()> {
    let Payload::Matrices(ms) = msg else { return Err(Error::Numerical("expected matrices".into())) };
    match acc {
        None => *acc = Some(ms),
        Some(a) => {
            for (x, y) in a.iter_mut().zip(ms) {
                *x += y;
            }
        }
    }
    Ok(())
}

/// Run the protocol over `partitions`, whose sum is the global tensor. The
/// sketches are those of trial 0 of the centralized pipeline, so the output
/// equals it up to round-off.
pub fn distsim_run(partitions: &[Tensor3], params: &AlgoParams, opts: &DistOptions) -> Result<DistOutcome> {
    let Some(first) = partitions.first() else {
        return Err(Error::InvalidParam("at least one partition is required".into()));
    };
    let dims = first.dims();
    if let Some(p) = partitions.iter().position(|p| p.dims() != dims) {
        return shape_err(format!("partition {} has dims {:?}, expected {:?}", p, partitions[p].dims(), dims));
    }
    params.validate()?;
    let ts = trial_seed(params.seed, 0);
    let col: [SketchSpec; 3] = std::array::from_fn(|m| column_sketch(dims, m + 1, params, ts));
    let red = reduce_sketches(dims, [true; 3], params, ts);
    let mut net = Transport::new();
    let mut machines: Vec<Machine> =
        partitions.iter().map(|p| Machine { data: p.clone(), col: None, red: None, z: None }).collect();

    let seeds: Vec<SketchSpec> = col.iter().chain(red.iter()).cloned().collect();
    for (i, mach) in machines.iter_mut().enumerate() {
        let msg = if opts.broadcast_seeds {
            net.send(Phase::Seeds, i, Direction::ToMachine, Payload::Seeds(seeds.clone()))
        } else {
            Payload::Seeds(seeds.clone())
        };
        mach.receive_seeds(msg)?;
    }

    let mut y_sum: Option<Vec<Mat>> = None;
    let mut c_sum: Option<Tensor3> = None;
    for (i, mach) in machines.iter_mut().enumerate() {
        let y = net.send(Phase::Sketches, i, Direction::ToCoordinator, mach.sketch_message()?);
        sum_matrices(&mut y_sum, y)?;
        let Payload::Tensor(c) = net.send(Phase::Core, i, Direction::ToCoordinator, mach.core_message()?) else {
            unreachable!("core message is a tensor")
        };
        c_sum = Some(match c_sum {
            None => c.to_dense(),
            Some(acc) => acc.axpy(1.0, &c)?,
        });
    }
    let y: [Mat; 3] = y_sum.expect("at least one machine").try_into().expect("three modes");
    let rp = ReducedProblem::new(y, c_sum.expect("at least one machine"), [red[0].seed, red[1].seed, red[2].seed])?;

    let k = params.k;
    let (solution, core) = if k == 0 {
        let x: Vec<Mat> = (0..3).map(|m| Mat::zeros(col[m].output_dim, 0)).collect();
        (x, None)
    } else {
        match opts.mode {
            FinalizeMode::RankK => {
                let (x, _) = solve_rank_k(&rp, k, params.restarts, params.sweeps, als_seed(ts))?;
                (x.to_vec(), None)
            }
            FinalizeMode::Bicriteria => {
                let (core, maps) = solve_cubic(&rp)?;
                (maps.to_vec(), Some(core))
            }
        }
    };

    if opts.skip_shares {
        for i in 0..machines.len() {
            net.send(Phase::Solution, i, Direction::ToMachine, Payload::Matrices(solution.clone()));
        }
        return Ok(DistOutcome { factors: None, ledger: net.into_ledger() });
    }
    let mut shares: Option<Vec<Mat>> = None;
    for (i, mach) in machines.iter().enumerate() {
        let x = net.send(Phase::Solution, i, Direction::ToMachine, Payload::Matrices(solution.clone()));
        let share = net.send(Phase::Shares, i, Direction::ToCoordinator, mach.share_message(x)?);
        sum_matrices(&mut shares, share)?;
    }
    let [u, v, w]: [Mat; 3] = shares.expect("at least one machine").try_into().expect("three modes");
    let factors = match core {
        Some(core) => TuckerModel { core, bases: [u, v, w] }.to_factors(),
        None => FactorTriple::new(u, v, w)?,
    };
    Ok(DistOutcome { factors: Some(factors), ledger: net.into_ledger() })
}

/// Words the protocol sends for `machines` machines, from message shapes alone.
pub fn expected_words(dims: [usize; 3], params: &AlgoParams, machines: usize, opts: &DistOptions) -> usize {
    let ts = trial_seed(params.seed, 0);
    let col: [SketchSpec; 3] = std::array::from_fn(|m| column_sketch(dims, m + 1, params, ts));
    let red = reduce_sketches(dims, [true; 3], params, ts);
    let s: [usize; 3] = std::array::from_fn(|m| col[m].output_dim);
    let t: [usize; 3] = std::array::from_fn(|m| red[m].output_dim);
    let sol_cols: [usize; 3] = match opts.mode {
        _ if params.k == 0 => [0; 3],
        FinalizeMode::RankK => [params.k; 3],
        FinalizeMode::Bicriteria => s,
    };
    let seeds: usize = col.iter().chain(red.iter()).map(|x| x.seed_words()).sum();
    let mut per = (0..3).map(|m| t[m] * s[m] + s[m] * sol_cols[m]).sum::<usize>() + t.iter().product::<usize>();
    if opts.broadcast_seeds {
        per += seeds;
    }
    if !opts.skip_shares {
        per += (0..3).map(|m| dims[m] * sol_cols[m]).sum::<usize>();
    }
    machines * per
}

/// Split `a` into `parts` tensors summing to it: each nonzero goes to a random
/// machine with a random share of its value.
pub fn random_split(a: &Tensor3, parts: usize, seed: u64) -> Vec<Tensor3> {
    use rand::Rng;
    let parts = parts.max(1);
    let mut rng = crate::rng::chacha(seed);
    let mut entries: Vec<Vec<(usize, usize, usize, f64)>> = vec![Vec::new(); parts];
    a.for_each_nonzero(|i, j, l, v| {
        let p = rng.random_range(0..parts);
        let q = rng.random_range(0..parts);
        if p == q {
            entries[p].push((i, j, l, v));
        } else {
            let f: f64 = rng.random_range(-1.0..2.0);
            entries[p].push((i, j, l, f * v));
            entries[q].push((i, j, l, v - f * v));
        }
    });
    entries
        .into_iter()
        .map(|e| Tensor3::from_entries(a.dims(), e).expect("entries lie inside the tensor"))
        .collect()
}

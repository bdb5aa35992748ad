//! Command-line front end.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use sketchlra::bench::{run_acceptance, suite_json, SUITE_SEED};
use sketchlra::curt::{curt_decompose, matrix_cur, CurtOptions};
use sketchlra::distsim::{distsim_run, DistOptions};
use sketchlra::fro_lra::{bicriteria_cubic, bicriteria_quadratic, fro_rank_k, AlgoParams, Approach};
use sketchlra::io::{
    read_matrix_file, read_tns_file, write_factors, write_matrix_file, write_meta, write_tns_file, Meta, UpdateReader,
};
use sketchlra::l1_lra::{l1_bicriteria, L1Params};
use sketchlra::planted::{planted_with_noise, planted_with_outliers};
use sketchlra::streaming::{FinalizeMode, StreamState};
use sketchlra::tensor::{residual_fro2, residual_l1};
use sketchlra::{Error, FactorTriple, Matrix, Result, Tensor3};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Parser)]
#[command(name = "sketchlra", version, about = "Sketching-based low-rank approximation of third-order tensors")]
struct Cli {
    /// Run every stage sequentially.
    #[arg(long, global = true)]
    reproducible: bool,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Low-rank approximation of a .tns tensor.
    Decompose(DecomposeArgs),
    /// CURT decomposition: actual columns, rows and tubes plus a small core.
    Curt(CurtArgs),
    /// CUR decomposition of a dense matrix file.
    Cur(CurArgs),
    /// One pass over an update stream, then finalize.
    Stream(StreamArgs),
    /// Simulated distributed protocol over tensor partitions.
    Distsim(DistArgs),
    /// Generate planted instances or run the acceptance suite.
    Bench(BenchArgs),
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 0.5)]
    eps: f64,
    /// Root seed; the SEED environment variable takes precedence.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for factors and meta.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum NormArg {
    Fro,
    L1,
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum ModeArg {
    RankK,
    Quadratic,
    Cubic,
}

#[derive(Clone, Copy, ValueEnum)]
enum ApproachArg {
    Reduced,
    Tensorsketch,
}

#[derive(Args)]
struct DecomposeArgs {
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = NormArg::Fro)]
    norm: NormArg,
    #[arg(long, value_enum, default_value_t = ModeArg::Quadratic)]
    mode: ModeArg,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, value_enum, default_value_t = ApproachArg::Reduced)]
    approach: ApproachArg,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct CurtArgs {
    input: PathBuf,
    #[arg(long, default_value_t = 9)]
    trials: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct CurArgs {
    input: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum FinalizeArg {
    Cubic,
    RankK,
}

impl FinalizeArg {
    fn mode(self) -> FinalizeMode {
        match self {
            FinalizeArg::Cubic => FinalizeMode::Bicriteria,
            FinalizeArg::RankK => FinalizeMode::RankK,
        }
    }

    fn name(self) -> &'static str {
        match self {
            FinalizeArg::Cubic => "cubic",
            FinalizeArg::RankK => "rank-k",
        }
    }
}

#[derive(Args)]
struct StreamArgs {
    /// Update file with `i j l delta` lines.
    input: PathBuf,
    /// Tensor dimensions as n1,n2,n3.
    #[arg(long, value_delimiter = ',', required = true)]
    dims: Vec<usize>,
    #[arg(long, value_enum, default_value_t = FinalizeArg::Cubic)]
    mode: FinalizeArg,
    /// Optional .tns file to evaluate the result against.
    #[arg(long)]
    reference: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct DistArgs {
    /// One .tns file per machine.
    #[arg(required = true)]
    parts: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = FinalizeArg::RankK)]
    mode: FinalizeArg,
    #[arg(long)]
    broadcast_seeds: bool,
    #[arg(long)]
    skip_shares: bool,
    /// Write the communication ledger here as JSON.
    #[arg(long)]
    ledger: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    Planted,
    Outliers,
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    Acceptance,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_enum, conflicts_with = "suite")]
    gen: Option<GenKind>,
    #[arg(long, value_enum)]
    suite: Option<Suite>,
    #[arg(long, default_value_t = 60)]
    n: usize,
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Noise ratio ‖E‖/‖planted‖, or outlier fraction for `--gen outliers`.
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 100.0)]
    magnitude: f64,
    #[arg(long)]
    seed: Option<u64>,
    /// Output .tns file for --gen, or JSON file for --suite.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn env_seed(flag: u64) -> Result<u64> {
    match std::env::var("SEED") {
        Ok(s) if !s.trim().is_empty() => {
            s.trim().parse().map_err(|_| Error::InvalidParam(format!("SEED must be an unsigned integer, got '{s}'")))
        }
        _ => Ok(flag),
    }
}

fn costs(a: &Tensor3, f: &FactorTriple) -> Result<(f64, f64)> {
    Ok((residual_fro2(a, f)?, residual_l1(a, f)?))
}

fn finish(out: Option<&Path>, f: Option<&FactorTriple>, meta: &Meta, extra: Value) -> Result<Value> {
    if let Some(dir) = out {
        if let Some(f) = f {
            write_factors(dir, f)?;
        }
        write_meta(dir, meta)?;
    }
    let mut report = serde_json::to_value(meta).map_err(|e| Error::Numerical(e.to_string()))?;
    if let (Some(obj), Value::Object(more)) = (report.as_object_mut(), extra) {
        obj.extend(more);
    }
    Ok(report)
}

fn check_eps(eps: f64) -> Result<()> {
    if !eps.is_finite() || eps <= 0.0 {
        return Err(Error::InvalidParam(format!("eps must be positive, got {eps}")));
    }
    Ok(())
}

fn decompose(args: &DecomposeArgs) -> Result<Value> {
    let c = &args.common;
    check_eps(c.eps)?;
    let seed = env_seed(c.seed)?;
    let a = read_tns_file(&args.input)?;
    let start = Instant::now();
    let (algo, factors) = if c.k == 0 {
        ("zero", FactorTriple::zeros(a.dims(), 0))
    } else if args.norm == NormArg::L1 {
        let mut p = L1Params::new(c.k, seed);
        if let Some(t) = args.trials {
            p.trials = t;
        }
        ("l1-bicriteria", l1_bicriteria(&a, &p)?.factors)
    } else {
        let mut p = AlgoParams::new(c.k, c.eps, seed);
        if let Some(t) = args.trials {
            p.trials = t;
        }
        p.approach = match args.approach {
            ApproachArg::Reduced => Approach::Reduced,
            ApproachArg::Tensorsketch => Approach::TensorSketch,
        };
        match args.mode {
            ModeArg::RankK => ("rank-k", fro_rank_k(&a, &p)?.factors),
            ModeArg::Quadratic => ("quadratic", bicriteria_quadratic(&a, &p)?.factors),
            ModeArg::Cubic => ("cubic", bicriteria_cubic(&a, &p)?.factors),
        }
    };
    let elapsed_ms = start.elapsed().as_millis() as u64;
    let (fro2, l1) = costs(&a, &factors)?;
    let meta = Meta {
        algo: algo.into(),
        k: c.k,
        eps: c.eps,
        rank: factors.rank(),
        cost_fro2: Some(fro2),
        cost_l1: Some(l1),
        seed,
        elapsed_ms,
    };
    let extra = json!({"dims": a.dims(), "input_fro2": a.fro_norm2(), "relative_fro": (fro2 / a.fro_norm2()).sqrt()});
    finish(c.out.as_deref(), Some(&factors), &meta, extra)
}

fn one_based(idx: &[usize]) -> Vec<usize> {
    idx.iter().map(|i| i + 1).collect()
}

fn curt(args: &CurtArgs) -> Result<Value> {
    let c = &args.common;
    check_eps(c.eps)?;
    let seed = env_seed(c.seed)?;
    let a = read_tns_file(&args.input)?;
    if c.k == 0 {
        return Err(Error::InvalidParam("CURT needs k >= 1".into()));
    }
    let start = Instant::now();
    let f = fro_rank_k(&a, &AlgoParams::new(c.k, c.eps, seed))?.factors;
    let opts = CurtOptions { trials: args.trials, ..Default::default() };
    let res = curt_decompose(&a, &f, c.eps, seed, &opts)?;
    let elapsed_ms = start.elapsed().as_millis() as u64;
    let factors = res.factors();
    let (fro2, l1) = costs(&a, &factors)?;
    if let Some(dir) = &c.out {
        std::fs::create_dir_all(dir)?;
        for (name, m) in [("C", &res.cmat), ("R", &res.rmat), ("T", &res.tmat), ("P1", &res.p1), ("P2", &res.p2), ("P3", &res.p3)] {
            write_matrix_file(&dir.join(format!("{name}.txt")), m)?;
        }
    }
    let meta = Meta { algo: "curt".into(), k: c.k, eps: c.eps, rank: factors.rank(), cost_fro2: Some(fro2), cost_l1: Some(l1), seed, elapsed_ms };
    let extra = json!({
        "sample_counts": [res.col_idx.len(), res.row_idx.len(), res.tube_idx.len()],
        "columns": one_based(&res.col_idx), "rows": one_based(&res.row_idx), "tubes": one_based(&res.tube_idx),
        "trial": res.trial,
    });
    finish(c.out.as_deref(), Some(&factors), &meta, extra)
}

fn cur(args: &CurArgs) -> Result<Value> {
    let c = &args.common;
    check_eps(c.eps)?;
    let seed = env_seed(c.seed)?;
    let m = read_matrix_file(&args.input)?;
    let start = Instant::now();
    let res = matrix_cur(&Matrix::Dense(m.clone()), c.k, c.eps, seed)?;
    let elapsed_ms = start.elapsed().as_millis() as u64;
    let approx = res.approximation();
    let l1: f64 = (&approx - &m).iter().map(|x| x.abs()).sum();
    if let Some(dir) = &c.out {
        std::fs::create_dir_all(dir)?;
        write_matrix_file(&dir.join("C.txt"), &res.c)?;
        write_matrix_file(&dir.join("U.txt"), &res.u)?;
        write_matrix_file(&dir.join("R.txt"), &res.r)?;
    }
    let meta = Meta {
        algo: "cur".into(),
        k: c.k,
        eps: c.eps,
        rank: c.k.min(res.u.nrows()).min(res.u.ncols()),
        cost_fro2: Some(res.cost_fro2),
        cost_l1: Some(l1),
        seed,
        elapsed_ms,
    };
    let extra = json!({
        "sample_counts": [res.col_idx.len(), res.row_idx.len()],
        "columns": one_based(&res.col_idx), "rows": one_based(&res.row_idx),
    });
    finish(c.out.as_deref(), None, &meta, extra)
}

fn stream(args: &StreamArgs) -> Result<Value> {
    let c = &args.common;
    check_eps(c.eps)?;
    let seed = env_seed(c.seed)?;
    let dims: [usize; 3] = args
        .dims
        .as_slice()
        .try_into()
        .map_err(|_| Error::InvalidParam(format!("--dims needs three values, got {}", args.dims.len())))?;
    let params = AlgoParams::new(c.k, c.eps, seed).with_trials(1);
    let start = Instant::now();
    let mut st = StreamState::new(dims, &params)?;
    let file = std::fs::File::open(&args.input)?;
    for u in UpdateReader::new(BufReader::new(file), dims) {
        st.update(u?)?;
    }
    let factors = st.finalize(args.mode.mode())?;
    let elapsed_ms = start.elapsed().as_millis() as u64;
    let (fro2, l1) = match &args.reference {
        Some(p) => {
            let (f, l) = costs(&read_tns_file(p)?, &factors)?;
            (Some(f), Some(l))
        }
        None => (None, None),
    };
    let meta = Meta {
        algo: format!("stream-{}", args.mode.name()),
        k: c.k,
        eps: c.eps,
        rank: factors.rank(),
        cost_fro2: fro2,
        cost_l1: l1,
        seed,
        elapsed_ms,
    };
    let extra = json!({"updates": st.update_count(), "space_words": st.space_words()});
    finish(c.out.as_deref(), Some(&factors), &meta, extra)
}

fn distsim(args: &DistArgs) -> Result<Value> {
    let c = &args.common;
    check_eps(c.eps)?;
    let seed = env_seed(c.seed)?;
    let parts: Vec<Tensor3> = args.parts.iter().map(|p| read_tns_file(p)).collect::<Result<_>>()?;
    let params = AlgoParams::new(c.k, c.eps, seed).with_trials(1);
    let opts = DistOptions { mode: args.mode.mode(), broadcast_seeds: args.broadcast_seeds, skip_shares: args.skip_shares };
    let start = Instant::now();
    let out = distsim_run(&parts, &params, &opts)?;
    let elapsed_ms = start.elapsed().as_millis() as u64;
    let ledger = out.ledger.to_json();
    if let Some(p) = &args.ledger {
        std::fs::write(p, serde_json::to_string_pretty(&ledger).map_err(|e| Error::Numerical(e.to_string()))? + "\n")?;
    }
    let (fro2, l1, rank) = match &out.factors {
        Some(f) => {
            let mut total = parts[0].clone();
            for p in &parts[1..] {
                total = total.axpy(1.0, p)?;
            }
            let (a, b) = costs(&total, f)?;
            (Some(a), Some(b), f.rank())
        }
        None => (None, None, 0),
    };
    let meta = Meta {
        algo: format!("distsim-{}", args.mode.name()),
        k: c.k,
        eps: c.eps,
        rank,
        cost_fro2: fro2,
        cost_l1: l1,
        seed,
        elapsed_ms,
    };
    let extra = json!({"machines": parts.len(), "ledger": ledger});
    finish(c.out.as_deref(), out.factors.as_ref(), &meta, extra)
}

fn bench(args: &BenchArgs) -> Result<Value> {
    let seed = env_seed(args.seed.unwrap_or(SUITE_SEED))?;
    if let Some(kind) = args.gen {
        let out = args.out.as_ref().ok_or_else(|| Error::InvalidParam("--gen needs --out FILE.tns".into()))?;
        if args.n == 0 {
            return Err(Error::InvalidParam("n must be positive".into()));
        }
        if !(args.noise >= 0.0) {
            return Err(Error::InvalidParam("noise must be nonnegative".into()));
        }
        let dims = [args.n; 3];
        let inst = match kind {
            GenKind::Planted => planted_with_noise(dims, args.k, args.noise, seed),
            GenKind::Outliers => planted_with_outliers(dims, args.k, args.noise, args.magnitude, seed),
        };
        write_tns_file(out, &inst.tensor)?;
        let planted_norm = inst.factors.eval().fro_norm();
        return Ok(json!({
            "generated": out, "dims": dims, "k": args.k, "seed": seed, "nnz": inst.tensor.nnz(),
            "noise_fro": inst.noise_fro2.sqrt(), "noise_l1": inst.noise_l1, "planted_fro": planted_norm,
            "noise_ratio": if planted_norm > 0.0 { inst.noise_fro2.sqrt() / planted_norm } else { 0.0 },
        }));
    }
    match args.suite {
        Some(Suite::Acceptance) => {
            let results = run_acceptance(seed)?;
            for r in &results {
                eprintln!("{}", r.line());
            }
            let report = suite_json(&results);
            if let Some(p) = &args.out {
                std::fs::write(p, serde_json::to_string_pretty(&report).map_err(|e| Error::Numerical(e.to_string()))? + "\n")?;
            }
            Ok(report)
        }
        None => Err(Error::InvalidParam("bench needs --gen or --suite".into())),
    }
}

fn run(cli: &Cli) -> Result<Value> {
    sketchlra::par::set_reproducible(cli.reproducible);
    match &cli.cmd {
        Command::Decompose(a) => decompose(a),
        Command::Curt(a) => curt(a),
        Command::Cur(a) => cur(a),
        Command::Stream(a) => stream(a),
        Command::Distsim(a) => distsim(a),
        Command::Bench(a) => bench(a),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(report) => {
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            if report.get("suite").is_some() && report["passed"] == json!(false) {
                std::process::exit(1);
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}

use proptest::prelude::*;
use sketchlra::distsim::{distsim_run, expected_words, random_split, DistOptions};
use sketchlra::fro_lra::AlgoParams;
use sketchlra::l1_lra::weighted_median;
use sketchlra::rng::gaussian_at;
use sketchlra::sampling::kr_leverage_distribution_exact;
use sketchlra::streaming::{FinalizeMode, StreamState, Update};
use sketchlra::tensor::residual_fro2;
use sketchlra::{FactorTriple, Mat, Tensor3};

fn updates(dims: [usize; 3], len: usize, seed: u64) -> Vec<Update> {
    (0..len as u64)
        .map(|n| {
            let pick = |m: u64, d: usize| (gaussian_at(seed, n, m).abs() * 1e6) as usize % d;
            Update::new(pick(1, dims[0]), pick(2, dims[1]), pick(3, dims[2]), gaussian_at(seed, n, 0))
        })
        .collect()
}

fn max_gap(a: &StreamState, b: &StreamState) -> f64 {
    let mut gap = 0.0f64;
    for (x, y) in a.sketches().iter().zip(b.sketches()) {
        gap = gap.max((x - y).amax());
    }
    let (ca, cb) = (a.core().dense_values(), b.core().dense_values());
    ca.iter().zip(&cb).map(|(x, y)| (x - y).abs()).fold(gap, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn stream_state_ignores_update_order(seed in any::<u64>(), n in 3usize..7, len in 1usize..60) {
        let dims = [n, n + 1, n + 2];
        let params = AlgoParams::new(1, 0.5, seed).with_trials(1);
        let ups = updates(dims, len, seed);
        let mut fwd = StreamState::new(dims, &params).unwrap();
        fwd.consume(ups.clone()).unwrap();
        let mut rev = StreamState::new(dims, &params).unwrap();
        rev.consume(ups.into_iter().rev()).unwrap();
        prop_assert!(max_gap(&fwd, &rev) <= 1e-12);
    }

    #[test]
    fn stream_state_is_linear(seed in any::<u64>(), n in 3usize..6) {
        let dims = [n; 3];
        let params = AlgoParams::new(1, 0.5, seed).with_trials(1);
        let (a, b) = (updates(dims, 30, seed ^ 1), updates(dims, 30, seed ^ 2));
        let mut both = StreamState::new(dims, &params).unwrap();
        both.consume(a.iter().chain(&b).copied()).unwrap();
        let mut sa = StreamState::new(dims, &params).unwrap();
        sa.consume(a).unwrap();
        let mut sb = StreamState::new(dims, &params).unwrap();
        sb.consume(b).unwrap();
        for ((x, y), z) in sa.sketches().iter().zip(sb.sketches()).zip(both.sketches()) {
            prop_assert!((x + y - z).amax() <= 1e-12);
        }
    }

    #[test]
    fn empty_stream_finalizes_to_zero_model(seed in any::<u64>(), n in 2usize..6) {
        let params = AlgoParams::new(1, 0.5, seed).with_trials(1);
        let st = StreamState::new([n; 3], &params).unwrap();
        prop_assert!(st.is_zero());
        let f = st.finalize(FinalizeMode::RankK).unwrap();
        prop_assert_eq!(f.eval().fro_norm2(), 0.0);
    }

    #[test]
    fn ledger_matches_message_shapes(seed in any::<u64>(), parts in 1usize..5, mode in 0usize..2, flags in 0usize..4) {
        let dims = [5, 6, 4];
        let a = Tensor3::from_fn(dims, |i, j, l| gaussian_at(seed, (i * 6 + j) as u64, l as u64));
        let params = AlgoParams::new(1, 0.5, seed).with_trials(1);
        let opts = DistOptions {
            mode: if mode == 0 { FinalizeMode::RankK } else { FinalizeMode::Bicriteria },
            broadcast_seeds: flags & 1 == 1,
            skip_shares: flags & 2 == 2,
        };
        let split = random_split(&a, parts, seed);
        prop_assert_eq!(split.len(), parts);
        let out = distsim_run(&split, &params, &opts).unwrap();
        prop_assert_eq!(out.ledger.total(), expected_words(dims, &params, parts, &opts));
        prop_assert_eq!(out.factors.is_none(), opts.skip_shares);
    }

    #[test]
    fn weighted_median_minimizes_weighted_l1(vals in proptest::collection::vec(-10.0f64..10.0, 1..12), seed in any::<u64>()) {
        let wts: Vec<f64> = (0..vals.len()).map(|i| 0.05 + gaussian_at(seed, i as u64, 0).abs()).collect();
        let cost = |x: f64| vals.iter().zip(&wts).map(|(v, w)| w * (x - v).abs()).sum::<f64>();
        let m = weighted_median(&vals, &wts);
        let best = vals.iter().map(|&v| cost(v)).fold(f64::INFINITY, f64::min);
        prop_assert!(cost(m) <= best * (1.0 + 1e-12) + 1e-12);
    }

    #[test]
    fn kr_leverage_is_a_distribution(seed in any::<u64>(), k in 1usize..3, n1 in 2usize..5, n2 in 2usize..5) {
        let f = |rows: usize, cols: usize, s: u64| Mat::from_fn(rows, cols, |i, j| gaussian_at(s, i as u64, j as u64));
        let p = kr_leverage_distribution_exact(&[f(k, n1, seed), f(k, n2, seed ^ 7)]).unwrap();
        prop_assert_eq!(p.len(), n1 * n2);
        prop_assert!(p.iter().all(|&x| x >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn zero_factors_leave_full_residual(seed in any::<u64>(), n in 1usize..6) {
        let a = Tensor3::from_fn([n, n + 1, 2], |i, j, l| gaussian_at(seed, (i * 7 + j) as u64, l as u64));
        let r = residual_fro2(&a, &FactorTriple::zeros(a.dims(), 0)).unwrap();
        prop_assert!((r - a.fro_norm2()).abs() <= 1e-12 * a.fro_norm2().max(1.0));
    }
}

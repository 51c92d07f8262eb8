use proptest::prelude::*;

use spillover::econometrics::{fisher_exact_p, ols_fe, zscore, Design, Factor};
use spillover::measures::{innovation_index, received_spillover, MeasureParams};
use spillover::similarity::{batch_topk, cosine, topk_mean_similarity, Pool};
use spillover::synth::{oracle_ols, oracle_topk};

const T0: i32 = 1700;

fn vector(dim: usize) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-1.0f32..1.0, dim).prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3))
}

/// Members spread over the year window around `T0`, excluding `T0` itself.
fn members(dim: usize, max: usize) -> impl Strategy<Value = Vec<(i32, Vec<f32>)>> {
    prop::collection::vec((prop_oneof![-20i32..=-1, 1i32..=20], vector(dim)), 2..max)
}

fn pool_of(dim: usize, members: &[(i32, Vec<f32>)], year_map: impl Fn(i32) -> i32) -> Pool {
    Pool::from_members(
        dim,
        members
            .iter()
            .enumerate()
            .map(|(i, (off, v))| (format!("d{i:03}"), year_map(T0 + off), v.as_slice())),
    )
    .unwrap()
}

fn params(k: usize) -> MeasureParams {
    MeasureParams {
        k,
        rho: k,
        tau: 20,
        ..MeasureParams::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn kernel_matches_oracle(query in vector(16), pool in prop::collection::vec(vector(16), 1..60), k in 1usize..80) {
        let p = Pool::from_members(16, pool.iter().enumerate().map(|(i, v)| (format!("p{i}"), 1700, v.as_slice()))).unwrap();
        let refs: Vec<&[f32]> = pool.iter().map(Vec::as_slice).collect();
        let got = topk_mean_similarity(&query, &p.view(), k).unwrap();
        let want = oracle_topk(&query, &refs, k).unwrap();
        prop_assert!((got - want).abs() <= 1e-9, "{got} vs {want}");
    }

    #[test]
    fn batch_equals_scalar(queries in prop::collection::vec(vector(8), 1..20), pool in prop::collection::vec(vector(8), 1..40), k in 1usize..10) {
        let p = Pool::from_members(8, pool.iter().enumerate().map(|(i, v)| (format!("p{i}"), 1700, v.as_slice()))).unwrap();
        let qs: Vec<&[f32]> = queries.iter().map(Vec::as_slice).collect();
        let batch = batch_topk(&qs, &p.view(), k).unwrap();
        for (q, b) in qs.iter().zip(&batch) {
            prop_assert_eq!(*b, topk_mean_similarity(q, &p.view(), k).unwrap());
        }
    }

    #[test]
    fn identical_pools_give_exactly_one(query in vector(12), half in prop::collection::vec((1i32..=20, vector(12)), 1..30), k in 1usize..25) {
        let mut all = Vec::new();
        for (off, v) in &half {
            all.push((*off, v.clone()));
            all.push((-*off, v.clone()));
        }
        let p = pool_of(12, &all, |y| y);
        let r = innovation_index(&query, T0, &p, &params(k)).unwrap();
        prop_assert_eq!(r.numerator, r.denominator);
    }

    #[test]
    fn window_swap_is_reciprocal(query in vector(12), m in members(12, 50), k in 1usize..25) {
        let p = pool_of(12, &m, |y| y);
        let swapped = pool_of(12, &m, |y| 2 * T0 - y);
        let (Ok(a), Ok(b)) = (innovation_index(&query, T0, &p, &params(k)), innovation_index(&query, T0, &swapped, &params(k))) else {
            return Ok(());
        };
        if let (Some(x), Some(y)) = (a.value(), b.value()) {
            prop_assert!((x * y - 1.0).abs() <= 1e-12, "{x} * {y}");
        }
    }

    #[test]
    fn rescaling_leaves_indices_unchanged(query in vector(12), m in members(12, 50), src in members(12, 30), k in 1usize..25, scale in 0.01f32..100.0) {
        let scaled = |v: &[f32]| v.iter().map(|x| x * scale).collect::<Vec<f32>>();
        let m2: Vec<(i32, Vec<f32>)> = m.iter().map(|(y, v)| (*y, scaled(v))).collect();
        let s2: Vec<(i32, Vec<f32>)> = src.iter().map(|(y, v)| (*y, scaled(v))).collect();
        let (own, own2) = (pool_of(12, &m, |y| y), pool_of(12, &m2, |y| y));
        let (s, s2) = (pool_of(12, &src, |y| y), pool_of(12, &s2, |y| y));
        let q2 = scaled(&query);
        let p = params(k);
        if let (Ok(a), Ok(b)) = (innovation_index(&query, T0, &own, &p), innovation_index(&q2, T0, &own2, &p)) {
            prop_assert!((a.numerator - b.numerator).abs() <= 1e-6 && (a.denominator - b.denominator).abs() <= 1e-6);
        }
        if let (Ok(a), Ok(b)) = (received_spillover(&query, "q", T0, &own, &s, &p), received_spillover(&q2, "q", T0, &own2, &s2, &p)) {
            prop_assert!((a.numerator - b.numerator).abs() <= 1e-6 && (a.denominator - b.denominator).abs() <= 1e-6);
        }
    }

    #[test]
    fn pool_input_order_is_irrelevant(query in vector(10), m in members(10, 40), src in members(10, 20), k in 1usize..20, seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let named: Vec<(String, i32, Vec<f32>)> = m.iter().enumerate().map(|(i, (o, v))| (format!("d{i:03}"), T0 + o, v.clone())).collect();
        let mut shuffled = named.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let build = |items: &[(String, i32, Vec<f32>)]| Pool::from_members(10, items.iter().map(|(i, y, v)| (i.clone(), *y, v.as_slice()))).unwrap();
        let (a, b) = (build(&named), build(&shuffled));
        let s = pool_of(10, &src, |y| y);
        let p = params(k);
        let ia = innovation_index(&query, T0, &a, &p).map(|r| r.value());
        let ib = innovation_index(&query, T0, &b, &p).map(|r| r.value());
        prop_assert_eq!(ia.ok(), ib.ok());
        let ra = received_spillover(&query, "q", T0, &a, &s, &p).map(|r| r.value());
        let rb = received_spillover(&query, "q", T0, &b, &s, &p).map(|r| r.value());
        prop_assert_eq!(ra.ok(), rb.ok());
    }

    #[test]
    fn single_element_received_is_cosine_ratio(v in vector(6), a in vector(6), b in vector(6)) {
        let own = Pool::from_members(6, [("b".to_string(), T0 - 1, b.as_slice())]).unwrap();
        let src = Pool::from_members(6, [("a".to_string(), T0 - 2, a.as_slice())]).unwrap();
        let r = received_spillover(&v, "v", T0, &own, &src, &params(1000)).unwrap();
        prop_assert!((r.numerator - cosine(&v, &a).unwrap()).abs() < 1e-15);
        prop_assert!((r.denominator - cosine(&b, &a).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn zscore_is_idempotent(x in prop::collection::vec(-1e3f64..1e3, 2..100)) {
        prop_assume!(x.iter().any(|v| (v - x[0]).abs() > 1e-6));
        let z = zscore(&x).unwrap();
        let zz = zscore(&z).unwrap();
        for (a, b) in z.iter().zip(&zz) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn less_extreme_placebo_lowers_fisher_p(orig in -5.0f64..5.0, placebos in prop::collection::vec(-5.0f64..5.0, 1..60), shrink in 0.0f64..0.999) {
        prop_assume!(orig.abs() > 1e-6);
        let p = fisher_exact_p(orig, &placebos);
        let c = placebos.iter().filter(|b| b.abs() >= orig.abs()).count();
        let mut more = placebos.clone();
        more.push(orig * shrink);
        let q = fisher_exact_p(orig, &more);
        prop_assert!(q < p);
        prop_assert_eq!(q, (1 + c) as f64 / (placebos.len() + 2) as f64);
    }

    #[test]
    fn absorbed_fit_equals_dummy_fit(seed in any::<u64>(), rows in 40usize..200) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<usize> = (0..rows).map(|_| rng.random_range(0..5)).collect();
        let b: Vec<usize> = (0..rows).map(|_| rng.random_range(0..4)).collect();
        let x: Vec<f64> = (0..rows).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..rows).map(|i| 0.7 * x[i] + a[i] as f64 * 0.3 - b[i] as f64 * 0.2 + rng.random_range(-0.5..0.5)).collect();
        let design = Design::new("y", y.into_iter().map(Some).collect())
            .regressor("x", x.into_iter().map(Some).collect())
            .fixed_effect(Factor::new("a", a))
            .fixed_effect(Factor::new("b", b));
        let (Ok(fe), Ok(dummy)) = (ols_fe(&design), oracle_ols(&design)) else { return Ok(()); };
        let (e, o) = (fe.estimate("x").unwrap(), dummy.get("x").unwrap());
        prop_assert!((e - o).abs() <= 1e-8 * o.abs().max(1.0), "{e} vs {o}");
    }
}

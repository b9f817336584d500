use polarsrc::construct::construct_with_bounds;
use polarsrc::dist::DEFAULT_ALPHABET_BUDGET;
use polarsrc::layered::{layered_construct_exact, LayerSelection, LayeredSource};
use polarsrc::{
    construct_degraded, exact_construct, polar_transform, propagate_z_bounds, select_indices,
    BinParams, JointSource, Selection, TransformPath,
};
use proptest::prelude::*;

fn source(raw: Vec<(f64, f64)>) -> JointSource {
    let total: f64 = raw.iter().map(|(a, b)| a + b).sum();
    JointSource::new(
        raw.iter()
            .enumerate()
            .map(|(i, &(a, b))| (i as u64, a / total, b / total)),
    )
    .unwrap()
}

/// Random sources on up to `max` side symbols; some masses are exactly zero.
fn sources(max: usize) -> impl Strategy<Value = JointSource> {
    let mass = prop_oneof![1 => Just(0.0), 6 => 1e-6..1.0f64];
    prop::collection::vec((mass.clone(), mass), 1..=max)
        .prop_filter("needs mass", |v| v.iter().any(|(a, b)| a + b > 0.0))
        .prop_map(source)
}

fn layered_sources() -> impl Strategy<Value = LayeredSource> {
    (1u32..=3, 1u64..=4).prop_flat_map(|(m, ys)| {
        let cells = (1usize << m) * ys as usize;
        prop::collection::vec(0.0..1.0f64, cells)
            .prop_filter("needs mass", |v| v.iter().sum::<f64>() > 1e-3)
            .prop_map(move |v| {
                let total: f64 = v.iter().sum();
                let size = 1usize << m;
                LayeredSource::new(
                    m,
                    v.iter()
                        .enumerate()
                        .map(|(i, p)| ((i % size) as u32, (i / size) as u64, p / total)),
                )
                .unwrap()
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn plus_squares_z(s in sources(16)) {
        let z = s.bhattacharyya();
        prop_assert!((s.plus().bhattacharyya() - z * z).abs() <= 1e-12);
    }

    #[test]
    fn minus_is_sandwiched(s in sources(16)) {
        let z = s.bhattacharyya();
        let zm = s.minus().bhattacharyya();
        prop_assert!(zm >= z * (2.0 - z * z).sqrt() - 1e-12);
        prop_assert!(zm <= 2.0 * z - z * z + 1e-12);
    }

    #[test]
    fn entropy_is_conserved(s in sources(16)) {
        let h = s.cond_entropy();
        prop_assert!((s.plus().cond_entropy() + s.minus().cond_entropy() - 2.0 * h).abs() <= 1e-10);
    }
}

proptest! {
    #[test]
    fn metrics_ignore_ids_and_zero_symbols(s in sources(8), shift in 1u64..1000) {
        let relabeled = JointSource::new(
            s.symbols().iter().rev().map(|m| (m.id * 7 + shift, m.p0, m.p1))
                .chain([(u64::MAX, 0.0, 0.0)]),
        ).unwrap();
        prop_assert!((relabeled.bhattacharyya() - s.bhattacharyya()).abs() <= 1e-15);
        prop_assert!((relabeled.cond_entropy() - s.cond_entropy()).abs() <= 1e-15);
    }

    #[test]
    fn degradation_sandwich(s in sources(4), n in 1u32..=3, k in prop::sample::select(vec![2u32, 8, 32])) {
        let exact = exact_construct(&s, n).unwrap();
        let deg = construct_degraded(&s, n, BinParams::new(k).unwrap());
        for (d, e) in deg.metrics().iter().zip(exact.metrics()) {
            prop_assert!(d.h_upper >= e.h_upper - 1e-12);
            prop_assert!(d.z_upper >= e.z_upper - 1e-12);
        }
        let excess = deg.mean_entropy() - s.cond_entropy();
        prop_assert!(excess >= -1e-12);
        prop_assert!(excess <= f64::from(n) * f64::from(1u32 << n) / f64::from(k) + 1e-12);
    }

    // Bins for 2k nest inside bins for k, so one level of refinement can only
    // help. Deeper levels re-bin different sources and are not ordered per
    // index (differences of 1e-2 bits occur), but both remain safe.
    #[test]
    fn refining_bins_never_hurts_one_level(s in sources(6), k in 1u32..=40) {
        let coarse = construct_degraded(&s, 1, BinParams::new(k).unwrap());
        let fine = construct_degraded(&s, 1, BinParams::new(2 * k).unwrap());
        for (f, c) in fine.metrics().iter().zip(coarse.metrics()) {
            prop_assert!(f.h_upper <= c.h_upper + 1e-12);
            prop_assert!(f.z_upper <= c.z_upper + 1e-12);
        }
    }

    #[test]
    fn refined_and_coarse_both_bound_exact(s in sources(3), n in 1u32..=3, k in 1u32..=40) {
        let exact = exact_construct(&s, n).unwrap();
        for kk in [k, 2 * k] {
            let d = construct_degraded(&s, n, BinParams::new(kk).unwrap());
            for (m, e) in d.metrics().iter().zip(exact.metrics()) {
                prop_assert!(m.h_upper >= e.h_upper - 1e-12);
            }
        }
    }

    #[test]
    fn z_bounds_propagate(s in sources(3), len in 0usize..=3, bits in 0usize..8, slack in 0.0..0.2f64) {
        let path = TransformPath::from_index(bits % (1 << len), len as u32);
        let z0 = (s.bhattacharyya() + slack).min(1.0);
        let actual = s.synthesize(&path, DEFAULT_ALPHABET_BUDGET).unwrap().bhattacharyya();
        prop_assert!(propagate_z_bounds(z0, &path) >= actual - 1e-12);
    }

    #[test]
    fn bounded_construction_is_safe(s in sources(4), tracked in 0u32..=3) {
        let exact = exact_construct(&s, 3).unwrap();
        let bounded = construct_with_bounds(&s, 3, tracked, BinParams::new(16).unwrap()).unwrap();
        // Eight squarings amplify the rounding of the exact value.
        for (b, e) in bounded.metrics().iter().zip(exact.metrics()) {
            prop_assert!(b.h_upper >= e.h_upper - 1e-10 && b.z_upper >= e.z_upper - 1e-10);
        }
    }

    #[test]
    fn rate_selection_counts(s in sources(4), n in 1u32..=6, count in 0usize..=64, frac in 0.05..0.95f64) {
        let len = 1usize << n;
        let count = count.min(len);
        let spec = construct_degraded(&s, n, BinParams::new(8).unwrap());
        // A rate strictly between (count - 1)/N and count/N.
        let rate = if count == 0 { 0.0 } else { (count as f64 - frac) / len as f64 };
        prop_assert_eq!(select_indices(&spec, Selection::Rate(rate)).unwrap().selected().len(), count);
    }

    #[test]
    fn thresholds_are_monotone(s in sources(4), a in 0.0..1.0f64, b in 0.0..1.0f64) {
        let spec = construct_degraded(&s, 4, BinParams::new(8).unwrap());
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        for mode in [Selection::ZThreshold as fn(f64) -> Selection, Selection::EntropyThreshold] {
            let wide = select_indices(&spec, mode(lo)).unwrap();
            let narrow = select_indices(&spec, mode(hi)).unwrap();
            prop_assert!(narrow.selected().iter().all(|i| wide.selected().contains(i)));
        }
    }

    #[test]
    fn transform_is_linear_and_involutive(x in prop::collection::vec(0u8..2, 1024), y in prop::collection::vec(0u8..2, 1024)) {
        let tx = polar_transform(&x).unwrap();
        prop_assert_eq!(polar_transform(&tx).unwrap(), x.clone());
        let sum: Vec<u8> = x.iter().zip(&y).map(|(a, b)| a ^ b).collect();
        let ty = polar_transform(&y).unwrap();
        let expected: Vec<u8> = tx.iter().zip(&ty).map(|(a, b)| a ^ b).collect();
        prop_assert_eq!(polar_transform(&sum).unwrap(), expected);
    }

    #[test]
    fn layer_entropies_follow_the_chain_rule(ls in layered_sources()) {
        let sum: f64 = ls.layer_entropies().iter().sum();
        prop_assert!((sum - ls.cond_entropy()).abs() <= 1e-10);
    }

    #[test]
    fn first_layer_ignores_higher_bits(ls in layered_sources()) {
        // Layer 1 only sees the marginal of the least significant bit.
        let first = ls.layer_marginal(1).unwrap();
        let mut rows = std::collections::BTreeMap::<u64, (f64, f64)>::new();
        for (x, y, p) in ls.entries() {
            let e = rows.entry(y).or_default();
            if x & 1 == 0 { e.0 += p } else { e.1 += p }
        }
        let direct = JointSource::new(rows.into_iter().map(|(y, (a, b))| (y, a, b))).unwrap();
        prop_assert!((first.cond_entropy() - direct.cond_entropy()).abs() <= 1e-12);
        if ls.m() > 1 {
            let spec = layered_construct_exact(&ls, 2, LayerSelection::ZThreshold(0.5)).unwrap();
            let alone = select_indices(&exact_construct(&direct, 2).unwrap(), Selection::ZThreshold(0.5)).unwrap();
            for (a, b) in spec.layers[0].metrics().iter().zip(alone.metrics()) {
                prop_assert!((a.h_upper - b.h_upper).abs() <= 1e-12 && (a.z_upper - b.z_upper).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn transform_is_involutive_exhaustively() {
    for len in [1usize, 2, 4, 8, 16] {
        for w in 0u32..(1 << len) {
            let x: Vec<u8> = (0..len).map(|t| ((w >> t) & 1) as u8).collect();
            assert_eq!(polar_transform(&polar_transform(&x).unwrap()).unwrap(), x);
        }
    }
}

#[test]
fn erasure_minus_is_exact() {
    for i in 1..=9 {
        let s = JointSource::erasure(f64::from(i) / 10.0);
        let z = s.bhattacharyya();
        assert!((s.minus().bhattacharyya() - (2.0 * z - z * z)).abs() <= 1e-12);
    }
}

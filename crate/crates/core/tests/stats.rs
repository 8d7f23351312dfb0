use netpricing::stats::{empirical_quantile, median, normal_cdf, normal_quantile, RngStream};
use proptest::prelude::*;
use rand::RngCore;

// First four u64 outputs per stream; reproduced by a standalone ChaCha8
// implementation keyed with SHA-256 of the stream path.
const GOLDEN: [(&[&str], &[u64]); 3] = [
    (&[], &[0x06df354ad3bbd1c9, 0xb08e15722c4d9cc3, 0x511b00e7161c490b, 0xc15e7a8b7424e2c9]),
    (&["panel", "#1600", "#3"], &[0x16a56c6d2657b242, 0x613256208c92648d, 0xdfcc827fa2293951, 0xffe1d462eade65c8]),
    (&["bootstrap", "#0"], &[0x770cbc77823a7daa, 0x4585058829360749, 0x2fc61f4f92937765, 0x4484b5d669b5db42]),
];

fn stream_at(path: &[&str]) -> RngStream {
    path.iter().fold(RngStream::new(20240611), |s, p| match p.strip_prefix('#') {
        Some(i) => s.index(i.parse().unwrap()),
        None => s.child(p),
    })
}

#[test]
fn golden_sequences() {
    for (path, expect) in GOLDEN {
        let mut rng = stream_at(path).rng();
        let got: Vec<u64> = (0..4).map(|_| rng.next_u64()).collect();
        assert_eq!(got, expect, "path {path:?}");
    }
}

#[test]
fn distinct_paths_do_not_collide() {
    let root = RngStream::new(7);
    let mut streams = vec![root.clone(), root.child("a"), root.child("b"), root.child("a").child("b")];
    streams.extend((0..50).map(|i| root.child("panel").index(i)));
    streams.push(root.index(0));
    let firsts: Vec<Vec<u64>> = streams
        .iter()
        .map(|s| {
            let mut r = s.rng();
            (0..64).map(|_| r.next_u64()).collect()
        })
        .collect();
    for i in 0..firsts.len() {
        for j in i + 1..firsts.len() {
            assert_ne!(firsts[i], firsts[j], "{} vs {}", streams[i].describe(), streams[j].describe());
        }
    }
    // a label is not confused with an index of the same spelling
    assert_ne!(root.child("0").rng().next_u64(), root.index(0).rng().next_u64());
}

#[test]
fn quantile_matches_high_precision_reference() {
    // 50-digit mpmath values of √2·erfinv(2p − 1) at the exact double p
    let cases = [
        (1e-15, -7.941_345_326_170_996_8),
        (1e-12, -7.034_483_825_301_132),
        (1e-9, -5.997_807_015_007_687),
        (0.001, -3.090_232_306_167_813_5),
        (0.025, -1.959_963_984_540_054_2),
        (0.3, -0.524_400_512_708_040_8),
        (0.975, 1.959_963_984_540_054_2),
        (0.999_999, 4.753_424_308_817_088),
        (0.999_999_999, 5.997_807_019_601_637),
        (0.999_966_666_666_666_7, 3.987_878_936_606_943_6),
    ];
    for (p, z) in cases {
        let got = normal_quantile(p).unwrap();
        assert!((got - z).abs() <= 1e-9 * z.abs().max(1.0), "p = {p}: {got} vs {z}");
    }
    assert!((normal_quantile(0.975).unwrap() - 1.959964).abs() < 1e-5);
}

#[test]
fn cdf_matches_high_precision_reference() {
    let cases = [
        (-8.0, 6.220_960_574_271_784e-16),
        (-5.0, 2.866_515_718_791_939e-7),
        (-1.5, 0.066_807_201_268_858_07),
        (0.0, 0.5),
        (0.7, 0.758_036_347_776_927),
        (3.0, 0.998_650_101_968_369_9),
        (6.0, 0.999_999_999_013_412_4),
    ];
    for (x, p) in cases {
        assert!((normal_cdf(x) - p).abs() <= 1e-14, "Φ({x}) = {} vs {p}", normal_cdf(x));
    }
}

#[test]
fn quantile_is_increasing_and_inverts_the_cdf() {
    let grid: Vec<f64> = (1..10_000).map(|i| i as f64 / 10_000.0).collect();
    let z: Vec<f64> = grid.iter().map(|&p| normal_quantile(p).unwrap()).collect();
    assert!(z.windows(2).all(|w| w[0] < w[1]));
    for (&p, &zi) in grid.iter().zip(&z) {
        assert!((normal_cdf(zi) - p).abs() <= 1e-12, "p = {p}");
    }
    for bad in [0.0, 1.0, -0.1, f64::NAN] {
        assert!(normal_quantile(bad).is_err());
    }
}

#[test]
fn empirical_quantile_uses_ceiling_rank() {
    let xs = [4.0, 1.0, 3.0, 2.0];
    assert_eq!(empirical_quantile(&xs, 0.5).unwrap(), 2.0);
    assert_eq!(empirical_quantile(&xs, 0.51).unwrap(), 3.0);
    assert_eq!(empirical_quantile(&xs, 1.0).unwrap(), 4.0);
    assert_eq!(empirical_quantile(&xs, 0.0).unwrap(), 1.0);
    assert!(empirical_quantile(&[], 0.5).is_err());
    assert_eq!(median(&xs), 2.5);
}

proptest! {
    #[test]
    fn quantile_roundtrip_in_the_tails(e in 1.0f64..15.0, upper in any::<bool>()) {
        let p = 10f64.powf(-e);
        let p = if upper { 1.0 - p } else { p };
        let z = normal_quantile(p).unwrap();
        prop_assert!((normal_cdf(z) - p).abs() <= 1e-12);
    }

    #[test]
    fn empirical_quantile_is_an_order_statistic(xs in proptest::collection::vec(-10.0f64..10.0, 1..60), q in 0.0f64..=1.0) {
        let v = empirical_quantile(&xs, q).unwrap();
        let below = xs.iter().filter(|&&x| x <= v).count();
        let k = ((q * xs.len() as f64).ceil() as usize).clamp(1, xs.len());
        prop_assert!(xs.contains(&v));
        prop_assert!(below >= k);
        prop_assert!(xs.iter().filter(|&&x| x < v).count() < k);
    }
}

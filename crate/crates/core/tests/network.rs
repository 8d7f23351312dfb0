mod common;

use nalgebra::DMatrix;
use netpricing::linalg::{max_abs_diff, norm_1, norm_inf, submatrix};
use netpricing::network::{self, GeneratorSpec, Growth, NetworkInstance, NodeParams};
use proptest::prelude::*;

use common::random_instance;

fn neumann_partial(inst: &NetworkInstance, terms: usize) -> DMatrix<f64> {
    let n = inst.n_nodes;
    let lambda_inv = DMatrix::from_diagonal(&inst.b.map(|b| 0.5 / b));
    let step = &lambda_inv * &inst.g;
    let mut power = DMatrix::identity(n, n);
    let mut sum = DMatrix::identity(n, n);
    for _ in 0..terms {
        power = &power * &step;
        sum += &power;
    }
    sum * lambda_inv
}

#[test]
fn block_identities_on_200_instances() {
    for seed in 0..200 {
        let inst = random_instance(seed);
        let d = inst.derive().unwrap();
        let scale = d.m_inv.amax().max(1.0);
        let block = submatrix(&d.m_inv, &d.observable, &d.observable);
        assert!(max_abs_diff(&block, &d.h_inv) <= 1e-9 * scale, "seed {seed}");
        let h_direct = d.h.clone().try_inverse().unwrap();
        assert!(max_abs_diff(&h_direct, &d.h_inv) <= 1e-9 * scale, "seed {seed}");
        let assembled = d.block_assembled_m_inv();
        assert!(max_abs_diff(&assembled, &d.m_inv) <= 1e-9 * scale, "seed {seed}");
    }
}

#[test]
fn norm_and_spectrum_bounds_on_200_instances() {
    for seed in 0..200 {
        let inst = random_instance(seed);
        let d = inst.derive().unwrap();
        let bound = 1.0 / inst.zeta + 1e-9;
        assert!(norm_1(&d.m_inv) <= bound && norm_inf(&d.m_inv) <= bound, "seed {seed}");
        assert!(norm_1(&d.h_inv) <= bound && norm_inf(&d.h_inv) <= bound, "seed {seed}");
        let sv = d.m.clone().singular_values();
        let b_max = inst.b.max();
        assert!(sv.min() >= inst.zeta - 1e-9, "seed {seed}: σ_min {}", sv.min());
        assert!(sv.max() <= 4.0 * b_max - inst.zeta + 1e-9, "seed {seed}: σ_max {}", sv.max());
        let v_bound = (2.0 * inst.a.max() + inst.p_bar) / inst.zeta;
        assert!(d.v_o.amax() <= v_bound + 1e-9, "seed {seed}");
    }
}

#[test]
fn strongly_connected_inverse_is_positive() {
    let mut checked = 0;
    for seed in 0..200 {
        let inst = random_instance(seed);
        if !inst.is_strongly_connected() {
            continue;
        }
        let d = inst.derive().unwrap();
        assert!(d.m_inv.min() > 0.0, "seed {seed}");
        assert!(d.h_inv.min() > 0.0, "seed {seed}");
        checked += 1;
    }
    assert!(checked >= 50, "only {checked} strongly connected instances");
}

#[test]
fn neumann_series_converges_monotonically() {
    for seed in 0..10 {
        let inst = random_instance(seed);
        let m_inv = inst.derive().unwrap().m_inv;
        let mut last = f64::INFINITY;
        for terms in 0..60 {
            let err = norm_inf(&(&m_inv - neumann_partial(&inst, terms)));
            assert!(err <= last + 1e-15, "seed {seed}, K={terms}: {err} after {last}");
            last = err;
        }
        assert!(last < 1e-3, "seed {seed}: tail {last}");
    }
}

#[test]
fn banded_generator_validates_over_100_seeds() {
    let nodes = NodeParams {
        n_nodes: 50,
        ..NodeParams::default()
    };
    for seed in 0..100 {
        let inst = network::generate_banded(&nodes, 2, 1.0, seed).unwrap();
        assert!(inst.validate().unwrap().ok);
        for i in 0..50usize {
            for j in 0..50 {
                if i.abs_diff(j) > 2 || i == j {
                    assert_eq!(inst.g[(i, j)], 0.0);
                }
            }
        }
    }
}

#[test]
fn polynomial_decay_respects_entrywise_bound() {
    let nodes = NodeParams {
        n_nodes: 30,
        ..NodeParams::default()
    };
    for seed in 0..20 {
        let (theta, c): (f64, f64) = (1.5 + seed as f64 * 0.1, 0.8);
        let inst = network::generate_polynomial_decay(&nodes, theta, c, seed).unwrap();
        assert!(inst.validate().unwrap().ok);
        for i in 0..30usize {
            for j in 0..30 {
                if i != j {
                    let cap = c / (1.0 + i.abs_diff(j) as f64).powf(theta);
                    assert!(inst.g[(i, j)] <= cap * (1.0 + 1e-12));
                }
            }
        }
    }
}

#[test]
fn exponential_growth_random_digraph() {
    let spec = GeneratorSpec::BoundedGrowth {
        nodes: NodeParams {
            n_nodes: 40,
            ..NodeParams::default()
        },
        growth: Growth::Exponential { c_e: 4.0, d_e: 3.0 },
        weight_scale: 1.0,
    };
    for seed in 0..5 {
        let a = spec.generate(seed).unwrap();
        let b = spec.generate(seed).unwrap();
        assert_eq!(a, b);
        for i in 0..40 {
            let outdeg = (0..40).filter(|&j| a.g[(i, j)] > 0.0).count();
            assert_eq!(outdeg, 3);
        }
    }
}

#[test]
fn two_node_bonacich() {
    let g = DMatrix::from_row_slice(2, 2, &[0.0, 0.6, 0.6, 0.0]);
    for alpha in [0.1, 0.5, 1.2, 1.6] {
        let k = network::bonacich(alpha, &g).unwrap();
        let expect = 1.0 / (1.0 - alpha * 0.6);
        assert!((k[0] - expect).abs() < 1e-12 && (k[1] - expect).abs() < 1e-12);
    }
    assert!(network::bonacich(1.0 / 0.6 + 1e-3, &g).is_err());
}

#[test]
fn singular_instance_is_rejected() {
    // dominance holds with zero slack: M is singular but ζ is declared positive
    let mut inst = common::example_e1();
    inst.g = DMatrix::from_row_slice(3, 3, &[0.0, 2.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    inst.zeta = 1e-3;
    let report = inst.validate().unwrap();
    assert!(!report.ok);
    assert!(inst.derive().is_err());
}

fn permutation(n: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(&mut netpricing::stats::RngStream::new(seed).rng());
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn relabeling_permutes_derived_matrices(seed in 0u64..10_000) {
        let inst = random_instance(seed);
        let perm = permutation(inst.n_nodes, seed);
        let moved = inst.permuted(&perm).unwrap();
        let d0 = inst.derive().unwrap();
        let d1 = moved.derive().unwrap();
        for (a, &i) in d0.observable.iter().enumerate() {
            let a1 = d1.observable.iter().position(|&x| x == perm[i]).unwrap();
            prop_assert!((d0.v_o[a] - d1.v_o[a1]).abs() <= 1e-10);
            for (b, &j) in d0.observable.iter().enumerate() {
                let b1 = d1.observable.iter().position(|&x| x == perm[j]).unwrap();
                prop_assert!((d0.h_inv[(a, b)] - d1.h_inv[(a1, b1)]).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn json_roundtrip_is_exact(seed in 0u64..10_000) {
        let inst = random_instance(seed);
        let back = NetworkInstance::from_json(&inst.to_json().unwrap()).unwrap();
        prop_assert_eq!(back, inst);
    }

    #[test]
    fn scaling_the_gap_keeps_validity(seed in 0u64..10_000, shrink in 0.01f64..1.0) {
        let mut inst = random_instance(seed);
        inst.zeta *= shrink;
        prop_assert!(inst.validate().unwrap().ok);
        inst.zeta = inst.realized_gap() * 1.5 + 1e-6;
        prop_assert!(!inst.validate().unwrap().ok);
    }

    #[test]
    fn empty_latent_set_gives_m_block(seed in 0u64..10_000) {
        let mut inst = random_instance(seed);
        inst.observable = (0..inst.n_nodes).collect();
        let d = inst.derive().unwrap();
        prop_assert_eq!(&d.h, &d.m);
        prop_assert!(max_abs_diff(&(&d.h * &d.h_inv), &DMatrix::identity(inst.n_nodes, inst.n_nodes)) <= 1e-9);
        let expect = &d.h_inv * &inst.a;
        prop_assert!((&d.v_o - expect).amax() <= 1e-12 * d.v_o.amax().max(1.0));
    }
}

//! Reference implementations shared by the integration suites.
#![allow(dead_code)]

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use netpricing::conic::{DesignMoments, RowProgram};
use netpricing::equilibrium::{PriceSampler, ShockModel};
use netpricing::network::{self, GeneratorSpec, Growth, Metadata, NetworkInstance, NodeParams};
use netpricing::pricing::benchmark_prices;
use netpricing::stats::RngStream;
use rand::Rng;

/// Three nodes, node 2 latent, symmetric links 0–2 and 1–2 of weight 0.5.
pub fn example_e1() -> NetworkInstance {
    let mut g = DMatrix::zeros(3, 3);
    g[(0, 2)] = 0.5;
    g[(2, 0)] = 0.5;
    g[(1, 2)] = 0.5;
    g[(2, 1)] = 0.5;
    NetworkInstance {
        n_nodes: 3,
        observable: vec![0, 1],
        g,
        a: DVector::from_element(3, 2.0),
        b: DVector::from_element(3, 1.0),
        p_bar: 1.5,
        zeta: 1.0,
        labeling: vec![0, 1, 2],
        metadata: Metadata::default(),
    }
}

/// Minimize the z-eliminated objective over [−5, 5]^d: exhaustive coarse
/// grid, then a mesh-adaptive direct search from the four best cells. Each
/// poll tries 256 fresh random directions at the current mesh size; the mesh
/// is halved after three failed polls and the search stops below 1e-7.
pub fn grid_minimize(program: &RowProgram) -> (DVector<f64>, f64) {
    let d = program.d();
    let eval = |x: &DVector<f64>| program.reduced_objective(x);
    let points: usize = if d <= 2 { 201 } else { 41 };
    let h0 = 10.0 / (points - 1) as f64;
    let mut coarse: Vec<(f64, DVector<f64>)> = (0..points.pow(d as u32))
        .map(|idx| {
            let mut r = idx;
            let x = DVector::from_fn(d, |_, _| {
                let c = r % points;
                r /= points;
                -5.0 + c as f64 * h0
            });
            (eval(&x), x)
        })
        .collect();
    coarse.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut rng = RngStream::new(99).child("mesh-search").rng();
    let mut best = coarse[0].clone();
    for start in coarse.iter().take(4) {
        let mut cur = start.clone();
        let mut h = h0;
        let mut failures = 0;
        while h > 1e-7 {
            let mut improved = false;
            for _ in 0..256 {
                let dir = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..=1.0));
                let norm = dir.norm();
                if norm == 0.0 {
                    continue;
                }
                let cand = &cur.1 + dir * (h / norm);
                let f = eval(&cand);
                if f < cur.0 {
                    cur = (f, cand);
                    improved = true;
                }
            }
            if improved {
                failures = 0;
            } else {
                failures += 1;
                if failures >= 3 {
                    h /= 2.0;
                    failures = 0;
                }
            }
        }
        if cur.0 < best.0 {
            best = cur;
        }
    }
    (best.1, best.0)
}

/// Random tiny programs: d ∈ {2, 3}, n ∈ {3, …, 6}.
pub fn tiny_programs(count: usize, seed: u64) -> Vec<RowProgram> {
    let stream = RngStream::new(seed).child("tiny-programs");
    (0..count)
        .map(|i| {
            let mut rng = stream.index(i as u64).rng();
            let d = if i % 2 == 0 { 2 } else { 3 };
            let n = rng.gen_range(d + 1..=6);
            let design = DMatrix::from_fn(n, d, |_, j| if j == 0 { 1.0 } else { rng.gen_range(0.2..1.5) });
            let moments = Arc::new(DesignMoments::new(design).unwrap());
            let lambda = rng.gen_range(0.2..2.0);
            if i % 4 < 2 {
                let truth = DVector::from_fn(d, |_, _| rng.gen_range(-1.5..1.5));
                let y = &moments.design * truth + DVector::from_fn(n, |_, _| rng.gen_range(-0.3..0.3));
                RowProgram::dantzig(moments, y, 0, lambda, rng.gen_range(0.1..1.0))
            } else {
                let k = rng.gen_range(0..d);
                RowProgram::debias(moments, k, lambda)
            }
        })
        .collect()
}

/// Random validated instance with at most 30 nodes, cycling through the three
/// generator families and jittered node parameters.
pub fn random_instance(seed: u64) -> NetworkInstance {
    let mut rng = RngStream::new(seed).child("random-instance").rng();
    let nodes = NodeParams {
        n_nodes: rng.gen_range(2..=30),
        latent_fraction: rng.gen_range(0.0..0.7),
        b_value: rng.gen_range(0.5..2.0),
        a_value: 0.0,
        p_bar: rng.gen_range(0.5..1.5),
        weight_margin: rng.gen_range(0.05..0.8),
        symmetric: rng.gen_bool(0.3),
        jitter: rng.gen_range(0.0..0.15),
    };
    // a/p̄ in [1.2, 2.4) mixes interior and capped optimal prices
    let nodes = NodeParams {
        a_value: nodes.p_bar * rng.gen_range(1.2..2.4),
        ..nodes
    };
    let spec = match seed % 3 {
        0 => GeneratorSpec::Banded {
            nodes,
            bandwidth: rng.gen_range(1..=4),
            weight_scale: rng.gen_range(0.1..2.0),
        },
        1 => GeneratorSpec::PolynomialDecay {
            nodes,
            theta: rng.gen_range(1.2..4.0),
            c_scale: rng.gen_range(0.1..2.0),
        },
        _ => GeneratorSpec::BoundedGrowth {
            nodes,
            growth: Growth::Polynomial { c_p: 3.0, d_p: 1.0 },
            weight_scale: rng.gen_range(0.1..2.0),
        },
    };
    spec.generate(seed).expect("random instance generates")
}

/// Symmetric homogeneous instance (common a and b, symmetric G).
pub fn symmetric_instance(n_nodes: usize, bandwidth: usize, seed: u64) -> NetworkInstance {
    let nodes = NodeParams {
        n_nodes,
        latent_fraction: 0.4,
        symmetric: true,
        ..NodeParams::default()
    };
    network::generate_banded(&nodes, bandwidth, 1.0, seed).expect("symmetric instance")
}

/// Banded instance with `q` observable and `q` latent nodes.
pub fn banded_instance(n_nodes: usize, bandwidth: usize, seed: u64) -> NetworkInstance {
    let nodes = NodeParams {
        n_nodes,
        latent_fraction: 0.5,
        ..NodeParams::default()
    };
    network::generate_banded(&nodes, bandwidth, 1.0, seed).expect("banded instance")
}

/// Maximize the closed-form revenue on the lattice `resolution·Z^q ∩ [0, p̄]^q`:
/// a full scan at ten times the spacing, then a full scan of the fine lattice
/// within two coarse cells of the coarse winner.
pub fn lattice_revenue_max(v: &DVector<f64>, w: &DMatrix<f64>, p_bar: f64, resolution: f64) -> (DVector<f64>, f64) {
    let q = v.len();
    let top = (p_bar / resolution + 1e-9).floor() as i64;
    let f = |idx: &[i64]| {
        let p = DVector::from_iterator(q, idx.iter().map(|&k| (k as f64 * resolution).min(p_bar)));
        let val = netpricing::pricing::revenue(v, w, &p);
        (val, p)
    };
    let scan = |lo: &[i64], hi: &[i64], step: i64| {
        let counts: Vec<i64> = (0..q).map(|i| (hi[i] - lo[i]) / step + 1).collect();
        let total: i64 = counts.iter().product();
        let mut best = (f64::NEG_INFINITY, DVector::zeros(q), vec![0i64; q]);
        for flat in 0..total {
            let mut rem = flat;
            let idx: Vec<i64> = (0..q)
                .map(|i| {
                    let k = lo[i] + (rem % counts[i]) * step;
                    rem /= counts[i];
                    k
                })
                .collect();
            let (val, p) = f(&idx);
            if val > best.0 {
                best = (val, p, idx);
            }
        }
        best
    };
    let coarse = scan(&vec![0; q], &vec![top; q], 10);
    let lo: Vec<i64> = coarse.2.iter().map(|&k| (k - 20).max(0)).collect();
    let hi: Vec<i64> = coarse.2.iter().map(|&k| (k + 20).min(top)).collect();
    let fine = scan(&lo, &hi, 1);
    (fine.1, fine.0)
}

/// Small instances with three observable agents.
pub fn three_observable(seed: u64) -> NetworkInstance {
    let mut rng = RngStream::new(seed).child("three-observable").rng();
    let nodes = NodeParams {
        n_nodes: 6,
        latent_fraction: 0.5,
        a_value: rng.gen_range(1.6..3.0),
        p_bar: (rng.gen_range(0.8..1.5f64) * 1e3).round() / 1e3,
        jitter: rng.gen_range(0.0..0.3),
        ..NodeParams::default()
    };
    network::generate_banded(&nodes, rng.gen_range(1..=3), rng.gen_range(0.3..2.0), seed).unwrap()
}

/// Interior optima and a perturbation of each, 100 pairs in total.
pub fn perturbed_optima() -> Vec<(NetworkInstance, DVector<f64>, DVector<f64>)> {
    let mut out = Vec::new();
    let mut seed = 0;
    while out.len() < 100 {
        let inst = random_instance(seed);
        let d = inst.derive().unwrap();
        let star = benchmark_prices(&d).unwrap();
        if star.binding.is_empty() {
            let mut rng = RngStream::new(seed).child("perturb").rng();
            let radius = rng.gen_range(0.01..0.5) * d.p_bar;
            let p = star.prices.map(|x| (x + rng.gen_range(-radius..=radius)).clamp(0.0, d.p_bar));
            out.push((inst, star.prices, p));
        }
        seed += 1;
    }
    out
}

/// Default shock family scaled to the instance's truncation bound.
pub fn shock_for(inst: &NetworkInstance) -> ShockModel {
    let bound = ShockModel::default().bound(&inst.a, inst.p_bar);
    ShockModel { sigma: 0.3 * bound, ..ShockModel::default() }
}

/// Random instance with observable prices in [0, p̄] and scaled shocks.
pub fn random_triple(seed: u64) -> (NetworkInstance, DVector<f64>, DVector<f64>) {
    let inst = random_instance(seed);
    let d = inst.derive().unwrap();
    let stream = RngStream::new(seed).child("triple");
    let p_o = PriceSampler::Uniform { low: 0.0, high: 1.0 }.draw(&mut stream.child("p").rng(), d.n_observable(), inst.p_bar);
    let shock = shock_for(&inst);
    let xi = shock
        .draw(&mut stream.child("xi").rng(), inst.n_nodes, shock.bound(&inst.a, inst.p_bar))
        .unwrap();
    (inst, d.full_prices(&p_o), xi)
}

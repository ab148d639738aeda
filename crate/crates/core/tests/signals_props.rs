//! Norm lemmas, the block prox and best k-sparse approximation against direct oracles.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparsefault::signals::{
    best_k_sparse, block_soft_threshold, component_p_norm, estimate_rip_constant, pq_norm, recovery_bound, underline,
    zero_norm, ChannelKind, IdentityOperator, Signal, TimeGrid,
};

const SLACK: f64 = 1e-9;

fn exponent() -> impl Strategy<Value = f64> {
    prop_oneof![Just(1.0), Just(2.0), 1.0f64..6.0]
}

/// Signal on `m` channels; channels outside `support` are zero.
fn signal_with_support(seed: u64, m: usize, support: &[usize]) -> Signal {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = TimeGrid::new(rng.gen_range(0.5..3.0), rng.gen_range(4..40)).unwrap();
    let values = (0..m)
        .map(|c| {
            (0..grid.len())
                .map(|_| if support.contains(&c) { rng.gen_range(-2.0..2.0) } else { 0.0 })
                .collect()
        })
        .collect();
    Signal::new(grid, ChannelKind::Input, (0..m).collect(), values).unwrap()
}

fn on_grid(template: &Signal, seed: u64, support: &[usize]) -> Signal {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..template.n_channels())
        .map(|c| {
            (0..template.grid().len())
                .map(|_| if support.contains(&c) { rng.gen_range(-2.0..2.0) } else { 0.0 })
                .collect()
        })
        .collect();
    Signal::new(*template.grid(), ChannelKind::Input, template.nodes().to_vec(), values).unwrap()
}

fn split_support(mask: u32, m: usize) -> (Vec<usize>, Vec<usize>) {
    (0..m).partition(|c| mask & (1 << c) != 0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn pq_norm_axioms(seed in any::<u64>(), m in 1usize..7, p in exponent(), q in exponent(), scale in -5.0f64..5.0) {
        let all: Vec<usize> = (0..m).collect();
        let u = signal_with_support(seed, m, &all);
        let v = on_grid(&u, seed ^ 0x5eed, &all);
        let nu = pq_norm(&u, p, q).unwrap();
        let nv = pq_norm(&v, p, q).unwrap();
        prop_assert!(nu >= 0.0);
        prop_assert_eq!(pq_norm(&u.scaled(0.0), p, q).unwrap(), 0.0);
        let scaled = pq_norm(&u.scaled(scale), p, q).unwrap();
        prop_assert!((scaled - scale.abs() * nu).abs() <= SLACK * (1.0 + nu * scale.abs()));
        let sum = pq_norm(&u.add_scaled(1.0, &v).unwrap(), p, q).unwrap();
        prop_assert!(sum <= nu + nv + SLACK * (1.0 + nu + nv));
        // entrywise triangle inequality of the underline map
        let (uu, uv) = (underline(&u, p).unwrap(), underline(&v, p).unwrap());
        let us = underline(&u.add_scaled(1.0, &v).unwrap(), p).unwrap();
        for i in 0..m {
            prop_assert!(us[i] <= uu[i] + uv[i] + SLACK * (1.0 + uu[i] + uv[i]));
        }
    }

    #[test]
    fn sparse_norm_chain(seed in any::<u64>(), m in 1usize..8, mask in any::<u32>()) {
        let support: Vec<usize> = (0..m).filter(|c| mask & (1 << c) != 0).collect();
        let u = signal_with_support(seed, m, &support);
        let k = zero_norm(&u, 2.0, None).unwrap();
        prop_assert!(k <= support.len());
        let one = pq_norm(&u, 2.0, 1.0).unwrap();
        let two = pq_norm(&u, 2.0, 2.0).unwrap();
        let inf = underline(&u, 2.0).unwrap().into_iter().fold(0.0f64, f64::max);
        let k = k as f64;
        prop_assert!(one <= k.sqrt() * two + SLACK * (1.0 + one));
        prop_assert!(k.sqrt() * two <= k * inf + SLACK * (1.0 + two * k));
    }

    #[test]
    fn disjoint_support_additivity(seed in any::<u64>(), m in 2usize..8, mask in any::<u32>(), p in exponent(), q in exponent()) {
        let (a, b) = split_support(mask, m);
        let u = signal_with_support(seed, m, &a);
        let v = on_grid(&u, seed.wrapping_add(1), &b);
        let lhs = pq_norm(&u.add_scaled(1.0, &v).unwrap(), p, q).unwrap().powf(q);
        let rhs = pq_norm(&u, p, q).unwrap().powf(q) + pq_norm(&v, p, q).unwrap().powf(q);
        prop_assert!((lhs - rhs).abs() <= SLACK * (1.0 + rhs));
        // u + v and u - v have the same norm when the supports are disjoint
        let diff = pq_norm(&u.add_scaled(-1.0, &v).unwrap(), p, q).unwrap().powf(q);
        prop_assert!((diff - lhs).abs() <= SLACK * (1.0 + lhs));
    }

    #[test]
    fn disjoint_support_sqrt_two(seed in any::<u64>(), m in 2usize..8, mask in any::<u32>()) {
        let (a, b) = split_support(mask, m);
        let u = signal_with_support(seed, m, &a);
        let v = on_grid(&u, seed.wrapping_add(7), &b);
        let lhs = pq_norm(&u, 2.0, 2.0).unwrap() + pq_norm(&v, 2.0, 2.0).unwrap();
        let rhs = std::f64::consts::SQRT_2 * pq_norm(&u.add_scaled(1.0, &v).unwrap(), 2.0, 2.0).unwrap();
        prop_assert!(lhs <= rhs + SLACK * (1.0 + rhs));
    }
}

/// Minimizes `½||v - w||² + τ||v||` over `v = s w/||w||` on a grid of `s`.
fn ray_search(norm: f64, tau: f64) -> f64 {
    let objective = |s: f64| 0.5 * (norm - s).powi(2) + tau * s;
    (0..=1000)
        .map(|j| j as f64 / 1000.0 * norm)
        .min_by(|a, b| objective(*a).total_cmp(&objective(*b)))
        .unwrap()
}

#[test]
fn block_prox_matches_ray_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..100 {
        let w = signal_with_support(trial, 1, &[0]);
        let norm = pq_norm(&w, 2.0, 2.0).unwrap();
        let tau = rng.gen_range(0.0..1.5) * norm;
        let v = block_soft_threshold(&w, tau, 2.0).unwrap();
        // the prox keeps the direction; compare the length
        let s = pq_norm(&v, 2.0, 2.0).unwrap();
        let dot = v.inner(&w).unwrap();
        assert!(dot >= -1e-12, "trial {trial}");
        let oracle = ray_search(norm, tau);
        assert!((s - oracle).abs() <= 1e-3 * norm.max(1.0), "trial {trial}: {s} vs {oracle}");
    }
}

#[test]
fn block_prox_zeroes_weak_channels_and_is_identity_at_zero() {
    let w = signal_with_support(5, 3, &[0, 1, 2]);
    assert_eq!(block_soft_threshold(&w, 0.0, 2.0).unwrap(), w);
    let norms = underline(&w, 2.0).unwrap();
    let tau = norms[0].max(norms[1]).max(norms[2]);
    let v = block_soft_threshold(&w, tau, 2.0).unwrap();
    assert!(underline(&v, 2.0).unwrap().iter().all(|&x| x == 0.0));
    assert!(block_soft_threshold(&w, 0.1, 1.5).is_err());
}

#[test]
fn sine_norm_is_sqrt_pi() {
    let grid = TimeGrid::new(2.0 * std::f64::consts::PI, 10_000).unwrap();
    let samples: Vec<f64> = grid.times().iter().map(|t| t.sin()).collect();
    let n = component_p_norm(&samples, &grid, 2.0).unwrap();
    assert!((n - std::f64::consts::PI.sqrt()).abs() < 1e-4);
}

#[test]
fn best_k_sparse_matches_subset_search() {
    for seed in 0..30 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = rng.gen_range(1..=8);
        let all: Vec<usize> = (0..m).collect();
        let w = signal_with_support(seed, m, &all);
        let q = [1.0, 2.0, 3.0][seed as usize % 3];
        let u = underline(&w, 2.0).unwrap();
        for k in 0..=m {
            let (kept, sigma) = best_k_sparse(&w, k, 2.0, q).unwrap();
            let mut best = f64::INFINITY;
            for mask in 0u32..(1 << m) {
                if mask.count_ones() as usize != k {
                    continue;
                }
                let dropped: f64 = (0..m).filter(|c| mask & (1 << c) == 0).map(|c| u[c].powf(q)).sum();
                best = best.min(dropped.powf(1.0 / q));
            }
            assert!((sigma - best).abs() <= 1e-12 * (1.0 + best), "seed {seed} k {k}");
            assert!(zero_norm(&kept, 2.0, None).unwrap() <= k);
        }
    }
}

#[test]
fn rip_estimate_examples() {
    let grid = TimeGrid::new(1.0, 50).unwrap();
    let identity = IdentityOperator {
        nodes: (0..6).collect(),
        grid,
    };
    for k in 1..=3 {
        assert!(estimate_rip_constant(&identity, k, 50, 1).unwrap().delta <= 1e-9);
    }
    let (c, _) = recovery_bound(0.0, 1, 0.0, 0.0).unwrap();
    assert_eq!((c.c0, c.c1, c.c2), (2.0, 2.0, 2.0));
}

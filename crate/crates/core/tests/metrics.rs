#![allow(clippy::needless_range_loop)]

use nklon::basins::exact_basin_distributions;
use nklon::landscape::{FitnessValue, ModelSpec, Neighborhood, NkInstance, Variant};
use nklon::lon::{build_lon, build_lon_with, LocalOptimaNetwork, LonNode, OptimumTies};
use nklon::metrics::{
    basin_statistics, compute_metrics, disparity, fitness_size_correlation, shortest_paths,
    weighted_clustering, write_per_node_csv,
};
use nklon::neutrality::neutral_partition;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Network from a dense off-diagonal weight matrix; self-loops take the rest.
fn from_dense(w: &[Vec<f64>], fitness: &[f64], sizes: &[f64], opt: usize) -> LocalOptimaNetwork {
    let n = w.len();
    let mut rows = Vec::new();
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| w[i][j]).sum();
        let mut row = Vec::new();
        for j in 0..n {
            let x = if i == j { 1.0 - off } else { w[i][j] };
            if x > 0.0 {
                row.push((j as u32, x));
            }
        }
        rows.push(row);
    }
    let nodes = (0..n)
        .map(|i| LonNode {
            lonn_id: i as u32,
            nn_id: i as u32,
            fitness: FitnessValue(i as u64),
            fitness_real: fitness[i],
            nn_size: 1,
            basin_size: sizes[i],
            is_global_optimum: i == opt,
        })
        .collect();
    LocalOptimaNetwork::from_parts(6, nodes, rows, false).unwrap()
}

fn random_dense(nodes: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = vec![vec![0.0; nodes]; nodes];
    for (i, row) in w.iter_mut().enumerate() {
        for (j, x) in row.iter_mut().enumerate() {
            if i != j && rng.random_bool(0.6) {
                *x = rng.random_range(0.01..1.0);
            }
        }
        let total: f64 = row.iter().sum();
        let keep = rng.random_range(0.2..0.9);
        if total > 0.0 {
            row.iter_mut().for_each(|x| *x *= keep / total);
        }
    }
    w
}

/// The clustering formula written out over a dense matrix.
fn clustering_oracle(w: &[Vec<f64>]) -> Vec<f64> {
    let n = w.len();
    let a = |i: usize, j: usize| if i != j && w[i][j] > 0.0 { 1.0 } else { 0.0 };
    (0..n)
        .map(|i| {
            let k: f64 = (0..n).map(|j| a(i, j)).sum();
            let s: f64 = (0..n).filter(|&j| j != i).map(|j| w[i][j]).sum();
            if k < 2.0 {
                return 0.0;
            }
            let mut total = 0.0;
            for j in 0..n {
                for h in 0..n {
                    if j != h && j != i && h != i {
                        total += (w[i][j] + w[i][h]) / 2.0 * a(i, j) * a(j, h) * a(h, i);
                    }
                }
            }
            total / (s * (k - 1.0))
        })
        .collect()
}

fn disparity_oracle(w: &[Vec<f64>]) -> Vec<Option<f64>> {
    let n = w.len();
    (0..n)
        .map(|i| {
            let s: f64 = (0..n).filter(|&j| j != i).map(|j| w[i][j]).sum();
            (s > 0.0).then(|| (0..n).filter(|&j| j != i).map(|j| (w[i][j] / s).powi(2)).sum())
        })
        .collect()
}

#[test]
fn clustering_and_disparity_match_formula_oracle() {
    for seed in 0..20 {
        let w = random_dense(6, seed);
        let lon = from_dense(&w, &[0.0; 6], &[1.0; 6], 0);
        let (cw, mean) = weighted_clustering(&lon);
        for (got, want) in cw.iter().zip(clustering_oracle(&w)) {
            assert!((got - want).abs() < 1e-12, "seed {seed}: {got} vs {want}");
        }
        assert!((mean - cw.iter().sum::<f64>() / 6.0).abs() < 1e-15);
        let (y, _) = disparity(&lon);
        for (got, want) in y.iter().zip(disparity_oracle(&w)) {
            match (got, want) {
                (Some(g), Some(o)) => assert!((g - o).abs() < 1e-12),
                (None, None) => {}
                other => panic!("seed {seed}: {other:?}"),
            }
        }
        for i in 0..6 {
            if let Some(y2) = y[i] {
                let k = lon.out_degree(i) as f64;
                assert!(y2 >= 1.0 / k - 1e-12 && y2 <= 1.0 + 1e-12);
            }
        }
    }
}

#[test]
fn equal_weights_give_inverse_degree_disparity() {
    let mut w = vec![vec![0.0; 5]; 5];
    for j in 1..5 {
        w[0][j] = 0.15;
    }
    w[1][0] = 0.3;
    let lon = from_dense(&w, &[0.0; 5], &[1.0; 5], 0);
    let (y, _) = disparity(&lon);
    assert!((y[0].unwrap() - 0.25).abs() < 1e-15);
    assert_eq!(y[1], Some(1.0));
}

#[test]
fn dijkstra_matches_hand_table() {
    // Arc lengths are 1/w: 0->1 2, 1->2 4, 0->2 10, 2->3 2, 3->0 5, 1->3 8.
    let mut w = vec![vec![0.0; 4]; 4];
    w[0][1] = 0.5;
    w[1][2] = 0.25;
    w[0][2] = 0.1;
    w[2][3] = 0.5;
    w[3][0] = 0.2;
    w[1][3] = 0.125;
    let lon = from_dense(&w, &[0.0; 4], &[1.0; 4], 3);
    // Shortest distances by hand:
    //   from 0: 1=2, 2=6, 3=8
    //   from 1: 2=4, 3=6, 0=11
    //   from 2: 3=2, 0=7, 1=9
    //   from 3: 0=5, 1=7, 2=11
    let p = shortest_paths(&lon);
    assert_eq!(p.reachable_pairs, 12);
    assert_eq!(p.unreachable_pairs, 0);
    assert!((p.avg_path_length - 78.0 / 12.0).abs() < 1e-12);
    assert!((p.avg_path_to_optimum - 16.0 / 3.0).abs() < 1e-12);
    assert_eq!(p.optimum_sources, 3);
}

#[test]
fn unreachable_sources_are_counted() {
    let mut w = vec![vec![0.0; 3]; 3];
    w[0][1] = 0.5;
    let lon = from_dense(&w, &[0.0; 3], &[1.0; 3], 1);
    let p = shortest_paths(&lon);
    assert_eq!((p.optimum_sources, p.optimum_unreachable), (1, 1));
    assert_eq!((p.reachable_pairs, p.unreachable_pairs), (1, 5));
    assert_eq!(p.avg_path_to_optimum, 2.0);
}

#[test]
fn node_relabeling_leaves_metrics_unchanged() {
    for seed in 0..10 {
        let w = random_dense(7, 100 + seed);
        let fitness: Vec<f64> = (0..7).map(|i| i as f64 * 0.1).collect();
        let sizes: Vec<f64> = (0..7).map(|i| 1.0 + i as f64).collect();
        let lon = from_dense(&w, &fitness, &sizes, 6);
        let perm = [3usize, 6, 0, 5, 1, 4, 2];
        let mut pw = vec![vec![0.0; 7]; 7];
        let (mut pf, mut ps) = (vec![0.0; 7], vec![0.0; 7]);
        for i in 0..7 {
            pf[perm[i]] = fitness[i];
            ps[perm[i]] = sizes[i];
            for j in 0..7 {
                pw[perm[i]][perm[j]] = w[i][j];
            }
        }
        let moved = from_dense(&pw, &pf, &ps, perm[6]);
        let (c1, m1) = weighted_clustering(&lon);
        let (c2, m2) = weighted_clustering(&moved);
        let (y1, _) = disparity(&lon);
        let (y2, _) = disparity(&moved);
        for i in 0..7 {
            assert!((c1[i] - c2[perm[i]]).abs() < 1e-12);
            match (y1[i], y2[perm[i]]) {
                (Some(a), Some(b)) => assert!((a - b).abs() < 1e-12),
                (a, b) => assert_eq!(a, b),
            }
        }
        assert!((m1 - m2).abs() < 1e-12);
        let (p1, p2) = (shortest_paths(&lon), shortest_paths(&moved));
        assert!((p1.avg_path_length - p2.avg_path_length).abs() < 1e-9);
        assert!((p1.avg_path_to_optimum - p2.avg_path_to_optimum).abs() < 1e-9);
        assert_eq!(p1.reachable_pairs, p2.reachable_pairs);
        let r1 = fitness_size_correlation(&lon).unwrap().statistic;
        let r2 = fitness_size_correlation(&moved).unwrap().statistic;
        assert!((r1 - r2).abs() < 1e-12);
    }
}

#[test]
fn clustering_is_scale_free_in_weights() {
    for seed in 0..10 {
        let w = random_dense(6, 200 + seed);
        let half: Vec<Vec<f64>> = w.iter().map(|r| r.iter().map(|x| x * 0.5).collect()).collect();
        let (a, _) = weighted_clustering(&from_dense(&w, &[0.0; 6], &[1.0; 6], 0));
        let (b, _) = weighted_clustering(&from_dense(&half, &[0.0; 6], &[1.0; 6], 0));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn correlation_edge_cases() {
    let sizes: Vec<f64> = [1.0f64, 3.0, 7.0, 20.0].to_vec();
    let fitness: Vec<f64> = sizes.iter().map(|s| 0.25 * s.ln() + 0.1).collect();
    let lon = from_dense(&vec![vec![0.0; 4]; 4], &fitness, &sizes, 3);
    assert!((fitness_size_correlation(&lon).unwrap().statistic - 1.0).abs() < 1e-12);
    let single = from_dense(&[vec![0.0]], &[0.5], &[64.0], 0);
    assert!(fitness_size_correlation(&single).is_none());
}

fn analyzed(variant: Variant, n: usize, k: usize, seed: u64) -> (ModelSpec, LocalOptimaNetwork) {
    let spec = ModelSpec::new(variant, n, k, Neighborhood::Random, seed);
    let inst = NkInstance::generate(spec).unwrap();
    let part = neutral_partition(&inst).unwrap();
    let dist = exact_basin_distributions(&part).unwrap();
    (spec, build_lon_with(&inst, &part, &dist, OptimumTies::KeepAll).unwrap())
}

#[test]
fn constant_landscape_statistics() {
    let (spec, lon) = analyzed(Variant::Probabilistic(1.0), 7, 2, 0);
    let b = basin_statistics(&lon);
    assert_eq!((b.mean, b.sd, b.global_optimum_share), (128.0, 0.0, 1.0));
    let r = compute_metrics(&spec, &lon);
    assert_eq!((r.n_nodes, r.n_edges, r.mean_wii), (1, 0, 1.0));
    assert_eq!(r.fitness_size_correlation, None);
    assert_eq!(r.lognormal_pass, None);
    assert_eq!((r.avg_path_length, r.path_pairs), (0.0, 0));
}

#[test]
fn basin_moments_match_distribution_dump() {
    let spec = ModelSpec::new(Variant::Standard, 6, 2, Neighborhood::Random, 4);
    let inst = NkInstance::generate(spec).unwrap();
    let part = neutral_partition(&inst).unwrap();
    let mut f = part.fitness.clone();
    f.sort_unstable();
    f.dedup();
    assert_eq!(f.len(), 64, "fixture must have distinct fitness");
    let dist = exact_basin_distributions(&part).unwrap();
    let lon = build_lon(&inst, &part, &dist).unwrap();
    let mut dump = Vec::new();
    dist.write_distribution_csv(&mut dump).unwrap();
    let mut sizes = vec![0.0; lon.node_count()];
    for line in String::from_utf8(dump).unwrap().lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        sizes[cols[1].parse::<usize>().unwrap()] += cols[2].parse::<f64>().unwrap();
    }
    let mean = sizes.iter().sum::<f64>() / sizes.len() as f64;
    let sd = (sizes.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / sizes.len() as f64).sqrt();
    let b = basin_statistics(&lon);
    assert!((b.mean - mean).abs() < 1e-12);
    assert!((b.sd - sd).abs() < 1e-12);
    assert_eq!(b.histogram.total(), lon.node_count() as u64);
    let best = (0..lon.node_count()).max_by_key(|&i| lon.nodes[i].fitness).unwrap();
    assert!((b.global_optimum_share - sizes[best] / 64.0).abs() < 1e-12);
}

#[test]
fn optimum_share_shrinks_with_epistasis() {
    let share = |k: usize| {
        (0..10)
            .map(|seed| basin_statistics(&analyzed(Variant::Standard, 10, k, seed).1).global_optimum_share)
            .sum::<f64>()
            / 10.0
    };
    let (a, b, c) = (share(2), share(5), share(9));
    assert!(a > b && b > c, "{a} {b} {c}");
}

#[test]
fn report_invariants_and_per_node_export() {
    for (variant, seed) in [(Variant::Standard, 1), (Variant::Quantized(2), 2), (Variant::Probabilistic(0.9), 3)] {
        let (spec, lon) = analyzed(variant, 9, 4, seed);
        let r = compute_metrics(&spec, &lon);
        assert!(r.n_nodes >= 1);
        assert!((0.0..=1.0).contains(&r.mean_wii));
        assert!(r.global_optimum_basin_share > 0.0 && r.global_optimum_basin_share <= 1.0);
        if let Some(rho) = r.fitness_size_correlation {
            assert!((-1.0..=1.0).contains(&rho));
        }
        assert_eq!(r.weight_histogram.total() as usize, r.n_edges);
        let mut buf = Vec::new();
        write_per_node_csv(&lon, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), r.n_nodes + 1);
    }
}

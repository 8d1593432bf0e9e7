//! Observables of a local optima network: weight statistics, basin sizes,
//! weighted clustering, disparity and shortest paths.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::landscape::ModelSpec;
use crate::lon::LocalOptimaNetwork;
use crate::stats::{self, mean, population_sd};

pub const HISTOGRAM_BINS: usize = 40;

/// Significance level of the log-normality check.
pub const LOGNORMAL_ALPHA: f64 = 0.01;

/// Counts over log-spaced bins between `lower` and `upper`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogHistogram {
    pub lower: f64,
    pub upper: f64,
    pub counts: Vec<u64>,
    /// Values below `lower`.
    pub below: u64,
    /// Values above `upper`.
    pub above: u64,
}

impl LogHistogram {
    pub fn new(lower: f64, upper: f64, bins: usize) -> Self {
        assert!(lower > 0.0 && upper > lower && bins > 0);
        Self {
            lower,
            upper,
            counts: vec![0; bins],
            below: 0,
            above: 0,
        }
    }

    /// Bin `b` spans `[edge(b), edge(b + 1))`; the last bin includes `upper`.
    pub fn edge(&self, b: usize) -> f64 {
        let t = b as f64 / self.counts.len() as f64;
        (self.lower.ln() + t * (self.upper.ln() - self.lower.ln())).exp()
    }

    pub fn add(&mut self, x: f64) {
        if x < self.lower {
            self.below += 1;
        } else if x > self.upper {
            self.above += 1;
        } else {
            let bins = self.counts.len();
            let t = (x.ln() - self.lower.ln()) / (self.upper.ln() - self.lower.ln());
            let b = ((t * bins as f64) as usize).min(bins - 1);
            self.counts[b] += 1;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.below + self.above
    }

    /// `bin,lower,upper,count` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "bin,lower,upper,count")?;
        for (b, c) in self.counts.iter().enumerate() {
            writeln!(out, "{b},{:e},{:e},{c}", self.edge(b), self.edge(b + 1))?;
        }
        Ok(())
    }
}

/// Histogram of off-diagonal arc weights over `[1/(N 2^N), 1]`.
pub fn weight_histogram(lon: &LocalOptimaNetwork) -> LogHistogram {
    let lower = 1.0 / (lon.n as f64 * (1u64 << lon.n) as f64);
    let mut h = LogHistogram::new(lower, 1.0, HISTOGRAM_BINS);
    for i in 0..lon.node_count() {
        for (_, w) in lon.out_arcs(i) {
            h.add(w);
        }
    }
    h
}

/// Per-node `c^w(i)` and their mean. Nodes with fewer than two out-arcs get 0.
///
/// ```text
/// c^w(i) = 1/(s_i (k_i - 1)) * sum_{j != h} (w_ij + w_ih)/2 * a_ij a_jh a_hi
/// ```
///
/// The sum runs over ordered pairs; self-loops are ignored.
pub fn weighted_clustering(lon: &LocalOptimaNetwork) -> (Vec<f64>, f64) {
    let nodes = lon.node_count();
    let per_node: Vec<f64> = (0..nodes)
        .map(|i| {
            let k = lon.out_degree(i);
            if k < 2 {
                return 0.0;
            }
            let mut sum = 0.0;
            for (j, w_ij) in lon.out_arcs(i) {
                for (h, _) in lon.out_arcs(j) {
                    if h != i && lon.adjacent(h, i) {
                        sum += (w_ij + lon.weight(i, h)) / 2.0;
                    }
                }
            }
            sum / (lon.strength(i) * (k - 1) as f64)
        })
        .collect();
    let avg = mean(&per_node);
    (per_node, avg)
}

/// Per-node `Y_2(i) = sum_{j != i} (w_ij / s_i)^2`; `None` when `s_i = 0`.
pub fn disparity(lon: &LocalOptimaNetwork) -> (Vec<Option<f64>>, Option<f64>) {
    let per_node: Vec<Option<f64>> = (0..lon.node_count())
        .map(|i| {
            let s = lon.strength(i);
            (s > 0.0).then(|| lon.out_arcs(i).map(|(_, w)| (w / s) * (w / s)).sum())
        })
        .collect();
    let defined: Vec<f64> = per_node.iter().flatten().copied().collect();
    let avg = (!defined.is_empty()).then(|| mean(&defined));
    (per_node, avg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathStatistics {
    /// Mean shortest-path length over reachable ordered pairs `i != j`.
    pub avg_path_length: f64,
    pub reachable_pairs: usize,
    pub unreachable_pairs: usize,
    /// Mean distance into the nearest global optimum over non-optimal nodes
    /// that can reach one.
    pub avg_path_to_optimum: f64,
    pub optimum_sources: usize,
    pub optimum_unreachable: usize,
}

#[derive(PartialEq)]
struct Pending(f64, usize);

impl Eq for Pending {}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Dijkstra over `adj` (lists of `(target, length)`) from several sources.
fn dijkstra(adj: &[Vec<(usize, f64)>], sources: &[usize]) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; adj.len()];
    let mut heap = BinaryHeap::new();
    for &s in sources {
        dist[s] = 0.0;
        heap.push(Pending(0.0, s));
    }
    while let Some(Pending(d, u)) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for &(v, len) in &adj[u] {
            let nd = d + len;
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(Pending(nd, v));
            }
        }
    }
    dist
}

/// Shortest paths with arc length `d_ij = 1/w_ij`, self-loops excluded.
pub fn shortest_paths(lon: &LocalOptimaNetwork) -> PathStatistics {
    let nodes = lon.node_count();
    let mut forward = vec![Vec::new(); nodes];
    let mut backward = vec![Vec::new(); nodes];
    for (i, out) in forward.iter_mut().enumerate() {
        for (j, w) in lon.out_arcs(i) {
            out.push((j, 1.0 / w));
            backward[j].push((i, 1.0 / w));
        }
    }

    let (mut total, mut reachable) = (0.0, 0usize);
    for src in 0..nodes {
        for (dst, d) in dijkstra(&forward, &[src]).into_iter().enumerate() {
            if dst != src && d.is_finite() {
                total += d;
                reachable += 1;
            }
        }
    }

    let into_opt = dijkstra(&backward, &lon.global_optima);
    let (mut opt_total, mut opt_sources, mut opt_unreachable) = (0.0, 0usize, 0usize);
    for (i, d) in into_opt.into_iter().enumerate() {
        if lon.global_optima.contains(&i) {
            continue;
        }
        if d.is_finite() {
            opt_total += d;
            opt_sources += 1;
        } else {
            opt_unreachable += 1;
        }
    }

    let avg = |sum: f64, count: usize| if count == 0 { 0.0 } else { sum / count as f64 };
    PathStatistics {
        avg_path_length: avg(total, reachable),
        reachable_pairs: reachable,
        unreachable_pairs: nodes * nodes.saturating_sub(1) - reachable,
        avg_path_to_optimum: avg(opt_total, opt_sources),
        optimum_sources: opt_sources,
        optimum_unreachable: opt_unreachable,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasinStatistics {
    pub mean: f64,
    /// Population standard deviation.
    pub sd: f64,
    /// Basin sizes over 40 log-spaced bins on `[1, 2^N]`.
    pub histogram: LogHistogram,
    /// Combined basin size of the global optima divided by `2^N`.
    pub global_optimum_share: f64,
}

pub fn basin_statistics(lon: &LocalOptimaNetwork) -> BasinStatistics {
    let sizes: Vec<f64> = lon.nodes.iter().map(|n| n.basin_size).collect();
    let space = (1u64 << lon.n) as f64;
    let mut histogram = LogHistogram::new(1.0, space, HISTOGRAM_BINS);
    for &s in &sizes {
        histogram.add(s);
    }
    let opt: f64 = lon.global_optima.iter().map(|&i| sizes[i]).sum();
    BasinStatistics {
        mean: mean(&sizes),
        sd: population_sd(&sizes),
        histogram,
        global_optimum_share: opt / space,
    }
}

/// Pearson correlation between node fitness and log basin size with its
/// two-sided p-value. `None` for fewer than two nodes or zero variance.
pub fn fitness_size_correlation(lon: &LocalOptimaNetwork) -> Option<stats::TestResult> {
    let fit: Vec<f64> = lon.nodes.iter().map(|n| n.fitness_real).collect();
    let logs: Vec<f64> = lon.nodes.iter().map(|n| n.basin_size.ln()).collect();
    stats::pearson_test(&fit, &logs).ok()
}

/// Shapiro-Wilk on log basin sizes at [`LOGNORMAL_ALPHA`]; `None` when the
/// test is undefined (fewer than three nodes or identical sizes).
pub fn lognormal_pass(lon: &LocalOptimaNetwork) -> Option<bool> {
    let sizes: Vec<f64> = lon.nodes.iter().map(|n| n.basin_size).collect();
    stats::lognormal_check(&sizes, LOGNORMAL_ALPHA).ok()
}

/// Stable identifier such as `nkq2-n12-k6-s3`.
pub fn instance_id(spec: &ModelSpec) -> String {
    format!(
        "{}{}-n{}-k{}-s{}",
        spec.variant.model_name(),
        spec.variant.param_string(),
        spec.n,
        spec.k,
        spec.seed
    )
}

/// One row of `metrics.csv`. Field order is the column order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub instance_id: String,
    pub model: String,
    pub n: usize,
    pub k: usize,
    pub param: String,
    pub neighborhood: String,
    pub seed: u64,
    pub approximate: bool,
    pub n_nodes: usize,
    pub n_edges: usize,
    pub mean_wii: f64,
    pub mean_wij_offdiag: Option<f64>,
    pub mean_basin_size: f64,
    pub sd_basin_size: f64,
    pub lognormal_pass: Option<bool>,
    pub fitness_size_correlation: Option<f64>,
    pub fitness_size_p_value: Option<f64>,
    pub n_global_optima: usize,
    pub global_optimum_basin_share: f64,
    pub cw_mean: f64,
    pub cw_low_degree: usize,
    pub disparity_mean: Option<f64>,
    pub disparity_undefined: usize,
    pub avg_path_length: f64,
    pub path_pairs: usize,
    pub unreachable_pairs: usize,
    pub avg_path_to_optimum: f64,
    pub optimum_sources: usize,
    pub optimum_unreachable: usize,
    #[serde(skip)]
    pub weight_histogram: LogHistogram,
}

pub fn compute_metrics(spec: &ModelSpec, lon: &LocalOptimaNetwork) -> MetricsReport {
    let nodes = lon.node_count();
    let wii: Vec<f64> = (0..nodes).map(|i| lon.self_weight(i)).collect();
    let offdiag: Vec<f64> = (0..nodes)
        .flat_map(|i| lon.out_arcs(i).map(|(_, w)| w))
        .collect();
    let basins = basin_statistics(lon);
    let correlation = fitness_size_correlation(lon);
    let (_, cw_mean) = weighted_clustering(lon);
    let (disp, disparity_mean) = disparity(lon);
    let paths = shortest_paths(lon);
    MetricsReport {
        instance_id: instance_id(spec),
        model: spec.variant.model_name().to_string(),
        n: spec.n,
        k: spec.k,
        param: spec.variant.param_string(),
        neighborhood: spec.neighborhood.as_str().to_string(),
        seed: spec.seed,
        approximate: lon.approximate,
        n_nodes: nodes,
        n_edges: lon.edge_count(),
        mean_wii: mean(&wii),
        mean_wij_offdiag: (!offdiag.is_empty()).then(|| mean(&offdiag)),
        mean_basin_size: basins.mean,
        sd_basin_size: basins.sd,
        lognormal_pass: lognormal_pass(lon),
        fitness_size_correlation: correlation.map(|c| c.statistic),
        fitness_size_p_value: correlation.map(|c| c.p_value),
        n_global_optima: lon.global_optima.len(),
        global_optimum_basin_share: basins.global_optimum_share,
        cw_mean,
        cw_low_degree: (0..nodes).filter(|&i| lon.out_degree(i) < 2).count(),
        disparity_mean,
        disparity_undefined: disp.iter().filter(|d| d.is_none()).count(),
        avg_path_length: paths.avg_path_length,
        path_pairs: paths.reachable_pairs,
        unreachable_pairs: paths.unreachable_pairs,
        avg_path_to_optimum: paths.avg_path_to_optimum,
        optimum_sources: paths.optimum_sources,
        optimum_unreachable: paths.optimum_unreachable,
        weight_histogram: weight_histogram(lon),
    }
}

/// Per-node detail:
/// `lonn_id,fitness,basin_size,is_global_optimum,w_ii,out_degree,strength,cw,disparity`.
pub fn write_per_node_csv<W: Write>(lon: &LocalOptimaNetwork, mut out: W) -> Result<()> {
    let (cw, _) = weighted_clustering(lon);
    let (disp, _) = disparity(lon);
    writeln!(
        out,
        "lonn_id,fitness,basin_size,is_global_optimum,w_ii,out_degree,strength,cw,disparity"
    )?;
    for (i, node) in lon.nodes.iter().enumerate() {
        let y2 = disp[i].map(|y| y.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            node.lonn_id,
            node.fitness_real,
            node.basin_size,
            node.is_global_optimum as u8,
            lon.self_weight(i),
            lon.out_degree(i),
            lon.strength(i),
            cw[i],
            y2
        )?;
    }
    Ok(())
}

/// Appends reports to a CSV writer with a header.
pub fn write_metrics_csv<W: Write>(reports: &[MetricsReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if reports.is_empty() {
        w.write_record(metrics_columns())?;
    }
    for r in reports {
        w.serialize(r)?;
    }
    w.flush().map_err(Error::Io)?;
    Ok(())
}

/// Column names of `metrics.csv` in order.
pub fn metrics_columns() -> &'static [&'static str] {
    &[
        "instance_id",
        "model",
        "n",
        "k",
        "param",
        "neighborhood",
        "seed",
        "approximate",
        "n_nodes",
        "n_edges",
        "mean_wii",
        "mean_wij_offdiag",
        "mean_basin_size",
        "sd_basin_size",
        "lognormal_pass",
        "fitness_size_correlation",
        "fitness_size_p_value",
        "n_global_optima",
        "global_optimum_basin_share",
        "cw_mean",
        "cw_low_degree",
        "disparity_mean",
        "disparity_undefined",
        "avg_path_length",
        "path_pairs",
        "unreachable_pairs",
        "avg_path_to_optimum",
        "optimum_sources",
        "optimum_unreachable",
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landscape::FitnessValue;
    use crate::lon::LonNode;

    fn node(i: usize, fitness: f64, size: f64, opt: bool) -> LonNode {
        LonNode {
            lonn_id: i as u32,
            nn_id: i as u32,
            fitness: FitnessValue(0),
            fitness_real: fitness,
            nn_size: 1,
            basin_size: size,
            is_global_optimum: opt,
        }
    }

    /// Builds a network from off-diagonal arcs, filling self-loops to 1.
    pub(crate) fn network(nodes: usize, arcs: &[(usize, usize, f64)], opt: usize) -> LocalOptimaNetwork {
        let mut rows = vec![Vec::new(); nodes];
        for &(i, j, w) in arcs {
            rows[i].push((j as u32, w));
        }
        for (i, row) in rows.iter_mut().enumerate() {
            let rest = 1.0 - row.iter().map(|&(_, w)| w).sum::<f64>();
            if rest > 0.0 {
                row.push((i as u32, rest));
            }
            row.sort_by_key(|&(j, _)| j);
        }
        let nodes = (0..nodes)
            .map(|i| node(i, i as f64, 1.0 + i as f64, i == opt))
            .collect();
        LocalOptimaNetwork::from_parts(4, nodes, rows, false).unwrap()
    }

    #[test]
    fn triangle_clustering_is_one() {
        let w = 0.2;
        let lon = network(
            3,
            &[(0, 1, w), (0, 2, w), (1, 0, w), (1, 2, w), (2, 0, w), (2, 1, w)],
            0,
        );
        let (cw, avg) = weighted_clustering(&lon);
        for c in cw {
            assert!((c - 1.0).abs() < 1e-15);
        }
        assert!((avg - 1.0).abs() < 1e-15);
    }

    #[test]
    fn star_centre_has_zero_clustering() {
        let lon = network(4, &[(0, 1, 0.1), (0, 2, 0.1), (0, 3, 0.1), (1, 0, 0.3), (2, 0, 0.3), (3, 0, 0.3)], 0);
        let (cw, _) = weighted_clustering(&lon);
        assert_eq!(cw[0], 0.0);
        // leaves have a single out-arc
        assert_eq!(&cw[1..], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn disparity_examples() {
        let lon = network(4, &[(0, 1, 0.1), (0, 2, 0.1), (0, 3, 0.1), (1, 0, 0.3)], 0);
        let (y, avg) = disparity(&lon);
        assert!((y[0].unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(y[1], Some(1.0));
        assert_eq!(y[2], None);
        assert_eq!(y[3], None);
        assert!((avg.unwrap() - (1.0 / 3.0 + 1.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn reciprocal_length() {
        let lon = network(2, &[(0, 1, 0.25)], 1);
        let p = shortest_paths(&lon);
        assert_eq!(p.avg_path_length, 4.0);
        assert_eq!(p.reachable_pairs, 1);
        assert_eq!(p.unreachable_pairs, 1);
        assert_eq!(p.avg_path_to_optimum, 4.0);
        assert_eq!(p.optimum_unreachable, 0);
    }

    #[test]
    fn single_node_paths() {
        let lon = network(1, &[], 0);
        let p = shortest_paths(&lon);
        assert_eq!((p.avg_path_length, p.reachable_pairs), (0.0, 0));
        assert_eq!((p.avg_path_to_optimum, p.optimum_sources), (0.0, 0));
        let (cw, avg) = weighted_clustering(&lon);
        assert_eq!((cw, avg), (vec![0.0], 0.0));
    }

    #[test]
    fn histogram_edges() {
        let mut h = LogHistogram::new(1e-3, 1.0, 3);
        for x in [1e-4, 1e-3, 5e-3, 2e-2, 0.5, 1.0, 2.0] {
            h.add(x);
        }
        assert_eq!(h.counts, vec![2, 1, 2]);
        assert_eq!((h.below, h.above), (1, 1));
        assert_eq!(h.total(), 7);
        assert!((h.edge(1) - 1e-2).abs() < 1e-15);
    }

    #[test]
    fn columns_match_serialization() {
        let lon = network(3, &[(0, 1, 0.5), (1, 2, 0.5), (2, 0, 0.5)], 2);
        let spec = crate::landscape::ModelSpec::new(
            crate::landscape::Variant::Quantized(2),
            4,
            1,
            crate::landscape::Neighborhood::Random,
            9,
        );
        let report = compute_metrics(&spec, &lon);
        assert_eq!(report.instance_id, "nkq2-n4-k1-s9");
        let mut buf = Vec::new();
        write_metrics_csv(&[report], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
        assert_eq!(header, metrics_columns());
        let mut empty = Vec::new();
        write_metrics_csv(&[], &mut empty).unwrap();
        assert_eq!(String::from_utf8(empty).unwrap().lines().next().unwrap(), header.join(","));
    }
}

//! The weighted, directed local optima network.
//!
//! Nodes are LONNs. The weight of arc `i -> j` is the probability that a
//! uniform single bit-flip from a configuration drawn from basin `i` (weighted
//! by `p_i(s)`) followed by hill climbing ends in LONN `j`:
//!
//! ```text
//! w_ij = 1/#b_i * sum_s p_i(s) * sum_{s' in V(s)} (1/N) * p_j(s')
//! ```
//!
//! Every row sums to one; the self-loop `w_ii` is stored explicitly.

use std::collections::BTreeMap;
use std::io::Write;

use crate::basins::BasinDistribution;
use crate::error::{Error, Result};
use crate::landscape::{FitnessValue, Genotype, NkInstance};
use crate::neutrality::NeutralPartition;

#[derive(Debug, Clone, PartialEq)]
pub struct LonNode {
    pub lonn_id: u32,
    /// Neutral network id in the partition.
    pub nn_id: u32,
    pub fitness: FitnessValue,
    pub fitness_real: f64,
    /// Size of the LONN itself (number of configurations).
    pub nn_size: u32,
    pub basin_size: f64,
    pub is_global_optimum: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalOptimaNetwork {
    pub n: usize,
    pub nodes: Vec<LonNode>,
    /// Outgoing arcs per node, sorted by target, self-loop included, zero
    /// weights omitted.
    pub arcs: Vec<Vec<(u32, f64)>>,
    /// Nodes at the maximal fitness. Exactly one unless built with
    /// [`OptimumTies::KeepAll`].
    pub global_optima: Vec<usize>,
    /// Built from Monte Carlo basin estimates.
    pub approximate: bool,
}

impl LocalOptimaNetwork {
    /// Builds a network directly from nodes and arc rows.
    pub fn from_parts(
        n: usize,
        nodes: Vec<LonNode>,
        arcs: Vec<Vec<(u32, f64)>>,
        approximate: bool,
    ) -> Result<Self> {
        if nodes.len() != arcs.len() {
            return Err(Error::Consistency(format!(
                "{} nodes but {} arc rows",
                nodes.len(),
                arcs.len()
            )));
        }
        let flagged: Vec<usize> = (0..nodes.len())
            .filter(|&i| nodes[i].is_global_optimum)
            .collect();
        if flagged.is_empty() {
            return Err(Error::Consistency("no node flagged as global optimum".into()));
        }
        Ok(Self {
            n,
            nodes,
            arcs,
            global_optima: flagged,
            approximate,
        })
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Number of arcs `i -> j` with `i != j`.
    pub fn edge_count(&self) -> usize {
        self.arcs
            .iter()
            .enumerate()
            .map(|(i, row)| row.iter().filter(|&&(j, _)| j as usize != i).count())
            .sum()
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        let row = &self.arcs[i];
        row.binary_search_by_key(&(j as u32), |&(t, _)| t)
            .map(|pos| row[pos].1)
            .unwrap_or(0.0)
    }

    pub fn self_weight(&self, i: usize) -> f64 {
        self.weight(i, i)
    }

    /// `a_ij`: 1 when `w_ij > 0`.
    pub fn adjacent(&self, i: usize, j: usize) -> bool {
        self.weight(i, j) > 0.0
    }

    /// Outgoing arcs excluding the self-loop.
    pub fn out_arcs(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.arcs[i]
            .iter()
            .filter(move |&&(j, _)| j as usize != i)
            .map(|&(j, w)| (j as usize, w))
    }

    /// `k_i`, self-loop excluded.
    pub fn out_degree(&self, i: usize) -> usize {
        self.out_arcs(i).count()
    }

    /// `s_i = sum_{j != i} w_ij`.
    pub fn strength(&self, i: usize) -> f64 {
        self.out_arcs(i).map(|(_, w)| w).sum()
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.arcs[i].iter().map(|&(_, w)| w).sum()
    }

    /// Edge list `src,dst,weight`, weights with 17 significant digits.
    pub fn write_edge_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "src,dst,weight")?;
        for (i, row) in self.arcs.iter().enumerate() {
            for &(j, w) in row {
                writeln!(out, "{i},{j},{w:.16e}")?;
            }
        }
        Ok(())
    }

    pub fn write_graphml<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#)?;
        writeln!(out, r#"<graphml xmlns="http://graphml.graphdrawing.org/xmlns">"#)?;
        writeln!(
            out,
            r#"  <key id="fitness" for="node" attr.name="fitness" attr.type="double"/>"#
        )?;
        writeln!(
            out,
            r#"  <key id="basin_size" for="node" attr.name="basin_size" attr.type="double"/>"#
        )?;
        writeln!(
            out,
            r#"  <key id="is_global_optimum" for="node" attr.name="is_global_optimum" attr.type="boolean"/>"#
        )?;
        writeln!(
            out,
            r#"  <key id="weight" for="edge" attr.name="weight" attr.type="double"/>"#
        )?;
        writeln!(out, r#"  <graph id="lon" edgedefault="directed">"#)?;
        for (i, node) in self.nodes.iter().enumerate() {
            writeln!(out, r#"    <node id="n{i}">"#)?;
            writeln!(out, r#"      <data key="fitness">{:.16e}</data>"#, node.fitness_real)?;
            writeln!(out, r#"      <data key="basin_size">{:.16e}</data>"#, node.basin_size)?;
            writeln!(
                out,
                r#"      <data key="is_global_optimum">{}</data>"#,
                node.is_global_optimum
            )?;
            writeln!(out, "    </node>")?;
        }
        for (i, row) in self.arcs.iter().enumerate() {
            for &(j, w) in row {
                writeln!(
                    out,
                    r#"    <edge source="n{i}" target="n{j}"><data key="weight">{w:.16e}</data></edge>"#
                )?;
            }
        }
        writeln!(out, "  </graph>")?;
        writeln!(out, "</graphml>")?;
        Ok(())
    }

    /// Graphviz output; node diameter is proportional to basin size.
    pub fn write_dot<W: Write>(&self, mut out: W) -> Result<()> {
        const MAX_DIAMETER: f64 = 2.0;
        let largest = self
            .nodes
            .iter()
            .map(|n| n.basin_size)
            .fold(0.0, f64::max);
        writeln!(out, "digraph lon {{")?;
        writeln!(out, "  node [shape=circle, fixedsize=true];")?;
        for (i, node) in self.nodes.iter().enumerate() {
            let width = MAX_DIAMETER * node.basin_size / largest;
            let style = if node.is_global_optimum {
                ", style=filled, fillcolor=gold"
            } else {
                ""
            };
            writeln!(
                out,
                "  n{i} [label=\"fit={:.4}\", width={width:.6}{style}];",
                node.fitness_real
            )?;
        }
        for (i, row) in self.arcs.iter().enumerate() {
            for &(j, w) in row {
                writeln!(out, "  n{i} -> n{j} [weight={w:.6e}, penwidth={:.4}];", 0.5 + 4.0 * w)?;
            }
        }
        writeln!(out, "}}")?;
        Ok(())
    }
}

/// What to do when several LONNs share the maximal fitness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OptimumTies {
    /// Fail with [`Error::GlobalOptimumTie`].
    #[default]
    Reject,
    /// Flag every maximal LONN as a global optimum.
    KeepAll,
}

impl OptimumTies {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimumTies::Reject => "reject",
            OptimumTies::KeepAll => "keep-all",
        }
    }
}

impl std::str::FromStr for OptimumTies {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reject" => Ok(OptimumTies::Reject),
            "keep-all" => Ok(OptimumTies::KeepAll),
            other => Err(Error::param(format!(
                "unknown tie policy '{other}' (expected reject or keep-all)"
            ))),
        }
    }
}

/// LONN indices holding the maximal fitness.
pub fn maximal_lonns(part: &NeutralPartition) -> Vec<u32> {
    let best = (0..part.lonn_count() as u32)
        .map(|l| part.lonn_fitness(l))
        .max();
    (0..part.lonn_count() as u32)
        .filter(|&l| Some(part.lonn_fitness(l)) == best)
        .collect()
}

fn global_optima(part: &NeutralPartition, ties: OptimumTies) -> Result<Vec<usize>> {
    let top = maximal_lonns(part);
    if top.is_empty() {
        return Err(Error::Consistency("partition has no LONN".into()));
    }
    if top.len() > 1 && ties == OptimumTies::Reject {
        return Err(Error::GlobalOptimumTie(top));
    }
    Ok(top.into_iter().map(|l| l as usize).collect())
}

/// Builds the network, rejecting global-optimum ties.
pub fn build_lon(
    inst: &NkInstance,
    part: &NeutralPartition,
    dist: &BasinDistribution,
) -> Result<LocalOptimaNetwork> {
    build_lon_with(inst, part, dist, OptimumTies::Reject)
}

pub fn build_lon_with(
    inst: &NkInstance,
    part: &NeutralPartition,
    dist: &BasinDistribution,
    ties: OptimumTies,
) -> Result<LocalOptimaNetwork> {
    let n = part.n;
    let size = part.space_size();
    let lonns = part.lonn_count();
    if inst.n() != n || dist.probs.len() != size || dist.lonn_count() != lonns {
        return Err(Error::Consistency(format!(
            "distribution covers {} configurations and {} LONNs; partition has {} and {}",
            dist.probs.len(),
            dist.lonn_count(),
            size,
            lonns
        )));
    }
    let optima = global_optima(part, ties)?;

    let mut rows: Vec<BTreeMap<u32, f64>> = vec![BTreeMap::new(); lonns];
    let mut scratch = vec![0.0f64; lonns];
    let mut touched: Vec<u32> = Vec::new();
    for s in 0..size as u32 {
        let here = &dist.probs[s as usize];
        if here.is_empty() {
            return Err(Error::Consistency(format!("genotype {s} has no distribution")));
        }
        // N times the probability of landing in each basin after one flip.
        for i in 0..n {
            for &(j, p) in &dist.probs[(s ^ (1 << i)) as usize] {
                if scratch[j as usize] == 0.0 {
                    touched.push(j);
                }
                scratch[j as usize] += p;
            }
        }
        touched.sort_unstable();
        for &(i, pi) in here {
            let row = &mut rows[i as usize];
            for &j in &touched {
                *row.entry(j).or_insert(0.0) += pi * scratch[j as usize];
            }
        }
        for &j in &touched {
            scratch[j as usize] = 0.0;
        }
        touched.clear();
    }

    let nodes: Vec<LonNode> = (0..lonns)
        .map(|i| {
            let nn_id = part.lonn_nn[i];
            let fitness = part.nn_fitness[nn_id as usize];
            LonNode {
                lonn_id: i as u32,
                nn_id,
                fitness,
                fitness_real: inst.to_real(fitness),
                nn_size: part.nn_size[nn_id as usize],
                basin_size: dist.basin_size[i],
                is_global_optimum: optima.contains(&i),
            }
        })
        .collect();
    let arcs = rows
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            let norm = dist.basin_size[i] * n as f64;
            row.into_iter()
                .map(|(j, acc)| (j, acc / norm))
                .filter(|&(_, w)| w > 0.0)
                .collect()
        })
        .collect();
    Ok(LocalOptimaNetwork {
        n,
        nodes,
        arcs,
        global_optima: optima,
        approximate: dist.approximate,
    })
}

/// Genotypes of a LONN, for inspection and tests.
pub fn lonn_members(part: &NeutralPartition, lonn: u32) -> Vec<Genotype> {
    let nn = part.lonn_nn[lonn as usize];
    (0..part.space_size() as u32)
        .filter(|&g| part.nn_of[g as usize] == nn)
        .map(Genotype)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basins::exact_basin_distributions;
    use crate::landscape::{ModelSpec, Neighborhood, Variant};
    use crate::neutrality::neutral_partition;

    fn pipeline(variant: Variant, n: usize, k: usize, seed: u64) -> LocalOptimaNetwork {
        let inst =
            NkInstance::generate(ModelSpec::new(variant, n, k, Neighborhood::Random, seed)).unwrap();
        let part = neutral_partition(&inst).unwrap();
        let dist = exact_basin_distributions(&part).unwrap();
        build_lon_with(&inst, &part, &dist, OptimumTies::KeepAll).unwrap()
    }

    #[test]
    fn constant_landscape_single_self_loop() {
        let lon = pipeline(Variant::Probabilistic(1.0), 6, 2, 0);
        assert_eq!(lon.node_count(), 1);
        assert_eq!(lon.arcs[0], vec![(0, 1.0)]);
        assert_eq!(lon.edge_count(), 0);
        assert!(lon.nodes[0].is_global_optimum);
    }

    #[test]
    fn rows_are_stochastic() {
        for seed in 0..5 {
            for variant in [Variant::Standard, Variant::Quantized(2), Variant::Probabilistic(0.8)] {
                let lon = pipeline(variant, 8, 3, seed);
                for i in 0..lon.node_count() {
                    assert!((lon.row_sum(i) - 1.0).abs() < 1e-9);
                    assert!((lon.self_weight(i) + lon.strength(i) - 1.0).abs() < 1e-9);
                }
                let flagged = lon.nodes.iter().filter(|n| n.is_global_optimum).count();
                assert_eq!(flagged, lon.global_optima.len());
                assert!(flagged >= 1);
                if variant == Variant::Standard {
                    assert_eq!(flagged, 1);
                }
            }
        }
    }

    #[test]
    fn tie_is_an_error() {
        // Two isolated peaks of equal height.
        let mut f = vec![0u64; 8];
        f[0b000] = 5;
        f[0b111] = 5;
        let part = crate::neutrality::partition_from_fitness(3, f).unwrap();
        let dist = exact_basin_distributions(&part).unwrap();
        let inst = NkInstance::generate(ModelSpec::new(
            Variant::Standard,
            3,
            1,
            Neighborhood::Random,
            0,
        ))
        .unwrap();
        assert!(matches!(
            build_lon(&inst, &part, &dist),
            Err(Error::GlobalOptimumTie(ref t)) if t == &vec![0, 1]
        ));
        let lon = build_lon_with(&inst, &part, &dist, OptimumTies::KeepAll).unwrap();
        assert_eq!(lon.global_optima, vec![0, 1]);
    }

    #[test]
    fn exports_are_well_formed() {
        let lon = pipeline(Variant::Standard, 6, 2, 3);
        let mut csv = Vec::new();
        lon.write_edge_csv(&mut csv).unwrap();
        let csv = String::from_utf8(csv).unwrap();
        let rows: usize = lon.arcs.iter().map(|r| r.len()).sum();
        assert_eq!(csv.lines().count(), rows + 1);
        let first = csv.lines().nth(1).unwrap();
        let weight = first.split(',').nth(2).unwrap();
        // 17 significant digits: d.dddddddddddddddde-x
        assert_eq!(weight.split('e').next().unwrap().len(), 18);

        let mut xml = Vec::new();
        lon.write_graphml(&mut xml).unwrap();
        let xml = String::from_utf8(xml).unwrap();
        assert_eq!(xml.matches("<node ").count(), lon.node_count());
        assert_eq!(xml.matches("<edge ").count(), rows);

        let mut dot = Vec::new();
        lon.write_dot(&mut dot).unwrap();
        let dot = String::from_utf8(dot).unwrap();
        assert!(dot.starts_with("digraph lon {"));
        assert_eq!(dot.matches(" -> ").count(), rows);
    }
}

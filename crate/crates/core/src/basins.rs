//! Probabilistic basins of attraction under the stochastic hill climber.
//!
//! From a configuration outside every LONN the climber picks one of the
//! maximal-fitness neighbors uniformly at random and moves there when it is
//! at least as fit. This defines an absorbing Markov chain whose absorbing
//! classes are the LONNs; `p_i(s)` is the probability of absorption in LONN
//! `i` when starting from `s`.
//!
//! The exact solver walks fitness levels from the top down. A configuration
//! whose best neighbors are strictly fitter averages their (already known)
//! distributions. Configurations whose best neighbors are neutral form linear
//! systems on their plateau, solved per connected component.

use std::collections::HashMap;
use std::io::Write;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::landscape::{Genotype, NkInstance};
use crate::neutrality::{NeutralPartition, UnionFind};

/// Sparse probability vector over LONN indices, sorted by index.
pub type SparseDist = Vec<(u32, f64)>;

pub const DEFAULT_STEP_CAP: u64 = 10_000_000;

/// Plateau components up to this many states are solved by elimination.
pub const DENSE_LIMIT: usize = 512;

/// Required accuracy of the iterative plateau solver.
pub const SOLVE_TOLERANCE: f64 = 1e-12;

const ITERATION_TARGET: f64 = 1e-14;
const MAX_SWEEPS: usize = 200_000;

#[derive(Debug, Clone, PartialEq)]
pub struct BasinDistribution {
    /// `probs[s]` holds the nonzero `p_i(s)`.
    pub probs: Vec<SparseDist>,
    /// `basin_size[i] = sum_s p_i(s)`.
    pub basin_size: Vec<f64>,
    /// Set for Monte Carlo estimates.
    pub approximate: bool,
}

impl BasinDistribution {
    fn from_probs(probs: Vec<SparseDist>, lonn_count: usize, approximate: bool) -> Self {
        let mut basin_size = vec![0.0; lonn_count];
        for dist in &probs {
            for &(i, p) in dist {
                basin_size[i as usize] += p;
            }
        }
        Self {
            probs,
            basin_size,
            approximate,
        }
    }

    pub fn lonn_count(&self) -> usize {
        self.basin_size.len()
    }

    pub fn prob(&self, g: Genotype, lonn: u32) -> f64 {
        let dist = &self.probs[g.index()];
        dist.binary_search_by_key(&lonn, |&(i, _)| i)
            .map(|pos| dist[pos].1)
            .unwrap_or(0.0)
    }

    /// Largest `|sum_i p_i(s) - 1|` over all configurations.
    pub fn max_mass_error(&self) -> f64 {
        self.probs
            .iter()
            .map(|d| (d.iter().map(|&(_, p)| p).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// `lonn_id,fitness,size` rows.
    pub fn write_basin_sizes_csv<W: Write>(
        &self,
        inst: &NkInstance,
        part: &NeutralPartition,
        mut out: W,
    ) -> Result<()> {
        writeln!(out, "lonn_id,fitness,size")?;
        for (i, size) in self.basin_size.iter().enumerate() {
            let f = inst.to_real(part.lonn_fitness(i as u32));
            writeln!(out, "{i},{f},{size}")?;
        }
        Ok(())
    }

    /// Full dump, one `genotype,lonn_id,probability` row per nonzero entry.
    pub fn write_distribution_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "genotype,lonn_id,probability")?;
        for (g, dist) in self.probs.iter().enumerate() {
            for &(i, p) in dist {
                writeln!(out, "{g},{i},{p}")?;
            }
        }
        Ok(())
    }
}

/// Best neighbors of `g`: their shared fitness and up to `n` genotypes.
#[inline]
fn best_neighbors(part: &NeutralPartition, g: u32, buf: &mut [u32; 32]) -> (u64, usize) {
    let mut best = 0u64;
    let mut len = 0;
    for i in 0..part.n {
        let h = g ^ (1 << i);
        let fh = part.fitness[h as usize];
        if len == 0 || fh > best {
            best = fh;
            buf[0] = h;
            len = 1;
        } else if fh == best {
            buf[len] = h;
            len += 1;
        }
    }
    (best, len)
}

/// Runs the stochastic hill climber from `start` until it stands in a LONN and
/// returns that LONN's index. LONN membership is tested before every move.
pub fn hill_climb<R: Rng + ?Sized>(
    part: &NeutralPartition,
    start: Genotype,
    rng: &mut R,
) -> Result<u32> {
    hill_climb_capped(part, start, rng, DEFAULT_STEP_CAP)
}

pub fn hill_climb_capped<R: Rng + ?Sized>(
    part: &NeutralPartition,
    start: Genotype,
    rng: &mut R,
    step_cap: u64,
) -> Result<u32> {
    let mut s = start.0;
    let mut buf = [0u32; 32];
    let mut steps = 0u64;
    loop {
        if let Some(lonn) = part.lonn_of(Genotype(s)) {
            return Ok(lonn);
        }
        if steps >= step_cap {
            return Err(Error::Divergence {
                start: start.0,
                steps,
            });
        }
        let (best, len) = best_neighbors(part, s, &mut buf);
        let next = if len == 1 {
            buf[0]
        } else {
            buf[rng.random_range(0..len)]
        };
        if part.fitness[s as usize] <= best {
            s = next;
        }
        steps += 1;
    }
}

/// Seeds a ChaCha8 generator only when the climber first needs a random draw,
/// so deterministic climbs cost nothing.
struct LazyRng {
    seed: u64,
    inner: Option<ChaCha8Rng>,
}

impl LazyRng {
    fn get(&mut self) -> &mut ChaCha8Rng {
        let seed = self.seed;
        self.inner
            .get_or_insert_with(|| ChaCha8Rng::seed_from_u64(seed))
    }
}

impl RngCore for LazyRng {
    fn next_u32(&mut self) -> u32 {
        self.get().next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.get().next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.get().fill_bytes(dst)
    }
}

/// SplitMix64 finalizer.
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the independent substream for one `(start, replicate)` climb.
pub fn climb_seed(seed: u64, start: u32, replicate: u64) -> u64 {
    mix64(mix64(seed ^ mix64(start as u64)) ^ replicate)
}

/// Empirical basin distributions from `samples_per_start` climbs per configuration.
pub fn monte_carlo_basins(
    part: &NeutralPartition,
    samples_per_start: usize,
    seed: u64,
) -> Result<BasinDistribution> {
    if samples_per_start == 0 {
        return Err(Error::param("samples_per_start must be at least 1"));
    }
    let lonns = part.lonn_count();
    let mut counts = vec![0u64; lonns];
    let mut touched = Vec::new();
    let mut probs = Vec::with_capacity(part.space_size());
    for s in 0..part.space_size() as u32 {
        if let Some(lonn) = part.lonn_of(Genotype(s)) {
            probs.push(vec![(lonn, 1.0)]);
            continue;
        }
        for rep in 0..samples_per_start as u64 {
            let mut rng = LazyRng {
                seed: climb_seed(seed, s, rep),
                inner: None,
            };
            let lonn = hill_climb(part, Genotype(s), &mut rng)?;
            if counts[lonn as usize] == 0 {
                touched.push(lonn);
            }
            counts[lonn as usize] += 1;
        }
        touched.sort_unstable();
        let dist = touched
            .iter()
            .map(|&i| (i, counts[i as usize] as f64 / samples_per_start as f64))
            .collect();
        for &i in &touched {
            counts[i as usize] = 0;
        }
        touched.clear();
        probs.push(dist);
    }
    Ok(BasinDistribution::from_probs(probs, lonns, true))
}

/// Dense accumulator for sparse distributions.
struct Accumulator {
    acc: Vec<f64>,
    touched: Vec<u32>,
}

impl Accumulator {
    fn new(len: usize) -> Self {
        Self {
            acc: vec![0.0; len],
            touched: Vec::new(),
        }
    }

    #[inline]
    fn add(&mut self, dist: &[(u32, f64)], weight: f64) {
        for &(i, p) in dist {
            let slot = &mut self.acc[i as usize];
            if *slot == 0.0 {
                self.touched.push(i);
            }
            *slot += p * weight;
        }
    }

    fn add_sum(&mut self, dist: &[(u32, f64)]) {
        for &(i, p) in dist {
            let slot = &mut self.acc[i as usize];
            if *slot == 0.0 {
                self.touched.push(i);
            }
            *slot += p;
        }
    }

    /// Drains the accumulator, dividing every entry by `denom`.
    fn take(&mut self, denom: f64) -> SparseDist {
        self.touched.sort_unstable();
        let out = self
            .touched
            .iter()
            .map(|&i| (i, self.acc[i as usize] / denom))
            .filter(|&(_, p)| p != 0.0)
            .collect();
        for &i in &self.touched {
            self.acc[i as usize] = 0.0;
        }
        self.touched.clear();
        out
    }
}

/// Exact absorption probabilities of the climber's Markov chain.
pub fn exact_basin_distributions(part: &NeutralPartition) -> Result<BasinDistribution> {
    let size = part.space_size();
    let lonns = part.lonn_count();
    let mut probs: Vec<SparseDist> = vec![Vec::new(); size];

    let mut order: Vec<u32> = (0..size as u32).collect();
    order.sort_by(|&a, &b| {
        part.fitness[b as usize]
            .cmp(&part.fitness[a as usize])
            .then(a.cmp(&b))
    });

    let mut acc = Accumulator::new(lonns);
    let mut buf = [0u32; 32];
    let mut internal: Vec<u32> = Vec::new();
    let mut start = 0;
    while start < size {
        let level = part.fitness[order[start] as usize];
        let mut end = start;
        while end < size && part.fitness[order[end] as usize] == level {
            end += 1;
        }
        internal.clear();
        for &s in &order[start..end] {
            if let Some(lonn) = part.lonn_of(Genotype(s)) {
                probs[s as usize] = vec![(lonn, 1.0)];
                continue;
            }
            let (best, len) = best_neighbors(part, s, &mut buf);
            if best > level {
                for &a in &buf[..len] {
                    acc.add_sum(&probs[a as usize]);
                }
                probs[s as usize] = acc.take(len as f64);
            } else if best == level {
                internal.push(s);
            } else {
                return Err(Error::Consistency(format!(
                    "genotype {s} is a strict local optimum outside every LONN"
                )));
            }
        }
        if !internal.is_empty() {
            solve_plateaus(part, &internal, &mut probs, &mut acc)?;
        }
        start = end;
    }
    Ok(BasinDistribution::from_probs(probs, lonns, false))
}

/// Solves `p(u) = mean_{v in best(u)} p(v)` for the plateau states `internal`
/// (states whose best neighbors are all neutral). Neighbors outside
/// `internal` already carry their final distribution.
fn solve_plateaus(
    part: &NeutralPartition,
    internal: &[u32],
    probs: &mut [SparseDist],
    acc: &mut Accumulator,
) -> Result<()> {
    let local: HashMap<u32, u32> = internal
        .iter()
        .enumerate()
        .map(|(i, &s)| (s, i as u32))
        .collect();
    let mut uf = UnionFind::new(internal.len());
    let mut buf = [0u32; 32];
    for (i, &s) in internal.iter().enumerate() {
        let (_, len) = best_neighbors(part, s, &mut buf);
        for a in &buf[..len] {
            if let Some(&j) = local.get(a) {
                uf.union(i as u32, j);
            }
        }
    }
    let mut components: HashMap<u32, Vec<u32>> = HashMap::new();
    for (i, &s) in internal.iter().enumerate() {
        components.entry(uf.find(i as u32)).or_default().push(s);
    }
    let mut components: Vec<Vec<u32>> = components.into_values().collect();
    components.sort_unstable_by_key(|c| c[0]);

    for members in components {
        let solved = if members.len() <= DENSE_LIMIT {
            solve_dense(part, &members, probs)?
        } else {
            solve_iterative(part, &members, probs, acc)?
        };
        for (s, dist) in members.iter().zip(solved) {
            probs[*s as usize] = dist;
        }
    }
    Ok(())
}

/// Subtraction-free Gaussian elimination (Grassmann-Taksar-Heyman style).
///
/// The system is `x = Q x + b` with `Q` substochastic and nonnegative. Each
/// row keeps its escape mass `e` so the pivot `1 - Q_kk` is computed as a sum
/// of nonnegative terms; every intermediate value stays nonnegative.
fn solve_dense(
    part: &NeutralPartition,
    members: &[u32],
    probs: &[SparseDist],
) -> Result<Vec<SparseDist>> {
    let m = members.len();
    let local: HashMap<u32, usize> = members.iter().enumerate().map(|(i, &s)| (s, i)).collect();

    let mut columns: Vec<u32> = Vec::new();
    let mut column_of: HashMap<u32, usize> = HashMap::new();
    let mut q = vec![0.0f64; m * m];
    let mut escape = vec![0.0f64; m];
    let mut exits: Vec<Vec<(u32, f64)>> = vec![Vec::new(); m];
    let mut buf = [0u32; 32];
    for (i, &s) in members.iter().enumerate() {
        let (_, len) = best_neighbors(part, s, &mut buf);
        let w = 1.0 / len as f64;
        for &a in &buf[..len] {
            match local.get(&a) {
                Some(&j) => q[i * m + j] += w,
                None => {
                    escape[i] += w;
                    exits[i].push((a, w));
                    for &(lonn, _) in &probs[a as usize] {
                        column_of.entry(lonn).or_insert_with(|| {
                            columns.push(lonn);
                            columns.len() - 1
                        });
                    }
                }
            }
        }
    }
    let c = columns.len();
    let mut rhs = vec![0.0f64; m * c];
    for (i, row_exits) in exits.iter().enumerate() {
        for &(a, w) in row_exits {
            for &(lonn, p) in &probs[a as usize] {
                rhs[i * c + column_of[&lonn]] += w * p;
            }
        }
    }

    let mut pivot = vec![0.0f64; m];
    for k in 0..m {
        let s_k = escape[k] + q[k * m + k + 1..(k + 1) * m].iter().sum::<f64>();
        if s_k <= 0.0 {
            return Err(Error::Consistency(format!(
                "plateau of {m} states around genotype {} has no exit",
                members[0]
            )));
        }
        pivot[k] = s_k;
        for i in k + 1..m {
            let qik = q[i * m + k];
            if qik == 0.0 {
                continue;
            }
            let f = qik / s_k;
            q[i * m + k] = 0.0;
            for j in k + 1..m {
                let qkj = q[k * m + j];
                if qkj != 0.0 {
                    q[i * m + j] += f * qkj;
                }
            }
            escape[i] += f * escape[k];
            for col in 0..c {
                let b = rhs[k * c + col];
                if b != 0.0 {
                    rhs[i * c + col] += f * b;
                }
            }
        }
    }
    let mut x = vec![0.0f64; m * c];
    for k in (0..m).rev() {
        for col in 0..c {
            let mut v = rhs[k * c + col];
            for j in k + 1..m {
                let qkj = q[k * m + j];
                if qkj != 0.0 {
                    v += qkj * x[j * c + col];
                }
            }
            x[k * c + col] = v / pivot[k];
        }
    }

    let mut order: Vec<usize> = (0..c).collect();
    order.sort_unstable_by_key(|&col| columns[col]);
    Ok((0..m)
        .map(|i| {
            order
                .iter()
                .filter_map(|&col| {
                    let v = x[i * c + col];
                    (v != 0.0).then_some((columns[col], v))
                })
                .collect()
        })
        .collect())
}

/// Gauss-Seidel sweeps from zero. Iterates increase monotonically towards the
/// solution, so the missing mass `1 - sum_i x_i(u)` bounds the error.
fn solve_iterative(
    part: &NeutralPartition,
    members: &[u32],
    probs: &[SparseDist],
    acc: &mut Accumulator,
) -> Result<Vec<SparseDist>> {
    let m = members.len();
    let local: HashMap<u32, usize> = members.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    let mut adjacency: Vec<Vec<(bool, u32)>> = Vec::with_capacity(m);
    let mut buf = [0u32; 32];
    for &s in members {
        let (_, len) = best_neighbors(part, s, &mut buf);
        adjacency.push(
            buf[..len]
                .iter()
                .map(|a| match local.get(a) {
                    Some(&j) => (true, j as u32),
                    None => (false, *a),
                })
                .collect(),
        );
    }
    let mut x: Vec<SparseDist> = vec![Vec::new(); m];
    let mut deficit = f64::INFINITY;
    for _ in 0..MAX_SWEEPS {
        let mut worst = 0.0f64;
        for u in 0..m {
            let len = adjacency[u].len();
            for &(is_local, v) in &adjacency[u] {
                let dist = if is_local {
                    &x[v as usize]
                } else {
                    &probs[v as usize]
                };
                acc.add(dist, 1.0);
            }
            x[u] = acc.take(len as f64);
            let mass: f64 = x[u].iter().map(|&(_, p)| p).sum();
            worst = worst.max(1.0 - mass);
        }
        deficit = worst;
        if deficit <= ITERATION_TARGET {
            return Ok(x);
        }
    }
    if deficit <= SOLVE_TOLERANCE {
        return Ok(x);
    }
    Err(Error::Convergence(format!(
        "plateau component of {m} states reached residual {deficit:e} after {MAX_SWEEPS} sweeps"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landscape::{ModelSpec, Neighborhood, Variant};
    use crate::neutrality::{neutral_partition, partition_from_fitness};

    fn partition(variant: Variant, n: usize, k: usize, seed: u64) -> NeutralPartition {
        let inst =
            NkInstance::generate(ModelSpec::new(variant, n, k, Neighborhood::Random, seed)).unwrap();
        neutral_partition(&inst).unwrap()
    }

    fn check_invariants(part: &NeutralPartition, dist: &BasinDistribution) {
        assert!(dist.max_mass_error() < 1e-12);
        let total: f64 = dist.basin_size.iter().sum();
        assert!((total - part.space_size() as f64).abs() < 1e-9);
        for g in 0..part.space_size() as u32 {
            if let Some(l) = part.lonn_of(Genotype(g)) {
                assert_eq!(dist.probs[g as usize], vec![(l, 1.0)]);
            }
            assert!(dist.probs[g as usize].iter().all(|&(_, p)| p > 0.0));
        }
    }

    #[test]
    fn constant_landscape() {
        let part = partition(Variant::Probabilistic(1.0), 6, 2, 0);
        let dist = exact_basin_distributions(&part).unwrap();
        assert_eq!(dist.basin_size, vec![64.0]);
        assert!(dist.probs.iter().all(|d| d == &vec![(0, 1.0)]));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(hill_climb(&part, Genotype(17), &mut rng).unwrap(), 0);
        let mc = monte_carlo_basins(&part, 3, 1).unwrap();
        assert_eq!(mc.probs, dist.probs);
    }

    #[test]
    fn distinct_fitness_is_deterministic() {
        let part = partition(Variant::Standard, 8, 3, 5);
        let dist = exact_basin_distributions(&part).unwrap();
        check_invariants(&part, &dist);
        assert!(dist.probs.iter().all(|d| d.len() == 1 && d[0].1 == 1.0));
        let mc = monte_carlo_basins(&part, 1, 99).unwrap();
        assert_eq!(mc.probs, dist.probs);
    }

    #[test]
    fn neutral_invariants() {
        for seed in 0..6 {
            for variant in [Variant::Quantized(2), Variant::Probabilistic(0.9)] {
                let part = partition(variant, 8, 2, seed);
                let dist = exact_basin_distributions(&part).unwrap();
                check_invariants(&part, &dist);
            }
        }
    }

    /// A 2-bit plateau: fitness 00 -> 1, 01 -> 1, 10 -> 2, 11 -> 0 on n = 2.
    /// 00 and 01 are neutral; 00 escapes to 10 (LONN), 01's best neighbors are
    /// {00} (fitness 1) vs 11 (fitness 0), so 01 walks to 00 and then climbs.
    #[test]
    fn handmade_plateau() {
        let part = partition_from_fitness(2, vec![1, 1, 2, 0]).unwrap();
        assert_eq!(part.lonn_count(), 1);
        let dist = exact_basin_distributions(&part).unwrap();
        assert_eq!(dist.basin_size, vec![4.0]);
    }

    /// Crafted n = 4 landscape with two LONNs and a shared plateau, checked
    /// against the closed-form absorption probabilities.
    #[test]
    fn crafted_two_lonn_split() {
        // 0000 sits on a plateau {0000, 0001}; 0001 has two fitter neighbors
        // leading to peaks 0011 and 0101 respectively.
        let mut f = vec![0u64; 16];
        f[0b0000] = 5;
        f[0b0001] = 5;
        f[0b0011] = 9;
        f[0b0101] = 9;
        f[0b1001] = 3;
        f[0b0010] = 4;
        f[0b0100] = 4;
        f[0b1000] = 4;
        let part = partition_from_fitness(4, f).unwrap();
        assert_eq!(part.lonn_count(), 2);
        let dist = exact_basin_distributions(&part).unwrap();
        // 0001 has best neighbors {0011, 0101}: 1/2 each.
        assert_eq!(dist.probs[1], vec![(0, 0.5), (1, 0.5)]);
        check_invariants(&part, &dist);
    }

    #[test]
    fn divergence_is_reported() {
        // A strict local optimum outside any LONN cannot happen with a valid
        // partition; tamper with the flags to provoke the step cap.
        let mut part = partition_from_fitness(2, vec![0, 1, 1, 3]).unwrap();
        let lonn_nn = part.nn_of[3] as usize;
        part.lonn_index[lonn_nn] = None;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            hill_climb_capped(&part, Genotype(0), &mut rng, 100),
            Err(Error::Divergence { .. })
        ));
        assert!(matches!(
            exact_basin_distributions(&part),
            Err(Error::Consistency(_))
        ));
    }

    #[test]
    fn iterative_and_dense_agree() {
        let part = partition(Variant::Quantized(2), 10, 3, 4);
        let exact = exact_basin_distributions(&part).unwrap();
        check_invariants(&part, &exact);

        // Re-solve every plateau level with both solvers, using the exact
        // distributions as the fixed boundary.
        let mut buf = [0u32; 32];
        let mut by_level: HashMap<u64, Vec<u32>> = HashMap::new();
        for s in 0..part.space_size() as u32 {
            if part.lonn_of(Genotype(s)).is_some() {
                continue;
            }
            let (best, _) = best_neighbors(&part, s, &mut buf);
            if best == part.fitness[s as usize] {
                by_level.entry(best).or_default().push(s);
            }
        }
        assert!(!by_level.is_empty());
        let lonns = part.lonn_count();
        let dense_vec = |d: &SparseDist| {
            let mut v = vec![0.0; lonns];
            for &(i, p) in d {
                v[i as usize] = p;
            }
            v
        };
        let mut acc = Accumulator::new(lonns);
        for states in by_level.values() {
            let dense = solve_dense(&part, states, &exact.probs).unwrap();
            let iter = solve_iterative(&part, states, &exact.probs, &mut acc).unwrap();
            for ((s, a), b) in states.iter().zip(&dense).zip(&iter) {
                let (a, b, e) = (dense_vec(a), dense_vec(b), dense_vec(&exact.probs[*s as usize]));
                for i in 0..lonns {
                    assert!((a[i] - b[i]).abs() < 1e-12);
                    assert!((a[i] - e[i]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn monte_carlo_is_seeded() {
        let part = partition(Variant::Quantized(2), 8, 2, 1);
        let a = monte_carlo_basins(&part, 20, 7).unwrap();
        let b = monte_carlo_basins(&part, 20, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.approximate);
        check_invariants(&part, &a);
        assert!(matches!(
            monte_carlo_basins(&part, 0, 7),
            Err(Error::Parameter(_))
        ));
    }
}

//! Neutral networks and local-optimum neutral networks (LONNs).

use std::io::Write;

use crate::error::{Error, Result};
use crate::landscape::{FitnessValue, Genotype, NkInstance};

/// Default enumeration cap on `n` for partitioning.
pub const DEFAULT_ENUMERATION_CAP: usize = 20;

/// Disjoint-set forest with path halving and union by size.
#[derive(Debug, Clone)]
pub(crate) struct UnionFind {
    parent: Vec<u32>,
    size: Vec<u32>,
}

impl UnionFind {
    pub(crate) fn new(n: usize) -> Self {
        Self {
            parent: (0..n as u32).collect(),
            size: vec![1; n],
        }
    }

    pub(crate) fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    pub(crate) fn union(&mut self, a: u32, b: u32) {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return;
        }
        if self.size[a as usize] < self.size[b as usize] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b as usize] = a;
        self.size[a as usize] += self.size[b as usize];
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeutralPartition {
    pub n: usize,
    /// Fitness numerator of every configuration.
    pub fitness: Vec<u64>,
    /// Neutral network id of every configuration. Ids are ordered by the
    /// lowest member genotype.
    pub nn_of: Vec<u32>,
    pub nn_fitness: Vec<FitnessValue>,
    pub nn_size: Vec<u32>,
    pub is_lonn: Vec<bool>,
    /// Dense LONN number of each NN, `None` for non-LONNs.
    pub lonn_index: Vec<Option<u32>>,
    /// NN id of each LONN, inverse of `lonn_index`.
    pub lonn_nn: Vec<u32>,
}

impl NeutralPartition {
    pub fn space_size(&self) -> usize {
        self.fitness.len()
    }

    pub fn nn_count(&self) -> usize {
        self.nn_size.len()
    }

    pub fn lonn_count(&self) -> usize {
        self.lonn_nn.len()
    }

    /// LONN containing `g`, if its neutral network is a LONN.
    #[inline]
    pub fn lonn_of(&self, g: Genotype) -> Option<u32> {
        self.lonn_index[self.nn_of[g.index()] as usize]
    }

    pub fn lonn_fitness(&self, lonn: u32) -> FitnessValue {
        self.nn_fitness[self.lonn_nn[lonn as usize] as usize]
    }

    pub fn neutral_degree(&self, g: Genotype) -> usize {
        let f = self.fitness[g.index()];
        (0..self.n)
            .filter(|&i| self.fitness[g.flip(i).index()] == f)
            .count()
    }

    /// Per-NN summary CSV: `nn_id,fitness,size,is_lonn`.
    pub fn write_summary_csv<W: Write>(&self, inst: &NkInstance, mut out: W) -> Result<()> {
        writeln!(out, "nn_id,fitness,size,is_lonn")?;
        for id in 0..self.nn_count() {
            writeln!(
                out,
                "{},{},{},{}",
                id,
                inst.to_real(self.nn_fitness[id]),
                self.nn_size[id],
                self.is_lonn[id] as u8
            )?;
        }
        Ok(())
    }
}

/// Partitions the space into neutral networks with a single scan over the
/// Hamming-1 edges. Each edge joins equal-fitness endpoints and marks the
/// network of the less fit endpoint as dominated.
pub fn neutral_partition(inst: &NkInstance) -> Result<NeutralPartition> {
    neutral_partition_capped(inst, DEFAULT_ENUMERATION_CAP)
}

pub fn neutral_partition_capped(inst: &NkInstance, cap: usize) -> Result<NeutralPartition> {
    let n = inst.n();
    if n > cap {
        return Err(Error::Capacity(format!(
            "n = {n} exceeds the enumeration cap of {cap}"
        )));
    }
    partition_from_fitness(n, inst.enumerate())
}

/// Partition of an explicit fitness table indexed by genotype.
pub fn partition_from_fitness(n: usize, fitness: Vec<u64>) -> Result<NeutralPartition> {
    let size = fitness.len();
    if size != 1 << n {
        return Err(Error::Consistency(format!(
            "fitness table has {size} entries, expected 2^{n}"
        )));
    }
    let mut uf = UnionFind::new(size);
    // A configuration with a strictly fitter neighbor dominates its whole NN.
    let mut improvable = vec![false; size];
    for g in 0..size as u32 {
        let fg = fitness[g as usize];
        for i in 0..n {
            let h = g ^ (1 << i);
            if h < g {
                continue;
            }
            let fh = fitness[h as usize];
            match fg.cmp(&fh) {
                std::cmp::Ordering::Equal => uf.union(g, h),
                std::cmp::Ordering::Less => improvable[g as usize] = true,
                std::cmp::Ordering::Greater => improvable[h as usize] = true,
            }
        }
    }

    let mut root_id = vec![u32::MAX; size];
    let mut nn_of = vec![0u32; size];
    let mut nn_fitness = Vec::new();
    let mut nn_size: Vec<u32> = Vec::new();
    let mut dominated: Vec<bool> = Vec::new();
    for g in 0..size as u32 {
        let root = uf.find(g) as usize;
        if root_id[root] == u32::MAX {
            root_id[root] = nn_fitness.len() as u32;
            nn_fitness.push(FitnessValue(fitness[g as usize]));
            nn_size.push(0);
            dominated.push(false);
        }
        let id = root_id[root];
        nn_of[g as usize] = id;
        nn_size[id as usize] += 1;
        dominated[id as usize] |= improvable[g as usize];
    }

    let is_lonn: Vec<bool> = dominated.iter().map(|d| !d).collect();
    let mut lonn_index = vec![None; is_lonn.len()];
    let mut lonn_nn = Vec::new();
    for (id, &lonn) in is_lonn.iter().enumerate() {
        if lonn {
            lonn_index[id] = Some(lonn_nn.len() as u32);
            lonn_nn.push(id as u32);
        }
    }
    Ok(NeutralPartition {
        n,
        fitness,
        nn_of,
        nn_fitness,
        nn_size,
        is_lonn,
        lonn_index,
        lonn_nn,
    })
}

/// Number of neighbors of `g` with exactly the same fitness.
pub fn neutral_degree(inst: &NkInstance, g: Genotype) -> usize {
    let f = inst.fitness(g);
    (0..inst.n()).filter(|&i| inst.fitness(g.flip(i)) == f).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landscape::{ModelSpec, Neighborhood, Variant};

    fn instance(variant: Variant, n: usize, k: usize, seed: u64) -> NkInstance {
        NkInstance::generate(ModelSpec::new(variant, n, k, Neighborhood::Random, seed)).unwrap()
    }

    #[test]
    fn constant_landscape_is_one_lonn() {
        let inst = instance(Variant::Probabilistic(1.0), 6, 2, 0);
        let part = neutral_partition(&inst).unwrap();
        assert_eq!(part.nn_count(), 1);
        assert_eq!(part.nn_size[0], 64);
        assert!(part.is_lonn[0]);
        assert_eq!(neutral_degree(&inst, Genotype(13)), 6);
        assert_eq!(part.neutral_degree(Genotype(13)), 6);
    }

    #[test]
    fn distinct_fitness_gives_singletons() {
        let inst = instance(Variant::Standard, 8, 3, 5);
        let mut f = inst.enumerate();
        f.sort_unstable();
        f.dedup();
        assert_eq!(f.len(), 256, "fixture must have distinct fitness values");
        let part = neutral_partition(&inst).unwrap();
        assert_eq!(part.nn_count(), 256);
        assert!(part.nn_size.iter().all(|&s| s == 1));
        assert!((0..256).all(|g| neutral_degree(&inst, Genotype(g)) == 0));
        // ids follow genotype order
        assert!((0..256).all(|g| part.nn_of[g] == g as u32));
    }

    #[test]
    fn lonn_definition_holds() {
        for seed in 0..10 {
            let inst = instance(Variant::Quantized(2), 8, 2, seed);
            let part = neutral_partition(&inst).unwrap();
            let mut lonn = vec![true; part.nn_count()];
            for g in 0..256u32 {
                let f = part.fitness[g as usize];
                if (0..8).any(|i| part.fitness[(g ^ (1 << i)) as usize] > f) {
                    lonn[part.nn_of[g as usize] as usize] = false;
                }
            }
            assert_eq!(lonn, part.is_lonn);
            let best = (0..256).max_by_key(|&g| part.fitness[g]).unwrap();
            assert!(part.is_lonn[part.nn_of[best] as usize]);
            assert_eq!(part.nn_size.iter().sum::<u32>(), 256);
        }
    }

    #[test]
    fn capacity_cap() {
        let inst = instance(Variant::Standard, 8, 2, 0);
        assert!(matches!(
            neutral_partition_capped(&inst, 6),
            Err(Error::Capacity(_))
        ));
    }

    #[test]
    fn summary_csv() {
        let inst = instance(Variant::Probabilistic(1.0), 4, 1, 0);
        let part = neutral_partition(&inst).unwrap();
        let mut buf = Vec::new();
        part.write_summary_csv(&inst, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "nn_id,fitness,size,is_lonn\n0,0,16,1\n");
    }
}

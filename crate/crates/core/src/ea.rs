//! Generational evolutionary algorithm with tournament selection, one-point
//! crossover, bit-flip mutation and elitism, plus success-rate experiments and
//! the mutation/crossover grid search.

use rand::distr::{Bernoulli, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::basins::mix64;
use crate::error::{Error, Result};
use crate::landscape::{ModelSpec, NkInstance};

/// Mutation multipliers `c` of the per-bit rate `c/N`.
pub const MUTATION_GRID: [f64; 6] = [0.01, 0.1, 0.5, 1.0, 1.5, 2.0];
pub const CROSSOVER_GRID: [f64; 6] = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];

/// Anything that maps an `n`-bit genotype to an integer fitness.
pub trait Evaluate {
    fn n(&self) -> usize;
    fn evaluate(&self, genotype: u32) -> u64;
}

impl Evaluate for NkInstance {
    fn n(&self) -> usize {
        NkInstance::n(self)
    }

    fn evaluate(&self, genotype: u32) -> u64 {
        self.fitness(crate::landscape::Genotype(genotype)).0
    }
}

/// A fully enumerated landscape with its known maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct FitnessTable {
    pub n: usize,
    pub values: Vec<u64>,
}

impl FitnessTable {
    pub fn new(n: usize, values: Vec<u64>) -> Result<Self> {
        if values.len() != 1 << n {
            return Err(Error::param(format!(
                "fitness table has {} entries, expected 2^{n}",
                values.len()
            )));
        }
        Ok(Self { n, values })
    }

    pub fn from_instance(inst: &NkInstance) -> Self {
        Self {
            n: inst.n(),
            values: inst.enumerate(),
        }
    }

    pub fn global_max(&self) -> u64 {
        self.values.iter().copied().max().unwrap_or(0)
    }
}

impl Evaluate for FitnessTable {
    fn n(&self) -> usize {
        self.n
    }

    #[inline]
    fn evaluate(&self, genotype: u32) -> u64 {
        self.values[genotype as usize]
    }
}

/// `ceil(0.1 * 2^n)`.
pub fn default_budget(n: usize) -> u64 {
    (1u64 << n).div_ceil(10)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EaConfig {
    pub pop_size: usize,
    /// Per-bit mutation rate is `mutation / N`.
    pub mutation: f64,
    pub crossover_rate: f64,
    pub tournament_size: usize,
    pub eval_budget: u64,
    pub elitism: usize,
    pub seed: u64,
}

impl EaConfig {
    /// Defaults; the budget is raised to one population when `ceil(0.1 * 2^n)`
    /// is smaller.
    pub fn new(n: usize) -> Self {
        Self {
            pop_size: 100,
            mutation: 1.0,
            crossover_rate: 0.6,
            tournament_size: 2,
            eval_budget: default_budget(n).max(100),
            elitism: 1,
            seed: 0,
        }
    }

    pub fn mutation_rate(&self, n: usize) -> f64 {
        self.mutation / n as f64
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let rate = self.mutation_rate(n);
        if !(0.0..=1.0).contains(&rate) {
            return Err(Error::param(format!("mutation rate {rate} outside [0, 1]")));
        }
        if !(0.0..=1.0).contains(&self.crossover_rate) {
            return Err(Error::param(format!(
                "crossover rate {} outside [0, 1]",
                self.crossover_rate
            )));
        }
        if self.pop_size < 2 {
            return Err(Error::param("population size must be at least 2"));
        }
        if self.tournament_size == 0 {
            return Err(Error::param("tournament size must be at least 1"));
        }
        if self.elitism >= self.pop_size {
            return Err(Error::param("elitism must be smaller than the population"));
        }
        if self.eval_budget < self.pop_size as u64 {
            return Err(Error::param(format!(
                "evaluation budget {} is smaller than the population {}",
                self.eval_budget, self.pop_size
            )));
        }
        if n < 2 {
            return Err(Error::param("one-point crossover needs n >= 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EaResult {
    pub success: bool,
    /// Evaluations used up to and including the first optimal one, or all
    /// evaluations spent when unsuccessful.
    pub evals: u64,
    /// Best fitness of each generation, starting with the initial population.
    pub best_fitness_trace: Vec<u64>,
}

/// Tournament with replacement; ties between the best entrants are broken
/// uniformly.
fn tournament<R: Rng>(fit: &[u64], size: usize, rng: &mut R) -> usize {
    let mut best = rng.random_range(0..fit.len());
    let mut tied = 1u32;
    for _ in 1..size {
        let c = rng.random_range(0..fit.len());
        if fit[c] > fit[best] {
            best = c;
            tied = 1;
        } else if fit[c] == fit[best] {
            tied += 1;
            if rng.random_range(0..tied) == 0 {
                best = c;
            }
        }
    }
    best
}

pub fn run_ea<E: Evaluate + ?Sized>(target: &E, global_max: u64, cfg: &EaConfig) -> Result<EaResult> {
    let n = target.n();
    cfg.validate(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let flip = Bernoulli::new(cfg.mutation_rate(n)).map_err(|e| Error::param(e.to_string()))?;
    let cross = Bernoulli::new(cfg.crossover_rate).map_err(|e| Error::param(e.to_string()))?;
    let mask = if n == 32 { u32::MAX } else { (1u32 << n) - 1 };

    let mut evals = 0u64;
    let mut pop: Vec<u32> = (0..cfg.pop_size).map(|_| rng.random::<u32>() & mask).collect();
    let mut fit = Vec::with_capacity(cfg.pop_size);
    for &g in &pop {
        let f = target.evaluate(g);
        evals += 1;
        fit.push(f);
        if f == global_max {
            return Ok(EaResult {
                success: true,
                evals,
                best_fitness_trace: vec![f],
            });
        }
    }
    let mut trace = vec![*fit.iter().max().expect("nonempty population")];

    let offspring = cfg.pop_size - cfg.elitism;
    while evals < cfg.eval_budget {
        // Stable sort keeps the lowest index first among equals.
        let mut order: Vec<usize> = (0..cfg.pop_size).collect();
        order.sort_by(|&a, &b| fit[b].cmp(&fit[a]));
        let mut next: Vec<u32> = order[..cfg.elitism].iter().map(|&i| pop[i]).collect();
        let mut next_fit: Vec<u64> = order[..cfg.elitism].iter().map(|&i| fit[i]).collect();

        let parents: Vec<u32> = (0..offspring)
            .map(|_| pop[tournament(&fit, cfg.tournament_size, &mut rng)])
            .collect();
        let mut children = Vec::with_capacity(offspring);
        for pair in parents.chunks(2) {
            match *pair {
                [a, b] if cross.sample(&mut rng) => {
                    let cut = rng.random_range(1..n);
                    let low = (1u32 << cut) - 1;
                    children.push((a & low) | (b & !low & mask));
                    children.push((b & low) | (a & !low & mask));
                }
                _ => children.extend_from_slice(pair),
            }
        }
        for child in &mut children {
            for bit in 0..n {
                if flip.sample(&mut rng) {
                    *child ^= 1 << bit;
                }
            }
        }

        for child in children {
            if evals == cfg.eval_budget {
                break;
            }
            let f = target.evaluate(child);
            evals += 1;
            next.push(child);
            next_fit.push(f);
            if f == global_max {
                trace.push(f);
                return Ok(EaResult {
                    success: true,
                    evals,
                    best_fitness_trace: trace,
                });
            }
        }
        if next.len() < cfg.pop_size {
            break;
        }
        pop = next;
        fit = next_fit;
        trace.push(*fit.iter().max().expect("nonempty population"));
    }
    Ok(EaResult {
        success: false,
        evals,
        best_fitness_trace: trace,
    })
}

/// Seed of run `run` derived from a base seed.
pub fn run_seed(seed: u64, run: u64) -> u64 {
    mix64(mix64(seed) ^ run)
}

/// Number of successful runs out of `runs`, each seeded by [`run_seed`].
pub fn success_count<E: Evaluate + Sync + ?Sized>(
    target: &E,
    global_max: u64,
    cfg: &EaConfig,
    runs: usize,
) -> Result<usize> {
    if runs == 0 {
        return Err(Error::param("runs must be at least 1"));
    }
    let mut hits = 0;
    for r in 0..runs as u64 {
        let cfg = EaConfig {
            seed: run_seed(cfg.seed, r),
            ..*cfg
        };
        hits += run_ea(target, global_max, &cfg)?.success as usize;
    }
    Ok(hits)
}

pub fn success_rate<E: Evaluate + Sync + ?Sized>(
    target: &E,
    global_max: u64,
    cfg: &EaConfig,
    runs: usize,
) -> Result<f64> {
    Ok(success_count(target, global_max, cfg, runs)? as f64 / runs as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridCell {
    pub mutation: f64,
    pub crossover: f64,
    pub successes: usize,
    pub runs: usize,
    pub success_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneResult {
    pub best: GridCell,
    /// All 36 cells, mutation-major.
    pub grid: Vec<GridCell>,
}

/// Evaluates every (mutation, crossover) pair on every table with `runs` runs
/// each and returns the pair with the highest mean success rate. Ties go to
/// the lower crossover rate, then the lower mutation rate.
pub fn grid_tune(tables: &[FitnessTable], base: &EaConfig, runs: usize) -> Result<TuneResult> {
    if tables.is_empty() {
        return Err(Error::param("grid_tune needs at least one instance"));
    }
    let pairs: Vec<(f64, f64)> = MUTATION_GRID
        .iter()
        .flat_map(|&m| CROSSOVER_GRID.iter().map(move |&x| (m, x)))
        .collect();
    let grid: Vec<GridCell> = pairs
        .par_iter()
        .map(|&(mutation, crossover)| {
            let mut successes = 0;
            for (t, table) in tables.iter().enumerate() {
                let cfg = EaConfig {
                    mutation,
                    crossover_rate: crossover,
                    seed: run_seed(base.seed, t as u64),
                    ..*base
                };
                successes += success_count(table, table.global_max(), &cfg, runs)?;
            }
            let total = runs * tables.len();
            Ok(GridCell {
                mutation,
                crossover,
                successes,
                runs: total,
                success_rate: successes as f64 / total as f64,
            })
        })
        .collect::<Result<_>>()?;
    let best = *grid
        .iter()
        .min_by(|a, b| {
            b.successes
                .cmp(&a.successes)
                .then(a.crossover.total_cmp(&b.crossover))
                .then(a.mutation.total_cmp(&b.mutation))
        })
        .expect("nonempty grid");
    Ok(TuneResult { best, grid })
}

/// Enumerated tables of `count` instances with seeds `first_seed..`.
pub fn family_tables(spec: ModelSpec, first_seed: u64, count: usize) -> Result<Vec<FitnessTable>> {
    (0..count as u64)
        .map(|i| {
            let inst = NkInstance::generate(ModelSpec {
                seed: first_seed + i,
                ..spec
            })?;
            Ok(FitnessTable::from_instance(&inst))
        })
        .collect()
}

//! NK, NKp and NKq landscapes over bit strings of length `n <= 20`.
//!
//! Fitness components are stored as integers so that two configurations are
//! neutral exactly when their integer sums agree. A component with table entry
//! `y` contributes `y / scale` to the component average, so the real-valued
//! fitness of a configuration is `numerator / (n * scale)`.
//!
//! Table lookup packs the relevant alleles into an index with the gene's own
//! allele in bit 0 and the allele of `links[i][j]` in bit `j + 1`.
//!
//! Generation uses one ChaCha8 stream per gene: the generator is seeded with
//! `seed_from_u64(seed)` and switched to stream `i` for gene `i`. Each gene
//! first draws its random partners (random neighborhood only) and then its
//! table entries in index order.

use std::fmt;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use serde_json::Value;

use crate::error::{Error, Result};

/// Largest gene count that can be enumerated.
pub const MAX_N: usize = 20;

/// Denominator for the standard and NKp components (30-bit integers).
pub const CONTINUOUS_SCALE: u64 = 1 << 30;

/// Name of the generator recorded in instance documents.
pub const PRNG_NAME: &str = "chacha8-stream-per-gene";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Genotype(pub u32);

impl Genotype {
    #[inline]
    pub fn allele(self, gene: usize) -> u32 {
        (self.0 >> gene) & 1
    }

    #[inline]
    pub fn flip(self, gene: usize) -> Genotype {
        Genotype(self.0 ^ (1 << gene))
    }

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for Genotype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// The `n` configurations at Hamming distance one, in ascending flipped-bit order.
pub fn neighbors(g: Genotype, n: usize) -> Vec<Genotype> {
    (0..n).map(|i| g.flip(i)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Variant {
    Standard,
    /// NKp: every table entry is zero with probability `p`.
    Probabilistic(f64),
    /// NKq: entries are integers in `0..q`.
    Quantized(u32),
}

impl Variant {
    pub fn model_name(&self) -> &'static str {
        match self {
            Variant::Standard => "nk",
            Variant::Probabilistic(_) => "nkp",
            Variant::Quantized(_) => "nkq",
        }
    }

    /// The neutrality parameter as printed in CSV files; empty for standard NK.
    pub fn param_string(&self) -> String {
        match self {
            Variant::Standard => String::new(),
            Variant::Probabilistic(p) => format!("{p}"),
            Variant::Quantized(q) => format!("{q}"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Variant::Probabilistic(p) if !(0.0..=1.0).contains(&p) => {
                Err(Error::param(format!("p = {p} outside [0, 1]")))
            }
            Variant::Quantized(q) if q < 2 => Err(Error::param(format!("q = {q} must be >= 2"))),
            _ => Ok(()),
        }
    }

    pub fn scale(&self) -> u64 {
        match self {
            Variant::Quantized(q) => *q as u64,
            _ => CONTINUOUS_SCALE,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Standard => write!(f, "nk"),
            Variant::Probabilistic(p) => write!(f, "nkp:{p}"),
            Variant::Quantized(q) => write!(f, "nkq:{q}"),
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    /// Accepts `nk`, `standard`, `nkp:<p>` and `nkq:<q>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let (model, param) = match s.split_once(':') {
            Some((m, p)) => (m, Some(p)),
            None => (s.as_str(), None),
        };
        let variant = match (model, param) {
            ("nk" | "standard", None) => Variant::Standard,
            ("nkp", Some(p)) => Variant::Probabilistic(
                p.parse()
                    .map_err(|_| Error::param(format!("bad p in `{s}`")))?,
            ),
            ("nkq", Some(q)) => Variant::Quantized(
                q.parse()
                    .map_err(|_| Error::param(format!("bad q in `{s}`")))?,
            ),
            _ => return Err(Error::param(format!("unknown model `{s}`"))),
        };
        variant.validate()?;
        Ok(variant)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Neighborhood {
    Adjacent,
    Random,
}

impl Neighborhood {
    pub fn as_str(&self) -> &'static str {
        match self {
            Neighborhood::Adjacent => "adjacent",
            Neighborhood::Random => "random",
        }
    }
}

impl FromStr for Neighborhood {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adjacent" => Ok(Neighborhood::Adjacent),
            "random" => Ok(Neighborhood::Random),
            _ => Err(Error::param(format!("unknown neighborhood `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelSpec {
    pub variant: Variant,
    pub n: usize,
    pub k: usize,
    pub neighborhood: Neighborhood,
    pub seed: u64,
}

impl ModelSpec {
    pub fn new(variant: Variant, n: usize, k: usize, neighborhood: Neighborhood, seed: u64) -> Self {
        Self {
            variant,
            n,
            k,
            neighborhood,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.variant.validate()?;
        if self.n == 0 {
            return Err(Error::param("n must be positive"));
        }
        if self.n > MAX_N {
            return Err(Error::Capacity(format!(
                "n = {} exceeds the enumeration cap of {MAX_N}",
                self.n
            )));
        }
        if self.k >= self.n {
            return Err(Error::param(format!("k = {} must be < n = {}", self.k, self.n)));
        }
        Ok(())
    }
}

/// Integer fitness numerator; the real value is `numerator / (n * scale)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct FitnessValue(pub u64);

impl FitnessValue {
    pub fn to_real(self, n: usize, scale: u64) -> f64 {
        self.0 as f64 / (n as f64 * scale as f64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NkInstance {
    pub spec: ModelSpec,
    pub links: Vec<Vec<usize>>,
    pub tables: Vec<Vec<u64>>,
    pub scale: u64,
}

/// Unbiased draw from `0..bound` by rejection on 32-bit words.
fn uniform_below(rng: &mut ChaCha8Rng, bound: u32) -> u32 {
    debug_assert!(bound > 0);
    let limit = (1u64 << 32) / bound as u64 * bound as u64;
    loop {
        let v = rng.next_u32() as u64;
        if v < limit {
            return (v % bound as u64) as u32;
        }
    }
}

fn unit_interval(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn adjacent_links(i: usize, n: usize, k: usize) -> Vec<usize> {
    let left = k.div_ceil(2);
    let right = k / 2;
    let mut links: Vec<usize> = (1..=left)
        .map(|d| (i + n - d) % n)
        .chain((1..=right).map(|d| (i + d) % n))
        .collect();
    links.sort_unstable();
    links
}

fn random_links(rng: &mut ChaCha8Rng, i: usize, n: usize, k: usize) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..n).filter(|&j| j != i).collect();
    for slot in 0..k {
        let pick = slot + uniform_below(rng, (pool.len() - slot) as u32) as usize;
        pool.swap(slot, pick);
    }
    let mut links = pool[..k].to_vec();
    links.sort_unstable();
    links
}

impl NkInstance {
    pub fn generate(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let ModelSpec { n, k, .. } = spec;
        let entries = 1usize << (k + 1);
        let mut links = Vec::with_capacity(n);
        let mut tables = Vec::with_capacity(n);
        for gene in 0..n {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(gene as u64);
            links.push(match spec.neighborhood {
                Neighborhood::Adjacent => adjacent_links(gene, n, k),
                Neighborhood::Random => random_links(&mut rng, gene, n, k),
            });
            let table: Vec<u64> = (0..entries)
                .map(|_| match spec.variant {
                    Variant::Standard | Variant::Probabilistic(_) => {
                        let p = match spec.variant {
                            Variant::Probabilistic(p) => p,
                            _ => 0.0,
                        };
                        let zeroed = unit_interval(&mut rng) < p;
                        let value = (rng.next_u32() >> 2) as u64;
                        if zeroed {
                            0
                        } else {
                            value
                        }
                    }
                    Variant::Quantized(q) => uniform_below(&mut rng, q) as u64,
                })
                .collect();
            tables.push(table);
        }
        Ok(Self {
            spec,
            links,
            tables,
            scale: spec.variant.scale(),
        })
    }

    pub fn n(&self) -> usize {
        self.spec.n
    }

    pub fn k(&self) -> usize {
        self.spec.k
    }

    /// Number of configurations, `2^n`.
    pub fn space_size(&self) -> usize {
        1 << self.spec.n
    }

    #[inline]
    pub fn fitness(&self, g: Genotype) -> FitnessValue {
        let mut sum = 0;
        for (gene, (links, table)) in self.links.iter().zip(&self.tables).enumerate() {
            let mut idx = g.allele(gene) as usize;
            for (j, &partner) in links.iter().enumerate() {
                idx |= (g.allele(partner) as usize) << (j + 1);
            }
            sum += table[idx];
        }
        FitnessValue(sum)
    }

    pub fn to_real(&self, f: FitnessValue) -> f64 {
        f.to_real(self.spec.n, self.scale)
    }

    /// Fitness numerators of all `2^n` configurations, indexed by genotype.
    pub fn enumerate(&self) -> Vec<u64> {
        (0..self.space_size() as u32)
            .map(|g| self.fitness(Genotype(g)).0)
            .collect()
    }

    /// Canonical text document; field order and layout are fixed so equal
    /// instances produce byte-identical output.
    pub fn to_document(&self) -> String {
        let spec = &self.spec;
        let param = match spec.variant {
            Variant::Standard => "null".to_string(),
            Variant::Probabilistic(p) => serde_json::to_string(&p).expect("finite p"),
            Variant::Quantized(q) => q.to_string(),
        };
        let rows = |rows: Vec<String>| rows.join(",\n    ");
        let links = rows(self.links.iter().map(|l| json_list(l)).collect());
        let tables = rows(self.tables.iter().map(|t| json_list(t)).collect());
        format!(
            "{{\n  \"model\": \"{}\",\n  \"n\": {},\n  \"k\": {},\n  \"param\": {},\n  \"neighborhood\": \"{}\",\n  \"seed\": {},\n  \"prng\": \"{}\",\n  \"scale\": {},\n  \"links\": [\n    {}\n  ],\n  \"tables\": [\n    {}\n  ]\n}}\n",
            spec.variant.model_name(),
            spec.n,
            spec.k,
            param,
            spec.neighborhood.as_str(),
            spec.seed,
            PRNG_NAME,
            self.scale,
            links,
            tables
        )
    }

    pub fn from_document(doc: &str) -> Result<Self> {
        let raw: RawDocument =
            serde_json::from_str(doc).map_err(|e| Error::parse("$", e.to_string()))?;
        raw.into_instance()
    }
}

fn json_list<T: ToString>(xs: &[T]) -> String {
    let body: Vec<String> = xs.iter().map(|x| x.to_string()).collect();
    format!("[{}]", body.join(", "))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDocument {
    model: String,
    n: usize,
    k: usize,
    param: Value,
    neighborhood: String,
    seed: u64,
    #[serde(default)]
    prng: Option<String>,
    scale: u64,
    links: Vec<Vec<usize>>,
    tables: Vec<Vec<u64>>,
}

impl RawDocument {
    fn into_instance(self) -> Result<NkInstance> {
        let variant = match self.model.as_str() {
            "nk" => {
                if !self.param.is_null() {
                    return Err(Error::parse("param", "must be null for model nk"));
                }
                Variant::Standard
            }
            "nkp" => Variant::Probabilistic(
                self.param
                    .as_f64()
                    .ok_or_else(|| Error::parse("param", "expected a probability"))?,
            ),
            "nkq" => Variant::Quantized(
                self.param
                    .as_u64()
                    .and_then(|q| u32::try_from(q).ok())
                    .ok_or_else(|| Error::parse("param", "expected an integer q"))?,
            ),
            other => return Err(Error::parse("model", format!("unknown model `{other}`"))),
        };
        variant
            .validate()
            .map_err(|e| Error::parse("param", e.to_string()))?;
        if let Some(prng) = &self.prng {
            if prng != PRNG_NAME {
                return Err(Error::parse("prng", format!("unsupported generator `{prng}`")));
            }
        }
        let neighborhood: Neighborhood = self
            .neighborhood
            .parse()
            .map_err(|e: Error| Error::parse("neighborhood", e.to_string()))?;
        let spec = ModelSpec::new(variant, self.n, self.k, neighborhood, self.seed);
        spec.validate().map_err(|e| Error::parse("n", e.to_string()))?;
        let (n, k) = (self.n, self.k);

        if self.scale != variant.scale() {
            return Err(Error::parse(
                "scale",
                format!("expected {} for model {}", variant.scale(), self.model),
            ));
        }
        if self.links.len() != n {
            return Err(Error::parse("links", format!("expected {n} rows")));
        }
        for (i, row) in self.links.iter().enumerate() {
            if row.len() != k {
                return Err(Error::parse(format!("links[{i}]"), format!("expected {k} entries")));
            }
            for (j, &partner) in row.iter().enumerate() {
                let path = format!("links[{i}][{j}]");
                if partner >= n {
                    return Err(Error::parse(path, format!("index {partner} out of range")));
                }
                if partner == i {
                    return Err(Error::parse(path, "gene linked to itself"));
                }
                if row[..j].contains(&partner) {
                    return Err(Error::parse(path, format!("duplicate partner {partner}")));
                }
            }
        }
        if self.tables.len() != n {
            return Err(Error::parse("tables", format!("expected {n} rows")));
        }
        let entries = 1usize << (k + 1);
        for (i, table) in self.tables.iter().enumerate() {
            if table.len() != entries {
                return Err(Error::parse(
                    format!("tables[{i}]"),
                    format!("expected {entries} entries"),
                ));
            }
            if let Some(j) = table.iter().position(|&v| v >= self.scale) {
                return Err(Error::parse(
                    format!("tables[{i}][{j}]"),
                    format!("value {} not below scale {}", table[j], self.scale),
                ));
            }
        }
        Ok(NkInstance {
            spec,
            links: self.links,
            tables: self.tables,
            scale: self.scale,
        })
    }
}

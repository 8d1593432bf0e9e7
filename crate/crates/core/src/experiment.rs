//! Batch experiments: the per-instance analysis pipeline, resumable
//! orchestration over a parameter grid, aggregation and EA campaigns.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::basins::{exact_basin_distributions, monte_carlo_basins, BasinDistribution};
use crate::ea::{self, EaConfig, FitnessTable};
use crate::error::{Error, Result};
use crate::landscape::{ModelSpec, Neighborhood, NkInstance, Variant, MAX_N, PRNG_NAME};
use crate::lon::{build_lon_with, LocalOptimaNetwork, OptimumTies};
use crate::metrics::{compute_metrics, metrics_columns, write_metrics_csv, write_per_node_csv, MetricsReport};
use crate::neutrality::{neutral_partition, NeutralPartition};
use crate::stats::{mean, sample_sd};

/// Largest `n` analyzed exactly without an explicit override.
pub const DESK_EXACT_LIMIT: usize = 14;

/// Environment variable holding the worker count.
pub const WORKERS_ENV: &str = "NKLON_WORKERS";

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum AnalysisMode {
    Exact,
    MonteCarlo { samples: usize, seed: u64 },
}

impl AnalysisMode {
    pub fn label(&self) -> String {
        match self {
            AnalysisMode::Exact => "exact".into(),
            AnalysisMode::MonteCarlo { samples, seed } => format!("mc:{samples}:{seed}"),
        }
    }
}

impl FromStr for AnalysisMode {
    type Err = Error;

    /// `exact`, `mc:<samples>` or `mc:<samples>:<seed>`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::param(format!("bad analysis mode `{s}` (expected exact or mc:<samples>[:<seed>])"));
        match parts.as_slice() {
            ["exact"] => Ok(AnalysisMode::Exact),
            ["mc", samples] => Ok(AnalysisMode::MonteCarlo {
                samples: samples.parse().map_err(|_| bad())?,
                seed: 0,
            }),
            ["mc", samples, seed] => Ok(AnalysisMode::MonteCarlo {
                samples: samples.parse().map_err(|_| bad())?,
                seed: seed.parse().map_err(|_| bad())?,
            }),
            _ => Err(bad()),
        }
    }
}

/// Refuses exact analysis above [`DESK_EXACT_LIMIT`] unless forced.
pub fn check_capacity(n: usize, mode: AnalysisMode, force: bool) -> Result<()> {
    if n > MAX_N {
        return Err(Error::Capacity(format!("n = {n} exceeds the maximum of {MAX_N}")));
    }
    if mode == AnalysisMode::Exact && n > DESK_EXACT_LIMIT && !force {
        return Err(Error::Capacity(format!(
            "exact analysis at n = {n} is long-running; pass --force to run it anyway (limit {DESK_EXACT_LIMIT})"
        )));
    }
    Ok(())
}

/// Everything computed for one instance.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub partition: NeutralPartition,
    pub basins: BasinDistribution,
    pub lon: LocalOptimaNetwork,
    pub report: MetricsReport,
}

pub fn analyze(inst: &NkInstance, mode: AnalysisMode, ties: OptimumTies) -> Result<Analysis> {
    let partition = neutral_partition(inst)?;
    let basins = match mode {
        AnalysisMode::Exact => exact_basin_distributions(&partition)?,
        AnalysisMode::MonteCarlo { samples, seed } => monte_carlo_basins(&partition, samples, seed)?,
    };
    let lon = build_lon_with(inst, &partition, &basins, ties)?;
    let report = compute_metrics(&inst.spec, &lon);
    Ok(Analysis {
        partition,
        basins,
        lon,
        report,
    })
}

/// Which files to write next to each instance document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Exports {
    pub edges: bool,
    pub graphml: bool,
    pub dot: bool,
    pub per_node: bool,
}

/// Writes the LON exports of one analysis into `dir`.
pub fn write_exports(analysis: &Analysis, exports: Exports, dir: &Path) -> Result<()> {
    let create = |name: &str| -> Result<BufWriter<fs::File>> { Ok(BufWriter::new(fs::File::create(dir.join(name))?)) };
    if exports.edges {
        analysis.lon.write_edge_csv(create("lon_edges.csv")?)?;
    }
    if exports.graphml {
        analysis.lon.write_graphml(create("lon.graphml")?)?;
    }
    if exports.dot {
        analysis.lon.write_dot(create("lon.dot")?)?;
    }
    if exports.per_node {
        write_per_node_csv(&analysis.lon, create("nodes.csv")?)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentPlan {
    #[serde(serialize_with = "serialize_variants")]
    pub variants: Vec<Variant>,
    pub ks: Vec<usize>,
    pub n: usize,
    pub instances: usize,
    /// Instance `i` of every cell uses seed `base_seed + i`.
    pub base_seed: u64,
    #[serde(serialize_with = "serialize_display")]
    pub neighborhood: Neighborhood,
    pub mode: AnalysisMode,
    pub exports: Exports,
    #[serde(serialize_with = "serialize_ties")]
    pub ties: OptimumTies,
    pub force: bool,
}

fn serialize_variants<S: serde::Serializer>(v: &[Variant], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(|x| x.to_string()))
}

fn serialize_display<S: serde::Serializer>(v: &Neighborhood, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(v.as_str())
}

fn serialize_ties<S: serde::Serializer>(v: &OptimumTies, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(v.as_str())
}

impl ExperimentPlan {
    pub fn new(variants: Vec<Variant>, n: usize, ks: Vec<usize>, instances: usize, base_seed: u64) -> Self {
        Self {
            variants,
            ks,
            n,
            instances,
            base_seed,
            neighborhood: Neighborhood::Random,
            mode: AnalysisMode::Exact,
            exports: Exports::default(),
            ties: OptimumTies::KeepAll,
            force: false,
        }
    }

    /// Instance specs in output order: model, then k, then seed.
    pub fn specs(&self) -> Vec<ModelSpec> {
        let mut out = Vec::new();
        for &variant in &self.variants {
            for &k in &self.ks {
                for i in 0..self.instances as u64 {
                    out.push(ModelSpec::new(variant, self.n, k, self.neighborhood, self.base_seed + i));
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.variants.is_empty() || self.ks.is_empty() || self.instances == 0 {
            return Err(Error::param("plan needs at least one model, one k and one instance"));
        }
        check_capacity(self.n, self.mode, self.force)?;
        for spec in self.specs().iter().step_by(self.instances) {
            spec.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
struct Manifest<'a> {
    version: &'static str,
    prng: &'static str,
    plan: &'a ExperimentPlan,
    seeds: Vec<u64>,
    computed: usize,
    skipped: usize,
    partial_removed: Vec<String>,
    wall_clock_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrchestrateSummary {
    pub computed: usize,
    pub skipped: usize,
    /// Instance directories found half-written and recomputed.
    pub partial_removed: Vec<String>,
    pub metrics_rows: usize,
}

fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let workers: usize = v
            .parse()
            .ok()
            .filter(|&w| w > 0)
            .ok_or_else(|| Error::param(format!("{WORKERS_ENV} must be a positive integer, got `{v}`")))?;
        builder = builder.num_threads(workers);
    }
    builder.build().map_err(|e| Error::param(e.to_string()))
}

fn plan_fingerprint(plan: &ExperimentPlan) -> Result<String> {
    Ok(serde_json::to_string(plan)?)
}

/// Runs every instance of the plan into `out`, skipping instances already
/// completed by an earlier run with the same plan.
///
/// Layout: `instances/<id>/{instance.json,metrics.csv,weights_hist.csv,...}`,
/// `metrics.csv`, `aggregate.csv`, `manifest.json`. Each instance directory is
/// written under `<id>.partial` and renamed when complete.
pub fn orchestrate(plan: &ExperimentPlan, out: &Path) -> Result<OrchestrateSummary> {
    plan.validate()?;
    let started = Instant::now();
    let root = out.join("instances");
    fs::create_dir_all(&root)?;

    let fingerprint_path = out.join("plan.json");
    let fingerprint = plan_fingerprint(plan)?;
    match fs::read_to_string(&fingerprint_path) {
        Ok(existing) if existing != fingerprint => {
            return Err(Error::param(format!(
                "{} holds results of a different plan; use another output directory",
                out.display()
            )))
        }
        Ok(_) => {}
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => fs::write(&fingerprint_path, &fingerprint)?,
        Err(e) => return Err(e.into()),
    }

    let specs = plan.specs();
    let mut partial_removed = Vec::new();
    let mut todo = Vec::new();
    for spec in &specs {
        let id = crate::metrics::instance_id(spec);
        let partial = root.join(format!("{id}.partial"));
        if partial.exists() {
            fs::remove_dir_all(&partial)?;
            partial_removed.push(id.clone());
        }
        let done = root.join(&id);
        if done.exists() {
            if !done.join("metrics.csv").is_file() || !done.join("instance.json").is_file() {
                return Err(Error::Consistency(format!(
                    "{} exists but is incomplete; remove it and re-run",
                    done.display()
                )));
            }
            continue;
        }
        todo.push(*spec);
    }

    let pool = worker_pool()?;
    let results: Vec<Result<()>> = pool.install(|| {
        todo.par_iter()
            .map(|spec| run_instance(plan, spec, &root))
            .collect()
    });
    for r in results {
        r?;
    }

    let rows = assemble_metrics(&specs, &root, &out.join("metrics.csv"))?;
    aggregate_file(&out.join("metrics.csv"), &out.join("aggregate.csv"))?;

    let manifest = Manifest {
        version: VERSION,
        prng: PRNG_NAME,
        plan,
        seeds: (0..plan.instances as u64).map(|i| plan.base_seed + i).collect(),
        computed: todo.len(),
        skipped: specs.len() - todo.len(),
        partial_removed: partial_removed.clone(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(OrchestrateSummary {
        computed: todo.len(),
        skipped: specs.len() - todo.len(),
        partial_removed,
        metrics_rows: rows,
    })
}

fn run_instance(plan: &ExperimentPlan, spec: &ModelSpec, root: &Path) -> Result<()> {
    let id = crate::metrics::instance_id(spec);
    let partial = root.join(format!("{id}.partial"));
    fs::create_dir_all(&partial)?;
    let inst = NkInstance::generate(*spec)?;
    fs::write(partial.join("instance.json"), inst.to_document())?;
    let analysis = analyze(&inst, plan.mode, plan.ties)?;
    write_metrics_csv(
        std::slice::from_ref(&analysis.report),
        BufWriter::new(fs::File::create(partial.join("metrics.csv"))?),
    )?;
    analysis
        .report
        .weight_histogram
        .write_csv(BufWriter::new(fs::File::create(partial.join("weights_hist.csv"))?))?;
    write_exports(&analysis, plan.exports, &partial)?;
    fs::rename(&partial, root.join(&id))?;
    Ok(())
}

/// Concatenates per-instance metrics rows in plan order.
fn assemble_metrics(specs: &[ModelSpec], root: &Path, path: &Path) -> Result<usize> {
    let mut text = metrics_columns().join(",");
    text.push('\n');
    for spec in specs {
        let file = root.join(crate::metrics::instance_id(spec)).join("metrics.csv");
        let body = fs::read_to_string(&file)?;
        let mut lines = body.lines();
        if lines.next() != Some(text.lines().next().unwrap_or_default()) {
            return Err(Error::Consistency(format!("{} has an unexpected header", file.display())));
        }
        let row = lines
            .next()
            .ok_or_else(|| Error::Consistency(format!("{} has no data row", file.display())))?;
        text.push_str(row);
        text.push('\n');
    }
    fs::write(path, &text)?;
    Ok(specs.len())
}

/// Numeric `metrics.csv` columns summarized per cell.
pub const AGGREGATED_COLUMNS: &[&str] = &[
    "n_nodes",
    "n_edges",
    "mean_wii",
    "mean_wij_offdiag",
    "mean_basin_size",
    "sd_basin_size",
    "lognormal_pass",
    "fitness_size_correlation",
    "n_global_optima",
    "global_optimum_basin_share",
    "cw_mean",
    "disparity_mean",
    "avg_path_length",
    "avg_path_to_optimum",
];

const CELL_KEYS: [&str; 5] = ["model", "param", "n", "k", "neighborhood"];

/// Parses a metrics cell: numbers, `true`/`false` as 1/0, empty as missing.
pub fn parse_value(field: &str) -> Result<Option<f64>> {
    match field {
        "" => Ok(None),
        "true" => Ok(Some(1.0)),
        "false" => Ok(Some(0.0)),
        other => other
            .parse()
            .map(Some)
            .map_err(|_| Error::parse(other, "not a number")),
    }
}

/// One row of `aggregate.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub key: Vec<String>,
    pub instances: usize,
    /// `(mean, sample sd, count)` of the non-missing values per column.
    pub columns: Vec<(Option<f64>, Option<f64>, usize)>,
}

/// Per-cell means and sample standard deviations of a metrics table, cells in
/// order of first appearance.
pub fn aggregate<R: std::io::Read>(metrics: R) -> Result<Vec<CellSummary>> {
    let mut reader = csv::Reader::from_reader(metrics);
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::parse("metrics.csv", format!("missing column `{name}`")))
    };
    let key_idx: Vec<usize> = CELL_KEYS.iter().map(|c| find(c)).collect::<Result<_>>()?;
    let col_idx: Vec<usize> = AGGREGATED_COLUMNS.iter().map(|c| find(c)).collect::<Result<_>>()?;

    let mut order: Vec<Vec<String>> = Vec::new();
    let mut cells: BTreeMap<Vec<String>, Vec<Vec<Option<f64>>>> = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let key: Vec<String> = key_idx.iter().map(|&i| record[i].to_string()).collect();
        let values = col_idx.iter().map(|&i| parse_value(&record[i])).collect::<Result<Vec<_>>>()?;
        if !cells.contains_key(&key) {
            order.push(key.clone());
        }
        cells.entry(key).or_default().push(values);
    }
    Ok(order
        .into_iter()
        .map(|key| {
            let rows = &cells[&key];
            let columns = (0..AGGREGATED_COLUMNS.len())
                .map(|c| {
                    let xs: Vec<f64> = rows.iter().filter_map(|r| r[c]).collect();
                    if xs.is_empty() {
                        (None, None, 0)
                    } else {
                        (Some(mean(&xs)), Some(sample_sd(&xs)), xs.len())
                    }
                })
                .collect();
            CellSummary {
                instances: rows.len(),
                key,
                columns,
            }
        })
        .collect())
}

pub fn write_aggregate<W: Write>(cells: &[CellSummary], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = CELL_KEYS.iter().map(|s| s.to_string()).collect();
    header.push("instances".into());
    for c in AGGREGATED_COLUMNS {
        header.push(format!("{c}_mean"));
        header.push(format!("{c}_sd"));
        header.push(format!("{c}_count"));
    }
    w.write_record(&header)?;
    let show = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for cell in cells {
        let mut row = cell.key.clone();
        row.push(cell.instances.to_string());
        for &(m, sd, count) in &cell.columns {
            row.push(show(m));
            row.push(show(sd));
            row.push(count.to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Recomputes `aggregate.csv` from a `metrics.csv` file.
pub fn aggregate_file(metrics: &Path, out: &Path) -> Result<()> {
    let cells = aggregate(fs::File::open(metrics)?)?;
    write_aggregate(&cells, BufWriter::new(fs::File::create(out)?))
}

/// Row of `ea_results.csv`. `mutation` is the multiplier `c` of the per-bit
/// rate `c/N`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EaRow {
    pub instance_id: String,
    pub model: String,
    pub n: usize,
    pub k: usize,
    pub param: String,
    pub mutation: f64,
    pub crossover: f64,
    pub runs: usize,
    pub success_rate: f64,
}

/// Success rate of every instance of `spec`'s family with seeds
/// `first_seed..first_seed + instances`.
pub fn ea_campaign(spec: ModelSpec, instances: usize, cfg: &EaConfig, runs: usize) -> Result<Vec<EaRow>> {
    let pool = worker_pool()?;
    pool.install(|| {
        (0..instances as u64)
            .into_par_iter()
            .map(|i| {
                let spec = ModelSpec {
                    seed: spec.seed + i,
                    ..spec
                };
                let inst = NkInstance::generate(spec)?;
                let table = FitnessTable::from_instance(&inst);
                let cfg = EaConfig {
                    seed: ea::run_seed(cfg.seed, spec.seed),
                    ..*cfg
                };
                let rate = ea::success_rate(&table, table.global_max(), &cfg, runs)?;
                Ok(EaRow {
                    instance_id: crate::metrics::instance_id(&spec),
                    model: spec.variant.model_name().into(),
                    n: spec.n,
                    k: spec.k,
                    param: spec.variant.param_string(),
                    mutation: cfg.mutation,
                    crossover: cfg.crossover_rate,
                    runs,
                    success_rate: rate,
                })
            })
            .collect()
    })
}

pub fn write_ea_rows<W: Write>(rows: &[EaRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Row of the tuning table: best pair of one (model, k) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuneRow {
    pub model: String,
    pub n: usize,
    pub k: usize,
    pub param: String,
    pub mutation: f64,
    pub crossover: f64,
    pub runs: usize,
    pub success_rate: f64,
}

pub fn tune_cell(spec: ModelSpec, instances: usize, cfg: &EaConfig, runs: usize) -> Result<(TuneRow, ea::TuneResult)> {
    let tables = ea::family_tables(spec, spec.seed, instances)?;
    let pool = worker_pool()?;
    let result = pool.install(|| ea::grid_tune(&tables, cfg, runs))?;
    let row = TuneRow {
        model: spec.variant.model_name().into(),
        n: spec.n,
        k: spec.k,
        param: spec.variant.param_string(),
        mutation: result.best.mutation,
        crossover: result.best.crossover,
        runs: result.best.runs,
        success_rate: result.best.success_rate,
    };
    Ok((row, result))
}

pub fn write_tune_rows<W: Write>(rows: &[TuneRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Looks up tuned rates for `(model, param, n, k)` in a tuning table.
pub fn read_tuned(path: &Path, spec: &ModelSpec) -> Result<(f64, f64)> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::parse(path.display().to_string(), format!("missing column `{name}`")))
    };
    let (m, p, n, k, mu, cx) = (col("model")?, col("param")?, col("n")?, col("k")?, col("mutation")?, col("crossover")?);
    for record in reader.records() {
        let r = record?;
        if r[m] == *spec.variant.model_name()
            && r[p] == spec.variant.param_string()
            && r[n] == spec.n.to_string()
            && r[k] == spec.k.to_string()
        {
            let num = |i: usize| -> Result<f64> {
                r[i].parse()
                    .map_err(|_| Error::parse(path.display().to_string(), format!("bad number `{}`", &r[i])))
            };
            return Ok((num(mu)?, num(cx)?));
        }
    }
    Err(Error::param(format!(
        "{} has no tuned rates for {} n={} k={}",
        path.display(),
        spec.variant,
        spec.n,
        spec.k
    )))
}

/// Reads one column of a CSV file, keeping rows where every `key=value`
/// filter matches. Missing values are skipped.
pub fn read_column(path: &Path, column: &str, filters: &[(String, String)]) -> Result<Vec<f64>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let index = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::parse(path.display().to_string(), format!("missing column `{name}`")))
    };
    let target = index(column)?;
    let filters: Vec<(usize, &str)> = filters
        .iter()
        .map(|(k, v)| Ok((index(k)?, v.as_str())))
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for record in reader.records() {
        let r = record?;
        if filters.iter().all(|&(i, v)| &r[i] == v) {
            if let Some(x) = parse_value(&r[target])? {
                out.push(x);
            }
        }
    }
    Ok(out)
}

/// `path` and `column` of a `FILE:COLUMN` argument, split at the last colon.
pub fn split_column_ref(s: &str) -> Result<(PathBuf, String)> {
    let (file, column) = s
        .rsplit_once(':')
        .ok_or_else(|| Error::param(format!("expected FILE:COLUMN, got `{s}`")))?;
    if file.is_empty() || column.is_empty() {
        return Err(Error::param(format!("expected FILE:COLUMN, got `{s}`")));
    }
    Ok((PathBuf::from(file), column.to_string()))
}

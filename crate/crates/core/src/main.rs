use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use nklon::ea::EaConfig;
use nklon::experiment::{
    self, analyze, check_capacity, AnalysisMode, ExperimentPlan, Exports, WORKERS_ENV,
};
use nklon::landscape::{ModelSpec, Neighborhood, NkInstance, Variant};
use nklon::lon::OptimumTies;
use nklon::metrics::write_metrics_csv;
use nklon::stats::{mann_whitney_with, Alternative, Method};
use nklon::{Error, Result};

const DEFAULT_MODELS: &str = "nk,nkq:2,nkq:4,nkq:10,nkp:0.5,nkp:0.8,nkp:0.9";
const DEFAULT_KS: &str = "2,4,6,8,10,12,14,16,17";

#[derive(Parser)]
#[command(
    name = "nklon",
    version,
    about = "Local optima networks of NK, NKp and NKq landscapes",
    after_help = format!("Environment:\n  {WORKERS_ENV}  number of worker threads (default: all cores)\n\nExit codes: 0 success, 2 parameter error, 3 capacity error, 4 convergence error, 1 other")
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate one instance document.
    Gen {
        #[command(flatten)]
        model: ModelArgs,
        /// Output file (stdout when omitted).
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Analyze one instance: neutral networks, basins, LON and metrics.
    Analyze {
        #[command(flatten)]
        source: SourceArgs,
        #[command(flatten)]
        analysis: AnalysisArgs,
        #[command(flatten)]
        exports: ExportArgs,
        /// Output directory (metrics row to stdout when omitted).
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Run a resumable batch over a model grid.
    Run {
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        analysis: AnalysisArgs,
        #[command(flatten)]
        exports: ExportArgs,
        /// Output directory.
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Measure EA success rates over a model grid.
    Ea {
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        ea: EaArgs,
        /// Mutation multiplier c (per-bit rate c/N).
        #[arg(long, default_value_t = 1.0)]
        mutation: f64,
        /// Crossover probability.
        #[arg(long, default_value_t = 0.6)]
        crossover: f64,
        /// Tuning table from `tune`; overrides --mutation and --crossover per cell.
        #[arg(long)]
        tuned: Option<PathBuf>,
        /// Output CSV.
        #[arg(short, long, default_value = "ea_results.csv")]
        out: PathBuf,
    },
    /// Grid-search mutation and crossover rates per (model, k) cell.
    Tune {
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        ea: EaArgs,
        /// Output CSV with the best pair per cell.
        #[arg(short, long, default_value = "tune.csv")]
        out: PathBuf,
        /// Optional CSV with all 36 pairs per cell.
        #[arg(long)]
        grid_out: Option<PathBuf>,
    },
    /// Recompute per-cell means and standard deviations from metrics.csv.
    Aggregate {
        /// Input metrics table.
        #[arg(long, default_value = "metrics.csv")]
        metrics: PathBuf,
        /// Output file.
        #[arg(short, long, default_value = "aggregate.csv")]
        out: PathBuf,
    },
    /// Mann-Whitney U test between two CSV columns (FILE:COLUMN).
    Compare {
        first: String,
        second: String,
        /// Row filter KEY=VALUE on the first file (repeatable).
        #[arg(long = "where-a", value_parser = parse_filter)]
        where_a: Vec<(String, String)>,
        /// Row filter KEY=VALUE on the second file (repeatable).
        #[arg(long = "where-b", value_parser = parse_filter)]
        where_b: Vec<(String, String)>,
        #[arg(long, value_enum, default_value_t = AltArg::TwoSided)]
        alternative: AltArg,
    },
    /// Export the LON of one instance as GraphML, DOT or an edge list.
    Export {
        #[command(flatten)]
        source: SourceArgs,
        #[command(flatten)]
        analysis: AnalysisArgs,
        #[arg(long, value_enum, default_value_t = Format::Graphml)]
        format: Format,
        /// Output file (stdout when omitted).
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// nk, nkp:<p> or nkq:<q>.
    #[arg(long, default_value = "nk")]
    model: Variant,
    #[arg(long, default_value_t = 18)]
    n: usize,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// random or adjacent.
    #[arg(long, default_value = "random")]
    neighborhood: Neighborhood,
}

#[derive(Args)]
struct SourceArgs {
    /// Instance document to load.
    #[arg(long, conflicts_with_all = ["model", "n", "k", "seed", "neighborhood"])]
    instance: Option<PathBuf>,
    /// nk, nkp:<p> or nkq:<q> (when generating).
    #[arg(long, default_value = "nk")]
    model: Variant,
    #[arg(long, default_value_t = 18)]
    n: usize,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "random")]
    neighborhood: Neighborhood,
}

impl SourceArgs {
    fn load(&self) -> Result<NkInstance> {
        match &self.instance {
            Some(path) => NkInstance::from_document(&fs::read_to_string(path)?),
            None => {
                let k = self
                    .k
                    .ok_or_else(|| Error::Parameter("either --instance or --k is required".into()))?;
                NkInstance::generate(ModelSpec::new(self.model, self.n, k, self.neighborhood, self.seed))
            }
        }
    }
}

#[derive(Args)]
struct AnalysisArgs {
    /// exact, mc:<samples> or mc:<samples>:<seed>.
    #[arg(long, default_value = "exact")]
    mode: AnalysisMode,
    /// Allow exact analysis above n = 14.
    #[arg(long)]
    force: bool,
    /// Global-optimum ties: keep-all or reject.
    #[arg(long, default_value = "keep-all")]
    ties: OptimumTies,
}

#[derive(Args)]
struct ExportArgs {
    /// Write the LON edge list (lon_edges.csv).
    #[arg(long)]
    edges: bool,
    /// Write lon.graphml.
    #[arg(long)]
    graphml: bool,
    /// Write lon.dot.
    #[arg(long)]
    dot: bool,
    /// Write per-node metrics (nodes.csv).
    #[arg(long)]
    per_node: bool,
}

impl ExportArgs {
    fn exports(&self) -> Exports {
        Exports {
            edges: self.edges,
            graphml: self.graphml,
            dot: self.dot,
            per_node: self.per_node,
        }
    }
}

#[derive(Args)]
struct GridArgs {
    /// Comma-separated models.
    #[arg(long, value_delimiter = ',', default_value = DEFAULT_MODELS)]
    models: Vec<Variant>,
    #[arg(long, default_value_t = 18)]
    n: usize,
    /// Comma-separated epistasis values.
    #[arg(long, value_delimiter = ',', default_value = DEFAULT_KS)]
    ks: Vec<usize>,
    /// Instances per (model, k) cell.
    #[arg(long, default_value_t = 30)]
    instances: usize,
    /// Instance i of each cell uses seed + i.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "random")]
    neighborhood: Neighborhood,
}

impl GridArgs {
    fn cells(&self) -> Vec<ModelSpec> {
        let mut out = Vec::new();
        for &variant in &self.models {
            for &k in &self.ks {
                out.push(ModelSpec::new(variant, self.n, k, self.neighborhood, self.seed));
            }
        }
        out
    }
}

#[derive(Args)]
struct EaArgs {
    /// Runs per instance.
    #[arg(long, default_value_t = 100)]
    runs: usize,
    #[arg(long, default_value_t = 100)]
    pop: usize,
    /// Evaluation budget (default ceil(0.1 * 2^n), at least one population).
    #[arg(long)]
    budget: Option<u64>,
    /// Base seed of the EA runs.
    #[arg(long, default_value_t = 0)]
    ea_seed: u64,
}

impl EaArgs {
    fn config(&self, n: usize) -> EaConfig {
        let base = EaConfig::new(n);
        EaConfig {
            pop_size: self.pop,
            eval_budget: self.budget.unwrap_or(base.eval_budget.max(self.pop as u64)),
            seed: self.ea_seed,
            ..base
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AltArg {
    TwoSided,
    Less,
    Greater,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Graphml,
    Dot,
    Edges,
}

fn parse_filter(s: &str) -> std::result::Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .ok_or_else(|| format!("expected KEY=VALUE, got `{s}`"))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(fs::File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { model, out } => {
            let inst = NkInstance::generate(ModelSpec::new(
                model.model,
                model.n,
                model.k,
                model.neighborhood,
                model.seed,
            ))?;
            let mut w = output(out.as_deref())?;
            w.write_all(inst.to_document().as_bytes())?;
            w.flush()?;
        }
        Command::Analyze {
            source,
            analysis,
            exports,
            out,
        } => {
            let inst = source.load()?;
            check_capacity(inst.n(), analysis.mode, analysis.force)?;
            let result = analyze(&inst, analysis.mode, analysis.ties)?;
            match out {
                Some(dir) => {
                    fs::create_dir_all(&dir)?;
                    let file = |name: &str| -> Result<BufWriter<fs::File>> {
                        Ok(BufWriter::new(fs::File::create(dir.join(name))?))
                    };
                    fs::write(dir.join("instance.json"), inst.to_document())?;
                    write_metrics_csv(std::slice::from_ref(&result.report), file("metrics.csv")?)?;
                    result.partition.write_summary_csv(&inst, file("neutral_networks.csv")?)?;
                    result
                        .basins
                        .write_basin_sizes_csv(&inst, &result.partition, file("basins.csv")?)?;
                    result.report.weight_histogram.write_csv(file("weights_hist.csv")?)?;
                    experiment::write_exports(&result, exports.exports(), &dir)?;
                }
                None => write_metrics_csv(std::slice::from_ref(&result.report), io::stdout().lock())?,
            }
        }
        Command::Run {
            grid,
            analysis,
            exports,
            out,
        } => {
            let plan = ExperimentPlan {
                neighborhood: grid.neighborhood,
                mode: analysis.mode,
                exports: exports.exports(),
                ties: analysis.ties,
                force: analysis.force,
                ..ExperimentPlan::new(grid.models.clone(), grid.n, grid.ks.clone(), grid.instances, grid.seed)
            };
            let summary = experiment::orchestrate(&plan, &out)?;
            for id in &summary.partial_removed {
                eprintln!("warning: recomputed partially written instance {id}");
            }
            eprintln!(
                "{} instances computed, {} already complete; {} rows in {}",
                summary.computed,
                summary.skipped,
                summary.metrics_rows,
                out.join("metrics.csv").display()
            );
        }
        Command::Ea {
            grid,
            ea,
            mutation,
            crossover,
            tuned,
            out,
        } => {
            let mut rows = Vec::new();
            for spec in grid.cells() {
                spec.validate()?;
                let (m, x) = match &tuned {
                    Some(path) => experiment::read_tuned(path, &spec)?,
                    None => (mutation, crossover),
                };
                let cfg = EaConfig {
                    mutation: m,
                    crossover_rate: x,
                    ..ea.config(spec.n)
                };
                rows.extend(experiment::ea_campaign(spec, grid.instances, &cfg, ea.runs)?);
            }
            experiment::write_ea_rows(&rows, BufWriter::new(fs::File::create(&out)?))?;
            eprintln!("{} rows in {}", rows.len(), out.display());
        }
        Command::Tune {
            grid,
            ea,
            out,
            grid_out,
        } => {
            let mut best = Vec::new();
            let mut all = match grid_out.as_deref() {
                Some(p) => Some(csv::Writer::from_path(p)?),
                None => None,
            };
            if let Some(w) = all.as_mut() {
                w.write_record(["model", "n", "k", "param", "mutation", "crossover", "runs", "successes", "success_rate"])?;
            }
            for spec in grid.cells() {
                spec.validate()?;
                let (row, result) = experiment::tune_cell(spec, grid.instances, &ea.config(spec.n), ea.runs)?;
                if let Some(w) = all.as_mut() {
                    for c in &result.grid {
                        w.write_record([
                            row.model.clone(),
                            row.n.to_string(),
                            row.k.to_string(),
                            row.param.clone(),
                            c.mutation.to_string(),
                            c.crossover.to_string(),
                            c.runs.to_string(),
                            c.successes.to_string(),
                            c.success_rate.to_string(),
                        ])?;
                    }
                }
                best.push(row);
            }
            if let Some(mut w) = all {
                w.flush()?;
            }
            experiment::write_tune_rows(&best, BufWriter::new(fs::File::create(&out)?))?;
        }
        Command::Aggregate { metrics, out } => experiment::aggregate_file(&metrics, &out)?,
        Command::Compare {
            first,
            second,
            where_a,
            where_b,
            alternative,
        } => {
            let (fa, ca) = experiment::split_column_ref(&first)?;
            let (fb, cb) = experiment::split_column_ref(&second)?;
            let a = experiment::read_column(&fa, &ca, &where_a)?;
            let b = experiment::read_column(&fb, &cb, &where_b)?;
            let alt = match alternative {
                AltArg::TwoSided => Alternative::TwoSided,
                AltArg::Less => Alternative::Less,
                AltArg::Greater => Alternative::Greater,
            };
            let r = mann_whitney_with(&a, &b, alt)?;
            let method = match r.method {
                Method::Exact => "exact",
                Method::Asymptotic => "normal-approximation",
            };
            println!("n,m,u,p_value,method");
            println!("{},{},{},{},{}", r.n, r.m.unwrap_or(0), r.statistic, r.p_value, method);
        }
        Command::Export {
            source,
            analysis,
            format,
            out,
        } => {
            let inst = source.load()?;
            check_capacity(inst.n(), analysis.mode, analysis.force)?;
            let result = analyze(&inst, analysis.mode, analysis.ties)?;
            let mut w = output(out.as_deref())?;
            match format {
                Format::Graphml => result.lon.write_graphml(&mut w)?,
                Format::Dot => result.lon.write_dot(&mut w)?,
                Format::Edges => result.lon.write_edge_csv(&mut w)?,
            }
            w.flush()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

mod manifest;

use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use unifrac_core::bench::{run_bench, BenchOptions};
use unifrac_core::stripes::{read_stripe_file, write_stripe_file};
use unifrac_core::validate::{DEFAULT_PERMUTATIONS, MANTEL_CORRELATION, MANTEL_RNG};
use unifrac_core::{
    compute_unifrac, condense, load_table, mantel, parse_newick, AnyStripeSet, ComputeOptions,
    DistanceMatrix, KernelConfig, KernelCounters, KernelVariant, Metric, PhyloTree, Precision,
    Real, SampleTable, StripeSet, TableFormat, UnifracError,
};

use manifest::{InputDigest, RunManifest};

const TOOL: &str = "unifrac";

#[derive(Parser)]
#[command(name = TOOL, version, about = "Striped UniFrac distance matrices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute a distance matrix, or a partial stripe file with --stripes.
    Compute(ComputeArgs),
    /// Merge partial stripe files into a distance matrix.
    Merge(MergeArgs),
    /// Mantel test between two distance matrices.
    Compare(CompareArgs),
    /// Time the kernel variants on a synthetic instance.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Unweighted,
    WeightedUnnormalized,
    WeightedNormalized,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Unweighted => Metric::Unweighted,
            MetricArg::WeightedUnnormalized => Metric::WeightedUnnormalized,
            MetricArg::WeightedNormalized => Metric::WeightedNormalized,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    Fp32,
    Fp64,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::Fp32 => Precision::Fp32,
            PrecisionArg::Fp64 => Precision::Fp64,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Naive,
    Batched,
    Tiled,
}

impl From<VariantArg> for KernelVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Naive => KernelVariant::Naive,
            VariantArg::Batched => KernelVariant::Batched,
            VariantArg::Tiled => KernelVariant::Tiled,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TableFormatArg {
    TsvDense,
    TsvSparse,
}

impl From<TableFormatArg> for TableFormat {
    fn from(f: TableFormatArg) -> Self {
        match f {
            TableFormatArg::TsvDense => TableFormat::TsvDense,
            TableFormatArg::TsvSparse => TableFormat::TsvSparse,
        }
    }
}

fn parse_range(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| format!("expected start:stop, got '{s}'"))?;
    let start = a.trim().parse().map_err(|_| format!("bad start '{a}'"))?;
    let stop = b.trim().parse().map_err(|_| format!("bad stop '{b}'"))?;
    if start >= stop {
        return Err(format!("empty range {start}:{stop}"));
    }
    Ok((start, stop))
}

#[derive(Args)]
struct TableArgs {
    #[arg(long)]
    table: PathBuf,
    #[arg(long, value_enum, default_value = "tsv-dense")]
    table_format: TableFormatArg,
}

#[derive(Args)]
struct ComputeArgs {
    #[arg(long)]
    tree: PathBuf,
    #[command(flatten)]
    table: TableArgs,
    #[arg(long, value_enum)]
    metric: MetricArg,
    #[arg(long, value_enum, default_value = "fp64")]
    precision: PrecisionArg,
    #[arg(long, value_enum, default_value = "tiled")]
    variant: VariantArg,
    #[arg(long, default_value_t = unifrac_core::embed::DEFAULT_BATCH_CAPACITY)]
    batch_size: usize,
    /// Defaults to 16 for fp64 and 32 for fp32.
    #[arg(long)]
    step_size: Option<usize>,
    /// Half-open stripe range; writes a partial stripe file.
    #[arg(long, value_parser = parse_range)]
    stripes: Option<(usize, usize)>,
    /// 0 uses every core.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    #[arg(long)]
    out: PathBuf,
    /// Recorded in the manifest; the computation itself is deterministic.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct MergeArgs {
    /// Supplies the sample ids, which stripe files do not store.
    #[command(flatten)]
    table: TableArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(required = true)]
    parts: Vec<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    m1: PathBuf,
    m2: PathBuf,
    #[arg(long, default_value_t = DEFAULT_PERMUTATIONS)]
    permutations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct BenchArgs {
    /// Samples.
    #[arg(long, default_value_t = 256)]
    n: usize,
    #[arg(long, default_value_t = 256)]
    features: usize,
    #[arg(long, default_value_t = 0.1)]
    density: f64,
    #[arg(
        long,
        value_enum,
        value_delimiter = ',',
        default_value = "naive,batched,tiled"
    )]
    variants: Vec<VariantArg>,
    #[arg(long, default_value_t = 1)]
    repeat: usize,
    #[arg(long, value_enum, default_value = "weighted-unnormalized")]
    metric: MetricArg,
    #[arg(long, value_enum, default_value = "fp64")]
    precision: PrecisionArg,
    #[arg(long, default_value_t = unifrac_core::embed::DEFAULT_BATCH_CAPACITY)]
    batch_size: usize,
    #[arg(long)]
    step_size: Option<usize>,
    #[arg(long, default_value_t = 0)]
    threads: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Core {
        context: String,
        source: UnifracError,
    },
    #[error(transparent)]
    Unifrac(#[from] UnifracError),
    #[error("{0}")]
    Message(String),
}

fn core_err<E: Into<UnifracError>>(context: impl Into<String>) -> impl FnOnce(E) -> CliError {
    let context = context.into();
    move |e| CliError::Core {
        context,
        source: e.into(),
    }
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })
}

fn load_tree(path: &Path) -> Result<(PhyloTree, InputDigest), CliError> {
    let bytes = read(path)?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| CliError::Message(format!("{}: tree is not UTF-8", path.display())))?;
    let tree = parse_newick(&text).map_err(core_err(path.display().to_string()))?;
    Ok((tree, InputDigest::new("tree", path, &bytes)))
}

fn load_sample_table(args: &TableArgs) -> Result<(SampleTable, InputDigest), CliError> {
    let bytes = read(&args.table)?;
    let table = load_table(BufReader::new(bytes.as_slice()), args.table_format.into())
        .map_err(core_err(args.table.display().to_string()))?;
    Ok((table, InputDigest::new("table", &args.table, &bytes)))
}

fn manifest_write(manifest: &RunManifest, out: &Path) -> Result<(), CliError> {
    manifest.write_next_to(out).map_err(|source| CliError::Io {
        path: manifest::manifest_path(out),
        source,
    })
}

struct Computed {
    bytes: Vec<u8>,
    counters: KernelCounters,
    range: (usize, usize),
}

fn compute_bytes<T: Real>(
    tree: &PhyloTree,
    table: &SampleTable,
    options: &ComputeOptions,
    partial: bool,
) -> Result<Computed, UnifracError> {
    let out = compute_unifrac::<T>(tree, table, options)?;
    let range = (out.stripes.start(), out.stripes.stop());
    let bytes = if partial {
        write_stripe_file(&out.stripes)?
    } else {
        out.to_matrix()?.to_tsv().into_bytes()
    };
    Ok(Computed {
        bytes,
        counters: out.counters,
        range,
    })
}

fn cmd_compute(args: ComputeArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let (tree, tree_digest) = load_tree(&args.tree)?;
    let (table, table_digest) = load_sample_table(&args.table)?;
    let precision = Precision::from(args.precision);
    let metric = Metric::from(args.metric);
    let variant = KernelVariant::from(args.variant);
    let mut config =
        KernelConfig::new(variant, metric, precision).with_batch_capacity(args.batch_size);
    if let Some(step) = args.step_size {
        config = config.with_step_size(step);
    }
    let options = ComputeOptions {
        config,
        range: args.stripes,
        threads: args.threads,
    };
    let partial = args.stripes.is_some();
    let computed = match precision {
        Precision::Fp32 => compute_bytes::<f32>(&tree, &table, &options, partial),
        Precision::Fp64 => compute_bytes::<f64>(&tree, &table, &options, partial),
    }?;
    write(&args.out, &computed.bytes)?;

    let manifest = RunManifest {
        tool: TOOL.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: "compute".into(),
        inputs: vec![tree_digest, table_digest],
        metric: metric.to_string(),
        precision: precision.to_string(),
        variant: Some(variant.as_str().into()),
        batch_size: Some(config.batch_capacity),
        step_size: Some(config.step_size),
        stripes: [computed.range.0, computed.range.1],
        n_samples: table.n_samples(),
        threads: Some(args.threads),
        seed: args.seed,
        wall_time_secs: started.elapsed().as_secs_f64(),
        counters: Some(computed.counters.into()),
    };
    manifest_write(&manifest, &args.out)
}

fn condense_parts<T: Real>(
    parts: &[StripeSet<T>],
    ids: Vec<String>,
) -> Result<DistanceMatrix, UnifracError> {
    let refs: Vec<&StripeSet<T>> = parts.iter().collect();
    Ok(condense(&refs, ids)?)
}

fn cmd_merge(args: MergeArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let (table, table_digest) = load_sample_table(&args.table)?;
    let mut inputs = vec![table_digest];
    let mut parts = Vec::with_capacity(args.parts.len());
    for path in &args.parts {
        let bytes = read(path)?;
        let part = read_stripe_file(&bytes).map_err(core_err(path.display().to_string()))?;
        inputs.push(InputDigest::new("part", path, &bytes));
        parts.push(part);
    }
    let first = &parts[0];
    let (precision, metric) = (first.precision(), first.metric());
    if let Some(bad) = parts.iter().position(|p| p.precision() != precision) {
        return Err(CliError::Message(format!(
            "{}: precision {} differs from {} in {}",
            args.parts[bad].display(),
            parts[bad].precision(),
            precision,
            args.parts[0].display()
        )));
    }
    let ids = table.sample_ids().to_vec();
    let matrix = match precision {
        Precision::Fp32 => {
            let sets: Vec<StripeSet<f32>> = parts
                .into_iter()
                .map(|p| match p {
                    AnyStripeSet::F32(s) => s,
                    AnyStripeSet::F64(_) => unreachable!("precision checked"),
                })
                .collect();
            condense_parts(&sets, ids)?
        }
        Precision::Fp64 => {
            let sets: Vec<StripeSet<f64>> = parts
                .into_iter()
                .map(|p| match p {
                    AnyStripeSet::F64(s) => s,
                    AnyStripeSet::F32(_) => unreachable!("precision checked"),
                })
                .collect();
            condense_parts(&sets, ids)?
        }
    };
    write(&args.out, matrix.to_tsv().as_bytes())?;

    let total = unifrac_core::total_stripes(table.n_samples()).map_err(UnifracError::from)?;
    let manifest = RunManifest {
        tool: TOOL.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: "merge".into(),
        inputs,
        metric: metric.to_string(),
        precision: precision.to_string(),
        variant: None,
        batch_size: None,
        step_size: None,
        stripes: [0, total],
        n_samples: table.n_samples(),
        threads: None,
        seed: None,
        wall_time_secs: started.elapsed().as_secs_f64(),
        counters: None,
    };
    manifest_write(&manifest, &args.out)
}

fn load_matrix(path: &Path) -> Result<DistanceMatrix, CliError> {
    let bytes = read(path)?;
    DistanceMatrix::from_tsv(BufReader::new(bytes.as_slice()), Precision::Fp64)
        .map_err(core_err(path.display().to_string()))
}

fn cmd_compare(args: CompareArgs) -> Result<(), CliError> {
    let m1 = load_matrix(&args.m1)?;
    let m2 = load_matrix(&args.m2)?;
    let m2 = m2.reordered(m1.sample_ids()).map_err(|e| {
        CliError::Message(format!(
            "{} and {} do not share sample ids: {e}",
            args.m1.display(),
            args.m2.display()
        ))
    })?;
    let result = mantel(&m1, &m2, args.permutations, args.seed).map_err(UnifracError::from)?;
    let mut out = std::io::stdout().lock();
    let text = format!(
        "r\t{}\nr_squared\t{}\np_value\t{}\npermutations\t{}\nseed\t{}\ncorrelation\t{}\nrng\t{}\n",
        result.r,
        result.r_squared,
        result.p_value,
        result.permutations,
        result.seed,
        MANTEL_CORRELATION,
        MANTEL_RNG,
    );
    out.write_all(text.as_bytes())
        .map_err(|source| CliError::Io {
            path: PathBuf::from("<stdout>"),
            source,
        })
}

fn cmd_bench(args: BenchArgs) -> Result<(), CliError> {
    let options = BenchOptions {
        n_samples: args.n,
        n_features: args.features,
        density: args.density,
        variants: args.variants.into_iter().map(KernelVariant::from).collect(),
        repeat: args.repeat,
        metric: args.metric.into(),
        precision: args.precision.into(),
        batch_capacity: args.batch_size,
        step_size: args.step_size,
        threads: args.threads,
        seed: args.seed,
    };
    let rows = run_bench(&options)?;
    let mut text = String::from(
        "variant\tmin_s\tmedian_s\trepeat\tembedding_rows\tentries\taccumulator_writes\twrites_per_entry\tembedding_reads\tkernel_passes\n",
    );
    for row in &rows {
        text.push_str(&format!(
            "{}\t{:.6}\t{:.6}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            row.variant.as_str(),
            row.min(),
            row.median(),
            row.times.len(),
            row.embedding_rows,
            row.entries,
            row.counters.accumulator_writes,
            row.writes_per_entry(),
            row.counters.embedding_reads,
            row.counters.kernel_passes,
        ));
    }
    std::io::stdout()
        .lock()
        .write_all(text.as_bytes())
        .map_err(|source| CliError::Io {
            path: PathBuf::from("<stdout>"),
            source,
        })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Compute(a) => cmd_compute(a),
        Command::Merge(a) => cmd_merge(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{TOOL}: error: {e}");
            ExitCode::FAILURE
        }
    }
}

//! `vd`: staged command-line pipeline from raw activations to distance
//! matrices and their analysis.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use vd_core::{Measure, Thresholds};

mod commands;
mod output;

use output::{CliResult, Failure};

#[derive(Parser, Debug)]
#[command(name = "vd", version, about = "Visual distances between WordNet synsets")]
struct Cli {
    /// Worker threads (default: VD_THREADS, then available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MeasureArg {
    Path,
    Wup,
    Lin,
}

impl From<MeasureArg> for Measure {
    fn from(m: MeasureArg) -> Self {
        match m {
            MeasureArg::Path => Measure::Path,
            MeasureArg::Wup => Measure::WuPalmer,
            MeasureArg::Lin => Measure::Lin,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Mds,
    Pca,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Standardize a raw activation matrix and map it to ternary codes.
    Discretize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = Thresholds::DEFAULT_FT_MINUS, allow_negative_numbers = true)]
        ft_minus: f32,
        #[arg(long, default_value_t = Thresholds::DEFAULT_FT_PLUS, allow_negative_numbers = true)]
        ft_plus: f32,
        /// Write the per-feature mean and stddev used.
        #[arg(long)]
        stats_out: Option<PathBuf>,
        /// Standardize with previously saved statistics instead of the input's own.
        #[arg(long)]
        stats_in: Option<PathBuf>,
    },
    /// Build one mode representative per synset.
    Represent {
        #[arg(long)]
        ternary: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Pairwise visual distance matrix over all representatives.
    Distmat {
        #[arg(long)]
        reps: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Pairwise lexical distance matrix (1 - similarity) from a taxonomy.
    Lexmat {
        #[arg(long)]
        taxonomy: PathBuf,
        /// One synset id per line.
        #[arg(long)]
        ids: PathBuf,
        #[arg(long, value_enum)]
        measure: MeasureArg,
        /// Information content table, required for `lin`.
        #[arg(long)]
        ic: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Pearson and Spearman correlation over shared synset pairs.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// JSON report path (default: stdout).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Average-linkage clustering cut into `k` clusters.
    Cluster {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        k: usize,
        /// Second matrix; reports the adjusted Rand index of the two flat clusterings.
        #[arg(long)]
        compare: Option<PathBuf>,
        /// Dendrogram JSON path (default: stdout).
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        newick: Option<PathBuf>,
    },
    /// 2-D coordinates by classical MDS of a matrix or PCA of representatives.
    Project {
        /// Distance matrix (mds).
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, value_enum)]
        method: MethodArg,
        /// Representatives (pca).
        #[arg(long)]
        reps: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Feature-class proportions and optional diagnostics, as JSON on stdout.
    Stats {
        #[arg(long)]
        ternary: PathBuf,
        #[arg(long)]
        layout: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Adds presence consistency against taxonomy depth (needs --manifest).
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        /// Bootstrap rounds per synset (needs --manifest).
        #[arg(long)]
        bootstrap: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Seeded synthetic dataset: raw matrix, manifest, layout, taxonomy, IC.
    Synth {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        samples: usize,
        #[arg(long)]
        features: usize,
        #[arg(long)]
        synsets: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn thread_count(flag: Option<usize>) -> CliResult<usize> {
    let n = match flag {
        Some(n) => n,
        None => match std::env::var("VD_THREADS") {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| Failure::usage(format!("VD_THREADS={v:?} is not a thread count")))?,
            Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
        },
    };
    if n == 0 {
        return Err(Failure::usage("thread count must be at least 1"));
    }
    Ok(n)
}

fn run(cli: Cli) -> CliResult<()> {
    let threads = thread_count(cli.threads)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Failure::usage(format!("cannot start {threads} threads: {e}")))?;
    match cli.command {
        Command::Discretize {
            input,
            output,
            ft_minus,
            ft_plus,
            stats_out,
            stats_in,
        } => commands::discretize(
            &input,
            &output,
            ft_minus,
            ft_plus,
            stats_out.as_deref(),
            stats_in.as_deref(),
        ),
        Command::Represent {
            ternary,
            manifest,
            output,
        } => commands::represent(&ternary, &manifest, &output),
        Command::Distmat { reps, output } => commands::distmat(&reps, &output, threads),
        Command::Lexmat {
            taxonomy,
            ids,
            measure,
            ic,
            output,
        } => commands::lexmat(&taxonomy, &ids, measure.into(), ic.as_deref(), &output),
        Command::Compare { a, b, output } => commands::compare(&a, &b, output.as_deref()),
        Command::Cluster {
            input,
            k,
            compare,
            output,
            newick,
        } => commands::cluster(&input, k, compare.as_deref(), output.as_deref(), newick.as_deref()),
        Command::Project {
            input,
            method,
            reps,
            output,
        } => match method {
            MethodArg::Mds => {
                let input = input.ok_or_else(|| Failure::usage("--method mds needs --input"))?;
                commands::project_mds(&input, &output)
            }
            MethodArg::Pca => {
                let reps = reps.ok_or_else(|| Failure::usage("--method pca needs --reps"))?;
                commands::project_pca(&reps, &output)
            }
        },
        Command::Stats {
            ternary,
            layout,
            manifest,
            taxonomy,
            bootstrap,
            seed,
        } => commands::stats(
            &ternary,
            layout.as_deref(),
            manifest.as_deref(),
            taxonomy.as_deref(),
            bootstrap,
            seed,
        ),
        Command::Synth {
            seed,
            samples,
            features,
            synsets,
            out_dir,
        } => commands::synth(seed, samples, features, synsets, &out_dir),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help and version go to stdout and are not failures
            let code = if e.use_stderr() {
                output::ExitKind::Usage as u8
            } else {
                0
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.kind as u8)
        }
    }
}

//! `placerec`: synthesize, hash, index, query, evaluate and benchmark
//! place-recognition datasets.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind as ClapErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use placerec::ErrorKind;
use serde::{Deserialize, Serialize};

/// Exit status for malformed command lines.
const EXIT_USAGE: u8 = 64;

#[derive(Debug, Parser)]
#[command(name = "placerec", version, about = "Visual place recognition with binary hashed descriptors")]
struct Cli {
    /// Worker threads for hashing; 1 forces the sequential path
    #[arg(long, global = true, env = "PLACEREC_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate a feature file and write its manifest
    Ingest(IngestArgs),
    /// Hash a feature file into a signature file
    Hash(HashArgs),
    /// Build a search index from a feature file
    Build(BuildArgs),
    /// Find the two closest places for every query
    Query(QueryArgs),
    /// Sweep the ratio test over one or more backends and compare them
    Evaluate(EvaluateArgs),
    /// Time query and hashing throughput on random data
    Bench(BenchArgs),
    /// Generate a synthetic reference/query dataset
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Backend {
    Cosine,
    Hamming,
    Partitioned,
}

impl Backend {
    fn name(self) -> &'static str {
        match self {
            Backend::Cosine => "cosine",
            Backend::Hamming => "hamming",
            Backend::Partitioned => "partitioned",
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct IngestArgs {
    /// Feature file to validate
    #[arg(long)]
    features: PathBuf,
    /// Manifest to check the features against
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Ground-truth CSV to validate alongside
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    tolerance: u32,
    /// Dataset name; defaults to the manifest name or the file stem
    #[arg(long)]
    name: Option<String>,
    #[arg(long, env = "PLACEREC_OUT")]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct HashArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long, default_value_t = 8192)]
    bits: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, env = "PLACEREC_OUT")]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct BuildArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long, value_enum)]
    backend: Backend,
    #[arg(long, default_value_t = 8192)]
    bits: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Class membership threshold for the partitioned backend
    #[arg(long, default_value_t = 0.1)]
    theta: f64,
    #[arg(long, env = "PLACEREC_OUT")]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct QueryArgs {
    /// Directory written by `build`
    #[arg(long)]
    index: PathBuf,
    /// Feature file of query places
    #[arg(long)]
    queries: PathBuf,
    /// Query-time class threshold; defaults to the build threshold
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long, env = "PLACEREC_OUT")]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct EvaluateArgs {
    #[arg(long)]
    reference: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    ground_truth: PathBuf,
    #[arg(long, default_value_t = 1)]
    tolerance: u32,
    /// Backend to evaluate; repeat for a comparison against the first
    #[arg(long, value_enum, required = true)]
    backend: Vec<Backend>,
    #[arg(long, default_value_t = 8192)]
    bits: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.1)]
    theta: f64,
    /// Either a point count for an even sweep or a comma-separated list
    #[arg(long, default_value = "200", value_parser = parse_taus_arg)]
    taus: String,
    #[arg(long, env = "PLACEREC_OUT")]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct BenchArgs {
    /// Signatures in the Hamming index
    #[arg(long, default_value_t = 10_000)]
    candidates: usize,
    #[arg(long, default_value_t = 8192)]
    bits: usize,
    /// Feature dimension for the cosine and hashing rows
    #[arg(long, default_value_t = 64_896)]
    dim: usize,
    /// Vectors in the cosine index; 0 skips the cosine row
    #[arg(long, default_value_t = 0)]
    cosine_candidates: usize,
    /// Distinct query vectors per repetition
    #[arg(long, default_value_t = 10)]
    queries: usize,
    #[arg(long, default_value_t = 30)]
    repetitions: usize,
    /// Vectors to hash for the hashing row; 0 skips it
    #[arg(long, default_value_t = 0)]
    hash_vectors: usize,
    #[arg(long, default_value_t = 10)]
    hash_repetitions: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, env = "PLACEREC_OUT")]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct SynthArgs {
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 4096)]
    dim: usize,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    classes: usize,
    #[arg(long, default_value_t = 20.0)]
    concentration: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, env = "PLACEREC_OUT")]
    out: PathBuf,
}

fn parse_taus_arg(s: &str) -> Result<String, String> {
    commands::parse_taus(s).map(|_| s.to_string())
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Format => 2,
        ErrorKind::Dimension => 3,
        ErrorKind::Incomparable => 4,
        ErrorKind::GroundTruth => 5,
        ErrorKind::Other => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ClapErrorKind::DisplayHelp | ClapErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(EXIT_USAGE);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use placerec::bench::{bench_hashing, bench_query, BenchReport};
use placerec::eval::{compare_backends, default_taus, pr_sweep, run_queries, write_json, EvalReport, QueryMatch};
use placerec::io::{
    check_manifest, read_feature_file, read_ground_truth, read_manifest, read_signature_file, write_feature_file,
    write_ground_truth, write_manifest, write_signature_file,
};
use placerec::seed::derive_seed;
use placerec::synth::{self, generate, random_features, random_signatures, SynthSpec};
use placerec::{
    DatasetManifest, Error, FeatureVector, FlatCosineIndex, FlatHammingIndex, Hasher, PartitionedIndex,
    PartitionedQuery, PlaceRecord, QueryResult, Result, SearchBackend,
};
use serde::{Deserialize, Serialize};

use crate::{Backend, BenchArgs, BuildArgs, Cli, Command, EvaluateArgs, HashArgs, IngestArgs, QueryArgs, SynthArgs};

const RUN_CONFIG: &str = "run_config.json";
const INDEX_META: &str = "index.json";
const HASHER_STREAM: &str = "hasher";

/// Effective configuration echoed into every output directory.
#[derive(Serialize)]
struct RunConfig<'a, A: Serialize> {
    version: &'static str,
    command: &'static str,
    threads: Option<usize>,
    args: &'a A,
    sub_seeds: BTreeMap<&'static str, u64>,
}

/// Describes an index directory written by `build`.
#[derive(Debug, Serialize, Deserialize)]
struct IndexMeta {
    backend: Backend,
    dim: usize,
    layer_tag: String,
    count: usize,
    bits: Option<usize>,
    hasher_seed: Option<u64>,
    hasher_id: Option<u64>,
    theta_build: Option<f64>,
}

#[derive(Serialize)]
struct QueryLine<'a> {
    query_id: u64,
    query_frame: u64,
    #[serde(flatten)]
    result: &'a QueryResult,
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest(a) => ingest(a, cli.threads),
        Command::Hash(a) => hash(a, cli.threads),
        Command::Build(a) => build(a, cli.threads),
        Command::Query(a) => query(a, cli.threads),
        Command::Evaluate(a) => evaluate(a, cli.threads),
        Command::Bench(a) => bench(a, cli.threads),
        Command::Synth(a) => synth(a, cli.threads),
    }
}

/// Parses a sweep spec: a point count, or comma-separated thresholds.
pub fn parse_taus(spec: &str) -> std::result::Result<Vec<f64>, String> {
    let taus = if spec.contains(',') {
        spec.split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|e| format!("bad threshold {t:?}: {e}")))
            .collect::<std::result::Result<Vec<_>, _>>()?
    } else {
        let n: usize = spec.trim().parse().map_err(|e| format!("bad sweep size {spec:?}: {e}"))?;
        if n == 0 {
            return Err("sweep needs at least one threshold".into());
        }
        default_taus(n)
    };
    if taus.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
        return Err("thresholds must lie in (0, 1]".into());
    }
    if taus.windows(2).any(|w| w[1] <= w[0]) {
        return Err("thresholds must be strictly increasing".into());
    }
    Ok(taus)
}

fn hasher_seed(seed: u64) -> u64 {
    derive_seed(seed, HASHER_STREAM)
}

fn prepare_out<A: Serialize>(
    out: &Path,
    command: &'static str,
    threads: Option<usize>,
    args: &A,
    sub_seeds: BTreeMap<&'static str, u64>,
) -> Result<()> {
    fs::create_dir_all(out)?;
    let config = RunConfig {
        version: env!("CARGO_PKG_VERSION"),
        command,
        threads,
        args,
        sub_seeds,
    };
    write_json(&config, out.join(RUN_CONFIG))
}

fn features_of(records: &[PlaceRecord]) -> Result<(usize, String)> {
    let first = records
        .first()
        .and_then(|r| r.feature.as_ref())
        .ok_or_else(|| Error::InvalidInput("feature file holds no records".into()))?;
    Ok((first.dim(), first.layer_tag().to_string()))
}

fn ingest(a: &IngestArgs, threads: Option<usize>) -> Result<()> {
    let records = read_feature_file(&a.features)?;
    let (dim, layer_tag) = features_of(&records)?;
    let given = a.manifest.as_ref().map(read_manifest).transpose()?;
    if let Some(m) = &given {
        check_manifest(m, &records)?;
    }
    if let Some(gt) = &a.ground_truth {
        let gt = read_ground_truth(gt, a.tolerance)?;
        let frames: std::collections::HashSet<u64> = records.iter().map(|r| r.frame_index).collect();
        let missing = gt.pairs().map(|(_, r)| r).find(|r| !frames.contains(r));
        if let Some(r) = missing {
            return Err(Error::InvalidInput(format!(
                "ground truth refers to frame {r}, which is not in the feature file"
            )));
        }
    }
    let name = a
        .name
        .clone()
        .or_else(|| given.as_ref().map(|m| m.name.clone()))
        .or_else(|| a.features.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "dataset".into());
    let manifest = DatasetManifest {
        name,
        feature_file: a.features.clone(),
        dim,
        layer_tag,
        count: records.len(),
        class_names: given.and_then(|m| m.class_names),
        ground_truth_file: a.ground_truth.clone(),
    };
    prepare_out(&a.out, "ingest", threads, a, BTreeMap::new())?;
    write_manifest(&manifest, a.out.join("manifest.json"))?;
    println!("{}: {} records, dim {}, layer {}", manifest.name, manifest.count, manifest.dim, manifest.layer_tag);
    Ok(())
}

fn hash(a: &HashArgs, threads: Option<usize>) -> Result<()> {
    let mut records = read_feature_file(&a.features)?;
    let (dim, _) = features_of(&records)?;
    let hasher = Hasher::new(dim, a.bits, hasher_seed(a.seed))?;
    hasher.hash_records(&mut records)?;
    prepare_out(&a.out, "hash", threads, a, BTreeMap::from([(HASHER_STREAM, hasher.seed())]))?;
    write_signature_file(a.out.join("signatures.phs"), hasher.id(), hasher.bits(), &records)?;
    println!("hashed {} records to {} bits, hasher {:016x}", records.len(), hasher.bits(), hasher.id());
    Ok(())
}

fn build(a: &BuildArgs, threads: Option<usize>) -> Result<()> {
    let mut records = read_feature_file(&a.features)?;
    let (dim, layer_tag) = features_of(&records)?;
    let count = records.len();
    let mut meta = IndexMeta {
        backend: a.backend,
        dim,
        layer_tag,
        count,
        bits: None,
        hasher_seed: None,
        hasher_id: None,
        theta_build: None,
    };
    let mut sub_seeds = BTreeMap::new();
    match a.backend {
        Backend::Cosine => {
            FlatCosineIndex::build(records.clone())?;
            prepare_out(&a.out, "build", threads, a, sub_seeds)?;
            write_feature_file(&records, a.out.join("features.phf"))?;
        }
        Backend::Hamming | Backend::Partitioned => {
            let hasher = Hasher::new(dim, a.bits, hasher_seed(a.seed))?;
            hasher.hash_records(&mut records)?;
            sub_seeds.insert(HASHER_STREAM, hasher.seed());
            meta.bits = Some(hasher.bits());
            meta.hasher_seed = Some(hasher.seed());
            meta.hasher_id = Some(hasher.id());
            if a.backend == Backend::Hamming {
                let index = FlatHammingIndex::build(&records, &hasher)?;
                prepare_out(&a.out, "build", threads, a, sub_seeds)?;
                write_signature_file(a.out.join("signatures.phs"), index.hasher_id(), index.length_bits(), &records)?;
            } else {
                let index = PartitionedIndex::build(&records, &hasher, a.theta)?;
                meta.theta_build = Some(a.theta);
                prepare_out(&a.out, "build", threads, a, sub_seeds)?;
                index.save(&a.out)?;
                println!("class sizes: {:?}", index.sidecar().membership_counts);
            }
        }
    }
    write_json(&meta, a.out.join(INDEX_META))?;
    println!("built {} index over {count} places", a.backend.name());
    Ok(())
}

fn load_meta(dir: &Path) -> Result<IndexMeta> {
    let file = File::open(dir.join(INDEX_META))?;
    Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
}

fn meta_hasher(meta: &IndexMeta) -> Result<Hasher> {
    let missing = || Error::Format(format!("{INDEX_META} lacks hasher parameters"));
    let hasher = Hasher::new(
        meta.dim,
        meta.bits.ok_or_else(missing)?,
        meta.hasher_seed.ok_or_else(missing)?,
    )?;
    let expected = meta.hasher_id.ok_or_else(missing)?;
    if hasher.id() != expected {
        return Err(Error::IncomparableSignatures {
            left: expected,
            right: hasher.id(),
        });
    }
    Ok(hasher)
}

fn query(a: &QueryArgs, threads: Option<usize>) -> Result<()> {
    let meta = load_meta(&a.index)?;
    let queries = read_feature_file(&a.queries)?;
    let results: Vec<QueryResult> = match meta.backend {
        Backend::Cosine => {
            let index = FlatCosineIndex::build(read_feature_file(a.index.join("features.phf"))?)?;
            queries
                .iter()
                .map(|q| index.query_top2(feature(q)?))
                .collect::<Result<_>>()?
        }
        Backend::Hamming => {
            let hasher = meta_hasher(&meta)?;
            let file = read_signature_file(a.index.join("signatures.phs"))?;
            let index = FlatHammingIndex::from_signatures(&file.records, file.hasher_id, file.length_bits)?;
            let sigs = hasher.hash_batch(&features(&queries)?)?;
            sigs.iter().map(|s| index.query_top2(s)).collect::<Result<_>>()?
        }
        Backend::Partitioned => {
            let hasher = meta_hasher(&meta)?;
            let index = PartitionedIndex::load(&a.index)?;
            let theta = a.theta.unwrap_or(index.theta_build());
            let sigs = hasher.hash_batch(&features(&queries)?)?;
            queries
                .iter()
                .zip(&sigs)
                .map(|(q, s)| index.query(s, class_probs(q)?, theta))
                .collect::<Result<_>>()?
        }
    };
    prepare_out(&a.out, "query", threads, a, BTreeMap::new())?;
    let mut w = BufWriter::new(File::create(a.out.join("results.jsonl"))?);
    for (q, r) in queries.iter().zip(&results) {
        let line = QueryLine {
            query_id: q.place_id,
            query_frame: q.frame_index,
            result: r,
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    println!("answered {} queries", results.len());
    Ok(())
}

fn feature(r: &PlaceRecord) -> Result<&FeatureVector> {
    r.feature
        .as_ref()
        .ok_or_else(|| Error::InvalidFeature(format!("record {} has no feature", r.place_id)))
}

fn features(records: &[PlaceRecord]) -> Result<Vec<&FeatureVector>> {
    records.iter().map(feature).collect()
}

fn class_probs(r: &PlaceRecord) -> Result<&[f32]> {
    r.class_probs.as_deref().ok_or(Error::MissingClassProbabilities(r.place_id))
}

fn sweep<B: SearchBackend>(
    backend: &B,
    queries: &[(u64, B::Query)],
    gt: &placerec::GroundTruth,
    taus: &[f64],
    tag: String,
) -> Result<(EvalReport, Vec<QueryMatch>)> {
    let (matches, timing) = run_queries(backend, queries)?;
    let report = pr_sweep(&matches, gt, taus)?.with_tag(tag).with_timing(timing);
    Ok((report, matches))
}

fn evaluate(a: &EvaluateArgs, threads: Option<usize>) -> Result<()> {
    let taus = parse_taus(&a.taus).map_err(Error::InvalidInput)?;
    for (i, b) in a.backend.iter().enumerate() {
        if a.backend[..i].contains(b) {
            return Err(Error::InvalidInput(format!("backend {} given twice", b.name())));
        }
    }
    let mut reference = read_feature_file(&a.reference)?;
    let queries = read_feature_file(&a.queries)?;
    let gt = read_ground_truth(&a.ground_truth, a.tolerance)?;
    let (dim, _) = features_of(&reference)?;

    let needs_hasher = a.backend.iter().any(|b| *b != Backend::Cosine);
    let hasher = needs_hasher.then(|| Hasher::new(dim, a.bits, hasher_seed(a.seed))).transpose()?;
    let query_sigs = match &hasher {
        Some(h) => {
            h.hash_records(&mut reference)?;
            h.hash_batch(&features(&queries)?)?
        }
        None => Vec::new(),
    };

    let mut reports = Vec::with_capacity(a.backend.len());
    for backend in &a.backend {
        let (report, matches) = match backend {
            Backend::Cosine => {
                let index = FlatCosineIndex::build(reference.clone())?;
                let qs: Vec<(u64, FeatureVector)> = queries
                    .iter()
                    .map(|q| Ok((q.frame_index, feature(q)?.clone())))
                    .collect::<Result<_>>()?;
                sweep(&index, &qs, &gt, &taus, "cosine".into())?
            }
            Backend::Hamming => {
                let h = hasher.as_ref().expect("hasher built for hashing backends");
                let index = FlatHammingIndex::build(&reference, h)?;
                let qs: Vec<_> = queries.iter().map(|q| q.frame_index).zip(query_sigs.iter().cloned()).collect();
                let (r, m) = sweep(&index, &qs, &gt, &taus, format!("hamming-{}", a.bits))?;
                (r.with_hasher(h.id()), m)
            }
            Backend::Partitioned => {
                let h = hasher.as_ref().expect("hasher built for hashing backends");
                let index = PartitionedIndex::build(&reference, h, a.theta)?;
                let qs: Vec<(u64, PartitionedQuery)> = queries
                    .iter()
                    .zip(&query_sigs)
                    .map(|(q, s)| {
                        Ok((
                            q.frame_index,
                            PartitionedQuery {
                                signature: s.clone(),
                                class_probs: class_probs(q)?.to_vec(),
                                theta: a.theta,
                            },
                        ))
                    })
                    .collect::<Result<_>>()?;
                let (r, m) = sweep(&index, &qs, &gt, &taus, format!("partitioned-{}", a.bits))?;
                (r.with_hasher(h.id()), m)
            }
        };
        let scanned = matches.iter().map(|m| m.result.candidates_scanned).sum::<usize>() as f64 / matches.len() as f64;
        println!(
            "{}: best F1 {:.4} at tau {:.3}, mean candidates {:.1}",
            report.backend_tag, report.best_f1, report.best_tau, scanned
        );
        reports.push(report);
    }

    let mut sub_seeds = BTreeMap::new();
    if let Some(h) = &hasher {
        sub_seeds.insert(HASHER_STREAM, h.seed());
    }
    prepare_out(&a.out, "evaluate", threads, a, sub_seeds)?;
    for (backend, report) in a.backend.iter().zip(&reports) {
        write_json(report, a.out.join(format!("report_{}.json", backend.name())))?;
        report.write_pr_csv(a.out.join(format!("pr_{}.csv", backend.name())))?;
    }
    if reports.len() >= 2 {
        let table = compare_backends(&reports, 0)?;
        for row in &table.rows[1..] {
            println!(
                "{}: retention {} speed-up {}",
                row.backend_tag,
                row.retention.map_or("n/a".into(), |r| format!("{r:.4}")),
                row.speed_up.map_or("n/a".into(), |s| format!("{s:.1}x")),
            );
        }
        write_json(&table, a.out.join("comparison.json"))?;
    }
    Ok(())
}

fn bench(a: &BenchArgs, threads: Option<usize>) -> Result<()> {
    if a.queries == 0 {
        return Err(Error::NoQueries);
    }
    let seeds = BTreeMap::from([
        ("bench/index", derive_seed(a.seed, "bench/index")),
        ("bench/queries", derive_seed(a.seed, "bench/queries")),
        (HASHER_STREAM, hasher_seed(a.seed)),
    ]);
    let mut rows: Vec<BenchReport> = Vec::new();

    let id = placerec::lsh::hasher_id(seeds[HASHER_STREAM], a.dim, a.bits);
    let index_sigs = random_signatures(a.candidates, a.bits, id, seeds["bench/index"])?;
    let index = FlatHammingIndex::from_signatures(&index_sigs, id, a.bits)?;
    drop(index_sigs);
    let queries: Vec<_> = random_signatures(a.queries, a.bits, id, seeds["bench/queries"])?
        .into_iter()
        .filter_map(|r| r.signature)
        .collect();
    rows.push(bench_query(&index, &queries, a.repetitions, &format!("hamming-{}", a.bits), a.bits)?);
    drop(index);

    if a.cosine_candidates > 0 {
        let index = FlatCosineIndex::build(random_features(a.cosine_candidates, a.dim, seeds["bench/index"])?)?;
        let queries: Vec<FeatureVector> = random_features(a.queries, a.dim, seeds["bench/queries"])?
            .into_iter()
            .filter_map(|r| r.feature)
            .collect();
        rows.push(bench_query(&index, &queries, a.repetitions, &format!("cosine-{}", a.dim), a.dim)?);
    }

    if a.hash_vectors > 0 {
        let hasher = Hasher::new(a.dim, a.bits, seeds[HASHER_STREAM])?;
        let vectors = random_features(a.hash_vectors, a.dim, seeds["bench/queries"])?;
        rows.push(bench_hashing(&hasher, &features(&vectors)?, a.hash_repetitions)?);
    }

    prepare_out(&a.out, "bench", threads, a, seeds)?;
    let mut w = BufWriter::new(File::create(a.out.join("bench.jsonl"))?);
    for row in &rows {
        writeln!(w, "{}", row.to_json_line()?)?;
        println!(
            "{:>16} {:>7} candidates: {:>12.1} us/query ({:.1} Hz)",
            row.operation, row.candidates, row.wall_time_per_query_us, row.throughput_hz
        );
    }
    w.flush()?;
    Ok(())
}

fn synth(a: &SynthArgs, threads: Option<usize>) -> Result<()> {
    let spec = SynthSpec::new(a.n, a.dim, a.sigma, a.seed).with_classes(a.classes, a.concentration);
    let data = generate(&spec)?;
    let sub_seeds = synth::GENERATE_STREAMS
        .iter()
        .map(|&label| (label, derive_seed(a.seed, label)))
        .collect();
    prepare_out(&a.out, "synth", threads, a, sub_seeds)?;
    let class_names = (a.classes > 0).then(|| (0..a.classes).map(|c| format!("class_{c:02}")).collect::<Vec<_>>());
    let gt_file = PathBuf::from("ground_truth.csv");
    for (name, records, gt) in [("reference", &data.reference, None), ("query", &data.query, Some(&gt_file))] {
        let feature_file = PathBuf::from(format!("{name}.phf"));
        write_feature_file(records, a.out.join(&feature_file))?;
        let manifest = DatasetManifest {
            name: name.to_string(),
            feature_file,
            dim: a.dim,
            layer_tag: synth::SYNTH_LAYER.to_string(),
            count: records.len(),
            class_names: class_names.clone(),
            ground_truth_file: gt.cloned(),
        };
        write_manifest(&manifest, a.out.join(format!("{name}.json")))?;
    }
    write_ground_truth(&data.ground_truth, a.out.join(&gt_file))?;
    println!("wrote {} reference and query places to {}", a.n, a.out.display());
    Ok(())
}

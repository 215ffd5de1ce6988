use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparsehash::baselines::{diffhash_fit, nnhash_train};
use sparsehash::codes::{sparsity, TernaryCode};
use sparsehash::data::{pairs_from_labels, synth_clusters, FeatureMatrix, PairSample, SynthConfig};
use sparsehash::encoder::init_params;
use sparsehash::eval::experiment::{sparse_vs_dense_experiment, ExperimentConfig};
use sparsehash::eval::{evaluate, pr_curve, Averaging, GroundTruth};
use sparsehash::io::{self, CheckpointMeta, MethodTag, ModalityEntry, Model, MultimodalManifest};
use sparsehash::multimodal::{mm_train, MultimodalConfig};
use sparsehash::retrieval::{probe_count, Alphabet, CodeIndex, CostModel, Strategy};
use sparsehash::trainer::{self, TrainingLog};

use crate::config::{digest, run_dir, RunConfig, TrainMethod};
use crate::error::CliError;
use crate::{AlphabetArg, AveragingArg, StrategyArg};

type Result<T> = std::result::Result<T, CliError>;

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String> {
    String::from_utf8(read(path)?).map_err(|_| CliError::Data(format!("{}: not UTF-8 text", path.display())))
}

fn write(dir: &Path, name: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Attaches the offending path to a parse failure.
fn in_file<T>(path: &Path, r: sparsehash::Result<T>) -> Result<T> {
    r.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Binary container when the magic matches, CSV otherwise.
fn parse_features(path: &Path, bytes: &[u8]) -> Result<FeatureMatrix> {
    if bytes.starts_with(b"SPHF") {
        in_file(path, io::read_features(bytes))
    } else {
        let text = std::str::from_utf8(bytes)
            .map_err(|_| CliError::Data(format!("{}: neither a feature container nor CSV", path.display())))?;
        in_file(path, io::features_from_csv(text))
    }
}

fn finish(dir: &Path) -> Result<()> {
    println!("run_dir\t{}", dir.display());
    Ok(())
}

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a PathBuf> {
    p.as_ref().ok_or_else(|| CliError::Usage(format!("config key `{key}` is required for this method")))
}

pub fn synth(out: &Path, cfg: &SynthConfig) -> Result<()> {
    let (data, labels) = synth_clusters(cfg)?;
    let desc = serde_json::to_string(cfg).expect("config serializes");
    let dir = run_dir(out, &digest(&[b"synth", desc.as_bytes()]))?;
    write(&dir, "features.bin", io::write_features(&data))?;
    write(&dir, "labels.txt", io::format_labels(&labels))?;
    finish(&dir)
}

fn training_pairs(cfg: &RunConfig, rows: usize, inputs: &mut Vec<Vec<u8>>) -> Result<Vec<PairSample>> {
    if let Some(path) = &cfg.data.pairs {
        let bytes = read(path)?;
        let text = String::from_utf8(bytes.clone())
            .map_err(|_| CliError::Data(format!("{}: not UTF-8 text", path.display())))?;
        inputs.push(bytes);
        let pairs = in_file(path, io::parse_pairs(&text))?;
        if let Some(p) = pairs.iter().find(|p| p.a >= rows || p.b >= rows) {
            return Err(CliError::Data(format!(
                "{}: pair ({}, {}) indexes past {rows} feature rows",
                path.display(),
                p.a,
                p.b
            )));
        }
        return Ok(pairs);
    }
    let path = required(&cfg.data.labels, "data.labels (or data.pairs)")?;
    let bytes = read(path)?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| CliError::Data(format!("{}: not UTF-8 text", path.display())))?;
    inputs.push(bytes);
    let labels = in_file(path, io::parse_labels(&text))?;
    if labels.len() != rows {
        return Err(CliError::Data(format!(
            "{}: {} labels for {rows} feature rows",
            path.display(),
            labels.len()
        )));
    }
    let ids: Vec<usize> = (0..rows).collect();
    let pos = cfg.data.positives.unwrap_or(1000);
    let neg = cfg.data.negatives.unwrap_or(1000);
    Ok(pairs_from_labels(&labels, &ids, pos, neg, cfg.sgd.seed)?)
}

fn meta(model: &Model, seed: u64, hash: &str) -> String {
    CheckpointMeta {
        method: model.method(),
        input_dim: model.input_dim(),
        code_len: model.code_len(),
        seed,
        config_hash: hash.to_string(),
    }
    .to_json()
}

pub fn train(out: &Path, config: &Path) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    cfg.loss.validate()?;
    cfg.sgd.validate()?;
    let resolved = cfg.to_toml();
    let x_path = required(&cfg.data.features, "data.features")?;
    let x_bytes = read(x_path)?;
    let x = parse_features(x_path, &x_bytes)?;
    let mut inputs = vec![b"train".to_vec(), resolved.clone().into_bytes(), x_bytes];
    let model = &cfg.model;
    let seed = cfg.sgd.seed;

    if cfg.method == TrainMethod::Multimodal {
        let y_path = required(&cfg.data.features_y, "data.features_y")?;
        let y_bytes = read(y_path)?;
        let y = parse_features(y_path, &y_bytes)?;
        let p_path = required(&cfg.data.multimodal_pairs, "data.multimodal_pairs")?;
        let p_text = read_text(p_path)?;
        let pairs = in_file(p_path, io::parse_multimodal_pairs(&p_text))?;
        inputs.push(y_bytes);
        inputs.push(p_text.into_bytes());
        let hash = digest(&inputs.iter().map(Vec::as_slice).collect::<Vec<_>>());
        let mm = MultimodalConfig {
            mu1: cfg.multimodal.mu1,
            mu2: cfg.multimodal.mu2,
            loss_x: cfg.loss,
            loss_y: cfg.loss,
            loss_xy: cfg.loss,
            sgd: cfg.sgd,
        };
        let xi = init_params(&x, model.m, model.iterations, model.beta, seed)?;
        let eta = init_params(&y, model.m, model.iterations, model.beta, seed.wrapping_add(1))?;
        let outcome = mm_train(&x, &y, &pairs, &mm, xi, eta, |_, _, _| {})?;
        let dir = run_dir(out, &hash)?;
        write(&dir, "config.toml", &resolved)?;
        write(&dir, "config.sha256", format!("{hash}\n"))?;
        let mut entries = Vec::new();
        for (name, params) in [("x", outcome.xi), ("y", outcome.eta)] {
            let m = Model::Encoder(params);
            write(&dir, &format!("{name}.ckpt"), io::write_checkpoint(&m))?;
            write(&dir, &format!("{name}.json"), meta(&m, seed, &hash))?;
            entries.push(ModalityEntry {
                name: name.into(),
                checkpoint: format!("{name}.ckpt"),
                input_dim: m.input_dim(),
            });
        }
        let manifest = MultimodalManifest {
            modalities: entries,
            code_len: model.m,
            config_hash: hash.clone(),
        };
        write(&dir, "manifest.json", manifest.to_json())?;
        write(&dir, "train_log.tsv", outcome.log.to_tsv())?;
        return finish(&dir);
    }

    let pairs = training_pairs(&cfg, x.rows(), &mut inputs)?;
    let hash = digest(&inputs.iter().map(Vec::as_slice).collect::<Vec<_>>());
    let mut eigenvalues = None;
    let (trained, log): (Model, Option<TrainingLog>) = match cfg.method {
        TrainMethod::SparseHash => {
            let init = init_params(&x, model.m, model.iterations, model.beta, seed)?;
            let out = trainer::train(&x, &pairs, &cfg.loss, &cfg.sgd, init)?;
            (Model::Encoder(out.params), Some(out.log))
        }
        TrainMethod::NnHash => {
            let fit = nnhash_train(&x, &pairs, model.m, cfg.nnhash.margin, model.beta, &cfg.sgd)?;
            (Model::Linear(MethodTag::NnHash, fit.params), Some(fit.log))
        }
        TrainMethod::DiffHash => {
            let fit = diffhash_fit(&x, &pairs, model.m)?;
            if fit.regularized {
                log::warn!("difference covariances were rank deficient; a ridge was added");
            }
            eigenvalues = Some(fit.eigenvalues);
            (Model::Linear(MethodTag::DiffHash, fit.params), None)
        }
        TrainMethod::Multimodal => unreachable!(),
    };
    let dir = run_dir(out, &hash)?;
    write(&dir, "config.toml", &resolved)?;
    write(&dir, "config.sha256", format!("{hash}\n"))?;
    write(&dir, "model.ckpt", io::write_checkpoint(&trained))?;
    write(&dir, "model.json", meta(&trained, seed, &hash))?;
    if let Some(log) = log {
        write(&dir, "train_log.tsv", log.to_tsv())?;
    }
    if let Some(ev) = eigenvalues {
        let mut table = String::from("component\teigenvalue\n");
        for (i, v) in ev.iter().enumerate() {
            let _ = writeln!(table, "{i}\t{v}");
        }
        write(&dir, "eigenvalues.tsv", table)?;
    }
    finish(&dir)
}

pub fn encode(out: &Path, checkpoint: &Path, features: &Path, threshold: f64) -> Result<()> {
    if !(threshold >= 0.0 && threshold.is_finite()) {
        return Err(CliError::Usage("--threshold must be a finite value >= 0".into()));
    }
    let ckpt = read(checkpoint)?;
    let model = in_file(checkpoint, io::read_checkpoint(&ckpt))?;
    let x_bytes = read(features)?;
    let x = parse_features(features, &x_bytes)?;
    if x.cols() != model.input_dim() {
        return Err(CliError::Usage(format!(
            "{} has {} columns but the checkpoint expects {}",
            features.display(),
            x.cols(),
            model.input_dim()
        )));
    }
    let codes = model.encode_all(&x, threshold)?;
    let mean = codes.iter().map(sparsity).sum::<f64>() / codes.len() as f64;
    let dir = run_dir(out, &digest(&[b"encode", &ckpt, &x_bytes, &threshold.to_le_bytes()]))?;
    write(&dir, "codes.bin", io::write_codes(&codes)?)?;
    println!("mean_sparsity\t{mean}");
    finish(&dir)
}

fn load_codes(path: &Path) -> Result<(Vec<u8>, Vec<TernaryCode>)> {
    let bytes = read(path)?;
    let codes = in_file(path, io::read_codes(&bytes))?;
    Ok((bytes, codes))
}

fn load_index(path: &Path) -> Result<(Vec<u8>, CodeIndex)> {
    let bytes = read(path)?;
    let index = in_file(path, CodeIndex::from_bytes(&bytes))?;
    Ok((bytes, index))
}

pub fn index(out: &Path, codes: &Path, alphabet: AlphabetArg) -> Result<()> {
    let (bytes, codes) = load_codes(codes)?;
    let alphabet = match alphabet {
        AlphabetArg::Ternary => Alphabet::Ternary,
        AlphabetArg::Binary => Alphabet::Binary,
    };
    let index = CodeIndex::build(&codes, alphabet)?;
    let dir = run_dir(out, &digest(&[b"index", &bytes, &[alphabet as u8]]))?;
    write(&dir, "index.sphx", index.to_bytes())?;
    println!("codes\t{}\nbuckets\t{}", index.len(), index.buckets().len());
    finish(&dir)
}

fn resolve_strategy(index: &CodeIndex, r: u32, strategy: StrategyArg) -> Strategy {
    match strategy {
        StrategyArg::Auto => index.plan_query(r).strategy,
        StrategyArg::Probe if r == 0 => Strategy::LutExact,
        StrategyArg::Probe => Strategy::LutProbe,
        StrategyArg::Scan => Strategy::BruteForce,
    }
}

pub fn query(out: &Path, index: &Path, codes: &Path, r: u32, strategy: StrategyArg, kappa: Option<f64>) -> Result<()> {
    let (index_bytes, mut index) = load_index(index)?;
    if let Some(k) = kappa {
        if !(k > 0.0 && k.is_finite()) {
            return Err(CliError::Usage("--kappa must be positive".into()));
        }
        index = index.with_cost_model(CostModel { kappa: k });
    }
    let (code_bytes, queries) = load_codes(codes)?;
    let chosen = resolve_strategy(&index, r, strategy);
    let mut table = String::from("query\tids\n");
    for (i, q) in queries.iter().enumerate() {
        let ids = index.query_with(q, r, chosen)?;
        let ids: Vec<String> = ids.iter().map(u32::to_string).collect();
        let _ = writeln!(table, "{i}\t{}", ids.join(" "));
    }
    let kappa = index.cost_model().kappa;
    let dir = run_dir(
        out,
        &digest(&[b"query", &index_bytes, &code_bytes, &r.to_le_bytes(), chosen.to_string().as_bytes(), &kappa.to_le_bytes()]),
    )?;
    write(&dir, "results.tsv", table)?;
    println!("strategy\t{chosen}");
    finish(&dir)
}

pub enum Truth {
    Labels(PathBuf, PathBuf),
    Relevant(PathBuf),
}

pub struct EvalArgs {
    pub index: PathBuf,
    pub queries: PathBuf,
    pub truth: Truth,
    pub radii: Vec<u32>,
    pub map_cutoff: usize,
    pub mp_cutoff: usize,
    pub averaging: AveragingArg,
    pub pr_cap: u32,
}

fn parse_relevant(path: &Path, text: &str) -> Result<Vec<(u32, u32)>> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .map(|(no, l)| {
            let f: Vec<&str> = l.split_whitespace().collect();
            match f.as_slice() {
                [q, d] => match (q.parse(), d.parse()) {
                    (Ok(q), Ok(d)) => Ok((q, d)),
                    _ => Err(CliError::Data(format!("{}: line {no}: bad ids", path.display()))),
                },
                _ => Err(CliError::Data(format!("{}: line {no}: expected `query item`", path.display()))),
            }
        })
        .collect()
}

pub fn eval(out: &Path, args: &EvalArgs) -> Result<()> {
    if args.radii.is_empty() {
        return Err(CliError::Usage("--radii must name at least one radius".into()));
    }
    let (index_bytes, index) = load_index(&args.index)?;
    let (query_bytes, queries) = load_codes(&args.queries)?;
    if args.pr_cap as usize > index.code_len() {
        return Err(CliError::Usage(format!("--pr-cap exceeds the code length {}", index.code_len())));
    }
    let mut inputs: Vec<Vec<u8>> = vec![b"eval".to_vec(), index_bytes, query_bytes];
    let gt = match &args.truth {
        Truth::Labels(q, d) => {
            let (qt, dt) = (read_text(q)?, read_text(d)?);
            let ql = in_file(q, io::parse_labels(&qt))?;
            let dl = in_file(d, io::parse_labels(&dt))?;
            if ql.len() != queries.len() || dl.len() != index.len() {
                return Err(CliError::Data(format!(
                    "label counts ({}, {}) do not match queries and database ({}, {})",
                    ql.len(),
                    dl.len(),
                    queries.len(),
                    index.len()
                )));
            }
            inputs.extend([qt.into_bytes(), dt.into_bytes()]);
            GroundTruth::from_labels(ql, dl)
        }
        Truth::Relevant(p) => {
            let text = read_text(p)?;
            let pairs = parse_relevant(p, &text)?;
            if let Some(&(q, d)) = pairs.iter().find(|&&(q, d)| q as usize >= queries.len() || d as usize >= index.len()) {
                return Err(CliError::Data(format!("{}: pair ({q}, {d}) out of range", p.display())));
            }
            inputs.push(text.into_bytes());
            GroundTruth::from_pairs(pairs, index.len())
        }
    };
    let averaging = match args.averaging {
        AveragingArg::Micro => Averaging::Micro,
        AveragingArg::Macro => Averaging::Macro,
    };
    let report = evaluate(&index, &queries, &gt, &args.radii, args.map_cutoff, args.mp_cutoff, averaging)?;
    let curve = pr_curve(&index, &queries, &gt, args.pr_cap)?;
    let desc = format!(
        "{:?} {} {} {:?} {}",
        args.radii, args.map_cutoff, args.mp_cutoff, averaging, args.pr_cap
    );
    inputs.push(desc.into_bytes());
    let dir = run_dir(out, &digest(&inputs.iter().map(Vec::as_slice).collect::<Vec<_>>()))?;
    write(&dir, "metrics.tsv", report.to_tsv())?;
    write(&dir, "summary.json", serde_json::to_string_pretty(&report).expect("report serializes") + "\n")?;
    let mut pts = String::from("radius\tprecision\trecall\n");
    for p in &curve {
        let _ = writeln!(pts, "{}\t{}\t{}", p.radius, p.precision, p.recall);
    }
    write(&dir, "pr_curve.tsv", pts)?;
    print!("{}", report.to_tsv());
    finish(&dir)
}

fn random_codes(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Result<Vec<TernaryCode>> {
    (0..n)
        .map(|_| TernaryCode::new((0..m).map(|_| rng.random_range(-1i8..=1)).collect()).map_err(CliError::from))
        .collect()
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let k = ((sorted.len() - 1) as f64 * p).round() as usize;
    sorted[k]
}

/// Probe enumeration is skipped beyond this many probes per query.
const MAX_BENCH_PROBES: u128 = 50_000_000;

pub fn bench(out: &Path, n: usize, m: usize, radii: &[u32], queries: usize, seed: u64, kappa: Option<f64>) -> Result<()> {
    if n == 0 || m == 0 || queries == 0 || radii.is_empty() {
        return Err(CliError::Usage("bench needs positive --n, --m, --queries and some --radii".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let db = random_codes(&mut rng, n, m)?;
    let qs = random_codes(&mut rng, queries, m)?;
    let cost = match kappa {
        Some(k) if k > 0.0 && k.is_finite() => CostModel { kappa: k },
        Some(_) => return Err(CliError::Usage("--kappa must be positive".into())),
        None => CostModel::calibrate(m, seed)?,
    };
    let index = CodeIndex::build(&db, Alphabet::Ternary)?.with_cost_model(cost);

    let mut table = String::from("radius\tstrategy\tprobes\tp50_us\tp90_us\tp99_us\tmean_us\n");
    let mut plan = String::from("radius\tplanned\testimated_cost\tkappa\tmeasured_faster\n");
    for &r in radii {
        let probe = if r == 0 { Strategy::LutExact } else { Strategy::LutProbe };
        let probes = probe_count(m, r, Alphabet::Ternary);
        let mut medians = Vec::new();
        for strategy in [probe, Strategy::BruteForce] {
            if strategy != Strategy::BruteForce && probes > MAX_BENCH_PROBES {
                medians.push((strategy, f64::INFINITY));
                continue;
            }
            let mut lat = Vec::with_capacity(qs.len());
            for q in &qs {
                let start = Instant::now();
                let ids = index.query_with(q, r, strategy)?;
                lat.push(start.elapsed().as_secs_f64() * 1e6);
                std::hint::black_box(ids);
            }
            let mean = lat.iter().sum::<f64>() / lat.len() as f64;
            lat.sort_by(f64::total_cmp);
            let _ = writeln!(
                table,
                "{r}\t{strategy}\t{}\t{:.3}\t{:.3}\t{:.3}\t{mean:.3}",
                if strategy == Strategy::BruteForce { 0 } else { probes },
                percentile(&lat, 0.5),
                percentile(&lat, 0.9),
                percentile(&lat, 0.99)
            );
            medians.push((strategy, percentile(&lat, 0.5)));
        }
        let faster = if medians[0].1 <= medians[1].1 { medians[0].0 } else { medians[1].0 };
        let p = index.plan_query(r);
        let _ = writeln!(plan, "{r}\t{}\t{}\t{}\t{faster}", p.strategy, p.estimated_cost, cost.kappa);
    }
    let desc = format!("{n} {m} {radii:?} {queries} {seed} {kappa:?}");
    let dir = run_dir(out, &digest(&[b"bench", desc.as_bytes()]))?;
    write(&dir, "bench.tsv", &table)?;
    write(&dir, "plan.tsv", &plan)?;
    print!("{table}\n{plan}");
    finish(&dir)
}

pub fn experiment(out: &Path, config: Option<&Path>) -> Result<()> {
    let cfg: ExperimentConfig = match config {
        Some(p) => {
            let text = read_text(p)?;
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {}", p.display(), e.message())))?
        }
        None => ExperimentConfig::default(),
    };
    let resolved = toml::to_string(&cfg).expect("config serializes");
    let report = sparse_vs_dense_experiment(&cfg)?;
    let dir = run_dir(out, &digest(&[b"experiment", resolved.as_bytes()]))?;
    write(&dir, "config.toml", &resolved)?;
    write(&dir, "report.tsv", report.to_tsv())?;
    write(&dir, "report.json", serde_json::to_string_pretty(&report).expect("report serializes") + "\n")?;
    print!("{}", report.to_tsv());
    finish(&dir)
}

// SPDX-License-Identifier: Apache-2.0

//! The `shellgate` command line. [`run`] is the whole program; the binary
//! only forwards process arguments and exits with its return code.
//!
//! Exit codes: 0 success, 1 validation error (including bad flags),
//! 2 I/O error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use indexmap::IndexMap;
use serde::Serialize;
use shellgate_core::classify::build_classifier;
use shellgate_core::embed::{
    build_embedder, preprocess_image, read_embeddings_jsonl, write_embeddings_jsonl, Embedder,
    EmbeddingRecord, INPUT_SIZE, PRODUCTION_DIM,
};
use shellgate_core::eval::{
    anomaly_eval, confusion, emit_report, metrics, EvaluationReport, ReportFormat,
};
use shellgate_core::gate::{anomaly_score, calibrate_with, gate, CalibrationMethod};
use shellgate_core::ingest::{
    compute_stats, parse_manifest, stratified_split, write_splits_csv, ManifestFormat, Split,
    SplitOptions, SplitRatios, Stratum,
};
use shellgate_core::model::ModelInput;
use shellgate_core::pipeline::{batch_triage, TriageInput};
use shellgate_core::{
    build_index, load_index, save_index, synth, ClassifierSpec, EmbedderSpec, GateConfig,
    TriageContext, VectorIndex, DEFAULT_K, DEFAULT_LAMBDA,
};
use shellgate_service::{auth, AppState, AuditLog, Auth, ServiceConfig};

/// Category given to in-domain records that carry no explicit category.
pub const DEFAULT_IN_DOMAIN: &str = synth::IN_DOMAIN_CATEGORY;

#[derive(Debug, Parser, Serialize)]
#[command(name = "shellgate", version, about = "Seashell provenance triage")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
pub enum Command {
    /// Split a manifest into train/val/test and compute composition stats.
    Ingest(IngestArgs),
    /// Embed manifest images or a synthetic set into a JSONL dump.
    Embed(EmbedArgs),
    /// Vector index operations.
    #[command(subcommand)]
    Index(IndexCommand),
    /// Choose the gate threshold from in-domain and off-domain embeddings.
    Calibrate(CalibrateArgs),
    /// Score labelled embeddings: coast metrics and gate rejections.
    Evaluate(EvaluateArgs),
    /// Run the full pipeline on an image or a directory of images.
    Triage(TriageArgs),
    /// Start the HTTP service.
    Serve(ServeArgs),
    /// Print a signed bearer token (secret from the environment).
    Token(TokenArgs),
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "action", rename_all = "kebab-case")]
pub enum IndexCommand {
    /// Build a binary index from an embedding dump.
    Build(IndexBuildArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Json,
    Md,
}

impl From<OutputFormat> for ReportFormat {
    fn from(f: OutputFormat) -> Self {
        match f {
            OutputFormat::Json => ReportFormat::Json,
            OutputFormat::Md => ReportFormat::Markdown,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ManifestFormatArg {
    Auto,
    Csv,
    Jsonl,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StratumArg {
    Family,
    Species,
}

#[derive(Debug, Args, Serialize)]
pub struct IngestArgs {
    /// Manifest file (CSV or JSONL).
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value = "auto")]
    pub manifest_format: ManifestFormatArg,
    /// Seed for the per-stratum shuffles.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "family")]
    pub stratum: StratumArg,
    #[arg(long, default_value_t = 0.70)]
    pub train: f64,
    #[arg(long, default_value_t = 0.15)]
    pub val: f64,
    #[arg(long, default_value_t = 0.15)]
    pub test: f64,
    /// Directory receiving splits.csv and stats.json or stats.md.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, value_enum, default_value = "json")]
    pub format: OutputFormat,
}

#[derive(Debug, Args, Serialize)]
pub struct EmbedArgs {
    /// Manifest listing the images to embed.
    #[arg(
        long,
        conflicts_with = "synthetic",
        required_unless_present = "synthetic"
    )]
    pub manifest: Option<PathBuf>,
    /// Root that manifest image paths are relative to (default: the
    /// manifest's directory).
    #[arg(long)]
    pub images_root: Option<PathBuf>,
    /// Number of synthetic shell images instead of a manifest.
    #[arg(long)]
    pub synthetic: Option<usize>,
    /// Number of synthetic off-domain images added to the synthetic set.
    #[arg(long, default_value_t = 0, requires = "synthetic")]
    pub synthetic_ood: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// `reference` or `model:<path>`.
    #[arg(long, default_value = "reference", value_parser = parse_embedder_arg)]
    pub embedder: String,
    #[arg(long, default_value_t = PRODUCTION_DIM)]
    pub dim: usize,
    #[arg(long, default_value_t = 1)]
    pub parallelism: usize,
    /// Output JSONL path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct IndexBuildArgs {
    /// Embedding dump whose records all carry a coast.
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub index: PathBuf,
    /// In-domain embedding dump.
    #[arg(long)]
    pub in_domain: PathBuf,
    /// Off-domain embedding dump; records are grouped by `category`.
    #[arg(long)]
    pub ood: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_K)]
    pub k: usize,
    /// Use this nearest-rank percentile of in-domain scores instead of
    /// their minimum.
    #[arg(long)]
    pub percentile: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct GateArgs {
    #[arg(long, default_value_t = DEFAULT_LAMBDA, allow_negative_numbers = true)]
    pub lambda: f64,
    #[arg(long, default_value_t = DEFAULT_K)]
    pub k: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct ClassifierArgs {
    /// `centroid` or `model:<path>`.
    #[arg(long, default_value = "centroid", value_parser = parse_classifier_arg)]
    pub classifier: String,
    /// Softmax temperature for classifier confidences.
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub index: PathBuf,
    /// Embedding dump; `coast` labels feed the classification metrics,
    /// `category` labels the gate table.
    #[arg(long)]
    pub embeddings: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub gate: GateArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub classifier: ClassifierArgs,
    /// Category treated as in-domain; uncategorised records with a coast
    /// fall into it.
    #[arg(long, default_value = DEFAULT_IN_DOMAIN)]
    pub in_domain_category: String,
    #[arg(long, value_enum, default_value = "json")]
    pub format: OutputFormat,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct TriageArgs {
    #[arg(long)]
    pub index: PathBuf,
    /// A single image.
    #[arg(long, conflicts_with = "dir", required_unless_present = "dir")]
    pub image: Option<PathBuf>,
    /// Every PNG/JPEG in this directory, in file-name order.
    #[arg(long)]
    pub dir: Option<PathBuf>,
    /// `reference` or `model:<path>`.
    #[arg(long, default_value = "reference", value_parser = parse_embedder_arg)]
    pub embedder: String,
    #[command(flatten)]
    #[serde(flatten)]
    pub gate: GateArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub classifier: ClassifierArgs,
    #[arg(long, default_value_t = 1)]
    pub parallelism: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long)]
    pub index: PathBuf,
    /// `reference` or `model:<path>`.
    #[arg(long, default_value = "reference", value_parser = parse_embedder_arg)]
    pub embedder: String,
    #[command(flatten)]
    #[serde(flatten)]
    pub gate: GateArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub classifier: ClassifierArgs,
    /// Forward /receive-files uploads to this /predict URL.
    #[arg(long)]
    pub proxy_predict_url: Option<String>,
    /// JSONL audit log of every authorised prediction request.
    #[arg(long)]
    pub audit_log: Option<PathBuf>,
    #[arg(long, default_value_t = shellgate_service::audit::DEFAULT_MAX_BYTES)]
    pub audit_max_bytes: u64,
    /// Expected `iss` claim.
    #[arg(long, default_value = auth::DEFAULT_ISSUER)]
    pub issuer: String,
}

#[derive(Debug, Args, Serialize)]
pub struct TokenArgs {
    #[arg(long, default_value = auth::DEFAULT_ISSUER)]
    pub issuer: String,
    /// Lifetime in seconds.
    #[arg(long, default_value_t = 3600)]
    pub ttl: u64,
}

fn parse_embedder_arg(s: &str) -> Result<String, String> {
    match s {
        "reference" => Ok(s.into()),
        _ if s.strip_prefix("model:").is_some_and(|p| !p.is_empty()) => Ok(s.into()),
        _ => Err("expected `reference` or `model:<path>`".into()),
    }
}

fn parse_classifier_arg(s: &str) -> Result<String, String> {
    match s {
        "centroid" => Ok(s.into()),
        _ if s.strip_prefix("model:").is_some_and(|p| !p.is_empty()) => Ok(s.into()),
        _ => Err("expected `centroid` or `model:<path>`".into()),
    }
}

fn embedder_spec(arg: &str, dim: usize) -> EmbedderSpec {
    match arg.strip_prefix("model:") {
        Some(p) => EmbedderSpec::external(p, dim),
        None => EmbedderSpec::reference(dim),
    }
}

fn classifier_spec(a: &ClassifierArgs) -> ClassifierSpec {
    let mut spec = match a.classifier.strip_prefix("model:") {
        Some(p) => ClassifierSpec::external(p),
        None => ClassifierSpec::default(),
    };
    spec.temperature = a.temperature;
    spec
}

/// A failed run: message for stderr and the process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn validation(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: message.into(),
        }
    }

    fn io(path: &Path, e: std::io::Error) -> Self {
        Failure {
            code: 2,
            message: format!("{}: {e}", path.display()),
        }
    }
}

impl From<shellgate_core::Error> for Failure {
    fn from(e: shellgate_core::Error) -> Self {
        Failure {
            code: if e.is_io() { 2 } else { 1 },
            message: e.to_string(),
        }
    }
}

type Outcome = Result<(), Failure>;

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{text}");
                    0
                }
                _ => {
                    let _ = write!(stderr, "{text}");
                    1
                }
            };
        }
    };
    let _ = writeln!(
        stderr,
        "{}",
        serde_json::json!({ "resolved_config": &cli.command })
    );
    match dispatch(&cli.command, stdout, stderr) {
        Ok(()) => 0,
        Err(f) => {
            let _ = writeln!(stderr, "error: {}", f.message);
            f.code
        }
    }
}

fn dispatch(cmd: &Command, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Outcome {
    match cmd {
        Command::Ingest(a) => ingest(a, stdout),
        Command::Embed(a) => embed_cmd(a, stdout),
        Command::Index(IndexCommand::Build(a)) => index_build(a, stdout),
        Command::Calibrate(a) => calibrate_cmd(a, stdout),
        Command::Evaluate(a) => evaluate(a, stdout),
        Command::Triage(a) => triage_cmd(a, stdout),
        Command::Serve(a) => serve(a, stdout, stderr),
        Command::Token(a) => token(a, stdout),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Outcome {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Failure::io(path, e))
}

fn emit(out: &Option<PathBuf>, bytes: &[u8], stdout: &mut dyn Write) -> Outcome {
    match out {
        Some(p) => write_file(p, bytes),
        None => stdout
            .write_all(bytes)
            .map_err(|e| Failure::io(Path::new("<stdout>"), e)),
    }
}

fn pretty<T: Serialize>(v: &T) -> Vec<u8> {
    let mut b = serde_json::to_vec_pretty(v).expect("serializable");
    b.push(b'\n');
    b
}

fn read_dump(path: &Path) -> Result<Vec<EmbeddingRecord>, Failure> {
    let f = File::open(path).map_err(|e| Failure::io(path, e))?;
    Ok(read_embeddings_jsonl(
        BufReader::new(f),
        &path.display().to_string(),
    )?)
}

fn ingest(a: &IngestArgs, stdout: &mut dyn Write) -> Outcome {
    let format = match a.manifest_format {
        ManifestFormatArg::Auto => ManifestFormat::from_path(&a.manifest),
        ManifestFormatArg::Csv => ManifestFormat::Csv,
        ManifestFormatArg::Jsonl => ManifestFormat::Jsonl,
    };
    let manifest = parse_manifest(&a.manifest, format)?;
    let opts = SplitOptions {
        ratios: SplitRatios::new(a.train, a.val, a.test)?,
        seed: a.seed,
        stratum: match a.stratum {
            StratumArg::Family => Stratum::Family,
            StratumArg::Species => Stratum::Species,
        },
    };
    let splits = stratified_split(&manifest, &opts)?;
    let mut csv = Vec::new();
    write_splits_csv(&splits, &mut csv).map_err(|e| Failure::io(&a.out_dir, e))?;
    write_file(&a.out_dir.join("splits.csv"), &csv)?;

    let stats = compute_stats(&manifest);
    match a.format {
        OutputFormat::Json => write_file(&a.out_dir.join("stats.json"), &pretty(&stats))?,
        OutputFormat::Md => {
            write_file(&a.out_dir.join("stats.md"), stats.to_markdown().as_bytes())?
        }
    }
    let mut counts: BTreeMap<&str, usize> = Split::ALL.iter().map(|s| (s.as_str(), 0)).collect();
    for s in &splits {
        *counts.get_mut(s.split.as_str()).expect("known split") += 1;
    }
    emit(
        &None,
        &pretty(&serde_json::json!({ "records": manifest.len(), "splits": counts })),
        stdout,
    )
}

fn embed_all<T: Sync>(
    items: &[T],
    parallelism: usize,
    f: impl Fn(&T) -> Result<EmbeddingRecord, Failure> + Sync,
) -> Result<Vec<EmbeddingRecord>, Failure> {
    if parallelism == 0 {
        return Err(Failure::validation("parallelism must be at least 1"));
    }
    let chunk = items.len().div_ceil(parallelism).max(1);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(|| c.iter().map(&f).collect::<Result<Vec<_>, _>>()))
            .collect();
        let mut out = Vec::with_capacity(items.len());
        for h in handles {
            out.extend(h.join().expect("embedding worker panicked")?);
        }
        Ok(out)
    })
}

fn embed_cmd(a: &EmbedArgs, stdout: &mut dyn Write) -> Outcome {
    let spec = embedder_spec(&a.embedder, a.dim);
    let embedder: Arc<dyn Embedder> = Arc::from(build_embedder(&spec)?);
    let records = if let Some(n) = a.synthetic {
        let items: Vec<(String, Option<shellgate_core::Coast>, u64)> = (0..n)
            .map(|i| {
                let coast = shellgate_core::Coast::ALL[i % 2];
                (
                    format!("syn-shell-{i:05}"),
                    Some(coast),
                    a.seed.wrapping_add(i as u64),
                )
            })
            .chain((0..a.synthetic_ood).map(|i| {
                (
                    format!("syn-ood-{i:05}"),
                    None,
                    a.seed.wrapping_add(i as u64),
                )
            }))
            .collect();
        embed_all(&items, a.parallelism, |(id, coast, variant)| {
            let img = match coast {
                Some(c) => synth::shell_image(*c, *variant, INPUT_SIZE),
                None => synth::ood_image(*variant, INPUT_SIZE),
            };
            Ok(EmbeddingRecord {
                record_id: id.clone(),
                values: embedder.embed(&img)?,
                coast: *coast,
                category: if coast.is_some() {
                    None
                } else {
                    Some("ood".into())
                },
            })
        })?
    } else {
        let path = a
            .manifest
            .as_ref()
            .expect("clap enforces manifest or synthetic");
        let manifest = parse_manifest(path, ManifestFormat::from_path(path))?;
        let root = a
            .images_root
            .clone()
            .unwrap_or_else(|| path.parent().map(Path::to_path_buf).unwrap_or_default());
        embed_all(manifest.records(), a.parallelism, |r| {
            let p = root.join(&r.image_path);
            let raw = fs::read(&p).map_err(|e| Failure::io(&p, e))?;
            let img = preprocess_image(&raw, embedder.spec()).map_err(|e| Failure {
                code: 1,
                message: format!("{}: {e}", p.display()),
            })?;
            Ok(EmbeddingRecord {
                record_id: r.record_id.clone(),
                values: embedder.embed(&img)?,
                coast: Some(r.coast),
                category: None,
            })
        })?
    };
    let mut buf = Vec::new();
    write_embeddings_jsonl(&records, &mut buf).map_err(|e| Failure::io(&a.out, e))?;
    write_file(&a.out, &buf)?;
    emit(
        &None,
        &pretty(&serde_json::json!({ "records": records.len(), "dim": a.dim, "out": a.out })),
        stdout,
    )
}

fn index_build(a: &IndexBuildArgs, stdout: &mut dyn Write) -> Outcome {
    let records = read_dump(&a.embeddings)?;
    let mut items = Vec::with_capacity(records.len());
    for r in records {
        let coast = r.coast.ok_or_else(|| {
            Failure::validation(format!(
                "{}: record {} has no coast label",
                a.embeddings.display(),
                r.record_id
            ))
        })?;
        items.push((r.record_id, coast, r.values));
    }
    let index = build_index(items)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
    }
    save_index(&index, &a.out)?;
    emit(
        &None,
        &pretty(&serde_json::json!({
            "entries": index.len(),
            "dim": index.dim(),
            "fingerprint": index.fingerprint_hex(),
        })),
        stdout,
    )
}

fn scores(index: &VectorIndex, records: &[EmbeddingRecord], k: usize) -> Result<Vec<f64>, Failure> {
    records
        .iter()
        .map(|r| Ok(anomaly_score(index, &r.values, k)?.score))
        .collect()
}

fn calibrate_cmd(a: &CalibrateArgs, stdout: &mut dyn Write) -> Outcome {
    let index = load_index(&a.index)?;
    GateConfig::new(DEFAULT_LAMBDA, a.k)?;
    let inside = scores(&index, &read_dump(&a.in_domain)?, a.k)?;
    let mut per_category: IndexMap<String, Vec<f64>> = IndexMap::new();
    let mut ood = Vec::new();
    if let Some(p) = &a.ood {
        let recs = read_dump(p)?;
        for (r, s) in recs.iter().zip(scores(&index, &recs, a.k)?) {
            let cat = r.category.clone().unwrap_or_else(|| "ood".into());
            per_category.entry(cat).or_default().push(s);
            ood.push(s);
        }
    }
    let method = match a.percentile {
        Some(p) => CalibrationMethod::Percentile(p),
        None => CalibrationMethod::MinInDomain,
    };
    let report = calibrate_with(&inside, &ood, method)?;
    emit(&a.out, &pretty(&report.summary(&per_category)), stdout)
}

fn evaluate(a: &EvaluateArgs, stdout: &mut dyn Write) -> Outcome {
    let index = load_index(&a.index)?;
    let cfg = GateConfig::new(a.gate.lambda, a.gate.k)?;
    let records = read_dump(&a.embeddings)?;

    let mut gated = Vec::with_capacity(records.len());
    for r in &records {
        let category = match (&r.category, r.coast) {
            (Some(c), _) => c.clone(),
            (None, Some(_)) => a.in_domain_category.clone(),
            (None, None) => {
                return Err(Failure::validation(format!(
                    "{}: record {} has neither coast nor category",
                    a.embeddings.display(),
                    r.record_id
                )))
            }
        };
        gated.push((category, gate(&index, &r.values, &cfg)?));
    }
    let anomaly = anomaly_eval(&gated, &a.in_domain_category)?;

    let labelled: Vec<&EmbeddingRecord> = records.iter().filter(|r| r.coast.is_some()).collect();
    let classification = if labelled.is_empty() {
        None
    } else {
        let spec = classifier_spec(&a.classifier);
        let classifier = build_classifier(&spec, &index)?;
        if classifier.input() != ModelInput::Embedding {
            return Err(Failure::validation(
                "evaluate works on embeddings; the classifier model expects images",
            ));
        }
        let blank = shellgate_core::ImageTensor::filled(1, 1, [0, 0, 0])?;
        let mut pairs = Vec::with_capacity(labelled.len());
        for r in labelled {
            let p = classifier.classify(&r.values, &blank)?;
            pairs.push((r.coast.expect("filtered"), p.label));
        }
        Some(metrics(&confusion(&pairs)?))
    };

    let report = EvaluationReport {
        lambda: Some(cfg.lambda),
        k: Some(cfg.k),
        classification,
        anomaly: Some(anomaly),
        architectures: Vec::new(),
    };
    emit(&a.out, &emit_report(&report, a.format.into()), stdout)
}

fn context(
    index_path: &Path,
    embedder: &str,
    gate: &GateArgs,
    classifier: &ClassifierArgs,
) -> Result<TriageContext, Failure> {
    let index = Arc::new(load_index(index_path)?);
    let cfg = GateConfig::new(gate.lambda, gate.k)?;
    let spec = embedder_spec(embedder, index.dim());
    Ok(TriageContext::from_specs(
        &spec,
        index,
        cfg,
        &classifier_spec(classifier),
    )?)
}

fn is_image_file(p: &Path) -> bool {
    p.is_file()
        && p.extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| ["png", "jpg", "jpeg"].contains(&e.to_ascii_lowercase().as_str()))
}

fn triage_cmd(a: &TriageArgs, stdout: &mut dyn Write) -> Outcome {
    let ctx = context(&a.index, &a.embedder, &a.gate, &a.classifier)?;
    let read = |p: &Path| -> Result<TriageInput, Failure> {
        Ok(TriageInput {
            request_id: p
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            bytes: fs::read(p).map_err(|e| Failure::io(p, e))?,
        })
    };
    let bytes = if let Some(img) = &a.image {
        let v = batch_triage(&[read(img)?], &ctx, 1)?;
        pretty(&v[0].to_wire())
    } else {
        let dir = a.dir.as_ref().expect("clap enforces image or dir");
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Failure::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| is_image_file(p))
            .collect();
        paths.sort();
        let inputs = paths
            .iter()
            .map(|p| read(p))
            .collect::<Result<Vec<_>, _>>()?;
        let verdicts = batch_triage(&inputs, &ctx, a.parallelism)?;
        pretty(&verdicts.iter().map(|v| v.to_wire()).collect::<Vec<_>>())
    };
    emit(&a.out, &bytes, stdout)
}

fn serve(a: &ServeArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Outcome {
    let auth = Auth::from_env(&a.issuer).map_err(|e| Failure::validation(e.to_string()))?;
    let ctx = context(&a.index, &a.embedder, &a.gate, &a.classifier)?;
    let audit = match &a.audit_log {
        Some(p) => Some(AuditLog::open(p, a.audit_max_bytes).map_err(|e| Failure::io(p, e))?),
        None => None,
    };
    let config = ServiceConfig {
        proxy_predict_url: a.proxy_predict_url.clone(),
        ..ServiceConfig::default()
    };
    let state = Arc::new(AppState::ready(auth, ctx, config, audit));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .try_init();

    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Failure::io(Path::new("<runtime>"), e))?;
    let addr = format!("{}:{}", a.host, a.port);
    let listener = rt
        .block_on(tokio::net::TcpListener::bind(&addr))
        .map_err(|e| Failure::io(Path::new(&addr), e))?;
    let local = listener
        .local_addr()
        .map_err(|e| Failure::io(Path::new(&addr), e))?;
    let _ = writeln!(stdout, "listening on http://{local}");
    let _ = stdout.flush();
    let _ = stderr.flush();
    rt.block_on(shellgate_service::serve(listener, state, async {
        let _ = tokio::signal::ctrl_c().await;
    }))
    .map_err(|e| Failure::io(Path::new(&addr), e))
}

fn token(a: &TokenArgs, stdout: &mut dyn Write) -> Outcome {
    let secret = std::env::var(auth::SECRET_ENV)
        .map_err(|_| Failure::validation(format!("{} is not set", auth::SECRET_ENV)))?;
    let t = auth::mint_token(secret.as_bytes(), &a.issuer, a.ttl)
        .map_err(|e| Failure::validation(e.to_string()))?;
    let _ = writeln!(stdout, "{t}");
    Ok(())
}

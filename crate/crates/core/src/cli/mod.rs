//! Command-line front end.
//!
//! Exit codes: 0 success, 2 usage or input errors, 3 numerical failures,
//! 4 failed verification properties.

pub mod verify;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::dataio::{hex_string, load_dataset, save_dataset, synth_generate, MultiOmicsDataset, SynthSpec};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::model::{
    config_digest, evaluate, fit, forward, load_model, save_model, EpochLog, EvalReport, Fusion, Mode,
    Optimizer, TrainConfig,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_PROPERTY: i32 = 4;

pub const SCHEMA_VERSION: u32 = 1;
pub const LOG_ENV: &str = "GTMANCER_LOG";

#[derive(Debug, Parser)]
#[command(name = "gtmancer", version, about = "Multi-omics classification with unrolled multiplex graph optimization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train on CSV views and write model, metrics, log and manifest.
    Train(TrainArgs),
    /// Run the fixed-structure verification suite.
    Verify(VerifyArgs),
    /// Write a synthetic dataset as CSV files.
    Synth(SynthArgs),
    /// Write eval-mode fused embeddings as TSV.
    ExportEmbeddings(ExportArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// View CSV file; repeat once per modality.
    #[arg(long = "views", required = true, num_args = 1..)]
    pub views: Vec<PathBuf>,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Flat key=value file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub label_ratio: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    pub fusion: Option<Fusion>,
    #[arg(long)]
    pub optimizer: Option<Optimizer>,
    /// Z-score every feature column before training.
    #[arg(long)]
    pub zscore: bool,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 100)]
    pub seeds: u64,
    #[arg(long, default_value_t = 16)]
    pub n: usize,
    #[arg(long, default_value_t = 4)]
    pub d: usize,
    #[arg(long, default_value_t = 3)]
    pub m: usize,
    /// Multiplier on the first-order step bound; above 1 the descent
    /// property is reported as not guaranteed.
    #[arg(long, default_value_t = 1.0)]
    pub alpha_scale: f64,
    /// JSON report path; printed to stdout when omitted.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Per-step diagnostics as JSON lines.
    #[arg(long)]
    pub diagnostics: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 3)]
    pub m: usize,
    #[arg(long)]
    pub classes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Feature width per view: one value for all views or a comma list.
    #[arg(long, value_delimiter = ',')]
    pub dims: Vec<usize>,
    #[arg(long, default_value_t = 5.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long = "views", required = true, num_args = 1..)]
    pub views: Vec<PathBuf>,
    #[arg(long)]
    pub labels: PathBuf,
    /// Output TSV path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct InputDigest {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    schema_version: u32,
    command: String,
    tool_version: String,
    seed: Option<u64>,
    config: Option<TrainConfig>,
    dataset_digest: String,
    inputs: Vec<InputDigest>,
    artifacts: Vec<String>,
}

#[derive(Debug, Serialize)]
struct Metrics<'a> {
    schema_version: u32,
    #[serde(flatten)]
    report: &'a EvalReport,
    class_names: &'a [String],
    n_train: usize,
    n_test: usize,
}

#[derive(Debug, Serialize)]
struct LogLine<'a> {
    schema_version: u32,
    #[serde(flatten)]
    entry: &'a EpochLog,
}

/// Failure carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: if e.is_numeric() { EXIT_NUMERIC } else { EXIT_USAGE },
            message: e.to_string(),
        }
    }
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or(LOG_ENV, "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn dispatch(command: Command) -> std::result::Result<i32, Failure> {
    match command {
        Command::Train(a) => cmd_train(&a).map_err(Failure::from),
        Command::Verify(a) => cmd_verify(&a).map_err(Failure::from),
        Command::Synth(a) => cmd_synth(&a).map_err(Failure::from),
        Command::ExportEmbeddings(a) => cmd_export(&a),
    }
}

fn require_files<'a>(paths: impl IntoIterator<Item = &'a PathBuf>) -> Result<()> {
    for p in paths {
        if !p.is_file() {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("{}: no such file", p.display()),
            )));
        }
    }
    Ok(())
}

fn file_digest(path: &Path) -> Result<InputDigest> {
    let bytes = fs::read(path)?;
    Ok(InputDigest {
        path: path.display().to_string(),
        sha256: hex_string(&Sha256::digest(&bytes)),
    })
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut config = TrainConfig::default();
    if let Some(path) = &a.config {
        config.apply_file_contents(&fs::read_to_string(path)?)?;
    }
    if let Some(v) = a.seed {
        config.seed = v;
    }
    if let Some(v) = a.label_ratio {
        config.label_ratio = v;
    }
    if let Some(v) = a.k {
        config.k = v;
    }
    if let Some(v) = a.tau {
        config.tau = v;
    }
    if let Some(v) = a.epochs {
        config.epochs = v;
    }
    if let Some(v) = a.lr {
        config.learning_rate = v;
    }
    if let Some(v) = a.latent_dim {
        config.latent_dim = v;
    }
    if let Some(v) = a.fusion {
        config.fusion = v;
    }
    if let Some(v) = a.optimizer {
        config.optimizer = v;
    }
    config.validate()?;
    Ok(config)
}

fn load_inputs(views: &[PathBuf], labels: &PathBuf, zscore: bool) -> Result<MultiOmicsDataset> {
    require_files(views.iter().chain([labels]))?;
    let ds = load_dataset(views, labels)?;
    Ok(if zscore { ds.zscored() } else { ds })
}

fn cmd_train(a: &TrainArgs) -> Result<i32> {
    require_files(a.config.iter())?;
    let config = train_config(a)?;
    let dataset = load_inputs(&a.views, &a.labels, a.zscore)?;
    log::info!(
        "training on N={} M={} classes={} for {} epochs",
        dataset.n_samples(),
        dataset.n_views(),
        dataset.class_count,
        config.epochs
    );
    let result = fit(&dataset, &config)?;
    let report = evaluate(&dataset, &result.params, &config, &result.mask)?;

    fs::create_dir_all(&a.out)?;
    save_model(a.out.join("model.bin"), &result.params, &config)?;
    let metrics = Metrics {
        schema_version: SCHEMA_VERSION,
        report: &report,
        class_names: &dataset.class_names,
        n_train: result.mask.train_indices.len(),
        n_test: result.mask.test_indices.len(),
    };
    write_atomic(&a.out.join("metrics.json"), &json_bytes(&metrics)?)?;
    let mut log_text = String::new();
    for entry in &result.log {
        log_text.push_str(&serde_json::to_string(&LogLine {
            schema_version: SCHEMA_VERSION,
            entry,
        })?);
        log_text.push('\n');
    }
    write_atomic(&a.out.join("train.log.jsonl"), log_text.as_bytes())?;

    let mut inputs: Vec<InputDigest> = a.views.iter().map(|p| file_digest(p)).collect::<Result<_>>()?;
    inputs.push(file_digest(&a.labels)?);
    if let Some(c) = &a.config {
        inputs.push(file_digest(c)?);
    }
    let manifest = RunManifest {
        schema_version: SCHEMA_VERSION,
        command: "train".into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        seed: Some(config.seed),
        config: Some(config.clone()),
        dataset_digest: dataset.digest(),
        inputs,
        artifacts: ["model.bin", "metrics.json", "train.log.jsonl"].map(String::from).to_vec(),
    };
    write_atomic(&a.out.join("manifest.json"), &json_bytes(&manifest)?)?;
    println!("accuracy={:.4} macro_f1={:.4}", report.accuracy, report.macro_f1);
    Ok(EXIT_OK)
}

fn cmd_verify(a: &VerifyArgs) -> Result<i32> {
    if a.seeds == 0 || a.n == 0 || a.d == 0 || a.m == 0 {
        return Err(Error::Parameter("seeds, n, d and m must be positive".into()));
    }
    if !(a.alpha_scale > 0.0 && a.alpha_scale.is_finite()) {
        return Err(Error::Parameter(format!("alpha scale must be positive, got {}", a.alpha_scale)));
    }
    let report = verify::run(&verify::VerifyOptions {
        seeds: a.seeds,
        n: a.n,
        d: a.d,
        m: a.m,
        alpha_scale: a.alpha_scale,
    })?;
    let bytes = json_bytes(&report)?;
    match &a.report {
        Some(path) => write_atomic(path, &bytes)?,
        None => print!("{}", String::from_utf8_lossy(&bytes)),
    }
    if let Some(path) = &a.diagnostics {
        let mut text = String::new();
        for step in &report.steps {
            text.push_str(&serde_json::to_string(step)?);
            text.push('\n');
        }
        write_atomic(path, text.as_bytes())?;
    }
    for p in &report.properties {
        match p.status {
            verify::Status::Pass => {}
            verify::Status::NotGuaranteed => {
                eprintln!("warning: {}: {}", p.name, p.note.as_deref().unwrap_or("not guaranteed"))
            }
            verify::Status::Fail => eprintln!(
                "property {} failed for seeds {:?} (worst slack {:e} at seed {})",
                p.name, p.failing_seeds, p.worst_slack, p.worst_seed
            ),
        }
    }
    Ok(if report.all_pass { EXIT_OK } else { EXIT_PROPERTY })
}

fn cmd_synth(a: &SynthArgs) -> Result<i32> {
    let dims = match a.dims.as_slice() {
        [] => vec![SynthSpec::DEFAULT_WIDTH; a.m],
        [w] => vec![*w; a.m],
        many => many.to_vec(),
    };
    let mut spec = SynthSpec::new(a.n, a.m, a.classes, a.separation, a.sigma, a.seed);
    spec.dims = dims;
    let dataset = synth_generate(&spec)?;
    fs::create_dir_all(&a.out)?;
    let (views, labels) = save_dataset(&dataset, &a.out)?;
    let mut artifacts: Vec<String> = views
        .iter()
        .chain(std::iter::once(&labels))
        .map(|p| p.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default())
        .collect();
    artifacts.sort();
    let manifest = RunManifest {
        schema_version: SCHEMA_VERSION,
        command: "synth".into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        seed: Some(a.seed),
        config: None,
        dataset_digest: dataset.digest(),
        inputs: Vec::new(),
        artifacts,
    };
    write_atomic(&a.out.join("manifest.json"), &json_bytes(&manifest)?)?;
    println!("wrote {} views and labels to {}", views.len(), a.out.display());
    Ok(EXIT_OK)
}

fn cmd_export(a: &ExportArgs) -> std::result::Result<i32, Failure> {
    require_files([&a.model])?;
    let (header, params) = load_model(&a.model)?;
    let dataset = load_inputs(&a.views, &a.labels, false)?;
    let actual = config_digest(
        &dataset.dims(),
        params.latent_dim(),
        dataset.class_count,
        params.layers(),
        header.config.fusion,
    );
    if actual != header.digest {
        return Err(Failure {
            code: EXIT_USAGE,
            message: Error::DigestMismatch {
                expected: header.digest,
                actual,
            }
            .to_string(),
        });
    }
    let out = forward(&dataset, &params, &header.config, Mode::Eval, None)?;
    let mut text = String::from("sample_id\tlabel");
    for j in 0..out.fused.cols() {
        text.push_str(&format!("\tz{j}"));
    }
    text.push('\n');
    for i in 0..dataset.n_samples() {
        text.push_str(&dataset.sample_ids[i]);
        text.push('\t');
        text.push_str(&dataset.class_names[dataset.labels[i]]);
        for v in out.fused.row(i) {
            text.push_str(&format!("\t{v}"));
        }
        text.push('\n');
    }
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(Error::from)?;
    }
    write_atomic(&a.out, text.as_bytes()).map_err(Error::from)?;
    Ok(EXIT_OK)
}

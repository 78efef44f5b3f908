//! Command-line front end. [`run`] parses arguments, executes one
//! subcommand and returns the process exit code: 0 success, 1 validation
//! failure, 2 I/O or format error, 3 numerical abort.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::adapter::save_checkpoint;
use crate::dataset::{
    apply_annotation_filter, load_annotations, load_dataset, split_dataset_with, DatasetError, PromptStyle,
    SplitAssignment, SplitGranularity, SplitRatios,
};
use crate::embedding_store::{emb_path, read_anchor_set, read_store, AnchorSet, StoreError};
use crate::evaluation::{
    build_report, dialect_correlation, metrics_in, model_correlation, read_mean_rows, read_scores, report_csv,
    report_markdown, reports_from_means, AggregationMode, DialectReport, EvalError, Metric,
};
use crate::gradcheck::{finite_difference_gradcheck, GradcheckConfig, GradcheckError, TOLERANCE};
use crate::losses::{LossError, LossWeights};
use crate::optim::OptimError;
use crate::trainer::{history_csv, train, KlAnchorBatching, TrainError, TrainerConfig, TrainingData};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "dialign", version, about = "Dialect-robust text-encoder alignment toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a prompt-pair file and optionally apply the annotation filter.
    Validate(ValidateArgs),
    /// Assign pairs to train/val/test.
    Split(SplitArgs),
    /// Train a linear adapter on frozen embeddings.
    Train(TrainArgs),
    /// Compute dialect drops from a score file.
    Eval(EvalArgs),
    /// Compare analytic and finite-difference gradients.
    Gradcheck(GradcheckArgs),
    /// Render drop tables from per-dialect mean scores of several models.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Prompt-pair JSONL file.
    pub dataset: PathBuf,
    /// Annotation JSONL file (two records per pair).
    #[arg(long)]
    pub annotations: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    pub dataset: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Train,val,test fractions.
    #[arg(long, default_value = "0.8,0.1,0.1")]
    pub ratios: String,
    /// Keep pairs sharing a lexeme in one split.
    #[arg(long)]
    pub by_lexeme: bool,
    /// Output TSV; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Split TSV from `split`.
    #[arg(long)]
    pub split: PathBuf,
    /// Directory holding `sae`, `dialect` and optional `polysemy` stores.
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Directory holding `captions`, optional `images`, and optional
    /// `val_captions`/`val_images` stores.
    #[arg(long)]
    pub anchors: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    pub beta2: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 0.0)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// Number of KL anchors M.
    #[arg(long, default_value_t = 1024)]
    pub anchor_count: usize,
    /// `full` or `minibatch:<size>`.
    #[arg(long, default_value = "full")]
    pub kl_anchor_batching: KlAnchorBatching,
    #[arg(long, default_value_t = 1.0)]
    pub w_dl: f64,
    #[arg(long, default_value_t = 1.0)]
    pub w_pc: f64,
    #[arg(long, default_value_t = 1.0)]
    pub w_kl: f64,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    /// Use image rows as KL anchors instead of frozen captions.
    #[arg(long)]
    pub image_anchors: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.0)]
    pub lr_min: f64,
    /// Use the first `anchor-count` anchors when more are present.
    #[arg(long)]
    pub truncate_anchors: bool,
}

impl TrainArgs {
    pub fn config(&self) -> TrainerConfig {
        TrainerConfig {
            learning_rate: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            weight_decay: self.weight_decay,
            epochs: self.epochs,
            batch_size: self.batch_size,
            anchor_count: self.anchor_count,
            kl_anchor_batching: self.kl_anchor_batching,
            loss_weights: LossWeights {
                dialect: self.w_dl,
                polysemy: self.w_pc,
                kl: self.w_kl,
            },
            temperature: self.temperature,
            use_image_anchors: self.image_anchors,
            seed: self.seed,
            lr_min: self.lr_min,
            truncate_anchors: self.truncate_anchors,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Score CSV.
    #[arg(long)]
    pub scores: PathBuf,
    /// Prompt-pair JSONL file the scores refer to.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Metric name; every metric in the file when absent.
    #[arg(long)]
    pub metric: Option<String>,
    /// `concise`, `detailed` or `all`.
    #[arg(long, default_value = "all")]
    pub style: String,
    /// `ratio-of-averages` or `mean-of-pair-drops`.
    #[arg(long, default_value = "ratio-of-averages")]
    pub mode: String,
    /// Model label for the report rows.
    #[arg(long, default_value = "model")]
    pub model: String,
    /// Directory for report.csv, report.md and manifest.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    #[arg(long, default_value_t = 4)]
    pub pairs: usize,
    #[arg(long, default_value_t = 6)]
    pub anchors: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    /// Check at the identity adapter.
    #[arg(long)]
    pub identity: bool,
    #[arg(long, hide = true)]
    pub corrupt_gradient: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// CSV `model,style,metric,dialect,dialect_score,sae_score`.
    #[arg(long)]
    pub means: PathBuf,
    /// `concise`, `detailed` or `all`.
    #[arg(long, default_value = "all")]
    pub style: String,
    /// Restrict to one metric.
    #[arg(long)]
    pub metric: Option<String>,
    /// Directory for report.csv and report.md.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// A failure carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }
}

type CmdResult = Result<(), Failure>;

impl From<DatasetError> for Failure {
    fn from(e: DatasetError) -> Self {
        let code = match e {
            DatasetError::Io { .. } | DatasetError::Malformed { .. } => EXIT_IO,
            _ => EXIT_INVALID,
        };
        let mut message = e.to_string();
        if let DatasetError::Invalid(vs) = &e {
            message = vs.iter().map(ToString::to_string).collect::<Vec<_>>().join("\n");
        }
        Failure::new(code, message)
    }
}

impl From<StoreError> for Failure {
    fn from(e: StoreError) -> Self {
        Failure::new(EXIT_IO, e.to_string())
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        let code = match e {
            EvalError::Io { .. } | EvalError::Malformed { .. } => EXIT_IO,
            _ => EXIT_INVALID,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        let code = match &e {
            TrainError::NonFiniteLoss { .. }
            | TrainError::Optim {
                source: OptimError::NonFiniteGradient(_),
                ..
            }
            | TrainError::Loss(LossError::NonFinite | LossError::NonFiniteComponent) => EXIT_NUMERIC,
            TrainError::MissingEmbedding { .. } | TrainError::DimMismatch { .. } | TrainError::Store(_) => EXIT_IO,
            _ => EXIT_INVALID,
        };
        Failure::new(code, e.to_string())
    }
}

fn io_failure(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::new(EXIT_IO, format!("{}: {e}", path.display()))
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn std::io::Write, err: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let _ = if e.use_stderr() {
                write!(err, "{}", e.render())
            } else {
                write!(out, "{}", e.render())
            };
            return code;
        }
    };
    let result = match &cli.command {
        Command::Validate(a) => cmd_validate(a, out, err),
        Command::Split(a) => cmd_split(a, out, err),
        Command::Train(a) => cmd_train(a, out),
        Command::Eval(a) => cmd_eval(a, out, err),
        Command::Gradcheck(a) => cmd_gradcheck(a, out),
        Command::Report(a) => cmd_report(a, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn cmd_validate(a: &ValidateArgs, out: &mut dyn std::io::Write, err: &mut dyn std::io::Write) -> CmdResult {
    let pairs = load_dataset(&a.dataset)?;
    let _ = writeln!(out, "pairs {}", pairs.len());
    for (d, n) in pairs.per_dialect() {
        let _ = writeln!(out, "  {d} {n}");
    }
    let _ = writeln!(out, "polysemy {}", pairs.polysemy_count());
    let _ = writeln!(out, "prompts {}", pairs.prompt_count());
    let warnings = pairs.style_warnings();
    for (id, which, v) in &warnings {
        let _ = writeln!(err, "warning: {id} {which}: {v}");
    }
    let _ = writeln!(out, "style warnings {}", warnings.len());
    if let Some(path) = &a.annotations {
        let records = load_annotations(path)?;
        let outcome = apply_annotation_filter(&pairs, &records)?;
        for (reason, ids) in &outcome.rejected {
            let _ = writeln!(out, "  {reason} {}", ids.join(" "));
        }
        let _ = writeln!(
            out,
            "retained {} / rejected {}",
            outcome.retained.len(),
            outcome.rejected_count()
        );
    }
    Ok(())
}

fn parse_ratios(s: &str) -> Result<SplitRatios, Failure> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| Failure::new(EXIT_INVALID, format!("bad --ratios {s:?}: {e}")))?;
    if parts.len() != 3 {
        return Err(Failure::new(
            EXIT_INVALID,
            format!("--ratios needs three values, got {s:?}"),
        ));
    }
    Ok(SplitRatios::new(parts[0], parts[1], parts[2])?)
}

fn cmd_split(a: &SplitArgs, out: &mut dyn std::io::Write, err: &mut dyn std::io::Write) -> CmdResult {
    let pairs = load_dataset(&a.dataset)?;
    let granularity = if a.by_lexeme {
        SplitGranularity::Lexeme
    } else {
        SplitGranularity::Pair
    };
    let split = split_dataset_with(&pairs, parse_ratios(&a.ratios)?, a.seed, granularity)?;
    let (tr, va, te) = split.sizes();
    let _ = writeln!(err, "train {tr} val {va} test {te} (prompts {})", pairs.prompt_count());
    match &a.out {
        Some(path) => split.write(path).map_err(io_failure(path))?,
        None => {
            let _ = out.write_all(split.to_tsv().as_bytes());
        }
    }
    Ok(())
}

fn sha256_file(path: &Path) -> Result<String, Failure> {
    let bytes = std::fs::read(path).map_err(io_failure(path))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

fn digests(paths: &[PathBuf]) -> Result<Value, Failure> {
    let mut m = serde_json::Map::new();
    for p in paths {
        m.insert(p.display().to_string(), Value::String(sha256_file(p)?));
    }
    Ok(Value::Object(m))
}

fn write_manifest(path: &Path, manifest: &Value) -> CmdResult {
    let text = serde_json::to_string_pretty(manifest).expect("json") + "\n";
    std::fs::write(path, text).map_err(io_failure(path))
}

fn optional_store(base: PathBuf) -> Option<PathBuf> {
    emb_path(&base).exists().then_some(base)
}

fn store_files(base: &Path) -> [PathBuf; 2] {
    [emb_path(base), crate::embedding_store::ids_path(base)]
}

fn cmd_train(a: &TrainArgs, out: &mut dyn std::io::Write) -> CmdResult {
    let config = a.config();
    config.validate()?;
    let dataset = load_dataset(&a.dataset)?;
    let split = SplitAssignment::read(&a.split)?;
    if let Some((id, _)) = split.iter().find(|(id, _)| !dataset.contains(id)) {
        return Err(Failure::new(
            EXIT_INVALID,
            format!("split names pair {id} not in the dataset"),
        ));
    }

    let sae_base = a.embeddings.join("sae");
    let dia_base = a.embeddings.join("dialect");
    let poly_base = optional_store(a.embeddings.join("polysemy"));
    let sae = read_store(&sae_base)?;
    let dialect = read_store(&dia_base)?;
    let polysemy = poly_base.as_ref().map(read_store).transpose()?;

    let cap_base = a.anchors.join("captions");
    let img_base = optional_store(a.anchors.join("images"));
    let anchors = read_anchor_set(&cap_base, img_base.as_deref())?;
    let val_cap = optional_store(a.anchors.join("val_captions"));
    let val_img = optional_store(a.anchors.join("val_images"));
    let val_anchors: Option<AnchorSet> = match &val_cap {
        Some(c) => Some(read_anchor_set(c, val_img.as_deref())?),
        None => None,
    };

    let data = TrainingData::from_stores(&sae, &dialect, polysemy.as_ref(), &split)?;
    let result = train(&config, &data, &anchors, val_anchors.as_ref())?;

    std::fs::create_dir_all(&a.out).map_err(io_failure(&a.out))?;
    let ckpt = a.out.join("adapter.ckpt");
    let hist = a.out.join("history.csv");
    save_checkpoint(&result.best_adapter, &ckpt).map_err(|e| Failure::new(EXIT_IO, e.to_string()))?;
    std::fs::write(&hist, history_csv(&result.history)).map_err(io_failure(&hist))?;

    let mut inputs = vec![a.dataset.clone(), a.split.clone()];
    let mut bases = vec![sae_base, dia_base];
    bases.extend(poly_base);
    bases.push(cap_base);
    bases.extend(img_base);
    bases.extend(val_cap.clone());
    bases.extend(val_img);
    for b in &bases {
        inputs.extend(store_files(b));
    }
    let manifest = json!({
        "command": "train",
        "config": {
            "learning_rate": config.learning_rate,
            "beta1": config.beta1,
            "beta2": config.beta2,
            "epsilon": config.epsilon,
            "weight_decay": config.weight_decay,
            "epochs": config.epochs,
            "batch_size": config.batch_size,
            "anchor_count": config.anchor_count,
            "kl_anchor_batching": config.kl_anchor_batching.to_string(),
            "loss_weights": [config.loss_weights.dialect, config.loss_weights.polysemy, config.loss_weights.kl],
            "temperature": config.temperature,
            "use_image_anchors": config.use_image_anchors,
            "seed": config.seed,
            "lr_min": config.lr_min,
            "truncate_anchors": config.truncate_anchors,
        },
        "seed": config.seed,
        "validation_loss": "weighted sum of dialect learning, polysemy control and KL over validation anchors",
        "validation_anchors": if val_cap.is_some() { "val_captions" } else { "captions" },
        "best_epoch": result.best_epoch,
        "inputs": digests(&inputs)?,
        "outputs": digests(&[ckpt.clone(), hist.clone()])?,
    });
    write_manifest(&a.out.join("manifest.json"), &manifest)?;

    let best = &result.history[result.best_epoch];
    let _ = writeln!(
        out,
        "best epoch {} val_total {:.6e} (initial {:.6e})",
        result.best_epoch, best.val.total, result.initial_validation.total
    );
    let _ = writeln!(out, "wrote {}", ckpt.display());
    Ok(())
}

fn parse_style(s: &str) -> Result<Option<PromptStyle>, Failure> {
    if s == "all" {
        return Ok(None);
    }
    PromptStyle::parse(s)
        .map(Some)
        .ok_or_else(|| Failure::new(EXIT_INVALID, format!("unknown style {s:?}")))
}

fn parse_mode(s: &str) -> Result<AggregationMode, Failure> {
    AggregationMode::parse(s).ok_or_else(|| Failure::new(EXIT_INVALID, format!("unknown mode {s:?}")))
}

fn emit_reports(
    reports: &[DialectReport],
    extra_md: &str,
    out_dir: Option<&Path>,
    out: &mut dyn std::io::Write,
) -> Result<Vec<PathBuf>, Failure> {
    let csv = report_csv(reports);
    let md = report_markdown(reports) + extra_md;
    match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(io_failure(dir))?;
            let (c, m) = (dir.join("report.csv"), dir.join("report.md"));
            std::fs::write(&c, csv).map_err(io_failure(&c))?;
            std::fs::write(&m, md).map_err(io_failure(&m))?;
            Ok(vec![c, m])
        }
        None => {
            let _ = write!(out, "{csv}\n{md}");
            Ok(Vec::new())
        }
    }
}

fn cmd_eval(a: &EvalArgs, out: &mut dyn std::io::Write, err: &mut dyn std::io::Write) -> CmdResult {
    let style = parse_style(&a.style)?;
    let mode = parse_mode(&a.mode)?;
    let scores = read_scores(&a.scores)?;
    let dataset = load_dataset(&a.dataset)?;
    let metrics = match &a.metric {
        Some(m) => vec![Metric::parse(m)],
        None => metrics_in(&scores),
    };
    if metrics.is_empty() {
        return Err(EvalError::NoCompletePairs.into());
    }
    let mut reports = Vec::new();
    for m in &metrics {
        let r = build_report(&scores, &dataset, m, style, mode, &a.model)?;
        if r.incomplete > 0 {
            let _ = writeln!(err, "warning: {} {} pair(s) lack a variant", r.incomplete, m);
        }
        if !r.excluded_zero_sae.is_empty() {
            let _ = writeln!(
                err,
                "warning: excluded for zero SAE performance: {}",
                r.excluded_zero_sae.join(" ")
            );
        }
        if r.unknown_pairs > 0 {
            let _ = writeln!(err, "warning: {} score record(s) name unknown pairs", r.unknown_pairs);
        }
        reports.push(r);
    }
    let mut extra = format!("\nAggregation: {}\n", mode.as_str());
    let mut correlations = serde_json::Map::new();
    for i in 0..reports.len() {
        for j in i + 1..reports.len() {
            let key = format!("{}~{}", reports[i].metric, reports[j].metric);
            match dialect_correlation(&reports[i], &reports[j]) {
                Some(r) => {
                    extra.push_str(&format!("Pearson r ({key}, across dialects): {r:.4}\n"));
                    correlations.insert(key, json!(r));
                }
                None => {
                    correlations.insert(key, Value::Null);
                }
            }
        }
    }
    let outputs = emit_reports(&reports, &extra, a.out.as_deref(), out)?;
    if let Some(dir) = &a.out {
        let manifest = json!({
            "command": "eval",
            "config": {
                "metric": a.metric,
                "style": a.style,
                "mode": mode.as_str(),
                "model": a.model,
            },
            "pearson_across_dialects": correlations,
            "inputs": digests(&[a.scores.clone(), a.dataset.clone()])?,
            "outputs": digests(&outputs)?,
        });
        write_manifest(&dir.join("manifest.json"), &manifest)?;
    }
    Ok(())
}

fn cmd_gradcheck(a: &GradcheckArgs, out: &mut dyn std::io::Write) -> CmdResult {
    let config = GradcheckConfig {
        dim: a.dim,
        pairs: a.pairs,
        anchors: a.anchors,
        seed: a.seed,
        temperature: a.temperature,
        identity: a.identity,
        corrupt: a.corrupt_gradient,
    };
    let report = finite_difference_gradcheck(&config).map_err(|e| match e {
        GradcheckError::NonFinite(_) => Failure::new(EXIT_NUMERIC, e.to_string()),
        _ => Failure::new(EXIT_INVALID, e.to_string()),
    })?;
    for c in &report.components {
        let _ = writeln!(out, "{:<18} {:.3e} at {}", c.component.name(), c.max_rel_error, c.worst);
    }
    let max = report.max_rel_error();
    let _ = writeln!(out, "max relative error {max:.3e}");
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::new(
            EXIT_INVALID,
            format!("gradient check failed: {max:.3e} >= {TOLERANCE:e}"),
        ))
    }
}

fn cmd_report(a: &ReportArgs, out: &mut dyn std::io::Write) -> CmdResult {
    let style = parse_style(&a.style)?;
    let rows = read_mean_rows(&a.means)?;
    let rows: Vec<_> = rows
        .into_iter()
        .filter(|r| style.is_none_or(|s| r.style == s.as_str()))
        .filter(|r| a.metric.as_ref().is_none_or(|m| &r.metric == m))
        .collect();
    let reports = reports_from_means(&rows, AggregationMode::RatioOfAverages)?;
    if reports.is_empty() {
        return Err(EvalError::NoCompletePairs.into());
    }
    let mut metrics: Vec<Metric> = reports.iter().map(|r| r.metric.clone()).collect();
    metrics.sort();
    metrics.dedup();
    let mut styles: Vec<Option<PromptStyle>> = reports.iter().map(|r| r.style).collect();
    styles.dedup();
    styles.sort_by_key(|s| s.map(PromptStyle::as_str));
    styles.dedup();
    let mut extra = String::from("\nAggregation: ratio-of-averages\n");
    for s in &styles {
        for i in 0..metrics.len() {
            for j in i + 1..metrics.len() {
                if let Some(r) = model_correlation(&reports, *s, &metrics[i], &metrics[j]) {
                    extra.push_str(&format!(
                        "Pearson r ({}~{}, {}, across models): {r:.4}\n",
                        metrics[i],
                        metrics[j],
                        s.map_or("all", PromptStyle::as_str)
                    ));
                }
            }
        }
    }
    emit_reports(&reports, &extra, a.out.as_deref(), out)?;
    Ok(())
}

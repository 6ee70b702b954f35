//! The `gazefuse` command line.
//!
//! Exit status is 0 on success, 1 on validation or I/O failure (one line on
//! stderr starting with `error:`), 2 on usage errors. Output files are written
//! to temporaries and renamed into place only after every output succeeded.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::ablation::{ablation_sweep, write_ablation_csv, AblationMask};
use crate::corpus::{parse_corpus, write_records, Corpus, Split, TargetVector, TokenRecord};
use crate::evaluation::{emit_results_table, evaluate_sliced, write_eval_csv, EvalReport, TableRow};
use crate::features::{featurize_corpus, FEATURE_NAMES};
use crate::models::{checkpoint, fit_linear, fit_median, predict, Model};
use crate::store::{read_store, zero_store_for, EmbeddingStore};
use crate::training::{self, HyperParams};

#[derive(Debug, Parser)]
#[command(name = "gazefuse", version, about = "Eye-tracking feature prediction from length features and frozen embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build an embedding store from a vectors CSV, or a zero store for testing.
    ImportEmbeddings(ImportArgs),
    /// Inspect engineered features.
    #[command(subcommand)]
    Features(FeaturesCommand),
    /// Train the fusion model.
    Train(TrainArgs),
    /// Write per-token predictions in the corpus layout.
    Predict(PredictArgs),
    /// MAE report, overall and per dataset / language.
    Evaluate(EvaluateArgs),
    /// Zero-replacement feature ablation sweep.
    Ablate(AblateArgs),
    /// Fit a feature-only baseline.
    Baseline(BaselineArgs),
}

#[derive(Debug, Subcommand)]
pub enum FeaturesCommand {
    /// Write tok_len, word_char_len and rel_len for every token as CSV.
    Dump {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        emb: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct ImportArgs {
    /// Corpus files whose tokens the store must cover.
    #[arg(long = "corpus", required = true)]
    pub corpora: Vec<PathBuf>,
    /// CSV with header `dataset,sentence_id,word_id,tok_len,v0,v1,...`.
    #[arg(long, conflicts_with = "zero_dim", required_unless_present = "zero_dim")]
    pub vectors: Option<PathBuf>,
    /// Emit zero vectors of this width with tok_len 1.
    #[arg(long)]
    pub zero_dim: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub dev: PathBuf,
    #[arg(long)]
    pub emb: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// TrainLog CSV; defaults to `<out>.log.csv`.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub emb: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Features to zero, e.g. `tok_len,rel_len`.
    #[arg(long, default_value = "none")]
    pub mask: AblationMask,
    #[arg(long, default_value = "test")]
    pub split: Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Table,
    Csv,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, conflicts_with = "pred", required_unless_present = "pred")]
    pub model: Option<PathBuf>,
    /// Predictions in the corpus layout, instead of `--model`.
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Gold corpus.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub emb: Option<PathBuf>,
    /// Model label in the report; defaults to the model kind.
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long, default_value = "dev")]
    pub split: Split,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "table")]
    pub format: OutputFormat,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub emb: PathBuf,
    #[arg(long, default_value = "dev")]
    pub split: Split,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "table")]
    pub format: OutputFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaselineKind {
    Median,
    Linear,
    Mlp,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long, value_enum)]
    pub kind: BaselineKind,
    #[arg(long)]
    pub train: PathBuf,
    /// Required for `mlp`.
    #[arg(long, required_if_eq("kind", "mlp"))]
    pub dev: Option<PathBuf>,
    /// Required for `linear` and `mlp` (subword counts live in the store).
    #[arg(long, required_if_eq_any([("kind", "linear"), ("kind", "mlp")]))]
    pub emb: Option<PathBuf>,
    /// Ridge penalty for `linear`.
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Required for `mlp`.
    #[arg(long, required_if_eq("kind", "mlp"))]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub log: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let rendered = e.render().to_string();
            if code == 0 {
                let _ = write!(stdout, "{rendered}");
            } else {
                let _ = write!(stderr, "{rendered}");
            }
            return code;
        }
    };
    match execute(cli.command, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            let _ = writeln!(stderr, "error: {msg}");
            1
        }
    }
}

/// Files staged next to their destination and renamed together on commit.
struct Outputs {
    staged: Vec<(tempfile::NamedTempFile, PathBuf)>,
}

impl Outputs {
    fn new() -> Self {
        Self { staged: Vec::new() }
    }

    fn stage(&mut self, path: &Path, write: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let mut tmp = tempfile::Builder::new()
            .prefix(".gazefuse-")
            .tempfile_in(dir)
            .with_context(|| format!("creating temporary file in {}", dir.display()))?;
        {
            let mut buf = std::io::BufWriter::new(tmp.as_file_mut());
            write(&mut buf)?;
            buf.flush()?;
        }
        self.staged.push((tmp, path.to_path_buf()));
        Ok(())
    }

    fn commit(self) -> Result<()> {
        for (tmp, path) in self.staged {
            tmp.persist(&path)
                .with_context(|| format!("writing {}", path.display()))?;
        }
        Ok(())
    }
}

fn load_corpus(path: &Path, split: Split) -> Result<Corpus> {
    parse_corpus(path, split).with_context(|| format!("{}", path.display()))
}

fn load_store(path: &Path) -> Result<EmbeddingStore> {
    read_store(path).with_context(|| format!("{}", path.display()))
}

fn load_model(path: &Path) -> Result<Model> {
    checkpoint::load(path).with_context(|| format!("{}", path.display()))
}

fn load_config(path: Option<&Path>) -> Result<HyperParams> {
    match path {
        None => Ok(HyperParams::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("{}", p.display()))?;
            HyperParams::parse_config(&text).with_context(|| format!("{}", p.display()))
        }
    }
}

fn default_log_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".log.csv");
    PathBuf::from(s)
}

fn execute(command: Command, stdout: &mut dyn Write) -> Result<()> {
    match command {
        Command::ImportEmbeddings(a) => import_embeddings(a),
        Command::Features(FeaturesCommand::Dump { data, emb, out }) => features_dump(&data, &emb, &out),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict_cmd(a),
        Command::Evaluate(a) => evaluate(a, stdout),
        Command::Ablate(a) => ablate(a, stdout),
        Command::Baseline(a) => baseline(a),
    }
}

fn import_embeddings(a: ImportArgs) -> Result<()> {
    let corpora = a
        .corpora
        .iter()
        .map(|p| load_corpus(p, Split::Test))
        .collect::<Result<Vec<_>>>()?;
    let store = match (a.zero_dim, &a.vectors) {
        (Some(dim), _) => {
            if dim == 0 {
                bail!("--zero-dim must be positive");
            }
            zero_store_for(&corpora, dim)?
        }
        (None, Some(path)) => store_from_vectors(path, &corpora)?,
        (None, None) => unreachable!("clap requires one of the two"),
    };
    let bytes = store.to_bytes()?;
    let mut outs = Outputs::new();
    outs.stage(&a.out, |w| Ok(w.write_all(&bytes)?))?;
    outs.commit()
}

fn store_from_vectors(path: &Path, corpora: &[Corpus]) -> Result<EmbeddingStore> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("{}", path.display()))?;
    let header = rdr.headers()?.clone();
    let fixed = ["dataset", "sentence_id", "word_id", "tok_len"];
    if header.len() < 5 || header.iter().take(4).ne(fixed) {
        bail!(
            "{}: header must start with `{}` followed by at least one vector column",
            path.display(),
            fixed.join(",")
        );
    }
    let dim = header.len() - 4;
    let mut names: Vec<String> = Vec::new();
    for c in corpora {
        for n in c.dataset_names() {
            if !names.contains(&n) {
                names.push(n);
            }
        }
    }
    let mut store = EmbeddingStore::new(dim, names)?;
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let ctx = || format!("{} line {line}", path.display());
        let key = store
            .key_for(&row[0], row[1].parse().with_context(ctx)?, row[2].parse().with_context(ctx)?)
            .with_context(|| format!("{}: dataset `{}` not in any corpus", ctx(), &row[0]))?;
        if store.lookup(&key).is_ok() {
            bail!("{}: duplicate key", ctx());
        }
        let tok_len: u16 = row[3].parse().with_context(ctx)?;
        let vector = (4..row.len())
            .map(|i| row[i].parse::<f32>())
            .collect::<Result<Vec<_>, _>>()
            .with_context(ctx)?;
        store.insert(key, tok_len, vector).with_context(ctx)?;
    }
    for c in corpora {
        store.check_covers(c)?;
    }
    Ok(store)
}

fn features_dump(data: &Path, emb: &Path, out: &Path) -> Result<()> {
    let corpus = load_corpus(data, Split::Test)?;
    let store = load_store(emb)?;
    let feats = featurize_corpus(&corpus, &store)?;
    let mut outs = Outputs::new();
    outs.stage(out, |w| {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["dataset", "sentence_id", "word_id", "word"].into_iter().chain(FEATURE_NAMES))?;
        for (r, f) in corpus.records().iter().zip(&feats) {
            wtr.write_record([
                r.dataset.clone(),
                r.sentence_id.to_string(),
                r.word_id.to_string(),
                r.word.clone(),
                f.tok_len.to_string(),
                f.word_char_len.to_string(),
                f.rel_len.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    })?;
    outs.commit()
}

fn stage_training_outputs(model: &Model, log: &training::TrainLog, out: &Path, log_path: &Path) -> Result<()> {
    let bytes = checkpoint::to_bytes(model);
    let mut outs = Outputs::new();
    outs.stage(out, |w| Ok(w.write_all(&bytes)?))?;
    outs.stage(log_path, |w| Ok(log.write_csv(w)?))?;
    outs.commit()
}

fn train(a: TrainArgs) -> Result<()> {
    let mut hp = load_config(a.config.as_deref())?;
    hp.seed = a.seed;
    let train = load_corpus(&a.train, Split::Train)?;
    let dev = load_corpus(&a.dev, Split::Dev)?;
    let store = load_store(&a.emb)?;
    let (net, log) = training::train(&train, &dev, &store, &hp)?;
    let log_path = a.log.unwrap_or_else(|| default_log_path(&a.out));
    stage_training_outputs(&Model::Fusion(net), &log, &a.out, &log_path)
}

fn predict_cmd(a: PredictArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let corpus = load_corpus(&a.data, a.split)?;
    let store = a.emb.as_deref().map(load_store).transpose()?;
    let preds = predict(&model, &corpus, store.as_ref(), a.mask)?;
    let records: Vec<TokenRecord> = corpus
        .records()
        .iter()
        .zip(&preds)
        .map(|(r, p)| TokenRecord {
            targets: Some(TargetVector::new(*p).expect("predictions are clipped")),
            ..r.clone()
        })
        .collect();
    let mut outs = Outputs::new();
    outs.stage(&a.out, |w| Ok(write_records(w, &records)?))?;
    outs.commit()
}

fn read_predictions(path: &Path, gold: &Corpus) -> Result<Vec<[f64; 4]>> {
    let pred = load_corpus(path, Split::Dev)?;
    if pred.len() != gold.len() {
        bail!("{} has {} rows, gold has {}", path.display(), pred.len(), gold.len());
    }
    let by_key: std::collections::HashMap<(&str, u32, u32), [f64; 4]> = pred
        .records()
        .iter()
        .map(|r| ((r.dataset.as_str(), r.sentence_id, r.word_id), r.targets.expect("dev split").to_array()))
        .collect();
    gold.records()
        .iter()
        .map(|r| {
            by_key
                .get(&(r.dataset.as_str(), r.sentence_id, r.word_id))
                .copied()
                .with_context(|| {
                    format!(
                        "{}: no prediction for ({}, {}, {})",
                        path.display(),
                        r.dataset,
                        r.sentence_id,
                        r.word_id
                    )
                })
        })
        .collect()
}

fn evaluate(a: EvaluateArgs, stdout: &mut dyn Write) -> Result<()> {
    let gold = load_corpus(&a.data, a.split)?;
    if gold.targets().is_none() {
        bail!("{}: evaluation needs gold targets on every row", a.data.display());
    }
    let (preds, default_name) = match (&a.model, &a.pred) {
        (Some(m), _) => {
            let model = load_model(m)?;
            let store = a.emb.as_deref().map(load_store).transpose()?;
            (predict(&model, &gold, store.as_ref(), AblationMask::NONE)?, model.kind_name().to_string())
        }
        (None, Some(p)) => (read_predictions(p, &gold)?, "predictions".to_string()),
        (None, None) => unreachable!("clap requires one of the two"),
    };
    let name = a.name.unwrap_or(default_name);
    let reports = evaluate_sliced(&preds, &gold)?;
    let split = a.split.to_string();
    let csv_rows: Vec<(String, String, EvalReport)> =
        reports.iter().map(|r| (name.clone(), split.clone(), r.clone())).collect();

    match a.format {
        OutputFormat::Table => {
            let rows: Vec<TableRow> = reports
                .iter()
                .map(|r| {
                    let label = match &r.slice {
                        None => name.clone(),
                        Some(s) => format!("  {s}"),
                    };
                    (label, vec![(split.clone(), r.clone())])
                })
                .collect();
            stdout.write_all(emit_results_table(&rows).as_bytes())?;
        }
        OutputFormat::Csv => write_eval_csv(&mut *stdout, &csv_rows)?,
    }
    if let Some(out) = &a.out {
        let mut outs = Outputs::new();
        outs.stage(out, |w| Ok(write_eval_csv(w, &csv_rows)?))?;
        outs.commit()?;
    }
    Ok(())
}

fn ablate(a: AblateArgs, stdout: &mut dyn Write) -> Result<()> {
    let model = load_model(&a.model)?;
    let corpus = load_corpus(&a.data, a.split)?;
    let store = load_store(&a.emb)?;
    let rows = ablation_sweep(&model, &corpus, &store)?;
    match a.format {
        OutputFormat::Table => {
            let split = a.split.to_string();
            let table: Vec<TableRow> = rows
                .iter()
                .map(|r| {
                    let label = if r.mask.is_identity() {
                        model.kind_name().to_string()
                    } else {
                        format!("  {}", r.mask)
                    };
                    (label, vec![(split.clone(), r.report.clone())])
                })
                .collect();
            stdout.write_all(emit_results_table(&table).as_bytes())?;
        }
        OutputFormat::Csv => write_ablation_csv(&mut *stdout, &rows)?,
    }
    if let Some(out) = &a.out {
        let mut outs = Outputs::new();
        outs.stage(out, |w| Ok(write_ablation_csv(w, &rows)?))?;
        outs.commit()?;
    }
    Ok(())
}

fn baseline(a: BaselineArgs) -> Result<()> {
    let train = load_corpus(&a.train, Split::Train)?;
    match a.kind {
        BaselineKind::Median => {
            let model = Model::Median(fit_median(&train)?);
            let bytes = checkpoint::to_bytes(&model);
            let mut outs = Outputs::new();
            outs.stage(&a.out, |w| Ok(w.write_all(&bytes)?))?;
            outs.commit()
        }
        BaselineKind::Linear => {
            let store = load_store(a.emb.as_deref().unwrap())?;
            let model = Model::Linear(fit_linear(&train, &store, a.lambda)?);
            let bytes = checkpoint::to_bytes(&model);
            let mut outs = Outputs::new();
            outs.stage(&a.out, |w| Ok(w.write_all(&bytes)?))?;
            outs.commit()
        }
        BaselineKind::Mlp => {
            let mut hp = load_config(a.config.as_deref())?;
            hp.seed = a.seed.unwrap();
            let dev = load_corpus(a.dev.as_deref().unwrap(), Split::Dev)?;
            let store = load_store(a.emb.as_deref().unwrap())?;
            let (net, log) = training::train_mlp(&train, &dev, &store, &hp)?;
            let log_path = a.log.clone().unwrap_or_else(|| default_log_path(&a.out));
            stage_training_outputs(&Model::Mlp(net), &log, &a.out, &log_path)
        }
    }
}

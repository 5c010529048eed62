//! Command-line pipeline: `gen → tensorize → train → encode → project → cluster`,
//! plus retrieval, scoring, supervised heads and SVG reports.
//!
//! Settings resolve as defaults < `--config` JSON < flags. Exit codes: 0 on
//! success, 1 for usage or configuration errors, 2 for data errors.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::analyze::{self, export, AnalyzeError, HeadKind, Query};
use crate::config::{BoundsChoice, ConfigError, RunConfig};
use crate::datagen::{self, DatagenError};
use crate::embed::{self, EmbedError};
use crate::ingest::{self, IngestError, ValidationPolicy};
use crate::manifest::{CommandRecord, Manifest};
use crate::report::{self, ColorBy, ReportError};
use crate::sae::{self, ArchSpec, SaeError};
use crate::tensorize::{self, format, CountScaling, EventTensor, ModalityTransform, TensorError, TensorKind};

#[derive(Debug, Parser)]
#[command(name = "eventcube", version, about = "Event time series → tensors → sparse autoencoder latents → analysis")]
pub struct Cli {
    /// JSON run configuration; unknown keys are rejected.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed for every stochastic step.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Run directory for all outputs and the manifest.
    #[arg(long, global = true, default_value = "run")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labeled four-class synthetic dataset.
    Gen(GenArgs),
    /// Bin every catalog series into an E–t map or E–t–dt cube.
    Tensorize(TensorizeArgs),
    /// Train the sparse autoencoder on a tensor directory.
    Train(TrainArgs),
    /// Encode catalog tensors into latent vectors.
    Encode(EncodeArgs),
    /// Project latents to 2D with t-SNE.
    Project(ProjectArgs),
    /// DBSCAN on the latent space.
    Cluster(ClusterArgs),
    /// Nearest neighbors in latent space.
    Knn(KnnArgs),
    /// Anomaly scores: mean distance to the k nearest latents.
    Score(ScoreArgs),
    /// Fit a boosted-tree head on latents (80/20 split).
    FitHead(FitHeadArgs),
    /// Render SVG figures.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Series per class.
    #[arg(long)]
    pub per_class: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TransformArg {
    Log10,
    Identity,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BoundsArg {
    Dataset,
    PerSeries,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScalingArg {
    Raw,
    UnitSum,
    Log1p,
}

#[derive(Debug, Args)]
pub struct TensorizeArgs {
    #[arg(long)]
    pub catalog: PathBuf,
    /// `n_tau,n_eps` for maps or `n_tau,n_eps,n_dtau` for cubes.
    #[arg(long)]
    pub dims: Option<String>,
    #[arg(long, value_enum)]
    pub transform: Option<TransformArg>,
    #[arg(long, value_enum)]
    pub bounds: Option<BoundsArg>,
    #[arg(long, value_enum)]
    pub scaling: Option<ScalingArg>,
    /// Map single-event series to the origin instead of failing.
    #[arg(long)]
    pub lenient: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory of tensor files (default: `<out>/tensors`).
    #[arg(long)]
    pub tensors: Option<PathBuf>,
    /// Architecture JSON; defaults to the standard network for the tensor kind.
    #[arg(long)]
    pub arch: Option<PathBuf>,
    #[arg(long)]
    pub bottleneck: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub plateau_factor: Option<f64>,
    #[arg(long)]
    pub plateau_patience: Option<usize>,
    #[arg(long)]
    pub early_stop_patience: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[arg(long)]
    pub catalog: PathBuf,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub tensors: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    #[arg(long)]
    pub latents: Option<PathBuf>,
    #[arg(long)]
    pub perplexity: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub early_exaggeration: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub latents: Option<PathBuf>,
    /// Neighborhood radius; picked from the k-distance knee when omitted.
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub min_pts: Option<usize>,
}

#[derive(Debug, Args)]
pub struct KnnArgs {
    #[arg(long)]
    pub latents: Option<PathBuf>,
    /// Series id to query; repeatable.
    #[arg(long)]
    pub query: Vec<String>,
    /// Query every series.
    #[arg(long)]
    pub all: bool,
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub latents: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HeadTarget {
    /// Binary: variability index > 6.
    Variability,
    /// Regression on the hardness ratio.
    Hardness,
}

#[derive(Debug, Args)]
pub struct FitHeadArgs {
    #[arg(long)]
    pub latents: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub target: HeadTarget,
    #[arg(long)]
    pub n_estimators: Option<usize>,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub embedding: Option<PathBuf>,
    /// Cluster CSV (default: `<out>/clusters.csv` when present).
    #[arg(long)]
    pub clusters: Option<PathBuf>,
    /// `cluster`, `class_tag`, `variability_index`, `hardness_ratio` or `none`.
    #[arg(long)]
    pub color_by: Option<String>,
    /// Event CSV to draw as a light curve; repeatable.
    #[arg(long)]
    pub series: Vec<PathBuf>,
    #[arg(long)]
    pub bin_seconds: Option<f64>,
    /// E–t map tensor drawn under the light curve (single `--series` only).
    #[arg(long)]
    pub map: Option<PathBuf>,
    /// Cube tensor rendered as a slice mosaic; repeatable.
    #[arg(long)]
    pub cube: Vec<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

macro_rules! data_errors {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Data(e.to_string())
            }
        }
    )*};
}
data_errors!(IngestError, DatagenError, EmbedError, std::io::Error, csv::Error);

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        match e {
            TensorError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<SaeError> for CliError {
    fn from(e: SaeError) -> Self {
        match e {
            SaeError::InvalidConfig(_) | SaeError::ShapeInferenceFailure(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<AnalyzeError> for CliError {
    fn from(e: AnalyzeError) -> Self {
        match e {
            AnalyzeError::InvalidParameter(_) | AnalyzeError::UnknownId(_) | AnalyzeError::KTooLarge { .. } => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::UnknownColumn(_) | ReportError::InvalidBinWidth(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

/// Parse arguments, run the command and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let seed = cli.seed.or(cfg.seed).unwrap_or(0);
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(CliError::Usage("--workers must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| CliError::Usage(e.to_string()))?;
    let ctx = Ctx {
        cfg,
        seed,
        out: cli.out.clone(),
    };
    pool.install(|| match &cli.command {
        Command::Gen(a) => gen(&ctx, a),
        Command::Tensorize(a) => tensorize_cmd(&ctx, a),
        Command::Train(a) => train_cmd(&ctx, a),
        Command::Encode(a) => encode_cmd(&ctx, a),
        Command::Project(a) => project_cmd(&ctx, a),
        Command::Cluster(a) => cluster_cmd(&ctx, a),
        Command::Knn(a) => knn_cmd(&ctx, a),
        Command::Score(a) => score_cmd(&ctx, a),
        Command::FitHead(a) => fit_head_cmd(&ctx, a),
        Command::Report(a) => report_cmd(&ctx, a),
    })
}

struct Ctx {
    cfg: RunConfig,
    seed: u64,
    out: PathBuf,
}

impl Ctx {
    fn out_dir(&self) -> Result<&Path, CliError> {
        fs::create_dir_all(&self.out).map_err(|e| CliError::Data(format!("{}: {e}", self.out.display())))?;
        Ok(&self.out)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn or_default(&self, given: &Option<PathBuf>, name: &str) -> PathBuf {
        given.clone().unwrap_or_else(|| self.path(name))
    }

    fn finish(&self, command: &str, record: CommandRecord) -> Result<(), CliError> {
        Manifest::record(&self.out, command, record)?;
        log::info!("{command}: done, outputs in {}", self.out.display());
        Ok(())
    }
}

fn require_file(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Data(format!("{}: no such file", path.display())))
    }
}

/// File name for a series id: anything outside `[A-Za-z0-9._-]` becomes `_`.
pub fn file_stem(series_id: &str) -> String {
    series_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') { c } else { '_' })
        .collect()
}

fn tensor_ext(kind: TensorKind) -> &'static str {
    match kind {
        TensorKind::Map => "etmp",
        TensorKind::Cube => "etdt",
    }
}

fn gen(ctx: &Ctx, a: &GenArgs) -> Result<(), CliError> {
    let per_class = a.per_class.unwrap_or(ctx.cfg.gen.per_class);
    if per_class == 0 {
        return Err(CliError::Usage("--per-class must be at least 1".into()));
    }
    let out = ctx.out_dir()?;
    let catalog = datagen::generate_dataset(&datagen::four_class_spec(per_class), out, ctx.seed)?;
    let mut rec = CommandRecord::new(ctx.seed, json!({ "per_class": per_class }));
    rec.output(out, &out.join("catalog.jsonl"))?;
    for e in &catalog.entries {
        rec.output(&out.canonicalize()?, &e.file_path)?;
    }
    ctx.finish("gen", rec)
}

fn parse_dims(s: &str) -> Result<Vec<usize>, CliError> {
    let dims = s
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| CliError::Usage(format!("--dims {s:?}: expected comma-separated sizes")))?;
    if !(2..=3).contains(&dims.len()) || dims.contains(&0) {
        return Err(CliError::Usage(format!("--dims {s:?}: need two or three positive sizes")));
    }
    Ok(dims)
}

fn tensorize_cmd(ctx: &Ctx, a: &TensorizeArgs) -> Result<(), CliError> {
    let mut section = ctx.cfg.binning;
    if let Some(d) = &a.dims {
        let dims = parse_dims(d)?;
        section.n_tau = dims[0];
        section.n_eps = dims[1];
        section.n_dtau = dims.get(2).copied().unwrap_or(0);
    }
    if let Some(t) = a.transform {
        section.modality_transform = match t {
            TransformArg::Log10 => ModalityTransform::Log10,
            TransformArg::Identity => ModalityTransform::Identity,
        };
    }
    if let Some(b) = a.bounds {
        section.bounds = match b {
            BoundsArg::Dataset => BoundsChoice::Dataset,
            BoundsArg::PerSeries => BoundsChoice::PerSeries,
        };
    }
    if let Some(s) = a.scaling {
        section.count_scaling = match s {
            ScalingArg::Raw => CountScaling::Raw,
            ScalingArg::UnitSum => CountScaling::UnitSum,
            ScalingArg::Log1p => CountScaling::Log1p,
        };
    }
    if a.lenient {
        section.strict = false;
    }
    section.to_config(None).validate()?;

    let catalog = ingest::load_catalog(&a.catalog)?;
    let policy = ValidationPolicy {
        min_events: if section.strict { 2 } else { 1 },
        require_positive_modality: section.modality_transform == ModalityTransform::Log10,
    };
    let series = catalog.load_series(&policy)?;
    let dataset = match section.bounds {
        BoundsChoice::Dataset => tensorize::dataset_bounds(&series, section.modality_transform),
        _ => None,
    };
    let cfg = section.to_config(dataset);
    cfg.validate()?;
    let tensors = tensorize::tensorize_all(&series, &cfg)?;

    let dir = ctx.out_dir()?.join("tensors");
    fs::create_dir_all(&dir)?;
    let mut rec = CommandRecord::new(ctx.seed, json!({ "binning": cfg }));
    rec.input(&a.catalog)?;
    let mut seen = HashMap::new();
    for (t, entry) in tensors.iter().zip(&catalog.entries) {
        let stem = file_stem(&t.series_id);
        if let Some(other) = seen.insert(stem.clone(), t.series_id.clone()) {
            return Err(CliError::Data(format!(
                "series ids {other:?} and {:?} map to the same file name",
                t.series_id
            )));
        }
        rec.input(&entry.file_path)?;
        let path = dir.join(format!("{stem}.{}", tensor_ext(t.kind)));
        format::write_tensor(t, &path)?;
        rec.output(&ctx.out, &path)?;
    }
    log::info!("wrote {} tensors with dims {:?}", tensors.len(), cfg.dims());
    ctx.finish("tensorize", rec)
}

/// Every `.etdt` / `.etmp` file in `dir`, sorted by file name.
pub fn load_tensor_dir(dir: &Path) -> Result<Vec<(PathBuf, EventTensor)>, CliError> {
    let listing = fs::read_dir(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = listing
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "etdt" || x == "etmp"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let t = format::read_tensor(&p)?;
            Ok((p, t))
        })
        .collect()
}

/// Standard network for the tensor shape: dense for cubes, convolutional for maps.
pub fn default_arch(kind: TensorKind, dims: &[usize], bottleneck: Option<usize>) -> ArchSpec {
    match kind {
        TensorKind::Cube => ArchSpec::cube_dense([dims[0], dims[1], dims[2]], bottleneck.unwrap_or(24)),
        TensorKind::Map => ArchSpec::map_conv([dims[0], dims[1]], bottleneck.unwrap_or(12)),
    }
}

fn train_cmd(ctx: &Ctx, a: &TrainArgs) -> Result<(), CliError> {
    let mut tc = ctx.cfg.train;
    tc.seed = ctx.seed;
    if let Some(v) = a.lambda {
        tc.lambda = v;
    }
    if let Some(v) = a.batch_size {
        tc.batch_size = v;
    }
    if let Some(v) = a.epochs {
        tc.max_epochs = v;
    }
    if let Some(v) = a.lr {
        tc.lr = v;
    }
    if let Some(v) = a.plateau_factor {
        tc.plateau_factor = v;
    }
    if let Some(v) = a.plateau_patience {
        tc.plateau_patience = v;
    }
    if let Some(v) = a.early_stop_patience {
        tc.early_stop_patience = v;
    }
    tc.validate()?;
    let arch_file = match &a.arch {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            Some(serde_json::from_str::<ArchSpec>(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?)
        }
        None => ctx.cfg.arch.clone(),
    };
    if let Some(arch) = &arch_file {
        arch.plan()?;
    }

    let dir = ctx.or_default(&a.tensors, "tensors");
    let loaded = if dir.is_dir() { load_tensor_dir(&dir)? } else { Vec::new() };
    if loaded.is_empty() {
        return Err(SaeError::EmptySplit("train").into());
    }
    let first = &loaded[0].1;
    let arch = arch_file.unwrap_or_else(|| default_arch(first.kind, &first.dims, a.bottleneck));
    let (train_idx, val_idx, test_idx) = ingest::split_indices(loaded.len(), ctx.seed);
    let pick = |idx: &[usize]| idx.iter().map(|&i| loaded[i].1.clone()).collect::<Vec<_>>();
    let (train, val, test) = (pick(&train_idx), pick(&val_idx), pick(&test_idx));
    log::info!(
        "training on {} / validating on {} / holding out {} tensors",
        train.len(),
        val.len(),
        test.len()
    );
    let outcome = sae::train(&train, &val, &arch, &tc)?;

    let out = ctx.out_dir()?;
    let mut rec = CommandRecord::new(ctx.seed, json!({ "arch": arch, "train": tc }));
    for (p, _) in &loaded {
        rec.input(p)?;
    }
    let ckpt = out.join("checkpoint.saec");
    sae::save_checkpoint(&outcome.model, None, Some(&tc), &ckpt)?;
    rec.output(out, &ckpt)?;

    let history = out.join("history.csv");
    let mut w = csv::Writer::from_path(&history)?;
    w.write_record(["epoch", "train_loss", "train_recon", "val_loss", "val_recon", "val_l1", "lr"])?;
    for r in &outcome.history {
        w.write_record([
            r.epoch.to_string(),
            format!("{:?}", r.train_loss),
            format!("{:?}", r.train_recon),
            format!("{:?}", r.val_loss),
            format!("{:?}", r.val_recon),
            format!("{:?}", r.val_l1),
            format!("{:?}", r.lr),
        ])?;
    }
    w.flush()?;
    drop(w);
    rec.output(out, &history)?;

    let ids = |idx: &[usize]| idx.iter().map(|&i| loaded[i].1.series_id.clone()).collect::<Vec<_>>();
    let test_loss = if test.is_empty() {
        None
    } else {
        let m = sae::TensorMatrix::from_tensors(&outcome.model, &test)?;
        Some(sae::evaluate(&outcome.model, &m, tc.batch_size, tc.lambda)?)
    };
    let summary = json!({
        "best_epoch": outcome.best_epoch,
        "epochs_run": outcome.history.len(),
        "stopped_early": outcome.stopped_early,
        "best_val_loss": outcome.history[outcome.best_epoch].val_loss,
        "test_loss": test_loss.map(|l| json!({"total": l.total, "recon_mse": l.recon_mse, "l1": l.l1_term})),
        "split": { "train": ids(&train_idx), "val": ids(&val_idx), "test": ids(&test_idx) },
    });
    let summary_path = out.join("train_summary.json");
    fs::write(&summary_path, serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n")?;
    rec.output(out, &summary_path)?;
    ctx.finish("train", rec)
}

fn encode_cmd(ctx: &Ctx, a: &EncodeArgs) -> Result<(), CliError> {
    let ckpt_path = ctx.or_default(&a.checkpoint, "checkpoint.saec");
    require_file(&ckpt_path)?;
    let ckpt = sae::load_checkpoint(&ckpt_path)?;
    let catalog = ingest::load_catalog(&a.catalog)?;
    let dir = ctx.or_default(&a.tensors, "tensors");
    let ext = if ckpt.model.arch.input_dims.len() == 3 { "etdt" } else { "etmp" };
    let mut rec = CommandRecord::new(ctx.seed, json!({ "checkpoint": ckpt_path.display().to_string() }));
    rec.input(&ckpt_path)?;
    rec.input(&a.catalog)?;
    let mut tensors = HashMap::new();
    for e in &catalog.entries {
        let p = dir.join(format!("{}.{ext}", file_stem(&e.series_id)));
        if p.is_file() {
            tensors.insert(e.series_id.clone(), format::read_tensor(&p)?);
            rec.input(&p)?;
        }
    }
    let latents = embed::extract_latents(&ckpt.model, &catalog, &tensors)?;
    let out = ctx.out_dir()?;
    let path = out.join("latents.csv");
    embed::write_latents_csv(&latents, &path)?;
    rec.output(out, &path)?;
    ctx.finish("encode", rec)
}

fn read_latents(ctx: &Ctx, given: &Option<PathBuf>, rec: &mut CommandRecord) -> Result<embed::LatentMatrix, CliError> {
    let path = ctx.or_default(given, "latents.csv");
    require_file(&path)?;
    rec.input(&path)?;
    Ok(embed::read_latents_csv(&path)?)
}

fn project_cmd(ctx: &Ctx, a: &ProjectArgs) -> Result<(), CliError> {
    let mut tc = ctx.cfg.tsne;
    tc.seed = ctx.seed;
    if let Some(v) = a.perplexity {
        tc.perplexity = v;
    }
    if let Some(v) = a.iterations {
        tc.iterations = v;
    }
    if let Some(v) = a.learning_rate {
        tc.learning_rate = v;
    }
    if let Some(v) = a.early_exaggeration {
        tc.early_exaggeration = v;
    }
    if !(tc.perplexity > 0.0) || tc.iterations == 0 || !(tc.learning_rate > 0.0) {
        return Err(CliError::Usage(format!("invalid t-SNE settings {tc:?}")));
    }
    let mut rec = CommandRecord::new(ctx.seed, json!({ "tsne": tc }));
    let latents = read_latents(ctx, &a.latents, &mut rec)?;
    let e = embed::tsne_project(&latents, &tc)?;
    let out = ctx.out_dir()?;
    let path = out.join("embedding.csv");
    embed::write_embedding_csv(&e, None, &path)?;
    rec.output(out, &path)?;
    let kl = out.join("kl_history.csv");
    let mut w = csv::Writer::from_path(&kl)?;
    w.write_record(["iteration", "kl"])?;
    for (i, v) in e.kl_history.iter().enumerate() {
        w.write_record([i.to_string(), format!("{v:?}")])?;
    }
    w.flush()?;
    drop(w);
    rec.output(out, &kl)?;
    ctx.finish("project", rec)
}

fn cluster_cmd(ctx: &Ctx, a: &ClusterArgs) -> Result<(), CliError> {
    let min_pts = a.min_pts.unwrap_or(ctx.cfg.cluster.min_pts);
    let eps_given = a.eps.or(ctx.cfg.cluster.eps);
    if min_pts == 0 || eps_given.is_some_and(|e| !(e > 0.0)) {
        return Err(CliError::Usage("need eps > 0 and min_pts >= 1".into()));
    }
    let mut rec = CommandRecord::new(ctx.seed, json!({ "eps": eps_given, "min_pts": min_pts }));
    let latents = read_latents(ctx, &a.latents, &mut rec)?;
    // min_pts counts the point itself, so its (min_pts - 1)-th other neighbor
    // decides whether it is a core point.
    let k = min_pts.saturating_sub(1).max(1);
    let kd = analyze::k_distances(&latents, k)?;
    let suggested = analyze::suggest_eps(&kd);
    let eps = match eps_given.or(suggested) {
        Some(e) => e,
        None => return Err(CliError::Data("all latents coincide; no radius can be suggested".into())),
    };
    let labels = analyze::dbscan(&latents, eps, min_pts)?;
    let out = ctx.out_dir()?;
    let path = out.join("clusters.csv");
    export::write_clusters_csv(&latents.ids, &labels, &path)?;
    rec.output(out, &path)?;
    let plot = out.join("k_distance.svg");
    report::write_svg(&report::k_distance_svg(&kd, k, Some(eps)), &plot)?;
    rec.output(out, &plot)?;
    let summary = json!({
        "eps": eps,
        "eps_source": if eps_given.is_some() { "given" } else { "k-distance knee" },
        "min_pts": min_pts,
        "n_clusters": labels.n_clusters(),
        "n_noise": labels.labels.iter().filter(|&&l| l < 0).count(),
        "sizes": labels.members().iter().map(Vec::len).collect::<Vec<_>>(),
    });
    let summary_path = out.join("cluster_summary.json");
    fs::write(&summary_path, serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n")?;
    rec.output(out, &summary_path)?;
    log::info!("{} clusters at eps {eps:.4}", labels.n_clusters());
    ctx.finish("cluster", rec)
}

fn knn_cmd(ctx: &Ctx, a: &KnnArgs) -> Result<(), CliError> {
    if a.query.is_empty() && !a.all {
        return Err(CliError::Usage("give --query <id> or --all".into()));
    }
    let k = a.k.unwrap_or(ctx.cfg.knn.k);
    let mut rec = CommandRecord::new(ctx.seed, json!({ "k": k, "query": a.query, "all": a.all }));
    let latents = read_latents(ctx, &a.latents, &mut rec)?;
    let ids: Vec<String> = if a.all { latents.ids.clone() } else { a.query.clone() };
    let lists = ids
        .iter()
        .map(|id| analyze::knn_query(&latents, Query::Id(id), k))
        .collect::<Result<Vec<_>, _>>()?;
    let out = ctx.out_dir()?;
    let path = out.join("neighbors.csv");
    export::write_neighbors_csv(&lists, &path)?;
    rec.output(out, &path)?;
    ctx.finish("knn", rec)
}

fn score_cmd(ctx: &Ctx, a: &ScoreArgs) -> Result<(), CliError> {
    let k = a.k.unwrap_or(ctx.cfg.score.k);
    let mut rec = CommandRecord::new(ctx.seed, json!({ "k": k }));
    let latents = read_latents(ctx, &a.latents, &mut rec)?;
    let scores = analyze::anomaly_scores(&latents, k)?;
    let out = ctx.out_dir()?;
    let path = out.join("scores.csv");
    export::write_values_csv(&latents.ids, "anomaly_score", &scores, &path)?;
    rec.output(out, &path)?;
    ctx.finish("score", rec)
}

fn fit_head_cmd(ctx: &Ctx, a: &FitHeadArgs) -> Result<(), CliError> {
    let mut hc = ctx.cfg.head;
    hc.seed = ctx.seed;
    if let Some(v) = a.n_estimators {
        hc.n_estimators = v;
    }
    if let Some(v) = a.max_depth {
        hc.max_depth = v;
    }
    if let Some(v) = a.learning_rate {
        hc.learning_rate = v;
    }
    if hc.n_estimators == 0 || !(hc.learning_rate > 0.0) {
        return Err(CliError::Usage(format!("invalid head settings {hc:?}")));
    }
    let name = match a.target {
        HeadTarget::Variability => "variability",
        HeadTarget::Hardness => "hardness",
    };
    let mut rec = CommandRecord::new(ctx.seed, json!({ "target": name, "head": hc }));
    let latents = read_latents(ctx, &a.latents, &mut rec)?;

    let (rows, y, kind): (Vec<usize>, Vec<f64>, HeadKind) = match a.target {
        HeadTarget::Variability => {
            let rows: Vec<usize> = (0..latents.n).filter(|&i| latents.labels[i].variability_index.is_some()).collect();
            let raw: Vec<f64> = rows.iter().map(|&i| latents.labels[i].variability_index.unwrap()).collect();
            let y = analyze::threshold_variability(&raw)?.into_iter().map(f64::from).collect();
            (rows, y, HeadKind::Classifier)
        }
        HeadTarget::Hardness => {
            let rows: Vec<usize> = (0..latents.n).filter(|&i| latents.labels[i].hardness_ratio.is_some()).collect();
            let y = rows.iter().map(|&i| latents.labels[i].hardness_ratio.unwrap()).collect();
            (rows, y, HeadKind::Regressor)
        }
    };
    if rows.len() < 5 {
        return Err(CliError::Data(format!("only {} rows carry the {name} label", rows.len())));
    }
    let sub = latents.select(&rows);
    let (train_idx, test_idx) = analyze::train_test_split(sub.n, hc.seed);
    let gather = |idx: &[usize]| -> (Vec<f64>, Vec<f64>) {
        (
            idx.iter().flat_map(|&i| sub.row(i).iter().copied()).collect(),
            idx.iter().map(|&i| y[i]).collect(),
        )
    };
    let (x_train, y_train) = gather(&train_idx);
    let (x_test, y_test) = gather(&test_idx);
    let model = analyze::fit_head(&x_train, sub.d, &y_train, kind, &hc)?;
    let pred_test = analyze::predict_head(&model, &x_test, sub.d)?;
    let metrics = match kind {
        HeadKind::Classifier => {
            let p: Vec<i64> = pred_test.iter().map(|&v| i64::from(v > 0.5)).collect();
            let t: Vec<i64> = y_test.iter().map(|&v| v as i64).collect();
            serde_json::to_value(analyze::classification_metrics(&p, &t)?).expect("metrics serialize")
        }
        HeadKind::Regressor => {
            serde_json::to_value(analyze::regression_metrics(&pred_test, &y_test)?).expect("metrics serialize")
        }
    };
    log::info!("{name} head test metrics: {metrics}");

    let out = ctx.out_dir()?;
    let model_path = out.join(format!("head_{name}.json"));
    fs::write(&model_path, serde_json::to_string(&model).expect("head serializes") + "\n")?;
    rec.output(out, &model_path)?;
    let metrics_path = out.join(format!("metrics_{name}.json"));
    let doc = json!({ "n_train": train_idx.len(), "n_test": test_idx.len(), "test": metrics });
    fs::write(&metrics_path, serde_json::to_string_pretty(&doc).expect("metrics serialize") + "\n")?;
    rec.output(out, &metrics_path)?;

    let all = analyze::predict_head(&model, &sub.rows, sub.d)?;
    let pred_path = out.join(format!("predictions_{name}.csv"));
    let mut w = csv::Writer::from_path(&pred_path)?;
    w.write_record(["series_id", "split", "truth", "prediction"])?;
    let mut split = vec!["train"; sub.n];
    for &i in &test_idx {
        split[i] = "test";
    }
    for i in 0..sub.n {
        w.write_record([sub.ids[i].clone(), split[i].to_string(), format!("{:?}", y[i]), format!("{:?}", all[i])])?;
    }
    w.flush()?;
    drop(w);
    rec.output(out, &pred_path)?;
    ctx.finish("fit-head", rec)
}

fn read_clusters(path: &Path, ids: &[String]) -> Result<Vec<i64>, CliError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut by_id = HashMap::new();
    for rec in r.records() {
        let rec = rec?;
        let id = rec.get(0).unwrap_or_default().to_string();
        let label = rec
            .get(1)
            .unwrap_or_default()
            .parse::<i64>()
            .map_err(|_| CliError::Data(format!("{}: bad cluster label for {id:?}", path.display())))?;
        by_id.insert(id, label);
    }
    ids.iter()
        .map(|id| {
            by_id
                .get(id)
                .copied()
                .ok_or_else(|| CliError::Data(format!("{}: no cluster for {id:?}", path.display())))
        })
        .collect()
}

fn report_cmd(ctx: &Ctx, a: &ReportArgs) -> Result<(), CliError> {
    let bin_seconds = a.bin_seconds.unwrap_or(ctx.cfg.report.bin_seconds);
    if !(bin_seconds > 0.0) {
        return Err(ReportError::InvalidBinWidth(bin_seconds).into());
    }
    if a.map.is_some() && a.series.len() != 1 {
        return Err(CliError::Usage("--map needs exactly one --series".into()));
    }
    let clusters_path = a.clusters.clone().or_else(|| {
        let p = ctx.path("clusters.csv");
        p.is_file().then_some(p)
    });
    let color_by = a
        .color_by
        .clone()
        .or_else(|| ctx.cfg.report.color_by.clone())
        .unwrap_or_else(|| if clusters_path.is_some() { "cluster" } else { "class_tag" }.to_string());
    if !matches!(
        color_by.as_str(),
        "cluster" | "class_tag" | "variability_index" | "hardness_ratio" | "none"
    ) {
        return Err(ReportError::UnknownColumn(color_by).into());
    }
    if color_by == "cluster" && clusters_path.is_none() {
        return Err(CliError::Usage("--color-by cluster needs a clusters CSV".into()));
    }
    let mut rec = CommandRecord::new(ctx.seed, json!({ "color_by": color_by, "bin_seconds": bin_seconds }));

    let embedding_path = ctx.or_default(&a.embedding, "embedding.csv");
    let want_scatter = a.embedding.is_some() || (a.series.is_empty() && a.cube.is_empty()) || embedding_path.is_file();
    let mut outputs = Vec::new();
    if want_scatter {
        require_file(&embedding_path)?;
        rec.input(&embedding_path)?;
        let e = embed::read_embedding_csv(&embedding_path)?;
        let clusters = match (&clusters_path, color_by.as_str()) {
            (Some(p), "cluster") => {
                rec.input(p)?;
                Some(read_clusters(p, &e.ids)?)
            }
            _ => None,
        };
        let by = match (color_by.as_str(), &clusters) {
            ("none", _) => ColorBy::None,
            ("cluster", Some(c)) => ColorBy::Clusters(c),
            (col, _) => ColorBy::Column(col),
        };
        let svg = report::scatter_svg(&e, by, &format!("t-SNE projection of latents, colored by {color_by}"))?;
        outputs.push(("report.svg".to_string(), svg));
    }
    for p in &a.series {
        let raw = ingest::parse_event_csv(p)?;
        rec.input(p)?;
        let series = ingest::validate_series(
            raw,
            &ValidationPolicy {
                min_events: 1,
                require_positive_modality: false,
            },
        )?;
        let map = match &a.map {
            Some(m) => {
                rec.input(m)?;
                Some(format::read_tensor(m)?)
            }
            None => None,
        };
        let svg = report::series_svg(&series, bin_seconds, map.as_ref())?;
        outputs.push((format!("series_{}.svg", file_stem(&series.series_id)), svg));
    }
    for p in &a.cube {
        rec.input(p)?;
        let t = format::read_tensor(p)?;
        outputs.push((format!("mosaic_{}.svg", file_stem(&t.series_id)), report::cube_mosaic_svg(&t)?));
    }
    let out = ctx.out_dir()?;
    for (name, svg) in outputs {
        let path = out.join(name);
        report::write_svg(&svg, &path)?;
        rec.output(out, &path)?;
    }
    ctx.finish("report", rec)
}

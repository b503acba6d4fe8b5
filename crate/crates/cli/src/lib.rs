//! The `icad` command line. Every command is deterministic under a fixed
//! seed and writes its artifacts below the output directory only.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use icad_core::evaluation::{evaluate, score_test_split, sweep_k};
use icad_core::ingest::{load_dataset_with_miner, Manifest};
use icad_core::log_miner::read_inventory;
use icad_core::metrics::score_histogram;
use icad_core::synthgen::{generate, write_task, SynthSpec};
use icad_core::trainer::{load_checkpoint, save_checkpoint};
use icad_core::{
    DatasetHandle, IcadError, IcadModel, MetricKind, MinerConfig, Modality, ModelConfig, ScheduleMode, Template,
    TemplateMiner, TrainConfig, Trainer,
};
use serde::{Deserialize, Serialize};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const RUN_CONFIG_FILE: &str = "run_config.toml";
pub const PREPARED_DIR: &str = "prepared";
pub const SYNTH_DIR: &str = "data";
pub const DEFAULT_OUT: &str = "icad-out";

// ------------------------------------------------------------------ errors

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or configuration.
    Usage(String),
    Core(IcadError),
}

impl CliError {
    /// 1 usage or config, 2 data, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Core(IcadError::Config(_)) => 1,
            CliError::Core(IcadError::Numeric(_)) => 3,
            CliError::Core(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<IcadError> for CliError {
    fn from(e: IcadError) -> Self {
        CliError::Core(e)
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Core(IcadError::io(path, e))
}

// ------------------------------------------------------------------ config

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub k: usize,
    pub ref_seed: u64,
    /// Overrides the modality default with a warning.
    pub metric: Option<MetricKind>,
    pub k_list: Vec<usize>,
    /// Flag threshold used by `score`.
    pub threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k: 5,
            ref_seed: 0,
            metric: None,
            k_list: vec![1, 2, 3, 5, 7, 10],
            threshold: 0.5,
        }
    }
}

/// Everything a run needs, read from one TOML file. Unknown keys are
/// rejected. Relative manifest paths resolve against the file's directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub manifests: Vec<PathBuf>,
    /// Overrides `train.mode`.
    pub mode: Option<ScheduleMode>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn read(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for m in cfg.manifests.iter_mut() {
            if m.is_relative() {
                *m = base.join(&*m);
            }
        }
        Ok(cfg)
    }

    /// Apply command-line overrides and check every section.
    pub fn resolve(mut self, seed: Option<u64>, out: Option<PathBuf>) -> CliResult<Self> {
        if let Some(s) = seed.or(self.seed) {
            self.seed = Some(s);
            self.train.seed = s;
        }
        if let Some(m) = self.mode {
            self.train.mode = m;
        }
        self.out = Some(out.or(self.out).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)));
        self.model.validate()?;
        self.train.validate()?;
        if self.eval.k == 0 || self.eval.k_list.contains(&0) {
            return Err(CliError::Usage("reference sizes must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.eval.threshold) {
            return Err(CliError::Usage(format!(
                "threshold {} outside [0, 1]",
                self.eval.threshold
            )));
        }
        Ok(self)
    }

    pub fn out_dir(&self) -> &Path {
        self.out.as_deref().unwrap_or(Path::new(DEFAULT_OUT))
    }
}

// --------------------------------------------------------------------- args

#[derive(Debug, Parser)]
#[command(
    name = "icad",
    version,
    about = "In-context anomaly detection across time series, tables and logs"
)]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed overriding the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory for every artifact.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic tasks as manifests plus data files.
    Synth(SynthArgs),
    /// Load manifests and persist the prepared datasets.
    Prep(DataArgs),
    /// Mine raw log files into template-id sequences plus one inventory.
    PrepLogs(PrepLogsArgs),
    /// Train a model on the configured manifests.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test split of each dataset.
    Eval(EvalArgs),
    /// Write per-sample discrepancy scores.
    Score(ScoreArgs),
    /// Evaluate one model at several reference-set sizes.
    SweepK(SweepArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Tasks per modality.
    #[arg(long, default_value_t = 3)]
    pub tasks: usize,
    /// Restrict to these modalities (time_series, tabular, log).
    #[arg(long, value_parser = parse_modality)]
    pub modality: Vec<Modality>,
    /// Keep anomalies out of the train split.
    #[arg(long)]
    pub no_train_anomalies: bool,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Manifests (`.toml`) or prepared datasets (`.json`); defaults to the
    /// configured manifests.
    pub manifests: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PrepLogsArgs {
    /// Raw log files, one message per line.
    #[arg(required = true)]
    pub logs: Vec<PathBuf>,
    /// Inventory to start from, so ids stay aligned with earlier runs.
    #[arg(long)]
    pub inventory: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Continue from this checkpoint up to the configured epoch count.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub metric: Option<MetricKind>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Also write an equal-width score histogram with this many bins.
    #[arg(long)]
    pub histogram: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Model to sweep; without it a model is trained from the configuration.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_delimiter = ',')]
    pub k_list: Vec<usize>,
    #[arg(long)]
    pub metric: Option<MetricKind>,
}

fn parse_modality(s: &str) -> Result<Modality, String> {
    Modality::ALL
        .into_iter()
        .find(|m| m.name() == s.replace('-', "_"))
        .ok_or_else(|| format!("unknown modality {s:?}"))
}

// --------------------------------------------------------------------- data

/// Datasets plus the template inventory their log ids refer to.
pub struct Loaded {
    pub datasets: Vec<DatasetHandle>,
    pub inventory: Option<Vec<Template>>,
}

fn first_log_inventory(paths: &[PathBuf]) -> CliResult<Option<Vec<Template>>> {
    for p in paths.iter().filter(|p| !is_prepared(p)) {
        let m = Manifest::read(p)?;
        if let (Modality::Log, Some(inv)) = (m.modality, &m.inventory_path) {
            let base = p.parent().unwrap_or(Path::new("."));
            let path = if inv.is_absolute() { inv.clone() } else { base.join(inv) };
            return Ok(Some(read_inventory(&path)?));
        }
    }
    Ok(None)
}

fn is_prepared(p: &Path) -> bool {
    p.extension().is_some_and(|e| e == "json")
}

/// Load every input. Log manifests share one miner, seeded from `inventory`
/// when given and otherwise from the first log manifest's inventory file.
pub fn load_inputs(paths: &[PathBuf], inventory: Option<Vec<Template>>) -> CliResult<Loaded> {
    if paths.is_empty() {
        return Err(CliError::Usage("no manifests given".into()));
    }
    let seed = match inventory {
        Some(inv) => Some(inv),
        None => first_log_inventory(paths)?,
    };
    let mut miner = match seed {
        Some(inv) => TemplateMiner::from_inventory(MinerConfig::default(), inv)?,
        None => TemplateMiner::default(),
    };
    let mut datasets = Vec::new();
    for p in paths {
        let handle = if is_prepared(p) {
            let text = fs::read_to_string(p).map_err(io_err(p))?;
            serde_json::from_str(&text).map_err(|e| CliError::Core(IcadError::Data(format!("{}: {e}", p.display()))))?
        } else {
            load_dataset_with_miner(p, &mut miner)?
        };
        datasets.push(handle);
    }
    let has_logs = datasets.iter().any(|d| d.modality == Modality::Log);
    Ok(Loaded {
        datasets,
        inventory: (has_logs && !miner.is_empty()).then(|| miner.templates().to_vec()),
    })
}

fn inputs<'a>(args: &'a DataArgs, cfg: &'a RunConfig) -> &'a [PathBuf] {
    if args.manifests.is_empty() {
        &cfg.manifests
    } else {
        &args.manifests
    }
}

fn create_out(cfg: &RunConfig) -> CliResult<PathBuf> {
    let out = cfg.out_dir().to_path_buf();
    fs::create_dir_all(&out).map_err(io_err(&out))?;
    Ok(out)
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(io_err(path))
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("plain data serializes")
}

// ----------------------------------------------------------------- commands

/// Parse, configure and run one command, writing structured text to `out`.
pub fn run(cli: Cli, stdout: &mut dyn Write) -> CliResult<()> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::read(p)?,
        None => RunConfig::default(),
    };
    let cfg = cfg.resolve(cli.seed, cli.out)?;
    let mut emit = |line: String| writeln!(stdout, "{line}").map_err(|e| CliError::Core(IcadError::io("<stdout>", e)));
    match cli.command {
        Command::Synth(a) => cmd_synth(&a, &cfg, &mut emit),
        Command::Prep(a) => cmd_prep(&a, &cfg, &mut emit),
        Command::PrepLogs(a) => cmd_prep_logs(&a, &cfg, &mut emit),
        Command::Train(a) => cmd_train(&a, &cfg, &mut emit).map(|_| ()),
        Command::Eval(a) => cmd_eval(&a, &cfg, &mut emit),
        Command::Score(a) => cmd_score(&a, &cfg, &mut emit),
        Command::SweepK(a) => cmd_sweep_k(&a, &cfg, &mut emit),
    }
}

type Emit<'a> = dyn FnMut(String) -> CliResult<()> + 'a;

#[derive(Serialize)]
struct Written<'a> {
    dataset_id: &'a str,
    modality: Modality,
    path: &'a Path,
}

fn cmd_synth(a: &SynthArgs, cfg: &RunConfig, emit: &mut Emit<'_>) -> CliResult<()> {
    if a.tasks == 0 {
        return Err(CliError::Usage("--tasks must be >= 1".into()));
    }
    let dir = create_out(cfg)?.join(SYNTH_DIR);
    let seed = cfg.seed.unwrap_or(cfg.train.seed);
    let modalities = if a.modality.is_empty() {
        Modality::ALL.to_vec()
    } else {
        a.modality.clone()
    };
    for m in modalities {
        for t in 0..a.tasks {
            let mut spec = SynthSpec::new(m, t, seed);
            spec.train_anomalies = !a.no_train_anomalies;
            let task = generate(&spec)?;
            let path = write_task(&task, &dir)?;
            emit(json(&Written {
                dataset_id: &spec.dataset_id(),
                modality: m,
                path: &path,
            }))?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct Prepared<'a> {
    dataset_id: &'a str,
    modality: Modality,
    train_normals: usize,
    train_anomalies: usize,
    test: usize,
    path: PathBuf,
}

fn cmd_prep(a: &DataArgs, cfg: &RunConfig, emit: &mut Emit<'_>) -> CliResult<()> {
    let loaded = load_inputs(inputs(a, cfg), None)?;
    let dir = create_out(cfg)?.join(PREPARED_DIR);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    for d in &loaded.datasets {
        let path = dir.join(format!("{}.json", d.dataset_id));
        write_file(&path, &json(d))?;
        emit(json(&Prepared {
            dataset_id: &d.dataset_id,
            modality: d.modality,
            train_normals: d.train_normals.len(),
            train_anomalies: d.train_anomalies.len(),
            test: d.test.len(),
            path,
        }))?;
    }
    if let Some(inv) = &loaded.inventory {
        let path = dir.join(INVENTORY_FILE);
        let text: String = inv.iter().map(|t| json(t) + "\n").collect();
        write_file(&path, &text)?;
    }
    Ok(())
}

pub const INVENTORY_FILE: &str = "templates.jsonl";

fn cmd_prep_logs(a: &PrepLogsArgs, cfg: &RunConfig, emit: &mut Emit<'_>) -> CliResult<()> {
    let mut miner = match &a.inventory {
        Some(p) => TemplateMiner::from_inventory(MinerConfig::default(), read_inventory(p)?)?,
        None => TemplateMiner::default(),
    };
    let out = create_out(cfg)?;
    #[derive(Serialize)]
    struct Mined<'a> {
        input: &'a Path,
        ids: PathBuf,
        lines: usize,
        templates: usize,
    }
    for path in &a.logs {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let lines: Vec<&str> = text.lines().collect();
        let ids = miner.parse_lines(&lines);
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("log");
        let ids_path = out.join(format!("{stem}.ids"));
        let body: String = ids.iter().map(|i| format!("{i}\n")).collect();
        write_file(&ids_path, &body)?;
        emit(json(&Mined {
            input: path,
            ids: ids_path,
            lines: lines.len(),
            templates: miner.len(),
        }))?;
    }
    miner.save_inventory(&out.join(INVENTORY_FILE))?;
    Ok(())
}

fn cmd_train(a: &TrainArgs, cfg: &RunConfig, emit: &mut Emit<'_>) -> CliResult<Trainer> {
    let out = create_out(cfg)?;
    let mut trainer = match &a.resume {
        Some(p) => {
            let mut t = Trainer::from_checkpoint(&load_checkpoint(p)?)?;
            t.config.epochs = cfg.train.epochs;
            t
        }
        None => Trainer::new(cfg.model.clone(), cfg.train.clone())?,
    };
    let loaded = load_inputs(inputs(&a.data, cfg), trainer.inventory.clone())?;
    if trainer.inventory.is_none() {
        trainer.inventory = loaded.inventory;
    }
    let toml_text = toml::to_string(cfg).map_err(|e| CliError::Usage(format!("config does not serialize: {e}")))?;
    write_file(&out.join(RUN_CONFIG_FILE), &toml_text)?;
    let log_path = out.join(TRAIN_LOG_FILE);
    let mut log = Vec::new();
    let stats = trainer.fit(&loaded.datasets, Some(&mut log))?;
    write_file(&log_path, &String::from_utf8(log).expect("json is utf-8"))?;
    let ckpt_path = out.join(CHECKPOINT_FILE);
    save_checkpoint(&trainer.checkpoint(), &ckpt_path)?;
    #[derive(Serialize)]
    struct Done<'a> {
        checkpoint: &'a Path,
        train_log: &'a Path,
        steps: u64,
        epochs_run: usize,
        final_loss: Option<f64>,
    }
    emit(json(&Done {
        checkpoint: &ckpt_path,
        train_log: &log_path,
        steps: trainer.step(),
        epochs_run: stats.len(),
        final_loss: stats.last().map(|s| s.mean_loss),
    }))?;
    Ok(trainer)
}

fn load_model(path: &Path) -> CliResult<(IcadModel<f32>, Option<Vec<Template>>)> {
    let ckpt = load_checkpoint(path)?;
    Ok((ckpt.model()?, ckpt.inventory))
}

fn cmd_eval(a: &EvalArgs, cfg: &RunConfig, emit: &mut Emit<'_>) -> CliResult<()> {
    let (model, inventory) = load_model(&a.checkpoint)?;
    let loaded = load_inputs(inputs(&a.data, cfg), inventory)?;
    let k = a.k.unwrap_or(cfg.eval.k);
    let metric = a.metric.or(cfg.eval.metric);
    let out = create_out(cfg)?;
    let mut reports = Vec::new();
    for d in &loaded.datasets {
        let r = evaluate(&model, d, k, cfg.eval.ref_seed, metric)?;
        emit(json(&r))?;
        reports.push(r);
        if let Some(bins) = a.histogram {
            let scores: Vec<f64> = score_test_split(&model, d, k, cfg.eval.ref_seed)?
                .into_iter()
                .map(|s| s.value)
                .collect();
            let mut table = String::from("lower\tnormal\tanomaly\n");
            for (lo, n, an) in score_histogram(&scores, &d.test_labels(), bins) {
                table += &format!("{lo:.6}\t{n}\t{an}\n");
            }
            write_file(&out.join(format!("hist-{}.tsv", d.dataset_id)), &table)?;
        }
    }
    write_file(&out.join("eval.json"), &json(&reports))
}

#[derive(Serialize)]
struct ScoreLine<'a> {
    dataset_id: &'a str,
    sample_index: usize,
    score: f64,
    flagged: bool,
    label: u8,
    reference_id: &'a str,
}

fn cmd_score(a: &ScoreArgs, cfg: &RunConfig, emit: &mut Emit<'_>) -> CliResult<()> {
    let (model, inventory) = load_model(&a.checkpoint)?;
    let loaded = load_inputs(inputs(&a.data, cfg), inventory)?;
    let k = a.k.unwrap_or(cfg.eval.k);
    let threshold = a.threshold.unwrap_or(cfg.eval.threshold);
    if !(0.0..=1.0).contains(&threshold) {
        return Err(CliError::Usage(format!("threshold {threshold} outside [0, 1]")));
    }
    let out = create_out(cfg)?;
    for d in &loaded.datasets {
        let scores = score_test_split(&model, d, k, cfg.eval.ref_seed)?;
        let mut text = String::new();
        for (s, x) in scores.iter().zip(&d.test) {
            text += &json(&ScoreLine {
                dataset_id: &d.dataset_id,
                sample_index: s.sample_index,
                score: s.value,
                flagged: s.value >= threshold,
                label: x.label,
                reference_id: &s.reference_id,
            });
            text.push('\n');
        }
        let path = out.join(format!("scores-{}.jsonl", d.dataset_id));
        write_file(&path, &text)?;
        emit(json(&Written {
            dataset_id: &d.dataset_id,
            modality: d.modality,
            path: &path,
        }))?;
    }
    Ok(())
}

fn cmd_sweep_k(a: &SweepArgs, cfg: &RunConfig, emit: &mut Emit<'_>) -> CliResult<()> {
    let ks = if a.k_list.is_empty() {
        cfg.eval.k_list.clone()
    } else {
        a.k_list.clone()
    };
    if ks.is_empty() || ks.contains(&0) {
        return Err(CliError::Usage("--k-list needs reference sizes >= 1".into()));
    }
    let (model, inventory) = match &a.checkpoint {
        Some(p) => load_model(p)?,
        None => {
            let args = TrainArgs {
                data: DataArgs {
                    manifests: cfg.manifests.clone(),
                },
                resume: None,
            };
            let t = cmd_train(&args, cfg, emit)?;
            (t.model, t.inventory)
        }
    };
    let loaded = load_inputs(inputs(&a.data, cfg), inventory)?;
    let metric = a.metric.or(cfg.eval.metric);
    let rows = sweep_k(&model, &loaded.datasets, &ks, cfg.eval.ref_seed, metric)?;
    let mut table = String::from("k\tmean");
    for d in &loaded.datasets {
        table += &format!("\t{}", d.dataset_id);
    }
    table.push('\n');
    for r in &rows {
        table += &format!("{}\t{:.6}", r.k, r.mean);
        for rep in &r.reports {
            table += &format!("\t{:.6}", rep.value);
        }
        table.push('\n');
    }
    write_file(&create_out(cfg)?.join("sweep_k.tsv"), &table)?;
    for line in table.lines() {
        emit(line.to_string())?;
    }
    Ok(())
}

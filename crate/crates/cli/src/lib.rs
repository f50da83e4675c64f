//! Command-line driver: argument and config-file handling plus one function
//! per subcommand. `main.rs` only forwards `std::env::args` to [`run`].

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use hgt_core::embedding_store::{
    load_image_records, load_text_table, save_image_records, save_text_table,
};
use hgt_core::eval_report::{
    self, render_table, to_csv, DataRefs, EvalResult, SweepAxis, SweepRow,
};
use hgt_core::synth::{self, SynthSpec};
use hgt_core::trainer::{self, load_checkpoint, save_checkpoint, FitResult, GradReport};
use hgt_core::{
    Activation, HierGraph, ImageFeatures, Init, ModelState, Pipeline, Strategy, Taxonomy,
    TextTable, Toggles, TrainConfig, Variant,
};

pub const TAXONOMY_FILE: &str = "taxonomy.txt";
pub const TEXT_FILE: &str = "text.hgeb";
pub const TRAIN_FILE: &str = "train.hgeb";
pub const TEST_FILE: &str = "test.hgeb";
pub const CHECKPOINT_FILE: &str = "model.hgck";

#[derive(Debug, Parser)]
#[command(
    name = "hgt",
    version,
    about = "Hierarchy-graph enhanced multi-level classification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Subcommand)]
enum Command {
    /// Generate a seeded synthetic taxonomy, text table and train/test images.
    Synth {
        #[command(flatten)]
        io: IoOpts,
        #[command(flatten)]
        spec: SynthOpts,
    },
    /// Train a model and write its checkpoint, loss log and test metrics.
    Train {
        #[command(flatten)]
        io: IoOpts,
        #[command(flatten)]
        train: TrainOpts,
    },
    /// Evaluate a checkpoint on the test images.
    Eval {
        #[command(flatten)]
        io: IoOpts,
        #[command(flatten)]
        train: TrainOpts,
    },
    /// Train and evaluate one model per value of a configuration axis.
    Sweep {
        #[command(flatten)]
        io: IoOpts,
        #[command(flatten)]
        train: TrainOpts,
        /// Axis to sweep: depth (1..5), variant (gcn, gat, sage) or toggles (9-row grid).
        #[arg(long, default_value = "depth")]
        axis: String,
    },
    /// Compare analytic and finite-difference gradients on a few training images.
    Gradcheck {
        #[command(flatten)]
        io: IoOpts,
        #[command(flatten)]
        train: TrainOpts,
        /// Number of training images in the checked batch.
        #[arg(long, default_value_t = 4)]
        samples: usize,
    },
}

/// Paths and process settings shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct IoOpts {
    /// Taxonomy file [default: <embeddings>/taxonomy.txt].
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    /// Directory holding text.hgeb, train.hgeb and test.hgeb.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Checkpoint file [default: <out>/model.hgck].
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads [default: available cores].
    #[arg(long, env = "HGT_THREADS")]
    pub threads: Option<usize>,
    /// Line-oriented `key = value` file; command-line flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainOpts {
    /// Initial learning rate.
    #[arg(long, default_value = "3e-4")]
    pub lr: f64,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    /// Minibatch size.
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    /// Weight of the prompted-global similarity term.
    #[arg(long, default_value = "1")]
    pub lambda1: f64,
    /// Weight of the prototype-fused similarity term.
    #[arg(long, default_value = "0.2")]
    pub lambda2: f64,
    /// Attention temperature [default: 1/sqrt(D)].
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Graph encoder layers.
    #[arg(long, default_value_t = 3)]
    pub depth: usize,
    /// Graph encoder: gcn, gat or sage.
    #[arg(long, default_value = "gat")]
    pub variant: Variant,
    /// Per-level probabilities: multi_label or marginalization.
    #[arg(long, default_value = "multi_label")]
    pub strategy: Strategy,
    /// Enabled components, e.g. TP,TG,VP,VG or none.
    #[arg(long, default_value = "TP,TG,VP,VG")]
    pub toggles: Toggles,
    /// Per-level loss weights w1,...,wh [default: 1,...,1,2].
    #[arg(long, value_delimiter = ',')]
    pub level_weights: Option<Vec<f64>>,
    /// Encoder weight initialization: identity or uniform.
    #[arg(long, default_value = "identity")]
    pub init: Init,
    /// Encoder activation: identity, relu, leaky_relu or leaky_relu:<slope>.
    #[arg(long, default_value = "identity")]
    pub activation: Activation,
    /// Multiplier applied to similarity scores before every softmax.
    #[arg(long, default_value = "100")]
    pub logit_scale: f64,
}

#[derive(Debug, Clone, Args)]
pub struct SynthOpts {
    /// Number of levels; must match the length of --branching when given.
    #[arg(long)]
    pub levels: Option<usize>,
    /// Level-1 class count followed by children per node on each deeper level.
    #[arg(long, value_delimiter = ',', default_value = "4,3")]
    pub branching: Vec<usize>,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 40)]
    pub train_per_leaf: usize,
    #[arg(long, default_value_t = 20)]
    pub test_per_leaf: usize,
    /// Spatial rows per image.
    #[arg(long, default_value_t = 16)]
    pub patches: usize,
    /// Per-coordinate noise of every spatial row and text feature.
    #[arg(long, default_value = "0.35")]
    pub sigma: f64,
    /// Distance between a child mean and its parent mean.
    #[arg(long, default_value = "0.5")]
    pub offset: f64,
}

/// A parsed invocation after merging the config file.
#[derive(Debug, Clone)]
pub enum RunConfig {
    Synth {
        io: IoOpts,
        spec: SynthOpts,
    },
    Train {
        io: IoOpts,
        train: TrainOpts,
    },
    Eval {
        io: IoOpts,
        train: TrainOpts,
    },
    Sweep {
        io: IoOpts,
        train: TrainOpts,
        axis: SweepAxis,
    },
    Gradcheck {
        io: IoOpts,
        train: TrainOpts,
        samples: usize,
    },
}

const IO_KEYS: &[&str] = &[
    "taxonomy",
    "embeddings",
    "checkpoint",
    "out",
    "seed",
    "threads",
];
const TRAIN_KEYS: &[&str] = &[
    "lr",
    "epochs",
    "batch",
    "lambda1",
    "lambda2",
    "alpha",
    "depth",
    "variant",
    "strategy",
    "toggles",
    "level_weights",
    "init",
    "activation",
    "logit_scale",
];
const SYNTH_KEYS: &[&str] = &[
    "levels",
    "branching",
    "dim",
    "train_per_leaf",
    "test_per_leaf",
    "patches",
    "sigma",
    "offset",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| anyhow::anyhow!("config key {key}: cannot parse {value:?}: {e}"))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

impl IoOpts {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "taxonomy" => self.taxonomy = Some(value.into()),
            "embeddings" => self.embeddings = Some(value.into()),
            "checkpoint" => self.checkpoint = Some(value.into()),
            "out" => self.out = value.into(),
            "seed" => self.seed = parse(key, value)?,
            "threads" => self.threads = Some(parse(key, value)?),
            _ => unreachable!("not an io key: {key}"),
        }
        Ok(())
    }

    fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.out.join(CHECKPOINT_FILE))
    }
}

impl TrainOpts {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "lr" => self.lr = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch" => self.batch = parse(key, value)?,
            "lambda1" => self.lambda1 = parse(key, value)?,
            "lambda2" => self.lambda2 = parse(key, value)?,
            "alpha" => self.alpha = Some(parse(key, value)?),
            "depth" => self.depth = parse(key, value)?,
            "variant" => self.variant = parse(key, value)?,
            "strategy" => self.strategy = parse(key, value)?,
            "toggles" => self.toggles = parse(key, value)?,
            "level_weights" => self.level_weights = Some(parse_list(key, value)?),
            "init" => self.init = parse(key, value)?,
            "activation" => self.activation = parse(key, value)?,
            "logit_scale" => self.logit_scale = parse(key, value)?,
            _ => unreachable!("not a training key: {key}"),
        }
        Ok(())
    }

    /// Defaults for the data shape, overridden by these options.
    pub fn to_config(&self, dim: usize, levels: usize, seed: u64) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::defaults(dim, levels);
        cfg.lr0 = self.lr;
        cfg.epochs = self.epochs;
        cfg.batch_size = self.batch;
        cfg.seed = seed;
        cfg.toggles = self.toggles;
        cfg.fusion.lambda1 = self.lambda1;
        cfg.fusion.lambda2 = self.lambda2;
        if let Some(a) = self.alpha {
            cfg.fusion.alpha = a;
        }
        for enc in [&mut cfg.text_encoder, &mut cfg.visual_encoder] {
            enc.depth = self.depth;
            enc.variant = self.variant;
            enc.init = self.init;
            enc.activation = self.activation;
        }
        cfg.loss.strategy = self.strategy;
        cfg.loss.logit_scale = self.logit_scale;
        if let Some(w) = &self.level_weights {
            cfg.loss.level_weights = w.clone();
        }
        cfg.validate(levels)?;
        Ok(cfg)
    }
}

impl SynthOpts {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "levels" => self.levels = Some(parse(key, value)?),
            "branching" => self.branching = parse_list(key, value)?,
            "dim" => self.dim = parse(key, value)?,
            "train_per_leaf" => self.train_per_leaf = parse(key, value)?,
            "test_per_leaf" => self.test_per_leaf = parse(key, value)?,
            "patches" => self.patches = parse(key, value)?,
            "sigma" => self.sigma = parse(key, value)?,
            "offset" => self.offset = parse(key, value)?,
            _ => unreachable!("not a synth key: {key}"),
        }
        Ok(())
    }

    pub fn to_spec(&self, seed: u64) -> Result<SynthSpec> {
        if let Some(l) = self.levels {
            if l != self.branching.len() {
                bail!(
                    "--levels {l} but --branching lists {} levels",
                    self.branching.len()
                );
            }
        }
        Ok(SynthSpec {
            branching: self.branching.clone(),
            dim: self.dim,
            train_per_leaf: self.train_per_leaf,
            test_per_leaf: self.test_per_leaf,
            patches: self.patches,
            sigma: self.sigma,
            offset: self.offset,
            seed,
        })
    }
}

/// `key = value` lines; `#` starts a comment; keys may use `-` or `_`.
pub fn parse_config_file(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .with_context(|| format!("config line {}: expected `key = value`", i + 1))?;
        let key = k.trim().replace('-', "_");
        if key.is_empty() {
            bail!("config line {}: empty key", i + 1);
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

/// Set on the command line or through the environment.
fn explicit(m: &ArgMatches, id: &str) -> bool {
    matches!(
        m.value_source(id),
        Some(ValueSource::CommandLine | ValueSource::EnvVariable)
    )
}

fn merge_config(
    m: &ArgMatches,
    io: &mut IoOpts,
    train: Option<&mut TrainOpts>,
    synth: Option<&mut SynthOpts>,
) -> Result<()> {
    let Some(path) = io.config.clone() else {
        return Ok(());
    };
    let text =
        fs::read_to_string(&path).with_context(|| format!("reading config {}", path.display()))?;
    let entries = parse_config_file(&text).with_context(|| format!("in {}", path.display()))?;
    let (mut train, mut synth) = (train, synth);
    for (key, value) in entries {
        let known = IO_KEYS.contains(&key.as_str())
            || (train.is_some() && TRAIN_KEYS.contains(&key.as_str()))
            || (synth.is_some() && SYNTH_KEYS.contains(&key.as_str()));
        if !known {
            bail!(
                "{}: unknown key {key:?} for this subcommand",
                path.display()
            );
        }
        if explicit(m, &key) {
            continue;
        }
        if IO_KEYS.contains(&key.as_str()) {
            io.set(&key, &value)?;
        } else if let (Some(t), true) = (train.as_deref_mut(), TRAIN_KEYS.contains(&key.as_str())) {
            t.set(&key, &value)?;
        } else if let Some(s) = synth.as_deref_mut() {
            s.set(&key, &value)?;
        }
    }
    Ok(())
}

/// Parses arguments (and the config file they name) into a [`RunConfig`].
pub fn parse_args<I, T>(args: I) -> Result<RunConfig>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = Cli::command().try_get_matches_from(args)?;
    let cli = Cli::from_arg_matches(&matches)?;
    let (_, sub) = matches.subcommand().expect("subcommand is required");
    Ok(match cli.command {
        Command::Synth { mut io, mut spec } => {
            merge_config(sub, &mut io, None, Some(&mut spec))?;
            RunConfig::Synth { io, spec }
        }
        Command::Train { mut io, mut train } => {
            merge_config(sub, &mut io, Some(&mut train), None)?;
            RunConfig::Train { io, train }
        }
        Command::Eval { mut io, mut train } => {
            merge_config(sub, &mut io, Some(&mut train), None)?;
            RunConfig::Eval { io, train }
        }
        Command::Sweep {
            mut io,
            mut train,
            axis,
        } => {
            merge_config(sub, &mut io, Some(&mut train), None)?;
            RunConfig::Sweep {
                io,
                train,
                axis: axis.parse()?,
            }
        }
        Command::Gradcheck {
            mut io,
            mut train,
            samples,
        } => {
            merge_config(sub, &mut io, Some(&mut train), None)?;
            RunConfig::Gradcheck { io, train, samples }
        }
    })
}

fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        builder = builder.num_threads(n);
    }
    Ok(builder.build()?.install(f))
}

/// Entry point used by the binary.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match parse_args(args)? {
        RunConfig::Synth { io, spec } => {
            println!("{}", cmd_synth(&spec.to_spec(io.seed)?, &io.out)?);
        }
        RunConfig::Train { io, train } => {
            print!("{}", cmd_train(&io, &train)?.summary);
        }
        RunConfig::Eval { io, train } => {
            let row = cmd_eval(&io, &train)?;
            print!("{}", render_table(std::slice::from_ref(&row)));
        }
        RunConfig::Sweep { io, train, axis } => {
            print!("{}", render_table(&cmd_sweep(&io, &train, &axis)?));
        }
        RunConfig::Gradcheck { io, train, samples } => {
            let report = cmd_gradcheck(&io, &train, samples)?;
            print!("{}", report.render());
            let flagged = report.flagged();
            if !flagged.is_empty() {
                bail!(
                    "gradient check flagged {} block(s): {}",
                    flagged.len(),
                    flagged.join(", ")
                );
            }
        }
    }
    Ok(())
}

/// Writes `taxonomy.txt`, `text.hgeb`, `train.hgeb` and `test.hgeb` into `out`
/// and returns a one-line description.
pub fn cmd_synth(spec: &SynthSpec, out: &Path) -> Result<String> {
    let data = synth::generate(spec)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join(TAXONOMY_FILE), data.taxonomy.to_text())?;
    save_text_table(out.join(TEXT_FILE), data.text.base.view())?;
    save_image_records(out.join(TRAIN_FILE), spec.dim, &data.train)?;
    save_image_records(out.join(TEST_FILE), spec.dim, &data.test)?;
    Ok(format!(
        "wrote {} nodes ({:?} per level), {} train and {} test images to {}",
        data.taxonomy.node_count(),
        data.taxonomy.level_sizes(),
        data.train.len(),
        data.test.len(),
        out.display()
    ))
}

/// Taxonomy, text table and whichever image sets exist on disk.
pub struct Dataset {
    pub taxonomy: Taxonomy,
    pub graph: HierGraph,
    pub text: TextTable,
    pub train: Option<Vec<ImageFeatures>>,
    pub test: Option<Vec<ImageFeatures>>,
}

impl Dataset {
    pub fn load(io: &IoOpts) -> Result<Self> {
        let dir = io
            .embeddings
            .as_ref()
            .context("--embeddings <dir> is required")?;
        let tax_path = io
            .taxonomy
            .clone()
            .unwrap_or_else(|| dir.join(TAXONOMY_FILE));
        let taxonomy = Taxonomy::parse(
            &fs::read_to_string(&tax_path)
                .with_context(|| format!("reading {}", tax_path.display()))?,
        )
        .with_context(|| format!("parsing {}", tax_path.display()))?;
        let text = load_text_table(dir.join(TEXT_FILE))
            .with_context(|| format!("reading {}", dir.join(TEXT_FILE).display()))?;
        if text.len() != taxonomy.node_count() {
            bail!(
                "text table has {} rows, taxonomy has {} nodes",
                text.len(),
                taxonomy.node_count()
            );
        }
        let images = |name: &str| -> Result<Option<Vec<ImageFeatures>>> {
            let path = dir.join(name);
            if !path.exists() {
                return Ok(None);
            }
            let (dim, imgs) = load_image_records(&path, taxonomy.levels())
                .with_context(|| format!("reading {}", path.display()))?;
            if dim != text.dim() {
                bail!(
                    "{} has D = {dim}, text table has D = {}",
                    path.display(),
                    text.dim()
                );
            }
            Ok(Some(imgs))
        };
        let train = images(TRAIN_FILE)?;
        let test = images(TEST_FILE)?;
        let graph = HierGraph::build(&taxonomy);
        Ok(Dataset {
            taxonomy,
            graph,
            text,
            train,
            test,
        })
    }

    fn train(&self) -> Result<&[ImageFeatures]> {
        self.train
            .as_deref()
            .context("no train.hgeb in the embeddings directory")
    }

    fn test(&self) -> Result<&[ImageFeatures]> {
        self.test
            .as_deref()
            .context("no test.hgeb in the embeddings directory")
    }

    pub fn config(&self, train: &TrainOpts, seed: u64) -> Result<TrainConfig> {
        train.to_config(self.text.dim(), self.taxonomy.levels(), seed)
    }
}

fn write_out(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

pub struct TrainOutcome {
    pub fit: FitResult,
    pub test: Option<EvalResult>,
    pub checkpoint: PathBuf,
    /// Also written to `summary.txt`.
    pub summary: String,
}

/// Trains, then writes the checkpoint, `train_log.csv`, `metrics.csv` (when
/// test images exist) and `summary.txt`.
pub fn cmd_train(io: &IoOpts, opts: &TrainOpts) -> Result<TrainOutcome> {
    let data = Dataset::load(io)?;
    let cfg = data.config(opts, io.seed)?;
    let train = data.train()?;
    let pipeline = Pipeline::new(&data.taxonomy, &data.graph, &data.text, &cfg)?;
    let start = Instant::now();
    let fit = with_threads(io.threads, || trainer::fit(&pipeline, train))??;
    let checkpoint = io.checkpoint_path();
    if let Some(parent) = checkpoint.parent() {
        fs::create_dir_all(parent)?;
    }
    save_checkpoint(&checkpoint, &fit.state)
        .with_context(|| format!("writing {}", checkpoint.display()))?;

    let mut log = String::from("epoch,lr,mean_loss\n");
    for m in &fit.log {
        log.push_str(&format!("{},{:e},{:.9}\n", m.epoch + 1, m.lr, m.mean_loss));
    }
    write_out(&io.out, "train_log.csv", &log)?;

    let test = match &data.test {
        Some(images) => Some(with_threads(io.threads, || {
            eval_report::evaluate(&pipeline, &fit.state, images)
        })??),
        None => None,
    };
    let mut summary = format!(
        "trained {} epochs on {} images ({} parameters) in {:.1}s\nfinal loss {:.6}\ncheckpoint {}\n",
        cfg.epochs,
        train.len(),
        fit.state.params.parameter_count(),
        start.elapsed().as_secs_f64(),
        fit.log.last().map_or(f64::NAN, |m| m.mean_loss),
        checkpoint.display()
    );
    if let Some(result) = &test {
        let row = SweepRow {
            setting: format!("toggles={}", cfg.toggles.label()),
            result: result.clone(),
            seed: cfg.seed,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        write_out(&io.out, "metrics.csv", &to_csv(std::slice::from_ref(&row)))?;
        summary.push_str(&render_table(std::slice::from_ref(&row)));
    }
    write_out(&io.out, "summary.txt", &summary)?;
    Ok(TrainOutcome {
        fit,
        test,
        checkpoint,
        summary,
    })
}

/// Loads the checkpoint and scores the test images; writes `eval.csv`.
pub fn cmd_eval(io: &IoOpts, opts: &TrainOpts) -> Result<SweepRow> {
    let data = Dataset::load(io)?;
    let cfg = data.config(opts, io.seed)?;
    let template = ModelState::init(&cfg, data.graph.node_count(), data.text.dim())?.params;
    let path = io.checkpoint_path();
    let state =
        load_checkpoint(&path, &template).with_context(|| format!("loading {}", path.display()))?;
    let pipeline = Pipeline::new(&data.taxonomy, &data.graph, &data.text, &cfg)?;
    let test = data.test()?;
    let start = Instant::now();
    let result = with_threads(io.threads, || {
        eval_report::evaluate(&pipeline, &state, test)
    })??;
    let row = SweepRow {
        setting: format!("toggles={}", cfg.toggles.label()),
        result,
        seed: cfg.seed,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    write_out(&io.out, "eval.csv", &to_csv(std::slice::from_ref(&row)))?;
    Ok(row)
}

/// One model per axis value; writes `sweep_<axis>.csv`.
pub fn cmd_sweep(io: &IoOpts, opts: &TrainOpts, axis: &SweepAxis) -> Result<Vec<SweepRow>> {
    let data = Dataset::load(io)?;
    let cfg = data.config(opts, io.seed)?;
    let refs = DataRefs {
        taxonomy: &data.taxonomy,
        graph: &data.graph,
        text: &data.text,
        train: data.train()?,
        test: data.test()?,
    };
    let rows = with_threads(io.threads, || eval_report::sweep(axis, &cfg, refs))??;
    let name = match axis {
        SweepAxis::Depth(_) => "depth",
        SweepAxis::Variant(_) => "variant",
        SweepAxis::Toggles(_) => "toggles",
    };
    write_out(&io.out, &format!("sweep_{name}.csv"), &to_csv(&rows))?;
    Ok(rows)
}

/// Finite-difference check of the full model at its initial parameters;
/// also writes the rendered report to `gradcheck.txt`.
pub fn cmd_gradcheck(io: &IoOpts, opts: &TrainOpts, samples: usize) -> Result<GradReport> {
    let data = Dataset::load(io)?;
    let cfg = data.config(opts, io.seed)?;
    let train = data.train()?;
    let batch = &train[..samples.clamp(1, train.len())];
    let pipeline = Pipeline::new(&data.taxonomy, &data.graph, &data.text, &cfg)?;
    let mut state = ModelState::init(&cfg, data.graph.node_count(), data.text.dim())?;
    if cfg.fusion.lambda2 != 0.0 {
        trainer::refresh_prototypes(&pipeline, &mut state, train)?;
    }
    let report = with_threads(io.threads, || trainer::gradcheck(&pipeline, &state, batch))??;
    write_out(&io.out, "gradcheck.txt", &report.render())?;
    Ok(report)
}

//! `vdsm {gen-data|train|sample|swap|eval}`.

use std::ffi::OsString;
use std::fs::OpenOptions;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;
use crate::datasets::{gen_moving_shapes, gen_pendulum, load_dataset, load_idx, save_dataset, Dataset, Glyph, IdxData, PendulumConfig, ShapesConfig};
use crate::evaluation::evaluate;
use crate::imaging::{write_frames, write_grid};
use crate::persistence::{load_checkpoint, load_checkpoint_for, save_checkpoint};
use crate::schedules::Stage;
use crate::trainer::{generate, run_pretrain, run_sequences, swap, EpochReport, Factor, Flow, GenerateInit, ModelState, Variant};

#[derive(Debug, Parser)]
#[command(name = "vdsm", version, about = "Train and probe a sequential VAE with a mixture-of-experts decoder")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labeled synthetic sequence set.
    GenData(GenDataArgs),
    /// Run pretraining, sequence training or both.
    Train(TrainArgs),
    /// Draw unconditional samples into a PNG grid.
    Sample(SampleArgs),
    /// Transfer identity or dynamics from sequence B into sequence A.
    Swap(SwapArgs),
    /// Probe matrix, swap consistency and entropies as CSV.
    Eval(EvalArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DataSet {
    Pendulum,
    Shapes,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, value_enum)]
    pub set: DataSet,
    #[arg(long, default_value_t = 200)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long = "T", default_value_t = 16, value_parser = clap::value_parser!(u32).range(1..))]
    pub t: u32,
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    /// IDX image file whose first images replace the builtin glyphs (shapes only).
    #[arg(long)]
    pub glyphs: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    All,
    Pretrain,
    Sequence,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Full,
    SkipPretrain,
    SingleDecoder,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Full => Variant::Full,
            VariantArg::SkipPretrain => Variant::SkipPretrain,
            VariantArg::SingleDecoder => Variant::SingleDecoder,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML run configuration; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = StageArg::All)]
    pub stage: StageArg,
    /// Continue from `<out>/checkpoint.ckpt`.
    #[arg(long)]
    pub resume: bool,
    #[arg(long, env = "VDSM_THREADS")]
    pub threads: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub pretrain_epochs: Option<usize>,
    #[arg(long)]
    pub sequence_epochs: Option<usize>,
    /// Optimizer steps per epoch in both stages.
    #[arg(long)]
    pub batches_per_epoch: Option<usize>,
    #[arg(long, value_enum)]
    pub variant: Option<VariantArg>,
    /// Stop after this many epochs in this invocation (resume later with --resume).
    #[arg(long)]
    pub max_epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u32).range(1..))]
    pub n: u32,
    #[arg(long = "T", default_value_t = 16, value_parser = clap::value_parser!(u32).range(1..))]
    pub t: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "samples.png")]
    pub out: PathBuf,
    /// Also write every frame as its own PNG into this directory.
    #[arg(long)]
    pub frames: Option<PathBuf>,
}

fn parse_factor(s: &str) -> std::result::Result<Factor, String> {
    s.parse::<Factor>().map_err(|e| e.to_string())
}

#[derive(Debug, Args)]
pub struct SwapArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_parser = parse_factor)]
    pub factor: Factor,
    #[arg(long)]
    pub a: usize,
    #[arg(long)]
    pub b: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "swap.png")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "eval.csv")]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_swaps: Option<usize>,
    #[arg(long)]
    pub n_samples: Option<usize>,
}

/// Parses `args` (program name first) and runs the command; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(&a),
        Command::Train(a) => train(&a),
        Command::Sample(a) => sample(&a),
        Command::Swap(a) => swap_cmd(&a),
        Command::Eval(a) => eval(&a),
    }
}

fn gen_data(a: &GenDataArgs) -> Result<()> {
    let ds = match a.set {
        DataSet::Pendulum => {
            gen_pendulum(&PendulumConfig { count: a.count, seed: a.seed, t: a.t as usize, size: a.size, ..PendulumConfig::default() })?
        }
        DataSet::Shapes => {
            let glyphs = match &a.glyphs {
                Some(path) => Some(idx_glyphs(path)?),
                None => None,
            };
            gen_moving_shapes(&ShapesConfig { count: a.count, seed: a.seed, t: a.t as usize, size: a.size, glyphs, ..ShapesConfig::default() })?
        }
    };
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let m = save_dataset(&ds, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    println!("{}: {} sequences of {:?}, {} identities x {} actions", a.out.display(), m.count, m.shape, m.identities.len(), m.actions.len());
    Ok(())
}

/// The first eight IDX images, pooled by 3 into glyphs.
fn idx_glyphs(path: &Path) -> Result<Vec<Glyph>> {
    match load_idx(path)? {
        IdxData::Images { count, rows, cols, pixels } => (0..count.min(8))
            .map(|i| Ok(Glyph::from_image(&format!("idx{i}"), &pixels[i * rows * cols..(i + 1) * rows * cols], rows, cols, 3)?))
            .collect(),
        IdxData::Labels(_) => bail!("{} holds labels, not images", path.display()),
    }
}

const METRICS_HEADER: &str = "stage,epoch,recon,kl_s,kl_d,kl_z1,kl_z_trans,lambda_z,lambda_s,tau_s";

fn metrics_row(r: &EpochReport) -> String {
    let b = &r.breakdown;
    let a = &r.anneal;
    format!(
        "{},{},{},{},{},{},{},{},{},{}",
        r.stage.as_str(),
        r.epoch,
        b.reconstruction,
        b.kl_s,
        b.kl_d,
        b.kl_z1,
        b.kl_z_trans,
        a.lambda_z,
        a.lambda_s,
        a.tau_s
    )
}

fn open_dataset(path: Option<&Path>) -> Result<Dataset> {
    let path = path.context("no dataset given; pass --data or set `dataset` in the config")?;
    load_dataset(path).with_context(|| format!("reading dataset {}", path.display()))
}

fn train(a: &TrainArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(d) = &a.data {
        cfg.dataset = Some(d.clone());
    }
    if let Some(o) = &a.out {
        cfg.out_dir = o.clone();
    }
    if let Some(v) = a.variant {
        cfg.variant = v.into();
    }
    let t = &mut cfg.train;
    t.threads = a.threads.unwrap_or(t.threads);
    t.seed = a.seed.unwrap_or(t.seed);
    t.pretrain_epochs = a.pretrain_epochs.unwrap_or(t.pretrain_epochs);
    t.sequence_epochs = a.sequence_epochs.unwrap_or(t.sequence_epochs);
    if let Some(n) = a.batches_per_epoch {
        t.pretrain_batches_per_epoch = n;
        t.sequence_batches_per_epoch = n;
    }
    let effective = cfg.variant.configure(cfg.train.clone());
    effective.validate()?;
    if cfg.variant == Variant::SkipPretrain && a.stage == StageArg::Pretrain {
        bail!("the skip-pretrain variant has no pretraining stage");
    }
    let dataset = open_dataset(cfg.dataset.as_deref())?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let ckpt = cfg.checkpoint_path();
    let mut state = if a.resume {
        load_checkpoint_for(&ckpt, &effective).with_context(|| format!("resuming from {}", ckpt.display()))?
    } else if a.stage == StageArg::Sequence && cfg.variant != Variant::SkipPretrain {
        let p = cfg.pretrained_path();
        if !p.exists() {
            bail!("sequence training needs a pretraining checkpoint at {}; run `vdsm train --stage pretrain` first", p.display());
        }
        let mut s = load_checkpoint_for(&p, &effective)?;
        if !s.pretrain_complete {
            bail!("{} is not a completed pretraining checkpoint", p.display());
        }
        s.config.threads = effective.threads;
        s
    } else {
        ModelState::init(effective.clone())?
    };
    state.config.threads = effective.threads;

    let metrics = cfg.metrics_path();
    if !a.resume && a.stage != StageArg::Sequence || !metrics.exists() {
        std::fs::write(&metrics, format!("{METRICS_HEADER}\n"))?;
    }
    let mut log = OpenOptions::new().append(true).open(&metrics)?;
    let pretrained = cfg.pretrained_path();
    let mut done = 0usize;
    let mut hook = |s: &ModelState, r: &EpochReport| -> crate::Result<Flow> {
        use std::io::Write;
        writeln!(log, "{}", metrics_row(r))?;
        save_checkpoint(s, &ckpt)?;
        if r.stage == Stage::Pretrain && s.pretrain_complete {
            save_checkpoint(s, &pretrained)?;
        }
        eprintln!("{} epoch {}: elbo {:.2}", r.stage.as_str(), r.epoch, r.breakdown.elbo());
        done += 1;
        Ok(if a.max_epochs.is_some_and(|m| done >= m) { Flow::Stop } else { Flow::Continue })
    };
    let mut flow = Flow::Continue;
    if state.stage == Stage::Pretrain && cfg.variant != Variant::SkipPretrain && a.stage != StageArg::Sequence {
        flow = run_pretrain(&mut state, &dataset, &mut hook)?;
        if state.pretrain_complete && state.config.pretrain_epochs == 0 {
            save_checkpoint(&state, &pretrained)?;
            save_checkpoint(&state, &ckpt)?;
        }
    }
    if flow == Flow::Continue && a.stage != StageArg::Pretrain {
        run_sequences(&mut state, &dataset, cfg.variant != Variant::SkipPretrain, &mut hook)?;
        save_checkpoint(&state, &ckpt)?;
    }
    println!("checkpoint: {}", ckpt.display());
    Ok(())
}

fn sample(a: &SampleArgs) -> Result<()> {
    let state = load_checkpoint(&a.checkpoint).with_context(|| format!("reading checkpoint {}", a.checkpoint.display()))?;
    let mut rows = Vec::with_capacity(a.n as usize);
    for i in 0..a.n as u64 {
        rows.push(generate(&state, a.t as usize, &GenerateInit::default(), a.seed.wrapping_add(i))?);
    }
    write_grid(&a.out, &rows)?;
    if let Some(dir) = &a.frames {
        for (i, r) in rows.iter().enumerate() {
            write_frames(dir, &format!("sample{i:02}"), r)?;
        }
    }
    println!("{}", a.out.display());
    Ok(())
}

fn swap_cmd(a: &SwapArgs) -> Result<()> {
    let state = load_checkpoint(&a.checkpoint).with_context(|| format!("reading checkpoint {}", a.checkpoint.display()))?;
    let ds = open_dataset(Some(&a.data))?;
    for i in [a.a, a.b] {
        if i >= ds.len() {
            bail!("sequence index {i} out of range (dataset has {})", ds.len());
        }
    }
    let t = state.config.seq_len.min(ds.sequence_shape()?[0]);
    let frames: Vec<usize> = (0..t).collect();
    let (sa, sb) = (ds.sequences[a.a].select(&frames), ds.sequences[a.b].select(&frames));
    let out = swap(&state, &sa, &sb, a.factor, a.seed)?;
    write_grid(&a.out, &[sa, sb, out])?;
    println!("{}", a.out.display());
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    let state = load_checkpoint(&a.checkpoint).with_context(|| format!("reading checkpoint {}", a.checkpoint.display()))?;
    let ds = open_dataset(Some(&a.data))?;
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?.eval,
        None => Default::default(),
    };
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.n_swaps = a.n_swaps.unwrap_or(cfg.n_swaps);
    cfg.n_samples = a.n_samples.unwrap_or(cfg.n_samples);
    let report = evaluate(&state, &ds, &cfg)?;
    report.write_csv(&a.out)?;
    for (m, e, f, v, n) in report.rows() {
        println!("{m},{e},{f},{v:.4},{n}");
    }
    Ok(())
}

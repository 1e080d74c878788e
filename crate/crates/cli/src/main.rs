//! `tpmvcc`: simulate datasets, train, evaluate and render density maps.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use tpmvcc_core::dataset::{Dataset, Split};
use tpmvcc_core::evaluation::{evaluate_baseline, evaluate_model, Method};
use tpmvcc_core::io::{self, PgmScale};
use tpmvcc_core::simulator::{emit_dataset, SceneConfig};
use tpmvcc_core::trainer::{self, checkpoint_id, StageReport, TrainConfig, TrainReport};

#[derive(Parser)]
#[command(name = "tpmvcc", version, about = "Tri-plane multi-view density counting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-view dataset.
    Simulate {
        /// Scene config (TOML); built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        frames: usize,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one training stage, or all three in sequence.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        stage: StageArg,
        /// Training config (TOML); built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Run directory; stage n reads `stage{n-1}/` and writes `stage{n}/`.
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated view ids for the scene stages.
        #[arg(long, value_parser = parse_views)]
        views: Option<Vec<usize>>,
        #[arg(long)]
        dilation: Option<usize>,
        /// Keep the backbone fixed in stage 3.
        #[arg(long)]
        freeze_backbone: bool,
    },
    /// Score a checkpoint, and optionally the late-fusion baselines.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// View subset, e.g. `1,3`; repeat for several rows. Defaults to all views.
        #[arg(long, value_parser = parse_views)]
        views: Vec<Vec<usize>>,
        /// Repeatable.
        #[arg(long, value_enum)]
        baseline: Vec<BaselineArg>,
        /// Checkpoint whose view head feeds the baselines; defaults to
        /// `stage1/` next to `--ckpt`.
        #[arg(long)]
        baseline_ckpt: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Results CSV; defaults to `eval.csv` inside `--ckpt`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a density tensor as an 8-bit PGM.
    Render {
        #[arg(long)]
        den: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `auto` maps the maximum to 255; a number multiplies values.
        #[arg(long, default_value = "auto", value_parser = parse_scale)]
        scale: PgmScale,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StageArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    #[value(name = "3")]
    Three,
    All,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BaselineArg {
    Dwf,
    Mf,
    None,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    All,
}

fn parse_views(s: &str) -> Result<Vec<usize>, String> {
    let ids = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|_| format!("bad view id {p:?} in {s:?}")))
        .collect::<Result<Vec<_>, _>>()?;
    if ids.is_empty() || ids.contains(&0) {
        return Err(format!("view ids are 1-based and non-empty, got {s:?}"));
    }
    Ok(ids)
}

fn parse_scale(s: &str) -> Result<PgmScale, String> {
    if s == "auto" {
        return Ok(PgmScale::Auto);
    }
    match s.parse::<f64>() {
        Ok(k) if k.is_finite() && k >= 0.0 => Ok(PgmScale::Fixed(k)),
        _ => Err(format!("scale must be `auto` or a non-negative number, got {s:?}")),
    }
}

fn read_config<T>(path: Option<&Path>, parse: impl Fn(&str) -> tpmvcc_core::Result<T>, default: T) -> Result<T> {
    match path {
        None => Ok(default),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            parse(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn simulate(config: Option<&Path>, frames: usize, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut cfg = read_config(config, SceneConfig::from_toml, SceneConfig::default())?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let ds = emit_dataset(&cfg, frames, out)?;
    println!(
        "wrote {} frames ({} train, {} test) from {} views to {}",
        ds.manifest().frames,
        ds.manifest().train.len(),
        ds.manifest().test.len(),
        ds.cameras().len(),
        out.display()
    );
    Ok(())
}

fn stage_dir(out: &Path, stage: u8) -> PathBuf {
    out.join(format!("stage{stage}"))
}

fn load_stage(out: &Path, stage: u8) -> Result<tpmvcc_core::model::TpMvcc> {
    let dir = stage_dir(out, stage);
    let manifest = dir.join("manifest.txt");
    if !manifest.is_file() {
        bail!(
            "stage {} needs the stage-{stage} checkpoint, but {} does not exist",
            stage + 1,
            manifest.display()
        );
    }
    Ok(io::load_checkpoint(&dir)?)
}

fn write_report(path: &Path, report: &TrainReport) -> Result<()> {
    io::write_bytes(path, report.to_toml().as_bytes())?;
    Ok(())
}

fn train(data: &Path, stage: StageArg, config: Option<&Path>, out: &Path, views: Option<Vec<usize>>, dilation: Option<usize>, freeze: bool) -> Result<()> {
    let mut cfg = read_config(config, TrainConfig::from_toml, TrainConfig::default())?;
    if let Some(v) = views {
        cfg.views = v;
    }
    if let Some(d) = dilation {
        cfg.dilation = d;
    }
    if freeze {
        cfg.backbone_trainable_in_stage3 = false;
    }
    cfg.validate()?;
    let ds = Dataset::load(data)?;
    cfg.view_subset(&ds)?;
    let start = std::time::Instant::now();
    let finish = |model: &tpmvcc_core::model::TpMvcc, stages: Vec<StageReport>| TrainReport {
        config: cfg.clone(),
        model: model.config().clone(),
        stages,
        checkpoint: checkpoint_id(model),
        seconds: start.elapsed().as_secs_f64(),
    };
    let report = match stage {
        StageArg::All => {
            let run = trainer::train_all(&ds, &cfg)?;
            io::save_checkpoint(&stage_dir(out, 1), &run.stage1)?;
            io::save_checkpoint(&stage_dir(out, 2), &run.stage2)?;
            io::save_checkpoint(&stage_dir(out, 3), &run.model)?;
            write_report(&out.join("report.toml"), &run.report)?;
            run.report
        }
        StageArg::One => {
            let (m, r) = trainer::train_stage1(&ds, &cfg)?;
            io::save_checkpoint(&stage_dir(out, 1), &m)?;
            let rep = finish(&m, vec![r]);
            write_report(&out.join("report-stage1.toml"), &rep)?;
            rep
        }
        StageArg::Two => {
            let (m, r) = trainer::train_stage2(&ds, load_stage(out, 1)?, &cfg)?;
            io::save_checkpoint(&stage_dir(out, 2), &m)?;
            let rep = finish(&m, vec![r]);
            write_report(&out.join("report-stage2.toml"), &rep)?;
            rep
        }
        StageArg::Three => {
            let (m, r) = trainer::train_stage3(&ds, load_stage(out, 2)?, &cfg)?;
            io::save_checkpoint(&stage_dir(out, 3), &m)?;
            let rep = finish(&m, vec![r]);
            write_report(&out.join("report-stage3.toml"), &rep)?;
            rep
        }
    };
    for s in &report.stages {
        println!(
            "stage {}: {} epochs, final loss {}, {:.1}s",
            s.stage,
            s.losses.len(),
            s.losses.last().map_or("n/a".to_string(), |l| format!("{l:.6e}")),
            s.seconds
        );
    }
    println!("checkpoint {} in {}", report.checkpoint, out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn eval(data: &Path, ckpt: &Path, views: Vec<Vec<usize>>, baselines: &[BaselineArg], baseline_ckpt: Option<PathBuf>, split: SplitArg, out: Option<PathBuf>) -> Result<()> {
    let ds = Dataset::load(data)?;
    let model = io::load_checkpoint(ckpt).with_context(|| format!("loading checkpoint {}", ckpt.display()))?;
    let split = match split {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
        SplitArg::All => Split::All,
    };
    let subsets = if views.is_empty() {
        vec![ds.cameras().iter().map(|c| c.0).collect()]
    } else {
        views
    };
    let methods: Vec<Method> = baselines
        .iter()
        .filter_map(|b| match b {
            BaselineArg::Dwf => Some(Method::Dwf),
            BaselineArg::Mf => Some(Method::MaskFusion),
            BaselineArg::None => None,
        })
        .collect();
    let view_model = if methods.is_empty() {
        None
    } else {
        let dir = baseline_ckpt.unwrap_or_else(|| ckpt.parent().unwrap_or(Path::new(".")).join("stage1"));
        Some(io::load_checkpoint(&dir).with_context(|| format!("loading baseline checkpoint {}", dir.display()))?)
    };
    let mut rows = Vec::new();
    for subset in &subsets {
        rows.push(evaluate_model(&model, &ds, subset, split)?.row());
        for &m in &methods {
            let vm = view_model.as_ref().expect("loaded when baselines are requested");
            rows.push(evaluate_baseline(vm, &ds, subset, split, m)?.row());
        }
    }
    print!("{}", io::format_results_table(&rows));
    let out = out.unwrap_or_else(|| ckpt.join("eval.csv"));
    io::write_bytes(&out, &io::encode_results_csv(&rows))?;
    println!("wrote {}", out.display());
    Ok(())
}

fn render(den: &Path, out: &Path, scale: PgmScale) -> Result<()> {
    let t = io::read_tensor(den)?;
    let bytes = io::encode_pgm(&t, scale).with_context(|| format!("rendering {}", den.display()))?;
    io::write_bytes(out, &bytes)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, frames, seed, out } => simulate(config.as_deref(), frames, seed, &out),
        Command::Train { data, stage, config, out, views, dilation, freeze_backbone } => {
            train(&data, stage, config.as_deref(), &out, views, dilation, freeze_backbone)
        }
        Command::Eval { data, ckpt, views, baseline, baseline_ckpt, split, out } => {
            eval(&data, &ckpt, views, &baseline, baseline_ckpt, split, out)
        }
        Command::Render { den, out, scale } => render(&den, &out, scale),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

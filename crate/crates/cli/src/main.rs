//! `videdit`: dataset generation, training, editing and evaluation.
//!
//! Exit status is 0 on success, 2 when the input (flags, config, data or
//! checkpoint) is invalid and 1 when a run fails for any other reason.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use videdit::harness::{self, latest_checkpoint, Networks};
use videdit::metrics::{dyn_trajectory_report, mp_score, traversal_grid, AttributeProbe};
use videdit::rng::{self, streams};
use videdit::scenes::{generate_dataset, load_dataset, tile, Dataset, Split, VideoClip};
use videdit::textenc::{build_text_encoder, TemplateEncoder, TextEncoder};
use videdit::tranet::manipulate_clip;
use videdit::Config;

#[derive(Parser)]
#[command(name = "videdit", version, about = "Text-guided manipulation of moving-shape videos")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config file; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config entry, e.g. `--set loss.beta=4` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Master seed (overrides `seed` from the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Render the train/test clips to `data.root`.
    GenData {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replace an existing dataset.
        #[arg(long)]
        overwrite: bool,
    },
    /// Train on the training split, logging to `train.out_dir`.
    Train {
        /// Continue from this checkpoint directory.
        #[arg(long, conflicts_with = "resume_latest")]
        resume: Option<PathBuf>,
        /// Continue from the newest checkpoint under `train.out_dir`.
        #[arg(long)]
        resume_latest: bool,
    },
    /// Edit one clip towards a description.
    Edit {
        clip: String,
        text: String,
        #[command(flatten)]
        ck: CheckpointArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decode latent traversals of one clip into a PNG grid.
    Traverse {
        clip: String,
        #[command(flatten)]
        ck: CheckpointArg,
        /// Latent dims to sweep (comma separated); all when omitted.
        #[arg(long, value_delimiter = ',')]
        dims: Vec<usize>,
        /// Sweep from -range to +range.
        #[arg(long, default_value_t = 3.0)]
        range: f64,
        #[arg(long, default_value_t = 7)]
        steps: usize,
        /// Frame whose code is traversed.
        #[arg(long, default_value_t = 0)]
        frame: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Roll out z_dyn densely for one clip; writes CSV and a plot.
    Trajectory {
        clip: String,
        #[command(flatten)]
        ck: CheckpointArg,
        #[arg(long, default_value_t = 100)]
        points: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Editing diagnostics, disentanglement and trajectory linearity.
    Eval {
        #[command(flatten)]
        ck: CheckpointArg,
        #[command(flatten)]
        sel: Selection,
    },
    /// Full metrics report plus code/factor CSVs.
    Metrics {
        #[command(flatten)]
        ck: CheckpointArg,
        #[command(flatten)]
        sel: Selection,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct CheckpointArg {
    /// Checkpoint directory; the newest under `train.out_dir` when omitted.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct Selection {
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    /// Evaluate only the first N clips of the split.
    #[arg(long)]
    max_clips: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

fn load_config(c: &Common) -> Result<Config> {
    let mut cfg = match &c.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    cfg.apply_overrides(&c.overrides)?;
    Ok(cfg)
}

fn dataset(cfg: &Config) -> Result<Dataset> {
    Ok(load_dataset(Path::new(&cfg.data.root))?)
}

fn find_clip(data: &Dataset, id: &str) -> Result<VideoClip> {
    data.find(id)
        .cloned()
        .ok_or_else(|| videdit::Error::validation(format!("no clip `{id}` in the dataset")).into())
}

fn networks(cfg: &Config, ck: &CheckpointArg) -> Result<(Networks, PathBuf)> {
    let dir = match &ck.checkpoint {
        Some(p) => p.clone(),
        None => latest_checkpoint(Path::new(&cfg.train.out_dir))?,
    };
    let nets = Networks::from_checkpoint(cfg, &dir)?;
    log::info!("loaded {}", dir.display());
    Ok((nets, dir))
}

fn select(data: &Dataset, sel: &Selection) -> Vec<VideoClip> {
    let clips = data.split(sel.split.into());
    let n = sel.max_clips.unwrap_or(clips.len()).min(clips.len());
    clips[..n].to_vec()
}

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))
}

fn print_json(v: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.common)?;
    let out_root = PathBuf::from(&cfg.train.out_dir);
    match cli.command {
        Command::GenData { out, overwrite } => {
            let dir = out.unwrap_or_else(|| PathBuf::from(&cfg.data.root));
            let d = &cfg.data;
            let manifest = generate_dataset(cfg.seed, d.n_train, d.n_test, d.resolution, &dir, overwrite)?;
            print_json(&json!({ "root": dir, "clips": manifest.len(), "config_hash": cfg.hash() }))
        }
        Command::Train { resume, resume_latest } => {
            let data = dataset(&cfg)?;
            let from = match (resume, resume_latest) {
                (Some(p), _) => Some(p),
                (None, true) => Some(latest_checkpoint(&out_root)?),
                (None, false) => None,
            };
            let outcome = harness::train(&cfg, &data.train, from.as_deref())?;
            print_json(&json!({
                "checkpoint": outcome.checkpoint,
                "log": outcome.log,
                "steps": outcome.records.len(),
                "last": outcome.records.last(),
            }))
        }
        Command::Edit { clip, text, ck, out } => {
            let data = dataset(&cfg)?;
            let clip = find_clip(&data, &clip)?;
            let (nets, _) = networks(&cfg, &ck)?;
            let encoder = build_text_encoder(&cfg.text);
            let mut r = rng::stream(cfg.seed, streams::EVALUATION);
            let edited = manipulate_clip(
                &clip,
                &text,
                encoder.as_ref(),
                &nets.repnet,
                &nets.tranet,
                cfg.data.k_random,
                &cfg.ode,
                cfg.dtype.dtype(),
                &mut r,
            )?;
            let dir = out.unwrap_or_else(|| out_root.join("edits").join(&clip.clip_id));
            mkdir(&dir)?;
            for (i, f) in edited.iter().enumerate() {
                f.save_png(&dir.join(format!("frame_{i:02}.png")))?;
            }
            if let Some(img) = tile(&[clip.frames.clone(), edited.clone()]) {
                img.save(dir.join("strip.png"))?;
            }
            let w = TemplateEncoder::new(cfg.text.seed).encode(&text)?;
            let score = AttributeProbe::new(cfg.text.seed)
                .and_then(|probe| mp_score(&edited, &clip.frames, &w, &probe));
            let mp = match score {
                Ok(s) => Some(s.score),
                Err(e) => {
                    log::warn!("manipulative precision unavailable: {e}");
                    None
                }
            };
            print_json(&json!({ "clip": clip.clip_id, "text": text, "out": dir, "mp": mp }))
        }
        Command::Traverse {
            clip,
            ck,
            dims,
            range,
            steps,
            frame,
            out,
        } => {
            let data = dataset(&cfg)?;
            let clip = find_clip(&data, &clip)?;
            let (nets, _) = networks(&cfg, &ck)?;
            let l = &cfg.latent;
            let dims = if dims.is_empty() {
                (0..l.dim_tr + l.dim_ti + l.dim_dyn).collect()
            } else {
                dims
            };
            let n = steps.max(2);
            let values: Vec<f64> = (0..n).map(|i| -range + 2.0 * range * i as f64 / (n - 1) as f64).collect();
            let grid = traversal_grid(&nets.repnet, &clip, &dims, &values, frame, &cfg.ode, cfg.dtype.dtype())?;
            let path = out.unwrap_or_else(|| out_root.join(format!("traverse_{}.png", clip.clip_id)));
            if let Some(parent) = path.parent() {
                mkdir(parent)?;
            }
            tile(&grid)
                .ok_or_else(|| videdit::Error::validation("empty traversal"))?
                .save(&path)?;
            print_json(&json!({ "clip": clip.clip_id, "dims": dims, "values": values, "out": path }))
        }
        Command::Trajectory { clip, ck, points, out } => {
            let data = dataset(&cfg)?;
            let clip = find_clip(&data, &clip)?;
            let (nets, _) = networks(&cfg, &ck)?;
            let n = points.max(2);
            let times: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
            let report = dyn_trajectory_report(&nets.repnet, &clip, &times, &cfg.ode, cfg.dtype.dtype())?;
            let dir = out.unwrap_or_else(|| out_root.join("trajectories").join(&clip.clip_id));
            mkdir(&dir)?;
            report.write_csv(&dir.join("trajectory.csv"))?;
            report.plot(480, 240).save(dir.join("trajectory.png"))?;
            print_json(&json!({
                "clip": clip.clip_id,
                "r2": report.r2,
                "dominant_r2": report.dominant_r2,
                "out": dir,
            }))
        }
        Command::Eval { ck, sel } => {
            let data = dataset(&cfg)?;
            let clips = select(&data, &sel);
            let (nets, dir) = networks(&cfg, &ck)?;
            let encoder = build_text_encoder(&cfg.text);
            let run = harness::edit_clips(&cfg, &nets, &clips, encoder.as_ref())?;
            let (mig, aam) = harness::disentanglement(&cfg, &nets, &clips)?;
            let r2 = harness::trajectory_r2(&cfg, &nets, &clips, 100)?;
            let summary = json!({
                "checkpoint": dir,
                "n_clips": clips.len(),
                "edit_improved_fraction": run.improved_fraction(),
                "mp": run.mean_mp(),
                "mig": mig,
                "aam": aam,
                "trajectory_r2_median": harness::median(&r2),
                "edits": run.records,
            });
            fs::write(dir.join("eval.json"), serde_json::to_string_pretty(&summary)?)?;
            print_json(&summary)
        }
        Command::Metrics { ck, sel, out } => {
            let data = dataset(&cfg)?;
            let clips = select(&data, &sel);
            let (nets, _) = networks(&cfg, &ck)?;
            let dir = out.unwrap_or_else(|| out_root.join("metrics"));
            mkdir(&dir)?;
            let encoder = build_text_encoder(&cfg.text);
            let report = harness::metrics_report(&cfg, &nets, &clips, encoder.as_ref(), Some(&dir))?;
            let value = serde_json::to_value(&report)?;
            fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(&value)?)?;
            print_json(&value)
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<videdit::Error>() {
        Some(e) if e.is_validation() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

//! `rescore` command-line tool.
//!
//! Reports go to stdout (suppressed by `--quiet`), CSV files to the paths
//! given with `--csv`. A failure prints one JSON object on stderr,
//! `{"error": <kind>, "message": <text>}`, and exits with status 1; usage
//! errors exit with status 2.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use rescore::cooccurrence::cooccurrence_matrix;
use rescore::dataset::{load_annotations, load_detections, write_annotations, write_detections};
use rescore::error_analysis::{confidence_shares, ErrorCategory};
use rescore::matching::{rescore_with_targets, MatchingMode, TargetConfig, TargetMode};
use rescore::model::checkpoint::{load_checkpoint, save_checkpoint};
use rescore::model::EncoderKind;
use rescore::rank::{rank_images, RankOptions};
use rescore::synth::{generate_dataset, SynthParams};
use rescore::training::{history_to_csv, rescore_dataset, train_loop, TrainConfig};
use rescore::{evaluate, CategoryTable, EvalParams, ImageRecord, ModelConfig};

#[derive(Parser)]
#[command(name = "rescore", version, about = "Detection AP evaluation, rescoring targets and a contextual rescoring network")]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker thread cap (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Suppress reports on stdout; files are still written.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Inputs {
    /// Annotation file (COCO format).
    #[arg(long)]
    ann: PathBuf,
    /// Detection results file.
    #[arg(long)]
    det: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// AP report for a detection file.
    Eval {
        #[command(flatten)]
        inputs: Inputs,
        /// Per-class, per-threshold AP table.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Replace scores with matching-based targets and report the AP they reach.
    Target {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, default_value = "localization")]
        matching: MatchingMode,
        #[arg(long, default_value = "iou")]
        target: TargetMode,
        /// Rescored detection file.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Train a rescoring model.
    Train(TrainArgs),
    /// Rescore detections with a trained model.
    Rescore {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Confidence-weighted error breakdown.
    Analyze {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Class co-occurrence matrix of the ground truth.
    Cooccur {
        #[arg(long)]
        ann: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Images ranked by the cosine distance between confidences before and after rescoring.
    Rank {
        #[arg(long)]
        ann: PathBuf,
        #[arg(long)]
        before: PathBuf,
        #[arg(long)]
        after: PathBuf,
        #[arg(long, default_value_t = 16)]
        top: usize,
        /// Only rank images with at most this many detections.
        #[arg(long)]
        max_dets: Option<usize>,
        /// Only list detections scoring above this value before or after.
        #[arg(long)]
        min_score: Option<f64>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Write a synthetic annotation and detection file pair.
    Synth(SynthArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Validation annotations (default: the training set).
    #[arg(long, requires = "val_det")]
    val_ann: Option<PathBuf>,
    #[arg(long, requires = "val_ann")]
    val_det: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    hidden: usize,
    #[arg(long, default_value_t = 3)]
    layers: usize,
    #[arg(long, default_value = "gru")]
    encoder: EncoderKind,
    #[arg(long, default_value_t = 80)]
    regressor_hidden: usize,
    #[arg(long, default_value = "iou")]
    target: TargetMode,
    #[arg(long, default_value = "localization")]
    matching: MatchingMode,
    #[arg(long, default_value_t = 256)]
    batch: usize,
    #[arg(long, default_value_t = 0.003)]
    lr: f64,
    #[arg(long, default_value_t = 0.75)]
    shuffle_prob: f64,
    #[arg(long, default_value_t = 4)]
    patience: usize,
    #[arg(long, default_value_t = 20)]
    early_stop: usize,
    #[arg(long, default_value_t = 100)]
    max_epochs: usize,
    /// Checkpoint path for the best model.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch history (default: next to the checkpoint).
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out_ann: PathBuf,
    #[arg(long)]
    out_det: PathBuf,
    #[arg(long, default_value_t = 20)]
    images: usize,
    #[arg(long, default_value_t = 6)]
    classes: usize,
    #[arg(long, default_value_t = 2)]
    classes_per_super: usize,
    #[arg(long, default_value_t = 1)]
    min_gts: usize,
    #[arg(long, default_value_t = 4)]
    max_gts: usize,
    #[arg(long, default_value_t = 0)]
    min_duplicates: usize,
    #[arg(long, default_value_t = 2)]
    max_duplicates: usize,
    #[arg(long, default_value_t = 0.1)]
    jitter: f64,
    #[arg(long, default_value_t = 0.1)]
    confusion: f64,
    #[arg(long, default_value_t = 0)]
    min_fps: usize,
    #[arg(long, default_value_t = 2)]
    max_fps: usize,
    #[arg(long, default_value_t = 0.3)]
    score_iou_weight: f64,
    #[arg(long, default_value_t = 0.1)]
    score_noise: f64,
}

struct Session {
    quiet: bool,
    seed: u64,
}

impl Session {
    fn report(&self, text: &str) {
        if !self.quiet {
            print!("{text}");
        }
    }
}

fn load(inputs: &Inputs) -> Result<(CategoryTable, Vec<ImageRecord>)> {
    let mut ann = load_annotations(&inputs.ann)?;
    load_detections(&inputs.det, &ann.table, &mut ann.images)?;
    Ok((ann.table, ann.images))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| {
        rescore::Error::Io {
            path: path.to_owned(),
            source,
        }
        .into()
    })
}

/// Writes `csv` to `path` when given, otherwise to stdout after a blank
/// line separating it from any text report.
fn emit_csv(ctx: &Session, path: Option<&Path>, csv: &str, after_text: bool) -> Result<()> {
    match path {
        Some(p) => write_text(p, csv),
        None => {
            ctx.report(if after_text { "\n" } else { "" });
            ctx.report(csv);
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let ctx = Session {
        quiet: cli.quiet,
        seed: cli.seed,
    };
    let params = EvalParams::default();
    match cli.command {
        Command::Eval { inputs, csv } => {
            let (table, images) = load(&inputs)?;
            let report = evaluate(&images, &params);
            ctx.report(&report.summary_text());
            emit_csv(&ctx, csv.as_deref(), &report.to_csv(&table), true)?;
        }
        Command::Target {
            inputs,
            matching,
            target,
            out,
            csv,
        } => {
            let (table, images) = load(&inputs)?;
            let rescored = rescore_with_targets(&images, TargetConfig { matching, target });
            write_detections(&out, &table, &rescored)?;
            let before = evaluate(&images, &params);
            let after = evaluate(&rescored, &params);
            ctx.report(&format!(
                "baseline\n{}\ntargets ({matching}, {target})\n{}",
                before.summary_text(),
                after.summary_text()
            ));
            emit_csv(&ctx, csv.as_deref(), &after.to_csv(&table), true)?;
        }
        Command::Train(args) => train(&ctx, args)?,
        Command::Rescore {
            inputs,
            checkpoint,
            out,
        } => {
            let (table, images) = load(&inputs)?;
            let model = load_checkpoint(&checkpoint)?;
            let rescored = rescore_dataset(&images, &model)?;
            write_detections(&out, &table, &rescored)?;
            ctx.report(&format!(
                "before\n{}\nafter\n{}",
                evaluate(&images, &params).summary_text(),
                evaluate(&rescored, &params).summary_text()
            ));
        }
        Command::Analyze { inputs, csv } => {
            let (table, images) = load(&inputs)?;
            let b = confidence_shares(&images, &table);
            let mut text = String::new();
            for cat in ErrorCategory::ALL {
                let share = b.share(cat).map_or("undefined".to_owned(), |s| format!("{:.4}", s));
                text.push_str(&format!("{:<17} {:>7} {}\n", cat.name(), b.counts[cat.index()], share));
            }
            ctx.report(&text);
            emit_csv(&ctx, csv.as_deref(), &b.to_csv(), true)?;
        }
        Command::Cooccur { ann, csv } => {
            let ann = load_annotations(&ann)?;
            let m = cooccurrence_matrix(&ann.images, ann.table.len());
            emit_csv(&ctx, csv.as_deref(), &m.to_csv(&ann.table), false)?;
        }
        Command::Rank {
            ann,
            before,
            after,
            top,
            max_dets,
            min_score,
            csv,
        } => {
            let ann = load_annotations(&ann)?;
            let mut b = ann.images.clone();
            load_detections(&before, &ann.table, &mut b)?;
            let mut a = ann.images;
            load_detections(&after, &ann.table, &mut a)?;
            let options = RankOptions {
                top,
                max_dets,
                min_score,
            };
            let report = rank_images(&b, &a, &options)?;
            for id in &report.skipped {
                eprintln!("warning: image {id} skipped, zero confidence vector");
            }
            emit_csv(&ctx, csv.as_deref(), &report.to_csv(), false)?;
        }
        Command::Synth(args) => {
            let p = SynthParams {
                n_images: args.images,
                num_classes: args.classes,
                classes_per_super: args.classes_per_super,
                gts_per_image: (args.min_gts, args.max_gts),
                duplicates_per_gt: (args.min_duplicates, args.max_duplicates),
                jitter: args.jitter,
                confusion_prob: args.confusion,
                background_fps: (args.min_fps, args.max_fps),
                score_iou_weight: args.score_iou_weight,
                score_noise: args.score_noise,
                seed: ctx.seed,
                ..SynthParams::default()
            };
            let (table, images) = generate_dataset(&p)?;
            write_annotations(&args.out_ann, &table, &images)?;
            write_detections(&args.out_det, &table, &images)?;
            let dets: usize = images.iter().map(|i| i.dets.len()).sum();
            let gts: usize = images.iter().map(|i| i.gts.len()).sum();
            ctx.report(&format!("{} images, {gts} ground truths, {dets} detections\n", images.len()));
        }
    }
    Ok(())
}

fn train(ctx: &Session, args: TrainArgs) -> Result<()> {
    let (table, train_set) = load(&args.inputs)?;
    let val_set = match (&args.val_ann, &args.val_det) {
        (Some(ann), Some(det)) => {
            let (val_table, images) = load(&Inputs {
                ann: ann.clone(),
                det: det.clone(),
            })?;
            anyhow::ensure!(
                val_table.categories() == table.categories(),
                "validation categories differ from the training categories"
            );
            images
        }
        _ => train_set.clone(),
    };
    let mcfg = ModelConfig {
        num_classes: table.len(),
        hidden: args.hidden,
        layers: args.layers,
        encoder: args.encoder,
        regressor_hidden: args.regressor_hidden,
        seed: ctx.seed,
    };
    let tcfg = TrainConfig {
        batch_size: args.batch,
        lr: args.lr,
        shuffle_prob: args.shuffle_prob,
        patience: args.patience,
        early_stop: args.early_stop,
        max_epochs: args.max_epochs,
        seed: ctx.seed,
        targets: TargetConfig {
            matching: args.matching,
            target: args.target,
        },
        ..TrainConfig::default()
    };
    let outcome = match train_loop(&train_set, &val_set, &mcfg, &tcfg) {
        Ok(o) => o,
        Err(rescore::Error::Diverged {
            epoch,
            reason,
            last_good,
        }) => {
            let path = args.out.with_extension("last_good.json");
            save_checkpoint(&last_good, &path)?;
            return Err(rescore::Error::Diverged {
                epoch,
                reason: format!("{reason}; best parameters so far saved to {}", path.display()),
                last_good,
            }
            .into());
        }
        Err(e) => return Err(e.into()),
    };
    save_checkpoint(&outcome.best, &args.out)?;
    let history = args
        .history
        .unwrap_or_else(|| args.out.with_extension("history.csv"));
    write_text(&history, &history_to_csv(&outcome.history))?;
    let last = outcome.history.last().map_or(0, |r| r.epoch);
    ctx.report(&format!(
        "{} parameters, {last} epochs, best validation AP {:.4}\ncheckpoint {}\nhistory {}\n",
        outcome.best.params.num_params(),
        outcome.best_val_ap,
        args.out.display(),
        history.display()
    ));
    Ok(())
}

fn error_line(err: &anyhow::Error) -> String {
    let kind = err
        .chain()
        .find_map(|e| e.downcast_ref::<rescore::Error>())
        .map_or("runtime", |e| e.kind());
    serde_json::json!({ "error": kind, "message": err.to_string() }).to_string()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("{}", error_line(&anyhow::Error::new(e)));
            return ExitCode::FAILURE;
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::FAILURE
        }
    }
}

//! Command-line driver for the motion-tracking pipeline: phantom and
//! dataset generation, training, fine-tuning, evaluation, the masking
//! probe, recorded-trace evaluation, latency measurement, single-sequence
//! prediction, and plotting.
//!
//! Every subcommand takes `--seed`, `--config`, and `--out`; outputs carry
//! a provenance stamp (config hash, seed, checkpoint hash). Errors print a
//! single JSON object on stderr and exit nonzero; usage errors exit 2.

mod svgplot;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use slicetrack::config::ExperimentConfig;
use slicetrack::evaluation::{
    self, compare_predictors, evaluate, latency_benchmark, probe_masked, EvalOptions,
    EvalReport, Provenance, RecordedEvalParams,
};
use slicetrack::network::checkpoint::{
    file_hash, load_pose_lstm, load_tracker, save_pose_lstm, save_tracker, CheckpointMeta,
};
use slicetrack::network::{ModelConfig, PoseLstm, TrackerModel};
use slicetrack::phantom::{generate_phantom, load_volume, normalize, save_volume, Volume};
use slicetrack::rigid3d::Pose;
use slicetrack::rng::derive_seed;
use slicetrack::sampler::shard::{load_shard, ShardManifest, ShardWriter};
use slicetrack::sampler::MaskPolicy;
use slicetrack::training::{
    self, build_epoch, fine_tune_geodesic, train, train_pose_regressor, write_history_csv,
    TrainConfig,
};

#[derive(Parser)]
#[command(name = "slicetrack", version, about = "Predictive slice-level motion tracking")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Master seed for all randomness in this invocation.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Experiment config (TOML); the desk-scale preset when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file or directory (subcommand-specific).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate phantom volumes to a directory.
    GenPhantoms {
        #[command(flatten)]
        common: Common,
        /// How many phantoms (defaults to the config's training split).
        #[arg(long)]
        count: Option<usize>,
    },
    /// Generate a dataset shard of slice sequences.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        subjects: Option<usize>,
        #[arg(long)]
        per_subject: Option<usize>,
        /// Disable masking regardless of the config policy.
        #[arg(long)]
        no_mask: bool,
    },
    /// Train a model variant and write checkpoint + loss history.
    Train {
        #[command(flatten)]
        common: Common,
        /// full | unmasked | direct | pose-regressor
        #[arg(long, default_value = "full")]
        variant: String,
        #[arg(long)]
        epochs: Option<usize>,
        /// Reference deterministic mode: single-threaded batches.
        #[arg(long)]
        reference: bool,
    },
    /// Fine-tune a trained checkpoint with the geodesic rotation loss.
    FinetuneGeodesic {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-4)]
        lr: f64,
    },
    /// Evaluate a checkpoint on a synthetic (or provided) test set.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Optional shard to evaluate instead of synthesizing a test set.
        #[arg(long)]
        testset: Option<PathBuf>,
        /// Adding both baselines emits a comparison table as well.
        #[arg(long)]
        direct_checkpoint: Option<PathBuf>,
        #[arg(long)]
        ar_checkpoint: Option<PathBuf>,
    },
    /// Masked-timestep robustness probe.
    ProbeMask {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Evaluate on recorded motion traces applied to test phantoms.
    EvalRecorded {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Trace CSV files, or a directory of them.
        #[arg(long, required = true, num_args = 1..)]
        traces: Vec<PathBuf>,
        /// Optional directory of .vol files to use instead of synthetic
        /// test phantoms.
        #[arg(long)]
        volumes: Option<PathBuf>,
    },
    /// Measure inference latency per sequence.
    BenchLatency {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 50)]
        reps: usize,
    },
    /// Run one sequence from a shard through a checkpoint; emit pose CSV.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
    /// Render plots from an evaluation report JSON.
    Plot {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        report: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        let msg = serde_json::json!({ "error": format!("{e:#}") });
        eprintln!("{msg}");
        std::process::exit(1);
    }
}

fn load_config(common: &Common) -> anyhow::Result<ExperimentConfig> {
    match &common.config {
        Some(path) => {
            ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))
        }
        None => Ok(ExperimentConfig::desk()),
    }
}

fn provenance(cfg: &ExperimentConfig, seed: u64, ckpt: Option<&Path>) -> anyhow::Result<Provenance> {
    let checkpoint_hash = match ckpt {
        Some(p) => file_hash(p)?,
        None => String::new(),
    };
    Ok(Provenance {
        config_hash: cfg.hash(),
        seed,
        checkpoint_hash,
    })
}

fn provenance_comment(p: &Provenance) -> String {
    format!(
        "config_hash={} seed={} checkpoint_hash={}",
        p.config_hash, p.seed, p.checkpoint_hash
    )
}

fn ensure_dir(path: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

/// Train config with the CLI seed folded in.
fn seeded_train_cfg(cfg: &ExperimentConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        seed: derive_seed(seed, 0x42),
        ..cfg.train.clone()
    }
}

fn synth_testset(
    cfg: &ExperimentConfig,
    seed: u64,
    mask: MaskPolicy,
) -> anyhow::Result<Vec<slicetrack::sampler::SliceSequence>> {
    let splits = cfg.subjects(seed)?;
    let tcfg = TrainConfig {
        sequences_per_subject: cfg.data.test_sequences_per_subject,
        mask_policy: mask,
        seed: derive_seed(seed, 0x7e57),
        ..cfg.train.clone()
    };
    Ok(build_epoch(&splits.test, &tcfg, 0)?)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.cmd {
        Cmd::GenPhantoms { common, count } => {
            let cfg = load_config(&common)?;
            ensure_dir(&common.out)?;
            let count = count.unwrap_or(cfg.data.train_subjects);
            let mut files = Vec::new();
            for i in 0..count {
                let v = normalize(&generate_phantom(
                    derive_seed(common.seed, 0x1000 + i as u64),
                    cfg.data.volume_dim,
                    &cfg.data.phantom,
                )?)?;
                let path = common.out.join(format!("{}.vol", v.subject_id));
                save_volume(&v, &path)?;
                files.push(path.display().to_string());
            }
            println!(
                "{}",
                serde_json::json!({ "written": files, "config_hash": cfg.hash(), "seed": common.seed })
            );
            Ok(())
        }

        Cmd::GenData {
            common,
            subjects,
            per_subject,
            no_mask,
        } => {
            let cfg = load_config(&common)?;
            let splits = cfg.subjects(common.seed)?;
            let n_subjects = subjects.unwrap_or(splits.train.len()).min(splits.train.len());
            let mut tcfg = seeded_train_cfg(&cfg, common.seed);
            if let Some(k) = per_subject {
                tcfg.sequences_per_subject = k;
            }
            if no_mask {
                tcfg.mask_policy = MaskPolicy::NoMask;
            }
            let pool = build_epoch(&splits.train[..n_subjects], &tcfg, 0)?;
            let manifest = ShardManifest::new(tcfg.n, tcfg.m, tcfg.slice_size);
            let mut w = ShardWriter::create(&common.out, manifest)?;
            for seq in &pool {
                w.push(seq)?;
            }
            w.finish()?;
            println!(
                "{}",
                serde_json::json!({
                    "shard": common.out.display().to_string(),
                    "sequences": pool.len(),
                    "config_hash": cfg.hash(),
                    "seed": common.seed,
                })
            );
            Ok(())
        }

        Cmd::Train {
            common,
            variant,
            epochs,
            reference,
        } => {
            let cfg = load_config(&common)?;
            ensure_dir(&common.out)?;
            let splits = cfg.subjects(common.seed)?;
            let mut tcfg = seeded_train_cfg(&cfg, common.seed);
            if let Some(e) = epochs {
                tcfg.epochs = e;
            }
            if reference {
                tcfg.parallel = false;
            }
            let prov = provenance(&cfg, common.seed, None)?;
            let meta = CheckpointMeta {
                seed: common.seed,
                epoch: tcfg.epochs,
                config_hash: cfg.hash(),
                note: variant.clone(),
            };

            let (ckpt_path, history) = match variant.as_str() {
                "pose-regressor" => {
                    let mut pose_seqs: Vec<Vec<Pose>> = Vec::new();
                    let gen_cfg = TrainConfig {
                        mask_policy: MaskPolicy::NoMask,
                        ..tcfg.clone()
                    };
                    for e in 0..6 {
                        for seq in build_epoch(&splits.train, &gen_cfg, e)? {
                            pose_seqs.push(seq.targets);
                        }
                    }
                    let mut model = PoseLstm::<f32>::init(
                        cfg.pose_regressor.clone(),
                        derive_seed(common.seed, 0xa4),
                    );
                    let losses = train_pose_regressor(
                        &mut model,
                        &pose_seqs,
                        30,
                        tcfg.lr_start,
                        derive_seed(common.seed, 0xa5),
                        tcfg.parallel,
                    )?;
                    let path = common.out.join("pose.ckpt");
                    save_pose_lstm(&path, &model, &meta)?;
                    let history: Vec<training::EpochRecord> = losses
                        .iter()
                        .enumerate()
                        .map(|(epoch, &l)| training::EpochRecord {
                            epoch,
                            train_total: l,
                            train_rot_xy: 0.0,
                            train_rot_z: 0.0,
                            train_z: 0.0,
                            val_total: 0.0,
                            lr: tcfg.lr_start,
                        })
                        .collect();
                    (path, history)
                }
                v @ ("full" | "unmasked" | "direct") => {
                    let (model_cfg, mask) = match v {
                        "direct" => (
                            ModelConfig::direct_lstm(cfg.model.input_size, cfg.model.hidden),
                            tcfg.mask_policy,
                        ),
                        "unmasked" => (cfg.model.clone(), MaskPolicy::NoMask),
                        _ => (cfg.model.clone(), tcfg.mask_policy),
                    };
                    tcfg.mask_policy = mask;
                    let mut model =
                        TrackerModel::<f32>::init(model_cfg, derive_seed(common.seed, 0xa0))?;
                    let report = train(&mut model, &splits.train, &splits.val, &tcfg)?;
                    if let Some(reason) = &report.abort {
                        let path = common.out.join(format!("{v}-lastgood.ckpt"));
                        save_tracker(&path, &model, &meta)?;
                        bail!(
                            "training aborted ({reason}); last-good checkpoint at {}",
                            path.display()
                        );
                    }
                    let path = common.out.join(format!("{v}.ckpt"));
                    save_tracker(&path, &model, &meta)?;
                    (path, report.history)
                }
                other => bail!("unknown variant '{other}' (full|unmasked|direct|pose-regressor)"),
            };

            let hist_path = common.out.join("history.csv");
            write_history_csv(&hist_path, &history, Some(&provenance_comment(&prov)))?;
            println!(
                "{}",
                serde_json::json!({
                    "checkpoint": ckpt_path.display().to_string(),
                    "history": hist_path.display().to_string(),
                    "final_train_total": history.last().map(|r| r.train_total),
                    "config_hash": cfg.hash(),
                    "seed": common.seed,
                })
            );
            Ok(())
        }

        Cmd::FinetuneGeodesic {
            common,
            checkpoint,
            epochs,
            lr,
        } => {
            let cfg = load_config(&common)?;
            ensure_dir(&common.out)?;
            let splits = cfg.subjects(common.seed)?;
            let (mut model, mut meta) = load_tracker(&checkpoint)?;
            let tcfg = seeded_train_cfg(&cfg, common.seed);
            let report =
                fine_tune_geodesic(&mut model, &splits.train, &splits.val, &tcfg, epochs, lr)?;
            meta.note = format!("{} + geodesic fine-tune", meta.note);
            let path = common.out.join("model_geodesic.ckpt");
            save_tracker(&path, &model, &meta)?;
            let prov = provenance(&cfg, common.seed, Some(&checkpoint))?;
            let hist_path = common.out.join("finetune_history.csv");
            write_history_csv(&hist_path, &report.history, Some(&provenance_comment(&prov)))?;
            println!(
                "{}",
                serde_json::json!({
                    "checkpoint": path.display().to_string(),
                    "epochs": report.history.len(),
                })
            );
            Ok(())
        }

        Cmd::Eval {
            common,
            checkpoint,
            testset,
            direct_checkpoint,
            ar_checkpoint,
        } => {
            let cfg = load_config(&common)?;
            let (model, _) = load_tracker(&checkpoint)?;
            let seqs = match &testset {
                Some(path) => load_shard(path)?.1,
                None => synth_testset(&cfg, common.seed, MaskPolicy::NoMask)?,
            };
            let opts = EvalOptions {
                m: cfg.train.m,
                parallel: cfg.train.parallel,
            };
            let mut report = evaluate(&model, &seqs, &opts)?;
            report.provenance = Some(provenance(&cfg, common.seed, Some(&checkpoint))?);
            std::fs::write(&common.out, report.to_json()?)?;
            let csv_path = common.out.with_extension("csv");
            evaluation::write_report_csv(
                &csv_path,
                &report,
                Some(&provenance_comment(report.provenance.as_ref().unwrap())),
            )?;

            let mut comparison_path = None;
            if let (Some(dp), Some(ap)) = (&direct_checkpoint, &ar_checkpoint) {
                let (direct, _) = load_tracker(dp)?;
                let (ar, _) = load_pose_lstm(ap)?;
                let mut cmp = compare_predictors(&model, &ar, &direct, &seqs, &opts)?;
                cmp.provenance = report.provenance.clone();
                let path = common.out.with_extension("comparison.json");
                std::fs::write(&path, serde_json::to_string_pretty(&cmp)?)?;
                comparison_path = Some(path.display().to_string());
            }
            println!(
                "{}",
                serde_json::json!({
                    "report": common.out.display().to_string(),
                    "grouped_csv": csv_path.display().to_string(),
                    "comparison": comparison_path,
                    "estimation_rot_mse_deg2": report.estimation.rot_mse_deg2,
                    "prediction_rot_mse_deg2": report.prediction.rot_mse_deg2,
                })
            );
            Ok(())
        }

        Cmd::ProbeMask { common, checkpoint } => {
            let cfg = load_config(&common)?;
            let (model, _) = load_tracker(&checkpoint)?;
            let seqs = synth_testset(&cfg, common.seed, MaskPolicy::NoMask)?;
            let opts = EvalOptions {
                m: cfg.train.m,
                parallel: cfg.train.parallel,
            };
            let mut table = probe_masked(&model, &seqs, &opts)?;
            table.provenance = Some(provenance(&cfg, common.seed, Some(&checkpoint))?);
            std::fs::write(&common.out, serde_json::to_string_pretty(&table)?)?;
            println!(
                "{}",
                serde_json::json!({
                    "probe": common.out.display().to_string(),
                    "rows": table.rows.len(),
                })
            );
            Ok(())
        }

        Cmd::EvalRecorded {
            common,
            checkpoint,
            traces,
            volumes,
        } => {
            let cfg = load_config(&common)?;
            let (model, _) = load_tracker(&checkpoint)?;
            let mut trace_files = Vec::new();
            for t in &traces {
                if t.is_dir() {
                    let mut entries: Vec<PathBuf> = std::fs::read_dir(t)?
                        .filter_map(|e| e.ok().map(|e| e.path()))
                        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
                        .collect();
                    entries.sort();
                    trace_files.extend(entries);
                } else {
                    trace_files.push(t.clone());
                }
            }
            if trace_files.is_empty() {
                bail!("no trace files found");
            }
            let vols: Vec<Volume> = match &volumes {
                Some(dir) => {
                    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?
                        .filter_map(|e| e.ok().map(|e| e.path()))
                        .filter(|p| p.extension().is_some_and(|x| x == "vol"))
                        .collect();
                    entries.sort();
                    entries
                        .iter()
                        .map(|p| load_volume(p))
                        .collect::<Result<_, _>>()?
                }
                None => cfg.subjects(common.seed)?.test,
            };
            let params = RecordedEvalParams {
                n: cfg.train.n,
                m: cfg.train.m,
                gap_mm: cfg.train.gap_mm,
                slice_size: cfg.train.slice_size,
                seed: derive_seed(common.seed, 0x4ec),
            };
            let opts = EvalOptions {
                m: cfg.train.m,
                parallel: cfg.train.parallel,
            };
            let mut report =
                evaluation::evaluate_recorded(&model, &vols, &trace_files, &params, &opts)?;
            report.provenance = Some(provenance(&cfg, common.seed, Some(&checkpoint))?);
            std::fs::write(&common.out, report.to_json()?)?;
            println!(
                "{}",
                serde_json::json!({
                    "report": common.out.display().to_string(),
                    "sequences": report.num_sequences,
                    "prediction_rot_mse_deg2": report.prediction.rot_mse_deg2,
                })
            );
            Ok(())
        }

        Cmd::BenchLatency {
            common,
            checkpoint,
            reps,
        } => {
            let cfg = load_config(&common)?;
            let (model, _) = load_tracker(&checkpoint)?;
            let seqs = synth_testset(&cfg, common.seed, MaskPolicy::NoMask)?;
            let stats = latency_benchmark(&model, &seqs[0], cfg.train.m, reps)?;
            let payload = serde_json::json!({
                "latency": stats,
                "budget_ms": 1500.0,
                "within_budget": stats.median_ms < 1500.0,
                "provenance": provenance(&cfg, common.seed, Some(&checkpoint))?,
            });
            std::fs::write(&common.out, serde_json::to_string_pretty(&payload)?)?;
            println!("{payload}");
            Ok(())
        }

        Cmd::Predict {
            common,
            checkpoint,
            input,
            index,
        } => {
            let cfg = load_config(&common)?;
            let (model, _) = load_tracker(&checkpoint)?;
            let (manifest, seqs) = load_shard(&input)?;
            let seq = seqs
                .get(index)
                .with_context(|| format!("shard has {} sequences, asked for {index}", seqs.len()))?;
            let poses = model.predict(seq, manifest.m)?;
            let prov = provenance(&cfg, common.seed, Some(&checkpoint))?;
            let mut text = format!("# {}\n", provenance_comment(&prov));
            text.push_str("t,theta_x,theta_y,theta_z,z\n");
            let dt = cfg.train.trajectory.dt;
            for (i, p) in poses.iter().enumerate() {
                text.push_str(&format!(
                    "{},{},{},{},{}\n",
                    i as f64 * dt,
                    p.rotation.vx,
                    p.rotation.vy,
                    p.rotation.vz,
                    p.z
                ));
            }
            std::fs::write(&common.out, text)?;
            println!(
                "{}",
                serde_json::json!({
                    "poses": poses.len(),
                    "csv": common.out.display().to_string(),
                })
            );
            Ok(())
        }

        Cmd::Plot { common, report } => {
            let text = std::fs::read_to_string(&report)
                .with_context(|| format!("reading {}", report.display()))?;
            let report: EvalReport = EvalReport::from_json(&text)?;
            ensure_dir(&common.out)?;

            // Error vs prediction horizon.
            let horizon: Vec<(f64, f64)> = report
                .prediction
                .by_timestep
                .iter()
                .map(|g| (g.key.parse::<f64>().unwrap_or(0.0), g.mean))
                .collect();
            let est: Vec<(f64, f64)> = report
                .estimation
                .by_timestep
                .iter()
                .map(|g| (g.key.parse::<f64>().unwrap_or(0.0), g.mean))
                .collect();
            let line_path = common.out.join("error_vs_horizon.svg");
            svgplot::line_chart(
                &line_path,
                "Rotation error vs timestep",
                "timestep within phase",
                "rotation MSE (deg^2)",
                &[
                    ("estimation".to_string(), est),
                    ("prediction".to_string(), horizon),
                ],
            )?;

            // Box plots per group from raw per-sequence errors.
            let n = report.n;
            let mut files = vec![line_path.display().to_string()];
            type KeyFn = Box<dyn Fn(&evaluation::SequenceEval) -> String>;
            let groupings: [(&str, KeyFn); 2] = [
                ("age", Box::new(|s| format!("{}", s.age_label))),
                ("speed", Box::new(|s| format!("{}", s.speed_class))),
            ];
            for (tag, keyf) in groupings {
                let mut keys: Vec<String> = report.sequences.iter().map(&keyf).collect();
                keys.sort();
                keys.dedup();
                let groups: Vec<svgplot::BoxStat> = keys
                    .iter()
                    .map(|k| {
                        let samples: Vec<f64> = report
                            .sequences
                            .iter()
                            .filter(|s| &keyf(s) == k)
                            .flat_map(|s| s.rot_err_deg2[n..].iter().copied())
                            .collect();
                        svgplot::box_stat(k, &samples)
                    })
                    .collect();
                let path = common.out.join(format!("boxplot_{tag}.svg"));
                svgplot::box_plot(
                    &path,
                    &format!("Prediction rotation error by {tag}"),
                    "rotation MSE (deg^2)",
                    &groups,
                )?;
                files.push(path.display().to_string());
            }
            println!("{}", serde_json::json!({ "plots": files }));
            Ok(())
        }
    }
}

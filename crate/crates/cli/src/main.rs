//! `diarize`: speaker diarization over single recordings or corpora, with
//! scoring, RTF benchmarking, and synthetic corpus generation.
//!
//! Exit codes: 0 success, 1 pipeline failure, 2 usage/config error.

mod manifest;
mod reports;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use diarize_core::fusion::StreamWeights;
use diarize_core::pipeline::{
    self, PipelineConfig, RecordingInput, RunReport, SystemMode,
};
use diarize_core::scoring;
use diarize_core::synth;
use diarize_core::transfer::TransferState;
use diarize_core::{nn, rttm};

use manifest::ManifestEntry;

#[derive(Parser)]
#[command(
    name = "diarize",
    version,
    about = "Information-bottleneck speaker diarization with two-pass latent features and incremental transfer learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// TOML config file; flags below override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master RNG seed.
    #[arg(long, global = true)]
    rng_seed: Option<u64>,
    /// Clustering stop threshold override.
    #[arg(long, global = true)]
    nmi_threshold: Option<f64>,
    /// Print the fully resolved configuration as JSON and exit.
    #[arg(long, global = true)]
    show_config: bool,
}

impl ConfigArgs {
    fn resolve(&self, system: Option<SystemMode>) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                toml::from_str::<PipelineConfig>(&text)
                    .with_context(|| format!("parsing config {}", path.display()))?
            }
            None => PipelineConfig::default(),
        };
        if let Some(seed) = self.rng_seed {
            cfg.rng_seed = seed;
        }
        if let Some(nmi) = self.nmi_threshold {
            cfg.nmi_threshold = nmi;
        }
        if let Some(system) = system {
            cfg.system = system;
        }
        Ok(cfg)
    }

    /// When --show-config is set, print the resolved config and short-circuit.
    fn maybe_show(&self, cfg: &PipelineConfig) -> Result<bool> {
        if self.show_config {
            println!("{}", serde_json::to_string_pretty(cfg)?);
        }
        Ok(self.show_config)
    }
}

/// Parse `--weights`: a "w_s,w_z" pair or "sweep:<step>".
fn parse_weights(cfg: &mut PipelineConfig, spec: &str) -> Result<()> {
    if let Some(step) = spec.strip_prefix("sweep:") {
        let step: f64 = step.parse().context("bad sweep step")?;
        diarize_core::fusion::sweep_weights(step).map_err(|e| anyhow!("{e}"))?;
        cfg.weight_sweep = Some(step);
        return Ok(());
    }
    let parts: Vec<&str> = spec.split(',').collect();
    if parts.len() != 2 {
        bail!("--weights expects 'w_s,w_z' or 'sweep:<step>'");
    }
    let w_s: f64 = parts[0].trim().parse().context("bad spectral weight")?;
    let w_z: f64 = parts[1].trim().parse().context("bad latent weight")?;
    cfg.fusion_weights = StreamWeights::new(w_s, w_z).map_err(|e| anyhow!("{e}"))?;
    Ok(())
}

#[derive(Subcommand)]
enum Command {
    /// Diarize one recording (WAV or feature file) and write an RTTM
    /// hypothesis.
    Diarize {
        /// Input WAV or feature file.
        input: PathBuf,
        #[arg(long, default_value = "ib")]
        system: String,
        /// Output RTTM path.
        #[arg(long)]
        out: PathBuf,
        /// Speech mask: RTTM or start,end CSV. Defaults to the reference
        /// turns when given, else the whole recording.
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Reference RTTM; enables SER in the report.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Write a machine-readable JSON report here.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Export the first-pass merge trajectory as CSV.
        #[arg(long)]
        trajectory: Option<PathBuf>,
        /// Transfer store directory (required for tpib-itl).
        #[arg(long)]
        transfer_dir: Option<PathBuf>,
        /// Seed checkpoint file to fine-tune from (tpib-itl without a
        /// persistent store).
        #[arg(long)]
        seed_checkpoint: Option<PathBuf>,
        /// Fusion weights "w_s,w_z".
        #[arg(long)]
        weights: Option<String>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Run a corpus manifest through one system and write per-recording
    /// RTTMs plus aggregate reports.
    Batch {
        manifest: PathBuf,
        #[arg(long, default_value = "ib")]
        system: String,
        #[arg(long)]
        out_dir: PathBuf,
        /// Processing order: "listed" or "shuffle:<seed>".
        #[arg(long, default_value = "listed")]
        order: String,
        /// Fusion weights "w_s,w_z" or "sweep:<step>".
        #[arg(long)]
        weights: Option<String>,
        /// Transfer store directory (tpib-itl modes); created if missing.
        #[arg(long)]
        transfer_dir: Option<PathBuf>,
        /// Development corpus manifest (tpib-itl-frozen: incremental over
        /// this corpus, then frozen over MANIFEST).
        #[arg(long)]
        dev_manifest: Option<PathBuf>,
        /// Worker threads for recording-level parallelism (ib/tpib).
        #[arg(long)]
        jobs: Option<usize>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Score a hypothesis RTTM against a reference RTTM.
    Score {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref", value_name = "REF")]
        reference: PathBuf,
        #[arg(long, default_value_t = 0.25)]
        collar: f64,
        /// Write the JSON breakdown here as well as stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Compare systems' real-time factors over repeated corpus runs.
    Bench {
        manifest: PathBuf,
        /// Comma-separated systems, e.g. "ib,tpib,tpib-itl".
        #[arg(long, default_value = "ib,tpib,tpib-itl")]
        systems: String,
        #[arg(long, default_value_t = 10)]
        runs: usize,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Generate a synthetic corpus with known ground truth.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 3)]
        speakers: usize,
        #[arg(long, default_value_t = 120.0)]
        duration: f64,
        #[arg(long, default_value_t = 8.0)]
        turn_min: f64,
        #[arg(long, default_value_t = 12.0)]
        turn_max: f64,
        #[arg(long, default_value_t = 3.0)]
        separation: f64,
        /// "features" (fast) or "audio" (exercises the MFCC path).
        #[arg(long, default_value = "features")]
        mode: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Share one speaker pool across all generated recordings.
        #[arg(long)]
        speaker_pool_seed: Option<u64>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Print the metadata and shapes of a checkpoint file (network or GMM).
    InspectCheckpoint {
        file: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            // Configuration/usage problems exit 2, runtime failures 1.
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.into()))
}

fn parse_system(s: &str) -> Result<SystemMode> {
    s.parse::<SystemMode>().map_err(|e| usage(e.to_string()))
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Diarize {
            input,
            system,
            out,
            mask,
            reference,
            report,
            trajectory,
            transfer_dir,
            seed_checkpoint,
            weights,
            config,
        } => {
            let system = parse_system(&system)?;
            let mut cfg = config.resolve(Some(system)).map_err(|e| usage(format!("{e:#}")))?;
            if let Some(w) = &weights {
                parse_weights(&mut cfg, w).map_err(|e| usage(format!("{e:#}")))?;
            }
            if config.maybe_show(&cfg)? {
                return Ok(ExitCode::SUCCESS);
            }
            let id = input
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .ok_or_else(|| usage("input path has no file name"))?;
            let rec = pipeline::input_from_paths(
                &id,
                &input,
                mask.as_deref(),
                reference.as_deref(),
            )?;
            let outcome = match system {
                SystemMode::Ib => pipeline::run_ib(&rec, &cfg)?,
                SystemMode::Tpib => pipeline::run_tpib(&rec, &cfg)?,
                SystemMode::TpibItl | SystemMode::TpibItlFrozen => {
                    let mut state = load_transfer_state(
                        transfer_dir.as_deref(),
                        seed_checkpoint.as_deref(),
                    )?;
                    if system == SystemMode::TpibItlFrozen {
                        state.freeze();
                    }
                    let (mut hyps, run) =
                        pipeline::run_tpib_itl(std::slice::from_ref(&rec), &mut state, &cfg)?;
                    if let Some(dir) = &transfer_dir {
                        state.save(dir)?;
                    }
                    let rep = run
                        .recordings
                        .into_iter()
                        .next()
                        .ok_or_else(|| anyhow!("no report produced"))?;
                    if let Some(err) = rep.error {
                        bail!("pipeline failed: {err}");
                    }
                    pipeline::RecordingOutcome {
                        hypothesis: hyps.pop().ok_or_else(|| anyhow!("no hypothesis"))?,
                        report: rep,
                        merge_records: Vec::new(),
                    }
                }
            };
            rttm::write_hypothesis(&out, &outcome.hypothesis)?;
            if let Some(path) = trajectory {
                diarize_core::ib::write_trajectory_csv(&path, &outcome.merge_records)?;
            }
            if let Some(path) = report {
                reports::write_json(
                    &path,
                    &reports::batch_report(
                        &RunReport {
                            system: system.to_string(),
                            recordings: vec![outcome.report],
                        },
                        &cfg,
                    ),
                )?;
            }
            Ok(ExitCode::SUCCESS)
        }

        Command::Batch {
            manifest: manifest_path,
            system,
            out_dir,
            order,
            weights,
            transfer_dir,
            dev_manifest,
            jobs,
            config,
        } => {
            let system = parse_system(&system)?;
            let mut cfg = config.resolve(Some(system)).map_err(|e| usage(format!("{e:#}")))?;
            if let Some(w) = &weights {
                parse_weights(&mut cfg, w).map_err(|e| usage(format!("{e:#}")))?;
            }
            if config.maybe_show(&cfg)? {
                return Ok(ExitCode::SUCCESS);
            }
            if let Some(n) = jobs {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                    .ok();
            }
            let mut entries = manifest::parse_manifest(&manifest_path)?;
            apply_order(&mut entries, &order)?;
            std::fs::create_dir_all(&out_dir)?;

            let run = match system {
                SystemMode::Ib | SystemMode::Tpib => {
                    run_batch_parallel(&entries, system, &cfg, &out_dir)?
                }
                SystemMode::TpibItl => {
                    let mut state = load_transfer_state(transfer_dir.as_deref(), None)?;
                    let inputs = load_inputs(&entries)?;
                    let (hyps, run) = pipeline::run_tpib_itl(&inputs, &mut state, &cfg)?;
                    if let Some(dir) = &transfer_dir {
                        state.save(dir)?;
                    }
                    write_hypotheses(&out_dir, &hyps)?;
                    run
                }
                SystemMode::TpibItlFrozen => {
                    let dev_path = dev_manifest
                        .ok_or_else(|| usage("tpib-itl-frozen requires --dev-manifest"))?;
                    let dev_entries = manifest::parse_manifest(&dev_path)?;
                    let dev_inputs = load_inputs(&dev_entries)?;
                    let test_inputs = load_inputs(&entries)?;
                    let mut state = load_transfer_state(transfer_dir.as_deref(), None)?;
                    let out = pipeline::run_tpib_itl_frozen(
                        &dev_inputs,
                        &test_inputs,
                        &mut state,
                        &cfg,
                    )?;
                    if let Some(dir) = &transfer_dir {
                        state.save(dir)?;
                    }
                    write_hypotheses(&out_dir, &out.dev_hypotheses)?;
                    write_hypotheses(&out_dir, &out.test_hypotheses)?;
                    reports::write_json(
                        &out_dir.join("report_dev.json"),
                        &reports::batch_report(&out.dev_report, &cfg),
                    )?;
                    out.test_report
                }
            };
            reports::write_json(&out_dir.join("report.json"), &reports::batch_report(&run, &cfg))?;
            if run.recordings.iter().any(|r| !r.ser_by_weight.is_empty()) {
                reports::write_ser_grid_csv(&out_dir.join("ser_grid.csv"), &run)?;
            }
            let failures = run.recordings.iter().filter(|r| r.error.is_some()).count();
            if failures > 0 {
                eprintln!("{failures} recording(s) failed; see report.json");
            }
            println!(
                "{} recordings, mean RTF {:.4}{}",
                run.recordings.len(),
                run.mean_rtf(),
                run.mean_ser_pct()
                    .map(|s| format!(", mean SER {s:.2}%"))
                    .unwrap_or_default()
            );
            Ok(ExitCode::SUCCESS)
        }

        Command::Score {
            hyp,
            reference,
            collar,
            out,
            config,
        } => {
            let mut cfg = config.resolve(None).map_err(|e| usage(format!("{e:#}")))?;
            cfg.scoring.collar_s = collar;
            if config.maybe_show(&cfg)? {
                return Ok(ExitCode::SUCCESS);
            }
            let h = rttm::read_hypothesis(&hyp, None)?;
            let r = rttm::read_reference(&reference, None)?;
            let breakdown = scoring::score(&h, &r, &cfg.scoring)?;
            let json = serde_json::to_string_pretty(&breakdown)?;
            println!("{json}");
            if let Some(path) = out {
                std::fs::write(path, json)?;
            }
            Ok(ExitCode::SUCCESS)
        }

        Command::Bench {
            manifest: manifest_path,
            systems,
            runs,
            out_dir,
            config,
        } => {
            let cfg = config.resolve(None).map_err(|e| usage(format!("{e:#}")))?;
            if config.maybe_show(&cfg)? {
                return Ok(ExitCode::SUCCESS);
            }
            if runs == 0 {
                return Err(usage("--runs must be at least 1"));
            }
            let systems: Vec<SystemMode> = systems
                .split(',')
                .map(|s| parse_system(s.trim()))
                .collect::<Result<_>>()?;
            let entries = manifest::parse_manifest(&manifest_path)?;
            std::fs::create_dir_all(&out_dir)?;
            let bench = run_bench(&entries, &systems, runs, &cfg)?;
            reports::write_json(&out_dir.join("bench.json"), &bench)?;
            reports::write_rtf_summary_csv(&out_dir.join("rtf_summary.csv"), &bench)?;
            for sys in &bench.systems {
                println!(
                    "{:>16}: total RTF {:.4} ± {:.4} (ann stage {:.4})",
                    sys.system, sys.total_rtf.mean, sys.total_rtf.std_dev, sys.ann_stage_rtf_mean
                );
            }
            for (name, impr) in &bench.improvement_vs_tpib_pct {
                println!("{name:>16}: {impr:+.2}% RTF vs tpib");
            }
            Ok(ExitCode::SUCCESS)
        }

        Command::Synth {
            out_dir,
            count,
            speakers,
            duration,
            turn_min,
            turn_max,
            separation,
            mode,
            seed,
            speaker_pool_seed,
            config,
        } => {
            let signal = match mode.as_str() {
                "features" => synth::SpeakerSignal::GaussianFeatures,
                "audio" => synth::SpeakerSignal::FilteredNoiseAudio,
                other => return Err(usage(format!("unknown synth mode '{other}'"))),
            };
            let base = synth::SynthSpec {
                num_speakers: speakers,
                turn_len_s: (turn_min, turn_max),
                total_duration_s: duration,
                signal,
                separation,
                rng_seed: seed,
                speaker_pool_seed,
                ..synth::SynthSpec::default()
            };
            if config.show_config {
                println!("{}", serde_json::to_string_pretty(&base)?);
                return Ok(ExitCode::SUCCESS);
            }
            std::fs::create_dir_all(&out_dir)?;
            let mut entries = Vec::with_capacity(count);
            for i in 0..count {
                let spec = synth::SynthSpec {
                    rng_seed: seed.wrapping_add(i as u64),
                    ..base.clone()
                };
                let item = synth::generate(&spec)?;
                let saved = synth::save_item(&out_dir, &item)?;
                entries.push(ManifestEntry {
                    id: saved.id,
                    data: saved.data_path,
                    reference: Some(saved.reference_path.clone()),
                    mask: Some(saved.reference_path),
                });
            }
            let manifest_path = out_dir.join("manifest.json");
            reports::write_json(&manifest_path, &entries)?;
            println!(
                "wrote {count} recording(s) and {}",
                manifest_path.display()
            );
            Ok(ExitCode::SUCCESS)
        }

        Command::InspectCheckpoint { file, config } => {
            if config.show_config {
                println!("{{}}");
                return Ok(ExitCode::SUCCESS);
            }
            inspect_checkpoint(&file)
        }
    }
}

fn load_transfer_state(
    dir: Option<&Path>,
    seed_checkpoint: Option<&Path>,
) -> Result<TransferState> {
    match (dir, seed_checkpoint) {
        (_, Some(ckpt_path)) => {
            let ckpt = nn::load_checkpoint(ckpt_path)?;
            Ok(TransferState::seeded(ckpt))
        }
        (Some(dir), None) => {
            if dir.join("manifest.json").exists() {
                Ok(TransferState::load(dir)?)
            } else {
                Ok(TransferState::new())
            }
        }
        (None, None) => Err(usage(
            "transfer store required: pass --transfer-dir (or --seed-checkpoint)",
        )),
    }
}

fn apply_order(entries: &mut [ManifestEntry], order: &str) -> Result<()> {
    if order == "listed" {
        return Ok(());
    }
    if let Some(seed) = order.strip_prefix("shuffle:") {
        let seed: u64 = seed.parse().map_err(|_| usage("bad shuffle seed"))?;
        // Deterministic Fisher-Yates driven by a splitmix-style stream.
        let mut state = seed.wrapping_add(0x9e3779b97f4a7c15);
        let mut next = || {
            state = state.wrapping_add(0x9e3779b97f4a7c15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
            z ^ (z >> 31)
        };
        for i in (1..entries.len()).rev() {
            let j = (next() % (i as u64 + 1)) as usize;
            entries.swap(i, j);
        }
        return Ok(());
    }
    Err(usage(format!(
        "unknown order '{order}' (expected 'listed' or 'shuffle:<seed>')"
    )))
}

fn load_inputs(entries: &[ManifestEntry]) -> Result<Vec<RecordingInput>> {
    entries.iter().map(manifest::to_input).collect()
}

fn write_hypotheses(
    out_dir: &Path,
    hyps: &[diarize_core::DiarizationHypothesis],
) -> Result<()> {
    for h in hyps {
        rttm::write_hypothesis(&out_dir.join(format!("{}.rttm", h.recording_id)), h)?;
    }
    Ok(())
}

/// IB and TPIB recordings are independent; fan out across the pool and
/// write each hypothesis as it lands.
fn run_batch_parallel(
    entries: &[ManifestEntry],
    system: SystemMode,
    cfg: &PipelineConfig,
    out_dir: &Path,
) -> Result<RunReport> {
    use rayon::prelude::*;
    let results: Vec<Result<pipeline::RecordingOutcome>> = entries
        .par_iter()
        .map(|e| {
            manifest::to_input(e).and_then(|input| {
                let r = match system {
                    SystemMode::Ib => pipeline::run_ib(&input, cfg),
                    SystemMode::Tpib => pipeline::run_tpib(&input, cfg),
                    _ => unreachable!(),
                };
                r.map_err(anyhow::Error::from)
            })
        })
        .collect();
    let mut run = RunReport::new(system);
    for (e, res) in entries.iter().zip(results) {
        match res {
            Ok(o) => {
                rttm::write_hypothesis(&out_dir.join(format!("{}.rttm", e.id)), &o.hypothesis)?;
                run.recordings.push(o.report);
            }
            Err(err) => {
                log::warn!("{}: {err:#}", e.id);
                run.recordings.push(pipeline::RecordingReport {
                    recording_id: e.id.clone(),
                    duration_s: 0.0,
                    stage_seconds: Default::default(),
                    total_seconds: 0.0,
                    rtf: 0.0,
                    num_clusters: 0,
                    ann_epochs: 0,
                    ser_pct: None,
                    speaker_count_error: None,
                    ser_by_weight: Vec::new(),
                    error: Some(format!("{err:#}")),
                });
            }
        }
    }
    Ok(run)
}

fn run_bench(
    entries: &[ManifestEntry],
    systems: &[SystemMode],
    runs: usize,
    cfg: &PipelineConfig,
) -> Result<reports::BenchReport> {
    let inputs = load_inputs(entries)?;
    let mut out = Vec::new();
    for &system in systems {
        let mut total_rtfs = Vec::with_capacity(runs);
        let mut stage_means: Vec<Vec<f64>> = Vec::with_capacity(runs);
        let mut ann_rtfs = Vec::with_capacity(runs);
        let mut last_ser = None;
        for _run in 0..runs {
            let mut run_cfg = cfg.clone();
            run_cfg.system = system;
            let report = match system {
                SystemMode::Ib | SystemMode::Tpib => {
                    let mut r = RunReport::new(system);
                    for input in &inputs {
                        let o = match system {
                            SystemMode::Ib => pipeline::run_ib(input, &run_cfg)?,
                            _ => pipeline::run_tpib(input, &run_cfg)?,
                        };
                        r.recordings.push(o.report);
                    }
                    r
                }
                SystemMode::TpibItl => {
                    let mut state = TransferState::new();
                    let (_, r) = pipeline::run_tpib_itl(&inputs, &mut state, &run_cfg)?;
                    r
                }
                SystemMode::TpibItlFrozen => {
                    bail!("bench supports ib, tpib and tpib-itl");
                }
            };
            if let Some(rec) = report.recordings.iter().find(|r| r.error.is_some()) {
                bail!(
                    "recording {} failed during bench: {}",
                    rec.recording_id,
                    rec.error.clone().unwrap_or_default()
                );
            }
            total_rtfs.push(report.mean_rtf());
            let stages = report.stage_rtf_means();
            ann_rtfs.push(stages.iter().find(|(n, _)| n == "ann").map_or(0.0, |(_, v)| *v));
            stage_means.push(stages.into_iter().map(|(_, v)| v).collect());
            last_ser = report.mean_ser_pct();
        }
        let stage_names = diarize_core::pipeline::StageSeconds::default().as_vec();
        let stage_rtf_means: Vec<(String, f64)> = stage_names
            .iter()
            .enumerate()
            .map(|(i, (name, _))| {
                let mean = stage_means.iter().map(|run| run[i]).sum::<f64>() / runs as f64;
                (name.clone(), mean)
            })
            .collect();
        out.push(reports::SystemBench {
            system: system.to_string(),
            runs,
            total_rtf: scoring::rtf_stats(&total_rtfs),
            stage_rtf_means,
            ann_stage_rtf_mean: ann_rtfs.iter().sum::<f64>() / runs as f64,
            mean_ser_pct: last_ser,
        });
    }
    let tpib_mean = out
        .iter()
        .find(|s| s.system == "tpib")
        .map(|s| s.total_rtf.mean);
    let improvement = match tpib_mean {
        Some(base) if base > 0.0 => out
            .iter()
            .filter(|s| s.system != "tpib")
            .map(|s| (s.system.clone(), 100.0 * (base - s.total_rtf.mean) / base))
            .collect(),
        _ => Vec::new(),
    };
    Ok(reports::BenchReport {
        schema_version: reports::SCHEMA_VERSION,
        runs,
        systems: out,
        improvement_vs_tpib_pct: improvement,
    })
}

fn inspect_checkpoint(path: &Path) -> Result<ExitCode> {
    if let Ok(ckpt) = nn::load_checkpoint(path) {
        let spec = ckpt.spec();
        let info = serde_json::json!({
            "kind": "network",
            "content_id": ckpt.content_id(),
            "input_dim": spec.input_dim,
            "hidden1": spec.hidden1,
            "hidden2": spec.hidden2,
            "output_dim": spec.output_dim,
            "num_params": ckpt.num_params(),
            "meta": ckpt.meta,
        });
        println!("{}", serde_json::to_string_pretty(&info)?);
        return Ok(ExitCode::SUCCESS);
    }
    let gmm = diarize_core::gmm::load_gmm(path)
        .map_err(|e| anyhow!("{}: neither network nor GMM checkpoint ({e})", path.display()))?;
    let info = serde_json::json!({
        "kind": "gmm",
        "components": gmm.k(),
        "dim": gmm.dim(),
        "weights": gmm.weights,
    });
    println!("{}", serde_json::to_string_pretty(&info)?);
    Ok(ExitCode::SUCCESS)
}

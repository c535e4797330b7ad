//! Command-line pipeline. Every command ends by printing one JSON summary
//! line on stdout; diagnostics go to stderr.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use foley_core::audio_io::{load_wav, peak_normalize, resample, save_wav, segment, wav_bytes, AudioBuffer, BitDepth, PadPolicy, CANONICAL_RATE};
use foley_core::checkpoint::{load_checkpoint, save_checkpoint, ModelBundle};
use foley_core::dataset::{build_manifest, leakage_violations, split_dataset, LabelRule, Manifest, ManifestEntry, Split};
use foley_core::discriminator::{Discriminator, DiscriminatorConfig};
use foley_core::fx::{augment_corpus, PostChainParams, SourceSegment};
use foley_core::latent::{embed_2d, embedding_csv, mix_latents, silhouette, EmbedMethod, LatentPost, MixMode};
use foley_core::metrics::{evaluate_regeneration, material_fad_matrix, EmbeddingConfig, Group};
use foley_core::synth::two_material_corpus;
use foley_core::trainer::{train_stage1, train_stage2};
use foley_core::vae::{LatentTrajectory, ModelConfig, Profile, Vae};
use foley_core::Error as CoreError;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::AppConfig;
use crate::engine::measure_realtime_factor;
use crate::model::{frames_for, render_trajectory, DecodeRequest, LoadedModel};
use crate::server::{router, AppState};

#[derive(Debug, Parser)]
#[command(name = "foley", version, about = "Foley sound VAE pipeline: data, training, evaluation, latent control and serving")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub profile: Option<ProfileArg>,
    #[arg(long, global = true)]
    pub port: Option<u16>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ProfileArg {
    Tiny,
    Full,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PadArg {
    ZeroPad,
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Pca,
    Tsne,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the synthetic two-material corpus as `<out>/<material>/*.wav`.
    SynthCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        clips: usize,
        #[arg(long, default_value_t = 1.0)]
        seconds: f64,
    },
    /// Resample, normalize and segment `<root>/<material>/*.wav`, then split.
    Ingest {
        #[arg(long)]
        root: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Label every file with this material instead of its directory.
        #[arg(long)]
        label: Option<String>,
        #[arg(long)]
        segment_seconds: Option<f64>,
        #[arg(long)]
        min_keep_seconds: Option<f64>,
        #[arg(long, value_enum)]
        pad: Option<PadArg>,
        #[arg(long)]
        test_fraction: Option<f64>,
    },
    /// Add one effected variant per clip; variants keep their source's split.
    Augment {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    Train {
        #[command(subcommand)]
        stage: TrainStage,
    },
    /// Regeneration metrics on a split, with the material FAD matrix.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Also write the regenerated clips.
        #[arg(long)]
        write_audio: bool,
    },
    Latent {
        #[command(subcommand)]
        action: LatentAction,
    },
    /// Render a latent or control vector to a WAV file.
    Decode {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated latent vector (all latent dimensions).
        #[arg(long, conflicts_with = "controls")]
        latent: Option<String>,
        /// Comma-separated control vector (k values).
        #[arg(long)]
        controls: Option<String>,
        #[arg(long, default_value_t = 1.0)]
        duration: f64,
        /// JSON post-chain parameters.
        #[arg(long)]
        postchain: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// HTTP + WebSocket service.
    Serve {
        /// Checkpoint to serve; the model id is the file stem. Repeatable.
        #[arg(long, required = true)]
        checkpoint: Vec<PathBuf>,
        #[arg(long)]
        host: Option<String>,
    },
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum TrainStage {
    /// Spectral + KL training; fits the latent controls at the end.
    Stage1 {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        /// Start from this checkpoint's weights.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Training log; defaults to `<out>.train.jsonl`.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Adversarial refinement of the decoder.
    Stage2 {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
    },
}

#[derive(Debug, Subcommand)]
pub enum LatentAction {
    /// Prune uninformative dimensions and fit the control space.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        /// Defaults to rewriting the input checkpoint.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        fidelity: Option<f64>,
    },
    /// 2-D embedding of per-clip mean latents, written as CSV.
    Embed {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "tsne")]
        method: MethodArg,
        #[arg(long)]
        perplexity: Option<f64>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Encode clips, sum their latent trajectories and decode the result.
    Mix {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "input", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        /// Comma-separated weights; plain sum when omitted.
        #[arg(long)]
        weights: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parse, run and report. Returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let name = command_name(&cli.command);
    match run(cli) {
        Ok(summary) => {
            println!("{}", summary_line(name, "ok", summary));
            0
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            println!("{}", summary_line(name, "error", json!({ "error": format!("{e:#}") })));
            1
        }
    }
}

fn summary_line(command: &str, status: &str, fields: Value) -> String {
    let mut m = serde_json::Map::new();
    m.insert("command".into(), json!(command));
    m.insert("status".into(), json!(status));
    if let Value::Object(f) = fields {
        m.extend(f);
    }
    Value::Object(m).to_string()
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::SynthCorpus { .. } => "synth-corpus",
        Command::Ingest { .. } => "ingest",
        Command::Augment { .. } => "augment",
        Command::Train {
            stage: TrainStage::Stage1 { .. },
        } => "train stage1",
        Command::Train {
            stage: TrainStage::Stage2 { .. },
        } => "train stage2",
        Command::Eval { .. } => "eval",
        Command::Latent {
            action: LatentAction::Fit { .. },
        } => "latent fit",
        Command::Latent {
            action: LatentAction::Embed { .. },
        } => "latent embed",
        Command::Latent {
            action: LatentAction::Mix { .. },
        } => "latent mix",
        Command::Decode { .. } => "decode",
        Command::Serve { .. } => "serve",
    }
}

fn settings(cli: &Cli) -> anyhow::Result<AppConfig> {
    let mut cfg = match &cli.config {
        Some(p) => AppConfig::load(p)?,
        None => AppConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(p) = cli.profile {
        cfg.profile = match p {
            ProfileArg::Tiny => Profile::Tiny,
            ProfileArg::Full => Profile::Full,
        };
    }
    if let Some(p) = cli.port {
        cfg.service.port = p;
    }
    cfg.train.seed = cfg.seed;
    Ok(cfg)
}

pub fn run(cli: Cli) -> anyhow::Result<Value> {
    let cfg = settings(&cli)?;
    match cli.command {
        Command::SynthCorpus { out, clips, seconds } => synth_corpus(&out, clips, seconds, cfg.seed),
        Command::Ingest {
            root,
            out,
            label,
            segment_seconds,
            min_keep_seconds,
            pad,
            test_fraction,
        } => {
            let mut seg = cfg.ingest.segment;
            if let Some(s) = segment_seconds {
                seg.segment_seconds = s;
            }
            if let Some(s) = min_keep_seconds {
                seg.min_keep_seconds = s;
            }
            if let Some(p) = pad {
                seg.pad_policy = match p {
                    PadArg::ZeroPad => PadPolicy::ZeroPad,
                    PadArg::Drop => PadPolicy::Drop,
                };
            }
            let rule = label.map_or(LabelRule::DirectoryName, LabelRule::Fixed);
            ingest(&root, &out, &rule, &seg, test_fraction.unwrap_or(cfg.ingest.test_fraction), cfg.seed)
        }
        Command::Augment { manifest, out } => augment(&manifest, &out, cfg.seed),
        Command::Train { stage } => match stage {
            TrainStage::Stage1 {
                manifest,
                out,
                steps,
                init,
                log,
            } => stage1(&cfg, &manifest, &out, steps, init.as_deref(), log),
            TrainStage::Stage2 { data, out, steps } => stage2(&cfg, &data, &out, steps),
        },
        Command::Eval {
            data,
            out,
            split,
            write_audio,
        } => eval(&data, &out, split, write_audio),
        Command::Latent { action } => match action {
            LatentAction::Fit {
                data,
                out,
                tau,
                fidelity,
            } => latent_fit(
                &data,
                out.as_deref(),
                tau.unwrap_or(cfg.latent.prune_threshold),
                fidelity.unwrap_or(cfg.latent.fidelity),
            ),
            LatentAction::Embed {
                data,
                out,
                method,
                perplexity,
                split,
            } => latent_embed(&data, &out, method, perplexity.unwrap_or(cfg.latent.perplexity), split, cfg.seed),
            LatentAction::Mix {
                checkpoint,
                inputs,
                weights,
                out,
            } => latent_mix(&checkpoint, &inputs, weights.as_deref(), &out),
        },
        Command::Decode {
            checkpoint,
            latent,
            controls,
            duration,
            postchain,
            out,
        } => decode(&cfg, &checkpoint, latent, controls, duration, postchain.as_deref(), &out),
        Command::Serve { checkpoint, host } => serve(&cfg, &checkpoint, host),
    }
}

fn parse_list(s: &str) -> anyhow::Result<Vec<f64>> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().with_context(|| format!("not a number: {t:?}")))
        .collect()
}

fn manifest_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn load_at_rate(path: &Path) -> anyhow::Result<AudioBuffer> {
    let b = load_wav(path)?;
    Ok(if b.sample_rate == CANONICAL_RATE {
        b
    } else {
        resample(&b, CANONICAL_RATE)?
    })
}

fn load_split(manifest: &Path, split: Option<Split>) -> anyhow::Result<Vec<(ManifestEntry, AudioBuffer)>> {
    let m = Manifest::load(manifest)?;
    let base = manifest_dir(manifest);
    let items = m
        .entries
        .iter()
        .filter(|e| split.is_none_or(|s| e.split == s))
        .map(|e| Ok((e.clone(), load_at_rate(&m.resolve(e, &base))?)))
        .collect::<anyhow::Result<Vec<_>>>()?;
    if items.is_empty() {
        bail!("manifest {} has no entries in the requested split", manifest.display());
    }
    Ok(items)
}

fn to_split(s: SplitArg) -> Split {
    match s {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
    }
}

fn synth_corpus(out: &Path, clips: usize, seconds: f64, seed: u64) -> anyhow::Result<Value> {
    if clips == 0 || !(seconds > 0.0) {
        bail!("--clips and --seconds must be positive");
    }
    let mut hasher = Sha256::new();
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, (material, clip)) in two_material_corpus(clips, seconds, seed).into_iter().enumerate() {
        let dir = out.join(material);
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let bytes = wav_bytes(&clip, BitDepth::Float32)?;
        hasher.update(&bytes);
        let path = dir.join(format!("{material}_{i:04}.wav"));
        std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        *counts.entry(material).or_default() += 1;
    }
    Ok(json!({ "out": out, "clips": clips, "materials": counts, "sha256": hex::encode(hasher.finalize()) }))
}

fn ingest(
    root: &Path,
    out: &Path,
    rule: &LabelRule,
    seg: &foley_core::audio_io::SegmentSpec,
    test_fraction: f64,
    seed: u64,
) -> anyhow::Result<Value> {
    seg.validate()?;
    let raw = build_manifest(root, rule)?;
    let mut entries = Vec::new();
    for src in &raw.entries {
        let audio = peak_normalize(&load_at_rate(&raw.resolve(src, root))?);
        for (i, s) in segment(&audio, seg)?.into_iter().enumerate() {
            let id = format!("{}_s{i:03}", src.id);
            let rel = format!("{id}.wav");
            let path = out.join(&rel);
            if let Some(dir) = path.parent() {
                std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            save_wav(&s, &path, BitDepth::Float32)?;
            entries.push(ManifestEntry {
                id,
                path: rel,
                material: src.material.clone(),
                source: src.id.clone(),
                duration_s: s.duration_s(),
                sample_rate: s.sample_rate,
                split: Split::Train,
                augmentation: None,
            });
        }
    }
    if entries.is_empty() {
        bail!("no segment reached the minimum length");
    }
    let m = split_dataset(&Manifest::new(entries), test_fraction, seed)?;
    let path = out.join("manifest.json");
    m.save(&path)?;
    Ok(json!({
        "manifest": path,
        "sources": raw.entries.len(),
        "entries": m.entries.len(),
        "train": m.split(Split::Train).count(),
        "test": m.split(Split::Test).count(),
    }))
}

fn augment(manifest: &Path, out: &Path, seed: u64) -> anyhow::Result<Value> {
    let m = Manifest::load(manifest)?;
    let base = manifest_dir(manifest);
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let originals: Vec<&ManifestEntry> = m.entries.iter().filter(|e| e.augmentation.is_none()).collect();
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    let mut segments = Vec::with_capacity(originals.len());
    for e in &originals {
        let idx = seen.entry(e.source.as_str()).or_default();
        segments.push(SourceSegment {
            source_id: e.source.clone(),
            segment_index: *idx,
            audio: load_at_rate(&m.resolve(e, &base))?,
        });
        *idx += 1;
    }
    let (variants, records) = augment_corpus(&segments, seed)?;
    let mut hasher = Sha256::new();
    let mut entries = Vec::with_capacity(originals.len() * 2);
    let write = |rel: &str, buf: &AudioBuffer, hasher: &mut Sha256| -> anyhow::Result<()> {
        let bytes = wav_bytes(buf, BitDepth::Float32)?;
        hasher.update(&bytes);
        let path = out.join(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))
    };
    for ((e, seg), (v, rec)) in originals.iter().zip(&segments).zip(variants.iter().zip(records)) {
        let rel = format!("{}.wav", e.id);
        write(&rel, &seg.audio, &mut hasher)?;
        entries.push(ManifestEntry {
            path: rel,
            ..(*e).clone()
        });
        let id = format!("{}_fx_{}", e.id, format!("{:?}", rec.effect.kind()).to_lowercase());
        let rel = format!("{id}.wav");
        write(&rel, v, &mut hasher)?;
        entries.push(ManifestEntry {
            id,
            path: rel,
            duration_s: v.duration_s(),
            sample_rate: v.sample_rate,
            augmentation: Some(rec),
            ..(*e).clone()
        });
    }
    let out_manifest = Manifest::new(entries);
    let leaks = leakage_violations(&out_manifest);
    if !leaks.is_empty() {
        bail!("augmentation produced {} split-leakage violations", leaks.len());
    }
    let path = out.join("manifest.json");
    out_manifest.save(&path)?;
    hasher.update(std::fs::read(&path).with_context(|| format!("reading {}", path.display()))?);
    Ok(json!({
        "manifest": path,
        "originals": originals.len(),
        "variants": variants.len(),
        "seed": seed,
        "sha256": hex::encode(hasher.finalize()),
    }))
}

fn save_bundle(bundle: &ModelBundle, out: &Path) -> anyhow::Result<()> {
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    save_checkpoint(bundle, out)?;
    Ok(())
}

fn fit_latent_or_warn(model: &Vae<f32>, clips: &[AudioBuffer], tau: f64, fidelity: f64) -> anyhow::Result<Option<LatentPost>> {
    match LatentPost::fit_model(model, clips, tau, fidelity) {
        Ok(l) => Ok(Some(l)),
        Err(CoreError::NoInformation) => {
            eprintln!("warning: every latent dimension is below the prune threshold {tau}; no control space fitted");
            Ok(None)
        }
        Err(e) => Err(e.into()),
    }
}

fn stage1(
    cfg: &AppConfig,
    manifest: &Path,
    out: &Path,
    steps: Option<usize>,
    init: Option<&Path>,
    log: Option<PathBuf>,
) -> anyhow::Result<Value> {
    let clips: Vec<AudioBuffer> = load_split(manifest, Some(Split::Train))?.into_iter().map(|(_, a)| a).collect();
    let mut tc = cfg.train.clone();
    if let Some(s) = steps {
        tc.steps_stage1 = s;
    }
    let mut bundle = match init {
        Some(p) => load_checkpoint(p)?,
        None => ModelBundle::new(Vae::new(ModelConfig::for_profile(cfg.profile), cfg.seed)?),
    };
    let log_data = train_stage1(&mut bundle.model, &clips, &tc)?;
    bundle.latent = fit_latent_or_warn(&bundle.model, &clips, cfg.latent.prune_threshold, cfg.latent.fidelity)?;
    save_bundle(&bundle, out)?;
    let log_path = log.unwrap_or_else(|| PathBuf::from(format!("{}.train.jsonl", out.display())));
    std::fs::write(&log_path, log_data.to_jsonl()).with_context(|| format!("writing {}", log_path.display()))?;
    let last = log_data.records.last();
    Ok(json!({
        "checkpoint": out,
        "log": log_path,
        "steps": log_data.records.len(),
        "train_clips": log_data.train_clips,
        "val_clips": log_data.val_clips,
        "final_loss": last.map(|r| r.loss_total),
        "best_step": log_data.best_step,
        "best_val_spectral": log_data.best_val,
        "k": bundle.latent.as_ref().map(|l| l.k()),
        "elapsed_s": log_data.elapsed_s,
    }))
}

fn stage2(cfg: &AppConfig, data: &DataArgs, out: &Path, steps: Option<usize>) -> anyhow::Result<Value> {
    let clips: Vec<AudioBuffer> = load_split(&data.manifest, Some(Split::Train))?.into_iter().map(|(_, a)| a).collect();
    let mut tc = cfg.train.clone();
    if let Some(s) = steps {
        tc.steps_stage2 = s;
    }
    let mut bundle = load_checkpoint(&data.checkpoint)?;
    let mut disc = match bundle.discriminator.take() {
        Some(d) => d,
        None => Discriminator::new(DiscriminatorConfig::default(), cfg.seed)?,
    };
    let n_enc = bundle.model.encoder_tensor_count();
    let before: Vec<Vec<u32>> = encoder_bits(&bundle.model, n_enc);
    let log = train_stage2(&mut bundle.model, &mut disc, &clips, &tc)?;
    let frozen = before == encoder_bits(&bundle.model, n_enc);
    if !frozen {
        bail!("encoder parameters changed during adversarial refinement");
    }
    bundle.discriminator = Some(disc);
    save_bundle(&bundle, out)?;
    let last = log.records.last();
    Ok(json!({
        "checkpoint": out,
        "steps": log.records.len(),
        "encoder_frozen": frozen,
        "disc_loss": last.map(|r| r.disc_loss),
        "gen_spectral": last.map(|r| r.gen_spectral),
        "elapsed_s": log.elapsed_s,
    }))
}

fn encoder_bits(model: &Vae<f32>, n: usize) -> Vec<Vec<u32>> {
    model.params.tensors[..n]
        .iter()
        .map(|t| t.data.iter().map(|v| v.to_bits()).collect())
        .collect()
}

fn group_by_material(items: &[(ManifestEntry, AudioBuffer)], audio: &[AudioBuffer]) -> Vec<Group> {
    let mut groups: BTreeMap<String, Vec<AudioBuffer>> = BTreeMap::new();
    for ((e, _), a) in items.iter().zip(audio) {
        groups.entry(e.material.clone()).or_default().push(a.clone());
    }
    groups.into_iter().collect()
}

fn eval(data: &DataArgs, out: &Path, split: SplitArg, write_audio: bool) -> anyhow::Result<Value> {
    let items = load_split(&data.manifest, Some(to_split(split)))?;
    let bundle = load_checkpoint(&data.checkpoint)?;
    let named: Vec<(String, AudioBuffer)> = items.iter().map(|(e, a)| (e.id.clone(), a.clone())).collect();
    let cfg = EmbeddingConfig::default();
    let (report, regens) = evaluate_regeneration(&bundle.model, &named, &cfg)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let originals: Vec<AudioBuffer> = items.iter().map(|(_, a)| a.clone()).collect();
    let matrix = material_fad_matrix(&group_by_material(&items, &originals), Some(&group_by_material(&items, &regens)), &cfg);
    let (matrix_json, matrix_note) = match &matrix {
        Ok(m) => {
            std::fs::write(out.join("fad_matrix.csv"), m.to_csv()).context("writing fad_matrix.csv")?;
            (serde_json::to_value(m)?, None)
        }
        Err(e) => (Value::Null, Some(e.to_string())),
    };
    if write_audio {
        for ((id, _), y) in named.iter().zip(&regens) {
            let path = out.join("regen").join(format!("{id}.wav"));
            std::fs::create_dir_all(path.parent().expect("has parent")).context("creating regen dir")?;
            save_wav(y, &path, BitDepth::Float32)?;
        }
    }
    let doc = json!({ "report": report, "fad_matrix": matrix_json, "fad_matrix_note": matrix_note });
    let report_path = out.join("report.json");
    std::fs::write(&report_path, serde_json::to_string_pretty(&doc)? + "\n").context("writing report.json")?;
    Ok(json!({
        "report": report_path,
        "clips": report.clips.len(),
        "mel_mse_mean": report.mel_mse.mean,
        "spectral_distance_mean": report.spectral_distance.mean,
        "fad": report.fad,
    }))
}

fn latent_fit(data: &DataArgs, out: Option<&Path>, tau: f64, fidelity: f64) -> anyhow::Result<Value> {
    let clips: Vec<AudioBuffer> = load_split(&data.manifest, Some(Split::Train))?.into_iter().map(|(_, a)| a).collect();
    let mut bundle = load_checkpoint(&data.checkpoint)?;
    let post = LatentPost::fit_model(&bundle.model, &clips, tau, fidelity)?;
    let summary = json!({
        "kept_dims": post.kept_dims,
        "k": post.k(),
        "explained_variance": post.cumulative_explained(),
    });
    bundle.latent = Some(post);
    let out = out.unwrap_or(&data.checkpoint);
    save_bundle(&bundle, out)?;
    let mut s = summary;
    s["checkpoint"] = json!(out);
    Ok(s)
}

fn latent_embed(data: &DataArgs, out: &Path, method: MethodArg, perplexity: f64, split: SplitArg, seed: u64) -> anyhow::Result<Value> {
    let items = load_split(&data.manifest, Some(to_split(split)))?;
    let bundle = load_checkpoint(&data.checkpoint)?;
    let fr = bundle.model.frame_rate();
    let mut points = Vec::with_capacity(items.len());
    for (_, a) in &items {
        let z = bundle.model.encode_audio(a)?.mean(fr);
        let mut m = vec![0.0; z.dim];
        for row in z.rows() {
            m.iter_mut().zip(row).for_each(|(acc, v)| *acc += v / z.frames as f64);
        }
        points.push(m);
    }
    let method = match method {
        MethodArg::Pca => EmbedMethod::Pca2,
        MethodArg::Tsne => EmbedMethod::Tsne {
            perplexity: perplexity.min((items.len() as f64 - 1.0) / 3.0).max(1.0),
            seed,
        },
    };
    let emb = embed_2d(&points, &method)?;
    let ids: Vec<String> = items.iter().map(|(e, _)| e.id.clone()).collect();
    let labels: Vec<String> = items.iter().map(|(e, _)| e.material.clone()).collect();
    let mut names: Vec<&String> = labels.iter().collect();
    names.sort();
    names.dedup();
    let idx: Vec<usize> = labels.iter().map(|l| names.binary_search(&l).expect("present")).collect();
    std::fs::write(out, embedding_csv(&ids, &emb, &labels)).with_context(|| format!("writing {}", out.display()))?;
    Ok(json!({
        "out": out,
        "points": ids.len(),
        "silhouette": if names.len() > 1 { Some(silhouette(&emb.coords, &idx)) } else { None },
        "final_objective": emb.objective.last().map(|o| o.1),
    }))
}

fn latent_mix(checkpoint: &Path, inputs: &[PathBuf], weights: Option<&str>, out: &Path) -> anyhow::Result<Value> {
    let m = LoadedModel::new("mix", load_checkpoint(checkpoint)?)?;
    let zs = inputs
        .iter()
        .map(|p| {
            let x = m.prepare_input(&load_wav(p)?)?;
            Ok(m.model.encode_audio(&x)?.mean(m.frame_rate()))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let mode = match weights {
        Some(w) => MixMode::Weighted(parse_list(w)?),
        None => MixMode::Sum,
    };
    let z = mix_latents(&zs, &mode)?;
    let req = DecodeRequest {
        latent: Some(z.rows()),
        ..Default::default()
    };
    let y = m.render(&req, f64::INFINITY)?;
    save_wav(&y, out, BitDepth::Float32)?;
    Ok(json!({ "out": out, "inputs": inputs.len(), "frames": z.frames, "samples": y.len(), "peak": y.peak() }))
}

fn decode(
    cfg: &AppConfig,
    checkpoint: &Path,
    latent: Option<String>,
    controls: Option<String>,
    duration: f64,
    postchain: Option<&Path>,
    out: &Path,
) -> anyhow::Result<Value> {
    let bundle = load_checkpoint(checkpoint)?;
    let postchain: Option<PostChainParams> = match postchain {
        Some(p) => Some(serde_json::from_str(&std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?),
        None => None,
    };
    let y = match (latent, controls) {
        (Some(l), None) => {
            // Raw latent decoding needs no control space.
            let z = parse_list(&l)?;
            let d = bundle.model.config.latent_dim;
            if z.len() != d {
                bail!("--latent needs {d} values, got {}", z.len());
            }
            let max = cfg.service.server.max_duration_s;
            if !(duration > 0.0 && duration <= max) {
                bail!("--duration must be in (0, {max}] seconds");
            }
            let samples = (duration * bundle.model.config.sample_rate as f64).round() as usize;
            let rows = vec![z; frames_for(&bundle.model, samples)];
            let traj = LatentTrajectory::from_rows(&rows, bundle.model.frame_rate())?;
            render_trajectory(&bundle.model, &traj, samples, postchain.as_ref())?
        }
        (None, Some(c)) => {
            let m = LoadedModel::new("decode", bundle)?;
            let req = DecodeRequest {
                controls: Some(parse_list(&c)?),
                duration_s: Some(duration),
                postchain,
                ..Default::default()
            };
            m.render(&req, cfg.service.server.max_duration_s)?
        }
        _ => bail!("give exactly one of --latent or --controls"),
    };
    if !y.is_finite() {
        bail!("decoded audio is not finite");
    }
    save_wav(&y, out, BitDepth::Float32)?;
    Ok(json!({ "out": out, "samples": y.len(), "sample_rate": y.sample_rate, "peak": y.peak() }))
}

fn serve(cfg: &AppConfig, checkpoints: &[PathBuf], host: Option<String>) -> anyhow::Result<Value> {
    let mut models = Vec::with_capacity(checkpoints.len());
    let mut rtf = BTreeMap::new();
    for p in checkpoints {
        let id = p
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .with_context(|| format!("no file name in {}", p.display()))?;
        let mut m = LoadedModel::new(id.clone(), load_checkpoint(p)?)?;
        let r = measure_realtime_factor(Arc::new(m.clone()), cfg.service.server.engine, 16)?;
        m.realtime_factor = Some(r);
        rtf.insert(id, r);
        models.push(m);
    }
    let host = host.unwrap_or_else(|| cfg.service.host.clone());
    let state = AppState::new(models, cfg.service.server);
    let rt = tokio::runtime::Runtime::new().context("starting runtime")?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind((host.as_str(), cfg.service.port))
            .await
            .with_context(|| format!("binding {host}:{}", cfg.service.port))?;
        let addr = listener.local_addr()?;
        // Announce before serving so scripts can pick up the bound port.
        println!(
            "{}",
            summary_line("serve", "listening", json!({ "addr": addr.to_string(), "port": addr.port(), "realtime_factor": rtf }))
        );
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .context("server error")?;
        Ok(json!({ "addr": addr.to_string() }))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_command_exits_with_usage_code() {
        assert_eq!(run_from(["foley", "frobnicate"]), 2);
        assert_eq!(run_from(["foley"]), 2);
        assert_eq!(run_from(["foley", "train", "stage3"]), 2);
    }

    #[test]
    fn global_flags_override_config() {
        let cli = Cli::try_parse_from(["foley", "synth-corpus", "--out", "x", "--seed", "9", "--profile", "full", "--port", "1234"]).unwrap();
        let cfg = settings(&cli).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.train.seed, 9);
        assert_eq!(cfg.profile, Profile::Full);
        assert_eq!(cfg.service.port, 1234);
    }

    #[test]
    fn summary_is_one_json_line() {
        let s = summary_line("decode", "ok", json!({ "samples": 3 }));
        assert!(!s.contains('\n'));
        let v: Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["command"], "decode");
        assert_eq!(v["samples"], 3);
    }

    #[test]
    fn list_parsing() {
        assert_eq!(parse_list("0, 1.5,-2").unwrap(), vec![0.0, 1.5, -2.0]);
        assert!(parse_list("0,,1").is_err());
    }
}

//! Subcommand implementations. Each takes the shared [`Globals`] plus its own
//! arguments and reports failures as [`CliError`].

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::Args;
use diarize_core::checkpoint::Checkpoint;
use diarize_core::clustering::{KMeans, XMeans};
use diarize_core::metrics::{der, rttm, segments_to_annotation, Annotation, DerBreakdown, LabeledSegment};
use diarize_core::trainer::{grid_search, TrainError, TrainEvent, Trainer};
use diarize_core::{Encoder, Matrix, Segment};

use crate::config::RunConfig;
use crate::dataset::{featurize_cached, featurize_manifest};
use crate::embeddings::{write_embeddings, EmbeddingRecord};
use crate::error::CliError;
use crate::manifest::{Manifest, ManifestEntry};
use crate::synth::{synthesize, SynthSpec};

/// Flags accepted by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct Globals {
    /// Run configuration (JSON); defaults apply to missing fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

impl Globals {
    pub fn run_config(&self) -> Result<RunConfig, CliError> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        Ok(config)
    }

    /// The output directory, created if missing.
    pub fn out_dir(&self) -> Result<&Path, CliError> {
        let dir = self.out.as_deref().ok_or_else(|| CliError::Usage("--out <dir> is required".into()))?;
        fs::create_dir_all(dir).map_err(CliError::io(format!("creating {}", dir.display())))?;
        Ok(dir)
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(CliError::io(format!("writing {}", path.display())))
}

fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<(), CliError> {
    let file = File::create(path).map_err(CliError::io(format!("writing {}", path.display())))?;
    checkpoint.write(BufWriter::new(file))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    let file = File::open(path).map_err(CliError::io(format!("reading {}", path.display())))?;
    Checkpoint::read(std::io::BufReader::new(file)).map_err(CliError::from)
}

fn load_manifest_features(path: &Path, config: &RunConfig, cache: Option<&Path>, labeled: bool) -> Result<Vec<Segment>, CliError> {
    let manifest = Manifest::load(path)?;
    if labeled {
        manifest.require_speakers(path)?;
    }
    let segments = match cache {
        Some(dir) => featurize_cached(&manifest, &config.features, dir)?,
        None => featurize_manifest(&manifest, &config.features)?,
    };
    log::info!("{}: {} entries, {} segments", path.display(), manifest.entries.len(), segments.len());
    Ok(segments)
}

/// Features configuration and model from a checkpoint. The stored config is
/// used when it is a full run config; otherwise the current one supplies the
/// feature settings.
fn model_from_checkpoint(path: &Path, fallback: &RunConfig) -> Result<(RunConfig, Encoder), CliError> {
    let checkpoint = load_checkpoint(path)?;
    let model = Encoder::from_checkpoint(&checkpoint)?;
    let mut config = RunConfig::from_json(&checkpoint.config_json).unwrap_or_else(|_| fallback.clone());
    config.encoder = model.config().clone();
    if config.features.feature_dim() != model.config().input_dim {
        return Err(CliError::Usage(format!(
            "checkpoint expects {}-dimensional features, configuration yields {}",
            model.config().input_dim,
            config.features.feature_dim()
        )));
    }
    Ok((config, model))
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Labeled training manifest.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Labeled dev manifest scored every eval_interval iterations.
    #[arg(long)]
    pub dev: Option<PathBuf>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Feature cache directory.
    #[arg(long)]
    pub cache: Option<PathBuf>,
}

/// Writes `config.json`, `train.log`, `checkpoint-<iter>.dkc` every
/// checkpoint interval and `final.dkc`. A non-finite loss leaves the last
/// good state in `failure.dkc`.
pub fn cmd_train(globals: &Globals, args: &TrainArgs) -> Result<(), CliError> {
    let config = globals.run_config()?;
    config.validate().map_err(|message| CliError::Config { path: globals.config.clone().unwrap_or_default(), message })?;
    let out = globals.out_dir()?;
    config.save(&out.join("config.json"))?;
    let train = load_manifest_features(&args.manifest, &config, args.cache.as_deref(), true)?;
    let dev = args.dev.as_deref().map(|p| load_manifest_features(p, &config, None, true)).transpose()?;

    let mut trainer = match &args.resume {
        Some(path) => Trainer::resume(&load_checkpoint(path)?, config.train_config(), &train)?,
        None => Trainer::new(Encoder::init(config.encoder.clone(), config.seed)?, config.train_config(), &train)?,
    };
    let excluded = trainer.index().excluded();
    if !excluded.is_empty() {
        log::warn!("{} speaker(s) below {} segments ignored", excluded.len(), config.training.min_segments);
    }
    let log_path = out.join("train.log");
    let log_file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(args.resume.is_some())
        .truncate(args.resume.is_none())
        .open(&log_path)
        .map_err(CliError::io(format!("opening {}", log_path.display())))?;
    let mut log_out = BufWriter::new(log_file);
    let config_json = config.to_json();
    let every = config.training.checkpoint_interval;
    let mut io_error = None;
    let result = trainer.run(&train, dev.as_deref(), |t, event| {
        let TrainEvent::Step(record, eval) = event;
        let written = writeln!(log_out, "{}", record.log_line(eval))
            .and_then(|_| log_out.flush())
            .map_err(CliError::io("writing train.log"))
            .and_then(|_| match every > 0 && record.iteration % every == 0 {
                true => save_checkpoint(&out.join(format!("checkpoint-{:06}.dkc", record.iteration)), &t.to_checkpoint(config_json.clone())),
                false => Ok(()),
            });
        if let Some(e) = eval {
            log::info!("iteration {}: nmi {:.4} purity {:.4}", e.iteration, e.nmi, e.purity);
        }
        written.map_err(|e| {
            let message = e.to_string();
            io_error = Some(e);
            TrainError::Config(message)
        })
    });
    if let Some(e) = io_error {
        return Err(e);
    }
    if let Err(e) = result {
        if matches!(e, TrainError::NonFiniteLoss { .. }) {
            save_checkpoint(&out.join("failure.dkc"), &trainer.to_checkpoint(config_json))?;
        }
        return Err(e.into());
    }
    save_checkpoint(&out.join("final.dkc"), &trainer.to_checkpoint(config_json))?;
    log::info!("trained to iteration {}", trainer.iteration());
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
}

fn embed_segments(model: &Encoder, segments: &[Segment]) -> Result<Matrix<f64>, CliError> {
    let frames: Vec<&Matrix<f64>> = segments.iter().map(|s| &s.frames).collect();
    Ok(model.embed_batch(&frames)?)
}

/// Writes `embeddings.bin`, one record per segment in manifest order.
pub fn cmd_embed(globals: &Globals, args: &EmbedArgs) -> Result<(), CliError> {
    let (config, model) = model_from_checkpoint(&args.checkpoint, &globals.run_config()?)?;
    let out = globals.out_dir()?;
    let segments = load_manifest_features(&args.manifest, &config, None, false)?;
    let embeddings = embed_segments(&model, &segments)?;
    let records: Vec<EmbeddingRecord> = segments
        .iter()
        .zip(embeddings.iter_rows())
        .map(|(s, row)| EmbeddingRecord {
            recording_id: s.recording_id.clone(),
            start: s.segment_start,
            duration: s.segment_duration,
            vector: row.iter().map(|&v| v as f32).collect(),
        })
        .collect();
    let path = out.join("embeddings.bin");
    let mut w = BufWriter::new(File::create(&path).map_err(CliError::io(format!("writing {}", path.display())))?);
    write_embeddings(&mut w, &records).and_then(|_| w.flush()).map_err(CliError::io(format!("writing {}", path.display())))?;
    log::info!("wrote {} embeddings of dimension {}", records.len(), model.embedding_dim());
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct DiarizeArgs {
    /// Recordings with optional speech regions.
    #[arg(long, conflicts_with = "audio", required_unless_present = "audio")]
    pub manifest: Option<PathBuf>,
    /// A single recording; its file stem becomes the uri.
    #[arg(long)]
    pub audio: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Known speaker count; estimated with x-means when absent.
    #[arg(long)]
    pub speakers: Option<usize>,
}

/// Cluster labels renumbered in order of first appearance.
fn relabel(assignments: &[usize]) -> Vec<usize> {
    let mut order: Vec<usize> = Vec::new();
    assignments
        .iter()
        .map(|&a| match order.iter().position(|&o| o == a) {
            Some(i) => i,
            None => {
                order.push(a);
                order.len() - 1
            }
        })
        .collect()
}

/// Diarizes one recording's segments.
pub fn diarize_recording(
    uri: &str,
    model: &Encoder,
    segments: &[Segment],
    speakers: Option<usize>,
    config: &RunConfig,
) -> Result<Annotation, CliError> {
    let embeddings = embed_segments(model, segments)?;
    let c = &config.clustering;
    let k = match speakers {
        Some(k) => k,
        None => {
            let k_max = c.k_max.min(segments.len());
            XMeans::new(c.k_min, k_max).seed(config.seed).n_init(c.n_init).max_iter(c.max_iter).fit(&embeddings)?.estimated_k
        }
    };
    let clusters = KMeans::new(k).seed(config.seed).n_init(c.n_init).max_iter(c.max_iter).fit(&embeddings)?;
    log::info!("{uri}: {} segments, {k} speakers", segments.len());
    let labeled: Vec<LabeledSegment> = segments
        .iter()
        .zip(relabel(&clusters.assignments))
        .map(|(s, label)| LabeledSegment { start: s.segment_start, duration: s.segment_duration, label })
        .collect();
    Ok(segments_to_annotation(uri, &labeled))
}

/// Writes `hypothesis.rttm` covering every recording, in manifest order.
pub fn cmd_diarize(globals: &Globals, args: &DiarizeArgs) -> Result<(), CliError> {
    let (config, model) = model_from_checkpoint(&args.checkpoint, &globals.run_config()?)?;
    let mut config = config;
    if let Some(seed) = globals.seed {
        config.seed = seed;
    }
    if args.speakers.is_some_and(|k| k == 0) {
        return Err(CliError::Usage("--speakers must be positive".into()));
    }
    let out = globals.out_dir()?;
    let manifest = match (&args.manifest, &args.audio) {
        (Some(path), _) => Manifest::load(path)?,
        (None, Some(audio)) => Manifest {
            entries: vec![ManifestEntry {
                audio: audio.clone(),
                recording_id: audio.file_stem().map_or_else(|| "recording".into(), |s| s.to_string_lossy().into_owned()),
                speaker_id: None,
                start: None,
                end: None,
            }],
        },
        (None, None) => return Err(CliError::Usage("diarize needs --manifest or --audio".into())),
    };
    let segments = featurize_manifest(&manifest, &config.features)?;
    let mut uris: Vec<&str> = Vec::new();
    for e in &manifest.entries {
        if !uris.contains(&e.recording_id.as_str()) {
            uris.push(&e.recording_id);
        }
    }
    let mut annotations = Vec::with_capacity(uris.len());
    for uri in uris {
        let own: Vec<Segment> = segments.iter().filter(|s| s.recording_id == uri).cloned().collect();
        if own.is_empty() {
            return Err(CliError::Data(format!("recording {uri} has no full-length segment")));
        }
        annotations.push(diarize_recording(uri, &model, &own, args.speakers, &config)?);
    }
    write_file(&out.join("hypothesis.rttm"), rttm::to_string(&annotations))
}

#[derive(Debug, Clone, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long)]
    pub hypothesis: PathBuf,
    /// Seconds excluded around reference boundaries [default: 0.25 or the config value].
    #[arg(long)]
    pub collar: Option<f64>,
    /// Score overlapped reference speech too.
    #[arg(long)]
    pub keep_overlap: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    pub recordings: Vec<(String, DerBreakdown)>,
    pub overall: DerBreakdown,
}

impl ScoreReport {
    /// `uri  DER%  miss  false-alarm  confusion  scored` rows, then `OVERALL`.
    pub fn to_tsv(&self) -> String {
        let row = |name: &str, b: &DerBreakdown| {
            format!("{name}\t{:.3}%\t{:.3}\t{:.3}\t{:.3}\t{:.3}\n", 100.0 * b.der(), b.miss, b.false_alarm, b.confusion, b.total)
        };
        let mut s = String::from("uri\tder\tmiss\tfalse_alarm\tconfusion\tscored\n");
        for (uri, b) in &self.recordings {
            s.push_str(&row(uri, b));
        }
        s.push_str(&row("OVERALL", &self.overall));
        s
    }
}

fn read_rttm(path: &Path) -> Result<Vec<Annotation>, CliError> {
    let text = fs::read_to_string(path).map_err(CliError::io(format!("reading {}", path.display())))?;
    Ok(rttm::parse(&text)?)
}

/// DER per reference recording and over all of them. Every uri must appear
/// in both files.
pub fn score(reference: &[Annotation], hypothesis: &[Annotation], collar: f64, skip_overlap: bool) -> Result<ScoreReport, CliError> {
    let missing: Vec<&str> = reference.iter().filter(|r| !hypothesis.iter().any(|h| h.uri == r.uri)).map(|r| r.uri.as_str()).collect();
    let extra: Vec<&str> = hypothesis.iter().filter(|h| !reference.iter().any(|r| r.uri == h.uri)).map(|h| h.uri.as_str()).collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(CliError::Data(format!(
            "uri mismatch; missing from hypothesis: [{}]; missing from reference: [{}]",
            missing.join(", "),
            extra.join(", ")
        )));
    }
    let mut recordings = Vec::with_capacity(reference.len());
    let mut overall = DerBreakdown::default();
    for r in reference {
        let h = hypothesis.iter().find(|h| h.uri == r.uri).expect("checked above");
        let b = der(r, h, collar, skip_overlap)?;
        overall += b;
        recordings.push((r.uri.clone(), b));
    }
    Ok(ScoreReport { recordings, overall })
}

/// Prints the report and, with `--out`, saves it as `score.tsv`.
pub fn cmd_score(globals: &Globals, args: &ScoreArgs) -> Result<ScoreReport, CliError> {
    let config = globals.run_config()?;
    let collar = args.collar.unwrap_or(config.eval.collar);
    if !(collar >= 0.0 && collar.is_finite()) {
        return Err(CliError::Usage(format!("collar {collar} must be non-negative")));
    }
    let skip_overlap = config.eval.skip_overlap && !args.keep_overlap;
    let report = score(&read_rttm(&args.reference)?, &read_rttm(&args.hypothesis)?, collar, skip_overlap)?;
    print!("{}", report.to_tsv());
    if globals.out.is_some() {
        write_file(&globals.out_dir()?.join("score.tsv"), report.to_tsv())?;
    }
    Ok(report)
}

#[derive(Debug, Clone, Args)]
pub struct TuneArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub dev: PathBuf,
    /// Comma-separated margins.
    #[arg(long, default_value = "0.4,0.8,1.6")]
    pub alphas: String,
    /// Comma-separated speakers-per-batch values.
    #[arg(long = "speakers-per-batch", default_value = "8,16,32,64")]
    pub speakers_per_batch: String,
    #[arg(long)]
    pub cache: Option<PathBuf>,
}

fn parse_list<T: std::str::FromStr>(flag: &str, text: &str) -> Result<Vec<T>, CliError> {
    let values = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| CliError::Usage(format!("--{flag}: cannot parse {s:?}"))))
        .collect::<Result<Vec<T>, _>>()?;
    if values.is_empty() {
        return Err(CliError::Usage(format!("--{flag}: empty grid")));
    }
    Ok(values)
}

/// Writes `tuning.tsv`: `alpha M iteration nmi purity` per eval point, failed
/// cells as `#` comment lines.
pub fn cmd_tune(globals: &Globals, args: &TuneArgs) -> Result<(), CliError> {
    let alphas: Vec<f64> = parse_list("alphas", &args.alphas)?;
    let ms: Vec<usize> = parse_list("speakers-per-batch", &args.speakers_per_batch)?;
    let config = globals.run_config()?;
    config.validate().map_err(|message| CliError::Config { path: globals.config.clone().unwrap_or_default(), message })?;
    let out = globals.out_dir()?;
    config.save(&out.join("config.json"))?;
    let train = load_manifest_features(&args.manifest, &config, args.cache.as_deref(), true)?;
    let dev = load_manifest_features(&args.dev, &config, None, true)?;
    let cells = grid_search(&alphas, &ms, &config.encoder, config.seed, &config.train_config(), &train, &dev);
    let mut table = String::from("alpha\tM\titeration\tnmi\tpurity\n");
    for cell in &cells {
        match &cell.result {
            Ok(evals) => {
                for e in evals {
                    table.push_str(&format!("{}\t{}\t{}\t{}\t{}\n", cell.margin, cell.speakers_per_batch, e.iteration, e.nmi, e.purity));
                }
            }
            Err(e) => {
                log::warn!("alpha {} M {} failed: {e}", cell.margin, cell.speakers_per_batch);
                table.push_str(&format!("# alpha={} M={} failed: {e}\n", cell.margin, cell.speakers_per_batch));
            }
        }
    }
    write_file(&out.join("tuning.tsv"), table)
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 8)]
    pub speakers: usize,
    #[arg(long, default_value_t = 40)]
    pub segments: usize,
    /// Multi-speaker recordings with a reference RTTM.
    #[arg(long, default_value_t = 0)]
    pub conversations: usize,
    #[arg(long, default_value_t = 6)]
    pub turns: usize,
    #[arg(long, default_value_t = 0.02)]
    pub noise: f64,
}

/// Writes a synthetic corpus and `synth.json` describing it.
pub fn cmd_synth(globals: &Globals, args: &SynthArgs) -> Result<(), CliError> {
    let config = globals.run_config()?;
    let spec = SynthSpec {
        speakers: args.speakers,
        segments_per_speaker: args.segments,
        segment_seconds: config.features.segment_seconds,
        sample_rate: config.features.sample_rate,
        noise: args.noise,
        conversations: args.conversations,
        turns_per_conversation: args.turns,
        seed: config.seed,
    };
    let out = globals.out_dir()?;
    synthesize(&spec, out)?;
    write_file(&out.join("synth.json"), serde_json::to_string_pretty(&spec).expect("spec serializes") + "\n")
}

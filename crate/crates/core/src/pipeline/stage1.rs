use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DatasetManifest, DatasetRecord, DebateConfig, LoadedRecord};
use crate::debate::{
    build_meta_prompt, generate_candidates, partition_verdicts, run_debate, AcceptanceEntry, AcceptanceManifest,
    Clock, DebatePanel, DebateRecord, EndpointKind, Exemplar, LogicalClock, MemorySink, MetaPrompt, OracleSegmenter,
    RetryPolicy, SegmenterEndpoint, SystemClock,
};
use crate::error::{Error, Result};
use crate::prompting::{sample_prompts, PointPromptSet, SamplingParams};
use crate::raster::load_mask;

pub const PROMPT_DIR: &str = "prompts";
pub const DEBATE_DIR: &str = "debates";
pub const MASK_DIR: &str = "masks";
pub const PROGRESS_FILE: &str = "progress.json";
pub const PSEUDO_MANIFEST_FILE: &str = "pseudo_labels.json";

/// Endpoints and prompt used by stage one.
pub struct Stage1Backends {
    pub segmenter: Arc<dyn SegmenterEndpoint>,
    pub panel: DebatePanel,
    pub meta: MetaPrompt,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MetaPromptFile {
    task_description: String,
    exemplars: Vec<Exemplar>,
}

impl Stage1Backends {
    /// Builds endpoints from configuration. An oracle segmenter answers with
    /// each record's ground-truth mask. Relative paths resolve against
    /// `base_dir`.
    pub fn from_config(config: &DebateConfig, manifest: &DatasetManifest, base_dir: &Path) -> Result<Self> {
        let segmenter: Arc<dyn SegmenterEndpoint> = match config.segmenter.kind {
            EndpointKind::Oracle => {
                let mut oracle = OracleSegmenter::new();
                for rec in manifest.usable() {
                    if let Some(path) = &rec.ground_truth {
                        oracle.insert(rec.image_id.clone(), load_mask(path)?);
                    }
                }
                Arc::new(oracle)
            }
            EndpointKind::Remote => config.segmenter.build_remote_segmenter()?,
            EndpointKind::Scripted => return Err(Error::Config("the segmenter cannot be scripted".into())),
        };
        let panel = DebatePanel {
            affirmative: config.affirmative.build_agent(base_dir)?,
            negative: config.negative.build_agent(base_dir)?,
            judge: config.judge.build_agent(base_dir)?,
        };
        let meta = match &config.meta_prompt {
            None => MetaPrompt::default_prompt().with_max_rounds(config.max_rounds)?,
            Some(p) => {
                let path = base_dir.join(p);
                let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                let file: MetaPromptFile =
                    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                build_meta_prompt(file.exemplars, file.task_description, config.max_rounds)?
            }
        };
        Ok(Self { segmenter, panel, meta })
    }
}

#[derive(Debug, Clone)]
pub struct Stage1Options {
    pub sampling: SamplingParams,
    /// Images processed concurrently, further bounded by endpoint limits.
    pub max_parallel: usize,
    /// Logical timestamps instead of wall-clock ones, for reproducible logs.
    pub logical_clock: bool,
    /// Stop after this many newly processed images (the run stays resumable).
    pub max_new_images: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ImageOutcome {
    Done {
        accepted: Vec<AcceptanceEntry>,
        rejected: usize,
        undecided: usize,
    },
    Skipped {
        reason: String,
    },
}

/// Per-image results written after every finished image.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage1Progress {
    pub images: BTreeMap<String, ImageOutcome>,
}

impl Stage1Progress {
    pub fn load_or_default(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Ok(Self::default());
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    fn save(&self, path: &Path) -> Result<()> {
        write_atomically(path, serde_json::to_string_pretty(self)?.as_bytes())
    }

    pub fn manifest(&self) -> AcceptanceManifest {
        let mut m = AcceptanceManifest::new();
        for outcome in self.images.values() {
            if let ImageOutcome::Done { accepted, .. } = outcome {
                m.entries.extend(accepted.iter().cloned());
            }
        }
        m.sort();
        m
    }
}

pub(crate) fn write_atomically(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct Stage1Summary {
    pub manifest: AcceptanceManifest,
    pub progress: Stage1Progress,
    /// False when `max_new_images` stopped the run early.
    pub complete: bool,
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Samples prompts for one record and writes `prompts/<image_id>.jsonl`.
pub fn write_prompts(record: &DatasetRecord, sampling: &SamplingParams, out_dir: &Path) -> Result<PointPromptSet> {
    prompts_for(&record.load()?, sampling, out_dir)
}

fn prompts_for(loaded: &LoadedRecord, sampling: &SamplingParams, out_dir: &Path) -> Result<PointPromptSet> {
    let scribbles = loaded
        .scribbles
        .as_ref()
        .ok_or_else(|| Error::Data(format!("{}: no scribble annotation", loaded.image_id)))?;
    let prompts = sample_prompts(&loaded.image_id, &loaded.image.to_gray(), scribbles, sampling)?;
    let dir = out_dir.join(PROMPT_DIR);
    ensure_dir(&dir)?;
    let path = dir.join(format!("{}.jsonl", loaded.image_id));
    let mut out = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
    prompts.write_jsonl(&mut out)?;
    out.flush().map_err(|e| Error::io(&path, e))?;
    Ok(prompts)
}

fn write_debates(records: &[DebateRecord], path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    for r in records {
        serde_json::to_writer(&mut bytes, &r.to_line())?;
        bytes.push(b'\n');
    }
    write_atomically(path, &bytes)
}

/// Failures that exclude one image instead of ending the run.
fn is_per_image(err: &Error) -> bool {
    matches!(
        err,
        Error::EmptyAnnotation(_) | Error::NoCandidates | Error::Backend(_) | Error::InvalidParameter(_)
    )
}

fn process_image(
    record: &DatasetRecord,
    backends: &Stage1Backends,
    options: &Stage1Options,
    out_dir: &Path,
) -> Result<ImageOutcome> {
    let loaded = record.load()?;
    let prompts = prompts_for(&loaded, &options.sampling, out_dir)?;
    let image = loaded.image;
    let candidates = generate_candidates(
        backends.segmenter.as_ref(),
        &record.image_id,
        &image,
        &prompts,
        RetryPolicy::default(),
    )?;
    let sink = MemorySink::default();
    let mut records = Vec::with_capacity(candidates.len());
    for cand in &candidates {
        let clock: Box<dyn Clock> = if options.logical_clock {
            Box::new(LogicalClock::default())
        } else {
            Box::new(SystemClock)
        };
        records.push(run_debate(
            &record.image_id,
            &image,
            Some(&prompts),
            cand,
            &backends.panel,
            &backends.meta,
            clock.as_ref(),
            &sink,
        )?);
    }
    let debate_dir = out_dir.join(DEBATE_DIR);
    ensure_dir(&debate_dir)?;
    write_debates(&records, &debate_dir.join(format!("{}.jsonl", record.image_id)))?;
    let split = partition_verdicts(&records);
    let mut accepted = AcceptanceManifest::new();
    accepted.accept_records(&records, out_dir, MASK_DIR)?;
    Ok(ImageOutcome::Done {
        accepted: accepted.entries,
        rejected: split.rejected.len(),
        undecided: split.undecided.len(),
    })
}

/// Stage one over every usable record: prompts, candidate masks, debates,
/// and the retained pseudo masks. Progress is saved after each image, and a
/// rerun skips images already recorded there.
pub fn run_stage1(
    manifest: &DatasetManifest,
    backends: &Stage1Backends,
    options: &Stage1Options,
    out_dir: &Path,
) -> Result<Stage1Summary> {
    ensure_dir(out_dir)?;
    let progress_path = out_dir.join(PROGRESS_FILE);
    let progress = Stage1Progress::load_or_default(&progress_path)?;
    let pending: Vec<&DatasetRecord> = manifest
        .usable()
        .filter(|r| !progress.images.contains_key(&r.image_id))
        .collect();
    let limit = options.max_new_images.unwrap_or(usize::MAX);
    let complete = pending.len() <= limit;
    let batch: Vec<&DatasetRecord> = pending.into_iter().take(limit).collect();

    let threads = options
        .max_parallel
        .min(backends.segmenter.max_concurrency())
        .min(backends.panel.concurrency_limit())
        .max(1);
    let progress = Mutex::new(progress);
    let work = |record: &&DatasetRecord| -> Result<()> {
        let outcome = match process_image(record, backends, options, out_dir) {
            Ok(o) => o,
            Err(e) if is_per_image(&e) => {
                tracing::warn!(image_id = %record.image_id, error = %e, "image skipped in stage one");
                ImageOutcome::Skipped { reason: e.to_string() }
            }
            Err(e) => return Err(e),
        };
        let mut p = progress.lock().expect("progress lock poisoned");
        p.images.insert(record.image_id.clone(), outcome);
        p.save(&progress_path)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Invariant(format!("thread pool: {e}")))?;
    pool.install(|| batch.par_iter().try_for_each(work))?;

    let progress = progress.into_inner().expect("progress lock poisoned");
    let manifest = progress.manifest();
    if complete {
        manifest.save(out_dir.join(PSEUDO_MANIFEST_FILE))?;
    }
    Ok(Stage1Summary {
        manifest,
        progress,
        complete,
    })
}

/// Path of the final pseudo-label manifest inside a stage-one directory.
pub fn pseudo_manifest_path(stage1_dir: &Path) -> PathBuf {
    stage1_dir.join(PSEUDO_MANIFEST_FILE)
}

//! Candidate generation and debate-based pseudo-label filtering.
//!
//! Every candidate mask goes to a debate; segmenter confidence is recorded but
//! never used to pre-filter. A debate runs `max_rounds` rounds of
//! affirmative-then-negative turns, each conditioned on the full transcript,
//! and ends with one judge turn whose last line carries the verdict.

mod backends;
mod meta_prompt;
mod overlay;

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

pub use backends::{
    AgentContext, AgentEndpoint, EndpointDescriptor, EndpointKind, OracleSegmenter, RemoteAgent,
    RemoteSegmenter, Script, ScriptSource, ScriptedAgent, SegmenterEndpoint, ADDRESS_ENV,
    CREDENTIALS_ENV,
};
pub use meta_prompt::{build_meta_prompt, default_exemplars, Exemplar, MetaPrompt, DEFAULT_TASK};
pub use overlay::{mask_boundary, render_debate_context, DebateContext};

use crate::error::{BackendError, Error, Result};
use crate::prompting::PointPromptSet;
use crate::raster::{ColorImage, Mask};

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateMask {
    pub mask_id: String,
    pub mask: Mask,
    pub confidence: f64,
    pub prompt_set_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Role {
    Affirmative,
    Negative,
    Judge,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DebateTurn {
    pub role: Role,
    pub round: u32,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Retain,
    Discard,
    /// The debate was aborted; the candidate is excluded from training.
    Undecided,
}

impl Verdict {
    pub fn keyword(self) -> &'static str {
        match self {
            Verdict::Retain => "RETAIN",
            Verdict::Discard => "DISCARD",
            Verdict::Undecided => "UNDECIDED",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timestamps {
    pub started_ms: u64,
    pub finished_ms: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DebateRecord {
    pub image_id: String,
    pub candidate: CandidateMask,
    pub transcript: Vec<DebateTurn>,
    pub verdict: Verdict,
    pub rationale: String,
    pub timestamps: Timestamps,
}

/// One line of the debate log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebateLine {
    pub image_id: String,
    pub mask_id: String,
    pub segmenter_confidence: f64,
    pub transcript: Vec<DebateTurn>,
    pub verdict: Verdict,
    pub rationale: String,
    pub timestamps: Timestamps,
}

impl DebateRecord {
    pub fn to_line(&self) -> DebateLine {
        DebateLine {
            image_id: self.image_id.clone(),
            mask_id: self.candidate.mask_id.clone(),
            segmenter_confidence: self.candidate.confidence,
            transcript: self.transcript.clone(),
            verdict: self.verdict,
            rationale: self.rationale.clone(),
            timestamps: self.timestamps,
        }
    }
}

pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }
}

/// A counter that advances by one per reading; makes logs reproducible.
#[derive(Default)]
pub struct LogicalClock(AtomicU64);

impl Clock for LogicalClock {
    fn now_ms(&self) -> u64 {
        self.0.fetch_add(1, Ordering::SeqCst)
    }
}

/// Destination for finished debate records.
pub trait RecordSink: Send + Sync {
    fn persist(&self, record: &DebateRecord) -> Result<()>;
}

/// Append-only JSON-lines debate log.
pub struct DebateLog {
    path: PathBuf,
    out: Mutex<BufWriter<File>>,
}

impl DebateLog {
    pub fn append_to(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            path,
            out: Mutex::new(BufWriter::new(file)),
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Vec<DebateLine>> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut out = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if !line.trim().is_empty() {
                out.push(serde_json::from_str(&line)?);
            }
        }
        Ok(out)
    }
}

impl RecordSink for DebateLog {
    fn persist(&self, record: &DebateRecord) -> Result<()> {
        let mut line = serde_json::to_vec(&record.to_line())?;
        line.push(b'\n');
        let mut out = self.out.lock().expect("debate log lock poisoned");
        out.write_all(&line)
            .and_then(|_| out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

/// In-memory sink, mostly for tests.
#[derive(Default)]
pub struct MemorySink(pub Mutex<Vec<DebateLine>>);

impl RecordSink for MemorySink {
    fn persist(&self, record: &DebateRecord) -> Result<()> {
        self.0.lock().expect("sink lock poisoned").push(record.to_line());
        Ok(())
    }
}

/// Calls the segmenter at most `max_attempts` times while it reports
/// retryable transport failures.
#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub max_attempts: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3 }
    }
}

pub fn generate_candidates(
    segmenter: &dyn SegmenterEndpoint,
    image_id: &str,
    image: &ColorImage,
    prompts: &PointPromptSet,
    retry: RetryPolicy,
) -> Result<Vec<CandidateMask>> {
    if prompts.positives().next().is_none() {
        return Err(Error::InvalidParameter(
            "prompt set contains no positive point".into(),
        ));
    }
    let mut attempt = 0;
    let mut masks = loop {
        attempt += 1;
        match segmenter.segment(image_id, image, prompts) {
            Ok(m) => break m,
            Err(BackendError::Transport {
                message, retryable, ..
            }) => {
                if !retryable || attempt >= retry.max_attempts.max(1) {
                    return Err(BackendError::Transport {
                        message,
                        attempts: attempt,
                        retryable,
                    }
                    .into());
                }
                tracing::warn!(image_id, attempt, %message, "segmenter call failed, retrying");
            }
            Err(other) => return Err(other.into()),
        }
    };
    if masks.is_empty() {
        return Err(Error::NoCandidates);
    }
    for m in &masks {
        if m.mask.dim() != image.dim() {
            return Err(Error::dimension(
                format!("candidate mask of shape {:?}", image.dim()),
                format!("{:?}", m.mask.dim()),
            ));
        }
    }
    masks.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    Ok(masks)
}

/// Reads the verdict from the judge's final non-empty line. Anything other
/// than `VERDICT: RETAIN` or `VERDICT: DISCARD` is treated as a discard.
pub fn parse_verdict(judge_text: &str) -> (Verdict, String) {
    let mut lines: Vec<&str> = judge_text.lines().collect();
    while lines.last().is_some_and(|l| l.trim().is_empty()) {
        lines.pop();
    }
    let Some(last) = lines.pop() else {
        return (Verdict::Discard, "unparseable verdict".into());
    };
    let last = last.trim();
    let parsed = last
        .get(..8)
        .filter(|p| p.eq_ignore_ascii_case("VERDICT:"))
        .map(|_| last[8..].trim().to_ascii_uppercase());
    let rationale = lines.join("\n").trim().to_string();
    match parsed.as_deref() {
        Some("RETAIN") => (Verdict::Retain, rationale),
        Some("DISCARD") => (Verdict::Discard, rationale),
        _ => (Verdict::Discard, "unparseable verdict".into()),
    }
}

/// The three participants of a debate.
#[derive(Clone)]
pub struct DebatePanel {
    pub affirmative: Arc<dyn AgentEndpoint>,
    pub negative: Arc<dyn AgentEndpoint>,
    pub judge: Arc<dyn AgentEndpoint>,
}

impl DebatePanel {
    fn agent(&self, role: Role) -> &dyn AgentEndpoint {
        match role {
            Role::Affirmative => self.affirmative.as_ref(),
            Role::Negative => self.negative.as_ref(),
            Role::Judge => self.judge.as_ref(),
        }
    }

    pub fn concurrency_limit(&self) -> usize {
        self.affirmative
            .max_concurrency()
            .min(self.negative.max_concurrency())
            .min(self.judge.max_concurrency())
            .max(1)
    }
}

fn turn_prompt(meta: &MetaPrompt, view: &DebateContext, role: Role, round: u32, transcript: &[DebateTurn]) -> String {
    let mut prompt = meta.render();
    prompt.push_str("\n# Candidate mask\n");
    prompt.push_str(&view.summary);
    prompt.push_str("\n# Debate so far\n");
    if transcript.is_empty() {
        prompt.push_str("(no arguments yet)\n");
    }
    for t in transcript {
        prompt.push_str(&format!("[{:?}, round {}] {}\n", t.role, t.round, t.text.trim()));
    }
    prompt.push_str("\n# Your turn\n");
    prompt.push_str(&meta_prompt::role_instruction(role, round, meta.max_rounds));
    prompt.push('\n');
    prompt
}

/// Runs one debate over `candidate` and persists the record before returning.
///
/// An agent failure aborts the debate: the record is marked
/// [`Verdict::Undecided`] with the failure as rationale and has no judge turn.
#[allow(clippy::too_many_arguments)]
pub fn run_debate(
    image_id: &str,
    image: &ColorImage,
    prompts: Option<&PointPromptSet>,
    candidate: &CandidateMask,
    panel: &DebatePanel,
    meta: &MetaPrompt,
    clock: &dyn Clock,
    sink: &dyn RecordSink,
) -> Result<DebateRecord> {
    if meta.max_rounds == 0 {
        return Err(Error::Config("max_rounds must be >= 1".into()));
    }
    let view = render_debate_context(image, &candidate.mask, prompts)?;
    let started_ms = clock.now_ms();
    let mut transcript: Vec<DebateTurn> = Vec::with_capacity(2 * meta.max_rounds as usize + 1);

    let mut schedule: Vec<(Role, u32)> = (1..=meta.max_rounds)
        .flat_map(|r| [(Role::Affirmative, r), (Role::Negative, r)])
        .collect();
    schedule.push((Role::Judge, meta.max_rounds));

    let mut outcome = None;
    for (role, round) in schedule {
        let ctx = AgentContext {
            role,
            round,
            image_id,
            image,
            view: &view,
            transcript: &transcript,
            meta,
            prompt: turn_prompt(meta, &view, role, round, &transcript),
        };
        let reply = panel.agent(role).respond(&ctx).and_then(|text| {
            if text.trim().is_empty() {
                Err(BackendError::EmptyResponse)
            } else {
                Ok(text)
            }
        });
        match reply {
            Ok(text) => {
                if role == Role::Judge {
                    outcome = Some(parse_verdict(&text));
                }
                transcript.push(DebateTurn { role, round, text });
            }
            Err(err) => {
                tracing::warn!(
                    image_id,
                    mask_id = %candidate.mask_id,
                    ?role,
                    round,
                    error = %err,
                    "debate aborted; candidate excluded"
                );
                outcome = Some((Verdict::Undecided, format!("debate aborted: {err}")));
                break;
            }
        }
    }
    let (verdict, rationale) = outcome.expect("schedule always ends with a judge turn or an abort");
    let record = DebateRecord {
        image_id: image_id.to_string(),
        candidate: candidate.clone(),
        transcript,
        verdict,
        rationale,
        timestamps: Timestamps {
            started_ms,
            finished_ms: clock.now_ms(),
        },
    };
    sink.persist(&record)?;
    Ok(record)
}

/// Debates all candidates of one image. Independent debates run in parallel,
/// bounded by `max_parallel` and the panel's concurrency limit; the output
/// follows the candidate order.
#[allow(clippy::too_many_arguments)]
pub fn run_debates(
    image_id: &str,
    image: &ColorImage,
    prompts: Option<&PointPromptSet>,
    candidates: &[CandidateMask],
    panel: &DebatePanel,
    meta: &MetaPrompt,
    clock: &dyn Clock,
    sink: &dyn RecordSink,
    max_parallel: usize,
) -> Result<Vec<DebateRecord>> {
    let limit = panel.concurrency_limit().min(max_parallel.max(1));
    let run = |c: &CandidateMask| run_debate(image_id, image, prompts, c, panel, meta, clock, sink);
    if limit <= 1 || candidates.len() <= 1 {
        return candidates.iter().map(run).collect();
    }
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(limit)
        .build()
        .map_err(|e| Error::Invariant(format!("thread pool: {e}")))?;
    pool.install(|| candidates.par_iter().map(run).collect())
}

/// Partition of debate records by verdict, as indices into the input.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FilterOutcome {
    pub accepted: Vec<usize>,
    pub rejected: Vec<usize>,
    pub undecided: Vec<usize>,
}

pub fn partition_verdicts(records: &[DebateRecord]) -> FilterOutcome {
    let mut out = FilterOutcome::default();
    for (i, r) in records.iter().enumerate() {
        match r.verdict {
            Verdict::Retain => out.accepted.push(i),
            Verdict::Discard => out.rejected.push(i),
            Verdict::Undecided => out.undecided.push(i),
        }
    }
    out
}

/// Masks whose debate ended in [`Verdict::Retain`], in input order.
pub fn filter_pseudo_labels(records: &[DebateRecord]) -> Vec<&CandidateMask> {
    records
        .iter()
        .filter(|r| r.verdict == Verdict::Retain)
        .map(|r| &r.candidate)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceptanceEntry {
    pub image_id: String,
    pub mask_id: String,
    /// Relative to the manifest's directory.
    pub mask_path: PathBuf,
    pub verdict: Verdict,
}

/// Maps images to their accepted pseudo-mask files.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceptanceManifest {
    pub version: u32,
    pub entries: Vec<AcceptanceEntry>,
}

impl AcceptanceManifest {
    pub const VERSION: u32 = 1;

    pub fn new() -> Self {
        Self {
            version: Self::VERSION,
            entries: Vec::new(),
        }
    }

    /// Writes every retained mask into `mask_dir` and records it.
    pub fn accept_records(&mut self, records: &[DebateRecord], root: &Path, mask_dir: &str) -> Result<()> {
        let dir = root.join(mask_dir);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for cand in filter_pseudo_labels(records) {
            let rel = PathBuf::from(mask_dir).join(format!("{}.png", cand.mask_id));
            crate::raster::save_mask(&cand.mask, root.join(&rel))?;
            self.entries.push(AcceptanceEntry {
                image_id: records[0].image_id.clone(),
                mask_id: cand.mask_id.clone(),
                mask_path: rel,
                verdict: Verdict::Retain,
            });
        }
        Ok(())
    }

    pub fn sort(&mut self) {
        self.entries
            .sort_by(|a, b| (&a.image_id, &a.mask_id).cmp(&(&b.image_id, &b.mask_id)));
    }

    pub fn masks_for<'a>(&'a self, image_id: &'a str) -> impl Iterator<Item = &'a AcceptanceEntry> + 'a {
        self.entries.iter().filter(move |e| e.image_id == image_id)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

//! Segmenter and agent backends.
//!
//! Foundation models are reached through two small traits. Offline runs use
//! [`OracleSegmenter`] and [`ScriptedAgent`]; live runs talk JSON over HTTP to a
//! service wrapping the real models ([`RemoteSegmenter`], [`RemoteAgent`]).

use std::collections::HashMap;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{BackendError, Error, Result};
use crate::prompting::PointPromptSet;
use crate::raster::{ColorImage, Mask};

use super::overlay::DebateContext;
use super::{CandidateMask, DebateTurn, MetaPrompt, Role, Verdict};

/// Environment variable holding a bearer token for remote backends.
pub const CREDENTIALS_ENV: &str = "SCRIBCOD_BACKEND_TOKEN";
/// Environment variable used as the address when a remote descriptor omits one.
pub const ADDRESS_ENV: &str = "SCRIBCOD_BACKEND_URL";

/// Everything an agent sees when it is asked to speak.
pub struct AgentContext<'a> {
    pub role: Role,
    pub round: u32,
    pub image_id: &'a str,
    pub image: &'a ColorImage,
    pub view: &'a DebateContext,
    pub transcript: &'a [DebateTurn],
    pub meta: &'a MetaPrompt,
    /// Fully rendered prompt text for this turn.
    pub prompt: String,
}

pub trait AgentEndpoint: Send + Sync {
    fn respond(&self, ctx: &AgentContext<'_>) -> Result<String, BackendError>;

    /// Maximum number of concurrent `respond` calls the endpoint accepts.
    fn max_concurrency(&self) -> usize {
        usize::MAX
    }
}

pub trait SegmenterEndpoint: Send + Sync {
    fn segment(
        &self,
        image_id: &str,
        image: &ColorImage,
        prompts: &PointPromptSet,
    ) -> Result<Vec<CandidateMask>, BackendError>;

    fn max_concurrency(&self) -> usize {
        usize::MAX
    }
}

/// Deterministic agent behaviours.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Script {
    /// Same text every turn.
    Fixed { text: String },
    /// The k-th turn of this agent gets `responses[k % len]`.
    Cycle { responses: Vec<String> },
    /// Reports how many turns precede it.
    Echo,
    /// A judge that always reaches `verdict`.
    Verdict { verdict: Verdict },
    /// A judge that retains masks whose area fraction lies in `[min, max]`.
    AreaJudge { min: f64, max: f64 },
    /// Pseudo-random arguments and verdicts, a pure function of the seed and
    /// the turn's inputs.
    Seeded { seed: u64 },
    /// Always fails with a timeout.
    Timeout { seconds: f64 },
}

pub struct ScriptedAgent {
    script: Script,
    max_concurrency: usize,
}

impl ScriptedAgent {
    pub fn new(script: Script) -> Self {
        Self {
            script,
            max_concurrency: usize::MAX,
        }
    }

    pub fn with_max_concurrency(mut self, limit: usize) -> Self {
        self.max_concurrency = limit.max(1);
        self
    }

    pub fn always(verdict: Verdict) -> Self {
        Self::new(Script::Verdict { verdict })
    }
}

/// FNV-1a, used only to derive scripted behaviour from turn inputs.
fn fnv1a(bytes: &[u8], mut hash: u64) -> u64 {
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

const SEEDED_PRO: [&str; 3] = [
    "The outline follows a visible change in texture, so boundary clarity is acceptable.",
    "The masked region is compact and sits where the positive prompts were placed.",
    "Discriminability is reasonable: the region differs subtly from the surrounding background.",
];
const SEEDED_CON: [&str; 3] = [
    "Part of the outline cuts across uniform background, which suggests leakage.",
    "The region may include background that merely resembles the object.",
    "Thin parts of the object could be missing near the mask boundary.",
];

impl AgentEndpoint for ScriptedAgent {
    fn respond(&self, ctx: &AgentContext<'_>) -> Result<String, BackendError> {
        let own_turns = ctx.transcript.iter().filter(|t| t.role == ctx.role).count();
        Ok(match &self.script {
            Script::Fixed { text } => text.clone(),
            Script::Cycle { responses } => {
                if responses.is_empty() {
                    return Err(BackendError::EmptyResponse);
                }
                responses[own_turns % responses.len()].clone()
            }
            Script::Echo => format!("{} prior turns", ctx.transcript.len()),
            Script::Verdict { verdict } => format!(
                "Scripted judgement after {} turns.\nVERDICT: {}",
                ctx.transcript.len(),
                verdict.keyword()
            ),
            Script::AreaJudge { min, max } => {
                let a = ctx.view.area_fraction;
                let keep = a >= *min && a <= *max;
                format!(
                    "Mask covers {:.4} of the image (accepted range {min}..={max}).\nVERDICT: {}",
                    a,
                    if keep { "RETAIN" } else { "DISCARD" }
                )
            }
            Script::Seeded { seed } => {
                let mut h = fnv1a(ctx.image_id.as_bytes(), 0xcbf2_9ce4_8422_2325 ^ seed);
                h = fnv1a(ctx.view.summary.as_bytes(), h);
                h = fnv1a(&(ctx.transcript.len() as u64).to_le_bytes(), h);
                match ctx.role {
                    Role::Affirmative => SEEDED_PRO[(h % 3) as usize].to_string(),
                    Role::Negative => SEEDED_CON[(h % 3) as usize].to_string(),
                    Role::Judge => format!(
                        "Having weighed {} arguments, the judge decides.\nVERDICT: {}",
                        ctx.transcript.len(),
                        if h % 2 == 0 { "RETAIN" } else { "DISCARD" }
                    ),
                }
            }
            Script::Timeout { seconds } => {
                return Err(BackendError::Timeout { seconds: *seconds })
            }
        })
    }

    fn max_concurrency(&self) -> usize {
        self.max_concurrency
    }
}

/// Returns known masks per image id, with confidence 1.
#[derive(Debug, Clone, Default)]
pub struct OracleSegmenter {
    masks: HashMap<String, Vec<Mask>>,
}

impl OracleSegmenter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, image_id: impl Into<String>, mask: Mask) {
        self.masks.entry(image_id.into()).or_default().push(mask);
    }
}

impl SegmenterEndpoint for OracleSegmenter {
    fn segment(
        &self,
        image_id: &str,
        _image: &ColorImage,
        prompts: &PointPromptSet,
    ) -> Result<Vec<CandidateMask>, BackendError> {
        let masks = self.masks.get(image_id).ok_or(BackendError::EmptyResponse)?;
        Ok(masks
            .iter()
            .enumerate()
            .map(|(i, m)| CandidateMask {
                mask_id: format!("{image_id}-m{i}"),
                mask: m.clone(),
                confidence: 1.0,
                prompt_set_id: prompts.image_id.clone(),
            })
            .collect())
    }
}

fn http_agent(timeout_seconds: f64) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs_f64(timeout_seconds)))
        .build()
        .into()
}

fn map_http_error(err: ureq::Error, timeout_seconds: f64) -> BackendError {
    match err {
        ureq::Error::Timeout(_) => BackendError::Timeout {
            seconds: timeout_seconds,
        },
        ureq::Error::StatusCode(code) => BackendError::Transport {
            message: format!("http status {code}"),
            attempts: 1,
            retryable: code >= 500 || code == 429,
        },
        other => BackendError::Transport {
            message: other.to_string(),
            attempts: 1,
            retryable: true,
        },
    }
}

fn png_base64(image: &ColorImage) -> Result<String, BackendError> {
    let (h, w) = image.dim();
    let raw: Vec<u8> = image.data().iter().copied().collect();
    let buf = image::RgbImage::from_raw(w as u32, h as u32, raw).expect("dimensions match");
    let mut bytes = Vec::new();
    buf.write_to(&mut Cursor::new(&mut bytes), image::ImageFormat::Png)
        .map_err(|e| BackendError::Protocol(e.to_string()))?;
    Ok(base64::engine::general_purpose::STANDARD.encode(bytes))
}

fn post_json<T: serde::de::DeserializeOwned>(
    agent: &ureq::Agent,
    address: &str,
    body: &serde_json::Value,
    timeout_seconds: f64,
) -> Result<T, BackendError> {
    let mut req = agent.post(address);
    if let Ok(token) = std::env::var(CREDENTIALS_ENV) {
        req = req.header("Authorization", &format!("Bearer {token}"));
    }
    let mut resp = req
        .send_json(body)
        .map_err(|e| map_http_error(e, timeout_seconds))?;
    resp.body_mut()
        .read_json::<T>()
        .map_err(|e| BackendError::Protocol(e.to_string()))
}

/// Agent served over HTTP. Request: JSON with `role`, `round`, `prompt`,
/// `transcript`, `summary` and the overlay as base64 PNG. Response: `{"text": ...}`.
pub struct RemoteAgent {
    address: String,
    timeout_seconds: f64,
    max_concurrency: usize,
    http: ureq::Agent,
}

impl RemoteAgent {
    pub fn new(address: impl Into<String>, timeout_seconds: f64, max_concurrency: usize) -> Self {
        Self {
            address: address.into(),
            timeout_seconds,
            max_concurrency: max_concurrency.max(1),
            http: http_agent(timeout_seconds),
        }
    }
}

#[derive(Deserialize)]
struct AgentReply {
    text: String,
}

impl AgentEndpoint for RemoteAgent {
    fn respond(&self, ctx: &AgentContext<'_>) -> Result<String, BackendError> {
        let body = serde_json::json!({
            "role": ctx.role,
            "round": ctx.round,
            "image_id": ctx.image_id,
            "prompt": ctx.prompt,
            "transcript": ctx.transcript,
            "summary": ctx.view.summary,
            "image_png_base64": png_base64(ctx.image)?,
            "overlay_png_base64": png_base64(&ctx.view.overlay)?,
        });
        let reply: AgentReply = post_json(&self.http, &self.address, &body, self.timeout_seconds)?;
        if reply.text.trim().is_empty() {
            return Err(BackendError::EmptyResponse);
        }
        Ok(reply.text)
    }

    fn max_concurrency(&self) -> usize {
        self.max_concurrency
    }
}

/// Segmenter served over HTTP. Request: image as base64 PNG plus the prompt
/// points. Response: `{"masks": [{"mask_png_base64": ..., "confidence": ...}]}`.
pub struct RemoteSegmenter {
    address: String,
    timeout_seconds: f64,
    max_concurrency: usize,
    http: ureq::Agent,
}

impl RemoteSegmenter {
    pub fn new(address: impl Into<String>, timeout_seconds: f64, max_concurrency: usize) -> Self {
        Self {
            address: address.into(),
            timeout_seconds,
            max_concurrency: max_concurrency.max(1),
            http: http_agent(timeout_seconds),
        }
    }
}

#[derive(Deserialize)]
struct SegmenterReply {
    masks: Vec<RemoteMask>,
}

#[derive(Deserialize)]
struct RemoteMask {
    mask_png_base64: String,
    confidence: f64,
}

impl SegmenterEndpoint for RemoteSegmenter {
    fn segment(
        &self,
        image_id: &str,
        image: &ColorImage,
        prompts: &PointPromptSet,
    ) -> Result<Vec<CandidateMask>, BackendError> {
        let points: Vec<_> = prompts
            .points
            .iter()
            .map(|p| serde_json::json!({"row": p.row, "col": p.col, "polarity": p.polarity}))
            .collect();
        let body = serde_json::json!({
            "image_id": image_id,
            "image_png_base64": png_base64(image)?,
            "points": points,
        });
        let reply: SegmenterReply = post_json(&self.http, &self.address, &body, self.timeout_seconds)?;
        reply
            .masks
            .into_iter()
            .enumerate()
            .map(|(i, m)| {
                let bytes = base64::engine::general_purpose::STANDARD
                    .decode(m.mask_png_base64.as_bytes())
                    .map_err(|e| BackendError::Protocol(e.to_string()))?;
                let luma = image::load_from_memory(&bytes)
                    .map_err(|e| BackendError::Protocol(e.to_string()))?
                    .to_luma8();
                let (w, h) = luma.dimensions();
                let mask = ndarray::Array2::from_shape_vec((h as usize, w as usize), luma.into_raw())
                    .expect("luma buffer matches dimensions")
                    .mapv(|v| v > 127);
                Ok(CandidateMask {
                    mask_id: format!("{image_id}-m{i}"),
                    mask,
                    confidence: m.confidence.clamp(0.0, 1.0),
                    prompt_set_id: prompts.image_id.clone(),
                })
            })
            .collect()
    }

    fn max_concurrency(&self) -> usize {
        self.max_concurrency
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndpointKind {
    Scripted,
    Remote,
    Oracle,
}

/// Where a script comes from: a JSON file or an inline definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptSource {
    Inline(Script),
    Path(PathBuf),
}

/// Configuration of one agent or segmenter endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointDescriptor {
    pub kind: EndpointKind,
    #[serde(default)]
    pub address: Option<String>,
    #[serde(default)]
    pub script: Option<ScriptSource>,
    #[serde(default = "default_timeout")]
    pub timeout_seconds: f64,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
}

fn default_timeout() -> f64 {
    120.0
}

fn default_concurrency() -> usize {
    1
}

impl EndpointDescriptor {
    pub fn scripted(script: Script) -> Self {
        Self {
            kind: EndpointKind::Scripted,
            address: None,
            script: Some(ScriptSource::Inline(script)),
            timeout_seconds: default_timeout(),
            max_concurrency: default_concurrency(),
        }
    }

    pub fn oracle() -> Self {
        Self {
            kind: EndpointKind::Oracle,
            address: None,
            script: None,
            timeout_seconds: default_timeout(),
            max_concurrency: default_concurrency(),
        }
    }

    fn address(&self) -> Result<String> {
        self.address
            .clone()
            .or_else(|| std::env::var(ADDRESS_ENV).ok())
            .ok_or_else(|| {
                Error::Config(format!(
                    "remote endpoint needs an address (descriptor field or {ADDRESS_ENV})"
                ))
            })
    }

    /// Builds an agent. Relative script paths resolve against `base_dir`.
    pub fn build_agent(&self, base_dir: &Path) -> Result<Arc<dyn AgentEndpoint>> {
        match self.kind {
            EndpointKind::Scripted => {
                let script = match &self.script {
                    Some(ScriptSource::Inline(s)) => s.clone(),
                    Some(ScriptSource::Path(p)) => {
                        let path = base_dir.join(p);
                        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                        serde_json::from_str(&text)
                            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
                    }
                    None => return Err(Error::Config("scripted agent needs a script".into())),
                };
                Ok(Arc::new(
                    ScriptedAgent::new(script).with_max_concurrency(self.max_concurrency),
                ))
            }
            EndpointKind::Remote => Ok(Arc::new(RemoteAgent::new(
                self.address()?,
                self.timeout_seconds,
                self.max_concurrency,
            ))),
            EndpointKind::Oracle => Err(Error::Config("agents cannot be of kind 'oracle'".into())),
        }
    }

    /// Builds a remote segmenter; oracle segmenters are assembled from ground
    /// truth by the stage-one driver.
    pub fn build_remote_segmenter(&self) -> Result<Arc<dyn SegmenterEndpoint>> {
        match self.kind {
            EndpointKind::Remote => Ok(Arc::new(RemoteSegmenter::new(
                self.address()?,
                self.timeout_seconds,
                self.max_concurrency,
            ))),
            other => Err(Error::Config(format!("{other:?} is not a remote segmenter"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn descriptor_parses_inline_and_path_scripts() {
        let inline: EndpointDescriptor = toml::from_str(
            r#"
kind = "scripted"
script = { type = "verdict", verdict = "RETAIN" }
"#,
        )
        .unwrap();
        assert_eq!(
            inline.script,
            Some(ScriptSource::Inline(Script::Verdict { verdict: Verdict::Retain }))
        );
        assert_eq!(inline.max_concurrency, 1);

        let path: EndpointDescriptor =
            toml::from_str("kind = \"scripted\"\nscript = \"judge.json\"\n").unwrap();
        assert_eq!(path.script, Some(ScriptSource::Path("judge.json".into())));
    }

    #[test]
    fn remote_without_address_is_a_config_error() {
        let d = EndpointDescriptor {
            kind: EndpointKind::Remote,
            address: None,
            script: None,
            timeout_seconds: 1.0,
            max_concurrency: 1,
        };
        if std::env::var(ADDRESS_ENV).is_err() {
            assert!(matches!(d.build_agent(Path::new(".")), Err(Error::Config(_))));
        }
    }

    #[test]
    fn unreachable_remote_agent_reports_transport_error() {
        // Port 9 on localhost is closed in the test sandbox.
        let agent = RemoteSegmenter::new("http://127.0.0.1:9/segment", 2.0, 1);
        let img = ColorImage::new(ndarray::Array3::zeros((2, 2, 3))).unwrap();
        let prompts = PointPromptSet {
            image_id: "a".into(),
            points: vec![],
            params: Default::default(),
            missing_background: false,
        };
        let err = agent.segment("a", &img, &prompts).unwrap_err();
        assert!(matches!(
            err,
            BackendError::Transport { .. } | BackendError::Timeout { .. }
        ));
    }
}

//! OpenAI-compatible chat-completions client with image attachments.

use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use base64::Engine;
use serde_json::{json, Value};
use ureq::Agent;

use super::{ModelEndpoint, QueryRequest, RawReply, Responder};
use crate::error::{Error, Result};
use crate::prompt::{render_scene_text, DecisionInstruction};
use crate::scenario::{Scene, VisualAsset};

/// Environment variable holding the bearer token.
pub const API_KEY_ENV: &str = "CARE_API_KEY";

fn media_type(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("webp") => "image/webp",
        Some("gif") => "image/gif",
        _ => "image/png",
    }
}

/// Resolves a visual reference to a URL the endpoint accepts: remote and
/// data URLs pass through, local files are inlined as base64 data URLs.
fn resolve_visual(asset: &VisualAsset, asset_root: &Path) -> Result<String> {
    let text = asset.path().to_string_lossy();
    if ["http://", "https://", "data:"].iter().any(|p| text.starts_with(p)) {
        return Ok(text.into_owned());
    }
    let path = if asset.path().is_absolute() {
        asset.path().to_path_buf()
    } else {
        asset_root.join(asset.path())
    };
    let bytes = std::fs::read(&path).map_err(|e| {
        Error::Config(format!("cannot read visual asset {}: {e}", path.display()))
    })?;
    Ok(format!(
        "data:{};base64,{}",
        media_type(&path),
        base64::engine::general_purpose::STANDARD.encode(bytes)
    ))
}

/// Chat-completions request: the instruction as system message, the scene
/// description and its images as one user message.
pub fn build_request_body(
    endpoint: &ModelEndpoint,
    instruction: &DecisionInstruction,
    scene: &Scene,
    asset_root: &Path,
) -> Result<Value> {
    let mut content = vec![json!({ "type": "text", "text": render_scene_text(scene) })];
    for asset in &scene.visuals {
        content.push(json!({
            "type": "image_url",
            "image_url": { "url": resolve_visual(asset, asset_root)? },
        }));
    }
    Ok(json!({
        "model": endpoint.model_name,
        "temperature": endpoint.temperature,
        "top_p": endpoint.top_p,
        "stream": false,
        "messages": [
            { "role": "system", "content": instruction.rendered },
            { "role": "user", "content": content },
        ],
    }))
}

fn extract_content(body: &str) -> Result<String> {
    let value: Value = serde_json::from_str(body).map_err(|_| Error::Parse {
        raw: body.to_owned(),
    })?;
    let content = &value["choices"][0]["message"]["content"];
    if let Some(text) = content.as_str() {
        return Ok(text.to_owned());
    }
    // Some servers return content as a list of typed parts.
    if let Some(parts) = content.as_array() {
        let text: Vec<&str> = parts.iter().filter_map(|p| p["text"].as_str()).collect();
        if !text.is_empty() {
            return Ok(text.join(""));
        }
    }
    Err(Error::Parse {
        raw: body.to_owned(),
    })
}

pub struct ChatClient {
    agent: Agent,
    api_key: Option<String>,
    asset_root: PathBuf,
    next_start: Mutex<Option<Instant>>,
}

impl ChatClient {
    pub fn new(endpoint: &ModelEndpoint, api_key: Option<String>, asset_root: impl Into<PathBuf>) -> Self {
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(endpoint.timeout_s.max(0.001))))
            .http_status_as_error(false)
            .build()
            .into();
        ChatClient {
            agent,
            api_key,
            asset_root: asset_root.into(),
            next_start: Mutex::new(None),
        }
    }

    /// Reads the API key from [`API_KEY_ENV`].
    pub fn from_env(endpoint: &ModelEndpoint, asset_root: impl Into<PathBuf>) -> Self {
        Self::new(endpoint, std::env::var(API_KEY_ENV).ok(), asset_root)
    }

    fn throttle(&self, endpoint: &ModelEndpoint) {
        let Some(rps) = endpoint.requests_per_second.filter(|r| *r > 0.0) else {
            return;
        };
        let spacing = Duration::from_secs_f64(1.0 / rps);
        let wait = {
            let mut next = self.next_start.lock().expect("rate limiter poisoned");
            let now = Instant::now();
            let start = next.map_or(now, |n| n.max(now));
            *next = Some(start + spacing);
            start - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}

impl Responder for ChatClient {
    fn respond(&self, request: &QueryRequest<'_>) -> Result<RawReply> {
        let endpoint = request.endpoint;
        let body = build_request_body(endpoint, request.instruction, request.scene, &self.asset_root)?;
        let url = format!("{}/chat/completions", endpoint.base_url.trim_end_matches('/'));
        self.throttle(endpoint);

        let mut req = self.agent.post(&url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = req
            .send_json(&body)
            .map_err(|e| Error::Transient(format!("{url}: {e}")))?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| Error::Transient(format!("{url}: reading body: {e}")))?;
        match status {
            200..=299 => Ok(RawReply {
                text: extract_content(&text)?,
                latency_s: None,
            }),
            401 | 403 => Err(Error::Fatal(format!(
                "HTTP {status} from {url}: check {API_KEY_ENV}"
            ))),
            408 | 409 | 429 | 500..=599 => Err(Error::Transient(format!("HTTP {status} from {url}"))),
            _ => Err(Error::Fatal(format!("HTTP {status} from {url}: {text}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn content_extraction() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"Decision: case 1"}}]}"#;
        assert_eq!(extract_content(body).unwrap(), "Decision: case 1");
        let parts = r#"{"choices":[{"message":{"content":[{"type":"text","text":"a "},{"type":"text","text":"b"}]}}]}"#;
        assert_eq!(extract_content(parts).unwrap(), "a b");
        assert!(matches!(extract_content("{}"), Err(Error::Parse { .. })));
        assert!(matches!(extract_content("<html>"), Err(Error::Parse { .. })));
    }

    #[test]
    fn media_types() {
        assert_eq!(media_type(Path::new("a.JPG")), "image/jpeg");
        assert_eq!(media_type(Path::new("a.png")), "image/png");
    }
}

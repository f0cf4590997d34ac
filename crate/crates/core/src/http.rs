//! Answerer backed by an HTTP text-completion endpoint.
//!
//! Wire protocol: `POST <url>` with body `{"prompt": "..."}`, response
//! `{"text": "..."}`. An optional bearer token is sent in `Authorization`.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::answer::{AnswerError, AnswerMode, AnswerRequest, Answerer, Reply};

pub const URL_ENV: &str = "FLARE_LLM_URL";
pub const TOKEN_ENV: &str = "FLARE_LLM_TOKEN";
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

/// Marker that ends the multi-step loop.
const FINAL_MARKER: &str = "answer is:";

#[derive(Serialize)]
struct PromptBody<'a> {
    prompt: &'a str,
}

#[derive(Deserialize)]
struct CompletionBody {
    text: String,
}

/// Counting semaphore bounding concurrent requests.
struct Gate {
    available: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(n: usize) -> Self {
        Gate {
            available: Mutex::new(n.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().unwrap_or_else(|e| e.into_inner());
        while *n == 0 {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.available.lock().unwrap_or_else(|e| e.into_inner());
        *n += 1;
        self.0.freed.notify_one();
    }
}

pub struct HttpAnswerer {
    url: String,
    token: Option<String>,
    agent: ureq::Agent,
    gate: Gate,
}

impl HttpAnswerer {
    pub fn new(url: impl Into<String>, token: Option<String>, max_in_flight: usize) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .http_status_as_error(true)
            .build()
            .into();
        HttpAnswerer {
            url: url.into(),
            token,
            agent,
            gate: Gate::new(max_in_flight),
        }
    }

    /// Configure from `FLARE_LLM_URL` / `FLARE_LLM_TOKEN`. `None` when the URL is unset.
    pub fn from_env(max_in_flight: usize) -> Option<Self> {
        let url = std::env::var(URL_ENV).ok().filter(|u| !u.is_empty())?;
        let token = std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty());
        Some(Self::new(url, token, max_in_flight))
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    fn complete(&self, prompt: &str) -> Result<String, AnswerError> {
        let _permit = self.gate.acquire();
        let mut req = self.agent.post(&self.url);
        if let Some(token) = &self.token {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = req
            .send_json(PromptBody { prompt })
            .map_err(|e| AnswerError::Transport(e.to_string()))?;
        let body: CompletionBody = resp
            .body_mut()
            .read_json()
            .map_err(|e| AnswerError::Protocol(e.to_string()))?;
        Ok(body.text)
    }
}

/// Passages, then the question, then mode-specific instructions.
pub fn build_prompt(request: &AnswerRequest<'_>) -> String {
    let mut prompt = String::new();
    for p in request.passages {
        prompt.push_str("Title: ");
        prompt.push_str(&p.title);
        prompt.push('\n');
        prompt.push_str(&p.text);
        prompt.push_str("\n\n");
    }
    prompt.push_str("Question: ");
    prompt.push_str(request.question);
    prompt.push('\n');
    match request.mode {
        AnswerMode::Direct | AnswerMode::SingleStep => prompt.push_str("Answer:"),
        AnswerMode::MultiStep { .. } | AnswerMode::Finalize => {
            for r in request.reasoning {
                prompt.push_str(r);
                prompt.push('\n');
            }
            if request.mode == AnswerMode::Finalize {
                prompt.push_str("So the answer is:");
            } else {
                prompt.push_str(
                    "Continue reasoning with one sentence. If the answer is known, \
                     write \"So the answer is: <answer>\".\n",
                );
            }
        }
    }
    prompt
}

/// Interpret completion text for the given mode.
pub fn parse_reply(mode: AnswerMode, text: &str) -> Result<Reply, AnswerError> {
    let text = text.trim();
    match mode {
        AnswerMode::MultiStep { .. } => {
            let lower = text.to_lowercase();
            if let Some(pos) = lower.find(FINAL_MARKER) {
                // Byte offsets agree as long as lowercasing kept lengths; fall back to the whole text otherwise.
                let answer = if lower.len() == text.len() {
                    text[pos + FINAL_MARKER.len()..].trim()
                } else {
                    text
                };
                Ok(Reply::Final(answer.to_string()))
            } else if text.is_empty() {
                Err(AnswerError::Protocol("empty reasoning step".into()))
            } else {
                Ok(Reply::NextQuery(text.to_string()))
            }
        }
        _ => Ok(Reply::Final(text.to_string())),
    }
}

impl Answerer for HttpAnswerer {
    fn respond(&self, request: &AnswerRequest<'_>) -> Result<Reply, AnswerError> {
        let text = self.complete(&build_prompt(request))?;
        parse_reply(request.mode, &text)
    }
}

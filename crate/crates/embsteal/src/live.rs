//! HTTP clients for hosted embedding APIs.

use std::time::Duration;

use embsteal_core::teacher::{EmbeddingVector, Provider, TeacherSource, TeacherSpec};
use embsteal_core::{Kind, TextRecord};
use serde::{Deserialize, Serialize};
use ureq::Agent;

use crate::error::{AppError, Result};
use crate::harvest::{EmbedBackend, EmbedError, EmbedErrorKind};

#[derive(Debug, Serialize)]
struct OpenAiRequest<'a> {
    model: &'a str,
    input: Vec<&'a str>,
}

#[derive(Debug, Deserialize)]
struct OpenAiItem {
    index: usize,
    embedding: Vec<f64>,
}

#[derive(Debug, Deserialize)]
struct OpenAiResponse {
    data: Vec<OpenAiItem>,
}

#[derive(Debug, Serialize)]
struct CohereRequest<'a> {
    model: &'a str,
    texts: Vec<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    input_type: Option<&'static str>,
}

#[derive(Debug, Deserialize)]
struct CohereResponse {
    embeddings: Vec<Vec<f64>>,
}

pub struct LiveClient {
    agent: Agent,
    endpoint: String,
    model: String,
    provider: Provider,
    key: String,
    input_type: bool,
}

impl LiveClient {
    /// Builds a client for a live spec. The API key is read from the
    /// environment variable the teacher names.
    pub fn from_spec(spec: &TeacherSpec, timeout: Duration) -> Result<Self> {
        let TeacherSource::Live {
            endpoint,
            model,
            credentials_env,
            provider,
        } = &spec.source
        else {
            return Err(AppError::Config(format!("teacher {:?} is not a live source", spec.name)));
        };
        let key = std::env::var(credentials_env).map_err(|_| {
            AppError::Config(format!(
                "teacher {:?} needs its API key in the environment variable {credentials_env}",
                spec.name
            ))
        })?;
        Ok(Self::new(endpoint, model, *provider, key, spec.input_type, timeout))
    }

    pub fn new(endpoint: &str, model: &str, provider: Provider, key: String, input_type: bool, timeout: Duration) -> Self {
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            endpoint: endpoint.trim_end_matches('/').to_string(),
            model: model.to_string(),
            provider,
            key,
            input_type,
        }
    }

    /// Request path and JSON body for a batch.
    pub fn request_body(&self, kind: Kind, texts: &[&str]) -> (String, serde_json::Value) {
        let texts = texts.to_vec();
        let (path, body) = match self.provider {
            Provider::OpenAi => (
                "/v1/embeddings",
                serde_json::to_value(OpenAiRequest {
                    model: &self.model,
                    input: texts,
                }),
            ),
            Provider::Cohere => (
                "/v1/embed",
                serde_json::to_value(CohereRequest {
                    model: &self.model,
                    texts,
                    input_type: self.input_type.then_some(match kind {
                        Kind::Query => "search_query",
                        Kind::Passage => "search_document",
                    }),
                }),
            ),
        };
        (format!("{}{path}", self.endpoint), body.expect("request serializes"))
    }

    pub fn embed_texts(&self, kind: Kind, texts: &[&str]) -> std::result::Result<Vec<EmbeddingVector>, EmbedError> {
        let (url, body) = self.request_body(kind, texts);
        let mut resp = self
            .agent
            .post(&url)
            .header("Authorization", format!("Bearer {}", self.key))
            .send_json(&body)
            .map_err(|e| EmbedError::new(EmbedErrorKind::Transport, e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| EmbedError::new(EmbedErrorKind::Transport, e.to_string()))?;
        match status {
            200..=299 => {}
            401 | 403 => return Err(EmbedError::new(EmbedErrorKind::Auth, format!("HTTP {status}"))),
            429 => return Err(EmbedError::new(EmbedErrorKind::RateLimit, format!("HTTP {status}"))),
            500..=599 => return Err(EmbedError::new(EmbedErrorKind::Transport, format!("HTTP {status}"))),
            _ => {
                let snippet: String = text.chars().take(200).collect();
                return Err(EmbedError::new(EmbedErrorKind::Malformed, format!("HTTP {status}: {snippet}")));
            }
        }
        let raw = parse_response(self.provider, &text, texts.len())?;
        raw.into_iter()
            .map(|v| EmbeddingVector::normalized(v).map_err(|e| EmbedError::new(EmbedErrorKind::Malformed, e.to_string())))
            .collect()
    }
}

/// Extracts one raw vector per input, in input order.
pub fn parse_response(provider: Provider, text: &str, n: usize) -> std::result::Result<Vec<Vec<f64>>, EmbedError> {
    let bad = |m: String| EmbedError::new(EmbedErrorKind::Malformed, m);
    let vectors = match provider {
        Provider::OpenAi => {
            let r: OpenAiResponse = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
            let mut slots: Vec<Option<Vec<f64>>> = vec![None; n];
            for item in r.data {
                let slot = slots
                    .get_mut(item.index)
                    .ok_or_else(|| bad(format!("index {} out of range", item.index)))?;
                if slot.replace(item.embedding).is_some() {
                    return Err(bad(format!("index {} repeated", item.index)));
                }
            }
            slots
                .into_iter()
                .enumerate()
                .map(|(i, s)| s.ok_or_else(|| bad(format!("no embedding for index {i}"))))
                .collect::<std::result::Result<Vec<_>, _>>()?
        }
        Provider::Cohere => {
            let r: CohereResponse = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
            r.embeddings
        }
    };
    if vectors.len() != n {
        return Err(bad(format!("{} embeddings for {n} texts", vectors.len())));
    }
    Ok(vectors)
}

impl EmbedBackend for LiveClient {
    fn embed(&mut self, batch: &[TextRecord]) -> std::result::Result<Vec<EmbeddingVector>, EmbedError> {
        let Some(first) = batch.first() else { return Ok(Vec::new()) };
        let texts: Vec<&str> = batch.iter().map(|r| r.text.as_str()).collect();
        self.embed_texts(first.kind, &texts)
    }
}

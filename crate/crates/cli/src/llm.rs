//! A language model as one more expert: prompt it with the survey, parse its
//! integer ratings into responses.

use std::path::PathBuf;
use std::time::Duration;

use crowdcause::expert::{KnowledgeSet, Protocol, Query, Response};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{CliError, CliResult};

/// Environment variable holding the API key for live mode.
pub const API_KEY_ENV: &str = "CROWDCAUSE_LLM_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LlmMode {
    Live,
    /// Replays a recorded transcript; no network access.
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmExpertConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default = "default_model")]
    pub model: String,
    /// Field of expertise named in the prompt.
    pub background: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    pub mode: LlmMode,
    /// Recorded replies, required in mock mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<PathBuf>,
    /// Ask a second time for confirmation and keep that answer.
    #[serde(default)]
    pub verify: bool,
    /// Passed through to the endpoint untouched.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default = "default_expert_id")]
    pub expert_id: String,
}

impl LlmExpertConfig {
    pub fn validate(&self) -> CliResult<()> {
        match self.mode {
            LlmMode::Mock if self.transcript.is_none() => Err(CliError::config(
                "transcript",
                "mock mode needs a transcript",
            )),
            LlmMode::Live if self.endpoint.is_none() => {
                Err(CliError::config("endpoint", "live mode needs an endpoint"))
            }
            _ => Ok(()),
        }
    }
}

fn default_model() -> String {
    "gpt-4o".into()
}

fn default_timeout() -> u64 {
    60
}

fn default_expert_id() -> String {
    "llm".into()
}

/// Recorded replies for mock mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub queries: Vec<[String; 2]>,
    pub reply: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify_reply: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseWarning {
    pub index: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmOutcome {
    pub responses: KnowledgeSet,
    pub warnings: Vec<ParseWarning>,
    /// Every prompt sent, in order.
    pub prompts: Vec<String>,
}

fn protocol_instructions(protocol: Protocol) -> &'static str {
    match protocol {
        Protocol::OrderingWise => "Rate each pair with an integer from -10 to 10: positive if A is upstream of B, negative if B is upstream of A, 0 for no causal relation.",
        Protocol::EdgeWise => "Rate each pair with 1 if A directly causes B, -1 if B directly causes A, and 0 if there is no direct causal influence.",
    }
}

pub fn survey_prompt(
    background: &str,
    descriptions: &[(String, String)],
    queries: &[Query],
    protocol: Protocol,
) -> String {
    let mut s = format!(
        "You are an expert in {background}. Based on your expertise, answer the following survey. \
For each pair, please answer the question: 'How strongly do you believe that Factor A is an upstream causal variable of Factor B (A -> B)?' \
{} Output the ratings as a JSON array of integers, one per pair, in order.\n",
        protocol_instructions(protocol)
    );
    if !descriptions.is_empty() {
        s.push_str("\nVariables:\n");
        for (name, text) in descriptions {
            s.push_str(&format!("- {name}: {text}\n"));
        }
    }
    s.push_str("\nPairs:\n");
    for (k, q) in queries.iter().enumerate() {
        s.push_str(&format!("{}. A = {}, B = {}\n", k + 1, q.u, q.v));
    }
    s
}

pub fn verify_prompt() -> String {
    "Please confirm the correctness of the causal relationships step by step and check the prior knowledge provided by the survey. Output the final ratings as a JSON array of integers, one per pair, in order.".to_string()
}

/// One rating per query. Accepts a bare JSON array; otherwise one rating per
/// line when the line count matches; otherwise the k-th integer token.
/// Anything missing, unparseable or out of range becomes 0 with a warning.
pub fn parse_ratings(
    reply: &str,
    count: usize,
    protocol: Protocol,
) -> (Vec<i32>, Vec<ParseWarning>) {
    let mut warnings = Vec::new();
    let raw: Vec<Option<i64>> = if let Some(arr) = json_array(reply) {
        arr.iter().map(Value::as_i64).collect()
    } else {
        let lines: Vec<&str> = reply
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .collect();
        if lines.len() == count {
            lines
                .iter()
                .map(|l| integer_tokens(strip_list_marker(l)).last().copied())
                .collect()
        } else {
            integer_tokens(reply).into_iter().map(Some).collect()
        }
    };
    let (lo, hi) = protocol.range();
    let values = (0..count)
        .map(|k| match raw.get(k).copied().flatten() {
            Some(v) if v >= lo as i64 && v <= hi as i64 => v as i32,
            Some(v) => {
                warnings.push(ParseWarning {
                    index: k,
                    message: format!("rating {v} outside {lo}..={hi}, recorded as 0"),
                });
                0
            }
            None => {
                warnings.push(ParseWarning {
                    index: k,
                    message: "no integer rating found, recorded as 0".into(),
                });
                0
            }
        })
        .collect();
    (values, warnings)
}

fn json_array(reply: &str) -> Option<Vec<Value>> {
    let t = reply.trim();
    let t = t
        .strip_prefix("```json")
        .or_else(|| t.strip_prefix("```"))
        .map(|s| s.trim_end_matches("```").trim())
        .unwrap_or(t);
    match serde_json::from_str::<Value>(t) {
        Ok(Value::Array(items)) => Some(items),
        _ => None,
    }
}

/// Drops a leading `3.` or `3)` enumeration marker.
fn strip_list_marker(line: &str) -> &str {
    let rest = line.trim_start_matches(|c: char| c.is_ascii_digit());
    if rest.len() == line.len() {
        return line;
    }
    rest.strip_prefix(['.', ')']).unwrap_or(line)
}

/// Signed integers appearing as whole tokens (not parts of words or decimals).
fn integer_tokens(text: &str) -> Vec<i64> {
    text.split(|c: char| c.is_whitespace() || ",;:()[]{}\"'".contains(c))
        .filter_map(|t| t.trim_end_matches('.').parse::<i64>().ok())
        .collect()
}

/// Sends the conversation so far and returns the assistant's reply.
fn chat(config: &LlmExpertConfig, messages: &[Value]) -> CliResult<String> {
    let endpoint = config
        .endpoint
        .as_deref()
        .ok_or_else(|| CliError::config("endpoint", "live mode needs an endpoint"))?;
    let key = std::env::var(API_KEY_ENV).map_err(|_| {
        CliError::config(API_KEY_ENV, "live mode needs an API key in the environment")
    })?;
    let mut body = json!({ "model": config.model, "messages": messages });
    if let Some(t) = config.temperature {
        body["temperature"] = json!(t);
    }
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
        .build()
        .into();
    let mut resp = agent
        .post(endpoint)
        .header("Authorization", &format!("Bearer {key}"))
        .send_json(&body)
        .map_err(|e| CliError::EndpointUnreachable(e.to_string()))?;
    let v: Value = resp
        .body_mut()
        .read_json()
        .map_err(|e| CliError::EndpointUnreachable(e.to_string()))?;
    v["choices"][0]["message"]["content"]
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| CliError::EndpointUnreachable(format!("reply without message content: {v}")))
}

fn load_transcript(path: &PathBuf, queries: &[Query]) -> CliResult<Transcript> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config("transcript", format!("{}: {e}", path.display())))?;
    let t: Transcript =
        serde_json::from_str(&text).map_err(|e| CliError::config("transcript", e))?;
    if t.queries.len() != queries.len() {
        return Err(CliError::TranscriptMismatch(format!(
            "transcript covers {} queries, {} requested",
            t.queries.len(),
            queries.len()
        )));
    }
    for (k, (rec, q)) in t.queries.iter().zip(queries).enumerate() {
        if rec[0] != q.u || rec[1] != q.v {
            return Err(CliError::TranscriptMismatch(format!(
                "query {k}: transcript has ({}, {}), requested ({}, {})",
                rec[0], rec[1], q.u, q.v
            )));
        }
    }
    Ok(t)
}

pub fn llm_elicit(
    config: &LlmExpertConfig,
    descriptions: &[(String, String)],
    queries: &[Query],
    protocol: Protocol,
) -> CliResult<LlmOutcome> {
    config.validate()?;
    if queries.is_empty() {
        return Err(CliError::config("queries", "need at least one query"));
    }
    let survey = survey_prompt(&config.background, descriptions, queries, protocol);
    let mut prompts = vec![survey.clone()];
    let reply = match (config.mode, &config.transcript) {
        (LlmMode::Mock, Some(transcript)) => {
            let t = load_transcript(transcript, queries)?;
            if config.verify {
                prompts.push(verify_prompt());
                t.verify_reply.unwrap_or(t.reply)
            } else {
                t.reply
            }
        }
        (LlmMode::Mock, None) => unreachable!("validated above"),
        (LlmMode::Live, _) => {
            let mut messages = vec![json!({"role": "user", "content": survey})];
            let first = chat(config, &messages)?;
            if config.verify {
                messages.push(json!({"role": "assistant", "content": first}));
                messages.push(json!({"role": "user", "content": verify_prompt()}));
                prompts.push(verify_prompt());
                chat(config, &messages)?
            } else {
                first
            }
        }
    };
    let (values, warnings) = parse_ratings(&reply, queries.len(), protocol);
    for w in &warnings {
        tracing::warn!(query = w.index, "{}", w.message);
    }
    let responses = queries
        .iter()
        .zip(values)
        .map(|(q, v)| {
            Response::new(config.expert_id.clone(), q.clone(), protocol, v)
                .expect("value clamped to range")
        })
        .collect();
    Ok(LlmOutcome {
        responses,
        warnings,
        prompts,
    })
}

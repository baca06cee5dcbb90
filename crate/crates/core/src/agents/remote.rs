//! Chat-completion wire client for model-backed agents.
//!
//! The request carries the role prompt as the system message and the
//! validated input JSON as the user message; the reply content must be a
//! single JSON object.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Duration;

use serde_json::{json, Value};

use super::{AgentBackend, BackendError};
use crate::contracts::AgentRole;

pub const ENV_ENDPOINT: &str = "VDSS_REMOTE_ENDPOINT";
pub const ENV_API_KEY: &str = "VDSS_REMOTE_API_KEY";
pub const ENV_MODEL: &str = "VDSS_REMOTE_MODEL";
pub const ENV_PROMPT_DIR: &str = "VDSS_PROMPT_DIR";

fn embedded_prompt(role: AgentRole) -> &'static str {
    match role {
        AgentRole::WaveformAnalyzer => include_str!("../../../../prompts/waveform_analyzer.txt"),
        AgentRole::Detection => include_str!("../../../../prompts/detection.txt"),
        AgentRole::PhaseGoalManager => include_str!("../../../../prompts/phase_goal_manager.txt"),
        AgentRole::Gate => include_str!("../../../../prompts/gate.txt"),
        AgentRole::StrategySelector => include_str!("../../../../prompts/strategy_selector.txt"),
        AgentRole::ModeSelect => include_str!("../../../../prompts/mode_select.txt"),
        AgentRole::ParameterPlanner => include_str!("../../../../prompts/parameter_planner.txt"),
        AgentRole::Reflect => include_str!("../../../../prompts/reflect.txt"),
        AgentRole::NoteGenerator => include_str!("../../../../prompts/note_generator.txt"),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    pub api_key: Option<String>,
    pub model: String,
    /// Directory with `<role>.txt` files overriding the built-in prompts.
    pub prompt_dir: Option<PathBuf>,
    pub timeout: Duration,
}

impl RemoteConfig {
    /// Read the configuration from the environment; `None` without an endpoint.
    pub fn from_env() -> Option<Self> {
        let endpoint = std::env::var(ENV_ENDPOINT).ok().filter(|s| !s.is_empty())?;
        Some(RemoteConfig {
            endpoint,
            api_key: std::env::var(ENV_API_KEY).ok().filter(|s| !s.is_empty()),
            model: std::env::var(ENV_MODEL).unwrap_or_else(|_| "default".into()),
            prompt_dir: std::env::var(ENV_PROMPT_DIR).ok().map(PathBuf::from),
            timeout: Duration::from_secs(60),
        })
    }
}

pub struct RemoteChatBackend {
    config: RemoteConfig,
    prompts: BTreeMap<AgentRole, String>,
    agent: ureq::Agent,
}

impl RemoteChatBackend {
    pub fn new(config: RemoteConfig) -> std::io::Result<Self> {
        let mut prompts = BTreeMap::new();
        for role in AgentRole::ALL {
            let text = match &config.prompt_dir {
                Some(dir) => {
                    let path = dir.join(format!("{role}.txt"));
                    if path.exists() {
                        std::fs::read_to_string(path)?
                    } else {
                        embedded_prompt(role).to_string()
                    }
                }
                None => embedded_prompt(role).to_string(),
            };
            prompts.insert(role, text);
        }
        let agent = ureq::AgentBuilder::new().timeout(config.timeout).build();
        Ok(RemoteChatBackend { config, prompts, agent })
    }

    pub fn prompt(&self, role: AgentRole) -> &str {
        &self.prompts[&role]
    }

    fn request_body(&self, role: AgentRole, input: &Value) -> Value {
        json!({
            "model": self.config.model,
            "temperature": 0,
            "response_format": {"type": "json_object"},
            "messages": [
                {"role": "system", "content": self.prompt(role)},
                {"role": "user", "content": input.to_string()},
            ],
        })
    }
}

/// Pull the JSON object out of a chat-completion reply, tolerating a fenced
/// code block around it.
pub fn extract_content(reply: &Value) -> Result<Value, BackendError> {
    let content = reply
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| BackendError::Malformed("reply has no choices[0].message.content".into()))?;
    let trimmed = content.trim();
    let body = trimmed
        .strip_prefix("```json")
        .or_else(|| trimmed.strip_prefix("```"))
        .and_then(|s| s.strip_suffix("```"))
        .unwrap_or(trimmed);
    serde_json::from_str(body.trim()).map_err(|e| BackendError::Malformed(format!("content is not JSON: {e}")))
}

impl AgentBackend for RemoteChatBackend {
    fn name(&self) -> &str {
        "remote-chat"
    }

    fn invoke(&self, role: AgentRole, input: &Value, _attempt: u32) -> Result<Value, BackendError> {
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(key) = &self.config.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        let reply: Value = match req.send_json(self.request_body(role, input)) {
            Ok(resp) => resp
                .into_json()
                .map_err(|e| BackendError::Malformed(format!("reply is not JSON: {e}")))?,
            Err(ureq::Error::Status(code, _)) => return Err(BackendError::Unavailable(format!("HTTP {code}"))),
            Err(e) => return Err(BackendError::Unavailable(e.to_string())),
        };
        extract_content(&reply)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    /// Serve one canned HTTP response and hand back the request body.
    fn one_shot_server(status: u16, body: String) -> (String, std::thread::JoinHandle<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
            String::from_utf8(buf).unwrap()
        });
        (url, handle)
    }

    fn backend(endpoint: String) -> RemoteChatBackend {
        RemoteChatBackend::new(RemoteConfig {
            endpoint,
            api_key: Some("k".into()),
            model: "m".into(),
            prompt_dir: None,
            timeout: Duration::from_secs(5),
        })
        .unwrap()
    }

    #[test]
    fn round_trip_through_chat_endpoint() {
        let reply = json!({"choices": [{"message": {"content": "```json\n{\"branch\":\"hold\",\"reason\":\"stable\"}\n```"}}]});
        let (url, server) = one_shot_server(200, reply.to_string());
        let out = backend(url).invoke(AgentRole::Gate, &json!({"x": 1}), 0).unwrap();
        assert_eq!(out, json!({"branch": "hold", "reason": "stable"}));
        let sent: Value = serde_json::from_str(&server.join().unwrap()).unwrap();
        assert_eq!(sent["model"], "m");
        assert_eq!(sent["messages"][1]["content"], "{\"x\":1}");
        assert!(sent["messages"][0]["content"].as_str().unwrap().contains("branch"));
    }

    #[test]
    fn server_error_is_unavailable() {
        let (url, server) = one_shot_server(503, "{}".into());
        let err = backend(url).invoke(AgentRole::Gate, &json!({}), 0).unwrap_err();
        assert!(matches!(err, BackendError::Unavailable(_)));
        server.join().unwrap();
    }

    #[test]
    fn non_json_content_is_malformed() {
        let reply = json!({"choices": [{"message": {"content": "sure, lower the FiO2"}}]});
        assert!(matches!(extract_content(&reply), Err(BackendError::Malformed(_))));
    }

    #[test]
    fn every_role_has_a_prompt() {
        for role in AgentRole::ALL {
            assert!(!embedded_prompt(role).trim().is_empty(), "{role}");
        }
    }
}

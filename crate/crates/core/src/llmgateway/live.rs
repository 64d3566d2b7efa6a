use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::{ChatBackend, ChatRequest, ChatResponse, EndpointConfig, GatewayError, TokenCounts};

/// POSTs to `{base_url}/chat/completions` with bounded exponential backoff.
pub struct LiveBackend {
    cfg: EndpointConfig,
    agent: ureq::Agent,
}

enum Attempt {
    Done(Result<ChatResponse, GatewayError>),
    Transient(String),
}

impl LiveBackend {
    pub fn new(cfg: EndpointConfig) -> Result<Self, GatewayError> {
        cfg.validate()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_secs)))
            .build()
            .into();
        Ok(Self { cfg, agent })
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.cfg.base_url.trim_end_matches('/'))
    }

    fn body(req: &ChatRequest) -> Value {
        let mut body = json!({
            "model": req.model_name,
            "messages": [
                {"role": "system", "content": req.system_prompt},
                {"role": "user", "content": req.user_prompt},
            ],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        if let Some(seed) = req.seed {
            body["seed"] = json!(seed);
        }
        body
    }

    fn attempt(&self, body: &Value) -> Attempt {
        let start = Instant::now();
        let mut call = self.agent.post(&self.url());
        if let Some(key) = &self.cfg.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = match call.send_json(body) {
            Ok(r) => r,
            Err(e) => return Attempt::Transient(format!("transport: {e}")),
        };
        let status = resp.status().as_u16();
        let text = match resp.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => return Attempt::Transient(format!("reading body: {e}")),
        };
        let latency = start.elapsed().as_secs_f64();
        match status {
            200..=299 => Attempt::Done(parse_completion(&text, latency)),
            429 | 500..=599 => Attempt::Transient(format!("HTTP {status}")),
            _ => Attempt::Done(Err(GatewayError::Http {
                status,
                body: text.chars().take(500).collect(),
            })),
        }
    }
}

fn parse_completion(text: &str, latency: f64) -> Result<ChatResponse, GatewayError> {
    let v: Value =
        serde_json::from_str(text).map_err(|e| GatewayError::MalformedResponse(e.to_string()))?;
    let choice = v
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| GatewayError::MalformedResponse("no choices".into()))?;
    let content = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .map(str::to_string);
    let finish = choice
        .get("finish_reason")
        .and_then(Value::as_str)
        .unwrap_or("stop");
    let usage = |k: &str| v.pointer(&format!("/usage/{k}")).and_then(Value::as_u64).unwrap_or(0);
    Ok(ChatResponse::new(
        content,
        finish,
        latency,
        TokenCounts {
            prompt: usage("prompt_tokens"),
            completion: usage("completion_tokens"),
        },
    ))
}

impl ChatBackend for LiveBackend {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let body = Self::body(req);
        let mut last = String::new();
        for attempt in 1..=self.cfg.max_attempts {
            if attempt > 1 {
                std::thread::sleep(self.cfg.backoff(attempt - 1));
            }
            match self.attempt(&body) {
                Attempt::Done(r) => return r,
                Attempt::Transient(msg) => last = msg,
            }
        }
        Err(GatewayError::RetriesExhausted {
            attempts: self.cfg.max_attempts,
            last,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_openai_shape() {
        let r = parse_completion(
            r#"{"choices":[{"message":{"role":"assistant","content":"hi"},"finish_reason":"stop"}],
                "usage":{"prompt_tokens":3,"completion_tokens":1}}"#,
            0.5,
        )
        .unwrap();
        assert_eq!(r.text().unwrap(), "hi");
        assert_eq!(r.token_counts, TokenCounts { prompt: 3, completion: 1 });
        assert!(parse_completion("{}", 0.0).is_err());
    }

    #[test]
    fn request_body_has_system_then_user() {
        let b = LiveBackend::body(&ChatRequest::new("m", "s", "u").with_seed(Some(3)));
        assert_eq!(b["messages"][0]["role"], "system");
        assert_eq!(b["messages"][1]["content"], "u");
        assert_eq!(b["seed"], 3);
    }
}

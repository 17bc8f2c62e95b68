//! Chat-completion client with retries, backoff and an in-flight cap.

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{OracleBackend, OracleError, OracleRequest, TemplateRegistry};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct BackendConfig {
    /// Endpoint root; requests go to `{base_url}/chat/completions`.
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Retries after the first attempt.
    pub retries: u32,
    pub timeout_secs: u64,
    /// First backoff delay; attempt `n` waits `base · 2^n`, ±10%.
    pub backoff_base_ms: u64,
    pub max_in_flight: usize,
    pub jitter_seed: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model: "default".into(),
            api_key_env: "TOF_API_KEY".into(),
            temperature: 0.0,
            max_tokens: 512,
            retries: 3,
            timeout_secs: 30,
            backoff_base_ms: 500,
            max_in_flight: 4,
            jitter_seed: 0,
        }
    }
}

/// Waits between retries; injectable so tests can observe the schedule.
pub trait Sleeper: Send + Sync {
    fn sleep(&self, d: Duration);
}

#[derive(Debug, Default, Clone, Copy)]
pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

struct Gate {
    count: Mutex<usize>,
    freed: Condvar,
    cap: usize,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn acquire(&self) -> Permit<'_> {
        let mut n = self.count.lock().expect("gate poisoned");
        while *n >= self.cap {
            n = self.freed.wait(n).expect("gate poisoned");
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.count.lock().expect("gate poisoned") -= 1;
        self.0.freed.notify_one();
    }
}

pub struct RemoteBackend {
    cfg: BackendConfig,
    key: String,
    templates: TemplateRegistry,
    agent: ureq::Agent,
    sleeper: Arc<dyn Sleeper>,
    jitter: Mutex<SplitMix64>,
    gate: Gate,
}

enum Attempt {
    Done(String),
    Retry(String),
    Fail(OracleError),
}

impl RemoteBackend {
    /// Fails with an authentication error when the key variable is unset.
    pub fn new(cfg: BackendConfig, templates: TemplateRegistry) -> Result<Self, OracleError> {
        let key = std::env::var(&cfg.api_key_env).map_err(|_| {
            OracleError::Auth(format!("environment variable `{}` is not set", cfg.api_key_env))
        })?;
        Ok(Self::with_key(cfg, templates, key))
    }

    /// Uses `key` directly instead of reading the environment.
    pub fn with_key(cfg: BackendConfig, templates: TemplateRegistry, key: impl Into<String>) -> Self {
        let key = key.into();
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build();
        RemoteBackend {
            key,
            templates,
            agent,
            sleeper: Arc::new(ThreadSleeper),
            jitter: Mutex::new(SplitMix64::seed_from_u64(cfg.jitter_seed)),
            gate: Gate {
                count: Mutex::new(0),
                freed: Condvar::new(),
                cap: cfg.max_in_flight.max(1),
            },
            cfg,
        }
    }

    pub fn with_sleeper(mut self, sleeper: Arc<dyn Sleeper>) -> Self {
        self.sleeper = sleeper;
        self
    }

    pub fn config(&self) -> &BackendConfig {
        &self.cfg
    }

    /// Delay before retry number `attempt` (0-based).
    pub fn backoff(&self, attempt: u32) -> Duration {
        let base = self.cfg.backoff_base_ms as f64 * 2f64.powi(attempt as i32);
        let j: f64 = self.jitter.lock().expect("jitter poisoned").random_range(-0.1..=0.1);
        Duration::from_secs_f64(base * (1.0 + j) / 1000.0)
    }

    fn attempt(&self, body: &str) -> Attempt {
        let url = format!("{}/chat/completions", self.cfg.base_url.trim_end_matches('/'));
        let result = self
            .agent
            .post(&url)
            .set("Authorization", &format!("Bearer {}", self.key))
            .set("Content-Type", "application/json")
            .send_string(body);
        match result {
            Ok(resp) => match resp.into_string() {
                Ok(text) => match first_message(&text) {
                    Some(content) => Attempt::Done(content),
                    None => Attempt::Fail(OracleError::Malformed(truncate(&text))),
                },
                Err(e) => Attempt::Retry(e.to_string()),
            },
            Err(ureq::Error::Status(code @ (401 | 403), _)) => {
                Attempt::Fail(OracleError::Auth(format!("HTTP {code} from {url}")))
            }
            Err(ureq::Error::Status(code, _)) if code >= 500 => Attempt::Retry(format!("HTTP {code}")),
            Err(ureq::Error::Status(code, resp)) => Attempt::Fail(OracleError::Http {
                status: code,
                body: truncate(&resp.into_string().unwrap_or_default()),
            }),
            Err(ureq::Error::Transport(t)) => Attempt::Retry(t.to_string()),
        }
    }
}

fn truncate(s: &str) -> String {
    s.chars().take(200).collect()
}

fn first_message(body: &str) -> Option<String> {
    let v: serde_json::Value = serde_json::from_str(body).ok()?;
    v.get("choices")?
        .get(0)?
        .get("message")?
        .get("content")?
        .as_str()
        .map(|s| s.trim().to_string())
}

impl OracleBackend for RemoteBackend {
    fn complete(&self, req: &OracleRequest) -> Result<String, OracleError> {
        let prompt = self.templates.render(req)?;
        let body = json!({
            "model": self.cfg.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.cfg.temperature,
            "max_tokens": self.cfg.max_tokens,
        })
        .to_string();
        let _permit = self.gate.acquire();
        let mut attempt = 0;
        loop {
            match self.attempt(&body) {
                Attempt::Done(text) => return Ok(text),
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(message) => {
                    if attempt >= self.cfg.retries {
                        return Err(OracleError::Transport {
                            attempts: attempt as usize + 1,
                            message,
                        });
                    }
                    log::warn!("oracle request failed ({message}); retrying");
                    self.sleeper.sleep(self.backoff(attempt));
                    attempt += 1;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = BackendConfig::default();
        assert_eq!((c.temperature, c.max_tokens, c.retries, c.timeout_secs), (0.0, 512, 3, 30));
        assert_eq!(c.max_in_flight, 4);
    }

    #[test]
    fn missing_key_names_the_variable() {
        let cfg = BackendConfig {
            api_key_env: "TOF_TEST_SURELY_UNSET_VARIABLE".into(),
            ..Default::default()
        };
        let err = RemoteBackend::new(cfg, TemplateRegistry::default()).err().unwrap();
        assert!(err.to_string().contains("TOF_TEST_SURELY_UNSET_VARIABLE"));
        assert!(matches!(err, OracleError::Auth(_)));
    }

    #[test]
    fn parses_first_choice() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"  E \n"}}]}"#;
        assert_eq!(first_message(body).as_deref(), Some("E"));
        assert_eq!(first_message(r#"{"choices":[]}"#), None);
    }
}

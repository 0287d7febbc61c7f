//! Scores a prompt by asking a chat-completions style language model to
//! complete a randomly chosen baseline input, then comparing the output with
//! the baseline reference.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::text::{ScoreFunctionConfig, TextScorer};
use super::Oracle;
use crate::error::{Error, OracleError, Result};

static HTTP_REQUESTS: AtomicUsize = AtomicUsize::new(0);

/// Number of HTTP requests issued by [`HttpTransport`] in this process.
pub fn http_request_count() -> usize {
    HTTP_REQUESTS.load(Ordering::SeqCst)
}

/// One baseline input/output context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselinePair {
    pub input: String,
    pub reference: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BaselineSet {
    pairs: Vec<BaselinePair>,
}

impl BaselineSet {
    pub fn new(pairs: Vec<BaselinePair>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::InvalidConfig("baseline set is empty".into()));
        }
        if let Some(i) = pairs
            .iter()
            .position(|p| p.input.trim().is_empty() || p.reference.trim().is_empty())
        {
            return Err(Error::InvalidConfig(format!("baseline pair {i} has an empty text")));
        }
        Ok(BaselineSet { pairs })
    }

    /// Reads a JSON array of `{"input": ..., "reference": ...}` objects.
    pub fn from_json(text: &str) -> Result<Self> {
        Self::new(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[BaselinePair] {
        &self.pairs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmEvaluatorConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default = "default_auth_env")]
    pub auth_env: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
}

fn default_auth_env() -> String {
    "PROMPTSEL_API_KEY".into()
}
fn default_timeout_ms() -> u64 {
    30_000
}
fn default_max_retries() -> u32 {
    3
}

impl LlmEvaluatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.timeout_ms == 0 {
            return Err(Error::InvalidConfig("llm timeout must be positive".into()));
        }
        if self.endpoint.trim().is_empty() || self.model.trim().is_empty() {
            return Err(Error::InvalidConfig("llm endpoint and model are required".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    pub id: Option<String>,
    pub text: String,
}

impl ChatResponse {
    /// Extracts the first choice from a chat-completions (or legacy
    /// completions) response body.
    pub fn from_json(body: &Value) -> Result<Self, OracleError> {
        let choice = body
            .get("choices")
            .and_then(|c| c.get(0))
            .ok_or_else(|| OracleError::Parse("response has no choices".into()))?;
        let text = choice
            .get("message")
            .and_then(|m| m.get("content"))
            .or_else(|| choice.get("text"))
            .and_then(Value::as_str)
            .ok_or_else(|| OracleError::Parse("first choice carries no text".into()))?;
        Ok(ChatResponse {
            id: body.get("id").and_then(Value::as_str).map(str::to_owned),
            text: text.to_owned(),
        })
    }
}

/// Sends one completion request. Implemented over HTTP for real use and by
/// in-memory mocks in tests.
pub trait Transport {
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, OracleError>;
}

impl<F> Transport for F
where
    F: Fn(&ChatRequest) -> Result<ChatResponse, OracleError>,
{
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, OracleError> {
        self(request)
    }
}

pub struct HttpTransport {
    agent: ureq::Agent,
    endpoint: String,
    token: String,
    timeout_ms: u64,
}

impl HttpTransport {
    /// Reads the bearer token from the configured environment variable.
    pub fn from_config(cfg: &LlmEvaluatorConfig) -> Result<Self, OracleError> {
        let token = std::env::var(&cfg.auth_env)
            .map_err(|_| OracleError::MissingCredential(cfg.auth_env.clone()))?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
            .http_status_as_error(true)
            .build()
            .into();
        Ok(HttpTransport {
            agent,
            endpoint: cfg.endpoint.clone(),
            token,
            timeout_ms: cfg.timeout_ms,
        })
    }
}

impl Transport for HttpTransport {
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, OracleError> {
        HTTP_REQUESTS.fetch_add(1, Ordering::SeqCst);
        let response = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.token))
            .send_json(request)
            .map_err(|e| match e {
                ureq::Error::Timeout(_) => OracleError::Timeout(self.timeout_ms),
                other => OracleError::Transport(other.to_string()),
            })?;
        let body: Value = response
            .into_body()
            .read_json()
            .map_err(|e| OracleError::Parse(e.to_string()))?;
        ChatResponse::from_json(&body)
    }
}

/// Per-call record kept by the evaluator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluatorTraceRow {
    pub round: u64,
    pub baseline_index: usize,
    pub latency_ms: u64,
    pub score: f64,
    pub response_id: Option<String>,
}

/// Scores prompt texts with a language model.
///
/// Baseline pairs are drawn uniformly from the injected rng; the evaluator
/// holds no optimizer state.
pub struct LlmEvaluator<T> {
    cfg: LlmEvaluatorConfig,
    baseline: BaselineSet,
    scorer: TextScorer,
    transport: T,
    prompts: Vec<Option<String>>,
    rng: ChaCha8Rng,
    trace: Vec<EvaluatorTraceRow>,
}

impl<T: Transport> LlmEvaluator<T> {
    /// `prompts[n]` is the text of candidate `n` (if a decoder produced one).
    pub fn new(
        cfg: LlmEvaluatorConfig,
        baseline: BaselineSet,
        score_cfg: ScoreFunctionConfig,
        transport: T,
        prompts: Vec<Option<String>>,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        let scorer = TextScorer::new(
            &score_cfg,
            baseline.pairs().iter().map(|p| p.reference.as_str()),
        );
        Ok(LlmEvaluator {
            cfg,
            baseline,
            scorer,
            transport,
            prompts,
            rng: ChaCha8Rng::seed_from_u64(seed),
            trace: Vec::new(),
        })
    }

    pub fn config(&self) -> &LlmEvaluatorConfig {
        &self.cfg
    }

    pub fn trace(&self) -> &[EvaluatorTraceRow] {
        &self.trace
    }

    /// One score for `prompt_text`: pick a baseline pair uniformly, send the
    /// prompt followed by the pair's input, score the reply against the
    /// pair's reference.
    pub fn llm_evaluate(&mut self, prompt_text: &str) -> Result<f64, OracleError> {
        let m = self.rng.random_range(0..self.baseline.len());
        let pair = &self.baseline.pairs()[m];
        let request = ChatRequest {
            model: self.cfg.model.clone(),
            messages: vec![ChatMessage {
                role: "user".into(),
                content: format!("{prompt_text}\n{}", pair.input),
            }],
            temperature: self.cfg.temperature,
        };
        let started = Instant::now();
        let response = self.transport.send(&request)?;
        let latency_ms = started.elapsed().as_millis() as u64;
        let score = if response.text.trim().is_empty() {
            0.0
        } else {
            self.scorer
                .score(&response.text, &pair.reference)
                .map_err(|e| OracleError::Other(e.to_string()))?
        };
        self.trace.push(EvaluatorTraceRow {
            round: self.trace.len() as u64 + 1,
            baseline_index: m,
            latency_ms,
            score,
            response_id: response.id,
        });
        Ok(score)
    }

    /// Writes `round,m,latency_ms,score` rows.
    pub fn write_trace_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "round,m,latency_ms,score")?;
        for r in &self.trace {
            writeln!(out, "{},{},{},{}", r.round, r.baseline_index, r.latency_ms, r.score)?;
        }
        Ok(())
    }
}

impl<T: Transport> Oracle for LlmEvaluator<T> {
    fn num_candidates(&self) -> usize {
        self.prompts.len()
    }

    fn evaluate(&mut self, candidate: usize) -> Result<f64, OracleError> {
        let text = self
            .prompts
            .get(candidate)
            .and_then(Clone::clone)
            .ok_or(OracleError::MissingPrompt(candidate))?;
        self.llm_evaluate(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;
    use std::cell::RefCell;

    fn baseline() -> BaselineSet {
        BaselineSet::new(vec![
            BaselinePair {
                input: "sort: b a".into(),
                reference: "a b".into(),
            },
            BaselinePair {
                input: "sort: d c".into(),
                reference: "c d".into(),
            },
            BaselinePair {
                input: "sort: f e".into(),
                reference: "e f".into(),
            },
        ])
        .unwrap()
    }

    fn cfg() -> LlmEvaluatorConfig {
        LlmEvaluatorConfig {
            endpoint: "http://localhost:9/v1/chat/completions".into(),
            model: "test-model".into(),
            auth_env: "UNSET_TOKEN_FOR_TESTS".into(),
            timeout_ms: 100,
            temperature: 0.0,
            max_retries: 0,
        }
    }

    fn reply(text: &str) -> Result<ChatResponse, OracleError> {
        Ok(ChatResponse {
            id: Some("r1".into()),
            text: text.into(),
        })
    }

    #[test]
    fn echo_of_reference_scores_one() {
        let base = baseline();
        let refs: Vec<(String, String)> = base
            .pairs()
            .iter()
            .map(|p| (p.input.clone(), p.reference.clone()))
            .collect();
        let echo = move |req: &ChatRequest| {
            let content = &req.messages[0].content;
            let (_, reference) = refs.iter().find(|(i, _)| content.ends_with(i.as_str())).unwrap();
            reply(reference)
        };
        let mut ev = LlmEvaluator::new(cfg(), base, ScoreFunctionConfig::default(), echo, vec![], 3).unwrap();
        for _ in 0..10 {
            assert!((ev.llm_evaluate("Sort the words:").unwrap() - 1.0).abs() < 1e-12);
        }
        assert_eq!(ev.trace().len(), 10);
    }

    #[test]
    fn disjoint_and_partial_responses() {
        let b = BaselineSet::new(vec![BaselinePair {
            input: "x".into(),
            reference: "the cat sat".into(),
        }])
        .unwrap();
        let disjoint = |_: &ChatRequest| reply("zebra");
        let mut ev = LlmEvaluator::new(cfg(), b.clone(), ScoreFunctionConfig::default(), disjoint, vec![], 1).unwrap();
        assert_eq!(ev.llm_evaluate("p").unwrap(), 0.0);

        let fixed = |_: &ChatRequest| reply("the cat ran");
        let mut ev = LlmEvaluator::new(cfg(), b, ScoreFunctionConfig::default(), fixed, vec![], 1).unwrap();
        assert!((ev.llm_evaluate("p").unwrap() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn request_layout() {
        let seen = RefCell::new(None);
        let capture = |req: &ChatRequest| {
            *seen.borrow_mut() = Some(serde_json::to_value(req).unwrap());
            reply("a b")
        };
        let b = BaselineSet::new(vec![BaselinePair {
            input: "sort: b a".into(),
            reference: "a b".into(),
        }])
        .unwrap();
        let mut ev = LlmEvaluator::new(cfg(), b, ScoreFunctionConfig::default(), capture, vec![Some("Sort:".into())], 1).unwrap();
        ev.evaluate(0).unwrap();
        let body = seen.borrow().clone().unwrap();
        assert_eq!(
            body,
            json!({
                "model": "test-model",
                "messages": [{"role": "user", "content": "Sort:\nsort: b a"}],
                "temperature": 0.0
            })
        );
        assert!(matches!(ev.evaluate(1), Err(OracleError::MissingPrompt(1))));
    }

    #[test]
    fn baseline_choice_is_uniform() {
        let counter = |_: &ChatRequest| reply("a");
        let mut ev = LlmEvaluator::new(cfg(), baseline(), ScoreFunctionConfig::default(), counter, vec![], 17).unwrap();
        let draws = 100_000;
        for _ in 0..draws {
            ev.llm_evaluate("p").unwrap();
        }
        let p = 1.0 / 3.0;
        let se = (p * (1.0 - p) / draws as f64).sqrt();
        for m in 0..3 {
            let freq = ev.trace().iter().filter(|r| r.baseline_index == m).count() as f64 / draws as f64;
            assert!((freq - p).abs() < 3.0 * se, "pair {m}: {freq}");
        }
    }

    #[test]
    fn response_parsing() {
        let chat = json!({"id": "abc", "choices": [{"message": {"role": "assistant", "content": "hi"}}]});
        assert_eq!(ChatResponse::from_json(&chat).unwrap().text, "hi");
        let legacy = json!({"choices": [{"text": "yo"}]});
        assert_eq!(ChatResponse::from_json(&legacy).unwrap().text, "yo");
        assert!(matches!(ChatResponse::from_json(&json!({})), Err(OracleError::Parse(_))));
    }

    #[test]
    fn missing_token_is_reported() {
        assert!(matches!(
            HttpTransport::from_config(&cfg()),
            Err(OracleError::MissingCredential(_))
        ));
    }

    #[test]
    fn baseline_file_schema() {
        let b = BaselineSet::from_json(r#"[{"input": "2", "reference": "two"}]"#).unwrap();
        assert_eq!(b.len(), 1);
        assert!(BaselineSet::from_json("[]").is_err());
    }
}

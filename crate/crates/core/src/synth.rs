//! Two-phase synthetic retrieval data.
//!
//! Phase 1 asks a chat model to brainstorm retrieval task descriptions.
//! Phase 2 asks it, once per (task, random parameters), for a JSON object
//! with a query, a positive document and a hard negative document. Replies
//! are validated into retrieval training examples.
//!
//! The model sits behind [`Transport`]. [`HttpTransport`] speaks the common
//! chat-completions wire shape, [`MockTransport`] replays a fixture file
//! keyed by request hash, and [`CannedGenerator`] fabricates conforming
//! replies offline (used to record fixtures).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::data::TrainExample;
use crate::error::{Error, Result};

pub const API_KEY_ENV: &str = "SYNTH_API_KEY";

const PHASE1_TEMPLATE: &str = "Brainstorm a list of potentially useful text retrieval tasks. Here are a few examples for your reference:
- {x1}
- {x2}
Please adhere to the following guidelines:
- Specify what the text is, and what the desired documents are.
- Each retrieval task should cover a wide range of queries, and should not be too specific.
Your output must always be string, the string is a json dict start with { and ends with }, the key is 'tasks', and the value is a list of strings only, with about {NUM} elements, and each element corresponds to a distinct retrieval task in one sentence. Do not explain yourself or output anything else. Be creative!
";

const PHASE2_TEMPLATE: &str = "You have been assigned a retrieval task: {task}
Your mission is to write one text retrieval example for this task in JSON format. The JSON object must contain the following keys:
- 'user_query': a string, a random user search query specified by the retrieval task.
- 'positive_document': a string, a relevant document for the user query.
- 'hard_negative_document': a string, a hard negative document that only appears relevant to the query.
Please adhere to the following guidelines:
- The 'user_query' should be {query_type}, {query_length}, {clarity}, and diverse in topic.
- All documents must be created independent of the query. Avoid copying the query verbatim. It's acceptable if some parts of the 'positive_document' are not topically related to the query.
- All documents should be at least {num_words} words long.
- The 'hard_negative_document' contains some useful information, but it should be less useful or comprehensive compared to the 'positive_document'.
- Both the query and documents should be in {language}.
- Do not provide any explanation in any document on why it is relevant or not relevant to the query.
- Both the query and documents require {difficulty} level education to understand.
Your output must always be a JSON object only, do not explain yourself or output anything else. Be creative!
";

macro_rules! closed_set {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }
    };
}

closed_set!(QueryType {
    ExtremelyLongTail => "extremely long-tail",
    LongTail => "long-tail",
    Common => "common",
});

closed_set!(QueryLength {
    UnderFive => "less than 5 words",
    FiveToFifteen => "5 to 15 words",
    AtLeastTen => "at least 10 words",
});

closed_set!(Clarity {
    Clear => "clear",
    WithEffort => "understandable with some effort",
    Ambiguous => "ambiguous",
});

closed_set!(Difficulty {
    HighSchool => "high school",
    College => "college",
    Phd => "PhD",
});

pub const NUM_WORDS: [u32; 6] = [50, 100, 200, 300, 400, 500];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthParams {
    pub query_type: QueryType,
    pub query_length: QueryLength,
    pub clarity: Clarity,
    pub num_words: u32,
    pub difficulty: Difficulty,
    pub language: String,
}

pub const DEFAULT_LANGUAGE: &str = "English";

/// Independent uniform draws of every randomized field; the language is
/// fixed.
pub fn sample_params_in(seed: u64, language: &str) -> SynthParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SynthParams {
        query_type: *QueryType::ALL.choose(&mut rng).expect("non-empty"),
        query_length: *QueryLength::ALL.choose(&mut rng).expect("non-empty"),
        clarity: *Clarity::ALL.choose(&mut rng).expect("non-empty"),
        num_words: *NUM_WORDS.choose(&mut rng).expect("non-empty"),
        difficulty: *Difficulty::ALL.choose(&mut rng).expect("non-empty"),
        language: language.to_string(),
    }
}

pub fn sample_params(seed: u64) -> SynthParams {
    sample_params_in(seed, DEFAULT_LANGUAGE)
}

pub fn build_phase1_prompt(example_tasks: [&str; 2], num: usize) -> Result<String> {
    if num == 0 {
        return Err(Error::InvalidConfig("phase-1 NUM must be at least 1".into()));
    }
    if example_tasks[0] == example_tasks[1] {
        return Err(Error::InvalidConfig("phase-1 example tasks must differ".into()));
    }
    if example_tasks.iter().any(|t| t.trim().is_empty()) {
        return Err(Error::EmptyText);
    }
    Ok(PHASE1_TEMPLATE
        .replace("{x1}", example_tasks[0])
        .replace("{x2}", example_tasks[1])
        .replace("{NUM}", &num.to_string()))
}

pub fn build_phase2_prompt(task: &str, params: &SynthParams) -> Result<String> {
    if task.trim().is_empty() {
        return Err(Error::EmptyText);
    }
    // `{task}` goes last so placeholder-like text inside it stays literal.
    Ok(PHASE2_TEMPLATE
        .replace("{query_type}", params.query_type.as_str())
        .replace("{query_length}", params.query_length.as_str())
        .replace("{clarity}", params.clarity.as_str())
        .replace("{num_words}", &params.num_words.to_string())
        .replace("{difficulty}", params.difficulty.as_str())
        .replace("{language}", &params.language)
        .replace("{task}", task))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub prompt: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl LlmRequest {
    /// Hex SHA-256 of the request's JSON form; the mock's lookup key.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("request serializes");
        Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Chat-completions request body.
    pub fn wire_body(&self) -> Value {
        json!({
            "model": self.model,
            "messages": [{"role": "user", "content": self.prompt}],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmResponse {
    pub text: String,
    pub finish_reason: String,
}

/// Outcome of one HTTP exchange, before retry policy is applied.
#[derive(Debug, Clone, PartialEq)]
pub enum Reply {
    Status { code: u16, body: String },
    TimedOut,
}

pub trait Transport: Sync {
    /// `Err` is reserved for failures no retry can fix.
    fn send(&self, request: &LlmRequest) -> Result<Reply>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    pub attempts: u32,
    /// Delay before the second attempt; doubles after each failure.
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay_ms: 500,
        }
    }
}

fn completion_body(text: &str) -> String {
    json!({"choices": [{"message": {"role": "assistant", "content": text}, "finish_reason": "stop"}]}).to_string()
}

fn parse_completion(code: u16, body: &str) -> Result<LlmResponse> {
    let malformed = |what: &str| Error::ServiceError {
        status: code,
        message: format!("malformed completion: {what}"),
    };
    let v: Value = serde_json::from_str(body).map_err(|_| malformed("body is not JSON"))?;
    let choice = v
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| malformed("no choices"))?;
    let text = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| malformed("no message content"))?;
    let finish = choice.get("finish_reason").and_then(Value::as_str).unwrap_or("unknown");
    Ok(LlmResponse {
        text: text.to_string(),
        finish_reason: finish.to_string(),
    })
}

/// Sends `request`, retrying rate limits, server errors and timeouts with
/// exponential backoff.
pub fn call_llm(request: &LlmRequest, transport: &dyn Transport, retry: &RetryPolicy) -> Result<LlmResponse> {
    if request.prompt.trim().is_empty() {
        return Err(Error::EmptyText);
    }
    let attempts = retry.attempts.max(1);
    let mut last = Error::Timeout(attempts);
    for attempt in 0..attempts {
        if attempt > 0 {
            let delay = retry.base_delay_ms.saturating_mul(1 << (attempt - 1).min(16));
            thread::sleep(Duration::from_millis(delay));
        }
        match transport.send(request)? {
            Reply::Status { code: 200..=299, body } => return parse_completion(200, &body),
            Reply::Status { code: code @ (401 | 403), .. } => return Err(Error::AuthError(code)),
            Reply::Status { code: 429, .. } => {
                log::warn!("rate limited (attempt {} of {attempts})", attempt + 1);
                last = Error::RateLimited(attempts);
            }
            Reply::Status { code: code @ 500..=599, body } => {
                log::warn!("service error {code} (attempt {} of {attempts})", attempt + 1);
                last = Error::ServiceError { status: code, message: body };
            }
            Reply::Status { code, body } => return Err(Error::ServiceError { status: code, message: body }),
            Reply::TimedOut => {
                log::warn!("request timed out (attempt {} of {attempts})", attempt + 1);
                last = Error::Timeout(attempts);
            }
        }
    }
    Err(last)
}

/// Blocking HTTP client for a chat-completions endpoint.
pub struct HttpTransport {
    endpoint: String,
    api_key: String,
    agent: ureq::Agent,
}

impl HttpTransport {
    /// Reads the credential from [`API_KEY_ENV`].
    pub fn from_env(endpoint: &str, timeout: Duration) -> Result<Self> {
        let api_key = std::env::var(API_KEY_ENV)
            .map_err(|_| Error::InvalidConfig(format!("{API_KEY_ENV} is not set")))?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            endpoint: endpoint.to_string(),
            api_key,
            agent,
        })
    }
}

impl Transport for HttpTransport {
    fn send(&self, request: &LlmRequest) -> Result<Reply> {
        let result = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .content_type("application/json")
            .send(request.wire_body().to_string().as_bytes());
        Ok(match result {
            Ok(mut resp) => Reply::Status {
                code: resp.status().as_u16(),
                body: resp.body_mut().read_to_string().unwrap_or_default(),
            },
            Err(ureq::Error::Timeout(_)) => Reply::TimedOut,
            // Connection-level failures surface as a gateway error so the
            // retry loop treats them as transient.
            Err(e) => Reply::Status {
                code: 502,
                body: e.to_string(),
            },
        })
    }
}

/// Canned replies keyed by [`LlmRequest::hash`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Fixture {
    pub responses: BTreeMap<String, String>,
}

impl Fixture {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fixture serializes") + "\n"
    }
}

/// Replays a [`Fixture`]; never touches the network.
pub struct MockTransport {
    fixture: Fixture,
}

impl MockTransport {
    pub fn new(fixture: Fixture) -> Self {
        Self { fixture }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::new(Fixture::load(path)?))
    }
}

impl Transport for MockTransport {
    fn send(&self, request: &LlmRequest) -> Result<Reply> {
        let key = request.hash();
        match self.fixture.responses.get(&key) {
            Some(text) => Ok(Reply::Status {
                code: 200,
                body: completion_body(text),
            }),
            None => Err(Error::MissingFixture(key)),
        }
    }
}

/// Offline stand-in for a model: returns well-formed replies to both prompt
/// shapes, seeded by the prompt text.
pub struct CannedGenerator;

const CANNED_WORDS: &[&str] = &[
    "archive", "budget", "catalog", "climate", "contract", "dataset", "design", "dosage", "energy", "filing",
    "garden", "grammar", "harbor", "history", "invoice", "journal", "kernel", "ledger", "license", "market",
    "medicine", "network", "notice", "orbit", "patent", "policy", "protein", "recipe", "report", "review",
    "safety", "schedule", "server", "soil", "statute", "survey", "tariff", "thesis", "transit", "vaccine",
];

impl CannedGenerator {
    fn words(rng: &mut ChaCha8Rng, n: usize) -> String {
        (0..n)
            .map(|_| *CANNED_WORDS.choose(rng).expect("non-empty"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn number_after(prompt: &str, marker: &str, default: usize) -> usize {
        prompt
            .split(marker)
            .nth(1)
            .and_then(|rest| rest.split_whitespace().next())
            .and_then(|n| n.parse().ok())
            .unwrap_or(default)
    }

    pub fn reply(prompt: &str) -> String {
        let digest = Sha256::digest(prompt.as_bytes());
        let seed = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if prompt.starts_with("Brainstorm") {
            let num = Self::number_after(prompt, "with about ", 5).max(1);
            let tasks: Vec<String> = (0..num)
                .map(|i| {
                    format!(
                        "Given a question about {}, retrieve passages that answer it (variant {i})",
                        Self::words(&mut rng, 2)
                    )
                })
                .collect();
            json!({ "tasks": tasks }).to_string()
        } else {
            let n = Self::number_after(prompt, "documents should be at least ", 50);
            let query_len = rng.random_range(3..8);
            let reply = json!({
                "user_query": Self::words(&mut rng, query_len),
                "positive_document": Self::words(&mut rng, n),
                "hard_negative_document": Self::words(&mut rng, n),
            });
            format!("```json\n{reply}\n```")
        }
    }
}

impl Transport for CannedGenerator {
    fn send(&self, request: &LlmRequest) -> Result<Reply> {
        Ok(Reply::Status {
            code: 200,
            body: completion_body(&Self::reply(&request.prompt)),
        })
    }
}

fn strip_fences(raw: &str) -> &str {
    let t = raw.trim();
    let Some(rest) = t.strip_prefix("```") else {
        return t;
    };
    // Drop an optional language tag on the opening fence line.
    let body = rest.split_once('\n').map_or("", |(_, b)| b);
    body.trim_end().strip_suffix("```").unwrap_or(body).trim()
}

fn parse_object(raw: &str) -> Result<serde_json::Map<String, Value>> {
    match serde_json::from_str::<Value>(strip_fences(raw)) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(Error::NotJson("expected a JSON object".into())),
        Err(e) => Err(Error::NotJson(e.to_string())),
    }
}

fn string_key(map: &serde_json::Map<String, Value>, key: &str) -> Result<String> {
    match map.get(key) {
        Some(Value::String(s)) if !s.trim().is_empty() => Ok(s.clone()),
        _ => Err(Error::MissingKey(key.into())),
    }
}

/// Validates a phase-2 reply. Documents must reach half the requested
/// word count.
pub fn parse_triplet(raw: &str, params: &SynthParams) -> Result<TrainExample> {
    let map = parse_object(raw)?;
    let query = string_key(&map, "user_query")?;
    let pos = string_key(&map, "positive_document")?;
    let neg = string_key(&map, "hard_negative_document")?;
    let min = params.num_words.div_ceil(2) as usize;
    for (which, doc) in [("positive_document", &pos), ("hard_negative_document", &neg)] {
        let words = doc.split_whitespace().count();
        if words < min {
            return Err(Error::TooShort {
                which: which.into(),
                words,
                min,
            });
        }
    }
    Ok(TrainExample::Retrieval {
        query,
        pos: vec![pos],
        neg: vec![neg],
    })
}

/// Validates a phase-1 reply into task descriptions.
pub fn parse_tasks(raw: &str) -> Result<Vec<String>> {
    let map = parse_object(raw)?;
    let tasks = map
        .get("tasks")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::MissingKey("tasks".into()))?;
    let tasks: Vec<String> = tasks
        .iter()
        .filter_map(Value::as_str)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect();
    if tasks.is_empty() {
        return Err(Error::MissingKey("tasks".into()));
    }
    Ok(tasks)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub language: String,
    /// Phase-1 `{NUM}`.
    pub num_tasks: usize,
    pub generations_per_task: usize,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
    pub seed: u64,
    /// Pool the two phase-1 examples are drawn from.
    pub example_tasks: Vec<String>,
    pub retry: RetryPolicy,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://localhost:8000/v1/chat/completions".into(),
            model: "gpt-4".into(),
            temperature: 1.0,
            max_tokens: 2048,
            language: DEFAULT_LANGUAGE.into(),
            num_tasks: 20,
            generations_per_task: 10,
            max_in_flight: 4,
            timeout_secs: 120,
            seed: 0,
            example_tasks: vec![
                "Given a web search query, retrieve relevant passages that answer the query.".into(),
                "Given a medical question, retrieve articles from medical journals that answer it.".into(),
                "Given a product description, retrieve user reviews that discuss the same product.".into(),
                "Given a legal question, retrieve statutes and case summaries that address it.".into(),
            ],
            retry: RetryPolicy::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.model.trim().is_empty() {
            return bad("model must be set");
        }
        if self.num_tasks == 0 || self.generations_per_task == 0 || self.max_in_flight == 0 {
            return bad("num_tasks, generations_per_task and max_in_flight must be at least 1");
        }
        let mut distinct = self.example_tasks.clone();
        distinct.sort();
        distinct.dedup();
        if distinct.len() < 2 {
            return bad("example_tasks needs at least two distinct entries");
        }
        Ok(())
    }

    fn request(&self, prompt: String) -> LlmRequest {
        LlmRequest {
            prompt,
            model: self.model.clone(),
            temperature: self.temperature,
            max_tokens: self.max_tokens,
        }
    }

    /// The phase-1 request: two distinct seeded picks from `example_tasks`.
    pub fn phase1_request(&self) -> Result<LlmRequest> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut picks = self.example_tasks.choose_multiple(&mut rng, 2);
        let (a, mut b) = (picks.next().expect("two"), picks.next().expect("two"));
        if a == b {
            b = self.example_tasks.iter().find(|t| *t != a).expect("validated");
        }
        Ok(self.request(build_phase1_prompt([a, b], self.num_tasks)?))
    }

    /// Parameters for generation `g` of task `t`.
    pub fn params_for(&self, t: usize, g: usize) -> SynthParams {
        let salt = ((t as u64) << 32) | g as u64;
        sample_params_in(self.seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15), &self.language)
    }

    /// All phase-2 requests, task-major.
    pub fn phase2_requests(&self, tasks: &[String]) -> Result<Vec<(LlmRequest, SynthParams)>> {
        let mut out = Vec::with_capacity(tasks.len() * self.generations_per_task);
        for (t, task) in tasks.iter().enumerate() {
            for g in 0..self.generations_per_task {
                let params = self.params_for(t, g);
                out.push((self.request(build_phase2_prompt(task, &params)?), params));
            }
        }
        Ok(out)
    }
}

/// Runs `f` over `items` with at most `max_in_flight` workers; results keep
/// input order.
pub fn bounded_map<T: Sync, R: Send>(items: &[T], max_in_flight: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    thread::scope(|s| {
        for _ in 0..max_in_flight.clamp(1, items.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().expect("no poisoned workers")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("no poisoned workers")
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}

pub fn run_phase1(config: &SynthConfig, transport: &dyn Transport) -> Result<Vec<String>> {
    let reply = call_llm(&config.phase1_request()?, transport, &config.retry)?;
    parse_tasks(&reply.text)
}

/// Generates and validates `generations_per_task` triplets per task. The
/// first failure, in input order, aborts the run.
pub fn run_phase2(tasks: &[String], config: &SynthConfig, transport: &dyn Transport) -> Result<Vec<TrainExample>> {
    config.validate()?;
    let requests = config.phase2_requests(tasks)?;
    bounded_map(&requests, config.max_in_flight, |(req, params)| {
        let reply = call_llm(req, transport, &config.retry)?;
        parse_triplet(&reply.text, params)
    })
    .into_iter()
    .collect()
}

/// Records the replies `transport` gives to the phase-1 request and to the
/// phase-2 requests for `tasks`.
pub fn record_fixture(config: &SynthConfig, tasks: &[String], transport: &dyn Transport) -> Result<Fixture> {
    let mut requests = vec![config.phase1_request()?];
    requests.extend(config.phase2_requests(tasks)?.into_iter().map(|(req, _)| req));
    let mut fixture = Fixture::default();
    for req in requests {
        let reply = call_llm(&req, transport, &config.retry)?;
        fixture.responses.insert(req.hash(), reply.text);
    }
    Ok(fixture)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn params() -> SynthParams {
        SynthParams {
            query_type: QueryType::Common,
            query_length: QueryLength::FiveToFifteen,
            clarity: Clarity::Clear,
            num_words: 300,
            difficulty: Difficulty::College,
            language: "English".into(),
        }
    }

    #[test]
    fn phase1_substitution() {
        let p = build_phase1_prompt(["find recipes", "find laws"], 25).unwrap();
        assert!(p.contains("Your output must always be string"));
        assert!(p.contains("about 25 elements"));
        assert!(p.contains("\n- find recipes\n- find laws\n"));
        assert!(build_phase1_prompt(["a", "a"], 3).is_err());
        assert!(build_phase1_prompt(["a", "b"], 0).is_err());
    }

    #[test]
    fn phase2_substitution() {
        let p = build_phase2_prompt("find laws", &params()).unwrap();
        assert!(p.contains("at least 300 words long"));
        for key in ["user_query", "positive_document", "hard_negative_document"] {
            assert!(p.contains(&format!("'{key}'")));
        }
        assert!(p.contains("less useful or comprehensive compared to the 'positive_document'"));
        assert!(!p.contains('{'));
        let other = SynthParams {
            num_words: 50,
            ..params()
        };
        assert_ne!(p, build_phase2_prompt("find laws", &other).unwrap());
    }

    #[test]
    fn params_are_seeded_and_cover_num_words() {
        assert_eq!(sample_params(4), sample_params(4));
        let seen: HashSet<u32> = (0..600).map(|s| sample_params(s).num_words).collect();
        assert_eq!(seen.len(), NUM_WORDS.len());
    }

    fn reply(obj: Value) -> String {
        obj.to_string()
    }

    #[test]
    fn triplet_parsing() {
        let doc = vec!["w"; 150].join(" ");
        let ok = reply(json!({"user_query": "q", "positive_document": doc, "hard_negative_document": doc}));
        assert!(matches!(parse_triplet(&ok, &params()), Ok(TrainExample::Retrieval { .. })));
        assert!(parse_triplet(&format!("```json\n{ok}\n```"), &params()).is_ok());

        let missing = reply(json!({"user_query": "q", "positive_document": doc}));
        assert!(matches!(parse_triplet(&missing, &params()), Err(Error::MissingKey(k)) if k == "hard_negative_document"));

        let short = reply(json!({"user_query": "q", "positive_document": "ten words", "hard_negative_document": doc}));
        assert!(matches!(
            parse_triplet(&short, &params()),
            Err(Error::TooShort { min: 150, words: 2, .. })
        ));
        assert!(matches!(parse_triplet("not json", &params()), Err(Error::NotJson(_))));
    }

    /// Plays back a fixed list of replies.
    struct Script(Mutex<Vec<Reply>>);

    impl Transport for Script {
        fn send(&self, _: &LlmRequest) -> Result<Reply> {
            Ok(self.0.lock().unwrap().remove(0))
        }
    }

    fn request() -> LlmRequest {
        LlmRequest {
            prompt: "hi".into(),
            model: "m".into(),
            temperature: 0.0,
            max_tokens: 1,
        }
    }

    const FAST: RetryPolicy = RetryPolicy {
        attempts: 3,
        base_delay_ms: 0,
    };

    #[test]
    fn retry_contract() {
        let rate = || Reply::Status {
            code: 429,
            body: String::new(),
        };
        let ok = Reply::Status {
            code: 200,
            body: completion_body("{\"a\":1}"),
        };
        let t = Script(Mutex::new(vec![rate(), rate(), ok]));
        assert_eq!(call_llm(&request(), &t, &FAST).unwrap().text, "{\"a\":1}");

        let t = Script(Mutex::new(vec![rate(), rate(), rate()]));
        assert!(matches!(call_llm(&request(), &t, &FAST), Err(Error::RateLimited(3))));

        let t = Script(Mutex::new(vec![Reply::Status {
            code: 401,
            body: String::new(),
        }]));
        assert!(matches!(call_llm(&request(), &t, &FAST), Err(Error::AuthError(401))));

        let t = Script(Mutex::new(vec![Reply::TimedOut; 3]));
        assert!(matches!(call_llm(&request(), &t, &FAST), Err(Error::Timeout(3))));

        let t = Script(Mutex::new(vec![
            Reply::Status {
                code: 503,
                body: "down".into()
            };
            3
        ]));
        assert!(matches!(
            call_llm(&request(), &t, &FAST),
            Err(Error::ServiceError { status: 503, .. })
        ));
    }

    #[test]
    fn mock_echoes_fixture() {
        let mut fixture = Fixture::default();
        fixture.responses.insert(request().hash(), "{\"canned\":true}".into());
        let mock = MockTransport::new(fixture);
        assert_eq!(call_llm(&request(), &mock, &FAST).unwrap().text, "{\"canned\":true}");
        let other = LlmRequest {
            prompt: "other".into(),
            ..request()
        };
        assert!(matches!(call_llm(&other, &mock, &FAST), Err(Error::MissingFixture(_))));
    }

    #[test]
    fn canned_generator_conforms() {
        let config = SynthConfig {
            num_tasks: 3,
            generations_per_task: 4,
            ..SynthConfig::default()
        };
        let tasks = run_phase1(&config, &CannedGenerator).unwrap();
        assert_eq!(tasks.len(), 3);
        let examples = run_phase2(&tasks, &config, &CannedGenerator).unwrap();
        assert_eq!(examples.len(), 12);
    }

    #[test]
    fn bounded_map_keeps_order() {
        let items: Vec<usize> = (0..50).collect();
        assert_eq!(bounded_map(&items, 7, |x| x * 2), items.iter().map(|x| x * 2).collect::<Vec<_>>());
        assert!(bounded_map(&[] as &[usize], 4, |x| *x).is_empty());
    }
}

//! Chat-completions transport, response parsing, reply caching, and the
//! deterministic mock respondent used for offline runs.

use crate::domain::{
    map_option_to_value, AnswerScale, ComponentId, DemographicProfile, Persona, ResponseRecord,
    Scenario, SurveyQuestion, TreatmentVector,
};
use crate::prompting::{build_prompt, derive_seed, PromptBundle};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;
use thiserror::Error;

/// Default hard cap on temperature; higher values tend to break the model.
pub const DEFAULT_TEMPERATURE_CAP: f64 = 1.5;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("temperature {0} exceeds the configured cap")]
    TemperatureOutOfRange(f64),
    #[error("transport error after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("endpoint returned HTTP {status} after {attempts} attempts")]
    HttpStatus { status: u16, attempts: u32 },
    #[error("malformed response body: {0}")]
    MalformedBody(String),
    #[error("persona {persona_id}: {source}")]
    Persona {
        persona_id: String,
        #[source]
        source: Box<GatewayError>,
    },
    #[error("cache io: {0}")]
    CacheIo(#[from] std::io::Error),
    #[error("corrupt cache line: {0}")]
    CacheCorrupt(String),
}

/// Endpoint and sampling configuration for one model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub model_id: String,
    pub temperature: f64,
    pub endpoint: String,
    pub api_key: Option<String>,
    pub max_retries: u32,
    pub max_concurrency: usize,
    #[serde(with = "duration_ms")]
    pub timeout: Duration,
    #[serde(with = "duration_ms")]
    pub backoff_base: Duration,
    /// Explicit override for temperatures above the 1.5 cap.
    #[serde(default)]
    pub allow_high_temperature: bool,
}

mod duration_ms {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        (d.as_millis() as u64).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

impl ModelConfig {
    pub fn new(model_id: impl Into<String>, endpoint: impl Into<String>) -> Self {
        ModelConfig {
            model_id: model_id.into(),
            temperature: 0.0,
            endpoint: endpoint.into(),
            api_key: None,
            max_retries: 3,
            max_concurrency: 8,
            timeout: Duration::from_secs(60),
            backoff_base: Duration::from_millis(250),
            allow_high_temperature: false,
        }
    }

    pub fn check_temperature(&self) -> Result<(), GatewayError> {
        if self.temperature < 0.0
            || (!self.allow_high_temperature && self.temperature > DEFAULT_TEMPERATURE_CAP)
        {
            return Err(GatewayError::TemperatureOutOfRange(self.temperature));
        }
        Ok(())
    }
}

/// One round trip to the endpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatExchange {
    pub model_id: String,
    pub temperature: f64,
    pub system_text: String,
    pub user_text: String,
    pub reply_text: String,
    pub latency_ms: u64,
    pub attempt_count: u32,
}

/// A reply plus the bookkeeping needed for replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatReply {
    pub text: String,
    pub timestamp: String,
    pub attempt_count: u32,
    pub from_cache: bool,
}

/// Everything a backend needs to answer for one respondent.
pub struct SurveyRequest<'a> {
    pub persona: &'a Persona,
    pub treatment: &'a TreatmentVector,
    pub question: &'a SurveyQuestion,
    pub prompt: &'a PromptBundle,
    pub model_id: &'a str,
    pub temperature: f64,
}

/// Produces a raw reply for one respondent request.
pub trait SurveyBackend: Send + Sync {
    fn answer(&self, req: &SurveyRequest) -> Result<ChatReply, GatewayError>;
}

// ---------------------------------------------------------------------------
// HTTP backend
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: [WireMessage<'a>; 2],
    temperature: f64,
}

#[derive(Deserialize)]
struct WireChoiceMessage {
    content: String,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireChoiceMessage,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

/// Talks chat-completions-style JSON over HTTP with retry and exponential
/// backoff. No seed parameter is sent; randomness is controlled client-side
/// via option scrambling and temperature.
pub struct HttpBackend {
    config: ModelConfig,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(config: ModelConfig) -> Result<Self, GatewayError> {
        config.check_temperature()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| GatewayError::Transport { attempts: 0, message: e.to_string() })?;
        Ok(HttpBackend { config, client })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Sends the system and user prompts, retrying transient failures
    /// (transport errors, 429, 5xx) with exponential backoff.
    pub fn complete(&self, system_text: &str, user_text: &str) -> Result<ChatExchange, GatewayError> {
        self.complete_at(system_text, user_text, self.config.temperature)
    }

    pub fn complete_at(
        &self,
        system_text: &str,
        user_text: &str,
        temperature: f64,
    ) -> Result<ChatExchange, GatewayError> {
        let body = WireRequest {
            model: &self.config.model_id,
            messages: [
                WireMessage { role: "system", content: system_text },
                WireMessage { role: "user", content: user_text },
            ],
            temperature,
        };
        let started = std::time::Instant::now();
        let mut attempts = 0u32;
        let mut last_err: Option<GatewayError> = None;
        while attempts <= self.config.max_retries {
            attempts += 1;
            if attempts > 1 {
                let backoff = self.config.backoff_base * 2u32.pow(attempts - 2);
                std::thread::sleep(backoff);
            }
            let mut req = self.client.post(&self.config.endpoint).json(&body);
            if let Some(key) = &self.config.api_key {
                req = req.bearer_auth(key);
            }
            match req.send() {
                Err(e) => {
                    last_err = Some(GatewayError::Transport { attempts, message: e.to_string() });
                }
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        let parsed: WireResponse = resp
                            .json()
                            .map_err(|e| GatewayError::MalformedBody(e.to_string()))?;
                        let reply_text = parsed
                            .choices
                            .into_iter()
                            .next()
                            .ok_or_else(|| GatewayError::MalformedBody("no choices".into()))?
                            .message
                            .content;
                        return Ok(ChatExchange {
                            model_id: self.config.model_id.clone(),
                            temperature,
                            system_text: system_text.to_string(),
                            user_text: user_text.to_string(),
                            reply_text,
                            latency_ms: started.elapsed().as_millis() as u64,
                            attempt_count: attempts,
                        });
                    }
                    let err = GatewayError::HttpStatus { status: status.as_u16(), attempts };
                    let retryable = status.as_u16() == 429 || status.is_server_error();
                    if !retryable {
                        return Err(err);
                    }
                    last_err = Some(err);
                }
            }
        }
        Err(last_err.unwrap_or(GatewayError::Transport {
            attempts,
            message: "no attempts made".into(),
        }))
    }
}

impl SurveyBackend for HttpBackend {
    fn answer(&self, req: &SurveyRequest) -> Result<ChatReply, GatewayError> {
        let exchange =
            self.complete_at(&req.prompt.system_text, &req.prompt.user_text, req.temperature)?;
        Ok(ChatReply {
            text: exchange.reply_text,
            timestamp: chrono::Utc::now().to_rfc3339(),
            attempt_count: exchange.attempt_count,
            from_cache: false,
        })
    }
}

// ---------------------------------------------------------------------------
// Response cache
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CacheEntry {
    key: String,
    model_id: String,
    temperature: f64,
    system_text: String,
    user_text: String,
    permutation_seed: u64,
    reply: String,
    timestamp: String,
}

/// Append-only reply store keyed by a hash of the full request. A hit
/// returns the byte-identical prior reply; entries are never mutated.
pub struct ResponseCache {
    path: Option<PathBuf>,
    entries: Mutex<HashMap<String, CacheEntry>>,
    file: Mutex<Option<File>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

pub fn cache_key(
    model_id: &str,
    temperature: f64,
    system_text: &str,
    user_text: &str,
    permutation_seed: u64,
) -> String {
    let mut hasher = Sha256::new();
    for part in [
        model_id.as_bytes(),
        &temperature.to_bits().to_le_bytes(),
        system_text.as_bytes(),
        user_text.as_bytes(),
        &permutation_seed.to_le_bytes(),
    ] {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    format!("{:x}", hasher.finalize())
}

impl ResponseCache {
    /// In-memory cache without persistence.
    pub fn in_memory() -> Self {
        ResponseCache {
            path: None,
            entries: Mutex::new(HashMap::new()),
            file: Mutex::new(None),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    /// Opens (or creates) a JSONL cache file and loads all prior entries.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let path = path.as_ref().to_path_buf();
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            for line in reader.lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: CacheEntry = serde_json::from_str(&line)
                    .map_err(|e| GatewayError::CacheCorrupt(e.to_string()))?;
                entries.insert(entry.key.clone(), entry);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(ResponseCache {
            path: Some(path),
            entries: Mutex::new(entries),
            file: Mutex::new(Some(file)),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hit_count(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn miss_count(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    /// Direct lookup by precomputed key; returns (reply, timestamp).
    pub fn lookup(&self, key: &str) -> Option<(String, String)> {
        self.get(key)
    }

    /// Stores a reply under a precomputed key without going through a
    /// backend (used for free-form prompts outside the survey flow).
    #[allow(clippy::too_many_arguments)]
    pub fn store_raw(
        &self,
        key: &str,
        model_id: &str,
        temperature: f64,
        system_text: &str,
        user_text: &str,
        permutation_seed: u64,
        reply: &str,
        timestamp: &str,
    ) -> Result<(), GatewayError> {
        self.put(CacheEntry {
            key: key.to_string(),
            model_id: model_id.to_string(),
            temperature,
            system_text: system_text.to_string(),
            user_text: user_text.to_string(),
            permutation_seed,
            reply: reply.to_string(),
            timestamp: timestamp.to_string(),
        })
    }

    fn get(&self, key: &str) -> Option<(String, String)> {
        let entries = self.entries.lock().unwrap();
        match entries.get(key) {
            Some(e) => {
                self.hits.fetch_add(1, Ordering::Relaxed);
                Some((e.reply.clone(), e.timestamp.clone()))
            }
            None => {
                self.misses.fetch_add(1, Ordering::Relaxed);
                None
            }
        }
    }

    fn put(&self, entry: CacheEntry) -> Result<(), GatewayError> {
        let mut entries = self.entries.lock().unwrap();
        if entries.contains_key(&entry.key) {
            return Ok(());
        }
        let mut file = self.file.lock().unwrap();
        if let Some(f) = file.as_mut() {
            let line = serde_json::to_string(&entry).expect("cache entry serializes");
            writeln!(f, "{line}")?;
            f.flush()?;
        }
        entries.insert(entry.key.clone(), entry);
        Ok(())
    }
}

/// Wraps a backend with a response cache; hits never touch the network.
pub struct CachedBackend<'a, B: SurveyBackend + ?Sized> {
    inner: Option<&'a B>,
    cache: &'a ResponseCache,
}

impl<'a, B: SurveyBackend + ?Sized> CachedBackend<'a, B> {
    pub fn new(inner: &'a B, cache: &'a ResponseCache) -> Self {
        CachedBackend { inner: Some(inner), cache }
    }

    /// Cache-only mode: any miss is an error (used to prove replay makes
    /// zero network calls).
    pub fn replay_only(cache: &'a ResponseCache) -> Self {
        CachedBackend { inner: None, cache }
    }
}

impl<B: SurveyBackend + ?Sized> SurveyBackend for CachedBackend<'_, B> {
    fn answer(&self, req: &SurveyRequest) -> Result<ChatReply, GatewayError> {
        let key = cache_key(
            req.model_id,
            req.temperature,
            &req.prompt.system_text,
            &req.prompt.user_text,
            req.prompt.permutation_seed,
        );
        if let Some((reply, timestamp)) = self.cache.get(&key) {
            return Ok(ChatReply { text: reply, timestamp, attempt_count: 0, from_cache: true });
        }
        let inner = self.inner.ok_or_else(|| GatewayError::Transport {
            attempts: 0,
            message: "cache miss in replay-only mode".into(),
        })?;
        let reply = inner.answer(req)?;
        self.cache.put(CacheEntry {
            key,
            model_id: req.model_id.to_string(),
            temperature: req.temperature,
            system_text: req.prompt.system_text.clone(),
            user_text: req.prompt.user_text.clone(),
            permutation_seed: req.prompt.permutation_seed,
            reply: reply.text.clone(),
            timestamp: reply.timestamp.clone(),
        })?;
        Ok(reply)
    }
}

// ---------------------------------------------------------------------------
// Reply parsing
// ---------------------------------------------------------------------------

fn normalize(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Matches a reply to exactly one presented option: by leading presented
/// index, or by normalized label match. Ambiguous or unmatched replies are
/// missing, not errors.
pub fn parse_choice(
    reply_text: &str,
    presented_options: &[String],
    scale: &AnswerScale,
) -> Option<f64> {
    let label = match_option_label(reply_text, presented_options)?;
    map_option_to_value(&label, scale).ok().flatten()
}

fn match_option_label(reply_text: &str, presented_options: &[String]) -> Option<String> {
    let norm_reply = normalize(reply_text);
    if norm_reply.is_empty() {
        return None;
    }

    // exact label match first; labels are distinct so this is unambiguous
    for label in presented_options {
        if normalize(label) == norm_reply {
            return Some(label.clone());
        }
    }

    // leading presented-index digit, e.g. "14", "option 3", "7." or "2) ..."
    static INDEX_RE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    let index_re = INDEX_RE
        .get_or_init(|| Regex::new(r"^(?:option\s*)?(\d{1,3})\s*(?:[.):,-]\s*)?(.*)$").unwrap());
    if let Some(caps) = index_re.captures(norm_reply.trim()) {
        if let Ok(idx) = caps[1].parse::<usize>() {
            if idx >= 1 && idx <= presented_options.len() {
                let rest = caps[2].trim();
                let label = &presented_options[idx - 1];
                if rest.is_empty() || normalize(label).contains(rest) || rest.contains(&normalize(label)) {
                    return Some(label.clone());
                }
            }
        }
    }

    // normalized label substring match; ambiguity counts as missing
    let matches: Vec<&String> = presented_options
        .iter()
        .filter(|label| norm_reply.contains(&normalize(label)))
        .collect();
    if matches.len() == 1 {
        Some(matches[0].clone())
    } else {
        None
    }
}

// ---------------------------------------------------------------------------
// Mock respondent
// ---------------------------------------------------------------------------

/// Linear latent-response coefficients for the mock respondent:
/// latent = intercept + sum_k share_k * t_k (active components only)
///        + demographic offsets + temperature * noise(seed).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockCoefficients {
    pub intercept: f64,
    /// Loadings on (food, restaurants, energy, other).
    pub shares: [f64; 4],
    /// Additive offsets keyed by (category, class key).
    pub demo_offsets: Vec<(String, String, f64)>,
    /// Pairwise interaction terms: share applied to the product of two
    /// active component values.
    pub interactions: Vec<(ComponentId, ComponentId, f64)>,
}

/// CPIH basket shares for (food, restaurants, energy, other).
pub const BASKET_SHARES: [f64; 4] = [0.096, 0.074, 0.041, 0.789];

impl Default for MockCoefficients {
    fn default() -> Self {
        MockCoefficients {
            intercept: 0.0,
            shares: BASKET_SHARES,
            demo_offsets: Vec::new(),
            interactions: Vec::new(),
        }
    }
}

impl MockCoefficients {
    /// Latent response before snapping and noise.
    pub fn latent(&self, profile: &DemographicProfile, t: &TreatmentVector) -> f64 {
        let mut v = self.intercept;
        for (i, id) in ComponentId::ALL.into_iter().enumerate() {
            let c = t.component(id);
            if c.active {
                v += self.shares[i] * c.value;
            }
        }
        for (a, b, s) in &self.interactions {
            let ca = t.component(*a);
            let cb = t.component(*b);
            if ca.active && cb.active {
                v += s * ca.value * cb.value;
            }
        }
        for (category, class, offset) in &self.demo_offsets {
            if let Ok(key) = crate::stats::profile_class_key(profile, category) {
                if key == class.as_str() {
                    v += offset;
                }
            }
        }
        v
    }
}

fn mock_noise_seed(base_seed: u64, t: &TreatmentVector) -> u64 {
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ base_seed;
    for id in ComponentId::ALL {
        let c = t.component(id);
        for b in c
            .value
            .to_bits()
            .to_le_bytes()
            .into_iter()
            .chain([u8::from(c.active)])
        {
            h ^= u64::from(b);
            h = h.wrapping_mul(PRIME);
        }
    }
    h
}

/// Deterministic offline respondent: linear latent value plus
/// temperature-scaled pseudo-noise, snapped to the nearest option label.
pub fn mock_respondent(
    coeffs: &MockCoefficients,
    profile: &DemographicProfile,
    t: &TreatmentVector,
    temperature: f64,
    seed: u64,
    scale: &AnswerScale,
) -> String {
    let mut latent = coeffs.latent(profile, t);
    if temperature > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(mock_noise_seed(seed, t));
        let z: f64 = StandardNormal.sample(&mut rng);
        latent += temperature * z;
    }
    scale.snap(latent).label.clone()
}

/// Backend that answers with [`mock_respondent`].
pub struct MockBackend {
    pub coeffs: MockCoefficients,
}

impl MockBackend {
    pub fn new(coeffs: MockCoefficients) -> Self {
        MockBackend { coeffs }
    }
}

impl Default for MockBackend {
    fn default() -> Self {
        MockBackend::new(MockCoefficients::default())
    }
}

impl SurveyBackend for MockBackend {
    fn answer(&self, req: &SurveyRequest) -> Result<ChatReply, GatewayError> {
        let text = mock_respondent(
            &self.coeffs,
            &req.persona.profile,
            req.treatment,
            req.temperature,
            req.prompt.permutation_seed,
            &req.question.scale,
        );
        Ok(ChatReply {
            text,
            timestamp: "1970-01-01T00:00:00+00:00".into(),
            attempt_count: 1,
            from_cache: false,
        })
    }
}

// ---------------------------------------------------------------------------
// Sample runner
// ---------------------------------------------------------------------------

/// Per-persona failure captured without aborting the batch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunFailure {
    pub persona_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunOutcome {
    /// Successful records, ordered by persona position in the sample.
    pub records: Vec<ResponseRecord>,
    pub failures: Vec<RunFailure>,
}

impl RunOutcome {
    /// Values aligned with the sample's persona order; failed personas are
    /// missing.
    pub fn values_for(&self, sample: &crate::domain::SurveySample) -> Vec<Option<f64>> {
        let by_id: HashMap<&str, Option<f64>> = self
            .records
            .iter()
            .map(|r| (r.persona_id.as_str(), r.value))
            .collect();
        sample
            .personas
            .iter()
            .map(|p| by_id.get(p.id.as_str()).copied().flatten())
            .collect()
    }

    pub fn n_miss(&self) -> usize {
        self.records.iter().filter(|r| r.value.is_none()).count() + self.failures.len()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub max_concurrency: usize,
    pub fail_fast: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { max_concurrency: 8, fail_fast: false }
    }
}

/// Runs one question over a whole sample: builds prompts, dispatches with
/// bounded concurrency, and returns one record per persona in sample order
/// regardless of completion order.
pub fn run_sample(
    sample: &crate::domain::SurveySample,
    scenario: Option<&Scenario>,
    question: &SurveyQuestion,
    model_id: &str,
    temperature: f64,
    backend: &dyn SurveyBackend,
    options: RunOptions,
) -> Result<RunOutcome, GatewayError> {
    let unconditioned = TreatmentVector::unconditioned();
    let treatment = scenario.map(|s| &s.treatment).unwrap_or(&unconditioned);

    let n = sample.personas.len();
    let slots: Vec<Mutex<Option<Result<ResponseRecord, RunFailure>>>> =
        (0..n).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = options.max_concurrency.clamp(1, n.max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let persona = &sample.personas[i];
                let seed = derive_seed(sample.master_seed, &persona.id, question.horizon_years);
                let prompt = build_prompt(persona, scenario, question, seed);
                let req = SurveyRequest {
                    persona,
                    treatment,
                    question,
                    prompt: &prompt,
                    model_id,
                    temperature,
                };
                let result = match backend.answer(&req) {
                    Ok(reply) => {
                        let value =
                            parse_choice(&reply.text, &prompt.presented_options, &question.scale);
                        Ok(ResponseRecord {
                            persona_id: persona.id.clone(),
                            horizon_years: question.horizon_years,
                            raw_text: reply.text,
                            value,
                            model_id: model_id.to_string(),
                            temperature,
                            option_permutation_seed: seed,
                            timestamp: reply.timestamp,
                        })
                    }
                    Err(e) => Err(RunFailure { persona_id: persona.id.clone(), error: e.to_string() }),
                };
                *slots[i].lock().unwrap() = Some(result);
            });
        }
    });

    let mut outcome = RunOutcome { records: Vec::with_capacity(n), failures: Vec::new() };
    for slot in slots {
        match slot.into_inner().unwrap().expect("worker filled every slot") {
            Ok(record) => outcome.records.push(record),
            Err(failure) => {
                if options.fail_fast {
                    return Err(GatewayError::Persona {
                        persona_id: failure.persona_id,
                        source: Box::new(GatewayError::Transport {
                            attempts: 0,
                            message: failure.error,
                        }),
                    });
                }
                outcome.failures.push(failure);
            }
        }
    }
    Ok(outcome)
}

// ---------------------------------------------------------------------------
// Response-function view used by the effects engine
// ---------------------------------------------------------------------------

/// Evaluates the aggregate pipeline as a function of (persona, treatment):
/// prompt build, backend call, choice parsing.
pub struct ResponseFunction<'a> {
    pub backend: &'a dyn SurveyBackend,
    pub question: &'a SurveyQuestion,
    pub model_id: &'a str,
    pub temperature: f64,
    pub master_seed: u64,
    calls: AtomicU64,
}

impl<'a> ResponseFunction<'a> {
    pub fn new(
        backend: &'a dyn SurveyBackend,
        question: &'a SurveyQuestion,
        model_id: &'a str,
        temperature: f64,
        master_seed: u64,
    ) -> Self {
        ResponseFunction { backend, question, model_id, temperature, master_seed, calls: AtomicU64::new(0) }
    }

    pub fn call_count(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn eval(
        &self,
        persona: &Persona,
        treatment: &TreatmentVector,
    ) -> Result<Option<f64>, GatewayError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let seed = derive_seed(self.master_seed, &persona.id, self.question.horizon_years);
        let scenario = Scenario {
            name: String::new(),
            treatment: *treatment,
            reference_period: crate::domain::YearMonth::new(1970, 1)
                .expect("valid month"),
            baseline: TreatmentVector::zeros(),
        };
        let scenario_opt = if treatment.is_unconditioned() { None } else { Some(&scenario) };
        let prompt = build_prompt(persona, scenario_opt, self.question, seed);
        let req = SurveyRequest {
            persona,
            treatment,
            question: self.question,
            prompt: &prompt,
            model_id: self.model_id,
            temperature: self.temperature,
        };
        let reply = self.backend.answer(&req).map_err(|e| GatewayError::Persona {
            persona_id: persona.id.clone(),
            source: Box::new(e),
        })?;
        Ok(parse_choice(&reply.text, &prompt.presented_options, &self.question.scale))
    }
}

//! The generative-model contract (fine-tune + sample), top-k sampling, and a
//! desk-scale deterministic reference backend.
//!
//! The reference backend is a character-level n-gram model with additive
//! smoothing: small enough to train in milliseconds, rich enough to learn the
//! question/answer/context template, and fully deterministic so the whole
//! pipeline is testable without pretrained weights. Real pretrained models
//! attach through the same trait (see [`RemoteBackend`] for the wire seam).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(digest.len() * 2);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// How to sample a continuation: top-k truncation, a token budget, stop
/// tokens, and the seed of the draw stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingPolicy {
    pub k: usize,
    pub max_new_tokens: usize,
    pub stop_tokens: BTreeSet<String>,
    pub seed: u64,
}

impl SamplingPolicy {
    pub fn new(k: usize, max_new_tokens: usize, seed: u64) -> Result<Self> {
        if k == 0 {
            return Err(Error::Precondition("top-k k must be >= 1".into()));
        }
        if max_new_tokens == 0 {
            return Err(Error::Precondition("max_new_tokens must be >= 1".into()));
        }
        Ok(Self {
            k,
            max_new_tokens,
            stop_tokens: BTreeSet::new(),
            seed,
        })
    }

    pub fn with_stop_token(mut self, token: impl Into<String>) -> Self {
        self.stop_tokens.insert(token.into());
        self
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut p = self.clone();
        p.seed = seed;
        p
    }
}

/// Contract for a trainable autoregressive text model.
///
/// States are immutable: `fine_tune` returns a new state and leaves the
/// receiver untouched, so one state can be sampled from concurrently.
/// `next_token_distribution` must be deterministic for a fixed state and
/// prefix and sum to 1 within 1e-9.
pub trait GeneratorBackend: Send + Sync {
    /// Stable identifier of the backend family, e.g. `char-ngram`.
    fn backend_id(&self) -> &str;

    /// Content hash of the model state. Equal states hash equally; training
    /// on a non-empty corpus changes it.
    fn fingerprint(&self) -> String;

    /// The token inventory the distribution ranges over, in a fixed order.
    fn vocabulary(&self) -> Vec<String>;

    fn end_of_text_token(&self) -> Option<String>;

    /// Probability of each vocabulary token following `prefix`.
    fn next_token_distribution(&self, prefix: &str) -> Result<Vec<f64>>;

    /// Pure state transition: same (state, corpus, epochs, seed) gives the
    /// same fingerprint. Backends that cannot train return a capability
    /// error.
    fn fine_tune(
        &self,
        corpus: &[String],
        epochs: u32,
        seed: u64,
    ) -> Result<Box<dyn GeneratorBackend>>;

    /// Samples one continuation under `policy`. Local backends route through
    /// [`top_k_sample`]; remote ones may delegate the whole draw.
    fn sample(&self, prefix: &str, policy: &SamplingPolicy) -> Result<String>;

    /// Whether outputs are byte-reproducible given a seed. Pipelines record
    /// but do not assert reproducibility for backends that opt out.
    fn deterministic(&self) -> bool {
        true
    }
}

/// One top-k draw from `probs`: restrict to the k highest-probability
/// entries (ties broken by lower index, i.e. vocabulary order), renormalize,
/// and pick by cumulative scan in vocabulary order against one uniform draw.
pub fn top_k_step(probs: &[f64], k: usize, rng: &mut SplitMix64) -> usize {
    debug_assert!(!probs.is_empty());
    let k = k.min(probs.len()).max(1);
    let mut top: Vec<usize> = (0..probs.len()).collect();
    top.sort_by(|&a, &b| {
        probs[b]
            .partial_cmp(&probs[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    top.truncate(k);
    top.sort_unstable();
    let total: f64 = top.iter().map(|&i| probs[i]).sum();
    if total <= 0.0 {
        return top[0];
    }
    let u = rng.next_f64() * total;
    let mut acc = 0.0;
    for &i in &top {
        acc += probs[i];
        if u < acc {
            return i;
        }
    }
    *top.last().expect("top-k set is nonempty")
}

/// Samples a continuation token by token under top-k truncation.
///
/// Stops at a stop token (excluded from the output) or after
/// `max_new_tokens`. Byte-identical across runs and platforms for a fixed
/// (state, prefix, policy).
pub fn top_k_sample<B: GeneratorBackend + ?Sized>(
    backend: &B,
    prefix: &str,
    policy: &SamplingPolicy,
) -> Result<String> {
    let vocab = backend.vocabulary();
    if vocab.is_empty() {
        return Err(Error::Backend(
            "backend has an empty vocabulary; fine-tune it first".into(),
        ));
    }
    let mut rng = SplitMix64::new(policy.seed);
    let mut text = String::from(prefix);
    let mut out = String::new();
    for _ in 0..policy.max_new_tokens {
        let probs = backend.next_token_distribution(&text)?;
        if probs.len() != vocab.len() {
            return Err(Error::Backend(format!(
                "distribution length {} does not match vocabulary size {}",
                probs.len(),
                vocab.len()
            )));
        }
        let idx = top_k_step(&probs, policy.k, &mut rng);
        let token = &vocab[idx];
        if policy.stop_tokens.contains(token) {
            break;
        }
        text.push_str(token);
        out.push_str(token);
    }
    Ok(out)
}

/// End-of-text character appended to every training document by the
/// reference backend and emitted by it when a document is done.
pub const CHAR_NGRAM_EOT: char = '\u{0003}';

pub const CHAR_NGRAM_ID: &str = "char-ngram";

/// Character-level n-gram reference backend with additive smoothing.
///
/// `order` is the n-gram size: the next character is conditioned on the
/// previous `order - 1` characters (order 2 = bigram). The conditional is
/// `(count + alpha) / (row_total + alpha * |V|)` over the learned character
/// vocabulary. Counting is position-wise with truncated contexts at document
/// starts, and fine-tuning adds counts on top of the existing table, so
/// training is order-insensitive over documents.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CharNgramBackend {
    order: usize,
    alpha: f64,
    vocab: Vec<char>,
    counts: BTreeMap<String, BTreeMap<char, u64>>,
}

impl CharNgramBackend {
    pub fn new(order: usize, alpha: f64) -> Result<Self> {
        if order == 0 {
            return Err(Error::Precondition("n-gram order must be >= 1".into()));
        }
        if alpha <= 0.0 || !alpha.is_finite() {
            return Err(Error::Precondition(
                "smoothing constant alpha must be > 0".into(),
            ));
        }
        Ok(Self {
            order,
            alpha,
            vocab: Vec::new(),
            counts: BTreeMap::new(),
        })
    }

    /// Builds from JSON params `{"order": 2, "alpha": 1.0}`; both optional.
    pub fn from_params(params: &serde_json::Value) -> Result<Self> {
        let order = params
            .get("order")
            .map(|v| {
                v.as_u64()
                    .ok_or_else(|| Error::Config("backend param `order` must be an integer".into()))
            })
            .transpose()?
            .unwrap_or(2) as usize;
        let alpha = params
            .get("alpha")
            .map(|v| {
                v.as_f64()
                    .ok_or_else(|| Error::Config("backend param `alpha` must be a number".into()))
            })
            .transpose()?
            .unwrap_or(1.0);
        Self::new(order, alpha)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Raw transition count for (context, next). Zero when unseen.
    pub fn count(&self, context: &str, next: char) -> u64 {
        self.counts
            .get(context)
            .and_then(|row| row.get(&next))
            .copied()
            .unwrap_or(0)
    }

    fn context_of(&self, prefix: &str) -> String {
        let chars: Vec<char> = prefix.chars().collect();
        let keep = self.order.saturating_sub(1).min(chars.len());
        chars[chars.len() - keep..].iter().collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// The counting pass behind [`GeneratorBackend::fine_tune`], returning
    /// the concrete type. Each document is counted independently with the
    /// end-of-text character appended; `epochs` passes accumulate.
    pub fn trained_on(&self, corpus: &[String], epochs: u32) -> Result<CharNgramBackend> {
        if corpus.is_empty() {
            return Err(Error::Precondition("fine-tune corpus is empty".into()));
        }
        if epochs == 0 {
            return Err(Error::Precondition("epochs must be >= 1".into()));
        }
        let mut next = self.clone();
        let mut vocab: BTreeSet<char> = next.vocab.iter().copied().collect();
        for _ in 0..epochs {
            for doc in corpus {
                let chars: Vec<char> = doc.chars().chain(std::iter::once(CHAR_NGRAM_EOT)).collect();
                for &c in &chars {
                    vocab.insert(c);
                }
                for i in 0..chars.len() {
                    let start = i.saturating_sub(self.order - 1);
                    let context: String = chars[start..i].iter().collect();
                    *next
                        .counts
                        .entry(context)
                        .or_default()
                        .entry(chars[i])
                        .or_insert(0) += 1;
                }
            }
        }
        next.vocab = vocab.into_iter().collect();
        Ok(next)
    }
}

impl GeneratorBackend for CharNgramBackend {
    fn backend_id(&self) -> &str {
        CHAR_NGRAM_ID
    }

    fn fingerprint(&self) -> String {
        // BTreeMap ordering makes the JSON canonical, so equal states
        // (including states trained on permuted corpora) hash equally.
        let json = serde_json::to_string(self).expect("state serializes");
        sha256_hex(json.as_bytes())
    }

    fn vocabulary(&self) -> Vec<String> {
        self.vocab.iter().map(|c| c.to_string()).collect()
    }

    fn end_of_text_token(&self) -> Option<String> {
        Some(CHAR_NGRAM_EOT.to_string())
    }

    fn next_token_distribution(&self, prefix: &str) -> Result<Vec<f64>> {
        if self.vocab.is_empty() {
            return Err(Error::Backend(
                "untrained reference backend has no vocabulary".into(),
            ));
        }
        let context = self.context_of(prefix);
        let row = self.counts.get(&context);
        let row_total: u64 = row.map(|r| r.values().sum()).unwrap_or(0);
        let denom = row_total as f64 + self.alpha * self.vocab.len() as f64;
        Ok(self
            .vocab
            .iter()
            .map(|c| {
                let count = row.and_then(|r| r.get(c)).copied().unwrap_or(0);
                (count as f64 + self.alpha) / denom
            })
            .collect())
    }

    fn fine_tune(
        &self,
        corpus: &[String],
        epochs: u32,
        _seed: u64,
    ) -> Result<Box<dyn GeneratorBackend>> {
        // Count-based training: the seed has no effect on the reference
        // backend, which keeps it trivially deterministic.
        Ok(Box::new(self.trained_on(corpus, epochs)?))
    }

    fn sample(&self, prefix: &str, policy: &SamplingPolicy) -> Result<String> {
        top_k_sample(self, prefix, policy)
    }
}

/// Wire format of the minimal remote sampling protocol.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRequest {
    pub prefix: String,
    pub k: usize,
    pub max_new_tokens: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleResponse {
    pub continuation: String,
}

pub type RemoteTransport = Box<dyn Fn(&SampleRequest) -> Result<SampleResponse> + Send + Sync>;

/// Adapter for a frozen model living in another process or service.
///
/// Sampling delegates the whole draw (top-k happens on the far side); the
/// backend cannot be fine-tuned and exposes no token distribution. The
/// fingerprint is the caller-supplied state tag (model name, revision, ...).
pub struct RemoteBackend {
    id: String,
    state_tag: String,
    end_of_text: Option<String>,
    deterministic: bool,
    transport: RemoteTransport,
}

impl RemoteBackend {
    pub fn new(
        id: impl Into<String>,
        state_tag: impl Into<String>,
        end_of_text: Option<String>,
        deterministic: bool,
        transport: RemoteTransport,
    ) -> Self {
        Self {
            id: id.into(),
            state_tag: state_tag.into(),
            end_of_text,
            deterministic,
            transport,
        }
    }
}

impl GeneratorBackend for RemoteBackend {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn fingerprint(&self) -> String {
        sha256_hex(format!("{}\n{}", self.id, self.state_tag).as_bytes())
    }

    fn vocabulary(&self) -> Vec<String> {
        Vec::new()
    }

    fn end_of_text_token(&self) -> Option<String> {
        self.end_of_text.clone()
    }

    fn next_token_distribution(&self, _prefix: &str) -> Result<Vec<f64>> {
        Err(Error::Backend(
            "remote backend exposes only the sampling protocol".into(),
        ))
    }

    fn fine_tune(
        &self,
        _corpus: &[String],
        _epochs: u32,
        _seed: u64,
    ) -> Result<Box<dyn GeneratorBackend>> {
        Err(Error::Backend(format!(
            "backend `{}` is frozen and refuses training",
            self.id
        )))
    }

    fn sample(&self, prefix: &str, policy: &SamplingPolicy) -> Result<String> {
        let request = SampleRequest {
            prefix: prefix.to_string(),
            k: policy.k,
            max_new_tokens: policy.max_new_tokens,
            seed: policy.seed,
        };
        Ok((self.transport)(&request)?.continuation)
    }

    fn deterministic(&self) -> bool {
        self.deterministic
    }
}

type BackendFactory =
    Box<dyn Fn(&serde_json::Value) -> Result<Box<dyn GeneratorBackend>> + Send + Sync>;

/// Registry of backend families keyed by identifier.
pub struct BackendRegistry {
    factories: BTreeMap<String, BackendFactory>,
}

impl BackendRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    /// Registry with the reference backend pre-registered.
    pub fn with_builtins() -> Self {
        let mut reg = Self::empty();
        reg.register(CHAR_NGRAM_ID, |params| {
            Ok(Box::new(CharNgramBackend::from_params(params)?))
        })
        .expect("fresh registry");
        reg
    }

    pub fn register(
        &mut self,
        id: impl Into<String>,
        factory: impl Fn(&serde_json::Value) -> Result<Box<dyn GeneratorBackend>>
            + Send
            + Sync
            + 'static,
    ) -> Result<()> {
        let id = id.into();
        if self.factories.contains_key(&id) {
            return Err(Error::Registry(format!(
                "backend `{id}` already registered"
            )));
        }
        self.factories.insert(id, Box::new(factory));
        Ok(())
    }

    pub fn create(
        &self,
        id: &str,
        params: &serde_json::Value,
    ) -> Result<Box<dyn GeneratorBackend>> {
        let factory = self.factories.get(id).ok_or_else(|| {
            Error::Registry(format!(
                "unknown backend `{id}`; known: {}",
                self.factories
                    .keys()
                    .cloned()
                    .collect::<Vec<_>>()
                    .join(", ")
            ))
        })?;
        factory(params)
    }
}

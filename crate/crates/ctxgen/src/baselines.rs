//! In-scope comparison generators: EDA (synonym replacement, random
//! insertion, random swap, random deletion) and the label-prefix format that
//! runs the label-prompting baseline through the same backend and sampler as
//! the main pipeline. Externally-powered augmenters (translation,
//! paraphrase) plug in through [`AugmenterRegistry`].

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::rng::{mix64, SplitMix64};
use crate::schema::{FewShotSet, LabeledExample, SampleProvenance, SyntheticDataset, TaskSpec};

/// EDA knobs: fraction of words touched per operation, per-word deletion
/// probability, number of variants per source example, and the stream seed.
#[derive(Debug, Clone, PartialEq)]
pub struct EdaPolicy {
    pub alpha_sr: f64,
    pub alpha_ri: f64,
    pub alpha_rs: f64,
    pub p_rd: f64,
    pub n_aug: usize,
    pub seed: u64,
}

impl EdaPolicy {
    pub fn new(
        alpha_sr: f64,
        alpha_ri: f64,
        alpha_rs: f64,
        p_rd: f64,
        n_aug: usize,
        seed: u64,
    ) -> Result<Self> {
        for (name, v) in [
            ("alpha_sr", alpha_sr),
            ("alpha_ri", alpha_ri),
            ("alpha_rs", alpha_rs),
            ("p_rd", p_rd),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Precondition(format!("{name} must be in [0, 1]")));
            }
        }
        if n_aug == 0 {
            return Err(Error::Precondition("n_aug must be >= 1".into()));
        }
        Ok(Self {
            alpha_sr,
            alpha_ri,
            alpha_rs,
            p_rd,
            n_aug,
            seed,
        })
    }

    /// The original method's defaults: every fraction at 0.1.
    pub fn with_defaults(n_aug: usize, seed: u64) -> Self {
        Self::new(0.1, 0.1, 0.1, 0.1, n_aug, seed).expect("defaults are valid")
    }
}

/// Deterministic synonym source. Implementations never return the query word
/// itself.
pub trait SynonymProvider: Send + Sync {
    fn synonyms(&self, word: &str) -> Vec<String>;
}

/// Lexicon loaded from JSON-lines; each line maps words to synonym lists,
/// e.g. `{"quick": ["fast", "rapid"]}`. Lookups are lowercase;
/// self-references are dropped at load time.
#[derive(Debug, Clone, Default)]
pub struct JsonlLexicon {
    entries: BTreeMap<String, Vec<String>>,
}

impl JsonlLexicon {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_entries<I, W, S>(entries: I) -> Self
    where
        I: IntoIterator<Item = (W, Vec<S>)>,
        W: Into<String>,
        S: Into<String>,
    {
        let mut map = BTreeMap::new();
        for (word, syns) in entries {
            let word = word.into().to_lowercase();
            let syns: Vec<String> = syns
                .into_iter()
                .map(|s| s.into().to_lowercase())
                .filter(|s| !s.is_empty() && *s != word)
                .collect();
            map.insert(word, syns);
        }
        Self { entries: map }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: BTreeMap<String, Vec<String>> =
                serde_json::from_str(line).map_err(|e| Error::Parse {
                    line: i + 1,
                    reason: e.to_string(),
                })?;
            for (word, syns) in parsed {
                let word = word.to_lowercase();
                let syns: Vec<String> = syns
                    .into_iter()
                    .map(|s| s.to_lowercase())
                    .filter(|s| !s.is_empty() && *s != word)
                    .collect();
                map.insert(word, syns);
            }
        }
        Ok(Self { entries: map })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl SynonymProvider for JsonlLexicon {
    fn synonyms(&self, word: &str) -> Vec<String> {
        self.entries
            .get(&word.to_lowercase())
            .cloned()
            .unwrap_or_default()
    }
}

/// Fixed shipped stopword list (the classic EDA set); these words are never
/// targeted by synonym replacement.
pub const STOPWORDS: &[&str] = &[
    "i",
    "me",
    "my",
    "myself",
    "we",
    "our",
    "ours",
    "ourselves",
    "you",
    "your",
    "yours",
    "he",
    "him",
    "his",
    "she",
    "her",
    "hers",
    "it",
    "its",
    "they",
    "them",
    "their",
    "what",
    "which",
    "who",
    "whom",
    "this",
    "that",
    "these",
    "those",
    "am",
    "is",
    "are",
    "was",
    "were",
    "be",
    "been",
    "being",
    "have",
    "has",
    "had",
    "do",
    "does",
    "did",
    "a",
    "an",
    "the",
    "and",
    "but",
    "if",
    "or",
    "because",
    "as",
    "until",
    "while",
    "of",
    "at",
    "by",
    "for",
    "with",
    "about",
    "against",
    "between",
    "into",
    "through",
    "during",
    "before",
    "after",
    "to",
    "from",
    "in",
    "out",
    "on",
    "off",
    "over",
    "under",
    "again",
    "then",
    "once",
    "here",
    "there",
    "when",
    "where",
    "why",
    "how",
    "all",
    "any",
    "both",
    "each",
    "few",
    "more",
    "most",
    "other",
    "some",
    "such",
    "no",
    "nor",
    "not",
    "only",
    "so",
    "than",
    "too",
    "very",
    "can",
    "will",
    "just",
];

fn is_stopword(word: &str) -> bool {
    let w = word.to_lowercase();
    STOPWORDS.contains(&w.as_str())
}

fn ceil_frac(alpha: f64, len: usize) -> usize {
    (alpha * len as f64).ceil() as usize
}

/// Produces `n_aug` variants of one example by applying, in order: synonym
/// replacement, random insertion, random swap, random deletion. Labels are
/// copied unchanged and the output text is never empty.
///
/// All variants share one stream seeded with `policy.seed`; the draw order
/// is fixed (and mirrored by the oracle test), per variant:
///
/// 1. SR: shuffle the non-stopword positions (Fisher-Yates), then for each
///    of the first `ceil(alpha_sr * L)`: if the lowercased word has
///    synonyms, one `next_below(#synonyms)` draw picks the replacement.
/// 2. RI: `ceil(alpha_ri * L)` insertions; each probes random positions
///    (`next_below(len)`) until a word with synonyms is found (at most `len`
///    probes), then draws the synonym and the insertion slot
///    (`next_below(len + 1)`).
/// 3. RS: `ceil(alpha_rs * L)` swaps of two `next_below(len)` positions.
/// 4. RD: when `p_rd > 0`, one `next_f64()` per word, deleting on
///    `draw < p_rd`; if everything was deleted, one `next_below(len)` draw
///    restores a single word.
///
/// `L` is the original word count; operations that change the length use the
/// current length for position draws.
pub fn eda_augment(
    ex: &LabeledExample,
    policy: &EdaPolicy,
    lex: &dyn SynonymProvider,
) -> Vec<LabeledExample> {
    let original: Vec<String> = ex.text.split_whitespace().map(str::to_string).collect();
    let l = original.len();
    let mut rng = SplitMix64::new(policy.seed);
    let mut out = Vec::with_capacity(policy.n_aug);
    for _ in 0..policy.n_aug {
        let mut words = original.clone();

        // Synonym replacement.
        if policy.alpha_sr > 0.0 {
            let n_sr = ceil_frac(policy.alpha_sr, l);
            let mut candidates: Vec<usize> = words
                .iter()
                .enumerate()
                .filter(|(_, w)| !is_stopword(w))
                .map(|(i, _)| i)
                .collect();
            rng.shuffle(&mut candidates);
            for &pos in candidates.iter().take(n_sr) {
                let syns = lex.synonyms(&words[pos].to_lowercase());
                if !syns.is_empty() {
                    words[pos] = syns[rng.next_below(syns.len() as u64) as usize].clone();
                }
            }
        }

        // Random insertion.
        if policy.alpha_ri > 0.0 {
            let n_ri = ceil_frac(policy.alpha_ri, l);
            for _ in 0..n_ri {
                let probes = words.len();
                for _ in 0..probes {
                    let wi = rng.next_below(words.len() as u64) as usize;
                    let syns = lex.synonyms(&words[wi].to_lowercase());
                    if !syns.is_empty() {
                        let syn = syns[rng.next_below(syns.len() as u64) as usize].clone();
                        let pos = rng.next_below(words.len() as u64 + 1) as usize;
                        words.insert(pos, syn);
                        break;
                    }
                }
            }
        }

        // Random swap.
        if policy.alpha_rs > 0.0 {
            let n_rs = ceil_frac(policy.alpha_rs, l);
            for _ in 0..n_rs {
                let i = rng.next_below(words.len() as u64) as usize;
                let j = rng.next_below(words.len() as u64) as usize;
                words.swap(i, j);
            }
        }

        // Random deletion, guarded against emptying the text.
        if policy.p_rd > 0.0 {
            let marks: Vec<bool> = words.iter().map(|_| rng.next_f64() < policy.p_rd).collect();
            if marks.iter().all(|&m| m) {
                let keep = rng.next_below(words.len() as u64) as usize;
                words = vec![words[keep].clone()];
            } else {
                words = words
                    .into_iter()
                    .zip(marks)
                    .filter(|(_, m)| !m)
                    .map(|(w, _)| w)
                    .collect();
            }
        }

        out.push(LabeledExample {
            text: words.join(" "),
            label: ex.label.clone(),
        });
    }
    out
}

/// Separator between the verbalized label and the text in the label-prefix
/// baseline format.
pub const LAMBADA_SEPARATOR: &str = "[SEP]";

/// Training text for the label-prefix baseline: `{word} [SEP] {text}`.
pub fn lambada_format(ex: &LabeledExample, spec: &TaskSpec) -> Result<String> {
    let word = spec.verbalize(&ex.label)?;
    Ok(format!("{word} {LAMBADA_SEPARATOR} {}", ex.text))
}

/// Generation prompt for the label-prefix baseline: `{word} [SEP]`.
pub fn lambada_prompt(label: &str, spec: &TaskSpec) -> Result<String> {
    let word = spec.verbalize(label)?;
    Ok(format!("{word} {LAMBADA_SEPARATOR}"))
}

/// Strips a formatted text back to the original, when the prefix matches.
pub fn lambada_strip<'a>(
    formatted: &'a str,
    label: &str,
    spec: &TaskSpec,
) -> Result<Option<&'a str>> {
    let prompt = lambada_prompt(label, spec)?;
    Ok(formatted
        .strip_prefix(&prompt)
        .and_then(|rest| rest.strip_prefix(' ')))
}

/// A registered source-example augmenter. The per-call seed makes the whole
/// harness deterministic regardless of internal randomness.
pub trait Augmenter: Send + Sync {
    fn augment(&self, ex: &LabeledExample, seed: u64) -> Result<Vec<LabeledExample>>;
}

/// Passes the source example through unchanged; useful as a harness smoke
/// augmenter.
pub struct IdentityAugmenter;

impl Augmenter for IdentityAugmenter {
    fn augment(&self, ex: &LabeledExample, _seed: u64) -> Result<Vec<LabeledExample>> {
        Ok(vec![ex.clone()])
    }
}

/// EDA behind the [`Augmenter`] seam: the policy template's seed is replaced
/// by the harness-provided per-call seed.
pub struct EdaAugmenter {
    pub policy: EdaPolicy,
    pub lexicon: Arc<dyn SynonymProvider>,
}

impl Augmenter for EdaAugmenter {
    fn augment(&self, ex: &LabeledExample, seed: u64) -> Result<Vec<LabeledExample>> {
        let mut policy = self.policy.clone();
        policy.seed = seed;
        Ok(eda_augment(ex, &policy, self.lexicon.as_ref()))
    }
}

/// Named augmenter registry. Duplicate registration is an error; unknown
/// names resolve to an error listing what exists.
pub struct AugmenterRegistry {
    entries: BTreeMap<String, Arc<dyn Augmenter>>,
}

impl AugmenterRegistry {
    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    /// Registry with `identity` and `eda` pre-registered. `lexicon` feeds
    /// EDA's synonym operations; without one they degrade to swaps and
    /// deletions.
    pub fn with_builtins(lexicon: Arc<dyn SynonymProvider>) -> Self {
        let mut reg = Self::empty();
        reg.register("identity", Arc::new(IdentityAugmenter))
            .expect("fresh registry");
        reg.register(
            "eda",
            Arc::new(EdaAugmenter {
                policy: EdaPolicy::with_defaults(1, 0),
                lexicon,
            }),
        )
        .expect("fresh registry");
        reg
    }

    pub fn register(&mut self, name: impl Into<String>, aug: Arc<dyn Augmenter>) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Registry(format!(
                "augmenter `{name}` already registered"
            )));
        }
        self.entries.insert(name, aug);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn Augmenter>> {
        self.entries.get(name).cloned().ok_or_else(|| {
            Error::Registry(format!(
                "unknown augmenter `{name}`; known: {}",
                self.entries.keys().cloned().collect::<Vec<_>>().join(", ")
            ))
        })
    }
}

/// Runs an augmenter over a few-shot set until every class holds exactly
/// `n_per_label` samples, cycling the class's source examples as many times
/// as needed. This is the normalization that puts every baseline on the same
/// per-label sample count as the main pipeline.
pub fn match_per_label_count(
    few_shot: &FewShotSet,
    spec: &TaskSpec,
    augmenter: &dyn Augmenter,
    augmenter_name: &str,
    n_per_label: usize,
    seed: u64,
) -> Result<SyntheticDataset> {
    if n_per_label == 0 {
        return Err(Error::Precondition("n_per_label must be >= 1".into()));
    }
    let mut samples = Vec::with_capacity(n_per_label * spec.classes.len());
    let mut provenance = Vec::with_capacity(samples.capacity());
    for (class_index, class) in spec.classes.iter().enumerate() {
        let sources: Vec<&LabeledExample> = few_shot
            .examples
            .iter()
            .filter(|e| &e.label == class)
            .collect();
        if sources.is_empty() {
            return Err(Error::Precondition(format!(
                "few-shot set has no examples of class `{class}`"
            )));
        }
        let mut collected = 0usize;
        let mut call = 0u64;
        while collected < n_per_label {
            let produced_before = collected;
            for source in &sources {
                if collected >= n_per_label {
                    break;
                }
                let call_seed = mix64(mix64(seed, class_index as u64), call);
                call += 1;
                for variant in augmenter.augment(source, call_seed)? {
                    if collected >= n_per_label {
                        break;
                    }
                    samples.push(LabeledExample::new(variant.text, class.clone())?);
                    provenance.push(SampleProvenance {
                        prompt: source.text.clone(),
                        seed: call_seed,
                        backend: augmenter_name.to_string(),
                        attempts: 1,
                    });
                    collected += 1;
                }
            }
            if collected == produced_before {
                return Err(Error::Precondition(format!(
                    "augmenter `{augmenter_name}` produced nothing for class `{class}`"
                )));
            }
        }
    }
    SyntheticDataset::new(
        spec.task_id.clone(),
        samples,
        provenance,
        n_per_label,
        &spec.classes,
    )
}

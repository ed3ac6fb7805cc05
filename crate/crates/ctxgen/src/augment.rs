//! The context-generation pipeline: QAC fine-tuning on a QA corpus, domain
//! adaptation on few-shot data, prompted synthetic generation, training-set
//! assembly, and leakage diagnostics.
//!
//! A backend moves through three stages (raw, qac-tuned, adapted) and the
//! stage machine admits no shortcut: adaptation requires a qac-tuned state.
//! Generation accepts either a qac-tuned state (zero-shot mode and the
//! no-adaptation ablation) or an adapted one (the full pipeline).
//!
//! Every synthetic sample is generated under its own derived seed
//! (`mix64(mix64(policy.seed, class_index), sample_index)`), so generating
//! classes in any order, or any subset, reproduces the corresponding slice
//! of a full run exactly.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::backend::{GeneratorBackend, SamplingPolicy};
use crate::error::{Error, Result};
use crate::qac::{cast_dataset_with, serialize_qac_with, SerializeOptions};
use crate::rng::mix64;
use crate::schema::{
    FewShotSet, LabeledExample, QATriple, SampleProvenance, SyntheticDataset, TaskSpec,
    MARKER_ANSWER, MARKER_CONTEXT, MARKER_QUESTION,
};

/// How many seeds to try per sample before giving up on a degenerate prompt.
pub const MAX_GENERATION_ATTEMPTS: u32 = 10;

/// The two-marker prompt that asks the generator for one class-conditional
/// context: `question: {q}\nanswer: {word}\ncontext:` with nothing after the
/// final marker.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationPrompt {
    pub text: String,
    pub label: String,
    pub sample_index: usize,
}

impl GenerationPrompt {
    pub fn new(
        spec: &TaskSpec,
        class_index: usize,
        sample_index: usize,
        opts: &SerializeOptions,
    ) -> Result<Self> {
        let label = spec.classes.get(class_index).ok_or_else(|| {
            Error::Precondition(format!("class index {class_index} out of range"))
        })?;
        let word = spec.verbalize(label)?;
        Ok(Self {
            text: render_prompt(&spec.question, word, opts),
            label: label.clone(),
            sample_index,
        })
    }
}

fn prompt_field(field: &str, opts: &SerializeOptions) -> String {
    let lowered;
    let s = if opts.lowercase {
        lowered = field.to_lowercase();
        lowered.as_str()
    } else {
        field
    };
    s.replace('\r', "").replace('\n', " ").trim().to_string()
}

/// Renders `question: {q}\nanswer: {a}\ncontext:` with the same field
/// normalization used for fine-tuning documents. No trailing content after
/// the context marker: the first sampled token is expected to be the space.
pub fn render_prompt(question: &str, answer: &str, opts: &SerializeOptions) -> String {
    format!(
        "{MARKER_QUESTION} {}\n{MARKER_ANSWER} {}\n{MARKER_CONTEXT}",
        prompt_field(question, opts),
        prompt_field(answer, opts)
    )
}

/// Pipeline stage of a backend state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Raw,
    QacTuned,
    Adapted,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Stage::Raw => write!(f, "raw"),
            Stage::QacTuned => write!(f, "qac_tuned"),
            Stage::Adapted => write!(f, "adapted"),
        }
    }
}

/// Per-stage backend fingerprints, persisted alongside every run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageFingerprints {
    pub backend_id: String,
    pub deterministic: bool,
    pub raw: String,
    pub qac_tuned: Option<String>,
    pub adapted: Option<String>,
}

/// A backend state tagged with its pipeline stage and training bookkeeping.
pub struct PipelineState {
    stage: Stage,
    backend: Box<dyn GeneratorBackend>,
    options: SerializeOptions,
    fingerprints: StageFingerprints,
    pub qac_corpus_size: Option<usize>,
    pub adapt_corpus_size: Option<usize>,
}

impl PipelineState {
    /// Wraps an untouched backend at the raw stage.
    pub fn raw(backend: Box<dyn GeneratorBackend>) -> Self {
        Self::raw_with(backend, SerializeOptions::default())
    }

    pub fn raw_with(backend: Box<dyn GeneratorBackend>, options: SerializeOptions) -> Self {
        let fingerprints = StageFingerprints {
            backend_id: backend.backend_id().to_string(),
            deterministic: backend.deterministic(),
            raw: backend.fingerprint(),
            qac_tuned: None,
            adapted: None,
        };
        Self {
            stage: Stage::Raw,
            backend,
            options,
            fingerprints,
            qac_corpus_size: None,
            adapt_corpus_size: None,
        }
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn backend(&self) -> &dyn GeneratorBackend {
        self.backend.as_ref()
    }

    pub fn options(&self) -> &SerializeOptions {
        &self.options
    }

    pub fn fingerprints(&self) -> &StageFingerprints {
        &self.fingerprints
    }

    /// Fingerprint of the state generation would sample from.
    pub fn generation_fingerprint(&self) -> String {
        self.backend.fingerprint()
    }

    fn expect_stage(&self, expected: Stage, op: &str) -> Result<()> {
        if self.stage != expected {
            return Err(Error::Stage {
                expected: format!("{expected} (for {op})"),
                found: self.stage.to_string(),
            });
        }
        Ok(())
    }
}

/// QAC fine-tuning: serializes the QA corpus and fine-tunes the raw backend
/// into a general context generator.
pub fn build_general_generator(
    state: PipelineState,
    qa_corpus: &[QATriple],
    epochs: u32,
    seed: u64,
) -> Result<PipelineState> {
    state.expect_stage(Stage::Raw, "qac fine-tuning")?;
    if qa_corpus.is_empty() {
        return Err(Error::Precondition("qa corpus is empty".into()));
    }
    let docs: Vec<String> = qa_corpus
        .iter()
        .map(|t| serialize_qac_with(t, &state.options).map(|d| d.as_str().to_string()))
        .collect::<Result<_>>()?;
    let tuned = state.backend.fine_tune(&docs, epochs, seed)?;
    let mut fingerprints = state.fingerprints;
    fingerprints.qac_tuned = Some(tuned.fingerprint());
    Ok(PipelineState {
        stage: Stage::QacTuned,
        backend: tuned,
        options: state.options,
        fingerprints,
        qac_corpus_size: Some(docs.len()),
        adapt_corpus_size: None,
    })
}

/// Domain adaptation: casts the few-shot set to QAC documents and fine-tunes
/// the general generator further into a target-task generator.
pub fn adapt_to_task(
    state: PipelineState,
    few_shot: &FewShotSet,
    spec: &TaskSpec,
    epochs: u32,
    seed: u64,
) -> Result<PipelineState> {
    state.expect_stage(Stage::QacTuned, "domain adaptation")?;
    if few_shot.examples.is_empty() {
        return Err(Error::Precondition("few-shot set is empty".into()));
    }
    let docs: Vec<String> = cast_dataset_with(few_shot, spec, &state.options)?
        .into_iter()
        .map(|d| d.as_str().to_string())
        .collect();
    let adapted = state.backend.fine_tune(&docs, epochs, seed)?;
    let mut fingerprints = state.fingerprints;
    fingerprints.adapted = Some(adapted.fingerprint());
    Ok(PipelineState {
        stage: Stage::Adapted,
        backend: adapted,
        options: state.options,
        fingerprints,
        qac_corpus_size: state.qac_corpus_size,
        adapt_corpus_size: Some(docs.len()),
    })
}

/// Truncates a raw continuation at the first end-of-text token, line
/// starting with the question marker, or blank line, then trims. Idempotent
/// and never longer than its input; may return empty (the caller retries).
pub fn extract_context(raw_continuation: &str, end_of_text: Option<&str>) -> String {
    let s = raw_continuation.trim();
    let mut cut = s.len();
    if let Some(eot) = end_of_text {
        if !eot.is_empty() {
            if let Some(p) = s.find(eot) {
                cut = cut.min(p);
            }
        }
    }
    if s.starts_with(MARKER_QUESTION) {
        cut = 0;
    } else if let Some(p) = s.find(&format!("\n{MARKER_QUESTION}")) {
        cut = cut.min(p);
    }
    if let Some(p) = s.find("\n\n") {
        cut = cut.min(p);
    }
    s[..cut].trim_end().to_string()
}

/// Generates one continuation for `prompt`, extracting the context and
/// retrying with derived seeds (`mix64(sample_seed, attempt)`) until
/// `accept` passes, up to [`MAX_GENERATION_ATTEMPTS`]. Returns the accepted
/// text, the seed that produced it, and the attempts consumed.
pub fn sample_accepted(
    backend: &dyn GeneratorBackend,
    prompt: &str,
    policy: &SamplingPolicy,
    sample_seed: u64,
    end_of_text: Option<&str>,
    accept: impl Fn(&str) -> bool,
) -> Result<(String, u64, u32)> {
    for attempt in 0..MAX_GENERATION_ATTEMPTS {
        let seed = if attempt == 0 {
            sample_seed
        } else {
            mix64(sample_seed, attempt as u64)
        };
        let raw = backend.sample(prompt, &policy.with_seed(seed))?;
        let text = extract_context(&raw, end_of_text);
        if accept(&text) {
            return Ok((text, seed, attempt + 1));
        }
    }
    Err(Error::GenerationExhausted {
        prompt: prompt.to_string(),
        attempts: MAX_GENERATION_ATTEMPTS,
    })
}

/// Provenance tag for a backend state: `id@fingerprint-prefix`.
pub fn backend_tag(backend: &dyn GeneratorBackend) -> String {
    let fp = backend.fingerprint();
    let short = &fp[..fp.len().min(12)];
    format!("{}@{}", backend.backend_id(), short)
}

/// Generates one synthetic sample for (class_index, sample_index) under the
/// per-sample seed scheme. Exposed so slices of a run can be reproduced.
pub fn generate_one(
    state: &PipelineState,
    spec: &TaskSpec,
    class_index: usize,
    sample_index: usize,
    policy: &SamplingPolicy,
) -> Result<(LabeledExample, SampleProvenance)> {
    if state.stage == Stage::Raw {
        return Err(Error::Stage {
            expected: "qac_tuned or adapted".into(),
            found: state.stage.to_string(),
        });
    }
    let prompt = GenerationPrompt::new(spec, class_index, sample_index, &state.options)?;
    let policy = ensure_stop_token(state.backend(), policy);
    let eot = state.backend().end_of_text_token();
    let sample_seed = mix64(mix64(policy.seed, class_index as u64), sample_index as u64);
    let (text, seed, attempts) = sample_accepted(
        state.backend(),
        &prompt.text,
        &policy,
        sample_seed,
        eot.as_deref(),
        |t| !t.is_empty(),
    )?;
    Ok((
        LabeledExample::new(text, prompt.label)?,
        SampleProvenance {
            prompt: prompt.text,
            seed,
            backend: backend_tag(state.backend()),
            attempts,
        },
    ))
}

fn ensure_stop_token(backend: &dyn GeneratorBackend, policy: &SamplingPolicy) -> SamplingPolicy {
    match backend.end_of_text_token() {
        Some(eot) if !policy.stop_tokens.contains(&eot) => policy.clone().with_stop_token(eot),
        _ => policy.clone(),
    }
}

/// Prompts the generator `n_per_label` times per class and assembles the
/// synthetic dataset with full provenance.
///
/// Accepts a qac-tuned state (zero-shot mode and the no-adaptation ablation)
/// or an adapted one. Empty extractions are retried under derived seeds; a
/// prompt that stays empty for [`MAX_GENERATION_ATTEMPTS`] aborts the run.
pub fn generate_synthetic(
    state: &PipelineState,
    spec: &TaskSpec,
    n_per_label: usize,
    policy: &SamplingPolicy,
) -> Result<SyntheticDataset> {
    if n_per_label == 0 {
        return Err(Error::Precondition("n_per_label must be >= 1".into()));
    }
    let mut samples = Vec::with_capacity(n_per_label * spec.classes.len());
    let mut provenance = Vec::with_capacity(samples.capacity());
    for class_index in 0..spec.classes.len() {
        for sample_index in 0..n_per_label {
            let (sample, prov) = generate_one(state, spec, class_index, sample_index, policy)?;
            samples.push(sample);
            provenance.push(prov);
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

/// Concatenates synthetic samples (first) with the few-shot set (second),
/// without deduplication. `None` for the few-shot side covers zero-shot mode
/// and the no-few-shot ablation.
pub fn assemble_training_set(
    synthetic: &SyntheticDataset,
    few_shot: Option<&FewShotSet>,
) -> Result<Vec<LabeledExample>> {
    if let Some(fs) = few_shot {
        if fs.task_id != synthetic.task_id {
            return Err(Error::Assembly(format!(
                "task mismatch: synthetic `{}` vs few-shot `{}`",
                synthetic.task_id, fs.task_id
            )));
        }
    }
    let mut out = synthetic.samples.clone();
    if let Some(fs) = few_shot {
        out.extend(fs.examples.iter().cloned());
    }
    Ok(out)
}

/// Label-leakage diagnostic: per class, how many samples contain their own
/// verbalized label as a case-insensitive substring; plus the duplicate-text
/// count (samples minus distinct texts).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub per_class: BTreeMap<String, u64>,
    pub total: u64,
    pub duplicates: u64,
}

pub fn leakage_report(synthetic: &SyntheticDataset, spec: &TaskSpec) -> LeakageReport {
    let mut per_class: BTreeMap<String, u64> =
        spec.classes.iter().map(|c| (c.clone(), 0)).collect();
    let mut total = 0;
    for sample in &synthetic.samples {
        if let Ok(word) = spec.verbalize(&sample.label) {
            if sample.text.to_lowercase().contains(&word.to_lowercase()) {
                *per_class.entry(sample.label.clone()).or_insert(0) += 1;
                total += 1;
            }
        }
    }
    let distinct: HashSet<&str> = synthetic.samples.iter().map(|s| s.text.as_str()).collect();
    LeakageReport {
        per_class,
        total,
        duplicates: (synthetic.samples.len() - distinct.len()) as u64,
    }
}

/// Generates a context for each (question, answer) pair, returning full
/// triples. Same per-index seed scheme and retry rule as
/// [`generate_synthetic`], except acceptance requires the whole triple to
/// validate (so a context that would break the serialized layout is
/// retried, not returned).
pub fn generate_for_qa_pairs(
    state: &PipelineState,
    pairs: &[(String, String)],
    policy: &SamplingPolicy,
) -> Result<Vec<QATriple>> {
    if pairs.is_empty() {
        return Err(Error::Precondition("no (question, answer) pairs".into()));
    }
    if state.stage == Stage::Raw {
        return Err(Error::Stage {
            expected: "qac_tuned or adapted".into(),
            found: state.stage.to_string(),
        });
    }
    let policy = ensure_stop_token(state.backend(), policy);
    let eot = state.backend().end_of_text_token();
    let mut out = Vec::with_capacity(pairs.len());
    for (index, (question, answer)) in pairs.iter().enumerate() {
        let q = prompt_field(question, &state.options);
        let a = prompt_field(answer, &state.options);
        let prompt = render_prompt(question, answer, &state.options);
        let pair_seed = mix64(policy.seed, index as u64);
        let (context, _seed, _attempts) = sample_accepted(
            state.backend(),
            &prompt,
            &policy,
            pair_seed,
            eot.as_deref(),
            |t| QATriple::new(q.clone(), a.clone(), t).is_ok(),
        )?;
        out.push(QATriple::new(q.clone(), a.clone(), context)?);
    }
    Ok(out)
}

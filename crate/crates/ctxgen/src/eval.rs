//! Classifier contract, micro/macro F1, update-step parity, result
//! aggregation, and the self-training loop.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::mix64;
use crate::schema::LabeledExample;

/// Micro- and macro-averaged F1 over a single-label multiclass prediction.
///
/// Micro-F1 comes from globally pooled true/false positives and negatives
/// (for single-label data it equals accuracy); macro-F1 is the unweighted
/// mean of per-class F1, where a class with no true positives and no
/// predictions scores 0.
pub fn micro_macro_f1(gold: &[String], pred: &[String], classes: &[String]) -> Result<(f64, f64)> {
    if gold.is_empty() {
        return Err(Error::Metric("empty label sequences".into()));
    }
    if gold.len() != pred.len() {
        return Err(Error::Metric(format!(
            "length mismatch: {} gold vs {} predictions",
            gold.len(),
            pred.len()
        )));
    }
    let index: BTreeMap<&str, usize> = classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let mut tp = vec![0u64; classes.len()];
    let mut fp = vec![0u64; classes.len()];
    let mut fn_ = vec![0u64; classes.len()];
    for (g, p) in gold.iter().zip(pred.iter()) {
        let gi = *index
            .get(g.as_str())
            .ok_or_else(|| Error::Metric(format!("gold label `{g}` not in class set")))?;
        let pi = *index
            .get(p.as_str())
            .ok_or_else(|| Error::Metric(format!("predicted label `{p}` not in class set")))?;
        if gi == pi {
            tp[gi] += 1;
        } else {
            fp[pi] += 1;
            fn_[gi] += 1;
        }
    }
    let sum_tp: u64 = tp.iter().sum();
    let sum_fp: u64 = fp.iter().sum();
    let sum_fn: u64 = fn_.iter().sum();
    let micro = if 2 * sum_tp + sum_fp + sum_fn == 0 {
        0.0
    } else {
        2.0 * sum_tp as f64 / (2 * sum_tp + sum_fp + sum_fn) as f64
    };
    let mut macro_sum = 0.0;
    for i in 0..classes.len() {
        let denom = 2 * tp[i] + fp[i] + fn_[i];
        if denom > 0 {
            macro_sum += 2.0 * tp[i] as f64 / denom as f64;
        }
    }
    let macro_f1 = macro_sum / classes.len() as f64;
    Ok((micro, macro_f1))
}

/// Optimizer steps for a run: `epochs * ceil(set_size / batch_size)`.
pub fn steps(set_size: usize, epochs: u32, batch_size: usize) -> u64 {
    let batch = batch_size.max(1);
    epochs as u64 * set_size.div_ceil(batch) as u64
}

/// A step-parity plan: the epoch count for the smaller run and both step
/// totals for the record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParityPlan {
    pub epochs: u32,
    pub reference_steps: u64,
    pub baseline_steps: u64,
}

/// Smallest epoch count for a `baseline_set_size` run whose update steps
/// meet or exceed the reference run's. Rounds up: under-training the smaller
/// run would bias the comparison against it.
pub fn parity_epochs(
    reference_set_size: usize,
    reference_epochs: u32,
    baseline_set_size: usize,
    batch_size: usize,
) -> ParityPlan {
    let reference_steps = steps(
        reference_set_size.max(1),
        reference_epochs.max(1),
        batch_size,
    );
    let per_epoch = steps(baseline_set_size.max(1), 1, batch_size);
    let epochs = reference_steps.div_ceil(per_epoch) as u32;
    ParityPlan {
        epochs,
        reference_steps,
        baseline_steps: per_epoch * epochs as u64,
    }
}

/// Contract for a trainable text classifier. Training must be deterministic
/// given the seed; prediction must be total over any text.
pub trait ClassifierBackend: Send {
    fn classifier_id(&self) -> &str;

    /// Continues training the current state (a fresh instance starts from
    /// scratch).
    fn train(&mut self, examples: &[LabeledExample], epochs: u32, seed: u64) -> Result<()>;

    fn predict(&self, texts: &[String]) -> Result<Vec<String>>;

    /// Batch size used for update-step accounting.
    fn batch_size(&self) -> usize;

    fn clone_box(&self) -> Box<dyn ClassifierBackend>;

    /// Serializable state for persistence and later resumption.
    fn state_json(&self) -> Result<serde_json::Value>;
}

pub const MULTINOMIAL_BOW_ID: &str = "multinomial-bow";

/// Reference classifier: a multinomial bag-of-words linear model with
/// additive smoothing. Training is count accumulation (one pass per epoch),
/// so it is deterministic, continuable, and trains in milliseconds.
/// Prediction ties break toward the lowest class index.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultinomialBowClassifier {
    classes: Vec<String>,
    alpha: f64,
    batch_size: usize,
    class_doc_counts: Vec<u64>,
    word_counts: BTreeMap<String, Vec<u64>>,
    class_word_totals: Vec<u64>,
}

impl MultinomialBowClassifier {
    pub fn new(classes: &[String], alpha: f64, batch_size: usize) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::Precondition("classifier needs classes".into()));
        }
        if alpha <= 0.0 || !alpha.is_finite() {
            return Err(Error::Precondition("alpha must be > 0".into()));
        }
        if batch_size == 0 {
            return Err(Error::Precondition("batch_size must be >= 1".into()));
        }
        Ok(Self {
            classes: classes.to_vec(),
            alpha,
            batch_size,
            class_doc_counts: vec![0; classes.len()],
            word_counts: BTreeMap::new(),
            class_word_totals: vec![0; classes.len()],
        })
    }

    /// Builds from JSON params `{"alpha": 1.0, "batch_size": 32}`.
    pub fn from_params(classes: &[String], params: &serde_json::Value) -> Result<Self> {
        let alpha = params
            .get("alpha")
            .map(|v| {
                v.as_f64().ok_or_else(|| {
                    Error::Config("classifier param `alpha` must be a number".into())
                })
            })
            .transpose()?
            .unwrap_or(1.0);
        let batch_size = params
            .get("batch_size")
            .map(|v| {
                v.as_u64().ok_or_else(|| {
                    Error::Config("classifier param `batch_size` must be an integer".into())
                })
            })
            .transpose()?
            .unwrap_or(32) as usize;
        Self::new(classes, alpha, batch_size)
    }

    pub fn from_state(state: &serde_json::Value) -> Result<Self> {
        Ok(serde_json::from_value(state.clone())?)
    }

    fn score(&self, tokens: &[String], class_index: usize) -> f64 {
        let m = self.classes.len() as f64;
        let total_docs: u64 = self.class_doc_counts.iter().sum();
        let prior = (self.class_doc_counts[class_index] as f64 + self.alpha)
            / (total_docs as f64 + self.alpha * m);
        let vocab = self.word_counts.len().max(1) as f64;
        let denom = self.class_word_totals[class_index] as f64 + self.alpha * vocab;
        let mut score = prior.ln();
        for token in tokens {
            let count = self
                .word_counts
                .get(token)
                .map(|row| row[class_index])
                .unwrap_or(0);
            score += ((count as f64 + self.alpha) / denom).ln();
        }
        score
    }
}

fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

impl ClassifierBackend for MultinomialBowClassifier {
    fn classifier_id(&self) -> &str {
        MULTINOMIAL_BOW_ID
    }

    fn train(&mut self, examples: &[LabeledExample], epochs: u32, _seed: u64) -> Result<()> {
        if epochs == 0 {
            return Err(Error::Precondition("epochs must be >= 1".into()));
        }
        for _ in 0..epochs {
            for ex in examples {
                let ci = self
                    .classes
                    .iter()
                    .position(|c| c == &ex.label)
                    .ok_or_else(|| {
                        Error::Precondition(format!("label `{}` not in class set", ex.label))
                    })?;
                self.class_doc_counts[ci] += 1;
                for token in tokenize(&ex.text) {
                    self.word_counts
                        .entry(token)
                        .or_insert_with(|| vec![0; self.classes.len()])[ci] += 1;
                    self.class_word_totals[ci] += 1;
                }
            }
        }
        Ok(())
    }

    fn predict(&self, texts: &[String]) -> Result<Vec<String>> {
        let mut out = Vec::with_capacity(texts.len());
        for text in texts {
            let tokens = tokenize(text);
            let mut best = 0usize;
            let mut best_score = f64::NEG_INFINITY;
            for ci in 0..self.classes.len() {
                let s = self.score(&tokens, ci);
                if s > best_score {
                    best_score = s;
                    best = ci;
                }
            }
            out.push(self.classes[best].clone());
        }
        Ok(out)
    }

    fn batch_size(&self) -> usize {
        self.batch_size
    }

    fn clone_box(&self) -> Box<dyn ClassifierBackend> {
        Box::new(self.clone())
    }

    fn state_json(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(self)?)
    }
}

type ClassifierFactory =
    Box<dyn Fn(&[String], &serde_json::Value) -> Result<Box<dyn ClassifierBackend>> + Send + Sync>;
type ClassifierLoader =
    Box<dyn Fn(&serde_json::Value) -> Result<Box<dyn ClassifierBackend>> + Send + Sync>;

/// Registry of classifier families: fresh construction from params plus
/// state resumption.
pub struct ClassifierRegistry {
    factories: BTreeMap<String, (ClassifierFactory, ClassifierLoader)>,
}

impl ClassifierRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut reg = Self::empty();
        reg.register(
            MULTINOMIAL_BOW_ID,
            |classes, params| {
                Ok(Box::new(MultinomialBowClassifier::from_params(
                    classes, params,
                )?))
            },
            |state| Ok(Box::new(MultinomialBowClassifier::from_state(state)?)),
        )
        .expect("fresh registry");
        reg
    }

    pub fn register(
        &mut self,
        id: impl Into<String>,
        factory: impl Fn(&[String], &serde_json::Value) -> Result<Box<dyn ClassifierBackend>>
            + Send
            + Sync
            + 'static,
        loader: impl Fn(&serde_json::Value) -> Result<Box<dyn ClassifierBackend>>
            + Send
            + Sync
            + 'static,
    ) -> Result<()> {
        let id = id.into();
        if self.factories.contains_key(&id) {
            return Err(Error::Registry(format!(
                "classifier `{id}` already registered"
            )));
        }
        self.factories
            .insert(id, (Box::new(factory), Box::new(loader)));
        Ok(())
    }

    pub fn create(
        &self,
        id: &str,
        classes: &[String],
        params: &serde_json::Value,
    ) -> Result<Box<dyn ClassifierBackend>> {
        let (factory, _) = self.factories.get(id).ok_or_else(|| {
            Error::Registry(format!(
                "unknown classifier `{id}`; known: {}",
                self.factories
                    .keys()
                    .cloned()
                    .collect::<Vec<_>>()
                    .join(", ")
            ))
        })?;
        factory(classes, params)
    }

    pub fn load(&self, id: &str, state: &serde_json::Value) -> Result<Box<dyn ClassifierBackend>> {
        let (_, loader) = self.factories.get(id).ok_or_else(|| {
            Error::Registry(format!("unknown classifier `{id}` for state loading"))
        })?;
        loader(state)
    }
}

/// Metrics of one restart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub micro_f1: f64,
    pub macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricPair {
    pub micro_f1: f64,
    pub macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartFailure {
    pub seed: u64,
    pub error: String,
}

/// Aggregated evaluation of one experiment: per-restart metrics plus their
/// mean and sample standard deviation (n-1 denominator).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub mode: String,
    pub task: String,
    pub per_seed: Vec<SeedResult>,
    pub mean: MetricPair,
    pub std: MetricPair,
    pub config_digest: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<RestartFailure>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    (mean, std)
}

impl EvalResult {
    pub fn aggregate(
        mode: impl Into<String>,
        task: impl Into<String>,
        config_digest: impl Into<String>,
        per_seed: Vec<SeedResult>,
        failures: Vec<RestartFailure>,
    ) -> Result<Self> {
        if per_seed.is_empty() {
            return Err(Error::Protocol("no successful restarts".into()));
        }
        let micros: Vec<f64> = per_seed.iter().map(|r| r.micro_f1).collect();
        let macros: Vec<f64> = per_seed.iter().map(|r| r.macro_f1).collect();
        let (mi_mean, mi_std) = mean_std(&micros);
        let (ma_mean, ma_std) = mean_std(&macros);
        Ok(Self {
            mode: mode.into(),
            task: task.into(),
            per_seed,
            mean: MetricPair {
                micro_f1: mi_mean,
                macro_f1: ma_mean,
            },
            std: MetricPair {
                micro_f1: mi_std,
                macro_f1: ma_std,
            },
            config_digest: config_digest.into(),
            failures,
        })
    }
}

/// Per-iteration self-training bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfTrainIteration {
    pub iteration: u32,
    pub pseudo_label_counts: BTreeMap<String, usize>,
    pub training_set_size: usize,
}

/// Self-training knobs.
#[derive(Debug, Clone, Copy)]
pub struct SelfTrainOptions {
    pub iterations: u32,
    pub epochs_per_iteration: u32,
    /// Reset to the entry state before each retrain instead of continuing.
    pub reinitialize: bool,
    pub seed: u64,
}

impl SelfTrainOptions {
    pub fn new(iterations: u32, epochs_per_iteration: u32, seed: u64) -> Self {
        Self {
            iterations,
            epochs_per_iteration,
            reinitialize: false,
            seed,
        }
    }
}

/// Self-training: each iteration predicts pseudo-labels for *all* unlabeled
/// texts (no confidence filtering, nothing dropped) and trains on
/// labeled plus pseudo-labeled data. By default training continues from the
/// current state. `on_iteration` fires after each retrain with the live
/// classifier, for callers that want per-iteration evaluation.
pub fn self_train(
    classifier: &mut Box<dyn ClassifierBackend>,
    labeled: &[LabeledExample],
    unlabeled: &[String],
    options: &SelfTrainOptions,
    mut on_iteration: impl FnMut(u32, &dyn ClassifierBackend, &SelfTrainIteration) -> Result<()>,
) -> Result<Vec<SelfTrainIteration>> {
    let SelfTrainOptions {
        iterations,
        epochs_per_iteration,
        reinitialize,
        seed,
    } = *options;
    if iterations == 0 {
        return Err(Error::Precondition("iterations must be >= 1".into()));
    }
    if unlabeled.is_empty() {
        return Err(Error::Precondition("unlabeled set is empty".into()));
    }
    let initial = classifier.clone_box();
    let mut stats = Vec::with_capacity(iterations as usize);
    for iteration in 1..=iterations {
        let pseudo_labels = classifier
            .predict(unlabeled)
            .map_err(|e| Error::Protocol(format!("iteration {iteration}: {e}")))?;
        let mut pseudo_label_counts: BTreeMap<String, usize> = BTreeMap::new();
        let mut train_set: Vec<LabeledExample> = labeled.to_vec();
        for (text, label) in unlabeled.iter().zip(pseudo_labels.iter()) {
            *pseudo_label_counts.entry(label.clone()).or_insert(0) += 1;
            train_set.push(LabeledExample {
                text: text.clone(),
                label: label.clone(),
            });
        }
        if reinitialize {
            *classifier = initial.clone_box();
        }
        classifier
            .train(
                &train_set,
                epochs_per_iteration,
                mix64(seed, iteration as u64),
            )
            .map_err(|e| Error::Protocol(format!("iteration {iteration}: {e}")))?;
        let record = SelfTrainIteration {
            iteration,
            pseudo_label_counts,
            training_set_size: train_set.len(),
        };
        on_iteration(iteration, classifier.as_ref(), &record)?;
        stats.push(record);
    }
    Ok(stats)
}

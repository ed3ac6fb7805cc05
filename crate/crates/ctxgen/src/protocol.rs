//! The experiment protocol: per-restart few-shot resampling, the mode's
//! pipeline, classifier training with update-step parity for unaugmented
//! runs, held-out evaluation, and mean/std aggregation over restarts.
//!
//! Each restart seed is split into independent streams (few-shot sampling,
//! fine-tuning, generation, classifier) with [`mix64`], so resampling the
//! few-shot set never perturbs generation and vice versa.

use std::collections::HashSet;

use crate::augment::{
    adapt_to_task, assemble_training_set, backend_tag, build_general_generator, generate_synthetic,
    leakage_report, sample_accepted, LeakageReport, PipelineState, StageFingerprints,
};
use crate::backend::{BackendRegistry, SamplingPolicy};
use crate::baselines::{lambada_format, lambada_prompt, match_per_label_count, AugmenterRegistry};
use crate::config::{ExperimentConfig, Mode};
use crate::error::{Error, Result};
use crate::eval::{
    micro_macro_f1, parity_epochs, ClassifierBackend, ClassifierRegistry, EvalResult, ParityPlan,
    RestartFailure, SeedResult,
};
use crate::qac::SerializeOptions;
use crate::rng::mix64;
use crate::schema::{
    sample_few_shot, FewShotSet, LabeledExample, QATriple, SampleProvenance, SyntheticDataset,
    TaskSpec,
};

pub const STREAM_FEW_SHOT: u64 = 1;
pub const STREAM_GENERATE: u64 = 2;
pub const STREAM_CLASSIFIER: u64 = 3;
pub const STREAM_QAC_TUNE: u64 = 4;
pub const STREAM_ADAPT: u64 = 5;
pub const STREAM_SAMPLES: u64 = 6;
pub const STREAM_BASELINE: u64 = 7;
pub const STREAM_VALIDATION: u64 = 8;

/// Loaded inputs and component registries a protocol run draws from.
pub struct ProtocolContext<'a> {
    pub spec: &'a TaskSpec,
    pub pool: &'a [LabeledExample],
    pub test: &'a [LabeledExample],
    pub qa_corpus: &'a [QATriple],
    pub backends: &'a BackendRegistry,
    pub classifiers: &'a ClassifierRegistry,
    pub augmenters: &'a AugmenterRegistry,
}

/// Everything one restart produced, kept for persistence and diagnostics.
pub struct RestartArtifacts {
    pub seed: u64,
    pub fingerprints: Option<StageFingerprints>,
    /// Fingerprint of the state synthetic data was sampled from.
    pub generation_fingerprint: Option<String>,
    pub few_shot: Option<FewShotSet>,
    pub synthetic: Option<SyntheticDataset>,
    pub leakage: Option<LeakageReport>,
    pub train_set: Vec<LabeledExample>,
    pub parity: Option<ParityPlan>,
    pub classifier_state: serde_json::Value,
}

pub struct ProtocolOutput {
    pub eval: EvalResult,
    pub restarts: Vec<RestartArtifacts>,
}

/// Runs the configured mode once per restart seed and aggregates metrics.
/// A failed restart is recorded, not fatal, unless fewer than two succeed.
pub fn run_protocol(config: &ExperimentConfig, ctx: &ProtocolContext) -> Result<ProtocolOutput> {
    config.validate()?;
    if ctx.test.is_empty() {
        return Err(Error::Protocol("test set is empty".into()));
    }
    let digest = config.digest();
    let mut per_seed = Vec::new();
    let mut restarts = Vec::new();
    let mut failures = Vec::new();
    for &seed in &config.restart_seeds {
        match run_restart(config, ctx, seed) {
            Ok((result, artifacts)) => {
                per_seed.push(result);
                restarts.push(artifacts);
            }
            Err(e) => failures.push(RestartFailure {
                seed,
                error: e.to_string(),
            }),
        }
    }
    if per_seed.len() < 2 {
        let detail = failures
            .iter()
            .map(|f| format!("seed {}: {}", f.seed, f.error))
            .collect::<Vec<_>>()
            .join("; ");
        return Err(Error::Protocol(format!(
            "only {} of {} restarts succeeded; {detail}",
            per_seed.len(),
            config.restart_seeds.len()
        )));
    }
    let eval = EvalResult::aggregate(
        config.mode.to_string(),
        ctx.spec.task_id.clone(),
        digest,
        per_seed,
        failures,
    )?;
    Ok(ProtocolOutput { eval, restarts })
}

type PipelineProducts = (
    Option<StageFingerprints>,
    Option<String>,
    Option<SyntheticDataset>,
);

fn run_restart(
    config: &ExperimentConfig,
    ctx: &ProtocolContext,
    seed: u64,
) -> Result<(SeedResult, RestartArtifacts)> {
    let spec = ctx.spec;
    let fs_seed = mix64(seed, STREAM_FEW_SHOT);
    let gen_base = mix64(seed, STREAM_GENERATE);
    let clf_seed = mix64(seed, STREAM_CLASSIFIER);

    let few_shot = if config.mode.uses_few_shot() {
        Some(sample_few_shot(ctx.pool, spec, config.shots, fs_seed)?)
    } else {
        None
    };

    let options = SerializeOptions {
        lowercase: !config.preserve_case,
    };
    let policy = SamplingPolicy::new(
        config.k,
        config.max_new_tokens,
        mix64(gen_base, STREAM_SAMPLES),
    )?;

    let (fingerprints, generation_fingerprint, synthetic): PipelineProducts = match &config.mode {
        Mode::FewShotOnly => (None, None, None),
        Mode::CondaFewShot | Mode::AblationMinusFewShot => {
            let backend = ctx
                .backends
                .create(&config.backend.id, &config.backend.params)?;
            let raw = PipelineState::raw_with(backend, options);
            let general = build_general_generator(
                raw,
                ctx.qa_corpus,
                config.qac_epochs,
                mix64(gen_base, STREAM_QAC_TUNE),
            )?;
            let adapted = adapt_to_task(
                general,
                few_shot.as_ref().expect("few-shot mode"),
                spec,
                config.adapt_epochs,
                mix64(gen_base, STREAM_ADAPT),
            )?;
            let ds = generate_synthetic(&adapted, spec, config.n_per_label, &policy)?;
            (
                Some(adapted.fingerprints().clone()),
                Some(adapted.generation_fingerprint()),
                Some(ds),
            )
        }
        Mode::CondaZeroShot | Mode::AblationMinusDa => {
            // Both generate from the general (non-adapted) state; they
            // differ only in whether few-shot data joins the training set.
            let backend = ctx
                .backends
                .create(&config.backend.id, &config.backend.params)?;
            let raw = PipelineState::raw_with(backend, options);
            let general = build_general_generator(
                raw,
                ctx.qa_corpus,
                config.qac_epochs,
                mix64(gen_base, STREAM_QAC_TUNE),
            )?;
            let ds = generate_synthetic(&general, spec, config.n_per_label, &policy)?;
            (
                Some(general.fingerprints().clone()),
                Some(general.generation_fingerprint()),
                Some(ds),
            )
        }
        Mode::Baseline(name) if name == "lambada" => run_lambada_pipeline(
            config,
            ctx,
            few_shot.as_ref().expect("baseline modes use few-shot"),
            &policy,
            gen_base,
        )?,
        Mode::Baseline(name) => {
            let augmenter = ctx.augmenters.get(name)?;
            let ds = match_per_label_count(
                few_shot.as_ref().expect("baseline modes use few-shot"),
                spec,
                augmenter.as_ref(),
                name,
                config.n_per_label,
                mix64(gen_base, STREAM_BASELINE),
            )?;
            (None, None, Some(ds))
        }
    };

    let leakage = synthetic.as_ref().map(|ds| leakage_report(ds, spec));

    let train_set: Vec<LabeledExample> = match &synthetic {
        Some(ds) => assemble_training_set(
            ds,
            if config.mode.trains_on_few_shot() {
                few_shot.as_ref()
            } else {
                None
            },
        )?,
        None => few_shot
            .as_ref()
            .map(|f| f.examples.clone())
            .unwrap_or_default(),
    };
    if train_set.is_empty() {
        return Err(Error::Protocol("assembled training set is empty".into()));
    }

    let clf = ctx.classifiers.create(
        &config.classifier.id,
        &spec.classes,
        &config.classifier.params,
    )?;

    // Unaugmented runs train longer so update steps match the augmented
    // reference size (n_per_label + shots per class).
    let reference_size = (config.n_per_label + config.shots) * spec.classes.len();
    let (epochs, parity) = if matches!(config.mode, Mode::FewShotOnly) {
        let plan = parity_epochs(
            reference_size,
            config.classifier_epochs,
            train_set.len(),
            clf.batch_size(),
        );
        (plan.epochs, Some(plan))
    } else {
        (config.classifier_epochs, None)
    };

    let validation = if config.early_stopping {
        build_validation_set(config, ctx, few_shot.as_ref(), fs_seed)?
    } else {
        None
    };
    let clf = train_classifier(
        clf,
        &train_set,
        epochs,
        clf_seed,
        validation.as_ref().map(|v| v.examples.as_slice()),
        &spec.classes,
    )?;

    let texts: Vec<String> = ctx.test.iter().map(|e| e.text.clone()).collect();
    let gold: Vec<String> = ctx.test.iter().map(|e| e.label.clone()).collect();
    let pred = clf.predict(&texts)?;
    let (micro_f1, macro_f1) = micro_macro_f1(&gold, &pred, &spec.classes)?;

    let artifacts = RestartArtifacts {
        seed,
        fingerprints,
        generation_fingerprint,
        few_shot,
        synthetic,
        leakage,
        train_set,
        parity,
        classifier_state: clf.state_json()?,
    };
    Ok((
        SeedResult {
            seed,
            micro_f1,
            macro_f1,
        },
        artifacts,
    ))
}

/// Label-prefix baseline: fine-tune a fresh backend on `{word} [SEP] {text}`
/// lines and generate by prompting with `{word} [SEP]`, under the same
/// per-sample seed scheme as the main pipeline.
fn run_lambada_pipeline(
    config: &ExperimentConfig,
    ctx: &ProtocolContext,
    few_shot: &FewShotSet,
    policy: &SamplingPolicy,
    gen_base: u64,
) -> Result<PipelineProducts> {
    let spec = ctx.spec;
    let backend = ctx
        .backends
        .create(&config.backend.id, &config.backend.params)?;
    let raw_fp = backend.fingerprint();
    let docs: Vec<String> = few_shot
        .examples
        .iter()
        .map(|ex| lambada_format(ex, spec))
        .collect::<Result<_>>()?;
    let tuned = backend.fine_tune(&docs, config.adapt_epochs, mix64(gen_base, STREAM_ADAPT))?;
    let policy = match tuned.end_of_text_token() {
        Some(eot) => policy.clone().with_stop_token(eot),
        None => policy.clone(),
    };
    let eot = tuned.end_of_text_token();
    let mut samples = Vec::with_capacity(config.n_per_label * spec.classes.len());
    let mut provenance = Vec::with_capacity(samples.capacity());
    for (class_index, class) in spec.classes.iter().enumerate() {
        let prompt = lambada_prompt(class, spec)?;
        for sample_index in 0..config.n_per_label {
            let sample_seed = mix64(mix64(policy.seed, class_index as u64), sample_index as u64);
            let (text, used_seed, attempts) = sample_accepted(
                tuned.as_ref(),
                &prompt,
                &policy,
                sample_seed,
                eot.as_deref(),
                |t| !t.is_empty(),
            )?;
            samples.push(LabeledExample::new(text, class.clone())?);
            provenance.push(SampleProvenance {
                prompt: prompt.clone(),
                seed: used_seed,
                backend: format!("lambada+{}", backend_tag(tuned.as_ref())),
                attempts,
            });
        }
    }
    let ds = SyntheticDataset::new(
        spec.task_id.clone(),
        samples,
        provenance,
        config.n_per_label,
        &spec.classes,
    )?;
    let fingerprints = StageFingerprints {
        backend_id: tuned.backend_id().to_string(),
        deterministic: tuned.deterministic(),
        raw: raw_fp,
        qac_tuned: None,
        adapted: Some(tuned.fingerprint()),
    };
    let generation_fp = tuned.fingerprint();
    Ok((Some(fingerprints), Some(generation_fp), Some(ds)))
}

/// Validation set for early stopping: same size as the few-shot set,
/// sampled from the pool with few-shot texts excluded. Zero-shot runs have
/// no labeled data to hold out, so the flag is ignored there.
fn build_validation_set(
    config: &ExperimentConfig,
    ctx: &ProtocolContext,
    few_shot: Option<&FewShotSet>,
    fs_seed: u64,
) -> Result<Option<FewShotSet>> {
    let Some(few_shot) = few_shot else {
        return Ok(None);
    };
    let taken: HashSet<&str> = few_shot.texts().collect();
    let remaining: Vec<LabeledExample> = ctx
        .pool
        .iter()
        .filter(|e| !taken.contains(e.text.as_str()))
        .cloned()
        .collect();
    let val = sample_few_shot(
        &remaining,
        ctx.spec,
        config.shots,
        mix64(fs_seed, STREAM_VALIDATION),
    )?;
    Ok(Some(val))
}

fn train_classifier(
    mut clf: Box<dyn ClassifierBackend>,
    train_set: &[LabeledExample],
    epochs: u32,
    seed: u64,
    validation: Option<&[LabeledExample]>,
    classes: &[String],
) -> Result<Box<dyn ClassifierBackend>> {
    let Some(validation) = validation else {
        clf.train(train_set, epochs, seed)?;
        return Ok(clf);
    };
    // Epoch-wise early stopping: keep the best validation macro-F1 state.
    let texts: Vec<String> = validation.iter().map(|e| e.text.clone()).collect();
    let gold: Vec<String> = validation.iter().map(|e| e.label.clone()).collect();
    let mut best: Option<(f64, Box<dyn ClassifierBackend>)> = None;
    for epoch in 0..epochs {
        clf.train(train_set, 1, mix64(seed, epoch as u64))?;
        let pred = clf.predict(&texts)?;
        let (_, macro_f1) = micro_macro_f1(&gold, &pred, classes)?;
        if best.as_ref().map(|(b, _)| macro_f1 > *b).unwrap_or(true) {
            best = Some((macro_f1, clf.clone_box()));
        }
    }
    Ok(best.expect("epochs >= 1").1)
}

//! The five commands: ingest, run, sweep, selftrain, report.
//!
//! Data paths in a config resolve relative to the config file's directory.
//! `output_dir` resolves relative to `CTXGEN_OUTPUT_ROOT` when that variable
//! is set (and the path is relative), otherwise relative to the working
//! directory. Every JSON artifact embeds the config digest; rerunning into a
//! directory whose recorded digest differs is refused unless forced.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use ctxgen::backend::BackendRegistry;
use ctxgen::baselines::{AugmenterRegistry, JsonlLexicon};
use ctxgen::config::{CorpusFormat, ExperimentConfig};
use ctxgen::eval::{micro_macro_f1, ClassifierRegistry, EvalResult};
use ctxgen::protocol::{run_protocol, ProtocolContext, ProtocolOutput};
use ctxgen::qac::{canonical_jsonl, ingest_canonical, ingest_squad_file, IngestStats};
use ctxgen::schema::{
    builtin_task, read_labeled_jsonl, read_task_spec, LabeledExample, QATriple, SyntheticDataset,
    TaskSpec,
};

use crate::io::{resolve, write_atomic, write_json_atomic};
use crate::report::render_markdown;

/// Environment variable overriding where relative `output_dir`s land.
pub const OUTPUT_ROOT_ENV: &str = "CTXGEN_OUTPUT_ROOT";

/// `ingest`: convert a QA corpus into canonical JSONL plus a stats file.
/// Nothing is written when ingestion fails.
pub fn cmd_ingest(
    input: &Path,
    format: CorpusFormat,
    output: &Path,
    stats_path: Option<&Path>,
) -> Result<IngestStats> {
    let (triples, stats) = match format {
        CorpusFormat::Squad => ingest_squad_file(input)?,
        CorpusFormat::Canonical => ingest_canonical(input)?,
    };
    let jsonl = canonical_jsonl(&triples)?;
    write_atomic(output, jsonl.as_bytes())?;
    if let Some(stats_path) = stats_path {
        write_json_atomic(stats_path, &stats)?;
    }
    Ok(stats)
}

/// A config loaded from disk along with everything it references.
pub struct LoadedExperiment {
    pub config: ExperimentConfig,
    pub output_dir: PathBuf,
    pub spec: TaskSpec,
    pub pool: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
    pub qa_corpus: Vec<QATriple>,
    pub backends: BackendRegistry,
    pub classifiers: ClassifierRegistry,
    pub augmenters: AugmenterRegistry,
}

impl LoadedExperiment {
    pub fn context(&self) -> ProtocolContext<'_> {
        ProtocolContext {
            spec: &self.spec,
            pool: &self.pool,
            test: &self.test,
            qa_corpus: &self.qa_corpus,
            backends: &self.backends,
            classifiers: &self.classifiers,
            augmenters: &self.augmenters,
        }
    }
}

fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."))
}

pub fn load_config(config_path: &Path) -> Result<(ExperimentConfig, PathBuf)> {
    let text = fs::read_to_string(config_path)
        .with_context(|| format!("reading config {}", config_path.display()))?;
    let config = ExperimentConfig::from_json(&text)
        .with_context(|| format!("parsing config {}", config_path.display()))?;
    let base = config_path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    Ok((config, base))
}

/// Loads the config and every input it references.
pub fn load_experiment(config_path: &Path) -> Result<LoadedExperiment> {
    let (config, base) = load_config(config_path)?;
    let output_dir = resolve(&output_root(), &config.output_dir);

    let spec = match &config.task_file {
        Some(file) => read_task_spec(resolve(&base, file))?,
        None => builtin_task(&config.task_id)?,
    };
    if spec.task_id != config.task_id {
        bail!(
            "config task_id `{}` does not match task file's `{}`",
            config.task_id,
            spec.task_id
        );
    }
    let pool = read_labeled_jsonl(resolve(&base, &config.train_pool))?;
    let test = read_labeled_jsonl(resolve(&base, &config.test_set))?;
    let qa_path = resolve(&base, &config.qa_corpus);
    let (qa_corpus, qa_stats) = match config.qa_format {
        CorpusFormat::Squad => ingest_squad_file(&qa_path)?,
        CorpusFormat::Canonical => ingest_canonical(&qa_path)?,
    };
    if !qa_stats.rejected.is_empty() {
        eprintln!(
            "warning: {} QA records rejected during load of {}",
            qa_stats.rejected.len(),
            qa_path.display()
        );
    }
    let lexicon: Arc<JsonlLexicon> = match &config.lexicon {
        Some(path) => Arc::new(JsonlLexicon::load(resolve(&base, path))?),
        None => Arc::new(JsonlLexicon::empty()),
    };
    Ok(LoadedExperiment {
        config,
        output_dir,
        spec,
        pool,
        test,
        qa_corpus,
        backends: BackendRegistry::with_builtins(),
        classifiers: ClassifierRegistry::with_builtins(),
        augmenters: AugmenterRegistry::with_builtins(lexicon),
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct ConfigSnapshot {
    config_digest: String,
    config: ExperimentConfig,
}

#[derive(Serialize, Deserialize)]
struct RestartFingerprints {
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    fingerprints: Option<ctxgen::augment::StageFingerprints>,
    #[serde(skip_serializing_if = "Option::is_none")]
    generation_fingerprint: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    parity: Option<ctxgen::eval::ParityPlan>,
}

#[derive(Serialize, Deserialize)]
struct FingerprintsFile {
    config_digest: String,
    restarts: Vec<RestartFingerprints>,
}

#[derive(Serialize, Deserialize)]
struct LeakageEntry {
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<ctxgen::augment::LeakageReport>,
}

#[derive(Serialize, Deserialize)]
struct LeakageFile {
    config_digest: String,
    restarts: Vec<LeakageEntry>,
}

#[derive(Serialize, Deserialize)]
struct ClassifierStateFile {
    config_digest: String,
    classifier_id: String,
    seed: u64,
    state: serde_json::Value,
}

/// Refuses to reuse an output directory recorded under a different config.
fn check_resume(output_dir: &Path, digest: &str, force: bool) -> Result<()> {
    let snapshot_path = output_dir.join("config.json");
    if !snapshot_path.exists() {
        return Ok(());
    }
    let text = fs::read_to_string(&snapshot_path)?;
    let previous: ConfigSnapshot = match serde_json::from_str(&text) {
        Ok(s) => s,
        Err(_) => {
            if force {
                return Ok(());
            }
            bail!(
                "{} exists but is not a config snapshot; use --force to overwrite",
                snapshot_path.display()
            );
        }
    };
    if previous.config_digest != digest && !force {
        bail!(
            "output dir {} holds results for config digest {} but this config digests to {}; \
             point output_dir elsewhere or pass --force",
            output_dir.display(),
            previous.config_digest,
            digest
        );
    }
    Ok(())
}

#[derive(Debug)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub eval: EvalResult,
}

/// `run`: execute the configured protocol and persist all artifacts.
pub fn cmd_run(config_path: &Path, force: bool) -> Result<RunSummary> {
    let experiment = load_experiment(config_path)?;
    let digest = experiment.config.digest();
    check_resume(&experiment.output_dir, &digest, force)?;
    let output = run_protocol(&experiment.config, &experiment.context())
        .map_err(|e| anyhow!("protocol failed: {e}"))?;
    write_run_artifacts(&experiment, &output)?;
    Ok(RunSummary {
        output_dir: experiment.output_dir.clone(),
        eval: output.eval,
    })
}

fn write_run_artifacts(experiment: &LoadedExperiment, output: &ProtocolOutput) -> Result<()> {
    let dir = &experiment.output_dir;
    let digest = experiment.config.digest();

    write_json_atomic(
        &dir.join("config.json"),
        &ConfigSnapshot {
            config_digest: digest.clone(),
            config: experiment.config.clone(),
        },
    )?;

    let fingerprints = FingerprintsFile {
        config_digest: digest.clone(),
        restarts: output
            .restarts
            .iter()
            .map(|r| RestartFingerprints {
                seed: r.seed,
                fingerprints: r.fingerprints.clone(),
                generation_fingerprint: r.generation_fingerprint.clone(),
                parity: r.parity,
            })
            .collect(),
    };
    write_json_atomic(&dir.join("fingerprints.json"), &fingerprints)?;

    for restart in &output.restarts {
        if let Some(ds) = &restart.synthetic {
            write_atomic(
                &dir.join(format!("generated_{}.jsonl", restart.seed)),
                ds.to_jsonl()?.as_bytes(),
            )?;
        }
        let train_jsonl: String = restart
            .train_set
            .iter()
            .map(|ex| serde_json::to_string(ex).map(|s| s + "\n"))
            .collect::<std::result::Result<String, _>>()?;
        write_atomic(
            &dir.join(format!("train_{}.jsonl", restart.seed)),
            train_jsonl.as_bytes(),
        )?;
        write_json_atomic(
            &dir.join(format!("classifier_{}.json", restart.seed)),
            &ClassifierStateFile {
                config_digest: digest.clone(),
                classifier_id: experiment.config.classifier.id.clone(),
                seed: restart.seed,
                state: restart.classifier_state.clone(),
            },
        )?;
    }

    let leakage = LeakageFile {
        config_digest: digest.clone(),
        restarts: output
            .restarts
            .iter()
            .map(|r| LeakageEntry {
                seed: r.seed,
                report: r.leakage.clone(),
            })
            .collect(),
    };
    write_json_atomic(&dir.join("leakage.json"), &leakage)?;

    write_json_atomic(&dir.join("eval.json"), &output.eval)?;
    write_atomic(
        &dir.join("results.md"),
        render_markdown(&output.eval).as_bytes(),
    )?;
    Ok(())
}

/// Axis a sweep can vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    NPerLabel,
    Shots,
    K,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::NPerLabel => "n_per_label",
            SweepAxis::Shots => "shots",
            SweepAxis::K => "k",
        }
    }

    fn apply(self, config: &mut ExperimentConfig, value: u64) {
        match self {
            SweepAxis::NPerLabel => config.n_per_label = value as usize,
            SweepAxis::Shots => config.shots = value as usize,
            SweepAxis::K => config.k = value as usize,
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "n_per_label" => Ok(SweepAxis::NPerLabel),
            "shots" => Ok(SweepAxis::Shots),
            "k" => Ok(SweepAxis::K),
            other => bail!("unknown sweep axis `{other}`; expected n_per_label, shots, or k"),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: u64,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_macro_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub std_macro_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_digest: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SweepSeries {
    pub axis: String,
    pub base_config_digest: String,
    pub points: Vec<SweepPoint>,
}

/// `sweep`: run the protocol once per axis value, each point in its own
/// subdirectory, and emit the aggregated series plus a plot-ready CSV.
/// Failed points are recorded and do not sink the series.
pub fn cmd_sweep(config_path: &Path, axis: SweepAxis, values: &[u64]) -> Result<SweepSeries> {
    if values.is_empty() {
        bail!("sweep needs at least one value");
    }
    if values.windows(2).any(|w| w[0] >= w[1]) {
        bail!("sweep values must be strictly ascending");
    }
    let base = load_experiment(config_path)?;
    let sweep_dir = base.output_dir.join(format!("sweep_{}", axis.name()));
    let mut points = Vec::new();
    for &value in values {
        let mut config = base.config.clone();
        axis.apply(&mut config, value);
        let point_dir = sweep_dir.join(format!("value_{value}"));
        config.output_dir = point_dir.clone();
        let experiment = LoadedExperiment {
            config,
            output_dir: point_dir,
            spec: base.spec.clone(),
            pool: base.pool.clone(),
            test: base.test.clone(),
            qa_corpus: base.qa_corpus.clone(),
            backends: BackendRegistry::with_builtins(),
            classifiers: ClassifierRegistry::with_builtins(),
            augmenters: AugmenterRegistry::with_builtins(Arc::new(JsonlLexicon::empty())),
        };
        match run_protocol(&experiment.config, &experiment.context()) {
            Ok(output) => {
                write_run_artifacts(&experiment, &output)?;
                points.push(SweepPoint {
                    value,
                    status: "ok".into(),
                    mean_macro_f1: Some(output.eval.mean.macro_f1),
                    std_macro_f1: Some(output.eval.std.macro_f1),
                    config_digest: Some(experiment.config.digest()),
                    error: None,
                });
            }
            Err(e) => points.push(SweepPoint {
                value,
                status: "failed".into(),
                mean_macro_f1: None,
                std_macro_f1: None,
                config_digest: Some(experiment.config.digest()),
                error: Some(e.to_string()),
            }),
        }
    }
    let series = SweepSeries {
        axis: axis.name().to_string(),
        base_config_digest: base.config.digest(),
        points,
    };
    write_json_atomic(&sweep_dir.join("series.json"), &series)?;
    let mut csv = String::from("value,mean_macro_f1,std_macro_f1\n");
    for p in &series.points {
        if let (Some(mean), Some(std)) = (p.mean_macro_f1, p.std_macro_f1) {
            csv.push_str(&format!("{},{mean},{std}\n", p.value));
        }
    }
    write_atomic(&sweep_dir.join("series.csv"), csv.as_bytes())?;
    Ok(series)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SelfTrainIterationReport {
    pub iteration: u32,
    pub micro_f1: f64,
    pub macro_f1: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub training_set_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pseudo_label_counts: Option<BTreeMap<String, usize>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SelfTrainRestartReport {
    pub seed: u64,
    pub iterations: Vec<SelfTrainIterationReport>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SelfTrainReport {
    pub config_digest: String,
    pub unlabeled_count: usize,
    pub iterations: u32,
    pub reinitialize: bool,
    pub restarts: Vec<SelfTrainRestartReport>,
}

fn read_unlabeled(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading unlabeled {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line)
            .with_context(|| format!("unlabeled line {} is not JSON", i + 1))?;
        let item = value
            .get("text")
            .and_then(|t| t.as_str())
            .ok_or_else(|| anyhow!("unlabeled line {} has no \"text\" field", i + 1))?;
        out.push(item.to_string());
    }
    if out.is_empty() {
        bail!("unlabeled file {} holds no texts", path.display());
    }
    Ok(out)
}

/// `selftrain`: resume each restart's trained classifier from a previous
/// `run`, pseudo-label the unlabeled texts, retrain for the configured
/// iterations, and report per-iteration metrics (iteration 0 is the loaded
/// state, unchanged).
pub fn cmd_selftrain(
    config_path: &Path,
    unlabeled_path: &Path,
    iterations: u32,
    reinitialize: bool,
) -> Result<SelfTrainReport> {
    let experiment = load_experiment(config_path)?;
    let digest = experiment.config.digest();
    let eval_path = experiment.output_dir.join("eval.json");
    if !eval_path.exists() {
        bail!(
            "no completed run found at {}; run `ctxgen run --config ...` first",
            experiment.output_dir.display()
        );
    }
    let prior: EvalResult = serde_json::from_str(&fs::read_to_string(&eval_path)?)?;
    if prior.config_digest != digest {
        bail!(
            "run at {} belongs to config digest {}, not {}",
            experiment.output_dir.display(),
            prior.config_digest,
            digest
        );
    }
    let unlabeled = read_unlabeled(unlabeled_path)?;

    let texts: Vec<String> = experiment.test.iter().map(|e| e.text.clone()).collect();
    let gold: Vec<String> = experiment.test.iter().map(|e| e.label.clone()).collect();
    let classes = &experiment.spec.classes;

    let mut restarts = Vec::new();
    for &seed in &experiment.config.restart_seeds {
        let state_path = experiment
            .output_dir
            .join(format!("classifier_{seed}.json"));
        let train_path = experiment.output_dir.join(format!("train_{seed}.jsonl"));
        if !state_path.exists() || !train_path.exists() {
            bail!(
                "restart {seed} artifacts missing under {}; rerun `ctxgen run`",
                experiment.output_dir.display()
            );
        }
        let state_file: ClassifierStateFile =
            serde_json::from_str(&fs::read_to_string(&state_path)?)?;
        let mut classifier = experiment
            .classifiers
            .load(&state_file.classifier_id, &state_file.state)?;
        let labeled = read_labeled_jsonl(&train_path)?;

        let mut iterations_report = Vec::new();
        let pred0 = classifier.predict(&texts)?;
        let (micro0, macro0) = micro_macro_f1(&gold, &pred0, classes)?;
        iterations_report.push(SelfTrainIterationReport {
            iteration: 0,
            micro_f1: micro0,
            macro_f1: macro0,
            training_set_size: None,
            pseudo_label_counts: None,
        });
        let st_options = ctxgen::eval::SelfTrainOptions {
            iterations,
            epochs_per_iteration: experiment.config.classifier_epochs,
            reinitialize,
            seed: ctxgen::rng::mix64(seed, ctxgen::protocol::STREAM_CLASSIFIER),
        };
        ctxgen::eval::self_train(
            &mut classifier,
            &labeled,
            &unlabeled,
            &st_options,
            |iteration, clf, record| {
                let pred = clf.predict(&texts)?;
                let (micro_f1, macro_f1) = micro_macro_f1(&gold, &pred, classes)?;
                iterations_report.push(SelfTrainIterationReport {
                    iteration,
                    micro_f1,
                    macro_f1,
                    training_set_size: Some(record.training_set_size),
                    pseudo_label_counts: Some(record.pseudo_label_counts.clone()),
                });
                Ok(())
            },
        )?;
        restarts.push(SelfTrainRestartReport {
            seed,
            iterations: iterations_report,
        });
    }
    let report = SelfTrainReport {
        config_digest: digest,
        unlabeled_count: unlabeled.len(),
        iterations,
        reinitialize,
        restarts,
    };
    write_json_atomic(&experiment.output_dir.join("selftrain.json"), &report)?;
    Ok(report)
}

/// `report`: re-render the markdown table from a run directory's eval.json.
pub fn cmd_report(output_dir: &Path) -> Result<String> {
    let eval_path = output_dir.join("eval.json");
    let eval: EvalResult = serde_json::from_str(
        &fs::read_to_string(&eval_path)
            .with_context(|| format!("reading {}", eval_path.display()))?,
    )?;
    let md = render_markdown(&eval);
    write_atomic(&output_dir.join("results.md"), md.as_bytes())?;
    Ok(md)
}

/// Loads a run directory's synthetic dataset for one restart (diagnostics).
pub fn load_generated(output_dir: &Path, task_id: &str, seed: u64) -> Result<SyntheticDataset> {
    let path = output_dir.join(format!("generated_{seed}.jsonl"));
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(SyntheticDataset::from_jsonl(task_id, &text)?)
}

//! Shared toy fixture: a two-class task whose class-conditional texts come
//! from two grammars over disjoint letter sets ({d,e,f,g} vs {r,s,t,u}),
//! plus a QA corpus in the same character alphabet. The verbalized labels
//! ("feed" / "rust") end in different letters, so a character n-gram
//! generator whose context window reaches back across "\ncontext: " can
//! condition its first body characters on the class.

use std::path::{Path, PathBuf};

use ctxgen::rng::SplitMix64;
use ctxgen::schema::{write_labeled_jsonl, write_task_spec, LabeledExample, QATriple, TaskSpec};

pub const FEED_ALPHABET: [char; 4] = ['d', 'e', 'f', 'g'];
pub const RUST_ALPHABET: [char; 4] = ['r', 's', 't', 'u'];

/// First `n` length-3 words over the alphabet, in a fixed shuffled order.
pub fn inventory(alphabet: [char; 4], n: usize, seed: u64) -> Vec<String> {
    let mut all = Vec::new();
    for a in alphabet {
        for b in alphabet {
            for c in alphabet {
                all.push(format!("{a}{b}{c}"));
            }
        }
    }
    let mut rng = SplitMix64::new(seed);
    rng.shuffle(&mut all);
    all.truncate(n);
    all
}

fn make_text(rng: &mut SplitMix64, inv: &[String], min_words: usize, max_words: usize) -> String {
    let n = min_words + rng.next_below((max_words - min_words + 1) as u64) as usize;
    (0..n)
        .map(|_| rng.choose(inv).unwrap().clone())
        .collect::<Vec<_>>()
        .join(" ")
}

pub struct ToyDataOptions {
    pub inventory_per_class: usize,
    pub qa_triples: usize,
    pub pool_per_class: usize,
    pub test_per_class: usize,
    pub unlabeled: usize,
    /// Words per pool/test text. Lifting this above the generation budget
    /// (16 three-letter words > 60 sampled characters) makes labeled texts
    /// structurally impossible for the generator to reproduce.
    pub text_words: usize,
}

impl Default for ToyDataOptions {
    fn default() -> Self {
        Self {
            inventory_per_class: 40,
            qa_triples: 200,
            pool_per_class: 60,
            test_per_class: 200,
            unlabeled: 20,
            text_words: 2,
        }
    }
}

pub struct ToyData {
    pub task_file: PathBuf,
    pub qa_corpus: PathBuf,
    pub train_pool: PathBuf,
    pub test_set: PathBuf,
    // Not every test binary touches every input file.
    #[allow(dead_code)]
    pub unlabeled: PathBuf,
    pub lexicon: PathBuf,
}

/// Writes the complete toy dataset into `dir` and returns the file paths.
/// Fully deterministic: same options, same bytes.
pub fn build_toy_data(dir: &Path, opts: &ToyDataOptions) -> ToyData {
    std::fs::create_dir_all(dir).unwrap();
    let spec = TaskSpec::new(
        "toy",
        vec!["feed", "rust"],
        "feed or rust?",
        &[("feed", "feed"), ("rust", "rust")],
    )
    .unwrap();
    let task_file = dir.join("task.json");
    write_task_spec(&task_file, &spec).unwrap();

    let feed = inventory(FEED_ALPHABET, opts.inventory_per_class, 101);
    let rust = inventory(RUST_ALPHABET, opts.inventory_per_class, 202);

    // QA corpus: alternating-class bodies of 4-7 words; the answer is the
    // first word of the body, so the corpus also teaches answer-to-body
    // correlations across the context marker.
    let mut rng = SplitMix64::new(404);
    let mut qa = Vec::with_capacity(opts.qa_triples);
    for i in 0..opts.qa_triples {
        let inv = if i % 2 == 0 { &feed } else { &rust };
        let body = make_text(&mut rng, inv, 4, 7);
        let first = body.split(' ').next().unwrap().to_string();
        qa.push(QATriple::new("what comes next?", first, body).unwrap());
    }
    let qa_corpus = dir.join("qa.jsonl");
    ctxgen::qac::write_canonical(&qa_corpus, &qa).unwrap();

    // Pool and test: fixed-length texts from the same grammars.
    let mut rng = SplitMix64::new(505);
    let mut pool = Vec::new();
    let mut test = Vec::new();
    let w = opts.text_words;
    for (label, inv) in [("feed", &feed), ("rust", &rust)] {
        for _ in 0..opts.pool_per_class {
            pool.push(LabeledExample::new(make_text(&mut rng, inv, w, w), label).unwrap());
        }
        for _ in 0..opts.test_per_class {
            test.push(LabeledExample::new(make_text(&mut rng, inv, w, w), label).unwrap());
        }
    }
    let train_pool = dir.join("pool.jsonl");
    write_labeled_jsonl(&train_pool, &pool).unwrap();
    let test_set = dir.join("test.jsonl");
    write_labeled_jsonl(&test_set, &test).unwrap();

    // Unlabeled texts for self-training: balanced, no labels persisted.
    let mut rng = SplitMix64::new(606);
    let mut unlabeled_lines = String::new();
    for i in 0..opts.unlabeled {
        let inv = if i % 2 == 0 { &feed } else { &rust };
        let text = make_text(&mut rng, inv, 2, 3);
        unlabeled_lines.push_str(&serde_json::json!({ "text": text }).to_string());
        unlabeled_lines.push('\n');
    }
    let unlabeled = dir.join("unlabeled.jsonl");
    std::fs::write(&unlabeled, unlabeled_lines).unwrap();

    // Tiny in-grammar synonym lexicon for the EDA baseline.
    let mut lexicon_lines = String::new();
    for inv in [&feed, &rust] {
        for i in 0..4.min(inv.len()) {
            let word = &inv[i];
            let syn = &inv[(i + 1) % inv.len()];
            lexicon_lines.push_str(&serde_json::json!({ word: [syn] }).to_string());
            lexicon_lines.push('\n');
        }
    }
    let lexicon = dir.join("lexicon.jsonl");
    std::fs::write(&lexicon, lexicon_lines).unwrap();

    ToyData {
        task_file,
        qa_corpus,
        train_pool,
        test_set,
        unlabeled,
        lexicon,
    }
}

/// A toy config as a JSON value, for tests to tweak before writing.
/// Matches the scaled-down experiment: 8 shots, 50 per label, k = 5, 60
/// max tokens, an order-12 reference backend.
pub fn toy_config_value(data: &ToyData, mode: &str, output_dir: &Path) -> serde_json::Value {
    serde_json::json!({
        "task_id": "toy",
        "task_file": data.task_file,
        "qa_corpus": data.qa_corpus,
        "qa_format": "canonical",
        "train_pool": data.train_pool,
        "test_set": data.test_set,
        "backend": {"id": "char-ngram", "params": {"order": 12, "alpha": 0.05}},
        "classifier": {"id": "multinomial-bow", "params": {}},
        "mode": mode,
        "shots": 8,
        "n_per_label": 50,
        "k": 5,
        "max_new_tokens": 60,
        "lexicon": data.lexicon,
        "output_dir": output_dir,
    })
}

pub fn write_config(path: &Path, value: &serde_json::Value) {
    std::fs::write(path, serde_json::to_string_pretty(value).unwrap()).unwrap();
}

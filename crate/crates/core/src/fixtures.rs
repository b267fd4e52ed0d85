//! Self-contained toy assets: a small vocabulary in the published asset
//! format, a synthetic weight container, and a tiny review dataset. Used by
//! tests and by `gen-fixtures` so the whole pipeline can run without
//! external downloads.

use std::fs;
use std::path::{Path, PathBuf};

use crate::corpus::Schema;
use crate::model_slice::write_tensor_file;
use crate::tokenizer::byte_encoder_table;

/// Hand-picked merges over the byte alphabet; each pair only references
/// base symbols or earlier results, like a learned merge list.
const TOY_MERGES: &[(&str, &str)] = &[
    ("Ġ", "t"),
    ("Ġ", "a"),
    ("h", "e"),
    ("i", "n"),
    ("r", "e"),
    ("o", "n"),
    ("Ġt", "he"),
    ("t", "he"),
    ("e", "r"),
    ("Ġ", "s"),
    ("a", "t"),
    ("Ġ", "w"),
    ("Ġ", "o"),
    ("n", "d"),
    ("Ġ", "b"),
    ("Ġ", "c"),
    ("Ġ", "p"),
    ("Ġ", "f"),
    ("Ġ", "m"),
    ("o", "r"),
    ("a", "n"),
    ("Ġ", "g"),
    ("o", "o"),
    ("Ġ", "d"),
    ("i", "s"),
    ("a", "d"),
    ("l", "l"),
    ("a", "s"),
    ("Ġw", "as"),
    ("o", "v"),
    ("i", "e"),
    ("Ġm", "ov"),
    ("Ġmov", "ie"),
    ("Ġg", "oo"),
    ("Ġgoo", "d"),
    ("Ġb", "ad"),
    ("H", "e"),
    ("He", "ll"),
    ("Hell", "o"),
    ("Ġw", "or"),
    ("l", "d"),
    ("Ġwor", "ld"),
    ("T", "he"),
    ("e", "d"),
    ("in", "g"),
    ("Ġp", "l"),
    ("o", "t"),
    ("Ġpl", "ot"),
    ("s", "t"),
    ("e", "st"),
    ("Ġb", "est"),
    ("i", "l"),
    ("Ġf", "il"),
    ("Ġfil", "m"),
    ("Ġ", "h"),
    ("Ġ", "l"),
    ("Ġ", "n"),
    ("Ġ", "r"),
    ("Ġ", "u"),
    ("Ġ", "v"),
    ("Ġ", "e"),
    ("Ġ", "i"),
];

/// Vocab JSON text: byte symbols get ids 0..255 in byte order, merge
/// results follow in rank order, `<|endoftext|>` is last.
pub fn toy_vocab_json() -> String {
    let table = byte_encoder_table();
    let mut entries: Vec<(String, usize)> = (0..256)
        .map(|b| (table[b].to_string(), b))
        .collect();
    for (rank, (left, right)) in TOY_MERGES.iter().enumerate() {
        let token = format!("{left}{right}");
        assert!(
            entries.iter().all(|(t, _)| t != &token),
            "duplicate toy merge result {token:?}"
        );
        entries.push((token, 256 + rank));
    }
    entries.push(("<|endoftext|>".to_string(), 256 + TOY_MERGES.len()));

    let mut out = String::from("{");
    for (i, (token, id)) in entries.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&serde_json::to_string(token).unwrap());
        out.push_str(&format!(":{id}"));
    }
    out.push('}');
    out
}

pub fn toy_merges_txt() -> String {
    let mut out = String::from("#version: 0.2\n");
    for (left, right) in TOY_MERGES {
        out.push_str(&format!("{left} {right}\n"));
    }
    out
}

/// Total toy vocabulary size (byte symbols + merges + end-of-text).
pub fn toy_vocab_size() -> usize {
    256 + TOY_MERGES.len() + 1
}

const TOY_TRAIN: &[(&str, &str)] = &[
    ("the movie was good", "good"),
    ("the movie was bad", "bad"),
    ("the film was good", "good"),
    ("the plot was bad", "bad"),
    ("the best movie", "good"),
    ("a bad film", "bad"),
    ("good plot and good film", "good"),
    ("bad plot and bad acting", "bad"),
    ("the movie was the best", "good"),
    ("the film was a mess", "bad"),
    ("what a good movie", "good"),
    ("what a bad movie", "bad"),
];

const TOY_VALID: &[(&str, &str)] = &[
    ("was the movie good", "good"),
    ("was the film bad", "bad"),
    ("a good film", "good"),
    ("the worst plot", "bad"),
];

pub fn toy_schema() -> Schema {
    Schema::new("custom", false, vec!["bad".into(), "good".into()]).unwrap()
}

fn dataset_jsonl(rows: &[(&str, &str)]) -> String {
    let mut out = String::new();
    for (text, label) in rows {
        out.push_str(&serde_json::json!({"text": text, "label": label}).to_string());
        out.push('\n');
    }
    out
}

fn toy_template_json() -> String {
    serde_json::json!({
        "body": "Review: [S1] Sentiment: [Label]",
        "separator": " ",
        "verbalizers": ["bad", "good"],
    })
    .to_string()
}

// Deterministic weight values without an RNG dependency.
struct XorShift(u64);

impl XorShift {
    fn next_f32(&mut self) -> f32 {
        self.0 ^= self.0 << 13;
        self.0 ^= self.0 >> 7;
        self.0 ^= self.0 << 17;
        ((self.0 >> 40) as f32 / (1u64 << 24) as f32) - 0.5
    }

    fn vec(&mut self, len: usize, scale: f32) -> Vec<f32> {
        (0..len).map(|_| self.next_f32() * scale).collect()
    }
}

/// Synthetic checkpoint slice compatible with the toy vocabulary.
pub fn write_toy_weights(path: &Path, d: usize) -> std::io::Result<()> {
    let vocab_size = toy_vocab_size();
    let max_pos = 64;
    let mut rng = XorShift(0x1CE1_5E1E_C7ED_2024);
    let wte = rng.vec(vocab_size * d, 1.0);
    let wpe = rng.vec(max_pos * d, 0.3);
    let ln_gain: Vec<f32> = rng.vec(d, 0.2).iter().map(|v| 1.0 + v).collect();
    let ln_bias = rng.vec(d, 0.1);
    let c_attn = rng.vec(d * 3 * d, 0.5);
    write_tensor_file(
        path,
        &[
            ("wte.weight", vec![vocab_size, d], wte),
            ("wpe.weight", vec![max_pos, d], wpe),
            ("h.0.ln_1.weight", vec![d], ln_gain),
            ("h.0.ln_1.bias", vec![d], ln_bias),
            ("h.0.attn.c_attn.weight", vec![d, 3 * d], c_attn),
        ],
    )
}

/// Paths of a generated fixture directory.
#[derive(Debug, Clone)]
pub struct ToyFixture {
    pub dataset_dir: PathBuf,
    pub train_path: PathBuf,
    pub valid_path: PathBuf,
    pub template_path: PathBuf,
    pub vocab_path: PathBuf,
    pub merges_path: PathBuf,
    pub weights_path: PathBuf,
}

/// Write the complete toy fixture set under `dir`.
pub fn write_toy_fixture(dir: &Path) -> std::io::Result<ToyFixture> {
    let dataset_dir = dir.join("dataset");
    fs::create_dir_all(&dataset_dir)?;
    let fixture = ToyFixture {
        train_path: dataset_dir.join("train.jsonl"),
        valid_path: dataset_dir.join("valid.jsonl"),
        dataset_dir,
        template_path: dir.join("template.json"),
        vocab_path: dir.join("vocab.json"),
        merges_path: dir.join("merges.txt"),
        weights_path: dir.join("weights.safetensors"),
    };
    fs::write(&fixture.train_path, dataset_jsonl(TOY_TRAIN))?;
    fs::write(&fixture.valid_path, dataset_jsonl(TOY_VALID))?;
    fs::write(&fixture.template_path, toy_template_json())?;
    fs::write(&fixture.vocab_path, toy_vocab_json())?;
    fs::write(&fixture.merges_path, toy_merges_txt())?;
    write_toy_weights(&fixture.weights_path, 8)?;
    Ok(fixture)
}

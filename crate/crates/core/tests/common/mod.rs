#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use normattn::attention::{HeadParams, LayerParams, ModelParams};
use normattn::io_formats::{save_model, write_archive, Archive, DType, TensorEntry};
use normattn::linalg::{Matrix, Vector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

pub fn rand_vector(rng: &mut ChaCha8Rng, n: usize) -> Vector {
    Vector::new(rand_vec(rng, n)).unwrap()
}

pub fn rand_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::new(rows, cols, rand_vec(rng, rows * cols)).unwrap()
}

pub fn rand_head(rng: &mut ChaCha8Rng, d: usize, d_head: usize) -> HeadParams {
    HeadParams::new(
        rand_matrix(rng, d, d_head),
        rand_vector(rng, d_head),
        rand_matrix(rng, d, d_head),
        rand_vector(rng, d_head),
        rand_matrix(rng, d, d_head),
        rand_vector(rng, d_head),
        rand_matrix(rng, d_head, d),
    )
    .unwrap()
}

pub fn rand_layer(rng: &mut ChaCha8Rng, heads: usize, d: usize, d_head: usize) -> LayerParams {
    let hs = (0..heads).map(|_| rand_head(rng, d, d_head)).collect();
    LayerParams::new(hs, rand_vector(rng, d)).unwrap()
}

pub fn rand_model(rng: &mut ChaCha8Rng, layers: usize, heads: usize, d: usize, d_head: usize) -> ModelParams {
    ModelParams::new((0..layers).map(|_| rand_layer(rng, heads, d, d_head)).collect()).unwrap()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / scale.max(f64::MIN_POSITIVE)
}

pub fn m(rows: &[&[f64]]) -> Matrix {
    Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

pub fn v(x: &[f64]) -> Vector {
    Vector::new(x.to_vec()).unwrap()
}

/// One head, d = 2, d_head = 1: alpha = (0.9, 0.1) and ||f|| = (0.01, 1) for
/// inputs (1, 0) and (0, 1), whatever the query.
pub fn cancellation_head() -> HeadParams {
    HeadParams::new(
        Matrix::zeros(2, 1),
        v(&[1.0]),
        m(&[&[9f64.ln()], &[0.0]]),
        v(&[0.0]),
        m(&[&[0.01], &[1.0]]),
        v(&[0.0]),
        m(&[&[1.0, 0.0]]),
    )
    .unwrap()
}

pub fn cancellation_inputs() -> Vec<Vector> {
    vec![v(&[1.0, 0.0]), v(&[0.0, 1.0])]
}

/// Writes `model` plus `activations` into one archive at `path`.
pub fn write_model(path: &Path, model: &ModelParams, activations: Vec<(String, Matrix)>) {
    let mut a: Archive = save_model(model, DType::F64).unwrap();
    for (name, mat) in activations {
        a.push(TensorEntry::from_matrix(name, &mat, DType::F64)).unwrap();
    }
    std::fs::write(path, write_archive(&a).unwrap()).unwrap();
}

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub model: PathBuf,
    pub inputs: PathBuf,
}

impl Fixture {
    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

const SELF_SEQS: &[&[&str]] = &[
    &["[CLS]", "the", "cat", "sat", ".", "[SEP]", "it", ",", "purred", "[SEP]"],
    &["[CLS]", "a", "dog", "[SEP]", "barked", ".", "[SEP]"],
    &["[CLS]", "the", "cat", ",", "a", "dog", "[SEP]", "[SEP]"],
    &["[CLS]", "sat", "[SEP]", "the", "[SEP]"],
];

/// Self-attention corpus over a random 2-layer, 2-head model.
pub fn self_attention_fixture(seed: u64) -> Fixture {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, layers) = (4, 2);
    let model = rand_model(&mut rng, layers, 2, d, 2);
    let dir = tempfile::tempdir().unwrap();
    let mut acts = Vec::new();
    let mut lines = String::new();
    for (s, toks) in SELF_SEQS.iter().enumerate() {
        let names: Vec<String> = (0..layers).map(|l| format!("seq{s}.layer{l}")).collect();
        for name in &names {
            acts.push((name.clone(), rand_matrix(&mut rng, toks.len(), d)));
        }
        let doc = serde_json::json!({ "id": format!("s{s}"), "tokens": toks, "layer_inputs": names });
        lines.push_str(&doc.to_string());
        lines.push('\n');
    }
    let fx = Fixture { model: dir.path().join("model.ntar"), inputs: dir.path().join("inputs.jsonl"), dir };
    write_model(&fx.model, &model, acts);
    std::fs::write(&fx.inputs, lines).unwrap();
    std::fs::write(
        fx.path("freq.txt"),
        "[CLS] 100\n[SEP] 100\n. 80\n, 70\nthe 60\na 50\ncat 20\ndog 20\nsat 10\nit 8\nbarked 3\npurred 1\n",
    )
    .unwrap();
    fx
}

/// Source-target corpus over a random 2-layer, 2-head model: sources end in
/// `</s>`, some words split into subwords, decoder states include the EOS row.
pub fn translation_fixture(seed: u64) -> Fixture {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, layers) = (4, 2);
    let model = rand_model(&mut rng, layers, 2, d, 2);
    let dir = tempfile::tempdir().unwrap();
    let pairs = [
        (vec!["das", "Ha@@", "us", "</s>"], vec![(0, 1), (1, 3)], vec!["the", "house"], vec![(0, 1), (1, 2)]),
        (vec!["ein", "Hund", "</s>"], vec![(0, 1), (1, 2)], vec!["a", "do@@", "g", "."], vec![(0, 1), (1, 3), (3, 4)]),
        (vec!["ja", "</s>"], vec![(0, 1)], vec!["yes"], vec![(0, 1)]),
    ];
    let mut acts = Vec::new();
    let mut lines = String::new();
    for (s, (src, smap, tgt, tmap)) in pairs.iter().enumerate() {
        let enc: Vec<String> = (0..layers).map(|l| format!("pair{s}.enc{l}")).collect();
        let dec: Vec<String> = (0..layers).map(|l| format!("pair{s}.dec{l}")).collect();
        for l in 0..layers {
            acts.push((enc[l].clone(), rand_matrix(&mut rng, src.len(), d)));
            acts.push((dec[l].clone(), rand_matrix(&mut rng, tgt.len() + 1, d)));
        }
        let doc = serde_json::json!({
            "id": format!("p{s}"),
            "tokens": src,
            "target_tokens": tgt,
            "source_map": smap,
            "target_map": tmap,
            "eos_column": src.len() - 1,
            "layer_inputs": enc,
            "decoder_states": dec,
        });
        lines.push_str(&doc.to_string());
        lines.push('\n');
    }
    let fx = Fixture { model: dir.path().join("model.ntar"), inputs: dir.path().join("inputs.jsonl"), dir };
    write_model(&fx.model, &model, acts);
    std::fs::write(&fx.inputs, lines).unwrap();
    std::fs::write(fx.path("gold.txt"), "0-0 1-1\n0-0 1?1 1-2\n0-0\n").unwrap();
    fx
}

pub fn normattn<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_normattn")).args(args).output().unwrap()
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

//! File formats: the NTAR tensor archive, line-delimited JSON input
//! documents, and the attention score dump CSV.
//!
//! NTAR layout (all integers little-endian):
//!
//! ```text
//! "NTAR"  u32 version (=1)  u32 entry_count
//! per entry:
//!   u32 name_len  name (UTF-8)  u8 dtype (0 = f32, 1 = f64)  u8 ndim
//!   ndim x u64 dims  payload (row-major, element size x prod(dims) bytes)
//! ```

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use serde::Deserialize;

use crate::alignment::SubwordMap;
use crate::attention::{HeadParams, LayerParams, ModelParams};
use crate::bert_analysis::{Category, TokenSequence};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

pub const MAGIC: &[u8; 4] = b"NTAR";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: DType,
    pub dims: Vec<u64>,
    pub payload: Vec<u8>,
}

impl TensorEntry {
    /// Encodes `values` in the given dtype; f32 storage rounds.
    pub fn from_f64(name: impl Into<String>, dims: Vec<u64>, values: &[f64], dtype: DType) -> Self {
        let payload = match dtype {
            DType::F32 => values.iter().flat_map(|v| (*v as f32).to_le_bytes()).collect(),
            DType::F64 => values.iter().flat_map(|v| v.to_le_bytes()).collect(),
        };
        TensorEntry { name: name.into(), dtype, dims, payload }
    }

    pub fn from_matrix(name: impl Into<String>, m: &Matrix, dtype: DType) -> Self {
        Self::from_f64(name, vec![m.rows() as u64, m.cols() as u64], m.data(), dtype)
    }

    pub fn from_vector(name: impl Into<String>, v: &[f64], dtype: DType) -> Self {
        Self::from_f64(name, vec![v.len() as u64], v, dtype)
    }

    pub fn num_elements(&self) -> u64 {
        self.dims.iter().product()
    }

    /// Decoded values, widened to f64 (exact for f32).
    pub fn to_f64(&self) -> Vec<f64> {
        match self.dtype {
            DType::F32 => self
                .payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            DType::F64 => self
                .payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        }
    }

    pub fn to_matrix(&self) -> Result<Matrix> {
        match self.dims[..] {
            [r, c] => Matrix::new(r as usize, c as usize, self.to_f64()),
            _ => Err(Error::InconsistentModel {
                entry: self.name.clone(),
                msg: format!("expected 2 dims, got {:?}", self.dims),
            }),
        }
    }

    pub fn to_vector(&self) -> Result<Vector> {
        match self.dims[..] {
            [_] => Vector::new(self.to_f64()),
            _ => Err(Error::InconsistentModel {
                entry: self.name.clone(),
                msg: format!("expected 1 dim, got {:?}", self.dims),
            }),
        }
    }
}

/// Ordered collection of named tensors.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Archive {
    entries: Vec<TensorEntry>,
    index: HashMap<String, usize>,
}

impl Archive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, entry: TensorEntry) -> Result<()> {
        if self.index.contains_key(&entry.name) {
            return Err(Error::DuplicateName(entry.name));
        }
        self.index.insert(entry.name.clone(), self.entries.len());
        self.entries.push(entry);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&TensorEntry> {
        self.index.get(name).map(|&i| &self.entries[i])
    }

    pub fn entries(&self) -> &[TensorEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl FromIterator<TensorEntry> for Result<Archive> {
    fn from_iter<I: IntoIterator<Item = TensorEntry>>(iter: I) -> Self {
        let mut a = Archive::new();
        for e in iter {
            a.push(e)?;
        }
        Ok(a)
    }
}

pub fn write_archive(archive: &Archive) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(archive.entries.len() as u32).to_le_bytes());
    for e in &archive.entries {
        let name_len = u32::try_from(e.name.len())
            .map_err(|_| Error::Invalid(format!("tensor name too long: {} bytes", e.name.len())))?;
        let ndim = u8::try_from(e.dims.len())
            .map_err(|_| Error::Invalid(format!("{:?}: too many dims", e.name)))?;
        let expected = e.num_elements() as usize * e.dtype.size();
        if e.payload.len() != expected {
            return Err(Error::Invalid(format!(
                "{:?}: payload is {} bytes, dims {:?} need {expected}",
                e.name,
                e.payload.len(),
                e.dims
            )));
        }
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.push(e.dtype.code());
        out.push(ndim);
        for d in &e.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.extend_from_slice(&e.payload);
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let remaining = self.bytes.len() - self.pos;
        if n > remaining {
            return Err(Error::Truncated { offset: self.pos, needed: n - remaining });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn read_archive(bytes: &[u8]) -> Result<Archive> {
    let mut cur = Cursor { bytes, pos: 0 };
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic { offset: 0 });
    }
    cur.pos = 4;
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let count = cur.u32()?;
    let mut archive = Archive::new();
    for _ in 0..count {
        let name_len = cur.u32()? as usize;
        let name_at = cur.pos;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| Error::Invalid(format!("tensor name at offset {name_at} is not UTF-8")))?
            .to_string();
        let dtype_at = cur.pos;
        let code = cur.u8()?;
        let dtype = DType::from_code(code).ok_or(Error::UnknownDtype { code, offset: dtype_at })?;
        let ndim = cur.u8()?;
        let dims = (0..ndim).map(|_| cur.u64()).collect::<Result<Vec<_>>>()?;
        let len = dims
            .iter()
            .try_fold(dtype.size() as u64, |acc, d| acc.checked_mul(*d))
            .and_then(|n| usize::try_from(n).ok())
            .ok_or_else(|| Error::Invalid(format!("{name:?}: payload size overflows")))?;
        let payload = cur.take(len)?.to_vec();
        archive.push(TensorEntry { name, dtype, dims, payload })?;
    }
    if cur.pos != bytes.len() {
        return Err(Error::TrailingBytes(bytes.len() - cur.pos));
    }
    Ok(archive)
}

const HEAD_PARAMS: [&str; 7] = ["wq", "bq", "wk", "bk", "wv", "bv", "wo"];

enum ModelKey {
    Head { layer: usize, head: usize, param: &'static str },
    OutputBias { layer: usize },
}

fn parse_index_prefix(s: &str) -> Option<(usize, &str)> {
    let digits = s.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 {
        return None;
    }
    Some((s[..digits].parse().ok()?, &s[digits..]))
}

/// `None` for names outside the `layer...` namespace.
fn parse_model_key(name: &str) -> Option<Result<ModelKey>> {
    let rest = name.strip_prefix("layer")?;
    let bad = || {
        Err(Error::InconsistentModel {
            entry: name.to_string(),
            msg: "expected layer{L}.head{H}.{wq|bq|wk|bk|wv|bv|wo} or layer{L}.bo".into(),
        })
    };
    let Some((layer, rest)) = parse_index_prefix(rest) else {
        return Some(bad());
    };
    if rest == ".bo" {
        return Some(Ok(ModelKey::OutputBias { layer }));
    }
    let Some((head, rest)) = rest.strip_prefix(".head").and_then(parse_index_prefix) else {
        return Some(bad());
    };
    match rest.strip_prefix('.').and_then(|p| HEAD_PARAMS.iter().find(|k| **k == p)) {
        Some(param) => Some(Ok(ModelKey::Head { layer, head, param })),
        None => Some(bad()),
    }
}

/// Build model parameters from `layer{L}.head{H}.{param}` and `layer{L}.bo`
/// entries. Dimensions are inferred from the tensor shapes; missing biases
/// are zero. Entries outside the `layer` namespace are ignored.
pub fn load_model(archive: &Archive) -> Result<ModelParams> {
    let mut heads: BTreeMap<(usize, usize), HashMap<&'static str, &TensorEntry>> = BTreeMap::new();
    let mut output_biases: BTreeMap<usize, &TensorEntry> = BTreeMap::new();
    for e in archive.entries() {
        match parse_model_key(&e.name) {
            None => {}
            Some(Err(err)) => return Err(err),
            Some(Ok(ModelKey::Head { layer, head, param })) => {
                heads.entry((layer, head)).or_default().insert(param, e);
            }
            Some(Ok(ModelKey::OutputBias { layer })) => {
                output_biases.insert(layer, e);
            }
        }
    }
    let num_layers = heads.keys().map(|k| k.0 + 1).max().ok_or(Error::MissingTensor("layer0.head0.wq".into()))?;
    let num_heads = heads.keys().map(|k| k.1 + 1).max().unwrap_or(0);
    if let Some(&l) = output_biases.keys().find(|&&l| l >= num_layers) {
        return Err(Error::InconsistentModel {
            entry: format!("layer{l}.bo"),
            msg: format!("model has only {num_layers} layers"),
        });
    }

    let (d, d_head) = {
        let wq = heads
            .get(&(0, 0))
            .and_then(|m| m.get("wq"))
            .ok_or(Error::MissingTensor("layer0.head0.wq".into()))?;
        match wq.dims[..] {
            [d, dh] => (d as usize, dh as usize),
            _ => {
                return Err(Error::InconsistentModel {
                    entry: wq.name.clone(),
                    msg: format!("expected 2 dims, got {:?}", wq.dims),
                })
            }
        }
    };

    let expect = |e: &TensorEntry, dims: &[usize]| -> Result<()> {
        if e.dims.len() != dims.len() || e.dims.iter().zip(dims).any(|(a, b)| *a as usize != *b) {
            return Err(Error::InconsistentModel {
                entry: e.name.clone(),
                msg: format!("expected dims {dims:?}, got {:?}", e.dims),
            });
        }
        Ok(())
    };

    let mut layers = Vec::with_capacity(num_layers);
    for l in 0..num_layers {
        let mut layer_heads = Vec::with_capacity(num_heads);
        for h in 0..num_heads {
            let name = |p: &str| format!("layer{l}.head{h}.{p}");
            let params = heads.get(&(l, h)).ok_or_else(|| Error::MissingTensor(name("wq")))?;
            let weight = |p: &'static str, dims: [usize; 2]| -> Result<Matrix> {
                let e = params.get(p).ok_or_else(|| Error::MissingTensor(name(p)))?;
                expect(e, &dims)?;
                e.to_matrix()
            };
            let bias = |p: &'static str| -> Result<Vector> {
                match params.get(p) {
                    Some(e) => {
                        expect(e, &[d_head])?;
                        e.to_vector()
                    }
                    None => Ok(Vector::zeros(d_head)),
                }
            };
            layer_heads.push(HeadParams::new(
                weight("wq", [d, d_head])?,
                bias("bq")?,
                weight("wk", [d, d_head])?,
                bias("bk")?,
                weight("wv", [d, d_head])?,
                bias("bv")?,
                weight("wo", [d_head, d])?,
            )?);
        }
        let bo = match output_biases.get(&l) {
            Some(e) => {
                expect(e, &[d])?;
                e.to_vector()?
            }
            None => Vector::zeros(d),
        };
        layers.push(LayerParams::new(layer_heads, bo)?);
    }
    ModelParams::new(layers)
}

/// Inverse of [`load_model`]; every bias is written out.
pub fn save_model(model: &ModelParams, dtype: DType) -> Result<Archive> {
    let mut a = Archive::new();
    for (l, layer) in model.layers().iter().enumerate() {
        for (h, p) in layer.heads().iter().enumerate() {
            let n = |s: &str| format!("layer{l}.head{h}.{s}");
            a.push(TensorEntry::from_matrix(n("wq"), p.wq(), dtype))?;
            a.push(TensorEntry::from_vector(n("bq"), p.bq(), dtype))?;
            a.push(TensorEntry::from_matrix(n("wk"), p.wk(), dtype))?;
            a.push(TensorEntry::from_vector(n("bk"), p.bk(), dtype))?;
            a.push(TensorEntry::from_matrix(n("wv"), p.wv(), dtype))?;
            a.push(TensorEntry::from_vector(n("bv"), p.bv(), dtype))?;
            a.push(TensorEntry::from_matrix(n("wo"), p.wo(), dtype))?;
        }
        a.push(TensorEntry::from_vector(format!("layer{l}.bo"), layer.bo(), dtype))?;
    }
    Ok(a)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDocument {
    id: Option<String>,
    tokens: Vec<String>,
    categories: Option<Vec<Category>>,
    #[serde(default)]
    layer_inputs: Vec<String>,
    #[serde(default)]
    decoder_states: Vec<String>,
    target_tokens: Option<Vec<String>>,
    source_map: Option<Vec<(usize, usize)>>,
    target_map: Option<Vec<(usize, usize)>>,
    eos_column: Option<usize>,
}

/// One analysed sequence (or sentence pair) with its resolved activations.
///
/// `tokens` are the attended-to tokens: the whole sequence for
/// self-attention, the source side for source-target attention.
/// `layer_inputs[l]` holds their states entering layer `l` (`tokens x d`);
/// `decoder_states[l]`, when present, holds the query-side states.
#[derive(Debug, Clone, PartialEq)]
pub struct InputDocument {
    pub id: String,
    pub sequence: TokenSequence,
    pub target_tokens: Option<Vec<String>>,
    pub source_map: Option<SubwordMap>,
    pub target_map: Option<SubwordMap>,
    pub eos_column: Option<usize>,
    pub layer_inputs: Vec<Matrix>,
    pub decoder_states: Vec<Matrix>,
}

impl InputDocument {
    /// Checks activation widths against the model width.
    pub fn check_width(&self, d: usize) -> Result<()> {
        for m in self.layer_inputs.iter().chain(&self.decoder_states) {
            if m.cols() != d {
                return Err(Error::Invalid(format!(
                    "sequence {:?}: activation width {} differs from model d = {d}",
                    self.id,
                    m.cols()
                )));
            }
        }
        Ok(())
    }

    pub fn target_len(&self) -> Option<usize> {
        self.target_tokens.as_ref().map(Vec::len)
    }
}

fn to_map(ranges: Vec<(usize, usize)>) -> Result<SubwordMap> {
    SubwordMap::new(ranges.into_iter().map(|(s, e)| s..e).collect())
}

fn resolve(
    archive: Option<&Archive>,
    id: &str,
    names: &[String],
) -> Result<Vec<Matrix>> {
    names
        .iter()
        .map(|name| {
            let entry = archive.and_then(|a| a.get(name)).ok_or_else(|| Error::DanglingReference {
                sequence: id.to_string(),
                entry: name.clone(),
            })?;
            entry.to_matrix()
        })
        .collect()
}

fn parse_document(raw: RawDocument, line: usize, archive: Option<&Archive>) -> Result<InputDocument> {
    let invalid = |msg: String| Error::Parse { line, msg };
    let id = raw.id.unwrap_or_else(|| format!("line{line}"));
    let n = raw.tokens.len();
    if n == 0 {
        return Err(invalid("tokens must be nonempty".into()));
    }
    let sequence = match raw.categories {
        Some(c) if c.len() != n => {
            return Err(invalid(format!("{} categories for {n} tokens", c.len())));
        }
        Some(c) => TokenSequence::new(raw.tokens, c)?,
        None => TokenSequence::from_tokens(raw.tokens),
    };
    if let Some(eos) = raw.eos_column {
        if eos >= n {
            return Err(invalid(format!("eos_column {eos} out of range for {n} tokens")));
        }
    }
    let source_map = raw.source_map.map(to_map).transpose().map_err(|e| invalid(e.to_string()))?;
    if let Some(m) = &source_map {
        let expected = n - usize::from(raw.eos_column.is_some());
        if m.num_subwords() != expected {
            return Err(invalid(format!(
                "source_map covers {} tokens, expected {expected}",
                m.num_subwords()
            )));
        }
    }
    let target_map = raw.target_map.map(to_map).transpose().map_err(|e| invalid(e.to_string()))?;
    match (&target_map, &raw.target_tokens) {
        (Some(m), Some(t)) if m.num_subwords() != t.len() => {
            return Err(invalid(format!(
                "target_map covers {} tokens, target has {}",
                m.num_subwords(),
                t.len()
            )));
        }
        (Some(_), None) => return Err(invalid("target_map given without target_tokens".into())),
        _ => {}
    }

    let layer_inputs = resolve(archive, &id, &raw.layer_inputs)?;
    for (l, m) in layer_inputs.iter().enumerate() {
        if m.rows() != n {
            return Err(invalid(format!("layer_inputs[{l}] has {} rows for {n} tokens", m.rows())));
        }
    }
    let decoder_states = resolve(archive, &id, &raw.decoder_states)?;
    if let Some(t) = &raw.target_tokens {
        for (l, m) in decoder_states.iter().enumerate() {
            if m.rows() != t.len() && m.rows() != t.len() + 1 {
                return Err(invalid(format!(
                    "decoder_states[{l}] has {} rows for {} target tokens",
                    m.rows(),
                    t.len()
                )));
            }
        }
    }
    let mut widths = layer_inputs.iter().chain(&decoder_states).map(Matrix::cols);
    if let Some(w) = widths.next() {
        if let Some(other) = widths.find(|&c| c != w) {
            return Err(invalid(format!("activation widths disagree ({w} vs {other})")));
        }
    }

    Ok(InputDocument {
        id,
        sequence,
        target_tokens: raw.target_tokens,
        source_map,
        target_map,
        eos_column: raw.eos_column,
        layer_inputs,
        decoder_states,
    })
}

/// Parses line-delimited JSON documents, resolving activation references
/// against `archive`. Blank lines are skipped; errors carry 1-based line
/// numbers.
pub fn read_inputs(text: &str, archive: Option<&Archive>) -> Result<Vec<InputDocument>> {
    let mut docs = Vec::new();
    let mut ids = HashSet::new();
    for (idx, l) in text.lines().enumerate() {
        if l.trim().is_empty() {
            continue;
        }
        let line = idx + 1;
        let raw: RawDocument = serde_json::from_str(l).map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        let doc = parse_document(raw, line, archive)?;
        if !ids.insert(doc.id.clone()) {
            return Err(Error::Parse { line, msg: format!("duplicate id {:?}", doc.id) });
        }
        docs.push(doc);
    }
    Ok(docs)
}

pub const SCORE_DUMP_HEADER: &str = "sentence,layer,head,target_pos,source_pos,weight,weighted_norm";

/// Which head a score row belongs to; `All` rows hold layer-integrated scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum HeadSel {
    Head(usize),
    All,
}

impl std::fmt::Display for HeadSel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HeadSel::Head(h) => write!(f, "{h}"),
            HeadSel::All => f.write_str("all"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub sentence: String,
    pub layer: usize,
    pub head: HeadSel,
    pub target_pos: usize,
    pub source_pos: usize,
    pub weight: f64,
    pub weighted_norm: f64,
}

pub fn write_score_dump(rows: &[ScoreRow]) -> String {
    let mut out = String::with_capacity(rows.len() * 48 + SCORE_DUMP_HEADER.len() + 1);
    out.push_str(SCORE_DUMP_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.sentence, r.layer, r.head, r.target_pos, r.source_pos, r.weight, r.weighted_norm
        );
    }
    out
}

pub fn read_score_dump(text: &str) -> Result<Vec<ScoreRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == SCORE_DUMP_HEADER => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected header {SCORE_DUMP_HEADER:?}"),
            })
        }
    }
    let mut rows = Vec::new();
    for (idx, l) in lines {
        if l.trim().is_empty() {
            continue;
        }
        let line = idx + 1;
        let bad = |msg: String| Error::Parse { line, msg };
        let f: Vec<&str> = l.trim_end().split(',').collect();
        if f.len() != 7 {
            return Err(bad(format!("expected 7 fields, got {}", f.len())));
        }
        let int = |s: &str, what: &str| s.parse::<usize>().map_err(|_| bad(format!("bad {what} {s:?}")));
        let float = |s: &str, what: &str| -> Result<f64> {
            match s.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(bad(format!("bad {what} {s:?}"))),
            }
        };
        let head = if f[2] == "all" { HeadSel::All } else { HeadSel::Head(int(f[2], "head")?) };
        rows.push(ScoreRow {
            sentence: f[0].to_string(),
            layer: int(f[1], "layer")?,
            head,
            target_pos: int(f[3], "target_pos")?,
            source_pos: int(f[4], "source_pos")?,
            weight: float(f[5], "weight")?,
            weighted_norm: float(f[6], "weighted_norm")?,
        });
    }
    Ok(rows)
}

//! Word alignment from source-target attention and its evaluation by
//! alignment error rate.
//!
//! A [`ScoreMatrix`] holds one row per decoder step under force decoding and
//! one column per source token. With `T` target tokens there are `T` rows,
//! or `T + 1` when the step that generates the end-of-sentence token is
//! included. Row `r` is the step that outputs target token `r` while reading
//! target token `r - 1` as input.
//!
//! Two extraction settings are supported:
//! - AWO (alignment with output): target token `i` takes the argmax of row `i`.
//! - AWI (alignment with input): target token `i` takes the argmax of row
//!   `i + 1`, the step where it is the decoder input.
//!
//! An argmax landing on the end-of-sentence source column means "unaligned".

use std::collections::BTreeSet;
use std::fmt;
use std::ops::{Add, AddAssign, Range};

use crate::attention::HeadAttention;
use crate::error::{Error, Result};
use crate::linalg::{euclid_norm, Matrix, Vector};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScoreMode {
    /// Attention weight `alpha`.
    Weight,
    /// Norm of the weighted transformed vector.
    Norm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Setting {
    Awi,
    Awo,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    scores: Matrix,
    target_len: usize,
    eos_column: Option<usize>,
}

impl ScoreMatrix {
    pub fn new(scores: Matrix, target_len: usize, eos_column: Option<usize>) -> Result<Self> {
        if scores.rows() != target_len && scores.rows() != target_len + 1 {
            return Err(Error::shape(
                "score matrix",
                format!("{target_len} target tokens"),
                format!("{} rows", scores.rows()),
            ));
        }
        if scores.cols() == 0 {
            return Err(Error::Empty("score matrix"));
        }
        if let Some(eos) = eos_column {
            if eos >= scores.cols() {
                return Err(Error::IndexOutOfRange { what: "eos column", index: eos, len: scores.cols() });
            }
        }
        if scores.data().iter().any(|v| *v < 0.0) {
            return Err(Error::Invalid("score matrix entries must be nonnegative".into()));
        }
        Ok(ScoreMatrix { scores, target_len, eos_column })
    }

    pub fn scores(&self) -> &Matrix {
        &self.scores
    }

    pub fn target_len(&self) -> usize {
        self.target_len
    }

    pub fn eos_column(&self) -> Option<usize> {
        self.eos_column
    }

    pub fn has_eos_row(&self) -> bool {
        self.scores.rows() > self.target_len
    }

    fn argmax(&self, row: usize) -> usize {
        let mut best = 0;
        for (j, &v) in self.scores.row(row).iter().enumerate() {
            // strict comparison keeps the lowest index on ties
            if v > self.scores.get(row, best) {
                best = j;
            }
        }
        best
    }
}

/// Word-to-subword grouping for one side of a sentence pair: word `w` covers
/// the half-open subword range `ranges[w]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubwordMap {
    ranges: Vec<Range<usize>>,
}

impl SubwordMap {
    /// Ranges must be nonempty, ordered and contiguous starting at 0.
    pub fn new(ranges: Vec<Range<usize>>) -> Result<Self> {
        let mut next = 0;
        for (w, r) in ranges.iter().enumerate() {
            if r.start != next || r.end <= r.start {
                return Err(Error::Invalid(format!(
                    "subword map: word {w} covers {}..{}, expected a nonempty range starting at {next}",
                    r.start, r.end
                )));
            }
            next = r.end;
        }
        Ok(SubwordMap { ranges })
    }

    pub fn identity(n: usize) -> Self {
        SubwordMap { ranges: (0..n).map(|i| i..i + 1).collect() }
    }

    pub fn num_words(&self) -> usize {
        self.ranges.len()
    }

    pub fn num_subwords(&self) -> usize {
        self.ranges.last().map_or(0, |r| r.end)
    }

    pub fn ranges(&self) -> &[Range<usize>] {
        &self.ranges
    }

    pub fn word_of(&self, subword: usize) -> Option<usize> {
        self.ranges.iter().position(|r| r.contains(&subword))
    }
}

/// Set of `(source, target)` links.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AlignmentSet(BTreeSet<(usize, usize)>);

impl AlignmentSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, source: usize, target: usize) -> bool {
        self.0.insert((source, target))
    }

    pub fn contains(&self, source: usize, target: usize) -> bool {
        self.0.contains(&(source, target))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &(usize, usize)> {
        self.0.iter()
    }

    pub fn intersection_len(&self, other: &AlignmentSet) -> usize {
        self.0.intersection(&other.0).count()
    }

    pub fn is_subset(&self, other: &AlignmentSet) -> bool {
        self.0.is_subset(&other.0)
    }

    /// Parses one line of space-separated `s-t` links.
    pub fn parse_line(line: &str) -> std::result::Result<Self, String> {
        let mut set = AlignmentSet::new();
        for item in line.split_whitespace() {
            let (s, t) = item.split_once('-').ok_or_else(|| format!("bad link {item:?}"))?;
            set.insert(parse_index(s, item)?, parse_index(t, item)?);
        }
        Ok(set)
    }
}

impl FromIterator<(usize, usize)> for AlignmentSet {
    fn from_iter<I: IntoIterator<Item = (usize, usize)>>(iter: I) -> Self {
        AlignmentSet(iter.into_iter().collect())
    }
}

/// Pharaoh format: `s-t` links separated by single spaces.
impl fmt::Display for AlignmentSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, (s, t)) in self.0.iter().enumerate() {
            if k > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{s}-{t}")?;
        }
        Ok(())
    }
}

fn parse_index(s: &str, item: &str) -> std::result::Result<usize, String> {
    s.parse().map_err(|_| format!("bad index in link {item:?}"))
}

/// Reference alignment; `possible` always contains `sure`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GoldAlignment {
    sure: AlignmentSet,
    possible: AlignmentSet,
}

impl GoldAlignment {
    pub fn new(sure: AlignmentSet, possible: AlignmentSet) -> Self {
        let possible = AlignmentSet(possible.0.union(&sure.0).copied().collect());
        GoldAlignment { sure, possible }
    }

    pub fn sure(&self) -> &AlignmentSet {
        &self.sure
    }

    pub fn possible(&self) -> &AlignmentSet {
        &self.possible
    }

    /// Parses `s-t` (sure) and `s?t` (possible) items. With `one_based`,
    /// indices are shifted down by one.
    pub fn parse_line(line: &str, one_based: bool) -> std::result::Result<Self, String> {
        let (mut sure, mut possible) = (AlignmentSet::new(), AlignmentSet::new());
        for item in line.split_whitespace() {
            let (s, t, is_sure) = if let Some((s, t)) = item.split_once('-') {
                (s, t, true)
            } else if let Some((s, t)) = item.split_once('?') {
                (s, t, false)
            } else {
                return Err(format!("bad link {item:?}"));
            };
            let (mut s, mut t) = (parse_index(s, item)?, parse_index(t, item)?);
            if one_based {
                if s == 0 || t == 0 {
                    return Err(format!("index 0 in 1-based link {item:?}"));
                }
                s -= 1;
                t -= 1;
            }
            if is_sure {
                sure.insert(s, t);
            } else {
                possible.insert(s, t);
            }
        }
        Ok(GoldAlignment::new(sure, possible))
    }
}

/// One gold alignment per line; blank lines have no links.
pub fn parse_gold(text: &str, one_based: bool) -> Result<Vec<GoldAlignment>> {
    text.lines()
        .enumerate()
        .map(|(i, l)| {
            GoldAlignment::parse_line(l, one_based).map_err(|msg| Error::Parse { line: i + 1, msg })
        })
        .collect()
}

/// One predicted alignment per line in Pharaoh format.
pub fn parse_alignments(text: &str) -> Result<Vec<AlignmentSet>> {
    text.lines()
        .enumerate()
        .map(|(i, l)| AlignmentSet::parse_line(l).map_err(|msg| Error::Parse { line: i + 1, msg }))
        .collect()
}

/// Extracted links plus the target indices whose AWI row was missing and
/// fell back to the AWO row.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Extraction {
    pub links: AlignmentSet,
    pub fallbacks: Vec<usize>,
}

/// Row `i` argmax for each target token `i`.
pub fn extract_awo(scores: &ScoreMatrix) -> Extraction {
    let mut links = AlignmentSet::new();
    for i in 0..scores.target_len {
        let j = scores.argmax(i);
        if Some(j) != scores.eos_column {
            links.insert(j, i);
        }
    }
    Extraction { links, fallbacks: Vec::new() }
}

/// Re-index rows for the AWI setting: row `i` of the result is row `i + 1`
/// of the input. When the end-of-sentence step is absent the final target
/// token reuses its own row and is reported as a fallback.
pub fn awi_rows(scores: &ScoreMatrix) -> Result<(ScoreMatrix, Vec<usize>)> {
    let rows = scores.scores.rows();
    if rows < 2 {
        return Err(Error::InsufficientRows { rows, need: 2 });
    }
    let t = scores.target_len;
    let cols = scores.scores.cols();
    let mut data = Vec::with_capacity(t * cols);
    let mut fallbacks = Vec::new();
    for i in 0..t {
        let src = if i + 1 < rows {
            i + 1
        } else {
            fallbacks.push(i);
            i
        };
        data.extend_from_slice(scores.scores.row(src));
    }
    let shifted = ScoreMatrix::new(Matrix::new(t, cols, data)?, t, scores.eos_column)?;
    Ok((shifted, fallbacks))
}

/// Row `i + 1` argmax for each target token `i`.
pub fn extract_awi(scores: &ScoreMatrix) -> Result<Extraction> {
    let (shifted, fallbacks) = awi_rows(scores)?;
    if !fallbacks.is_empty() {
        log::warn!("AWI: no end-of-sentence row; target {fallbacks:?} use the AWO row");
    }
    Ok(Extraction { links: extract_awo(&shifted).links, fallbacks })
}

/// Single-head score matrix (queries by keys).
pub fn head_scores(att: &HeadAttention, mode: ScoreMode) -> Matrix {
    match mode {
        ScoreMode::Weight => att.weights().clone(),
        ScoreMode::Norm => att.weighted_norms(),
    }
}

/// Integrate the heads of one layer: summed weights, or the norm of the
/// summed contribution vectors.
pub fn layer_scores(heads: &[HeadAttention], mode: ScoreMode) -> Result<Matrix> {
    let first = heads.first().ok_or(Error::Empty("layer_scores heads"))?;
    let (m, n) = first.weights().shape();
    let d = first.transformed().first().map_or(0, Vector::dim);
    for h in heads {
        if h.weights().shape() != (m, n) || h.transformed().iter().any(|f| f.dim() != d) {
            return Err(Error::shape("layer_scores", first.weights(), h.weights()));
        }
    }
    let mut out = Matrix::zeros(m, n);
    match mode {
        ScoreMode::Weight => {
            for i in 0..m {
                for j in 0..n {
                    out.set(i, j, heads.iter().map(|h| h.weights().get(i, j)).sum());
                }
            }
        }
        ScoreMode::Norm => {
            let mut acc = vec![0.0; d];
            for i in 0..m {
                for j in 0..n {
                    acc.iter_mut().for_each(|a| *a = 0.0);
                    for h in heads {
                        let a = h.weights().get(i, j);
                        for (s, f) in acc.iter_mut().zip(h.transformed()[j].iter()) {
                            *s += a * f;
                        }
                    }
                    out.set(i, j, euclid_norm(&acc));
                }
            }
        }
    }
    Ok(out)
}

/// Collapse subword scores to word scores: average the rows of each target
/// word, then sum the columns of each source word. The end-of-sentence row
/// and column are carried over unmerged, the column becoming the last one.
pub fn merge_subwords(
    scores: &ScoreMatrix,
    src_map: &SubwordMap,
    tgt_map: &SubwordMap,
) -> Result<ScoreMatrix> {
    let m = &scores.scores;
    let src_cols: Vec<usize> = (0..m.cols()).filter(|&j| Some(j) != scores.eos_column).collect();
    if src_map.num_subwords() != src_cols.len() {
        return Err(Error::shape(
            "merge_subwords",
            format!("{} source subwords in map", src_map.num_subwords()),
            format!("{} source columns", src_cols.len()),
        ));
    }
    if tgt_map.num_subwords() != scores.target_len {
        return Err(Error::shape(
            "merge_subwords",
            format!("{} target subwords in map", tgt_map.num_subwords()),
            format!("{} target tokens", scores.target_len),
        ));
    }

    let mut averaged: Vec<Vec<f64>> = Vec::with_capacity(tgt_map.num_words() + 1);
    for r in &tgt_map.ranges {
        let mut row = vec![0.0; m.cols()];
        for i in r.clone() {
            for (acc, v) in row.iter_mut().zip(m.row(i)) {
                *acc += v;
            }
        }
        let len = r.len() as f64;
        row.iter_mut().for_each(|v| *v /= len);
        averaged.push(row);
    }
    if scores.has_eos_row() {
        averaged.push(m.row(scores.target_len).to_vec());
    }
    let out_cols = src_map.num_words() + usize::from(scores.eos_column.is_some());
    let mut data = Vec::with_capacity(averaged.len() * out_cols);
    for row in &averaged {
        for r in &src_map.ranges {
            data.push(r.clone().map(|k| row[src_cols[k]]).sum());
        }
        if let Some(eos) = scores.eos_column {
            data.push(row[eos]);
        }
    }
    let merged = Matrix::new(averaged.len(), out_cols, data)?;
    ScoreMatrix::new(
        merged,
        tgt_map.num_words(),
        scores.eos_column.map(|_| src_map.num_words()),
    )
}

/// Word-level alignment of one sentence pair: row selection for the setting
/// at subword level, then subword merging, then one argmax per target word.
/// Fallbacks are reported as target word indices.
pub fn align_sentence(
    scores: &ScoreMatrix,
    src_map: &SubwordMap,
    tgt_map: &SubwordMap,
    setting: Setting,
) -> Result<Extraction> {
    match setting {
        Setting::Awo => Ok(extract_awo(&merge_subwords(scores, src_map, tgt_map)?)),
        Setting::Awi => {
            let (shifted, fallbacks) = awi_rows(scores)?;
            let mut words: Vec<usize> = fallbacks.iter().filter_map(|&i| tgt_map.word_of(i)).collect();
            words.dedup();
            let links = extract_awo(&merge_subwords(&shifted, src_map, tgt_map)?).links;
            Ok(Extraction { links, fallbacks: words })
        }
    }
}

/// Link counts for AER; additive across sentences.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AerCounts {
    pub predicted: usize,
    pub sure: usize,
    pub predicted_sure: usize,
    pub predicted_possible: usize,
}

impl AerCounts {
    pub fn of(pred: &AlignmentSet, gold: &GoldAlignment) -> Self {
        AerCounts {
            predicted: pred.len(),
            sure: gold.sure.len(),
            predicted_sure: pred.intersection_len(&gold.sure),
            predicted_possible: pred.intersection_len(&gold.possible),
        }
    }

    /// `1 - (|A & S| + |A & P|) / (|A| + |S|)`; zero when both sets are empty.
    pub fn aer(&self) -> f64 {
        let denom = self.predicted + self.sure;
        if denom == 0 {
            return 0.0;
        }
        1.0 - (self.predicted_sure + self.predicted_possible) as f64 / denom as f64
    }
}

impl Add for AerCounts {
    type Output = AerCounts;

    fn add(self, o: AerCounts) -> AerCounts {
        AerCounts {
            predicted: self.predicted + o.predicted,
            sure: self.sure + o.sure,
            predicted_sure: self.predicted_sure + o.predicted_sure,
            predicted_possible: self.predicted_possible + o.predicted_possible,
        }
    }
}

impl AddAssign for AerCounts {
    fn add_assign(&mut self, o: AerCounts) {
        *self = *self + o;
    }
}

impl std::iter::Sum for AerCounts {
    fn sum<I: Iterator<Item = AerCounts>>(iter: I) -> Self {
        iter.fold(AerCounts::default(), Add::add)
    }
}

pub fn aer(pred: &AlignmentSet, gold: &GoldAlignment) -> f64 {
    AerCounts::of(pred, gold).aer()
}

/// Corpus AER from summed counts.
pub fn corpus_aer(preds: &[AlignmentSet], golds: &[GoldAlignment]) -> Result<f64> {
    if preds.len() != golds.len() {
        return Err(Error::LengthMismatch { left: preds.len(), right: golds.len() });
    }
    Ok(preds.iter().zip(golds).map(|(p, g)| AerCounts::of(p, g)).sum::<AerCounts>().aer())
}

/// `(spearman, pearson)` between per-head AER and per-head mean weighted norm.
pub fn correlate_head_quality(per_head_aer: &[f64], per_head_mean_norm: &[f64]) -> Result<(f64, f64)> {
    Ok((
        stats::spearman(per_head_aer, per_head_mean_norm)?,
        stats::pearson(per_head_aer, per_head_mean_norm)?,
    ))
}

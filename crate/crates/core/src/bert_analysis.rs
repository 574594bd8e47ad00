//! Corpus-level aggregation of self-attention weights and norms by token
//! category and by word frequency.
//!
//! Indexing follows the corpus: `p` is the sequence, `q` the attended token
//! within it, `l` the layer and `h` the head. For each `(p, l, h)` the trace
//! stores the full weight matrix (queries by keys) and `||f(x_q)||`.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attention::{HeadAttention, ModelParams};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Category {
    Cls,
    Sep,
    Punct,
    Other,
}

impl Category {
    pub const ALL: [Category; 4] = [Category::Cls, Category::Sep, Category::Punct, Category::Other];

    /// `[CLS]`, `[SEP]`, `.` and `,` get their own category; everything
    /// else, including other punctuation, is `Other`.
    pub fn of_token(token: &str) -> Category {
        match token {
            "[CLS]" => Category::Cls,
            "[SEP]" => Category::Sep,
            "." | "," => Category::Punct,
            _ => Category::Other,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Cls => "CLS",
            Category::Sep => "SEP",
            Category::Punct => "PUNCT",
            Category::Other => "OTHER",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "CLS" => Ok(Category::Cls),
            "SEP" => Ok(Category::Sep),
            "PUNCT" => Ok(Category::Punct),
            "OTHER" => Ok(Category::Other),
            _ => Err(Error::Invalid(format!("unknown category {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    tokens: Vec<String>,
    categories: Vec<Category>,
}

impl TokenSequence {
    pub fn new(tokens: Vec<String>, categories: Vec<Category>) -> Result<Self> {
        if tokens.len() != categories.len() {
            return Err(Error::LengthMismatch {
                left: tokens.len(),
                right: categories.len(),
            });
        }
        Ok(TokenSequence { tokens, categories })
    }

    /// Categories derived from the token strings.
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let categories = tokens.iter().map(|t| Category::of_token(t)).collect();
        TokenSequence { tokens, categories }
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Word frequency ranks; rank 1 is the most frequent word and equal counts
/// share their average rank.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyTable {
    entries: HashMap<String, (f64, u64)>,
}

impl FrequencyTable {
    pub fn from_counts<I, S>(counts: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, u64)>,
        S: Into<String>,
    {
        let pairs: Vec<(String, u64)> = counts.into_iter().map(|(t, c)| (t.into(), c)).collect();
        let negated: Vec<f64> = pairs.iter().map(|(_, c)| -(*c as f64)).collect();
        let ranks = stats::fractional_ranks(&negated);
        let mut entries = HashMap::with_capacity(pairs.len());
        for ((token, count), rank) in pairs.into_iter().zip(ranks) {
            if entries.insert(token.clone(), (rank, count)).is_some() {
                return Err(Error::Invalid(format!("duplicate token {token:?} in frequency table")));
            }
        }
        Ok(FrequencyTable { entries })
    }

    /// Parses `token<whitespace>count` lines; blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut counts = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let (token, count) = line
                .trim_end()
                .rsplit_once(char::is_whitespace)
                .ok_or_else(|| Error::Parse {
                    line: idx + 1,
                    msg: "expected `token count`".into(),
                })?;
            let count: u64 = count.parse().map_err(|_| Error::Parse {
                line: idx + 1,
                msg: format!("bad count {count:?}"),
            })?;
            counts.push((token.trim_end().to_string(), count));
        }
        FrequencyTable::from_counts(counts)
    }

    pub fn rank(&self, token: &str) -> Option<f64> {
        self.entries.get(token).map(|e| e.0)
    }

    pub fn frequency(&self, token: &str) -> Option<u64> {
        self.entries.get(token).map(|e| e.1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadTrace {
    weights: Matrix,
    f_norms: Vec<f64>,
}

impl HeadTrace {
    pub fn new(weights: Matrix, f_norms: Vec<f64>) -> Result<Self> {
        if weights.cols() != f_norms.len() {
            return Err(Error::shape("head trace", &weights, format!("{} f-norms", f_norms.len())));
        }
        if f_norms.iter().any(|n| !n.is_finite() || *n < 0.0) {
            return Err(Error::Invalid("f-norms must be finite and nonnegative".into()));
        }
        Ok(HeadTrace { weights, f_norms })
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn f_norms(&self) -> &[f64] {
        &self.f_norms
    }
}

impl From<&HeadAttention> for HeadTrace {
    fn from(att: &HeadAttention) -> Self {
        HeadTrace {
            weights: att.weights().clone(),
            f_norms: att.f_norms().to_vec(),
        }
    }
}

/// All heads of all layers for one sequence, indexed `[layer][head]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceTrace {
    layers: Vec<Vec<HeadTrace>>,
}

impl SequenceTrace {
    pub fn new(layers: Vec<Vec<HeadTrace>>) -> Result<Self> {
        let keys = layers
            .first()
            .and_then(|l| l.first())
            .map(|h| h.f_norms.len())
            .ok_or(Error::Empty("sequence trace"))?;
        for layer in &layers {
            if layer.iter().any(|h| h.f_norms.len() != keys) {
                return Err(Error::Invalid("heads disagree on sequence length".into()));
            }
        }
        Ok(SequenceTrace { layers })
    }

    /// Self-attention over each layer's input states (`layer_inputs[l]` is
    /// `tokens x d`).
    pub fn self_attention(model: &ModelParams, layer_inputs: &[Matrix]) -> Result<Self> {
        if layer_inputs.len() != model.num_layers() {
            return Err(Error::LengthMismatch {
                left: model.num_layers(),
                right: layer_inputs.len(),
            });
        }
        let layers = model
            .layers()
            .iter()
            .zip(layer_inputs)
            .map(|(lp, states)| {
                let xs = states.row_vectors();
                lp.heads()
                    .iter()
                    .map(|p| HeadAttention::compute(&xs, &xs, p).map(|a| HeadTrace::from(&a)))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        SequenceTrace::new(layers)
    }

    pub fn len(&self) -> usize {
        self.layers[0][0].f_norms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn head(&self, l: usize, h: usize) -> Option<&HeadTrace> {
        self.layers.get(l)?.get(h)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusRecords {
    sequences: Vec<SequenceTrace>,
    num_layers: usize,
    num_heads: usize,
}

impl CorpusRecords {
    pub fn new(sequences: Vec<SequenceTrace>) -> Result<Self> {
        let first = sequences.first().ok_or(Error::Empty("corpus"))?;
        let num_layers = first.layers.len();
        let num_heads = first.layers[0].len();
        for s in &sequences {
            if s.layers.len() != num_layers || s.layers.iter().any(|l| l.len() != num_heads) {
                return Err(Error::Invalid("sequences disagree on layer/head counts".into()));
            }
        }
        Ok(CorpusRecords { sequences, num_layers, num_heads })
    }

    pub fn sequences(&self) -> &[SequenceTrace] {
        &self.sequences
    }

    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    pub fn num_heads(&self) -> usize {
        self.num_heads
    }

    fn head(&self, p: usize, l: usize, h: usize) -> Result<&HeadTrace> {
        let seq = self.sequences.get(p).ok_or(Error::IndexOutOfRange {
            what: "sequence",
            index: p,
            len: self.sequences.len(),
        })?;
        if l >= self.num_layers {
            return Err(Error::IndexOutOfRange { what: "layer", index: l, len: self.num_layers });
        }
        if h >= self.num_heads {
            return Err(Error::IndexOutOfRange { what: "head", index: h, len: self.num_heads });
        }
        Ok(&seq.layers[l][h])
    }

    fn head_at(&self, p: usize, q: usize, l: usize, h: usize) -> Result<&HeadTrace> {
        let head = self.head(p, l, h)?;
        if q >= head.f_norms.len() {
            return Err(Error::IndexOutOfRange { what: "token", index: q, len: head.f_norms.len() });
        }
        Ok(head)
    }

    /// Mean over queries of the weight each query assigns to token `q`.
    pub fn weight_fn(&self, p: usize, q: usize, l: usize, h: usize) -> Result<f64> {
        let head = self.head_at(p, q, l, h)?;
        let w = &head.weights;
        Ok((0..w.rows()).map(|i| w.get(i, q)).sum::<f64>() / w.rows() as f64)
    }

    /// `||f(x_q)||`.
    pub fn norm_fn(&self, p: usize, q: usize, l: usize, h: usize) -> Result<f64> {
        Ok(self.head_at(p, q, l, h)?.f_norms[q])
    }

    /// Mean over queries of `||alpha_iq f(x_q)||`.
    pub fn wnorm_fn(&self, p: usize, q: usize, l: usize, h: usize) -> Result<f64> {
        let head = self.head_at(p, q, l, h)?;
        let w = &head.weights;
        let f = head.f_norms[q];
        Ok((0..w.rows()).map(|i| w.get(i, q) * f).sum::<f64>() / w.rows() as f64)
    }
}

fn check_alignment(records: &CorpusRecords, seqs: &[TokenSequence]) -> Result<()> {
    if records.sequences.len() != seqs.len() {
        return Err(Error::LengthMismatch {
            left: records.sequences.len(),
            right: seqs.len(),
        });
    }
    for (trace, seq) in records.sequences.iter().zip(seqs) {
        if trace.len() != seq.len() {
            return Err(Error::LengthMismatch { left: trace.len(), right: seq.len() });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HeadAggregate {
    /// Corpus mean of the summed weight on the category.
    pub head_w: f64,
    /// Mean `||f(x)||` of category tokens, averaged over sequences that
    /// contain the category.
    pub head_n: f64,
    /// Corpus mean of the summed weighted norm on the category.
    pub head_wn: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LayerAggregate {
    pub layer_w: f64,
    pub layer_n: f64,
    pub layer_wn: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryAggregates {
    pub category: Category,
    /// Indexed `[layer][head]`.
    pub heads: Vec<Vec<HeadAggregate>>,
    pub layers: Vec<LayerAggregate>,
}

/// Per-head and per-layer summaries of how much attention (weight, norm,
/// weighted norm) lands on tokens of `category`.
///
/// Sequences without the category add zero to the summed-weight averages
/// but are left out of the norm average's denominator.
pub fn category_aggregates(
    records: &CorpusRecords,
    seqs: &[TokenSequence],
    category: Category,
) -> Result<CategoryAggregates> {
    check_alignment(records, seqs)?;
    let members: Vec<Vec<usize>> = seqs
        .iter()
        .map(|s| {
            s.categories
                .iter()
                .enumerate()
                .filter(|(_, c)| **c == category)
                .map(|(q, _)| q)
                .collect()
        })
        .collect();
    let containing = members.iter().filter(|m| !m.is_empty()).count();
    if containing == 0 {
        return Err(Error::CategoryAbsent(category));
    }
    let num_seqs = seqs.len() as f64;

    let mut heads = Vec::with_capacity(records.num_layers);
    let mut layers = Vec::with_capacity(records.num_layers);
    for l in 0..records.num_layers {
        let mut row = Vec::with_capacity(records.num_heads);
        for h in 0..records.num_heads {
            let (mut sum_w, mut sum_n, mut sum_wn) = (0.0, 0.0, 0.0);
            for (p, qs) in members.iter().enumerate() {
                if qs.is_empty() {
                    continue;
                }
                let mut seq_w = 0.0;
                let mut seq_n = 0.0;
                let mut seq_wn = 0.0;
                for &q in qs {
                    seq_w += records.weight_fn(p, q, l, h)?;
                    seq_n += records.norm_fn(p, q, l, h)?;
                    seq_wn += records.wnorm_fn(p, q, l, h)?;
                }
                sum_w += seq_w;
                sum_n += seq_n / qs.len() as f64;
                sum_wn += seq_wn;
            }
            row.push(HeadAggregate {
                head_w: sum_w / num_seqs,
                head_n: sum_n / containing as f64,
                head_wn: sum_wn / num_seqs,
            });
        }
        let nh = row.len() as f64;
        layers.push(LayerAggregate {
            layer_w: row.iter().map(|a| a.head_w).sum::<f64>() / nh,
            layer_n: row.iter().map(|a| a.head_n).sum::<f64>() / nh,
            layer_wn: row.iter().map(|a| a.head_wn).sum::<f64>() / nh,
        });
        heads.push(row);
    }
    Ok(CategoryAggregates { category, heads, layers })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pairing {
    /// Mean weight against `||f(x)||`.
    WeightVsNorm,
    /// Mean weight against mean weighted norm.
    WeightVsWnorm,
}

/// Collects the `(weight, norm-or-wnorm)` points of every `(p, q, l, h)`
/// whose token falls in `category`.
pub fn category_points(
    records: &CorpusRecords,
    seqs: &[TokenSequence],
    category: Category,
    pairing: Pairing,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_alignment(records, seqs)?;
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (p, seq) in seqs.iter().enumerate() {
        for (q, _) in seq.categories.iter().enumerate().filter(|(_, c)| **c == category) {
            for l in 0..records.num_layers {
                for h in 0..records.num_heads {
                    xs.push(records.weight_fn(p, q, l, h)?);
                    ys.push(match pairing {
                        Pairing::WeightVsNorm => records.norm_fn(p, q, l, h)?,
                        Pairing::WeightVsWnorm => records.wnorm_fn(p, q, l, h)?,
                    });
                }
            }
        }
    }
    Ok((xs, ys))
}

/// Spearman correlation over the category's `(p, q, l, h)` points.
pub fn category_rank_correlation(
    records: &CorpusRecords,
    seqs: &[TokenSequence],
    category: Category,
    pairing: Pairing,
) -> Result<f64> {
    let (xs, ys) = category_points(records, seqs, category, pairing)?;
    stats::spearman(&xs, &ys)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Signal {
    /// `||f(x)||` averaged over all layers and heads.
    Norm,
    /// Mean weight averaged over all layers and heads.
    Weight,
}

/// Per-token-instance `(frequency rank, signal)` pairs for tokens whose
/// category passes `keep`.
pub fn frequency_points(
    records: &CorpusRecords,
    seqs: &[TokenSequence],
    table: &FrequencyTable,
    signal: Signal,
    keep: impl Fn(Category) -> bool,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_alignment(records, seqs)?;
    let cells = (records.num_layers * records.num_heads) as f64;
    let (mut ranks, mut values) = (Vec::new(), Vec::new());
    for (p, seq) in seqs.iter().enumerate() {
        for (q, (token, cat)) in seq.tokens.iter().zip(&seq.categories).enumerate() {
            if !keep(*cat) {
                continue;
            }
            let rank = table.rank(token).ok_or_else(|| Error::UnknownToken(token.clone()))?;
            let mut total = 0.0;
            for l in 0..records.num_layers {
                for h in 0..records.num_heads {
                    total += match signal {
                        Signal::Norm => records.norm_fn(p, q, l, h)?,
                        Signal::Weight => records.weight_fn(p, q, l, h)?,
                    };
                }
            }
            ranks.push(rank);
            values.push(total / cells);
        }
    }
    Ok((ranks, values))
}

/// Spearman correlation between frequency rank and the averaged signal over
/// all token instances.
pub fn frequency_correlation(
    records: &CorpusRecords,
    seqs: &[TokenSequence],
    table: &FrequencyTable,
    signal: Signal,
) -> Result<f64> {
    let (ranks, values) = frequency_points(records, seqs, table, signal, |_| true)?;
    stats::spearman(&ranks, &values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(rows: &[&[f64]], f_norms: &[f64]) -> HeadTrace {
        let w = Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap();
        HeadTrace::new(w, f_norms.to_vec()).unwrap()
    }

    fn single(rows: &[&[f64]], f_norms: &[f64]) -> CorpusRecords {
        CorpusRecords::new(vec![SequenceTrace::new(vec![vec![trace(rows, f_norms)]]).unwrap()])
            .unwrap()
    }

    fn seq(tokens: &[&str]) -> TokenSequence {
        TokenSequence::from_tokens(tokens.iter().map(|t| t.to_string()).collect())
    }

    #[test]
    fn categories_from_tokens() {
        let s = seq(&["[CLS]", "a", ".", ",", "!", "[SEP]"]);
        assert_eq!(
            s.categories(),
            &[
                Category::Cls,
                Category::Other,
                Category::Punct,
                Category::Punct,
                Category::Other,
                Category::Sep
            ]
        );
        assert_eq!("PUNCT".parse::<Category>().unwrap(), Category::Punct);
        assert!("punct".parse::<Category>().is_err());
        assert!(TokenSequence::new(vec!["a".into()], vec![]).is_err());
    }

    #[test]
    fn weight_norm_wnorm_hand_instance() {
        let r = single(&[&[0.9, 0.1], &[0.5, 0.5]], &[2.0, 4.0]);
        assert!((r.weight_fn(0, 0, 0, 0).unwrap() - 0.7).abs() < 1e-15);
        assert!((r.weight_fn(0, 1, 0, 0).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(r.norm_fn(0, 1, 0, 0).unwrap(), 4.0);
        assert!((r.wnorm_fn(0, 1, 0, 0).unwrap() - 1.2).abs() < 1e-15);
        assert!(r.weight_fn(0, 2, 0, 0).is_err());
        assert!(r.weight_fn(1, 0, 0, 0).is_err());
        assert!(r.norm_fn(0, 0, 1, 0).is_err());
        assert!(r.norm_fn(0, 0, 0, 1).is_err());
    }

    #[test]
    fn uniform_attention_weight_fn() {
        let row: &[f64] = &[0.25; 4];
        let r = single(&[row, row, row, row], &[1.0; 4]);
        for q in 0..4 {
            assert_eq!(r.weight_fn(0, q, 0, 0).unwrap(), 0.25);
        }
    }

    #[test]
    fn single_sequence_head_w_is_sum_w() {
        let r = single(&[&[0.6, 0.3, 0.1], &[0.2, 0.2, 0.6], &[0.1, 0.8, 0.1]], &[1.0, 2.0, 3.0]);
        let s = seq(&["[CLS]", "a", "[SEP]"]);
        let agg = category_aggregates(&r, std::slice::from_ref(&s), Category::Cls).unwrap();
        assert!((agg.heads[0][0].head_w - 0.3).abs() < 1e-15);
        assert_eq!(agg.heads[0][0].head_n, 1.0);
        assert!((agg.heads[0][0].head_wn - 0.3).abs() < 1e-15);
        assert_eq!(agg.layers[0].layer_w, agg.heads[0][0].head_w);
        assert!(matches!(
            category_aggregates(&r, &[s], Category::Punct),
            Err(Error::CategoryAbsent(Category::Punct))
        ));
    }

    #[test]
    fn two_sequence_nested_means() {
        // seq 0: [CLS] a .   seq 1: [CLS] b    (PUNCT only in seq 0)
        let s0 = SequenceTrace::new(vec![vec![trace(
            &[&[0.5, 0.25, 0.25], &[0.2, 0.4, 0.4], &[0.2, 0.2, 0.6]],
            &[1.0, 3.0, 2.0],
        )]])
        .unwrap();
        let s1 = SequenceTrace::new(vec![vec![trace(&[&[0.5, 0.5], &[0.1, 0.9]], &[4.0, 1.0])]])
            .unwrap();
        let r = CorpusRecords::new(vec![s0, s1]).unwrap();
        let seqs = [seq(&["[CLS]", "a", "."]), seq(&["[CLS]", "b"])];

        // PUNCT: SumW = (0.25+0.4+0.6)/3 = 0.416.. in seq 0, 0 in seq 1
        let punct = category_aggregates(&r, &seqs, Category::Punct).unwrap();
        let sum_w0 = (0.25 + 0.4 + 0.6) / 3.0;
        assert!((punct.layers[0].layer_w - sum_w0 / 2.0).abs() < 1e-15);
        assert!((punct.layers[0].layer_wn - 2.0 * sum_w0 / 2.0).abs() < 1e-15);
        // MeanN only over the sequence that has the category
        assert_eq!(punct.layers[0].layer_n, 2.0);

        // CLS: weights (0.5+0.2+0.2)/3 = 0.3 and (0.5+0.1)/2 = 0.3
        let cls = category_aggregates(&r, &seqs, Category::Cls).unwrap();
        assert!((cls.layers[0].layer_w - 0.3).abs() < 1e-15);
        assert!((cls.layers[0].layer_n - 2.5).abs() < 1e-15);
        assert!((cls.layers[0].layer_wn - (0.3 * 1.0 + 0.3 * 4.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn category_correlation_pairings() {
        // CLS tokens: high weight with low norm across heads
        let heads = vec![
            trace(&[&[0.9, 0.1], &[0.9, 0.1]], &[0.1, 1.0]),
            trace(&[&[0.5, 0.5], &[0.5, 0.5]], &[0.5, 1.0]),
            trace(&[&[0.2, 0.8], &[0.2, 0.8]], &[2.0, 1.0]),
        ];
        let r = CorpusRecords::new(vec![SequenceTrace::new(vec![heads]).unwrap()]).unwrap();
        let seqs = [seq(&["[CLS]", "a"])];
        let rho = category_rank_correlation(&r, &seqs, Category::Cls, Pairing::WeightVsNorm).unwrap();
        assert!((rho + 1.0).abs() < 1e-15);
        // OTHER token has constant norm: wnorm is proportional to weight
        let rho = category_rank_correlation(&r, &seqs, Category::Other, Pairing::WeightVsWnorm).unwrap();
        assert!((rho - 1.0).abs() < 1e-15);
        assert!(matches!(
            category_rank_correlation(&r, &seqs, Category::Sep, Pairing::WeightVsNorm),
            Err(Error::TooShort { .. })
        ));
    }

    #[test]
    fn frequency_table_ranks() {
        let t = FrequencyTable::from_counts([("the", 100), ("a", 50), ("b", 50), ("z", 1)]).unwrap();
        assert_eq!(t.rank("the"), Some(1.0));
        assert_eq!(t.rank("a"), Some(2.5));
        assert_eq!(t.rank("b"), Some(2.5));
        assert_eq!(t.rank("z"), Some(4.0));
        assert_eq!(t.frequency("a"), Some(50));
        assert_eq!(t.rank("q"), None);
        assert!(FrequencyTable::from_counts([("a", 1), ("a", 2)]).is_err());

        let parsed = FrequencyTable::parse("the 100\n\na\t50\nb 50\nz 1\n").unwrap();
        assert_eq!(parsed, t);
        assert!(matches!(FrequencyTable::parse("ok 1\nbad\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(FrequencyTable::parse("x y\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn frequency_correlation_cases() {
        let r = single(&[&[0.5, 0.5], &[0.5, 0.5]], &[1.0, 3.0]);
        let seqs = [seq(&["a", "b"])];
        let t = FrequencyTable::from_counts([("a", 10), ("b", 5)]).unwrap();
        assert!((frequency_correlation(&r, &seqs, &t, Signal::Norm).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(
            frequency_correlation(&r, &seqs, &t, Signal::Weight),
            Err(Error::ZeroVariance)
        ));
        let missing = FrequencyTable::from_counts([("a", 10)]).unwrap();
        assert!(matches!(
            frequency_correlation(&r, &seqs, &missing, Signal::Norm),
            Err(Error::UnknownToken(_))
        ));
    }

    #[test]
    fn mismatched_corpus_is_rejected() {
        let r = single(&[&[1.0]], &[1.0]);
        assert!(category_aggregates(&r, &[seq(&["a", "b"])], Category::Other).is_err());
        assert!(category_aggregates(&r, &[], Category::Other).is_err());
    }
}

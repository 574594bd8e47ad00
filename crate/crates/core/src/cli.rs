//! Command-line front end. Every subcommand reads files, writes CSV (or
//! Pharaoh alignments) to `--out` or stdout, and is deterministic: work is
//! fanned out over sequences and reassembled in input order.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::alignment::{
    align_sentence, head_scores, layer_scores, parse_alignments, parse_gold, AerCounts, AlignmentSet,
    ScoreMatrix, ScoreMode, Setting, SubwordMap,
};
use crate::attention::{transform_value, HeadAttention, ModelParams};
use crate::bert_analysis::{
    category_aggregates, category_rank_correlation, frequency_points, Category, CategoryAggregates,
    CorpusRecords, FrequencyTable, Pairing, SequenceTrace, Signal, TokenSequence,
};
use crate::io_formats::{
    load_model, read_archive, read_inputs, read_score_dump, write_score_dump, Archive, HeadSel,
    InputDocument, ScoreRow,
};
use crate::linalg::{euclid_norm, singular_values, Matrix};
use crate::{stats, Error};

#[derive(Debug, Parser)]
#[command(name = "normattn", version, about = "Norm-based attention analysis and word alignment")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-(layer, head, query, key) weight, ||f(x)|| and ||alpha f(x)||.
    Decompose {
        #[command(flatten)]
        common: Common,
        /// Keep each record with this probability (seeded by --seed).
        #[arg(long)]
        sample: Option<f64>,
    },
    /// Source-target score dump, including layer-integrated `all` rows.
    Scores {
        #[command(flatten)]
        common: Common,
    },
    /// Extract word alignments (one Pharaoh line per sentence pair).
    Align {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        align: AlignArgs,
    },
    /// Alignment error rate against a gold file.
    Aer {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        align: AlignArgs,
        #[arg(long)]
        gold: PathBuf,
        /// Gold indices are 1-based.
        #[arg(long)]
        one_based_gold: bool,
        /// Score an existing prediction file instead of extracting.
        #[arg(long)]
        pred: Option<PathBuf>,
        /// Per-layer and per-head AER table instead of a single score.
        #[arg(long)]
        table: bool,
    },
    /// Per-head coefficient of variation of ||f(x)|| and per-layer CV of ||x||.
    Stats {
        #[command(flatten)]
        common: Common,
    },
    /// Category-level weight and norm summaries.
    Categories {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Level::Layer)]
        level: Level,
    },
    /// Spearman correlation of word frequency rank with norms and weights.
    Freq {
        #[command(flatten)]
        common: Common,
        /// Frequency table, one `token count` per line.
        #[arg(long)]
        freq: PathBuf,
        /// Leave out [CLS], [SEP], periods and commas.
        #[arg(long)]
        exclude_special: bool,
    },
    /// Singular values of each head's value-output map in homogeneous form.
    Svals {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    /// NTAR model archive.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Line-delimited JSON input documents.
    #[arg(long)]
    pub inputs: Option<PathBuf>,
    /// NTAR archive with the activations the documents reference
    /// (defaults to the model archive).
    #[arg(long)]
    pub activations: Option<PathBuf>,
    #[arg(long)]
    pub layer: Option<usize>,
    #[arg(long)]
    pub head: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads (0 = one per core).
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    #[arg(long, value_enum, default_value_t = Mode::Norm)]
    pub mode: Mode,
    #[arg(long, value_enum, default_value_t = SettingArg::Awi)]
    pub setting: SettingArg,
    /// Read scores from a dump instead of computing them from --model.
    #[arg(long)]
    pub scores: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Mode {
    Weight,
    Norm,
}

impl From<Mode> for ScoreMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Weight => ScoreMode::Weight,
            Mode::Norm => ScoreMode::Norm,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SettingArg {
    Awi,
    Awo,
}

impl From<SettingArg> for Setting {
    fn from(s: SettingArg) -> Self {
        match s {
            SettingArg::Awi => Setting::Awi,
            SettingArg::Awo => Setting::Awo,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Level {
    Head,
    Layer,
    Corr,
}

#[derive(Debug)]
pub enum CliError {
    /// Bad input or usage; exit code 2.
    User(String),
    /// Anything else; exit code 1.
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::User(_) => 2,
            CliError::Internal(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::User(m) | CliError::Internal(m) => m,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::User(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn user(msg: impl Into<String>) -> CliError {
    CliError::User(msg.into())
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| user(format!("{}: {e}", path.display())))
}

fn read_ntar(path: &Path) -> CliResult<Archive> {
    let bytes = fs::read(path).map_err(|e| user(format!("{}: {e}", path.display())))?;
    read_archive(&bytes).map_err(|e| user(format!("{}: {e}", path.display())))
}

struct Loaded {
    model: Option<ModelParams>,
    docs: Vec<InputDocument>,
}

fn load(common: &Common, need_model: bool) -> CliResult<Loaded> {
    let model_archive = common.model.as_deref().map(read_ntar).transpose()?;
    let model = match (&model_archive, need_model) {
        (Some(a), _) => Some(load_model(a)?),
        (None, true) => return Err(user("--model is required")),
        (None, false) => None,
    };
    let act_archive = common.activations.as_deref().map(read_ntar).transpose()?;
    let inputs = common.inputs.as_deref().ok_or_else(|| user("--inputs is required"))?;
    let docs = read_inputs(&read_text(inputs)?, act_archive.as_ref().or(model_archive.as_ref()))
        .map_err(|e| user(format!("{}: {e}", inputs.display())))?;
    if let Some(m) = &model {
        for d in &docs {
            d.check_width(m.d())?;
        }
    }
    Ok(Loaded { model, docs })
}

fn select(sel: Option<usize>, len: usize, what: &str) -> CliResult<Vec<usize>> {
    match sel {
        Some(i) if i >= len => Err(user(format!("--{what} {i} out of range (model has {len})"))),
        Some(i) => Ok(vec![i]),
        None => Ok((0..len).collect()),
    }
}

fn pool(threads: usize) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Internal(format!("thread pool: {e}")))
}

/// Map `f` over documents in parallel, keeping input order.
fn par_docs<T, F>(threads: usize, docs: &[InputDocument], f: F) -> CliResult<Vec<T>>
where
    T: Send,
    F: Fn(&InputDocument) -> CliResult<T> + Sync + Send,
{
    pool(threads)?.install(|| docs.par_iter().map(f).collect())
}

fn emit(out: &Option<PathBuf>, text: &str) -> CliResult<()> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| CliError::Internal(format!("{}: {e}", p.display()))),
        None => {
            use std::io::Write;
            std::io::stdout()
                .write_all(text.as_bytes())
                .map_err(|e| CliError::Internal(format!("stdout: {e}")))
        }
    }
}

fn layer_inputs<'a>(doc: &'a InputDocument, model: &ModelParams) -> CliResult<&'a [Matrix]> {
    if doc.layer_inputs.len() != model.num_layers() {
        return Err(user(format!(
            "sequence {:?}: {} layer_inputs activations for a {}-layer model",
            doc.id,
            doc.layer_inputs.len(),
            model.num_layers()
        )));
    }
    Ok(&doc.layer_inputs)
}

fn decoder_states<'a>(doc: &'a InputDocument, model: &ModelParams) -> CliResult<&'a [Matrix]> {
    if doc.decoder_states.len() != model.num_layers() {
        return Err(user(format!(
            "sequence {:?}: {} decoder_states activations for a {}-layer model",
            doc.id,
            doc.decoder_states.len(),
            model.num_layers()
        )));
    }
    Ok(&doc.decoder_states)
}

/// Query-side states for layer `l`: decoder states when present, else the
/// layer inputs themselves (self-attention).
fn queries(doc: &InputDocument, l: usize) -> &Matrix {
    doc.decoder_states.get(l).unwrap_or(&doc.layer_inputs[l])
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Decompose { common, sample } => cmd_decompose(&common, sample),
        Command::Scores { common } => cmd_scores(&common),
        Command::Align { common, align } => cmd_align(&common, &align),
        Command::Aer { common, align, gold, one_based_gold, pred, table } => {
            cmd_aer(&common, &align, &gold, one_based_gold, pred.as_deref(), table)
        }
        Command::Stats { common } => cmd_stats(&common),
        Command::Categories { common, level } => cmd_categories(&common, level),
        Command::Freq { common, freq, exclude_special } => cmd_freq(&common, &freq, exclude_special),
        Command::Svals { common } => cmd_svals(&common),
    }
}

fn cmd_decompose(common: &Common, sample: Option<f64>) -> CliResult<()> {
    if let Some(p) = sample {
        if !(0.0..=1.0).contains(&p) {
            return Err(user("--sample must be within [0, 1]"));
        }
    }
    let Loaded { model, docs } = load(common, true)?;
    let model = model.expect("model loaded");
    let layers = select(common.layer, model.num_layers(), "layer")?;
    let heads = select(common.head, model.num_heads(), "head")?;

    let chunks = par_docs(common.threads, &docs, |doc| {
        layer_inputs(doc, &model)?;
        let mut recs = Vec::new();
        for &l in &layers {
            let keys = doc.layer_inputs[l].row_vectors();
            let qs = queries(doc, l).row_vectors();
            for &h in &heads {
                let p = &model.layers()[l].heads()[h];
                recs.extend(HeadAttention::compute(&qs, &keys, p)?.records(l, h));
            }
        }
        Ok(recs)
    })?;

    // sampling runs sequentially so the kept set is independent of --threads
    let mut rng = ChaCha8Rng::seed_from_u64(common.seed);
    let mut out = String::from("sequence,layer,head,query,key,weight,f_norm,weighted_norm\n");
    for (doc, recs) in docs.iter().zip(chunks) {
        for r in recs {
            if let Some(p) = sample {
                if !rng.gen_bool(p) {
                    continue;
                }
            }
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                doc.id, r.layer, r.head, r.query, r.key, r.weight, r.f_norm, r.weighted_norm
            );
        }
    }
    emit(&common.out, &out)
}

/// Per-head attention for one source-target layer.
fn cross_attention(doc: &InputDocument, model: &ModelParams, l: usize) -> CliResult<Vec<HeadAttention>> {
    let keys = layer_inputs(doc, model)?[l].row_vectors();
    let qs = decoder_states(doc, model)?[l].row_vectors();
    Ok(model.layers()[l]
        .heads()
        .iter()
        .map(|p| HeadAttention::compute(&qs, &keys, p))
        .collect::<crate::Result<Vec<_>>>()?)
}

fn cmd_scores(common: &Common) -> CliResult<()> {
    let Loaded { model, docs } = load(common, true)?;
    let model = model.expect("model loaded");
    let layers = select(common.layer, model.num_layers(), "layer")?;
    let heads = select(common.head, model.num_heads(), "head")?;

    let chunks = par_docs(common.threads, &docs, |doc| {
        let mut rows = Vec::new();
        for &l in &layers {
            let atts = cross_attention(doc, &model, l)?;
            let mut push = |head: HeadSel, w: &Matrix, n: &Matrix| {
                for i in 0..w.rows() {
                    for j in 0..w.cols() {
                        rows.push(ScoreRow {
                            sentence: doc.id.clone(),
                            layer: l,
                            head,
                            target_pos: i,
                            source_pos: j,
                            weight: w.get(i, j),
                            weighted_norm: n.get(i, j),
                        });
                    }
                }
            };
            for &h in &heads {
                push(HeadSel::Head(h), atts[h].weights(), &atts[h].weighted_norms());
            }
            if common.head.is_none() {
                let w = layer_scores(&atts, ScoreMode::Weight)?;
                let n = layer_scores(&atts, ScoreMode::Norm)?;
                push(HeadSel::All, &w, &n);
            }
        }
        Ok(rows)
    })?;
    emit(&common.out, &write_score_dump(&chunks.concat()))
}

/// `(sentence, layer, head) -> [(target_pos, source_pos, weight, weighted_norm)]`
type DumpIndex = HashMap<(String, usize, HeadSel), Vec<(usize, usize, f64, f64)>>;

/// Where alignment scores come from.
enum ScoreSource {
    Model(ModelParams),
    Dump(DumpIndex),
}

impl ScoreSource {
    fn num_layers(&self) -> Option<usize> {
        match self {
            ScoreSource::Model(m) => Some(m.num_layers()),
            ScoreSource::Dump(_) => None,
        }
    }

    fn matrix(&self, doc: &InputDocument, l: usize, head: HeadSel, mode: ScoreMode) -> CliResult<Matrix> {
        match self {
            ScoreSource::Model(model) => {
                if l >= model.num_layers() {
                    return Err(user(format!("--layer {l} out of range (model has {})", model.num_layers())));
                }
                let atts = cross_attention(doc, model, l)?;
                match head {
                    HeadSel::Head(h) => {
                        let att = atts.get(h).ok_or_else(|| {
                            user(format!("--head {h} out of range (model has {})", atts.len()))
                        })?;
                        Ok(head_scores(att, mode))
                    }
                    HeadSel::All => Ok(layer_scores(&atts, mode)?),
                }
            }
            ScoreSource::Dump(map) => {
                let cells = map.get(&(doc.id.clone(), l, head)).ok_or_else(|| {
                    user(format!("score dump has no rows for sentence {:?}, layer {l}, head {head}", doc.id))
                })?;
                let rows = cells.iter().map(|c| c.0 + 1).max().unwrap_or(0);
                let cols = doc.sequence.len();
                let mut m = vec![f64::NAN; rows * cols];
                for &(i, j, w, n) in cells {
                    if j >= cols {
                        return Err(user(format!("sentence {:?}: source_pos {j} out of range", doc.id)));
                    }
                    let slot = &mut m[i * cols + j];
                    if !slot.is_nan() {
                        return Err(user(format!("sentence {:?}: duplicate cell ({i}, {j})", doc.id)));
                    }
                    *slot = match mode {
                        ScoreMode::Weight => w,
                        ScoreMode::Norm => n,
                    };
                }
                if m.iter().any(|v| v.is_nan()) {
                    return Err(user(format!(
                        "sentence {:?}: score dump does not cover the full {rows}x{cols} matrix",
                        doc.id
                    )));
                }
                Ok(Matrix::new(rows, cols, m)?)
            }
        }
    }
}

fn score_source(common: &Common, align: &AlignArgs) -> CliResult<(ScoreSource, Vec<InputDocument>)> {
    match &align.scores {
        Some(path) => {
            let Loaded { docs, .. } = load(common, false)?;
            let rows = read_score_dump(&read_text(path)?).map_err(|e| user(format!("{}: {e}", path.display())))?;
            let mut map: HashMap<_, Vec<_>> = HashMap::new();
            for r in rows {
                map.entry((r.sentence, r.layer, r.head))
                    .or_default()
                    .push((r.target_pos, r.source_pos, r.weight, r.weighted_norm));
            }
            Ok((ScoreSource::Dump(map), docs))
        }
        None => {
            let Loaded { model, docs } = load(common, true)?;
            Ok((ScoreSource::Model(model.expect("model loaded")), docs))
        }
    }
}

fn sentence_alignment(
    doc: &InputDocument,
    source: &ScoreSource,
    l: usize,
    head: HeadSel,
    mode: ScoreMode,
    setting: Setting,
) -> CliResult<AlignmentSet> {
    let target_len = doc
        .target_len()
        .ok_or_else(|| user(format!("sentence {:?}: target_tokens required for alignment", doc.id)))?;
    let m = source.matrix(doc, l, head, mode)?;
    let scores = ScoreMatrix::new(m, target_len, doc.eos_column)
        .map_err(|e| user(format!("sentence {:?}: {e}", doc.id)))?;
    let src_words = doc.sequence.len() - usize::from(doc.eos_column.is_some());
    let src_map = doc.source_map.clone().unwrap_or_else(|| SubwordMap::identity(src_words));
    let tgt_map = doc.target_map.clone().unwrap_or_else(|| SubwordMap::identity(target_len));
    let e = align_sentence(&scores, &src_map, &tgt_map, setting)
        .map_err(|e| user(format!("sentence {:?}: {e}", doc.id)))?;
    if !e.fallbacks.is_empty() {
        log::warn!(
            "sentence {:?}: AWI fallback to the output row for target words {:?}",
            doc.id,
            e.fallbacks
        );
    }
    Ok(e.links)
}

fn required_layer(common: &Common) -> CliResult<usize> {
    common.layer.ok_or_else(|| user("--layer is required"))
}

fn head_sel(common: &Common) -> HeadSel {
    common.head.map_or(HeadSel::All, HeadSel::Head)
}

fn extract_all(common: &Common, align: &AlignArgs) -> CliResult<(Vec<InputDocument>, Vec<AlignmentSet>)> {
    let (source, docs) = score_source(common, align)?;
    let l = required_layer(common)?;
    let head = head_sel(common);
    let links = par_docs(common.threads, &docs, |doc| {
        sentence_alignment(doc, &source, l, head, align.mode.into(), align.setting.into())
    })?;
    Ok((docs, links))
}

fn pharaoh(links: &[AlignmentSet]) -> String {
    links.iter().map(|a| format!("{a}\n")).collect()
}

fn cmd_align(common: &Common, align: &AlignArgs) -> CliResult<()> {
    let (_, links) = extract_all(common, align)?;
    emit(&common.out, &pharaoh(&links))
}

fn cmd_aer(
    common: &Common,
    align: &AlignArgs,
    gold: &Path,
    one_based: bool,
    pred: Option<&Path>,
    table: bool,
) -> CliResult<()> {
    let golds = parse_gold(&read_text(gold)?, one_based).map_err(|e| user(format!("{}: {e}", gold.display())))?;
    let check_len = |n: usize| {
        if n != golds.len() {
            return Err(user(format!("{n} sentences but {} gold lines", golds.len())));
        }
        Ok(())
    };
    let corpus = |preds: &[AlignmentSet]| -> f64 {
        preds.iter().zip(&golds).map(|(p, g)| AerCounts::of(p, g)).sum::<AerCounts>().aer()
    };

    if !table {
        let preds = match pred {
            Some(path) => parse_alignments(&read_text(path)?).map_err(|e| user(format!("{}: {e}", path.display())))?,
            None => extract_all(common, align)?.1,
        };
        check_len(preds.len())?;
        return emit(&common.out, &format!("{:.4}\n", corpus(&preds)));
    }

    if pred.is_some() {
        return Err(user("--table extracts alignments itself; drop --pred"));
    }
    let (source, docs) = score_source(common, align)?;
    check_len(docs.len())?;
    let layers: Vec<usize> = match (common.layer, source.num_layers(), &source) {
        (Some(l), _, _) => vec![l],
        (None, Some(n), _) => (0..n).collect(),
        (None, None, ScoreSource::Dump(map)) => {
            let max = map.keys().map(|k| k.1 + 1).max().unwrap_or(0);
            (0..max).collect()
        }
        (None, None, ScoreSource::Model(_)) => unreachable!(),
    };
    let mut out = String::from("layer,head,aer,mean_weighted_norm\n");
    for l in layers {
        let mut sels: Vec<HeadSel> = match &source {
            ScoreSource::Model(m) => (0..m.num_heads()).map(HeadSel::Head).collect(),
            ScoreSource::Dump(map) => {
                let mut hs: Vec<HeadSel> = map.keys().filter(|k| k.1 == l).map(|k| k.2).collect();
                hs.sort();
                hs.dedup();
                hs.retain(|h| *h != HeadSel::All);
                hs
            }
        };
        if let Some(h) = common.head {
            sels.retain(|s| *s == HeadSel::Head(h));
        }
        sels.push(HeadSel::All);
        for head in sels {
            let per_doc = par_docs(common.threads, &docs, |doc| {
                let links = sentence_alignment(doc, &source, l, head, align.mode.into(), align.setting.into())?;
                let norms = source.matrix(doc, l, head, ScoreMode::Norm)?;
                Ok((links, norms.data().iter().sum::<f64>(), norms.data().len()))
            })?;
            let preds: Vec<AlignmentSet> = per_doc.iter().map(|p| p.0.clone()).collect();
            let total: f64 = per_doc.iter().map(|p| p.1).sum();
            let count: usize = per_doc.iter().map(|p| p.2).sum();
            let mean = if count == 0 { 0.0 } else { total / count as f64 };
            let _ = writeln!(out, "{l},{head},{:.4},{mean}", corpus(&preds));
        }
    }
    emit(&common.out, &out)
}

fn cmd_stats(common: &Common) -> CliResult<()> {
    let Loaded { model, docs } = load(common, true)?;
    let model = model.expect("model loaded");
    let layers = select(common.layer, model.num_layers(), "layer")?;
    let heads = select(common.head, model.num_heads(), "head")?;

    // per doc: [layer][head] f-norms, and [layer] x-norms
    type Norms = (Vec<Vec<Vec<f64>>>, Vec<Vec<f64>>);
    let per_doc: Vec<Norms> = par_docs(common.threads, &docs, |doc| {
        let inputs = layer_inputs(doc, &model)?;
        let mut f = Vec::new();
        let mut x = Vec::new();
        for &l in &layers {
            let rows = inputs[l].row_vectors();
            x.push(rows.iter().map(|r| r.norm()).collect());
            let mut per_head = Vec::new();
            for &h in &heads {
                let p = &model.layers()[l].heads()[h];
                per_head.push(
                    rows.iter()
                        .map(|r| transform_value(r, p).map(|v| euclid_norm(&v)))
                        .collect::<crate::Result<Vec<_>>>()?,
                );
            }
            f.push(per_head);
        }
        Ok((f, x))
    })?;

    let mut out = String::from("layer,head,mean_f_norm,cv_f_norm,cv_x_norm\n");
    for (li, &l) in layers.iter().enumerate() {
        let xs: Vec<f64> = per_doc.iter().flat_map(|d| d.1[li].iter().copied()).collect();
        let cv_x = stats::coefficient_of_variation(&xs).map_err(|e| user(format!("layer {l}: ||x||: {e}")))?;
        for (hi, &h) in heads.iter().enumerate() {
            let fs: Vec<f64> = per_doc.iter().flat_map(|d| d.0[li][hi].iter().copied()).collect();
            let mean = stats::mean(&fs)?;
            let cv = stats::coefficient_of_variation(&fs)
                .map_err(|e| user(format!("layer {l} head {h}: ||f(x)||: {e}")))?;
            let _ = writeln!(out, "{l},{h},{mean},{cv},{cv_x}");
        }
    }
    emit(&common.out, &out)
}

fn corpus_records(common: &Common) -> CliResult<(ModelParams, Vec<TokenSequence>, CorpusRecords)> {
    let Loaded { model, docs } = load(common, true)?;
    let model = model.expect("model loaded");
    if docs.is_empty() {
        return Err(user("no input documents"));
    }
    let traces = par_docs(common.threads, &docs, |doc| {
        Ok(SequenceTrace::self_attention(&model, layer_inputs(doc, &model)?)?)
    })?;
    let seqs = docs.into_iter().map(|d| d.sequence).collect();
    Ok((model, seqs, CorpusRecords::new(traces)?))
}

fn aggregates_or_absent(
    records: &CorpusRecords,
    seqs: &[TokenSequence],
    c: Category,
) -> CliResult<Option<CategoryAggregates>> {
    match category_aggregates(records, seqs, c) {
        Ok(a) => Ok(Some(a)),
        Err(Error::CategoryAbsent(_)) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn cmd_categories(common: &Common, level: Level) -> CliResult<()> {
    let (model, seqs, records) = corpus_records(common)?;
    let layers = select(common.layer, model.num_layers(), "layer")?;
    let heads = select(common.head, model.num_heads(), "head")?;
    let aggs = Category::ALL
        .iter()
        .map(|&c| aggregates_or_absent(&records, &seqs, c))
        .collect::<CliResult<Vec<_>>>()?;

    let mut out = String::new();
    match level {
        Level::Head => {
            out.push_str("layer,head,category,head_w,head_n,head_wn\n");
            for &l in &layers {
                for &h in &heads {
                    for a in aggs.iter().flatten() {
                        let v = a.heads[l][h];
                        let _ = writeln!(out, "{l},{h},{},{},{},{}", a.category, v.head_w, v.head_n, v.head_wn);
                    }
                }
            }
        }
        Level::Layer => {
            out.push_str(
                "layer,cls_w,sep_w,punct_w,other_w,cls_wn,sep_wn,punct_wn,other_wn,total_w\n",
            );
            for &l in &layers {
                let w: Vec<f64> = aggs.iter().map(|a| a.as_ref().map_or(0.0, |a| a.layers[l].layer_w)).collect();
                let wn: Vec<f64> = aggs.iter().map(|a| a.as_ref().map_or(0.0, |a| a.layers[l].layer_wn)).collect();
                let total: f64 = w.iter().sum();
                let _ = writeln!(
                    out,
                    "{l},{},{},{},{},{},{},{},{},{total}",
                    w[0], w[1], w[2], w[3], wn[0], wn[1], wn[2], wn[3]
                );
            }
        }
        Level::Corr => {
            out.push_str("category,pairing,spearman\n");
            for a in aggs.iter().flatten() {
                for (pairing, name) in [(Pairing::WeightVsNorm, "weight_vs_norm"), (Pairing::WeightVsWnorm, "weight_vs_wnorm")] {
                    let rho = category_rank_correlation(&records, &seqs, a.category, pairing)
                        .map_or_else(|_| "NA".to_string(), |r| r.to_string());
                    let _ = writeln!(out, "{},{name},{rho}", a.category);
                }
            }
        }
    }
    emit(&common.out, &out)
}

fn cmd_freq(common: &Common, freq: &Path, exclude_special: bool) -> CliResult<()> {
    let table = FrequencyTable::parse(&read_text(freq)?).map_err(|e| user(format!("{}: {e}", freq.display())))?;
    let (_, seqs, records) = corpus_records(common)?;
    let keep = |c: Category| !exclude_special || c == Category::Other;
    let mut out = String::from("signal,tokens,spearman\n");
    for (signal, name) in [(Signal::Norm, "norm"), (Signal::Weight, "weight")] {
        let (ranks, values) = frequency_points(&records, &seqs, &table, signal, keep)?;
        let rho = match stats::spearman(&ranks, &values) {
            Ok(r) => r.to_string(),
            Err(e) => {
                log::warn!("{name}: spearman undefined ({e})");
                "NA".to_string()
            }
        };
        let _ = writeln!(out, "{name},{},{rho}", ranks.len());
    }
    emit(&common.out, &out)
}

fn cmd_svals(common: &Common) -> CliResult<()> {
    let path = common.model.as_deref().ok_or_else(|| user("--model is required"))?;
    let model = load_model(&read_ntar(path)?)?;
    let layers = select(common.layer, model.num_layers(), "layer")?;
    let heads = select(common.head, model.num_heads(), "head")?;
    let mut out = String::from("layer,head,index,value\n");
    for &l in &layers {
        for &h in &heads {
            let embedded = model.layers()[l].heads()[h].embedded_transform()?;
            for (k, s) in singular_values(&embedded)?.iter().enumerate() {
                let _ = writeln!(out, "{l},{h},{k},{s}");
            }
        }
    }
    emit(&common.out, &out)
}

//! Single- and multi-head attention, decomposed into per-source contributions
//! `alpha_ij * f(x_j)` where `f(x) = (x W_V + b_V) W_O`.
//!
//! The same functions serve self-attention (queries and keys from one
//! sequence) and source-target attention (decoder states as queries, encoder
//! states as keys).

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{affine, dot, euclid_norm, matmul, softmax_row, vecmat, Matrix, Vector};

/// Projection weights of one attention head. `d` is the model width and
/// `d_head` the per-head width; `wo` is this head's `(d_head, d)` slice of
/// the fused output projection.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    wq: Matrix,
    bq: Vector,
    wk: Matrix,
    bk: Vector,
    wv: Matrix,
    bv: Vector,
    wo: Matrix,
}

impl HeadParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        wq: Matrix,
        bq: Vector,
        wk: Matrix,
        bk: Vector,
        wv: Matrix,
        bv: Vector,
        wo: Matrix,
    ) -> Result<Self> {
        let (d, d_head) = wq.shape();
        for (name, w) in [("wk", &wk), ("wv", &wv)] {
            if w.shape() != (d, d_head) {
                return Err(Error::shape("head params", format!("wq {wq}"), format!("{name} {w}")));
            }
        }
        if wo.shape() != (d_head, d) {
            return Err(Error::shape("head params", format!("wq {wq}"), format!("wo {wo}")));
        }
        for (name, b) in [("bq", &bq), ("bk", &bk), ("bv", &bv)] {
            if b.dim() != d_head {
                return Err(Error::shape(
                    "head params",
                    format!("d_head {d_head}"),
                    format!("{name} of dim {}", b.dim()),
                ));
            }
        }
        Ok(HeadParams { wq, bq, wk, bk, wv, bv, wo })
    }

    /// Head without query/key/value biases.
    pub fn without_biases(wq: Matrix, wk: Matrix, wv: Matrix, wo: Matrix) -> Result<Self> {
        let d_head = wq.cols();
        HeadParams::new(
            wq,
            Vector::zeros(d_head),
            wk,
            Vector::zeros(d_head),
            wv,
            Vector::zeros(d_head),
            wo,
        )
    }

    /// All projections identity, all biases zero: `f(x) = x`.
    pub fn identity(d: usize) -> Self {
        HeadParams::without_biases(
            Matrix::identity(d),
            Matrix::identity(d),
            Matrix::identity(d),
            Matrix::identity(d),
        )
        .expect("identity shapes are consistent")
    }

    pub fn d(&self) -> usize {
        self.wq.rows()
    }

    pub fn d_head(&self) -> usize {
        self.wq.cols()
    }

    pub fn wq(&self) -> &Matrix {
        &self.wq
    }
    pub fn bq(&self) -> &Vector {
        &self.bq
    }
    pub fn wk(&self) -> &Matrix {
        &self.wk
    }
    pub fn bk(&self) -> &Vector {
        &self.bk
    }
    pub fn wv(&self) -> &Matrix {
        &self.wv
    }
    pub fn bv(&self) -> &Vector {
        &self.bv
    }
    pub fn wo(&self) -> &Matrix {
        &self.wo
    }

    pub fn query(&self, y_pre: &[f64]) -> Result<Vector> {
        affine(y_pre, &self.wq, &self.bq)
    }

    pub fn key(&self, x: &[f64]) -> Result<Vector> {
        affine(x, &self.wk, &self.bk)
    }

    pub fn value(&self, x: &[f64]) -> Result<Vector> {
        affine(x, &self.wv, &self.bv)
    }

    /// The value-then-output map `f` as a linear map on homogeneous
    /// coordinates, `(d+1) x (d+1)`.
    pub fn embedded_transform(&self) -> Result<Matrix> {
        let wv = crate::linalg::affine_to_linear(&self.wv, &self.bv)?;
        let wo = crate::linalg::affine_to_linear(&self.wo, &vec![0.0; self.d()])?;
        matmul(&wv, &wo)
    }

    fn check_dim(&self, v: &[f64], what: &'static str) -> Result<()> {
        if v.len() != self.d() {
            return Err(Error::shape(what, format!("d = {}", self.d()), format!("dim {}", v.len())));
        }
        Ok(())
    }

    fn check_inputs(&self, inputs: &[Vector]) -> Result<()> {
        if inputs.is_empty() {
            return Err(Error::Empty("attention inputs"));
        }
        inputs.iter().try_for_each(|x| self.check_dim(x, "attention input"))
    }
}

/// One attention layer: its heads plus the output bias `bo`, which is kept
/// for reconstructing the layer output but never enters a contribution.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    heads: Vec<HeadParams>,
    bo: Vector,
}

impl LayerParams {
    pub fn new(heads: Vec<HeadParams>, bo: Vector) -> Result<Self> {
        let first = heads.first().ok_or(Error::Empty("layer heads"))?;
        let (d, d_head) = (first.d(), first.d_head());
        for h in &heads[1..] {
            if (h.d(), h.d_head()) != (d, d_head) {
                return Err(Error::shape(
                    "layer params",
                    format!("head 0 ({d}, {d_head})"),
                    format!("({}, {})", h.d(), h.d_head()),
                ));
            }
        }
        if bo.dim() != d {
            return Err(Error::shape("layer params", format!("d = {d}"), format!("bo of dim {}", bo.dim())));
        }
        Ok(LayerParams { heads, bo })
    }

    pub fn heads(&self) -> &[HeadParams] {
        &self.heads
    }

    pub fn bo(&self) -> &Vector {
        &self.bo
    }

    pub fn d(&self) -> usize {
        self.heads[0].d()
    }

    pub fn d_head(&self) -> usize {
        self.heads[0].d_head()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    layers: Vec<LayerParams>,
    d: usize,
    d_head: usize,
    num_heads: usize,
}

impl ModelParams {
    pub fn new(layers: Vec<LayerParams>) -> Result<Self> {
        let first = layers.first().ok_or(Error::Empty("model layers"))?;
        let (d, d_head, num_heads) = (first.d(), first.d_head(), first.heads.len());
        for (l, layer) in layers.iter().enumerate() {
            if (layer.d(), layer.d_head(), layer.heads.len()) != (d, d_head, num_heads) {
                return Err(Error::InconsistentModel {
                    entry: format!("layer{l}"),
                    msg: format!(
                        "expected (d, d_head, heads) = ({d}, {d_head}, {num_heads}), got ({}, {}, {})",
                        layer.d(),
                        layer.d_head(),
                        layer.heads.len()
                    ),
                });
            }
        }
        if num_heads * d_head != d {
            log::warn!("heads x d_head = {} differs from d = {d}; proceeding", num_heads * d_head);
        }
        Ok(ModelParams { layers, d, d_head, num_heads })
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn layer(&self, l: usize) -> Result<&LayerParams> {
        self.layers.get(l).ok_or(Error::IndexOutOfRange {
            what: "layer",
            index: l,
            len: self.layers.len(),
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn d_head(&self) -> usize {
        self.d_head
    }

    pub fn num_heads(&self) -> usize {
        self.num_heads
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }
}

/// One `(layer, head, i, j)` observation: attention weight, `||f(x_j)||` and
/// `||alpha_ij f(x_j)||`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AttentionRecord {
    pub layer: usize,
    pub head: usize,
    pub query: usize,
    pub key: usize,
    pub weight: f64,
    pub f_norm: f64,
    pub weighted_norm: f64,
}

fn scores_to_weights(query: &[f64], keys: &[Vector], d_head: usize) -> Result<Vector> {
    let scale = (d_head as f64).sqrt();
    let scores: Vec<f64> = keys.iter().map(|k| dot(query, k) / scale).collect();
    softmax_row(&scores)
}

/// Softmax of `q(y_pre) . k(x_j) / sqrt(d_head)` over the inputs.
pub fn attention_weights(y_pre: &[f64], inputs: &[Vector], p: &HeadParams) -> Result<Vector> {
    p.check_dim(y_pre, "query input")?;
    p.check_inputs(inputs)?;
    let q = p.query(y_pre)?;
    let keys = inputs.iter().map(|x| p.key(x)).collect::<Result<Vec<_>>>()?;
    scores_to_weights(&q, &keys, p.d_head())
}

/// `f(x) = (x W_V + b_V) W_O`.
pub fn transform_value(x: &[f64], p: &HeadParams) -> Result<Vector> {
    p.check_dim(x, "transform_value")?;
    vecmat(&p.value(x)?, &p.wo)
}

/// Head output in the original order: weighted sum of value vectors first,
/// output projection last.
pub fn head_output_direct(y_pre: &[f64], inputs: &[Vector], p: &HeadParams) -> Result<Vector> {
    let weights = attention_weights(y_pre, inputs, p)?;
    let mut pooled = Vector::zeros(p.d_head());
    for (x, &a) in inputs.iter().zip(weights.iter()) {
        pooled.add_scaled(a, &p.value(x)?)?;
    }
    vecmat(&pooled, &p.wo)
}

/// Scale each transformed vector by its weight.
pub fn weighted_contributions(weights: &[f64], transformed: &[Vector]) -> Result<Vec<Vector>> {
    if weights.len() != transformed.len() {
        return Err(Error::LengthMismatch {
            left: weights.len(),
            right: transformed.len(),
        });
    }
    Ok(weights.iter().zip(transformed).map(|(&a, f)| f.scale(a)).collect())
}

/// The `n` vectors `alpha_ij f(x_j)` whose sum is the head output.
pub fn head_decompose(y_pre: &[f64], inputs: &[Vector], p: &HeadParams) -> Result<Vec<Vector>> {
    let weights = attention_weights(y_pre, inputs, p)?;
    let transformed = inputs
        .iter()
        .map(|x| transform_value(x, p))
        .collect::<Result<Vec<_>>>()?;
    weighted_contributions(&weights, &transformed)
}

/// Attention of one head over a batch of queries: the full weight matrix
/// plus the transformed vectors `f(x_j)` and their norms, each computed once.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadAttention {
    weights: Matrix,
    transformed: Vec<Vector>,
    f_norms: Vec<f64>,
}

impl HeadAttention {
    pub fn compute(y_pres: &[Vector], inputs: &[Vector], p: &HeadParams) -> Result<Self> {
        p.check_inputs(inputs)?;
        let keys = inputs.iter().map(|x| p.key(x)).collect::<Result<Vec<_>>>()?;
        let mut data = Vec::with_capacity(y_pres.len() * inputs.len());
        for y in y_pres {
            p.check_dim(y, "query input")?;
            let q = p.query(y)?;
            data.extend_from_slice(&scores_to_weights(&q, &keys, p.d_head())?);
        }
        let weights = Matrix::new(y_pres.len(), inputs.len(), data)?;
        let transformed = inputs
            .iter()
            .map(|x| transform_value(x, p))
            .collect::<Result<Vec<_>>>()?;
        let f_norms = transformed.iter().map(|f| euclid_norm(f)).collect();
        Ok(HeadAttention { weights, transformed, f_norms })
    }

    /// `(queries, keys)` weight matrix; each row is a probability vector.
    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn transformed(&self) -> &[Vector] {
        &self.transformed
    }

    pub fn f_norms(&self) -> &[f64] {
        &self.f_norms
    }

    pub fn contribution(&self, i: usize, j: usize) -> Vector {
        self.transformed[j].scale(self.weights.get(i, j))
    }

    pub fn weighted_norm(&self, i: usize, j: usize) -> f64 {
        self.weights.get(i, j) * self.f_norms[j]
    }

    /// Matrix of `||alpha_ij f(x_j)||`.
    pub fn weighted_norms(&self) -> Matrix {
        let (m, n) = self.weights.shape();
        let mut out = Matrix::zeros(m, n);
        for i in 0..m {
            for j in 0..n {
                out.set(i, j, self.weighted_norm(i, j));
            }
        }
        out
    }

    pub fn records(&self, layer: usize, head: usize) -> Vec<AttentionRecord> {
        let (m, n) = self.weights.shape();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                let weight = self.weights.get(i, j);
                let f_norm = self.f_norms[j];
                out.push(AttentionRecord {
                    layer,
                    head,
                    query: i,
                    key: j,
                    weight,
                    f_norm,
                    weighted_norm: weight * f_norm,
                });
            }
        }
        out
    }
}

/// One record per `(query, key)` pair for a single head.
pub fn head_records(
    layer: usize,
    head: usize,
    y_pres: &[Vector],
    inputs: &[Vector],
    p: &HeadParams,
) -> Result<Vec<AttentionRecord>> {
    Ok(HeadAttention::compute(y_pres, inputs, p)?.records(layer, head))
}

/// Per-source contributions of a whole multi-head layer,
/// `sum_h alpha^h_ij f^h(x_j)`, excluding `bo`.
pub fn multihead_contributions(
    y_pre: &[f64],
    inputs: &[Vector],
    lp: &LayerParams,
) -> Result<Vec<Vector>> {
    let mut out = vec![Vector::zeros(lp.d()); inputs.len()];
    for p in &lp.heads {
        for (acc, c) in out.iter_mut().zip(head_decompose(y_pre, inputs, p)?) {
            acc.add_scaled(1.0, &c)?;
        }
    }
    Ok(out)
}

pub fn multihead_norms(y_pre: &[f64], inputs: &[Vector], lp: &LayerParams) -> Result<Vector> {
    let norms = multihead_contributions(y_pre, inputs, lp)?
        .iter()
        .map(|c| euclid_norm(c))
        .collect();
    Vector::new(norms)
}

/// Full multi-head output: sum of each head's direct output plus `bo`.
pub fn layer_output_direct(y_pre: &[f64], inputs: &[Vector], lp: &LayerParams) -> Result<Vector> {
    let mut out = lp.bo.clone();
    for p in &lp.heads {
        out.add_scaled(1.0, &head_output_direct(y_pre, inputs, p)?)?;
    }
    Ok(out)
}

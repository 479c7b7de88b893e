//! Relevance attention: a step-independent distribution over source
//! positions scoring similarity to the controlling aspects, plus the
//! blend-weight machinery that injects it into cross-attention.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{smoothing_matrix, Mask, ParamId, ParamSet, Tape, Tensor, Val};

/// Handles to the query/key maps applied to aspect and source embeddings.
/// Freshly initialized maps are exact identities with zero bias, which
/// makes the relevance score a raw dot product.
#[derive(Clone, Debug)]
pub struct RelevanceParams {
    pub q_w: ParamId,
    pub q_b: ParamId,
    pub k_w: ParamId,
    pub k_b: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RelevanceMode {
    ZeroShot,
    FewShot,
}

impl RelevanceParams {
    /// Register identity/zero-bias maps under the `relattn.` namespace.
    pub fn register(params: &mut ParamSet, d_model: usize) -> Self {
        RelevanceParams {
            q_w: params.register("relattn.q.w", Tensor::identity(d_model)),
            q_b: params.register("relattn.q.b", Tensor::zeros(1, d_model)),
            k_w: params.register("relattn.k.w", Tensor::identity(d_model)),
            k_b: params.register("relattn.k.b", Tensor::zeros(1, d_model)),
        }
    }

    /// Bind existing `relattn.` parameters, registering defaults if the
    /// checkpoint predates them.
    pub fn bind(params: &mut ParamSet, d_model: usize) -> Self {
        if params.id("relattn.q.w").is_some() {
            RelevanceParams {
                q_w: params.id("relattn.q.w").unwrap(),
                q_b: params.id("relattn.q.b").unwrap(),
                k_w: params.id("relattn.k.w").unwrap(),
                k_b: params.id("relattn.k.b").unwrap(),
            }
        } else {
            Self::register(params, d_model)
        }
    }

    /// Zero-shot means the maps are still the exact identity.
    pub fn mode(&self, params: &ParamSet) -> RelevanceMode {
        let d = params.value(self.q_w).rows();
        let ident = Tensor::identity(d);
        let zero = Tensor::zeros(1, d);
        let exact = params.value(self.q_w) == &ident
            && params.value(self.k_w) == &ident
            && params.value(self.q_b) == &zero
            && params.value(self.k_b) == &zero;
        if exact {
            RelevanceMode::ZeroShot
        } else {
            RelevanceMode::FewShot
        }
    }
}

/// A probability distribution over source positions; computed once per
/// example and reused at every decoding step.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RelevanceAttention {
    /// `1 x n` row over source positions.
    pub values: Tensor,
    pub sigma_used: Option<f64>,
    pub mask: Vec<bool>,
}

/// Tape-recorded relevance computation: map, dot, sum over aspect rows,
/// masked softmax, optional Gaussian smoothing.
pub fn compute_relevance_on<'t>(
    tape: &'t Tape,
    params: &ParamSet,
    rp: &RelevanceParams,
    r_ca: Val<'t>,
    r_d: Val<'t>,
    mask: &[bool],
    sigma: Option<f64>,
) -> Result<Val<'t>> {
    let (k, d) = r_ca.shape();
    let (n, d2) = r_d.shape();
    if k == 0 {
        return Err(Error::InvalidParameter(
            "relevance needs at least one aspect token".into(),
        ));
    }
    if d != d2 {
        return Err(Error::ShapeMismatch {
            op: "compute_relevance",
            lhs: (k, d),
            rhs: (n, d2),
        });
    }
    if mask.len() != n {
        return Err(Error::ShapeMismatch {
            op: "compute_relevance",
            lhs: (1, n),
            rhs: (1, mask.len()),
        });
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::DegenerateMask);
    }

    let q = r_ca
        .matmul(tape.param(params, rp.q_w))
        .add_row(tape.param(params, rp.q_b));
    let key = r_d
        .matmul(tape.param(params, rp.k_w))
        .add_row(tape.param(params, rp.k_b));
    let rel = q.matmul(key.t()); // k x n
    let ones = tape.leaf(Tensor::new(1, k, vec![1.0; k]));
    let summed = ones.matmul(rel); // 1 x n

    let row_mask = Mask::from_row(mask, 1);
    let mut attn = summed.softmax_rows(&row_mask)?;
    if let Some(s) = sigma {
        let a = smoothing_matrix(n, s, mask)?;
        attn = attn.matmul(tape.leaf(a.transpose())).normalize_rows(&row_mask)?;
    }
    Ok(attn)
}

/// Plain-tensor wrapper around [`compute_relevance_on`] on a scratch tape.
pub fn compute_relevance(
    params: &ParamSet,
    rp: &RelevanceParams,
    r_ca: &Tensor,
    r_d: &Tensor,
    mask: &[bool],
    sigma: Option<f64>,
) -> Result<RelevanceAttention> {
    let tape = Tape::new();
    let ca = tape.leaf(r_ca.clone());
    let d = tape.leaf(r_d.clone());
    let out = compute_relevance_on(&tape, params, rp, ca, d, mask, sigma)?;
    Ok(RelevanceAttention {
        values: out.value(),
        sigma_used: sigma,
        mask: mask.to_vec(),
    })
}

/// Broadcast one scalar control weight to every decoder layer and head.
pub fn blend_weight_zero_shot(
    w_rel: f64,
    n_layers: usize,
    n_heads: usize,
) -> Result<Vec<Vec<f64>>> {
    if !(0.0..=1.0).contains(&w_rel) {
        return Err(Error::InvalidParameter(format!(
            "w_rel must lie in [0,1], got {w_rel}"
        )));
    }
    Ok(vec![vec![w_rel; n_heads]; n_layers])
}

/// Convex blend of one attention row with the relevance row.
pub fn blend_rows(w_rel: f64, rel: &[f64], attn: &[f64]) -> Vec<f64> {
    debug_assert_eq!(rel.len(), attn.len());
    rel.iter()
        .zip(attn)
        .map(|(r, a)| w_rel * r + (1.0 - w_rel) * a)
        .collect()
}

/// Per-layer, per-head linear maps from pooled document/aspect
/// representations to a blend weight in (0,1).
#[derive(Clone, Debug)]
pub struct WrelPredictor {
    /// `[layer][head]` pairs of (weight `2d x 1`, bias `1x1`).
    pub heads: Vec<Vec<(ParamId, ParamId)>>,
}

impl WrelPredictor {
    /// Register zero-initialized predictors (every head starts at 0.5)
    /// under the `wrel.` namespace.
    pub fn register(params: &mut ParamSet, d_model: usize, n_layers: usize, n_heads: usize) -> Self {
        Self::build(params, d_model, n_layers, n_heads, false)
    }

    /// Bind existing `wrel.` parameters, registering defaults when absent.
    pub fn bind(params: &mut ParamSet, d_model: usize, n_layers: usize, n_heads: usize) -> Self {
        Self::build(params, d_model, n_layers, n_heads, true)
    }

    fn build(
        params: &mut ParamSet,
        d_model: usize,
        n_layers: usize,
        n_heads: usize,
        reuse: bool,
    ) -> Self {
        let heads = (0..n_layers)
            .map(|l| {
                (0..n_heads)
                    .map(|h| {
                        let wname = format!("wrel.{l}.{h}.w");
                        let bname = format!("wrel.{l}.{h}.b");
                        let w = match params.id(&wname) {
                            Some(id) if reuse => id,
                            _ => params.register(&wname, Tensor::zeros(2 * d_model, 1)),
                        };
                        let b = match params.id(&bname) {
                            Some(id) if reuse => id,
                            _ => params.register(&bname, Tensor::zeros(1, 1)),
                        };
                        (w, b)
                    })
                    .collect()
            })
            .collect();
        WrelPredictor { heads }
    }

    /// Tape-recorded prediction; differentiable end to end.
    pub fn predict_on<'t>(
        &self,
        tape: &'t Tape,
        params: &ParamSet,
        doc_repr: Val<'t>,
        ca_repr: Val<'t>,
    ) -> Vec<Vec<Val<'t>>> {
        let joint = doc_repr.concat_cols(ca_repr); // 1 x 2d
        self.heads
            .iter()
            .map(|layer| {
                layer
                    .iter()
                    .map(|&(w, b)| {
                        joint
                            .matmul(tape.param(params, w))
                            .add(tape.param(params, b))
                            .sigmoid()
                    })
                    .collect()
            })
            .collect()
    }

    /// Plain prediction on a scratch tape.
    pub fn predict(
        &self,
        params: &ParamSet,
        doc_repr: &Tensor,
        ca_repr: &Tensor,
    ) -> Vec<Vec<f64>> {
        let tape = Tape::new();
        let d = tape.leaf(doc_repr.clone());
        let c = tape.leaf(ca_repr.clone());
        self.predict_on(&tape, params, d, c)
            .into_iter()
            .map(|layer| layer.into_iter().map(|v| v.value().item()).collect())
            .collect()
    }
}

/// Mean of the unmasked rows of an embedding matrix, as a `1 x d` tensor.
pub fn masked_mean_rows(rows: &Tensor, mask: &[bool]) -> Result<Tensor> {
    if rows.rows() != mask.len() {
        return Err(Error::ShapeMismatch {
            op: "masked_mean_rows",
            lhs: rows.shape(),
            rhs: (mask.len(), rows.cols()),
        });
    }
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::DegenerateMask);
    }
    let weights: Vec<f64> = mask
        .iter()
        .map(|&m| if m { 1.0 / count as f64 } else { 0.0 })
        .collect();
    Tensor::new(1, mask.len(), weights).matmul(rows)
}

/// Same pooling as a tape operation (a constant-weight matmul).
pub fn masked_mean_rows_on<'t>(tape: &'t Tape, rows: Val<'t>, mask: &[bool]) -> Result<Val<'t>> {
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::DegenerateMask);
    }
    let weights: Vec<f64> = mask
        .iter()
        .map(|&m| if m { 1.0 / count as f64 } else { 0.0 })
        .collect();
    Ok(tape.leaf(Tensor::new(1, mask.len(), weights)).matmul(rows))
}

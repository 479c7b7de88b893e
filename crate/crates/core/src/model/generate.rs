//! Greedy decoding in the three input modes, with attention tracing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ParamSet, Tape, Tensor};
use crate::relevance::{
    blend_weight_zero_shot, compute_relevance, masked_mean_rows, RelevanceAttention,
};
use crate::text::{ControlledExample, Vocabulary, BOS, EOS};

use super::transformer::{CrossOverride, EncoderState, Model};

/// How the example reaches the encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Source document only.
    DocOnly,
    /// Controlling aspects prepended to the document with a separator.
    Prefix,
    /// Document only, with relevance attention blended into every
    /// cross-attention head.
    RelAttn,
}

/// Where the per-head blend weights come from.
#[derive(Clone, Debug)]
pub enum WeightSpec {
    /// One shared scalar for every layer and head.
    Scalar(f64),
    /// The model's trained per-head predictor.
    Predictor,
}

#[derive(Clone, Debug)]
pub struct ControlConfig {
    pub sigma: Option<f64>,
    pub weights: WeightSpec,
}

/// Token ids ready for the model.
#[derive(Clone, Debug)]
pub struct PreparedExample {
    pub doc_ids: Vec<usize>,
    pub aspect_ids: Vec<usize>,
}

impl PreparedExample {
    pub fn from_example(ex: &ControlledExample, vocab: &Vocabulary) -> Self {
        PreparedExample {
            doc_ids: vocab.encode(&ex.document),
            aspect_ids: vocab.encode(&ex.aspects),
        }
    }
}

/// Final (possibly blended) cross-attention rows per decoding step.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct AttentionRecord {
    /// `[step][layer][head]` distribution over source positions for the
    /// query that produced that step's token.
    pub steps: Vec<Vec<Vec<Vec<f64>>>>,
}

#[derive(Clone, Debug)]
pub struct GenerationOutput {
    /// Generated ids without BOS/EOS.
    pub token_ids: Vec<usize>,
    pub attention: AttentionRecord,
    /// Relevance distribution used for steering, when in relattn mode.
    pub relevance: Option<RelevanceAttention>,
    /// Blend weights per layer and head, when in relattn mode.
    pub head_weights: Option<Vec<Vec<f64>>>,
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in row.iter().enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

/// Resolve the control signal (relevance row + per-head weights) for an
/// encoded example.
pub fn resolve_control(
    model: &Model,
    params: &ParamSet,
    enc: &EncoderState,
    aspect_ids: &[usize],
    control: &ControlConfig,
) -> Result<(RelevanceAttention, Vec<Vec<f64>>)> {
    if aspect_ids.is_empty() {
        return Err(Error::InvalidParameter(
            "relattn mode needs at least one aspect token".into(),
        ));
    }
    let r_ca = model.embedding_rows(params, aspect_ids);
    let rel = compute_relevance(
        params,
        &model.relevance,
        &r_ca,
        &enc.r_d,
        &enc.src_mask,
        control.sigma,
    )?;
    let cfg = model.config();
    let weights = match &control.weights {
        WeightSpec::Scalar(w) => blend_weight_zero_shot(*w, cfg.n_dec_layers, cfg.n_heads)?,
        WeightSpec::Predictor => {
            let doc_repr = masked_mean_rows(&enc.r_d, &enc.src_mask)?;
            let ca_repr = masked_mean_rows(&r_ca, &vec![true; r_ca.rows()])?;
            model.wrel.predict(params, &doc_repr, &ca_repr)
        }
    };
    Ok((rel, weights))
}

/// Build the source id sequence for a mode. Prefix mode inserts the
/// aspects and an EOS separator before the document.
pub fn source_ids(ex: &PreparedExample, mode: Mode) -> Vec<usize> {
    match mode {
        Mode::DocOnly | Mode::RelAttn => ex.doc_ids.clone(),
        Mode::Prefix => {
            let mut ids = ex.aspect_ids.clone();
            ids.push(EOS);
            ids.extend_from_slice(&ex.doc_ids);
            ids
        }
    }
}

/// Greedy decoding from BOS until EOS or the decoder length limit.
pub fn generate(
    model: &Model,
    params: &ParamSet,
    ex: &PreparedExample,
    mode: Mode,
    control: Option<&ControlConfig>,
) -> Result<GenerationOutput> {
    let enc = model.encode(params, &source_ids(ex, mode))?;
    generate_from_state(model, params, &enc, ex, mode, control)
}

/// Same as [`generate`] but reusing a cached encoder state (candidate
/// sweeps encode once and decode many times).
pub fn generate_from_state(
    model: &Model,
    params: &ParamSet,
    enc: &EncoderState,
    ex: &PreparedExample,
    mode: Mode,
    control: Option<&ControlConfig>,
) -> Result<GenerationOutput> {
    let resolved = match mode {
        Mode::RelAttn => {
            let Some(c) = control else {
                return Err(Error::Config(
                    "relattn mode requires a control configuration".into(),
                ));
            };
            Some(resolve_control(model, params, enc, &ex.aspect_ids, c)?)
        }
        Mode::DocOnly | Mode::Prefix => None,
    };

    let cfg = model.config();
    let mut tgt = vec![BOS];
    let mut record = AttentionRecord::default();
    let mut out_ids = Vec::new();

    for _ in 0..cfg.max_tgt_len {
        let tape = Tape::new();
        let h_enc = tape.leaf(enc.h_enc.clone());
        let ctrl = resolved.as_ref().map(|(rel, weights)| CrossOverride {
            rel: tape.leaf(rel.values.clone()),
            weights: weights
                .iter()
                .map(|layer| {
                    layer
                        .iter()
                        .map(|&w| tape.leaf(Tensor::scalar(w)))
                        .collect()
                })
                .collect(),
        });
        let out = model.decode_on(&tape, params, h_enc, &enc.src_mask, &tgt, ctrl.as_ref())?;

        let logits = out.logits.value();
        let last = logits.rows() - 1;
        let next = argmax(logits.row_slice(last));

        let step_rows: Vec<Vec<Vec<f64>>> = out
            .cross_attn
            .iter()
            .map(|layer| {
                layer
                    .iter()
                    .map(|head| head.value().row_slice(last).to_vec())
                    .collect()
            })
            .collect();
        record.steps.push(step_rows);

        if next == EOS {
            break;
        }
        out_ids.push(next);
        tgt.push(next);
    }

    let (relevance, head_weights) = match resolved {
        Some((rel, weights)) => (Some(rel), Some(weights)),
        None => (None, None),
    };
    Ok(GenerationOutput {
        token_ids: out_ids,
        attention: record,
        relevance,
        head_weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn tiny_model(seed: u64) -> (Model, ParamSet) {
        let cfg = ModelConfig {
            vocab_size: 14,
            d_model: 16,
            n_heads: 2,
            n_enc_layers: 1,
            n_dec_layers: 2,
            d_ff: 24,
            max_src_len: 20,
            max_tgt_len: 6,
        };
        let mut params = ParamSet::new();
        let model = Model::new(cfg, seed, &mut params).unwrap();
        (model, params)
    }

    fn ex() -> PreparedExample {
        PreparedExample {
            doc_ids: vec![4, 5, 6, 7, 8, 9],
            aspect_ids: vec![5, 7],
        }
    }

    #[test]
    fn honors_length_limit() {
        let (model, params) = tiny_model(1);
        let out = generate(&model, &params, &ex(), Mode::DocOnly, None).unwrap();
        assert!(out.token_ids.len() <= model.config().max_tgt_len);
    }

    #[test]
    fn relattn_without_control_is_config_error() {
        let (model, params) = tiny_model(1);
        let err = generate(&model, &params, &ex(), Mode::RelAttn, None).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn zero_weight_equals_doc_only_exactly() {
        for seed in 0..6 {
            let (model, params) = tiny_model(seed);
            let base = generate(&model, &params, &ex(), Mode::DocOnly, None).unwrap();
            let ctrl = ControlConfig {
                sigma: Some(1.0),
                weights: WeightSpec::Scalar(0.0),
            };
            let steered =
                generate(&model, &params, &ex(), Mode::RelAttn, Some(&ctrl)).unwrap();
            assert_eq!(base.token_ids, steered.token_ids, "seed {seed}");
        }
    }

    #[test]
    fn full_weight_attention_equals_relevance() {
        let (model, params) = tiny_model(3);
        let ctrl = ControlConfig {
            sigma: None,
            weights: WeightSpec::Scalar(1.0),
        };
        let out = generate(&model, &params, &ex(), Mode::RelAttn, Some(&ctrl)).unwrap();
        let rel = out.relevance.as_ref().unwrap();
        for step in &out.attention.steps {
            for layer in step {
                for head in layer {
                    for (a, b) in head.iter().zip(rel.values.data()) {
                        assert_eq!(a, b, "w=1 attention must equal the relevance row");
                    }
                }
            }
        }
    }

    #[test]
    fn prefix_mode_prepends_aspects() {
        let e = ex();
        let ids = source_ids(&e, Mode::Prefix);
        assert_eq!(&ids[..2], &[5, 7]);
        assert_eq!(ids[2], EOS);
        assert_eq!(&ids[3..], e.doc_ids.as_slice());
        assert_eq!(source_ids(&e, Mode::DocOnly), e.doc_ids);
    }

    #[test]
    fn trace_rows_sum_to_one() {
        let (model, params) = tiny_model(9);
        let ctrl = ControlConfig {
            sigma: Some(1.0),
            weights: WeightSpec::Scalar(0.25),
        };
        let out = generate(&model, &params, &ex(), Mode::RelAttn, Some(&ctrl)).unwrap();
        assert!(!out.attention.steps.is_empty());
        for step in &out.attention.steps {
            for layer in step {
                for head in layer {
                    let sum: f64 = head.iter().sum();
                    assert!((sum - 1.0).abs() < 1e-9);
                    assert!(head.iter().all(|&v| v >= 0.0));
                }
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let (model, params) = tiny_model(4);
        let a = generate(&model, &params, &ex(), Mode::Prefix, None).unwrap();
        let b = generate(&model, &params, &ex(), Mode::Prefix, None).unwrap();
        assert_eq!(a.token_ids, b.token_ids);
    }

    #[test]
    fn predictor_weights_flow_into_generation() {
        let (model, params) = tiny_model(5);
        let ctrl = ControlConfig {
            sigma: None,
            weights: WeightSpec::Predictor,
        };
        let out = generate(&model, &params, &ex(), Mode::RelAttn, Some(&ctrl)).unwrap();
        let w = out.head_weights.unwrap();
        assert_eq!(w.len(), model.config().n_dec_layers);
        // zero-initialized predictor puts every head at 0.5
        assert!(w.iter().all(|l| l.iter().all(|&v| v == 0.5)));
    }
}

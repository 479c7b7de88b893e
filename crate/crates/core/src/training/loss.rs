use crate::error::{Error, Result};
use crate::model::{source_ids, ControlConfig, Mode, Model, PreparedExample, WeightSpec};
use crate::numerics::{ParamSet, Tape, Tensor, Val};
use crate::relevance::{compute_relevance_on, masked_mean_rows_on};
use crate::text::BOS;

/// Mean token cross-entropy of a teacher-forced pass. When a control
/// configuration is present the forward path runs through the relevance
/// computation, the weight predictor and the blend, so gradients reach
/// every plug-in parameter.
pub fn teacher_forced_loss_on<'t>(
    tape: &'t Tape,
    model: &Model,
    params: &ParamSet,
    ex: &PreparedExample,
    target: &[usize],
    mode: Mode,
    control: Option<&ControlConfig>,
) -> Result<Val<'t>> {
    if target.is_empty() {
        return Err(Error::InvalidParameter(
            "teacher forcing needs a non-empty target".into(),
        ));
    }
    let cfg = model.config();
    let mut src = source_ids(ex, mode);
    if src.len() > cfg.max_src_len {
        src.truncate(cfg.max_src_len);
    }
    let (h_enc, src_mask) = model.encode_on(tape, params, &src)?;

    let keep = target.len().min(cfg.max_tgt_len - 1);
    let mut tgt_in = Vec::with_capacity(keep + 1);
    tgt_in.push(BOS);
    tgt_in.extend_from_slice(&target[..keep]);
    let mut tgt_out: Vec<Option<usize>> = target[..keep].iter().map(|&t| Some(t)).collect();
    tgt_out.push(Some(crate::text::EOS));

    let ctrl = match (mode, control) {
        (Mode::RelAttn, None) => {
            return Err(Error::Config(
                "relattn training requires a control configuration".into(),
            ))
        }
        (Mode::RelAttn, Some(c)) => {
            if ex.aspect_ids.is_empty() {
                return Err(Error::InvalidParameter(
                    "relattn training needs aspect tokens".into(),
                ));
            }
            let r_ca = model.embedding_rows_on(tape, params, &ex.aspect_ids);
            let r_d = model.embedding_rows_on(tape, params, &src);
            let rel =
                compute_relevance_on(tape, params, &model.relevance, r_ca, r_d, &src_mask, c.sigma)?;
            let weights: Vec<Vec<Val<'t>>> = match &c.weights {
                WeightSpec::Scalar(w) => {
                    if !(0.0..=1.0).contains(w) {
                        return Err(Error::InvalidParameter(format!(
                            "w_rel must lie in [0,1], got {w}"
                        )));
                    }
                    (0..cfg.n_dec_layers)
                        .map(|_| {
                            (0..cfg.n_heads)
                                .map(|_| tape.leaf(Tensor::scalar(*w)))
                                .collect()
                        })
                        .collect()
                }
                WeightSpec::Predictor => {
                    let doc_repr = masked_mean_rows_on(tape, r_d, &src_mask)?;
                    let all = vec![true; ex.aspect_ids.len()];
                    let ca_repr = masked_mean_rows_on(tape, r_ca, &all)?;
                    model.wrel.predict_on(tape, params, doc_repr, ca_repr)
                }
            };
            Some(crate::model::CrossOverride { rel, weights })
        }
        _ => None,
    };

    let out = model.decode_on(tape, params, h_enc, &src_mask, &tgt_in, ctrl.as_ref())?;
    out.logits.cross_entropy_mean(&tgt_out)
}

/// Convenience wrapper that evaluates the loss without keeping the tape.
pub fn teacher_forced_loss(
    model: &Model,
    params: &ParamSet,
    ex: &PreparedExample,
    target: &[usize],
    mode: Mode,
    control: Option<&ControlConfig>,
) -> Result<f64> {
    let tape = Tape::new();
    let loss = teacher_forced_loss_on(&tape, model, params, ex, target, mode, control)?;
    Ok(loss.value().item())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::numerics::{grad_check_ids, loss_fn, ParamId};
    use approx::assert_abs_diff_eq;

    fn tiny() -> (Model, ParamSet) {
        let cfg = ModelConfig {
            vocab_size: 12,
            d_model: 8,
            n_heads: 2,
            n_enc_layers: 1,
            n_dec_layers: 1,
            d_ff: 12,
            max_src_len: 10,
            max_tgt_len: 6,
        };
        let mut params = ParamSet::new();
        let model = Model::new(cfg, 17, &mut params).unwrap();
        (model, params)
    }

    fn sample() -> (PreparedExample, Vec<usize>) {
        (
            PreparedExample {
                doc_ids: vec![4, 5, 6, 7],
                aspect_ids: vec![5],
            },
            vec![5, 6],
        )
    }

    #[test]
    fn uniform_logits_loss_is_ln_vocab() {
        // zero output projection + zero bias forces uniform logits
        let (model, mut params) = tiny();
        let w = params.id("out.w").unwrap();
        let shape = params.value(w).shape();
        params.set_value(w, Tensor::zeros(shape.0, shape.1)).unwrap();
        let (ex, tgt) = sample();
        let loss =
            teacher_forced_loss(&model, &params, &ex, &tgt, Mode::DocOnly, None).unwrap();
        assert_abs_diff_eq!(loss, (12f64).ln(), epsilon = 1e-12);
    }

    #[test]
    fn missing_target_is_rejected() {
        let (model, params) = tiny();
        let (ex, _) = sample();
        let err =
            teacher_forced_loss(&model, &params, &ex, &[], Mode::DocOnly, None).unwrap_err();
        assert!(matches!(err, Error::InvalidParameter(_)));
    }

    #[test]
    fn relevance_map_gradient_matches_finite_differences() {
        let (model, mut params) = tiny();
        let (ex, tgt) = sample();
        let ctrl = ControlConfig {
            sigma: Some(1.0),
            weights: WeightSpec::Predictor,
        };
        let model2 = model.clone();
        let f = loss_fn(move |tape, ps| {
            teacher_forced_loss_on(tape, &model2, ps, &ex, &tgt, Mode::RelAttn, Some(&ctrl))
        });
        let ids: Vec<ParamId> = model.control_ids(&params);
        let err = grad_check_ids(f, &mut params, &ids).unwrap();
        assert!(err < 1e-3, "control-parameter grad-check error {err}");
    }
}

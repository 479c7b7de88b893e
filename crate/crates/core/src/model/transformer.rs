//! Tiny pre-LN encoder-decoder transformer on the gradient tape, with an
//! override point in every decoder cross-attention head.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{Mask, ParamId, ParamSet, Tape, Tensor, Val};
use crate::relevance::{RelevanceParams, WrelPredictor};
use crate::text::PAD;

use super::config::ModelConfig;

#[derive(Clone, Debug)]
struct HeadIds {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
}

#[derive(Clone, Debug)]
struct AttnIds {
    heads: Vec<HeadIds>,
    wo: ParamId,
    bo: ParamId,
}

#[derive(Clone, Debug)]
struct LnIds {
    g: ParamId,
    b: ParamId,
}

#[derive(Clone, Debug)]
struct FfIds {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Clone, Debug)]
struct EncLayerIds {
    ln1: LnIds,
    attn: AttnIds,
    ln2: LnIds,
    ff: FfIds,
}

#[derive(Clone, Debug)]
struct DecLayerIds {
    ln1: LnIds,
    self_attn: AttnIds,
    ln2: LnIds,
    cross_attn: AttnIds,
    ln3: LnIds,
    ff: FfIds,
}

/// The backbone plus the relevance maps and per-head weight predictor.
/// Holds parameter handles only; values live in the [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Model {
    cfg: ModelConfig,
    emb: ParamId,
    enc_layers: Vec<EncLayerIds>,
    enc_ln: LnIds,
    dec_layers: Vec<DecLayerIds>,
    dec_ln: LnIds,
    out_w: ParamId,
    out_b: ParamId,
    pos: Tensor,
    pub relevance: RelevanceParams,
    pub wrel: WrelPredictor,
}

/// Encoder output cached per example and shared across a candidate sweep.
#[derive(Clone, Debug)]
pub struct EncoderState {
    pub h_enc: Tensor,
    pub src_mask: Vec<bool>,
    pub src_ids: Vec<usize>,
    /// Input token embeddings of the source, the `r_d` of the relevance
    /// computation.
    pub r_d: Tensor,
    pub truncated: bool,
}

/// Per-head blend override injected into every decoder cross-attention.
pub struct CrossOverride<'t> {
    /// `1 x n` relevance row over source positions.
    pub rel: Val<'t>,
    /// `[layer][head]` blend weights as `1x1` nodes.
    pub weights: Vec<Vec<Val<'t>>>,
}

/// Decoder forward output: logits plus the final (possibly blended)
/// cross-attention matrices per layer and head.
pub struct DecodeOut<'t> {
    pub logits: Val<'t>,
    /// `[layer][head]`, each `m x n` over source positions.
    pub cross_attn: Vec<Vec<Val<'t>>>,
}

enum Init {
    Fresh(ChaCha8Rng),
    Bind,
}

struct Builder<'p> {
    params: &'p mut ParamSet,
    init: Init,
    missing: Vec<String>,
}

impl<'p> Builder<'p> {
    fn tensor(&mut self, name: &str, make: impl FnOnce(&mut ChaCha8Rng) -> Tensor) -> ParamId {
        match &mut self.init {
            Init::Fresh(rng) => self.params.register(name, make(rng)),
            Init::Bind => match self.params.id(name) {
                Some(id) => id,
                None => {
                    self.missing.push(name.to_string());
                    // placeholder so binding can continue collecting names
                    self.params.register(name, Tensor::zeros(1, 1))
                }
            },
        }
    }

    fn xavier(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        self.tensor(name, |rng| {
            let a = (6.0 / (rows + cols) as f64).sqrt();
            Tensor::new(
                rows,
                cols,
                (0..rows * cols).map(|_| rng.gen_range(-a..a)).collect(),
            )
        })
    }

    fn zeros(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        self.tensor(name, |_| Tensor::zeros(rows, cols))
    }

    fn ones_row(&mut self, name: &str, cols: usize) -> ParamId {
        self.tensor(name, |_| Tensor::new(1, cols, vec![1.0; cols]))
    }

    fn ln(&mut self, prefix: &str, d: usize) -> LnIds {
        LnIds {
            g: self.ones_row(&format!("{prefix}.g"), d),
            b: self.zeros(&format!("{prefix}.b"), 1, d),
        }
    }

    fn attn(&mut self, prefix: &str, d: usize, n_heads: usize) -> AttnIds {
        let dh = d / n_heads;
        let heads = (0..n_heads)
            .map(|h| HeadIds {
                wq: self.xavier(&format!("{prefix}.h{h}.wq"), d, dh),
                wk: self.xavier(&format!("{prefix}.h{h}.wk"), d, dh),
                wv: self.xavier(&format!("{prefix}.h{h}.wv"), d, dh),
            })
            .collect();
        AttnIds {
            heads,
            wo: self.xavier(&format!("{prefix}.wo"), d, d),
            bo: self.zeros(&format!("{prefix}.bo"), 1, d),
        }
    }

    fn ff(&mut self, prefix: &str, d: usize, d_ff: usize) -> FfIds {
        FfIds {
            w1: self.xavier(&format!("{prefix}.w1"), d, d_ff),
            b1: self.zeros(&format!("{prefix}.b1"), 1, d_ff),
            w2: self.xavier(&format!("{prefix}.w2"), d_ff, d),
            b2: self.zeros(&format!("{prefix}.b2"), 1, d),
        }
    }
}

/// Sinusoidal positional encodings, `max_len x d`.
fn positional_encoding(max_len: usize, d: usize) -> Tensor {
    let mut pe = Tensor::zeros(max_len, d);
    for p in 0..max_len {
        for i in 0..d {
            let exponent = (2 * (i / 2)) as f64 / d as f64;
            let angle = p as f64 / 10000f64.powf(exponent);
            let v = if i % 2 == 0 { angle.sin() } else { angle.cos() };
            pe.set(p, i, v);
        }
    }
    pe
}

impl Model {
    /// Fresh random initialization; the relevance maps start as exact
    /// identities and the weight predictor at zero.
    pub fn new(cfg: ModelConfig, seed: u64, params: &mut ParamSet) -> Result<Model> {
        cfg.validate()?;
        Self::build(
            cfg,
            params,
            Init::Fresh(ChaCha8Rng::seed_from_u64(seed)),
        )
    }

    /// Bind to parameters loaded from a checkpoint. Backbone tensors must
    /// all be present; missing relevance/predictor tensors are created at
    /// their defaults so a plain backbone checkpoint still loads.
    pub fn bind(cfg: ModelConfig, params: &mut ParamSet) -> Result<Model> {
        cfg.validate()?;
        Self::build(cfg, params, Init::Bind)
    }

    fn build(cfg: ModelConfig, params: &mut ParamSet, init: Init) -> Result<Model> {
        let d = cfg.d_model;
        let mut b = Builder {
            params,
            init,
            missing: Vec::new(),
        };
        let emb = b.tensor("emb", |rng| {
            Tensor::new(
                cfg.vocab_size,
                d,
                (0..cfg.vocab_size * d)
                    .map(|_| rng.gen_range(-0.1..0.1))
                    .collect(),
            )
        });
        let enc_layers = (0..cfg.n_enc_layers)
            .map(|l| EncLayerIds {
                ln1: b.ln(&format!("enc.{l}.ln1"), d),
                attn: b.attn(&format!("enc.{l}.attn"), d, cfg.n_heads),
                ln2: b.ln(&format!("enc.{l}.ln2"), d),
                ff: b.ff(&format!("enc.{l}.ff"), d, cfg.d_ff),
            })
            .collect();
        let enc_ln = b.ln("enc.ln", d);
        let dec_layers = (0..cfg.n_dec_layers)
            .map(|l| DecLayerIds {
                ln1: b.ln(&format!("dec.{l}.ln1"), d),
                self_attn: b.attn(&format!("dec.{l}.self"), d, cfg.n_heads),
                ln2: b.ln(&format!("dec.{l}.ln2"), d),
                cross_attn: b.attn(&format!("dec.{l}.cross"), d, cfg.n_heads),
                ln3: b.ln(&format!("dec.{l}.ln3"), d),
                ff: b.ff(&format!("dec.{l}.ff"), d, cfg.d_ff),
            })
            .collect();
        let dec_ln = b.ln("dec.ln", d);
        let out_w = b.xavier("out.w", d, cfg.vocab_size);
        let out_b = b.zeros("out.b", 1, cfg.vocab_size);

        if !b.missing.is_empty() {
            return Err(Error::Data {
                line: None,
                msg: format!("checkpoint is missing backbone tensors: {:?}", b.missing),
            });
        }

        let fresh = matches!(b.init, Init::Fresh(_));
        let relevance = if fresh {
            RelevanceParams::register(b.params, d)
        } else {
            RelevanceParams::bind(b.params, d)
        };
        let wrel = if fresh {
            WrelPredictor::register(b.params, d, cfg.n_dec_layers, cfg.n_heads)
        } else {
            WrelPredictor::bind(b.params, d, cfg.n_dec_layers, cfg.n_heads)
        };

        let pos = positional_encoding(cfg.max_src_len.max(cfg.max_tgt_len + 1), d);
        Ok(Model {
            cfg,
            emb,
            enc_layers,
            enc_ln,
            dec_layers,
            dec_ln,
            out_w,
            out_b,
            pos,
            relevance,
            wrel,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Ids of every backbone parameter (everything outside the
    /// `relattn.`/`wrel.` namespaces).
    pub fn backbone_ids(&self, params: &ParamSet) -> Vec<ParamId> {
        params
            .ids()
            .filter(|&id| {
                let n = params.name(id);
                !n.starts_with("relattn.") && !n.starts_with("wrel.")
            })
            .collect()
    }

    /// Ids of the plug-in parameters: relevance maps plus weight predictor.
    pub fn control_ids(&self, params: &ParamSet) -> Vec<ParamId> {
        params
            .ids()
            .filter(|&id| {
                let n = params.name(id);
                n.starts_with("relattn.") || n.starts_with("wrel.")
            })
            .collect()
    }

    /// Raw input-embedding rows for a token id sequence (no scaling, no
    /// positions) — the representations the relevance computation uses.
    pub fn embedding_rows(&self, params: &ParamSet, ids: &[usize]) -> Tensor {
        let tape = Tape::new();
        tape.param(params, self.emb).gather(ids).value()
    }

    /// Same lookup recorded on a live tape so gradients reach the
    /// embedding table.
    pub fn embedding_rows_on<'t>(
        &self,
        tape: &'t Tape,
        params: &ParamSet,
        ids: &[usize],
    ) -> Val<'t> {
        tape.param(params, self.emb).gather(ids)
    }

    /// Token embeddings (with position added) for a prepared id sequence.
    fn embed<'t>(&self, tape: &'t Tape, params: &ParamSet, ids: &[usize]) -> Val<'t> {
        let scale = (self.cfg.d_model as f64).sqrt();
        let tok = tape.param(params, self.emb).gather(ids).scale(scale);
        let pos_rows: Vec<usize> = (0..ids.len()).collect();
        let pos = tape.leaf(self.pos.clone()).gather(&pos_rows);
        tok.add(pos)
    }

    fn layer_norm<'t>(&self, tape: &'t Tape, params: &ParamSet, x: Val<'t>, ln: &LnIds) -> Val<'t> {
        x.layer_norm_rows(1e-5)
            .mul_row(tape.param(params, ln.g))
            .add_row(tape.param(params, ln.b))
    }

    fn feed_forward<'t>(
        &self,
        tape: &'t Tape,
        params: &ParamSet,
        x: Val<'t>,
        ff: &FfIds,
    ) -> Val<'t> {
        x.matmul(tape.param(params, ff.w1))
            .add_row(tape.param(params, ff.b1))
            .gelu()
            .matmul(tape.param(params, ff.w2))
            .add_row(tape.param(params, ff.b2))
    }

    /// Multi-head attention. `queries_from` attends over `keys_from`;
    /// `override_for_layer` blends each head's distribution with the
    /// relevance row. Returns the output and the per-head final attention.
    #[allow(clippy::too_many_arguments)]
    fn attention<'t>(
        &self,
        tape: &'t Tape,
        params: &ParamSet,
        attn: &AttnIds,
        queries_from: Val<'t>,
        keys_from: Val<'t>,
        mask: &Mask,
        override_weights: Option<(&Val<'t>, &[Val<'t>])>,
    ) -> Result<(Val<'t>, Vec<Val<'t>>)> {
        let dh = self.cfg.d_head();
        let scale = 1.0 / (dh as f64).sqrt();
        let m = queries_from.shape().0;
        let mut head_outs: Vec<Val<'t>> = Vec::with_capacity(attn.heads.len());
        let mut head_attns: Vec<Val<'t>> = Vec::with_capacity(attn.heads.len());
        for (h, head) in attn.heads.iter().enumerate() {
            let q = queries_from.matmul(tape.param(params, head.wq));
            let k = keys_from.matmul(tape.param(params, head.wk));
            let v = keys_from.matmul(tape.param(params, head.wv));
            let scores = q.matmul(k.t()).scale(scale);
            let mut attn_rows = scores.softmax_rows(mask)?;
            if let Some((rel, weights)) = override_weights {
                let w = weights[h];
                let rel_rows = rel.repeat_rows(m);
                attn_rows = rel_rows
                    .mul_scalar(w)
                    .add(attn_rows.mul_scalar(w.affine(-1.0, 1.0)));
            }
            head_attns.push(attn_rows);
            head_outs.push(attn_rows.matmul(v));
        }
        let mut concat = head_outs[0];
        for h in head_outs.into_iter().skip(1) {
            concat = concat.concat_cols(h);
        }
        let out = concat
            .matmul(tape.param(params, attn.wo))
            .add_row(tape.param(params, attn.bo));
        Ok((out, head_attns))
    }

    /// Encoder forward on an existing tape.
    pub fn encode_on<'t>(
        &self,
        tape: &'t Tape,
        params: &ParamSet,
        src_ids: &[usize],
    ) -> Result<(Val<'t>, Vec<bool>)> {
        if src_ids.is_empty() {
            return Err(Error::data("cannot encode an empty source"));
        }
        let src_mask: Vec<bool> = src_ids.iter().map(|&t| t != PAD).collect();
        if !src_mask.iter().any(|&m| m) {
            return Err(Error::DegenerateMask);
        }
        let n = src_ids.len();
        let mask = Mask::from_row(&src_mask, n);
        let mut x = self.embed(tape, params, src_ids);
        for layer in &self.enc_layers {
            let normed = self.layer_norm(tape, params, x, &layer.ln1);
            let (attn_out, _) =
                self.attention(tape, params, &layer.attn, normed, normed, &mask, None)?;
            x = x.add(attn_out);
            let normed = self.layer_norm(tape, params, x, &layer.ln2);
            x = x.add(self.feed_forward(tape, params, normed, &layer.ff));
        }
        x = self.layer_norm(tape, params, x, &self.enc_ln);
        Ok((x, src_mask))
    }

    /// Encode and extract plain tensors for reuse across generations.
    /// Overlength inputs are truncated to `max_src_len`.
    pub fn encode(&self, params: &ParamSet, src_ids: &[usize]) -> Result<EncoderState> {
        let truncated = src_ids.len() > self.cfg.max_src_len;
        let ids = if truncated {
            log::warn!(
                "source length {} exceeds max_src_len {}; truncating",
                src_ids.len(),
                self.cfg.max_src_len
            );
            &src_ids[..self.cfg.max_src_len]
        } else {
            src_ids
        };
        let tape = Tape::new();
        let (h, mask) = self.encode_on(&tape, params, ids)?;
        let r_d = tape.param(params, self.emb).gather(ids).value();
        Ok(EncoderState {
            h_enc: h.value(),
            src_mask: mask,
            src_ids: ids.to_vec(),
            r_d,
            truncated,
        })
    }

    /// Decoder forward over a full target prefix, with optional
    /// cross-attention override. `h_enc` may be a cached constant leaf or
    /// a live encoder output on the same tape.
    pub fn decode_on<'t>(
        &self,
        tape: &'t Tape,
        params: &ParamSet,
        h_enc: Val<'t>,
        src_mask: &[bool],
        tgt_ids: &[usize],
        ctrl: Option<&CrossOverride<'t>>,
    ) -> Result<DecodeOut<'t>> {
        if tgt_ids.is_empty() {
            return Err(Error::data("decoder needs at least one target position"));
        }
        let n = h_enc.shape().0;
        if src_mask.len() != n {
            return Err(Error::ShapeMismatch {
                op: "decode_on",
                lhs: (1, src_mask.len()),
                rhs: (1, n),
            });
        }
        if let Some(c) = ctrl {
            let (r, cols) = c.rel.shape();
            if r != 1 || cols != n {
                return Err(Error::ShapeMismatch {
                    op: "cross_attention override",
                    lhs: (r, cols),
                    rhs: (1, n),
                });
            }
            if c.weights.len() != self.cfg.n_dec_layers
                || c.weights.iter().any(|l| l.len() != self.cfg.n_heads)
            {
                return Err(Error::Config(
                    "override weights do not match decoder layers/heads".into(),
                ));
            }
        }
        let m = tgt_ids.len();
        let causal = Mask::causal(m);
        let cross_mask = Mask::from_row(src_mask, m);
        let mut x = self.embed(tape, params, tgt_ids);
        let mut cross_records = Vec::with_capacity(self.dec_layers.len());
        for (l, layer) in self.dec_layers.iter().enumerate() {
            let normed = self.layer_norm(tape, params, x, &layer.ln1);
            let (self_out, _) = self.attention(
                tape,
                params,
                &layer.self_attn,
                normed,
                normed,
                &causal,
                None,
            )?;
            x = x.add(self_out);

            let normed = self.layer_norm(tape, params, x, &layer.ln2);
            let ov = ctrl.map(|c| (&c.rel, c.weights[l].as_slice()));
            let (cross_out, attns) = self.attention(
                tape,
                params,
                &layer.cross_attn,
                normed,
                h_enc,
                &cross_mask,
                ov,
            )?;
            x = x.add(cross_out);
            cross_records.push(attns);

            let normed = self.layer_norm(tape, params, x, &layer.ln3);
            x = x.add(self.feed_forward(tape, params, normed, &layer.ff));
        }
        x = self.layer_norm(tape, params, x, &self.dec_ln);
        let logits = x
            .matmul(tape.param(params, self.out_w))
            .add_row(tape.param(params, self.out_b));
        Ok(DecodeOut {
            logits,
            cross_attn: cross_records,
        })
    }
}

//! Graph construction for the base transformer, adapter stack, and
//! attention-fusion routing.

use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{CoreError, CoreResult};
use crate::model::config::{ModelConfig, Variant};
use crate::model::params::{
    AdapterP, AttnP, BaseP, Builder, DecLayerP, EncLayerP, FusionP, LayerNormP, LinearP,
    ParamStore,
};
use crate::numerics::real::Real;
use crate::numerics::tape::{Tape, Var};
use crate::numerics::tensor::Tensor;
use crate::rng::Rng;

/// The complete model: frozen-or-trainable groups are decided per training
/// stage by name prefix, not by structure.
#[derive(Debug, Clone)]
pub struct FusedModel<F> {
    pub config: ModelConfig,
    pub store: ParamStore<F>,
    pub base: BaseP,
    pub enc_adapters: Vec<AdapterP>,
    pub dec_adapters: Vec<AdapterP>,
    pub enc_fusion: Vec<FusionP>,
    pub dec_fusion: Vec<FusionP>,
}

impl<F: Real> FusedModel<F> {
    /// Fresh model with seed-deterministic initialization. Which parameter
    /// groups exist follows the variant.
    pub fn new(config: ModelConfig, seed: u64) -> CoreResult<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = Rng::new(seed);
        let d = config.d_model;
        let mut b = Builder {
            store: &mut store,
            rng: &mut rng,
        };

        let tok_embed = b.store.add(
            alloc::string::String::from("base.tok_embed"),
            Tensor::randn(alloc::vec![config.vocab_size, d], 0.02, b.rng),
        );
        let pos_embed = b.store.add(
            alloc::string::String::from("base.pos_embed"),
            Tensor::randn(alloc::vec![config.max_seq_len, d], 0.02, b.rng),
        );
        let enc: Vec<EncLayerP> = (0..config.n_enc_layers)
            .map(|l| b.enc_layer(&alloc::format!("base.enc{l}"), d, config.d_ff))
            .collect();
        let enc_ln = b.layer_norm("base.enc_ln", d);
        let dec: Vec<DecLayerP> = (0..config.n_dec_layers)
            .map(|l| b.dec_layer(&alloc::format!("base.dec{l}"), d, config.d_ff))
            .collect();
        let dec_ln = b.layer_norm("base.dec_ln", d);
        let base = BaseP {
            tok_embed,
            pos_embed,
            enc,
            enc_ln,
            dec,
            dec_ln,
        };

        let with_adapters = config.variant != Variant::BaseOnly;
        let with_fusion = config.variant == Variant::Fusion;
        let dec_routed = config.fusion_in_decoder;

        let enc_adapters = if with_adapters {
            (0..config.n_enc_layers)
                .map(|l| b.adapter(&alloc::format!("adapter.enc{l}"), d, config.adapter_bottleneck))
                .collect()
        } else {
            Vec::new()
        };
        let dec_adapters = if with_adapters && dec_routed {
            (0..config.n_dec_layers)
                .map(|l| b.adapter(&alloc::format!("adapter.dec{l}"), d, config.adapter_bottleneck))
                .collect()
        } else {
            Vec::new()
        };
        let enc_fusion = if with_fusion {
            (0..config.n_enc_layers)
                .map(|l| b.fusion(&alloc::format!("fusion.enc{l}"), d))
                .collect()
        } else {
            Vec::new()
        };
        let dec_fusion = if with_fusion && dec_routed {
            (0..config.n_dec_layers)
                .map(|l| b.fusion(&alloc::format!("fusion.dec{l}"), d))
                .collect()
        } else {
            Vec::new()
        };

        Ok(FusedModel {
            config,
            store,
            base,
            enc_adapters,
            dec_adapters,
            enc_fusion,
            dec_fusion,
        })
    }

    /// Copies every parameter whose name starts with `prefix` from another
    /// store (e.g., pulling frozen base weights into a fusion-variant model).
    pub fn adopt_group(&mut self, other: &ParamStore<F>, prefix: &str) -> CoreResult<usize> {
        let mut copied = 0usize;
        for id in self.store.ids().collect::<Vec<_>>() {
            let name = alloc::string::String::from(self.store.name(id));
            if !name.starts_with(prefix) {
                continue;
            }
            let src = other.find(&name).ok_or_else(|| {
                CoreError::MissingDependency(alloc::format!("parameter {name} absent from source"))
            })?;
            self.store.set_tensor(id, other.tensor(src).clone())?;
            copied += 1;
        }
        if copied == 0 {
            return Err(CoreError::MissingDependency(alloc::format!(
                "no parameters under prefix '{prefix}'"
            )));
        }
        Ok(copied)
    }

    pub fn cast<G: Real>(&self) -> FusedModel<G> {
        FusedModel {
            config: self.config.clone(),
            store: self.store.cast(),
            base: self.base.clone(),
            enc_adapters: self.enc_adapters.clone(),
            dec_adapters: self.dec_adapters.clone(),
            enc_fusion: self.enc_fusion.clone(),
            dec_fusion: self.dec_fusion.clone(),
        }
    }

    /// Mounts the parameter store on a tape with the given trainable-name
    /// predicate, returning tape handles aligned with store order.
    pub fn mount(&self, tape: &mut Tape<F>, trainable: &dyn Fn(&str) -> bool) -> Vec<Var> {
        self.store.mount(tape, trainable)
    }

    pub fn mount_frozen(&self, tape: &mut Tape<F>) -> Vec<Var> {
        self.store.mount(tape, &|_| false)
    }
}

/// Everything a caller may need from one forward pass.
pub struct ForwardOutput {
    /// Routed output of every encoder layer (the input of the next layer).
    pub enc_states: Vec<Var>,
    /// Token representations read by embeddings and probes: the routed
    /// output of the final encoder layer, before the final layer norm. The
    /// routing path (adapter up-projection, fusion V) therefore has full
    /// control over the embedding geometry.
    pub repr: Var,
    /// Final encoder representation (post final layer norm), shape (T, d);
    /// what the decoder cross-attends to.
    pub enc_final: Var,
    /// Decoder logits over the target sequence, shape (T_dec, vocab).
    pub logits: Option<Var>,
    /// Fusion attention weights per routed layer, each of shape (T, 2).
    pub fusion_attn: Vec<Var>,
}

fn check_tokens(config: &ModelConfig, tokens: &[u32]) -> CoreResult<()> {
    if tokens.is_empty() {
        return Err(CoreError::invalid("empty token sequence"));
    }
    if tokens.len() > config.max_seq_len {
        return Err(CoreError::Overlength {
            len: tokens.len(),
            max: config.max_seq_len,
        });
    }
    if let Some(bad) = tokens.iter().find(|t| (**t as usize) >= config.vocab_size) {
        return Err(CoreError::invalid(alloc::format!(
            "token id {bad} out of vocab {}",
            config.vocab_size
        )));
    }
    Ok(())
}

fn linear<F: Real>(tape: &mut Tape<F>, vars: &[Var], x: Var, p: LinearP) -> CoreResult<Var> {
    let y = tape.matmul(x, vars[p.w.0])?;
    tape.add_bias(y, vars[p.b.0])
}

fn layer_norm<F: Real>(
    tape: &mut Tape<F>,
    vars: &[Var],
    x: Var,
    p: LayerNormP,
) -> CoreResult<Var> {
    tape.layer_norm(x, vars[p.gamma.0], vars[p.beta.0])
}

fn causal_mask<F: Real>(tape: &mut Tape<F>, t: usize) -> Var {
    let mut data = alloc::vec![F::zero(); t * t];
    for i in 0..t {
        for j in (i + 1)..t {
            data[i * t + j] = F::from_f64(-1e9);
        }
    }
    tape.constant(Tensor::from_vec(alloc::vec![t, t], data).expect("mask shape"))
}

/// Multi-head scaled dot-product attention. Queries come from `q_in`, keys
/// and values from `kv_in`; `causal` masks future positions.
fn attention<F: Real>(
    tape: &mut Tape<F>,
    vars: &[Var],
    q_in: Var,
    kv_in: Var,
    p: AttnP,
    n_heads: usize,
    causal: bool,
) -> CoreResult<Var> {
    let (_, d) = tape.value(q_in).dims2()?;
    let dh = d / n_heads;
    let q = linear(tape, vars, q_in, p.q)?;
    let k = linear(tape, vars, kv_in, p.k)?;
    let v = linear(tape, vars, kv_in, p.v)?;
    let scale = 1.0 / (dh as f64).sqrt();
    let mask = if causal {
        let (t, _) = tape.value(q_in).dims2()?;
        Some(causal_mask::<F>(tape, t))
    } else {
        None
    };
    let mut heads = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let qh = tape.slice_cols(q, h * dh, dh)?;
        let kh = tape.slice_cols(k, h * dh, dh)?;
        let vh = tape.slice_cols(v, h * dh, dh)?;
        let scores = tape.matmul_nt(qh, kh)?;
        let mut scaled = tape.affine(scores, scale, 0.0);
        if let Some(m) = mask {
            scaled = tape.add(scaled, m)?;
        }
        let a = tape.softmax_rows(scaled)?;
        heads.push(tape.matmul(a, vh)?);
    }
    let ctx = tape.concat_cols(&heads)?;
    linear(tape, vars, ctx, p.o)
}

fn feed_forward<F: Real>(
    tape: &mut Tape<F>,
    vars: &[Var],
    x: Var,
    ff1: LinearP,
    ff2: LinearP,
) -> CoreResult<Var> {
    let h = linear(tape, vars, x, ff1)?;
    let h = tape.gelu(h);
    linear(tape, vars, h, ff2)
}

fn encoder_layer<F: Real>(
    tape: &mut Tape<F>,
    vars: &[Var],
    x: Var,
    p: &EncLayerP,
    n_heads: usize,
) -> CoreResult<Var> {
    let xn = layer_norm(tape, vars, x, p.ln1)?;
    let att = attention(tape, vars, xn, xn, p.attn, n_heads, false)?;
    let x = tape.add(x, att)?;
    let xn = layer_norm(tape, vars, x, p.ln2)?;
    let ff = feed_forward(tape, vars, xn, p.ff1, p.ff2)?;
    tape.add(x, ff)
}

fn decoder_layer<F: Real>(
    tape: &mut Tape<F>,
    vars: &[Var],
    x: Var,
    enc_final: Var,
    p: &DecLayerP,
    n_heads: usize,
) -> CoreResult<Var> {
    let xn = layer_norm(tape, vars, x, p.ln1)?;
    let att = attention(tape, vars, xn, xn, p.self_attn, n_heads, true)?;
    let x = tape.add(x, att)?;
    let xn = layer_norm(tape, vars, x, p.ln2)?;
    let cross = attention(tape, vars, xn, enc_final, p.cross_attn, n_heads, false)?;
    let x = tape.add(x, cross)?;
    let xn = layer_norm(tape, vars, x, p.ln3)?;
    let ff = feed_forward(tape, vars, xn, p.ff1, p.ff2)?;
    tape.add(x, ff)
}

/// Bottleneck adapter with residual: x + up(gelu(down(x))). Zero-initialized
/// up-projections make this the identity at the start of adapter training.
pub fn adapter_forward<F: Real>(
    tape: &mut Tape<F>,
    vars: &[Var],
    x: Var,
    p: &AdapterP,
) -> CoreResult<Var> {
    let h = linear(tape, vars, x, p.down)?;
    let h = tape.gelu(h);
    let u = linear(tape, vars, h, p.up)?;
    tape.add(x, u)
}

/// Attention fusion over the two candidate representations. `b` is the base
/// layer output, `g` the adapter output, both (T, d). Returns the routed
/// representation and the (T, 2) attention weights.
pub fn fusion_attend<F: Real>(
    tape: &mut Tape<F>,
    vars: &[Var],
    b: Var,
    g: Var,
    p: &FusionP,
) -> CoreResult<(Var, Var)> {
    if !tape.value(b).is_finite() || !tape.value(g).is_finite() {
        return Err(CoreError::NonFinite(alloc::string::String::from(
            "fusion_attend input",
        )));
    }
    let q = tape.matmul(b, vars[p.q.0])?;
    let kb = tape.matmul(b, vars[p.k.0])?;
    let kg = tape.matmul(g, vars[p.k.0])?;
    let vb = tape.matmul(b, vars[p.v.0])?;
    let vg = tape.matmul(g, vars[p.v.0])?;
    let sb = tape.row_dot(q, kb)?;
    let sg = tape.row_dot(q, kg)?;
    let scores = tape.concat_cols(&[sb, sg])?;
    let attn = tape.softmax_rows(scores)?;
    let a_b = tape.slice_cols(attn, 0, 1)?;
    let a_g = tape.slice_cols(attn, 1, 1)?;
    let wb = tape.scale_rows(vb, a_b)?;
    let wg = tape.scale_rows(vg, a_g)?;
    let o = tape.add(wb, wg)?;
    Ok((o, attn))
}

fn embed_sequence<F: Real>(
    tape: &mut Tape<F>,
    vars: &[Var],
    base: &BaseP,
    tokens: &[u32],
) -> CoreResult<Var> {
    let ids: Vec<usize> = tokens.iter().map(|t| *t as usize).collect();
    let tok = tape.embedding(vars[base.tok_embed.0], &ids)?;
    let positions: Vec<usize> = (0..tokens.len()).collect();
    let pos = tape.select_rows(vars[base.pos_embed.0], &positions)?;
    tape.add(tok, pos)
}

/// Full forward pass. When `dec_target` is given, the decoder runs teacher
/// forced on (bos ++ target[..len-1]) and `logits` covers every target
/// position.
pub fn forward<F: Real>(
    tape: &mut Tape<F>,
    vars: &[Var],
    model: &FusedModel<F>,
    enc_tokens: &[u32],
    dec_target: Option<&[u32]>,
) -> CoreResult<ForwardOutput> {
    let config = &model.config;
    check_tokens(config, enc_tokens)?;
    if let Some(t) = dec_target {
        check_tokens(config, t)?;
    }

    let mut fusion_attn = Vec::new();
    let mut enc_states = Vec::with_capacity(config.n_enc_layers);
    let mut x = embed_sequence(tape, vars, &model.base, enc_tokens)?;
    for (l, layer) in model.base.enc.iter().enumerate() {
        let b = encoder_layer(tape, vars, x, layer, config.n_heads)?;
        let routed = route(tape, vars, model, b, l, false, &mut fusion_attn)?;
        enc_states.push(routed);
        x = routed;
    }
    let repr = x;
    let enc_final = layer_norm(tape, vars, x, model.base.enc_ln)?;

    let logits = if let Some(target) = dec_target {
        let mut dec_input: Vec<u32> = Vec::with_capacity(target.len());
        dec_input.push(config.bos_token);
        dec_input.extend_from_slice(&target[..target.len() - 1]);
        let mut y = embed_sequence(tape, vars, &model.base, &dec_input)?;
        for (l, layer) in model.base.dec.iter().enumerate() {
            let b = decoder_layer(tape, vars, y, enc_final, layer, config.n_heads)?;
            let routed = route(tape, vars, model, b, l, true, &mut fusion_attn)?;
            y = routed;
        }
        let dec_final = layer_norm(tape, vars, y, model.base.dec_ln)?;
        Some(tape.matmul_nt(dec_final, vars[model.base.tok_embed.0])?)
    } else {
        None
    };

    Ok(ForwardOutput {
        enc_states,
        repr,
        enc_final,
        logits,
        fusion_attn,
    })
}

fn route<F: Real>(
    tape: &mut Tape<F>,
    vars: &[Var],
    model: &FusedModel<F>,
    b: Var,
    layer: usize,
    decoder_side: bool,
    fusion_attn: &mut Vec<Var>,
) -> CoreResult<Var> {
    let config = &model.config;
    if decoder_side && !config.fusion_in_decoder {
        return Ok(b);
    }
    match config.variant {
        Variant::BaseOnly => Ok(b),
        Variant::AdapterOnly => {
            let adapters = if decoder_side {
                &model.dec_adapters
            } else {
                &model.enc_adapters
            };
            adapter_forward(tape, vars, b, &adapters[layer])
        }
        Variant::Fusion => {
            let (adapters, fusions) = if decoder_side {
                (&model.dec_adapters, &model.dec_fusion)
            } else {
                (&model.enc_adapters, &model.enc_fusion)
            };
            let g = adapter_forward(tape, vars, b, &adapters[layer])?;
            let (o, attn) = fusion_attend(tape, vars, b, g, &fusions[layer])?;
            fusion_attn.push(attn);
            Ok(o)
        }
    }
}

/// Mean-pooled final encoder embeddings over the PIE span (half-open).
pub fn pie_embedding_node<F: Real>(
    tape: &mut Tape<F>,
    vars: &[Var],
    model: &FusedModel<F>,
    tokens: &[u32],
    span: (usize, usize),
) -> CoreResult<Var> {
    let out = forward(tape, vars, model, tokens, None)?;
    pool_span(tape, out.repr, span, tokens.len())
}

/// Span pooling over an existing (T, d) representation.
pub fn pool_span<F: Real>(
    tape: &mut Tape<F>,
    enc_final: Var,
    span: (usize, usize),
    len: usize,
) -> CoreResult<Var> {
    let (start, end) = span;
    if start >= end || end > len {
        return Err(CoreError::invalid(alloc::format!(
            "span [{start},{end}) invalid for length {len}"
        )));
    }
    let rows: Vec<usize> = (start..end).collect();
    let picked = tape.select_rows(enc_final, &rows)?;
    tape.mean_rows(picked)
}

// ── Inference conveniences (fresh frozen tape per call) ─────────────────

/// Final token embeddings for a sentence (pre final-norm routed output).
pub fn encode<F: Real>(model: &FusedModel<F>, tokens: &[u32]) -> CoreResult<Tensor<F>> {
    let mut tape = Tape::new();
    let vars = model.mount_frozen(&mut tape);
    let out = forward(&mut tape, &vars, model, tokens, None)?;
    Ok(tape.value(out.repr).clone())
}

/// Mean-pooled PIE-span embedding, as a plain vector.
pub fn pie_embedding<F: Real>(
    model: &FusedModel<F>,
    tokens: &[u32],
    span: (usize, usize),
) -> CoreResult<Vec<F>> {
    let mut tape = Tape::new();
    let vars = model.mount_frozen(&mut tape);
    let node = pie_embedding_node(&mut tape, &vars, model, tokens, span)?;
    Ok(tape.value(node).data().to_vec())
}

/// Teacher-forced reconstruction logits under the copy objective.
pub fn reconstruction_logits<F: Real>(
    model: &FusedModel<F>,
    tokens: &[u32],
) -> CoreResult<Tensor<F>> {
    let mut tape = Tape::new();
    let vars = model.mount_frozen(&mut tape);
    let out = forward(&mut tape, &vars, model, tokens, Some(tokens))?;
    Ok(tape.value(out.logits.expect("logits requested")).clone())
}

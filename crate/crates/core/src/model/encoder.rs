//! Embeddings, the pre-norm encoder stack, and the pooler, wired through
//! the autodiff tape one sample at a time. Batch items are independent, so
//! callers evaluate samples on separate tapes and fold gradients in index
//! order (bitwise deterministic under any thread count).

use crate::error::{Error, Result};
use crate::image::posgrid::bilinear_taps;
use crate::image::PatchBatch;
use crate::model::params::{LayerParams, ModelParams, ParamSet};
use crate::model::ModelConfig;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;
use crate::text::TokenRow;

/// Binds parameters onto a tape at most once per forward pass.
pub struct ParamBinder<'a> {
    pset: &'a ParamSet,
    bound: Vec<Option<NodeId>>,
}

impl<'a> ParamBinder<'a> {
    pub fn new(pset: &'a ParamSet) -> Self {
        ParamBinder {
            pset,
            bound: vec![None; pset.len()],
        }
    }

    pub fn get(&mut self, tape: &mut Tape, pid: usize) -> NodeId {
        if let Some(id) = self.bound[pid] {
            return id;
        }
        let id = tape.param(self.pset.get(pid).clone(), pid);
        self.bound[pid] = Some(id);
        id
    }
}

/// Result of a full forward pass on one sample.
pub struct ForwardOutput {
    /// Final contextualized sequence `[S, H]` (after the final LN when enabled).
    pub seq: NodeId,
    /// Pooled representation `[1, H]`.
    pub pooled: NodeId,
    /// Index of the first visual position (text length including class slot).
    pub modality_split: usize,
    /// Attention mask over the fused sequence; false marks padding.
    pub attn_mask: Vec<bool>,
}

/// Text embedding: `[t_class; t_i T] + T_pos[0..=L]`.
///
/// `tokens.ids` starts with the class-slot placeholder id; the learned class
/// vector is used for that slot rather than a table lookup.
pub fn embed_text(
    tape: &mut Tape,
    binder: &mut ParamBinder,
    mp: &ModelParams,
    cfg: &ModelConfig,
    tokens: &TokenRow,
) -> Result<NodeId> {
    let len = tokens.len();
    if len == 0 || len > cfg.max_text_len {
        return Err(Error::Shape {
            context: "embed_text",
            expected: format!("1..={} tokens", cfg.max_text_len),
            got: format!("{len}"),
        });
    }
    for &id in &tokens.ids {
        if id >= cfg.vocab_size {
            return Err(Error::Token(format!(
                "token id {id} out of range for vocab {}",
                cfg.vocab_size
            )));
        }
    }
    let table = binder.get(tape, mp.text_table);
    let cls = binder.get(tape, mp.text_cls);
    let pos_table = binder.get(tape, mp.text_pos);

    let word_ids: Vec<usize> = tokens.ids[1..].to_vec();
    let parts = if word_ids.is_empty() {
        vec![cls]
    } else {
        let words = tape.gather_rows(table, &word_ids);
        vec![cls, words]
    };
    let seq = tape.concat_rows(&parts);
    let pos_rows: Vec<usize> = (0..len).collect();
    let pos = tape.gather_rows(pos_table, &pos_rows);
    Ok(tape.add(seq, pos))
}

/// Patch embedding: `[v_class; v_j V] + V_pos`, with the position grid
/// bilinearly interpolated to the image's patch grid and indexed at each
/// kept patch's original grid position.
pub fn embed_image(
    tape: &mut Tape,
    binder: &mut ParamBinder,
    mp: &ModelParams,
    cfg: &ModelConfig,
    patches: &PatchBatch,
) -> Result<NodeId> {
    let dim = cfg.patch_dim();
    let (n, got_dim) = patches.patches.dims2();
    if got_dim != dim {
        return Err(Error::Shape {
            context: "embed_image",
            expected: format!("patch dim {dim}"),
            got: format!("{got_dim}"),
        });
    }
    if n > cfg.max_patches {
        return Err(Error::Shape {
            context: "embed_image",
            expected: format!("<= {} patches", cfg.max_patches),
            got: format!("{n}"),
        });
    }
    let w = binder.get(tape, mp.vis_proj_w);
    let b = binder.get(tape, mp.vis_proj_b);
    let cls = binder.get(tape, mp.vis_cls);
    let pos_cls = binder.get(tape, mp.vis_pos_cls);
    let pos_grid = binder.get(tape, mp.vis_pos);

    let cls_slot = tape.add(cls, pos_cls);
    if n == 0 {
        return Ok(cls_slot);
    }

    let raw = tape.constant(patches.patches.clone());
    let proj = tape.matmul(raw, w);
    let proj = tape.add_bias(proj, b);

    let (gh, gw) = patches.grid;
    let taps = bilinear_taps(cfg.pos_grid.0, cfg.pos_grid.1, gh, gw);
    let pos_full = tape.interp_grid(pos_grid, taps);
    let pos_idx: Vec<usize> = patches.grid_pos.iter().map(|&(r, c)| r * gw + c).collect();
    let pos = tape.select_rows(pos_full, &pos_idx);

    let emb = tape.add(proj, pos);
    Ok(tape.concat_rows(&[cls_slot, emb]))
}

/// Concatenate text-first with modal-type embeddings added.
pub fn fuse(
    tape: &mut Tape,
    binder: &mut ParamBinder,
    mp: &ModelParams,
    t_emb: NodeId,
    v_emb: NodeId,
) -> (NodeId, usize) {
    let tt = binder.get(tape, mp.type_text);
    let tv = binder.get(tape, mp.type_vis);
    let split = tape.value(t_emb).dims2().0;
    let t = tape.add_bias(t_emb, tt);
    let v = tape.add_bias(v_emb, tv);
    (tape.concat_rows(&[t, v]), split)
}

/// Additive attention mask: -inf at masked key columns, 0 elsewhere.
/// Returns `None` when nothing is masked.
pub fn attention_bias(mask: &[bool]) -> Option<Tensor> {
    if mask.iter().all(|&m| m) {
        return None;
    }
    let s = mask.len();
    let mut bias = Tensor::zeros(&[s, s]);
    for j in 0..s {
        if !mask[j] {
            for i in 0..s {
                bias.set2(i, j, f64::NEG_INFINITY);
            }
        }
    }
    Some(bias)
}

/// One pre-norm block: `z + MSA(LN(z))` then `+ MLP(LN(.))`.
pub fn encoder_block(
    tape: &mut Tape,
    binder: &mut ParamBinder,
    layer: &LayerParams,
    cfg: &ModelConfig,
    z: NodeId,
    bias: Option<&Tensor>,
) -> NodeId {
    let heads = cfg.heads;
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();

    let ln1_g = binder.get(tape, layer.ln1_g);
    let ln1_b = binder.get(tape, layer.ln1_b);
    let x = tape.layer_norm(z, ln1_g, ln1_b, cfg.ln_eps);

    let (wq, bq) = (binder.get(tape, layer.wq), binder.get(tape, layer.bq));
    let (wk, bk) = (binder.get(tape, layer.wk), binder.get(tape, layer.bk));
    let (wv, bv) = (binder.get(tape, layer.wv), binder.get(tape, layer.bv));
    let q = tape.matmul(x, wq);
    let q = tape.add_bias(q, bq);
    let k = tape.matmul(x, wk);
    let k = tape.add_bias(k, bk);
    let v = tape.matmul(x, wv);
    let v = tape.add_bias(v, bv);

    let mut ctx_heads = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * dh, dh);
        let kh = tape.slice_cols(k, h * dh, dh);
        let vh = tape.slice_cols(v, h * dh, dh);
        let scores = tape.matmul_nt(qh, kh);
        let scores = tape.scale(scores, scale);
        let scores = match bias {
            Some(b) => tape.add_const(scores, b),
            None => scores,
        };
        let attn = tape.softmax_rows(scores);
        ctx_heads.push(tape.matmul(attn, vh));
    }
    let ctx = tape.concat_cols(&ctx_heads);
    let (wo, bo) = (binder.get(tape, layer.wo), binder.get(tape, layer.bo));
    let msa = tape.matmul(ctx, wo);
    let msa = tape.add_bias(msa, bo);
    let z = tape.add(z, msa);

    let ln2_g = binder.get(tape, layer.ln2_g);
    let ln2_b = binder.get(tape, layer.ln2_b);
    let y = tape.layer_norm(z, ln2_g, ln2_b, cfg.ln_eps);
    let (w1, b1) = (binder.get(tape, layer.mlp_w1), binder.get(tape, layer.mlp_b1));
    let (w2, b2) = (binder.get(tape, layer.mlp_w2), binder.get(tape, layer.mlp_b2));
    let m = tape.matmul(y, w1);
    let m = tape.add_bias(m, b1);
    let m = tape.gelu(m);
    let m = tape.matmul(m, w2);
    let m = tape.add_bias(m, b2);
    tape.add(z, m)
}

/// Pooled representation: `tanh(z_0 W_pool + b)`.
pub fn pool(tape: &mut Tape, binder: &mut ParamBinder, mp: &ModelParams, z: NodeId) -> NodeId {
    let first = tape.slice_rows(z, 0, 1);
    let w = binder.get(tape, mp.pool_w);
    let b = binder.get(tape, mp.pool_b);
    let p = tape.matmul(first, w);
    let p = tape.add_bias(p, b);
    tape.tanh(p)
}

/// Full forward pass over one (tokens, patches) sample.
pub fn forward(
    tape: &mut Tape,
    pset: &ParamSet,
    mp: &ModelParams,
    cfg: &ModelConfig,
    tokens: &TokenRow,
    patches: &PatchBatch,
) -> Result<ForwardOutput> {
    let mut binder = ParamBinder::new(pset);
    let t_emb = embed_text(tape, &mut binder, mp, cfg, tokens)?;
    let v_emb = embed_image(tape, &mut binder, mp, cfg, patches)?;
    let (mut z, split) = fuse(tape, &mut binder, mp, t_emb, v_emb);

    let mut attn_mask = tokens.attn_mask.clone();
    attn_mask.extend(std::iter::repeat(true).take(patches.n_kept() + 1));
    let bias = attention_bias(&attn_mask);

    for (l, layer) in mp.layers.iter().enumerate() {
        z = encoder_block(tape, &mut binder, layer, cfg, z, bias.as_ref());
        if !tape.value(z).is_finite() {
            return Err(Error::NonFinite { layer: l });
        }
    }
    if cfg.final_ln {
        let g = binder.get(tape, mp.final_ln_g);
        let b = binder.get(tape, mp.final_ln_b);
        z = tape.layer_norm(z, g, b, cfg.ln_eps);
    }
    let pooled = pool(tape, &mut binder, mp, z);
    Ok(ForwardOutput {
        seq: z,
        pooled,
        modality_split: split,
        attn_mask,
    })
}

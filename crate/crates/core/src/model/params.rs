//! Named parameter storage and the encoder parameter map.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::tensor::Tensor;

const INIT_STD: f64 = 0.02;

/// One learnable tensor.
#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub tensor: Tensor,
    /// Whether weight decay applies (false for LN parameters and biases).
    pub decay: bool,
}

/// Ordered collection of named parameters. Order is creation order and is
/// part of the checkpoint contract.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn add(&mut self, name: &str, tensor: Tensor, decay: bool) -> usize {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {name}"
        );
        self.entries.push(ParamEntry {
            name: name.to_string(),
            tensor,
            decay,
        });
        self.index.insert(name.to_string(), self.entries.len() - 1);
        self.entries.len() - 1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, pid: usize) -> &Tensor {
        &self.entries[pid].tensor
    }

    pub fn get_mut(&mut self, pid: usize) -> &mut Tensor {
        &mut self.entries[pid].tensor
    }

    pub fn entry(&self, pid: usize) -> &ParamEntry {
        &self.entries[pid]
    }

    pub fn id_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &ParamEntry)> {
        self.entries.iter().enumerate()
    }

    /// Zero tensors shaped like every parameter, for gradient accumulation.
    pub fn zero_grads(&self) -> Vec<Tensor> {
        self.entries
            .iter()
            .map(|e| Tensor::zeros(e.tensor.shape()))
            .collect()
    }

    pub fn total_elements(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.numel()).sum()
    }

    /// Sum of element counts over parameters whose name starts with `prefix`.
    pub fn elements_with_prefix(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|e| e.name.starts_with(prefix))
            .map(|e| e.tensor.numel())
            .sum()
    }

    fn require(&self, name: &str, shape: &[usize]) -> Result<usize> {
        let pid = self
            .id_of(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
        let got = self.entries[pid].tensor.shape();
        if got != shape {
            return Err(Error::Checkpoint(format!(
                "parameter {name} has shape {got:?}, expected {shape:?}"
            )));
        }
        Ok(pid)
    }
}

/// Per-layer encoder parameters (ids into a `ParamSet`).
#[derive(Debug, Clone)]
pub struct LayerParams {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub mlp_w1: usize,
    pub mlp_b1: usize,
    pub mlp_w2: usize,
    pub mlp_b2: usize,
}

/// Ids of every encoder parameter. Weight matrices are stored `[in, out]`.
#[derive(Debug, Clone)]
pub struct ModelParams {
    /// Word embedding table `[V, H]`.
    pub text_table: usize,
    /// Text position table `[L_max + 1, H]`; row 0 is the class slot.
    pub text_pos: usize,
    /// Text class token `[1, H]`.
    pub text_cls: usize,
    /// Patch projection `[P*P*3, H]` and its bias `[H]`.
    pub vis_proj_w: usize,
    pub vis_proj_b: usize,
    /// Visual position grid, flattened `[h0*w0, H]`.
    pub vis_pos: usize,
    /// Position embedding of the visual class slot `[1, H]`.
    pub vis_pos_cls: usize,
    /// Visual class token `[1, H]`.
    pub vis_cls: usize,
    pub type_text: usize,
    pub type_vis: usize,
    pub layers: Vec<LayerParams>,
    pub final_ln_g: usize,
    pub final_ln_b: usize,
    pub pool_w: usize,
    pub pool_b: usize,
}

impl ModelParams {
    /// Create freshly initialized encoder parameters in `pset`.
    pub fn create(pset: &mut ParamSet, cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        let h = cfg.hidden;
        let (g0, g1) = cfg.pos_grid;
        fn tn(shape: &[usize], rng: &mut impl Rng) -> Tensor {
            Tensor::trunc_normal(shape, INIT_STD, rng)
        }

        let text_table = pset.add("text.table", tn(&[cfg.vocab_size, h], rng), true);
        let text_pos = pset.add("text.pos", tn(&[cfg.max_text_len + 1, h], rng), true);
        let text_cls = pset.add("text.cls", tn(&[1, h], rng), true);
        let vis_proj_w = pset.add("vis.proj.w", tn(&[cfg.patch_dim(), h], rng), true);
        let vis_proj_b = pset.add("vis.proj.b", Tensor::zeros(&[h]), false);
        let vis_pos = pset.add("vis.pos", tn(&[g0 * g1, h], rng), true);
        let vis_pos_cls = pset.add("vis.pos_cls", tn(&[1, h], rng), true);
        let vis_cls = pset.add("vis.cls", tn(&[1, h], rng), true);
        let type_text = pset.add("type.text", tn(&[1, h], rng), true);
        let type_vis = pset.add("type.vis", tn(&[1, h], rng), true);

        let mut layers = Vec::with_capacity(cfg.depth);
        for l in 0..cfg.depth {
            let p = |s: &str| format!("enc.{l}.{s}");
            layers.push(LayerParams {
                ln1_g: pset.add(&p("ln1.g"), Tensor::full(&[h], 1.0), false),
                ln1_b: pset.add(&p("ln1.b"), Tensor::zeros(&[h]), false),
                wq: pset.add(&p("attn.wq"), tn(&[h, h], rng), true),
                bq: pset.add(&p("attn.bq"), Tensor::zeros(&[h]), false),
                wk: pset.add(&p("attn.wk"), tn(&[h, h], rng), true),
                bk: pset.add(&p("attn.bk"), Tensor::zeros(&[h]), false),
                wv: pset.add(&p("attn.wv"), tn(&[h, h], rng), true),
                bv: pset.add(&p("attn.bv"), Tensor::zeros(&[h]), false),
                wo: pset.add(&p("attn.wo"), tn(&[h, h], rng), true),
                bo: pset.add(&p("attn.bo"), Tensor::zeros(&[h]), false),
                ln2_g: pset.add(&p("ln2.g"), Tensor::full(&[h], 1.0), false),
                ln2_b: pset.add(&p("ln2.b"), Tensor::zeros(&[h]), false),
                mlp_w1: pset.add(&p("mlp.w1"), tn(&[h, cfg.mlp], rng), true),
                mlp_b1: pset.add(&p("mlp.b1"), Tensor::zeros(&[cfg.mlp]), false),
                mlp_w2: pset.add(&p("mlp.w2"), tn(&[cfg.mlp, h], rng), true),
                mlp_b2: pset.add(&p("mlp.b2"), Tensor::zeros(&[h]), false),
            });
        }

        let final_ln_g = pset.add("enc.final_ln.g", Tensor::full(&[h], 1.0), false);
        let final_ln_b = pset.add("enc.final_ln.b", Tensor::zeros(&[h]), false);
        let pool_w = pset.add("pool.w", tn(&[h, h], rng), true);
        let pool_b = pset.add("pool.b", Tensor::zeros(&[h]), false);

        ModelParams {
            text_table,
            text_pos,
            text_cls,
            vis_proj_w,
            vis_proj_b,
            vis_pos,
            vis_pos_cls,
            vis_cls,
            type_text,
            type_vis,
            layers,
            final_ln_g,
            final_ln_b,
            pool_w,
            pool_b,
        }
    }

    /// Re-bind ids against a loaded `ParamSet`, verifying shapes.
    pub fn bind(pset: &ParamSet, cfg: &ModelConfig) -> Result<Self> {
        let h = cfg.hidden;
        let (g0, g1) = cfg.pos_grid;
        let mut layers = Vec::with_capacity(cfg.depth);
        for l in 0..cfg.depth {
            let p = |s: &str| format!("enc.{l}.{s}");
            layers.push(LayerParams {
                ln1_g: pset.require(&p("ln1.g"), &[h])?,
                ln1_b: pset.require(&p("ln1.b"), &[h])?,
                wq: pset.require(&p("attn.wq"), &[h, h])?,
                bq: pset.require(&p("attn.bq"), &[h])?,
                wk: pset.require(&p("attn.wk"), &[h, h])?,
                bk: pset.require(&p("attn.bk"), &[h])?,
                wv: pset.require(&p("attn.wv"), &[h, h])?,
                bv: pset.require(&p("attn.bv"), &[h])?,
                wo: pset.require(&p("attn.wo"), &[h, h])?,
                bo: pset.require(&p("attn.bo"), &[h])?,
                ln2_g: pset.require(&p("ln2.g"), &[h])?,
                ln2_b: pset.require(&p("ln2.b"), &[h])?,
                mlp_w1: pset.require(&p("mlp.w1"), &[h, cfg.mlp])?,
                mlp_b1: pset.require(&p("mlp.b1"), &[cfg.mlp])?,
                mlp_w2: pset.require(&p("mlp.w2"), &[cfg.mlp, h])?,
                mlp_b2: pset.require(&p("mlp.b2"), &[h])?,
            });
        }
        Ok(ModelParams {
            text_table: pset.require("text.table", &[cfg.vocab_size, h])?,
            text_pos: pset.require("text.pos", &[cfg.max_text_len + 1, h])?,
            text_cls: pset.require("text.cls", &[1, h])?,
            vis_proj_w: pset.require("vis.proj.w", &[cfg.patch_dim(), h])?,
            vis_proj_b: pset.require("vis.proj.b", &[h])?,
            vis_pos: pset.require("vis.pos", &[g0 * g1, h])?,
            vis_pos_cls: pset.require("vis.pos_cls", &[1, h])?,
            vis_cls: pset.require("vis.cls", &[1, h])?,
            type_text: pset.require("type.text", &[1, h])?,
            type_vis: pset.require("type.vis", &[1, h])?,
            layers,
            final_ln_g: pset.require("enc.final_ln.g", &[h])?,
            final_ln_b: pset.require("enc.final_ln.b", &[h])?,
            pool_w: pset.require("pool.w", &[h, h])?,
            pool_b: pset.require("pool.b", &[h])?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds;

    #[test]
    fn create_then_bind_round_trip() {
        let cfg = ModelConfig::tiny();
        let mut pset = ParamSet::new();
        let created = ModelParams::create(&mut pset, &cfg, &mut seeds::rng(0));
        let bound = ModelParams::bind(&pset, &cfg).unwrap();
        assert_eq!(created.pool_w, bound.pool_w);
        assert_eq!(created.layers.len(), bound.layers.len());
        assert!(pset.entry(created.pool_b).name == "pool.b");
        assert!(!pset.entry(created.pool_b).decay);
        assert!(pset.entry(created.pool_w).decay);
        assert!(!pset.entry(created.layers[0].ln1_g).decay);
    }

    #[test]
    fn bind_rejects_wrong_shapes() {
        let cfg = ModelConfig::tiny();
        let mut pset = ParamSet::new();
        ModelParams::create(&mut pset, &cfg, &mut seeds::rng(0));
        let mut other = cfg.clone();
        other.hidden = 16;
        other.heads = 2;
        assert!(ModelParams::bind(&pset, &other).is_err());
    }
}

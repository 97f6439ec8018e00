//! Pre-training heads: a single linear ITM head, a two-layer MLM head
//! (affine, GELU, LN, decoder affine), and a linear MPP head.

use rand::Rng;

use crate::error::Result;
use crate::model::params::ParamSet;
use crate::model::ModelConfig;
use crate::tensor::Tensor;

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone)]
pub struct PretrainHeads {
    /// ITM head `[H, 2]`; column 1 scores the matched class.
    pub itm_w: usize,
    pub itm_b: usize,
    pub mlm_fc_w: usize,
    pub mlm_fc_b: usize,
    pub mlm_ln_g: usize,
    pub mlm_ln_b: usize,
    pub mlm_dec_w: usize,
    pub mlm_dec_b: usize,
    pub mpp_w: usize,
    pub mpp_b: usize,
}

impl PretrainHeads {
    pub fn create(pset: &mut ParamSet, cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        let h = cfg.hidden;
        let v = cfg.vocab_size;
        PretrainHeads {
            itm_w: pset.add("head.itm.w", Tensor::trunc_normal(&[h, 2], INIT_STD, rng), true),
            itm_b: pset.add("head.itm.b", Tensor::zeros(&[2]), false),
            mlm_fc_w: pset.add(
                "head.mlm.fc.w",
                Tensor::trunc_normal(&[h, h], INIT_STD, rng),
                true,
            ),
            mlm_fc_b: pset.add("head.mlm.fc.b", Tensor::zeros(&[h]), false),
            mlm_ln_g: pset.add("head.mlm.ln.g", Tensor::full(&[h], 1.0), false),
            mlm_ln_b: pset.add("head.mlm.ln.b", Tensor::zeros(&[h]), false),
            mlm_dec_w: pset.add(
                "head.mlm.dec.w",
                Tensor::trunc_normal(&[h, v], INIT_STD, rng),
                true,
            ),
            mlm_dec_b: pset.add("head.mlm.dec.b", Tensor::zeros(&[v]), false),
            mpp_w: pset.add("head.mpp.w", Tensor::trunc_normal(&[h, 3], INIT_STD, rng), true),
            mpp_b: pset.add("head.mpp.b", Tensor::zeros(&[3]), false),
        }
    }

    pub fn bind(pset: &ParamSet, cfg: &ModelConfig) -> Result<Self> {
        let h = cfg.hidden;
        let v = cfg.vocab_size;
        let req = |name: &str, shape: &[usize]| -> Result<usize> {
            let pid = pset
                .id_of(name)
                .ok_or_else(|| crate::error::Error::Checkpoint(format!("missing parameter {name}")))?;
            if pset.get(pid).shape() != shape {
                return Err(crate::error::Error::Checkpoint(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    pset.get(pid).shape()
                )));
            }
            Ok(pid)
        };
        Ok(PretrainHeads {
            itm_w: req("head.itm.w", &[h, 2])?,
            itm_b: req("head.itm.b", &[2])?,
            mlm_fc_w: req("head.mlm.fc.w", &[h, h])?,
            mlm_fc_b: req("head.mlm.fc.b", &[h])?,
            mlm_ln_g: req("head.mlm.ln.g", &[h])?,
            mlm_ln_b: req("head.mlm.ln.b", &[h])?,
            mlm_dec_w: req("head.mlm.dec.w", &[h, v])?,
            mlm_dec_b: req("head.mlm.dec.b", &[v])?,
            mpp_w: req("head.mpp.w", &[h, 3])?,
            mpp_b: req("head.mpp.b", &[3])?,
        })
    }
}

//! Downstream heads and evaluation protocols: classification over pooled
//! features, the NLVR2 pair method, retrieval fine-tuning against sampled
//! negatives, and recall@K.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::image::PatchBatch;
use crate::model::encoder::{forward, ParamBinder};
use crate::model::params::{ModelParams, ParamSet};
use crate::model::ModelConfig;
use crate::objectives::heads::PretrainHeads;
use crate::seeds::{self, stream};
use crate::synth::scene::ColorName;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;
use crate::text::TokenRow;

const INIT_STD: f64 = 0.02;

/// Two affine layers with GELU and LN between; hidden width 2H.
#[derive(Debug, Clone)]
pub struct ClassifierHead {
    pub fc1_w: usize,
    pub fc1_b: usize,
    pub ln_g: usize,
    pub ln_b: usize,
    pub fc2_w: usize,
    pub fc2_b: usize,
    pub in_dim: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl ClassifierHead {
    pub fn create(
        pset: &mut ParamSet,
        prefix: &str,
        in_dim: usize,
        classes: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let p = |s: &str| format!("{prefix}.{s}");
        ClassifierHead {
            fc1_w: pset.add(&p("fc1.w"), Tensor::trunc_normal(&[in_dim, hidden], INIT_STD, rng), true),
            fc1_b: pset.add(&p("fc1.b"), Tensor::zeros(&[hidden]), false),
            ln_g: pset.add(&p("ln.g"), Tensor::full(&[hidden], 1.0), false),
            ln_b: pset.add(&p("ln.b"), Tensor::zeros(&[hidden]), false),
            fc2_w: pset.add(&p("fc2.w"), Tensor::trunc_normal(&[hidden, classes], INIT_STD, rng), true),
            fc2_b: pset.add(&p("fc2.b"), Tensor::zeros(&[classes]), false),
            in_dim,
            hidden,
            classes,
        }
    }

    pub fn bind(pset: &ParamSet, prefix: &str, in_dim: usize, classes: usize, hidden: usize) -> Result<Self> {
        let get = |s: &str, shape: &[usize]| -> Result<usize> {
            let name = format!("{prefix}.{s}");
            let pid = pset
                .id_of(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            if pset.get(pid).shape() != shape {
                return Err(Error::Checkpoint(format!("parameter {name} shape mismatch")));
            }
            Ok(pid)
        };
        Ok(ClassifierHead {
            fc1_w: get("fc1.w", &[in_dim, hidden])?,
            fc1_b: get("fc1.b", &[hidden])?,
            ln_g: get("ln.g", &[hidden])?,
            ln_b: get("ln.b", &[hidden])?,
            fc2_w: get("fc2.w", &[hidden, classes])?,
            fc2_b: get("fc2.b", &[classes])?,
            in_dim,
            hidden,
            classes,
        })
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        binder: &mut ParamBinder,
        ln_eps: f64,
        x: NodeId,
    ) -> NodeId {
        let (w1, b1) = (binder.get(tape, self.fc1_w), binder.get(tape, self.fc1_b));
        let h = tape.matmul(x, w1);
        let h = tape.add_bias(h, b1);
        let h = tape.gelu(h);
        let (g, b) = (binder.get(tape, self.ln_g), binder.get(tape, self.ln_b));
        let h = tape.layer_norm(h, g, b, ln_eps);
        let (w2, b2) = (binder.get(tape, self.fc2_w), binder.get(tape, self.fc2_b));
        let out = tape.matmul(h, w2);
        tape.add_bias(out, b2)
    }
}

/// Similarity score head for retrieval, initialized from the true-pair
/// column of the pre-trained ITM head.
#[derive(Debug, Clone)]
pub struct SimHead {
    pub w: usize,
    pub b: usize,
}

impl SimHead {
    pub fn create_from_itm(pset: &mut ParamSet, heads: &PretrainHeads, hidden: usize) -> Self {
        let itm_w = pset.get(heads.itm_w).clone();
        let itm_b = pset.get(heads.itm_b).clone();
        let mut w = Tensor::zeros(&[hidden, 1]);
        for i in 0..hidden {
            w.set2(i, 0, itm_w.at2(i, 1));
        }
        let b = Tensor::from_vec(&[1], vec![itm_b.data()[1]]);
        SimHead {
            w: pset.add("head.sim.w", w, true),
            b: pset.add("head.sim.b", b, false),
        }
    }

    pub fn bind(pset: &ParamSet, hidden: usize) -> Result<Self> {
        let w = pset
            .id_of("head.sim.w")
            .ok_or_else(|| Error::Checkpoint("missing parameter head.sim.w".into()))?;
        let b = pset
            .id_of("head.sim.b")
            .ok_or_else(|| Error::Checkpoint("missing parameter head.sim.b".into()))?;
        if pset.get(w).shape() != [hidden, 1] || pset.get(b).shape() != [1] {
            return Err(Error::Checkpoint("sim head shape mismatch".into()));
        }
        Ok(SimHead { w, b })
    }

    pub fn score(&self, tape: &mut Tape, binder: &mut ParamBinder, pooled: NodeId) -> NodeId {
        let w = binder.get(tape, self.w);
        let b = binder.get(tape, self.b);
        let s = tape.matmul(pooled, w);
        tape.add_bias(s, b)
    }
}

/// Classification logits for one (tokens, patches) pair.
pub fn cls_forward(
    pset: &ParamSet,
    mp: &ModelParams,
    head: &ClassifierHead,
    cfg: &ModelConfig,
    tokens: &TokenRow,
    patches: &PatchBatch,
) -> Result<(Tape, NodeId)> {
    let mut tape = Tape::new();
    let fwd = forward(&mut tape, pset, mp, cfg, tokens, patches)?;
    let mut binder = ParamBinder::new(pset);
    let logits = head.forward(&mut tape, &mut binder, cfg.ln_eps, fwd.pooled);
    Ok((tape, logits))
}

/// NLVR2 pair method: the question goes through the encoder with each
/// image; the head consumes the concatenation of the two pooled vectors.
pub fn nlvr2_forward(
    pset: &ParamSet,
    mp: &ModelParams,
    head: &ClassifierHead,
    cfg: &ModelConfig,
    question: &TokenRow,
    image1: &PatchBatch,
    image2: &PatchBatch,
) -> Result<(Tape, NodeId)> {
    let mut tape = Tape::new();
    let f1 = forward(&mut tape, pset, mp, cfg, question, image1)?;
    let f2 = forward(&mut tape, pset, mp, cfg, question, image2)?;
    let both = tape.concat_cols(&[f1.pooled, f2.pooled]);
    let mut binder = ParamBinder::new(pset);
    let logits = head.forward(&mut tape, &mut binder, cfg.ln_eps, both);
    Ok((tape, logits))
}

/// Candidate scores and ground truth for a retrieval query set.
#[derive(Debug, Clone)]
pub struct RetrievalIndex {
    /// `[queries, candidates]` score matrix.
    pub scores: Tensor,
    /// Ground-truth candidate per query.
    pub truth: Vec<usize>,
}

/// Fraction of queries whose ground truth ranks in the top k by score.
/// Ties break by stable candidate order (earlier index wins).
pub fn recall_at_k(index: &RetrievalIndex, k: usize) -> f64 {
    let (q, _) = index.scores.dims2();
    assert_eq!(index.truth.len(), q, "ground truth per query");
    let mut hits = 0usize;
    for i in 0..q {
        let row = index.scores.row(i);
        let t = index.truth[i];
        let ts = row[t];
        // rank = competitors strictly better, plus equal-scored earlier ones
        let rank = row
            .iter()
            .enumerate()
            .filter(|&(j, &s)| s > ts || (s == ts && j < t))
            .count();
        if rank < k {
            hits += 1;
        }
    }
    hits as f64 / q as f64
}

/// Deterministic pooled-feature scorer used by retrieval evaluation:
/// score(query text, candidate image) via the similarity head.
pub fn score_gallery(
    pset: &ParamSet,
    mp: &ModelParams,
    sim: &SimHead,
    cfg: &ModelConfig,
    queries: &[&TokenRow],
    candidates: &[&PatchBatch],
) -> Result<RetrievalIndex> {
    let rows: Vec<Vec<f64>> = queries
        .par_iter()
        .map(|tokens| -> Result<Vec<f64>> {
            let mut row = Vec::with_capacity(candidates.len());
            for patches in candidates {
                let mut tape = Tape::new();
                let fwd = forward(&mut tape, pset, mp, cfg, tokens, patches)?;
                let mut binder = ParamBinder::new(pset);
                let s = sim.score(&mut tape, &mut binder, fwd.pooled);
                row.push(tape.value(s).item());
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    let q = rows.len();
    let k = candidates.len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(RetrievalIndex {
        scores: Tensor::from_vec(&[q, k], flat),
        truth: (0..q).collect(),
    })
}

/// Toy classification target: the color of the first mentioned object.
pub fn color_label(caption: &str) -> Option<usize> {
    caption
        .split_whitespace()
        .find_map(|w| ColorName::from_word(w).map(|c| c as usize))
}

/// Synthetic NLVR2-style item: a statement and two images; true when one of
/// the images is the statement's own.
#[derive(Debug, Clone, Copy)]
pub struct Nlvr2Item {
    pub caption_idx: usize,
    pub img_a: usize,
    pub img_b: usize,
    pub label: bool,
}

pub fn build_nlvr2_items(
    corpus: &Corpus,
    indices: &[usize],
    n: usize,
    seed: u64,
) -> Result<Vec<Nlvr2Item>> {
    if indices.len() < 3 {
        return Err(Error::Corpus("need at least 3 pairs for NLVR2 items".into()));
    }
    let mut rng = seeds::rng(seeds::mix(seed, stream::NEGATIVES));
    let mut items = Vec::with_capacity(n);
    for k in 0..n {
        let ci = indices[rng.gen_range(0..indices.len())];
        let mut other = || loop {
            let j = indices[rng.gen_range(0..indices.len())];
            if j != ci {
                break j;
            }
        };
        let label = k % 2 == 0;
        let (img_a, img_b) = if label {
            let o = other();
            if rng.gen::<bool>() {
                (ci, o)
            } else {
                (o, ci)
            }
        } else {
            (other(), other())
        };
        items.push(Nlvr2Item {
            caption_idx: ci,
            img_a,
            img_b,
            label,
        });
    }
    let _ = corpus;
    Ok(items)
}

/// Evaluation report written next to checkpoints.
#[derive(Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub split: String,
    pub metrics: serde_json::Value,
    pub config_hash: String,
    pub checkpoint_hash: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{patchify, ImageTensor};
    use crate::model::params::ModelParams;

    fn setup() -> (ParamSet, ModelParams, ModelConfig) {
        let cfg = ModelConfig::tiny();
        let mut pset = ParamSet::new();
        let mp = ModelParams::create(&mut pset, &cfg, &mut seeds::rng(0));
        (pset, mp, cfg)
    }

    fn tokens(ids: &[usize]) -> TokenRow {
        let mut all = vec![1usize];
        all.extend_from_slice(ids);
        let n = all.len();
        TokenRow {
            ids: all,
            word_ids: std::iter::once(-1).chain((0..n - 1).map(|i| i as i32)).collect(),
            attn_mask: vec![true; n],
            mlm_labels: vec![-100; n],
        }
    }

    fn patches(seed: u64, cfg: &ModelConfig) -> PatchBatch {
        let mut rng = seeds::rng(seed);
        let mut img = ImageTensor::new(8, 8).unwrap();
        for v in img.data_mut() {
            *v = rng.gen::<f64>();
        }
        patchify(&img, cfg.patch)
    }

    #[test]
    fn zero_head_gives_uniform_logits() {
        let (mut pset, mp, cfg) = setup();
        let head = ClassifierHead::create(&mut pset, "head.cls", cfg.hidden, 4, 2 * cfg.hidden, &mut seeds::rng(1));
        *pset.get_mut(head.fc2_w) = Tensor::zeros(&[2 * cfg.hidden, 4]);
        let (tape, logits) = cls_forward(&pset, &mp, &head, &cfg, &tokens(&[6]), &patches(2, &cfg)).unwrap();
        let v = tape.value(logits);
        assert_eq!(v.dims2(), (1, 4));
        assert!(v.data().iter().all(|&x| x == 0.0));
        // softmax of uniform logits sums to one trivially
        let probs: f64 = v.data().iter().map(|&x| x.exp()).sum::<f64>();
        assert!((probs - 4.0).abs() < 1e-12);
    }

    #[test]
    fn nlvr2_same_image_gives_symmetric_features() {
        let (mut pset, mp, cfg) = setup();
        let head = ClassifierHead::create(&mut pset, "head.nlvr2", 2 * cfg.hidden, 2, 2 * cfg.hidden, &mut seeds::rng(3));
        let q = tokens(&[6, 7]);
        let img = patches(4, &cfg);
        let (tape, logits) = nlvr2_forward(&pset, &mp, &head, &cfg, &q, &img, &img).unwrap();
        assert_eq!(tape.value(logits).dims2(), (1, 2));
        // identical inputs twice: deterministic, and the concat halves match
        let (tape2, logits2) = nlvr2_forward(&pset, &mp, &head, &cfg, &q, &img, &img).unwrap();
        assert_eq!(tape.value(logits), tape2.value(logits2));
    }

    #[test]
    fn nlvr2_swapping_images_changes_logits() {
        let (mut pset, mp, cfg) = setup();
        let head = ClassifierHead::create(&mut pset, "head.nlvr2", 2 * cfg.hidden, 2, 2 * cfg.hidden, &mut seeds::rng(5));
        let q = tokens(&[6, 7]);
        let (i1, i2) = (patches(6, &cfg), patches(7, &cfg));
        let (ta, la) = nlvr2_forward(&pset, &mp, &head, &cfg, &q, &i1, &i2).unwrap();
        let (tb, lb) = nlvr2_forward(&pset, &mp, &head, &cfg, &q, &i2, &i1).unwrap();
        assert_ne!(ta.value(la), tb.value(lb));
    }

    #[test]
    fn sim_head_matches_itm_true_pair_logit_direction() {
        let (mut pset, mp, cfg) = setup();
        let heads = PretrainHeads::create(&mut pset, &cfg, &mut seeds::rng(8));
        let sim = SimHead::create_from_itm(&mut pset, &heads, cfg.hidden);
        let toks = tokens(&[6, 7]);
        let pb = patches(9, &cfg);

        let mut tape = Tape::new();
        let fwd = forward(&mut tape, &pset, &mp, &cfg, &toks, &pb).unwrap();
        let mut binder = ParamBinder::new(&pset);
        let s = sim.score(&mut tape, &mut binder, fwd.pooled);
        let itm = crate::objectives::loss::itm_logits(&mut tape, &mut binder, &heads, fwd.pooled);
        assert!((tape.value(s).item() - tape.value(itm).at2(0, 1)).abs() < 1e-12);
    }

    #[test]
    fn recall_basics() {
        // oracle scores: ground truth strictly max per row
        let scores = Tensor::from_vec(&[2, 4], vec![
            0.9, 0.1, 0.2, 0.3, // truth 0
            0.0, 0.2, 0.1, 0.9, // truth 3
        ]);
        let idx = RetrievalIndex {
            scores,
            truth: vec![0, 3],
        };
        assert_eq!(recall_at_k(&idx, 1), 1.0);
        assert_eq!(recall_at_k(&idx, 4), 1.0);
        // k >= candidates
        assert_eq!(recall_at_k(&idx, 10), 1.0);
    }

    #[test]
    fn recall_is_monotone_in_k_and_invariant_to_monotone_score_maps() {
        let mut rng = seeds::rng(31);
        let q = 24;
        let k = 16;
        let data: Vec<f64> = (0..q * k).map(|_| rng.gen::<f64>()).collect();
        let idx = RetrievalIndex {
            scores: Tensor::from_vec(&[q, k], data.clone()),
            truth: (0..q).map(|i| i % k).collect(),
        };
        let r1 = recall_at_k(&idx, 1);
        let r5 = recall_at_k(&idx, 5);
        let r10 = recall_at_k(&idx, 10);
        assert!(r1 <= r5 && r5 <= r10);

        let mapped = RetrievalIndex {
            scores: Tensor::from_vec(&[q, k], data.iter().map(|&s| (3.0 * s).exp()).collect()),
            truth: idx.truth.clone(),
        };
        assert_eq!(recall_at_k(&mapped, 1), r1);
        assert_eq!(recall_at_k(&mapped, 5), r5);
    }

    #[test]
    fn random_scores_r1_near_chance() {
        let mut rng = seeds::rng(77);
        let (q, k) = (100, 100);
        let data: Vec<f64> = (0..q * k).map(|_| rng.gen::<f64>()).collect();
        let idx = RetrievalIndex {
            scores: Tensor::from_vec(&[q, k], data),
            truth: (0..q).collect(),
        };
        let r1 = recall_at_k(&idx, 1);
        assert!(r1 <= 0.02 + 1e-12, "r@1 {r1} too high for random scores");
    }

    #[test]
    fn color_label_parses_first_color() {
        assert_eq!(color_label("a red circle above a blue square"), Some(0));
        assert_eq!(color_label("a yellow triangle"), Some(3));
        assert_eq!(color_label("nothing here"), None);
    }
}

//! Loss graphs for one sample and their batch aggregation.
//!
//! Conventions: ITM is the mean binary NLL over the batch, MLM the mean NLL
//! over labeled subword positions, MPP the mean squared error over masked
//! patch RGB components, and WPA the mean transport cost over positive
//! pairs scaled by its weight. The transport plan is treated as a constant;
//! gradients flow through the cost matrix only.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::encoder::{forward, ForwardOutput, ParamBinder};
use crate::model::params::{ModelParams, ParamSet};
use crate::model::ModelConfig;
use crate::objectives::batch::{PretrainBatch, PretrainSample};
use crate::objectives::heads::PretrainHeads;
use crate::objectives::PretrainFlags;
use crate::ot::ipot::{ipot, uniform};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;
use crate::text::{TokenRow, IGNORE_LABEL};

/// IPOT settings for the WPA objective.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WpaOptions {
    pub weight: f64,
    pub beta: f64,
    pub iters: usize,
    pub inner: usize,
}

impl Default for WpaOptions {
    fn default() -> Self {
        WpaOptions {
            weight: 0.1,
            beta: 0.5,
            iters: 50,
            inner: 1,
        }
    }
}

/// Row indices of the WPA subsets within the fused sequence: text tokens
/// excluding the class slot and padding, and patch tokens excluding the
/// visual class slot.
pub fn wpa_subsets(tokens: &TokenRow, split: usize, total_len: usize) -> (Vec<usize>, Vec<usize>) {
    let t = (1..split).filter(|&i| tokens.attn_mask[i]).collect();
    let v = (split + 1..total_len).collect();
    (t, v)
}

/// Per-sample loss graph: the tape plus scalar nodes for each term.
pub struct SampleGraph {
    pub tape: Tape,
    pub fwd: ForwardOutput,
    /// Binary NLL (scalar node).
    pub itm_nll: NodeId,
    pub itm_correct: bool,
    /// MLM NLL summed over labeled positions, with the position count.
    pub mlm: Option<(NodeId, usize)>,
    /// Unweighted transport cost `<T, c>`.
    pub wpa: Option<NodeId>,
    /// True when WPA was requested but a subset was empty.
    pub wpa_degenerate: bool,
    /// Squared error summed over masked patches, with the patch count.
    pub mpp: Option<(NodeId, usize)>,
}

/// ITM logits `[rows, 2]` for pooled features.
pub fn itm_logits(
    tape: &mut Tape,
    binder: &mut ParamBinder,
    heads: &PretrainHeads,
    pooled: NodeId,
) -> NodeId {
    let w = binder.get(tape, heads.itm_w);
    let b = binder.get(tape, heads.itm_b);
    let logits = tape.matmul(pooled, w);
    tape.add_bias(logits, b)
}

/// Two-layer MLM head over selected positions: affine, GELU, LN, decoder.
pub fn mlm_logits(
    tape: &mut Tape,
    binder: &mut ParamBinder,
    heads: &PretrainHeads,
    cfg: &ModelConfig,
    features: NodeId,
) -> NodeId {
    let (fw, fb) = (binder.get(tape, heads.mlm_fc_w), binder.get(tape, heads.mlm_fc_b));
    let x = tape.matmul(features, fw);
    let x = tape.add_bias(x, fb);
    let x = tape.gelu(x);
    let (lg, lb) = (binder.get(tape, heads.mlm_ln_g), binder.get(tape, heads.mlm_ln_b));
    let x = tape.layer_norm(x, lg, lb, cfg.ln_eps);
    let (dw, db) = (binder.get(tape, heads.mlm_dec_w), binder.get(tape, heads.mlm_dec_b));
    let x = tape.matmul(x, dw);
    tape.add_bias(x, db)
}

/// Build the full loss graph for one sample.
pub fn sample_graph(
    pset: &ParamSet,
    mp: &ModelParams,
    heads: &PretrainHeads,
    cfg: &ModelConfig,
    sample: &PretrainSample,
    flags: PretrainFlags,
    wpa: &WpaOptions,
) -> Result<SampleGraph> {
    let mut tape = Tape::new();
    let fwd = forward(&mut tape, pset, mp, cfg, &sample.tokens, &sample.patches)?;
    let mut binder = ParamBinder::new(pset);
    let total_len = tape.value(fwd.seq).dims2().0;

    // ITM
    let logits = itm_logits(&mut tape, &mut binder, heads, fwd.pooled);
    let target = sample.itm_positive as usize;
    let itm_nll = tape.cross_entropy_sum(logits, &[target]);
    let lv = tape.value(logits);
    let itm_correct = (lv.at2(0, 1) > lv.at2(0, 0)) == sample.itm_positive;

    // MLM over labeled positions
    let labeled: Vec<usize> = (0..sample.tokens.len())
        .filter(|&i| sample.tokens.mlm_labels[i] != IGNORE_LABEL)
        .collect();
    let mlm = if labeled.is_empty() {
        None
    } else {
        let sel = tape.select_rows(fwd.seq, &labeled);
        let logits = mlm_logits(&mut tape, &mut binder, heads, cfg, sel);
        let targets: Vec<usize> = labeled
            .iter()
            .map(|&i| sample.tokens.mlm_labels[i] as usize)
            .collect();
        let nll = tape.cross_entropy_sum(logits, &targets);
        Some((nll, labeled.len()))
    };

    // WPA on positive pairs
    let mut wpa_node = None;
    let mut wpa_degenerate = false;
    if flags.use_wpa && sample.itm_positive {
        let (t_idx, v_idx) = wpa_subsets(&sample.tokens, fwd.modality_split, total_len);
        if t_idx.is_empty() || v_idx.is_empty() {
            wpa_degenerate = true;
        } else {
            let zt = tape.select_rows(fwd.seq, &t_idx);
            let zv = tape.select_rows(fwd.seq, &v_idx);
            let tn = tape.row_normalize(zt);
            let vn = tape.row_normalize(zv);
            let sim = tape.matmul_nt(tn, vn);
            let neg = tape.scale(sim, -1.0);
            let cost = tape.add_scalar(neg, 1.0);
            let plan = ipot(
                tape.value(cost),
                &uniform(t_idx.len()),
                &uniform(v_idx.len()),
                wpa.beta,
                wpa.iters,
                wpa.inner,
            )?;
            wpa_node = Some(tape.frob_const(cost, plan.plan));
        }
    }

    // MPP over masked patches
    let mpp = if flags.use_mpp {
        let masked: Vec<usize> = (0..sample.mpp_mask.len())
            .filter(|&k| sample.mpp_mask[k])
            .collect();
        if masked.is_empty() {
            None
        } else {
            let rows: Vec<usize> = masked.iter().map(|&k| fwd.modality_split + 1 + k).collect();
            let sel = tape.select_rows(fwd.seq, &rows);
            let (w, b) = (binder.get(&mut tape, heads.mpp_w), binder.get(&mut tape, heads.mpp_b));
            let pred = tape.matmul(sel, w);
            let pred = tape.add_bias(pred, b);
            let mut target = Vec::with_capacity(masked.len() * 3);
            for &k in &masked {
                target.extend_from_slice(&sample.mpp_labels[k]);
            }
            let t = Tensor::from_vec(&[masked.len(), 3], target);
            let node = tape.mse_sum(pred, t);
            Some((node, masked.len()))
        }
    } else {
        None
    };

    Ok(SampleGraph {
        tape,
        fwd,
        itm_nll,
        itm_correct,
        mlm,
        wpa: wpa_node,
        wpa_degenerate,
        mpp,
    })
}

/// Per-term batch report. `total` is exactly the sum of the four terms.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossReport {
    pub itm: f64,
    pub mlm: f64,
    pub wpa: f64,
    pub mpp: f64,
    pub total: f64,
    pub itm_accuracy: f64,
    pub n_mlm: usize,
    pub n_wpa: usize,
    pub n_mpp: usize,
    pub wpa_degenerate: usize,
}

struct Aggregate {
    report: LossReport,
    seeds: Vec<Vec<(NodeId, f64)>>,
}

fn aggregate(graphs: &[SampleGraph], wpa: &WpaOptions) -> Aggregate {
    let b = graphs.len();
    let itm_sum: f64 = graphs.iter().map(|g| g.tape.value(g.itm_nll).item()).sum();
    let itm = itm_sum / b as f64;
    let itm_acc = graphs.iter().filter(|g| g.itm_correct).count() as f64 / b as f64;

    let n_mlm: usize = graphs.iter().filter_map(|g| g.mlm.map(|(_, n)| n)).sum();
    let mlm_sum: f64 = graphs
        .iter()
        .filter_map(|g| g.mlm.map(|(id, _)| g.tape.value(id).item()))
        .sum();
    let mlm = if n_mlm > 0 { mlm_sum / n_mlm as f64 } else { 0.0 };

    let n_wpa = graphs.iter().filter(|g| g.wpa.is_some()).count();
    let wpa_sum: f64 = graphs
        .iter()
        .filter_map(|g| g.wpa.map(|id| g.tape.value(id).item()))
        .sum();
    let wpa_term = if n_wpa > 0 {
        wpa.weight * wpa_sum / n_wpa as f64
    } else {
        0.0
    };

    let n_mpp: usize = graphs.iter().filter_map(|g| g.mpp.map(|(_, n)| n)).sum();
    let mpp_sum: f64 = graphs
        .iter()
        .filter_map(|g| g.mpp.map(|(id, _)| g.tape.value(id).item()))
        .sum();
    let mpp = if n_mpp > 0 {
        mpp_sum / (3 * n_mpp) as f64
    } else {
        0.0
    };

    let total = itm + wpa_term + mlm + mpp;
    let degenerate = graphs.iter().filter(|g| g.wpa_degenerate).count();

    let seeds = graphs
        .iter()
        .map(|g| {
            let mut s = vec![(g.itm_nll, 1.0 / b as f64)];
            if let Some((id, _)) = g.mlm {
                s.push((id, 1.0 / n_mlm as f64));
            }
            if let Some(id) = g.wpa {
                s.push((id, wpa.weight / n_wpa as f64));
            }
            if let Some((id, _)) = g.mpp {
                s.push((id, 1.0 / (3 * n_mpp) as f64));
            }
            s
        })
        .collect();

    Aggregate {
        report: LossReport {
            itm,
            mlm,
            wpa: wpa_term,
            mpp,
            total,
            itm_accuracy: itm_acc,
            n_mlm,
            n_wpa,
            n_mpp,
            wpa_degenerate: degenerate,
        },
        seeds,
    }
}

fn build_graphs(
    pset: &ParamSet,
    mp: &ModelParams,
    heads: &PretrainHeads,
    cfg: &ModelConfig,
    batch: &PretrainBatch,
    flags: PretrainFlags,
    wpa: &WpaOptions,
) -> Result<Vec<SampleGraph>> {
    batch
        .samples
        .par_iter()
        .map(|s| sample_graph(pset, mp, heads, cfg, s, flags, wpa))
        .collect()
}

/// Loss report without gradients (evaluation path).
pub fn pretrain_loss_report(
    pset: &ParamSet,
    mp: &ModelParams,
    heads: &PretrainHeads,
    cfg: &ModelConfig,
    batch: &PretrainBatch,
    flags: PretrainFlags,
    wpa: &WpaOptions,
) -> Result<LossReport> {
    let graphs = build_graphs(pset, mp, heads, cfg, batch, flags, wpa)?;
    Ok(aggregate(&graphs, wpa).report)
}

/// Loss report plus parameter gradients of the total loss.
///
/// Per-sample gradients are computed independently (in parallel) and folded
/// in sample order, so results do not depend on the thread count.
pub fn pretrain_loss_and_grads(
    pset: &ParamSet,
    mp: &ModelParams,
    heads: &PretrainHeads,
    cfg: &ModelConfig,
    batch: &PretrainBatch,
    flags: PretrainFlags,
    wpa: &WpaOptions,
) -> Result<(LossReport, Vec<Tensor>)> {
    let graphs = build_graphs(pset, mp, heads, cfg, batch, flags, wpa)?;
    let agg = aggregate(&graphs, wpa);

    let per_sample: Vec<Vec<Tensor>> = graphs
        .par_iter()
        .zip(&agg.seeds)
        .map(|(g, seeds)| {
            let node_grads = g.tape.backward_scalars(seeds);
            let mut acc = pset.zero_grads();
            g.tape.accumulate_param_grads(&node_grads, &mut acc);
            acc
        })
        .collect();

    let mut grads = pset.zero_grads();
    for sample_grads in &per_sample {
        for (acc, g) in grads.iter_mut().zip(sample_grads) {
            acc.add_assign(g);
        }
    }
    Ok((agg.report, grads))
}

//! Closed-form parameter and FLOPs accounting plus a latency
//! micro-benchmark for the encoder.
//!
//! Counting convention: 1 multiply-accumulate = 2 FLOPs; softmax, layer
//! norm, GELU, and bias additions are excluded (dominated terms). The
//! convention string is embedded in every report. Parameter totals cover
//! the visual embedder and transformer (patch projection, position/class/
//! type embeddings, encoder layers, final LN, pooler); the text embedder is
//! excluded unless requested, and task heads are reported separately by the
//! checkpoint itself.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::image::{patchify, ImageTensor};
use crate::model::params::ParamSet;
use crate::model::{forward, ModelConfig, ModelParams};
use crate::tape::Tape;
use crate::text::TokenRow;

pub const CONVENTION: &str =
    "1 MAC = 2 FLOPs; softmax/LN/GELU/bias excluded; params = visual embedder + transformer (+pooler), text embedder excluded unless flagged";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Component {
    pub name: String,
    pub count: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatencyStats {
    pub visual_tokens: usize,
    pub text_tokens: usize,
    pub reps: usize,
    pub median_ms: f64,
    pub mean_ms: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CostReport {
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub params_by_component: Vec<Component>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub total_params: Option<u64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub flops_by_component: Vec<Component>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub total_flops: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub visual_tokens: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text_tokens: Option<usize>,
    pub convention: String,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub latency: Vec<LatencyStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hardware: Option<String>,
}

fn component(name: &str, count: u64) -> Component {
    Component {
        name: name.to_string(),
        count,
    }
}

/// Per-layer parameter count: QKV/O projections with biases, the MLP pair
/// with biases, and two layer norms.
pub fn params_per_layer(cfg: &ModelConfig) -> u64 {
    let h = cfg.hidden as u64;
    let m = cfg.mlp as u64;
    4 * (h * h + h) + (h * m + m) + (m * h + h) + 4 * h
}

/// Closed-form parameter accounting for the encoder stack.
pub fn count_params(cfg: &ModelConfig, include_text_embedder: bool) -> CostReport {
    let h = cfg.hidden as u64;
    let (g0, g1) = (cfg.pos_grid.0 as u64, cfg.pos_grid.1 as u64);
    let mut comps = vec![
        component("patch_projection", cfg.patch_dim() as u64 * h + h),
        component("vis_pos_embedding", (g0 * g1 + 1) * h),
        component("vis_class_token", h),
        component("type_embeddings", 2 * h),
        component("encoder_layers", cfg.depth as u64 * params_per_layer(cfg)),
        component("final_ln", 2 * h),
        component("pooler", h * h + h),
    ];
    if include_text_embedder {
        comps.push(component("text_embedding_table", cfg.vocab_size as u64 * h));
        comps.push(component(
            "text_pos_embedding",
            (cfg.max_text_len as u64 + 1) * h,
        ));
        comps.push(component("text_class_token", h));
    }
    let total = comps.iter().map(|c| c.count).sum();
    CostReport {
        params_by_component: comps,
        total_params: Some(total),
        convention: CONVENTION.to_string(),
        ..CostReport::default()
    }
}

/// FLOPs of one forward pass at the given token counts (2 FLOPs per MAC).
pub fn count_flops(cfg: &ModelConfig, n_visual: usize, n_text: usize) -> CostReport {
    let h = cfg.hidden as u64;
    let m = cfg.mlp as u64;
    let d = cfg.depth as u64;
    let s = (n_visual + n_text + 2) as u64; // two class slots
    let macs = [
        component("patch_projection", n_visual as u64 * cfg.patch_dim() as u64 * h),
        component("attention_qkvo", d * 4 * s * h * h),
        component("attention_scores_mix", d * 2 * s * s * h),
        component("mlp", d * 2 * s * h * m),
        component("pooler", h * h),
    ];
    let comps: Vec<Component> = macs
        .into_iter()
        .map(|c| component(&c.name, 2 * c.count))
        .collect();
    let total = comps.iter().map(|c| c.count).sum();
    CostReport {
        flops_by_component: comps,
        total_flops: Some(total),
        visual_tokens: Some(n_visual),
        text_tokens: Some(n_text),
        convention: CONVENTION.to_string(),
        ..CostReport::default()
    }
}

fn hardware_string() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|text| {
            text.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|s| s.trim().to_string())
        })
        .unwrap_or_else(|| std::env::consts::ARCH.to_string());
    let threads = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    format!("{cpu} ({threads} hw threads)")
}

/// Wall-time of the forward pass at each requested (visual, text) size,
/// median and mean over `reps` runs after one discarded warmup.
pub fn bench_latency(
    cfg: &ModelConfig,
    sizes: &[(usize, usize)],
    reps: usize,
) -> Result<CostReport> {
    assert!(reps >= 1, "reps must be >= 1");
    let mut pset = ParamSet::new();
    let mp = ModelParams::create(&mut pset, cfg, &mut crate::seeds::rng(0));

    let mut stats = Vec::with_capacity(sizes.len());
    for &(n_visual, n_text) in sizes {
        // synthetic inputs at the requested sequence sizes
        let n_tokens = (n_text + 1).min(cfg.max_text_len);
        let ids: Vec<usize> = (0..n_tokens)
            .map(|i| if i == 0 { 1 } else { 5 + i % (cfg.vocab_size - 5) })
            .collect();
        let tokens = TokenRow {
            word_ids: std::iter::once(-1)
                .chain((0..ids.len() - 1).map(|i| i as i32))
                .collect(),
            attn_mask: vec![true; ids.len()],
            mlm_labels: vec![-100; ids.len()],
            ids,
        };
        // an image whose patch grid covers n_visual patches
        let side = (n_visual as f64).sqrt().ceil() as usize;
        let img = ImageTensor::filled(side * cfg.patch, side * cfg.patch, [0.5, 0.5, 0.5])?;
        let full = patchify(&img, cfg.patch);
        let mut pb = full.clone();
        if full.n_kept() > n_visual {
            pb = crate::image::sample_patches(&full, n_visual, &mut crate::seeds::rng(1));
        }

        let run = || -> Result<f64> {
            let start = Instant::now();
            let mut tape = Tape::new();
            let out = forward(&mut tape, &pset, &mp, cfg, &tokens, &pb)?;
            std::hint::black_box(tape.value(out.pooled).at2(0, 0));
            Ok(start.elapsed().as_secs_f64() * 1e3)
        };
        run()?; // warmup, discarded
        let mut times = Vec::with_capacity(reps);
        for _ in 0..reps {
            times.push(run()?);
        }
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = times[times.len() / 2];
        let mean = times.iter().sum::<f64>() / times.len() as f64;
        stats.push(LatencyStats {
            visual_tokens: n_visual,
            text_tokens: n_text,
            reps,
            median_ms: median,
            mean_ms: mean,
        });
    }
    Ok(CostReport {
        latency: stats,
        convention: CONVENTION.to_string(),
        hardware: Some(hardware_string()),
        ..CostReport::default()
    })
}

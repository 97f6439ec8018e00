//! Pre-training driver: deterministic batch sampling, loss/gradient
//! evaluation, AdamW updates, JSONL metric logging, and checkpointing.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, PreprocessConfig};
use crate::error::{Error, Result};
use crate::model::params::{ModelParams, ParamSet};
use crate::model::ModelConfig;
use crate::objectives::{
    build_itm_batch, pretrain_loss_and_grads, BatchOptions, PairPool, PretrainFlags,
    PretrainHeads, WpaOptions,
};
use crate::seeds::{self, stream};
use crate::text::Vocabulary;
use crate::train::adamw::{adamw_step, AdamWConfig, OptimState};
use crate::train::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::train::schedule::{lr_at, Schedule};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adamw: AdamWConfig,
    pub warmup_frac: f64,
    /// Save a checkpoint every k steps (0 saves only the final one).
    pub checkpoint_every: usize,
    pub flags: PretrainFlags,
    pub wpa: WpaOptions,
    pub batch: BatchOptions,
    pub preprocess: PreprocessConfig,
}

impl TrainConfig {
    pub fn desk_defaults(steps: usize, batch_size: usize, seed: u64) -> Self {
        TrainConfig {
            steps,
            batch_size,
            seed,
            adamw: AdamWConfig::default(),
            warmup_frac: 0.1,
            checkpoint_every: 0,
            flags: PretrainFlags::default(),
            wpa: WpaOptions::default(),
            batch: BatchOptions {
                max_keep: 200,
                ..BatchOptions::default()
            },
            preprocess: PreprocessConfig {
                resize_short: 64,
                resize_long_cap: 64,
                patch_size: 16,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::Config("steps and batch size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_frac) {
            return Err(Error::Config("warmup_frac must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Model plus optimizer after training.
pub struct PretrainedModel {
    pub cfg: ModelConfig,
    pub pset: ParamSet,
    pub mp: ModelParams,
    pub heads: PretrainHeads,
    pub opt: OptimState,
}

/// One JSONL log line per step.
#[derive(Debug, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub itm: f64,
    pub mlm: f64,
    pub wpa: f64,
    pub mpp: f64,
    pub total: f64,
    pub lr: f64,
}

fn checkpoint_path(out_dir: &Path, step: usize) -> PathBuf {
    out_dir.join(format!("checkpoint_{step:06}.ckpt"))
}

pub fn final_checkpoint_path(out_dir: &Path) -> PathBuf {
    out_dir.join("checkpoint_final.ckpt")
}

/// Initialize fresh pre-training parameters.
pub fn init_model(cfg: &ModelConfig, seed: u64) -> (ParamSet, ModelParams, PretrainHeads) {
    let mut pset = ParamSet::new();
    let mut rng = seeds::rng(seeds::mix(seed, stream::INIT));
    let mp = ModelParams::create(&mut pset, cfg, &mut rng);
    let heads = PretrainHeads::create(&mut pset, cfg, &mut rng);
    (pset, mp, heads)
}

/// Run pre-training on a loaded corpus. With `resume` the parameters,
/// optimizer state, and step counter continue from the checkpoint, and the
/// remaining steps replay exactly what an uninterrupted run would do
/// (per-step random streams are derived from `(seed, step)`).
pub fn pretrain(
    corpus: &Corpus,
    vocab: &Vocabulary,
    cfg: &ModelConfig,
    tc: &TrainConfig,
    out_dir: &Path,
    resume: Option<Checkpoint>,
) -> Result<(PretrainedModel, Vec<StepLog>)> {
    cfg.validate()?;
    tc.validate()?;
    if corpus.train_idx.is_empty() {
        return Err(Error::Corpus("corpus has no training pairs".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let (mut pset, mp, heads, mut opt, start_step) = match resume {
        None => {
            let (pset, mp, heads) = init_model(cfg, tc.seed);
            let opt = OptimState::new(&pset);
            (pset, mp, heads, opt, 0)
        }
        Some(ck) => {
            if &ck.config != cfg {
                return Err(Error::Checkpoint(
                    "checkpoint config does not match requested config".into(),
                ));
            }
            let mp = ModelParams::bind(&ck.params, cfg)?;
            let heads = PretrainHeads::bind(&ck.params, cfg)?;
            let opt = ck
                .opt
                .ok_or_else(|| Error::Checkpoint("checkpoint lacks optimizer state".into()))?;
            (ck.params, mp, heads, opt, ck.step)
        }
    };
    if start_step > tc.steps {
        return Err(Error::Config(format!(
            "checkpoint is at step {start_step}, beyond total {}",
            tc.steps
        )));
    }

    let sched = Schedule::new(tc.steps, tc.warmup_frac);
    let pool = PairPool {
        tokens: &corpus.tokens,
        patches: &corpus.patches,
    };

    let log_path = out_dir.join("train_log.jsonl");
    let mut log_file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;

    let extra = serde_json::json!({
        "train_config": tc,
        "corpus_dir": corpus.dir,
    });

    let mut logs = Vec::with_capacity(tc.steps - start_step);
    for step in (start_step + 1)..=tc.steps {
        // batch composition stream for this step
        let mut order_rng = seeds::rng(seeds::mix_all(tc.seed, &[stream::DATA_ORDER, step as u64]));
        let picks: Vec<usize> = (0..tc.batch_size)
            .map(|_| corpus.train_idx[order_rng.gen_range(0..corpus.train_idx.len())])
            .collect();
        let mut mask_rng = seeds::rng(seeds::mix_all(tc.seed, &[stream::MASKING, step as u64]));
        let batch = build_itm_batch(&pool, &picks, &tc.batch, vocab, &mut mask_rng)?;

        let (report, grads) =
            pretrain_loss_and_grads(&pset, &mp, &heads, cfg, &batch, tc.flags, &tc.wpa)?;
        let lr = lr_at(step, &sched, tc.adamw.base_lr);
        adamw_step(&mut pset, &grads, &mut opt, &tc.adamw, lr)?;

        let line = StepLog {
            step,
            itm: report.itm,
            mlm: report.mlm,
            wpa: report.wpa,
            mpp: report.mpp,
            total: report.total,
            lr,
        };
        serde_json::to_writer(&mut log_file, &line)?;
        log_file.write_all(b"\n").map_err(|e| Error::io(&log_path, e))?;
        logs.push(line);

        if tc.checkpoint_every > 0 && step % tc.checkpoint_every == 0 && step != tc.steps {
            save_checkpoint(
                &checkpoint_path(out_dir, step),
                cfg,
                &pset,
                Some(&opt),
                step,
                tc.seed,
                extra.clone(),
            )?;
        }
    }

    save_checkpoint(
        &final_checkpoint_path(out_dir),
        cfg,
        &pset,
        Some(&opt),
        tc.steps,
        tc.seed,
        extra,
    )?;

    Ok((
        PretrainedModel {
            cfg: cfg.clone(),
            pset,
            mp,
            heads,
            opt,
        },
        logs,
    ))
}

/// Load a checkpoint and bind the encoder and pre-training heads.
pub fn load_pretrained(path: &Path) -> Result<(PretrainedModel, Checkpoint)> {
    let ck = load_checkpoint(path)?;
    let mp = ModelParams::bind(&ck.params, &ck.config)?;
    let heads = PretrainHeads::bind(&ck.params, &ck.config)?;
    let opt = ck.opt.clone().unwrap_or_else(|| OptimState::new(&ck.params));
    Ok((
        PretrainedModel {
            cfg: ck.config.clone(),
            pset: ck.params.clone(),
            mp,
            heads,
            opt,
        },
        ck,
    ))
}

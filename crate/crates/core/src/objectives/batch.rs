//! Pre-training batch construction: ITM pairing, MLM masking, patch
//! sampling, and MPP input masking.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{sample_patches, PatchBatch};
use crate::text::{subword_mask, whole_word_mask, TokenRow, Vocabulary};

/// Sentinel RGB label for unmasked patches.
pub const MPP_UNMASKED: [f64; 3] = [-1.0, -1.0, -1.0];

/// One training sample, ready for the loss graph.
#[derive(Debug, Clone)]
pub struct PretrainSample {
    /// Masked tokens with MLM labels.
    pub tokens: TokenRow,
    /// Kept patches; masked patch vectors are zeroed when MPP is on.
    pub patches: PatchBatch,
    /// True when caption and image come from the same source pair.
    pub itm_positive: bool,
    /// Mean RGB of each kept patch before zeroing; sentinel when unmasked.
    pub mpp_labels: Vec<[f64; 3]>,
    pub mpp_mask: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct PretrainBatch {
    pub samples: Vec<PretrainSample>,
}

/// Candidate pool the batch draws from: pre-tokenized captions and
/// pre-patchified images, index-aligned.
pub struct PairPool<'a> {
    pub tokens: &'a [TokenRow],
    pub patches: &'a [PatchBatch],
}

impl PairPool<'_> {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchOptions {
    /// MLM masking probability.
    pub p_mask: f64,
    /// Whole-word masking on (off falls back to per-subword masking).
    pub whole_word: bool,
    /// Build MPP targets and zero masked patch inputs.
    pub use_mpp: bool,
    pub mpp_prob: f64,
    /// Patch sampling budget.
    pub max_keep: usize,
}

impl Default for BatchOptions {
    fn default() -> Self {
        BatchOptions {
            p_mask: 0.15,
            whole_word: true,
            use_mpp: false,
            mpp_prob: 0.15,
            max_keep: 200,
        }
    }
}

/// Mean RGB of a channel-major flattened patch vector.
pub fn patch_mean_rgb(patch: &[f64]) -> [f64; 3] {
    let per = patch.len() / 3;
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        *o = patch[c * per..(c + 1) * per].iter().sum::<f64>() / per as f64;
    }
    out
}

/// Build a pre-training batch for the chosen pool indices.
///
/// Each caption keeps its aligned image with probability 0.5, otherwise it
/// receives a uniformly chosen *different* image and the ITM label flips.
pub fn build_itm_batch(
    pool: &PairPool,
    picks: &[usize],
    opts: &BatchOptions,
    vocab: &Vocabulary,
    rng: &mut impl Rng,
) -> Result<PretrainBatch> {
    if pool.len() < 2 {
        return Err(Error::Corpus(
            "ITM pairing needs at least two distinct images".into(),
        ));
    }
    if pool.tokens.len() != pool.patches.len() {
        return Err(Error::Corpus("pool tokens/patches misaligned".into()));
    }
    let mut samples = Vec::with_capacity(picks.len());
    for &idx in picks {
        if idx >= pool.len() {
            return Err(Error::Corpus(format!("pair index {idx} out of range")));
        }
        let positive = rng.gen::<f64>() < 0.5;
        let img_idx = if positive {
            idx
        } else {
            // uniform over the other images
            let mut j = rng.gen_range(0..pool.len() - 1);
            if j >= idx {
                j += 1;
            }
            j
        };

        let tokens = if opts.whole_word {
            whole_word_mask(&pool.tokens[idx], opts.p_mask, vocab, rng)?
        } else {
            subword_mask(&pool.tokens[idx], opts.p_mask, vocab, rng)?
        };

        let mut patches = sample_patches(&pool.patches[img_idx], opts.max_keep, rng);
        let n = patches.n_kept();
        let mut mpp_labels = vec![MPP_UNMASKED; n];
        let mut mpp_mask = vec![false; n];
        if opts.use_mpp {
            for k in 0..n {
                if rng.gen::<f64>() < opts.mpp_prob {
                    mpp_mask[k] = true;
                    mpp_labels[k] = patch_mean_rgb(patches.patches.row(k));
                    patches.patches.row_mut(k).fill(0.0);
                }
            }
        }

        samples.push(PretrainSample {
            tokens,
            patches,
            itm_positive: positive,
            mpp_labels,
            mpp_mask,
        });
    }
    Ok(PretrainBatch { samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{patchify, ImageTensor};
    use crate::seeds;
    use crate::text::tokenize::tokenize;
    use crate::text::vocab::SpecialTokens;

    fn pool_fixture(n: usize) -> (Vec<TokenRow>, Vec<PatchBatch>, Vocabulary) {
        let mut tokens = vec!["[PAD]", "[CLS]", "[SEP]", "[MASK]", "[UNK]", "a", "b", "c"]
            .into_iter()
            .map(String::from)
            .collect::<Vec<_>>();
        tokens.push("word".into());
        let vocab = Vocabulary::new(tokens, &SpecialTokens::default()).unwrap();
        let rows: Vec<TokenRow> = (0..n)
            .map(|i| tokenize(&format!("a word {}", ["a", "b", "c"][i % 3]), &vocab, 16).unwrap())
            .collect();
        let patches: Vec<PatchBatch> = (0..n)
            .map(|i| {
                let img =
                    ImageTensor::filled(8, 8, [i as f64 / n as f64, 0.5, 0.25]).unwrap();
                patchify(&img, 4)
            })
            .collect();
        (rows, patches, vocab)
    }

    #[test]
    fn positive_rate_close_to_half() {
        let (tokens, patches, vocab) = pool_fixture(8);
        let pool = PairPool {
            tokens: &tokens,
            patches: &patches,
        };
        let opts = BatchOptions::default();
        let mut rng = seeds::rng(7);
        let picks: Vec<usize> = (0..10_000).map(|i| i % 8).collect();
        let batch = build_itm_batch(&pool, &picks, &opts, &vocab, &mut rng).unwrap();
        let pos = batch.samples.iter().filter(|s| s.itm_positive).count();
        let rate = pos as f64 / picks.len() as f64;
        assert!((rate - 0.5).abs() <= 0.02, "positive rate {rate}");
    }

    #[test]
    fn negative_always_differs_and_two_pair_corpus_is_forced() {
        let (tokens, patches, vocab) = pool_fixture(2);
        let pool = PairPool {
            tokens: &tokens,
            patches: &patches,
        };
        let opts = BatchOptions::default();
        let mut rng = seeds::rng(3);
        let picks = vec![0usize; 200];
        let batch = build_itm_batch(&pool, &picks, &opts, &vocab, &mut rng).unwrap();
        for s in &batch.samples {
            if !s.itm_positive {
                // pair 0's only possible negative is image 1
                assert_eq!(s.patches.patches.row(0), patches[1].patches.row(0));
            }
        }
        assert!(batch.samples.iter().any(|s| !s.itm_positive));
    }

    #[test]
    fn single_image_corpus_rejected() {
        let (tokens, patches, vocab) = pool_fixture(1);
        let pool = PairPool {
            tokens: &tokens,
            patches: &patches,
        };
        let mut rng = seeds::rng(0);
        assert!(build_itm_batch(&pool, &[0], &BatchOptions::default(), &vocab, &mut rng).is_err());
    }

    #[test]
    fn mpp_masks_zero_inputs_and_record_mean_rgb() {
        let (tokens, patches, vocab) = pool_fixture(4);
        let pool = PairPool {
            tokens: &tokens,
            patches: &patches,
        };
        let opts = BatchOptions {
            use_mpp: true,
            mpp_prob: 0.9,
            ..BatchOptions::default()
        };
        let mut rng = seeds::rng(11);
        let batch = build_itm_batch(&pool, &[1, 2], &opts, &vocab, &mut rng).unwrap();
        let mut masked_seen = 0;
        for s in &batch.samples {
            for k in 0..s.patches.n_kept() {
                if s.mpp_mask[k] {
                    masked_seen += 1;
                    assert!(s.patches.patches.row(k).iter().all(|&v| v == 0.0));
                    assert!(s.mpp_labels[k].iter().all(|&v| v >= 0.0));
                } else {
                    assert_eq!(s.mpp_labels[k], MPP_UNMASKED);
                }
            }
        }
        assert!(masked_seen > 0);
    }

    #[test]
    fn mpp_masking_rate_statistics() {
        // over ~10,000 patches at prob 0.15 the masked fraction is 0.15 ± 0.01
        let (tokens, patches, vocab) = pool_fixture(8);
        let pool = PairPool {
            tokens: &tokens,
            patches: &patches,
        };
        let opts = BatchOptions {
            use_mpp: true,
            ..BatchOptions::default()
        };
        let mut rng = seeds::rng(21);
        let picks: Vec<usize> = (0..2500).map(|i| i % 8).collect();
        let batch = build_itm_batch(&pool, &picks, &opts, &vocab, &mut rng).unwrap();
        let (mut total, mut masked) = (0usize, 0usize);
        for s in &batch.samples {
            total += s.mpp_mask.len();
            masked += s.mpp_mask.iter().filter(|&&m| m).count();
        }
        assert!(total >= 10_000);
        let rate = masked as f64 / total as f64;
        assert!((rate - 0.15).abs() <= 0.01, "mpp mask rate {rate}");
    }
}

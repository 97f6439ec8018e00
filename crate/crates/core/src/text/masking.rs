//! Whole-word masking: masking decisions are made per source word, and the
//! chosen corruption (mask / random / keep) is applied to every subword of
//! the word, so no word is ever partially visible.

use rand::Rng;

use crate::error::{Error, Result};
use crate::text::tokenize::{TokenRow, IGNORE_LABEL, NO_WORD};
use crate::text::vocab::Vocabulary;

/// Mask whole words of a tokenized row with probability `p_mask`.
///
/// Selected words get `mlm_labels` set to the original ids at every subword;
/// the ids are then corrupted per word: 0.8 all-`[MASK]`, 0.1 random vocab
/// tokens, 0.1 unchanged. Specials and padding are never selected.
pub fn whole_word_mask(
    row: &TokenRow,
    p_mask: f64,
    vocab: &Vocabulary,
    rng: &mut impl Rng,
) -> Result<TokenRow> {
    if row.word_ids.len() != row.ids.len() {
        return Err(Error::Token(
            "whole_word_mask requires word_ids for every position".into(),
        ));
    }
    if !(0.0..1.0).contains(&p_mask) {
        return Err(Error::Token(format!(
            "p_mask must be in [0, 1), got {p_mask}"
        )));
    }

    let mut out = row.clone();
    out.mlm_labels = vec![IGNORE_LABEL; row.len()];

    // Contiguous spans of equal word_id >= 0.
    let mut i = 0;
    while i < row.len() {
        let wid = row.word_ids[i];
        if wid == NO_WORD || !row.attn_mask[i] {
            i += 1;
            continue;
        }
        let mut j = i;
        while j < row.len() && row.word_ids[j] == wid && row.attn_mask[j] {
            j += 1;
        }

        if rng.gen::<f64>() < p_mask {
            let bucket: f64 = rng.gen();
            for pos in i..j {
                out.mlm_labels[pos] = row.ids[pos] as i64;
                if bucket < 0.8 {
                    out.ids[pos] = vocab.mask_id;
                } else if bucket < 0.9 {
                    out.ids[pos] = random_regular_token(vocab, rng);
                }
                // else: keep original id, label still set
            }
        }
        i = j;
    }
    Ok(out)
}

/// Standard per-subword masking (the whole-word flag off): every
/// non-special position is its own masking unit.
pub fn subword_mask(
    row: &TokenRow,
    p_mask: f64,
    vocab: &Vocabulary,
    rng: &mut impl Rng,
) -> Result<TokenRow> {
    if !(0.0..1.0).contains(&p_mask) {
        return Err(Error::Token(format!(
            "p_mask must be in [0, 1), got {p_mask}"
        )));
    }
    let mut out = row.clone();
    out.mlm_labels = vec![IGNORE_LABEL; row.len()];
    for pos in 0..row.len() {
        if row.word_ids[pos] == NO_WORD || !row.attn_mask[pos] {
            continue;
        }
        if rng.gen::<f64>() < p_mask {
            out.mlm_labels[pos] = row.ids[pos] as i64;
            let bucket: f64 = rng.gen();
            if bucket < 0.8 {
                out.ids[pos] = vocab.mask_id;
            } else if bucket < 0.9 {
                out.ids[pos] = random_regular_token(vocab, rng);
            }
        }
    }
    Ok(out)
}

/// Uniform draw over non-special vocabulary entries.
fn random_regular_token(vocab: &Vocabulary, rng: &mut impl Rng) -> usize {
    loop {
        let id = rng.gen_range(0..vocab.len());
        if !vocab.is_special(id) {
            return id;
        }
    }
}

/// Per-word masking outcome, reconstructed from a masked row. Used by
/// statistics tests and by corpora audits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WordOutcome {
    Unselected,
    Masked,
    Random,
    Kept,
}

/// Classify each word of `original` according to the masked `row`.
pub fn word_outcomes(original: &TokenRow, masked: &TokenRow, vocab: &Vocabulary) -> Vec<WordOutcome> {
    let mut outcomes = Vec::new();
    let mut i = 0;
    while i < original.len() {
        let wid = original.word_ids[i];
        if wid == NO_WORD || !original.attn_mask[i] {
            i += 1;
            continue;
        }
        let mut j = i;
        while j < original.len() && original.word_ids[j] == wid && original.attn_mask[j] {
            j += 1;
        }
        let labeled = (i..j).filter(|&p| masked.mlm_labels[p] != IGNORE_LABEL).count();
        let outcome = if labeled == 0 {
            WordOutcome::Unselected
        } else {
            assert_eq!(labeled, j - i, "partially labeled word");
            if (i..j).all(|p| masked.ids[p] == vocab.mask_id) {
                WordOutcome::Masked
            } else if (i..j).all(|p| masked.ids[p] == original.ids[p]) {
                WordOutcome::Kept
            } else {
                WordOutcome::Random
            }
        };
        outcomes.push(outcome);
        i = j;
    }
    outcomes
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds;
    use crate::text::tokenize::tokenize;
    use crate::text::vocab::{SpecialTokens, Vocabulary};

    fn vocab(extra: &[&str]) -> Vocabulary {
        let mut tokens = vec!["[PAD]", "[CLS]", "[SEP]", "[MASK]", "[UNK]"]
            .into_iter()
            .map(String::from)
            .collect::<Vec<_>>();
        tokens.extend(extra.iter().map(|s| s.to_string()));
        Vocabulary::new(tokens, &SpecialTokens::default()).unwrap()
    }

    #[test]
    fn no_partial_word_masking_ever() {
        let v = vocab(&["gi", "##raf", "##fe", "a", "red"]);
        let row = tokenize("a giraffe red giraffe", &v, 32).unwrap();
        for seed in 0..500u64 {
            let mut rng = seeds::rng(seed);
            let masked = whole_word_mask(&row, 0.5, &v, &mut rng).unwrap();
            // every word either fully labeled or fully ignored
            let mut i = 0;
            while i < row.len() {
                let wid = row.word_ids[i];
                if wid == NO_WORD {
                    i += 1;
                    continue;
                }
                let span: Vec<usize> = (i..row.len())
                    .take_while(|&p| row.word_ids[p] == wid)
                    .collect();
                let labeled = span
                    .iter()
                    .filter(|&&p| masked.mlm_labels[p] != IGNORE_LABEL)
                    .count();
                assert!(labeled == 0 || labeled == span.len());
                i += span.len();
            }
        }
    }

    #[test]
    fn degenerate_probability_leaves_row_unchanged() {
        let v = vocab(&["gi", "##raf", "##fe"]);
        let row = tokenize("giraffe", &v, 16).unwrap();
        let mut rng = seeds::rng(0);
        let masked = whole_word_mask(&row, 0.0, &v, &mut rng).unwrap();
        assert_eq!(masked.ids, row.ids);
        assert!(masked.mlm_labels.iter().all(|&l| l == IGNORE_LABEL));
    }

    #[test]
    fn cls_never_selected() {
        let v = vocab(&["a"]);
        let row = tokenize("a", &v, 16).unwrap();
        for seed in 0..50u64 {
            let mut rng = seeds::rng(seed);
            let masked = whole_word_mask(&row, 0.99, &v, &mut rng).unwrap();
            assert_eq!(masked.ids[0], v.cls_id);
            assert_eq!(masked.mlm_labels[0], IGNORE_LABEL);
        }
    }

    #[test]
    fn identical_seed_identical_pattern() {
        let v = vocab(&["gi", "##raf", "##fe", "red", "a"]);
        let row = tokenize("a red giraffe a red", &v, 32).unwrap();
        let a = whole_word_mask(&row, 0.3, &v, &mut seeds::rng(7)).unwrap();
        let b = whole_word_mask(&row, 0.3, &v, &mut seeds::rng(7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_word_ids_rejected() {
        let v = vocab(&["a"]);
        let mut row = tokenize("a", &v, 16).unwrap();
        row.word_ids.pop();
        assert!(whole_word_mask(&row, 0.15, &v, &mut seeds::rng(0)).is_err());
    }

    #[test]
    fn selection_and_corruption_statistics() {
        // 10,000 single-piece words at p=0.15: selection in [0.14, 0.16],
        // corruption split within ±2% absolute of 80/10/10. The vocab is
        // wide enough that random replacements rarely collide with the
        // original token.
        let filler: Vec<String> = (0..200).map(|i| format!("w{i}")).collect();
        let mut extra: Vec<&str> = vec!["word"];
        extra.extend(filler.iter().map(|s| s.as_str()));
        let v = vocab(&extra);
        let row = tokenize("word", &v, 4).unwrap();
        let mut rng = seeds::rng(123);
        let mut selected = 0usize;
        let mut masked_ct = 0usize;
        let mut random_ct = 0usize;
        let mut kept_ct = 0usize;
        let n = 10_000;
        for _ in 0..n {
            let m = whole_word_mask(&row, 0.15, &v, &mut rng).unwrap();
            match word_outcomes(&row, &m, &v)[0] {
                WordOutcome::Unselected => {}
                WordOutcome::Masked => {
                    selected += 1;
                    masked_ct += 1;
                }
                WordOutcome::Random => {
                    selected += 1;
                    random_ct += 1;
                }
                WordOutcome::Kept => {
                    selected += 1;
                    kept_ct += 1;
                }
            }
        }
        let rate = selected as f64 / n as f64;
        assert!((0.14..=0.16).contains(&rate), "selection rate {rate}");
        let share = |c: usize| c as f64 / selected as f64;
        assert!((share(masked_ct) - 0.8).abs() < 0.02, "mask share {}", share(masked_ct));
        assert!((share(random_ct) - 0.1).abs() < 0.02, "random share {}", share(random_ct));
        assert!((share(kept_ct) - 0.1).abs() < 0.02, "kept share {}", share(kept_ct));
    }
}

//! Greedy longest-match WordPiece tokenization over lowercased,
//! whitespace/punctuation-split words.

use crate::error::{Error, Result};
use crate::text::vocab::Vocabulary;

/// Sentinel for "no word" in `word_ids` (specials and padding).
pub const NO_WORD: i32 = -1;
/// Sentinel for "not predicted" in `mlm_labels`.
pub const IGNORE_LABEL: i64 = -100;

/// One tokenized sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenRow {
    /// Subword ids, `[CLS]` first.
    pub ids: Vec<usize>,
    /// Source-word index per subword, `NO_WORD` for specials/padding.
    pub word_ids: Vec<i32>,
    /// True at real tokens, false at padding.
    pub attn_mask: Vec<bool>,
    /// Original id at positions selected for MLM, `IGNORE_LABEL` elsewhere.
    pub mlm_labels: Vec<i64>,
}

impl TokenRow {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of positions with `attn_mask` true.
    pub fn active_len(&self) -> usize {
        self.attn_mask.iter().filter(|&&m| m).count()
    }
}

/// A batch of rows padded to a common length.
#[derive(Debug, Clone)]
pub struct TokenBatch {
    pub rows: Vec<TokenRow>,
    pub len: usize,
}

impl TokenBatch {
    pub fn from_rows(mut rows: Vec<TokenRow>, pad_id: usize) -> Self {
        let len = rows.iter().map(|r| r.len()).max().unwrap_or(0);
        for r in &mut rows {
            while r.len() < len {
                r.ids.push(pad_id);
                r.word_ids.push(NO_WORD);
                r.attn_mask.push(false);
                r.mlm_labels.push(IGNORE_LABEL);
            }
        }
        TokenBatch { rows, len }
    }

    pub fn batch_size(&self) -> usize {
        self.rows.len()
    }
}

/// Split into lowercased words: alphanumeric runs, with each punctuation
/// character standing alone.
pub fn split_words(text: &str) -> Vec<String> {
    let mut words = Vec::new();
    let mut current = String::new();
    for ch in text.chars().flat_map(|c| c.to_lowercase()) {
        if ch.is_whitespace() {
            if !current.is_empty() {
                words.push(std::mem::take(&mut current));
            }
        } else if ch.is_alphanumeric() {
            current.push(ch);
        } else {
            if !current.is_empty() {
                words.push(std::mem::take(&mut current));
            }
            words.push(ch.to_string());
        }
    }
    if !current.is_empty() {
        words.push(current);
    }
    words
}

/// Greedy longest-match WordPiece of a single word. Returns `None` when the
/// word cannot be covered, in which case the caller maps it to `[UNK]`.
fn wordpiece(word: &str, vocab: &Vocabulary) -> Option<Vec<usize>> {
    let chars: Vec<char> = word.chars().collect();
    let mut pieces = Vec::new();
    let mut start = 0;
    while start < chars.len() {
        let mut end = chars.len();
        let mut found = None;
        while end > start {
            let mut piece: String = chars[start..end].iter().collect();
            if start > 0 {
                piece = format!("##{piece}");
            }
            if let Some(id) = vocab.id_of(&piece) {
                found = Some((id, end));
                break;
            }
            end -= 1;
        }
        match found {
            Some((id, e)) => {
                pieces.push(id);
                start = e;
            }
            None => return None,
        }
    }
    Some(pieces)
}

/// Tokenize one sentence: `[CLS]` + WordPiece ids, truncated to `max_len`.
pub fn tokenize(text: &str, vocab: &Vocabulary, max_len: usize) -> Result<TokenRow> {
    if max_len < 2 {
        return Err(Error::Token(format!("max_len must be >= 2, got {max_len}")));
    }
    let mut ids = vec![vocab.cls_id];
    let mut word_ids = vec![NO_WORD];
    for (w_idx, word) in split_words(text).iter().enumerate() {
        let pieces = wordpiece(word, vocab).unwrap_or_else(|| vec![vocab.unk_id]);
        for id in pieces {
            ids.push(id);
            word_ids.push(w_idx as i32);
        }
    }
    ids.truncate(max_len);
    word_ids.truncate(max_len);
    let n = ids.len();
    Ok(TokenRow {
        ids,
        word_ids,
        attn_mask: vec![true; n],
        mlm_labels: vec![IGNORE_LABEL; n],
    })
}

/// Reassemble text from subword ids, merging `##` continuations and
/// skipping special tokens.
pub fn detokenize(ids: &[usize], vocab: &Vocabulary) -> String {
    let mut out = String::new();
    for &id in ids {
        if vocab.is_special(id) {
            continue;
        }
        let tok = vocab.token(id);
        if let Some(rest) = tok.strip_prefix("##") {
            out.push_str(rest);
        } else {
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(tok);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
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
    fn giraffe_splits_into_three_pieces_of_one_word() {
        let v = vocab(&["gi", "##raf", "##fe"]);
        let row = tokenize("giraffe", &v, 16).unwrap();
        let expect: Vec<usize> = vec![
            v.cls_id,
            v.id_of("gi").unwrap(),
            v.id_of("##raf").unwrap(),
            v.id_of("##fe").unwrap(),
        ];
        assert_eq!(row.ids, expect);
        assert_eq!(row.word_ids, vec![-1, 0, 0, 0]);
    }

    #[test]
    fn empty_input_is_cls_only() {
        let v = vocab(&["a"]);
        let row = tokenize("", &v, 16).unwrap();
        assert_eq!(row.ids, vec![v.cls_id]);
        assert_eq!(row.attn_mask, vec![true]);
    }

    #[test]
    fn repeated_word_gets_distinct_word_ids() {
        let v = vocab(&["aa"]);
        let row = tokenize("aa aa", &v, 16).unwrap();
        assert_eq!(row.word_ids, vec![-1, 0, 1]);
    }

    #[test]
    fn unknown_word_maps_to_unk() {
        let v = vocab(&["gi"]);
        let row = tokenize("gizmo", &v, 16).unwrap();
        assert_eq!(row.ids, vec![v.cls_id, v.unk_id]);
        assert_eq!(row.word_ids, vec![-1, 0]);
    }

    #[test]
    fn truncation_respects_max_len() {
        let v = vocab(&["a"]);
        let row = tokenize("a a a a a a", &v, 4).unwrap();
        assert_eq!(row.len(), 4);
        assert_eq!(row.ids[0], v.cls_id);
    }

    #[test]
    fn punctuation_splits_words() {
        let v = vocab(&["a", "b", ","]);
        let row = tokenize("A,b", &v, 16).unwrap();
        let toks: Vec<&str> = row.ids.iter().map(|&i| v.token(i)).collect();
        assert_eq!(toks, vec!["[CLS]", "a", ",", "b"]);
        assert_eq!(row.word_ids, vec![-1, 0, 1, 2]);
    }

    #[test]
    fn detokenize_round_trip() {
        let v = vocab(&["gi", "##raf", "##fe", "red", "cir", "##cle"]);
        for text in ["giraffe", "red circle", "giraffe red"] {
            let row = tokenize(text, &v, 32).unwrap();
            assert_eq!(detokenize(&row.ids, &v), text);
        }
    }

    #[test]
    fn batch_padding_marks_mask_false() {
        let v = vocab(&["a", "b"]);
        let rows = vec![
            tokenize("a", &v, 8).unwrap(),
            tokenize("a b a", &v, 8).unwrap(),
        ];
        let batch = TokenBatch::from_rows(rows, v.pad_id);
        assert_eq!(batch.len, 4);
        assert_eq!(batch.rows[0].ids.len(), 4);
        assert!(!batch.rows[0].attn_mask[2]);
        assert_eq!(batch.rows[0].ids[2], v.pad_id);
        assert_eq!(batch.rows[0].word_ids[2], NO_WORD);
    }
}

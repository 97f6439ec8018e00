//! WordPiece vocabulary: one token per line, id = line number, with the
//! five special tokens declared in a JSON sidecar.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Names of the special tokens as stored in the sidecar.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpecialTokens {
    pub pad: String,
    pub cls: String,
    pub sep: String,
    pub mask: String,
    pub unk: String,
}

impl Default for SpecialTokens {
    fn default() -> Self {
        SpecialTokens {
            pad: "[PAD]".into(),
            cls: "[CLS]".into(),
            sep: "[SEP]".into(),
            mask: "[MASK]".into(),
            unk: "[UNK]".into(),
        }
    }
}

/// Subword vocabulary with `##` continuation-prefix convention.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    pub pad_id: usize,
    pub cls_id: usize,
    pub sep_id: usize,
    pub mask_id: usize,
    pub unk_id: usize,
    special_ids: [usize; 5],
}

impl Vocabulary {
    pub fn new(tokens: Vec<String>, specials: &SpecialTokens) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Vocab(format!("duplicate token {t:?}")));
            }
        }
        let lookup = |name: &str| -> Result<usize> {
            index
                .get(name)
                .copied()
                .ok_or_else(|| Error::Vocab(format!("special token {name:?} missing from vocabulary")))
        };
        let pad_id = lookup(&specials.pad)?;
        let cls_id = lookup(&specials.cls)?;
        let sep_id = lookup(&specials.sep)?;
        let mask_id = lookup(&specials.mask)?;
        let unk_id = lookup(&specials.unk)?;
        Ok(Vocabulary {
            tokens,
            index,
            pad_id,
            cls_id,
            sep_id,
            mask_id,
            unk_id,
            special_ids: [pad_id, cls_id, sep_id, mask_id, unk_id],
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn id_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn is_special(&self, id: usize) -> bool {
        self.special_ids.contains(&id)
    }

    pub fn special_ids(&self) -> &[usize; 5] {
        &self.special_ids
    }

    /// Load `<path>` (token per line) plus the `<path>.specials.json` sidecar.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let sidecar = sidecar_path(path);
        let specials: SpecialTokens = serde_json::from_str(
            &fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?,
        )?;
        let tokens: Vec<String> = text.lines().map(|l| l.to_string()).collect();
        Vocabulary::new(tokens, &specials)
    }

    pub fn save(&self, path: &Path, specials: &SpecialTokens) -> Result<()> {
        let mut body = self.tokens.join("\n");
        body.push('\n');
        fs::write(path, body).map_err(|e| Error::io(path, e))?;
        let sidecar = sidecar_path(path);
        fs::write(&sidecar, serde_json::to_string_pretty(specials)?)
            .map_err(|e| Error::io(&sidecar, e))?;
        Ok(())
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".specials.json");
    std::path::PathBuf::from(s)
}

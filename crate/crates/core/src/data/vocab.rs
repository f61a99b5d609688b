use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::nn::{PAD, UNK};

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// String ↔ id map with reserved padding and unknown entries.
///
/// Build it from training data only, then [`freeze`](Self::freeze) it so
/// that development and test tokens map to `UNK`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocabulary {
    ids: HashMap<String, usize>,
    tokens: Vec<String>,
    frozen: bool,
    reserved: usize,
}

/// Serialized form: the id map is implied by token order, which keeps the
/// output byte-stable.
#[derive(Serialize, Deserialize)]
struct VocabRepr {
    tokens: Vec<String>,
    frozen: bool,
    reserved: usize,
}

impl From<Vocabulary> for VocabRepr {
    fn from(v: Vocabulary) -> Self {
        VocabRepr {
            tokens: v.tokens,
            frozen: v.frozen,
            reserved: v.reserved,
        }
    }
}

impl From<VocabRepr> for Vocabulary {
    fn from(r: VocabRepr) -> Self {
        let ids = r.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary {
            ids,
            tokens: r.tokens,
            frozen: r.frozen,
            reserved: r.reserved,
        }
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    /// Vocabulary with `PAD = 0` and `UNK = 1`.
    pub fn new() -> Self {
        let mut v = Vocabulary {
            ids: HashMap::new(),
            tokens: Vec::new(),
            frozen: false,
            reserved: 2,
        };
        for t in [PAD_TOKEN, UNK_TOKEN] {
            v.ids.insert(t.to_string(), v.tokens.len());
            v.tokens.push(t.to_string());
        }
        debug_assert_eq!(v.ids[PAD_TOKEN], PAD);
        debug_assert_eq!(v.ids[UNK_TOKEN], UNK);
        v
    }

    /// Label inventory without reserved entries (tags, relations).
    pub fn labels() -> Self {
        Vocabulary {
            ids: HashMap::new(),
            tokens: Vec::new(),
            frozen: false,
            reserved: 0,
        }
    }

    pub fn from_tokens<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Self {
        let mut v = Self::new();
        tokens.into_iter().for_each(|t| {
            v.add(t);
        });
        v
    }

    pub fn labels_from<'a>(labels: impl IntoIterator<Item = &'a str>) -> Self {
        let mut v = Self::labels();
        labels.into_iter().for_each(|t| {
            v.add(t);
        });
        v
    }

    /// Adds `token` unless frozen; returns its id (UNK when frozen and
    /// absent, `None` for a frozen label inventory).
    pub fn add(&mut self, token: &str) -> Option<usize> {
        if let Some(&id) = self.ids.get(token) {
            return Some(id);
        }
        if self.frozen {
            return (self.reserved > 0).then_some(UNK);
        }
        let id = self.tokens.len();
        self.ids.insert(token.to_string(), id);
        self.tokens.push(token.to_string());
        Some(id)
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    /// Id of `token`, or `UNK` for word vocabularies.
    pub fn id_or_unk(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() == self.reserved
    }

    /// Entries excluding reserved ones, in id order.
    pub fn entries(&self) -> &[String] {
        &self.tokens[self.reserved..]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids_and_freeze() {
        let mut v = Vocabulary::from_tokens(["the", "cat", "the"]);
        assert_eq!(v.len(), 4);
        assert_eq!(v.get("the"), Some(2));
        assert_eq!(v.id_or_unk("dog"), UNK);
        v.freeze();
        assert_eq!(v.add("dog"), Some(UNK));
        assert_eq!(v.len(), 4);
        assert_eq!(v.token(PAD), PAD_TOKEN);
    }

    #[test]
    fn label_inventory_has_no_reserved_rows() {
        let mut l = Vocabulary::labels_from(["NOUN", "VERB"]);
        assert_eq!(l.get("NOUN"), Some(0));
        l.freeze();
        assert_eq!(l.add("ADJ"), None);
        assert_eq!(l.entries(), &["NOUN".to_string(), "VERB".to_string()]);
    }

    #[test]
    fn json_round_trip_is_stable() {
        let mut v = Vocabulary::from_tokens(["zebra", "apple", "mango", "kiwi"]);
        v.freeze();
        let text = serde_json::to_string(&v).unwrap();
        assert_eq!(text, r#"{"tokens":["<pad>","<unk>","zebra","apple","mango","kiwi"],"frozen":true,"reserved":2}"#);
        let back: Vocabulary = serde_json::from_str(&text).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.get("mango"), Some(4));
    }
}

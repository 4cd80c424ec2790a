//! Instruction tokenization.

use std::collections::HashMap;

/// Sentence-ending token.
pub const PERIOD: &str = ".";

/// Lowercase, split on whitespace, and split `.`/`,` off as their own tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for raw in text.split_whitespace() {
        let mut word = String::new();
        for ch in raw.chars() {
            if ch == '.' || ch == ',' {
                if !word.is_empty() {
                    out.push(std::mem::take(&mut word));
                }
                out.push(ch.to_string());
            } else {
                word.extend(ch.to_lowercase());
            }
        }
        if !word.is_empty() {
            out.push(word);
        }
    }
    out
}

pub fn join(tokens: &[String]) -> String {
    tokens.join(" ")
}

pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const UNK: &str = "[UNK]";

/// Token to embedding-row mapping. Reserved tokens occupy the first rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Reserved tokens, punctuation, then `words` in order with duplicates dropped.
    pub fn new<I: IntoIterator<Item = String>>(words: I) -> Self {
        let mut v = Vocab {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for w in [CLS, SEP, UNK, PERIOD, ","].into_iter().map(String::from).chain(words) {
            if !v.index.contains_key(&w) {
                v.index.insert(w.clone(), v.tokens.len());
                v.tokens.push(w);
            }
        }
        v
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, tok: &str) -> usize {
        self.index.get(tok).copied().unwrap_or(self.index[UNK])
    }

    /// `[CLS] tokens [SEP]` as ids.
    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        let mut ids = Vec::with_capacity(tokens.len() + 2);
        ids.push(self.id(CLS));
        ids.extend(tokens.iter().map(|t| self.id(t)));
        ids.push(self.id(SEP));
        ids
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_punctuation() {
        assert_eq!(
            tokenize("Walk out of the bedroom. Walk through the kitchen."),
            vec!["walk", "out", "of", "the", "bedroom", ".", "walk", "through", "the", "kitchen", "."]
        );
        assert_eq!(tokenize("  "), Vec::<String>::new());
        assert_eq!(tokenize("a,b"), vec!["a", ",", "b"]);
    }

    #[test]
    fn vocab_wraps_and_maps_unknowns() {
        let v = Vocab::new(["walk".to_string(), "kitchen".to_string(), "walk".to_string()]);
        assert_eq!(v.len(), 7);
        let ids = v.encode(&tokenize("walk zebra."));
        assert_eq!(ids, vec![v.id(CLS), v.id("walk"), v.id(UNK), v.id(PERIOD), v.id(SEP)]);
    }
}

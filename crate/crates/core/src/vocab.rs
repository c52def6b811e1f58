//! Tokenizer and vocabulary shared by the scorer and the retriever.

use std::collections::{BTreeSet, HashMap};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const UNK: TokenId = 3;
const RESERVED: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

fn is_punct(c: char) -> bool {
    matches!(c, '.' | ',' | ':' | ';' | '!' | '?' | '-' | '(' | ')' | '"' | '\'' | '#')
}

/// Lowercases, splits on whitespace and splits punctuation into its own tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let mut cur = String::new();
        for c in word.chars() {
            if is_punct(c) {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(c.to_string());
            } else {
                cur.extend(c.to_lowercase());
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

/// Joins tokens with spaces, attaching closing punctuation to the left.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    for t in tokens {
        let t = t.as_ref();
        let attach = matches!(t, "." | "," | ":" | ";" | "!" | "?" | ")");
        if !out.is_empty() && !attach {
            out.push(' ');
        }
        out.push_str(t);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// Builds a vocabulary from every token in `texts`, sorted for determinism.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let set: BTreeSet<String> = texts.into_iter().flat_map(tokenize).collect();
        Self::from_tokens(set.into_iter().filter(|t| !RESERVED.contains(&t.as_str())))
    }

    /// Non-reserved tokens in id order.
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Self {
        let mut all: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        all.extend(tokens);
        let index = all.iter().enumerate().map(|(i, t)| (t.clone(), i as TokenId)).collect();
        Self { tokens: all, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= RESERVED.len()
    }

    pub fn id(&self, token: &str) -> TokenId {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id as usize]
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    /// Inverse of [`encode`](Self::encode) up to casing; pad/bos/eos are skipped.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        let toks: Vec<&str> = ids
            .iter()
            .filter(|&&i| !matches!(i, PAD | BOS | EOS))
            .map(|&i| self.token(i))
            .collect();
        detokenize(&toks)
    }

    /// Non-reserved tokens in id order.
    pub fn user_tokens(&self) -> &[String] {
        &self.tokens[RESERVED.len()..]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_punctuation() {
        assert_eq!(tokenize("Best. Sushi: good;"), vec!["best", ".", "sushi", ":", "good", ";"]);
        assert_eq!(tokenize("Example 1- Input:"), vec!["example", "1", "-", "input", ":"]);
    }

    #[test]
    fn label_strings_survive_decode() {
        let v = Vocabulary::build(["wine list: positive; wait: negative", "a, b"]);
        for s in ["wine list: positive; wait: negative", "a, b: positive"] {
            assert_eq!(v.decode(&v.encode(s)), s);
        }
    }

    #[test]
    fn unknown_tokens_map_to_unk() {
        let v = Vocabulary::build(["a b"]);
        assert_eq!(v.encode("a zebra"), vec![v.id("a"), UNK]);
        assert_eq!(v.len(), 6);
    }

    #[test]
    fn deterministic_ids() {
        assert_eq!(Vocabulary::build(["b a", "c"]), Vocabulary::build(["c a", "b"]));
    }
}

//! Tokenization shared by the embedder, the BM25 index, the reranker and the
//! query pipeline. Every component must agree on what a token is, otherwise
//! lexical statistics and query terms drift apart.

use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

/// Lowercase and split on every non-alphanumeric character.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// A token together with its position in the source, in `char` offsets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSpan {
    pub start: usize,
    pub end: usize,
    pub token: String,
}

/// Same segmentation as [`tokenize`], keeping char offsets.
pub fn token_spans(text: &str) -> Vec<TokenSpan> {
    let mut spans = Vec::new();
    let mut current = String::new();
    let mut start = 0;
    let mut count = 0;
    for (i, c) in text.chars().enumerate() {
        count = i + 1;
        if c.is_alphanumeric() {
            if current.is_empty() {
                start = i;
            }
            current.push(c);
        } else if !current.is_empty() {
            spans.push(TokenSpan {
                start,
                end: i,
                token: std::mem::take(&mut current).to_lowercase(),
            });
        }
    }
    if !current.is_empty() {
        spans.push(TokenSpan {
            start,
            end: count,
            token: current.to_lowercase(),
        });
    }
    spans
}

/// Lowercase and strip diacritics (`"Instalación"` -> `"instalacion"`).
pub fn fold(text: &str) -> String {
    text.nfd()
        .filter(|c| !is_combining_mark(*c))
        .collect::<String>()
        .to_lowercase()
}

/// Canonical query form: folded, punctuation replaced by spaces, whitespace
/// collapsed and trimmed.
pub fn canonicalize(text: &str) -> String {
    let folded: String = fold(text)
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    folded.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Tokens of the canonical form.
pub fn folded_tokens(text: &str) -> Vec<String> {
    tokenize(&fold(text))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_splits_on_punctuation() {
        assert_eq!(
            tokenize("MPI_Init failed: GPU-node #3"),
            vec!["mpi", "init", "failed", "gpu", "node", "3"]
        );
        assert!(tokenize("  ...  ").is_empty());
    }

    #[test]
    fn spans_agree_with_tokenize() {
        let text = "Olá, ¿cómo instalar GROMACS 2023?";
        let spans = token_spans(text);
        let tokens: Vec<_> = spans.iter().map(|s| s.token.clone()).collect();
        assert_eq!(tokens, tokenize(text));
        let chars: Vec<char> = text.chars().collect();
        for s in &spans {
            let raw: String = chars[s.start..s.end].iter().collect();
            assert_eq!(raw.to_lowercase(), s.token);
        }
    }

    #[test]
    fn canonical_form() {
        assert_eq!(canonicalize("  Instalación   de  GROMACS!! "), "instalacion de gromacs");
        assert_eq!(canonicalize("Slurm"), "slurm");
        assert_eq!(fold("Galego: ÑANDÚ"), "galego: nandu");
    }
}

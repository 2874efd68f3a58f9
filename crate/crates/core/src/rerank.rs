//! Cross-scoring of (prompt, document) pairs.

use std::collections::HashSet;

use thiserror::Error;

use crate::text::tokenize;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("reranker failure: {0}")]
pub struct RerankError(pub String);

pub trait Reranker: Send + Sync {
    fn identity(&self) -> String;

    fn score(&self, prompt: &str, text: &str) -> Result<f64, RerankError>;
}

/// Reference scorer: the fraction of distinct prompt tokens present in the
/// document.
#[derive(Debug, Clone, Copy, Default)]
pub struct CoverageReranker;

impl Reranker for CoverageReranker {
    fn identity(&self) -> String {
        "token-coverage-v1".to_string()
    }

    fn score(&self, prompt: &str, text: &str) -> Result<f64, RerankError> {
        let prompt: HashSet<String> = tokenize(prompt).into_iter().collect();
        if prompt.is_empty() {
            return Ok(0.0);
        }
        let text: HashSet<String> = tokenize(text).into_iter().collect();
        let hits = prompt.iter().filter(|t| text.contains(*t)).count();
        Ok(hits as f64 / prompt.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn coverage_examples() {
        let r = CoverageReranker;
        assert_eq!(r.score("gpu node", "the GPU node is down").unwrap(), 1.0);
        assert_eq!(r.score("gpu node", "quota exceeded").unwrap(), 0.0);
        assert_eq!(r.score("install python", "python 3.11 available").unwrap(), 0.5);
        assert_eq!(r.score("", "anything").unwrap(), 0.0);
        assert_eq!(r.score("same text here", "same text here").unwrap(), 1.0);
    }

    proptest! {
        #[test]
        fn range_and_monotonicity(prompt in "[a-e ]{0,20}", text in "[a-e ]{0,30}", extra in "[a-e]{1,3}") {
            let r = CoverageReranker;
            let base = r.score(&prompt, &text).unwrap();
            prop_assert!((0.0..=1.0).contains(&base));
            let text_with = format!("{text} {extra}");
            let before = r.score(&prompt, &text_with).unwrap();
            let after = r.score(&format!("{prompt} {extra}"), &text_with).unwrap();
            prop_assert!(after >= before - 1e-12);
        }
    }
}

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::index::{DocId, Hit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Semantic,
    Lexical,
}

/// One ranker's output: a channel run for one query variant. Only the order
/// of `docs` matters; rank is the 1-based position.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub channel: Channel,
    pub variant: usize,
    pub variant_weight: f64,
    pub docs: Vec<DocId>,
}

impl RankedList {
    pub fn from_hits(channel: Channel, variant: usize, variant_weight: f64, hits: &[Hit]) -> Self {
        Self {
            channel,
            variant,
            variant_weight,
            docs: hits.iter().map(|h| h.doc).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionWeights {
    pub k_rrf: f64,
    pub semantic: f64,
    pub lexical: f64,
}

impl Default for FusionWeights {
    fn default() -> Self {
        Self {
            k_rrf: 60.0,
            semantic: 0.6,
            lexical: 0.4,
        }
    }
}

impl FusionWeights {
    pub fn channel(&self, channel: Channel) -> f64 {
        match channel {
            Channel::Semantic => self.semantic,
            Channel::Lexical => self.lexical,
        }
    }

    /// `w_r`: channel weight times variant weight.
    pub fn list_weight(&self, list: &RankedList) -> f64 {
        self.channel(list.channel) * list.variant_weight
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fused {
    pub doc: DocId,
    pub score: f64,
    /// Indices of the input lists containing `doc`.
    pub sources: Vec<usize>,
}

/// Weighted reciprocal rank fusion:
/// `s(d) = sum over lists r containing d of w_r / (k_rrf + rank_r(d))`.
/// Sorted by score descending, lower doc id first on ties.
pub fn fuse_wrrf(lists: &[RankedList], weights: &FusionWeights) -> Vec<Fused> {
    let mut acc: HashMap<DocId, (f64, Vec<usize>)> = HashMap::new();
    for (i, list) in lists.iter().enumerate() {
        let w = weights.list_weight(list);
        for (pos, &doc) in list.docs.iter().enumerate() {
            let entry = acc.entry(doc).or_insert((0.0, Vec::new()));
            if entry.1.last() == Some(&i) {
                continue;
            }
            entry.0 += w / (weights.k_rrf + (pos + 1) as f64);
            entry.1.push(i);
        }
    }
    let mut out: Vec<Fused> = acc
        .into_iter()
        .map(|(doc, (score, sources))| Fused { doc, score, sources })
        .collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.doc.cmp(&b.doc)));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn list(channel: Channel, w: f64, docs: &[DocId]) -> RankedList {
        RankedList {
            channel,
            variant: 0,
            variant_weight: w,
            docs: docs.to_vec(),
        }
    }

    #[test]
    fn single_list_keeps_order() {
        let w = FusionWeights {
            k_rrf: 60.0,
            semantic: 1.0,
            lexical: 1.0,
        };
        let out = fuse_wrrf(&[list(Channel::Semantic, 1.0, &[7, 3, 9, 1])], &w);
        assert_eq!(out.iter().map(|f| f.doc).collect::<Vec<_>>(), [7, 3, 9, 1]);
    }

    #[test]
    fn two_channel_hand_example() {
        let out = fuse_wrrf(
            &[
                list(Channel::Semantic, 1.0, &[1, 2]),
                list(Channel::Lexical, 1.0, &[2, 1]),
            ],
            &FusionWeights::default(),
        );
        assert_eq!(out[0].doc, 1);
        assert_eq!(out[1].doc, 2);
        assert!((out[0].score - (0.6 / 61.0 + 0.4 / 62.0)).abs() < 1e-15);
        assert!((out[1].score - (0.6 / 62.0 + 0.4 / 61.0)).abs() < 1e-15);
        assert!((out[0].score - 0.016288).abs() < 5e-7);
        assert!((out[1].score - 0.016235).abs() < 5e-7);
        assert_eq!(out[0].sources, [0, 1]);
    }

    #[test]
    fn empty_inputs() {
        assert!(fuse_wrrf(&[], &FusionWeights::default()).is_empty());
        assert!(fuse_wrrf(&[list(Channel::Lexical, 1.0, &[])], &FusionWeights::default()).is_empty());
    }

    #[test]
    fn ties_prefer_lower_doc() {
        let out = fuse_wrrf(
            &[
                list(Channel::Semantic, 1.0, &[5, 2]),
                list(Channel::Semantic, 1.0, &[2, 5]),
            ],
            &FusionWeights::default(),
        );
        assert_eq!(out[0].doc, 2);
        assert_eq!(out[0].score, out[1].score);
    }
}

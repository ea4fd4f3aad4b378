//! Layer-wise conflict detection: which tokens' attention encroaches on the
//! reserved text region.

use std::collections::BTreeSet;

use crate::attention::{AttentionMap, AttentionStack, GuidanceParams};
use crate::error::Result;
use crate::geometry::{Mask, Region};

/// One flagged `(layer, token)` pair together with the measured overlap mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConflictEntry {
    pub layer: usize,
    pub token: usize,
    pub mean: f64,
}

/// The set of `(layer, token)` pairs whose overlap mean exceeded the
/// detection threshold, ordered by ascending layer then token.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConflictSet {
    entries: Vec<ConflictEntry>,
}

impl ConflictSet {
    pub fn entries(&self) -> &[ConflictEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_flagged(&self, layer: usize, token: usize) -> bool {
        self.entries
            .iter()
            .any(|e| e.layer == layer && e.token == token)
    }

    /// Tokens flagged at one layer, ascending.
    pub fn tokens_at_layer(&self, layer: usize) -> Vec<usize> {
        self.entries
            .iter()
            .filter(|e| e.layer == layer)
            .map(|e| e.token)
            .collect()
    }

    /// All tokens flagged anywhere.
    pub fn flagged_tokens(&self) -> BTreeSet<usize> {
        self.entries.iter().map(|e| e.token).collect()
    }
}

/// Whether `map`'s mean attention inside `mask` strictly exceeds `theta`.
pub fn detect(map: &AttentionMap, mask: &Mask, theta: f64) -> Result<bool> {
    Ok(map.mean_in_region(mask)? > theta)
}

/// Run [`detect`] for every editable token at every layer of `stack`,
/// rasterizing `region` at each layer's resolution.
pub fn detect_all(
    stack: &AttentionStack,
    region: &Region,
    params: &GuidanceParams,
    editable_tokens: &BTreeSet<usize>,
) -> Result<ConflictSet> {
    let mut entries = Vec::new();
    for (li, spec) in stack.layers().iter().enumerate() {
        let mask = region.rasterize(spec.height, spec.width)?;
        for &token in editable_tokens {
            debug_assert!(token < stack.token_count());
            let mean = stack.map(li, token).mean_in_region(&mask)?;
            if mean > params.theta {
                entries.push(ConflictEntry {
                    layer: spec.id,
                    token,
                    mean,
                });
            }
        }
    }
    entries.sort_by(|a, b| (a.layer, a.token).cmp(&(b.layer, b.token)));
    Ok(ConflictSet { entries })
}

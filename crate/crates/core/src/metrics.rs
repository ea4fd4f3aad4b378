//! Evaluation metrics: total-variation smoothness inside the text region,
//! saliency IOU, and the combined concordance score.

use crate::attention::{AttentionMap, AttentionStack};
use crate::error::{Error, Result};
use crate::geometry::Mask;

/// Metric summary for one trajectory.
///
/// `semantic_score` is an externally supplied number (this crate computes no
/// embedding model); `vtcm` is present whenever both denominators are
/// positive.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricsReport {
    #[serde(rename = "tv_loss_in_R")]
    pub tv_loss_in_region: f64,
    pub saliency_iou: f64,
    pub semantic_score: f64,
    pub vtcm: Option<f64>,
}

impl MetricsReport {
    pub fn new(tv_loss_in_region: f64, saliency_iou: f64, semantic_score: f64) -> Result<Self> {
        if !(semantic_score.is_finite() && semantic_score > 0.0) {
            return Err(Error::invariant(format!(
                "semantic_score must be positive and finite, got {semantic_score}"
            )));
        }
        if !tv_loss_in_region.is_finite() || !saliency_iou.is_finite() {
            return Err(Error::invariant("metric values must be finite"));
        }
        let vtcm_value = if saliency_iou > 0.0 && tv_loss_in_region > 0.0 {
            Some(vtcm(semantic_score, saliency_iou, tv_loss_in_region)?)
        } else {
            None
        };
        Ok(MetricsReport {
            tv_loss_in_region,
            saliency_iou,
            semantic_score,
            vtcm: vtcm_value,
        })
    }
}

/// Proxy for a rendered image's saliency substrate: per-pixel max across the
/// object tokens of the finest layer, normalized to peak 1.0.
pub fn composite_field(
    stack: &AttentionStack,
    background_token: Option<usize>,
) -> Result<AttentionMap> {
    let li = stack.finest_layer();
    let spec = stack.layers()[li];
    let mut acc = vec![0.0; spec.height * spec.width];
    for token in 0..stack.token_count() {
        if Some(token) == background_token {
            continue;
        }
        let m = stack.map(li, token);
        for (dst, src) in acc.iter_mut().zip(m.values()) {
            if *src > *dst {
                *dst = *src;
            }
        }
    }
    let peak = acc.iter().cloned().fold(0.0, f64::max);
    if peak <= 0.0 {
        return Err(Error::ZeroMass);
    }
    for v in &mut acc {
        *v /= peak;
    }
    AttentionMap::new(spec.height, spec.width, 0, spec.id, acc)
}

/// Anisotropic total variation over neighbor pairs that lie entirely inside
/// the mask, averaged per pair and expressed as a percentage. Returns zero
/// when the mask has no interior neighbor pairs.
pub fn tv_loss(field: &AttentionMap, mask: &Mask) -> Result<f64> {
    if mask.height() != field.height() || mask.width() != field.width() {
        return Err(Error::ShapeMismatch {
            expected_h: field.height(),
            expected_w: field.width(),
            got_h: mask.height(),
            got_w: mask.width(),
        });
    }
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for h in 0..field.height() {
        for w in 0..field.width() {
            if !mask.get(h, w) {
                continue;
            }
            if h + 1 < field.height() && mask.get(h + 1, w) {
                sum += (field.get(h + 1, w) - field.get(h, w)).abs();
                pairs += 1;
            }
            if w + 1 < field.width() && mask.get(h, w + 1) {
                sum += (field.get(h, w + 1) - field.get(h, w)).abs();
                pairs += 1;
            }
        }
    }
    if pairs == 0 {
        return Ok(0.0);
    }
    Ok(sum / pairs as f64 * 100.0)
}

/// Percentage overlap between the salient set `{field >= sal_threshold}` and
/// the mask: `100 * |S ∩ R| / |S ∪ R|`, or zero when nothing is salient.
pub fn saliency_iou(field: &AttentionMap, mask: &Mask, sal_threshold: f64) -> Result<f64> {
    if mask.height() != field.height() || mask.width() != field.width() {
        return Err(Error::ShapeMismatch {
            expected_h: field.height(),
            expected_w: field.width(),
            got_h: mask.height(),
            got_w: mask.width(),
        });
    }
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    if !(0.0..1.0).contains(&sal_threshold) || sal_threshold <= 0.0 {
        return Err(Error::invariant(format!(
            "sal_threshold must lie in (0, 1), got {sal_threshold}"
        )));
    }
    let mut salient = 0usize;
    let mut intersection = 0usize;
    let mut union = 0usize;
    for h in 0..field.height() {
        for w in 0..field.width() {
            let s = field.get(h, w) >= sal_threshold;
            let r = mask.get(h, w);
            if s {
                salient += 1;
            }
            if s && r {
                intersection += 1;
            }
            if s || r {
                union += 1;
            }
        }
    }
    if salient == 0 {
        return Ok(0.0);
    }
    Ok(100.0 * intersection as f64 / union as f64)
}

/// Visual-textual concordance: `semantic_score * (1/saliency_iou + 1/tv)`.
pub fn vtcm(semantic_score: f64, saliency_iou: f64, tv: f64) -> Result<f64> {
    if saliency_iou <= 0.0 || tv <= 0.0 {
        return Err(Error::DivisionDomain {
            iou: saliency_iou,
            tv,
        });
    }
    Ok(semantic_score * (1.0 / saliency_iou + 1.0 / tv))
}

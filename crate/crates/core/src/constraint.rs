//! The spatial-excluding attention constraint and the guidance loss
//! comparing original and result stacks.

use std::collections::{BTreeMap, BTreeSet};

use crate::attention::{AttentionMap, AttentionStack};
use crate::error::{Error, Result};
use crate::geometry::{Mask, Region};
use crate::warp::WarpAction;

/// Everything one guidance step did to a stack: which `(layer, token)` pairs
/// were warped and how, which received the spatial exclusion, and the region
/// and lambda that exclusion used.
#[derive(Debug, Clone, PartialEq)]
pub struct EditPlan {
    region: Region,
    lambda_sec: f64,
    edits: BTreeMap<(usize, usize), WarpAction>,
    sec_applied: BTreeSet<(usize, usize)>,
}

impl EditPlan {
    pub fn new(region: Region, lambda_sec: f64) -> Self {
        EditPlan {
            region,
            lambda_sec,
            edits: BTreeMap::new(),
            sec_applied: BTreeSet::new(),
        }
    }

    pub fn record_edit(&mut self, layer: usize, token: usize, action: WarpAction) {
        self.edits.insert((layer, token), action);
    }

    pub fn record_sec(&mut self, layer: usize, token: usize) {
        self.sec_applied.insert((layer, token));
    }

    pub fn region(&self) -> &Region {
        &self.region
    }

    pub fn lambda_sec(&self) -> f64 {
        self.lambda_sec
    }

    pub fn edits(&self) -> &BTreeMap<(usize, usize), WarpAction> {
        &self.edits
    }

    pub fn sec_applied(&self) -> &BTreeSet<(usize, usize)> {
        &self.sec_applied
    }

    pub fn is_empty(&self) -> bool {
        self.edits.is_empty() && self.sec_applied.is_empty()
    }
}

/// Redirect attention away from the masked cells: `lambda * map * (1 - mask)`.
/// Output is exactly zero where the mask is set and lambda-scaled elsewhere.
pub fn spatial_excluding_constraint(
    map: &AttentionMap,
    mask: &Mask,
    lambda_sec: f64,
) -> Result<AttentionMap> {
    if mask.height() != map.height() || mask.width() != map.width() {
        return Err(Error::ShapeMismatch {
            expected_h: map.height(),
            expected_w: map.width(),
            got_h: mask.height(),
            got_w: mask.width(),
        });
    }
    if !(0.0..=1.0).contains(&lambda_sec) {
        return Err(Error::invariant(format!(
            "lambda_sec must lie in [0, 1], got {lambda_sec}"
        )));
    }
    let mut out = Vec::with_capacity(map.height() * map.width());
    for h in 0..map.height() {
        for w in 0..map.width() {
            out.push(if mask.get(h, w) {
                0.0
            } else {
                lambda_sec * map.get(h, w)
            });
        }
    }
    map.with_values(out)
}

/// Loss terms of one guidance step, all non-negative.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossTerms {
    pub total: f64,
    pub main_term: f64,
    pub norm_term: f64,
}

fn frobenius_sq(a: &AttentionMap, b: &AttentionMap) -> f64 {
    a.values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

/// Squared distance between the result stack and its per-step targets.
///
/// Edited pairs compare `res` against the plan's edits applied to the
/// original map (warp, then exclusion where recorded); every other pair
/// compares `res` against `ori` directly, weighted by `gamma`, which
/// safeguards the tokens guidance was not supposed to touch.
pub fn guidance_loss(
    ori: &AttentionStack,
    res: &AttentionStack,
    plan: &EditPlan,
    gamma: f64,
) -> Result<LossTerms> {
    if !ori.same_layout(res) {
        return Err(Error::LayoutMismatch);
    }
    let mut main_term = 0.0;
    let mut norm_term = 0.0;
    for (li, spec) in ori.layers().iter().enumerate() {
        let mask = plan.region.rasterize(spec.height, spec.width)?;
        for token in 0..ori.token_count() {
            let key = (spec.id, token);
            let res_map = res.map(li, token);
            if let Some(action) = plan.edits.get(&key) {
                let mut target = action.apply(ori.map(li, token));
                if plan.sec_applied.contains(&key) {
                    target = spatial_excluding_constraint(&target, &mask, plan.lambda_sec)?;
                }
                main_term += frobenius_sq(&target, res_map);
            } else {
                norm_term += frobenius_sq(ori.map(li, token), res_map);
            }
        }
    }
    Ok(LossTerms {
        total: main_term + gamma * norm_term,
        main_term,
        norm_term,
    })
}

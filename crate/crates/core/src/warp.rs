//! Map warping: translation, boundary-preserving scale factors, and the
//! affine transform that keeps a displaced object's bounding box inside the
//! canvas.
//!
//! All resampling is inverse-mapped bilinear interpolation with zero fill
//! outside the source grid, so warps never punch holes and never produce
//! negative values.

use crate::attention::{AttentionMap, GuidanceParams};
use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, Vec2};

/// Axis-aligned scale-and-translate transform.
///
/// The raw homogeneous matrix is `(S_x, 0, t_x; 0, S_y, t_y; 0, 0, 1)` with
/// `t = shift - origin`, exposed via [`AffineTransform::matrix`]. The action
/// used for warping composes the scale about `origin` with the translation:
/// `p' = S * (p + shift - origin) + origin`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineTransform {
    scale: (f64, f64),
    shift: Vec2,
    origin: Vec2,
}

impl AffineTransform {
    pub fn new(shift: Vec2, scale: (f64, f64), origin: Vec2) -> Result<Self> {
        let (sx, sy) = scale;
        if !(sx.is_finite() && sy.is_finite() && sx > 0.0 && sx <= 1.0 && sy > 0.0 && sy <= 1.0) {
            return Err(Error::invariant(format!(
                "scale factors must lie in (0, 1], got ({sx}, {sy})"
            )));
        }
        if !shift.is_finite() || !origin.is_finite() {
            return Err(Error::invariant("transform translation must be finite"));
        }
        Ok(AffineTransform {
            scale,
            shift,
            origin,
        })
    }

    pub fn identity() -> Self {
        AffineTransform {
            scale: (1.0, 1.0),
            shift: Vec2::zero(),
            origin: Vec2::zero(),
        }
    }

    pub fn scale(&self) -> (f64, f64) {
        self.scale
    }

    pub fn shift(&self) -> Vec2 {
        self.shift
    }

    pub fn origin(&self) -> Vec2 {
        self.origin
    }

    /// The raw 3x3 homogeneous matrix with rows scaled by `S_x` and columns
    /// by `S_y`.
    pub fn matrix(&self) -> [[f64; 3]; 3] {
        [
            [self.scale.0, 0.0, self.shift.row - self.origin.row],
            [0.0, self.scale.1, self.shift.col - self.origin.col],
            [0.0, 0.0, 1.0],
        ]
    }

    /// Forward action `p' = S * (p + shift - origin) + origin`.
    pub fn apply(&self, p: Vec2) -> Vec2 {
        Vec2::new(
            self.scale.0 * (p.row + self.shift.row - self.origin.row) + self.origin.row,
            self.scale.1 * (p.col + self.shift.col - self.origin.col) + self.origin.col,
        )
    }

    /// Inverse action, used for resampling.
    pub fn apply_inverse(&self, p: Vec2) -> Vec2 {
        Vec2::new(
            (p.row - self.origin.row) / self.scale.0 + self.origin.row - self.shift.row,
            (p.col - self.origin.col) / self.scale.1 + self.origin.col - self.shift.col,
        )
    }
}

/// Populate the transform from a displacement, scale factors, and the
/// scaling origin.
pub fn build_transform(d: Vec2, scale: (f64, f64), o_new: Vec2) -> Result<AffineTransform> {
    AffineTransform::new(d, scale, o_new)
}

/// Bilinear sample of `map` at real position `(r, c)`, zero outside the grid.
fn sample_bilinear(map: &AttentionMap, r: f64, c: f64) -> f64 {
    let r0 = r.floor();
    let c0 = c.floor();
    let fr = r - r0;
    let fc = c - c0;
    let r0 = r0 as i64;
    let c0 = c0 as i64;
    let fetch = |ri: i64, ci: i64| -> f64 {
        if ri < 0 || ci < 0 || ri >= map.height() as i64 || ci >= map.width() as i64 {
            0.0
        } else {
            map.get(ri as usize, ci as usize)
        }
    };
    (1.0 - fr) * (1.0 - fc) * fetch(r0, c0)
        + (1.0 - fr) * fc * fetch(r0, c0 + 1)
        + fr * (1.0 - fc) * fetch(r0 + 1, c0)
        + fr * fc * fetch(r0 + 1, c0 + 1)
}

/// Shift a map by `d`, discarding everything that leaves the grid and
/// filling the vacated cells with zeros. Integer shifts are exact.
pub fn translate_map(map: &AttentionMap, d: Vec2) -> AttentionMap {
    let mut out = Vec::with_capacity(map.height() * map.width());
    for h in 0..map.height() {
        for w in 0..map.width() {
            out.push(sample_bilinear(map, h as f64 - d.row, w as f64 - d.col));
        }
    }
    map.with_values(out).expect("bilinear samples stay finite and non-negative")
}

/// Boundary-preserving scale factors for a displaced box whose lower-right
/// corner sits at `(a', b')` in the shifted frame:
/// `(min(1, (H-1)/a'), min(1, (W-1)/b'))`.
pub fn compute_scale(bbox_moved: &BoundingBox, height: usize, width: usize) -> Result<(f64, f64)> {
    let (a, b) = (bbox_moved.a, bbox_moved.b);
    if a <= 0.0 || b <= 0.0 {
        return Err(Error::DegenerateBox { a, b });
    }
    let sx = (1.0_f64).min((height - 1) as f64 / a);
    let sy = (1.0_f64).min((width - 1) as f64 / b);
    Ok((sx, sy))
}

/// Resample `map` through the inverse of `t`; shape preserved, zero fill
/// outside the source.
pub fn apply_affine(map: &AttentionMap, t: &AffineTransform) -> AttentionMap {
    let mut out = Vec::with_capacity(map.height() * map.width());
    for h in 0..map.height() {
        for w in 0..map.width() {
            let src = t.apply_inverse(Vec2::new(h as f64, w as f64));
            out.push(sample_bilinear(map, src.row, src.col));
        }
    }
    map.with_values(out).expect("bilinear samples stay finite and non-negative")
}

/// What a warp step actually did to the map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WarpAction {
    /// The shifted box fit; the map was only translated.
    Translated(Vec2),
    /// The map was scaled about an in-canvas corner and translated.
    Scaled(AffineTransform),
}

impl WarpAction {
    /// Re-apply this exact edit to another map of the same shape.
    pub fn apply(&self, map: &AttentionMap) -> AttentionMap {
        match self {
            WarpAction::Translated(d) => translate_map(map, *d),
            WarpAction::Scaled(t) => apply_affine(map, t),
        }
    }
}

/// Move a map by `d`, scaling it just enough to keep the displaced object's
/// bounding box inside the canvas.
///
/// Pipeline: extract the box at `params.bbox_mass`; shift it by `d`; if the
/// shifted box fits, translate. Otherwise pick the first corner of the
/// shifted box that stays in-canvas (upper-left, upper-right, lower-left,
/// lower-right) as the scaling origin and shrink each axis by
/// `min(1, available_run / box_extent)`, where both lengths are measured
/// from that corner toward the overflow. With the origin at (0, 0) this is
/// exactly [`compute_scale`]; measuring from the chosen corner is what makes
/// containment hold for pushes toward any border. Corners that would demand
/// a non-positive scale are skipped; if no corner qualifies the warp fails.
pub fn warp_step(
    map: &AttentionMap,
    d: Vec2,
    params: &GuidanceParams,
) -> Result<(AttentionMap, WarpAction)> {
    let height = map.height();
    let width = map.width();
    let bbox = map.bounding_box(params.bbox_mass)?;
    let shifted = bbox.shifted(d);
    if shifted.fits_canvas(height, width) {
        return Ok((translate_map(map, d), WarpAction::Translated(d)));
    }

    let h_max = (height - 1) as f64;
    let w_max = (width - 1) as f64;
    let extent_r = shifted.height().max(f64::MIN_POSITIVE);
    let extent_c = shifted.width().max(f64::MIN_POSITIVE);
    for corner in shifted.corners() {
        if corner.row < 0.0 || corner.row > h_max || corner.col < 0.0 || corner.col > w_max {
            continue;
        }
        // Available run from the corner toward the side the box extends to.
        let avail_r = if corner.row == shifted.x { h_max - corner.row } else { corner.row };
        let avail_c = if corner.col == shifted.y { w_max - corner.col } else { corner.col };
        let sx = (1.0_f64).min(avail_r / extent_r);
        let sy = (1.0_f64).min(avail_c / extent_c);
        if sx <= 0.0 || sy <= 0.0 {
            continue;
        }
        let transform = build_transform(d, (sx, sy), corner)?;
        let out = apply_affine(map, &transform);
        debug_assert!(
            out.bounding_box(params.bbox_mass)
                .map(|b| b.fits_canvas(height, width))
                .unwrap_or(false),
            "scaled warp must keep the box in-canvas"
        );
        return Ok((out, WarpAction::Scaled(transform)));
    }
    Err(Error::WarpFailure)
}

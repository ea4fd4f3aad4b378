//! Core attention value types and the statistics primitives every other
//! module consumes.
//!
//! Maps arrive already softmax-normalized; this crate never re-normalizes,
//! it only validates finiteness and non-negativity.

use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, Mask, Vec2};

/// One token's `H x W` non-negative attention grid at one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    height: usize,
    width: usize,
    token: usize,
    layer: usize,
    values: Vec<f64>,
}

impl AttentionMap {
    /// Build a map from row-major values, validating shape, finiteness and
    /// non-negativity.
    pub fn new(
        height: usize,
        width: usize,
        token: usize,
        layer: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        if height < 2 || width < 2 {
            return Err(Error::invariant(format!(
                "attention map must be at least 2x2, got {height}x{width}"
            )));
        }
        if values.len() != height * width {
            return Err(Error::invariant(format!(
                "value count {} does not match {height}x{width}",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::invariant(format!(
                "attention values must be finite and non-negative, got {v}"
            )));
        }
        Ok(AttentionMap {
            height,
            width,
            token,
            layer,
            values,
        })
    }

    /// A map filled with one value.
    pub fn constant(height: usize, width: usize, token: usize, layer: usize, value: f64) -> Result<Self> {
        AttentionMap::new(height, width, token, layer, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn token(&self) -> usize {
        self.token
    }

    pub fn layer(&self) -> usize {
        self.layer
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, h: usize, w: usize) -> f64 {
        self.values[h * self.width + w]
    }

    /// Same grid, new values (token/layer tags preserved).
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        AttentionMap::new(self.height, self.width, self.token, self.layer, values)
    }

    pub fn same_shape(&self, other: &AttentionMap) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn total_mass(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    /// Position of the first maximal cell in row-major order.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = (0usize, 0usize);
        let mut best_v = f64::NEG_INFINITY;
        for h in 0..self.height {
            for w in 0..self.width {
                let v = self.get(h, w);
                if v > best_v {
                    best_v = v;
                    best = (h, w);
                }
            }
        }
        best
    }

    /// Mass-weighted mean position of the grid.
    ///
    /// Errors with [`Error::ZeroMass`] when every value is zero.
    pub fn centroid(&self) -> Result<Vec2> {
        let mut mass = 0.0;
        let mut sr = 0.0;
        let mut sc = 0.0;
        for h in 0..self.height {
            for w in 0..self.width {
                let v = self.get(h, w);
                mass += v;
                sr += h as f64 * v;
                sc += w as f64 * v;
            }
        }
        if mass <= 0.0 {
            return Err(Error::ZeroMass);
        }
        Ok(Vec2::new(sr / mass, sc / mass))
    }

    /// Mean of the values under the set pixels of `mask`.
    pub fn mean_in_region(&self, mask: &Mask) -> Result<f64> {
        if mask.height() != self.height || mask.width() != self.width {
            return Err(Error::ShapeMismatch {
                expected_h: self.height,
                expected_w: self.width,
                got_h: mask.height(),
                got_w: mask.width(),
            });
        }
        let mut sum = 0.0;
        let mut n = 0usize;
        for h in 0..self.height {
            for w in 0..self.width {
                if mask.get(h, w) {
                    sum += self.get(h, w);
                    n += 1;
                }
            }
        }
        if n == 0 {
            return Err(Error::EmptyMask);
        }
        Ok(sum / n as f64)
    }

    /// Tight box over the cells whose value reaches `bbox_mass` times the
    /// map's maximum. The box always contains the argmax cell.
    pub fn bounding_box(&self, bbox_mass: f64) -> Result<BoundingBox> {
        if !(0.0..1.0).contains(&bbox_mass) || bbox_mass <= 0.0 {
            return Err(Error::invariant(format!(
                "bbox_mass must lie in (0, 1), got {bbox_mass}"
            )));
        }
        let max = self.max_value();
        if max <= 0.0 {
            return Err(Error::ZeroMass);
        }
        let thr = bbox_mass * max;
        let (mut rmin, mut cmin) = (usize::MAX, usize::MAX);
        let (mut rmax, mut cmax) = (0usize, 0usize);
        for h in 0..self.height {
            for w in 0..self.width {
                if self.get(h, w) >= thr {
                    rmin = rmin.min(h);
                    cmin = cmin.min(w);
                    rmax = rmax.max(h);
                    cmax = cmax.max(w);
                }
            }
        }
        BoundingBox::new(rmin as f64, cmin as f64, rmax as f64, cmax as f64)
    }
}

/// Id and resolution of one attention layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub id: usize,
    pub height: usize,
    pub width: usize,
}

/// All tokens' maps across every layer of one denoising step.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionStack {
    layers: Vec<LayerSpec>,
    /// `maps[layer_index][token]`
    maps: Vec<Vec<AttentionMap>>,
    token_count: usize,
}

impl AttentionStack {
    pub fn new(layers: Vec<LayerSpec>, maps: Vec<Vec<AttentionMap>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invariant("stack needs at least one layer"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for l in &layers {
            if l.height < 2 || l.width < 2 {
                return Err(Error::invariant("layer resolutions must be at least 2x2"));
            }
            if !seen.insert(l.id) {
                return Err(Error::invariant(format!("duplicate layer id {}", l.id)));
            }
        }
        if maps.len() != layers.len() {
            return Err(Error::invariant("one map vector required per layer"));
        }
        let token_count = maps[0].len();
        if token_count == 0 {
            return Err(Error::invariant("stack needs at least one token"));
        }
        for (li, per_layer) in maps.iter().enumerate() {
            if per_layer.len() != token_count {
                return Err(Error::invariant(format!(
                    "layer {} holds {} maps, expected {token_count}",
                    layers[li].id,
                    per_layer.len()
                )));
            }
            for (k, m) in per_layer.iter().enumerate() {
                if m.height() != layers[li].height || m.width() != layers[li].width {
                    return Err(Error::invariant(format!(
                        "map for token {k} at layer {} has the wrong resolution",
                        layers[li].id
                    )));
                }
                if m.token() != k || m.layer() != layers[li].id {
                    return Err(Error::invariant(format!(
                        "map tags ({}, {}) disagree with stack position ({}, {k})",
                        m.layer(),
                        m.token(),
                        layers[li].id
                    )));
                }
            }
        }
        Ok(AttentionStack {
            layers,
            maps,
            token_count,
        })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn token_count(&self) -> usize {
        self.token_count
    }

    pub fn map(&self, layer_index: usize, token: usize) -> &AttentionMap {
        &self.maps[layer_index][token]
    }

    /// Replace one map, keeping the stack invariants.
    pub fn set_map(&mut self, layer_index: usize, token: usize, map: AttentionMap) -> Result<()> {
        let spec = self.layers[layer_index];
        if map.height() != spec.height || map.width() != spec.width {
            return Err(Error::ShapeMismatch {
                expected_h: spec.height,
                expected_w: spec.width,
                got_h: map.height(),
                got_w: map.width(),
            });
        }
        if map.token() != token || map.layer() != spec.id {
            return Err(Error::invariant("replacement map tags disagree with slot"));
        }
        self.maps[layer_index][token] = map;
        Ok(())
    }

    pub fn same_layout(&self, other: &AttentionStack) -> bool {
        self.token_count == other.token_count && self.layers == other.layers
    }

    /// Index of the layer with the most pixels (first wins on ties).
    pub fn finest_layer(&self) -> usize {
        let mut best = 0;
        let mut best_px = 0;
        for (i, l) in self.layers.iter().enumerate() {
            let px = l.height * l.width;
            if px > best_px {
                best_px = px;
                best = i;
            }
        }
        best
    }

    /// Per-cell average of one token's maps across layers, sampled on the
    /// finest grid with nearest-cell lookup on coarser layers.
    ///
    /// Guidance itself is applied per layer; this averaged view exists for
    /// inspection and rendering.
    pub fn averaged_map(&self, token: usize) -> Result<AttentionMap> {
        let fi = self.finest_layer();
        let spec = self.layers[fi];
        let mut acc = vec![0.0; spec.height * spec.width];
        for (li, l) in self.layers.iter().enumerate() {
            let m = self.map(li, token);
            for h in 0..spec.height {
                for w in 0..spec.width {
                    let sh = h * l.height / spec.height;
                    let sw = w * l.width / spec.width;
                    acc[h * spec.width + w] += m.get(sh, sw);
                }
            }
        }
        let n = self.layers.len() as f64;
        for v in &mut acc {
            *v /= n;
        }
        AttentionMap::new(spec.height, spec.width, token, spec.id, acc)
    }
}

/// Every guidance hyperparameter in one record.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GuidanceParams {
    /// Conflict detector threshold, in normalized mean-attention units.
    pub theta: f64,
    /// Repulsive force strength; forces scale with `xi^2`.
    pub xi: f64,
    /// Force balance constant mapping magnitude `F` to `F / (alpha + F)`.
    pub alpha: f64,
    /// Margin force strength.
    pub margin_m: f64,
    /// Weight of the primary region target; extra targets carry their own.
    pub omega: f64,
    /// Spatial-exclusion scale in `[0, 1]`.
    pub lambda_sec: f64,
    /// Weight of the loss regularizer protecting non-edited tokens.
    pub gamma: f64,
    /// Displacement cap as a fraction of the grid diagonal.
    pub max_step: f64,
    /// Relative-max threshold used to extract bounding boxes.
    pub bbox_mass: f64,
    /// Distance floor shielding the force singularities.
    pub eps_dist: f64,
}

impl Default for GuidanceParams {
    fn default() -> Self {
        GuidanceParams {
            theta: 0.2,
            xi: 1.0,
            alpha: 0.1,
            margin_m: 0.5,
            omega: 1.0,
            lambda_sec: 1.0,
            gamma: 0.1,
            max_step: 0.15,
            bbox_mass: 0.3,
            eps_dist: 0.25,
        }
    }
}

impl GuidanceParams {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.theta > 0.0, "theta must be > 0"),
            (self.xi > 0.0, "xi must be > 0"),
            (self.alpha > 0.0, "alpha must be > 0"),
            (self.margin_m >= 0.0, "margin_m must be >= 0"),
            (self.omega >= 0.0, "omega must be >= 0"),
            (
                (0.0..=1.0).contains(&self.lambda_sec),
                "lambda_sec must lie in [0, 1]",
            ),
            (self.gamma >= 0.0, "gamma must be >= 0"),
            (
                self.max_step > 0.0 && self.max_step <= 1.0,
                "max_step must lie in (0, 1]",
            ),
            (
                self.bbox_mass > 0.0 && self.bbox_mass < 1.0,
                "bbox_mass must lie in (0, 1)",
            ),
            (self.eps_dist > 0.0, "eps_dist must be > 0"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::invariant(msg));
            }
        }
        for v in [
            self.theta,
            self.xi,
            self.alpha,
            self.margin_m,
            self.omega,
            self.lambda_sec,
            self.gamma,
            self.max_step,
            self.bbox_mass,
            self.eps_dist,
        ] {
            if !v.is_finite() {
                return Err(Error::invariant("guidance parameters must be finite"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Region;
    use approx::assert_abs_diff_eq;

    pub(crate) fn point_mass(h: usize, w: usize, at: (usize, usize)) -> AttentionMap {
        let mut v = vec![0.0; h * w];
        v[at.0 * w + at.1] = 1.0;
        AttentionMap::new(h, w, 0, 0, v).unwrap()
    }

    #[test]
    fn centroid_of_uniform_map_is_center() {
        let m = AttentionMap::constant(3, 3, 0, 0, 1.0).unwrap();
        let c = m.centroid().unwrap();
        assert_eq!((c.row, c.col), (1.0, 1.0));
    }

    #[test]
    fn centroid_of_point_mass() {
        let m = point_mass(8, 8, (2, 5));
        let c = m.centroid().unwrap();
        assert_eq!((c.row, c.col), (2.0, 5.0));
    }

    #[test]
    fn centroid_weighted_two_cells() {
        let mut v = vec![0.0; 3 * 3];
        v[0] = 1.0; // (0,0)
        v[2] = 3.0; // (0,2)
        let m = AttentionMap::new(3, 3, 0, 0, v).unwrap();
        let c = m.centroid().unwrap();
        assert_eq!((c.row, c.col), (0.0, 1.5));
    }

    #[test]
    fn centroid_of_zero_map_errors() {
        let m = AttentionMap::constant(4, 4, 0, 0, 0.0).unwrap();
        assert_eq!(m.centroid(), Err(Error::ZeroMass));
    }

    #[test]
    fn mean_in_region_constant_map() {
        let m = AttentionMap::constant(4, 4, 0, 0, 0.3).unwrap();
        let mask = Region::new(0.5, 0.5, 1.0, 1.0).unwrap().rasterize(4, 4).unwrap();
        assert_abs_diff_eq!(m.mean_in_region(&mask).unwrap(), 0.3);
    }

    #[test]
    fn mean_in_region_disjoint_support() {
        let mut v = vec![0.7; 16];
        for h in 2..4 {
            for w in 2..4 {
                v[h * 4 + w] = 0.0;
            }
        }
        let m = AttentionMap::new(4, 4, 0, 0, v).unwrap();
        let mask = Region::new(0.5, 0.5, 1.0, 1.0).unwrap().rasterize(4, 4).unwrap();
        assert_eq!(m.mean_in_region(&mask).unwrap(), 0.0);
    }

    #[test]
    fn mean_in_region_row_ramp() {
        // Rows carry 0.1, 0.2, 0.3, 0.4; bottom two rows average 0.35.
        let mut v = Vec::new();
        for h in 0..4 {
            for _ in 0..4 {
                v.push(0.1 * (h + 1) as f64);
            }
        }
        let m = AttentionMap::new(4, 4, 0, 0, v).unwrap();
        let mask = Region::new(0.0, 0.5, 1.0, 1.0).unwrap().rasterize(4, 4).unwrap();
        assert_abs_diff_eq!(m.mean_in_region(&mask).unwrap(), 0.35, epsilon = 1e-12);
    }

    #[test]
    fn mean_in_region_shape_mismatch() {
        let m = AttentionMap::constant(4, 4, 0, 0, 0.1).unwrap();
        let mask = Mask::full(8, 8);
        assert!(matches!(
            m.mean_in_region(&mask),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn bounding_box_point_mass() {
        let m = point_mass(8, 8, (2, 5));
        let b = m.bounding_box(0.3).unwrap();
        assert_eq!((b.x, b.y, b.a, b.b), (2.0, 5.0, 2.0, 5.0));
    }

    #[test]
    fn bounding_box_uniform_covers_grid() {
        let m = AttentionMap::constant(6, 9, 0, 0, 0.5).unwrap();
        let b = m.bounding_box(0.7).unwrap();
        assert_eq!((b.x, b.y, b.a, b.b), (0.0, 0.0, 5.0, 8.0));
    }

    #[test]
    fn bounding_box_gaussian_blob() {
        // Isotropic sigma=4 blob at (32,32) on 64x64; cells at or above
        // 0.3 * max lie within radius sigma * sqrt(2 ln(1/0.3)) ~ 6.21,
        // confirmed by brute-force scan: box (26,26)-(38,38).
        let mut v = vec![0.0; 64 * 64];
        for h in 0..64 {
            for w in 0..64 {
                let d2 = ((h as f64 - 32.0).powi(2) + (w as f64 - 32.0).powi(2)) / (2.0 * 16.0);
                v[h * 64 + w] = (-d2).exp();
            }
        }
        let m = AttentionMap::new(64, 64, 0, 0, v).unwrap();
        let b = m.bounding_box(0.3).unwrap();
        assert_eq!((b.x, b.y, b.a, b.b), (26.0, 26.0, 38.0, 38.0));
    }

    #[test]
    fn bounding_box_zero_mass_errors() {
        let m = AttentionMap::constant(4, 4, 0, 0, 0.0).unwrap();
        assert_eq!(m.bounding_box(0.3), Err(Error::ZeroMass));
    }

    #[test]
    fn map_rejects_negative_and_non_finite() {
        assert!(AttentionMap::new(2, 2, 0, 0, vec![0.0, -0.1, 0.0, 0.0]).is_err());
        assert!(AttentionMap::new(2, 2, 0, 0, vec![0.0, f64::NAN, 0.0, 0.0]).is_err());
        assert!(AttentionMap::new(1, 4, 0, 0, vec![0.0; 4]).is_err());
    }

    #[test]
    fn params_default_is_valid() {
        GuidanceParams::default().validate().unwrap();
        let mut p = GuidanceParams::default();
        p.theta = 0.0;
        assert!(p.validate().is_err());
        p = GuidanceParams::default();
        p.lambda_sec = 1.5;
        assert!(p.validate().is_err());
    }

    #[test]
    fn stack_checks_tags_and_shapes() {
        let layers = vec![LayerSpec {
            id: 0,
            height: 4,
            width: 4,
        }];
        let good = vec![vec![
            AttentionMap::constant(4, 4, 0, 0, 0.1).unwrap(),
            AttentionMap::constant(4, 4, 1, 0, 0.1).unwrap(),
        ]];
        assert!(AttentionStack::new(layers.clone(), good).is_ok());
        let bad_tag = vec![vec![
            AttentionMap::constant(4, 4, 1, 0, 0.1).unwrap(),
            AttentionMap::constant(4, 4, 0, 0, 0.1).unwrap(),
        ]];
        assert!(AttentionStack::new(layers, bad_tag).is_err());
    }
}

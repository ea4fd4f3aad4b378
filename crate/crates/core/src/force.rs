//! Repulsive, multi-target, balanced, and margin forces on object centroids,
//! combined into one displacement per conflicting token.
//!
//! Forces are dimensionless; [`displacement`] converts the balanced force to
//! grid units with a step scale of `max_step` times the grid diagonal and
//! clamps the result to that scale.

use crate::attention::GuidanceParams;
use crate::geometry::Vec2;

/// A force vector with its cached Euclidean magnitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Force {
    pub vector: Vec2,
    pub magnitude: f64,
}

impl Force {
    pub fn from_vector(vector: Vec2) -> Self {
        Force {
            vector,
            magnitude: vector.norm(),
        }
    }

    pub fn zero() -> Self {
        Force {
            vector: Vec2::zero(),
            magnitude: 0.0,
        }
    }
}

/// One repulsion target: a position and its weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetSpec {
    pub position: Vec2,
    pub weight: f64,
}

/// Inverse-distance repulsion pushing `v` away from `target` with magnitude
/// `xi^2 / max(dist, eps_dist)`.
///
/// A vertex sitting exactly on the target is pushed along `(-1, 0)` so the
/// result stays deterministic.
pub fn repulsive_force(v: Vec2, target: Vec2, xi: f64, eps_dist: f64) -> Force {
    let delta = v - target;
    let dist = delta.norm();
    let magnitude = xi * xi / dist.max(eps_dist);
    let direction = if dist == 0.0 {
        Vec2::new(-1.0, 0.0)
    } else {
        delta * (1.0 / dist)
    };
    Force {
        vector: direction * magnitude,
        magnitude,
    }
}

/// Weighted vector sum of per-target repulsions, in declared target order.
pub fn multi_target_force(v: Vec2, targets: &[TargetSpec], xi: f64, eps_dist: f64) -> Force {
    let mut sum = Vec2::zero();
    for t in targets {
        sum = sum + repulsive_force(v, t.position, xi, eps_dist).vector * t.weight;
    }
    Force::from_vector(sum)
}

/// Saturate a force: the direction is kept and the magnitude becomes
/// `|f| / (alpha + |f|)`, which lies in `[0, 1)`.
pub fn balance(f: &Force, alpha: f64) -> Force {
    if f.magnitude == 0.0 {
        return Force::zero();
    }
    let magnitude = f.magnitude / (alpha + f.magnitude);
    Force {
        vector: f.vector * (magnitude / f.magnitude),
        magnitude,
    }
}

/// Border-inward force summing `m / max(d, eps_dist)^2` over all four
/// borders of the `[0, H-1] x [0, W-1]` canvas.
pub fn margin_force(v: Vec2, height: usize, width: usize, m: f64, eps_dist: f64) -> Force {
    let h_max = (height - 1) as f64;
    let w_max = (width - 1) as f64;
    let term = |d: f64| m / d.max(eps_dist).powi(2);
    let row = term(v.row) - term(h_max - v.row);
    let col = term(v.col) - term(w_max - v.col);
    Force::from_vector(Vec2::new(row, col))
}

/// Total per-step displacement of a vertex: the balanced multi-target
/// repulsion scaled to grid units plus the raw margin force, clamped so the
/// norm never exceeds the step scale.
pub fn displacement(
    v: Vec2,
    targets: &[TargetSpec],
    height: usize,
    width: usize,
    params: &GuidanceParams,
) -> Vec2 {
    let step_scale = params.max_step * ((height * height + width * width) as f64).sqrt();
    let repulsion = balance(
        &multi_target_force(v, targets, params.xi, params.eps_dist),
        params.alpha,
    );
    let margin = margin_force(v, height, width, params.margin_m, params.eps_dist);
    let total = repulsion.vector * step_scale + margin.vector;
    let norm = total.norm();
    if norm > step_scale {
        total * (step_scale / norm)
    } else {
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn repulsion_points_away_from_target() {
        let f = repulsive_force(Vec2::new(0.0, 0.0), Vec2::new(0.0, 2.0), 1.0, 0.25);
        assert_abs_diff_eq!(f.vector.row, 0.0);
        assert_abs_diff_eq!(f.vector.col, -0.5);
        assert_abs_diff_eq!(f.magnitude, 0.5);
    }

    #[test]
    fn coincident_vertex_uses_floor_and_default_direction() {
        let p = Vec2::new(3.0, 4.0);
        let f = repulsive_force(p, p, 1.0, 0.25);
        assert_abs_diff_eq!(f.magnitude, 4.0);
        assert_abs_diff_eq!(f.vector.row, -4.0);
        assert_abs_diff_eq!(f.vector.col, 0.0);
    }

    #[test]
    fn doubling_xi_quadruples_magnitude() {
        let v = Vec2::new(1.0, 1.0);
        let t = Vec2::new(4.0, 5.0);
        let f1 = repulsive_force(v, t, 1.0, 0.25);
        let f2 = repulsive_force(v, t, 2.0, 0.25);
        assert_abs_diff_eq!(f2.magnitude / f1.magnitude, 4.0, epsilon = 1e-12);
    }

    #[test]
    fn single_target_reduces_to_repulsion() {
        let v = Vec2::new(2.0, 7.0);
        let t = Vec2::new(5.0, 3.0);
        let single = multi_target_force(
            v,
            &[TargetSpec { position: t, weight: 1.0 }],
            1.0,
            0.25,
        );
        let rep = repulsive_force(v, t, 1.0, 0.25);
        assert_abs_diff_eq!(single.vector.row, rep.vector.row, epsilon = 1e-15);
        assert_abs_diff_eq!(single.vector.col, rep.vector.col, epsilon = 1e-15);
    }

    #[test]
    fn symmetric_targets_cancel() {
        let v = Vec2::new(0.0, 0.0);
        let f = multi_target_force(
            v,
            &[
                TargetSpec { position: Vec2::new(0.0, 2.0), weight: 1.0 },
                TargetSpec { position: Vec2::new(0.0, -2.0), weight: 1.0 },
            ],
            1.0,
            0.25,
        );
        assert_abs_diff_eq!(f.magnitude, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn weighted_opposed_targets() {
        // Hand-summed: 1 * (0, -0.5) + 3 * (0, +0.5) = (0, 1.0).
        let f = multi_target_force(
            Vec2::new(0.0, 0.0),
            &[
                TargetSpec { position: Vec2::new(0.0, 2.0), weight: 1.0 },
                TargetSpec { position: Vec2::new(0.0, -2.0), weight: 3.0 },
            ],
            1.0,
            0.25,
        );
        assert_abs_diff_eq!(f.vector.row, 0.0);
        assert_abs_diff_eq!(f.vector.col, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn balance_fixed_points() {
        let f = Force::from_vector(Vec2::new(0.0, 0.1));
        assert_abs_diff_eq!(balance(&f, 0.1).magnitude, 0.5, epsilon = 1e-12);
        let f3 = Force::from_vector(Vec2::new(0.0, 0.3));
        assert_abs_diff_eq!(balance(&f3, 0.1).magnitude, 0.75, epsilon = 1e-12);
        assert_eq!(balance(&Force::zero(), 0.1), Force::zero());
    }

    #[test]
    fn margin_force_cancels_at_center() {
        let f = margin_force(Vec2::new(31.5, 31.5), 64, 64, 1.0, 0.25);
        assert_eq!(f.magnitude, 0.0);
        let z = margin_force(Vec2::new(10.0, 10.0), 64, 64, 0.0, 0.25);
        assert_eq!(z.magnitude, 0.0);
    }

    #[test]
    fn margin_force_near_top_border() {
        // Four hand-summed terms for v = (1, 32) on 64x64 with m = 1.
        let f = margin_force(Vec2::new(1.0, 32.0), 64, 64, 1.0, 0.25);
        assert_abs_diff_eq!(f.vector.row, 1.0 - 1.0 / (62.0 * 62.0), epsilon = 1e-12);
        assert_abs_diff_eq!(
            f.vector.col,
            1.0 / (32.0 * 32.0) - 1.0 / (31.0 * 31.0),
            epsilon = 1e-15
        );
    }

    #[test]
    fn displacement_vanishes_without_forces() {
        let params = GuidanceParams::default();
        let d = displacement(
            Vec2::new(31.5, 31.5),
            &[TargetSpec { position: Vec2::new(10.0, 10.0), weight: 0.0 }],
            64,
            64,
            &params,
        );
        assert_eq!((d.row, d.col), (0.0, 0.0));
    }

    #[test]
    fn displacement_moves_away_from_single_target() {
        let params = GuidanceParams::default();
        let d = displacement(
            Vec2::new(30.0, 20.0),
            &[TargetSpec { position: Vec2::new(30.0, 30.0), weight: 1.0 }],
            64,
            64,
            &params,
        );
        assert!(d.col < 0.0, "push should point further left, got {d:?}");
    }

    #[test]
    fn displacement_standard_case() {
        // Composed from the three force formulas with an independent script:
        // balanced repulsion 0.689655 * step_scale 13.5765 plus the margin
        // pull at (32, 45) on 64x64.
        let params = GuidanceParams::default();
        let d = displacement(
            Vec2::new(32.0, 45.0),
            &[TargetSpec { position: Vec2::new(32.0, 49.5), weight: 1.0 }],
            64,
            64,
            &params,
        );
        assert_abs_diff_eq!(d.row, -3.2010113163371537e-5, epsilon = 1e-12);
        assert_abs_diff_eq!(d.col, -9.364365398904374, epsilon = 1e-9);
    }

    #[test]
    fn displacement_clamps_to_step_scale() {
        let params = GuidanceParams::default();
        let step_scale = params.max_step * ((64.0f64 * 64.0 + 64.0 * 64.0) as f64).sqrt();
        // A vertex jammed into the corner takes an enormous margin push.
        let d = displacement(
            Vec2::new(0.1, 0.1),
            &[TargetSpec { position: Vec2::new(32.0, 32.0), weight: 1.0 }],
            64,
            64,
            &params,
        );
        assert!(d.norm() <= step_scale + 1e-9);
    }
}

//! Grid geometry: vectors, boxes, normalized regions, and binary masks.
//!
//! Convention used everywhere in this crate: coordinates are `(row, col)`
//! with the origin at the top-left cell. Normalized [`Region`] coordinates
//! map `x` to columns and `y` to rows.

use std::ops::{Add, Mul, Sub};

use crate::error::{Error, Result};

/// A two-dimensional vector in real grid units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vec2 {
    pub row: f64,
    pub col: f64,
}

impl Vec2 {
    pub fn new(row: f64, col: f64) -> Self {
        Vec2 { row, col }
    }

    pub fn zero() -> Self {
        Vec2 { row: 0.0, col: 0.0 }
    }

    /// Euclidean norm.
    pub fn norm(self) -> f64 {
        self.row.hypot(self.col)
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.row * other.row + self.col * other.col
    }

    pub fn is_finite(self) -> bool {
        self.row.is_finite() && self.col.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.row + rhs.row, self.col + rhs.col)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.row - rhs.row, self.col - rhs.col)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, rhs: f64) -> Vec2 {
        Vec2::new(self.row * rhs, self.col * rhs)
    }
}

/// Axis-aligned box in real grid units: `(x, y)` upper-left and `(a, b)`
/// lower-right, both as `(row, col)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub a: f64,
    pub b: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, a: f64, b: f64) -> Result<Self> {
        if !(x.is_finite() && y.is_finite() && a.is_finite() && b.is_finite()) {
            return Err(Error::invariant("bounding box coordinates must be finite"));
        }
        if x > a || y > b {
            return Err(Error::invariant(format!(
                "bounding box corners out of order: ({x}, {y}) vs ({a}, {b})"
            )));
        }
        Ok(BoundingBox { x, y, a, b })
    }

    /// Row extent (lower-right row minus upper-left row).
    pub fn height(&self) -> f64 {
        self.a - self.x
    }

    /// Column extent.
    pub fn width(&self) -> f64 {
        self.b - self.y
    }

    /// The box translated by `d`.
    pub fn shifted(&self, d: Vec2) -> BoundingBox {
        BoundingBox {
            x: self.x + d.row,
            y: self.y + d.col,
            a: self.a + d.row,
            b: self.b + d.col,
        }
    }

    /// Corners in the order upper-left, upper-right, lower-left, lower-right.
    pub fn corners(&self) -> [Vec2; 4] {
        [
            Vec2::new(self.x, self.y),
            Vec2::new(self.x, self.b),
            Vec2::new(self.a, self.y),
            Vec2::new(self.a, self.b),
        ]
    }

    /// Whether the box lies inside the canvas `[0, H-1] x [0, W-1]`.
    pub fn fits_canvas(&self, height: usize, width: usize) -> bool {
        self.x >= 0.0
            && self.y >= 0.0
            && self.a <= (height - 1) as f64
            && self.b <= (width - 1) as f64
    }
}

/// Normalized axis-aligned rectangle reserved for text. `x` spans columns,
/// `y` spans rows, both in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Region {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
}

impl Region {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        for v in [x0, y0, x1, y1] {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::invariant(format!(
                    "region coordinates must lie in [0, 1], got {v}"
                )));
            }
        }
        if x0 >= x1 || y0 >= y1 {
            return Err(Error::invariant(format!(
                "region must satisfy x0 < x1 and y0 < y1, got ({x0}, {y0}, {x1}, {y1})"
            )));
        }
        Ok(Region { x0, y0, x1, y1 })
    }

    /// The golden-ratio preset placement.
    pub fn golden() -> Self {
        Region {
            x0: 0.618,
            y0: 0.30,
            x1: 0.95,
            y1: 0.70,
        }
    }

    /// The centered preset placement.
    pub fn center_preset() -> Self {
        Region {
            x0: 0.35,
            y0: 0.40,
            x1: 0.65,
            y1: 0.60,
        }
    }

    pub fn coords(&self) -> (f64, f64, f64, f64) {
        (self.x0, self.y0, self.x1, self.y1)
    }

    /// Geometric center in normalized `(x, y)` coordinates.
    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }

    /// Rasterize to an `H x W` binary mask. A pixel is set iff its center
    /// `((h+0.5)/H, (w+0.5)/W)` lies inside the closed rectangle; columns are
    /// tested against the x-range and rows against the y-range.
    pub fn rasterize(&self, height: usize, width: usize) -> Result<Mask> {
        if height < 2 || width < 2 {
            return Err(Error::invariant("mask resolution must be at least 2x2"));
        }
        let mut bits = vec![false; height * width];
        let mut any = false;
        for h in 0..height {
            let cy = (h as f64 + 0.5) / height as f64;
            if cy < self.y0 || cy > self.y1 {
                continue;
            }
            for w in 0..width {
                let cx = (w as f64 + 0.5) / width as f64;
                if cx >= self.x0 && cx <= self.x1 {
                    bits[h * width + w] = true;
                    any = true;
                }
            }
        }
        if !any {
            return Err(Error::EmptyMask);
        }
        Ok(Mask {
            height,
            width,
            bits,
        })
    }
}

/// A binary pixel mask, the rasterized form of a [`Region`].
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl Mask {
    /// Build a mask from raw bits (row-major).
    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::invariant(format!(
                "mask bit count {} does not match {height}x{width}",
                bits.len()
            )));
        }
        Ok(Mask {
            height,
            width,
            bits,
        })
    }

    pub fn full(height: usize, width: usize) -> Self {
        Mask {
            height,
            width,
            bits: vec![true; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, h: usize, w: usize) -> bool {
        self.bits[h * self.width + w]
    }

    /// Number of set pixels.
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Mean position of the set pixels, or `None` for an empty mask.
    pub fn centroid(&self) -> Option<Vec2> {
        let mut n = 0usize;
        let mut sr = 0.0;
        let mut sc = 0.0;
        for h in 0..self.height {
            for w in 0..self.width {
                if self.get(h, w) {
                    sr += h as f64;
                    sc += w as f64;
                    n += 1;
                }
            }
        }
        if n == 0 {
            None
        } else {
            Some(Vec2::new(sr / n as f64, sc / n as f64))
        }
    }
}

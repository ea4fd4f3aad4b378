use thiserror::Error;

/// Errors produced by the guidance engine.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An operation that needs positive total attention mass got an all-zero map.
    #[error("attention map has zero total mass")]
    ZeroMass,

    /// A region rasterized to a mask with no set pixels.
    #[error("no pixel center falls inside the region")]
    EmptyMask,

    /// A map/mask pair (or map/map pair) with different grid shapes.
    #[error("shape mismatch: {expected_h}x{expected_w} vs {got_h}x{got_w}")]
    ShapeMismatch {
        expected_h: usize,
        expected_w: usize,
        got_h: usize,
        got_w: usize,
    },

    /// Two attention stacks disagree on layers, resolutions, or token count.
    #[error("attention stacks have different layouts")]
    LayoutMismatch,

    /// Scale-factor computation received a box with non-positive extent.
    #[error("degenerate bounding box: a'={a:.3}, b'={b:.3}")]
    DegenerateBox { a: f64, b: f64 },

    /// No corner of the displaced bounding box remains inside the canvas.
    #[error("warp failed: no usable in-canvas corner for the shifted bounding box")]
    WarpFailure,

    /// A metric denominator that must be positive was not.
    #[error("metric denominators must be positive: saliency_iou={iou:.3}, tv={tv:.3}")]
    DivisionDomain { iou: f64, tv: f64 },

    /// A domain-type invariant was violated at construction time.
    #[error("invariant violation: {0}")]
    Invariant(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invariant(msg: impl Into<String>) -> Self {
        Error::Invariant(msg.into())
    }
}

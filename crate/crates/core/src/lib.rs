//! Force-directed attention guidance for text-friendly layout generation.
//!
//! The engine edits per-token cross-attention maps so that a reserved text
//! region stays visually quiet: a layer-wise detector finds tokens whose
//! attention encroaches on the region, a force-directed scheme displaces
//! their centroids away from it, an affine warp keeps the displaced objects
//! inside the canvas, and a spatial exclusion zeroes what attention remains
//! in the region. A synthetic Gaussian-blob simulator stands in for the
//! denoising loop so every mechanism is verifiable on the desk, and the
//! metrics module scores the outcome (total variation in the region,
//! saliency IOU, and the combined concordance score).
//!
//! Modules mirror the pipeline:
//!
//! - [`geometry`] / [`attention`]: value types and statistics primitives
//! - [`conflict`]: the threshold detector
//! - [`force`]: repulsive, multi-target, balance, and margin forces
//! - [`warp`]: translation and boundary-preserving affine warps
//! - [`constraint`]: spatial exclusion and the guidance loss
//! - [`simulator`]: the dual-trajectory synthetic denoising loop
//! - [`metrics`]: evaluation metrics

pub mod attention;
pub mod conflict;
pub mod constraint;
pub mod error;
pub mod force;
pub mod geometry;
pub mod metrics;
pub mod simulator;
pub mod warp;

pub use attention::{AttentionMap, AttentionStack, GuidanceParams, LayerSpec};
pub use conflict::{detect, detect_all, ConflictEntry, ConflictSet};
pub use constraint::{guidance_loss, spatial_excluding_constraint, EditPlan, LossTerms};
pub use error::{Error, Result};
pub use force::{
    balance, displacement, margin_force, multi_target_force, repulsive_force, Force, TargetSpec,
};
pub use geometry::{BoundingBox, Mask, Region, Vec2};
pub use metrics::{composite_field, saliency_iou, tv_loss, vtcm, MetricsReport};
pub use simulator::{
    render_blob, run, run_with_options, step_guided, step_unguided, trajectory_rng, BlobObject,
    GuidanceReport, GuidedState, GuidedStepOutcome, Scene, SimOptions, StepRecord, TargetRegion,
};
pub use warp::{
    apply_affine, build_transform, compute_scale, translate_map, warp_step, AffineTransform,
    WarpAction,
};

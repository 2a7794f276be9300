//! Calibrated, invertible utility degradation for prediction logits.
//!
//! The crate perturbs logits with deterministic Gaussian noise (globally,
//! inside a region mask, or only on correctly predicted samples), measures the
//! resulting accuracy / mIoU / Dice, fits the decay curve
//! `metric(σ) = a·exp(-b·σ) + c` to calibration sweeps and inverts it, so a
//! requested utility level maps onto a concrete noise scale.
//!
//! Everything here is pure computation over in-memory buffers and builds
//! without `std`. File formats, thread pools and the command-line front end
//! live in the `utilgate` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod calibration;
pub mod curvefit;
mod error;
pub mod importance;
pub mod metrics;
pub mod noise;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod tier;

pub use crate::calibration::{
    default_sigma_grid, run_sweep, seed_for, CalibrationRow, CalibrationTable, MaskEcho, PlanMask,
    SigmaSummary, Sweep, SweepEcho, SweepPlan,
};
pub use crate::curvefit::{
    fit_auto, fit_decay, fit_interpolant, pool_adjacent_violators, Clamp, CurveFamily, DecayFit,
    MonotoneInterpolant, SigmaSolution, UtilityCurve,
};
pub use crate::error::{Error, Result};
pub use crate::importance::{make_mask, margin_saliency, ImportanceMap, MaskConfig};
pub use crate::metrics::{
    accuracy, dice, evaluate, evaluate_one, miou, Aggregation, ConfusionCounts, MetricKind,
    MetricReport,
};
pub use crate::noise::{
    perturb, perturb_global, perturb_region, perturb_targeted, PerturbationMode,
    PerturbationSpec,
};
pub use crate::rng::NoiseStream;
pub use crate::synth::{gen_blobs_logits, gen_scene, BlobsSpec, Scene, SceneSpec};
pub use crate::tensor::{
    argmax_classes, softmax, DType, LabelBatch, LabelLayout, LogitsBatch, LogitsLayout, Tensor,
    TensorData, IGNORE_LABEL,
};
pub use crate::tier::{request_seed, ResolvedTier, Tier, TierPolicy};

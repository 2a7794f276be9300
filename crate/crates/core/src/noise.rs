//! Gaussian logit perturbation: global, region-masked and correctness-targeted.
//!
//! All modes share one effective scale `sigma_eff = delta * sigma` and draw
//! noise for flat element `i` of the logits buffer from draw `i` of the
//! stream seeded by `spec.seed`. Elements whose noise scale is exactly zero
//! are copied, never re-added, so they stay bit-identical (including `-0.0`).

use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::rng::NoiseStream;
use crate::tensor::{argmax_strided, LabelBatch, LogitsBatch, LogitsLayout, Tensor, IGNORE_LABEL};

/// Resampling attempts before `TargetedFlip` falls back to a top-2 swap.
pub const FLIP_ATTEMPTS: u64 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PerturbationMode {
    Global,
    Region,
    /// Noise only on correctly predicted positions.
    TargetedNoise,
    /// Like `TargetedNoise`, but the prediction is guaranteed to become wrong.
    TargetedFlip,
}

impl PerturbationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PerturbationMode::Global => "global",
            PerturbationMode::Region => "region",
            PerturbationMode::TargetedNoise => "targeted-noise",
            PerturbationMode::TargetedFlip => "targeted-flip",
        }
    }

    pub fn is_targeted(self) -> bool {
        matches!(
            self,
            PerturbationMode::TargetedNoise | PerturbationMode::TargetedFlip
        )
    }
}

impl fmt::Display for PerturbationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PerturbationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(PerturbationMode::Global),
            "region" => Ok(PerturbationMode::Region),
            "targeted-noise" | "targeted_noise" => Ok(PerturbationMode::TargetedNoise),
            "targeted-flip" | "targeted_flip" => Ok(PerturbationMode::TargetedFlip),
            other => Err(Error::InvalidParameter(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationSpec {
    pub mode: PerturbationMode,
    /// Noise standard deviation in logit units.
    pub sigma: f64,
    /// Strength multiplier; only `delta * sigma` matters.
    pub delta: f64,
    pub seed: u64,
}

impl PerturbationSpec {
    pub fn new(mode: PerturbationMode, sigma: f64, seed: u64) -> Self {
        PerturbationSpec {
            mode,
            sigma,
            delta: 1.0,
            seed,
        }
    }

    pub fn global(sigma: f64, seed: u64) -> Self {
        Self::new(PerturbationMode::Global, sigma, seed)
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = delta;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn effective_sigma(&self) -> f64 {
        self.delta * self.sigma
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "sigma must be finite and >= 0, got {}",
                self.sigma
            )));
        }
        if !(self.delta.is_finite() && self.delta >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "delta must be finite and >= 0, got {}",
                self.delta
            )));
        }
        Ok(())
    }

    fn expect_mode(&self, allowed: &[PerturbationMode]) -> Result<()> {
        if allowed.contains(&self.mode) {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "operation does not accept mode {}",
                self.mode
            )))
        }
    }
}

#[inline]
fn add_noise(value: f32, scale: f64, draw: f64) -> f32 {
    (value as f64 + scale * draw) as f32
}

/// Every logit receives an independent draw scaled by `sigma_eff`.
pub fn perturb_global(logits: &LogitsBatch, spec: &PerturbationSpec) -> Result<LogitsBatch> {
    spec.validate()?;
    spec.expect_mode(&[PerturbationMode::Global])?;
    let scale = spec.effective_sigma();
    if scale == 0.0 {
        return Ok(logits.clone());
    }
    let stream = NoiseStream::new(spec.seed);
    let values = logits
        .values()
        .iter()
        .enumerate()
        .map(|(i, &z)| add_noise(z, scale, stream.gaussian_at(i as u64)))
        .collect();
    logits.with_values(values)
}

/// Noise at pixel `(y, x)` of every class plane is scaled by
/// `sigma_eff * mask[y, x]`. The mask is float32 `[H, W]` with values in
/// `[0, 1]`; binary masks are the usual case, fractional values scale.
pub fn perturb_region(
    logits: &LogitsBatch,
    mask: &Tensor,
    spec: &PerturbationSpec,
) -> Result<LogitsBatch> {
    spec.validate()?;
    spec.expect_mode(&[PerturbationMode::Region])?;
    let LogitsLayout::Segmentation {
        classes,
        height,
        width,
    } = logits.layout()
    else {
        return Err(Error::ShapeMismatch(
            "region perturbation needs [K,H,W] segmentation logits".into(),
        ));
    };
    let weights = mask.expect_f32()?;
    if mask.shape() != [height, width] {
        return Err(Error::ShapeMismatch(format!(
            "mask shape {:?} does not match logits spatial shape [{height}, {width}]",
            mask.shape()
        )));
    }
    if let Some(index) = weights.iter().position(|m| !(0.0..=1.0).contains(m)) {
        return Err(Error::InvalidParameter(format!(
            "mask value {} at flat index {index} outside [0, 1]",
            weights[index]
        )));
    }
    let scale = spec.effective_sigma();
    if scale == 0.0 {
        return Ok(logits.clone());
    }
    let stream = NoiseStream::new(spec.seed);
    let plane = height * width;
    let mut values = logits.values().to_vec();
    for c in 0..classes {
        for (p, &m) in weights.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            let i = c * plane + p;
            values[i] = add_noise(values[i], scale * m as f64, stream.gaussian_at(i as u64));
        }
    }
    logits.with_values(values)
}

/// Perturbs only positions whose clean prediction equals the label; every
/// other logit is returned untouched.
///
/// `TargetedFlip` retries with fresh noise up to [`FLIP_ATTEMPTS`] times and
/// then swaps the top-1 and runner-up scores, so a correct prediction always
/// ends up wrong whenever `sigma_eff > 0`.
pub fn perturb_targeted(
    logits: &LogitsBatch,
    labels: &LabelBatch,
    spec: &PerturbationSpec,
) -> Result<LogitsBatch> {
    spec.validate()?;
    spec.expect_mode(&[PerturbationMode::TargetedNoise, PerturbationMode::TargetedFlip])?;
    labels.check_matches(logits)?;
    let scale = spec.effective_sigma();
    if scale == 0.0 {
        return Ok(logits.clone());
    }
    let layout = logits.layout();
    let classes = layout.classes();
    let stride = layout.class_stride();
    let src = logits.values();
    let stream = NoiseStream::new(spec.seed);
    let flip = spec.mode == PerturbationMode::TargetedFlip;
    let mut values = src.to_vec();
    let mut row = Vec::with_capacity(classes);

    for (p, &label) in labels.values().iter().enumerate() {
        if label == IGNORE_LABEL && labels.is_segmentation() {
            continue;
        }
        let base = layout.index(p, 0);
        if argmax_strided(src, base, stride, classes) != label as usize {
            continue;
        }
        let mut attempt = 0;
        loop {
            let draws = if attempt == 0 { stream } else { stream.derive(attempt) };
            row.clear();
            row.extend((0..classes).map(|c| {
                let i = base + c * stride;
                add_noise(src[i], scale, draws.gaussian_at(i as u64))
            }));
            attempt += 1;
            if !flip || argmax_strided(&row, 0, 1, classes) != label as usize {
                break;
            }
            if attempt == FLIP_ATTEMPTS {
                row.clear();
                row.extend((0..classes).map(|c| src[base + c * stride]));
                swap_top_two(&mut row, label as usize);
                break;
            }
        }
        for (c, &v) in row.iter().enumerate() {
            values[base + c * stride] = v;
        }
    }
    logits.with_values(values)
}

/// Swaps the top score (held by `top`) with the best other score. When the
/// two are tied the former winner is nudged one ulp down so it loses.
fn swap_top_two(row: &mut [f32], top: usize) {
    let runner = (0..row.len())
        .filter(|&c| c != top)
        .fold(None::<usize>, |best, c| match best {
            Some(b) if row[b] >= row[c] => Some(b),
            _ => Some(c),
        })
        .expect("at least two classes");
    row.swap(top, runner);
    if argmax_strided(row, 0, 1, row.len()) == top {
        row[top] = row[runner].next_down();
    }
}

/// Dispatches on `spec.mode`; `mask` is required for region mode and
/// `labels` for the targeted modes.
pub fn perturb(
    logits: &LogitsBatch,
    spec: &PerturbationSpec,
    mask: Option<&Tensor>,
    labels: Option<&LabelBatch>,
) -> Result<LogitsBatch> {
    match spec.mode {
        PerturbationMode::Global => perturb_global(logits, spec),
        PerturbationMode::Region => {
            perturb_region(logits, mask.ok_or(Error::MissingInput("mask"))?, spec)
        }
        PerturbationMode::TargetedNoise | PerturbationMode::TargetedFlip => {
            perturb_targeted(logits, labels.ok_or(Error::MissingInput("labels"))?, spec)
        }
    }
}

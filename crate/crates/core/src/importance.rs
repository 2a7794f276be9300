//! Importance maps, threshold masks and a gradient-free saliency proxy.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{check_finite, LogitsBatch, LogitsLayout, Tensor};

/// Per-pixel significance scores, min-max normalized to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceMap {
    height: usize,
    width: usize,
    scores: Vec<f32>,
}

impl ImportanceMap {
    /// Normalizes raw scores; a constant map becomes all zeros.
    pub fn from_raw(height: usize, width: usize, raw: &[f32]) -> Result<Self> {
        if height == 0 || width == 0 || raw.len() != height * width {
            return Err(Error::InvalidShape(format!(
                "importance map [{height}, {width}] needs {} scores, got {}",
                height * width,
                raw.len()
            )));
        }
        check_finite(raw)?;
        Ok(ImportanceMap {
            height,
            width,
            scores: normalize(raw),
        })
    }

    /// Accepts a float32 `[H, W]` tensor.
    pub fn from_tensor(tensor: &Tensor) -> Result<Self> {
        let raw = tensor.expect_f32()?;
        match *tensor.shape() {
            [h, w] => Self::from_raw(h, w, raw),
            _ => Err(Error::InvalidShape(format!(
                "importance map must be rank 2, got {:?}",
                tensor.shape()
            ))),
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_f32(vec![self.height, self.width], self.scores.clone())
            .expect("normalized scores are finite")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn scores(&self) -> &[f32] {
        &self.scores
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.scores[y * self.width + x]
    }
}

fn normalize(raw: &[f32]) -> Vec<f32> {
    let (min, max) = raw
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v as f64), hi.max(v as f64))
        });
    let range = max - min;
    if range == 0.0 {
        return vec![0.0; raw.len()];
    }
    raw.iter()
        .map(|&v| ((v as f64 - min) / range) as f32)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskConfig {
    tau: f64,
    invert: bool,
}

impl MaskConfig {
    pub fn new(tau: f64, invert: bool) -> Result<Self> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::InvalidParameter(format!("tau {tau} outside [0, 1]")));
        }
        Ok(MaskConfig { tau, invert })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn invert(&self) -> bool {
        self.invert
    }
}

/// Binary float32 mask: 1 where `score > tau` (strict), flipped when
/// `invert` is set.
pub fn make_mask(map: &ImportanceMap, cfg: &MaskConfig) -> Tensor {
    let values = map
        .scores
        .iter()
        .map(|&s| {
            let hit = (s as f64 > cfg.tau) != cfg.invert;
            if hit {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    Tensor::from_f32(vec![map.height, map.width], values).expect("mask shape mirrors map")
}

/// Top-1 minus top-2 logit per pixel, normalized. Confident pixels score high.
pub fn margin_saliency(logits: &LogitsBatch) -> Result<ImportanceMap> {
    let LogitsLayout::Segmentation {
        classes,
        height,
        width,
    } = logits.layout()
    else {
        return Err(Error::ShapeMismatch(
            "margin saliency needs [K,H,W] segmentation logits".into(),
        ));
    };
    if classes < 2 {
        return Err(Error::InvalidShape("margin saliency needs K >= 2".into()));
    }
    let plane = height * width;
    let values = logits.values();
    let raw: Vec<f32> = (0..plane)
        .map(|p| {
            let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for c in 0..classes {
                let v = values[c * plane + p] as f64;
                if v > first {
                    second = first;
                    first = v;
                } else if v > second {
                    second = v;
                }
            }
            (first - second) as f32
        })
        .collect();
    ImportanceMap::from_raw(height, width, &raw)
}

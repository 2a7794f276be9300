//! Dense row-major tensors and the two logits layouts the engine understands.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Label value excluded from every metric (segmentation only).
pub const IGNORE_LABEL: i32 = 255;

pub const MAX_RANK: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum DType {
    F32 = 1,
    I32 = 2,
    U8 = 3,
}

impl DType {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(DType::F32),
            2 => Some(DType::I32),
            3 => Some(DType::U8),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 | DType::I32 => 4,
            DType::U8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    I32(Vec<i32>),
    U8(Vec<u8>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::I32(_) => DType::I32,
            TensorData::U8(_) => DType::U8,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::I32(v) => v.len(),
            TensorData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Dense row-major array of rank 1 to 4.
///
/// Construction enforces the shape rules and rejects NaN / Inf in float
/// payloads, so every `Tensor` in circulation is valid.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: TensorData,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: TensorData) -> Result<Self> {
        check_shape(&shape, data.len())?;
        if let TensorData::F32(values) = &data {
            check_finite(values)?;
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_f32(shape: Vec<usize>, values: Vec<f32>) -> Result<Self> {
        Self::new(shape, TensorData::F32(values))
    }

    pub fn from_i32(shape: Vec<usize>, values: Vec<i32>) -> Result<Self> {
        Self::new(shape, TensorData::I32(values))
    }

    pub fn from_u8(shape: Vec<usize>, values: Vec<u8>) -> Result<Self> {
        Self::new(shape, TensorData::U8(values))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn into_parts(self) -> (Vec<usize>, TensorData) {
        (self.shape, self.data)
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            TensorData::F32(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_i32(&self) -> Option<&[i32]> {
        match &self.data {
            TensorData::I32(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_u8(&self) -> Option<&[u8]> {
        match &self.data {
            TensorData::U8(v) => Some(v),
            _ => None,
        }
    }

    pub(crate) fn expect_f32(&self) -> Result<&[f32]> {
        self.as_f32().ok_or(Error::DTypeMismatch {
            expected: DType::F32,
            found: self.dtype(),
        })
    }

    /// Bitwise equality; distinguishes `0.0` from `-0.0`, unlike `==`.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        if self.shape != other.shape {
            return false;
        }
        match (&self.data, &other.data) {
            (TensorData::F32(a), TensorData::F32(b)) => {
                a.iter().map(|x| x.to_bits()).eq(b.iter().map(|x| x.to_bits()))
            }
            (TensorData::I32(a), TensorData::I32(b)) => a == b,
            (TensorData::U8(a), TensorData::U8(b)) => a == b,
            _ => false,
        }
    }
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.is_empty() || shape.len() > MAX_RANK {
        return Err(Error::InvalidShape(format!(
            "rank {} outside 1..={MAX_RANK}",
            shape.len()
        )));
    }
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::InvalidShape(format!("zero-sized dimension in {shape:?}")));
    }
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::InvalidShape(format!("element count of {shape:?} overflows")))?;
    if count != len {
        return Err(Error::InvalidShape(format!(
            "shape {shape:?} needs {count} elements, buffer holds {len}"
        )));
    }
    Ok(())
}

pub(crate) fn check_finite(values: &[f32]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogitsLayout {
    /// `[N, K]`: one row of class scores per sample.
    Classification { samples: usize, classes: usize },
    /// `[K, H, W]`: one spatial plane per class.
    Segmentation {
        classes: usize,
        height: usize,
        width: usize,
    },
}

impl LogitsLayout {
    pub fn classes(&self) -> usize {
        match *self {
            LogitsLayout::Classification { classes, .. } => classes,
            LogitsLayout::Segmentation { classes, .. } => classes,
        }
    }

    /// Number of positions that receive a prediction (samples or pixels).
    pub fn positions(&self) -> usize {
        match *self {
            LogitsLayout::Classification { samples, .. } => samples,
            LogitsLayout::Segmentation { height, width, .. } => height * width,
        }
    }

    pub fn len(&self) -> usize {
        self.positions() * self.classes()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat offset of class `class` at `position`.
    #[inline]
    pub fn index(&self, position: usize, class: usize) -> usize {
        match *self {
            LogitsLayout::Classification { classes, .. } => position * classes + class,
            LogitsLayout::Segmentation { height, width, .. } => class * height * width + position,
        }
    }

    /// Distance between consecutive classes of one position.
    #[inline]
    pub fn class_stride(&self) -> usize {
        match *self {
            LogitsLayout::Classification { .. } => 1,
            LogitsLayout::Segmentation { height, width, .. } => height * width,
        }
    }

    pub fn label_layout(&self) -> LabelLayout {
        match *self {
            LogitsLayout::Classification { samples, .. } => LabelLayout::Classification { samples },
            LogitsLayout::Segmentation { height, width, .. } => {
                LabelLayout::Segmentation { height, width }
            }
        }
    }

    fn shape(&self) -> Vec<usize> {
        match *self {
            LogitsLayout::Classification { samples, classes } => vec![samples, classes],
            LogitsLayout::Segmentation {
                classes,
                height,
                width,
            } => vec![classes, height, width],
        }
    }
}

/// Float32 logits in classification or segmentation layout.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitsBatch {
    layout: LogitsLayout,
    values: Vec<f32>,
}

impl LogitsBatch {
    pub fn new(layout: LogitsLayout, values: Vec<f32>) -> Result<Self> {
        if layout.classes() < 2 {
            return Err(Error::InvalidShape(format!(
                "logits need at least 2 classes, got {}",
                layout.classes()
            )));
        }
        if layout.positions() == 0 {
            return Err(Error::InvalidShape("logits have no positions".into()));
        }
        if layout.len() != values.len() {
            return Err(Error::InvalidShape(format!(
                "layout {layout:?} needs {} values, got {}",
                layout.len(),
                values.len()
            )));
        }
        check_finite(&values)?;
        Ok(LogitsBatch { layout, values })
    }

    pub fn classification(samples: usize, classes: usize, values: Vec<f32>) -> Result<Self> {
        Self::new(LogitsLayout::Classification { samples, classes }, values)
    }

    pub fn segmentation(classes: usize, height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        Self::new(
            LogitsLayout::Segmentation {
                classes,
                height,
                width,
            },
            values,
        )
    }

    /// Rank 2 tensors are read as `[N, K]`, rank 3 as `[K, H, W]`.
    pub fn from_tensor(tensor: Tensor) -> Result<Self> {
        let found = tensor.dtype();
        let (shape, data) = tensor.into_parts();
        let TensorData::F32(values) = data else {
            return Err(Error::DTypeMismatch {
                expected: DType::F32,
                found,
            });
        };
        let layout = match shape[..] {
            [samples, classes] => LogitsLayout::Classification { samples, classes },
            [classes, height, width] => LogitsLayout::Segmentation {
                classes,
                height,
                width,
            },
            _ => {
                return Err(Error::InvalidShape(format!(
                    "logits must be [N,K] or [K,H,W], got {shape:?}"
                )))
            }
        };
        Self::new(layout, values)
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor {
            shape: self.layout.shape(),
            data: TensorData::F32(self.values.clone()),
        }
    }

    pub fn layout(&self) -> LogitsLayout {
        self.layout
    }

    pub fn classes(&self) -> usize {
        self.layout.classes()
    }

    pub fn positions(&self) -> usize {
        self.layout.positions()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn is_segmentation(&self) -> bool {
        matches!(self.layout, LogitsLayout::Segmentation { .. })
    }

    /// Copy of the scores at one position, in class order.
    pub fn scores_at(&self, position: usize) -> Vec<f32> {
        let stride = self.layout.class_stride();
        let base = self.layout.index(position, 0);
        (0..self.classes()).map(|c| self.values[base + c * stride]).collect()
    }

    pub(crate) fn with_values(&self, values: Vec<f32>) -> Result<Self> {
        Self::new(self.layout, values)
    }

    pub fn bit_eq(&self, other: &LogitsBatch) -> bool {
        self.layout == other.layout
            && self
                .values
                .iter()
                .map(|x| x.to_bits())
                .eq(other.values.iter().map(|x| x.to_bits()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelLayout {
    Classification { samples: usize },
    Segmentation { height: usize, width: usize },
}

impl LabelLayout {
    pub fn len(&self) -> usize {
        match *self {
            LabelLayout::Classification { samples } => samples,
            LabelLayout::Segmentation { height, width } => height * width,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Integer class labels, `[N]` or `[H, W]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelBatch {
    layout: LabelLayout,
    values: Vec<i32>,
}

impl LabelBatch {
    pub fn new(layout: LabelLayout, values: Vec<i32>) -> Result<Self> {
        if layout.len() != values.len() || values.is_empty() {
            return Err(Error::InvalidShape(format!(
                "label layout {layout:?} needs {} values, got {}",
                layout.len(),
                values.len()
            )));
        }
        Ok(LabelBatch { layout, values })
    }

    pub fn classification(values: Vec<i32>) -> Result<Self> {
        Self::new(
            LabelLayout::Classification {
                samples: values.len(),
            },
            values,
        )
    }

    pub fn segmentation(height: usize, width: usize, values: Vec<i32>) -> Result<Self> {
        Self::new(LabelLayout::Segmentation { height, width }, values)
    }

    /// Rank 1 tensors are classification labels, rank 2 segmentation maps.
    /// uint8 maps are widened.
    pub fn from_tensor(tensor: Tensor) -> Result<Self> {
        let (shape, data) = tensor.into_parts();
        let values = match data {
            TensorData::I32(v) => v,
            TensorData::U8(v) => v.into_iter().map(i32::from).collect(),
            TensorData::F32(_) => {
                return Err(Error::DTypeMismatch {
                    expected: DType::I32,
                    found: DType::F32,
                })
            }
        };
        let layout = match shape[..] {
            [samples] => LabelLayout::Classification { samples },
            [height, width] => LabelLayout::Segmentation { height, width },
            _ => {
                return Err(Error::InvalidShape(format!(
                    "labels must be [N] or [H,W], got {shape:?}"
                )))
            }
        };
        Self::new(layout, values)
    }

    pub fn to_tensor(&self) -> Tensor {
        let shape = match self.layout {
            LabelLayout::Classification { samples } => vec![samples],
            LabelLayout::Segmentation { height, width } => vec![height, width],
        };
        Tensor {
            shape,
            data: TensorData::I32(self.values.clone()),
        }
    }

    pub fn layout(&self) -> LabelLayout {
        self.layout
    }

    pub fn values(&self) -> &[i32] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_segmentation(&self) -> bool {
        matches!(self.layout, LabelLayout::Segmentation { .. })
    }

    /// Whether `index` is excluded from evaluation.
    #[inline]
    pub fn is_ignored(&self, index: usize) -> bool {
        self.is_segmentation() && self.values[index] == IGNORE_LABEL
    }

    /// Checks every label lies in `[0, classes)`, allowing the ignore
    /// sentinel for segmentation maps.
    pub fn check_classes(&self, classes: usize) -> Result<()> {
        for (index, &value) in self.values.iter().enumerate() {
            let in_range = value >= 0 && (value as usize) < classes;
            if !in_range && !(self.is_segmentation() && value == IGNORE_LABEL) {
                return Err(Error::InvalidLabel { index, value });
            }
        }
        Ok(())
    }

    pub(crate) fn check_matches(&self, logits: &LogitsBatch) -> Result<()> {
        if self.layout != logits.layout().label_layout() {
            return Err(Error::ShapeMismatch(format!(
                "labels {:?} do not match logits {:?}",
                self.layout,
                logits.layout()
            )));
        }
        self.check_classes(logits.classes())
    }
}

/// Index of the largest score; ties go to the lowest index.
#[inline]
pub(crate) fn argmax_strided(values: &[f32], base: usize, stride: usize, classes: usize) -> usize {
    let mut best = 0;
    let mut best_value = values[base];
    for c in 1..classes {
        let v = values[base + c * stride];
        if v > best_value {
            best = c;
            best_value = v;
        }
    }
    best
}

/// Per-position predicted class.
pub fn argmax_classes(logits: &LogitsBatch) -> LabelBatch {
    let layout = logits.layout();
    let stride = layout.class_stride();
    let values = (0..layout.positions())
        .map(|p| argmax_strided(logits.values(), layout.index(p, 0), stride, layout.classes()) as i32)
        .collect();
    LabelBatch {
        layout: layout.label_layout(),
        values,
    }
}

/// Per-position softmax over classes, same layout as the input.
pub fn softmax(logits: &LogitsBatch) -> LogitsBatch {
    let layout = logits.layout();
    let stride = layout.class_stride();
    let classes = layout.classes();
    let src = logits.values();
    let mut out = vec![0.0f32; src.len()];
    for p in 0..layout.positions() {
        let base = layout.index(p, 0);
        let max = (0..classes)
            .map(|c| src[base + c * stride] as f64)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for c in 0..classes {
            total += libm::exp(src[base + c * stride] as f64 - max);
        }
        for c in 0..classes {
            let i = base + c * stride;
            out[i] = (libm::exp(src[i] as f64 - max) / total) as f32;
        }
    }
    LogitsBatch { layout, values: out }
}

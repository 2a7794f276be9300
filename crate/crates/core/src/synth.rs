//! Desk-scale synthetic benchmarks: nearest-centroid blob logits and
//! segmentation scenes with known ground truth.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::importance::ImportanceMap;
use crate::rng::NoiseStream;
use crate::tensor::{LabelBatch, LogitsBatch};

/// Logit margin of the true class in generated scenes.
pub const SCENE_MARGIN: f64 = 6.0;
/// Standard deviation of the jitter added to scene logits.
pub const SCENE_JITTER: f64 = 0.5;
pub const PLACEMENT_ATTEMPTS: u32 = 100;
/// Importance falls linearly to zero over this many pixels outside objects.
const IMPORTANCE_FALLOFF: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobsSpec {
    pub classes: usize,
    pub samples_per_class: usize,
    /// Distance between cluster centres (unit-variance features).
    pub separation: f64,
    pub feature_dim: usize,
    pub seed: u64,
}

impl BlobsSpec {
    fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.samples_per_class < 1 || self.feature_dim < 2 {
            return Err(Error::InvalidParameter(format!(
                "blobs need K >= 2, n >= 1, d >= 2; got {self:?}"
            )));
        }
        if !(self.separation.is_finite() && self.separation >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "separation {} must be finite and >= 0",
                self.separation
            )));
        }
        Ok(())
    }

    /// Pairwise-equidistant axis centres when `d >= K`, otherwise a circle in
    /// the first two features with neighbouring centres `separation` apart.
    fn centers(&self) -> Vec<Vec<f64>> {
        let (k, d, s) = (self.classes, self.feature_dim, self.separation);
        (0..k)
            .map(|c| {
                let mut center = vec![0.0; d];
                if d >= k {
                    center[c] = s / core::f64::consts::SQRT_2;
                } else {
                    let radius = s / (2.0 * libm::sin(core::f64::consts::PI / k as f64));
                    let angle = core::f64::consts::TAU * c as f64 / k as f64;
                    center[0] = radius * libm::cos(angle);
                    center[1] = radius * libm::sin(angle);
                }
                center
            })
            .collect()
    }
}

/// Gaussian clusters scored by a nearest-centroid classifier: the logit of
/// class `k` is `-|x - centre_k|^2`. Sample `i` belongs to class `i % K`.
pub fn gen_blobs_logits(spec: &BlobsSpec) -> Result<(LogitsBatch, LabelBatch)> {
    spec.validate()?;
    let (k, d) = (spec.classes, spec.feature_dim);
    let total = k * spec.samples_per_class;
    let centers = spec.centers();
    let mut stream = NoiseStream::new(spec.seed);
    let mut logits = Vec::with_capacity(total * k);
    let mut labels = Vec::with_capacity(total);
    let mut x = vec![0.0; d];
    for i in 0..total {
        let class = i % k;
        for (j, xj) in x.iter_mut().enumerate() {
            *xj = centers[class][j] + stream.next_gaussian();
        }
        for center in &centers {
            let dist: f64 = x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
            logits.push(-dist as f32);
        }
        labels.push(class as i32);
    }
    Ok((
        LogitsBatch::classification(total, k, logits)?,
        LabelBatch::classification(labels)?,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub shapes: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub logits: LogitsBatch,
    pub labels: LabelBatch,
    pub importance: ImportanceMap,
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Rect { y0: usize, x0: usize, h: usize, w: usize },
    Disc { cy: usize, cx: usize, r: usize },
}

impl Shape {
    fn contains(&self, y: usize, x: usize) -> bool {
        match *self {
            Shape::Rect { y0, x0, h, w } => y >= y0 && y < y0 + h && x >= x0 && x < x0 + w,
            Shape::Disc { cy, cx, r } => {
                let (dy, dx) = (y as f64 - cy as f64, x as f64 - cx as f64);
                dy * dy + dx * dx <= (r * r) as f64
            }
        }
    }

    fn fits(&self, height: usize, width: usize) -> bool {
        match *self {
            Shape::Rect { y0, x0, h, w } => y0 + h <= height && x0 + w <= width,
            Shape::Disc { cy, cx, r } => cy >= r && cx >= r && cy + r < height && cx + r < width,
        }
    }
}

fn scaled(u: f64, n: usize) -> usize {
    ((u * n as f64) as usize).min(n - 1)
}

/// Rectangles and discs of random foreground classes on background class 0.
///
/// Logits are the one-hot truth times [`SCENE_MARGIN`] plus Gaussian jitter
/// of [`SCENE_JITTER`]. The importance map is 1 inside objects and decays to
/// 0 a few pixels away from them.
pub fn gen_scene(spec: &SceneSpec) -> Result<Scene> {
    let SceneSpec {
        height,
        width,
        classes,
        shapes,
        seed,
    } = *spec;
    if height < 16 || width < 16 || classes < 2 {
        return Err(Error::InvalidParameter(format!(
            "scenes need H, W >= 16 and K >= 2; got {spec:?}"
        )));
    }
    let root = NoiseStream::new(seed);
    let mut layout = root.derive(1);
    let jitter = root.derive(2);
    let short = height.min(width);

    let mut truth = vec![0i32; height * width];
    for index in 0..shapes {
        let class = 1 + scaled(layout.next_uniform(), classes - 1) as i32;
        let mut placed = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let shape = if layout.next_uniform() < 0.5 {
                Shape::Rect {
                    h: 2 + scaled(layout.next_uniform(), height / 3),
                    w: 2 + scaled(layout.next_uniform(), width / 3),
                    y0: scaled(layout.next_uniform(), height),
                    x0: scaled(layout.next_uniform(), width),
                }
            } else {
                Shape::Disc {
                    r: 2 + scaled(layout.next_uniform(), short / 6),
                    cy: scaled(layout.next_uniform(), height),
                    cx: scaled(layout.next_uniform(), width),
                }
            };
            if shape.fits(height, width) {
                placed = Some(shape);
                break;
            }
        }
        let shape = placed.ok_or(Error::ScenePlacement {
            shape: index,
            attempts: PLACEMENT_ATTEMPTS,
        })?;
        for y in 0..height {
            for x in 0..width {
                if shape.contains(y, x) {
                    truth[y * width + x] = class;
                }
            }
        }
    }

    let plane = height * width;
    let mut logits = vec![0.0f32; classes * plane];
    for c in 0..classes {
        for p in 0..plane {
            let i = c * plane + p;
            let base = if truth[p] == c as i32 { SCENE_MARGIN } else { 0.0 };
            logits[i] = (base + SCENE_JITTER * jitter.gaussian_at(i as u64)) as f32;
        }
    }

    let reach = IMPORTANCE_FALLOFF as isize;
    let raw: Vec<f32> = (0..plane)
        .map(|p| {
            if truth[p] != 0 {
                return 1.0;
            }
            let (y, x) = ((p / width) as isize, (p % width) as isize);
            let mut nearest = f64::INFINITY;
            for yy in (y - reach).max(0)..=(y + reach).min(height as isize - 1) {
                for xx in (x - reach).max(0)..=(x + reach).min(width as isize - 1) {
                    if truth[yy as usize * width + xx as usize] != 0 {
                        let (dy, dx) = ((yy - y) as f64, (xx - x) as f64);
                        nearest = nearest.min(libm::sqrt(dy * dy + dx * dx));
                    }
                }
            }
            (1.0 - nearest / IMPORTANCE_FALLOFF).max(0.0) as f32
        })
        .collect();

    Ok(Scene {
        logits: LogitsBatch::segmentation(classes, height, width, logits)?,
        labels: LabelBatch::segmentation(height, width, truth)?,
        importance: ImportanceMap::from_raw(height, width, &raw)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{accuracy, miou};
    use crate::tensor::argmax_classes;

    fn blobs(separation: f64, classes: usize, n: usize, d: usize) -> (LogitsBatch, LabelBatch) {
        gen_blobs_logits(&BlobsSpec {
            classes,
            samples_per_class: n,
            separation,
            feature_dim: d,
            seed: 8,
        })
        .unwrap()
    }

    fn clean_accuracy(b: &(LogitsBatch, LabelBatch)) -> f64 {
        accuracy(&argmax_classes(&b.0), &b.1).unwrap().value
    }

    #[test]
    fn wide_separation_is_perfect() {
        assert_eq!(clean_accuracy(&blobs(50.0, 10, 50, 10)), 1.0);
        assert_eq!(clean_accuracy(&blobs(50.0, 10, 50, 2)), 1.0);
    }

    #[test]
    fn zero_separation_is_chance() {
        let acc = clean_accuracy(&blobs(0.0, 10, 500, 10));
        assert!((acc - 0.1).abs() <= 0.03, "{acc}");
    }

    #[test]
    fn accuracy_grows_with_separation() {
        let accs: Vec<f64> = [1.0, 2.0, 3.0, 5.0].iter().map(|&s| clean_accuracy(&blobs(s, 10, 200, 10))).collect();
        assert!(accs.windows(2).all(|w| w[0] < w[1]), "{accs:?}");
    }

    #[test]
    fn blobs_balanced_and_deterministic() {
        let a = blobs(2.0, 4, 25, 3);
        assert_eq!(a, blobs(2.0, 4, 25, 3));
        for c in 0..4 {
            assert_eq!(a.1.values().iter().filter(|&&l| l == c).count(), 25);
        }
    }

    #[test]
    fn blobs_reject_bad_specs() {
        let mut spec = BlobsSpec { classes: 1, samples_per_class: 1, separation: 1.0, feature_dim: 2, seed: 0 };
        assert!(gen_blobs_logits(&spec).is_err());
        spec.classes = 2;
        spec.feature_dim = 1;
        assert!(gen_blobs_logits(&spec).is_err());
        spec.feature_dim = 2;
        spec.separation = f64::NAN;
        assert!(gen_blobs_logits(&spec).is_err());
    }

    #[test]
    fn scene_is_clean_and_deterministic() {
        let spec = SceneSpec { height: 32, width: 32, classes: 4, shapes: 3, seed: 5 };
        let scene = gen_scene(&spec).unwrap();
        assert_eq!(scene, gen_scene(&spec).unwrap());
        let pred = argmax_classes(&scene.logits);
        assert!(miou(&pred, &scene.labels, 4).unwrap().value >= 0.99);
        let wrong = pred.values().iter().zip(scene.labels.values()).filter(|(p, t)| p != t).count();
        assert!(wrong * 100 < pred.len());
    }

    #[test]
    fn scene_importance_tracks_objects() {
        let spec = SceneSpec { height: 48, width: 40, classes: 3, shapes: 2, seed: 9 };
        let scene = gen_scene(&spec).unwrap();
        let labels = scene.labels.values();
        assert!(labels.iter().any(|&l| l != 0));
        for (p, &score) in scene.importance.scores().iter().enumerate() {
            if labels[p] != 0 {
                assert_eq!(score, 1.0);
            }
            let (y, x) = (p / 40, p % 40);
            let far = (0..48usize).all(|yy| {
                (0..40usize).all(|xx| {
                    labels[yy * 40 + xx] == 0 || yy.abs_diff(y).max(xx.abs_diff(x)) > 3
                })
            });
            if far {
                assert_eq!(score, 0.0);
            }
        }
    }

    #[test]
    fn scene_rejects_small_canvas() {
        let spec = SceneSpec { height: 8, width: 32, classes: 3, shapes: 1, seed: 0 };
        assert!(gen_scene(&spec).is_err());
    }
}

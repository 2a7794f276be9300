//! Decay-curve fitting `metric(σ) = a·exp(-b·σ) + c` and its inverse.
//!
//! The fit runs a damped Gauss-Newton (Levenberg) iteration on the per-sigma
//! means, each residual weighted by `1 / max(stddev, 0.005)`. Parameters are
//! optimized as `a = e^u`, `b = e^v`, `c = 1 / (1 + e^-w)` so `a, b > 0` and
//! `0 < c < 1` hold at every iterate.
//!
//! When the exponential family fits poorly, a non-increasing piecewise-linear
//! interpolant (pool-adjacent-violators on the means) takes over.

use alloc::format;
use alloc::vec::Vec;
use core::fmt;

use crate::calibration::CalibrationTable;
use crate::error::{Error, Result};

pub const MIN_DISTINCT_SIGMAS: usize = 4;
pub const MAX_ITERATIONS: usize = 200;
pub const STEP_TOLERANCE: f64 = 1e-10;
pub const INITIAL_DAMPING: f64 = 1e-3;
pub const DAMPING_FACTOR: f64 = 10.0;
pub const STDDEV_FLOOR: f64 = 0.005;
/// `a + c` may exceed 1 by this much before a fit is rejected.
pub const CEILING_SLACK: f64 = 0.05;
/// Exponential fits with a larger rmse hand over to the interpolant. Kept
/// below the tolerance callers typically ask of solved targets (0.03), since
/// inversion error tracks the residual level.
pub const AUTO_RMSE_LIMIT: f64 = 0.02;
/// `sigma_max = SIGMA_MAX_FACTOR * largest calibrated sigma`.
pub const SIGMA_MAX_FACTOR: f64 = 4.0;

const LOG_EPS: f64 = 1e-9;
const INIT_MARGIN: f64 = 0.02;
const MAX_DAMPING: f64 = 1e30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Clamp {
    None,
    /// Target at or above the clean metric; no noise is applied.
    AboveMax,
    /// Target at or below the floor; sigma is capped at the domain bound.
    BelowFloor,
}

impl Clamp {
    pub fn as_str(self) -> &'static str {
        match self {
            Clamp::None => "none",
            Clamp::AboveMax => "above_max",
            Clamp::BelowFloor => "below_floor",
        }
    }
}

impl fmt::Display for Clamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaSolution {
    pub sigma: f64,
    pub clamp: Clamp,
}

fn check_target(target: f64) -> Result<()> {
    if (0.0..=1.0).contains(&target) {
        Ok(())
    } else {
        Err(Error::InvalidTarget(target))
    }
}

/// Fitted `a·exp(-b·σ) + c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    a: f64,
    b: f64,
    c: f64,
    rmse: f64,
    sigma_max: f64,
}

impl DecayFit {
    pub fn new(a: f64, b: f64, c: f64, sigma_max: f64) -> Result<Self> {
        Self::with_rmse(a, b, c, 0.0, sigma_max)
    }

    pub fn with_rmse(a: f64, b: f64, c: f64, rmse: f64, sigma_max: f64) -> Result<Self> {
        let fit = DecayFit {
            a,
            b,
            c,
            rmse,
            sigma_max,
        };
        fit.validate()?;
        Ok(fit)
    }

    fn validate(&self) -> Result<()> {
        let DecayFit { a, b, c, rmse, sigma_max } = *self;
        if ![a, b, c, rmse, sigma_max].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidFit("non-finite parameter".into()));
        }
        if !(a > 0.0 && b > 0.0) {
            return Err(Error::InvalidFit(format!("need a > 0 and b > 0, got a={a} b={b}")));
        }
        if !(0.0..1.0).contains(&c) {
            return Err(Error::InvalidFit(format!("floor c={c} outside [0, 1)")));
        }
        if a + c > 1.0 + CEILING_SLACK {
            return Err(Error::InvalidFit(format!("a + c = {} exceeds 1", a + c)));
        }
        if !(sigma_max > 0.0) || rmse < 0.0 {
            return Err(Error::InvalidFit("bad sigma domain or rmse".into()));
        }
        Ok(())
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn rmse(&self) -> f64 {
        self.rmse
    }

    pub fn sigma_domain(&self) -> (f64, f64) {
        (0.0, self.sigma_max)
    }

    pub fn metric_at_zero(&self) -> f64 {
        self.a + self.c
    }

    fn raw(&self, sigma: f64) -> f64 {
        self.a * libm::exp(-self.b * sigma) + self.c
    }

    /// Curve value clamped to `[0, 1]`.
    pub fn predict(&self, sigma: f64) -> f64 {
        self.raw(sigma).clamp(0.0, 1.0)
    }

    /// `σ = -ln((target - c) / a) / b`, clamped to `[0, sigma_max]` at the
    /// ends of the curve's range.
    pub fn solve_sigma(&self, target: f64) -> Result<SigmaSolution> {
        check_target(target)?;
        if target >= self.metric_at_zero() {
            return Ok(SigmaSolution {
                sigma: 0.0,
                clamp: Clamp::AboveMax,
            });
        }
        if target <= self.c {
            return Ok(SigmaSolution {
                sigma: self.sigma_max,
                clamp: Clamp::BelowFloor,
            });
        }
        let sigma = -libm::log((target - self.c) / self.a) / self.b;
        Ok(SigmaSolution {
            sigma: sigma.max(0.0),
            clamp: Clamp::None,
        })
    }
}

struct Points {
    sigma: Vec<f64>,
    mean: Vec<f64>,
    weight: Vec<f64>,
}

fn points(table: &CalibrationTable) -> Points {
    let s = table.summary();
    Points {
        sigma: s.iter().map(|r| r.sigma).collect(),
        mean: s.iter().map(|r| r.mean).collect(),
        weight: s.iter().map(|r| 1.0 / r.stddev.max(STDDEV_FLOOR)).collect(),
    }
}

fn sigmoid(w: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-w))
}

fn logit(c: f64) -> f64 {
    libm::log(c / (1.0 - c))
}

/// Least-squares fit of the exponential family to a table's per-sigma means.
pub fn fit_decay(table: &CalibrationTable) -> Result<DecayFit> {
    let pts = points(table);
    if pts.sigma.len() < MIN_DISTINCT_SIGMAS {
        return Err(Error::InsufficientData(format!(
            "need {MIN_DISTINCT_SIGMAS} distinct sigma values, got {}",
            pts.sigma.len()
        )));
    }
    fit_points(&pts)
}

fn initial_guess(pts: &Points) -> Result<[f64; 3]> {
    let lo = pts.mean.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = pts.mean.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo < 1e-12 {
        return Err(Error::DegenerateData);
    }
    let c0 = lo;
    let a0 = pts.mean[0] - c0;
    if a0 <= 0.0 {
        // metric at the smallest sigma is the minimum: nothing decays
        return Err(Error::DegenerateData);
    }
    // log-linear slope over points clearly above the floor
    let usable: Vec<(f64, f64)> = pts
        .sigma
        .iter()
        .zip(&pts.mean)
        .filter(|(_, &m)| m - c0 > INIT_MARGIN)
        .map(|(&s, &m)| (s, libm::log(m - c0 + LOG_EPS)))
        .collect();
    let span = pts.sigma[pts.sigma.len() - 1] - pts.sigma[0];
    let mut b0 = f64::NAN;
    if usable.len() >= 2 {
        let n = usable.len() as f64;
        let sx: f64 = usable.iter().map(|p| p.0).sum();
        let sy: f64 = usable.iter().map(|p| p.1).sum();
        let sxx: f64 = usable.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = usable.iter().map(|p| p.0 * p.1).sum();
        let denom = n * sxx - sx * sx;
        if denom > 0.0 {
            b0 = -(n * sxy - sx * sy) / denom;
        }
    }
    if !(b0.is_finite() && b0 > 0.0) {
        b0 = 3.0 / span.max(f64::MIN_POSITIVE);
    }
    let c0 = c0.clamp(1e-6, 1.0 - 1e-6);
    Ok([libm::log(a0), libm::log(b0), logit(c0)])
}

fn residuals(pts: &Points, theta: &[f64; 3], out: &mut [f64]) -> f64 {
    let (a, b, c) = (libm::exp(theta[0]), libm::exp(theta[1]), sigmoid(theta[2]));
    let mut cost = 0.0;
    for i in 0..pts.sigma.len() {
        let r = pts.weight[i] * (a * libm::exp(-b * pts.sigma[i]) + c - pts.mean[i]);
        out[i] = r;
        cost += r * r;
    }
    cost
}

fn fit_points(pts: &Points) -> Result<DecayFit> {
    let n = pts.sigma.len();
    let mut theta = initial_guess(pts)?;
    let mut r = alloc::vec![0.0; n];
    let mut trial_r = alloc::vec![0.0; n];
    let mut cost = residuals(pts, &theta, &mut r);
    let mut damping = INITIAL_DAMPING;
    if !cost.is_finite() {
        return Err(Error::NonConvergence);
    }

    'outer: for _ in 0..MAX_ITERATIONS {
        let (a, b, c) = (libm::exp(theta[0]), libm::exp(theta[1]), sigmoid(theta[2]));
        let mut jtj = [[0.0f64; 3]; 3];
        let mut jtr = [0.0f64; 3];
        for i in 0..n {
            let e = libm::exp(-b * pts.sigma[i]);
            let w = pts.weight[i];
            let row = [w * a * e, -w * a * b * pts.sigma[i] * e, w * c * (1.0 - c)];
            for p in 0..3 {
                jtr[p] += row[p] * r[i];
                for q in 0..3 {
                    jtj[p][q] += row[p] * row[q];
                }
            }
        }
        loop {
            let mut lhs = jtj;
            for (p, row) in lhs.iter_mut().enumerate() {
                row[p] += damping;
            }
            let step = match solve3(lhs, [-jtr[0], -jtr[1], -jtr[2]]) {
                Some(s) => s,
                None => {
                    damping *= DAMPING_FACTOR;
                    if damping > MAX_DAMPING {
                        break 'outer;
                    }
                    continue;
                }
            };
            let norm = libm::sqrt(step.iter().map(|s| s * s).sum());
            if norm < STEP_TOLERANCE {
                break 'outer;
            }
            let candidate = [theta[0] + step[0], theta[1] + step[1], theta[2] + step[2]];
            let trial_cost = residuals(pts, &candidate, &mut trial_r);
            if trial_cost.is_finite() && trial_cost < cost {
                theta = candidate;
                cost = trial_cost;
                core::mem::swap(&mut r, &mut trial_r);
                damping = (damping / DAMPING_FACTOR).max(1e-15);
                continue 'outer;
            }
            damping *= DAMPING_FACTOR;
            if damping > MAX_DAMPING {
                break 'outer;
            }
        }
    }

    let (a, b, c) = (libm::exp(theta[0]), libm::exp(theta[1]), sigmoid(theta[2]));
    if ![a, b, c].iter().all(|v| v.is_finite()) {
        return Err(Error::NonConvergence);
    }
    let rmse = libm::sqrt(
        pts.sigma
            .iter()
            .zip(&pts.mean)
            .map(|(&s, &m)| {
                let d = a * libm::exp(-b * s) + c - m;
                d * d
            })
            .sum::<f64>()
            / n as f64,
    );
    let sigma_max = SIGMA_MAX_FACTOR * pts.sigma[n - 1];
    DecayFit::with_rmse(a, b, c, rmse, sigma_max)
}

/// Gaussian elimination with partial pivoting on a 3x3 system.
fn solve3(mut m: [[f64; 3]; 3], mut rhs: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[pivot][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, pivot);
        rhs.swap(col, pivot);
        for row in col + 1..3 {
            let f = m[row][col] / m[col][col];
            for k in col..3 {
                m[row][k] -= f * m[col][k];
            }
            rhs[row] -= f * rhs[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let tail: f64 = (row + 1..3).map(|k| m[row][k] * x[k]).sum();
        x[row] = (rhs[row] - tail) / m[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Non-increasing least-squares fit (unweighted pool-adjacent-violators).
pub fn pool_adjacent_violators(values: &[f64]) -> Vec<f64> {
    // blocks of (sum, count)
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    for &v in values {
        blocks.push((v, 1));
        while blocks.len() >= 2 {
            let (s2, n2) = blocks[blocks.len() - 1];
            let (s1, n1) = blocks[blocks.len() - 2];
            if s1 / n1 as f64 >= s2 / n2 as f64 {
                break;
            }
            blocks.pop();
            let last = blocks.len() - 1;
            blocks[last] = (s1 + s2, n1 + n2);
        }
    }
    blocks
        .into_iter()
        .flat_map(|(s, n)| core::iter::repeat(s / n as f64).take(n))
        .collect()
}

/// Non-increasing piecewise-linear curve through pooled per-sigma means.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneInterpolant {
    sigmas: Vec<f64>,
    values: Vec<f64>,
    rmse: f64,
    sigma_max: f64,
}

impl MonotoneInterpolant {
    /// Knots must ascend strictly in sigma and not increase in value.
    pub fn new(sigmas: Vec<f64>, values: Vec<f64>, rmse: f64, sigma_max: f64) -> Result<Self> {
        if sigmas.len() < 2 || sigmas.len() != values.len() {
            return Err(Error::InsufficientData("interpolant needs >= 2 knots".into()));
        }
        if sigmas.windows(2).any(|w| !(w[0] < w[1])) || values.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidFit("interpolant knots are not monotone".into()));
        }
        if values.iter().chain(&sigmas).any(|v| !v.is_finite()) || !(sigma_max >= sigmas[sigmas.len() - 1]) {
            return Err(Error::InvalidFit("bad interpolant knots or domain".into()));
        }
        Ok(MonotoneInterpolant {
            sigmas,
            values,
            rmse,
            sigma_max,
        })
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn rmse(&self) -> f64 {
        self.rmse
    }

    pub fn sigma_domain(&self) -> (f64, f64) {
        (0.0, self.sigma_max)
    }

    pub fn metric_at_zero(&self) -> f64 {
        self.values[0]
    }

    /// Linear between knots, constant outside them.
    pub fn predict(&self, sigma: f64) -> f64 {
        let last = self.sigmas.len() - 1;
        if sigma <= self.sigmas[0] {
            return self.values[0];
        }
        if sigma >= self.sigmas[last] {
            return self.values[last];
        }
        let j = self.sigmas.partition_point(|&s| s <= sigma) - 1;
        let t = (sigma - self.sigmas[j]) / (self.sigmas[j + 1] - self.sigmas[j]);
        self.values[j] + t * (self.values[j + 1] - self.values[j])
    }

    /// Smallest sigma reaching `target`.
    pub fn solve_sigma(&self, target: f64) -> Result<SigmaSolution> {
        check_target(target)?;
        let last = self.values.len() - 1;
        if target >= self.values[0] {
            return Ok(SigmaSolution {
                sigma: 0.0,
                clamp: Clamp::AboveMax,
            });
        }
        if target < self.values[last] {
            return Ok(SigmaSolution {
                sigma: self.sigma_max,
                clamp: Clamp::BelowFloor,
            });
        }
        for j in 0..last {
            let (hi, lo) = (self.values[j], self.values[j + 1]);
            if target > hi || target < lo {
                continue;
            }
            let sigma = if target == hi {
                self.sigmas[j]
            } else if target == lo {
                self.sigmas[j + 1]
            } else {
                self.sigmas[j] + (hi - target) / (hi - lo) * (self.sigmas[j + 1] - self.sigmas[j])
            };
            return Ok(SigmaSolution {
                sigma,
                clamp: Clamp::None,
            });
        }
        unreachable!("target lies within the interpolant's range")
    }
}

/// Isotonic fallback fit of a table's per-sigma means.
pub fn fit_interpolant(table: &CalibrationTable) -> Result<MonotoneInterpolant> {
    let pts = points(table);
    if pts.sigma.len() < 2 {
        return Err(Error::InsufficientData("need >= 2 distinct sigma values".into()));
    }
    let pooled = pool_adjacent_violators(&pts.mean);
    let rmse = libm::sqrt(
        pooled
            .iter()
            .zip(&pts.mean)
            .map(|(p, m)| (p - m) * (p - m))
            .sum::<f64>()
            / pooled.len() as f64,
    );
    let sigma_max = SIGMA_MAX_FACTOR * pts.sigma[pts.sigma.len() - 1];
    MonotoneInterpolant::new(pts.sigma, pooled, rmse, sigma_max.max(f64::MIN_POSITIVE))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveFamily {
    Exp,
    Isotonic,
}

impl CurveFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            CurveFamily::Exp => "exp",
            CurveFamily::Isotonic => "isotonic",
        }
    }
}

impl fmt::Display for CurveFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A fitted sigma-to-metric curve of either family.
#[derive(Debug, Clone, PartialEq)]
pub enum UtilityCurve {
    Exp(DecayFit),
    Isotonic(MonotoneInterpolant),
}

impl UtilityCurve {
    pub fn family(&self) -> CurveFamily {
        match self {
            UtilityCurve::Exp(_) => CurveFamily::Exp,
            UtilityCurve::Isotonic(_) => CurveFamily::Isotonic,
        }
    }

    pub fn predict(&self, sigma: f64) -> f64 {
        match self {
            UtilityCurve::Exp(f) => f.predict(sigma),
            UtilityCurve::Isotonic(f) => f.predict(sigma),
        }
    }

    pub fn solve_sigma(&self, target: f64) -> Result<SigmaSolution> {
        match self {
            UtilityCurve::Exp(f) => f.solve_sigma(target),
            UtilityCurve::Isotonic(f) => f.solve_sigma(target),
        }
    }

    pub fn metric_at_zero(&self) -> f64 {
        match self {
            UtilityCurve::Exp(f) => f.metric_at_zero(),
            UtilityCurve::Isotonic(f) => f.metric_at_zero(),
        }
    }

    pub fn rmse(&self) -> f64 {
        match self {
            UtilityCurve::Exp(f) => f.rmse(),
            UtilityCurve::Isotonic(f) => f.rmse(),
        }
    }

    pub fn sigma_domain(&self) -> (f64, f64) {
        match self {
            UtilityCurve::Exp(f) => f.sigma_domain(),
            UtilityCurve::Isotonic(f) => f.sigma_domain(),
        }
    }
}

/// Exponential fit, replaced by the interpolant when the fit fails to
/// converge, is invalid, or has rmse above [`AUTO_RMSE_LIMIT`]. Degenerate and
/// too-small tables are errors either way.
pub fn fit_auto(table: &CalibrationTable) -> Result<UtilityCurve> {
    match fit_decay(table) {
        Ok(fit) if fit.rmse() <= AUTO_RMSE_LIMIT => Ok(UtilityCurve::Exp(fit)),
        Ok(_) | Err(Error::NonConvergence) | Err(Error::InvalidFit(_)) => {
            fit_interpolant(table).map(UtilityCurve::Isotonic)
        }
        Err(e) => Err(e),
    }
}

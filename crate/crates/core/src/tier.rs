//! Named service tiers bound to target utilities.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::curvefit::{Clamp, UtilityCurve};
use crate::error::{Error, Result};
use crate::metrics::MetricKind;
use crate::noise::{perturb_global, PerturbationSpec};
use crate::rng::{mix64, GOLDEN_GAMMA};
use crate::tensor::LogitsBatch;

#[derive(Debug, Clone, PartialEq)]
pub struct Tier {
    pub name: String,
    pub target: f64,
}

impl Tier {
    pub fn new(name: impl Into<String>, target: f64) -> Self {
        Tier {
            name: name.into(),
            target,
        }
    }
}

/// Tiers in ascending rank; the last one is the premium tier.
#[derive(Debug, Clone, PartialEq)]
pub struct TierPolicy {
    tiers: Vec<Tier>,
    metric: MetricKind,
    curve: UtilityCurve,
    base_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolvedTier {
    pub spec: PerturbationSpec,
    /// Curve prediction at the resolved sigma.
    pub achieved: f64,
    pub clamp: Clamp,
}

/// Seed for one request: `mix64(base ^ mix64(request_id + GOLDEN_GAMMA))`.
pub fn request_seed(base_seed: u64, request_id: u64) -> u64 {
    mix64(base_seed ^ mix64(request_id.wrapping_add(GOLDEN_GAMMA)))
}

impl TierPolicy {
    pub fn new(tiers: Vec<Tier>, metric: MetricKind, curve: UtilityCurve, base_seed: u64) -> Result<Self> {
        if tiers.is_empty() {
            return Err(Error::InvalidParameter("policy has no tiers".into()));
        }
        for (i, tier) in tiers.iter().enumerate() {
            if tier.name.is_empty() || tier.name.chars().any(|c| c.is_whitespace() || c == '=') {
                return Err(Error::InvalidParameter(format!("bad tier name `{}`", tier.name)));
            }
            if !(0.0..=1.0).contains(&tier.target) {
                return Err(Error::InvalidTarget(tier.target));
            }
            if tiers[..i].iter().any(|t| t.name == tier.name) {
                return Err(Error::InvalidParameter(format!("duplicate tier `{}`", tier.name)));
            }
            if i > 0 && !(tier.target > tiers[i - 1].target) {
                return Err(Error::InvalidParameter(format!(
                    "tier `{}` target must exceed the tier below it",
                    tier.name
                )));
            }
        }
        Ok(TierPolicy {
            tiers,
            metric,
            curve,
            base_seed,
        })
    }

    pub fn tiers(&self) -> &[Tier] {
        &self.tiers
    }

    pub fn metric(&self) -> MetricKind {
        self.metric
    }

    pub fn curve(&self) -> &UtilityCurve {
        &self.curve
    }

    pub fn base_seed(&self) -> u64 {
        self.base_seed
    }

    fn tier(&self, name: &str) -> Result<&Tier> {
        self.tiers
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::UnknownTier(name.into()))
    }

    /// Global-mode perturbation whose sigma reaches the tier's target on the curve.
    /// Its seed is the policy base seed; [`apply_tier`] replaces it
    /// per request.
    ///
    /// [`apply_tier`]: TierPolicy::apply_tier
    pub fn resolve_tier(&self, name: &str) -> Result<ResolvedTier> {
        let tier = self.tier(name)?;
        let solution = self.curve.solve_sigma(tier.target)?;
        Ok(ResolvedTier {
            spec: PerturbationSpec::global(solution.sigma, self.base_seed),
            achieved: self.curve.predict(solution.sigma),
            clamp: solution.clamp,
        })
    }

    pub fn apply_tier(&self, name: &str, logits: &LogitsBatch, request_id: u64) -> Result<LogitsBatch> {
        let resolved = self.resolve_tier(name)?;
        let spec = resolved.spec.with_seed(request_seed(self.base_seed, request_id));
        perturb_global(logits, &spec)
    }
}

//! Tier policy file.
//!
//! ```text
//! # comments and blank lines are ignored
//! metric_kind=acc
//! base_seed=42
//!
//! [fit]
//! family=exp
//! a=7.9e-1
//! b=1.2e0
//! c=1.0e-1
//! rmse=3.1e-3
//! sigma_domain=0,6.4e1
//! metric_at_zero=8.9e-1
//!
//! [tiers]
//! free=0.40
//! basic=0.60
//! premium=0.95
//! ```
//!
//! The header fields come before any section. `[fit]` holds a curve record
//! exactly as written by `utilgate fit`; `[tiers]` lists `name=target` pairs
//! from the lowest tier to the highest. Unknown fields or sections, duplicates
//! and missing fields are rejected.

use std::fmt::Write as _;

use utilgate_core::{MetricKind, Tier, TierPolicy};

use crate::records::{format_curve, parse_curve_lines};
use crate::Error;

fn err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

#[derive(PartialEq)]
enum Section {
    Header,
    Fit,
    Tiers,
}

pub fn parse_policy(text: &str) -> Result<TierPolicy, Error> {
    let mut section = Section::Header;
    let mut seen_fit = false;
    let mut seen_tiers = false;
    let mut metric: Option<MetricKind> = None;
    let mut base_seed: Option<u64> = None;
    let mut fit_lines = Vec::new();
    let mut tiers = Vec::new();
    let mut last = 0;

    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        last = n;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let (next, seen) = match name {
                "fit" => (Section::Fit, &mut seen_fit),
                "tiers" => (Section::Tiers, &mut seen_tiers),
                other => return Err(err(n, format!("unknown section [{other}]"))),
            };
            if *seen {
                return Err(err(n, format!("duplicate section [{name}]")));
            }
            *seen = true;
            section = next;
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| err(n, format!("expected key=value, got `{line}`")))?;
        match section {
            Section::Header => match key {
                "metric_kind" if metric.is_none() => {
                    metric = Some(value.parse().map_err(|e| err(n, format!("{e}")))?)
                }
                "base_seed" if base_seed.is_none() => {
                    base_seed = Some(value.parse().map_err(|_| err(n, format!("bad base_seed `{value}`")))?)
                }
                "metric_kind" | "base_seed" => return Err(err(n, format!("duplicate field `{key}`"))),
                _ => return Err(err(n, format!("unknown field `{key}`"))),
            },
            Section::Fit => fit_lines.push((n, line)),
            Section::Tiers => {
                let target = value
                    .parse::<f64>()
                    .map_err(|_| err(n, format!("bad target `{value}` for tier `{key}`")))?;
                tiers.push(Tier::new(key, target));
            }
        }
    }
    let metric = metric.ok_or_else(|| err(last, "missing field `metric_kind`"))?;
    let base_seed = base_seed.ok_or_else(|| err(last, "missing field `base_seed`"))?;
    if !seen_fit {
        return Err(err(last, "missing section [fit]"));
    }
    if !seen_tiers {
        return Err(err(last, "missing section [tiers]"));
    }
    let curve = parse_curve_lines(fit_lines)?;
    Ok(TierPolicy::new(tiers, metric, curve, base_seed)?)
}

pub fn format_policy(policy: &TierPolicy) -> String {
    let mut out = String::new();
    writeln!(out, "metric_kind={}", policy.metric()).unwrap();
    writeln!(out, "base_seed={}", policy.base_seed()).unwrap();
    writeln!(out, "\n[fit]").unwrap();
    out.push_str(&format_curve(policy.curve()));
    writeln!(out, "\n[tiers]").unwrap();
    for tier in policy.tiers() {
        writeln!(out, "{}={}", tier.name, tier.target).unwrap();
    }
    out
}

/// Parses `name=target,name=target` as given on the command line.
pub fn parse_tier_list(spec: &str) -> Result<Vec<Tier>, Error> {
    spec.split(',')
        .map(|pair| {
            let (name, target) = pair
                .split_once('=')
                .ok_or_else(|| Error::Usage(format!("tier `{pair}` is not name=target")))?;
            let target = target
                .trim()
                .parse()
                .map_err(|_| Error::Usage(format!("bad target in `{pair}`")))?;
            Ok(Tier::new(name.trim(), target))
        })
        .collect()
}

//! Line-oriented text records: metric reports, calibration tables and fitted
//! curves.

use std::collections::HashMap;
use std::fmt::Write as _;

use utilgate_core::calibration::MaskEcho;
use utilgate_core::{
    CalibrationRow, CalibrationTable, DecayFit, MetricKind, MetricReport, MonotoneInterpolant,
    PerturbationMode, SweepEcho, UtilityCurve,
};

use crate::Error;

pub const TABLE_MARKER: &str = "# utilgate calibration";
pub const TABLE_HEADER: &str = "sigma,trial,metric_value";
pub const SUMMARY_MARKER: &str = "# summary";
pub const SUMMARY_HEADER: &str = "sigma,mean,stddev";

/// `value` rounded to `digits` significant digits, positional notation when
/// the exponent allows it.
pub fn format_sig(value: f64, digits: usize) -> String {
    let digits = digits.max(1);
    if value == 0.0 || !value.is_finite() {
        return format!("{:.*}", digits - 1, value);
    }
    let sci = format!("{:.*e}", digits - 1, value);
    let exp: i32 = sci.rsplit('e').next().and_then(|e| e.parse().ok()).unwrap_or(0);
    if exp < -5 || exp >= digits as i32 {
        return sci;
    }
    let decimals = (digits as i32 - 1 - exp).max(0) as usize;
    format!("{value:.decimals$}")
}

/// Metric values in reports carry nine decimals.
fn fmt_metric(value: f64) -> String {
    format!("{value:.9}")
}

/// 17 significant digits, enough to round-trip any f64.
fn fmt_param(value: f64) -> String {
    format!("{value:.16e}")
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_f64(line: usize, key: &str, raw: &str) -> Result<f64, Error> {
    raw.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| parse_err(line, format!("`{key}` is not a finite number: `{raw}`")))
}

fn parse_list(line: usize, key: &str, raw: &str) -> Result<Vec<f64>, Error> {
    raw.split(',').map(|v| parse_f64(line, key, v)).collect()
}

pub fn format_metric_report(report: &MetricReport) -> String {
    let mut out = String::new();
    writeln!(out, "metric_kind={}", report.kind).unwrap();
    writeln!(out, "value={}", fmt_metric(report.value)).unwrap();
    writeln!(out, "sample_count={}", report.sample_count).unwrap();
    if let Some(per_class) = &report.per_class {
        let cells: Vec<String> = per_class
            .iter()
            .map(|v| v.map_or_else(|| "-".to_string(), fmt_metric))
            .collect();
        writeln!(out, "per_class={}", cells.join(",")).unwrap();
    }
    out
}

fn mask_token(mask: &MaskEcho) -> String {
    match *mask {
        MaskEcho::None => "none".into(),
        MaskEcho::Weights => "weights".into(),
        MaskEcho::Thresholded { tau, invert: false } => format!("threshold:{tau}"),
        MaskEcho::Thresholded { tau, invert: true } => format!("threshold-inverted:{tau}"),
    }
}

fn parse_mask_token(line: usize, raw: &str) -> Result<MaskEcho, Error> {
    match raw.split_once(':') {
        None if raw == "none" => Ok(MaskEcho::None),
        None if raw == "weights" => Ok(MaskEcho::Weights),
        Some((kind @ ("threshold" | "threshold-inverted"), tau)) => Ok(MaskEcho::Thresholded {
            tau: parse_f64(line, "mask", tau)?,
            invert: kind == "threshold-inverted",
        }),
        _ => Err(parse_err(line, format!("unknown mask `{raw}`"))),
    }
}

/// Rows block, then the per-sigma summary block.
pub fn format_table(table: &CalibrationTable) -> String {
    let echo = table.echo();
    let mut out = String::new();
    writeln!(
        out,
        "{TABLE_MARKER} metric={} mode={} trials={} base_seed={} delta={} mask={}",
        echo.metric,
        echo.mode,
        echo.trials,
        echo.base_seed,
        echo.delta,
        mask_token(&echo.mask)
    )
    .unwrap();
    writeln!(out, "{TABLE_HEADER}").unwrap();
    for row in table.rows() {
        writeln!(out, "{},{},{}", row.sigma, row.trial, format_sig(row.value, 9)).unwrap();
    }
    writeln!(out, "{SUMMARY_MARKER}").unwrap();
    out.push_str(&format_summary(table));
    out
}

/// The `sigma,mean,stddev` block on its own, for plotting tools.
pub fn format_summary(table: &CalibrationTable) -> String {
    let mut out = String::new();
    writeln!(out, "{SUMMARY_HEADER}").unwrap();
    for s in table.summary() {
        writeln!(out, "{},{},{}", s.sigma, format_sig(s.mean, 9), format_sig(s.stddev, 9)).unwrap();
    }
    out
}

/// Parses a table written by [`format_table`]; the summary block is
/// recomputed from the rows.
pub fn parse_table(text: &str) -> Result<CalibrationTable, Error> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end()));
    let (n, first) = lines.next().ok_or_else(|| parse_err(1, "empty table"))?;
    let echo_fields = first
        .strip_prefix(TABLE_MARKER)
        .ok_or_else(|| parse_err(n, format!("table must start with `{TABLE_MARKER}`")))?;
    let mut fields = HashMap::new();
    for token in echo_fields.split_whitespace() {
        let (k, v) = token
            .split_once('=')
            .ok_or_else(|| parse_err(n, format!("expected key=value, got `{token}`")))?;
        if fields.insert(k, v).is_some() {
            return Err(parse_err(n, format!("duplicate field `{k}`")));
        }
    }
    let mut take = |key: &str| {
        fields
            .remove(key)
            .ok_or_else(|| parse_err(n, format!("missing field `{key}`")))
    };
    let metric: MetricKind = take("metric")?.parse()?;
    let mode: PerturbationMode = take("mode")?.parse()?;
    let trials: u32 = take("trials")?
        .parse()
        .map_err(|_| parse_err(n, "bad trials"))?;
    let base_seed: u64 = take("base_seed")?
        .parse()
        .map_err(|_| parse_err(n, "bad base_seed"))?;
    let delta = parse_f64(n, "delta", take("delta")?)?;
    let mask = parse_mask_token(n, take("mask")?)?;
    if let Some(extra) = fields.keys().next() {
        return Err(parse_err(n, format!("unknown field `{extra}`")));
    }
    let echo = SweepEcho {
        metric,
        mode,
        trials,
        base_seed,
        delta,
        mask,
    };

    match lines.next() {
        Some((_, TABLE_HEADER)) => {}
        Some((n, other)) => return Err(parse_err(n, format!("expected `{TABLE_HEADER}`, got `{other}`"))),
        None => return Err(parse_err(n + 1, "missing header")),
    }
    let mut rows = Vec::new();
    for (n, line) in lines {
        if line == SUMMARY_MARKER {
            break;
        }
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        let [sigma, trial, value] = cells[..] else {
            return Err(parse_err(n, format!("expected 3 columns, got `{line}`")));
        };
        rows.push(CalibrationRow {
            sigma: parse_f64(n, "sigma", sigma)?,
            trial: trial.trim().parse().map_err(|_| parse_err(n, "bad trial index"))?,
            value: parse_f64(n, "metric_value", value)?,
        });
    }
    Ok(CalibrationTable::from_rows(echo, rows)?)
}

pub fn format_curve(curve: &UtilityCurve) -> String {
    let mut out = String::new();
    writeln!(out, "family={}", curve.family()).unwrap();
    match curve {
        UtilityCurve::Exp(fit) => {
            writeln!(out, "a={}", fmt_param(fit.a())).unwrap();
            writeln!(out, "b={}", fmt_param(fit.b())).unwrap();
            writeln!(out, "c={}", fmt_param(fit.c())).unwrap();
        }
        UtilityCurve::Isotonic(f) => {
            let join = |v: &[f64]| v.iter().map(|x| fmt_param(*x)).collect::<Vec<_>>().join(",");
            writeln!(out, "sigmas={}", join(f.sigmas())).unwrap();
            writeln!(out, "values={}", join(f.values())).unwrap();
        }
    }
    let (lo, hi) = curve.sigma_domain();
    writeln!(out, "rmse={}", fmt_param(curve.rmse())).unwrap();
    writeln!(out, "sigma_domain={},{}", fmt_param(lo), fmt_param(hi)).unwrap();
    writeln!(out, "metric_at_zero={}", fmt_param(curve.metric_at_zero())).unwrap();
    out
}

/// Parses `key=value` curve lines; `first_line` offsets reported line numbers
/// when the record is embedded in a larger file.
pub fn parse_curve_lines<'a>(
    lines: impl IntoIterator<Item = (usize, &'a str)>,
) -> Result<UtilityCurve, Error> {
    let mut fields: HashMap<&str, (usize, &str)> = HashMap::new();
    let mut last_line = 0;
    for (n, line) in lines {
        last_line = n;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| parse_err(n, format!("expected key=value, got `{line}`")))?;
        let k = k.trim();
        if fields.insert(k, (n, v.trim())).is_some() {
            return Err(parse_err(n, format!("duplicate field `{k}`")));
        }
    }
    let mut take = |key: &str| {
        fields
            .remove(key)
            .ok_or_else(|| parse_err(last_line, format!("missing field `{key}`")))
    };
    let (fl, family) = take("family")?;
    let (rl, rmse) = take("rmse")?;
    let rmse = parse_f64(rl, "rmse", rmse)?;
    let (dl, domain) = take("sigma_domain")?;
    let domain = parse_list(dl, "sigma_domain", domain)?;
    let [lo, sigma_max] = domain[..] else {
        return Err(parse_err(dl, "sigma_domain needs two values"));
    };
    if lo != 0.0 {
        return Err(parse_err(dl, "sigma_domain must start at 0"));
    }
    let (zl, at_zero) = take("metric_at_zero")?;
    let at_zero = parse_f64(zl, "metric_at_zero", at_zero)?;
    let curve = match family {
        "exp" => {
            let mut param = |k: &str| take(k).and_then(|(l, v)| parse_f64(l, k, v));
            let (a, b, c) = (param("a")?, param("b")?, param("c")?);
            UtilityCurve::Exp(DecayFit::with_rmse(a, b, c, rmse, sigma_max)?)
        }
        "isotonic" => {
            let (sl, sigmas) = take("sigmas")?;
            let (vl, values) = take("values")?;
            UtilityCurve::Isotonic(MonotoneInterpolant::new(
                parse_list(sl, "sigmas", sigmas)?,
                parse_list(vl, "values", values)?,
                rmse,
                sigma_max,
            )?)
        }
        other => return Err(parse_err(fl, format!("unknown family `{other}`"))),
    };
    if let Some((k, (l, _))) = fields.iter().next() {
        return Err(parse_err(*l, format!("unknown field `{k}`")));
    }
    if (curve.metric_at_zero() - at_zero).abs() > 1e-12 {
        return Err(parse_err(zl, "metric_at_zero disagrees with the parameters"));
    }
    Ok(curve)
}

pub fn parse_curve(text: &str) -> Result<UtilityCurve, Error> {
    parse_curve_lines(text.lines().enumerate().map(|(i, l)| (i + 1, l)))
}

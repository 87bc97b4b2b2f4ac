//! Lorenz curve, AULC, group biases and their variance around the median,
//! plus per-day/pooled aggregation and report rendering.
//!
//! All metrics rank records by prediction, descending, with ties broken by
//! ascending sample id, and split the ranking into `K` groups of equal count;
//! when `K` does not divide `n` the first `n mod K` groups get one extra
//! record.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::{Money, SampleId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionRecord {
    pub sample_id: SampleId,
    pub predicted: Money,
    pub actual: Money,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LorenzPoint {
    /// `k / K`.
    pub fraction: f64,
    /// Cumulative actual spend of the top `k` groups over total spend.
    pub share: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupBias {
    pub predicted_sum: Money,
    pub actual_sum: Money,
    pub bias: f64,
    /// The group has no actual spend; `bias` was computed against epsilon.
    pub zero_actual: bool,
}

fn validate(records: &[PredictionRecord]) -> Result<()> {
    for r in records {
        if !(r.predicted.is_finite() && r.actual.is_finite()) {
            return Err(Error::NonFinite(format!("record {}", r.sample_id)));
        }
        if r.predicted < 0.0 || r.actual < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "record {} has a negative value",
                r.sample_id
            )));
        }
    }
    Ok(())
}

/// Records in evaluation order.
pub fn rank(records: &[PredictionRecord]) -> Vec<PredictionRecord> {
    let mut sorted = records.to_vec();
    sorted.sort_by(|a, b| {
        b.predicted
            .total_cmp(&a.predicted)
            .then(a.sample_id.cmp(&b.sample_id))
    });
    sorted
}

pub fn group_sizes(n: usize, groups: usize) -> Vec<usize> {
    let (base, extra) = (n / groups, n % groups);
    (0..groups).map(|k| base + usize::from(k < extra)).collect()
}

fn check_groups(n: usize, groups: usize) -> Result<()> {
    if groups == 0 {
        return Err(Error::InvalidArgument(
            "group count must be positive".into(),
        ));
    }
    if n < groups {
        return Err(Error::InvalidArgument(format!(
            "{n} records cannot fill {groups} groups"
        )));
    }
    Ok(())
}

pub fn lorenz_curve(records: &[PredictionRecord], groups: usize) -> Result<Vec<LorenzPoint>> {
    validate(records)?;
    check_groups(records.len(), groups)?;
    // sums run over the ranked order so results do not depend on input order
    let ranked = rank(records);
    let total: f64 = ranked.iter().map(|r| r.actual).sum();
    if total <= 0.0 {
        return Err(Error::UndefinedMetric(
            "Lorenz curve needs positive total actual spend".into(),
        ));
    }
    let mut cum = 0.0;
    let mut start = 0;
    let mut points = Vec::with_capacity(groups);
    for (k, size) in group_sizes(ranked.len(), groups).into_iter().enumerate() {
        cum += ranked[start..start + size]
            .iter()
            .map(|r| r.actual)
            .sum::<f64>();
        start += size;
        points.push(LorenzPoint {
            fraction: (k + 1) as f64 / groups as f64,
            share: cum / total,
        });
    }
    // exact endpoint despite summation order
    if let Some(last) = points.last_mut() {
        last.share = 1.0;
    }
    Ok(points)
}

/// Area under the Lorenz curve: the mean of its `K` cumulative shares.
pub fn aulc(records: &[PredictionRecord], groups: usize) -> Result<f64> {
    let points = lorenz_curve(records, groups)?;
    Ok(points.iter().map(|p| p.share).sum::<f64>() / groups as f64)
}

/// Per-group relative bias `(sum predicted - sum actual) / max(sum actual, epsilon)`.
pub fn group_bias(
    records: &[PredictionRecord],
    groups: usize,
    epsilon: f64,
) -> Result<Vec<GroupBias>> {
    validate(records)?;
    check_groups(records.len(), groups)?;
    let ranked = rank(records);
    let mut start = 0;
    Ok(group_sizes(ranked.len(), groups)
        .into_iter()
        .map(|size| {
            let slice = &ranked[start..start + size];
            start += size;
            let predicted_sum: f64 = slice.iter().map(|r| r.predicted).sum();
            let actual_sum: f64 = slice.iter().map(|r| r.actual).sum();
            GroupBias {
                predicted_sum,
                actual_sum,
                bias: (predicted_sum - actual_sum) / actual_sum.max(epsilon),
                zero_actual: actual_sum <= 0.0,
            }
        })
        .collect())
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Mean squared deviation of the first `ceil(q K)` biases (highest
/// predictions first) around their median.
pub fn gbias_var(biases: &[f64], top_fraction: f64) -> Result<f64> {
    if !(top_fraction > 0.0 && top_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "top fraction {top_fraction} outside (0, 1]"
        )));
    }
    // tolerance keeps e.g. 0.8 * 10 from rounding up to 9
    let keep = ((top_fraction * biases.len() as f64) - 1e-9).ceil() as usize;
    let kept = &biases[..keep.min(biases.len())];
    if kept.is_empty() {
        return Err(Error::InvalidArgument(
            "no groups left after restriction".into(),
        ));
    }
    if kept.iter().any(|b| !b.is_finite()) {
        return Err(Error::NonFinite("group bias".into()));
    }
    let med = median(kept);
    Ok(kept.iter().map(|b| (b - med).powi(2)).sum::<f64>() / kept.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub lorenz_groups: usize,
    pub bias_groups: usize,
    pub top_fraction: f64,
    pub bias_epsilon: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            lorenz_groups: 100,
            bias_groups: 10,
            top_fraction: 0.8,
            bias_epsilon: 1e-9,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lorenz_groups == 0 {
            return Err(Error::config("lorenz_groups", "must be positive"));
        }
        if self.bias_groups == 0 {
            return Err(Error::config("bias_groups", "must be positive"));
        }
        if !(self.top_fraction > 0.0 && self.top_fraction <= 1.0) {
            return Err(Error::config("top_fraction", "must lie in (0, 1]"));
        }
        if self.bias_epsilon.is_nan() || self.bias_epsilon <= 0.0 {
            return Err(Error::config("bias_epsilon", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub n: usize,
    pub total_actual: Money,
    pub total_predicted: Money,
    /// `None` when total actual spend is zero or there are fewer records
    /// than Lorenz groups.
    pub aulc: Option<f64>,
    pub lorenz: Option<Vec<LorenzPoint>>,
    /// Lorenz curve of the same records ranked by actual spend.
    pub truth_lorenz: Option<Vec<LorenzPoint>>,
    pub groups: Vec<GroupBias>,
    pub gbias_var: f64,
    pub gbias_var_top: f64,
}

impl EvalReport {
    pub fn zero_actual_groups(&self) -> usize {
        self.groups.iter().filter(|g| g.zero_actual).count()
    }
}

pub fn evaluate(records: &[PredictionRecord], config: &EvalConfig) -> Result<EvalReport> {
    config.validate()?;
    validate(records)?;
    let ranked = rank(records);
    let total_actual: f64 = ranked.iter().map(|r| r.actual).sum();
    let total_predicted: f64 = ranked.iter().map(|r| r.predicted).sum();
    let defined = total_actual > 0.0 && records.len() >= config.lorenz_groups;
    let (lorenz, truth_lorenz) = if defined {
        let truth: Vec<PredictionRecord> = records
            .iter()
            .map(|r| PredictionRecord {
                predicted: r.actual,
                ..*r
            })
            .collect();
        (
            Some(lorenz_curve(records, config.lorenz_groups)?),
            Some(lorenz_curve(&truth, config.lorenz_groups)?),
        )
    } else {
        (None, None)
    };
    let aulc = lorenz
        .as_ref()
        .map(|pts| pts.iter().map(|p| p.share).sum::<f64>() / config.lorenz_groups as f64);
    let groups = group_bias(records, config.bias_groups, config.bias_epsilon)?;
    let biases: Vec<f64> = groups.iter().map(|g| g.bias).collect();
    Ok(EvalReport {
        n: records.len(),
        total_actual,
        total_predicted,
        aulc,
        lorenz,
        truth_lorenz,
        gbias_var: gbias_var(&biases, 1.0)?,
        gbias_var_top: gbias_var(&biases, config.top_fraction)?,
        groups,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RollingReport {
    pub days: Vec<(u32, EvalReport)>,
    /// Metrics over all evaluated records together.
    pub pooled: EvalReport,
    /// Mean of the per-day AULCs that are defined.
    pub mean_daily_aulc: Option<f64>,
}

pub fn rolling_report(
    days: &[(u32, Vec<PredictionRecord>)],
    config: &EvalConfig,
) -> Result<RollingReport> {
    if days.is_empty() {
        return Err(Error::InvalidArgument("no evaluated days".into()));
    }
    let mut reports = Vec::with_capacity(days.len());
    for (day, records) in days {
        let report = evaluate(records, config)?;
        if report.aulc.is_none() {
            log::warn!("day {day}: AULC undefined, excluded from the daily mean");
        }
        reports.push((*day, report));
    }
    let pooled_records: Vec<PredictionRecord> =
        days.iter().flat_map(|(_, r)| r.iter().copied()).collect();
    let pooled = evaluate(&pooled_records, config)?;
    let defined: Vec<f64> = reports.iter().filter_map(|(_, r)| r.aulc).collect();
    let mean_daily_aulc = if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    };
    Ok(RollingReport {
        days: reports,
        pooled,
        mean_daily_aulc,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| x.to_string())
}

/// `key=value` lines.
pub fn render_summary(model: &str, report: &RollingReport, config: &EvalConfig) -> String {
    let mut s = String::new();
    let p = &report.pooled;
    writeln!(s, "model={model}").unwrap();
    writeln!(s, "lorenz_groups={}", config.lorenz_groups).unwrap();
    writeln!(s, "bias_groups={}", config.bias_groups).unwrap();
    writeln!(s, "top_fraction={}", config.top_fraction).unwrap();
    writeln!(s, "days={}", report.days.len()).unwrap();
    writeln!(s, "pooled.n={}", p.n).unwrap();
    writeln!(s, "pooled.total_actual={}", p.total_actual).unwrap();
    writeln!(s, "pooled.total_predicted={}", p.total_predicted).unwrap();
    writeln!(s, "pooled.aulc={}", opt(p.aulc)).unwrap();
    writeln!(s, "pooled.gbias_var={}", p.gbias_var).unwrap();
    writeln!(s, "pooled.gbias_var_top={}", p.gbias_var_top).unwrap();
    writeln!(s, "pooled.zero_actual_groups={}", p.zero_actual_groups()).unwrap();
    writeln!(s, "mean_daily_aulc={}", opt(report.mean_daily_aulc)).unwrap();
    for (day, r) in &report.days {
        writeln!(s, "day.{day}.n={}", r.n).unwrap();
        writeln!(s, "day.{day}.aulc={}", opt(r.aulc)).unwrap();
        writeln!(s, "day.{day}.gbias_var={}", r.gbias_var).unwrap();
        writeln!(s, "day.{day}.gbias_var_top={}", r.gbias_var_top).unwrap();
    }
    s
}

pub fn render_lorenz_csv(report: &EvalReport) -> String {
    let mut s = String::from("fraction,share,truth_share\n");
    if let (Some(model), Some(truth)) = (&report.lorenz, &report.truth_lorenz) {
        for (m, t) in model.iter().zip(truth) {
            writeln!(s, "{},{},{}", m.fraction, m.share, t.share).unwrap();
        }
    }
    s
}

pub fn render_groups_csv(report: &EvalReport) -> String {
    let mut s = String::from("group,predicted_sum,actual_sum,bias,zero_actual\n");
    for (k, g) in report.groups.iter().enumerate() {
        writeln!(
            s,
            "{},{},{},{},{}",
            k + 1,
            g.predicted_sum,
            g.actual_sum,
            g.bias,
            g.zero_actual
        )
        .unwrap();
    }
    s
}

pub fn render_daily_csv(report: &RollingReport) -> String {
    let mut s = String::from("day,n,total_actual,total_predicted,aulc,gbias_var,gbias_var_top\n");
    for (day, r) in &report.days {
        writeln!(
            s,
            "{day},{},{},{},{},{},{}",
            r.n,
            r.total_actual,
            r.total_predicted,
            opt(r.aulc),
            r.gbias_var,
            r.gbias_var_top
        )
        .unwrap();
    }
    s
}

/// Comparison table with one row per model: AULC, GBiasVar and the top-q
/// GBiasVar of the pooled records.
pub fn render_comparison(rows: &[(String, EvalReport)], top_fraction: f64) -> String {
    let top = format!("GBiasVar (top {:.0}%)", top_fraction * 100.0);
    let mut s = String::new();
    writeln!(
        s,
        "{:<8} {:>8} {:>12} {:>22}",
        "Model", "AULC", "GBiasVar", top
    )
    .unwrap();
    for (name, r) in rows {
        let aulc = r
            .aulc
            .map_or_else(|| "undef".to_string(), |a| format!("{a:.4}"));
        writeln!(
            s,
            "{:<8} {:>8} {:>12} {:>22}",
            name,
            aulc,
            table_number(r.gbias_var),
            table_number(r.gbias_var_top)
        )
        .unwrap();
    }
    s
}

// Zero-actual deciles divide by the epsilon guard and can blow up to 1e20+.
fn table_number(x: f64) -> String {
    if x.abs() < 1e6 {
        format!("{x:.4}")
    } else {
        format!("{x:.3e}")
    }
}

pub fn render_comparison_csv(rows: &[(String, EvalReport)]) -> String {
    let mut s = String::from("model,aulc,gbias_var,gbias_var_top\n");
    for (name, r) in rows {
        writeln!(
            s,
            "{name},{},{},{}",
            opt(r.aulc),
            r.gbias_var,
            r.gbias_var_top
        )
        .unwrap();
    }
    s
}

const SVG_COLORS: [&str; 5] = ["#1b9e77", "#377eb8", "#ff7f00", "#984ea3", "#e41a1c"];

/// Standalone SVG plot of one or more Lorenz curves (share vs fraction of
/// samples, both in `[0, 1]`), with the diagonal of a random ranking.
pub fn render_lorenz_svg(curves: &[(String, Vec<LorenzPoint>)]) -> String {
    const W: f64 = 480.0;
    const H: f64 = 400.0;
    const PAD: f64 = 48.0;
    let x = |f: f64| PAD + f * (W - 2.0 * PAD);
    let y = |f: f64| H - PAD - f * (H - 2.0 * PAD);
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r##"<path d="M{} {} H{} M{} {} V{}" stroke="#333" fill="none"/>"##,
        x(0.0),
        y(0.0),
        x(1.0),
        x(0.0),
        y(0.0),
        y(1.0)
    )
    .unwrap();
    for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
        writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{t}</text><text x="{}" y="{}" text-anchor="end">{t}</text>"#,
            x(t),
            y(0.0) + 16.0,
            x(0.0) - 6.0,
            y(t) + 4.0
        )
        .unwrap();
    }
    writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">fraction of samples (ranked by prediction)</text>"#,
        W / 2.0,
        H - 10.0
    )
    .unwrap();
    writeln!(
        s,
        r#"<text transform="translate(14 {}) rotate(-90)" text-anchor="middle">share of total spend</text>"#,
        H / 2.0
    )
    .unwrap();
    writeln!(
        s,
        r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#aaa" stroke-dasharray="4 4"/>"##,
        x(0.0),
        y(0.0),
        x(1.0),
        y(1.0)
    )
    .unwrap();
    for (i, (name, points)) in curves.iter().enumerate() {
        let color = SVG_COLORS[i % SVG_COLORS.len()];
        let mut d = format!("M{:.2} {:.2}", x(0.0), y(0.0));
        for p in points {
            write!(d, " L{:.2} {:.2}", x(p.fraction), y(p.share)).unwrap();
        }
        writeln!(
            s,
            r#"<path d="{d}" stroke="{color}" stroke-width="2" fill="none"/>"#
        )
        .unwrap();
        let ly = y(0.3) - 16.0 * i as f64;
        writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            x(0.62),
            x(0.68),
            x(0.70),
            ly + 4.0,
            xml_escape(name)
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

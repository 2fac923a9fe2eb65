//! Report files: JSON, a table-style CSV and an SVG box plot.

use std::fmt::Write as _;

use super::ExperimentReport;
use crate::error::Result;
use crate::model::HeadKind;

pub fn to_json(report: &ExperimentReport) -> Result<String> {
    let mut s = serde_json::to_string_pretty(report)?;
    s.push('\n');
    Ok(s)
}

pub fn from_json(text: &str) -> Result<ExperimentReport> {
    Ok(serde_json::from_str(text)?)
}

/// Accuracy as a percentage with two decimals, RMSE with three.
pub fn format_metric(task: HeadKind, value: f64) -> String {
    match task {
        HeadKind::Classify4 => format!("{:.2}", 100.0 * value),
        HeadKind::Regress2 => format!("{:.3}", value),
    }
}

/// `subset,n_channels,fold1..foldk,mean`, one row per report. Rows with
/// fewer folds leave the extra columns empty.
pub fn to_csv(reports: &[ExperimentReport]) -> String {
    let k = reports.iter().map(|r| r.fold_metrics.len()).max().unwrap_or(0);
    let mut out = String::from("subset,n_channels");
    for i in 1..=k {
        let _ = write!(out, ",fold{i}");
    }
    out.push_str(",mean\n");
    for r in reports {
        let _ = write!(out, "{},{}", r.subset, r.n_channels);
        for i in 0..k {
            out.push(',');
            if let Some(&m) = r.fold_metrics.get(i) {
                out.push_str(&format_metric(r.task, m));
            }
        }
        let _ = writeln!(out, ",{}", format_metric(r.task, r.mean));
    }
    out
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

pub fn box_stats(values: &[f64]) -> BoxStats {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    BoxStats {
        min: quantile(&v, 0.0),
        q1: quantile(&v, 0.25),
        median: quantile(&v, 0.5),
        q3: quantile(&v, 0.75),
        max: quantile(&v, 1.0),
        mean: values.iter().sum::<f64>() / values.len() as f64,
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// One box per report over its fold metrics, best first, with the mean
/// marked and a dashed line at the relevance threshold. All reports should
/// share a task; the first one decides the axis.
pub fn boxplot_svg(reports: &[ExperimentReport]) -> String {
    let task = reports.first().map(|r| r.task).unwrap_or(HeadKind::Classify4);
    let mut order: Vec<&ExperimentReport> = reports.iter().collect();
    match task {
        HeadKind::Classify4 => order.sort_by(|a, b| b.mean.total_cmp(&a.mean)),
        HeadKind::Regress2 => order.sort_by(|a, b| a.mean.total_cmp(&b.mean)),
    }
    let scale = if task == HeadKind::Classify4 { 100.0 } else { 1.0 };
    let threshold = super::relevance_threshold(task) * scale;
    let y_max = match task {
        HeadKind::Classify4 => 100.0,
        HeadKind::Regress2 => {
            let top = reports
                .iter()
                .flat_map(|r| r.fold_metrics.iter().copied())
                .fold(threshold, f64::max);
            (top * 1.1 * 2.0).ceil() / 2.0
        }
    };

    let (left, right, top, bottom) = (70.0, 20.0, 30.0, 110.0);
    let slot = 70.0;
    let plot_h = 300.0;
    let width = left + right + slot * order.len().max(1) as f64;
    let height = top + plot_h + bottom;
    let y = |v: f64| top + plot_h * (1.0 - v / y_max);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    let label = match task {
        HeadKind::Classify4 => "Accuracy (%)",
        HeadKind::Regress2 => "RMSE",
    };
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" transform="rotate(-90 14 {:.1})" text-anchor="middle">{label}</text>"#,
        top + plot_h / 2.0,
        top + plot_h / 2.0
    );
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{:.1}" stroke="black"/>"#,
        top + plot_h
    );
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/>"#,
        top + plot_h,
        width - right,
        top + plot_h
    );
    for i in 0..=5 {
        let v = y_max * i as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{:.1}" x2="{left}" y2="{:.1}" stroke="black"/><text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            left - 4.0,
            y(v),
            y(v),
            left - 6.0,
            y(v) + 4.0,
            format_tick(v)
        );
    }

    for (i, r) in order.iter().enumerate() {
        if r.fold_metrics.is_empty() {
            continue;
        }
        let scaled: Vec<f64> = r.fold_metrics.iter().map(|m| m * scale).collect();
        let b = box_stats(&scaled);
        let cx = left + slot * (i as f64 + 0.5);
        let half = slot * 0.3;
        let _ = writeln!(
            s,
            r#"<line x1="{cx:.1}" y1="{:.1}" x2="{cx:.1}" y2="{:.1}" stroke="black"/>"#,
            y(b.max),
            y(b.q3)
        );
        let _ = writeln!(
            s,
            r#"<line x1="{cx:.1}" y1="{:.1}" x2="{cx:.1}" y2="{:.1}" stroke="black"/>"#,
            y(b.q1),
            y(b.min)
        );
        for v in [b.min, b.max] {
            let _ = writeln!(
                s,
                r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/>"#,
                cx - half / 2.0,
                y(v),
                cx + half / 2.0,
                y(v)
            );
        }
        let _ = writeln!(
            s,
            r##"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="#9ecae1" stroke="black"/>"##,
            cx - half,
            y(b.q3),
            2.0 * half,
            (y(b.q1) - y(b.q3)).max(0.5)
        );
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black" stroke-width="2"/>"#,
            cx - half,
            y(b.median),
            cx + half,
            y(b.median)
        );
        let _ = writeln!(
            s,
            r#"<path d="M {:.1} {:.1} l 5 -8 l -10 0 z" fill="green"/>"#,
            cx,
            y(b.mean) + 4.0
        );
        let _ = writeln!(
            s,
            r#"<text transform="translate({:.1} {:.1}) rotate(-45)" text-anchor="end">{} ({})</text>"#,
            cx + 4.0,
            top + plot_h + 14.0,
            escape(&r.subset),
            format_metric(r.task, r.mean)
        );
    }
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="red" stroke-dasharray="6 4"/>"#,
        y(threshold),
        width - right,
        y(threshold)
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="end" fill="red">threshold {}</text>"#,
        width - right,
        y(threshold) - 4.0,
        format_tick(threshold)
    );
    s.push_str("</svg>\n");
    s
}

fn format_tick(v: f64) -> String {
    let s = format!("{v:.4}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

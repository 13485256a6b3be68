//! CSV and aligned-markdown renderings of metrics tables.

use std::path::Path;

use crate::error::{HarnessError, Result};
use crate::metrics::MetricsRow;

/// Fixed column order of a metrics CSV.
pub const METRICS_COLUMNS: [&str; 9] = [
    "train_views",
    "signers",
    "test_view",
    "variant",
    "top1_mean",
    "top1_std",
    "top3_mean",
    "top3_std",
    "n_folds",
];

pub fn write_metrics_csv(rows: &[MetricsRow], path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| HarnessError::csv(path, e))?;
    w.write_record(METRICS_COLUMNS)
        .map_err(|e| HarnessError::csv(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| HarnessError::csv(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| HarnessError::csv(path, e))?;
    let headers = r.headers().map_err(|e| HarnessError::csv(path, e))?;
    if headers.iter().collect::<Vec<_>>() != METRICS_COLUMNS {
        return Err(HarnessError::InvalidArgument(format!(
            "{}: expected columns {}",
            path.display(),
            METRICS_COLUMNS.join(",")
        )));
    }
    r.deserialize()
        .collect::<std::result::Result<Vec<MetricsRow>, _>>()
        .map_err(|e| HarnessError::csv(path, e))
}

/// A metrics row plus its Top-1 gain over the matching baseline row.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub row: MetricsRow,
    pub gain: Option<f64>,
}

/// Attaches `invariant - baseline` Top-1 to every invariant row whose
/// (train_views, signers, test_view) has a baseline counterpart.
pub fn with_gains(rows: &[MetricsRow]) -> Vec<ReportRow> {
    rows.iter()
        .map(|r| {
            let gain = (r.variant == "invariant")
                .then(|| {
                    rows.iter().find(|b| {
                        b.variant == "baseline"
                            && b.train_views == r.train_views
                            && b.signers == r.signers
                            && b.test_view == r.test_view
                    })
                })
                .flatten()
                .map(|b| r.top1_mean - b.top1_mean);
            ReportRow {
                row: r.clone(),
                gain,
            }
        })
        .collect()
}

/// Two-decimal signed gain without the leading zero, e.g. `+.08`, `-.13`.
pub fn format_gain(g: f64) -> String {
    let body = format!("{:.2}", g.abs());
    let body = body.strip_prefix('0').unwrap_or(&body);
    let sign = if g < 0.0 && body != ".00" { '-' } else { '+' };
    format!("{sign}{body}")
}

fn cells(rows: &[ReportRow]) -> (Vec<&'static str>, Vec<Vec<String>>) {
    let show_gain = rows.iter().any(|r| r.gain.is_some());
    let mut header = vec![
        "train_views",
        "signers",
        "test_view",
        "variant",
        "top1",
        "top3",
        "n_folds",
    ];
    if show_gain {
        header.push("gain");
    }
    let body = rows
        .iter()
        .map(|r| {
            let m = &r.row;
            let mut line = vec![
                m.train_views.clone(),
                m.signers.clone(),
                m.test_view.clone(),
                m.variant.clone(),
                format!("{:.3} ± {:.3}", m.top1_mean, m.top1_std),
                format!("{:.3} ± {:.3}", m.top3_mean, m.top3_std),
                m.n_folds.to_string(),
            ];
            if show_gain {
                line.push(r.gain.map(format_gain).unwrap_or_default());
            }
            line
        })
        .collect();
    (header, body)
}

/// Markdown table with every column padded to its widest cell.
pub fn render_markdown(rows: &[MetricsRow]) -> String {
    let (header, body) = cells(&with_gains(rows));
    let mut width: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for line in &body {
        for (w, c) in width.iter_mut().zip(line) {
            *w = (*w).max(c.chars().count());
        }
    }
    let fmt_line = |items: Vec<String>| {
        let padded: Vec<String> = items
            .iter()
            .zip(&width)
            .map(|(c, &w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        format!("| {} |\n", padded.join(" | "))
    };
    let mut out = fmt_line(header.iter().map(|h| h.to_string()).collect());
    out.push_str(&format!(
        "|{}|\n",
        width
            .iter()
            .map(|&w| "-".repeat(w + 2))
            .collect::<Vec<_>>()
            .join("|")
    ));
    for line in body {
        out.push_str(&fmt_line(line));
    }
    out
}

/// Writes `{stem}.csv` (metrics columns, plus `top1_gain` when any row has
/// one) and `{stem}.md` into `dir`.
pub fn write_report(rows: &[MetricsRow], dir: &Path, stem: &str) -> Result<()> {
    if rows.is_empty() {
        return Err(HarnessError::InvalidArgument(
            "report needs at least one row".into(),
        ));
    }
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let csv_path = dir.join(format!("{stem}.csv"));
    let report = with_gains(rows);
    let show_gain = report.iter().any(|r| r.gain.is_some());
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| HarnessError::csv(&csv_path, e))?;
    let mut header: Vec<&str> = METRICS_COLUMNS.to_vec();
    if show_gain {
        header.push("top1_gain");
    }
    w.write_record(&header)
        .map_err(|e| HarnessError::csv(&csv_path, e))?;
    for r in &report {
        let m = &r.row;
        let mut rec = vec![
            m.train_views.clone(),
            m.signers.clone(),
            m.test_view.clone(),
            m.variant.clone(),
            m.top1_mean.to_string(),
            m.top1_std.to_string(),
            m.top3_mean.to_string(),
            m.top3_std.to_string(),
            m.n_folds.to_string(),
        ];
        if show_gain {
            rec.push(r.gain.map(format_gain).unwrap_or_default());
        }
        w.write_record(&rec)
            .map_err(|e| HarnessError::csv(&csv_path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(&csv_path, e))?;
    let md_path = dir.join(format!("{stem}.md"));
    std::fs::write(&md_path, render_markdown(rows)).map_err(|e| HarnessError::io(&md_path, e))
}

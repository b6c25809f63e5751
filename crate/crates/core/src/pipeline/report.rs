use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{paths, EvaluationReport, PipelineError};
use crate::data::CohortLabel;
use crate::influence::Method;
use crate::metrics::PopPositionBin;
use crate::util::atomic_write;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Svg,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "svg" => Ok(ReportFormat::Svg),
            other => Err(format!("unknown report format {other:?}")),
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

const COHORTS: [CohortLabel; 2] = [CohortLabel::Niche, CohortLabel::Blockbuster];

/// One row per (cohort, method) present in the report.
pub fn table_csv(report: &EvaluationReport) -> String {
    let mut out = String::from("dataset,cohort,method,pds,epd,no_cf_rate,p_value_vs_accent\n");
    for cohort in COHORTS {
        for method in Method::ALL {
            let Some(r) = report.report(method, Some(cohort)) else {
                continue;
            };
            let p = report.comparison(method, Some(cohort)).and_then(|c| c.test).map(|t| t.p_value);
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                report.dataset,
                cohort,
                method,
                opt(r.pds),
                opt(r.epd),
                r.no_cf_rate,
                opt(p)
            )
            .expect("string write");
        }
    }
    out
}

pub fn fig_bins_csv(bins: &[PopPositionBin]) -> String {
    let mut out = String::from("cohort,bin,method,x,y\n");
    for b in bins {
        writeln!(
            out,
            "{},{},{},{},{}",
            b.cohort, b.bin_index, b.method, b.mean_normalized_position, b.mean_cf_popularity
        )
        .expect("string write");
    }
    out
}

fn method_color(m: Method) -> &'static str {
    match m {
        Method::Accent => "#1f77b4",
        Method::AccentFiltered => "#d62728",
        Method::TopPopular => "#7f7f7f",
    }
}

/// Two panels (niche, blockbuster) of mean explanation popularity against
/// mean normalized history position, one point per bin and method. Points of
/// the same bin are joined from accent to the filtered method.
pub fn svg_scatter(bins: &[PopPositionBin]) -> String {
    const W: f64 = 360.0;
    const H: f64 = 300.0;
    const PAD: f64 = 40.0;
    let y_max = bins.iter().map(|b| b.mean_cf_popularity).fold(0.0f64, f64::max).max(1e-9) * 1.1;
    let mut svg = String::new();
    writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" font-family=\"sans-serif\" font-size=\"11\">",
        2.0 * W,
        H + 30.0
    )
    .expect("string write");
    for (panel, cohort) in COHORTS.iter().enumerate() {
        let ox = panel as f64 * W;
        let px = |x: f64| ox + PAD + x * (W - 2.0 * PAD);
        let py = |y: f64| H - PAD - (y / y_max) * (H - 2.0 * PAD);
        writeln!(
            svg,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"none\" stroke=\"#000\"/>",
            px(0.0),
            py(y_max),
            W - 2.0 * PAD,
            H - 2.0 * PAD
        )
        .expect("string write");
        writeln!(svg, "<text x=\"{:.2}\" y=\"20\">{cohort}</text>", ox + PAD).expect("string write");
        writeln!(svg, "<text x=\"{:.2}\" y=\"{:.2}\">mean normalized position</text>", ox + PAD, H - 12.0)
            .expect("string write");
        let panel_bins: Vec<&PopPositionBin> = bins.iter().filter(|b| b.cohort == *cohort).collect();
        for a in panel_bins.iter().filter(|b| b.method == Method::Accent) {
            if let Some(f) =
                panel_bins.iter().find(|b| b.method == Method::AccentFiltered && b.bin_index == a.bin_index)
            {
                writeln!(
                    svg,
                    "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#999\"/>",
                    px(a.mean_normalized_position),
                    py(a.mean_cf_popularity),
                    px(f.mean_normalized_position),
                    py(f.mean_cf_popularity)
                )
                .expect("string write");
            }
        }
        for b in panel_bins.iter().filter(|b| b.method != Method::TopPopular) {
            writeln!(
                svg,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{}\"><title>{} bin {}</title></circle>",
                px(b.mean_normalized_position),
                py(b.mean_cf_popularity),
                method_color(b.method),
                b.method,
                b.bin_index
            )
            .expect("string write");
        }
    }
    for (k, m) in [Method::Accent, Method::AccentFiltered].iter().enumerate() {
        let x = PAD + k as f64 * 140.0;
        writeln!(
            svg,
            "<circle cx=\"{x:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"{}\"/><text x=\"{:.2}\" y=\"{:.2}\">{m}</text>",
            H + 15.0,
            method_color(*m),
            x + 8.0,
            H + 19.0
        )
        .expect("string write");
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes the requested formats under `dir`; returns the relative paths.
pub fn emit_report(
    report: &EvaluationReport,
    dir: &Path,
    formats: &[ReportFormat],
) -> Result<Vec<String>, PipelineError> {
    let mut written = Vec::new();
    let mut put = |rel: &str, text: String| -> Result<(), PipelineError> {
        let path = dir.join(rel);
        atomic_write(&path, text.as_bytes()).map_err(|e| PipelineError::io(&path, e))?;
        written.push(rel.to_string());
        Ok(())
    };
    if formats.contains(&ReportFormat::Csv) {
        put(paths::TABLE, table_csv(report))?;
        put(paths::FIG_BINS, fig_bins_csv(&report.fig_bins))?;
    }
    if formats.contains(&ReportFormat::Svg) {
        put(paths::FIG_SVG, svg_scatter(&report.fig_bins))?;
    }
    Ok(written)
}

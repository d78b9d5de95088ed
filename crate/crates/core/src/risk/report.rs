//! Report files: comma-separated and JSON forms of every table, plus a
//! grouped bar chart for the admissions histogram. Byte-stable for
//! identical inputs.

use super::tables::{AdmissionsHistogram, RiskTable, TrendCell, TrendMatrix};
use super::RiskError;
use serde::Serialize;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Default, Serialize)]
pub struct ReportMeta {
    pub version: String,
    pub seed: Option<u64>,
    /// (name, sha256) per input file.
    pub inputs: Vec<(String, String)>,
}

impl ReportMeta {
    pub fn new(seed: Option<u64>) -> Self {
        ReportMeta {
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            inputs: Vec::new(),
        }
    }

    fn header_lines(&self) -> String {
        let mut s = String::new();
        writeln!(s, "# generated-by: hutil {}", self.version).unwrap();
        if let Some(seed) = self.seed {
            writeln!(s, "# seed: {seed}").unwrap();
        }
        for (name, digest) in &self.inputs {
            writeln!(s, "# input: {name} sha256={digest}").unwrap();
        }
        s
    }
}

#[derive(Debug, Default)]
pub struct ReportBundle<'a> {
    pub risk: Option<&'a RiskTable>,
    pub trend: Option<&'a TrendMatrix>,
    pub histogram: Option<&'a AdmissionsHistogram>,
    /// Socio-economic model, same row shape as the main risk table.
    pub socio: Option<&'a RiskTable>,
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.2}"),
        None => "N/A".to_string(),
    }
}

fn risk_csv(table: &RiskTable, meta: &ReportMeta) -> String {
    let mut s = meta.header_lines();
    writeln!(
        s,
        "# analysis-rows: {} cases: {} bootstrap: {} skipped-replicates: {}",
        table.n_analysis, table.n_cases, table.bootstrap_b, table.skipped_replicates
    )
    .unwrap();
    writeln!(
        s,
        "characteristic,level,prevalence_pct,rr,ci_low,ci_high,significant"
    )
    .unwrap();
    for row in &table.rows {
        let rr = if row.referent {
            "1.00".to_string()
        } else {
            format!("{:.2}", row.rr)
        };
        writeln!(
            s,
            "{},{},{},{},{},{},{}",
            row.characteristic,
            row.level.as_deref().unwrap_or("N/A"),
            fmt_opt(row.prevalence_pct),
            rr,
            fmt_opt(row.ci_low),
            fmt_opt(row.ci_high),
            if row.starred { "*" } else { "" }
        )
        .unwrap();
    }
    s
}

fn trend_csv(matrix: &TrendMatrix, meta: &ReportMeta) -> String {
    let mut s = meta.header_lines();
    writeln!(s, "characteristic,{}", matrix.cycles.join(",")).unwrap();
    for (i, name) in matrix.characteristics.iter().enumerate() {
        let cells: Vec<&str> = matrix.cells[i]
            .iter()
            .map(|c| match c {
                TrendCell::Significant => "x",
                TrendCell::NotSignificant => "",
                TrendCell::NotAvailable => "n/a",
            })
            .collect();
        writeln!(s, "{name},{}", cells.join(",")).unwrap();
    }
    s
}

fn histogram_csv(hist: &AdmissionsHistogram, meta: &ReportMeta) -> String {
    let mut s = meta.header_lines();
    writeln!(s, "# variable: {}", hist.variable).unwrap();
    let bands: Vec<String> = hist.bands.iter().map(|b| b.label()).collect();
    writeln!(s, "cycle,{}", bands.join(",")).unwrap();
    for (i, cycle) in hist.cycles.iter().enumerate() {
        let counts: Vec<String> = hist.counts[i].iter().map(|c| c.to_string()).collect();
        writeln!(s, "{cycle},{}", counts.join(",")).unwrap();
    }
    s
}

/// Grouped bar chart: one group per cycle, one bar per band.
fn histogram_svg(hist: &AdmissionsHistogram, meta: &ReportMeta) -> String {
    const WIDTH: f64 = 640.0;
    const HEIGHT: f64 = 400.0;
    const MARGIN_LEFT: f64 = 60.0;
    const MARGIN_BOTTOM: f64 = 60.0;
    const MARGIN_TOP: f64 = 30.0;
    let plot_w = WIDTH - MARGIN_LEFT - 20.0;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let palette = ["#4878a8", "#c05046", "#6aa66a", "#8a6db0"];

    let max_count = hist
        .counts
        .iter()
        .flatten()
        .copied()
        .max()
        .unwrap_or(0)
        .max(1) as f64;
    let n_groups = hist.cycles.len().max(1) as f64;
    let n_bands = hist.bands.len().max(1) as f64;
    let group_w = plot_w / n_groups;
    let bar_w = group_w * 0.8 / n_bands;

    let mut s = String::new();
    writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    )
    .unwrap();
    writeln!(s, "<desc>").unwrap();
    for line in meta.header_lines().lines() {
        writeln!(s, "{}", line.trim_start_matches("# ")).unwrap();
    }
    writeln!(s, "admissions per 12 months, variable {}", hist.variable).unwrap();
    writeln!(s, "</desc>").unwrap();
    writeln!(
        s,
        "<rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>"
    )
    .unwrap();
    // Axes.
    writeln!(
        s,
        "<line x1=\"{MARGIN_LEFT}\" y1=\"{MARGIN_TOP}\" x2=\"{MARGIN_LEFT}\" y2=\"{:.2}\" stroke=\"black\"/>",
        MARGIN_TOP + plot_h
    )
    .unwrap();
    writeln!(
        s,
        "<line x1=\"{MARGIN_LEFT}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"black\"/>",
        MARGIN_TOP + plot_h,
        MARGIN_LEFT + plot_w,
        MARGIN_TOP + plot_h
    )
    .unwrap();

    for (g, cycle) in hist.cycles.iter().enumerate() {
        let group_x = MARGIN_LEFT + g as f64 * group_w + group_w * 0.1;
        for (b, _) in hist.bands.iter().enumerate() {
            let count = hist.counts[g][b] as f64;
            let h = plot_h * count / max_count;
            let x = group_x + b as f64 * bar_w;
            let y = MARGIN_TOP + plot_h - h;
            writeln!(
                s,
                "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{:.2}\" height=\"{h:.2}\" fill=\"{}\"/>",
                bar_w * 0.9,
                palette[b % palette.len()]
            )
            .unwrap();
            writeln!(
                s,
                "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" text-anchor=\"middle\">{}</text>",
                x + bar_w * 0.45,
                y - 4.0,
                hist.counts[g][b]
            )
            .unwrap();
        }
        writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\">{cycle}</text>",
            group_x + group_w * 0.4,
            MARGIN_TOP + plot_h + 18.0
        )
        .unwrap();
    }
    // Legend.
    for (b, band) in hist.bands.iter().enumerate() {
        let y = MARGIN_TOP + 14.0 * b as f64;
        writeln!(
            s,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"10\" height=\"10\" fill=\"{}\"/>",
            MARGIN_LEFT + plot_w - 90.0,
            y,
            palette[b % palette.len()]
        )
        .unwrap();
        writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\">{}</text>",
            MARGIN_LEFT + plot_w - 76.0,
            y + 9.0,
            band.label()
        )
        .unwrap();
    }
    writeln!(
        s,
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\">Admissions per 12 months</text>",
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 16.0
    )
    .unwrap();
    writeln!(s, "</svg>").unwrap();
    s
}

#[derive(Serialize)]
struct JsonEnvelope<'a, T: Serialize> {
    meta: &'a ReportMeta,
    data: &'a T,
}

fn write_json<T: Serialize>(
    path: &Path,
    meta: &ReportMeta,
    data: &T,
) -> Result<(), RiskError> {
    let envelope = JsonEnvelope { meta, data };
    let mut text = serde_json::to_string_pretty(&envelope).expect("serializable report");
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Writes every present artifact under `dir` and returns the paths.
pub fn emit_report(
    dir: &Path,
    bundle: &ReportBundle<'_>,
    meta: &ReportMeta,
) -> Result<Vec<PathBuf>, RiskError> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    if let Some(risk) = bundle.risk {
        let csv_path = dir.join("risk_table.csv");
        std::fs::write(&csv_path, risk_csv(risk, meta))?;
        written.push(csv_path);
        let json_path = dir.join("risk_table.json");
        write_json(&json_path, meta, risk)?;
        written.push(json_path);
    }
    if let Some(trend) = bundle.trend {
        let csv_path = dir.join("trend.csv");
        std::fs::write(&csv_path, trend_csv(trend, meta))?;
        written.push(csv_path);
        let json_path = dir.join("trend.json");
        write_json(&json_path, meta, trend)?;
        written.push(json_path);
    }
    if let Some(hist) = bundle.histogram {
        let csv_path = dir.join("admissions.csv");
        std::fs::write(&csv_path, histogram_csv(hist, meta))?;
        written.push(csv_path);
        let json_path = dir.join("admissions.json");
        write_json(&json_path, meta, hist)?;
        written.push(json_path);
        let svg_path = dir.join("admissions.svg");
        std::fs::write(&svg_path, histogram_svg(hist, meta))?;
        written.push(svg_path);
    }
    if let Some(socio) = bundle.socio {
        let csv_path = dir.join("socio.csv");
        std::fs::write(&csv_path, risk_csv(socio, meta))?;
        written.push(csv_path);
        let json_path = dir.join("socio.json");
        write_json(&json_path, meta, socio)?;
        written.push(json_path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::risk::tables::{Band, RiskRow};

    fn sample_risk() -> RiskTable {
        RiskTable {
            rows: vec![
                RiskRow {
                    characteristic: "AGE_BAND".to_string(),
                    level: Some("0-17".to_string()),
                    prevalence_pct: Some(32.55),
                    rr: 1.0,
                    ci_low: None,
                    ci_high: None,
                    starred: false,
                    referent: true,
                },
                RiskRow {
                    characteristic: "AGE_BAND".to_string(),
                    level: Some("60+".to_string()),
                    prevalence_pct: Some(31.91),
                    rr: 1.56,
                    ci_low: Some(1.28),
                    ci_high: Some(1.90),
                    starred: true,
                    referent: false,
                },
            ],
            n_analysis: 9000,
            n_cases: 1200,
            bootstrap_b: 1000,
            skipped_replicates: 0,
            seed: 1999,
        }
    }

    fn sample_hist() -> AdmissionsHistogram {
        AdmissionsHistogram {
            cycles: vec!["2013-2014".to_string(), "2015-2016".to_string()],
            bands: vec![
                Band {
                    low: 4.0,
                    high: Some(9.0),
                },
                Band {
                    low: 10.0,
                    high: None,
                },
            ],
            counts: vec![vec![120, 20], vec![150, 25]],
            variable: "HUQ050".to_string(),
        }
    }

    #[test]
    fn risk_csv_has_header_and_rows() {
        let meta = ReportMeta::new(Some(1999));
        let text = risk_csv(&sample_risk(), &meta);
        let data_lines: Vec<&str> = text
            .lines()
            .filter(|l| !l.starts_with('#'))
            .collect();
        assert_eq!(data_lines.len(), 3);
        assert!(data_lines[0].starts_with("characteristic,level"));
        assert!(data_lines[1].contains("1.00"));
        assert!(data_lines[2].contains("1.56"));
        assert!(data_lines[2].ends_with("*"));
    }

    #[test]
    fn svg_has_a_bar_per_cycle_band_pair() {
        let meta = ReportMeta::new(None);
        let svg = histogram_svg(&sample_hist(), &meta);
        let bars = svg
            .lines()
            .filter(|l| l.starts_with("<rect") && !l.contains("fill=\"white\""))
            .count();
        // 4 data bars + 2 legend swatches.
        assert_eq!(bars, 6);
        // Bar heights are proportional to counts: 150 is the maximum.
        assert!(svg.contains(">150<"));
    }

    #[test]
    fn identical_inputs_are_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let risk = sample_risk();
        let hist = sample_hist();
        let meta = ReportMeta::new(Some(7));
        let bundle = ReportBundle {
            risk: Some(&risk),
            trend: None,
            histogram: Some(&hist),
            socio: Some(&risk),
        };
        let first = emit_report(&dir.path().join("a"), &bundle, &meta).unwrap();
        let second = emit_report(&dir.path().join("b"), &bundle, &meta).unwrap();
        assert_eq!(first.len(), second.len());
        for (a, b) in first.iter().zip(&second) {
            assert_eq!(
                std::fs::read(a).unwrap(),
                std::fs::read(b).unwrap(),
                "{a:?} vs {b:?}"
            );
        }
    }
}

//! Deviation statistics, comparison tables and voltage-profile plots.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no voltage entries to summarize")]
    Empty,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Malformed { path: PathBuf, message: String },
}

/// Deviation from 1.0 pu aggregated over every (scenario, bus) entry.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviationStats {
    /// Mean |v - 1| in percent.
    pub avg_abs_deviation: f64,
    /// Thresholds as fractions of 1 pu, ascending.
    pub thresholds: Vec<f64>,
    /// Percent of entries with |v - 1| strictly above each threshold.
    pub exceed_rates: Vec<f64>,
    pub n_entries: usize,
}

impl DeviationStats {
    pub fn rate_above(&self, threshold: f64) -> Option<f64> {
        self.thresholds
            .iter()
            .position(|&t| t == threshold)
            .map(|i| self.exceed_rates[i])
    }
}

/// Summarizes a scenarios × buses voltage matrix.
pub fn compute_stats(voltages: &[Vec<f64>], thresholds: &[f64]) -> Result<DeviationStats, ReportError> {
    let mut thresholds = thresholds.to_vec();
    thresholds.sort_by(f64::total_cmp);
    let mut n = 0usize;
    let mut sum = 0.0;
    let mut counts = vec![0usize; thresholds.len()];
    for v in voltages.iter().flatten() {
        let d = (v - 1.0).abs();
        n += 1;
        sum += d;
        for (c, &t) in counts.iter_mut().zip(&thresholds) {
            if d > t {
                *c += 1;
            }
        }
    }
    if n == 0 {
        return Err(ReportError::Empty);
    }
    let stats = DeviationStats {
        avg_abs_deviation: 100.0 * sum / n as f64,
        exceed_rates: counts.iter().map(|&c| 100.0 * c as f64 / n as f64).collect(),
        thresholds,
        n_entries: n,
    };
    debug_assert!(stats.exceed_rates.windows(2).all(|w| w[0] >= w[1]));
    Ok(stats)
}

/// Percent with two decimals; exact ties round to even.
pub fn format_percent(value: f64) -> String {
    format!("{value:.2}%")
}

/// Column sets for the deviation tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableLayout {
    /// Setpoint optimization: Avg, >1%, >3%, >5%.
    Optimization,
    /// Local control rules: Avg, >5%, >7%.
    Control,
}

impl TableLayout {
    pub fn thresholds(self) -> &'static [f64] {
        match self {
            TableLayout::Optimization => &[0.01, 0.03, 0.05],
            TableLayout::Control => &[0.05, 0.07],
        }
    }

    pub fn headers(self) -> Vec<String> {
        let mut h = vec!["Method".to_string(), "Avg".to_string()];
        for t in self.thresholds() {
            h.push(format!(">{}%", (t * 100.0).round()));
        }
        h
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedTable {
    pub csv: String,
    pub text: String,
}

fn render(headers: &[String], rows: &[Vec<String>]) -> RenderedTable {
    let mut csv = String::new();
    let _ = writeln!(csv, "{}", headers.join(","));
    for r in rows {
        let _ = writeln!(csv, "{}", r.join(","));
    }
    let widths: Vec<usize> = (0..headers.len())
        .map(|c| rows.iter().map(|r| r[c].len()).chain([headers[c].len()]).max().unwrap_or(0))
        .collect();
    let line = |cells: &[String]| {
        let parts: Vec<String> = cells
            .iter()
            .enumerate()
            .map(|(c, s)| if c == 0 { format!("{s:<w$}", w = widths[c]) } else { format!("{s:>w$}", w = widths[c]) })
            .collect();
        parts.join("  ")
    };
    let mut text = String::new();
    let _ = writeln!(text, "{}", line(headers));
    let _ = writeln!(text, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len().saturating_sub(1))));
    for r in rows {
        let _ = writeln!(text, "{}", line(r));
    }
    RenderedTable { csv, text }
}

/// Deviation table, one row per method in the given order.
pub fn render_table(methods: &[(String, DeviationStats)], layout: TableLayout) -> RenderedTable {
    let rows: Vec<Vec<String>> = methods
        .iter()
        .map(|(name, s)| {
            let mut row = vec![name.clone(), format_percent(s.avg_abs_deviation)];
            for &t in layout.thresholds() {
                row.push(s.rate_above(t).map(format_percent).unwrap_or_else(|| "n/a".into()));
            }
            row
        })
        .collect();
    render(&layout.headers(), &rows)
}

/// Test-set prediction error table.
pub fn render_mse_table(methods: &[(String, f64)]) -> RenderedTable {
    let headers = vec!["Method".to_string(), "Test MSE".to_string()];
    let rows: Vec<Vec<String>> = methods.iter().map(|(n, m)| vec![n.clone(), format!("{m:.3e}")]).collect();
    render(&headers, &rows)
}

/// One polyline: voltage against bus index.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotSeries {
    pub label: String,
    pub values: Vec<f64>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Long-format CSV `series,bus,voltage`.
pub fn series_to_csv(series: &[PlotSeries]) -> String {
    let mut out = String::from("series,bus,voltage\n");
    for s in series {
        for (i, v) in s.values.iter().enumerate() {
            let _ = writeln!(out, "{},{},{}", s.label, i, v);
        }
    }
    out
}

pub fn series_from_csv(text: &str, path: &Path) -> Result<Vec<PlotSeries>, ReportError> {
    let bad = |message: String| ReportError::Malformed { path: path.to_path_buf(), message };
    let mut lines = text.lines();
    if lines.next() != Some("series,bus,voltage") {
        return Err(bad("missing header".into()));
    }
    let mut out: Vec<PlotSeries> = Vec::new();
    for (k, line) in lines.enumerate() {
        let mut it = line.rsplitn(3, ',');
        let (Some(v), Some(bus), Some(label)) = (it.next(), it.next(), it.next()) else {
            return Err(bad(format!("line {}: expected 3 fields", k + 2)));
        };
        let v: f64 = v.parse().map_err(|e| bad(format!("line {}: {e}", k + 2)))?;
        let bus: usize = bus.parse().map_err(|e| bad(format!("line {}: {e}", k + 2)))?;
        match out.last_mut() {
            Some(s) if s.label == label && s.values.len() == bus => s.values.push(v),
            _ if bus == 0 => out.push(PlotSeries { label: label.to_string(), values: vec![v] }),
            _ => return Err(bad(format!("line {}: bus index out of sequence", k + 2))),
        }
    }
    Ok(out)
}

/// Fixed-size line chart of the series.
pub fn series_to_svg(series: &[PlotSeries]) -> String {
    let (w, h, pad) = (640.0, 400.0, 40.0);
    let n = series.iter().map(|s| s.values.len()).max().unwrap_or(0);
    let (mut lo, mut hi) = series
        .iter()
        .flat_map(|s| s.values.iter().copied())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        lo = 0.9;
        hi = 1.1;
    }
    if hi - lo < 1e-6 {
        lo -= 0.01;
        hi += 0.01;
    }
    let px = |i: usize| pad + (w - 2.0 * pad) * i as f64 / (n.max(2) - 1) as f64;
    let py = |v: f64| h - pad - (h - 2.0 * pad) * (v - lo) / (hi - lo);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{pad}" y="{}" font-size="12">v {lo:.4} .. {hi:.4} pu</text>"#,
        pad - 10.0
    );
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = s
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| format!("{:.2},{:.2}", px(i), py(v)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-size="12" fill="{color}">{}</text>"#,
            w - 160.0,
            pad + 14.0 * (k as f64 + 1.0),
            s.label
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Writes `<stem>.csv` and `<stem>.svg` into `dir`, returning both paths.
pub fn emit_plot_data(series: &[PlotSeries], dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf), ReportError> {
    let write = |path: PathBuf, body: String| {
        fs::write(&path, body).map_err(|source| ReportError::Io { path: path.clone(), source })?;
        Ok::<_, ReportError>(path)
    };
    fs::create_dir_all(dir).map_err(|source| ReportError::Io { path: dir.to_path_buf(), source })?;
    let csv = write(dir.join(format!("{stem}.csv")), series_to_csv(series))?;
    let svg = write(dir.join(format!("{stem}.svg")), series_to_svg(series))?;
    Ok((csv, svg))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_profile_has_no_deviation() {
        let s = compute_stats(&[vec![1.0; 5]], &[0.01, 0.03]).unwrap();
        assert_eq!(s.avg_abs_deviation, 0.0);
        assert_eq!(s.exceed_rates, vec![0.0, 0.0]);
    }

    #[test]
    fn four_entry_fixture() {
        let s = compute_stats(&[vec![1.02, 0.96], vec![1.00, 0.89]], &[0.01, 0.03, 0.05]).unwrap();
        assert!((s.avg_abs_deviation - 4.25).abs() < 1e-12);
        assert_eq!(s.exceed_rates, vec![75.0, 50.0, 25.0]);
        assert_eq!(s.n_entries, 4);
    }

    #[test]
    fn threshold_is_strict() {
        // 0.5 and 0.25 are exact in binary so |v - 1| hits the threshold exactly
        let s = compute_stats(&[vec![1.5, 0.75]], &[0.25, 0.5]).unwrap();
        assert_eq!(s.exceed_rates, vec![50.0, 0.0]);
    }

    #[test]
    fn empty_rejected() {
        assert!(matches!(compute_stats(&[], &[0.01]), Err(ReportError::Empty)));
    }

    #[test]
    fn half_even_percent() {
        assert_eq!(format_percent(0.625), "0.62%");
        assert_eq!(format_percent(0.375), "0.38%");
        assert_eq!(format_percent(28.125), "28.12%");
        assert_eq!(format_percent(5.3155), "5.32%");
    }

    #[test]
    fn layouts() {
        assert_eq!(TableLayout::Optimization.headers(), ["Method", "Avg", ">1%", ">3%", ">5%"]);
        assert_eq!(TableLayout::Control.headers(), ["Method", "Avg", ">5%", ">7%"]);
        let s = compute_stats(&[vec![1.0]], TableLayout::Control.thresholds()).unwrap();
        let t = render_table(&[("none".into(), s)], TableLayout::Control);
        assert_eq!(t.csv, "Method,Avg,>5%,>7%\nnone,0.00%,0.00%,0.00%\n");
        assert_eq!(t.text.lines().count(), 3);
    }

    #[test]
    fn empty_plot() {
        assert_eq!(series_to_csv(&[]), "series,bus,voltage\n");
        assert!(!series_to_svg(&[]).contains("polyline"));
    }

    #[test]
    fn plot_counts_and_round_trip() {
        let series: Vec<PlotSeries> = (0..2)
            .map(|k| PlotSeries {
                label: format!("m{k}"),
                values: (0..33).map(|i| 1.0 - 0.001 * (i * (k + 1)) as f64).collect(),
            })
            .collect();
        let svg = series_to_svg(&series);
        assert_eq!(svg.matches("<polyline").count(), 2);
        for line in svg.lines().filter(|l| l.contains("polyline")) {
            let pts = line.split("points=\"").nth(1).unwrap().trim_end_matches("\"/>");
            assert_eq!(pts.split(' ').count(), 33);
        }
        let back = series_from_csv(&series_to_csv(&series), Path::new("x")).unwrap();
        assert_eq!(back, series);
    }
}

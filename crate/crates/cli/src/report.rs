//! Evaluation reports and their text, CSV and JSON renderings.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use clap::ValueEnum;
use hitframe::eval::hit_tolerance_counts;
use hitframe::io::SCHEMA_VERSION;
use hitframe::{
    binary_metrics, BinaryCounts, HitReport, Metrics, ShotAngleToken, TokenReport, ToleranceConfig,
    TrimmingReport,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Table,
    Csv,
}

/// Frame-level shot-angle agreement, with High as the positive class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleReport {
    pub counts: BinaryCounts,
    pub metrics: Metrics,
}

impl AngleReport {
    pub fn new(pred: &[ShotAngleToken], gold: &[ShotAngleToken]) -> anyhow::Result<Self> {
        anyhow::ensure!(
            pred.len() == gold.len(),
            "predicted stream has {} frames, gold has {}",
            pred.len(),
            gold.len()
        );
        let mut c = BinaryCounts::default();
        for (&p, &g) in pred.iter().zip(gold) {
            match (p == ShotAngleToken::High, g == ShotAngleToken::High) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(Self { counts: c, metrics: binary_metrics(&c)? })
    }
}

/// Collected results of one evaluation or pipeline run. Sections that were
/// not evaluated are absent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub videos: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rallies: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angles: Option<AngleReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trimming: Option<TrimmingReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<TokenReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub hits: Vec<HitReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl Report {
    pub fn new() -> Self {
        Self { schema_version: SCHEMA_VERSION, ..Self::default() }
    }

    pub fn tables(&self) -> Vec<Table> {
        let mut out = Vec::new();
        if let Some(a) = &self.angles {
            out.push(binary_table("Shot angle (High positive)", "High", &a.counts, &a.metrics));
        }
        if let Some(t) = &self.trimming {
            out.push(trimming_table(t));
        }
        if let Some(t) = &self.tokens {
            out.push(token_table(t));
        }
        if !self.hits.is_empty() {
            out.push(hit_table(&self.hits));
        }
        out
    }

    pub fn render(&self, format: Format) -> anyhow::Result<String> {
        Ok(match format {
            Format::Json => {
                let mut s = serde_json::to_string_pretty(self)?;
                s.push('\n');
                s
            }
            Format::Table => {
                let mut s = String::new();
                for t in self.tables() {
                    s.push_str(&t.render_text());
                    s.push('\n');
                }
                for w in &self.warnings {
                    let _ = writeln!(s, "warning: {w}");
                }
                s
            }
            Format::Csv => self.tables().iter().map(Table::render_csv).collect(),
        })
    }
}

/// Hit reports for each tolerance, with counts pooled over videos.
/// `videos` maps a video to its predicted hits, gold hits and frame count.
pub fn pooled_hit_reports(
    videos: &BTreeMap<String, (Vec<usize>, Vec<usize>, usize)>,
    tolerances: &[usize],
) -> anyhow::Result<Vec<HitReport>> {
    tolerances
        .iter()
        .map(|&tol| {
            let cfg = ToleranceConfig::new(tol)?;
            let mut counts = BinaryCounts::default();
            for (pred, gold, total) in videos.values() {
                counts = counts + hit_tolerance_counts(pred, gold, *total, cfg)?;
            }
            Ok(HitReport { tol, counts, metrics: binary_metrics(&counts)? })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub title: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(title: &str, header: &[&str]) -> Self {
        Self {
            title: title.to_string(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    /// Left-aligned first column, right-aligned numbers.
    pub fn render_text(&self) -> String {
        let mut widths: Vec<usize> = self.header.iter().map(|h| h.len()).collect();
        for r in &self.rows {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.len());
            }
        }
        let line = |cells: &[String]| {
            let mut s = String::new();
            for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
                if i == 0 {
                    let _ = write!(s, "{c:<w$}");
                } else {
                    let _ = write!(s, "  {c:>w$}");
                }
            }
            s.push('\n');
            s
        };
        let mut out = format!("{}\n", self.title);
        out.push_str(&line(&self.header));
        let rule: usize = widths.iter().sum::<usize>() + 2 * widths.len().saturating_sub(1);
        out.push_str(&"-".repeat(rule));
        out.push('\n');
        for r in &self.rows {
            out.push_str(&line(r));
        }
        out
    }

    /// One header row prefixed by a `table` column holding the title.
    pub fn render_csv(&self) -> String {
        let esc = |s: &str| {
            if s.contains([',', '"', '\n']) {
                format!("\"{}\"", s.replace('"', "\"\""))
            } else {
                s.to_string()
            }
        };
        let mut out = String::from("table");
        for h in &self.header {
            out.push(',');
            out.push_str(&esc(h));
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&esc(&self.title));
            for c in r {
                out.push(',');
                out.push_str(&esc(c));
            }
            out.push('\n');
        }
        out
    }
}

fn f4(x: f64) -> String {
    format!("{x:.4}")
}

fn metric_cells(m: &Metrics) -> [String; 4] {
    [f4(m.accuracy), f4(m.precision), f4(m.recall), f4(m.f1)]
}

fn count_cells(c: &BinaryCounts) -> [String; 4] {
    [c.tp, c.fp, c.fn_, c.tn].map(|v| v.to_string())
}

const BINARY_HEADER: [&str; 9] = ["", "TP", "FP", "FN", "TN", "Accuracy", "Precision", "Recall", "F1"];

fn binary_table(title: &str, label: &str, c: &BinaryCounts, m: &Metrics) -> Table {
    let mut t = Table::new(title, &BINARY_HEADER);
    let mut row = vec![label.to_string()];
    row.extend(count_cells(c));
    row.extend(metric_cells(m));
    t.rows.push(row);
    t
}

pub fn hit_table(reports: &[HitReport]) -> Table {
    let mut header = BINARY_HEADER;
    header[0] = "Tolerance";
    let mut t = Table::new("Hit frames", &header);
    for r in reports {
        let mut row = vec![format!("±{}", r.tol)];
        row.extend(count_cells(&r.counts));
        row.extend(metric_cells(&r.metrics));
        t.rows.push(row);
    }
    t
}

pub fn trimming_table(r: &TrimmingReport) -> Table {
    let mut t = Table::new(
        "Rally trimming",
        &["", "Correct", "Extra", "Missed", "Trimmed", "Actual", "Accuracy", "Precision", "Recall", "F1"],
    );
    let mut row = vec!["rallies".to_string()];
    row.extend([r.correct, r.extra, r.missed, r.total_trimmed, r.actual].map(|v| v.to_string()));
    row.extend([r.accuracy, r.precision, r.recall, r.f1].map(f4));
    t.rows.push(row);
    t
}

pub fn token_table(r: &TokenReport) -> Table {
    let mut t = Table::new(
        &format!("Direction tokens ({} frames, accuracy {})", r.evaluated, f4(r.accuracy)),
        &BINARY_HEADER,
    );
    for tm in &r.per_token {
        let mut row = vec![tm.token.as_char().to_string()];
        row.extend(count_cells(&tm.counts));
        row.extend(metric_cells(&tm.metrics));
        t.rows.push(row);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hits() -> Vec<HitReport> {
        let mut v = BTreeMap::new();
        v.insert("a".to_string(), (vec![10, 50], vec![12, 30], 100));
        pooled_hit_reports(&v, &[1, 5]).unwrap()
    }

    #[test]
    fn pooled_counts() {
        let r = hits();
        assert_eq!(r[0].counts, BinaryCounts::new(0, 2, 2, 96));
        assert_eq!(r[1].counts, BinaryCounts::new(1, 1, 1, 97));
    }

    #[test]
    fn renders_all_formats() {
        let mut rep = Report::new();
        rep.hits = hits();
        let text = rep.render(Format::Table).unwrap();
        assert!(text.contains("Hit frames"));
        assert!(text.contains("±5"));
        let csv = rep.render(Format::Csv).unwrap();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("table,Tolerance,TP"));
        let back: Report = serde_json::from_str(&rep.render(Format::Json).unwrap()).unwrap();
        assert_eq!(back, rep);
    }

    #[test]
    fn angle_counts() {
        use ShotAngleToken::{High as H, Other as O};
        let r = AngleReport::new(&[H, H, O, O], &[H, O, H, O]).unwrap();
        assert_eq!(r.counts, BinaryCounts::new(1, 1, 1, 1));
        assert!(AngleReport::new(&[H], &[]).is_err());
    }
}

//! Plain-text tables for terminal output.

use std::collections::BTreeSet;
use std::fmt::Write;

use serde::Deserialize;
use siftkaze::harness::KosResult;

/// One report row, as read back from a report CSV.
#[derive(Debug, Clone, Deserialize)]
pub struct Row {
    pub feature_set: String,
    pub classifier: String,
    pub n_train: usize,
    pub accuracy: Option<f64>,
    pub support_vectors_total: Option<usize>,
}

const SETS: [&str; 3] = ["sift", "kaze", "fused"];

/// One block per classifier: rows are training sizes, columns feature sets.
pub fn accuracy(rows: &[Row]) -> String {
    let mut out = String::new();
    let classifiers: BTreeSet<&str> = rows.iter().map(|r| r.classifier.as_str()).collect();
    let sizes: BTreeSet<usize> = rows.iter().map(|r| r.n_train).collect();
    for clf in classifiers {
        let _ = writeln!(out, "{clf} accuracy (%), support vectors in brackets");
        let _ = writeln!(out, "{:>8} {:>16} {:>16} {:>16}", "n_train", SETS[0], SETS[1], SETS[2]);
        for &n in &sizes {
            let _ = write!(out, "{n:>8}");
            for set in SETS {
                let cell = rows.iter().find(|r| r.classifier == clf && r.feature_set == set && r.n_train == n);
                let text = match cell {
                    Some(Row { accuracy: Some(a), support_vectors_total: Some(sv), .. }) => format!("{:.1} [{sv}]", 100.0 * a),
                    Some(Row { accuracy: Some(a), .. }) => format!("{:.1}", 100.0 * a),
                    Some(_) => "failed".to_string(),
                    None => "-".to_string(),
                };
                let _ = write!(out, " {text:>16}");
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

/// Overlap curves side by side, one column per detector and mode.
pub fn curves(result: &KosResult) -> String {
    let mut columns: Vec<(String, String)> = Vec::new();
    for r in &result.rows {
        let key = (r.detector.clone(), r.mode.clone());
        if !columns.contains(&key) {
            columns.push(key);
        }
    }
    let mut grid: Vec<f64> = Vec::new();
    for r in &result.rows {
        if !grid.contains(&r.n_percent) {
            grid.push(r.n_percent);
        }
    }
    let mut out = String::new();
    let _ = write!(out, "{:>6}", "N%");
    for (d, m) in &columns {
        let _ = write!(out, " {:>14}", format!("{d}/{m}"));
    }
    out.push('\n');
    for n in grid {
        let _ = write!(out, "{n:>6}");
        for (d, m) in &columns {
            let v = result.rows.iter().find(|r| r.n_percent == n && &r.detector == d && &r.mode == m);
            let text = v.map(|r| format!("{:.4}", r.mkos)).unwrap_or_else(|| "-".into());
            let _ = write!(out, " {text:>14}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(set: &str, clf: &str, n: usize, acc: Option<f64>) -> Row {
        Row { feature_set: set.into(), classifier: clf.into(), n_train: n, accuracy: acc, support_vectors_total: None }
    }

    #[test]
    fn failed_and_missing_cells_are_marked() {
        let rows = [row("sift", "svm", 15, Some(0.5)), row("kaze", "svm", 15, None)];
        let text = accuracy(&rows);
        let line = text.lines().find(|l| l.trim_start().starts_with("15")).unwrap();
        assert!(line.contains("50.0"));
        assert!(line.contains("failed"));
        assert!(line.trim_end().ends_with('-'));
    }

    #[test]
    fn one_block_per_classifier() {
        let rows = [row("sift", "svm", 5, Some(1.0)), row("sift", "mcm", 5, Some(0.25))];
        let text = accuracy(&rows);
        assert!(text.find("mcm accuracy").unwrap() < text.find("svm accuracy").unwrap());
        assert!(text.contains("25.0"));
    }
}

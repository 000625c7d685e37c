//! Report emission: machine-readable JSON plus fixed-layout text tables.

use std::fmt::Write as _;
use std::path::Path;

use super::{EvalError, EvalReport};

fn io_err(path: &Path, err: std::io::Error) -> EvalError {
    EvalError::Io { path: path.display().to_string(), err }
}

/// Render the per-fold, per-joint, and significance tables as text.
pub fn render_tables(report: &EvalReport) -> String {
    let mut out = String::new();

    writeln!(out, "[per-fold accuracy]").unwrap();
    write!(out, "{:<10}", "Fold").unwrap();
    for i in 0..report.per_fold.pck.len() {
        write!(out, "{:>9}", i + 1).unwrap();
    }
    writeln!(out, "{:>9}{:>9}", "PCK", "NME").unwrap();
    write!(out, "{:<10}", "PCK").unwrap();
    for v in &report.per_fold.pck {
        write!(out, "{v:>9.2}").unwrap();
    }
    writeln!(out, "{:>9.2}{:>9.1}", report.mean_pck, report.mean_nme_mm).unwrap();

    writeln!(out, "\n[per-joint PCK]").unwrap();
    writeln!(out, "{:<12}{:>9}{:>9}{:>9}", "Joint", "Thin", "Thick", "Average").unwrap();
    for row in &report.per_joint {
        writeln!(
            out,
            "{:<12}{:>9.2}{:>9.2}{:>9.2}",
            row.joint, row.pck_thin, row.pck_thick, row.pck_avg
        )
        .unwrap();
    }
    let jn = report.per_joint.len().max(1) as f64;
    let avg_thin: f64 = report.per_joint.iter().map(|r| r.pck_thin).sum::<f64>() / jn;
    let avg_thick: f64 = report.per_joint.iter().map(|r| r.pck_thick).sum::<f64>() / jn;
    let avg_all: f64 = report.per_joint.iter().map(|r| r.pck_avg).sum::<f64>() / jn;
    writeln!(out, "{:<12}{avg_thin:>9.2}{avg_thick:>9.2}{avg_all:>9.2}", "Average").unwrap();

    writeln!(out, "\n[per-joint NME (mm)]").unwrap();
    writeln!(out, "{:<12}{:>9}{:>9}{:>9}", "Joint", "Thin", "Thick", "Average").unwrap();
    for row in &report.per_joint {
        writeln!(
            out,
            "{:<12}{:>9.1}{:>9.1}{:>9.1}",
            row.joint, row.nme_thin, row.nme_thick, row.nme_avg
        )
        .unwrap();
    }
    let avg_thin: f64 = report.per_joint.iter().map(|r| r.nme_thin).sum::<f64>() / jn;
    let avg_thick: f64 = report.per_joint.iter().map(|r| r.nme_thick).sum::<f64>() / jn;
    let avg_all: f64 = report.per_joint.iter().map(|r| r.nme_avg).sum::<f64>() / jn;
    writeln!(out, "{:<12}{avg_thin:>9.1}{avg_thick:>9.1}{avg_all:>9.1}", "Average").unwrap();

    if !report.significance.is_empty() {
        writeln!(out, "\n[significance]").unwrap();
        for entry in &report.significance {
            writeln!(
                out,
                "{}: t = {:.3}, p = {:.6}, alpha = {:.6}, significant = {}",
                entry.pair,
                entry.t,
                entry.p_two_sided,
                entry.alpha_corrected,
                if entry.significant { "yes" } else { "no" }
            )
            .unwrap();
        }
    }
    out
}

/// Write `report.json` and `report.txt` into `dir`. Byte-stable for equal
/// inputs.
pub fn emit_report(report: &EvalReport, dir: &Path) -> Result<(), EvalError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let json_path = dir.join("report.json");
    let json = serde_json::to_string_pretty(report).map_err(|e| EvalError::Report {
        path: json_path.display().to_string(),
        msg: e.to_string(),
    })?;
    std::fs::write(&json_path, json).map_err(|e| io_err(&json_path, e))?;
    let txt_path = dir.join("report.txt");
    std::fs::write(&txt_path, render_tables(report)).map_err(|e| io_err(&txt_path, e))?;
    Ok(())
}

pub fn load_report(path: &Path) -> Result<EvalReport, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| EvalError::Report {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::super::{
        CoverSummary, FoldSummary, JointRow, MetricConfig, SignificanceEntry,
    };
    use super::*;

    fn sample_report() -> EvalReport {
        let per_joint = (0..14)
            .map(|j| JointRow {
                joint: crate::data::JOINT_LABELS[j].to_string(),
                pck_thin: 80.0 + j as f64,
                pck_thick: 78.0 + j as f64,
                pck_avg: 79.0 + j as f64,
                nme_thin: 15.0,
                nme_thick: 17.0,
                nme_avg: 16.0,
            })
            .collect();
        EvalReport {
            config: MetricConfig::default(),
            per_joint,
            per_cover: CoverSummary { pck_thin: 86.86, pck_thick: 85.26, nme_thin: 16.5, nme_thick: 17.4 },
            per_fold: FoldSummary {
                pck: vec![85.77, 83.21, 87.92, 88.75, 84.64],
                nme_mm: vec![17.0, 17.5, 16.2, 16.4, 17.4],
            },
            mean_pck: 86.058,
            mean_nme_mm: 16.9,
            significance: vec![SignificanceEntry {
                pair: "pretrained-vs-baseline".into(),
                t: 6.3547,
                p_two_sided: 0.0031,
                alpha_corrected: 0.05 / 6.0,
                significant: true,
            }],
        }
    }

    #[test]
    fn json_round_trip_preserves_report() {
        let dir = std::env::temp_dir().join("matpose_report_roundtrip");
        let _ = std::fs::remove_dir_all(&dir);
        let report = sample_report();
        emit_report(&report, &dir).unwrap();
        let loaded = load_report(&dir.join("report.json")).unwrap();
        assert_eq!(loaded, report);
    }

    #[test]
    fn emission_is_byte_stable() {
        let dir_a = std::env::temp_dir().join("matpose_report_stable_a");
        let dir_b = std::env::temp_dir().join("matpose_report_stable_b");
        let _ = std::fs::remove_dir_all(&dir_a);
        let _ = std::fs::remove_dir_all(&dir_b);
        let report = sample_report();
        emit_report(&report, &dir_a).unwrap();
        emit_report(&report, &dir_b).unwrap();
        for file in ["report.json", "report.txt"] {
            let a = std::fs::read(dir_a.join(file)).unwrap();
            let b = std::fs::read(dir_b.join(file)).unwrap();
            assert_eq!(a, b, "{file}");
        }
    }

    #[test]
    fn bonferroni_alpha_for_six_comparisons() {
        let report = sample_report();
        let alpha = report.significance[0].alpha_corrected;
        assert!((alpha - 0.008333333333333333).abs() < 1e-15);
    }

    #[test]
    fn table_text_has_expected_layout() {
        let text = render_tables(&sample_report());
        assert!(text.contains("[per-fold accuracy]"));
        assert!(text.contains("[per-joint PCK]"));
        assert!(text.contains("[per-joint NME (mm)]"));
        assert!(text.contains("[significance]"));
        // 14 joint rows plus the average row in each joint table.
        let pck_section: Vec<&str> = text
            .split("[per-joint PCK]")
            .nth(1)
            .unwrap()
            .split("[per-joint NME")
            .next()
            .unwrap()
            .trim()
            .lines()
            .collect();
        assert_eq!(pck_section.len(), 1 + 14 + 1, "header + joints + average");
        assert!(text.contains("R-Ankle") && text.contains("Head-Top"));
    }

    #[test]
    fn schema_keys_match_declared_layout() {
        // Key order in the emitted file follows the struct declaration.
        let json = serde_json::to_string_pretty(&sample_report()).unwrap();
        let expected = [
            "\"config\"",
            "\"per_joint\"",
            "\"per_cover\"",
            "\"per_fold\"",
            "\"mean_pck\"",
            "\"mean_nme_mm\"",
            "\"significance\"",
        ];
        let mut last = 0;
        for key in expected {
            let pos = json.find(key).unwrap_or_else(|| panic!("missing key {key}"));
            assert!(pos > last || last == 0, "key {key} out of order");
            last = pos;
        }
    }
}

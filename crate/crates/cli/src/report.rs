//! CSV and pretty-text rendering of detection reports.

use std::fmt::Write as _;

use powertrace_core::detector::DetectionReport;
use powertrace_core::tdc::TraceLabel;

pub fn detection_csv(report: &DetectionReport) -> String {
    let mut out = String::from("metric,value\n");
    for label in TraceLabel::ALL {
        let _ = writeln!(
            out,
            "acc_{},{:.6}",
            label.name(),
            report.per_class_acc[label as usize]
        );
    }
    let _ = writeln!(out, "total_acc,{:.6}", report.total_acc);
    let _ = writeln!(out, "merged_acc,{:.6}", report.merged_acc);
    let _ = writeln!(out, "fpr,{:.6}", report.fpr);
    let _ = writeln!(out, "reference_total_pct,{}", report.reference_total_pct);
    let _ = writeln!(out, "reference_merged_pct,{}", report.reference_merged_pct);
    for (i, row) in report.confusion.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let _ = writeln!(out, "confusion_{i}{j},{v}");
        }
    }
    out
}

pub fn detection_text(report: &DetectionReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "detection accuracy");
    let _ = writeln!(out, "------------------");
    for label in TraceLabel::ALL {
        let _ = writeln!(
            out,
            "  {:<12} {:6.2}%",
            label.name(),
            100.0 * report.per_class_acc[label as usize]
        );
    }
    let _ = writeln!(out, "  {:<12} {:6.2}%", "total", 100.0 * report.total_acc);
    let _ = writeln!(
        out,
        "  {:<12} {:6.2}%   (adversarial and extraction pooled)",
        "merged",
        100.0 * report.merged_acc
    );
    let _ = writeln!(out, "  {:<12} {:6.2}%", "fpr", 100.0 * report.fpr);
    let _ = writeln!(out, "\nconfusion (rows = truth, cols = prediction)");
    let _ = write!(out, "  {:<12}", "");
    for l in TraceLabel::ALL {
        let _ = write!(out, "{:>12}", l.name());
    }
    let _ = writeln!(out);
    for l in TraceLabel::ALL {
        let _ = write!(out, "  {:<12}", l.name());
        for v in report.confusion[l as usize] {
            let _ = write!(out, "{v:>12}");
        }
        let _ = writeln!(out);
    }
    let _ = writeln!(
        out,
        "\nreference (hardware study): total {:.1}%, merged {:.1}%",
        report.reference_total_pct, report.reference_merged_pct
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fake_report() -> DetectionReport {
        DetectionReport {
            confusion: [[9, 1, 0, 0], [0, 8, 0, 2], [0, 0, 10, 0], [0, 1, 0, 9]],
            per_class_acc: [0.9, 0.8, 1.0, 0.9],
            total_acc: 0.9,
            merged_acc: 0.975,
            fpr: 0.1,
            reference_total_pct: 87.9,
            reference_merged_pct: 94.0,
        }
    }

    #[test]
    fn csv_has_reference_footer() {
        let csv = detection_csv(&fake_report());
        assert!(csv.contains("reference_total_pct,87.9"));
        assert!(csv.contains("reference_merged_pct,94"));
        assert!(csv.contains("merged_acc,0.975000"));
    }

    #[test]
    fn text_mentions_all_classes() {
        let text = detection_text(&fake_report());
        for name in ["benign", "adversarial", "backdoor", "extraction"] {
            assert!(text.contains(name), "missing {name}");
        }
    }
}

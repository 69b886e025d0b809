//! Pixel confusion matrix, average class accuracy and mean IoU.
//!
//! A class whose ground-truth row is empty has no defined accuracy and is
//! left out of the accuracy mean. A class absent from both ground truth
//! and prediction is also left out of the IoU mean. Every count is a
//! `u64`; division happens only when a score is read.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// `counts[gt][pred]` over every accumulated pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Result<Self> {
        if classes == 0 {
            return Err(Error::Config("confusion matrix needs at least one class".into()));
        }
        Ok(ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn count(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    /// Adds one frame. Both maps are flat and must have equal length.
    pub fn accumulate(&mut self, pred: &[u8], gt: &[u8]) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(Error::dim(
                "confusion_matrix",
                format!("prediction has {} pixels, ground truth {}", pred.len(), gt.len()),
            ));
        }
        let n = self.classes;
        if let Some((i, (&p, &g))) = pred
            .iter()
            .zip(gt)
            .enumerate()
            .find(|(_, (&p, &g))| p as usize >= n || g as usize >= n)
        {
            return Err(Error::Data(format!(
                "pixel {i}: class pair (gt {g}, pred {p}) outside 0..{n}"
            )));
        }
        for (&p, &g) in pred.iter().zip(gt) {
            self.counts[g as usize * n + p as usize] += 1;
        }
        Ok(())
    }

    /// Elementwise sum; used to combine per-worker matrices.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::dim(
                "confusion_matrix",
                format!("cannot merge {} classes into {}", other.classes, self.classes),
            ));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Ground-truth pixels of class `i` (true positives plus false negatives).
    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i * self.classes..(i + 1) * self.classes].iter().sum()
    }

    /// Pixels predicted as class `i` (true positives plus false positives).
    pub fn col_sum(&self, i: usize) -> u64 {
        (0..self.classes).map(|g| self.count(g, i)).sum()
    }

    /// Recall of class `i`; `None` when it never occurs in ground truth.
    pub fn class_accuracy(&self, i: usize) -> Option<f64> {
        let row = self.row_sum(i);
        (row > 0).then(|| self.count(i, i) as f64 / row as f64)
    }

    /// Intersection over union of class `i`; `None` when it occurs in
    /// neither ground truth nor prediction.
    pub fn class_iou(&self, i: usize) -> Option<f64> {
        let tp = self.count(i, i);
        let union = self.row_sum(i) + self.col_sum(i) - tp;
        (union > 0).then(|| tp as f64 / union as f64)
    }

    /// Mean per-class accuracy; `None` before any pixel is accumulated.
    pub fn avg_acc(&self) -> Option<f64> {
        mean((0..self.classes).filter_map(|i| self.class_accuracy(i)))
    }

    /// Mean per-class IoU; `None` before any pixel is accumulated.
    pub fn mean_iou(&self) -> Option<f64> {
        mean((0..self.classes).filter_map(|i| self.class_iou(i)))
    }

    /// Fraction of pixels on the diagonal.
    pub fn pixel_accuracy(&self) -> Option<f64> {
        let total = self.total();
        let diag: u64 = (0..self.classes).map(|i| self.count(i, i)).sum();
        (total > 0).then(|| diag as f64 / total as f64)
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassRow {
    pub name: String,
    /// Ground-truth pixel count.
    pub pixels: u64,
    pub accuracy: Option<f64>,
    pub iou: Option<f64>,
}

/// Per-class scores in palette order, plus the two class means.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub rows: Vec<ClassRow>,
    pub avg_acc: Option<f64>,
    pub mean_iou: Option<f64>,
    pub total_pixels: u64,
}

pub fn per_class_report(cm: &ConfusionMatrix, names: &[&str]) -> Result<Report> {
    if names.len() != cm.classes() {
        return Err(Error::Usage(format!(
            "{} class names for a {}-class confusion matrix",
            names.len(),
            cm.classes()
        )));
    }
    let rows = names
        .iter()
        .enumerate()
        .map(|(i, name)| ClassRow {
            name: name.to_string(),
            pixels: cm.row_sum(i),
            accuracy: cm.class_accuracy(i),
            iou: cm.class_iou(i),
        })
        .collect();
    Ok(Report {
        rows,
        avg_acc: cm.avg_acc(),
        mean_iou: cm.mean_iou(),
        total_pixels: cm.total(),
    })
}

/// One header line of class names plus `Avg.Acc` and `IoU`, then one
/// row per labelled report, all in percent. Reports are expected to share
/// class names; the first one supplies the header.
pub fn summary_table(rows: &[(&str, &Report)]) -> String {
    let Some((_, first)) = rows.first() else {
        return String::new();
    };
    let widths: Vec<usize> = first.rows.iter().map(|r| r.name.len().max(6)).collect();
    let lw = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(5);
    let mut s = format!("{:<lw$}", "model");
    for (r, &w) in first.rows.iter().zip(&widths) {
        let _ = write!(s, "  {:>w$}", r.name);
    }
    let _ = writeln!(s, "  {:>7}  {:>6}", "Avg.Acc", "IoU");
    for (label, report) in rows {
        let _ = write!(s, "{label:<lw$}");
        for (r, &w) in report.rows.iter().zip(&widths) {
            let _ = write!(s, "  {:>w$}", pct(r.accuracy));
        }
        let _ = writeln!(s, "  {:>7}  {:>6}", pct(report.avg_acc), pct(report.mean_iou));
    }
    s
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{:.2}", 100.0 * v))
}

fn csv_cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:.6}"))
}

impl Report {
    /// One line per class followed by the means, in percent. Classes
    /// without a defined score show `-`.
    pub fn to_text(&self) -> String {
        let w = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(7);
        let mut s = String::new();
        let _ = writeln!(s, "{:<w$}  {:>10}  {:>7}  {:>7}", "class", "pixels", "Acc", "IoU");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<w$}  {:>10}  {:>7}  {:>7}",
                r.name,
                r.pixels,
                pct(r.accuracy),
                pct(r.iou)
            );
        }
        let _ = writeln!(s, "{:<w$}  {:>10}  {:>7}", "Avg.Acc", "", pct(self.avg_acc));
        let _ = writeln!(s, "{:<w$}  {:>10}  {:>7}  {:>7}", "mIoU", "", "", pct(self.mean_iou));
        s
    }

    /// A single labelled row under its header; see [`summary_table`].
    pub fn to_summary_row(&self, label: &str) -> String {
        summary_table(&[(label, self)])
    }

    /// `class,pixels,accuracy,iou` rows followed by `avg_acc` and
    /// `mean_iou` rows. Scores are fractions; undefined ones are empty.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("class,pixels,accuracy,iou\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{}", r.name, r.pixels, csv_cell(r.accuracy), csv_cell(r.iou));
        }
        let _ = writeln!(s, "avg_acc,{},{},", self.total_pixels, csv_cell(self.avg_acc));
        let _ = writeln!(s, "mean_iou,{},,{}", self.total_pixels, csv_cell(self.mean_iou));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cm(classes: usize, pred: &[u8], gt: &[u8]) -> ConfusionMatrix {
        let mut m = ConfusionMatrix::new(classes).unwrap();
        m.accumulate(pred, gt).unwrap();
        m
    }

    #[test]
    fn perfect_prediction_is_diagonal() {
        let gt = [0, 1, 2, 2, 1, 0];
        let m = cm(3, &gt, &gt);
        for g in 0..3 {
            for p in 0..3 {
                assert_eq!(m.count(g, p), if g == p { 2 } else { 0 });
            }
        }
        assert_eq!(m.avg_acc(), Some(1.0));
        assert_eq!(m.mean_iou(), Some(1.0));
    }

    #[test]
    fn single_off_diagonal_pixel() {
        let m = cm(9, &[7], &[2]);
        assert_eq!(m.count(2, 7), 1);
        assert_eq!(m.total(), 1);
    }

    #[test]
    fn hand_counted_four_pixels() {
        let m = cm(2, &[0, 1, 1, 1], &[0, 0, 1, 1]);
        assert_eq!(m.class_accuracy(0), Some(0.5));
        assert_eq!(m.class_accuracy(1), Some(1.0));
        assert_eq!(m.avg_acc(), Some(0.75));
        assert_eq!(m.class_iou(0), Some(0.5));
        assert_eq!(m.class_iou(1), Some(2.0 / 3.0));
        assert!((m.mean_iou().unwrap() - 7.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn everything_wrong_scores_zero() {
        let m = cm(2, &[1, 1, 0, 0], &[0, 0, 1, 1]);
        assert_eq!(m.avg_acc(), Some(0.0));
        assert_eq!(m.mean_iou(), Some(0.0));
    }

    #[test]
    fn absent_classes_are_skipped() {
        // class 2 never appears; class 1 is only predicted
        let m = cm(3, &[0, 1], &[0, 0]);
        assert_eq!(m.class_accuracy(1), None);
        assert_eq!(m.class_iou(1), Some(0.0));
        assert_eq!(m.class_accuracy(2), None);
        assert_eq!(m.class_iou(2), None);
        assert_eq!(m.avg_acc(), Some(0.5));
        assert_eq!(m.mean_iou(), Some(0.25));
        assert_eq!(ConfusionMatrix::new(3).unwrap().avg_acc(), None);
    }

    #[test]
    fn out_of_range_and_length_errors() {
        let mut m = ConfusionMatrix::new(3).unwrap();
        assert!(matches!(m.accumulate(&[0, 3], &[0, 1]), Err(Error::Data(_))));
        assert!(matches!(m.accumulate(&[0], &[0, 1]), Err(Error::Dimension { .. })));
        assert_eq!(m.total(), 0, "failed accumulation leaves counts untouched");
        assert!(m.merge(&ConfusionMatrix::new(4).unwrap()).is_err());
    }

    #[test]
    fn report_formats() {
        let m = cm(3, &[0, 1, 1, 1], &[0, 0, 1, 1]);
        let r = per_class_report(&m, &["background", "car", "bump"]).unwrap();
        let text = r.to_text();
        assert!(text.contains("background"));
        assert!(text.lines().any(|l| l.starts_with("car") && l.contains("100.00") && l.contains("66.67")));
        assert!(text.lines().any(|l| l.starts_with("bump") && l.trim_end().ends_with('-')));
        let csv = r.to_csv();
        assert_eq!(csv.lines().next(), Some("class,pixels,accuracy,iou"));
        assert!(csv.contains("bump,0,,\n"));
        assert!(csv.contains("avg_acc,4,0.750000,\n"));
        let row = r.to_summary_row("artseg");
        let mut lines = row.lines();
        assert!(lines.next().unwrap().trim_end().ends_with("Avg.Acc     IoU"));
        assert!(lines.next().unwrap().contains("75.00"));
        assert!(per_class_report(&m, &["a", "b"]).is_err());
    }

    fn pair(classes: u8, len: usize) -> impl Strategy<Value = (Vec<u8>, Vec<u8>)> {
        (
            prop::collection::vec(0..classes, len),
            prop::collection::vec(0..classes, len),
        )
    }

    proptest! {
        #[test]
        fn counts_sum_to_pixels_and_scores_are_ordered((pred, gt) in pair(6, 40)) {
            let m = cm(6, &pred, &gt);
            prop_assert_eq!(m.total(), 40);
            let (acc, iou) = (m.avg_acc().unwrap(), m.mean_iou().unwrap());
            prop_assert!(0.0 <= iou && iou <= acc && acc <= 1.0, "iou {} acc {}", iou, acc);
        }

        #[test]
        fn accumulation_is_additive((p1, g1) in pair(4, 20), (p2, g2) in pair(4, 13)) {
            let mut split = cm(4, &p1, &g1);
            split.accumulate(&p2, &g2).unwrap();
            let joined = cm(4, &[p1, p2].concat(), &[g1, g2].concat());
            prop_assert_eq!(&split, &joined);
            let mut merged = cm(4, &[], &[]);
            merged.merge(&joined).unwrap();
            prop_assert_eq!(merged, joined);
        }

        #[test]
        fn relabelling_permutes_rows_only((pred, gt) in pair(5, 30), shift in 1u8..5) {
            let perm = |c: u8| (c + shift) % 5;
            let m = cm(5, &pred, &gt);
            let pm = cm(5, &pred.iter().map(|&c| perm(c)).collect::<Vec<_>>(), &gt.iter().map(|&c| perm(c)).collect::<Vec<_>>());
            for c in 0..5u8 {
                prop_assert_eq!(m.class_iou(c as usize), pm.class_iou(perm(c) as usize));
                prop_assert_eq!(m.class_accuracy(c as usize), pm.class_accuracy(perm(c) as usize));
            }
            prop_assert!((m.avg_acc().unwrap() - pm.avg_acc().unwrap()).abs() < 1e-15);
            prop_assert!((m.mean_iou().unwrap() - pm.mean_iou().unwrap()).abs() < 1e-15);
        }
    }
}

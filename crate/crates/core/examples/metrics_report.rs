// Accumulates a confusion matrix and prints the per-class report and a
// summary row.

use artseg::metrics::{per_class_report, ConfusionMatrix};

type Res = Result<(), Box<dyn std::error::Error>>;

pub fn run_example() -> Res {
    let gt: [u8; 12] = [0, 0, 0, 0, 1, 1, 1, 2, 2, 2, 2, 2];
    let pred: [u8; 12] = [0, 0, 0, 1, 1, 1, 0, 2, 2, 2, 1, 2];
    let mut cm = ConfusionMatrix::new(4)?;
    cm.accumulate(&pred, &gt)?;

    // class 3 never appears in either map, so it is left out of both means
    let report = per_class_report(&cm, &["background", "car", "person", "bike"])?;
    print!("{}", report.to_text());
    print!("{}", report.to_summary_row("example"));

    let acc = cm.avg_acc().ok_or("no classes present")?;
    let iou = cm.mean_iou().ok_or("no classes present")?;
    let want_acc = (3.0 / 4.0 + 2.0 / 3.0 + 4.0 / 5.0) / 3.0;
    let want_iou = (3.0 / 5.0 + 2.0 / 5.0 + 4.0 / 5.0) / 3.0;
    if (acc - want_acc).abs() > 1e-12 || (iou - want_iou).abs() > 1e-12 {
        return Err(format!("Avg.Acc {acc}, mIoU {iou}").into());
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Res {
    run_example()
}

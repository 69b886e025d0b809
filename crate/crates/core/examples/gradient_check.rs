// Finite-difference check of every primitive and composite layer, plus
// a check of a hand-written function.

use artseg::gradcheck::{format_report, grad_check, run_suite, Coverage, SuiteOptions, DEFAULT_STEP};
use artseg::Tensor;

type Res = Result<(), Box<dyn std::error::Error>>;

pub fn run_example() -> Res {
    // f(x) = Σ sigmoid(x)²
    let x = Tensor::from_fn([3, 4], |i| (i as f64 - 5.5) / 3.0);
    let r = grad_check(
        |tape, v| {
            let s = tape.sigmoid(v[0]);
            let sq = tape.mul(s, s)?;
            Ok(tape.sum(sq))
        },
        &[x],
        DEFAULT_STEP,
        Coverage::All,
    )?;
    println!("custom function: {} coordinates, max relative error {:.2e}", r.checked, r.max_rel_error);

    let opts = SuiteOptions {
        include_model: false,
        ..SuiteOptions::default()
    };
    let rows = run_suite(&opts)?;
    print!("{}", format_report(&rows, opts.tolerance));
    if !r.passes(opts.tolerance) || rows.iter().any(|row| !row.result.passes(opts.tolerance)) {
        return Err("gradient check failed".into());
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Res {
    run_example()
}

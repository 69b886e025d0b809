// Records a small computation on a tape and reads back gradients.

use artseg::autodiff::Tape;
use artseg::Tensor;

type Res = Result<(), Box<dyn std::error::Error>>;

pub fn run_example() -> Res {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::new([4], vec![-1.0, 0.5, 2.0, 3.0])?);
    let w = tape.leaf(Tensor::new([4], vec![2.0, -1.0, 0.5, 1.0])?);

    // loss = Σ relu(x·w)
    let xw = tape.mul(x, w)?;
    let act = tape.relu(xw);
    let loss = tape.sum(act);
    let grads = tape.backward(loss)?;

    let gx = grads.get(x).ok_or("no gradient for x")?;
    let gw = grads.get(w).ok_or("no gradient for w")?;
    println!("loss = {}", tape.value(loss).data()[0]);
    println!("d/dx = {:?}", gx.data());
    println!("d/dw = {:?}", gw.data());

    // x·w = [-2, -0.5, 1, 3]: only the last two entries pass the relu
    if tape.value(loss).data()[0] != 4.0 || gx.data() != [0.0, 0.0, 0.5, 1.0] || gw.data() != [0.0, 0.0, 2.0, 3.0] {
        return Err("unexpected gradients".into());
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Res {
    run_example()
}

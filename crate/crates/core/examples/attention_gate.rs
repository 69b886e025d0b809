// A standalone attention gate: zeroed weights pass half of every skip
// activation, and a strong gating signal opens or closes the gate
// depending on the sign of the coefficient projection.

use artseg::autodiff::{BatchNormConfig, Mode, Tape};
use artseg::model::layers::{AttentionGate, Ctx};
use artseg::model::ParamStore;
use artseg::Tensor;

type Res = Result<(), Box<dyn std::error::Error>>;

fn alpha_range(store: &mut ParamStore<f64>, gate: &AttentionGate, g_value: f64) -> Result<(f64, f64, Vec<f64>), Box<dyn std::error::Error>> {
    let mut tape = Tape::new();
    let binding = store.bind(&mut tape);
    let skip = tape.constant(Tensor::from_fn([1, 2, 4, 4], |i| 1.0 + (i % 4) as f64));
    let g = tape.constant(Tensor::from_fn([1, 3, 4, 4], |_| g_value));
    let mut cx = Ctx {
        tape: &mut tape,
        binding: &binding,
        store,
        mode: Mode::Eval,
        bn: BatchNormConfig::default(),
    };
    let gated = gate.forward(&mut cx, skip, g)?;
    let alpha = tape.value(gated.alpha).data();
    let lo = alpha.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = alpha.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok((lo, hi, tape.value(gated.output).data().to_vec()))
}

pub fn run_example() -> Res {
    let mut store = ParamStore::<f64>::new();
    let gate = AttentionGate::new(&mut store, "gate", 2, 3, 2);

    for p in store.params_mut() {
        p.value.data_mut().fill(0.0);
    }
    let (lo, hi, out) = alpha_range(&mut store, &gate, 1.0)?;
    println!("zeroed gate: alpha in [{lo}, {hi}], first outputs {:?}", &out[..4]);
    if lo != 0.5 || hi != 0.5 {
        return Err("zeroed gate must give exactly one half".into());
    }

    // w_g sums the gating channels, psi reads the sum with the given sign
    let set_psi = |store: &mut ParamStore<f64>, sign: f64| {
        for p in store.params_mut() {
            match p.name.as_str() {
                "gate.w_g.weight" => p.value.data_mut().fill(1.0),
                "gate.psi.weight" => p.value.data_mut().fill(sign),
                _ => {}
            }
        }
    };
    set_psi(&mut store, 1.0);
    let (open, _, _) = alpha_range(&mut store, &gate, 5.0)?;
    set_psi(&mut store, -1.0);
    let (_, closed, _) = alpha_range(&mut store, &gate, 5.0)?;
    println!("excitatory psi: alpha ≥ {open:.6}; inhibitory psi: alpha ≤ {closed:.2e}");
    if open < 0.999 || closed > 1e-3 {
        return Err("gate did not respond to the gating signal".into());
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Res {
    run_example()
}

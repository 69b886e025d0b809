//! The standard battery: every tape primitive, each network building
//! block and the full model at reduced width.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{grad_check, Coverage, GradCheck, DEFAULT_STEP, DEFAULT_TOLERANCE};
use crate::autodiff::{BatchNormConfig, Mode, Primitive, RunningStats, Tape, Var};
use crate::error::Result;
use crate::model::layers::{AttentionGate, Ctx, RecurrentConvUnit, RrcnnBlock, UpBlock};
use crate::model::{ArtSeg, ArtSegConfig, Binding, Init, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct SuiteOptions {
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
    pub include_model: bool,
    /// Finite-difference step of the full-model check. Larger than `step`
    /// because the network contains parameters with an identically zero
    /// gradient, whose numeric estimate is pure rounding noise divided
    /// by the step.
    pub model_step: f64,
    /// Width multiplier of the full-model check.
    pub model_width: f64,
    /// Spatial size of the full-model input (square, one channel).
    pub model_size: usize,
    /// Coordinates perturbed per parameter tensor in the full-model check.
    pub model_samples: usize,
    /// Corrupts the backward rule of one primitive in every check.
    pub fault: Option<Primitive>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            seed: 7,
            step: DEFAULT_STEP,
            tolerance: DEFAULT_TOLERANCE,
            include_model: true,
            model_step: 1e-4,
            model_width: 0.25,
            model_size: 32,
            model_samples: 3,
            fault: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SuiteRow {
    pub name: String,
    pub result: GradCheck,
}

/// Runs every check once, in a fixed order, and returns one row each.
pub fn run_suite(opts: &SuiteOptions) -> Result<Vec<SuiteRow>> {
    let mut rows = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for p in Primitive::ALL {
        let result = check_primitive(p, opts, &mut rng)?;
        rows.push(SuiteRow {
            name: p.name().to_string(),
            result,
        });
    }
    for name in ["recurrent_conv_unit", "rrcnn_block", "attention_gate", "up_block"] {
        let result = check_block(name, opts, &mut rng)?;
        rows.push(SuiteRow {
            name: name.to_string(),
            result,
        });
    }
    if opts.include_model {
        rows.push(SuiteRow {
            name: "full_model".into(),
            result: check_model(opts)?,
        });
    }
    Ok(rows)
}

/// One aligned line per row plus a verdict line.
pub fn format_report(rows: &[SuiteRow], tolerance: f64) -> String {
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(0);
    let mut out = String::new();
    for r in rows {
        let verdict = if r.result.passes(tolerance) { "PASS" } else { "FAIL" };
        out.push_str(&format!(
            "{:<width$}  max_rel_error={:.3e}  checked={:<5} kinks={:<3} {verdict}\n",
            r.name, r.result.max_rel_error, r.result.checked, r.result.kinks
        ));
    }
    let failed = rows.iter().filter(|r| !r.result.passes(tolerance)).count();
    if failed == 0 {
        out.push_str(&format!("all {} checks below {tolerance:e}\n", rows.len()));
    } else {
        out.push_str(&format!("{failed} of {} checks at or above {tolerance:e}\n", rows.len()));
    }
    out
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(lo..hi))
}

/// Values bounded away from zero so ReLU kinks are never straddled.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = rng.gen_range(0.1..1.0);
        if rng.gen::<bool>() {
            m
        } else {
            -m
        }
    })
}

/// Pairwise distinct values, so pooling never sees a near tie.
fn distinct(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.1 - n as f64 * 0.05).collect();
    v.shuffle(rng);
    Tensor::new(shape.to_vec(), v).expect("shape")
}

/// `sum(x ⊙ r)` for a fixed random `r`, so every output element carries a
/// different weight.
fn weighted_sum(tape: &mut Tape<f64>, x: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = tape.shape(x).to_vec();
    let r = tape.constant(uniform(&mut rng, &shape, -1.0, 1.0));
    let y = tape.mul(x, r)?;
    Ok(tape.sum(y))
}

fn check<F>(opts: &SuiteOptions, inputs: &[Tensor<f64>], coverage: Coverage, f: F) -> Result<GradCheck>
where
    F: FnMut(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    check_with_step(opts, opts.step, inputs, coverage, f)
}

fn check_with_step<F>(
    opts: &SuiteOptions,
    step: f64,
    inputs: &[Tensor<f64>],
    coverage: Coverage,
    mut f: F,
) -> Result<GradCheck>
where
    F: FnMut(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let fault = opts.fault;
    grad_check(
        |tape, v| {
            if let Some(p) = fault {
                tape.corrupt_backward(p);
            }
            f(tape, v)
        },
        inputs,
        step,
        coverage,
    )
}

fn check_primitive(p: Primitive, opts: &SuiteOptions, rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let salt: u64 = rng.gen();
    let all = Coverage::All;
    match p {
        Primitive::Conv2d => {
            let inputs = [
                uniform(rng, &[2, 3, 5, 5], -1.0, 1.0),
                uniform(rng, &[4, 3, 3, 3], -1.0, 1.0),
                uniform(rng, &[4], -1.0, 1.0),
            ];
            check(opts, &inputs, all, |t, v| {
                let same = t.conv2d(v[0], v[1], Some(v[2]), 1, 1)?;
                let strided = t.conv2d(v[0], v[1], None, 2, 0)?;
                let a = weighted_sum(t, same, salt)?;
                let b = weighted_sum(t, strided, salt + 1)?;
                t.add(a, b)
            })
        }
        Primitive::MaxPool2d => {
            let inputs = [distinct(rng, &[2, 2, 4, 4])];
            check(opts, &inputs, all, |t, v| {
                let two = t.max_pool2d(v[0], 2)?;
                let four = t.max_pool2d(v[0], 4)?;
                let a = weighted_sum(t, two, salt)?;
                let b = weighted_sum(t, four, salt + 1)?;
                t.add(a, b)
            })
        }
        Primitive::UpsampleNearest => {
            let inputs = [uniform(rng, &[2, 2, 3, 3], -1.0, 1.0)];
            check(opts, &inputs, all, |t, v| {
                let y = t.upsample_nearest(v[0], 2)?;
                weighted_sum(t, y, salt)
            })
        }
        Primitive::BatchNorm2d => {
            let inputs = [
                uniform(rng, &[3, 2, 3, 3], -2.0, 2.0),
                uniform(rng, &[2], 0.5, 1.5),
                uniform(rng, &[2], -0.5, 0.5),
            ];
            check(opts, &inputs, all, |t, v| {
                let cfg = BatchNormConfig::default();
                let (mut mean, mut var) = (vec![0.1, -0.2], vec![1.5, 0.7]);
                let eval = t.batch_norm2d(
                    v[0],
                    v[1],
                    v[2],
                    RunningStats {
                        mean: &mut mean,
                        var: &mut var,
                    },
                    Mode::Eval,
                    cfg,
                )?;
                let train = t.batch_norm2d(
                    v[0],
                    v[1],
                    v[2],
                    RunningStats {
                        mean: &mut mean,
                        var: &mut var,
                    },
                    Mode::Train,
                    cfg,
                )?;
                let a = weighted_sum(t, eval, salt)?;
                let b = weighted_sum(t, train, salt + 1)?;
                t.add(a, b)
            })
        }
        Primitive::Relu => {
            let inputs = [away_from_zero(rng, &[2, 3, 4, 4])];
            check(opts, &inputs, all, |t, v| {
                let y = t.relu(v[0]);
                weighted_sum(t, y, salt)
            })
        }
        Primitive::Sigmoid => {
            let inputs = [uniform(rng, &[2, 3, 4, 4], -4.0, 4.0)];
            check(opts, &inputs, all, |t, v| {
                let y = t.sigmoid(v[0]);
                weighted_sum(t, y, salt)
            })
        }
        Primitive::Add => {
            let inputs = [
                uniform(rng, &[2, 3, 4, 4], -1.0, 1.0),
                uniform(rng, &[2, 3, 4, 4], -1.0, 1.0),
                uniform(rng, &[2, 1, 4, 4], -1.0, 1.0),
            ];
            check(opts, &inputs, all, |t, v| {
                let same = t.add(v[0], v[1])?;
                let broadcast = t.add(same, v[2])?;
                weighted_sum(t, broadcast, salt)
            })
        }
        Primitive::Mul => {
            let inputs = [
                uniform(rng, &[2, 3, 4, 4], -1.0, 1.0),
                uniform(rng, &[2, 3, 4, 4], -1.0, 1.0),
                uniform(rng, &[2, 1, 4, 4], -1.0, 1.0),
            ];
            check(opts, &inputs, all, |t, v| {
                let same = t.mul(v[0], v[1])?;
                let broadcast = t.mul(same, v[2])?;
                weighted_sum(t, broadcast, salt)
            })
        }
        Primitive::ConcatChannels => {
            let inputs = [uniform(rng, &[2, 2, 3, 3], -1.0, 1.0), uniform(rng, &[2, 3, 3, 3], -1.0, 1.0)];
            check(opts, &inputs, all, |t, v| {
                let y = t.concat_channels(v[0], v[1])?;
                weighted_sum(t, y, salt)
            })
        }
        Primitive::SoftmaxCrossEntropy => {
            let inputs = [uniform(rng, &[2, 4, 3, 3], -2.0, 2.0)];
            let labels: Vec<u8> = (0..2 * 3 * 3).map(|_| rng.gen_range(0..4)).collect();
            check(opts, &inputs, all, |t, v| t.softmax_cross_entropy(v[0], &labels))
        }
        Primitive::Sum => {
            let inputs = [uniform(rng, &[3, 4], -1.0, 1.0)];
            check(opts, &inputs, all, |t, v| Ok(t.sum(v[0])))
        }
    }
}

/// Gives zero-initialized biases and betas, and unit gammas, random
/// values so their gradients are exercised away from the symmetric
/// starting point.
fn randomize(store: &mut ParamStore<f64>, seed: u64) {
    store.initialize(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    for p in store.params_mut() {
        match p.init {
            Init::HeUniform { .. } => {}
            Init::Zeros => p.value.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.3..0.3)),
            Init::Ones => p.value.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(0.7..1.3)),
        }
    }
}

/// Checks `body` with the data tensors followed by every parameter of
/// `store` as inputs.
fn check_layer<F>(
    opts: &SuiteOptions,
    store: &mut ParamStore<f64>,
    data: Vec<Tensor<f64>>,
    coverage: Coverage,
    salt: u64,
    mut body: F,
) -> Result<GradCheck>
where
    F: FnMut(&mut Ctx<'_, f64>, &[Var]) -> Result<Var>,
{
    let n = data.len();
    let inputs: Vec<Tensor<f64>> = data
        .into_iter()
        .chain(store.params().iter().map(|p| p.value.clone()))
        .collect();
    check(opts, &inputs, coverage, |tape, v| {
        let binding = Binding::from_vars(v[n..].to_vec());
        let mut cx = Ctx {
            tape,
            binding: &binding,
            store: &mut *store,
            mode: Mode::Train,
            bn: BatchNormConfig::default(),
        };
        let out = body(&mut cx, &v[..n])?;
        weighted_sum(cx.tape, out, salt)
    })
}

fn check_block(name: &str, opts: &SuiteOptions, rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let salt: u64 = rng.gen();
    let mut store = ParamStore::new();
    let all = Coverage::All;
    match name {
        "recurrent_conv_unit" => {
            let unit = RecurrentConvUnit::new(&mut store, "unit", 3, 4, 2);
            randomize(&mut store, salt);
            let x = uniform(rng, &[2, 3, 6, 6], -1.0, 1.0);
            check_layer(opts, &mut store, vec![x], all, salt, |cx, v| unit.forward(cx, v[0]))
        }
        "rrcnn_block" => {
            let block = RrcnnBlock::new(&mut store, "block", 3, 4, 2, 2, true);
            randomize(&mut store, salt);
            let x = uniform(rng, &[2, 3, 6, 6], -1.0, 1.0);
            check_layer(opts, &mut store, vec![x], all, salt, |cx, v| block.forward(cx, v[0]))
        }
        "attention_gate" => {
            let gate = AttentionGate::new(&mut store, "gate", 4, 4, 2);
            randomize(&mut store, salt);
            let skip = uniform(rng, &[2, 4, 5, 5], -1.0, 1.0);
            let g = uniform(rng, &[2, 4, 5, 5], -1.0, 1.0);
            check_layer(opts, &mut store, vec![skip, g], all, salt, |cx, v| {
                Ok(gate.forward(cx, v[0], v[1])?.output)
            })
        }
        "up_block" => {
            let up = UpBlock::new(&mut store, "up", 4, 3, 2);
            randomize(&mut store, salt);
            let x = uniform(rng, &[2, 4, 3, 3], -1.0, 1.0);
            check_layer(opts, &mut store, vec![x], all, salt, |cx, v| up.forward(cx, v[0]))
        }
        other => unreachable!("unknown block check {other}"),
    }
}

fn check_model(opts: &SuiteOptions) -> Result<GradCheck> {
    let config = ArtSegConfig::default().with_width(opts.model_width);
    let mut model = ArtSeg::<f64>::new(config, opts.seed)?;
    randomize(model.store_mut(), opts.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5EED);
    let s = opts.model_size;
    let image = uniform(&mut rng, &[1, 1, s, s], 0.0, 1.0);
    let classes = model.config().num_classes as u8;
    let labels: Vec<u8> = (0..s * s).map(|_| rng.gen_range(0..classes)).collect();
    let inputs: Vec<Tensor<f64>> = std::iter::once(image)
        .chain(model.store().params().iter().map(|p| p.value.clone()))
        .collect();
    let coverage = Coverage::Sampled {
        per_input: opts.model_samples,
        seed: opts.seed,
    };
    check_with_step(opts, opts.model_step, &inputs, coverage, |tape, v| {
        let binding = Binding::from_vars(v[1..].to_vec());
        let out = model.forward_bound(tape, binding, v[0], Mode::Train)?;
        tape.softmax_cross_entropy(out.logits, &labels)
    })
}

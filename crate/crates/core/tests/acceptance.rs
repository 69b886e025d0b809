//! Acceptance suite. Runs every criterion at its stated tolerance and
//! prints one PASS/FAIL line each; exits nonzero if any fails.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::thread;
use std::time::{Duration, Instant};

use artseg::autodiff::{Mode, Primitive, Tape};
use artseg::cli::main_with_args;
use artseg::data::{synth_generate, Sample, Split, SynthConfig};
use artseg::metrics::ConfusionMatrix;
use artseg::model::ArtSeg;
use artseg::train::checkpoint::{checkpoint_bytes, from_checkpoint_bytes};
use artseg::train::{evaluate, poly_lr, stack, train_epochs, Hooks, TrainConfig, TrainState};
use artseg::{ArtSegConfig, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn cli(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let argv = std::iter::once("artseg").chain(args.iter().copied());
    let code = main_with_args(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

// 1 ---------------------------------------------------------------------

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let (code, out, err) = cli(&["gradcheck", "--seed", "7"]);
    let elapsed = start.elapsed();
    print!("{out}");
    ensure(code == 0, || format!("gradcheck exited {code}: {err}"))?;
    let mut names: Vec<String> = Primitive::ALL.iter().map(|p| p.name().to_string()).collect();
    names.extend(["recurrent_conv_unit", "rrcnn_block", "attention_gate", "up_block", "full_model"].map(String::from));
    let mut worst: f64 = 0.0;
    for name in &names {
        let line = out
            .lines()
            .find(|l| l.split_whitespace().next() == Some(name.as_str()))
            .ok_or_else(|| format!("no row for {name}"))?;
        ensure(line.ends_with("PASS"), || format!("row failed: {line}"))?;
        let err: f64 = line
            .split("max_rel_error=")
            .nth(1)
            .and_then(|s| s.split_whitespace().next())
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format!("cannot parse {line}"))?;
        ensure(err < 1e-3, || format!("{name}: {err:e} ≥ 1e-3"))?;
        worst = worst.max(err);
    }
    ensure(elapsed < Duration::from_secs(300), || format!("took {elapsed:?}, limit 5 min"))?;
    Ok(format!("{} rows, worst {worst:.2e}, {:.1}s", names.len(), elapsed.as_secs_f64()))
}

// 2 ---------------------------------------------------------------------

const TABLE: [(&str, [usize; 3]); 22] = [
    ("rrcnn1", [32, 256, 256]),
    ("pool1", [32, 128, 128]),
    ("rrcnn2", [64, 128, 128]),
    ("pool2", [64, 64, 64]),
    ("rrcnn3", [128, 64, 64]),
    ("pool3", [128, 32, 32]),
    ("rrcnn4", [256, 32, 32]),
    ("pool4", [256, 8, 8]),
    ("bottleneck", [256, 8, 8]),
    ("up4", [128, 32, 32]),
    ("attention4", [256, 32, 32]),
    ("dec_rrcnn4", [128, 32, 32]),
    ("up3", [128, 64, 64]),
    ("attention3", [256, 64, 64]),
    ("dec_rrcnn3", [128, 64, 64]),
    ("up2", [64, 128, 128]),
    ("attention2", [128, 128, 128]),
    ("dec_rrcnn2", [64, 128, 128]),
    ("up1", [32, 256, 256]),
    ("attention1", [64, 256, 256]),
    ("dec_rrcnn1", [32, 256, 256]),
    // one logit map per class
    ("head", [9, 256, 256]),
];

fn shape_conformance() -> Outcome {
    let mut model = ArtSeg::<f32>::new(ArtSegConfig::default(), 0).map_err(|e| e.to_string())?;
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::from_fn([1, 1, 256, 256], |i| ((i % 97) as f32) / 97.0));
    let fwd = model.forward(&mut tape, x, Mode::Eval).map_err(|e| e.to_string())?;
    ensure(fwd.trace.len() == TABLE.len(), || format!("{} traced layers, table has {}", fwd.trace.len(), TABLE.len()))?;
    for ((name, var), (want_name, [c, h, w])) in fwd.trace.iter().zip(TABLE) {
        ensure(name == want_name, || format!("layer {name}, expected {want_name}"))?;
        let shape = tape.shape(*var);
        ensure(shape == [1, c, h, w], || format!("{name}: {shape:?}, expected [1, {c}, {h}, {w}]"))?;
    }
    Ok(format!("{} layers match, head 9×256×256", TABLE.len()))
}

// 3 ---------------------------------------------------------------------

fn loss_sanity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (b, c, h, w) = (2, 9, 8, 8);
    let labels: Vec<u8> = (0..b * h * w).map(|_| rng.gen_range(0..9)).collect();

    let mut tape = Tape::<f64>::new();
    let z = tape.leaf(Tensor::zeros([b, c, h, w]));
    let loss = tape.softmax_cross_entropy(z, &labels).map_err(|e| e.to_string())?;
    let value = tape.value(loss).data()[0];
    let ln9 = 9f64.ln();
    ensure((value - ln9).abs() < 1e-5, || format!("uniform loss {value}, expected {ln9}"))?;

    let mut worst: f64 = 0.0;
    for logits in [Tensor::zeros([b, c, h, w]), Tensor::from_fn([b, c, h, w], |_| rng.gen_range(-6.0..6.0))] {
        let mut tape = Tape::<f64>::new();
        let z = tape.leaf(logits);
        let loss = tape.softmax_cross_entropy(z, &labels).map_err(|e| e.to_string())?;
        let grads = tape.backward(loss).map_err(|e| e.to_string())?;
        let g = grads.get(z).ok_or("no logit gradient")?.data().to_vec();
        for n in 0..b {
            for p in 0..h * w {
                let s: f64 = (0..c).map(|k| g[(n * c + k) * h * w + p]).sum();
                worst = worst.max(s.abs());
            }
        }
    }
    ensure(worst < 1e-6, || format!("class-axis gradient sum reaches {worst:e}"))?;
    Ok(format!("loss {value:.7} (ln 9 = {ln9:.7}), max |Σ_c grad| {worst:.1e}"))
}

// 4 ---------------------------------------------------------------------

/// Direct per-pixel computation, independent of the confusion matrix.
fn brute_force(pred: &[u8], gt: &[u8], classes: usize) -> (Option<f64>, Option<f64>) {
    let (mut accs, mut ious) = (Vec::new(), Vec::new());
    for k in 0..classes as u8 {
        let (mut tp, mut in_gt, mut in_pred) = (0u64, 0u64, 0u64);
        for (&p, &g) in pred.iter().zip(gt) {
            tp += (p == k && g == k) as u64;
            in_gt += (g == k) as u64;
            in_pred += (p == k) as u64;
        }
        if in_gt > 0 {
            accs.push(tp as f64 / in_gt as f64);
        }
        let union = in_gt + in_pred - tp;
        if union > 0 {
            ious.push(tp as f64 / union as f64);
        }
    }
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    (mean(&accs), mean(&ious))
}

fn metric_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for pair in 0..1000 {
        // vary how many classes appear so the skip rules are exercised
        let span = rng.gen_range(1..=9u8);
        let pred: Vec<u8> = (0..64).map(|_| rng.gen_range(0..span.max(2).min(9))).collect();
        let gt: Vec<u8> = (0..64).map(|_| rng.gen_range(0..span)).collect();
        let mut cm = ConfusionMatrix::new(9).map_err(|e| e.to_string())?;
        cm.accumulate(&pred, &gt).map_err(|e| e.to_string())?;
        let (acc, iou) = brute_force(&pred, &gt, 9);
        for (name, got, want) in [("avg_acc", cm.avg_acc(), acc), ("mean_iou", cm.mean_iou(), iou)] {
            match (got, want) {
                (Some(a), Some(b)) => {
                    worst = worst.max((a - b).abs());
                    ensure((a - b).abs() <= 1e-12, || format!("pair {pair}: {name} {a} vs oracle {b}"))?;
                }
                (None, None) => {}
                _ => return Err(format!("pair {pair}: {name} defined-ness differs: {got:?} vs {want:?}")),
            }
        }
        for k in 0..9u8 {
            let direct = pred.iter().zip(&gt).filter(|&(&p, &g)| p == k && g == k).count() as u64;
            ensure(cm.count(k as usize, k as usize) == direct, || format!("pair {pair}: diagonal count of class {k}"))?;
        }
    }
    Ok(format!("1000 pairs, max deviation {worst:.1e}, {:.2}s", start.elapsed().as_secs_f64()))
}

// 5 and 9 ---------------------------------------------------------------

struct Overfit {
    model: ArtSeg<f32>,
    samples: Vec<Sample>,
    losses: Vec<f64>,
    elapsed: Duration,
}

fn overfit_run() -> Result<Overfit, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let synth = SynthConfig {
        samples: 4,
        height: 64,
        width: 64,
        num_classes: 3,
        seed: 7,
    };
    let ds = synth_generate(dir.path(), &synth).map_err(|e| e.to_string())?;
    let samples = ds.load_split(Split::Train, 64, 64).map_err(|e| e.to_string())?;
    let mut model = ArtSeg::<f32>::new(ArtSegConfig::default().with_width(0.25).with_classes(3), 7).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        total_epochs: 300,
        seed: 7,
        ..TrainConfig::default()
    };
    let mut state = TrainState::new(&model);
    let start = Instant::now();
    let history = train_epochs(&mut model, &samples, &cfg, &mut state, Hooks::default()).map_err(|e| e.to_string())?;
    Ok(Overfit {
        model,
        samples,
        losses: history.records.iter().map(|r| r.loss).collect(),
        elapsed: start.elapsed(),
    })
}

fn overfit(run: &mut Overfit) -> Outcome {
    let cm = evaluate(&mut run.model, &run.samples).map_err(|e| e.to_string())?;
    let acc = cm.pixel_accuracy().ok_or("no pixels")?;
    let miou = cm.mean_iou().ok_or("no classes")?;
    ensure(run.elapsed < Duration::from_secs(15 * 60), || format!("took {:?}, limit 15 min", run.elapsed))?;
    ensure(acc >= 0.99 && miou >= 0.95, || {
        format!("pixel accuracy {:.4} (need 0.99), mIoU {miou:.4} (need 0.95)", acc)
    })?;
    Ok(format!(
        "300 epochs, pixel accuracy {:.2}%, mIoU {miou:.4}, final loss {:.4}, {:.1}s",
        100.0 * acc,
        run.losses.last().unwrap(),
        run.elapsed.as_secs_f64()
    ))
}

/// After the first ten epochs every epoch-mean loss stays within 5% of
/// the previous one.
fn loss_trend(run: &Overfit) -> Outcome {
    let mut worst: f64 = 0.0;
    let mut increases = 0;
    for (t, pair) in run.losses.windows(2).enumerate().skip(10) {
        let ratio = pair[1] / pair[0];
        if ratio > 1.0 {
            increases += 1;
            worst = worst.max(ratio - 1.0);
        }
        ensure(ratio <= 1.05, || format!("epoch {}: loss {} after {} (+{:.1}%)", t + 1, pair[1], pair[0], 100.0 * (ratio - 1.0)))?;
    }
    Ok(format!("{increases} transient increases after epoch 10, largest +{:.2}%", 100.0 * worst))
}

fn attention_behavior(run: &mut Overfit) -> Outcome {
    // zero gates: every coefficient exactly one half
    let mut fresh = ArtSeg::<f32>::new(ArtSegConfig::default().with_width(0.25).with_classes(3), 9).map_err(|e| e.to_string())?;
    fresh.zero_attention_gates();
    let refs: Vec<&Sample> = run.samples.iter().collect();
    let (images, _) = stack::<f32>(&refs).map_err(|e| e.to_string())?;
    for mode in [Mode::Train, Mode::Eval] {
        let mut tape = Tape::new();
        let x = tape.constant(images.clone());
        let fwd = fresh.forward(&mut tape, x, mode).map_err(|e| e.to_string())?;
        for (i, &a) in fwd.attention.iter().enumerate() {
            ensure(tape.value(a).data().iter().all(|&v| v == 0.5), || format!("zeroed gate {i} is not exactly 0.5"))?;
        }
    }

    // trained gates: strictly inside (0, 1) at every pixel
    let mut tape = Tape::new();
    let x = tape.constant(images);
    let fwd = run.model.forward(&mut tape, x, Mode::Eval).map_err(|e| e.to_string())?;
    let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
    let mut count = 0;
    for &a in &fwd.attention {
        for &v in tape.value(a).data() {
            lo = lo.min(v);
            hi = hi.max(v);
            count += 1;
        }
    }
    ensure(lo > 0.0 && hi < 1.0, || format!("trained coefficients span [{lo}, {hi}]"))?;
    Ok(format!(
        "zeroed gates exactly 0.5; trained range [{lo:.3e}, 1 - {:.3e}] over {count} coefficients",
        1.0 - hi
    ))
}

// 6 ---------------------------------------------------------------------

fn lr_schedule() -> Outcome {
    let mut out = Vec::new();
    for total in [100, 300, 500] {
        let cfg = TrainConfig {
            total_epochs: total,
            ..TrainConfig::default()
        };
        let want = [5e-4, 5e-4 * 0.5f64.powf(0.9), 0.0];
        for (epoch, want) in [0, total / 2, total].into_iter().zip(want) {
            let got = poly_lr(epoch, &cfg).map_err(|e| e.to_string())?;
            ensure((got - want).abs() <= 1e-9, || format!("T={total}, epoch {epoch}: {got} vs {want}"))?;
        }
        out.push(total.to_string());
    }
    Ok(format!(
        "T ∈ {{{}}}: {{5e-4, {:.4e}, 0}}",
        out.join(", "),
        5e-4 * 0.5f64.powf(0.9)
    ))
}

// 7 ---------------------------------------------------------------------

fn determinism() -> Outcome {
    ensure(artseg::parallel::threads_from_env().map_err(|e| e.to_string())? == 0, || {
        "ARTSEG_THREADS must be unset or 0 for this criterion".into()
    })?;
    let data = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (code, _, err) = cli(&["synth", "-n", "4", "--size", "64", "--classes", "3", "--seed", "11", "--out", path(data.path())]);
    ensure(code == 0, || err)?;
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = data.path().join(format!("run_{run}"));
        let (code, _, err) = cli(&[
            "train", "--data", path(data.path()), "--out", path(&out), "--classes", "3", "--width", "0.25", "--size", "64",
            "--epochs", "4", "--seed", "11",
        ]);
        ensure(code == 0, || err)?;
        let history = fs::read(out.join("history.csv")).map_err(|e| e.to_string())?;
        let ckpt = fs::read(out.join("final.arts")).map_err(|e| e.to_string())?;
        outputs.push((history, ckpt));
    }
    ensure(outputs[0].0 == outputs[1].0, || "loss histories differ".into())?;
    ensure(outputs[0].1 == outputs[1].1, || "final checkpoints differ".into())?;
    Ok(format!(
        "4-epoch runs: history ({} bytes) and checkpoint ({} bytes) identical",
        outputs[0].0.len(),
        outputs[0].1.len()
    ))
}

// 8 ---------------------------------------------------------------------

fn checkpoint_round_trip(run: &mut Overfit) -> Outcome {
    let state = TrainState::new(&run.model);
    let bytes = checkpoint_bytes(&run.model, &state);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let file = dir.path().join("model.arts");
    artseg::train::save_checkpoint(&file, &run.model, &state).map_err(|e| e.to_string())?;
    let (mut loaded, _) = artseg::train::load_checkpoint::<f32>(&file).map_err(|e| e.to_string())?;

    let refs: Vec<&Sample> = run.samples.iter().collect();
    let (images, _) = stack::<f32>(&refs).map_err(|e| e.to_string())?;
    let a = run.model.logits(&images).map_err(|e| e.to_string())?;
    let b = loaded.logits(&images).map_err(|e| e.to_string())?;
    let same = a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits());
    ensure(same, || "logits differ after reload".into())?;

    for i in 0..12 {
        for flip in [0x01u8, 0x80] {
            let mut bad = bytes.clone();
            bad[i] ^= flip;
            ensure(from_checkpoint_bytes::<f32>(&bad).is_err(), || format!("header byte {i} ^ {flip:#04x} accepted"))?;
        }
    }
    Ok(format!("{} logits bitwise equal; 24 single-byte header corruptions rejected", a.len()))
}

// 10 --------------------------------------------------------------------

fn full_scale_pipeline() -> Outcome {
    // A small stand-in arranged in the dataset layout with all nine
    // classes; the published benchmark numbers are not checked.
    let data = tempfile::tempdir().map_err(|e| e.to_string())?;
    let synth = SynthConfig {
        samples: 6,
        height: 64,
        width: 64,
        num_classes: 9,
        seed: 5,
    };
    synth_generate(data.path(), &synth).map_err(|e| e.to_string())?;
    let splits = data.path().join("splits");
    let write = |name: &str, ids: &str| fs::write(splits.join(name), ids).map_err(|e| e.to_string());
    write("train.txt", "synth_0000\nsynth_0001\nsynth_0002\nsynth_0003\n")?;
    write("test_day.txt", "synth_0004\n")?;
    write("test_night.txt", "synth_0005\n")?;

    let out = data.path().join("run");
    let common = ["--data", path(data.path()), "--out", path(&out), "--width", "0.25", "--size", "64"];
    let mut train = vec!["train", "--epochs", "1", "--seed", "1"];
    train.extend_from_slice(&common);
    let (code, _, err) = cli(&train);
    ensure(code == 0, || format!("train: {err}"))?;
    let ckpt = out.join("final.arts");
    let mut eval = vec!["eval", "--split", "test", "--checkpoint", path(&ckpt)];
    eval.extend_from_slice(&common);
    let (code, text, err) = cli(&eval);
    ensure(code == 0, || format!("eval: {err}"))?;
    print!("{text}");

    let header = text.lines().find(|l| l.starts_with("model")).ok_or("no summary table")?;
    for col in ["background", "car", "pedestrian", "bike", "curve", "car_stop", "guardrail", "color_cone", "bump", "Avg.Acc", "IoU"] {
        ensure(header.contains(col), || format!("summary header lacks {col}"))?;
    }
    for row in ["test ", "test_day", "test_night"] {
        ensure(text.lines().any(|l| l.starts_with(row)), || format!("no {row} row"))?;
    }
    ensure(out.join("eval_test.csv").is_file(), || "no machine-readable table".into())?;
    Ok("train → eval ran end to end; combined, day and night rows emitted (no numeric target)".into())
}

// -----------------------------------------------------------------------

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(format!("panicked: {msg}"))
    })
}

fn main() {
    let names = [
        "gradient correctness",
        "shape conformance",
        "loss sanity",
        "metric oracle equivalence",
        "overfit",
        "lr schedule",
        "determinism",
        "checkpoint round trip",
        "attention behavior",
        "desk-scale pipeline (benchmark numbers excluded)",
    ];
    let trend = "overfit loss trend (≤ 5% rises after epoch 10)";
    let mut results: BTreeMap<usize, Outcome> = BTreeMap::new();
    thread::scope(|s| {
        let grad = s.spawn(|| guarded(gradient_correctness));
        let trained = s.spawn(|| {
            let mut out = Vec::new();
            match catch_unwind(AssertUnwindSafe(overfit_run)) {
                Ok(Ok(mut run)) => {
                    out.push((5, guarded(|| overfit(&mut run))));
                    out.push((11, guarded(|| loss_trend(&run))));
                    out.push((9, guarded(|| attention_behavior(&mut run))));
                    out.push((8, guarded(|| checkpoint_round_trip(&mut run))));
                }
                other => {
                    let msg = match other {
                        Ok(Err(e)) => e,
                        _ => "overfit run panicked".into(),
                    };
                    for k in [5, 8, 9, 11] {
                        out.push((k, Err(format!("overfit run failed: {msg}"))));
                    }
                }
            }
            out
        });
        let rest = s.spawn(|| {
            vec![
                (2, guarded(shape_conformance)),
                (3, guarded(loss_sanity)),
                (4, guarded(metric_oracle)),
                (6, guarded(lr_schedule)),
                (7, guarded(determinism)),
                (10, guarded(full_scale_pipeline)),
            ]
        });
        results.insert(1, grad.join().unwrap());
        results.extend(trained.join().unwrap());
        results.extend(rest.join().unwrap());
    });

    println!();
    let mut failed = 0;
    for (k, outcome) in &results {
        let label = match names.get(k - 1) {
            Some(name) => format!("criterion {k:>2}  {name:<48}"),
            None => format!("property      {trend:<48}"),
        };
        match outcome {
            Ok(detail) => println!("{label}  PASS  {detail}"),
            Err(why) => {
                failed += 1;
                println!("{label}  FAIL  {why}");
            }
        }
    }
    println!("{} of {} checks passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

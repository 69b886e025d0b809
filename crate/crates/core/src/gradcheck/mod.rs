//! Central finite-difference verification of tape gradients.
//!
//! Only available on `f64` tapes: single-precision differences are too
//! noisy to validate anything.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

mod suite;

pub use suite::{format_report, run_suite, SuiteOptions, SuiteRow};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-3;

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Which coordinates of each input get perturbed.
#[derive(Debug, Clone, Copy)]
pub enum Coverage {
    All,
    /// At most `per_input` coordinates per input, drawn without replacement.
    Sampled { per_input: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// (input index, flat coordinate) of the worst disagreement.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    /// Coordinates left out because `x ± h` switched a ReLU sign or a
    /// max-pool winner, so the function is not smooth across the stencil.
    pub kinks: usize,
}

impl GradCheck {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// Compares tape gradients of the scalar `f(inputs)` with central
/// differences `(f(x+h) − f(x−h)) / 2h`.
///
/// `f` records its computation on the given tape, starting from the
/// supplied leaf variables (one per input, in order). Coordinates whose
/// stencil crosses a non-differentiable point are not compared; with
/// [`Coverage::Sampled`] another coordinate is drawn in their place.
pub fn grad_check<F>(mut f: F, inputs: &[Tensor<f64>], step: f64, coverage: Coverage) -> Result<GradCheck>
where
    F: FnMut(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {step}")));
    }
    let mut eval = |values: &[Tensor<f64>]| -> Result<(f64, u64, Tape<f64>, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out);
        if v.len() != 1 {
            return Err(Error::Usage(format!("grad_check needs a scalar function, got {:?}", v.shape())));
        }
        let loss = v.data()[0];
        Ok((loss, tape.activation_pattern(), tape, vars, out))
    };

    let (_, pattern, tape, vars, out) = eval(inputs)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor<f64>> = inputs
        .iter()
        .zip(&vars)
        .map(|(t, &v)| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape().to_vec())))
        .collect();
    drop(grads);
    drop(tape);

    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
        kinks: 0,
    };
    let mut values = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let (order, quota): (Vec<usize>, usize) = match coverage {
            Coverage::All => ((0..input.len()).collect(), input.len()),
            Coverage::Sampled { per_input, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                (sample(&mut rng, input.len(), input.len()).into_vec(), per_input)
            }
        };
        let mut done = 0;
        for j in order {
            if done == quota {
                break;
            }
            let orig = values[i].data()[j];
            values[i].data_mut()[j] = orig + step;
            let (plus, p_plus, ..) = eval(&values)?;
            values[i].data_mut()[j] = orig - step;
            let (minus, p_minus, ..) = eval(&values)?;
            values[i].data_mut()[j] = orig;
            if p_plus != pattern || p_minus != pattern {
                report.kinks += 1;
                continue;
            }
            done += 1;

            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[i].data()[j];
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.checked == 1 {
                report.max_rel_error = err;
                report.worst = (i, j);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let x = Tensor::from_fn([5], |i| i as f64 - 2.0);
        let w = Tensor::from_fn([5], |i| 0.5 * i as f64 + 1.0);
        let r = grad_check(
            |tape, v| {
                let y = tape.mul(v[0], v[1])?;
                Ok(tape.sum(y))
            },
            &[x, w],
            DEFAULT_STEP,
            Coverage::All,
        )
        .unwrap();
        assert_eq!(r.checked, 10);
        assert!(r.max_rel_error < 1e-9, "{r:?}");
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let x = Tensor::from_fn([4], |i| i as f64 + 0.5);
        let r = grad_check(
            |tape, v| {
                tape.corrupt_backward(crate::autodiff::Primitive::Mul);
                let y = tape.mul(v[0], v[0])?;
                Ok(tape.sum(y))
            },
            &[x],
            DEFAULT_STEP,
            Coverage::All,
        )
        .unwrap();
        assert!(!r.passes(DEFAULT_TOLERANCE));
    }

    #[test]
    fn conv_norm_relu_chain() {
        use crate::autodiff::{BatchNormConfig, Mode, RunningStats};
        let x = Tensor::from_fn([1, 2, 6, 6], |i| ((i * 37 % 23) as f64 / 11.0 - 1.0) * 0.9);
        let w = Tensor::from_fn([3, 2, 3, 3], |i| ((i * 53 % 17) as f64 / 8.0 - 1.0) * 0.5);
        let gamma = Tensor::from_fn([3], |i| 0.8 + 0.2 * i as f64);
        let beta = Tensor::from_fn([3], |i| 0.1 * i as f64 - 0.1);
        let r = grad_check(
            |tape, v| {
                let c = tape.conv2d(v[0], v[1], None, 1, 1)?;
                let (mut mean, mut var) = (vec![0.0; 3], vec![1.0; 3]);
                let n = tape.batch_norm2d(
                    c,
                    v[2],
                    v[3],
                    RunningStats {
                        mean: &mut mean,
                        var: &mut var,
                    },
                    Mode::Train,
                    BatchNormConfig::default(),
                )?;
                let a = tape.relu(n);
                Ok(tape.sum(a))
            },
            &[x, w, gamma, beta],
            DEFAULT_STEP,
            Coverage::All,
        )
        .unwrap();
        assert!(r.passes(DEFAULT_TOLERANCE), "{r:?}");
        assert_eq!(r.checked + r.kinks, 72 + 54 + 3 + 3);
    }

    #[test]
    fn kinks_are_excluded() {
        // relu input sits exactly on the kink for the first coordinate
        let x = Tensor::new([3], vec![0.0, 0.5, -0.5]).unwrap();
        let r = grad_check(
            |tape, v| {
                let y = tape.relu(v[0]);
                Ok(tape.sum(y))
            },
            &[x],
            DEFAULT_STEP,
            Coverage::All,
        )
        .unwrap();
        assert_eq!((r.checked, r.kinks), (2, 1));
        assert!(r.max_rel_error < 1e-9);
    }

    #[test]
    fn sampled_coverage_limits_coordinates() {
        let x = Tensor::from_fn([50], |i| i as f64);
        let r = grad_check(|tape, v| Ok(tape.sum(v[0])), &[x], 1e-3, Coverage::Sampled { per_input: 7, seed: 1 }).unwrap();
        assert_eq!(r.checked, 7);
    }
}

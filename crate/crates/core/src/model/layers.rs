//! Building blocks of the network: convolutions, batch norm, the
//! recurrent convolution unit, the recurrent-residual block, the additive
//! attention gate and the decoder up-block.

use crate::autodiff::{BatchNormConfig, Mode, RunningStats, Tape, Var};
use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

use super::params::{Binding, BufferId, Init, ParamId, ParamStore};

/// Everything a layer needs during one forward pass.
pub struct Ctx<'a, T> {
    pub tape: &'a mut Tape<T>,
    pub binding: &'a Binding,
    pub store: &'a mut ParamStore<T>,
    pub mode: Mode,
    pub bn: BatchNormConfig,
}

#[derive(Debug, Clone)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub padding: usize,
}

impl Conv {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        bias: bool,
    ) -> Self {
        let weight = store.add_param(
            format!("{name}.weight"),
            &[cout, cin, kernel, kernel],
            Init::HeUniform {
                fan_in: cin * kernel * kernel,
            },
        );
        let bias = bias.then(|| store.add_param(format!("{name}.bias"), &[cout], Init::Zeros));
        Conv {
            weight,
            bias,
            padding: kernel / 2,
        }
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let w = cx.binding.var(self.weight);
        let b = self.bias.map(|b| cx.binding.var(b));
        cx.tape.conv2d(x, w, b, 1, self.padding)
    }

    pub fn params(&self) -> Vec<ParamId> {
        std::iter::once(self.weight).chain(self.bias).collect()
    }
}

/// Batch normalization with one affine pair and one or more sets of
/// running statistics, selected per application.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    /// `(running_mean, running_var)` per application index.
    pub stats: Vec<(BufferId, BufferId)>,
}

impl BatchNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        Self::with_stat_sets(store, name, channels, 1)
    }

    /// Shared gamma/beta with `sets` independent running statistics,
    /// named `<name>.running_mean` for set 0 and `<name>.running_mean.<k>`
    /// after that.
    pub fn with_stat_sets<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize, sets: usize) -> Self {
        let gamma = store.add_param(format!("{name}.gamma"), &[channels], Init::Ones);
        let beta = store.add_param(format!("{name}.beta"), &[channels], Init::Zeros);
        let stats = (0..sets.max(1))
            .map(|k| {
                let suffix = if k == 0 { String::new() } else { format!(".{k}") };
                (
                    store.add_buffer(format!("{name}.running_mean{suffix}"), Tensor::zeros([channels])),
                    store.add_buffer(format!("{name}.running_var{suffix}"), Tensor::ones([channels])),
                )
            })
            .collect();
        BatchNorm { gamma, beta, stats }
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        self.forward_with(cx, x, 0)
    }

    /// Normalizes with statistics set `set`.
    pub fn forward_with<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var, set: usize) -> Result<Var> {
        let (m, v) = self.stats[set];
        let (mean, var) = cx.store.buffer_pair_mut(m, v);
        cx.tape.batch_norm2d(
            x,
            cx.binding.var(self.gamma),
            cx.binding.var(self.beta),
            RunningStats { mean, var },
            cx.mode,
            cx.bn,
        )
    }
}

/// Convolution with a recurrent self-connection, unrolled `steps` times:
///
/// ```text
/// h₀ = relu(bn(conv_x(x)))
/// hₖ = relu(bn(conv_x(x) + conv_h(hₖ₋₁)))
/// ```
///
/// The feed-forward term is computed once and re-added at every step.
/// The unit bias lives in the batch-norm shift: a per-channel constant
/// added before normalization would be removed by it. Gamma and beta are
/// shared across steps, but each step keeps its own running statistics
/// because the step inputs are distributed differently.
#[derive(Debug, Clone)]
pub struct RecurrentConvUnit {
    /// Feed-forward weights.
    pub conv_x: Conv,
    /// Recurrent weights (no bias).
    pub conv_h: Conv,
    pub bn: BatchNorm,
    pub steps: usize,
}

impl RecurrentConvUnit {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, cin: usize, cout: usize, steps: usize) -> Self {
        RecurrentConvUnit {
            conv_x: Conv::new(store, &format!("{name}.conv_x"), cin, cout, 3, false),
            conv_h: Conv::new(store, &format!("{name}.conv_h"), cout, cout, 3, false),
            bn: BatchNorm::with_stat_sets(store, &format!("{name}.bn"), cout, steps),
            steps,
        }
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let feed = self.conv_x.forward(cx, x)?;
        let normed = self.bn.forward(cx, feed)?;
        let mut h = cx.tape.relu(normed);
        for step in 1..self.steps {
            let rec = self.conv_h.forward(cx, h)?;
            let pre = cx.tape.add(feed, rec)?;
            let normed = self.bn.forward_with(cx, pre, step)?;
            h = cx.tape.relu(normed);
        }
        Ok(h)
    }
}

/// Recurrent-residual block: `p + F(p)` where `p` is the input, projected
/// by a 1×1 convolution when its channel count differs from the block's.
///
/// With `residual == false` the block is the plain stack `F(x)`.
#[derive(Debug, Clone)]
pub struct RrcnnBlock {
    pub projection: Option<Conv>,
    pub units: Vec<RecurrentConvUnit>,
    pub residual: bool,
}

impl RrcnnBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        steps: usize,
        units: usize,
        residual: bool,
    ) -> Self {
        let projection =
            (residual && cin != cout).then(|| Conv::new(store, &format!("{name}.proj"), cin, cout, 1, true));
        let first_in = if residual { cout } else { cin };
        let units = (0..units)
            .map(|i| {
                let unit_in = if i == 0 { first_in } else { cout };
                RecurrentConvUnit::new(store, &format!("{name}.unit{}", i + 1), unit_in, cout, steps)
            })
            .collect();
        RrcnnBlock {
            projection,
            units,
            residual,
        }
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let p = match &self.projection {
            Some(proj) => proj.forward(cx, x)?,
            None => x,
        };
        let mut h = p;
        for unit in &self.units {
            h = unit.forward(cx, h)?;
        }
        if self.residual {
            cx.tape.add(p, h)
        } else {
            Ok(h)
        }
    }
}

/// Additive attention on a skip connection:
///
/// ```text
/// s = ψ(relu(W_x·skip + W_g·g + b_g)) + b_ψ
/// α = sigmoid(s)                       (one channel)
/// out = skip ⊙ α
/// ```
#[derive(Debug, Clone)]
pub struct AttentionGate {
    pub w_x: Conv,
    pub w_g: Conv,
    pub psi: Conv,
}

/// Output of an attention gate and its coefficient map.
pub struct Gated {
    pub output: Var,
    pub alpha: Var,
}

impl AttentionGate {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        skip_channels: usize,
        gate_channels: usize,
        inter_channels: usize,
    ) -> Self {
        AttentionGate {
            w_x: Conv::new(store, &format!("{name}.w_x"), skip_channels, inter_channels, 1, false),
            w_g: Conv::new(store, &format!("{name}.w_g"), gate_channels, inter_channels, 1, true),
            psi: Conv::new(store, &format!("{name}.psi"), inter_channels, 1, 1, true),
        }
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, skip: Var, g: Var) -> Result<Gated> {
        let theta = self.w_x.forward(cx, skip)?;
        let phi = self.w_g.forward(cx, g)?;
        let joint = cx.tape.add(theta, phi)?;
        let act = cx.tape.relu(joint);
        let s = self.psi.forward(cx, act)?;
        let alpha = cx.tape.sigmoid(s);
        let output = cx.tape.mul(skip, alpha)?;
        Ok(Gated { output, alpha })
    }

    pub fn params(&self) -> Vec<ParamId> {
        [&self.w_x, &self.w_g, &self.psi].into_iter().flat_map(Conv::params).collect()
    }
}

/// `relu(bn(conv3×3(upsample(x))))`.
#[derive(Debug, Clone)]
pub struct UpBlock {
    pub conv: Conv,
    pub bn: BatchNorm,
    pub factor: usize,
}

impl UpBlock {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, cin: usize, cout: usize, factor: usize) -> Self {
        UpBlock {
            conv: Conv::new(store, &format!("{name}.conv"), cin, cout, 3, false),
            bn: BatchNorm::new(store, &format!("{name}.bn"), cout),
            factor,
        }
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let up = cx.tape.upsample_nearest(x, self.factor)?;
        let c = self.conv.forward(cx, up)?;
        let n = self.bn.forward(cx, c)?;
        Ok(cx.tape.relu(n))
    }
}

use crate::autodiff::{Gradients, Mode, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::config::ArtSegConfig;
use super::layers::{AttentionGate, Conv, Ctx, RrcnnBlock, UpBlock};
use super::params::{Binding, ParamId, ParamStore};

/// One decoder level: upsample the deeper features, gate the matching
/// encoder skip with them, fuse by concatenation and refine.
#[derive(Debug, Clone)]
pub struct DecoderStage {
    pub up: UpBlock,
    /// Aligns the skip's channel count with the up-block output when the
    /// two differ.
    pub skip_projection: Option<Conv>,
    pub gate: AttentionGate,
    pub block: RrcnnBlock,
    /// 1-based encoder level this stage pairs with.
    pub level: usize,
}

/// The recurrent-residual encoder-decoder with attention-gated skips.
#[derive(Debug, Clone)]
pub struct ArtSeg<T> {
    config: ArtSegConfig,
    store: ParamStore<T>,
    encoder: Vec<RrcnnBlock>,
    bottleneck: RrcnnBlock,
    /// Deepest stage first.
    decoder: Vec<DecoderStage>,
    head: Conv,
}

/// Handles produced by one forward pass.
pub struct Forward {
    pub logits: Var,
    /// Attention coefficient maps, deepest stage first.
    pub attention: Vec<Var>,
    /// Named intermediate outputs in network order.
    pub trace: Vec<(String, Var)>,
    pub binding: Binding,
}

impl<T: Scalar> ArtSeg<T> {
    /// Builds the network and initializes it from `seed`.
    pub fn new(config: ArtSegConfig, seed: u64) -> Result<Self> {
        let mut model = Self::uninitialized(config)?;
        model.store.initialize(seed);
        Ok(model)
    }

    /// Builds the network with all weights zero (gammas one).
    pub fn uninitialized(config: ArtSegConfig) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let enc: Vec<usize> = c.encoder_channels.iter().map(|&ch| c.scaled(ch)).collect();
        let dec: Vec<usize> = c.decoder_channels.iter().map(|&ch| c.scaled(ch)).collect();
        let bottleneck_ch = c.scaled(c.bottleneck_channels);
        let (steps, units) = (c.recurrence_steps, c.units_per_block);

        let mut store = ParamStore::new();
        let mut encoder = Vec::with_capacity(4);
        let mut cin = c.in_channels;
        for (l, &ch) in enc.iter().enumerate() {
            encoder.push(RrcnnBlock::new(&mut store, &format!("enc{}", l + 1), cin, ch, steps, units, true));
            cin = ch;
        }
        let bottleneck = RrcnnBlock::new(
            &mut store,
            "bottleneck",
            cin,
            bottleneck_ch,
            steps,
            units,
            c.bottleneck_residual,
        );

        let mut decoder = Vec::with_capacity(4);
        let mut prev = bottleneck_ch;
        for (i, &ch) in dec.iter().enumerate() {
            let level = 4 - i;
            let name = format!("dec{level}");
            let skip_ch = enc[level - 1];
            let up = UpBlock::new(&mut store, &format!("{name}.up"), prev, ch, c.pool_kernels[level - 1]);
            let skip_projection =
                (skip_ch != ch).then(|| Conv::new(&mut store, &format!("{name}.skip_proj"), skip_ch, ch, 1, true));
            let gate = AttentionGate::new(&mut store, &format!("{name}.gate"), ch, ch, (ch / 2).max(1));
            let block = RrcnnBlock::new(&mut store, &format!("{name}.block"), 2 * ch, ch, steps, units, true);
            decoder.push(DecoderStage {
                up,
                skip_projection,
                gate,
                block,
                level,
            });
            prev = ch;
        }
        let head = Conv::new(&mut store, "head", prev, c.num_classes, 1, true);

        Ok(ArtSeg {
            config,
            store,
            encoder,
            bottleneck,
            decoder,
            head,
        })
    }

    pub fn config(&self) -> &ArtSegConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn parameter_count(&self) -> usize {
        self.store.parameter_count()
    }

    pub fn decoder(&self) -> &[DecoderStage] {
        &self.decoder
    }

    /// Parameters of every attention gate.
    pub fn gate_params(&self) -> Vec<ParamId> {
        self.decoder.iter().flat_map(|s| s.gate.params()).collect()
    }

    /// Sets every attention-gate weight and bias to zero, making each
    /// coefficient map exactly 0.5.
    pub fn zero_attention_gates(&mut self) {
        for id in self.gate_params() {
            self.store.param_mut(id).value.data_mut().fill(T::zero());
        }
    }

    /// Runs the network on `input` (B×in×H×W), binding every parameter
    /// as a fresh leaf on `tape`.
    pub fn forward(&mut self, tape: &mut Tape<T>, input: Var, mode: Mode) -> Result<Forward> {
        let binding = self.store.bind(tape);
        self.forward_bound(tape, binding, input, mode)
    }

    /// Like [`ArtSeg::forward`] with caller-supplied parameter leaves.
    pub fn forward_bound(&mut self, tape: &mut Tape<T>, binding: Binding, input: Var, mode: Mode) -> Result<Forward> {
        let [_, cin, h, w] = tape.value(input).dims4("artseg")?;
        if cin != self.config.in_channels {
            return Err(Error::dim(
                "artseg",
                format!("input has {cin} channels, model expects {}", self.config.in_channels),
            ));
        }
        self.config.check_input_size(h, w)?;
        if binding.vars().len() != self.store.params().len() {
            return Err(Error::Usage("binding does not match the parameter store".into()));
        }

        let kernels = self.config.pool_kernels;
        let bn = self.config.batch_norm;
        let mut cx = Ctx {
            tape,
            binding: &binding,
            store: &mut self.store,
            mode,
            bn,
        };
        let mut trace = Vec::new();
        let mut skips = Vec::with_capacity(4);
        let mut x = input;
        for (l, block) in self.encoder.iter().enumerate() {
            x = block.forward(&mut cx, x)?;
            trace.push((format!("rrcnn{}", l + 1), x));
            skips.push(x);
            x = cx.tape.max_pool2d(x, kernels[l])?;
            trace.push((format!("pool{}", l + 1), x));
        }
        x = self.bottleneck.forward(&mut cx, x)?;
        trace.push(("bottleneck".into(), x));

        let mut attention = Vec::with_capacity(4);
        for stage in &self.decoder {
            let l = stage.level;
            let u = stage.up.forward(&mut cx, x)?;
            trace.push((format!("up{l}"), u));
            let skip = match &stage.skip_projection {
                Some(p) => p.forward(&mut cx, skips[l - 1])?,
                None => skips[l - 1],
            };
            let gated = stage.gate.forward(&mut cx, skip, u)?;
            attention.push(gated.alpha);
            let fused = cx.tape.concat_channels(gated.output, u)?;
            trace.push((format!("attention{l}"), fused));
            x = stage.block.forward(&mut cx, fused)?;
            trace.push((format!("dec_rrcnn{l}"), x));
        }
        let logits = self.head.forward(&mut cx, x)?;
        trace.push(("head".into(), logits));
        Ok(Forward {
            logits,
            attention,
            trace,
            binding,
        })
    }

    /// Adds the gradients of a backward pass into the parameter store.
    pub fn accumulate_grads(&mut self, grads: &Gradients<T>, binding: &Binding) -> Result<()> {
        self.store.accumulate_grads(grads, binding)
    }

    /// Eval-mode logits for a batch of images.
    pub fn logits(&mut self, images: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let x = tape.constant(images.clone());
        let out = self.forward(&mut tape, x, Mode::Eval)?;
        Ok(tape.value(out.logits).clone())
    }

    /// Eval-mode per-pixel argmax class indices (B×H×W, row-major).
    pub fn predict(&mut self, images: &Tensor<T>) -> Result<Vec<u8>> {
        Ok(argmax_classes(&self.logits(images)?))
    }
}

/// Index of the largest logit per pixel; ties pick the lowest class.
pub fn argmax_classes<T: Scalar>(logits: &Tensor<T>) -> Vec<u8> {
    let [b, c, h, w] = logits.dims4("argmax").expect("rank-4 logits");
    let hw = h * w;
    let x = logits.data();
    let mut out = Vec::with_capacity(b * hw);
    for n in 0..b {
        for p in 0..hw {
            let mut best = 0;
            for k in 1..c {
                if x[(n * c + k) * hw + p] > x[(n * c + best) * hw + p] {
                    best = k;
                }
            }
            out.push(best as u8);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small() -> ArtSegConfig {
        ArtSegConfig::default().with_width(0.25).with_classes(3)
    }

    /// Counted by hand from the channel plan: per recurrent unit
    /// 9·cin·c + 9·c² + 2c, 1×1 projections with bias where channel
    /// counts change, gates with F_int = c/2, and a 1×1 head.
    const DEFAULT_PARAMETER_COUNT: usize = 7_587_373;

    #[test]
    fn parameter_count_is_frozen() {
        let full = ArtSeg::<f32>::uninitialized(ArtSegConfig::default()).unwrap();
        assert_eq!(full.parameter_count(), DEFAULT_PARAMETER_COUNT);
        assert_eq!(ArtSeg::<f32>::uninitialized(small()).unwrap().parameter_count(), 475_423);
    }

    #[test]
    fn any_multiple_of_32_works() {
        let mut m = ArtSeg::<f32>::new(small(), 1).unwrap();
        let logits = m.logits(&Tensor::zeros([1, 1, 64, 64])).unwrap();
        assert_eq!(logits.shape(), &[1, 3, 64, 64]);
        let logits = m.logits(&Tensor::zeros([2, 1, 32, 96])).unwrap();
        assert_eq!(logits.shape(), &[2, 3, 32, 96]);
        assert!(matches!(m.logits(&Tensor::zeros([1, 1, 48, 64])), Err(Error::Config(_))));
        assert!(matches!(m.logits(&Tensor::zeros([1, 2, 64, 64])), Err(Error::Dimension { .. })));
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let mut m = ArtSeg::<f32>::new(small(), 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::from_fn([1, 1, 64, 64], |_| rng.gen::<f32>());
        let a = m.logits(&x).unwrap();
        let b = m.logits(&x).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn zero_gates_give_half() {
        let mut m = ArtSeg::<f64>::new(small(), 4).unwrap();
        m.zero_attention_gates();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_fn([1, 1, 32, 32], |i| (i as f64 * 0.37).sin()));
        let out = m.forward(&mut tape, x, Mode::Train).unwrap();
        assert_eq!(out.attention.len(), 4);
        for a in out.attention {
            assert!(tape.value(a).data().iter().all(|&v| v == 0.5));
        }
    }

    #[test]
    fn init_is_seeded_and_gammas_are_one() {
        let a = ArtSeg::<f32>::new(small(), 9).unwrap();
        let b = ArtSeg::<f32>::new(small(), 9).unwrap();
        for (p, q) in a.store().params().iter().zip(b.store().params()) {
            assert_eq!(p.value.data(), q.value.data(), "{}", p.name);
            if p.name.ends_with("gamma") {
                assert!(p.value.data().iter().all(|&v| v == 1.0));
            }
            if p.name.ends_with("bias") || p.name.ends_with("beta") {
                assert!(p.value.data().iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn every_parameter_receives_gradient() {
        let mut m = ArtSeg::<f64>::new(ArtSegConfig::default().with_width(0.125).with_classes(4), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut tape = Tape::new();
        let binding = m.store().bind(&mut tape);
        let x = tape.constant(Tensor::from_fn([2, 1, 32, 32], |_| rng.gen::<f64>()));
        let labels: Vec<u8> = (0..2 * 32 * 32).map(|_| rng.gen_range(0..4)).collect();
        let out = m.forward_bound(&mut tape, binding.clone(), x, Mode::Train).unwrap();
        let loss = tape.softmax_cross_entropy(out.logits, &labels).unwrap();
        let grads = tape.backward(loss).unwrap();
        for (p, &v) in m.store().params().iter().zip(binding.vars()) {
            let g = grads.get(v).unwrap_or_else(|| panic!("{} has no gradient", p.name));
            assert!(g.data().iter().any(|&x| x != 0.0), "{} gradient is all zero", p.name);
        }
    }

    #[test]
    fn argmax_picks_lowest_on_ties() {
        let logits = Tensor::new([1, 3, 1, 2], vec![0.0f32, 5.0, 1.0, 5.0, 1.0, 2.0]).unwrap();
        assert_eq!(argmax_classes(&logits), vec![1, 0]);
    }
}

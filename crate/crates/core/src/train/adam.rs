use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::model::ParamStore;
use crate::tensor::{Scalar, Tensor};

/// Adam moment estimates, one pair per parameter in store order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    /// Number of updates applied so far.
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        let zeros = || store.params().iter().map(|p| Tensor::zeros(p.value.shape().to_vec())).collect();
        AdamState {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    fn check(&self, store: &ParamStore<T>) -> Result<()> {
        let params = store.params();
        if self.m.len() != params.len() || self.v.len() != params.len() {
            return Err(Error::Usage(format!(
                "optimizer state tracks {} parameters, store has {}",
                self.m.len(),
                params.len()
            )));
        }
        for ((p, m), v) in params.iter().zip(&self.m).zip(&self.v) {
            if m.shape() != p.value.shape() || v.shape() != p.value.shape() {
                return Err(Error::Usage(format!("optimizer moments of {} have the wrong shape", p.name)));
            }
        }
        Ok(())
    }
}

/// One Adam update of every parameter from its accumulated gradient,
/// which is then cleared.
///
/// Weight decay is added to the gradient before the moment updates
/// unless `cfg.decoupled_weight_decay` is set, in which case
/// `lr · wd · θ` is subtracted from the parameter directly. Arithmetic is
/// done in f64 and rounded once into `T`.
pub fn adam_step<T: Scalar>(store: &mut ParamStore<T>, state: &mut AdamState<T>, lr: f64, cfg: &TrainConfig) -> Result<()> {
    state.check(store)?;
    if let Some(p) = store.params().iter().find(|p| p.grad.is_none()) {
        return Err(Error::Usage(format!("parameter {} has no gradient", p.name)));
    }
    let (b1, b2) = cfg.adam_betas;
    let t = state.step + 1;
    let c1 = 1.0 - b1.powf(t as f64);
    let c2 = 1.0 - b2.powf(t as f64);
    let wd = cfg.weight_decay;
    for ((p, m), v) in store.params_mut().iter_mut().zip(&mut state.m).zip(&mut state.v) {
        let grad = p.grad.take().expect("checked above");
        let theta = p.value.data_mut();
        for (((x, &g), m), v) in theta.iter_mut().zip(grad.data()).zip(m.data_mut()).zip(v.data_mut()) {
            let th = x.to_f64();
            let mut g = g.to_f64();
            if !cfg.decoupled_weight_decay {
                g += wd * th;
            }
            let mi = b1 * m.to_f64() + (1.0 - b1) * g;
            let vi = b2 * v.to_f64() + (1.0 - b2) * g * g;
            *m = T::from_f64(mi);
            *v = T::from_f64(vi);
            let mut next = th - lr * (mi / c1) / ((vi / c2).sqrt() + cfg.adam_eps);
            if cfg.decoupled_weight_decay {
                next -= lr * wd * th;
            }
            *x = T::from_f64(next);
        }
    }
    state.step = t;
    Ok(())
}

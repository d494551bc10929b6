use serde::Serialize;

use crate::error::{MocError, Result};
use crate::numerics::{Float, ParamGroup, ParamId, ParamStore, Tensor};
use crate::training::config::GroupLrs;

pub const ADAM_EPS: f64 = 1e-8;

/// Parameters that receive weight decay: every matrix, none of the norm gains
/// or biases.
pub fn is_decayed<F: Float>(p: &crate::numerics::Parameter<F>) -> bool {
    p.value.rank() == 2
}

pub fn decay_set<F: Float>(store: &ParamStore<F>) -> Vec<String> {
    store.iter().filter(|p| is_decayed(p)).map(|p| p.name.clone()).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Moments<F> {
    pub m: Tensor<F>,
    pub v: Tensor<F>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AppliedLr {
    pub name: String,
    pub group: ParamGroup,
    pub lr: f64,
}

/// Record of the rate each parameter was updated with.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct StepAudit {
    pub step: u64,
    pub applied: Vec<AppliedLr>,
}

/// AdamW with decoupled weight decay. Parameters of frozen groups get no state
/// and are never touched.
#[derive(Clone, Debug)]
pub struct AdamW<F> {
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    frozen: Vec<ParamGroup>,
    state: Vec<Option<Moments<F>>>,
}

impl<F: Float> AdamW<F> {
    pub fn new(store: &ParamStore<F>, betas: (f64, f64), weight_decay: f64, frozen: &[ParamGroup]) -> Self {
        let state = store
            .iter()
            .map(|p| {
                (!frozen.contains(&p.group)).then(|| Moments {
                    m: Tensor::zeros(p.value.shape()),
                    v: Tensor::zeros(p.value.shape()),
                })
            })
            .collect();
        AdamW { beta1: betas.0, beta2: betas.1, weight_decay, frozen: frozen.to_vec(), state }
    }

    pub fn frozen(&self) -> &[ParamGroup] {
        &self.frozen
    }

    pub fn moments(&self, id: ParamId) -> Option<&Moments<F>> {
        self.state[id.0].as_ref()
    }

    pub fn set_moments(&mut self, id: ParamId, moments: Moments<F>) -> Result<()> {
        match &self.state[id.0] {
            None => Err(MocError::Checkpoint(format!("parameter {} is frozen and has no optimizer state", id.0))),
            Some(cur) if cur.m.shape() != moments.m.shape() || cur.v.shape() != moments.v.shape() => {
                Err(MocError::Checkpoint(format!("moment shape mismatch for parameter {}", id.0)))
            }
            Some(_) => {
                self.state[id.0] = Some(moments);
                Ok(())
            }
        }
    }

    /// Number of scalars held as optimizer state.
    pub fn state_elements(&self) -> usize {
        self.state.iter().flatten().map(|s| s.m.numel() + s.v.numel()).sum()
    }

    /// One update at step `t >= 1`. Every gradient is checked before any
    /// parameter changes, so a non-finite gradient leaves the store untouched.
    pub fn step(&mut self, store: &mut ParamStore<F>, lrs: &GroupLrs, t: u64) -> Result<StepAudit> {
        if t == 0 {
            return Err(MocError::Range("optimizer step counter starts at 1".into()));
        }
        for p in store.iter() {
            if !self.frozen.contains(&p.group) {
                p.grad.check_finite(&format!("grad/{}", p.name))?;
            }
        }
        let (b1, b2) = (self.beta1, self.beta2);
        let bc1 = 1.0 - b1.powi(t as i32);
        let bc2 = 1.0 - b2.powi(t as i32);
        let mut audit = StepAudit { step: t, applied: Vec::new() };
        for (i, p) in store.iter_mut().enumerate() {
            let Some(st) = self.state[i].as_mut() else { continue };
            let lr = lrs.get(p.group);
            let wd = if is_decayed(p) { self.weight_decay } else { 0.0 };
            let grads = p.grad.data();
            let (m, v) = (st.m.data_mut(), st.v.data_mut());
            for (j, theta) in p.value.data_mut().iter_mut().enumerate() {
                let g = grads[j].as_f64();
                let mj = b1 * m[j].as_f64() + (1.0 - b1) * g;
                let vj = b2 * v[j].as_f64() + (1.0 - b2) * g * g;
                m[j] = F::of(mj);
                v[j] = F::of(vj);
                let m_hat = mj / bc1;
                let v_hat = vj / bc2;
                let th = theta.as_f64();
                *theta = F::of(th - lr * (m_hat / (v_hat.sqrt() + ADAM_EPS) + wd * th));
            }
            audit.applied.push(AppliedLr { name: p.name.clone(), group: p.group, lr });
        }
        Ok(audit)
    }
}

/// Global L2 norm over the gradients of all non-frozen parameters.
pub fn grad_norm<F: Float>(store: &ParamStore<F>, frozen: &[ParamGroup]) -> f64 {
    let mut sq = 0.0;
    for p in store.iter().filter(|p| !frozen.contains(&p.group)) {
        for g in p.grad.data() {
            let g = g.as_f64();
            sq += g * g;
        }
    }
    sq.sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClipResult {
    pub norm: f64,
    pub scale: f64,
}

/// Rescales non-frozen gradients so their global norm is at most `max_norm`.
pub fn clip_grad_norm<F: Float>(store: &mut ParamStore<F>, max_norm: f64, frozen: &[ParamGroup]) -> ClipResult {
    let norm = grad_norm(store, frozen);
    let scale = if norm > max_norm { max_norm / norm } else { 1.0 };
    if scale != 1.0 {
        for p in store.iter_mut().filter(|p| !frozen.contains(&p.group)) {
            for g in p.grad.data_mut() {
                *g = F::of(g.as_f64() * scale);
            }
        }
    }
    ClipResult { norm, scale }
}

use std::collections::BTreeMap;

use crate::error::{Result, TensorError};
use crate::params::{ParamId, ParamStore};

/// Parameters sharing one learning rate.
#[derive(Clone, Debug)]
pub struct ParamGroup {
    pub name: String,
    pub lr: f64,
    pub params: Vec<ParamId>,
}

#[derive(Clone, Debug)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Adam with bias correction and per-group learning rates.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    groups: Vec<ParamGroup>,
    state: BTreeMap<ParamId, Moments>,
    t: u64,
}

impl Adam {
    pub fn new(groups: Vec<ParamGroup>) -> Result<Self> {
        for g in &groups {
            if !(g.lr >= 0.0 && g.lr.is_finite()) {
                return Err(TensorError::Contract(format!(
                    "group `{}` has invalid learning rate {}",
                    g.name, g.lr
                )));
            }
        }
        Ok(Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            groups,
            state: BTreeMap::new(),
            t: 0,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn groups(&self) -> &[ParamGroup] {
        &self.groups
    }

    /// Apply one update to every parameter in every group.
    ///
    /// Fails without touching any parameter if a grouped parameter has no gradient.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        for g in &self.groups {
            if let Some(&id) = g.params.iter().find(|&&id| store.get(id).grad.is_none()) {
                return Err(TensorError::Contract(format!(
                    "parameter `{}` in group `{}` has no gradient",
                    store.get(id).name,
                    g.name
                )));
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for g in &self.groups {
            for &id in &g.params {
                let p = store.get_mut(id);
                let grad = p.grad.as_ref().expect("checked above");
                let st = self.state.entry(id).or_insert_with(|| Moments {
                    m: vec![0.0; grad.numel()],
                    v: vec![0.0; grad.numel()],
                });
                let values = p.value.data_mut();
                for (((x, &gr), m), v) in values
                    .iter_mut()
                    .zip(grad.data())
                    .zip(st.m.iter_mut())
                    .zip(st.v.iter_mut())
                {
                    *m = b1 * *m + (1.0 - b1) * gr;
                    *v = b2 * *v + (1.0 - b2) * gr * gr;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *x -= g.lr * mhat / (vhat.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn store_with(values: &[(&str, f64, f64)]) -> (ParamStore, Vec<ParamId>) {
        let mut s = ParamStore::new();
        let ids = values
            .iter()
            .map(|&(name, v, g)| {
                let id = s.insert(name, Tensor::scalar(v)).unwrap();
                s.get_mut(id).grad = Some(Tensor::scalar(g));
                id
            })
            .collect();
        (s, ids)
    }

    fn group(lr: f64, params: Vec<ParamId>) -> ParamGroup {
        ParamGroup {
            name: "g".into(),
            lr,
            params,
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let (mut s, ids) = store_with(&[("a", 1.5, 0.0)]);
        let mut opt = Adam::new(vec![group(0.1, ids.clone())]).unwrap();
        opt.step(&mut s).unwrap();
        assert_eq!(s.value(ids[0]).item(), 1.5);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m̂ = 1, v̂ = 1 after bias correction, so the step is lr / (1 + eps).
        let (mut s, ids) = store_with(&[("a", 1.0, 1.0)]);
        let mut opt = Adam::new(vec![group(0.1, ids.clone())]).unwrap();
        opt.step(&mut s).unwrap();
        let expected = 1.0 - 0.1 / (1.0 + 1e-8);
        assert!((s.value(ids[0]).item() - expected).abs() < 1e-15);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn group_learning_rates_scale_updates() {
        let (mut s, ids) = store_with(&[("a", 0.0, 0.3), ("b", 0.0, 0.3)]);
        let mut opt = Adam::new(vec![group(5e-5, vec![ids[0]]), group(1e-5, vec![ids[1]])]).unwrap();
        opt.step(&mut s).unwrap();
        let ratio = s.value(ids[0]).item() / s.value(ids[1]).item();
        assert!((ratio - 5.0).abs() < 1e-9, "{ratio}");
    }

    #[test]
    fn missing_gradient_is_contract_error() {
        let (mut s, ids) = store_with(&[("a", 1.0, 1.0)]);
        s.get_mut(ids[0]).grad = None;
        let mut opt = Adam::new(vec![group(0.1, ids)]).unwrap();
        assert!(matches!(opt.step(&mut s), Err(TensorError::Contract(_))));
        assert_eq!(opt.step_count(), 0);
    }

    #[test]
    fn zero_lr_is_identity() {
        let (mut s, ids) = store_with(&[("a", 0.7, -3.0)]);
        let before = s.clone();
        let mut opt = Adam::new(vec![group(0.0, ids)]).unwrap();
        for _ in 0..5 {
            opt.step(&mut s).unwrap();
        }
        assert_eq!(s.checksum(None), before.checksum(None));
    }
}

use crate::error::{Result, TensorError};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam first/second moment state, one slot per parameter in the store.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update. Parameters without a gradient entry
    /// are treated as having a zero gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Tensor)], lr: f64) -> Result<()> {
        if self.m.len() < store.len() {
            for (id, _, t) in store.iter().skip(self.m.len()) {
                debug_assert_eq!(id.0, self.m.len());
                self.m.push(vec![0.0; t.len()]);
                self.v.push(vec![0.0; t.len()]);
            }
        }
        for (id, g) in grads {
            if store.get(*id).shape() != g.shape() {
                return Err(TensorError::Shape {
                    op: "adam_step",
                    shapes: vec![store.get(*id).shape().to_vec(), g.shape().to_vec()],
                });
            }
        }
        self.step += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.step as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.step as i32);
        let mut dense: Vec<Option<&Tensor>> = vec![None; store.len()];
        for (id, g) in grads {
            dense[id.0] = Some(g);
        }
        for (i, g) in dense.into_iter().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = store.get_mut(ParamId(i)).data_mut();
            for j in 0..p.len() {
                let gj = g.map_or(0.0, |g| g.data()[j]);
                m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * gj;
                v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p[j] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(vals: &[f64]) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.insert("p", Tensor::from_vec(vals.to_vec()));
        (s, id)
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let (mut s, id) = store_with(&[1.0, -2.0]);
        let mut st = AdamState::new();
        for _ in 0..5 {
            st.step(&mut s, &[(id, Tensor::from_vec(vec![0.0, 0.0]))], 1e-2).unwrap();
        }
        assert_eq!(s.get(id).data(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_matches_hand_formula() {
        let (mut s, id) = store_with(&[0.5, 0.5]);
        let g = [0.3, -4.0];
        let lr = 1e-3;
        let mut st = AdamState::new();
        st.step(&mut s, &[(id, Tensor::from_vec(g.to_vec()))], lr).unwrap();
        for (j, gj) in g.iter().enumerate() {
            let m = (1.0 - 0.9) * gj / (1.0 - 0.9);
            let v = (1.0 - 0.999) * gj * gj / (1.0 - 0.999);
            let expected = 0.5 - lr * m / (f64::sqrt(v) + 1e-8);
            assert!((s.get(id).data()[j] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_gradient_step_approaches_lr_sign() {
        let (mut s, id) = store_with(&[0.0]);
        let mut st = AdamState::new();
        let lr = 1e-3;
        let mut prev = 0.0;
        let mut last_step = 0.0;
        for _ in 0..2000 {
            st.step(&mut s, &[(id, Tensor::from_vec(vec![-7.0]))], lr).unwrap();
            let now = s.get(id).data()[0];
            last_step = now - prev;
            prev = now;
        }
        assert!((last_step - lr).abs() < 1e-9, "{last_step}");
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let (mut s, id) = store_with(&[0.0, 0.0]);
        let mut st = AdamState::new();
        assert!(st.step(&mut s, &[(id, Tensor::from_vec(vec![1.0]))], 1e-3).is_err());
    }
}

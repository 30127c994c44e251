//! Adaptive-moment optimizer with decoupled weight decay.

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Elem;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First/second moment state plus the shared step counter. State vectors are
/// laid out flat, aligned with the parameter store.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<E: Elem> {
    pub m: Vec<E>,
    pub v: Vec<E>,
    pub step: u64,
}

impl<E: Elem> AdamW<E> {
    pub fn new(len: usize) -> AdamW<E> {
        AdamW {
            m: vec![E::zero(); len],
            v: vec![E::zero(); len],
            step: 0,
        }
    }

    pub fn for_store(store: &ParamStore<E>) -> AdamW<E> {
        AdamW::new(store.len_flat())
    }

    /// One update over every parameter. Decay is decoupled and applied only to
    /// tensors of rank >= 2, so biases, norm scales, fusion weights, and the
    /// log-variance scalars are never decayed.
    pub fn step(
        &mut self,
        store: &mut ParamStore<E>,
        grads: &[E],
        learning_rate: f64,
        weight_decay: f64,
    ) -> Result<()> {
        let n = store.len_flat();
        if grads.len() != n || self.m.len() != n {
            return Err(Error::shape(
                "optimizer step",
                format!("{n} gradients"),
                format!("{} gradients, {} moments", grads.len(), self.m.len()),
            ));
        }
        if !learning_rate.is_finite() || learning_rate < 0.0 {
            return Err(Error::Config(format!(
                "learning_rate must be finite and >= 0, got {learning_rate}"
            )));
        }
        if !weight_decay.is_finite() || weight_decay < 0.0 {
            return Err(Error::Config(format!(
                "weight_decay must be finite and >= 0, got {weight_decay}"
            )));
        }

        self.step += 1;
        let bc1 = 1.0 - BETA1.powi(self.step as i32);
        let bc2 = 1.0 - BETA2.powi(self.step as i32);
        let spans: Vec<(usize, usize, bool)> = store
            .entries()
            .iter()
            .map(|e| (e.offset, e.len, e.shape.len() >= 2))
            .collect();
        let data = store.data_mut();
        for (offset, len, decayed) in spans {
            for i in offset..offset + len {
                let g = grads[i].to_f64();
                let m = BETA1 * self.m[i].to_f64() + (1.0 - BETA1) * g;
                let v = BETA2 * self.v[i].to_f64() + (1.0 - BETA2) * g * g;
                self.m[i] = E::from_f64(m);
                self.v[i] = E::from_f64(v);
                let update = (m / bc1) / ((v / bc2).sqrt() + EPSILON);
                let mut p = data[i].to_f64();
                p -= learning_rate * update;
                if decayed {
                    p -= learning_rate * weight_decay * data[i].to_f64();
                }
                data[i] = E::from_f64(p);
            }
        }
        Ok(())
    }
}

use serde::{Deserialize, Serialize};

use crate::checkpoint::Entry;
use crate::encoder::ParamStore;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Adam with bias correction. Moment buffers align with the parameter store;
/// frozen parameters keep empty buffers and are never touched.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<S> {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<S>>,
    second: Vec<Vec<S>>,
}

const STEP_ENTRY: &str = "optimizer.step";

impl<S: Scalar> Adam<S> {
    pub fn new(config: AdamConfig, params: &ParamStore<S>) -> Self {
        let buffers = || params.iter().map(|p| if p.trainable { vec![S::zero(); p.tensor.len()] } else { Vec::new() }).collect();
        Self { config, step: 0, first: buffers(), second: buffers() }
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamStore<S>, grads: &[Vec<S>]) {
        self.step += 1;
        let c = &self.config;
        let (b1, b2) = (S::lit(c.beta1), S::lit(c.beta2));
        let lr = S::lit(c.learning_rate);
        let eps = S::lit(c.epsilon);
        let t = i32::try_from(self.step).unwrap_or(i32::MAX);
        let fix1 = S::one() - b1.powi(t);
        let fix2 = S::one() - b2.powi(t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.first).zip(&mut self.second) {
            if !p.trainable {
                continue;
            }
            for (((w, &g), m), v) in p.tensor.values_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (S::one() - b1) * g;
                *v = b2 * *v + (S::one() - b2) * g * g;
                let m_hat = *m / fix1;
                let v_hat = *v / fix2;
                *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }

    /// Moment buffers and step count as checkpoint entries.
    pub fn entries(&self, params: &ParamStore<S>) -> Vec<Entry> {
        let mut out = vec![Entry { name: STEP_ENTRY.into(), shape: vec![], values: vec![self.step as f64] }];
        for ((p, m), v) in params.iter().zip(&self.first).zip(&self.second) {
            if !p.trainable {
                continue;
            }
            let to_f64 = |xs: &[S]| xs.iter().map(|x| x.to_f64_lossy()).collect();
            out.push(Entry { name: format!("optimizer.m.{}", p.name), shape: p.tensor.shape().to_vec(), values: to_f64(m) });
            out.push(Entry { name: format!("optimizer.v.{}", p.name), shape: p.tensor.shape().to_vec(), values: to_f64(v) });
        }
        out
    }

    /// Restores state written by [`Self::entries`]; `None` if an entry is
    /// missing or mis-shaped.
    pub fn from_entries(config: AdamConfig, params: &ParamStore<S>, entries: &[Entry]) -> Option<Self> {
        let find = |name: &str| entries.iter().find(|e| e.name == name);
        let step = find(STEP_ENTRY)?.values.first().copied()? as u64;
        let mut adam = Self::new(config, params);
        adam.step = step;
        for ((p, m), v) in params.iter().zip(&mut adam.first).zip(&mut adam.second) {
            if !p.trainable {
                continue;
            }
            for (buf, kind) in [(m, "m"), (v, "v")] {
                let e = find(&format!("optimizer.{kind}.{}", p.name))?;
                if e.values.len() != buf.len() {
                    return None;
                }
                buf.iter_mut().zip(&e.values).for_each(|(b, &x)| *b = S::lit(x));
            }
        }
        Some(adam)
    }
}

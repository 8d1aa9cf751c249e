use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Adam with decoupled weight decay. Decay applies to matrices only, not
/// to layer-norm gains and biases.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub cfg: AdamWConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store
            .iter()
            .map(|(_, _, t)| Tensor::zeros(t.shape()))
            .collect();
        Self {
            cfg,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update. `grads` must be sorted by id; missing ids count as zero.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Tensor)]) -> Result<()> {
        self.step += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let mut gi = grads.iter().peekable();
        for id in store.ids().collect::<Vec<_>>() {
            let grad = match gi.peek() {
                Some((gid, t)) if *gid == id => {
                    gi.next();
                    Some(t)
                }
                _ => None,
            };
            let p = store.get_mut(id);
            let decay = if p.shape().len() >= 2 {
                c.weight_decay
            } else {
                0.0
            };
            let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
            if m.shape() != p.shape() {
                return Err(Error::Shape {
                    op: "adamw",
                    lhs: m.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
            let pd = p.data_mut();
            let (md, vd) = (m.data_mut(), v.data_mut());
            for i in 0..pd.len() {
                let gval = grad.map_or(0.0, |t| t.data()[i]);
                md[i] = c.beta1 * md[i] + (1.0 - c.beta1) * gval;
                vd[i] = c.beta2 * vd[i] + (1.0 - c.beta2) * gval * gval;
                let update = (md[i] / bc1) / ((vd[i] / bc2).sqrt() + c.eps);
                pd[i] -= c.lr * (update + decay * pd[i]);
            }
        }
        Ok(())
    }
}

pub fn global_norm(grads: &[(ParamId, Tensor)]) -> f64 {
    grads
        .iter()
        .flat_map(|(_, t)| t.data())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
}

/// Rescale so the global L2 norm is at most `max_norm`; returns the norm
/// before clipping.
pub fn clip_global_norm(grads: &mut [(ParamId, Tensor)], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let s = max_norm / norm;
        for (_, t) in grads.iter_mut() {
            for x in t.data_mut() {
                *x *= s;
            }
        }
    }
    norm
}

/// Add `src` into `dst` (both sorted by id), scaling by `factor`.
pub fn accumulate(dst: &mut Vec<(ParamId, Tensor)>, src: Vec<(ParamId, Tensor)>, factor: f64) {
    let mut out = Vec::with_capacity(dst.len().max(src.len()));
    let mut a = std::mem::take(dst).into_iter().peekable();
    let mut b = src.into_iter().peekable();
    loop {
        match (a.peek(), b.peek()) {
            (Some((ia, _)), Some((ib, _))) if ia == ib => {
                let (id, mut ta) = a.next().expect("peeked");
                let (_, tb) = b.next().expect("peeked");
                for (x, y) in ta.data_mut().iter_mut().zip(tb.data()) {
                    *x += factor * y;
                }
                out.push((id, ta));
            }
            (Some((ia, _)), Some((ib, _))) if ia < ib => out.push(a.next().expect("peeked")),
            (Some(_), None) => out.push(a.next().expect("peeked")),
            (None, None) => break,
            _ => {
                let (id, t) = b.next().expect("peeked");
                out.push((id, t.map(|y| factor * y)));
            }
        }
    }
    *dst = out;
}

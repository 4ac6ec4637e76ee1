use std::collections::BTreeMap;

use crate::mat::Mat;
use crate::{Error, Result};

pub type ParamId = usize;

/// Named trainable tensors. Ids are insertion indices.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
    index: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("parameter {name} declared twice")));
        }
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id]
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Mat)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (i, n.as_str(), v))
    }

    /// Total number of scalars.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Mat::len).sum()
    }
}

/// Per-parameter gradients, zero for parameters the loss does not reach.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    grads: Vec<Mat>,
}

impl Gradients {
    pub fn zeros(store: &ParamStore) -> Self {
        Gradients {
            grads: store.values.iter().map(|v| Mat::zeros(v.rows(), v.cols())).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.grads[id]
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, g: &Mat) {
        self.grads[id].add_assign(g);
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().all(Mat::all_finite)
    }

    pub fn norm(&self) -> f64 {
        self.grads
            .iter()
            .flat_map(|g| g.as_slice())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// First and second moment estimates for Adam.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let z = Gradients::zeros(store).grads;
        AdamState {
            step: 0,
            m: z.clone(),
            v: z,
        }
    }
}

/// Bias-corrected Adam update of every parameter.
pub fn adam_step(store: &mut ParamStore, grads: &Gradients, state: &mut AdamState, cfg: AdamConfig) {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for id in 0..store.len() {
        let g = grads.grads[id].as_slice();
        let m = state.m[id].as_mut_slice();
        let v = state.v[id].as_mut_slice();
        let p = store.values[id].as_mut_slice();
        for i in 0..p.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            p[i] -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
        }
    }
}

use thiserror::Error;

use super::{ParamGrads, ParamId, ParamStore, Tensor};

#[derive(Debug, Error, PartialEq)]
pub enum AdamError {
    #[error("no gradient for trainable parameter `{0}`")]
    MissingGradient(String),
    #[error("gradient for `{name}` has {got} values, parameter has {expected}")]
    GradientShape {
        name: String,
        expected: usize,
        got: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Coefficient of the L2 penalty folded into the gradient.
    pub l2: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.0,
            beta2: 0.95,
            eps: 1e-12,
            l2: 3e-9,
        }
    }
}

/// First and second moment buffers of one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

/// Adam with bias correction and an L2 term added to the raw gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    moments: Vec<Option<Moments>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, id: ParamId) -> Option<&Moments> {
        self.moments.get(id.index())?.as_ref()
    }

    /// Applies one update to every trainable parameter in `store`.
    pub fn step(&mut self, store: &mut ParamStore, grads: &ParamGrads) -> Result<(), AdamError> {
        // validate first so a failed step leaves the store untouched
        for (id, p) in store.iter() {
            if p.frozen {
                continue;
            }
            let g = grads
                .get(id)
                .ok_or_else(|| AdamError::MissingGradient(p.name.clone()))?;
            if g.len() != p.value.len() {
                return Err(AdamError::GradientShape {
                    name: p.name.clone(),
                    expected: p.value.len(),
                    got: g.len(),
                });
            }
        }
        if self.moments.len() < store.len() {
            self.moments.resize(store.len(), None);
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            l2,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let ids: Vec<ParamId> = store.ids().collect();
        for id in ids {
            if store.is_frozen(id) {
                continue;
            }
            let g = grads.get(id).expect("validated above");
            let value = store.value_mut(id).data_mut();
            let m = self.moments[id.index()].get_or_insert_with(|| Moments {
                first: vec![0.0; value.len()],
                second: vec![0.0; value.len()],
            });
            for (j, p) in value.iter_mut().enumerate() {
                let gj = g[j] + l2 * *p;
                m.first[j] = beta1 * m.first[j] + (1.0 - beta1) * gj;
                m.second[j] = beta2 * m.second[j] + (1.0 - beta2) * gj * gj;
                let mh = m.first[j] / c1;
                let vh = m.second[j] / c2;
                *p -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Moment buffers as named tensors, for checkpointing.
    pub fn export(&self, store: &ParamStore) -> Vec<(String, Tensor)> {
        let mut out = vec![("adam/step".to_string(), Tensor::scalar(self.step as f64))];
        for (id, p) in store.iter() {
            if let Some(Some(m)) = self.moments.get(id.index()) {
                let shape = p.value.shape().to_vec();
                out.push((
                    format!("adam/m/{}", p.name),
                    Tensor::new(shape.clone(), m.first.clone()).expect("moment shape"),
                ));
                out.push((
                    format!("adam/v/{}", p.name),
                    Tensor::new(shape, m.second.clone()).expect("moment shape"),
                ));
            }
        }
        out
    }

    /// Inverse of [`Adam::export`]. Entries that do not belong to the optimizer are ignored.
    pub fn import(config: AdamConfig, store: &ParamStore, entries: &[(String, Tensor)]) -> Adam {
        let mut adam = Adam::new(config);
        adam.moments.resize(store.len(), None);
        let lookup = |prefix: &str, name: &str| {
            entries
                .iter()
                .find(|(n, _)| n.strip_prefix(prefix) == Some(name))
                .map(|(_, t)| t.data().to_vec())
        };
        for (name, t) in entries {
            if name == "adam/step" {
                adam.step = t.item() as u64;
            }
        }
        for (id, p) in store.iter() {
            if let (Some(first), Some(second)) =
                (lookup("adam/m/", &p.name), lookup("adam/v/", &p.name))
            {
                adam.moments[id.index()] = Some(Moments { first, second });
            }
        }
        adam
    }
}

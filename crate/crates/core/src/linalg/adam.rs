use super::{Matrix, ParamStore};

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers exist only for parameters that
/// are not frozen.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    moments: Vec<Option<(Matrix, Matrix)>>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let moments = store
            .iter()
            .map(|p| {
                (!p.is_frozen()).then(|| {
                    let (r, c) = p.value().shape();
                    (Matrix::zeros(r, c), Matrix::zeros(r, c))
                })
            })
            .collect();
        Adam {
            config,
            step: 0,
            moments,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Bytes held by first and second moment buffers.
    pub fn moment_bytes(&self) -> usize {
        self.moments
            .iter()
            .flatten()
            .map(|(m, v)| m.bytes() + v.bytes())
            .sum()
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    pub fn step(&mut self, store: &mut ParamStore) {
        assert_eq!(
            store.len(),
            self.moments.len(),
            "optimizer built for another store"
        );
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (param, moments) in store.iter_mut().zip(self.moments.iter_mut()) {
            let (Some((m, v)), Some((value, grad))) =
                (moments.as_mut(), param.value_and_grad_mut())
            else {
                continue;
            };
            let it = value
                .as_mut_slice()
                .iter_mut()
                .zip(grad.as_mut_slice().iter_mut())
                .zip(m.as_mut_slice().iter_mut().zip(v.as_mut_slice().iter_mut()));
            for ((x, g), (mi, vi)) in it {
                *mi = beta1 * *mi + (1.0 - beta1) * *g;
                *vi = beta2 * *vi + (1.0 - beta2) * *g * *g;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *x -= lr * mhat / (vhat.sqrt() + eps);
                *g = 0.0;
            }
        }
    }
}

use crate::{Gradients, ParamStore, Real, Result, TensorError};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment buffers for every parameter of a store.
#[derive(Clone, Debug, PartialEq)]
pub struct OptState<F> {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Vec<F>>,
    second: Vec<Vec<F>>,
}

impl<F: Real> OptState<F> {
    pub fn new(params: &ParamStore<F>, config: AdamConfig) -> Self {
        let zeros = |p: &ParamStore<F>| {
            (0..p.len())
                .map(|i| vec![F::zero(); p.by_index(i).len()])
                .collect::<Vec<_>>()
        };
        OptState {
            config,
            step: 0,
            first: zeros(params),
            second: zeros(params),
        }
    }

    /// One bias-corrected adaptive-moment update. Parameters missing from
    /// `grads` are treated as having a zero gradient.
    pub fn step(&mut self, params: &mut ParamStore<F>, grads: &Gradients<F>) -> Result<()> {
        if params.len() != self.first.len() {
            return Err(TensorError::invalid(
                "adam_step",
                format!("{} parameters vs {} moment buffers", params.len(), self.first.len()),
            ));
        }
        for (i, g) in grads.touched_params() {
            if i >= params.len() || g.len() != params.by_index(i).len() {
                return Err(TensorError::shape(
                    "adam_step",
                    g.shape(),
                    params.by_index(i.min(params.len() - 1)).shape(),
                ));
            }
        }
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (F::of(c.beta1), F::of(c.beta2));
        let corr1 = F::of(1.0 - c.beta1.powi(self.step as i32));
        let corr2 = F::of(1.0 - c.beta2.powi(self.step as i32));
        let (lr, eps) = (F::of(c.learning_rate), F::of(c.epsilon));
        for i in 0..params.len() {
            let g = grads.param(i);
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            let p = params.by_index_mut(i).data_mut();
            for k in 0..p.len() {
                let gk = g.map_or(F::zero(), |t| t.data()[k]);
                m[k] = b1 * m[k] + (F::one() - b1) * gk;
                v[k] = b2 * v[k] + (F::one() - b2) * gk * gk;
                let mh = m[k] / corr1;
                let vh = v[k] / corr2;
                p[k] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

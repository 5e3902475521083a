use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{ModelParams, ParamGradients};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Default)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Moments {
    fn zeros(n: usize) -> Self {
        Moments {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// First-order optimizer over [`ModelParams`].
///
/// Adam keeps dense moments for the hidden and output blocks. Embedding
/// moments exist only for rows that have received a gradient, and a row is
/// only updated on steps where it has one (the usual sparse-embedding Adam).
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    hidden_w: Moments,
    hidden_b: Moments,
    out_w: Moments,
    out_b: Moments,
    embed: HashMap<usize, Moments>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, params: &ModelParams) -> Self {
        Optimizer {
            kind,
            lr,
            step: 0,
            hidden_w: Moments::zeros(params.hidden_w.data.len()),
            hidden_b: Moments::zeros(params.hidden_b.len()),
            out_w: Moments::zeros(params.out_w.data.len()),
            out_b: Moments::zeros(2),
            embed: HashMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ParamGradients) {
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                let lr = self.lr;
                let sgd = |p: &mut [f64], g: &[f64]| {
                    for (w, d) in p.iter_mut().zip(g) {
                        *w -= lr * d;
                    }
                };
                sgd(&mut params.hidden_w.data, &grads.hidden_w.data);
                sgd(&mut params.hidden_b, &grads.hidden_b);
                sgd(&mut params.out_w.data, &grads.out_w.data);
                sgd(&mut params.out_b, &grads.out_b);
                for (&row, g) in &grads.embed_rows {
                    sgd(params.embed.row_mut(row), g);
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                let lr = self.lr;
                let adam = |p: &mut [f64], g: &[f64], s: &mut Moments| {
                    for i in 0..p.len() {
                        s.m[i] = beta1 * s.m[i] + (1.0 - beta1) * g[i];
                        s.v[i] = beta2 * s.v[i] + (1.0 - beta2) * g[i] * g[i];
                        let m_hat = s.m[i] / c1;
                        let v_hat = s.v[i] / c2;
                        p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                };
                adam(&mut params.hidden_w.data, &grads.hidden_w.data, &mut self.hidden_w);
                adam(&mut params.hidden_b, &grads.hidden_b, &mut self.hidden_b);
                adam(&mut params.out_w.data, &grads.out_w.data, &mut self.out_w);
                adam(&mut params.out_b, &grads.out_b, &mut self.out_b);
                let d_embed = params.d_embed();
                for (&row, g) in &grads.embed_rows {
                    let state = self.embed.entry(row).or_insert_with(|| Moments::zeros(d_embed));
                    adam(params.embed.row_mut(row), g, state);
                }
            }
        }
    }
}

//! Feed-forward network f(x) = W₀Φ(x) + b₀ with sigmoid hidden layers.

use super::params::{ParamBlock, ParamLayout, ParamVector};
use crate::error::{Error, Result};
use crate::numerics::RngStream;

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    /// Layer widths including input and output, e.g. `[1, 10, 1]`.
    widths: Vec<usize>,
    params: ParamVector,
}

fn layout_for(widths: &[usize]) -> ParamLayout {
    let mut blocks = Vec::new();
    let mut offset = 0;
    let last = widths.len() - 1;
    for l in 1..widths.len() {
        let (w_name, b_name) = if l == last {
            ("w_out".to_string(), "b_out".to_string())
        } else {
            (format!("w{l}"), format!("b{l}"))
        };
        let w = ParamBlock { name: w_name, offset, rows: widths[l], cols: widths[l - 1] };
        offset += w.len();
        let b = ParamBlock { name: b_name, offset, rows: widths[l], cols: 1 };
        offset += b.len();
        blocks.push(w);
        blocks.push(b);
    }
    let out_len = widths[last] * widths[last - 1] + widths[last];
    ParamLayout { blocks, output: offset - out_len..offset }
}

struct Forward {
    /// activations per layer; `acts[0]` is the input, the last entry is Φ(x)
    acts: Vec<Vec<f64>>,
    output: f64,
}

impl MlpModel {
    /// Scalar-input, scalar-output network with the given hidden widths.
    pub fn zeros(hidden: &[usize]) -> Result<Self> {
        if hidden.is_empty() || hidden.contains(&0) {
            return Err(Error::Config("network needs at least one non-empty hidden layer".into()));
        }
        let mut widths = vec![1];
        widths.extend_from_slice(hidden);
        widths.push(1);
        let layout = layout_for(&widths);
        let params = ParamVector { values: vec![0.0; layout.total()], layout };
        Ok(Self { widths, params })
    }

    /// Uniform[−a, a] weights with a = √(6/(fan_in + fan_out)); zero biases.
    pub fn init(hidden: &[usize], rng: &mut RngStream) -> Result<Self> {
        let mut model = Self::zeros(hidden)?;
        let blocks = model.params.layout.blocks.clone();
        for block in blocks.iter().filter(|b| b.name.starts_with('w')) {
            let a = (6.0 / (block.rows + block.cols) as f64).sqrt();
            for v in &mut model.params.values[block.range()] {
                *v = rng.uniform(-a, a);
            }
        }
        Ok(model)
    }

    pub fn from_params(hidden: &[usize], values: Vec<f64>) -> Result<Self> {
        let mut model = Self::zeros(hidden)?;
        model.params = ParamVector::new(values, model.params.layout.clone())?;
        Ok(model)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn hidden(&self) -> &[usize] {
        &self.widths[1..self.widths.len() - 1]
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn set_values(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.params.len(), "parameter length mismatch");
        self.params.values.copy_from_slice(values);
    }

    fn block(&self, idx: usize) -> &[f64] {
        &self.params.values[self.params.layout.blocks[idx].range()]
    }

    fn forward(&self, x: f64) -> Forward {
        let n_layers = self.widths.len() - 1;
        let mut acts = vec![vec![x]];
        for l in 0..n_layers - 1 {
            let w = self.block(2 * l);
            let b = self.block(2 * l + 1);
            let prev = &acts[l];
            let width = self.widths[l + 1];
            let act = (0..width)
                .map(|r| {
                    let row = &w[r * prev.len()..(r + 1) * prev.len()];
                    sigmoid(b[r] + row.iter().zip(prev).map(|(a, c)| a * c).sum::<f64>())
                })
                .collect();
            acts.push(act);
        }
        let w = self.block(2 * (n_layers - 1));
        let b = self.block(2 * (n_layers - 1) + 1);
        let phi = acts.last().unwrap();
        let output = b[0] + w.iter().zip(phi).map(|(a, c)| a * c).sum::<f64>();
        Forward { acts, output }
    }

    pub fn predict(&self, x: f64) -> f64 {
        self.forward(x).output
    }

    /// Φ(x), the last hidden layer.
    pub fn features(&self, x: f64) -> Vec<f64> {
        self.forward(x).acts.pop().unwrap()
    }

    /// ∇θ f(x) by backpropagation, in layout order.
    pub fn grad_full(&self, x: f64) -> Vec<f64> {
        let fw = self.forward(x);
        let n_layers = self.widths.len() - 1;
        let blocks = &self.params.layout.blocks;
        let mut grad = vec![0.0; self.params.len()];

        // output layer: df/dW₀ = Φ, df/db₀ = 1
        let out_w = &blocks[2 * (n_layers - 1)];
        let out_b = &blocks[2 * (n_layers - 1) + 1];
        let phi = &fw.acts[n_layers - 1];
        grad[out_w.range()].copy_from_slice(phi);
        grad[out_b.offset] = 1.0;

        // delta = df/d(pre-activation) of the current hidden layer
        let w_out = self.block(2 * (n_layers - 1));
        let mut delta: Vec<f64> = w_out.iter().zip(phi).map(|(w, a)| w * a * (1.0 - a)).collect();
        for l in (0..n_layers - 1).rev() {
            let prev = &fw.acts[l];
            let wb = &blocks[2 * l];
            let bb = &blocks[2 * l + 1];
            for (r, d) in delta.iter().enumerate() {
                for (c, p) in prev.iter().enumerate() {
                    grad[wb.offset + r * prev.len() + c] = d * p;
                }
                grad[bb.offset + r] = *d;
            }
            if l > 0 {
                let w = self.block(2 * l);
                delta = (0..prev.len())
                    .map(|c| {
                        let back: f64 = delta.iter().enumerate().map(|(r, d)| d * w[r * prev.len() + c]).sum();
                        back * prev[c] * (1.0 - prev[c])
                    })
                    .collect();
            }
        }
        grad
    }

    /// ∇ f(x) with respect to the output layer only: (Φ(x), 1).
    pub fn grad_output(&self, x: f64) -> Vec<f64> {
        let mut g = self.features(x);
        g.push(1.0);
        g
    }
}

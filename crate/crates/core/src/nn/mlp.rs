use crate::error::{Error, Result};
use crate::rng::Rng;

/// Weights and biases of a feed-forward network.
///
/// Hidden layers use tanh, the output layer is linear. Layer `l` maps
/// `layer_sizes[l]` inputs to `layer_sizes[l + 1]` outputs; its weight matrix
/// is stored row-major as `out x in`. The flat view concatenates, per layer,
/// the weights followed by the biases.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layer_sizes: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

/// Activations recorded by [`mlp_forward`], enough for an exact backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    layer_sizes: Vec<usize>,
    /// `inputs[l]` is the input fed to layer `l` (post-activation of `l - 1`).
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of every layer.
    pre: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        // Output layer is linear, so its pre-activation is the output.
        self.pre.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

fn check_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::Config(format!(
            "network needs at least an input and an output layer, got {layer_sizes:?}"
        )));
    }
    if let Some(pos) = layer_sizes.iter().position(|&s| s == 0) {
        return Err(Error::Config(format!("layer {pos} has zero width")));
    }
    Ok(())
}

impl MlpParams {
    /// All-zero network.
    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        check_sizes(layer_sizes)?;
        let weights = layer_sizes
            .windows(2)
            .map(|w| vec![0.0; w[0] * w[1]])
            .collect();
        let biases = layer_sizes[1..].iter().map(|&n| vec![0.0; n]).collect();
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
        })
    }

    /// Scaled-uniform init: each weight in `±sqrt(6 / (fan_in + fan_out))`,
    /// biases zero, output layer weights multiplied by `output_scale`.
    pub fn init(layer_sizes: &[usize], output_scale: f64, rng: &mut Rng) -> Result<Self> {
        let mut p = Self::zeros(layer_sizes)?;
        let n_layers = p.num_layers();
        for (l, w) in p.weights.iter_mut().enumerate() {
            let fan_in = layer_sizes[l] as f64;
            let fan_out = layer_sizes[l + 1] as f64;
            let limit = (6.0 / (fan_in + fan_out)).sqrt();
            let scale = if l + 1 == n_layers { output_scale } else { 1.0 };
            for x in w.iter_mut() {
                *x = scale * rng.uniform_range(-limit, limit);
            }
        }
        Ok(p)
    }

    /// Build from explicit per-layer tensors, validating every shape.
    pub fn from_parts(
        layer_sizes: &[usize],
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
    ) -> Result<Self> {
        check_sizes(layer_sizes)?;
        let n = layer_sizes.len() - 1;
        if weights.len() != n || biases.len() != n {
            return Err(Error::Config(format!(
                "expected {n} weight and bias tensors, got {} and {}",
                weights.len(),
                biases.len()
            )));
        }
        for l in 0..n {
            let (i, o) = (layer_sizes[l], layer_sizes[l + 1]);
            if weights[l].len() != i * o {
                return Err(Error::Shape {
                    layer: l,
                    expected: i * o,
                    got: weights[l].len(),
                });
            }
            if biases[l].len() != o {
                return Err(Error::Shape {
                    layer: l,
                    expected: o,
                    got: biases[l].len(),
                });
            }
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated non-empty")
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        &self.weights[layer]
    }

    pub fn biases(&self, layer: usize) -> &[f64] {
        &self.biases[layer]
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.weights[layer]
    }

    pub fn biases_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.biases[layer]
    }

    pub fn num_params(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.flatten_into(&mut out);
        out
    }

    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
    }

    /// Inverse of [`MlpParams::flatten`] for the same layer sizes.
    pub fn unflatten(layer_sizes: &[usize], flat: &[f64]) -> Result<Self> {
        let mut p = Self::zeros(layer_sizes)?;
        if flat.len() != p.num_params() {
            return Err(Error::Config(format!(
                "flat vector has {} entries, network needs {}",
                flat.len(),
                p.num_params()
            )));
        }
        p.assign_flat(flat);
        Ok(p)
    }

    /// Overwrite parameters from a flat slice of exactly `num_params` values.
    pub(crate) fn assign_flat(&mut self, flat: &[f64]) {
        debug_assert_eq!(flat.len(), self.num_params());
        let mut off = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let (nw, nb) = (w.len(), b.len());
            w.copy_from_slice(&flat[off..off + nw]);
            off += nw;
            b.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
    }

    /// Forward pass without keeping a cache.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::Shape {
                layer: 0,
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        let mut x = input.to_vec();
        let n = self.num_layers();
        for l in 0..n {
            let mut y = affine(&self.weights[l], &self.biases[l], &x);
            if l + 1 < n {
                y.iter_mut().for_each(|v| *v = v.tanh());
            }
            x = y;
        }
        Ok(x)
    }

    /// Adds the gradient of `output . output_grad` into `grad` (flat layout).
    pub fn accumulate_backward(
        &self,
        cache: &ForwardCache,
        output_grad: &[f64],
        grad: &mut [f64],
    ) -> Result<()> {
        if cache.layer_sizes != self.layer_sizes {
            return Err(Error::Internal(
                "forward cache was produced by a network of different shape".into(),
            ));
        }
        if output_grad.len() != self.output_dim() {
            return Err(Error::Shape {
                layer: self.num_layers() - 1,
                expected: self.output_dim(),
                got: output_grad.len(),
            });
        }
        if grad.len() != self.num_params() {
            return Err(Error::Internal(format!(
                "gradient buffer has {} entries, network has {}",
                grad.len(),
                self.num_params()
            )));
        }
        let n = self.num_layers();
        // Offsets of each layer's block in the flat layout.
        let mut offsets = Vec::with_capacity(n);
        let mut off = 0;
        for l in 0..n {
            offsets.push(off);
            off += self.weights[l].len() + self.biases[l].len();
        }

        let mut delta = output_grad.to_vec();
        for l in (0..n).rev() {
            let n_in = self.layer_sizes[l];
            let input = &cache.inputs[l];
            let base = offsets[l];
            let w = &self.weights[l];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &mut grad[base + o * n_in..base + (o + 1) * n_in];
                for (g, &x) in row.iter_mut().zip(input) {
                    *g += d * x;
                }
            }
            let bias_base = base + w.len();
            for (o, &d) in delta.iter().enumerate() {
                grad[bias_base + o] += d;
            }
            if l > 0 {
                let mut prev = vec![0.0; n_in];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let row = &w[o * n_in..(o + 1) * n_in];
                    for (p, &wi) in prev.iter_mut().zip(row) {
                        *p += wi * d;
                    }
                }
                // input[l] = tanh(pre[l-1]); derivative 1 - tanh^2.
                for (p, &a) in prev.iter_mut().zip(input) {
                    *p *= 1.0 - a * a;
                }
                delta = prev;
            }
        }
        Ok(())
    }
}

fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let n_in = x.len();
    b.iter()
        .enumerate()
        .map(|(o, &bo)| {
            let row = &w[o * n_in..(o + 1) * n_in];
            row.iter().zip(x).fold(bo, |acc, (wi, xi)| acc + wi * xi)
        })
        .collect()
}

/// Forward pass returning the output and the activations needed for backprop.
pub fn mlp_forward(params: &MlpParams, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
    let n = params.num_layers();
    let mut inputs = Vec::with_capacity(n);
    let mut pre = Vec::with_capacity(n);
    let mut x = input.to_vec();
    for l in 0..n {
        if x.len() != params.layer_sizes[l] {
            return Err(Error::Shape {
                layer: l,
                expected: params.layer_sizes[l],
                got: x.len(),
            });
        }
        let z = affine(&params.weights[l], &params.biases[l], &x);
        let next = if l + 1 < n {
            z.iter().map(|v| v.tanh()).collect()
        } else {
            z.clone()
        };
        inputs.push(x);
        pre.push(z);
        x = next;
    }
    let cache = ForwardCache {
        layer_sizes: params.layer_sizes.clone(),
        inputs,
        pre,
    };
    Ok((x, cache))
}

/// Gradient of `output . output_grad` with respect to every parameter, in
/// flat order.
pub fn mlp_backward(
    params: &MlpParams,
    cache: &ForwardCache,
    output_grad: &[f64],
) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; params.num_params()];
    params.accumulate_backward(cache, output_grad, &mut grad)?;
    Ok(grad)
}

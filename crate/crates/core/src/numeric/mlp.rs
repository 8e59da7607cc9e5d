//! Fully connected networks with ELU hidden activations and hand-written
//! backpropagation.
//!
//! Parameters live in a flat [`ParameterStore`]. Each layer occupies a
//! contiguous block laid out as `out x in` row-major weights followed by
//! `out` biases, so the parameter count is `sum((in + 1) * out)`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Exponential linear unit with alpha = 1.
#[inline]
pub fn elu(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

/// Derivative of [`elu`].
#[inline]
pub fn elu_grad(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        x.exp()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputTransform {
    Identity,
    Sigmoid,
    Softplus,
}

impl OutputTransform {
    pub fn tag(self) -> u32 {
        match self {
            OutputTransform::Identity => 0,
            OutputTransform::Sigmoid => 1,
            OutputTransform::Softplus => 2,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            0 => Some(OutputTransform::Identity),
            1 => Some(OutputTransform::Sigmoid),
            2 => Some(OutputTransform::Softplus),
            _ => None,
        }
    }

    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            OutputTransform::Identity => z,
            OutputTransform::Sigmoid => sigmoid(z),
            OutputTransform::Softplus => softplus(z),
        }
    }

    #[inline]
    fn grad(self, z: f64, y: f64) -> f64 {
        match self {
            OutputTransform::Identity => 1.0,
            OutputTransform::Sigmoid => y * (1.0 - y),
            OutputTransform::Softplus => sigmoid(z),
        }
    }
}

/// Shape of a network: input width, hidden widths, output width and the
/// transform applied to the final affine layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub output: OutputTransform,
}

impl NetworkSpec {
    pub fn new(input_dim: usize, hidden: &[usize], output_dim: usize) -> Self {
        NetworkSpec {
            input_dim,
            hidden: hidden.to_vec(),
            output_dim,
            output: OutputTransform::Identity,
        }
    }

    pub fn with_output(mut self, output: OutputTransform) -> Self {
        self.output = output;
        self
    }

    /// Checks the shape invariants. An empty hidden list is accepted and
    /// describes a single affine layer.
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::InvalidSpec(format!(
                "input and output widths must be >= 1 (got {} -> {})",
                self.input_dim, self.output_dim
            )));
        }
        if let Some(pos) = self.hidden.iter().position(|&w| w == 0) {
            return Err(Error::InvalidSpec(format!("hidden layer {pos} has width 0")));
        }
        Ok(())
    }

    pub fn layers(&self) -> Vec<LayerDesc> {
        let mut widths = Vec::with_capacity(self.hidden.len() + 2);
        widths.push(self.input_dim);
        widths.extend_from_slice(&self.hidden);
        widths.push(self.output_dim);
        widths
            .windows(2)
            .map(|w| LayerDesc {
                input: w[0],
                output: w[1],
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(LayerDesc::param_count).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDesc {
    pub input: usize,
    pub output: usize,
}

impl LayerDesc {
    pub fn param_count(&self) -> usize {
        (self.input + 1) * self.output
    }
}

/// Flat parameter array plus the layer table that gives it shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterStore {
    layers: Vec<LayerDesc>,
    params: Vec<f64>,
}

impl ParameterStore {
    pub fn zeros(layers: Vec<LayerDesc>) -> Self {
        let n = layers.iter().map(LayerDesc::param_count).sum();
        ParameterStore {
            layers,
            params: vec![0.0; n],
        }
    }

    pub fn from_parts(layers: Vec<LayerDesc>, params: Vec<f64>) -> Result<Self> {
        let n: usize = layers.iter().map(LayerDesc::param_count).sum();
        if n != params.len() {
            return Err(Error::Dimension {
                context: "parameter store",
                expected: n,
                got: params.len(),
            });
        }
        Ok(ParameterStore { layers, params })
    }

    /// Scaled-uniform initialization: weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
    /// zero biases, final layer weights multiplied by `final_scale`.
    pub fn init<R: Rng + ?Sized>(spec: &NetworkSpec, rng: &mut R, final_scale: f64) -> Self {
        let layers = spec.layers();
        let mut store = ParameterStore::zeros(layers.clone());
        let mut offset = 0;
        let last = layers.len() - 1;
        for (l, layer) in layers.iter().enumerate() {
            let bound = 1.0 / (layer.input as f64).sqrt();
            let scale = if l == last { final_scale } else { 1.0 };
            for w in &mut store.params[offset..offset + layer.input * layer.output] {
                *w = rng.random_range(-bound..bound) * scale;
            }
            offset += layer.param_count();
        }
        store
    }

    pub fn layers(&self) -> &[LayerDesc] {
        &self.layers
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// 64-bit content checksum over the little-endian parameter bytes.
    pub fn checksum(&self) -> u64 {
        checksum_f64(&self.params)
    }

    /// True when this store has exactly the layer table `spec` describes.
    pub fn matches(&self, spec: &NetworkSpec) -> bool {
        self.layers == spec.layers()
    }
}

/// First eight bytes of SHA-256 over the little-endian encoding of `values`.
pub fn checksum_f64(values: &[f64]) -> u64 {
    let mut hasher = Sha256::new();
    for v in values {
        hasher.update(v.to_le_bytes());
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest is 32 bytes"))
}

/// Activations recorded by a forward pass, consumed by [`Mlp::backward`].
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
    valid: bool,
}

impl ForwardCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn output(&self) -> &[f64] {
        self.post.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn is_valid(&self) -> bool {
        self.valid
    }

    pub fn invalidate(&mut self) {
        self.valid = false;
    }

    fn prepare(&mut self, layers: &[LayerDesc]) {
        if self.pre.len() != layers.len()
            || self
                .pre
                .iter()
                .zip(layers)
                .any(|(p, l)| p.len() != l.output)
        {
            self.pre = layers.iter().map(|l| vec![0.0; l.output]).collect();
            self.post = layers.iter().map(|l| vec![0.0; l.output]).collect();
            let max = layers
                .iter()
                .map(|l| l.input.max(l.output))
                .max()
                .unwrap_or(0);
            self.delta = vec![0.0; max];
            self.delta_prev = vec![0.0; max];
        }
    }
}

/// A network spec paired with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: NetworkSpec,
    store: ParameterStore,
}

impl Mlp {
    pub fn new(spec: NetworkSpec, store: ParameterStore) -> Result<Self> {
        if !store.matches(&spec) {
            return Err(Error::InvalidSpec(format!(
                "parameter layer table {:?} does not match spec {:?}",
                store.layers(),
                spec.layers()
            )));
        }
        Ok(Mlp { spec, store })
    }

    pub fn init<R: Rng + ?Sized>(spec: NetworkSpec, rng: &mut R, final_scale: f64) -> Result<Self> {
        spec.validate()?;
        let store = ParameterStore::init(&spec, rng, final_scale);
        Ok(Mlp { spec, store })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn store(&self) -> &ParameterStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParameterStore {
        &mut self.store
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim
    }

    pub fn param_count(&self) -> usize {
        self.store.len()
    }

    /// Forward pass; activations are kept in `cache` for a later backward.
    pub fn forward<'c>(&self, input: &[f64], cache: &'c mut ForwardCache) -> Result<&'c [f64]> {
        if input.len() != self.spec.input_dim {
            return Err(Error::Dimension {
                context: "mlp input",
                expected: self.spec.input_dim,
                got: input.len(),
            });
        }
        let layers = self.store.layers();
        cache.prepare(layers);
        cache.input.clear();
        cache.input.extend_from_slice(input);

        let params = self.store.params();
        let last = layers.len() - 1;
        let mut offset = 0;
        for (l, layer) in layers.iter().enumerate() {
            let (n_in, n_out) = (layer.input, layer.output);
            let weights = &params[offset..offset + n_in * n_out];
            let bias = &params[offset + n_in * n_out..offset + layer.param_count()];
            let (done, rest) = cache.post.split_at_mut(l);
            let x: &[f64] = if l == 0 { &cache.input } else { &done[l - 1] };
            let pre = &mut cache.pre[l];
            for o in 0..n_out {
                let row = &weights[o * n_in..(o + 1) * n_in];
                pre[o] = bias[o] + dot(row, x);
            }
            let post = &mut rest[0];
            if l == last {
                let t = self.spec.output;
                for (y, &z) in post.iter_mut().zip(pre.iter()) {
                    *y = t.apply(z);
                }
            } else {
                for (y, &z) in post.iter_mut().zip(pre.iter()) {
                    *y = elu(z);
                }
            }
            offset += layer.param_count();
        }
        cache.valid = true;
        Ok(cache.output())
    }

    /// Convenience forward pass that allocates.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut cache = ForwardCache::new();
        Ok(self.forward(input, &mut cache)?.to_vec())
    }

    /// Backpropagates `output_grad` through the activations in `cache`.
    ///
    /// Parameter gradients are *added* into `param_grad` so minibatches can
    /// accumulate; the input gradient, when requested, is overwritten.
    pub fn backward(
        &self,
        cache: &mut ForwardCache,
        output_grad: &[f64],
        param_grad: Option<&mut [f64]>,
        input_grad: Option<&mut [f64]>,
    ) -> Result<()> {
        if !cache.valid {
            return Err(Error::Contract(
                "mlp backward called without a matching forward pass".into(),
            ));
        }
        if output_grad.len() != self.spec.output_dim {
            return Err(Error::Dimension {
                context: "mlp output gradient",
                expected: self.spec.output_dim,
                got: output_grad.len(),
            });
        }
        if let Some(g) = &param_grad {
            if g.len() != self.store.len() {
                return Err(Error::Dimension {
                    context: "mlp parameter gradient",
                    expected: self.store.len(),
                    got: g.len(),
                });
            }
        }
        if let Some(g) = &input_grad {
            if g.len() != self.spec.input_dim {
                return Err(Error::Dimension {
                    context: "mlp input gradient",
                    expected: self.spec.input_dim,
                    got: g.len(),
                });
            }
        }

        let layers = self.store.layers();
        let params = self.store.params();
        let last = layers.len() - 1;

        // delta holds dL/dz for the current layer.
        {
            let t = self.spec.output;
            let pre = &cache.pre[last];
            let post = &cache.post[last];
            for o in 0..layers[last].output {
                cache.delta[o] = output_grad[o] * t.grad(pre[o], post[o]);
            }
        }

        let mut offset: usize = layers.iter().map(LayerDesc::param_count).sum();
        let mut input_grad = input_grad;
        let mut param_grad = param_grad;
        for l in (0..layers.len()).rev() {
            let layer = layers[l];
            let (n_in, n_out) = (layer.input, layer.output);
            offset -= layer.param_count();
            let weights = &params[offset..offset + n_in * n_out];
            let x: &[f64] = if l == 0 { &cache.input } else { &cache.post[l - 1] };

            if let Some(param_grad) = param_grad.as_deref_mut() {
                let (gw, gb) =
                    param_grad[offset..offset + layer.param_count()].split_at_mut(n_in * n_out);
                for o in 0..n_out {
                    let d = cache.delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    gb[o] += d;
                    let row = &mut gw[o * n_in..(o + 1) * n_in];
                    for (g, &xi) in row.iter_mut().zip(x) {
                        *g += d * xi;
                    }
                }
            }

            let need_input = l > 0 || input_grad.is_some();
            if !need_input {
                break;
            }
            let dx = &mut cache.delta_prev[..n_in];
            dx.iter_mut().for_each(|v| *v = 0.0);
            for o in 0..n_out {
                let d = cache.delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &weights[o * n_in..(o + 1) * n_in];
                for (acc, &w) in dx.iter_mut().zip(row) {
                    *acc += d * w;
                }
            }
            if l == 0 {
                if let Some(g) = input_grad.as_deref_mut() {
                    g.copy_from_slice(dx);
                }
            } else {
                let pre_prev = &cache.pre[l - 1];
                for i in 0..n_in {
                    cache.delta_prev[i] *= elu_grad(pre_prev[i]);
                }
                std::mem::swap(&mut cache.delta, &mut cache.delta_prev);
            }
        }
        Ok(())
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four independent accumulators; the summation order is fixed so results
    // stay bit-reproducible.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Stateless forward pass: `params` shaped by `spec` applied to `input`.
pub fn mlp_forward(params: &ParameterStore, spec: &NetworkSpec, input: &[f64]) -> Result<Vec<f64>> {
    if !params.matches(spec) {
        return Err(Error::InvalidSpec("parameter store does not match spec".into()));
    }
    let mlp = Mlp {
        spec: spec.clone(),
        store: params.clone(),
    };
    mlp.predict(input)
}

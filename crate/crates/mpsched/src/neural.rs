//! Minimal feed-forward network machinery: forward pass, exact
//! backpropagation, ADAM updates and target-network soft updates.
//!
//! Everything is 64-bit and deterministic. Forward passes hand back a cache
//! that is tied to the exact parameter version it was computed from;
//! backprop against a cache from another network or an older version is
//! rejected instead of silently producing wrong gradients.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use crate::rng::SimRng;
use crate::{Error, Result};

static NEXT_NET_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Linear,
    Softmax,
}

impl Activation {
    fn tag(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Linear => "linear",
            Activation::Softmax => "softmax",
        }
    }

    fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "relu" => Some(Activation::Relu),
            "linear" => Some(Activation::Linear),
            "softmax" => Some(Activation::Softmax),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
struct Layer {
    in_dim: usize,
    out_dim: usize,
    /// Row-major `out_dim x in_dim`.
    weights: Vec<f64>,
    biases: Vec<f64>,
    activation: Activation,
}

/// Weights, biases and activation tags of one network.
#[derive(Debug)]
pub struct MlpParams {
    layers: Vec<Layer>,
    id: u64,
    version: u64,
}

impl Clone for MlpParams {
    fn clone(&self) -> Self {
        // A clone is a distinct network: caches from the original must not
        // validate against it once either copy moves on.
        Self {
            layers: self.layers.clone(),
            id: NEXT_NET_ID.fetch_add(1, Ordering::Relaxed),
            version: 0,
        }
    }
}

impl MlpParams {
    /// He-style fan-in uniform initialization; hidden layers are ReLU, the
    /// last layer uses `output` (linear or softmax). Biases start at zero.
    pub fn new(sizes: &[usize], output: Activation, rng: &mut SimRng) -> Result<Self> {
        Self::build(sizes, output, |fan_in, rng| {
            let limit = (6.0 / fan_in as f64).sqrt();
            rng.gen_range(-limit..limit)
        }, rng)
    }

    /// All-zero parameters; handy for crafting nets with known outputs.
    pub fn zeros(sizes: &[usize], output: Activation) -> Result<Self> {
        let mut dummy = crate::rng::stream(0, "zeros", 0);
        Self::build(sizes, output, |_, _| 0.0, &mut dummy)
    }

    fn build(
        sizes: &[usize],
        output: Activation,
        mut init: impl FnMut(usize, &mut SimRng) -> f64,
        rng: &mut SimRng,
    ) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::Shape("a network needs at least input and output sizes".into()));
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::Shape("layer sizes must be positive".into()));
        }
        if output == Activation::Relu {
            return Err(Error::Config("output activation must be linear or softmax".into()));
        }
        let mut layers = Vec::with_capacity(sizes.len() - 1);
        for w in sizes.windows(2) {
            let (in_dim, out_dim) = (w[0], w[1]);
            let weights = (0..in_dim * out_dim).map(|_| init(in_dim, rng)).collect();
            layers.push(Layer {
                in_dim,
                out_dim,
                weights,
                biases: vec![0.0; out_dim],
                activation: Activation::Relu,
            });
        }
        layers.last_mut().expect("at least one layer").activation = output;
        Ok(Self {
            layers,
            id: NEXT_NET_ID.fetch_add(1, Ordering::Relaxed),
            version: 0,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// `(out_dim, in_dim)` of layer `l`.
    pub fn layer_dims(&self, l: usize) -> (usize, usize) {
        (self.layers[l].out_dim, self.layers[l].in_dim)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].in_dim];
        sizes.extend(self.layers.iter().map(|l| l.out_dim));
        sizes
    }

    pub fn output_activation(&self) -> Activation {
        self.layers.last().expect("non-empty").activation
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim
    }

    pub fn weight(&self, l: usize, row: usize, col: usize) -> f64 {
        let layer = &self.layers[l];
        layer.weights[row * layer.in_dim + col]
    }

    pub fn set_weight(&mut self, l: usize, row: usize, col: usize, value: f64) {
        let layer = &mut self.layers[l];
        layer.weights[row * layer.in_dim + col] = value;
        self.version += 1;
    }

    pub fn bias(&self, l: usize, row: usize) -> f64 {
        self.layers[l].biases[row]
    }

    pub fn set_bias(&mut self, l: usize, row: usize, value: f64) {
        self.layers[l].biases[row] = value;
        self.version += 1;
    }

    /// All parameters flattened layer by layer, weights then biases.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.extend_from_slice(&layer.weights);
            out.extend_from_slice(&layer.biases);
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    fn same_shape(&self, other: &Self) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.in_dim == b.in_dim && a.out_dim == b.out_dim)
    }

    fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }

    /// Write the network as a plain text checkpoint: a size header, the
    /// activation tags, then one line of row-major weights and one line of
    /// biases per layer. Floats print in shortest round-trip form.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut out = String::from("mlp");
        for s in self.sizes() {
            let _ = write!(out, " {s}");
        }
        out.push_str("\nactivations");
        for layer in &self.layers {
            let _ = write!(out, " {}", layer.activation.tag());
        }
        out.push('\n');
        for layer in &self.layers {
            for (i, w) in layer.weights.iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                let _ = write!(out, "{w}");
            }
            out.push('\n');
            for (i, b) in layer.biases.iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                let _ = write!(out, "{b}");
            }
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|source| Error::Io { path: path.to_path_buf(), source })
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        let bad = |what: &str| Error::Config(format!("checkpoint {}: {what}", path.display()));
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("missing header"))?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some("mlp") {
            return Err(bad("expected 'mlp' header"));
        }
        let sizes: Vec<usize> = parts
            .map(|p| p.parse().map_err(|_| bad("bad size")))
            .collect::<Result<_>>()?;
        let act_line = lines.next().ok_or_else(|| bad("missing activations"))?;
        let mut act_parts = act_line.split_whitespace();
        if act_parts.next() != Some("activations") {
            return Err(bad("expected 'activations' line"));
        }
        let acts: Vec<Activation> = act_parts
            .map(|t| Activation::from_tag(t).ok_or_else(|| bad("unknown activation tag")))
            .collect::<Result<_>>()?;
        if sizes.len() < 2 || acts.len() != sizes.len() - 1 {
            return Err(bad("size/activation mismatch"));
        }
        let mut net = Self::zeros(&sizes, *acts.last().expect("non-empty"))?;
        for (l, act) in acts.iter().enumerate() {
            net.layers[l].activation = *act;
            let weights = parse_floats(lines.next().ok_or_else(|| bad("missing weights"))?)
                .map_err(|_| bad("bad weight value"))?;
            if weights.len() != net.layers[l].weights.len() {
                return Err(bad("weight count mismatch"));
            }
            net.layers[l].weights = weights;
            let biases = parse_floats(lines.next().ok_or_else(|| bad("missing biases"))?)
                .map_err(|_| bad("bad bias value"))?;
            if biases.len() != net.layers[l].biases.len() {
                return Err(bad("bias count mismatch"));
            }
            net.layers[l].biases = biases;
        }
        Ok(net)
    }
}

fn parse_floats(line: &str) -> std::result::Result<Vec<f64>, std::num::ParseFloatError> {
    line.split_whitespace().map(str::parse).collect()
}

/// Activations captured by a forward pass, consumed by [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    net_id: u64,
    version: u64,
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

/// Run the network; returns the output and the cache for backprop.
pub fn forward(params: &MlpParams, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
    if input.len() != params.input_dim() {
        return Err(Error::Shape(format!(
            "input has {} values, network expects {}",
            input.len(),
            params.input_dim()
        )));
    }
    let mut pre = Vec::with_capacity(params.layers.len());
    let mut post = Vec::with_capacity(params.layers.len());
    let mut current = input.to_vec();
    for layer in &params.layers {
        let mut z = layer.biases.clone();
        for (row, z_row) in z.iter_mut().enumerate() {
            let w_row = &layer.weights[row * layer.in_dim..(row + 1) * layer.in_dim];
            *z_row += w_row.iter().zip(&current).map(|(w, x)| w * x).sum::<f64>();
        }
        let a = match layer.activation {
            Activation::Relu => z.iter().map(|&v| v.max(0.0)).collect(),
            Activation::Linear => z.clone(),
            Activation::Softmax => softmax(&z),
        };
        pre.push(z);
        post.push(a.clone());
        current = a;
    }
    let cache = ForwardCache {
        net_id: params.id,
        version: params.version,
        input: input.to_vec(),
        pre,
        post,
    };
    Ok((current, cache))
}

/// Forward pass without keeping the cache.
pub fn output(params: &MlpParams, input: &[f64]) -> Result<Vec<f64>> {
    forward(params, input).map(|(out, _)| out)
}

/// Max-shifted softmax; finite for logits of any magnitude.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Parameter gradients, shape-matched to an [`MlpParams`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

#[derive(Debug, Clone)]
pub struct LayerGrad {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `out_dim x in_dim`.
    pub d_weights: Vec<f64>,
    pub d_biases: Vec<f64>,
}

impl LayerGrad {
    pub fn dw(&self, row: usize, col: usize) -> f64 {
        self.d_weights[row * self.in_dim + col]
    }
}

impl Gradients {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| LayerGrad {
                    in_dim: l.in_dim,
                    out_dim: l.out_dim,
                    d_weights: vec![0.0; l.weights.len()],
                    d_biases: vec![0.0; l.biases.len()],
                })
                .collect(),
        }
    }

    fn matches(&self, params: &MlpParams) -> bool {
        self.layers.len() == params.layers.len()
            && self
                .layers
                .iter()
                .zip(&params.layers)
                .all(|(g, l)| g.in_dim == l.in_dim && g.out_dim == l.out_dim)
    }

    pub fn accumulate(&mut self, other: &Gradients) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::Shape("gradient layer count mismatch".into()));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            if a.in_dim != b.in_dim || a.out_dim != b.out_dim {
                return Err(Error::Shape("gradient layer dims mismatch".into()));
            }
            for (x, y) in a.d_weights.iter_mut().zip(&b.d_weights) {
                *x += y;
            }
            for (x, y) in a.d_biases.iter_mut().zip(&b.d_biases) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for layer in &mut self.layers {
            for v in layer.d_weights.iter_mut().chain(layer.d_biases.iter_mut()) {
                *v *= factor;
            }
        }
    }

    fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.d_weights.iter().chain(&l.d_biases).all(|v| v.is_finite()))
    }
}

fn activation_backward(
    activation: Activation,
    pre: &[f64],
    post: &[f64],
    upstream: &[f64],
) -> Vec<f64> {
    match activation {
        Activation::Linear => upstream.to_vec(),
        Activation::Relu => upstream
            .iter()
            .zip(pre)
            .map(|(&g, &z)| if z > 0.0 { g } else { 0.0 })
            .collect(),
        Activation::Softmax => {
            let dot: f64 = upstream.iter().zip(post).map(|(g, p)| g * p).sum();
            upstream.iter().zip(post).map(|(&g, &p)| p * (g - dot)).collect()
        }
    }
}

fn check_cache(params: &MlpParams, cache: &ForwardCache) -> Result<()> {
    if cache.net_id != params.id || cache.version != params.version {
        return Err(Error::StaleCache(
            "cache was produced by a different network or parameter version".into(),
        ));
    }
    Ok(())
}

fn backprop(
    params: &MlpParams,
    cache: &ForwardCache,
    seed: &[f64],
    through_output_activation: bool,
) -> Result<Gradients> {
    check_cache(params, cache)?;
    let last = params.layers.len() - 1;
    if seed.len() != params.layers[last].out_dim {
        return Err(Error::Shape(format!(
            "gradient has {} values, output has {}",
            seed.len(),
            params.layers[last].out_dim
        )));
    }
    let mut grads = Gradients::zeros_like(params);
    let mut delta = if through_output_activation {
        activation_backward(params.layers[last].activation, &cache.pre[last], &cache.post[last], seed)
    } else {
        seed.to_vec()
    };
    for l in (0..=last).rev() {
        let layer = &params.layers[l];
        let inputs: &[f64] = if l == 0 { &cache.input } else { &cache.post[l - 1] };
        let grad = &mut grads.layers[l];
        for (row, &d) in delta.iter().enumerate() {
            grad.d_biases[row] += d;
            let w_row = &mut grad.d_weights[row * layer.in_dim..(row + 1) * layer.in_dim];
            for (col, x) in inputs.iter().enumerate() {
                w_row[col] += d * x;
            }
        }
        if l > 0 {
            let mut upstream = vec![0.0; layer.in_dim];
            for (row, &d) in delta.iter().enumerate() {
                let w_row = &layer.weights[row * layer.in_dim..(row + 1) * layer.in_dim];
                for (col, u) in upstream.iter_mut().enumerate() {
                    *u += w_row[col] * d;
                }
            }
            delta = activation_backward(
                params.layers[l - 1].activation,
                &cache.pre[l - 1],
                &cache.post[l - 1],
                &upstream,
            );
        }
    }
    Ok(grads)
}

/// Gradients of a scalar loss with respect to every parameter, given the
/// loss gradient at the network output (after the output activation).
pub fn backward(params: &MlpParams, cache: &ForwardCache, d_output: &[f64]) -> Result<Gradients> {
    backprop(params, cache, d_output, true)
}

/// Like [`backward`], but the seed gradient is taken at the final
/// pre-activation (the logits). Numerically safer for softmax losses whose
/// logit gradient is known in closed form.
pub fn backward_from_logits(
    params: &MlpParams,
    cache: &ForwardCache,
    d_logits: &[f64],
) -> Result<Gradients> {
    backprop(params, cache, d_logits, false)
}

/// ADAM hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamHyper {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self { learning_rate, ..Self::default() }
    }
}

/// First/second moment accumulators and step counter for one network.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Gradients,
    v: Gradients,
    pub step: u64,
    pub hyper: AdamHyper,
}

impl AdamState {
    pub fn new(params: &MlpParams, hyper: AdamHyper) -> Self {
        Self {
            m: Gradients::zeros_like(params),
            v: Gradients::zeros_like(params),
            step: 0,
            hyper,
        }
    }
}

/// One bias-corrected ADAM update. Rejects non-finite gradients outright
/// and verifies the parameters stay finite.
pub fn adam_step(params: &mut MlpParams, state: &mut AdamState, grads: &Gradients) -> Result<()> {
    if !grads.matches(params) || !state.m.matches(params) {
        return Err(Error::Shape("gradients do not match the network".into()));
    }
    if !grads.all_finite() {
        return Err(Error::NonFinite("gradient contains NaN or infinity".into()));
    }
    state.step += 1;
    let h = state.hyper;
    let bc1 = 1.0 - h.beta1.powi(state.step as i32);
    let bc2 = 1.0 - h.beta2.powi(state.step as i32);
    for (l, layer) in params.layers.iter_mut().enumerate() {
        let (gm, gv, gg) = (&mut state.m.layers[l], &mut state.v.layers[l], &grads.layers[l]);
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = h.beta1 * *m + (1.0 - h.beta1) * g;
            *v = h.beta2 * *v + (1.0 - h.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= h.learning_rate * m_hat / (v_hat.sqrt() + h.epsilon);
        };
        for i in 0..layer.weights.len() {
            update(&mut layer.weights[i], &mut gm.d_weights[i], &mut gv.d_weights[i], gg.d_weights[i]);
        }
        for i in 0..layer.biases.len() {
            update(&mut layer.biases[i], &mut gm.d_biases[i], &mut gv.d_biases[i], gg.d_biases[i]);
        }
    }
    params.version += 1;
    if !params.all_finite() {
        return Err(Error::NonFinite("parameters became non-finite after update".into()));
    }
    Ok(())
}

/// Soft update: `target = alpha * target + (1 - alpha) * online`.
pub fn soft_update(target: &mut MlpParams, online: &MlpParams, alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("soft-update alpha must lie in [0, 1], got {alpha}")));
    }
    if !target.same_shape(online) {
        return Err(Error::Shape("target and online networks differ in shape".into()));
    }
    for (t, o) in target.layers.iter_mut().zip(&online.layers) {
        for (tw, ow) in t.weights.iter_mut().zip(&o.weights) {
            *tw = alpha * *tw + (1.0 - alpha) * ow;
        }
        for (tb, ob) in t.biases.iter_mut().zip(&o.biases) {
            *tb = alpha * *tb + (1.0 - alpha) * ob;
        }
    }
    target.version += 1;
    Ok(())
}

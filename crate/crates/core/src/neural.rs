//! Dense feed-forward networks with exact analytic gradients, SGD/Adam
//! updates, soft target updates and a finite-difference gradient checker.
//!
//! Batched passes take one example per row. All arithmetic is `f64`.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Identity,
    Softmax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `outputs × inputs`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    /// Uniform(±1/√fan_in) weights, zero bias.
    pub fn new(inputs: usize, outputs: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (inputs.max(1) as f64).sqrt();
        let weights = Array2::from_shape_fn((outputs, inputs), |_| rng.gen_range(-bound..bound));
        DenseLayer {
            weights,
            bias: Array1::zeros(outputs),
            activation,
        }
    }

    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        DenseLayer {
            weights: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

pub(crate) fn softmax_rows(z: &mut Array2<f64>) {
    for mut row in z.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|x| x / sum);
    }
}

/// Numerically stable softmax of one vector.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Vector-Jacobian product of softmax: `s ⊙ (g − ⟨g, s⟩)`.
pub fn softmax_backward(probs: &[f64], grad: &[f64]) -> Vec<f64> {
    let dot: f64 = probs.iter().zip(grad).map(|(p, g)| p * g).sum();
    probs.iter().zip(grad).map(|(p, g)| p * (g - dot)).collect()
}

/// Activation trace of a batched forward pass.
#[derive(Debug, Clone)]
pub struct Cache {
    inputs: Vec<Array2<f64>>,
    outputs: Vec<Array2<f64>>,
}

impl Cache {
    pub fn output(&self) -> &Array2<f64> {
        self.outputs.last().expect("network has at least one layer")
    }

    pub fn rows(&self) -> usize {
        self.inputs[0].nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Parameter gradients shaped like a [`Network`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights += &b.weights;
            a.bias += &b.bias;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights *= factor;
            l.bias *= factor;
        }
    }

    /// Flattened in the same order as [`Network::get_param`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().all(|&x| x == 0.0) && l.bias.iter().all(|&x| x == 0.0))
    }

    fn matches(&self, net: &Network) -> bool {
        self.layers.len() == net.layers.len()
            && self.layers.iter().zip(&net.layers).all(|(g, l)| {
                g.weights.raw_dim() == l.weights.raw_dim() && g.bias.raw_dim() == l.bias.raw_dim()
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<DenseLayer>,
}

impl Network {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("network needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::Shape(format!(
                    "layer {i} emits {} values but layer {} expects {}",
                    pair[0].outputs(),
                    i + 1,
                    pair[1].inputs()
                )));
            }
        }
        for l in &layers {
            if l.bias.len() != l.outputs() {
                return Err(Error::Shape("bias length differs from layer outputs".into()));
            }
        }
        Ok(Network { layers })
    }

    /// Fully connected stack over `sizes` (input first) with `hidden` on every
    /// layer except the last, which uses `output`.
    pub fn mlp(sizes: &[usize], hidden: Activation, output: Activation, rng: &mut impl Rng) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { output } else { hidden };
                DenseLayer::new(sizes[i], sizes[i + 1], act, rng)
            })
            .collect();
        Network { layers }
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_size(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    pub fn same_architecture(&self, other: &Network) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.weights.raw_dim() == b.weights.raw_dim() && a.activation == b.activation
            })
    }

    /// Forward pass of a single input vector.
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, Cache)> {
        let x = ArrayView2::from_shape((1, input.len()), input)
            .map_err(|e| Error::Shape(e.to_string()))?;
        let (out, cache) = self.forward_batch(x)?;
        Ok((out.into_raw_vec_and_offset().0, cache))
    }

    pub fn forward_batch(&self, inputs: ArrayView2<f64>) -> Result<(Array2<f64>, Cache)> {
        self.check_input(inputs.ncols())?;
        let mut cache = Cache {
            inputs: Vec::with_capacity(self.layers.len()),
            outputs: Vec::with_capacity(self.layers.len()),
        };
        let mut x = inputs.to_owned();
        for layer in &self.layers {
            let y = Self::layer_forward(layer, x.view());
            cache.inputs.push(x);
            x = y.clone();
            cache.outputs.push(y);
        }
        Ok((x, cache))
    }

    /// Forward pass without keeping the activation trace.
    pub fn predict_batch(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(inputs.ncols())?;
        let mut x = Self::layer_forward(&self.layers[0], inputs);
        for layer in &self.layers[1..] {
            x = Self::layer_forward(layer, x.view());
        }
        Ok(x)
    }

    fn check_input(&self, got: usize) -> Result<()> {
        if got != self.input_size() {
            return Err(Error::Shape(format!(
                "network expects {} inputs, got {got}",
                self.input_size()
            )));
        }
        Ok(())
    }

    fn layer_forward(layer: &DenseLayer, x: ArrayView2<f64>) -> Array2<f64> {
        let mut z = x.dot(&layer.weights.t());
        z += &layer.bias;
        match layer.activation {
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
            Activation::Identity => {}
            Activation::Softmax => softmax_rows(&mut z),
        }
        z
    }

    fn check_cache(&self, cache: &Cache, output_grad: &ArrayView2<f64>) -> Result<()> {
        let stale = cache.inputs.len() != self.layers.len()
            || cache
                .inputs
                .iter()
                .zip(&self.layers)
                .any(|(x, l)| x.ncols() != l.inputs())
            || output_grad.dim() != cache.output().dim();
        if stale {
            return Err(Error::Shape("cache does not match this network or gradient".into()));
        }
        Ok(())
    }

    fn pre_activation_grad(layer: &DenseLayer, out: &Array2<f64>, mut grad: Array2<f64>) -> Array2<f64> {
        match layer.activation {
            Activation::Relu => {
                Zip::from(&mut grad).and(out).for_each(|g, &y| {
                    if y <= 0.0 {
                        *g = 0.0;
                    }
                });
            }
            Activation::Identity => {}
            Activation::Softmax => {
                for (mut g, s) in grad.rows_mut().into_iter().zip(out.rows()) {
                    let dot = g.dot(&s);
                    Zip::from(&mut g).and(&s).for_each(|g, &s| *g = s * (*g - dot));
                }
            }
        }
        grad
    }

    /// Backpropagates `output_grad` (∂loss/∂output, one row per example) and
    /// returns parameter gradients summed over rows plus ∂loss/∂input.
    pub fn backward(
        &self,
        cache: &Cache,
        output_grad: ArrayView2<f64>,
    ) -> Result<(Gradients, Array2<f64>)> {
        self.check_cache(cache, &output_grad)?;
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut grad = output_grad.to_owned();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let dz = Self::pre_activation_grad(layer, &cache.outputs[i], grad);
            grads.push(LayerGrad {
                weights: dz.t().dot(&cache.inputs[i]),
                bias: dz.sum_axis(Axis(0)),
            });
            grad = dz.dot(&layer.weights);
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, grad))
    }

    /// Only ∂loss/∂input; skips the parameter gradients.
    pub fn input_gradient(&self, cache: &Cache, output_grad: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_cache(cache, &output_grad)?;
        let mut grad = output_grad.to_owned();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let dz = Self::pre_activation_grad(layer, &cache.outputs[i], grad);
            grad = dz.dot(&layer.weights);
        }
        Ok(grad)
    }

    fn locate(&self, mut index: usize) -> (usize, bool, usize) {
        for (li, l) in self.layers.iter().enumerate() {
            if index < l.weights.len() {
                return (li, true, index);
            }
            index -= l.weights.len();
            if index < l.bias.len() {
                return (li, false, index);
            }
            index -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    /// Parameter `index` in layer order, row-major weights then bias.
    pub fn get_param(&self, index: usize) -> f64 {
        let (li, is_w, i) = self.locate(index);
        let l = &self.layers[li];
        if is_w {
            l.weights.as_slice().expect("standard layout")[i]
        } else {
            l.bias[i]
        }
    }

    pub fn set_param(&mut self, index: usize, value: f64) {
        let (li, is_w, i) = self.locate(index);
        let l = &mut self.layers[li];
        if is_w {
            l.weights.as_slice_mut().expect("standard layout")[i] = value;
        } else {
            l.bias[i] = value;
        }
    }

    /// FNV-1a over the bit patterns of every parameter.
    pub fn checksum(&self) -> u64 {
        let mut h = Fnv::default();
        for l in &self.layers {
            for &w in l.weights.iter().chain(l.bias.iter()) {
                h.write(w.to_bits());
            }
        }
        h.0
    }

    pub fn to_record(&self) -> NetworkRecord {
        NetworkRecord {
            format_version: CHECKPOINT_VERSION,
            layers: self
                .layers
                .iter()
                .map(|l| LayerRecord {
                    inputs: l.inputs(),
                    outputs: l.outputs(),
                    activation: l.activation,
                    weights: l.weights.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_record(record: &NetworkRecord) -> Result<Self> {
        if record.format_version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {} is not supported (expected {CHECKPOINT_VERSION})",
                record.format_version
            )));
        }
        let layers = record
            .layers
            .iter()
            .map(|r| {
                let weights = Array2::from_shape_vec((r.outputs, r.inputs), r.weights.clone())
                    .map_err(|e| Error::Checkpoint(e.to_string()))?;
                if r.bias.len() != r.outputs {
                    return Err(Error::Checkpoint("bias length differs from outputs".into()));
                }
                if weights.iter().chain(&r.bias).any(|x| !x.is_finite()) {
                    return Err(Error::Checkpoint("non-finite parameter".into()));
                }
                Ok(DenseLayer {
                    weights,
                    bias: Array1::from(r.bias.clone()),
                    activation: r.activation,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Network::new(layers).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

#[derive(Default)]
pub(crate) struct Fnv(pub u64);

impl Fnv {
    pub fn write(&mut self, word: u64) {
        if self.0 == 0 {
            self.0 = 0xcbf2_9ce4_8422_2325;
        }
        for b in word.to_le_bytes() {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
    /// Row-major, `outputs × inputs`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkRecord {
    pub format_version: u32,
    pub layers: Vec<LayerRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Descend,
    Ascend,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub step: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn sgd(lr: f64) -> Self {
        Optimizer {
            kind: OptimizerKind::Sgd,
            lr,
            step: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    pub fn adam(lr: f64) -> Self {
        Optimizer {
            kind: OptimizerKind::Adam {
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
            ..Self::sgd(lr)
        }
    }

    /// One step on `net`. Ascending with `g` is descending with `−g`.
    pub fn apply(&mut self, net: &mut Network, grads: &Gradients, direction: Direction) -> Result<()> {
        if !grads.matches(net) {
            return Err(Error::Shape("gradients are not shaped like the network".into()));
        }
        let sign = match direction {
            Direction::Descend => 1.0,
            Direction::Ascend => -1.0,
        };
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                let step = self.lr * sign;
                for (l, g) in net.layers.iter_mut().zip(&grads.layers) {
                    l.weights.scaled_add(-step, &g.weights);
                    l.bias.scaled_add(-step, &g.bias);
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                if self.first_moment.is_empty() {
                    for l in &net.layers {
                        self.first_moment.push(vec![0.0; l.weights.len()]);
                        self.first_moment.push(vec![0.0; l.bias.len()]);
                    }
                    self.second_moment = self.first_moment.clone();
                }
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                let step_size = self.lr / c1;
                let inv_sqrt_c2 = 1.0 / c2.sqrt();
                let mut slot = 0;
                for (l, g) in net.layers.iter_mut().zip(&grads.layers) {
                    let gw = g.weights.as_standard_layout();
                    let gb = g.bias.as_standard_layout();
                    let params = [
                        (l.weights.as_slice_mut().expect("standard layout"), gw.as_slice().expect("standard layout")),
                        (l.bias.as_slice_mut().expect("contiguous"), gb.as_slice().expect("contiguous")),
                    ];
                    for (p, g) in params {
                        let m = &mut self.first_moment[slot];
                        let v = &mut self.second_moment[slot];
                        if m.len() != p.len() {
                            return Err(Error::Shape("optimizer state does not match network".into()));
                        }
                        for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                            let g = sign * g;
                            *m = beta1 * *m + (1.0 - beta1) * g;
                            *v = beta2 * *v + (1.0 - beta2) * g * g;
                            *p -= step_size * *m / (v.sqrt() * inv_sqrt_c2 + eps);
                        }
                        slot += 1;
                    }
                }
            }
        }
        Ok(())
    }
}

pub fn apply_update(
    net: &mut Network,
    grads: &Gradients,
    opt: &mut Optimizer,
    direction: Direction,
) -> Result<()> {
    opt.apply(net, grads, direction)
}

/// `target ← (1−τ)·target + τ·online`, parameter-wise.
pub fn soft_update(target: &mut Network, online: &Network, tau: f64) -> Result<()> {
    if !target.same_architecture(online) {
        return Err(Error::Shape("soft update between different architectures".into()));
    }
    let keep = 1.0 - tau;
    for (t, o) in target.layers.iter_mut().zip(&online.layers) {
        Zip::from(&mut t.weights)
            .and(&o.weights)
            .for_each(|t, &o| *t = keep * *t + tau * o);
        Zip::from(&mut t.bias)
            .and(&o.bias)
            .for_each(|t, &o| *t = keep * *t + tau * o);
    }
    Ok(())
}

/// Anything whose parameters can be addressed by a flat index.
pub trait Parameterized {
    fn param_count(&self) -> usize;
    fn get_param(&self, index: usize) -> f64;
    fn set_param(&mut self, index: usize, value: f64);
}

impl Parameterized for Network {
    fn param_count(&self) -> usize {
        Network::param_count(self)
    }
    fn get_param(&self, index: usize) -> f64 {
        Network::get_param(self, index)
    }
    fn set_param(&mut self, index: usize, value: f64) {
        Network::set_param(self, index, value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheckReport {
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
    pub checked: usize,
    /// Probes that only matched at the refined step.
    pub refined: usize,
}

impl GradientCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error <= tolerance
    }
}

/// Relative error with a floor on the denominator so vanishing gradients do
/// not blow up the ratio.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compares `analytic` (flat, in [`Parameterized`] order) with central
/// differences of `loss`. At most `max_params` evenly spaced parameters are
/// probed; `None` probes every parameter.
pub fn finite_difference_check<P, F>(
    model: &P,
    loss: F,
    analytic: &[f64],
    step: f64,
    max_params: Option<usize>,
) -> GradientCheckReport
where
    P: Parameterized + Clone,
    F: Fn(&P) -> f64,
{
    fd_check(model, loss, analytic, step, max_params, None)
}

/// Like [`finite_difference_check`], but a probe whose error exceeds
/// `tolerance` is repeated with a step ten times smaller. A ±step probe can
/// straddle a ReLU kink, where the central difference is not a derivative;
/// the smaller step moves off the kink while the analytic gradient still has
/// to match. Such probes are counted in `refined`.
pub fn finite_difference_check_piecewise<P, F>(
    model: &P,
    loss: F,
    analytic: &[f64],
    step: f64,
    max_params: Option<usize>,
    tolerance: f64,
) -> GradientCheckReport
where
    P: Parameterized + Clone,
    F: Fn(&P) -> f64,
{
    fd_check(model, loss, analytic, step, max_params, Some(tolerance))
}

fn fd_check<P, F>(
    model: &P,
    loss: F,
    analytic: &[f64],
    step: f64,
    max_params: Option<usize>,
    refine_above: Option<f64>,
) -> GradientCheckReport
where
    P: Parameterized + Clone,
    F: Fn(&P) -> f64,
{
    let n = model.param_count();
    assert_eq!(analytic.len(), n, "analytic gradient length differs from parameter count");
    let stride = match max_params {
        Some(m) if m > 0 && m < n => n.div_ceil(m),
        _ => 1,
    };
    let mut probe = model.clone();
    let mut report = GradientCheckReport {
        max_relative_error: 0.0,
        max_absolute_error: 0.0,
        checked: 0,
        refined: 0,
    };
    let central = |probe: &mut P, i: usize, h: f64| {
        let original = probe.get_param(i);
        probe.set_param(i, original + h);
        let up = loss(probe);
        probe.set_param(i, original - h);
        let down = loss(probe);
        probe.set_param(i, original);
        (up - down) / (2.0 * h)
    };
    for i in (0..n).step_by(stride) {
        let mut numeric = central(&mut probe, i, step);
        if let Some(tol) = refine_above {
            if relative_error(analytic[i], numeric) > tol {
                numeric = central(&mut probe, i, step / 10.0);
                report.refined += 1;
            }
        }
        report.max_relative_error = report.max_relative_error.max(relative_error(analytic[i], numeric));
        report.max_absolute_error = report.max_absolute_error.max((analytic[i] - numeric).abs());
        report.checked += 1;
    }
    report
}

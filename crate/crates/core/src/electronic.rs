//! Small digital back-ends placed behind the sensor array.
//!
//! Every network maps a flattened `p × p` sensor image to class logits and
//! exposes its parameters as slots, in the same way as the optical stacks.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::ElectronicSection;
use crate::error::{D2nnError, Result};

pub const BN_EPS: f64 = 1e-5;
/// Weight of the newest batch statistics in the running averages.
pub const BN_MOMENTUM: f64 = 0.1;

#[inline]
pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Uniform initialization in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(rng: &mut impl Rng, n: usize, fan_in: usize, fan_out: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-limit..limit)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BatchNormMode {
    Training,
    Inference,
}

/// Per-feature batch normalization with trainable scale and shift.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

/// Cached batch statistics for the backward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    normalized: Vec<Vec<f64>>,
    inv_std: Vec<f64>,
}

impl BatchNorm {
    pub fn new(features: usize) -> Self {
        BatchNorm {
            scale: vec![1.0; features],
            shift: vec![0.0; features],
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
        }
    }

    pub fn features(&self) -> usize {
        self.scale.len()
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.features() {
            return Err(D2nnError::Shape(format!(
                "batch norm expects {} features, got {}",
                self.features(),
                x.len()
            )));
        }
        Ok(())
    }

    /// Normalizes with batch statistics and returns what the backward pass needs.
    /// Running statistics are not touched; see [`Self::update_running`].
    pub fn forward_train(&self, batch: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, BatchNormCache, Vec<f64>, Vec<f64>)> {
        if batch.len() < 2 {
            return Err(D2nnError::InvalidInput(format!(
                "batch normalization needs at least 2 samples in training mode, got {}",
                batch.len()
            )));
        }
        for x in batch {
            self.check(x)?;
        }
        let f = self.features();
        let n = batch.len() as f64;
        let mut mean = vec![0.0; f];
        for x in batch {
            mean.iter_mut().zip(x).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; f];
        for x in batch {
            for j in 0..f {
                let d = x[j] - mean[j];
                var[j] += d * d;
            }
        }
        var.iter_mut().for_each(|v| *v /= n);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let normalized: Vec<Vec<f64>> = batch
            .iter()
            .map(|x| (0..f).map(|j| (x[j] - mean[j]) * inv_std[j]).collect())
            .collect();
        let out = normalized
            .iter()
            .map(|h| (0..f).map(|j| self.scale[j] * h[j] + self.shift[j]).collect())
            .collect();
        Ok((out, BatchNormCache { normalized, inv_std }, mean, var))
    }

    pub fn update_running(&mut self, mean: &[f64], var: &[f64]) {
        let m = self.momentum;
        for j in 0..self.features() {
            self.running_mean[j] = (1.0 - m) * self.running_mean[j] + m * mean[j];
            self.running_var[j] = (1.0 - m) * self.running_var[j] + m * var[j];
        }
    }

    pub fn forward_inference(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        Ok((0..self.features())
            .map(|j| {
                let h = (x[j] - self.running_mean[j]) / (self.running_var[j] + self.eps).sqrt();
                self.scale[j] * h + self.shift[j]
            })
            .collect())
    }

    /// Batch forward in either mode; training mode also updates the running statistics.
    pub fn forward(&mut self, batch: &[Vec<f64>], mode: BatchNormMode) -> Result<Vec<Vec<f64>>> {
        match mode {
            BatchNormMode::Training => {
                let (out, _, mean, var) = self.forward_train(batch)?;
                self.update_running(&mean, &var);
                Ok(out)
            }
            BatchNormMode::Inference => batch.iter().map(|x| self.forward_inference(x)).collect(),
        }
    }

    /// Returns `(d_scale, d_shift, d_inputs)` for upstream gradients `d_out`.
    pub fn backward(&self, cache: &BatchNormCache, d_out: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>, Vec<Vec<f64>>) {
        let f = self.features();
        let n = d_out.len() as f64;
        let mut d_scale = vec![0.0; f];
        let mut d_shift = vec![0.0; f];
        for (dy, h) in d_out.iter().zip(&cache.normalized) {
            for j in 0..f {
                d_scale[j] += dy[j] * h[j];
                d_shift[j] += dy[j];
            }
        }
        // dx = inv_std/n · (n·dĥ - Σdĥ - ĥ·Σ(dĥ·ĥ)), with dĥ = scale·dy
        let d_x = d_out
            .iter()
            .zip(&cache.normalized)
            .map(|(dy, h)| {
                (0..f)
                    .map(|j| {
                        let g = self.scale[j];
                        cache.inv_std[j] / n * (n * g * dy[j] - g * d_shift[j] - h[j] * g * d_scale[j])
                    })
                    .collect()
            })
            .collect();
        (d_scale, d_shift, d_x)
    }
}

/// Fully connected layer `y = Wᵀx + b`, with `W` stored row-major as `inputs × outputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct FcLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl FcLayer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        FcLayer {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }

    pub fn glorot(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        FcLayer {
            weights: glorot_uniform(rng, inputs * outputs, inputs, outputs),
            ..Self::zeros(inputs, outputs)
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.inputs {
            return Err(D2nnError::Shape(format!(
                "fully connected layer expects {} inputs, got {}",
                self.inputs,
                x.len()
            )));
        }
        let mut y = self.biases.clone();
        for (i, &xi) in x.iter().enumerate() {
            if xi != 0.0 {
                let row = &self.weights[i * self.outputs..(i + 1) * self.outputs];
                y.iter_mut().zip(row).for_each(|(y, w)| *y += w * xi);
            }
        }
        Ok(y)
    }

    /// Accumulates parameter gradients into `d_w`, `d_b` and returns `dL/dx`.
    fn backward(&self, x: &[f64], d_y: &[f64], d_w: &mut [f64], d_b: &mut [f64]) -> Vec<f64> {
        d_b.iter_mut().zip(d_y).for_each(|(d, g)| *d += g);
        let mut d_x = vec![0.0; self.inputs];
        for i in 0..self.inputs {
            let row = &self.weights[i * self.outputs..(i + 1) * self.outputs];
            let d_row = &mut d_w[i * self.outputs..(i + 1) * self.outputs];
            let mut acc = 0.0;
            for o in 0..self.outputs {
                d_row[o] += x[i] * d_y[o];
                acc += row[o] * d_y[o];
            }
            d_x[i] = acc;
        }
        d_x
    }
}

/// Single-feature "valid" convolution (cross-correlation) with a square kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub kernel_size: usize,
    pub stride: usize,
    pub kernel: Vec<f64>,
    pub bias: f64,
}

impl ConvLayer {
    pub fn output_side(&self, input_side: usize) -> usize {
        if input_side < self.kernel_size {
            0
        } else {
            (input_side - self.kernel_size) / self.stride + 1
        }
    }

    pub fn forward(&self, x: &[f64], side: usize) -> Vec<f64> {
        let (k, s) = (self.kernel_size, self.stride);
        let out = self.output_side(side);
        let mut y = vec![self.bias; out * out];
        for oy in 0..out {
            for ox in 0..out {
                let mut acc = 0.0;
                for ky in 0..k {
                    let row = (oy * s + ky) * side + ox * s;
                    for kx in 0..k {
                        acc += self.kernel[ky * k + kx] * x[row + kx];
                    }
                }
                y[oy * out + ox] += acc;
            }
        }
        y
    }

    fn backward(&self, x: &[f64], side: usize, d_y: &[f64], d_k: &mut [f64], d_b: &mut f64) -> Vec<f64> {
        let (k, s) = (self.kernel_size, self.stride);
        let out = self.output_side(side);
        let mut d_x = vec![0.0; side * side];
        for oy in 0..out {
            for ox in 0..out {
                let g = d_y[oy * out + ox];
                *d_b += g;
                for ky in 0..k {
                    let row = (oy * s + ky) * side + ox * s;
                    for kx in 0..k {
                        d_k[ky * k + kx] += g * x[row + kx];
                        d_x[row + kx] += g * self.kernel[ky * k + kx];
                    }
                }
            }
        }
        d_x
    }
}

pub const CONV1_KERNEL: usize = 6;
pub const CONV2_KERNEL: usize = 3;
pub const HIDDEN_UNITS: usize = 30;

/// Stride of both convolutions for a `p × p` sensor: 1 for 10×10 and smaller, 2 above.
pub fn conv_stride(p: usize) -> usize {
    if p <= 10 {
        1
    } else {
        2
    }
}

/// conv 6×6 → ReLU → conv 3×3 → ReLU → FC 30 → ReLU → FC classes.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2F1Net {
    pub side: usize,
    pub conv1: ConvLayer,
    pub conv2: ConvLayer,
    pub fc1: FcLayer,
    pub fc2: FcLayer,
}

impl Conv2F1Net {
    /// Layer geometry for a `side × side` input; all parameters zero.
    pub fn zeros(side: usize, classes: usize) -> Result<Self> {
        let stride = conv_stride(side);
        let conv1 = ConvLayer {
            kernel_size: CONV1_KERNEL,
            stride,
            kernel: vec![0.0; CONV1_KERNEL * CONV1_KERNEL],
            bias: 0.0,
        };
        let conv2 = ConvLayer {
            kernel_size: CONV2_KERNEL,
            stride,
            kernel: vec![0.0; CONV2_KERNEL * CONV2_KERNEL],
            bias: 0.0,
        };
        let s2 = conv2.output_side(conv1.output_side(side));
        if s2 == 0 {
            return Err(D2nnError::config(
                "sensor.pixels",
                format!("a {side}x{side} sensor is too small for the convolutional back-end"),
            ));
        }
        Ok(Conv2F1Net {
            side,
            conv1,
            conv2,
            fc1: FcLayer::zeros(s2 * s2, HIDDEN_UNITS),
            fc2: FcLayer::zeros(HIDDEN_UNITS, classes),
        })
    }

    pub fn glorot(side: usize, classes: usize, rng: &mut impl Rng) -> Result<Self> {
        let mut net = Self::zeros(side, classes)?;
        let k1 = CONV1_KERNEL * CONV1_KERNEL;
        let k2 = CONV2_KERNEL * CONV2_KERNEL;
        net.conv1.kernel = glorot_uniform(rng, k1, k1, k1);
        net.conv2.kernel = glorot_uniform(rng, k2, k2, k2);
        net.fc1 = FcLayer::glorot(net.fc1.inputs, HIDDEN_UNITS, rng);
        net.fc2 = FcLayer::glorot(HIDDEN_UNITS, classes, rng);
        Ok(net)
    }

    pub fn side1(&self) -> usize {
        self.conv1.output_side(self.side)
    }

    pub fn side2(&self) -> usize {
        self.conv2.output_side(self.side1())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElectronicKind {
    /// A single fully connected layer.
    Fc,
    /// Two single-feature convolutions followed by two fully connected layers.
    #[serde(rename = "2c2f1")]
    Conv2F1,
}

impl std::fmt::Display for ElectronicKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ElectronicKind::Fc => "fc",
            ElectronicKind::Conv2F1 => "2c2f1",
        })
    }
}

/// Architecture of an electronic back-end, independent of its parameter values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetDescriptor {
    pub kind: ElectronicKind,
    /// Sensor pixels per axis.
    pub pixels: usize,
    pub classes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ElectronicNet {
    Fc(FcLayer),
    Conv2F1(Conv2F1Net),
}

/// Intermediate activations of one sample.
#[derive(Debug, Clone)]
pub enum NetCache {
    Fc { x: Vec<f64> },
    Conv2F1 { x: Vec<f64>, a1: Vec<f64>, a2: Vec<f64>, a3: Vec<f64> },
}

impl ElectronicNet {
    pub fn zeros(desc: NetDescriptor) -> Result<Self> {
        match desc.kind {
            ElectronicKind::Fc => Ok(ElectronicNet::Fc(FcLayer::zeros(desc.pixels * desc.pixels, desc.classes))),
            ElectronicKind::Conv2F1 => Ok(ElectronicNet::Conv2F1(Conv2F1Net::zeros(desc.pixels, desc.classes)?)),
        }
    }

    pub fn glorot(desc: NetDescriptor, rng: &mut impl Rng) -> Result<Self> {
        match desc.kind {
            ElectronicKind::Fc => Ok(ElectronicNet::Fc(FcLayer::glorot(
                desc.pixels * desc.pixels,
                desc.classes,
                rng,
            ))),
            ElectronicKind::Conv2F1 => Ok(ElectronicNet::Conv2F1(Conv2F1Net::glorot(desc.pixels, desc.classes, rng)?)),
        }
    }

    pub fn descriptor(&self) -> NetDescriptor {
        match self {
            ElectronicNet::Fc(fc) => NetDescriptor {
                kind: ElectronicKind::Fc,
                pixels: (fc.inputs as f64).sqrt().round() as usize,
                classes: fc.outputs,
            },
            ElectronicNet::Conv2F1(net) => NetDescriptor {
                kind: ElectronicKind::Conv2F1,
                pixels: net.side,
                classes: net.fc2.outputs,
            },
        }
    }

    pub fn inputs(&self) -> usize {
        match self {
            ElectronicNet::Fc(fc) => fc.inputs,
            ElectronicNet::Conv2F1(net) => net.side * net.side,
        }
    }

    pub fn params(&self) -> Vec<&[f64]> {
        match self {
            ElectronicNet::Fc(fc) => vec![&fc.weights, &fc.biases],
            ElectronicNet::Conv2F1(n) => vec![
                &n.conv1.kernel,
                std::slice::from_ref(&n.conv1.bias),
                &n.conv2.kernel,
                std::slice::from_ref(&n.conv2.bias),
                &n.fc1.weights,
                &n.fc1.biases,
                &n.fc2.weights,
                &n.fc2.biases,
            ],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            ElectronicNet::Fc(fc) => vec![&mut fc.weights, &mut fc.biases],
            ElectronicNet::Conv2F1(n) => vec![
                &mut n.conv1.kernel,
                std::slice::from_mut(&mut n.conv1.bias),
                &mut n.conv2.kernel,
                std::slice::from_mut(&mut n.conv2.bias),
                &mut n.fc1.weights,
                &mut n.fc1.biases,
                &mut n.fc2.weights,
                &mut n.fc2.biases,
            ],
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, NetCache)> {
        if x.len() != self.inputs() {
            return Err(D2nnError::Shape(format!(
                "electronic network expects {} inputs, got {}",
                self.inputs(),
                x.len()
            )));
        }
        match self {
            ElectronicNet::Fc(fc) => Ok((fc.forward(x)?, NetCache::Fc { x: x.to_vec() })),
            ElectronicNet::Conv2F1(n) => {
                let a1: Vec<f64> = n.conv1.forward(x, n.side).into_iter().map(relu).collect();
                let a2: Vec<f64> = n.conv2.forward(&a1, n.side1()).into_iter().map(relu).collect();
                let a3: Vec<f64> = n.fc1.forward(&a2)?.into_iter().map(relu).collect();
                let logits = n.fc2.forward(&a3)?;
                Ok((
                    logits,
                    NetCache::Conv2F1 {
                        x: x.to_vec(),
                        a1,
                        a2,
                        a3,
                    },
                ))
            }
        }
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.0)
    }

    /// Gradients of the parameters (one vector per slot) and of the input.
    pub fn backward(&self, cache: &NetCache, d_logits: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut grads: Vec<Vec<f64>> = self.params().iter().map(|p| vec![0.0; p.len()]).collect();
        let d_x = match (self, cache) {
            (ElectronicNet::Fc(fc), NetCache::Fc { x }) => {
                let (dw, db) = grads.split_at_mut(1);
                fc.backward(x, d_logits, &mut dw[0], &mut db[0])
            }
            (ElectronicNet::Conv2F1(n), NetCache::Conv2F1 { x, a1, a2, a3 }) => {
                let [g_k1, g_b1, g_k2, g_b2, g_w1, g_c1, g_w2, g_c2] = &mut grads[..] else {
                    unreachable!("2c2f1 has eight slots")
                };
                let mut d = n.fc2.backward(a3, d_logits, g_w2, g_c2);
                mask_relu(&mut d, a3);
                let mut d = n.fc1.backward(a2, &d, g_w1, g_c1);
                mask_relu(&mut d, a2);
                let mut d = n.conv2.backward(a1, n.side1(), &d, g_k2, &mut g_b2[0]);
                mask_relu(&mut d, a1);
                n.conv1.backward(x, n.side, &d, g_k1, &mut g_b1[0])
            }
            _ => unreachable!("cache produced by a different network"),
        };
        (grads, d_x)
    }

    pub fn to_section(&self) -> ElectronicSection {
        ElectronicSection {
            descriptor: serde_json::to_value(self.descriptor()).expect("descriptor serializes"),
            values: self.params().concat(),
        }
    }

    pub fn from_section(descriptor: NetDescriptor, values: &[f64]) -> Result<Self> {
        let mut net = Self::zeros(descriptor)?;
        if values.len() < net.param_count() {
            return Err(D2nnError::Checkpoint(format!(
                "electronic section holds {} values, network needs {}",
                values.len(),
                net.param_count()
            )));
        }
        let mut at = 0;
        for slot in net.params_mut() {
            slot.copy_from_slice(&values[at..at + slot.len()]);
            at += slot.len();
        }
        Ok(net)
    }
}

/// ReLU derivative applied in place, using the post-activation values.
fn mask_relu(d: &mut [f64], activated: &[f64]) {
    d.iter_mut().zip(activated).for_each(|(d, a)| {
        if *a <= 0.0 {
            *d = 0.0
        }
    });
}

/// Batch norm followed by a network; the trainable electronic part of a hybrid system.
#[derive(Debug, Clone, PartialEq)]
pub struct ElectronicHead {
    pub norm: BatchNorm,
    pub net: ElectronicNet,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct HeadDescriptor {
    net: NetDescriptor,
    momentum: f64,
    eps: f64,
}

impl ElectronicHead {
    pub fn new(net: ElectronicNet) -> Self {
        ElectronicHead {
            norm: BatchNorm::new(net.inputs()),
            net,
        }
    }

    /// Slots: batch-norm scale and shift, then the network's slots.
    pub fn params(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![&self.norm.scale, &self.norm.shift];
        out.extend(self.net.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![&mut self.norm.scale, &mut self.norm.shift];
        out.extend(self.net.params_mut());
        out
    }

    pub fn logits_inference(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.net.logits(&self.norm.forward_inference(x)?)
    }

    /// Mean softmax cross-entropy of a training batch.
    ///
    /// Returns the loss, parameter gradients in slot order, per-sample input
    /// gradients, and the batch statistics for the running averages.
    #[allow(clippy::type_complexity)]
    pub fn batch_gradient(
        &self,
        inputs: &[Vec<f64>],
        labels: &[usize],
    ) -> Result<(f64, Vec<Vec<f64>>, Vec<Vec<f64>>, (Vec<f64>, Vec<f64>))> {
        use crate::detection::{cross_entropy, softmax};
        let (normed, cache, mean, var) = self.norm.forward_train(inputs)?;
        let n = inputs.len() as f64;
        let mut loss = 0.0;
        let mut net_grads: Vec<Vec<f64>> = self.net.params().iter().map(|p| vec![0.0; p.len()]).collect();
        let mut d_normed = Vec::with_capacity(inputs.len());
        for (x, &label) in normed.iter().zip(labels) {
            let (logits, c) = self.net.forward(x)?;
            loss += cross_entropy(&logits, label);
            let mut d = softmax(&logits);
            d[label] -= 1.0;
            d.iter_mut().for_each(|v| *v /= n);
            let (g, dx) = self.net.backward(&c, &d);
            for (acc, g) in net_grads.iter_mut().zip(g) {
                acc.iter_mut().zip(g).for_each(|(a, g)| *a += g);
            }
            d_normed.push(dx);
        }
        let (d_scale, d_shift, d_inputs) = self.norm.backward(&cache, &d_normed);
        let mut grads = vec![d_scale, d_shift];
        grads.extend(net_grads);
        Ok((loss / n, grads, d_inputs, (mean, var)))
    }

    pub fn batch_loss(&self, inputs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
        let (normed, _, _, _) = self.norm.forward_train(inputs)?;
        let mut loss = 0.0;
        for (x, &label) in normed.iter().zip(labels) {
            loss += crate::detection::cross_entropy(&self.net.logits(x)?, label);
        }
        Ok(loss / inputs.len() as f64)
    }

    /// Network parameters followed by batch-norm scale, shift, running mean and variance.
    pub fn to_section(&self) -> ElectronicSection {
        let desc = HeadDescriptor {
            net: self.net.descriptor(),
            momentum: self.norm.momentum,
            eps: self.norm.eps,
        };
        let mut values = self.net.params().concat();
        for v in [&self.norm.scale, &self.norm.shift, &self.norm.running_mean, &self.norm.running_var] {
            values.extend_from_slice(v);
        }
        ElectronicSection {
            descriptor: serde_json::to_value(desc).expect("descriptor serializes"),
            values,
        }
    }

    pub fn from_section(section: &ElectronicSection) -> Result<Self> {
        let desc: HeadDescriptor = serde_json::from_value(section.descriptor.clone())
            .map_err(|e| D2nnError::Checkpoint(format!("electronic descriptor: {e}")))?;
        let net = ElectronicNet::from_section(desc.net, &section.values)?;
        let f = net.inputs();
        let rest = &section.values[net.param_count()..];
        if rest.len() != 4 * f {
            return Err(D2nnError::Checkpoint(format!(
                "batch-norm block has {} values, expected {}",
                rest.len(),
                4 * f
            )));
        }
        let norm = BatchNorm {
            scale: rest[..f].to_vec(),
            shift: rest[f..2 * f].to_vec(),
            running_mean: rest[2 * f..3 * f].to_vec(),
            running_var: rest[3 * f..].to_vec(),
            momentum: desc.momentum,
            eps: desc.eps,
        };
        Ok(ElectronicHead { norm, net })
    }
}

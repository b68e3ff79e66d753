//! Gradient-based optimization of differentiable classifiers.
//!
//! Anything implementing [`Trainable`] can be optimized by [`train`] and
//! verified by [`grad_check`]. [`OpticalClassifier`] is the all-optical case:
//! encoded input, diffractive stack, class detectors and a detector loss.

use num_complex::Complex64;
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledImageSet;
use crate::detection::{classify, loss_and_intensity_grad, CompiledLayout, DetectorLayout, LossKind};
use crate::error::{D2nnError, Result};
use crate::layer::{D2nnModel, ForwardTrace, ModulationMode, OpticalStack, StackGradients};
use crate::optics::InputEncoder;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
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

/// Moment estimates for a list of parameter slots.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, shapes: &[usize]) -> Self {
        AdamState {
            config,
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn shapes(&self) -> Vec<usize> {
        self.m.iter().map(Vec::len).collect()
    }

    /// One bias-corrected Adam update of every slot.
    pub fn update(&mut self, params: Vec<&mut [f64]>, grads: &[Vec<f64>]) -> Result<()> {
        let shapes: Vec<usize> = params.iter().map(|p| p.len()).collect();
        let grad_shapes: Vec<usize> = grads.iter().map(Vec::len).collect();
        if shapes != self.shapes() || grad_shapes != shapes {
            return Err(D2nnError::Shape(format!(
                "optimizer slots {:?}, parameters {shapes:?}, gradients {grad_shapes:?}",
                self.shapes()
            )));
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Single-slot form of [`AdamState::update`].
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState) -> Result<()> {
    state.update(vec![params], &[grads.to_vec()])
}

/// A classifier with real parameter slots and exact batch gradients.
pub trait Trainable: Clone + Send + Sync {
    /// Trainable parameter slots, in a fixed order.
    fn params(&self) -> Vec<&[f64]>;

    fn params_mut(&mut self) -> Vec<&mut [f64]>;

    /// Rebuilds derived state after the parameters changed.
    fn refresh(&mut self);

    /// Mean training loss over `batch` without side effects.
    fn batch_loss(&self, data: &LabeledImageSet, batch: &[usize]) -> Result<f64>;

    /// Mean training loss and its gradient, one vector per slot.
    ///
    /// May update running statistics used at inference time.
    fn batch_gradient(&mut self, data: &LabeledImageSet, batch: &[usize]) -> Result<(f64, Vec<Vec<f64>>)>;

    fn predict(&self, data: &LabeledImageSet, index: usize) -> Result<usize>;

    /// Smallest batch the training step accepts.
    fn min_batch(&self) -> usize {
        1
    }
}

/// Evaluates `f` on every sample in parallel and averages in sample order.
pub fn parallel_mean<F>(batch: &[usize], slots: &[usize], f: F) -> Result<(f64, Vec<Vec<f64>>)>
where
    F: Fn(usize) -> Result<(f64, Vec<Vec<f64>>)> + Sync,
{
    if batch.is_empty() {
        return Err(D2nnError::InvalidInput("empty batch".into()));
    }
    let parts: Vec<Result<(f64, Vec<Vec<f64>>)>> = batch.par_iter().map(|&i| f(i)).collect();
    let mut loss = 0.0;
    let mut grads: Vec<Vec<f64>> = slots.iter().map(|&n| vec![0.0; n]).collect();
    for part in parts {
        let (l, g) = part?;
        loss += l;
        for (dst, src) in grads.iter_mut().zip(&g) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
        }
    }
    let w = 1.0 / batch.len() as f64;
    grads.iter_mut().flatten().for_each(|g| *g *= w);
    Ok((loss * w, grads))
}

pub fn predictions<M: Trainable>(model: &M, data: &LabeledImageSet) -> Result<Vec<usize>> {
    (0..data.len()).into_par_iter().map(|i| model.predict(data, i)).collect()
}

pub fn accuracy<M: Trainable>(model: &M, data: &LabeledImageSet) -> Result<f64> {
    if data.is_empty() {
        return Err(D2nnError::InvalidInput("cannot score an empty set".into()));
    }
    let correct = predictions(model, data)?
        .iter()
        .enumerate()
        .filter(|(i, &p)| data.label(*i) == p)
        .count();
    Ok(correct as f64 / data.len() as f64)
}

/// Converts `dL/dS` on the output intensity into the output-field gradient.
pub fn intensity_to_field_grad(output: &[Complex64], d_intensity: &[f64]) -> Vec<Complex64> {
    output.iter().zip(d_intensity).map(|(u, d)| u * (2.0 * d)).collect()
}

/// Slot order used by optical stacks: per layer, α (complex mode only) then β.
pub fn stack_slot_shapes(model: &D2nnModel) -> Vec<usize> {
    let per = match model.modulation {
        ModulationMode::PhaseOnly => 1,
        ModulationMode::Complex => 2,
    };
    vec![model.grid.len(); per * model.n_layers()]
}

pub fn stack_params(model: &D2nnModel) -> Vec<&[f64]> {
    let complex = model.modulation == ModulationMode::Complex;
    let mut out = Vec::new();
    for layer in &model.layers {
        if complex {
            out.push(&layer.alpha[..]);
        }
        out.push(&layer.beta[..]);
    }
    out
}

pub fn stack_params_mut(model: &mut D2nnModel) -> Vec<&mut [f64]> {
    let complex = model.modulation == ModulationMode::Complex;
    let mut out = Vec::new();
    for layer in &mut model.layers {
        if complex {
            out.push(&mut layer.alpha[..]);
        }
        out.push(&mut layer.beta[..]);
    }
    out
}

pub fn flatten_stack_grads(model: &D2nnModel, grads: StackGradients) -> Vec<Vec<f64>> {
    let complex = model.modulation == ModulationMode::Complex;
    let mut out = Vec::new();
    for (a, b) in grads.alpha.into_iter().zip(grads.beta) {
        if complex {
            out.push(a);
        }
        out.push(b);
    }
    out
}

/// Encoded input → diffractive stack → class detectors.
#[derive(Debug, Clone)]
pub struct OpticalClassifier {
    pub stack: OpticalStack,
    pub encoder: InputEncoder,
    pub layout: CompiledLayout,
    pub loss: LossKind,
}

/// Detector signals and total output power of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Readout {
    pub signals: Vec<f64>,
    pub total_power: f64,
}

impl OpticalClassifier {
    pub fn new(model: D2nnModel, encoder: InputEncoder, layout: &DetectorLayout, loss: LossKind) -> Result<Self> {
        model.grid.ensure_same(&encoder.grid)?;
        let layout = layout.compile(&model.grid)?;
        Ok(OpticalClassifier {
            stack: OpticalStack::new(model)?,
            encoder,
            layout,
            loss,
        })
    }

    pub fn model(&self) -> &D2nnModel {
        &self.stack.model
    }

    pub fn trace(&self, data: &LabeledImageSet, index: usize) -> Result<ForwardTrace> {
        let field = self.encoder.encode(&data.image(index), data.rows(), data.cols())?;
        self.stack.forward(&field)
    }

    pub fn readout(&self, data: &LabeledImageSet, index: usize) -> Result<Readout> {
        let intensity = self.trace(data, index)?.intensity();
        let area = self.stack.grid().cell_area();
        Ok(Readout {
            signals: self.layout.signals(&intensity),
            total_power: intensity.iter().sum::<f64>() * area,
        })
    }

    pub fn sample_loss(&self, data: &LabeledImageSet, index: usize) -> Result<f64> {
        let intensity = self.trace(data, index)?.intensity();
        Ok(loss_and_intensity_grad(self.loss, &intensity, data.label(index), &self.layout).0)
    }

    pub fn sample_gradient(&self, data: &LabeledImageSet, index: usize) -> Result<(f64, StackGradients)> {
        let trace = self.trace(data, index)?;
        let (loss, d_intensity) =
            loss_and_intensity_grad(self.loss, &trace.intensity(), data.label(index), &self.layout);
        let grad_out = intensity_to_field_grad(&trace.output, &d_intensity);
        let (grads, _) = self.stack.backward(&trace, &grad_out);
        grads.ensure_finite("optical")?;
        Ok((loss, grads))
    }
}

impl Trainable for OpticalClassifier {
    fn params(&self) -> Vec<&[f64]> {
        stack_params(&self.stack.model)
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        stack_params_mut(&mut self.stack.model)
    }

    fn refresh(&mut self) {
        self.stack.refresh();
    }

    fn batch_loss(&self, data: &LabeledImageSet, batch: &[usize]) -> Result<f64> {
        if batch.is_empty() {
            return Err(D2nnError::InvalidInput("empty batch".into()));
        }
        let losses: Vec<f64> = batch
            .par_iter()
            .map(|&i| self.sample_loss(data, i))
            .collect::<Result<_>>()?;
        Ok(losses.iter().sum::<f64>() / batch.len() as f64)
    }

    fn batch_gradient(&mut self, data: &LabeledImageSet, batch: &[usize]) -> Result<(f64, Vec<Vec<f64>>)> {
        let model = &self.stack.model;
        parallel_mean(batch, &stack_slot_shapes(model), |i| {
            let (loss, g) = self.sample_gradient(data, i)?;
            Ok((loss, flatten_stack_grads(model, g)))
        })
    }

    fn predict(&self, data: &LabeledImageSet, index: usize) -> Result<usize> {
        Ok(classify(&self.readout(data, index)?.signals))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 64,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(D2nnError::config("epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(D2nnError::config("batch_size", "must be at least 1"));
        }
        let a = self.adam;
        if !(a.lr.is_finite() && a.lr >= 0.0) {
            return Err(D2nnError::config("lr", "must be finite and non-negative"));
        }
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2)) {
            return Err(D2nnError::config("adam", "moment decay rates must lie in [0, 1)"));
        }
        if !(a.eps > 0.0) {
            return Err(D2nnError::config("adam", "eps must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<M> {
    /// Snapshot with the highest validation accuracy (earliest on ties).
    pub best: M,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub curve: Vec<EpochRecord>,
}

/// Mini-batch Adam with a seeded per-epoch reshuffle and best-validation selection.
///
/// `on_epoch` is called after every epoch with its record.
pub fn train<M: Trainable>(
    mut model: M,
    train_set: &LabeledImageSet,
    validation: &LabeledImageSet,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<M>> {
    config.validate()?;
    if train_set.is_empty() || validation.is_empty() {
        return Err(D2nnError::InvalidInput("training and validation splits must be non-empty".into()));
    }
    let shapes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
    let mut adam = AdamState::new(config.adam, &shapes);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best: Option<(M, usize, f64)> = None;
    let mut curve = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for batch in order.chunks(config.batch_size) {
            if batch.len() < model.min_batch() {
                continue;
            }
            let (loss, grads) = model.batch_gradient(train_set, batch)?;
            if !loss.is_finite() {
                return Err(D2nnError::NonFiniteGradient {
                    location: format!("loss at epoch {epoch}"),
                });
            }
            adam.update(model.params_mut(), &grads)?;
            model.refresh();
            loss_sum += loss * batch.len() as f64;
            seen += batch.len();
        }
        let record = EpochRecord {
            epoch,
            train_loss: if seen > 0 { loss_sum / seen as f64 } else { f64::NAN },
            val_accuracy: accuracy(&model, validation)?,
        };
        on_epoch(&record);
        curve.push(record);
        if best.as_ref().map_or(true, |(_, _, acc)| record.val_accuracy > *acc) {
            best = Some((model.clone(), epoch, record.val_accuracy));
        }
    }
    let (best, best_epoch, best_val_accuracy) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        best,
        best_epoch,
        best_val_accuracy,
        curve,
    })
}

/// Training curve as CSV with a header row.
pub fn curve_csv(curve: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,val_accuracy\n");
    for r in curve {
        out.push_str(&format!("{},{},{}\n", r.epoch, r.train_loss, r.val_accuracy));
    }
    out
}

/// Below this magnitude gradients are compared absolutely.
pub const GRAD_CHECK_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub slot: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub probes: Vec<Probe>,
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(GRAD_CHECK_FLOOR)
}

/// Compares analytic gradients with central differences on `n_probes`
/// trainable scalars drawn without replacement.
pub fn grad_check<M: Trainable>(
    model: &M,
    data: &LabeledImageSet,
    batch: &[usize],
    n_probes: usize,
    h: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    if !(h > 0.0) {
        return Err(D2nnError::InvalidInput(format!("step {h} must be positive")));
    }
    let mut scratch = model.clone();
    let (_, analytic) = scratch.batch_gradient(data, batch)?;
    let shapes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
    let total: usize = shapes.iter().sum();
    let n = n_probes.min(total);
    let mut picks: Vec<usize> = sample(&mut ChaCha8Rng::seed_from_u64(seed), total, n).into_vec();
    picks.sort_unstable();

    let mut probes = Vec::with_capacity(n);
    for flat in picks {
        let (mut slot, mut index) = (0, flat);
        while index >= shapes[slot] {
            index -= shapes[slot];
            slot += 1;
        }
        let eval = |delta: f64| -> Result<f64> {
            let mut m = model.clone();
            m.params_mut()[slot][index] += delta;
            m.refresh();
            m.batch_loss(data, batch)
        };
        let numeric = (eval(h)? - eval(-h)?) / (2.0 * h);
        let a = analytic[slot][index];
        probes.push(Probe {
            slot,
            index,
            analytic: a,
            numeric,
            rel_error: relative_error(a, numeric),
        });
    }
    let max_rel_error = probes.iter().map(|p| p.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport { max_rel_error, probes })
}

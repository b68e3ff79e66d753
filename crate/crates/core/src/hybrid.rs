//! Optical front-ends read out by a pixelated sensor and the two-stage
//! hybrid training procedure.
//!
//! Stage 1 trains the front-end behind the sensor through a temporary
//! "virtual" diffractive layer relaunched from the sensor image. Stage 2
//! replaces that layer with batch normalization and an electronic network and
//! trains both parts jointly.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::ElectronicSection;
use crate::dataset::LabeledImageSet;
use crate::detection::{classify, loss_and_intensity_grad, CompiledLayout, DetectorLayout, LossKind, REFERENCE_NEURONS, REFERENCE_REGION_SIDE};
use crate::electronic::{ElectronicHead, ElectronicNet};
use crate::error::{D2nnError, Result};
use crate::layer::{D2nnModel, ForwardTrace, LayerParams, ModulationMode, OpticalStack, Parameterization, Spacing};
use crate::optics::{ComplexField, GridSpec, InputEncoder};
use crate::training::{
    flatten_stack_grads, intensity_to_field_grad, parallel_mean, stack_params, stack_params_mut,
    stack_slot_shapes, train, Readout, TrainConfig, TrainOutcome, Trainable,
};

/// Floor inside the square root of the relaunch amplitude's derivative.
pub const RELAUNCH_EPS: f64 = 1e-12;

/// A `pixels × pixels` array of square pixels, each averaging `block × block`
/// samples, centered on the output plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSpec {
    pub pixels: usize,
    pub block: usize,
}

impl SensorSpec {
    /// Sensor covering the detector region scaled to `grid`, with whole-sample pixels.
    pub fn scaled(grid: &GridSpec, pixels: usize) -> Result<Self> {
        let scale = grid.nx.min(grid.ny) as f64 / REFERENCE_NEURONS as f64;
        let region = REFERENCE_REGION_SIDE * scale / grid.dx;
        let block = ((region / pixels as f64).round() as usize).max(1);
        let spec = SensorSpec { pixels, block };
        spec.validate(grid)?;
        Ok(spec)
    }

    /// Side of the covered region, in samples.
    pub fn side(&self) -> usize {
        self.pixels * self.block
    }

    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        if self.pixels == 0 || self.block == 0 {
            return Err(D2nnError::config("sensor", "pixels and block must be positive"));
        }
        if self.side() > grid.nx || self.side() > grid.ny {
            return Err(D2nnError::config(
                "sensor",
                format!("{}x{} pixels of {} samples exceed grid {grid}", self.pixels, self.pixels, self.block),
            ));
        }
        Ok(())
    }

    fn origin(&self, grid: &GridSpec) -> (usize, usize) {
        ((grid.nx - self.side()) / 2, (grid.ny - self.side()) / 2)
    }

    /// Grid index of sample `(sx, sy)` within the covered region.
    fn sample_index(&self, grid: &GridSpec, sx: usize, sy: usize) -> usize {
        let (x0, y0) = self.origin(grid);
        (y0 + sy) * grid.nx + x0 + sx
    }
}

/// Average-pools the covered region into `pixels × pixels` values, row-major.
pub fn sensor_readout(intensity: &[f64], grid: &GridSpec, sensor: &SensorSpec) -> Result<Vec<f64>> {
    sensor.validate(grid)?;
    if intensity.len() != grid.len() {
        return Err(D2nnError::Shape(format!(
            "intensity has {} samples, grid {grid} needs {}",
            intensity.len(),
            grid.len()
        )));
    }
    if let Some(v) = intensity.iter().find(|v| !(**v >= 0.0)) {
        return Err(D2nnError::InvalidInput(format!("intensity value {v} is not non-negative")));
    }
    Ok(pool(intensity, grid, sensor))
}

fn pool(intensity: &[f64], grid: &GridSpec, sensor: &SensorSpec) -> Vec<f64> {
    let (p, b) = (sensor.pixels, sensor.block);
    let mut out = vec![0.0; p * p];
    for sy in 0..sensor.side() {
        for sx in 0..sensor.side() {
            out[(sy / b) * p + sx / b] += intensity[sensor.sample_index(grid, sx, sy)];
        }
    }
    let area = (b * b) as f64;
    out.iter_mut().for_each(|v| *v /= area);
    out
}

/// Adjoint of the pooling: spreads pixel gradients evenly over their blocks.
fn pool_adjoint(d_pixels: &[f64], grid: &GridSpec, sensor: &SensorSpec) -> Vec<f64> {
    let (p, b) = (sensor.pixels, sensor.block);
    let area = (b * b) as f64;
    let mut out = vec![0.0; grid.len()];
    for sy in 0..sensor.side() {
        for sx in 0..sensor.side() {
            out[sensor.sample_index(grid, sx, sy)] = d_pixels[(sy / b) * p + sx / b] / area;
        }
    }
    out
}

/// Nearest-neighbor upsampling of the sensor image back onto the covered
/// region, relaunched as a zero-phase field with amplitude `√I`.
pub fn virtual_relaunch(pixels: &[f64], grid: &GridSpec, sensor: &SensorSpec) -> Result<ComplexField> {
    sensor.validate(grid)?;
    if pixels.len() != sensor.pixels * sensor.pixels {
        return Err(D2nnError::Shape(format!(
            "{} sensor values for a {}x{} sensor",
            pixels.len(),
            sensor.pixels,
            sensor.pixels
        )));
    }
    if let Some(v) = pixels.iter().find(|v| !(**v >= 0.0)) {
        return Err(D2nnError::InvalidInput(format!("sensor value {v} is not non-negative")));
    }
    Ok(ComplexField::from_parts(*grid, relaunch(pixels, grid, sensor)))
}

fn relaunch(pixels: &[f64], grid: &GridSpec, sensor: &SensorSpec) -> Vec<Complex64> {
    let (p, b) = (sensor.pixels, sensor.block);
    let mut out = vec![Complex64::new(0.0, 0.0); grid.len()];
    for sy in 0..sensor.side() {
        for sx in 0..sensor.side() {
            out[sensor.sample_index(grid, sx, sy)] = Complex64::new(pixels[(sy / b) * p + sx / b].sqrt(), 0.0);
        }
    }
    out
}

/// Adjoint of [`relaunch`] with respect to the sensor values.
fn relaunch_adjoint(grad_field: &[Complex64], pixels: &[f64], grid: &GridSpec, sensor: &SensorSpec) -> Vec<f64> {
    let (p, b) = (sensor.pixels, sensor.block);
    let mut out = vec![0.0; p * p];
    for sy in 0..sensor.side() {
        for sx in 0..sensor.side() {
            let k = (sy / b) * p + sx / b;
            // the relaunched field is real, so only ∂L/∂Re contributes
            let g = grad_field[sensor.sample_index(grid, sx, sy)].re;
            out[k] += g / (2.0 * (pixels[k] + RELAUNCH_EPS).sqrt());
        }
    }
    out
}

/// Where the sensor image comes from.
#[derive(Debug, Clone)]
pub enum FrontEnd {
    Optical(OpticalStack),
    /// The sensor reads the encoded input intensity directly.
    PerfectImager,
}

struct FrontTrace {
    trace: Option<ForwardTrace>,
    pixels: Vec<f64>,
}

/// Encoder, front-end and sensor shared by every hybrid system.
#[derive(Debug, Clone)]
pub struct SensorPath {
    pub front: FrontEnd,
    pub encoder: InputEncoder,
    pub sensor: SensorSpec,
}

impl SensorPath {
    pub fn new(front: FrontEnd, encoder: InputEncoder, sensor: SensorSpec) -> Result<Self> {
        if let FrontEnd::Optical(stack) = &front {
            stack.grid().ensure_same(&encoder.grid)?;
        }
        sensor.validate(&encoder.grid)?;
        Ok(SensorPath { front, encoder, sensor })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.encoder.grid
    }

    pub fn stack(&self) -> Option<&OpticalStack> {
        match &self.front {
            FrontEnd::Optical(s) => Some(s),
            FrontEnd::PerfectImager => None,
        }
    }

    fn run(&self, data: &LabeledImageSet, index: usize) -> Result<FrontTrace> {
        let field = self.encoder.encode(&data.image(index), data.rows(), data.cols())?;
        let (trace, intensity) = match &self.front {
            FrontEnd::Optical(stack) => {
                let trace = stack.forward(&field)?;
                let intensity = trace.intensity();
                (Some(trace), intensity)
            }
            FrontEnd::PerfectImager => (None, field.intensity()),
        };
        Ok(FrontTrace {
            trace,
            pixels: pool(&intensity, self.grid(), &self.sensor),
        })
    }

    pub fn pixels(&self, data: &LabeledImageSet, index: usize) -> Result<Vec<f64>> {
        Ok(self.run(data, index)?.pixels)
    }

    /// Optical latent gradients given `dL/d(sensor pixels)`; empty for a perfect imager.
    fn backward(&self, ft: &FrontTrace, d_pixels: &[f64]) -> Result<Vec<Vec<f64>>> {
        match (&self.front, &ft.trace) {
            (FrontEnd::Optical(stack), Some(trace)) => {
                let d_intensity = pool_adjoint(d_pixels, self.grid(), &self.sensor);
                let grad_out = intensity_to_field_grad(&trace.output, &d_intensity);
                let (grads, _) = stack.backward(trace, &grad_out);
                grads.ensure_finite("optical front-end")?;
                Ok(flatten_stack_grads(&stack.model, grads))
            }
            _ => Ok(Vec::new()),
        }
    }

    fn slot_shapes(&self) -> Vec<usize> {
        self.stack().map_or_else(Vec::new, |s| stack_slot_shapes(&s.model))
    }

    fn params(&self) -> Vec<&[f64]> {
        self.stack().map_or_else(Vec::new, |s| stack_params(&s.model))
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        match &mut self.front {
            FrontEnd::Optical(s) => stack_params_mut(&mut s.model),
            FrontEnd::PerfectImager => Vec::new(),
        }
    }

    fn refresh(&mut self) {
        if let FrontEnd::Optical(s) = &mut self.front {
            s.refresh();
        }
    }
}

/// Stage-1 system: front-end → sensor → relaunch → virtual layer → detectors, trained with SCE.
#[derive(Debug, Clone)]
pub struct Stage1System {
    pub path: SensorPath,
    pub virtual_stack: OpticalStack,
    pub layout: CompiledLayout,
}

impl Stage1System {
    /// The virtual layer shares the front-end's modulation, parameterization and spacing.
    pub fn new(front: D2nnModel, encoder: InputEncoder, sensor: SensorSpec, layout: &DetectorLayout) -> Result<Self> {
        let virtual_model = D2nnModel::new(front.grid, 1, front.modulation, front.parameterization, front.spacing)?;
        Self::with_virtual(front, virtual_model, encoder, sensor, layout)
    }

    pub fn with_virtual(
        front: D2nnModel,
        virtual_model: D2nnModel,
        encoder: InputEncoder,
        sensor: SensorSpec,
        layout: &DetectorLayout,
    ) -> Result<Self> {
        let layout = layout.compile(&front.grid)?;
        Ok(Stage1System {
            path: SensorPath::new(FrontEnd::Optical(OpticalStack::new(front)?), encoder, sensor)?,
            virtual_stack: OpticalStack::new(virtual_model)?,
            layout,
        })
    }

    pub fn front_model(&self) -> &D2nnModel {
        &self.path.stack().expect("stage 1 has an optical front-end").model
    }

    fn virtual_trace(&self, pixels: &[f64]) -> ForwardTrace {
        self.virtual_stack
            .forward_values(&relaunch(pixels, self.path.grid(), &self.path.sensor))
    }

    pub fn readout(&self, data: &LabeledImageSet, index: usize) -> Result<Readout> {
        let ft = self.path.run(data, index)?;
        let intensity = self.virtual_trace(&ft.pixels).intensity();
        Ok(Readout {
            signals: self.layout.signals(&intensity),
            total_power: intensity.iter().sum::<f64>() * self.path.grid().cell_area(),
        })
    }

    fn sample_loss(&self, data: &LabeledImageSet, index: usize) -> Result<f64> {
        let ft = self.path.run(data, index)?;
        let intensity = self.virtual_trace(&ft.pixels).intensity();
        Ok(loss_and_intensity_grad(LossKind::Sce, &intensity, data.label(index), &self.layout).0)
    }

    fn sample_gradient(&self, data: &LabeledImageSet, index: usize) -> Result<(f64, Vec<Vec<f64>>)> {
        let ft = self.path.run(data, index)?;
        let vt = self.virtual_trace(&ft.pixels);
        let (loss, d_intensity) = loss_and_intensity_grad(LossKind::Sce, &vt.intensity(), data.label(index), &self.layout);
        let grad_out = intensity_to_field_grad(&vt.output, &d_intensity);
        let (v_grads, grad_in) = self.virtual_stack.backward(&vt, &grad_out);
        v_grads.ensure_finite("virtual")?;
        let d_pixels = relaunch_adjoint(&grad_in, &ft.pixels, self.path.grid(), &self.path.sensor);
        let mut grads = self.path.backward(&ft, &d_pixels)?;
        grads.extend(flatten_stack_grads(&self.virtual_stack.model, v_grads));
        Ok((loss, grads))
    }
}

impl Trainable for Stage1System {
    fn params(&self) -> Vec<&[f64]> {
        let mut p = self.path.params();
        p.extend(stack_params(&self.virtual_stack.model));
        p
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut p = self.path.params_mut();
        p.extend(stack_params_mut(&mut self.virtual_stack.model));
        p
    }

    fn refresh(&mut self) {
        self.path.refresh();
        self.virtual_stack.refresh();
    }

    fn batch_loss(&self, data: &LabeledImageSet, batch: &[usize]) -> Result<f64> {
        let losses: Vec<f64> = batch.par_iter().map(|&i| self.sample_loss(data, i)).collect::<Result<_>>()?;
        Ok(losses.iter().sum::<f64>() / batch.len().max(1) as f64)
    }

    fn batch_gradient(&mut self, data: &LabeledImageSet, batch: &[usize]) -> Result<(f64, Vec<Vec<f64>>)> {
        let mut shapes = self.path.slot_shapes();
        shapes.extend(stack_slot_shapes(&self.virtual_stack.model));
        parallel_mean(batch, &shapes, |i| self.sample_gradient(data, i))
    }

    fn predict(&self, data: &LabeledImageSet, index: usize) -> Result<usize> {
        Ok(classify(&self.readout(data, index)?.signals))
    }
}

/// Front-end → sensor → batch norm → electronic network, trained with softmax cross-entropy.
#[derive(Debug, Clone)]
pub struct HybridSystem {
    pub path: SensorPath,
    pub head: ElectronicHead,
    /// When set, only the electronic parameters are trained.
    pub freeze_optical: bool,
}

impl HybridSystem {
    pub fn new(path: SensorPath, net: ElectronicNet) -> Result<Self> {
        let p = path.sensor.pixels;
        if net.inputs() != p * p {
            return Err(D2nnError::config(
                "electronic",
                format!("network takes {} inputs but the sensor has {}", net.inputs(), p * p),
            ));
        }
        Ok(HybridSystem {
            path,
            head: ElectronicHead::new(net),
            freeze_optical: false,
        })
    }

    pub fn logits(&self, data: &LabeledImageSet, index: usize) -> Result<Vec<f64>> {
        self.head.logits_inference(&self.path.pixels(data, index)?)
    }

    fn front_traces(&self, data: &LabeledImageSet, batch: &[usize]) -> Result<Vec<FrontTrace>> {
        if batch.len() < 2 {
            return Err(D2nnError::InvalidInput(format!(
                "hybrid training needs batches of at least 2, got {}",
                batch.len()
            )));
        }
        batch.par_iter().map(|&i| self.path.run(data, i)).collect()
    }
}

impl Trainable for HybridSystem {
    fn params(&self) -> Vec<&[f64]> {
        let mut p = if self.freeze_optical { Vec::new() } else { self.path.params() };
        p.extend(self.head.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut p = if self.freeze_optical { Vec::new() } else { self.path.params_mut() };
        p.extend(self.head.params_mut());
        p
    }

    fn refresh(&mut self) {
        self.path.refresh();
    }

    fn batch_loss(&self, data: &LabeledImageSet, batch: &[usize]) -> Result<f64> {
        let traces = self.front_traces(data, batch)?;
        let inputs: Vec<Vec<f64>> = traces.into_iter().map(|t| t.pixels).collect();
        let labels: Vec<usize> = batch.iter().map(|&i| data.label(i)).collect();
        self.head.batch_loss(&inputs, &labels)
    }

    fn batch_gradient(&mut self, data: &LabeledImageSet, batch: &[usize]) -> Result<(f64, Vec<Vec<f64>>)> {
        let traces = self.front_traces(data, batch)?;
        let inputs: Vec<Vec<f64>> = traces.iter().map(|t| t.pixels.clone()).collect();
        let labels: Vec<usize> = batch.iter().map(|&i| data.label(i)).collect();
        let (loss, head_grads, d_inputs, (mean, var)) = self.head.batch_gradient(&inputs, &labels)?;

        let mut grads = Vec::new();
        if !self.freeze_optical {
            // d_inputs already carry the 1/batch factor, so sample gradients are summed
            let parts: Vec<Vec<Vec<f64>>> = traces
                .par_iter()
                .zip(&d_inputs)
                .map(|(ft, d)| self.path.backward(ft, d))
                .collect::<Result<_>>()?;
            let mut acc: Vec<Vec<f64>> = self.path.slot_shapes().iter().map(|&n| vec![0.0; n]).collect();
            for part in parts {
                for (a, g) in acc.iter_mut().zip(part) {
                    a.iter_mut().zip(g).for_each(|(a, g)| *a += g);
                }
            }
            grads = acc;
        }
        if head_grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(D2nnError::NonFiniteGradient {
                location: "electronic head".into(),
            });
        }
        grads.extend(head_grads);
        self.head.norm.update_running(&mean, &var);
        Ok((loss, grads))
    }

    fn predict(&self, data: &LabeledImageSet, index: usize) -> Result<usize> {
        Ok(classify(&self.logits(data, index)?))
    }

    fn min_batch(&self) -> usize {
        2
    }
}

/// Stage 1 of the two-stage procedure; the returned system still carries its virtual layer.
pub fn train_stage1(
    system: Stage1System,
    train_set: &LabeledImageSet,
    validation: &LabeledImageSet,
    config: &TrainConfig,
    on_epoch: impl FnMut(&crate::training::EpochRecord),
) -> Result<TrainOutcome<Stage1System>> {
    train(system, train_set, validation, config, on_epoch)
}

/// Stage 2: the stage-1 front-end (virtual layer dropped) with a fresh electronic network, trained jointly.
pub fn train_stage2(
    stage1: &Stage1System,
    net: ElectronicNet,
    train_set: &LabeledImageSet,
    validation: &LabeledImageSet,
    config: &TrainConfig,
    on_epoch: impl FnMut(&crate::training::EpochRecord),
) -> Result<TrainOutcome<HybridSystem>> {
    let system = HybridSystem::new(stage1.path.clone(), net)?;
    train(system, train_set, validation, config, on_epoch)
}

/// Single-stage joint training from the given (usually freshly initialized) front-end.
pub fn train_direct(
    system: HybridSystem,
    train_set: &LabeledImageSet,
    validation: &LabeledImageSet,
    config: &TrainConfig,
    on_epoch: impl FnMut(&crate::training::EpochRecord),
) -> Result<TrainOutcome<HybridSystem>> {
    train(system, train_set, validation, config, on_epoch)
}

/// Descriptor of a virtual layer stored in a checkpoint section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VirtualLayerDescriptor {
    pub modulation: ModulationMode,
    pub parameterization: Parameterization,
    pub spacing: Spacing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VirtualSectionHeader {
    virtual_layer: VirtualLayerDescriptor,
}

/// Stores a one-layer virtual stack as a section: α values followed by β values.
pub fn virtual_section(model: &D2nnModel) -> ElectronicSection {
    let desc = VirtualSectionHeader {
        virtual_layer: VirtualLayerDescriptor {
            modulation: model.modulation,
            parameterization: model.parameterization,
            spacing: model.spacing,
        },
    };
    let layer = &model.layers[0];
    let mut values = layer.alpha.clone();
    values.extend_from_slice(&layer.beta);
    ElectronicSection {
        descriptor: serde_json::to_value(desc).expect("descriptor serializes"),
        values,
    }
}

pub fn virtual_from_section(grid: GridSpec, padding_factor: usize, section: &ElectronicSection) -> Result<D2nnModel> {
    let header: VirtualSectionHeader = serde_json::from_value(section.descriptor.clone())
        .map_err(|e| D2nnError::Checkpoint(format!("virtual layer descriptor: {e}")))?;
    let n = grid.len();
    if section.values.len() != 2 * n {
        return Err(D2nnError::Checkpoint(format!(
            "virtual layer holds {} values, grid needs {}",
            section.values.len(),
            2 * n
        )));
    }
    let d = header.virtual_layer;
    let model = D2nnModel {
        grid,
        layers: vec![LayerParams {
            alpha: section.values[..n].to_vec(),
            beta: section.values[n..].to_vec(),
        }],
        modulation: d.modulation,
        parameterization: d.parameterization,
        spacing: d.spacing,
        padding_factor,
    };
    model.validate()?;
    Ok(model)
}

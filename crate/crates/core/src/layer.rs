//! Trainable diffractive layers and the multi-layer optical forward pass.
//!
//! Every neuron carries two real latent variables `(α, β)` that map onto an
//! amplitude `a` and phase `φ`, giving the complex transmission `t = a·exp(jφ)`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{D2nnError, Result};
use crate::optics::{ComplexField, GridSpec};
use crate::propagation::{PropagationPlan, DEFAULT_PADDING};

/// Denominator floor of the ReLU normalization.
pub const RELU_NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModulationMode {
    PhaseOnly,
    Complex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameterization {
    /// `a = σ(α)`, `φ = 2π·σ(β)`.
    Sigmoid,
    /// `a = ReLU(α) / max ReLU(α)`, `φ = 2π·β`.
    ReluNorm,
}

impl fmt::Display for ModulationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModulationMode::PhaseOnly => "phase_only",
            ModulationMode::Complex => "complex",
        })
    }
}

impl fmt::Display for Parameterization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Parameterization::Sigmoid => "sigmoid",
            Parameterization::ReluNorm => "relu_norm",
        })
    }
}

/// Latent variables of one diffractive layer, row-major on the model grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl LayerParams {
    /// Initial latents giving `φ = π` and amplitude 1 (sigmoid: ≈0.982, since 1 is unreachable).
    pub fn initial(len: usize, parameterization: Parameterization) -> Self {
        let (alpha, beta) = match parameterization {
            Parameterization::ReluNorm => (1.0, 0.5),
            Parameterization::Sigmoid => (4.0, 0.0),
        };
        LayerParams {
            alpha: vec![alpha; len],
            beta: vec![beta; len],
        }
    }

    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }
}

/// Physical amplitude and phase of every neuron in a layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Modulation {
    pub amplitude: Vec<f64>,
    pub phase: Vec<f64>,
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

pub fn modulation_sigmoid(layer: &LayerParams) -> Modulation {
    Modulation {
        amplitude: layer.alpha.iter().map(|&a| sigmoid(a)).collect(),
        phase: layer.beta.iter().map(|&b| 2.0 * PI * sigmoid(b)).collect(),
    }
}

/// Index and value of the first maximum of `ReLU(α)`.
fn relu_max(alpha: &[f64]) -> (usize, f64) {
    let mut best = (0, 0.0);
    for (i, &a) in alpha.iter().enumerate() {
        if a > best.1 {
            best = (i, a);
        }
    }
    best
}

pub fn modulation_relu_norm(layer: &LayerParams) -> Modulation {
    let (_, max) = relu_max(&layer.alpha);
    let denom = max.max(RELU_NORM_EPS);
    Modulation {
        amplitude: layer.alpha.iter().map(|&a| a.max(0.0) / denom).collect(),
        phase: layer.beta.iter().map(|&b| 2.0 * PI * b).collect(),
    }
}

/// Transmission of a layer together with what its backward pass needs.
#[derive(Debug, Clone)]
pub struct Transmission {
    pub t: Vec<Complex64>,
    pub modulation: Modulation,
    mode: ModulationMode,
    parameterization: Parameterization,
}

impl Transmission {
    pub fn new(layer: &LayerParams, mode: ModulationMode, parameterization: Parameterization) -> Self {
        let mut modulation = match parameterization {
            Parameterization::Sigmoid => modulation_sigmoid(layer),
            Parameterization::ReluNorm => modulation_relu_norm(layer),
        };
        if mode == ModulationMode::PhaseOnly {
            modulation.amplitude.iter_mut().for_each(|a| *a = 1.0);
        }
        let t = modulation
            .amplitude
            .iter()
            .zip(&modulation.phase)
            .map(|(&a, &p)| Complex64::from_polar(a, p))
            .collect();
        Transmission {
            t,
            modulation,
            mode,
            parameterization,
        }
    }

    /// Chains `grad_t` (the gradient with respect to each transmission, in the
    /// `∂L/∂Re + j·∂L/∂Im` convention) into the latent variables.
    ///
    /// Returns `(∂L/∂α, ∂L/∂β)`. The α gradient is zero in phase-only mode.
    pub fn latent_gradients(&self, layer: &LayerParams, grad_t: &[Complex64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.t.len();
        debug_assert_eq!(grad_t.len(), n);
        // ∂L/∂φ = Re(conj(G)·j·t)
        let d_phase = grad_t.iter().zip(&self.t).map(|(g, t)| (g.conj() * Complex64::i() * t).re);
        let d_beta: Vec<f64> = match self.parameterization {
            Parameterization::ReluNorm => d_phase.map(|d| d * 2.0 * PI).collect(),
            Parameterization::Sigmoid => d_phase
                .zip(&layer.beta)
                .map(|(d, &b)| {
                    let s = sigmoid(b);
                    d * 2.0 * PI * s * (1.0 - s)
                })
                .collect(),
        };

        if self.mode == ModulationMode::PhaseOnly {
            return (vec![0.0; n], d_beta);
        }

        // ∂L/∂a = Re(conj(G)·exp(jφ))
        let d_amp: Vec<f64> = grad_t
            .iter()
            .zip(&self.modulation.phase)
            .map(|(g, &p)| (g.conj() * Complex64::from_polar(1.0, p)).re)
            .collect();
        let d_alpha = match self.parameterization {
            Parameterization::Sigmoid => d_amp
                .iter()
                .zip(&self.modulation.amplitude)
                .map(|(d, a)| d * a * (1.0 - a))
                .collect(),
            Parameterization::ReluNorm => {
                let (argmax, max) = relu_max(&layer.alpha);
                if max <= RELU_NORM_EPS {
                    vec![0.0; n]
                } else {
                    // a_i = r_i / m: ∂a_i/∂r_i = 1/m, ∂a_i/∂m = -r_i/m²
                    let d_max: f64 = -d_amp
                        .iter()
                        .zip(&layer.alpha)
                        .map(|(d, &a)| d * a.max(0.0))
                        .sum::<f64>()
                        / (max * max);
                    let mut d_alpha: Vec<f64> = d_amp
                        .iter()
                        .zip(&layer.alpha)
                        .map(|(d, &a)| if a > 0.0 { d / max } else { 0.0 })
                        .collect();
                    d_alpha[argmax] += d_max;
                    d_alpha
                }
            }
        };
        (d_alpha, d_beta)
    }
}

pub fn layer_transmission(
    layer: &LayerParams,
    mode: ModulationMode,
    parameterization: Parameterization,
) -> Vec<Complex64> {
    Transmission::new(layer, mode, parameterization).t
}

/// Axial distances of a stack, in wavelengths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Spacing {
    /// Input plane to first layer.
    pub z_in: f64,
    /// Between consecutive layers.
    pub delta_z: f64,
    /// Last layer to output plane.
    pub z_out: f64,
}

impl Spacing {
    pub fn uniform(delta_z: f64) -> Self {
        Spacing {
            z_in: delta_z,
            delta_z,
            z_out: delta_z,
        }
    }
}

/// A stack of diffractive layers sharing one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct D2nnModel {
    pub grid: GridSpec,
    pub layers: Vec<LayerParams>,
    pub modulation: ModulationMode,
    pub parameterization: Parameterization,
    pub spacing: Spacing,
    pub padding_factor: usize,
}

impl D2nnModel {
    pub fn new(
        grid: GridSpec,
        n_layers: usize,
        modulation: ModulationMode,
        parameterization: Parameterization,
        spacing: Spacing,
    ) -> Result<Self> {
        let model = D2nnModel {
            grid,
            layers: (0..n_layers)
                .map(|_| LayerParams::initial(grid.len(), parameterization))
                .collect(),
            modulation,
            parameterization,
            spacing,
            padding_factor: DEFAULT_PADDING,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.layers.is_empty() {
            return Err(D2nnError::InvalidInput("a model needs at least one layer".into()));
        }
        let Spacing { z_in, delta_z, z_out } = self.spacing;
        if !(delta_z.is_finite() && delta_z > 0.0) {
            return Err(D2nnError::InvalidInput(format!("delta_z must be positive, got {delta_z}")));
        }
        if !(z_in.is_finite() && z_in >= 0.0 && z_out.is_finite() && z_out >= 0.0) {
            return Err(D2nnError::InvalidInput(format!(
                "z_in and z_out must be non-negative, got {z_in}, {z_out}"
            )));
        }
        if self.padding_factor < 2 {
            return Err(D2nnError::InvalidInput("padding factor must be at least 2".into()));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.alpha.len() != self.grid.len() || layer.beta.len() != self.grid.len() {
                return Err(D2nnError::Shape(format!(
                    "layer {l} latents do not match grid {}",
                    self.grid
                )));
            }
            if !layer.alpha.iter().chain(&layer.beta).all(|v| v.is_finite()) {
                return Err(D2nnError::NonFinite("layer latents"));
            }
        }
        Ok(())
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    /// Number of latent scalars that training updates.
    pub fn trainable_count(&self) -> usize {
        let per_layer = match self.modulation {
            ModulationMode::PhaseOnly => self.grid.len(),
            ModulationMode::Complex => 2 * self.grid.len(),
        };
        per_layer * self.layers.len()
    }

    pub fn transmissions(&self) -> Vec<Transmission> {
        self.layers
            .iter()
            .map(|l| Transmission::new(l, self.modulation, self.parameterization))
            .collect()
    }
}

/// Cached propagation plans for a model geometry.
#[derive(Debug, Clone)]
pub struct StackPlans {
    pub input: Arc<PropagationPlan>,
    pub between: Arc<PropagationPlan>,
    pub output: Arc<PropagationPlan>,
}

impl StackPlans {
    pub fn new(grid: GridSpec, spacing: Spacing, padding_factor: usize) -> Result<Self> {
        let mut cache: Vec<Arc<PropagationPlan>> = Vec::new();
        let mut plan = |z: f64| -> Result<Arc<PropagationPlan>> {
            if let Some(p) = cache.iter().find(|p| p.distance() == z) {
                return Ok(p.clone());
            }
            let p = Arc::new(PropagationPlan::new(grid, z, padding_factor)?);
            cache.push(p.clone());
            Ok(p)
        };
        Ok(StackPlans {
            input: plan(spacing.z_in)?,
            between: plan(spacing.delta_z)?,
            output: plan(spacing.z_out)?,
        })
    }

    pub fn for_model(model: &D2nnModel) -> Result<Self> {
        Self::new(model.grid, model.spacing, model.padding_factor)
    }

    /// Plan applied after layer `l` of an `n`-layer stack.
    fn after_layer(&self, l: usize, n: usize) -> &PropagationPlan {
        if l + 1 == n {
            &self.output
        } else {
            &self.between
        }
    }
}

/// Intermediate fields retained for the adjoint pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Field incident on each layer, before modulation.
    pub layer_inputs: Vec<Vec<Complex64>>,
    pub output: Vec<Complex64>,
}

impl ForwardTrace {
    pub fn intensity(&self) -> Vec<f64> {
        self.output.iter().map(|u| u.norm_sqr()).collect()
    }
}

/// Gradients of a scalar loss with respect to every latent of a stack.
#[derive(Debug, Clone, PartialEq)]
pub struct StackGradients {
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
}

impl StackGradients {
    pub fn zeros(n_layers: usize, len: usize) -> Self {
        StackGradients {
            alpha: vec![vec![0.0; len]; n_layers],
            beta: vec![vec![0.0; len]; n_layers],
        }
    }

    pub fn accumulate(&mut self, other: &StackGradients, weight: f64) {
        for (dst, src) in self.alpha.iter_mut().zip(&other.alpha) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += weight * s);
        }
        for (dst, src) in self.beta.iter_mut().zip(&other.beta) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += weight * s);
        }
    }

    /// Fails with the offending layer if any entry is NaN or infinite.
    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        for (l, (a, b)) in self.alpha.iter().zip(&self.beta).enumerate() {
            if !a.iter().chain(b).all(|v| v.is_finite()) {
                return Err(D2nnError::NonFiniteGradient {
                    location: format!("{what} layer {l}"),
                });
            }
        }
        Ok(())
    }
}

/// A model compiled for repeated forward and adjoint evaluation.
#[derive(Debug, Clone)]
pub struct OpticalStack {
    pub model: D2nnModel,
    plans: StackPlans,
    transmissions: Vec<Transmission>,
}

impl OpticalStack {
    pub fn new(model: D2nnModel) -> Result<Self> {
        model.validate()?;
        let plans = StackPlans::for_model(&model)?;
        let transmissions = model.transmissions();
        Ok(OpticalStack {
            model,
            plans,
            transmissions,
        })
    }

    /// Recomputes transmissions after the latents changed.
    pub fn refresh(&mut self) {
        self.transmissions = self.model.transmissions();
    }

    pub fn grid(&self) -> &GridSpec {
        &self.model.grid
    }

    pub fn transmissions(&self) -> &[Transmission] {
        &self.transmissions
    }

    pub fn forward_values(&self, input: &[Complex64]) -> ForwardTrace {
        let len = self.model.grid.len();
        let n = self.transmissions.len();
        let mut layer_inputs = Vec::with_capacity(n);
        let mut field = vec![Complex64::new(0.0, 0.0); len];
        self.plans.input.apply(input, false, &mut field);
        let mut next = vec![Complex64::new(0.0, 0.0); len];
        for (l, tr) in self.transmissions.iter().enumerate() {
            layer_inputs.push(field.clone());
            field.iter_mut().zip(&tr.t).for_each(|(u, t)| *u *= t);
            self.plans.after_layer(l, n).apply(&field, false, &mut next);
            std::mem::swap(&mut field, &mut next);
        }
        ForwardTrace {
            layer_inputs,
            output: field,
        }
    }

    pub fn forward(&self, input: &ComplexField) -> Result<ForwardTrace> {
        self.model.grid.ensure_same(input.grid())?;
        if !input.is_finite() {
            return Err(D2nnError::NonFinite("model input"));
        }
        Ok(self.forward_values(input.values()))
    }

    /// Adjoint pass from `grad_output` (gradient with respect to the output field).
    ///
    /// Returns the latent gradients and the gradient with respect to the input field.
    pub fn backward(&self, trace: &ForwardTrace, grad_output: &[Complex64]) -> (StackGradients, Vec<Complex64>) {
        let len = self.model.grid.len();
        let n = self.transmissions.len();
        let mut grads = StackGradients::zeros(n, len);
        let mut g = grad_output.to_vec();
        let mut next = vec![Complex64::new(0.0, 0.0); len];
        for l in (0..n).rev() {
            self.plans.after_layer(l, n).apply(&g, true, &mut next);
            std::mem::swap(&mut g, &mut next);
            let tr = &self.transmissions[l];
            let grad_t: Vec<Complex64> = g
                .iter()
                .zip(&trace.layer_inputs[l])
                .map(|(g, u)| g * u.conj())
                .collect();
            let (da, db) = tr.latent_gradients(&self.model.layers[l], &grad_t);
            grads.alpha[l] = da;
            grads.beta[l] = db;
            g.iter_mut().zip(&tr.t).for_each(|(g, t)| *g *= t.conj());
        }
        self.plans.input.apply(&g, true, &mut next);
        (grads, next)
    }
}

/// Runs the optical stack and returns the output field and its intensity.
pub fn model_forward(input: &ComplexField, model: &D2nnModel) -> Result<(ComplexField, Vec<f64>)> {
    let stack = OpticalStack::new(model.clone())?;
    let trace = stack.forward(input)?;
    let intensity = trace.intensity();
    Ok((ComplexField::from_parts(model.grid, trace.output), intensity))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::optics::relative_l2;
    use crate::propagation::asm_propagate;

    fn grid(n: usize) -> GridSpec {
        GridSpec::square(n, 0.53).unwrap()
    }

    fn layer(alpha: Vec<f64>, beta: Vec<f64>) -> LayerParams {
        LayerParams { alpha, beta }
    }

    #[test]
    fn sigmoid_values() {
        let m = modulation_sigmoid(&layer(vec![0.0], vec![0.0]));
        assert_eq!(m.amplitude[0], 0.5);
        assert!((m.phase[0] - PI).abs() < 1e-15);
        let m = modulation_sigmoid(&layer(vec![0.0], vec![20.0]));
        assert!((m.phase[0] - 2.0 * PI / (1.0 + (-20.0f64).exp())).abs() < 1e-14);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }

    #[test]
    fn relu_norm_values() {
        let m = modulation_relu_norm(&layer(vec![0.7; 4], vec![0.5; 4]));
        assert!(m.amplitude.iter().all(|&a| a == 1.0));
        assert!(m.phase.iter().all(|&p| (p - PI).abs() < 1e-15));

        let m = modulation_relu_norm(&layer(vec![-1.0, 2.0, 1.0], vec![0.0; 3]));
        assert_eq!(m.amplitude, vec![0.0, 1.0, 0.5]);

        let m = modulation_relu_norm(&layer(vec![-1.0, -2.0], vec![0.0; 2]));
        assert_eq!(m.amplitude, vec![0.0, 0.0]);
    }

    #[test]
    fn relu_norm_phase_is_periodic_in_beta() {
        let a = layer_transmission(&layer(vec![1.0], vec![0.3]), ModulationMode::Complex, Parameterization::ReluNorm);
        let b = layer_transmission(&layer(vec![1.0], vec![1.3]), ModulationMode::Complex, Parameterization::ReluNorm);
        assert!((a[0] - b[0]).norm() < 1e-12);
    }

    #[test]
    fn transmission_cases() {
        let p = Parameterization::ReluNorm;
        let t = layer_transmission(&layer(vec![1.0], vec![0.0]), ModulationMode::Complex, p);
        assert!((t[0] - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        let t = layer_transmission(&layer(vec![-1.0, 1.0], vec![0.37, 0.0]), ModulationMode::Complex, p);
        assert_eq!(t[0], Complex64::new(0.0, 0.0));
        let t = layer_transmission(&layer(vec![1.0], vec![0.5]), ModulationMode::Complex, p);
        assert!((t[0] + 1.0).norm() < 1e-15);
        // phase-only ignores α entirely
        let t = layer_transmission(&layer(vec![-3.0], vec![0.5]), ModulationMode::PhaseOnly, p);
        assert!((t[0] + 1.0).norm() < 1e-15);
    }

    #[test]
    fn initialization_is_pi_phase_unit_amplitude() {
        let tr = Transmission::new(&LayerParams::initial(4, Parameterization::ReluNorm), ModulationMode::Complex, Parameterization::ReluNorm);
        assert!(tr.t.iter().all(|t| (t + 1.0).norm() < 1e-15));
        let tr = Transmission::new(&LayerParams::initial(4, Parameterization::Sigmoid), ModulationMode::Complex, Parameterization::Sigmoid);
        assert!(tr.modulation.amplitude.iter().all(|&a| (a - sigmoid(4.0)).abs() < 1e-15 && a > 0.98));
        assert!(tr.modulation.phase.iter().all(|&p| (p - PI).abs() < 1e-15));
    }

    #[test]
    fn amplitude_stays_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for p in [Parameterization::Sigmoid, Parameterization::ReluNorm] {
            let l = layer(
                (0..200).map(|_| rng.gen_range(-50.0..50.0)).collect(),
                (0..200).map(|_| rng.gen_range(-50.0..50.0)).collect(),
            );
            let tr = Transmission::new(&l, ModulationMode::Complex, p);
            assert!(tr.modulation.amplitude.iter().all(|&a| (0.0..=1.0).contains(&a)));
        }
    }

    #[test]
    fn model_validation() {
        let g = grid(4);
        assert!(D2nnModel::new(g, 0, ModulationMode::PhaseOnly, Parameterization::ReluNorm, Spacing::uniform(1.0)).is_err());
        assert!(D2nnModel::new(g, 1, ModulationMode::PhaseOnly, Parameterization::ReluNorm, Spacing::uniform(0.0)).is_err());
        let mut m = D2nnModel::new(g, 2, ModulationMode::PhaseOnly, Parameterization::ReluNorm, Spacing::uniform(1.0)).unwrap();
        assert_eq!(m.trainable_count(), 32);
        m.layers[1].beta.pop();
        assert!(m.validate().is_err());
        let m = D2nnModel::new(g, 1, ModulationMode::PhaseOnly, Parameterization::ReluNorm, Spacing::uniform(1.0)).unwrap();
        assert!(model_forward(&ComplexField::zeros(grid(5)), &m).is_err());
    }

    #[test]
    fn transparent_layer_composes_distances() {
        let g = grid(48);
        let c = 23.5;
        let input = ComplexField::from_fn(g, |ix, iy| {
            let r2 = (ix as f64 - c).powi(2) + (iy as f64 - c).powi(2);
            Complex64::new((-r2 / 18.0).exp(), 0.0)
        })
        .unwrap();
        let spacing = Spacing { z_in: 3.0, delta_z: 5.0, z_out: 4.5 };
        let mut model = D2nnModel::new(g, 1, ModulationMode::PhaseOnly, Parameterization::ReluNorm, spacing).unwrap();
        model.layers[0].beta.iter_mut().for_each(|b| *b = 0.0);
        let (out, intensity) = model_forward(&input, &model).unwrap();
        let direct = asm_propagate(&input, 7.5, 2).unwrap();
        assert!(relative_l2(out.values(), direct.values()) < 1e-6);
        assert_eq!(intensity.len(), g.len());
    }

    #[test]
    fn passive_layers_never_add_power() {
        let g = grid(16);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let input = ComplexField::from_fn(g, |_, _| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).unwrap();
        for mode in [ModulationMode::PhaseOnly, ModulationMode::Complex] {
            let mut model = D2nnModel::new(g, 3, mode, Parameterization::ReluNorm, Spacing::uniform(2.0)).unwrap();
            for l in &mut model.layers {
                l.alpha.iter_mut().for_each(|a| *a = rng.gen_range(-1.0..1.0));
                l.beta.iter_mut().for_each(|b| *b = rng.gen_range(-1.0..1.0));
            }
            let (out, _) = model_forward(&input, &model).unwrap();
            assert!(out.total_power() <= input.total_power() * (1.0 + 1e-6));
        }
    }
}

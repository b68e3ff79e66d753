//! Output-plane class detectors and the two training losses.

use serde::{Deserialize, Serialize};

use crate::error::{D2nnError, Result};
use crate::optics::GridSpec;

/// Detector side at the 200-neuron reference scale, in wavelengths.
pub const REFERENCE_DETECTOR_SIDE: f64 = 6.4;
/// Side of the central region holding the detectors at reference scale.
pub const REFERENCE_REGION_SIDE: f64 = 53.3;
/// Neurons per axis at reference scale.
pub const REFERENCE_NEURONS: usize = 200;
/// Upper end of the normalized detector range.
pub const NORMALIZED_MAX: f64 = 10.0;

/// An axis-aligned square detector. Coordinates are in wavelengths relative to the optical axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorRegion {
    pub x: f64,
    pub y: f64,
    pub side: f64,
}

impl DetectorRegion {
    /// True when the sample center lies strictly inside the square.
    #[inline]
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let h = self.side / 2.0;
        (x - self.x).abs() < h && (y - self.y).abs() < h
    }

    fn overlaps(&self, other: &DetectorRegion) -> bool {
        let reach = (self.side + other.side) / 2.0;
        (self.x - other.x).abs() < reach && (self.y - other.y).abs() < reach
    }
}

/// One detector per class; the region index is the class label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorLayout {
    pub regions: Vec<DetectorRegion>,
}

impl DetectorLayout {
    /// Ten detectors in a 3-4-3 arrangement spread over the central region.
    ///
    /// Sizes scale with the grid side relative to the 200-neuron reference.
    /// Centers are snapped to sample positions so every detector covers the
    /// same number of samples.
    pub fn ten_class(grid: &GridSpec) -> Self {
        let scale = grid.nx.min(grid.ny) as f64 / REFERENCE_NEURONS as f64;
        let side = REFERENCE_DETECTOR_SIDE * scale;
        let reach = (REFERENCE_REGION_SIDE * scale - side) / 2.0;
        let rows: [(f64, usize); 3] = [(-reach, 3), (0.0, 4), (reach, 3)];
        let snap_x = |x: f64| {
            let i = (x / grid.dx + (grid.nx as f64 - 1.0) / 2.0).round();
            grid.coord_x(i.clamp(0.0, grid.nx as f64 - 1.0) as usize)
        };
        let snap_y = |y: f64| {
            let i = (y / grid.dx + (grid.ny as f64 - 1.0) / 2.0).round();
            grid.coord_y(i.clamp(0.0, grid.ny as f64 - 1.0) as usize)
        };
        let mut regions = Vec::with_capacity(10);
        for (y, count) in rows {
            for k in 0..count {
                let x = -reach + 2.0 * reach * k as f64 / (count - 1) as f64;
                regions.push(DetectorRegion {
                    x: snap_x(x),
                    y: snap_y(y),
                    side,
                });
            }
        }
        DetectorLayout { regions }
    }

    pub fn classes(&self) -> usize {
        self.regions.len()
    }

    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        if self.regions.is_empty() {
            return Err(D2nnError::config("detectors", "layout has no regions"));
        }
        let (hx, hy) = (grid.side_x() / 2.0, grid.side_y() / 2.0);
        for (i, r) in self.regions.iter().enumerate() {
            if !(r.side > 0.0 && r.side.is_finite() && r.x.is_finite() && r.y.is_finite()) {
                return Err(D2nnError::config("detectors", format!("region {i} is degenerate")));
            }
            let h = r.side / 2.0;
            if r.x - h < -hx || r.x + h > hx || r.y - h < -hy || r.y + h > hy {
                return Err(D2nnError::config("detectors", format!("region {i} leaves the output grid")));
            }
            for (j, other) in self.regions.iter().enumerate().skip(i + 1) {
                if r.overlaps(other) {
                    return Err(D2nnError::config("detectors", format!("regions {i} and {j} overlap")));
                }
            }
        }
        Ok(())
    }

    /// Resolves the layout against a grid into per-class sample lists.
    pub fn compile(&self, grid: &GridSpec) -> Result<CompiledLayout> {
        self.validate(grid)?;
        let mut samples = vec![Vec::new(); self.regions.len()];
        for iy in 0..grid.ny {
            let y = grid.coord_y(iy);
            for ix in 0..grid.nx {
                let x = grid.coord_x(ix);
                if let Some(l) = self.regions.iter().position(|r| r.contains(x, y)) {
                    samples[l].push(iy * grid.nx + ix);
                }
            }
        }
        if let Some(l) = samples.iter().position(|s| s.is_empty()) {
            return Err(D2nnError::config(
                "detectors",
                format!("region {l} covers no sample centers on grid {grid}"),
            ));
        }
        Ok(CompiledLayout {
            grid: *grid,
            samples,
        })
    }
}

/// A [`DetectorLayout`] resolved to sample indices on a specific grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledLayout {
    pub grid: GridSpec,
    pub samples: Vec<Vec<usize>>,
}

impl CompiledLayout {
    pub fn classes(&self) -> usize {
        self.samples.len()
    }

    /// Area covered by detector `l`, in λ².
    pub fn area(&self, l: usize) -> f64 {
        self.samples[l].len() as f64 * self.grid.cell_area()
    }

    /// Integrated intensity per detector, in units of power.
    pub fn signals(&self, intensity: &[f64]) -> Vec<f64> {
        let area = self.grid.cell_area();
        self.samples
            .iter()
            .map(|idx| idx.iter().map(|&i| intensity[i]).sum::<f64>() * area)
            .collect()
    }
}

/// Integrated intensity per detector.
pub fn detector_signals(intensity: &[f64], grid: &GridSpec, layout: &DetectorLayout) -> Result<Vec<f64>> {
    if intensity.len() != grid.len() {
        return Err(D2nnError::Shape(format!(
            "intensity has {} samples, grid {grid} needs {}",
            intensity.len(),
            grid.len()
        )));
    }
    Ok(layout.compile(grid)?.signals(intensity))
}

/// Index of the largest signal; ties go to the lowest index.
pub fn classify(signals: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in signals.iter().enumerate().skip(1) {
        if v > signals[best] {
            best = i;
        }
    }
    best
}

/// Mean squared error between an output intensity and a target map.
pub fn mse_loss(intensity: &[f64], target: &TargetMap) -> Result<f64> {
    if intensity.len() != target.values.len() {
        return Err(D2nnError::GridMismatch {
            expected: format!("{} samples", target.values.len()),
            found: format!("{} samples", intensity.len()),
        });
    }
    let k = intensity.len() as f64;
    Ok(intensity
        .iter()
        .zip(&target.values)
        .map(|(s, g)| (s - g) * (s - g))
        .sum::<f64>()
        / k)
}

/// Rescales detector signals so the largest equals 10. An all-zero vector stays zero.
pub fn normalize_detectors(signals: &[f64]) -> Result<Vec<f64>> {
    if let Some(v) = signals.iter().find(|v| !(**v >= 0.0)) {
        return Err(D2nnError::InvalidInput(format!("negative detector signal {v}")));
    }
    let max = signals.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return Ok(vec![0.0; signals.len()]);
    }
    Ok(signals.iter().map(|v| v / max * NORMALIZED_MAX).collect())
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `-log softmax(logits)[label]`, evaluated without overflow.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    lse - logits[label]
}

/// Softmax cross-entropy of normalized detector signals against a one-hot label.
pub fn sce_loss(normalized: &[f64], label: usize) -> Result<f64> {
    if label >= normalized.len() {
        return Err(D2nnError::InvalidInput(format!(
            "label {label} out of range for {} detectors",
            normalized.len()
        )));
    }
    Ok(cross_entropy(normalized, label))
}

/// Desired output intensity for one class.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetMap {
    pub label: usize,
    pub values: Vec<f64>,
}

/// Unit intensity inside the label's detector, zero elsewhere.
pub fn target_map(label: usize, layout: &CompiledLayout) -> Result<TargetMap> {
    if label >= layout.classes() {
        return Err(D2nnError::InvalidInput(format!("label {label} has no detector")));
    }
    let mut values = vec![0.0; layout.grid.len()];
    for &i in &layout.samples[label] {
        values[i] = 1.0;
    }
    Ok(TargetMap { label, values })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    Sce,
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::Mse => "mse",
            LossKind::Sce => "sce",
        })
    }
}

/// Loss of one output intensity and its gradient with respect to every intensity sample.
pub fn loss_and_intensity_grad(
    kind: LossKind,
    intensity: &[f64],
    label: usize,
    layout: &CompiledLayout,
) -> (f64, Vec<f64>) {
    match kind {
        LossKind::Mse => {
            let k = intensity.len() as f64;
            let mut grad: Vec<f64> = intensity.iter().map(|s| 2.0 * s / k).collect();
            let mut loss: f64 = intensity.iter().map(|s| s * s).sum();
            for &i in &layout.samples[label] {
                let s = intensity[i];
                loss += (s - 1.0) * (s - 1.0) - s * s;
                grad[i] = 2.0 * (s - 1.0) / k;
            }
            (loss / k, grad)
        }
        LossKind::Sce => {
            let signals = layout.signals(intensity);
            let (loss, d_signals) = sce_signal_grad(&signals, label);
            let area = layout.grid.cell_area();
            let mut grad = vec![0.0; intensity.len()];
            for (idx, d) in layout.samples.iter().zip(&d_signals) {
                for &i in idx {
                    grad[i] = d * area;
                }
            }
            (loss, grad)
        }
    }
}

/// Softmax cross-entropy of normalized signals and its gradient with respect to the raw signals.
pub fn sce_signal_grad(signals: &[f64], label: usize) -> (f64, Vec<f64>) {
    let d = signals.len();
    let argmax = classify(signals);
    let max = signals[argmax];
    if !(max > 0.0) {
        // I' ≡ 0: uniform softmax, no usable gradient
        return ((d as f64).ln(), vec![0.0; d]);
    }
    let normalized: Vec<f64> = signals.iter().map(|v| v / max * NORMALIZED_MAX).collect();
    let p = softmax(&normalized);
    let loss = cross_entropy(&normalized, label);
    // ∂L/∂I'_l = p_l - g_l
    let d_norm: Vec<f64> = p
        .iter()
        .enumerate()
        .map(|(l, &p)| p - if l == label { 1.0 } else { 0.0 })
        .collect();
    // I'_l = 10·I_l/M
    let mut grad: Vec<f64> = d_norm.iter().map(|g| g * NORMALIZED_MAX / max).collect();
    let through_max: f64 = d_norm
        .iter()
        .zip(signals)
        .map(|(g, v)| g * v)
        .sum::<f64>()
        * NORMALIZED_MAX
        / (max * max);
    grad[argmax] -= through_max;
    (loss, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(n: usize) -> GridSpec {
        GridSpec::square(n, 0.53).unwrap()
    }

    #[test]
    fn default_layout_is_valid_at_both_scales() {
        for n in [64, 200] {
            let g = grid(n);
            let layout = DetectorLayout::ten_class(&g);
            assert_eq!(layout.classes(), 10);
            let compiled = layout.compile(&g).unwrap();
            let counts: Vec<usize> = compiled.samples.iter().map(|s| s.len()).collect();
            assert!(counts.iter().all(|&c| c == counts[0] && c > 0), "{counts:?}");
        }
        let compiled = DetectorLayout::ten_class(&grid(200)).compile(&grid(200)).unwrap();
        // 6.4λ side at 0.53λ pitch covers 13 samples per axis
        assert_eq!(compiled.samples[0].len(), 169);
    }

    #[test]
    fn layout_validation() {
        let g = grid(20);
        let overlapping = DetectorLayout {
            regions: vec![
                DetectorRegion { x: 0.0, y: 0.0, side: 2.0 },
                DetectorRegion { x: 1.0, y: 0.0, side: 2.0 },
            ],
        };
        assert!(overlapping.validate(&g).is_err());
        let outside = DetectorLayout {
            regions: vec![DetectorRegion { x: 5.0, y: 0.0, side: 2.0 }],
        };
        assert!(outside.validate(&g).is_err());
    }

    #[test]
    fn boundary_samples_are_excluded() {
        let g = GridSpec::square(4, 1.0).unwrap();
        // samples at ±0.5, ±1.5; a side-1 square centered at 0 touches ±0.5 only on its edge
        let layout = DetectorLayout {
            regions: vec![DetectorRegion { x: 0.0, y: 0.0, side: 1.0 }],
        };
        assert!(layout.compile(&g).is_err());
        let layout = DetectorLayout {
            regions: vec![DetectorRegion { x: 0.0, y: 0.0, side: 1.01 }],
        };
        assert_eq!(layout.compile(&g).unwrap().samples[0].len(), 4);
    }

    #[test]
    fn signals_of_simple_intensities() {
        let g = grid(64);
        let layout = DetectorLayout::ten_class(&g);
        let zero = detector_signals(&vec![0.0; g.len()], &g, &layout).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
        let compiled = layout.compile(&g).unwrap();
        let ones = compiled.signals(&vec![1.0; g.len()]);
        for (l, v) in ones.iter().enumerate() {
            assert_eq!(*v, compiled.area(l));
            assert_eq!(*v, ones[0]);
        }
    }

    #[test]
    fn signals_match_masked_sum() {
        let g = grid(40);
        let layout = DetectorLayout::ten_class(&g);
        let compiled = layout.compile(&g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let intensity: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(0.0..2.0)).collect();
        let signals = compiled.signals(&intensity);
        for (l, region) in layout.regions.iter().enumerate() {
            let mut oracle = 0.0;
            for iy in 0..g.ny {
                for ix in 0..g.nx {
                    if region.contains(g.coord_x(ix), g.coord_y(iy)) {
                        oracle += intensity[iy * g.nx + ix] * g.dx * g.dx;
                    }
                }
            }
            assert!((signals[l] - oracle).abs() <= 1e-12 * oracle.max(1.0));
        }
        assert!(signals.iter().sum::<f64>() <= intensity.iter().sum::<f64>() * g.cell_area());
    }

    #[test]
    fn classify_rules() {
        assert_eq!(classify(&[0.1, 0.9, 0.2]), 1);
        assert_eq!(classify(&[0.5; 4]), 0);
        let v = [0.3, 0.1, 0.7, 0.69];
        let scaled: Vec<f64> = v.iter().map(|x| x * 37.5).collect();
        assert_eq!(classify(&v), classify(&scaled));
    }

    #[test]
    fn mse_cases() {
        let target = TargetMap { label: 0, values: vec![0.0, 1.0, 0.5] };
        assert_eq!(mse_loss(&target.values, &target).unwrap(), 0.0);
        let shifted: Vec<f64> = target.values.iter().map(|v| v + 1.0).collect();
        assert!((mse_loss(&shifted, &target).unwrap() - 1.0).abs() < 1e-15);
        assert!(mse_loss(&[0.0; 2], &target).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s: Vec<f64> = (0..50).map(|_| rng.gen::<f64>()).collect();
        let g: Vec<f64> = (0..50).map(|_| rng.gen::<f64>()).collect();
        let mut oracle = 0.0;
        for i in 0..50 {
            oracle += (s[i] - g[i]).powi(2);
        }
        oracle /= 50.0;
        let target = TargetMap { label: 0, values: g };
        assert!((mse_loss(&s, &target).unwrap() - oracle).abs() < 1e-15);
    }

    #[test]
    fn normalization_cases() {
        assert_eq!(normalize_detectors(&[2.0, 4.0]).unwrap(), vec![5.0, 10.0]);
        assert_eq!(normalize_detectors(&[3.0; 3]).unwrap(), vec![10.0; 3]);
        assert_eq!(normalize_detectors(&[0.0; 3]).unwrap(), vec![0.0; 3]);
        assert!(normalize_detectors(&[1.0, -0.1]).is_err());
        let v = [0.2, 0.5, 0.05];
        let scaled: Vec<f64> = v.iter().map(|x| x * 1e-7).collect();
        assert_eq!(normalize_detectors(&v).unwrap(), normalize_detectors(&scaled).unwrap());
    }

    #[test]
    fn sce_cases() {
        let uniform = vec![4.2; 10];
        assert!((sce_loss(&uniform, 3).unwrap() - 10f64.ln()).abs() < 1e-12);
        let l = sce_loss(&[10.0, 0.0], 0).unwrap();
        // ln(1 + e^-10)
        assert!((l - 4.539889921686465e-5).abs() < 1e-15);
        let confident = sce_loss(&[1000.0, 0.0, 0.0], 0).unwrap();
        assert!(confident >= 0.0 && confident < 1e-300);
        assert!(sce_loss(&[1.0], 1).is_err());
    }

    #[test]
    fn target_map_cases() {
        let g = grid(64);
        let compiled = DetectorLayout::ten_class(&g).compile(&g).unwrap();
        let a = target_map(2, &compiled).unwrap();
        let b = target_map(7, &compiled).unwrap();
        let power: f64 = a.values.iter().sum::<f64>() * g.cell_area();
        assert!((power - compiled.area(2)).abs() < 1e-12);
        assert!(a.values.iter().zip(&b.values).all(|(x, y)| x * y == 0.0));
        let s = compiled.signals(&a.values);
        for (l, v) in s.iter().enumerate() {
            if l == 2 {
                assert!((v - compiled.area(2)).abs() < 1e-12);
            } else {
                assert_eq!(*v, 0.0);
            }
        }
        assert!(target_map(10, &compiled).is_err());
    }

    #[test]
    fn mse_gradient_matches_closed_form_loss() {
        let g = grid(32);
        let compiled = DetectorLayout::ten_class(&g).compile(&g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(0.0..1.5)).collect();
        let (loss, grad) = loss_and_intensity_grad(LossKind::Mse, &s, 5, &compiled);
        let target = target_map(5, &compiled).unwrap();
        assert!((loss - mse_loss(&s, &target).unwrap()).abs() < 1e-14);
        for i in [0, 17, compiled.samples[5][0]] {
            let h = 1e-6;
            let mut sp = s.clone();
            sp[i] += h;
            let mut sm = s.clone();
            sm[i] -= h;
            let fd = (mse_loss(&sp, &target).unwrap() - mse_loss(&sm, &target).unwrap()) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn sce_signal_gradient_matches_finite_differences() {
        let signals = [0.3, 1.7, 0.9, 1.1];
        let (_, grad) = sce_signal_grad(&signals, 2);
        let f = |s: &[f64]| {
            let n = normalize_detectors(s).unwrap();
            sce_loss(&n, 2).unwrap()
        };
        for i in 0..4 {
            let h = 1e-6;
            let mut sp = signals;
            sp[i] += h;
            let mut sm = signals;
            sm[i] -= h;
            let fd = (f(&sp) - f(&sm)) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-7, "{i}: {fd} vs {}", grad[i]);
        }
    }
}

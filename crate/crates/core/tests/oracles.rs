use std::f64::consts::PI;

use d2nn::layer::{model_forward, D2nnModel, ModulationMode, Parameterization, Spacing};
use d2nn::optics::{relative_l2, total_power, ComplexField, GridSpec};
use d2nn::propagation::{asm_propagate, band_limited_field, rs_propagate, PropagationPlan};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn grid(n: usize, dx: f64) -> GridSpec {
    GridSpec::square(n, dx).unwrap()
}

#[test]
fn asm_agrees_with_direct_summation() {
    let g = grid(16, 0.53);
    for z in [4.0, 40.0] {
        for seed in 0..3 {
            let input = band_limited_field(g, 0.3, 2.5, 6, seed).unwrap();
            let asm = asm_propagate(&input, z, 8).unwrap();
            let rs = rs_propagate(&input, z).unwrap();
            let err = relative_l2(asm.values(), rs.values());
            assert!(err <= 0.02, "z={z} seed={seed}: {err}");
        }
    }
}

#[test]
fn single_sample_source_on_fine_grid() {
    let g = grid(16, 0.45);
    let input = ComplexField::from_fn(g, |ix, iy| {
        if (ix, iy) == (8, 8) {
            Complex64::new(1.0, 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    })
    .unwrap();
    let asm = asm_propagate(&input, 4.0, 16).unwrap();
    let rs = rs_propagate(&input, 4.0).unwrap();
    let err = relative_l2(asm.values(), rs.values());
    assert!(err <= 0.02, "{err}");
}

/// Random phase mask built from a few low spatial frequencies (cycles per wavelength).
fn smooth_phase(g: GridSpec, max_freq: f64, rng: &mut impl Rng) -> Vec<f64> {
    let terms: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.gen_range(-max_freq..max_freq),
                rng.gen_range(-max_freq..max_freq),
                rng.gen_range(0.0..2.0 * PI),
                rng.gen_range(0.0..PI),
            )
        })
        .collect();
    (0..g.len())
        .map(|i| {
            let (x, y) = (g.coord_x(i % g.nx), g.coord_y(i / g.nx));
            terms
                .iter()
                .map(|(fx, fy, p, a)| a * (2.0 * PI * (fx * x + fy * y) + p).cos())
                .sum()
        })
        .collect()
}

fn smooth_model(g: GridSpec, layers: usize, mode: ModulationMode, padding: usize, max_freq: f64, seed: u64) -> D2nnModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = D2nnModel::new(g, layers, mode, Parameterization::ReluNorm, Spacing::uniform(4.0)).unwrap();
    m.padding_factor = padding;
    for l in &mut m.layers {
        l.beta = smooth_phase(g, max_freq, &mut rng).iter().map(|p| p / (2.0 * PI)).collect();
        if mode == ModulationMode::Complex {
            l.alpha = (0..g.len()).map(|_| rng.gen_range(0.5..1.0)).collect();
        }
    }
    m
}

#[test]
fn two_layer_model_matches_direct_summation_chain() {
    let g = grid(16, 0.53);
    for (seed, mode) in [(1, ModulationMode::PhaseOnly), (2, ModulationMode::Complex)] {
        let model = smooth_model(g, 2, mode, 8, 0.1, seed);
        let input = band_limited_field(g, 0.3, 2.5, 6, seed + 10).unwrap();
        let (asm_out, _) = model_forward(&input, &model).unwrap();

        let mut u = rs_propagate(&input, model.spacing.z_in).unwrap();
        for (l, t) in model.transmissions().iter().enumerate() {
            let modulated: Vec<Complex64> = u.values().iter().zip(&t.t).map(|(a, b)| a * b).collect();
            let z = if l + 1 == model.n_layers() { model.spacing.z_out } else { model.spacing.delta_z };
            u = rs_propagate(&ComplexField::new(g, modulated).unwrap(), z).unwrap();
        }
        let err = relative_l2(asm_out.values(), u.values());
        assert!(err <= 0.02, "{mode}: {err}");
    }
}

fn gaussian(g: GridSpec, sigma: f64, seed: u64) -> ComplexField {
    band_limited_field(g, 0.05, sigma, 3, seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn band_limited_propagation_conserves_power(seed in 0u64..1000, z in 0.5f64..8.0) {
        let g = grid(64, 0.53);
        let input = gaussian(g, 4.0, seed);
        let out = PropagationPlan::new(g, z, 2).unwrap().propagate(&input).unwrap();
        let (p0, p1) = (total_power(&input), total_power(&out));
        prop_assert!(((p1 - p0) / p0).abs() <= 1e-6, "{} vs {}", p0, p1);
    }

    #[test]
    fn phase_only_model_conserves_power(seed in 0u64..1000, layers in 1usize..4) {
        let g = grid(64, 0.53);
        let input = gaussian(g, 4.0, seed);
        let model = smooth_model(g, layers, ModulationMode::PhaseOnly, 2, 0.01, seed);
        let (out, intensity) = model_forward(&input, &model).unwrap();
        let (p0, p1) = (total_power(&input), total_power(&out));
        prop_assert!(((p1 - p0) / p0).abs() <= 1e-6, "{} vs {}", p0, p1);
        prop_assert!((intensity.iter().sum::<f64>() * g.cell_area() - p1).abs() <= 1e-12 * p1);
    }

    #[test]
    fn complex_model_never_gains_power(seed in 0u64..1000) {
        let g = grid(32, 0.53);
        let input = band_limited_field(g, 0.5, 3.0, 5, seed).unwrap();
        let model = smooth_model(g, 2, ModulationMode::Complex, 2, 0.1, seed);
        let (out, _) = model_forward(&input, &model).unwrap();
        prop_assert!(total_power(&out) <= total_power(&input) * (1.0 + 1e-6));
    }

    #[test]
    fn integer_beta_shift_keeps_transmission(seed in 0u64..1000, shift in -3i32..4) {
        let g = grid(8, 0.53);
        let model = smooth_model(g, 1, ModulationMode::Complex, 2, 0.1, seed);
        let mut shifted = model.clone();
        shifted.layers[0].beta.iter_mut().for_each(|b| *b += shift as f64);
        let (a, b) = (&model.transmissions()[0].t, &shifted.transmissions()[0].t);
        for (x, y) in a.iter().zip(b) {
            prop_assert!((x - y).norm() < 1e-12);
        }
    }
}

#[test]
fn initialized_model_conserves_power() {
    let g = grid(64, 0.53);
    let input = gaussian(g, 4.0, 3);
    let model = D2nnModel::new(g, 5, ModulationMode::PhaseOnly, Parameterization::ReluNorm, Spacing::uniform(4.0)).unwrap();
    let (out, _) = model_forward(&input, &model).unwrap();
    let (p0, p1) = (total_power(&input), total_power(&out));
    assert!(((p1 - p0) / p0).abs() <= 1e-6, "{p0} vs {p1}");
}

use d2nn::dataset::LabeledImageSet;
use d2nn::detection::{DetectorLayout, LossKind};
use d2nn::layer::{D2nnModel, ModulationMode, Parameterization, Spacing};
use d2nn::optics::{GridSpec, InputEncoder, InputEncoding};
use d2nn::training::{grad_check, OpticalClassifier, Trainable};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn images(n: usize, seed: u64) -> LabeledImageSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pixels = (0..n * 64).map(|_| rng.gen()).collect();
    let labels = (0..n).map(|i| (i % 10) as u8).collect();
    LabeledImageSet::new(8, 8, pixels, labels).unwrap()
}

fn random_classifier(
    modulation: ModulationMode,
    parameterization: Parameterization,
    loss: LossKind,
    seed: u64,
) -> OpticalClassifier {
    let grid = GridSpec::square(16, 0.53).unwrap();
    let mut model = D2nnModel::new(grid, 2, modulation, parameterization, Spacing::uniform(4.0)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for layer in &mut model.layers {
        for a in &mut layer.alpha {
            *a = match parameterization {
                Parameterization::Sigmoid => rng.gen_range(-2.0..2.0),
                Parameterization::ReluNorm => rng.gen_range(-0.5..1.5),
            };
        }
        for b in &mut layer.beta {
            *b = rng.gen_range(-1.0..1.0);
        }
    }
    let encoder = InputEncoder::new(InputEncoding::Amplitude, grid, 16).unwrap();
    OpticalClassifier::new(model, encoder, &DetectorLayout::ten_class(&grid), loss).unwrap()
}

const MODES: [ModulationMode; 2] = [ModulationMode::PhaseOnly, ModulationMode::Complex];
const PARAMS: [Parameterization; 2] = [Parameterization::Sigmoid, Parameterization::ReluNorm];
const LOSSES: [LossKind; 2] = [LossKind::Mse, LossKind::Sce];

#[test]
fn adjoint_matches_finite_differences() {
    let data = images(3, 1);
    let batch = [0, 1, 2];
    for (k, (&mode, (&param, &loss))) in MODES
        .iter()
        .flat_map(|m| PARAMS.iter().flat_map(move |p| LOSSES.iter().map(move |l| (m, (p, l)))))
        .enumerate()
    {
        let clf = random_classifier(mode, param, loss, 10 + k as u64);
        let report = grad_check(&clf, &data, &batch, 20, 1e-5, k as u64).unwrap();
        assert_eq!(report.probes.len(), 20);
        assert!(
            report.max_rel_error <= 1e-4,
            "{mode}/{param}/{loss}: max relative error {:e}",
            report.max_rel_error
        );
        assert!(report.probes.iter().any(|p| p.analytic.abs() > 1e-6), "{mode}/{param}/{loss}: all-zero gradients");
    }
}

#[test]
fn error_shrinks_quadratically_with_step() {
    let data = images(2, 3);
    let clf = random_classifier(ModulationMode::Complex, Parameterization::Sigmoid, LossKind::Sce, 4);
    let err = |h: f64| {
        let r = grad_check(&clf, &data, &[0, 1], 8, h, 9).unwrap();
        r.probes
            .iter()
            .map(|p| (p.analytic - p.numeric).abs())
            .fold(0.0, f64::max)
    };
    let (e3, e4) = (err(1e-3), err(1e-4));
    // central differences: tenfold smaller step, roughly hundredfold smaller error
    assert!(e4 < e3 / 30.0, "h=1e-3: {e3:e}, h=1e-4: {e4:e}");
    assert!(err(1e-5) < 1e-6);
}

#[test]
fn duplicated_sample_gives_single_sample_gradient() {
    let data = images(2, 5);
    let mut clf = random_classifier(ModulationMode::Complex, Parameterization::ReluNorm, LossKind::Mse, 6);
    let (l1, g1) = clf.batch_gradient(&data, &[1]).unwrap();
    let (l2, g2) = clf.batch_gradient(&data, &[1, 1]).unwrap();
    assert_eq!(l1, l2);
    for (a, b) in g1.iter().flatten().zip(g2.iter().flatten()) {
        assert!((a - b).abs() <= 1e-15 * a.abs().max(1e-300), "{a} vs {b}");
    }
}

#[test]
fn dark_neurons_have_no_phase_gradient() {
    let data = images(1, 7);
    let mut clf = random_classifier(ModulationMode::Complex, Parameterization::ReluNorm, LossKind::Sce, 8);
    let dark: Vec<usize> = clf.stack.model.layers[0]
        .alpha
        .iter()
        .enumerate()
        .filter(|(_, &a)| a < 0.0)
        .map(|(i, _)| i)
        .collect();
    assert!(!dark.is_empty());
    let (_, grads) = clf.batch_gradient(&data, &[0]).unwrap();
    // slot 1 is layer 0's β
    for &i in &dark {
        assert_eq!(grads[1][i], 0.0);
    }
}

#[test]
fn phase_only_trains_beta_only() {
    let clf = random_classifier(ModulationMode::PhaseOnly, Parameterization::Sigmoid, LossKind::Sce, 2);
    let slots = clf.params();
    assert_eq!(slots.len(), 2);
    assert!(std::ptr::eq(slots[0].as_ptr(), clf.stack.model.layers[0].beta.as_ptr()));
}

#[test]
fn transparent_model_on_empty_input_has_zero_gradient() {
    let data = LabeledImageSet::new(8, 8, vec![0; 64], vec![3]).unwrap();
    let grid = GridSpec::square(16, 0.53).unwrap();
    let model = D2nnModel::new(grid, 2, ModulationMode::Complex, Parameterization::ReluNorm, Spacing::uniform(4.0)).unwrap();
    let encoder = InputEncoder::new(InputEncoding::Amplitude, grid, 16).unwrap();
    let clf = OpticalClassifier::new(model, encoder, &DetectorLayout::ten_class(&grid), LossKind::Mse).unwrap();
    let report = grad_check(&clf, &data, &[0], 10, 1e-5, 0).unwrap();
    assert!(report.probes.iter().all(|p| p.analytic == 0.0 && p.numeric == 0.0));
}

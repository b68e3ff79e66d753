use std::path::{Path, PathBuf};

use d2nn::checkpoint::{load_checkpoint, Checkpoint};
use d2nn::dataset::{encode_idx_images, encode_idx_labels, VALIDATION_SIZE};
use d2nn_cli::app::main_with_args;
use d2nn_cli::commands::{self, EvalSplit, PropagatorComparison, SweepAxes, System};
use d2nn_cli::config::{GridConfig, SensorConfig, SubsetSizes};
use d2nn_cli::{CliError, HybridMode, RunConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

const SIDE: usize = 8;

/// Writes a synthetic IDX dataset whose class is encoded in the position of a bright patch.
fn synthetic_dataset(dir: &Path) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut make = |n: usize| {
        let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
        let mut pixels = vec![0u8; n * SIDE * SIDE];
        for (i, &l) in labels.iter().enumerate() {
            let (r0, c0) = (2 * (l as usize / 4), 2 * (l as usize % 4));
            for r in r0..r0 + 2 {
                for c in c0..c0 + 2 {
                    pixels[i * SIDE * SIDE + r * SIDE + c] = rng.gen_range(180..=255);
                }
            }
        }
        (encode_idx_images(SIDE, SIDE, &pixels), encode_idx_labels(&labels))
    };
    let (ti, tl) = make(VALIDATION_SIZE + 200);
    let (si, sl) = make(100);
    std::fs::write(dir.join("train-images-idx3-ubyte"), ti).unwrap();
    std::fs::write(dir.join("train-labels-idx1-ubyte"), tl).unwrap();
    std::fs::write(dir.join("t10k-images-idx3-ubyte"), si).unwrap();
    std::fs::write(dir.join("t10k-labels-idx1-ubyte"), sl).unwrap();
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        std::fs::create_dir(dir.path().join("data")).unwrap();
        synthetic_dataset(&dir.path().join("data"));
        Fixture { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn config(&self) -> RunConfig {
        let json = format!(
            r#"{{
                "dataset": {{ "dir": {:?} }},
                "subset": {{ "train": 60, "validation": 30, "test": 40 }},
                "encoding": "amplitude",
                "object_size": 16,
                "grid": {{ "n": 16, "dx": 0.53 }},
                "layers": 2,
                "delta_z": 4.0,
                "modulation": "phase_only",
                "loss": "sce",
                "epochs": 2,
                "batch_size": 16,
                "lr": 0.01,
                "seed": 3,
                "deterministic": true
            }}"#,
            self.path("data")
        );
        RunConfig::from_json(&json).unwrap()
    }

    fn write_config(&self, name: &str, cfg: &RunConfig) -> PathBuf {
        let p = self.path(name);
        std::fs::write(&p, cfg.to_json_pretty()).unwrap();
        p
    }
}

fn hybrid(cfg: &RunConfig, mode: HybridMode) -> RunConfig {
    RunConfig {
        hybrid_mode: mode,
        sensor: Some(SensorConfig { pixels: 4, block: Some(3) }),
        electronic: (mode != HybridMode::Stage1).then_some(d2nn::electronic::ElectronicKind::Fc),
        ..cfg.clone()
    }
}

fn field_of(err: CliError) -> String {
    match err {
        CliError::Core(d2nn::D2nnError::Config { field, .. }) => field,
        other => panic!("expected a field-level error, got {other}"),
    }
}

#[test]
fn unknown_keys_are_rejected() {
    let fx = Fixture::new();
    let mut v = fx.config().canonical();
    v["learning_rate"] = serde_json::json!(0.1);
    let err = RunConfig::from_json(&v.to_string()).unwrap_err();
    assert!(err.to_string().contains("learning_rate"), "{err}");
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn validation_names_the_offending_field() {
    let fx = Fixture::new();
    let base = fx.config();
    let cases: Vec<(RunConfig, &str)> = vec![
        (RunConfig { layers: 0, ..base.clone() }, "layers"),
        (RunConfig { delta_z: -1.0, ..base.clone() }, "delta_z"),
        (RunConfig { object_size: 17, ..base.clone() }, "object_size"),
        (RunConfig { epochs: 0, ..base.clone() }, "epochs"),
        (RunConfig { lr: f64::NAN, ..base.clone() }, "lr"),
        (RunConfig { padding_factor: 1, ..base.clone() }, "padding_factor"),
        (RunConfig { hybrid_mode: HybridMode::Stage2, ..base.clone() }, "sensor"),
        (
            RunConfig {
                electronic: None,
                ..hybrid(&base, HybridMode::Direct)
            },
            "electronic",
        ),
        (
            RunConfig {
                sensor: Some(SensorConfig { pixels: 6, block: Some(3) }),
                ..hybrid(&base, HybridMode::Stage1)
            },
            "sensor",
        ),
        (
            RunConfig {
                grid: GridConfig { n: 0, dx: 0.53 },
                ..base.clone()
            },
            "grid",
        ),
    ];
    for (cfg, field) in cases {
        assert_eq!(field_of(cfg.validate().unwrap_err()), field);
    }
}

#[test]
fn hash_ignores_output_directory_only() {
    let fx = Fixture::new();
    let a = fx.config();
    let b = RunConfig {
        out_dir: Some("elsewhere".into()),
        ..a.clone()
    };
    assert_eq!(a.hash(), b.hash());
    assert_eq!(a.hash().len(), 64);
    assert_ne!(a.hash(), RunConfig { seed: 4, ..a.clone() }.hash());
}

#[test]
fn train_eval_roundtrip_and_determinism() {
    let fx = Fixture::new();
    let cfg = fx.config();
    let s1 = commands::train(&cfg, &fx.path("run1")).unwrap();
    let s2 = commands::train(&cfg, &fx.path("run2")).unwrap();
    let curve1 = std::fs::read(fx.path("run1/curve.csv")).unwrap();
    assert_eq!(curve1, std::fs::read(fx.path("run2/curve.csv")).unwrap());
    assert!(String::from_utf8(curve1).unwrap().contains(&s1.config_hash));
    assert_eq!(s1.best_val_accuracy, s2.best_val_accuracy);

    let bytes = std::fs::read(&s1.checkpoint).unwrap();
    let again = Checkpoint::from_bytes(&bytes).unwrap().to_bytes().unwrap();
    assert_eq!(bytes, again);

    let e = commands::eval(&s1.checkpoint, None, EvalSplit::Validation, &fx.path("eval")).unwrap();
    assert_eq!(e.report.accuracy, s1.best_val_accuracy);
    assert_eq!(e.report.records.len(), 30);
    assert!(e.csv.contains(&format!("config_hash,{}", cfg.hash())));

    let t1 = commands::eval(&s1.checkpoint, Some(&cfg), EvalSplit::Test, &fx.path("t1")).unwrap();
    let t2 = commands::eval(&s2.checkpoint, Some(&cfg), EvalSplit::Test, &fx.path("t2")).unwrap();
    assert_eq!(t1.csv, t2.csv);
    assert!(t1.csv.starts_with("index,label,prediction,I_0,"));
    assert!(!t1.csv.contains('\r'));
}

#[test]
fn eval_refuses_conflicting_geometry() {
    let fx = Fixture::new();
    let cfg = fx.config();
    let s = commands::train(&RunConfig { epochs: 1, ..cfg.clone() }, &fx.path("run")).unwrap();
    for other in [
        RunConfig { layers: 3, ..cfg.clone() },
        RunConfig { delta_z: 8.0, ..cfg.clone() },
        RunConfig {
            grid: GridConfig { n: 20, dx: 0.53 },
            ..cfg.clone()
        },
    ] {
        let err = match commands::eval(&s.checkpoint, Some(&other), EvalSplit::Test, &fx.path("e")) {
            Err(e) => e,
            Ok(_) => panic!("conflicting config accepted"),
        };
        assert!(err.to_string().contains("conflicts"), "{err}");
        assert_eq!(err.exit_code(), 1);
    }
    let p = fx.write_config("other.json", &RunConfig { layers: 3, ..cfg.clone() });
    let code = main_with_args([
        "d2nn",
        "eval",
        "--checkpoint",
        s.checkpoint.to_str().unwrap(),
        "--config",
        p.to_str().unwrap(),
    ]);
    assert_eq!(code, 1);
}

#[test]
fn hybrid_modes_train_and_reload() {
    let fx = Fixture::new();
    let base = RunConfig { epochs: 1, ..fx.config() };
    for mode in [HybridMode::Stage1, HybridMode::Stage2, HybridMode::Direct, HybridMode::PerfectImager] {
        let cfg = hybrid(&base, mode);
        let out = fx.path(&mode.to_string());
        let s = commands::train(&cfg, &out).unwrap();
        let e = commands::eval(&s.checkpoint, None, EvalSplit::Validation, &out).unwrap();
        assert_eq!(e.report.accuracy, s.best_val_accuracy, "{mode}");
        if mode != HybridMode::Stage1 {
            assert!(e.report.mean_efficiency.is_none(), "{mode}");
            assert!(e.report.records.iter().all(|r| r.total_power.is_none()));
        }
        match mode {
            HybridMode::Stage2 => {
                assert!(s.stage1_curve.is_some());
                let stage1 = load_checkpoint(out.join(commands::STAGE1_CHECKPOINT_FILE)).unwrap();
                assert!(stage1.electronic.unwrap().descriptor.get("virtual_layer").is_some());
            }
            HybridMode::PerfectImager => assert_eq!(load_checkpoint(&s.checkpoint).unwrap().meta.n_layers, 0),
            _ => {}
        }
    }
}

#[test]
fn stage2_can_resume_from_stage1_checkpoint() {
    let fx = Fixture::new();
    let base = RunConfig { epochs: 1, ..fx.config() };
    let s1 = commands::train(&hybrid(&base, HybridMode::Stage1), &fx.path("s1")).unwrap();
    let System::Stage1(stage1) = &s1.system else { panic!("not a stage-1 system") };
    assert_eq!(stage1.front_model().n_layers(), 2);
    let cfg = RunConfig {
        stage1_checkpoint: Some(s1.checkpoint.clone()),
        ..hybrid(&base, HybridMode::Stage2)
    };
    let s2 = commands::train(&cfg, &fx.path("s2")).unwrap();
    assert!(s2.stage1_curve.is_none());
    assert!(!fx.path("s2").join(commands::STAGE1_CHECKPOINT_FILE).exists());

    let mismatched = RunConfig {
        layers: 3,
        ..cfg.clone()
    };
    assert!(commands::train(&mismatched, &fx.path("s3")).is_err());
}

#[test]
fn sweep_emits_one_row_per_layer_and_loss() {
    let fx = Fixture::new();
    let cfg = RunConfig { epochs: 1, ..fx.config() };
    let axes = SweepAxes {
        layers: vec![1, 2],
        ..SweepAxes::standard(&cfg)
    };
    let rows = commands::sweep(&cfg, &axes, &fx.path("sweep")).unwrap();
    assert_eq!(rows.len(), 4);
    let csv = std::fs::read_to_string(fx.path("sweep").join(commands::SWEEP_FILE)).unwrap();
    let table: Vec<&str> = csv.split("\n\n").next().unwrap().lines().collect();
    assert_eq!(table.len(), 5);
    assert!(table[0].contains("accuracy,power_efficiency,signal_contrast"));
    assert!(rows.iter().all(|r| r.power_efficiency.is_some() || r.accuracy == 0.0));
}

#[test]
fn gradcheck_command_meets_tolerance() {
    let fx = Fixture::new();
    let base = fx.config();
    for cfg in [
        base.clone(),
        RunConfig { loss: d2nn::detection::LossKind::Mse, modulation: d2nn::layer::ModulationMode::Complex, ..base.clone() },
        hybrid(&base, HybridMode::Stage2),
    ] {
        let report = commands::gradcheck(&cfg, 20, 1e-5, 4, &fx.path("gc")).unwrap();
        assert!(report.max_rel_error <= 1e-4, "{:?}: {:e}", cfg.hybrid_mode, report.max_rel_error);
    }
    let csv = std::fs::read_to_string(fx.path("gc").join(commands::GRADCHECK_FILE)).unwrap();
    assert!(csv.starts_with("slot,index,analytic,numeric,rel_error\n"));
}

#[test]
fn propagator_comparison_within_two_percent() {
    let dir = TempDir::new().unwrap();
    let params = PropagatorComparison { n: 16, dx: 0.53, padding: 8, seed: 0 };
    let rows = commands::compare_propagators(params, &[4.0, 40.0], dir.path()).unwrap();
    assert_eq!(rows.len(), 2);
    for (z, err) in rows {
        assert!(err <= 0.02, "z={z}: {err}");
    }
    let csv = std::fs::read_to_string(dir.path().join(commands::PROPAGATORS_FILE)).unwrap();
    assert!(csv.starts_with("z,relative_l2\n4,"));
}

#[test]
fn exported_masks_are_16_bit_graymaps() {
    let fx = Fixture::new();
    let s = commands::train(&RunConfig { epochs: 1, ..fx.config() }, &fx.path("run")).unwrap();
    let sidecar = commands::export_masks(&s.checkpoint, &fx.path("masks")).unwrap();
    assert_eq!(sidecar.layers.len(), 2);
    assert_eq!(sidecar.config_hash, s.config_hash);
    for m in &sidecar.layers {
        assert!(0.0 <= m.phi_min && m.phi_min <= m.phi_max && m.phi_max < std::f64::consts::TAU);
        let pgm = std::fs::read(fx.path("masks").join(&m.phase_file)).unwrap();
        assert!(pgm.starts_with(b"P5\n16 16\n65535\n"));
        assert_eq!(pgm.len(), 15 + 2 * 256);
    }
    let json: serde_json::Value =
        serde_json::from_slice(&std::fs::read(fx.path("masks").join(commands::MASKS_SIDECAR)).unwrap()).unwrap();
    assert_eq!(json["layers"][1]["amplitude_file"], "layer_1_amplitude.pgm");
}

#[test]
fn exit_codes() {
    let fx = Fixture::new();
    assert_eq!(main_with_args(["d2nn", "train"]), 1);
    assert_eq!(main_with_args(["d2nn", "no-such-command"]), 1);
    assert_eq!(main_with_args(["d2nn", "--help"]), 0);

    let bad = fx.path("bad.json");
    std::fs::write(&bad, r#"{"dataset": {}}"#).unwrap();
    assert_eq!(main_with_args(["d2nn", "train", "--config", bad.to_str().unwrap()]), 1);

    let missing = RunConfig {
        dataset: d2nn_cli::config::DatasetConfig {
            dir: Some(fx.path("nowhere")),
            ..Default::default()
        },
        ..fx.config()
    };
    let p = fx.write_config("missing.json", &missing);
    assert_eq!(main_with_args(["d2nn", "train", "--config", p.to_str().unwrap()]), 2);

    let good = fx.write_config("good.json", &RunConfig { epochs: 1, ..fx.config() });
    let out = fx.path("cli-run");
    let code = main_with_args([
        "d2nn",
        "train",
        "--config",
        good.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "9",
        "--layers",
        "1",
    ]);
    assert_eq!(code, 0);
    let ckpt = load_checkpoint(out.join(commands::CHECKPOINT_FILE)).unwrap();
    assert_eq!((ckpt.meta.seed, ckpt.meta.n_layers), (9, 1));
}

#[test]
fn subset_sizes_are_honoured() {
    let fx = Fixture::new();
    let cfg = RunConfig {
        subset: Some(SubsetSizes { train: 50, validation: 20, test: 10 }),
        ..fx.config()
    };
    let s = cfg.load_splits().unwrap();
    assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (50, 20, 10));
    assert_eq!(s.test.class_counts(), [1; 10]);
}

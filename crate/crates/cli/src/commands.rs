//! Implementations of the `d2nn` subcommands.

use std::path::{Path, PathBuf};
use std::time::Instant;

use d2nn::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, ElectronicSection};
use d2nn::dataset::{LabeledImageSet, Splits};
use d2nn::detection::LossKind;
use d2nn::electronic::{ElectronicHead, ElectronicNet};
use d2nn::hybrid::{
    train_stage2, virtual_from_section, virtual_section, FrontEnd, HybridSystem, SensorPath, Stage1System,
};
use d2nn::layer::{D2nnModel, ModulationMode, OpticalStack, Transmission};
use d2nn::metrics::{evaluate_hybrid, evaluate_optical, evaluate_stage1, report_csv, EvalReport};
use d2nn::optics::relative_l2;
use d2nn::propagation::{asm_propagate, band_limited_field, rs_propagate};
use d2nn::training::{grad_check, train as fit, EpochRecord, GradCheckReport, OpticalClassifier, Trainable, TrainOutcome};
use d2nn::GridSpec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::artifacts::{ensure_dir, pgm16, quantize, summary_block, training_curve_csv, write};
use crate::config::{HybridMode, RunConfig};
use crate::error::{CliError, CliResult};

pub const CHECKPOINT_FILE: &str = "checkpoint.d2nn";
pub const STAGE1_CHECKPOINT_FILE: &str = "stage1.d2nn";
pub const CURVE_FILE: &str = "curve.csv";
pub const STAGE1_CURVE_FILE: &str = "stage1_curve.csv";
pub const EVAL_FILE: &str = "eval.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const GRADCHECK_FILE: &str = "gradcheck.csv";
pub const PROPAGATORS_FILE: &str = "compare_propagators.csv";
pub const MASKS_SIDECAR: &str = "masks.json";

/// A trained or restored system of any supported kind.
#[derive(Debug, Clone)]
pub enum System {
    Optical(OpticalClassifier),
    Stage1(Stage1System),
    Hybrid(HybridSystem),
}

impl System {
    /// Freshly initialized system for the configured mode.
    pub fn initial(cfg: &RunConfig) -> CliResult<Self> {
        let encoder = cfg.encoder()?;
        let layout = cfg.detector_layout();
        let sensor = cfg.sensor_spec()?;
        Ok(match (cfg.hybrid_mode, sensor) {
            (HybridMode::AllOptical, _) => {
                System::Optical(OpticalClassifier::new(cfg.initial_model()?, encoder, &layout, cfg.loss)?)
            }
            (HybridMode::Stage1, Some(sensor)) => {
                System::Stage1(Stage1System::new(cfg.initial_model()?, encoder, sensor, &layout)?)
            }
            (HybridMode::Stage2 | HybridMode::Direct, Some(sensor)) => {
                let front = FrontEnd::Optical(OpticalStack::new(cfg.initial_model()?)?);
                System::Hybrid(HybridSystem::new(SensorPath::new(front, encoder, sensor)?, initial_net(cfg)?)?)
            }
            (HybridMode::PerfectImager, Some(sensor)) => {
                let path = SensorPath::new(FrontEnd::PerfectImager, encoder, sensor)?;
                System::Hybrid(HybridSystem::new(path, initial_net(cfg)?)?)
            }
            (mode, None) => return Err(CliError::Validation(format!("{mode} mode needs a sensor"))),
        })
    }

    /// Rebuilds the system stored in `ckpt`, using `cfg` for encoder, detectors and sensor.
    pub fn from_checkpoint(ckpt: &Checkpoint, cfg: &RunConfig) -> CliResult<Self> {
        let encoder = cfg.encoder()?;
        let layout = cfg.detector_layout();
        let sensor = cfg.sensor_spec()?;
        let is_virtual = ckpt
            .electronic
            .as_ref()
            .is_some_and(|s| s.descriptor.get("virtual_layer").is_some());
        Ok(match (&ckpt.electronic, sensor) {
            (None, _) => System::Optical(OpticalClassifier::new(ckpt.model()?, encoder, &layout, cfg.loss)?),
            (Some(section), Some(sensor)) if is_virtual => {
                let m = &ckpt.meta;
                let virt = virtual_from_section(m.grid, m.padding_factor, section)?;
                System::Stage1(Stage1System::with_virtual(ckpt.model()?, virt, encoder, sensor, &layout)?)
            }
            (Some(section), Some(sensor)) => {
                let head = ElectronicHead::from_section(section)?;
                let front = if ckpt.meta.n_layers == 0 {
                    FrontEnd::PerfectImager
                } else {
                    FrontEnd::Optical(OpticalStack::new(ckpt.model()?)?)
                };
                let mut sys = HybridSystem::new(SensorPath::new(front, encoder, sensor)?, head.net.clone())?;
                sys.head = head;
                System::Hybrid(sys)
            }
            (Some(_), None) => {
                return Err(CliError::Validation(
                    "checkpoint has an electronic section but the config has no sensor".into(),
                ))
            }
        })
    }

    pub fn evaluate(&self, data: &LabeledImageSet) -> CliResult<EvalReport> {
        Ok(match self {
            System::Optical(s) => evaluate_optical(s, data)?,
            System::Stage1(s) => evaluate_stage1(s, data)?,
            System::Hybrid(s) => evaluate_hybrid(s, data)?,
        })
    }

    /// Optical front-end, if the system has one.
    pub fn front_model(&self) -> Option<&D2nnModel> {
        match self {
            System::Optical(s) => Some(s.model()),
            System::Stage1(s) => Some(s.front_model()),
            System::Hybrid(s) => s.path.stack().map(|st| &st.model),
        }
    }

    fn section(&self) -> Option<ElectronicSection> {
        match self {
            System::Optical(_) => None,
            System::Stage1(s) => Some(virtual_section(&s.virtual_stack.model)),
            System::Hybrid(s) => Some(s.head.to_section()),
        }
    }

    pub fn to_checkpoint(&self, cfg: &RunConfig, epoch: usize, val_accuracy: f64) -> CliResult<Checkpoint> {
        let meta = cfg.checkpoint_meta(epoch, val_accuracy)?;
        let mut ckpt = match self.front_model() {
            Some(model) => Checkpoint::from_model(model, meta),
            None => Checkpoint {
                meta,
                layers: Vec::new(),
                electronic: None,
            },
        };
        ckpt.electronic = self.section();
        Ok(ckpt)
    }
}

fn initial_net(cfg: &RunConfig) -> CliResult<ElectronicNet> {
    let sensor = cfg
        .sensor_spec()?
        .ok_or_else(|| CliError::Validation("electronic back-end needs a sensor".into()))?;
    let desc = cfg
        .net_descriptor(&sensor)
        .ok_or_else(|| CliError::Validation("no electronic back-end configured".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok(ElectronicNet::glorot(desc, &mut rng)?)
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub curve: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub config_hash: String,
    pub system: System,
    /// Stage-1 curve of a two-stage run.
    pub stage1_curve: Option<Vec<EpochRecord>>,
}

fn fit_logged<M: Trainable>(
    model: M,
    splits: &Splits,
    cfg: &RunConfig,
    label: &str,
) -> CliResult<(TrainOutcome<M>, Vec<f64>)> {
    let mut seconds = Vec::with_capacity(cfg.epochs);
    let mut last = Instant::now();
    let outcome = fit(model, &splits.train, &splits.validation, &cfg.train_config(), |r| {
        seconds.push(last.elapsed().as_secs_f64());
        last = Instant::now();
        eprintln!(
            "[{label}] epoch {}/{}: loss {:.6} val {:.4}",
            r.epoch, cfg.epochs, r.train_loss, r.val_accuracy
        );
    })?;
    Ok((outcome, seconds))
}

fn save_run(
    out: &Path,
    cfg: &RunConfig,
    system: &System,
    outcome: (&[EpochRecord], usize, f64),
    seconds: &[f64],
    names: (&str, &str),
) -> CliResult<PathBuf> {
    let (curve, epoch, acc) = outcome;
    let hash = cfg.hash();
    let timing = (!cfg.deterministic).then_some(seconds);
    write(&out.join(names.1), training_curve_csv(curve, timing, &hash))?;
    let path = out.join(names.0);
    save_checkpoint(&system.to_checkpoint(cfg, epoch, acc)?, &path)?;
    Ok(path)
}

/// Trains the configured system on already loaded splits and writes its artifacts to `out`.
pub fn train_on(cfg: &RunConfig, splits: &Splits, out: &Path) -> CliResult<TrainSummary> {
    cfg.validate()?;
    ensure_dir(out)?;
    write(&out.join("config.json"), cfg.to_json_pretty() + "\n")?;
    let hash = cfg.hash();

    let mut stage1_curve = None;
    let (system, curve, best_epoch, best_val_accuracy, seconds) = match System::initial(cfg)? {
        System::Optical(clf) => {
            let (o, s) = fit_logged(clf, splits, cfg, "optical")?;
            (System::Optical(o.best), o.curve, o.best_epoch, o.best_val_accuracy, s)
        }
        System::Stage1(sys) => {
            let (o, s) = fit_logged(sys, splits, cfg, "stage1")?;
            (System::Stage1(o.best), o.curve, o.best_epoch, o.best_val_accuracy, s)
        }
        System::Hybrid(sys) if cfg.hybrid_mode == HybridMode::Stage2 => {
            let stage1 = match &cfg.stage1_checkpoint {
                Some(path) => load_stage1(path, cfg)?,
                None => {
                    let s1 = Stage1System::new(cfg.initial_model()?, cfg.encoder()?, sys.path.sensor, &cfg.detector_layout())?;
                    let (o, s) = fit_logged(s1, splits, cfg, "stage1")?;
                    save_run(
                        out,
                        cfg,
                        &System::Stage1(o.best.clone()),
                        (&o.curve, o.best_epoch, o.best_val_accuracy),
                        &s,
                        (STAGE1_CHECKPOINT_FILE, STAGE1_CURVE_FILE),
                    )?;
                    stage1_curve = Some(o.curve);
                    o.best
                }
            };
            let net = sys.head.net.clone();
            let mut seconds = Vec::new();
            let mut last = Instant::now();
            let o = train_stage2(&stage1, net, &splits.train, &splits.validation, &cfg.train_config(), |r| {
                seconds.push(last.elapsed().as_secs_f64());
                last = Instant::now();
                eprintln!("[stage2] epoch {}/{}: loss {:.6} val {:.4}", r.epoch, cfg.epochs, r.train_loss, r.val_accuracy);
            })?;
            (System::Hybrid(o.best), o.curve, o.best_epoch, o.best_val_accuracy, seconds)
        }
        System::Hybrid(sys) => {
            let (o, s) = fit_logged(sys, splits, cfg, &cfg.hybrid_mode.to_string())?;
            (System::Hybrid(o.best), o.curve, o.best_epoch, o.best_val_accuracy, s)
        }
    };
    let checkpoint = save_run(
        out,
        cfg,
        &system,
        (&curve, best_epoch, best_val_accuracy),
        &seconds,
        (CHECKPOINT_FILE, CURVE_FILE),
    )?;
    Ok(TrainSummary {
        checkpoint,
        curve,
        best_epoch,
        best_val_accuracy,
        config_hash: hash,
        system,
        stage1_curve,
    })
}

fn load_stage1(path: &Path, cfg: &RunConfig) -> CliResult<Stage1System> {
    let ckpt = load_checkpoint(path)?;
    let (m, fresh) = (ckpt.model()?, cfg.initial_model()?);
    let same = m.grid == fresh.grid
        && m.n_layers() == fresh.n_layers()
        && m.modulation == fresh.modulation
        && m.parameterization == fresh.parameterization
        && m.spacing == fresh.spacing
        && m.padding_factor == fresh.padding_factor;
    if !same {
        return Err(CliError::Validation(format!(
            "{} does not match the configured optical geometry",
            path.display()
        )));
    }
    match System::from_checkpoint(&ckpt, cfg)? {
        System::Stage1(s) => Ok(s),
        _ => Err(CliError::Validation(format!("{} is not a stage-1 checkpoint", path.display()))),
    }
}

pub fn train(cfg: &RunConfig, out: &Path) -> CliResult<TrainSummary> {
    cfg.validate()?;
    train_on(cfg, &cfg.load_splits()?, out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSplit {
    Validation,
    Test,
}

/// The run config embedded in a checkpoint.
pub fn embedded_config(ckpt: &Checkpoint) -> CliResult<RunConfig> {
    let value = ckpt
        .meta
        .config
        .clone()
        .ok_or_else(|| CliError::Validation("checkpoint carries no run config".into()))?;
    serde_json::from_value(value).map_err(|e| CliError::Validation(format!("embedded config: {e}")))
}

/// Lists every geometric difference between a checkpoint and a requested config.
pub fn geometry_conflicts(ckpt: &Checkpoint, stored: &RunConfig, requested: &RunConfig) -> CliResult<Vec<String>> {
    let m = &ckpt.meta;
    let mut out = Vec::new();
    let mut check = |what: &str, a: String, b: String| {
        if a != b {
            out.push(format!("{what}: checkpoint {a}, requested {b}"));
        }
    };
    check("grid", m.grid.to_string(), requested.grid_spec()?.to_string());
    if ckpt.meta.n_layers > 0 || requested.hybrid_mode != HybridMode::PerfectImager {
        check("layers", m.n_layers.to_string(), requested.layers.to_string());
        check("modulation", m.modulation.to_string(), requested.modulation.to_string());
        check("parameterization", m.parameterization.to_string(), requested.parameterization.to_string());
        check("spacing", format!("{:?}", m.spacing), format!("{:?}", requested.spacing()));
        check("padding_factor", m.padding_factor.to_string(), requested.padding_factor.to_string());
    }
    check("encoding", stored.encoding.to_string(), requested.encoding.to_string());
    check("object_size", stored.object_size.to_string(), requested.object_size.to_string());
    check(
        "detectors",
        format!("{:?}", stored.detector_layout()),
        format!("{:?}", requested.detector_layout()),
    );
    check("sensor", format!("{:?}", stored.sensor_spec()?), format!("{:?}", requested.sensor_spec()?));
    check("electronic", format!("{:?}", stored.electronic), format!("{:?}", requested.electronic));
    Ok(out)
}

pub struct EvalOutcome {
    pub report: EvalReport,
    pub csv: String,
    pub checkpoint: Checkpoint,
}

/// Evaluates a checkpoint; `requested` must agree with the checkpoint's geometry.
pub fn eval(checkpoint: &Path, requested: Option<&RunConfig>, split: EvalSplit, out: &Path) -> CliResult<EvalOutcome> {
    let ckpt = load_checkpoint(checkpoint)?;
    let stored = embedded_config(&ckpt)?;
    let cfg = match requested {
        Some(req) => {
            req.validate()?;
            let conflicts = geometry_conflicts(&ckpt, &stored, req)?;
            if !conflicts.is_empty() {
                return Err(CliError::Validation(format!(
                    "checkpoint geometry conflicts with the requested config: {}",
                    conflicts.join("; ")
                )));
            }
            req.clone()
        }
        None => stored,
    };
    let system = System::from_checkpoint(&ckpt, &cfg)?;
    let splits = cfg.load_splits()?;
    let data = match split {
        EvalSplit::Validation => &splits.validation,
        EvalSplit::Test => &splits.test,
    };
    let report = system.evaluate(data)?;
    let hash = requested.map_or_else(|| ckpt.meta.config_hash.clone(), RunConfig::hash);
    let csv = report_csv(&report, &hash);
    ensure_dir(out)?;
    write(&out.join(EVAL_FILE), &csv)?;
    Ok(EvalOutcome {
        report,
        csv,
        checkpoint: ckpt,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepAxes {
    pub layers: Vec<usize>,
    pub losses: Vec<LossKind>,
    pub delta_z: Vec<f64>,
    pub modulations: Vec<ModulationMode>,
}

impl SweepAxes {
    /// Layer counts 1, 3, 5 and both losses at the config's spacing and modulation.
    pub fn standard(cfg: &RunConfig) -> Self {
        SweepAxes {
            layers: vec![1, 3, 5],
            losses: vec![LossKind::Mse, LossKind::Sce],
            delta_z: vec![cfg.delta_z],
            modulations: vec![cfg.modulation],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub dataset: String,
    pub layers: usize,
    pub loss: LossKind,
    pub delta_z: f64,
    pub modulation: ModulationMode,
    pub accuracy: f64,
    pub power_efficiency: Option<f64>,
    pub signal_contrast: Option<f64>,
    pub config_hash: String,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

pub fn sweep_csv(rows: &[SweepRow], config_hash: &str) -> String {
    let mut csv =
        String::from("dataset,layers,loss,delta_z,modulation,accuracy,power_efficiency,signal_contrast,config_hash\n");
    for r in rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.dataset,
            r.layers,
            r.loss,
            r.delta_z,
            r.modulation,
            r.accuracy,
            opt(r.power_efficiency),
            opt(r.signal_contrast),
            r.config_hash
        ));
    }
    summary_block(&mut csv, &[("config_hash", config_hash.to_string())]);
    csv
}

/// Trains and tests one all-optical model per point of the axis grid.
pub fn sweep(base: &RunConfig, axes: &SweepAxes, out: &Path) -> CliResult<Vec<SweepRow>> {
    if base.hybrid_mode != HybridMode::AllOptical {
        return Err(CliError::Validation("sweeps cover all-optical models only".into()));
    }
    if axes.layers.is_empty() || axes.losses.is_empty() || axes.delta_z.is_empty() || axes.modulations.is_empty() {
        return Err(CliError::Validation("every sweep axis needs at least one value".into()));
    }
    base.validate()?;
    let splits = base.load_splits()?;
    let mut rows = Vec::new();
    for &modulation in &axes.modulations {
        for &delta_z in &axes.delta_z {
            for &layers in &axes.layers {
                for &loss in &axes.losses {
                    let cfg = RunConfig {
                        layers,
                        loss,
                        delta_z,
                        modulation,
                        ..base.clone()
                    };
                    let dir = out.join(format!("{modulation}_dz{delta_z}_l{layers}_{loss}"));
                    let summary = train_on(&cfg, &splits, &dir)?;
                    let report = summary.system.evaluate(&splits.test)?;
                    write(&dir.join(EVAL_FILE), report_csv(&report, &summary.config_hash))?;
                    rows.push(SweepRow {
                        dataset: base.dataset.name.clone(),
                        layers,
                        loss,
                        delta_z,
                        modulation,
                        accuracy: report.accuracy,
                        power_efficiency: report.mean_efficiency,
                        signal_contrast: report.mean_contrast,
                        config_hash: summary.config_hash,
                    });
                }
            }
        }
    }
    write(&out.join(SWEEP_FILE), sweep_csv(&rows, &base.hash()))?;
    Ok(rows)
}

/// Initial latents are uniform, which puts the amplitude normalization on a kink;
/// the check runs at a nearby random point instead.
fn jittered<M: Trainable>(mut model: M, rng: &mut ChaCha8Rng) -> M {
    for slot in model.params_mut() {
        slot.iter_mut().for_each(|v| *v += rng.gen_range(-GRADCHECK_JITTER..GRADCHECK_JITTER));
    }
    model.refresh();
    model
}

/// Half-width of the uniform perturbation applied before a gradient check.
pub const GRADCHECK_JITTER: f64 = 0.1;

/// Finite-difference check of the configured system near initialization, on the first training samples.
pub fn gradcheck(cfg: &RunConfig, probes: usize, h: f64, samples: usize, out: &Path) -> CliResult<GradCheckReport> {
    cfg.validate()?;
    if samples == 0 || probes == 0 || !(h > 0.0) {
        return Err(CliError::Validation("samples, probes and step must be positive".into()));
    }
    let splits = cfg.load_splits()?;
    let batch: Vec<usize> = (0..samples.min(splits.train.len())).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let report = match System::initial(cfg)? {
        System::Optical(s) => grad_check(&jittered(s, &mut rng), &splits.train, &batch, probes, h, cfg.seed)?,
        System::Stage1(s) => grad_check(&jittered(s, &mut rng), &splits.train, &batch, probes, h, cfg.seed)?,
        System::Hybrid(s) => grad_check(&jittered(s, &mut rng), &splits.train, &batch, probes, h, cfg.seed)?,
    };
    let mut csv = String::from("slot,index,analytic,numeric,rel_error\n");
    for p in &report.probes {
        csv.push_str(&format!("{},{},{},{},{}\n", p.slot, p.index, p.analytic, p.numeric, p.rel_error));
    }
    summary_block(
        &mut csv,
        &[("config_hash", cfg.hash()), ("max_rel_error", report.max_rel_error.to_string())],
    );
    ensure_dir(out)?;
    write(&out.join(GRADCHECK_FILE), csv)?;
    Ok(report)
}

/// Highest spatial frequency of the probe fields, in cycles per wavelength.
pub const PROBE_MAX_FREQ: f64 = 0.3;
/// Plane waves summed into each probe field.
pub const PROBE_WAVES: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PropagatorComparison {
    pub n: usize,
    pub dx: f64,
    pub padding: usize,
    pub seed: u64,
}

/// Relative L2 distance between angular-spectrum and direct-summation propagation of a band-limited field.
pub fn compare_propagators(params: PropagatorComparison, zs: &[f64], out: &Path) -> CliResult<Vec<(f64, f64)>> {
    let grid = GridSpec::square(params.n, params.dx)?;
    if zs.is_empty() {
        return Err(CliError::Validation("give at least one distance".into()));
    }
    let field = band_limited_field(grid, PROBE_MAX_FREQ, params.n as f64 / 6.4, PROBE_WAVES, params.seed)?;
    let mut rows = Vec::with_capacity(zs.len());
    for &z in zs {
        let asm = asm_propagate(&field, z, params.padding)?;
        let rs = rs_propagate(&field, z)?;
        rows.push((z, relative_l2(asm.values(), rs.values())));
    }
    let hash = hex::encode(Sha256::digest(serde_json::to_vec(&(params, zs)).expect("serializes")));
    let mut csv = String::from("z,relative_l2\n");
    for (z, e) in &rows {
        csv.push_str(&format!("{z},{e}\n"));
    }
    summary_block(
        &mut csv,
        &[
            ("config_hash", hash),
            ("n", params.n.to_string()),
            ("dx", params.dx.to_string()),
            ("padding", params.padding.to_string()),
            ("seed", params.seed.to_string()),
        ],
    );
    ensure_dir(out)?;
    write(&out.join(PROPAGATORS_FILE), csv)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaskImage {
    pub layer: usize,
    pub phase_file: String,
    pub amplitude_file: String,
    /// Phase mapped to sample value 0, in radians within [0, 2π).
    pub phi_min: f64,
    /// Phase mapped to sample value 65535.
    pub phi_max: f64,
    pub amplitude_min: f64,
    pub amplitude_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaskSidecar {
    pub config_hash: String,
    pub width: usize,
    pub height: usize,
    pub layers: Vec<MaskImage>,
}

/// Writes per-layer phase and amplitude images of a checkpoint's optical layers.
pub fn export_masks(checkpoint: &Path, out: &Path) -> CliResult<MaskSidecar> {
    let ckpt = load_checkpoint(checkpoint)?;
    if ckpt.layers.is_empty() {
        return Err(CliError::Validation("checkpoint has no optical layers".into()));
    }
    let model = ckpt.model()?;
    let g = model.grid;
    ensure_dir(out)?;
    let mut layers = Vec::new();
    for (k, layer) in model.layers.iter().enumerate() {
        let t = Transmission::new(layer, model.modulation, model.parameterization).t;
        let phase: Vec<f64> = t.iter().map(|c| c.arg().rem_euclid(std::f64::consts::TAU)).collect();
        let amplitude: Vec<f64> = t.iter().map(|c| c.norm()).collect();
        let (pq, phi_min, phi_max) = quantize(&phase);
        let (aq, amplitude_min, amplitude_max) = quantize(&amplitude);
        let phase_file = format!("layer_{k}_phase.pgm");
        let amplitude_file = format!("layer_{k}_amplitude.pgm");
        write(&out.join(&phase_file), pgm16(g.nx, g.ny, &pq))?;
        write(&out.join(&amplitude_file), pgm16(g.nx, g.ny, &aq))?;
        layers.push(MaskImage {
            layer: k,
            phase_file,
            amplitude_file,
            phi_min,
            phi_max,
            amplitude_min,
            amplitude_max,
        });
    }
    let sidecar = MaskSidecar {
        config_hash: ckpt.meta.config_hash.clone(),
        width: g.nx,
        height: g.ny,
        layers,
    };
    write(
        &out.join(MASKS_SIDECAR),
        serde_json::to_string_pretty(&sidecar).expect("sidecar serializes") + "\n",
    )?;
    Ok(sidecar)
}

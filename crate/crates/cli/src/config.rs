//! Run configuration: a JSON document describing one experiment.

use std::path::{Path, PathBuf};

use d2nn::checkpoint::CheckpointMeta;
use d2nn::dataset::{load_idx, load_standard_dir, split, stratified_subset, Splits};
use d2nn::detection::{DetectorLayout, LossKind};
use d2nn::electronic::{ElectronicKind, NetDescriptor};
use d2nn::hybrid::SensorSpec;
use d2nn::layer::{D2nnModel, ModulationMode, Parameterization, Spacing};
use d2nn::training::{AdamConfig, TrainConfig};
use d2nn::optics::InputEncoder;
use d2nn::{D2nnError, GridSpec, InputEncoding};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HybridMode {
    AllOptical,
    /// Optical front-end trained through a virtual relaunch layer.
    Stage1,
    /// Stage 1 followed by joint training with an electronic network.
    Stage2,
    /// Joint optical/electronic training from scratch.
    Direct,
    /// No optics: the sensor images the input object.
    PerfectImager,
}

impl HybridMode {
    pub fn needs_sensor(self) -> bool {
        self != HybridMode::AllOptical
    }

    pub fn needs_electronics(self) -> bool {
        matches!(self, HybridMode::Stage2 | HybridMode::Direct | HybridMode::PerfectImager)
    }
}

impl std::fmt::Display for HybridMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            HybridMode::AllOptical => "all_optical",
            HybridMode::Stage1 => "stage1",
            HybridMode::Stage2 => "stage2",
            HybridMode::Direct => "direct",
            HybridMode::PerfectImager => "perfect_imager",
        })
    }
}

/// Either a directory holding the four standard IDX files or explicit paths.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(default = "default_dataset_name")]
    pub name: String,
    #[serde(default)]
    pub dir: Option<PathBuf>,
    #[serde(default)]
    pub train_images: Option<PathBuf>,
    #[serde(default)]
    pub train_labels: Option<PathBuf>,
    #[serde(default)]
    pub test_images: Option<PathBuf>,
    #[serde(default)]
    pub test_labels: Option<PathBuf>,
}

fn default_dataset_name() -> String {
    "mnist".into()
}

/// Stratified subsample sizes applied after the standard split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsetSizes {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n: usize,
    /// Sample pitch in wavelengths.
    pub dx: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorConfig {
    pub pixels: usize,
    /// Grid samples per sensor pixel; derived from the detector region when absent.
    #[serde(default)]
    pub block: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub subset: Option<SubsetSizes>,
    pub encoding: InputEncoding,
    /// Side of the centered object region, in samples.
    pub object_size: usize,
    pub grid: GridConfig,
    #[serde(default = "default_padding")]
    pub padding_factor: usize,
    pub layers: usize,
    /// Layer spacing in wavelengths.
    pub delta_z: f64,
    #[serde(default)]
    pub z_in: Option<f64>,
    #[serde(default)]
    pub z_out: Option<f64>,
    pub modulation: ModulationMode,
    #[serde(default = "default_parameterization")]
    pub parameterization: Parameterization,
    pub loss: LossKind,
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub deterministic: bool,
    #[serde(default)]
    pub detectors: Option<DetectorLayout>,
    #[serde(default)]
    pub sensor: Option<SensorConfig>,
    #[serde(default)]
    pub electronic: Option<ElectronicKind>,
    #[serde(default = "default_mode")]
    pub hybrid_mode: HybridMode,
    /// Stage-2 runs start from this checkpoint instead of running stage 1.
    #[serde(default)]
    pub stage1_checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

fn default_padding() -> usize {
    d2nn::propagation::DEFAULT_PADDING
}

fn default_parameterization() -> Parameterization {
    Parameterization::ReluNorm
}

fn default_batch_size() -> usize {
    TrainConfig::default().batch_size
}

fn default_lr() -> f64 {
    AdamConfig::default().lr
}

fn default_mode() -> HybridMode {
    HybridMode::AllOptical
}

fn invalid(field: &str, message: impl Into<String>) -> CliError {
    CliError::Core(D2nnError::config(field, message))
}

impl RunConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| D2nnError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// The config as embedded in artifacts: everything except the output directory.
    pub fn canonical(&self) -> serde_json::Value {
        let mut c = self.clone();
        c.out_dir = None;
        serde_json::to_value(c).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON, hex encoded.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(&self.canonical()).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn validate(&self) -> CliResult<()> {
        let d = &self.dataset;
        let explicit = [&d.train_images, &d.train_labels, &d.test_images, &d.test_labels];
        match (&d.dir, explicit.iter().filter(|p| p.is_some()).count()) {
            (Some(_), 0) | (None, 4) => {}
            (Some(_), _) => return Err(invalid("dataset", "give either `dir` or explicit file paths, not both")),
            (None, _) => return Err(invalid("dataset", "needs `dir` or all four IDX file paths")),
        }
        if let Some(s) = self.subset {
            if s.train == 0 || s.validation == 0 || s.test == 0 {
                return Err(invalid("subset", "sizes must be positive"));
            }
        }
        let grid = self.grid_spec()?;
        if self.object_size == 0 || self.object_size > self.grid.n {
            return Err(invalid(
                "object_size",
                format!("must lie in 1..={}, got {}", self.grid.n, self.object_size),
            ));
        }
        if self.padding_factor < 2 {
            return Err(invalid("padding_factor", "must be at least 2"));
        }
        if self.layers == 0 && self.hybrid_mode != HybridMode::PerfectImager {
            return Err(invalid("layers", "must be at least 1"));
        }
        if !(self.delta_z.is_finite() && self.delta_z > 0.0) {
            return Err(invalid("delta_z", format!("must be positive, got {}", self.delta_z)));
        }
        for (field, z) in [("z_in", self.z_in), ("z_out", self.z_out)] {
            if let Some(z) = z {
                if !(z.is_finite() && z >= 0.0) {
                    return Err(invalid(field, format!("must be non-negative, got {z}")));
                }
            }
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(invalid("lr", format!("must be positive, got {}", self.lr)));
        }
        self.train_config().validate()?;
        self.detector_layout().validate(&grid)?;

        let mode = self.hybrid_mode;
        if mode.needs_sensor() && self.sensor.is_none() {
            return Err(invalid("sensor", format!("required in {mode} mode")));
        }
        if !mode.needs_sensor() && self.sensor.is_some() {
            return Err(invalid("sensor", "only used by hybrid modes"));
        }
        if mode.needs_electronics() && self.electronic.is_none() {
            return Err(invalid("electronic", format!("required in {mode} mode")));
        }
        if !mode.needs_electronics() && self.electronic.is_some() {
            return Err(invalid("electronic", format!("not used in {mode} mode")));
        }
        if mode.needs_electronics() && self.batch_size < 2 {
            return Err(invalid("batch_size", "batch normalization needs batches of at least 2"));
        }
        if mode == HybridMode::Stage1 && self.loss != LossKind::Sce {
            return Err(invalid("loss", "stage 1 trains with sce"));
        }
        if self.stage1_checkpoint.is_some() && mode != HybridMode::Stage2 {
            return Err(invalid("stage1_checkpoint", "only used in stage2 mode"));
        }
        if let Some(sensor) = self.sensor_spec()? {
            if let Some(desc) = self.net_descriptor(&sensor) {
                d2nn::electronic::ElectronicNet::zeros(desc)
                    .map_err(|e| invalid("electronic", e.to_string()))?;
            }
        }
        Ok(())
    }

    pub fn grid_spec(&self) -> CliResult<GridSpec> {
        GridSpec::square(self.grid.n, self.grid.dx).map_err(|e| invalid("grid", e.to_string()))
    }

    pub fn spacing(&self) -> Spacing {
        Spacing {
            z_in: self.z_in.unwrap_or(self.delta_z),
            delta_z: self.delta_z,
            z_out: self.z_out.unwrap_or(self.delta_z),
        }
    }

    pub fn detector_layout(&self) -> DetectorLayout {
        match &self.detectors {
            Some(layout) => layout.clone(),
            None => DetectorLayout::ten_class(&GridSpec {
                nx: self.grid.n,
                ny: self.grid.n,
                dx: self.grid.dx,
            }),
        }
    }

    pub fn sensor_spec(&self) -> CliResult<Option<SensorSpec>> {
        let Some(s) = self.sensor else { return Ok(None) };
        let grid = self.grid_spec()?;
        let spec = match s.block {
            Some(block) => SensorSpec { pixels: s.pixels, block },
            None => SensorSpec::scaled(&grid, s.pixels)?,
        };
        spec.validate(&grid)?;
        Ok(Some(spec))
    }

    pub fn net_descriptor(&self, sensor: &SensorSpec) -> Option<NetDescriptor> {
        self.electronic.map(|kind| NetDescriptor {
            kind,
            pixels: sensor.pixels,
            classes: self.detector_layout().classes(),
        })
    }

    pub fn encoder(&self) -> CliResult<InputEncoder> {
        Ok(InputEncoder::new(self.encoding, self.grid_spec()?, self.object_size)?)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            adam: AdamConfig {
                lr: self.lr,
                ..AdamConfig::default()
            },
            seed: self.seed,
        }
    }

    /// Freshly initialized optical front-end.
    pub fn initial_model(&self) -> CliResult<D2nnModel> {
        let mut model = D2nnModel::new(
            self.grid_spec()?,
            self.layers,
            self.modulation,
            self.parameterization,
            self.spacing(),
        )?;
        model.padding_factor = self.padding_factor;
        Ok(model)
    }

    /// Checkpoint metadata carrying this config; geometry is filled in from the model.
    pub fn checkpoint_meta(&self, epoch: usize, val_accuracy: f64) -> CliResult<CheckpointMeta> {
        Ok(CheckpointMeta {
            grid: self.grid_spec()?,
            n_layers: 0,
            modulation: self.modulation,
            parameterization: self.parameterization,
            spacing: self.spacing(),
            padding_factor: self.padding_factor,
            seed: self.seed,
            epoch,
            val_accuracy,
            batch_size: self.batch_size,
            config_hash: self.hash(),
            config: Some(self.canonical()),
        })
    }

    /// Loads the standard split and applies the configured stratified subsampling.
    pub fn load_splits(&self) -> CliResult<Splits> {
        let d = &self.dataset;
        let (pool, test) = match &d.dir {
            Some(dir) => load_standard_dir(dir)?,
            None => {
                let p = |o: &Option<PathBuf>| o.clone().expect("validated");
                (
                    load_idx(p(&d.train_images), p(&d.train_labels))?,
                    load_idx(p(&d.test_images), p(&d.test_labels))?,
                )
            }
        };
        let mut splits = split(&pool, &test, self.seed)?;
        if let Some(s) = self.subset {
            splits.train = stratified_subset(&splits.train, s.train, self.seed)?;
            splits.validation = stratified_subset(&splits.validation, s.validation, self.seed)?;
            splits.test = stratified_subset(&splits.test, s.test, self.seed)?;
        }
        Ok(splits)
    }
}

//! Argument parsing and dispatch.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use d2nn::detection::LossKind;
use d2nn::layer::{ModulationMode, Parameterization};
use d2nn::InputEncoding;

use crate::commands::{self, EvalSplit, PropagatorComparison, SweepAxes};
use crate::config::{HybridMode, RunConfig};
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "d2nn", version, about = "Diffractive optical network simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the configured system; writes a checkpoint and a training curve.
    Train(RunArgs),
    /// Evaluate a checkpoint on the test (or validation) split.
    Eval(EvalArgs),
    /// Train and test all-optical models over layer count, loss, spacing and modulation.
    Sweep(SweepArgs),
    /// Compare analytic and finite-difference gradients at initialization.
    Gradcheck(GradcheckArgs),
    /// Compare angular-spectrum and direct-summation propagation.
    ComparePropagators(PropagatorArgs),
    /// Export layer phase and amplitude as 16-bit graymaps.
    ExportMasks(ExportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LossArg {
    Mse,
    Sce,
}

impl From<LossArg> for LossKind {
    fn from(v: LossArg) -> Self {
        match v {
            LossArg::Mse => LossKind::Mse,
            LossArg::Sce => LossKind::Sce,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModulationArg {
    PhaseOnly,
    Complex,
}

impl From<ModulationArg> for ModulationMode {
    fn from(v: ModulationArg) -> Self {
        match v {
            ModulationArg::PhaseOnly => ModulationMode::PhaseOnly,
            ModulationArg::Complex => ModulationMode::Complex,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ParameterizationArg {
    Sigmoid,
    ReluNorm,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EncodingArg {
    Amplitude,
    Phase,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    AllOptical,
    Stage1,
    Stage2,
    Direct,
    PerfectImager,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Validation,
    Test,
}

/// Config file plus overrides of its fields.
#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub deterministic: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub delta_z: Option<f64>,
    #[arg(long, value_enum)]
    pub modulation: Option<ModulationArg>,
    #[arg(long, value_enum)]
    pub parameterization: Option<ParameterizationArg>,
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    #[arg(long, value_enum)]
    pub encoding: Option<EncodingArg>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
}

impl RunArgs {
    /// Loads the config file and applies the command-line overrides.
    pub fn resolve(&self) -> CliResult<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        cfg.deterministic |= self.deterministic;
        if let Some(v) = &self.out {
            cfg.out_dir = Some(v.clone());
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = self.layers {
            cfg.layers = v;
        }
        if let Some(v) = self.delta_z {
            cfg.delta_z = v;
        }
        if let Some(v) = self.modulation {
            cfg.modulation = v.into();
        }
        if let Some(v) = self.parameterization {
            cfg.parameterization = match v {
                ParameterizationArg::Sigmoid => Parameterization::Sigmoid,
                ParameterizationArg::ReluNorm => Parameterization::ReluNorm,
            };
        }
        if let Some(v) = self.loss {
            cfg.loss = v.into();
        }
        if let Some(v) = self.encoding {
            cfg.encoding = match v {
                EncodingArg::Amplitude => InputEncoding::Amplitude,
                EncodingArg::Phase => InputEncoding::Phase,
            };
        }
        if let Some(v) = self.mode {
            cfg.hybrid_mode = match v {
                ModeArg::AllOptical => HybridMode::AllOptical,
                ModeArg::Stage1 => HybridMode::Stage1,
                ModeArg::Stage2 => HybridMode::Stage2,
                ModeArg::Direct => HybridMode::Direct,
                ModeArg::PerfectImager => HybridMode::PerfectImager,
            };
        }
        if let Some(dir) = &self.data_dir {
            cfg.dataset.dir = Some(dir.clone());
            cfg.dataset.train_images = None;
            cfg.dataset.train_labels = None;
            cfg.dataset.test_images = None;
            cfg.dataset.test_labels = None;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn out_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir.clone().unwrap_or_else(|| Path::new("runs").join(&cfg.hash()[..12]))
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Requested configuration; defaults to the one stored in the checkpoint.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 3, 5])]
    pub layer_counts: Vec<usize>,
    #[arg(long, value_enum, value_delimiter = ',', default_values = ["mse", "sce"])]
    pub losses: Vec<LossArg>,
    /// Defaults to the configured spacing.
    #[arg(long, value_delimiter = ',')]
    pub spacings: Vec<f64>,
    /// Defaults to the configured modulation.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub modulations: Vec<ModulationArg>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, default_value_t = 20)]
    pub probes: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    #[arg(long, default_value_t = 4)]
    pub samples: usize,
}

#[derive(Debug, Args)]
pub struct PropagatorArgs {
    #[arg(long, default_value_t = 16)]
    pub n: usize,
    #[arg(long, default_value_t = 0.53)]
    pub dx: f64,
    #[arg(long, value_delimiter = ',', default_values_t = [4.0, 40.0])]
    pub z: Vec<f64>,
    #[arg(long, default_value_t = 8)]
    pub padding: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "runs/propagators")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train(args) => {
            let cfg = args.resolve()?;
            let out = out_dir(&cfg);
            let s = commands::train(&cfg, &out)?;
            println!(
                "best validation accuracy {:.4} at epoch {}; checkpoint {}",
                s.best_val_accuracy,
                s.best_epoch,
                s.checkpoint.display()
            );
        }
        Command::Eval(args) => {
            let requested = args.config.as_deref().map(RunConfig::load).transpose()?;
            let split = match args.split {
                SplitArg::Validation => EvalSplit::Validation,
                SplitArg::Test => EvalSplit::Test,
            };
            let out = args.out.unwrap_or_else(|| {
                args.checkpoint.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf)
            });
            let e = commands::eval(&args.checkpoint, requested.as_ref(), split, &out)?;
            let r = &e.report;
            println!("accuracy {:.4} over {} samples", r.accuracy, r.records.len());
            if let (Some(eff), Some(con)) = (r.mean_efficiency, r.mean_contrast) {
                println!("power efficiency {eff:.6}, signal contrast {con:.6}");
            }
        }
        Command::Sweep(args) => {
            let cfg = args.run.resolve()?;
            let mut axes = SweepAxes::standard(&cfg);
            axes.layers = args.layer_counts;
            axes.losses = args.losses.into_iter().map(Into::into).collect();
            if !args.spacings.is_empty() {
                axes.delta_z = args.spacings;
            }
            if !args.modulations.is_empty() {
                axes.modulations = args.modulations.into_iter().map(Into::into).collect();
            }
            let out = out_dir(&cfg);
            let rows = commands::sweep(&cfg, &axes, &out)?;
            println!("{} rows written to {}", rows.len(), out.join(commands::SWEEP_FILE).display());
        }
        Command::Gradcheck(args) => {
            let cfg = args.run.resolve()?;
            let report = commands::gradcheck(&cfg, args.probes, args.step, args.samples, &out_dir(&cfg))?;
            println!("max relative error {:e} over {} probes", report.max_rel_error, report.probes.len());
        }
        Command::ComparePropagators(args) => {
            if args.padding < 2 {
                return Err(CliError::Validation("--padding must be at least 2".into()));
            }
            let params = PropagatorComparison {
                n: args.n,
                dx: args.dx,
                padding: args.padding,
                seed: args.seed,
            };
            for (z, err) in commands::compare_propagators(params, &args.z, &args.out)? {
                println!("z = {z}: relative L2 {err:.3e}");
            }
        }
        Command::ExportMasks(args) => {
            let sidecar = commands::export_masks(&args.checkpoint, &args.out)?;
            println!("exported {} layers to {}", sidecar.layers.len(), args.out.display());
        }
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

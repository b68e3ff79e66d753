//! Accuracy, confusion matrices, power efficiency, signal contrast and
//! electronic back-end complexity.

use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::LabeledImageSet;
use crate::detection::classify;
use crate::electronic::{conv_stride, ElectronicKind, NetDescriptor, CONV1_KERNEL, CONV2_KERNEL, HIDDEN_UNITS};
use crate::error::{D2nnError, Result};
use crate::hybrid::{HybridSystem, Stage1System};
use crate::training::OpticalClassifier;

/// Energy of one multiply-accumulate, in joules.
pub const MAC_ENERGY_J: f64 = 1.5e-12;

/// Outcome of classifying one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub label: usize,
    pub prediction: usize,
    /// Per-class scores: detector signals for optical read-out, logits otherwise.
    pub signals: Vec<f64>,
    /// Total output-plane power `E`; `None` when there is no optical output plane.
    pub total_power: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub confusion: Vec<Vec<usize>>,
    pub mean_efficiency: Option<f64>,
    pub mean_contrast: Option<f64>,
    pub records: Vec<EvalRecord>,
}

/// Rows are true classes, columns predictions.
pub fn confusion_matrix(records: &[EvalRecord], classes: usize) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0; classes]; classes];
    for r in records {
        m[r.label][r.prediction] += 1;
    }
    m
}

pub fn accuracy(records: &[EvalRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().filter(|r| r.label == r.prediction).count() as f64 / records.len() as f64
}

/// `(I_L, I_SC, E)` of every correctly classified sample with a known output power.
fn correct_triples(records: &[EvalRecord]) -> Vec<(f64, f64, f64)> {
    records
        .iter()
        .filter(|r| r.label == r.prediction)
        .filter_map(|r| {
            let e = r.total_power?;
            let competitor = r
                .signals
                .iter()
                .enumerate()
                .filter(|(l, _)| *l != r.label)
                .map(|(_, &v)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            Some((r.signals[r.label], competitor.max(0.0), e))
        })
        .collect()
}

/// Ratio of the mean correct-class signal to the mean total output power over
/// correctly classified samples. `None` when no sample qualifies.
pub fn power_efficiency(records: &[EvalRecord]) -> Option<f64> {
    let t = correct_triples(records);
    let e: f64 = t.iter().map(|x| x.2).sum();
    if t.is_empty() || !(e > 0.0) {
        return None;
    }
    Some(t.iter().map(|x| x.0).sum::<f64>() / e)
}

/// Ratio of the mean margin `I_L − I_SC` to the mean total output power over
/// correctly classified samples.
pub fn signal_contrast(records: &[EvalRecord]) -> Option<f64> {
    let t = correct_triples(records);
    let e: f64 = t.iter().map(|x| x.2).sum();
    if t.is_empty() || !(e > 0.0) {
        return None;
    }
    Some(t.iter().map(|x| x.0 - x.1).sum::<f64>() / e)
}

pub fn report(records: Vec<EvalRecord>, classes: usize) -> EvalReport {
    EvalReport {
        accuracy: accuracy(&records),
        confusion: confusion_matrix(&records, classes),
        mean_efficiency: power_efficiency(&records),
        mean_contrast: signal_contrast(&records),
        records,
    }
}

/// Evaluates every sample of `data` with `f`, which returns the class signals and,
/// when the system has an optical output plane, its total power.
pub fn evaluate_with<F>(data: &LabeledImageSet, classes: usize, f: F) -> Result<EvalReport>
where
    F: Fn(usize) -> Result<(Vec<f64>, Option<f64>)> + Sync,
{
    if data.is_empty() {
        return Err(D2nnError::InvalidInput("cannot evaluate an empty set".into()));
    }
    let records = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let (signals, total_power) = f(i)?;
            Ok(EvalRecord {
                label: data.label(i),
                prediction: classify(&signals),
                signals,
                total_power,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(report(records, classes))
}

pub fn evaluate_optical(clf: &OpticalClassifier, data: &LabeledImageSet) -> Result<EvalReport> {
    evaluate_with(data, clf.layout.classes(), |i| {
        let r = clf.readout(data, i)?;
        Ok((r.signals, Some(r.total_power)))
    })
}

/// Stage-1 systems are scored on the detectors behind their virtual layer.
pub fn evaluate_stage1(system: &Stage1System, data: &LabeledImageSet) -> Result<EvalReport> {
    evaluate_with(data, system.layout.classes(), |i| {
        let r = system.readout(data, i)?;
        Ok((r.signals, Some(r.total_power)))
    })
}

/// Hybrid records carry logits as signals and no optical power.
pub fn evaluate_hybrid(system: &HybridSystem, data: &LabeledImageSet) -> Result<EvalReport> {
    evaluate_with(data, system.head.net.descriptor().classes, |i| Ok((system.logits(data, i)?, None)))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

/// Per-sample rows followed by a blank line and a `metric,value` summary block.
pub fn report_csv(report: &EvalReport, config_hash: &str) -> String {
    let classes = report.confusion.len();
    let mut out = String::from("index,label,prediction");
    for l in 0..classes {
        out.push_str(&format!(",I_{l}"));
    }
    out.push_str(",E\n");
    for (i, r) in report.records.iter().enumerate() {
        out.push_str(&format!("{i},{},{}", r.label, r.prediction));
        for s in &r.signals {
            out.push_str(&format!(",{s}"));
        }
        out.push_str(&format!(",{}\n", fmt_opt(r.total_power)));
    }
    out.push_str("\nmetric,value\n");
    out.push_str(&format!("config_hash,{config_hash}\n"));
    out.push_str(&format!("samples,{}\n", report.records.len()));
    out.push_str(&format!("accuracy,{}\n", report.accuracy));
    out.push_str(&format!("power_efficiency,{}\n", fmt_opt(report.mean_efficiency)));
    out.push_str(&format!("signal_contrast,{}\n", fmt_opt(report.mean_contrast)));
    for (t, row) in report.confusion.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(usize::to_string).collect();
        out.push_str(&format!("confusion_{t},{}\n", cells.join(";")));
    }
    out
}

/// Operation and parameter counts of an electronic back-end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Complexity {
    pub macs: u64,
    pub params_weights_only: u64,
    pub params_total: u64,
    pub flops: u64,
    pub energy_joules_per_image: f64,
    /// Whether the counts agree with the reference figures for this configuration.
    pub matches_reference: Option<bool>,
}

/// Reference `(pixels, weights, flops, energy)` figures for the two small back-ends.
pub const FC_REFERENCE: [(usize, u64, u64, f64); 3] =
    [(10, 1000, 2000, 1.5e-9), (25, 6250, 12500, 9.5e-9), (50, 25000, 50000, 3.8e-8)];
pub const CONV2F1_REFERENCE: [(usize, u64, u64, f64); 3] =
    [(10, 615, 3102, 2.4e-9), (25, 825, 9048, 7.0e-9), (50, 3345, 43248, 3.3e-8)];

/// Rounds to two significant figures, the precision of the reference energies.
pub fn two_significant(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let exp = x.abs().log10().floor() as i32 - 1;
    let scale = 10f64.powi(exp);
    // the epsilon keeps exact halves such as 3.75 from rounding down through representation error
    ((x / scale) * (1.0 + 1e-12)).round() * scale
}

pub fn reference_row(desc: &NetDescriptor) -> Option<(u64, u64, f64)> {
    let table = match desc.kind {
        ElectronicKind::Fc => &FC_REFERENCE,
        ElectronicKind::Conv2F1 => &CONV2F1_REFERENCE,
    };
    if desc.classes != 10 {
        return None;
    }
    table
        .iter()
        .find(|r| r.0 == desc.pixels)
        .map(|&(_, w, f, e)| (w, f, e))
}

pub fn complexity_report(desc: &NetDescriptor) -> Result<Complexity> {
    let p = desc.pixels as u64;
    let c = desc.classes as u64;
    if p == 0 || c == 0 {
        return Err(D2nnError::InvalidInput("network needs pixels and classes".into()));
    }
    let (macs, weights, biases) = match desc.kind {
        ElectronicKind::Fc => (p * p * c, p * p * c, c),
        ElectronicKind::Conv2F1 => {
            let s = conv_stride(desc.pixels) as u64;
            let (k1, k2, h) = (CONV1_KERNEL as u64, CONV2_KERNEL as u64, HIDDEN_UNITS as u64);
            if p < k1 || (p - k1) / s + 1 < k2 {
                return Err(D2nnError::InvalidInput(format!(
                    "a {p}x{p} sensor is too small for the convolutional back-end"
                )));
            }
            let s1 = (p - k1) / s + 1;
            let s2 = (s1 - k2) / s + 1;
            let macs = s1 * s1 * k1 * k1 + s2 * s2 * k2 * k2 + s2 * s2 * h + h * c;
            let weights = k1 * k1 + k2 * k2 + s2 * s2 * h + h * c;
            (macs, weights, 2 + h + c)
        }
    };
    let energy = macs as f64 * MAC_ENERGY_J;
    let matches_reference = reference_row(desc)
        .map(|(w, f, e)| w == weights && f == 2 * macs && two_significant(energy) == two_significant(e));
    Ok(Complexity {
        macs,
        params_weights_only: weights,
        params_total: weights + biases,
        flops: 2 * macs,
        energy_joules_per_image: energy,
        matches_reference,
    })
}

//! File writers shared by the commands.

use std::path::Path;

use d2nn::training::{curve_csv, EpochRecord};
use d2nn::D2nnError;

use crate::error::CliResult;

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| D2nnError::io(dir, e))?;
    Ok(())
}

pub fn write(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult<()> {
    std::fs::write(path, bytes).map_err(|e| D2nnError::io(path, e))?;
    Ok(())
}

/// Appends the blank-line separated `metric,value` block used by every CSV.
pub fn summary_block(csv: &mut String, rows: &[(&str, String)]) {
    csv.push_str("\nmetric,value\n");
    for (k, v) in rows {
        csv.push_str(&format!("{k},{v}\n"));
    }
}

/// Training curve; wall-clock seconds are included only for non-deterministic runs.
pub fn training_curve_csv(curve: &[EpochRecord], seconds: Option<&[f64]>, config_hash: &str) -> String {
    let mut csv = match seconds {
        None => curve_csv(curve),
        Some(secs) => {
            let mut out = String::from("epoch,train_loss,val_accuracy,seconds\n");
            for (r, s) in curve.iter().zip(secs) {
                out.push_str(&format!("{},{},{},{s:.3}\n", r.epoch, r.train_loss, r.val_accuracy));
            }
            out
        }
    };
    summary_block(&mut csv, &[("config_hash", config_hash.to_string())]);
    csv
}

/// Binary 16-bit portable graymap, row-major, big-endian samples.
pub fn pgm16(width: usize, height: usize, samples: &[u16]) -> Vec<u8> {
    assert_eq!(samples.len(), width * height);
    let mut out = format!("P5\n{width} {height}\n65535\n").into_bytes();
    for s in samples {
        out.extend_from_slice(&s.to_be_bytes());
    }
    out
}

/// Maps `values` linearly onto 0..=65535 between their minimum and maximum.
pub fn quantize(values: &[f64]) -> (Vec<u16>, f64, f64) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let q = values
        .iter()
        .map(|v| if span > 0.0 { ((v - lo) / span * 65535.0).round() as u16 } else { 0 })
        .collect();
    (q, lo, hi)
}

//! Human-readable checkpoint report.

use std::fmt::Write;
use std::path::Path;

use ballspin_core::checkpoint::{read_checkpoint_header, Checkpoint};

use crate::error::CliError;

/// Layer widths of one head read from its weight tensors, input first.
pub fn head_shape(tensors: &[(String, Vec<usize>)], head: &str) -> Vec<usize> {
    let mut sizes = Vec::new();
    for (name, shape) in tensors {
        if name.starts_with(&format!("{head}.")) && name.ends_with(".weight") && shape.len() == 2 {
            if sizes.is_empty() {
                sizes.push(shape[0]);
            }
            sizes.push(shape[1]);
        }
    }
    sizes
}

/// Parameters implied by a layer-width list: weights plus biases.
pub fn closed_form_params(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
}

fn arrow(sizes: &[usize]) -> String {
    sizes.iter().map(|s| s.to_string()).collect::<Vec<_>>().join("\u{2192}")
}

pub fn inspect(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let header = read_checkpoint_header(&bytes)?;
    let mut out = String::new();
    let _ = writeln!(out, "checkpoint: {}", path.display());
    let _ = writeln!(out, "schema version: {}", header.version);
    let _ = writeln!(out, "scalar width: {} bytes, little-endian", header.scalar_width);
    let _ = writeln!(out, "iteration: {}", header.iteration);
    let _ = writeln!(out, "config digest: {}", header.config_digest);
    let policy = head_shape(&header.tensors, "policy");
    let value = head_shape(&header.tensors, "value");
    let _ = writeln!(out, "policy: {}", arrow(&policy));
    let _ = writeln!(out, "value: {}", arrow(&value));
    let _ = writeln!(out, "parameters: {}", header.num_params());
    if header.scalar_width == 4 {
        let ckpt = Checkpoint::<f32>::from_bytes(&bytes)?;
        let std: Vec<String> = ckpt.params.log_std.iter().map(|v| format!("{:.4}", v.exp())).collect();
        let _ = writeln!(out, "action std: [{}]", std.join(", "));
        for (name, shape, data) in ckpt.params.tensors() {
            let norm = data.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
            let _ = writeln!(out, "  {name:<18} {:<12} l2 {norm:.6}", format!("{shape:?}"));
        }
    } else {
        let ckpt = Checkpoint::<f64>::from_bytes(&bytes)?;
        for (name, shape, data) in ckpt.params.tensors() {
            let norm = data.iter().map(|v| v.powi(2)).sum::<f64>().sqrt();
            let _ = writeln!(out, "  {name:<18} {:<12} l2 {norm:.6}", format!("{shape:?}"));
        }
    }
    Ok(out)
}

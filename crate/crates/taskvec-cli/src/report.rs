// SPDX-License-Identifier: MIT OR Apache-2.0

//! Decomposition report: a deterministic JSON summary of what a `decompose`
//! run retained per layer, plus content digests of the exact inputs it read.
//! Wall-clock timings go to a separate sidecar so the report itself is
//! byte-identical across reruns of the same inputs.

use std::collections::BTreeMap;

use serde::Serialize;
use sha2::{Digest, Sha256};
use taskvec_core::decompose::{DecompositionResult, LayerReport};

#[derive(Debug, Serialize)]
pub struct Report {
    pub version: String,
    pub mode: String,
    pub tau: f64,
    pub rank_tol: f64,
    /// SHA-256 of each input file's bytes, keyed by manifest name.
    pub inputs: BTreeMap<String, String>,
    pub layers: BTreeMap<String, LayerEntry>,
    pub undecomposed: Vec<String>,
}

#[derive(Debug, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerEntry {
    Chain {
        r_shared: usize,
        retained_eigenvalues: Vec<f64>,
        /// Relative reconstruction error per input vector.
        residuals: Vec<f64>,
        /// Largest eigenvalue drift over chain reorderings; only for k > 2.
        #[serde(skip_serializing_if = "Option::is_none")]
        order_drift: Option<f64>,
    },
    Pairwise {
        pairs: Vec<PairEntry>,
        residuals: Vec<f64>,
    },
}

#[derive(Debug, Serialize)]
pub struct PairEntry {
    pub i: usize,
    pub j: usize,
    pub r_shared: usize,
    pub retained_eigenvalues: Vec<f64>,
}

/// Timing sidecar, written next to the report. Not deterministic.
#[derive(Debug, Serialize)]
pub struct Timing {
    pub read_inputs_ms: u128,
    pub decompose_ms: u128,
    pub write_outputs_ms: u128,
    pub total_ms: u128,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for b in digest {
        use std::fmt::Write;
        write!(hex, "{b:02x}").expect("write to string");
    }
    hex
}

/// Builds the report body from a decomposition result. Undecomposed layers
/// appear only in the `undecomposed` list, decomposed layers only in
/// `layers`, so together every input layer shows up exactly once.
pub fn build(result: &DecompositionResult, inputs: BTreeMap<String, String>) -> Report {
    let mode = match result.mode {
        taskvec_core::decompose::Mode::Chain => "chain",
        taskvec_core::decompose::Mode::Pairwise => "pairwise",
    };
    let mut layers = BTreeMap::new();
    for (name, layer) in &result.layers {
        let entry = match layer {
            LayerReport::Undecomposed => continue,
            LayerReport::Chain(rep) => LayerEntry::Chain {
                r_shared: rep.basis.z.cols(),
                retained_eigenvalues: rep.basis.source_values.clone(),
                residuals: rep.residuals.clone(),
                order_drift: rep.order_drift,
            },
            LayerReport::Pairwise(rep) => LayerEntry::Pairwise {
                pairs: rep
                    .pairs
                    .iter()
                    .map(|p| PairEntry {
                        i: p.i,
                        j: p.j,
                        r_shared: p.basis.z.cols(),
                        retained_eigenvalues: p.basis.source_values.clone(),
                    })
                    .collect(),
                residuals: rep.residuals.clone(),
            },
        };
        layers.insert(name.clone(), entry);
    }
    Report {
        version: env!("CARGO_PKG_VERSION").to_string(),
        mode: mode.to_string(),
        tau: result.tau,
        rank_tol: result.rank_tol,
        inputs,
        layers,
        undecomposed: result.undecomposed.clone(),
    }
}

/// Serializes any report-like document with a stable layout and a trailing
/// newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("report serialization");
    text.push('\n');
    text
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_reference_value() {
        // SHA-256 of the empty input.
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}

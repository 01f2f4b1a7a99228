//! CSV tables and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::Failure;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EnergyRow {
    pub config_hash: String,
    pub kind: String,
    pub n: usize,
    pub p: f64,
    pub beta: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub epsilon: Option<f64>,
    pub energy: f64,
    pub residual: f64,
    pub sup1: f64,
    pub sup2: f64,
    pub standard: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ThresholdRow {
    pub config_hash: String,
    pub n: usize,
    pub p: f64,
    pub beta: f64,
    pub m1: f64,
    pub m2: f64,
    pub omega: f64,
    pub c10: f64,
    pub c_m1_0: f64,
    pub c_m2_0: f64,
    pub c_m1_beta: f64,
    pub c_m2_beta: f64,
    pub beta_omega_p: f64,
    pub beta_tilde: f64,
    pub theta: Option<f64>,
    pub cstar: f64,
    pub l_tilde: u64,
    pub l_hat: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ConcentrationRow {
    pub config_hash: String,
    pub epsilon: f64,
    pub x1_0: f64,
    pub x1_1: f64,
    pub x1_2: f64,
    pub x2_0: f64,
    pub x2_1: f64,
    pub x2_2: f64,
    pub x_sum_0: f64,
    pub x_sum_1: f64,
    pub x_sum_2: f64,
    pub x_omega_0: f64,
    pub x_omega_1: f64,
    pub x_omega_2: f64,
    pub peak1: f64,
    pub peak2: f64,
    pub peak_sum: f64,
    pub dist_scaled: f64,
    pub dist_to_m: f64,
    pub energy_over_eps_n: f64,
    pub residual: f64,
    pub standard: bool,
    pub tie: bool,
    pub peaks_in_lambda: bool,
    pub window_pass: bool,
    pub violations: usize,
    pub margin: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DecayRow {
    pub config_hash: String,
    pub epsilon: f64,
    pub model: String,
    pub rate: f64,
    pub intercept: f64,
    pub r2: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PohozaevRow {
    pub config_hash: String,
    pub epsilon: f64,
    pub axis: usize,
    pub delta: f64,
    pub flux: f64,
    pub gradient_square: f64,
    pub potential: f64,
    pub nonlinear: f64,
    pub surface: f64,
    pub surface_magnitude: f64,
    pub volume: f64,
    pub volume_1: f64,
    pub volume_2: f64,
    pub residual: f64,
}

/// Tables produced by one run, keyed by file name.
#[derive(Default)]
pub struct Tables {
    pub energies: Vec<EnergyRow>,
    pub thresholds: Vec<ThresholdRow>,
    pub concentration: Vec<ConcentrationRow>,
    pub decay: Vec<DecayRow>,
    pub pohozaev: Vec<PohozaevRow>,
}

fn encode<T: Serialize>(rows: &[T]) -> Result<Vec<u8>, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Failure::Io(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Failure::Io(e.to_string()))
}

impl Tables {
    /// Writes every non-empty table; returns the file names.
    pub fn write(&self, dir: &Path) -> Result<Vec<String>, Failure> {
        let mut files = Vec::new();
        let mut put = |name: &str, bytes: Vec<u8>| -> Result<(), Failure> {
            fs::write(dir.join(name), bytes).map_err(|e| Failure::Io(format!("{name}: {e}")))?;
            files.push(name.to_string());
            Ok(())
        };
        if !self.energies.is_empty() {
            put("energies.csv", encode(&self.energies)?)?;
        }
        if !self.thresholds.is_empty() {
            put("thresholds.csv", encode(&self.thresholds)?)?;
        }
        if !self.concentration.is_empty() {
            put("concentration.csv", encode(&self.concentration)?)?;
        }
        if !self.decay.is_empty() {
            put("decay.csv", encode(&self.decay)?)?;
        }
        if !self.pohozaev.is_empty() {
            put("pohozaev.csv", encode(&self.pohozaev)?)?;
        }
        Ok(files)
    }
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, Failure> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub subcommand: String,
    pub config_path: Option<String>,
    pub config_hash: Option<String>,
    pub version: &'static str,
    pub seed: u64,
    pub threads: usize,
    pub status: &'static str,
    pub exit_code: i32,
    pub error: Option<String>,
    pub files: Vec<String>,
    pub wall_times_s: BTreeMap<String, f64>,
}

impl Manifest {
    pub fn write(&self, dir: &Path) -> Result<(), Failure> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Failure::Io(e.to_string()))?;
        fs::write(dir.join("manifest.json"), text + "\n").map_err(|e| Failure::Io(format!("manifest.json: {e}")))
    }
}

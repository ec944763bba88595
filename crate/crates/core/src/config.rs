//! Experiment configuration, read from TOML.
//!
//! Every section and key is optional; missing values take the defaults
//! below. Unknown keys are rejected.

use std::path::Path;

use nalgebra::Vector6;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::Loss;
use crate::prior::{PriorConfig, PriorOrder};
use crate::solver::SolverOptions;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub prior: PriorSection,
    pub sim: SimSection,
    pub solver: SolverSection,
    pub metric: MetricSection,
}

/// Power-spectral-density diagonals for both prior orders, so that `compare`
/// can run each with its own tuning. `order` selects the one `estimate` uses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSection {
    pub order: PriorOrder,
    pub wnoa_qc_diag: [f64; 6],
    pub wnoj_qc_diag: [f64; 6],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    /// Seconds of simulated driving.
    pub duration: f64,
    /// Ground-truth sample rate (Hz).
    pub sample_rate: f64,
    pub landmarks: usize,
    /// Edge of the box (m) around the path that landmarks are drawn from.
    pub landmark_box: f64,
    pub sensor_range: f64,
    /// Per-axis point noise standard deviation (m).
    pub noise_std: f64,
    /// Measurement rate (Hz).
    pub measurement_rate: f64,
    pub plane_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    /// Seconds between knots.
    pub knot_spacing: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub loss: Loss,
    /// Knots added per step of the sequential initializer.
    pub init_step: usize,
    /// Knots optimized together by the sequential initializer.
    pub init_window: usize,
    pub parallel: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricSection {
    /// Path lengths (m), strictly increasing.
    pub segment_lengths: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            prior: PriorSection::default(),
            sim: SimSection::default(),
            solver: SolverSection::default(),
            metric: MetricSection::default(),
        }
    }
}

impl Default for PriorSection {
    fn default() -> Self {
        Self {
            order: PriorOrder::Wnoj,
            // tuned per prior on simulated drives separate from the evaluation seeds
            wnoa_qc_diag: [0.081, 9e-4, 9e-4, 2.43e-10, 2.43e-10, 2.7e-4],
            wnoj_qc_diag: [0.9, 0.1, 0.1, 9e-7, 9e-7, 3e-3],
        }
    }
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            duration: 60.0,
            sample_rate: 100.0,
            landmarks: 200,
            landmark_box: 40.0,
            sensor_range: 30.0,
            noise_std: 0.02,
            measurement_rate: 500.0,
            plane_fraction: 0.0,
        }
    }
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            knot_spacing: 0.1,
            max_iterations: 50,
            tolerance: 1e-6,
            loss: Loss::GemanMcClure,
            init_step: 5,
            init_window: 10,
            parallel: true,
        }
    }
}

impl Default for MetricSection {
    fn default() -> Self {
        Self {
            segment_lengths: vec![50.0, 100.0, 150.0, 200.0, 250.0, 300.0],
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Checks every invariant, naming the offending field.
    pub fn validate(&self) -> Result<()> {
        for (name, qc) in [
            ("prior.wnoa_qc_diag", &self.prior.wnoa_qc_diag),
            ("prior.wnoj_qc_diag", &self.prior.wnoj_qc_diag),
        ] {
            for (i, q) in qc.iter().enumerate() {
                positive(&format!("{name}[{i}]"), *q)?;
            }
        }
        let s = &self.sim;
        positive("sim.duration", s.duration)?;
        positive("sim.sample_rate", s.sample_rate)?;
        positive("sim.landmark_box", s.landmark_box)?;
        positive("sim.sensor_range", s.sensor_range)?;
        positive("sim.measurement_rate", s.measurement_rate)?;
        if s.landmarks == 0 {
            return Err(Error::Config("sim.landmarks must be at least 1".into()));
        }
        if !(s.noise_std.is_finite() && s.noise_std >= 0.0) {
            return Err(Error::Config(format!(
                "sim.noise_std must be non-negative, got {}",
                s.noise_std
            )));
        }
        if !(0.0..=1.0).contains(&s.plane_fraction) {
            return Err(Error::Config(format!(
                "sim.plane_fraction must lie in [0, 1], got {}",
                s.plane_fraction
            )));
        }
        let v = &self.solver;
        positive("solver.knot_spacing", v.knot_spacing)?;
        positive("solver.tolerance", v.tolerance)?;
        if v.max_iterations == 0 {
            return Err(Error::Config("solver.max_iterations must be at least 1".into()));
        }
        if v.init_step == 0 || v.init_window < v.init_step {
            return Err(Error::Config(
                "solver.init_step must be at least 1 and at most solver.init_window".into(),
            ));
        }
        let lengths = &self.metric.segment_lengths;
        for (i, l) in lengths.iter().enumerate() {
            positive(&format!("metric.segment_lengths[{i}]"), *l)?;
        }
        if lengths.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(
                "metric.segment_lengths must be strictly increasing".into(),
            ));
        }
        Ok(())
    }

    pub fn qc_diag(&self, order: PriorOrder) -> Vector6<f64> {
        Vector6::from(match order {
            PriorOrder::Wnoa => self.prior.wnoa_qc_diag,
            PriorOrder::Wnoj => self.prior.wnoj_qc_diag,
        })
    }

    pub fn prior_config(&self, order: PriorOrder) -> Result<PriorConfig<f64>> {
        PriorConfig::new(order, self.qc_diag(order))
    }

    pub fn solver_options(&self) -> SolverOptions<f64> {
        SolverOptions {
            max_iterations: self.solver.max_iterations,
            tolerance: self.solver.tolerance,
            parallel: self.solver.parallel,
            ..SolverOptions::default()
        }
    }
}

/// Reads and validates a configuration file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    ExperimentConfig::from_toml_str(&text)
}

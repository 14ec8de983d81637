//! Experiment configuration, read from JSON.
//!
//! ```json
//! {
//!   "task": "planted-recovery",
//!   "shape": [32, 32],
//!   "selection": { "n": 40, "delta": 1.0, "seed": 7 },
//!   "alpha": 1.0,
//!   "eta": null,
//!   "epochs": 5000,
//!   "batch": 64,
//!   "seed": 1,
//!   "baseline": "none",
//!   "planted": { "support": 20, "placement": "top-energy", "scale": 1.0 },
//!   "tolerance": 1e-6
//! }
//! ```
//!
//! Omitted fields take the values of [`ExperimentConfig::default`]. A null
//! `eta` means a quarter of the closed-form stability bound (see
//! [`stable_step_bound`]). `baseline` is `"none"`, `"full"` or `{"lora": r}`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::spectrum::SelectionConfig;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    /// Fit `W` to a planted target with `L = 1/2 ||W - W*||_F^2`.
    PlantedRecovery,
    /// Least squares on inputs `X`: `L = 1/(2b) ||W X - W* X||_F^2`.
    Regression,
    /// Softmax cross-entropy with labels `argmax(W* x)`.
    ClassificationToy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    None,
    Full,
    Lora(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Placement {
    /// Highest-energy cells of `dht2(W0)`; planted signs follow `H0` so the
    /// cells stay on top in `dht2(W*)`.
    TopEnergy,
    /// Uniform without replacement.
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantedConfig {
    /// Number of planted coefficients.
    pub support: usize,
    pub placement: Placement,
    /// Planted magnitudes are drawn from `scale * U[1, 2)`.
    pub scale: f64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            support: 20,
            placement: Placement::TopEnergy,
            scale: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub task: Task,
    pub shape: (usize, usize),
    pub selection: SelectionConfig,
    pub alpha: f64,
    pub eta: Option<f64>,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    pub baseline: Baseline,
    pub planted: PlantedConfig,
    /// Frobenius error under which a recoverable run counts as converged.
    pub tolerance: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: Task::PlantedRecovery,
            shape: (32, 32),
            selection: SelectionConfig::new(40, 1.0, 7),
            alpha: 1.0,
            eta: None,
            epochs: 5000,
            batch: 64,
            seed: 1,
            baseline: Baseline::None,
            planted: PlantedConfig::default(),
            tolerance: 1e-6,
        }
    }
}

/// Largest stable gradient-descent step for the planted quadratic.
///
/// On the masked coefficients the Hessian of `1/2 ||W - W*||^2` is
/// `alpha^2 / (d1 d2) * I`, so descent is stable for `eta < 2 d1 d2 / alpha^2`.
pub fn stable_step_bound(alpha: f64, d1: usize, d2: usize) -> f64 {
    2.0 * (d1 * d2) as f64 / (alpha * alpha)
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let (d1, d2) = self.shape;
        if d1 == 0 || d2 == 0 {
            return Err(Error::Config(format!("shape must be positive, got {d1}x{d2}")));
        }
        self.selection.validate(self.shape)?;
        if !self.alpha.is_finite() || self.alpha == 0.0 {
            return Err(Error::Config(format!("alpha must be finite and non-zero, got {}", self.alpha)));
        }
        if let Some(eta) = self.eta {
            if !(eta >= 0.0 && eta.is_finite()) {
                return Err(Error::Config(format!("eta must be >= 0, got {eta}")));
            }
        }
        if self.epochs == 0 || self.batch == 0 {
            return Err(Error::Config("epochs and batch must be positive".into()));
        }
        if self.planted.support == 0 || self.planted.support > d1 * d2 {
            return Err(Error::Config(format!(
                "planted support must lie in 1..={}, got {}",
                d1 * d2,
                self.planted.support
            )));
        }
        if !(self.planted.scale > 0.0 && self.planted.scale.is_finite()) {
            return Err(Error::Config("planted scale must be positive".into()));
        }
        if let Baseline::Lora(r) = self.baseline {
            if r == 0 || r > d1.min(d2) {
                return Err(Error::Config(format!("LoRA rank {r} outside 1..={}", d1.min(d2))));
            }
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(Error::Config("tolerance must be positive".into()));
        }
        Ok(())
    }

    /// Same config driven by `seed` for both the experiment and the mask's
    /// random remainder.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.selection.seed = seed;
        self
    }

    /// Configured step, or a quarter of [`stable_step_bound`].
    pub fn step_size(&self) -> f64 {
        self.eta
            .unwrap_or_else(|| 0.25 * stable_step_bound(self.alpha, self.shape.0, self.shape.1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn partial_json_uses_defaults() {
        let cfg = ExperimentConfig::from_json(
            r#"{"task": "regression", "shape": [8, 6], "selection": {"n": 10, "delta": 0.5, "seed": 3},
                "baseline": {"lora": 2}, "planted": {"support": 4}}"#,
        )
        .unwrap();
        assert_eq!(cfg.task, Task::Regression);
        assert_eq!(cfg.baseline, Baseline::Lora(2));
        assert_eq!(cfg.planted.placement, Placement::TopEnergy);
        assert_eq!(cfg.epochs, 5000);
    }

    #[test]
    fn rejects_invalid() {
        for bad in [
            r#"{"shape": [0, 4]}"#,
            r#"{"selection": {"n": 5000, "delta": 1.0, "seed": 0}}"#,
            r#"{"selection": {"n": 5, "delta": 1.5, "seed": 0}}"#,
            r#"{"eta": -1.0}"#,
            r#"{"alpha": 0.0}"#,
            r#"{"baseline": {"lora": 64}}"#,
            r#"{"planted": {"support": 0}}"#,
            r#"{"task": "clustering"}"#,
        ] {
            assert!(ExperimentConfig::from_json(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn default_step_is_quarter_of_bound() {
        let cfg = ExperimentConfig::default();
        assert_eq!(stable_step_bound(1.0, 32, 32), 2048.0);
        assert_eq!(cfg.step_size(), 512.0);
        assert_eq!(stable_step_bound(2.0, 4, 4), 8.0);
    }
}

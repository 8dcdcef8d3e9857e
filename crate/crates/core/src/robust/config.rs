use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Group;
use crate::scenario::Recourse;

/// Sparsity pattern of the recourse gains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecourseStructure {
    /// Task `i` responds only to its own interval and distance perturbations.
    #[default]
    Diagonal,
    /// Every task responds to every uncertainty component.
    Full,
}

/// What the second-stage cost term charges for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SecondStageCost {
    /// `beta . mean(delta)` over the training samples, a constant.
    #[default]
    Literal,
    /// Sample-average `beta`-weighted magnitude of the recourse adjustments.
    RecourseMagnitude,
}

/// How recourse gains enter the robust model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum RecourseMode {
    /// No adaptation: all gains are zero.
    Off,
    /// Gains are inputs taken from `fixed_recourse`.
    Fixed,
    /// Gains are bounded decision variables.
    Optimize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobustConfig {
    /// Groups whose sampled rows may be violated on a budget of samples.
    /// The remaining groups must hold for every point of the polytope.
    pub violable_set: Vec<Group>,
    /// Overrides the uncertainty model's violation probability.
    pub epsilon: Option<f64>,
    /// Overrides the uncertainty model's training sample count.
    pub k_samples: Option<usize>,
    /// Single relaxation constant for all sampled rows; per-row values
    /// computed from variable boxes are used when absent.
    pub big_m_saa: Option<f64>,
    /// Whether the gains are decision variables.
    pub recourse_enabled: bool,
    /// Gains used when recourse is not optimized.
    pub fixed_recourse: Option<Recourse>,
    pub recourse_structure: RecourseStructure,
    pub second_stage_cost: SecondStageCost,
    /// Bound on every gain; derived from box widths when absent.
    pub w_max: Option<f64>,
}

impl Default for RobustConfig {
    fn default() -> Self {
        RobustConfig {
            violable_set: Group::ALL.to_vec(),
            epsilon: None,
            k_samples: None,
            big_m_saa: None,
            recourse_enabled: false,
            fixed_recourse: None,
            recourse_structure: RecourseStructure::default(),
            second_stage_cost: SecondStageCost::default(),
            w_max: None,
        }
    }
}

impl RobustConfig {
    pub fn mode(&self) -> RecourseMode {
        if self.recourse_enabled {
            RecourseMode::Optimize
        } else if self.fixed_recourse.is_some() {
            RecourseMode::Fixed
        } else {
            RecourseMode::Off
        }
    }

    /// Applies a command-line recourse choice.
    pub fn set_mode(&mut self, mode: RecourseMode) -> Result<()> {
        match mode {
            RecourseMode::Off => {
                self.recourse_enabled = false;
                self.fixed_recourse = None;
            }
            RecourseMode::Fixed => {
                if self.fixed_recourse.is_none() {
                    return Err(Error::Config(
                        "fixed recourse requires robust.fixed_recourse in the scenario".into(),
                    ));
                }
                self.recourse_enabled = false;
            }
            RecourseMode::Optimize => self.recourse_enabled = true,
        }
        Ok(())
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let mut bad = Vec::new();
        if let Some(e) = self.epsilon {
            if !(e > 0.0 && e < 1.0) {
                bad.push(format!("robust.epsilon must lie in (0, 1) (got {e})"));
            }
        }
        if self.k_samples == Some(0) {
            bad.push("robust.k_samples must be at least 1".into());
        }
        if let Some(m) = self.big_m_saa {
            if !(m > 0.0) {
                bad.push(format!("robust.big_m_saa must be positive (got {m})"));
            }
        }
        if let Some(w) = self.w_max {
            if !(w >= 0.0) {
                bad.push(format!("robust.w_max must be nonnegative (got {w})"));
            }
        }
        let mut seen = self.violable_set.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.violable_set.len() {
            bad.push("robust.violable_set lists a group twice".into());
        }
        if let Some(r) = &self.fixed_recourse {
            let shapes = [
                ("ws", &r.ws),
                ("wt", &r.wt),
                ("wtc", &r.wtc),
                ("wdt", &r.wdt),
                ("wtw", &r.wtw),
            ];
            for (name, m) in shapes {
                if m.len() != n || m.iter().any(|row| row.len() != 2 * n) {
                    bad.push(format!(
                        "robust.fixed_recourse.{name} must be {n} x {}",
                        2 * n
                    ));
                }
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Invariant(bad))
        }
    }
}

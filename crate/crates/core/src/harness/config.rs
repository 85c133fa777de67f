//! Experiment configuration, read from TOML.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::arrays::{Architecture, HybridConfig, UraGeometry};
use crate::beam_alignment::AlignmentSettings;
use crate::error::{Error, Result};
use crate::estimation::RankRule;
use crate::scenario::{self, AngleMode, Environment, MvRegion, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Estimator {
    #[serde(rename = "UML", alias = "uml")]
    Uml,
    #[serde(rename = "JS", alias = "js")]
    Js,
    #[serde(rename = "DS", alias = "ds")]
    Ds,
    #[serde(rename = "PERFECT", alias = "perfect", alias = "PERFECT_CSI", alias = "perfect_csi")]
    Perfect,
}

impl Estimator {
    pub const ALL: [Estimator; 4] = [Estimator::Uml, Estimator::Js, Estimator::Ds, Estimator::Perfect];

    pub fn label(&self) -> &'static str {
        match self {
            Estimator::Uml => "UML",
            Estimator::Js => "JS",
            Estimator::Ds => "DS",
            Estimator::Perfect => "PERFECT",
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "UML" | "U-ML" | "LS" => Ok(Estimator::Uml),
            "JS" | "JS-LR" => Ok(Estimator::Js),
            "DS" | "DS-LR" => Ok(Estimator::Ds),
            "PERFECT" | "PERFECT_CSI" => Ok(Estimator::Perfect),
            other => Err(Error::Validation(format!("unknown estimator '{other}'"))),
        }
    }
}

/// Parses a comma-separated estimator list.
pub fn parse_estimators(list: &str) -> Result<Vec<Estimator>> {
    list.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect()
}

/// Scenario source: a named preset, explicit geometry, or a preset with
/// parts replaced.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub environment: Option<Environment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regions: Option<Vec<MvRegion>>,
    /// Region the sweep runs in.
    #[serde(default)]
    pub region: usize,
}

impl ScenarioConfig {
    pub fn resolve(&self) -> Result<Scenario> {
        let base = match &self.preset {
            Some(name) => Some(scenario::preset(name).map_err(|e| Error::Validation(e.to_string()))?),
            None => None,
        };
        let environment = self
            .environment
            .clone()
            .or_else(|| base.as_ref().map(|b| b.environment.clone()))
            .ok_or_else(|| Error::Validation("scenario needs a preset or an environment".into()))?;
        let regions = self
            .regions
            .clone()
            .or_else(|| base.as_ref().map(|b| b.regions.clone()))
            .ok_or_else(|| Error::Validation("scenario needs a preset or regions".into()))?;
        Ok(Scenario { environment, regions })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArraysConfig {
    pub tx: UraGeometry,
    pub rx: UraGeometry,
    #[serde(default = "one")]
    pub n_streams: usize,
}

impl Default for ArraysConfig {
    fn default() -> Self {
        let h = HybridConfig::default_with(Architecture::FullyConnected);
        ArraysConfig { tx: h.tx, rx: h.rx, n_streams: h.n_streams }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Per-antenna SNR before analog beamforming.
    pub snr_db: Vec<f64>,
    pub passages: Vec<usize>,
    /// `[n_tx_rf, n_rx_rf]` pairs; ignored for full digital.
    pub rf_chains: Vec<[usize; 2]>,
    pub architectures: Vec<Architecture>,
    /// Region radii in meters; the scenario's radius when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius_m: Option<Vec<f64>>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            snr_db: vec![-10.0],
            passages: vec![1000],
            rf_chains: vec![[4, 8]],
            architectures: vec![Architecture::FullyConnected],
            radius_m: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignmentConfig {
    #[serde(default = "default_passages_per_beam")]
    pub passages_per_beam: usize,
    /// Measurement SNR during alignment; noiseless when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        AlignmentConfig { passages_per_beam: default_passages_per_beam(), snr_db: None }
    }
}

fn one() -> usize {
    1
}
fn default_passages_per_beam() -> usize {
    AlignmentSettings::default().passages_per_beam
}
fn default_trials() -> usize {
    50
}
fn default_test_passages() -> usize {
    10
}
fn default_seed() -> u64 {
    1
}
fn default_js_max_dim() -> usize {
    4096
}
fn default_true() -> bool {
    true
}
fn default_estimators() -> Vec<Estimator> {
    Estimator::ALL.to_vec()
}
fn default_angle_mode() -> AngleMode {
    AngleMode::FrozenAtCenter
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Fresh passages evaluated per trial.
    #[serde(default = "default_test_passages")]
    pub test_passages: usize,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<Estimator>,
    /// Applies to alignment, training and test passages alike.
    #[serde(default = "default_angle_mode")]
    pub angle_mode: AngleMode,
    /// Heading jitter half-width in degrees.
    #[serde(default)]
    pub heading_jitter_deg: f64,
    /// Pilot length; `n_tx_rf` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pilot_length: Option<usize>,
    /// Reuse trial seeds across grid points.
    #[serde(default = "default_true")]
    pub common_random_numbers: bool,
    /// Largest compressed dimension the joint-space fit may use.
    #[serde(default = "default_js_max_dim")]
    pub js_max_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub arrays: ArraysConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub alignment: AlignmentConfig,
    #[serde(default)]
    pub rank_rule: RankRule,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: default_seed(),
            trials: default_trials(),
            test_passages: default_test_passages(),
            estimators: default_estimators(),
            angle_mode: default_angle_mode(),
            heading_jitter_deg: 0.0,
            pilot_length: None,
            common_random_numbers: true,
            js_max_dim: default_js_max_dim(),
            output: None,
            scenario: ScenarioConfig { preset: Some("s1".into()), ..Default::default() },
            arrays: ArraysConfig::default(),
            grid: GridConfig::default(),
            alignment: AlignmentConfig::default(),
            rank_rule: RankRule::default(),
        }
    }
}

impl ExperimentConfig {
    /// Default arrays and grid on a named scenario preset.
    pub fn preset(name: &str) -> Result<Self> {
        let cfg = ExperimentConfig {
            scenario: ScenarioConfig { preset: Some(name.to_ascii_lowercase()), ..Default::default() },
            ..Default::default()
        };
        cfg.scenario.resolve()?;
        Ok(cfg)
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(s).map_err(|e| Error::Validation(e.to_string()))?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Validation(e.to_string()))
    }

    /// Hybrid configuration for one architecture and RF pair.
    pub fn hybrid(&self, architecture: Architecture, rf: [usize; 2]) -> HybridConfig {
        let (tx, rx) = (self.arrays.tx, self.arrays.rx);
        let (n_tx_rf, n_rx_rf) = match architecture {
            Architecture::FullDigital => (tx.len(), rx.len()),
            _ => (rf[0], rf[1]),
        };
        HybridConfig { architecture, tx, rx, n_tx_rf, n_rx_rf, n_streams: self.arrays.n_streams }
    }

    pub fn region(&self) -> Result<MvRegion> {
        let sc = self.scenario.resolve()?;
        sc.regions
            .get(self.scenario.region)
            .copied()
            .ok_or_else(|| Error::Validation(format!("scenario has no region {}", self.scenario.region)))
    }

    pub fn radii(&self) -> Result<Vec<f64>> {
        match &self.grid.radius_m {
            Some(r) => Ok(r.clone()),
            None => Ok(vec![self.region()?.radius]),
        }
    }

    pub fn alignment_settings(&self) -> AlignmentSettings {
        AlignmentSettings {
            passages_per_beam: self.alignment.passages_per_beam,
            angle_mode: self.angle_mode,
            heading_jitter: self.heading_jitter_deg.to_radians(),
            snr_db: self.alignment.snr_db,
            ..Default::default()
        }
    }

    /// Checks every grid combination up front.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Validation(m));
        let g = &self.grid;
        if g.snr_db.is_empty() || g.passages.is_empty() || g.rf_chains.is_empty() || g.architectures.is_empty() {
            return fail("every grid must be non-empty".into());
        }
        if self.trials == 0 || self.test_passages == 0 {
            return fail("trials and test_passages must be at least 1".into());
        }
        if self.estimators.is_empty() {
            return fail("no estimator selected".into());
        }
        let mut seen = self.estimators.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.estimators.len() {
            return fail("estimator listed twice".into());
        }
        if let Some(s) = g.snr_db.iter().find(|s| !s.is_finite()) {
            return fail(format!("SNR {s} dB is not finite"));
        }
        if g.passages.contains(&0) {
            return fail("passages must be at least 1".into());
        }
        if !(self.heading_jitter_deg >= 0.0 && self.heading_jitter_deg.is_finite()) {
            return fail("heading jitter must be nonnegative".into());
        }
        if self.alignment.passages_per_beam == 0 {
            return fail("alignment needs at least one passage per beam".into());
        }
        if let Some(s) = self.alignment.snr_db {
            if !s.is_finite() {
                return fail("alignment SNR must be finite".into());
            }
        }
        match self.rank_rule {
            RankRule::Cumulative { threshold } | RankRule::AboveNoise { threshold } => {
                if !(threshold > 0.0 && threshold <= 1.0) {
                    return fail("rank threshold must lie in (0, 1]".into());
                }
            }
            RankRule::Fixed { rank } => {
                if rank == 0 {
                    return fail("fixed rank must be positive".into());
                }
            }
        }

        let sc = self.scenario.resolve()?;
        sc.environment.validate().map_err(|e| Error::Validation(e.to_string()))?;
        let region = self.region()?;
        region.validate().map_err(|e| Error::Validation(e.to_string()))?;
        for r in self.radii()? {
            if !(r > 0.0 && r.is_finite()) {
                return fail(format!("radius {r} must be positive"));
            }
        }
        for &arch in &g.architectures {
            for &rf in &g.rf_chains {
                let h = self.hybrid(arch, rf);
                h.validate().map_err(|e| Error::Validation(format!("{} {:?}: {e}", arch.label(), rf)))?;
                if let Some(m) = self.pilot_length {
                    if m < h.n_tx_rf {
                        return fail(format!("pilot length {m} is shorter than {} RF chains", h.n_tx_rf));
                    }
                }
                let d = h.n_tx_rf * h.n_rx_rf;
                if self.estimators.contains(&Estimator::Js) && d > self.js_max_dim {
                    return fail(format!(
                        "joint-space fit of dimension {d} exceeds js_max_dim = {}; drop JS for {}",
                        self.js_max_dim,
                        arch.label()
                    ));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        assert_eq!(c.arrays.tx.len(), 64);
        assert_eq!(c.arrays.rx.len(), 128);
        ExperimentConfig::preset("S2").unwrap().validate().unwrap();
        assert!(ExperimentConfig::preset("s9").is_err());
    }

    #[test]
    fn toml_round_trip() {
        let mut c = ExperimentConfig::default();
        c.grid.radius_m = Some(vec![0.5, 1.0]);
        c.grid.architectures = vec![Architecture::FullyConnected, Architecture::SubConnected];
        c.rank_rule = RankRule::Fixed { rank: 3 };
        let s = c.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&s).unwrap(), c);
    }

    #[test]
    fn minimal_file() {
        let c = ExperimentConfig::from_toml_str(
            r#"
            seed = 7
            estimators = ["UML", "perfect_csi"]
            [scenario]
            preset = "s2"
            [grid]
            snr_db = [-10, 0]
            passages = [100]
            rf_chains = [[4, 8]]
            architectures = ["fc", "sub_connected"]
            [rank_rule]
            kind = "cumulative"
            "#,
        )
        .unwrap();
        c.validate().unwrap();
        assert_eq!(c.estimators, vec![Estimator::Uml, Estimator::Perfect]);
        assert_eq!(c.grid.architectures[1], Architecture::SubConnected);
        assert_eq!(c.rank_rule, RankRule::Cumulative { threshold: 0.999 });
        assert!(ExperimentConfig::from_toml_str("bogus = 1").is_err());
    }

    #[test]
    fn violations_are_reported() {
        let bad = |f: &dyn Fn(&mut ExperimentConfig)| {
            let mut c = ExperimentConfig::default();
            f(&mut c);
            assert!(matches!(c.validate(), Err(Error::Validation(_))));
        };
        bad(&|c| c.grid.snr_db.clear());
        bad(&|c| c.trials = 0);
        bad(&|c| c.grid.passages = vec![0]);
        bad(&|c| c.grid.rf_chains = vec![[64, 8]]);
        bad(&|c| c.grid.radius_m = Some(vec![-1.0]));
        bad(&|c| c.estimators = vec![Estimator::Js, Estimator::Js]);
        bad(&|c| c.grid.architectures = vec![Architecture::FullDigital]);
        bad(&|c| c.scenario = ScenarioConfig::default());
        bad(&|c| c.pilot_length = Some(2));
    }

    #[test]
    fn full_digital_without_joint_space_is_valid() {
        let mut c = ExperimentConfig::default();
        c.grid.architectures = vec![Architecture::FullDigital];
        c.estimators = vec![Estimator::Uml, Estimator::Ds, Estimator::Perfect];
        c.validate().unwrap();
        let h = c.hybrid(Architecture::FullDigital, [4, 8]);
        assert_eq!((h.n_tx_rf, h.n_rx_rf), (64, 128));
    }

    #[test]
    fn estimator_names() {
        assert_eq!(parse_estimators("uml, JS,ds,perfect_csi").unwrap(), Estimator::ALL.to_vec());
        assert!(parse_estimators("ml").is_err());
    }
}

//! TOML experiment configuration with strict key checking.
//!
//! Every section is optional and falls back to defaults; unknown keys are
//! errors. Parse and semantic problems are reported as [`ValidationIssue`]s
//! carrying the dotted path of the offending field.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::characterization::CharacterizationSetup;
use crate::detector::table::{self, DetectorKind};
use crate::detector::{DetectorParams, GateClock};
use crate::gatechain::GateChainParams;
use crate::polarization::WaveplateSetting;
use crate::spdc::{PairStatistics, SourceParams};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationIssue {
    pub path: String,
    pub message: String,
}

impl ValidationIssue {
    fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        ValidationIssue {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Characterize,
    Ghz4,
    Scaling,
    Gatechain,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Characterize => "characterize",
            Scenario::Ghz4 => "ghz4",
            Scenario::Scaling => "scaling",
            Scenario::Gatechain => "gatechain",
        }
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "characterize" => Ok(Scenario::Characterize),
            "ghz4" => Ok(Scenario::Ghz4),
            "scaling" => Ok(Scenario::Scaling),
            "gatechain" => Ok(Scenario::Gatechain),
            _ => Err(Error::param("scenario", format!("unknown scenario {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SetName {
    Spcm,
    Swg,
    Custom,
}

impl FromStr for SetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spcm" => Ok(SetName::Spcm),
            "swg" => Ok(SetName::Swg),
            "custom" => Ok(SetName::Custom),
            _ => Err(Error::param("set", format!("unknown detector set {s:?}"))),
        }
    }
}

impl SetName {
    pub fn name(self) -> &'static str {
        match self {
            SetName::Spcm => "spcm",
            SetName::Swg => "swg",
            SetName::Custom => "custom",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    #[serde(default = "default_set")]
    pub set: SetName,
    /// Table row (1-based) used for D1..D6 when `set` is a bundled one.
    #[serde(default = "default_rows")]
    pub rows: [usize; 6],
    /// Six detectors for `set = "custom"`.
    #[serde(default)]
    pub custom: Vec<DetectorParams>,
    /// Gate clock of the custom set; the SWG clock when absent.
    #[serde(default)]
    pub custom_clock: Option<GateClock>,
    /// Overrides the afterpulse delay mean of bundled sets.
    #[serde(default)]
    pub ap_decay_gates: Option<f64>,
}

fn default_set() -> SetName {
    SetName::Swg
}

/// D1 = row 1, D2 = row 2, D3 = row 3, D4 = row 5, D5 = row 4, D6 = row 6.
pub fn default_rows() -> [usize; 6] {
    [1, 2, 3, 5, 4, 6]
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            set: default_set(),
            rows: default_rows(),
            custom: Vec::new(),
            custom_clock: None,
            ap_decay_gates: None,
        }
    }
}

impl DetectorConfig {
    /// Parameters for D1..D6 and their common clock.
    pub fn resolve(&self, set: SetName) -> Result<(Vec<DetectorParams>, GateClock)> {
        let kind = match set {
            SetName::Spcm => DetectorKind::Spcm,
            SetName::Swg => DetectorKind::Swg,
            SetName::Custom => {
                if self.custom.len() != 6 {
                    return Err(Error::param("detectors.custom", "needs exactly six detectors"));
                }
                return Ok((self.custom.clone(), self.custom_clock.unwrap_or_else(GateClock::swg)));
            }
        };
        let params = self
            .rows
            .iter()
            .map(|&r| {
                let mut p = table::params(kind, r).ok_or_else(|| Error::param("detectors.rows", format!("no table row {r}")))?;
                if let Some(d) = self.ap_decay_gates {
                    p.ap_decay_gates = d;
                }
                Ok(p)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((params, kind.clock()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ghz4Config {
    #[serde(default = "default_ghz_pulses")]
    pub pulses: u64,
    /// Coupling efficiency of paths 1, 2', 3', 4.
    #[serde(default = "default_coupling")]
    pub coupling: [f64; 4],
    #[serde(default)]
    pub window_gates: u64,
    /// Analyzer waveplates; ± basis when absent.
    #[serde(default)]
    pub analyzers: Option<[WaveplateSetting; 4]>,
    /// Dark counts and afterpulsing on (true) or zeroed (false).
    #[serde(default = "default_true")]
    pub noise: bool,
    /// Per-set coherence, overriding `source.coherence`.
    #[serde(default)]
    pub arm_coherence: BTreeMap<SetName, f64>,
    /// Two sets to compare, e.g. "spcm:swg".
    #[serde(default)]
    pub compare: Option<String>,
}

fn default_ghz_pulses() -> u64 {
    20_000_000
}

fn default_coupling() -> [f64; 4] {
    [0.9; 4]
}

fn default_true() -> bool {
    true
}

impl Default for Ghz4Config {
    fn default() -> Self {
        Ghz4Config {
            pulses: default_ghz_pulses(),
            coupling: default_coupling(),
            window_gates: 0,
            analyzers: None,
            noise: true,
            arm_coherence: BTreeMap::new(),
            compare: None,
        }
    }
}

/// Parses `"a:b"` into two detector sets.
pub fn parse_compare(s: &str) -> Result<(SetName, SetName)> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| Error::param("compare", "expected the form \"spcm:swg\""))?;
    Ok((a.parse()?, b.parse()?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CharacterizeConfig {
    #[serde(default = "default_trigger")]
    pub trigger_freq_hz: f64,
    #[serde(default = "default_mean_photons")]
    pub mean_photons: f64,
    #[serde(default = "default_char_pulses")]
    pub n_pulses: u64,
    #[serde(default)]
    pub dark_run_gates: Option<u64>,
    /// Detector names ("swg", "spcm", "swg-24276", "spcm:3", "custom");
    /// the six of `detectors.set` when empty.
    #[serde(default)]
    pub detectors: Vec<String>,
}

fn default_trigger() -> f64 {
    CharacterizationSetup::default().trigger_freq_hz
}

fn default_mean_photons() -> f64 {
    CharacterizationSetup::default().mean_photons
}

fn default_char_pulses() -> u64 {
    CharacterizationSetup::default().n_pulses
}

impl Default for CharacterizeConfig {
    fn default() -> Self {
        CharacterizeConfig {
            trigger_freq_hz: default_trigger(),
            mean_photons: default_mean_photons(),
            n_pulses: default_char_pulses(),
            dark_run_gates: None,
            detectors: Vec::new(),
        }
    }
}

impl CharacterizeConfig {
    pub fn setup(&self) -> CharacterizationSetup {
        CharacterizationSetup {
            trigger_freq_hz: self.trigger_freq_hz,
            mean_photons: self.mean_photons,
            n_pulses: self.n_pulses,
            dark_run_gates: self.dark_run_gates,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingConfig {
    #[serde(default = "default_f")]
    pub f_hz: f64,
    #[serde(default = "default_scaling_mu")]
    pub mu: Vec<f64>,
    #[serde(default = "default_scaling_eta")]
    pub eta: Vec<f64>,
    /// Pair numbers simulated by Monte Carlo.
    #[serde(default = "default_mc_n")]
    pub mc_n: Vec<u32>,
    /// Analytic rows run up to this pair number.
    #[serde(default = "default_n_max")]
    pub analytic_n_max: u32,
    #[serde(default = "default_ratio_factor")]
    pub ratio_factor: f64,
    /// Expected coincidences that set each MC run length.
    #[serde(default = "default_target")]
    pub target_counts: f64,
    #[serde(default = "default_max_pulses")]
    pub max_pulses: u64,
}

fn default_f() -> f64 {
    GateClock::LASER_HZ
}
fn default_scaling_mu() -> Vec<f64> {
    vec![0.01, 0.05]
}
fn default_scaling_eta() -> Vec<f64> {
    vec![0.2, 0.5]
}
fn default_mc_n() -> Vec<u32> {
    vec![1, 2]
}
fn default_n_max() -> u32 {
    5
}
fn default_ratio_factor() -> f64 {
    1.05
}
fn default_target() -> f64 {
    400.0
}
fn default_max_pulses() -> u64 {
    2_000_000_000
}

impl Default for ScalingConfig {
    fn default() -> Self {
        ScalingConfig {
            f_hz: default_f(),
            mu: default_scaling_mu(),
            eta: default_scaling_eta(),
            mc_n: default_mc_n(),
            analytic_n_max: default_n_max(),
            ratio_factor: default_ratio_factor(),
            target_counts: default_target(),
            max_pulses: default_max_pulses(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateChainConfig {
    #[serde(default = "default_gc_gates")]
    pub n_gates: u64,
    /// One avalanche per this many gates; 0 disables avalanches.
    #[serde(default = "default_gc_every")]
    pub gates_per_avalanche: u64,
    /// Gates of waveform written to the stage CSV.
    #[serde(default = "default_excerpt")]
    pub excerpt_gates: u64,
    #[serde(default)]
    pub chain: GateChainParams,
}

fn default_gc_gates() -> u64 {
    10_000
}
fn default_gc_every() -> u64 {
    100
}
fn default_excerpt() -> u64 {
    200
}

impl Default for GateChainConfig {
    fn default() -> Self {
        GateChainConfig {
            n_gates: default_gc_gates(),
            gates_per_avalanche: default_gc_every(),
            excerpt_gates: default_excerpt(),
            chain: GateChainParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub dir: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub scenario: Option<Scenario>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub source: SourceParams,
    #[serde(default)]
    pub detectors: DetectorConfig,
    #[serde(default)]
    pub ghz4: Ghz4Config,
    #[serde(default)]
    pub characterize: CharacterizeConfig,
    #[serde(default)]
    pub scaling: ScalingConfig,
    #[serde(default)]
    pub gatechain: GateChainConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ExperimentConfig {
    /// Parses TOML text; syntax, type and unknown-key errors become issues.
    pub fn from_toml(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text)
            .map_err(|e| Error::Config(vec![ValidationIssue::new("", e.message().to_string())]))?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let path = if path == "." { String::new() } else { path };
            Error::Config(vec![ValidationIssue::new(path, e.inner().message().to_string())])
        })
    }

    /// Semantic checks for `scenario`; empty when the config is usable.
    pub fn validate(&self, scenario: Scenario) -> Vec<ValidationIssue> {
        let mut issues = Vec::new();
        let mut check = |ok: bool, path: &str, msg: &str| {
            if !ok {
                issues.push(ValidationIssue::new(path, msg));
            }
        };
        if let Some(s) = self.scenario {
            check(s == scenario, "scenario", "does not match the requested scenario");
        }
        check(self.seed.is_some(), "seed", "required (in the file or on the command line)");

        let needs_detectors = matches!(scenario, Scenario::Ghz4 | Scenario::Characterize);
        if needs_detectors {
            let d = &self.detectors;
            for (i, &r) in d.rows.iter().enumerate() {
                check((1..=table::ROWS.len()).contains(&r), &format!("detectors.rows[{i}]"), "table rows are 1..=6");
            }
            if let Some(decay) = d.ap_decay_gates {
                check(decay >= 1.0, "detectors.ap_decay_gates", "must be ≥ 1");
            }
            if d.set == SetName::Custom {
                check(d.custom.len() == 6, "detectors.custom", "needs exactly six detectors");
            }
            let clock = d.custom_clock.unwrap_or_else(GateClock::swg);
            for (i, p) in d.custom.iter().enumerate() {
                if let Err(e) = p.validate(&clock) {
                    issues.push(ValidationIssue::new(format!("detectors.custom[{i}]"), e.to_string()));
                }
            }
        }

        match scenario {
            Scenario::Ghz4 => {
                if let Err(e) = self.source.validate() {
                    issues.push(ValidationIssue::new("source", e.to_string()));
                }
                if self.source.pair_statistics == PairStatistics::Thermal && self.source.mu > 1.0 {
                    issues.push(ValidationIssue::new("source.mu", "implausibly large for thermal statistics"));
                }
                let g = &self.ghz4;
                let mut check = |ok: bool, path: &str, msg: &str| {
                    if !ok {
                        issues.push(ValidationIssue::new(path, msg));
                    }
                };
                check(g.pulses > 0, "ghz4.pulses", "must be positive");
                for (i, c) in g.coupling.iter().enumerate() {
                    check((0.0..=1.0).contains(c), &format!("ghz4.coupling[{i}]"), "must lie in [0, 1]");
                }
                for (k, v) in &g.arm_coherence {
                    check((0.0..=1.0).contains(v), &format!("ghz4.arm_coherence.{}", k.name()), "must lie in [0, 1]");
                }
                if let Some(c) = &g.compare {
                    if let Err(e) = parse_compare(c) {
                        issues.push(ValidationIssue::new("ghz4.compare", e.to_string()));
                    }
                }
            }
            Scenario::Characterize => {
                let c = &self.characterize;
                let clock = match self.detectors.set {
                    SetName::Spcm => GateClock::spcm(),
                    SetName::Swg => GateClock::swg(),
                    SetName::Custom => self.detectors.custom_clock.unwrap_or_else(GateClock::swg),
                };
                if let Err(e) = c.setup().validate(&clock) {
                    issues.push(ValidationIssue::new("characterize", e.to_string()));
                }
                for (i, name) in c.detectors.iter().enumerate() {
                    let known = matches!(name.as_str(), "spcm" | "swg" | "custom") || table::lookup(name).is_some();
                    if !known {
                        issues.push(ValidationIssue::new(
                            format!("characterize.detectors[{i}]"),
                            format!("unknown detector {name:?}"),
                        ));
                    }
                }
            }
            Scenario::Scaling => {
                let s = &self.scaling;
                let mut check = |ok: bool, path: &str, msg: &str| {
                    if !ok {
                        issues.push(ValidationIssue::new(path, msg));
                    }
                };
                check(s.f_hz > 0.0, "scaling.f_hz", "must be positive");
                for (i, m) in s.mu.iter().enumerate() {
                    check((0.0..=1.0).contains(m), &format!("scaling.mu[{i}]"), "must lie in [0, 1]");
                }
                for (i, e) in s.eta.iter().enumerate() {
                    check((0.0..=1.0).contains(e), &format!("scaling.eta[{i}]"), "must lie in [0, 1]");
                }
                for (i, &n) in s.mc_n.iter().enumerate() {
                    check((1..=8).contains(&n), &format!("scaling.mc_n[{i}]"), "must lie in 1..=8");
                }
                check(s.analytic_n_max >= 1, "scaling.analytic_n_max", "must be ≥ 1");
                check(s.ratio_factor > 0.0, "scaling.ratio_factor", "must be positive");
                check(s.target_counts > 0.0, "scaling.target_counts", "must be positive");
                check(s.max_pulses > 0, "scaling.max_pulses", "must be positive");
            }
            Scenario::Gatechain => {
                let g = &self.gatechain;
                if let Err(e) = g.chain.validate() {
                    issues.push(ValidationIssue::new("gatechain.chain", e.to_string()));
                }
                if g.n_gates < 10 {
                    issues.push(ValidationIssue::new("gatechain.n_gates", "must be at least 10"));
                }
                if g.gates_per_avalanche == 1 {
                    issues.push(ValidationIssue::new("gatechain.gates_per_avalanche", "use 0 (none) or ≥ 2"));
                }
            }
        }
        issues
    }

    /// Parses and validates in one step.
    pub fn load(text: &str, scenario: Scenario) -> Result<Self> {
        let cfg = Self::from_toml(text)?;
        let issues = cfg.validate(scenario);
        if issues.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(issues))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn issues(text: &str, s: Scenario) -> Vec<ValidationIssue> {
        match ExperimentConfig::load(text, s) {
            Err(Error::Config(v)) => v,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn empty_config_uses_defaults() {
        let c = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(c.detectors.rows, [1, 2, 3, 5, 4, 6]);
        assert_eq!(c.source.mu, 0.1);
        assert_eq!(c.validate(Scenario::Ghz4)[0].path, "seed");
        let seeded = ExperimentConfig { seed: Some(1), ..c };
        for s in [Scenario::Ghz4, Scenario::Characterize, Scenario::Scaling, Scenario::Gatechain] {
            assert!(seeded.validate(s).is_empty(), "{s:?}");
        }
    }

    #[test]
    fn unknown_keys_report_their_path() {
        let v = issues("seed = 1\n[ghz4]\npulsez = 3\n", Scenario::Ghz4);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].path, "ghz4.pulsez");
        assert!(v[0].message.contains("pulsez"), "{}", v[0].message);
        let v = issues("seed = 1\n[source]\nmu = \"big\"\n", Scenario::Ghz4);
        assert_eq!(v[0].path, "source.mu");
    }

    #[test]
    fn semantic_issues_are_enumerated() {
        let text = "seed = 1\n[ghz4]\ncoupling = [0.9, 1.5, 0.9, -1.0]\ncompare = \"spcm-swg\"\n[detectors]\nrows = [1, 2, 3, 4, 5, 9]\n";
        let paths: Vec<String> = issues(text, Scenario::Ghz4).into_iter().map(|i| i.path).collect();
        assert!(paths.contains(&"ghz4.coupling[1]".to_string()));
        assert!(paths.contains(&"ghz4.coupling[3]".to_string()));
        assert!(paths.contains(&"ghz4.compare".to_string()));
        assert!(paths.contains(&"detectors.rows[5]".to_string()));
    }

    #[test]
    fn scenario_mismatch_flagged() {
        let v = issues("scenario = \"ghz4\"\nseed = 3\n", Scenario::Scaling);
        assert_eq!(v[0].path, "scenario");
    }

    #[test]
    fn bundled_sets_resolve_with_their_clocks() {
        let d = DetectorConfig::default();
        let (p, c) = d.resolve(SetName::Spcm).unwrap();
        assert_eq!(p.len(), 6);
        assert_eq!(c, GateClock::spcm());
        assert_eq!(p[3].pde, table::ROWS[4].spcm.pde);
        let (_, c) = d.resolve(SetName::Swg).unwrap();
        assert_eq!(c, GateClock::swg());
        assert!(d.resolve(SetName::Custom).is_err());
    }

    #[test]
    fn custom_detectors_parse() {
        let mut text = String::from("seed = 1\n[detectors]\nset = \"custom\"\n");
        for i in 1..=6 {
            text.push_str(&format!("[[detectors.custom]]\nlabel = \"d{i}\"\npde = 0.5\ndcr_cps = 10.0\np_ap = 0.0\n"));
        }
        let c = ExperimentConfig::load(&text, Scenario::Ghz4).unwrap();
        let (p, clock) = c.detectors.resolve(SetName::Custom).unwrap();
        assert_eq!(p[5].label, "d6");
        assert_eq!(clock, GateClock::swg());
    }

    #[test]
    fn compare_parsing() {
        assert_eq!(parse_compare("spcm:swg").unwrap(), (SetName::Spcm, SetName::Swg));
        assert!(parse_compare("spcm").is_err());
        assert!(parse_compare("spcm:apd").is_err());
    }
}

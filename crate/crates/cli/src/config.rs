//! Experiment configuration: one JSON document, validated with key paths.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use phagocyte::defense::DefenseParams;
use phagocyte::engine::{AttackParams, BlowupParams, SimParams, WormParams, DEFAULT_HASH_RATE};
use phagocyte::gatekeeper::GatekeeperConfig;
use phagocyte::topology::{OverlayShape, TracePreset, TransitStubParams};
use serde::{Deserialize, Serialize};

pub const ENV_OUTPUT_DIR: &str = "PHAGOCYTE_OUTPUT_DIR";
pub const ENV_SEED: &str = "PHAGOCYTE_SEED";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid `{path}`: {message}")]
    Invalid { path: String, message: String },
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        path: path.into(),
        message: message.into(),
    }
}

/// The six experiments of the evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Immune Phagocytes against initial infection.
    Exp1,
    /// Immune managed hosts against initial infection.
    Exp2,
    /// Network scale (traces 1, 2, 5, 6).
    Exp3,
    /// Share of Phagocytes at a fixed Phagocyte count (traces 3, 4, 5).
    Exp4,
    /// Latency blowup of proxying external hosts.
    Exp5,
    /// External attackers flooding the Phagocytes.
    Exp6,
}

impl Preset {
    pub const ALL: [Preset; 6] = [Preset::Exp1, Preset::Exp2, Preset::Exp3, Preset::Exp4, Preset::Exp5, Preset::Exp6];

    /// Traces the experiment runs on; `None` means the configured trace.
    pub fn traces(self) -> Option<&'static [TracePreset]> {
        use TracePreset::*;
        match self {
            Preset::Exp3 => Some(&[Trace1, Trace2, Trace5, Trace6]),
            Preset::Exp4 => Some(&[Trace3, Trace4, Trace5]),
            _ => None,
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "exp{}", *self as u8 + 1)
    }
}

/// A synthetic trace preset or a trace file.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum TraceRef {
    Preset(TracePreset),
    File(PathBuf),
}

impl TryFrom<String> for TraceRef {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        if s.is_empty() {
            return Err("trace name is empty".into());
        }
        Ok(match TracePreset::from_str(&s) {
            Ok(p) => TraceRef::Preset(p),
            Err(_) if s.starts_with("trace") && !s.contains(['/', '.']) => return Err(format!("unknown trace preset `{s}`")),
            Err(_) => TraceRef::File(PathBuf::from(s)),
        })
    }
}

impl From<TraceRef> for String {
    fn from(t: TraceRef) -> String {
        t.to_string()
    }
}

impl fmt::Display for TraceRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceRef::Preset(p) => write!(f, "{p}"),
            TraceRef::File(path) => write!(f, "{}", path.display()),
        }
    }
}

impl Default for TraceRef {
    fn default() -> Self {
        TraceRef::Preset(TracePreset::Trace1)
    }
}

/// Attackers of the external-attack experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackSettings {
    pub attackers: usize,
    /// One run per frequency, in requests per second per attacker.
    pub frequencies_per_s: Vec<f64>,
    pub budget_hashes_per_s: f64,
    pub duration_s: f64,
    pub deadline_s: f64,
}

impl Default for AttackSettings {
    fn default() -> Self {
        let p = AttackParams::default();
        Self {
            attackers: p.attackers,
            frequencies_per_s: vec![0.5, 2.0, 8.0, 32.0],
            budget_hashes_per_s: DEFAULT_HASH_RATE,
            duration_s: p.duration_s,
            deadline_s: p.deadline_s,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub preset: Option<Preset>,
    /// Trace for single-trace experiments; presets over several traces
    /// choose their own.
    pub trace: Option<TraceRef>,
    pub scale_factor: f64,
    pub underlay: TransitStubParams,
    pub overlay_shape: OverlayShape,
    pub immune_ph_pct: f64,
    pub immune_host_pct: f64,
    pub initial_infect_pct: f64,
    pub worm: WormParams,
    pub defense_enabled: bool,
    pub defense: DefenseParams,
    pub sim: SimParams,
    pub gatekeeper: GatekeeperConfig,
    pub attack: AttackSettings,
    pub blowup: BlowupParams,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            preset: None,
            trace: None,
            scale_factor: 0.02,
            underlay: TransitStubParams::desk(),
            overlay_shape: OverlayShape::default(),
            immune_ph_pct: 95.0,
            immune_host_pct: 10.0,
            initial_infect_pct: 0.001,
            worm: WormParams::default(),
            defense_enabled: true,
            defense: DefenseParams::default(),
            sim: SimParams::default(),
            gatekeeper: AttackParams::default().gatekeeper,
            attack: AttackSettings::default(),
            blowup: BlowupParams::default(),
            seeds: vec![1, 2, 3],
            output_dir: PathBuf::from("results"),
        }
    }
}

/// Reads and validates a config file. Missing keys take their defaults.
pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentConfig, ConfigError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Parse {
        path: match e.path().to_string() {
            p if p == "." => "config".to_string(),
            p => p,
        },
        message: e.inner().to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.scale_factor > 0.0 && self.scale_factor <= 1.0) {
            return Err(invalid("scale_factor", format!("{} is outside (0, 1]", self.scale_factor)));
        }
        for (key, v) in [
            ("immune_ph_pct", self.immune_ph_pct),
            ("immune_host_pct", self.immune_host_pct),
            ("initial_infect_pct", self.initial_infect_pct),
        ] {
            if !(0.0..=100.0).contains(&v) {
                return Err(invalid(key, format!("{v} is outside [0, 100]")));
            }
        }
        if let (Some(p), Some(t)) = (self.preset, &self.trace) {
            if let Some(traces) = p.traces() {
                let names: Vec<String> = traces.iter().map(ToString::to_string).collect();
                return Err(invalid("trace", format!("{p} runs on {} and takes no `trace` (got {t})", names.join(", "))));
            }
        }
        self.underlay.validate().map_err(|e| invalid("underlay", e.to_string()))?;
        for (key, p) in [
            ("overlay_shape.extra_uplink_prob", self.overlay_shape.extra_uplink_prob),
            ("overlay_shape.legacy_fraction", self.overlay_shape.legacy_fraction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid(key, format!("{p} is outside [0, 1]")));
            }
        }
        self.worm.validate().map_err(|e| engine_invalid("worm", e))?;
        self.sim.validate().map_err(|e| engine_invalid("sim", e))?;
        self.defense.validate().map_err(|m| invalid("defense", m))?;
        self.gatekeeper.validate().map_err(|e| invalid("gatekeeper", e.to_string()))?;
        if self.attack.frequencies_per_s.is_empty() {
            return Err(invalid("attack.frequencies_per_s", "needs at least one frequency"));
        }
        for (i, &f) in self.attack.frequencies_per_s.iter().enumerate() {
            if !(f > 0.0 && f.is_finite()) {
                return Err(invalid(format!("attack.frequencies_per_s[{i}]"), format!("{f} is not a positive rate")));
            }
        }
        self.attack_params(1.0, 0).validate().map_err(|e| engine_invalid("attack", e))?;
        if self.seeds.is_empty() {
            return Err(invalid("seeds", "needs at least one seed"));
        }
        Ok(())
    }

    /// Applies the environment overrides for the output directory and seed.
    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(dir) = get(ENV_OUTPUT_DIR).filter(|d| !d.is_empty()) {
            self.output_dir = PathBuf::from(dir);
        }
        if let Some(seed) = get(ENV_SEED).filter(|s| !s.is_empty()) {
            let seed = seed
                .trim()
                .parse()
                .map_err(|_| invalid(ENV_SEED, format!("`{seed}` is not an unsigned integer")))?;
            self.seeds = vec![seed];
        }
        Ok(())
    }

    pub fn attack_params(&self, frequency_per_s: f64, seed: u64) -> AttackParams {
        AttackParams {
            attackers: self.attack.attackers,
            frequency_per_s,
            budget_hashes_per_s: self.attack.budget_hashes_per_s,
            duration_s: self.attack.duration_s,
            deadline_s: self.attack.deadline_s,
            gatekeeper: self.gatekeeper.clone(),
            seed,
        }
    }
}

fn engine_invalid(section: &str, e: phagocyte::engine::EngineError) -> ConfigError {
    match e {
        phagocyte::engine::EngineError::InvalidParameter { name, message } => invalid(format!("{section}.{name}"), message),
        other => invalid(section, other.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = parse_config_str(r#"{"trace": "trace1", "preset": "exp1"}"#).unwrap();
        assert_eq!(cfg.preset, Some(Preset::Exp1));
        assert_eq!(cfg.trace, Some(TraceRef::Preset(TracePreset::Trace1)));
        assert_eq!(cfg.scale_factor, 0.02);
        assert_eq!(cfg.seeds, vec![1, 2, 3]);
    }

    #[test]
    fn out_of_range_percentage_names_its_key() {
        let err = parse_config_str(r#"{"immune_ph_pct": 120}"#).unwrap_err();
        assert!(matches!(&err, ConfigError::Invalid { path, .. } if path == "immune_ph_pct"), "{err}");
        let err = parse_config_str(r#"{"worm": {"infection_success_prob": 2}}"#).unwrap_err();
        assert!(matches!(&err, ConfigError::Invalid { path, .. } if path == "worm.infection_success_prob"), "{err}");
        let err = parse_config_str(r#"{"attack": {"frequencies_per_s": [1, -1]}}"#).unwrap_err();
        assert!(err.to_string().contains("attack.frequencies_per_s[1]"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected_with_their_path() {
        let err = parse_config_str(r#"{"defense": {"theta_x": 0.1}}"#).unwrap_err();
        match err {
            ConfigError::Parse { path, message } => {
                assert_eq!(path, "defense.theta_x");
                assert!(message.contains("theta_x"), "{message}");
            }
            other => panic!("{other}"),
        }
        assert!(parse_config_str(r#"{"bogus": 1}"#).is_err());
        assert!(parse_config_str(r#"{"preset": "exp7"}"#).is_err());
        assert!(parse_config_str(r#"{"trace": "trace9"}"#).is_err());
    }

    #[test]
    fn defaults_round_trip() {
        let text = ExperimentConfig::default().to_json();
        assert_eq!(parse_config_str(&text).unwrap(), ExperimentConfig::default());
        let mut custom = ExperimentConfig {
            preset: Some(Preset::Exp6),
            trace: Some(TraceRef::File("data/crawl.txt".into())),
            ..Default::default()
        };
        custom.attack.frequencies_per_s = vec![0.25, 3.0];
        assert_eq!(parse_config_str(&custom.to_json()).unwrap(), custom);
    }

    #[test]
    fn multi_trace_presets_refuse_a_trace() {
        let err = parse_config_str(r#"{"preset": "exp4", "trace": "trace1"}"#).unwrap_err();
        assert!(matches!(&err, ConfigError::Invalid { path, .. } if path == "trace"), "{err}");
    }

    #[test]
    fn environment_overrides() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_env(|k| match k {
            ENV_OUTPUT_DIR => Some("/tmp/out".into()),
            ENV_SEED => Some("42".into()),
            _ => None,
        })
        .unwrap();
        assert_eq!(cfg.output_dir, PathBuf::from("/tmp/out"));
        assert_eq!(cfg.seeds, vec![42]);
        assert!(cfg.apply_env(|k| (k == ENV_SEED).then(|| "x".to_string())).is_err());
    }
}

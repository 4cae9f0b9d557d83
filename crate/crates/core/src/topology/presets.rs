use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{OverlayShape, TopologyError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceTier {
    Phagocytes,
    Managed,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemovalStep {
    pub tier: TraceTier,
    pub fraction: f64,
}

/// Counts of a synthetic overlay before derivation, plus the random
/// removals that derive it from its parent trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceSpec {
    pub n_phagocytes: usize,
    pub n_managed: usize,
    #[serde(default)]
    pub removal_steps: Vec<RemovalStep>,
    #[serde(default)]
    pub shape: OverlayShape,
}

impl TraceSpec {
    pub fn new(n_phagocytes: usize, n_managed: usize) -> Self {
        Self {
            n_phagocytes,
            n_managed,
            removal_steps: Vec::new(),
            shape: OverlayShape::default(),
        }
    }

    pub fn validate(&self) -> Result<(), TopologyError> {
        if self.n_phagocytes == 0 {
            return Err(TopologyError::EmptyTier(super::Tier::Phagocyte));
        }
        if self.n_managed == 0 {
            return Err(TopologyError::EmptyTier(super::Tier::Managed));
        }
        for step in &self.removal_steps {
            if !(0.0..=1.0).contains(&step.fraction) {
                return Err(TopologyError::InvalidParameter {
                    name: "removal_steps",
                    message: format!("fraction {} is outside [0, 1]", step.fraction),
                });
            }
        }
        for (name, p) in [
            ("shape.extra_uplink_prob", self.shape.extra_uplink_prob),
            ("shape.legacy_fraction", self.shape.legacy_fraction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(TopologyError::InvalidParameter {
                    name,
                    message: format!("{p} is outside [0, 1]"),
                });
            }
        }
        Ok(())
    }

    /// Scales the base counts, keeping removal fractions.
    pub fn scaled(mut self, factor: f64) -> Self {
        self.n_phagocytes = ((self.n_phagocytes as f64 * factor).round() as usize).max(1);
        self.n_managed = ((self.n_managed as f64 * factor).round() as usize).max(1);
        self
    }

    /// Hosts the underlay has to provide (counts before removal).
    pub fn host_demand(&self) -> usize {
        self.n_phagocytes + self.n_managed
    }
}

/// The six crawled-trace shapes. Traces 3 to 6 are derived from the
/// Trace-1 shape by random removal; the fractions below are calibrated for
/// the default [`OverlayShape`] so that the derived ratios land on the
/// published ones.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TracePreset {
    #[serde(rename = "trace1")]
    Trace1,
    #[serde(rename = "trace2")]
    Trace2,
    #[serde(rename = "trace3")]
    Trace3,
    #[serde(rename = "trace4")]
    Trace4,
    #[serde(rename = "trace5")]
    Trace5,
    #[serde(rename = "trace6")]
    Trace6,
}

const TRACE1: (usize, usize) = (158_985, 717_025);
const TRACE2: (usize, usize) = (209_723, 1_026_231);
const TRACE3_PH_REMOVAL: f64 = 0.66;
const TRACE4_MANAGED_REMOVAL: f64 = 1.0 - 342_757.0 / 512_448.0;
const TRACE5_MANAGED_REMOVAL: f64 = 1.0 - 257_080.0 / 342_757.0;
const TRACE6_PH_REMOVAL: f64 = 0.8635;
const TRACE6_MANAGED_REMOVAL: f64 = 0.615;

impl TracePreset {
    pub const ALL: [TracePreset; 6] = [
        TracePreset::Trace1,
        TracePreset::Trace2,
        TracePreset::Trace3,
        TracePreset::Trace4,
        TracePreset::Trace5,
        TracePreset::Trace6,
    ];

    pub fn number(self) -> u8 {
        self as u8 + 1
    }

    /// Published `(Phagocytes, managed hosts)` of the trace.
    pub fn published_counts(self) -> (usize, usize) {
        match self {
            TracePreset::Trace1 => TRACE1,
            TracePreset::Trace2 => TRACE2,
            TracePreset::Trace3 => (51_400, 512_448),
            TracePreset::Trace4 => (51_400, 342_757),
            TracePreset::Trace5 => (51_400, 257_080),
            TracePreset::Trace6 => (14_705, 73_539),
        }
    }

    /// Published Phagocytes-to-managed and Phagocytes-to-all ratios, in percent.
    pub fn published_ratios(self) -> (f64, f64) {
        match self {
            TracePreset::Trace1 => (22.17, 18.15),
            TracePreset::Trace2 => (20.44, 16.97),
            TracePreset::Trace3 => (10.03, 9.12),
            TracePreset::Trace4 => (15.00, 13.04),
            TracePreset::Trace5 => (19.99, 16.66),
            TracePreset::Trace6 => (20.00, 16.66),
        }
    }

    /// Full-scale synthesis recipe.
    pub fn spec(self) -> TraceSpec {
        use TraceTier::{Managed, Phagocytes};
        let step = |tier, fraction| RemovalStep { tier, fraction };
        let (base, steps) = match self {
            TracePreset::Trace1 => (TRACE1, vec![]),
            TracePreset::Trace2 => (TRACE2, vec![]),
            TracePreset::Trace3 => (TRACE1, vec![step(Phagocytes, TRACE3_PH_REMOVAL)]),
            TracePreset::Trace4 => (
                TRACE1,
                vec![step(Phagocytes, TRACE3_PH_REMOVAL), step(Managed, TRACE4_MANAGED_REMOVAL)],
            ),
            TracePreset::Trace5 => (
                TRACE1,
                vec![
                    step(Phagocytes, TRACE3_PH_REMOVAL),
                    step(Managed, TRACE4_MANAGED_REMOVAL),
                    step(Managed, TRACE5_MANAGED_REMOVAL),
                ],
            ),
            TracePreset::Trace6 => (
                TRACE1,
                vec![step(Phagocytes, TRACE6_PH_REMOVAL), step(Managed, TRACE6_MANAGED_REMOVAL)],
            ),
        };
        TraceSpec {
            n_phagocytes: base.0,
            n_managed: base.1,
            removal_steps: steps,
            shape: OverlayShape::default(),
        }
    }
}

impl fmt::Display for TracePreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "trace{}", self.number())
    }
}

impl FromStr for TracePreset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digit = s
            .strip_prefix("trace")
            .or_else(|| s.strip_prefix("trace-"))
            .and_then(|d| d.trim_start_matches('-').parse::<u8>().ok());
        match digit {
            Some(d @ 1..=6) => Ok(Self::ALL[d as usize - 1]),
            _ => Err(format!("unknown trace preset `{s}` (expected trace1..trace6)")),
        }
    }
}

//! Expansion of a config into the run matrix.

use std::fmt;

use phagocyte::topology::TracePreset;
use serde::Serialize;

use crate::config::{ExperimentConfig, Preset, TraceRef};

/// Initial infection shares swept by the internal-defense experiments.
pub const INFECTION_PCTS: [f64; 8] = [0.001, 0.01, 0.1, 1.0, 5.0, 10.0, 20.0, 50.0];
/// Immune-Phagocyte shares of the first experiment.
pub const IMMUNE_PH_PCTS: [f64; 7] = [100.0, 95.0, 90.0, 80.0, 70.0, 60.0, 50.0];
/// Immune managed-host shares of the second experiment.
pub const IMMUNE_HOST_PCTS: [f64; 4] = [0.0, 10.0, 20.0, 30.0];

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CellKind {
    Outbreak {
        immune_ph_pct: f64,
        immune_host_pct: f64,
        initial_infect_pct: f64,
    },
    Blowup,
    Attack {
        frequency_per_s: f64,
    },
}

/// One run: a world (trace and seed) and what to do in it.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Cell {
    pub id: String,
    pub trace: TraceRef,
    pub seed: u64,
    #[serde(flatten)]
    pub kind: CellKind,
}

impl Cell {
    /// External hosts the world needs for this cell.
    pub fn externals(&self, cfg: &ExperimentConfig) -> usize {
        match self.kind {
            CellKind::Outbreak { .. } => cfg.sim.external_hosts,
            CellKind::Blowup => cfg.blowup.externals,
            CellKind::Attack { .. } => cfg.attack.attackers,
        }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<40} trace={} seed={}", self.id, self.trace, self.seed)?;
        match self.kind {
            CellKind::Outbreak {
                immune_ph_pct,
                immune_host_pct,
                initial_infect_pct,
            } => write!(f, " immune_ph={immune_ph_pct} immune_host={immune_host_pct} infect={initial_infect_pct}"),
            CellKind::Blowup => write!(f, " blowup"),
            CellKind::Attack { frequency_per_s } => write!(f, " attack frequency={frequency_per_s}"),
        }
    }
}

/// Every cell of the config, in a stable order.
pub fn expand(cfg: &ExperimentConfig) -> Vec<Cell> {
    let configured = cfg.trace.clone().unwrap_or_default();
    let traces: Vec<TraceRef> = match cfg.preset.and_then(Preset::traces) {
        Some(ts) => ts.iter().map(|&t| TraceRef::Preset(t)).collect(),
        None => vec![configured],
    };
    let outbreak = |ph: f64, host: f64, inf: f64| CellKind::Outbreak {
        immune_ph_pct: ph,
        immune_host_pct: host,
        initial_infect_pct: inf,
    };
    let kinds: Vec<CellKind> = match cfg.preset {
        None => vec![outbreak(cfg.immune_ph_pct, cfg.immune_host_pct, cfg.initial_infect_pct)],
        Some(Preset::Exp1) => grid(&IMMUNE_PH_PCTS, &[10.0], &INFECTION_PCTS, outbreak),
        Some(Preset::Exp2) => grid(&[95.0], &IMMUNE_HOST_PCTS, &INFECTION_PCTS, outbreak),
        Some(Preset::Exp3 | Preset::Exp4) => grid(&[95.0], &[10.0], &INFECTION_PCTS, outbreak),
        Some(Preset::Exp5) => vec![CellKind::Blowup],
        Some(Preset::Exp6) => cfg
            .attack
            .frequencies_per_s
            .iter()
            .map(|&f| CellKind::Attack { frequency_per_s: f })
            .collect(),
    };
    let prefix = cfg.preset.map_or_else(|| "run".to_string(), |p| p.to_string());
    let mut cells = Vec::new();
    for trace in &traces {
        for kind in &kinds {
            for &seed in &cfg.seeds {
                let id = format!("{prefix}-{}-{}-s{seed}", trace_tag(trace), kind_tag(kind));
                cells.push(Cell {
                    id,
                    trace: trace.clone(),
                    seed,
                    kind: *kind,
                });
            }
        }
    }
    cells
}

fn grid<F: Fn(f64, f64, f64) -> CellKind>(ph: &[f64], host: &[f64], inf: &[f64], f: F) -> Vec<CellKind> {
    let mut out = Vec::new();
    for &p in ph {
        for &h in host {
            for &i in inf {
                out.push(f(p, h, i));
            }
        }
    }
    out
}

fn trace_tag(t: &TraceRef) -> String {
    match t {
        TraceRef::Preset(p) => p.to_string(),
        TraceRef::File(path) => path
            .file_stem()
            .map_or_else(|| "file".to_string(), |s| s.to_string_lossy().replace(|c: char| !c.is_ascii_alphanumeric(), "_")),
    }
}

fn kind_tag(k: &CellKind) -> String {
    match *k {
        CellKind::Outbreak {
            immune_ph_pct,
            immune_host_pct,
            initial_infect_pct,
        } => format!("ph{immune_ph_pct}-h{immune_host_pct}-i{initial_infect_pct}"),
        CellKind::Blowup => "blowup".into(),
        CellKind::Attack { frequency_per_s } => format!("f{frequency_per_s}"),
    }
}

/// The distinct values of every axis of a run matrix, one per line.
pub fn describe_axes(cells: &[Cell]) -> String {
    fn push<T: PartialEq + Clone>(v: &mut Vec<T>, x: &T) {
        if !v.contains(x) {
            v.push(x.clone());
        }
    }
    let (mut traces, mut seeds) = (Vec::new(), Vec::new());
    let (mut ph, mut host, mut inf, mut freq) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut blowup = false;
    for c in cells {
        push(&mut traces, &c.trace.to_string());
        push(&mut seeds, &c.seed);
        match c.kind {
            CellKind::Outbreak {
                immune_ph_pct,
                immune_host_pct,
                initial_infect_pct,
            } => {
                push(&mut ph, &immune_ph_pct);
                push(&mut host, &immune_host_pct);
                push(&mut inf, &initial_infect_pct);
            }
            CellKind::Blowup => blowup = true,
            CellKind::Attack { frequency_per_s } => push(&mut freq, &frequency_per_s),
        }
    }
    let list = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
    let mut out = format!("traces={}\n", traces.join(","));
    if !ph.is_empty() {
        out += &format!("immune_ph_pct={}\nimmune_host_pct={}\ninitial_infect_pct={}\n", list(&ph), list(&host), list(&inf));
    }
    if blowup {
        out += "blowup\n";
    }
    if !freq.is_empty() {
        out += &format!("frequency_per_s={}\n", list(&freq));
    }
    out += &format!("seeds={}\ncells={}\n", seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(","), cells.len());
    out
}

/// Traces a run matrix uses, in first-seen order.
pub fn traces_of(cells: &[Cell]) -> Vec<TraceRef> {
    let mut out: Vec<TraceRef> = Vec::new();
    for c in cells {
        if !out.contains(&c.trace) {
            out.push(c.trace.clone());
        }
    }
    out
}

pub fn preset_of(t: &TraceRef) -> Option<TracePreset> {
    match t {
        TraceRef::Preset(p) => Some(*p),
        TraceRef::File(_) => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(preset: Option<Preset>) -> ExperimentConfig {
        ExperimentConfig {
            preset,
            ..Default::default()
        }
    }

    #[test]
    fn grid_sizes() {
        let seeds = 3;
        for (p, n) in [
            (Preset::Exp1, 7 * 8),
            (Preset::Exp2, 4 * 8),
            (Preset::Exp3, 4 * 8),
            (Preset::Exp4, 3 * 8),
            (Preset::Exp5, 1),
            (Preset::Exp6, 4),
        ] {
            assert_eq!(expand(&cfg(Some(p))).len(), n * seeds, "{p}");
        }
        assert_eq!(expand(&cfg(None)).len(), seeds);
    }

    #[test]
    fn ids_are_unique() {
        for p in Preset::ALL {
            let cells = expand(&cfg(Some(p)));
            let mut ids: Vec<&str> = cells.iter().map(|c| c.id.as_str()).collect();
            ids.sort_unstable();
            ids.dedup();
            assert_eq!(ids.len(), cells.len(), "{p}");
        }
    }

    #[test]
    fn file_traces_get_a_tag() {
        let c = ExperimentConfig {
            trace: Some(TraceRef::File("/data/crawl 2.txt".into())),
            ..cfg(Some(Preset::Exp5))
        };
        assert_eq!(expand(&c)[0].id, "exp5-crawl_2-blowup-s1");
    }
}

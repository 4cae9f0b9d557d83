//! Runs a matrix of cells and writes their artifacts.

use std::collections::HashMap;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use phagocyte::engine::{
    measure_blowups, run_experiment, run_external_attack, AttackOutcome, BlowupSummary, MetricSeries, RunConfig, Summary, World,
};
use phagocyte::topology::{load_trace, synthesize_underlay, TraceFormat, TraceTier};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, TraceRef};
use crate::figures;
use crate::plan::{expand, Cell, CellKind};

/// What one cell produced.
#[derive(Debug, Serialize)]
pub struct CellResult {
    #[serde(flatten)]
    pub cell: Cell,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary: Option<Summary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip)]
    pub blowups: Vec<f64>,
    #[serde(skip)]
    pub differences_ms: Vec<f64>,
}

impl CellResult {
    pub fn peak_pct(&self) -> Option<f64> {
        self.summary.as_ref().map(|s| s.peak_infection_pct)
    }

    pub fn attack(&self) -> Option<AttackOutcome> {
        self.summary.as_ref().and_then(|s| s.attacks).map(|a| a.outcomes)
    }
}

#[derive(Debug)]
pub struct Report {
    pub results: Vec<CellResult>,
    pub output_dir: PathBuf,
}

impl Report {
    pub fn failures(&self) -> usize {
        self.results.iter().filter(|r| r.error.is_some()).count()
    }
}

#[derive(Debug, Serialize)]
struct SummaryFile<'a> {
    cells: &'a [CellResult],
    #[serde(skip_serializing_if = "Option::is_none")]
    blowup: Option<BlowupSummary>,
}

/// Builds the world a cell runs in.
pub fn build_world(cfg: &ExperimentConfig, trace: &TraceRef, seed: u64, externals: usize) -> Result<World, String> {
    match trace {
        TraceRef::Preset(p) => {
            let mut spec = p.spec().scaled(cfg.scale_factor);
            spec.shape = cfg.overlay_shape.clone();
            World::synthesize(&spec, &cfg.underlay, externals, seed).map_err(|e| e.to_string())
        }
        TraceRef::File(path) => {
            let mut g = load_trace(path, TraceFormat::Text).map_err(|e| format!("{}: {e}", path.display()))?;
            if cfg.scale_factor < 1.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                g = g.remove_fraction(TraceTier::Phagocytes, 1.0 - cfg.scale_factor, &mut rng);
                g = g.remove_fraction(TraceTier::Managed, 1.0 - cfg.scale_factor, &mut rng);
            }
            let hosts = g.nodes().map(|n| g.host(n) as usize + 1).max().unwrap_or(0);
            let underlay = synthesize_underlay(&cfg.underlay, hosts + externals, seed).map_err(|e| e.to_string())?;
            World::new(underlay, g, hosts as _).map_err(|e| e.to_string())
        }
    }
}

fn execute(cfg: &ExperimentConfig, cell: &Cell, world: &World, runs_dir: &Path) -> Result<(Summary, MetricSeries), String> {
    let series = match cell.kind {
        CellKind::Outbreak {
            immune_ph_pct,
            immune_host_pct,
            initial_infect_pct,
        } => {
            let rc = RunConfig {
                immune_ph_pct,
                immune_host_pct,
                initial_infect_pct,
                worm: cfg.worm.clone(),
                defense_enabled: cfg.defense_enabled,
                defense: cfg.defense.clone(),
                sim: cfg.sim.clone(),
                seed: cell.seed,
            };
            let m = run_experiment(world, &rc).map_err(|e| e.to_string())?;
            let file = fs::File::create(runs_dir.join(format!("{}.csv", cell.id))).map_err(|e| e.to_string())?;
            m.write_csv(BufWriter::new(file)).map_err(|e| e.to_string())?;
            m
        }
        CellKind::Blowup => measure_blowups(world, &cfg.blowup).map_err(|e| e.to_string())?,
        CellKind::Attack { frequency_per_s } => {
            let outcome = run_external_attack(world, &cfg.attack_params(frequency_per_s, cell.seed)).map_err(|e| e.to_string())?;
            MetricSeries {
                total_nodes: world.overlay.len(),
                external_attack_outcomes: outcome,
                ..Default::default()
            }
        }
    };
    let summary = series.summary();
    write_json(&runs_dir.join(format!("{}.json", cell.id)), &summary).map_err(|e| e.to_string())?;
    Ok((summary, series))
}

/// Runs every cell of `cfg` and writes the artifacts. A failing cell is
/// recorded and the others still run.
pub fn run(cfg: &ExperimentConfig) -> io::Result<Report> {
    let cells = expand(cfg);
    let out = cfg.output_dir.clone();
    let runs_dir = out.join("runs");
    fs::create_dir_all(&runs_dir)?;
    fs::write(out.join("config.json"), cfg.to_json() + "\n")?;

    let mut keys: Vec<(TraceRef, u64, usize)> = Vec::new();
    for c in &cells {
        let k = (c.trace.clone(), c.seed, c.externals(cfg));
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    let worlds: HashMap<(TraceRef, u64, usize), Result<World, String>> = keys
        .into_par_iter()
        .map(|k| {
            let w = build_world(cfg, &k.0, k.1, k.2);
            (k, w)
        })
        .collect();

    let done = AtomicUsize::new(0);
    let total = cells.len();
    let results: Vec<CellResult> = cells
        .into_par_iter()
        .map(|cell| {
            let key = (cell.trace.clone(), cell.seed, cell.externals(cfg));
            let outcome = match &worlds[&key] {
                Ok(w) => execute(cfg, &cell, w, &runs_dir),
                Err(e) => Err(format!("building {}: {e}", cell.trace)),
            };
            let n = done.fetch_add(1, Ordering::Relaxed) + 1;
            match &outcome {
                Ok(_) => eprintln!("[{n}/{total}] {}", cell.id),
                Err(e) => eprintln!("[{n}/{total}] {} FAILED: {e}", cell.id),
            }
            match outcome {
                Ok((summary, series)) => CellResult {
                    cell,
                    summary: Some(summary),
                    error: None,
                    blowups: series.latency_blowups,
                    differences_ms: series.latency_differences_ms,
                },
                Err(e) => CellResult {
                    cell,
                    summary: None,
                    error: Some(e),
                    blowups: Vec::new(),
                    differences_ms: Vec::new(),
                },
            }
        })
        .collect();

    let blowup = figures::write_all(cfg.preset, &results, &out)?;
    write_json(&out.join("summary.json"), &SummaryFile { cells: &results, blowup })?;
    Ok(Report { results, output_dir: out })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()
}

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

/// One row of the per-run time series.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub time_ms: f64,
    /// Infected and still connected.
    pub infected: usize,
    /// Infected and cut off.
    pub isolated: usize,
    pub patched: usize,
    /// Alerts sent so far.
    pub alerts: u64,
}

impl Sample {
    /// Infected, whether cut off or not.
    pub fn compromised(&self) -> usize {
        self.infected + self.isolated
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub success: u64,
    pub rejected: u64,
    pub timed_out: u64,
}

impl AttackOutcome {
    pub fn total(&self) -> u64 {
        self.success + self.rejected + self.timed_out
    }

    pub fn success_pct(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => 100.0 * self.success as f64 / t as f64,
        }
    }

    pub fn merge(&mut self, other: &AttackOutcome) {
        self.success += other.success;
        self.rejected += other.rejected;
        self.timed_out += other.timed_out;
    }
}

/// Everything one run measures.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    /// Overlay nodes; external hosts are not counted.
    pub total_nodes: usize,
    /// Nodes that were vulnerable or infected at the start.
    pub initial_vulnerable: usize,
    pub initial_infected: usize,
    pub peak_infected: usize,
    pub peak_infection_pct: f64,
    pub infected_over_time: Vec<Sample>,
    pub latency_blowups: Vec<f64>,
    /// Proxied minus direct latency, per measured pair.
    pub latency_differences_ms: Vec<f64>,
    pub external_attack_outcomes: AttackOutcome,
    pub events: u64,
    pub detections: u64,
    pub leaks_blocked: u64,
    pub end_time_ms: f64,
}

impl MetricSeries {
    /// Appends a sample and keeps the peak in step with the series.
    pub fn push(&mut self, s: Sample) {
        if s.compromised() > self.peak_infected || self.infected_over_time.is_empty() {
            self.peak_infected = self.peak_infected.max(s.compromised());
            self.peak_infection_pct = pct(self.peak_infected, self.total_nodes);
        }
        self.infected_over_time.push(s);
    }

    /// Peak as a share of the hosts that could be infected at all.
    pub fn peak_pct_of_vulnerable(&self) -> f64 {
        pct(self.peak_infected, self.initial_vulnerable)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "time_ms,infected,isolated,patched,alerts")?;
        for s in &self.infected_over_time {
            writeln!(w, "{:.3},{},{},{},{}", s.time_ms, s.infected, s.isolated, s.patched, s.alerts)?;
        }
        Ok(())
    }

    pub fn summary(&self) -> Summary {
        Summary {
            peak_infection_pct: self.peak_infection_pct,
            peak_pct_of_vulnerable: self.peak_pct_of_vulnerable(),
            peak_infected: self.peak_infected,
            total_nodes: self.total_nodes,
            initial_vulnerable: self.initial_vulnerable,
            initial_infected: self.initial_infected,
            end_time_ms: self.end_time_ms,
            events: self.events,
            detections: self.detections,
            alerts: self.infected_over_time.last().map_or(0, |s| s.alerts),
            leaks_blocked: self.leaks_blocked,
            blowup: BlowupSummary::of(&self.latency_blowups, &self.latency_differences_ms),
            attacks: (self.external_attack_outcomes.total() > 0).then(|| AttackSummary {
                outcomes: self.external_attack_outcomes,
                success_pct: self.external_attack_outcomes.success_pct(),
            }),
        }
    }
}

fn pct(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        100.0 * part as f64 / whole as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub peak_infection_pct: f64,
    pub peak_pct_of_vulnerable: f64,
    pub peak_infected: usize,
    pub total_nodes: usize,
    pub initial_vulnerable: usize,
    pub initial_infected: usize,
    pub end_time_ms: f64,
    pub events: u64,
    pub detections: u64,
    pub alerts: u64,
    pub leaks_blocked: u64,
    pub blowup: Option<BlowupSummary>,
    pub attacks: Option<AttackSummary>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackSummary {
    pub outcomes: AttackOutcome,
    pub success_pct: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlowupSummary {
    pub pairs: usize,
    pub min: f64,
    pub median: f64,
    pub max: f64,
    /// Share of pairs with a blowup below 2.
    pub below_2: f64,
    /// Share of pairs with a blowup below 2.5.
    pub below_2_5: f64,
    pub median_difference_ms: f64,
}

impl BlowupSummary {
    pub fn of(blowups: &[f64], differences_ms: &[f64]) -> Option<Self> {
        if blowups.is_empty() {
            return None;
        }
        let sorted = sorted_copy(blowups);
        Some(Self {
            pairs: sorted.len(),
            min: sorted[0],
            median: quantile_sorted(&sorted, 0.5),
            max: sorted[sorted.len() - 1],
            below_2: fraction_below(&sorted, 2.0),
            below_2_5: fraction_below(&sorted, 2.5),
            median_difference_ms: if differences_ms.is_empty() {
                f64::NAN
            } else {
                quantile_sorted(&sorted_copy(differences_ms), 0.5)
            },
        })
    }
}

fn sorted_copy(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Share of `sorted` strictly below `x`.
pub fn fraction_below(sorted: &[f64], x: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    sorted.partition_point(|&v| v < x) as f64 / sorted.len() as f64
}

/// Nearest-rank quantile of sorted data, `q` in `[0, 1]`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let rank = (q.clamp(0.0, 1.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Empirical CDF reduced to at most `points` evenly spaced ranks, as
/// `(value, cumulative share)`.
pub fn cdf_points(values: &[f64], points: usize) -> Vec<(f64, f64)> {
    let sorted = sorted_copy(values);
    let n = sorted.len();
    if n == 0 || points == 0 {
        return Vec::new();
    }
    let step = (n as f64 / points as f64).max(1.0);
    let mut out = Vec::new();
    let mut next = step;
    for (i, &v) in sorted.iter().enumerate() {
        let rank = (i + 1) as f64;
        if rank + 1e-9 >= next || i + 1 == n {
            out.push((v, rank / n as f64));
            next += step;
        }
    }
    out
}

//! Plot data: whitespace-separated columns with `#` headers, one file per
//! figure, ready for gnuplot.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use phagocyte::engine::{cdf_points, fraction_below, AttackOutcome, BlowupSummary};

use crate::config::Preset;
use crate::plan::CellKind;
use crate::run::CellResult;

/// Points kept of each CDF.
pub const CDF_POINTS: usize = 1000;

/// Writes the figure files of `preset` and returns the pooled blowup
/// statistics when the experiment measured any.
pub fn write_all(preset: Option<Preset>, results: &[CellResult], out: &Path) -> io::Result<Option<BlowupSummary>> {
    match preset {
        None => Ok(None),
        Some(Preset::Exp1) => write(out, "fig3.dat", &outbreak_table("peak infection % by immune Phagocyte %", results, |k| {
            series(k, |ph, _| format!("immune_ph_{ph}"))
        }))
        .map(|_| None),
        Some(Preset::Exp2) => write(out, "fig4.dat", &outbreak_table("peak infection % by immune managed host %", results, |k| {
            series(k, |_, h| format!("immune_host_{h}"))
        }))
        .map(|_| None),
        Some(Preset::Exp3) => write(out, "fig5.dat", &trace_table("peak infection % by trace", results)).map(|_| None),
        Some(Preset::Exp4) => write(out, "fig6.dat", &trace_table("peak infection % by trace", results)).map(|_| None),
        Some(Preset::Exp5) => {
            let blowups: Vec<f64> = results.iter().flat_map(|r| r.blowups.iter().copied()).collect();
            let diffs: Vec<f64> = results.iter().flat_map(|r| r.differences_ms.iter().copied()).collect();
            let Some(summary) = BlowupSummary::of(&blowups, &diffs) else {
                return Ok(None);
            };
            write(out, "fig7.dat", &cdf_table("latency blowup factor", &blowups))?;
            let mut markers = String::from("# factor share_below\n");
            let mut sorted = blowups.clone();
            sorted.sort_by(f64::total_cmp);
            for x in [2.0, 2.5] {
                writeln!(markers, "{x} {}", fraction_below(&sorted, x)).unwrap();
            }
            write(out, "fig7_markers.dat", &markers)?;
            write(out, "fig8.dat", &cdf_table("latency difference ms", &diffs))?;
            Ok(Some(summary))
        }
        Some(Preset::Exp6) => write(out, "fig9.dat", &attack_table(results)).map(|_| None),
    }
}

fn write(out: &Path, name: &str, text: &str) -> io::Result<()> {
    fs::write(out.join(name), text)
}

fn series(k: &CellKind, label: impl Fn(f64, f64) -> String) -> Option<String> {
    match *k {
        CellKind::Outbreak {
            immune_ph_pct,
            immune_host_pct,
            ..
        } => Some(label(immune_ph_pct, immune_host_pct)),
        _ => None,
    }
}

fn trace_table(title: &str, results: &[CellResult]) -> String {
    let labelled: Vec<(String, &CellResult)> = results.iter().map(|r| (r.cell.trace.to_string(), r)).collect();
    table(title, &labelled)
}

fn outbreak_table(title: &str, results: &[CellResult], key: impl Fn(&CellKind) -> Option<String>) -> String {
    let labelled: Vec<(String, &CellResult)> = results.iter().filter_map(|r| key(&r.cell.kind).map(|k| (k, r))).collect();
    table(title, &labelled)
}

/// Rows are initial infection shares, columns the seed-mean peak of each
/// series. Missing cells are written as NaN.
fn table(title: &str, labelled: &[(String, &CellResult)]) -> String {
    let mut labels: Vec<&str> = Vec::new();
    let mut xs: Vec<f64> = Vec::new();
    for (label, r) in labelled {
        if !labels.contains(&label.as_str()) {
            labels.push(label);
        }
        if let CellKind::Outbreak { initial_infect_pct, .. } = r.cell.kind {
            if !xs.contains(&initial_infect_pct) {
                xs.push(initial_infect_pct);
            }
        }
    }
    let mut text = format!("# {title}\n# initial_infect_pct {}\n", labels.join(" "));
    for &x in &xs {
        text += &x.to_string();
        for l in &labels {
            let peaks: Vec<f64> = labelled
                .iter()
                .filter(|(label, r)| label == l && matches!(r.cell.kind, CellKind::Outbreak { initial_infect_pct, .. } if initial_infect_pct == x))
                .filter_map(|(_, r)| r.peak_pct())
                .collect();
            write!(text, " {}", mean(&peaks)).unwrap();
        }
        text.push('\n');
    }
    text
}

fn cdf_table(what: &str, values: &[f64]) -> String {
    let mut text = format!("# {what} cumulative_share\n");
    for (v, share) in cdf_points(values, CDF_POINTS) {
        writeln!(text, "{v} {share}").unwrap();
    }
    text
}

fn attack_table(results: &[CellResult]) -> String {
    let mut freqs: Vec<f64> = Vec::new();
    for r in results {
        if let CellKind::Attack { frequency_per_s } = r.cell.kind {
            if !freqs.contains(&frequency_per_s) {
                freqs.push(frequency_per_s);
            }
        }
    }
    let mut text = String::from("# frequency_per_s success_pct rejected_pct timed_out_pct\n");
    for f in freqs {
        let outcomes: Vec<AttackOutcome> = results
            .iter()
            .filter(|r| matches!(r.cell.kind, CellKind::Attack { frequency_per_s } if frequency_per_s == f))
            .filter_map(CellResult::attack)
            .collect();
        let share = |part: fn(&AttackOutcome) -> u64| {
            mean(&outcomes.iter().filter(|o| o.total() > 0).map(|o| 100.0 * part(o) as f64 / o.total() as f64).collect::<Vec<_>>())
        };
        writeln!(text, "{f} {} {} {}", share(|o| o.success), share(|o| o.rejected), share(|o| o.timed_out)).unwrap();
    }
    text
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::TraceRef;
    use crate::plan::Cell;
    use phagocyte::engine::MetricSeries;

    fn outbreak(trace: &str, seed: u64, inf: f64, peak: Option<usize>) -> CellResult {
        let m = MetricSeries {
            total_nodes: 100,
            peak_infected: peak.unwrap_or(0),
            peak_infection_pct: peak.unwrap_or(0) as f64,
            ..Default::default()
        };
        CellResult {
            cell: Cell {
                id: format!("{trace}-{seed}-{inf}"),
                trace: TraceRef::try_from(trace.to_string()).unwrap(),
                seed,
                kind: CellKind::Outbreak {
                    immune_ph_pct: 95.0,
                    immune_host_pct: 10.0,
                    initial_infect_pct: inf,
                },
            },
            summary: peak.map(|_| m.summary()),
            error: peak.is_none().then(|| "boom".to_string()),
            blowups: Vec::new(),
            differences_ms: Vec::new(),
        }
    }

    #[test]
    fn trace_table_averages_seeds() {
        let rs = vec![
            outbreak("trace3", 1, 1.0, Some(4)),
            outbreak("trace3", 2, 1.0, Some(6)),
            outbreak("trace4", 1, 1.0, Some(3)),
            outbreak("trace4", 2, 1.0, None),
            outbreak("trace3", 1, 5.0, None),
        ];
        let t = trace_table("t", &rs);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[1], "# initial_infect_pct trace3 trace4");
        assert_eq!(lines[2], "1 5 3");
        assert_eq!(lines[3], "5 NaN NaN");
    }

    #[test]
    fn attack_rows_are_percentages() {
        let mut r = outbreak("trace1", 1, 0.0, Some(0));
        r.cell.kind = CellKind::Attack { frequency_per_s: 2.0 };
        let m = MetricSeries {
            external_attack_outcomes: AttackOutcome {
                success: 1,
                rejected: 1,
                timed_out: 2,
            },
            ..Default::default()
        };
        r.summary = Some(m.summary());
        assert_eq!(attack_table(&[r]).lines().nth(1), Some("2 25 25 50"));
    }
}

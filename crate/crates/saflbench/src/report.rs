//! Artifact emission: metrics CSV, run summary JSON, and comparison tables.
//!
//! The CSV is the canonical record of a run: one data row per aggregation,
//! reals printed with 9 significant digits, participants `|`-joined. Rendering
//! is deterministic down to the byte, which is what makes "same config, same
//! seed, same file" a testable promise.

use crate::error::{Error, Result};
use crate::metrics::{summarize, ConvergenceReport, MetricsLog, OscillationReport, RoundRecord, RunTotals};
use std::fmt::Write as _;
use std::path::Path;

pub const CSV_HEADER: &str = "round,sim_time,accuracy,loss,tau,participants,bytes_up,bytes_down";

/// 9 significant digits, scientific notation.
fn real(x: f64) -> String {
    format!("{x:.8e}")
}

pub fn render_csv(log: &MetricsLog) -> String {
    let mut out = String::with_capacity(64 * (log.records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in &log.records {
        let participants = r
            .participants
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join("|");
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.round,
            real(r.sim_time),
            real(r.accuracy),
            real(r.loss),
            r.tau_total,
            participants,
            r.bytes_up,
            r.bytes_down
        )
        .expect("writing to a String cannot fail");
    }
    out
}

pub fn write_csv(log: &MetricsLog, path: &Path) -> Result<()> {
    std::fs::write(path, render_csv(log))?;
    Ok(())
}

/// Parse a metrics CSV back into records. The digest and parameter count are
/// not part of the CSV, so they come back empty/zero.
pub fn parse_csv(text: &str) -> Result<MetricsLog> {
    let malformed = |line: usize, message: &str| Error::MalformedMetrics {
        line,
        message: message.to_string(),
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == CSV_HEADER => {}
        Some((_, other)) => {
            return Err(malformed(1, &format!("expected header `{CSV_HEADER}`, got `{other}`")))
        }
        None => return Err(malformed(1, "empty file")),
    }
    let mut records = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(malformed(lineno, &format!("expected 8 fields, got {}", fields.len())));
        }
        let uint = |s: &str, what: &str| -> Result<u64> {
            s.parse::<u64>()
                .map_err(|_| malformed(lineno, &format!("bad {what} `{s}`")))
        };
        let float = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| malformed(lineno, &format!("bad {what} `{s}`")))
        };
        let participants = if fields[5].is_empty() {
            Vec::new()
        } else {
            fields[5]
                .split('|')
                .map(|s| {
                    s.parse::<usize>()
                        .map_err(|_| malformed(lineno, &format!("bad participant `{s}`")))
                })
                .collect::<Result<Vec<usize>>>()?
        };
        records.push(RoundRecord {
            round: uint(fields[0], "round")? as usize,
            sim_time: float(fields[1], "sim_time")?,
            accuracy: float(fields[2], "accuracy")?,
            loss: float(fields[3], "loss")?,
            tau_total: uint(fields[4], "tau")?,
            participants,
            bytes_up: uint(fields[6], "bytes_up")?,
            bytes_down: uint(fields[7], "bytes_down")?,
        });
    }
    Ok(MetricsLog {
        records,
        config_digest: String::new(),
        total_params: 0,
    })
}

pub fn read_csv(path: &Path) -> Result<MetricsLog> {
    parse_csv(&std::fs::read_to_string(path)?)
}

/// Whole-run statistics, serialized as the summary JSON artifact.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct RunSummary {
    pub config_digest: String,
    pub rounds: usize,
    pub total_params: usize,
    /// Analytic footprint; absent when re-summarizing a bare CSV.
    pub memory_proxy_bytes: Option<u64>,
    pub convergence: ConvergenceReport,
    pub oscillations: OscillationReport,
    pub totals: RunTotals,
}

pub fn build_summary(
    log: &MetricsLog,
    target_accuracy: f64,
    thresholds: &[f64],
    memory_proxy_bytes: Option<u64>,
) -> RunSummary {
    let (convergence, oscillations, totals) = summarize(log, target_accuracy, thresholds);
    RunSummary {
        config_digest: log.config_digest.clone(),
        rounds: log.records.len(),
        total_params: log.total_params,
        memory_proxy_bytes,
        convergence,
        oscillations,
        totals,
    }
}

pub fn write_summary(summary: &RunSummary, path: &Path) -> Result<()> {
    let mut json = serde_json::to_string_pretty(summary).expect("summary serialization is infallible");
    json.push('\n');
    std::fs::write(path, json)?;
    Ok(())
}

/// One labelled run in a comparison.
#[derive(Debug, Clone)]
pub struct CompareRow {
    pub label: String,
    pub summary: RunSummary,
}

fn shared_thresholds(rows: &[CompareRow]) -> Result<Vec<f64>> {
    let first = rows
        .first()
        .ok_or_else(|| Error::CompareMismatch("no rows to compare".into()))?;
    let thresholds = first.summary.oscillations.thresholds.clone();
    for row in rows {
        if row.summary.oscillations.thresholds != thresholds {
            return Err(Error::CompareMismatch(format!(
                "row `{}` uses different oscillation thresholds",
                row.label
            )));
        }
    }
    Ok(thresholds)
}

fn table_cells(rows: &[CompareRow], thresholds: &[f64], compact: bool) -> Vec<Vec<String>> {
    let num = |x: f64| {
        if compact {
            format!("{x:.4}")
        } else {
            real(x)
        }
    };
    let epoch = |e: Option<usize>| e.map_or_else(|| "-".to_string(), |v| v.to_string());
    let mut header = vec![
        "label".to_string(),
        "best_acc".to_string(),
        "final_acc".to_string(),
        "t_f".to_string(),
        "t_s".to_string(),
    ];
    for t in thresholds {
        header.push(format!("osc@{t}"));
    }
    header.extend(["tau".to_string(), "bytes_up".to_string(), "bytes_down".to_string(), "sim_time".to_string()]);
    let mut cells = vec![header];
    for row in rows {
        let s = &row.summary;
        let mut line = vec![
            row.label.clone(),
            num(s.totals.best_accuracy),
            num(s.totals.final_accuracy),
            epoch(s.convergence.t_f),
            epoch(s.convergence.t_s),
        ];
        for c in &s.oscillations.counts {
            line.push(c.to_string());
        }
        line.extend([
            s.totals.total_tau.to_string(),
            s.totals.total_bytes_up.to_string(),
            s.totals.total_bytes_down.to_string(),
            num(s.totals.total_sim_time),
        ]);
        cells.push(line);
    }
    cells
}

/// Comparison table as CSV (full-precision reals).
pub fn compare_csv(rows: &[CompareRow]) -> Result<String> {
    let thresholds = shared_thresholds(rows)?;
    let cells = table_cells(rows, &thresholds, false);
    let mut out = String::new();
    for line in cells {
        out.push_str(&line.join(","));
        out.push('\n');
    }
    Ok(out)
}

/// Comparison table as column-aligned text (compact reals).
pub fn compare_text(rows: &[CompareRow]) -> Result<String> {
    let thresholds = shared_thresholds(rows)?;
    let cells = table_cells(rows, &thresholds, true);
    let columns = cells[0].len();
    let widths: Vec<usize> = (0..columns)
        .map(|c| cells.iter().map(|line| line[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for line in &cells {
        for (c, cell) in line.iter().enumerate() {
            if c > 0 {
                out.push_str("  ");
            }
            if c == 0 {
                // Left-align labels, right-align numbers.
                write!(out, "{cell:<width$}", width = widths[c]).expect("infallible");
            } else {
                write!(out, "{cell:>width$}", width = widths[c]).expect("infallible");
            }
        }
        // Trailing spaces on the label-only lines would be invisible noise.
        while out.ends_with(' ') {
            out.pop();
        }
        out.push('\n');
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_log() -> MetricsLog {
        MetricsLog {
            records: vec![
                RoundRecord {
                    round: 1,
                    sim_time: 2.5,
                    accuracy: 0.5,
                    loss: 1.0986,
                    tau_total: 0,
                    participants: vec![0, 3],
                    bytes_up: 1200,
                    bytes_down: 3600,
                },
                RoundRecord {
                    round: 2,
                    sim_time: 5.0,
                    accuracy: 0.75,
                    loss: -1.0,
                    tau_total: 3,
                    participants: vec![1],
                    bytes_up: 600,
                    bytes_down: 3600,
                },
            ],
            config_digest: "abc".into(),
            total_params: 75,
        }
    }

    #[test]
    fn csv_layout_is_exact() {
        let text = render_csv(&sample_log());
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER);
        assert_eq!(
            lines.next().unwrap(),
            "1,2.50000000e0,5.00000000e-1,1.09860000e0,0,0|3,1200,3600"
        );
        assert_eq!(
            lines.next().unwrap(),
            "2,5.00000000e0,7.50000000e-1,-1.00000000e0,3,1,600,3600"
        );
        assert_eq!(lines.next(), None);
    }

    #[test]
    fn csv_round_trips() {
        let log = sample_log();
        let parsed = parse_csv(&render_csv(&log)).unwrap();
        assert_eq!(parsed.records, log.records);
    }

    #[test]
    fn csv_rejects_malformed_input() {
        assert!(parse_csv("").is_err());
        assert!(parse_csv("wrong,header\n").is_err());
        let missing_field = format!("{CSV_HEADER}\n1,0.0,0.5,0.2,0,0\n");
        let err = parse_csv(&missing_field).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        let bad_number = format!("{CSV_HEADER}\n1,0.0,half,0.2,0,0,1,2\n");
        assert!(parse_csv(&bad_number).is_err());
    }

    #[test]
    fn summary_serializes_all_sections() {
        let log = sample_log();
        let summary = build_summary(&log, 0.6, &[0.05, 0.2], Some(4096));
        assert_eq!(summary.rounds, 2);
        assert_eq!(summary.convergence.t_f, Some(2));
        let json = serde_json::to_string(&summary).unwrap();
        for key in ["config_digest", "convergence", "oscillations", "totals", "memory_proxy_bytes"] {
            assert!(json.contains(key), "missing {key} in {json}");
        }
    }

    #[test]
    fn compare_tables_align_and_share_thresholds() {
        let log = sample_log();
        let a = CompareRow {
            label: "safl-fedsgd".into(),
            summary: build_summary(&log, 0.6, &[0.05], None),
        };
        let mut b = a.clone();
        b.label = "safl-fedavg".into();
        let csv = compare_csv(&[a.clone(), b.clone()]).unwrap();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "label,best_acc,final_acc,t_f,t_s,osc@0.05,tau,bytes_up,bytes_down,sim_time"
        );
        assert!(lines.next().unwrap().starts_with("safl-fedsgd,"));

        let text = compare_text(&[a.clone(), b.clone()]).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].contains("best_acc"));

        let mut c = b.clone();
        c.summary = build_summary(&log, 0.6, &[0.1], None);
        assert!(compare_csv(&[a, c]).is_err());
    }
}

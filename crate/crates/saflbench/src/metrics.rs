//! Evaluation, convergence/oscillation statistics, and resource accounting.
//!
//! Per-aggregation records accumulate into a [`MetricsLog`]; [`summarize`]
//! rolls a log up into convergence, oscillation, and resource reports. The log
//! serializes as CSV with the header
//! `round,sim_time,accuracy,loss,tau,participants,bytes_up,bytes_down`,
//! participants `|`-joined, reals printed with 9 significant digits.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{forward_eval, Batch, ParamVector};

/// Fixed per-message header overhead, bytes.
pub const HEADER_BYTES: u64 = 64;

/// What a transmitted payload is, for byte accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PayloadKind {
    /// A cumulative-gradient upload.
    Gradient,
    /// A model-weights upload; carries the configured metadata overhead.
    Weights,
    /// A server-to-client model broadcast.
    Broadcast,
}

/// Bytes on the wire for one message: `param_count` 64-bit reals plus the
/// fixed header, plus the configured metadata overhead for weights uploads.
pub fn transmission_bytes(param_count: usize, kind: PayloadKind, weights_overhead: u64) -> u64 {
    let base = param_count as u64 * 8 + HEADER_BYTES;
    match kind {
        PayloadKind::Gradient | PayloadKind::Broadcast => base,
        PayloadKind::Weights => base + weights_overhead,
    }
}

/// Analytic peak-memory proxy: one resident model per client plus the global
/// model, a K-deep update buffer, and the dataset itself.
pub fn memory_proxy(num_clients: usize, param_count: usize, k: usize, dataset_bytes: u64) -> u64 {
    ((num_clients as u64 + 1) + k as u64) * param_count as u64 * 8 + dataset_bytes
}

/// One aggregation's measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    /// 1-based aggregation index.
    pub round: usize,
    /// Simulated seconds at which the aggregation fired.
    pub sim_time: f64,
    /// Test-set accuracy of the post-aggregation global model.
    pub accuracy: f64,
    /// Test-set mean loss; exactly -1 when the computed loss was non-finite.
    pub loss: f64,
    /// Accumulated staleness over the consumed updates.
    pub tau_total: u64,
    /// Clients whose updates were consumed, in consumption order.
    pub participants: Vec<usize>,
    /// Upload bytes consumed by this aggregation.
    pub bytes_up: u64,
    /// Broadcast bytes sent after this aggregation.
    pub bytes_down: u64,
}

/// Ordered per-round records plus run provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsLog {
    pub records: Vec<RoundRecord>,
    /// Digest of the resolved run configuration.
    pub config_digest: String,
    /// Parameter count of the trained model.
    pub total_params: usize,
}

impl MetricsLog {
    pub fn accuracy_series(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.accuracy).collect()
    }
}

/// Convergence epochs against a target accuracy; 1-based, absent if never.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ConvergenceReport {
    pub target_accuracy: f64,
    /// First round reaching the target.
    pub t_f: Option<usize>,
    /// First round after which the series never drops below the target.
    pub t_s: Option<usize>,
}

/// Severe-oscillation counts per threshold.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct OscillationReport {
    pub thresholds: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Whole-run roll-up totals.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct RunTotals {
    pub final_accuracy: f64,
    pub best_accuracy: f64,
    pub total_tau: u64,
    pub total_bytes_up: u64,
    pub total_bytes_down: u64,
    pub total_sim_time: f64,
}

/// Accuracy and loss of the global model on the test set; a non-finite loss
/// is mapped to exactly -1.
pub fn evaluate_global(w_g: &ParamVector, test: &Dataset) -> Result<(f64, f64)> {
    if test.dim != w_g.spec.input_dim || test.num_classes != w_g.spec.num_classes {
        return Err(Error::DimensionMismatch(format!(
            "test set is {}d/{} classes, model wants {}d/{}",
            test.dim, test.num_classes, w_g.spec.input_dim, w_g.spec.num_classes
        )));
    }
    let batch = Batch::new(test.features.clone(), test.labels.clone(), test.dim)?;
    let (loss, correct) = forward_eval(w_g, &batch)?;
    let accuracy = correct as f64 / test.len() as f64;
    let loss = if loss.is_finite() { loss } else { -1.0 };
    Ok((accuracy, loss))
}

/// T_f = first 1-based index with `acc[i] >= target`; T_s = first index after
/// which the series never dips below the target.
pub fn convergence_epochs(acc: &[f64], target: f64) -> ConvergenceReport {
    let t_f = acc.iter().position(|&a| a >= target).map(|i| i + 1);
    let mut t_s = None;
    for j in (0..acc.len()).rev() {
        if acc[j] >= target {
            t_s = Some(j + 1);
        } else {
            break;
        }
    }
    ConvergenceReport {
        target_accuracy: target,
        t_f,
        t_s,
    }
}

/// Number of round-over-round accuracy drops strictly exceeding `ots`
/// (fraction scale).
pub fn count_oscillations(acc: &[f64], ots: f64) -> usize {
    assert!(ots > 0.0, "oscillation threshold must be positive");
    acc.windows(2).filter(|w| w[0] - w[1] > ots).count()
}

/// Deterministic roll-up of a log: convergence, oscillations, totals.
pub fn summarize(
    log: &MetricsLog,
    target: f64,
    thresholds: &[f64],
) -> (ConvergenceReport, OscillationReport, RunTotals) {
    assert!(!log.records.is_empty(), "cannot summarize an empty log");
    let acc = log.accuracy_series();
    let convergence = convergence_epochs(&acc, target);
    let oscillation = OscillationReport {
        thresholds: thresholds.to_vec(),
        counts: thresholds.iter().map(|&t| count_oscillations(&acc, t)).collect(),
    };
    let last = log.records.last().expect("non-empty");
    let totals = RunTotals {
        final_accuracy: last.accuracy,
        best_accuracy: acc.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        total_tau: log.records.iter().map(|r| r.tau_total).sum(),
        total_bytes_up: log.records.iter().map(|r| r.bytes_up).sum(),
        total_bytes_down: log.records.iter().map(|r| r.bytes_down).sum(),
        total_sim_time: last.sim_time,
    };
    (convergence, oscillation, totals)
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_synthetic;
    use crate::model::ModelSpec;

    #[test]
    fn transmission_formulas() {
        assert_eq!(transmission_bytes(67, PayloadKind::Gradient, 0), 600);
        assert_eq!(transmission_bytes(67, PayloadKind::Broadcast, 128), 600);
        assert_eq!(transmission_bytes(67, PayloadKind::Weights, 128), 728);
        assert_eq!(
            transmission_bytes(10, PayloadKind::Weights, 0),
            transmission_bytes(10, PayloadKind::Gradient, 0)
        );
    }

    #[test]
    fn memory_proxy_formula() {
        assert_eq!(memory_proxy(2, 10, 1, 0), 320);
        let with_data = memory_proxy(2, 10, 1, 1000);
        assert_eq!(with_data, 1320);
        // Doubling the fleet adds exactly the extra clients' models.
        assert_eq!(memory_proxy(4, 10, 1, 0) - memory_proxy(2, 10, 1, 0), 2 * 10 * 8);
    }

    #[test]
    fn evaluate_maps_non_finite_loss_to_sentinel() {
        let ds = generate_synthetic(2, 3, 5, 0.2, 1).unwrap();
        let mut params = ParamVector::zeros(ModelSpec::softmax_linear(3, 2));
        let (_, loss) = evaluate_global(&params, &ds).unwrap();
        assert!((loss - (2.0f64).ln()).abs() < 1e-12);
        params.values[0] = f64::INFINITY;
        let (acc, loss) = evaluate_global(&params, &ds).unwrap();
        assert_eq!(loss, -1.0);
        assert!((0.0..=1.0).contains(&acc));
    }

    #[test]
    fn convergence_scan_examples() {
        let r = convergence_epochs(&[0.40, 0.55, 0.50, 0.62, 0.61, 0.63], 0.60);
        assert_eq!((r.t_f, r.t_s), (Some(4), Some(4)));
        let r = convergence_epochs(&[0.7, 0.5, 0.7, 0.7], 0.6);
        assert_eq!((r.t_f, r.t_s), (Some(1), Some(3)));
        let r = convergence_epochs(&[0.1, 0.2], 0.6);
        assert_eq!((r.t_f, r.t_s), (None, None));
        let r = convergence_epochs(&[0.7, 0.5, 0.7, 0.5], 0.6);
        assert_eq!((r.t_f, r.t_s), (Some(1), None));
    }

    #[test]
    fn oscillation_scan_examples() {
        let acc = [0.10, 0.30, 0.20, 0.50, 0.30, 0.60];
        assert_eq!(count_oscillations(&acc, 0.15), 1);
        assert_eq!(count_oscillations(&[0.1, 0.2, 0.3], 0.05), 0);
        assert!(count_oscillations(&acc, 0.05) >= count_oscillations(&acc, 0.15));
        // Strict comparison: a drop of exactly the threshold does not count.
        assert_eq!(count_oscillations(&[0.5, 0.4], 0.1), 0);
    }

    #[test]
    fn summarize_single_round_log() {
        let log = MetricsLog {
            records: vec![RoundRecord {
                round: 1,
                sim_time: 2.5,
                accuracy: 0.8,
                loss: 0.4,
                tau_total: 3,
                participants: vec![0, 2],
                bytes_up: 100,
                bytes_down: 200,
            }],
            config_digest: "d".into(),
            total_params: 4,
        };
        let (conv, osc, totals) = summarize(&log, 0.75, &[0.05, 0.1]);
        assert_eq!(conv.t_f, Some(1));
        assert_eq!(conv.t_s, Some(1));
        assert_eq!(osc.counts, vec![0, 0]);
        assert_eq!(totals.final_accuracy, 0.8);
        assert_eq!(totals.best_accuracy, 0.8);
        assert_eq!(totals.total_tau, 3);
        assert_eq!(totals.total_bytes_up, 100);
        assert_eq!(totals.total_bytes_down, 200);
        assert_eq!(totals.total_sim_time, 2.5);
        // Pure: same inputs, same outputs.
        let again = summarize(&log, 0.75, &[0.05, 0.1]);
        assert_eq!(again.2, totals);
    }
}

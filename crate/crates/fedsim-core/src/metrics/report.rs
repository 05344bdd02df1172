//! Per-round evaluation records and their CSV rendering.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::metrics::AucReport;

/// Evaluation snapshot after one round (or one-shot for the baselines),
/// with traffic accumulated through that round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    /// Canonical lowercase method name (e.g. "fedavg").
    pub method: String,
    pub auc: AucReport,
    pub cum_bytes_up: u64,
    pub cum_bytes_down: u64,
}

/// One CSV row per (round, class):
/// `round,method,class,auc,ci_low,ci_high,mauc,cum_bytes_up,cum_bytes_down`.
pub fn reports_to_csv(reports: &[RoundReport]) -> String {
    let mut out =
        String::from("round,method,class,auc,ci_low,ci_high,mauc,cum_bytes_up,cum_bytes_down\n");
    for r in reports {
        for (i, &class) in r.auc.classes.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.round,
                r.method,
                class,
                r.auc.auc[i],
                r.auc.ci_low[i],
                r.auc.ci_high[i],
                r.auc.mauc,
                r.cum_bytes_up,
                r.cum_bytes_down
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let report = RoundReport {
            round: 2,
            method: "fedavg".into(),
            auc: AucReport {
                classes: vec![0, 2],
                auc: vec![0.75, 0.5],
                ci_low: vec![0.7, 0.45],
                ci_high: vec![0.8, 0.55],
                mauc: 0.625,
                skipped_classes: vec![1],
            },
            cum_bytes_up: 1000,
            cum_bytes_down: 2000,
        };
        let csv = reports_to_csv(&[report]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(
            lines[0],
            "round,method,class,auc,ci_low,ci_high,mauc,cum_bytes_up,cum_bytes_down"
        );
        assert_eq!(lines[1], "2,fedavg,0,0.75,0.7,0.8,0.625,1000,2000");
        assert_eq!(lines[2], "2,fedavg,2,0.5,0.45,0.55,0.625,1000,2000");
        assert_eq!(lines.len(), 3);
    }
}

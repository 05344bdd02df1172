//! Evaluation (per-class ROC AUC, mean AUC, bootstrap CIs) and byte-exact
//! communication accounting.

pub mod auc;
pub mod ledger;
pub mod report;

pub use auc::{auc_report, bootstrap_ci, mauc, roc_auc, AucReport, BootstrapConfig};
pub use ledger::{
    ledger_totals, megabytes, CommLedger, Direction, LedgerEntry, LedgerTotals, TotalRow,
    WirePrecision,
};
pub use report::{reports_to_csv, RoundReport};

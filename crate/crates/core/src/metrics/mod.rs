//! Evaluation: approximation error tables, RSS, rank correlation, score
//! separation, cost ledgers and the Hessian-trace sharpness probe.

mod approx;
mod hessian;
mod ledger;
mod table;

pub use approx::{
    aggregate_relative_error, rss_scores, score_separation, spearman, ApproxErrorRecord, BucketRow, BucketTable,
    Separation,
};
pub use hessian::{hessian_trace, query_loss_trace, sharpness_report, HessianEstimate, HessianProbeConfig, SharpnessRow};
pub use ledger::{speedup, FlopLedger, LedgerSnapshot};
pub use table::{fmt_f64, Table, SCHEMA_VERSION};

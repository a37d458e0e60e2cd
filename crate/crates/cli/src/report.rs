//! Text reports: the method comparison TSV, the dimension profile CSV and
//! the epoch log.

use std::fmt::Write as _;

use amtl_core::eval::{DimProfile, ReportRow};
use amtl_core::EpochSummary;

pub const COMPARE_HEADER: &str = "method\tpolicy\tauc\tavg_dim\tratio";

/// One row per model. Timing is left out so reruns are byte-identical.
pub fn compare_tsv(rows: &[ReportRow]) -> String {
    let mut out = String::from(COMPARE_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{:.6}\t{:.4}\t{:.2}%",
            r.label,
            r.policy,
            r.auc,
            r.avg_dim,
            r.ratio * 100.0
        );
    }
    out
}

/// `method<TAB>sec_per_epoch` rows for models that report timing.
pub fn timing_tsv(rows: &[ReportRow]) -> String {
    let mut out = String::from("method\tsec_per_epoch\n");
    for r in rows {
        if let Some(s) = r.sec_per_epoch {
            let _ = writeln!(out, "{}\t{s:.3}", r.label);
        }
    }
    out
}

pub const PROFILE_HEADER: &str = "field,group,members,mean_count,mean_dim";

pub fn profile_csv(profiles: &[DimProfile]) -> String {
    let mut out = String::from(PROFILE_HEADER);
    out.push('\n');
    for p in profiles {
        for (g, group) in p.groups.iter().enumerate() {
            let _ = writeln!(out, "{},{g},{},{:.4},{:.4}", p.field, group.members, group.mean_count, group.mean_dim);
        }
    }
    out
}

/// Deterministic part of the epoch log.
pub fn loss_log(epochs: &[EpochSummary]) -> String {
    let mut out = String::from("epoch\tmean_loss\n");
    for (i, e) in epochs.iter().enumerate() {
        let _ = writeln!(out, "{}\t{:.10}", i + 1, e.mean_loss);
    }
    out
}

pub fn time_log(epochs: &[EpochSummary]) -> String {
    let mut out = String::from("epoch\tseconds\n");
    for (i, e) in epochs.iter().enumerate() {
        let _ = writeln!(out, "{}\t{:.3}", i + 1, e.seconds);
    }
    out
}

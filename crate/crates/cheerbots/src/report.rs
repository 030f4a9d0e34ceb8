//! Metric report files and the printed summary table.

use std::path::{Path, PathBuf};

use cheerbots_core::metrics::MetricReport;

use crate::error::{AppError, AppResult};
use crate::io;

fn hashes_cell(r: &MetricReport) -> String {
    r.digest.model_hashes.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";")
}

pub fn to_csv(reports: &[MetricReport]) -> AppResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["metric", "value", "n_items", "seed", "split", "model_hashes"])?;
    for r in reports {
        w.write_record([
            r.metric.clone(),
            format!("{:?}", r.value),
            r.n_items.to_string(),
            r.digest.seed.to_string(),
            r.digest.split.clone().unwrap_or_default(),
            hashes_cell(r),
        ])?;
    }
    w.into_inner().map_err(|e| AppError::Invalid(format!("csv buffer: {e}")))
}

/// Writes `<dir>/<stem>.json` and `<dir>/<stem>.csv`; returns both paths.
pub fn write_reports(dir: &Path, stem: &str, reports: &[MetricReport]) -> AppResult<[PathBuf; 2]> {
    let json = dir.join(format!("{stem}.json"));
    let csv = dir.join(format!("{stem}.csv"));
    io::write_json(&json, &reports)?;
    io::write_bytes(&csv, &to_csv(reports)?)?;
    Ok([json, csv])
}

/// Plain-text table: one row per metric, or for reward reports a single
/// row with the one-turn and three-turn columns side by side.
pub fn summary_table(reports: &[MetricReport]) -> String {
    let reward = |name: &str| reports.iter().find(|r| r.metric == name).map(|r| r.value);
    if let (Some(one), Some(three)) = (reward("reward_1_turn"), reward("reward_3_turn")) {
        let n = reports[0].n_items;
        return format!(
            "{:<12} {:>12} {:>12} {:>10}\n{:<12} {:>12.4} {:>12.4} {:>10}\n",
            "policy", "1 turn", "3 turns", "episodes", "trained", one, three, n
        );
    }
    let mut out = format!("{:<12} {:>12} {:>10}\n", "metric", "value", "items");
    for r in reports {
        out.push_str(&format!("{:<12} {:>12.4} {:>10}\n", r.metric, r.value, r.n_items));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use cheerbots_core::metrics::ConfigDigest;

    fn report(metric: &str, value: f64) -> MetricReport {
        let mut d = ConfigDigest { seed: 3, split: Some("test".into()), ..Default::default() };
        d.model_hashes.insert("retrieval".into(), "ab".into());
        MetricReport::new(metric, value, 10, d).unwrap()
    }

    #[test]
    fn csv_keeps_full_precision() {
        let csv = String::from_utf8(to_csv(&[report("bleu", 0.1 + 0.2)]).unwrap()).unwrap();
        assert_eq!(csv.lines().nth(1).unwrap(), "bleu,0.30000000000000004,10,3,test,retrieval=ab");
    }

    #[test]
    fn reward_table_has_both_turn_columns() {
        let t = summary_table(&[report("reward_1_turn", 0.11), report("reward_3_turn", 0.317)]);
        assert!(t.contains("3 turns"));
        assert!(t.contains("0.3170"));
    }
}

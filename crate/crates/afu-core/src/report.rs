//! Learning-curve serialization and smoothing.
//!
//! Raw [`EvalRecord`]s are stored and written as-is; moving-average smoothing
//! is applied only at reporting time.

use std::path::Path;

use crate::error::Result;
use crate::maxq::{ToyRow, ToySummary};
use crate::trainer::EvalRecord;

/// Default smoothing window for learning curves.
pub const SMOOTHING_WINDOW: usize = 10;

/// Trailing moving average: element `i` averages the last `window` values up
/// to and including `i` (fewer at the start of the series).
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    assert!(window >= 1, "window must be >= 1");
    values
        .iter()
        .enumerate()
        .map(|(i, _)| {
            let lo = (i + 1).saturating_sub(window);
            let slice = &values[lo..=i];
            slice.iter().sum::<f64>() / slice.len() as f64
        })
        .collect()
}

/// Last value of the smoothed return curve, if any records exist.
pub fn final_smoothed_return(records: &[EvalRecord], window: usize) -> Option<f64> {
    let returns: Vec<f64> = records.iter().map(|r| r.mean_return).collect();
    moving_average(&returns, window).last().copied()
}

/// Learning-curve CSV: `step, mean_return, entropy, alpha, loss_q, loss_va,
/// loss_pi, loss_temp, loss_mu`, with empty cells for absent values.
pub fn records_to_csv(records: &[EvalRecord]) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for r in records {
        writer.serialize(r)?;
    }
    let bytes = writer.into_inner().expect("csv flush");
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

pub fn write_records_csv(path: &Path, records: &[EvalRecord]) -> Result<()> {
    std::fs::write(path, records_to_csv(records)?)?;
    Ok(())
}

/// Toy-benchmark grid CSV: `s, v_estimate, true_max, residual`.
pub fn toy_rows_to_csv(rows: &[ToyRow]) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for r in rows {
        writer.serialize(r)?;
    }
    let bytes = writer.into_inner().expect("csv flush");
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

pub fn write_toy_csv(path: &Path, rows: &[ToyRow]) -> Result<()> {
    std::fs::write(path, toy_rows_to_csv(rows)?)?;
    Ok(())
}

pub fn write_toy_summary_json(path: &Path, summary: &ToySummary) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(summary)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(step: u64, ret: f64) -> EvalRecord {
        EvalRecord {
            step,
            mean_return: ret,
            entropy: None,
            alpha: 1.0,
            loss_q: Some(0.5),
            loss_va: None,
            loss_pi: None,
            loss_temp: None,
            loss_mu: None,
        }
    }

    #[test]
    fn moving_average_warms_up_then_slides() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let out = moving_average(&xs, 2);
        assert_eq!(out, vec![1.0, 1.5, 2.5, 3.5]);
        // Window larger than the series averages everything seen so far.
        let out = moving_average(&xs, 10);
        assert_eq!(out[3], 2.5);
    }

    #[test]
    fn csv_has_expected_header_and_empty_cells() {
        let csv = records_to_csv(&[record(10, 1.5)]).unwrap();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "step,mean_return,entropy,alpha,loss_q,loss_va,loss_pi,loss_temp,loss_mu"
        );
        assert_eq!(lines.next().unwrap(), "10,1.5,,1.0,0.5,,,,");
    }

    #[test]
    fn csv_roundtrip_preserves_values() {
        let recs = vec![record(1, 0.123456789012345), record(2, -3.5e-13)];
        let csv = records_to_csv(&recs).unwrap();
        let mut reader = csv::Reader::from_reader(csv.as_bytes());
        let back: Vec<EvalRecord> = reader.deserialize().map(|r| r.unwrap()).collect();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].mean_return, recs[0].mean_return);
        assert_eq!(back[1].mean_return, recs[1].mean_return);
        assert_eq!(back[0].entropy, None);
    }
}

use std::io::Write;

use super::entropy::EntropyReport;
use super::mass::MassReport;
use crate::error::Result;

pub fn write_mass_csv<W: Write>(reports: &[MassReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["variant", "length", "group", "begin", "needle", "context", "end", "count"])?;
    for r in reports {
        for row in &r.rows {
            let mut rec = vec![r.variant.clone(), r.len.to_string(), row.group.clone()];
            rec.extend(row.mass.iter().map(|m| format!("{m:.6}")));
            rec.push(row.count.to_string());
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_entropy_csv<W: Write>(reports: &[EntropyReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["variant", "length", "mode", "entropy", "samples"])?;
    for r in reports {
        w.write_record([r.variant.clone(), r.len.to_string(), r.mode.name().to_string(), format!("{:.6}", r.entropy), r.samples.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `position,weight` rows; `start` is the original index of `values[0]`.
pub fn write_distribution_csv<W: Write>(values: &[f64], start: usize, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["position", "weight"])?;
    for (i, v) in values.iter().enumerate() {
        w.write_record([(start + i).to_string(), format!("{v:.8e}")])?;
    }
    w.flush()?;
    Ok(())
}

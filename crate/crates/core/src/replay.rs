//! Replay files: recorded shot data in CSV form.
//!
//! Header: `theta_prep,phi_prep,theta_meas,phi_meas,shots,total_counts`.
//! Derived fractions are never read from the file; they are recomputed from
//! the raw counts against the supplied observable model.

use std::io::{Read, Write};
use std::path::Path;

use crate::bloch::{BlochAngles, ObservableModel};
use crate::error::{Error, Result};
use crate::measurement::{raw_zero_fraction, MeasurementRecord};

pub const REPLAY_HEADER: [&str; 6] = ["theta_prep", "phi_prep", "theta_meas", "phi_meas", "shots", "total_counts"];

/// Largest excursion of the raw fraction outside `[0, 1]`, in standard
/// errors, still attributed to counting noise.
const FRACTION_SLACK_SIGMAS: f64 = 5.0;

pub fn ingest_replay(path: &Path, model: &ObservableModel) -> Result<Vec<MeasurementRecord>> {
    let file = std::fs::File::open(path)?;
    parse_replay(file, model)
}

pub fn parse_replay<R: Read>(reader: R, model: &ObservableModel) -> Result<Vec<MeasurementRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(reader);
    let mut rows = rdr.records();
    let header = match rows.next() {
        Some(row) => row.map_err(|e| csv_error(1, e))?,
        None => return Err(Error::Parse { line: 1, message: "empty file".into() }),
    };
    if header.iter().collect::<Vec<_>>() != REPLAY_HEADER {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `{}`", REPLAY_HEADER.join(",")),
        });
    }

    let mut out = Vec::new();
    for row in rows {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            csv_error(line, e)
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        if row.len() != REPLAY_HEADER.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", REPLAY_HEADER.len(), row.len()),
            });
        }
        let num = |i: usize| -> Result<f64> {
            let v: f64 = row[i].parse().map_err(|_| Error::Parse {
                line,
                message: format!("`{}` is not a number in column {}", &row[i], REPLAY_HEADER[i]),
            })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Parse { line, message: format!("non-finite value in column {}", REPLAY_HEADER[i]) })
            }
        };
        let angle = |t: usize, p: usize| -> Result<BlochAngles> {
            BlochAngles::new(num(t)?, num(p)?).map_err(|e| Error::Parse { line, message: e.to_string() })
        };
        let prep = angle(0, 1)?;
        let meas = angle(2, 3)?;
        let shots: u64 = row[4].parse().map_err(|_| Error::Parse {
            line,
            message: format!("`{}` is not a positive integer shot count", &row[4]),
        })?;
        if shots == 0 {
            return Err(Error::Parse { line, message: "shots must be at least 1".into() });
        }
        let total = num(5)?;
        if total < 0.0 {
            return Err(Error::Data {
                line,
                message: format!("negative counts {total} imply a |0> fraction above 1"),
            });
        }
        let record = MeasurementRecord::from_counts(model, prep, meas, shots, total)?;
        let raw = raw_zero_fraction(model, shots, total);
        let slack = FRACTION_SLACK_SIGMAS * record.sigma_est;
        if raw < -slack || raw > 1.0 + slack {
            return Err(Error::Data {
                line,
                message: format!("counts imply a |0> fraction of {raw:.4}, outside [0, 1]"),
            });
        }
        out.push(record);
    }
    Ok(out)
}

fn csv_error(line: usize, e: csv::Error) -> Error {
    Error::Parse { line, message: e.to_string() }
}

/// Writes records in replay format. Floats use the shortest representation
/// that parses back to the same bits.
pub fn write_replay<W: Write>(records: &[MeasurementRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(REPLAY_HEADER).map_err(csv_io)?;
    for r in records {
        w.write_record(&[
            r.prep.theta().to_string(),
            r.prep.phi().to_string(),
            r.meas.theta().to_string(),
            r.meas.phi().to_string(),
            r.shots.to_string(),
            r.total_counts.to_string(),
        ])
        .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

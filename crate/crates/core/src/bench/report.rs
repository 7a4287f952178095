//! CSV emission and parsing.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;

use super::{BenchRecord, CurvePoint};
use crate::error::{Error, Result};

pub const RECORD_HEADER: &str = "sample_id,attack,success,linf_norm,apsr,wall_time_s,forwards,backwards";

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{other:?}")),
    }
}

/// Serialises `rows` as CSV with a header derived from the field names.
pub fn write_csv<T: Serialize>(writer: impl Write, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn to_file<T: Serialize>(path: &Path, rows: &[T], header: &str) -> Result<()> {
    let mut file = File::create(path)?;
    if rows.is_empty() {
        writeln!(file, "{header}")?;
        return Ok(());
    }
    write_csv(file, rows)
}

pub fn write_records(path: impl AsRef<Path>, records: &[BenchRecord]) -> Result<()> {
    to_file(path.as_ref(), records, RECORD_HEADER)
}

pub fn write_curve(path: impl AsRef<Path>, curve: &[CurvePoint]) -> Result<()> {
    to_file(path.as_ref(), curve, "epsilon,failure_rate")
}

/// Parses records written by [`write_records`]; the header must match
/// [`RECORD_HEADER`].
pub fn read_records_from(reader: impl Read) -> Result<Vec<BenchRecord>> {
    let mut r = csv::Reader::from_reader(reader);
    let header = r.headers().map_err(csv_err)?.iter().collect::<Vec<_>>().join(",");
    if header != RECORD_HEADER {
        return Err(Error::Format(format!("unexpected record header `{header}`")));
    }
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<BenchRecord>> {
    read_records_from(File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let rows = vec![
            BenchRecord::new("a", "alma_prox", true, 0.25, 1.0, 0.5, 3, 2),
            BenchRecord::new("b", "alma_prox", false, 0.5, 0.2, 0.1, 7, 7),
        ];
        write_records(&path, &rows).unwrap();
        assert_eq!(read_records(&path).unwrap(), rows);
        write_records(&path, &[]).unwrap();
        assert!(read_records(&path).unwrap().is_empty());
        assert!(matches!(read_records_from("x,y\n1,2\n".as_bytes()), Err(Error::Format(_))));
    }

    #[test]
    fn record_header_is_fixed() {
        let mut buf = Vec::new();
        let r = BenchRecord::new("img0", "alma_prox", true, 0.01, 1.0, 0.5, 500, 500);
        write_csv(&mut buf, &[r]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(RECORD_HEADER));
        assert_eq!(lines.next(), Some("img0,alma_prox,true,0.01,1.0,0.5,500,500"));
    }

    #[test]
    fn empty_files_keep_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        write_curve(&p, &[]).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "epsilon,failure_rate\n");
        write_curve(&p, &[CurvePoint { epsilon: 0.5, failure_rate: 0.25 }]).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "epsilon,failure_rate\n0.5,0.25\n");
    }
}

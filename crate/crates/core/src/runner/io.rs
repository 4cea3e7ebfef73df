use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Version stamped into every persisted document.
pub const FORMAT_VERSION: u64 = 1;

/// Fixed-width scientific notation with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Byte offset of a 1-based (line, column) position.
fn offset_of(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let start: usize = text.split_inclusive('\n').take(line - 1).map(str::len).sum();
    (start + column.saturating_sub(1)).min(text.len())
}

pub(crate) fn json_error(text: &str, e: serde_json::Error) -> Error {
    let offset = if e.is_eof() { text.len() } else { offset_of(text, e.line(), e.column()) };
    Error::Parse { offset, msg: e.to_string() }
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    format: u64,
    kind: String,
    data: T,
}

#[derive(Deserialize)]
struct Header {
    format: u64,
    kind: String,
}

/// Writes `value` as a versioned JSON document tagged with `kind`.
pub fn snapshot<T: Serialize>(path: &Path, kind: &str, value: &T) -> Result<()> {
    let env = Envelope { format: FORMAT_VERSION, kind: kind.to_string(), data: value };
    let text = serde_json::to_string_pretty(&env).map_err(|e| Error::Validation(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

/// Reads a document written by `snapshot`, refusing other versions and kinds.
pub fn load<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T> {
    let text = fs::read_to_string(path)?;
    let head: Header = serde_json::from_str(&text).map_err(|e| json_error(&text, e))?;
    if head.format != FORMAT_VERSION {
        return Err(Error::Version { found: head.format, expected: FORMAT_VERSION });
    }
    if head.kind != kind {
        return Err(Error::Validation(format!("document holds `{}`, expected `{kind}`", head.kind)));
    }
    let env: Envelope<T> = serde_json::from_str(&text).map_err(|e| json_error(&text, e))?;
    Ok(env.data)
}

/// Accumulates CSV rows with floats in `fmt_f64` form.
pub struct CsvTable {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn push_floats(&mut self, row: &[f64]) {
        self.push(row.iter().map(|v| fmt_f64(*v)).collect());
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{run_hom, FlowTrajectory};
    use crate::{Factor, HomogeneousMetric};

    fn trajectory() -> FlowTrajectory<HomogeneousMetric> {
        let g = HomogeneousMetric::new(vec![Factor::sphere(2, 3.0), Factor::torus(1, 2.0)]).unwrap();
        run_hom(&g, 0.0, &[0.0, 0.5, 1.0, 1.5]).unwrap()
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("traj.json");
        let tr = trajectory();
        snapshot(&p, "trajectory", &tr).unwrap();
        let back: FlowTrajectory<HomogeneousMetric> = load(&p, "trajectory").unwrap();
        assert_eq!(back, tr);
        assert!(matches!(load::<FlowTrajectory<HomogeneousMetric>>(&p, "flow"), Err(Error::Validation(_))));
    }

    #[test]
    fn truncated_file_names_the_offset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("traj.json");
        snapshot(&p, "trajectory", &trajectory()).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        fs::write(&p, &text[..120]).unwrap();
        match load::<FlowTrajectory<HomogeneousMetric>>(&p, "trajectory") {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 120),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn version_bump_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("traj.json");
        snapshot(&p, "trajectory", &trajectory()).unwrap();
        let text = fs::read_to_string(&p).unwrap().replacen("\"format\": 1", "\"format\": 2", 1);
        fs::write(&p, text).unwrap();
        assert!(matches!(
            load::<FlowTrajectory<HomogeneousMetric>>(&p, "trajectory"),
            Err(Error::Version { found: 2, expected: 1 })
        ));
    }

    #[test]
    fn floats_keep_seventeen_digits() {
        let s = fmt_f64(0.1);
        assert_eq!(s, "1.0000000000000001e-1");
        assert_eq!(s.parse::<f64>().unwrap(), 0.1);
    }
}

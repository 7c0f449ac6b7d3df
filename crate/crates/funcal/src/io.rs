//! CSV curve tables and JSON configuration files.
//!
//! Every numeric artifact this crate reads or writes is a curve table: a
//! header row `id,t_1,...,t_L` holding the time grid, then one row per unit
//! with an identifier and `L` values. Values are written with 17 significant
//! digits, which round-trips `f64` exactly, so writing and re-reading a
//! table is lossless and two writes of the same table are byte-identical.

use std::path::Path;

use crate::error::{Error, Result};
use crate::simulation::SimConfig;
use ndarray::Array2;
use serde::Deserialize;

/// In-memory form of a curve CSV: time grid, unit labels, one row of values
/// per unit.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveTable {
    t: Vec<f64>,
    ids: Vec<String>,
    values: Array2<f64>,
}

impl CurveTable {
    /// Builds a table, enforcing the format invariants: a strictly
    /// increasing finite grid, one label per row, finite values.
    pub fn new(t: Vec<f64>, ids: Vec<String>, values: Array2<f64>) -> Result<Self> {
        if t.is_empty() {
            return Err(Error::InvalidArgument(
                "curve table needs at least one time point".into(),
            ));
        }
        for (k, &v) in t.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("grid value t[{k}] = {v}")));
            }
            if k > 0 && v <= t[k - 1] {
                return Err(Error::InvalidArgument(format!(
                    "grid must be strictly increasing, t[{}] = {} then t[{k}] = {v}",
                    k - 1,
                    t[k - 1]
                )));
            }
        }
        if values.dim() != (ids.len(), t.len()) {
            return Err(Error::DimensionMismatch(format!(
                "{} labels and {} grid points do not match a {:?} value matrix",
                ids.len(),
                t.len(),
                values.dim()
            )));
        }
        if let Some(((i, l), &v)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite(format!("value at row {i}, point {l} = {v}")));
        }
        Ok(Self { t, ids, values })
    }

    /// Time grid from the header.
    pub fn t(&self) -> &[f64] {
        &self.t
    }

    /// Unit labels, one per row.
    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// Row-per-unit value matrix, `ids.len() x t.len()`.
    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    /// Number of rows.
    pub fn num_rows(&self) -> usize {
        self.ids.len()
    }

    /// Labels parsed as integer unit identifiers.
    pub fn numeric_ids(&self) -> Result<Vec<u64>> {
        self.ids
            .iter()
            .map(|s| {
                s.parse::<u64>().map_err(|_| {
                    Error::InvalidArgument(format!(
                        "unit label {s:?} is not an unsigned integer identifier"
                    ))
                })
            })
            .collect()
    }
}

/// 17 significant digits: enough to reproduce any `f64` exactly on re-read.
fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_err(path: &Path, row: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        row,
        column,
        message: message.into(),
    }
}

/// Reads a curve table, reporting malformed content with its one-based row
/// and cell position.
pub fn read_curves(path: impl AsRef<Path>) -> Result<CurveTable> {
    let path = path.as_ref();
    let raw = std::fs::read(path).map_err(|e| io_err(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(raw.as_slice());

    let mut records = reader.records();
    let header = match records.next() {
        Some(r) => r.map_err(|e| parse_err(path, 1, 1, e.to_string()))?,
        None => return Err(parse_err(path, 1, 1, "empty input: expected a header row")),
    };
    if header.get(0) != Some("id") {
        return Err(parse_err(
            path,
            1,
            1,
            format!(
                "first header cell must be \"id\", found {:?}",
                header.get(0).unwrap_or("")
            ),
        ));
    }
    if header.len() < 2 {
        return Err(parse_err(path, 1, 2, "header holds no time points"));
    }
    let mut t = Vec::with_capacity(header.len() - 1);
    for (k, cell) in header.iter().skip(1).enumerate() {
        let v: f64 = cell
            .trim()
            .parse()
            .map_err(|_| parse_err(path, 1, k + 2, format!("not a number: {cell:?}")))?;
        if !v.is_finite() {
            return Err(parse_err(path, 1, k + 2, format!("non-finite grid value {cell:?}")));
        }
        if let Some(&prev) = t.last() {
            if v <= prev {
                return Err(parse_err(
                    path,
                    1,
                    k + 2,
                    format!("grid must be strictly increasing, {prev} then {v}"),
                ));
            }
        }
        t.push(v);
    }
    let l = t.len();

    let mut ids = Vec::new();
    let mut flat = Vec::new();
    for (idx, record) in records.enumerate() {
        let row = idx + 2;
        let record = record.map_err(|e| parse_err(path, row, 1, e.to_string()))?;
        if record.len() == 1 && record.get(0) == Some("") {
            // a trailing blank line, not a data row
            continue;
        }
        if record.len() != l + 1 {
            return Err(parse_err(
                path,
                row,
                record.len().min(l + 1) + 1,
                format!("row has {} cells, expected {}", record.len(), l + 1),
            ));
        }
        ids.push(record.get(0).unwrap_or("").to_string());
        for (k, cell) in record.iter().skip(1).enumerate() {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| parse_err(path, row, k + 2, format!("not a number: {cell:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(path, row, k + 2, format!("non-finite value {cell:?}")));
            }
            flat.push(v);
        }
    }
    let values = Array2::from_shape_vec((ids.len(), l), flat)
        .expect("row loop pushes exactly l values per id");
    CurveTable::new(t, ids, values)
}

/// Writes a curve table as `id,t_1,...,t_L` plus one row per unit.
///
/// Output bytes are a pure function of the table contents.
pub fn write_curves(table: &CurveTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut header = Vec::with_capacity(table.t.len() + 1);
    header.push("id".to_string());
    header.extend(table.t.iter().map(|&v| format_value(v)));
    writer
        .write_record(&header)
        .map_err(|e| parse_err(path, 1, 1, e.to_string()))?;
    for (i, id) in table.ids.iter().enumerate() {
        let mut row = Vec::with_capacity(table.t.len() + 1);
        row.push(id.clone());
        row.extend(table.values.row(i).iter().map(|&v| format_value(v)));
        writer
            .write_record(&row)
            .map_err(|e| parse_err(path, i + 2, 1, e.to_string()))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::InvalidArgument(format!("csv buffer: {e}")))?;
    std::fs::write(path, bytes).map_err(|e| io_err(path, e))
}

/// Maps a serde_json error to a located parse error.
fn json_err(path: &Path, e: &serde_json::Error) -> Error {
    parse_err(path, e.line().max(1), e.column().max(1), e.to_string())
}

/// Loads and validates a simulation/estimation configuration.
pub fn read_config(path: impl AsRef<Path>) -> Result<SimConfig> {
    let path = path.as_ref();
    let raw = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let config: SimConfig = serde_json::from_str(&raw).map_err(|e| json_err(path, &e))?;
    config.validate()?;
    Ok(config)
}

/// Sampling design description for `estimate`: population size plus either
/// an SRSWOR sample size or explicit inclusion probabilities.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSpec {
    /// Population size.
    #[serde(rename = "N")]
    pub population_size: usize,
    /// Sample size under simple random sampling without replacement;
    /// defaults to the number of sample rows.
    #[serde(rename = "n", default)]
    pub sample_size: Option<usize>,
    /// Per-unit inclusion probabilities, overriding the SRSWOR default.
    #[serde(default)]
    pub pi: Option<Vec<f64>>,
}

/// Loads a design description.
pub fn read_design(path: impl AsRef<Path>) -> Result<DesignSpec> {
    let path = path.as_ref();
    let raw = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&raw).map_err(|e| json_err(path, &e))
}

impl DesignSpec {
    /// Builds the sampling design for a sample with `rows` units.
    pub fn build(&self, rows: usize) -> Result<crate::sampling::SamplingDesign> {
        if let Some(pi) = &self.pi {
            if pi.len() != rows {
                return Err(Error::DimensionMismatch(format!(
                    "design lists {} inclusion probabilities for {rows} sample rows",
                    pi.len()
                )));
            }
            return crate::sampling::SamplingDesign::new(self.population_size, pi.clone());
        }
        let n = self.sample_size.unwrap_or(rows);
        if n != rows {
            return Err(Error::DimensionMismatch(format!(
                "design says n = {n}, sample file has {rows} rows"
            )));
        }
        crate::sampling::SamplingDesign::srswor(self.population_size, n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};

    fn table() -> CurveTable {
        CurveTable::new(
            vec![0.25, 0.5, 0.75, 1.0],
            vec!["1".into(), "2".into(), "7".into()],
            array![
                [1.0, -2.5, 3.25, 0.125],
                [0.1, 0.2, 0.3, 0.4],
                [9.0, 8.0, 7.0, 6.0]
            ],
        )
        .unwrap()
    }

    #[test]
    fn roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let t: Vec<f64> = (1..=12).map(|k| k as f64 / 12.0).collect();
        let values =
            Array2::from_shape_fn((5, 12), |_| rng.random_range(-1e3..1e3) * 1.0e-7_f64.exp());
        let ids = (1..=5).map(|i| i.to_string()).collect();
        let original = CurveTable::new(t, ids, values).unwrap();
        write_curves(&original, &path).unwrap();
        let back = read_curves(&path).unwrap();
        // 17 significant digits pin every bit
        assert_eq!(original, back);
    }

    #[test]
    fn writes_are_byte_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        write_curves(&table(), &a).unwrap();
        write_curves(&table(), &b).unwrap();
        let ba = std::fs::read(&a).unwrap();
        assert_eq!(ba, std::fs::read(&b).unwrap());
        let text = String::from_utf8(ba).unwrap();
        let header = text.lines().next().unwrap();
        assert_eq!(header.split(',').count(), 5);
        assert!(header.starts_with("id,"));
    }

    #[test]
    fn empty_file_is_a_located_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        std::fs::write(&path, "").unwrap();
        match read_curves(&path) {
            Err(Error::Parse { row, message, .. }) => {
                assert_eq!(row, 1);
                assert!(message.contains("empty input"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn ragged_row_names_the_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ragged.csv");
        std::fs::write(&path, "id,0.5,1.0\n1,1.0,2.0\n2,3.0\n").unwrap();
        match read_curves(&path) {
            Err(Error::Parse { row, message, .. }) => {
                assert_eq!(row, 3);
                assert!(message.contains("expected 3"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn non_numeric_cell_is_located() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "id,0.5,1.0\n1,1.0,oops\n").unwrap();
        match read_curves(&path) {
            Err(Error::Parse { row, column, .. }) => {
                assert_eq!((row, column), (2, 3));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn non_increasing_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grid.csv");
        std::fs::write(&path, "id,0.5,0.5\n1,1.0,2.0\n").unwrap();
        match read_curves(&path) {
            Err(Error::Parse { row, column, message, .. }) => {
                assert_eq!((row, column), (1, 3));
                assert!(message.contains("strictly increasing"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn header_must_start_with_id() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hdr.csv");
        std::fs::write(&path, "unit,0.5,1.0\n1,1.0,2.0\n").unwrap();
        match read_curves(&path) {
            Err(Error::Parse { row, column, .. }) => assert_eq!((row, column), (1, 1)),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn missing_file_is_an_io_error() {
        match read_curves("/nonexistent/nowhere.csv") {
            Err(Error::Io { .. }) => {}
            other => panic!("expected io error, got {other:?}"),
        }
    }

    #[test]
    fn numeric_ids_parse_or_fail() {
        assert_eq!(table().numeric_ids().unwrap(), vec![1, 2, 7]);
        let t = CurveTable::new(
            vec![1.0],
            vec!["mu-x:x1".into()],
            array![[0.0]],
        )
        .unwrap();
        assert!(t.numeric_ids().is_err());
    }

    #[test]
    fn config_roundtrip_and_unknown_key() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"N": 40, "sampling_fraction": 0.5, "reps": 3}"#).unwrap();
        let config = read_config(&path).unwrap();
        assert_eq!(config.population_size, 40);
        assert_eq!(config.sample_size(), 20);
        assert_eq!(config.reps, 3);

        std::fs::write(&path, r#"{"NN": 40}"#).unwrap();
        match read_config(&path) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn invalid_config_value_fails_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"sampling_fraction": 1.5}"#).unwrap();
        assert!(matches!(read_config(&path), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn design_spec_builds_srswor_and_census() {
        let spec: DesignSpec = serde_json::from_str(r#"{"N": 10, "n": 5}"#).unwrap();
        let design = spec.build(5).unwrap();
        assert_eq!(design.population_size(), 10);
        assert!((design.weights()[0] - 2.0).abs() < 1e-15);

        // no n: the sample is the whole population, every weight is one
        let census: DesignSpec = serde_json::from_str(r#"{"N": 4}"#).unwrap();
        let design = census.build(4).unwrap();
        assert!((design.weights()[3] - 1.0).abs() < 1e-15);

        let wrong: DesignSpec = serde_json::from_str(r#"{"N": 10, "n": 4}"#).unwrap();
        assert!(wrong.build(5).is_err());
    }

    #[test]
    fn design_spec_accepts_explicit_probabilities() {
        let spec: DesignSpec =
            serde_json::from_str(r#"{"N": 10, "pi": [0.5, 0.25, 0.25]}"#).unwrap();
        let design = spec.build(3).unwrap();
        assert!((design.weights()[1] - 4.0).abs() < 1e-15);
        assert!(spec.build(2).is_err());
    }
}

//! Delimited-text input formats.
//!
//! Counts: `location_id,time,count`. Baselines: `location_id,time,p,mu`.
//! Geometry: `location_id,x,y`, or a distance matrix whose header is
//! `location_id,<id>,<id>,...` followed by one row per location.
//!
//! Time is counted backwards: `time = 1` is the most recent period. Location
//! ids are opaque strings; internal indices follow first appearance in the
//! counts file.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::scan::{BaselineGrid, CountGrid};
use crate::zip::ZipParams;
use crate::zones::DistanceMatrix;

#[derive(Debug, Error)]
pub enum InputError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: expected header '{expected}', found '{found}'")]
    Header {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("{path}:{line}: malformed row: {message}")]
    Malformed { path: PathBuf, line: u64, message: String },
    #[error("{path}:{line}: negative count {value}")]
    NegativeCount { path: PathBuf, line: u64, value: i64 },
    #[error("{path}:{line}: duplicate cell (location '{location}', time {time})")]
    DuplicateCell {
        path: PathBuf,
        line: u64,
        location: String,
        time: usize,
    },
    #[error("{path}: missing cell (location '{location}', time {time})")]
    MissingCell {
        path: PathBuf,
        location: String,
        time: usize,
    },
    #[error("{path}:{line}: structural-zero probability p={value} outside [0, 1)")]
    InvalidProbability { path: PathBuf, line: u64, value: f64 },
    #[error("{path}:{line}: Poisson mean mu={value} must be positive")]
    InvalidMean { path: PathBuf, line: u64, value: f64 },
    #[error("{path}: location mismatch with counts: {detail}")]
    LocationMismatch { path: PathBuf, detail: String },
    #[error("{path}: invalid geometry: {detail}")]
    Geometry { path: PathBuf, detail: String },
}

pub type InputResult<T> = std::result::Result<T, InputError>;

/// External location ids in internal index order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LocationIndex {
    ids: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl LocationIndex {
    pub fn from_ids<I: IntoIterator<Item = String>>(ids: I) -> Self {
        let mut index = Self::default();
        for id in ids {
            index.intern(&id);
        }
        index
    }

    fn intern(&mut self, id: &str) -> usize {
        if let Some(&i) = self.lookup.get(id) {
            return i;
        }
        let i = self.ids.len();
        self.ids.push(id.to_string());
        self.lookup.insert(id.to_string(), i);
        i
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.lookup.get(id).copied()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, index: usize) -> &str {
        &self.ids[index]
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn mismatch(&self, other: &LocationIndex) -> Option<String> {
        let ours: HashSet<&String> = self.ids.iter().collect();
        let theirs: HashSet<&String> = other.ids.iter().collect();
        let mut missing: Vec<&&String> = ours.difference(&theirs).collect();
        let mut extra: Vec<&&String> = theirs.difference(&ours).collect();
        if missing.is_empty() && extra.is_empty() {
            return None;
        }
        missing.sort();
        extra.sort();
        Some(format!("missing {missing:?}, unexpected {extra:?}"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CountData {
    pub grid: CountGrid,
    pub locations: LocationIndex,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineData {
    pub grid: BaselineGrid,
    pub locations: LocationIndex,
}

fn open(path: &Path) -> InputResult<csv::Reader<File>> {
    let file = File::open(path).map_err(|source| InputError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(file))
}

fn headers(reader: &mut csv::Reader<File>, path: &Path) -> InputResult<Vec<String>> {
    let h = reader.headers().map_err(|e| InputError::Malformed {
        path: path.to_path_buf(),
        line: 1,
        message: e.to_string(),
    })?;
    Ok(h.iter().map(str::to_string).collect())
}

fn expect_header(reader: &mut csv::Reader<File>, path: &Path, expected: &[&str]) -> InputResult<()> {
    let found = headers(reader, path)?;
    if found != expected {
        return Err(InputError::Header {
            path: path.to_path_buf(),
            expected: expected.join(","),
            found: found.join(","),
        });
    }
    Ok(())
}

/// Rows with their 1-based line numbers, each checked for `width` fields.
fn rows(reader: &mut csv::Reader<File>, path: &Path, width: usize) -> InputResult<Vec<(u64, csv::StringRecord)>> {
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| InputError::Malformed {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != width {
            return Err(InputError::Malformed {
                path: path.to_path_buf(),
                line,
                message: format!("expected {width} fields, found {}", record.len()),
            });
        }
        out.push((line, record));
    }
    Ok(out)
}

fn parse_field<T: std::str::FromStr>(path: &Path, line: u64, name: &str, raw: &str) -> InputResult<T> {
    raw.parse().map_err(|_| InputError::Malformed {
        path: path.to_path_buf(),
        line,
        message: format!("cannot parse {name} '{raw}'"),
    })
}

fn parse_time(path: &Path, line: u64, raw: &str) -> InputResult<usize> {
    let t: usize = parse_field(path, line, "time", raw)?;
    if t == 0 {
        return Err(InputError::Malformed {
            path: path.to_path_buf(),
            line,
            message: "time must be a positive integer (1 = most recent)".into(),
        });
    }
    Ok(t)
}

/// Collects `(location, time) -> value` cells into a dense row-major grid.
struct CellCollector<V> {
    locations: LocationIndex,
    cells: HashMap<(usize, usize), V>,
    max_time: usize,
}

impl<V: Copy> CellCollector<V> {
    fn new(locations: LocationIndex) -> Self {
        Self {
            locations,
            cells: HashMap::new(),
            max_time: 0,
        }
    }

    fn insert(&mut self, path: &Path, line: u64, location: &str, time: usize, value: V) -> InputResult<()> {
        let i = self.locations.intern(location);
        if self.cells.insert((i, time), value).is_some() {
            return Err(InputError::DuplicateCell {
                path: path.to_path_buf(),
                line,
                location: location.to_string(),
                time,
            });
        }
        self.max_time = self.max_time.max(time);
        Ok(())
    }

    fn dense(&self, path: &Path, periods: usize) -> InputResult<Vec<V>> {
        let mut out = Vec::with_capacity(self.locations.len() * periods);
        for i in 0..self.locations.len() {
            for t in 1..=periods {
                match self.cells.get(&(i, t)) {
                    Some(&v) => out.push(v),
                    None => {
                        return Err(InputError::MissingCell {
                            path: path.to_path_buf(),
                            location: self.locations.id(i).to_string(),
                            time: t,
                        })
                    }
                }
            }
        }
        if self.cells.len() != out.len() {
            // Only possible when cells exist beyond `periods`.
            let (&(i, t), _) = self
                .cells
                .iter()
                .filter(|((_, t), _)| *t > periods)
                .min_by_key(|((i, t), _)| (*i, *t))
                .expect("extra cell exists");
            return Err(InputError::Malformed {
                path: path.to_path_buf(),
                line: 0,
                message: format!(
                    "cell (location '{}', time {t}) lies beyond the {periods} periods of the counts",
                    self.locations.id(i)
                ),
            });
        }
        Ok(out)
    }
}

/// Reads long-format counts; every (location, time) cell for times
/// `1..=max(time)` must be present exactly once.
pub fn ingest_counts(path: &Path) -> InputResult<CountData> {
    let mut reader = open(path)?;
    expect_header(&mut reader, path, &["location_id", "time", "count"])?;
    let mut cells = CellCollector::new(LocationIndex::default());
    for (line, row) in rows(&mut reader, path, 3)? {
        let time = parse_time(path, line, &row[1])?;
        let count: i64 = parse_field(path, line, "count", &row[2])?;
        if count < 0 {
            return Err(InputError::NegativeCount {
                path: path.to_path_buf(),
                line,
                value: count,
            });
        }
        let count = u32::try_from(count).map_err(|_| InputError::Malformed {
            path: path.to_path_buf(),
            line,
            message: format!("count {count} too large"),
        })?;
        cells.insert(path, line, &row[0], time, count)?;
    }
    if cells.locations.is_empty() {
        return Err(InputError::Malformed {
            path: path.to_path_buf(),
            line: 1,
            message: "no data rows".into(),
        });
    }
    let periods = cells.max_time;
    let y = cells.dense(path, periods)?;
    let grid = CountGrid::new(cells.locations.len(), periods, y).expect("dense grid has matching size");
    Ok(CountData {
        grid,
        locations: cells.locations,
    })
}

/// Reads per-cell ZIP baselines. With `reference`, the location set must
/// match it exactly and the grid is returned in its order; `periods`, when
/// given, fixes the number of time periods.
pub fn ingest_baselines(
    path: &Path,
    reference: Option<&LocationIndex>,
    periods: Option<usize>,
) -> InputResult<BaselineData> {
    let mut reader = open(path)?;
    expect_header(&mut reader, path, &["location_id", "time", "p", "mu"])?;
    let start = reference.cloned().unwrap_or_default();
    let mut cells = CellCollector::new(start);
    let mut seen = LocationIndex::default();
    for (line, row) in rows(&mut reader, path, 4)? {
        seen.intern(&row[0]);
        let time = parse_time(path, line, &row[1])?;
        let p: f64 = parse_field(path, line, "p", &row[2])?;
        let mu: f64 = parse_field(path, line, "mu", &row[3])?;
        if !(0.0..1.0).contains(&p) {
            return Err(InputError::InvalidProbability {
                path: path.to_path_buf(),
                line,
                value: p,
            });
        }
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(InputError::InvalidMean {
                path: path.to_path_buf(),
                line,
                value: mu,
            });
        }
        let params = ZipParams::new(p, mu).map_err(|e| InputError::Malformed {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        })?;
        cells.insert(path, line, &row[0], time, params)?;
    }
    if let Some(reference) = reference {
        if let Some(detail) = reference.mismatch(&seen) {
            return Err(InputError::LocationMismatch {
                path: path.to_path_buf(),
                detail,
            });
        }
    }
    if cells.locations.is_empty() {
        return Err(InputError::Malformed {
            path: path.to_path_buf(),
            line: 1,
            message: "no data rows".into(),
        });
    }
    let periods = periods.unwrap_or(cells.max_time);
    let params = cells.dense(path, periods)?;
    let grid = BaselineGrid::new(cells.locations.len(), periods, params).expect("dense grid has matching size");
    Ok(BaselineData {
        grid,
        locations: cells.locations,
    })
}

/// Location ids of a geometry file in file order: row order for coordinates,
/// header order for a matrix.
pub fn geometry_locations(path: &Path) -> InputResult<LocationIndex> {
    let mut reader = open(path)?;
    let header = headers(&mut reader, path)?;
    if header.first().map(String::as_str) != Some("location_id") {
        return Err(InputError::Header {
            path: path.to_path_buf(),
            expected: "location_id,x,y or location_id,<ids...>".into(),
            found: header.join(","),
        });
    }
    if header[1..] == ["x", "y"] {
        let ids = rows(&mut reader, path, 3)?.into_iter().map(|(_, r)| r[0].to_string());
        return Ok(LocationIndex::from_ids(ids));
    }
    Ok(LocationIndex::from_ids(header[1..].iter().cloned()))
}

/// Reads coordinates or a distance matrix, reordered to `reference`.
pub fn ingest_geometry(path: &Path, reference: &LocationIndex) -> InputResult<DistanceMatrix> {
    let mut reader = open(path)?;
    let header = headers(&mut reader, path)?;
    if header.first().map(String::as_str) != Some("location_id") {
        return Err(InputError::Header {
            path: path.to_path_buf(),
            expected: "location_id,x,y or location_id,<ids...>".into(),
            found: header.join(","),
        });
    }
    let geometry_error = |detail: String| InputError::Geometry {
        path: path.to_path_buf(),
        detail,
    };
    let n = reference.len();
    if header[1..] == ["x", "y"] {
        let mut points: Vec<Option<(f64, f64)>> = vec![None; n];
        let mut seen = LocationIndex::default();
        for (line, row) in rows(&mut reader, path, 3)? {
            let x: f64 = parse_field(path, line, "x", &row[1])?;
            let y: f64 = parse_field(path, line, "y", &row[2])?;
            if seen.get(&row[0]).is_some() {
                return Err(geometry_error(format!("line {line}: duplicate location '{}'", &row[0])));
            }
            seen.intern(&row[0]);
            if let Some(i) = reference.get(&row[0]) {
                points[i] = Some((x, y));
            }
        }
        if let Some(detail) = reference.mismatch(&seen) {
            return Err(InputError::LocationMismatch {
                path: path.to_path_buf(),
                detail,
            });
        }
        let points: Vec<(f64, f64)> = points.into_iter().map(|p| p.expect("all locations seen")).collect();
        return DistanceMatrix::euclidean(&points).map_err(|e| geometry_error(e.to_string()));
    }

    let columns = LocationIndex::from_ids(header[1..].iter().cloned());
    if columns.len() != header.len() - 1 {
        return Err(geometry_error("duplicate column ids in matrix header".into()));
    }
    if let Some(detail) = reference.mismatch(&columns) {
        return Err(InputError::LocationMismatch {
            path: path.to_path_buf(),
            detail,
        });
    }
    let mut d = vec![f64::NAN; n * n];
    let mut seen = LocationIndex::default();
    for (line, row) in rows(&mut reader, path, n + 1)? {
        let Some(i) = reference.get(&row[0]) else {
            return Err(InputError::LocationMismatch {
                path: path.to_path_buf(),
                detail: format!("row for unknown location '{}'", &row[0]),
            });
        };
        if seen.get(&row[0]).is_some() {
            return Err(geometry_error(format!("line {line}: duplicate row '{}'", &row[0])));
        }
        seen.intern(&row[0]);
        for (col, raw) in row.iter().skip(1).enumerate() {
            let j = reference.get(columns.id(col)).expect("columns match reference");
            d[i * n + j] = parse_field(path, line, "distance", raw)?;
        }
    }
    if seen.len() != n {
        return Err(geometry_error(format!("matrix has {} rows, expected {n}", seen.len())));
    }
    DistanceMatrix::new(n, d).map_err(|e| geometry_error(e.to_string()))
}

/// Writes counts in the long format read by [`ingest_counts`].
pub fn write_counts(path: &Path, grid: &CountGrid, locations: &LocationIndex) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["location_id", "time", "count"])?;
    for i in 0..grid.locations() {
        for t in 1..=grid.periods() {
            w.write_record([locations.id(i), &t.to_string(), &grid.get(i, t).to_string()])?;
        }
    }
    w.flush()
}

/// Writes baselines in the long format read by [`ingest_baselines`].
pub fn write_baselines(path: &Path, grid: &BaselineGrid, locations: &LocationIndex) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["location_id", "time", "p", "mu"])?;
    for i in 0..grid.locations() {
        for t in 1..=grid.periods() {
            let z = grid.get(i, t);
            w.write_record([locations.id(i), &t.to_string(), &z.p().to_string(), &z.mu().to_string()])?;
        }
    }
    w.flush()
}

/// Writes planar coordinates in the `location_id,x,y` format.
pub fn write_coordinates(path: &Path, points: &[(f64, f64)], locations: &LocationIndex) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["location_id", "x", "y"])?;
    for (i, (x, y)) in points.iter().enumerate() {
        w.write_record([locations.id(i), &x.to_string(), &y.to_string()])?;
    }
    w.flush()
}

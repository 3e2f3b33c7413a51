//! CSV ingestion and output.
//!
//! Stations: `station_id, x, y, t, value` plus covariate columns; grid:
//! `cell_id, x, y, t, value` plus covariate columns; prediction targets:
//! `target_id, x, y, t` plus covariate columns. Missing values are empty
//! cells. Every parse error names the file and line.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use stfusion::geometry::Point;
use stfusion::models::{GridRecord, ModelFamily, ObservationSet, StationRecord};

use crate::config::{CovariateSpec, CovariateTransform, DataConfig};
use crate::error::{CliError, CliResult};

/// A CSV file held in memory.
pub struct Table {
    path: PathBuf,
    headers: Vec<String>,
    rows: Vec<csv::StringRecord>,
}

impl Table {
    pub fn read(path: &Path) -> CliResult<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| CliError::io(path, e))?;
        let headers: Vec<String> = rdr
            .headers()
            .map_err(|e| CliError::io(path, e))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for (i, r) in rdr.records().enumerate() {
            rows.push(r.map_err(|e| CliError::validation(format!("{} line {}: {e}", path.display(), i + 2)))?);
        }
        Ok(Self {
            path: path.to_path_buf(),
            headers,
            rows,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column(&self, name: &str) -> CliResult<usize> {
        self.headers.iter().position(|h| h == name).ok_or_else(|| {
            CliError::validation(format!(
                "{}: missing required column `{name}` (found: {})",
                self.path.display(),
                self.headers.join(", ")
            ))
        })
    }

    fn err(&self, row: usize, msg: impl std::fmt::Display) -> CliError {
        // Line numbers count the header as line 1.
        CliError::validation(format!("{} line {}: {msg}", self.path.display(), row + 2))
    }

    pub fn text(&self, row: usize, col: usize) -> CliResult<&str> {
        match self.rows[row].get(col) {
            Some(s) if !s.is_empty() => Ok(s),
            _ => Err(self.err(row, format!("column `{}` is empty", self.headers[col]))),
        }
    }

    pub fn number(&self, row: usize, col: usize) -> CliResult<f64> {
        self.optional(row, col)?
            .ok_or_else(|| self.err(row, format!("column `{}` is empty", self.headers[col])))
    }

    pub fn optional(&self, row: usize, col: usize) -> CliResult<Option<f64>> {
        let s = self.rows[row].get(col).unwrap_or("");
        if s.is_empty() {
            return Ok(None);
        }
        match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Some(v)),
            _ => Err(self.err(
                row,
                format!("column `{}`: `{s}` is not a finite number", self.headers[col]),
            )),
        }
    }

    /// Time index: an integer of at least 1.
    pub fn time(&self, row: usize, col: usize) -> CliResult<usize> {
        let s = self.text(row, col)?;
        match s.parse::<usize>() {
            Ok(t) if t >= 1 => Ok(t),
            _ => Err(self.err(
                row,
                format!("column `t`: `{s}` is not an integer time index of at least 1"),
            )),
        }
    }
}

enum Term {
    Column(String, CovariateTransform),
    Interaction(Vec<String>, CovariateTransform),
}

/// Maps raw CSV columns to the model's design columns.
pub struct Design {
    intercept: bool,
    terms: Vec<(String, Term)>,
}

impl Design {
    pub fn new(cfg: &DataConfig) -> CliResult<Self> {
        let mut terms = Vec::new();
        for spec in &cfg.covariates {
            let (label, term) = match spec {
                CovariateSpec::Column(c) => (c.clone(), Term::Column(c.clone(), CovariateTransform::Identity)),
                CovariateSpec::Derived(d) => match (&d.column, d.interaction.as_slice()) {
                    (Some(c), []) => (d.transform.label(c), Term::Column(c.clone(), d.transform)),
                    (None, cols) if cols.len() >= 2 => (
                        d.transform.label(&cols.join(":")),
                        Term::Interaction(cols.to_vec(), d.transform),
                    ),
                    _ => {
                        return Err(CliError::validation(
                            "each covariate needs either `column` or an `interaction` of at least two columns",
                        ))
                    }
                },
            };
            let name = match spec {
                CovariateSpec::Derived(d) => d.name.clone().unwrap_or(label),
                _ => label,
            };
            terms.push((name, term));
        }
        let d = Self {
            intercept: cfg.intercept,
            terms,
        };
        let names = d.names();
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(CliError::validation(format!("covariate `{n}` is declared twice")));
            }
        }
        Ok(d)
    }

    pub fn names(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.intercept {
            v.push("intercept".to_string());
        }
        v.extend(self.terms.iter().map(|t| t.0.clone()));
        v
    }

    fn raw_columns(&self) -> Vec<&str> {
        let mut v: Vec<&str> = Vec::new();
        for (_, t) in &self.terms {
            match t {
                Term::Column(c, _) => v.push(c),
                Term::Interaction(cs, _) => v.extend(cs.iter().map(String::as_str)),
            }
        }
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Design-column indices of the raw columns in `table`.
    fn bind(&self, table: &Table) -> CliResult<HashMap<String, usize>> {
        self.raw_columns()
            .into_iter()
            .map(|c| Ok((c.to_string(), table.column(c)?)))
            .collect()
    }

    fn row(&self, table: &Table, cols: &HashMap<String, usize>, i: usize) -> CliResult<Vec<f64>> {
        let mut out = Vec::with_capacity(self.terms.len() + 1);
        if self.intercept {
            out.push(1.0);
        }
        for (name, term) in &self.terms {
            let (raw, tr) = match term {
                Term::Column(c, tr) => (table.number(i, cols[c])?, *tr),
                Term::Interaction(cs, tr) => {
                    let mut p = 1.0;
                    for c in cs {
                        p *= table.number(i, cols[c])?;
                    }
                    (p, *tr)
                }
            };
            out.push(
                tr.apply(raw)
                    .map_err(|m| table.err(i, format!("covariate `{name}`: {m}")))?,
            );
        }
        Ok(out)
    }
}

/// One located row: id, location, time and design covariates.
pub struct LocatedRow {
    pub id: String,
    pub loc: Point,
    pub t: usize,
    pub value: Option<f64>,
    pub covariates: Vec<f64>,
}

/// Reads `id_col, x, y, t[, value]` rows with the design covariates.
pub fn read_rows(path: &Path, id_col: &str, with_value: bool, design: &Design) -> CliResult<Vec<LocatedRow>> {
    let table = Table::read(path)?;
    let id = table.column(id_col)?;
    let (x, y, t) = (table.column("x")?, table.column("y")?, table.column("t")?);
    let value = if with_value { Some(table.column("value")?) } else { None };
    let cols = design.bind(&table)?;
    (0..table.len())
        .map(|i| {
            Ok(LocatedRow {
                id: table.text(i, id)?.to_string(),
                loc: Point::new(table.number(i, x)?, table.number(i, y)?),
                t: table.time(i, t)?,
                value: match value {
                    Some(c) => table.optional(i, c)?,
                    None => None,
                },
                covariates: design.row(&table, &cols, i)?,
            })
        })
        .collect()
}

/// True for a file with no bytes or only a header line.
fn is_blank(path: &Path) -> CliResult<bool> {
    let meta = std::fs::metadata(path).map_err(|e| CliError::io(path, e))?;
    if meta.len() == 0 {
        return Ok(true);
    }
    Ok(Table::read(path)?.is_empty())
}

/// Reads the observation set a configuration points at. The grid is not
/// read for the stations-only family.
pub fn ingest(cfg: &DataConfig, family: ModelFamily) -> CliResult<ObservationSet> {
    let design = Design::new(cfg)?;
    let st_path = cfg
        .stations
        .as_deref()
        .ok_or_else(|| CliError::validation("no station file: set [data] stations or pass --stations"))?;
    let stations: Vec<StationRecord> = read_rows(st_path, "station_id", true, &design)?
        .into_iter()
        .map(|r| StationRecord {
            station_id: r.id,
            loc: r.loc,
            t: r.t,
            value: r.value,
            covariates: r.covariates,
        })
        .collect();
    let grid: Vec<GridRecord> = match (family, cfg.grid.as_deref()) {
        (ModelFamily::StationsOnly, _) => Vec::new(),
        (_, None) => {
            return Err(CliError::validation(format!(
                "the {} model needs a grid file: set [data] grid or pass --grid",
                family.name()
            )))
        }
        (_, Some(p)) if is_blank(p)? => {
            return Err(CliError::validation(format!(
                "{}: the {} model needs grid rows",
                p.display(),
                family.name()
            )))
        }
        (_, Some(p)) => read_rows(p, "cell_id", true, &design)?
            .into_iter()
            .map(|r| GridRecord {
                cell_id: r.id,
                loc: r.loc,
                t: r.t,
                value: r.value,
                covariates: r.covariates,
            })
            .collect(),
    };
    let unit = match cfg.unit {
        stfusion::geometry::Unit::Km => "km",
        stfusion::geometry::Unit::Degrees => "degrees",
    };
    Ok(ObservationSet::new(stations, grid, design.names(), unit)?)
}

/// Shortest representation that parses back to the same `f64`.
pub fn num(v: f64) -> String {
    format!("{v}")
}

/// Writes a CSV file in one pass.
pub fn write_csv<I, R>(path: &Path, header: &[&str], rows: I) -> CliResult<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
    w.write_record(header).map_err(|e| CliError::io(path, e))?;
    for r in rows {
        w.write_record(r.into_iter().collect::<Vec<_>>())
            .map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

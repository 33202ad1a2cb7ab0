//! CSV and JSON file formats.
//!
//! Floats are written with Rust's shortest round-trip formatting, so every
//! table read back through these loaders reproduces the written values bit for
//! bit.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sfofr_core::basis::quadrature_weights;
use sfofr_core::{BasisFamily, BasisSystem, SpatialStructure, TensorSurface};

use crate::error::{CliError, CliResult};

pub const RESPONSE_FILE: &str = "response.csv";
pub const COVARIATE_FILE: &str = "covariate.csv";
pub const LOCATIONS_FILE: &str = "locations.csv";
pub const ADJACENCY_FILE: &str = "adjacency.csv";
pub const DATASET_META_FILE: &str = "dataset.json";

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn reader(path: &Path) -> CliResult<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(file))
}

fn writer(path: &Path) -> CliResult<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    if let csv::ErrorKind::Io(_) = e.kind() {
        let csv::ErrorKind::Io(io) = e.into_kind() else { unreachable!() };
        return CliError::io(path, io);
    }
    CliError::schema(path, e.to_string())
}

fn parse_f64(path: &Path, field: &str, row: usize, col: usize) -> CliResult<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| CliError::schema(path, format!("row {row}, column {col}: `{field}` is not a number")))
}

fn parse_usize(path: &Path, field: &str, row: usize, col: usize) -> CliResult<usize> {
    field
        .trim()
        .parse::<usize>()
        .map_err(|_| CliError::schema(path, format!("row {row}, column {col}: `{field}` is not an index")))
}

fn header(path: &Path, rdr: &mut csv::Reader<fs::File>) -> CliResult<Vec<String>> {
    Ok(rdr
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect())
}

fn expect_header(path: &Path, found: &[String], expected: &[&str]) -> CliResult<()> {
    if found.len() != expected.len() || found.iter().zip(expected).any(|(a, b)| a != b) {
        return Err(CliError::schema(
            path,
            format!("header must be `{}`, found `{}`", expected.join(","), found.join(",")),
        ));
    }
    Ok(())
}

fn records(path: &Path, rdr: &mut csv::Reader<fs::File>) -> CliResult<Vec<csv::StringRecord>> {
    rdr.records().map(|r| r.map_err(|e| csv_err(path, e))).collect()
}

/// Curves sharing one grid, one row per site.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveTable {
    pub ids: Vec<String>,
    pub grid: Vec<f64>,
    /// `n × grid.len()`.
    pub values: DMatrix<f64>,
}

/// Header `id,<grid values>`; each row is a site id followed by its curve.
pub fn read_curves(path: &Path) -> CliResult<CurveTable> {
    let mut rdr = reader(path)?;
    let head = header(path, &mut rdr)?;
    if head.len() < 2 || head[0] != "id" {
        return Err(CliError::schema(path, "header must be `id` followed by grid values"));
    }
    let grid = head[1..]
        .iter()
        .enumerate()
        .map(|(j, s)| parse_f64(path, s, 0, j + 1))
        .collect::<CliResult<Vec<_>>>()?;
    let rows = records(path, &mut rdr)?;
    let mut ids = Vec::with_capacity(rows.len());
    let mut values = DMatrix::zeros(rows.len(), grid.len());
    for (i, rec) in rows.iter().enumerate() {
        ids.push(rec[0].trim().to_string());
        for j in 0..grid.len() {
            values[(i, j)] = parse_f64(path, &rec[j + 1], i + 1, j + 1)?;
        }
    }
    check_unique(path, &ids)?;
    Ok(CurveTable { ids, grid, values })
}

pub fn write_curves(path: &Path, ids: &[String], grid: &[f64], values: &DMatrix<f64>) -> CliResult<()> {
    let mut w = writer(path)?;
    let mut head = vec!["id".to_string()];
    head.extend(grid.iter().map(|g| g.to_string()));
    w.write_record(&head).map_err(|e| csv_err(path, e))?;
    for (i, id) in ids.iter().enumerate() {
        let mut row = vec![id.clone()];
        row.extend(values.row(i).iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn check_unique(path: &Path, ids: &[String]) -> CliResult<()> {
    let mut seen = HashMap::with_capacity(ids.len());
    for (i, id) in ids.iter().enumerate() {
        if let Some(first) = seen.insert(id.as_str(), i) {
            return Err(CliError::schema(path, format!("duplicate id `{id}` on rows {} and {}", first + 1, i + 1)));
        }
    }
    Ok(())
}

/// `id,x,y`.
pub fn read_locations(path: &Path) -> CliResult<(Vec<String>, DMatrix<f64>)> {
    let mut rdr = reader(path)?;
    expect_header(path, &header(path, &mut rdr)?, &["id", "x", "y"])?;
    let rows = records(path, &mut rdr)?;
    let mut ids = Vec::with_capacity(rows.len());
    let mut coords = DMatrix::zeros(rows.len(), 2);
    for (i, rec) in rows.iter().enumerate() {
        ids.push(rec[0].trim().to_string());
        coords[(i, 0)] = parse_f64(path, &rec[1], i + 1, 1)?;
        coords[(i, 1)] = parse_f64(path, &rec[2], i + 1, 2)?;
    }
    check_unique(path, &ids)?;
    Ok((ids, coords))
}

pub fn write_locations(path: &Path, ids: &[String], coords: &DMatrix<f64>) -> CliResult<()> {
    let mut w = writer(path)?;
    w.write_record(["id", "x", "y"]).map_err(|e| csv_err(path, e))?;
    for (i, id) in ids.iter().enumerate() {
        w.write_record([id.clone(), coords[(i, 0)].to_string(), coords[(i, 1)].to_string()])
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Edge list `from,to` of site ids, turned into a symmetric 0/1 adjacency
/// ordered like `ids`.
pub fn read_adjacency(path: &Path, ids: &[String]) -> CliResult<DMatrix<f64>> {
    let mut rdr = reader(path)?;
    expect_header(path, &header(path, &mut rdr)?, &["from", "to"])?;
    let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let n = ids.len();
    let mut adj = DMatrix::zeros(n, n);
    for (r, rec) in records(path, &mut rdr)?.iter().enumerate() {
        let lookup = |s: &str| {
            index
                .get(s.trim())
                .copied()
                .ok_or_else(|| CliError::schema(path, format!("row {}: unknown site id `{}`", r + 1, s.trim())))
        };
        let (a, b) = (lookup(&rec[0])?, lookup(&rec[1])?);
        if a == b {
            return Err(CliError::schema(path, format!("row {}: self-loop on `{}`", r + 1, ids[a])));
        }
        adj[(a, b)] = 1.0;
        adj[(b, a)] = 1.0;
    }
    Ok(adj)
}

/// Each undirected edge once, lower index first.
pub fn write_adjacency(path: &Path, ids: &[String], adjacency: &DMatrix<f64>) -> CliResult<()> {
    let mut w = writer(path)?;
    w.write_record(["from", "to"]).map_err(|e| csv_err(path, e))?;
    for i in 0..ids.len() {
        for j in i + 1..ids.len() {
            if adjacency[(i, j)] != 0.0 {
                w.write_record([&ids[i], &ids[j]]).map_err(|e| csv_err(path, e))?;
            }
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Numeric table with a header row of column names.
pub fn read_matrix(path: &Path) -> CliResult<(Vec<String>, DMatrix<f64>)> {
    let mut rdr = reader(path)?;
    let head = header(path, &mut rdr)?;
    let rows = records(path, &mut rdr)?;
    let mut m = DMatrix::zeros(rows.len(), head.len());
    for (i, rec) in rows.iter().enumerate() {
        for j in 0..head.len() {
            m[(i, j)] = parse_f64(path, &rec[j], i + 1, j)?;
        }
    }
    Ok((head, m))
}

pub fn write_matrix(path: &Path, columns: &[String], m: &DMatrix<f64>) -> CliResult<()> {
    if columns.len() != m.ncols() {
        return Err(CliError::Dimension(format!(
            "{}: {} column names for {} columns",
            path.display(),
            columns.len(),
            m.ncols()
        )));
    }
    let mut w = writer(path)?;
    w.write_record(columns).map_err(|e| csv_err(path, e))?;
    for i in 0..m.nrows() {
        w.write_record(m.row(i).iter().map(|v| v.to_string()))
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Column names `prefix1, prefix2, …`.
pub fn numbered(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

/// Basis values, one row per basis function, header = grid points.
pub fn write_basis(path: &Path, basis: &BasisSystem) -> CliResult<()> {
    let head: Vec<String> = basis.grid.iter().map(|g| g.to_string()).collect();
    write_matrix(path, &head, &basis.values)
}

pub fn read_basis(path: &Path, family: BasisFamily, domain: (f64, f64)) -> CliResult<BasisSystem> {
    let (head, values) = read_matrix(path)?;
    let grid = head
        .iter()
        .enumerate()
        .map(|(j, s)| parse_f64(path, s, 0, j))
        .collect::<CliResult<Vec<_>>>()?;
    let quad_weights = quadrature_weights(&grid, domain)?;
    Ok(BasisSystem {
        family,
        domain,
        grid,
        values,
        quad_weights,
    })
}

/// Long format `r,t,value`, `t` varying fastest.
pub fn write_surface(path: &Path, surface: &TensorSurface) -> CliResult<()> {
    let mut w = writer(path)?;
    w.write_record(["r", "t", "value"]).map_err(|e| csv_err(path, e))?;
    for (i, r) in surface.r_grid.iter().enumerate() {
        for (j, t) in surface.t_grid.iter().enumerate() {
            w.write_record([r.to_string(), t.to_string(), surface.values[(i, j)].to_string()])
                .map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_surface(path: &Path) -> CliResult<TensorSurface> {
    let mut rdr = reader(path)?;
    expect_header(path, &header(path, &mut rdr)?, &["r", "t", "value"])?;
    let rows = records(path, &mut rdr)?;
    let mut triples = Vec::with_capacity(rows.len());
    for (i, rec) in rows.iter().enumerate() {
        triples.push((
            parse_f64(path, &rec[0], i + 1, 0)?,
            parse_f64(path, &rec[1], i + 1, 1)?,
            parse_f64(path, &rec[2], i + 1, 2)?,
        ));
    }
    let nt = triples.iter().take_while(|x| x.0 == triples[0].0).count();
    if nt == 0 || triples.len() % nt != 0 {
        return Err(CliError::schema(path, "surface rows do not form a full r × t lattice"));
    }
    let nr = triples.len() / nt;
    let r_grid: Vec<f64> = (0..nr).map(|i| triples[i * nt].0).collect();
    let t_grid: Vec<f64> = triples[..nt].iter().map(|x| x.1).collect();
    let mut values = DMatrix::zeros(nr, nt);
    for (k, &(r, t, v)) in triples.iter().enumerate() {
        let (i, j) = (k / nt, k % nt);
        if r != r_grid[i] || t != t_grid[j] {
            return Err(CliError::schema(path, format!("row {}: lattice order broken", k + 1)));
        }
        values[(i, j)] = v;
    }
    Ok(TensorSurface::new(r_grid, t_grid, values)?)
}

/// Mesh vertices `x,y` and triangles `a,b,c` (0-based vertex indices).
pub fn write_triangles(path: &Path, triangles: &[[usize; 3]]) -> CliResult<()> {
    let mut w = writer(path)?;
    w.write_record(["a", "b", "c"]).map_err(|e| csv_err(path, e))?;
    for t in triangles {
        w.write_record(t.iter().map(|v| v.to_string()))
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_triangles(path: &Path) -> CliResult<Vec<[usize; 3]>> {
    let mut rdr = reader(path)?;
    expect_header(path, &header(path, &mut rdr)?, &["a", "b", "c"])?;
    records(path, &mut rdr)?
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            Ok([
                parse_usize(path, &rec[0], i + 1, 0)?,
                parse_usize(path, &rec[1], i + 1, 1)?,
                parse_usize(path, &rec[2], i + 1, 2)?,
            ])
        })
        .collect()
}

/// One row of a kriging table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KrigingRow {
    pub site: String,
    pub t: f64,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

pub fn write_kriging(
    path: &Path,
    ids: &[String],
    t_grid: &[f64],
    mean: &DMatrix<f64>,
    lower: &DMatrix<f64>,
    upper: &DMatrix<f64>,
) -> CliResult<()> {
    let mut w = writer(path)?;
    for (i, id) in ids.iter().enumerate() {
        for (j, &t) in t_grid.iter().enumerate() {
            w.serialize(KrigingRow {
                site: id.clone(),
                t,
                mean: mean[(i, j)],
                lower: lower[(i, j)],
                upper: upper[(i, j)],
            })
            .map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_kriging(path: &Path) -> CliResult<Vec<KrigingRow>> {
    let mut rdr = reader(path)?;
    expect_header(path, &header(path, &mut rdr)?, &["site", "t", "mean", "lower", "upper"])?;
    rdr.deserialize().map(|r| r.map_err(|e| csv_err(path, e))).collect()
}

/// One row of a variogram table; `gamma` and `n_pairs` are empty for a
/// variogram given rather than estimated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariogramRow {
    pub lag: f64,
    pub gamma: Option<f64>,
    pub n_pairs: Option<usize>,
    pub fitted_gamma: f64,
}

pub fn write_variogram(path: &Path, rows: &[VariogramRow]) -> CliResult<()> {
    let mut w = writer(path)?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_variogram(path: &Path) -> CliResult<Vec<VariogramRow>> {
    let mut rdr = reader(path)?;
    expect_header(path, &header(path, &mut rdr)?, &["lag", "gamma", "n_pairs", "fitted_gamma"])?;
    rdr.deserialize().map(|r| r.map_err(|e| csv_err(path, e))).collect()
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::schema(path, e.to_string()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("output types serialize");
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

/// Optional domain bounds of the curve grids; grid endpoints when absent.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetMeta {
    pub t_domain: Option<(f64, f64)>,
    pub r_domain: Option<(f64, f64)>,
}

/// A dataset directory: curve tables plus optional spatial metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetDir {
    pub ids: Vec<String>,
    pub t_grid: Vec<f64>,
    pub r_grid: Vec<f64>,
    pub response: Option<DMatrix<f64>>,
    pub covariate: DMatrix<f64>,
    pub coords: Option<DMatrix<f64>>,
    pub adjacency: Option<DMatrix<f64>>,
    pub meta: DatasetMeta,
}

impl DatasetDir {
    pub fn n_sites(&self) -> usize {
        self.ids.len()
    }

    pub fn t_domain(&self) -> (f64, f64) {
        self.meta
            .t_domain
            .unwrap_or((self.t_grid[0], *self.t_grid.last().expect("non-empty grid")))
    }

    pub fn r_domain(&self) -> (f64, f64) {
        self.meta
            .r_domain
            .unwrap_or((self.r_grid[0], *self.r_grid.last().expect("non-empty grid")))
    }

    pub fn spatial(&self, point: bool) -> CliResult<Option<SpatialStructure>> {
        Ok(match (point, &self.coords, &self.adjacency) {
            (true, Some(c), _) => Some(SpatialStructure::continuous(c.clone())?),
            (false, _, Some(a)) => Some(SpatialStructure::discrete(a.clone())?),
            _ => None,
        })
    }

    /// Response curves, required by commands that score or fit.
    pub fn require_response(&self, dir: &Path) -> CliResult<&DMatrix<f64>> {
        self.response
            .as_ref()
            .ok_or_else(|| CliError::MissingFile(dir.join(RESPONSE_FILE)))
    }
}

fn reorder_rows(path: &Path, ids: &[String], file_ids: &[String], m: &DMatrix<f64>) -> CliResult<DMatrix<f64>> {
    if file_ids.len() != ids.len() {
        return Err(CliError::Dimension(format!(
            "{}: {} sites, curves have {}",
            path.display(),
            file_ids.len(),
            ids.len()
        )));
    }
    let index: HashMap<&str, usize> = file_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut out = DMatrix::zeros(ids.len(), m.ncols());
    for (i, id) in ids.iter().enumerate() {
        let src = *index
            .get(id.as_str())
            .ok_or_else(|| CliError::schema(path, format!("no row for site `{id}`")))?;
        out.set_row(i, &m.row(src));
    }
    Ok(out)
}

/// Load `covariate.csv` and, when present, `response.csv`, `locations.csv`,
/// `adjacency.csv` and `dataset.json`. Rows follow the covariate file.
pub fn load_dataset(dir: &Path) -> CliResult<DatasetDir> {
    let covariate = read_curves(&dir.join(COVARIATE_FILE))?;
    let ids = covariate.ids;
    let response_path = dir.join(RESPONSE_FILE);
    let (t_grid, response) = if response_path.exists() {
        let table = read_curves(&response_path)?;
        let values = reorder_rows(&response_path, &ids, &table.ids, &table.values)?;
        (table.grid, Some(values))
    } else {
        (covariate.grid.clone(), None)
    };
    let loc_path = dir.join(LOCATIONS_FILE);
    let coords = if loc_path.exists() {
        let (loc_ids, c) = read_locations(&loc_path)?;
        Some(reorder_rows(&loc_path, &ids, &loc_ids, &c)?)
    } else {
        None
    };
    let adj_path = dir.join(ADJACENCY_FILE);
    let adjacency = if adj_path.exists() {
        Some(read_adjacency(&adj_path, &ids)?)
    } else {
        None
    };
    let meta_path = dir.join(DATASET_META_FILE);
    let meta = if meta_path.exists() {
        read_json(&meta_path)?
    } else {
        DatasetMeta::default()
    };
    Ok(DatasetDir {
        ids,
        t_grid,
        r_grid: covariate.grid,
        response,
        covariate: covariate.values,
        coords,
        adjacency,
        meta,
    })
}

pub fn write_dataset(dir: &Path, data: &DatasetDir) -> CliResult<()> {
    ensure_dir(dir)?;
    if let Some(y) = &data.response {
        write_curves(&dir.join(RESPONSE_FILE), &data.ids, &data.t_grid, y)?;
    }
    write_curves(&dir.join(COVARIATE_FILE), &data.ids, &data.r_grid, &data.covariate)?;
    if let Some(c) = &data.coords {
        write_locations(&dir.join(LOCATIONS_FILE), &data.ids, c)?;
    }
    if let Some(a) = &data.adjacency {
        write_adjacency(&dir.join(ADJACENCY_FILE), &data.ids, a)?;
    }
    write_json(&dir.join(DATASET_META_FILE), &data.meta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curves_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        let ids = vec!["a".to_string(), "b".to_string()];
        let grid = vec![0.1, 0.2, 1.0 / 3.0];
        let values = DMatrix::from_row_slice(2, 3, &[1e-300, -2.5, std::f64::consts::PI, 0.0, 7.0, 1.0 / 7.0]);
        write_curves(&path, &ids, &grid, &values).unwrap();
        let back = read_curves(&path).unwrap();
        assert_eq!(back, CurveTable { ids, grid, values });
    }

    #[test]
    fn schema_errors_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.csv");
        fs::write(&path, "id,x,z\na,1,2\n").unwrap();
        assert_eq!(read_locations(&path).unwrap_err().code(), "schema_violation");
        fs::write(&path, "id,x,y\na,1,oops\n").unwrap();
        assert_eq!(read_locations(&path).unwrap_err().code(), "schema_violation");
        assert_eq!(read_locations(&dir.path().join("none.csv")).unwrap_err().code(), "missing_file");
    }

    #[test]
    fn adjacency_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        let ids: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
        let adj = DMatrix::from_row_slice(3, 3, &[0., 1., 0., 1., 0., 1., 0., 1., 0.]);
        write_adjacency(&path, &ids, &adj).unwrap();
        assert_eq!(read_adjacency(&path, &ids).unwrap(), adj);
    }

    #[test]
    fn surface_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let s = TensorSurface::new(vec![1.0, 2.0], vec![0.5, 1.5, 2.5], DMatrix::from_fn(2, 3, |i, j| (i * 3 + j) as f64 / 3.0)).unwrap();
        write_surface(&path, &s).unwrap();
        assert_eq!(read_surface(&path).unwrap(), s);
    }
}

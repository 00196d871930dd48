//! On-disk formats.
//!
//! Arrays are stored as raw little-endian `f64`, row-major, next to a JSON
//! sidecar with the same stem and a `.json` extension. Images can also be
//! exported as 8-bit PGM for viewing.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::acquisition::CsData;
use crate::csdesign::{assemble_block_diagonal, make_cs_matrix, SelectionList, StructureSpec, StructuredCsMatrix};
use crate::error::{Error, Result};
use crate::geometry::{make_sensor_geometry, ImageGrid, SensorGeometry, SourceImage, TimeGrid};
use crate::recon::{RecoveredMeans, SliceReport};
use crate::scalar::Real;
use crate::wave::{MeansData, PressureData, SensorSeries};

/// JSON sidecar describing a raw array file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Sidecar {
    Image {
        n_r: usize,
        #[serde(rename = "R")]
        radius: f64,
    },
    Pressure {
        n: usize,
        q: usize,
        #[serde(rename = "R")]
        radius: f64,
        #[serde(rename = "Omega")]
        coverage: f64,
    },
    Means {
        n: usize,
        q: usize,
        #[serde(rename = "R")]
        radius: f64,
        #[serde(rename = "Omega")]
        coverage: f64,
    },
    Csdata {
        m: usize,
        q: usize,
        matrix: String,
    },
}

/// Path of the sidecar belonging to `data`.
pub fn sidecar_path(data: &Path) -> PathBuf {
    data.with_extension("json")
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn read_json<S: for<'de> Deserialize<'de>>(path: &Path) -> Result<S> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| format_err(path, e.to_string()))
}

fn write_raw<T: Real>(path: &Path, values: ArrayView2<T>) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values.iter() {
        bytes.extend_from_slice(&v.as_f64().to_le_bytes());
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&bytes)?;
    Ok(())
}

fn read_raw<T: Real>(path: &Path, shape: (usize, usize)) -> Result<Array2<T>> {
    let bytes = fs::read(path)?;
    let expected = shape.0 * shape.1 * 8;
    if bytes.len() != expected {
        return Err(format_err(
            path,
            format!("expected {expected} bytes for a {}x{} array, found {}", shape.0, shape.1, bytes.len()),
        ));
    }
    let data: Vec<T> = bytes
        .chunks_exact(8)
        .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("chunk of 8"))))
        .collect();
    Array2::from_shape_vec(shape, data).map_err(|e| format_err(path, e.to_string()))
}

pub fn write_image<T: Real>(path: &Path, image: &SourceImage<T>) -> Result<()> {
    write_raw(path, image.values().view())?;
    let grid = image.grid();
    write_json(
        &sidecar_path(path),
        &Sidecar::Image {
            n_r: grid.n_r(),
            radius: grid.radius().as_f64(),
        },
    )
}

/// Reads an image; values outside the detection circle are zeroed.
pub fn read_image<T: Real>(path: &Path) -> Result<SourceImage<T>> {
    let side = sidecar_path(path);
    match read_json::<Sidecar>(&side)? {
        Sidecar::Image { n_r, radius } => {
            let grid = ImageGrid::new(n_r, T::lit(radius))?;
            SourceImage::masked(grid, read_raw(path, (n_r, n_r))?)
        }
        other => Err(format_err(&side, format!("expected an image sidecar, found {other:?}"))),
    }
}

fn series_sidecar<T: Real, S: SensorSeries<T>>(series: &S, means: bool) -> Sidecar {
    let g = series.geometry();
    let (n, q) = (g.n(), series.times().q());
    let (radius, coverage) = (g.radius().as_f64(), g.coverage().as_f64());
    if means {
        Sidecar::Means { n, q, radius, coverage }
    } else {
        Sidecar::Pressure { n, q, radius, coverage }
    }
}

pub fn write_pressure<T: Real>(path: &Path, p: &PressureData<T>) -> Result<()> {
    write_raw(path, p.values().view())?;
    write_json(&sidecar_path(path), &series_sidecar(p, false))
}

pub fn write_means<T: Real>(path: &Path, m: &MeansData<T>) -> Result<()> {
    write_raw(path, m.values().view())?;
    write_json(&sidecar_path(path), &series_sidecar(m, true))
}

fn read_series<T: Real>(path: &Path, want_means: bool) -> Result<(SensorGeometry<T>, TimeGrid<T>, Array2<T>)> {
    let side = sidecar_path(path);
    let (n, q, radius, coverage) = match read_json::<Sidecar>(&side)? {
        Sidecar::Means { n, q, radius, coverage } if want_means => (n, q, radius, coverage),
        Sidecar::Pressure { n, q, radius, coverage } if !want_means => (n, q, radius, coverage),
        other => {
            let want = if want_means { "means" } else { "pressure" };
            return Err(format_err(&side, format!("expected a {want} sidecar, found {other:?}")));
        }
    };
    let geom = make_sensor_geometry(n, T::lit(radius), T::lit(coverage))?;
    let times = TimeGrid::new(q, T::lit(radius))?;
    Ok((geom, times, read_raw(path, (n, q))?))
}

pub fn read_pressure<T: Real>(path: &Path) -> Result<PressureData<T>> {
    let (g, t, v) = read_series(path, false)?;
    PressureData::new(g, t, v)
}

pub fn read_means<T: Real>(path: &Path) -> Result<MeansData<T>> {
    let (g, t, v) = read_series(path, true)?;
    MeansData::new(g, t, v)
}

pub fn write_cs_data<T: Real>(path: &Path, y: &CsData<T>) -> Result<()> {
    write_raw(path, y.values().view())?;
    write_json(
        &sidecar_path(path),
        &Sidecar::Csdata {
            m: y.m(),
            q: y.times().q(),
            matrix: y.matrix_ref().to_owned(),
        },
    )
}

/// Reads compressed data. The sidecar carries no radius, so the caller
/// supplies the detection radius that fixes the time grid.
pub fn read_cs_data<T: Real>(path: &Path, radius: T) -> Result<CsData<T>> {
    let side = sidecar_path(path);
    match read_json::<Sidecar>(&side)? {
        Sidecar::Csdata { m, q, matrix } => {
            let times = TimeGrid::new(q, radius)?;
            CsData::new(matrix, times, read_raw(path, (m, q))?)
        }
        other => Err(format_err(&side, format!("expected a csdata sidecar, found {other:?}"))),
    }
}

/// Recovered means are stored exactly like [`MeansData`].
pub fn write_recovered<T: Real>(path: &Path, rec: &RecoveredMeans<T>, geometry: &SensorGeometry<T>) -> Result<()> {
    write_means(path, &rec.clone().into_means(geometry.clone())?)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolverDiagnostics<'a, T> {
    pub slices: usize,
    pub unconverged: usize,
    pub total_iterations: usize,
    pub per_slice: &'a [SliceReport<T>],
}

impl<'a, T: Real> SolverDiagnostics<'a, T> {
    pub fn new(rec: &'a RecoveredMeans<T>) -> Self {
        Self {
            slices: rec.slices().len(),
            unconverged: rec.unconverged(),
            total_iterations: rec.slices().iter().map(|s| s.iterations).sum(),
            per_slice: rec.slices(),
        }
    }
}

pub fn write_diagnostics<T: Real + Serialize>(path: &Path, rec: &RecoveredMeans<T>) -> Result<()> {
    write_json(path, &SolverDiagnostics::new(rec))
}

/// 8-bit binary PGM, min-max normalised; a constant array maps to black.
pub fn pgm_bytes<T: Real>(values: ArrayView2<T>) -> Vec<u8> {
    let (rows, cols) = values.dim();
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            let v = v.as_f64();
            (lo.min(v), hi.max(v))
        });
    let span = hi - lo;
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(values.iter().map(|v| {
        if span > 0.0 {
            ((v.as_f64() - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8
        } else {
            0
        }
    }));
    out
}

pub fn write_pgm<T: Real>(path: &Path, values: ArrayView2<T>) -> Result<()> {
    fs::write(path, pgm_bytes(values))?;
    Ok(())
}

/// Sidecar of a matrix CSV. `selection_lists` stacks the lists of all groups,
/// `m0` rows per group, in group order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixMeta {
    pub b: usize,
    pub g: usize,
    pub group_count: usize,
    pub m0: usize,
    pub k: usize,
    pub sin: f64,
    pub seed: u64,
    pub selection_lists: Vec<Vec<u8>>,
}

impl MatrixMeta {
    pub fn new(matrix: &StructuredCsMatrix, k: usize, sin: f64, seed: u64) -> Self {
        let spec = matrix.spec();
        Self {
            b: spec.block_size,
            g: spec.blocks_per_group,
            group_count: matrix.origin().len(),
            m0: spec.m0,
            k,
            sin,
            seed,
            selection_lists: matrix.origin().iter().flat_map(|l| l.rows().iter().cloned()).collect(),
        }
    }

    pub fn spec(&self) -> Result<StructureSpec> {
        StructureSpec::new(self.b, self.g, self.group_count, self.m0)
    }

    /// Rebuilds the matrix from the stored selection lists.
    pub fn matrix(&self) -> Result<StructuredCsMatrix> {
        let spec = self.spec()?;
        if self.selection_lists.len() != self.m0 * self.group_count {
            return Err(Error::DimensionMismatch {
                what: "selection list rows",
                expected: self.m0 * self.group_count,
                actual: self.selection_lists.len(),
            });
        }
        let group_spec = StructureSpec { group_count: 1, ..spec };
        let groups = self
            .selection_lists
            .chunks(self.m0)
            .map(|rows| {
                let list = SelectionList::new(rows.to_vec());
                list.validate(&group_spec)?;
                make_cs_matrix(&list, &group_spec)
            })
            .collect::<Result<Vec<_>>>()?;
        assemble_block_diagonal(&groups)
    }
}

pub fn matrix_csv(matrix: &StructuredCsMatrix) -> String {
    let mut out = String::new();
    for row in matrix.entries().rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn write_matrix(path: &Path, matrix: &StructuredCsMatrix, meta: &MatrixMeta) -> Result<()> {
    fs::write(path, matrix_csv(matrix))?;
    write_json(&sidecar_path(path), meta)
}

/// Reads a matrix CSV and checks it against the selection lists in its sidecar.
pub fn read_matrix(path: &Path) -> Result<(StructuredCsMatrix, MatrixMeta)> {
    let meta: MatrixMeta = read_json(&sidecar_path(path))?;
    let matrix = meta.matrix()?;
    let text = fs::read_to_string(path)?;
    let rows: Vec<Vec<u8>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(',')
                .map(|c| c.trim().parse::<u8>().map_err(|e| format_err(path, e.to_string())))
                .collect()
        })
        .collect::<Result<_>>()?;
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(format_err(path, "rows of unequal length"));
    }
    let entries = Array2::from_shape_vec((rows.len(), cols), rows.concat()).map_err(|e| format_err(path, e.to_string()))?;
    if entries != *matrix.entries() {
        return Err(format_err(path, "entries disagree with the selection lists in the sidecar"));
    }
    Ok((matrix, meta))
}

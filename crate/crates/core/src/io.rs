//! File formats: sampled varieties, inner products, CSV tables.
//!
//! Floats are written with the shortest representation that parses back to
//! the same bits, so every save/load cycle is exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bergman::{InnerProduct, Provenance};
use crate::error::{Error, Result};
use crate::geometry::{Chart, ChartGrid, SectionFrame};
use crate::linalg::{CMat, C64};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampledPoint {
    pub params: Vec<f64>,
    pub weight: f64,
    pub z: Vec<[f64; 2]>,
    /// One row of `dim` entries per chart coordinate.
    pub dz: Vec<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampledVariety {
    pub level_k: u32,
    pub dim: usize,
    pub n_coords: usize,
    pub points: Vec<SampledPoint>,
    #[serde(rename = "volume_V")]
    pub volume_v: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub torus_weights: Option<Vec<Vec<i64>>>,
    /// Seed of the run that wrote the file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn pair(v: C64) -> [f64; 2] {
    [v.re, v.im]
}

fn cplx(v: [f64; 2]) -> C64 {
    C64::new(v[0], v[1])
}

impl SampledVariety {
    pub fn from_frame(frame: &SectionFrame) -> Self {
        let n = frame.n_coords();
        let points = (0..frame.n_points())
            .map(|p| SampledPoint {
                params: frame.grid.params[p].clone(),
                weight: frame.grid.weights[p],
                z: frame.z_at(p).iter().copied().map(pair).collect(),
                dz: (0..n).map(|a| frame.dz_at(p, a).iter().copied().map(pair).collect()).collect(),
            })
            .collect();
        Self {
            level_k: frame.level_k,
            dim: frame.dim,
            n_coords: n,
            points,
            volume_v: frame.volume_v,
            torus_weights: frame.torus_weights.clone(),
            seed: None,
        }
    }

    /// Shape checks, then the frame invariants.
    pub fn into_frame(self) -> Result<SectionFrame> {
        let (dim, n) = (self.dim, self.n_coords);
        if dim == 0 || n == 0 {
            return Err(Error::Parse("dim and n_coords must be positive".into()));
        }
        if self.points.is_empty() {
            return Err(Error::Parse("no sample points".into()));
        }
        if !(self.volume_v > 0.0) {
            return Err(Error::Parse(format!("volume_V must be positive, got {}", self.volume_v)));
        }
        let n_params = self.points[0].params.len();
        let mut z = Vec::with_capacity(self.points.len() * dim);
        let mut dz = Vec::with_capacity(self.points.len() * n * dim);
        let mut params = Vec::with_capacity(self.points.len());
        let mut weights = Vec::with_capacity(self.points.len());
        for (i, pt) in self.points.into_iter().enumerate() {
            if pt.z.len() != dim {
                return Err(Error::Parse(format!("point {i}: z has {} entries, expected {dim}", pt.z.len())));
            }
            if pt.dz.len() != n || pt.dz.iter().any(|row| row.len() != dim) {
                return Err(Error::Parse(format!("point {i}: dz must be {n} rows of {dim} entries")));
            }
            if pt.params.len() != n_params {
                return Err(Error::Parse(format!("point {i}: {} params, expected {n_params}", pt.params.len())));
            }
            z.extend(pt.z.into_iter().map(cplx));
            dz.extend(pt.dz.into_iter().flatten().map(cplx));
            params.push(pt.params);
            weights.push(pt.weight);
        }
        let grid = ChartGrid {
            chart_id: 0,
            n_coords: n,
            params,
            weights,
            coords: Vec::new(),
            periodic: vec![false; n_params],
            chart: Chart::Sampled,
        };
        let frame = SectionFrame { level_k: self.level_k, dim, grid, z, dz, torus_weights: self.torus_weights, volume_v: self.volume_v };
        frame.validate()?;
        Ok(frame)
    }
}

pub fn load_sampled_variety(path: &Path) -> Result<SectionFrame> {
    let text = fs::read_to_string(path)?;
    let sv: SampledVariety = serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
    sv.into_frame()
}

pub fn save_sampled_variety(path: &Path, frame: &SectionFrame, seed: Option<u64>) -> Result<()> {
    write_json(path, &SampledVariety { seed, ..SampledVariety::from_frame(frame) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InnerProductFile {
    pub level_k: u32,
    pub dim: usize,
    /// Row-major `[re, im]` pairs.
    pub entries: Vec<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl InnerProductFile {
    pub fn from_matrix(level_k: u32, m: &CMat) -> Self {
        let entries = (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| pair(m[(i, j)])).collect()).collect();
        Self { level_k, dim: m.nrows(), entries, seed: None }
    }

    pub fn to_matrix(&self) -> Result<CMat> {
        if self.entries.len() != self.dim || self.entries.iter().any(|r| r.len() != self.dim) {
            return Err(Error::Parse(format!("entries must be a {0}×{0} array", self.dim)));
        }
        Ok(CMat::from_fn(self.dim, self.dim, |i, j| cplx(self.entries[i][j])))
    }
}

pub fn save_inner_product(path: &Path, h: &InnerProduct, seed: Option<u64>) -> Result<()> {
    write_json(path, &InnerProductFile { seed, ..InnerProductFile::from_matrix(h.level_k, &h.h) })
}

pub fn load_inner_product(path: &Path) -> Result<InnerProduct> {
    let text = fs::read_to_string(path)?;
    let f: InnerProductFile = serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
    InnerProduct::new(f.to_matrix()?, f.level_k, Provenance::Loaded)
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().ok_or_else(|| Error::Config(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.{}.tmp", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Comma-separated table with a header row.
pub fn csv_string(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    out
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    write_atomic(path, csv_string(header, rows).as_bytes())
}

/// Float formatting used in CSV cells: round-trip exact.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

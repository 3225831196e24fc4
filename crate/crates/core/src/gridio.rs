//! Channel-grid persistence: `<prefix>.meta.json` plus `<prefix>.grid.csv`.
//!
//! This is also the ingestion point for externally measured grids, so import
//! is strict about ordering, counts and finiteness.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{FrequencyPlan, Position};
use crate::scanpath::{ScanPath, ScanPlane};
use crate::scene::ChannelGrid;

pub const FORMAT_VERSION: u32 = 1;
pub const GRID_HEADER: [&str; 8] = ["point_index", "x_m", "y_m", "z_m", "user", "subcarrier", "re", "im"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub format_version: u32,
    pub carrier_frequency_hz: f64,
    pub bandwidth_hz: f64,
    pub num_subcarriers: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub used_fraction: Option<f64>,
    pub users: Vec<Position>,
    pub scan_plane: ScanPlane,
    pub fine_pitch_m: f64,
    pub coarse_pitch_m: f64,
    pub point_count: usize,
    /// Stored tone indices. When absent they are read from the data rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subcarriers: Option<Vec<usize>>,
}

fn paths(prefix: &Path) -> (PathBuf, PathBuf) {
    let s = prefix.as_os_str().to_string_lossy();
    (PathBuf::from(format!("{s}.meta.json")), PathBuf::from(format!("{s}.grid.csv")))
}

/// 17 significant digits.
fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn export_grid(grid: &ChannelGrid, prefix: &Path) -> Result<(PathBuf, PathBuf)> {
    let (meta_path, data_path) = paths(prefix);
    if let Some(dir) = meta_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let plan = grid.plan();
    let path = grid.path();
    let meta = GridMeta {
        format_version: FORMAT_VERSION,
        carrier_frequency_hz: plan.carrier_frequency_hz,
        bandwidth_hz: plan.bandwidth_hz,
        num_subcarriers: plan.num_subcarriers,
        used_fraction: Some(plan.used_fraction),
        users: grid.users().to_vec(),
        scan_plane: path.plane(),
        fine_pitch_m: path.fine_pitch(),
        coarse_pitch_m: path.coarse_pitch(),
        point_count: grid.num_points(),
        subcarriers: Some(grid.subcarriers().to_vec()),
    };
    fs::write(&meta_path, serde_json::to_string_pretty(&meta).expect("meta serializes"))?;

    let mut out = std::io::BufWriter::new(fs::File::create(&data_path)?);
    writeln!(out, "{}", GRID_HEADER.join(","))?;
    let nu = grid.num_users();
    for (m, p) in path.points().iter().enumerate() {
        let (x, y, z) = (num(p.x), num(p.y), num(p.z));
        for u in 0..nu {
            for (slot, &sc) in grid.subcarriers().iter().enumerate() {
                let c = grid.get(m, u, slot);
                writeln!(out, "{m},{x},{y},{z},{u},{sc},{},{}", num(c.re), num(c.im))?;
            }
        }
    }
    out.flush()?;
    Ok((meta_path, data_path))
}

struct Row {
    point: usize,
    pos: Position,
    user: usize,
    subcarrier: usize,
    value: Complex64,
}

fn parse_row(rec: &csv::StringRecord, line: usize) -> Result<Row> {
    if rec.len() != GRID_HEADER.len() {
        return Err(Error::Format(format!(
            "row {line} has {} fields, expected {}",
            rec.len(),
            GRID_HEADER.len()
        )));
    }
    let int = |i: usize| -> Result<usize> {
        rec[i]
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("row {line}: bad {} '{}'", GRID_HEADER[i], &rec[i])))
    };
    let float = |i: usize| -> Result<f64> {
        let v: f64 = rec[i]
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("row {line}: bad {} '{}'", GRID_HEADER[i], &rec[i])))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFiniteValue(line))
        }
    };
    Ok(Row {
        point: int(0)?,
        pos: Position::new(float(1)?, float(2)?, float(3)?),
        user: int(4)?,
        subcarrier: int(5)?,
        value: Complex64::new(float(6)?, float(7)?),
    })
}

pub fn import_grid(prefix: &Path) -> Result<ChannelGrid> {
    let (meta_path, data_path) = paths(prefix);
    let meta_text = fs::read_to_string(&meta_path)?;
    let version: serde_json::Value =
        serde_json::from_str(&meta_text).map_err(|e| Error::Format(format!("metadata: {e}")))?;
    match version.get("format_version").and_then(|v| v.as_u64()) {
        Some(v) if v == FORMAT_VERSION as u64 => {}
        Some(v) => return Err(Error::UnsupportedVersion(v.min(u32::MAX as u64) as u32)),
        None => return Err(Error::Format("metadata lacks format_version".into())),
    }
    let meta: GridMeta =
        serde_json::from_value(version).map_err(|e| Error::Format(format!("metadata: {e}")))?;

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(fs::File::open(&data_path)?);
    let header = reader.headers().map_err(|e| Error::Format(e.to_string()))?.clone();
    if header.iter().map(str::trim).ne(GRID_HEADER) {
        return Err(Error::Format(format!("unexpected header '{}'", header.iter().collect::<Vec<_>>().join(","))));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Format(e.to_string()))?;
        rows.push(parse_row(&rec, i + 1)?);
    }

    let subcarriers = match &meta.subcarriers {
        Some(s) => s.clone(),
        None => {
            let mut s: Vec<usize> = rows.iter().map(|r| r.subcarrier).collect();
            s.sort_unstable();
            s.dedup();
            s
        }
    };
    let nu = meta.users.len();
    let ns = subcarriers.len();
    let expected = meta.point_count * nu * ns;
    if rows.len() != expected {
        return Err(Error::RowCountMismatch {
            expected,
            found: rows.len(),
        });
    }

    let mut points = Vec::with_capacity(meta.point_count);
    let mut coefficients = Vec::with_capacity(expected);
    for (i, r) in rows.iter().enumerate() {
        let (m, rest) = (i / (nu * ns), i % (nu * ns));
        let (u, s) = (rest / ns, rest % ns);
        if r.point != m || r.user != u || r.subcarrier != subcarriers[s] {
            return Err(Error::Format(format!(
                "row {} is ({}, {}, {}), expected ({m}, {u}, {}) in point-major order",
                i + 1,
                r.point,
                r.user,
                r.subcarrier,
                subcarriers[s]
            )));
        }
        if rest == 0 {
            points.push(r.pos);
        } else if r.pos != points[m] {
            return Err(Error::Format(format!("row {}: position differs within point {m}", i + 1)));
        }
        coefficients.push(r.value);
    }

    let plan = FrequencyPlan {
        carrier_frequency_hz: meta.carrier_frequency_hz,
        bandwidth_hz: meta.bandwidth_hz,
        num_subcarriers: meta.num_subcarriers,
        used_fraction: meta.used_fraction.unwrap_or(FrequencyPlan::default().used_fraction),
    };
    let path = ScanPath::from_points(points, meta.scan_plane, meta.fine_pitch_m, meta.coarse_pitch_m)?;
    ChannelGrid::from_parts(path, plan, meta.users, subcarriers, coefficients)
}

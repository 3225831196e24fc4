//! Deterministic channel synthesis: the free-space kernel, single-bounce point
//! scatterers, knife-edge plate occluders, and the dense channel grid.

use std::f64::consts::{PI, TAU};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wavelength, Axis, Bounds, FrequencyPlan, Position, Tone};
use crate::scanpath::ScanPath;

/// Attempts per scatterer before keep-out placement gives up.
const SCATTERER_ATTEMPTS: usize = 10_000;

/// Axis-aligned rectangular plate. `normal` is the axis the plate faces;
/// `width` runs along the first remaining axis of (x, y, z), `height` along
/// the second (z for vertical plates).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Occluder {
    pub center: Position,
    pub width: f64,
    pub height: f64,
    pub normal: Axis,
}

impl Occluder {
    pub fn new(center: Position, width: f64, height: f64, normal: Axis) -> Result<Self> {
        let occ = Occluder {
            center,
            width,
            height,
            normal,
        };
        occ.validate()?;
        Ok(occ)
    }

    /// Plate spanning `[u0, u1] × [z0, z1]` in the plane `normal = at`.
    pub fn vertical(normal: Axis, at: f64, u0: f64, u1: f64, z0: f64, z1: f64) -> Result<Self> {
        let (u, _) = in_plane_axes(normal);
        let center = Position::new(0.0, 0.0, (z0 + z1) / 2.0)
            .with_axis(normal, at)
            .with_axis(u, (u0 + u1) / 2.0);
        Occluder::new(center, u1 - u0, z1 - z0, normal)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.center.is_finite() {
            return Err(Error::NonFiniteInput { what: "occluder center" });
        }
        for (what, v) in [("occluder width", self.width), ("occluder height", self.height)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::NonPositive { what, value: v });
            }
        }
        Ok(())
    }

    pub fn blocks(&self, a: &Position, b: &Position) -> bool {
        segment_blocked(a, b, self)
    }
}

fn in_plane_axes(normal: Axis) -> (Axis, Axis) {
    match normal {
        Axis::X => (Axis::Y, Axis::Z),
        Axis::Y => (Axis::X, Axis::Z),
        Axis::Z => (Axis::X, Axis::Y),
    }
}

/// Clip the parameter interval `[t0, t1]` to `lo ≤ p + t·d ≤ hi`.
fn clip(p: f64, d: f64, lo: f64, hi: f64, t0: &mut f64, t1: &mut f64) -> bool {
    if d == 0.0 {
        return p >= lo && p <= hi;
    }
    let (mut ta, mut tb) = ((lo - p) / d, (hi - p) / d);
    if ta > tb {
        std::mem::swap(&mut ta, &mut tb);
    }
    *t0 = t0.max(ta);
    *t1 = t1.min(tb);
    t0 <= t1
}

/// Whether the open segment (a, b) meets the closed occluder rectangle.
///
/// Endpoints are put in a canonical order first so the answer is exactly
/// symmetric in (a, b).
pub fn segment_blocked(a: &Position, b: &Position, occ: &Occluder) -> bool {
    let (a, b) = if <[f64; 3]>::from(*a) <= <[f64; 3]>::from(*b) {
        (*a, *b)
    } else {
        (*b, *a)
    };
    let n = occ.normal;
    let (u, v) = in_plane_axes(n);
    let (hw, hh) = (occ.width / 2.0, occ.height / 2.0);
    let (cu, cv) = (occ.center.axis(u), occ.center.axis(v));
    let da = a.axis(n) - occ.center.axis(n);
    let db = b.axis(n) - occ.center.axis(n);

    if da == 0.0 && db == 0.0 {
        // Segment lies in the plate plane.
        let (mut t0, mut t1) = (0.0, 1.0);
        let du = b.axis(u) - a.axis(u);
        let dv = b.axis(v) - a.axis(v);
        return clip(a.axis(u), du, cu - hw, cu + hw, &mut t0, &mut t1)
            && clip(a.axis(v), dv, cv - hh, cv + hh, &mut t0, &mut t1)
            && t1 > 0.0
            && t0 < 1.0
            && !(t0 == t1 && (t0 == 0.0 || t0 == 1.0));
    }
    if (da > 0.0 && db > 0.0) || (da < 0.0 && db < 0.0) {
        return false;
    }
    let t = da / (da - db);
    if t <= 0.0 || t >= 1.0 {
        return false;
    }
    let pu = a.axis(u) + t * (b.axis(u) - a.axis(u));
    let pv = a.axis(v) + t * (b.axis(v) - a.axis(v));
    (pu - cu).abs() <= hw && (pv - cv).abs() <= hh
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scatterer {
    pub position: Position,
    pub gain: Complex64,
}

/// Uniformly placed point scatterers with uniform gain phases.
pub fn place_scatterers(
    count: usize,
    region: Bounds,
    gain_magnitude: f64,
    seed: u64,
) -> Result<Vec<Scatterer>> {
    place_scatterers_avoiding(count, region, gain_magnitude, seed, &[])
}

/// As [`place_scatterers`], redrawing any position that falls inside one of
/// the `keep_out` boxes.
pub fn place_scatterers_avoiding(
    count: usize,
    region: Bounds,
    gain_magnitude: f64,
    seed: u64,
    keep_out: &[Bounds],
) -> Result<Vec<Scatterer>> {
    if !(0.0..=1.0).contains(&gain_magnitude) {
        return Err(Error::Config(format!(
            "scatterer gain magnitude must lie in [0, 1], got {gain_magnitude}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |lo: f64, hi: f64| if hi > lo { rng.gen_range(lo..hi) } else { lo };
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let mut placed = None;
        for _ in 0..SCATTERER_ATTEMPTS {
            let p = Position::new(
                draw(region.min.x, region.max.x),
                draw(region.min.y, region.max.y),
                draw(region.min.z, region.max.z),
            );
            let phase = draw(0.0, TAU);
            if keep_out.iter().all(|k| !k.contains(&p)) {
                placed = Some(Scatterer {
                    position: p,
                    gain: Complex64::from_polar(gain_magnitude, phase),
                });
                break;
            }
        }
        out.push(placed.ok_or_else(|| {
            Error::Infeasible(format!("scatterer {i} could not avoid the keep-out zones"))
        })?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub users: Vec<Position>,
    pub plan: FrequencyPlan,
    #[serde(default)]
    pub occluders: Vec<Occluder>,
    #[serde(default)]
    pub scatterers: Vec<Scatterer>,
    #[serde(default)]
    pub seed: u64,
}

/// λ/(4πL)·e^{j2πL/λ_sub}: carrier wavelength in the amplitude, subcarrier
/// wavelength in the phase.
#[inline]
fn kernel(len: f64, lambda: f64, lambda_sub: f64) -> Complex64 {
    Complex64::from_polar(lambda / (4.0 * PI * len), TAU * len / lambda_sub)
}

/// Free-space coefficient between two points.
pub fn los_coefficient(tx: &Position, rx: &Position, lambda: f64, lambda_sub: f64) -> Result<Complex64> {
    let r = tx.distance(rx);
    if r == 0.0 {
        return Err(Error::CoincidentGeometry(format!("tx and rx coincide at {tx}")));
    }
    Ok(kernel(r, lambda, lambda_sub))
}

impl Scene {
    pub fn new(
        users: Vec<Position>,
        plan: FrequencyPlan,
        occluders: Vec<Occluder>,
        scatterers: Vec<Scatterer>,
        seed: u64,
    ) -> Result<Self> {
        let scene = Scene {
            users,
            plan,
            occluders,
            scatterers,
            seed,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        self.plan.validate()?;
        if self.users.is_empty() {
            return Err(Error::Config("scene needs at least one user".into()));
        }
        for (i, u) in self.users.iter().enumerate() {
            if !u.is_finite() {
                return Err(Error::NonFiniteInput { what: "user position" });
            }
            if let Some(j) = self.users[..i].iter().position(|v| v == u) {
                return Err(Error::DuplicateIndex { what: "user position", index: j });
            }
        }
        for o in &self.occluders {
            o.validate()?;
        }
        for s in &self.scatterers {
            if !s.position.is_finite() || !s.gain.re.is_finite() || !s.gain.im.is_finite() {
                return Err(Error::NonFiniteInput { what: "scatterer" });
            }
            if s.gain.norm() > 1.0 + 1e-12 {
                return Err(Error::Config(format!(
                    "scatterer gain magnitude {} exceeds 1",
                    s.gain.norm()
                )));
            }
        }
        Ok(())
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    fn blocked(&self, a: &Position, b: &Position) -> bool {
        self.occluders.iter().any(|o| o.blocks(a, b))
    }

    fn wavelengths(&self, tone: Tone) -> Result<(f64, f64)> {
        Ok((self.plan.carrier_wavelength(), wavelength(&self.plan, tone)?))
    }

    /// Coefficient between two arbitrary points in this scene. Symmetric in
    /// (a, b).
    pub fn link_coefficient(&self, a: &Position, b: &Position, tone: Tone) -> Result<Complex64> {
        let (lam, lam_sub) = self.wavelengths(tone)?;
        let r = a.distance(b);
        if r == 0.0 {
            return Err(Error::CoincidentGeometry(format!("endpoints coincide at {a}")));
        }
        let mut h = if self.blocked(a, b) {
            Complex64::new(0.0, 0.0)
        } else {
            kernel(r, lam, lam_sub)
        };
        for (k, s) in self.scatterers.iter().enumerate() {
            let r1 = a.distance(&s.position);
            let r2 = s.position.distance(b);
            if r1 == 0.0 || r2 == 0.0 {
                return Err(Error::CoincidentGeometry(format!(
                    "scatterer {k} coincides with a path endpoint"
                )));
            }
            if !self.blocked(a, &s.position) && !self.blocked(&s.position, b) {
                h += s.gain * kernel(r1 + r2, lam, lam_sub);
            }
        }
        Ok(h)
    }

    /// Coefficient from user `user` to receive point `rx`.
    pub fn scene_coefficient(&self, user: usize, rx: &Position, tone: Tone) -> Result<Complex64> {
        let u = self.users.get(user).ok_or(Error::IndexOutOfRange {
            what: "user",
            index: user,
            len: self.users.len(),
        })?;
        self.link_coefficient(u, rx, tone)
    }
}

/// Complex coefficients over (grid point, user, subcarrier) for a selected set
/// of subcarriers.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelGrid {
    path: ScanPath,
    plan: FrequencyPlan,
    users: Vec<Position>,
    subcarriers: Vec<usize>,
    coefficients: Vec<Complex64>,
}

impl ChannelGrid {
    /// Assemble a grid from point-major, then user, then subcarrier data.
    pub fn from_parts(
        path: ScanPath,
        plan: FrequencyPlan,
        users: Vec<Position>,
        subcarriers: Vec<usize>,
        coefficients: Vec<Complex64>,
    ) -> Result<Self> {
        plan.validate()?;
        if users.is_empty() {
            return Err(Error::Config("grid needs at least one user".into()));
        }
        if subcarriers.is_empty() {
            return Err(Error::Config("grid needs at least one subcarrier".into()));
        }
        for (i, &s) in subcarriers.iter().enumerate() {
            if s >= plan.num_subcarriers {
                return Err(Error::IndexOutOfRange {
                    what: "subcarrier",
                    index: s,
                    len: plan.num_subcarriers,
                });
            }
            if subcarriers[..i].contains(&s) {
                return Err(Error::DuplicateIndex { what: "subcarrier", index: s });
            }
        }
        let expected = path.len() * users.len() * subcarriers.len();
        if coefficients.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "grid coefficients",
                expected,
                found: coefficients.len(),
            });
        }
        if let Some(i) = coefficients
            .iter()
            .position(|c| !c.re.is_finite() || !c.im.is_finite())
        {
            return Err(Error::NonFiniteValue(i));
        }
        Ok(ChannelGrid {
            path,
            plan,
            users,
            subcarriers,
            coefficients,
        })
    }

    pub fn path(&self) -> &ScanPath {
        &self.path
    }

    pub fn plan(&self) -> &FrequencyPlan {
        &self.plan
    }

    pub fn users(&self) -> &[Position] {
        &self.users
    }

    pub fn subcarriers(&self) -> &[usize] {
        &self.subcarriers
    }

    pub fn num_points(&self) -> usize {
        self.path.len()
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn coefficients(&self) -> &[Complex64] {
        &self.coefficients
    }

    /// Position of `subcarrier` within the stored tone list.
    pub fn tone_slot(&self, subcarrier: usize) -> Result<usize> {
        self.subcarriers
            .iter()
            .position(|&s| s == subcarrier)
            .ok_or(Error::MissingSubcarrier(subcarrier))
    }

    #[inline]
    pub fn get(&self, point: usize, user: usize, slot: usize) -> Complex64 {
        let (n, s) = (self.users.len(), self.subcarriers.len());
        self.coefficients[(point * n + user) * s + slot]
    }

    /// Coefficients of all users at one point for one subcarrier.
    pub fn row(&self, point: usize, subcarrier: usize) -> Result<Vec<Complex64>> {
        let slot = self.tone_slot(subcarrier)?;
        self.check_point(point)?;
        Ok((0..self.users.len()).map(|n| self.get(point, n, slot)).collect())
    }

    /// Coefficients of one user over the whole path for one subcarrier.
    pub fn field(&self, user: usize, subcarrier: usize) -> Result<Vec<Complex64>> {
        let slot = self.tone_slot(subcarrier)?;
        if user >= self.users.len() {
            return Err(Error::IndexOutOfRange {
                what: "user",
                index: user,
                len: self.users.len(),
            });
        }
        Ok((0..self.num_points()).map(|m| self.get(m, user, slot)).collect())
    }

    fn check_point(&self, point: usize) -> Result<()> {
        if point >= self.num_points() {
            return Err(Error::IndexOutOfRange {
                what: "grid point",
                index: point,
                len: self.num_points(),
            });
        }
        Ok(())
    }

    /// Combine per-user measurements of the same path into one multi-user
    /// grid, users in argument order.
    pub fn overlay(parts: &[ChannelGrid]) -> Result<ChannelGrid> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Config("nothing to overlay".into()))?;
        for p in &parts[1..] {
            if p.path != first.path || p.plan != first.plan || p.subcarriers != first.subcarriers {
                return Err(Error::Config(
                    "overlaid grids must share path, plan and subcarriers".into(),
                ));
            }
        }
        let users: Vec<Position> = parts.iter().flat_map(|p| p.users.iter().copied()).collect();
        let s = first.subcarriers.len();
        let mut coefficients = Vec::with_capacity(first.num_points() * users.len() * s);
        for m in 0..first.num_points() {
            for p in parts {
                let n = p.users.len();
                coefficients.extend_from_slice(&p.coefficients[m * n * s..(m + 1) * n * s]);
            }
        }
        ChannelGrid::from_parts(first.path.clone(), first.plan, users, first.subcarriers.clone(), coefficients)
    }
}

/// Evaluate every scene coefficient on `path` for the listed subcarriers.
///
/// Points are processed in parallel; each point's values depend only on the
/// scene, so the output is identical for any schedule.
pub fn synthesize_grid(scene: &Scene, path: &ScanPath, subcarriers: &[usize]) -> Result<ChannelGrid> {
    scene.validate()?;
    let lam = scene.plan.carrier_wavelength();
    let lam_sub: Vec<f64> = subcarriers
        .iter()
        .map(|&k| wavelength(&scene.plan, Tone::Subcarrier(k)))
        .collect::<Result<_>>()?;

    // User-to-scatterer legs are shared by every grid point.
    let legs: Vec<Vec<Option<f64>>> = scene
        .users
        .iter()
        .map(|u| {
            scene
                .scatterers
                .iter()
                .map(|s| (!scene.blocked(u, &s.position)).then(|| u.distance(&s.position)))
                .collect()
        })
        .collect();
    for (n, u) in scene.users.iter().enumerate() {
        if let Some(k) = scene.scatterers.iter().position(|s| s.position == *u) {
            return Err(Error::CoincidentGeometry(format!("scatterer {k} coincides with user {n}")));
        }
    }

    let n_users = scene.users.len();
    let n_tones = subcarriers.len();
    let per_point: Vec<Vec<Complex64>> = path
        .points()
        .par_iter()
        .enumerate()
        .map(|(m, rx)| {
            let mut out = vec![Complex64::new(0.0, 0.0); n_users * n_tones];
            let mut r2 = Vec::with_capacity(scene.scatterers.len());
            for (k, s) in scene.scatterers.iter().enumerate() {
                let d = s.position.distance(rx);
                if d == 0.0 {
                    return Err(Error::CoincidentGeometry(format!(
                        "scatterer {k} coincides with grid point {m}"
                    )));
                }
                r2.push((!scene.blocked(&s.position, rx)).then_some(d));
            }
            for (n, u) in scene.users.iter().enumerate() {
                let r = u.distance(rx);
                if r == 0.0 {
                    return Err(Error::CoincidentGeometry(format!(
                        "grid point {m} coincides with user {n}"
                    )));
                }
                let los = !scene.blocked(u, rx);
                for (t, &ls) in lam_sub.iter().enumerate() {
                    let mut h = if los {
                        kernel(r, lam, ls)
                    } else {
                        Complex64::new(0.0, 0.0)
                    };
                    for (k, s) in scene.scatterers.iter().enumerate() {
                        if let (Some(r1), Some(r2)) = (legs[n][k], r2[k]) {
                            h += s.gain * kernel(r1 + r2, lam, ls);
                        }
                    }
                    out[n * n_tones + t] = h;
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    ChannelGrid::from_parts(
        path.clone(),
        scene.plan,
        scene.users.clone(),
        subcarriers.to_vec(),
        per_point.into_iter().flatten().collect(),
    )
}

/// H with users as rows and antennas as columns, for one subcarrier.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix {
    h: DMatrix<Complex64>,
    subcarrier: usize,
}

impl ChannelMatrix {
    pub fn new(h: DMatrix<Complex64>, subcarrier: usize) -> Result<Self> {
        if h.nrows() == 0 || h.ncols() == 0 {
            return Err(Error::Config("channel matrix must be at least 1×1".into()));
        }
        if h.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::NonFiniteInput { what: "channel entry" });
        }
        Ok(ChannelMatrix { h, subcarrier })
    }

    pub fn from_rows(rows: &[Vec<Complex64>]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::Config("ragged channel rows".into()));
        }
        ChannelMatrix::new(DMatrix::from_fn(n, m, |i, j| rows[i][j]), 0)
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.h
    }

    pub fn users(&self) -> usize {
        self.h.nrows()
    }

    pub fn antennas(&self) -> usize {
        self.h.ncols()
    }

    pub fn subcarrier(&self) -> usize {
        self.subcarrier
    }

    pub fn scaled(&self, c: Complex64) -> Result<Self> {
        ChannelMatrix::new(self.h.map(|x| x * c), self.subcarrier)
    }
}

/// Select grid points as antennas: `h[n][m] = grid[point_indices[m]][n][subcarrier]`.
pub fn extract_channel_matrix(
    grid: &ChannelGrid,
    point_indices: &[usize],
    subcarrier: usize,
) -> Result<ChannelMatrix> {
    let slot = grid.tone_slot(subcarrier)?;
    for (i, &p) in point_indices.iter().enumerate() {
        grid.check_point(p)?;
        if point_indices[..i].contains(&p) {
            return Err(Error::DuplicateIndex { what: "grid point", index: p });
        }
    }
    let h = DMatrix::from_fn(grid.num_users(), point_indices.len(), |n, m| {
        grid.get(point_indices[m], n, slot)
    });
    ChannelMatrix::new(h, subcarrier)
}

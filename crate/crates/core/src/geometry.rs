//! Positions, the OFDM frequency plan, antenna-array generators and the
//! aperture/spacing relation used for square arrays.
//!
//! Coordinates are meters in a right-handed frame: the measurement plane spans
//! x and y, z is height.

use std::f64::consts::TAU;
use std::fmt;
use std::ops::{Add, Mul, Sub};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scanpath::ScanPath;
use crate::units::SPEED_OF_LIGHT;

/// Attempts per element before random placement gives up.
pub const PLACEMENT_ATTEMPTS_PER_ELEMENT: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Position {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position {
    pub const ORIGIN: Position = Position::new(0.0, 0.0, 0.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Position { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (*self - *other).norm()
    }

    pub fn axis(&self, axis: Axis) -> f64 {
        match axis {
            Axis::X => self.x,
            Axis::Y => self.y,
            Axis::Z => self.z,
        }
    }

    pub fn with_axis(mut self, axis: Axis, value: f64) -> Self {
        match axis {
            Axis::X => self.x = value,
            Axis::Y => self.y = value,
            Axis::Z => self.z = value,
        }
        self
    }
}

impl From<[f64; 3]> for Position {
    fn from(a: [f64; 3]) -> Self {
        Position::new(a[0], a[1], a[2])
    }
}

impl From<Position> for [f64; 3] {
    fn from(p: Position) -> Self {
        [p.x, p.y, p.z]
    }
}

impl Add for Position {
    type Output = Position;
    fn add(self, o: Position) -> Position {
        Position::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Position {
    type Output = Position;
    fn sub(self, o: Position) -> Position {
        Position::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Position {
    type Output = Position;
    fn mul(self, s: f64) -> Position {
        Position::new(self.x * s, self.y * s, self.z * s)
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.x, self.y, self.z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

/// Axis-aligned box, possibly degenerate (zero extent) along some axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: Position,
    pub max: Position,
}

impl Bounds {
    pub fn new(min: Position, max: Position) -> Result<Self> {
        if !min.is_finite() || !max.is_finite() {
            return Err(Error::NonFiniteInput { what: "bounds" });
        }
        if min.x > max.x || min.y > max.y || min.z > max.z {
            return Err(Error::Config(format!("bounds min {min} exceeds max {max}")));
        }
        Ok(Bounds { min, max })
    }

    /// Square box of side `side` in the given plane, centered at `center`.
    pub fn square(center: Position, side: f64, plane: ArrayPlane) -> Self {
        let (u, v) = plane.axes();
        let h = side / 2.0;
        let min = center.with_axis(u, center.axis(u) - h).with_axis(v, center.axis(v) - h);
        let max = center.with_axis(u, center.axis(u) + h).with_axis(v, center.axis(v) + h);
        Bounds { min, max }
    }

    pub fn extent(&self, axis: Axis) -> f64 {
        self.max.axis(axis) - self.min.axis(axis)
    }

    pub fn contains(&self, p: &Position) -> bool {
        p.x >= self.min.x
            && p.x <= self.max.x
            && p.y >= self.min.y
            && p.y <= self.max.y
            && p.z >= self.min.z
            && p.z <= self.max.z
    }

    /// Box grown by `margin` on every side.
    pub fn inflate(&self, margin: f64) -> Self {
        let m = Position::new(margin, margin, margin);
        Bounds {
            min: self.min - m,
            max: self.max + m,
        }
    }
}

/// OFDM frequency plan. Subcarrier `k` sits at
/// `carrier + (k − num_subcarriers/2) · spacing`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyPlan {
    pub carrier_frequency_hz: f64,
    pub bandwidth_hz: f64,
    pub num_subcarriers: usize,
    #[serde(default = "default_used_fraction")]
    pub used_fraction: f64,
}

fn default_used_fraction() -> f64 {
    0.9
}

impl Default for FrequencyPlan {
    /// 2.35 GHz carrier, 40 MHz, 1024 subcarriers, 90 % used.
    fn default() -> Self {
        FrequencyPlan {
            carrier_frequency_hz: 2.35e9,
            bandwidth_hz: 40e6,
            num_subcarriers: 1024,
            used_fraction: 0.9,
        }
    }
}

/// Selects either the carrier or one subcarrier of a [`FrequencyPlan`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tone {
    Carrier,
    Subcarrier(usize),
}

impl FrequencyPlan {
    pub fn validate(&self) -> Result<()> {
        if !(self.carrier_frequency_hz > 0.0) {
            return Err(Error::NonPositive {
                what: "carrier frequency",
                value: self.carrier_frequency_hz,
            });
        }
        if !(self.bandwidth_hz > 0.0) {
            return Err(Error::NonPositive {
                what: "bandwidth",
                value: self.bandwidth_hz,
            });
        }
        if self.num_subcarriers == 0 {
            return Err(Error::NonPositive {
                what: "subcarrier count",
                value: 0.0,
            });
        }
        if !(self.used_fraction > 0.0 && self.used_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "used_fraction must lie in (0, 1], got {}",
                self.used_fraction
            )));
        }
        // Lowest tone must still have a positive frequency.
        if self.frequency(Tone::Subcarrier(0))? <= 0.0 {
            return Err(Error::Config("lowest subcarrier frequency is not positive".into()));
        }
        Ok(())
    }

    pub fn subcarrier_spacing(&self) -> f64 {
        self.bandwidth_hz / self.num_subcarriers as f64
    }

    /// Frequency offset of subcarrier `k` from the carrier.
    pub fn offset_of(&self, k: usize) -> f64 {
        (k as f64 - (self.num_subcarriers / 2) as f64) * self.subcarrier_spacing()
    }

    /// Index of the subcarrier that coincides with the carrier.
    pub fn center_subcarrier(&self) -> usize {
        self.num_subcarriers / 2
    }

    pub fn frequency(&self, tone: Tone) -> Result<f64> {
        match tone {
            Tone::Carrier => Ok(self.carrier_frequency_hz),
            Tone::Subcarrier(k) if k < self.num_subcarriers => {
                Ok(self.carrier_frequency_hz + self.offset_of(k))
            }
            Tone::Subcarrier(k) => Err(Error::IndexOutOfRange {
                what: "subcarrier",
                index: k,
                len: self.num_subcarriers,
            }),
        }
    }

    pub fn carrier_wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_frequency_hz
    }

    /// Subcarriers used for sounding: the central `used_fraction` of the band,
    /// with the unused tones split evenly between the two band edges.
    pub fn used_subcarriers(&self) -> std::ops::Range<usize> {
        let n = self.num_subcarriers;
        let used = ((n as f64 * self.used_fraction).round() as usize).clamp(1, n);
        let lower = (n - used) / 2;
        lower..lower + used
    }
}

/// Wavelength c/f of the selected tone.
pub fn wavelength(plan: &FrequencyPlan, tone: Tone) -> Result<f64> {
    Ok(SPEED_OF_LIGHT / plan.frequency(tone)?)
}

/// Element spacing of a 3×3 square array with effective aperture `area`: √A/2.
pub fn aperture_to_spacing(area: f64) -> Result<f64> {
    if !(area > 0.0) {
        return Err(Error::NonPositive {
            what: "aperture",
            value: area,
        });
    }
    Ok(area.sqrt() / 2.0)
}

/// Inverse of [`aperture_to_spacing`]: (2d)².
pub fn spacing_to_aperture(spacing: f64) -> Result<f64> {
    if !(spacing > 0.0) {
        return Err(Error::NonPositive {
            what: "spacing",
            value: spacing,
        });
    }
    Ok((2.0 * spacing).powi(2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometryKind {
    LineX,
    LineY,
    Square,
    Cross,
    Circle,
    Random,
    Explicit,
}

impl GeometryKind {
    pub const ALL: [GeometryKind; 7] = [
        GeometryKind::LineX,
        GeometryKind::LineY,
        GeometryKind::Square,
        GeometryKind::Cross,
        GeometryKind::Circle,
        GeometryKind::Random,
        GeometryKind::Explicit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GeometryKind::LineX => "line_x",
            GeometryKind::LineY => "line_y",
            GeometryKind::Square => "square",
            GeometryKind::Cross => "cross",
            GeometryKind::Circle => "circle",
            GeometryKind::Random => "random",
            GeometryKind::Explicit => "explicit",
        }
    }

    /// Whether [`make_array`] can build `count` elements of this kind.
    pub fn check_count(self, count: usize) -> Result<()> {
        let fail = |reason| {
            Err(Error::IncompatibleCount {
                kind: self.name(),
                count,
                reason,
            })
        };
        if count == 0 {
            return fail("at least one element is required");
        }
        match self {
            GeometryKind::LineX | GeometryKind::LineY => Ok(()),
            GeometryKind::Square if perfect_square_root(count).is_none() => {
                fail("count must be a perfect square")
            }
            GeometryKind::Cross if count % 4 != 1 => fail("count must be 1 mod 4"),
            GeometryKind::Circle if count < 3 => fail("a circle needs at least 3 elements"),
            GeometryKind::Random => fail("use random_array for random geometries"),
            GeometryKind::Explicit => fail("explicit arrays are built from a position list"),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for GeometryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for GeometryKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        GeometryKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown geometry kind '{s}'")))
    }
}

/// Plane an array is laid out in. `line_x` follows the first in-plane axis,
/// `line_y` the second (y for `xy`, z for `xz`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArrayPlane {
    #[default]
    Xy,
    Xz,
}

impl ArrayPlane {
    pub fn axes(self) -> (Axis, Axis) {
        match self {
            ArrayPlane::Xy => (Axis::X, Axis::Y),
            ArrayPlane::Xz => (Axis::X, Axis::Z),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AntennaArray {
    pub elements: Vec<Position>,
    pub kind: GeometryKind,
    /// Spacing constraint the array was generated under, if any.
    pub min_spacing: Option<f64>,
}

impl AntennaArray {
    pub fn explicit(elements: Vec<Position>) -> Result<Self> {
        if elements.is_empty() {
            return Err(Error::IncompatibleCount {
                kind: "explicit",
                count: 0,
                reason: "at least one element is required",
            });
        }
        if elements.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFiniteInput { what: "element position" });
        }
        Ok(AntennaArray {
            elements,
            kind: GeometryKind::Explicit,
            min_spacing: None,
        })
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn min_pairwise_distance(&self) -> f64 {
        min_pairwise_distance(&self.elements)
    }
}

/// Smallest distance over all element pairs (infinity for fewer than two).
pub fn min_pairwise_distance(points: &[Position]) -> f64 {
    let mut best = f64::INFINITY;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            best = best.min(a.distance(b));
        }
    }
    best
}

fn perfect_square_root(n: usize) -> Option<usize> {
    let r = (n as f64).sqrt().round() as usize;
    (r * r == n).then_some(r)
}

/// `count` evenly spaced offsets spanning [−side/2, side/2]; a single element
/// sits at 0.
fn uniform_offsets(count: usize, side: f64) -> impl Iterator<Item = f64> {
    let step = if count > 1 {
        side / (count - 1) as f64
    } else {
        0.0
    };
    let start = if count > 1 { -side / 2.0 } else { 0.0 };
    (0..count).map(move |i| start + i as f64 * step)
}

/// Deterministic array of `kind` with `count` elements fitted to a square
/// aperture of area `aperture` centered at `center`.
pub fn make_array(
    kind: GeometryKind,
    count: usize,
    aperture: f64,
    center: Position,
    plane: ArrayPlane,
) -> Result<AntennaArray> {
    kind.check_count(count)?;
    if !center.is_finite() {
        return Err(Error::NonFiniteInput { what: "array center" });
    }
    if aperture < 0.0 || !aperture.is_finite() || (aperture == 0.0 && count > 1) {
        return Err(Error::NonPositive {
            what: "aperture",
            value: aperture,
        });
    }
    let side = aperture.sqrt();
    let (u, v) = plane.axes();
    let at = |du: f64, dv: f64| {
        center
            .with_axis(u, center.axis(u) + du)
            .with_axis(v, center.axis(v) + dv)
    };

    let elements: Vec<Position> = match kind {
        GeometryKind::LineX => uniform_offsets(count, side).map(|d| at(d, 0.0)).collect(),
        GeometryKind::LineY => uniform_offsets(count, side).map(|d| at(0.0, d)).collect(),
        GeometryKind::Square => {
            let k = perfect_square_root(count).expect("checked above");
            let offs: Vec<f64> = uniform_offsets(k, side).collect();
            offs.iter()
                .flat_map(|&dv| offs.iter().map(move |&du| (du, dv)))
                .map(|(du, dv)| at(du, dv))
                .collect()
        }
        GeometryKind::Cross => {
            let per_line = (count - 1) / 2 + 1;
            let offs: Vec<f64> = uniform_offsets(per_line, side).collect();
            let mid = per_line / 2;
            let mut els: Vec<Position> = offs.iter().map(|&d| at(d, 0.0)).collect();
            els.extend(
                offs.iter()
                    .enumerate()
                    .filter(|&(i, _)| i != mid)
                    .map(|(_, &d)| at(0.0, d)),
            );
            els
        }
        GeometryKind::Circle => {
            let r = side / 2.0;
            (0..count)
                .map(|i| {
                    let a = TAU * i as f64 / count as f64;
                    at(r * a.cos(), r * a.sin())
                })
                .collect()
        }
        GeometryKind::Random | GeometryKind::Explicit => unreachable!("rejected by check_count"),
    };

    Ok(AntennaArray {
        elements,
        kind,
        min_spacing: None,
    })
}

/// Rejection sampler shared by the continuous and on-grid random arrays.
fn place_with_spacing(
    count: usize,
    min_spacing: f64,
    mut draw: impl FnMut() -> Position,
) -> Result<Vec<Position>> {
    let mut placed: Vec<Position> = Vec::with_capacity(count);
    for i in 0..count {
        let mut accepted = None;
        for _ in 0..PLACEMENT_ATTEMPTS_PER_ELEMENT {
            let p = draw();
            if placed.iter().all(|q| q.distance(&p) >= min_spacing) {
                accepted = Some(p);
                break;
            }
        }
        match accepted {
            Some(p) => placed.push(p),
            None => {
                return Err(Error::Infeasible(format!(
                    "could not place element {} of {count} with spacing {min_spacing} m after {} attempts",
                    i + 1,
                    PLACEMENT_ATTEMPTS_PER_ELEMENT
                )))
            }
        }
    }
    Ok(placed)
}

fn uniform_in(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.gen_range(lo..=hi)
    } else {
        lo
    }
}

/// Uniformly random array inside `bounds` whose elements are pairwise at least
/// `min_spacing` apart. Reproducible for a fixed seed.
pub fn random_array(
    count: usize,
    bounds: Bounds,
    min_spacing: f64,
    seed: u64,
) -> Result<AntennaArray> {
    if count == 0 {
        return Err(Error::IncompatibleCount {
            kind: "random",
            count,
            reason: "at least one element is required",
        });
    }
    if !(min_spacing >= 0.0) {
        return Err(Error::NonPositive {
            what: "min spacing",
            value: min_spacing,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let elements = place_with_spacing(count, min_spacing, || {
        Position::new(
            uniform_in(&mut rng, bounds.min.x, bounds.max.x),
            uniform_in(&mut rng, bounds.min.y, bounds.max.y),
            uniform_in(&mut rng, bounds.min.z, bounds.max.z),
        )
    })?;
    Ok(AntennaArray {
        elements,
        kind: GeometryKind::Random,
        min_spacing: Some(min_spacing),
    })
}

/// Random array drawn from sampled grid positions inside `bounds`, so that the
/// spacing constraint holds for the positions actually used.
///
/// Returns the chosen path indices alongside the array.
pub fn random_array_on_grid(
    path: &ScanPath,
    count: usize,
    bounds: Bounds,
    min_spacing: f64,
    seed: u64,
) -> Result<(AntennaArray, Vec<usize>)> {
    let candidates: Vec<usize> = path
        .points()
        .iter()
        .enumerate()
        .filter(|(_, p)| bounds.contains(p))
        .map(|(i, _)| i)
        .collect();
    if candidates.len() < count {
        return Err(Error::Infeasible(format!(
            "only {} grid points inside the aperture, {count} requested",
            candidates.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = path.points();
    let mut picked = Vec::with_capacity(count);
    let elements = place_with_spacing(count, min_spacing.max(f64::MIN_POSITIVE), || {
        let idx = candidates[rng.gen_range(0..candidates.len())];
        picked.push(idx);
        points[idx]
    })?;
    // Keep only the indices whose draw was accepted, in order.
    let indices = elements
        .iter()
        .map(|e| {
            *picked
                .iter()
                .rev()
                .find(|&&i| points[i] == *e)
                .expect("accepted element came from a draw")
        })
        .collect();
    Ok((
        AntennaArray {
            elements,
            kind: GeometryKind::Random,
            min_spacing: Some(min_spacing),
        },
        indices,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snap {
    /// Path index per array element.
    pub indices: Vec<usize>,
    pub distances: Vec<f64>,
}

impl Snap {
    pub fn max_distance(&self) -> f64 {
        self.distances.iter().copied().fold(0.0, f64::max)
    }
}

/// Map each ideal element to its nearest sampled point on `path`.
///
/// Fails if two elements land on the same sample, or if an element is farther
/// from the grid than half a lattice cell diagonal (i.e. it lies off the
/// scanned area).
pub fn snap_to_grid(ideal: &AntennaArray, path: &ScanPath) -> Result<Snap> {
    let points = path.points();
    let limit = 0.5 * path.fine_pitch().hypot(path.coarse_pitch()) + 1e-9;
    let mut indices = Vec::with_capacity(ideal.len());
    let mut distances = Vec::with_capacity(ideal.len());
    for (e, el) in ideal.elements.iter().enumerate() {
        let (best, dist) = points
            .iter()
            .enumerate()
            .map(|(i, p)| (i, p.distance(el)))
            .fold((0, f64::INFINITY), |acc, cur| if cur.1 < acc.1 { cur } else { acc });
        if dist > limit {
            return Err(Error::SnapTooFar {
                element: e,
                distance: dist,
                limit,
            });
        }
        if let Some(first) = indices.iter().position(|&i| i == best) {
            return Err(Error::DuplicateSnap {
                first,
                second: e,
                point: best,
            });
        }
        indices.push(best);
        distances.push(dist);
    }
    Ok(Snap { indices, distances })
}

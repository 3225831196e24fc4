//! Meander (serpentine) sampling paths over a plane or a stack of planes, and
//! the spatial sampling check against λ/2.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Axis, Bounds, FrequencyPlan, Position};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScanPlane {
    #[default]
    Xy,
    Xz,
    /// xy planes stacked in z at the coarse pitch, bottom-up.
    Volume,
}

impl ScanPlane {
    pub fn name(self) -> &'static str {
        match self {
            ScanPlane::Xy => "xy",
            ScanPlane::Xz => "xz",
            ScanPlane::Volume => "volume",
        }
    }

    /// (fine axis, coarse axis) of a single scanned plane.
    fn axes(self) -> (Axis, Axis) {
        match self {
            ScanPlane::Xy | ScanPlane::Volume => (Axis::X, Axis::Y),
            ScanPlane::Xz => (Axis::X, Axis::Z),
        }
    }
}

impl std::str::FromStr for ScanPlane {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xy" => Ok(ScanPlane::Xy),
            "xz" => Ok(ScanPlane::Xz),
            "volume" => Ok(ScanPlane::Volume),
            _ => Err(Error::Config(format!("unknown scan plane '{s}'"))),
        }
    }
}

/// Ordered sampling positions of one scan.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanPath {
    points: Vec<Position>,
    lines: Vec<Range<usize>>,
    plane: ScanPlane,
    fine_pitch: f64,
    coarse_pitch: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingReport {
    pub max_adjacent_spacing: f64,
    pub nyquist_ok: bool,
}

/// Number of samples along an axis of length `extent`: inclusive of the start,
/// last sample at the largest multiple of `pitch` that fits.
fn samples_along(extent: f64, pitch: f64, what: &'static str) -> Result<usize> {
    if !(pitch > 0.0) || !pitch.is_finite() {
        return Err(Error::NonPositive { what, value: pitch });
    }
    if extent == 0.0 {
        return Ok(1);
    }
    if extent < pitch * (1.0 - 1e-9) {
        return Err(Error::Config(format!(
            "{what} {pitch} m is larger than the extent {extent} m"
        )));
    }
    Ok((extent / pitch + 1e-9).floor() as usize + 1)
}

/// Serpentine path over `extent`: lines along x at `coarse_pitch` intervals,
/// `fine_pitch` samples within a line, every other line reversed.
pub fn meander_path(
    extent: Bounds,
    plane: ScanPlane,
    fine_pitch: f64,
    coarse_pitch: f64,
) -> Result<ScanPath> {
    let (fine_axis, coarse_axis) = plane.axes();
    let n_fine = samples_along(extent.extent(fine_axis), fine_pitch, "fine pitch")?;
    let n_coarse = samples_along(extent.extent(coarse_axis), coarse_pitch, "coarse pitch")?;
    let n_planes = match plane {
        ScanPlane::Volume => samples_along(extent.extent(Axis::Z), coarse_pitch, "coarse pitch")?,
        _ => 1,
    };

    let f0 = extent.min.axis(fine_axis);
    let c0 = extent.min.axis(coarse_axis);
    let mut points = Vec::with_capacity(n_fine * n_coarse * n_planes);
    let mut lines = Vec::with_capacity(n_coarse * n_planes);
    let mut line_no = 0usize;
    for k in 0..n_planes {
        let z = extent.min.z + k as f64 * coarse_pitch;
        for j in 0..n_coarse {
            // Odd planes walk the coarse axis back down so that plane changes
            // move along z only.
            let jj = if k % 2 == 1 { n_coarse - 1 - j } else { j };
            let c = c0 + jj as f64 * coarse_pitch;
            let start = points.len();
            for i in 0..n_fine {
                let ii = if line_no % 2 == 1 { n_fine - 1 - i } else { i };
                let mut p = extent.min.with_axis(fine_axis, f0 + ii as f64 * fine_pitch);
                p = p.with_axis(coarse_axis, c);
                if plane == ScanPlane::Volume {
                    p.z = z;
                }
                points.push(p);
            }
            lines.push(start..points.len());
            line_no += 1;
        }
    }
    Ok(ScanPath {
        points,
        lines,
        plane,
        fine_pitch,
        coarse_pitch,
    })
}

impl ScanPath {
    /// Rebuild a path from stored points (e.g. an imported grid). Lines are
    /// split wherever a step leaves the fine (x) axis.
    pub fn from_points(
        points: Vec<Position>,
        plane: ScanPlane,
        fine_pitch: f64,
        coarse_pitch: f64,
    ) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Config("scan path has no points".into()));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFiniteInput { what: "scan point" });
        }
        for (what, v) in [("fine pitch", fine_pitch), ("coarse pitch", coarse_pitch)] {
            if !(v > 0.0) {
                return Err(Error::NonPositive { what, value: v });
            }
        }
        let mut lines = Vec::new();
        let mut start = 0;
        for i in 1..points.len() {
            let (a, b) = (points[i - 1], points[i]);
            if a.y != b.y || a.z != b.z {
                lines.push(start..i);
                start = i;
            }
        }
        lines.push(start..points.len());
        Ok(ScanPath {
            points,
            lines,
            plane,
            fine_pitch,
            coarse_pitch,
        })
    }

    pub fn points(&self) -> &[Position] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn lines(&self) -> &[Range<usize>] {
        &self.lines
    }

    pub fn plane(&self) -> ScanPlane {
        self.plane
    }

    pub fn fine_pitch(&self) -> f64 {
        self.fine_pitch
    }

    pub fn coarse_pitch(&self) -> f64 {
        self.coarse_pitch
    }

    /// Sum of consecutive segment lengths.
    pub fn length(&self) -> f64 {
        self.points.windows(2).map(|w| w[0].distance(&w[1])).sum()
    }

    /// Index of the sample closest to `p` (first one on ties).
    pub fn nearest_index(&self, p: &Position) -> usize {
        let mut best = (0, f64::INFINITY);
        for (i, q) in self.points.iter().enumerate() {
            let d = q.distance(p);
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    }
}

/// Largest gap between neighbouring samples, along the path and across
/// adjacent lines, compared against half the carrier wavelength.
pub fn validate_sampling(path: &ScanPath, plan: &FrequencyPlan) -> SamplingReport {
    let pts = &path.points;
    let mut max_gap = pts
        .windows(2)
        .map(|w| w[0].distance(&w[1]))
        .fold(0.0, f64::max);

    for pair in path.lines.windows(2) {
        // Samples of the next line sorted along the fine axis for bisection.
        let mut next: Vec<Position> = pts[pair[1].clone()].to_vec();
        next.sort_by(|a, b| a.x.total_cmp(&b.x));
        for p in &pts[pair[0].clone()] {
            let k = next.partition_point(|q| q.x < p.x);
            let near = [k.checked_sub(1), Some(k)]
                .into_iter()
                .flatten()
                .filter_map(|i| next.get(i))
                .map(|q| q.distance(p))
                .fold(f64::INFINITY, f64::min);
            max_gap = max_gap.max(near);
        }
    }

    SamplingReport {
        max_adjacent_spacing: max_gap,
        nyquist_ok: max_gap < plan.carrier_wavelength() / 2.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn bx(x1: f64, y1: f64) -> Bounds {
        Bounds::new(Position::ORIGIN, Position::new(x1, y1, 0.0)).unwrap()
    }

    #[test]
    fn three_lines_of_2001() {
        let p = meander_path(bx(2.0, 0.08), ScanPlane::Xy, 0.001, 0.04).unwrap();
        assert_eq!(p.len(), 6003);
        assert_eq!(p.lines().len(), 3);
        assert!(p.lines().iter().all(|l| l.len() == 2001));
        // Serpentine: second line starts where the first ends in x.
        assert_eq!(p.points()[2000].x, p.points()[2001].x);
        assert!(p.points()[2001].x > p.points()[2002].x);
    }

    #[test]
    fn single_short_line() {
        let p = meander_path(bx(0.001, 0.0), ScanPlane::Xy, 0.001, 0.04).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p.lines().len(), 1);
    }

    #[test]
    fn pitch_larger_than_extent_rejected() {
        assert!(meander_path(bx(2.0, 0.02), ScanPlane::Xy, 0.001, 0.04).is_err());
        assert!(meander_path(bx(2.0, 0.08), ScanPlane::Xy, 0.0, 0.04).is_err());
    }

    #[test]
    fn default_pitches_satisfy_nyquist() {
        let p = meander_path(bx(2.0, 0.6), ScanPlane::Xy, 0.001, 0.04).unwrap();
        let r = validate_sampling(&p, &FrequencyPlan::default());
        assert!(r.nyquist_ok);
        assert!((r.max_adjacent_spacing - 0.04).abs() < 1e-12);
    }

    #[test]
    fn ten_cm_pitch_fails_nyquist() {
        let p = meander_path(bx(0.5, 0.3), ScanPlane::Xy, 0.001, 0.10).unwrap();
        let r = validate_sampling(&p, &FrequencyPlan::default());
        assert!(!r.nyquist_ok);
    }

    #[test]
    fn single_point_path() {
        let p = meander_path(bx(0.0, 0.0), ScanPlane::Xy, 0.001, 0.04).unwrap();
        assert_eq!(p.len(), 1);
        let r = validate_sampling(&p, &FrequencyPlan::default());
        assert_eq!(r.max_adjacent_spacing, 0.0);
        assert!(r.nyquist_ok);
    }

    #[test]
    fn xz_plane_holds_y() {
        let ext = Bounds::new(Position::new(0.0, 0.5, 1.0), Position::new(0.1, 0.5, 1.08)).unwrap();
        let p = meander_path(ext, ScanPlane::Xz, 0.01, 0.04).unwrap();
        assert_eq!(p.lines().len(), 3);
        assert!(p.points().iter().all(|q| q.y == 0.5));
        assert_eq!(p.points().last().unwrap().z, 1.08);
    }

    #[test]
    fn volume_steps_between_planes_along_z() {
        let ext = Bounds::new(Position::ORIGIN, Position::new(0.1, 0.08, 0.08)).unwrap();
        let p = meander_path(ext, ScanPlane::Volume, 0.01, 0.04).unwrap();
        assert_eq!(p.len(), 11 * 3 * 3);
        for w in p.points().windows(2) {
            let d = w[1] - w[0];
            let moved = [d.x, d.y, d.z].iter().filter(|v| **v != 0.0).count();
            assert_eq!(moved, 1, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn from_points_recovers_lines() {
        let p = meander_path(bx(0.2, 0.12), ScanPlane::Xy, 0.01, 0.04).unwrap();
        let q = ScanPath::from_points(p.points().to_vec(), ScanPlane::Xy, 0.01, 0.04).unwrap();
        assert_eq!(p, q);
    }

    proptest! {
        #[test]
        fn serpentine_properties(nx in 1usize..40, ny in 1usize..8, fine in 0.001f64..0.02, coarse in 0.02f64..0.06) {
            let ext = bx((nx - 1) as f64 * fine, (ny - 1) as f64 * coarse);
            let p = meander_path(ext, ScanPlane::Xy, fine, coarse).unwrap();
            prop_assert_eq!(p.len(), nx * ny);

            // Visits every grid point exactly once.
            let keys: HashSet<(i64, i64)> = p.points().iter()
                .map(|q| ((q.x / fine).round() as i64, (q.y / coarse).round() as i64))
                .collect();
            prop_assert_eq!(keys.len(), p.len());

            // Consecutive points differ in exactly one coordinate.
            for w in p.points().windows(2) {
                let moved = [w[1].x != w[0].x, w[1].y != w[0].y, w[1].z != w[0].z];
                prop_assert_eq!(moved.iter().filter(|m| **m).count(), 1);
            }

            // Every point inside the extent.
            let grown = ext.inflate(1e-12);
            prop_assert!(p.points().iter().all(|q| grown.contains(q)));

            // Axis-aligned path length.
            let line_len = (nx - 1) as f64 * fine;
            let expect = ny as f64 * line_len + (ny - 1) as f64 * coarse;
            prop_assert!((p.length() - expect).abs() < 1e-9);

            // Reversal keeps the point set.
            let mut a: Vec<[u64; 3]> = p.points().iter().map(|q| [q.x.to_bits(), q.y.to_bits(), q.z.to_bits()]).collect();
            let mut b = a.clone();
            b.reverse();
            a.sort();
            b.sort();
            prop_assert_eq!(a, b);
        }
    }
}

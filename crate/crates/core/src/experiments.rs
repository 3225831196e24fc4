//! Experiment runners. Each one only composes the public operations of the
//! other modules and returns its numbers alongside a [`ReportTable`].

use num_complex::Complex64;
use rayon::prelude::*;

use crate::config::{
    config_hash, ApertureSweepConfig, BeamConfig, GeometrySweepConfig, GridConfig, PhaseStatsConfig,
    PlateSpec, PrecoderCompareConfig, SounderSimConfig, TransitionConfig, WavefrontConfig,
};
use crate::error::{Error, ErrorClass, Result};
use crate::geometry::{
    make_array, random_array_on_grid, snap_to_grid, AntennaArray, ArrayPlane, Axis, Bounds, GeometryKind,
    Position, Tone,
};
use crate::metrics::{
    default_exclusion_radius, energy_map, mr_beam, ring_spacing, spatial_sir, sum_rate, EnergyMap,
    EnergyReference, RingReport, SpatialSirReport,
};
use crate::precoding::{antenna_energy, mr_precoder, precoder, Scheme};
use crate::report::{Cell, Provenance, ReportTable};
use crate::scanpath::ScanPath;
use crate::scene::{extract_channel_matrix, synthesize_grid, ChannelGrid, ChannelMatrix, Occluder, Scene};
use crate::sounder::{apply_phase_drift, grid_phase_stats, phase_to_offset, simulate_sounding, PhaseDiffStats, SounderConfig};
use crate::units::{derive_seed, percentile_sorted, to_db};

const OK: &str = "ok";

fn sum_rate_for(h: &ChannelMatrix, scheme: Scheme, noise_power: f64) -> Result<f64> {
    let p = precoder(scheme, h)?;
    Ok(sum_rate(h, &p, noise_power)?.sum_rate)
}

/// Grid restricted to the given scan points, in that order.
fn grid_at(scene: &Scene, path: &ScanPath, indices: &[usize], subcarrier: usize) -> Result<ChannelGrid> {
    let pts = indices.iter().map(|&i| path.points()[i]).collect();
    let sub = ScanPath::from_points(pts, path.plane(), path.fine_pitch(), path.coarse_pitch())?;
    synthesize_grid(scene, &sub, &[subcarrier])
}

/// H scaled to unit mean |h|².
fn normalized(h: &ChannelMatrix) -> Result<ChannelMatrix> {
    let power = h.matrix().iter().map(|c| c.norm_sqr()).sum::<f64>() / h.matrix().len() as f64;
    if power == 0.0 {
        return Err(Error::ZeroChannel("channel matrix is identically zero".into()));
    }
    h.scaled(Complex64::new(1.0 / power.sqrt(), 0.0))
}

fn require_nonempty<T>(v: &[T], what: &str) -> Result<()> {
    if v.is_empty() {
        return Err(Error::Config(format!("{what} list is empty")));
    }
    Ok(())
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

/// Same-point fallback for a single antenna: every geometry coincides.
fn ideal_array(kind: GeometryKind, count: usize, aperture: f64, center: Position) -> Result<AntennaArray> {
    if count == 1 {
        return AntennaArray::explicit(vec![center]);
    }
    make_array(kind, count, aperture, center, ArrayPlane::Xy)
}

/// Sum rates of `trials` random on-grid geometries. `None` marks an
/// infeasible draw.
fn random_rates(
    grid: &ChannelGrid,
    count: usize,
    bounds: Bounds,
    min_spacing: f64,
    base_seed: u64,
    trials: usize,
    subcarrier: usize,
    scheme: Scheme,
    noise_power: f64,
) -> Result<Vec<Option<f64>>> {
    (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let seed = derive_seed(base_seed, t);
            match random_array_on_grid(grid.path(), count, bounds, min_spacing, seed) {
                Ok((_, idx)) => {
                    let h = extract_channel_matrix(grid, &idx, subcarrier)?;
                    sum_rate_for(&h, scheme, noise_power).map(Some)
                }
                Err(Error::Infeasible(_)) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect()
}

pub fn simulate_grid(cfg: &GridConfig) -> Result<ChannelGrid> {
    require_nonempty(&cfg.subcarriers, "subcarrier")?;
    cfg.synthesize()
}

#[derive(Debug, Clone)]
pub struct Wavefront {
    pub grid: ChannelGrid,
    pub rings: RingReport,
    pub table: ReportTable,
}

pub fn run_wavefront(cfg: &WavefrontConfig) -> Result<Wavefront> {
    let grid = simulate_grid(&cfg.grid)?;
    let sc = cfg.grid.subcarriers[0];
    let rings = ring_spacing(&grid, cfg.user, sc)?;
    let prov = Provenance::new("wavefront", config_hash(cfg), vec![cfg.grid.scene.seed]);
    let mut table = ReportTable::new(prov, &["quantity", "index", "value_m"]);
    for (i, s) in rings.spacings.iter().enumerate() {
        table.push(vec!["spacing".into(), i.into(), (*s).into()])?;
    }
    table.push(vec!["median_spacing".into(), rings.spacings.len().into(), rings.median_spacing.into()])?;
    table.push(vec!["wavelength".into(), 0usize.into(), rings.wavelength.into()])?;
    Ok(Wavefront { grid, rings, table })
}

fn beam_setup(cfg: &BeamConfig) -> Result<(ChannelGrid, Vec<usize>, usize, usize)> {
    let grid = simulate_grid(&cfg.grid)?;
    let sc = cfg.grid.subcarriers[0];
    let array = match &cfg.array {
        Some(a) => a.clone(),
        None => (0..grid.num_users()).collect(),
    };
    if !cfg.target.is_finite() {
        return Err(Error::NonFiniteInput { what: "target" });
    }
    let target = grid.path().nearest_index(&cfg.target);
    Ok((grid, array, target, sc))
}

pub fn run_spatial_sir(cfg: &BeamConfig) -> Result<(SpatialSirReport, ReportTable)> {
    let (grid, array, target, sc) = beam_setup(cfg)?;
    let radius = cfg.exclusion_radius.unwrap_or_else(|| default_exclusion_radius(&grid));
    let r = spatial_sir(&grid, &array, target, sc, radius)?;
    let prov = Provenance::new("spatial-sir", config_hash(cfg), vec![cfg.grid.scene.seed]);
    let mut table = ReportTable::new(
        prov,
        &["target_index", "x_m", "y_m", "z_m", "array_size", "exclusion_radius_m", "excluded_points", "sir", "sir_db"],
    );
    table.push(vec![
        target.into(),
        r.target.x.into(),
        r.target.y.into(),
        r.target.z.into(),
        array.len().into(),
        radius.into(),
        r.excluded_points.into(),
        r.value.to_f64().into(),
        r.value_db.to_f64().into(),
    ])?;
    Ok((r, table))
}

#[derive(Debug, Clone)]
pub struct EnergyMapRun {
    pub grid: ChannelGrid,
    pub target_index: usize,
    pub map: EnergyMap,
    pub table: ReportTable,
}

fn map_table(prov: Provenance, grid: &ChannelGrid, map: &EnergyMap) -> Result<ReportTable> {
    let mut table = ReportTable::new(prov, &["point_index", "x_m", "y_m", "z_m", "power", "power_db"]);
    for (m, p) in grid.path().points().iter().enumerate() {
        table.push(vec![m.into(), p.x.into(), p.y.into(), p.z.into(), map.power[m].into(), map.power_db[m].into()])?;
    }
    Ok(table)
}

pub fn run_energy_map(cfg: &BeamConfig) -> Result<EnergyMapRun> {
    let (grid, array, target, sc) = beam_setup(cfg)?;
    let beam = mr_beam(&grid, &array, target, sc)?;
    let reference = match cfg.reference_power {
        Some(r) => EnergyReference::External(r),
        None => EnergyReference::SelfMax,
    };
    let map = energy_map(&grid, &array, &beam, sc, reference)?;
    let prov = Provenance::new("energy-map", config_hash(cfg), vec![cfg.grid.scene.seed]);
    let table = map_table(prov, &grid, &map)?;
    Ok(EnergyMapRun {
        grid,
        target_index: target,
        map,
        table,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApertureRow {
    pub aperture: f64,
    pub square_rate: f64,
    pub max_snap_m: f64,
    pub random_p5: f64,
    pub random_median: f64,
    pub random_p95: f64,
    pub random_feasible: usize,
    pub status: String,
}

#[derive(Debug, Clone)]
pub struct ApertureSweep {
    pub rows: Vec<ApertureRow>,
    pub table: ReportTable,
}

impl ApertureSweep {
    /// Share of the rate gain between the first and last aperture reached at
    /// `aperture` (which must be one of the swept values).
    pub fn gain_fraction_at(&self, aperture: f64) -> Option<f64> {
        let first = self.rows.first()?.square_rate;
        let last = self.rows.last()?.square_rate;
        let at = self.rows.iter().find(|r| (r.aperture - aperture).abs() < 1e-12)?.square_rate;
        Some((at - first) / (last - first))
    }
}

pub fn run_aperture_sweep(cfg: &ApertureSweepConfig) -> Result<ApertureSweep> {
    require_nonempty(&cfg.apertures, "aperture")?;
    if cfg.apertures.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Config("aperture list must be strictly increasing".into()));
    }
    GeometryKind::Square.check_count(cfg.count)?;
    let path = cfg.scan.path()?;
    let scene = cfg.scene.build(&cfg.scan.extent)?;
    let grid = synthesize_grid(&scene, &path, &[cfg.subcarrier])?;
    let min_spacing = cfg.min_spacing.unwrap_or(scene.plan.carrier_wavelength() / 2.0);

    let mut rows = Vec::with_capacity(cfg.apertures.len());
    for &a in &cfg.apertures {
        let ideal = ideal_array(GeometryKind::Square, cfg.count, a, cfg.center)?;
        let snap = snap_to_grid(&ideal, &path)?;
        let h = extract_channel_matrix(&grid, &snap.indices, cfg.subcarrier)?;
        let square_rate = sum_rate_for(&h, cfg.scheme, cfg.noise_power)?;
        let bounds = Bounds::square(cfg.center, a.sqrt(), ArrayPlane::Xy);
        let draws = random_rates(
            &grid,
            cfg.count,
            bounds,
            min_spacing,
            cfg.random_seed,
            cfg.random_trials,
            cfg.subcarrier,
            cfg.scheme,
            cfg.noise_power,
        )?;
        let feasible = sorted(draws.iter().flatten().copied().collect());
        let (p5, med, p95, status) = if feasible.is_empty() {
            (f64::NAN, f64::NAN, f64::NAN, "random placement infeasible".to_string())
        } else {
            let s = if feasible.len() < draws.len() {
                format!("{} of {} random draws infeasible", draws.len() - feasible.len(), draws.len())
            } else {
                OK.to_string()
            };
            (
                percentile_sorted(&feasible, 0.05),
                percentile_sorted(&feasible, 0.5),
                percentile_sorted(&feasible, 0.95),
                s,
            )
        };
        rows.push(ApertureRow {
            aperture: a,
            square_rate,
            max_snap_m: snap.max_distance(),
            random_p5: p5,
            random_median: med,
            random_p95: p95,
            random_feasible: feasible.len(),
            status,
        });
    }

    let seeds = (0..cfg.random_trials as u64).map(|t| derive_seed(cfg.random_seed, t)).collect();
    let prov = Provenance::new("aperture-sweep", config_hash(cfg), seeds);
    let mut table = ReportTable::new(
        prov,
        &[
            "aperture_m2",
            "square_sum_rate",
            "max_snap_m",
            "random_p5",
            "random_median",
            "random_p95",
            "random_feasible",
            "status",
        ],
    );
    for r in &rows {
        table.push(vec![
            r.aperture.into(),
            r.square_rate.into(),
            r.max_snap_m.into(),
            r.random_p5.into(),
            r.random_median.into(),
            r.random_p95.into(),
            r.random_feasible.into(),
            r.status.clone().into(),
        ])?;
    }
    Ok(ApertureSweep { rows, table })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeometryRow {
    pub geometry: GeometryKind,
    pub count: usize,
    /// For random geometries, the median over trials.
    pub sum_rate: f64,
    pub max_snap_m: f64,
    pub status: String,
}

#[derive(Debug, Clone)]
pub struct GeometrySweep {
    pub rows: Vec<GeometryRow>,
    pub table: ReportTable,
}

impl GeometrySweep {
    pub fn rate(&self, geometry: GeometryKind, count: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.geometry == geometry && r.count == count)
            .map(|r| r.sum_rate)
    }
}

pub fn run_geometry_sweep(cfg: &GeometrySweepConfig) -> Result<GeometrySweep> {
    require_nonempty(&cfg.geometries, "geometry")?;
    require_nonempty(&cfg.counts, "antenna count")?;
    if cfg.geometries.contains(&GeometryKind::Explicit) {
        return Err(Error::Config("explicit arrays cannot be swept".into()));
    }
    let path = cfg.scan.path()?;
    let scene = cfg.scene.build(&cfg.scan.extent)?;
    let grid = synthesize_grid(&scene, &path, &[cfg.subcarrier])?;
    let min_spacing = cfg.min_spacing.unwrap_or(scene.plan.carrier_wavelength() / 2.0);
    let side = cfg.aperture.sqrt();

    let mut rows = Vec::new();
    for &count in &cfg.counts {
        for &kind in &cfg.geometries {
            let skip = |reason: String| GeometryRow {
                geometry: kind,
                count,
                sum_rate: f64::NAN,
                max_snap_m: f64::NAN,
                status: reason,
            };
            if kind == GeometryKind::Random && count > 1 {
                let bounds = Bounds::square(cfg.center, side, ArrayPlane::Xy);
                let draws = random_rates(
                    &grid,
                    count,
                    bounds,
                    min_spacing,
                    cfg.random_seed,
                    cfg.random_trials,
                    cfg.subcarrier,
                    cfg.scheme,
                    cfg.noise_power,
                )?;
                let feasible = sorted(draws.iter().flatten().copied().collect());
                rows.push(if feasible.is_empty() {
                    skip("random placement infeasible".into())
                } else {
                    GeometryRow {
                        geometry: kind,
                        count,
                        sum_rate: percentile_sorted(&feasible, 0.5),
                        max_snap_m: 0.0,
                        status: format!("median of {} draws", feasible.len()),
                    }
                });
                continue;
            }
            let kind_for_layout = if kind == GeometryKind::Random { GeometryKind::LineX } else { kind };
            let ideal = match ideal_array(kind_for_layout, count, cfg.aperture, cfg.center) {
                Ok(a) => a,
                Err(e @ Error::IncompatibleCount { .. }) => {
                    rows.push(skip(e.to_string()));
                    continue;
                }
                Err(e) => return Err(e),
            };
            let snap = snap_to_grid(&ideal, &path)?;
            let h = extract_channel_matrix(&grid, &snap.indices, cfg.subcarrier)?;
            rows.push(GeometryRow {
                geometry: kind,
                count,
                sum_rate: sum_rate_for(&h, cfg.scheme, cfg.noise_power)?,
                max_snap_m: snap.max_distance(),
                status: OK.into(),
            });
        }
    }

    let seeds = (0..cfg.random_trials as u64).map(|t| derive_seed(cfg.random_seed, t)).collect();
    let prov = Provenance::new("geometry-sweep", config_hash(cfg), seeds);
    let mut table = ReportTable::new(prov, &["geometry", "antenna_count", "sum_rate", "max_snap_m", "status"]);
    for r in &rows {
        table.push(vec![
            r.geometry.name().into(),
            r.count.into(),
            r.sum_rate.into(),
            r.max_snap_m.into(),
            r.status.clone().into(),
        ])?;
    }
    Ok(GeometrySweep { rows, table })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrecoderRow {
    pub seed: u64,
    pub scheme: Scheme,
    pub count: usize,
    /// NaN when skipped.
    pub sum_rate: f64,
    pub status: String,
}

#[derive(Debug, Clone)]
pub struct PrecoderCompare {
    pub rows: Vec<PrecoderRow>,
    pub table: ReportTable,
}

impl PrecoderCompare {
    pub fn rates(&self, scheme: Scheme, count: usize) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.scheme == scheme && r.count == count)
            .map(|r| r.sum_rate)
            .collect()
    }

    /// Mean over seeds; NaN if any seed skipped this point.
    pub fn mean_rate(&self, scheme: Scheme, count: usize) -> f64 {
        let v = self.rates(scheme, count);
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub fn run_precoder_compare(cfg: &PrecoderCompareConfig) -> Result<PrecoderCompare> {
    require_nonempty(&cfg.counts, "antenna count")?;
    require_nonempty(&cfg.schemes, "scheme")?;
    require_nonempty(&cfg.seeds, "seed")?;
    if cfg.schemes.contains(&Scheme::Zf) && !(cfg.noise_power > 0.0) {
        return Err(Error::Config(
            "zero-forcing needs noise_power > 0, otherwise its SINR is unbounded".into(),
        ));
    }
    let path = cfg.scan.path()?;
    let layouts: Vec<Vec<usize>> = cfg
        .counts
        .iter()
        .map(|&m| {
            let ideal = ideal_array(GeometryKind::Square, m, cfg.aperture, cfg.center)?;
            Ok(snap_to_grid(&ideal, &path)?.indices)
        })
        .collect::<Result<_>>()?;

    let per_seed: Vec<Vec<PrecoderRow>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let mut spec = cfg.scene.clone();
            spec.seed = seed;
            let scene = spec.build(&cfg.scan.extent)?;
            let mut rows = Vec::new();
            for (&m, idx) in cfg.counts.iter().zip(&layouts) {
                let grid = grid_at(&scene, &path, idx, cfg.subcarrier)?;
                let all: Vec<usize> = (0..idx.len()).collect();
                let mut h = extract_channel_matrix(&grid, &all, cfg.subcarrier)?;
                if cfg.normalize_channel {
                    h = normalized(&h)?;
                }
                for &scheme in &cfg.schemes {
                    let (sum_rate, status) = match sum_rate_for(&h, scheme, cfg.noise_power) {
                        Ok(r) => (r, OK.to_string()),
                        Err(e) if e.class() == ErrorClass::Degenerate => (f64::NAN, format!("skipped: {e}")),
                        Err(e) => return Err(e),
                    };
                    rows.push(PrecoderRow {
                        seed,
                        scheme,
                        count: m,
                        sum_rate,
                        status,
                    });
                }
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    let rows: Vec<PrecoderRow> = per_seed.into_iter().flatten().collect();

    let prov = Provenance::new("precoder-compare", config_hash(cfg), cfg.seeds.clone());
    let mut table = ReportTable::new(prov, &["seed", "scheme", "antenna_count", "sum_rate", "status"]);
    for r in &rows {
        table.push(vec![
            r.seed.into(),
            r.scheme.name().into(),
            r.count.into(),
            r.sum_rate.into(),
            r.status.clone().into(),
        ])?;
    }
    Ok(PrecoderCompare { rows, table })
}

/// Plate covering the `round(n·fraction)` transmitters with the largest x,
/// its inner edge midway between the last covered and first free element.
/// Returns the plate and the indices left unshadowed.
pub fn plate_for_stage(
    users: &[Position],
    fraction: f64,
    plate: &PlateSpec,
) -> Result<(Option<Occluder>, Vec<usize>)> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Config(format!("occlusion fraction {fraction} outside [0, 1]")));
    }
    let n = users.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| users[a].x.total_cmp(&users[b].x));
    let covered = (n as f64 * fraction).round() as usize;
    let free: Vec<usize> = {
        let mut f = order[..n - covered].to_vec();
        f.sort_unstable();
        f
    };
    if covered == 0 {
        return Ok((None, free));
    }
    let xs: Vec<f64> = order.iter().map(|&i| users[i].x).collect();
    let u1 = xs[n - 1] + plate.margin;
    let u0 = if covered == n {
        xs[0] - plate.margin
    } else {
        (xs[n - covered - 1] + xs[n - covered]) / 2.0
    };
    let occ = Occluder::vertical(Axis::Y, plate.y, u0, u1, plate.z_min, plate.z_max)?;
    Ok((Some(occ), free))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageResult {
    pub seed: u64,
    pub fraction: f64,
    pub covered: usize,
    /// Spatial SIR at the target in dB; NaN for a degenerate stage.
    pub sir_db: f64,
    /// Share of MR precoder energy on unshadowed transmitters.
    pub unshadowed_energy: f64,
    /// Peak of the energy map relative to the LoS-stage maximum, dB.
    pub map_peak_db: f64,
    pub degenerate: bool,
    pub status: String,
}

#[derive(Debug, Clone)]
pub struct Transition {
    pub stages: Vec<StageResult>,
    pub target_index: usize,
    /// Energy maps of the first seed, one per stage (None when degenerate).
    pub maps: Vec<Option<EnergyMap>>,
    pub path: ScanPath,
    pub table: ReportTable,
}

impl Transition {
    pub fn stage(&self, seed: u64, fraction: f64) -> Option<&StageResult> {
        self.stages
            .iter()
            .find(|s| s.seed == seed && (s.fraction - fraction).abs() < 1e-12)
    }
}

struct StageOutcome {
    result: StageResult,
    map: Option<EnergyMap>,
}

fn run_stage(
    cfg: &TransitionConfig,
    base: &Scene,
    path: &ScanPath,
    target: usize,
    fraction: f64,
    los_reference: Option<f64>,
) -> Result<StageOutcome> {
    let sc = cfg.subcarrier;
    let (plate, free) = plate_for_stage(&base.users, fraction, &cfg.plate)?;
    let mut scene = base.clone();
    scene.occluders.extend(plate);
    let grid = synthesize_grid(&scene, path, &[sc])?;
    let array: Vec<usize> = (0..grid.num_users()).collect();
    let radius = cfg.exclusion_radius.unwrap_or_else(|| default_exclusion_radius(&grid));
    let covered = array.len() - free.len();

    let attempt = || -> Result<(f64, f64, EnergyMap)> {
        let sir = spatial_sir(&grid, &array, target, sc, radius)?;
        let h = ChannelMatrix::from_rows(&[grid.row(target, sc)?])?;
        let energy = antenna_energy(&mr_precoder(&h)?);
        let unshadowed = free.iter().fold(0.0, |acc, &i| acc + energy[i]);
        let beam = mr_beam(&grid, &array, target, sc)?;
        let reference = match los_reference {
            Some(r) => EnergyReference::External(r),
            None => EnergyReference::SelfMax,
        };
        let map = energy_map(&grid, &array, &beam, sc, reference)?;
        Ok((sir.value_db.to_f64(), unshadowed, map))
    };
    let base_result = StageResult {
        seed: base.seed,
        fraction,
        covered,
        sir_db: f64::NAN,
        unshadowed_energy: f64::NAN,
        map_peak_db: f64::NAN,
        degenerate: true,
        status: String::new(),
    };
    match attempt() {
        Ok((sir_db, unshadowed_energy, map)) => Ok(StageOutcome {
            result: StageResult {
                sir_db,
                unshadowed_energy,
                map_peak_db: to_db(map.max() / map.reference_power),
                degenerate: false,
                status: OK.into(),
                ..base_result
            },
            map: Some(map),
        }),
        Err(e) if e.class() == ErrorClass::Degenerate => Ok(StageOutcome {
            result: StageResult {
                status: format!("degenerate: {e}"),
                ..base_result
            },
            map: None,
        }),
        Err(e) => Err(e),
    }
}

pub fn run_occlusion_transition(cfg: &TransitionConfig) -> Result<Transition> {
    require_nonempty(&cfg.stages, "stage")?;
    require_nonempty(&cfg.seeds, "seed")?;
    if cfg.stages[0] != 0.0 || cfg.stages.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Config("stages must start at 0 and increase".into()));
    }
    let path = cfg.scan.path()?;
    let target = path.nearest_index(&cfg.target);

    let per_seed: Vec<Vec<StageOutcome>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let mut spec = cfg.scene.clone();
            spec.seed = seed;
            let scene = spec.build(&cfg.scan.extent)?;
            let mut out: Vec<StageOutcome> = Vec::with_capacity(cfg.stages.len());
            let mut los_reference = None;
            for &f in &cfg.stages {
                let o = run_stage(cfg, &scene, &path, target, f, los_reference)?;
                if f == 0.0 {
                    los_reference = o.map.as_ref().map(|m| m.max()).filter(|&r| r > 0.0);
                }
                out.push(o);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let mut stages = Vec::new();
    let mut maps = Vec::new();
    for (i, outcomes) in per_seed.into_iter().enumerate() {
        for o in outcomes {
            if i == 0 {
                maps.push(o.map);
            }
            stages.push(o.result);
        }
    }

    let prov = Provenance::new("occlusion-transition", config_hash(cfg), cfg.seeds.clone());
    let mut table = ReportTable::new(
        prov,
        &["seed", "fraction", "covered", "sir_db", "unshadowed_energy", "map_peak_db", "status"],
    );
    for s in &stages {
        table.push(vec![
            s.seed.into(),
            s.fraction.into(),
            s.covered.into(),
            s.sir_db.into(),
            s.unshadowed_energy.into(),
            s.map_peak_db.into(),
            s.status.clone().into(),
        ])?;
    }
    Ok(Transition {
        stages,
        target_index: target,
        maps,
        path,
        table,
    })
}

#[derive(Debug, Clone)]
pub struct SounderSim {
    pub mse_single: f64,
    pub mse_averaged: f64,
    pub gain_db: f64,
    pub expected_gain_db: f64,
    pub noise_estimate_mean: f64,
    pub noise_estimate_ratio: f64,
    pub snr_ok_fraction: f64,
    pub table: ReportTable,
}

/// Mean squared estimation error over the used tones, plus the noise and SNR
/// outputs, for one sounding.
fn sounding_error(truth: &[Complex64], cfg: &SounderConfig, noise: f64, seed: u64) -> Result<(f64, f64, bool)> {
    let est = simulate_sounding(truth, cfg, noise, seed)?;
    let used = cfg.plan.used_subcarriers();
    let n = used.len() as f64;
    let mse = used.map(|k| (est.estimate[k] - truth[k]).norm_sqr()).sum::<f64>() / n;
    Ok((mse, est.noise_power_estimate, est.snr_ok))
}

pub fn run_sounder_sim(cfg: &SounderSimConfig) -> Result<SounderSim> {
    cfg.sounder.validate()?;
    if cfg.runs == 0 {
        return Err(Error::Config("runs must be at least 1".into()));
    }
    let mut spec = cfg.scene.clone();
    spec.plan = cfg.sounder.plan;
    let around = Bounds { min: cfg.rx, max: cfg.rx };
    let scene = spec.build(&around)?;
    let truth: Vec<Complex64> = (0..cfg.sounder.plan.num_subcarriers)
        .map(|k| scene.scene_coefficient(0, &cfg.rx, Tone::Subcarrier(k)))
        .collect::<Result<_>>()?;
    let single = SounderConfig {
        symbols_per_packet: 1,
        ..cfg.sounder
    };

    let draws: Vec<((f64, f64, bool), (f64, f64, bool))> = (0..cfg.runs as u64)
        .into_par_iter()
        .map(|i| {
            let a = sounding_error(&truth, &cfg.sounder, cfg.noise_power, derive_seed(cfg.seed, 2 * i))?;
            let b = sounding_error(&truth, &single, cfg.noise_power, derive_seed(cfg.seed, 2 * i + 1))?;
            Ok((a, b))
        })
        .collect::<Result<_>>()?;
    let runs = cfg.runs as f64;
    let mse_averaged = draws.iter().map(|d| d.0 .0).sum::<f64>() / runs;
    let mse_single = draws.iter().map(|d| d.1 .0).sum::<f64>() / runs;
    let noise_estimate_mean = draws.iter().map(|d| d.0 .1).sum::<f64>() / runs;
    let snr_ok_fraction = draws.iter().filter(|d| d.0 .2).count() as f64 / runs;
    let gain_db = to_db(mse_single / mse_averaged);
    let expected_gain_db = cfg.sounder.averaging_gain_db();
    let noise_estimate_ratio = noise_estimate_mean / cfg.noise_power;

    let prov = Provenance::new("sounder-sim", config_hash(cfg), vec![cfg.seed]);
    let mut table = ReportTable::new(prov, &["quantity", "value"]);
    for (k, v) in [
        ("runs", runs),
        ("symbols_per_packet", cfg.sounder.symbols_per_packet as f64),
        ("noise_power", cfg.noise_power),
        ("mse_single_symbol", mse_single),
        ("mse_averaged", mse_averaged),
        ("averaging_gain_db", gain_db),
        ("expected_gain_db", expected_gain_db),
        ("noise_estimate_mean", noise_estimate_mean),
        ("noise_estimate_ratio", noise_estimate_ratio),
        ("snr_ok_fraction", snr_ok_fraction),
    ] {
        table.push(vec![k.into(), Cell::Num(v)])?;
    }
    Ok(SounderSim {
        mse_single,
        mse_averaged,
        gain_db,
        expected_gain_db,
        noise_estimate_mean,
        noise_estimate_ratio,
        snr_ok_fraction,
        table,
    })
}

#[derive(Debug, Clone)]
pub struct PhaseStatsRun {
    pub stats: PhaseDiffStats,
    /// λ·Δφ/2π for the injected drift span, when drift was requested.
    pub drift_offset_m: Option<f64>,
    pub table: ReportTable,
}

fn phase_table(prov: Provenance, stats: &PhaseDiffStats, drift_offset_m: Option<f64>) -> Result<ReportTable> {
    let mut table = ReportTable::new(prov, &["quantity", "value"]);
    table.push(vec!["samples".into(), stats.diffs.len().into()])?;
    table.push(vec!["circular_mean_rad".into(), stats.circular_mean.into()])?;
    table.push(vec!["resultant_length".into(), stats.resultant_length.into()])?;
    table.push(vec!["offset_p99_m".into(), stats.offset_p99.into()])?;
    if let Some(d) = drift_offset_m {
        table.push(vec!["drift_offset_m".into(), d.into()])?;
    }
    Ok(table)
}

/// Compare two existing grids (e.g. two imported scans).
pub fn phase_stats_between(a: &ChannelGrid, b: &ChannelGrid, subcarrier: usize, config_hash: String) -> Result<PhaseStatsRun> {
    let stats = grid_phase_stats(a, b, subcarrier)?;
    let table = phase_table(Provenance::new("phase-stats", config_hash, vec![]), &stats, None)?;
    Ok(PhaseStatsRun {
        stats,
        drift_offset_m: None,
        table,
    })
}

/// Scan the same scene twice, the second time with every transmitter moved
/// by `shift` and an optional oscillator drift, and compare phases.
pub fn run_phase_stats(cfg: &PhaseStatsConfig) -> Result<PhaseStatsRun> {
    let a = simulate_grid(&cfg.grid)?;
    let path = a.path().clone();
    let first = cfg.grid.scene.build(&cfg.grid.scan.extent)?;
    let mut moved = first.clone();
    for u in &mut moved.users {
        *u = *u + cfg.shift;
    }
    moved.validate()?;
    let mut b = synthesize_grid(&moved, &path, &cfg.grid.subcarriers)?;
    let mut drift_offset_m = None;
    if let Some((start, end)) = cfg.drift {
        b = apply_phase_drift(&b, start, end)?;
        let lambda = crate::geometry::wavelength(a.plan(), Tone::Subcarrier(cfg.subcarrier))?;
        drift_offset_m = Some(phase_to_offset(end - start, lambda));
    }
    let stats = grid_phase_stats(&a, &b, cfg.subcarrier)?;
    let prov = Provenance::new("phase-stats", config_hash(cfg), vec![cfg.grid.scene.seed]);
    let table = phase_table(prov, &stats, drift_offset_m)?;
    Ok(PhaseStatsRun {
        stats,
        drift_offset_m,
        table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ScanSpec, ScattererSpec, SceneSpec, UsersSpec};
    use crate::geometry::FrequencyPlan;
    use crate::precoding::mr_precoder;

    fn small_scan() -> ScanSpec {
        let mut s = ScanSpec::plane(0.4);
        s.extent.max.x = 0.8;
        s
    }

    #[test]
    fn aperture_sweep_single_row_and_deterministic() {
        let cfg = ApertureSweepConfig {
            apertures: vec![0.05],
            random_trials: 8,
            ..ApertureSweepConfig::default()
        };
        let a = run_aperture_sweep(&cfg).unwrap();
        let b = run_aperture_sweep(&cfg).unwrap();
        assert_eq!(a.rows.len(), 1);
        assert_eq!(a.table.to_csv_string(), b.table.to_csv_string());
        let r = &a.rows[0];
        assert!(r.random_p5 <= r.random_median && r.random_median <= r.random_p95);
    }

    #[test]
    fn tiny_aperture_random_band_is_infeasible() {
        let cfg = ApertureSweepConfig {
            apertures: vec![0.0064],
            random_trials: 2,
            ..ApertureSweepConfig::default()
        };
        let r = &run_aperture_sweep(&cfg).unwrap().rows[0];
        assert!(r.random_p5.is_nan());
        assert!(r.square_rate.is_finite());
        assert!(r.max_snap_m < 1e-9, "3×3 at one coarse pitch lands on grid points");
    }

    #[test]
    fn aperture_list_must_increase() {
        let cfg = ApertureSweepConfig {
            apertures: vec![0.05, 0.02],
            ..ApertureSweepConfig::default()
        };
        assert_eq!(run_aperture_sweep(&cfg).unwrap_err().class(), ErrorClass::Config);
    }

    #[test]
    fn single_antenna_geometries_coincide() {
        let cfg = GeometrySweepConfig {
            counts: vec![1],
            random_trials: 3,
            ..GeometrySweepConfig::default()
        };
        let s = run_geometry_sweep(&cfg).unwrap();
        let rates: Vec<f64> = s.rows.iter().map(|r| r.sum_rate).collect();
        assert_eq!(rates.len(), 6);
        assert!(rates.iter().all(|&r| r == rates[0]), "{rates:?}");
    }

    #[test]
    fn incompatible_counts_are_skipped() {
        let cfg = GeometrySweepConfig {
            counts: vec![16],
            geometries: vec![GeometryKind::Cross, GeometryKind::Square],
            ..GeometrySweepConfig::default()
        };
        let s = run_geometry_sweep(&cfg).unwrap();
        assert!(s.rate(GeometryKind::Cross, 16).unwrap().is_nan());
        assert!(s.rows[0].status.contains("1 mod 4"));
        assert!(s.rate(GeometryKind::Square, 16).unwrap().is_finite());
    }

    #[test]
    fn square_zf_skipped_with_reason() {
        let cfg = PrecoderCompareConfig {
            counts: vec![16, 25],
            seeds: vec![3],
            ..PrecoderCompareConfig::default()
        };
        let r = run_precoder_compare(&cfg).unwrap();
        let zf16 = r.rows.iter().find(|r| r.scheme == Scheme::Zf && r.count == 16).unwrap();
        assert!(zf16.sum_rate.is_nan());
        assert!(zf16.status.starts_with("skipped"));
        assert!(r.mean_rate(Scheme::Zf, 25).is_finite());
        assert!(r.mean_rate(Scheme::Mr, 16).is_finite());
    }

    #[test]
    fn zf_without_noise_is_refused() {
        let cfg = PrecoderCompareConfig {
            noise_power: 0.0,
            ..PrecoderCompareConfig::default()
        };
        assert_eq!(run_precoder_compare(&cfg).unwrap_err().class(), ErrorClass::Config);
    }

    #[test]
    fn precoder_rows_reproducible_from_module_calls() {
        let cfg = PrecoderCompareConfig {
            counts: vec![25],
            seeds: vec![7],
            schemes: vec![Scheme::Mr],
            ..PrecoderCompareConfig::default()
        };
        let run = run_precoder_compare(&cfg).unwrap();
        let mut spec = cfg.scene.clone();
        spec.seed = 7;
        let scene = spec.build(&cfg.scan.extent).unwrap();
        let ideal = make_array(GeometryKind::Square, 25, cfg.aperture, cfg.center, ArrayPlane::Xy).unwrap();
        let h = ChannelMatrix::new(
            nalgebra::DMatrix::from_fn(16, 25, |n, m| {
                let snapped = ideal.elements[m];
                let path = cfg.scan.path().unwrap();
                let p = path.points()[path.nearest_index(&snapped)];
                scene.scene_coefficient(n, &p, Tone::Subcarrier(cfg.subcarrier)).unwrap()
            }),
            cfg.subcarrier,
        )
        .unwrap();
        let power = h.matrix().iter().map(|c| c.norm_sqr()).sum::<f64>() / 400.0;
        let h = h.scaled(Complex64::new(power.sqrt().recip(), 0.0)).unwrap();
        let expected = sum_rate(&h, &mr_precoder(&h).unwrap(), cfg.noise_power).unwrap().sum_rate;
        assert_eq!(run.rows[0].sum_rate, expected);
    }

    #[test]
    fn plate_edges() {
        let lam = FrequencyPlan::default().carrier_wavelength();
        let users = UsersSpec::SpacedLine {
            center: Position::new(1.0, 3.25, 1.1),
            spacing: lam,
            count: 6,
        }
        .resolve()
        .unwrap();
        let spec = PlateSpec::default();
        let (none, free) = plate_for_stage(&users, 0.0, &spec).unwrap();
        assert!(none.is_none());
        assert_eq!(free.len(), 6);
        let (occ, free) = plate_for_stage(&users, 1.0 / 3.0, &spec).unwrap();
        assert_eq!(free, vec![0, 1, 2, 3]);
        let occ = occ.unwrap();
        let edge = occ.center.x - occ.width / 2.0;
        assert!((edge - (users[3].x + users[4].x) / 2.0).abs() < 1e-12);
        let (_, free) = plate_for_stage(&users, 1.0, &spec).unwrap();
        assert!(free.is_empty());
    }

    #[test]
    fn hard_blockage_transition() {
        let cfg = TransitionConfig {
            scene: SceneSpec {
                scatterers: ScattererSpec::none(),
                ..TransitionConfig::default().scene
            },
            scan: small_scan(),
            target: Position::new(0.4, 0.2, 1.1),
            seeds: vec![0],
            ..TransitionConfig::default()
        };
        let t = run_occlusion_transition(&cfg).unwrap();
        let los = t.stage(0, 0.0).unwrap();
        assert!(!los.degenerate);
        assert!(los.map_peak_db.abs() < 1e-9);
        assert_eq!(t.stage(0, 2.0 / 3.0).unwrap().unshadowed_energy, 1.0);
        let full = t.stage(0, 1.0).unwrap();
        assert!(full.degenerate, "{full:?}");
        assert!(t.maps[3].is_none());
    }

    #[test]
    fn wavefront_rings_match_wavelength() {
        let mut cfg = WavefrontConfig::default();
        cfg.grid.scan = small_scan();
        let w = run_wavefront(&cfg).unwrap();
        assert!((w.rings.median_spacing / w.rings.wavelength - 1.0).abs() < 0.02);
    }

    #[test]
    fn sounder_gain_small_run() {
        let cfg = SounderSimConfig {
            runs: 200,
            ..SounderSimConfig::default()
        };
        let s = run_sounder_sim(&cfg).unwrap();
        assert!((s.gain_db - 13.0).abs() < 1.0, "{}", s.gain_db);
        assert!((s.noise_estimate_ratio - 1.0).abs() < 0.05);
    }

    #[test]
    fn injected_drift_recovered() {
        let mut cfg = PhaseStatsConfig::default();
        cfg.grid.scan = small_scan();
        cfg.shift = Position::ORIGIN;
        cfg.drift = Some((0.0, 0.5));
        let r = run_phase_stats(&cfg).unwrap();
        let lam = FrequencyPlan::default().carrier_wavelength();
        assert!((r.drift_offset_m.unwrap() - lam * 0.5 / std::f64::consts::TAU).abs() < 1e-15);
        assert!(r.stats.resultant_length < 1.0);
        cfg.drift = None;
        let same = run_phase_stats(&cfg).unwrap();
        assert_eq!(same.stats.resultant_length, 1.0);
        assert_eq!(same.stats.offset_p99, 0.0);
    }
}

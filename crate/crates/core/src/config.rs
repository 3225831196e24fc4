//! JSON experiment configurations. Every field has a desk-scale default, so
//! a config file only needs the values it changes.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{Bounds, FrequencyPlan, GeometryKind, Position};
use crate::precoding::Scheme;
use crate::scanpath::{meander_path, ScanPath, ScanPlane};
use crate::scene::{place_scatterers_avoiding, synthesize_grid, ChannelGrid, Occluder, Scene};
use crate::sounder::SounderConfig;

/// Height of the scanned plane and of the default transmitters.
pub const DEFAULT_HEIGHT: f64 = 1.1;
/// y coordinate of the default user / transmit-array line.
pub const DEFAULT_LINE_Y: f64 = 3.25;

fn p(x: f64, y: f64, z: f64) -> Position {
    Position::new(x, y, z)
}

fn room() -> Bounds {
    Bounds {
        min: p(-1.0, -1.0, 0.0),
        max: p(3.0, 4.5, 3.0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UsersSpec {
    Explicit(Vec<Position>),
    /// `count` points evenly spaced from `start` to `end` inclusive.
    Line {
        start: Position,
        end: Position,
        count: usize,
    },
    /// `count` points spaced `spacing` apart along x, centered on `center`.
    SpacedLine {
        center: Position,
        spacing: f64,
        count: usize,
    },
}

impl UsersSpec {
    pub fn resolve(&self) -> Result<Vec<Position>> {
        let pts = match self {
            UsersSpec::Explicit(v) => v.clone(),
            UsersSpec::Line { start, end, count } => match count {
                0 => Vec::new(),
                1 => vec![*start],
                n => (0..*n)
                    .map(|i| *start + (*end - *start) * (i as f64 / (*n - 1) as f64))
                    .collect(),
            },
            UsersSpec::SpacedLine {
                center,
                spacing,
                count,
            } => {
                let mid = (*count as f64 - 1.0) / 2.0;
                (0..*count)
                    .map(|k| Position::new(center.x + (k as f64 - mid) * spacing, center.y, center.z))
                    .collect()
            }
        };
        if pts.is_empty() {
            return Err(Error::Config("user list is empty".into()));
        }
        Ok(pts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScattererSpec {
    pub count: usize,
    pub gain_magnitude: f64,
    pub region: Bounds,
    /// Scatterers are kept this far from users and from the scanned extent.
    pub keep_out_margin: f64,
}

impl Default for ScattererSpec {
    /// 64 scatterers of |gain| 0.3 in the measurement room, λ/2 keep-out.
    fn default() -> Self {
        ScattererSpec {
            count: 64,
            gain_magnitude: 0.3,
            region: room(),
            keep_out_margin: FrequencyPlan::default().carrier_wavelength() / 2.0,
        }
    }
}

impl ScattererSpec {
    pub fn none() -> Self {
        ScattererSpec {
            count: 0,
            ..ScattererSpec::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub plan: FrequencyPlan,
    pub users: UsersSpec,
    pub occluders: Vec<Occluder>,
    pub scatterers: ScattererSpec,
    pub seed: u64,
}

impl Default for SceneSpec {
    /// 16 users on a 2 m line at y = 3.25 m, pure LoS.
    fn default() -> Self {
        SceneSpec {
            plan: FrequencyPlan::default(),
            users: UsersSpec::Line {
                start: p(0.0, DEFAULT_LINE_Y, DEFAULT_HEIGHT),
                end: p(2.0, DEFAULT_LINE_Y, DEFAULT_HEIGHT),
                count: 16,
            },
            occluders: Vec::new(),
            scatterers: ScattererSpec::none(),
            seed: 0,
        }
    }
}

impl SceneSpec {
    /// Materialize the scene. Scatterers are drawn from `seed`, avoiding the
    /// users and the scanned `extent` by the keep-out margin.
    pub fn build(&self, extent: &Bounds) -> Result<Scene> {
        let users = self.users.resolve()?;
        let s = &self.scatterers;
        let mut keep_out: Vec<Bounds> = Vec::new();
        if s.keep_out_margin > 0.0 {
            keep_out.extend(users.iter().map(|u| Bounds { min: *u, max: *u }.inflate(s.keep_out_margin)));
            keep_out.push(extent.inflate(s.keep_out_margin));
        }
        let scatterers =
            place_scatterers_avoiding(s.count, s.region, s.gain_magnitude, self.seed, &keep_out)?;
        Scene::new(users, self.plan, self.occluders.clone(), scatterers, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScanSpec {
    pub extent: Bounds,
    pub plane: ScanPlane,
    pub fine_pitch: f64,
    pub coarse_pitch: f64,
}

impl ScanSpec {
    /// 4 mm × 4 cm meander over x ∈ [0, 2], y ∈ [0, depth] at the default height.
    pub fn plane(depth: f64) -> Self {
        ScanSpec {
            extent: Bounds {
                min: p(0.0, 0.0, DEFAULT_HEIGHT),
                max: p(2.0, depth, DEFAULT_HEIGHT),
            },
            plane: ScanPlane::Xy,
            fine_pitch: 0.004,
            coarse_pitch: 0.04,
        }
    }

    pub fn path(&self) -> Result<ScanPath> {
        let e = Bounds::new(self.extent.min, self.extent.max)?;
        meander_path(e, self.plane, self.fine_pitch, self.coarse_pitch)
    }
}

impl Default for ScanSpec {
    fn default() -> Self {
        ScanSpec::plane(0.6)
    }
}

/// Side of the largest square aperture on the default 42-line scan.
pub const MAX_SQUARE_SIDE: f64 = 1.64;

/// Array center for the sweeps. Sits on a scan line so that lattice rows
/// spaced one coarse pitch apart snap without ties.
fn sweep_center() -> Position {
    p(1.0, 0.8, DEFAULT_HEIGHT)
}

fn center_subcarrier() -> usize {
    FrequencyPlan::default().center_subcarrier()
}

/// Scene plus scan, shared by the grid-level commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub scene: SceneSpec,
    pub scan: ScanSpec,
    pub subcarriers: Vec<usize>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            scene: SceneSpec::default(),
            scan: ScanSpec::default(),
            subcarriers: vec![center_subcarrier()],
        }
    }
}

impl GridConfig {
    pub fn synthesize(&self) -> Result<ChannelGrid> {
        let path = self.scan.path()?;
        let scene = self.scene.build(&self.scan.extent)?;
        synthesize_grid(&scene, &path, &self.subcarriers)
    }
}

/// Single transmitter at equal height with the scan, LoS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WavefrontConfig {
    pub grid: GridConfig,
    pub user: usize,
}

impl Default for WavefrontConfig {
    fn default() -> Self {
        WavefrontConfig {
            grid: GridConfig {
                scene: SceneSpec {
                    users: UsersSpec::Explicit(vec![p(1.0, DEFAULT_LINE_Y, DEFAULT_HEIGHT)]),
                    ..SceneSpec::default()
                },
                ..GridConfig::default()
            },
            user: 0,
        }
    }
}

/// Transmit array of 16 elements at one-wavelength spacing, as used for
/// energy maps, spatial SIR and the occlusion study.
fn spaced_array_users() -> UsersSpec {
    UsersSpec::SpacedLine {
        center: p(1.0, DEFAULT_LINE_Y, DEFAULT_HEIGHT),
        spacing: FrequencyPlan::default().carrier_wavelength(),
        count: 16,
    }
}

/// Beamforming from the grid's transmitters towards one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BeamConfig {
    pub grid: GridConfig,
    /// Transmitters forming the array; all of them when absent.
    pub array: Option<Vec<usize>>,
    pub target: Position,
    /// Defaults to half the carrier wavelength.
    pub exclusion_radius: Option<f64>,
    /// External 0 dB reference power for energy maps; own maximum when absent.
    pub reference_power: Option<f64>,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            grid: GridConfig {
                scene: SceneSpec {
                    users: spaced_array_users(),
                    ..SceneSpec::default()
                },
                ..GridConfig::default()
            },
            array: None,
            target: p(1.2, 0.2, DEFAULT_HEIGHT),
            exclusion_radius: None,
            reference_power: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ApertureSweepConfig {
    pub scene: SceneSpec,
    pub scan: ScanSpec,
    pub subcarrier: usize,
    pub center: Position,
    /// Square-array element count (k × k).
    pub count: usize,
    /// Effective apertures in m², increasing.
    pub apertures: Vec<f64>,
    pub scheme: Scheme,
    pub noise_power: f64,
    pub random_trials: usize,
    pub random_seed: u64,
    /// Defaults to half the carrier wavelength.
    pub min_spacing: Option<f64>,
}

impl Default for ApertureSweepConfig {
    fn default() -> Self {
        ApertureSweepConfig {
            scene: SceneSpec::default(),
            scan: ScanSpec::plane(MAX_SQUARE_SIDE),
            subcarrier: center_subcarrier(),
            center: sweep_center(),
            count: 9,
            apertures: vec![0.0064, 0.01, 0.015, 0.02, 0.03, 0.05, 0.08, 0.12, 0.16],
            scheme: Scheme::Mr,
            noise_power: 0.0,
            random_trials: 100,
            random_seed: 0,
            min_spacing: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeometrySweepConfig {
    pub scene: SceneSpec,
    pub scan: ScanSpec,
    pub subcarrier: usize,
    pub center: Position,
    /// Common aperture in m² for every geometry.
    pub aperture: f64,
    pub geometries: Vec<GeometryKind>,
    pub counts: Vec<usize>,
    pub scheme: Scheme,
    pub noise_power: f64,
    pub random_trials: usize,
    pub random_seed: u64,
    pub min_spacing: Option<f64>,
}

impl Default for GeometrySweepConfig {
    fn default() -> Self {
        GeometrySweepConfig {
            scene: SceneSpec::default(),
            scan: ScanSpec::plane(MAX_SQUARE_SIDE),
            subcarrier: center_subcarrier(),
            center: sweep_center(),
            aperture: MAX_SQUARE_SIDE * MAX_SQUARE_SIDE,
            geometries: vec![
                GeometryKind::LineX,
                GeometryKind::LineY,
                GeometryKind::Square,
                GeometryKind::Cross,
                GeometryKind::Circle,
                GeometryKind::Random,
            ],
            counts: vec![9, 16, 25],
            scheme: Scheme::Mr,
            noise_power: 0.0,
            random_trials: 100,
            random_seed: 0,
            min_spacing: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrecoderCompareConfig {
    /// Template scene; its seed is replaced by each entry of `seeds`.
    pub scene: SceneSpec,
    pub scan: ScanSpec,
    pub subcarrier: usize,
    pub center: Position,
    pub aperture: f64,
    /// Square-array element counts.
    pub counts: Vec<usize>,
    pub schemes: Vec<Scheme>,
    /// Scale each H to unit mean entry power before precoding, so that
    /// `noise_power` is relative to the average channel gain.
    pub normalize_channel: bool,
    pub noise_power: f64,
    pub seeds: Vec<u64>,
}

impl Default for PrecoderCompareConfig {
    /// Users behind a plate at y = 2.5 m with 64 scatterers, M ∈ {16, 25, 36, 49}.
    fn default() -> Self {
        PrecoderCompareConfig {
            scene: SceneSpec {
                occluders: vec![Occluder {
                    center: p(1.0, 2.5, 1.0),
                    width: 2.4,
                    height: 2.0,
                    normal: crate::geometry::Axis::Y,
                }],
                scatterers: ScattererSpec::default(),
                ..SceneSpec::default()
            },
            scan: ScanSpec::plane(MAX_SQUARE_SIDE),
            subcarrier: center_subcarrier(),
            center: sweep_center(),
            aperture: MAX_SQUARE_SIDE * MAX_SQUARE_SIDE,
            counts: vec![16, 25, 36, 49],
            schemes: Scheme::ALL.to_vec(),
            normalize_channel: true,
            noise_power: 0.1,
            seeds: (0..20).collect(),
        }
    }
}

/// Plate normal to y, sliding in from the high-x end of the transmit array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlateSpec {
    pub y: f64,
    pub z_min: f64,
    pub z_max: f64,
    /// Overhang beyond the outermost covered element, meters.
    pub margin: f64,
}

impl Default for PlateSpec {
    fn default() -> Self {
        PlateSpec {
            y: 3.0,
            z_min: 0.0,
            z_max: 2.0,
            margin: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransitionConfig {
    /// Users here are the transmit-array elements.
    pub scene: SceneSpec,
    pub scan: ScanSpec,
    pub subcarrier: usize,
    pub plate: PlateSpec,
    /// Fraction of array elements covered per stage, in [0, 1], increasing.
    pub stages: Vec<f64>,
    pub target: Position,
    pub exclusion_radius: Option<f64>,
    pub seeds: Vec<u64>,
}

impl Default for TransitionConfig {
    fn default() -> Self {
        TransitionConfig {
            scene: SceneSpec {
                users: spaced_array_users(),
                scatterers: ScattererSpec::default(),
                ..SceneSpec::default()
            },
            scan: ScanSpec::plane(0.6),
            subcarrier: center_subcarrier(),
            plate: PlateSpec::default(),
            stages: vec![0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0],
            target: p(0.74, 0.4, DEFAULT_HEIGHT),
            exclusion_radius: None,
            seeds: (0..20).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SounderSimConfig {
    pub sounder: SounderConfig,
    /// Link whose frequency response is sounded.
    pub scene: SceneSpec,
    pub rx: Position,
    pub noise_power: f64,
    pub runs: usize,
    pub seed: u64,
}

impl Default for SounderSimConfig {
    fn default() -> Self {
        SounderSimConfig {
            sounder: SounderConfig::default(),
            scene: SceneSpec {
                users: UsersSpec::Explicit(vec![p(1.0, DEFAULT_LINE_Y, DEFAULT_HEIGHT)]),
                scatterers: ScattererSpec::default(),
                ..SceneSpec::default()
            },
            rx: p(1.0, 0.3, DEFAULT_HEIGHT),
            noise_power: 1e-8,
            runs: 10_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhaseStatsConfig {
    pub grid: GridConfig,
    /// Transmitter displacement between the two scans, meters.
    pub shift: Position,
    /// Linear phase drift (start, end) in radians injected into the second
    /// scan.
    pub drift: Option<(f64, f64)>,
    pub subcarrier: usize,
}

impl Default for PhaseStatsConfig {
    fn default() -> Self {
        let lam = FrequencyPlan::default().carrier_wavelength();
        PhaseStatsConfig {
            grid: GridConfig {
                scene: SceneSpec {
                    users: UsersSpec::Explicit(vec![p(1.0, DEFAULT_LINE_Y, DEFAULT_HEIGHT)]),
                    scatterers: ScattererSpec::default(),
                    ..SceneSpec::default()
                },
                ..GridConfig::default()
            },
            shift: p(lam, 0.0, 0.0),
            drift: None,
            subcarrier: center_subcarrier(),
        }
    }
}

/// Parse a config, rejecting unknown fields' typos through serde errors.
pub fn parse_config<T: DeserializeOwned>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))
}

/// SHA-256 of the serialized config, hex encoded.
pub fn config_hash<T: Serialize>(cfg: &T) -> String {
    let json = serde_json::to_vec(cfg).expect("config serializes");
    hex::encode(Sha256::digest(&json))
}

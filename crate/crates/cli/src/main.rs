//! `areamimo`: batch experiments over synthetic or imported channel grids.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical degeneracy,
//! 4 I/O error.

mod render;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;

use areamimo_core::config::{
    config_hash, parse_config, ApertureSweepConfig, BeamConfig, GeometrySweepConfig, GridConfig,
    PhaseStatsConfig, PrecoderCompareConfig, SounderSimConfig, TransitionConfig, WavefrontConfig,
};
use areamimo_core::experiments as exp;
use areamimo_core::gridio::{export_grid, import_grid};
use areamimo_core::precoding::Scheme;
use areamimo_core::report::{Provenance, ReportTable};
use areamimo_core::scene::ChannelGrid;
use areamimo_core::{Error, Result};

#[derive(Parser)]
#[command(name = "areamimo", version, about = "Area-scan MIMO channel experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Png,
    Both,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON config; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Base seed. Multi-seed studies use seed, seed+1, ...
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a channel grid and store it as a grid file pair.
    SimulateGrid(Common),
    /// Single-transmitter phase field and ring spacing.
    Wavefront(Common),
    /// Received power of an MR beam over the scan area.
    EnergyMap(Common),
    /// Spatial SIR of an MR beam at one target point.
    SpatialSir(Common),
    /// Sum rate of a square array versus aperture, with a random-geometry band.
    ApertureSweep(Common),
    /// Sum rate per array geometry and antenna count.
    GeometrySweep(Common),
    /// MR, PO and ZF sum rates over seeded scenes.
    PrecoderCompare(Common),
    /// Spatial SIR and precoder energy as a plate covers the array.
    OcclusionTransition(Common),
    /// Monte Carlo of the pilot-averaging sounder.
    SounderSim(Common),
    /// Phase agreement between two scans.
    PhaseStats {
        #[command(flatten)]
        common: Common,
        /// Compare two stored grids (give twice) instead of simulating.
        #[arg(long = "grid", num_args = 1)]
        grids: Vec<PathBuf>,
        /// Subcarrier for stored grids; defaults to the first stored tone.
        #[arg(long)]
        subcarrier: Option<usize>,
    },
    /// Synthesize a grid and write it to `<out>/<prefix>`.
    Export {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "grid")]
        prefix: String,
    },
    /// Read a stored grid, validate it and summarize its contents.
    Import {
        #[command(flatten)]
        common: Common,
        /// Path prefix of the `.meta.json` / `.grid.csv` pair.
        #[arg(long)]
        grid: PathBuf,
    },
}

fn load<T: DeserializeOwned + Default>(c: &Common) -> Result<T> {
    match &c.config {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
            parse_config(&text)
        }
    }
}

fn seeds_from(base: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| base + i).collect()
}

struct Out<'a> {
    c: &'a Common,
}

impl Out<'_> {
    fn csv(&self) -> bool {
        self.c.format != Format::Png
    }

    fn png(&self) -> bool {
        self.c.format != Format::Csv
    }

    fn dir(&self) -> Result<&Path> {
        std::fs::create_dir_all(&self.c.out)?;
        Ok(&self.c.out)
    }

    /// Tables are always written as CSV unless only images were asked for.
    fn table(&self, t: &ReportTable, stem: &str) -> Result<()> {
        if self.csv() {
            let (p, _) = t.write(self.dir()?, stem)?;
            println!("wrote {}", p.display());
        }
        Ok(())
    }

    fn heatmap(&self, grid: &ChannelGrid, values: &[f64], stem: &str) -> Result<()> {
        if self.png() {
            let p = self.dir()?.join(format!("{stem}.png"));
            render::heatmap(grid.path(), values, &p)?;
            println!("wrote {}", p.display());
        }
        Ok(())
    }

    fn chart(&self, series: &[Vec<(f64, f64)>], stem: &str) -> Result<()> {
        if self.png() {
            let p = self.dir()?.join(format!("{stem}.png"));
            render::line_chart(series, &p)?;
            println!("wrote {}", p.display());
        }
        Ok(())
    }
}

fn phase_field(grid: &ChannelGrid, user: usize, sc: usize) -> Result<Vec<f64>> {
    Ok(grid.field(user, sc)?.iter().map(|c| c.arg()).collect())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SimulateGrid(c) => {
            let mut cfg: GridConfig = load(&c)?;
            if let Some(s) = c.seed {
                cfg.scene.seed = s;
            }
            let grid = exp::simulate_grid(&cfg)?;
            let o = Out { c: &c };
            if o.csv() {
                let (m, d) = export_grid(&grid, &o.dir()?.join("grid"))?;
                println!("wrote {} and {}", m.display(), d.display());
            }
            o.heatmap(&grid, &phase_field(&grid, 0, cfg.subcarriers[0])?, "grid_phase_user0")?;
        }
        Command::Wavefront(c) => {
            let mut cfg: WavefrontConfig = load(&c)?;
            if let Some(s) = c.seed {
                cfg.grid.scene.seed = s;
            }
            let w = exp::run_wavefront(&cfg)?;
            let o = Out { c: &c };
            o.table(&w.table, "wavefront")?;
            o.heatmap(&w.grid, &phase_field(&w.grid, cfg.user, cfg.grid.subcarriers[0])?, "wavefront_phase")?;
            println!(
                "median ring spacing {:.6} m, wavelength {:.6} m",
                w.rings.median_spacing, w.rings.wavelength
            );
        }
        Command::EnergyMap(c) => {
            let mut cfg: BeamConfig = load(&c)?;
            if let Some(s) = c.seed {
                cfg.grid.scene.seed = s;
            }
            let r = exp::run_energy_map(&cfg)?;
            let o = Out { c: &c };
            o.table(&r.table, "energy_map")?;
            o.heatmap(&r.grid, &r.map.power_db, "energy_map")?;
        }
        Command::SpatialSir(c) => {
            let mut cfg: BeamConfig = load(&c)?;
            if let Some(s) = c.seed {
                cfg.grid.scene.seed = s;
            }
            let (r, t) = exp::run_spatial_sir(&cfg)?;
            Out { c: &c }.table(&t, "spatial_sir")?;
            println!("spatial SIR at point {}: {} dB", r.target_index, r.value_db);
        }
        Command::ApertureSweep(c) => {
            let mut cfg: ApertureSweepConfig = load(&c)?;
            if let Some(s) = c.seed {
                cfg.random_seed = s;
            }
            let r = exp::run_aperture_sweep(&cfg)?;
            let o = Out { c: &c };
            o.table(&r.table, "aperture_sweep")?;
            let pick = |f: fn(&exp::ApertureRow) -> f64| r.rows.iter().map(|row| (row.aperture, f(row))).collect();
            o.chart(
                &[pick(|x| x.square_rate), pick(|x| x.random_p5), pick(|x| x.random_p95)],
                "aperture_sweep",
            )?;
        }
        Command::GeometrySweep(c) => {
            let mut cfg: GeometrySweepConfig = load(&c)?;
            if let Some(s) = c.seed {
                cfg.random_seed = s;
            }
            let r = exp::run_geometry_sweep(&cfg)?;
            let o = Out { c: &c };
            o.table(&r.table, "geometry_sweep")?;
            let series: Vec<Vec<(f64, f64)>> = cfg
                .geometries
                .iter()
                .map(|&g| {
                    cfg.counts
                        .iter()
                        .map(|&m| (m as f64, r.rate(g, m).unwrap_or(f64::NAN)))
                        .collect()
                })
                .collect();
            o.chart(&series, "geometry_sweep")?;
        }
        Command::PrecoderCompare(c) => {
            let mut cfg: PrecoderCompareConfig = load(&c)?;
            if let Some(s) = c.seed {
                cfg.seeds = seeds_from(s, cfg.seeds.len());
            }
            let r = exp::run_precoder_compare(&cfg)?;
            let o = Out { c: &c };
            o.table(&r.table, "precoder_compare")?;
            let series: Vec<Vec<(f64, f64)>> = cfg
                .schemes
                .iter()
                .map(|&s| cfg.counts.iter().map(|&m| (m as f64, r.mean_rate(s, m))).collect())
                .collect();
            o.chart(&series, "precoder_compare")?;
            for &s in &cfg.schemes {
                for &m in &cfg.counts {
                    println!("{:>3} M={m:<3} mean sum rate {:.4}", Scheme::name(s), r.mean_rate(s, m));
                }
            }
        }
        Command::OcclusionTransition(c) => {
            let mut cfg: TransitionConfig = load(&c)?;
            if let Some(s) = c.seed {
                cfg.seeds = seeds_from(s, cfg.seeds.len());
            }
            let t = exp::run_occlusion_transition(&cfg)?;
            let o = Out { c: &c };
            o.table(&t.table, "occlusion_transition")?;
            for (k, map) in t.maps.iter().enumerate() {
                let Some(map) = map else { continue };
                let stem = format!("occlusion_map_stage{k}");
                if o.csv() {
                    let mut mt = ReportTable::new(t.table.provenance.clone(), &["point_index", "power", "power_db"]);
                    for (m, (p, db)) in map.power.iter().zip(&map.power_db).enumerate() {
                        mt.push(vec![m.into(), (*p).into(), (*db).into()])?;
                    }
                    o.table(&mt, &stem)?;
                }
                if o.png() {
                    let p = o.dir()?.join(format!("{stem}.png"));
                    render::heatmap(&t.path, &map.power_db, &p)?;
                    println!("wrote {}", p.display());
                }
            }
        }
        Command::SounderSim(c) => {
            let mut cfg: SounderSimConfig = load(&c)?;
            if let Some(s) = c.seed {
                cfg.seed = s;
            }
            let r = exp::run_sounder_sim(&cfg)?;
            Out { c: &c }.table(&r.table, "sounder_sim")?;
            println!(
                "averaging gain {:.3} dB (expected {:.3} dB), noise estimate ratio {:.4}",
                r.gain_db, r.expected_gain_db, r.noise_estimate_ratio
            );
        }
        Command::PhaseStats {
            common: c,
            grids,
            subcarrier,
        } => {
            let r = match grids.len() {
                0 => {
                    let mut cfg: PhaseStatsConfig = load(&c)?;
                    if let Some(s) = c.seed {
                        cfg.grid.scene.seed = s;
                    }
                    exp::run_phase_stats(&cfg)?
                }
                2 => {
                    let a = import_grid(&grids[0])?;
                    let b = import_grid(&grids[1])?;
                    let sc = subcarrier.unwrap_or(a.subcarriers()[0]);
                    let names: Vec<String> = grids.iter().map(|g| g.display().to_string()).collect();
                    exp::phase_stats_between(&a, &b, sc, config_hash(&names))?
                }
                n => return Err(Error::Config(format!("phase-stats takes 0 or 2 --grid prefixes, got {n}"))),
            };
            Out { c: &c }.table(&r.table, "phase_stats")?;
            println!(
                "resultant length {:.6}, offset p99 {:.6e} m",
                r.stats.resultant_length, r.stats.offset_p99
            );
        }
        Command::Export { common: c, prefix } => {
            let mut cfg: GridConfig = load(&c)?;
            if let Some(s) = c.seed {
                cfg.scene.seed = s;
            }
            let grid = exp::simulate_grid(&cfg)?;
            std::fs::create_dir_all(&c.out)?;
            let (m, d) = export_grid(&grid, &c.out.join(prefix))?;
            println!("wrote {} and {}", m.display(), d.display());
        }
        Command::Import { common: c, grid } => {
            let g = import_grid(&grid)?;
            let prov = Provenance::new("import", config_hash(&grid.display().to_string()), vec![]);
            let mut t = ReportTable::new(prov, &["quantity", "value"]);
            let power = g.coefficients().iter().map(|c| c.norm_sqr()).sum::<f64>() / g.coefficients().len() as f64;
            t.push(vec!["points".into(), g.num_points().into()])?;
            t.push(vec!["users".into(), g.num_users().into()])?;
            t.push(vec!["subcarriers".into(), g.subcarriers().len().into()])?;
            t.push(vec!["mean_power".into(), power.into()])?;
            let o = Out { c: &c };
            o.table(&t, "import_summary")?;
            o.heatmap(&g, &phase_field(&g, 0, g.subcarriers()[0])?, "import_phase_user0")?;
            println!(
                "{} points, {} users, {} subcarriers",
                g.num_points(),
                g.num_users(),
                g.subcarriers().len()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.class().exit_code() as u8)
        }
    }
}

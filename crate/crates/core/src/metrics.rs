//! Evaluation quantities: spatial SIR over an area, per-user SINR, sum rate,
//! spatial energy maps and the LoS ring spacing of the phase field.
//!
//! All dB values are 10·log10 of a power ratio.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{wavelength, Position, Tone};
use crate::precoding::{effective_gains, PrecodingMatrix};
use crate::scene::{ChannelGrid, ChannelMatrix};
use crate::units::{to_db, ExtReal};

/// With zero noise, interference at or below this fraction of the signal
/// power is treated as exactly nulled (numerical residue of zero-forcing).
pub const INTERFERENCE_FLOOR: f64 = 1e-20;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpatialSirReport {
    pub target: Position,
    pub target_index: usize,
    pub value: ExtReal,
    pub value_db: ExtReal,
    /// Total grid points.
    pub total_points: usize,
    /// Points within the exclusion radius, the target included.
    pub excluded_points: usize,
}

/// Row h_m restricted to the array users, for one grid point.
fn array_row(grid: &ChannelGrid, m: usize, array: &[usize], slot: usize) -> Vec<Complex64> {
    array.iter().map(|&n| grid.get(m, n, slot)).collect()
}

fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x * y.conj()).sum()
}

fn check_array(grid: &ChannelGrid, array: &[usize]) -> Result<()> {
    if array.is_empty() {
        return Err(Error::Config("array selection is empty".into()));
    }
    for (i, &n) in array.iter().enumerate() {
        if n >= grid.num_users() {
            return Err(Error::IndexOutOfRange {
                what: "array element",
                index: n,
                len: grid.num_users(),
            });
        }
        if array[..i].contains(&n) {
            return Err(Error::DuplicateIndex { what: "array element", index: n });
        }
    }
    Ok(())
}

/// Target-point power over the mean power leaked to every grid point farther
/// than `exclusion_radius` from the target, when beamforming with the target's
/// own channel.
///
/// The grid's user dimension holds the transmit array; `array` selects which
/// of those transmitters form the array.
pub fn spatial_sir(
    grid: &ChannelGrid,
    array: &[usize],
    target: usize,
    subcarrier: usize,
    exclusion_radius: f64,
) -> Result<SpatialSirReport> {
    check_array(grid, array)?;
    if target >= grid.num_points() {
        return Err(Error::IndexOutOfRange {
            what: "target point",
            index: target,
            len: grid.num_points(),
        });
    }
    if !(exclusion_radius > 0.0) {
        return Err(Error::NonPositive {
            what: "exclusion radius",
            value: exclusion_radius,
        });
    }
    let slot = grid.tone_slot(subcarrier)?;
    let pts = grid.path().points();
    let tp = pts[target];
    let ht = array_row(grid, target, array, slot);
    let signal: f64 = ht.iter().map(|c| c.norm_sqr()).sum::<f64>().powi(2);
    if signal == 0.0 {
        return Err(Error::ZeroChannel(format!("target point {target} has a zero channel")));
    }

    let leaks: Vec<f64> = (0..grid.num_points())
        .into_par_iter()
        .filter(|&m| pts[m].distance(&tp) > exclusion_radius)
        .map(|m| inner(&array_row(grid, m, array, slot), &ht).norm_sqr())
        .collect();
    if leaks.is_empty() {
        return Err(Error::NoInterferencePoints(exclusion_radius));
    }
    let mean = leaks.iter().sum::<f64>() / leaks.len() as f64;
    let value = if mean == 0.0 {
        ExtReal::Infinite
    } else {
        ExtReal::Finite(signal / mean)
    };
    Ok(SpatialSirReport {
        target: tp,
        target_index: target,
        value,
        value_db: value.to_db(),
        total_points: grid.num_points(),
        excluded_points: grid.num_points() - leaks.len(),
    })
}

/// Default exclusion radius: half the carrier wavelength.
pub fn default_exclusion_radius(grid: &ChannelGrid) -> f64 {
    grid.plan().carrier_wavelength() / 2.0
}

/// |h_n·p_n|² / (Σ_{k≠n}|h_n·p_k|² + noise).
pub fn user_sinr(h: &ChannelMatrix, p: &PrecodingMatrix, n: usize, noise_power: f64) -> Result<ExtReal> {
    let g = effective_gains(h, p)?;
    sinr_from_gains(&g, n, noise_power)
}

fn sinr_from_gains(g: &nalgebra::DMatrix<Complex64>, n: usize, noise_power: f64) -> Result<ExtReal> {
    if n >= g.nrows() {
        return Err(Error::IndexOutOfRange {
            what: "user",
            index: n,
            len: g.nrows(),
        });
    }
    if !(noise_power >= 0.0) || !noise_power.is_finite() {
        return Err(Error::Config(format!("noise power must be finite and ≥ 0, got {noise_power}")));
    }
    let signal = g[(n, n)].norm_sqr();
    let interference: f64 = (0..g.ncols())
        .filter(|&k| k != n)
        .map(|k| g[(n, k)].norm_sqr())
        .sum();
    if noise_power == 0.0 && interference <= INTERFERENCE_FLOOR * signal {
        if signal == 0.0 {
            return Err(Error::DegenerateSinr(n));
        }
        return Ok(ExtReal::Infinite);
    }
    Ok(ExtReal::Finite(signal / (interference + noise_power)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateReport {
    pub sinr: Vec<ExtReal>,
    /// log2(1 + SINR) per user, bits per channel use.
    pub rates: Vec<f64>,
    pub sum_rate: f64,
    pub noise_power: f64,
}

/// Σₙ log2(1 + SINRₙ). Refuses infinite SINRs, which only occur with zero
/// noise.
pub fn sum_rate(h: &ChannelMatrix, p: &PrecodingMatrix, noise_power: f64) -> Result<RateReport> {
    let g = effective_gains(h, p)?;
    let sinr: Vec<ExtReal> = (0..g.nrows())
        .map(|n| sinr_from_gains(&g, n, noise_power))
        .collect::<Result<_>>()?;
    let infinite: Vec<usize> = sinr
        .iter()
        .enumerate()
        .filter(|(_, s)| s.is_infinite())
        .map(|(n, _)| n)
        .collect();
    if !infinite.is_empty() {
        return Err(Error::InfiniteSinr { users: infinite });
    }
    let rates: Vec<f64> = sinr.iter().map(|s| (1.0 + s.to_f64()).log2()).collect();
    Ok(RateReport {
        sum_rate: rates.iter().sum(),
        sinr,
        rates,
        noise_power,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EnergyReference {
    /// Normalize to this map's own maximum.
    SelfMax,
    /// Normalize to an externally supplied power (e.g. the LoS maximum).
    External(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyMap {
    pub power: Vec<f64>,
    pub power_db: Vec<f64>,
    pub reference_power: f64,
}

impl EnergyMap {
    pub fn argmax(&self) -> usize {
        self.power
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
            .0
    }

    pub fn max(&self) -> f64 {
        self.power.iter().copied().fold(0.0, f64::max)
    }
}

/// Received power |h_m·p|² at every grid point for one beam `p`, with one
/// entry of `p` per selected array element.
pub fn energy_map(
    grid: &ChannelGrid,
    array: &[usize],
    p: &[Complex64],
    subcarrier: usize,
    reference: EnergyReference,
) -> Result<EnergyMap> {
    check_array(grid, array)?;
    if p.len() != array.len() {
        return Err(Error::DimensionMismatch {
            what: "beam length vs array size",
            expected: array.len(),
            found: p.len(),
        });
    }
    let slot = grid.tone_slot(subcarrier)?;
    let power: Vec<f64> = (0..grid.num_points())
        .into_par_iter()
        .map(|m| {
            array
                .iter()
                .zip(p)
                .map(|(&n, pn)| grid.get(m, n, slot) * pn)
                .sum::<Complex64>()
                .norm_sqr()
        })
        .collect();
    let reference_power = match reference {
        EnergyReference::SelfMax => power.iter().copied().fold(0.0, f64::max),
        EnergyReference::External(r) if r > 0.0 => r,
        EnergyReference::External(r) => {
            return Err(Error::NonPositive {
                what: "reference power",
                value: r,
            })
        }
    };
    let power_db = power.iter().map(|&v| to_db(v / reference_power)).collect();
    Ok(EnergyMap {
        power,
        power_db,
        reference_power,
    })
}

/// MR beam towards grid point `target`: conj(h_t)/√N over the array.
pub fn mr_beam(grid: &ChannelGrid, array: &[usize], target: usize, subcarrier: usize) -> Result<Vec<Complex64>> {
    check_array(grid, array)?;
    let row = grid.row(target, subcarrier)?;
    let scale = (array.len() as f64).sqrt();
    Ok(array.iter().map(|&n| row[n].conj() / scale).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RingReport {
    /// Radial distance between consecutive phase-zero crossings, meters.
    pub spacings: Vec<f64>,
    pub median_spacing: f64,
    /// Wavelength of the evaluated subcarrier.
    pub wavelength: f64,
}

/// Radial spacing of the phase rings of one user's field.
///
/// Along each scan line the phase is followed point by point; upward zero
/// crossings are located by linear interpolation of the transmitter distance
/// r, and consecutive crossings on the same side of the line's closest
/// approach to the transmitter give one spacing each.
pub fn ring_spacing(grid: &ChannelGrid, user: usize, subcarrier: usize) -> Result<RingReport> {
    let field = grid.field(user, subcarrier)?;
    let tx = grid.users()[user];
    let pts = grid.path().points();
    let mut spacings = Vec::new();
    for line in grid.path().lines() {
        let idx: Vec<usize> = line.clone().collect();
        let r: Vec<f64> = idx.iter().map(|&m| pts[m].distance(&tx)).collect();
        let ph: Vec<f64> = idx.iter().map(|&m| field[m].arg()).collect();
        // Crossings tagged with the monotonic run they belong to.
        let mut crossings: Vec<(bool, f64)> = Vec::new();
        for i in 1..idx.len() {
            let (a, b) = (ph[i - 1], ph[i]);
            let outward = r[i] > r[i - 1];
            // Phase grows with r: an upward crossing moving outward, downward
            // moving inward. Wrap jumps (|b − a| > π) are not crossings.
            let crosses = if outward { a < 0.0 && b >= 0.0 } else { a >= 0.0 && b < 0.0 };
            if crosses && (b - a).abs() < std::f64::consts::PI {
                let t = a / (a - b);
                crossings.push((outward, r[i - 1] + t * (r[i] - r[i - 1])));
            }
        }
        for w in crossings.windows(2) {
            if w[0].0 == w[1].0 {
                spacings.push((w[1].1 - w[0].1).abs());
            }
        }
    }
    if spacings.is_empty() {
        return Err(Error::Infeasible("no pair of phase rings found on the grid".into()));
    }
    let mut sorted = spacings.clone();
    sorted.sort_by(f64::total_cmp);
    let k = sorted.len();
    let median_spacing = if k % 2 == 1 {
        sorted[k / 2]
    } else {
        0.5 * (sorted[k / 2 - 1] + sorted[k / 2])
    };
    Ok(RingReport {
        spacings,
        median_spacing,
        wavelength: wavelength(grid.plan(), Tone::Subcarrier(subcarrier))?,
    })
}

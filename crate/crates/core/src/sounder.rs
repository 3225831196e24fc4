//! Frequency-domain OFDM channel sounding with known BPSK pilots, plus the
//! phase-reproducibility statistics used to compare repeated area scans.

use std::f64::consts::TAU;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wavelength, FrequencyPlan, Tone};
use crate::scene::ChannelGrid;
use crate::units::{percentile_sorted, to_db, wrap_phase, ExtReal};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SounderConfig {
    pub plan: FrequencyPlan,
    pub symbols_per_packet: usize,
    /// Cyclic-prefix fraction. Recorded only; inter-symbol effects are not
    /// simulated.
    pub cp_fraction: f64,
    pub snr_floor_db: f64,
}

impl Default for SounderConfig {
    fn default() -> Self {
        SounderConfig {
            plan: FrequencyPlan::default(),
            symbols_per_packet: 20,
            cp_fraction: 0.25,
            snr_floor_db: 30.0,
        }
    }
}

impl SounderConfig {
    pub fn validate(&self) -> Result<()> {
        self.plan.validate()?;
        if self.symbols_per_packet == 0 {
            return Err(Error::NonPositive {
                what: "symbols per packet",
                value: 0.0,
            });
        }
        Ok(())
    }

    /// Expected estimation gain from averaging, 10·log10(K).
    pub fn averaging_gain_db(&self) -> f64 {
        to_db(self.symbols_per_packet as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelEstimate {
    /// One entry per subcarrier; unused tones hold averaged noise.
    pub estimate: Vec<Complex64>,
    pub noise_power_estimate: f64,
    pub snr_db: ExtReal,
    pub snr_ok: bool,
}

/// Pilot on every used subcarrier. Any known unit-modulus sequence gives the
/// same LS estimate statistics.
const PILOT: Complex64 = Complex64::new(1.0, 0.0);

fn complex_noise(rng: &mut ChaCha8Rng, sigma: f64) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * sigma
}

/// Sound `true_channel` (one value per subcarrier) with circular complex
/// Gaussian noise of power `noise_power` per observation.
pub fn simulate_sounding(
    true_channel: &[Complex64],
    config: &SounderConfig,
    noise_power: f64,
    seed: u64,
) -> Result<ChannelEstimate> {
    config.validate()?;
    let n_sc = config.plan.num_subcarriers;
    if true_channel.len() != n_sc {
        return Err(Error::DimensionMismatch {
            what: "true channel length",
            expected: n_sc,
            found: true_channel.len(),
        });
    }
    if !(noise_power >= 0.0) || !noise_power.is_finite() {
        return Err(Error::Config(format!("noise power must be finite and ≥ 0, got {noise_power}")));
    }
    let used = config.plan.used_subcarriers();
    let k = config.symbols_per_packet;
    let sigma = (noise_power / 2.0).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut estimate = vec![Complex64::new(0.0, 0.0); n_sc];
    let mut unused_power = 0.0;
    let mut unused_count = 0usize;
    for (sc, est) in estimate.iter_mut().enumerate() {
        let active = used.contains(&sc);
        let mut acc = Complex64::new(0.0, 0.0);
        for _ in 0..k {
            let w = complex_noise(&mut rng, sigma);
            if active {
                let y = true_channel[sc] * PILOT + w;
                acc += y / PILOT;
            } else {
                unused_power += w.norm_sqr();
                unused_count += 1;
                acc += w;
            }
        }
        *est = acc / k as f64;
    }

    let noise_power_estimate = if unused_count > 0 {
        unused_power / unused_count as f64
    } else {
        0.0
    };
    let signal = used.clone().map(|sc| estimate[sc].norm_sqr()).sum::<f64>() / used.len() as f64;
    let snr_db = if noise_power_estimate == 0.0 {
        ExtReal::Infinite
    } else {
        ExtReal::Finite(to_db(signal / noise_power_estimate))
    };
    let snr_ok = match snr_db {
        ExtReal::Infinite => true,
        ExtReal::Finite(v) => v > config.snr_floor_db,
    };
    Ok(ChannelEstimate {
        estimate,
        noise_power_estimate,
        snr_db,
        snr_ok,
    })
}

/// Position shift equivalent to a phase change: λ·Δφ/2π.
pub fn phase_to_offset(delta_phi: f64, lambda: f64) -> f64 {
    lambda * delta_phi / TAU
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseDiffStats {
    /// Wrapped differences arg(b) − arg(a), point-major then user.
    pub diffs: Vec<f64>,
    pub circular_mean: f64,
    pub resultant_length: f64,
    /// 99th percentile of |offset| after removing the circular mean, meters.
    pub offset_p99: f64,
}

/// Phase agreement between two scans of the same area on one subcarrier.
pub fn grid_phase_stats(a: &ChannelGrid, b: &ChannelGrid, subcarrier: usize) -> Result<PhaseDiffStats> {
    if a.num_points() != b.num_points() {
        return Err(Error::DimensionMismatch {
            what: "grid points",
            expected: a.num_points(),
            found: b.num_points(),
        });
    }
    if a.num_users() != b.num_users() {
        return Err(Error::DimensionMismatch {
            what: "grid users",
            expected: a.num_users(),
            found: b.num_users(),
        });
    }
    if a.path().points() != b.path().points() {
        return Err(Error::Config("grids were sampled on different paths".into()));
    }
    let (sa, sb) = (a.tone_slot(subcarrier)?, b.tone_slot(subcarrier)?);
    let lambda = wavelength(a.plan(), Tone::Subcarrier(subcarrier))?;

    let mut diffs = Vec::with_capacity(a.num_points() * a.num_users());
    for m in 0..a.num_points() {
        for n in 0..a.num_users() {
            diffs.push(wrap_phase(b.get(m, n, sb).arg() - a.get(m, n, sa).arg()));
        }
    }
    let phasor: Complex64 = diffs.iter().map(|&d| Complex64::from_polar(1.0, d)).sum();
    let circular_mean = phasor.arg();
    let resultant_length = (phasor.norm() / diffs.len() as f64).min(1.0);
    let mut offsets: Vec<f64> = diffs
        .iter()
        .map(|&d| phase_to_offset(wrap_phase(d - circular_mean), lambda).abs())
        .collect();
    offsets.sort_by(f64::total_cmp);
    Ok(PhaseDiffStats {
        offset_p99: percentile_sorted(&offsets, 0.99),
        diffs,
        circular_mean,
        resultant_length,
    })
}

/// Multiply point m of every user by e^{jφ_m}, φ ramping linearly from
/// `start` to `end` radians along the path (oscillator drift stand-in).
pub fn apply_phase_drift(grid: &ChannelGrid, start: f64, end: f64) -> Result<ChannelGrid> {
    let m_total = grid.num_points();
    let per_point = grid.num_users() * grid.subcarriers().len();
    let coefficients = grid
        .coefficients()
        .chunks(per_point)
        .enumerate()
        .flat_map(|(m, chunk)| {
            let t = if m_total > 1 {
                m as f64 / (m_total - 1) as f64
            } else {
                0.0
            };
            let rot = Complex64::from_polar(1.0, start + (end - start) * t);
            chunk.iter().map(move |c| c * rot)
        })
        .collect();
    ChannelGrid::from_parts(
        grid.path().clone(),
        *grid.plan(),
        grid.users().to_vec(),
        grid.subcarriers().to_vec(),
        coefficients,
    )
}

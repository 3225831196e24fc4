//! Maximum-ratio, phase-only and zero-forcing precoders.
//!
//! Orientation is fixed throughout: H is users × antennas, P is
//! antennas × users, so the received vector is y = H·P·s.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::ChannelMatrix;

/// Largest Gram-matrix condition number accepted by zero-forcing.
pub const MAX_GRAM_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Mr,
    Po,
    Zf,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Mr, Scheme::Po, Scheme::Zf];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Mr => "mr",
            Scheme::Po => "po",
            Scheme::Zf => "zf",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown precoder '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrecodingMatrix {
    p: DMatrix<Complex64>,
    scheme: Scheme,
}

impl PrecodingMatrix {
    /// Wrap an externally computed precoder (antennas × users).
    pub fn new(p: DMatrix<Complex64>, scheme: Scheme) -> Result<Self> {
        if p.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::NonFiniteInput { what: "precoder entry" });
        }
        Ok(PrecodingMatrix { p, scheme })
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.p
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn antennas(&self) -> usize {
        self.p.nrows()
    }

    pub fn users(&self) -> usize {
        self.p.ncols()
    }

    /// Beam vector of user `n`.
    pub fn column(&self, n: usize) -> Vec<Complex64> {
        self.p.column(n).iter().copied().collect()
    }
}

fn check_rows(h: &ChannelMatrix) -> Result<()> {
    for (n, row) in h.matrix().row_iter().enumerate() {
        if row.iter().all(|c| *c == Complex64::new(0.0, 0.0)) {
            return Err(Error::ZeroChannel(format!("user {n} has an all-zero channel row")));
        }
    }
    Ok(())
}

/// P = Hᴴ/√M.
pub fn mr_precoder(h: &ChannelMatrix) -> Result<PrecodingMatrix> {
    check_rows(h)?;
    let m = h.antennas() as f64;
    Ok(PrecodingMatrix {
        p: h.matrix().adjoint() / Complex64::new(m.sqrt(), 0.0),
        scheme: Scheme::Mr,
    })
}

/// Unit-modulus entries carrying the phases of the MR precoder.
pub fn po_precoder(h: &ChannelMatrix) -> Result<PrecodingMatrix> {
    let mr = mr_precoder(h)?;
    let p = &mr.p;
    for n in 0..p.ncols() {
        for m in 0..p.nrows() {
            if p[(m, n)] == Complex64::new(0.0, 0.0) {
                return Err(Error::ZeroEntry { antenna: m, user: n });
            }
        }
    }
    Ok(PrecodingMatrix {
        p: p.map(|c| Complex64::from_polar(1.0, c.arg())),
        scheme: Scheme::Po,
    })
}

/// Condition number of the Gram matrix (HHᴴ or HᴴH), i.e. cond(H)².
pub fn gram_condition(h: &ChannelMatrix) -> f64 {
    let sv = h.matrix().clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        (max / min).powi(2)
    }
}

/// Zero-forcing via the pseudo-inverse, computed from a QR factorization.
///
/// M > N: P = √(M−N)·Hᴴ(HHᴴ)⁻¹, so H·P = √(M−N)·I.
/// M < N: P = √(N−M)·(HᴴH)⁻¹Hᴴ, the least-squares analogue (cannot null
/// interference).
pub fn zf_precoder(h: &ChannelMatrix) -> Result<PrecodingMatrix> {
    check_rows(h)?;
    let (n, m) = (h.users(), h.antennas());
    if n == m {
        return Err(Error::SquareZeroForcing(n));
    }
    let cond = gram_condition(h);
    if !(cond <= MAX_GRAM_CONDITION) {
        return Err(Error::IllConditioned(cond));
    }
    let hm = h.matrix();
    let p = if m > n {
        // Hᴴ = QR  ⇒  Hᴴ(HHᴴ)⁻¹ = Q·R⁻ᴴ.
        let qr = hm.adjoint().qr();
        let (q, r) = (qr.q(), qr.r());
        let x = r
            .solve_upper_triangular(&q.adjoint())
            .ok_or(Error::IllConditioned(f64::INFINITY))?;
        x.adjoint() * Complex64::new(((m - n) as f64).sqrt(), 0.0)
    } else {
        // H = QR  ⇒  (HᴴH)⁻¹Hᴴ = R⁻¹Qᴴ.
        let qr = hm.clone().qr();
        let (q, r) = (qr.q(), qr.r());
        let x = r
            .solve_upper_triangular(&q.adjoint())
            .ok_or(Error::IllConditioned(f64::INFINITY))?;
        x * Complex64::new(((n - m) as f64).sqrt(), 0.0)
    };
    Ok(PrecodingMatrix { p, scheme: Scheme::Zf })
}

pub fn precoder(scheme: Scheme, h: &ChannelMatrix) -> Result<PrecodingMatrix> {
    match scheme {
        Scheme::Mr => mr_precoder(h),
        Scheme::Po => po_precoder(h),
        Scheme::Zf => zf_precoder(h),
    }
}

/// y = H·P·s.
pub fn apply(h: &ChannelMatrix, p: &PrecodingMatrix, s: &[Complex64]) -> Result<Vec<Complex64>> {
    if p.antennas() != h.antennas() {
        return Err(Error::DimensionMismatch {
            what: "precoder rows vs antennas",
            expected: h.antennas(),
            found: p.antennas(),
        });
    }
    if s.len() != p.users() {
        return Err(Error::DimensionMismatch {
            what: "symbol vector length",
            expected: p.users(),
            found: s.len(),
        });
    }
    let y = h.matrix() * (p.matrix() * DVector::from_column_slice(s));
    Ok(y.iter().copied().collect())
}

/// H·P, the effective users × users gain matrix.
pub fn effective_gains(h: &ChannelMatrix, p: &PrecodingMatrix) -> Result<DMatrix<Complex64>> {
    if p.antennas() != h.antennas() || p.users() != h.users() {
        return Err(Error::DimensionMismatch {
            what: "precoder shape",
            expected: h.antennas() * h.users(),
            found: p.antennas() * p.users(),
        });
    }
    Ok(h.matrix() * p.matrix())
}

/// Per-antenna transmit power Σₙ|p_{m,n}|², normalized to sum 1.
pub fn antenna_energy(p: &PrecodingMatrix) -> Vec<f64> {
    let e: Vec<f64> = p
        .matrix()
        .row_iter()
        .map(|r| r.iter().map(|c| c.norm_sqr()).sum())
        .collect();
    let total: f64 = e.iter().sum();
    if total > 0.0 {
        e.iter().map(|v| v / total).collect()
    } else {
        e
    }
}

//! Channel matrix generators and the noisy observation model
//! `y = H s + n`.
//!
//! All generators are pure functions of their parameters and a seed, so
//! independent trials can draw channels concurrently without sharing
//! state.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Channel model selector, also used as the CLI channel spec
/// (`rayleigh` or `corr:<rho_r>:<sigma_db>`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChannelModel {
    /// I.i.d. Rayleigh fading, unit per-entry variance.
    IidRayleigh,
    /// Kronecker receive correlation plus log-normal per-UE path loss.
    Correlated { rx_corr: f64, pathloss_sigma_db: f64 },
}

impl FromStr for ChannelModel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("rayleigh") {
            return Ok(ChannelModel::IidRayleigh);
        }
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() == 3 && parts[0].eq_ignore_ascii_case("corr") {
            let rho: f64 = parts[1]
                .parse()
                .map_err(|_| format!("bad correlation `{}`", parts[1]))?;
            let sigma: f64 = parts[2]
                .parse()
                .map_err(|_| format!("bad path-loss sigma `{}`", parts[2]))?;
            return Ok(ChannelModel::Correlated {
                rx_corr: rho,
                pathloss_sigma_db: sigma,
            });
        }
        Err(format!(
            "unknown channel `{s}` (expected `rayleigh` or `corr:<rho_r>:<sigma_db>`)"
        ))
    }
}

impl fmt::Display for ChannelModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChannelModel::IidRayleigh => write!(f, "rayleigh"),
            ChannelModel::Correlated {
                rx_corr,
                pathloss_sigma_db,
            } => write!(f, "corr:{rx_corr}:{pathloss_sigma_db}"),
        }
    }
}

impl Serialize for ChannelModel {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ChannelModel {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One draw of the MIMO channel matrix.
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    /// B x U channel matrix.
    pub h: DMatrix<Complex64>,
    pub model: ChannelModel,
    pub seed: u64,
    /// Per-UE large-scale gains (all ones for i.i.d. Rayleigh).
    pub gains: Vec<f64>,
}

impl ChannelRealization {
    pub fn b_antennas(&self) -> usize {
        self.h.nrows()
    }

    pub fn n_users(&self) -> usize {
        self.h.ncols()
    }
}

/// Draws one standard circularly-symmetric complex Gaussian sample
/// (unit variance per complex entry).
fn standard_cscg<R: Rng>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * std::f64::consts::FRAC_1_SQRT_2, im * std::f64::consts::FRAC_1_SQRT_2)
}

fn cscg_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<Complex64> {
    DMatrix::from_fn(rows, cols, |_, _| standard_cscg(rng))
}

/// Generates an i.i.d. Rayleigh channel with unit per-entry variance.
pub fn iid_rayleigh(b_antennas: usize, n_users: usize, seed: u64) -> ChannelRealization {
    assert!(b_antennas >= 1 && n_users >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ChannelRealization {
        h: cscg_matrix(b_antennas, n_users, &mut rng),
        model: ChannelModel::IidRayleigh,
        seed,
        gains: vec![1.0; n_users],
    }
}

/// Generates a receive-correlated channel with per-UE path loss:
/// `H = R^{1/2} H_w diag(γ)^{1/2}` with exponential correlation
/// `R_ij = ρ_r^{|i-j|}` and log-normal gains normalized to unit mean.
pub fn correlated(
    b_antennas: usize,
    n_users: usize,
    rx_corr: f64,
    pathloss_sigma_db: f64,
    seed: u64,
) -> Result<ChannelRealization> {
    if !(0.0..1.0).contains(&rx_corr) {
        return Err(Error::InvalidParameter(format!(
            "rx_corr must be in [0,1), got {rx_corr}"
        )));
    }
    if pathloss_sigma_db < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "pathloss_sigma_db must be >= 0, got {pathloss_sigma_db}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h_w = cscg_matrix(b_antennas, n_users, &mut rng);

    // Log-normal shadowing with E[gamma] = 1.
    let sigma_ln = pathloss_sigma_db * std::f64::consts::LN_10 / 10.0;
    let gains: Vec<f64> = (0..n_users)
        .map(|_| {
            let x: f64 = rng.sample(StandardNormal);
            (sigma_ln * x - 0.5 * sigma_ln * sigma_ln).exp()
        })
        .collect();

    let h = if rx_corr == 0.0 {
        scale_columns(h_w, &gains)
    } else {
        let r = DMatrix::from_fn(b_antennas, b_antennas, |i, j| {
            Complex64::new(rx_corr.powi((i as i32 - j as i32).abs()), 0.0)
        });
        let chol = r
            .cholesky()
            .expect("exponential correlation matrix is positive definite for rho in [0,1)");
        scale_columns(chol.l() * h_w, &gains)
    };

    Ok(ChannelRealization {
        h,
        model: ChannelModel::Correlated {
            rx_corr,
            pathloss_sigma_db,
        },
        seed,
        gains,
    })
}

fn scale_columns(mut h: DMatrix<Complex64>, gains: &[f64]) -> DMatrix<Complex64> {
    for (u, &g) in gains.iter().enumerate() {
        let s = g.sqrt();
        for v in h.column_mut(u).iter_mut() {
            *v *= s;
        }
    }
    h
}

/// Draws one channel according to `model`.
pub fn generate(
    model: ChannelModel,
    b_antennas: usize,
    n_users: usize,
    seed: u64,
) -> Result<ChannelRealization> {
    match model {
        ChannelModel::IidRayleigh => Ok(iid_rayleigh(b_antennas, n_users, seed)),
        ChannelModel::Correlated {
            rx_corr,
            pathloss_sigma_db,
        } => correlated(b_antennas, n_users, rx_corr, pathloss_sigma_db, seed),
    }
}

/// Transmits `s` over `h` with complex Gaussian noise of per-entry
/// variance `n0`: `y = H s + n`.
pub fn transmit(
    h: &DMatrix<Complex64>,
    s: &DVector<Complex64>,
    n0: f64,
    seed: u64,
) -> Result<DVector<Complex64>> {
    if h.ncols() != s.len() {
        return Err(Error::DimensionMismatch(format!(
            "H is {}x{} but s has length {}",
            h.nrows(),
            h.ncols(),
            s.len()
        )));
    }
    if n0 < 0.0 {
        return Err(Error::InvalidParameter(format!("n0 must be >= 0, got {n0}")));
    }
    let mut y = h * s;
    if n0 > 0.0 {
        let sigma = n0.sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in y.iter_mut() {
            *v += standard_cscg(&mut rng) * sigma;
        }
    }
    Ok(y)
}

/// Converts an average per-receive-antenna SNR in dB to the noise
/// variance under unit-variance channel entries and `Es`-energy symbols:
/// `N0 = U * Es / 10^(snr_db/10)`.
pub fn snr_to_n0(snr_db: f64, n_users: usize, es: f64) -> f64 {
    n_users as f64 * es / 10f64.powf(snr_db / 10.0)
}

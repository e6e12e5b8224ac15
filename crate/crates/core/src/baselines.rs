//! Reference detectors: the linear MMSE equalizer with max-log
//! soft outputs (no prior input), and an exact AWGN symbol-error-rate
//! reference.

use crate::constellation::Constellation;
use crate::detector::{demap_user, DetectorOutput};
use crate::error::{Error, Result};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use num_complex::Complex64;
use statrs::function::erf::erfc;

/// Cap for the post-equalization SINR in the zero-noise limit, where the
/// unbiased-MMSE expression diverges.
const SINR_CAP: f64 = 1e12;

/// Factorized MMSE equalizer for one channel realization, reusable
/// across observations.
#[derive(Debug, Clone)]
pub struct MmseFilter {
    chol: Cholesky<Complex64, Dyn>,
    h: DMatrix<Complex64>,
    /// Unbiasing gains `mu_u` of the equalized channel.
    mu: Vec<f64>,
    /// Per-user unbiased post-equalization SINR.
    sinr: Vec<f64>,
}

impl MmseFilter {
    /// Factorizes `G + (N0/Es) I` and precomputes the per-user SINRs
    /// `1 / [(I + (Es/N0) G)^{-1}]_uu - 1`.
    pub fn new(h: &DMatrix<Complex64>, n0: f64, es: f64) -> Result<Self> {
        let u = h.ncols();
        let gram = h.ad_mul(h);
        let reg = n0 / es;
        let mut a = gram;
        for i in 0..u {
            a[(i, i)] += Complex64::new(reg, 0.0);
        }
        let chol = a.cholesky().ok_or(Error::SingularSystem)?;
        if n0 <= 0.0 {
            // unregularized factorization: a collapsed pivot means the
            // Gram matrix is numerically rank deficient
            let diag: Vec<f64> = (0..u).map(|i| chol.l_dirty()[(i, i)].re).collect();
            let max = diag.iter().cloned().fold(0.0, f64::max);
            if diag.iter().any(|&d| !(d > 1e-6 * max)) {
                return Err(Error::SingularSystem);
            }
        }
        let inv = chol.inverse();
        let (mu, sinr) = if n0 > 0.0 {
            let mut mu = Vec::with_capacity(u);
            let mut sinr = Vec::with_capacity(u);
            for i in 0..u {
                let d = (reg * inv[(i, i)].re).clamp(0.0, 1.0);
                mu.push(1.0 - d);
                sinr.push(if d > 0.0 {
                    ((1.0 - d) / d).min(SINR_CAP)
                } else {
                    SINR_CAP
                });
            }
            (mu, sinr)
        } else {
            // zero-forcing limit: unit gain, noiseless decoupled channel
            (vec![1.0; u], vec![SINR_CAP; u])
        };
        Ok(Self {
            chol,
            h: h.clone(),
            mu,
            sinr,
        })
    }

    /// Equalizes one observation and demaps to max-log LLRs with zero
    /// priors (soft output only).
    pub fn detect(
        &self,
        y: &DVector<Complex64>,
        constellation: &Constellation,
        llr_clamp: f64,
    ) -> Result<DetectorOutput> {
        if y.len() != self.h.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "H has {} rows but y has length {}",
                self.h.nrows(),
                y.len()
            )));
        }
        let u = self.h.ncols();
        let s_hat = self.chol.solve(&self.h.ad_mul(y));
        let zero_priors = vec![0.0; constellation.q_bits];
        let q = constellation.q_bits;
        let mut llrs = vec![0.0; u * q];
        for i in 0..u {
            let z = s_hat[i] / self.mu[i];
            demap_user(
                z,
                self.sinr[i],
                &zero_priors,
                constellation,
                llr_clamp,
                &mut llrs[i * q..(i + 1) * q],
            );
        }
        Ok(DetectorOutput {
            extrinsic_llrs: llrs,
            s_hat,
            per_user_sinr: self.sinr.clone(),
            rho_final: 0.0,
        })
    }

    pub fn per_user_sinr(&self) -> &[f64] {
        &self.sinr
    }
}

/// One-shot MMSE detection: `s_hat = (G + N0/Es I)^{-1} H^H y` followed
/// by unbiased max-log demapping.
pub fn mmse_detect(
    h: &DMatrix<Complex64>,
    y: &DVector<Complex64>,
    n0: f64,
    es: f64,
    constellation: &Constellation,
    llr_clamp: f64,
) -> Result<DetectorOutput> {
    MmseFilter::new(h, n0, es)?.detect(y, constellation, llr_clamp)
}

/// Gaussian tail probability `Q(x)`.
fn q_function(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Exact symbol error rate of the constellation on an AWGN channel at
/// linear SNR `Es/N0`, via the per-PAM closed form.
pub fn awgn_ser(constellation: &Constellation, snr: f64) -> Result<f64> {
    if snr < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "snr must be >= 0, got {snr}"
        )));
    }
    let m = constellation.pam_levels.len() as f64;
    // per-dimension error probability for M-PAM with unit total energy
    let p_pam = 2.0 * (1.0 - 1.0 / m) * q_function((3.0 * snr / (m * m - 1.0)).sqrt());
    Ok(1.0 - (1.0 - p_pam) * (1.0 - p_pam))
}

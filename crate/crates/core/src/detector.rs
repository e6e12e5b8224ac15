//! Gram-domain AMP data detection with soft-input soft-output LLR
//! processing.
//!
//! The detector decouples the MIMO system into parallel AWGN channels:
//! each iteration estimates per-user posterior means and variances
//! (either exactly or with the hardware's bit-domain max-log
//! approximation), cancels interference through the zero-diagonal Gram
//! matrix, applies an Onsager correction, and updates the
//! post-equalization SINR. Damping of the error-variance track
//! stabilizes the recursion on correlated and symmetric systems.
//!
//! All operations are pure functions of their inputs; detections on a
//! shared [`GramData`] may run concurrently.

use crate::arith::{nr_reciprocal, tanh_lut, FixedPoint};
use crate::constellation::{BitPriors, Constellation, Pam, DEFAULT_LLR_CLAMP};
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Largest PAM size we support (256-QAM splits into two 16-PAM sets).
const MAX_PAM: usize = 16;

/// Posterior mean/variance estimator selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Denoiser {
    /// Full posterior sum per PAM dimension.
    Exact,
    /// Bit-domain max-log LLRs with a factorized symbol pmf.
    MaxLog,
}

/// Detector parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LamaParams {
    /// Number of AMP iterations.
    pub t_max: usize,
    /// Damping factor in (0, 1]; 1 disables damping.
    pub theta: f64,
    pub denoiser: Denoiser,
    /// Symmetric clamp for output LLRs.
    pub llr_clamp: f64,
    /// Upper clamp for the post-equalization SINR parameter, which
    /// otherwise diverges as both the noise and the residual variance
    /// vanish.
    pub rho_max: f64,
    /// Use the hardware arithmetic models: bit-domain max-log denoising
    /// with the LUT tanh, and the Newton-Raphson reciprocal in the SINR
    /// update.
    pub hw_arith: bool,
    /// Optional fixed-point emulation of the iteration state.
    pub fixed_point: Option<FixedPoint>,
}

impl Default for LamaParams {
    fn default() -> Self {
        Self {
            t_max: 8,
            theta: 1.0,
            denoiser: Denoiser::Exact,
            llr_clamp: DEFAULT_LLR_CLAMP,
            rho_max: 1e8,
            hw_arith: false,
            fixed_point: None,
        }
    }
}

/// Preprocessed detector inputs: the zero-diagonal normalized Gram
/// matrix, the diagonal-normalized matched-filter output, and the
/// normalized Gram diagonal.
#[derive(Debug, Clone)]
pub struct GramData {
    /// `I - diag(G)^{-1} G` with the diagonal exactly zero.
    pub g_tilde: DMatrix<Complex64>,
    /// `diag(G)^{-1} H^H y`.
    pub ymf_tilde: DVector<Complex64>,
    /// Gram diagonal normalized by the antenna count, `g_u = G_uu / B`.
    /// With this scaling `1/rho` tracks the decoupled-channel error
    /// variance for any antenna/user ratio.
    pub g: DVector<f64>,
    pub n0: f64,
    pub b_antennas: usize,
}

impl GramData {
    /// Builds the Gram-domain quantities from a channel matrix alone,
    /// leaving the matched-filter part zero. Useful with
    /// [`GramData::update_observation`] when many observations share one
    /// channel realization.
    pub fn from_channel(h: &DMatrix<Complex64>, n0: f64) -> Result<Self> {
        let b = h.nrows();
        let u = h.ncols();
        let gram = h.ad_mul(h);
        let mut g = DVector::zeros(u);
        for i in 0..u {
            let d = gram[(i, i)].re;
            if !(d > 0.0) {
                return Err(Error::DegenerateChannel { user: i });
            }
            g[i] = d / b as f64;
        }
        let mut g_tilde = DMatrix::zeros(u, u);
        for i in 0..u {
            let inv_d = 1.0 / (g[i] * b as f64);
            for j in 0..u {
                if i != j {
                    g_tilde[(i, j)] = -gram[(i, j)] * inv_d;
                }
            }
        }
        Ok(Self {
            g_tilde,
            ymf_tilde: DVector::zeros(u),
            g,
            n0,
            b_antennas: b,
        })
    }

    /// Recomputes the matched-filter part for a new observation of the
    /// same channel.
    pub fn update_observation(
        &mut self,
        h: &DMatrix<Complex64>,
        y: &DVector<Complex64>,
    ) -> Result<()> {
        if h.nrows() != y.len() || h.ncols() != self.g.len() {
            return Err(Error::DimensionMismatch(format!(
                "H is {}x{}, y has length {}",
                h.nrows(),
                h.ncols(),
                y.len()
            )));
        }
        let hy = h.ad_mul(y);
        for u in 0..self.g.len() {
            self.ymf_tilde[u] = hy[u] / (self.g[u] * self.b_antennas as f64);
        }
        Ok(())
    }

    pub fn n_users(&self) -> usize {
        self.g.len()
    }
}

/// Computes all preprocessing quantities for one detection problem.
pub fn preprocess(
    h: &DMatrix<Complex64>,
    y: &DVector<Complex64>,
    n0: f64,
) -> Result<GramData> {
    let mut gram = GramData::from_channel(h, n0)?;
    gram.update_observation(h, y)?;
    Ok(gram)
}

/// Per-iteration detector state.
#[derive(Debug, Clone)]
pub struct LamaState {
    /// Iteration counter, starting at 1.
    pub t: usize,
    /// Decoupled-channel observations.
    pub z: DVector<Complex64>,
    /// Posterior mean estimates.
    pub s_hat: DVector<Complex64>,
    /// Posterior variances.
    pub tau: DVector<f64>,
    /// Weighted average error variance `(1/B) g^T tau`.
    pub tau_hat: f64,
    /// Damped error-variance track.
    pub tau_hat_damped: f64,
    /// Post-equalization SINR parameter.
    pub rho: f64,
    /// Onsager direction `z - s_hat` from the previous iteration.
    pub alpha: DVector<Complex64>,
    /// Onsager coefficient.
    pub b_onsager: f64,
}

impl LamaState {
    /// Initial state: zero estimates and zero SINR.
    pub fn init(n_users: usize) -> Self {
        Self {
            t: 1,
            z: DVector::zeros(n_users),
            s_hat: DVector::zeros(n_users),
            tau: DVector::from_element(n_users, 1.0),
            tau_hat: 0.0,
            tau_hat_damped: 0.0,
            rho: 0.0,
            alpha: DVector::zeros(n_users),
            b_onsager: 0.0,
        }
    }
}

/// Detector output for one received vector.
#[derive(Debug, Clone)]
pub struct DetectorOutput {
    /// Extrinsic LLRs, row-major `U x Q`, clamped.
    pub extrinsic_llrs: Vec<f64>,
    /// Final symbol estimates.
    pub s_hat: DVector<Complex64>,
    /// Final per-user decoupled-channel SINR `rho * g_u`.
    pub per_user_sinr: Vec<f64>,
    pub rho_final: f64,
}

/// Convex combination of the new error-variance estimate with the
/// previous damped value: `theta * new + (1 - theta) * prev`. With no
/// history (first iteration) the new value passes through.
pub fn damp(tau_hat_new: f64, tau_hat_prev_damped: Option<f64>, theta: f64) -> Result<f64> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "damping factor must be in (0,1], got {theta}"
        )));
    }
    Ok(match tau_hat_prev_damped {
        None => tau_hat_new,
        Some(prev) => theta * tau_hat_new + (1.0 - theta) * prev,
    })
}

/// Which arithmetic path the denoiser runs.
#[derive(Debug, Clone, Copy)]
enum DenoisePath {
    Exact,
    MaxLog { lut_tanh: bool },
}

impl LamaParams {
    fn denoise_path(&self) -> DenoisePath {
        if self.hw_arith {
            DenoisePath::MaxLog { lut_tanh: true }
        } else {
            match self.denoiser {
                Denoiser::Exact => DenoisePath::Exact,
                Denoiser::MaxLog => DenoisePath::MaxLog { lut_tanh: false },
            }
        }
    }
}

/// Stable `log sigmoid(x) = -softplus(-x)`.
fn log_sigmoid(x: f64) -> f64 {
    -((-x).max(0.0) + (-x.abs()).exp().ln_1p())
}

/// Log prior over the PAM levels from this dimension's bit LLRs. A
/// constant shift is irrelevant to the posterior, so uniform (all-zero)
/// priors short-circuit to zero.
fn dim_log_prior(pam: &Pam, dim_llrs: &[f64], out: &mut [f64; MAX_PAM]) {
    let m = pam.levels.len();
    if dim_llrs.iter().all(|&l| l == 0.0) {
        out[..m].fill(0.0);
        return;
    }
    let mut lp1 = [0.0f64; 4];
    let mut lp0 = [0.0f64; 4];
    for (j, &llr) in dim_llrs.iter().enumerate() {
        lp1[j] = log_sigmoid(llr);
        lp0[j] = log_sigmoid(-llr);
    }
    for (i, &label) in pam.labels.iter().enumerate() {
        let mut lp = 0.0;
        for j in 0..dim_llrs.len() {
            lp += if (label >> j) & 1 == 1 { lp1[j] } else { lp0[j] };
        }
        out[i] = lp;
    }
}

/// Weights this many nats below the maximum are dropped from the
/// posterior sums; e^-46 is far below the double-precision resolution
/// of the accumulators.
const LOG_WEIGHT_CUTOFF: f64 = 46.0;

/// Exact posterior mean and variance for one PAM dimension observed in
/// Gaussian noise of variance `1/(2 sinr)`.
fn denoise_dim_exact(x: f64, sinr: f64, pam: &Pam, dim_llrs: &[f64]) -> (f64, f64) {
    let m = pam.levels.len();
    let mut logw = [0.0f64; MAX_PAM];
    dim_log_prior(pam, dim_llrs, &mut logw);
    let mut max_lw = f64::NEG_INFINITY;
    for (i, &a) in pam.levels.iter().enumerate() {
        let d = x - a;
        logw[i] -= sinr * d * d;
        max_lw = max_lw.max(logw[i]);
    }
    let cutoff = max_lw - LOG_WEIGHT_CUTOFF;
    let mut norm = 0.0;
    let mut mean = 0.0;
    let mut second = 0.0;
    for (i, &a) in pam.levels.iter().enumerate().take(m) {
        if logw[i] < cutoff {
            continue;
        }
        let w = (logw[i] - max_lw).exp();
        norm += w;
        mean += w * a;
        second += w * a * a;
    }
    mean /= norm;
    second /= norm;
    (mean, (second - mean * mean).max(0.0))
}

/// Bit-domain max-log posterior for one PAM dimension. Per label bit,
/// `L_j = sinr (min_{a: bit=0} (x-a)^2 - min_{a: bit=1} (x-a)^2) + prior_j`;
/// the symbol pmf is the product of the per-bit Bernoullis, formed
/// without a division via `p(a) = 2^-m prod_j (1 + s_j tanh(L_j / 2))`.
fn denoise_dim_maxlog(
    x: f64,
    sinr: f64,
    pam: &Pam,
    dim_llrs: &[f64],
    lut_tanh: bool,
    bit_llrs_out: &mut [f64],
) -> (f64, f64) {
    let m = pam.levels.len();
    let n_bits = pam.bits();
    let mut t = [0.0f64; 4];
    for j in 0..n_bits {
        let mut d0 = f64::INFINITY;
        let mut d1 = f64::INFINITY;
        for (i, &a) in pam.levels.iter().enumerate().take(m) {
            let d = (x - a) * (x - a);
            if (pam.labels[i] >> j) & 1 == 1 {
                d1 = d1.min(d);
            } else {
                d0 = d0.min(d);
            }
        }
        let llr = sinr * (d0 - d1) + dim_llrs[j];
        bit_llrs_out[j] = llr;
        t[j] = if lut_tanh {
            tanh_lut(0.5 * llr)
        } else {
            (0.5 * llr).tanh()
        };
    }
    let mut mean = 0.0;
    let mut second = 0.0;
    let half_pow = 0.5f64.powi(n_bits as i32);
    for (i, &a) in pam.levels.iter().enumerate().take(m) {
        let mut p = half_pow;
        for (j, &tj) in t.iter().enumerate().take(n_bits) {
            let s = if (pam.labels[i] >> j) & 1 == 1 { tj } else { -tj };
            p *= 1.0 + s;
        }
        mean += p * a;
        second += p * a * a;
    }
    (mean, (second - mean * mean).max(0.0))
}

fn check_sinr(sinr: &[f64]) -> Result<()> {
    for (u, &s) in sinr.iter().enumerate() {
        if s < 0.0 || s.is_nan() {
            return Err(Error::InvalidParameter(format!(
                "negative sinr {s} for user {u}"
            )));
        }
    }
    Ok(())
}

/// Exact per-user posterior mean and variance given decoupled
/// observations `z_u = s_u + CN(0, 1/sinr_u)` and bit priors, computed
/// per PAM dimension.
pub fn denoise_exact(
    z: &DVector<Complex64>,
    sinr: &[f64],
    priors: &BitPriors,
    constellation: &Constellation,
) -> Result<(DVector<Complex64>, DVector<f64>)> {
    check_sinr(sinr)?;
    let (pam_re, pam_im) = constellation.pam_split();
    let u_count = z.len();
    let mut s_hat = DVector::zeros(u_count);
    let mut tau = DVector::zeros(u_count);
    let mut re_llrs = [0.0f64; 4];
    let mut im_llrs = [0.0f64; 4];
    for u in 0..u_count {
        let row = priors.user_row(u);
        gather_dim_llrs(row, pam_re, &mut re_llrs);
        gather_dim_llrs(row, pam_im, &mut im_llrs);
        let (mr, vr) = denoise_dim_exact(z[u].re, sinr[u], pam_re, &re_llrs[..pam_re.bits()]);
        let (mi, vi) = denoise_dim_exact(z[u].im, sinr[u], pam_im, &im_llrs[..pam_im.bits()]);
        s_hat[u] = Complex64::new(mr, mi);
        tau[u] = vr + vi;
    }
    Ok((s_hat, tau))
}

/// Max-log variant of [`denoise_exact`]. Also returns the per-user
/// posterior bit LLRs (row-major `U x Q`).
pub fn denoise_maxlog(
    z: &DVector<Complex64>,
    sinr: &[f64],
    priors: &BitPriors,
    constellation: &Constellation,
) -> Result<(DVector<Complex64>, DVector<f64>, Vec<f64>)> {
    denoise_maxlog_with(z, sinr, priors, constellation, false)
}

fn denoise_maxlog_with(
    z: &DVector<Complex64>,
    sinr: &[f64],
    priors: &BitPriors,
    constellation: &Constellation,
    lut_tanh: bool,
) -> Result<(DVector<Complex64>, DVector<f64>, Vec<f64>)> {
    check_sinr(sinr)?;
    let (pam_re, pam_im) = constellation.pam_split();
    let q = constellation.q_bits;
    let u_count = z.len();
    let mut s_hat = DVector::zeros(u_count);
    let mut tau = DVector::zeros(u_count);
    let mut posterior = vec![0.0; u_count * q];
    let mut re_llrs = [0.0f64; 4];
    let mut im_llrs = [0.0f64; 4];
    let mut re_out = [0.0f64; 4];
    let mut im_out = [0.0f64; 4];
    for u in 0..u_count {
        let row = priors.user_row(u);
        gather_dim_llrs(row, pam_re, &mut re_llrs);
        gather_dim_llrs(row, pam_im, &mut im_llrs);
        let (mr, vr) = denoise_dim_maxlog(
            z[u].re,
            sinr[u],
            pam_re,
            &re_llrs[..pam_re.bits()],
            lut_tanh,
            &mut re_out,
        );
        let (mi, vi) = denoise_dim_maxlog(
            z[u].im,
            sinr[u],
            pam_im,
            &im_llrs[..pam_im.bits()],
            lut_tanh,
            &mut im_out,
        );
        s_hat[u] = Complex64::new(mr, mi);
        tau[u] = vr + vi;
        for (j, &qi) in pam_re.qam_bits.iter().enumerate() {
            posterior[u * q + qi] = re_out[j];
        }
        for (j, &qi) in pam_im.qam_bits.iter().enumerate() {
            posterior[u * q + qi] = im_out[j];
        }
    }
    Ok((s_hat, tau, posterior))
}

fn gather_dim_llrs(user_row: &[f64], pam: &Pam, out: &mut [f64; 4]) {
    for (j, &q) in pam.qam_bits.iter().enumerate() {
        out[j] = user_row[q];
    }
}

/// One detector iteration: mean/variance estimation, error-variance
/// averaging and damping, Onsager correction, interference
/// cancellation, and the SINR update.
pub fn lama_step(
    state: &LamaState,
    gram: &GramData,
    priors: &BitPriors,
    constellation: &Constellation,
    params: &LamaParams,
) -> Result<LamaState> {
    let b = gram.b_antennas as f64;
    let sinr: Vec<f64> = gram.g.iter().map(|&g| state.rho * g).collect();

    let (mut s_hat_new, tau_new) = match params.denoise_path() {
        DenoisePath::Exact => denoise_exact(&state.z, &sinr, priors, constellation)?,
        DenoisePath::MaxLog { lut_tanh } => {
            let (s, t, _) = denoise_maxlog_with(&state.z, &sinr, priors, constellation, lut_tanh)?;
            (s, t)
        }
    };

    if let Some(fp) = params.fixed_point {
        for v in s_hat_new.iter_mut() {
            *v = Complex64::new(fp.quantize(v.re), fp.quantize(v.im));
        }
    }

    let tau_hat_new: f64 = gram
        .g
        .iter()
        .zip(tau_new.iter())
        .map(|(&g, &t)| g * t)
        .sum::<f64>()
        / b;
    let tau_hat_damped_new = damp(
        tau_hat_new,
        if state.t == 1 {
            None
        } else {
            Some(state.tau_hat_damped)
        },
        params.theta,
    )?;

    let alpha = &state.z - &state.s_hat;
    let b_onsager = state.rho * tau_hat_damped_new;

    let mut z_new = &gram.ymf_tilde + &gram.g_tilde * &s_hat_new;
    z_new.axpy(Complex64::new(b_onsager, 0.0), &alpha, Complex64::new(1.0, 0.0));

    if let Some(fp) = params.fixed_point {
        for v in z_new.iter_mut() {
            *v = Complex64::new(fp.quantize(v.re), fp.quantize(v.im));
        }
    }

    if !tau_hat_damped_new.is_finite()
        || z_new.iter().any(|v| !v.re.is_finite() || !v.im.is_finite())
    {
        return Err(Error::NumericalDivergence { iteration: state.t });
    }

    let denom = gram.n0 / b + tau_hat_damped_new;
    let rho_new = if denom <= 0.0 {
        params.rho_max
    } else if params.hw_arith {
        nr_reciprocal(denom)?.min(params.rho_max)
    } else {
        (1.0 / denom).min(params.rho_max)
    };

    if !rho_new.is_finite() {
        return Err(Error::NumericalDivergence { iteration: state.t });
    }

    Ok(LamaState {
        t: state.t + 1,
        z: z_new,
        s_hat: s_hat_new,
        tau: tau_new,
        tau_hat: tau_hat_new,
        tau_hat_damped: tau_hat_damped_new,
        rho: rho_new,
        alpha,
        b_onsager,
    })
}

/// Runs `t_max` detector iterations from the zero initialization and
/// demaps the final decoupled observations to extrinsic LLRs.
pub fn lama_run(
    gram: &GramData,
    priors: &BitPriors,
    constellation: &Constellation,
    params: &LamaParams,
) -> Result<DetectorOutput> {
    let mut state = LamaState::init(gram.n_users());
    for _ in 0..params.t_max {
        state = lama_step(&state, gram, priors, constellation, params)?;
    }
    let llrs = extrinsic_llrs(
        &state.z,
        state.rho,
        gram.g.as_slice(),
        priors,
        constellation,
        params.llr_clamp,
    );
    let per_user_sinr: Vec<f64> = gram.g.iter().map(|&g| state.rho * g).collect();
    Ok(DetectorOutput {
        extrinsic_llrs: llrs,
        s_hat: state.s_hat,
        per_user_sinr,
        rho_final: state.rho,
    })
}

/// Max-log extrinsic LLRs for one user's decoupled observation
/// `z = s + CN(0, 1/sinr)`: per PAM dimension the symbol metric is
/// `-sinr (x-a)^2 + sum_j bit_j(a) prior_j`, the posterior bit LLR is the
/// difference of the bit-1 and bit-0 maxima, and the a-priori LLR of the
/// bit itself is subtracted before clamping.
pub fn demap_user(
    z: Complex64,
    sinr: f64,
    prior_row: &[f64],
    constellation: &Constellation,
    llr_clamp: f64,
    out: &mut [f64],
) {
    let (pam_re, pam_im) = constellation.pam_split();
    demap_dim(z.re, sinr, pam_re, prior_row, llr_clamp, out);
    demap_dim(z.im, sinr, pam_im, prior_row, llr_clamp, out);
}

fn demap_dim(
    x: f64,
    sinr: f64,
    pam: &Pam,
    prior_row: &[f64],
    llr_clamp: f64,
    out: &mut [f64],
) {
    let m = pam.levels.len();
    let n_bits = pam.bits();
    // Symbol metrics with the prior expressed through bit LLRs; the
    // bit-independent normalization cancels in every difference.
    let mut metric = [0.0f64; MAX_PAM];
    for i in 0..m {
        let d = x - pam.levels[i];
        let mut mt = -sinr * d * d;
        for (j, &q) in pam.qam_bits.iter().enumerate() {
            if (pam.labels[i] >> j) & 1 == 1 {
                mt += prior_row[q];
            }
        }
        metric[i] = mt;
    }
    for (j, &q) in pam.qam_bits.iter().enumerate().take(n_bits) {
        let mut max1 = f64::NEG_INFINITY;
        let mut max0 = f64::NEG_INFINITY;
        for i in 0..m {
            if (pam.labels[i] >> j) & 1 == 1 {
                max1 = max1.max(metric[i]);
            } else {
                max0 = max0.max(metric[i]);
            }
        }
        out[q] = (max1 - max0 - prior_row[q]).clamp(-llr_clamp, llr_clamp);
    }
}

/// Extrinsic LLRs for all users on the decoupled channel, row-major
/// `U x Q`.
pub fn extrinsic_llrs(
    z: &DVector<Complex64>,
    rho: f64,
    g: &[f64],
    priors: &BitPriors,
    constellation: &Constellation,
    llr_clamp: f64,
) -> Vec<f64> {
    let q = constellation.q_bits;
    let mut out = vec![0.0; z.len() * q];
    for u in 0..z.len() {
        demap_user(
            z[u],
            rho * g[u],
            priors.user_row(u),
            constellation,
            llr_clamp,
            &mut out[u * q..(u + 1) * q],
        );
    }
    out
}

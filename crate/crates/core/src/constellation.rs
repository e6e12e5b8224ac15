//! Gray-labeled square QAM constellations and their PAM decomposition.
//!
//! All constellations are scaled to unit average symbol energy. A
//! `2^Q`-point QAM symbol carries `Q` bits; even-indexed bits label the
//! real PAM and odd-indexed bits the imaginary PAM, so the per-dimension
//! split is a pure index filter. PAM levels use the standard reflected
//! binary Gray code, which makes adjacent levels differ in exactly one
//! label bit.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Default symmetric clamp applied to a-priori LLRs.
pub const DEFAULT_LLR_CLAMP: f64 = 16.0;

/// Supported modulation schemes (square QAM only).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Qpsk,
    Qam16,
    Qam64,
    Qam256,
}

impl Scheme {
    /// Bits per symbol.
    pub fn bits_per_symbol(self) -> usize {
        match self {
            Scheme::Qpsk => 2,
            Scheme::Qam16 => 4,
            Scheme::Qam64 => 6,
            Scheme::Qam256 => 8,
        }
    }

    /// Levels per real dimension.
    pub fn pam_size(self) -> usize {
        1 << (self.bits_per_symbol() / 2)
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Qpsk => "qpsk",
            Scheme::Qam16 => "qam16",
            Scheme::Qam64 => "qam64",
            Scheme::Qam256 => "qam256",
        }
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "qpsk" => Ok(Scheme::Qpsk),
            "qam16" => Ok(Scheme::Qam16),
            "qam64" => Ok(Scheme::Qam64),
            "qam256" => Ok(Scheme::Qam256),
            other => Err(format!("unknown modulation scheme `{other}`")),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One real PAM dimension of a square QAM constellation.
#[derive(Debug, Clone)]
pub struct Pam {
    /// Amplitude levels in ascending order.
    pub levels: Vec<f64>,
    /// Gray label of each level; bit `j` is `(label >> j) & 1`.
    pub labels: Vec<u32>,
    /// For each PAM label bit `j`, the index of the corresponding bit in
    /// the full QAM symbol label.
    pub qam_bits: Vec<usize>,
}

impl Pam {
    /// Number of label bits per level.
    pub fn bits(&self) -> usize {
        self.qam_bits.len()
    }

    /// Prior pmf over the levels from this dimension's bit LLRs
    /// (`dim_llrs[j]` is the LLR of PAM label bit `j`).
    pub fn prior_pmf(&self, dim_llrs: &[f64]) -> Vec<f64> {
        assert_eq!(dim_llrs.len(), self.bits());
        self.labels
            .iter()
            .map(|&label| {
                dim_llrs
                    .iter()
                    .enumerate()
                    .map(|(j, &llr)| {
                        if (label >> j) & 1 == 1 {
                            sigmoid(llr)
                        } else {
                            sigmoid(-llr)
                        }
                    })
                    .product()
            })
            .collect()
    }

    /// Mean and variance of the level distribution `pmf`.
    pub fn moments(&self, pmf: &[f64]) -> (f64, f64) {
        let mean: f64 = self
            .levels
            .iter()
            .zip(pmf)
            .map(|(&a, &p)| p * a)
            .sum();
        let second: f64 = self
            .levels
            .iter()
            .zip(pmf)
            .map(|(&a, &p)| p * a * a)
            .sum();
        (mean, second - mean * mean)
    }
}

/// Gray-labeled unit-energy square QAM constellation.
#[derive(Debug, Clone)]
pub struct Constellation {
    pub scheme: Scheme,
    /// Bits per symbol.
    pub q_bits: usize,
    /// The `2^Q` constellation points.
    pub points: Vec<Complex64>,
    /// Bit label of each point; bit `q` is `(label >> q) & 1`.
    pub labels: Vec<u32>,
    /// Per-dimension PAM levels in ascending order.
    pub pam_levels: Vec<f64>,
    /// Inverse map: point index of each label value.
    label_index: Vec<usize>,
    pam_re: Pam,
    pam_im: Pam,
}

impl Constellation {
    /// Builds the constellation for `scheme`.
    ///
    /// Levels are the odd integers `±1, ±3, ..., ±(M-1)` scaled by
    /// `sqrt(3 / (2 (M^2 - 1)))` so that the average symbol energy is
    /// exactly one.
    pub fn build(scheme: Scheme) -> Self {
        let q_bits = scheme.bits_per_symbol();
        let m = scheme.pam_size();
        let scale = (3.0 / (2.0 * (m * m - 1) as f64)).sqrt();
        let pam_levels: Vec<f64> = (0..m)
            .map(|k| ((2 * k + 1) as f64 - m as f64) * scale)
            .collect();
        let pam_labels: Vec<u32> = (0..m as u32).map(|k| k ^ (k >> 1)).collect();

        let mut points = Vec::with_capacity(m * m);
        let mut labels = Vec::with_capacity(m * m);
        for (ri, &re) in pam_levels.iter().enumerate() {
            for (ii, &im) in pam_levels.iter().enumerate() {
                points.push(Complex64::new(re, im));
                labels.push(interleave_label(
                    pam_labels[ri],
                    pam_labels[ii],
                    q_bits / 2,
                ));
            }
        }

        let mut label_index = vec![0usize; m * m];
        for (i, &label) in labels.iter().enumerate() {
            label_index[label as usize] = i;
        }

        let m_bits = q_bits / 2;
        let pam_re = Pam {
            levels: pam_levels.clone(),
            labels: pam_labels.clone(),
            qam_bits: (0..m_bits).map(|j| 2 * j).collect(),
        };
        let pam_im = Pam {
            levels: pam_levels.clone(),
            labels: pam_labels.clone(),
            qam_bits: (0..m_bits).map(|j| 2 * j + 1).collect(),
        };

        Self {
            scheme,
            q_bits,
            points,
            labels,
            pam_levels,
            label_index,
            pam_re,
            pam_im,
        }
    }

    /// The constellation point carrying the given bit label.
    pub fn point_for_label(&self, label: u32) -> Complex64 {
        self.points[self.label_index[label as usize]]
    }

    /// Maps a bit sequence (length a multiple of `Q`) to symbols; bit
    /// `q` of each chunk becomes bit `q` of the symbol label.
    pub fn map_bits(&self, bits: &[u8]) -> Vec<Complex64> {
        assert_eq!(bits.len() % self.q_bits, 0);
        bits.chunks_exact(self.q_bits)
            .map(|chunk| {
                let label = chunk
                    .iter()
                    .enumerate()
                    .fold(0u32, |acc, (q, &b)| acc | ((b as u32 & 1) << q));
                self.point_for_label(label)
            })
            .collect()
    }

    /// Average symbol energy (unit by construction).
    pub fn symbol_energy(&self) -> f64 {
        1.0
    }

    /// Number of constellation points.
    pub fn size(&self) -> usize {
        self.points.len()
    }

    /// Prior pmf over the `2^Q` symbols from per-bit LLRs
    /// (`bit_llrs[q]` with the convention `Λ = log p(x=1)/p(x=0)`).
    ///
    /// The result is `p(s) ∝ Π_q σ(Λ_q)^{x_q} σ(-Λ_q)^{1-x_q}`, which sums
    /// to one because every bit pattern occurs exactly once.
    pub fn prior_pmf(&self, bit_llrs: &[f64]) -> Vec<f64> {
        assert_eq!(bit_llrs.len(), self.q_bits);
        let p1: Vec<f64> = bit_llrs.iter().map(|&l| sigmoid(l)).collect();
        self.labels
            .iter()
            .map(|&label| {
                (0..self.q_bits)
                    .map(|q| {
                        if (label >> q) & 1 == 1 {
                            p1[q]
                        } else {
                            1.0 - p1[q]
                        }
                    })
                    .product()
            })
            .collect()
    }

    /// Splits the constellation into its real and imaginary PAM
    /// components together with the bit-index partition.
    pub fn pam_split(&self) -> (&Pam, &Pam) {
        (&self.pam_re, &self.pam_im)
    }
}

/// Interleaves two `m`-bit PAM labels into one QAM label: bit `2j` comes
/// from the real label, bit `2j+1` from the imaginary label.
fn interleave_label(re_label: u32, im_label: u32, m_bits: usize) -> u32 {
    let mut label = 0u32;
    for j in 0..m_bits {
        label |= ((re_label >> j) & 1) << (2 * j);
        label |= ((im_label >> j) & 1) << (2 * j + 1);
    }
    label
}

/// Logistic function `σ(x) = 1 / (1 + e^{-x})`.
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// A-priori LLRs for a block of `U` users with `Q` bits per symbol,
/// clamped symmetrically at construction.
#[derive(Debug, Clone)]
pub struct BitPriors {
    llrs: Vec<f64>,
    n_users: usize,
    q_bits: usize,
}

impl BitPriors {
    /// All-zero (uninformative) priors.
    pub fn zeros(n_users: usize, q_bits: usize) -> Self {
        Self {
            llrs: vec![0.0; n_users * q_bits],
            n_users,
            q_bits,
        }
    }

    /// Builds priors from a row-major `U x Q` slice, clamping each entry
    /// to `±clamp`.
    pub fn from_rows(llrs: &[f64], n_users: usize, q_bits: usize, clamp: f64) -> Self {
        assert_eq!(llrs.len(), n_users * q_bits);
        Self {
            llrs: llrs.iter().map(|&l| l.clamp(-clamp, clamp)).collect(),
            n_users,
            q_bits,
        }
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn q_bits(&self) -> usize {
        self.q_bits
    }

    /// LLR of bit `q` of user `u`.
    pub fn get(&self, user: usize, bit: usize) -> f64 {
        self.llrs[user * self.q_bits + bit]
    }

    /// All LLRs of one user.
    pub fn user_row(&self, user: usize) -> &[f64] {
        &self.llrs[user * self.q_bits..(user + 1) * self.q_bits]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const SCHEMES: [Scheme; 4] = [Scheme::Qpsk, Scheme::Qam16, Scheme::Qam64, Scheme::Qam256];

    #[test]
    fn qpsk_points_and_bits() {
        let c = Constellation::build(Scheme::Qpsk);
        assert_eq!(c.q_bits, 2);
        assert_eq!(c.size(), 4);
        let s = 1.0 / 2f64.sqrt();
        for p in &c.points {
            assert_abs_diff_eq!(p.re.abs(), s, epsilon = 1e-15);
            assert_abs_diff_eq!(p.im.abs(), s, epsilon = 1e-15);
        }
    }

    #[test]
    fn qam256_levels_are_odd_over_sqrt170() {
        let c = Constellation::build(Scheme::Qam256);
        let scale = 1.0 / 170f64.sqrt();
        let expected: Vec<f64> = (0..16).map(|k| (2 * k as i32 - 15) as f64 * scale).collect();
        for (a, e) in c.pam_levels.iter().zip(&expected) {
            assert_abs_diff_eq!(a, e, epsilon = 1e-15);
        }
    }

    #[test]
    fn unit_energy_and_zero_mean_all_schemes() {
        for scheme in SCHEMES {
            let c = Constellation::build(scheme);
            assert_eq!(c.size(), 1 << c.q_bits);
            let mean: Complex64 = c.points.iter().sum::<Complex64>() / c.size() as f64;
            assert!(mean.norm() < 1e-12, "{scheme}: mean {mean}");
            let energy: f64 =
                c.points.iter().map(|p| p.norm_sqr()).sum::<f64>() / c.size() as f64;
            assert_abs_diff_eq!(energy, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn gray_adjacency_all_pam_sizes() {
        for scheme in SCHEMES {
            let c = Constellation::build(scheme);
            for w in c.pam_split().0.labels.windows(2) {
                assert_eq!((w[0] ^ w[1]).count_ones(), 1, "{scheme}");
            }
        }
    }

    #[test]
    fn labels_are_a_bijection() {
        for scheme in SCHEMES {
            let c = Constellation::build(scheme);
            let mut sorted = c.labels.clone();
            sorted.sort_unstable();
            let expected: Vec<u32> = (0..c.size() as u32).collect();
            assert_eq!(sorted, expected, "{scheme}");
        }
    }

    #[test]
    fn prior_pmf_uniform_for_zero_llrs() {
        for scheme in SCHEMES {
            let c = Constellation::build(scheme);
            let pmf = c.prior_pmf(&vec![0.0; c.q_bits]);
            for p in pmf {
                assert_abs_diff_eq!(p, 1.0 / c.size() as f64, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn prior_pmf_hard_bit_selects_half() {
        let c = Constellation::build(Scheme::Qam16);
        let mut llrs = vec![0.0; 4];
        llrs[1] = DEFAULT_LLR_CLAMP;
        let pmf = c.prior_pmf(&llrs);
        let on = sigmoid(DEFAULT_LLR_CLAMP) / 8.0;
        let off = sigmoid(-DEFAULT_LLR_CLAMP) / 8.0;
        for (i, &label) in c.labels.iter().enumerate() {
            if (label >> 1) & 1 == 1 {
                assert_abs_diff_eq!(pmf[i], on, epsilon = 1e-15);
            } else {
                assert_abs_diff_eq!(pmf[i], off, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn prior_pmf_qpsk_example() {
        let c = Constellation::build(Scheme::Qpsk);
        let pmf = c.prior_pmf(&[2.0, 0.0]);
        for (i, &label) in c.labels.iter().enumerate() {
            let expected = if label & 1 == 1 {
                sigmoid(2.0) / 2.0
            } else {
                sigmoid(-2.0) / 2.0
            };
            assert_abs_diff_eq!(pmf[i], expected, epsilon = 1e-15);
        }
    }

    #[test]
    fn prior_pmf_sums_to_one_and_recovers_marginals() {
        let c = Constellation::build(Scheme::Qam64);
        let llrs = [0.7, -1.3, 2.4, 0.0, -0.2, 5.0];
        let pmf = c.prior_pmf(&llrs);
        assert_abs_diff_eq!(pmf.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        for (q, &llr) in llrs.iter().enumerate() {
            let marginal: f64 = c
                .labels
                .iter()
                .zip(&pmf)
                .filter(|(&label, _)| (label >> q) & 1 == 1)
                .map(|(_, &p)| p)
                .sum();
            assert_abs_diff_eq!(marginal, sigmoid(llr), epsilon = 1e-12);
        }
    }

    #[test]
    fn pam_split_sizes() {
        let c256 = Constellation::build(Scheme::Qam256);
        let (re, im) = c256.pam_split();
        assert_eq!(re.levels.len(), 16);
        assert_eq!(im.levels.len(), 16);
        assert_eq!(re.qam_bits, vec![0, 2, 4, 6]);
        assert_eq!(im.qam_bits, vec![1, 3, 5, 7]);

        let cq = Constellation::build(Scheme::Qpsk);
        let (re, im) = cq.pam_split();
        assert_eq!(re.levels.len(), 2);
        assert_eq!(im.levels.len(), 2);
    }

    #[test]
    fn pam_split_reconstructs_qam() {
        for scheme in SCHEMES {
            let c = Constellation::build(scheme);
            let (re, im) = c.pam_split();
            for (point, &label) in c.points.iter().zip(&c.labels) {
                let ri = re.levels.iter().position(|&l| l == point.re).unwrap();
                let ii = im.levels.iter().position(|&l| l == point.im).unwrap();
                for (j, &q) in re.qam_bits.iter().enumerate() {
                    assert_eq!((label >> q) & 1, (re.labels[ri] >> j) & 1);
                }
                for (j, &q) in im.qam_bits.iter().enumerate() {
                    assert_eq!((label >> q) & 1, (im.labels[ii] >> j) & 1);
                }
            }
        }
    }

    #[test]
    fn product_pmf_moments_add_per_dimension() {
        let c = Constellation::build(Scheme::Qam16);
        let (re, im) = c.pam_split();
        let llrs = [0.9, -0.4, 1.7, 0.3];
        let re_llrs: Vec<f64> = re.qam_bits.iter().map(|&q| llrs[q]).collect();
        let im_llrs: Vec<f64> = im.qam_bits.iter().map(|&q| llrs[q]).collect();
        let (mr, vr) = re.moments(&re.prior_pmf(&re_llrs));
        let (mi, vi) = im.moments(&im.prior_pmf(&im_llrs));

        let pmf = c.prior_pmf(&llrs);
        let mean: Complex64 = c
            .points
            .iter()
            .zip(&pmf)
            .map(|(&s, &p)| s * p)
            .sum();
        let var: f64 = c
            .points
            .iter()
            .zip(&pmf)
            .map(|(&s, &p)| p * (s - Complex64::new(mr, mi)).norm_sqr())
            .sum();
        assert_abs_diff_eq!(mean.re, mr, epsilon = 1e-12);
        assert_abs_diff_eq!(mean.im, mi, epsilon = 1e-12);
        assert_abs_diff_eq!(var, vr + vi, epsilon = 1e-12);
    }

    #[test]
    fn bit_priors_clamp() {
        let p = BitPriors::from_rows(&[40.0, -40.0, 1.0, 0.0], 2, 2, 16.0);
        assert_eq!(p.get(0, 0), 16.0);
        assert_eq!(p.get(0, 1), -16.0);
        assert_eq!(p.get(1, 0), 1.0);
        assert_eq!(p.user_row(1), &[1.0, 0.0]);
    }

    #[test]
    fn scheme_names_round_trip() {
        for scheme in SCHEMES {
            assert_eq!(scheme.name().parse::<Scheme>().unwrap(), scheme);
        }
        assert!("qam32".parse::<Scheme>().is_err());
    }
}

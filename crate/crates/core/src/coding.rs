//! Per-UE convolutional coding for the iterative detection-and-decoding
//! loop: terminated rate-1/2 mother code (K=7, generators 133/171
//! octal), optional puncturing to rate 3/4, a max-log BCJR soft-input
//! soft-output decoder, and a seeded pseudo-random interleaver.
//!
//! All functions are pure per-packet operations; packets decode
//! concurrently without shared state.

use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Constraint length of the mother code.
const CONSTRAINT_LEN: usize = 7;
/// Encoder memory (tail length).
const MEMORY: usize = CONSTRAINT_LEN - 1;
/// Trellis states.
const NUM_STATES: usize = 1 << MEMORY;
/// Generator polynomials, current input at the MSB.
const GENERATORS: [u32; 2] = [0o133, 0o171];

/// Code rate after puncturing. Serializes as its numeric value so
/// config files mirror the CLI's `--rate {0.5,0.75}` flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CodeRate {
    Half,
    ThreeQuarters,
}

impl Serialize for CodeRate {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.as_f64())
    }
}

impl<'de> Deserialize<'de> for CodeRate {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let r = f64::deserialize(deserializer)?;
        CodeRate::from_f64(r).map_err(serde::de::Error::custom)
    }
}

impl CodeRate {
    pub fn as_f64(self) -> f64 {
        match self {
            CodeRate::Half => 0.5,
            CodeRate::ThreeQuarters => 0.75,
        }
    }

    /// Parses the CLI rate values `0.5` and `0.75`.
    pub fn from_f64(r: f64) -> Result<Self> {
        if (r - 0.5).abs() < 1e-9 {
            Ok(CodeRate::Half)
        } else if (r - 0.75).abs() < 1e-9 {
            Ok(CodeRate::ThreeQuarters)
        } else {
            Err(Error::InvalidParameter(format!(
                "unsupported code rate {r} (expected 0.5 or 0.75)"
            )))
        }
    }
}

/// Convolutional code configuration. The mother code is fixed; the
/// puncturing pattern is selected by the target rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeConfig {
    pub rate: CodeRate,
}

impl CodeConfig {
    pub fn new(rate: CodeRate) -> Self {
        Self { rate }
    }

    pub fn constraint_length(&self) -> usize {
        CONSTRAINT_LEN
    }

    pub fn generators_octal(&self) -> [u32; 2] {
        GENERATORS
    }

    /// Trellis sections for `n_info` information bits (tail included).
    pub fn n_sections(&self, n_info: usize) -> usize {
        n_info + MEMORY
    }

    /// Mother-code output length before puncturing.
    pub fn mother_len(&self, n_info: usize) -> usize {
        2 * self.n_sections(n_info)
    }

    /// Whether mother bit `j` of trellis section `k` is transmitted.
    ///
    /// Rate 3/4 uses the period-3 pattern `[1,1,0]` on the first output
    /// stream and `[1,0,1]` on the second.
    pub fn keep(&self, section: usize, stream: usize) -> bool {
        match self.rate {
            CodeRate::Half => true,
            CodeRate::ThreeQuarters => match (section % 3, stream) {
                (0, _) => true,
                (1, 0) | (2, 1) => true,
                _ => false,
            },
        }
    }

    /// Transmitted (post-puncturing) length for `n_info` information bits.
    pub fn coded_len(&self, n_info: usize) -> usize {
        (0..self.n_sections(n_info))
            .map(|k| (0..2).filter(|&j| self.keep(k, j)).count())
            .sum()
    }

    /// Drops punctured positions from a mother-length sequence.
    pub fn puncture<T: Copy>(&self, mother: &[T]) -> Vec<T> {
        let mut out = Vec::with_capacity(mother.len());
        for (i, &v) in mother.iter().enumerate() {
            if self.keep(i / 2, i % 2) {
                out.push(v);
            }
        }
        out
    }

    /// Re-inserts zeros at punctured positions, returning a
    /// mother-length LLR sequence.
    pub fn depuncture(&self, kept: &[f64], n_info: usize) -> Result<Vec<f64>> {
        let expected = self.coded_len(n_info);
        if kept.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                actual: kept.len(),
            });
        }
        let mut out = vec![0.0; self.mother_len(n_info)];
        let mut src = 0;
        for (i, v) in out.iter_mut().enumerate() {
            if self.keep(i / 2, i % 2) {
                *v = kept[src];
                src += 1;
            }
        }
        Ok(out)
    }
}

/// Soft decoder output for one packet.
#[derive(Debug, Clone)]
pub struct LlrFrame {
    /// Extrinsic LLRs for the mother coded bits (input subtracted).
    pub coded_llrs: Vec<f64>,
    /// The a-priori (input) LLRs the extrinsics were computed from.
    pub apriori: Vec<f64>,
    /// Hard decisions for the information bits.
    pub info_decisions: Vec<u8>,
}

/// Output bits of the transition from `state` with input `bit`.
#[inline]
fn branch_outputs(state: usize, bit: usize) -> (u8, u8) {
    let window = ((bit as u32) << MEMORY) | state as u32;
    (
        ((window & GENERATORS[0]).count_ones() & 1) as u8,
        ((window & GENERATORS[1]).count_ones() & 1) as u8,
    )
}

/// Successor state of the transition from `state` with input `bit`.
#[inline]
fn next_state(state: usize, bit: usize) -> usize {
    (bit << (MEMORY - 1)) | (state >> 1)
}

/// Encodes `info_bits` with the terminated mother code and punctures to
/// the configured rate.
pub fn conv_encode(info_bits: &[u8], config: &CodeConfig) -> Vec<u8> {
    assert!(!info_bits.is_empty());
    let n_sections = config.n_sections(info_bits.len());
    let mut mother = Vec::with_capacity(2 * n_sections);
    let mut state = 0usize;
    for k in 0..n_sections {
        let bit = if k < info_bits.len() {
            (info_bits[k] & 1) as usize
        } else {
            0
        };
        let (o0, o1) = branch_outputs(state, bit);
        mother.push(o0);
        mother.push(o1);
        state = next_state(state, bit);
    }
    debug_assert_eq!(state, 0, "termination must return to the zero state");
    config.puncture(&mother)
}

/// Max-log BCJR decoder over the 64-state trellis.
///
/// `coded_llrs` must be a depunctured mother-length sequence (zeros at
/// punctured positions) with the convention `Λ = log p(x=1)/p(x=0)`.
/// Returns extrinsic LLRs for the coded bits and hard information-bit
/// decisions.
pub fn bcjr_siso(coded_llrs: &[f64], n_info: usize, config: &CodeConfig) -> Result<LlrFrame> {
    let n_sections = config.n_sections(n_info);
    if coded_llrs.len() != 2 * n_sections {
        return Err(Error::LengthMismatch {
            expected: 2 * n_sections,
            actual: coded_llrs.len(),
        });
    }

    // gamma(s, b) = sum_j out_j(s, b) * llr_j; the hypothesis-independent
    // -log(1 + e^llr) terms cancel in every LLR difference.
    let gamma = |section: usize, state: usize, bit: usize| -> f64 {
        let (o0, o1) = branch_outputs(state, bit);
        let mut g = 0.0;
        if o0 == 1 {
            g += coded_llrs[2 * section];
        }
        if o1 == 1 {
            g += coded_llrs[2 * section + 1];
        }
        g
    };

    // Backward recursion; beta[k][s] for k = 0..=n_sections.
    let mut beta = vec![vec![f64::NEG_INFINITY; NUM_STATES]; n_sections + 1];
    beta[n_sections][0] = 0.0;
    for k in (0..n_sections).rev() {
        let tail = k >= n_info;
        for state in 0..NUM_STATES {
            let mut best = f64::NEG_INFINITY;
            for bit in 0..=(if tail { 0 } else { 1 }) {
                let cand = gamma(k, state, bit) + beta[k + 1][next_state(state, bit)];
                best = best.max(cand);
            }
            beta[k][state] = best;
        }
        recenter(&mut beta[k]);
    }

    // Forward recursion with per-section coded-bit and info-bit metrics.
    let mut alpha = vec![f64::NEG_INFINITY; NUM_STATES];
    alpha[0] = 0.0;
    let mut coded_post = vec![0.0; 2 * n_sections];
    let mut info_decisions = Vec::with_capacity(n_info);
    for k in 0..n_sections {
        let tail = k >= n_info;
        let mut metric_bit = [[f64::NEG_INFINITY; 2]; 2]; // [stream][value]
        let mut metric_info = [f64::NEG_INFINITY; 2];
        let mut alpha_next = vec![f64::NEG_INFINITY; NUM_STATES];
        for state in 0..NUM_STATES {
            if alpha[state] == f64::NEG_INFINITY {
                continue;
            }
            for bit in 0..=(if tail { 0 } else { 1 }) {
                let ns = next_state(state, bit);
                let full = alpha[state] + gamma(k, state, bit) + beta[k + 1][ns];
                let (o0, o1) = branch_outputs(state, bit);
                metric_bit[0][o0 as usize] = metric_bit[0][o0 as usize].max(full);
                metric_bit[1][o1 as usize] = metric_bit[1][o1 as usize].max(full);
                metric_info[bit] = metric_info[bit].max(full);
                let fwd = alpha[state] + gamma(k, state, bit);
                alpha_next[ns] = alpha_next[ns].max(fwd);
            }
        }
        for j in 0..2 {
            coded_post[2 * k + j] = posterior_llr(metric_bit[j][1], metric_bit[j][0]);
        }
        if !tail {
            info_decisions.push(u8::from(metric_info[1] > metric_info[0]));
        }
        recenter(&mut alpha_next);
        alpha = alpha_next;
    }

    let coded_extrinsic: Vec<f64> = coded_post
        .iter()
        .zip(coded_llrs)
        .map(|(&post, &input)| post - input)
        .collect();

    Ok(LlrFrame {
        coded_llrs: coded_extrinsic,
        apriori: coded_llrs.to_vec(),
        info_decisions,
    })
}

/// Posterior LLR from the two max-log hypothesis metrics, with
/// structurally-forced bits (tail sections) mapped to certainty.
fn posterior_llr(metric_one: f64, metric_zero: f64) -> f64 {
    match (metric_one == f64::NEG_INFINITY, metric_zero == f64::NEG_INFINITY) {
        (false, false) => metric_one - metric_zero,
        (true, false) => f64::NEG_INFINITY,
        (false, true) => f64::INFINITY,
        (true, true) => 0.0,
    }
}

fn recenter(values: &mut [f64]) {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max.is_finite() {
        for v in values.iter_mut() {
            *v -= max;
        }
    }
}

/// The fixed pseudo-random permutation used by [`interleave`] /
/// [`deinterleave`] for a given length and seed.
pub fn permutation(len: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (len as u64).wrapping_mul(0x9E3779B97F4A7C15));
    let mut perm: Vec<usize> = (0..len).collect();
    // Fisher-Yates
    for i in (1..len).rev() {
        let j = rng.gen_range(0..=i);
        perm.swap(i, j);
    }
    perm
}

/// Applies the fixed pseudo-random permutation for `(len, seed)`:
/// `out[i] = seq[perm[i]]`.
pub fn interleave<T: Copy>(seq: &[T], seed: u64) -> Vec<T> {
    let perm = permutation(seq.len(), seed);
    perm.iter().map(|&p| seq[p]).collect()
}

/// Exact inverse of [`interleave`] for the same `(len, seed)`.
pub fn deinterleave<T: Copy + Default>(seq: &[T], seed: u64) -> Vec<T> {
    let perm = permutation(seq.len(), seed);
    let mut out = vec![T::default(); seq.len()];
    for (i, &p) in perm.iter().enumerate() {
        out[p] = seq[i];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn hard_llrs(bits: &[u8], magnitude: f64) -> Vec<f64> {
        bits.iter()
            .map(|&b| if b == 1 { magnitude } else { -magnitude })
            .collect()
    }

    /// Independent soft-input Viterbi decoder used as a cross-check
    /// oracle for the BCJR hard decisions.
    fn viterbi(coded_llrs: &[f64], n_info: usize, config: &CodeConfig) -> Vec<u8> {
        let n_sections = config.n_sections(n_info);
        assert_eq!(coded_llrs.len(), 2 * n_sections);
        let mut metric = vec![f64::NEG_INFINITY; NUM_STATES];
        metric[0] = 0.0;
        let mut survivor_bit: Vec<Vec<u8>> = Vec::with_capacity(n_sections);
        let mut survivor_prev: Vec<Vec<usize>> = Vec::with_capacity(n_sections);
        for k in 0..n_sections {
            let tail = k >= n_info;
            let mut next = vec![f64::NEG_INFINITY; NUM_STATES];
            let mut bit_of = vec![0u8; NUM_STATES];
            let mut prev_of = vec![0usize; NUM_STATES];
            for state in 0..NUM_STATES {
                if metric[state] == f64::NEG_INFINITY {
                    continue;
                }
                for bit in 0..=(if tail { 0 } else { 1 }) {
                    let (o0, o1) = branch_outputs(state, bit);
                    let mut m = metric[state];
                    if o0 == 1 {
                        m += coded_llrs[2 * k];
                    }
                    if o1 == 1 {
                        m += coded_llrs[2 * k + 1];
                    }
                    let ns = next_state(state, bit);
                    if m > next[ns] {
                        next[ns] = m;
                        bit_of[ns] = bit as u8;
                        prev_of[ns] = state;
                    }
                }
            }
            survivor_bit.push(bit_of);
            survivor_prev.push(prev_of);
            metric = next;
        }
        // Traceback from the zero (terminated) state.
        let mut state = 0usize;
        let mut bits_rev = Vec::with_capacity(n_sections);
        for k in (0..n_sections).rev() {
            bits_rev.push(survivor_bit[k][state]);
            state = survivor_prev[k][state];
        }
        bits_rev.reverse();
        bits_rev.truncate(n_info);
        bits_rev
    }

    #[test]
    fn all_zero_input_gives_all_zero_output() {
        for rate in [CodeRate::Half, CodeRate::ThreeQuarters] {
            let config = CodeConfig::new(rate);
            let coded = conv_encode(&vec![0u8; 48], &config);
            assert!(coded.iter().all(|&b| b == 0));
            assert_eq!(coded.len(), config.coded_len(48));
        }
    }

    #[test]
    fn impulse_response_matches_generators() {
        let config = CodeConfig::new(CodeRate::Half);
        let mut info = vec![0u8; 10];
        info[0] = 1;
        let coded = conv_encode(&info, &config);
        // taps of 133 octal: 1 0 1 1 0 1 1; taps of 171 octal: 1 1 1 1 0 0 1
        let g0 = [1, 0, 1, 1, 0, 1, 1];
        let g1 = [1, 1, 1, 1, 0, 0, 1];
        for k in 0..7 {
            assert_eq!(coded[2 * k], g0[k], "g0 tap {k}");
            assert_eq!(coded[2 * k + 1], g1[k], "g1 tap {k}");
        }
        for k in 7..10 {
            assert_eq!(coded[2 * k], 0);
            assert_eq!(coded[2 * k + 1], 0);
        }
    }

    #[test]
    fn punctured_rate_is_three_quarters() {
        let config = CodeConfig::new(CodeRate::ThreeQuarters);
        // 1206 info bits -> 1212 sections -> 2424 mother bits -> 1616 kept
        assert_eq!(config.coded_len(1206), 1616);
        let r = 1206.0 / config.coded_len(1206) as f64;
        assert!((r - 0.75).abs() < 0.01);
    }

    #[test]
    fn depuncture_inverts_puncture_with_zero_fill() {
        let config = CodeConfig::new(CodeRate::ThreeQuarters);
        let n_info = 30;
        let mother: Vec<f64> = (0..config.mother_len(n_info)).map(|i| i as f64 + 1.0).collect();
        let kept = config.puncture(&mother);
        let back = config.depuncture(&kept, n_info).unwrap();
        for (i, &v) in back.iter().enumerate() {
            if config.keep(i / 2, i % 2) {
                assert_eq!(v, mother[i]);
            } else {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn noiseless_roundtrip_many_packets() {
        let mut rng = rand::thread_rng();
        for rate in [CodeRate::Half, CodeRate::ThreeQuarters] {
            let config = CodeConfig::new(rate);
            for _ in 0..1000 {
                let info: Vec<u8> = (0..96).map(|_| rng.gen_range(0..2u8)).collect();
                let coded = conv_encode(&info, &config);
                let llrs = hard_llrs(&coded, 16.0);
                let depunct = config.depuncture(&llrs, info.len()).unwrap();
                let frame = bcjr_siso(&depunct, info.len(), &config).unwrap();
                assert_eq!(frame.info_decisions, info);
            }
        }
    }

    #[test]
    fn all_zero_llrs_give_all_zero_extrinsic() {
        let config = CodeConfig::new(CodeRate::Half);
        let n_info = 40;
        let frame = bcjr_siso(&vec![0.0; config.mother_len(n_info)], n_info, &config).unwrap();
        for (i, &e) in frame.coded_llrs.iter().enumerate() {
            let section = i / 2;
            if section < n_info {
                assert!(
                    e.abs() < 1e-12,
                    "nonzero extrinsic {e} at position {i}"
                );
            }
            // tail sections carry structural (input-forced-zero) information,
            // so their extrinsics need not vanish
        }
    }

    #[test]
    fn extrinsic_is_invariant_to_own_input() {
        // In max-log BCJR the input LLR of a position adds uniformly to
        // every branch carrying that bit as 1, so the extrinsic at that
        // position is exactly a function of the other inputs only.
        let config = CodeConfig::new(CodeRate::Half);
        let mut rng = rand::thread_rng();
        let info: Vec<u8> = (0..64).map(|_| rng.gen_range(0..2u8)).collect();
        let coded = conv_encode(&info, &config);
        let mut llrs: Vec<f64> = coded
            .iter()
            .map(|&b| (if b == 1 { 1.0 } else { -1.0 }) + rng.gen_range(-0.5..0.5))
            .collect();
        let base = bcjr_siso(&llrs, info.len(), &config).unwrap();
        for &p in &[0usize, 17, 64, 101] {
            let saved = llrs[p];
            llrs[p] += 3.7;
            let bumped = bcjr_siso(&llrs, info.len(), &config).unwrap();
            assert!(
                (bumped.coded_llrs[p] - base.coded_llrs[p]).abs() < 1e-9,
                "extrinsic at {p} moved with its own input"
            );
            llrs[p] = saved;
        }
    }

    #[test]
    fn hard_decisions_match_viterbi_oracle() {
        let mut rng = rand::thread_rng();
        let config = CodeConfig::new(CodeRate::Half);
        for trial in 0..100 {
            let info: Vec<u8> = (0..120).map(|_| rng.gen_range(0..2u8)).collect();
            let coded = conv_encode(&info, &config);
            // high-SNR noisy LLRs
            let llrs: Vec<f64> = coded
                .iter()
                .map(|&b| (if b == 1 { 4.0 } else { -4.0 }) + rng.gen_range(-2.0..2.0))
                .collect();
            let frame = bcjr_siso(&llrs, info.len(), &config).unwrap();
            let vit = viterbi(&llrs, info.len(), &config);
            assert_eq!(frame.info_decisions, vit, "trial {trial}");
            assert_eq!(frame.info_decisions, info, "trial {trial} decoded wrong");
        }
    }

    #[test]
    fn bcjr_rejects_wrong_length() {
        let config = CodeConfig::new(CodeRate::Half);
        assert!(matches!(
            bcjr_siso(&[0.0; 10], 10, &config),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn interleaver_roundtrip_and_determinism() {
        let mut rng = rand::thread_rng();
        let data: Vec<f64> = (0..257).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let a = interleave(&data, 42);
        let b = interleave(&data, 42);
        assert_eq!(a, b);
        let back = deinterleave(&a, 42);
        assert_eq!(back, data);
        let other = interleave(&data, 43);
        assert_ne!(a, other);
    }

    #[test]
    fn permutation_is_bijection() {
        let perm = permutation(301, 7);
        let mut sorted = perm.clone();
        sorted.sort_unstable();
        let expected: Vec<usize> = (0..301).collect();
        assert_eq!(sorted, expected);
    }

    proptest! {
        #[test]
        fn encoder_is_linear(
            a in proptest::collection::vec(0u8..2, 24),
            b in proptest::collection::vec(0u8..2, 24),
        ) {
            let config = CodeConfig::new(CodeRate::Half);
            let xor: Vec<u8> = a.iter().zip(&b).map(|(&x, &y)| x ^ y).collect();
            let ea = conv_encode(&a, &config);
            let eb = conv_encode(&b, &config);
            let exor = conv_encode(&xor, &config);
            let sum: Vec<u8> = ea.iter().zip(&eb).map(|(&x, &y)| x ^ y).collect();
            prop_assert_eq!(exor, sum);
        }

        #[test]
        fn interleave_preserves_multiset(seed in 0u64..1000, len in 1usize..400) {
            let data: Vec<usize> = (0..len).collect();
            let mut out = interleave(&data, seed);
            out.sort_unstable();
            prop_assert_eq!(out, data);
        }
    }
}
